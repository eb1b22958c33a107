mod common;

use std::sync::OnceLock;

use common::*;
use strength_transfer::checkpoint::stored_crc;
use strength_transfer::image_io::encode_png;
use strength_transfer::inference::Stylizer;
use strength_transfer::service::{spawn_background, ModelInfo, ServiceState};
use strength_transfer::synthetic::content_image;
use strength_transfer::trainer::load_model;
use strength_transfer::transformer::ArchitectureConfig;
use strength_transfer::{Shape4, Tensor4};

struct Fixture {
    port: u16,
    stylizer: Stylizer,
    crc: u32,
    _dir: tempfile::TempDir,
}

const MAX_BODY: usize = 64 * 1024;

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let w = random_weights(&ArchitectureConfig::test_preset(), 31);
        let path = save_model(&w, dir.path(), "m.ckpt", 16, 31);
        let model = load_model(&path).unwrap();
        let crc = stored_crc(&std::fs::read(&path).unwrap()).unwrap();
        let state = ServiceState::new(&model, None).unwrap();
        let port = spawn_background(state, "127.0.0.1:0", MAX_BODY).unwrap();
        Fixture {
            port,
            stylizer: Stylizer::from_model(&model, None).unwrap(),
            crc,
            _dir: dir,
        }
    })
}

fn images() -> [Vec<u8>; 2] {
    let odd = Tensor4::from_fn(Shape4::new(1, 3, 20, 28), |_, c, y, x| ((x * 7 + y * 3 + c * 50) % 255) as f64 / 255.0);
    [encode_png(&content_image(24, 1)).unwrap(), encode_png(&odd).unwrap()]
}

#[test]
fn health_is_exact() {
    let r = http(fixture().port, "GET", "/api/health", b"");
    assert_eq!(r.status, 200);
    assert_eq!(r.body, br#"{"status":"ok"}"#);
}

#[test]
fn model_metadata() {
    let f = fixture();
    let r = http(f.port, "GET", "/api/model", b"");
    assert_eq!(r.status, 200);
    let v: serde_json::Value = serde_json::from_slice(&r.body).unwrap();
    assert_eq!(v["alpha_max"], serde_json::json!(10.0));
    assert_eq!(v["alpha_min"], serde_json::json!(0.0));
    let info: ModelInfo = serde_json::from_value(v).unwrap();
    assert_eq!(info.widths, [8, 16, 32]);
    assert_eq!(info.residual_blocks, 5);
    assert_eq!(info.image_size, 16);
    assert_eq!(info.checkpoint_crc32, format!("{:08x}", f.crc));
    assert_eq!(info.train_seed, Some(31));
}

#[test]
fn stylize_headers_and_determinism() {
    let f = fixture();
    let [img, _] = images();
    let a = http(f.port, "POST", "/api/stylize?alpha=0", &img);
    let b = http(f.port, "POST", "/api/stylize?alpha=0", &img);
    assert_eq!(a.status, 200);
    assert_eq!(a.header("content-type"), Some("image/png"));
    assert_eq!(a.body, b.body);
    assert_eq!(a.body, f.stylizer.stylize_bytes(&img, 0.0).unwrap());

    let r = http(f.port, "POST", "/api/stylize?alpha=2.5", &img);
    assert_eq!(r.header("x-alpha"), Some("2.5"));
    assert_eq!(r.header("x-image-size"), Some("16"));
    assert_eq!(r.header("x-alpha-extrapolated"), Some("false"));
    let decoded = strength_transfer::image_io::decode_image(&r.body, None).unwrap();
    assert_eq!(decoded.shape(), Shape4::new(1, 3, 16, 16));

    for alpha in ["12", "-1", "10.5"] {
        let r = http(f.port, "POST", &format!("/api/stylize?alpha={alpha}"), &img);
        assert_eq!(r.status, 200);
        assert_eq!(r.header("x-alpha-extrapolated"), Some("true"), "{alpha}");
    }
    // negative strength behaves like its magnitude
    let neg = http(f.port, "POST", "/api/stylize?alpha=-3", &img);
    let pos = http(f.port, "POST", "/api/stylize?alpha=3", &img);
    assert_eq!(neg.body, pos.body);
}

#[test]
fn bad_requests() {
    let f = fixture();
    let [img, _] = images();
    for q in ["alpha=abc", "alpha=", "alpha=NaN", "alpha=inf", "other=1", ""] {
        let r = http(f.port, "POST", &format!("/api/stylize?{q}"), &img);
        assert_eq!(r.status, 400, "{q}");
        assert_eq!(r.body, br#"{"error":"invalid alpha"}"#, "{q}");
    }
    let r = http(f.port, "POST", "/api/stylize?alpha=1", b"definitely not an image");
    assert_eq!(r.status, 400);
    assert_eq!(r.body, br#"{"error":"invalid image"}"#);
    let r = http(f.port, "POST", "/api/stylize?alpha=1", b"\x89PNG\r\n\x1a\ntruncated");
    assert_eq!(r.status, 400);

    let big = vec![0u8; MAX_BODY + 1];
    let r = http(f.port, "POST", "/api/stylize?alpha=1", &big);
    assert_eq!(r.status, 413);
}

#[test]
fn concurrent_requests_match_serial_references() {
    let f = fixture();
    let imgs = images();
    let alphas = [0.0, 0.7, 2.5, 9.9];
    let reference: Vec<Vec<u8>> = (0..16)
        .map(|i| f.stylizer.stylize_bytes(&imgs[i % 2], alphas[i % 4]).unwrap())
        .collect();
    let handles: Vec<_> = (0..16)
        .map(|i| {
            let body = imgs[i % 2].clone();
            let port = f.port;
            let alpha = alphas[i % 4];
            std::thread::spawn(move || http(port, "POST", &format!("/api/stylize?alpha={alpha}"), &body))
        })
        .collect();
    for (i, h) in handles.into_iter().enumerate() {
        let r = h.join().unwrap();
        assert_eq!(r.status, 200);
        assert_eq!(r.body, reference[i], "request {i}");
    }
}
