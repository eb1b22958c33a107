//! Run the HTTP service in-process and call it once.
//!
//! Pass `--wait` to keep serving after the demo request.

use std::io::{Read, Write};
use std::net::TcpStream;

use strength_transfer::image_io::encode_png;
use strength_transfer::service::{spawn_background, ServiceState, DEFAULT_MAX_BODY_BYTES};
use strength_transfer::synthetic::content_image;
use strength_transfer::trainer::{LoadedModel, ModelMeta};
use strength_transfer::transformer::{init_weights, ArchitectureConfig};

fn main() -> strength_transfer::Result<()> {
    let weights = init_weights(&ArchitectureConfig::test_preset(), 0)?;
    let model = LoadedModel { crc: weights.to_checkpoint().crc()?, weights, meta: ModelMeta { image_size: Some(32), seed: Some(0) } };
    let port = spawn_background(ServiceState::new(&model, None)?, "127.0.0.1:0", DEFAULT_MAX_BODY_BYTES)?;
    println!("listening on http://127.0.0.1:{port}");

    let body = encode_png(&content_image(48, 2))?;
    let mut s = TcpStream::connect(("127.0.0.1", port)).expect("connect");
    write!(
        s,
        "POST /api/stylize?alpha=2.5 HTTP/1.1\r\nHost: localhost\r\nContent-Type: image/png\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    )
    .expect("send");
    s.write_all(&body).expect("send body");
    let mut reply = Vec::new();
    s.read_to_end(&mut reply).expect("read");
    let head_end = reply.windows(4).position(|w| w == b"\r\n\r\n").unwrap_or(reply.len());
    println!("{}", String::from_utf8_lossy(&reply[..head_end]));
    println!("({} bytes of PNG)", reply.len().saturating_sub(head_end + 4));

    if std::env::args().any(|a| a == "--wait") {
        println!("try: curl -s localhost:{port}/api/model");
        loop {
            std::thread::park();
        }
    }
    Ok(())
}
