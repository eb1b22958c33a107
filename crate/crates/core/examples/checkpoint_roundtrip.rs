//! Save a model, reload it, and show that the file format catches corruption.

use strength_transfer::checkpoint::Checkpoint;
use strength_transfer::trainer::{load_model, save_checkpoint_with_meta, ModelMeta};
use strength_transfer::transformer::{init_weights, ArchitectureConfig};

fn main() -> strength_transfer::Result<()> {
    let w = init_weights(&ArchitectureConfig::default(), 7)?;
    let path = std::env::temp_dir().join("checkpoint_roundtrip.ckpt");
    let meta = ModelMeta { image_size: Some(64), seed: Some(7) };
    save_checkpoint_with_meta(&w, &meta, &path)?;

    let loaded = load_model(&path)?;
    assert_eq!(loaded.weights, w);
    let bytes = std::fs::read(&path).expect("read back");
    println!("{} bytes, {} parameters, crc32 {:08x}", bytes.len(), w.num_scalars(), loaded.crc);
    println!("meta: {:?}", loaded.meta);

    let mut flipped = bytes.clone();
    flipped[bytes.len() / 3] ^= 1;
    println!("bit flip  -> {}", Checkpoint::from_bytes(&flipped).unwrap_err());
    let mut magic = bytes.clone();
    magic[..4].copy_from_slice(b"PNG!");
    println!("bad magic -> {}", Checkpoint::from_bytes(&magic).unwrap_err());
    println!("truncated -> {}", Checkpoint::from_bytes(&bytes[..100]).unwrap_err());
    std::fs::remove_file(&path).ok();
    Ok(())
}
