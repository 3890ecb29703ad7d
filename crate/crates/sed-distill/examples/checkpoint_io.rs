//! Checkpoint round trips and failure modes.

use sed_distill::checkpoint::{
    inspect_checkpoint, load_checkpoint, param_hash, save_checkpoint,
};
use sed_distill::models::{SECRNNConfig, SeCrnn};

fn main() -> sed_distill::Result<()> {
    let dir = std::env::temp_dir().join("sed-ckpt-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");

    let model = SeCrnn::new(SECRNNConfig::tiny(32, 4), 9)?;
    save_checkpoint(&model, &path)?;
    println!("saved {} bytes", std::fs::metadata(&path)?.len());

    let loaded = load_checkpoint(&path)?;
    assert_eq!(param_hash(&model), param_hash(&loaded));
    println!("reloaded, parameter hash matches: {:#018x}", param_hash(&model));

    let (cfg, records) = inspect_checkpoint(&path)?;
    println!("\nvariant {} — first records:", cfg.variant_name);
    for (name, dims) in records.iter().take(6) {
        println!("  {name} {dims:?}");
    }
    println!("  ... {} records total", records.len());

    // corruption is refused outright, never a half-loaded model
    let bytes = std::fs::read(&path)?;
    let cut = dir.join("truncated.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() / 2])?;
    match load_checkpoint(&cut) {
        Err(e) => println!("\ntruncated file rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
