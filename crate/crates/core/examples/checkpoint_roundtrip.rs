//! Saves a model, reads the header back and lists the parameter sections.

use siamtrack::checkpoint::{load, save, section};
use siamtrack::model::{ModelConfig, SiamModel};

fn main() -> siamtrack::Result<()> {
    let model = SiamModel::build(&ModelConfig::desk(), 5)?;
    let path = std::env::temp_dir().join("siamtrack_example.ckpt");
    save(&model, &path, serde_json::json!({ "seed": 5 }))?;
    let (back, header) = load(&path)?;
    println!("{} bytes, {} arrays, meta {}", std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0), header.arrays.len(), header.meta);
    for prefix in ["backbone", "adapter", "head.l3", "head.l4", "head.l5", "fusion"] {
        let recs = section(&header, prefix);
        let n: usize = recs.iter().map(|r| r.shape.iter().product::<usize>()).sum();
        println!("  {prefix:<9} {:>3} arrays {n:>7} values", recs.len());
    }
    assert_eq!(back.trainable_params(), model.trainable_params());
    Ok(())
}
