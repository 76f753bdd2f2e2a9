//! Train briefly, save a checkpoint with optimizer state, reload it and
//! confirm the codes are unchanged.
//!
//! cargo run --release --example checkpoint_roundtrip

use mvhash::checkpoint::Checkpoint;
use mvhash::data::{generate_synthetic, SynthConfig};
use mvhash::net::{encode, FusionMode};
use mvhash::trainer::{train, TrainConfig};

fn main() -> mvhash::Result<()> {
    let ds = generate_synthetic(&SynthConfig {
        view_dims: vec![64, 32],
        train: 128,
        retrieval: 64,
        query: 16,
        ..SynthConfig::default()
    })?;
    let cfg = TrainConfig { epochs: 5, batch_size: 32, d_proj: 16, eval_every: 0, ..TrainConfig::default() };
    let out = train(&ds, &cfg)?;

    let path = std::env::temp_dir().join("mvhash-example.ckpt");
    let ck = Checkpoint {
        params: out.params,
        optimizer: Some(out.optimizer),
        train_config: Some(cfg),
        epoch: 5,
    };
    ck.save(&path)?;
    let back = Checkpoint::load(&path)?;
    assert_eq!(back, ck);

    let a = encode(&ds.query, &ck.params, FusionMode::Gated, None)?;
    let b = encode(&ds.query, &back.params, FusionMode::Gated, None)?;
    assert_eq!(a, b);
    let size = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    println!("{} ({size} bytes), optimizer step {}", path.display(), back.optimizer.map(|o| o.step).unwrap_or(0));
    Ok(())
}
