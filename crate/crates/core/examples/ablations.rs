//! Train every pipeline variant on the same synthetic data and compare
//! final mAP with a shuffled-ranking baseline.
//!
//! cargo run --release --example ablations -- 200

use mvhash::data::{generate_synthetic, SynthConfig};
use mvhash::trainer::{train, Ablation, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;

fn main() -> mvhash::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let ds = generate_synthetic(&SynthConfig::default())?;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let mut baseline = 0.0;
    for q in &ds.query {
        let mut rel: Vec<bool> = ds.retrieval.iter().map(|r| r.label.shares_any(&q.label)).collect();
        rel.shuffle(&mut rng);
        let total = rel.iter().filter(|r| **r).count();
        baseline += mvhash::retrieval::average_precision(&rel, total)?;
    }
    println!("shuffled baseline mAP {:.4}", baseline / ds.query.len() as f64);

    for ablation in Ablation::ALL {
        let cfg = TrainConfig {
            epochs,
            batch_size: 32,
            eval_every: epochs,
            cutoffs: vec![100],
            ablation,
            ..TrainConfig::default()
        };
        let out = train(&ds, &cfg)?;
        let map = out.final_report.map(|r| r.map).unwrap_or(f64::NAN);
        println!("{:<12} mAP {map:.4}", ablation.name());
    }
    Ok(())
}
