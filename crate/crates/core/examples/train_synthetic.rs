//! Train on synthetic data with the default optimizer and loss settings and
//! watch loss and mAP per evaluation.
//!
//! cargo run --release --example train_synthetic

use mvhash::data::{generate_synthetic, SynthConfig};
use mvhash::trainer::{curves_csv, train_observed, TrainConfig};

fn main() -> mvhash::Result<()> {
    let ds = generate_synthetic(&SynthConfig::default())?;
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 32,
        eval_every: 20,
        cutoffs: vec![10, 100],
        ..TrainConfig::default()
    };
    let out = train_observed(&ds, &cfg, &mut |r, _| {
        if let Some(map) = r.map {
            println!("epoch {:>3}  loss {:.4}  mAP {map:.4}", r.epoch, r.loss);
        }
        Ok(())
    })?;
    if let Some(best) = &out.best {
        println!("best mAP {:.4} at epoch {}", best.map, best.epoch);
    }
    if let Some(report) = &out.final_report {
        print!("{}", report.summary());
    }
    let csv = curves_csv(&out.records, None);
    println!("curves.csv has {} lines", csv.lines().count());
    Ok(())
}
