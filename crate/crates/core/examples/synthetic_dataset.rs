//! Generate a clustered two-view dataset, write it to disk and load it back.
//!
//! cargo run --release --example synthetic_dataset -- /tmp/mvhash-data

use std::path::PathBuf;

use mvhash::data::{generate_synthetic, load_features, write_features, SynthConfig};

fn main() -> mvhash::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("mvhash-data"));
    let cfg = SynthConfig {
        multi_label_prob: 0.2,
        ..SynthConfig::default()
    };
    let ds = generate_synthetic(&cfg)?;
    let manifest = write_features(&ds, &dir)?;
    let back = load_features(&manifest)?;
    assert_eq!(back, ds);

    println!("manifest: {}", manifest.display());
    for v in &ds.views {
        println!("view {:>5}: {} dims", v.name, v.dim);
    }
    println!("train {} / retrieval {} / query {}", ds.train.len(), ds.retrieval.len(), ds.query.len());
    let multi = ds.train.iter().filter(|r| r.label.count() > 1).count();
    println!("multi-label training records: {multi}");
    let first = &ds.train[0];
    println!("{} -> categories {:?}", first.id, first.label.indices());
    Ok(())
}
