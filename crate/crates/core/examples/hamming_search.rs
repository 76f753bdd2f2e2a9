//! Index ±1 codes, run exhaustive Hamming search and score the rankings.
//!
//! cargo run --release --example hamming_search

use mvhash::data::MultiHot;
use mvhash::retrieval::{evaluate, hamming_distance, HammingIndex, HashCode};

fn code(pattern: &str) -> HashCode {
    let signs: Vec<f64> = pattern.chars().map(|c| if c == '1' { 1.0 } else { -1.0 }).collect();
    HashCode::from_signs(&signs)
}

fn main() -> mvhash::Result<()> {
    let items = [
        ("cat-1", "11110000", 0),
        ("cat-2", "11100000", 0),
        ("dog-1", "00001111", 1),
        ("dog-2", "00011111", 1),
        ("both", "11111111", 2),
    ];
    let mut index = HammingIndex::new(8);
    for (id, bits, cat) in items {
        let label = if cat == 2 { MultiHot::from_indices(2, &[0, 1])? } else { MultiHot::from_indices(2, &[cat])? };
        index.push(id, code(bits), label)?;
    }

    let query = code("11110001");
    println!("query {}", query.to_hex());
    for hit in index.search(&query, 3)? {
        println!("  {:<6} distance {}", hit.id, hit.distance);
    }
    println!("d(cat-1, dog-1) = {}", hamming_distance(&code("11110000"), &code("00001111"))?);

    let mut queries = HammingIndex::new(8);
    queries.push("q-cat", code("11110001"), MultiHot::from_indices(2, &[0])?)?;
    queries.push("q-dog", code("00001110"), MultiHot::from_indices(2, &[1])?)?;
    let report = evaluate(&queries, &index, &[1, 2, 5])?;
    print!("{}", report.summary());
    Ok(())
}
