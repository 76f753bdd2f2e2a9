//! Independent reference implementations used by the oracle and acceptance
//! tests. Everything here is written as plainly as possible: explicit loops,
//! full sorts, no shared helpers from the library beyond plain data types.

#![allow(dead_code)]

use mvhash::data::{FeatureRecord, MultiHot};
use mvhash::linalg::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn overlap(a: &MultiHot, b: &MultiHot) -> bool {
    a.bits().iter().zip(b.bits()).any(|(x, y)| *x && *y)
}

pub fn random_label(rng: &mut ChaCha8Rng, categories: usize) -> MultiHot {
    let mut bits = vec![false; categories];
    bits[rng.random_range(0..categories)] = true;
    if rng.random_bool(0.3) {
        bits[rng.random_range(0..categories)] = true;
    }
    MultiHot::from_bits(bits)
}

pub struct NaiveLoss {
    pub metric: f64,
    pub quantization: f64,
    pub total: f64,
}

/// Double loop over the first `m` rows against the last `m` rows with
/// `m = floor(lambda * b)`, written straight from the definition.
pub fn naive_loss(codes: &Matrix, labels: &[MultiHot], lambda: f64, mu: f64, w_d: f64) -> NaiveLoss {
    let b = codes.rows();
    let k = codes.cols();
    let m = (lambda * b as f64 + 1e-9).floor() as usize;
    let mut metric = 0.0;
    for i in 0..m {
        for j in (b - m)..b {
            let mut phi = 0.0;
            for c in 0..k {
                phi += codes.get(i, c) * codes.get(j, c);
            }
            let s = if overlap(&labels[i], &labels[j]) { 1.0 } else { 0.0 };
            metric += w_d * (1.0 + phi.exp()).ln() - s * phi;
        }
    }
    metric /= (m * m) as f64;

    let mut rows: Vec<usize> = (0..m).collect();
    for j in (b - m)..b {
        if !rows.contains(&j) {
            rows.push(j);
        }
    }
    let mut quantization = 0.0;
    for i in rows {
        let mut sq = 0.0;
        for c in 0..k {
            let d = codes.get(i, c).abs() - 1.0;
            sq += d * d;
        }
        quantization += sq.sqrt();
    }
    quantization /= b as f64;
    NaiveLoss {
        metric,
        quantization,
        total: metric + mu * quantization,
    }
}

/// The all-pairs similar-only loss over one set of `n` codes:
/// `1/n² Σ_i Σ_j [s_ij log(1 + e^φ_ij) − s_ij φ_ij]`.
pub fn naive_similar_only(codes: &Matrix, labels: &[MultiHot]) -> f64 {
    let n = codes.rows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let phi: f64 = (0..codes.cols()).map(|c| codes.get(i, c) * codes.get(j, c)).sum();
            let s = if overlap(&labels[i], &labels[j]) { 1.0 } else { 0.0 };
            total += s * (1.0 + phi.exp()).ln() - s * phi;
        }
    }
    total / (n * n) as f64
}

/// Bit-by-bit Hamming distance between two sign vectors.
pub fn naive_hamming(a: &[f64], b: &[f64]) -> u32 {
    a.iter().zip(b).filter(|(x, y)| (**x >= 0.0) != (**y >= 0.0)).count() as u32
}

/// Full ranking by (distance, insertion position).
pub fn naive_rank(query: &[f64], corpus: &[Vec<f64>]) -> Vec<(usize, u32)> {
    let mut all: Vec<(usize, u32)> = corpus
        .iter()
        .enumerate()
        .map(|(i, c)| (i, naive_hamming(query, c)))
        .collect();
    all.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
    all
}

/// AP over a full relevance list; divisor is the number of relevant items.
pub fn naive_ap(rel: &[bool]) -> f64 {
    let total = rel.iter().filter(|r| **r).count();
    if total == 0 {
        return 0.0;
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (i, &r) in rel.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / total as f64
}

/// AP over the first `k` positions, divided by `min(R, k)`.
pub fn naive_ap_at(rel: &[bool], k: usize) -> f64 {
    let total = rel.iter().filter(|r| **r).count();
    if total == 0 {
        return 0.0;
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (i, &r) in rel.iter().take(k).enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / total.min(k) as f64
}

pub fn naive_recall_at(rel: &[bool], k: usize) -> f64 {
    let total = rel.iter().filter(|r| **r).count();
    if total == 0 {
        return 0.0;
    }
    rel.iter().take(k).filter(|r| **r).count() as f64 / total as f64
}

/// Mean AP of uniformly shuffled rankings, averaged over `rounds` shuffles.
pub fn shuffled_map(queries: &[FeatureRecord], corpus: &[FeatureRecord], rounds: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut total = 0.0;
    for _ in 0..rounds {
        for q in queries {
            let mut rel: Vec<bool> = corpus.iter().map(|r| overlap(&q.label, &r.label)).collect();
            rel.shuffle(&mut rng);
            total += naive_ap(&rel);
        }
    }
    total / (rounds * queries.len()) as f64
}

/// Leave-nothing-out 1-NN in the raw concatenated feature space: fraction
/// of `queries` whose nearest `reference` record has the same label set.
pub fn one_nn_accuracy(reference: &[FeatureRecord], queries: &[FeatureRecord]) -> f64 {
    let flat = |r: &FeatureRecord| -> Vec<f64> { r.views.iter().flat_map(|v| v.as_slice().to_vec()).collect() };
    let refs: Vec<Vec<f64>> = reference.iter().map(flat).collect();
    let mut correct = 0;
    for q in queries {
        let x = flat(q);
        let mut best = (f64::INFINITY, 0);
        for (i, r) in refs.iter().enumerate() {
            let d: f64 = x.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        if reference[best.1].label == q.label {
            correct += 1;
        }
    }
    correct as f64 / queries.len() as f64
}
