//! Bit-packed Hamming codes, exhaustive ranking and retrieval metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::MultiHot;
use crate::error::{Error, Result};

/// A `k`-bit code over {−1, +1}. Bit set means +1; bits past `k` in the last
/// word stay zero.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HashCode {
    k: usize,
    words: Vec<u64>,
}

impl HashCode {
    /// `x >= 0` maps to +1, everything else to −1.
    pub fn from_signs(values: &[f64]) -> Self {
        let mut words = vec![0u64; values.len().div_ceil(64)];
        for (i, &x) in values.iter().enumerate() {
            if x >= 0.0 {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        HashCode {
            k: values.len(),
            words,
        }
    }

    pub fn from_words(k: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != k.div_ceil(64) {
            return Err(Error::shape("HashCode::from_words", format!("{} words for {k} bits", words.len())));
        }
        let code = HashCode { k, words };
        if !k.is_multiple_of(64) {
            if let Some(&last) = code.words.last() {
                if last >> (k % 64) != 0 {
                    return Err(Error::Argument("bits set past code length".into()));
                }
            }
        }
        Ok(code)
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn bit(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn to_signs(&self) -> Vec<f64> {
        (0..self.k).map(|i| if self.bit(i) { 1.0 } else { -1.0 }).collect()
    }

    pub fn complement(&self) -> Self {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        if !self.k.is_multiple_of(64) {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << (self.k % 64)) - 1;
            }
        }
        HashCode { k: self.k, words }
    }

    /// Hex rendering, lowest word first.
    pub fn to_hex(&self) -> String {
        self.words.iter().map(|w| format!("{w:016x}")).collect()
    }
}

/// Number of differing bits.
pub fn hamming_distance(a: &HashCode, b: &HashCode) -> Result<u32> {
    if a.k != b.k {
        return Err(Error::shape("hamming_distance", format!("{} vs {} bits", a.k, b.k)));
    }
    Ok(popcount_xor(&a.words, &b.words))
}

#[inline]
fn popcount_xor(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchHit {
    pub position: usize,
    pub id: String,
    pub distance: u32,
}

/// Codes with aligned ids and labels, scanned exhaustively.
#[derive(Clone, Debug, Default)]
pub struct HammingIndex {
    bits: usize,
    codes: Vec<HashCode>,
    ids: Vec<String>,
    labels: Vec<MultiHot>,
}

impl HammingIndex {
    pub fn new(bits: usize) -> Self {
        HammingIndex {
            bits,
            ..Default::default()
        }
    }

    pub fn push(&mut self, id: impl Into<String>, code: HashCode, label: MultiHot) -> Result<()> {
        if code.len() != self.bits {
            return Err(Error::shape("HammingIndex::push", format!("{}-bit code into {}-bit index", code.len(), self.bits)));
        }
        self.codes.push(code);
        self.ids.push(id.into());
        self.labels.push(label);
        Ok(())
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[HashCode] {
        &self.codes
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[MultiHot] {
        &self.labels
    }

    /// All positions ordered by distance, ties by insertion order. A counting
    /// sort over the `bits + 1` possible distances keeps this linear.
    pub fn rank(&self, query: &HashCode, exclude_id: Option<&str>) -> Result<Vec<(usize, u32)>> {
        if self.is_empty() {
            return Err(Error::State("search on an empty index".into()));
        }
        if query.len() != self.bits {
            return Err(Error::shape("search", format!("{}-bit query on {}-bit index", query.len(), self.bits)));
        }
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); self.bits + 1];
        for (pos, code) in self.codes.iter().enumerate() {
            if exclude_id.is_some_and(|id| self.ids[pos] == id) {
                continue;
            }
            buckets[popcount_xor(&query.words, &code.words) as usize].push(pos);
        }
        Ok(buckets
            .into_iter()
            .enumerate()
            .flat_map(|(d, b)| b.into_iter().map(move |p| (p, d as u32)))
            .collect())
    }

    /// The `k` nearest codes; `k` beyond the index size returns everything.
    pub fn search(&self, query: &HashCode, k: usize) -> Result<Vec<SearchHit>> {
        self.search_excluding(query, k, None)
    }

    pub fn search_excluding(&self, query: &HashCode, k: usize, exclude_id: Option<&str>) -> Result<Vec<SearchHit>> {
        if k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        let mut ranked = self.rank(query, exclude_id)?;
        ranked.truncate(k);
        Ok(ranked
            .into_iter()
            .map(|(position, distance)| SearchHit {
                position,
                id: self.ids[position].clone(),
                distance,
            })
            .collect())
    }
}

/// Mean of precision at each relevant position, divided by `total_relevant`.
/// Zero when nothing is relevant.
pub fn average_precision(ranked: &[bool], total_relevant: usize) -> Result<f64> {
    truncated_ap(ranked, total_relevant, total_relevant)
}

/// AP over the first `k` results with divisor `min(total_relevant, k)`.
pub fn average_precision_at(ranked: &[bool], total_relevant: usize, k: usize) -> Result<f64> {
    let top = &ranked[..k.min(ranked.len())];
    truncated_ap(top, total_relevant, total_relevant.min(k))
}

fn truncated_ap(ranked: &[bool], total_relevant: usize, divisor: usize) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in ranked.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits > total_relevant {
        return Err(Error::Argument(format!(
            "ranking holds {hits} relevant items but total_relevant is {total_relevant}"
        )));
    }
    if divisor == 0 {
        return Ok(0.0);
    }
    Ok(sum / divisor as f64)
}

pub fn recall_at(ranked: &[bool], total_relevant: usize, k: usize) -> f64 {
    if total_relevant == 0 {
        return 0.0;
    }
    ranked.iter().take(k).filter(|&&r| r).count() as f64 / total_relevant as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    pub cutoffs: Vec<usize>,
    pub map_at_k: Vec<f64>,
    pub recall_at_k: Vec<f64>,
    pub per_query_ap: Vec<f64>,
    /// Resolved configuration echoed into every artifact.
    #[serde(default)]
    pub config: Option<String>,
}

struct QueryMetrics {
    ap: f64,
    map_at: Vec<f64>,
    recall_at: Vec<f64>,
}

/// Ranks each query against `index` (excluding an identical id) and
/// averages AP, AP@K and Recall@K. Relevance is label overlap.
pub fn evaluate(queries: &HammingIndex, index: &HammingIndex, cutoffs: &[usize]) -> Result<EvalReport> {
    if queries.is_empty() {
        return Err(Error::Argument("evaluation needs at least one query".into()));
    }
    if cutoffs.contains(&0) {
        return Err(Error::Argument("cutoffs must be positive".into()));
    }
    if queries.bits() != index.bits() {
        return Err(Error::shape("evaluate", format!("{}-bit queries, {}-bit index", queries.bits(), index.bits())));
    }
    let per_query = (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let qlabel = &queries.labels[q];
            let ranked = index.rank(&queries.codes[q], Some(&queries.ids[q]))?;
            let rel: Vec<bool> = ranked.iter().map(|&(p, _)| qlabel.shares_any(&index.labels[p])).collect();
            let total = rel.iter().filter(|&&r| r).count();
            Ok(QueryMetrics {
                ap: average_precision(&rel, total)?,
                map_at: cutoffs
                    .iter()
                    .map(|&k| average_precision_at(&rel, total, k))
                    .collect::<Result<_>>()?,
                recall_at: cutoffs.iter().map(|&k| recall_at(&rel, total, k)).collect(),
            })
        })
        .collect::<Result<Vec<QueryMetrics>>>()?;

    let nq = per_query.len() as f64;
    let mean_col = |f: &dyn Fn(&QueryMetrics) -> f64| per_query.iter().map(f).sum::<f64>() / nq;
    Ok(EvalReport {
        map: mean_col(&|m| m.ap),
        cutoffs: cutoffs.to_vec(),
        map_at_k: (0..cutoffs.len()).map(|c| mean_col(&|m| m.map_at[c])).collect(),
        recall_at_k: (0..cutoffs.len()).map(|c| mean_col(&|m| m.recall_at[c])).collect(),
        per_query_ap: per_query.iter().map(|m| m.ap).collect(),
        config: None,
    })
}

impl EvalReport {
    /// One row per cutoff: `cutoff,map_at_k,recall_at_k`. The config echo,
    /// when present, goes on a leading `#` comment line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(cfg) = &self.config {
            let _ = writeln!(out, "# config: {cfg}");
        }
        out.push_str("cutoff,map_at_k,recall_at_k\n");
        for ((k, m), r) in self.cutoffs.iter().zip(&self.map_at_k).zip(&self.recall_at_k) {
            let _ = writeln!(out, "{k},{m},{r}");
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "queries: {}", self.per_query_ap.len());
        let _ = writeln!(out, "mAP: {:.6}", self.map);
        for ((k, m), r) in self.cutoffs.iter().zip(&self.map_at_k).zip(&self.recall_at_k) {
            let _ = writeln!(out, "mAP@{k}: {m:.6}  Recall@{k}: {r:.6}");
        }
        if let Some(cfg) = &self.config {
            let _ = writeln!(out, "config: {cfg}");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
