//! Pairwise metric loss over a λ-block of the batch, quantization loss and
//! their weighted sum, each with its gradient with respect to the codes.
//!
//! Only the first `λb` rows ("prec") are paired against the last `λb` rows
//! ("rest"), so a batch costs `(λb)²` pair terms instead of `b²`.

use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use crate::data::MultiHot;
use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, sigmoid, softplus, Matrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityRule {
    /// `s_ij = 1` iff the labels share a category.
    #[default]
    Binary,
    /// Raw label dot product; can exceed 1 for multi-label data.
    /// Experimental.
    RawProduct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Block fraction λ in (0, 0.5].
    pub lambda: f64,
    /// Weight of the quantization term.
    pub mu: f64,
    /// Weight on the softplus term of every pair.
    pub w_d: f64,
    #[serde(default)]
    pub similarity: SimilarityRule,
    /// When false the metric term is dropped entirely.
    #[serde(default = "default_true")]
    pub use_metric: bool,
}

fn default_true() -> bool {
    true
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.5,
            mu: 0.5,
            w_d: 1.5,
            similarity: SimilarityRule::Binary,
            use_metric: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 0.5) {
            return Err(Error::Config(format!("lambda must be in (0, 0.5], got {}", self.lambda)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu must be >= 0, got {}", self.mu)));
        }
        if !(self.w_d >= 0.0 && self.w_d.is_finite()) {
            return Err(Error::Config(format!("w_d must be >= 0, got {}", self.w_d)));
        }
        Ok(())
    }

    /// `⌊λ·b⌋`; errors when `λ·b < 1`.
    pub fn block_size(&self, batch: usize) -> Result<usize> {
        self.validate()?;
        let raw = self.lambda * batch as f64;
        // tolerate representation error such as 0.3 * 10 = 3.0000000000000004
        let size = (raw + 1e-9).floor() as usize;
        if size < 1 {
            return Err(Error::Config(format!(
                "lambda * batch = {raw} < 1; raise lambda or the batch size"
            )));
        }
        Ok(size)
    }
}

/// `s_ij` for every pair of `a × b`.
pub fn pairwise_similarity<A: Borrow<MultiHot>, B: Borrow<MultiHot>>(
    labels_a: &[A],
    labels_b: &[B],
    rule: SimilarityRule,
) -> Result<Matrix> {
    let mut s = Matrix::zeros(labels_a.len(), labels_b.len());
    for (i, a) in labels_a.iter().enumerate() {
        for (j, b) in labels_b.iter().enumerate() {
            let dot = a.borrow().dot(b.borrow())?;
            let v = match rule {
                SimilarityRule::Binary => f64::from(dot > 0),
                SimilarityRule::RawProduct => dot as f64,
            };
            s.set(i, j, v);
        }
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairBlock {
    pub prec_indices: Vec<usize>,
    pub rest_indices: Vec<usize>,
    /// `phi[i][j] = ⟨h_prec[i], h_rest[j]⟩`.
    pub phi: Matrix,
    pub sim: Matrix,
}

impl PairBlock {
    pub fn size(&self) -> usize {
        self.prec_indices.len()
    }

    /// Union of prec and rest rows, ascending.
    pub fn indices(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.prec_indices.iter().chain(&self.rest_indices).copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }
}

pub fn build_pair_block<L: Borrow<MultiHot>>(codes: &Matrix, labels: &[L], cfg: &LossConfig) -> Result<PairBlock> {
    let b = codes.rows();
    if b < 2 {
        return Err(Error::Argument(format!("pair block needs at least 2 rows, got {b}")));
    }
    if labels.len() != b {
        return Err(Error::shape("build_pair_block", format!("{b} codes, {} labels", labels.len())));
    }
    let m = cfg.block_size(b)?;
    let prec_indices: Vec<usize> = (0..m).collect();
    let rest_indices: Vec<usize> = (b - m..b).collect();
    let h_prec = codes.select_rows(&prec_indices)?;
    let h_rest = codes.select_rows(&rest_indices)?;
    let phi = matmul_nt(&h_prec, &h_rest)?;
    let y_prec: Vec<&MultiHot> = prec_indices.iter().map(|&i| labels[i].borrow()).collect();
    let y_rest: Vec<&MultiHot> = rest_indices.iter().map(|&i| labels[i].borrow()).collect();
    let sim = pairwise_similarity(&y_prec, &y_rest, cfg.similarity)?;
    Ok(PairBlock {
        prec_indices,
        rest_indices,
        phi,
        sim,
    })
}

fn weighted_metric_loss(block: &PairBlock, weight: impl Fn(f64) -> f64) -> (f64, Matrix) {
    let m = block.size() as f64;
    let norm = 1.0 / (m * m);
    let mut d_phi = Matrix::zeros(block.phi.rows(), block.phi.cols());
    let mut loss = 0.0;
    for ((d, &phi), &s) in d_phi
        .as_mut_slice()
        .iter_mut()
        .zip(block.phi.as_slice())
        .zip(block.sim.as_slice())
    {
        let w = weight(s);
        loss += w * softplus(phi) - s * phi;
        *d = (w * sigmoid(phi) - s) * norm;
    }
    (loss * norm, d_phi)
}

/// `1/(λb)² Σ [w_d·softplus(φ_ij) − s_ij·φ_ij]` and its gradient in φ.
pub fn metric_loss(block: &PairBlock, cfg: &LossConfig) -> (f64, Matrix) {
    weighted_metric_loss(block, |_| cfg.w_d)
}

/// The metric loss with the softplus weight replaced by `s_ij`, so that
/// dissimilar pairs contribute nothing.
pub fn similar_only_metric_loss(block: &PairBlock) -> (f64, Matrix) {
    weighted_metric_loss(block, |s| s)
}

/// `(1/b) Σ_{i ∈ indices} ‖ |h_i| − 1 ‖₂` where `b` is the full batch size.
/// The subgradient is taken as zero where `h_ik = 0` or the norm vanishes.
pub fn quantization_loss(codes: &Matrix, indices: &[usize]) -> Result<(f64, Matrix)> {
    let b = codes.rows();
    if b == 0 {
        return Err(Error::Argument("quantization loss on an empty batch".into()));
    }
    let inv_b = 1.0 / b as f64;
    let mut grad = Matrix::zeros(b, codes.cols());
    let mut loss = 0.0;
    for &i in indices {
        if i >= b {
            return Err(Error::Argument(format!("row {i} outside batch of {b}")));
        }
        let row = codes.row(i);
        let norm = row.iter().map(|h| (h.abs() - 1.0).powi(2)).sum::<f64>().sqrt();
        loss += norm;
        if norm > 0.0 {
            for (g, &h) in grad.row_mut(i).iter_mut().zip(row) {
                let sign = if h > 0.0 {
                    1.0
                } else if h < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *g = inv_b * (h.abs() - 1.0) / norm * sign;
            }
        }
    }
    Ok((loss * inv_b, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub metric: f64,
    pub quantization: f64,
    /// ∂total/∂codes; rows outside the block are zero.
    pub d_codes: Matrix,
}

/// Metric plus `mu` times quantization loss, with the gradient in the codes.
pub fn total_loss<L: Borrow<MultiHot>>(codes: &Matrix, labels: &[L], cfg: &LossConfig) -> Result<LossBreakdown> {
    let block = build_pair_block(codes, labels, cfg)?;
    let mut d_codes = Matrix::zeros(codes.rows(), codes.cols());

    let metric = if cfg.use_metric {
        let (loss, d_phi) = metric_loss(&block, cfg);
        // Φ = H_prec·H_restᵀ
        let h_prec = codes.select_rows(&block.prec_indices)?;
        let h_rest = codes.select_rows(&block.rest_indices)?;
        let d_prec = matmul(&d_phi, &h_rest)?;
        let d_rest = matmul_tn(&d_phi, &h_prec)?;
        for (r, &i) in block.prec_indices.iter().enumerate() {
            for (g, d) in d_codes.row_mut(i).iter_mut().zip(d_prec.row(r)) {
                *g += d;
            }
        }
        for (r, &i) in block.rest_indices.iter().enumerate() {
            for (g, d) in d_codes.row_mut(i).iter_mut().zip(d_rest.row(r)) {
                *g += d;
            }
        }
        loss
    } else {
        0.0
    };

    let (quantization, d_quant) = quantization_loss(codes, &block.indices())?;
    if cfg.mu != 0.0 {
        for (g, d) in d_codes.as_mut_slice().iter_mut().zip(d_quant.as_slice()) {
            *g += cfg.mu * d;
        }
    }
    let total = metric + cfg.mu * quantization;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("total loss {total}")));
    }
    Ok(LossBreakdown {
        total,
        metric,
        quantization,
        d_codes,
    })
}

/// Hamming distance implied by the ±1 inner product: `(K − φ)/2`.
pub fn hamming_from_inner(phi: f64, bits: usize) -> Result<f64> {
    let k = bits as f64;
    if !phi.is_finite() || phi.abs() > k {
        return Err(Error::Argument(format!("inner product {phi} outside [-{k}, {k}]")));
    }
    Ok(0.5 * (k - phi))
}
