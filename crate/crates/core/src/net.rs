//! The multi-view hashing network.
//!
//! ```text
//!   view v ──► tanh(W_v x_v + b_v) ─┐
//!                                   ├─► concat ─► dropout ─► gate ⊙ x ─► tanh(W_h x + b_h) ─► h
//!   view w ──► tanh(W_w x_w + b_w) ─┘                        gate = σ(W_f x + b_f)
//! ```
//!
//! Forward passes record a [`BatchTape`]; [`backward_batch`] turns an upstream
//! gradient on the codes into parameter gradients by hand-written chain rule.
//! The normalization stage (per-view linear projection + tanh) is our reading
//! of "project each view to a common dimension and range".

use std::borrow::Borrow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureRecord;
use crate::error::{Error, Result};
use crate::linalg::{self, matmul_nt, matmul_tn, sigmoid, Matrix, Vector};
use crate::retrieval::HashCode;
use crate::rng::stream_rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub view_dims: Vec<usize>,
    /// Width of each normalized view.
    pub d_proj: usize,
    /// Code length K.
    pub bits: usize,
    pub seed: u64,
}

impl NetConfig {
    /// Width of the concatenated representation, `views × d_proj`.
    pub fn fused_dim(&self) -> usize {
        self.view_dims.len() * self.d_proj
    }

    pub fn validate(&self) -> Result<()> {
        if self.view_dims.is_empty() || self.view_dims.contains(&0) {
            return Err(Error::Config(format!("invalid view dims {:?}", self.view_dims)));
        }
        if self.d_proj == 0 || self.bits == 0 {
            return Err(Error::Config("d_proj and bits must be positive".into()));
        }
        Ok(())
    }
}

/// One tensor per trainable parameter. Used for weights, gradients and
/// optimizer moments alike so the shapes can never drift apart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub norm_w: Vec<Matrix>,
    pub norm_b: Vec<Vector>,
    pub fusion_w: Matrix,
    pub fusion_b: Vector,
    pub hash_w: Matrix,
    pub hash_b: Vector,
}

impl ParamSet {
    pub fn zeros(cfg: &NetConfig) -> Self {
        let n = cfg.fused_dim();
        ParamSet {
            norm_w: cfg.view_dims.iter().map(|&d| Matrix::zeros(cfg.d_proj, d)).collect(),
            norm_b: cfg.view_dims.iter().map(|_| Vector::zeros(cfg.d_proj)).collect(),
            fusion_w: Matrix::zeros(n, n),
            fusion_b: Vector::zeros(n),
            hash_w: Matrix::zeros(cfg.bits, n),
            hash_b: Vector::zeros(cfg.bits),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            norm_w: self.norm_w.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
            norm_b: self.norm_b.iter().map(|v| Vector::zeros(v.len())).collect(),
            fusion_w: Matrix::zeros(self.fusion_w.rows(), self.fusion_w.cols()),
            fusion_b: Vector::zeros(self.fusion_b.len()),
            hash_w: Matrix::zeros(self.hash_w.rows(), self.hash_w.cols()),
            hash_b: Vector::zeros(self.hash_b.len()),
        }
    }

    /// Canonical tensor order: `(name, rows, cols)`. Vectors report one column.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        for (v, (w, b)) in self.norm_w.iter().zip(&self.norm_b).enumerate() {
            out.push((format!("norm_w.{v}"), w.rows(), w.cols()));
            out.push((format!("norm_b.{v}"), b.len(), 1));
        }
        out.push(("fusion_w".into(), self.fusion_w.rows(), self.fusion_w.cols()));
        out.push(("fusion_b".into(), self.fusion_b.len(), 1));
        out.push(("hash_w".into(), self.hash_w.rows(), self.hash_w.cols()));
        out.push(("hash_b".into(), self.hash_b.len(), 1));
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for (w, b) in self.norm_w.iter().zip(&self.norm_b) {
            out.push(w.as_slice());
            out.push(b.as_slice());
        }
        out.extend([
            self.fusion_w.as_slice(),
            self.fusion_b.as_slice(),
            self.hash_w.as_slice(),
            self.hash_b.as_slice(),
        ]);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for (w, b) in self.norm_w.iter_mut().zip(self.norm_b.iter_mut()) {
            out.push(w.as_mut_slice());
            out.push(b.as_mut_slice());
        }
        out.extend([
            self.fusion_w.as_mut_slice(),
            self.fusion_b.as_mut_slice(),
            self.hash_w.as_mut_slice(),
            self.hash_b.as_mut_slice(),
        ]);
        out
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.layout() == other.layout()
    }

    pub fn num_values(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: NetConfig,
    pub weights: ParamSet,
}

/// Parameter gradients, shape-for-shape with [`ModelParams::weights`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub ParamSet);

impl ModelParams {
    /// Uniform `[-1/√fan_in, 1/√fan_in]` initialization for every weight and
    /// bias, seeded from `cfg.seed`.
    pub fn init(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut weights = ParamSet::zeros(cfg);
        let n = cfg.fused_dim();
        let fill = |slice: &mut [f64], fan_in: usize, stream: u64| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut rng = stream_rng(cfg.seed, &[0x1217, stream]);
            for x in slice.iter_mut() {
                *x = rng.random_range(-bound..bound);
            }
        };
        for (v, &d) in cfg.view_dims.iter().enumerate() {
            fill(weights.norm_w[v].as_mut_slice(), d, 2 * v as u64);
            fill(weights.norm_b[v].as_mut_slice(), d, 2 * v as u64 + 1);
        }
        let base = 2 * cfg.view_dims.len() as u64;
        fill(weights.fusion_w.as_mut_slice(), n, base);
        fill(weights.fusion_b.as_mut_slice(), n, base + 1);
        fill(weights.hash_w.as_mut_slice(), n, base + 2);
        fill(weights.hash_b.as_mut_slice(), n, base + 3);
        Ok(ModelParams {
            config: cfg.clone(),
            weights,
        })
    }

    /// Checks that tensor shapes agree with the config and values are finite.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = ParamSet::zeros(&self.config);
        if !self.weights.same_shape(&expected) {
            return Err(Error::shape(
                "ModelParams",
                format!("tensor layout {:?} does not match config", self.weights.layout()),
            ));
        }
        if !self.weights.all_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Sigmoid gate applied elementwise to the concatenated views.
    #[default]
    Gated,
    /// Plain concatenation; the gate is bypassed.
    Concat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOptions {
    pub dropout_p: f64,
    pub train: bool,
    pub seed: u64,
    pub fusion: FusionMode,
    /// `false` entries zero the corresponding view before normalization.
    pub view_mask: Option<Vec<bool>>,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        ForwardOptions {
            dropout_p: 0.0,
            train: false,
            seed: 0,
            fusion: FusionMode::Gated,
            view_mask: None,
        }
    }
}

/// Intermediates kept by [`forward_batch`] for [`backward_batch`].
#[derive(Clone, Debug)]
pub struct BatchTape {
    pub inputs: Vec<Matrix>,
    pub normalized: Vec<Matrix>,
    pub concat: Matrix,
    /// Inverted-dropout multipliers, `None` when dropout was the identity.
    pub mask: Option<Matrix>,
    pub dropped: Matrix,
    /// Gate activations, `None` in concatenation mode.
    pub gate: Option<Matrix>,
    pub fused: Matrix,
    pub codes: Matrix,
}

impl BatchTape {
    pub fn batch_size(&self) -> usize {
        self.codes.rows()
    }
}

fn check_len(op: &'static str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::shape(op, format!("input length {got}, expected {want}")));
    }
    Ok(())
}

/// `tanh(norm_w[v]·x + norm_b[v])`.
pub fn normalize_view(x: &Vector, params: &ModelParams, view: usize) -> Result<Vector> {
    let w = params
        .weights
        .norm_w
        .get(view)
        .ok_or_else(|| Error::Argument(format!("view index {view} out of range")))?;
    check_len("normalize_view", x.len(), w.cols())?;
    let z = w.matvec(x)?;
    let out = z
        .as_slice()
        .iter()
        .zip(params.weights.norm_b[view].as_slice())
        .map(|(a, b)| (a + b).tanh())
        .collect();
    Vector::new(out)
}

/// Context gating: returns `(gate ⊙ x, gate)` with `gate = σ(W_f x + b_f)`.
pub fn context_gating(x_concat: &Vector, params: &ModelParams) -> Result<(Vector, Vector)> {
    check_len("context_gating", x_concat.len(), params.weights.fusion_w.cols())?;
    let z = params.weights.fusion_w.matvec(x_concat)?;
    let gate: Vec<f64> = z
        .as_slice()
        .iter()
        .zip(params.weights.fusion_b.as_slice())
        .map(|(a, b)| sigmoid(a + b))
        .collect();
    let gate = Vector::new(gate)?;
    let fused = linalg::elementwise(&gate, x_concat, linalg::BinaryOp::Mul)?;
    Ok((fused, gate))
}

/// Continuous code `tanh(hash_w·x + hash_b)`. No sign is taken here.
pub fn hash_head(x_fusion: &Vector, params: &ModelParams) -> Result<Vector> {
    check_len("hash_head", x_fusion.len(), params.weights.hash_w.cols())?;
    let z = params.weights.hash_w.matvec(x_fusion)?;
    let h = z
        .as_slice()
        .iter()
        .zip(params.weights.hash_b.as_slice())
        .map(|(a, b)| (a + b).tanh())
        .collect();
    Vector::new(h)
}

/// Sign-thresholds a continuous code; `0` maps to `+1`.
pub fn binarize(h: &[f64]) -> HashCode {
    HashCode::from_signs(h)
}

/// `tanh(x·Wᵀ + b)` over a batch.
fn dense_tanh(x: &Matrix, w: &Matrix, b: &Vector) -> Result<Matrix> {
    let mut z = matmul_nt(x, w)?;
    z.add_row_vector(b)?;
    z.map(f64::tanh)
}

pub fn forward_batch<R: Borrow<FeatureRecord>>(
    batch: &[R],
    params: &ModelParams,
    opts: &ForwardOptions,
) -> Result<(Matrix, BatchTape)> {
    if batch.is_empty() {
        return Err(Error::Argument("forward_batch on an empty batch".into()));
    }
    if !(0.0..1.0).contains(&opts.dropout_p) {
        return Err(Error::Config(format!("dropout_p must be in [0, 1), got {}", opts.dropout_p)));
    }
    let cfg = &params.config;
    let n_views = cfg.view_dims.len();
    if let Some(mask) = &opts.view_mask {
        check_len("view_mask", mask.len(), n_views)?;
    }
    let b = batch.len();

    let mut inputs = Vec::with_capacity(n_views);
    for (v, &d) in cfg.view_dims.iter().enumerate() {
        let active = opts.view_mask.as_ref().is_none_or(|m| m[v]);
        let mut x = Matrix::zeros(b, d);
        for (i, rec) in batch.iter().enumerate() {
            let rec = rec.borrow();
            let view = rec.views.get(v).ok_or_else(|| {
                Error::shape("forward_batch", format!("record {:?} lacks view {v}", rec.id))
            })?;
            if view.len() != d {
                return Err(Error::shape(
                    "forward_batch",
                    format!("record {:?} view {v} has dim {}, expected {d}", rec.id, view.len()),
                ));
            }
            if active {
                x.row_mut(i).copy_from_slice(view.as_slice());
            }
        }
        inputs.push(x);
    }

    let w = &params.weights;
    let normalized = inputs
        .iter()
        .enumerate()
        .map(|(v, x)| dense_tanh(x, &w.norm_w[v], &w.norm_b[v]))
        .collect::<Result<Vec<_>>>()?;
    let concat = Matrix::hstack(&normalized)?;

    let (mask, dropped) = if opts.train && opts.dropout_p > 0.0 {
        let mask = dropout_mask(b, concat.cols(), opts.dropout_p, opts.seed);
        let dropped = concat.hadamard(&mask)?;
        (Some(mask), dropped)
    } else {
        (None, concat.clone())
    };

    let (gate, fused) = match opts.fusion {
        FusionMode::Gated => {
            let mut z = matmul_nt(&dropped, &w.fusion_w)?;
            z.add_row_vector(&w.fusion_b)?;
            let gate = z.map(sigmoid)?;
            let fused = gate.hadamard(&dropped)?;
            (Some(gate), fused)
        }
        FusionMode::Concat => (None, dropped.clone()),
    };

    let codes = dense_tanh(&fused, &w.hash_w, &w.hash_b)?;
    let tape = BatchTape {
        inputs,
        normalized,
        concat,
        mask,
        dropped,
        gate,
        fused,
        codes: codes.clone(),
    };
    Ok((codes, tape))
}

/// Inverted dropout multipliers: `0` with probability `p`, else `1/(1-p)`.
pub fn dropout_mask(rows: usize, cols: usize, p: f64, seed: u64) -> Matrix {
    let mut rng = stream_rng(seed, &[0xD50F]);
    let keep = 1.0 / (1.0 - p);
    let mut m = Matrix::zeros(rows, cols);
    for x in m.as_mut_slice() {
        *x = if rng.random::<f64>() < p { 0.0 } else { keep };
    }
    m
}

/// Back-propagates `d_codes` (∂L/∂h, one row per sample) to every parameter.
pub fn backward_batch(tape: &BatchTape, params: &ModelParams, d_codes: &Matrix) -> Result<Gradients> {
    if d_codes.shape() != tape.codes.shape() {
        return Err(Error::shape(
            "backward_batch",
            format!("upstream {:?}, codes {:?}", d_codes.shape(), tape.codes.shape()),
        ));
    }
    let w = &params.weights;
    let mut g = w.zeros_like();

    // h = tanh(a)
    let mut d_pre = d_codes.clone();
    for (d, h) in d_pre.as_mut_slice().iter_mut().zip(tape.codes.as_slice()) {
        *d *= 1.0 - h * h;
    }
    g.hash_w = matmul_tn(&d_pre, &tape.fused)?;
    g.hash_b = d_pre.column_sums();
    let d_fused = linalg::matmul(&d_pre, &w.hash_w)?;

    let d_dropped = match &tape.gate {
        Some(gate) => {
            // fused = gate ⊙ x: x receives gradient directly and through the gate.
            let mut d_x = d_fused.hadamard(gate)?;
            let mut d_gate_pre = d_fused.hadamard(&tape.dropped)?;
            for (d, s) in d_gate_pre.as_mut_slice().iter_mut().zip(gate.as_slice()) {
                *d *= s * (1.0 - s);
            }
            g.fusion_w = matmul_tn(&d_gate_pre, &tape.dropped)?;
            g.fusion_b = d_gate_pre.column_sums();
            let through_gate = linalg::matmul(&d_gate_pre, &w.fusion_w)?;
            for (a, b) in d_x.as_mut_slice().iter_mut().zip(through_gate.as_slice()) {
                *a += b;
            }
            d_x
        }
        None => d_fused,
    };

    let d_concat = match &tape.mask {
        Some(mask) => d_dropped.hadamard(mask)?,
        None => d_dropped,
    };

    let widths: Vec<usize> = tape.normalized.iter().map(Matrix::cols).collect();
    for (v, mut d_norm) in d_concat.hsplit(&widths)?.into_iter().enumerate() {
        for (d, y) in d_norm.as_mut_slice().iter_mut().zip(tape.normalized[v].as_slice()) {
            *d *= 1.0 - y * y;
        }
        g.norm_w[v] = matmul_tn(&d_norm, &tape.inputs[v])?;
        g.norm_b[v] = d_norm.column_sums();
    }
    Ok(Gradients(g))
}

/// Eval-mode continuous codes for a set of records, one row each.
pub fn encode<R: Borrow<FeatureRecord> + Sync>(
    records: &[R],
    params: &ModelParams,
    fusion: FusionMode,
    view_mask: Option<&[bool]>,
) -> Result<Matrix> {
    use rayon::prelude::*;
    let opts = ForwardOptions {
        fusion,
        view_mask: view_mask.map(<[bool]>::to_vec),
        ..ForwardOptions::eval()
    };
    let chunks = records
        .par_chunks(256)
        .map(|chunk| forward_batch(chunk, params, &opts).map(|(h, _)| h))
        .collect::<Result<Vec<_>>>()?;
    let bits = params.config.bits;
    let mut data = Vec::with_capacity(records.len() * bits);
    for c in chunks {
        data.extend_from_slice(c.as_slice());
    }
    Matrix::new(records.len(), bits, data)
}
