//! Training loop, ablation variants, periodic evaluation and curve export.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{batches, DatasetSplit, FeatureRecord, MultiHot};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::loss::{total_loss, LossConfig, SimilarityRule};
use crate::net::{backward_batch, encode, forward_batch, ForwardOptions, FusionMode, ModelParams, NetConfig};
use crate::optim::{adamw_step_in_place, AdamWConfig, LrSchedule, OptimState};
use crate::retrieval::{evaluate, EvalReport, HammingIndex, HashCode};
use crate::rng::mix;

/// Pipeline variants used for ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    Full,
    /// Quantization weight forced to zero.
    MetricOnly,
    /// Metric term removed.
    QuantOnly,
    /// Only view 0 reaches the network.
    ImageOnly,
    /// Only view 1 reaches the network.
    TextOnly,
    /// Gate replaced by the identity.
    ConcatOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Full,
        Ablation::MetricOnly,
        Ablation::QuantOnly,
        Ablation::ImageOnly,
        Ablation::TextOnly,
        Ablation::ConcatOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::MetricOnly => "metric-only",
            Ablation::QuantOnly => "quant-only",
            Ablation::ImageOnly => "image-only",
            Ablation::TextOnly => "text-only",
            Ablation::ConcatOnly => "concat-only",
        }
    }

    pub fn fusion(self) -> FusionMode {
        match self {
            Ablation::ConcatOnly => FusionMode::Concat,
            _ => FusionMode::Gated,
        }
    }

    pub fn view_mask(self, n_views: usize) -> Result<Option<Vec<bool>>> {
        let keep = match self {
            Ablation::ImageOnly => 0,
            Ablation::TextOnly => 1,
            _ => return Ok(None),
        };
        if keep >= n_views {
            return Err(Error::Config(format!("{} needs at least {} views", self.name(), keep + 1)));
        }
        Ok(Some((0..n_views).map(|v| v == keep).collect()))
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown ablation {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub bits: usize,
    pub d_proj: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub cosine_lr: bool,
    pub max_grad_norm: Option<f64>,
    pub dropout_p: f64,
    pub lambda: f64,
    pub mu: f64,
    pub w_d: f64,
    pub similarity: SimilarityRule,
    pub seed: u64,
    /// Evaluate every this many epochs (and after the last one); 0 disables.
    pub eval_every: usize,
    pub cutoffs: Vec<usize>,
    pub ablation: Ablation,
    /// Record per-epoch wall time. Off by default since it makes curve files
    /// differ between otherwise identical runs.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            bits: 16,
            d_proj: 64,
            epochs: 500,
            batch_size: 128,
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            cosine_lr: false,
            max_grad_norm: None,
            dropout_p: 0.1,
            lambda: 0.5,
            mu: 0.5,
            w_d: 1.5,
            similarity: SimilarityRule::Binary,
            seed: 0,
            eval_every: 10,
            cutoffs: vec![1, 10, 50, 100, 200, 500],
            ablation: Ablation::Full,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            mu: if self.ablation == Ablation::MetricOnly { 0.0 } else { self.mu },
            w_d: self.w_d,
            similarity: self.similarity,
            use_metric: self.ablation != Ablation::QuantOnly,
        }
    }

    pub fn optimizer_config(&self, steps_per_epoch: usize) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            schedule: if self.cosine_lr {
                LrSchedule::Cosine {
                    total_steps: (self.epochs * steps_per_epoch) as u64,
                }
            } else {
                LrSchedule::Constant
            },
            max_grad_norm: self.max_grad_norm,
        }
    }

    pub fn net_config(&self, view_dims: Vec<usize>) -> NetConfig {
        NetConfig {
            view_dims,
            d_proj: self.d_proj,
            bits: self.bits,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 || self.d_proj == 0 {
            return Err(Error::Config("bits and d_proj must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p must be in [0, 1), got {}", self.dropout_p)));
        }
        if self.cutoffs.contains(&0) {
            return Err(Error::Config("cutoffs must be positive".into()));
        }
        self.loss_config().block_size(self.batch_size)?;
        self.optimizer_config(1).validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub map: Option<f64>,
    pub wall_ms: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct BestModel {
    pub epoch: usize,
    pub map: f64,
    pub params: ModelParams,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub optimizer: OptimState,
    pub records: Vec<EpochRecord>,
    pub best: Option<BestModel>,
    pub final_report: Option<EvalReport>,
}

/// Binary codes for `records` under the pipeline the ablation selects.
pub fn build_index<R: std::borrow::Borrow<FeatureRecord> + Sync>(
    records: &[R],
    params: &ModelParams,
    ablation: Ablation,
) -> Result<HammingIndex> {
    let mask = ablation.view_mask(params.config.view_dims.len())?;
    let codes = encode(records, params, ablation.fusion(), mask.as_deref())?;
    let mut index = HammingIndex::new(params.config.bits);
    for (i, r) in records.iter().enumerate() {
        let r = r.borrow();
        index.push(r.id.clone(), HashCode::from_signs(codes.row(i)), r.label.clone())?;
    }
    Ok(index)
}

/// Query split ranked against the retrieval split.
pub fn evaluate_model(dataset: &DatasetSplit, params: &ModelParams, ablation: Ablation, cutoffs: &[usize]) -> Result<EvalReport> {
    let index = build_index(&dataset.retrieval, params, ablation)?;
    let queries = build_index(&dataset.query, params, ablation)?;
    evaluate(&queries, &index, cutoffs)
}

/// Mean of `||h_k| − 1|` over all components of the eval-mode codes.
pub fn mean_code_gap(records: &[FeatureRecord], params: &ModelParams, ablation: Ablation) -> Result<f64> {
    let mask = ablation.view_mask(params.config.view_dims.len())?;
    let codes: Matrix = encode(records, params, ablation.fusion(), mask.as_deref())?;
    let s = codes.as_slice();
    Ok(s.iter().map(|h| (h.abs() - 1.0).abs()).sum::<f64>() / s.len() as f64)
}

pub fn train(dataset: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(dataset, cfg, &mut |_, _| Ok(()))
}

/// [`train`] with a callback after every epoch.
pub fn train_observed(
    dataset: &DatasetSplit,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord, &ModelParams) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    dataset.validate()?;
    let mask = cfg.ablation.view_mask(dataset.views.len())?;
    let loss_cfg = cfg.loss_config();
    let steps_per_epoch = dataset.train.len() / cfg.batch_size;
    if steps_per_epoch == 0 {
        return Err(Error::Config(format!(
            "batch size {} exceeds training split of {}",
            cfg.batch_size,
            dataset.train.len()
        )));
    }

    let mut params = ModelParams::init(&cfg.net_config(dataset.view_dims()))?;
    let mut optimizer = OptimState::new(&params, cfg.optimizer_config(steps_per_epoch))?;
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<BestModel> = None;
    let mut final_report = None;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let epoch_batches = batches(&dataset.train, cfg.batch_size, cfg.seed, epoch as u64)?;
        let n_batches = epoch_batches.len();
        for (bi, batch) in epoch_batches.into_iter().enumerate() {
            let opts = ForwardOptions {
                dropout_p: cfg.dropout_p,
                train: true,
                seed: mix(cfg.seed ^ mix(epoch as u64) ^ mix(bi as u64 ^ 0xB47C)),
                fusion: cfg.ablation.fusion(),
                view_mask: mask.clone(),
            };
            let (codes, tape) = forward_batch(&batch, &params, &opts)?;
            let labels: Vec<&MultiHot> = batch.iter().map(|r| &r.label).collect();
            let out = total_loss(&codes, &labels, &loss_cfg).map_err(|e| {
                Error::NonFinite(format!("epoch {epoch}, batch {bi}: {e}"))
            })?;
            if !out.total.is_finite() {
                return Err(Error::NonFinite(format!("epoch {epoch}, batch {bi}: loss {}", out.total)));
            }
            loss_sum += out.total;
            let grads = backward_batch(&tape, &params, &out.d_codes)?;
            adamw_step_in_place(&mut params, &grads, &mut optimizer)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {bi}: {e}")))?;
        }

        let is_eval = cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        let map = if is_eval {
            let report = evaluate_model(dataset, &params, cfg.ablation, &cfg.cutoffs)?;
            let map = report.map;
            if best.as_ref().is_none_or(|b| map > b.map) {
                best = Some(BestModel {
                    epoch,
                    map,
                    params: params.clone(),
                });
            }
            if epoch == cfg.epochs {
                final_report = Some(report);
            }
            Some(map)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            loss: loss_sum / n_batches as f64,
            map,
            wall_ms: cfg.record_wall_time.then(|| started.elapsed().as_millis() as u64),
        };
        observer(&record, &params)?;
        records.push(record);
    }

    Ok(TrainOutcome {
        params,
        optimizer,
        records,
        best,
        final_report,
    })
}

/// CSV with header `epoch,loss,map,wall_ms`; absent values are empty.
pub fn curves_csv(records: &[EpochRecord], config_echo: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(cfg) = config_echo {
        out.push_str(&format!("# config: {cfg}\n"));
    }
    out.push_str("epoch,loss,map,wall_ms\n");
    for r in records {
        let map = r.map.map(|m| m.to_string()).unwrap_or_default();
        let wall = r.wall_ms.map(|w| w.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.loss, map, wall));
    }
    out
}

pub fn export_curves(records: &[EpochRecord], path: &Path) -> Result<()> {
    export_curves_with_config(records, path, None)
}

pub fn export_curves_with_config(records: &[EpochRecord], path: &Path, config_echo: Option<&str>) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Argument("no epoch records to export".into()));
    }
    fs::write(path, curves_csv(records, config_echo)).map_err(|e| Error::io(path, e))
}

pub fn read_curves(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::load(path, e.to_string()))?;
    let bad = |what: &str| Error::load(path, format!("bad {what}"));
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::load(path, e.to_string()))?;
        let opt = |s: &str| (!s.is_empty()).then_some(s.to_string());
        out.push(EpochRecord {
            epoch: row[0].parse().map_err(|_| bad("epoch"))?,
            loss: row[1].parse().map_err(|_| bad("loss"))?,
            map: opt(&row[2]).map(|s| s.parse()).transpose().map_err(|_| bad("map"))?,
            wall_ms: opt(&row[3]).map(|s| s.parse()).transpose().map_err(|_| bad("wall_ms"))?,
        });
    }
    Ok(out)
}

/// Trailing moving average with the given window.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}
