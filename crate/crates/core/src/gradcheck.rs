//! Central finite-difference check of the analytic gradients of the total
//! loss with respect to every network parameter.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{FeatureRecord, MultiHot};
use crate::error::Result;
use crate::linalg::Vector;
use crate::loss::{total_loss, LossConfig};
use crate::net::{backward_batch, forward_batch, ForwardOptions, FusionMode, ModelParams, NetConfig};
use crate::rng::stream_rng;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub seed: u64,
    pub step: f64,
    pub rel_tol: f64,
    /// Differences below this are accepted regardless of relative error.
    pub abs_floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            instances: 20,
            seed: 7,
            step: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorstEntry {
    pub instance: usize,
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub instances: usize,
    pub values_checked: usize,
    /// Largest `|a − n| / max(|a|, |n|, abs_floor/rel_tol)` seen; passing
    /// means this is at most `rel_tol`.
    pub max_error: f64,
    pub worst: Option<WorstEntry>,
    pub rel_tol: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_error <= self.rel_tol
    }
}

/// One randomly drawn problem: a small network, a batch and loss weights.
#[derive(Clone, Debug)]
pub struct Instance {
    pub params: ModelParams,
    pub batch: Vec<FeatureRecord>,
    pub loss: LossConfig,
    pub fusion: FusionMode,
    pub view_mask: Option<Vec<bool>>,
}

/// Dims drawn from d_view ∈ 3..=8, d_proj ∈ 2..=4, K ∈ 2..=6, b ∈ 2..=8.
/// Weights are spread over (−1, 1) so gates and tanh units leave their
/// linear region.
pub fn random_instance(seed: u64, index: usize) -> Result<Instance> {
    let mut rng = stream_rng(seed, &[0x6C4E, index as u64]);
    let n_views = rng.random_range(1..=3usize);
    let view_dims: Vec<usize> = (0..n_views).map(|_| rng.random_range(3..=8)).collect();
    let cfg = NetConfig {
        view_dims: view_dims.clone(),
        d_proj: rng.random_range(2..=4),
        bits: rng.random_range(2..=6),
        seed: rng.random(),
    };
    let mut params = ModelParams::init(&cfg)?;
    for s in params.weights.slices_mut() {
        for x in s.iter_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
    }
    let b = rng.random_range(2..=8usize);
    let categories = 3;
    let batch = (0..b)
        .map(|i| {
            let views = view_dims
                .iter()
                .map(|&d| Vector::new((0..d).map(|_| StandardNormal.sample(&mut rng)).collect()))
                .collect::<Result<Vec<_>>>()?;
            let mut cats = vec![rng.random_range(0..categories)];
            if rng.random_bool(0.3) {
                cats.push(rng.random_range(0..categories));
            }
            Ok(FeatureRecord {
                id: format!("g{i}"),
                views,
                label: MultiHot::from_indices(categories, &cats)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let lambda = if b >= 4 && rng.random_bool(0.3) { 0.25 } else { 0.5 };
    let loss = LossConfig {
        lambda,
        mu: rng.random_range(0.0..1.0),
        w_d: rng.random_range(0.5..2.0),
        ..LossConfig::default()
    };
    let fusion = if rng.random_bool(0.2) { FusionMode::Concat } else { FusionMode::Gated };
    let view_mask = (n_views > 1 && rng.random_bool(0.2)).then(|| {
        let mut m = vec![true; n_views];
        m[0] = false;
        m
    });
    Ok(Instance {
        params,
        batch,
        loss,
        fusion,
        view_mask,
    })
}

impl Instance {
    fn options(&self) -> ForwardOptions {
        ForwardOptions {
            fusion: self.fusion,
            view_mask: self.view_mask.clone(),
            ..ForwardOptions::eval()
        }
    }

    pub fn loss_at(&self, params: &ModelParams) -> Result<f64> {
        let (h, _) = forward_batch(&self.batch, params, &self.options())?;
        let labels: Vec<&MultiHot> = self.batch.iter().map(|r| &r.label).collect();
        Ok(total_loss(&h, &labels, &self.loss)?.total)
    }

    /// Analytic gradient, flattened in [`crate::net::ParamSet::slices`] order.
    pub fn analytic(&self) -> Result<Vec<Vec<f64>>> {
        let (h, tape) = forward_batch(&self.batch, &self.params, &self.options())?;
        let labels: Vec<&MultiHot> = self.batch.iter().map(|r| &r.label).collect();
        let out = total_loss(&h, &labels, &self.loss)?;
        let g = backward_batch(&tape, &self.params, &out.d_codes)?;
        Ok(g.0.slices().into_iter().map(<[f64]>::to_vec).collect())
    }

    /// Central differences, same layout as [`Instance::analytic`].
    pub fn numeric(&self, step: f64) -> Result<Vec<Vec<f64>>> {
        let mut probe = self.params.clone();
        let n_tensors = probe.weights.slices().len();
        let mut out = Vec::with_capacity(n_tensors);
        for t in 0..n_tensors {
            let len = probe.weights.slices()[t].len();
            let mut grads = Vec::with_capacity(len);
            for i in 0..len {
                let orig = probe.weights.slices()[t][i];
                probe.weights.slices_mut()[t][i] = orig + step;
                let up = self.loss_at(&probe)?;
                probe.weights.slices_mut()[t][i] = orig - step;
                let down = self.loss_at(&probe)?;
                probe.weights.slices_mut()[t][i] = orig;
                grads.push((up - down) / (2.0 * step));
            }
            out.push(grads);
        }
        Ok(out)
    }
}

pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let denom_floor = cfg.abs_floor / cfg.rel_tol;
    let mut report = GradcheckReport {
        instances: cfg.instances,
        values_checked: 0,
        max_error: 0.0,
        worst: None,
        rel_tol: cfg.rel_tol,
    };
    for k in 0..cfg.instances {
        let inst = random_instance(cfg.seed, k)?;
        let analytic = inst.analytic()?;
        let numeric = inst.numeric(cfg.step)?;
        let names = inst.params.weights.layout();
        for (t, (a_t, n_t)) in analytic.iter().zip(&numeric).enumerate() {
            for (i, (&a, &n)) in a_t.iter().zip(n_t).enumerate() {
                let err = (a - n).abs() / a.abs().max(n.abs()).max(denom_floor);
                report.values_checked += 1;
                if err > report.max_error || report.worst.is_none() {
                    report.max_error = report.max_error.max(err);
                    report.worst = Some(WorstEntry {
                        instance: k,
                        tensor: names[t].0.clone(),
                        index: i,
                        analytic: a,
                        numeric: n,
                    });
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_passes() {
        let report = run(&GradcheckConfig { instances: 3, ..GradcheckConfig::default() }).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.values_checked > 0);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let inst = random_instance(1, 0).unwrap();
        let mut a = inst.analytic().unwrap();
        let n = inst.numeric(1e-5).unwrap();
        a[0][0] += 1e-2;
        let err = (a[0][0] - n[0][0]).abs() / a[0][0].abs().max(n[0][0].abs()).max(1e-3);
        assert!(err > 1e-4);
    }
}
