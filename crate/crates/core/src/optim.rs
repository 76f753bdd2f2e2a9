//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Gradients, ModelParams, ParamSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Cosine decay from `lr` to zero over `total_steps`.
    Cosine { total_steps: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    #[serde(default)]
    pub schedule: LrSchedule,
    /// Global-norm gradient clipping; off when `None`.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            schedule: LrSchedule::Constant,
            max_grad_norm: None,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in [0, 1), got {v}")))
            }
        };
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be > 0, got {}", self.eps)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("max_grad_norm must be > 0, got {c}")));
            }
        }
        Ok(())
    }

    /// Learning rate used for update number `step` (1-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine { total_steps } => {
                let t = (step.saturating_sub(1) as f64 / total_steps.max(1) as f64).min(1.0);
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub step: u64,
    pub m: ParamSet,
    pub v: ParamSet,
    pub config: AdamWConfig,
}

impl OptimState {
    pub fn new(params: &ModelParams, config: AdamWConfig) -> Result<Self> {
        config.validate()?;
        Ok(OptimState {
            step: 0,
            m: params.weights.zeros_like(),
            v: params.weights.zeros_like(),
            config,
        })
    }
}

/// One AdamW update:
///
/// ```text
/// m ← β₁m + (1−β₁)g        v ← β₂v + (1−β₂)g²
/// θ ← θ − lr·( m̂/(√v̂ + ε) + λ_wd·θ )
/// ```
///
/// with bias-corrected `m̂`, `v̂`. Weight decay acts on θ directly, never
/// through the moment estimates.
pub fn adamw_step(params: &ModelParams, grads: &Gradients, state: &OptimState) -> Result<(ModelParams, OptimState)> {
    let mut params = params.clone();
    let mut state = state.clone();
    adamw_step_in_place(&mut params, grads, &mut state)?;
    Ok((params, state))
}

/// [`adamw_step`] without the copies.
pub fn adamw_step_in_place(params: &mut ModelParams, grads: &Gradients, state: &mut OptimState) -> Result<()> {
    let g = &grads.0;
    if !params.weights.same_shape(g) || !params.weights.same_shape(&state.m) || !params.weights.same_shape(&state.v) {
        return Err(Error::shape("adamw_step", "gradient or moment layout differs from parameters"));
    }
    let cfg = &state.config;
    let step = state.step + 1;
    let lr = cfg.lr_at(step);
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);

    let clip = match cfg.max_grad_norm {
        Some(max) => {
            let norm = g.slices().iter().flat_map(|s| s.iter()).map(|x| x * x).sum::<f64>().sqrt();
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };

    let (beta1, beta2, eps, wd) = (cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    let gs = g.slices();
    let ms = state.m.slices_mut();
    let vs = state.v.slices_mut();
    let ps = params.weights.slices_mut();
    for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            let g = g * clip;
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
        }
    }
    state.step = step;
    if !params.weights.all_finite() {
        return Err(Error::NonFinite(format!("parameters after optimizer step {step}")));
    }
    Ok(())
}
