//! Adam with bias correction, and the exponential learning-rate schedule.

use super::params::{Dims, ModelParameters};
use super::train::TrainingConfig;
use crate::{Error, Result};

/// First/second moment estimates, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: ModelParameters,
    pub second_moment: ModelParameters,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(dims: Dims) -> Self {
        AdamState {
            first_moment: ModelParameters::zeros(dims),
            second_moment: ModelParameters::zeros(dims),
            step_count: 0,
        }
    }
}

/// One Adam update:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
/// `p <- p - lr * m_hat / (sqrt(v_hat) + eps)` with bias-corrected moments.
///
/// Fails (before touching anything) on a non-finite gradient, naming the
/// offending parameter block.
pub fn adam_step(
    params: &mut ModelParameters,
    grads: &ModelParameters,
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainingConfig,
) -> Result<()> {
    debug_assert!(lr > 0.0);
    for i in 0..grads.block_count() {
        if grads.block(i).iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                block: grads.block_name(i),
            });
        }
    }
    state.step_count += 1;
    let t = state.step_count as f64;
    let (b1, b2, eps) = (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let bc1 = 1.0 - b1.powf(t);
    let bc2 = 1.0 - b2.powf(t);

    for i in 0..params.block_count() {
        let g = grads.block(i);
        let m = state.first_moment.block_mut(i);
        for (m, &g) in m.iter_mut().zip(g) {
            *m = b1 * *m + (1.0 - b1) * g;
        }
        let v = state.second_moment.block_mut(i);
        for (v, &g) in v.iter_mut().zip(g) {
            *v = b2 * *v + (1.0 - b2) * g * g;
        }
        let (m, v) = (state.first_moment.block(i), state.second_moment.block(i));
        for ((p, &m), &v) in params.block_mut(i).iter_mut().zip(m).zip(v) {
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Exponential decay hitting both endpoints exactly:
/// `lr(e) = lr_start * (lr_end/lr_start)^(e/(epochs-1))`.
pub fn lr_schedule(cfg: &TrainingConfig, epoch: usize) -> f64 {
    debug_assert!(epoch < cfg.epochs);
    if cfg.epochs == 1 || epoch == 0 {
        return cfg.lr_start;
    }
    if epoch == cfg.epochs - 1 {
        return cfg.lr_end;
    }
    let frac = epoch as f64 / (cfg.epochs - 1) as f64;
    cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(frac)
}
