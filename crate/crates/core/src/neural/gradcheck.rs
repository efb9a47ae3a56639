//! Central finite-difference verification of the analytic gradients.
//!
//! This is the decisive correctness oracle for the backward pass: every
//! scalar parameter is perturbed both ways and the resulting loss slope is
//! compared against the gradient from [`super::backward`]. Dropout, when
//! enabled, uses a frozen mask so both loss evaluations and the analytic
//! gradient see the same network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backward::backward;
use super::batch::Packing;
use super::forward::{forward_packed, sample_dropout_masks};
use super::loss::softmax_cross_entropy;
use super::params::ModelParameters;
use crate::Result;

/// Worst observed deviation between analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_block: String,
    pub parameters_checked: usize,
}

/// Relative error with a small-magnitude floor: true relative error for
/// gradients above 1e-6, absolute-ish below it (where finite differences
/// are dominated by roundoff).
fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Checks the full-model gradient on one batch against central finite
/// differences with the given `step`. `dropout` freezes masks sampled from
/// the given seed.
pub fn finite_difference_check(
    params: &ModelParameters,
    seqs: &[Vec<usize>],
    labels: &[Vec<u8>],
    dropout: Option<(f64, u64)>,
    step: f64,
) -> Result<GradCheckReport> {
    let refs: Vec<&[usize]> = seqs.iter().map(|s| s.as_slice()).collect();
    let packing = Packing::new(&refs);
    let masks = dropout.map(|(p, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_dropout_masks(&packing, params.dims, p, &mut rng)
    });
    let labels_packed = packing.pack_values(labels, 0u8);
    let mask = vec![true; labels_packed.len()];

    let trace = forward_packed(params, packing.clone(), masks.clone())?;
    let grads = backward(params, &trace, &labels_packed, &mask)?;

    let loss_at = |p: &ModelParameters| -> Result<f64> {
        let t = forward_packed(p, packing.clone(), masks.clone())?;
        Ok(softmax_cross_entropy(&t.logits, &labels_packed, &mask)?.0)
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_block: String::new(),
        parameters_checked: 0,
    };
    for b in 0..work.block_count() {
        let name = work.block_name(b);
        for k in 0..work.block(b).len() {
            let orig = work.block(b)[k];
            work.block_mut(b)[k] = orig + step;
            let plus = loss_at(&work)?;
            work.block_mut(b)[k] = orig - step;
            let minus = loss_at(&work)?;
            work.block_mut(b)[k] = orig;

            let fd = (plus - minus) / (2.0 * step);
            let err = rel_error(fd, grads.block(b)[k]);
            report.parameters_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_block = format!("{name}[{k}]");
            }
        }
    }
    Ok(report)
}
