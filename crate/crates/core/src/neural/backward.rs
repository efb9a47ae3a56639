//! Exact backpropagation through time over the packed forward trace.
//!
//! Gradients flow classifier -> layer 3 -> layer 2 -> layer 1 -> embedding.
//! Within a layer each direction is unrolled in reverse scan order; the
//! per-step recurrent work is one small GEMM (the carry through `W_hidden`)
//! while all weight gradients are accumulated afterwards in three large
//! GEMMs per direction.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2};

use super::batch::Packing;
use super::forward::{DirTrace, ForwardTrace};
use super::loss::softmax_cross_entropy;
use super::params::{LstmDirection, ModelParameters, NUM_LAYERS};
use crate::Result;

/// Gradient of the masked mean cross-entropy with respect to every
/// parameter, in a [`ModelParameters`]-shaped container. Embedding rows of
/// tokens absent from the batch stay exactly zero.
pub fn backward(
    params: &ModelParameters,
    trace: &ForwardTrace,
    labels: &[u8],
    mask: &[bool],
) -> Result<ModelParameters> {
    let (_, dlogits) = softmax_cross_entropy(&trace.logits, labels, mask)?;
    backward_from_dlogits(params, trace, &dlogits)
}

pub(crate) fn backward_from_dlogits(
    params: &ModelParameters,
    trace: &ForwardTrace,
    dlogits: &Array2<f64>,
) -> Result<ModelParameters> {
    let dims = params.dims;
    let hidden = dims.hidden;
    let mut grads = ModelParameters::zeros(dims);

    // Classifier: logits = h_top . W^T + b.
    general_mat_mul(
        1.0,
        &dlogits.t(),
        &trace.h_top,
        0.0,
        &mut grads.classifier_weight,
    );
    grads.classifier_bias.assign(&dlogits.sum_axis(ndarray::Axis(0)));
    let mut d_out = dlogits.dot(&params.classifier_weight); // R x 2H

    for l in (0..NUM_LAYERS).rev() {
        let layer = &trace.layers[l];
        let d_in = ModelParameters::layer_input_dim(dims, l);
        let mut d_input = Array2::zeros((trace.packing.rows(), d_in));

        for (dir, dir_trace, reverse, col0) in [
            (&params.layers[l].forward, &layer.fwd, false, 0),
            (&params.layers[l].backward, &layer.bwd, true, hidden),
        ] {
            let d_h = d_out.slice(s![.., col0..col0 + hidden]);
            let d_gates = scan_backward(
                dir,
                dir_trace,
                &trace.packing,
                reverse,
                &d_h.to_owned(),
                hidden,
            );

            let grad_dir = match col0 {
                0 => &mut grads.layers[l].forward,
                _ => &mut grads.layers[l].backward,
            };
            // dW_input += d_gates^T . input ; dW_hidden += d_gates^T . h_prev
            general_mat_mul(1.0, &d_gates.t(), &layer.input, 1.0, &mut grad_dir.w_input);
            let h_prev = shifted_h(dir_trace, &trace.packing, reverse, hidden);
            general_mat_mul(1.0, &d_gates.t(), &h_prev, 1.0, &mut grad_dir.w_hidden);
            grad_dir.bias += &d_gates.sum_axis(ndarray::Axis(0));
            // dX += d_gates . W_input
            general_mat_mul(1.0, &d_gates, &dir.w_input, 1.0, &mut d_input);
        }

        if let Some(masks) = &trace.masks {
            d_input *= &masks[l];
        }
        if l == 0 {
            for (row, &tok) in trace.packing.tokens.iter().enumerate() {
                let mut g = grads.embedding.row_mut(tok);
                g += &d_input.row(row);
            }
        } else {
            d_out = d_input;
        }
    }
    Ok(grads)
}

/// Previous hidden state for every row: the same sequence's `h` one step
/// earlier in the direction's scan order, or zero at the scan start.
fn shifted_h(
    dir_trace: &DirTrace,
    packing: &Packing,
    reverse: bool,
    hidden: usize,
) -> Array2<f64> {
    let mut h_prev = Array2::zeros((packing.rows(), hidden));
    let max_len = packing.max_len();
    for t in 0..max_len {
        for j in 0..packing.step_counts[t] {
            let row = packing.row(t, j);
            let src = if reverse {
                // Backward direction scans from the sequence end.
                (t + 1 < max_len && j < packing.step_counts[t + 1])
                    .then(|| packing.row(t + 1, j))
            } else {
                (t > 0).then(|| packing.row(t - 1, j))
            };
            if let Some(src) = src {
                h_prev.row_mut(row).assign(&dir_trace.h.row(src));
            }
        }
    }
    h_prev
}

/// Reverse scan of one direction: returns pre-activation gate gradients
/// (`R x 4H`) given the gradient on the direction's hidden outputs.
fn scan_backward(
    dir: &LstmDirection,
    dir_trace: &DirTrace,
    packing: &Packing,
    reverse: bool,
    d_h_out: &Array2<f64>,
    hidden: usize,
) -> Array2<f64> {
    let rows = packing.rows();
    let batch = packing.batch_size();
    let max_len = packing.max_len();

    let mut d_gates = Array2::<f64>::zeros((rows, 4 * hidden));
    // Carries start (and stay, for rows not yet active) at zero, which is
    // exactly the no-future-gradient condition at each sequence's scan end.
    let mut carry_dh = Array2::<f64>::zeros((batch, hidden));
    let mut carry_dc = Array2::<f64>::zeros((batch, hidden));

    // BPTT visits steps in the opposite order of the direction's scan.
    let steps: Vec<usize> = if reverse {
        (0..max_len).collect()
    } else {
        (0..max_len).rev().collect()
    };

    let gates = dir_trace.gates.as_slice().expect("standard layout");
    let c_cache = dir_trace.c.as_slice().expect("standard layout");
    let tanh_c = dir_trace.tanh_c.as_slice().expect("standard layout");
    let d_h_flat = d_h_out.as_slice().expect("standard layout");

    for t in steps {
        let m = packing.step_counts[t];
        let r0 = packing.offsets[t];

        {
            let dg_flat = d_gates.as_slice_mut().expect("standard layout");
            let cdh = carry_dh.as_slice_mut().expect("standard layout");
            let cdc = carry_dc.as_slice_mut().expect("standard layout");

            for j in 0..m {
                let row = r0 + j;
                let gb = row * 4 * hidden;
                let cb = row * hidden;
                let sb = j * hidden;
                // Cell state entering this step, from the previous step in
                // scan order (zero at the scan start of this sequence).
                let prev_cb = if reverse {
                    (t + 1 < max_len && j < packing.step_counts[t + 1])
                        .then(|| packing.row(t + 1, j) * hidden)
                } else {
                    (t > 0).then(|| packing.row(t - 1, j) * hidden)
                };
                for k in 0..hidden {
                    let i = gates[gb + k];
                    let f = gates[gb + hidden + k];
                    let g = gates[gb + 2 * hidden + k];
                    let o = gates[gb + 3 * hidden + k];
                    let tc = tanh_c[cb + k];
                    let c_prev = prev_cb.map_or(0.0, |p| c_cache[p + k]);

                    let dh = d_h_flat[cb + k] + cdh[sb + k];
                    let dc = dh * o * (1.0 - tc * tc) + cdc[sb + k];

                    dg_flat[gb + k] = dc * g * i * (1.0 - i);
                    dg_flat[gb + hidden + k] = dc * c_prev * f * (1.0 - f);
                    dg_flat[gb + 2 * hidden + k] = dc * i * (1.0 - g * g);
                    dg_flat[gb + 3 * hidden + k] = dh * tc * o * (1.0 - o);

                    cdc[sb + k] = dc * f;
                }
            }
        }

        // Hidden-state carry to the previous scan step: d_gates . W_hidden.
        let dg_step = d_gates.slice(s![r0..r0 + m, ..]);
        let mut carry_slice = carry_dh.slice_mut(s![0..m, ..]);
        general_mat_mul(1.0, &dg_step, &dir.w_hidden, 0.0, &mut carry_slice);
    }
    d_gates
}
