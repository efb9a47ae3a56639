//! Forward pass: embedding gather, bidirectional LSTM scans over a packed
//! batch, linear classifier, softmax. Everything the backward pass needs is
//! cached in [`ForwardTrace`].

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use super::batch::Packing;
use super::params::{Dims, LstmDirection, LstmLayer, ModelParameters, NUM_LAYERS};
use crate::{Error, Result};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-direction caches for one layer, row-aligned with the packing.
#[derive(Debug, Clone)]
pub(crate) struct DirTrace {
    /// Post-activation gates `[i f g o]`, `R x 4H`.
    pub gates: Array2<f64>,
    /// Cell state at each row, `R x H`.
    pub c: Array2<f64>,
    /// `tanh` of the cell state, `R x H`.
    pub tanh_c: Array2<f64>,
    /// Hidden state at each row, `R x H`.
    pub h: Array2<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerTrace {
    /// Layer input after dropout, `R x D_in`.
    pub input: Array2<f64>,
    pub fwd: DirTrace,
    pub bwd: DirTrace,
}

/// Everything produced by one forward pass over a packed batch.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub packing: Packing,
    pub(crate) layers: Vec<LayerTrace>,
    /// Dropout masks (scaled 0 or 1/(1-p)) per layer input; `None` in
    /// inference mode.
    pub(crate) masks: Option<Vec<Array2<f64>>>,
    /// Raw top-layer output, `R x 2H`.
    pub h_top: Array2<f64>,
    /// Classifier outputs, `R x 2`.
    pub logits: Array2<f64>,
    /// Softmax of the logits, `R x 2`.
    pub probs: Array2<f64>,
}

impl ForwardTrace {
    /// Keep/delete probabilities for the original sequence `orig`, `L x 2`.
    pub fn probabilities(&self, orig: usize) -> Array2<f64> {
        let pos = self.packing.pos_of[orig];
        let rows = self.packing.rows_of(pos);
        let mut out = Array2::zeros((rows.len(), 2));
        for (t, &r) in rows.iter().enumerate() {
            out.row_mut(t).assign(&self.probs.row(r));
        }
        out
    }

    /// Argmax labels (ties keep, i.e. label 1) for the original sequence.
    pub fn predicted_labels(&self, orig: usize) -> Vec<u8> {
        let pos = self.packing.pos_of[orig];
        self.packing
            .rows_of(pos)
            .into_iter()
            .map(|r| u8::from(self.probs[[r, 1]] >= self.probs[[r, 0]]))
            .collect()
    }
}

/// Gathers embedding rows for a token sequence (`L x D`).
pub fn embed_forward(params: &ModelParameters, indices: &[usize]) -> Result<Array2<f64>> {
    gather_embeddings(&params.embedding, indices, params.dims)
}

fn gather_embeddings(
    embedding: &Array2<f64>,
    indices: &[usize],
    dims: Dims,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((indices.len(), dims.embed));
    for (row, &tok) in indices.iter().enumerate() {
        if tok >= dims.vocab {
            return Err(Error::IndexOutOfRange {
                index: tok,
                size: dims.vocab,
            });
        }
        out.row_mut(row).assign(&embedding.row(tok));
    }
    Ok(out)
}

/// One LSTM cell step: returns `(h_t, c_t, post-activation gates)`.
///
/// Gates are `sigma/tanh` of `W_input x + W_hidden h_prev + bias` in
/// `[i f g o]` order; `c_t = f.c_prev + i.g`; `h_t = o.tanh(c_t)`.
pub fn lstm_cell_forward(
    dir: &LstmDirection,
    x: ArrayView1<f64>,
    h_prev: ArrayView1<f64>,
    c_prev: ArrayView1<f64>,
) -> Result<(Array1<f64>, Array1<f64>, Array1<f64>)> {
    let hidden = dir.w_hidden.ncols();
    let d_in = dir.w_input.ncols();
    if x.len() != d_in || h_prev.len() != hidden || c_prev.len() != hidden {
        return Err(Error::ShapeMismatch {
            op: "lstm_cell_forward",
            expected: format!("x[{d_in}], h[{hidden}], c[{hidden}]"),
            actual: format!("x[{}], h[{}], c[{}]", x.len(), h_prev.len(), c_prev.len()),
        });
    }
    let mut pre = dir.w_input.dot(&x) + dir.w_hidden.dot(&h_prev) + &dir.bias;
    let mut c = Array1::zeros(hidden);
    let mut h = Array1::zeros(hidden);
    for k in 0..hidden {
        let i = sigmoid(pre[k]);
        let f = sigmoid(pre[hidden + k]);
        let g = pre[2 * hidden + k].tanh();
        let o = sigmoid(pre[3 * hidden + k]);
        c[k] = f * c_prev[k] + i * g;
        h[k] = o * c[k].tanh();
        pre[k] = i;
        pre[hidden + k] = f;
        pre[2 * hidden + k] = g;
        pre[3 * hidden + k] = o;
    }
    Ok((h, c, pre))
}

/// Reference bidirectional layer: scans forward and backward from zero
/// state and concatenates the hidden states per step (`L x 2H`). If a
/// dropout mask is given it multiplies the inputs first.
pub fn bilstm_layer_forward(
    layer: &LstmLayer,
    inputs: &Array2<f64>,
    dropout_mask: Option<&Array2<f64>>,
) -> Result<Array2<f64>> {
    let inputs = match dropout_mask {
        Some(mask) => inputs * mask,
        None => inputs.clone(),
    };
    let len = inputs.nrows();
    let hidden = layer.forward.w_hidden.ncols();
    let mut out = Array2::zeros((len, 2 * hidden));

    for (dir, reverse) in [(&layer.forward, false), (&layer.backward, true)] {
        let mut h = Array1::zeros(hidden);
        let mut c = Array1::zeros(hidden);
        let steps: Vec<usize> = if reverse {
            (0..len).rev().collect()
        } else {
            (0..len).collect()
        };
        for t in steps {
            let (h_new, c_new, _) = lstm_cell_forward(dir, inputs.row(t), h.view(), c.view())?;
            h = h_new;
            c = c_new;
            let col0 = if reverse { hidden } else { 0 };
            out.slice_mut(s![t, col0..col0 + hidden]).assign(&h);
        }
    }
    Ok(out)
}

/// Vectorized scan of one direction over the packed batch.
fn scan_direction(
    dir: &LstmDirection,
    input: &Array2<f64>,
    packing: &Packing,
    reverse: bool,
    hidden: usize,
) -> DirTrace {
    let rows = packing.rows();
    let batch = packing.batch_size();

    // Input transform for every row at once, bias folded in.
    let mut gates = input.dot(&dir.w_input.t());
    gates += &dir.bias;

    let mut c_cache = Array2::zeros((rows, hidden));
    let mut tanh_cache = Array2::zeros((rows, hidden));
    let mut h_cache = Array2::zeros((rows, hidden));

    // Running per-sequence state; rows beyond the active prefix stay zero
    // until (re)activated, which is exactly the zero initial state.
    let mut h_state = Array2::<f64>::zeros((batch, hidden));
    let mut c_state = Array2::<f64>::zeros((batch, hidden));

    let max_len = packing.max_len();
    let steps: Vec<usize> = if reverse {
        (0..max_len).rev().collect()
    } else {
        (0..max_len).collect()
    };

    for t in steps {
        let m = packing.step_counts[t];
        let r0 = packing.offsets[t];
        let g_rec = h_state.slice(s![0..m, ..]).dot(&dir.w_hidden.t());

        let gates_flat = gates.as_slice_mut().expect("standard layout");
        let c_flat = c_cache.as_slice_mut().expect("standard layout");
        let tc_flat = tanh_cache.as_slice_mut().expect("standard layout");
        let h_flat = h_cache.as_slice_mut().expect("standard layout");
        let hs_flat = h_state.as_slice_mut().expect("standard layout");
        let cs_flat = c_state.as_slice_mut().expect("standard layout");
        let grec_flat = g_rec.as_slice().expect("standard layout");

        for j in 0..m {
            let gb = (r0 + j) * 4 * hidden;
            let cb = (r0 + j) * hidden;
            let sb = j * hidden;
            let rb = j * 4 * hidden;
            for k in 0..hidden {
                let i = sigmoid(gates_flat[gb + k] + grec_flat[rb + k]);
                let f = sigmoid(gates_flat[gb + hidden + k] + grec_flat[rb + hidden + k]);
                let g = (gates_flat[gb + 2 * hidden + k] + grec_flat[rb + 2 * hidden + k]).tanh();
                let o = sigmoid(gates_flat[gb + 3 * hidden + k] + grec_flat[rb + 3 * hidden + k]);
                let c_new = f * cs_flat[sb + k] + i * g;
                let tc = c_new.tanh();
                let h_new = o * tc;
                gates_flat[gb + k] = i;
                gates_flat[gb + hidden + k] = f;
                gates_flat[gb + 2 * hidden + k] = g;
                gates_flat[gb + 3 * hidden + k] = o;
                c_flat[cb + k] = c_new;
                tc_flat[cb + k] = tc;
                h_flat[cb + k] = h_new;
                cs_flat[sb + k] = c_new;
                hs_flat[sb + k] = h_new;
            }
        }
    }

    DirTrace {
        gates,
        c: c_cache,
        tanh_c: tanh_cache,
        h: h_cache,
    }
}

/// Samples inverted-dropout masks (0 or `1/(1-p)`) for the three layer
/// inputs of a packed batch.
pub fn sample_dropout_masks(
    packing: &Packing,
    dims: Dims,
    p: f64,
    rng: &mut impl Rng,
) -> Vec<Array2<f64>> {
    let rows = packing.rows();
    let scale = 1.0 / (1.0 - p);
    (0..NUM_LAYERS)
        .map(|l| {
            let d_in = ModelParameters::layer_input_dim(dims, l);
            let mut mask = Array2::zeros((rows, d_in));
            for v in mask.iter_mut() {
                *v = if rng.gen::<f64>() < p { 0.0 } else { scale };
            }
            mask
        })
        .collect()
}

/// Forward pass over a packed batch with explicit (possibly no) dropout
/// masks. This is the single numeric path used by training, inference, and
/// gradient checking.
pub(crate) fn forward_packed(
    params: &ModelParameters,
    packing: Packing,
    masks: Option<Vec<Array2<f64>>>,
) -> Result<ForwardTrace> {
    let dims = params.dims;
    let hidden = dims.hidden;

    let mut carry = gather_embeddings(&params.embedding, &packing.tokens, dims)?;
    let mut layers = Vec::with_capacity(NUM_LAYERS);

    for l in 0..NUM_LAYERS {
        let mut input = carry;
        if let Some(masks) = &masks {
            input *= &masks[l];
        }
        let fwd = scan_direction(&params.layers[l].forward, &input, &packing, false, hidden);
        let bwd = scan_direction(&params.layers[l].backward, &input, &packing, true, hidden);

        let mut output = Array2::zeros((packing.rows(), 2 * hidden));
        output.slice_mut(s![.., 0..hidden]).assign(&fwd.h);
        output.slice_mut(s![.., hidden..]).assign(&bwd.h);

        layers.push(LayerTrace { input, fwd, bwd });
        carry = output;
    }

    let h_top = carry;
    let mut logits = h_top.dot(&params.classifier_weight.t());
    logits += &params.classifier_bias;

    let mut probs = Array2::zeros(logits.raw_dim());
    for (lrow, mut prow) in logits.outer_iter().zip(probs.outer_iter_mut()) {
        let m = lrow[0].max(lrow[1]);
        let e0 = (lrow[0] - m).exp();
        let e1 = (lrow[1] - m).exp();
        let z = e0 + e1;
        prow[0] = e0 / z;
        prow[1] = e1 / z;
    }

    Ok(ForwardTrace {
        packing,
        layers,
        masks,
        h_top,
        logits,
        probs,
    })
}

/// Forward pass for a batch of sequences. `dropout` enables training mode:
/// masks are sampled from `rng` and recorded in the trace.
pub fn forward_batch(
    params: &ModelParameters,
    seqs: &[&[usize]],
    dropout: Option<(f64, &mut dyn rand::RngCore)>,
) -> Result<ForwardTrace> {
    if seqs.is_empty() || seqs.iter().any(|s| s.is_empty()) {
        return Err(Error::EmptyInput("forward_batch sequences"));
    }
    let packing = Packing::new(seqs);
    let masks = match dropout {
        Some((p, _)) if p == 0.0 => None,
        Some((p, rng)) => Some(sample_dropout_masks(&packing, params.dims, p, rng)),
        None => None,
    };
    forward_packed(params, packing, masks)
}

/// Full-model forward for one sequence. Inference (`dropout: None`) is
/// deterministic; training mode samples dropout masks from `rng`.
pub fn model_forward(
    params: &ModelParameters,
    indices: &[usize],
    dropout: Option<(f64, &mut dyn rand::RngCore)>,
) -> Result<ForwardTrace> {
    forward_batch(params, &[indices], dropout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_dims() -> Dims {
        Dims {
            vocab: 7,
            embed: 3,
            hidden: 2,
        }
    }

    fn random_params(dims: Dims, seed: u64) -> ModelParameters {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParameters::init(dims, &mut rng)
    }

    #[test]
    fn embed_forward_gathers_rows() {
        let mut p = ModelParameters::zeros(Dims {
            vocab: 3,
            embed: 2,
            hidden: 2,
        });
        p.embedding = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let out = embed_forward(&p, &[2, 0]).unwrap();
        assert_eq!(out, array![[5.0, 6.0], [1.0, 2.0]]);
        assert!(embed_forward(&p, &[3]).is_err());
    }

    #[test]
    fn embed_forward_pad_row_is_zero() {
        let p = random_params(tiny_dims(), 3);
        let out = embed_forward(&p, &[0]).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_cell_is_a_fixed_point() {
        let dims = tiny_dims();
        let p = ModelParameters::zeros(dims);
        let x = Array1::zeros(dims.embed);
        let h = Array1::zeros(dims.hidden);
        let c = Array1::zeros(dims.hidden);
        let (h_new, c_new, gates) =
            lstm_cell_forward(&p.layers[0].forward, x.view(), h.view(), c.view()).unwrap();
        assert!(h_new.iter().all(|&v| v == 0.0));
        assert!(c_new.iter().all(|&v| v == 0.0));
        // sigmoid(0) = 0.5 for i/f/o, tanh(0) = 0 for g
        assert!((gates[0] - 0.5).abs() < 1e-15);
        assert!((gates[2 * dims.hidden] - 0.0).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_cell_value() {
        // H=1, D_in=1: only the cell-gate input weight is 10; x=1, zero state.
        // i=f=o=0.5, g=tanh(10), c=0.5*tanh(10), h=0.5*tanh(c).
        let mut dir = LstmDirection {
            w_input: Array2::zeros((4, 1)),
            w_hidden: Array2::zeros((4, 1)),
            bias: Array1::zeros(4),
        };
        dir.w_input[[2, 0]] = 10.0;
        let x = array![1.0];
        let zero = array![0.0];
        let (h, c, _) = lstm_cell_forward(&dir, x.view(), zero.view(), zero.view()).unwrap();
        let g = 10.0f64.tanh();
        assert!((c[0] - 0.5 * g).abs() < 1e-12);
        assert!((h[0] - 0.5 * (0.5 * g).tanh()).abs() < 1e-12);
        assert!((h[0] - 0.2311).abs() < 1e-4);
    }

    #[test]
    fn cell_rejects_shape_mismatch() {
        let p = ModelParameters::zeros(tiny_dims());
        let x = Array1::zeros(5); // wrong input width
        let h = Array1::zeros(2);
        let c = Array1::zeros(2);
        assert!(matches!(
            lstm_cell_forward(&p.layers[0].forward, x.view(), h.view(), c.view()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn cell_state_growth_is_bounded() {
        let p = random_params(tiny_dims(), 9);
        let dir = &p.layers[0].forward;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x = Array1::from_shape_fn(3, |_| rng.gen_range(-3.0..3.0));
            let h = Array1::from_shape_fn(2, |_| rng.gen_range(-1.0..1.0));
            let c = Array1::from_shape_fn(2, |_| rng.gen_range(-4.0..4.0));
            let (_, c_new, _) = lstm_cell_forward(dir, x.view(), h.view(), c.view()).unwrap();
            for k in 0..2 {
                assert!(c_new[k].abs() <= c[k].abs() + 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn zero_parameters_give_zero_layer_output() {
        let dims = tiny_dims();
        let p = ModelParameters::zeros(dims);
        let inputs = Array2::from_elem((4, dims.embed), 0.7);
        let out = bilstm_layer_forward(&p.layers[0], &inputs, None).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn length_one_layer_concatenates_two_single_cells() {
        let dims = tiny_dims();
        let p = random_params(dims, 11);
        let inputs = Array2::from_shape_fn((1, dims.embed), |(_, j)| 0.1 * (j as f64 + 1.0));
        let out = bilstm_layer_forward(&p.layers[0], &inputs, None).unwrap();
        let zero = Array1::zeros(dims.hidden);
        let (hf, _, _) = lstm_cell_forward(
            &p.layers[0].forward,
            inputs.row(0),
            zero.view(),
            zero.view(),
        )
        .unwrap();
        let (hb, _, _) = lstm_cell_forward(
            &p.layers[0].backward,
            inputs.row(0),
            zero.view(),
            zero.view(),
        )
        .unwrap();
        assert_eq!(out.slice(s![0, 0..dims.hidden]), hf);
        assert_eq!(out.slice(s![0, dims.hidden..]), hb);
    }

    #[test]
    fn reversing_inputs_and_swapping_directions_mirrors_output() {
        let dims = tiny_dims();
        let p = random_params(dims, 21);
        let layer = &p.layers[0];
        let inputs = Array2::from_shape_fn((5, dims.embed), |(i, j)| {
            ((i * 3 + j) as f64 * 0.37).sin()
        });
        let out = bilstm_layer_forward(layer, &inputs, None).unwrap();

        let swapped = LstmLayer {
            forward: layer.backward.clone(),
            backward: layer.forward.clone(),
        };
        let reversed_inputs = {
            let mut r = inputs.clone();
            r.invert_axis(Axis(0));
            r
        };
        let out_rev = bilstm_layer_forward(&swapped, &reversed_inputs, None).unwrap();

        // out_rev, rows reversed and halves swapped, equals out.
        let h = dims.hidden;
        for t in 0..5 {
            let rt = 4 - t;
            for k in 0..h {
                assert!((out[[t, k]] - out_rev[[rt, h + k]]).abs() < 1e-12);
                assert!((out[[t, h + k]] - out_rev[[rt, k]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn packed_forward_matches_reference_layers() {
        let dims = tiny_dims();
        let p = random_params(dims, 33);
        let seqs: Vec<Vec<usize>> = vec![vec![1, 2, 3, 4, 5], vec![6, 2], vec![3, 1, 4]];
        let refs: Vec<&[usize]> = seqs.iter().map(|s| s.as_slice()).collect();
        let trace = forward_batch(&p, &refs, None).unwrap();

        for (orig, seq) in seqs.iter().enumerate() {
            // Reference path: naive per-sequence layers.
            let mut x = embed_forward(&p, seq).unwrap();
            for l in 0..NUM_LAYERS {
                x = bilstm_layer_forward(&p.layers[l], &x, None).unwrap();
            }
            let mut logits = x.dot(&p.classifier_weight.t());
            logits += &p.classifier_bias;

            let pos = trace.packing.pos_of[orig];
            for (t, &r) in trace.packing.rows_of(pos).iter().enumerate() {
                for c in 0..2 {
                    assert!(
                        (trace.logits[[r, c]] - logits[[t, c]]).abs() < 1e-12,
                        "seq {orig} step {t} class {c}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_model_predicts_half_half() {
        let p = ModelParameters::zeros(tiny_dims());
        let trace = model_forward(&p, &[1, 2, 3], None).unwrap();
        for row in trace.probs.outer_iter() {
            assert!((row[0] - 0.5).abs() < 1e-15);
            assert!((row[1] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let p = random_params(tiny_dims(), 55);
        let trace = model_forward(&p, &[1, 2, 3, 4, 5, 6], None).unwrap();
        for row in trace.probs.outer_iter() {
            assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn inference_is_deterministic_across_batch_composition() {
        let dims = tiny_dims();
        let p = random_params(dims, 77);
        let alone = model_forward(&p, &[1, 2, 3], None).unwrap();
        let batched = forward_batch(&p, &[&[4, 5], &[1, 2, 3], &[6]], None).unwrap();
        let probs_alone = alone.probabilities(0);
        let probs_batched = batched.probabilities(1);
        assert_eq!(probs_alone, probs_batched);
    }

    #[test]
    fn dropout_masks_scale_inputs() {
        let dims = tiny_dims();
        let p = random_params(dims, 91);
        let seq = [1usize, 2, 3, 4];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trace = model_forward(&p, &seq, Some((0.5, &mut rng))).unwrap();
        let masks = trace.masks.as_ref().unwrap();
        assert_eq!(masks.len(), 3);
        for m in masks {
            assert!(m.iter().all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-15));
        }
        // Same seed reproduces the same trace.
        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        let trace2 = model_forward(&p, &seq, Some((0.5, &mut rng2))).unwrap();
        assert_eq!(trace.logits, trace2.logits);
    }
}
