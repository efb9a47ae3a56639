use ndarray::{Array1, Array2};
use rand::Rng;

/// Gate layout along the `4H` axis of every LSTM weight block, recorded in
/// checkpoints so saved models stay readable.
pub const GATE_ORDER: &str = "ifgo"; // input, forget, cell, output

/// Model dimensions: vocabulary, embedding width, hidden width per direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
}

/// One direction of one BiLSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirection {
    /// `4H x D_in`, gate order [`GATE_ORDER`].
    pub w_input: Array2<f64>,
    /// `4H x H`.
    pub w_hidden: Array2<f64>,
    /// `4H`.
    pub bias: Array1<f64>,
}

/// A bidirectional layer: independent forward and backward directions.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub forward: LstmDirection,
    pub backward: LstmDirection,
}

/// The full trainable state: embedding, three BiLSTM layers, classifier.
///
/// Layer 1 consumes embeddings (`D_in = D`); layers 2 and 3 consume the
/// concatenated bidirectional output of the layer below (`D_in = 2H`). The
/// classifier maps `2H` to the two keep/delete classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub dims: Dims,
    /// `V x D`; row 0 is the padding row.
    pub embedding: Array2<f64>,
    pub layers: Vec<LstmLayer>,
    /// `2 x 2H`.
    pub classifier_weight: Array2<f64>,
    /// `2`.
    pub classifier_bias: Array1<f64>,
}

pub const NUM_LAYERS: usize = 3;

impl LstmDirection {
    fn zeros(d_in: usize, hidden: usize) -> Self {
        LstmDirection {
            w_input: Array2::zeros((4 * hidden, d_in)),
            w_hidden: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    fn init(&mut self, rng: &mut impl Rng, d_in: usize, hidden: usize) {
        let k_in = 1.0 / (d_in as f64).sqrt();
        for w in self.w_input.iter_mut() {
            *w = rng.gen_range(-k_in..k_in);
        }
        let k_h = 1.0 / (hidden as f64).sqrt();
        for w in self.w_hidden.iter_mut() {
            *w = rng.gen_range(-k_h..k_h);
        }
        // Forget-gate bias starts at 1 so early cell state survives.
        self.bias.fill(0.0);
        self.bias
            .slice_mut(ndarray::s![hidden..2 * hidden])
            .fill(1.0);
    }
}

impl ModelParameters {
    /// Input width of layer `l` (0-based).
    pub fn layer_input_dim(dims: Dims, layer: usize) -> usize {
        if layer == 0 {
            dims.embed
        } else {
            2 * dims.hidden
        }
    }

    /// All-zero parameters with the given dimensions (also the shape of a
    /// gradient or an Adam moment).
    pub fn zeros(dims: Dims) -> Self {
        let layers = (0..NUM_LAYERS)
            .map(|l| {
                let d_in = Self::layer_input_dim(dims, l);
                LstmLayer {
                    forward: LstmDirection::zeros(d_in, dims.hidden),
                    backward: LstmDirection::zeros(d_in, dims.hidden),
                }
            })
            .collect();
        ModelParameters {
            dims,
            embedding: Array2::zeros((dims.vocab, dims.embed)),
            layers,
            classifier_weight: Array2::zeros((2, 2 * dims.hidden)),
            classifier_bias: Array1::zeros(2),
        }
    }

    /// Random initialization: uniform `(-k, k)` with `k = 1/sqrt(fan_in)`
    /// per weight matrix, zero biases except forget gates at 1. The padding
    /// embedding row stays zero.
    pub fn init(dims: Dims, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(dims);
        let k_e = 1.0 / (dims.embed as f64).sqrt();
        for (row, mut emb) in p.embedding.outer_iter_mut().enumerate() {
            if row == crate::corpus::PAD_INDEX {
                continue;
            }
            for w in emb.iter_mut() {
                *w = rng.gen_range(-k_e..k_e);
            }
        }
        for l in 0..NUM_LAYERS {
            let d_in = Self::layer_input_dim(dims, l);
            p.layers[l].forward.init(rng, d_in, dims.hidden);
            p.layers[l].backward.init(rng, d_in, dims.hidden);
        }
        let k_c = 1.0 / (2.0 * dims.hidden as f64).sqrt();
        for w in p.classifier_weight.iter_mut() {
            *w = rng.gen_range(-k_c..k_c);
        }
        p
    }

    /// Number of addressable parameter blocks (see [`Self::block`]).
    pub fn block_count(&self) -> usize {
        2 + self.layers.len() * 6 + 1
    }

    /// Stable name of block `i`, e.g. `layer2.backward.w_hidden`.
    pub fn block_name(&self, i: usize) -> String {
        if i == 0 {
            return "embedding".into();
        }
        let i = i - 1;
        let per_layer = 6;
        if i < self.layers.len() * per_layer {
            let layer = i / per_layer;
            let slot = i % per_layer;
            let (dir, which) = match slot {
                0 => ("forward", "w_input"),
                1 => ("forward", "w_hidden"),
                2 => ("forward", "bias"),
                3 => ("backward", "w_input"),
                4 => ("backward", "w_hidden"),
                _ => ("backward", "bias"),
            };
            return format!("layer{}.{dir}.{which}", layer + 1);
        }
        match i - self.layers.len() * per_layer {
            0 => "classifier.weight".into(),
            _ => "classifier.bias".into(),
        }
    }

    /// Flat view of block `i`, in the fixed serialization order:
    /// embedding, then per layer (forward w_input, w_hidden, bias, backward
    /// w_input, w_hidden, bias), then classifier weight and bias.
    pub fn block(&self, i: usize) -> &[f64] {
        self.block_ref(i).expect("block index in range")
    }

    /// Mutable flat view of block `i`.
    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        self.block_ref_mut(i).expect("block index in range")
    }

    fn block_ref(&self, i: usize) -> Option<&[f64]> {
        if i == 0 {
            return self.embedding.as_slice();
        }
        let i = i - 1;
        if i < self.layers.len() * 6 {
            let dir = match i % 6 {
                0..=2 => &self.layers[i / 6].forward,
                _ => &self.layers[i / 6].backward,
            };
            return match i % 3 {
                0 => dir.w_input.as_slice(),
                1 => dir.w_hidden.as_slice(),
                _ => dir.bias.as_slice(),
            };
        }
        match i - self.layers.len() * 6 {
            0 => self.classifier_weight.as_slice(),
            _ => self.classifier_bias.as_slice(),
        }
    }

    fn block_ref_mut(&mut self, i: usize) -> Option<&mut [f64]> {
        if i == 0 {
            return self.embedding.as_slice_mut();
        }
        let i = i - 1;
        if i < self.layers.len() * 6 {
            let dir = match i % 6 {
                0..=2 => &mut self.layers[i / 6].forward,
                _ => &mut self.layers[i / 6].backward,
            };
            return match i % 3 {
                0 => dir.w_input.as_slice_mut(),
                1 => dir.w_hidden.as_slice_mut(),
                _ => dir.bias.as_slice_mut(),
            };
        }
        match i - self.layers.len() * 6 {
            0 => self.classifier_weight.as_slice_mut(),
            _ => self.classifier_bias.as_slice_mut(),
        }
    }

    /// Total scalar parameter count.
    pub fn parameter_count(&self) -> usize {
        (0..self.block_count()).map(|i| self.block(i).len()).sum()
    }
}
