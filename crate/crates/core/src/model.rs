//! The six-layer acoustic network.
//!
//! Layers 1–3 are fully connected with clipped ReLU, layer 4 is a unidirectional
//! LSTM, layer 5 is fully connected with clipped ReLU and layer 6 is a fully
//! connected projection onto the label set followed by a row log-softmax.
//!
//! The LSTM packs its four gates along the `4H` axis in the order `(i, g, f, o)`
//! and consumes the concatenated row `(h_prev, x_t)`, so its weight matrix is
//! `2H × 4H`. Dropout (inverted scaling) is applied to the outputs of layers
//! 1, 2, 3 and 5 in training mode only; the recurrent state is never dropped.

use thiserror::Error;

use crate::numerics::{self, dot, log_softmax_rows, matmul_tn_acc, sigmoid, Matrix, Rng};

pub const N_LAYERS: usize = 6;
pub const LSTM_LAYER: usize = 4;
pub const FORGET_BIAS_INIT: f64 = 1.0;
/// Width of the full-size network; toy runs override it.
pub const DEFAULT_HIDDEN: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("forward cache does not belong to these parameters")]
    StaleCache,
    #[error("invalid model dims: {0}")]
    InvalidDims(String),
}

/// Network shape plus the ReLU clipping cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelDims {
    pub input_width: usize,
    pub hidden: usize,
    /// Alphabet size plus one; the blank is the last label.
    pub n_labels: usize,
    pub relu_cap: f64,
}

impl ModelDims {
    pub fn new(input_width: usize, hidden: usize, n_labels: usize) -> Self {
        ModelDims {
            input_width,
            hidden,
            n_labels,
            relu_cap: numerics::DEFAULT_RELU_CAP,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_width == 0 || self.hidden == 0 {
            return Err(ModelError::InvalidDims("widths must be positive".into()));
        }
        if self.n_labels < 2 {
            return Err(ModelError::InvalidDims(
                "need at least one label plus blank".into(),
            ));
        }
        if self.relu_cap.is_nan() || self.relu_cap <= 0.0 {
            return Err(ModelError::InvalidDims("relu cap must be positive".into()));
        }
        Ok(())
    }

    pub fn blank(&self) -> usize {
        self.n_labels - 1
    }

    /// `(rows, cols)` of the weight matrix of layer `layer` (1-based).
    pub fn weight_shape(&self, layer: usize) -> (usize, usize) {
        let h = self.hidden;
        match layer {
            1 => (self.input_width, h),
            2 | 3 | 5 => (h, h),
            4 => (2 * h, 4 * h),
            6 => (h, self.n_labels),
            _ => panic!("layer index {layer} out of range 1..=6"),
        }
    }

    /// Weights plus biases of one layer.
    pub fn layer_param_count(&self, layer: usize) -> usize {
        let (r, c) = self.weight_shape(layer);
        r * c + c
    }

    pub fn total_param_count(&self) -> usize {
        (1..=N_LAYERS).map(|l| self.layer_param_count(l)).sum()
    }
}

/// Weight matrix and bias row of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense {
            w: Matrix::zeros(rows, cols),
            b: vec![0.0; cols],
        }
    }

    /// `x · W + b`.
    fn apply(&self, x: &Matrix) -> Matrix {
        let mut z = numerics::matmul(x, &self.w).expect("layer input width");
        z.add_row_vector(&self.b);
        z
    }
}

/// All tensors of the network; `layers[0]` is layer 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub layers: Vec<Dense>,
}

/// Gradients share the parameter layout.
pub type Gradients = ModelParams;

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        let layers = (1..=N_LAYERS)
            .map(|l| {
                let (r, c) = dims.weight_shape(l);
                Dense::zeros(r, c)
            })
            .collect();
        ModelParams { dims, layers }
    }

    /// Layer `l`, 1-based.
    pub fn layer(&self, l: usize) -> &Dense {
        &self.layers[l - 1]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut Dense {
        &mut self.layers[l - 1]
    }

    pub fn check_shapes(&self) -> Result<(), ModelError> {
        self.dims.validate()?;
        if self.layers.len() != N_LAYERS {
            return Err(ModelError::DimensionMismatch(format!(
                "{} layers",
                self.layers.len()
            )));
        }
        for l in 1..=N_LAYERS {
            let d = self.layer(l);
            let (r, c) = self.dims.weight_shape(l);
            if d.w.shape() != (r, c) || d.b.len() != c {
                return Err(ModelError::DimensionMismatch(format!(
                    "layer {l}: weights {:?}, bias {}, expected {r}x{c}",
                    d.w.shape(),
                    d.b.len()
                )));
            }
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.w.data_mut().iter_mut().zip(b.w.data()) {
                *x += y;
            }
            for (x, y) in a.b.iter_mut().zip(&b.b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for d in &mut self.layers {
            d.w.data_mut().iter_mut().for_each(|x| *x *= s);
            d.b.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|d| d.w.is_finite() && d.b.iter().all(|x| x.is_finite()))
    }

    /// FNV-1a over dims and the bit patterns of every value.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        eat(self.dims.input_width as u64);
        eat(self.dims.hidden as u64);
        eat(self.dims.n_labels as u64);
        eat(self.dims.relu_cap.to_bits());
        for d in &self.layers {
            d.w.data().iter().chain(&d.b).for_each(|v| eat(v.to_bits()));
        }
        h
    }
}

/// Glorot-uniform weights, zero biases, LSTM forget-gate bias 1.
pub fn init_params(dims: ModelDims, rng: &mut Rng) -> Result<ModelParams, ModelError> {
    dims.validate()?;
    let mut p = ModelParams::zeros(dims);
    for l in 1..=N_LAYERS {
        glorot_fill(&mut p.layer_mut(l).w, rng);
    }
    let h = dims.hidden;
    p.layer_mut(LSTM_LAYER).b[2 * h..3 * h].fill(FORGET_BIAS_INIT);
    Ok(p)
}

pub(crate) fn glorot_fill(w: &mut Matrix, rng: &mut Rng) {
    let limit = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
    for x in w.data_mut() {
        *x = rng.uniform(-limit, limit);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
}

impl Default for DropoutSpec {
    fn default() -> Self {
        DropoutSpec { rate: 0.4 }
    }
}

impl DropoutSpec {
    pub fn none() -> Self {
        DropoutSpec { rate: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Activated gate values for one time step, `(i, g, f, o)` packed.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStepCache {
    pub gates: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// One LSTM step on the concatenated row `(h_prev, x_t)`.
pub fn lstm_step(
    input: &[f64],
    layer: &Dense,
    c_prev: &[f64],
) -> (Vec<f64>, Vec<f64>, LstmStepCache) {
    let h = c_prev.len();
    assert_eq!(input.len(), layer.w.rows());
    assert_eq!(layer.w.cols(), 4 * h);
    let mut pre = layer.b.clone();
    for (k, &x) in input.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (p, w) in pre.iter_mut().zip(layer.w.row(k)) {
            *p += x * w;
        }
    }
    let mut gates = pre;
    for j in 0..h {
        gates[j] = sigmoid(gates[j]);
        gates[h + j] = gates[h + j].tanh();
        gates[2 * h + j] = sigmoid(gates[2 * h + j]);
        gates[3 * h + j] = sigmoid(gates[3 * h + j]);
    }
    let mut c = vec![0.0; h];
    let mut tanh_c = vec![0.0; h];
    let mut h_out = vec![0.0; h];
    for j in 0..h {
        c[j] = gates[2 * h + j] * c_prev[j] + gates[j] * gates[h + j];
        tanh_c[j] = c[j].tanh();
        h_out[j] = gates[3 * h + j] * tanh_c[j];
    }
    (h_out, c, LstmStepCache { gates, tanh_c })
}

/// What sits between layers 3 and 5. `Identity` exists for locality tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Recurrence {
    Lstm,
    #[cfg_attr(not(test), allow(dead_code))]
    Identity,
}

#[derive(Debug, Clone)]
struct FcCache {
    z: Matrix,
    /// Per-element dropout multiplier (0 or 1/(1−rate)); `None` when no dropout.
    mask: Option<Vec<f64>>,
    out: Matrix,
}

/// Everything `backward` needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    recurrence: Recurrence,
    input: Matrix,
    fc: [FcCache; 4],
    lstm_in: Matrix,
    lstm_gates: Matrix,
    lstm_c: Matrix,
    lstm_tanh_c: Matrix,
    lstm_h: Matrix,
    probs: Matrix,
}

impl ForwardCache {
    pub fn frames(&self) -> usize {
        self.input.rows()
    }
}

fn fc_forward(
    layer: &Dense,
    x: &Matrix,
    cap: f64,
    rate: f64,
    mode: Mode,
    rng: &mut Rng,
) -> FcCache {
    let z = layer.apply(x);
    let mut out = numerics::relu_clip(&z, cap);
    let mask = if mode == Mode::Train && rate > 0.0 {
        let keep = 1.0 / (1.0 - rate);
        let m: Vec<f64> = (0..out.data().len())
            .map(|_| if rng.next_f64() < rate { 0.0 } else { keep })
            .collect();
        out.data_mut().iter_mut().zip(&m).for_each(|(o, k)| *o *= k);
        Some(m)
    } else {
        None
    };
    FcCache { z, mask, out }
}

/// Runs the network over `feats` (`T × input_width`), returning per-frame label
/// log-probabilities and the cache for `backward`.
pub fn forward(
    params: &ModelParams,
    feats: &Matrix,
    dropout: DropoutSpec,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Matrix, ForwardCache), ModelError> {
    forward_with(params, feats, dropout, mode, rng, Recurrence::Lstm)
}

/// Inference-mode forward without a cache.
pub fn infer(params: &ModelParams, feats: &Matrix) -> Result<Matrix, ModelError> {
    let mut rng = Rng::new(0);
    forward(params, feats, DropoutSpec::none(), Mode::Infer, &mut rng).map(|(lp, _)| lp)
}

pub(crate) fn forward_with(
    params: &ModelParams,
    feats: &Matrix,
    dropout: DropoutSpec,
    mode: Mode,
    rng: &mut Rng,
    recurrence: Recurrence,
) -> Result<(Matrix, ForwardCache), ModelError> {
    let dims = params.dims;
    if feats.cols() != dims.input_width {
        return Err(ModelError::DimensionMismatch(format!(
            "feature width {} but model expects {}",
            feats.cols(),
            dims.input_width
        )));
    }
    assert!(
        (0.0..1.0).contains(&dropout.rate),
        "dropout rate must be in [0, 1)"
    );
    let cap = dims.relu_cap;
    let rate = dropout.rate;
    let h = dims.hidden;
    let t_len = feats.rows();

    let c1 = fc_forward(params.layer(1), feats, cap, rate, mode, rng);
    let c2 = fc_forward(params.layer(2), &c1.out, cap, rate, mode, rng);
    let c3 = fc_forward(params.layer(3), &c2.out, cap, rate, mode, rng);

    let mut lstm_in = Matrix::zeros(t_len, 2 * h);
    let mut lstm_gates = Matrix::zeros(t_len, 4 * h);
    let mut lstm_c = Matrix::zeros(t_len, h);
    let mut lstm_tanh_c = Matrix::zeros(t_len, h);
    let mut lstm_h = Matrix::zeros(t_len, h);
    match recurrence {
        Recurrence::Lstm => {
            let mut h_prev = vec![0.0; h];
            let mut c_prev = vec![0.0; h];
            for t in 0..t_len {
                let row = lstm_in.row_mut(t);
                row[..h].copy_from_slice(&h_prev);
                row[h..].copy_from_slice(c3.out.row(t));
                let (h_t, c_t, step) = lstm_step(lstm_in.row(t), params.layer(LSTM_LAYER), &c_prev);
                lstm_gates.row_mut(t).copy_from_slice(&step.gates);
                lstm_tanh_c.row_mut(t).copy_from_slice(&step.tanh_c);
                lstm_c.row_mut(t).copy_from_slice(&c_t);
                lstm_h.row_mut(t).copy_from_slice(&h_t);
                h_prev = h_t;
                c_prev = c_t;
            }
        }
        Recurrence::Identity => lstm_h = c3.out.clone(),
    }

    let c5 = fc_forward(params.layer(5), &lstm_h, cap, rate, mode, rng);
    let logits = params.layer(6).apply(&c5.out);
    let logprobs = log_softmax_rows(&logits);
    let probs = logprobs.map(f64::exp);

    let cache = ForwardCache {
        fingerprint: params.fingerprint(),
        recurrence,
        input: feats.clone(),
        fc: [c1, c2, c3, c5],
        lstm_in,
        lstm_gates,
        lstm_c,
        lstm_tanh_c,
        lstm_h,
        probs,
    };
    Ok((logprobs, cache))
}

/// Gradient of `x·W + b` given `dz`; accumulates into `g`, returns `dx`.
fn dense_backward(layer: &Dense, x: &Matrix, dz: &Matrix, g: &mut Dense) -> Matrix {
    matmul_tn_acc(x, dz, &mut g.w);
    for row in dz.iter_rows() {
        for (gb, d) in g.b.iter_mut().zip(row) {
            *gb += d;
        }
    }
    numerics::matmul_nt(dz, &layer.w)
}

/// `dz` of a clipped-ReLU layer with dropout from `d(out)`.
fn fc_dz(cache: &FcCache, dout: &Matrix, cap: f64) -> Matrix {
    let mut dz = dout.clone();
    for (i, d) in dz.data_mut().iter_mut().enumerate() {
        let z = cache.z.data()[i];
        let gate = if z > 0.0 && z < cap { 1.0 } else { 0.0 };
        let keep = cache.mask.as_ref().map_or(1.0, |m| m[i]);
        *d *= gate * keep;
    }
    dz
}

/// Exact gradients of `Σ dlogprobs ⊙ logprobs` by backpropagation through time.
pub fn backward(
    cache: &ForwardCache,
    params: &ModelParams,
    dlogprobs: &Matrix,
) -> Result<Gradients, ModelError> {
    if cache.fingerprint != params.fingerprint() {
        return Err(ModelError::StaleCache);
    }
    let dims = params.dims;
    let t_len = cache.frames();
    if dlogprobs.shape() != (t_len, dims.n_labels) {
        return Err(ModelError::DimensionMismatch(format!(
            "dlogprobs {:?}, expected ({t_len}, {})",
            dlogprobs.shape(),
            dims.n_labels
        )));
    }
    let cap = dims.relu_cap;
    let h = dims.hidden;
    let mut g = ModelParams::zeros(dims);

    // log-softmax: dz = dlp − softmax · Σ_row dlp
    let mut dz6 = dlogprobs.clone();
    for t in 0..t_len {
        let s: f64 = dlogprobs.row(t).iter().sum();
        for (d, p) in dz6.row_mut(t).iter_mut().zip(cache.probs.row(t)) {
            *d -= p * s;
        }
    }
    let [c1, c2, c3, c5] = &cache.fc;
    let dout5 = dense_backward(params.layer(6), &c5.out, &dz6, &mut g.layers[5]);
    let dz5 = fc_dz(c5, &dout5, cap);
    let dh = dense_backward(params.layer(5), &cache.lstm_h, &dz5, &mut g.layers[4]);

    let dout3 = match cache.recurrence {
        Recurrence::Identity => dh,
        Recurrence::Lstm => {
            let layer4 = params.layer(LSTM_LAYER);
            let mut dout3 = Matrix::zeros(t_len, h);
            let mut dgates_all = Matrix::zeros(t_len, 4 * h);
            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            for t in (0..t_len).rev() {
                let gates = cache.lstm_gates.row(t);
                let tanh_c = cache.lstm_tanh_c.row(t);
                let dgates = dgates_all.row_mut(t);
                for j in 0..h {
                    let (i_g, g_g, f_g, o_g) =
                        (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                    let c_prev = if t > 0 { cache.lstm_c[(t - 1, j)] } else { 0.0 };
                    let dh_t = dh[(t, j)] + dh_next[j];
                    let d_o = dh_t * tanh_c[j];
                    let dc = dh_t * o_g * (1.0 - tanh_c[j] * tanh_c[j]) + dc_next[j];
                    dgates[j] = dc * g_g * i_g * (1.0 - i_g);
                    dgates[h + j] = dc * i_g * (1.0 - g_g * g_g);
                    dgates[2 * h + j] = dc * c_prev * f_g * (1.0 - f_g);
                    dgates[3 * h + j] = d_o * o_g * (1.0 - o_g);
                    dc_next[j] = dc * f_g;
                }
                // d(input row) = dgates · Wᵀ
                let dgates = dgates_all.row(t);
                for k in 0..2 * h {
                    let d = dot(layer4.w.row(k), dgates);
                    if k < h {
                        dh_next[k] = d;
                    } else {
                        dout3[(t, k - h)] = d;
                    }
                }
            }
            matmul_tn_acc(&cache.lstm_in, &dgates_all, &mut g.layers[3].w);
            for row in dgates_all.iter_rows() {
                for (gb, d) in g.layers[3].b.iter_mut().zip(row) {
                    *gb += d;
                }
            }
            dout3
        }
    };

    let dz3 = fc_dz(c3, &dout3, cap);
    let dout2 = dense_backward(params.layer(3), &c2.out, &dz3, &mut g.layers[2]);
    let dz2 = fc_dz(c2, &dout2, cap);
    let dout1 = dense_backward(params.layer(2), &c1.out, &dz2, &mut g.layers[1]);
    let dz1 = fc_dz(c1, &dout1, cap);
    matmul_tn_acc(&cache.input, &dz1, &mut g.layers[0].w);
    for row in dz1.iter_rows() {
        for (gb, d) in g.layers[0].b.iter_mut().zip(row) {
            *gb += d;
        }
    }
    Ok(g)
}
