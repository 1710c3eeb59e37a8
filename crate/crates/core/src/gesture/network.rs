use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability floor inside the log of the cross-entropy.
pub const LOSS_EPSILON: f64 = 1e-12;

/// Layer geometry of the conv / pool / dense / dense classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub window_samples: usize,
    pub channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pool: (usize, usize),
    pub pool_stride: (usize, usize),
    pub filters: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl NetworkShape {
    /// Kernel (50, 5) stride (10, 3), pooling (3, 1) stride (3, 1), 16 filters, 64 hidden units.
    pub fn standard(window_samples: usize, channels: usize, classes: usize) -> Self {
        Self {
            window_samples,
            channels,
            kernel: (50, 5),
            stride: (10, 3),
            pool: (3, 1),
            pool_stride: (3, 1),
            filters: 16,
            hidden: 64,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.kernel.0,
            self.kernel.1,
            self.stride.0,
            self.stride.1,
            self.pool.0,
            self.pool.1,
            self.pool_stride.0,
            self.pool_stride.1,
            self.filters,
            self.hidden,
        ];
        if positive.contains(&0) {
            return Err(Error::invalid("network dimensions must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::invalid("need at least 2 classes"));
        }
        if self.window_samples < self.kernel.0 || self.channels < self.kernel.1 {
            return Err(Error::invalid(format!(
                "window {}x{} is smaller than kernel {:?}",
                self.window_samples, self.channels, self.kernel
            )));
        }
        let (ch, cw) = self.conv_out();
        if ch < self.pool.0 || cw < self.pool.1 {
            return Err(Error::invalid("convolution output is smaller than the pooling window"));
        }
        Ok(())
    }

    pub fn conv_out(&self) -> (usize, usize) {
        (
            (self.window_samples - self.kernel.0) / self.stride.0 + 1,
            (self.channels - self.kernel.1) / self.stride.1 + 1,
        )
    }

    pub fn pool_out(&self) -> (usize, usize) {
        let (ch, cw) = self.conv_out();
        (
            (ch - self.pool.0) / self.pool_stride.0 + 1,
            (cw - self.pool.1) / self.pool_stride.1 + 1,
        )
    }

    pub fn flat_len(&self) -> usize {
        let (ph, pw) = self.pool_out();
        ph * pw * self.filters
    }

    fn patch_len(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }
}

/// The six trainable tensors; also used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    /// `filters x (kernel_time * kernel_channels)`, row-major over the kernel.
    pub conv_w: Array2<f64>,
    pub conv_b: Array1<f64>,
    /// `hidden x flat_len`; the flattened index is `(pool_row * pool_cols + pool_col) * filters + filter`.
    pub dense1_w: Array2<f64>,
    pub dense1_b: Array1<f64>,
    pub dense2_w: Array2<f64>,
    pub dense2_b: Array1<f64>,
}

pub const TENSOR_NAMES: [&str; 6] = [
    "conv_w", "conv_b", "dense1_w", "dense1_b", "dense2_w", "dense2_b",
];

impl Tensors {
    pub fn zeros(shape: &NetworkShape) -> Self {
        Self {
            conv_w: Array2::zeros((shape.filters, shape.patch_len())),
            conv_b: Array1::zeros(shape.filters),
            dense1_w: Array2::zeros((shape.hidden, shape.flat_len())),
            dense1_b: Array1::zeros(shape.hidden),
            dense2_w: Array2::zeros((shape.classes, shape.hidden)),
            dense2_b: Array1::zeros(shape.classes),
        }
    }

    /// Flat views in [`TENSOR_NAMES`] order.
    pub fn slices(&self) -> [&[f64]; 6] {
        [
            self.conv_w.as_slice().expect("standard layout"),
            self.conv_b.as_slice().expect("standard layout"),
            self.dense1_w.as_slice().expect("standard layout"),
            self.dense1_b.as_slice().expect("standard layout"),
            self.dense2_w.as_slice().expect("standard layout"),
            self.dense2_b.as_slice().expect("standard layout"),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.conv_w.as_slice_mut().expect("standard layout"),
            self.conv_b.as_slice_mut().expect("standard layout"),
            self.dense1_w.as_slice_mut().expect("standard layout"),
            self.dense1_b.as_slice_mut().expect("standard layout"),
            self.dense2_w.as_slice_mut().expect("standard layout"),
            self.dense2_b.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn num_values(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub shape: NetworkShape,
    /// Fixed factor applied to every input sample before the convolution.
    pub input_scale: f64,
    pub weights: Tensors,
}

impl NetworkParams {
    pub fn zeros(shape: NetworkShape) -> Result<Self> {
        shape.validate()?;
        Ok(Self {
            shape,
            input_scale: 1.0,
            weights: Tensors::zeros(&shape),
        })
    }

    /// He-normal weights (gain sqrt(2) ahead of ReLU, 1 for the output layer), zero biases.
    pub fn init(shape: NetworkShape, input_scale: f64, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(shape)?;
        p.input_scale = input_scale;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |a: &mut Array2<f64>, gain: f64| {
            let std = (gain / a.ncols() as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("finite std");
            a.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
        };
        fill(&mut p.weights.conv_w, 2.0);
        fill(&mut p.weights.dense1_w, 2.0);
        fill(&mut p.weights.dense2_w, 1.0);
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        let expect = Tensors::zeros(&self.shape);
        let w = &self.weights;
        let same = w.conv_w.dim() == expect.conv_w.dim()
            && w.conv_b.dim() == expect.conv_b.dim()
            && w.dense1_w.dim() == expect.dense1_w.dim()
            && w.dense1_b.dim() == expect.dense1_b.dim()
            && w.dense2_w.dim() == expect.dense2_w.dim()
            && w.dense2_b.dim() == expect.dense2_b.dim();
        if !same {
            return Err(Error::invalid("tensor shapes disagree with the network shape"));
        }
        if !self.input_scale.is_finite() || w.slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("non-finite network parameter"));
        }
        Ok(())
    }
}

struct Activations {
    /// Conv row (within its window) that won each pooled cell: `batch x flat_len`.
    argmax: Vec<usize>,
    flat: Array2<f64>,
    hidden: Array2<f64>,
    probs: Array2<f64>,
}

fn check_window(shape: &NetworkShape, w: ArrayView2<'_, f64>) -> Result<()> {
    if w.dim() != (shape.window_samples, shape.channels) {
        return Err(Error::invalid(format!(
            "window shape {:?} does not match network input ({}, {})",
            w.dim(),
            shape.window_samples,
            shape.channels
        )));
    }
    Ok(())
}

/// Row blocks of the convolution.
///
/// The time kernel is cut into `ceil(kh / sh)` slices of `sh` rows, so every
/// input row belongs to exactly one block and no sample is copied twice. Block
/// `r` of column `j` holds input rows `r*sh .. (r+1)*sh` (zero past the end)
/// and channels `j*sw .. j*sw + kw`, stored as row `r*ow + j`. Output row
/// `i*ow + j` is then the sum over slices `q` of block row `(i+q)*ow + j`
/// times kernel slice `q`, so each slice is one GEMM on a contiguous range.
struct BlockLayout {
    slices: usize,
    blocks: usize,
    width: usize,
}

impl BlockLayout {
    fn new(shape: &NetworkShape) -> Self {
        let slices = shape.kernel.0.div_ceil(shape.stride.0);
        let (oh, _) = shape.conv_out();
        Self {
            slices,
            blocks: oh - 1 + slices,
            width: shape.stride.0 * shape.kernel.1,
        }
    }
}

fn fill_blocks(params: &NetworkParams, layout: &BlockLayout, x: ArrayView2<'_, f64>, out: &mut Array2<f64>) {
    let sh = &params.shape;
    let (_, ow) = sh.conv_out();
    let (st, sc) = sh.stride;
    let kw = sh.kernel.1;
    let scale = params.input_scale;
    let width = layout.width;
    let dst = out.as_slice_mut().expect("standard layout");
    for r in 0..layout.blocks {
        for a in 0..st {
            let t = r * st + a;
            if t >= sh.window_samples {
                for j in 0..ow {
                    let base = (r * ow + j) * width + a * kw;
                    dst[base..base + kw].fill(0.0);
                }
                continue;
            }
            let row = x.row(t);
            match row.as_slice() {
                Some(src) => {
                    for j in 0..ow {
                        let base = (r * ow + j) * width + a * kw;
                        for (d, &v) in dst[base..base + kw].iter_mut().zip(&src[j * sc..j * sc + kw]) {
                            *d = v * scale;
                        }
                    }
                }
                None => {
                    for j in 0..ow {
                        let base = (r * ow + j) * width + a * kw;
                        for b in 0..kw {
                            dst[base + b] = row[j * sc + b] * scale;
                        }
                    }
                }
            }
        }
    }
}

/// Kernel slice `q` as a `filters x (sh*kw)` matrix, zero-padded past the kernel height.
fn block_kernels(shape: &NetworkShape, layout: &BlockLayout, conv_w: &Array2<f64>) -> Vec<Array2<f64>> {
    let (kh, kw) = shape.kernel;
    let st = shape.stride.0;
    (0..layout.slices)
        .map(|q| {
            let mut out = Array2::zeros((shape.filters, layout.width));
            for a in 0..st.min(kh.saturating_sub(q * st)) {
                for filter in 0..shape.filters {
                    for b in 0..kw {
                        out[[filter, a * kw + b]] = conv_w[[filter, (q * st + a) * kw + b]];
                    }
                }
            }
            out
        })
        .collect()
}

fn unblock_kernel_grad(shape: &NetworkShape, layout: &BlockLayout, g: &[Array2<f64>]) -> Array2<f64> {
    let (kh, kw) = shape.kernel;
    let st = shape.stride.0;
    let mut out = Array2::zeros((shape.filters, kh * kw));
    for (q, gq) in g.iter().enumerate().take(layout.slices) {
        for a in 0..st.min(kh.saturating_sub(q * st)) {
            for filter in 0..shape.filters {
                for b in 0..kw {
                    out[[filter, (q * st + a) * kw + b]] = gq[[filter, a * kw + b]];
                }
            }
        }
    }
    out
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

fn forward_batch(params: &NetworkParams, windows: &[ArrayView2<'_, f64>]) -> Result<Activations> {
    let sh = &params.shape;
    for w in windows {
        check_window(sh, *w)?;
    }
    let wts = &params.weights;
    let batch = windows.len();
    let (oh, ow) = sh.conv_out();
    let (ph, pw) = sh.pool_out();
    let f = sh.filters;
    let rows = oh * ow;

    let layout = BlockLayout::new(sh);
    let kernels = block_kernels(sh, &layout, &wts.conv_w);
    let mut blocks = Array2::zeros((layout.blocks * ow, layout.width));
    let mut conv = Array2::<f64>::zeros((rows, f));
    let flat_len = sh.flat_len();
    let mut flat = Array2::zeros((batch, flat_len));
    let mut argmax = vec![0usize; batch * flat_len];
    for (n, x) in windows.iter().enumerate() {
        fill_blocks(params, &layout, *x, &mut blocks);
        for mut row in conv.rows_mut() {
            row.assign(&wts.conv_b);
        }
        for (q, kq) in kernels.iter().enumerate() {
            let src = blocks.slice(s![q * ow..q * ow + rows, ..]);
            general_mat_mul(1.0, &src, &kq.t(), 1.0, &mut conv);
        }
        let c = conv.as_slice().expect("standard layout");
        let out = flat.row_mut(n).into_slice().expect("standard layout");
        let arg = &mut argmax[n * flat_len..(n + 1) * flat_len];
        for pi in 0..ph {
            for pj in 0..pw {
                let cell = (pi * pw + pj) * f;
                for filter in 0..f {
                    let mut best = (f64::NEG_INFINITY, 0usize);
                    for a in 0..sh.pool.0 {
                        for b in 0..sh.pool.1 {
                            let r = (pi * sh.pool_stride.0 + a) * ow + pj * sh.pool_stride.1 + b;
                            let v = c[r * f + filter];
                            if v > best.0 {
                                best = (v, r);
                            }
                        }
                    }
                    // ReLU commutes with max, so it is applied after pooling
                    out[cell + filter] = best.0.max(0.0);
                    arg[cell + filter] = best.1;
                }
            }
        }
    }

    let mut hidden = flat.dot(&wts.dense1_w.t());
    hidden += &wts.dense1_b;
    relu_inplace(&mut hidden);
    let mut probs = hidden.dot(&wts.dense2_w.t());
    probs += &wts.dense2_b;
    softmax_rows(&mut probs);
    Ok(Activations {
        argmax,
        flat,
        hidden,
        probs,
    })
}

/// Class probabilities for one window.
pub fn forward(params: &NetworkParams, window: &Array2<f64>) -> Result<Vec<f64>> {
    Ok(forward_batch(params, &[window.view()])?.probs.row(0).to_vec())
}

/// Class probabilities for many windows, one row per window.
pub fn predict_proba(params: &NetworkParams, windows: &[ArrayView2<'_, f64>]) -> Result<Array2<f64>> {
    const CHUNK: usize = 64;
    let mut out = Array2::zeros((windows.len(), params.shape.classes));
    for (c, chunk) in windows.chunks(CHUNK).enumerate() {
        let act = forward_batch(params, chunk)?;
        out.slice_mut(s![c * CHUNK..c * CHUNK + chunk.len(), ..]).assign(&act.probs);
    }
    Ok(out)
}

/// Mean sparse categorical cross-entropy of a batch.
pub fn cross_entropy(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(n, &y)| -probs[[n, y]].max(LOSS_EPSILON).ln())
        .sum();
    total / labels.len() as f64
}

/// Batch loss and its gradient with respect to every trainable tensor.
pub fn loss_and_gradients(
    params: &NetworkParams,
    windows: &[ArrayView2<'_, f64>],
    labels: &[usize],
) -> Result<(f64, Tensors)> {
    if windows.is_empty() || windows.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} windows with {} labels",
            windows.len(),
            labels.len()
        )));
    }
    let sh = &params.shape;
    if let Some(&y) = labels.iter().find(|&&y| y >= sh.classes) {
        return Err(Error::invalid(format!("label {y} outside [0, {})", sh.classes)));
    }
    let act = forward_batch(params, windows)?;
    let loss = cross_entropy(&act.probs, labels);
    let batch = labels.len();
    let wts = &params.weights;

    // d loss / d logits for the clamped log: zero where the floor is active
    let mut d_logits = act.probs.clone();
    for (n, &y) in labels.iter().enumerate() {
        if act.probs[[n, y]] > LOSS_EPSILON {
            d_logits[[n, y]] -= 1.0;
        } else {
            d_logits.row_mut(n).fill(0.0);
        }
    }
    d_logits /= batch as f64;

    let dense2_w = d_logits.t().dot(&act.hidden);
    let dense2_b = d_logits.sum_axis(Axis(0));
    let mut d_hidden = d_logits.dot(&wts.dense2_w);
    d_hidden.zip_mut_with(&act.hidden, |d, &h| {
        if h <= 0.0 {
            *d = 0.0;
        }
    });
    let dense1_w = d_hidden.t().dot(&act.flat);
    let dense1_b = d_hidden.sum_axis(Axis(0));
    let d_flat = d_hidden.dot(&wts.dense1_w);

    let f = sh.filters;
    let flat_len = sh.flat_len();
    let layout = BlockLayout::new(sh);
    let (oh, ow) = sh.conv_out();
    let rows = oh * ow;
    let mut blocks = Array2::zeros((layout.blocks * ow, layout.width));
    let mut d_conv = Array2::<f64>::zeros((rows, f));
    let mut conv_b = Array1::<f64>::zeros(f);
    let mut grads: Vec<Array2<f64>> = (0..layout.slices)
        .map(|_| Array2::zeros((f, layout.width)))
        .collect();
    for (n, x) in windows.iter().enumerate() {
        let pooled = act.flat.row(n);
        let d_out = d_flat.row(n);
        let arg = &act.argmax[n * flat_len..(n + 1) * flat_len];
        if (0..flat_len).all(|idx| pooled[idx] <= 0.0 || d_out[idx] == 0.0) {
            continue;
        }
        d_conv.fill(0.0);
        {
            let d = d_conv.as_slice_mut().expect("standard layout");
            for idx in 0..flat_len {
                if pooled[idx] > 0.0 {
                    d[arg[idx] * f + idx % f] += d_out[idx];
                }
            }
        }
        conv_b += &d_conv.sum_axis(Axis(0));
        fill_blocks(params, &layout, *x, &mut blocks);
        for (q, gq) in grads.iter_mut().enumerate() {
            let src = blocks.slice(s![q * ow..q * ow + rows, ..]);
            general_mat_mul(1.0, &d_conv.t(), &src, 1.0, gq);
        }
    }
    let conv_w = unblock_kernel_grad(sh, &layout, &grads);
    Ok((
        loss,
        Tensors {
            conv_w,
            conv_b,
            dense1_w,
            dense1_b,
            dense2_w,
            dense2_b,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Tensors,
    pub v: Tensors,
    pub step: u64,
}

impl AdamState {
    pub fn new(shape: &NetworkShape) -> Self {
        Self {
            m: Tensors::zeros(shape),
            v: Tensors::zeros(shape),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &Tensors,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    if grads.num_values() != params.weights.num_values()
        || state.m.num_values() != params.weights.num_values()
    {
        return Err(Error::invalid("gradient or optimizer state shape mismatch"));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    let AdamState { m, v, .. } = state;
    for (((p, g), m), v) in params
        .weights
        .slices_mut()
        .into_iter()
        .zip(grads.slices())
        .zip(m.slices_mut())
        .zip(v.slices_mut())
    {
        for i in 0..p.len() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= config.lr * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_shape() -> NetworkShape {
        NetworkShape::standard(80, 11, 3)
    }

    #[test]
    fn standard_geometry() {
        let s = NetworkShape::standard(500, 60, 7);
        assert_eq!(s.conv_out(), (46, 19));
        assert_eq!(s.pool_out(), (15, 19));
        assert_eq!(s.flat_len(), 15 * 19 * 16);
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        let p = NetworkParams::zeros(NetworkShape::standard(500, 60, 7)).unwrap();
        let x = Array2::from_shape_fn((500, 60), |(i, j)| (i as f64 * 0.1 + j as f64).sin());
        let probs = forward(&p, &x).unwrap();
        assert_eq!(probs.len(), 7);
        for v in probs {
            assert!((v - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn wrong_window_shape_is_rejected() {
        let p = NetworkParams::zeros(tiny_shape()).unwrap();
        assert!(forward(&p, &Array2::zeros((80, 10))).is_err());
        assert!(NetworkShape::standard(40, 60, 7).validate().is_err());
    }

    #[test]
    fn uniform_prediction_loss_is_ln_classes() {
        let probs = Array2::from_elem((2, 7), 1.0 / 7.0);
        assert!((cross_entropy(&probs, &[0, 6]) - 7f64.ln()).abs() < 1e-12);
        let perfect = Array2::from_shape_fn((1, 3), |(_, j)| if j == 1 { 1.0 } else { 0.0 });
        assert_eq!(cross_entropy(&perfect, &[1]), 0.0);
        assert!((cross_entropy(&perfect, &[0]) + LOSS_EPSILON.ln()).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_keeps_params_and_decays_moments() {
        let shape = tiny_shape();
        let mut p = NetworkParams::init(shape, 1.0, 1).unwrap();
        let before = p.clone();
        let mut state = AdamState::new(&shape);
        state.m.conv_b.fill(1.0);
        state.v.conv_b.fill(1.0);
        let zero = Tensors::zeros(&shape);
        // moments are nonzero, so only check a tensor whose moments are zero
        adam_step(&mut p, &zero, &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(p.weights.dense1_w, before.weights.dense1_w);
        assert!((state.m.conv_b[0] - 0.9).abs() < 1e-15);
        assert!((state.v.conv_b[0] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr_times_sign() {
        let shape = tiny_shape();
        let mut p = NetworkParams::zeros(shape).unwrap();
        let mut g = Tensors::zeros(&shape);
        g.dense2_b[0] = 0.37;
        g.dense2_b[1] = -2.5;
        let mut state = AdamState::new(&shape);
        adam_step(&mut p, &g, &mut state, &AdamConfig::default()).unwrap();
        assert!((p.weights.dense2_b[0] + 1e-3).abs() < 1e-10);
        assert!((p.weights.dense2_b[1] - 1e-3).abs() < 1e-10);
        assert_eq!(p.weights.dense2_b[2], 0.0);
    }
}
