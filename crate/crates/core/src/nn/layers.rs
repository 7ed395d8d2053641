use rand::Rng;

use super::{gemm, Matrix, Mode, NnError, Op, Tensor3};

/// Uniform draws in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
fn scaled_uniform<R: Rng + ?Sized>(rng: &mut R, count: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..count).map(|_| rng.random_range(-bound..=bound)).collect()
}

/// 1D convolution with stride 1 and zero "same" padding.
///
/// Weights are laid out `[tap][in_channel][out_channel]`, which is exactly the
/// `(kernel_size * in_channels) x out_channels` matrix the im2col product needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernel_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    col: Vec<f64>,
    batch: usize,
    len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn new<R: Rng + ?Sized>(
        kernel_size: usize,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if kernel_size % 2 == 0 {
            return Err(NnError::InvalidArchitecture(format!(
                "kernel size {kernel_size} must be odd"
            )));
        }
        let fan_in = kernel_size * in_channels;
        Ok(Self {
            kernel_size,
            in_channels,
            out_channels,
            weight: scaled_uniform(rng, fan_in * out_channels, fan_in),
            bias: vec![0.0; out_channels],
        })
    }

    /// Builds a layer from explicit weights in `[tap][in][out]` order.
    pub fn from_parts(
        kernel_size: usize,
        in_channels: usize,
        out_channels: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, NnError> {
        if kernel_size % 2 == 0 {
            return Err(NnError::InvalidArchitecture(format!(
                "kernel size {kernel_size} must be odd"
            )));
        }
        if weight.len() != kernel_size * in_channels * out_channels || bias.len() != out_channels {
            return Err(NnError::ShapeMismatch("convolution parameters".into()));
        }
        Ok(Self {
            kernel_size,
            in_channels,
            out_channels,
            weight,
            bias,
        })
    }

    fn im2col(&self, x: &Tensor3) -> Vec<f64> {
        let (batch, len, cin) = x.dims();
        let k = self.kernel_size;
        let pad = k / 2;
        let width = k * cin;
        let mut col = vec![0.0; batch * len * width];
        let data = x.data();
        for b in 0..batch {
            for t in 0..len {
                let dst = &mut col[(b * len + t) * width..(b * len + t + 1) * width];
                for tap in 0..k {
                    let Some(src_t) = (t + tap).checked_sub(pad).filter(|&s| s < len) else {
                        continue;
                    };
                    let src = (b * len + src_t) * cin;
                    dst[tap * cin..(tap + 1) * cin].copy_from_slice(&data[src..src + cin]);
                }
            }
        }
        col
    }

    pub fn forward(&self, x: &Tensor3) -> Result<(Tensor3, ConvCache), NnError> {
        let (batch, len, cin) = x.dims();
        if cin != self.in_channels {
            return Err(NnError::ChannelMismatch {
                expected: self.in_channels,
                found: cin,
            });
        }
        let col = self.im2col(x);
        let rows = batch * len;
        let cout = self.out_channels;
        let mut out = Tensor3::zeros(batch, len, cout);
        let out_data = out.data_mut();
        for row in out_data.chunks_exact_mut(cout.max(1)) {
            row.copy_from_slice(&self.bias);
        }
        gemm(
            rows,
            self.kernel_size * cin,
            cout,
            &col,
            Op::N,
            &self.weight,
            Op::N,
            1.0,
            out_data,
        );
        Ok((out, ConvCache { col, batch, len }))
    }

    /// Parameter gradients, plus the input gradient when `input_grad` is set.
    pub fn backward(
        &self,
        cache: &ConvCache,
        dy: &Tensor3,
        input_grad: bool,
    ) -> Result<(ConvGrads, Option<Tensor3>), NnError> {
        let (batch, len, cout) = dy.dims();
        if (batch, len, cout) != (cache.batch, cache.len, self.out_channels) {
            return Err(NnError::ShapeMismatch("convolution upstream gradient".into()));
        }
        let rows = batch * len;
        let cin = self.in_channels;
        let k = self.kernel_size;
        let width = k * cin;

        let mut weight = vec![0.0; width * cout];
        gemm(width, rows, cout, &cache.col, Op::T, dy.data(), Op::N, 0.0, &mut weight);
        let mut bias = vec![0.0; cout];
        for row in dy.data().chunks_exact(cout.max(1)) {
            for (g, v) in bias.iter_mut().zip(row) {
                *g += v;
            }
        }

        let dx = input_grad.then(|| {
            let mut dcol = vec![0.0; rows * width];
            gemm(rows, cout, width, dy.data(), Op::N, &self.weight, Op::T, 0.0, &mut dcol);
            let pad = k / 2;
            let mut dx = Tensor3::zeros(batch, len, cin);
            let dxd = dx.data_mut();
            for b in 0..batch {
                for t in 0..len {
                    let src = &dcol[(b * len + t) * width..(b * len + t + 1) * width];
                    for tap in 0..k {
                        let Some(dst_t) = (t + tap).checked_sub(pad).filter(|&s| s < len) else {
                            continue;
                        };
                        let dst = &mut dxd[(b * len + dst_t) * cin..(b * len + dst_t + 1) * cin];
                        for (d, s) in dst.iter_mut().zip(&src[tap * cin..(tap + 1) * cin]) {
                            *d += s;
                        }
                    }
                }
            }
            dx
        });
        Ok((ConvGrads { weight, bias }, dx))
    }
}

pub fn conv1d_forward(x: &Tensor3, layer: &ConvLayer) -> Result<Tensor3, NnError> {
    layer.forward(x).map(|(y, _)| y)
}

pub fn conv1d_backward(
    layer: &ConvLayer,
    cache: &ConvCache,
    dy: &Tensor3,
) -> Result<(ConvGrads, Tensor3), NnError> {
    let (g, dx) = layer.backward(cache, dy, true)?;
    Ok((g, dx.expect("input gradient requested")))
}

pub fn relu(x: &Tensor3) -> Tensor3 {
    let mut y = x.clone();
    relu_in_place(&mut y);
    y
}

pub(crate) fn relu_in_place(x: &mut Tensor3) {
    for v in x.data_mut() {
        *v = v.max(0.0);
    }
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(out: &Tensor3, dy: &Tensor3) -> Tensor3 {
    let mut dx = dy.clone();
    relu_backward_in_place(out, &mut dx);
    dx
}

pub(crate) fn relu_backward_in_place(out: &Tensor3, dy: &mut Tensor3) {
    for (g, &o) in dy.data_mut().iter_mut().zip(out.data()) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Per-channel batch normalization over the batch and time axes.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Weight on the old running statistic: `new = momentum * old + (1 - momentum) * batch`.
    pub momentum: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BatchNormLayer {
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: Self::DEFAULT_MOMENTUM,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor3) -> Result<(), NnError> {
        if x.channels() != self.channels() {
            return Err(NnError::ChannelMismatch {
                expected: self.channels(),
                found: x.channels(),
            });
        }
        Ok(())
    }

    /// Normalizes with batch statistics and folds them into the running ones.
    pub fn forward_train(&mut self, x: &Tensor3) -> Result<(Tensor3, BatchNormCache), NnError> {
        let (out, cache, mean, var) = self.forward_batch_stats(x)?;
        let m = self.momentum;
        for c in 0..self.channels() {
            self.running_mean[c] = m * self.running_mean[c] + (1.0 - m) * mean[c];
            self.running_var[c] = m * self.running_var[c] + (1.0 - m) * var[c];
        }
        Ok((out, cache))
    }

    /// Training-mode output without touching the running statistics.
    pub fn forward_batch_stats(
        &self,
        x: &Tensor3,
    ) -> Result<(Tensor3, BatchNormCache, Vec<f64>, Vec<f64>), NnError> {
        self.check(x)?;
        let ch = self.channels();
        let count = x.batch() * x.len();
        if count < 2 {
            return Err(NnError::DegenerateBatch(count));
        }
        let mut mean = vec![0.0; ch];
        for row in x.data().chunks_exact(ch) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; ch];
        for row in x.data().chunks_exact(ch) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        var.iter_mut().for_each(|s| *s /= count as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();

        let mut xhat = x.data().to_vec();
        let mut out = x.clone();
        for (hrow, orow) in xhat.chunks_exact_mut(ch).zip(out.data_mut().chunks_exact_mut(ch)) {
            for c in 0..ch {
                let h = (hrow[c] - mean[c]) * inv_std[c];
                hrow[c] = h;
                orow[c] = self.gamma[c] * h + self.beta[c];
            }
        }
        Ok((out, BatchNormCache { xhat, inv_std }, mean, var))
    }

    pub fn forward_inference(&self, x: &Tensor3) -> Result<Tensor3, NnError> {
        self.check(x)?;
        let ch = self.channels();
        let scale: Vec<f64> = (0..ch)
            .map(|c| self.gamma[c] / (self.running_var[c] + self.epsilon).sqrt())
            .collect();
        let mut out = x.clone();
        for row in out.data_mut().chunks_exact_mut(ch.max(1)) {
            for c in 0..ch {
                row[c] = (row[c] - self.running_mean[c]) * scale[c] + self.beta[c];
            }
        }
        Ok(out)
    }

    /// Gradients through a training-mode forward pass.
    pub fn backward(
        &self,
        cache: &BatchNormCache,
        dy: &Tensor3,
    ) -> Result<(BatchNormGrads, Tensor3), NnError> {
        let ch = self.channels();
        if dy.channels() != ch || dy.data().len() != cache.xhat.len() {
            return Err(NnError::ShapeMismatch("batch norm upstream gradient".into()));
        }
        let count = (dy.batch() * dy.len()) as f64;
        let mut dgamma = vec![0.0; ch];
        let mut dbeta = vec![0.0; ch];
        for (g, h) in dy.data().chunks_exact(ch).zip(cache.xhat.chunks_exact(ch)) {
            for c in 0..ch {
                dgamma[c] += g[c] * h[c];
                dbeta[c] += g[c];
            }
        }
        // dxhat = gamma * dy, so the sums of dxhat and dxhat * xhat are
        // gamma-scaled versions of dbeta and dgamma.
        let mut dx = dy.clone();
        for (g, h) in dx.data_mut().chunks_exact_mut(ch).zip(cache.xhat.chunks_exact(ch)) {
            for c in 0..ch {
                let k = self.gamma[c] * cache.inv_std[c] / count;
                g[c] = k * (count * g[c] - dbeta[c] - h[c] * dgamma[c]);
            }
        }
        Ok((
            BatchNormGrads {
                gamma: dgamma,
                beta: dbeta,
            },
            dx,
        ))
    }
}

pub fn batchnorm_forward(
    x: &Tensor3,
    layer: &mut BatchNormLayer,
    mode: Mode,
) -> Result<Tensor3, NnError> {
    match mode {
        Mode::Training => layer.forward_train(x).map(|(y, _)| y),
        Mode::Inference => layer.forward_inference(x),
    }
}

pub fn batchnorm_backward(
    layer: &BatchNormLayer,
    cache: &BatchNormCache,
    dy: &Tensor3,
) -> Result<(BatchNormGrads, Tensor3), NnError> {
    layer.backward(cache, dy)
}

/// Mean over the time axis: `(B, N, C) -> B x C`.
pub fn global_avg_pool(x: &Tensor3) -> Matrix {
    let (batch, len, ch) = x.dims();
    let mut out = Matrix::zeros(batch, ch);
    for b in 0..batch {
        let dst = &mut out.data[b * ch..(b + 1) * ch];
        for t in 0..len {
            let src = &x.data()[(b * len + t) * ch..(b * len + t + 1) * ch];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        if len > 0 {
            dst.iter_mut().for_each(|d| *d /= len as f64);
        }
    }
    out
}

pub fn global_avg_pool_backward(dh: &Matrix, len: usize) -> Tensor3 {
    let (batch, ch) = (dh.rows, dh.cols);
    let mut dx = Tensor3::zeros(batch, len, ch);
    let scale = 1.0 / len.max(1) as f64;
    for b in 0..batch {
        let src = dh.row(b);
        for t in 0..len {
            let dst = &mut dx.data_mut()[(b * len + t) * ch..(b * len + t + 1) * ch];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s * scale;
            }
        }
    }
    dx
}

/// Fully connected classifier head; weight is `[in][out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        Self {
            in_features,
            out_features,
            weight: scaled_uniform(rng, in_features * out_features, in_features),
            bias: vec![0.0; out_features],
        }
    }

    pub fn from_parts(
        in_features: usize,
        out_features: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, NnError> {
        if weight.len() != in_features * out_features || bias.len() != out_features {
            return Err(NnError::ShapeMismatch("dense parameters".into()));
        }
        Ok(Self {
            in_features,
            out_features,
            weight,
            bias,
        })
    }
}

pub fn dense_logits(h: &Matrix, head: &DenseLayer) -> Result<Matrix, NnError> {
    if h.cols != head.in_features {
        return Err(NnError::ShapeMismatch(format!(
            "features have width {}, head expects {}",
            h.cols, head.in_features
        )));
    }
    let mut out = Matrix::zeros(h.rows, head.out_features);
    for row in out.data.chunks_exact_mut(head.out_features.max(1)) {
        row.copy_from_slice(&head.bias);
    }
    gemm(
        h.rows,
        h.cols,
        head.out_features,
        &h.data,
        Op::N,
        &head.weight,
        Op::N,
        1.0,
        &mut out.data,
    );
    Ok(out)
}

/// Row-wise softmax with the row maximum subtracted before exponentiation.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    if out.cols == 0 {
        return out;
    }
    for row in out.data.chunks_exact_mut(out.cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

pub fn dense_softmax(h: &Matrix, head: &DenseLayer) -> Result<Matrix, NnError> {
    dense_logits(h, head).map(|l| softmax_rows(&l))
}

/// Gradients of the head given the gradient with respect to its logits.
pub fn dense_backward(
    h: &Matrix,
    head: &DenseLayer,
    dlogits: &Matrix,
) -> Result<(DenseGrads, Matrix), NnError> {
    if dlogits.cols != head.out_features || dlogits.rows != h.rows || h.cols != head.in_features {
        return Err(NnError::ShapeMismatch("dense upstream gradient".into()));
    }
    let (rows, fin, fout) = (h.rows, head.in_features, head.out_features);
    let mut weight = vec![0.0; fin * fout];
    gemm(fin, rows, fout, &h.data, Op::T, &dlogits.data, Op::N, 0.0, &mut weight);
    let mut bias = vec![0.0; fout];
    for row in dlogits.iter_rows() {
        for (b, g) in bias.iter_mut().zip(row) {
            *b += g;
        }
    }
    let mut dh = Matrix::zeros(rows, fin);
    gemm(rows, fout, fin, &dlogits.data, Op::N, &head.weight, Op::T, 0.0, &mut dh.data);
    Ok((DenseGrads { weight, bias }, dh))
}
