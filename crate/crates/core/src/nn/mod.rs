//! A small dense-tensor layer library with hand-written gradients.
//!
//! Activations are `(batch, time, channels)` tensors stored row-major, so a
//! tensor doubles as a `(batch * time) x channels` matrix. Convolutions are
//! lowered to a single matrix product over an im2col buffer.

mod layers;
mod model;

pub use layers::{
    batchnorm_backward, batchnorm_forward, conv1d_backward, conv1d_forward, dense_backward,
    dense_logits, dense_softmax, global_avg_pool, global_avg_pool_backward, relu,
    relu_backward, softmax_rows, BatchNormCache, BatchNormGrads, BatchNormLayer, ConvCache,
    ConvGrads, ConvLayer, DenseGrads, DenseLayer,
};
pub use model::{
    Architecture, CnnModel, ConvBlock, ForwardCache, Gradients, ParamInfo, DEFAULT_BLOCK_CHANNELS,
    DEFAULT_KERNEL_SIZE, NUM_BLOCKS,
};

use crate::trajectory::{Window, CHANNELS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("input has {found} channels, layer expects {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch norm needs at least 2 values per channel in training mode, got {0}")]
    DegenerateBatch(usize),
    #[error("cache was produced by a different model state")]
    StaleCache,
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
}

/// Whether batch normalization uses batch statistics or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

/// Row-major `(batch, len, channels)` activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    batch: usize,
    len: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(batch: usize, len: usize, channels: usize) -> Self {
        Self {
            batch,
            len,
            channels,
            data: vec![0.0; batch * len * channels],
        }
    }

    pub fn from_vec(batch: usize, len: usize, channels: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != batch * len * channels {
            return Err(NnError::ShapeMismatch(format!(
                "{} values for dims ({batch}, {len}, {channels})",
                data.len()
            )));
        }
        Ok(Self {
            batch,
            len,
            channels,
            data,
        })
    }

    /// Stacks windows into a `(windows, N, 7)` batch.
    pub fn from_windows<'a, I>(windows: I) -> Result<Self, NnError>
    where
        I: IntoIterator<Item = &'a Window>,
    {
        let mut data = Vec::new();
        let mut batch = 0;
        let mut len = None;
        for w in windows {
            match len {
                None => len = Some(w.len()),
                Some(n) if n != w.len() => {
                    return Err(NnError::ShapeMismatch(format!(
                        "window `{}` has {} rows, expected {n}",
                        w.source_id,
                        w.len()
                    )))
                }
                _ => {}
            }
            data.extend(w.flatten());
            batch += 1;
        }
        Self::from_vec(batch, len.unwrap_or(0), CHANNELS, data)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.batch, self.len, self.channels)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, b: usize, t: usize, c: usize) -> f64 {
        self.data[(b * self.len + t) * self.channels + c]
    }

    /// Copies out the listed batch rows.
    pub fn select(&self, rows: &[usize]) -> Self {
        let stride = self.len * self.channels;
        let mut data = Vec::with_capacity(rows.len() * stride);
        for &r in rows {
            data.extend_from_slice(&self.data[r * stride..(r + 1) * stride]);
        }
        Self {
            batch: rows.len(),
            len: self.len,
            channels: self.channels,
            data,
        }
    }
}

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != rows * cols {
            return Err(NnError::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Index of the largest entry per row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.iter_rows().map(argmax).collect()
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Storage order of a matrix operand passed to [`gemm`].
#[derive(Clone, Copy)]
pub(crate) enum Op {
    N,
    T,
}

/// `c = a * b + beta * c` with `a: m x k`, `b: k x n`, `c: m x n` (all
/// row-major in memory; `Op::T` reads the stored matrix transposed).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    op_a: Op,
    b: &[f64],
    op_b: Op,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match op_a {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (rsb, csb) = match op_b {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; x.len()];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = x[r * cols + c];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_in_all_layouts() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        let want = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (aa, oa) in [(&a, Op::N), (&at, Op::T)] {
            for (bb, ob) in [(&b, Op::N), (&bt, Op::T)] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, aa, oa, bb, ob, 0.0, &mut c);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0]), 0);
    }
}
