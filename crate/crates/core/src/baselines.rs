//! Classical reference classifiers on flattened, standardized windows:
//! multinomial logistic regression, k-nearest neighbors, and a one-vs-rest
//! linear SVM.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{gemm, softmax_rows, Matrix, Op};
use crate::training::SplitDataset;
use crate::trajectory::Window;

/// Standard deviations below this are replaced by it.
pub const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BaselineError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("k = {k} is invalid for {rows} training rows")]
    InvalidK { k: usize, rows: usize },
    #[error("label {label} is outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("window from `{0}` has no label")]
    UnlabeledWindow(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// One flattened window per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, BaselineError> {
        if data.len() != rows * cols {
            return Err(BaselineError::ShapeMismatch(format!(
                "{} values for {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_windows(windows: &[Window]) -> Result<Self, BaselineError> {
        let cols = windows.first().map_or(0, |w| w.len() * crate::trajectory::CHANNELS);
        let mut data = Vec::with_capacity(windows.len() * cols);
        for w in windows {
            data.extend(w.flatten());
            if data.len() % cols.max(1) != 0 {
                return Err(BaselineError::ShapeMismatch(format!("window `{}`", w.source_id)));
            }
        }
        Self::new(windows.len(), cols, data)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

pub fn labels_of(windows: &[Window]) -> Result<Vec<usize>, BaselineError> {
    windows
        .iter()
        .map(|w| {
            w.label
                .map(usize::from)
                .ok_or_else(|| BaselineError::UnlabeledWindow(w.source_id.clone()))
        })
        .collect()
}

/// Per-feature z-scoring with statistics from the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &FeatureMatrix) -> Result<Self, BaselineError> {
        if x.rows == 0 {
            return Err(BaselineError::EmptyTrainingSet);
        }
        let n = x.rows as f64;
        let mut mean = vec![0.0; x.cols];
        for r in 0..x.rows {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.cols];
        for r in 0..x.rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn transform(&self, x: &FeatureMatrix) -> FeatureMatrix {
        let mut out = x.clone();
        for row in out.data.chunks_exact_mut(x.cols.max(1)) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// L2 strength shared by logistic regression and the SVM.
    pub l2: f64,
    pub logreg_lr: f64,
    pub logreg_iters: usize,
    pub knn_k: usize,
    pub svm_epochs: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            logreg_lr: 0.1,
            logreg_iters: 500,
            knn_k: 5,
            svm_epochs: 1000,
            seed: 0,
        }
    }
}

/// `scores = x * weight + bias`, weight stored `[feature][class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub features: usize,
    pub classes: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearModel {
    fn zeros(features: usize, classes: usize) -> Self {
        Self {
            features,
            classes,
            weight: vec![0.0; features * classes],
            bias: vec![0.0; classes],
        }
    }

    pub fn decision(&self, x: &FeatureMatrix) -> Result<Matrix, BaselineError> {
        if x.cols != self.features {
            return Err(BaselineError::ShapeMismatch(format!(
                "{} features, model has {}",
                x.cols, self.features
            )));
        }
        let mut out = Matrix::zeros(x.rows, self.classes);
        for row in out.data.chunks_exact_mut(self.classes) {
            row.copy_from_slice(&self.bias);
        }
        gemm(x.rows, x.cols, self.classes, &x.data, Op::N, &self.weight, Op::N, 1.0, &mut out.data);
        Ok(out)
    }

    /// Argmax of the decision values; ties go to the lowest class.
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<usize>, BaselineError> {
        Ok(self.decision(x)?.argmax_rows())
    }
}

fn check_labels(x: &FeatureMatrix, y: &[usize], classes: usize) -> Result<(), BaselineError> {
    if x.rows == 0 {
        return Err(BaselineError::EmptyTrainingSet);
    }
    if y.len() != x.rows {
        return Err(BaselineError::ShapeMismatch(format!("{} labels for {} rows", y.len(), x.rows)));
    }
    if let Some(&label) = y.iter().find(|&&l| l >= classes) {
        return Err(BaselineError::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Multinomial logistic regression by full-batch gradient descent from zero.
pub fn fit_logreg(
    x: &FeatureMatrix,
    y: &[usize],
    classes: usize,
    cfg: &BaselineConfig,
) -> Result<LinearModel, BaselineError> {
    check_labels(x, y, classes)?;
    let mut model = LinearModel::zeros(x.cols, classes);
    let n = x.rows as f64;
    let mut grad_w = vec![0.0; x.cols * classes];
    for _ in 0..cfg.logreg_iters {
        let mut g = softmax_rows(&model.decision(x)?);
        for (row, &label) in g.data.chunks_exact_mut(classes).zip(y) {
            row[label] -= 1.0;
            row.iter_mut().for_each(|v| *v /= n);
        }
        gemm(x.cols, x.rows, classes, &x.data, Op::T, &g.data, Op::N, 0.0, &mut grad_w);
        for (w, gw) in model.weight.iter_mut().zip(&grad_w) {
            *w -= cfg.logreg_lr * (gw + cfg.l2 * *w);
        }
        for row in g.data.chunks_exact(classes) {
            for (b, gb) in model.bias.iter_mut().zip(row) {
                *b -= cfg.logreg_lr * gb;
            }
        }
    }
    Ok(model)
}

/// Majority vote of the `k` nearest training rows (Euclidean). Equal
/// distances favour the lower row index; tied votes the lower class.
pub fn predict_knn(
    train_x: &FeatureMatrix,
    train_y: &[usize],
    query: &[f64],
    k: usize,
) -> Result<usize, BaselineError> {
    if train_x.rows == 0 {
        return Err(BaselineError::EmptyTrainingSet);
    }
    if k == 0 || k > train_x.rows {
        return Err(BaselineError::InvalidK { k, rows: train_x.rows });
    }
    if query.len() != train_x.cols || train_y.len() != train_x.rows {
        return Err(BaselineError::ShapeMismatch("k-NN query".into()));
    }
    let mut dist: Vec<(f64, usize)> = (0..train_x.rows)
        .map(|r| {
            let d = train_x.row(r).iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, r)
        })
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let classes = train_y.iter().max().map_or(0, |m| m + 1);
    let mut votes = vec![0usize; classes];
    for &(_, r) in &dist[..k] {
        votes[train_y[r]] += 1;
    }
    let mut best = 0;
    for (c, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = c;
        }
    }
    Ok(best)
}

/// One-vs-rest linear SVMs trained by stochastic subgradient descent on the
/// regularized hinge loss with step `1 / (l2 * t)`. The bias is an extra
/// constant feature and is regularized with the weights.
pub fn fit_svm(
    x: &FeatureMatrix,
    y: &[usize],
    classes: usize,
    cfg: &BaselineConfig,
) -> Result<LinearModel, BaselineError> {
    check_labels(x, y, classes)?;
    let d = x.cols;
    let mut model = LinearModel::zeros(d, classes);
    for class in 0..classes {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (class as u64).wrapping_mul(0x9E37_79B9));
        let mut order: Vec<usize> = (0..x.rows).collect();
        // w = scale * v, with the bias as entry d
        let mut v = vec![0.0; d + 1];
        let mut scale = 1.0;
        let mut t = 0u64;
        for _ in 0..cfg.svm_epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                t += 1;
                let eta = 1.0 / (cfg.l2 * t as f64);
                let xi = x.row(i);
                let target = if y[i] == class { 1.0 } else { -1.0 };
                let dot: f64 = xi.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + v[d];
                let margin = target * scale * dot;
                let shrink = 1.0 - 1.0 / t as f64;
                if shrink == 0.0 {
                    v.iter_mut().for_each(|w| *w = 0.0);
                    scale = 1.0;
                } else {
                    scale *= shrink;
                }
                if margin < 1.0 {
                    let step = eta * target / scale;
                    for (w, a) in v.iter_mut().zip(xi) {
                        *w += step * a;
                    }
                    v[d] += step;
                }
            }
        }
        for j in 0..d {
            model.weight[j * classes + class] = scale * v[j];
        }
        model.bias[class] = scale * v[d];
    }
    Ok(model)
}

/// Test accuracy of one classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub model: String,
    pub classes: usize,
    pub accuracy: f64,
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len().max(1) as f64
}

/// Fits all three baselines on the training split and scores the test split.
pub fn compare(data: &SplitDataset, cfg: &BaselineConfig) -> Result<Vec<BaselineResult>, BaselineError> {
    let classes = data.class_count;
    let train_raw = FeatureMatrix::from_windows(&data.train)?;
    let scaler = Standardizer::fit(&train_raw)?;
    let train_x = scaler.transform(&train_raw);
    let test_x = scaler.transform(&FeatureMatrix::from_windows(&data.test)?);
    let train_y = labels_of(&data.train)?;
    let test_y = labels_of(&data.test)?;

    let logreg = fit_logreg(&train_x, &train_y, classes, cfg)?.predict(&test_x)?;
    let knn = (0..test_x.rows)
        .map(|r| predict_knn(&train_x, &train_y, test_x.row(r), cfg.knn_k.min(train_x.rows)))
        .collect::<Result<Vec<_>, _>>()?;
    let svm = fit_svm(&train_x, &train_y, classes, cfg)?.predict(&test_x)?;

    Ok([("logreg", logreg), ("knn", knn), ("svm", svm)]
        .into_iter()
        .map(|(name, pred)| BaselineResult {
            model: name.to_string(),
            classes,
            accuracy: accuracy(&pred, &test_y),
        })
        .collect())
}
