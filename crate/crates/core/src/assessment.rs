//! Turning class probabilities into 0-10 scores, and evaluation metrics.
//!
//! A window's score is twice the expected class, `S_tr = 2 * sum_i i * p(i)`,
//! so class `i` maps to score `2i`. An action's score `S_tot` is the mean of
//! its window scores.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::nn::{CnnModel, NnError, Tensor3};
use crate::training::{predict_classes, window_seed, TrainError};
use crate::trajectory::{sample_and_augment, RawTrajectory, TrajectoryError, Window};
use crate::NUM_SCORE_CLASSES;

/// Allowed deviation of a probability vector's sum from 1.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum AssessError {
    #[error("not a probability vector over {NUM_SCORE_CLASSES} classes: {0}")]
    NotAProbabilityVector(String),
    #[error("an action needs at least one window")]
    NoWindows,
    #[error("window from `{0}` has no label")]
    UnlabeledWindow(String),
    #[error("label {label} is outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("scoring needs a {NUM_SCORE_CLASSES}-class model, this one has {0} classes")]
    NotAScoringModel(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// `S_tr = 2 * sum_i i * p(i)` over the six quality classes.
pub fn score_window(p: &[f64]) -> Result<f64, AssessError> {
    if p.len() != NUM_SCORE_CLASSES {
        return Err(AssessError::NotAProbabilityVector(format!("{} entries", p.len())));
    }
    if let Some(v) = p.iter().find(|v| !(**v >= 0.0)) {
        return Err(AssessError::NotAProbabilityVector(format!("entry {v}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
        return Err(AssessError::NotAProbabilityVector(format!("sums to {sum}")));
    }
    Ok(2.0 * p.iter().enumerate().map(|(i, pi)| i as f64 * pi).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub id: String,
    pub s_tr: f64,
    #[serde(rename = "p")]
    pub probabilities: Vec<f64>,
}

/// Per-window scores and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub total: f64,
    pub windows: Vec<WindowScore>,
}

impl ScoreReport {
    pub fn window_count(&self) -> usize {
        self.windows.len()
    }
}

/// Scores each `(id, probabilities)` pair and averages the results.
pub fn score_action<S, P>(windows: &[(S, P)]) -> Result<ScoreReport, AssessError>
where
    S: AsRef<str>,
    P: AsRef<[f64]>,
{
    if windows.is_empty() {
        return Err(AssessError::NoWindows);
    }
    let windows = windows
        .iter()
        .map(|(id, p)| {
            Ok(WindowScore {
                id: id.as_ref().to_string(),
                s_tr: score_window(p.as_ref())?,
                probabilities: p.as_ref().to_vec(),
            })
        })
        .collect::<Result<Vec<_>, AssessError>>()?;
    let total = windows.iter().map(|w| w.s_tr).sum::<f64>() / windows.len() as f64;
    Ok(ScoreReport { total, windows })
}

/// Windows a recording at the model's input length and scores it.
pub fn score_trajectory(
    model: &CnnModel,
    trajectory: &RawTrajectory,
    seed: u64,
) -> Result<ScoreReport, AssessError> {
    if model.num_classes() != NUM_SCORE_CLASSES {
        return Err(AssessError::NotAScoringModel(model.num_classes()));
    }
    let windows = sample_and_augment(trajectory, model.arch().input_len, window_seed(seed, 0))?;
    let probs = model.predict(&Tensor3::from_windows(&windows)?)?;
    let pairs: Vec<(String, &[f64])> = probs
        .iter_rows()
        .enumerate()
        .map(|(k, p)| (format!("{}#{k}", trajectory.id), p))
        .collect();
    score_action(&pairs)
}

/// Counts of true class (rows) against predicted class (columns).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self, AssessError> {
        let mut m = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if let Some(&label) = [t, p].iter().find(|&&l| l >= classes) {
                return Err(AssessError::LabelOutOfRange { label, classes });
            }
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Header `true\pred,0,1,...` then one row per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for j in 0..self.classes() {
            let _ = write!(out, ",{j}");
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            let _ = write!(out, "{i}");
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

/// Inference-mode accuracy and confusion matrix over labeled windows.
pub fn evaluate(model: &CnnModel, windows: &[Window]) -> Result<(f64, ConfusionMatrix), AssessError> {
    let truth = windows
        .iter()
        .map(|w| {
            w.label
                .map(usize::from)
                .ok_or_else(|| AssessError::UnlabeledWindow(w.source_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let predicted = if windows.is_empty() {
        Vec::new()
    } else {
        predict_classes(model, &Tensor3::from_windows(windows)?)?
    };
    let cm = ConfusionMatrix::from_predictions(&truth, &predicted, model.num_classes())?;
    Ok((cm.accuracy(), cm))
}
