use super::TrainError;
use crate::nn::Matrix;

/// Probabilities are floored here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean negative log-likelihood of integer labels.
///
/// The returned gradient is taken with respect to the logits that produced
/// `probs` through a softmax: `(p - onehot(label)) / B`. The floor only
/// affects the reported loss value.
pub fn sparse_ce_loss(probs: &Matrix, labels: &[usize]) -> Result<(f64, Matrix), TrainError> {
    if labels.len() != probs.rows {
        return Err(TrainError::ShapeMismatch(format!(
            "{} labels for {} probability rows",
            labels.len(),
            probs.rows
        )));
    }
    let classes = probs.cols;
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(TrainError::LabelOutOfRange { label, classes });
    }
    if labels.is_empty() {
        return Ok((0.0, probs.clone()));
    }
    let batch = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (row, &label) in grad.data.chunks_exact_mut(classes).zip(labels) {
        loss -= row[label].max(PROB_FLOOR).ln();
        row[label] -= 1.0;
        row.iter_mut().for_each(|g| *g /= batch);
    }
    Ok((loss / batch, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let p = Matrix::from_vec(2, 3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(sparse_ce_loss(&p, &[1, 0]).unwrap().0, 0.0);
    }

    #[test]
    fn uniform_over_six() {
        let p = Matrix::from_vec(3, 6, vec![1.0 / 6.0; 18]).unwrap();
        let (loss, _) = sparse_ce_loss(&p, &[0, 3, 5]).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-12);
        assert!((loss - 1.7918).abs() < 1e-4);
    }

    #[test]
    fn inverse_e() {
        let e = (-1f64).exp();
        let p = Matrix::from_vec(1, 2, vec![e, 1.0 - e]).unwrap();
        assert!((sparse_ce_loss(&p, &[0]).unwrap().0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn confident_mistake_is_finite() {
        let p = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let (loss, _) = sparse_ce_loss(&p, &[1]).unwrap();
        assert!((loss + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn label_out_of_range() {
        let p = Matrix::from_vec(1, 2, vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            sparse_ce_loss(&p, &[2]),
            Err(TrainError::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }
}
