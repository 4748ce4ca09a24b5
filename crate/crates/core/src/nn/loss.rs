use super::{Matrix, NnError};

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    if pred.len() != target.len() {
        return Err(NnError::Shape(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Batched MSE: the mean is taken over every element of the batch.
pub fn mse_loss_batch(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix), NnError> {
    if pred.shape() != target.shape() {
        return Err(NnError::Shape(format!(
            "prediction is {:?}, target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let (loss, grad) = mse_loss(pred.as_slice(), target.as_slice())?;
    if !loss.is_finite() {
        return Err(NnError::NonFinite("loss"));
    }
    Ok((loss, Matrix::from_vec(pred.rows(), pred.cols(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_vectors_give_zero() {
        let (l, g) = mse_loss(&[0.3, -2.0, 5.0], &[0.3, -2.0, 5.0]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_difference() {
        let (l, g) = mse_loss(&[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(l, 0.5);
        assert_eq!(g, vec![1.0, 0.0]);
    }

    #[test]
    fn eight_dim_against_scalar_arithmetic() {
        let p = [0.5, -1.25, 2.0, 0.0, 3.5, -0.75, 1.0, 0.125];
        let t = [1.0, -1.0, 0.0, 0.5, 3.0, 0.25, -1.0, 0.125];
        // squared diffs: .25 .0625 4 .25 .25 1 4 0 -> 9.8125 / 8
        let (l, g) = mse_loss(&p, &t).unwrap();
        assert!((l - 1.2265625).abs() < 1e-15);
        let expected = [-0.125, -0.0625, 0.5, -0.125, 0.125, -0.25, 0.5, 0.0];
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn length_mismatch() {
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }
}
