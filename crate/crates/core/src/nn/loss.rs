use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &Tensor) -> Tensor {
    let m = logits.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data().iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Tensor::from_vec(exps.into_iter().map(|e| e / z).collect())
}

/// `−log softmax(logits)[label]` and its gradient `softmax − one_hot(label)`.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let n = logits.len();
    if label >= n {
        return Err(Error::param(format!("label {label} out of range for {n} classes")));
    }
    let l = logits.data();
    let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Σ_{i≠label} exp(l_i − m); kept apart from the label term so that a
    // confident correct prediction still yields a strictly positive loss.
    let others: f64 = l.iter().enumerate().filter(|&(i, _)| i != label).map(|(_, &v)| (v - m).exp()).sum();
    let loss = if l[label] == m { others.ln_1p() } else { (m - l[label]) + ((l[label] - m).exp() + others).ln() };
    let probs = softmax(logits);
    let mut d = probs.into_data();
    d[label] -= 1.0;
    Ok((loss, Tensor::from_vec(d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits() {
        for c in [2usize, 5, 10] {
            let (loss, _) = softmax_cross_entropy(&Tensor::full(&[c], 0.3), 1).unwrap();
            assert!((loss - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_evaluated() {
        let (loss, d) = softmax_cross_entropy(&Tensor::from_vec(vec![0.0, 3f64.ln()]), 1).unwrap();
        assert!((loss - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((loss - 0.287682).abs() < 1e-6);
        assert!((d.data()[0] - 0.25).abs() < 1e-12);
        assert!((d.data()[1] + 0.25).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(softmax_cross_entropy(&Tensor::zeros(&[3]), 3), Err(Error::Param(_))));
    }

    proptest! {
        #[test]
        fn gradient_sums_to_zero_and_loss_positive(
            logits in prop::collection::vec(-50.0f64..50.0, 2..12),
            pick in 0usize..100,
        ) {
            let label = pick % logits.len();
            let (loss, d) = softmax_cross_entropy(&Tensor::from_vec(logits), label).unwrap();
            prop_assert!(loss > 0.0);
            prop_assert!(d.data().iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
