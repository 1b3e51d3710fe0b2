use super::tensor::Tensor;
use super::{NnError, Result};

/// Mean cross-entropy of softmax(logits) against integer labels.
///
/// Logits have shape `(N, K, 1, 1)`. Returns the loss and its gradient with
/// respect to the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [n, k, h, w] = logits.shape();
    if h != 1 || w != 1 || n != labels.len() || n == 0 {
        return Err(NnError::Shape(format!(
            "logits {:?} for {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for (i, (row, &y)) in logits.data().chunks(k).zip(labels).enumerate() {
        if y >= k {
            return Err(NnError::LabelOutOfRange { label: y, n_classes: k });
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[y];
        let g = &mut grad.data_mut()[i * k..(i + 1) * k];
        for (gj, v) in g.iter_mut().zip(row) {
            *gj = (v - lse).exp() / n as f64;
        }
        g[y] -= 1.0 / n as f64;
    }
    Ok((total / n as f64, grad))
}

/// Row-wise softmax of `(N, K, 1, 1)` logits.
pub fn softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let t = Tensor::zeros([3, 4, 1, 1]);
        let (l, g) = cross_entropy(&t, &[0, 1, 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((g.at([0, 0, 0, 0]) - (0.25 - 1.0) / 3.0).abs() < 1e-12);
        assert!((g.at([0, 1, 0, 0]) - 0.25 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let t = Tensor::from_vec([1, 2, 1, 1], vec![1e4, -1e4]).unwrap();
        let (l, g) = cross_entropy(&t, &[1]).unwrap();
        assert!((l - 2e4).abs() < 1e-6);
        assert!(g.all_finite());
    }

    #[test]
    fn bad_label() {
        let t = Tensor::zeros([1, 2, 1, 1]);
        assert!(matches!(cross_entropy(&t, &[2]), Err(NnError::LabelOutOfRange { .. })));
    }
}
