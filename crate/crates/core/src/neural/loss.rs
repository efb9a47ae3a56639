//! Masked softmax cross-entropy over per-token two-class logits.

use ndarray::Array2;

use crate::{Error, Result};

/// Mean negative log-likelihood over unmasked positions, plus the gradient
/// of that mean with respect to the logits.
///
/// Masked rows contribute nothing and get zero gradient. Labels are the
/// keep/delete classes {0, 1}. Numerically stable via log-sum-exp.
pub fn softmax_cross_entropy(
    logits: &Array2<f64>,
    labels: &[u8],
    mask: &[bool],
) -> Result<(f64, Array2<f64>)> {
    if logits.nrows() != labels.len() || labels.len() != mask.len() || logits.ncols() != 2 {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            expected: format!("logits[{} x 2], labels[{0}], mask[{0}]", labels.len()),
            actual: format!(
                "logits[{} x {}], labels[{}], mask[{}]",
                logits.nrows(),
                logits.ncols(),
                labels.len(),
                mask.len()
            ),
        });
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::AllMasked);
    }
    let scale = 1.0 / count as f64;

    let mut total = 0.0;
    let mut dlogits = Array2::zeros(logits.raw_dim());
    for (row, ((lrow, &label), &keep)) in logits
        .outer_iter()
        .zip(labels)
        .zip(mask)
        .enumerate()
    {
        if !keep {
            continue;
        }
        let m = lrow[0].max(lrow[1]);
        let e0 = (lrow[0] - m).exp();
        let e1 = (lrow[1] - m).exp();
        let lse = m + (e0 + e1).ln();
        total += lse - lrow[label as usize];
        let p0 = e0 / (e0 + e1);
        let p1 = e1 / (e0 + e1);
        dlogits[[row, 0]] = (p0 - if label == 0 { 1.0 } else { 0.0 }) * scale;
        dlogits[[row, 1]] = (p1 - if label == 1 { 1.0 } else { 0.0 }) * scale;
    }
    Ok((total * scale, dlogits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = array![[0.0, 0.0]];
        let (loss, dlogits) = softmax_cross_entropy(&logits, &[1], &[true]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((dlogits[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((dlogits[[0, 1]] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_class_is_stable() {
        let logits = array![[1000.0, 0.0]];
        let (loss, _) = softmax_cross_entropy(&logits, &[0], &[true]).unwrap();
        assert!(loss.is_finite());
        assert!(loss < 1e-12);
    }

    #[test]
    fn all_masked_is_an_error() {
        let logits = array![[0.3, -0.2]];
        assert!(matches!(
            softmax_cross_entropy(&logits, &[0], &[false]),
            Err(Error::AllMasked)
        ));
    }

    #[test]
    fn masked_rows_do_not_contribute() {
        let logits = array![[0.4, -1.0], [9.0, 9.0]];
        let (loss_a, d_a) = softmax_cross_entropy(&logits, &[0, 1], &[true, false]).unwrap();
        let only = array![[0.4, -1.0]];
        let (loss_b, d_b) = softmax_cross_entropy(&only, &[0], &[true]).unwrap();
        assert!((loss_a - loss_b).abs() < 1e-15);
        assert_eq!(d_a.row(0), d_b.row(0));
        assert!(d_a.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut logits = array![[0.7, -0.3], [1.2, 2.0], [-0.5, 0.1]];
        let labels = [1u8, 0, 1];
        let mask = [true, true, true];
        let (_, dlogits) = softmax_cross_entropy(&logits, &labels, &mask).unwrap();
        let h = 1e-6;
        for r in 0..3 {
            for c in 0..2 {
                let orig = logits[[r, c]];
                logits[[r, c]] = orig + h;
                let (lp, _) = softmax_cross_entropy(&logits, &labels, &mask).unwrap();
                logits[[r, c]] = orig - h;
                let (lm, _) = softmax_cross_entropy(&logits, &labels, &mask).unwrap();
                logits[[r, c]] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!(
                    (fd - dlogits[[r, c]]).abs() < 1e-6,
                    "row {r} col {c}: fd {fd} vs analytic {}",
                    dlogits[[r, c]]
                );
            }
        }
    }

    #[test]
    fn halving_mask_count_doubles_gradients() {
        let logits = array![[0.4, -1.0], [0.2, 0.3]];
        let (_, d_both) = softmax_cross_entropy(&logits, &[0, 1], &[true, true]).unwrap();
        let (_, d_one) = softmax_cross_entropy(&logits, &[0, 1], &[true, false]).unwrap();
        for c in 0..2 {
            assert!((d_one[[0, c]] - 2.0 * d_both[[0, c]]).abs() < 1e-15);
        }
    }
}
