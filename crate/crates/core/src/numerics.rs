//! Dense vector/matrix arithmetic, kernels, and classification primitives.
//!
//! Everything here is a pure function over slices of `f64`; the rest of the
//! crate builds on these.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking a logarithm, keeping
/// losses and gradients finite.
pub const LOG_CLAMP: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::DimensionMismatch {
                context: "Matrix::from_values",
                left: rows * cols,
                right: values.len(),
            });
        }
        Ok(Matrix { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    #[inline]
    pub fn add_at(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] += v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

fn check_same_dim(context: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context,
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine of the angle between two vectors, in `[-1, 1]`.
///
/// Symmetric in its arguments and invariant to positive scaling of either.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_same_dim("cosine_similarity", a, b)?;
    let na = l2_norm(a);
    if na == 0.0 {
        return Err(Error::ZeroNorm { which: "first" });
    }
    let nb = l2_norm(b);
    if nb == 0.0 {
        return Err(Error::ZeroNorm { which: "second" });
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Squared Euclidean distance; zero exactly when the vectors coincide.
pub fn squared_euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    check_same_dim("squared_euclidean", a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Gaussian kernel `exp(-||a-b||^2 / (2 bandwidth^2))`, in `(0, 1]`.
pub fn gaussian_kernel(a: &[f64], b: &[f64], bandwidth: f64) -> Result<f64> {
    if !(bandwidth > 0.0) {
        return Err(Error::invalid_config(format!(
            "gaussian_kernel bandwidth must be positive, got {bandwidth}"
        )));
    }
    let d2 = squared_euclidean(a, b)?;
    Ok((-d2 / (2.0 * bandwidth * bandwidth)).exp())
}

/// Numerically stable softmax (max-subtracted); preserves the argmax and sums
/// to one.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Empty { what: "logits" });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// `-log(probs[label])` with the argument of the log clamped at [`LOG_CLAMP`].
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: probs.len(),
        });
    }
    Ok(-probs[label].max(LOG_CLAMP).ln())
}

/// Index of the largest entry; ties resolve to the first occurrence.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_orthogonal_is_zero() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn cosine_parallel_is_one() {
        assert_eq!(cosine_similarity(&[2.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn cosine_45_degrees() {
        let got = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((got - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_norm_names_the_argument() {
        assert_eq!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).unwrap_err(),
            Error::ZeroNorm { which: "first" }
        );
        assert_eq!(
            cosine_similarity(&[1.0, 0.0], &[0.0, 0.0]).unwrap_err(),
            Error::ZeroNorm { which: "second" }
        );
    }

    #[test]
    fn squared_euclidean_examples() {
        assert_eq!(squared_euclidean(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(squared_euclidean(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 2.0);
        assert_eq!(squared_euclidean(&[0.0], &[2.0]).unwrap(), 4.0);
        assert!(squared_euclidean(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn gaussian_kernel_examples() {
        let x = [0.3, -1.2, 4.0];
        assert_eq!(gaussian_kernel(&x, &x, 0.7).unwrap(), 1.0);
        let k = gaussian_kernel(&[0.0], &[2.0], std::f64::consts::SQRT_2).unwrap();
        assert!((k - (-1.0f64).exp()).abs() < 1e-12);
        assert!(gaussian_kernel(&x, &x, 0.0).is_err());
        assert!(gaussian_kernel(&x, &x, -1.0).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let thirds = softmax(&[4.2, 4.2, 4.2]).unwrap();
        for p in &thirds {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        let p = softmax(&[1.0, 0.0]).unwrap();
        assert!((p[0] - 0.7310585786300049).abs() < 1e-10);
        assert!((p[1] - 0.2689414213699951).abs() < 1e-10);
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax(&[1000.0, -1000.0, 999.0]).unwrap();
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|v| v.is_finite()));
        assert_eq!(argmax(&p), 0);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[1.0, 0.0], 0).unwrap(), 0.0);
        let ln2 = cross_entropy(&[0.5, 0.5], 1).unwrap();
        assert!((ln2 - std::f64::consts::LN_2).abs() < 1e-12);
        let ce = cross_entropy(&[0.7310585786300049, 0.2689414213699951], 1).unwrap();
        assert!((ce - 1.3132616875182228).abs() < 1e-10);
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let ce = cross_entropy(&[1.0, 0.0], 1).unwrap();
        assert!((ce - (-LOG_CLAMP.ln())).abs() < 1e-9);
        assert!(ce.is_finite());
    }

    proptest! {
        #[test]
        fn cosine_positive_scale_invariance(
            v in proptest::collection::vec(-10.0f64..10.0, 2..8),
            c in 0.01f64..100.0,
        ) {
            prop_assume!(l2_norm(&v) > 1e-6);
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let got = cosine_similarity(&v, &scaled).unwrap();
            prop_assert!((got - 1.0).abs() < 1e-12);
        }

        #[test]
        fn kernel_is_positive_and_bounded(
            a in proptest::collection::vec(-5.0f64..5.0, 3),
            b in proptest::collection::vec(-5.0f64..5.0, 3),
            bw in 0.5f64..5.0,
        ) {
            let k = gaussian_kernel(&a, &b, bw).unwrap();
            prop_assert!(k > 0.0 && k <= 1.0);
            let back = gaussian_kernel(&b, &a, bw).unwrap();
            prop_assert!((k - back).abs() < 1e-15);
            if squared_euclidean(&a, &b).unwrap() == 0.0 {
                prop_assert_eq!(k, 1.0);
            }
        }

        #[test]
        fn softmax_sums_to_one_and_keeps_argmax(
            z in proptest::collection::vec(-1000.0f64..1000.0, 1..6),
        ) {
            let p = softmax(&z).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            prop_assert_eq!(argmax(&p), argmax(&z));
        }

        #[test]
        fn cross_entropy_of_softmax_is_nonnegative(
            z in proptest::collection::vec(-50.0f64..50.0, 2..5),
            label_pick in 0usize..5,
        ) {
            let p = softmax(&z).unwrap();
            let label = label_pick % p.len();
            let ce = cross_entropy(&p, label).unwrap();
            prop_assert!(ce >= 0.0);
        }
    }
}
