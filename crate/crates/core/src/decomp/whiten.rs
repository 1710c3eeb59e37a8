use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What to do with covariance eigenvalues below `rel_floor * largest`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum WhitenRegularization {
    /// Drop those directions; the output has fewer columns.
    Discard { rel_floor: f64 },
    /// Raise them to the floor; dimensionality is kept.
    Floor { rel_floor: f64 },
    /// Drop eigenvalues below the mean of the smaller half of the spectrum,
    /// which is an estimate of the noise level.
    LowerHalfMean,
}

impl Default for WhitenRegularization {
    fn default() -> Self {
        WhitenRegularization::Discard { rel_floor: 1e-9 }
    }
}

/// Centered, decorrelated observations and the map that produced them.
#[derive(Debug, Clone)]
pub struct Whitened {
    /// Time-major, `T x k`; the sample covariance is the identity.
    pub data: Array2<f64>,
    /// `k x rows`, equal to `D^(-1/2) E^T`.
    pub transform: Array2<f64>,
    pub mean: Array1<f64>,
    /// Retained covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

impl Whitened {
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn num_samples(&self) -> usize {
        self.data.nrows()
    }
}

/// Covariance with the `1/T` normalization used throughout whitening.
pub fn covariance(x: &Array2<f64>) -> Array2<f64> {
    x.t().dot(x) / x.nrows() as f64
}

/// Whitens time-major observations (`T x rows`) by eigendecomposition of their covariance.
///
/// Eigenvectors are sign-canonicalized (largest-magnitude entry positive) so
/// that the result does not depend on the eigensolver's sign choice.
pub fn whiten(mut x: Array2<f64>, policy: WhitenRegularization) -> Result<Whitened> {
    let (t, rows) = x.dim();
    if rows == 0 || t == 0 {
        return Err(Error::invalid("cannot whiten an empty matrix"));
    }
    if rows > t {
        return Err(Error::invalid(format!(
            "{rows} observation rows exceed {t} samples"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite observation"));
    }
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    x -= &mean;
    let cov = covariance(&x);

    let eig = SymmetricEigen::new(DMatrix::from_fn(rows, rows, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[order[0]];
    if largest <= 0.0 {
        return Err(Error::invalid("observations have zero variance"));
    }

    let lower_half_mean = {
        let tail = &order[rows / 2..];
        tail.iter().map(|&i| eig.eigenvalues[i]).sum::<f64>() / tail.len() as f64
    };
    let mut eigenvalues = Vec::with_capacity(rows);
    let mut kept = Vec::with_capacity(rows);
    for &i in &order {
        let lambda = eig.eigenvalues[i];
        match policy {
            WhitenRegularization::Discard { rel_floor } => {
                if lambda >= rel_floor * largest {
                    eigenvalues.push(lambda);
                    kept.push(i);
                }
            }
            WhitenRegularization::Floor { rel_floor } => {
                eigenvalues.push(lambda.max(rel_floor * largest));
                kept.push(i);
            }
            WhitenRegularization::LowerHalfMean => {
                if lambda >= lower_half_mean && lambda > 0.0 {
                    eigenvalues.push(lambda);
                    kept.push(i);
                }
            }
        }
    }

    let k = kept.len();
    let mut transform = Array2::zeros((k, rows));
    for (r, (&i, &lambda)) in kept.iter().zip(&eigenvalues).enumerate() {
        let v = eig.eigenvectors.column(i);
        let pivot = v.iter().fold(0.0f64, |a, &b| if b.abs() > a.abs() { b } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        let scale = sign / lambda.sqrt();
        for (dst, &e) in transform.row_mut(r).iter_mut().zip(v.iter()) {
            *dst = e * scale;
        }
    }
    let data = x.dot(&transform.t());
    Ok(Whitened {
        data,
        transform,
        mean,
        eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(t: usize, rows: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((t, rows), || StandardNormal.sample(&mut rng))
    }

    fn max_identity_error(z: &Array2<f64>) -> f64 {
        let c = covariance(z);
        let mut worst = 0.0f64;
        for ((i, j), &v) in c.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
        worst
    }

    #[test]
    fn output_covariance_is_identity() {
        let mut x = gaussian(5000, 12, 1);
        // introduce correlation and unequal scales
        for mut row in x.rows_mut() {
            row[3] += 2.0 * row[0];
            row[7] = 5.0 * row[7] - row[3];
        }
        let w = whiten(x, WhitenRegularization::default()).unwrap();
        assert_eq!(w.dim(), 12);
        assert!(max_identity_error(&w.data) < 1e-6);
    }

    #[test]
    fn white_input_gives_near_orthonormal_transform() {
        let w = whiten(gaussian(100_000, 6, 2), WhitenRegularization::default()).unwrap();
        let wtw = w.transform.t().dot(&w.transform);
        let err = wtw
            .indexed_iter()
            .map(|((i, j), &v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.05, "{err}");
    }

    #[test]
    fn duplicated_row_is_discarded() {
        let mut x = gaussian(2000, 5, 3);
        let copy = x.column(1).to_owned();
        x.column_mut(4).assign(&copy);
        let w = whiten(x.clone(), WhitenRegularization::default()).unwrap();
        assert_eq!(w.dim(), 4);
        let floored = whiten(x, WhitenRegularization::Floor { rel_floor: 1e-9 }).unwrap();
        assert_eq!(floored.dim(), 5);
    }

    #[test]
    fn lower_half_mean_keeps_the_signal_subspace() {
        // two strong directions over weak isotropic noise
        let mut x = gaussian(20_000, 10, 7) * 0.01;
        let s = gaussian(20_000, 2, 8);
        for (mut row, src) in x.rows_mut().into_iter().zip(s.rows()) {
            row[0] += src[0];
            row[1] += src[0] + src[1];
            row[5] += src[1];
        }
        let w = whiten(x, WhitenRegularization::LowerHalfMean).unwrap();
        assert!(w.dim() >= 2 && w.dim() < 10, "{}", w.dim());
        assert!(max_identity_error(&w.data) < 1e-6);
    }

    #[test]
    fn scaling_input_leaves_output_unchanged() {
        let x = gaussian(3000, 8, 4);
        let a = whiten(x.clone(), WhitenRegularization::default()).unwrap();
        let b = whiten(x * 37.5, WhitenRegularization::default()).unwrap();
        let diff = (&a.data - &b.data).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn rejects_bad_input() {
        let mut x = gaussian(10, 3, 5);
        x[[2, 1]] = f64::NAN;
        assert!(whiten(x, WhitenRegularization::default()).is_err());
        assert!(whiten(gaussian(3, 5, 6), WhitenRegularization::default()).is_err());
    }
}
