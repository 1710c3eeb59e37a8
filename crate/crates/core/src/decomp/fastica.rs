//! One-unit fixed-point ICA with deflation.
//!
//! Contrast `G(y) = y^3 / 3`, so `g(y) = y^2` and `g'(y) = 2y`. The skewness
//! contrast favours the positively skewed, sparse sources that spike trains
//! produce after whitening.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

const DEGENERATE_NORM: f64 = 1e-12;

/// Removes the components of `w` along each (orthonormal) row of `basis`.
///
/// Two Gram-Schmidt passes keep the residual inner products at rounding level.
pub fn deflate(w: &mut Array1<f64>, basis: &[Array1<f64>]) {
    for _ in 0..2 {
        for p in basis {
            let proj = w.dot(p);
            w.scaled_add(-proj, p);
        }
    }
}

/// Scales `w` to unit norm; fails when it has (numerically) vanished.
pub fn normalize(w: &mut Array1<f64>) -> Result<()> {
    let norm = w.dot(w).sqrt();
    if !(norm > DEGENERATE_NORM) || !norm.is_finite() {
        return Err(Error::invalid("separation vector collapsed to zero"));
    }
    *w /= norm;
    Ok(())
}

/// One fixed-point update `E[z g(w'z)] - E[g'(w'z)] w`, deflated and renormalized.
///
/// `z` is whitened and time-major (`T x k`). A vanishing update is reported
/// as an error so the caller can restart from a new initialization.
pub fn fixed_point_iterate(
    w: ArrayView1<'_, f64>,
    z: &Array2<f64>,
    prior: &[Array1<f64>],
) -> Result<Array1<f64>> {
    let t = z.nrows() as f64;
    let mut acc = Array1::<f64>::zeros(z.ncols());
    let mut sum_y = 0.0;
    for row in z.rows() {
        let y = row.dot(&w);
        sum_y += y;
        acc.scaled_add(y * y, &row);
    }
    acc /= t;
    acc.scaled_add(-2.0 * sum_y / t, &w);
    deflate(&mut acc, prior);
    normalize(&mut acc)?;
    Ok(acc)
}

/// Iterates until `|<w_new, w_old>| > 1 - tol` or the budget runs out.
///
/// Returns the final vector and the number of updates performed.
pub fn fixed_point_converge(
    init: Array1<f64>,
    z: &Array2<f64>,
    prior: &[Array1<f64>],
    tol: f64,
    max_iters: usize,
) -> Result<(Array1<f64>, usize)> {
    let mut w = init;
    deflate(&mut w, prior);
    normalize(&mut w)?;
    for iter in 1..=max_iters {
        let next = fixed_point_iterate(w.view(), z, prior)?;
        let similarity = next.dot(&w).abs();
        w = next;
        if similarity > 1.0 - tol {
            return Ok((w, iter));
        }
    }
    Ok((w, max_iters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::whiten::{whiten, WhitenRegularization};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Whitened instantaneous mixture of one sparse spiky source and Gaussian rows.
    fn mixture(t: usize, k: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = Array2::<f64>::zeros((t, k));
        for mut row in s.rows_mut() {
            row[0] = if rng.random::<f64>() < 0.02 { 10.0 } else { 0.0 };
            for v in row.iter_mut().skip(1) {
                *v = StandardNormal.sample(&mut rng);
            }
        }
        let a = Array2::from_shape_simple_fn((k, k), || StandardNormal.sample(&mut rng));
        whiten(s.dot(&a), WhitenRegularization::default()).unwrap().data
    }

    #[test]
    fn converges_on_sparse_source() {
        let z = mixture(20_000, 6, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let init = Array1::from_shape_simple_fn(6, || StandardNormal.sample(&mut rng));
        let (w, iters) = fixed_point_converge(init, &z, &[], 1e-4, 100).unwrap();
        assert!(iters < 100, "{iters}");
        let next = fixed_point_iterate(w.view(), &z, &[]).unwrap();
        assert!(next.dot(&w).abs() > 1.0 - 1e-4);
        // the recovered source is the spiky one: heavily skewed projection
        let y = z.dot(&w);
        let skew = y.iter().map(|v| v.powi(3)).sum::<f64>() / y.len() as f64;
        assert!(skew > 3.0, "{skew}");
    }

    #[test]
    fn deflation_makes_update_orthogonal_to_priors() {
        let z = mixture(5000, 5, 2);
        let mut p1 = Array1::from(vec![1.0, 1.0, 0.0, 0.0, 0.0]);
        normalize(&mut p1).unwrap();
        let mut p2 = Array1::from(vec![0.0, 0.0, 1.0, -1.0, 1.0]);
        normalize(&mut p2).unwrap();
        let prior = vec![p1, p2];
        let mut w = Array1::from(vec![0.3, -0.2, 0.5, 0.1, 0.7]);
        normalize(&mut w).unwrap();
        let out = fixed_point_iterate(w.view(), &z, &prior).unwrap();
        for p in &prior {
            assert!(out.dot(p).abs() < 1e-8);
        }
        assert!((out.dot(&out) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exact_fixed_point_is_preserved() {
        // Row 0 is a skewed, centered, unit-variance source; row 1 is paired
        // +u/-u so every cross moment with row 0 vanishes exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4000;
        let raw: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < 0.1 { 5.0 } else { 0.0 }).collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let mut z = Array2::zeros((2 * n, 2));
        for (i, &r) in raw.iter().enumerate() {
            let s = (r - mean) / sd;
            let u: f64 = StandardNormal.sample(&mut rng);
            z[[2 * i, 0]] = s;
            z[[2 * i, 1]] = u;
            z[[2 * i + 1, 0]] = s;
            z[[2 * i + 1, 1]] = -u;
        }
        let w = Array1::from(vec![1.0, 0.0]);
        let out = fixed_point_iterate(w.view(), &z, &[]).unwrap();
        assert!(out.dot(&w).abs() > 1.0 - 1e-10);
    }

    #[test]
    fn vanishing_update_is_an_error() {
        let z = Array2::<f64>::zeros((10, 3));
        let w = Array1::from(vec![1.0, 0.0, 0.0]);
        assert!(fixed_point_iterate(w.view(), &z, &[]).is_err());
    }
}
