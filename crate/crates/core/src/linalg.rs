//! Small dense complex linear algebra on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(m: usize) -> CMat {
    CMat::identity(m, m)
}

pub fn frobenius(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn singular_values(a: &CMat) -> Vec<f64> {
    a.clone().singular_values().iter().copied().collect()
}

/// Ratio of the largest to the smallest singular value; infinite when singular.
pub fn condition_number(a: &CMat) -> f64 {
    let sv = singular_values(a);
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn inverse(a: &CMat) -> Result<CMat> {
    if !a.is_square() {
        return Err(Error::invalid(format!("cannot invert a {}x{} matrix", a.nrows(), a.ncols())));
    }
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("matrix is not invertible".into()))
}

/// Eigenvalues of a square complex matrix via the complex Schur form.
pub fn eigenvalues(a: &CMat) -> Result<Vec<Complex64>> {
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), 1e-15, 10_000)
        .ok_or_else(|| Error::Infeasible("Schur iteration did not converge".into()))?;
    let ev = schur
        .eigenvalues()
        .ok_or_else(|| Error::Infeasible("Schur form is not triangular".into()))?;
    Ok(ev.iter().copied().collect())
}

/// Eigenpairs ordered by decreasing |λ|, then lexicographically on (Re λ, Im λ).
/// Each eigenvector has unit norm and its largest-magnitude entry real positive.
/// Eigenvalues closer than `cluster_tol` (relative) share one SVD so that a
/// repeated eigenvalue yields an orthonormal basis of its eigenspace.
pub fn eigenpairs(a: &CMat, cluster_tol: f64) -> Result<Vec<(Complex64, CVec)>> {
    let m = a.nrows();
    let mut ev = eigenvalues(a)?;
    ev.sort_by(|x, y| {
        y.norm()
            .total_cmp(&x.norm())
            .then(x.re.total_cmp(&y.re))
            .then(x.im.total_cmp(&y.im))
    });
    let scale = ev.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
    let mut out: Vec<(Complex64, CVec)> = Vec::with_capacity(m);
    let mut i = 0;
    while i < ev.len() {
        let mut j = i + 1;
        while j < ev.len() && (ev[j] - ev[i]).norm() <= cluster_tol * scale {
            j += 1;
        }
        let group = j - i;
        let lambda = ev[i..j].iter().sum::<Complex64>() / group as f64;
        let shifted = a - CMat::identity(m, m) * lambda;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| Error::Infeasible("SVD failed".into()))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&p, &q| svd.singular_values[p].total_cmp(&svd.singular_values[q]));
        for (slot, &idx) in order.iter().take(group).enumerate() {
            let mut v: CVec = v_t.row(idx).adjoint();
            if group == 1 {
                v = refine(a, lambda, v);
            }
            out.push((ev[i + slot], canonical_direction(&v)));
        }
        i = j;
    }
    Ok(out)
}

/// Two steps of inverse iteration at a slightly offset shift.
fn refine(a: &CMat, lambda: Complex64, v: CVec) -> CVec {
    let m = a.nrows();
    let shift = lambda + c(1e-10, 1e-10) * lambda.norm().max(1e-300);
    let lu = (a - CMat::identity(m, m) * shift).lu();
    let mut w = v.clone();
    for _ in 0..2 {
        match lu.solve(&w) {
            Some(x) if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) && x.norm() > 0.0 => {
                w = &x / c(x.norm(), 0.0);
            }
            _ => return v,
        }
    }
    w
}

/// Unit-norm representative whose largest-magnitude entry is real positive.
pub fn canonical_direction(v: &CVec) -> CVec {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let mut best = 0;
    for (k, z) in v.iter().enumerate() {
        if z.norm() > v[best].norm() * (1.0 + 1e-12) {
            best = k;
        }
    }
    let phase = if v[best].norm() > 0.0 { v[best].conj() / v[best].norm() } else { c(1.0, 0.0) };
    v.map(|z| z * phase / norm)
}

pub fn from_real_rows(rows: &[&[f64]]) -> CMat {
    let r = rows.len();
    let cols = rows.first().map_or(0, |x| x.len());
    CMat::from_fn(r, cols, |i, j| c(rows[i][j], 0.0))
}

pub fn max_imag(a: &CMat) -> f64 {
    a.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
}

/// Ordinary least-squares slope of `ys` on `xs`; `None` with fewer than two
/// distinct abscissae.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs[..n].iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs[..n].iter().zip(&ys[..n]).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_line() {
        let xs = [1.0, 2.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        assert!((least_squares_slope(&xs, &ys).unwrap() + 0.5).abs() < 1e-14);
        assert!(least_squares_slope(&[1.0, 1.0], &[0.0, 2.0]).is_none());
    }

    #[test]
    fn inverse_roundtrip() {
        let a = from_real_rows(&[&[2.0, 1.0], &[1.0, 3.0]]);
        let inv = inverse(&a).unwrap();
        let e = &a * &inv - identity(2);
        assert!(frobenius(&e) < 1e-14);
    }

    #[test]
    fn singular_is_rejected() {
        let a = from_real_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(inverse(&a).is_err() || condition_number(&a) > 1e12);
    }

    #[test]
    fn eigenpairs_satisfy_definition() {
        let a = CMat::from_fn(3, 3, |i, j| c((i * 3 + j) as f64 * 0.37 - 1.0, (i as f64 - j as f64) * 0.2));
        for (l, v) in eigenpairs(&a, 1e-9).unwrap() {
            let r = &a * &v - &v * l;
            assert!(r.norm() < 1e-10, "{}", r.norm());
        }
    }

    #[test]
    fn rotation_has_complex_spectrum() {
        let a = from_real_rows(&[&[0.0, -1.0], &[1.0, 0.0]]);
        let ev = eigenvalues(&a).unwrap();
        assert!(ev.iter().all(|z| (z.im.abs() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn repeated_eigenvalue_gives_basis() {
        let a = identity(2) * c(3.0, 0.0);
        let pairs = eigenpairs(&a, 1e-9).unwrap();
        assert_eq!(pairs.len(), 2);
        let m = CMat::from_columns(&[pairs[0].1.clone(), pairs[1].1.clone()]);
        assert!(condition_number(&m) < 1.0 + 1e-9);
    }
}
