//! Thin QR and thin SVD for tall matrices.

use crate::error::{GeoError, Result};
use crate::numerics::Matrix;

pub const RANK_TOL: f64 = 1e-12;

/// Thin QR by modified Gram–Schmidt with one reorthogonalization pass.
/// `diag(R) > 0` by construction.
pub fn thin_qr(m: &Matrix) -> Result<(Matrix, Matrix)> {
    let (n, k) = m.shape();
    if n < k {
        return Err(GeoError::Dimension(format!(
            "thin QR needs rows >= cols, got {n}x{k}"
        )));
    }
    let mut cols: Vec<Vec<f64>> = (0..k)
        .map(|j| (0..n).map(|i| m.get(i, j)).collect())
        .collect();
    let mut r = Matrix::zeros(k, k);
    for j in 0..k {
        let mut v = std::mem::take(&mut cols[j]);
        for _pass in 0..2 {
            for (i, qi) in cols.iter().enumerate().take(j) {
                let proj: f64 = qi.iter().zip(&v).map(|(a, b)| a * b).sum();
                r.set(i, j, r.get(i, j) + proj);
                for (x, q) in v.iter_mut().zip(qi) {
                    *x -= proj * q;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < RANK_TOL {
            return Err(GeoError::Rank(format!(
                "column {j} is linearly dependent (|R_jj| = {norm:.3e})"
            )));
        }
        r.set(j, j, norm);
        v.iter_mut().for_each(|x| *x /= norm);
        cols[j] = v;
    }
    let mut q = Matrix::zeros(n, k);
    for (j, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            q.set(i, j, x);
        }
    }
    Ok((q, r))
}

/// Thin SVD `m = U·diag(σ)·Vᵀ` by one-sided Jacobi rotations.
///
/// Singular values are sorted descending. Each right singular vector is
/// signed so its first nonzero entry is positive.
pub fn thin_svd(m: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (n, k) = m.shape();
    if n < k {
        return Err(GeoError::Dimension(format!(
            "thin SVD needs rows >= cols, got {n}x{k}"
        )));
    }
    let mut u: Vec<Vec<f64>> = (0..k)
        .map(|j| (0..n).map(|i| m.get(i, j)).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..k)
        .map(|j| (0..k).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let alpha: f64 = u[p].iter().map(|x| x * x).sum();
                let beta: f64 = u[q].iter().map(|x| x * x).sum();
                let gamma: f64 = u[p].iter().zip(&u[q]).map(|(a, b)| a * b).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut u, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma: Vec<f64> = u
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
    if let Some(&last) = order.last() {
        if sigma[last] < RANK_TOL {
            return Err(GeoError::Rank(format!(
                "smallest singular value {:.3e} below tolerance",
                sigma[last]
            )));
        }
    }

    let mut u_out = Matrix::zeros(n, k);
    let mut v_out = Matrix::zeros(k, k);
    let mut sorted_sigma = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        let s = sigma[src];
        let first = v[src]
            .iter()
            .copied()
            .find(|x| x.abs() > 1e-14)
            .unwrap_or(1.0);
        let sign = if first < 0.0 { -1.0 } else { 1.0 };
        for (i, x) in u[src].iter().enumerate() {
            u_out.set(i, dst, sign * x / s);
        }
        for (i, x) in v[src].iter().enumerate() {
            v_out.set(i, dst, sign * x);
        }
        sorted_sigma.push(s);
    }
    sigma.clear();
    Ok((u_out, sorted_sigma, v_out))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
        let x = *a;
        let y = *b;
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn qr_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Matrix::random_uniform(9, 4, 1.0, &mut rng);
        let (q, r) = thin_qr(&m).unwrap();
        assert!(q.matmul(&r).unwrap().max_abs_diff(&m).unwrap() < 1e-12);
        for i in 0..4 {
            assert!(r.get(i, i) > 0.0);
            for j in 0..i {
                assert_eq!(r.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn svd_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Matrix::random_uniform(10, 5, 1.0, &mut rng);
        let (u, s, v) = thin_svd(&m).unwrap();
        let mut us = u.clone();
        for r in 0..us.rows() {
            for (c, x) in us.row_mut(r).iter_mut().enumerate() {
                *x *= s[c];
            }
        }
        let back = us.matmul(&v.transpose()).unwrap();
        assert!(back.max_abs_diff(&m).unwrap() < 1e-12);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        let vtv = v.matmul_tn(&v).unwrap();
        assert!(vtv.max_abs_diff(&Matrix::identity(5)).unwrap() < 1e-12);
    }

    #[test]
    fn rank_deficiency_detected() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        assert!(matches!(thin_qr(&m), Err(GeoError::Rank(_))));
        assert!(matches!(thin_svd(&m), Err(GeoError::Rank(_))));
    }
}
