//! Small symmetric solves for the per-group least-squares refit.

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 64;

/// Cyclic Jacobi eigendecomposition of a symmetric `n x n` matrix.
///
/// On return `a` holds the eigenvalues on its diagonal and `v` (row-major)
/// holds the eigenvectors as columns.
fn jacobi_eigen(a: &mut [f64], v: &mut [f64], n: usize) {
    v.fill(0.0);
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        let mut diag = 0.0;
        for i in 0..n {
            diag += a[i * n + i] * a[i * n + i];
            for j in (i + 1)..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off <= 1e-32 * diag || off == 0.0 {
            return;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
}

/// Minimum-norm solution of `a x = b` for symmetric positive semi-definite
/// `a` (row-major, `n x n`), i.e. `x = pinv(a) b`.
///
/// `a` is consumed as scratch.
pub fn min_norm_solve(a: &mut [f64], b: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);
    let mut v = vec![0.0; n * n];
    jacobi_eigen(a, &mut v, n);
    let lambda_max = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    let cutoff = lambda_max * RANK_TOL;
    let mut x = vec![0.0; n];
    if lambda_max == 0.0 {
        return x;
    }
    for e in 0..n {
        let lambda = a[e * n + e];
        if lambda <= cutoff {
            continue;
        }
        let proj: f64 = (0..n).map(|k| v[k * n + e] * b[k]).sum();
        let coef = proj / lambda;
        for k in 0..n {
            x[k] += coef * v[k * n + e];
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_well_conditioned_system() {
        let mut a = vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let a0 = a.clone();
        let x_true = [1.0, -2.0, 0.5];
        let b: Vec<f64> = (0..3)
            .map(|i| (0..3).map(|j| a0[i * 3 + j] * x_true[j]).sum())
            .collect();
        let x = min_norm_solve(&mut a, &b, 3);
        for (xi, ti) in x.iter().zip(x_true) {
            assert!((xi - ti).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficient_gives_minimum_norm() {
        // a = [[1,1],[1,1]], b = [2,2]: solutions x0 + x1 = 2, min-norm (1,1).
        let mut a = vec![1.0, 1.0, 1.0, 1.0];
        let x = min_norm_solve(&mut a, &[2.0, 2.0], 2);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_gives_zero() {
        let mut a = vec![0.0; 4];
        assert_eq!(min_norm_solve(&mut a, &[1.0, 1.0], 2), vec![0.0, 0.0]);
    }
}
