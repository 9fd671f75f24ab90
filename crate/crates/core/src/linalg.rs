//! Small linear solvers used by the time stepper, the smoothers and the
//! Gaussian-basis fits.

use nalgebra::{DMatrix, DVector};

pub type Mat2 = [[f64; 2]; 2];
pub type Vec2 = [f64; 2];

#[inline]
fn mat_vec(m: &Mat2, x: &Vec2) -> Vec2 {
    [
        m[0][0] * x[0] + m[0][1] * x[1],
        m[1][0] * x[0] + m[1][1] * x[1],
    ]
}

#[inline]
fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

#[inline]
fn mat_sub(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] - b[0][0], a[0][1] - b[0][1]],
        [a[1][0] - b[1][0], a[1][1] - b[1][1]],
    ]
}

#[inline]
fn inverse(m: &Mat2) -> Option<Mat2> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some([
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ])
}

/// Solves a block-tridiagonal system with 2x2 blocks in place.
///
/// Row `i` reads `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]`;
/// `lower[0]` and `upper[n-1]` are ignored. Returns `None` on a singular
/// pivot block.
pub fn solve_block_tridiagonal(
    lower: &[Mat2],
    diag: &[Mat2],
    upper: &[Mat2],
    rhs: &mut [Vec2],
) -> Option<()> {
    let n = rhs.len();
    debug_assert!(lower.len() == n && diag.len() == n && upper.len() == n);
    if n == 0 {
        return Some(());
    }
    // c'[i] = D'^-1 U[i], d'[i] = D'^-1 (rhs[i] - L[i] d'[i-1])
    let mut c_prime: Vec<Mat2> = Vec::with_capacity(n);
    let inv0 = inverse(&diag[0])?;
    c_prime.push(mat_mul(&inv0, &upper[0]));
    rhs[0] = mat_vec(&inv0, &rhs[0]);
    for i in 1..n {
        let pivot = mat_sub(&diag[i], &mat_mul(&lower[i], &c_prime[i - 1]));
        let inv = inverse(&pivot)?;
        c_prime.push(mat_mul(&inv, &upper[i]));
        let lx = mat_vec(&lower[i], &rhs[i - 1]);
        let r = [rhs[i][0] - lx[0], rhs[i][1] - lx[1]];
        rhs[i] = mat_vec(&inv, &r);
    }
    for i in (0..n - 1).rev() {
        let cx = mat_vec(&c_prime[i], &rhs[i + 1]);
        rhs[i] = [rhs[i][0] - cx[0], rhs[i][1] - cx[1]];
    }
    Some(())
}

/// Symmetric positive definite band matrix, lower band storage.
///
/// `band[i][k]` holds entry `(i, i - k)` for `k = 0..=bandwidth`.
#[derive(Debug, Clone)]
pub struct BandedSpd {
    n: usize,
    bandwidth: usize,
    band: Vec<Vec<f64>>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        BandedSpd {
            n,
            bandwidth,
            band: vec![vec![0.0; bandwidth + 1]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Adds `value` to entry `(i, j)` (and by symmetry `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let k = r - c;
        assert!(k <= self.bandwidth, "entry ({i}, {j}) outside band");
        self.band[r][k] += value;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let k = r - c;
        if k > self.bandwidth {
            0.0
        } else {
            self.band[r][k]
        }
    }

    /// In-place banded Cholesky followed by the two triangular solves.
    /// Returns `None` if the matrix is not numerically positive definite.
    pub fn solve(mut self, rhs: &mut [f64]) -> Option<()> {
        let n = self.n;
        let p = self.bandwidth;
        assert_eq!(rhs.len(), n);
        for i in 0..n {
            let j0 = i.saturating_sub(p);
            for j in j0..=i {
                let mut s = self.band[i][i - j];
                let k0 = j0.max(j.saturating_sub(p));
                for k in k0..j {
                    s -= self.band[i][i - k] * self.band[j][j - k];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return None;
                    }
                    self.band[i][0] = s.sqrt();
                } else {
                    self.band[i][i - j] = s / self.band[j][0];
                }
            }
        }
        for i in 0..n {
            let mut s = rhs[i];
            for k in i.saturating_sub(p)..i {
                s -= self.band[i][i - k] * rhs[k];
            }
            rhs[i] = s / self.band[i][0];
        }
        for i in (0..n).rev() {
            let mut s = rhs[i];
            for k in i + 1..(i + p + 1).min(n) {
                s -= self.band[k][k - i] * rhs[k];
            }
            rhs[i] = s / self.band[i][0];
        }
        Some(())
    }
}

/// Outcome of a regularized least-squares solve.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coeffs: Vec<f64>,
    /// Euclidean norm of `A c - y` (data part only).
    pub residual: f64,
}

/// Minimizes `|A c - y|^2 + sum_k penalty[k] c_k^2` through a QR
/// factorization of the stacked system `[A; diag(sqrt(penalty))]`.
///
/// Returns `None` when the stacked matrix is numerically rank deficient.
pub fn penalized_least_squares(
    a: &DMatrix<f64>,
    y: &[f64],
    penalty: &[f64],
) -> Option<LeastSquares> {
    let (m, n) = a.shape();
    assert_eq!(y.len(), m);
    assert_eq!(penalty.len(), n);
    let mut stacked = DMatrix::<f64>::zeros(m + n, n);
    stacked.view_mut((0, 0), (m, n)).copy_from(a);
    let mut rhs = DVector::<f64>::zeros(m + n);
    rhs.rows_mut(0, m).copy_from_slice(y);
    for (k, &p) in penalty.iter().enumerate() {
        stacked[(m + k, k)] = p.max(0.0).sqrt();
    }
    let qr = stacked.qr();
    let r = qr.r();
    let rmax = (0..n).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
    if rmax == 0.0 || (0..n).any(|k| r[(k, k)].abs() <= 1e-13 * rmax) {
        return None;
    }
    let qty = qr.q().transpose() * &rhs;
    let c = r.solve_upper_triangular(&qty.rows(0, n).into_owned())?;
    let fitted = a * &c;
    let residual = fitted
        .iter()
        .zip(y)
        .map(|(f, y)| (f - y) * (f - y))
        .sum::<f64>()
        .sqrt();
    Some(LeastSquares {
        coeffs: c.iter().copied().collect(),
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_tridiagonal_matches_dense_solve() {
        let n = 7;
        let mut lower = vec![[[0.0; 2]; 2]; n];
        let mut diag = vec![[[0.0; 2]; 2]; n];
        let mut upper = vec![[[0.0; 2]; 2]; n];
        let mut dense = DMatrix::<f64>::zeros(2 * n, 2 * n);
        for i in 0..n {
            let fi = i as f64;
            diag[i] = [[4.0 + 0.1 * fi, 0.3], [-0.2, 5.0 - 0.05 * fi]];
            if i > 0 {
                lower[i] = [[-1.0, 0.1 * fi], [0.05, -1.2]];
            }
            if i + 1 < n {
                upper[i] = [[-0.9, 0.0], [0.2, -1.1]];
            }
            for a in 0..2 {
                for b in 0..2 {
                    dense[(2 * i + a, 2 * i + b)] = diag[i][a][b];
                    if i > 0 {
                        dense[(2 * i + a, 2 * (i - 1) + b)] = lower[i][a][b];
                    }
                    if i + 1 < n {
                        dense[(2 * i + a, 2 * (i + 1) + b)] = upper[i][a][b];
                    }
                }
            }
        }
        let mut rhs: Vec<Vec2> = (0..n).map(|i| [i as f64, 1.0 - i as f64 * 0.5]).collect();
        let flat = DVector::from_iterator(2 * n, rhs.iter().flat_map(|r| r.iter().copied()));
        let expected = dense.lu().solve(&flat).unwrap();
        solve_block_tridiagonal(&lower, &diag, &upper, &mut rhs).unwrap();
        for i in 0..n {
            for a in 0..2 {
                assert!((rhs[i][a] - expected[2 * i + a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn banded_cholesky_matches_dense() {
        let n = 9;
        let mut m = BandedSpd::zeros(n, 2);
        for i in 0..n {
            m.add(i, i, 6.0 + i as f64 * 0.1);
            if i >= 1 {
                m.add(i, i - 1, -4.0 * 0.5);
            }
            if i >= 2 {
                m.add(i, i - 2, 1.0);
            }
        }
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                dense[(i, j)] = m.get(i, j);
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let expected = dense.lu().solve(&DVector::from_vec(b.clone())).unwrap();
        let mut x = b;
        m.solve(&mut x).unwrap();
        for i in 0..n {
            assert!((x[i] - expected[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn banded_cholesky_rejects_indefinite() {
        let mut m = BandedSpd::zeros(3, 1);
        m.add(0, 0, 1.0);
        m.add(1, 1, -1.0);
        m.add(2, 2, 1.0);
        assert!(m.solve(&mut [1.0, 1.0, 1.0]).is_none());
    }

    #[test]
    fn penalized_least_squares_recovers_exact_solution() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = [1.0, 3.0, 5.0, 7.0];
        let ls = penalized_least_squares(&a, &y, &[0.0, 0.0]).unwrap();
        assert!((ls.coeffs[0] - 1.0).abs() < 1e-12);
        assert!((ls.coeffs[1] - 2.0).abs() < 1e-12);
        assert!(ls.residual < 1e-12);
        let zero_col = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        assert!(penalized_least_squares(&zero_col, &[1.0, 2.0], &[0.0, 0.0]).is_none());
        assert!(penalized_least_squares(&zero_col, &[1.0, 2.0], &[0.0, 1e-6]).is_some());
    }
}
