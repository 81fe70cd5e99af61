//! Small numerical kernels shared by the modules: functions of real
//! symmetric matrices, their Fréchet derivatives, finite-difference weights,
//! Gauss-Legendre rules and log-log regression.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{KgError, Result};
use crate::grid::C64;

/// Eigendecomposition `A = Q diag(lambda) Q^T` of a real symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEig {
    pub fn new(a: &DMatrix<f64>) -> Self {
        // symmetrize against roundoff in assembled operators
        let sym = 0.5 * (a + a.transpose());
        let eig = SymmetricEigen::new(sym);
        Self {
            values: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Coefficients of `x` in the eigenbasis, `Q^T x`.
    pub fn to_eigenbasis(&self, x: &[C64]) -> Vec<C64> {
        real_tmatvec(&self.vectors, x)
    }

    pub fn from_eigenbasis(&self, c: &[C64]) -> Vec<C64> {
        real_matvec(&self.vectors, c)
    }

    /// `f(A) x` for a complex-valued spectral function.
    pub fn apply_fn(&self, f: impl Fn(f64) -> C64, x: &[C64]) -> Vec<C64> {
        let mut c = self.to_eigenbasis(x);
        for (ci, &l) in c.iter_mut().zip(&self.values) {
            *ci *= f(l);
        }
        self.from_eigenbasis(&c)
    }

    /// `f(A) x` for a real spectral function.
    pub fn apply_real_fn(&self, f: impl Fn(f64) -> f64, x: &[C64]) -> Vec<C64> {
        self.apply_fn(|l| C64::new(f(l), 0.0), x)
    }

    /// The dense matrix `f(A)`.
    pub fn matrix_fn(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.dim();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let s = f(self.values[j]);
            scaled.column_mut(j).scale_mut(s);
        }
        scaled * self.vectors.transpose()
    }

    /// Fréchet derivative of `f` at `A` in direction `E`, expressed in the
    /// eigenbasis: `(F o (Q^T E Q))` with `F` the first divided differences
    /// of `f` (Daleckii-Krein).
    pub fn frechet_eigenbasis(
        &self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
        direction: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let m = self.vectors.transpose() * direction * &self.vectors;
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| {
            m[(i, j)] * divided_difference(&f, &df, self.values[i], self.values[j])
        })
    }
}

fn divided_difference(
    f: &impl Fn(f64) -> f64,
    df: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
) -> f64 {
    let scale = a.abs().max(b.abs()).max(1e-300);
    if (a - b).abs() <= 1e-9 * scale {
        df(0.5 * (a + b))
    } else {
        (f(a) - f(b)) / (a - b)
    }
}

/// `y = A x` for real `A` and complex `x`.
pub fn real_matvec(a: &DMatrix<f64>, x: &[C64]) -> Vec<C64> {
    let (r, c) = a.shape();
    debug_assert_eq!(c, x.len());
    let mut y = vec![C64::new(0.0, 0.0); r];
    for (j, xj) in x.iter().enumerate() {
        let col = a.column(j);
        for (yi, aij) in y.iter_mut().zip(col.iter()) {
            *yi += xj * *aij;
        }
    }
    y
}

/// `y = A^T x` for real `A` and complex `x`.
pub fn real_tmatvec(a: &DMatrix<f64>, x: &[C64]) -> Vec<C64> {
    let (r, c) = a.shape();
    debug_assert_eq!(r, x.len());
    (0..c)
        .map(|j| {
            a.column(j)
                .iter()
                .zip(x)
                .map(|(aij, xi)| xi * *aij)
                .sum::<C64>()
        })
        .collect()
}

pub fn axpy(y: &mut [C64], a: C64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm_sq(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum()
}

/// Fornberg's finite-difference weights for the `order`-th derivative at
/// `x0` from samples at `nodes`.
pub fn fd_weights(x0: f64, nodes: &[f64], order: usize) -> Vec<f64> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

/// First time-derivative of uniformly sampled rows, 7-point stencils
/// (centered inside, shifted at the ends). Sixth-order accurate.
pub fn time_derivative(rows: &[Vec<C64>], dt: f64) -> Vec<Vec<C64>> {
    let len = rows.len();
    let width = 7.min(len);
    let n = rows.first().map_or(0, |r| r.len());
    (0..len)
        .map(|i| {
            let start = i.saturating_sub(width / 2).min(len - width);
            let nodes: Vec<f64> = (start..start + width).map(|j| j as f64).collect();
            let w = fd_weights(i as f64, &nodes, 1);
            let mut out = vec![C64::new(0.0, 0.0); n];
            for (k, wk) in w.iter().enumerate() {
                axpy(&mut out, C64::new(wk / dt, 0.0), &rows[start + k]);
            }
            out
        })
        .collect()
}

/// Midpoint values `x_{n+1/2}` of uniformly sampled rows by cubic Lagrange
/// interpolation (fourth order; one-sided at the ends).
pub fn midpoints(rows: &[Vec<C64>]) -> Vec<Vec<C64>> {
    let len = rows.len();
    let n = rows.first().map_or(0, |r| r.len());
    (0..len.saturating_sub(1))
        .map(|i| {
            if len < 4 {
                let mut out = rows[i].clone();
                axpy(&mut out, C64::new(1.0, 0.0), &rows[i + 1]);
                return out.into_iter().map(|v| 0.5 * v).collect();
            }
            let start = if i == 0 {
                0
            } else if i + 2 >= len {
                len - 4
            } else {
                i - 1
            };
            let nodes: Vec<f64> = (start..start + 4).map(|j| j as f64).collect();
            let w = fd_weights(i as f64 + 0.5, &nodes, 0);
            let mut out = vec![C64::new(0.0, 0.0); n];
            for (k, wk) in w.iter().enumerate() {
                axpy(&mut out, C64::new(*wk, 0.0), &rows[start + k]);
            }
            out
        })
        .collect()
}

/// Gauss-Legendre nodes and weights on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        x[i] = mid - half * z;
        x[n - 1 - i] = mid + half * z;
        let wi = 2.0 * half / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Least-squares slope and intercept of `log y` against `log x`.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(KgError::DegenerateFit(format!(
            "need at least 3 positive points, have {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(KgError::DegenerateFit("abscissae coincide".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// `count` points spaced evenly in `log` between `a` and `b` (both > 0).
pub fn logspace(a: f64, b: f64, count: usize) -> Vec<f64> {
    let (la, lb) = (a.ln(), b.ln());
    (0..count)
        .map(|i| (la + (lb - la) * i as f64 / (count - 1).max(1) as f64).exp())
        .collect()
}

/// Bessel `J_0` by the trapezoid rule on `(1/pi) int_0^pi cos(z sin th) dth`,
/// which converges geometrically for this periodic integrand.
pub fn bessel_j0(z: f64) -> f64 {
    let m = 64 + (2.0 * z.abs()) as usize;
    let h = std::f64::consts::PI / m as f64;
    let s: f64 = (0..m).map(|k| (z * (k as f64 * h).sin()).cos()).sum();
    s / m as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_weights_centered() {
        let w = fd_weights(0.0, &[-1.0, 0.0, 1.0], 1);
        assert!((w[0] + 0.5).abs() < 1e-14 && w[1].abs() < 1e-14 && (w[2] - 0.5).abs() < 1e-14);
        let w = fd_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert!((w[0] - 1.0).abs() < 1e-14 && (w[1] + 2.0).abs() < 1e-14);
    }

    #[test]
    fn time_derivative_is_high_order() {
        let dt = 0.05;
        let rows: Vec<Vec<C64>> = (0..40).map(|n| vec![C64::new((n as f64 * dt).sin(), 0.0)]).collect();
        let d = time_derivative(&rows, dt);
        for (n, r) in d.iter().enumerate() {
            assert!((r[0].re - (n as f64 * dt).cos()).abs() < 1e-8, "n={n}");
        }
    }

    #[test]
    fn midpoint_interpolation() {
        let rows: Vec<Vec<C64>> = (0..10).map(|n| vec![C64::new((0.1 * n as f64).exp(), 0.0)]).collect();
        let m = midpoints(&rows);
        for (n, r) in m.iter().enumerate() {
            let exact = (0.1 * (n as f64 + 0.5)).exp();
            assert!((r[0].re - exact).abs() < 2e-5);
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8, -1.0, 3.0);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(9)).sum();
        let exact = (3f64.powi(10) - 1.0) / 10.0;
        assert!((s - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn bessel_values() {
        assert!((bessel_j0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_j0(1.0) - 0.765_197_686_557_966_6).abs() < 1e-14);
        assert!((bessel_j0(10.0) - (-0.245_935_764_451_348_3)).abs() < 1e-13);
        assert!(bessel_j0(2.404_825_557_695_773).abs() < 1e-13);
    }

    #[test]
    fn frechet_derivative_matches_difference_quotient() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let e = DMatrix::from_row_slice(3, 3, &[0.1, 0.3, 0.0, 0.3, -0.2, 0.1, 0.0, 0.1, 0.4]);
        let eig = SymEig::new(&a);
        let f = |l: f64| l.sqrt();
        let df = |l: f64| 0.5 / l.sqrt();
        let d = &eig.vectors * eig.frechet_eigenbasis(f, df, &e) * eig.vectors.transpose();
        let h = 1e-6;
        let plus = SymEig::new(&(&a + h * &e)).matrix_fn(f);
        let minus = SymEig::new(&(&a - h * &e)).matrix_fn(f);
        let fd = (plus - minus) / (2.0 * h);
        assert!((d - fd).abs().max() < 1e-8);
    }

    #[test]
    fn loglog_recovers_power() {
        let xs = logspace(1.0, 100.0, 9);
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(-1.7)).collect();
        let (s, _) = loglog_fit(&xs, &ys).unwrap();
        assert!((s + 1.7).abs() < 1e-12);
        assert!(loglog_fit(&xs[..2], &ys[..2]).is_err());
    }
}
