//! Discretization substrate: a periodic spatial grid with a unitary DFT, a
//! symmetric time grid, and the Sobolev-type norms built on them.
//!
//! The spatial transform is normalized so that
//! `(L/N) * sum_n |u_hat_n|^2` equals the trapezoid quadrature of `|u|^2`,
//! which makes `sobolev_norm(u, 0)` the plain L² norm on the torus.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{KgError, Result};
use crate::system::TwoComponent;

pub type C64 = Complex64;

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

pub(crate) fn fft_plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((n, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

/// Unitary in-place DFT (forward uses `e^{-ikx}`).
pub(crate) fn unitary_fft(buf: &mut [C64], inverse: bool) {
    let n = buf.len();
    fft_plan(n, inverse).process(buf);
    let s = 1.0 / (n as f64).sqrt();
    buf.iter_mut().for_each(|z| *z *= s);
}

/// Periodic grid `x_j = -L/2 + jL/N` on a torus of length `L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    n: usize,
    length: f64,
}

impl SpatialGrid {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 8 || n % 2 != 0 {
            return Err(KgError::InvalidGrid(format!(
                "point count must be even and >= 8, got {n}"
            )));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(KgError::InvalidGrid(format!(
                "length must be positive, got {length}"
            )));
        }
        Ok(Self { n, length })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        -0.5 * self.length + j as f64 * self.dx()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Integer mode label of FFT slot `i`, in `[-N/2, N/2)`.
    pub fn mode_index(&self, i: usize) -> i64 {
        let half = (self.n / 2) as i64;
        let i = i as i64;
        if i < half {
            i
        } else {
            i - self.n as i64
        }
    }

    /// Wavenumbers `k_n = 2 pi n / L` in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| 2.0 * PI * self.mode_index(i) as f64 / self.length)
            .collect()
    }

    /// Wavenumbers used for differentiation: the Nyquist mode is zeroed so
    /// that the derivative is real and skew-symmetric.
    pub fn derivative_wavenumbers(&self) -> Vec<f64> {
        let nyq = self.n / 2;
        let mut k = self.wavenumbers();
        k[nyq] = 0.0;
        k
    }

    /// Dense real matrix of the spectral first derivative (Nyquist dropped).
    /// It is exactly skew-symmetric.
    pub fn derivative_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        let h = 2.0 * PI / n as f64;
        let scale = 2.0 * PI / self.length;
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                let d = (i as f64 - j as f64) * h;
                // d/dx of the trigonometric interpolant with the Nyquist term
                // symmetrized away: 0.5 (-1)^{i-j} cot((x_i - x_j)/2).
                let sign = if (i + n - j) % 2 == 0 { 1.0 } else { -1.0 };
                0.5 * sign * scale / (0.5 * d).tan()
            }
        })
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(KgError::SizeMismatch {
                expected: self.n,
                got: len,
            });
        }
        Ok(())
    }
}

/// Mode coefficients in FFT order under the unitary normalization.
#[derive(Debug, Clone)]
pub struct ModeVector {
    pub grid: SpatialGrid,
    pub coeffs: Vec<C64>,
}

impl ModeVector {
    pub fn idft(&self) -> GridFunction {
        let mut buf = self.coeffs.clone();
        unitary_fft(&mut buf, true);
        GridFunction {
            grid: self.grid,
            values: buf,
        }
    }
}

/// Complex samples of a function on a [`SpatialGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: SpatialGrid,
    values: Vec<C64>,
}

impl GridFunction {
    pub fn new(grid: SpatialGrid, values: Vec<C64>) -> Result<Self> {
        grid.check(values.len())?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: SpatialGrid) -> Self {
        Self {
            grid,
            values: vec![C64::new(0.0, 0.0); grid.n],
        }
    }

    pub fn from_fn(grid: SpatialGrid, f: impl Fn(f64) -> C64) -> Self {
        Self {
            grid,
            values: grid.nodes().into_iter().map(f).collect(),
        }
    }

    pub fn grid(&self) -> SpatialGrid {
        self.grid
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn scale(&self, c: C64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &GridFunction) -> Result<Self> {
        self.grid.check(other.values.len())?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &GridFunction) -> Result<Self> {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    /// Trapezoid L² inner product `(u|v) = dx * sum conj(u) v`.
    pub fn inner(&self, other: &GridFunction) -> C64 {
        self.grid.dx()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a.conj() * b)
                .sum::<C64>()
    }

    pub fn l2_norm(&self) -> f64 {
        (self.grid.dx() * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Spectral derivative (Nyquist mode dropped).
    pub fn derivative(&self) -> GridFunction {
        let mut m = dft(self);
        let k = self.grid.derivative_wavenumbers();
        for (c, kk) in m.coeffs.iter_mut().zip(k) {
            *c *= C64::new(0.0, kk);
        }
        m.idft()
    }
}

/// Unitary DFT of a grid function.
pub fn dft(u: &GridFunction) -> ModeVector {
    let mut buf = u.values.clone();
    unitary_fft(&mut buf, false);
    ModeVector {
        grid: u.grid,
        coeffs: buf,
    }
}

/// Inverse of [`dft`].
pub fn idft(m: &ModeVector) -> GridFunction {
    m.idft()
}

/// `||u||_{H^m}^2 = (L/N) sum_n (1 + k_n^2)^m |u_hat_n|^2`.
pub fn sobolev_norm(u: &GridFunction, m: f64) -> f64 {
    sobolev_norm_sq(u, m).sqrt()
}

pub(crate) fn sobolev_norm_sq(u: &GridFunction, m: f64) -> f64 {
    let modes = dft(u);
    let k = u.grid.wavenumbers();
    u.grid.dx()
        * modes
            .coeffs
            .iter()
            .zip(k)
            .map(|(c, kk)| (1.0 + kk * kk).powf(m) * c.norm_sqr())
            .sum::<f64>()
}

/// Energy norm on `H^{m+1} (+) H^m`.
pub fn energy_norm(f: &TwoComponent, m: f64) -> f64 {
    (sobolev_norm_sq(&f.c0, m + 1.0) + sobolev_norm_sq(&f.c1, m)).sqrt()
}

/// Symmetric time grid on `[-T_max, T_max]` with an even number of steps,
/// so that `t = 0` is a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_max: f64,
    nt: usize,
}

impl TimeGrid {
    pub fn new(t_max: f64, nt: usize) -> Result<Self> {
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(KgError::InvalidGrid(format!(
                "T_max must be positive, got {t_max}"
            )));
        }
        if nt < 2 || nt % 2 != 0 {
            return Err(KgError::InvalidGrid(format!(
                "step count must be even and >= 2, got {nt}"
            )));
        }
        Ok(Self { t_max, nt })
    }

    /// Grid with step closest to `dt` (rounded so the step count is even).
    pub fn with_step(t_max: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(KgError::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        let half = (t_max / dt).round().max(1.0) as usize;
        Self::new(t_max, 2 * half)
    }

    pub fn t_min(&self) -> f64 {
        -self.t_max
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn steps(&self) -> usize {
        self.nt
    }

    pub fn node_count(&self) -> usize {
        self.nt + 1
    }

    pub fn dt(&self) -> f64 {
        2.0 * self.t_max / self.nt as f64
    }

    pub fn t(&self, n: usize) -> f64 {
        // symmetric formula keeps t(nt/2) == 0 exactly
        (2.0 * n as f64 - self.nt as f64) * self.t_max / self.nt as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.nt).map(|n| self.t(n)).collect()
    }

    /// Index of the node at time `t` (within a relative tolerance of dt).
    pub fn node_index(&self, t: f64) -> Result<usize> {
        let x = (t - self.t_min()) / self.dt();
        let n = x.round();
        if (x - n).abs() > 1e-9 || n < 0.0 || n > self.nt as f64 {
            return Err(KgError::OffGrid(t));
        }
        Ok(n as usize)
    }

    /// Trapezoid weights.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..=self.nt)
            .map(|n| if n == 0 || n == self.nt { 0.5 * dt } else { dt })
            .collect()
    }
}

/// Complex samples on the full `(t, x)` grid, row-major in time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpacetimeFunction {
    space: SpatialGrid,
    time: TimeGrid,
    values: Vec<C64>,
}

impl SpacetimeFunction {
    pub fn zeros(space: SpatialGrid, time: TimeGrid) -> Self {
        Self {
            space,
            time,
            values: vec![C64::new(0.0, 0.0); space.n * time.node_count()],
        }
    }

    pub fn new(space: SpatialGrid, time: TimeGrid, values: Vec<C64>) -> Result<Self> {
        let expected = space.n * time.node_count();
        if values.len() != expected {
            return Err(KgError::SizeMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            space,
            time,
            values,
        })
    }

    pub fn from_fn(space: SpatialGrid, time: TimeGrid, f: impl Fn(f64, f64) -> C64) -> Self {
        let xs = space.nodes();
        let mut values = Vec::with_capacity(space.n * time.node_count());
        for n in 0..time.node_count() {
            let t = time.t(n);
            values.extend(xs.iter().map(|&x| f(t, x)));
        }
        Self {
            space,
            time,
            values,
        }
    }

    pub fn from_rows(space: SpatialGrid, time: TimeGrid, rows: &[Vec<C64>]) -> Result<Self> {
        if rows.len() != time.node_count() {
            return Err(KgError::SizeMismatch {
                expected: time.node_count(),
                got: rows.len(),
            });
        }
        let mut values = Vec::with_capacity(space.n * rows.len());
        for r in rows {
            space.check(r.len())?;
            values.extend_from_slice(r);
        }
        Ok(Self {
            space,
            time,
            values,
        })
    }

    pub fn space(&self) -> SpatialGrid {
        self.space
    }

    pub fn time(&self) -> TimeGrid {
        self.time
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.time.node_count(), self.space.n)
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn row(&self, n: usize) -> &[C64] {
        &self.values[n * self.space.n..(n + 1) * self.space.n]
    }

    pub fn row_mut(&mut self, n: usize) -> &mut [C64] {
        let s = self.space.n;
        &mut self.values[n * s..(n + 1) * s]
    }

    pub fn slice(&self, n: usize) -> GridFunction {
        GridFunction {
            grid: self.space,
            values: self.row(n).to_vec(),
        }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self {
            space: self.space,
            time: self.time,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn axpy(&self, a: C64, other: &SpacetimeFunction) -> Result<Self> {
        if other.values.len() != self.values.len() {
            return Err(KgError::SizeMismatch {
                expected: self.values.len(),
                got: other.values.len(),
            });
        }
        Ok(Self {
            space: self.space,
            time: self.time,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x + a * y)
                .collect(),
        })
    }

    pub fn sub(&self, other: &SpacetimeFunction) -> Result<Self> {
        self.axpy(C64::new(-1.0, 0.0), other)
    }

    /// Discrete L²(dt dx) norm over the whole grid (trapezoid in t).
    pub fn l2_norm(&self) -> f64 {
        let w = self.time.trapezoid_weights();
        let dx = self.space.dx();
        (0..self.time.node_count())
            .map(|n| w[n] * dx * self.row(n).iter().map(|v| v.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// `<t> = (1 + t^2)^{1/2}`.
pub fn japanese(t: f64) -> f64 {
    (1.0 + t * t).sqrt()
}

/// Weighted norm `|| <t>^gamma v ||_{L^2(R; H^m)}`, trapezoid in time.
///
/// `gamma` must lie in `(1/2, 1/2 + delta)`.
pub fn ynorm(v: &SpacetimeFunction, m: f64, gamma: f64, delta: f64) -> Result<f64> {
    if !(gamma > 0.5 && gamma < 0.5 + delta) {
        return Err(KgError::config(
            "gamma",
            format!("must lie in (1/2, 1/2 + delta) = (0.5, {}), got {gamma}", 0.5 + delta),
        ));
    }
    Ok(ynorm_unchecked(v, m, gamma))
}

pub(crate) fn ynorm_unchecked(v: &SpacetimeFunction, m: f64, gamma: f64) -> f64 {
    let w = v.time.trapezoid_weights();
    (0..v.time.node_count())
        .map(|n| {
            let t = v.time.t(n);
            w[n] * japanese(t).powf(2.0 * gamma) * sobolev_norm_sq(&v.slice(n), m)
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fn(grid: SpatialGrid, seed: u64) -> GridFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..grid.len())
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        GridFunction::new(grid, vals).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(SpatialGrid::new(6, 1.0).is_err());
        assert!(SpatialGrid::new(9, 1.0).is_err());
        assert!(SpatialGrid::new(8, 0.0).is_err());
        assert!(TimeGrid::new(1.0, 3).is_err());
        let tg = TimeGrid::new(5.0, 10).unwrap();
        assert_eq!(tg.t(5), 0.0);
        assert_eq!(tg.node_index(0.0).unwrap(), 5);
        assert!(tg.node_index(0.3).is_err());
    }

    #[test]
    fn plane_wave_is_single_mode() {
        let g = SpatialGrid::new(16, 2.0 * PI).unwrap();
        let u = GridFunction::from_fn(g, |x| C64::new(0.0, x).exp());
        let m = dft(&u);
        for (i, c) in m.coeffs.iter().enumerate() {
            if g.mode_index(i) == 1 {
                assert!(c.norm() > 1.0);
            } else {
                assert!(c.norm() < 1e-12, "mode {i}: {c}");
            }
        }
        let one = GridFunction::from_fn(g, |_| C64::new(1.0, 0.0));
        let m = dft(&one);
        assert!(m.coeffs.iter().skip(1).all(|c| c.norm() < 1e-12));
    }

    #[test]
    fn parseval_and_round_trip() {
        let g = SpatialGrid::new(64, 7.0).unwrap();
        let u = random_fn(g, 3);
        let m = dft(&u);
        let lhs = g.dx() * m.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>();
        let quad = u.l2_norm().powi(2);
        assert!((lhs - quad).abs() < 1e-12 * quad);
        let back = m.idft();
        for (a, b) in back.values().iter().zip(u.values()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn sobolev_examples() {
        let g = SpatialGrid::new(32, 2.0 * PI).unwrap();
        let one = GridFunction::from_fn(g, |_| C64::new(1.0, 0.0));
        assert!((sobolev_norm(&one, 0.0) - (2.0 * PI).sqrt()).abs() < 1e-12);
        let e = GridFunction::from_fn(g, |x| C64::new(0.0, x).exp());
        assert!((sobolev_norm(&e, 1.0) - (4.0 * PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sobolev_two_matches_weighted_quadrature() {
        // (1 - d^2)^2 applied spectrally in physical space, then paired with u.
        let g = SpatialGrid::new(48, 10.0).unwrap();
        let u = GridFunction::from_fn(g, |x| C64::new((-x * x).exp(), 0.3 * (-(x - 1.0).powi(2)).exp()));
        let d2 = |f: &GridFunction| f.derivative().derivative();
        let a = u.sub(&d2(&u)).unwrap();
        let aa = a.sub(&d2(&a)).unwrap();
        let quad = u.inner(&aa).re;
        let s = sobolev_norm(&u, 2.0).powi(2);
        assert!((quad - s).abs() < 1e-10 * s, "{quad} vs {s}");
    }

    #[test]
    fn energy_norm_examples() {
        let g = SpatialGrid::new(16, 2.0 * PI).unwrap();
        let zero = GridFunction::zeros(g);
        assert_eq!(energy_norm(&TwoComponent::new(zero.clone(), zero.clone()).unwrap(), 0.0), 0.0);
        let one = GridFunction::from_fn(g, |_| C64::new(1.0, 0.0));
        let f = TwoComponent::new(one, zero).unwrap();
        assert!((energy_norm(&f, 0.0) - (2.0 * PI).sqrt()).abs() < 1e-12);
        let e = GridFunction::from_fn(g, |x| C64::new(0.0, x).exp());
        let f = TwoComponent::new(e.clone(), e).unwrap();
        assert!((energy_norm(&f, 0.0) - (6.0 * PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn derivative_matrix_matches_fft_derivative() {
        let g = SpatialGrid::new(16, 3.0).unwrap();
        let d = g.derivative_matrix();
        assert!((&d + d.transpose()).abs().max() < 1e-13);
        let u = random_fn(g, 11);
        let du = u.derivative();
        for i in 0..16 {
            let s: C64 = (0..16).map(|j| u.values()[j] * d[(i, j)]).sum();
            assert!((s - du.values()[i]).norm() < 1e-11);
        }
    }

    #[test]
    fn ynorm_examples() {
        let sg = SpatialGrid::new(8, 2.0 * PI).unwrap();
        let tg = TimeGrid::new(2.0, 4000).unwrap();
        let zero = SpacetimeFunction::zeros(sg, tg);
        assert_eq!(ynorm(&zero, 0.0, 1.0, 1.5).unwrap(), 0.0);
        assert!(ynorm(&zero, 0.0, 0.4, 1.5).is_err());
        assert!(ynorm(&zero, 0.0, 2.0, 1.5).is_err());
        // Indicator of [0,1] in t: quadrature oracle (4/3) 2 pi, O(dt) error
        // from the jumps.
        let v = SpacetimeFunction::from_fn(sg, tg, |t, _| {
            C64::new(if (0.0..=1.0).contains(&t) { 1.0 } else { 0.0 }, 0.0)
        });
        let got = ynorm(&v, 0.0, 1.0, 1.5).unwrap();
        let exact = (4.0 / 3.0 * 2.0 * PI).sqrt();
        assert!((got - exact).abs() < 2.0 * tg.dt() * exact, "{got} vs {exact}");
        let scaled = ynorm(&v.scale(C64::new(0.0, -3.0)), 0.0, 1.0, 1.5).unwrap();
        assert!((scaled - 3.0 * got).abs() < 1e-12 * got);
    }

    #[test]
    fn sobolev_monotone_in_order() {
        let g = SpatialGrid::new(32, 5.0).unwrap();
        let u = random_fn(g, 5);
        let mut prev = 0.0;
        for m in [-1.0, 0.0, 0.5, 1.0, 2.0] {
            let s = sobolev_norm(&u, m);
            assert!(s >= prev);
            prev = s;
        }
    }
}
