//! Independent references for the propagators: exact Fourier multipliers on
//! the flat model, dense solves of the discretized boundary value problems,
//! and the free Klein-Gordon kernels.
//!
//! Fourier convention in time: `u(t) = sum_tau u^(tau) e^{+i tau t}`, so the
//! symbol of `P = d_t^2 + omega^2` is `omega^2 - tau^2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diag::build_frame_static;
use crate::error::{KgError, Result};
use crate::evolve::{EvolutionSpec, Evolver, Family, StepMap};
use crate::grid::{fft_plan, unitary_fft, SpacetimeFunction, SpatialGrid, TimeGrid, C64};
use crate::linalg::{axpy, bessel_j0, gauss_legendre, midpoints};
use crate::model::ReducedModel;
use crate::propagators::{Propagators, SourceSpec};
use crate::system::free_symbol;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplierKind {
    Retarded,
    Advanced,
    Feynman,
    AntiFeynman,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MultiplierSpec {
    pub kind: MultiplierKind,
    pub epsilon: f64,
}

impl MultiplierSpec {
    pub fn new(kind: MultiplierKind, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(KgError::config("oracle.epsilon", format!("must be positive, got {epsilon}")));
        }
        Ok(Self { kind, epsilon })
    }

    /// Regularized symbol `omega^2 - tau^2 (+- i eps)` or with `tau -> tau -+ i eps`.
    ///
    /// Feynman takes `+i eps`: with `e^{+i tau t}` this is the choice whose
    /// output oscillates as `e^{+i omega t}` after the source, matching the
    /// time-domain Feynman inverse.
    fn symbol(&self, omega2: f64, tau: f64) -> C64 {
        let e = self.epsilon;
        let tau = C64::new(tau, 0.0);
        match self.kind {
            MultiplierKind::Feynman => omega2 - tau * tau + C64::new(0.0, e),
            MultiplierKind::AntiFeynman => omega2 - tau * tau - C64::new(0.0, e),
            MultiplierKind::Retarded => {
                let s = tau - C64::new(0.0, e);
                omega2 - s * s
            }
            MultiplierKind::Advanced => {
                let s = tau + C64::new(0.0, e);
                omega2 - s * s
            }
        }
    }

    /// Roots of the regularized symbol in `tau`.
    fn roots(&self, omega2: f64) -> [C64; 2] {
        let e = self.epsilon;
        let w = omega2.sqrt();
        match self.kind {
            MultiplierKind::Feynman => {
                let r = C64::new(omega2, e).sqrt();
                [r, -r]
            }
            MultiplierKind::AntiFeynman => {
                let r = C64::new(omega2, -e).sqrt();
                [r, -r]
            }
            MultiplierKind::Retarded => [C64::new(w, e), C64::new(-w, e)],
            MultiplierKind::Advanced => [C64::new(w, -e), C64::new(-w, -e)],
        }
    }
}

/// Output of [`flat_multiplier`].
#[derive(Debug, Clone)]
pub struct MultiplierOutput {
    pub field: SpacetimeFunction,
    /// `epsilon` is below the frequency resolution `2 pi / (T_max - T_min)`.
    pub ill_conditioned: bool,
}

fn require_flat(model: &ReducedModel) -> Result<()> {
    if model.is_stationary() {
        Ok(())
    } else {
        Err(KgError::InvalidMetric("Fourier multipliers need the flat metric".into()))
    }
}

/// Angular frequencies of an `m`-point periodic grid with step `dt`.
fn tau_grid(m: usize, dt: f64) -> Vec<f64> {
    let w = 2.0 * std::f64::consts::PI / (m as f64 * dt);
    (0..m)
        .map(|j| {
            let k = if j <= m / 2 { j as i64 } else { j as i64 - m as i64 };
            w * k as f64
        })
        .collect()
}

/// Spatial modes of the rows: `out[k][n]`.
fn modes_by_row(v: &SpacetimeFunction) -> Vec<Vec<C64>> {
    let (nt, n) = v.shape();
    let mut out = vec![vec![C64::new(0.0, 0.0); nt]; n];
    for row in 0..nt {
        let mut buf = v.row(row).to_vec();
        unitary_fft(&mut buf, false);
        for k in 0..n {
            out[k][row] = buf[k];
        }
    }
    out
}

fn rows_from_modes(space: SpatialGrid, time: TimeGrid, modes: &[Vec<C64>]) -> Result<SpacetimeFunction> {
    let rows: Vec<Vec<C64>> = (0..time.node_count())
        .map(|r| {
            let mut buf: Vec<C64> = modes.iter().map(|m| m[r]).collect();
            unitary_fft(&mut buf, true);
            buf
        })
        .collect();
    SpacetimeFunction::from_rows(space, time, &rows)
}

/// Divides by the symbol on the periodic time grid of `samples.len()`
/// points; returns values and time derivatives.
fn periodic_solve(spec: &MultiplierSpec, omega2: f64, samples: &[C64], dt: f64) -> (Vec<C64>, Vec<C64>) {
    let m = samples.len();
    let taus = tau_grid(m, dt);
    let mut hat = samples.to_vec();
    fft_plan(m, false).process(&mut hat);
    for (h, &tau) in hat.iter_mut().zip(&taus) {
        *h /= spec.symbol(omega2, tau);
    }
    let mut dhat: Vec<C64> = hat.iter().zip(&taus).map(|(h, &tau)| h * C64::new(0.0, tau)).collect();
    let inv = fft_plan(m, true);
    inv.process(&mut hat);
    inv.process(&mut dhat);
    let s = 1.0 / m as f64;
    (hat.iter().map(|v| v * s).collect(), dhat.iter().map(|v| v * s).collect())
}

/// The raw periodic multiplier on the time grid without its last node (the
/// grid is read as one period). Exact for single spacetime modes.
pub fn periodic_multiplier(model: &ReducedModel, spec: &MultiplierSpec, v: &SpacetimeFunction) -> Result<SpacetimeFunction> {
    require_flat(model)?;
    let time = v.time();
    let sym = free_symbol(model.grid(), model.mass());
    let modes = modes_by_row(v);
    let out: Vec<Vec<C64>> = modes
        .iter()
        .zip(&sym)
        .map(|(m, &w2)| {
            let (mut u, _) = periodic_solve(spec, w2, &m[..time.steps()], time.dt());
            u.push(u[0]);
            u
        })
        .collect();
    rows_from_modes(v.space(), time, &out)
}

/// `u = v^ / P^_eps` on the flat model for a source supported inside the
/// time window.
///
/// The source is zero-padded to twice the window and divided by the symbol
/// on the periodic grid. The periodic solution differs from the one on the
/// line by a homogeneous solution `sum_j A_j e^{i rho_j t}` (roots `rho_j` of
/// the symbol); roots with `Im rho > 0` must be absent before the source and
/// roots with `Im rho < 0` after it, which fixes the `A_j` from the value and
/// derivative at `T_min` and `T_max`.
pub fn flat_multiplier(model: &ReducedModel, spec: &MultiplierSpec, src: &SourceSpec) -> Result<MultiplierOutput> {
    require_flat(model)?;
    let v = src.v();
    let time = v.time();
    let dt = time.dt();
    let m = 2 * time.steps();
    let sym = free_symbol(model.grid(), model.mass());
    let modes = modes_by_row(v);
    let t0 = time.t_min();
    let t1 = time.t_max();
    let out: Vec<Vec<C64>> = modes
        .iter()
        .zip(&sym)
        .map(|(mode, &w2)| {
            let mut samples = vec![C64::new(0.0, 0.0); m];
            samples[..time.node_count()].copy_from_slice(mode);
            let (u, du) = periodic_solve(spec, w2, &samples, dt);
            let roots = spec.roots(w2);
            let fit = |k: usize, t: f64| -> [C64; 2] {
                // u = c0 e^{i r0 t} + c1 e^{i r1 t}, u' = i r0 c0 e.. + i r1 c1 e..
                let i = C64::new(0.0, 1.0);
                let e0 = (i * roots[0] * t).exp();
                let e1 = (i * roots[1] * t).exp();
                let (a, b, c, d) = (e0, e1, i * roots[0] * e0, i * roots[1] * e1);
                let det = a * d - b * c;
                [(d * u[k] - b * du[k]) / det, (a * du[k] - c * u[k]) / det]
            };
            let before = fit(0, t0);
            let after = fit(time.steps(), t1);
            let coef: Vec<C64> = (0..2)
                .map(|j| if roots[j].im > 0.0 { before[j] } else { after[j] })
                .collect();
            (0..time.node_count())
                .map(|k| {
                    let t = time.t(k);
                    let hom: C64 = (0..2).map(|j| coef[j] * (C64::new(0.0, 1.0) * roots[j] * t).exp()).sum();
                    u[k] - hom
                })
                .collect()
        })
        .collect();
    let resolution = 2.0 * std::f64::consts::PI / (time.t_max() - time.t_min());
    Ok(MultiplierOutput {
        field: rows_from_modes(v.space(), time, &out)?,
        ill_conditioned: spec.epsilon < resolution,
    })
}

/// First-order Richardson extrapolation `2 u(eps/2) - u(eps)` of
/// [`flat_multiplier`].
pub fn flat_multiplier_extrapolated(model: &ReducedModel, spec: &MultiplierSpec, src: &SourceSpec) -> Result<MultiplierOutput> {
    let a = flat_multiplier(model, spec, src)?;
    let half = MultiplierSpec::new(spec.kind, 0.5 * spec.epsilon)?;
    let b = flat_multiplier(model, &half, src)?;
    Ok(MultiplierOutput {
        field: b.field.scale(C64::new(2.0, 0.0)).axpy(C64::new(-1.0, 0.0), &a.field)?,
        ill_conditioned: a.ill_conditioned || b.ill_conditioned,
    })
}

/// Result of [`dense_feynman`].
#[derive(Debug, Clone)]
pub struct DenseSolution {
    pub u: SpacetimeFunction,
    /// Smallest singular value of the assembled matrix.
    pub sigma_min: f64,
    /// Largest singular value (so `sigma_max / sigma_min` is the 2-norm condition number).
    pub sigma_max: f64,
    /// `max |A x - b| / max |b|` after the solve.
    pub residual: f64,
}

/// Assembles the centered scheme for `z'' + S_n z = b_n` with Feynman rows.
/// `s_at(n)` gives `S` at node `n`; `ep`/`em` are `(E^+, E^-)` at `T_min`
/// and `T_max`.
fn assemble_centered(
    d: usize,
    time: TimeGrid,
    s_at: &dyn Fn(usize) -> DMatrix<f64>,
    bc_min: &(DMatrix<f64>, DMatrix<f64>),
    bc_max: &(DMatrix<f64>, DMatrix<f64>),
) -> DMatrix<C64> {
    let nt = time.steps();
    let dt = time.dt();
    let size = (nt + 1) * d;
    let mut a = DMatrix::<C64>::zeros(size, size);
    let c = |x: f64| C64::new(x, 0.0);
    let inv2 = 1.0 / (dt * dt);
    for n in 1..nt {
        let s = s_at(n);
        let row0 = (n - 1) * d;
        for i in 0..d {
            a[(row0 + i, (n - 1) * d + i)] += c(inv2);
            a[(row0 + i, (n + 1) * d + i)] += c(inv2);
            a[(row0 + i, n * d + i)] += c(-2.0 * inv2);
            for j in 0..d {
                a[(row0 + i, n * d + j)] += c(s[(i, j)]);
            }
        }
    }
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mi = C64::new(0.0, -1.0);
    // pi^+ T^{-1} (z, -i z') at T_min: (E^+ z + E^- w) / sqrt 2
    let row0 = (nt - 1) * d;
    let stencil_min = [(0usize, -1.5 / dt), (1, 2.0 / dt), (2, -0.5 / dt)];
    for i in 0..d {
        for j in 0..d {
            a[(row0 + i, j)] += c(r * bc_min.0[(i, j)]);
            for &(node, w) in &stencil_min {
                a[(row0 + i, node * d + j)] += mi * (r * w * bc_min.1[(i, j)]);
            }
        }
    }
    // pi^- T^{-1} (z, -i z') at T_max: (E^+ z - E^- w) / sqrt 2
    let row0 = nt * d;
    let stencil_max = [(nt, 1.5 / dt), (nt - 1, -2.0 / dt), (nt - 2, 0.5 / dt)];
    for i in 0..d {
        for j in 0..d {
            a[(row0 + i, nt * d + j)] += c(r * bc_max.0[(i, j)]);
            for &(node, w) in &stencil_max {
                a[(row0 + i, node * d + j)] -= mi * (r * w * bc_max.1[(i, j)]);
            }
        }
    }
    a
}

fn singular_extremes(a: &DMatrix<C64>) -> (f64, f64) {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    (min, max)
}

/// `sigma_min` by inverse iteration on `(A A^*)^{-1}` and `sigma_max` by
/// power iteration, for matrices too large for a full SVD.
fn singular_estimates(a: &DMatrix<C64>, lu: &nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>) -> Result<(f64, f64)> {
    let n = a.nrows();
    let adj = a.adjoint();
    let lu_adj = adj.clone().lu();
    let mut x = DVector::from_element(n, C64::new(1.0, 0.0));
    let mut inv_norm = 0.0;
    for _ in 0..30 {
        let y = lu_adj.solve(&x).ok_or(KgError::Singular)?;
        let z = lu.solve(&y).ok_or(KgError::Singular)?;
        let nz = z.norm();
        let next = (nz / x.norm()).sqrt();
        x = z.unscale(nz);
        if (next - inv_norm).abs() <= 1e-10 * next {
            inv_norm = next;
            break;
        }
        inv_norm = next;
    }
    let mut x = DVector::from_element(n, C64::new(1.0, 0.0));
    let mut max = 0.0;
    for _ in 0..60 {
        let y = &adj * (a * &x);
        let ny = y.norm();
        let next = (ny / x.norm()).sqrt();
        x = y.unscale(ny);
        if (next - max).abs() <= 1e-10 * next {
            max = next;
            break;
        }
        max = next;
    }
    Ok((1.0 / inv_norm, max))
}

/// Dense solve of `P~ u = v` with the centered second-order scheme in time,
/// spectral in space, and the Feynman rows `pi^+ T^{-1} rho u = 0` at `T_min`
/// and `pi^- T^{-1} rho u = 0` at `T_max` (frames of `a~(T_min)`,
/// `a~(T_max)`). On the flat model the system splits into one block per
/// spatial mode; otherwise it is factored whole and `max_n` caps `N`.
pub fn dense_feynman(model: &ReducedModel, src: &SourceSpec, max_n: usize) -> Result<DenseSolution> {
    let v = src.v();
    let time = v.time();
    let grid = model.grid();
    let n = grid.len();
    let nt = time.steps();
    if nt < 3 {
        return Err(KgError::InvalidGrid("dense solve needs at least 3 steps".into()));
    }
    // right-hand side in z coordinates, interior nodes only
    let rhs_rows: Vec<Vec<C64>> = (0..=nt).map(|k| model.to_z(v.row(k))).collect();
    if model.is_stationary() {
        let sym = free_symbol(grid, model.mass());
        let mut modes = vec![vec![C64::new(0.0, 0.0); nt + 1]; n];
        for (k, row) in rhs_rows.iter().enumerate() {
            let mut buf = row.clone();
            unitary_fft(&mut buf, false);
            for j in 0..n {
                modes[j][k] = buf[j];
            }
        }
        let mut sigma_min = f64::INFINITY;
        let mut sigma_max = 0.0f64;
        let mut residual = 0.0f64;
        let mut bmax = 0.0f64;
        let mut sol = vec![vec![C64::new(0.0, 0.0); nt + 1]; n];
        for j in 0..n {
            let w2 = sym[j];
            let one = |x: f64| DMatrix::from_element(1, 1, x);
            let e = (one(w2.powf(0.25)), one(w2.powf(-0.25)));
            let a = assemble_centered(1, time, &|_| one(w2), &e, &e);
            let mut b = DVector::<C64>::zeros(nt + 1);
            for k in 1..nt {
                b[k - 1] = modes[j][k];
            }
            let lu = a.clone().lu();
            let x = lu.solve(&b).ok_or(KgError::Singular)?;
            let (lo, hi) = singular_extremes(&a);
            sigma_min = sigma_min.min(lo);
            sigma_max = sigma_max.max(hi);
            residual = residual.max((&a * &x - &b).camax());
            bmax = bmax.max(b.camax());
            sol[j] = x.iter().copied().collect();
        }
        let z_rows: Vec<Vec<C64>> = (0..=nt)
            .map(|k| {
                let mut buf: Vec<C64> = sol.iter().map(|m| m[k]).collect();
                unitary_fft(&mut buf, true);
                model.from_z(&buf)
            })
            .collect();
        return Ok(DenseSolution {
            u: SpacetimeFunction::from_rows(grid, time, &z_rows)?,
            sigma_min,
            sigma_max,
            residual: if bmax > 0.0 { residual / bmax } else { residual },
        });
    }
    if n > max_n {
        return Err(KgError::config("oracle.dense.maxN", format!("N = {n} exceeds the dense limit {max_n}")));
    }
    let frame_min = build_frame_static(model, time.t_min())?;
    let frame_max = build_frame_static(model, time.t_max())?;
    let e_of = |f: &crate::diag::DiagFrame| (f.eig().matrix_fn(|l| l.powf(0.25)), f.eig().matrix_fn(|l| l.powf(-0.25)));
    let a = assemble_centered(
        n,
        time,
        &|k| model.a_tilde_matrix(time.t(k)),
        &e_of(&frame_min),
        &e_of(&frame_max),
    );
    let mut b = DVector::<C64>::zeros((nt + 1) * n);
    for k in 1..nt {
        for i in 0..n {
            b[(k - 1) * n + i] = rhs_rows[k][i];
        }
    }
    let lu = a.clone().lu();
    let x = lu.solve(&b).ok_or(KgError::Singular)?;
    let (sigma_min, sigma_max) = singular_estimates(&a, &lu)?;
    let bmax = b.camax();
    let residual = (&a * &x - &b).camax();
    let z_rows: Vec<Vec<C64>> = (0..=nt).map(|k| model.from_z(&x.as_slice()[k * n..(k + 1) * n])).collect();
    Ok(DenseSolution {
        u: SpacetimeFunction::from_rows(grid, time, &z_rows)?,
        sigma_min,
        sigma_max,
        residual: if bmax > 0.0 { residual / bmax } else { residual },
    })
}

/// The time-stepped pipeline's own discretization of the Feynman problem,
/// solved as one linear system: by shooting on the boundary unknowns
/// `pi^- y_0` when `V^ad = 0`, by a dense factorization otherwise.
/// Returns `u~`.
pub fn dense_feynman_shared(ctx: &Propagators, src: &SourceSpec) -> Result<SpacetimeFunction> {
    let model = ctx.model();
    let time = ctx.time();
    let n = model.grid().len();
    let lift = |row: &[C64]| -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); n];
        out.extend(model.to_z(row).into_iter().map(|x| -x));
        out
    };
    let f: Vec<Vec<C64>> = (0..time.node_count()).map(|k| lift(src.v().row(k))).collect();
    let fm: Vec<Vec<C64>> = src.mids().iter().map(|r| lift(r)).collect();
    let (g, gm) = ctx.to_ad_source(&f, &fm)?;
    let y = if model.is_stationary() {
        shoot_stationary(ctx, &g, &gm)?
    } else {
        dense_feynman_ad(ctx, &g, &gm, false)?
    };
    let w = ctx.from_ad(&y)?;
    let rows: Vec<Vec<C64>> = w.iter().map(|r| model.from_z(&r[..n])).collect();
    SpacetimeFunction::from_rows(model.grid(), time, &rows)
}

fn shoot_stationary(ctx: &Propagators, g: &[Vec<C64>], gm: &[Vec<C64>]) -> Result<Vec<Vec<C64>>> {
    let time = ctx.time();
    let n = ctx.model().grid().len();
    let ev = Evolver::new(ctx.model(), EvolutionSpec::new(Family::Diagonal, ctx.integrator(), time.dt())?)?;
    let step = ev.step_map(time.t_min(), time.dt())?;
    let dense = StepMap::Dense(dense_of(&step, 2 * n));
    // particular solution from zero data, then y_k = R_k + F^k y_0
    let particular = ctx.sweep(Family::Diagonal, g, gm, true)?;
    let StepMap::Dense(f) = &dense else { unreachable!() };
    let phi = matrix_power(f, time.steps());
    let last = time.steps();
    let block = phi.view((n, n), (n, n)).into_owned();
    let rhs = DVector::from_iterator(n, particular[last][n..].iter().map(|v| -v));
    let y0m = block.lu().solve(&rhs).ok_or(KgError::Singular)?;
    let mut y0 = vec![C64::new(0.0, 0.0); n];
    y0.extend(y0m.iter());
    let mut hom = y0;
    let mut out = Vec::with_capacity(time.node_count());
    for (k, p) in particular.iter().enumerate() {
        if k > 0 {
            hom = dense.apply(&hom);
        }
        let mut row = p.clone();
        axpy(&mut row, C64::new(1.0, 0.0), &hom);
        out.push(row);
    }
    Ok(out)
}

/// `m^k` by repeated squaring.
fn matrix_power(m: &DMatrix<C64>, mut k: usize) -> DMatrix<C64> {
    let mut out = DMatrix::<C64>::identity(m.nrows(), m.ncols());
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            out = &out * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    out
}

fn dense_of(map: &StepMap, dim: usize) -> DMatrix<C64> {
    let mut m = DMatrix::<C64>::zeros(dim, dim);
    let mut e = vec![C64::new(0.0, 0.0); dim];
    for j in 0..dim {
        e[j] = C64::new(1.0, 0.0);
        let col = map.apply(&e);
        for i in 0..dim {
            m[(i, j)] = col[i];
        }
        e[j] = C64::new(0.0, 0.0);
    }
    m
}

/// The retarded fundamental solution of `d_t^2 - d_x^2 + m^2` in 1+1
/// dimensions: `(1/2) theta(t - |x|) J_0(m sqrt(t^2 - x^2))`.
pub fn free_retarded_green(mass: f64, t: f64, x: f64) -> f64 {
    if t <= x.abs() {
        return 0.0;
    }
    0.5 * bessel_j0(mass * (t * t - x * x).sqrt())
}

/// `(E * v)(t, x)` for the retarded kernel `E` and a source concentrated
/// within `radius` of the origin, by Gauss-Legendre in the light-cone
/// coordinates `a = t - s - (x - y)`, `b = t - s + (x - y)` (the kernel's
/// jump sits on the edges `a = 0`, `b = 0` of the integration square).
pub fn green_convolution(mass: f64, v: impl Fn(f64, f64) -> f64, t: f64, x: f64, radius: f64, order: usize) -> f64 {
    let r = radius * std::f64::consts::SQRT_2;
    let (a0, a1) = ((t - x - r).max(0.0), t - x + r);
    let (b0, b1) = ((t + x - r).max(0.0), t + x + r);
    if a1 <= 0.0 || b1 <= 0.0 {
        return 0.0;
    }
    let (ax, aw) = gauss_legendre(order, a0, a1);
    let (bx, bw) = gauss_legendre(order, b0, b1);
    let mut sum = 0.0;
    for (a, wa) in ax.iter().zip(&aw) {
        for (b, wb) in bx.iter().zip(&bw) {
            let s = t - 0.5 * (a + b);
            let y = x - 0.5 * (b - a);
            sum += wa * wb * 0.25 * bessel_j0(mass * (a * b).sqrt()) * v(s, y);
        }
    }
    sum
}

/// Largest unknown count for which the dense diagonal-frame solve is used.
const DENSE_AD_MAX_UNKNOWNS: usize = 2600;

pub(crate) fn dense_ad_feasible(ctx: &Propagators) -> bool {
    2 * ctx.model().grid().len() * ctx.time().node_count() <= DENSE_AD_MAX_UNKNOWNS
}

/// Residual of the discrete diagonal-frame Feynman problem at `y`: one block
/// of `2N` rows per step (the Duhamel relation with source `g + V^ad y`) and
/// the two boundary blocks `pi^+ y_0`, `pi^- y_Nt`.
fn ad_residual(ctx: &Propagators, maps: &[(StepMap, StepMap)], g: &[Vec<C64>], gm: &[Vec<C64>], y: &[Vec<C64>], anti: bool) -> Result<Vec<C64>> {
    let n = ctx.model().grid().len();
    let h = ctx.time().dt();
    let c = C64::new(0.0, h / 6.0);
    let vy = ctx.apply_vad_rows(y)?;
    let vm = midpoints(&vy);
    let add = |a: &[C64], b: &[C64]| -> Vec<C64> { a.iter().zip(b).map(|(p, q)| p + q).collect() };
    let mut out = Vec::with_capacity(2 * n * y.len());
    for (k, (full, half)) in maps.iter().enumerate() {
        let sk = add(&g[k], &vy[k]);
        let sm = add(&gm[k], &vm[k]);
        let sk1 = add(&g[k + 1], &vy[k + 1]);
        let mut a = y[k].clone();
        axpy(&mut a, c, &sk);
        let fa = full.apply(&a);
        let hm = half.apply(&sm);
        for i in 0..2 * n {
            out.push(y[k + 1][i] - fa[i] - 4.0 * c * hm[i] - c * sk1[i]);
        }
    }
    let last = y.len() - 1;
    let (first, second) = if anti { (last, 0) } else { (0, last) };
    out.extend_from_slice(&y[first][..n]);
    out.extend_from_slice(&y[second][n..]);
    Ok(out)
}

/// Solves the discrete diagonal-frame Feynman problem directly (LU on the
/// assembled affine map). Small grids only.
pub fn dense_feynman_ad(ctx: &Propagators, g: &[Vec<C64>], gm: &[Vec<C64>], anti: bool) -> Result<Vec<Vec<C64>>> {
    if !dense_ad_feasible(ctx) {
        return Err(KgError::InvalidGrid(format!(
            "dense solve limited to {DENSE_AD_MAX_UNKNOWNS} unknowns"
        )));
    }
    let time = ctx.time();
    let dim = 2 * ctx.model().grid().len();
    let rows = time.node_count();
    let ev = Evolver::new(ctx.model(), EvolutionSpec::new(Family::Diagonal, ctx.integrator(), time.dt())?)?;
    let h = time.dt();
    let maps = (0..time.steps())
        .map(|k| Ok((ev.step_map(time.t(k), h)?, ev.step_map(time.t(k) + 0.5 * h, 0.5 * h)?)))
        .collect::<Result<Vec<_>>>()?;
    let zero_rows = vec![vec![C64::new(0.0, 0.0); dim]; rows];
    let r0 = ad_residual(ctx, &maps, g, gm, &zero_rows, anti)?;
    let zg = vec![vec![C64::new(0.0, 0.0); dim]; rows];
    let zgm = vec![vec![C64::new(0.0, 0.0); dim]; time.steps()];
    let unknowns = dim * rows;
    let mut a = DMatrix::<C64>::zeros(r0.len(), unknowns);
    let mut y = zero_rows.clone();
    for j in 0..unknowns {
        y[j / dim][j % dim] = C64::new(1.0, 0.0);
        let col = ad_residual(ctx, &maps, &zg, &zgm, &y, anti)?;
        a.set_column(j, &DVector::from_vec(col));
        y[j / dim][j % dim] = C64::new(0.0, 0.0);
    }
    let b = DVector::from_iterator(r0.len(), r0.iter().map(|v| -v));
    let x = a.lu().solve(&b).ok_or(KgError::Singular)?;
    Ok((0..rows).map(|k| x.as_slice()[k * dim..(k + 1) * dim].to_vec()).collect())
}
