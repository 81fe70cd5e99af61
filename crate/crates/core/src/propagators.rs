//! Retarded, advanced, causal and Feynman inverses of the reduced operator
//! `P~ = d_t^2 + a~(t)`.
//!
//! All inverses come from the first-order system `d_t w = i H w + i f`,
//! `f = (0, -v)`, discretized with one shared rule per step:
//!
//! `x_{n+1} = U_n x_n + i h/6 (U_n g_n + 4 U_{n+1/2} g_{n+1/2} + g_{n+1})`
//!
//! where `U_n` is the evolution over `[t_n, t_{n+1}]` and `U_{n+1/2}` the one
//! over `[t_{n+1/2}, t_{n+1}]` (Duhamel with Simpson's rule). The retarded
//! solution sweeps forward from zero data, the advanced one backward. The
//! Feynman inverse works in the diagonal frame: the `pi^+` component sweeps
//! forward from zero and the `pi^-` component backward from zero, which
//! imposes `pi^+ y(T_min) = pi^- y(T_max) = 0`. The remainder `V^ad` is put
//! back by the fixed-point iteration `y <- G^d_F (g + V^ad y)`.
//!
//! Fields are returned in the reduced variables `u~`; [`PropagatorResult::lift`]
//! maps them back to the original `u = R u~`.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::Serialize;

use crate::diag::{build_frame, build_frame_static, DiagFrame};
use crate::error::{KgError, Result};
use crate::evolve::{EvolutionSpec, Evolver, Family, Integrator, StepMap};
use crate::grid::{japanese, unitary_fft, ynorm_unchecked, SpacetimeFunction, SpatialGrid, TimeGrid, C64};
use crate::linalg::{axpy, logspace, midpoints, norm_sq, real_matvec, time_derivative};
use crate::model::{DecayFit, ReducedModel};
use crate::system::{free_symbol, Sign, TwoComponent};

/// Memory above which per-step data is recomputed instead of cached.
const CACHE_BUDGET_BYTES: usize = 400 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagatorKind {
    Retarded,
    Advanced,
    Causal,
    Feynman,
    AntiFeynman,
}

/// A right-hand side sampled at the time nodes and the step midpoints.
#[derive(Debug, Clone)]
pub struct SourceSpec {
    v: SpacetimeFunction,
    mids: Vec<Vec<C64>>,
    support: Option<(f64, f64)>,
}

impl SourceSpec {
    /// Midpoint values by cubic interpolation in time.
    pub fn new(v: SpacetimeFunction) -> Result<Self> {
        let rows: Vec<Vec<C64>> = (0..v.time().node_count()).map(|n| v.row(n).to_vec()).collect();
        let mids = midpoints(&rows);
        Self::with_mids(v, mids)
    }

    /// Exact samples of `f(t, x)` at nodes and midpoints.
    pub fn from_fn(space: SpatialGrid, time: TimeGrid, f: impl Fn(f64, f64) -> C64) -> Result<Self> {
        let v = SpacetimeFunction::from_fn(space, time, &f);
        let xs = space.nodes();
        let dt = time.dt();
        let mids = (0..time.steps())
            .map(|n| {
                let t = time.t(n) + 0.5 * dt;
                xs.iter().map(|&x| f(t, x)).collect()
            })
            .collect();
        Self::with_mids(v, mids)
    }

    pub fn zero(space: SpatialGrid, time: TimeGrid) -> Self {
        Self {
            v: SpacetimeFunction::zeros(space, time),
            mids: vec![vec![C64::new(0.0, 0.0); space.len()]; time.steps()],
            support: None,
        }
    }

    /// Source with explicitly given step-midpoint rows.
    pub fn with_mids(v: SpacetimeFunction, mids: Vec<Vec<C64>>) -> Result<Self> {
        let time = v.time();
        if mids.len() != time.steps() {
            return Err(KgError::SizeMismatch {
                expected: time.steps(),
                got: mids.len(),
            });
        }
        if let Some(r) = mids.iter().find(|r| r.len() != v.space().len()) {
            return Err(KgError::SizeMismatch {
                expected: v.space().len(),
                got: r.len(),
            });
        }
        let peak = v.max_abs();
        let row_max = |n: usize| v.row(n).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if peak == 0.0 {
            return Ok(Self {
                v,
                mids,
                support: None,
            });
        }
        let last = time.steps();
        for n in [0, 1, last - 1, last] {
            if row_max(n) > 1e-10 * peak {
                return Err(KgError::SourceTooClose(format!(
                    "|v| = {:.3e} at t = {} (peak {:.3e})",
                    row_max(n),
                    time.t(n),
                    peak
                )));
            }
        }
        let active: Vec<usize> = (0..=last).filter(|&n| row_max(n) > 1e-13 * peak).collect();
        let support = Some((time.t(active[0]), time.t(*active.last().expect("nonempty"))));
        Ok(Self { v, mids, support })
    }

    pub fn v(&self) -> &SpacetimeFunction {
        &self.v
    }

    pub fn mids(&self) -> &[Vec<C64>] {
        &self.mids
    }

    /// Smallest time interval outside of which `v` is negligible.
    pub fn support(&self) -> Option<(f64, f64)> {
        self.support
    }

    /// `a * self + other`.
    pub fn combine(&self, a: C64, other: &SourceSpec) -> Result<SourceSpec> {
        let v = other.v.axpy(a, &self.v)?;
        let mids = self
            .mids
            .iter()
            .zip(&other.mids)
            .map(|(p, q)| p.iter().zip(q).map(|(x, y)| a * x + y).collect())
            .collect();
        Self::with_mids(v, mids)
    }
}

/// Boundary behaviour of a solution in the diagonal frame.
#[derive(Debug, Clone, Serialize)]
pub struct BcReport {
    /// `||pi^+ rho^ad_{T_min} u||`.
    pub plus_at_tmin: f64,
    /// `||pi^- rho^ad_{T_max} u||`.
    pub minus_at_tmax: f64,
    /// `sup_t ||rho^ad_t u||`.
    pub peak: f64,
    pub exponent_minus_inf: Option<f64>,
    pub exponent_plus_inf: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PropagatorResult {
    pub kind: PropagatorKind,
    /// `u~` on the full grid.
    pub u: SpacetimeFunction,
    /// Carried `i^{-1} d_t u~`.
    pub momentum: SpacetimeFunction,
    /// Diagonal-frame trajectory in `z` coordinates, when computed.
    pub uad: Option<Vec<Vec<C64>>>,
    /// `||P~ u - v||_Y / ||v||_Y` (absolute when `v = 0`).
    pub residual_p: f64,
    pub bc_report: Option<BcReport>,
    /// Cook-type bound on what the truncation at `+-T_max` discards.
    pub tail_estimate: f64,
    pub iterations: usize,
    /// Observed ratio of successive fixed-point corrections.
    pub contraction: Option<f64>,
}

impl PropagatorResult {
    /// `rho_t u~` at a grid time.
    pub fn cauchy_data(&self, t: f64) -> Result<TwoComponent> {
        let n = self.u.time().node_index(t)?;
        TwoComponent::new(self.u.slice(n), self.momentum.slice(n))
    }

    /// The field in the original variables, `u = R u~`.
    pub fn lift(&self, model: &ReducedModel) -> Result<SpacetimeFunction> {
        let time = self.u.time();
        let rows: Vec<Vec<C64>> = (0..time.node_count())
            .map(|n| model.to_original(time.t(n), self.u.row(n)))
            .collect();
        SpacetimeFunction::from_rows(self.u.space(), time, &rows)
    }
}

/// Frames at the time nodes (with remainder) and at the step midpoints.
struct FrameTable {
    nodes: Vec<DiagFrame>,
    mids: Vec<DiagFrame>,
}

/// Full and half step maps for every step.
type StepTable = Vec<(StepMap, StepMap)>;

/// The four inverses on one model and time grid.
pub struct Propagators {
    model: ReducedModel,
    time: TimeGrid,
    full: Evolver,
    diag: Evolver,
    /// Weight exponent of the `Y` norm used for residuals.
    pub gamma: f64,
    /// Stopping tolerance of the fixed-point iteration (relative, sup in t).
    pub tol: f64,
    pub max_iter: usize,
    frames: OnceLock<FrameTable>,
    full_steps: OnceLock<Option<StepTable>>,
    diag_steps: OnceLock<Option<StepTable>>,
}

fn split(x: &[C64]) -> (&[C64], &[C64]) {
    x.split_at(x.len() / 2)
}

fn join(mut a: Vec<C64>, b: Vec<C64>) -> Vec<C64> {
    a.extend(b);
    a
}

fn zeros(n: usize) -> Vec<C64> {
    vec![C64::new(0.0, 0.0); n]
}

impl Propagators {
    pub fn new(model: &ReducedModel, time: TimeGrid, integrator: Integrator) -> Result<Self> {
        let dt = time.dt();
        Ok(Self {
            model: model.clone(),
            time,
            full: Evolver::new(model, EvolutionSpec::new(Family::Full, integrator, dt)?)?,
            diag: Evolver::new(model, EvolutionSpec::new(Family::Diagonal, integrator, dt)?)?,
            gamma: 1.0,
            tol: 1e-12,
            max_iter: 80,
            frames: OnceLock::new(),
            full_steps: OnceLock::new(),
            diag_steps: OnceLock::new(),
        })
    }

    pub fn model(&self) -> &ReducedModel {
        &self.model
    }

    pub fn time(&self) -> TimeGrid {
        self.time
    }

    pub fn integrator(&self) -> Integrator {
        self.full.spec().integrator
    }

    fn dim(&self) -> usize {
        self.model.grid().len()
    }

    fn frame_table(&self) -> Result<&FrameTable> {
        if let Some(t) = self.frames.get() {
            return Ok(t);
        }
        let table = if self.model.is_stationary() {
            let f = build_frame(&self.model, 0.0)?;
            FrameTable {
                nodes: vec![f.clone()],
                mids: vec![f],
            }
        } else {
            let n = self.dim();
            let bytes = 32 * n * n * self.time.node_count();
            if bytes > 4 * CACHE_BUDGET_BYTES {
                return Err(KgError::InvalidGrid(format!(
                    "frame table needs ~{} MB; reduce N or Nt",
                    bytes >> 20
                )));
            }
            let model = &self.model;
            let time = self.time;
            let nodes = (0..time.node_count())
                .into_par_iter()
                .map(|k| build_frame(model, time.t(k)))
                .collect::<Result<Vec<_>>>()?;
            let mids = (0..time.steps())
                .into_par_iter()
                .map(|k| build_frame_static(model, time.t(k) + 0.5 * time.dt()))
                .collect::<Result<Vec<_>>>()?;
            FrameTable { nodes, mids }
        };
        Ok(self.frames.get_or_init(|| table))
    }

    fn node_frame(&self, n: usize) -> Result<&DiagFrame> {
        let t = self.frame_table()?;
        Ok(if t.nodes.len() == 1 { &t.nodes[0] } else { &t.nodes[n] })
    }

    fn mid_frame(&self, n: usize) -> Result<&DiagFrame> {
        let t = self.frame_table()?;
        Ok(if t.mids.len() == 1 { &t.mids[0] } else { &t.mids[n] })
    }

    fn evolver(&self, family: Family) -> &Evolver {
        match family {
            Family::Full => &self.full,
            _ => &self.diag,
        }
    }

    fn step_table(&self, family: Family) -> Result<Option<&StepTable>> {
        let cell = match family {
            Family::Full => &self.full_steps,
            _ => &self.diag_steps,
        };
        if let Some(t) = cell.get() {
            return Ok(t.as_ref());
        }
        let n = self.dim();
        let bytes = 40 * n * n * self.time.steps();
        let table = if self.model.is_stationary() || bytes > CACHE_BUDGET_BYTES {
            None
        } else {
            let ev = self.evolver(family);
            let time = self.time;
            let h = time.dt();
            Some(
                (0..time.steps())
                    .into_par_iter()
                    .map(|k| {
                        let t = time.t(k);
                        Ok((ev.step_map(t, h)?, ev.step_map(t + 0.5 * h, 0.5 * h)?))
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        Ok(cell.get_or_init(|| table).as_ref())
    }

    fn step_pair(&self, family: Family, k: usize) -> Result<std::borrow::Cow<'_, (StepMap, StepMap)>> {
        if let Some(table) = self.step_table(family)? {
            return Ok(std::borrow::Cow::Borrowed(&table[k]));
        }
        let ev = self.evolver(family);
        let t = self.time.t(k);
        let h = self.time.dt();
        Ok(std::borrow::Cow::Owned((ev.step_map(t, h)?, ev.step_map(t + 0.5 * h, 0.5 * h)?)))
    }

    /// Forward (`x_0 = 0`) or backward (`x_Nt = 0`) sweep of the discrete
    /// Duhamel relation with source `g` on nodes and `gm` on midpoints.
    pub fn sweep(&self, family: Family, g: &[Vec<C64>], gm: &[Vec<C64>], forward: bool) -> Result<Vec<Vec<C64>>> {
        let steps = self.time.steps();
        let h = self.time.dt();
        let c = C64::new(0.0, h / 6.0);
        let dim = 2 * self.dim();
        let mut x = vec![zeros(dim); steps + 1];
        let ev = self.evolver(family);
        if forward {
            for k in 0..steps {
                let pair = self.step_pair(family, k)?;
                let (full, half) = (&pair.0, &pair.1);
                let mut a = x[k].clone();
                axpy(&mut a, c, &g[k]);
                let mut next = full.apply(&a);
                let hm = half.apply(&gm[k]);
                axpy(&mut next, 4.0 * c, &hm);
                axpy(&mut next, c, &g[k + 1]);
                x[k + 1] = next;
            }
        } else {
            for k in (0..steps).rev() {
                let pair = self.step_pair(family, k)?;
                let (full, half) = (&pair.0, &pair.1);
                let inv = match full.inverse() {
                    Some(m) => m,
                    None => ev.step_map(self.time.t(k + 1), -h)?,
                };
                let mut r = x[k + 1].clone();
                let hm = half.apply(&gm[k]);
                axpy(&mut r, -4.0 * c, &hm);
                axpy(&mut r, -c, &g[k + 1]);
                let mut prev = inv.apply(&r);
                axpy(&mut prev, -c, &g[k]);
                x[k] = prev;
            }
        }
        Ok(x)
    }

    /// `f = (0, -v)` in `z` coordinates on nodes and midpoints.
    fn first_order_source(&self, src: &SourceSpec) -> Result<(Vec<Vec<C64>>, Vec<Vec<C64>>)> {
        if src.v.space() != self.model.grid() || src.v.time() != self.time {
            return Err(KgError::SizeMismatch {
                expected: self.dim() * self.time.node_count(),
                got: src.v.values().len(),
            });
        }
        let n = self.dim();
        let lift = |row: &[C64]| -> Vec<C64> {
            let z = self.model.to_z(row);
            join(zeros(n), z.into_iter().map(|v| -v).collect())
        };
        let g = (0..self.time.node_count()).map(|k| lift(src.v.row(k))).collect();
        let gm = src.mids.iter().map(|r| lift(r)).collect();
        Ok((g, gm))
    }

    fn to_fields(&self, w: &[Vec<C64>]) -> Result<(SpacetimeFunction, SpacetimeFunction)> {
        let mut u = Vec::with_capacity(w.len());
        let mut p = Vec::with_capacity(w.len());
        for row in w {
            let (a, b) = split(row);
            u.push(self.model.from_z(a));
            p.push(self.model.from_z(b));
        }
        let space = self.model.grid();
        Ok((
            SpacetimeFunction::from_rows(space, self.time, &u)?,
            SpacetimeFunction::from_rows(space, self.time, &p)?,
        ))
    }

    /// `a~(t_k) z`.
    fn apply_a_tilde_z(&self, k: usize, z: &[C64]) -> Vec<C64> {
        if self.model.is_stationary() {
            let sym = free_symbol(self.model.grid(), self.model.mass());
            let mut buf = z.to_vec();
            unitary_fft(&mut buf, false);
            for (b, s) in buf.iter_mut().zip(&sym) {
                *b *= s;
            }
            unitary_fft(&mut buf, true);
            buf
        } else {
            real_matvec(&self.model.a_tilde_matrix(self.time.t(k)), z)
        }
    }

    /// `P~ u - v` from Cauchy data rows `w = (z, i^{-1} d_t z)` in `z`
    /// coordinates, with a sixth-order difference of the carried momentum.
    pub fn apply_p_residual(&self, w: &[Vec<C64>], v: Option<&SpacetimeFunction>) -> Result<SpacetimeFunction> {
        let n = self.dim();
        let mom: Vec<Vec<C64>> = w.iter().map(|r| r[n..].to_vec()).collect();
        let dmom = time_derivative(&mom, self.time.dt());
        let i = C64::new(0.0, 1.0);
        let rows: Vec<Vec<C64>> = (0..w.len())
            .map(|k| {
                let az = self.apply_a_tilde_z(k, &w[k][..n]);
                let pz: Vec<C64> = dmom[k].iter().zip(&az).map(|(d, a)| i * d + a).collect();
                let mut r = self.model.from_z(&pz);
                if let Some(v) = v {
                    for (x, y) in r.iter_mut().zip(v.row(k)) {
                        *x -= y;
                    }
                }
                r
            })
            .collect();
        SpacetimeFunction::from_rows(self.model.grid(), self.time, &rows)
    }

    fn relative_residual(&self, w: &[Vec<C64>], src: &SourceSpec, against_zero: bool) -> Result<f64> {
        let res = self.apply_p_residual(w, if against_zero { None } else { Some(&src.v) })?;
        let num = ynorm_unchecked(&res, 0.0, self.gamma);
        let den = ynorm_unchecked(&src.v, 0.0, self.gamma);
        Ok(if den > 0.0 { num / den } else { num })
    }

    fn causal_sweep(&self, src: &SourceSpec, forward: bool) -> Result<Vec<Vec<C64>>> {
        let (g, gm) = self.first_order_source(src)?;
        self.sweep(Family::Full, &g, &gm, forward)
    }

    fn causal_result(&self, kind: PropagatorKind, w: Vec<Vec<C64>>, src: &SourceSpec) -> Result<PropagatorResult> {
        let residual_p = self.relative_residual(&w, src, kind == PropagatorKind::Causal)?;
        let (u, momentum) = self.to_fields(&w)?;
        Ok(PropagatorResult {
            kind,
            u,
            momentum,
            uad: None,
            residual_p,
            bc_report: None,
            tail_estimate: 0.0,
            iterations: 0,
            contraction: None,
        })
    }

    pub fn g_retarded(&self, src: &SourceSpec) -> Result<PropagatorResult> {
        let w = self.causal_sweep(src, true)?;
        self.causal_result(PropagatorKind::Retarded, w, src)
    }

    pub fn g_advanced(&self, src: &SourceSpec) -> Result<PropagatorResult> {
        let w = self.causal_sweep(src, false)?;
        self.causal_result(PropagatorKind::Advanced, w, src)
    }

    /// `G = G_ret - G_adv`; the residual is that of `P G v` against zero.
    pub fn g_causal(&self, src: &SourceSpec) -> Result<PropagatorResult> {
        let r = self.causal_sweep(src, true)?;
        let a = self.causal_sweep(src, false)?;
        let w: Vec<Vec<C64>> = r
            .iter()
            .zip(&a)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
            .collect();
        self.causal_result(PropagatorKind::Causal, w, src)
    }

    /// Diagonal-frame Feynman inverse of `D_t - H^d` on stacked `z` pairs.
    /// `anti` swaps the roles of `pi^+` and `pi^-`.
    pub fn g_feynman_diag(&self, g: &[Vec<C64>], gm: &[Vec<C64>], anti: bool) -> Result<Vec<Vec<C64>>> {
        let fwd = self.sweep(Family::Diagonal, g, gm, true)?;
        let bwd = self.sweep(Family::Diagonal, g, gm, false)?;
        let n = self.dim();
        Ok(fwd
            .into_iter()
            .zip(bwd)
            .map(|(f, b)| {
                let (first, second) = if anti { (b, f) } else { (f, b) };
                let mut y = first[..n].to_vec();
                y.extend_from_slice(&second[n..]);
                y
            })
            .collect())
    }

    /// `V^ad y` at every node.
    pub fn apply_vad_rows(&self, y: &[Vec<C64>]) -> Result<Vec<Vec<C64>>> {
        y.iter()
            .enumerate()
            .map(|(k, row)| Ok(self.node_frame(k)?.apply_vad(row)))
            .collect()
    }

    /// Feynman inverse of `D_t - H^d - V^ad` by the fixed-point iteration
    /// `y <- G^d_F (g + V^ad y)`. Returns the trajectory, the number of
    /// corrections and the observed contraction ratio.
    pub fn g_feynman_ad(&self, g: &[Vec<C64>], gm: &[Vec<C64>], anti: bool) -> Result<(Vec<Vec<C64>>, usize, Option<f64>)> {
        let mut y = self.g_feynman_diag(g, gm, anti)?;
        if !self.node_frame(0)?.has_remainder() {
            return Ok((y, 0, None));
        }
        let sup = |rows: &[Vec<C64>]| rows.iter().map(|r| norm_sq(r)).fold(0.0, f64::max).sqrt();
        let mut prev_diff: Option<f64> = None;
        let mut ratio = None;
        for it in 1..=self.max_iter {
            let vy = self.apply_vad_rows(&y)?;
            let vm = midpoints(&vy);
            let s: Vec<Vec<C64>> = g
                .iter()
                .zip(&vy)
                .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect())
                .collect();
            let sm: Vec<Vec<C64>> = gm
                .iter()
                .zip(&vm)
                .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect())
                .collect();
            let next = self.g_feynman_diag(&s, &sm, anti)?;
            let diff: Vec<Vec<C64>> = next
                .iter()
                .zip(&y)
                .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p - q).collect())
                .collect();
            let d = sup(&diff);
            let scale = sup(&next).max(1e-300);
            if let Some(p) = prev_diff {
                if p > 0.0 {
                    ratio = Some(d / p);
                }
            }
            y = next;
            if d <= self.tol * scale {
                return Ok((y, it, ratio));
            }
            if let Some(r) = ratio {
                if it >= 3 && r > 0.95 {
                    return self.fallback(g, gm, anti, r);
                }
            }
            prev_diff = Some(d);
        }
        match ratio {
            Some(r) if r < 0.95 => Ok((y, self.max_iter, ratio)),
            r => self.fallback(g, gm, anti, r.unwrap_or(1.0)),
        }
    }

    fn fallback(&self, g: &[Vec<C64>], gm: &[Vec<C64>], anti: bool, ratio: f64) -> Result<(Vec<Vec<C64>>, usize, Option<f64>)> {
        if !crate::oracle::dense_ad_feasible(self) {
            return Err(KgError::NoContraction(ratio));
        }
        let y = crate::oracle::dense_feynman_ad(self, g, gm, anti)?;
        Ok((y, 0, Some(ratio)))
    }

    /// `T^{-1} f` on nodes and midpoints.
    pub fn to_ad_source(&self, g: &[Vec<C64>], gm: &[Vec<C64>]) -> Result<(Vec<Vec<C64>>, Vec<Vec<C64>>)> {
        let a = g
            .iter()
            .enumerate()
            .map(|(k, r)| Ok(self.node_frame(k)?.apply_tinv(r)))
            .collect::<Result<Vec<_>>>()?;
        let b = gm
            .iter()
            .enumerate()
            .map(|(k, r)| Ok(self.mid_frame(k)?.apply_tinv(r)))
            .collect::<Result<Vec<_>>>()?;
        Ok((a, b))
    }

    /// `T y` at every node.
    pub fn from_ad(&self, y: &[Vec<C64>]) -> Result<Vec<Vec<C64>>> {
        y.iter()
            .enumerate()
            .map(|(k, r)| Ok(self.node_frame(k)?.apply_t(r)))
            .collect()
    }

    /// `T^{-1} w` at every node.
    pub fn to_ad(&self, w: &[Vec<C64>]) -> Result<Vec<Vec<C64>>> {
        w.iter()
            .enumerate()
            .map(|(k, r)| Ok(self.node_frame(k)?.apply_tinv(r)))
            .collect()
    }

    fn feynman_like(&self, src: &SourceSpec, anti: bool) -> Result<PropagatorResult> {
        let (f, fm) = self.first_order_source(src)?;
        let (g, gm) = self.to_ad_source(&f, &fm)?;
        let (y, iterations, contraction) = self.g_feynman_ad(&g, &gm, anti)?;
        let w = self.from_ad(&y)?;
        let residual_p = self.relative_residual(&w, src, false)?;
        let (u, momentum) = self.to_fields(&w)?;
        let kind = if anti {
            PropagatorKind::AntiFeynman
        } else {
            PropagatorKind::Feynman
        };
        let mut result = PropagatorResult {
            kind,
            u,
            momentum,
            uad: Some(y),
            residual_p,
            bc_report: None,
            tail_estimate: 0.0,
            iterations,
            contraction,
        };
        let window = default_membership_window(self.time, src.support());
        let membership = feynman_membership(self, &result, Some(window)).ok();
        let yrows = result.uad.as_ref().expect("set above");
        let hnorm0 = |r: &[C64]| (self.model.grid().dx() * norm_sq(r)).sqrt();
        let peak = yrows.iter().map(|r| hnorm0(r)).fold(0.0, f64::max);
        let n = self.dim();
        let last = self.time.steps();
        result.bc_report = Some(BcReport {
            plus_at_tmin: hnorm0(&yrows[0][..n]),
            minus_at_tmax: hnorm0(&yrows[last][n..]),
            peak,
            exponent_minus_inf: membership.as_ref().and_then(|m| m.exponent_minus),
            exponent_plus_inf: membership.as_ref().and_then(|m| m.exponent_plus),
        });
        result.tail_estimate = self.tail_estimate(peak)?;
        Ok(result)
    }

    /// `int_{|t| > T_max} ||V^ad||` bounded with the decay `<t>^{-1-delta}`,
    /// times the peak of the solution.
    fn tail_estimate(&self, peak: f64) -> Result<f64> {
        let last = self.time.steps();
        let vmax = self.node_frame(0)?.remainder_norm().max(self.node_frame(last)?.remainder_norm());
        Ok(vmax * self.time.t_max() / self.model.delta() * peak)
    }

    /// `G_F = -pi_0 T G^ad_F T^{-1} pi_1^*`.
    pub fn g_feynman(&self, src: &SourceSpec) -> Result<PropagatorResult> {
        self.feynman_like(src, false)
    }

    /// The anti-Feynman inverse (roles of `pi^+` and `pi^-` swapped).
    pub fn g_anti_feynman(&self, src: &SourceSpec) -> Result<PropagatorResult> {
        self.feynman_like(src, true)
    }

    pub fn solve(&self, kind: PropagatorKind, src: &SourceSpec) -> Result<PropagatorResult> {
        match kind {
            PropagatorKind::Retarded => self.g_retarded(src),
            PropagatorKind::Advanced => self.g_advanced(src),
            PropagatorKind::Causal => self.g_causal(src),
            PropagatorKind::Feynman => self.g_feynman(src),
            PropagatorKind::AntiFeynman => self.g_anti_feynman(src),
        }
    }

    /// Diagonal-frame trajectory of a result (computed from its Cauchy data
    /// when not stored).
    pub fn ad_trajectory(&self, result: &PropagatorResult) -> Result<Vec<Vec<C64>>> {
        if let Some(y) = &result.uad {
            return Ok(y.clone());
        }
        let w: Vec<Vec<C64>> = (0..self.time.node_count())
            .map(|k| join(self.model.to_z(result.u.row(k)), self.model.to_z(result.momentum.row(k))))
            .collect();
        self.to_ad(&w)
    }
}

/// Convenience wrappers with the default integrator.
pub fn g_retarded(model: &ReducedModel, time: TimeGrid, src: &SourceSpec) -> Result<PropagatorResult> {
    Propagators::new(model, time, Integrator::Magnus)?.g_retarded(src)
}

pub fn g_advanced(model: &ReducedModel, time: TimeGrid, src: &SourceSpec) -> Result<PropagatorResult> {
    Propagators::new(model, time, Integrator::Magnus)?.g_advanced(src)
}

pub fn g_causal(model: &ReducedModel, time: TimeGrid, src: &SourceSpec) -> Result<PropagatorResult> {
    Propagators::new(model, time, Integrator::Magnus)?.g_causal(src)
}

pub fn g_feynman(model: &ReducedModel, time: TimeGrid, src: &SourceSpec) -> Result<PropagatorResult> {
    Propagators::new(model, time, Integrator::Magnus)?.g_feynman(src)
}

/// Decay of the wrong-frequency components of a solution.
#[derive(Debug, Clone, Serialize)]
pub struct MembershipReport {
    /// `|t|` values (negative side) and `||pi^+ rho^ad_t u||` there.
    pub times_minus: Vec<f64>,
    pub norms_minus: Vec<f64>,
    /// `t` values (positive side) and `||pi^- rho^ad_t u||` there.
    pub times_plus: Vec<f64>,
    pub norms_plus: Vec<f64>,
    /// Fitted exponents against `<t>`; `None` when the norms vanish.
    pub exponent_minus: Option<f64>,
    pub exponent_plus: Option<f64>,
    pub peak: f64,
    /// Largest wrong-side norm in the window relative to the peak.
    pub wrong_side_ratio: f64,
    /// Exponents must not exceed this.
    pub threshold: f64,
    pub pass: bool,
}

/// Allowed excess of a fitted exponent over its predicted value.
pub const FIT_SLACK: f64 = 0.15;

/// Default fit window `|t| in [t_lo, t_hi]`: from past the source support
/// (at least 4) to 80% of `T_max`.
pub fn default_membership_window(time: TimeGrid, support: Option<(f64, f64)>) -> (f64, f64) {
    let s = support.map_or(0.0, |(a, b)| a.abs().max(b.abs()));
    ((s + 1.0).max(4.0), 0.8 * time.t_max())
}

/// Feynman membership: norms of `pi^+ rho^ad_t u` for `t -> -inf` and of
/// `pi^- rho^ad_t u` for `t -> +inf`, with fitted decay exponents. Passes when
/// both exponents are at most `-(delta - 1)/2 + 0.15` (or the norms vanish).
pub fn feynman_membership(ctx: &Propagators, result: &PropagatorResult, window: Option<(f64, f64)>) -> Result<MembershipReport> {
    let time = ctx.time();
    let (lo, hi) = window.unwrap_or_else(|| default_membership_window(time, None));
    if !(lo > 0.0 && hi > lo && hi <= time.t_max()) {
        return Err(KgError::DegenerateFit(format!("bad window [{lo}, {hi}]")));
    }
    let y = ctx.ad_trajectory(result)?;
    let n = ctx.model().grid().len();
    let dx = ctx.model().grid().dx();
    let hn = |r: &[C64]| (dx * norm_sq(r)).sqrt();
    let peak = y.iter().map(|r| hn(r)).fold(0.0, f64::max);
    let mut idx: Vec<usize> = logspace(lo, hi, 12)
        .into_iter()
        .map(|t| ((t - time.t_min()) / time.dt()).round() as usize)
        .collect();
    idx.dedup();
    let mut times_plus = Vec::new();
    let mut norms_plus = Vec::new();
    let mut times_minus = Vec::new();
    let mut norms_minus = Vec::new();
    for &k in &idx {
        let kp = k.min(time.steps());
        let km = time.steps() - kp;
        times_plus.push(time.t(kp));
        norms_plus.push(hn(&y[kp][n..]));
        times_minus.push(-time.t(km));
        norms_minus.push(hn(&y[km][..n]));
    }
    let fit_minus = DecayFit::from_samples(times_minus.clone(), norms_minus.clone())?;
    let fit_plus = DecayFit::from_samples(times_plus.clone(), norms_plus.clone())?;
    let threshold = -(ctx.model().delta() - 1.0) / 2.0 + FIT_SLACK;
    let ok = |f: &DecayFit| f.exact_zero || f.slope.is_some_and(|s| s <= threshold);
    let wrong = norms_minus.iter().chain(&norms_plus).copied().fold(0.0, f64::max);
    Ok(MembershipReport {
        times_minus,
        norms_minus,
        times_plus,
        norms_plus,
        exponent_minus: fit_minus.slope,
        exponent_plus: fit_plus.slope,
        peak,
        wrong_side_ratio: if peak > 0.0 { wrong / peak } else { 0.0 },
        threshold,
        pass: ok(&fit_minus) && ok(&fit_plus),
    })
}

/// Scattering data `lim U_out/in(0,t) rho^ad_t u` evaluated at finite radii.
#[derive(Debug, Clone)]
pub struct ScatteringData {
    /// `U_out/in(0, +-T) y(+-T)`.
    pub at_tmax: TwoComponent,
    /// Two-radius Richardson estimate assuming an `O(T^{1-delta})` tail.
    pub extrapolated: TwoComponent,
    /// `|D(T) - D(T/2)|`, the observed tail at the outer radius.
    pub tail_bound: f64,
    /// Observed decay exponent of the tail from three radii (`None` when the
    /// data are already stationary).
    pub exponent: Option<f64>,
}

/// Scattering data of a diagonal-frame trajectory; `Sign::Plus` is the
/// `t -> +inf` end.
pub fn scattering_data(ctx: &Propagators, y: &[Vec<C64>], end: Sign) -> Result<ScatteringData> {
    let time = ctx.time();
    let grid = ctx.model().grid();
    let eps: Vec<f64> = free_symbol(grid, ctx.model().mass()).iter().map(|a| a.sqrt()).collect();
    let eps = std::sync::Arc::new(eps);
    let at = |t_abs: f64| -> Result<Vec<C64>> {
        let t = end.value() * t_abs;
        let k = ((t - time.t_min()) / time.dt()).round() as usize;
        let tk = time.t(k);
        let map = StepMap::DiagFourier { eps: eps.clone(), h: -tk };
        Ok(map.apply(&y[k]))
    };
    let t = time.t_max();
    let d1 = at(t)?;
    let d2 = at(0.5 * t)?;
    let d4 = at(0.25 * t)?;
    let dx = grid.dx();
    let nrm = |a: &[C64], b: &[C64]| (dx * a.iter().zip(b).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>()).sqrt();
    let outer = nrm(&d1, &d2);
    let inner = nrm(&d2, &d4);
    let exponent = if outer > 0.0 && inner > 0.0 {
        Some((outer / inner).log2())
    } else {
        None
    };
    let p = 1.0 - ctx.model().delta();
    let r = 2f64.powf(-p);
    let extrapolated: Vec<C64> = d1.iter().zip(&d2).map(|(a, b)| (r * a - b) / (r - 1.0)).collect();
    Ok(ScatteringData {
        at_tmax: TwoComponent::from_vec(grid, &d1)?,
        extrapolated: TwoComponent::from_vec(grid, &extrapolated)?,
        tail_bound: outer,
        exponent,
    })
}

/// Log-log decay of `||pi^{-+} rho^ad_t u||` relative to `<t>`, used by the
/// reports.
pub fn japanese_times(times: &[f64]) -> Vec<f64> {
    times.iter().map(|t| japanese(*t)).collect()
}
