//! Two experiments on computed solutions: the commutator (Isozaki) pairing
//! behind injectivity of the Feynman problem, and a windowed-Fourier probe of
//! the sign of the time frequency along the light cone.

use serde::Serialize;

use crate::diag::build_frame;
use crate::error::{KgError, Result};
use crate::grid::{fft_plan, SpacetimeFunction, TimeGrid, C64};
use crate::linalg::{gauss_legendre, loglog_fit};
use crate::model::ReducedModel;
use crate::propagators::{Propagators, SourceSpec};

/// `chi_eps(t) = int_{|t|}^inf 1_[1,2](eps s) s^{-r} ds`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CutoffFamily {
    pub r: f64,
    pub epsilon: f64,
}

impl CutoffFamily {
    pub fn new(r: f64, epsilon: f64) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(KgError::config("analysis.r", format!("must lie in (0, 1), got {r}")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(KgError::config("analysis.eps_list", format!("entries must be positive, got {epsilon}")));
        }
        Ok(Self { r, epsilon })
    }

    fn antiderivative(&self, s: f64) -> f64 {
        s.powf(1.0 - self.r) / (1.0 - self.r)
    }

    pub fn chi(&self, t: f64) -> f64 {
        let lo = 1.0 / self.epsilon;
        let hi = 2.0 * lo;
        let a = t.abs();
        if a >= hi {
            0.0
        } else {
            self.antiderivative(hi) - self.antiderivative(a.max(lo))
        }
    }

    /// `d_t chi_eps(t) = -sgn(t) 1_[1/eps, 2/eps](|t|) |t|^{-r}`.
    pub fn dchi(&self, t: f64) -> f64 {
        let a = t.abs();
        if a >= 1.0 / self.epsilon && a <= 2.0 / self.epsilon {
            -t.signum() * a.powf(-self.r)
        } else {
            0.0
        }
    }

    /// Breakpoints `-2/eps, -1/eps, 1/eps, 2/eps`.
    pub fn kinks(&self) -> [f64; 4] {
        let e = 1.0 / self.epsilon;
        [-2.0 * e, -e, e, 2.0 * e]
    }

    /// `chi_eps` sampled on a time grid.
    pub fn sample(&self, time: TimeGrid) -> Vec<f64> {
        time.times().into_iter().map(|t| self.chi(t)).collect()
    }

    /// `d_t chi_eps` at the step midpoints.
    pub fn sample_dchi(&self, time: TimeGrid) -> Vec<f64> {
        (0..time.steps()).map(|k| self.dchi(time.t(k) + 0.5 * time.dt())).collect()
    }
}

/// Pairings of one trajectory with `q^ad d_t chi_eps`.
#[derive(Debug, Clone, Copy)]
pub struct Pairing {
    /// `int (u | q^ad d_t chi_eps u) dt`.
    pub value: C64,
    /// `int d_t chi_eps (||pi^+ u||^2 - ||pi^- u||^2) dt`.
    pub decomposition: f64,
    /// `int_{t<0} |d_t chi_eps| ||pi^+ u||^2 + int_{t>0} |d_t chi_eps| ||pi^- u||^2`,
    /// the part carried by the wrong-frequency components.
    pub wrong_side: f64,
}

/// Per-node quantities `((u|q u), ||pi^+ u||^2, ||pi^- u||^2)`.
fn node_norms(uad: &[Vec<C64>], dx: f64) -> Vec<(C64, f64, f64)> {
    uad.iter()
        .map(|y| {
            let n = y.len() / 2;
            let mut q = C64::new(0.0, 0.0);
            for (i, v) in y.iter().enumerate() {
                let s = if i < n { 1.0 } else { -1.0 };
                q += v.conj() * s * v;
            }
            let p: f64 = y[..n].iter().map(|v| v.norm_sqr()).sum();
            let m: f64 = y[n..].iter().map(|v| v.norm_sqr()).sum();
            (q * dx, p * dx, m * dx)
        })
        .collect()
}

/// The pairing of a diagonal-frame trajectory sampled on `time`. The sharp
/// indicator is integrated exactly: each grid cell is clipped to the support
/// of `d_t chi_eps` and integrated by Gauss-Legendre with the norms
/// interpolated linearly between nodes.
pub fn isozaki_pairing(uad: &[Vec<C64>], time: TimeGrid, dx: f64, fam: &CutoffFamily) -> Result<Pairing> {
    if 2.0 / fam.epsilon > time.t_max() {
        return Err(KgError::config(
            "analysis.eps_list",
            format!("2/eps = {} exceeds T_max = {}", 2.0 / fam.epsilon, time.t_max()),
        ));
    }
    if uad.len() != time.node_count() {
        return Err(KgError::SizeMismatch {
            expected: time.node_count(),
            got: uad.len(),
        });
    }
    let norms = node_norms(uad, dx);
    let k = fam.kinks();
    let mut value = C64::new(0.0, 0.0);
    let mut decomposition = 0.0;
    let mut wrong = 0.0;
    for (a, b) in [(k[0], k[1]), (k[2], k[3])] {
        for cell in 0..time.steps() {
            let (t0, t1) = (time.t(cell), time.t(cell + 1));
            let (lo, hi) = (t0.max(a), t1.min(b));
            if hi <= lo {
                continue;
            }
            let (xs, ws) = gauss_legendre(4, lo, hi);
            for (t, w) in xs.iter().zip(&ws) {
                let s = (t - t0) / (t1 - t0);
                let (q0, p0, m0) = norms[cell];
                let (q1, p1, m1) = norms[cell + 1];
                let q = q0 * (1.0 - s) + q1 * s;
                let p = p0 * (1.0 - s) + p1 * s;
                let m = m0 * (1.0 - s) + m1 * s;
                let d = fam.dchi(*t);
                value += w * d * q;
                decomposition += w * d * (p - m);
                wrong += w * d.abs() * if *t < 0.0 { p } else { m };
            }
        }
    }
    Ok(Pairing {
        value,
        decomposition,
        wrong_side: wrong,
    })
}

/// Both sides of the integrated commutator identity
/// `int chi [(P^ad u | q u) - (u | q P^ad u)] dt = -i int (u | q d_t chi u) dt`
/// for a trajectory given as a function of `t` returning `(u, D_t u)`, by
/// piecewise Gauss-Legendre between the kinks of `chi_eps`.
pub fn commutator_identity(
    model: &ReducedModel,
    fam: &CutoffFamily,
    traj: &dyn Fn(f64) -> (Vec<C64>, Vec<C64>),
) -> Result<(C64, C64)> {
    let dx = model.grid().dx();
    let k = fam.kinks();
    let pieces = [(k[0], k[1]), (k[1], k[2]), (k[2], k[3])];
    let inner_q = |a: &[C64], b: &[C64]| -> C64 {
        let n = a.len() / 2;
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(i, (x, y))| x.conj() * y * if i < n { 1.0 } else { -1.0 })
            .sum::<C64>()
            * dx
    };
    let i = C64::new(0.0, 1.0);
    let mut lhs = C64::new(0.0, 0.0);
    let mut rhs = C64::new(0.0, 0.0);
    for (a, b) in pieces {
        let parts = ((b - a) / 1.0).ceil().max(1.0) as usize;
        let h = (b - a) / parts as f64;
        for p in 0..parts {
            let (xs, ws) = gauss_legendre(12, a + p as f64 * h, a + (p + 1) as f64 * h);
            for (t, w) in xs.iter().zip(&ws) {
                let (u, dtu) = traj(*t);
                let frame = build_frame(model, *t)?;
                let mut hu = frame.apply_hd(&u);
                for (x, y) in hu.iter_mut().zip(frame.apply_vad(&u)) {
                    *x += y;
                }
                let pu: Vec<C64> = dtu.iter().zip(&hu).map(|(d, h)| d - h).collect();
                let chi = fam.chi(*t);
                lhs += w * chi * (inner_q(&pu, &u) - inner_q(&u, &pu));
                rhs += -i * w * fam.dchi(*t) * inner_q(&u, &u);
            }
        }
    }
    Ok((lhs, rhs))
}

/// A smooth trajectory with both frequency components present on the whole
/// line, and its `D_t`.
fn manufactured_trajectory(model: &ReducedModel) -> impl Fn(f64) -> (Vec<C64>, Vec<C64>) + '_ {
    let xs = model.grid().nodes();
    move |t: f64| {
        let i = C64::new(0.0, 1.0);
        let p = 1.0 / (1.0 + ((t - 3.0) / 10.0).powi(2));
        let dp = -2.0 * (t - 3.0) / 100.0 * p * p;
        let (c, dc) = ((0.2 * t).cos(), -0.2 * (0.2 * t).sin());
        let ep = (i * 0.7 * t).exp();
        let em = (-i * 1.1 * t).exp();
        let mut u = Vec::with_capacity(2 * xs.len());
        let mut d = Vec::with_capacity(2 * xs.len());
        for &x in &xs {
            let f = (-(x - 0.5).powi(2)).exp();
            u.push(ep * p * f);
            // D_t = -i d/dt
            d.push(-i * (i * 0.7 * ep * p + ep * dp) * f);
        }
        for &x in &xs {
            let g = (-(x + 1.0).powi(2) / 2.0).exp() * C64::new(1.0, 0.3 * x);
            u.push(em * c * g);
            d.push(-i * (-i * 1.1 * em * c + em * dc) * g);
        }
        (u, d)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IsozakiReport {
    pub r: f64,
    pub delta: f64,
    pub eps_list: Vec<f64>,
    /// Full pairings `I(eps)` of the Feynman solution.
    pub feynman_pairing: Vec<f64>,
    /// Wrong-frequency part of the Feynman pairing.
    pub feynman_wrong_side: Vec<f64>,
    /// `I(eps)` of the retarded solution (control).
    pub control_pairing: Vec<f64>,
    /// Growth exponent of the Feynman wrong-frequency part in `1/eps`
    /// (slope of `log |I_wrong|` against `log(1/eps)`).
    pub feynman_exponent: Option<f64>,
    /// Exponent of `|I(eps)|` of the control in `eps`.
    pub control_exponent: Option<f64>,
    /// Largest imaginary part of the pairings (zero up to roundoff).
    pub max_imag: f64,
    /// Largest `|I - decomposition|` relative to `|I|`.
    pub decomposition_error: f64,
    /// Relative residual of the commutator identity on a manufactured trajectory.
    pub identity_residual: f64,
    pub feynman_bound: f64,
    pub control_expected: f64,
    pub feynman_pass: bool,
    pub control_pass: bool,
    pub identity_pass: bool,
}

fn fit_exponent(eps: &[f64], values: &[f64]) -> Option<f64> {
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    loglog_fit(eps, &abs).ok().map(|(s, _)| s)
}

/// The commutator experiment: pairings of the Feynman and retarded solutions
/// for the source `src` over `eps_list`, fitted exponents, and the identity
/// residual. The Feynman branch passes when its wrong-frequency part is
/// `O(eps^{r + delta - 2})` (growth in `1/eps` within 0.2) or vanishes, the control when
/// `|I(eps)|` scales like `eps^{r-1}` (+-0.15).
pub fn isozaki_experiment(ctx: &Propagators, src: &SourceSpec, r: f64, eps_list: &[f64]) -> Result<IsozakiReport> {
    let model = ctx.model();
    let time = ctx.time();
    let dx = model.grid().dx();
    let feyn = ctx.g_feynman(src)?;
    let yf = ctx.ad_trajectory(&feyn)?;
    let ret = ctx.g_retarded(src)?;
    let yr = ctx.ad_trajectory(&ret)?;
    let mut fp = Vec::new();
    let mut fw = Vec::new();
    let mut cp = Vec::new();
    let mut max_imag = 0.0f64;
    let mut dec_err = 0.0f64;
    let mut identity_residual = 0.0f64;
    let traj = manufactured_trajectory(model);
    for &eps in eps_list {
        let fam = CutoffFamily::new(r, eps)?;
        let a = isozaki_pairing(&yf, time, dx, &fam)?;
        let b = isozaki_pairing(&yr, time, dx, &fam)?;
        for p in [&a, &b] {
            max_imag = max_imag.max(p.value.im.abs());
            if p.value.norm() > 0.0 {
                dec_err = dec_err.max((p.value.re - p.decomposition).abs() / p.value.norm());
            }
        }
        fp.push(a.value.re);
        fw.push(a.wrong_side);
        cp.push(b.value.re);
        let (lhs, rhs) = commutator_identity(model, &fam, &traj)?;
        identity_residual = identity_residual.max((lhs - rhs).norm() / rhs.norm().max(1e-300));
    }
    let delta = model.delta();
    let inv: Vec<f64> = eps_list.iter().map(|e| 1.0 / e).collect();
    let feynman_exponent = fit_exponent(&inv, &fw);
    let control_exponent = fit_exponent(eps_list, &cp);
    // |I_wrong| = O(eps^{r+delta-2}) means growth in 1/eps of at most -(r+delta-2)
    let feynman_bound = -(r + delta - 2.0) + 0.2;
    let control_expected = r - 1.0;
    let peak = fp.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let wrong_vanishes = fw.iter().all(|v| v.abs() <= 1e-12 * peak.max(1e-300));
    Ok(IsozakiReport {
        r,
        delta,
        eps_list: eps_list.to_vec(),
        feynman_pairing: fp,
        feynman_wrong_side: fw,
        control_pairing: cp,
        feynman_exponent,
        control_exponent,
        max_imag,
        decomposition_error: dec_err,
        identity_residual,
        feynman_bound,
        control_expected,
        feynman_pass: wrong_vanishes || feynman_exponent.is_some_and(|e| e <= feynman_bound),
        control_pass: control_exponent.is_some_and(|e| (e - control_expected).abs() <= 0.15),
        identity_pass: identity_residual < 1e-8,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Cone {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProbePoint {
    pub t: f64,
    pub x: f64,
    pub cone: Cone,
}

/// Gaussian window of width `window` in `t` and `x` placed at probe points.
#[derive(Debug, Clone, Serialize)]
pub struct WavefrontProbe {
    pub window: f64,
    pub points: Vec<ProbePoint>,
    pub threshold: f64,
}

impl WavefrontProbe {
    /// Points `(+-t, +-speed t)` on the cones of a source at the origin.
    pub fn cone_points(times: &[f64], speed: f64, window: f64, threshold: f64) -> Self {
        let mut points = Vec::new();
        for cone in [Cone::Forward, Cone::Backward] {
            for &t in times {
                for dir in [1.0, -1.0] {
                    let tt = if cone == Cone::Forward { t } else { -t };
                    points.push(ProbePoint {
                        t: tt,
                        x: dir * speed * t,
                        cone,
                    });
                }
            }
        }
        Self {
            window,
            points,
            threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    pub point: ProbePoint,
    /// Windowed energy with `tau` of the sign opposite to the cone direction
    /// (negative on the forward cone), over the total.
    pub wrong_sign_ratio: f64,
    pub energy: f64,
    /// `energy` over the largest windowed energy among the probe points.
    pub relative_energy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WavefrontReport {
    pub results: Vec<ProbeResult>,
    pub max_wrong_sign_ratio: f64,
    /// Every probe point below the threshold.
    pub pass: bool,
}

/// Windowed Fourier analysis in time at each probe point. Time frequencies
/// use the convention `e^{+i tau t}`.
pub fn wavefront_probe(u: &SpacetimeFunction, probe: &WavefrontProbe) -> Result<WavefrontReport> {
    let time = u.time();
    let grid = u.space();
    let sigma = probe.window;
    let reach = 6.0 * sigma;
    if !(sigma > 0.0) {
        return Err(KgError::config("probe.window", "must be positive"));
    }
    if 3.0 * sigma > 0.5 * grid.length() {
        return Err(KgError::WindowClipped(format!("window {sigma} too wide for L = {}", grid.length())));
    }
    let half = (reach / time.dt()).ceil() as usize;
    let len = 2 * half + 1;
    let m = (4 * len).next_power_of_two();
    let fft = fft_plan(m, false);
    let mut results = Vec::new();
    for &pt in &probe.points {
        if pt.t - reach < time.t_min() || pt.t + reach > time.t_max() {
            return Err(KgError::WindowClipped(format!("window around t = {} leaves the time grid", pt.t)));
        }
        let center = ((pt.t - time.t_min()) / time.dt()).round() as usize;
        let mut pos = 0.0;
        let mut neg = 0.0;
        let mut zero = 0.0;
        for (j, x) in grid.nodes().into_iter().enumerate() {
            let mut d = (x - pt.x).rem_euclid(grid.length());
            if d > 0.5 * grid.length() {
                d -= grid.length();
            }
            let wx = (-d * d / (2.0 * sigma * sigma)).exp();
            if wx < 1e-16 {
                continue;
            }
            let mut buf = vec![C64::new(0.0, 0.0); m];
            for (k, b) in buf.iter_mut().take(len).enumerate() {
                let n = center + k - half;
                let dt = time.t(n) - pt.t;
                *b = u.row(n)[j] * (wx * (-dt * dt / (2.0 * sigma * sigma)).exp());
            }
            fft.process(&mut buf);
            for (k, b) in buf.iter().enumerate() {
                let e = b.norm_sqr();
                if k == 0 || k == m / 2 {
                    zero += e;
                } else if k < m / 2 {
                    pos += e;
                } else {
                    neg += e;
                }
            }
        }
        let total = pos + neg + zero;
        let wrong = match pt.cone {
            Cone::Forward => neg,
            Cone::Backward => pos,
        } + 0.5 * zero;
        results.push(ProbeResult {
            point: pt,
            wrong_sign_ratio: if total > 0.0 { wrong / total } else { 0.0 },
            energy: total,
            relative_energy: 0.0,
        });
    }
    let peak = results.iter().map(|r| r.energy).fold(0.0, f64::max);
    for r in &mut results {
        r.relative_energy = if peak > 0.0 { r.energy / peak } else { 0.0 };
    }
    let max_wrong_sign_ratio = results.iter().map(|r| r.wrong_sign_ratio).fold(0.0, f64::max);
    Ok(WavefrontReport {
        pass: max_wrong_sign_ratio < probe.threshold,
        max_wrong_sign_ratio,
        results,
    })
}
