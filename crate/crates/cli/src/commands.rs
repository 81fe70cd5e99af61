use std::collections::BTreeMap;
use std::time::Instant;

use clap::ValueEnum;
use kgprop::analysis::{isozaki_experiment, wavefront_probe, Cone, WavefrontProbe};
use kgprop::diag::remainder_decay;
use kgprop::evolve::{conservation_monitor, EvolutionSpec, Family};
use kgprop::grid::energy_norm;
use kgprop::model::{decay_check, default_decay_times};
use kgprop::oracle::{dense_feynman_shared, flat_multiplier_extrapolated, MultiplierKind, MultiplierSpec};
use kgprop::propagators::{
    default_membership_window, feynman_membership, PropagatorKind, PropagatorResult, Propagators, SourceSpec,
};
use kgprop::{KgError, ReducedModel, SpacetimeFunction, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{Writer, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    FlatCheck,
    Retarded,
    Advanced,
    Causal,
    Feynman,
    Isozaki,
    Wavefront,
    DecayCheck,
    All,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::FlatCheck => "flat-check",
            Subcommand::Retarded => "retarded",
            Subcommand::Advanced => "advanced",
            Subcommand::Causal => "causal",
            Subcommand::Feynman => "feynman",
            Subcommand::Isozaki => "isozaki",
            Subcommand::Wavefront => "wavefront",
            Subcommand::DecayCheck => "decay-check",
            Subcommand::All => "all",
        }
    }
}

const SUITE: [Subcommand; 8] = [
    Subcommand::FlatCheck,
    Subcommand::Retarded,
    Subcommand::Advanced,
    Subcommand::Causal,
    Subcommand::Feynman,
    Subcommand::Isozaki,
    Subcommand::Wavefront,
    Subcommand::DecayCheck,
];

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub code_version: &'static str,
    pub subcommand: Subcommand,
    pub pass: bool,
    pub wall_clock_s: f64,
    pub config: RunConfig,
    pub results: BTreeMap<&'static str, Value>,
}

fn bump_fn(s: f64) -> f64 {
    if s.abs() < 1.0 {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

fn source(cfg: &RunConfig, model: &ReducedModel, ctx: &Propagators) -> Result<SourceSpec, CliError> {
    let w = cfg.source.width;
    let nu = cfg.source.frequency;
    SourceSpec::from_fn(model.grid(), ctx.time(), |t, x| {
        let e = bump_fn(t / w) * (-x * x).exp();
        C64::new(e, 0.3 * x * e) * C64::from_polar(1.0, nu * t)
    })
    .map_err(|e| match e {
        KgError::SourceTooClose(m) => CliError::Core(KgError::config("source.width", m)),
        other => other.into(),
    })
}

fn context(cfg: &RunConfig, model: &ReducedModel) -> Result<Propagators, CliError> {
    let mut ctx = Propagators::new(model, cfg.time_grid()?, cfg.evolve.integrator)?;
    ctx.gamma = cfg.gamma;
    Ok(ctx)
}

fn rel(a: &SpacetimeFunction, b: &SpacetimeFunction) -> f64 {
    let d = b.l2_norm();
    let e = a.sub(b).map(|s| s.l2_norm()).unwrap_or(f64::INFINITY);
    if d > 0.0 {
        e / d
    } else {
        e
    }
}

fn energies(cfg: &RunConfig, r: &PropagatorResult) -> Result<Vec<(f64, f64)>, CliError> {
    let time = r.u.time();
    (0..time.node_count())
        .map(|k| Ok((time.t(k), energy_norm(&r.cauchy_data(time.t(k))?, cfg.sobolev.m))))
        .collect()
}

fn flat_check(cfg: &RunConfig, out: &Writer) -> Result<Value, CliError> {
    let model = cfg.flat_model()?;
    let ctx = context(cfg, &model)?;
    let src = source(cfg, &model, &ctx)?;
    let f = ctx.g_feynman(&src)?;
    let spec = MultiplierSpec::new(MultiplierKind::Feynman, cfg.oracle.epsilon)?;
    let m = flat_multiplier_extrapolated(&model, &spec, &src)?;
    let dense = dense_feynman_shared(&ctx, &src)?;
    let ret = ctx.g_retarded(&src)?;
    let mr = flat_multiplier_extrapolated(&model, &MultiplierSpec::new(MultiplierKind::Retarded, cfg.oracle.epsilon)?, &src)?;
    out.field("flat_feynman_u", &f.u)?;
    out.field("flat_multiplier_u", &m.field)?;
    let multiplier_error = rel(&f.u, &m.field);
    let dense_error = rel(&f.u, &dense);
    Ok(json!({
        "pass": multiplier_error < 5e-3 && dense_error < 1e-6 && f.residual_p < 1e-4,
        "residual_P": f.residual_p,
        "multiplier_error": multiplier_error,
        "multiplier_ill_conditioned": m.ill_conditioned,
        "dense_error": dense_error,
        "retarded_multiplier_error": rel(&ret.u, &mr.field),
    }))
}

/// Largest row energy outside the source's past/future relative to the peak.
fn leak(r: &PropagatorResult, outside: impl Fn(f64) -> bool) -> f64 {
    let time = r.u.time();
    let e = |k: usize| r.u.row(k).iter().chain(r.momentum.row(k)).map(|v| v.norm_sqr()).sum::<f64>();
    let peak = (0..time.node_count()).map(e).fold(0.0, f64::max);
    let bad = (0..time.node_count()).filter(|&k| outside(time.t(k))).map(e).fold(0.0, f64::max);
    if peak > 0.0 {
        bad / peak
    } else {
        0.0
    }
}

fn propagator(cfg: &RunConfig, out: &Writer, kind: PropagatorKind, name: &str) -> Result<Value, CliError> {
    let model = cfg.model()?;
    let ctx = context(cfg, &model)?;
    let src = source(cfg, &model, &ctx)?;
    let r = ctx.solve(kind, &src)?;
    out.field(&format!("{name}_u"), &r.u)?;
    out.field(&format!("{name}_momentum"), &r.momentum)?;
    out.csv(&format!("{name}_energy"), ["t", "value"], &energies(cfg, &r)?)?;
    let (s0, s1) = src.support().unwrap_or((0.0, 0.0));
    let mut v = json!({
        "residual_P": r.residual_p,
        "iterations": r.iterations,
        "contraction": r.contraction,
        "tail_estimate": r.tail_estimate,
        "source_support": [s0, s1],
    });
    let residual_ok = r.residual_p < 1e-4;
    let pass = match kind {
        PropagatorKind::Retarded => {
            let l = leak(&r, |t| t < s0);
            v["energy_before_support"] = json!(l);
            residual_ok && l < 1e-10
        }
        PropagatorKind::Advanced => {
            let l = leak(&r, |t| t > s1);
            v["energy_after_support"] = json!(l);
            residual_ok && l < 1e-10
        }
        PropagatorKind::Feynman | PropagatorKind::AntiFeynman => {
            v["bc_report"] = json!(r.bc_report);
            let (lo, hi) = default_membership_window(ctx.time(), src.support());
            if hi > lo {
                let m = feynman_membership(&ctx, &r, Some((lo, hi)))?;
                let rows: Vec<(f64, f64)> = m
                    .times_minus
                    .iter()
                    .zip(&m.norms_minus)
                    .rev()
                    .chain(m.times_plus.iter().zip(&m.norms_plus))
                    .map(|(t, n)| (*t, *n))
                    .collect();
                out.csv(&format!("{name}_wrong_side"), ["t", "value"], &rows)?;
                let pass = m.pass;
                v["membership"] = json!(m);
                residual_ok && pass
            } else {
                v["membership"] = Value::Null;
                residual_ok
            }
        }
        PropagatorKind::Causal => residual_ok,
    };
    v["pass"] = json!(pass);
    Ok(v)
}

fn isozaki(cfg: &RunConfig, out: &Writer) -> Result<Value, CliError> {
    let model = cfg.model()?;
    let ctx = context(cfg, &model)?;
    let src = source(cfg, &model, &ctx)?;
    let rep = isozaki_experiment(&ctx, &src, cfg.analysis.r, &cfg.analysis.eps_list).map_err(|e| match e {
        KgError::DegenerateFit(m) => CliError::Core(KgError::config("analysis.eps_list", m)),
        other => other.into(),
    })?;
    let col = |v: &[f64]| -> Vec<(f64, f64)> { rep.eps_list.iter().copied().zip(v.iter().copied()).collect() };
    out.csv("isozaki_feynman_pairing", ["eps", "value"], &col(&rep.feynman_pairing))?;
    out.csv("isozaki_feynman_wrong_side", ["eps", "value"], &col(&rep.feynman_wrong_side))?;
    out.csv("isozaki_control_pairing", ["eps", "value"], &col(&rep.control_pairing))?;
    let pass = rep.feynman_pass && rep.control_pass && rep.identity_pass;
    let mut v = json!(rep);
    v["pass"] = json!(pass);
    Ok(v)
}

fn wavefront(cfg: &RunConfig, _out: &Writer) -> Result<Value, CliError> {
    let model = cfg.model()?;
    let ctx = context(cfg, &model)?;
    // narrow real source: a stand-in for the kernel
    let src = SourceSpec::from_fn(model.grid(), ctx.time(), |t, x| C64::new((-(t * t + x * x) / 0.72).exp(), 0.0))?;
    let t = cfg.time.t_max;
    let probe = WavefrontProbe::cone_points(&[t / 3.0, 5.0 * t / 12.0], 0.99, cfg.probe.window, cfg.probe.threshold);
    let run = |kind| -> Result<_, CliError> {
        let r = ctx.solve(kind, &src)?;
        wavefront_probe(&r.u, &probe).map_err(|e| match e {
            KgError::WindowClipped(m) => CliError::Core(KgError::config("probe.window", m)),
            other => other.into(),
        })
    };
    let feyn = run(PropagatorKind::Feynman)?;
    let causal = run(PropagatorKind::Causal)?;
    let ret = run(PropagatorKind::Retarded)?;
    let causal_ok = causal.results.iter().all(|r| (0.2..=0.8).contains(&r.wrong_sign_ratio));
    let backward = ret
        .results
        .iter()
        .filter(|r| r.point.cone == Cone::Backward)
        .map(|r| r.relative_energy)
        .fold(0.0, f64::max);
    Ok(json!({
        "pass": feyn.pass && causal_ok && backward < 1e-8,
        "feynman": feyn,
        "causal": causal,
        "causal_in_range": causal_ok,
        "retarded_backward_energy": backward,
    }))
}

fn decay(cfg: &RunConfig, out: &Writer) -> Result<Value, CliError> {
    let metric = cfg.metric()?;
    let model = kgprop::model::reduce(&metric)?;
    let delta = cfg.metric.delta;
    let times = default_decay_times();
    let coeff = decay_check(&metric, &times)?;
    let rem = remainder_decay(&model, &times)?;
    out.csv("decay_check", ["t", "value"], &coeff.times.iter().copied().zip(coeff.values.iter().copied()).collect::<Vec<_>>())?;
    out.csv("remainder_decay", ["t", "value"], &rem.times.iter().copied().zip(rem.values.iter().copied()).collect::<Vec<_>>())?;
    let coeff_ok = coeff.exact_zero || coeff.slope.is_some_and(|s| s <= -delta + 0.3);
    let rem_ok = rem.exact_zero || rem.slope.is_some_and(|s| s <= -(1.0 + delta) + 0.3);
    // q^ad conservation under U^d for seeded random smooth data
    let grid = model.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let l = grid.length();
    let mut x: Vec<C64> = Vec::with_capacity(2 * grid.len());
    for _ in 0..2 {
        let terms: Vec<(C64, f64)> = (0..4)
            .map(|_| (C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)), rng.gen_range(-3..=3) as f64))
            .collect();
        x.extend(grid.nodes().iter().map(|xv| {
            terms
                .iter()
                .map(|(a, k)| a * C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k * xv / l))
                .sum::<C64>()
        }));
    }
    let n = (grid.dx() * x.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt();
    x.iter_mut().for_each(|v| *v /= n);
    let spec = EvolutionSpec::new(Family::Diagonal, cfg.evolve.integrator, cfg.time.dt)?;
    let drift = conservation_monitor(&model, spec, &x, (-cfg.time.t_max, cfg.time.t_max))?.max_drift;
    Ok(json!({
        "pass": coeff_ok && rem_ok && drift < 1e-8,
        "coefficient_decay": coeff,
        "coefficient_bound": -delta + 0.3,
        "remainder_decay": rem,
        "remainder_bound": -(1.0 + delta) + 0.3,
        "q_ad_drift": drift,
    }))
}

fn run_one(sub: Subcommand, cfg: &RunConfig, out: &Writer) -> Result<Value, CliError> {
    match sub {
        Subcommand::FlatCheck => flat_check(cfg, out),
        Subcommand::Retarded => propagator(cfg, out, PropagatorKind::Retarded, "retarded"),
        Subcommand::Advanced => propagator(cfg, out, PropagatorKind::Advanced, "advanced"),
        Subcommand::Causal => propagator(cfg, out, PropagatorKind::Causal, "causal"),
        Subcommand::Feynman => propagator(cfg, out, PropagatorKind::Feynman, "feynman"),
        Subcommand::Isozaki => isozaki(cfg, out),
        Subcommand::Wavefront => wavefront(cfg, out),
        Subcommand::DecayCheck => decay(cfg, out),
        Subcommand::All => unreachable!("expanded by run"),
    }
}

/// Run a subcommand, write `report.json`, and return the report. Numerical
/// failures inside `all` are recorded as failed sections; configuration
/// errors abort.
pub fn run(sub: Subcommand, cfg: &RunConfig, out: &Writer) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let subs: Vec<Subcommand> = if sub == Subcommand::All { SUITE.to_vec() } else { vec![sub] };
    let mut results = BTreeMap::new();
    for s in subs {
        let t0 = Instant::now();
        let mut v = match run_one(s, cfg, out) {
            Ok(v) => v,
            Err(e) if sub == Subcommand::All && e.exit_code() != 2 => json!({"pass": false, "error": e.to_string()}),
            Err(e) => return Err(e),
        };
        v["wall_clock_s"] = json!(t0.elapsed().as_secs_f64());
        results.insert(s.name(), v);
    }
    let pass = results.values().all(|v| v["pass"] == json!(true));
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        code_version: env!("CARGO_PKG_VERSION"),
        subcommand: sub,
        pass,
        wall_clock_s: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
        results,
    };
    out.text("config.toml", &cfg.to_toml())?;
    out.json("report.json", &report)?;
    Ok(report)
}
