use std::path::{Path, PathBuf};

use kgprop::evolve::Integrator;
use kgprop::{KgError, MetricFamily, ModelMetric, ReducedModel, SpatialGrid, TimeGrid};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

/// Keys without a default.
const REQUIRED: [&str; 6] = ["grid.N", "grid.L", "time.Tmax", "time.dt", "metric.family", "mass"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub metric: MetricConfig,
    pub mass: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub sobolev: SobolevConfig,
    #[serde(default)]
    pub evolve: EvolveConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(rename = "Tmax")]
    pub t_max: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    Flat,
    Bump,
    Homogeneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    pub family: FamilyName,
    #[serde(rename = "A", default = "default_a")]
    pub a: f64,
    #[serde(rename = "B", default = "default_b")]
    pub b: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SobolevConfig {
    #[serde(default)]
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveConfig {
    #[serde(default = "default_integrator")]
    pub integrator: Integrator,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            integrator: default_integrator(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub dense: DenseConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            dense: DenseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseConfig {
    #[serde(rename = "maxN", default = "default_max_n")]
    pub max_n: usize,
}

impl Default for DenseConfig {
    fn default() -> Self {
        Self { max_n: default_max_n() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_eps_list")]
    pub eps_list: Vec<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            r: default_r(),
            eps_list: default_eps_list(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            window: default_window(),
            threshold: default_threshold(),
        }
    }
}

/// The source used by the propagator subcommands:
/// `bump(t / width) exp(-x^2) (1 + 0.3 i x) exp(i frequency t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default)]
    pub frequency: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            width: default_width(),
            frequency: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

fn default_gamma() -> f64 {
    1.0
}
fn default_a() -> f64 {
    0.3
}
fn default_b() -> f64 {
    0.2
}
fn default_delta() -> f64 {
    1.5
}
fn default_integrator() -> Integrator {
    Integrator::Magnus
}
fn default_epsilon() -> f64 {
    5e-3
}
fn default_max_n() -> usize {
    2600
}
fn default_r() -> f64 {
    0.5
}
fn default_eps_list() -> Vec<f64> {
    vec![0.25, 0.125, 0.0625]
}
fn default_window() -> f64 {
    2.0
}
fn default_threshold() -> f64 {
    0.05
}
fn default_width() -> f64 {
    2.0
}
fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn config_err(key: &str, message: impl Into<String>) -> CliError {
    CliError::Core(KgError::config(key, message))
}

fn lookup<'a>(table: &'a Table, key: &str) -> Option<&'a Value> {
    let mut parts = key.split('.');
    let mut cur = table.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

/// Set a dotted key, creating intermediate tables.
fn set(table: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| config_err(key, format!("`{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parse `key=value`; the value is read as a TOML value, falling back to a
/// bare string.
fn parse_override(s: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| config_err(s, "override must have the form key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(config_err(s, "empty key in override"));
    }
    let raw = raw.trim();
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: Table = text.parse().map_err(|e: toml::de::Error| config_err("<file>", e.message()))?;
        for o in overrides {
            let (key, value) = parse_override(o)?;
            set(&mut table, &key, value)?;
        }
        for key in REQUIRED {
            if lookup(&table, key).is_none() {
                return Err(config_err(key, "missing required key"));
            }
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
            let key = e.path().to_string();
            config_err(&key, e.into_inner().message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn validate(&self) -> Result<(), CliError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_err(key, format!("must be positive, got {v}")))
            }
        };
        if self.grid.n < 8 || self.grid.n % 2 != 0 {
            return Err(config_err("grid.N", format!("must be even and >= 8, got {}", self.grid.n)));
        }
        positive("grid.L", self.grid.l)?;
        positive("time.Tmax", self.time.t_max)?;
        positive("time.dt", self.time.dt)?;
        let half = self.time.t_max / self.time.dt;
        if (half - half.round()).abs() > 1e-9 * half.max(1.0) || half.round() < 1.0 {
            return Err(config_err("time.dt", format!("must divide Tmax = {}", self.time.t_max)));
        }
        positive("mass", self.mass)?;
        if !(self.metric.delta > 1.0) {
            return Err(config_err("metric.delta", format!("must exceed 1, got {}", self.metric.delta)));
        }
        if !(self.metric.a.abs() < 0.5) {
            return Err(config_err("metric.A", format!("|A| must be < 1/2, got {}", self.metric.a)));
        }
        if !self.metric.b.is_finite() {
            return Err(config_err("metric.B", "must be finite"));
        }
        positive("gamma", self.gamma)?;
        if !(self.sobolev.m >= 0.0) {
            return Err(config_err("sobolev.m", format!("must be >= 0, got {}", self.sobolev.m)));
        }
        positive("oracle.epsilon", self.oracle.epsilon)?;
        if self.oracle.dense.max_n == 0 {
            return Err(config_err("oracle.dense.maxN", "must be positive"));
        }
        if !(self.analysis.r > 0.0 && self.analysis.r < 1.0) {
            return Err(config_err("analysis.r", format!("must lie in (0, 1), got {}", self.analysis.r)));
        }
        if self.analysis.eps_list.len() < 2 || self.analysis.eps_list.iter().any(|e| !(*e > 0.0)) {
            return Err(config_err("analysis.eps_list", "needs at least two positive entries"));
        }
        let eps_min = self.analysis.eps_list.iter().copied().fold(f64::INFINITY, f64::min);
        if 2.0 / eps_min > self.time.t_max {
            return Err(config_err(
                "analysis.eps_list",
                format!("2/eps = {} exceeds Tmax = {}", 2.0 / eps_min, self.time.t_max),
            ));
        }
        positive("probe.window", self.probe.window)?;
        if !(self.probe.threshold > 0.0 && self.probe.threshold < 1.0) {
            return Err(config_err("probe.threshold", format!("must lie in (0, 1), got {}", self.probe.threshold)));
        }
        positive("source.width", self.source.width)?;
        if self.source.width >= self.time.t_max - 2.0 * self.time.dt {
            return Err(config_err("source.width", "source support must end two steps before Tmax"));
        }
        if !self.source.frequency.is_finite() {
            return Err(config_err("source.frequency", "must be finite"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<SpatialGrid, CliError> {
        SpatialGrid::new(self.grid.n, self.grid.l).map_err(|e| config_err("grid.N", e.to_string()))
    }

    pub fn time_grid(&self) -> Result<TimeGrid, CliError> {
        TimeGrid::with_step(self.time.t_max, self.time.dt).map_err(|e| config_err("time.dt", e.to_string()))
    }

    pub fn family(&self) -> MetricFamily {
        let (a, b) = (self.metric.a, self.metric.b);
        match self.metric.family {
            FamilyName::Flat => MetricFamily::Flat,
            FamilyName::Bump => MetricFamily::Bump { a, b },
            FamilyName::Homogeneous => MetricFamily::Homogeneous { a, b },
        }
    }

    pub fn metric(&self) -> Result<ModelMetric, CliError> {
        ModelMetric::new(self.grid()?, self.family(), self.mass, self.metric.delta)
            .map_err(|e| config_err("metric", e.to_string()))
    }

    pub fn model(&self) -> Result<ReducedModel, CliError> {
        Ok(kgprop::model::reduce(&self.metric()?)?)
    }

    /// The flat model on the configured grid.
    pub fn flat_model(&self) -> Result<ReducedModel, CliError> {
        let m = ModelMetric::flat(self.grid()?, self.mass).map_err(|e| config_err("mass", e.to_string()))?;
        Ok(kgprop::model::reduce(&m)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "mass = 1.0\n[grid]\nN = 32\nL = 20.0\n[time]\nTmax = 32.0\ndt = 0.05\n[metric]\nfamily = \"flat\"\n";

    fn key_of(e: CliError) -> String {
        match e {
            CliError::Core(KgError::Config { key, .. }) => key,
            other => panic!("not a config error: {other}"),
        }
    }

    #[test]
    fn defaults_and_round_trip() {
        let cfg = RunConfig::from_toml(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.gamma, 1.0);
        assert_eq!(cfg.evolve.integrator, Integrator::Magnus);
        assert_eq!(cfg.oracle.dense.max_n, 2600);
        let back = RunConfig::from_toml(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides() {
        let o = [
            "metric.family=bump".to_string(),
            "oracle.dense.maxN=100".to_string(),
            "analysis.eps_list=[0.5, 0.25]".to_string(),
            "evolve.integrator=rk4".to_string(),
        ];
        let cfg = RunConfig::from_toml(MINIMAL, &o).unwrap();
        assert_eq!(cfg.metric.family, FamilyName::Bump);
        assert_eq!(cfg.oracle.dense.max_n, 100);
        assert_eq!(cfg.analysis.eps_list, vec![0.5, 0.25]);
        assert_eq!(cfg.evolve.integrator, Integrator::Rk4);
    }

    #[test]
    fn errors_name_the_key() {
        let no_mass = MINIMAL.replace("mass = 1.0\n", "");
        assert_eq!(key_of(RunConfig::from_toml(&no_mass, &[]).unwrap_err()), "mass");
        let cases = [
            ("mass=-1", "mass"),
            ("grid.N=7", "grid.N"),
            ("time.dt=0.03", "time.dt"),
            ("analysis.eps_list=[0.5, 0.01]", "analysis.eps_list"),
            ("metric.delta=1.0", "metric.delta"),
            ("metric.family=\"spiral\"", "metric.family"),
            ("evolve.integrator=euler", "evolve.integrator"),
            ("grid.L=\"wide\"", "grid.L"),
            ("analysis.r=1.5", "analysis.r"),
            ("probe.threshold=2", "probe.threshold"),
            ("bogus=1", "bogus"),
        ];
        for (o, key) in cases {
            let e = RunConfig::from_toml(MINIMAL, &[o.to_string()]).unwrap_err();
            let got = key_of(e);
            assert!(got.contains(key), "{o}: got key {got}");
        }
        assert!(RunConfig::from_toml(MINIMAL, &["noequals".to_string()]).is_err());
    }
}
