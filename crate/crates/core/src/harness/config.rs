//! TOML campaign configuration.
//!
//! ```toml
//! [dynamics]            # preset, table file or closed-form parameters
//! preset = "reference"
//! [context]
//! type = "merging"
//! [policy]
//! name = "safe_two_phase"
//! [grid]
//! xa = { start = 0, stop = 40, step = 5 }
//! xf = [0, 40, 80]
//! [sim]
//! seed = 7
//! [output]
//! dir = "out"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{range_values, Axis, GridSpec};
use crate::kinematics::{AdTables, DynamicsProfile};
use crate::policy::{DriftSpec, PolicyId, PolicySpec};
use crate::sim::SimConfig;
use crate::world::{make_context, ConfigType, ContextParams};

/// Where the vehicle dynamics come from. Tables are embedded so a config
/// snapshot is self-contained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DynamicsSource {
    Preset { name: String },
    ClosedForm { a_max: f64, b_max: f64, v_max: f64 },
    Table { source: String, v_max: f64, csv: String },
}

impl Default for DynamicsSource {
    fn default() -> Self {
        DynamicsSource::Preset { name: "reference".into() }
    }
}

impl DynamicsSource {
    pub fn profile(&self) -> Result<DynamicsProfile> {
        match self {
            DynamicsSource::Preset { name } => DynamicsProfile::preset(name),
            DynamicsSource::ClosedForm { a_max, b_max, v_max } => DynamicsProfile::closed_form(*a_max, *b_max, *v_max),
            DynamicsSource::Table { csv, v_max, .. } => DynamicsProfile::tabulated(AdTables::from_csv(csv)?, *v_max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Ansi,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "ansi" => Ok(Format::Ansi),
            "json" => Ok(Format::Json),
            other => Err(Error::config(format!("unknown format `{other}` (expected csv, ansi or json)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub formats: Vec<Format>,
    /// Score at or above which a cell counts as passing in comparisons.
    pub threshold: f64,
    pub exclude_other: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: None, formats: vec![Format::Csv, Format::Json], threshold: 50.0, exclude_other: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub axes: Vec<Axis>,
    pub hi: f64,
    pub tol: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { axes: Vec::new(), hi: 60.0, tol: 0.1 }
    }
}

/// Fully resolved campaign configuration; echoed into every record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub dynamics: DynamicsSource,
    pub context: ContextParams,
    pub policy: PolicySpec,
    pub grid: GridSpec,
    pub v_e: Vec<f64>,
    pub refine: RefineConfig,
    /// `sim.seed` is the campaign base seed.
    pub sim: SimConfig,
    pub output: OutputConfig,
    /// Worker threads; 0 means one per core. Not part of recorded results.
    pub jobs: usize,
}

impl CampaignConfig {
    pub fn new(context: ContextParams, policy: PolicySpec) -> Self {
        Self {
            dynamics: DynamicsSource::default(),
            context,
            policy,
            grid: GridSpec::default(),
            v_e: vec![0.0, 4.0],
            refine: RefineConfig::default(),
            sim: SimConfig::default(),
            output: OutputConfig::default(),
            jobs: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.sim.seed
    }

    pub fn validate(&self) -> Result<()> {
        let dyn_ = self.dynamics.profile()?;
        self.context.validate()?;
        self.grid.validate()?;
        self.sim.validate()?;
        if self.v_e.is_empty() {
            return Err(Error::config("grid.ve must not be empty"));
        }
        if let Some(v) = self.v_e.iter().find(|v| !(**v >= 0.0 && **v <= dyn_.v_max() + 1e-9)) {
            return Err(Error::config(format!("grid.ve values must lie in [0, {}], got {v}", dyn_.v_max())));
        }
        if let PolicyId::Noisy { sigma, .. } = &self.policy.id {
            if !(*sigma >= 0.0 && *sigma < 1.0) {
                return Err(Error::config(format!("policy.sigma must be in [0, 1), got {sigma}")));
            }
        }
        if !(self.policy.margin >= 0.0) {
            return Err(Error::config(format!("policy.margin must be non-negative, got {}", self.policy.margin)));
        }
        if !(self.policy.g_min >= 0.0) {
            return Err(Error::config(format!("policy.gmin must be non-negative, got {}", self.policy.g_min)));
        }
        if !(self.refine.tol > 0.0 && self.refine.hi > 0.0) {
            return Err(Error::config("grid.refine_tol and grid.refine_hi must be positive"));
        }
        if !(0.0..=100.0).contains(&self.output.threshold) {
            return Err(Error::config(format!("output.threshold must be in [0, 100], got {}", self.output.threshold)));
        }
        Ok(())
    }
}

// Raw file shape.

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    dynamics: RawDynamics,
    context: RawContext,
    #[serde(default)]
    policy: RawPolicy,
    #[serde(default)]
    grid: RawGrid,
    #[serde(default)]
    sim: SimConfig,
    #[serde(default)]
    output: RawOutput,
    jobs: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDynamics {
    preset: Option<String>,
    table: Option<String>,
    a_max: Option<f64>,
    b_max: Option<f64>,
    v_max: Option<f64>,
}

// Unknown keys land in `params` and are rejected by `make_context`.
#[derive(Debug, Default, Deserialize)]
struct RawContext {
    #[serde(rename = "type")]
    kind: String,
    #[serde(flatten)]
    params: BTreeMap<String, f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    name: Option<String>,
    inner: Option<String>,
    sigma: Option<f64>,
    margin: Option<f64>,
    gmin: Option<f64>,
    drift_rate: Option<f64>,
    change_route: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawValues {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl RawValues {
    fn resolve(&self, field: &str) -> Result<Vec<f64>> {
        match self {
            RawValues::List(v) => Ok(v.clone()),
            RawValues::Range { start, stop, step } => {
                range_values(*start, *stop, *step).map_err(|e| Error::config(format!("grid.{field}: {e}")))
            }
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    xa: Option<RawValues>,
    xf: Option<RawValues>,
    ve: Option<Vec<f64>>,
    repeats: Option<u32>,
    include_critical: Option<bool>,
    refine: Option<Vec<String>>,
    refine_hi: Option<f64>,
    refine_tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    formats: Option<Vec<String>>,
    threshold: Option<f64>,
    exclude_other: Option<bool>,
}

fn resolve_dynamics(raw: &RawDynamics, base: &Path) -> Result<DynamicsSource> {
    let closed = raw.a_max.is_some() || raw.b_max.is_some();
    match (&raw.preset, &raw.table, closed) {
        (None, None, false) => {
            if raw.v_max.is_some() {
                return Err(Error::config("dynamics.v_max needs either `table` or `a_max`/`b_max`"));
            }
            Ok(DynamicsSource::default())
        }
        (Some(name), None, false) => {
            if raw.v_max.is_some() {
                return Err(Error::config("dynamics.v_max cannot be combined with `preset`"));
            }
            DynamicsProfile::preset(name)?;
            Ok(DynamicsSource::Preset { name: name.clone() })
        }
        (None, Some(table), false) => {
            let v_max = raw.v_max.ok_or_else(|| Error::config("dynamics.v_max is required with `table`"))?;
            let csv = match DynamicsProfile::shipped_table(table) {
                Some(text) => text.to_string(),
                None => {
                    let path = base.join(table);
                    std::fs::read_to_string(&path)
                        .map_err(|e| Error::config(format!("dynamics.table: cannot read {}: {e}", path.display())))?
                }
            };
            AdTables::from_csv(&csv).map_err(|e| Error::config(format!("dynamics.table `{table}`: {e}")))?;
            Ok(DynamicsSource::Table { source: table.clone(), v_max, csv })
        }
        (None, None, true) => {
            let need = |name: &str, v: Option<f64>| v.ok_or_else(|| Error::config(format!("dynamics.{name} is required")));
            Ok(DynamicsSource::ClosedForm {
                a_max: need("a_max", raw.a_max)?,
                b_max: need("b_max", raw.b_max)?,
                v_max: need("v_max", raw.v_max)?,
            })
        }
        _ => Err(Error::config("dynamics: give exactly one of `preset`, `table` or `a_max`/`b_max`")),
    }
}

fn resolve_policy(raw: &RawPolicy) -> Result<PolicySpec> {
    let name = raw.name.as_deref().unwrap_or("safe_two_phase");
    let base = |name: &str| -> Result<PolicyId> {
        let id: PolicyId = name.parse()?;
        Ok(match id {
            PolicyId::Drifter(d) => PolicyId::Drifter(DriftSpec {
                rate: raw.drift_rate.unwrap_or(d.rate),
                change_route: raw.change_route.unwrap_or(d.change_route),
            }),
            other => other,
        })
    };
    let id = if name.eq_ignore_ascii_case("noisy") {
        let inner = base(raw.inner.as_deref().unwrap_or("safe_two_phase"))?;
        PolicyId::noisy(inner, raw.sigma.unwrap_or(0.15))?
    } else {
        if raw.inner.is_some() || raw.sigma.is_some() {
            return Err(Error::config("policy.inner and policy.sigma only apply to `noisy`"));
        }
        base(name)?
    };
    let mut spec = PolicySpec::new(id);
    spec.margin = raw.margin.unwrap_or(spec.margin);
    spec.g_min = raw.gmin.unwrap_or(spec.g_min);
    Ok(spec)
}

fn resolve(raw: RawFile, base: &Path) -> Result<CampaignConfig> {
    let kind: ConfigType = raw.context.kind.parse()?;
    let context = make_context(kind, &raw.context.params)?;
    let mut cfg = CampaignConfig::new(context, resolve_policy(&raw.policy)?);
    cfg.dynamics = resolve_dynamics(&raw.dynamics, base)?;
    if let Some(v) = &raw.grid.xa {
        cfg.grid.x_a_values = v.resolve("xa")?;
    }
    if let Some(v) = &raw.grid.xf {
        cfg.grid.x_f_values = v.resolve("xf")?;
    }
    cfg.grid.repeats = raw.grid.repeats.unwrap_or(cfg.grid.repeats);
    cfg.grid.include_critical = raw.grid.include_critical.unwrap_or(cfg.grid.include_critical);
    if let Some(ve) = raw.grid.ve {
        cfg.v_e = ve;
    }
    if let Some(axes) = &raw.grid.refine {
        cfg.refine.axes = axes.iter().map(|a| a.parse()).collect::<Result<_>>()?;
    }
    cfg.refine.hi = raw.grid.refine_hi.unwrap_or(cfg.refine.hi);
    cfg.refine.tol = raw.grid.refine_tol.unwrap_or(cfg.refine.tol);
    cfg.sim = raw.sim;
    cfg.output.dir = raw.output.dir.map(|d| if d.is_absolute() { d } else { base.join(d) });
    if let Some(f) = &raw.output.formats {
        cfg.output.formats = f.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    }
    cfg.output.threshold = raw.output.threshold.unwrap_or(cfg.output.threshold);
    cfg.output.exclude_other = raw.output.exclude_other.unwrap_or(cfg.output.exclude_other);
    cfg.jobs = raw.jobs.unwrap_or(0);
    cfg.validate()?;
    Ok(cfg)
}

/// Parses config text; relative paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<CampaignConfig> {
    let raw: RawFile = toml::from_str(text).map_err(|e| Error::config(e.to_string().trim_end().to_string()))?;
    resolve(raw, base)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<CampaignConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<CampaignConfig> {
        parse_config(text, Path::new("."))
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = parse("[context]\ntype = \"merging\"\n").unwrap();
        assert_eq!(cfg.context, ContextParams::new(ConfigType::Merging));
        assert_eq!(cfg.policy, PolicySpec::new(PolicyId::SafeTwoPhase));
        assert_eq!(cfg.grid, GridSpec::default());
        assert_eq!(cfg.v_e, vec![0.0, 4.0]);
        assert_eq!(cfg.sim, SimConfig::default());
        assert_eq!(cfg.dynamics, DynamicsSource::default());
    }

    #[test]
    fn bad_values_name_the_field() {
        let e = parse("[context]\ntype = \"merging\"\ncd = -1\n").unwrap_err().to_string();
        assert!(e.contains("context.cd"), "{e}");
        let e = parse("[context]\ntype = \"merging\"\n[grid]\nrepeats = 0\n").unwrap_err().to_string();
        assert!(e.contains("grid.repeats"), "{e}");
        let e = parse("[context]\ntype = \"merging\"\n[sim]\nbogus = 1\n").unwrap_err().to_string();
        assert!(e.contains("bogus") && e.contains("line"), "{e}");
        let e = parse("[context]\ntype = \"merging\"\nwidth = 3\n").unwrap_err().to_string();
        assert!(e.contains("width"), "{e}");
        assert!(parse("[context]\ntype = \"roundabout\"\n").is_err());
        assert!(parse("[context]\ntype = \"merging\"\n[dynamics]\npreset = \"mile\"\na_max = 2\n").is_err());
    }

    #[test]
    fn shipped_table_loads() {
        let cfg = parse("[dynamics]\ntable = \"pid_shared\"\nv_max = 4.0\n[context]\ntype = \"cross_light\"\n").unwrap();
        assert_eq!(cfg.dynamics.profile().unwrap().v_max(), 4.0);
        let cfg = parse("[dynamics]\ntable = \"pid_shared\"\nv_max = 6.5\n[context]\ntype = \"merging\"\n").unwrap();
        assert_eq!(cfg.dynamics.profile().unwrap().brake_distance(5.0).unwrap(), 2.3);
    }

    #[test]
    fn table_file_resolves_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("t.csv"), DynamicsProfile::shipped_table("mile").unwrap()).unwrap();
        let cfg_path = dir.path().join("c.toml");
        std::fs::write(&cfg_path, "[dynamics]\ntable = \"t.csv\"\nv_max = 6.5\n[context]\ntype = \"merging\"\n").unwrap();
        assert!(load_config(&cfg_path).is_ok());
        std::fs::write(&cfg_path, "[dynamics]\ntable = \"missing.csv\"\nv_max = 6.5\n[context]\ntype = \"merging\"\n").unwrap();
        let e = load_config(&cfg_path).unwrap_err().to_string();
        assert!(e.contains("dynamics.table"), "{e}");
    }

    #[test]
    fn grid_and_policy_keys() {
        let cfg = parse(
            "[context]\ntype = \"cross_yield\"\n[policy]\nname = \"noisy\"\nsigma = 0.1\nmargin = 0.5\n\
             [grid]\nxa = { start = 0, stop = 10, step = 5 }\nxf = [0, 7.5]\nve = [2]\nrepeats = 3\nrefine = [\"xa\"]\n",
        )
        .unwrap();
        assert_eq!(cfg.grid.x_a_values, vec![0.0, 5.0, 10.0]);
        assert_eq!(cfg.grid.x_f_values, vec![0.0, 7.5]);
        assert_eq!(cfg.policy.id, PolicyId::noisy(PolicyId::SafeTwoPhase, 0.1).unwrap());
        assert_eq!(cfg.policy.margin, 0.5);
        assert_eq!(cfg.refine.axes, vec![Axis::Xa]);
        assert_eq!((cfg.v_e.clone(), cfg.grid.repeats), (vec![2.0], 3));
        assert!(parse("[context]\ntype = \"merging\"\n[policy]\nname = \"noisy\"\nsigma = 1.5\n").is_err());
        assert!(parse("[context]\ntype = \"merging\"\n[grid]\nve = [9]\n").is_err());
    }
}
