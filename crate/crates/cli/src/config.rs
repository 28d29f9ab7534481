//! The run configuration: one JSON document, with dot-path overrides from
//! the command line applied before validation.

use std::path::{Path, PathBuf};

use kplane_core::operator::OperatorSpec;
use kplane_core::polyspace::CorrectorConfig;
use kplane_core::solver::FitConfig;
use kplane_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Environment variable naming the config file when `--config` is absent.
pub const CONFIG_ENV: &str = "KPLANE_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Fit,
    Lasso,
    Predict,
    Prune,
    Transform,
    Greens,
    Verify,
}

/// Sampling parameters for `transform`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KplaneBlock {
    /// Number of directions handed to the default design for `(d, k)`.
    pub directions: usize,
    /// t-grid refinement relative to the input grid spacing.
    pub t_refine: usize,
    /// Half-width and points per axis of the grid that plane functions are
    /// backprojected onto.
    pub extent: f64,
    pub points_per_axis: usize,
}

impl Default for KplaneBlock {
    fn default() -> Self {
        Self { directions: 180, t_refine: 1, extent: 8.0, points_per_axis: 128 }
    }
}

/// Random dictionary used by `lasso`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoBlock {
    pub atoms: usize,
    /// When set, `λ = lambda_ratio · λ_max` replaces `solver.lambda`.
    pub lambda_ratio: Option<f64>,
    /// Reduce the support to at most `M - dim P` atoms after solving.
    pub prune: bool,
    pub max_iter: usize,
}

impl Default for LassoBlock {
    fn default() -> Self {
        Self { atoms: 500, lambda_ratio: None, prune: true, max_iter: 100_000 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoBlock {
    /// Training CSV: d feature columns then the target.
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Inputs for `predict` (CSV) or `transform` (binary field).
    pub input: Option<PathBuf>,
    /// Outputs of `predict` (CSV) or `transform` (binary field).
    pub output: Option<PathBuf>,
    /// Directory for model, trace, metrics and report files.
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub seed: u64,
    pub operator: OperatorSpec,
    pub solver: FitConfig,
    /// Corrector grid; the per-dimension default when absent.
    pub polyspace: Option<CorrectorConfig>,
    pub kplane: KplaneBlock,
    pub lasso: LassoBlock,
    pub io: IoBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: None,
            seed: 0,
            operator: OperatorSpec::fractional_laplacian(2.0, 1, 0).expect("valid default operator"),
            solver: FitConfig::default(),
            polyspace: None,
            kplane: KplaneBlock::default(),
            lasso: LassoBlock::default(),
            io: IoBlock { out_dir: PathBuf::from("."), ..IoBlock::default() },
        }
    }
}

impl RunConfig {
    /// Defaults, then the file (if any), then the overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, Error> {
        let mut doc = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            let file: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Schema(format!("config {}: {e}", path.display())))?;
            merge(&mut doc, file);
        }
        for (key, raw) in overrides {
            set_path(&mut doc, key, parse_scalar(raw))?;
        }
        let mut cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::Schema(e.to_string()))?;
        // The top-level seed drives every consumer unless the solver block
        // names its own.
        if cfg.solver.seed == 0 {
            cfg.solver.seed = cfg.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.solver.validate()?;
        if self.kplane.directions == 0 || self.kplane.t_refine == 0 || self.kplane.points_per_axis < 2 {
            return Err(Error::Config("kplane block needs positive counts".into()));
        }
        if self.kplane.extent.is_nan() || self.kplane.extent <= 0.0 {
            return Err(Error::Config("kplane.extent must be positive".into()));
        }
        if self.lasso.atoms == 0 {
            return Err(Error::Config("lasso.atoms must be at least 1".into()));
        }
        if let Some(r) = self.lasso.lambda_ratio {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Config(format!("lasso.lambda_ratio must lie in (0, 1], got {r}")));
            }
        }
        for (name, p) in [("data", &self.io.data), ("model", &self.io.model), ("input", &self.io.input)] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::Config(format!("io.{name}: {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn corrector(&self) -> CorrectorConfig {
        self.polyspace.unwrap_or_else(|| CorrectorConfig::default_for(self.operator.d))
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, Error> {
        field.as_deref().ok_or_else(|| Error::Config(format!("io.{name} is required for this mode")))
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, patch) => *slot = patch,
    }
}

/// JSON if it parses, otherwise a bare string (so `--io.data=x.csv` works).
fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<(), Error> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("malformed override key {key:?}")));
        }
        let obj = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just created")
            }
            _ => return Err(Error::Config(format!("override {key:?}: {} is not an object", parts[..i].join(".")))),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split yields at least one part")
}

/// Top-level scalar keys that may be overridden without a dot.
const TOP_LEVEL_KEYS: [&str; 2] = ["seed", "mode"];

/// Splits `--a.b=value` (and `--seed=value`) arguments off the command line.
/// Anything else is left for the argument parser.
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        if let Some(body) = arg.strip_prefix("--") {
            if let Some((key, value)) = body.split_once('=') {
                if key.contains('.') || TOP_LEVEL_KEYS.contains(&key) {
                    overrides.push((key.to_string(), value.to_string()));
                    continue;
                }
            }
        }
        rest.push(arg);
    }
    (rest, overrides)
}
