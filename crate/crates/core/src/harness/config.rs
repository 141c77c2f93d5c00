//! Experiment configuration file with `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::batch::{BatchOptions, MethodSpec};
use super::metrics::{TradeoffNormalization, DEFAULT_DELTA_REF, DEFAULT_PHI_REF_DEG};
use super::suite::{benchmark_suite, ScenarioClass, Suite};
use crate::baselines::MppiConfig;
use crate::context::TerrainContext;
use crate::descriptor::DEFAULT_RADIUS;
use crate::fmm::VertexCostParams;
use crate::mesh::{generate_terrain, TerrainSpec};
use crate::objectives::ObjectiveParams;
use crate::planner::{PlannerConfig, Plant};
use crate::residual::TrainOptions;
use crate::world::SlipParams;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "MESHNAV_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected section.key=value")]
    Override(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    /// Mesh file; takes precedence over `terrain` and `suite`.
    pub path: Option<PathBuf>,
    pub terrain: Option<TerrainSpec>,
    /// Built-in benchmark suite, used when neither of the above is set.
    pub suite: ScenarioClass,
    /// Descriptor neighborhood radius.
    pub radius: f64,
    pub calibration_seed: u64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            path: None,
            terrain: None,
            suite: ScenarioClass::Rough,
            radius: DEFAULT_RADIUS,
            calibration_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualConfig {
    /// Trained model applied inside rollouts.
    pub model: Option<PathBuf>,
    pub samples: usize,
    pub slip: SlipParams,
    pub train: TrainOptions,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        Self {
            model: None,
            samples: 2000,
            slip: SlipParams::default(),
            train: TrainOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    #[default]
    BatchMinMax,
    FixedReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchConfig {
    /// Scenario file; the built-in suite of `[mesh].suite` otherwise.
    pub scenarios: Option<PathBuf>,
    /// Any of `eps-adaptive`, `eps-fixed`, `mppi`.
    pub methods: Vec<String>,
    pub repeats: Option<usize>,
    /// Use only the first `limit` scenarios.
    pub limit: Option<usize>,
    pub seed: u64,
    pub plant: Plant,
    pub out_dir: PathBuf,
    pub keep_log: bool,
    pub normalization: NormalizationMode,
    pub phi_ref_deg: f64,
    pub delta_ref: f64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            scenarios: None,
            methods: vec!["eps-adaptive".into(), "eps-fixed".into(), "mppi".into()],
            repeats: None,
            limit: None,
            seed: 0,
            plant: Plant::Model,
            out_dir: PathBuf::from("results"),
            keep_log: false,
            normalization: NormalizationMode::BatchMinMax,
            phi_ref_deg: DEFAULT_PHI_REF_DEG,
            delta_ref: DEFAULT_DELTA_REF,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mesh: MeshConfig,
    pub planner: PlannerConfig,
    pub objectives: ObjectiveParams,
    pub fmm: VertexCostParams,
    pub residual: ResidualConfig,
    pub batch: BatchConfig,
    pub mppi: MppiConfig,
}

/// Parses the right-hand side of an override as a TOML value, falling
/// back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&probe) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Sets `path.to.key = value` in `table`, creating tables on the way.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.into()))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::Override(spec.into()));
    }
    let mut t = table;
    for k in &keys[..keys.len() - 1] {
        let entry = t
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry.as_table_mut().ok_or_else(|| ConfigError::Override(spec.into()))?;
    }
    t.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path`, else the file named by the environment variable, else
    /// defaults; then applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let env_path = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        let text = match path.map(Path::to_path_buf).or(env_path) {
            Some(p) => std::fs::read_to_string(&p).map_err(|source| ConfigError::Read { path: p, source })?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = |m: String| Err(ConfigError::Parse(m));
        if let Err(err) = self.planner.validate() {
            return e(err.to_string());
        }
        if let Err(err) = self.objectives.validate() {
            return e(err.to_string());
        }
        if let Err(err) = self.mppi.validate() {
            return e(err.to_string());
        }
        if !(self.mesh.radius > 0.0) {
            return e("mesh.radius must be positive".into());
        }
        for m in &self.batch.methods {
            if !matches!(m.as_str(), "eps-adaptive" | "eps-fixed" | "mppi") {
                return e(format!("unknown method {m}"));
            }
        }
        Ok(())
    }

    pub fn normalization(&self) -> TradeoffNormalization {
        match self.batch.normalization {
            NormalizationMode::BatchMinMax => TradeoffNormalization::BatchMinMax,
            NormalizationMode::FixedReference => TradeoffNormalization::FixedReference {
                phi_ref_deg: self.batch.phi_ref_deg,
                delta_ref: self.batch.delta_ref,
            },
        }
    }

    pub fn methods(&self) -> Vec<MethodSpec> {
        self.batch
            .methods
            .iter()
            .map(|m| match m.as_str() {
                "eps-fixed" => MethodSpec::eps_fixed(m, self.planner.clone(), self.planner.eps_fixed),
                "mppi" => MethodSpec::mppi(m, self.planner.clone(), self.mppi.clone()),
                _ => MethodSpec::eps_adaptive(m, self.planner.clone()),
            })
            .collect()
    }

    pub fn batch_options(&self) -> BatchOptions {
        BatchOptions {
            base_seed: self.batch.seed,
            plant: self.batch.plant,
            objectives: self.objectives,
            costs: self.fmm,
            repeats: self.batch.repeats,
            keep_log: self.batch.keep_log,
        }
    }

    /// Terrain context for the configured mesh.
    pub fn terrain(&self) -> Result<TerrainContext, String> {
        let mesh = if let Some(p) = &self.mesh.path {
            let fmt = crate::mesh::MeshFormat::from_path(p).unwrap_or(crate::mesh::MeshFormat::Obj);
            crate::mesh::load_mesh(p, fmt).map_err(|e| e.to_string())?
        } else if let Some(spec) = &self.mesh.terrain {
            generate_terrain(spec).map_err(|e| e.to_string())?
        } else {
            generate_terrain(&super::suite::suite_terrain(self.mesh.suite)).map_err(|e| e.to_string())?
        };
        Ok(TerrainContext::with_radius(
            mesh,
            self.mesh.radius,
            self.mesh.calibration_seed,
        ))
    }

    /// Terrain and scenarios for a batch: a scenario file, or the built-in
    /// suite.
    pub fn suite(&self) -> Result<(Suite, TerrainContext), String> {
        let (suite, ctx) = match &self.batch.scenarios {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                let suite = Suite::from_toml(&text)?;
                let mesh = suite.mesh.load().map_err(|e| e.to_string())?;
                let ctx = TerrainContext::with_radius(mesh, self.mesh.radius, self.mesh.calibration_seed);
                (suite, ctx)
            }
            None => benchmark_suite(self.mesh.suite).map_err(|e| e.to_string())?,
        };
        let mut suite = suite;
        if let Some(n) = self.batch.limit {
            suite.scenarios.truncate(n);
        }
        Ok((suite, ctx))
    }
}
