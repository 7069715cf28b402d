//! Run configuration shared by the command-line subcommands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SchemaConfig;
use crate::error::{DrmlError, Result};
use crate::learners::LearnerSpec;
use crate::nuisance::{NuisanceSpecs, DEFAULT_EPSILON, DEFAULT_FOLDS};
use crate::simulation::{SimEstimator, DEFAULT_TRUTH_DRAWS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subcommand {
    Estimate,
    Clate,
    Profile,
    Sensitivity,
    Simulate,
}

impl Subcommand {
    pub fn as_str(&self) -> &'static str {
        match self {
            Subcommand::Estimate => "estimate",
            Subcommand::Clate => "clate",
            Subcommand::Profile => "profile",
            Subcommand::Sensitivity => "sensitivity",
            Subcommand::Simulate => "simulate",
        }
    }
}

fn default_folds() -> usize {
    DEFAULT_FOLDS
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_alpha() -> f64 {
    0.05
}
fn default_learner() -> String {
    "ensemble".into()
}
fn default_grid_points() -> usize {
    crate::clate::DEFAULT_GRID_POINTS
}
fn default_bootstrap() -> usize {
    crate::clate::DEFAULT_BOOTSTRAP
}
fn default_d1() -> usize {
    crate::sensitivity::DEFAULT_DELTA1_POINTS
}
fn default_d2() -> usize {
    crate::sensitivity::DEFAULT_DELTA2_POINTS
}
fn default_scenario() -> u8 {
    2
}
fn default_n_list() -> Vec<usize> {
    vec![1000, 2000, 5000]
}
fn default_reps() -> usize {
    500
}
fn default_estimators() -> Vec<String> {
    SimEstimator::ALL.iter().map(|e| e.as_str().to_string()).collect()
}
fn default_truth_draws() -> usize {
    DEFAULT_TRUTH_DRAWS
}
fn default_true() -> bool {
    true
}

/// Learner names for the three nuisance regressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerNames {
    #[serde(default = "default_learner")]
    pub pi: String,
    #[serde(default = "default_learner")]
    pub mu: String,
    #[serde(default = "default_learner")]
    pub lambda: String,
}

impl Default for LearnerNames {
    fn default() -> Self {
        Self { pi: default_learner(), mu: default_learner(), lambda: default_learner() }
    }
}

impl LearnerNames {
    pub fn specs(&self) -> Result<NuisanceSpecs> {
        Ok(NuisanceSpecs {
            pi: LearnerSpec::from_name(&self.pi)?,
            mu: LearnerSpec::from_name(&self.mu)?,
            lambda: LearnerSpec::from_name(&self.lambda)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClateBlock {
    #[serde(default)]
    pub v_columns: Vec<String>,
    /// `constant`, `cell_means`, or a learner name; chosen from `V` when absent.
    #[serde(default)]
    pub second_stage: Option<String>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    /// Also write per-row effect estimates over all covariates.
    #[serde(default = "default_true")]
    pub ite: bool,
}

impl Default for ClateBlock {
    fn default() -> Self {
        Self {
            v_columns: vec![],
            second_stage: None,
            grid_points: default_grid_points(),
            bootstrap: default_bootstrap(),
            ite: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileBlock {
    #[serde(default)]
    pub v_columns: Vec<String>,
    /// Strata to profile; all three when empty.
    #[serde(default)]
    pub strata: Vec<String>,
    /// Fixed kernel bandwidth; Silverman's rule when absent.
    #[serde(default)]
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityBlock {
    #[serde(default = "default_d1")]
    pub delta1_points: usize,
    #[serde(default = "default_d2")]
    pub delta2_points: usize,
}

impl Default for SensitivityBlock {
    fn default() -> Self {
        Self { delta1_points: default_d1(), delta2_points: default_d2() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    #[serde(default = "default_scenario")]
    pub scenario: u8,
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<String>,
    #[serde(default = "default_truth_draws")]
    pub truth_draws: usize,
}

impl Default for SimulateBlock {
    fn default() -> Self {
        Self {
            scenario: default_scenario(),
            n_list: default_n_list(),
            reps: default_reps(),
            estimators: default_estimators(),
            truth_draws: default_truth_draws(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Optional guard: when set, must match the invoked subcommand.
    #[serde(default)]
    pub subcommand: Option<Subcommand>,
    /// Inline dataset schema.
    #[serde(default)]
    pub dataset: Option<SchemaConfig>,
    /// Path to a separate schema file; ignored when `dataset` is present.
    #[serde(default)]
    pub dataset_config: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub learners: LearnerNames,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub clate: ClateBlock,
    #[serde(default)]
    pub profile: ProfileBlock,
    #[serde(default)]
    pub sensitivity: SensitivityBlock,
    #[serde(default)]
    pub simulate: SimulateBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

/// Values given on the command line; they win over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub alpha: Option<f64>,
}

impl RunConfig {
    /// Parses a TOML file; relative paths are resolved against its directory.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                DrmlError::FileNotFound(path.to_path_buf())
            } else {
                DrmlError::Io { path: path.to_path_buf(), source: e }
            }
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| DrmlError::Config(e.to_string()))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        if let Some(ds) = cfg.dataset.as_mut() {
            if ds.path.is_relative() {
                ds.path = dir.join(&ds.path);
            }
        }
        if let Some(p) = cfg.dataset_config.as_mut() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        if let Some(p) = cfg.out.as_mut() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if o.threads.is_some() {
            self.threads = o.threads;
        }
        if o.out.is_some() {
            self.out = o.out.clone();
        }
        if let Some(a) = o.alpha {
            self.alpha = a;
        }
    }

    pub fn validate(&self, cmd: Subcommand) -> Result<()> {
        if let Some(s) = self.subcommand {
            if s != cmd {
                return Err(DrmlError::Config(format!(
                    "config is for `{}` but `{}` was invoked",
                    s.as_str(),
                    cmd.as_str()
                )));
            }
        }
        if self.seed.is_none() {
            return Err(DrmlError::Config("a seed is required (config `seed` or --seed)".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(DrmlError::Config(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(DrmlError::Config(format!("epsilon {} must lie in (0, 0.5)", self.epsilon)));
        }
        if self.folds < 2 {
            return Err(DrmlError::Config("folds must be at least 2".into()));
        }
        if self.threads == Some(0) {
            return Err(DrmlError::Config("threads must be positive".into()));
        }
        if cmd != Subcommand::Simulate && self.dataset.is_none() && self.dataset_config.is_none() {
            return Err(DrmlError::Config("no dataset configured".into()));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or_default()
    }

    pub fn schema(&self) -> Result<SchemaConfig> {
        match (&self.dataset, &self.dataset_config) {
            (Some(ds), _) => Ok(ds.clone()),
            (None, Some(p)) => SchemaConfig::from_toml_file(p),
            (None, None) => Err(DrmlError::Config("no dataset configured".into())),
        }
    }

    /// SHA-256 of the configuration with `threads` and `out` removed, as hex.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.threads = None;
        c.out = None;
        let text = serde_json::to_string(&c).expect("config serialises");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
