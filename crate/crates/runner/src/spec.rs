//! Experiment documents: one TOML or JSON file per experiment.

use std::path::{Path, PathBuf};

use ntd_core::algorithms::Algorithm;
use ntd_core::network::{Activation, OutputScale};
use ntd_core::oracles::MinimaxOrder;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RunnerError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// Relative paths resolve against the spec file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub env: EnvSpec,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default)]
    pub features: FeatureSpec,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSpec>,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    RandomMdp {
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        #[serde(default = "one")]
        r_max: f64,
        seed: u64,
    },
    /// Two states, one action, staying put with probability `stay`.
    Chain { stay: f64, reward: [f64; 2], gamma: f64 },
    /// Four-action gridworld; see [`crate::setup::gridworld`].
    Gridworld {
        rows: usize,
        cols: usize,
        #[serde(default)]
        slip: f64,
        gamma: f64,
    },
    RandomGame {
        n_states: usize,
        n_actions_p1: usize,
        n_actions_p2: usize,
        gamma: f64,
        #[serde(default = "one")]
        r_max: f64,
        seed: u64,
    },
    MdpFile { path: PathBuf },
    GameFile { path: PathBuf },
}

impl EnvSpec {
    pub fn is_game(&self) -> bool {
        matches!(self, EnvSpec::RandomGame { .. } | EnvSpec::GameFile { .. })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    #[default]
    Uniform,
    /// Epsilon-greedy with respect to the optimal action values.
    EpsilonGreedy { epsilon: f64 },
    File { path: PathBuf },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSpec {
    #[default]
    OneHot,
    RandomUnit {
        dim: usize,
        seed: u64,
        #[serde(default = "one")]
        min_angle_deg: f64,
    },
    /// Row `i` is random unit vector `i % distinct`, giving a rank-deficient table.
    Shared { distinct: usize, dim: usize, seed: u64 },
    /// Grid over per-row raw coordinates (gridworld: row, column, action;
    /// otherwise: state, action).
    Grid { bins: Vec<usize> },
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default = "two")]
    pub depth: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub output_scale: OutputScale,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            depth: 2,
            activation: Activation::default(),
            output_scale: OutputScale::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// `lambda0` defaults to the estimated minimum non-zero eigenvalue of
    /// Sigma at initialization, times `lambda0_scale`.
    Theorem {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda0: Option<f64>,
        #[serde(default = "one")]
        lambda0_scale: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nu: Option<f64>,
    },
    Constant { eta0: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalKind {
    FixedPoint,
    QPi,
    QStar,
    Minimax,
    None,
}

/// Cycle one stored trajectory of `samples` transitions `epochs` times.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplaySpec {
    pub samples: usize,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    pub omega: f64,
    /// Required unless `replay` is set, which fixes it to `samples * epochs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    pub eval_every: usize,
    pub schedule: ScheduleSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub minimax_order: MinimaxOrder,
    /// Defaults per algorithm: fixed point for TD, Q* for Q-learning, the
    /// game value for minimax Q-learning.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay: Option<ReplaySpec>,
}

impl TrainSpec {
    pub fn iterations(&self) -> Result<usize> {
        match (self.replay, self.iterations) {
            (Some(r), None) => Ok(r.samples * r.epochs),
            (Some(r), Some(t)) if t == r.samples * r.epochs => Ok(t),
            (Some(_), Some(_)) => Err(RunnerError::Invalid("iterations conflicts with replay samples * epochs".into())),
            (None, Some(t)) => Ok(t),
            (None, None) => Err(RunnerError::Invalid("train.iterations is required".into())),
        }
    }

    pub fn eval_kind(&self) -> EvalKind {
        self.eval.unwrap_or(match self.algorithm {
            Algorithm::Td => EvalKind::FixedPoint,
            Algorithm::Q => EvalKind::QStar,
            Algorithm::MinimaxQ => EvalKind::Minimax,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Iteration counts at which evaluation errors are collected for the
    /// rate fit; each must be a logged step.
    #[serde(default)]
    pub t_values: Vec<usize>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            widths: default_widths(),
            seeds: default_seeds(),
            t_values: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSpec {
    #[serde(default)]
    pub spectrum: bool,
    #[serde(default)]
    pub kernel: bool,
    #[serde(default)]
    pub fixed_point: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularity: Option<RegularitySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contraction: Option<ContractionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixing: Option<MixingSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<GapSpec>,
}

/// Probe points are drawn uniformly from the ball of radius `radius`
/// around the initialization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularitySpec {
    pub n_points: usize,
    pub radius: f64,
    /// Defaults to `1 - gamma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionSpec {
    pub trials: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingSpec {
    pub horizon: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapSpec {
    pub input_dim: usize,
    pub omega: f64,
    pub n_theta: usize,
    pub n_x: usize,
    #[serde(default = "default_power_iters")]
    pub power_iters: usize,
}

fn one() -> f64 {
    1.0
}
fn two() -> usize {
    2
}
fn default_algorithm() -> Algorithm {
    Algorithm::Td
}
fn default_widths() -> Vec<usize> {
    vec![256]
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_power_iters() -> usize {
    20
}

impl ExperimentSpec {
    /// Reads a `.toml` or `.json` document and resolves relative paths
    /// against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RunnerError::io(path, e))?;
        let mut spec: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| RunnerError::parse(path, e))?,
            _ => toml::from_str(&text).map_err(|e| RunnerError::parse(path, e))?,
        };
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        spec.resolve_paths(base);
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| RunnerError::Invalid(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.env {
            EnvSpec::MdpFile { path } | EnvSpec::GameFile { path } => fix(path),
            _ => {}
        }
        if let PolicySpec::File { path } = &mut self.policy {
            fix(path);
        }
        if let FeatureSpec::File { path } = &mut self.features {
            fix(path);
        }
        if let Some(out) = &mut self.output_dir {
            fix(out);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(RunnerError::Invalid(format!("{}: {msg}", self.name)));
        if self.sweep.widths.is_empty() || self.sweep.seeds.is_empty() {
            return bad("sweep widths and seeds must be non-empty".into());
        }
        if self.sweep.widths.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sweep widths must be strictly ascending".into());
        }
        for path in self.referenced_files() {
            if !path.is_file() {
                return bad(format!("referenced file {} does not exist", path.display()));
            }
        }
        if let Some(train) = &self.train {
            let t = train.iterations()?;
            if train.eval_every == 0 {
                return bad("train.eval_every must be >= 1".into());
            }
            for &tv in &self.sweep.t_values {
                if tv > t || (tv % train.eval_every != 0 && tv != t) {
                    return bad(format!("t_value {tv} is not a logged step"));
                }
            }
            let game = self.env.is_game();
            if game != (train.algorithm == Algorithm::MinimaxQ) {
                return bad(format!("algorithm {:?} does not match the environment", train.algorithm));
            }
            let eval_ok = match train.eval_kind() {
                EvalKind::Minimax => game,
                EvalKind::None => true,
                _ => !game,
            };
            if !eval_ok {
                return bad(format!("evaluation target {:?} does not match the environment", train.eval_kind()));
            }
        }
        Ok(())
    }

    fn referenced_files(&self) -> Vec<&Path> {
        let mut out = Vec::new();
        if let EnvSpec::MdpFile { path } | EnvSpec::GameFile { path } = &self.env {
            out.push(path.as_path());
        }
        if let PolicySpec::File { path } = &self.policy {
            out.push(path.as_path());
        }
        if let FeatureSpec::File { path } = &self.features {
            out.push(path.as_path());
        }
        out
    }

    /// Canonical JSON snapshot written into every bundle.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Same experiment restricted to a single seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.sweep.seeds = vec![seed];
        s
    }
}
