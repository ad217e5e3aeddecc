//! Experiment configuration, read from TOML or JSON.

use std::path::{Path, PathBuf};

use equidiag::group::{FiniteGroup, GroupSpec};
use equidiag::losses::{LossKind, LossModel};
use equidiag::models::{ModelKind, ModelSpec};
use equidiag::training::{SyntheticTask, TrainConfig};
use equidiag::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Hidden widths; the kind's defaults when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { kind: ModelKind::CoordMlp, hidden: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Parameter segments for Hessians and landscapes; a per-kind default when empty.
    pub subset: Vec<String>,
    pub batch_size: usize,
    pub batches: usize,
    pub landscape_radius: usize,
    pub step_scale: f64,
    pub sensitivity_max_rotations: usize,
    pub sensitivity_repeats: usize,
    /// Samples used by the theorem checks.
    pub theorem_samples: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            subset: Vec::new(),
            batch_size: 32,
            batches: 1,
            landscape_radius: 10,
            step_scale: equidiag::analysis::DEFAULT_STEP_SCALE,
            sensitivity_max_rotations: 40,
            sensitivity_repeats: 100,
            theorem_samples: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Seeds the task, the initialisation and every random stream. Overrides
    /// `task.seed` and `train.seed`.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// `so3`, a builder name (`c2x`, `c4z`, `octahedral`, ...) or a path to a
    /// JSON list of rotation matrices.
    pub group: String,
    pub loss: LossKind,
    pub task: SyntheticTask,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub analysis: AnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            group: "so3".into(),
            loss: LossKind::Mse,
            task: SyntheticTask::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = if is_json(path) { Self::from_json(&text)? } else { Self::from_toml(&text)? };
        // Group files are resolved relative to the config file.
        if !config.group_is_builtin() && Path::new(&config.group).is_relative() {
            if let Some(dir) = path.parent() {
                config.group = dir.join(&config.group).to_string_lossy().into_owned();
            }
        }
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = if is_json(path) { self.to_json()? } else { self.to_toml()? };
        std::fs::write(path, text)?;
        Ok(())
    }

    fn group_is_builtin(&self) -> bool {
        self.group.eq_ignore_ascii_case("so3") || FiniteGroup::builder(&self.group).is_ok()
    }

    /// Copies the top-level seed into the task and training sections.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.task.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.group_spec()?;
        if self.analysis.batch_size == 0 || self.analysis.batches == 0 || self.analysis.theorem_samples == 0 {
            return Err(Error::Config("analysis batch_size, batches and theorem_samples must be >= 1".into()));
        }
        if !(self.analysis.step_scale > 0.0) {
            return Err(Error::Config("analysis.step_scale must be positive".into()));
        }
        if self.task.heldout_samples == 0 {
            return Err(Error::Config("task.heldout_samples must be >= 1".into()));
        }
        Ok(())
    }

    pub fn group_spec(&self) -> Result<GroupSpec> {
        if self.group.eq_ignore_ascii_case("so3") {
            return Ok(GroupSpec::So3);
        }
        if let Ok(g) = FiniteGroup::builder(&self.group) {
            return Ok(GroupSpec::Finite(g));
        }
        FiniteGroup::load(Path::new(&self.group))
            .map(GroupSpec::Finite)
            .map_err(|e| Error::Config(format!("group '{}': {e}", self.group)))
    }

    /// The enumerable group used where exact expectations are needed: the
    /// configured group if finite, the octahedral group standing in for SO(3).
    pub fn exact_group(&self) -> Result<(FiniteGroup, bool)> {
        Ok(match self.group_spec()? {
            GroupSpec::Finite(g) => (g, false),
            GroupSpec::So3 => (FiniteGroup::octahedral(), true),
        })
    }

    pub fn model_spec(&self) -> ModelSpec {
        let hidden = self.model.hidden.clone().unwrap_or_else(|| ModelSpec::default_hidden(self.model.kind));
        ModelSpec::new(self.model.kind, self.task.atoms, hidden)
    }

    pub fn loss_model(&self) -> LossModel {
        LossModel::new(self.loss, 3 * self.task.atoms)
    }

    pub fn subset(&self) -> Vec<String> {
        if !self.analysis.subset.is_empty() {
            return self.analysis.subset.clone();
        }
        let names: &[&str] = match self.model.kind {
            ModelKind::CoordMlp => &["out.weight", "out.bias"],
            ModelKind::InvariantGraphHead => &["edge.out.weight", "edge.out.bias", "head.w"],
            ModelKind::EquivariantBaseline => &["radial.out.weight", "radial.out.bias"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}
