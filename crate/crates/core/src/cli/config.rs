//! The run configuration document (TOML).
//!
//! Relative paths resolve against the directory holding the config file.
//! Environment variables are never consulted.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::CliError;
use crate::evaluation::{EvaluationSpec, Roster};
use crate::labeler::MatchMode;
use crate::math::{Clamp, LinearModel, TauVariant, DEFAULT_CLAMP_EPS};
use crate::synthetic::{self, GroupSpec, PopulationSpec};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_eps")]
    pub clamp_eps: f64,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub plot: PlotConfig,
    pub simulate: Option<SimulateConfig>,
    pub label: Option<LabelConfig>,
    /// Directory the config was loaded from.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_eps() -> f64 {
    DEFAULT_CLAMP_EPS
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub accuracy_tables: Vec<PathBuf>,
    pub prediction_manifest: Option<PathBuf>,
    #[serde(default)]
    pub testsets: Vec<PathBuf>,
    #[serde(default)]
    pub class_maps: Vec<ClassMapBinding>,
    pub min_accuracy: Option<AccuracyFilter>,
}

/// Applies a class map to the labels of, and predictions on, one test set.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMapBinding {
    pub testset: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccuracyFilter {
    pub testset: String,
    pub threshold: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Defaults to the `id:` columns of the accuracy tables.
    #[serde(default)]
    pub id_testsets: Vec<String>,
    /// Defaults to the `ood:` columns of the accuracy tables.
    #[serde(default)]
    pub ood_testsets: Vec<String>,
    #[serde(default)]
    pub groups: Vec<String>,
    #[serde(default)]
    pub include_held_out: bool,
    #[serde(default)]
    pub exclude_groups: Vec<String>,
    #[serde(default)]
    pub tau_variant: TauVariant,
    /// Groups to run the with/without fitting ablation for.
    #[serde(default)]
    pub ablate_groups: Vec<String>,
    #[serde(default)]
    pub ranking: Vec<RankingConfig>,
}

/// Kendall agreement between single-ID (on `single_id`) and multi-ID
/// effective robustness within one group.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingConfig {
    pub group: String,
    pub single_id: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotConfig {
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    #[serde(default = "default_line")]
    pub line_points: usize,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self {
            grid_points: default_grid(),
            line_points: default_line(),
        }
    }
}

fn default_grid() -> usize {
    21
}

fn default_line() -> usize {
    101
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Accuracy table to write.
    pub output: PathBuf,
    /// `contradiction` selects the built-in two-family scenario.
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub truth: Option<TruthConfig>,
    pub noise_sigma: Option<f64>,
    pub n_models: Option<usize>,
    #[serde(default)]
    pub groups: Vec<GroupSpec>,
    #[serde(default)]
    pub id_testsets: Vec<String>,
    pub ood_testset: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelConfig {
    pub corpus: PathBuf,
    pub synonyms: PathBuf,
    #[serde(default)]
    pub mode: MatchMode,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default = "default_min_class")]
    pub min_class_count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_label_testset")]
    pub testset_id: String,
    /// Subdirectory of `output_dir` for the generated files.
    #[serde(default = "default_label_dir")]
    pub output_subdir: PathBuf,
}

fn default_per_class() -> usize {
    50
}

fn default_min_class() -> usize {
    100
}

fn default_label_testset() -> String {
    "captions".into()
}

fn default_label_dir() -> PathBuf {
    PathBuf::from("label")
}

/// Command-line values that take precedence over the document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub clamp_eps: Option<f64>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, path.parent().unwrap_or(Path::new("")))
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        if let Some(e) = o.clamp_eps {
            self.clamp_eps = e;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(s) = o.seed {
            if let Some(sim) = &mut self.simulate {
                sim.seed = Some(s);
            }
            if let Some(label) = &mut self.label {
                label.seed = s;
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.1) {
            return Err(CliError::Config(format!("clamp_eps = {} is outside (0, 0.1)", self.clamp_eps)));
        }
        if self.workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        if self.plot.grid_points < 2 || self.plot.line_points < 2 {
            return Err(CliError::Config("plot grid and line need at least 2 points".into()));
        }
        if let Some(f) = &self.data.min_accuracy {
            if !(0.0..=1.0).contains(&f.threshold) {
                return Err(CliError::Config("min_accuracy threshold must be a fraction in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn clamp(&self) -> Clamp {
        Clamp::new(self.clamp_eps)
    }

    /// Resolves and checks that an input path exists.
    pub fn input(&self, p: &Path) -> Result<PathBuf, CliError> {
        let full = self.resolve(p);
        if !full.exists() {
            return Err(CliError::Config(format!("input `{}` does not exist", full.display())));
        }
        Ok(full)
    }

    /// Evaluation spec for the configured (or defaulted) test sets.
    pub fn evaluation_spec(&self, id_testsets: Vec<String>, ood_testsets: Vec<String>) -> Result<EvaluationSpec, CliError> {
        let mut spec = EvaluationSpec::new(id_testsets, ood_testsets).map_err(|e| CliError::Config(e.to_string()))?;
        spec.roster = Roster {
            include_held_out: self.evaluation.include_held_out,
            exclude_groups: self.evaluation.exclude_groups.iter().cloned().collect(),
        };
        spec.groups = self.evaluation.groups.clone();
        spec.clamp = self.clamp();
        Ok(spec)
    }

    pub fn population_spec(&self) -> Result<(PopulationSpec, PathBuf), CliError> {
        let sim = self
            .simulate
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [simulate] section".into()))?;
        let seed = sim.seed.unwrap_or(0);
        let spec = match sim.scenario.as_deref() {
            Some("contradiction") => synthetic::contradiction_spec(seed),
            Some(other) => return Err(CliError::Config(format!("unknown scenario `{other}`"))),
            None => {
                let missing = |what: &str| CliError::Config(format!("[simulate] needs `{what}`"));
                let truth = sim.truth.as_ref().ok_or_else(|| missing("truth"))?;
                PopulationSpec {
                    truth: LinearModel::new(truth.weights.clone(), truth.intercept)
                        .map_err(|e| CliError::Config(format!("truth: {e}")))?,
                    noise_sigma: sim.noise_sigma.unwrap_or(0.0),
                    n_models: sim.n_models.ok_or_else(|| missing("n_models"))?,
                    groups: sim.groups.clone(),
                    id_testsets: sim.id_testsets.clone(),
                    ood_testset: sim.ood_testset.clone().ok_or_else(|| missing("ood_testset"))?,
                    seed,
                    clamp_eps: self.clamp_eps,
                }
            }
        };
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok((spec, self.resolve(&sim.output)))
    }
}
