use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abstraction::SpatialReduction;
use crate::attribution::DEFAULT_PIPELINE_STEPS;
use crate::discriminability::{C_GRID, CV_FOLDS, MAX_FEATURES};
use crate::error::{Error, Result};
use crate::nn::{Architecture, TrainConfig};
use crate::projection::TsneConfig;

/// Per-class instance counts of the four splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub source_train: usize,
    pub source_val: usize,
    pub target_train: usize,
    pub target_val: usize,
}

/// How the target domain is derived from the source data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetTransform {
    /// Rotate target images by 90 degrees counter-clockwise.
    #[default]
    Rotate90,
    /// Disjoint instances, unchanged.
    Identity,
    /// The target splits are the source splits (self-transfer).
    Same,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "lowercase")]
pub enum DataConfig {
    /// MNIST-style IDX files; per class, splits take consecutive occurrences in
    /// file order: source train, source val, target train, target val.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        classes: Vec<u8>,
        per_class: SplitCounts,
        #[serde(default)]
        transform: TargetTransform,
    },
    Synthetic {
        classes: usize,
        side: usize,
        noise: f32,
        prototype_seed: u64,
        per_class: SplitCounts,
        #[serde(default)]
        transform: TargetTransform,
    },
    /// Four TLNS dataset containers.
    Tlns {
        source_train: PathBuf,
        source_val: PathBuf,
        target_train: PathBuf,
        target_val: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub architecture: Architecture,
    pub source: TrainConfig,
    /// `epochs = 0` reuses the source model unchanged as the target model.
    pub target: TrainConfig,
    /// Also train a randomly initialized target model with the target budget.
    pub scratch_baseline: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::reference(),
            source: TrainConfig::default(),
            target: TrainConfig::default(),
            scratch_baseline: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminabilityConfig {
    pub max_features: usize,
    /// Source and target instances per class in the domain table.
    pub instances: usize,
    pub seed: u64,
    /// Echoed for the record; the grid is fixed.
    pub c_grid: Vec<f64>,
    pub folds: usize,
}

impl Default for DiscriminabilityConfig {
    fn default() -> Self {
        Self {
            max_features: MAX_FEATURES,
            instances: 50,
            seed: 0,
            c_grid: C_GRID.to_vec(),
            folds: CV_FOLDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Class indices to analyze; all classes when absent.
    pub classes: Option<Vec<usize>>,
    pub steps: usize,
    pub baseline: String,
    /// Target instances per class used for attributions.
    pub instances: usize,
    pub k_row: Option<usize>,
    pub k_w: Option<usize>,
    pub reduction: SpatialReduction,
    /// Instances per class and domain in the projections.
    pub projection_instances: usize,
    pub tsne: TsneConfig,
    pub discriminability: DiscriminabilityConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            classes: None,
            steps: DEFAULT_PIPELINE_STEPS,
            baseline: "zeros".into(),
            instances: 50,
            k_row: None,
            k_w: None,
            reduction: SpatialReduction::Max,
            projection_instances: 30,
            tsne: TsneConfig::default(),
            discriminability: DiscriminabilityConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub run_name: Option<String>,
    pub data: DataConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    /// Parse TOML or JSON (by extension, `.json` is JSON) and validate. Relative
    /// data paths resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        };
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.data {
            DataConfig::Idx { images, labels, .. } => {
                fix(images);
                fix(labels);
            }
            DataConfig::Tlns {
                source_train,
                source_val,
                target_train,
                target_val,
            } => {
                for p in [source_train, source_val, target_train, target_val] {
                    fix(p);
                }
            }
            DataConfig::Synthetic { .. } => {}
        }
    }

    /// Override every seed in the config with values derived from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.training.source.seed = seed;
        self.training.target.seed = seed.wrapping_add(1);
        self.analysis.tsne.seed = seed;
        self.analysis.discriminability.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if let Some(name) = &self.run_name {
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return bad(format!("run_name `{name}` must be non-empty [A-Za-z0-9_-]"));
            }
        }
        let counts = match &self.data {
            DataConfig::Idx { classes, per_class, .. } => {
                if classes.is_empty() {
                    return bad("idx data needs at least one class".into());
                }
                Some(per_class)
            }
            DataConfig::Synthetic { classes, side, per_class, .. } => {
                if *classes == 0 || *side < 4 {
                    return bad("synthetic data needs classes >= 1 and side >= 4".into());
                }
                Some(per_class)
            }
            DataConfig::Tlns { .. } => None,
        };
        if let Some(c) = counts {
            if c.source_train == 0 || c.source_val == 0 {
                return bad("source splits must be non-empty".into());
            }
            if self.data.transform() != TargetTransform::Same && (c.target_train == 0 || c.target_val == 0) {
                return bad("target splits must be non-empty".into());
            }
        }
        if self.training.source.epochs == 0 {
            return bad("training.source.epochs must be >= 1".into());
        }
        for t in [&self.training.source, &self.training.target] {
            if t.batch_size == 0 || !(t.lr.is_finite() && t.lr > 0.0) {
                return bad("batch_size must be >= 1 and lr positive".into());
            }
        }
        if self.training.target.epochs == 0 && self.training.scratch_baseline {
            return bad("scratch_baseline needs training.target.epochs >= 1".into());
        }
        let a = &self.analysis;
        if a.steps == 0 || a.instances == 0 || a.projection_instances == 0 {
            return bad("analysis steps and instance counts must be >= 1".into());
        }
        if a.baseline != "zeros" {
            return bad(format!("unsupported baseline `{}` (only `zeros`)", a.baseline));
        }
        if a.k_row == Some(0) || a.k_w == Some(0) {
            return bad("k_row and k_w must be >= 1".into());
        }
        if a.tsne.perplexity < 3.0 || a.tsne.iterations == 0 {
            return bad("tsne.perplexity must be >= 3 and iterations >= 1".into());
        }
        let d = &a.discriminability;
        if d.max_features == 0 || d.instances == 0 {
            return bad("discriminability limits must be >= 1".into());
        }
        if d.c_grid != C_GRID || d.folds != CV_FOLDS {
            return bad("the SVM grid and fold count are fixed".into());
        }
        if let Some(classes) = &a.classes {
            if classes.is_empty() {
                return bad("analysis.classes must not be empty".into());
            }
        }
        Ok(())
    }

    /// `run_name` if set, else a digest of the canonical config.
    pub fn run_id(&self) -> Result<String> {
        if let Some(name) = &self.run_name {
            return Ok(name.clone());
        }
        let digest = Sha256::digest(serde_json::to_vec(self)?);
        Ok(digest[..6].iter().map(|b| format!("{b:02x}")).collect())
    }
}

impl DataConfig {
    pub fn transform(&self) -> TargetTransform {
        match self {
            DataConfig::Idx { transform, .. } | DataConfig::Synthetic { transform, .. } => *transform,
            DataConfig::Tlns { .. } => TargetTransform::Identity,
        }
    }
}
