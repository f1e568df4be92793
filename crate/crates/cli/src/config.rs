//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use minmin_core::data::{
    concat, parse_label_ranking_csv, parse_libsvm_multilabel, split, synth_label_ranking, synth_multilabel, Dataset,
    LabelRankingOptions, LibsvmOptions, Standardizer,
};
use minmin_core::losses::PriorSampling;
use minmin_core::spaces::SpaceKind;
use minmin_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Overrides `output_dir` when set.
pub const OUT_DIR_ENV: &str = "MINMIN_OUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Multilabel,
    LabelRanking,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Rank vectors (permutahedron).
    #[default]
    Vectors,
    /// Permutation matrices (Birkhoff polytope).
    Matrices,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Libsvm {
        path: PathBuf,
        /// Held-out file; when given, `path` is only split into train and validation.
        #[serde(default)]
        test_path: Option<PathBuf>,
        #[serde(default)]
        num_labels: Option<usize>,
        #[serde(default)]
        num_features: Option<usize>,
        #[serde(default)]
        zero_based_labels: bool,
    },
    LabelRankingCsv {
        path: PathBuf,
        #[serde(default)]
        test_path: Option<PathBuf>,
        #[serde(default)]
        num_labels: Option<usize>,
    },
    SyntheticMultilabel {
        n: usize,
        d: usize,
        k: usize,
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    SyntheticLabelRanking {
        n: usize,
        d: usize,
        k: usize,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed: 0,
        }
    }
}

/// Learning rates and weight decays searched on the validation split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_lrs")]
    pub lr: Vec<f64>,
    #[serde(default = "default_l2s")]
    pub l2: Vec<f64>,
}

fn default_lrs() -> Vec<f64> {
    minmin_core::training::DEFAULT_LR_GRID.to_vec()
}

fn default_l2s() -> Vec<f64> {
    minmin_core::training::DEFAULT_L2_GRID.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub bprime: Vec<PriorSampling>,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub representation: Representation,
    /// Z-score features with training-split statistics.
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub convergence: Option<ConvergenceConfig>,
    pub output_dir: PathBuf,
}

/// A parsed configuration together with where it came from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    pub hash: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, base_dir)
    }

    pub fn from_str(text: &str, base_dir: PathBuf) -> Result<Self, CliError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let hash = config_hash(&config)?;
        let loaded = LoadedConfig { config, base_dir, hash };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.resolve(&self.config.output_dir),
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let c = &self.config;
        let ranking_source = matches!(
            c.dataset,
            DatasetSource::LabelRankingCsv { .. } | DatasetSource::SyntheticLabelRanking { .. }
        );
        match (c.task, ranking_source) {
            (Task::Multilabel, true) => return Err(CliError::Config("dataset: multilabel task needs a label-set dataset".into())),
            (Task::LabelRanking, false) => return Err(CliError::Config("dataset: label_ranking task needs a ranking dataset".into())),
            _ => {}
        }
        if c.task == Task::Multilabel && c.representation == Representation::Matrices {
            return Err(CliError::Config("representation: matrices only apply to label_ranking".into()));
        }
        let paths: Vec<(&str, &PathBuf)> = match &c.dataset {
            DatasetSource::Libsvm { path, test_path, .. } | DatasetSource::LabelRankingCsv { path, test_path, .. } => {
                let mut v = vec![("dataset.path", path)];
                if let Some(t) = test_path {
                    v.push(("dataset.test_path", t));
                }
                v
            }
            _ => vec![],
        };
        for (field, p) in paths {
            let full = self.resolve(p);
            if !full.is_file() {
                return Err(CliError::Config(format!("{field}: {} does not exist", full.display())));
            }
        }
        let s = &c.split;
        let fr = [s.train, s.val, s.test];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || fr.iter().sum::<f64>() > 1.0 + 1e-12 || s.train <= 0.0 {
            return Err(CliError::Config("split: fractions must lie in [0, 1], sum to at most 1, train > 0".into()));
        }
        if let Some(g) = &c.grid {
            if g.lr.is_empty() || g.l2.is_empty() {
                return Err(CliError::Config("grid: lr and l2 lists must be nonempty".into()));
            }
        }
        c.train.validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
        Ok(())
    }
}

/// SHA-256 of the configuration's canonical JSON (keys sorted).
pub fn config_hash(config: &ExperimentConfig) -> Result<String, CliError> {
    let value = serde_json::to_value(config).map_err(|e| CliError::Config(e.to_string()))?;
    let canonical = serde_json::to_string(&value).map_err(|e| CliError::Config(e.to_string()))?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Train/validation/test datasets after splitting and standardization.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub standardizer: Option<Standardizer>,
}

impl Prepared {
    pub fn train_and_val(&self) -> Result<Dataset, CliError> {
        Ok(concat(&[&self.train, &self.val])?)
    }
}

fn load_source(cfg: &LoadedConfig, path: &Path) -> Result<Dataset, CliError> {
    let full = cfg.resolve(path);
    let data = match &cfg.config.dataset {
        DatasetSource::Libsvm {
            num_labels,
            num_features,
            zero_based_labels,
            ..
        } => parse_libsvm_multilabel(
            &full,
            &LibsvmOptions {
                num_labels: *num_labels,
                num_features: *num_features,
                zero_based_labels: *zero_based_labels,
            },
        )?,
        DatasetSource::LabelRankingCsv { num_labels, .. } => parse_label_ranking_csv(
            &full,
            &LabelRankingOptions {
                num_labels: *num_labels,
                as_matrices: false,
            },
        )?,
        _ => unreachable!("file source"),
    };
    Ok(data)
}

/// Load the configured dataset, split it and standardize it.
pub fn prepare(cfg: &LoadedConfig) -> Result<Prepared, CliError> {
    let c = &cfg.config;
    let (main, held_out) = match &c.dataset {
        DatasetSource::SyntheticMultilabel { n, d, k, noise, seed } => (synth_multilabel(*n, *d, *k, *noise, *seed)?, None),
        DatasetSource::SyntheticLabelRanking { n, d, k, seed } => (synth_label_ranking(*n, *d, *k, *seed)?, None),
        DatasetSource::Libsvm { path, test_path, .. } | DatasetSource::LabelRankingCsv { path, test_path, .. } => {
            let main = load_source(cfg, path)?;
            let test = test_path.as_ref().map(|t| load_source(cfg, t)).transpose()?;
            (main, test)
        }
    };
    let s = &c.split;
    let (train, val, test) = match held_out {
        None => {
            let sp = split(main.len(), (s.train, s.val, s.test), s.seed)?;
            (main.subset(&sp.train_idx), main.subset(&sp.val_idx), main.subset(&sp.test_idx))
        }
        Some(test) => {
            if test.dim() != main.dim() || test.space != main.space {
                return Err(CliError::Config(format!(
                    "dataset.test_path: {} features / {:?} do not match the training file ({} / {:?})",
                    test.dim(),
                    test.space,
                    main.dim(),
                    main.space
                )));
            }
            let total = s.train + s.val;
            let sp = split(main.len(), (s.train / total, s.val / total, 0.0), s.seed)?;
            (main.subset(&sp.train_idx), main.subset(&sp.val_idx), test)
        }
    };
    let (train, val, test) = if c.representation == Representation::Matrices {
        (train.to_permutation_matrices()?, val.to_permutation_matrices()?, test.to_permutation_matrices()?)
    } else {
        (train, val, test)
    };
    debug_assert!(c.task == Task::Multilabel || train.space.kind != SpaceKind::BinaryVectors);
    if c.standardize && !train.is_empty() {
        let st = Standardizer::fit(&train.xs);
        Ok(Prepared {
            train: st.apply_dataset(&train),
            val: st.apply_dataset(&val),
            test: st.apply_dataset(&test),
            standardizer: Some(st),
        })
    } else {
        Ok(Prepared {
            train,
            val,
            test,
            standardizer: None,
        })
    }
}
