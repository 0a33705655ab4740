//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nesi_core::data::LabelsPerClass;
use nesi_core::train::{RInit, TrainConfig, Variant, WInit};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
        width: usize,
        height: usize,
    },
    Bow {
        train: PathBuf,
        test: Option<PathBuf>,
        tfidf: bool,
    },
    Synthetic {
        dim: usize,
        units: usize,
        classes: usize,
        train_size: usize,
        test_size: usize,
        spread: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Use only the first `n` training items.
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    pub units: usize,
    pub total: f64,
    pub train: TrainConfig,
    pub labels_per_class: LabelsPerClass,
    pub split_seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    /// The configuration file as read, echoed into reports.
    pub source: String,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

struct Pairs {
    map: BTreeMap<String, String>,
}

impl Pairs {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T, CliError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("invalid value {v:?} for {key}"))),
        }
    }

    fn required<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, CliError> {
        let v = self
            .take(key)
            .ok_or_else(|| CliError::Config(format!("missing key {key}")))?;
        v.parse()
            .map_err(|_| CliError::Config(format!("invalid value {v:?} for {key}")))
    }

    fn path(&mut self, key: &str, base: &Path) -> Option<PathBuf> {
        self.take(key).map(|v| base.join(v))
    }
}

fn parse_variant(v: &str) -> Result<Variant, CliError> {
    v.parse()
        .map_err(|e: nesi_core::Error| CliError::Config(e.to_string()))
}

impl ExperimentConfig {
    /// Builds a configuration from file text plus overrides. Relative paths
    /// in the file resolve against `base`.
    pub fn from_text(
        source: &str,
        overrides: &BTreeMap<String, String>,
        base: &Path,
    ) -> Result<Self, CliError> {
        let mut map = parse_pairs(source)?;
        map.extend(overrides.iter().map(|(k, v)| (k.clone(), v.clone())));
        let mut p = Pairs { map };

        let kind = p.take("dataset").unwrap_or_else(|| "mnist".into());
        let dataset = match kind.as_str() {
            "mnist" | "idx" => {
                let dir = base.join(p.take("data_dir").unwrap_or_else(|| "data/mnist".into()));
                let default = |name: &str| dir.join(name);
                DatasetSpec::Idx {
                    train_images: p
                        .path("train_images", base)
                        .unwrap_or_else(|| default("train-images-idx3-ubyte")),
                    train_labels: p
                        .path("train_labels", base)
                        .unwrap_or_else(|| default("train-labels-idx1-ubyte")),
                    test_images: Some(
                        p.path("test_images", base)
                            .unwrap_or_else(|| default("t10k-images-idx3-ubyte")),
                    ),
                    test_labels: Some(
                        p.path("test_labels", base)
                            .unwrap_or_else(|| default("t10k-labels-idx1-ubyte")),
                    ),
                    width: p.parse("image_width", 28)?,
                    height: p.parse("image_height", 28)?,
                }
            }
            "bow" => DatasetSpec::Bow {
                train: p
                    .path("train_bow", base)
                    .ok_or_else(|| CliError::Config("missing key train_bow".into()))?,
                test: p.path("test_bow", base),
                tfidf: p.parse("tfidf", true)?,
            },
            "synthetic" => DatasetSpec::Synthetic {
                dim: p.parse("synthetic_dim", 16)?,
                units: p.parse("synthetic_units", 4)?,
                classes: p.parse("synthetic_classes", 2)?,
                train_size: p.parse("synthetic_train_size", 2000)?,
                test_size: p.parse("synthetic_test_size", 1000)?,
                spread: p.parse("synthetic_spread", 1.0)?,
                seed: p.parse("synthetic_seed", 0)?,
            },
            other => return Err(CliError::Config(format!("unknown dataset {other:?}"))),
        };

        let defaults = TrainConfig::default();
        let train = TrainConfig {
            variant: parse_variant(&p.take("variant").unwrap_or_else(|| "ff".into()))?,
            eps_w_mult: p.parse("eps_w_mult", defaults.eps_w_mult)?,
            eps_r_mult: p.parse("eps_r_mult", defaults.eps_r_mult)?,
            batch_size: p.parse("batch_size", defaults.batch_size)?,
            theta: p.parse("theta", defaults.theta)?,
            epochs: p.parse("epochs", defaults.epochs)?,
            seed: p.parse("seed", defaults.seed)?,
            early_stop: p.parse("early_stop", defaults.early_stop)?,
            window: p.parse("window", defaults.window)?,
            w_init: p
                .parse::<String>("w_init", defaults.w_init.as_str().into())?
                .parse::<WInit>()
                .map_err(|e| CliError::Config(e.to_string()))?,
            r_init: p
                .parse::<String>("r_init", defaults.r_init.as_str().into())?
                .parse::<RInit>()
                .map_err(|e| CliError::Config(e.to_string()))?,
            track_likelihood: p.parse("track_likelihood", defaults.track_likelihood)?,
            uniform_top: p.parse("uniform_top", defaults.uniform_top)?,
        };
        train
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;

        let labels_per_class = match p.take("labels_per_class").as_deref() {
            None | Some("all") | Some("ALL") => LabelsPerClass::All,
            Some(v) => LabelsPerClass::Count(
                v.parse()
                    .map_err(|_| CliError::Config(format!("invalid labels_per_class {v:?}")))?,
            ),
        };
        let split_seed = p.parse("split_seed", train.seed)?;
        let cfg = Self {
            dataset,
            train_subset: p
                .take("train_subset")
                .map(|v| v.parse())
                .transpose()
                .map_err(|_| CliError::Config("invalid train_subset".into()))?,
            test_subset: p
                .take("test_subset")
                .map(|v| v.parse())
                .transpose()
                .map_err(|_| CliError::Config("invalid test_subset".into()))?,
            units: p.required("units")?,
            total: p.required("total")?,
            train,
            labels_per_class,
            split_seed,
            checkpoint: p.path("checkpoint", base),
            report: p.path("report", base),
            source: source.to_string(),
        };
        if let Some(key) = p.map.keys().next() {
            return Err(CliError::Config(format!("unknown key {key}")));
        }
        if cfg.units == 0 {
            return Err(CliError::Config("units must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &BTreeMap<String, String>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, overrides, base)
    }

    /// Thumbnail geometry of one field.
    pub fn field_shape(&self, dim: usize) -> (usize, usize) {
        match self.dataset {
            DatasetSpec::Idx { width, height, .. } if width * height == dim => (width, height),
            _ => (dim, 1),
        }
    }
}
