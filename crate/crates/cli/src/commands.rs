//! The `train`, `eval` and `em-check` subcommands.

use std::io::Write;
use std::path::Path;

use nesi_core::data::{
    generate_synthetic, random_ground_truth, read_idx, read_sparse_bow, split_labels,
    visible_labels, Dataset, Idf, RawDataset, SplitSpec,
};
use nesi_core::em::{fixed_point_residual, run_em, EmOptions, RUpdate, ResidualOptions};
use nesi_core::eval::{field_stats, key_value_report, prune, test_error_cached};
use nesi_core::model::{InferenceCache, ModelConfig};
use nesi_core::train::{self, Checkpoint, Control, TrainReport, Trainer, Variant};

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::error::CliError;

/// Training and (optional) test data of an experiment.
pub struct LoadedData {
    pub train: Dataset,
    pub test: Option<Dataset>,
    /// Which training items the learner sees labeled.
    pub mask: Vec<bool>,
}

fn take_prefix(raw: RawDataset, n: Option<usize>) -> RawDataset {
    match n {
        Some(n) if n < raw.len() => raw.subset(&(0..n).collect::<Vec<_>>()),
        _ => raw,
    }
}

fn read_raw(cfg: &ExperimentConfig) -> Result<(RawDataset, Option<RawDataset>), CliError> {
    let pair = match &cfg.dataset {
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        } => {
            let train = read_idx(train_images, train_labels).map_err(CliError::data)?;
            let test = match (test_images, test_labels) {
                (Some(i), Some(l)) if i.exists() || l.exists() => {
                    Some(read_idx(i, l).map_err(CliError::data)?)
                }
                _ => None,
            };
            (train, test)
        }
        DatasetSpec::Bow { train, test, tfidf } => {
            let train_raw = read_sparse_bow(train).map_err(CliError::data)?;
            let test_raw = test
                .as_ref()
                .map(|t| read_sparse_bow(t))
                .transpose()
                .map_err(CliError::data)?;
            if *tfidf {
                let idf = Idf::fit(&train_raw);
                let tr = idf.transform(&train_raw).map_err(CliError::data)?;
                let te = test_raw
                    .map(|t| idf.transform(&t))
                    .transpose()
                    .map_err(CliError::data)?;
                (tr, te)
            } else {
                (train_raw, test_raw)
            }
        }
        DatasetSpec::Synthetic {
            dim,
            units,
            classes,
            train_size,
            test_size,
            spread,
            seed,
        } => {
            let model = ModelConfig::new(*dim, *units, *classes, cfg.total)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let gt = random_ground_truth(&model, *spread, *seed).map_err(CliError::data)?;
            let train = generate_synthetic(&gt, *train_size, seed.wrapping_add(1))
                .map_err(CliError::data)?
                .raw;
            let test = generate_synthetic(&gt, *test_size, seed.wrapping_add(2))
                .map_err(CliError::data)?
                .raw;
            (train, Some(test))
        }
    };
    Ok(pair)
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<LoadedData, CliError> {
    let (train_raw, test_raw) = read_raw(cfg)?;
    let train_raw = take_prefix(train_raw, cfg.train_subset);
    let classes = train_raw.classes;
    if cfg.total.is_nan() || cfg.total <= train_raw.dim as f64 {
        return Err(CliError::Config(format!(
            "total = {} must exceed the input dimension {}",
            cfg.total, train_raw.dim
        )));
    }
    let train = Dataset::from_raw(train_raw, cfg.total).map_err(CliError::data)?;
    let test = test_raw
        .map(|t| {
            let mut t = take_prefix(t, cfg.test_subset);
            t.classes = t.classes.max(classes);
            Dataset::from_raw(t, cfg.total)
        })
        .transpose()
        .map_err(CliError::data)?;
    let spec = SplitSpec {
        per_class: cfg.labels_per_class,
        seed: cfg.split_seed,
    };
    let mask = split_labels(&train.labels, train.classes, &spec).map_err(CliError::data)?;
    Ok(LoadedData { train, test, mask })
}

pub fn model_config(cfg: &ExperimentConfig, data: &Dataset) -> Result<ModelConfig, CliError> {
    ModelConfig::new(data.dim(), cfg.units, data.classes, cfg.total)
        .map_err(|e| CliError::Config(e.to_string()))
}

fn join(values: impl Iterator<Item = String>) -> String {
    values.collect::<Vec<_>>().join(",")
}

/// Result of `train`.
pub struct TrainOutcome {
    pub report: TrainReport,
    pub train_error: f64,
    pub test_error: Option<f64>,
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<TrainOutcome, CliError> {
    let data = load_data(cfg)?;
    let model = model_config(cfg, &data.train)?;
    let labels = visible_labels(&data.train.labels, &data.mask);
    let trainer = Trainer::new(&data.train.obs, labels, &model, cfg.train.clone())
        .map_err(CliError::runtime)?;
    let (eps_w, eps_r) = trainer.rates();
    writeln!(
        out,
        "training {} on {} items ({} labeled), C={}, eps_w={eps_w:.6e}, eps_r={eps_r:.6e}",
        cfg.train.variant,
        data.train.len(),
        data.mask.iter().filter(|&&m| m).count(),
        cfg.units
    )
    .map_err(CliError::runtime)?;
    let report = trainer
        .run(|t| {
            if let Some(e) = t.history().last() {
                log::info!(
                    "epoch {} loglik {:?} self-labels {}",
                    e.epoch,
                    e.loglik,
                    e.self_labels
                );
            }
            Control::Continue
        })
        .map_err(CliError::runtime)?;
    let mode = cfg.train.variant.mode();
    let cache = InferenceCache::new(&report.weights).map_err(CliError::runtime)?;
    let train_error = test_error_cached(&cache, &data.train.obs, &data.train.labels, mode)
        .map_err(CliError::runtime)?;
    let test_error = data
        .test
        .as_ref()
        .map(|t| test_error_cached(&cache, &t.obs, &t.labels, mode))
        .transpose()
        .map_err(CliError::runtime)?;

    let (width, height) = cfg.field_shape(data.train.dim());
    if let Some(path) = &cfg.checkpoint {
        let meta = vec![
            ("config".to_string(), cfg.source.clone()),
            ("variant".to_string(), cfg.train.variant.to_string()),
            ("seed".to_string(), cfg.train.seed.to_string()),
            ("train_size".to_string(), data.train.len().to_string()),
            ("width".to_string(), width.to_string()),
            ("height".to_string(), height.to_string()),
        ];
        train::save(path, &report, &meta).map_err(CliError::runtime)?;
    }
    let mut pairs = vec![
        ("variant", cfg.train.variant.to_string()),
        ("units", cfg.units.to_string()),
        ("train_size", data.train.len().to_string()),
        ("skipped", data.train.skipped.to_string()),
        (
            "labeled",
            data.mask.iter().filter(|&&m| m).count().to_string(),
        ),
        ("eps_w", eps_w.to_string()),
        ("eps_r", eps_r.to_string()),
        ("stop_epoch", report.stop_epoch.to_string()),
        ("stop_reason", report.stop_reason.to_string()),
        (
            "loglik",
            join(
                report
                    .history
                    .iter()
                    .filter_map(|e| e.loglik.map(|v| v.to_string())),
            ),
        ),
        (
            "self_labels",
            join(report.history.iter().map(|e| e.self_labels.to_string())),
        ),
        ("train_error", format!("{train_error:.2}")),
    ];
    if let Some(e) = test_error {
        pairs.push(("test_error", format!("{e:.2}")));
    }
    let result = key_value_report(&pairs);
    if let Some(path) = &cfg.report {
        let text = format!("[config]\n{}[result]\n{result}", with_newline(&cfg.source));
        std::fs::write(path, text).map_err(CliError::runtime)?;
    }
    out.write_all(result.as_bytes())
        .map_err(CliError::runtime)?;
    Ok(TrainOutcome {
        report,
        train_error,
        test_error,
    })
}

fn with_newline(s: &str) -> String {
    if s.is_empty() || s.ends_with('\n') {
        s.to_string()
    } else {
        format!("{s}\n")
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    train::restore(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn checkpoint_variant(ckpt: &Checkpoint) -> Result<Variant, CliError> {
    ckpt.meta_value("variant")
        .unwrap_or("r")
        .parse()
        .map_err(|e: nesi_core::Error| CliError::Data(e.to_string()))
}

/// Result of `eval`.
pub struct EvalOutcome {
    pub test_error: f64,
    pub pruned_error: Option<f64>,
}

pub fn cmd_eval(
    checkpoint: &Path,
    cfg: &ExperimentConfig,
    prune_below: Option<f64>,
    out: &mut dyn Write,
) -> Result<EvalOutcome, CliError> {
    let ckpt = load_checkpoint(checkpoint)?;
    let variant = checkpoint_variant(&ckpt)?;
    let data = load_data(cfg)?;
    let test = data
        .test
        .as_ref()
        .ok_or_else(|| CliError::Config("no test set configured".into()))?;
    let weights = ckpt.weights();
    if weights.input_dim() != test.dim() {
        return Err(CliError::Data(format!(
            "checkpoint expects dimension {}, test set has {}",
            weights.input_dim(),
            test.dim()
        )));
    }
    let mode = variant.mode();
    let cache = InferenceCache::new(weights).map_err(CliError::runtime)?;
    let test_error =
        test_error_cached(&cache, &test.obs, &test.labels, mode).map_err(CliError::runtime)?;
    let n = ckpt
        .meta_value("train_size")
        .and_then(|v| v.parse().ok())
        .unwrap_or(data.train.len());
    let stats = field_stats(weights, n);
    let mut pairs = vec![
        ("variant", variant.to_string()),
        ("units", weights.units().to_string()),
        ("test_error", format!("{test_error:.2}")),
    ];
    let mut pruned_error = None;
    if let Some(threshold) = prune_below {
        let (pruned, keep) = prune(weights, n, threshold).map_err(CliError::runtime)?;
        let cache = InferenceCache::new(&pruned).map_err(CliError::runtime)?;
        let e =
            test_error_cached(&cache, &test.obs, &test.labels, mode).map_err(CliError::runtime)?;
        pairs.push(("pruned_units", keep.len().to_string()));
        pairs.push(("pruned_test_error", format!("{e:.2}")));
        pruned_error = Some(e);
    }
    out.write_all(key_value_report(&pairs).as_bytes())
        .map_err(CliError::runtime)?;
    out.write_all(stats.report().as_bytes())
        .map_err(CliError::runtime)?;
    Ok(EvalOutcome {
        test_error,
        pruned_error,
    })
}

/// Result of `em-check`.
pub struct EmCheckOutcome {
    pub iterations: usize,
    pub monotone: bool,
    pub gain_per_sample: f64,
    pub residual_before: (f64, f64),
    pub residual_after: (f64, f64),
}

pub fn cmd_em_check(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    opts: &EmOptions,
    out: &mut dyn Write,
) -> Result<EmCheckOutcome, CliError> {
    let data = load_data(cfg)?;
    let model = model_config(cfg, &data.train)?;
    let (weights, variant) = match checkpoint {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let variant = checkpoint_variant(&ckpt)?;
            (ckpt.report.weights, variant)
        }
        None => {
            let labels = visible_labels(&data.train.labels, &data.mask);
            let w = train::init_weights(
                &model,
                &data.train.obs,
                &labels,
                cfg.train.w_init,
                cfg.train.r_init,
                cfg.train.seed,
            )
            .map_err(CliError::runtime)?;
            (w, cfg.train.variant)
        }
    };
    let samples = data.train.samples(Some(&data.mask));
    let res_opts = ResidualOptions {
        mode: variant.mode(),
        r_update: opts.r_update,
    };
    let before = fixed_point_residual(&weights, &samples, &res_opts).map_err(CliError::runtime)?;
    let state = run_em(&samples, weights, opts).map_err(CliError::runtime)?;
    let after =
        fixed_point_residual(&state.weights, &samples, &res_opts).map_err(CliError::runtime)?;
    let w = |e| CliError::runtime(e);
    for (i, ll) in state.loglik_history.iter().enumerate() {
        writeln!(out, "iter {i} loglik {ll:.10}").map_err(w)?;
    }
    let monotone = state.loglik_history.windows(2).all(|p| p[1] >= p[0] - 1e-9);
    let n = samples.len() as f64;
    let first = state.loglik_history[0];
    let last = *state.loglik_history.last().expect("non-empty");
    let gain = (last - first) / n;
    let pairs = vec![
        ("iterations", state.iteration.to_string()),
        ("monotone", monotone.to_string()),
        ("gain_per_sample", format!("{gain:e}")),
        ("res_w_before", format!("{:e}", before.0)),
        ("res_r_before", format!("{:e}", before.1)),
        ("res_w_after", format!("{:e}", after.0)),
        ("res_r_after", format!("{:e}", after.1)),
    ];
    out.write_all(key_value_report(&pairs).as_bytes())
        .map_err(w)?;
    Ok(EmCheckOutcome {
        iterations: state.iteration,
        monotone,
        gain_per_sample: gain,
        residual_before: before,
        residual_after: after,
    })
}

pub fn r_update_for(variant: Variant, uniform_top: bool) -> RUpdate {
    if variant.self_labeling() || uniform_top {
        RUpdate::All
    } else {
        RUpdate::LabeledOnly
    }
}
