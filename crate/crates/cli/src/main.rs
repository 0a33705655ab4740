use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nesi_cli::commands::{self, load_checkpoint, load_data, model_config, r_update_for};
use nesi_cli::config::ExperimentConfig;
use nesi_cli::service::{self, AppState, Session};
use nesi_cli::CliError;
use nesi_core::data::visible_labels;
use nesi_core::em::EmOptions;
use nesi_core::train::{self, Variant};

#[derive(Parser)]
#[command(
    name = "nesi",
    version,
    about = "Train and inspect Neural Simpletron networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// Experiment file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set theta=0.7`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_dir: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    labels_per_class: Option<String>,
    #[arg(long)]
    units: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and print its error rates.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the configured test set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Drop fields whose expected count falls below this value.
        #[arg(long)]
        prune: Option<f64>,
    },
    /// Run exact EM from an initial or trained network and report residuals.
    EmCheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
    },
    /// Serve the labeling API on localhost.
    Serve {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

impl ConfigArgs {
    fn overrides(&self) -> Result<BTreeMap<String, String>, CliError> {
        let mut map = BTreeMap::new();
        for item in &self.set {
            let (k, v) = item.split_once('=').ok_or_else(|| {
                CliError::Config(format!("--set expects KEY=VALUE, got {item:?}"))
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let flags = [
            ("dataset", self.dataset.clone()),
            ("data_dir", self.data_dir.clone()),
            ("variant", self.variant.clone()),
            ("labels_per_class", self.labels_per_class.clone()),
            ("units", self.units.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                map.insert(k.to_string(), v);
            }
        }
        Ok(map)
    }

    fn load(&self, extra: &[(&str, Option<&Path>)]) -> Result<ExperimentConfig, CliError> {
        let mut overrides = self.overrides()?;
        let cwd = std::env::current_dir().map_err(CliError::runtime)?;
        for (k, v) in extra {
            if let Some(v) = v {
                overrides.insert(k.to_string(), cwd.join(v).display().to_string());
            }
        }
        match &self.config {
            Some(path) => ExperimentConfig::from_file(path, &overrides),
            None => ExperimentConfig::from_text("", &overrides, &cwd),
        }
    }

    fn given(&self) -> bool {
        self.config.is_some() || !self.set.is_empty() || self.units.is_some()
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut stdout = std::io::stdout();
    match cli.command {
        Command::Train {
            cfg,
            checkpoint,
            report,
        } => {
            let cfg = cfg.load(&[
                ("checkpoint", checkpoint.as_deref()),
                ("report", report.as_deref()),
            ])?;
            commands::cmd_train(&cfg, &mut stdout)?;
        }
        Command::Eval {
            checkpoint,
            cfg,
            prune,
        } => {
            let cfg = match cfg.config {
                None if !cfg.given() => config_from_checkpoint(&checkpoint, &cfg)?,
                _ => cfg.load(&[])?,
            };
            commands::cmd_eval(&checkpoint, &cfg, prune, &mut stdout)?;
        }
        Command::EmCheck {
            cfg,
            checkpoint,
            max_iters,
            tol,
        } => {
            let cfg = cfg.load(&[])?;
            let opts = EmOptions {
                max_iters,
                tol,
                r_update: r_update_for(cfg.train.variant, cfg.train.uniform_top),
            };
            commands::cmd_em_check(&cfg, checkpoint.as_deref(), &opts, &mut stdout)?;
        }
        Command::Serve {
            cfg,
            checkpoint,
            port,
        } => serve(cfg, checkpoint, port)?,
    }
    Ok(())
}

/// Rebuilds the experiment configuration stored inside a checkpoint.
fn config_from_checkpoint(path: &Path, args: &ConfigArgs) -> Result<ExperimentConfig, CliError> {
    let ckpt = load_checkpoint(path)?;
    let source = ckpt
        .meta_value("config")
        .ok_or_else(|| CliError::Config("checkpoint has no stored config; pass --config".into()))?;
    let cwd = std::env::current_dir().map_err(CliError::runtime)?;
    ExperimentConfig::from_text(source, &args.overrides()?, &cwd)
}

fn serve(args: ConfigArgs, checkpoint: Option<PathBuf>, port: u16) -> Result<(), CliError> {
    let ckpt = checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let state = if args.given() {
        let cfg = args.load(&[])?;
        let data = load_data(&cfg)?;
        let (weights, history) = match ckpt {
            Some(c) => (c.report.weights, c.report.history),
            None => {
                let model = model_config(&cfg, &data.train)?;
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
                (w, Vec::new())
            }
        };
        let shape = cfg.field_shape(data.train.dim());
        let n = data.train.len();
        let session = Session {
            data,
            config: cfg.train.clone(),
        };
        AppState::new(weights, history, cfg.train.variant, Some(session), shape, n)
    } else {
        let c =
            ckpt.ok_or_else(|| CliError::Config("serve needs --config or --checkpoint".into()))?;
        let meta = |k: &str| c.meta_value(k).and_then(|v| v.parse::<usize>().ok());
        let dim = c.weights().input_dim();
        let shape = match (meta("width"), meta("height")) {
            (Some(w), Some(h)) if w * h == dim => (w, h),
            _ => (dim, 1),
        };
        let variant = c
            .meta_value("variant")
            .and_then(|v| v.parse::<Variant>().ok())
            .unwrap_or(Variant::R);
        let n = meta("train_size").unwrap_or(1);
        AppState::new(c.report.weights, c.report.history, variant, None, shape, n)
    };

    let runtime = tokio::runtime::Runtime::new().map_err(CliError::runtime)?;
    runtime.block_on(async move {
        let addr = SocketAddr::from(([127, 0, 0, 1], port));
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(CliError::runtime)?;
        log::info!("listening on http://{addr}/v1");
        eprintln!("listening on http://{addr}/v1");
        axum::serve(listener, service::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(CliError::runtime)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
