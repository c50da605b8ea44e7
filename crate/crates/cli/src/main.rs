//! `cgpfl`: run CGPFL / FedAvg experiments, sweep hyperparameters and
//! generate client shards.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

mod config;
mod run;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cgpfl_core::data::{load_idx, partition_noniid, synth_contexts, write_shards, PartitionConfig, SamplingMode, SynthConfig};
use cgpfl_core::CgpflError;
use clap::{Args, Parser, Subcommand};

use config::{parse_value, resolve_key, RawConfig};

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Failure { code: 3, message: message.into() }
    }

    pub fn from_core(e: CgpflError) -> Self {
        let code = match e {
            CgpflError::Config(_) | CgpflError::DimensionMismatch { .. } | CgpflError::Exhausted { .. } => 2,
            _ => 3,
        };
        Failure { code, message: e.to_string() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Parser, Debug)]
#[command(name = "cgpfl", version, about = "Clustered personalized federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment.
    Run {
        /// TOML config, or a manifest.json from an earlier run.
        #[arg(long)]
        config: PathBuf,
        /// Override a config entry, e.g. `T=5` or `data.seed=3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run once per value of one hyperparameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of K, lambda, mu, eta, alpha.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write client shards plus a manifest.
    GenData {
        #[command(subcommand)]
        kind: GenKind,
    },
}

#[derive(Subcommand, Debug)]
enum GenKind {
    /// Gaussian-mixture clients with latent contexts.
    Synthetic(SynthArgs),
    /// Label-skewed split of an IDX image/label pair.
    PartitionIdx(PartitionArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    contexts: usize,
    #[arg(long, default_value_t = 4)]
    clients_per_context: usize,
    #[arg(long, default_value_t = 2)]
    input_dim: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 24)]
    samples_per_client: usize,
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    #[arg(long, default_value_t = 4.0)]
    noise_std: f64,
    #[arg(long, default_value_t = 0.5)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PartitionArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 40)]
    clients: usize,
    #[arg(long, default_value_t = 3)]
    classes_per_client: usize,
    #[arg(long, default_value_t = 400)]
    min_size: usize,
    #[arg(long, default_value_t = 5000)]
    max_size: usize,
    #[arg(long, default_value_t = 0.75)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Let different clients draw the same pool samples.
    #[arg(long)]
    reuse: bool,
    #[arg(long)]
    out: PathBuf,
}

const SWEEP_PARAMS: &[&str] = &["K", "lambda", "λ", "mu", "μ", "eta", "η", "alpha", "α"];

fn load_config(path: &Path, overrides: &[String]) -> Result<RawConfig, Failure> {
    let mut raw = RawConfig::load(path)?;
    for o in overrides {
        raw.set(o)?;
    }
    Ok(raw)
}

fn cmd_run(config: &Path, overrides: &[String], out: &Path) -> Result<(), Failure> {
    let cfg = load_config(config, overrides)?.build()?;
    let manifest = run::execute(&cfg, out)?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{:?} finished: K = {}, final mean test accuracy {}",
        cfg.run.algorithm,
        manifest.selected_k.unwrap_or(0),
        manifest
            .final_mean_test_accuracy
            .map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"))
    );
    Ok(())
}

fn cmd_sweep(config: &Path, param: &str, values: &[String], overrides: &[String], out: &Path) -> Result<(), Failure> {
    if !SWEEP_PARAMS.contains(&param) {
        return Err(Failure::config(format!(
            "cannot sweep `{param}`; choose one of K, lambda, mu, eta, alpha"
        )));
    }
    let values: Vec<&str> = values.iter().map(|v| v.trim()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Failure::config("sweep needs at least one value"));
    }
    let base = load_config(config, overrides)?;
    let key = resolve_key(param);
    std::fs::create_dir_all(out).map_err(|e| Failure::runtime(format!("{}: {e}", out.display())))?;
    let summary_path = out.join("summary.csv");
    let mut summary = csv_writer(&summary_path)?;
    write_row(&mut summary, &summary_path, &["value", "final_mean_test_accuracy", "status"])?;
    let mut worst = 0u8;
    for v in values {
        let dir = out.join(format!("{}_{v}", key.rsplit('.').next().unwrap_or(param)));
        let mut raw = base.clone();
        let result = raw
            .set_value(&key, parse_value(v))
            .and_then(|_| raw.build())
            .and_then(|cfg| run::execute(&cfg, &dir));
        let (acc, status) = match result {
            Ok(m) => (
                m.final_mean_test_accuracy.map_or_else(String::new, |a| a.to_string()),
                "ok".to_string(),
            ),
            Err(f) => {
                eprintln!("{param} = {v}: {f}");
                worst = worst.max(f.code);
                (String::new(), format!("error: {f}"))
            }
        };
        println!("{param} = {v}: {}", if acc.is_empty() { &status } else { &acc });
        write_row(&mut summary, &summary_path, &[v, &acc, &status])?;
    }
    summary
        .flush()
        .map_err(|e| Failure::runtime(format!("{}: {e}", summary_path.display())))?;
    if worst > 0 {
        return Err(Failure {
            code: worst,
            message: "some sweep runs failed; see summary.csv".into(),
        });
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, Failure> {
    csv::Writer::from_path(path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn write_row(w: &mut csv::Writer<std::fs::File>, path: &Path, row: &[&str]) -> Result<(), Failure> {
    w.write_record(row)
        .map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn cmd_gen_data(kind: GenKind) -> Result<(), Failure> {
    let (shards, source, out) = match kind {
        GenKind::Synthetic(a) => {
            let cfg = SynthConfig {
                num_contexts: a.contexts,
                clients_per_context: a.clients_per_context,
                input_dim: a.input_dim,
                num_classes: a.classes,
                samples_per_client: a.samples_per_client,
                separation: a.separation,
                noise_std: a.noise_std,
                train_fraction: a.train_fraction,
                seed: a.seed,
            };
            let shards = synth_contexts(&cfg).map_err(Failure::from_core)?;
            let source = serde_json::json!({ "kind": "synthetic", "config": cfg });
            (shards, source, a.out)
        }
        GenKind::PartitionIdx(a) => {
            let pool = load_idx(&a.images, &a.labels).map_err(Failure::from_core)?;
            let cfg = PartitionConfig {
                num_clients: a.clients,
                classes_per_client: a.classes_per_client,
                shard_size_min: a.min_size,
                shard_size_max: a.max_size,
                train_fraction: a.train_fraction,
                seed: a.seed,
                sampling: if a.reuse { SamplingMode::ReuseAcrossClients } else { SamplingMode::Disjoint },
            };
            let shards = partition_noniid(&pool, &cfg).map_err(Failure::from_core)?;
            let source = serde_json::json!({
                "kind": "partition-idx",
                "images": a.images.file_name().map(|n| n.to_string_lossy().into_owned()),
                "labels": a.labels.file_name().map(|n| n.to_string_lossy().into_owned()),
                "partition": cfg,
            });
            (shards, source, a.out)
        }
    };
    let manifest = write_shards(&out, &shards, source).map_err(Failure::from_core)?;
    println!("wrote {} shards to {}", manifest.clients.len(), out.display());
    Ok(())
}

fn init_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("CGPFL_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::config(format!("CGPFL_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::runtime(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = init_threads().and_then(|_| match cli.command {
        Command::Run { config, overrides, out } => cmd_run(&config, &overrides, &out),
        Command::Sweep {
            config,
            param,
            values,
            overrides,
            out,
        } => cmd_sweep(&config, &param, &values, &overrides, &out),
        Command::GenData { kind } => cmd_gen_data(kind),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
