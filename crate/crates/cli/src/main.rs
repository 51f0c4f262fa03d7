mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deepselective::analysis::{self, AnalysisOptions, DEFAULT_BINS};
use deepselective::ata::AtaConfig;
use deepselective::controller::{PidConfig, PidGains};
use deepselective::data::{self, Dataset, IngestOptions, Split, SyntheticSpec};
use deepselective::dgfs::SupportExport;
use deepselective::model::{self, ModelConfig, ModelParams, TrainConfig};
use deepselective::rml::AlignMode;
use deepselective::Error;
use serde::Serialize;

use config::FileConfig;

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    fn artifact(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Validation(_) | Error::Parameter(_) => 2,
            Error::Data { .. } | Error::Io(_) => 3,
            Error::Artifact(_) | Error::Shape { .. } => 4,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "deepselective", version, about = "Sparse feature selection with a support-masked transformer autoencoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with planted informative features.
    Generate(GenerateArgs),
    /// Train a model and write the checkpoint, report, tau trajectory and support.
    Train(TrainArgs),
    /// Classification metrics of a checkpoint on one split.
    Eval(EvalArgs),
    /// Importance, mutual information, t-tests and PCA projections.
    Analyze(EvalArgs),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, env = "DEEPSELECTIVE_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n_features: Option<usize>,
    #[arg(long)]
    n_informative: Option<usize>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    correlation: Option<f64>,
    #[arg(long)]
    missing_rate: Option<f64>,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset manifest written by `generate`, or a CSV file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Label column when `--data` is a CSV file.
    #[arg(long)]
    label_column: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    selection_learning_rate: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long)]
    kp: Option<f64>,
    #[arg(long)]
    ki: Option<f64>,
    #[arg(long)]
    kd: Option<f64>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    /// Encoder and decoder depth.
    #[arg(long)]
    layers: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint manifest written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// train, val or test.
    #[arg(long)]
    split: Option<String>,
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError { code: 1, message: format!("cannot write {}: {e}", path.display()) })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError { code: 1, message: e.to_string() })?;
    write(path, &text)
}

fn out_dir(c: &Common) -> CliResult<PathBuf> {
    fs::create_dir_all(&c.out).map_err(|e| CliError::config(format!("cannot create {}: {e}", c.out.display())))?;
    Ok(c.out.clone())
}

fn load_data(args: &DataArgs, file: &FileConfig, seed: u64) -> CliResult<Dataset> {
    let path = args.data.as_ref().ok_or_else(|| CliError::config("--data is required"))?;
    if !path.exists() {
        return Err(CliError::data(format!("dataset {} does not exist", path.display())));
    }
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let loaded = if is_csv {
        let label = file.pick(args.label_column.clone(), "label_column", "label".to_string())?;
        data::ingest_csv(path, &label, &IngestOptions { seed, ..Default::default() })
    } else {
        data::load_dataset(path)
    };
    // Content problems in the input count as data errors.
    loaded.map_err(|e| match e {
        Error::Validation(m) => CliError::data(m),
        other => other.into(),
    })
}

fn generate(a: GenerateArgs) -> CliResult<()> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        n_features: file.pick(a.n_features, "n_features", d.n_features)?,
        n_informative: file.pick(a.n_informative, "n_informative", d.n_informative)?,
        n_samples: file.pick(a.n_samples, "n_samples", d.n_samples)?,
        noise: file.pick(a.noise, "noise", d.noise)?,
        correlation: file.pick(a.correlation, "correlation", d.correlation)?,
        missing_rate: file.pick(a.missing_rate, "missing_rate", d.missing_rate)?,
        seed: file.pick(a.common.seed, "seed", d.seed)?,
    };
    let ds = data::generate_synthetic(&spec)?;
    let out = out_dir(&a.common)?;
    let path = out.join("dataset.json");
    data::save_dataset(&ds, &path)?;
    println!(
        "wrote {}: {} samples, {} features ({} informative), {} positive ({:.1}%)",
        path.display(),
        ds.n_samples(),
        ds.n_features(),
        spec.n_informative,
        ds.positives(),
        100.0 * ds.positives() as f64 / ds.n_samples() as f64
    );
    Ok(())
}

fn parse_align(s: &str) -> CliResult<AlignMode> {
    match s {
        "one_minus_cosine" => Ok(AlignMode::OneMinusCosine),
        "cosine" => Ok(AlignMode::Cosine),
        other => Err(CliError::config(format!("align_mode {other:?}: expected one_minus_cosine or cosine"))),
    }
}

fn train(a: TrainArgs) -> CliResult<()> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let d = TrainConfig::default();
    let seed = file.pick(a.common.seed, "seed", d.seed)?;
    let pd = PidConfig::default();
    let cfg = TrainConfig {
        beta1: file.pick(a.beta1, "beta1", d.beta1)?,
        beta2: file.pick(a.beta2, "beta2", d.beta2)?,
        alpha: file.pick(a.alpha, "alpha", d.alpha)?,
        learning_rate: file.pick(a.learning_rate, "learning_rate", d.learning_rate)?,
        selection_learning_rate: file.pick(a.selection_learning_rate, "selection_learning_rate", d.selection_learning_rate)?,
        batch_size: file.pick(a.batch_size, "batch_size", d.batch_size)?,
        epochs: file.pick(a.epochs, "epochs", d.epochs)?,
        seed,
        pid: PidConfig {
            tau0: file.pick(a.tau0, "tau0", pd.tau0)?,
            gains: PidGains {
                kp: file.pick(a.kp, "kp", pd.gains.kp)?,
                ki: file.pick(a.ki, "ki", pd.gains.ki)?,
                kd: file.pick(a.kd, "kd", pd.gains.kd)?,
            },
            tau_min: file.pick(None, "tau_min", pd.tau_min)?,
            tau_max: file.pick(None, "tau_max", pd.tau_max)?,
        },
        align_mode: parse_align(&file.pick(None, "align_mode", "one_minus_cosine".to_string())?)?,
    };
    cfg.validate()?;

    let ds = load_data(&a.data, &file, seed)?;
    let (x, y) = ds.subset(Split::Train)?;
    let pos = y.iter().filter(|&&v| v == 1.0).count();
    if pos == 0 || pos == y.len() {
        return Err(CliError::data(format!("training split has {pos} positive of {} samples; both classes are required", y.len())));
    }

    let n = ds.n_features();
    let base = AtaConfig::new(n);
    let layers = file.pick(a.layers, "layers", base.n_encoder_layers)?;
    let ata = AtaConfig {
        n_features: n,
        latent_dim: file.pick(a.latent_dim, "latent_dim", base.latent_dim)?,
        embed_dim: file.pick(None, "embed_dim", base.embed_dim)?,
        n_heads: file.pick(a.heads, "heads", base.n_heads)?,
        n_encoder_layers: file.pick(None, "encoder_layers", layers)?,
        n_decoder_layers: file.pick(None, "decoder_layers", layers)?,
        ff_dim: file.pick(None, "ff_dim", base.ff_dim)?,
    };
    let mc = ModelConfig { head_hidden: file.pick(None, "head_hidden", 2 * ata.latent_dim)?, ata };
    mc.validate()?;

    let out = out_dir(&a.common)?;
    let (params, report) = model::train(&x, &y, &ds.feature_names, mc, &cfg)?;
    model::save_checkpoint(&params, &out.join("model.json"))?;
    report.write_json(&out.join("report.json"))?;
    report.write_tau_csv(&out.join("tau.csv"))?;
    let state = params.selection()?;
    write_json(&out.join("support.json"), &SupportExport::new(&state, &params.feature_names))?;
    let last = report.epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs on {} samples: loss {:.4}, tau {:.3}, |S| = {} of {}",
        report.epochs.len(),
        x.shape()[0],
        last.total,
        params.tau,
        state.support.len(),
        n
    );
    Ok(())
}

fn load_for_eval(a: &EvalArgs) -> CliResult<(FileConfig, ModelParams, Dataset, Split)> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    if !a.checkpoint.exists() {
        return Err(CliError::artifact(format!("checkpoint {} does not exist", a.checkpoint.display())));
    }
    let params = model::load_checkpoint(&a.checkpoint)?;
    let seed = file.pick(a.common.seed, "seed", 0)?;
    let ds = load_data(&a.data, &file, seed)?;
    if ds.n_features() != params.config.n_features() {
        return Err(CliError::artifact(format!(
            "checkpoint expects {} features but the dataset has {}",
            params.config.n_features(),
            ds.n_features()
        )));
    }
    let split: Split = file.pick(a.split.clone(), "split", "test".to_string())?.parse()?;
    Ok((file, params, ds, split))
}

#[derive(Serialize)]
struct EvalOutput {
    split: Split,
    n_samples: usize,
    #[serde(flatten)]
    metrics: analysis::MetricSet,
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let (file, params, ds, split) = load_for_eval(&a)?;
    let (x, y) = ds.subset(split)?;
    let threshold = file.pick(None, "threshold", 0.5)?;
    let metrics = analysis::evaluate(&params, &x, &y, threshold)?;
    let out = out_dir(&a.common)?;
    write_json(&out.join("metrics.json"), &EvalOutput { split, n_samples: y.len(), metrics })?;
    println!(
        "{split:?}: AUROC {:.4}  AUPRC {:.4}  F1 {:.4}  min(Se,P+) {:.4}",
        metrics.auroc, metrics.auprc, metrics.f1, metrics.min_se_pplus
    );
    Ok(())
}

fn analyze(a: EvalArgs) -> CliResult<()> {
    let (file, params, ds, split) = load_for_eval(&a)?;
    let (x, y) = ds.subset(split)?;
    let opts = AnalysisOptions {
        bins: file.pick(None, "bins", DEFAULT_BINS)?,
        informative: ds.informative.clone(),
        ..Default::default()
    };
    let report = analysis::analyze(&params, &x, &y, &opts)?;
    let out = out_dir(&a.common)?;
    write(&out.join("analysis.json"), &report.to_json()?)?;
    write(&out.join("features.csv"), &report.features_csv())?;
    write(&out.join("mi_zr.csv"), &report.mi_zr.to_csv())?;
    write(&out.join("mi_zs.csv"), &report.mi_zs.to_csv())?;
    for (name, pca) in [("raw", &report.pca_raw), ("zr", &report.pca_zr), ("zs", &report.pca_zs)] {
        if let Some(p) = pca {
            write(&out.join(format!("pca_{name}.csv")), &analysis::projections_csv(p, &y))?;
        }
    }
    println!("analyzed {} samples: |S| = {}", y.len(), report.support.len());
    if let Some(r) = &report.recovery {
        println!(
            "recall {}/{}; mean MI to z_r: informative {:.4}, nuisance {:.4}",
            r.recovered.len(),
            r.informative.len(),
            r.mean_mi_informative_zr,
            r.mean_mi_nuisance_zr
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
