use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use clvae_cli::pipeline::{run_stages, Manifest, Run, Stage, STAGES};
use clvae_cli::RunConfig;
use clvae_core::frame::DataFormat;
use clvae_core::synth::{generate, SynthSpec};

#[derive(Parser)]
#[command(name = "clvae", version, about = "Cluster-wise LSTM-VAE anomaly detection for multivariate time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// TOML run config. Defaults to `<run>/config.toml` when it exists.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Run directory (overrides `output`).
    #[arg(short, long)]
    run: Option<PathBuf>,
    /// Training data file (overrides `data.train`).
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Input format: csv or smd.
    #[arg(long, value_parser = parse_format)]
    format: Option<DataFormat>,
    #[arg(long)]
    iqr_multiplier: Option<f64>,
    /// Fixed number of feature clusters.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// POT risk level.
    #[arg(long)]
    risk_q: Option<f64>,
    /// Empirical quantile for the initial POT threshold.
    #[arg(long)]
    init_quantile: Option<f64>,
    /// Dynamic-threshold window; estimated from the scores when omitted.
    #[arg(long)]
    window: Option<usize>,
}

fn parse_format(s: &str) -> Result<DataFormat, String> {
    match s {
        "csv" => Ok(DataFormat::Csv),
        "smd" => Ok(DataFormat::Smd),
        other => Err(format!("unknown format `{other}` (expected csv or smd)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Read the configured data files into the run directory.
    Ingest(RunArgs),
    /// IQR-clean and standardize the training frame.
    Clean(RunArgs),
    /// Cluster features by correlation.
    Cluster(RunArgs),
    /// Train one LSTM-VAE per cluster.
    Train(RunArgs),
    /// Score the scored frame with the trained models.
    Score(RunArgs),
    /// Dynamic POT thresholding of the scores.
    Threshold(RunArgs),
    /// Feature-perturbation importance of detected anomalies.
    Explain(RunArgs),
    /// Precision/recall/F1 against ground-truth labels.
    Eval(RunArgs),
    /// Render plots and the yearly anomaly table.
    Report(RunArgs),
    /// Run every stage, or the stages from `--from` onwards.
    Pipeline {
        #[command(flatten)]
        args: RunArgs,
        #[arg(long)]
        from: Option<Stage>,
        /// Re-run a previous run from its manifest.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
    },
    /// Generate a synthetic dataset from a JSON spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for frame.csv, labels.csv and partition.json.
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match (&args.config, &args.run) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(run)) if run.join("config.toml").exists() => RunConfig::load(&run.join("config.toml"))?,
        _ => RunConfig::default(),
    };
    if let Some(r) = &args.run {
        cfg.output = r.clone();
    }
    if let Some(p) = &args.train {
        cfg.data.train = p.clone();
    }
    if args.test.is_some() {
        cfg.data.test = args.test.clone();
    }
    if args.labels.is_some() {
        cfg.data.labels = args.labels.clone();
    }
    if let Some(f) = args.format {
        cfg.data.format = f;
        if f == DataFormat::Smd {
            cfg.data.timestamp_column = None;
        }
    }
    if let Some(m) = args.iqr_multiplier {
        cfg.preprocess.iqr_multiplier = m;
    }
    if args.k.is_some() {
        cfg.clustering.k = args.k;
    }
    if let Some(e) = args.epochs {
        cfg.model.train.epochs = e;
    }
    if let Some(q) = args.risk_q {
        cfg.threshold.q = q;
    }
    if let Some(q) = args.init_quantile {
        cfg.threshold.init_quantile = q;
    }
    if args.window.is_some() {
        cfg.threshold.window = args.window;
    }
    Ok(cfg)
}

fn print_stage_summary(run: &Run, stage: Stage) {
    match stage {
        Stage::Eval => {
            if let Ok(text) = std::fs::read_to_string(run.dir.join("eval.json")) {
                if let Ok(s) = serde_json::from_str::<clvae_cli::pipeline::EvalSummary>(&text) {
                    println!("{}", s.pointwise.row());
                    println!("{}", s.point_adjust.row());
                }
            }
        }
        Stage::Threshold => {
            if let Ok(text) = std::fs::read_to_string(run.dir.join("threshold.json")) {
                if let Ok(s) = serde_json::from_str::<clvae_cli::pipeline::ThresholdSummary>(&text) {
                    println!("threshold window {} ({}), {} anomalous timesteps", s.window, s.window_source, s.anomalies);
                }
            }
        }
        _ => {}
    }
}

fn run_single(stage: Stage, args: &RunArgs) -> Result<()> {
    let cfg = resolve(args)?;
    if stage == Stage::Ingest {
        cfg.validate()?;
    }
    let run = Run::new(cfg.output.clone(), cfg);
    run_stages(&run, &[stage])?;
    print_stage_summary(&run, stage);
    println!("{stage}: done ({})", run.dir.display());
    Ok(())
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest(a) => run_single(Stage::Ingest, &a),
        Command::Clean(a) => run_single(Stage::Clean, &a),
        Command::Cluster(a) => run_single(Stage::Cluster, &a),
        Command::Train(a) => run_single(Stage::Train, &a),
        Command::Score(a) => run_single(Stage::Score, &a),
        Command::Threshold(a) => run_single(Stage::Threshold, &a),
        Command::Explain(a) => run_single(Stage::Explain, &a),
        Command::Eval(a) => run_single(Stage::Eval, &a),
        Command::Report(a) => run_single(Stage::Report, &a),
        Command::Pipeline { args, from, manifest } => {
            let mut cfg = match &manifest {
                Some(path) => {
                    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<Manifest>(&text)
                        .with_context(|| format!("parsing {}", path.display()))?
                        .config
                }
                None => resolve(&args)?,
            };
            if manifest.is_some() {
                if let Some(r) = &args.run {
                    cfg.output = r.clone();
                }
            }
            if from.is_some() && !cfg.output.join("manifest.json").exists() {
                bail!("--from needs an existing run in {}", cfg.output.display());
            }
            let m = clvae_cli::run_pipeline(&cfg, from)?;
            let run = Run::new(cfg.output.clone(), cfg);
            for rec in &m.stages {
                println!("{:<10} {:?}{}", rec.stage.to_string(), rec.status, rec.note.as_ref().map(|n| format!(" ({n})")).unwrap_or_default());
            }
            for s in STAGES {
                print_stage_summary(&run, s);
            }
            println!("run directory: {}", run.dir.display());
            Ok(())
        }
        Command::Synth { spec, out } => {
            let text = std::fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let spec: SynthSpec = serde_json::from_str(&text).context("invalid synthetic spec")?;
            let s = generate(&spec)?;
            std::fs::create_dir_all(&out)?;
            s.frame.save_csv(out.join("frame.csv"))?;
            let f = std::fs::File::create(out.join("labels.csv"))?;
            s.labels.write_csv(s.frame.timestamps(), f)?;
            let groups: Vec<Vec<String>> = s
                .partition
                .iter()
                .map(|g| g.iter().map(|&i| s.frame.names()[i].clone()).collect())
                .collect();
            std::fs::write(out.join("partition.json"), serde_json::to_string_pretty(&groups)? + "\n")?;
            println!(
                "wrote {} rows x {} features, {} anomalous timesteps to {}",
                s.frame.n_rows(),
                s.frame.n_features(),
                s.labels.count(),
                out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
