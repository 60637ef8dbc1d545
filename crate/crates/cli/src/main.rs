use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use strokex::data::{generate_corpus, write_dataset, CorpusConfig, JitterConfig, StrokeStyle, DEFAULT_SPLIT};
use strokex::extractnet::CHECKPOINT_KIND as EXTRACTNET;
use strokex::pipeline::{self, RunConfig, RunData, RunDir};
use strokex::sdnet::CHECKPOINT_KIND as SDNET;
use strokex::segnet::CHECKPOINT_KIND as SEGNET;

#[derive(Parser)]
#[command(name = "strokex", version, about = "Train and run the stroke extraction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData(GenArgs),
    /// Train the similarity autoencoder and the recognizer.
    TrainContent(RunArgs),
    /// Train the registration network.
    TrainSdnet(RunArgs),
    /// Train the segmentation network.
    TrainSegnet {
        #[command(flatten)]
        run: RunArgs,
        /// Use priors from the recorded generating affines.
        #[arg(long)]
        oracle_prior: bool,
        /// Zero the prior channel.
        #[arg(long)]
        no_prior: bool,
    },
    /// Train the per-stroke extraction network.
    TrainExtractnet {
        #[command(flatten)]
        run: RunArgs,
        /// Zero the transformed-reference channels.
        #[arg(long)]
        no_prior: bool,
        /// Zero the segmentation channels.
        #[arg(long)]
        no_semantic: bool,
    },
    /// Extract the strokes of every test sample.
    Extract(RunArgs),
    /// Score the test split and write report.json.
    Evaluate(RunArgs),
    /// Write overlay and panel images.
    Report {
        #[command(flatten)]
        run: RunArgs,
        /// Number of test samples to render.
        #[arg(long, default_value_t = 16)]
        limit: usize,
    },
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 250)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    layouts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Fraction of samples held out for testing.
    #[arg(long, default_value_t = DEFAULT_SPLIT)]
    split: f64,
    #[arg(long, value_enum, default_value_t = Style::Calligraphy)]
    style: Style,
    /// Render targets exactly as their references.
    #[arg(long)]
    zero_jitter: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Style {
    Calligraphy,
    Skeleton,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run name; artifacts go to $STROKEX_RUNS/<run>.
    #[arg(long, default_value = "default")]
    run: String,
    /// Dataset root.
    #[arg(long)]
    data: Option<PathBuf>,
    /// JSON file merged over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the desk-scale preset.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    deterministic: bool,
}

impl RunArgs {
    fn changes_config(&self) -> bool {
        self.data.is_some() || self.config.is_some() || self.desk || self.seed.is_some() || self.deterministic
    }
}

fn read_patch(path: &Path) -> anyhow::Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).map_err(strokex::Error::from)?;
    Ok(v)
}

/// Builds the run config from the flags, or checks them against the run's
/// existing snapshot.
fn resolve_config(run: &RunDir, args: &RunArgs, patch: Value) -> anyhow::Result<RunConfig> {
    let has_patch = patch.as_object().is_some_and(|o| !o.is_empty());
    if run.has_config() {
        let snapshot = run.config()?;
        if !args.changes_config() && !has_patch {
            return Ok(snapshot);
        }
        let mut cfg = snapshot.clone();
        if let Some(d) = &args.data {
            cfg.data_dir = d.clone();
        }
        if let Some(p) = &args.config {
            cfg = cfg.with_overrides(&read_patch(p)?)?;
        }
        if args.desk && !cfg.desk_scale {
            bail!(invalid("run was created without --desk"));
        }
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        cfg.deterministic |= args.deterministic;
        cfg = cfg.with_overrides(&patch)?.resolve();
        return Ok(run.init_config(&cfg)?);
    }
    let Some(data) = &args.data else {
        bail!(invalid(format!("run {} is new: --data is required", run.name)));
    };
    let mut cfg = if args.desk { RunConfig::desk(data) } else { RunConfig::full(data) };
    if let Some(p) = &args.config {
        cfg = cfg.with_overrides(&read_patch(p)?)?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.deterministic |= args.deterministic;
    let cfg = cfg.with_overrides(&patch)?.resolve();
    Ok(run.init_config(&cfg)?)
}

fn invalid(msg: impl Into<String>) -> strokex::Error {
    strokex::Error::Invalid(msg.into())
}

fn open_run(args: &RunArgs) -> anyhow::Result<RunDir> {
    Ok(RunDir::open(&pipeline::runs_root(), &args.run)?)
}

/// Inference subcommands report missing checkpoints before anything else.
fn require_models(run: &RunDir) -> anyhow::Result<()> {
    for stage in [SDNET, SEGNET, EXTRACTNET] {
        if !run.checkpoint(stage).exists() {
            return Err(strokex::Error::MissingCheckpoint {
                stage: match stage {
                    SDNET => "sdnet",
                    SEGNET => "segnet",
                    _ => "extractnet",
                },
                path: run.checkpoint(stage).dir,
            }
            .into());
        }
    }
    Ok(())
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).unwrap_or_else(|_| v.to_string()));
}

fn gen_data(args: &GenArgs) -> anyhow::Result<()> {
    if !(0.0..1.0).contains(&args.split) {
        bail!(invalid(format!("--split {} must lie in [0, 1)", args.split)));
    }
    if args.n == 0 {
        bail!(invalid("--n must be positive"));
    }
    let cfg = CorpusConfig {
        n_samples: args.n,
        n_layouts: args.layouts,
        style: match args.style {
            Style::Calligraphy => StrokeStyle::Calligraphy,
            Style::Skeleton => StrokeStyle::Skeleton,
        },
        jitter: if args.zero_jitter { JitterConfig::none() } else { JitterConfig::default() },
        seed: args.seed,
    };
    let (layouts, samples) = generate_corpus(&cfg)?;
    let manifest = write_dataset(&samples, &layouts, &args.out, args.split)?;
    let (train, test) = manifest.partition();
    print_json(&json!({ "out": args.out, "samples": samples.len(), "layouts": layouts.len(), "train": train.len(), "test": test.len() }));
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let wants_determinism = match &cli.command {
        Command::GenData(_) => false,
        Command::TrainContent(a) | Command::TrainSdnet(a) | Command::Extract(a) | Command::Evaluate(a) => a.deterministic,
        Command::TrainSegnet { run, .. } | Command::TrainExtractnet { run, .. } | Command::Report { run, .. } => run.deterministic,
    };
    if wants_determinism {
        pipeline::enforce_determinism();
    }
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::TrainContent(a) => {
            let run = open_run(a)?;
            let cfg = resolve_config(&run, a, json!({}))?;
            let data = RunData::load(&cfg.data_dir)?;
            print_json(&pipeline::train_content_stage(&run, &cfg, &data)?);
            Ok(())
        }
        Command::TrainSdnet(a) => {
            let run = open_run(a)?;
            let cfg = resolve_config(&run, a, json!({}))?;
            let data = RunData::load(&cfg.data_dir)?;
            print_json(&pipeline::train_sdnet_stage(&run, &cfg, &data)?);
            Ok(())
        }
        Command::TrainSegnet { run: a, oracle_prior, no_prior } => {
            let run = open_run(a)?;
            let mut patch = json!({});
            if *oracle_prior {
                patch["segnet_oracle_prior"] = json!(true);
            }
            if *no_prior {
                patch["segnet"] = json!({ "no_prior": true });
            }
            let cfg = resolve_config(&run, a, patch)?;
            let data = RunData::load(&cfg.data_dir)?;
            print_json(&pipeline::train_segnet_stage(&run, &cfg, &data)?);
            Ok(())
        }
        Command::TrainExtractnet { run: a, no_prior, no_semantic } => {
            let run = open_run(a)?;
            let mut patch = json!({});
            if *no_prior || *no_semantic {
                patch["extractnet"] = json!({ "ablation": { "no_prior": no_prior, "no_semantic": no_semantic } });
            }
            let cfg = resolve_config(&run, a, patch)?;
            let data = RunData::load(&cfg.data_dir)?;
            print_json(&pipeline::train_extractnet_stage(&run, &cfg, &data)?);
            Ok(())
        }
        Command::Extract(a) => {
            let run = open_run(a)?;
            require_models(&run)?;
            let cfg = resolve_config(&run, a, json!({}))?;
            let data = RunData::load(&cfg.data_dir)?;
            let index = pipeline::extract_stage(&run, &cfg, &data)?;
            print_json(&json!({ "samples": index.len(), "index": run.path("extract/index.json") }));
            Ok(())
        }
        Command::Evaluate(a) => {
            let run = open_run(a)?;
            require_models(&run)?;
            let cfg = resolve_config(&run, a, json!({}))?;
            let data = RunData::load(&cfg.data_dir)?;
            let r = pipeline::evaluate_stage(&run, &cfg, &data)?;
            print_json(&json!({ "mDis": r.m_dis, "mBIou": r.m_biou, "mIOU_m": r.m_iou_m, "mIOU_um": r.m_iou_um, "report": run.path(pipeline::REPORT_FILE) }));
            Ok(())
        }
        Command::Report { run: a, limit } => {
            let run = open_run(a)?;
            require_models(&run)?;
            let cfg = resolve_config(&run, a, json!({}))?;
            let data = RunData::load(&cfg.data_dir)?;
            let files = pipeline::report_stage(&run, &cfg, &data, *limit)?;
            print_json(&json!({ "written": files }));
            Ok(())
        }
    }
}

/// 1 for bad input or missing prerequisites, 2 for failures while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<strokex::Error>() {
        Some(e) if e.is_validation() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
