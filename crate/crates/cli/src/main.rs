use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use domsel::adapt::Variant;
use domsel::corpus::Format;
use domsel::pipeline::{run_pipeline, DomainSource, Mode, PipelineConfig, RunSummary, Stage, Target, Workspace};
use domsel::synth::SyntheticSpec;
use domsel::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "domsel", version, about = "Predict domain transfer and adaptation success for text-similarity corpora")]
struct Cli {
    /// Workspace directory holding all artifacts.
    #[arg(long, global = true, default_value = "workspace")]
    workspace: PathBuf,
    /// Pipeline config (JSON). Defaults to the workspace's saved config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for independent jobs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse, validate and split one corpus file.
    Ingest(IngestArgs),
    /// Generate the synthetic domains described in the config (or flags).
    Synth(SynthArgs),
    /// Train per-domain word embeddings.
    Embed {
        #[arg(long)]
        domain: Vec<String>,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Train per-domain trigram language models.
    Lm {
        #[arg(long)]
        domain: Vec<String>,
    },
    /// Compute similarity features for every ordered domain pair.
    Features,
    /// Train adaptation models.
    Adapt(AdaptArgs),
    /// Build cross-domain F1 matrices.
    Downstream {
        #[arg(long)]
        variant: Vec<Variant>,
    },
    /// Train LOTO success predictors or domain rankers.
    Meta {
        #[arg(long)]
        mode: Vec<Mode>,
        #[arg(long)]
        variant: Vec<Variant>,
    },
    /// Write tables, PCA projections and the report manifest.
    Report {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage.
    Pipeline,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "jsonl")]
    format: Format,
    #[arg(long)]
    name: String,
    #[arg(long)]
    binarize_threshold: Option<f64>,
    /// Workspace directory (same as --workspace).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    domains: Option<usize>,
    #[arg(long)]
    examples: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// Seed of the synthetic world (kept apart from --seed).
    #[arg(long)]
    world_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct AdaptArgs {
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "R")]
    reg_target: Option<f64>,
}

fn load_config(cli: &Cli, workspace: &std::path::Path) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => {
            let saved = workspace.join("config.json");
            if saved.exists() {
                PipelineConfig::load(&saved)?
            } else {
                PipelineConfig::default()
            }
        }
    };
    if let Some(s) = cli.seed {
        cfg.apply_seed(s);
    }
    Ok(cfg)
}

fn report(summary: &RunSummary) {
    println!("rebuilt {} artifact(s), reused {}", summary.rebuilt.len(), summary.reused.len());
    for id in &summary.rebuilt {
        log::info!("rebuilt {id}");
    }
}

fn run(cli: Cli) -> Result<()> {
    let workspace = match &cli.command {
        Command::Ingest(a) => a.out.clone().unwrap_or_else(|| cli.workspace.clone()),
        _ => cli.workspace.clone(),
    };
    let mut cfg = load_config(&cli, &workspace)?;
    let mut target = Target::default();
    match &cli.command {
        Command::Ingest(a) => {
            let source = DomainSource {
                name: a.name.clone(),
                path: a.input.clone(),
                format: a.format,
                binarize_threshold: a.binarize_threshold,
            };
            let mut ws = Workspace::open(&workspace)?;
            domsel::pipeline::pool(cli.jobs)?.install(|| ws.ingest(&source, &cfg.split))?;
            report(ws.summary());
            return Ok(());
        }
        Command::Synth(a) => {
            let spec = cfg.synthetic.get_or_insert_with(SyntheticSpec::default);
            if let Some(d) = a.domains {
                spec.domains = d;
            }
            if let Some(n) = a.examples {
                spec.examples_per_domain = n;
            }
            if let Some(x) = a.noise {
                spec.noise = x;
            }
            if let Some(s) = a.world_seed {
                spec.seed = s;
            }
            target.last = Stage::Ingest;
        }
        Command::Embed { domain, dim } => {
            if let Some(d) = dim {
                cfg.embed.dim = *d;
            }
            target.last = Stage::Embed;
            target.domains = (!domain.is_empty()).then(|| domain.clone());
        }
        Command::Lm { domain } => {
            target.last = Stage::Lm;
            target.domains = (!domain.is_empty()).then(|| domain.clone());
        }
        Command::Features => target.last = Stage::Features,
        Command::Adapt(a) => {
            target.last = Stage::Adapt;
            let touched = a.layers.is_some() || a.dropout.is_some() || a.lambda.is_some() || a.reg_target.is_some();
            if let Some(v) = a.variant {
                if v != Variant::Dt && !cfg.adapt.variants.contains(&v) {
                    cfg.adapt.variants.push(v);
                }
                target.variants = Some(vec![v]);
                if let Some(c) = cfg.adapt.config_for_mut(v) {
                    if let Some(x) = a.layers {
                        c.layers = x;
                    }
                    if let Some(x) = a.dropout {
                        c.dropout_p = x;
                    }
                    if let Some(x) = a.lambda {
                        c.lambda = x;
                    }
                    if let Some(x) = a.reg_target {
                        c.reg_target = x;
                    }
                }
            } else if touched {
                return Err(Error::Config("--layers/--dropout/--lambda/--R need --variant".into()));
            }
            target.pair = match (&a.source, &a.target) {
                (Some(s), Some(t)) => Some((s.clone(), t.clone())),
                (None, None) => None,
                _ => return Err(Error::Config("--source and --target go together".into())),
            };
        }
        Command::Downstream { variant } => {
            target.last = Stage::Downstream;
            target.variants = (!variant.is_empty()).then(|| variant.clone());
        }
        Command::Meta { mode, variant } => {
            target.last = Stage::Meta;
            target.modes = (!mode.is_empty()).then(|| mode.clone());
            target.variants = (!variant.is_empty()).then(|| variant.clone());
        }
        Command::Report { out } => {
            target.last = Stage::Report;
            target.report_dir = out.clone();
        }
        Command::Pipeline => target.last = Stage::Report,
    }
    cfg.validate()?;
    let summary = run_pipeline(&workspace, &cfg, &target, cli.jobs)?;
    report(&summary);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
