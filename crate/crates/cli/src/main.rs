use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use sketchfer::manifest::load_manifest;
use sketchfer::pipeline::{self, Mode, RunConfig};
use sketchfer::synth::{synth_features, SynthSpec};

#[derive(Parser)]
#[command(
    name = "sketchfer",
    version,
    about = "Finetuning-free transfer learning from frozen layer features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the mode named in the config (supervised by default).
    Run(Common),
    /// Accumulated or individual layer ablation on the full training set.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Evaluate support layers one at a time instead of accumulating.
        #[arg(long)]
        individual: bool,
    },
    /// Transductive regression with few labels per class.
    Semi {
        #[command(flatten)]
        common: Common,
        /// Labeled samples per class, comma separated.
        #[arg(long, value_delimiter = ',')]
        labels_per_class: Option<Vec<usize>>,
    },
    /// Paired comparison against a baseline.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = BaselineKind::Randproj)]
        kind: BaselineKind,
    },
    /// Fit once on the training set and export its score matrix.
    Export(Common),
    /// Write a synthetic layered dataset and its manifest.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Randproj,
    RbfBank,
}

#[derive(Args)]
struct Common {
    /// JSON run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    buckets: Option<usize>,
    #[arg(long)]
    stacks: Option<usize>,
    #[arg(long)]
    ms_factor: Option<f64>,
    /// Single training fraction instead of the configured sweep.
    #[arg(long)]
    portion: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    skip_rbf: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    n_train: usize,
    #[arg(long, default_value_t = 500)]
    n_test: usize,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    /// Layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "64,128,96,32")]
    dims: Vec<usize>,
    /// Class-mean strength per layer, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0,0,5,0")]
    signal: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    shared: f64,
    /// Width of raw-input arrays; 0 skips them.
    #[arg(long, default_value_t = 0)]
    raw_dim: usize,
}

const DEFAULT_OUT_DIR: &str = "sketchfer-out";

impl Common {
    fn config(&self) -> sketchfer::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_json_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.manifest {
            cfg.manifest = Some(v.clone());
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.buckets {
            cfg.buckets = v;
        }
        if let Some(v) = self.stacks {
            cfg.stacks = v;
        }
        if let Some(v) = self.ms_factor {
            cfg.ms_factor = v;
        }
        if let Some(v) = self.portion {
            cfg.portions = vec![v];
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if self.skip_rbf {
            cfg.skip_rbf = true;
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = Some(v.clone());
        }
        Ok(cfg)
    }
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn execute(mut cfg: RunConfig, export: bool) -> sketchfer::Result<PathBuf> {
    let manifest = cfg
        .manifest
        .clone()
        .ok_or_else(|| sketchfer::Error::Config("no manifest given (--manifest or config field)".into()))?;
    cfg.validate()?;
    let ds = load_manifest(&manifest)?;
    info!("loaded {} with {} layers", ds.manifest.dataset, ds.n_layers());
    if export {
        cfg.mode = Mode::Supervised;
        cfg.trials = 1;
        if cfg.portions.len() > 1 {
            cfg.portions = vec![1.0];
        }
    }
    let result = pipeline::run(&cfg, &ds)?;
    let dir = out_dir(&cfg);
    for p in pipeline::write_outputs(&result, &dir)? {
        info!("wrote {}", p.display());
    }
    if export {
        let p = pipeline::export_predictions(&result, &dir)?;
        info!("wrote {}", p.display());
    }
    Ok(dir)
}

fn synth(args: &SynthArgs) -> sketchfer::Result<PathBuf> {
    let spec = SynthSpec {
        seed: args.seed,
        n_train: args.n_train,
        n_test: args.n_test,
        n_classes: args.classes,
        layer_dims: args.dims.clone(),
        signal: args.signal.clone(),
        shared: args.shared,
        raw_dim: args.raw_dim,
        ..SynthSpec::default()
    };
    synth_features(&spec, &args.out_dir)
}

fn dispatch(cli: Cli) -> sketchfer::Result<PathBuf> {
    match cli.command {
        Command::Run(c) => execute(c.config()?, false),
        Command::Ablate { common, individual } => {
            let mut cfg = common.config()?;
            cfg.mode = if individual {
                Mode::AblationIndividual
            } else {
                Mode::AblationAccumulate
            };
            execute(cfg, false)
        }
        Command::Semi {
            common,
            labels_per_class,
        } => {
            let mut cfg = common.config()?;
            cfg.mode = Mode::Semi;
            if let Some(k) = labels_per_class {
                cfg.labels_per_class = k;
            }
            execute(cfg, false)
        }
        Command::Baseline { common, kind } => {
            let mut cfg = common.config()?;
            cfg.mode = match kind {
                BaselineKind::Randproj => Mode::BaselineRandproj,
                BaselineKind::RbfBank => Mode::BaselineRbfBank,
            };
            execute(cfg, false)
        }
        Command::Export(c) => execute(c.config()?, true),
        Command::Synth(args) => synth(&args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
