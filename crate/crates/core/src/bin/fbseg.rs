use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fbseg::eval::{evaluate, f1_score, predict};
use fbseg::experiment::{
    baseline_rows, check_compatible, execute_on, pca_analysis, plot, read_rows, run_all,
    sweep_specs, test_split, write_eval_csv, write_loss_csv, write_rows, EvalRow, ExperimentConfig,
    ExperimentError, ResultRow, RunSpec, RunStatus, RunVariant, SweepKind,
};
use fbseg::net::{load_checkpoint, save_checkpoint, ModelError, Variant};
use fbseg::polygen::{
    build_split, read_dataset, write_dataset, Dataset, PolygenError, SplitConfig,
};
use fbseg::train::TrainError;

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "fbseg",
    version,
    about = "Feedback U-Net segmentation experiments on synthetic polygons"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// key=value experiment file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: a timestamped directory)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; overrides the config file
    #[arg(long)]
    seed: Option<u64>,
    /// Allow grids outside σ ∈ [0, 10] and D ∈ [1, 10]
    #[arg(long)]
    extended: bool,
}

#[derive(Args, Clone)]
struct ModelFlags {
    #[arg(long, value_enum, default_value = "feedback")]
    mode: Mode,
    /// Use M(t) = Q·Q⁻¹ at every step
    #[arg(long)]
    no_decay: bool,
    /// Feed raw feedback logits instead of their softmax
    #[arg(long)]
    no_softmax: bool,
    /// Attenuate the feedforward output once by M(T)
    #[arg(long)]
    static_decay: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Feedback,
    Feedforward,
}

impl ModelFlags {
    fn variant(&self) -> RunVariant {
        match self.mode {
            Mode::Feedback => RunVariant::feedback(!self.no_decay, !self.no_softmax),
            Mode::Feedforward => RunVariant::feedforward(self.static_decay, !self.no_softmax),
        }
    }
}

#[derive(Args, Clone)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    replicates: Option<usize>,
    /// Concurrent training runs
    #[arg(long, env = "FBSEG_WORKERS", default_value_t = 1)]
    workers: usize,
    /// Also save every completed run as `models/<config_hash>.ckpt`
    #[arg(long)]
    save_models: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write train and test splits to disk
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model and save its checkpoint and loss curve
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        /// Dataset directory from `generate` (default: generate from config)
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        replicate: usize,
    },
    /// Score a checkpoint on a test split
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Feedback vs feedforward f1 over the σ grid
    NoiseSweep(SweepArgs),
    /// Feedback vs feedforward f1 over the training-set-size grid
    TrainsizeSweep(SweepArgs),
    /// Decay, softmax and static-decay variants over the σ grid
    Ablation(SweepArgs),
    /// Principal-component trajectory analysis of a feedback checkpoint
    Pca {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Feedforward checkpoint drawn as a flat overlay
        #[arg(long)]
        feedforward: Option<PathBuf>,
        #[arg(long, default_value_t = 6.0)]
        sigma: f64,
    },
    /// Render a sweep CSV as SVG
    Plot {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let code = match &e {
            ExperimentError::Usage(_) => EXIT_USAGE,
            ExperimentError::Train(TrainError::Divergence { .. }) => EXIT_DIVERGENCE,
            _ => EXIT_VALIDATION,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<PolygenError> for Failure {
    fn from(e: PolygenError) -> Self {
        ExperimentError::from(e).into()
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        ExperimentError::from(e).into()
    }
}

impl From<fbseg::eval::EvalError> for Failure {
    fn from(e: fbseg::eval::EvalError) -> Self {
        ExperimentError::from(e).into()
    }
}

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_VALIDATION,
        message: format!("i/o error on {}: {e}", path.display()),
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_fail(p, e))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.base_seed = s;
    }
    cfg.validate(common.extended)?;
    Ok(cfg)
}

fn out_dir(common: &Common, command: &str) -> Result<PathBuf, Failure> {
    let dir = common.out.clone().unwrap_or_else(|| {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        PathBuf::from(format!("fbseg-{command}-{secs}"))
    });
    std::fs::create_dir_all(&dir).map_err(|e| io_fail(&dir, e))?;
    Ok(dir)
}

fn describe(name: &str, d: &Dataset) {
    let m = &d.manifest;
    let area: usize = d.instances.iter().map(|i| i.foreground_area()).sum();
    println!(
        "{name}: {} instances, {}x{}, sigma={}, base_seed={}, mean polygon area {:.1} px",
        m.count,
        m.height,
        m.width,
        m.sigma,
        m.base_seed,
        area as f64 / m.count as f64
    );
}

fn train_split(cfg: &ExperimentConfig) -> SplitConfig {
    SplitConfig::new("train", cfg.d_train, cfg.sigma, cfg.base_seed)
        .with_size(cfg.height, cfg.width)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate { common } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&common, "generate")?;
            let train = build_split(&train_split(&cfg))?;
            let test = build_split(&test_split(
                cfg.base_seed,
                cfg.d_test,
                cfg.sigma,
                cfg.height,
                cfg.width,
            ))?;
            write_dataset(&train, &dir.join("train"))?;
            write_dataset(&test, &dir.join("test"))?;
            describe("train", &train);
            describe("test", &test);
            println!("wrote {}", dir.display());
        }
        Command::Train {
            common,
            model,
            data,
            replicate,
        } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&common, "train")?;
            let spec =
                RunSpec::from_config(&cfg, model.variant(), cfg.sigma, cfg.d_train, replicate);
            let (train, test) = match &data {
                Some(d) => (
                    read_dataset(&d.join("train"))?,
                    read_dataset(&d.join("test"))?,
                ),
                None => (
                    build_split(&spec.train_split())?,
                    build_split(&spec.test_split())?,
                ),
            };
            if (train.manifest.height, train.manifest.width) != (cfg.height, cfg.width) {
                return Err(ExperimentError::Validation(format!(
                    "data is {}x{} but the config asks for {}x{}",
                    train.manifest.height, train.manifest.width, cfg.height, cfg.width
                ))
                .into());
            }
            let outcome = execute_on(&spec, &train, &test)?;
            if let RunStatus::Diverged {
                epoch,
                instance,
                reason,
            } = outcome.status
            {
                return Err(ExperimentError::Train(TrainError::Divergence {
                    epoch,
                    instance,
                    reason,
                })
                .into());
            }
            let params = outcome.params.expect("completed run has parameters");
            save_checkpoint(&params, &dir.join("model.ckpt"))?;
            write_loss_csv(&outcome.curve, &dir.join("loss.csv"))?;
            println!(
                "{} config_hash={:016x} test f1 {:.4} ± {:.4}; wrote {}",
                spec.variant.mode(),
                spec.config_hash(),
                outcome.report.mean(),
                outcome.report.std(),
                dir.display()
            );
        }
        Command::Eval {
            common,
            checkpoint,
            data,
        } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&common, "eval")?;
            let params = load_checkpoint(&checkpoint)?;
            let test = match &data {
                Some(d) => read_dataset(&d.join("test"))?,
                None => build_split(&test_split(
                    cfg.base_seed,
                    cfg.d_test,
                    cfg.sigma,
                    cfg.height,
                    cfg.width,
                ))?,
            };
            check_compatible(&params, test.manifest.height, test.manifest.width)?;
            let flags = match params.config.variant {
                Variant::Feedback {
                    use_decay,
                    use_softmax,
                } => format!("decay={use_decay};softmax={use_softmax}"),
                Variant::Feedforward { static_decay } => format!("static_decay={static_decay}"),
            };
            let mut rows = Vec::new();
            for (i, inst) in test.instances.iter().enumerate() {
                rows.push(EvalRow {
                    instance_id: i,
                    sigma: test.manifest.sigma,
                    d_train: None,
                    mode: params.config.variant.label().into(),
                    flags: flags.clone(),
                    f1: f1_score(&predict(&params, inst)?, &inst.mask)?,
                });
            }
            write_eval_csv(&rows, &dir.join("eval.csv"))?;
            let report = evaluate(&params, &test.instances)?;
            println!(
                "f1 {:.4} ± {:.4} over {} instances",
                report.mean(),
                report.std(),
                report.f1.len()
            );
        }
        Command::NoiseSweep(a) => sweep(SweepKind::Noise, a)?,
        Command::TrainsizeSweep(a) => sweep(SweepKind::TrainSize, a)?,
        Command::Ablation(a) => sweep(SweepKind::Ablation, a)?,
        Command::Pca {
            common,
            checkpoint,
            feedforward,
            sigma,
        } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&common, "pca")?;
            let model = load_checkpoint(&checkpoint)?;
            check_compatible(&model, cfg.height, cfg.width)?;
            let ff = feedforward.as_deref().map(load_checkpoint).transpose()?;
            if let Some(f) = &ff {
                check_compatible(f, cfg.height, cfg.width)?;
            }
            let test = build_split(&test_split(
                cfg.base_seed,
                cfg.d_test,
                sigma,
                cfg.height,
                cfg.width,
            ))?;
            let analysis = pca_analysis(&model, ff.as_ref(), &test.instances)?;
            analysis.write_csv(&dir.join("pca.csv"))?;
            let svg = dir.join("pca.svg");
            std::fs::write(&svg, analysis.svg()).map_err(|e| io_fail(&svg, e))?;
            if ff.is_none() {
                eprintln!("warning: no feedforward checkpoint given; overlay omitted");
            }
            println!(
                "explained variance ratio {:.4}; late-step spread {:.4} of range; wrote {}",
                analysis.pca.pca.explained_variance_ratio,
                analysis.pca.late_spread_fraction(&[3, 4, 5]),
                dir.display()
            );
        }
        Command::Plot { input, out } => {
            let rows = read_rows(&input)?;
            let (svg, warnings) = plot::render_sweep_svg(&rows);
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let path = out.unwrap_or_else(|| input.with_extension("svg"));
            std::fs::write(&path, svg).map_err(|e| io_fail(&path, e))?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn sweep(kind: SweepKind, a: SweepArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&a.common)?;
    if let Some(r) = a.replicates {
        cfg.replicates = r;
        cfg.validate(a.common.extended)?;
    }
    let dir = out_dir(&a.common, kind.label())?;
    let outcomes = run_all(&sweep_specs(kind, &cfg), a.workers)?;
    let mut rows: Vec<ResultRow> = outcomes
        .iter()
        .map(|o| ResultRow::from_outcome(kind, o))
        .collect();
    rows.extend(baseline_rows(kind, &cfg)?);
    if a.save_models {
        let models = dir.join("models");
        std::fs::create_dir_all(&models).map_err(|e| io_fail(&models, e))?;
        for (o, row) in outcomes.iter().zip(&rows) {
            if let Some(p) = &o.params {
                save_checkpoint(p, &models.join(format!("{}.ckpt", row.config_hash)))?;
            }
        }
    }
    let path = dir.join("results.csv");
    write_rows(&rows, &path)?;
    let diverged = rows.iter().filter(|r| r.status == "diverged").count();
    println!(
        "{} rows ({diverged} diverged); wrote {}",
        rows.len(),
        path.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
