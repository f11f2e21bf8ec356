mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tamperscope::eval::Predictor;
use tamperscope::synth::{Perturbation, SplitAxis, Task, TaskMix};
use tamperscope::verify::Sabotage;
use tamperscope::{CoreError, Result};
use tamperscope_tensor::TensorError;

use crate::config::RunConfig;

/// Duplication detection on image pairs: synthesize data, train, evaluate,
/// infer and check the model's algebraic properties.
#[derive(Debug, Parser)]
#[command(name = "tamperscope", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic forgery dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        pristine_frac: Option<f64>,
        #[arg(long)]
        image_size: Option<usize>,
        /// Paste without augmentation, hard blend.
        #[arg(long)]
        identity_spec: bool,
    },
    /// Train a model on a synthetic dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        patch_size: Option<usize>,
        #[arg(long)]
        embed_dim: Option<usize>,
    },
    /// Score predictions on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        predictor: Option<PredictorArg>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Write per-sample probability masks.
        #[arg(long)]
        save_masks: bool,
    },
    /// Predict masks for one image pair, or one image split into halves.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        img1: PathBuf,
        img2: Option<PathBuf>,
        /// Also write self- and cross-affinity heatmaps.
        #[arg(long)]
        dump_affinity: bool,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
    },
    /// Run the randomized property suite.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Inject a known fault; the suite is expected to fail.
        #[arg(long, value_enum)]
        sabotage: Option<SabotageArg>,
    },
    /// Sweep a perturbation over a dataset and record the score at each level.
    Perturb {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, requires = "levels")]
        kind: Option<KindArg>,
        /// Comma-separated levels for `--kind`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, requires = "kind")]
        levels: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Edd,
    Idd,
    Cstd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PredictorArg {
    Model,
    Gt,
    Zeros,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Vertical,
    Horizontal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SabotageArg {
    RopeNorm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Brightness,
    Contrast,
    Noise,
    Blur,
    ColorReduce,
    BlockQuant,
}

impl KindArg {
    fn at(self, level: f64) -> Result<Perturbation> {
        let int = |v: f64| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(CoreError::Config(format!("level {v} must be a non-negative integer")))
            }
        };
        Ok(match self {
            KindArg::Brightness => Perturbation::Brightness(level),
            KindArg::Contrast => Perturbation::Contrast(level),
            KindArg::Noise => Perturbation::GaussianNoise(level),
            KindArg::Blur => Perturbation::Blur(int(level)?),
            KindArg::ColorReduce => Perturbation::ColorReduce(int(level)?),
            KindArg::BlockQuant => Perturbation::BlockQuant(level),
        })
    }
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Ok = 0,
    PropertyFailure = 1,
    Config = 2,
    Io = 3,
    Diverged = 4,
}

fn status_of(e: &CoreError) -> Status {
    match e {
        CoreError::Io { .. } | CoreError::BadMagic | CoreError::VersionMismatch { .. } | CoreError::ShapeMismatchOnLoad { .. } | CoreError::BadImage(_) => Status::Io,
        CoreError::DivergedLoss { .. } | CoreError::Tensor(TensorError::NonFiniteResult { .. }) => Status::Diverged,
        _ => Status::Config,
    }
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Synth {
            common,
            task,
            count,
            seed,
            pristine_frac,
            image_size,
            identity_spec,
        } => {
            let mut cfg = resolve(&common)?;
            let s = &mut cfg.synth;
            if let Some(t) = task {
                s.task_mix = TaskMix::only(match t {
                    TaskArg::Edd => Task::Edd,
                    TaskArg::Idd => Task::Idd,
                    TaskArg::Cstd => Task::Cstd,
                });
            }
            s.count = count.unwrap_or(s.count);
            s.seed = seed.unwrap_or(s.seed);
            s.pristine_fraction = pristine_frac.unwrap_or(s.pristine_fraction);
            s.image_size = image_size.unwrap_or(s.image_size);
            s.identity_spec |= identity_spec;
            commands::synth(&cfg)
        }
        Command::Train {
            common,
            data,
            val,
            resume,
            epochs,
            lr,
            batch_size,
            seed,
            image_size,
            patch_size,
            embed_dim,
        } => {
            let mut cfg = resolve(&common)?;
            cfg.data = data.or(cfg.data);
            cfg.val_data = val.or(cfg.val_data);
            cfg.resume = resume.or(cfg.resume);
            let m = &mut cfg.model;
            m.epochs = epochs.unwrap_or(m.epochs);
            m.lr = lr.unwrap_or(m.lr);
            m.batch_size = batch_size.unwrap_or(m.batch_size);
            m.seed = seed.unwrap_or(m.seed);
            m.image_size = image_size.unwrap_or(m.image_size);
            m.patch_size = patch_size.unwrap_or(m.patch_size);
            m.embed_dim = embed_dim.unwrap_or(m.embed_dim);
            commands::train(&cfg, epochs)
        }
        Command::Eval {
            common,
            data,
            checkpoint,
            predictor,
            threshold,
            save_masks,
        } => {
            let mut cfg = resolve(&common)?;
            cfg.data = data.or(cfg.data);
            cfg.checkpoint = checkpoint.or(cfg.checkpoint);
            if let Some(p) = predictor {
                cfg.predictor = match p {
                    PredictorArg::Model => Predictor::Model,
                    PredictorArg::Gt => Predictor::Gt,
                    PredictorArg::Zeros => Predictor::Zeros,
                };
            }
            cfg.threshold = threshold.unwrap_or(cfg.threshold);
            cfg.save_masks |= save_masks;
            commands::eval(&cfg)
        }
        Command::Infer {
            common,
            checkpoint,
            img1,
            img2,
            dump_affinity,
            split,
        } => {
            let mut cfg = resolve(&common)?;
            cfg.checkpoint = checkpoint.or(cfg.checkpoint);
            cfg.dump_affinity |= dump_affinity;
            if let Some(s) = split {
                cfg.split_axis = match s {
                    SplitArg::Vertical => SplitAxis::Vertical,
                    SplitArg::Horizontal => SplitAxis::Horizontal,
                };
            }
            commands::infer(&cfg, &img1, img2.as_deref())
        }
        Command::Verify { common, seeds, seed, sabotage } => {
            let mut cfg = resolve(&common)?;
            cfg.verify.seeds = seeds.unwrap_or(cfg.verify.seeds);
            cfg.verify.seed = seed.unwrap_or(cfg.verify.seed);
            if let Some(SabotageArg::RopeNorm) = sabotage {
                cfg.verify.sabotage = Some(Sabotage::RopeNorm);
            }
            commands::verify(&cfg)
        }
        Command::Perturb {
            common,
            data,
            checkpoint,
            kind,
            levels,
            seed,
        } => {
            let mut cfg = resolve(&common)?;
            cfg.data = data.or(cfg.data);
            cfg.checkpoint = checkpoint.or(cfg.checkpoint);
            cfg.seed = seed.unwrap_or(cfg.seed);
            if let Some(k) = kind {
                cfg.sweep = levels.iter().map(|&l| k.at(l)).collect::<Result<_>>()?;
            }
            commands::perturb(&cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let status = run(cli).unwrap_or_else(|e| {
        log::error!("{e}");
        status_of(&e)
    });
    ExitCode::from(status as u8)
}
