//! `ipacp` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ipacp::phantom::{Dataset, DatasetPlan, Profile};
use ipacp::train::ablate::{ablate, Axis};
use ipacp::train::eval::evaluate;
use ipacp::train::{train, Checkpoint, Inference, TrainConfig, Which};
use ipacp::volume::Dims;
use ipacp::Error;

#[derive(Parser)]
#[command(name = "ipacp", version, about = "Semi-supervised tumour segmentation on synthetic phantoms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom dataset with a train/test split.
    GenData {
        #[arg(long, default_value = "small")]
        profile: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        n_train: usize,
        #[arg(long, default_value_t = 20)]
        n_test: usize,
        #[arg(long, default_value_t = 0)]
        n_validation: usize,
        #[arg(long, default_value_t = 0.1)]
        labeled_ratio: f64,
    },
    /// Train from a config file; writes the log and checkpoint to its `out` directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Resume from this checkpoint instead of the config's `resume` key.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop at this iteration, keeping the full learning-rate schedule.
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "student")]
        model: String,
        /// Sliding-window edge; whole-volume inference when absent.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        /// Report path stem; `.json` and `.csv` are appended.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one axis (tau, holes, pseudo_mode, loss_mode, component_flags).
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: String,
        /// Table path stem; defaults to `<out>/ablate_<axis>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::InvalidParameter(_) | Error::InvalidRange { .. } => 2,
        Error::NumericFailure(_) | Error::NonFinite(_) => 4,
        _ => 3,
    }
}

fn load_data(root: &Path) -> ipacp::Result<Dataset> {
    if !root.exists() {
        return Err(Error::MissingData(format!("dataset {} not found", root.display())));
    }
    Dataset::load(root)
}

fn write(path: &Path, text: &str) -> ipacp::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn run(cli: Cli) -> ipacp::Result<()> {
    match cli.command {
        Command::GenData {
            profile,
            out,
            seed,
            n_train,
            n_test,
            n_validation,
            labeled_ratio,
        } => {
            let profile: Profile = profile.parse()?;
            let plan = DatasetPlan {
                n_train,
                n_test,
                n_validation,
                labeled_ratio,
                ..DatasetPlan::for_profile(profile, seed)
            };
            let data = plan.generate()?;
            data.save(&out)?;
            println!(
                "wrote {} cases to {} ({} labeled, {} unlabeled, {} validation, {} test)",
                data.images.len(),
                out.display(),
                data.split.labeled.len(),
                data.split.unlabeled.len(),
                data.split.validation.len(),
                data.split.test.len()
            );
        }
        Command::Train {
            config,
            resume,
            stop_after,
        } => {
            let mut cfg = TrainConfig::from_file(&config)?;
            if resume.is_some() {
                cfg.resume = resume;
            }
            if stop_after.is_some() {
                cfg.stop_after = stop_after;
            }
            cfg.validate()?;
            let data = load_data(&cfg.data)?;
            let outcome = train(&cfg, &data)?;
            if let Some(last) = outcome.rows.last() {
                println!(
                    "iteration {} lr {} loss l2u {} u2l {}",
                    last.iter, last.lr, last.loss_l2u, last.loss_u2l
                );
            }
            println!("checkpoint {}", cfg.checkpoint_path().display());
        }
        Command::Eval {
            ckpt,
            data,
            split,
            model,
            window,
            stride,
            out,
        } => {
            let which: Which = model.parse()?;
            let inference = match window {
                None => Inference::Whole,
                Some(w) => Inference::Sliding {
                    window: Dims::cube(w),
                    stride: Dims::cube(stride.unwrap_or(w)),
                },
            };
            let ck = Checkpoint::load(&ckpt)?;
            let data = load_data(&data)?;
            let report = evaluate(&ck, &data, &split, which, inference)?;
            match out {
                Some(stem) => report.save(&stem)?,
                None => print!("{}", report.to_csv()),
            }
            println!(
                "dice {:.2} ({:.2}) jaccard {:.2} ({:.2}) hd95 {:.2} asd {:.2} over {} cases",
                report.dice.mean,
                report.dice.std,
                report.jaccard.mean,
                report.jaccard.std,
                report.hd95.mean,
                report.asd.mean,
                report.cases.len()
            );
        }
        Command::Ablate { config, axis, out } => {
            let cfg = TrainConfig::from_file(&config)?;
            let axis: Axis = axis.parse()?;
            let data = load_data(&cfg.data)?;
            let table = ablate(&cfg, &data, axis)?;
            let stem = out.unwrap_or_else(|| cfg.out.join(format!("ablate_{}", axis.name())));
            write(&stem.with_extension("csv"), &table.to_csv())?;
            write(&stem.with_extension("json"), &table.to_json()?)?;
            print!("{}", table.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
