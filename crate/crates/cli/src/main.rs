use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dett_cli::commands::{self, RunRequest, Source};
use dett_cli::gradcheck::{self, Fault};
use dett_cli::spec::Method;
use dett_cli::{compare, runner, CliError, Result};

#[derive(Parser)]
#[command(name = "dett", version, about = "Debiased distillation experiments on synthetic spurious-correlation data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SourceArgs {
    /// Named preset (table1, appendixD, ablation, lambda, smoke).
    #[arg(long)]
    preset: Option<String>,
    /// `key = value` file applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use this seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
}

impl SourceArgs {
    fn source(&self) -> Source {
        Source {
            preset: self.preset.clone(),
            config: self.config.clone(),
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct HyperArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda_up: Option<f64>,
    #[arg(long)]
    eta_q: Option<f64>,
    /// Directory written by `gen`; data is regenerated from the config otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/val/test/pool DETT-DATA files.
    Gen {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// One label-supervised run (erm, jtt, group_dro).
    Train {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        method: Method,
        /// Use the teacher architecture and schedule.
        #[arg(long)]
        teacher_role: bool,
        #[command(flatten)]
        hyper: HyperArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// One distillation run (kd, kd_up, simkd, dett, dett_ood).
    Distill {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        teacher: PathBuf,
        #[command(flatten)]
        hyper: HyperArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a DETT-DATA file and print metrics JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "checkpoint")]
        method: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full sweep: every method, grid cell and seed.
    Experiment {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate an experiment directory into compare.csv and compare.txt.
    Compare {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write `y,a,group,features...` CSV for a checkpoint and dataset.
    ExportFeatures {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of all three losses on random small models.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_ce_sign_flip: bool,
    },
}

fn single(
    source: &SourceArgs,
    method: Method,
    teacher: Option<PathBuf>,
    teacher_role: bool,
    hyper: &HyperArgs,
    out: &std::path::Path,
) -> Result<()> {
    let source = source.source();
    let spec = source.spec()?;
    let cell = commands::cell_for(&spec, method, hyper.alpha, hyper.lambda_up, hyper.eta_q);
    let req = RunRequest {
        source,
        cell,
        teacher_role,
        teacher,
        data: hyper.data.clone(),
    };
    let r = commands::single_run(&req, out)?;
    println!(
        "{} epoch {}: test avg {:.4} worst {:.4} -> {}",
        method.name(),
        r.epoch,
        r.test.average_accuracy,
        r.test.worst_group_accuracy,
        out.display()
    );
    Ok(())
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen { source, out } => {
            for p in commands::gen(&source.source(), &out)? {
                println!("{}", p.display());
            }
        }
        Command::Train {
            source,
            method,
            teacher_role,
            hyper,
            out,
        } => {
            if method.needs_teacher() {
                return Err(CliError::Usage(format!("`{}` is a distillation method; use `dett distill`", method.name())));
            }
            single(&source, method, None, teacher_role, &hyper, &out)?;
        }
        Command::Distill {
            source,
            method,
            teacher,
            hyper,
            out,
        } => {
            if !method.needs_teacher() {
                return Err(CliError::Usage(format!("`{}` is not a distillation method; use `dett train`", method.name())));
            }
            single(&source, method, Some(teacher), false, &hyper, &out)?;
        }
        Command::Eval {
            checkpoint,
            data,
            method,
            seed,
            out,
        } => {
            let json = serde_json::to_string_pretty(&commands::eval(&checkpoint, &data, &method, seed)?)? + "\n";
            if let Some(path) = out {
                dett_core::io::write_atomic(&path, json.as_bytes())?;
            }
            print!("{json}");
        }
        Command::Experiment { source, jobs, out } => {
            let spec = source.source().spec()?;
            let summary = runner::run(&spec, &out, jobs)?;
            println!(
                "{}: {} teachers trained, {} cells trained, {} cached, {} failed",
                summary.name,
                summary.teachers_trained,
                summary.cells_trained,
                summary.cells_cached,
                summary.failures().len()
            );
            for f in summary.failures() {
                eprintln!("failed {} seed {}: {}", f.id, f.seed, f.error.as_deref().unwrap_or(""));
            }
            let cmp = compare::compare(&out)?;
            print!("{}", cmp.text);
            if !summary.failures().is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Compare { out } => print!("{}", compare::compare(&out)?.text),
        Command::ExportFeatures { checkpoint, data, out } => commands::export_features(&checkpoint, &data, &out)?,
        Command::Gradcheck {
            seed,
            inject_ce_sign_flip,
        } => {
            let fault = if inject_ce_sign_flip {
                Fault::FlipCrossEntropySign
            } else {
                Fault::None
            };
            let reports = gradcheck::run(seed, fault)?;
            for r in &reports {
                println!("{r}");
            }
            if reports.iter().any(|r| !r.passed) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
