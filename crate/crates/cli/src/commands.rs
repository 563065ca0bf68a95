//! Single-run commands: data generation, one training or distillation run,
//! evaluation of a checkpoint and feature export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dett_core::datagen::{generate, load_dataset, make_unlabeled_pool, save_dataset, Dataset, Splits, SyntheticConfig};
use dett_core::debias::Checkpoint;
use dett_core::eval::{evaluate, GroupMetrics};
use dett_core::io::write_atomic;
use dett_core::nncore::{load_checkpoint, save_checkpoint, Mlp};

use crate::error::{CliError, Result};
use crate::record::MetricsJson;
use crate::runner::{select, train_history};
use crate::spec::{CellSpec, ExperimentSpec, Method};

/// Where the config comes from and which seed to use.
#[derive(Debug, Clone, Default)]
pub struct Source {
    pub preset: Option<String>,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Source {
    pub fn spec(&self) -> Result<ExperimentSpec> {
        let overrides = self.config.as_deref().map(crate::error::read_file).transpose()?;
        let mut spec = ExperimentSpec::load(self.preset.as_deref(), overrides.as_deref())?;
        if let Some(seed) = self.seed {
            spec.seeds = vec![seed];
        }
        Ok(spec)
    }
}

pub const DATA_FILES: [&str; 4] = ["train.dett", "val.dett", "test.dett", "pool.dett"];

fn data_config(spec: &ExperimentSpec, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        seed,
        ..spec.data.clone()
    }
}

fn generate_all(spec: &ExperimentSpec, seed: u64) -> Result<(Splits, Dataset)> {
    let cfg = data_config(spec, seed);
    let splits = generate(&cfg)?;
    let pool = make_unlabeled_pool(
        &SyntheticConfig {
            n_train: spec.n_pool,
            ..cfg
        },
        seed,
    )?;
    Ok((splits, pool))
}

/// Writes the four DETT-DATA files for the first configured seed.
pub fn gen(source: &Source, out: &Path) -> Result<Vec<PathBuf>> {
    let spec = source.spec()?;
    let (splits, pool) = generate_all(&spec, spec.seeds[0])?;
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for (name, data) in DATA_FILES.iter().zip([&splits.train, &splits.val, &splits.test, &pool]) {
        let path = out.join(name);
        save_dataset(data, &path)?;
        written.push(path);
    }
    Ok(written)
}

fn load_data(dir: &Path) -> Result<(Splits, Dataset)> {
    let load = |name: &str| load_dataset(&dir.join(name)).map_err(CliError::from);
    Ok((
        Splits {
            train: load(DATA_FILES[0])?,
            val: load(DATA_FILES[1])?,
            test: load(DATA_FILES[2])?,
        },
        load(DATA_FILES[3])?,
    ))
}

/// Training curve: one row per recorded checkpoint and split.
pub fn curve_csv(history: &[Checkpoint], splits: &Splits) -> Result<String> {
    let mut out = String::from("epoch,split,avg_acc,worst_acc");
    let groups = &evaluate(&history[0].model, &splits.val)?.groups;
    for g in groups {
        let _ = write!(out, ",acc_y{}_a{}", g.y, g.a);
    }
    out.push('\n');
    for ck in history {
        for (name, data) in [("val", &splits.val), ("test", &splits.test)] {
            let m = evaluate(&ck.model, data)?;
            let _ = write!(out, "{},{name},{},{}", ck.epoch, m.average_accuracy, m.worst_group_accuracy);
            for g in &m.groups {
                match g.accuracy() {
                    Some(a) => {
                        let _ = write!(out, ",{a}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RunRequest {
    pub source: Source,
    pub cell: CellSpec,
    /// Train with the teacher's architecture and optimizer settings.
    pub teacher_role: bool,
    pub teacher: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

pub struct RunResult {
    pub model: Mlp,
    pub epoch: usize,
    pub test: GroupMetrics,
}

/// One training or distillation run. Writes `model.ckpt`, `metrics.json`
/// (test split, selected checkpoint) and `curve.csv` into `out`.
pub fn single_run(req: &RunRequest, out: &Path) -> Result<RunResult> {
    let mut spec = req.source.spec()?;
    let seed = spec.seeds[0];
    if req.teacher_role {
        spec.student = spec.teacher.clone();
    }
    let (splits, pool) = match &req.data {
        Some(dir) => load_data(dir)?,
        None => generate_all(&spec, seed)?,
    };
    let teacher = req.teacher.as_deref().map(load_checkpoint).transpose()?;
    if req.cell.method.needs_teacher() && teacher.is_none() {
        return Err(CliError::Usage(format!("`{}` needs --teacher <checkpoint>", req.cell.method.name())));
    }
    let history = train_history(&spec, &req.cell, &splits.train, &pool, teacher.as_ref(), seed)?;
    let sel = select(&history, &splits)?;
    std::fs::create_dir_all(out)?;
    save_checkpoint(&sel.model, &out.join("model.ckpt"))?;
    let metrics = MetricsJson::new(req.cell.method.name(), seed, req.cell.hyperparams.clone(), &sel.test);
    write_atomic(&out.join("metrics.json"), (serde_json::to_string_pretty(&metrics)? + "\n").as_bytes())?;
    write_atomic(&out.join("curve.csv"), curve_csv(&history, &splits)?.as_bytes())?;
    Ok(RunResult {
        model: sel.model,
        epoch: sel.epoch,
        test: sel.test,
    })
}

/// Cell for a method with explicit hyperparameters, falling back to the
/// first grid value of the loaded spec.
pub fn cell_for(spec: &ExperimentSpec, method: Method, alpha: Option<f64>, lambda_up: Option<f64>, eta_q: Option<f64>) -> CellSpec {
    let alpha = alpha.unwrap_or(spec.grids.alpha[0]);
    let lambda = lambda_up.unwrap_or(spec.grids.lambda_up[0]);
    match method {
        Method::Erm | Method::Simkd | Method::DettOod => CellSpec::new(method, &[]),
        Method::Jtt => CellSpec::new(method, &[("lambda_up", lambda_up.unwrap_or(spec.grids.jtt_lambda_up[0]))]),
        Method::GroupDro => CellSpec::new(method, &[("eta_q", eta_q.unwrap_or(spec.grids.eta_q[0]))]),
        Method::Kd => CellSpec::new(method, &[("alpha", alpha)]),
        Method::KdUp => CellSpec::new(method, &[("alpha", alpha), ("lambda_up", lambda)]),
        Method::Dett => CellSpec::new(method, &[("lambda_up", lambda)]),
    }
}

/// Metrics JSON for a checkpoint on a labeled dataset file.
pub fn eval(checkpoint: &Path, data: &Path, method: &str, seed: u64) -> Result<MetricsJson> {
    let model = load_checkpoint(checkpoint)?;
    let dataset = load_dataset(data)?;
    let metrics = evaluate(&model, &dataset)?;
    Ok(MetricsJson::new(method, seed, Default::default(), &metrics))
}

pub fn export_features(checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let dataset = load_dataset(data)?;
    write_atomic(out, crate::export::features_csv(&model, &dataset)?.as_bytes())?;
    Ok(())
}
