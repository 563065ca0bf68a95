//! Sweep orchestration: data and teacher per seed, then every grid cell.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;

use dett_core::datagen::{generate, make_unlabeled_pool, Dataset, Splits};
use dett_core::debias::{train_group_dro, train_jtt, Checkpoint};
use dett_core::distill::{run_dett, run_kd_upweighted, run_ood_distill, run_simkd, train_kd};
use dett_core::eval::{evaluate, select_best, GroupMetrics};
use dett_core::io::write_atomic;
use dett_core::nncore::{checkpoint_to_string, load_checkpoint, Mlp};

use crate::error::{CliError, Result};
use crate::record::ResultRecord;
use crate::spec::{CellSpec, ExperimentSpec, Method, TeacherMethod};

pub const SPLITS: [&str; 2] = ["val", "test"];

/// Calls `f` on every item using up to `jobs` worker threads; results keep
/// item order.
pub fn parallel_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new(items.iter().map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().expect("no worker panicked while holding the lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

pub fn record_path(out: &Path, cell_id: &str, seed: u64, split: &str) -> PathBuf {
    out.join("records").join(format!("{cell_id}_seed-{seed}_{split}.json"))
}

fn teacher_path(out: &Path, seed: u64) -> PathBuf {
    out.join("teachers").join(format!("seed-{seed}.ckpt"))
}

pub const TEACHER_ID: &str = "teacher";

fn cell_done(out: &Path, cell_id: &str, seed: u64) -> bool {
    SPLITS.iter().all(|s| record_path(out, cell_id, seed, s).exists())
}

#[derive(Debug, Clone, Serialize)]
pub struct CellStatus {
    pub id: String,
    pub seed: u64,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub teachers_trained: usize,
    pub cells_trained: usize,
    pub cells_cached: usize,
    pub cells: Vec<CellStatus>,
}

impl RunSummary {
    pub fn failures(&self) -> Vec<&CellStatus> {
        self.cells.iter().filter(|c| c.status == "failed").collect()
    }
}

struct SeedContext {
    seed: u64,
    splits: Splits,
    pool: Dataset,
    teacher: std::result::Result<Mlp, String>,
    teacher_trained: bool,
}

/// Outcome of one training run after checkpoint selection.
pub struct Selected {
    pub model: Mlp,
    pub epoch: usize,
    pub val: GroupMetrics,
    pub test: GroupMetrics,
}

pub fn select(history: &[Checkpoint], splits: &Splits) -> dett_core::Result<Selected> {
    let (idx, val) = select_best(history, &splits.val)?;
    let chosen = &history[idx];
    Ok(Selected {
        test: evaluate(&chosen.model, &splits.test)?,
        model: chosen.model.clone(),
        epoch: chosen.epoch,
        val,
    })
}

fn write_records(
    out: &Path,
    id: &str,
    method: &str,
    hyperparams: &BTreeMap<String, f64>,
    seed: u64,
    sel: &Selected,
    wall_time: f64,
) -> Result<()> {
    write_atomic(
        &out.join("checkpoints").join(format!("{id}_seed-{seed}.ckpt")),
        checkpoint_to_string(&sel.model).as_bytes(),
    )?;
    for (split, metrics) in [("val", &sel.val), ("test", &sel.test)] {
        let rec = ResultRecord::new(method, hyperparams, seed, split, sel.epoch, metrics, wall_time);
        write_atomic(&record_path(out, id, seed, split), rec.to_json()?.as_bytes())?;
    }
    Ok(())
}

/// Trains the teacher for one seed and returns the selected checkpoint.
pub fn train_teacher(spec: &ExperimentSpec, splits: &Splits, seed: u64) -> dett_core::Result<Selected> {
    let arch = spec.teacher.arch(splits.train.d(), splits.train.n_classes());
    let cfg = spec.teacher.train_for_seed(seed);
    let history = match spec.teacher_method {
        TeacherMethod::GroupDro => train_group_dro(&arch, &splits.train, &cfg, spec.teacher_eta_q)?.history,
        TeacherMethod::Jtt => {
            let id = cfg.identification();
            let lambda = spec.effective_lambda(spec.teacher_lambda_up);
            train_jtt(&arch, &splits.train, &cfg, &id, lambda)?.history
        }
    };
    select(&history, splits)
}

fn prepare_seed(spec: &ExperimentSpec, out: &Path, seed: u64) -> Result<SeedContext> {
    let data_cfg = dett_core::datagen::SyntheticConfig {
        seed,
        ..spec.data.clone()
    };
    let splits = generate(&data_cfg)?;
    let pool_cfg = dett_core::datagen::SyntheticConfig {
        n_train: spec.n_pool,
        ..data_cfg.clone()
    };
    let pool = make_unlabeled_pool(&pool_cfg, seed)?;
    let path = teacher_path(out, seed);
    let mut trained = false;
    let teacher = if path.exists() && cell_done(out, TEACHER_ID, seed) {
        load_checkpoint(&path).map_err(|e| e.to_string())
    } else {
        let start = Instant::now();
        let result = train_teacher(spec, &splits, seed).map_err(|e| e.to_string());
        if let Ok(sel) = &result {
            let mut hp = BTreeMap::new();
            if spec.teacher_method == TeacherMethod::GroupDro {
                hp.insert("eta_q".to_string(), spec.teacher_eta_q);
            } else {
                hp.insert("lambda_up".to_string(), spec.teacher_lambda_up);
            }
            write_atomic(&path, checkpoint_to_string(&sel.model).as_bytes())?;
            let method = format!("teacher_{}", spec.teacher_method.name());
            write_records(out, TEACHER_ID, &method, &hp, seed, sel, start.elapsed().as_secs_f64())?;
            trained = true;
        }
        result.map(|s| s.model)
    };
    Ok(SeedContext {
        seed,
        splits,
        pool,
        teacher,
        teacher_trained: trained,
    })
}

/// Trains one cell and returns its selected checkpoint.
pub fn train_cell(
    spec: &ExperimentSpec,
    cell: &CellSpec,
    splits: &Splits,
    pool: &Dataset,
    teacher: Option<&Mlp>,
    seed: u64,
) -> dett_core::Result<Selected> {
    select(&train_history(spec, cell, &splits.train, pool, teacher, seed)?, splits)
}

/// Trains one cell and returns every recorded checkpoint.
pub fn train_history(
    spec: &ExperimentSpec,
    cell: &CellSpec,
    train: &Dataset,
    pool: &Dataset,
    teacher: Option<&Mlp>,
    seed: u64,
) -> dett_core::Result<Vec<Checkpoint>> {
    let student = spec.student.arch(train.d(), train.n_classes());
    let baseline = match teacher {
        Some(t) if spec.attach_projector_to_baselines => student.clone().with_projector(t.d_feat()),
        _ => student.clone(),
    };
    let cfg = spec.student_train(seed);
    let fcfg = spec.feature_train(seed);
    let id = spec.id_train(seed);
    let need_teacher = || teacher.ok_or_else(|| dett_core::Error::InvalidConfig("teacher unavailable".into()));
    let history = match cell.method {
        Method::Erm => dett_core::debias::train_erm(&baseline, train, &cfg)?.history,
        Method::Jtt => {
            let lambda = spec.effective_lambda(cell.param("lambda_up"));
            train_jtt(&baseline, train, &cfg, &id, lambda)?.history
        }
        Method::GroupDro => train_group_dro(&baseline, train, &cfg, cell.param("eta_q"))?.history,
        Method::Kd => train_kd(&baseline, need_teacher()?, train, cell.param("alpha"), spec.tau, &cfg)?.history,
        Method::KdUp => {
            let lambda = spec.effective_lambda(cell.param("lambda_up"));
            run_kd_upweighted(need_teacher()?, &baseline, train, cell.param("alpha"), spec.tau, lambda, &cfg, &id)?
                .history
        }
        Method::Simkd => run_simkd(need_teacher()?, &student, train, &fcfg)?.history,
        Method::Dett => {
            let lambda = spec.effective_lambda(cell.param("lambda_up"));
            run_dett(need_teacher()?, &student, train, lambda, &fcfg, &id)?.history
        }
        Method::DettOod => run_ood_distill(need_teacher()?, &student, pool, &fcfg)?.history,
    };
    Ok(history)
}

/// Everything that shapes a cell's result apart from its own method and
/// hyperparameters. Runs that differ only in method lists, grids or seeds
/// may share a directory.
pub fn settings_fingerprint(spec: &ExperimentSpec) -> String {
    format!(
        "{:#?}\n",
        (
            &spec.data,
            spec.n_pool,
            spec.teacher_method,
            &spec.teacher,
            spec.teacher_eta_q,
            spec.teacher_lambda_up,
            &spec.student,
            spec.feature_learning_rate,
            spec.id_epochs,
            spec.tau,
            spec.attach_projector_to_baselines,
            spec.upweight,
        )
    )
}

fn claim_directory(spec: &ExperimentSpec, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out.join("records"))?;
    let path = out.join("settings.txt");
    let fingerprint = settings_fingerprint(spec);
    match std::fs::read_to_string(&path) {
        Ok(existing) if existing != fingerprint => Err(CliError::Usage(format!(
            "{} holds results for different data or training settings; use a fresh --out",
            out.display()
        ))),
        Ok(_) => Ok(()),
        Err(_) => Ok(write_atomic(&path, fingerprint.as_bytes())?),
    }
}

/// Runs every (seed, cell) pair not already recorded under `out`.
pub fn run(spec: &ExperimentSpec, out: &Path, jobs: usize) -> Result<RunSummary> {
    claim_directory(spec, out)?;
    let cells = spec.cells();
    let pending_seeds: Vec<u64> = spec
        .seeds
        .iter()
        .copied()
        .filter(|&s| !cell_done(out, TEACHER_ID, s) || cells.iter().any(|c| !cell_done(out, &c.id(), s)))
        .collect();
    let contexts = parallel_map(jobs, &pending_seeds, |&seed| prepare_seed(spec, out, seed));
    let contexts: Vec<SeedContext> = contexts.into_iter().collect::<Result<_>>()?;

    let mut summary = RunSummary {
        name: spec.name.clone(),
        teachers_trained: contexts.iter().filter(|c| c.teacher_trained).count(),
        ..RunSummary::default()
    };
    let mut work = Vec::new();
    for &seed in &spec.seeds {
        for cell in &cells {
            if cell_done(out, &cell.id(), seed) {
                summary.cells_cached += 1;
                summary.cells.push(CellStatus {
                    id: cell.id(),
                    seed,
                    status: "cached",
                    error: None,
                });
            } else {
                let ctx = contexts.iter().find(|c| c.seed == seed).expect("pending seed was prepared");
                work.push((ctx, cell));
            }
        }
    }
    let results = parallel_map(jobs, &work, |(ctx, cell)| -> std::result::Result<(), String> {
        let start = Instant::now();
        let teacher = match (&ctx.teacher, cell.method.needs_teacher()) {
            (Err(e), true) => return Err(format!("teacher failed: {e}")),
            (Ok(t), _) => Some(t),
            (Err(_), false) => None,
        };
        let sel = train_cell(spec, cell, &ctx.splits, &ctx.pool, teacher, ctx.seed).map_err(|e| e.to_string())?;
        write_records(
            out,
            &cell.id(),
            cell.method.name(),
            &cell.hyperparams,
            ctx.seed,
            &sel,
            start.elapsed().as_secs_f64(),
        )
        .map_err(|e| e.to_string())
    });
    for ((ctx, cell), result) in work.iter().zip(results) {
        let (status, error) = match result {
            Ok(()) => {
                summary.cells_trained += 1;
                ("trained", None)
            }
            Err(e) => ("failed", Some(e)),
        };
        summary.cells.push(CellStatus {
            id: cell.id(),
            seed: ctx.seed,
            status,
            error,
        });
    }
    for ctx in &contexts {
        if let Err(e) = &ctx.teacher {
            summary.cells.push(CellStatus {
                id: TEACHER_ID.to_string(),
                seed: ctx.seed,
                status: "failed",
                error: Some(e.clone()),
            });
        }
    }
    let manifest = serde_json::to_string_pretty(&summary)? + "\n";
    write_atomic(&out.join("manifest.json"), manifest.as_bytes())?;
    Ok(summary)
}
