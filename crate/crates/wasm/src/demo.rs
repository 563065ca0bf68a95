use serde::{Deserialize, Serialize};

use dett_core::datagen::{generate, Splits, SyntheticConfig};
use dett_core::debias::{train_erm, train_group_dro, Checkpoint, TrainConfig};
use dett_core::distill::{run_dett, run_simkd, train_kd, DEFAULT_TAU};
use dett_core::eval::{evaluate, select_best, GroupMetrics};
use dett_core::nncore::{Mlp, MlpArch};

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error(transparent)]
    Core(#[from] dett_core::Error),
    #[error("{0}")]
    Params(String),
}

/// Demo inputs; every field is optional in the JSON.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct Params {
    pub seed: u64,
    pub n_train: usize,
    pub bias_rho: f64,
    pub mu_core: f64,
    pub mu_spurious: f64,
    /// Probability of class 1 in the training split.
    pub minority_class_prior: f64,
    pub lambda_up: f64,
    pub lambdas: Vec<f64>,
    /// Cap on scatter points returned.
    pub max_points: usize,
}

impl Default for Params {
    fn default() -> Self {
        let d = SyntheticConfig::default();
        Self {
            seed: 1,
            n_train: 2000,
            bias_rho: d.bias_rho,
            mu_core: d.mu_core,
            mu_spurious: d.mu_spurious,
            minority_class_prior: 0.1,
            lambda_up: 20.0,
            lambdas: vec![1.0, 5.0, 20.0, 50.0],
            max_points: 800,
        }
    }
}

impl Params {
    fn data_config(&self) -> Result<SyntheticConfig, DemoError> {
        if !(0.0..1.0).contains(&self.minority_class_prior) || self.minority_class_prior == 0.0 {
            return Err(DemoError::Params("minority_class_prior must lie in (0, 1)".into()));
        }
        if self.n_train < 100 || self.n_train > 20_000 {
            return Err(DemoError::Params("n_train must lie in [100, 20000]".into()));
        }
        Ok(SyntheticConfig {
            n_train: self.n_train,
            n_val: 200,
            n_test: 1000,
            bias_rho: self.bias_rho,
            mu_core: self.mu_core,
            mu_spurious: self.mu_spurious,
            class_prior: Some(vec![1.0 - self.minority_class_prior, self.minority_class_prior]),
            seed: self.seed,
            ..SyntheticConfig::default()
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Point {
    pub core: f64,
    pub spurious: f64,
    pub y: usize,
    pub a: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Scatter {
    pub points: Vec<Point>,
    /// Training-split count per group `y * 2 + a`.
    pub group_counts: Vec<usize>,
}

pub fn scatter(p: &Params) -> Result<Scatter, DemoError> {
    let cfg = p.data_config()?;
    let train = generate(&cfg)?.train;
    let mean = |row: &[f64], lo: usize, hi: usize| row[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
    let step = train.len().div_ceil(p.max_points.max(1));
    let points = (0..train.len())
        .step_by(step)
        .map(|i| {
            let row = train.x().row(i);
            Point {
                core: mean(row, 0, cfg.d_core),
                spurious: mean(row, cfg.d_core, cfg.d_core + cfg.d_spurious),
                y: train.raw_labels()[i],
                a: train.attrs()[i],
            }
        })
        .collect();
    Ok(Scatter {
        points,
        group_counts: dett_core::datagen::group_counts(&train).counts,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodResult {
    pub method: String,
    pub avg: f64,
    pub worst: f64,
    pub groups: Vec<Option<f64>>,
}

fn result(method: &str, m: &GroupMetrics) -> MethodResult {
    MethodResult {
        method: method.to_string(),
        avg: m.average_accuracy,
        worst: m.worst_group_accuracy,
        groups: m.groups.iter().map(|g| g.accuracy()).collect(),
    }
}

struct Setup {
    splits: Splits,
    student: MlpArch,
    train: TrainConfig,
    feature: TrainConfig,
    teacher: Mlp,
    teacher_test: GroupMetrics,
}

fn pick(history: &[Checkpoint], s: &Splits) -> Result<GroupMetrics, DemoError> {
    let (i, _) = select_best(history, &s.val)?;
    Ok(evaluate(&history[i].model, &s.test)?)
}

fn setup(p: &Params) -> Result<Setup, DemoError> {
    let splits = generate(&p.data_config()?)?;
    let d = splits.train.d();
    let train = TrainConfig {
        epochs: 5,
        learning_rate: 0.03,
        eval_every: 1,
        seed: p.seed,
        ..TrainConfig::default()
    };
    let teacher_cfg = TrainConfig {
        epochs: 30,
        eval_every: 5,
        ..train.clone()
    };
    let dro = train_group_dro(&MlpArch::new(d, vec![32, 32], 2), &splits.train, &teacher_cfg, 0.1)?;
    let (i, _) = select_best(&dro.history, &splits.val)?;
    let teacher = dro.history[i].model.clone();
    Ok(Setup {
        teacher_test: evaluate(&teacher, &splits.test)?,
        teacher,
        student: MlpArch::new(d, vec![8], 2),
        feature: TrainConfig {
            learning_rate: 0.0005,
            ..train.clone()
        },
        train,
        splits,
    })
}

pub fn compare_methods(p: &Params) -> Result<Vec<MethodResult>, DemoError> {
    let s = setup(p)?;
    let train = &s.splits.train;
    let id = s.train.identification();
    Ok(vec![
        result("teacher (group DRO)", &s.teacher_test),
        result("ERM", &pick(&train_erm(&s.student, train, &s.train)?.history, &s.splits)?),
        result(
            "KD (alpha 0.5)",
            &pick(&train_kd(&s.student, &s.teacher, train, 0.5, DEFAULT_TAU, &s.train)?.history, &s.splits)?,
        ),
        result("SimKD", &pick(&run_simkd(&s.teacher, &s.student, train, &s.feature)?.history, &s.splits)?),
        result(
            &format!("DeTT (lambda {})", p.lambda_up),
            &pick(&run_dett(&s.teacher, &s.student, train, p.lambda_up, &s.feature, &id)?.history, &s.splits)?,
        ),
    ])
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub lambda_up: f64,
    pub avg: f64,
    pub worst: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Sweep {
    pub teacher_worst: f64,
    pub points: Vec<SweepPoint>,
}

pub fn lambda_sweep(p: &Params) -> Result<Sweep, DemoError> {
    if p.lambdas.is_empty() || p.lambdas.iter().any(|l| l.is_nan() || *l < 1.0) {
        return Err(DemoError::Params("lambdas must be a nonempty list of values >= 1".into()));
    }
    let s = setup(p)?;
    let id = s.train.identification();
    let points = p
        .lambdas
        .iter()
        .map(|&l| {
            let out = run_dett(&s.teacher, &s.student, &s.splits.train, l, &s.feature, &id)?;
            let m = pick(&out.history, &s.splits)?;
            Ok(SweepPoint {
                lambda_up: l,
                avg: m.average_accuracy,
                worst: m.worst_group_accuracy,
            })
        })
        .collect::<Result<_, DemoError>>()?;
    Ok(Sweep {
        teacher_worst: s.teacher_test.worst_group_accuracy,
        points,
    })
}
