//! Distillation pipelines: vanilla KD, last-layer transplanting, feature-map
//! distillation (uniform weights: SimKD; upweighted: DeTT), and
//! distillation on an unlabeled pool.

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::debias::{
    build_upweighted, ce_batch, fit, identification_model, identify_errors, Checkpoint, ErrorSet, TrainConfig,
    TrainOutcome,
};
use crate::error::{Error, Result};
use crate::nncore::{
    ce_loss_grad, kl_distill_loss_grad_weighted, mse_feature_loss_grad_weighted, Gradients, Linear, LossGrad, Matrix,
    Mlp, MlpArch, Upstream,
};
use crate::rng::{self, Stream};

pub const DEFAULT_TAU: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMethod {
    Kd,
    Simkd,
    Dett,
    DettOod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub method: DistillMethod,
    /// Weight of the KL term; KD only.
    pub alpha: f64,
    pub tau: f64,
    /// Upweighting factor; DeTT (and KD with upweighting) only.
    pub lambda_up: f64,
    pub train: TrainConfig,
    /// Give non-transplant students a trainable projector and a
    /// teacher-sized head.
    pub attach_projector_to_baselines: bool,
}

impl DistillConfig {
    pub fn new(method: DistillMethod, train: TrainConfig) -> Self {
        Self {
            method,
            alpha: 0.5,
            tau: DEFAULT_TAU,
            lambda_up: 50.0,
            train,
            attach_projector_to_baselines: false,
        }
    }
}

/// A student whose head is the teacher's classifier, frozen, optionally
/// behind a trainable projector.
#[derive(Debug, Clone, PartialEq)]
pub struct TransplantedStudent {
    model: Mlp,
}

impl TransplantedStudent {
    pub fn model(&self) -> &Mlp {
        &self.model
    }

    pub fn into_model(self) -> Mlp {
        self.model
    }

    pub fn has_projector(&self) -> bool {
        self.model.projector().is_some()
    }

    /// Wraps a model whose head is frozen; fails otherwise.
    pub fn from_model(model: Mlp) -> Result<Self> {
        if !model.head().frozen {
            return Err(Error::config("a transplanted student must have a frozen head"));
        }
        Ok(Self { model })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillOutcome {
    pub student: TransplantedStudent,
    pub history: Vec<Checkpoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DettOutcome {
    pub student: TransplantedStudent,
    pub history: Vec<Checkpoint>,
    pub errors: ErrorSet,
    pub distill_data: Dataset,
}

fn check_teacher(teacher: &Mlp, arch: &MlpArch, data: &Dataset) -> Result<()> {
    if teacher.n_classes() != arch.n_classes {
        return Err(Error::shape("teacher/student class count", teacher.n_classes(), arch.n_classes));
    }
    if teacher.d_in() != data.d() || arch.d_in != data.d() {
        return Err(Error::shape(
            "distillation input dimension",
            data.d(),
            format!("teacher {} / student {}", teacher.d_in(), arch.d_in),
        ));
    }
    Ok(())
}

/// Copies the teacher head into a fresh student, frozen. A projector
/// `d_S -> d_T` is inserted when the widths differ.
pub fn transplant_head(teacher: &Mlp, student_arch: &MlpArch, seed: u64) -> Result<TransplantedStudent> {
    if teacher.n_classes() != student_arch.n_classes {
        return Err(Error::shape("teacher/student class count", teacher.n_classes(), student_arch.n_classes));
    }
    let backbone = MlpArch {
        projector_dim: None,
        ..student_arch.clone()
    };
    let (features, _, _) = backbone.init(seed)?.into_parts();
    let d_s = backbone.backbone_dim();
    let d_t = teacher.d_feat();
    let projector = (d_s != d_t).then(|| {
        let mut prng = rng::stream(seed, Stream::Projector, 0);
        Linear::init_uniform(d_t, d_s, &mut prng)
    });
    let mut head = teacher.head().clone();
    head.frozen = true;
    Ok(TransplantedStudent {
        model: Mlp::new(features, projector, head)?,
    })
}

/// Weighted feature-map matching `||P(phi_S(x)) - phi_T(x)||^2`. Labels are
/// never read.
pub fn train_feature_distill(
    student: TransplantedStudent,
    teacher: &Mlp,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<DistillOutcome> {
    let mut model = student.model;
    if model.d_feat() != teacher.d_feat() {
        return Err(Error::shape("student/teacher feature width", teacher.d_feat(), model.d_feat()));
    }
    if model.d_in() != dataset.d() {
        return Err(Error::shape("student input dimension", dataset.d(), model.d_in()));
    }
    let targets = teacher.forward_features(dataset.x())?;
    let history = fit(&mut model, dataset.len(), cfg, |m, batch| {
        feature_batch(m, dataset, &targets, batch)
    })?;
    Ok(DistillOutcome {
        student: TransplantedStudent { model },
        history,
    })
}

fn feature_batch(model: &Mlp, data: &Dataset, targets: &Matrix, batch: &[usize]) -> Result<(f64, Gradients)> {
    let xb = data.x().select_rows(batch);
    let tb = targets.select_rows(batch);
    let wb: Vec<f64> = batch.iter().map(|&i| data.weights()[i]).collect();
    let trace = model.forward_trace(&xb)?;
    let lg = mse_feature_loss_grad_weighted(&tb, trace.features(), &wb)?;
    let grads = model.backward(&trace, &Upstream::Features(lg.grad))?;
    Ok((lg.loss, grads))
}

/// `(1 - alpha) * CE + alpha * tau^2 KL`, both weighted by `weights`.
/// Terms with a zero coefficient are skipped entirely, so `alpha == 1`
/// needs no labels.
pub fn kd_loss_grad(
    student_logits: &Matrix,
    teacher_logits: &Matrix,
    labels: Option<&[usize]>,
    weights: &[f64],
    alpha: f64,
    tau: f64,
) -> Result<LossGrad> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let ce = if alpha < 1.0 {
        let labels = labels.ok_or(Error::Unlabeled("knowledge distillation with alpha < 1"))?;
        Some(ce_loss_grad(student_logits, labels, weights)?)
    } else {
        None
    };
    let kl = if alpha > 0.0 {
        Some(kl_distill_loss_grad_weighted(teacher_logits, student_logits, tau, weights)?)
    } else {
        None
    };
    Ok(match (ce, kl) {
        (Some(ce), None) => ce,
        (None, Some(kl)) => kl,
        (Some(ce), Some(kl)) => {
            let mut grad = ce.grad;
            for (g, k) in grad.as_mut_slice().iter_mut().zip(kl.grad.as_slice()) {
                *g = (1.0 - alpha) * *g + alpha * k;
            }
            LossGrad {
                loss: (1.0 - alpha) * ce.loss + alpha * kl.loss,
                grad,
            }
        }
        (None, None) => unreachable!("alpha is in [0, 1]"),
    })
}

/// Vanilla KD: the full student (features and its own head) is trained;
/// the teacher only supplies logits.
pub fn train_kd(
    student_arch: &MlpArch,
    teacher: &Mlp,
    dataset: &Dataset,
    alpha: f64,
    tau: f64,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    check_teacher(teacher, student_arch, dataset)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let mut model = student_arch.init(cfg.seed)?;
    if alpha == 0.0 {
        // pure cross-entropy: identical to ERM
        let labels = dataset.labels("train_kd")?;
        let history = fit(&mut model, dataset.len(), cfg, |m, batch| ce_batch(m, dataset, labels, batch))?;
        return Ok(TrainOutcome { model, history });
    }
    let labels = if alpha < 1.0 {
        Some(dataset.labels("train_kd with alpha < 1")?)
    } else {
        None
    };
    let (_, teacher_logits) = teacher.forward_logits(dataset.x())?;
    let history = fit(&mut model, dataset.len(), cfg, |m, batch| {
        let xb = dataset.x().select_rows(batch);
        let tb = teacher_logits.select_rows(batch);
        let wb: Vec<f64> = batch.iter().map(|&i| dataset.weights()[i]).collect();
        let yb: Option<Vec<usize>> = labels.map(|l| batch.iter().map(|&i| l[i]).collect());
        let trace = m.forward_trace(&xb)?;
        let lg = kd_loss_grad(trace.logits(), &tb, yb.as_deref(), &wb, alpha, tau)?;
        let grads = m.backward(&trace, &Upstream::Logits(lg.grad))?;
        Ok((lg.loss, grads))
    })?;
    Ok(TrainOutcome { model, history })
}

/// Transplant, then feature distillation with unit weights.
pub fn run_simkd(teacher: &Mlp, student_arch: &MlpArch, dataset: &Dataset, cfg: &TrainConfig) -> Result<DistillOutcome> {
    check_teacher(teacher, student_arch, dataset)?;
    let unit = dataset.clone().with_weights(vec![1.0; dataset.len()])?;
    let student = transplant_head(teacher, student_arch, cfg.seed)?;
    train_feature_distill(student, teacher, &unit, cfg)
}

/// Identification model, error set, upweighting by `lambda_up`, transplant,
/// then feature distillation on the upweighted data.
pub fn run_dett(
    teacher: &Mlp,
    student_arch: &MlpArch,
    dataset: &Dataset,
    lambda_up: f64,
    cfg: &TrainConfig,
    id_cfg: &TrainConfig,
) -> Result<DettOutcome> {
    check_teacher(teacher, student_arch, dataset)?;
    let id_model = identification_model(student_arch, dataset, id_cfg)?;
    let errors = identify_errors(&id_model, dataset)?;
    let distill_data = build_upweighted(dataset, &errors, lambda_up)?;
    let student = transplant_head(teacher, student_arch, cfg.seed)?;
    let out = train_feature_distill(student, teacher, &distill_data, cfg)?;
    Ok(DettOutcome {
        student: out.student,
        history: out.history,
        errors,
        distill_data,
    })
}

/// KD on the upweighted dataset (upweighting without transplanting).
#[allow(clippy::too_many_arguments)]
pub fn run_kd_upweighted(
    teacher: &Mlp,
    student_arch: &MlpArch,
    dataset: &Dataset,
    alpha: f64,
    tau: f64,
    lambda_up: f64,
    cfg: &TrainConfig,
    id_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    check_teacher(teacher, student_arch, dataset)?;
    let id_model = identification_model(student_arch, dataset, id_cfg)?;
    let errors = identify_errors(&id_model, dataset)?;
    let upweighted = build_upweighted(dataset, &errors, lambda_up)?;
    train_kd(student_arch, teacher, &upweighted, alpha, tau, cfg)
}

/// Transplant, then unit-weight feature distillation on a pool whose labels
/// are flagged unusable.
pub fn run_ood_distill(
    teacher: &Mlp,
    student_arch: &MlpArch,
    unlabeled_pool: &Dataset,
    cfg: &TrainConfig,
) -> Result<DistillOutcome> {
    if unlabeled_pool.labels_usable() {
        return Err(Error::config(
            "out-of-domain distillation expects a pool with labels flagged unusable",
        ));
    }
    check_teacher(teacher, student_arch, unlabeled_pool)?;
    let unit = unlabeled_pool.clone().with_weights(vec![1.0; unlabeled_pool.len()])?;
    let student = transplant_head(teacher, student_arch, cfg.seed)?;
    train_feature_distill(student, teacher, &unit, cfg)
}
