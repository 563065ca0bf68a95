//! Central finite-difference verification of analytic gradients.

use super::loss::{ce_loss_grad, kl_distill_loss_grad_weighted, mse_feature_loss_grad_weighted};
use super::{Gradients, Matrix, Mlp, Upstream};
use crate::error::Result;

/// Default step. Probes that change a ReLU activation pattern are retried
/// with smaller steps, down to `DEFAULT_STEP * 1e-3`.
pub const DEFAULT_STEP: f64 = 1e-5;

const MAX_SHRINKS: usize = 6;

/// Gradient magnitudes below this are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// A loss composed with a forward pass, differentiable w.r.t. the model.
#[derive(Debug, Clone)]
pub enum Objective {
    CrossEntropy { labels: Vec<usize>, weights: Vec<f64> },
    Distill { teacher_logits: Matrix, tau: f64, weights: Vec<f64> },
    FeatureMse { target: Matrix, weights: Vec<f64> },
    /// Squared error on the logits; quadratic for a linear model.
    LogitMse { target: Matrix },
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::CrossEntropy { .. } => "cross_entropy",
            Objective::Distill { .. } => "kl_distill",
            Objective::FeatureMse { .. } => "feature_mse",
            Objective::LogitMse { .. } => "logit_mse",
        }
    }

    pub fn loss(&self, model: &Mlp, x: &Matrix) -> Result<f64> {
        Ok(self.loss_and_upstream(model, x)?.0)
    }

    fn loss_and_upstream(&self, model: &Mlp, x: &Matrix) -> Result<(f64, Upstream)> {
        let (features, logits) = model.forward_logits(x)?;
        Ok(match self {
            Objective::CrossEntropy { labels, weights } => {
                let lg = ce_loss_grad(&logits, labels, weights)?;
                (lg.loss, Upstream::Logits(lg.grad))
            }
            Objective::Distill { teacher_logits, tau, weights } => {
                let lg = kl_distill_loss_grad_weighted(teacher_logits, &logits, *tau, weights)?;
                (lg.loss, Upstream::Logits(lg.grad))
            }
            Objective::FeatureMse { target, weights } => {
                let lg = mse_feature_loss_grad_weighted(target, &features, weights)?;
                (lg.loss, Upstream::Features(lg.grad))
            }
            Objective::LogitMse { target } => {
                let ones = vec![1.0; x.rows()];
                let lg = mse_feature_loss_grad_weighted(target, &logits, &ones)?;
                (lg.loss, Upstream::Logits(lg.grad))
            }
        })
    }

    pub fn loss_and_grads(&self, model: &Mlp, x: &Matrix) -> Result<(f64, Gradients)> {
        let trace = model.forward_trace(x)?;
        let (loss, upstream) = self.loss_and_upstream(model, x)?;
        Ok((loss, model.backward(&trace, &upstream)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub n_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Checks the objective's analytic gradient at `model` against central
/// differences with step `step`.
pub fn finite_diff_check(objective: &Objective, model: &Mlp, x: &Matrix, step: f64) -> Result<GradCheckReport> {
    let (_, analytic) = objective.loss_and_grads(model, x)?;
    let base = relu_pattern(model, x)?;
    compare_impl(model, &analytic, step, |m| objective.loss(m, x), |m| {
        Ok(relu_pattern(m, x)? == base)
    })
}

fn relu_pattern(model: &Mlp, x: &Matrix) -> Result<Vec<bool>> {
    let trace = model.forward_trace(x)?;
    Ok(trace.acts[1..=trace.n_feature_layers]
        .iter()
        .flat_map(|a| a.as_slice().iter().map(|&v| v > 0.0))
        .collect())
}

/// Compares a given analytic gradient against central differences of
/// `loss`. Parameters of frozen layers are skipped; a missing gradient for a
/// trainable layer counts as zero.
pub fn compare_with_finite_differences<F>(
    model: &Mlp,
    analytic: &Gradients,
    step: f64,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&Mlp) -> Result<f64>,
{
    compare_impl(model, analytic, step, loss, |_| Ok(true))
}

fn compare_impl<F, R>(model: &Mlp, analytic: &Gradients, step: f64, loss: F, same_region: R) -> Result<GradCheckReport>
where
    F: Fn(&Mlp) -> Result<f64>,
    R: Fn(&Mlp) -> Result<bool>,
{
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        n_checked: 0,
    };
    let n_layers = model.n_layers();
    for li in 0..n_layers {
        let layer = model.layers().nth(li).expect("layer index in range").1;
        if layer.frozen {
            continue;
        }
        let n_w = layer.weight.as_slice().len();
        for pi in 0..layer.n_params() {
            let a = analytic.layers[li].as_ref().map_or(0.0, |g| {
                if pi < n_w {
                    g.weight.as_slice()[pi]
                } else {
                    g.bias[pi - n_w]
                }
            });
            let original = param(&probe, li, pi);
            let mut h = step;
            let numeric = loop {
                set_param(&mut probe, li, pi, original + h);
                let plus = loss(&probe)?;
                let smooth_plus = same_region(&probe)?;
                set_param(&mut probe, li, pi, original - h);
                let minus = loss(&probe)?;
                let smooth_minus = same_region(&probe)?;
                set_param(&mut probe, li, pi, original);
                if (smooth_plus && smooth_minus) || h <= step * 0.1f64.powi(MAX_SHRINKS as i32 / 2) {
                    break (plus - minus) / (2.0 * h);
                }
                h *= 0.1f64.sqrt();
            };
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
            report.n_checked += 1;
        }
    }
    Ok(report)
}

fn param(model: &Mlp, layer: usize, index: usize) -> f64 {
    let l = model.layers().nth(layer).expect("layer index in range").1;
    let n_w = l.weight.as_slice().len();
    if index < n_w {
        l.weight.as_slice()[index]
    } else {
        l.bias[index - n_w]
    }
}

fn set_param(model: &mut Mlp, layer: usize, index: usize, value: f64) {
    let l = model.layers_mut().nth(layer).expect("layer index in range").1;
    let n_w = l.weight.as_slice().len();
    if index < n_w {
        l.weight.as_mut_slice()[index] = value;
    } else {
        l.bias[index - n_w] = value;
    }
}
