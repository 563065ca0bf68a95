//! Batch losses with analytic gradients.
//!
//! All losses reduce by a (weighted) mean over samples, so rescaling the
//! weight vector changes neither the value nor the gradient.

use super::Matrix;
use crate::error::{Error, Result};

/// Loss value together with its gradient w.r.t. the differentiated input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Matrix,
}

/// Row-wise `softmax(z / tau)`.
pub fn softmax(logits: &Matrix, tau: f64) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_row_in_place(out.row_mut(r), tau);
    }
    out
}

fn softmax_row_in_place(row: &mut [f64], tau: f64) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / tau));
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v / tau - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise `log_softmax(z / tau)` written into `out`.
fn log_softmax_row(row: &[f64], tau: f64, out: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / tau));
    let sum: f64 = row.iter().map(|&v| (v / tau - max).exp()).sum();
    let lse = max + sum.ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v / tau - lse;
    }
}

fn normalizer(weights: &[f64], n: usize, context: &'static str) -> Result<f64> {
    if weights.len() != n {
        return Err(Error::shape(context, format!("{n} weights"), weights.len()));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::config(format!("{context}: sample weight {w} is not a finite nonnegative number")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    Ok(total)
}

/// Weighted mean cross-entropy of `softmax(logits)` against `labels`.
pub fn ce_loss_grad(logits: &Matrix, labels: &[usize], weights: &[f64]) -> Result<LossGrad> {
    let (n, k) = logits.shape();
    if labels.len() != n {
        return Err(Error::shape("ce_loss_grad labels", n, labels.len()));
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= k) {
        return Err(Error::LabelOutOfRange {
            index,
            label,
            n_classes: k,
        });
    }
    let total = normalizer(weights, n, "ce_loss_grad weights")?;
    let mut grad = Matrix::zeros(n, k);
    let mut logp = vec![0.0; k];
    let mut loss = 0.0;
    for i in 0..n {
        let w = weights[i];
        log_softmax_row(logits.row(i), 1.0, &mut logp);
        loss += w * -logp[labels[i]];
        let scale = w / total;
        let g = grad.row_mut(i);
        for j in 0..k {
            let target = if j == labels[i] { 1.0 } else { 0.0 };
            g[j] = scale * (logp[j].exp() - target);
        }
    }
    finish(loss / total, grad, "ce_loss_grad")
}

/// Unreduced cross-entropy: per-row losses and per-row gradients
/// `softmax(z_i) - onehot(y_i)`. Callers apply their own reduction.
pub fn ce_rows(logits: &Matrix, labels: &[usize]) -> Result<(Vec<f64>, Matrix)> {
    let (n, k) = logits.shape();
    if labels.len() != n {
        return Err(Error::shape("ce_rows labels", n, labels.len()));
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= k) {
        return Err(Error::LabelOutOfRange {
            index,
            label,
            n_classes: k,
        });
    }
    let mut grad = Matrix::zeros(n, k);
    let mut losses = Vec::with_capacity(n);
    let mut logp = vec![0.0; k];
    for i in 0..n {
        log_softmax_row(logits.row(i), 1.0, &mut logp);
        losses.push(-logp[labels[i]]);
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            *g = logp[j].exp() - if j == labels[i] { 1.0 } else { 0.0 };
        }
    }
    Ok((losses, grad))
}

/// `tau^2 * mean_i KL(softmax(t_i/tau) || softmax(s_i/tau))`, gradient w.r.t.
/// the student logits only.
pub fn kl_distill_loss_grad(teacher_logits: &Matrix, student_logits: &Matrix, tau: f64) -> Result<LossGrad> {
    let ones = vec![1.0; student_logits.rows()];
    kl_distill_loss_grad_weighted(teacher_logits, student_logits, tau, &ones)
}

#[allow(clippy::needless_range_loop)]
pub fn kl_distill_loss_grad_weighted(
    teacher_logits: &Matrix,
    student_logits: &Matrix,
    tau: f64,
    weights: &[f64],
) -> Result<LossGrad> {
    if teacher_logits.shape() != student_logits.shape() {
        return Err(Error::shape(
            "kl_distill_loss_grad",
            format!("{:?} (teacher)", teacher_logits.shape()),
            format!("{:?} (student)", student_logits.shape()),
        ));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::config(format!("temperature must be positive, got {tau}")));
    }
    let (n, k) = student_logits.shape();
    let total = normalizer(weights, n, "kl_distill_loss_grad weights")?;
    let mut grad = Matrix::zeros(n, k);
    let mut logp = vec![0.0; k];
    let mut logq = vec![0.0; k];
    let mut loss = 0.0;
    for i in 0..n {
        log_softmax_row(teacher_logits.row(i), tau, &mut logp);
        log_softmax_row(student_logits.row(i), tau, &mut logq);
        let kl: f64 = logp
            .iter()
            .zip(&logq)
            .map(|(&lp, &lq)| lp.exp() * (lp - lq))
            .sum();
        // rounding can push a true zero slightly negative
        loss += weights[i] * kl.max(0.0);
        // d/ds [tau^2 KL] = tau * (q - p)
        let scale = tau * weights[i] / total;
        let g = grad.row_mut(i);
        for j in 0..k {
            g[j] = scale * (logq[j].exp() - logp[j].exp());
        }
    }
    finish(tau * tau * loss / total, grad, "kl_distill_loss_grad")
}

/// Mean over samples of the squared L2 distance `||pred_i - target_i||^2`.
pub fn mse_feature_loss_grad(target: &Matrix, pred: &Matrix) -> Result<LossGrad> {
    let ones = vec![1.0; pred.rows()];
    mse_feature_loss_grad_weighted(target, pred, &ones)
}

#[allow(clippy::needless_range_loop)]
pub fn mse_feature_loss_grad_weighted(target: &Matrix, pred: &Matrix, weights: &[f64]) -> Result<LossGrad> {
    if target.shape() != pred.shape() {
        return Err(Error::shape(
            "mse_feature_loss_grad",
            format!("{:?} (target)", target.shape()),
            format!("{:?} (pred)", pred.shape()),
        ));
    }
    let (n, d) = pred.shape();
    let total = normalizer(weights, n, "mse_feature_loss_grad weights")?;
    let mut grad = Matrix::zeros(n, d);
    let mut loss = 0.0;
    for i in 0..n {
        let scale = 2.0 * weights[i] / total;
        let mut sq = 0.0;
        let g = grad.row_mut(i);
        for ((gj, &p), &t) in g.iter_mut().zip(pred.row(i)).zip(target.row(i)) {
            let diff = p - t;
            sq += diff * diff;
            *gj = scale * diff;
        }
        loss += weights[i] * sq;
    }
    finish(loss / total, grad, "mse_feature_loss_grad")
}

fn finish(loss: f64, grad: Matrix, context: &'static str) -> Result<LossGrad> {
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::NonFinite(context));
    }
    Ok(LossGrad { loss, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn ce_uniform_logits_is_ln2() {
        let lg = ce_loss_grad(&m(&[&[0.0, 0.0]]), &[0], &[1.0]).unwrap();
        assert!((lg.loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(lg.grad.as_slice(), &[-0.5, 0.5]);
    }

    #[test]
    fn ce_scalar_oracle() {
        // ln(1 + e^-2) evaluated directly
        let expected = (1.0 + (-2.0f64).exp()).ln();
        let lg = ce_loss_grad(&m(&[&[2.0, 0.0]]), &[0], &[1.0]).unwrap();
        assert!((lg.loss - expected).abs() < 1e-15);
        assert!((expected - 0.126_928_011_042_972_6).abs() < 1e-15);
    }

    #[test]
    fn ce_weight_rescaling_is_exact() {
        let logits = m(&[&[0.3, -1.2, 2.0], &[1.0, 0.5, -0.5], &[0.0, 0.1, 0.2]]);
        let labels = [2, 0, 1];
        let w = [1.0, 3.0, 0.5];
        let w2: Vec<f64> = w.iter().map(|v| v * 2.0).collect();
        let a = ce_loss_grad(&logits, &labels, &w).unwrap();
        let b = ce_loss_grad(&logits, &labels, &w2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ce_rejects_bad_labels_and_zero_weights() {
        let logits = m(&[&[0.0, 0.0]]);
        assert!(matches!(
            ce_loss_grad(&logits, &[2], &[1.0]),
            Err(Error::LabelOutOfRange { label: 2, .. })
        ));
        assert!(matches!(ce_loss_grad(&logits, &[0], &[0.0]), Err(Error::ZeroWeights)));
    }

    #[test]
    fn kl_identical_logits_is_zero() {
        let z = m(&[&[1.0, -2.0, 0.5], &[0.0, 0.0, 3.0]]);
        let lg = kl_distill_loss_grad(&z, &z, 4.0).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert!(lg.grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn kl_scalar_oracle() {
        // KL([s(1), s(-1)] || [1/2, 1/2]) with s the logistic function
        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        let (p0, p1) = (s(1.0), s(-1.0));
        let expected = p0 * (p0 / 0.5).ln() + p1 * (p1 / 0.5).ln();
        let lg = kl_distill_loss_grad(&m(&[&[1.0, 0.0]]), &m(&[&[0.0, 0.0]]), 1.0).unwrap();
        assert!((lg.loss - expected).abs() < 1e-15);
        assert!((expected - 0.110_944_071_671_727_35).abs() < 1e-14);
    }

    #[test]
    fn kl_temperature_identity() {
        let t = m(&[&[0.7, -0.4], &[2.0, 1.0]]);
        let s = m(&[&[-0.1, 0.9], &[0.3, 0.3]]);
        let tau = 4.0;
        let scale = |x: &Matrix| {
            let mut y = x.clone();
            y.as_mut_slice().iter_mut().for_each(|v| *v *= tau);
            y
        };
        let base = kl_distill_loss_grad(&t, &s, 1.0).unwrap().loss;
        let scaled = kl_distill_loss_grad(&scale(&t), &scale(&s), tau).unwrap().loss;
        assert!((scaled - tau * tau * base).abs() < 1e-12);
    }

    #[test]
    fn kl_shape_mismatch() {
        assert!(kl_distill_loss_grad(&m(&[&[0.0, 1.0]]), &m(&[&[0.0, 1.0, 2.0]]), 1.0).is_err());
        assert!(kl_distill_loss_grad(&m(&[&[0.0, 1.0]]), &m(&[&[0.0, 1.0]]), 0.0).is_err());
    }

    #[test]
    fn mse_definition() {
        let lg = mse_feature_loss_grad(&m(&[&[1.0, 0.0]]), &m(&[&[0.0, 0.0]])).unwrap();
        assert_eq!(lg.loss, 1.0);
        assert_eq!(lg.grad.as_slice(), &[-2.0, 0.0]);
        let same = mse_feature_loss_grad(&m(&[&[1.0, 2.0]]), &m(&[&[1.0, 2.0]])).unwrap();
        assert_eq!(same.loss, 0.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let z = m(&[&[1000.0, -1000.0, 3.0], &[1e-9, 0.0, -1e-9]]);
        for tau in [0.25, 1.0, 4.0, 100.0] {
            let p = softmax(&z, tau);
            for r in p.iter_rows() {
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
