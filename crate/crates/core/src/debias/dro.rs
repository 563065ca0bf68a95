use super::{fit, TrainConfig};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::nncore::{ce_rows, Gradients, Mlp, MlpArch, Upstream};

/// Online exponential-weights dual variable over groups.
#[derive(Debug, Clone, PartialEq)]
pub struct DroState {
    pub q: Vec<f64>,
    pub eta_q: f64,
}

impl DroState {
    pub fn uniform(n_groups: usize, eta_q: f64) -> Self {
        Self {
            q: vec![1.0 / n_groups as f64; n_groups],
            eta_q,
        }
    }

    /// `q_g <- q_g * exp(eta_q * loss_g)` for groups with a loss, then
    /// renormalize. Groups without a loss keep their unnormalized weight.
    /// With `eta_q == 0` the update is the identity.
    pub fn update(&mut self, group_losses: &[Option<f64>]) {
        if self.eta_q == 0.0 {
            return;
        }
        for (q, loss) in self.q.iter_mut().zip(group_losses) {
            if let Some(l) = loss {
                *q *= (self.eta_q * l).exp();
            }
        }
        let total: f64 = self.q.iter().sum();
        for q in &mut self.q {
            *q /= total;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroOutcome {
    pub model: Mlp,
    pub history: Vec<super::Checkpoint>,
    pub final_q: Vec<f64>,
}

/// Group-weighted batch objective `sum_g q_g * mean_{i in g} CE_i` over the
/// groups present in the batch, optionally updating `q` first.
fn group_batch(
    model: &Mlp,
    data: &Dataset,
    labels: &[usize],
    batch: &[usize],
    state: &mut DroState,
    update: bool,
) -> Result<(f64, Gradients)> {
    let xb = data.x().select_rows(batch);
    let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
    let trace = model.forward_trace(&xb)?;
    let (losses, mut grad) = ce_rows(trace.logits(), &yb)?;

    let n_groups = state.q.len();
    let mut sums = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (&i, l) in batch.iter().zip(&losses) {
        let g = data.groups()[i];
        sums[g] += l;
        counts[g] += 1;
    }
    let means: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    if update {
        state.update(&means);
    }

    let loss: f64 = means
        .iter()
        .zip(&state.q)
        .filter_map(|(m, q)| m.map(|m| q * m))
        .sum();
    for (r, &i) in batch.iter().enumerate() {
        let g = data.groups()[i];
        let scale = state.q[g] / counts[g] as f64;
        grad.row_mut(r).iter_mut().for_each(|v| *v *= scale);
    }
    let grads = model.backward(&trace, &Upstream::Logits(grad))?;
    Ok((loss, grads))
}

fn run(arch: &MlpArch, dataset: &Dataset, cfg: &TrainConfig, eta_q: f64, update: bool) -> Result<DroOutcome> {
    let labels = dataset.labels("train_group_dro")?;
    if !(eta_q.is_finite() && eta_q >= 0.0) {
        return Err(Error::config(format!("eta_q must be >= 0, got {eta_q}")));
    }
    if dataset.n_attrs() < 2 {
        return Err(Error::config("group DRO needs attribute annotations (n_attrs >= 2)"));
    }
    let mut model = arch.init(cfg.seed)?;
    if model.d_in() != dataset.d() {
        return Err(Error::shape("train_group_dro input dimension", model.d_in(), dataset.d()));
    }
    let mut state = DroState::uniform(dataset.n_groups(), eta_q);
    let history = fit(&mut model, dataset.len(), cfg, |m, batch| {
        group_batch(m, dataset, labels, batch, &mut state, update)
    })?;
    Ok(DroOutcome {
        model,
        history,
        final_q: state.q,
    })
}

/// Group DRO with the online exponential-weights update; `q` persists
/// across batches and epochs.
pub fn train_group_dro(arch: &MlpArch, dataset: &Dataset, cfg: &TrainConfig, eta_q: f64) -> Result<DroOutcome> {
    run(arch, dataset, cfg, eta_q, true)
}

/// Weighted ERM with fixed uniform group weights: every present group's
/// mean loss counts `1 / n_groups`.
pub fn train_group_balanced_erm(arch: &MlpArch, dataset: &Dataset, cfg: &TrainConfig) -> Result<DroOutcome> {
    run(arch, dataset, cfg, 0.0, false)
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_losses_keep_q_uniform() {
        let mut s = DroState::uniform(4, 0.3);
        for step in 0..50 {
            let l = 0.1 * step as f64;
            s.update(&[Some(l); 4]);
            for q in &s.q {
                assert!((q - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_group_scalar_oracle() {
        let mut s = DroState::uniform(2, 1.0);
        s.update(&[Some(1.0), Some(0.0)]);
        let e = std::f64::consts::E;
        assert!((s.q[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((s.q[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn absent_groups_keep_relative_weight() {
        let mut s = DroState::uniform(3, 0.5);
        s.update(&[Some(2.0), None, None]);
        assert!((s.q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(s.q[1], s.q[2]);
        assert!(s.q[0] > s.q[1]);
    }
}
