use super::{train_erm, Checkpoint, TrainConfig};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::nncore::{Mlp, MlpArch};

/// Sorted, unique indices of training samples the identification model
/// misclassifies.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ErrorSet(Vec<usize>);

impl ErrorSet {
    pub fn from_indices(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }
}

/// How an upweighting factor turns into per-sample weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpweightConvention {
    /// Error samples weigh exactly `lambda_up`.
    #[default]
    Factor,
    /// Error samples appear once in the original data plus `lambda_up`
    /// extra copies: weight `lambda_up + 1`.
    Concatenate,
}

pub fn identify_errors(id_model: &Mlp, dataset: &Dataset) -> Result<ErrorSet> {
    let labels = dataset.labels("identify_errors")?;
    let pred = id_model.predict(dataset.x())?;
    Ok(ErrorSet(
        pred.iter()
            .zip(labels)
            .enumerate()
            .filter(|(_, (p, y))| p != y)
            .map(|(i, _)| i)
            .collect(),
    ))
}

pub fn build_upweighted(dataset: &Dataset, errors: &ErrorSet, lambda_up: f64) -> Result<Dataset> {
    build_upweighted_with(dataset, errors, lambda_up, UpweightConvention::Factor)
}

pub fn build_upweighted_with(
    dataset: &Dataset,
    errors: &ErrorSet,
    lambda_up: f64,
    convention: UpweightConvention,
) -> Result<Dataset> {
    if !(lambda_up.is_finite() && lambda_up >= 1.0) {
        return Err(Error::config(format!("lambda_up must be >= 1, got {lambda_up}")));
    }
    if let Some(&bad) = errors.indices().iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::config(format!("error index {bad} out of range for {} samples", dataset.len())));
    }
    let up = match convention {
        UpweightConvention::Factor => lambda_up,
        UpweightConvention::Concatenate => lambda_up + 1.0,
    };
    let mut weights = vec![1.0; dataset.len()];
    for &i in errors.indices() {
        weights[i] = up;
    }
    dataset.clone().with_weights(weights)
}

/// Short-schedule ERM model with the given architecture minus any projector.
pub fn identification_model(arch: &MlpArch, dataset: &Dataset, id_cfg: &TrainConfig) -> Result<Mlp> {
    let plain = MlpArch {
        projector_dim: None,
        ..arch.clone()
    };
    Ok(train_erm(&plain, dataset, id_cfg)?.model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct JttOutcome {
    pub model: Mlp,
    pub history: Vec<Checkpoint>,
    pub errors: ErrorSet,
}

/// Identification by short ERM, upweighting of its errors, then a fresh
/// weighted ERM run.
pub fn train_jtt(
    arch: &MlpArch,
    dataset: &Dataset,
    cfg: &TrainConfig,
    id_cfg: &TrainConfig,
    lambda_up: f64,
) -> Result<JttOutcome> {
    let id_model = identification_model(arch, dataset, id_cfg)?;
    let errors = identify_errors(&id_model, dataset)?;
    let upweighted = build_upweighted(dataset, &errors, lambda_up)?;
    let out = train_erm(arch, &upweighted, cfg)?;
    Ok(JttOutcome {
        model: out.model,
        history: out.history,
        errors,
    })
}
