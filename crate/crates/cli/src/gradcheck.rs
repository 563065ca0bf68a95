//! Randomized finite-difference sweep over the three training losses.

use rand::Rng;

use dett_core::nncore::gradcheck::{compare_with_finite_differences, DEFAULT_STEP};
use dett_core::nncore::{finite_diff_check, Matrix, MlpArch, Objective};
use dett_core::rng::{stream, Stream};

use crate::error::Result;

pub const INSTANCES: usize = 20;
pub const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Negates the analytic cross-entropy gradient before comparison.
    FlipCrossEntropySign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: &'static str,
    pub max_rel_error: f64,
    pub instances: usize,
    pub passed: bool,
}

impl std::fmt::Display for LossReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<14} max_rel_error={:.3e} instances={} {}",
            self.loss,
            self.max_rel_error,
            self.instances,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).expect("length matches shape")
}

/// Checks CE, temperature-scaled KL and feature MSE on `INSTANCES` random
/// models with one hidden ReLU layer (widths and batch sizes up to 8 and 4).
pub fn run(seed: u64, fault: Fault) -> Result<Vec<LossReport>> {
    let names = ["cross_entropy", "kl_distill", "feature_mse"];
    let mut worst = [0.0f64; 3];
    for i in 0..INSTANCES {
        let mut rng = stream(seed, Stream::GradCheck, i as u64);
        let d_in = rng.random_range(1..=8);
        let k = rng.random_range(2..=4);
        let n = rng.random_range(1..=4);
        let mut arch = MlpArch::new(d_in, vec![rng.random_range(1..=8)], k);
        if rng.random_bool(0.5) {
            arch = arch.with_projector(rng.random_range(1..=8));
        }
        let model = arch.init(rng.random())?;
        let x = random_matrix(&mut rng, n, d_in, 2.0);
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
        let objectives = [
            Objective::CrossEntropy {
                labels: (0..n).map(|_| rng.random_range(0..k)).collect(),
                weights: weights.clone(),
            },
            Objective::Distill {
                teacher_logits: random_matrix(&mut rng, n, k, 3.0),
                tau: rng.random_range(0.5..6.0),
                weights: weights.clone(),
            },
            Objective::FeatureMse {
                target: random_matrix(&mut rng, n, arch.feature_dim(), 1.0),
                weights,
            },
        ];
        for (j, objective) in objectives.iter().enumerate() {
            let report = if j == 0 && fault == Fault::FlipCrossEntropySign {
                let (_, grads) = objective.loss_and_grads(&model, &x)?;
                let mut flipped = grads.clone();
                flipped.add_scaled(&grads, -2.0);
                compare_with_finite_differences(&model, &flipped, DEFAULT_STEP, |m| objective.loss(m, &x))?
            } else {
                finite_diff_check(objective, &model, &x, DEFAULT_STEP)?
            };
            worst[j] = worst[j].max(report.max_rel_error);
        }
    }
    Ok(names
        .iter()
        .zip(worst)
        .map(|(&loss, max_rel_error)| LossReport {
            loss,
            max_rel_error,
            instances: INSTANCES,
            passed: max_rel_error < TOLERANCE,
        })
        .collect())
}
