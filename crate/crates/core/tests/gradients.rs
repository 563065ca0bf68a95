use dett_core::nncore::{
    ce_loss_grad, finite_diff_check, kl_distill_loss_grad, softmax, Matrix, MlpArch, Objective,
};
use dett_core::nncore::gradcheck::DEFAULT_STEP;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

struct Instance {
    arch: MlpArch,
    x: Matrix,
    labels: Vec<usize>,
    weights: Vec<f64>,
}

fn instance(seed: u64, projector: bool) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_in = rng.random_range(1..=8);
    let hidden = rng.random_range(1..=8);
    let k = rng.random_range(2..=4);
    let n = rng.random_range(1..=4);
    let mut arch = MlpArch::new(d_in, vec![hidden], k);
    if projector {
        arch = arch.with_projector(rng.random_range(1..=8));
    }
    Instance {
        arch,
        x: random_matrix(&mut rng, n, d_in, 2.0),
        labels: (0..n).map(|_| rng.random_range(0..k)).collect(),
        weights: (0..n).map(|_| rng.random_range(0.5..3.0)).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn analytic_gradients_match_central_differences(seed in any::<u64>(), projector in any::<bool>()) {
        let inst = instance(seed, projector);
        let model = inst.arch.init(seed ^ 0x5eed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let n = inst.x.rows();
        let objectives = [
            Objective::CrossEntropy { labels: inst.labels.clone(), weights: inst.weights.clone() },
            Objective::Distill {
                teacher_logits: random_matrix(&mut rng, n, inst.arch.n_classes, 3.0),
                tau: rng.random_range(0.5..6.0),
                weights: inst.weights.clone(),
            },
            Objective::FeatureMse {
                target: random_matrix(&mut rng, n, inst.arch.feature_dim(), 1.0),
                weights: inst.weights.clone(),
            },
        ];
        for objective in &objectives {
            let report = finite_diff_check(objective, &model, &inst.x, DEFAULT_STEP).unwrap();
            prop_assert!(report.n_checked > 0);
            prop_assert!(report.passes(1e-6), "{}: {:?}", objective.name(), report);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), tau in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = random_matrix(&mut rng, 5, 4, 50.0);
        let p = softmax(&z, tau);
        for row in p.iter_rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn kl_is_nonnegative(seed in any::<u64>(), tau in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_matrix(&mut rng, 4, 3, 5.0);
        let s = random_matrix(&mut rng, 4, 3, 5.0);
        prop_assert!(kl_distill_loss_grad(&t, &s, tau).unwrap().loss >= 0.0);
    }

    #[test]
    fn ce_is_invariant_to_weight_scale(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = random_matrix(&mut rng, 4, 3, 4.0);
        let y: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
        let w: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..5.0)).collect();
        let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
        let a = ce_loss_grad(&z, &y, &w).unwrap();
        let b = ce_loss_grad(&z, &y, &scaled).unwrap();
        prop_assert!((a.loss - b.loss).abs() <= 1e-12 * a.loss.abs().max(1.0));
        for (u, v) in a.grad.as_slice().iter().zip(b.grad.as_slice()) {
            prop_assert!((u - v).abs() <= 1e-12);
        }
    }
}

#[test]
fn gradient_through_two_hidden_layers() {
    let model = MlpArch::new(3, vec![5, 4], 3).init(9).unwrap();
    let x = Matrix::from_rows(&[[0.3, -1.2, 0.8], [1.5, 0.1, -0.4]]).unwrap();
    let objective = Objective::CrossEntropy {
        labels: vec![2, 0],
        weights: vec![1.0, 2.0],
    };
    let report = finite_diff_check(&objective, &model, &x, DEFAULT_STEP).unwrap();
    assert!(report.passes(1e-6), "{report:?}");
}

#[test]
fn frozen_layers_are_not_checked() {
    let mut model = MlpArch::new(2, vec![3], 2).init(1).unwrap();
    model.head_mut().frozen = true;
    let x = Matrix::from_rows(&[[1.0, -1.0]]).unwrap();
    let objective = Objective::CrossEntropy {
        labels: vec![1],
        weights: vec![1.0],
    };
    let report = finite_diff_check(&objective, &model, &x, DEFAULT_STEP).unwrap();
    assert_eq!(report.n_checked, 3 * 2 + 3);
}
