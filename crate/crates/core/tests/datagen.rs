use dett_core::datagen::{
    generate, group_counts, make_unlabeled_pool, BiasMode, Dataset, SyntheticConfig,
};
use dett_core::debias::{train_erm, TrainConfig};
use dett_core::nncore::MlpArch;
use proptest::prelude::*;

fn small(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        n_train: 200,
        n_val: 40,
        n_test: 40,
        seed,
        ..SyntheticConfig::default()
    }
}

#[test]
fn minority_counts_match_binomial_expectation() {
    for seed in [1, 2, 3] {
        let cfg = SyntheticConfig {
            seed,
            class_prior: None,
            ..SyntheticConfig::default()
        };
        let splits = generate(&cfg).unwrap();
        let table = group_counts(&splits.train);
        let n = cfg.n_train as f64;
        // each minority group: y uniform (1/2) and a != y (0.05)
        let p = 0.5 * (1.0 - cfg.bias_rho);
        let sd = (n * p * (1.0 - p)).sqrt();
        for g in cfg.minority_groups() {
            let observed = table.counts[g] as f64;
            assert!((observed - n * p).abs() <= 4.0 * sd, "group {g}: {observed} vs {}", n * p);
        }
    }
}

#[test]
fn unbiased_attribute_gives_uniform_groups() {
    let cfg = SyntheticConfig {
        n_train: 10_000,
        bias_rho: 0.5,
        class_prior: None,
        seed: 17,
        ..SyntheticConfig::default()
    };
    let table = group_counts(&generate(&cfg).unwrap().train);
    let expected = cfg.n_train as f64 / 4.0;
    let chi2: f64 = table
        .counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 99.9th percentile of chi-square with 3 degrees of freedom
    assert!(chi2 < 16.266, "chi2 = {chi2}");
}

#[test]
fn balanced_splits_have_equal_groups() {
    let splits = generate(&SyntheticConfig::default()).unwrap();
    assert_eq!(group_counts(&splits.val).counts, vec![100; 4]);
    assert_eq!(group_counts(&splits.test).counts, vec![500; 4]);
}

#[test]
fn ternary_splits_are_balanced() {
    let cfg = SyntheticConfig {
        n_classes: 3,
        n_val: 60,
        n_test: 120,
        class_prior: None,
        ..SyntheticConfig::default()
    };
    let splits = generate(&cfg).unwrap();
    assert_eq!(group_counts(&splits.val).counts, vec![10; 6]);
    assert_eq!(splits.train.n_groups(), 6);
}

#[test]
fn default_training_split_follows_the_class_prior() {
    let cfg = SyntheticConfig::default();
    let train = generate(&cfg).unwrap().train;
    let n = train.len() as f64;
    let ones = train.raw_labels().iter().filter(|&&y| y == 1).count() as f64;
    let p = cfg.class_prior.as_ref().unwrap()[1] / cfg.class_prior.as_ref().unwrap().iter().sum::<f64>();
    assert!((ones - n * p).abs() <= 4.0 * (n * p * (1.0 - p)).sqrt(), "{ones} of {n}");
}

#[test]
fn pool_attribute_is_independent_of_label() {
    let cfg = SyntheticConfig { n_train: 10_000, ..SyntheticConfig::default() };
    let pool = make_unlabeled_pool(&cfg, 5).unwrap();
    assert!(!pool.labels_usable());
    let n = pool.len() as f64;
    let y: Vec<f64> = pool.raw_labels().iter().map(|&v| v as f64).collect();
    let a: Vec<f64> = pool.attrs().iter().map(|&v| v as f64).collect();
    let my = y.iter().sum::<f64>() / n;
    let ma = a.iter().sum::<f64>() / n;
    let cov: f64 = y.iter().zip(&a).map(|(u, v)| (u - my) * (v - ma)).sum::<f64>() / n;
    let vy = y.iter().map(|u| (u - my).powi(2)).sum::<f64>() / n;
    let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
    let corr = cov / (vy * va).sqrt();
    // the sample correlation of independent variables has sd 1/sqrt(n)
    assert!(corr.abs() < 4.0 / n.sqrt(), "corr = {corr}");
    assert!((my - 0.5).abs() < 4.0 * 0.5 / n.sqrt(), "pool classes are uniform");
    assert_eq!(pool, make_unlabeled_pool(&cfg, 5).unwrap());
}

#[test]
fn pool_is_rejected_by_labeled_trainers() {
    let pool = make_unlabeled_pool(&small(1), 1).unwrap();
    let arch = MlpArch::new(pool.d(), vec![4], 2);
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    assert!(matches!(train_erm(&arch, &pool, &cfg), Err(dett_core::Error::Unlabeled(_))));
}

fn probe_train_accuracy(data: &Dataset, cfg: &TrainConfig) -> f64 {
    let arch = MlpArch::new(data.d(), vec![], 2);
    let model = train_erm(&arch, data, cfg).unwrap().model;
    let pred = model.predict(data.x()).unwrap();
    let labels = data.raw_labels();
    pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / data.len() as f64
}

fn block_probes(cfg: &SyntheticConfig, train_cfg: &TrainConfig) -> (f64, f64) {
    let train = generate(cfg).unwrap().train;
    let core = train.with_columns(0, cfg.d_core);
    let spurious = train.with_columns(cfg.d_core, cfg.d_core + cfg.d_spurious);
    (probe_train_accuracy(&spurious, train_cfg), probe_train_accuracy(&core, train_cfg))
}

#[test]
fn spurious_block_wins_once_core_bayes_rate_is_below_rho() {
    // Phi(0.6 * sqrt(5)) is about 0.91, below bias_rho = 0.95.
    for seed in [1, 2, 3] {
        let cfg = SyntheticConfig { mu_core: 0.6, class_prior: None, seed, ..SyntheticConfig::default() };
        let train_cfg = TrainConfig { epochs: 20, seed, ..TrainConfig::default() };
        let (spurious, core) = block_probes(&cfg, &train_cfg);
        assert!(spurious > core, "seed {seed}: spurious {spurious} vs core {core}");
    }
}

#[test]
fn spurious_block_is_learned_first_at_default_means() {
    for seed in [1, 2, 3] {
        let cfg = SyntheticConfig { class_prior: None, seed, ..SyntheticConfig::default() };
        let train_cfg = TrainConfig { epochs: 1, learning_rate: 0.001, momentum: 0.0, seed, ..TrainConfig::default() };
        let (spurious, core) = block_probes(&cfg, &train_cfg);
        assert!(spurious > core, "seed {seed}: spurious {spurious} vs core {core}");
    }
}

#[test]
fn unbiased_class_mode_keeps_other_classes_biased() {
    let cfg = SyntheticConfig {
        n_train: 4000,
        bias_mode: BiasMode::UnbiasedClass(0),
        seed: 2,
        ..SyntheticConfig::default()
    };
    let table = group_counts(&generate(&cfg).unwrap().train);
    // class 0 splits evenly; class 1 keeps its 95/5 split
    let (c00, c01, c10, c11) = (table.counts[0], table.counts[1], table.counts[2], table.counts[3]);
    assert!((c00 as f64 / (c00 + c01) as f64 - 0.5).abs() < 0.05);
    assert!(c10 as f64 / ((c10 + c11) as f64) < 0.08);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generation_is_deterministic_and_consistent(seed in any::<u64>()) {
        let a = generate(&small(seed)).unwrap();
        let b = generate(&small(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        for ds in [&a.train, &a.val, &a.test] {
            for i in 0..ds.len() {
                prop_assert_eq!(ds.groups()[i], ds.raw_labels()[i] * ds.n_attrs() + ds.attrs()[i]);
            }
            let table = group_counts(ds);
            prop_assert_eq!(table.total_count(), ds.len());
            prop_assert!((table.total_effective() - ds.weights().iter().sum::<f64>()).abs() < 1e-9);
        }
    }

    #[test]
    fn upweighting_raises_effective_counts(seed in any::<u64>(), lambda in 1.0f64..60.0) {
        let train = generate(&small(seed)).unwrap().train;
        let errors = dett_core::debias::ErrorSet::from_indices((0..train.len()).step_by(7).collect());
        let up = dett_core::debias::build_upweighted(&train, &errors, lambda).unwrap();
        let before = group_counts(&train);
        let after = group_counts(&up);
        prop_assert_eq!(&before.counts, &after.counts);
        let gained: f64 = after.effective.iter().zip(&before.effective).map(|(a, b)| a - b).sum();
        prop_assert!((gained - errors.len() as f64 * (lambda - 1.0)).abs() < 1e-9 * gained.abs().max(1.0));
        prop_assert!(up.weights().iter().all(|&w| w == 1.0 || w == lambda));
    }
}
