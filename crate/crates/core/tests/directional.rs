//! Directional behaviour on the default biased data, averaged over seeds 1 to 3.

use dett_core::datagen::{generate, group_counts, Splits, SyntheticConfig};
use dett_core::debias::{
    build_upweighted, identification_model, identify_errors, train_erm, train_group_dro, train_jtt, Checkpoint,
    TrainConfig,
};
use dett_core::eval::{evaluate, select_best};
use dett_core::nncore::MlpArch;

const SEEDS: [u64; 3] = [1, 2, 3];

fn splits(seed: u64) -> Splits {
    generate(&SyntheticConfig { seed, ..SyntheticConfig::default() }).unwrap()
}

fn schedule(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 5,
        learning_rate: 0.03,
        eval_every: 1,
        seed,
        ..TrainConfig::default()
    }
}

fn arch(s: &Splits) -> MlpArch {
    MlpArch::new(s.train.d(), vec![8], 2)
}

fn selected_test_worst(history: &[Checkpoint], s: &Splits) -> f64 {
    let (i, _) = select_best(history, &s.val).unwrap();
    evaluate(&history[i].model, &s.test).unwrap().worst_group_accuracy
}

fn mean_worst(train: impl Fn(&Splits, u64) -> Vec<Checkpoint>) -> f64 {
    SEEDS
        .iter()
        .map(|&seed| {
            let s = splits(seed);
            selected_test_worst(&train(&s, seed), &s)
        })
        .sum::<f64>()
        / SEEDS.len() as f64
}

fn erm_worst() -> f64 {
    mean_worst(|s, seed| train_erm(&arch(s), &s.train, &schedule(seed)).unwrap().history)
}

#[test]
fn group_dro_beats_erm_on_worst_group() {
    let dro = mean_worst(|s, seed| train_group_dro(&arch(s), &s.train, &schedule(seed), 0.1).unwrap().history);
    let erm = erm_worst();
    assert!(dro > erm, "group DRO {dro} vs ERM {erm}");
}

#[test]
fn jtt_beats_erm_on_worst_group() {
    let jtt = mean_worst(|s, seed| {
        let cfg = schedule(seed);
        train_jtt(&arch(s), &s.train, &cfg, &cfg.identification(), 20.0).unwrap().history
    });
    let erm = erm_worst();
    assert!(jtt > erm, "JTT {jtt} vs ERM {erm}");
}

#[test]
fn identification_errors_concentrate_on_minority_groups() {
    let cfg = SyntheticConfig::default();
    let minority = cfg.minority_groups();
    for seed in SEEDS {
        let s = splits(seed);
        let id_cfg = schedule(seed).identification();
        let model = identification_model(&arch(&s), &s.train, &id_cfg).unwrap();
        let errors = identify_errors(&model, &s.train).unwrap();
        assert!(!errors.is_empty());
        let groups = s.train.groups();
        let in_minority = |i: &usize| minority.contains(&groups[*i]);
        let error_share = errors.indices().iter().filter(|i| in_minority(i)).count() as f64 / errors.len() as f64;
        let data_share = (0..s.train.len()).filter(in_minority).count() as f64 / s.train.len() as f64;
        assert!(error_share > data_share, "seed {seed}: {error_share} vs {data_share}");

        let up = build_upweighted(&s.train, &errors, 50.0).unwrap();
        let table = group_counts(&up);
        let multiplier = |g: usize| table.effective[g] / table.counts[g] as f64;
        let best = (0..table.counts.len())
            .filter(|&g| table.counts[g] > 0)
            .max_by(|&a, &b| multiplier(a).total_cmp(&multiplier(b)))
            .unwrap();
        assert!(minority.contains(&best), "seed {seed}: group {best} gains most");
    }
}
