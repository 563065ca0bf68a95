use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::Command;

use dett_cli::commands::{self, RunRequest, Source};
use dett_cli::compare::{build_rows, compare};
use dett_cli::config::Config;
use dett_cli::gradcheck::{self, Fault};
use dett_cli::record::{load_records, ResultRecord};
use dett_cli::runner::{record_path, run};
use dett_cli::spec::{CellSpec, ExperimentSpec, Method};
use dett_core::datagen::Dataset;
use dett_core::nncore::{save_checkpoint, Matrix, MlpArch};
use proptest::prelude::*;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dett-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn smoke(extra: &str) -> ExperimentSpec {
    ExperimentSpec::load(Some("smoke"), Some(extra)).unwrap()
}

fn without_wall_time(records: Vec<ResultRecord>) -> Vec<ResultRecord> {
    records
        .into_iter()
        .map(|r| ResultRecord { wall_time: 0.0, ..r })
        .collect()
}

#[test]
fn three_seeds_of_erm_give_three_test_records() {
    let out = scratch("erm3");
    let spec = smoke("seeds = 1, 2, 3\nmethods = erm\n");
    let summary = run(&spec, &out, 1).unwrap();
    assert_eq!(summary.cells_trained, 3);
    let tests: Vec<_> = load_records(&out)
        .unwrap()
        .into_iter()
        .filter(|r| r.split == "test" && r.method == "erm")
        .collect();
    assert_eq!(tests.len(), 3);
    assert_eq!(tests.iter().map(|r| r.seed).collect::<BTreeSet<_>>(), BTreeSet::from([1, 2, 3]));
    assert!(out.join("manifest.json").exists());
}

#[test]
fn rerun_is_fully_cached_and_deleted_cells_are_regenerated_alone() {
    let out = scratch("cache");
    let spec = smoke("methods = erm, kd, simkd\n");
    let first = run(&spec, &out, 2).unwrap();
    assert_eq!(first.teachers_trained, 1);
    assert_eq!(first.cells_trained, spec.cells().len());
    let before = std::fs::read_to_string(record_path(&out, "simkd", 1, "test")).unwrap();

    let second = run(&spec, &out, 2).unwrap();
    assert_eq!((second.teachers_trained, second.cells_trained), (0, 0));
    assert_eq!(second.cells_cached, spec.cells().len());

    std::fs::remove_file(record_path(&out, "simkd", 1, "test")).unwrap();
    let third = run(&spec, &out, 1).unwrap();
    assert_eq!((third.teachers_trained, third.cells_trained), (0, 1));
    let trained: Vec<_> = third.cells.iter().filter(|c| c.status == "trained").collect();
    assert_eq!(trained[0].id, "simkd");
    let after = std::fs::read_to_string(record_path(&out, "simkd", 1, "test")).unwrap();
    let strip = |s: &str| s.lines().filter(|l| !l.contains("wall_time")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&before), strip(&after));
}

#[test]
fn fresh_directories_give_identical_records() {
    let spec = smoke("methods = erm, jtt, group_dro, kd, kd_up, simkd, dett, dett_ood\n");
    let a = scratch("det-a");
    let b = scratch("det-b");
    run(&spec, &a, 1).unwrap();
    run(&spec, &b, 3).unwrap();
    let ra = without_wall_time(load_records(&a).unwrap());
    let rb = without_wall_time(load_records(&b).unwrap());
    assert_eq!(ra.len(), 2 * (spec.cells().len() + 1));
    assert_eq!(ra, rb);
    for entry in std::fs::read_dir(a.join("records")).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        assert!(name.ends_with(".json"), "stray file {name}");
    }
}

#[test]
fn failing_cells_are_recorded_and_the_run_continues() {
    let out = scratch("fail");
    let spec = smoke("methods = erm, simkd\nstudent.feature_learning_rate = 1e12\n");
    let summary = run(&spec, &out, 1).unwrap();
    let failed = summary.failures();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].id, "simkd");
    assert!(failed[0].error.is_some());
    assert!(record_path(&out, "erm", 1, "test").exists());
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"failed\""));
}

#[test]
fn table1_preset_lists_the_baseline_rows() {
    let spec = ExperimentSpec::from_preset("table1").unwrap();
    assert_eq!(spec.seeds, vec![1, 2, 3]);
    let ids: Vec<String> = spec.cells().iter().map(CellSpec::id).collect();
    for want in ["erm", "kd_alpha-0.5", "kd_alpha-1", "simkd", "dett_lambda_up-5", "dett_lambda_up-50", "dett_ood"] {
        assert!(ids.contains(&want.to_string()), "{want} missing from {ids:?}");
    }
    assert!(ids.iter().any(|i| i.starts_with("jtt")));
    assert!(ids.iter().any(|i| i.starts_with("group_dro")));
    assert_eq!(spec.student.hidden, vec![8]);
    assert_eq!(spec.teacher.hidden, vec![32, 32]);
}

#[test]
fn ablation_table_has_transplant_by_upweight_grid() {
    let out = scratch("ablation");
    let spec = ExperimentSpec::load(
        Some("ablation"),
        Some("seeds = 1\ndata.n_train = 240\ndata.n_val = 40\ndata.n_test = 80\ndata.n_pool = 240\nteacher.epochs = 3\nstudent.epochs = 2\n"),
    )
    .unwrap();
    run(&spec, &out, 1).unwrap();
    let cmp = compare(&out).unwrap();
    let students: Vec<_> = cmp.rows.iter().filter(|r| !r.teacher).collect();
    let flags: BTreeSet<(String, bool, bool)> = students
        .iter()
        .map(|r| (r.method.clone(), r.transplant, r.upweight))
        .collect();
    assert_eq!(
        flags,
        BTreeSet::from([
            ("dett".to_string(), true, true),
            ("simkd".to_string(), true, false),
            ("kd_up".to_string(), false, true),
            ("kd".to_string(), false, false),
        ])
    );
    assert!(out.join("compare.csv").exists());
    assert!(cmp.text.matches("**").count() >= 2);
}

#[test]
fn compare_on_an_empty_directory_reports_no_records() {
    let out = scratch("empty");
    std::fs::create_dir_all(out.join("records")).unwrap();
    assert!(compare(&out).is_err());
    assert!(build_rows(&[]).is_empty());
}

fn tiny_dataset() -> Dataset {
    let x = Matrix::from_rows(&[[0.5, -1.0], [1.5, 0.25], [-0.75, 2.0], [0.0, 0.0]]).unwrap();
    Dataset::new(x, vec![0, 1, 1, 0], vec![0, 0, 1, 1], 2, 2).unwrap()
}

#[test]
fn exported_features_match_an_independent_forward_pass() {
    let model = MlpArch::new(2, vec![4], 2).with_projector(3).init(9).unwrap();
    let data = tiny_dataset();
    let csv = dett_cli::export::features_csv(&model, &data).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "y,a,group,f0,f1,f2");
    assert_eq!(lines.len(), 5);
    for (i, line) in lines[1..].iter().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 6);
        let (y, a) = (data.raw_labels()[i], data.attrs()[i]);
        assert_eq!(cells[..3], [y.to_string(), a.to_string(), (2 * y + a).to_string()]);
        let x = data.x().row(i);
        let l1 = &model.feature_layers()[0];
        let hidden: Vec<f64> = (0..4)
            .map(|r| (l1.bias[r] + (0..2).map(|c| l1.weight.get(r, c) * x[c]).sum::<f64>()).max(0.0))
            .collect();
        let p = model.projector().unwrap();
        for j in 0..3 {
            let want = p.bias[j] + (0..4).map(|c| p.weight.get(j, c) * hidden[c]).sum::<f64>();
            let got: f64 = cells[3 + j].parse().unwrap();
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
        }
    }
    assert_eq!(csv, dett_cli::export::features_csv(&model, &data).unwrap());
}

#[test]
fn gradcheck_passes_and_catches_a_flipped_gradient() {
    let reports = gradcheck::run(0, Fault::None).unwrap();
    assert_eq!(reports.len(), 3);
    for r in &reports {
        assert!(r.passed, "{r}");
        assert!(r.max_rel_error < 1e-6);
        assert_eq!(r.to_string().lines().count(), 1);
    }
    let faulty = gradcheck::run(0, Fault::FlipCrossEntropySign).unwrap();
    assert!(!faulty[0].passed);
    assert!(faulty[1].passed && faulty[2].passed);
}

#[test]
fn single_run_writes_checkpoint_metrics_and_curve() {
    let out = scratch("single");
    let source = Source {
        preset: Some("smoke".into()),
        config: None,
        seed: Some(5),
    };
    let req = RunRequest {
        source: source.clone(),
        cell: CellSpec::new(Method::Erm, &[]),
        teacher_role: false,
        teacher: None,
        data: None,
    };
    let r = commands::single_run(&req, &out).unwrap();
    let curve = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,split,avg_acc,worst_acc,acc_y0_a0,acc_y0_a1,acc_y1_a0,acc_y1_a1"
    );
    assert_eq!(lines.count(), 2 * 2);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["method"], "erm");
    assert_eq!(metrics["seed"], 5);
    assert_eq!(metrics["groups"].as_array().unwrap().len(), 4);
    assert_eq!(metrics["worst"].as_f64().unwrap(), r.test.worst_group_accuracy);

    let distill = RunRequest {
        cell: CellSpec::new(Method::Dett, &[("lambda_up", 5.0)]),
        teacher: None,
        ..req
    };
    assert!(commands::single_run(&distill, &scratch("single-no-teacher")).is_err());
}

fn dett() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dett"))
}

fn ok(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn binary_gen_train_distill_eval_export_round_trip() {
    let dir = scratch("bin");
    let data = dir.join("data");
    ok(dett().args(["gen", "--preset", "smoke", "--seed", "2", "--out"]).arg(&data));
    for f in commands::DATA_FILES {
        assert!(data.join(f).exists());
    }
    let teacher = dir.join("teacher");
    ok(dett()
        .args(["train", "--preset", "smoke", "--seed", "2", "--method", "group_dro", "--teacher-role", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&teacher));
    let student = dir.join("student");
    ok(dett()
        .args(["distill", "--preset", "smoke", "--seed", "2", "--method", "dett", "--lambda-up", "20", "--teacher"])
        .arg(teacher.join("model.ckpt"))
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&student));
    let json = ok(dett()
        .args(["eval", "--method", "dett", "--seed", "2", "--checkpoint"])
        .arg(student.join("model.ckpt"))
        .arg("--data")
        .arg(data.join("test.dett")));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    for key in ["method", "seed", "hyperparams", "avg", "worst", "groups"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let features = dir.join("features.csv");
    ok(dett()
        .arg("export-features")
        .arg("--checkpoint")
        .arg(student.join("model.ckpt"))
        .arg("--data")
        .arg(data.join("val.dett"))
        .arg("--out")
        .arg(&features));
    let csv = std::fs::read_to_string(&features).unwrap();
    // Transplanted student: projector maps to the teacher width of 32.
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 3 + 32);
    assert_eq!(csv.lines().count(), 1 + 40);
}

#[test]
fn binary_gradcheck_exit_status_reflects_the_result() {
    let stdout = ok(dett().arg("gradcheck"));
    assert_eq!(stdout.lines().count(), 3);
    let bad = dett().args(["gradcheck", "--inject-ce-sign-flip"]).output().unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn binary_rejects_unknown_config_keys() {
    let dir = scratch("badkey");
    let cfg = dir.join("bad.cfg");
    std::fs::write(&cfg, "data.bias_roh = 0.9\n").unwrap();
    let out = dett().args(["gen", "--config"]).arg(&cfg).arg("--out").arg(&dir).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.bias_roh"));
}

#[test]
fn eval_reads_a_saved_checkpoint() {
    let dir = scratch("eval");
    let model = MlpArch::new(2, vec![3], 2).init(1).unwrap();
    save_checkpoint(&model, &dir.join("m.ckpt")).unwrap();
    dett_core::datagen::save_dataset(&tiny_dataset(), &dir.join("d.dett")).unwrap();
    let m = commands::eval(&dir.join("m.ckpt"), &dir.join("d.dett"), "x", 0).unwrap();
    assert_eq!(m.groups.len(), 4);
    assert!(m.groups.iter().all(|g| g.count == 1));
    assert!((0.0..=1.0).contains(&m.avg));
}

#[test]
fn pool_size_follows_the_data_section() {
    let spec = smoke("data.n_pool = 123\n");
    assert_eq!(spec.n_pool, 123);
    assert_eq!(spec.data.n_train, 240);
    assert_eq!(smoke("").n_pool, 240);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_text_round_trips(values in prop::collection::btree_map("[a-z]{1,6}(\\.[a-z]{1,6})?", "[a-z0-9.,_ ]{0,12}", 0..8)) {
        let mut cfg = Config::parse("").unwrap();
        for (k, v) in &values {
            cfg.set(k, v.trim());
        }
        let again = Config::parse(&cfg.to_text()).unwrap();
        for (k, v) in &values {
            prop_assert_eq!(again.get_str(k), Some(v.trim().to_string()));
        }
    }

    #[test]
    fn later_assignments_override_earlier_ones(a in 0u32..1000, b in 0u32..1000) {
        let cfg = Config::parse(&format!("x = {a}\nx = {b}\n")).unwrap();
        prop_assert_eq!(cfg.get::<u32>("x").unwrap(), Some(b));
    }
}

#[test]
fn directories_refuse_results_from_different_settings() {
    let out = scratch("settings");
    run(&smoke("methods = erm\n"), &out, 1).unwrap();
    run(&smoke("methods = erm, kd\n"), &out, 1).unwrap();
    let err = run(&smoke("methods = erm\ndata.bias_rho = 0.9\n"), &out, 1).unwrap_err();
    assert!(err.to_string().contains("different data or training settings"), "{err}");
}
