use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fairrisk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairrisk"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn generate_split_train_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let run = |args: &[&str]| {
        let out = fairrisk(d, args);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    };
    run(&["generate", "--canonical", "600", "--seed", "2", "-o", "cohort.tsv"]);
    run(&["split", "--cohort", "cohort.tsv", "--folds", "3", "--seed", "1", "-o", "split.json"]);
    run(&[
        "train", "--cohort", "cohort.tsv", "--split", "split.json", "--fold", "1", "--criterion", "equalized_odds",
        "--distance", "mean", "--lambda", "0.5", "-o", "model.json",
    ]);
    run(&["evaluate", "--cohort", "cohort.tsv", "--split", "split.json", "--checkpoint", "model.json", "-o", "report.json"]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["overall"]["count"].as_u64().unwrap(), 60);
    assert_eq!(report["groups"].as_array().unwrap().len(), 2);
    assert_eq!(report["meta"]["lambda"].as_f64().unwrap(), 0.5);
}

#[test]
fn extract_writes_cohort_vocabulary_and_split() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut text = String::from("#fairrisk-timelines v1\tattribute=sex\n");
    for i in 0..30 {
        text += &format!("S\tp{i}\t{}\t{}\t1\n", if i % 2 == 0 { "F" } else { "M" }, i % 3 == 0);
        text += &format!("E\tp{i}\t42\t-{}\t{}\t2\t8\n", 30 + i, i as f64 * 0.5);
    }
    let text = text.replace("\ttrue\t", "\t1\t").replace("\tfalse\t", "\t0\t");
    fs::write(d.join("timelines.tsv"), text).unwrap();
    let out = fairrisk(d, &["extract", "--timelines", "timelines.tsv", "--folds", "2", "-o", "ex"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["cohort.tsv", "vocabulary.json", "split.json"] {
        assert!(d.join("ex").join(name).exists(), "{name}");
    }
}

#[test]
fn sweep_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("exp.toml"),
        r#"
output_dir = "run"
seed = 1
[cohort]
canonical = { n = 500, seed = 1 }
[model]
preset = "synthetic_small"
max_iterations = 3
batches_per_iteration = 2
[penalty]
criterion = "demographic_parity"
distance = "mmd"
[lambda]
count = 2
min = 0.1
max = 1.0
[protocol]
folds = 2
"#,
    )
    .unwrap();
    let out = fairrisk(d, &["sweep", "exp.toml"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read(d.join("run/report.csv")).unwrap();
    let out = fairrisk(d, &["report", "run", "--out", "again"]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(d.join("again/report.csv")).unwrap(), csv);
    let out = fairrisk(d, &["report", "run", "--format", "json", "--out", "again"]);
    assert_eq!(code(&out), 0);
    assert!(d.join("again/report.json").exists());

    // a missing cell makes the report partial
    fs::remove_file(d.join("run/cells/fold1_lambda2.json")).unwrap();
    assert_eq!(code(&fairrisk(d, &["report", "run", "--out", "partial"])), 3);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    // usage and configuration problems
    assert_eq!(code(&fairrisk(d, &["generate"])), 1);
    assert_eq!(code(&fairrisk(d, &["frobnicate"])), 1);
    fs::write(d.join("bad.toml"), "output_dir = 3\n").unwrap();
    assert_eq!(code(&fairrisk(d, &["sweep", "bad.toml"])), 1);
    assert_eq!(code(&fairrisk(d, &["sweep", "missing.toml"])), 1);
    assert_eq!(code(&fairrisk(d, &["--help"])), 0);

    // malformed data
    fs::write(
        d.join("bad.tsv"),
        "#fairrisk-cohort v1\tattribute=sex\tvocab_size=2\tgroups=F,M\nr1\tF\t2\t-\t0:1\n",
    )
    .unwrap();
    let out = fairrisk(d, &["split", "--cohort", "bad.tsv", "-o", "s.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("r1"));
    assert_eq!(code(&fairrisk(d, &["split", "--cohort", "absent.tsv", "-o", "s.json"])), 2);

    // a cell that cannot write its checkpoint fails the sweep partially
    fs::write(
        d.join("exp.toml"),
        "output_dir = \"run\"\n[cohort]\ncanonical = { n = 300 }\n[model]\npreset = \"synthetic_small\"\nmax_iterations = 2\nbatches_per_iteration = 2\n[penalty]\ncriterion = \"equal_opportunity\"\ndistance = \"mean\"\n[lambda]\ncount = 1\n[protocol]\nfolds = 1\n",
    )
    .unwrap();
    fs::create_dir_all(d.join("run/models/fold0_lambda1.json")).unwrap();
    assert_eq!(code(&fairrisk(d, &["sweep", "exp.toml"])), 3);
}
