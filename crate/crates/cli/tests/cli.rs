use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn codist(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codist"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn codist")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn breast_cancer() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/breast_cancer.csv")
}

/// Header plus the data rows in `range`.
fn slice_csv(dst: &Path, range: std::ops::Range<usize>) {
    let text = fs::read_to_string(breast_cancer()).unwrap();
    let mut lines = text.lines();
    let mut out = String::from(lines.next().unwrap());
    out.push('\n');
    for line in lines.skip(range.start).take(range.len()) {
        out.push_str(line);
        out.push('\n');
    }
    fs::write(dst, out).unwrap();
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    slice_csv(&d.join("a.csv"), 0..150);
    slice_csv(&d.join("b.csv"), 150..300);
    slice_csv(&d.join("test.csv"), 300..569);
    let out = codist(
        &[
            "schema",
            "--data",
            "a.csv",
            "--class-column",
            "diagnosis",
            "--out",
            "schema.toml",
        ],
        d,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    fs::write(d.join("tree.toml"), "algorithm = \"decision-tree\"\nmax_depth = 3\n").unwrap();
    fs::write(d.join("nb.toml"), "algorithm = \"gaussian-nb\"\n").unwrap();
    dir
}

fn experiment(alpha: f64) -> String {
    format!(
        r#"test_data = "test.csv"

[distillation]
seed = 11
alpha = {alpha}

[[participants]]
name = "tree"
data = "a.csv"
schema = "schema.toml"
model = {{ algorithm = "decision-tree", max_depth = 3 }}

[[participants]]
name = "nb"
data = "b.csv"
schema = "schema.toml"
model = {{ algorithm = "gaussian-nb" }}
"#
    )
}

fn read_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn train_writes_model_file() {
    let dir = setup();
    let out = codist(
        &[
            "train",
            "--data",
            "a.csv",
            "--schema",
            "schema.toml",
            "--model",
            "tree.toml",
            "--out",
            "tree.model",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("train accuracy"));
    assert!(stdout.contains("validation accuracy"));
    let bytes = fs::read(dir.path().join("tree.model")).unwrap();
    assert_eq!(&bytes[..7], b"CODIST1");
}

#[test]
fn train_rejects_wrong_class_column() {
    let dir = setup();
    let schema = fs::read_to_string(dir.path().join("schema.toml")).unwrap();
    fs::write(
        dir.path().join("bad.toml"),
        schema.replace("\"diagnosis\"", "\"outcome\""),
    )
    .unwrap();
    let out = codist(
        &[
            "train",
            "--data",
            "a.csv",
            "--schema",
            "bad.toml",
            "--model",
            "tree.toml",
            "--out",
            "m.model",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("outcome"), "{}", stderr(&out));
    assert!(!dir.path().join("m.model").exists());
}

#[test]
fn train_missing_file_is_validation_error() {
    let dir = setup();
    let out = codist(
        &[
            "train",
            "--data",
            "nope.csv",
            "--schema",
            "schema.toml",
            "--model",
            "tree.toml",
            "--out",
            "m.model",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.csv"));
}

#[test]
fn distill_writes_square_zero_diagonal_matrix() {
    let dir = setup();
    fs::write(dir.path().join("exp.toml"), experiment(0.5)).unwrap();
    let out = codist(&["distill", "exp.toml", "--out", "report", "-q"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let report = dir.path().join("report");
    for file in [
        "metrics.csv",
        "count_matrix.csv",
        "summary.csv",
        "lambdas.csv",
        "manifest.toml",
    ] {
        assert!(report.join(file).exists(), "{file} missing");
    }
    assert!(report.join("models/tree.model").exists());
    let matrix = read_rows(&report.join("count_matrix.csv"));
    assert_eq!(matrix.len(), 3);
    assert_eq!(matrix[0], ["student", "tree", "nb"]);
    for (i, row) in matrix[1..].iter().enumerate() {
        assert_eq!(row.len(), 3);
        assert_eq!(row[i + 1], "0");
    }
    let metrics = read_rows(&report.join("metrics.csv"));
    assert_eq!(metrics.len(), 3);

    let shown = codist(&["report", "report"], dir.path());
    assert!(shown.status.success(), "{}", stderr(&shown));
    assert!(String::from_utf8_lossy(&shown.stdout).contains("accuracy_after"));
}

#[test]
fn distill_rejects_alpha_out_of_range() {
    let dir = setup();
    fs::write(dir.path().join("exp.toml"), experiment(1.5)).unwrap();
    let out = codist(&["distill", "exp.toml", "--out", "report"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("alpha"));
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let dir = setup();
    fs::write(dir.path().join("exp.toml"), experiment(0.5)).unwrap();
    let first = codist(&["distill", "exp.toml", "--out", "r1", "-q"], dir.path());
    assert!(first.status.success(), "{}", stderr(&first));
    let second = codist(&["distill", "r1/manifest.toml", "--out", "r2", "-q"], dir.path());
    assert!(second.status.success(), "{}", stderr(&second));
    for file in ["metrics.csv", "count_matrix.csv"] {
        let a = fs::read(dir.path().join("r1").join(file)).unwrap();
        let b = fs::read(dir.path().join("r2").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
}

fn mixture(dir: &Path) {
    let out = codist(
        &[
            "make-scenario",
            "gaussian-mixture",
            "--classes",
            "4",
            "--rows-per-class",
            "100",
            "--out-dir",
            "mix",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
}

fn class_counts(path: &Path) -> BTreeMap<String, usize> {
    let rows = read_rows(path);
    let label = rows[0].iter().position(|h| h == "label").unwrap();
    let mut counts = BTreeMap::new();
    for row in &rows[1..] {
        *counts.entry(row[label].clone()).or_insert(0) += 1;
    }
    counts
}

fn undersample(dir: &Path, parts: &str, rate: &str, out_dir: &str) -> Output {
    codist(
        &[
            "make-scenario",
            "undersample-split",
            "--input",
            "mix/data.csv",
            "--class-column",
            "label",
            "--parts",
            parts,
            "--rate",
            rate,
            "--out-dir",
            out_dir,
        ],
        dir,
    )
}

#[test]
fn undersample_split_keeps_five_percent_of_one_class() {
    let dir = tempfile::tempdir().unwrap();
    mixture(dir.path());
    let out = undersample(dir.path(), "4", "0.95", "parts");
    assert!(out.status.success(), "{}", stderr(&out));
    for i in 0..4 {
        let counts = class_counts(&dir.path().join(format!("parts/part_{i}.csv")));
        for (c, label) in ["c0", "c1", "c2", "c3"].iter().enumerate() {
            let n = counts.get(*label).copied().unwrap_or(0);
            // 100 rows per class spread over 4 parts
            let expected = if c == i { 1 } else { 25 };
            assert_eq!(n, expected, "part {i} class {label}");
        }
    }
    assert!(dir.path().join("parts/schema.toml").exists());
}

#[test]
fn undersample_rate_zero_is_plain_partition() {
    let dir = tempfile::tempdir().unwrap();
    mixture(dir.path());
    let out = undersample(dir.path(), "4", "0", "parts");
    assert!(out.status.success(), "{}", stderr(&out));
    let mut total = 0;
    for i in 0..4 {
        let counts = class_counts(&dir.path().join(format!("parts/part_{i}.csv")));
        assert!(counts.values().all(|&n| n == 25), "{counts:?}");
        total += counts.values().sum::<usize>();
    }
    assert_eq!(total, 400);
}

#[test]
fn undersample_more_parts_than_classes_fails() {
    let dir = tempfile::tempdir().unwrap();
    mixture(dir.path());
    let out = undersample(dir.path(), "5", "0.95", "parts");
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("4 classes"), "{}", stderr(&out));
}

#[test]
fn random_feature_drop_writes_two_participants() {
    let dir = tempfile::tempdir().unwrap();
    mixture(dir.path());
    let out = codist(
        &[
            "make-scenario",
            "random-feature-drop",
            "--input",
            "mix/data.csv",
            "--class-column",
            "label",
            "--shared",
            "4",
            "--out-dir",
            "drop",
            "--seed",
            "5",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let a = read_rows(&dir.path().join("drop/a.csv"));
    let b = read_rows(&dir.path().join("drop/b.csv"));
    let test = read_rows(&dir.path().join("drop/test.csv"));
    assert_eq!(test[0].len(), 9);
    let shared = a[0].iter().filter(|h| b[0].contains(h) && *h != "label").count();
    assert_eq!(shared, 4);
    assert!(dir.path().join("drop/a.schema.toml").exists());
    assert!(dir.path().join("drop/b.schema.toml").exists());
}

#[test]
fn scenarios_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    mixture(dir.path());
    assert!(undersample(dir.path(), "4", "0.95", "p1").status.success());
    assert!(undersample(dir.path(), "4", "0.95", "p2").status.success());
    for i in 0..4 {
        let name = format!("part_{i}.csv");
        assert_eq!(
            fs::read(dir.path().join("p1").join(&name)).unwrap(),
            fs::read(dir.path().join("p2").join(&name)).unwrap()
        );
    }
}
