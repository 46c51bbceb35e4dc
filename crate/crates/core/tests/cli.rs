use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mtmcmc"));
    c.env("MTMCMC_THREADS", "1");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

const BINARY_CONFIG: &str = r#"
seed = 3
d_max = 3
split_prior = 0.5
burn_in = 100
t_end = 200

[synth]
true_model = "model_a"
n_binary = 5
n_train = 80
n_test = 40
model_seed = 1
data_seed = 2

[data]
target = "y"
binary = ["x0", "x1", "x2", "x3", "x4"]
"#;

fn synth_into(dir: &TempDir, cfg: &Path, sub: &str) -> PathBuf {
    let out = dir.path().join(sub);
    let o = run(&["--config", path(cfg), "--out-dir", path(&out), "synth"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn synth_is_deterministic_and_complete() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", BINARY_CONFIG);
    let a = synth_into(&dir, &cfg, "a");
    let b = synth_into(&dir, &cfg, "b");
    for f in ["train.csv", "test.csv", "true_model.json", "metrics.json", "effective_config.toml"] {
        assert!(a.join(f).exists(), "missing {f}");
    }
    assert_eq!(fs::read(a.join("train.csv")).unwrap(), fs::read(b.join("train.csv")).unwrap());
    assert_ne!(fs::read(a.join("train.csv")).unwrap(), fs::read(a.join("test.csv")).unwrap());
    let rows = fs::read_to_string(a.join("train.csv")).unwrap().lines().count();
    assert_eq!(rows, 81);
    let m = json(&a.join("metrics.json"));
    let be = m["bayes_error_test"].as_f64().unwrap();
    assert!((0.0..=0.5).contains(&be));
}

#[test]
fn fit_predict_reports_error_ratio() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", BINARY_CONFIG);
    let data = synth_into(&dir, &cfg, "data");
    let out = dir.path().join("fit");
    let o = run(&[
        "--config",
        path(&cfg),
        "--out-dir",
        path(&out),
        "fit-predict",
        "--train",
        path(&data.join("train.csv")),
        "--test",
        path(&data.join("test.csv")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("metrics.json"));
    let err = m["error_ratio"].as_f64().unwrap();
    let acc = m["acceptance_ratio"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&err));
    assert!((0.0..=1.0).contains(&acc));
    assert!(m["seconds_per_iteration"].as_f64().unwrap() > 0.0);
    assert_eq!(m["n_test"], 40);
    let preds = fs::read_to_string(out.join("predictions.csv")).unwrap();
    let mut lines = preds.lines();
    assert_eq!(lines.next().unwrap(), "index,prediction,y,p0,p1");
    assert_eq!(lines.count(), 40);

    // a different seed on the command line is reflected in the effective config
    let out2 = dir.path().join("fit2");
    let o = run(&[
        "--config",
        path(&cfg),
        "--seed",
        "99",
        "--out-dir",
        path(&out2),
        "fit-predict",
        "--train",
        path(&data.join("train.csv")),
        "--test",
        path(&data.join("test.csv")),
    ]);
    assert!(o.status.success());
    assert!(fs::read_to_string(out2.join("effective_config.toml")).unwrap().contains("seed = 99"));
}

#[test]
fn fit_predict_regression_reports_mse() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.toml",
        r#"
seed = 5
d_max = 2
split_prior = 0.5
loss = "squared"
burn_in = 50
t_end = 100

[leaf]
family = "linreg_normal_gamma"
shape = 2.0
rate = 1.0

[ranges]
x0 = [0.0, 1.0]
x1 = [0.0, 1.0]

[synth]
n_continuous = 2
n_binary = 1
n_train = 60
n_test = 20

[data]
target = "y"
continuous = ["x0", "x1"]
binary = ["x2"]
"#,
    );
    let data = synth_into(&dir, &cfg, "data");
    let out = dir.path().join("fit");
    let o = run(&[
        "--config",
        path(&cfg),
        "--out-dir",
        path(&out),
        "fit-predict",
        "--train",
        path(&data.join("train.csv")),
        "--test",
        path(&data.join("test.csv")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("metrics.json"));
    assert!(m["mse"].as_f64().unwrap() >= 0.0);
    assert!(m.get("error_ratio").is_none_or(|v| v.is_null()));
    let header = fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert!(header.starts_with("index,prediction,y\n"));
}

#[test]
fn likelihood_trace_has_one_row_per_iteration() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", BINARY_CONFIG);
    let data = synth_into(&dir, &cfg, "data");
    let out = dir.path().join("trace");
    let o = run(&[
        "--config",
        path(&cfg),
        "--out-dir",
        path(&out),
        "likelihood-trace",
        "--train",
        path(&data.join("train.csv")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(out.join("trace.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1 + 100 + 200);
    assert_eq!(&rows[0][1], "init");
    assert_eq!(&rows[100][1], "burn_in");
    assert_eq!(&rows[101][1], "sample");
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() <= 0.0));
}

#[test]
fn small_experiments_write_their_tables() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.toml",
        r#"
seed = 1
d_max = 2
split_prior = 0.5
burn_in = 50
t_end = 200

[synth]
true_model = "model_a"
n_binary = 3
n_train = 40

[experiment]
kinds = ["uniform", "posterior_truncated"]
replications = 2
accepted = 30
checkpoint_every = 10
models = ["model_a", "model_b"]
"#,
    );
    let out = dir.path().join("conv");
    let o = run(&["--config", path(&cfg), "--out-dir", path(&out), "convergence"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let conv = fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert!(conv.starts_with("kind,accepted,js_mean\nuniform,0,"));
    assert!(conv.contains("posterior_truncated,30,"));
    assert!(out.join("convergence_runs.csv").exists());

    let out = dir.path().join("cmp");
    let o = run(&["--config", path(&cfg), "--out-dir", path(&out), "proposal-compare"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("acceptance.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 * 4);
    for line in table.lines().skip(1) {
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let missing = run(&["--config", "/nonexistent/config.toml", "--out-dir", path(&out), "synth"]);
    assert_eq!(missing.status.code(), Some(1));

    let bad = write(&dir, "bad.toml", "d_max = 3\nsplit_prior = 1.5\n");
    assert_eq!(run(&["--config", path(&bad), "--out-dir", path(&out), "synth"]).status.code(), Some(1));

    let unknown = write(&dir, "unknown.toml", "d_max = 3\nnot_a_key = 1\n");
    assert_eq!(run(&["--config", path(&unknown), "--out-dir", path(&out), "synth"]).status.code(), Some(1));

    assert_eq!(run(&["--bogus-flag"]).status.code(), Some(1));

    let cfg = write(&dir, "c.toml", BINARY_CONFIG);
    let o = run(&[
        "--config",
        path(&cfg),
        "--out-dir",
        path(&out),
        "fit-predict",
        "--train",
        "/nonexistent/train.csv",
        "--test",
        "/nonexistent/test.csv",
    ]);
    assert_eq!(o.status.code(), Some(1));

    // a column the schema does not mention
    let train = write(&dir, "t.csv", "x0,x1,x2,x3,x4,extra,y\n0,1,0,1,0,3,1\n");
    let o = run(&[
        "--config",
        path(&cfg),
        "--out-dir",
        path(&out),
        "fit-predict",
        "--train",
        path(&train),
        "--test",
        path(&train),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["fit-predict", "synth", "convergence", "proposal-compare", "likelihood-trace"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}
