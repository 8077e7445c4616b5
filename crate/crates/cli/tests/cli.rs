use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn trackdyn() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_trackdyn"));
    c.env_remove("PAVD_CONFIG");
    c
}

fn run(args: &[&str]) -> Output {
    trackdyn().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn resolved(dir: &Path) -> toml::Table {
    fs::read_to_string(dir.join("resolved-config.toml")).unwrap().parse().unwrap()
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// One lap of telemetry on `track` in `dir`.
fn gen_data(dir: &Path, track: &str, seed: &str) {
    let out = run(&["gen-data", "--track", track, "--laps", "1", "--seed", seed, "--out-dir", p(dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn gen_data_is_deterministic_and_sampled_at_50_hz() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen_data(&a, "train-track", "3");
    gen_data(&b, "train-track", "3");
    let csv = fs::read_to_string(a.join("telemetry.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(b.join("telemetry.csv")).unwrap());
    let series = trackdyn::telemetry::read_csv(&a.join("telemetry.csv")).unwrap();
    assert_eq!(series.rate_hz, 50.0);
    assert!((series.records[1].t - series.records[0].t - 0.02).abs() < 1e-12);
    assert!(a.join("true_params.toml").exists() && a.join("track.toml").exists());
    assert_eq!(resolved(&a)["seed"].as_integer(), Some(3));
}

#[test]
fn missing_track_file_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere.toml");
    let out = run(&["gen-data", "--track", p(&missing), "--out-dir", p(tmp.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nowhere.toml"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "seed = 1\n[gen_data]\ntrak = \"train-track\"\n").unwrap();
    let out = run(&["gen-data", "--config", p(&cfg), "--out-dir", p(tmp.path())]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let out = run(&["train", "--bogus-flag"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn config_from_environment_and_resolved_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        format!("seed = 11\nout_dir = \"{}\"\n[gen_data]\ntrack = \"test-track\"\nlaps = 1\n", p(&first)),
    )
    .unwrap();
    let out = trackdyn().env("PAVD_CONFIG", &cfg).arg("gen-data").output().unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = resolved(&first);
    assert_eq!(table["seed"].as_integer(), Some(11));
    assert_eq!(table["gen_data"]["track"].as_str(), Some("test-track"));

    let second = tmp.path().join("second");
    let out = run(&[
        "gen-data",
        "--config",
        p(&first.join("resolved-config.toml")),
        "--out-dir",
        p(&second),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(first.join("telemetry.csv")).unwrap(),
        fs::read_to_string(second.join("telemetry.csv")).unwrap()
    );
}

fn tiny_train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data",
        p(data),
        "--epochs",
        "1",
        "--gru-layers",
        "1",
        "--gru-hidden",
        "4",
        "--dense-widths",
        "5,5",
        "--out-dir",
        p(out),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn train_defaults_resume_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let data_dir = tmp.path().join("data");
    gen_data(&data_dir, "train-track", "0");
    let data = data_dir.join("telemetry.csv");

    let first = tmp.path().join("first");
    let out = tiny_train(&data, &first, &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let train = resolved(&first)["train"].clone();
    assert_eq!(train["lr"].as_float(), Some(1e-3));
    assert_eq!(train["batch_size"].as_integer(), Some(128));
    assert_eq!(train["preset"].as_str(), Some("reference"));
    let ck = json(first.join("checkpoint.json"));
    let step = ck["global_step"].as_u64().unwrap();
    assert!(step > 0);

    let second = tmp.path().join("second");
    let ck_path = first.join("checkpoint.json");
    let out = tiny_train(&data, &second, &["--resume", p(&ck_path)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let resumed = json(second.join("checkpoint.json"));
    assert_eq!(resumed["global_step"].as_u64(), Some(2 * step));
    assert_eq!(resumed["history"].as_array().unwrap().len(), 2);

    let eval_dir = tmp.path().join("eval");
    let out = run(&[
        "eval",
        "--data",
        p(&data),
        "--model",
        p(&second.join("checkpoint.json")),
        "--out-dir",
        p(&eval_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(eval_dir.join("report.json"));
    assert_eq!(report["horizon_steps"].as_u64(), Some(15));
    assert!(report["parameter_count"].as_u64().unwrap() > 0);
}

#[test]
fn eval_and_race_with_truth_params() {
    let tmp = tempfile::tempdir().unwrap();
    let data_dir = tmp.path().join("data");
    gen_data(&data_dir, "train-track", "0");
    let truth = data_dir.join("true_params.toml");

    let eval_dir = tmp.path().join("eval");
    let out = run(&[
        "eval",
        "--data",
        p(&data_dir.join("telemetry.csv")),
        "--params-file",
        p(&truth),
        "--horizon-ms",
        "300",
        "--out-dir",
        p(&eval_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(eval_dir.join("report.json"));
    assert_eq!(report["horizon_steps"].as_u64(), Some(15));
    assert_eq!(report["parameter_count"].as_u64(), Some(0));

    let race_dir = tmp.path().join("race");
    let out = run(&[
        "race",
        "--track",
        "train-track",
        "--params-file",
        p(&truth),
        "--horizon",
        "12",
        "--out-dir",
        p(&race_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let lap = json(race_dir.join("lap_result.json"));
    assert_eq!(lap["completed"].as_bool(), Some(true));
    assert_eq!(lap["violations"].as_u64(), Some(0));
    assert_eq!(resolved(&race_dir)["race"]["nmpc"]["horizon"].as_integer(), Some(12));
    assert!(race_dir.join("trace.csv").exists());

    let out = run(&["report", "--out-dir", p(tmp.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = fs::read_to_string(tmp.path().join("closed_loop_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
}

#[test]
fn race_needs_exactly_one_model_source() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["race", "--track", "train-track", "--out-dir", p(tmp.path())]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}
