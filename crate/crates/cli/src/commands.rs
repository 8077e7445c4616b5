use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;
use trackdyn::checkpoint::Checkpoint;
use trackdyn::dynamics::ModelParams;
use trackdyn::estimator::{fixed_params_loss, train_with_progress, DynamicsModel, EpochStats};
use trackdyn::evaluation::{evaluate_open_loop, EvalConfig, REPORT_CSV_HEADER};
use trackdyn::guard::{validate, BoundsProfile, ProfileName};
use trackdyn::nn::Network;
use trackdyn::raceloop::{run_race, PurePursuitConfig};
use trackdyn::telemetry::{
    generate_synthetic, make_windows, read_csv, split_windows, write_csv_string, GeneratorConfig,
    SplitPolicy, TrackDefinition,
};
use trackdyn::Error;

use crate::config::{RunConfig, TrainSettings};
use crate::error::CliError;

pub fn write_output(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::internal(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::internal(format!("cannot write {}: {e}", path.display())))
}

fn load_params(path: &Path) -> Result<ModelParams, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read parameters {}: {e}", path.display())))?;
    ModelParams::from_toml_str(&text).map_err(|e| CliError::from(e).context(&path.display().to_string()))
}

fn load_checkpoint(path: &Path, profile: ProfileName) -> Result<Checkpoint, CliError> {
    let ck = Checkpoint::load(path).map_err(|e| CliError::from(e).context("loading checkpoint"))?;
    if ck.profile.name != profile {
        return Err(CliError::input(format!(
            "checkpoint {} was trained for the {} profile, the run uses {profile}",
            path.display(),
            ck.profile.name
        )));
    }
    Ok(ck)
}

fn load_track(name_or_path: &str) -> Result<TrackDefinition, CliError> {
    TrackDefinition::resolve(name_or_path).map_err(|e| match e {
        Error::Io { path, source } => CliError::input(format!("track file {}: {source}", path.display())),
        other => CliError::from(other).context(&format!("track `{name_or_path}`")),
    })
}

/// Either a checkpoint or a parameter file, never both.
fn load_model(
    model: Option<&PathBuf>,
    params_file: Option<&PathBuf>,
    history_len: usize,
    profile: ProfileName,
) -> Result<(DynamicsModel, Option<Checkpoint>), CliError> {
    match (model, params_file) {
        (Some(m), None) => {
            let ck = load_checkpoint(m, profile)?;
            let model = DynamicsModel::Learned {
                net: ck.network.clone(),
                profile: ck.profile,
            };
            Ok((model, Some(ck)))
        }
        (None, Some(p)) => Ok((
            DynamicsModel::Fixed {
                params: load_params(p)?,
                history_len,
            },
            None,
        )),
        (Some(_), Some(_)) => Err(CliError::input("give either --model or --params-file, not both")),
        (None, None) => Err(CliError::input("one of --model or --params-file is required")),
    }
}

pub fn gen_data(cfg: &RunConfig) -> Result<(), CliError> {
    let s = cfg.gen_data.clone().unwrap_or_default();
    let track = load_track(&s.track)?;
    let truth = match &s.params_file {
        Some(p) => load_params(p)?,
        None => ModelParams::small_scale_reference(),
    };
    let profile = BoundsProfile::builtin(cfg.profile);
    let bad = validate(&truth, &profile.bounds);
    if !bad.is_empty() {
        return Err(CliError::input(format!(
            "ground-truth parameters violate the {} bounds: {bad:?}",
            cfg.profile
        )));
    }
    let gcfg = GeneratorConfig {
        rate_hz: s.rate_hz,
        laps: s.laps,
        actuator_tau: s.actuator_tau,
        pursuit: PurePursuitConfig {
            lookahead: s.lookahead,
            speed_gain: s.speed_gain,
            ..PurePursuitConfig::default()
        },
        throttle_noise: s.throttle_noise,
        steer_noise: s.steer_noise,
        speed_scale: s.speed_scale,
        seed: cfg.seed,
        ..GeneratorConfig::default()
    };
    let data = generate_synthetic(&track, &truth, &cfg.geometry(), &gcfg)?;
    let dir = &cfg.out_dir;
    write_output(&dir.join("telemetry.csv"), &write_csv_string(&data.series))?;
    write_output(&dir.join("track.toml"), &track.to_toml_string()?)?;
    write_output(&dir.join("true_params.toml"), &truth.to_toml_string())?;
    let meta = json!({
        "records": data.series.len(),
        "rate_hz": data.series.rate_hz,
        "lap_starts": data.lap_starts,
        "track": track.name,
    });
    write_output(&dir.join("generation.json"), &serde_json::to_string_pretty(&meta).unwrap())?;
    cfg.write_resolved()?;
    eprintln!(
        "wrote {} records ({} laps) to {}",
        data.series.len(),
        data.lap_starts.len(),
        dir.join("telemetry.csv").display()
    );
    print!("{}", truth.to_toml_string());
    Ok(())
}

pub fn train(cfg: &mut RunConfig) -> Result<(), CliError> {
    let mut s: TrainSettings = cfg
        .train
        .clone()
        .ok_or_else(|| CliError::input("train needs a [train] section or --data"))?;
    if s.data.as_os_str().is_empty() {
        return Err(CliError::input("train needs --data"));
    }
    let resumed = match &s.resume {
        Some(p) => Some(load_checkpoint(p, cfg.profile)?),
        None => None,
    };
    if let Some(ck) = &resumed {
        // the layout comes from the checkpoint
        let n = &ck.network.config;
        s.history_len = Some(n.history_len);
        s.gru_layers = Some(n.gru_layers);
        s.gru_hidden = Some(n.gru_hidden);
        s.dense_widths = Some(n.dense_widths.clone());
        if ck.optimizer.is_none() {
            return Err(CliError::input("checkpoint has no optimizer state to resume from"));
        }
    }
    s.resolve(cfg.profile);
    cfg.train = Some(s.clone());
    let net_cfg = s.network_config(cfg.profile);
    let tcfg = s.train_config(cfg.seed);
    let profile = BoundsProfile::builtin(cfg.profile);
    let geom = cfg.geometry();

    let series = read_csv(&s.data).map_err(|e| CliError::from(e).context("training data"))?;
    let tau = net_cfg.history_len;
    let windows = make_windows(&series, tau, 1)?;
    let (train_w, val_w) = match &s.val_data {
        Some(p) => {
            let v = read_csv(p).map_err(|e| CliError::from(e).context("validation data"))?;
            (windows, make_windows(&v, tau, 1)?)
        }
        None => split_windows(windows, SplitPolicy::ByFraction(1.0 - s.val_fraction), &[])?,
    };
    if train_w.len() < 2 {
        return Err(CliError::input(format!(
            "only {} training windows of length {tau}; need more data",
            train_w.len()
        )));
    }
    let dt = series.dt();

    let (mut net, opt, mut history) = match resumed {
        Some(ck) => (ck.network, ck.optimizer, ck.history),
        None => {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
            (Network::random(net_cfg, &mut rng)?, None, Vec::new())
        }
    };
    let offset = history.len();
    let baseline = if val_w.is_empty() {
        None
    } else {
        Some(fixed_params_loss(&val_w, &profile.bounds.midpoint(), &geom, dt, tcfg.physics)?)
    };
    eprintln!(
        "training {} parameters on {} windows ({} held out), {} epochs",
        net.parameter_count(),
        train_w.len(),
        val_w.len(),
        tcfg.epochs
    );
    let started = Instant::now();
    let mut last: Option<EpochStats> = None;
    let result = train_with_progress(
        &train_w,
        &val_w,
        &mut net,
        &tcfg,
        &profile,
        &geom,
        dt,
        opt,
        &mut |e| {
            eprintln!(
                "epoch {:>4}  train {:.4e}  val {}  lr {:.3e}",
                e.epoch + offset,
                e.train_loss,
                e.val_loss.map_or("-".into(), |v| format!("{v:.4e}")),
                e.lr
            );
            last = Some(e.clone());
        },
    );
    let report = match result {
        Ok(r) => r,
        Err(e @ Error::TrainingDiverged { .. }) => {
            let tail = match &last {
                Some(l) => format!(
                    "last finite epoch {} (train loss {:.4e})",
                    l.epoch + offset,
                    l.train_loss
                ),
                None => "no epoch completed".into(),
            };
            return Err(CliError::domain(format!("{e}; {tail}")));
        }
        Err(e) => return Err(e.into()),
    };
    let seconds = started.elapsed().as_secs_f64();
    history.extend(report.history.iter().map(|e| EpochStats {
        epoch: e.epoch + offset,
        ..e.clone()
    }));

    let dir = &cfg.out_dir;
    let ck = Checkpoint::new(net, profile, tcfg, history.clone(), Some(report.optimizer));
    let ck_path = dir.join("checkpoint.json");
    write_output(&ck_path, &ck.to_json()?)?;
    let mut loss = String::from("epoch,train_loss,val_loss,lr\n");
    for e in &history {
        loss.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch,
            e.train_loss,
            e.val_loss.map_or(String::new(), |v| v.to_string()),
            e.lr
        ));
    }
    write_output(&dir.join("loss.csv"), &loss)?;
    let final_val = history.last().and_then(|e| e.val_loss);
    let summary = json!({
        "parameter_count": ck.network.parameter_count(),
        "global_step": ck.global_step,
        "epochs": history.len(),
        "final_train_loss": history.last().map(|e| e.train_loss),
        "final_val_loss": final_val,
        "midpoint_val_loss": baseline,
        "improvement": match (baseline, final_val) {
            (Some(b), Some(v)) if v > 0.0 => Some(b / v),
            _ => None,
        },
        "guard_violations": report.guard_violations,
        "seconds": seconds,
    });
    write_output(&dir.join("train_summary.json"), &serde_json::to_string_pretty(&summary).unwrap())?;
    cfg.write_resolved()?;
    eprintln!("wrote {}", ck_path.display());
    Ok(())
}

pub fn eval(cfg: &mut RunConfig) -> Result<(), CliError> {
    let mut s = cfg
        .eval
        .clone()
        .ok_or_else(|| CliError::input("eval needs an [eval] section or --data"))?;
    if s.data.as_os_str().is_empty() {
        return Err(CliError::input("eval needs --data"));
    }
    let history_len = *s.history_len.get_or_insert(12);
    let (model, ck) = load_model(s.model.as_ref(), s.params_file.as_ref(), history_len, cfg.profile)?;
    let default_horizon = match cfg.profile {
        ProfileName::Sim => 300.0,
        ProfileName::Real => 600.0,
    };
    let ecfg = EvalConfig {
        horizon_ms: *s.horizon_ms.get_or_insert(default_horizon),
        mode: *s
            .mode
            .get_or_insert(ck.as_ref().map_or(Default::default(), |c| c.physics)),
        stride: *s.stride.get_or_insert(1),
        label: s
            .label
            .get_or_insert_with(|| if ck.is_some() { "learned".into() } else { "fixed".into() })
            .clone(),
    };
    cfg.eval = Some(s.clone());
    let series = read_csv(&s.data).map_err(|e| CliError::from(e).context("evaluation data"))?;
    let report = evaluate_open_loop(&model, &series, &cfg.geometry(), &ecfg)?;
    let dir = &cfg.out_dir;
    let json = report.to_json()?;
    write_output(&dir.join("report.json"), &json)?;
    write_output(&dir.join("report.csv"), &format!("{REPORT_CSV_HEADER}\n{}\n", report.csv_row()))?;
    write_output(&dir.join("eval_trace.csv"), &report.trace_csv())?;
    cfg.write_resolved()?;
    println!("{json}");
    Ok(())
}

pub fn race(cfg: &mut RunConfig) -> Result<(), CliError> {
    let s = cfg.race.clone().unwrap_or_default();
    cfg.race = Some(s.clone());
    let track = load_track(&s.track)?;
    let (model, _) = load_model(s.model.as_ref(), s.params_file.as_ref(), s.history_len, cfg.profile)?;
    let plant = match &s.plant_params_file {
        Some(p) => load_params(p)?,
        None => ModelParams::small_scale_reference(),
    };
    let result = run_race(&track, &model, &plant, &cfg.geometry(), &s.run)?;
    let dir = &cfg.out_dir;
    let json = result.to_json()?;
    write_output(&dir.join("lap_result.json"), &json)?;
    write_output(&dir.join("trace.csv"), &result.trace_csv())?;
    write_output(&dir.join("forces.csv"), &result.force_csv())?;
    cfg.write_resolved()?;
    println!("{json}");
    if result.completed {
        Ok(())
    } else {
        Err(CliError::domain(format!(
            "lap not completed: {}",
            result.abort_reason.as_deref().unwrap_or("unknown reason")
        )))
    }
}

/// Collect every `report.json` and `lap_result.json` under `dir` into one
/// table.
pub fn report(dir: &Path) -> Result<(), CliError> {
    if !dir.is_dir() {
        return Err(CliError::input(format!("{} is not a directory", dir.display())));
    }
    let mut files = Vec::new();
    collect(dir, &mut files)?;
    files.sort();
    let mut open = vec!["path,label,mode,horizon_ms,n_rollouts,n_failed,ade,fde,cv_ade,cv_fde,parameter_count".to_string()];
    let mut closed = vec!["path,track,controller,completed,lap_time,violations,mean_vx,max_offset".to_string()];
    for f in &files {
        let text = fs::read_to_string(f).map_err(|e| CliError::input(format!("{}: {e}", f.display())))?;
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", f.display())))?;
        let rel = f.strip_prefix(dir).unwrap_or(f).display().to_string();
        let field = |k: &str| match &v[k] {
            serde_json::Value::Null => String::new(),
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        if f.file_name().is_some_and(|n| n == "report.json") {
            let cols = ["label", "mode", "horizon_ms", "n_rollouts", "n_failed", "ade", "fde", "cv_ade", "cv_fde", "parameter_count"];
            open.push(std::iter::once(rel).chain(cols.iter().map(|c| field(c))).collect::<Vec<_>>().join(","));
        } else {
            let cols = ["track", "controller", "completed", "lap_time", "violations", "mean_vx", "max_offset"];
            closed.push(std::iter::once(rel).chain(cols.iter().map(|c| field(c))).collect::<Vec<_>>().join(","));
        }
    }
    let open = open.join("\n") + "\n";
    let closed = closed.join("\n") + "\n";
    write_output(&dir.join("open_loop_summary.csv"), &open)?;
    write_output(&dir.join("closed_loop_summary.csv"), &closed)?;
    print!("{open}\n{closed}");
    Ok(())
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::internal(e.to_string()))?.path();
        if path.is_dir() {
            collect(&path, out)?;
        } else if path
            .file_name()
            .is_some_and(|n| n == "report.json" || n == "lap_result.json")
        {
            out.push(path);
        }
    }
    Ok(())
}
