//! `trackdyn`: synthetic data generation, estimator training, open-loop
//! evaluation and closed-loop racing.
//!
//! Settings come from a TOML file (`--config`, or the path in `PAVD_CONFIG`)
//! overlaid with flags. Every run writes its fully resolved settings to
//! `resolved-config.toml` in the output directory; passing that file back
//! with `--config` repeats the run.
//!
//! Exit codes: 0 success, 1 internal error, 2 bad input, 3 domain failure
//! (divergence, aborted lap).

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{load_table, parse, Overrides};
use error::{CliError, EXIT_OK};

#[derive(Parser)]
#[command(name = "trackdyn", version, about = "Physics-aware vehicle dynamics: data, training, evaluation, racing")]
struct Cli {
    /// TOML run configuration (falls back to $PAVD_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving all outputs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Parameter bounds and vehicle geometry: sim or real.
    #[arg(long, global = true)]
    profile: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Drive the ground-truth model around a track and record telemetry.
    GenData(GenDataArgs),
    /// Train the parameter estimator through the physics.
    Train(TrainArgs),
    /// Open-loop rollout metrics of a checkpoint or fixed parameters.
    Eval(EvalArgs),
    /// Closed-loop lap with NMPC (or pure pursuit) on the simulated plant.
    Race(RaceArgs),
    /// Tabulate every report and lap result under --out-dir.
    Report,
}

#[derive(Args)]
struct GenDataArgs {
    /// Bundled track name or track TOML path.
    #[arg(long)]
    track: Option<String>,
    #[arg(long)]
    laps: Option<usize>,
    /// Sample rate (Hz).
    #[arg(long)]
    rate: Option<f64>,
    /// Actuator lag time constant (s).
    #[arg(long)]
    actuator_tau: Option<f64>,
    #[arg(long)]
    throttle_noise: Option<f64>,
    #[arg(long)]
    steer_noise: Option<f64>,
    #[arg(long)]
    speed_scale: Option<f64>,
    /// Ground-truth parameter TOML.
    #[arg(long)]
    params_file: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training telemetry CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Held-out telemetry CSV; otherwise the tail of --data is held out.
    #[arg(long)]
    val_data: Option<PathBuf>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// reference (lr 1e-3, batch 128, profile layout) or desk.
    #[arg(long)]
    preset: Option<String>,
    /// Physics variant: full, nominal-load or load-transfer-only.
    #[arg(long)]
    mode: Option<String>,
    /// Continue from a checkpoint, keeping its optimizer step counter.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    warmup_steps: Option<u64>,
    #[arg(long)]
    history_len: Option<usize>,
    #[arg(long)]
    gru_layers: Option<usize>,
    #[arg(long)]
    gru_hidden: Option<usize>,
    /// Comma-separated widths of the dense blocks.
    #[arg(long, value_delimiter = ',')]
    dense_widths: Option<Vec<usize>>,
    #[arg(long)]
    standardize_inputs: Option<bool>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint to evaluate.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Fixed parameter TOML to evaluate instead of a network.
    #[arg(long)]
    params_file: Option<PathBuf>,
    #[arg(long)]
    history_len: Option<usize>,
    #[arg(long)]
    horizon_ms: Option<f64>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    label: Option<String>,
}

#[derive(Args)]
struct RaceArgs {
    #[arg(long)]
    track: Option<String>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    params_file: Option<PathBuf>,
    /// Coefficients of the simulated plant.
    #[arg(long)]
    plant_params_file: Option<PathBuf>,
    #[arg(long)]
    history_len: Option<usize>,
    /// NMPC prediction horizon (steps).
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    laps: Option<usize>,
    /// nmpc or pure-pursuit.
    #[arg(long)]
    controller: Option<String>,
    #[arg(long)]
    speed_scale: Option<f64>,
    #[arg(long)]
    actuator_tau: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut table = load_table(cli.config.as_deref())?;
    let section = match &cli.command {
        Command::GenData(_) => "gen_data",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Race(_) => "race",
        Command::Report => {
            let dir = match cli.out_dir {
                Some(d) => d,
                None => parse(table)?.out_dir,
            };
            return commands::report(&dir);
        }
    };
    {
        let mut o = Overrides::new(&mut table, section)?;
        o.top("seed", cli.seed)?
            .top("out_dir", cli.out_dir)?
            .top("profile", cli.profile)?;
        match cli.command {
            Command::GenData(a) => {
                o.set("track", a.track)?
                    .set("laps", a.laps)?
                    .set("rate_hz", a.rate)?
                    .set("actuator_tau", a.actuator_tau)?
                    .set("throttle_noise", a.throttle_noise)?
                    .set("steer_noise", a.steer_noise)?
                    .set("speed_scale", a.speed_scale)?
                    .set("params_file", a.params_file)?;
            }
            Command::Train(a) => {
                o.set("data", a.data)?
                    .set("val_data", a.val_data)?
                    .set("val_fraction", a.val_fraction)?
                    .set("preset", a.preset)?
                    .set("mode", a.mode)?
                    .set("resume", a.resume)?
                    .set("epochs", a.epochs)?
                    .set("lr", a.lr)?
                    .set("batch_size", a.batch_size)?
                    .set("warmup_steps", a.warmup_steps)?
                    .set("history_len", a.history_len)?
                    .set("gru_layers", a.gru_layers)?
                    .set("gru_hidden", a.gru_hidden)?
                    .set("dense_widths", a.dense_widths)?
                    .set("standardize_inputs", a.standardize_inputs)?;
            }
            Command::Eval(a) => {
                o.set("data", a.data)?
                    .set("model", a.model)?
                    .set("params_file", a.params_file)?
                    .set("history_len", a.history_len)?
                    .set("horizon_ms", a.horizon_ms)?
                    .set("mode", a.mode)?
                    .set("stride", a.stride)?
                    .set("label", a.label)?;
            }
            Command::Race(a) => {
                o.set("track", a.track)?
                    .set("model", a.model)?
                    .set("params_file", a.params_file)?
                    .set("plant_params_file", a.plant_params_file)?
                    .set("history_len", a.history_len)?
                    .set("laps", a.laps)?
                    .set("controller", a.controller)?
                    .set("speed_scale", a.speed_scale)?
                    .set("actuator_tau", a.actuator_tau)?
                    .set_nested("nmpc", "horizon", a.horizon)?
                    .set_nested("nmpc", "max_iter", a.max_iter)?;
            }
            Command::Report => unreachable!(),
        }
    }
    let mut cfg = parse(table)?.for_command(section);
    match section {
        "gen_data" => commands::gen_data(&cfg),
        "train" => commands::train(&mut cfg),
        "eval" => commands::eval(&mut cfg),
        _ => commands::race(&mut cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
