//! Run configuration: a TOML file (or `PAVD_CONFIG`) merged with flag
//! overrides, resolved to concrete values and written next to the outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trackdyn::dynamics::{PhysicsMode, VehicleGeometry};
use trackdyn::estimator::TrainConfig;
use trackdyn::guard::ProfileName;
use trackdyn::nn::NetworkConfig;
use trackdyn::raceloop::RaceConfig;

use crate::error::CliError;

pub const CONFIG_ENV: &str = "PAVD_CONFIG";
pub const RESOLVED_NAME: &str = "resolved-config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub profile: ProfileName,
    pub out_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gen_data: Option<GenDataSettings>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSettings>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSettings>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub race: Option<RaceSettings>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            profile: ProfileName::Sim,
            out_dir: PathBuf::from("run"),
            gen_data: None,
            train: None,
            eval: None,
            race: None,
        }
    }
}

impl RunConfig {
    pub fn geometry(&self) -> VehicleGeometry {
        match self.profile {
            ProfileName::Sim => VehicleGeometry::small_scale(),
            ProfileName::Real => VehicleGeometry::full_scale(),
        }
    }

    /// Keep only the section of the command being run.
    pub fn for_command(mut self, cmd: &str) -> Self {
        if cmd != "gen_data" {
            self.gen_data = None;
        }
        if cmd != "train" {
            self.train = None;
        }
        if cmd != "eval" {
            self.eval = None;
        }
        if cmd != "race" {
            self.race = None;
        }
        self
    }

    pub fn write_resolved(&self) -> Result<PathBuf, CliError> {
        let path = self.out_dir.join(RESOLVED_NAME);
        let text = toml::to_string(self).map_err(|e| CliError::internal(format!("serializing config: {e}")))?;
        crate::commands::write_output(&path, &text)?;
        Ok(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataSettings {
    /// Bundled track name or path to a track TOML file.
    pub track: String,
    pub laps: usize,
    pub rate_hz: f64,
    pub actuator_tau: f64,
    pub throttle_noise: f64,
    pub steer_noise: f64,
    pub speed_scale: f64,
    pub lookahead: f64,
    pub speed_gain: f64,
    /// Ground-truth coefficients; the built-in reference set when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params_file: Option<PathBuf>,
}

impl Default for GenDataSettings {
    fn default() -> Self {
        let g = trackdyn::telemetry::GeneratorConfig::default();
        Self {
            track: "train-track".into(),
            laps: g.laps,
            rate_hz: g.rate_hz,
            actuator_tau: g.actuator_tau,
            throttle_noise: g.throttle_noise,
            steer_noise: g.steer_noise,
            speed_scale: g.speed_scale,
            lookahead: g.pursuit.lookahead,
            speed_gain: g.pursuit.speed_gain,
            params_file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Default recipe: the profile's default layout, lr 1e-3, batch 128.
    #[default]
    Reference,
    /// Compact network and recipe sized for a laptop core.
    Desk,
}

/// Training settings. Fields left unset take the preset's value and are
/// filled in by [`TrainSettings::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub data: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_data: Option<PathBuf>,
    /// Share of windows held out (from the end) when no `val_data` is given.
    pub val_fraction: f64,
    pub preset: Preset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
    pub mode: PhysicsMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub history_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gru_layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gru_hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dense_widths: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standardize_inputs: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_weights: Option<[f64; 3]>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            data: PathBuf::new(),
            val_data: None,
            val_fraction: 0.2,
            preset: Preset::Reference,
            resume: None,
            mode: PhysicsMode::Full,
            history_len: None,
            gru_layers: None,
            gru_hidden: None,
            dense_widths: None,
            lr: None,
            batch_size: None,
            epochs: None,
            warmup_steps: None,
            standardize_inputs: None,
            loss_weights: None,
        }
    }
}

impl TrainSettings {
    fn preset_network(&self, profile: ProfileName) -> NetworkConfig {
        match (self.preset, profile) {
            (Preset::Desk, ProfileName::Sim) => NetworkConfig::desk(),
            (Preset::Desk, ProfileName::Real) => NetworkConfig {
                profile: ProfileName::Real,
                ..NetworkConfig::desk()
            },
            (Preset::Reference, p) => NetworkConfig::default_for(p),
        }
    }

    fn preset_train(&self) -> TrainConfig {
        match self.preset {
            Preset::Reference => TrainConfig::default(),
            Preset::Desk => TrainConfig::desk(),
        }
    }

    /// Fill every unset field from the preset.
    pub fn resolve(&mut self, profile: ProfileName) {
        let n = self.preset_network(profile);
        let t = self.preset_train();
        self.history_len.get_or_insert(n.history_len);
        self.gru_layers.get_or_insert(n.gru_layers);
        self.gru_hidden.get_or_insert(n.gru_hidden);
        self.dense_widths.get_or_insert(n.dense_widths);
        self.lr.get_or_insert(t.base_lr);
        self.batch_size.get_or_insert(t.batch_size);
        self.epochs.get_or_insert(t.epochs);
        self.standardize_inputs.get_or_insert(t.standardize_inputs);
        self.loss_weights.get_or_insert(t.loss_weights);
    }

    /// Network layout; call after [`Self::resolve`].
    pub fn network_config(&self, profile: ProfileName) -> NetworkConfig {
        let n = self.preset_network(profile);
        NetworkConfig {
            history_len: self.history_len.unwrap_or(n.history_len),
            gru_layers: self.gru_layers.unwrap_or(n.gru_layers),
            gru_hidden: self.gru_hidden.unwrap_or(n.gru_hidden),
            dense_widths: self.dense_widths.clone().unwrap_or(n.dense_widths),
            profile,
            ..n
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = self.preset_train();
        TrainConfig {
            base_lr: self.lr.unwrap_or(t.base_lr),
            batch_size: self.batch_size.unwrap_or(t.batch_size),
            warmup_steps: self.warmup_steps,
            epochs: self.epochs.unwrap_or(t.epochs),
            seed,
            physics: self.mode,
            standardize_inputs: self.standardize_inputs.unwrap_or(t.standardize_inputs),
            loss_weights: self.loss_weights.unwrap_or(t.loss_weights),
            ..t
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub data: PathBuf,
    /// Checkpoint to evaluate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Fixed coefficients to evaluate instead of a network.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params_file: Option<PathBuf>,
    /// History length used with `params_file` (network checkpoints carry their own).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub history_len: Option<usize>,
    /// 300 ms for the Sim profile and 600 ms for Real when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon_ms: Option<f64>,
    /// The checkpoint's training physics when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<PhysicsMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RaceSettings {
    pub track: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params_file: Option<PathBuf>,
    /// Coefficients of the simulated plant; the built-in reference set when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plant_params_file: Option<PathBuf>,
    pub history_len: usize,
    #[serde(flatten)]
    pub run: RaceConfig,
}

impl Default for RaceSettings {
    fn default() -> Self {
        Self {
            track: "test-track".into(),
            model: None,
            params_file: None,
            plant_params_file: None,
            history_len: 12,
            run: RaceConfig::default(),
        }
    }
}

/// Load the config file named by the flag or `PAVD_CONFIG`, as a raw table
/// so flag overrides can be layered on before typing.
pub fn load_table(flag: Option<&Path>) -> Result<toml::Table, CliError> {
    let path = match flag {
        Some(p) => Some(p.to_path_buf()),
        None => std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from),
    };
    let Some(path) = path else {
        return Ok(toml::Table::new());
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::input(format!("config {}: {e}", path.display())))
}

/// Overlay of flag values onto the raw config table.
pub struct Overrides<'a> {
    table: &'a mut toml::Table,
    section: &'static str,
}

impl<'a> Overrides<'a> {
    pub fn new(table: &'a mut toml::Table, section: &'static str) -> Result<Self, CliError> {
        let entry = table
            .entry(section)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        if !entry.is_table() {
            return Err(CliError::input(format!("config key `{section}` must be a table")));
        }
        Ok(Self { table, section })
    }

    pub fn top<T: Serialize>(&mut self, key: &str, v: Option<T>) -> Result<&mut Self, CliError> {
        if let Some(v) = v {
            self.table.insert(key.into(), to_value(key, v)?);
        }
        Ok(self)
    }

    pub fn set<T: Serialize>(&mut self, key: &str, v: Option<T>) -> Result<&mut Self, CliError> {
        if let Some(v) = v {
            let value = to_value(key, v)?;
            self.section_table().insert(key.into(), value);
        }
        Ok(self)
    }

    /// Set `key` inside a nested table of the section, e.g. `nmpc.horizon`.
    pub fn set_nested<T: Serialize>(&mut self, table: &str, key: &str, v: Option<T>) -> Result<&mut Self, CliError> {
        if let Some(v) = v {
            let value = to_value(key, v)?;
            let sub = self
                .section_table()
                .entry(table)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            match sub.as_table_mut() {
                Some(t) => {
                    t.insert(key.into(), value);
                }
                None => return Err(CliError::input(format!("config key `{table}` must be a table"))),
            }
        }
        Ok(self)
    }

    fn section_table(&mut self) -> &mut toml::Table {
        self.table
            .get_mut(self.section)
            .and_then(|v| v.as_table_mut())
            .expect("section checked in new")
    }
}

fn to_value<T: Serialize>(key: &str, v: T) -> Result<toml::Value, CliError> {
    toml::Value::try_from(v).map_err(|e| CliError::input(format!("flag for `{key}`: {e}")))
}

pub fn parse(table: toml::Table) -> Result<RunConfig, CliError> {
    RunConfig::deserialize(toml::Value::Table(table)).map_err(|e| CliError::input(format!("config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_preset_encodes_default_recipe() {
        let mut s = TrainSettings::default();
        s.resolve(ProfileName::Sim);
        let t = s.train_config(0);
        assert_eq!(t.base_lr, 1e-3);
        assert_eq!(t.batch_size, 128);
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut s = TrainSettings {
            data: "a.csv".into(),
            preset: Preset::Desk,
            ..TrainSettings::default()
        };
        s.resolve(ProfileName::Sim);
        let cfg = RunConfig {
            train: Some(s),
            race: Some(RaceSettings::default()),
            ..RunConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        let back = parse(toml::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_win_over_file() {
        let mut t: toml::Table = toml::from_str("seed = 4\n[train]\nepochs = 7\nlr = 0.5\n").unwrap();
        Overrides::new(&mut t, "train")
            .unwrap()
            .set("epochs", Some(3usize))
            .unwrap()
            .top("seed", Some(9u64))
            .unwrap();
        let cfg = parse(t).unwrap();
        assert_eq!(cfg.seed, 9);
        let tr = cfg.train.unwrap();
        assert_eq!(tr.epochs, Some(3));
        assert_eq!(tr.lr, Some(0.5));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let t: toml::Table = toml::from_str("[train]\nepoch = 7\n").unwrap();
        assert!(parse(t).is_err());
    }
}
