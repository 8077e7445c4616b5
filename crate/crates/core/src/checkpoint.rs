//! Versioned JSON checkpoints of a trained estimator.
//!
//! Floats are written with shortest round-trip formatting, so a checkpoint
//! read back is bit-identical to the one written.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::PhysicsMode;
use crate::error::{Error, Result};
use crate::estimator::{EpochStats, TrainConfig};
use crate::guard::BoundsProfile;
use crate::nn::{Network, OptimizerState, Tensor};

pub const CHECKPOINT_FORMAT: &str = "trackdyn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub schema_version: u32,
    pub seed: u64,
    pub physics: PhysicsMode,
    pub profile: BoundsProfile,
    pub train: TrainConfig,
    /// Optimizer steps taken over the network's whole life.
    pub global_step: u64,
    pub history: Vec<EpochStats>,
    pub network: Network,
    /// Present when the run can be resumed.
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn new(
        network: Network,
        profile: BoundsProfile,
        train: TrainConfig,
        history: Vec<EpochStats>,
        optimizer: Option<OptimizerState>,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            schema_version: CHECKPOINT_VERSION,
            seed: train.seed,
            physics: train.physics,
            profile,
            global_step: optimizer.as_ref().map_or(0, |o| o.step),
            train,
            history,
            network,
            optimizer,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let head: serde_json::Value = serde_json::from_str(s)?;
        let format = head.get("format").and_then(|v| v.as_str());
        if format != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Schema(format!("not a {CHECKPOINT_FORMAT} file (format = {format:?})")));
        }
        let version = head.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(Error::Schema(format!(
                "checkpoint schema_version {version:?} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let ck: Checkpoint = serde_json::from_value(head)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    /// Tensor shapes must match the layout the config describes, and the
    /// profile must be the one the config names.
    pub fn validate(&self) -> Result<()> {
        let cfg = &self.network.config;
        cfg.validate()?;
        if cfg.profile != self.profile.name {
            return Err(Error::Schema(format!(
                "network is configured for the {} profile but the checkpoint carries {}",
                cfg.profile, self.profile.name
            )));
        }
        let reference = Network::zeros(cfg.clone())?;
        let names = reference.block_names();
        let got = self.network.tensors();
        let want = reference.tensors();
        check_tensors("network", &names, &got, &want)?;
        let norms_ok = self.network.norms.iter().zip(&reference.norms).all(|(a, b)| {
            same_layout(&a.running_mean, &b.running_mean) && same_layout(&a.running_var, &b.running_var)
        });
        if self.network.norms.len() != reference.norms.len() || !norms_ok {
            return Err(Error::Schema("batch-norm running statistics do not match the layout".into()));
        }
        if let Some(sc) = &self.network.scaler {
            if sc.mean.len() != cfg.input_dim || sc.std.len() != cfg.input_dim {
                return Err(Error::Schema("input scaler width does not match input_dim".into()));
            }
        }
        if let Some(opt) = &self.optimizer {
            let m: Vec<&Tensor> = opt.m.iter().collect();
            let v: Vec<&Tensor> = opt.v.iter().collect();
            check_tensors("optimizer m", &names, &m, &want)?;
            check_tensors("optimizer v", &names, &v, &want)?;
        }
        Ok(())
    }
}

fn same_layout(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape() && a.data().len() == a.shape().iter().product::<usize>()
}

fn check_tensors(what: &str, names: &[String], got: &[&Tensor], want: &[&Tensor]) -> Result<()> {
    if got.len() != want.len() {
        return Err(Error::Schema(format!(
            "{what}: expected {} tensors, found {}",
            want.len(),
            got.len()
        )));
    }
    for ((name, g), w) in names.iter().zip(got).zip(want) {
        if !same_layout(g, w) {
            return Err(Error::Schema(format!(
                "{what}: block `{name}` has shape {:?}, expected {:?}",
                g.shape(),
                w.shape()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guard::ProfileName;
    use crate::nn::{AdamConfig, NetworkConfig};
    use rand::SeedableRng;

    fn sample() -> Checkpoint {
        let cfg = NetworkConfig {
            gru_hidden: 4,
            dense_widths: vec![5],
            ..NetworkConfig::sim_default()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let net = Network::random(cfg, &mut rng).unwrap();
        let opt = OptimizerState::new(&net, AdamConfig::default());
        Checkpoint::new(
            net,
            BoundsProfile::builtin(ProfileName::Sim),
            TrainConfig::default(),
            vec![],
            Some(opt),
        )
    }

    #[test]
    fn json_round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_other_versions_and_shapes() {
        let ck = sample();
        let mut v: serde_json::Value = serde_json::from_str(&ck.to_json().unwrap()).unwrap();
        v["schema_version"] = 99.into();
        assert!(matches!(Checkpoint::from_json(&v.to_string()), Err(Error::Schema(_))));

        let mut bad = ck.clone();
        bad.network.config.gru_hidden = 6;
        assert!(matches!(bad.to_json(), Err(Error::Schema(_))));
        assert!(matches!(Checkpoint::from_json("{}"), Err(Error::Schema(_))));
    }
}
