//! JSON run configurations. Every field is optional in the file; flags given
//! on the command line override whatever the file says.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use motion_fatigue::bilstm::DynTrainConfig;
use motion_fatigue::cc3::{Cc3Params, FatigueProfile};
use motion_fatigue::dynamics::ArmParams;
use motion_fatigue::nn::TrainConfig;
use motion_fatigue::pinn::{PinnArchitecture, PinnMode, PinnTrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> motion_fatigue::Result<T> {
    match path {
        Some(p) => Ok(serde_json::from_str(&fs::read_to_string(p)?)?),
        None => Ok(T::default()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub trials: usize,
    pub frames: usize,
    pub dt: f64,
    pub arm: ArmParams,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            trials: 20,
            frames: 200,
            dt: 0.05,
            arm: ArmParams::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub params: Cc3Params,
    /// Target load, `const:<level>` or `onset:<level>:<tau>`.
    pub tl: String,
    pub duration: f64,
    pub dt: f64,
    pub lambda: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            params: Cc3Params::ELBOW,
            tl: "const:100".into(),
            duration: 180.0,
            dt: 0.05,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainPinnConfig {
    pub joint: String,
    /// Rates for the joint; taken from `--profiles` when that flag is given.
    pub params: Option<Cc3Params>,
    pub mode: PinnMode,
    /// Load driving the oracle trajectory. Defaults to `onset:50:5` when
    /// supervised and `const:50` when unsupervised.
    pub load: Option<String>,
    pub duration: f64,
    pub dt: f64,
    /// Supervised observations; held-out points sit midway between them.
    pub frames: usize,
    pub collocation: usize,
    pub architecture: PinnArchitecture,
    pub training: PinnTrainConfig,
}

impl Default for TrainPinnConfig {
    fn default() -> Self {
        Self {
            joint: "elbow".into(),
            params: None,
            mode: PinnMode::Supervised,
            load: None,
            duration: 100.0,
            dt: 0.05,
            frames: 50,
            collocation: 256,
            architecture: PinnArchitecture::default(),
            training: PinnTrainConfig {
                train: TrainConfig {
                    epochs: 500,
                    patience: None,
                    ..TrainConfig::default()
                },
                physics_weight: 1.0,
            },
        }
    }
}

impl TrainPinnConfig {
    pub fn load_spec(&self) -> &str {
        match (&self.load, self.mode) {
            (Some(s), _) => s,
            (None, PinnMode::Supervised) => "onset:50:5",
            (None, PinnMode::Unsupervised) => "const:50",
        }
    }

    pub fn resolve_params(&self, profiles: &[FatigueProfile]) -> Option<Cc3Params> {
        profiles
            .iter()
            .find(|p| p.joint == self.joint)
            .map(|p| p.params)
            .or(self.params)
            .or((self.joint == "elbow").then_some(Cc3Params::ELBOW))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainDynConfig {
    /// Output joints; empty means every joint in the dataset.
    pub joints: Vec<String>,
    /// One model for all joints instead of one per joint.
    pub multi_output: bool,
    pub physics: bool,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub dyn_train: DynTrainConfig,
}

impl Default for TrainDynConfig {
    fn default() -> Self {
        Self {
            joints: Vec::new(),
            multi_output: false,
            physics: false,
            test_fraction: 0.2,
            val_fraction: 0.15,
            dyn_train: DynTrainConfig::desk(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApplyConfig {
    /// `dynamic` or `fixed:<level>`.
    pub mode: String,
    /// Compartment step; the motion's frame interval when absent.
    pub dt: Option<f64>,
    /// Torque mapped to 100% activation, per joint.
    pub torque_max: BTreeMap<String, f64>,
}

impl Default for ApplyConfig {
    fn default() -> Self {
        Self {
            mode: "dynamic".into(),
            dt: None,
            torque_max: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub levels: Vec<f64>,
    /// Also export a run with evolving compartments.
    pub dynamic: bool,
    pub dt: Option<f64>,
    pub torque_max: BTreeMap<String, f64>,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            levels: vec![100.0, 90.0, 80.0, 70.0],
            dynamic: true,
            dt: None,
            torque_max: BTreeMap::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_keep_defaults() {
        let cfg: TrainPinnConfig =
            serde_json::from_str(r#"{"mode": "unsupervised", "training": {"train": {"epochs": 7}}}"#).unwrap();
        assert_eq!(cfg.mode, PinnMode::Unsupervised);
        assert_eq!(cfg.training.train.epochs, 7);
        assert_eq!(cfg.training.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.load_spec(), "const:50");
        assert_eq!(cfg.frames, 50);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<SimConfig>(r#"{"durration": 5}"#).is_err());
    }

    #[test]
    fn profiles_override_config_rates() {
        let mut cfg = TrainPinnConfig::default();
        assert_eq!(cfg.resolve_params(&[]), Some(Cc3Params::ELBOW));
        cfg.joint = "knee".into();
        assert_eq!(cfg.resolve_params(&[]), None);
        let knee = FatigueProfile {
            joint: "knee".into(),
            params: Cc3Params::new(0.01, 0.002, 10.0, 10.0).unwrap(),
            lambda: 0.5,
        };
        assert_eq!(cfg.resolve_params(&[knee.clone()]), Some(knee.params));
    }
}
