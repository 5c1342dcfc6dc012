//! JSON checkpoints of a [`TrainState`].
//!
//! Floats are written in shortest round-trip form and parsed back exactly,
//! so a restored run continues bit-for-bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{AdamState, Mlp, OutputHead};
use crate::numerics::{Rng, RngState};
use crate::training::{MetricRecord, TrainState};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetCheckpoint {
    pub sizes: Vec<usize>,
    pub head: OutputHead,
    pub params: Vec<f64>,
}

impl NetCheckpoint {
    pub fn capture(net: &Mlp) -> Self {
        Self {
            sizes: net.sizes().to_vec(),
            head: net.head(),
            params: net.params_flat(),
        }
    }

    pub fn restore(&self) -> Result<Mlp> {
        Mlp::from_params(&self.sizes, self.head, &self.params)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub iteration: u64,
    pub generator: NetCheckpoint,
    pub generator_adam: AdamState,
    pub critic: NetCheckpoint,
    pub critic_adam: AdamState,
    pub rng: RngState,
    pub history: Vec<MetricRecord>,
}

impl Checkpoint {
    pub fn capture(state: &TrainState) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            iteration: state.iteration,
            generator: NetCheckpoint::capture(&state.generator),
            generator_adam: state.generator_adam.clone(),
            critic: NetCheckpoint::capture(&state.critic),
            critic_adam: state.critic_adam.clone(),
            rng: state.rng.state(),
            history: state.history.clone(),
        }
    }

    pub fn restore(&self) -> Result<TrainState> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let generator = self.generator.restore()?;
        let critic = self.critic.restore()?;
        for (name, net, adam) in [
            ("generator", &generator, &self.generator_adam),
            ("critic", &critic, &self.critic_adam),
        ] {
            if adam.m.len() != net.num_params() || adam.v.len() != net.num_params() {
                return Err(Error::Checkpoint(format!(
                    "{name} optimizer state holds {} moments for {} parameters",
                    adam.m.len(),
                    net.num_params()
                )));
            }
        }
        Ok(TrainState {
            generator,
            generator_adam: self.generator_adam.clone(),
            critic,
            critic_adam: self.critic_adam.clone(),
            iteration: self.iteration,
            rng: Rng::from_state(&self.rng)?,
            history: self.history.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}
