//! Training phases and the learning-rate doubling rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkConfig;
use crate::plasticity::{PlasticityParams, Rule};

/// Doubles both reward-side rates every `every` iterations while
/// `a_r_plus < cap`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrDoubling {
    pub every: u64,
    pub cap: f64,
}

impl LrDoubling {
    /// Rates in force after `done` iterations of the phase.
    pub fn rates_after(&self, base: &PlasticityParams, done: u64) -> PlasticityParams {
        let mut p = base.clone();
        if self.every == 0 {
            return p;
        }
        for _ in 0..done / self.every {
            if p.a_r_plus >= self.cap {
                break;
            }
            p = p.scaled_reward_rates(2.0);
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    /// Layers trained together in this phase.
    pub layers: Vec<String>,
    pub rule: Rule,
    pub iterations: u64,
    #[serde(default)]
    pub lr_doubling: Option<LrDoubling>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub phases: Vec<Phase>,
}

impl Schedule {
    /// Phase layers must exist and never go shallower than an earlier
    /// phase; every layer not configured as frozen must be trained.
    pub fn validate(&self, net: &NetworkConfig) -> Result<()> {
        let mut deepest = 0;
        let mut trained = vec![false; net.layers.len()];
        for (i, phase) in self.phases.iter().enumerate() {
            if phase.layers.is_empty() {
                return Err(Error::config(format!("phase {i} trains no layer")));
            }
            if phase.rule == Rule::Frozen {
                return Err(Error::config(format!("phase {i} uses the frozen rule")));
            }
            for name in &phase.layers {
                let l = net
                    .layer_index(name)
                    .ok_or_else(|| Error::config(format!("phase {i} names unknown layer {name}")))?;
                if l < deepest {
                    return Err(Error::config(format!("phase {i} goes back to layer {name}")));
                }
                trained[l] = true;
            }
            deepest = phase.layers.iter().filter_map(|n| net.layer_index(n)).max().unwrap_or(0);
        }
        for (l, cfg) in net.layers.iter().enumerate() {
            if cfg.rule != Rule::Frozen && !trained[l] {
                return Err(Error::config(format!("layer {} is trainable but never scheduled", cfg.name)));
            }
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> u64 {
        self.phases.iter().map(|p| p.iterations).sum()
    }
}
