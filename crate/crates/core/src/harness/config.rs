//! Experiment configuration files and the built-in profiles.
//!
//! Config files are TOML with sections mirroring the structs below
//! (`[network]`, `[schedule]`, `[task1]`, `[task2]`, `[sweep]`, `[bars]`).

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::data::DistractorPolicy;
use crate::encoding::{DoGBank, DogNormalization, EncoderConfig, EncoderKind};
use crate::error::{Error, Result};
use crate::layers::{CLayerConfig, PoolMode, SLayerConfig};
use crate::network::{DecisionMode, LayerConfig, NetworkConfig};
use crate::plasticity::{PlasticityParams, Rule, Stabilizer};

use super::schedule::{LrDoubling, Phase, Schedule};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(toml::from_str(&text)?)
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| Error::config(e.to_string()))
}

fn stdp_params(k: usize, r: usize) -> PlasticityParams {
    PlasticityParams {
        a_r_plus: 0.004,
        a_r_minus: -0.003,
        a_p_plus: 0.0,
        a_p_minus: 0.0,
        k,
        r,
        stabilizer: Stabilizer::Multiplicative,
    }
}

fn rstdp_params(stabilizer: Stabilizer) -> PlasticityParams {
    PlasticityParams {
        a_r_plus: 0.004,
        a_r_minus: -0.003,
        a_p_plus: 0.0005,
        a_p_minus: -0.004,
        k: 1,
        r: 0,
        stabilizer,
    }
}

fn s(maps: usize, window: usize, depth: usize, threshold: f64, padding: usize) -> SLayerConfig {
    SLayerConfig {
        maps,
        window: (window, window),
        depth,
        threshold,
        stride: 1,
        padding,
    }
}

fn c(window: usize, stride: usize, mode: PoolMode) -> CLayerConfig {
    CLayerConfig {
        window: (window, window),
        stride,
        mode,
    }
}

fn layer(name: &str, s: SLayerConfig, c: CLayerConfig, plasticity: PlasticityParams, rule: Rule) -> LayerConfig {
    LayerConfig {
        name: name.into(),
        s,
        c,
        plasticity,
        rule,
    }
}

/// Task 1: DoG input, 30/250/200 maps, integrating S3 read out by the
/// largest potential, 20 consecutive S3 maps per digit.
pub fn task1_network() -> NetworkConfig {
    let clamp = Stabilizer::Clamp { lo: 0.2, hi: 0.8 };
    NetworkConfig {
        input: (28, 28),
        encoder: EncoderConfig {
            kind: EncoderKind::Dog,
            bins: 15,
            threshold: 50.0,
            dog: Some(DoGBank::three_scale(DogNormalization::Peak)),
        },
        layers: vec![
            layer("S1", s(30, 5, 6, 15.0, 2), c(2, 2, PoolMode::Spike), stdp_params(5, 3), Rule::Stdp),
            layer("S2", s(250, 3, 30, 10.0, 1), c(3, 3, PoolMode::Spike), stdp_params(8, 2), Rule::Stdp),
            layer(
                "S3",
                s(200, 5, 250, f64::INFINITY, 2),
                c(5, 0, PoolMode::Potential),
                rstdp_params(clamp),
                Rule::RStdp,
            ),
        ],
        decision: DecisionMode::MaxPotential,
        labels: (0..200).map(|i| i / 20).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task1Spec {
    pub seed: u64,
    /// Evaluate (and checkpoint) every this many iterations of a phase
    /// that makes decisions.
    pub eval_every: u64,
    /// Size of the test slice (the first images of the test split).
    pub eval_images: usize,
    /// Checkpoint interval for phases without evaluation.
    pub checkpoint_every: u64,
    /// Reinforced samples per adjustment-factor batch.
    pub phi_batch: usize,
    /// Share of the training set the streams draw from.
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task1Config {
    pub network: NetworkConfig,
    pub schedule: Schedule,
    pub task1: Task1Spec,
}

impl Task1Config {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.schedule.validate(&self.network)?;
        if !(self.task1.fraction > 0.0 && self.task1.fraction <= 1.0) {
            return Err(Error::config(format!("training fraction {} outside (0, 1]", self.task1.fraction)));
        }
        if self.task1.eval_images == 0 || self.task1.eval_every == 0 {
            return Err(Error::config("evaluation needs a nonempty slice and a positive interval"));
        }
        Ok(())
    }
}

pub fn task1_config(profile: Profile) -> Task1Config {
    let (s1, s2, s3) = match profile {
        Profile::Desk => (20_000, 40_000, 1_200_000),
        Profile::Paper => (100_000, 200_000, 40_000_000),
    };
    let doubling = Some(LrDoubling { every: 500, cap: 0.15 });
    Task1Config {
        network: task1_network(),
        schedule: Schedule {
            phases: vec![
                Phase {
                    layers: vec!["S1".into()],
                    rule: Rule::Stdp,
                    iterations: s1,
                    lr_doubling: doubling,
                },
                Phase {
                    layers: vec!["S2".into()],
                    rule: Rule::Stdp,
                    iterations: s2,
                    lr_doubling: doubling,
                },
                Phase {
                    layers: vec!["S3".into()],
                    rule: Rule::RStdp,
                    iterations: s3,
                    lr_doubling: None,
                },
            ],
        },
        task1: Task1Spec {
            seed: 0,
            eval_every: 60_000,
            eval_images: 2_000,
            checkpoint_every: 20_000,
            phi_batch: 1_000,
            fraction: 1.0,
        },
    }
}

/// Task 2: raw input, 10 S1 maps, `s2_maps` S2 maps trained together with
/// two decision neurons (one per target digit).
pub fn task2_network(s2_maps: usize, pair: (u32, u32), s2_rule: Rule) -> NetworkConfig {
    // Distractors carry no signal, so S2 learns from targets only; rates
    // twice the listed ones keep it converging within the desk budget.
    let mut s2_params = rstdp_params(Stabilizer::Multiplicative);
    s2_params.a_r_plus = 0.08;
    s2_params.a_r_minus = -0.06;
    s2_params.a_p_plus = 0.01;
    s2_params.a_p_minus = -0.08;
    // The decision layer has two inputs per map; small rates leave its
    // first batches undecided.
    let mut s3_params = rstdp_params(Stabilizer::Multiplicative);
    s3_params.a_r_plus = 0.04;
    s3_params.a_r_minus = -0.03;
    s3_params.a_p_plus = 0.005;
    s3_params.a_p_minus = -0.04;
    NetworkConfig {
        input: (28, 28),
        encoder: EncoderConfig {
            kind: EncoderKind::Raw,
            bins: 15,
            threshold: 50.0,
            dog: None,
        },
        layers: vec![
            layer("S1", s(10, 5, 1, 5.0, 2), c(2, 2, PoolMode::Spike), stdp_params(1, 0), Rule::Stdp),
            layer("S2", s(s2_maps, 15, 10, 120.0, 7), c(14, 0, PoolMode::Spike), s2_params, s2_rule),
            layer("S3", s(2, 1, s2_maps, 0.9, 0), c(1, 0, PoolMode::Spike), s3_params, Rule::RStdp),
        ],
        decision: DecisionMode::EarliestSpike,
        labels: vec![pair.0, pair.1],
    }
}

/// Copy of a Task 2 network with a different S2 map count.
pub fn with_s2_maps(net: &NetworkConfig, maps: usize) -> NetworkConfig {
    let mut net = net.clone();
    net.layers[1].s.maps = maps;
    net.layers[2].s.depth = maps;
    net
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task2Spec {
    /// STDP iterations for S1 before S2 and S3 are trained.
    pub s1_iterations: u64,
    /// Iterations of simultaneous S2 + S3 training.
    pub iterations: u64,
    pub s1_lr_doubling: Option<LrDoubling>,
    /// Test images per target digit.
    pub test_per_class: usize,
    pub phi_batch: usize,
    pub distractor_policy: DistractorPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub pairs: Vec<(u32, u32)>,
    pub s2_map_counts: Vec<usize>,
    pub s2_rules: Vec<Rule>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        for &(a, b) in &self.pairs {
            if a == b || a > 9 || b > 9 {
                return Err(Error::config(format!("({a}, {b}) is not a pair of distinct digits")));
            }
        }
        if self.s2_map_counts.contains(&0) {
            return Err(Error::config("S2 needs at least one map"));
        }
        if self.s2_rules.contains(&Rule::Frozen) {
            return Err(Error::config("S2 must learn"));
        }
        Ok(())
    }

    /// All 45 unordered digit pairs.
    pub fn all_pairs() -> Vec<(u32, u32)> {
        (0..10).flat_map(|a| (a + 1..10).map(move |b| (a, b))).collect()
    }

    /// The published map counts: 2, 4, ..., 20, 30, 40.
    pub fn published_map_counts() -> Vec<usize> {
        (1..=10).map(|i| 2 * i).chain([30, 40]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task2Config {
    /// Template; S2 maps and labels are overridden per sweep cell.
    pub network: NetworkConfig,
    pub task2: Task2Spec,
    pub sweep: SweepSpec,
}

pub fn task2_config(_profile: Profile) -> Task2Config {
    Task2Config {
        network: task2_network(4, (0, 1), Rule::RStdp),
        task2: Task2Spec {
            s1_iterations: 20_000,
            iterations: 20_000,
            s1_lr_doubling: Some(LrDoubling { every: 500, cap: 0.15 }),
            test_per_class: 100,
            phi_batch: 1_000,
            distractor_policy: DistractorPolicy::Neutral,
        },
        sweep: SweepSpec {
            pairs: SweepSpec::all_pairs(),
            s2_map_counts: SweepSpec::published_map_counts(),
            s2_rules: vec![Rule::Stdp, Rule::RStdp],
            seeds: vec![0],
        },
    }
}

/// Bars network: direct input, 3 S1 maps over 3x3 windows, global spike
/// pooling, three 1x1x3 decision neurons.
pub fn bars_network(s1_rule: Rule) -> NetworkConfig {
    let s1 = PlasticityParams {
        a_r_plus: 0.05,
        a_r_minus: -0.04,
        a_p_plus: 0.0,
        a_p_minus: -0.02,
        k: 2,
        r: 3,
        stabilizer: Stabilizer::Multiplicative,
    };
    let s2 = PlasticityParams {
        a_r_plus: 0.05,
        a_r_minus: -0.04,
        a_p_plus: 0.005,
        a_p_minus: -0.1,
        k: 1,
        r: 0,
        stabilizer: Stabilizer::Multiplicative,
    };
    NetworkConfig {
        input: (9, 3),
        encoder: EncoderConfig {
            kind: EncoderKind::Direct,
            bins: 1,
            threshold: 0.0,
            dog: None,
        },
        layers: vec![
            layer("S1", s(3, 3, 1, 2.0, 1), c(9, 0, PoolMode::Spike), s1, s1_rule),
            layer("S2", s(3, 1, 3, 1.0, 0), c(1, 0, PoolMode::Spike), s2, Rule::RStdp),
        ],
        decision: DecisionMode::EarliestSpike,
        labels: vec![0, 1, 2],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarsConfig {
    /// S1's rule is overridden per run.
    pub network: NetworkConfig,
    pub bars: BarsSpec,
}

impl Default for BarsConfig {
    fn default() -> Self {
        Self {
            network: bars_network(Rule::RStdp),
            bars: BarsSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarsSpec {
    pub max_iterations: u64,
    /// Converged once no weight moves more than `tolerance` over `window`
    /// iterations.
    pub window: u64,
    pub tolerance: f64,
    pub phi_batch: usize,
}

impl Default for BarsSpec {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            window: 100,
            tolerance: 1e-4,
            phi_batch: 16,
        }
    }
}
