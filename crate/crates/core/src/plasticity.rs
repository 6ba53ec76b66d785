//! The unified STDP / reward-modulated STDP rule, k-winner-take-all
//! selection with spatial inhibition, and weight initialization.
//!
//! The weight change of synapse `j -> i` for a winner `i` is
//!
//! ```text
//! causal      (t_j <= t_i):            delta = alpha*phi_r*a_r_plus  + beta*phi_p*a_p_minus
//! anti-causal (t_j > t_i or j silent): delta = alpha*phi_r*a_r_minus + beta*phi_p*a_p_plus
//! ```
//!
//! where `(alpha, beta)` is `(1, 0)` for STDP and reward, `(0, 1)` for
//! punishment and `(0, 0)` for a neutral signal. The change is then either
//! scaled by `w (1 - w)` (multiplicative stabilizer) or added and clipped.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::SLayer;
use crate::spike::{KernelShape, LayerState, SpikeWave, WeightTensor, NO_SPIKE};

/// Keeps weights bounded while they learn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Stabilizer {
    /// `dw = delta * w * (1 - w)`.
    Multiplicative,
    /// `w = clamp(w + delta, lo, hi)`.
    Clamp { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlasticityParams {
    pub a_r_plus: f64,
    pub a_r_minus: f64,
    #[serde(default)]
    pub a_p_plus: f64,
    #[serde(default)]
    pub a_p_minus: f64,
    /// Winners per image.
    pub k: usize,
    /// Inhibition radius; a winner blocks a `(2r+1) x (2r+1)` window.
    pub r: usize,
    pub stabilizer: Stabilizer,
}

impl PlasticityParams {
    pub fn validate(&self) -> Result<()> {
        if self.a_r_plus < 0.0 || self.a_p_plus < 0.0 {
            return Err(Error::config("a_r_plus and a_p_plus must be >= 0"));
        }
        if self.a_r_minus > 0.0 || self.a_p_minus > 0.0 {
            return Err(Error::config("a_r_minus and a_p_minus must be <= 0"));
        }
        if self.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if let Stabilizer::Clamp { lo, hi } = self.stabilizer {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::config(format!("clamp bounds [{lo}, {hi}] are inverted")));
            }
        }
        Ok(())
    }

    /// Copy with both reward-side rates multiplied by `factor`.
    pub fn scaled_reward_rates(&self, factor: f64) -> Self {
        Self {
            a_r_plus: self.a_r_plus * factor,
            a_r_minus: self.a_r_minus * factor,
            ..self.clone()
        }
    }
}

/// Learning rule attached to a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Stdp,
    RStdp,
    Frozen,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalKind {
    Reward,
    Punishment,
    Neutral,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReinforcementSignal {
    pub kind: SignalKind,
    pub phi_r: f64,
    pub phi_p: f64,
}

impl ReinforcementSignal {
    /// Factors under which the general rule reduces to plain STDP.
    pub fn stdp() -> Self {
        Self {
            kind: SignalKind::Reward,
            phi_r: 1.0,
            phi_p: 0.0,
        }
    }

    fn alpha_beta(&self) -> (f64, f64) {
        match self.kind {
            SignalKind::Reward => (1.0, 0.0),
            SignalKind::Punishment => (0.0, 1.0),
            SignalKind::Neutral => (0.0, 0.0),
        }
    }
}

/// Outcome of one decision as seen by the reinforcement controller.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Hit,
    Miss,
    Neutral,
}

/// Hit/miss counts of a completed batch of `n` reinforced samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchStats {
    pub n: usize,
    pub hits: usize,
    pub misses: usize,
}

/// Signal for `outcome` with `phi_r = misses / n` and `phi_p = hits / n`.
pub fn make_signal(stats: BatchStats, outcome: Outcome) -> Result<ReinforcementSignal> {
    if stats.n == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    if stats.hits + stats.misses > stats.n {
        return Err(Error::invalid("hits + misses exceeds batch size"));
    }
    let n = stats.n as f64;
    Ok(ReinforcementSignal {
        kind: match outcome {
            Outcome::Hit => SignalKind::Reward,
            Outcome::Miss => SignalKind::Punishment,
            Outcome::Neutral => SignalKind::Neutral,
        },
        phi_r: stats.misses as f64 / n,
        phi_p: stats.hits as f64 / n,
    })
}

/// Tracks hit/miss counts and refreshes the adjustment factors every
/// `batch_size` reinforced (non-neutral) samples. Until the first batch
/// completes both factors are 0.5.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiTracker {
    pub batch_size: usize,
    pub hits: usize,
    pub misses: usize,
    pub phi_r: f64,
    pub phi_p: f64,
}

impl PhiTracker {
    pub fn new(batch_size: usize) -> Self {
        Self {
            batch_size: batch_size.max(1),
            hits: 0,
            misses: 0,
            phi_r: 0.5,
            phi_p: 0.5,
        }
    }

    /// Signal for `outcome` under the current factors.
    pub fn signal(&self, outcome: Outcome) -> ReinforcementSignal {
        let kind = match outcome {
            Outcome::Hit => SignalKind::Reward,
            Outcome::Miss => SignalKind::Punishment,
            Outcome::Neutral => SignalKind::Neutral,
        };
        ReinforcementSignal {
            kind,
            phi_r: self.phi_r,
            phi_p: self.phi_p,
        }
    }

    pub fn record(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Hit => self.hits += 1,
            Outcome::Miss => self.misses += 1,
            Outcome::Neutral => return,
        }
        if self.hits + self.misses == self.batch_size {
            let n = self.batch_size as f64;
            self.phi_r = self.misses as f64 / n;
            self.phi_p = self.hits as f64 / n;
            self.hits = 0;
            self.misses = 0;
        }
    }
}

/// Weight change for one synapse before the stabilizer is applied.
/// STDP layers ignore `signal` and use `phi_r = 1, phi_p = 0`.
pub fn delta(params: &PlasticityParams, rule: Rule, signal: &ReinforcementSignal, causal: bool) -> f64 {
    let signal = match rule {
        Rule::Stdp => ReinforcementSignal::stdp(),
        Rule::RStdp => *signal,
        Rule::Frozen => return 0.0,
    };
    let (alpha, beta) = signal.alpha_beta();
    if causal {
        alpha * signal.phi_r * params.a_r_plus + beta * signal.phi_p * params.a_p_minus
    } else {
        alpha * signal.phi_r * params.a_r_minus + beta * signal.phi_p * params.a_p_plus
    }
}

/// New value of a weight `w` after a change `delta`.
#[inline]
pub fn update_weight(w: f64, delta: f64, stabilizer: Stabilizer) -> f64 {
    match stabilizer {
        Stabilizer::Multiplicative => w + delta * w * (1.0 - w),
        Stabilizer::Clamp { lo, hi } => (w + delta).clamp(lo, hi),
    }
}

/// A neuron picked for plasticity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Winner {
    pub map: usize,
    pub y: usize,
    pub x: usize,
}

/// Greedy k-winner-take-all.
///
/// Fired neurons are ranked by earliest spike, then highest potential, then
/// lowest `(row, col, map)` index. Each pick excludes its map and every
/// neuron within Chebyshev distance `r` of it, across all maps.
pub fn select_winners(state: &LayerState, k: usize, r: usize) -> Vec<Winner> {
    let mut winners: Vec<Winner> = Vec::with_capacity(k);
    let mut used_maps = vec![false; state.maps()];
    let times = state.spike_times();
    let pots = state.potentials();
    while winners.len() < k {
        let mut best: Option<usize> = None;
        for i in 0..state.len() {
            let t = times[i];
            if t == NO_SPIKE {
                continue;
            }
            if let Some(b) = best {
                let better = t < times[b] || (t == times[b] && pots[i] > pots[b]);
                if !better {
                    continue;
                }
            }
            let (m, y, x) = state.coords(i);
            if used_maps[m] {
                continue;
            }
            let blocked = winners
                .iter()
                .any(|w| w.y.abs_diff(y) <= r && w.x.abs_diff(x) <= r);
            if blocked {
                continue;
            }
            best = Some(i);
        }
        match best {
            Some(i) => {
                let (map, y, x) = state.coords(i);
                used_maps[map] = true;
                winners.push(Winner { map, y, x });
            }
            None => break,
        }
    }
    winners
}

/// Applies the rule to the shared kernel of `winner.map`.
///
/// `input` holds the spike times feeding the layer; a synapse is causal when
/// its presynaptic neuron fired no later than `post_time`. Taps that fall in
/// zero padding count as silent.
#[allow(clippy::too_many_arguments)]
pub fn apply(
    weights: &mut WeightTensor,
    layer: &SLayer,
    winner: Winner,
    input: &SpikeWave,
    post_time: u32,
    params: &PlasticityParams,
    rule: Rule,
    signal: &ReinforcementSignal,
) {
    let d_causal = delta(params, rule, signal, true);
    let d_anti = delta(params, rule, signal, false);
    // A zero change is a no-op only without clipping: the clamp still pulls
    // out-of-range weights back inside its bounds.
    if d_causal == 0.0 && d_anti == 0.0 && params.stabilizer == Stabilizer::Multiplicative {
        return;
    }
    let shape = weights.shape();
    let mut causal = vec![false; shape.kernel_len()];
    for i in 0..shape.in_depth {
        for dy in 0..shape.win_h {
            for dx in 0..shape.win_w {
                if let Some((iy, ix)) = layer.input_at(winner.y, winner.x, dy, dx) {
                    let t = input.raw_time(input.index(i, iy, ix));
                    if t != NO_SPIKE && t <= post_time {
                        causal[weights.synapse(i, dy, dx)] = true;
                    }
                }
            }
        }
    }
    let stab = params.stabilizer;
    weights.update_kernel(winner.map, |s, w| {
        let d = if causal[s] { d_causal } else { d_anti };
        update_weight(w, d, stab)
    });
}

/// Weights drawn i.i.d. from N(0.8, 0.02) and clipped to [0, 1]. Draw order
/// is `[out][in][dy][dx]`, so equal seeds give equal tensors.
pub fn init_weights(shape: KernelShape, seed: u64) -> WeightTensor {
    init_weights_with(shape, seed, 0.8, 0.02)
}

pub fn init_weights_with(shape: KernelShape, seed: u64, mean: f64, std: f64) -> WeightTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(mean, std).expect("finite normal parameters");
    WeightTensor::from_fn(shape, |_, _, _, _| normal.sample(&mut rng).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::SLayerConfig;

    fn task1_s1() -> PlasticityParams {
        PlasticityParams {
            a_r_plus: 0.004,
            a_r_minus: -0.003,
            a_p_plus: 0.0,
            a_p_minus: 0.0,
            k: 5,
            r: 3,
            stabilizer: Stabilizer::Multiplicative,
        }
    }

    fn task1_s3() -> PlasticityParams {
        PlasticityParams {
            a_r_plus: 0.004,
            a_r_minus: -0.003,
            a_p_plus: 0.0005,
            a_p_minus: -0.004,
            k: 1,
            r: 0,
            stabilizer: Stabilizer::Clamp { lo: 0.2, hi: 0.8 },
        }
    }

    #[test]
    fn stdp_causal_delta() {
        let d = delta(&task1_s1(), Rule::Stdp, &ReinforcementSignal::stdp(), true);
        assert_eq!(d, 0.004);
    }

    #[test]
    fn neutral_signal_gives_zero() {
        let s = ReinforcementSignal {
            kind: SignalKind::Neutral,
            phi_r: 0.3,
            phi_p: 0.7,
        };
        for causal in [true, false] {
            assert_eq!(delta(&task1_s3(), Rule::RStdp, &s, causal), 0.0);
        }
    }

    #[test]
    fn punishment_depresses_causal_synapses() {
        let s = ReinforcementSignal {
            kind: SignalKind::Punishment,
            phi_r: 0.3,
            phi_p: 0.7,
        };
        let d = delta(&task1_s3(), Rule::RStdp, &s, true);
        assert!((d - (-0.0028)).abs() < 1e-15);
    }

    #[test]
    fn frozen_rule_never_changes_weights() {
        let s = ReinforcementSignal::stdp();
        assert_eq!(delta(&task1_s1(), Rule::Frozen, &s, true), 0.0);
    }

    #[test]
    fn multiplicative_update_values() {
        let dw = update_weight(0.8, 0.004, Stabilizer::Multiplicative) - 0.8;
        assert!((dw - 0.00064).abs() < 1e-15);
        assert_eq!(update_weight(0.0, 0.5, Stabilizer::Multiplicative), 0.0);
        assert_eq!(update_weight(1.0, -0.5, Stabilizer::Multiplicative), 1.0);
    }

    #[test]
    fn clamp_update_saturates() {
        let w = update_weight(0.79, 0.02, Stabilizer::Clamp { lo: 0.2, hi: 0.8 });
        assert_eq!(w, 0.8);
        let w = update_weight(0.21, -0.02, Stabilizer::Clamp { lo: 0.2, hi: 0.8 });
        assert_eq!(w, 0.2);
    }

    #[test]
    fn params_sign_constraints() {
        let mut p = task1_s3();
        assert!(p.validate().is_ok());
        p.a_p_minus = 0.04;
        assert!(p.validate().is_err());
        let mut p = task1_s1();
        p.k = 0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn make_signal_uses_batch_rates() {
        let s = make_signal(BatchStats { n: 100, hits: 90, misses: 10 }, Outcome::Hit).unwrap();
        assert_eq!(s.kind, SignalKind::Reward);
        assert!((s.phi_r - 0.1).abs() < 1e-15);
        assert!((s.phi_p - 0.9).abs() < 1e-15);
        assert!(make_signal(BatchStats { n: 0, hits: 0, misses: 0 }, Outcome::Hit).is_err());
    }

    #[test]
    fn tracker_bootstraps_then_freezes_per_batch() {
        let mut t = PhiTracker::new(4);
        assert_eq!((t.phi_r, t.phi_p), (0.5, 0.5));
        for o in [Outcome::Hit, Outcome::Neutral, Outcome::Hit, Outcome::Hit] {
            t.record(o);
        }
        assert_eq!((t.phi_r, t.phi_p), (0.5, 0.5));
        t.record(Outcome::Miss);
        assert_eq!((t.phi_r, t.phi_p), (0.25, 0.75));
        t.record(Outcome::Miss);
        assert_eq!((t.phi_r, t.phi_p), (0.25, 0.75));
        assert_eq!(t.signal(Outcome::Neutral).kind, SignalKind::Neutral);
    }

    #[test]
    fn single_fired_neuron_wins() {
        let mut s = LayerState::new(3, 4, 4);
        s.set_spike(2, 1, 3, 5);
        assert_eq!(select_winners(&s, 1, 0), vec![Winner { map: 2, y: 1, x: 3 }]);
    }

    #[test]
    fn potential_breaks_time_ties() {
        let mut s = LayerState::new(2, 1, 2);
        s.set_spike(0, 0, 0, 3);
        s.set_potential(0, 0, 0, 5.0);
        s.set_spike(1, 0, 1, 3);
        s.set_potential(1, 0, 1, 7.0);
        assert_eq!(select_winners(&s, 1, 0), vec![Winner { map: 1, y: 0, x: 1 }]);
    }

    #[test]
    fn earlier_spike_beats_higher_potential() {
        let mut s = LayerState::new(2, 1, 2);
        s.set_spike(0, 0, 0, 2);
        s.set_potential(0, 0, 0, 1.0);
        s.set_spike(1, 0, 1, 3);
        s.set_potential(1, 0, 1, 70.0);
        assert_eq!(select_winners(&s, 1, 0)[0].map, 0);
    }

    #[test]
    fn one_winner_per_map_and_inhibition() {
        let mut s = LayerState::new(2, 1, 10);
        for x in 0..10 {
            s.set_spike(0, 0, x, 0);
            s.set_potential(0, 0, x, 10.0 - x as f64);
            s.set_spike(1, 0, x, 0);
            s.set_potential(1, 0, x, 5.0);
        }
        let w = select_winners(&s, 5, 2);
        assert_eq!(w.len(), 2);
        assert_eq!(w[0], Winner { map: 0, y: 0, x: 0 });
        assert_eq!(w[1], Winner { map: 1, y: 0, x: 3 });
    }

    #[test]
    fn apply_updates_only_the_winner_kernel() {
        let cfg = SLayerConfig {
            maps: 2,
            window: (2, 1),
            depth: 1,
            threshold: 1.0,
            stride: 1,
            padding: 0,
        };
        let layer = SLayer::new(cfg, 1, 1, 3).unwrap();
        let mut w = WeightTensor::filled(layer.kernel_shape(), 0.5);
        let mut input = SpikeWave::empty(1, 1, 3, 15);
        input.set(0, 0, 1, 2);
        input.set(0, 0, 2, 9);
        apply(
            &mut w,
            &layer,
            Winner { map: 1, y: 0, x: 1 },
            &input,
            4,
            &task1_s1(),
            Rule::Stdp,
            &ReinforcementSignal::stdp(),
        );
        assert_eq!(w.kernel(0).collect::<Vec<_>>(), vec![0.5, 0.5]);
        // Tap 0 sees x=1 (t=2 <= 4): potentiated. Tap 1 sees x=2 (t=9): depressed.
        assert_eq!(w.get(1, 0, 0, 0), 0.5 + 0.004 * 0.25);
        assert_eq!(w.get(1, 0, 0, 1), 0.5 - 0.003 * 0.25);
    }

    #[test]
    fn init_is_deterministic() {
        let shape = KernelShape::new(4, 3, 5, 5);
        assert_eq!(init_weights(shape, 7), init_weights(shape, 7));
        assert_ne!(init_weights(shape, 7), init_weights(shape, 8));
    }
}
