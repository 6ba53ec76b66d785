//! Brute-force oracles and random-state generators shared by the
//! integration test targets. Every oracle recomputes its answer from the
//! definitions, without touching the incremental code paths it checks.

#![allow(dead_code)]

use dcsnn::layers::{CLayerConfig, PoolMode, SLayer};
use dcsnn::plasticity::{PlasticityParams, Stabilizer, Winner};
use dcsnn::{LayerState, SpikeWave, WeightTensor, NO_SPIKE};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

/// Which branch of the learning rule a test row exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Signal {
    Stdp,
    Reward,
    Punishment,
    Neutral,
}

pub const SIGNALS: [Signal; 4] = [Signal::Stdp, Signal::Reward, Signal::Punishment, Signal::Neutral];

/// Direct evaluation of the weight-change table.
pub fn delta_oracle(p: &PlasticityParams, s: Signal, phi_r: f64, phi_p: f64, causal: bool) -> f64 {
    match (s, causal) {
        (Signal::Stdp, true) => p.a_r_plus,
        (Signal::Stdp, false) => p.a_r_minus,
        (Signal::Reward, true) => phi_r * p.a_r_plus,
        (Signal::Reward, false) => phi_r * p.a_r_minus,
        (Signal::Punishment, true) => phi_p * p.a_p_minus,
        (Signal::Punishment, false) => phi_p * p.a_p_plus,
        (Signal::Neutral, _) => 0.0,
    }
}

pub fn update_oracle(w: f64, d: f64, s: Stabilizer) -> f64 {
    match s {
        Stabilizer::Multiplicative => w + d * w * (1.0 - w),
        Stabilizer::Clamp { lo, hi } => (w + d).max(lo).min(hi),
    }
}

fn rates(a_r_plus: f64, a_r_minus: f64, a_p_plus: f64, a_p_minus: f64, k: usize, r: usize, s: Stabilizer) -> PlasticityParams {
    PlasticityParams {
        a_r_plus,
        a_r_minus,
        a_p_plus,
        a_p_minus,
        k,
        r,
        stabilizer: s,
    }
}

/// The published per-layer learning rates of both digit tasks, with the
/// stabilizer each layer trains under. The Task 2 S2 depression rate is
/// listed with a positive sign in the source table; the sign constraint
/// forces it negative.
pub fn published_rows() -> Vec<(&'static str, PlasticityParams)> {
    let m = Stabilizer::Multiplicative;
    let clamp = Stabilizer::Clamp { lo: 0.2, hi: 0.8 };
    vec![
        ("task1 S1", rates(0.004, -0.003, 0.0, 0.0, 5, 3, m)),
        ("task1 S2", rates(0.004, -0.003, 0.0, 0.0, 8, 2, m)),
        ("task1 S3", rates(0.004, -0.003, 0.0005, -0.004, 1, 0, clamp)),
        ("task2 S1", rates(0.004, -0.003, 0.0, 0.0, 1, 0, m)),
        ("task2 S2", rates(0.04, -0.03, 0.005, -0.04, 1, 0, m)),
        ("task2 S3", rates(0.004, -0.003, 0.0005, -0.004, 1, 0, m)),
    ]
}

/// Replays the input bin by bin from scratch: a neuron's potential at bin
/// `t` is the sum of the weights of every input spike with time `<= t`
/// inside its window; it fires at the first bin where that sum reaches the
/// threshold and keeps the potential it had then. Returns `(times,
/// potentials)` in the layer-state index order.
pub fn s_layer_oracle(layer: &SLayer, w: &WeightTensor, input: &SpikeWave) -> (Vec<u32>, Vec<f64>) {
    let maps = layer.cfg.maps;
    let (oh, ow) = (layer.out_height, layer.out_width);
    let shape = w.shape();
    let bins = input.bins();
    let mut times = vec![NO_SPIKE; maps * oh * ow];
    let mut pots = vec![0.0; maps * oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            for m in 0..maps {
                let idx = (oy * ow + ox) * maps + m;
                let potential_at = |t: u32| {
                    let mut v = 0.0;
                    for i in 0..shape.in_depth {
                        for dy in 0..shape.win_h {
                            for dx in 0..shape.win_w {
                                if let Some((iy, ix)) = layer.input_at(oy, ox, dy, dx) {
                                    if matches!(input.time(i, iy, ix), Some(s) if s <= t) {
                                        v += w.get(m, i, dy, dx);
                                    }
                                }
                            }
                        }
                    }
                    v
                };
                let mut fired = None;
                if !layer.cfg.is_integrator() {
                    fired = (0..bins).find(|&t| potential_at(t) >= layer.cfg.threshold);
                }
                match fired {
                    Some(t) => {
                        times[idx] = t;
                        pots[idx] = potential_at(t);
                    }
                    None => pots[idx] = potential_at(bins.saturating_sub(1)),
                }
            }
        }
    }
    (times, pots)
}

/// Windows start at every multiple of the stride inside the map until one
/// reaches the last row (partial edge windows are kept).
fn pooled_len(input: usize, win: usize, stride: usize) -> usize {
    let mut n = 1;
    while (n - 1) * stride + win < input && n * stride < input {
        n += 1;
    }
    n
}

/// `(y0, y1, x0, x1)`, end-exclusive.
pub type Window = (usize, usize, usize, usize);

/// Window bounds of every pooled output, by map-less
/// `[row][col]` order, plus the output size.
pub fn pool_windows(cfg: &CLayerConfig, h: usize, w: usize) -> (usize, usize, Vec<Window>) {
    if cfg.stride == 0 {
        return (1, 1, vec![(0, h, 0, w)]);
    }
    let (ww, wh) = cfg.window;
    let oh = pooled_len(h, wh, cfg.stride);
    let ow = pooled_len(w, ww, cfg.stride);
    let mut out = Vec::new();
    for oy in 0..oh {
        for ox in 0..ow {
            let (y0, x0) = (oy * cfg.stride, ox * cfg.stride);
            out.push((y0, (y0 + wh).min(h), x0, (x0 + ww).min(w)));
        }
    }
    (oh, ow, out)
}

/// Earliest spike and largest potential of every window, `[map][row][col]`.
pub fn pool_oracle(cfg: &CLayerConfig, state: &LayerState) -> (usize, usize, Vec<u32>, Vec<f64>) {
    let (oh, ow, windows) = pool_windows(cfg, state.height(), state.width());
    let mut times = Vec::new();
    let mut pots = Vec::new();
    for m in 0..state.maps() {
        for &(y0, y1, x0, x1) in &windows {
            let mut t = NO_SPIKE;
            let mut p = f64::NEG_INFINITY;
            for y in y0..y1 {
                for x in x0..x1 {
                    t = t.min(state.spike_time(m, y, x).unwrap_or(NO_SPIKE));
                    p = p.max(state.potential(m, y, x));
                }
            }
            times.push(t);
            pots.push(p);
        }
    }
    (oh, ow, times, pots)
}

/// Sorts every fired neuron by (time, -potential, row, col, map) and keeps
/// each one whose map is still free and that sits farther than `r` from
/// every earlier pick, until `k` are kept.
pub fn winners_oracle(state: &LayerState, k: usize, r: usize) -> Vec<Winner> {
    let mut cands = Vec::new();
    for y in 0..state.height() {
        for x in 0..state.width() {
            for m in 0..state.maps() {
                if let Some(t) = state.spike_time(m, y, x) {
                    cands.push((t, state.potential(m, y, x), y, x, m));
                }
            }
        }
    }
    cands.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(b.1.total_cmp(&a.1))
            .then((a.2, a.3, a.4).cmp(&(b.2, b.3, b.4)))
    });
    let mut out: Vec<Winner> = Vec::new();
    for (_, _, y, x, m) in cands {
        if out.len() == k {
            break;
        }
        let free = out.iter().all(|w| w.map != m && (w.y.abs_diff(y) > r || w.x.abs_diff(x) > r));
        if free {
            out.push(Winner { map: m, y, x });
        }
    }
    out
}

/// A finished layer state: per neuron an optional spike time below `bins`
/// and a potential drawn from a small grid so that ties are common.
pub fn arb_state(max_maps: usize, max_side: usize, bins: u32) -> impl Strategy<Value = LayerState> {
    (1..=max_maps, 1..=max_side, 1..=max_side).prop_flat_map(move |(m, h, w)| {
        let n = m * h * w;
        (
            prop::collection::vec(prop_oneof![1 => Just(NO_SPIKE), 2 => 0..bins], n),
            prop::collection::vec(0u32..12, n),
        )
            .prop_map(move |(times, pots)| {
                let mut s = LayerState::new(m, h, w);
                for y in 0..h {
                    for x in 0..w {
                        for mm in 0..m {
                            let i = (mm * h + y) * w + x;
                            s.set_potential(mm, y, x, pots[i] as f64 * 0.5);
                            if times[i] != NO_SPIKE {
                                s.set_spike(mm, y, x, times[i]);
                            }
                        }
                    }
                }
                s
            })
    })
}

/// Pooling geometry that fits an `h x w` map.
pub fn arb_pool(h: usize, w: usize) -> impl Strategy<Value = CLayerConfig> {
    (1..=w, 1..=h, 0usize..4, prop_oneof![Just(PoolMode::Spike), Just(PoolMode::Potential)]).prop_map(
        |(ww, wh, stride, mode)| CLayerConfig {
            window: (ww, wh),
            stride,
            mode,
        },
    )
}

/// Runs `test` on `cases` deterministic random inputs and reports the first
/// failure, shrunk.
pub fn run_property<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}
