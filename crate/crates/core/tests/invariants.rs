//! Properties that must hold for any input.

mod common;

use common::{delta_oracle, published_rows, Signal};
use dcsnn::data::{gen_bars, make_stream, DistractorPolicy, TaskFilter};
use dcsnn::encoding::{encode, EncoderConfig, Responses};
use dcsnn::harness::config::{bars_network, task2_network};
use dcsnn::layers::{SLayer, SLayerConfig};
use dcsnn::plasticity::{
    delta, init_weights_with, select_winners, update_weight, PhiTracker, ReinforcementSignal, Rule, SignalKind,
    Stabilizer,
};
use dcsnn::{Network, SpikeWave, NO_SPIKE};
use proptest::prelude::*;

fn run_layer(layer: &SLayer, w: &dcsnn::WeightTensor, input: &SpikeWave) -> Vec<u32> {
    let mut state = layer.new_state();
    let events = input.events();
    for t in 0..input.bins() {
        layer.step(w, events.at(t as usize), &mut state, t, &mut Vec::new()).unwrap();
    }
    state.spike_times().to_vec()
}

fn arb_wave(c: usize, h: usize, w: usize, bins: u32) -> impl Strategy<Value = SpikeWave> {
    prop::collection::vec(prop_oneof![Just(NO_SPIKE), 0..bins], c * h * w)
        .prop_map(move |t| SpikeWave::from_times(c, h, w, bins, t).unwrap())
}

fn arb_signal() -> impl Strategy<Value = ReinforcementSignal> {
    (
        prop_oneof![Just(SignalKind::Reward), Just(SignalKind::Punishment), Just(SignalKind::Neutral)],
        0.0..=1.0f64,
    )
        .prop_map(|(kind, phi_r)| ReinforcementSignal {
            kind,
            phi_r,
            phi_p: 1.0 - phi_r,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn raising_the_threshold_never_fires_earlier(
        input in arb_wave(2, 6, 6, 8),
        seed in any::<u64>(),
        lo in 0.5..4.0f64,
        extra in 0.0..4.0f64,
    ) {
        let cfg = |threshold| SLayerConfig { maps: 3, window: (3, 3), depth: 2, threshold, stride: 1, padding: 1 };
        let a = SLayer::new(cfg(lo), 2, 6, 6).unwrap();
        let b = SLayer::new(cfg(lo + extra), 2, 6, 6).unwrap();
        let w = init_weights_with(a.kernel_shape(), seed, 0.5, 0.3);
        let (ta, tb) = (run_layer(&a, &w, &input), run_layer(&b, &w, &input));
        for (x, y) in ta.iter().zip(&tb) {
            prop_assert!(y >= x);
        }
    }

    #[test]
    fn spike_dumps_round_trip(input in (1usize..4, 1usize..6, 1usize..6, 1u32..20)
        .prop_flat_map(|(c, h, w, b)| arb_wave(c, h, w, b))) {
        let mut buf = Vec::new();
        input.write_dump(&mut buf).unwrap();
        prop_assert_eq!(SpikeWave::read_dump(&buf[..]).unwrap(), input);
    }

    #[test]
    fn plain_stdp_is_the_reward_rule_at_full_miss_rate(
        row in 0usize..6,
        signal in arb_signal(),
        causal in any::<bool>(),
    ) {
        let p = &published_rows()[row].1;
        let stdp = ReinforcementSignal { kind: SignalKind::Reward, phi_r: 1.0, phi_p: 0.0 };
        prop_assert_eq!(delta(p, Rule::Stdp, &signal, causal), delta(p, Rule::RStdp, &stdp, causal));
        prop_assert_eq!(delta(p, Rule::Stdp, &signal, causal), delta_oracle(p, Signal::Stdp, 0.0, 0.0, causal));
    }

    #[test]
    fn reward_keeps_and_punishment_inverts_the_stdp_sign_pattern(
        row in 0usize..6,
        phi_r in 0.01..=1.0f64,
        causal in any::<bool>(),
    ) {
        let p = &published_rows()[row].1;
        let stdp = delta(p, Rule::Stdp, &ReinforcementSignal::stdp(), causal);
        let reward = ReinforcementSignal { kind: SignalKind::Reward, phi_r, phi_p: 1.0 - phi_r };
        let punish = ReinforcementSignal { kind: SignalKind::Punishment, phi_r: 1.0 - phi_r, phi_p: phi_r };
        let neutral = ReinforcementSignal { kind: SignalKind::Neutral, phi_r, phi_p: 1.0 - phi_r };
        prop_assert_eq!(delta(p, Rule::RStdp, &reward, causal).signum(), stdp.signum());
        let d = delta(p, Rule::RStdp, &punish, causal);
        prop_assert!(d == 0.0 || d.signum() == -stdp.signum());
        prop_assert_eq!(delta(p, Rule::RStdp, &neutral, causal), 0.0);
        prop_assert_eq!(delta(p, Rule::Frozen, &reward, causal), 0.0);
    }

    #[test]
    fn multiplicative_updates_stay_inside_the_unit_interval(
        w0 in 0.0..=1.0f64,
        deltas in prop::collection::vec(-1.0..=1.0f64, 1..300),
    ) {
        let mut w = w0;
        for d in deltas {
            w = update_weight(w, d, Stabilizer::Multiplicative);
            prop_assert!((0.0..=1.0).contains(&w), "{w}");
        }
    }

    #[test]
    fn winners_use_distinct_maps_and_respect_the_inhibition_radius(
        state in common::arb_state(6, 8, 6),
        k in 1usize..8,
        r in 0usize..4,
    ) {
        let ws = select_winners(&state, k, r);
        prop_assert!(ws.len() <= k);
        for (i, a) in ws.iter().enumerate() {
            prop_assert!(state.fired(a.map, a.y, a.x));
            for b in &ws[i + 1..] {
                prop_assert!(a.map != b.map);
                prop_assert!(a.y.abs_diff(b.y) > r || a.x.abs_diff(b.x) > r);
            }
        }
    }

    #[test]
    fn stronger_responses_never_spike_later(
        values in prop::collection::vec(0u32..200, 4..60),
        bins in 1u32..16,
    ) {
        // Strictly stronger survivors get a bin no later than weaker ones.
        let r = Responses { channels: 1, height: 1, width: values.len(), values: values.iter().map(|&v| v as f64).collect() };
        let cfg = EncoderConfig { bins, threshold: 50.0, ..EncoderConfig::default() };
        let wave = encode(&r, &cfg);
        for i in 0..values.len() {
            for j in 0..values.len() {
                if let (Some(ti), Some(tj)) = (wave.time(0, 0, i), wave.time(0, 0, j)) {
                    if values[i] > values[j] {
                        prop_assert!(ti <= tj);
                    }
                }
            }
        }
    }

    #[test]
    fn the_adjustment_factors_sum_to_one_after_each_batch(
        outcomes in prop::collection::vec(0u8..3, 1..400),
        batch in 1usize..40,
    ) {
        use dcsnn::plasticity::Outcome;
        let mut t = PhiTracker::new(batch);
        for o in outcomes {
            t.record([Outcome::Hit, Outcome::Miss, Outcome::Neutral][o as usize]);
            prop_assert!((t.phi_r + t.phi_p - 1.0).abs() < 1e-12);
            prop_assert!(t.hits + t.misses < batch);
        }
    }
}

#[test]
fn gen_bars_is_pure() {
    assert_eq!(gen_bars(), gen_bars());
}

#[test]
fn streams_depend_only_on_their_seed() {
    let labels: Vec<u32> = (0..500).map(|i| (i * 7 % 10) as u32).collect();
    let f = TaskFilter::new([3, 8], DistractorPolicy::Neutral);
    let a = make_stream(&labels, &f, 9, 2000, 1.0).unwrap();
    let b = make_stream(&labels, &f, 9, 2000, 1.0).unwrap();
    let c = make_stream(&labels, &f, 10, 2000, 1.0).unwrap();
    let (a, b, c): (Vec<_>, Vec<_>, Vec<_>) = (a.iter().collect(), b.iter().collect(), c.iter().collect());
    assert_eq!(a, b);
    assert_ne!(a, c);
}

/// Training only touches the layers it names; frozen layers keep their
/// weights bit for bit.
#[test]
fn a_training_step_only_changes_the_active_layers() {
    let mut cfg = task2_network(4, (3, 8), Rule::Stdp);
    cfg.layers[0].rule = Rule::Frozen;
    let mut net = Network::new(cfg, 1).unwrap();
    let params: Vec<_> = net.config.layers.iter().map(|l| l.plasticity.clone()).collect();
    let before = net.weights.clone();
    let mut tracker = PhiTracker::new(10);
    let img = {
        let mut pixels = vec![0u8; 28 * 28];
        for y in 4..24 {
            for x in 4..24 {
                pixels[y * 28 + x] = ((x * 37 + y * 11) % 256) as u8;
            }
        }
        dcsnn::data::LabeledImage { height: 28, width: 28, pixels, label: 3 }
    };
    let wave = net.encode(&img).unwrap();
    assert!(net.train_step(&wave, 0, Some(3), &[0], &params, &mut tracker).is_err());
    let report = net.train_step(&wave, 0, Some(3), &[1, 2], &params, &mut tracker).unwrap();
    assert!(report.decision.is_some());
    assert_eq!(net.weights[0], before[0]);
    assert!(net.weights[1] != before[1] || net.weights[2] != before[2]);
}

#[test]
fn bars_training_is_deterministic_and_seed_sensitive() {
    let run = |seed| {
        let mut net = Network::new(bars_network(Rule::Stdp), seed).unwrap();
        let images = gen_bars();
        let params: Vec<_> = net.config.layers.iter().map(|l| l.plasticity.clone()).collect();
        let mut tracker = PhiTracker::new(20);
        for i in 0..300 {
            let img = &images[(i * 5 + seed as usize) % 16];
            let wave = net.encode(img).unwrap();
            let label = (img.label != dcsnn::data::BARS_DISTRACTOR).then_some(img.label);
            net.train_step(&wave, 0, label, &[0, 1], &params, &mut tracker).unwrap();
        }
        net.weights
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}
