//! The oriented-bars problem: can three S1 maps find the three
//! diagnostic orientations?

use crate::data::{
    gen_bars, make_stream, DistractorPolicy, LabeledImage, Orientation, TaskFilter, BARS_DISTRACTOR, BARS_HEIGHT,
    BARS_WIDTH,
};
use crate::error::Result;
use crate::network::Network;
use crate::plasticity::{PhiTracker, Rule};
use crate::spike::WeightTensor;

use super::config::BarsConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct BarsOutcome {
    pub seed: u64,
    /// All target images classified correctly after training.
    pub success: bool,
    /// Best-matching orientation of each S1 kernel.
    pub learned: Vec<Orientation>,
    pub iterations: u64,
    pub converged: bool,
}

/// Image with a single bar of orientation `o` in the left tile.
fn single_bar(o: Orientation) -> LabeledImage {
    let mut pixels = vec![0u8; BARS_WIDTH * BARS_HEIGHT];
    for (r, c) in o.cells() {
        pixels[r * BARS_WIDTH + c] = 255;
    }
    LabeledImage {
        height: BARS_HEIGHT,
        width: BARS_WIDTH,
        pixels,
        label: BARS_DISTRACTOR,
    }
}

/// Strongest S1 potential of each map for each lone bar, indexed
/// `[orientation][map]`.
pub fn s1_responses(net: &Network) -> Result<Vec<Vec<f64>>> {
    let maps = net.weights[0].shape().out_maps;
    Orientation::ALL
        .iter()
        .map(|&o| {
            let wave = net.encode(&single_bar(o))?;
            let p = net.propagate(&wave, 0, 1)?;
            let st = &p.states[0];
            let mut best = vec![f64::NEG_INFINITY; maps];
            for (i, &v) in st.potentials().iter().enumerate() {
                let m = i % maps;
                best[m] = best[m].max(v);
            }
            Ok(best)
        })
        .collect()
}

/// Orientation each S1 map responds to most strongly (ties to the lower
/// orientation).
pub fn learned_orientations(net: &Network) -> Result<Vec<Orientation>> {
    let r = s1_responses(net)?;
    let maps = r[0].len();
    Ok((0..maps)
        .map(|m| {
            let mut best = 0;
            for o in 1..r.len() {
                if r[o][m] > r[best][m] {
                    best = o;
                }
            }
            Orientation::ALL[best]
        })
        .collect())
}

fn max_abs_change(a: &[WeightTensor], b: &[WeightTensor]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.values().iter().zip(y.values()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// Fraction of target images `net` classifies correctly.
pub fn target_accuracy(net: &Network, images: &[LabeledImage]) -> Result<f64> {
    let mut hits = 0;
    let mut total = 0;
    for img in images.iter().filter(|i| i.label != BARS_DISTRACTOR) {
        total += 1;
        if net.forward(img)?.decision.label == img.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

/// Trains S1 (with `s1_rule`) and the decision layer (R-STDP) together on
/// a random-order stream of all 16 images until the weights settle.
pub fn run_bars(cfg: &BarsConfig, s1_rule: Rule, seed: u64) -> Result<BarsOutcome> {
    train_bars(cfg, s1_rule, seed).map(|(_, o)| o)
}

/// As [`run_bars`], also returning the trained network.
pub fn train_bars(cfg: &BarsConfig, s1_rule: Rule, seed: u64) -> Result<(Network, BarsOutcome)> {
    let spec = &cfg.bars;
    let images = gen_bars();
    let mut network = cfg.network.clone();
    network.layers[0].rule = s1_rule;
    let mut net = Network::new(network, seed)?;
    let labels: Vec<u32> = images.iter().map(|i| i.label).collect();
    let filter = TaskFilter::new(0..3, DistractorPolicy::Neutral);
    let stream = make_stream(&labels, &filter, seed, spec.max_iterations as usize, 1.0)?;
    let params: Vec<_> = net.config.layers.iter().map(|l| l.plasticity.clone()).collect();
    let mut tracker = PhiTracker::new(spec.phi_batch);
    let mut snapshot = net.weights.clone();
    let mut iterations = 0;
    let mut converged = false;
    for idx in stream.iter() {
        let img = &images[idx];
        let wave = net.encode(img)?;
        let label = (img.label != BARS_DISTRACTOR).then_some(img.label);
        net.train_step(&wave, 0, label, &[0, 1], &params, &mut tracker)?;
        iterations += 1;
        if iterations % spec.window == 0 {
            if max_abs_change(&snapshot, &net.weights) <= spec.tolerance {
                converged = true;
                break;
            }
            snapshot.clone_from(&net.weights);
        }
    }
    let success = target_accuracy(&net, &images)? == 1.0;
    let learned = learned_orientations(&net)?;
    let outcome = BarsOutcome {
        seed,
        success,
        learned,
        iterations,
        converged,
    };
    Ok((net, outcome))
}

/// Runs every seed; independent seeds run in parallel.
pub fn run_bars_seeds(cfg: &BarsConfig, s1_rule: Rule, seeds: &[u64]) -> Result<Vec<BarsOutcome>> {
    crate::network::par_map(seeds.len(), |i| run_bars(cfg, s1_rule, seeds[i]))
        .into_iter()
        .collect()
}

/// CSV with one row per seed: seed, success, iterations, converged and the
/// orientation learned by each S1 map.
pub fn write_report(path: &std::path::Path, outcomes: &[BarsOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let maps = outcomes.first().map_or(0, |o| o.learned.len());
    let mut header = vec!["seed".to_string(), "success".into(), "iterations".into(), "converged".into()];
    header.extend((0..maps).map(|m| format!("map_{m}")));
    w.write_record(&header)?;
    for o in outcomes {
        let mut row = vec![
            o.seed.to_string(),
            o.success.to_string(),
            o.iterations.to_string(),
            o.converged.to_string(),
        ];
        row.extend(o.learned.iter().map(|l| format!("{l:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
