//! Layer-by-layer MNIST training with periodic evaluation and resumable
//! checkpoints.

use std::path::{Path, PathBuf};

use crate::data::{make_stream, LabeledImage, TaskFilter};
use crate::error::{Error, Result};
use crate::network::{par_map, Metrics, Network};
use crate::plasticity::{PhiTracker, PlasticityParams, Rule};
use crate::spike::SpikeWave;

use super::checkpoint::{self, ResumeState};
use super::config::{load_toml, to_toml, Task1Config};
use super::metrics::{append_eval, write_confusion, write_predictions};

/// A spike wave stored as per-bin lists of 16-bit neuron indices.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedWave {
    offsets: Vec<u32>,
    indices: Vec<u16>,
}

impl PackedWave {
    /// `None` when the wave has more neurons than 16-bit indices address.
    pub fn pack(wave: &SpikeWave) -> Option<Self> {
        if wave.len() > u16::MAX as usize + 1 {
            return None;
        }
        let ev = wave.events();
        let mut offsets = Vec::with_capacity(ev.bins() + 1);
        let mut indices = Vec::with_capacity(ev.total());
        offsets.push(0);
        for b in 0..ev.bins() {
            indices.extend(ev.at(b).iter().map(|&i| i as u16));
            offsets.push(indices.len() as u32);
        }
        Some(Self { offsets, indices })
    }

    pub fn unpack(&self, channels: usize, height: usize, width: usize) -> SpikeWave {
        let bins = (self.offsets.len() - 1) as u32;
        let mut w = SpikeWave::empty(channels, height, width, bins);
        for b in 0..bins as usize {
            for &i in &self.indices[self.offsets[b] as usize..self.offsets[b + 1] as usize] {
                w.set_raw(i as usize, b as u32);
            }
        }
        w
    }

    pub fn spike_count(&self) -> usize {
        self.indices.len()
    }
}

/// Waves feeding layer `start` for a set of images, computed once while the
/// layers below are frozen.
struct WaveCache {
    start: usize,
    dims: (usize, usize, usize),
    waves: Vec<Option<PackedWave>>,
}

impl WaveCache {
    fn build(net: &Network, images: &[LabeledImage], which: &[usize], start: usize) -> Result<Option<Self>> {
        let s = net.s_layer(start);
        let dims = (s.in_channels, s.in_height, s.in_width);
        if s.in_channels * s.in_height * s.in_width > u16::MAX as usize + 1 {
            return Ok(None);
        }
        let packed: Vec<Result<PackedWave>> = par_map(which.len(), |k| {
            let wave = net.encode(&images[which[k]])?;
            let out = net.propagate(&wave, 0, start)?.output;
            Ok(PackedWave::pack(&out).expect("size checked"))
        });
        let mut waves = vec![None; images.len()];
        for (&i, p) in which.iter().zip(packed) {
            waves[i] = Some(p?);
        }
        Ok(Some(Self { start, dims, waves }))
    }

    fn get(&self, i: usize) -> SpikeWave {
        let (c, h, w) = self.dims;
        self.waves[i].as_ref().expect("image was cached").unpack(c, h, w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    pub iteration: u64,
    pub accuracy: f64,
}

#[derive(Debug)]
pub struct Task1Outcome {
    pub network: Network,
    pub history: Vec<EvalPoint>,
    pub final_metrics: Metrics,
    pub iterations: u64,
}

/// Config of the run in an output directory; resuming requires a match.
pub const RUN_CONFIG: &str = "task1.toml";

pub fn checkpoint_dir(out: &Path, iteration: u64) -> PathBuf {
    out.join("checkpoints").join(format!("iter_{iteration:09}"))
}

pub fn latest_dir(out: &Path) -> PathBuf {
    out.join("checkpoints").join("latest")
}

fn eval_slice(cfg: &Task1Config, test: &[LabeledImage]) -> Vec<usize> {
    (0..cfg.task1.eval_images.min(test.len())).collect()
}

fn evaluate(
    net: &Network,
    test: &[LabeledImage],
    slice: &[usize],
    cache: Option<&WaveCache>,
) -> Result<Metrics> {
    match cache {
        Some(c) => {
            let truth: Vec<u32> = slice.iter().map(|&i| test[i].label).collect();
            let preds: Result<Vec<u32>> = par_map(slice.len(), |k| {
                Ok(net.forward_from(&c.get(slice[k]), c.start)?.decision.label)
            })
            .into_iter()
            .collect();
            Metrics::from_predictions(&truth, preds?, 10)
        }
        None => net.evaluate(test, slice),
    }
}

/// Trains every phase of the schedule in order, evaluating decision-making
/// phases every `eval_every` iterations and at their end. Outputs go to
/// `out`: `metrics.csv`, `confusion_<iteration>.csv`, `predictions.csv`
/// and `checkpoints/`. With `resume`, training continues from
/// `checkpoints/latest` when it exists.
pub fn train_task1(
    cfg: &Task1Config,
    train: &[LabeledImage],
    test: &[LabeledImage],
    out: &Path,
    resume: bool,
    log: &mut dyn FnMut(&str),
) -> Result<Task1Outcome> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("training and test sets must be nonempty"));
    }
    std::fs::create_dir_all(out)?;
    let spec = &cfg.task1;
    let latest = latest_dir(out);
    let recorded = out.join(RUN_CONFIG);
    let (mut net, mut phase0, mut iter0, mut tracker) = if resume && latest.join(checkpoint::MANIFEST).exists() {
        let same = recorded.exists() && load_toml::<Task1Config>(&recorded)? == *cfg;
        if !same {
            return Err(Error::Checkpoint(format!(
                "{} holds a run with a different config; start fresh instead",
                out.display()
            )));
        }
        let (net, m) = checkpoint::load(&latest, cfg.network.clone())?;
        let r = m
            .resume
            .ok_or_else(|| Error::Checkpoint("latest checkpoint has no resume state".into()))?;
        log(&format!("resuming at phase {} iteration {}", r.phase, r.phase_iteration));
        (net, r.phase, r.phase_iteration, r.tracker)
    } else {
        let _ = std::fs::remove_file(out.join("metrics.csv"));
        std::fs::write(&recorded, to_toml(cfg)?)?;
        (
            Network::new(cfg.network.clone(), spec.seed)?,
            0,
            0,
            PhiTracker::new(spec.phi_batch),
        )
    };
    let labels: Vec<u32> = train.iter().map(|i| i.label).collect();
    let slice = eval_slice(cfg, test);
    let base: Vec<PlasticityParams> = cfg.network.layers.iter().map(|l| l.plasticity.clone()).collect();
    let phase_offset = |p: usize| -> u64 { cfg.schedule.phases[..p].iter().map(|ph| ph.iterations).sum() };
    let mut history = Vec::new();
    let mut final_metrics = None;

    for (p, phase) in cfg.schedule.phases.iter().enumerate().skip(phase0) {
        let active: Vec<usize> = phase
            .layers
            .iter()
            .map(|n| cfg.network.layer_index(n).expect("validated"))
            .collect();
        for &l in &active {
            net.config.layers[l].rule = phase.rule;
        }
        let start = *active.iter().min().unwrap();
        let stream = make_stream(
            &labels,
            &TaskFilter::all(0..10),
            spec.seed.wrapping_add(p as u64),
            phase.iterations as usize,
            spec.fraction,
        )?;
        let decides = phase.rule == Rule::RStdp;
        let (train_cache, test_cache) = if start > 0 && phase.iterations >= 2 * stream.pool().len() as u64 {
            log(&format!("phase {p}: caching layer-{start} inputs for {} images", stream.pool().len()));
            let tc = WaveCache::build(&net, train, stream.pool(), start)?;
            let ec = if decides { WaveCache::build(&net, test, &slice, start)? } else { None };
            (tc, ec)
        } else {
            (None, None)
        };
        let first = if train_cache.is_some() { start } else { 0 };
        let mut params = base.clone();
        let mut window_truth = Vec::new();
        let mut window_pred = Vec::new();
        log(&format!("phase {p}: training {:?} with {:?} for {} iterations", phase.layers, phase.rule, phase.iterations));

        for (k, idx) in stream.iter_from(iter0 as usize).enumerate() {
            let it = iter0 + k as u64;
            if let Some(d) = phase.lr_doubling {
                for &l in &active {
                    params[l] = d.rates_after(&base[l], it);
                }
            }
            let wave = match &train_cache {
                Some(c) => c.get(idx),
                None => net.encode(&train[idx])?,
            };
            let report = net.train_step(&wave, first, Some(train[idx].label), &active, &params, &mut tracker)?;
            if let Some(d) = report.decision {
                window_truth.push(train[idx].label);
                window_pred.push(d.label);
            }
            let done = it + 1;
            let global = phase_offset(p) + done;
            let at_end = done == phase.iterations;
            if decides && (done.is_multiple_of(spec.eval_every) || at_end) {
                if !window_truth.is_empty() {
                    let tm = Metrics::from_predictions(&window_truth, std::mem::take(&mut window_pred), 10)?;
                    append_eval(&out.join("metrics.csv"), global, "train", &tm)?;
                    window_truth.clear();
                }
                let m = evaluate(&net, test, &slice, test_cache.as_ref())?;
                log(&format!("iteration {global}: test accuracy {:.4}", m.accuracy()));
                append_eval(&out.join("metrics.csv"), global, "test", &m)?;
                write_confusion(&out.join(format!("confusion_{global:09}.csv")), &m)?;
                checkpoint::save(&checkpoint_dir(out, global), &net, global, None)?;
                history.push(EvalPoint {
                    iteration: global,
                    accuracy: m.accuracy(),
                });
                final_metrics = Some(m);
            }
            if done.is_multiple_of(spec.checkpoint_every) || at_end {
                let resume = if at_end {
                    ResumeState {
                        phase: p + 1,
                        phase_iteration: 0,
                        tracker: PhiTracker::new(spec.phi_batch),
                    }
                } else {
                    ResumeState {
                        phase: p,
                        phase_iteration: done,
                        tracker: tracker.clone(),
                    }
                };
                checkpoint::save(&latest, &net, global, Some(&resume))?;
            }
        }
        iter0 = 0;
        phase0 = p + 1;
        tracker = PhiTracker::new(spec.phi_batch);
    }
    let _ = phase0;

    let final_metrics = match final_metrics {
        Some(m) => m,
        None => evaluate(&net, test, &slice, None)?,
    };
    let truth: Vec<u32> = slice.iter().map(|&i| test[i].label).collect();
    write_predictions(&out.join("predictions.csv"), &slice, &truth, &final_metrics)?;
    Ok(Task1Outcome {
        network: net,
        history,
        final_metrics,
        iterations: cfg.schedule.total_iterations(),
    })
}

/// Evaluates a saved checkpoint on the first `images` test images.
pub fn eval_checkpoint(cfg: &Task1Config, dir: &Path, test: &[LabeledImage], images: usize) -> Result<Metrics> {
    let (net, _) = checkpoint::load(dir, cfg.network.clone())?;
    let slice: Vec<usize> = (0..images.min(test.len())).collect();
    net.evaluate(test, &slice)
}

/// Runs a full training per training fraction and writes
/// `fraction_curve.csv` with `(fraction, accuracy)` rows.
pub fn train_fraction_curve(
    cfg: &Task1Config,
    fractions: &[f64],
    train: &[LabeledImage],
    test: &[LabeledImage],
    out: &Path,
    log: &mut dyn FnMut(&str),
) -> Result<Vec<(f64, f64)>> {
    if fractions.is_empty() {
        return Err(Error::invalid("no training fractions given"));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::invalid(format!("training fraction {f} outside (0, 1]")));
    }
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for &f in fractions {
        let mut c = cfg.clone();
        c.task1.fraction = f;
        log(&format!("fraction {f}"));
        let o = train_task1(&c, train, test, &out.join(format!("fraction_{f}")), true, log)?;
        rows.push((f, o.final_metrics.accuracy()));
    }
    let mut w = csv::Writer::from_path(out.join("fraction_curve.csv"))?;
    w.write_record(["fraction", "accuracy"])?;
    for (f, a) in &rows {
        w.write_record([f.to_string(), format!("{a:.6}")])?;
    }
    w.flush()?;
    Ok(rows)
}
