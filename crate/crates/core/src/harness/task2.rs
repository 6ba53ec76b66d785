//! Two-digit tasks: S1 pre-trained with STDP, then S2 and the decision
//! layer trained together while the other eight digits act as distractors.

use std::path::{Path, PathBuf};

use crate::data::{make_stream, target_slice, LabeledImage, TaskFilter};
use crate::error::Result;
use crate::network::{par_map, Metrics, Network, NetworkConfig};
use crate::plasticity::{PhiTracker, Rule};
use crate::spike::WeightTensor;

use super::checkpoint;
use super::config::{load_toml, to_toml, with_s2_maps, Task2Config, Task2Spec};

#[derive(Clone, Debug)]
pub struct Task2Result {
    pub pair: (u32, u32),
    pub maps: usize,
    pub rule: Rule,
    pub seed: u64,
    pub metrics: Metrics,
    /// Test images used, as indices into the test set.
    pub slice: Vec<usize>,
    pub network: Network,
}

impl Task2Result {
    pub fn accuracy(&self) -> f64 {
        self.metrics.accuracy()
    }
}

/// Network for one sweep cell.
pub fn cell_network(cfg: &Task2Config, pair: (u32, u32), maps: usize, s2_rule: Rule) -> NetworkConfig {
    let mut net = with_s2_maps(&cfg.network, maps);
    net.labels = vec![pair.0, pair.1];
    net.layers[1].rule = s2_rule;
    net
}

/// STDP training of S1 alone on all digits. Independent of the pair, the
/// S2 size and the S2 rule, so one result serves a whole sweep per seed.
pub fn pretrain_s1(cfg: &Task2Config, seed: u64, train: &[LabeledImage]) -> Result<WeightTensor> {
    let config = cell_network(cfg, (0, 1), 1, Rule::Stdp);
    let mut net = Network::new(config, seed)?;
    let labels: Vec<u32> = train.iter().map(|i| i.label).collect();
    let stream = make_stream(&labels, &TaskFilter::all(0..10), seed, cfg.task2.s1_iterations as usize, 1.0)?;
    let base: Vec<_> = net.config.layers.iter().map(|l| l.plasticity.clone()).collect();
    let mut params = base.clone();
    let mut tracker = PhiTracker::new(cfg.task2.phi_batch);
    for (it, idx) in stream.iter().enumerate() {
        if let Some(d) = cfg.task2.s1_lr_doubling {
            params[0] = d.rates_after(&base[0], it as u64);
        }
        let wave = net.encode(&train[idx])?;
        net.train_step(&wave, 0, None, &[0], &params, &mut tracker)?;
    }
    Ok(net.weights.swap_remove(0))
}

/// Trains S2 (with `s2_rule`) and S3 (R-STDP) together on a stream of all
/// digits, then tests on the first `test_per_class` test images of each
/// target digit.
#[allow(clippy::too_many_arguments)]
pub fn train_task2(
    cfg: &Task2Config,
    s1: &WeightTensor,
    pair: (u32, u32),
    maps: usize,
    s2_rule: Rule,
    seed: u64,
    train: &[LabeledImage],
    test: &[LabeledImage],
) -> Result<Task2Result> {
    let config = cell_network(cfg, pair, maps, s2_rule);
    let mut net = Network::new(config, seed)?;
    net.weights[0] = s1.clone();
    net.config.layers[0].rule = Rule::Frozen;
    let labels: Vec<u32> = train.iter().map(|i| i.label).collect();
    let filter = TaskFilter::new([pair.0, pair.1], cfg.task2.distractor_policy);
    let stream = make_stream(
        &labels,
        &filter,
        seed.wrapping_add(1),
        cfg.task2.iterations as usize,
        1.0,
    )?;
    let params: Vec<_> = net.config.layers.iter().map(|l| l.plasticity.clone()).collect();
    let mut tracker = PhiTracker::new(cfg.task2.phi_batch);
    for idx in stream.iter() {
        let img = &train[idx];
        let wave = net.encode(img)?;
        let label = filter.is_target(img.label).then_some(img.label);
        net.train_step(&wave, 0, label, &[1, 2], &params, &mut tracker)?;
    }
    let slice = target_slice(test, &[pair.0, pair.1], cfg.task2.test_per_class);
    let metrics = net.evaluate(test, &slice)?;
    Ok(Task2Result {
        pair,
        maps,
        rule: s2_rule,
        seed,
        metrics,
        slice,
        network: net,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub pair: (u32, u32),
    pub maps: usize,
    pub rule: Rule,
    pub seed: u64,
    pub accuracy: f64,
}

fn rule_name(r: Rule) -> &'static str {
    match r {
        Rule::Stdp => "stdp",
        Rule::RStdp => "r-stdp",
        Rule::Frozen => "frozen",
    }
}

/// Checkpoint directory of one sweep cell.
pub fn cell_dir(out: &Path, pair: (u32, u32), maps: usize, rule: Rule, seed: u64) -> PathBuf {
    out.join("cells")
        .join(format!("{}-{}_maps{}_{}_seed{}", pair.0, pair.1, maps, rule_name(rule), seed))
}

/// Task settings stored beside each cell checkpoint.
pub const CELL_SPEC: &str = "task2.toml";

/// Accuracy of a finished cell found in `dir`, re-evaluated from its
/// weights. `None` when the checkpoint is missing or was trained under a
/// different network or task config.
pub fn cached_cell(
    cfg: &Task2Config,
    dir: &Path,
    pair: (u32, u32),
    maps: usize,
    rule: Rule,
    test: &[LabeledImage],
) -> Result<Option<f64>> {
    if !dir.join(checkpoint::MANIFEST).exists() || !dir.join(CELL_SPEC).exists() {
        return Ok(None);
    }
    let spec: Task2Spec = load_toml(&dir.join(CELL_SPEC))?;
    if spec != cfg.task2 {
        return Ok(None);
    }
    let (net, _) = checkpoint::load_saved(dir)?;
    let mut expected = cell_network(cfg, pair, maps, rule);
    expected.layers[0].rule = Rule::Frozen;
    if net.config != expected {
        return Ok(None);
    }
    let slice = target_slice(test, &[pair.0, pair.1], cfg.task2.test_per_class);
    Ok(Some(net.evaluate(test, &slice)?.accuracy()))
}

/// Every (pair, maps, rule) cell for every seed. Cells run in parallel;
/// rows come back in sweep order. With `out`, writes `sweep.csv` and a
/// checkpoint per cell; with `resume` as well, cells whose checkpoint
/// matches the config are re-evaluated instead of retrained.
pub fn run_sweep(
    cfg: &Task2Config,
    train: &[LabeledImage],
    test: &[LabeledImage],
    out: Option<&Path>,
    resume: bool,
    log: &mut dyn FnMut(&str),
) -> Result<Vec<SweepRow>> {
    cfg.sweep.validate()?;
    let mut rows = Vec::new();
    for &seed in &cfg.sweep.seeds {
        let mut cells = Vec::new();
        for &pair in &cfg.sweep.pairs {
            for &maps in &cfg.sweep.s2_map_counts {
                for &rule in &cfg.sweep.s2_rules {
                    cells.push((pair, maps, rule));
                }
            }
        }
        let mut cached = vec![None; cells.len()];
        if let (Some(dir), true) = (out, resume) {
            for (i, &(pair, maps, rule)) in cells.iter().enumerate() {
                cached[i] = cached_cell(cfg, &cell_dir(dir, pair, maps, rule, seed), pair, maps, rule, test)?;
            }
        }
        let todo = cached.iter().filter(|c| c.is_none()).count();
        let s1 = if todo > 0 {
            log(&format!("seed {seed}: pre-training S1"));
            Some(pretrain_s1(cfg, seed, train)?)
        } else {
            None
        };
        log(&format!("seed {seed}: {} cells, {todo} to train", cells.len()));
        let results: Vec<Result<SweepRow>> = par_map(cells.len(), |i| {
            let (pair, maps, rule) = cells[i];
            let accuracy = match (cached[i], &s1) {
                (Some(a), _) => a,
                (None, Some(s1)) => {
                    let r = train_task2(cfg, s1, pair, maps, rule, seed, train, test)?;
                    if let Some(dir) = out {
                        let d = cell_dir(dir, pair, maps, rule, seed);
                        checkpoint::save(&d, &r.network, cfg.task2.iterations, None)?;
                        std::fs::write(d.join(CELL_SPEC), to_toml(&cfg.task2)?)?;
                    }
                    r.accuracy()
                }
                (None, None) => unreachable!("S1 is pre-trained whenever a cell needs training"),
            };
            Ok(SweepRow {
                pair,
                maps,
                rule,
                seed,
                accuracy,
            })
        });
        for r in results {
            let r = r?;
            log(&format!(
                "pair {}-{} maps {} {}: accuracy {:.3}",
                r.pair.0,
                r.pair.1,
                r.maps,
                rule_name(r.rule),
                r.accuracy
            ));
            rows.push(r);
        }
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_sweep(&dir.join("sweep.csv"), &rows)?;
    }
    Ok(rows)
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["pair", "maps", "rule", "seed", "accuracy"])?;
    for r in rows {
        w.write_record([
            format!("{}-{}", r.pair.0, r.pair.1),
            r.maps.to_string(),
            rule_name(r.rule).to_string(),
            r.seed.to_string(),
            format!("{:.6}", r.accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean accuracy of the rows matching `maps` and `rule`.
pub fn mean_accuracy(rows: &[SweepRow], maps: usize, rule: Rule) -> Option<f64> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.maps == maps && r.rule == rule)
        .map(|r| r.accuracy)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
