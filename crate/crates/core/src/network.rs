//! Encoder plus a stack of S/C layer pairs, run bin by bin as a wavefront.

use serde::{Deserialize, Serialize};

use crate::data::LabeledImage;
use crate::encoding::{encode_image, EncoderConfig};
use crate::error::{Error, Result};
use crate::layers::{CLayer, CLayerConfig, SLayer, SLayerConfig};
use crate::plasticity::{
    apply, init_weights, select_winners, Outcome, PhiTracker, PlasticityParams, ReinforcementSignal,
    Rule, Winner,
};
use crate::spike::{LayerState, SpikeWave, WeightTensor, NO_SPIKE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub name: String,
    pub s: SLayerConfig,
    pub c: CLayerConfig,
    pub plasticity: PlasticityParams,
    pub rule: Rule,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionMode {
    EarliestSpike,
    MaxPotential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// `(width, height)` of input images.
    pub input: (usize, usize),
    pub encoder: EncoderConfig,
    pub layers: Vec<LayerConfig>,
    pub decision: DecisionMode,
    /// Class label of each neuron (map) of the final layer.
    pub labels: Vec<u32>,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let Some(last) = self.layers.last() else {
            return Err(Error::config("network has no layers"));
        };
        for (i, l) in self.layers.iter().enumerate() {
            l.plasticity.validate()?;
            if l.s.is_integrator() && i + 1 != self.layers.len() {
                return Err(Error::config(format!(
                    "layer {} has an infinite threshold but is not the last layer",
                    l.name
                )));
            }
        }
        if !last.c.is_global() {
            return Err(Error::config("the final pooling layer must be global (stride 0)"));
        }
        if self.labels.len() != last.s.maps {
            return Err(Error::config(format!(
                "{} labels for {} decision neurons",
                self.labels.len(),
                last.s.maps
            )));
        }
        Ok(())
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }
}

/// Per-neuron outputs of the final (global) pooling layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FinalOutputs {
    /// Earliest spike per map; integrator layers report the stamped time.
    pub times: Vec<u32>,
    /// Largest potential per map.
    pub potentials: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub label: u32,
    pub neuron: usize,
    /// Potential (max-potential mode) or spike time (earliest-spike mode,
    /// infinite when silent).
    pub score: f64,
}

/// Picks the deciding neuron. Max-potential: largest potential. Earliest
/// spike: smallest time, then largest potential. Remaining ties go to the
/// lowest index.
pub fn decide(outputs: &FinalOutputs, mode: DecisionMode, labels: &[u32]) -> Decision {
    let n = outputs.potentials.len();
    let mut best = 0;
    for i in 1..n {
        let better = match mode {
            DecisionMode::MaxPotential => outputs.potentials[i] > outputs.potentials[best],
            DecisionMode::EarliestSpike => {
                let (ti, tb) = (outputs.times[i], outputs.times[best]);
                ti < tb || (ti == tb && outputs.potentials[i] > outputs.potentials[best])
            }
        };
        if better {
            best = i;
        }
    }
    let score = match mode {
        DecisionMode::MaxPotential => outputs.potentials[best],
        DecisionMode::EarliestSpike => match outputs.times[best] {
            NO_SPIKE => f64::INFINITY,
            t => t as f64,
        },
    };
    Decision {
        label: labels[best],
        neuron: best,
        score,
    }
}

/// Everything a pass over layers `start..end` produced.
#[derive(Clone, Debug)]
pub struct Propagation {
    pub start: usize,
    /// Spike times feeding each layer of the range.
    pub inputs: Vec<SpikeWave>,
    pub states: Vec<LayerState>,
    /// Pooled spikes of the last layer of the range.
    pub output: SpikeWave,
}

impl Propagation {
    pub fn state(&self, layer: usize) -> &LayerState {
        &self.states[layer - self.start]
    }

    pub fn input(&self, layer: usize) -> &SpikeWave {
        &self.inputs[layer - self.start]
    }
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub decision: Decision,
    pub outputs: FinalOutputs,
    pub propagation: Propagation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub decision: Option<Decision>,
    pub outcome: Outcome,
    pub winners: Vec<(usize, Vec<Winner>)>,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub config: NetworkConfig,
    s_layers: Vec<SLayer>,
    c_layers: Vec<CLayer>,
    pub weights: Vec<WeightTensor>,
}

impl Network {
    /// Builds the layer geometry and draws initial weights; layer `i` uses
    /// seed `seed + i`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let (s_layers, c_layers) = Self::geometry(&config)?;
        let weights = s_layers
            .iter()
            .enumerate()
            .map(|(i, s)| init_weights(s.kernel_shape(), seed.wrapping_add(i as u64)))
            .collect();
        Ok(Self {
            config,
            s_layers,
            c_layers,
            weights,
        })
    }

    pub fn with_weights(config: NetworkConfig, weights: Vec<WeightTensor>) -> Result<Self> {
        let (s_layers, c_layers) = Self::geometry(&config)?;
        if weights.len() != s_layers.len() {
            return Err(Error::config(format!(
                "{} weight tensors for {} layers",
                weights.len(),
                s_layers.len()
            )));
        }
        for (s, w) in s_layers.iter().zip(&weights) {
            if s.kernel_shape() != w.shape() {
                return Err(Error::config(format!(
                    "weights {:?} do not fit layer {} ({:?})",
                    w.shape(),
                    s.cfg.maps,
                    s.kernel_shape()
                )));
            }
        }
        Ok(Self {
            config,
            s_layers,
            c_layers,
            weights,
        })
    }

    fn geometry(config: &NetworkConfig) -> Result<(Vec<SLayer>, Vec<CLayer>)> {
        config.validate()?;
        let (mut w, mut h) = config.input;
        let mut depth = config.encoder.channels();
        let mut s_layers = Vec::new();
        let mut c_layers = Vec::new();
        for l in &config.layers {
            let s = SLayer::new(l.s.clone(), depth, h, w)
                .map_err(|e| Error::config(format!("layer {}: {e}", l.name)))?;
            let c = CLayer::new(l.c.clone(), l.s.maps, s.out_height, s.out_width)
                .map_err(|e| Error::config(format!("layer {}: {e}", l.name)))?;
            depth = l.s.maps;
            h = c.out_height;
            w = c.out_width;
            s_layers.push(s);
            c_layers.push(c);
        }
        Ok((s_layers, c_layers))
    }

    pub fn s_layer(&self, i: usize) -> &SLayer {
        &self.s_layers[i]
    }

    pub fn c_layer(&self, i: usize) -> &CLayer {
        &self.c_layers[i]
    }

    pub fn depth(&self) -> usize {
        self.s_layers.len()
    }

    pub fn bins(&self) -> u32 {
        self.config.encoder.bins
    }

    pub fn encode(&self, image: &LabeledImage) -> Result<SpikeWave> {
        let (w, h) = self.config.input;
        if image.width != w || image.height != h {
            return Err(Error::invalid(format!(
                "image is {}x{}, network expects {w}x{h}",
                image.width, image.height
            )));
        }
        encode_image(&image.to_f64(), h, w, &self.config.encoder)
    }

    /// Runs layers `start..end` on `input` (the spike wave feeding layer
    /// `start`), one bin at a time through every layer of the range.
    pub fn propagate(&self, input: &SpikeWave, start: usize, end: usize) -> Result<Propagation> {
        if start >= end || end > self.depth() {
            return Err(Error::invalid(format!("bad layer range {start}..{end}")));
        }
        let first = &self.s_layers[start];
        if (input.channels(), input.height(), input.width())
            != (first.in_channels, first.in_height, first.in_width)
        {
            return Err(Error::invalid(format!(
                "input wave {}x{}x{} does not fit layer {start}",
                input.channels(),
                input.height(),
                input.width()
            )));
        }
        let bins = input.bins();
        let events = input.events();
        let mut states: Vec<LayerState> = (start..end).map(|l| self.s_layers[l].new_state()).collect();
        let mut outputs: Vec<SpikeWave> = (start..end).map(|l| self.c_layers[l].empty_output(bins)).collect();
        let mut spikes: Vec<u32> = Vec::new();
        let mut emitted: Vec<u32> = Vec::new();
        let mut pooled: Vec<u32> = Vec::new();
        for t in 0..bins {
            spikes.clear();
            spikes.extend_from_slice(events.at(t as usize));
            for (k, l) in (start..end).enumerate() {
                if spikes.is_empty() {
                    break;
                }
                emitted.clear();
                self.s_layers[l].step(&self.weights[l], &spikes, &mut states[k], t, &mut emitted)?;
                pooled.clear();
                self.c_layers[l].propagate(&states[k], &emitted, t, &mut outputs[k], &mut pooled);
                std::mem::swap(&mut spikes, &mut pooled);
            }
        }
        for (k, l) in (start..end).enumerate() {
            self.s_layers[l].finalize(&mut states[k], bins);
        }
        let output = outputs.pop().expect("nonempty range");
        let mut inputs = Vec::with_capacity(end - start);
        inputs.push(input.clone());
        inputs.extend(outputs);
        Ok(Propagation {
            start,
            inputs,
            states,
            output,
        })
    }

    /// Global pooling of the final S-layer state.
    pub fn final_outputs(&self, state: &LayerState) -> FinalOutputs {
        let maps = state.maps();
        let mut times = vec![NO_SPIKE; maps];
        let mut potentials = vec![f64::NEG_INFINITY; maps];
        for (i, (&t, &p)) in state.spike_times().iter().zip(state.potentials()).enumerate() {
            let m = i % maps;
            times[m] = times[m].min(t);
            potentials[m] = potentials[m].max(p);
        }
        FinalOutputs { times, potentials }
    }

    /// Full pass from an encoded wave (or from the wave feeding `start`).
    pub fn forward_from(&self, input: &SpikeWave, start: usize) -> Result<Forward> {
        let propagation = self.propagate(input, start, self.depth())?;
        let outputs = self.final_outputs(propagation.states.last().unwrap());
        let decision = decide(&outputs, self.config.decision, &self.config.labels);
        Ok(Forward {
            decision,
            outputs,
            propagation,
        })
    }

    pub fn forward_wave(&self, wave: &SpikeWave) -> Result<Forward> {
        self.forward_from(wave, 0)
    }

    pub fn forward(&self, image: &LabeledImage) -> Result<Forward> {
        self.forward_wave(&self.encode(image)?)
    }

    /// One training iteration.
    ///
    /// `input` feeds layer `start`. Layers in `active` learn with their
    /// configured rule using `params[layer]` (which may carry scheduled
    /// learning rates). When an R-STDP layer is active the whole network
    /// runs, the decision is compared to `label` (`None` marks a
    /// distractor and yields a neutral signal) and `tracker` is updated.
    /// All weight changes are computed from this image's spikes before any
    /// is applied.
    pub fn train_step(
        &mut self,
        input: &SpikeWave,
        start: usize,
        label: Option<u32>,
        active: &[usize],
        params: &[PlasticityParams],
        tracker: &mut PhiTracker,
    ) -> Result<StepReport> {
        if active.is_empty() {
            return Err(Error::config("no active layers"));
        }
        let mut needs_decision = false;
        for &l in active {
            if l < start || l >= self.depth() {
                return Err(Error::config(format!("active layer {l} outside {start}..{}", self.depth())));
            }
            match self.config.layers[l].rule {
                Rule::Frozen => {
                    return Err(Error::config(format!("layer {} is frozen", self.config.layers[l].name)))
                }
                Rule::RStdp => needs_decision = true,
                Rule::Stdp => {}
            }
        }
        let (propagation, decision) = if needs_decision {
            let f = self.forward_from(input, start)?;
            (f.propagation, Some(f.decision))
        } else {
            let end = active.iter().max().unwrap() + 1;
            (self.propagate(input, start, end)?, None)
        };
        let outcome = match (label, decision) {
            (Some(l), Some(d)) if d.label == l => Outcome::Hit,
            (Some(_), Some(_)) => Outcome::Miss,
            _ => Outcome::Neutral,
        };
        let signal = if needs_decision {
            let s = tracker.signal(outcome);
            tracker.record(outcome);
            s
        } else {
            ReinforcementSignal::stdp()
        };

        let mut winners = Vec::with_capacity(active.len());
        for &l in active {
            let p = &params[l];
            winners.push((l, select_winners(propagation.state(l), p.k, p.r)));
        }
        for (l, ws) in &winners {
            let rule = self.config.layers[*l].rule;
            let state = propagation.state(*l);
            for &w in ws {
                let post = state.spike_times()[state.index(w.map, w.y, w.x)];
                apply(
                    &mut self.weights[*l],
                    &self.s_layers[*l],
                    w,
                    propagation.input(*l),
                    post,
                    &params[*l],
                    rule,
                    &signal,
                );
            }
        }
        Ok(StepReport {
            decision,
            outcome,
            winners,
        })
    }
}

/// Accuracy and confusion counts over an evaluation slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub total: usize,
    pub hits: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    /// Predicted label of each evaluated image, in slice order.
    pub predictions: Vec<u32>,
}

impl Metrics {
    pub fn from_predictions(truth: &[u32], predictions: Vec<u32>, classes: usize) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::invalid("evaluation slice is empty"));
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        let mut hits = 0;
        for (&t, &p) in truth.iter().zip(&predictions) {
            if t == p {
                hits += 1;
            }
            if (t as usize) < classes && (p as usize) < classes {
                confusion[t as usize][p as usize] += 1;
            }
        }
        Ok(Self {
            total: truth.len(),
            hits,
            confusion,
            predictions,
        })
    }

    pub fn accuracy(&self) -> f64 {
        self.hits as f64 / self.total as f64
    }

    pub fn class_hits(&self) -> Vec<u64> {
        (0..self.confusion.len()).map(|c| self.confusion[c][c]).collect()
    }
}

fn map_indices<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

pub(crate) fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    map_indices(n, f)
}

impl Network {
    /// Classifies `images[i]` for every `i` in `slice`.
    pub fn evaluate(&self, images: &[LabeledImage], slice: &[usize]) -> Result<Metrics> {
        if slice.is_empty() {
            return Err(Error::invalid("evaluation slice is empty"));
        }
        let preds: Result<Vec<u32>> =
            map_indices(slice.len(), |k| Ok(self.forward(&images[slice[k]])?.decision.label))
                .into_iter()
                .collect();
        let truth: Vec<u32> = slice.iter().map(|&i| images[i].label).collect();
        Metrics::from_predictions(&truth, preds?, self.num_classes(&truth))
    }

    /// Evaluates pre-computed waves feeding layer `start`.
    pub fn evaluate_waves(&self, waves: &[SpikeWave], truth: &[u32], start: usize) -> Result<Metrics> {
        if waves.is_empty() {
            return Err(Error::invalid("evaluation slice is empty"));
        }
        let preds: Result<Vec<u32>> = map_indices(waves.len(), |k| {
            Ok(self.forward_from(&waves[k], start)?.decision.label)
        })
        .into_iter()
        .collect();
        Metrics::from_predictions(truth, preds?, self.num_classes(truth))
    }

    fn num_classes(&self, truth: &[u32]) -> usize {
        let max_label = self.config.labels.iter().chain(truth).copied().max().unwrap_or(0);
        max_label as usize + 1
    }
}
