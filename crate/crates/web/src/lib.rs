//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each exported function wraps a plain Rust function of the same name with
//! an `_impl` suffix so the logic is testable natively.

use wasm_bindgen::prelude::*;

use dcsnn::data::Orientation;
use dcsnn::encoding::encode_image;
use dcsnn::harness::bars;
use dcsnn::harness::config::{task1_network, BarsConfig};
use dcsnn::plasticity::{delta, update_weight, PlasticityParams, ReinforcementSignal, Rule, SignalKind, Stabilizer};
use dcsnn::{Error, Result};

/// Side of the square drawing canvas, in pixels.
pub const DIGIT_SIDE: usize = 28;

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Spike bins of a 28x28 grayscale drawing under the six-channel DoG
/// encoder, laid out `[channel][row][col]`; `u32::MAX` marks no spike.
pub fn encode_digit_impl(pixels: &[u8]) -> Result<Vec<u32>> {
    if pixels.len() != DIGIT_SIDE * DIGIT_SIDE {
        return Err(Error::InvalidInput(format!(
            "expected {} pixels, got {}",
            DIGIT_SIDE * DIGIT_SIDE,
            pixels.len()
        )));
    }
    let image: Vec<f64> = pixels.iter().map(|&p| p as f64).collect();
    let cfg = task1_network().encoder;
    Ok(encode_image(&image, DIGIT_SIDE, DIGIT_SIDE, &cfg)?.times().to_vec())
}

#[wasm_bindgen]
pub fn encode_digit(pixels: &[u8]) -> std::result::Result<Vec<u32>, JsError> {
    encode_digit_impl(pixels).map_err(js)
}

/// Number of time bins used by [`encode_digit`].
#[wasm_bindgen]
pub fn encoder_bins() -> u32 {
    task1_network().encoder.bins
}

/// Result of one bars-task training run.
#[wasm_bindgen]
pub struct BarsReport {
    success: bool,
    iterations: u32,
    learned: Vec<String>,
    kernels: Vec<f64>,
}

#[wasm_bindgen]
impl BarsReport {
    /// Every target image classified correctly after training.
    #[wasm_bindgen(getter)]
    pub fn success(&self) -> bool {
        self.success
    }

    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> u32 {
        self.iterations
    }

    /// Orientation each S1 map ended up preferring.
    pub fn learned(&self) -> Vec<String> {
        self.learned.clone()
    }

    /// S1 kernels as `[map][row][col]`, 3x3 each.
    pub fn kernels(&self) -> Vec<f64> {
        self.kernels.clone()
    }
}

fn orientation_name(o: Orientation) -> &'static str {
    match o {
        Orientation::Horizontal => "horizontal",
        Orientation::Vertical => "vertical",
        Orientation::Diagonal45 => "diagonal /",
        Orientation::Diagonal135 => "diagonal \\",
    }
}

fn parse_rule(rule: &str) -> Result<Rule> {
    match rule {
        "stdp" => Ok(Rule::Stdp),
        "r-stdp" => Ok(Rule::RStdp),
        other => Err(Error::InvalidInput(format!("unknown rule {other:?}"))),
    }
}

pub fn train_bars_impl(rule: &str, seed: u32) -> Result<BarsReport> {
    let (net, outcome) = bars::train_bars(&BarsConfig::default(), parse_rule(rule)?, seed as u64)?;
    Ok(BarsReport {
        success: outcome.success,
        iterations: outcome.iterations as u32,
        learned: outcome.learned.iter().map(|&o| orientation_name(o).to_string()).collect(),
        kernels: net.weights[0].to_row_major(),
    })
}

/// Trains the bars network with S1 under `rule` ("stdp" or "r-stdp").
#[wasm_bindgen]
pub fn train_bars(rule: &str, seed: u32) -> std::result::Result<BarsReport, JsError> {
    train_bars_impl(rule, seed).map_err(js)
}

/// Inputs of the single-synapse learning-rule explorer.
#[derive(Clone, Copy, Debug)]
pub struct SynapseStep {
    /// "stdp", "reward", "punishment" or "neutral".
    pub signal: SignalKind,
    pub stdp: bool,
    pub causal: bool,
    pub phi_r: f64,
    pub phi_p: f64,
    pub clamp: bool,
}

/// Weight trajectory of one synapse over `steps` identical updates.
pub fn weight_trajectory_impl(w0: f64, rates: [f64; 4], step: SynapseStep, steps: usize) -> Result<Vec<f64>> {
    let params = PlasticityParams {
        a_r_plus: rates[0],
        a_r_minus: rates[1],
        a_p_plus: rates[2],
        a_p_minus: rates[3],
        k: 1,
        r: 0,
        stabilizer: if step.clamp {
            Stabilizer::Clamp { lo: 0.2, hi: 0.8 }
        } else {
            Stabilizer::Multiplicative
        },
    };
    params.validate()?;
    let rule = if step.stdp { Rule::Stdp } else { Rule::RStdp };
    let signal = ReinforcementSignal {
        kind: step.signal,
        phi_r: step.phi_r,
        phi_p: step.phi_p,
    };
    let d = delta(&params, rule, &signal, step.causal);
    let mut w = w0;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(w);
    for _ in 0..steps {
        w = update_weight(w, d, params.stabilizer);
        out.push(w);
    }
    Ok(out)
}

/// Trajectory of one synapse under repeated updates. `signal` is one of
/// "stdp", "reward", "punishment" or "neutral"; `rates` holds
/// `[a_r_plus, a_r_minus, a_p_plus, a_p_minus]`.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn weight_trajectory(
    w0: f64,
    rates: &[f64],
    signal: &str,
    causal: bool,
    phi_r: f64,
    phi_p: f64,
    clamp: bool,
    steps: u32,
) -> std::result::Result<Vec<f64>, JsError> {
    let rates: [f64; 4] = rates
        .try_into()
        .map_err(|_| JsError::new("rates must hold four values"))?;
    let (kind, stdp) = match signal {
        "stdp" => (SignalKind::Reward, true),
        "reward" => (SignalKind::Reward, false),
        "punishment" => (SignalKind::Punishment, false),
        "neutral" => (SignalKind::Neutral, false),
        other => return Err(JsError::new(&format!("unknown signal {other:?}"))),
    };
    let step = SynapseStep {
        signal: kind,
        stdp,
        causal,
        phi_r,
        phi_p,
        clamp,
    };
    weight_trajectory_impl(w0, rates, step, steps as usize).map_err(js)
}
