//! Image to spike-wave conversion.
//!
//! Grayscale images are either filtered by a bank of on/off-center
//! difference-of-Gaussian kernels or used raw. Values at or above the
//! contrast threshold become spikes; stronger values spike earlier, and the
//! ordered spikes are spread over a fixed number of equally populated bins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spike::SpikeWave;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    OnCenter,
    OffCenter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DogFilter {
    pub window: usize,
    pub sigma1: f64,
    pub sigma2: f64,
    pub polarity: Polarity,
}

/// How a DoG kernel is scaled after the two Gaussians are subtracted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DogNormalization {
    /// Each Gaussian sums to one; the difference is then made zero-mean.
    #[default]
    L1,
    /// As `L1`, then rescaled so the center coefficient is one.
    Peak,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoGBank {
    pub filters: Vec<DogFilter>,
    #[serde(default)]
    pub normalization: DogNormalization,
}

impl DoGBank {
    /// On- and off-center filters at windows 3, 7 and 13 with
    /// `sigma1 = window / 9` and `sigma2 = 2 * sigma1`.
    pub fn three_scale(normalization: DogNormalization) -> Self {
        let mut filters = Vec::with_capacity(6);
        for window in [3usize, 7, 13] {
            let sigma1 = window as f64 / 9.0;
            for polarity in [Polarity::OnCenter, Polarity::OffCenter] {
                filters.push(DogFilter {
                    window,
                    sigma1,
                    sigma2: 2.0 * sigma1,
                    polarity,
                });
            }
        }
        Self {
            filters,
            normalization,
        }
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn max_window(&self) -> usize {
        self.filters.iter().map(|f| f.window).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        for f in &self.filters {
            if f.window % 2 == 0 || f.window == 0 {
                return Err(Error::config(format!("DoG window {} must be odd", f.window)));
            }
            if !(f.sigma1 > 0.0 && f.sigma2 > f.sigma1) {
                return Err(Error::config(format!(
                    "DoG sigmas ({}, {}) must satisfy 0 < sigma1 < sigma2",
                    f.sigma1, f.sigma2
                )));
            }
        }
        Ok(())
    }

    /// On-center kernel of `filter`, row-major `window x window`.
    pub fn kernel(&self, filter: &DogFilter) -> Vec<f64> {
        dog_kernel(filter.window, filter.sigma1, filter.sigma2, self.normalization)
    }
}

fn gaussian(window: usize, sigma: f64) -> Vec<f64> {
    let h = (window / 2) as f64;
    let mut g: Vec<f64> = (0..window * window)
        .map(|i| {
            let y = (i / window) as f64 - h;
            let x = (i % window) as f64 - h;
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= sum);
    g
}

/// Zero-mean on-center difference-of-Gaussians kernel.
pub fn dog_kernel(window: usize, sigma1: f64, sigma2: f64, norm: DogNormalization) -> Vec<f64> {
    let g1 = gaussian(window, sigma1);
    let g2 = gaussian(window, sigma2);
    let mut k: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a - b).collect();
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|v| *v -= mean);
    if norm == DogNormalization::Peak {
        let peak = k.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if peak > 0.0 {
            k.iter_mut().for_each(|v| *v /= peak);
        }
    }
    k
}

/// A `channels x height x width` grid of real-valued filter responses.
#[derive(Clone, Debug, PartialEq)]
pub struct Responses {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Responses {
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }
}

/// Zero-padded same-size 2-D correlation of a row-major image.
pub fn convolve_same(image: &[f64], height: usize, width: usize, kernel: &[f64], window: usize) -> Vec<f64> {
    let h = (window / 2) as isize;
    let mut out = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for ky in 0..window {
                let iy = y as isize + ky as isize - h;
                if iy < 0 || iy >= height as isize {
                    continue;
                }
                let row = iy as usize * width;
                for kx in 0..window {
                    let ix = x as isize + kx as isize - h;
                    if ix < 0 || ix >= width as isize {
                        continue;
                    }
                    acc += kernel[ky * window + kx] * image[row + ix as usize];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Applies every filter of `bank` to `image` (row-major, values in 0..=255).
/// Off-center channels are the negated on-center response.
pub fn dog_filter(image: &[f64], height: usize, width: usize, bank: &DoGBank) -> Result<Responses> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("image must be at least 1x1"));
    }
    if image.len() != height * width {
        return Err(Error::invalid(format!(
            "image buffer has {} pixels, expected {height}x{width}",
            image.len()
        )));
    }
    let plane = height * width;
    let mut values = Vec::with_capacity(bank.len() * plane);
    let mut cache: Vec<(usize, f64, f64, Vec<f64>)> = Vec::new();
    for f in &bank.filters {
        let found = cache
            .iter()
            .position(|(w, s1, s2, _)| *w == f.window && *s1 == f.sigma1 && *s2 == f.sigma2);
        let idx = match found {
            Some(i) => i,
            None => {
                let k = bank.kernel(f);
                let r = convolve_same(image, height, width, &k, f.window);
                cache.push((f.window, f.sigma1, f.sigma2, r));
                cache.len() - 1
            }
        };
        let on = &cache[idx].3;
        match f.polarity {
            Polarity::OnCenter => values.extend_from_slice(on),
            Polarity::OffCenter => values.extend(on.iter().map(|v| -v)),
        }
    }
    Ok(Responses {
        channels: bank.len(),
        height,
        width,
        values,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Six-channel DoG responses.
    #[default]
    Dog,
    /// Raw intensities as a single channel.
    Raw,
    /// Every nonzero pixel spikes in bin 0; no threshold, no sorting.
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    #[serde(default)]
    pub kind: EncoderKind,
    #[serde(default = "default_bins")]
    pub bins: u32,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Used when `kind = "dog"`; defaults to the three-scale bank.
    #[serde(default)]
    pub dog: Option<DoGBank>,
}

fn default_bins() -> u32 {
    15
}

fn default_threshold() -> f64 {
    50.0
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Dog,
            bins: default_bins(),
            threshold: default_threshold(),
            dog: None,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::config("encoder needs at least one bin"));
        }
        if let Some(bank) = &self.dog {
            bank.validate()?;
        }
        Ok(())
    }

    pub fn bank(&self) -> DoGBank {
        self.dog
            .clone()
            .unwrap_or_else(|| DoGBank::three_scale(DogNormalization::default()))
    }

    /// Number of channels the encoder emits.
    pub fn channels(&self) -> usize {
        match self.kind {
            EncoderKind::Dog => self.bank().len(),
            EncoderKind::Raw | EncoderKind::Direct => 1,
        }
    }
}

/// Converts response magnitudes into a spike wave.
///
/// Values below `cfg.threshold` are dropped. The `n` survivors are sorted by
/// descending value (ties by channel, row, column) and the `i`-th gets bin
/// `floor(i * bins / n)`.
pub fn encode(responses: &Responses, cfg: &EncoderConfig) -> SpikeWave {
    let Responses {
        channels,
        height,
        width,
        ref values,
    } = *responses;
    let mut wave = SpikeWave::empty(channels, height, width, cfg.bins);
    let mut survivors: Vec<(f64, usize)> = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= cfg.threshold)
        .map(|(i, &v)| (v, i))
        .collect();
    // Flat index order is exactly (channel, row, column).
    survivors.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let n = survivors.len() as u64;
    let bins = cfg.bins as u64;
    for (rank, &(_, idx)) in survivors.iter().enumerate() {
        let bin = (rank as u64 * bins / n) as u32;
        wave.set_raw(idx, bin);
    }
    wave
}

/// Raw-intensity encoding: one channel, same threshold and binning as [`encode`].
pub fn encode_raw(image: &[f64], height: usize, width: usize, cfg: &EncoderConfig) -> SpikeWave {
    let r = Responses {
        channels: 1,
        height,
        width,
        values: image.to_vec(),
    };
    encode(&r, cfg)
}

/// Every strictly positive pixel spikes in bin 0.
pub fn encode_direct(image: &[f64], height: usize, width: usize, bins: u32) -> SpikeWave {
    let mut wave = SpikeWave::empty(1, height, width, bins);
    for (i, &v) in image.iter().enumerate() {
        if v > 0.0 {
            wave.set_raw(i, 0);
        }
    }
    wave
}

/// Encodes an image according to `cfg.kind`.
pub fn encode_image(image: &[f64], height: usize, width: usize, cfg: &EncoderConfig) -> Result<SpikeWave> {
    match cfg.kind {
        EncoderKind::Dog => Ok(encode(&dog_filter(image, height, width, &cfg.bank())?, cfg)),
        EncoderKind::Raw => {
            if image.len() != height * width {
                return Err(Error::invalid("image buffer does not match its dimensions"));
            }
            Ok(encode_raw(image, height, width, cfg))
        }
        EncoderKind::Direct => Ok(encode_direct(image, height, width, cfg.bins)),
    }
}
