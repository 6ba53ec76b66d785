//! Spike waves, shared weight kernels and per-image layer state.
//!
//! Spike times are stored as time-bin indices. A missing spike is encoded as
//! [`NO_SPIKE`], which compares greater than every valid bin so that
//! "earliest spike" reductions are plain `min` operations.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Bin index standing in for "never fired".
pub const NO_SPIKE: u32 = u32::MAX;

/// Per-image grid of spike times, laid out `[channel][row][col]`.
///
/// Each location holds at most one spike, which is the fire-once regime the
/// whole network runs in.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpikeWave {
    channels: usize,
    height: usize,
    width: usize,
    bins: u32,
    times: Vec<u32>,
}

impl SpikeWave {
    pub fn empty(channels: usize, height: usize, width: usize, bins: u32) -> Self {
        Self {
            channels,
            height,
            width,
            bins,
            times: vec![NO_SPIKE; channels * height * width],
        }
    }

    /// Builds a wave from a dense `[channel][row][col]` grid, rejecting any
    /// present time outside `[0, bins)`.
    pub fn from_times(
        channels: usize,
        height: usize,
        width: usize,
        bins: u32,
        times: Vec<u32>,
    ) -> Result<Self> {
        if times.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "spike grid has {} entries, expected {}x{}x{}",
                times.len(),
                channels,
                height,
                width
            )));
        }
        if let Some(&bad) = times.iter().find(|&&t| t != NO_SPIKE && t >= bins) {
            return Err(Error::invalid(format!(
                "spike time {bad} outside [0, {bins})"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            bins,
            times,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bins(&self) -> u32 {
        self.bins
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    /// Inverse of [`SpikeWave::index`].
    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let plane = self.height * self.width;
        (index / plane, (index % plane) / self.width, index % self.width)
    }

    pub fn time(&self, c: usize, y: usize, x: usize) -> Option<u32> {
        let t = self.times[self.index(c, y, x)];
        (t != NO_SPIKE).then_some(t)
    }

    /// Raw time at a flat index; [`NO_SPIKE`] when silent.
    #[inline]
    pub fn raw_time(&self, index: usize) -> u32 {
        self.times[index]
    }

    pub fn times(&self) -> &[u32] {
        &self.times
    }

    /// Records a spike. Panics if `t` is not a valid bin.
    pub fn set(&mut self, c: usize, y: usize, x: usize, t: u32) {
        let i = self.index(c, y, x);
        self.set_raw(i, t);
    }

    #[inline]
    pub fn set_raw(&mut self, index: usize, t: u32) {
        assert!(t < self.bins, "spike time {t} outside [0, {})", self.bins);
        self.times[index] = t;
    }

    pub fn spike_count(&self) -> usize {
        self.times.iter().filter(|&&t| t != NO_SPIKE).count()
    }

    /// Flat indices of present spikes grouped by bin, each group in
    /// ascending index order.
    pub fn events(&self) -> SpikeEvents {
        let bins = self.bins as usize;
        let mut counts = vec![0usize; bins + 1];
        for &t in &self.times {
            if t != NO_SPIKE {
                counts[t as usize + 1] += 1;
            }
        }
        for b in 0..bins {
            counts[b + 1] += counts[b];
        }
        let mut cursor = counts.clone();
        let mut indices = vec![0u32; counts[bins]];
        for (i, &t) in self.times.iter().enumerate() {
            if t != NO_SPIKE {
                let slot = &mut cursor[t as usize];
                indices[*slot] = i as u32;
                *slot += 1;
            }
        }
        SpikeEvents {
            offsets: counts,
            indices,
        }
    }

    /// Writes the debug dump: `width, height, channels, bins` as u32 LE
    /// followed by the `[channel][row][col]` times as u32 LE, with
    /// `0xFFFFFFFF` for silent locations.
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(16 + 4 * self.times.len());
        for v in [
            self.width as u32,
            self.height as u32,
            self.channels as u32,
            self.bins,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &t in &self.times {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        out.write_all(&buf)
    }

    pub fn read_dump<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() < 16 {
            return Err(Error::invalid("spike dump shorter than its header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        let (width, height, channels, bins) = (
            word(0) as usize,
            word(1) as usize,
            word(2) as usize,
            word(3),
        );
        let n = width * height * channels;
        if bytes.len() != 16 + 4 * n {
            return Err(Error::invalid(format!(
                "spike dump body has {} bytes, expected {}",
                bytes.len() - 16,
                4 * n
            )));
        }
        let times = (0..n).map(|i| word(4 + i)).collect();
        Self::from_times(channels, height, width, bins, times)
    }
}

/// Spikes of a wave bucketed by bin (compressed-row layout).
#[derive(Clone, Debug, Default)]
pub struct SpikeEvents {
    offsets: Vec<usize>,
    indices: Vec<u32>,
}

impl SpikeEvents {
    pub fn bins(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn at(&self, bin: usize) -> &[u32] {
        if bin + 1 >= self.offsets.len() {
            return &[];
        }
        &self.indices[self.offsets[bin]..self.offsets[bin + 1]]
    }

    pub fn total(&self) -> usize {
        self.indices.len()
    }
}

/// Shape of a convolution kernel bank: `(out_maps, in_depth, win_h, win_w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelShape {
    pub out_maps: usize,
    pub in_depth: usize,
    pub win_h: usize,
    pub win_w: usize,
}

impl KernelShape {
    pub fn new(out_maps: usize, in_depth: usize, win_h: usize, win_w: usize) -> Self {
        Self {
            out_maps,
            in_depth,
            win_h,
            win_w,
        }
    }

    pub fn len(&self) -> usize {
        self.out_maps * self.kernel_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Synapses per output map.
    pub fn kernel_len(&self) -> usize {
        self.in_depth * self.win_h * self.win_w
    }
}

/// Synaptic weights of one S-layer, shared across all positions of a map.
///
/// Storage is input-major, `[in][dy][dx][out]`, so that one incoming spike
/// touches a contiguous run of `out_maps` weights. Use [`Self::get`] or
/// [`Self::to_row_major`] for the conventional `[out][in][dy][dx]` view.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTensor {
    shape: KernelShape,
    values: Vec<f64>,
}

impl WeightTensor {
    pub fn filled(shape: KernelShape, value: f64) -> Self {
        Self {
            shape,
            values: vec![value; shape.len()],
        }
    }

    pub fn from_fn(shape: KernelShape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut w = Self::filled(shape, 0.0);
        for o in 0..shape.out_maps {
            for i in 0..shape.in_depth {
                for dy in 0..shape.win_h {
                    for dx in 0..shape.win_w {
                        w.set(o, i, dy, dx, f(o, i, dy, dx));
                    }
                }
            }
        }
        w
    }

    /// Builds a tensor from `[out][in][dy][dx]` order.
    pub fn from_row_major(shape: KernelShape, data: &[f64]) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::invalid(format!(
                "weight data has {} values, shape {:?} needs {}",
                data.len(),
                shape,
                shape.len()
            )));
        }
        let k = shape.kernel_len();
        Ok(Self::from_fn(shape, |o, i, dy, dx| {
            data[o * k + (i * shape.win_h + dy) * shape.win_w + dx]
        }))
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len());
        for o in 0..self.shape.out_maps {
            out.extend(self.kernel(o));
        }
        out
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    #[inline]
    fn offset(&self, o: usize, i: usize, dy: usize, dx: usize) -> usize {
        self.synapse(i, dy, dx) * self.shape.out_maps + o
    }

    /// Position of synapse `(i, dy, dx)` within a kernel, in `[in][dy][dx]` order.
    #[inline]
    pub fn synapse(&self, i: usize, dy: usize, dx: usize) -> usize {
        (i * self.shape.win_h + dy) * self.shape.win_w + dx
    }

    #[inline]
    pub fn get(&self, o: usize, i: usize, dy: usize, dx: usize) -> f64 {
        self.values[self.offset(o, i, dy, dx)]
    }

    #[inline]
    pub fn set(&mut self, o: usize, i: usize, dy: usize, dx: usize, v: f64) {
        let at = self.offset(o, i, dy, dx);
        self.values[at] = v;
    }

    /// Weights of synapse `(i, dy, dx)` for every output map.
    #[inline]
    pub fn column(&self, i: usize, dy: usize, dx: usize) -> &[f64] {
        let n = self.shape.out_maps;
        let start = self.synapse(i, dy, dx) * n;
        &self.values[start..start + n]
    }

    /// Kernel of map `o` in `[in][dy][dx]` order.
    pub fn kernel(&self, o: usize) -> impl Iterator<Item = f64> + '_ {
        self.values[o..]
            .iter()
            .step_by(self.shape.out_maps)
            .copied()
    }

    /// Applies `f(synapse, w) -> w'` to every weight of map `o`.
    pub fn update_kernel(&mut self, o: usize, mut f: impl FnMut(usize, f64) -> f64) {
        let n = self.shape.out_maps;
        for (s, w) in self.values[o..].iter_mut().step_by(n).enumerate() {
            *w = f(s, *w);
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Potentials and spike times of one S-layer for the image being processed.
///
/// Storage is position-major, `[row][col][map]`. A neuron has fired exactly
/// when its spike time is present; its potential is frozen from then on.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    maps: usize,
    height: usize,
    width: usize,
    potentials: Vec<f64>,
    spike_times: Vec<u32>,
    // 1.0 while the neuron may still integrate, 0.0 once it has fired.
    pub(crate) gate: Vec<f64>,
}

impl LayerState {
    pub fn new(maps: usize, height: usize, width: usize) -> Self {
        let n = maps * height * width;
        Self {
            maps,
            height,
            width,
            potentials: vec![0.0; n],
            spike_times: vec![NO_SPIKE; n],
            gate: vec![1.0; n],
        }
    }

    /// Zeroes all potentials and clears all spikes.
    pub fn reset(&mut self) {
        self.potentials.fill(0.0);
        self.spike_times.fill(NO_SPIKE);
        self.gate.fill(1.0);
    }

    pub fn maps(&self) -> usize {
        self.maps
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.potentials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.potentials.is_empty()
    }

    #[inline]
    pub fn index(&self, m: usize, y: usize, x: usize) -> usize {
        (y * self.width + x) * self.maps + m
    }

    /// `(map, row, col)` of a flat index.
    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let pos = index / self.maps;
        (index % self.maps, pos / self.width, pos % self.width)
    }

    pub fn potential(&self, m: usize, y: usize, x: usize) -> f64 {
        self.potentials[self.index(m, y, x)]
    }

    pub fn spike_time(&self, m: usize, y: usize, x: usize) -> Option<u32> {
        let t = self.spike_times[self.index(m, y, x)];
        (t != NO_SPIKE).then_some(t)
    }

    pub fn fired(&self, m: usize, y: usize, x: usize) -> bool {
        self.spike_times[self.index(m, y, x)] != NO_SPIKE
    }

    pub fn potentials(&self) -> &[f64] {
        &self.potentials
    }

    pub fn spike_times(&self) -> &[u32] {
        &self.spike_times
    }

    /// Adds `col` to the potentials of all maps at one position.
    #[inline]
    pub(crate) fn integrate(&mut self, base: usize, col: &[f64]) {
        let pot = &mut self.potentials[base..base + col.len()];
        for (p, w) in pot.iter_mut().zip(col) {
            *p += w;
        }
    }

    /// As [`Self::integrate`], skipping neurons that already fired.
    #[inline]
    pub(crate) fn integrate_gated(&mut self, base: usize, col: &[f64]) {
        let n = col.len();
        let pot = &mut self.potentials[base..base + n];
        let gate = &self.gate[base..base + n];
        for ((p, w), g) in pot.iter_mut().zip(col).zip(gate) {
            *p += w * g;
        }
    }

    /// Sets a potential directly; meant for tests and synthetic states.
    pub fn set_potential(&mut self, m: usize, y: usize, x: usize, v: f64) {
        let i = self.index(m, y, x);
        self.potentials[i] = v;
    }

    /// Marks a neuron as fired at `t`; meant for tests and synthetic states.
    pub fn set_spike(&mut self, m: usize, y: usize, x: usize, t: u32) {
        let i = self.index(m, y, x);
        self.fire(i, t);
    }

    #[inline]
    pub(crate) fn fire(&mut self, index: usize, t: u32) {
        self.spike_times[index] = t;
        self.gate[index] = 0.0;
    }

    pub(crate) fn stamp_all(&mut self, t: u32) {
        self.spike_times.fill(t);
        self.gate.fill(0.0);
    }

    pub fn fired_count(&self) -> usize {
        self.spike_times.iter().filter(|&&t| t != NO_SPIKE).count()
    }

    /// Spike times as a `[map][row][col]` wave. Panics if a time is not
    /// below `bins`.
    pub fn to_wave(&self, bins: u32) -> SpikeWave {
        let mut wave = SpikeWave::empty(self.maps, self.height, self.width, bins);
        for (i, &t) in self.spike_times.iter().enumerate() {
            if t != NO_SPIKE {
                let (m, y, x) = self.coords(i);
                wave.set(m, y, x, t);
            }
        }
        wave
    }
}
