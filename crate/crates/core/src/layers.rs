//! Forward dynamics of convolutional integrate-and-fire layers (S-layers)
//! and pooling layers (C-layers), advanced one time bin at a time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spike::{KernelShape, LayerState, SpikeWave, WeightTensor, NO_SPIKE};

fn default_stride() -> usize {
    1
}

/// Geometry and threshold of an S-layer. An infinite `threshold` means
/// the layer only integrates and never fires on its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SLayerConfig {
    pub maps: usize,
    /// `(width, height)` of the input window.
    pub window: (usize, usize),
    /// Input depth; must equal the map count feeding this layer.
    pub depth: usize,
    pub threshold: f64,
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Zero padding added on every side of the input.
    #[serde(default)]
    pub padding: usize,
}

impl SLayerConfig {
    pub fn is_integrator(&self) -> bool {
        self.threshold.is_infinite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolMode {
    /// Earliest spike time in the window.
    Spike,
    /// Largest potential in the window.
    Potential,
}

/// Pooling window. `stride = 0` pools over the whole map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CLayerConfig {
    /// `(width, height)` of the pooling window.
    pub window: (usize, usize),
    pub stride: usize,
    pub mode: PoolMode,
}

impl CLayerConfig {
    pub fn is_global(&self) -> bool {
        self.stride == 0
    }
}

/// An S-layer bound to a concrete input size.
#[derive(Clone, Debug)]
pub struct SLayer {
    pub cfg: SLayerConfig,
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl SLayer {
    pub fn new(cfg: SLayerConfig, in_channels: usize, in_height: usize, in_width: usize) -> Result<Self> {
        let (win_w, win_h) = cfg.window;
        if cfg.maps == 0 || win_w == 0 || win_h == 0 {
            return Err(Error::config("S-layer needs at least one map and a nonempty window"));
        }
        if cfg.stride == 0 {
            return Err(Error::config("S-layer stride must be at least 1"));
        }
        if cfg.depth != in_channels {
            return Err(Error::config(format!(
                "S-layer depth {} does not match {} incoming maps",
                cfg.depth, in_channels
            )));
        }
        if cfg.threshold.is_nan() {
            return Err(Error::config("S-layer threshold is NaN"));
        }
        let padded_h = in_height + 2 * cfg.padding;
        let padded_w = in_width + 2 * cfg.padding;
        if padded_h < win_h || padded_w < win_w {
            return Err(Error::config(format!(
                "S-layer window {win_w}x{win_h} exceeds padded input {padded_w}x{padded_h}"
            )));
        }
        Ok(Self {
            out_height: (padded_h - win_h) / cfg.stride + 1,
            out_width: (padded_w - win_w) / cfg.stride + 1,
            cfg,
            in_channels,
            in_height,
            in_width,
        })
    }

    pub fn kernel_shape(&self) -> KernelShape {
        KernelShape::new(self.cfg.maps, self.cfg.depth, self.cfg.window.1, self.cfg.window.0)
    }

    pub fn new_state(&self) -> LayerState {
        LayerState::new(self.cfg.maps, self.out_height, self.out_width)
    }

    /// Input coordinate of kernel tap `(dy, dx)` for output `(oy, ox)`;
    /// `None` when it falls in the zero padding.
    #[inline]
    pub fn input_at(&self, oy: usize, ox: usize, dy: usize, dx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.cfg.stride + dy) as isize - self.cfg.padding as isize;
        let ix = (ox * self.cfg.stride + dx) as isize - self.cfg.padding as isize;
        if iy < 0 || ix < 0 || iy >= self.in_height as isize || ix >= self.in_width as isize {
            None
        } else {
            Some((iy as usize, ix as usize))
        }
    }

    fn check_weights(&self, weights: &WeightTensor) -> Result<()> {
        if weights.shape() != self.kernel_shape() {
            return Err(Error::config(format!(
                "weight shape {:?} does not fit S-layer kernel {:?}",
                weights.shape(),
                self.kernel_shape()
            )));
        }
        Ok(())
    }

    /// Integrates the input spikes of bin `t` (flat `[c][y][x]` indices into
    /// this layer's input) and fires every unfired neuron whose potential
    /// reached the threshold. Indices of the new spikes are appended to
    /// `emitted`, in ascending state-index order per position.
    pub fn step(
        &self,
        weights: &WeightTensor,
        spikes: &[u32],
        state: &mut LayerState,
        t: u32,
        emitted: &mut Vec<u32>,
    ) -> Result<()> {
        self.check_weights(weights)?;
        if spikes.is_empty() {
            return Ok(());
        }
        let maps = self.cfg.maps;
        let (win_w, win_h) = self.cfg.window;
        let stride = self.cfg.stride;
        let pad = self.cfg.padding;
        let plane = self.in_height * self.in_width;
        let mut touched: Vec<usize> = Vec::new();
        let mut mark = vec![false; self.out_height * self.out_width];
        let integrator = self.cfg.is_integrator();

        for &s in spikes {
            let s = s as usize;
            let c = s / plane;
            let y = (s % plane) / self.in_width;
            let x = s % self.in_width;
            for dy in 0..win_h {
                let num = y + pad;
                if num < dy || !(num - dy).is_multiple_of(stride) {
                    continue;
                }
                let oy = (num - dy) / stride;
                if oy >= self.out_height {
                    continue;
                }
                for dx in 0..win_w {
                    let num = x + pad;
                    if num < dx || !(num - dx).is_multiple_of(stride) {
                        continue;
                    }
                    let ox = (num - dx) / stride;
                    if ox >= self.out_width {
                        continue;
                    }
                    let pos = oy * self.out_width + ox;
                    if !mark[pos] {
                        mark[pos] = true;
                        touched.push(pos);
                    }
                    let col = weights.column(c, dy, dx);
                    let base = pos * maps;
                    if integrator {
                        state.integrate(base, col);
                    } else {
                        state.integrate_gated(base, col);
                    }
                }
            }
        }

        if integrator {
            return Ok(());
        }
        let threshold = self.cfg.threshold;
        touched.sort_unstable();
        for pos in touched {
            let base = pos * maps;
            for i in base..base + maps {
                if state.gate[i] != 0.0 && state.potentials()[i] >= threshold {
                    state.fire(i, t);
                    emitted.push(i as u32);
                }
            }
        }
        Ok(())
    }

    /// After the last bin, integrator layers stamp every neuron with the
    /// spike time `bins`, one past the last real bin. Other layers are left
    /// untouched.
    pub fn finalize(&self, state: &mut LayerState, bins: u32) {
        if self.cfg.is_integrator() {
            state.stamp_all(bins);
        }
    }
}

/// Functional form of [`SLayer::step`].
pub fn s_step(
    layer: &SLayer,
    weights: &WeightTensor,
    spikes: &[u32],
    state: &mut LayerState,
    t: u32,
) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    layer.step(weights, spikes, state, t, &mut out)?;
    Ok(out)
}

/// Functional form of [`SLayer::finalize`].
pub fn s_finalize(layer: &SLayer, state: &mut LayerState, bins: u32) {
    layer.finalize(state, bins)
}

/// Per-map grid of pooled potentials, `[map][row][col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialGrid {
    pub maps: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl PotentialGrid {
    pub fn get(&self, m: usize, y: usize, x: usize) -> f64 {
        self.values[(m * self.height + y) * self.width + x]
    }
}

/// A C-layer bound to the size of the S-layer it pools.
#[derive(Clone, Debug)]
pub struct CLayer {
    pub cfg: CLayerConfig,
    pub maps: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub out_height: usize,
    pub out_width: usize,
    win_h: usize,
    win_w: usize,
    stride_h: usize,
    stride_w: usize,
}

impl CLayer {
    /// Partial windows at the bottom/right edge are kept (ceil mode).
    pub fn new(cfg: CLayerConfig, maps: usize, in_height: usize, in_width: usize) -> Result<Self> {
        let (mut win_w, mut win_h) = cfg.window;
        let (stride_w, stride_h, out_w, out_h);
        if cfg.is_global() {
            win_w = in_width;
            win_h = in_height;
            stride_w = in_width.max(1);
            stride_h = in_height.max(1);
            out_w = 1;
            out_h = 1;
        } else {
            if win_w == 0 || win_h == 0 {
                return Err(Error::config("pooling window must be nonempty"));
            }
            if win_w > in_width || win_h > in_height {
                return Err(Error::config(format!(
                    "pooling window {win_w}x{win_h} larger than map {in_width}x{in_height}"
                )));
            }
            stride_w = cfg.stride;
            stride_h = cfg.stride;
            // Ceil mode, but no window may start past the edge.
            let len = |n: usize, win: usize, st: usize| ((n - win).div_ceil(st) + 1).min((n - 1) / st + 1);
            out_w = len(in_width, win_w, stride_w);
            out_h = len(in_height, win_h, stride_h);
        }
        Ok(Self {
            cfg,
            maps,
            in_height,
            in_width,
            out_height: out_h,
            out_width: out_w,
            win_h,
            win_w,
            stride_h,
            stride_w,
        })
    }

    fn out_range(y: usize, win: usize, stride: usize, out: usize) -> std::ops::Range<usize> {
        let lo = if y + 1 > win { (y + 1 - win).div_ceil(stride) } else { 0 };
        let hi = (y / stride + 1).min(out);
        lo..hi.max(lo)
    }

    /// Output windows covering input row `y`.
    pub fn rows_covering(&self, y: usize) -> std::ops::Range<usize> {
        Self::out_range(y, self.win_h, self.stride_h, self.out_height)
    }

    /// Output windows covering input column `x`.
    pub fn cols_covering(&self, x: usize) -> std::ops::Range<usize> {
        Self::out_range(x, self.win_w, self.stride_w, self.out_width)
    }

    fn window(&self, oy: usize, ox: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let y0 = oy * self.stride_h;
        let x0 = ox * self.stride_w;
        (
            y0..(y0 + self.win_h).min(self.in_height),
            x0..(x0 + self.win_w).min(self.in_width),
        )
    }

    pub fn empty_output(&self, bins: u32) -> SpikeWave {
        SpikeWave::empty(self.maps, self.out_height, self.out_width, bins)
    }

    /// Routes S-layer spikes emitted at bin `t` into `out`; windows that
    /// receive their first spike are appended to `new_spikes`.
    pub fn propagate(
        &self,
        state: &LayerState,
        emitted: &[u32],
        t: u32,
        out: &mut SpikeWave,
        new_spikes: &mut Vec<u32>,
    ) {
        for &e in emitted {
            let (m, y, x) = state.coords(e as usize);
            for oy in self.rows_covering(y) {
                for ox in self.cols_covering(x) {
                    let idx = out.index(m, oy, ox);
                    if out.raw_time(idx) == NO_SPIKE {
                        out.set_raw(idx, t);
                        new_spikes.push(idx as u32);
                    }
                }
            }
        }
        new_spikes.sort_unstable();
    }

    /// Earliest spike per window of a completed S-layer state. Times are
    /// taken as-is, so `bins` must exceed every time in the state.
    pub fn pool_spikes(&self, state: &LayerState, bins: u32) -> SpikeWave {
        let mut out = self.empty_output(bins);
        for m in 0..self.maps {
            for oy in 0..self.out_height {
                for ox in 0..self.out_width {
                    let (ys, xs) = self.window(oy, ox);
                    let mut best = NO_SPIKE;
                    for y in ys {
                        for x in xs.clone() {
                            best = best.min(state.spike_times()[state.index(m, y, x)]);
                        }
                    }
                    if best != NO_SPIKE {
                        out.set(m, oy, ox, best);
                    }
                }
            }
        }
        out
    }

    /// Largest potential per window of a completed S-layer state.
    pub fn pool_potentials(&self, state: &LayerState) -> PotentialGrid {
        let mut values = Vec::with_capacity(self.maps * self.out_height * self.out_width);
        for m in 0..self.maps {
            for oy in 0..self.out_height {
                for ox in 0..self.out_width {
                    let (ys, xs) = self.window(oy, ox);
                    let mut best = f64::NEG_INFINITY;
                    for y in ys {
                        for x in xs.clone() {
                            best = best.max(state.potential(m, y, x));
                        }
                    }
                    values.push(best);
                }
            }
        }
        PotentialGrid {
            maps: self.maps,
            height: self.out_height,
            width: self.out_width,
            values,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s_cfg(maps: usize, win: usize, depth: usize, threshold: f64) -> SLayerConfig {
        SLayerConfig {
            maps,
            window: (win, win),
            depth,
            threshold,
            stride: 1,
            padding: 0,
        }
    }

    #[test]
    fn no_input_leaves_state_unchanged() {
        let layer = SLayer::new(s_cfg(2, 3, 1, 1.0), 1, 5, 5).unwrap();
        let w = WeightTensor::filled(layer.kernel_shape(), 0.5);
        let mut st = layer.new_state();
        let before = st.clone();
        let out = s_step(&layer, &w, &[], &mut st, 0).unwrap();
        assert!(out.is_empty());
        assert_eq!(st, before);
    }

    #[test]
    fn single_neuron_fires_on_unit_weight() {
        let layer = SLayer::new(s_cfg(1, 1, 1, 1.0), 1, 1, 1).unwrap();
        let w = WeightTensor::filled(layer.kernel_shape(), 1.0);
        let mut st = layer.new_state();
        let out = s_step(&layer, &w, &[0], &mut st, 3).unwrap();
        assert_eq!(out, vec![0]);
        assert_eq!(st.spike_time(0, 0, 0), Some(3));
        assert_eq!(st.potential(0, 0, 0), 1.0);
    }

    #[test]
    fn fired_neuron_stops_integrating() {
        let layer = SLayer::new(s_cfg(1, 1, 1, 1.0), 1, 1, 1).unwrap();
        let w = WeightTensor::filled(layer.kernel_shape(), 1.0);
        let mut st = layer.new_state();
        s_step(&layer, &w, &[0], &mut st, 0).unwrap();
        let out = s_step(&layer, &w, &[0], &mut st, 1).unwrap();
        assert!(out.is_empty());
        assert_eq!(st.potential(0, 0, 0), 1.0);
        assert_eq!(st.spike_time(0, 0, 0), Some(0));
    }

    #[test]
    fn threshold_comparison_is_inclusive() {
        let layer = SLayer::new(s_cfg(1, 2, 1, 1.0), 1, 2, 2).unwrap();
        let w = WeightTensor::filled(layer.kernel_shape(), 0.5);
        let mut st = layer.new_state();
        assert!(s_step(&layer, &w, &[0], &mut st, 0).unwrap().is_empty());
        assert_eq!(s_step(&layer, &w, &[3], &mut st, 1).unwrap(), vec![0]);
    }

    #[test]
    fn mismatched_weights_are_a_config_error() {
        let layer = SLayer::new(s_cfg(2, 3, 1, 1.0), 1, 5, 5).unwrap();
        let w = WeightTensor::filled(KernelShape::new(2, 1, 2, 2), 0.5);
        let mut st = layer.new_state();
        assert!(matches!(
            s_step(&layer, &w, &[0], &mut st, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn depth_must_match_input() {
        assert!(SLayer::new(s_cfg(2, 3, 2, 1.0), 1, 5, 5).is_err());
    }

    #[test]
    fn finalize_only_stamps_integrators() {
        let finite = SLayer::new(s_cfg(2, 1, 1, 1.0), 1, 2, 2).unwrap();
        let mut st = finite.new_state();
        st.set_spike(1, 0, 0, 4);
        let before = st.clone();
        s_finalize(&finite, &mut st, 15);
        assert_eq!(st, before);
        assert_eq!(st.spike_time(0, 0, 0), None);

        let inf = SLayer::new(s_cfg(2, 1, 1, f64::INFINITY), 1, 2, 2).unwrap();
        let mut st = inf.new_state();
        s_finalize(&inf, &mut st, 15);
        assert!(st.spike_times().iter().all(|&t| t == 15));
    }

    #[test]
    fn integrator_never_fires() {
        let layer = SLayer::new(s_cfg(1, 1, 1, f64::INFINITY), 1, 1, 1).unwrap();
        let w = WeightTensor::filled(layer.kernel_shape(), 1.0);
        let mut st = layer.new_state();
        for t in 0..5 {
            assert!(s_step(&layer, &w, &[0], &mut st, t).unwrap().is_empty());
        }
        assert_eq!(st.potential(0, 0, 0), 5.0);
    }

    #[test]
    fn padding_and_stride_geometry() {
        let mut cfg = s_cfg(1, 5, 1, 1.0);
        cfg.padding = 2;
        let l = SLayer::new(cfg.clone(), 1, 28, 28).unwrap();
        assert_eq!((l.out_height, l.out_width), (28, 28));
        assert_eq!(l.input_at(0, 0, 0, 0), None);
        assert_eq!(l.input_at(0, 0, 2, 2), Some((0, 0)));
        cfg.stride = 2;
        let l = SLayer::new(cfg, 1, 28, 28).unwrap();
        assert_eq!(l.out_height, 14);
    }

    #[test]
    fn pooling_geometry_uses_ceil_mode() {
        let c = CLayer::new(
            CLayerConfig { window: (3, 3), stride: 3, mode: PoolMode::Spike },
            1,
            14,
            14,
        )
        .unwrap();
        assert_eq!((c.out_height, c.out_width), (5, 5));
        assert_eq!(c.rows_covering(13), 4..5);
        assert_eq!(c.rows_covering(3), 1..2);
        let c = CLayer::new(
            CLayerConfig { window: (2, 2), stride: 2, mode: PoolMode::Spike },
            1,
            28,
            28,
        )
        .unwrap();
        assert_eq!(c.out_height, 14);
        let overlap = CLayer::new(
            CLayerConfig { window: (3, 3), stride: 1, mode: PoolMode::Spike },
            1,
            5,
            5,
        )
        .unwrap();
        assert_eq!(overlap.rows_covering(2), 0..3);
        assert_eq!(overlap.rows_covering(0), 0..1);
    }

    #[test]
    fn oversized_pool_window_is_rejected() {
        let r = CLayer::new(
            CLayerConfig { window: (6, 6), stride: 1, mode: PoolMode::Spike },
            1,
            5,
            5,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn silent_map_pools_to_silence() {
        let c = CLayer::new(
            CLayerConfig { window: (2, 2), stride: 2, mode: PoolMode::Spike },
            2,
            4,
            4,
        )
        .unwrap();
        let st = LayerState::new(2, 4, 4);
        assert_eq!(c.pool_spikes(&st, 15).spike_count(), 0);
    }

    #[test]
    fn single_spike_pools_to_its_time() {
        let c = CLayer::new(
            CLayerConfig { window: (2, 2), stride: 2, mode: PoolMode::Spike },
            1,
            4,
            4,
        )
        .unwrap();
        let mut st = LayerState::new(1, 4, 4);
        st.set_spike(0, 3, 2, 2);
        let p = c.pool_spikes(&st, 15);
        assert_eq!(p.time(0, 1, 1), Some(2));
        assert_eq!(p.spike_count(), 1);
    }

    #[test]
    fn global_pooling_has_one_output_per_map() {
        let c = CLayer::new(
            CLayerConfig { window: (5, 5), stride: 0, mode: PoolMode::Potential },
            3,
            5,
            5,
        )
        .unwrap();
        let mut st = LayerState::new(3, 5, 5);
        st.set_potential(1, 4, 0, 9.0);
        st.set_potential(2, 2, 2, -1.0);
        let g = c.pool_potentials(&st);
        assert_eq!((g.height, g.width), (1, 1));
        assert_eq!(g.values, vec![0.0, 9.0, 0.0]);
    }
}
