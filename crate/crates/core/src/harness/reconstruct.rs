//! Feature reconstruction by linear backprojection.
//!
//! A map of layer `l` is rendered in input-pixel space: every kernel weight
//! mixes the rendering of its input map, shifted by the kernel offset times
//! the cumulative stride of that input. S1 kernels are the base case; with a
//! DoG encoder each input channel contributes its (signed) filter kernel.
//! Numerator and denominator are accumulated separately, so the result is a
//! weight-averaged value that stays in the range of the base case.

use std::io::Write;
use std::path::Path;

use crate::encoding::{EncoderKind, Polarity};
use crate::error::{Error, Result};
use crate::network::Network;

/// Rendered feature: one byte per pixel, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Weighted sum and weight coverage of one rendering.
#[derive(Clone, Debug)]
struct Plane {
    size: (usize, usize),
    num: Vec<f64>,
    den: Vec<f64>,
}

impl Plane {
    fn zeros(h: usize, w: usize) -> Self {
        Self {
            size: (h, w),
            num: vec![0.0; h * w],
            den: vec![0.0; h * w],
        }
    }
}

fn base_planes(net: &Network) -> Vec<Plane> {
    let w = &net.weights[0];
    let shape = w.shape();
    let enc = &net.config.encoder;
    let mut planes = Vec::with_capacity(shape.out_maps);
    match enc.kind {
        EncoderKind::Raw | EncoderKind::Direct => {
            for o in 0..shape.out_maps {
                let mut p = Plane::zeros(shape.win_h, shape.win_w);
                for i in 0..shape.in_depth {
                    for dy in 0..shape.win_h {
                        for dx in 0..shape.win_w {
                            let v = w.get(o, i, dy, dx);
                            p.num[dy * shape.win_w + dx] += v;
                            p.den[dy * shape.win_w + dx] += 1.0;
                        }
                    }
                }
                planes.push(p);
            }
        }
        EncoderKind::Dog => {
            let bank = enc.bank();
            let big = bank.max_window();
            let kernels: Vec<(usize, Vec<f64>)> = bank
                .filters
                .iter()
                .map(|f| {
                    let k = bank.kernel(f);
                    let k = match f.polarity {
                        Polarity::OnCenter => k,
                        Polarity::OffCenter => k.into_iter().map(|v| -v).collect(),
                    };
                    (f.window, k)
                })
                .collect();
            let (h, wd) = (shape.win_h + big - 1, shape.win_w + big - 1);
            for o in 0..shape.out_maps {
                let mut p = Plane::zeros(h, wd);
                for (i, (kw, k)) in kernels.iter().enumerate() {
                    let off = (big - kw) / 2;
                    for dy in 0..shape.win_h {
                        for dx in 0..shape.win_w {
                            let v = w.get(o, i, dy, dx);
                            for ky in 0..*kw {
                                for kx in 0..*kw {
                                    let at = (dy + off + ky) * wd + dx + off + kx;
                                    p.num[at] += v * k[ky * kw + kx];
                                    p.den[at] += (v * k[ky * kw + kx]).abs();
                                }
                            }
                        }
                    }
                }
                planes.push(p);
            }
        }
    }
    planes
}

/// Mixes `inputs` (renderings of the maps feeding layer `l`) with the
/// kernels of `maps`; `stride` is the input-pixel distance between
/// neighbouring input units.
fn mix(net: &Network, l: usize, maps: &[usize], inputs: &[Plane], stride: usize) -> Vec<Plane> {
    let w = &net.weights[l];
    let shape = w.shape();
    let (ih, iw) = inputs[0].size;
    let h = (shape.win_h - 1) * stride + ih;
    let wd = (shape.win_w - 1) * stride + iw;
    maps.iter()
        .map(|&o| {
            let mut p = Plane::zeros(h, wd);
            for (i, src) in inputs.iter().enumerate() {
                for dy in 0..shape.win_h {
                    for dx in 0..shape.win_w {
                        let v = w.get(o, i, dy, dx);
                        if v == 0.0 {
                            continue;
                        }
                        for y in 0..ih {
                            let row = (dy * stride + y) * wd + dx * stride;
                            for x in 0..iw {
                                p.num[row + x] += v * src.num[y * iw + x];
                                p.den[row + x] += v.abs() * src.den[y * iw + x];
                            }
                        }
                    }
                }
            }
            p
        })
        .collect()
}

/// Renders map `map` of layer `layer` (0-based S-layer index).
///
/// Errors when the layer or map does not exist, or when a C-layer before
/// `layer` pools globally (its output has no spatial layout to project).
pub fn reconstruct(net: &Network, layer: usize, map: usize) -> Result<Reconstruction> {
    if layer >= net.depth() {
        return Err(Error::invalid(format!(
            "layer index {layer} out of range ({} layers)",
            net.depth()
        )));
    }
    let maps = net.s_layer(layer).cfg.maps;
    if map >= maps {
        return Err(Error::invalid(format!(
            "map {map} out of range (layer {} has {maps} maps)",
            net.config.layers[layer].name
        )));
    }
    let mut planes = base_planes(net);
    let mut stride = 1;
    for l in 1..=layer {
        let c = net.c_layer(l - 1);
        if c.cfg.is_global() {
            return Err(Error::invalid(format!(
                "layer {} follows a global pooling layer",
                net.config.layers[l].name
            )));
        }
        stride *= net.s_layer(l - 1).cfg.stride * c.cfg.stride;
        let wanted: Vec<usize> = if l == layer {
            vec![map]
        } else {
            (0..net.s_layer(l).cfg.maps).collect()
        };
        planes = mix(net, l, &wanted, &planes, stride);
    }
    let p = if layer == 0 { planes.swap_remove(map) } else { planes.swap_remove(0) };
    let signed = net.config.encoder.kind == EncoderKind::Dog;
    let pixels = p
        .num
        .iter()
        .zip(&p.den)
        .map(|(&n, &d)| {
            let r = if d > 1e-12 { n / d } else { 0.0 };
            let v = if signed {
                128.0 + 127.0 * r.clamp(-1.0, 1.0)
            } else {
                255.0 * r.clamp(0.0, 1.0)
            };
            v.round() as u8
        })
        .collect();
    Ok(Reconstruction {
        width: p.size.1,
        height: p.size.0,
        pixels,
    })
}

/// Renders a map of the layer called `name`.
pub fn reconstruct_named(net: &Network, name: &str, map: usize) -> Result<Reconstruction> {
    let l = net
        .config
        .layer_index(name)
        .ok_or_else(|| Error::invalid(format!("unknown layer {name:?}")))?;
    reconstruct(net, l, map)
}

impl Reconstruction {
    /// Binary portable graymap.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.pixels)
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_pgm(std::io::BufWriter::new(f))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{bars_network, task1_network, task2_network};
    use crate::plasticity::Rule;
    use crate::spike::WeightTensor;

    fn spread(r: &Reconstruction) -> u8 {
        r.pixels.iter().max().unwrap() - r.pixels.iter().min().unwrap()
    }

    #[test]
    fn untrained_maps_render_near_uniform_gray() {
        let net = Network::new(task1_network(), 3).unwrap();
        for l in 0..2 {
            let r = reconstruct(&net, l, 0).unwrap();
            assert!(spread(&r) <= 16, "layer {l} spread {}", spread(&r));
            assert!(r.pixels.iter().all(|&p| (112..=144).contains(&p)));
        }
        let net = Network::new(task2_network(4, (3, 8), Rule::Stdp), 3).unwrap();
        let r = reconstruct(&net, 1, 2).unwrap();
        assert!(spread(&r) <= 16);
    }

    #[test]
    fn identity_kernel_reproduces_the_s1_rendering() {
        let mut cfg = task2_network(4, (3, 8), Rule::Stdp);
        cfg.layers[1].s.window = (1, 1);
        cfg.layers[1].s.padding = 0;
        let mut net = Network::new(cfg, 5).unwrap();
        let shape = net.weights[1].shape();
        net.weights[1] = WeightTensor::from_fn(shape, |o, i, _, _| if o == 0 && i == 7 { 1.0 } else { 0.0 });
        let s2 = reconstruct(&net, 1, 0).unwrap();
        let s1 = reconstruct(&net, 0, 7).unwrap();
        assert_eq!(s2, s1);
    }

    #[test]
    fn bar_kernel_peaks_along_the_bar() {
        let mut net = Network::new(bars_network(Rule::Stdp), 0).unwrap();
        let shape = net.weights[0].shape();
        net.weights[0] = WeightTensor::from_fn(shape, |_, _, dy, dx| if dx == dy { 1.0 } else { 0.05 });
        let r = reconstruct(&net, 0, 1).unwrap();
        for y in 0..r.height {
            for x in 0..r.width {
                let p = r.pixels[y * r.width + x];
                if x == y {
                    assert_eq!(p, 255);
                } else {
                    assert!(p < 20);
                }
            }
        }
    }

    #[test]
    fn rejects_unknown_layers_and_maps() {
        let net = Network::new(task1_network(), 0).unwrap();
        assert!(reconstruct(&net, 3, 0).is_err());
        assert!(reconstruct(&net, 0, 30).is_err());
        assert!(reconstruct_named(&net, "S9", 0).is_err());
        let net = Network::new(task2_network(4, (3, 8), Rule::Stdp), 0).unwrap();
        assert!(reconstruct(&net, 2, 0).is_err());
    }

    #[test]
    fn pgm_header_and_size() {
        let r = Reconstruction {
            width: 3,
            height: 2,
            pixels: vec![0, 1, 2, 3, 4, 5],
        };
        let mut buf = Vec::new();
        r.write_pgm(&mut buf).unwrap();
        assert_eq!(&buf[..11], b"P5\n3 2\n255\n");
        assert_eq!(buf.len(), 17);
    }
}
