//! Weight checkpoints: one binary file per layer plus a text manifest.
//!
//! Layer file: `u32` name length, UTF-8 name, four `u32` shape values
//! `(out_maps, in_depth, win_h, win_w)`, then row-major `f64` weights, all
//! little-endian. The manifest lists the layer order, the iteration count
//! and any resume state as `key value...` lines. `network.toml` records the
//! network config so a checkpoint can be reopened on its own.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::network::{Network, NetworkConfig};
use crate::plasticity::PhiTracker;
use crate::spike::{KernelShape, WeightTensor};

pub const MANIFEST: &str = "manifest.txt";
pub const NETWORK: &str = "network.toml";

/// Where an interrupted run picks up.
#[derive(Clone, Debug, PartialEq)]
pub struct ResumeState {
    pub phase: usize,
    pub phase_iteration: u64,
    pub tracker: PhiTracker,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub layers: Vec<String>,
    pub iteration: u64,
    pub resume: Option<ResumeState>,
}

pub fn write_layer<W: Write>(mut out: W, name: &str, w: &WeightTensor) -> std::io::Result<()> {
    let s = w.shape();
    out.write_all(&(name.len() as u32).to_le_bytes())?;
    out.write_all(name.as_bytes())?;
    for d in [s.out_maps, s.in_depth, s.win_h, s.win_w] {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(s.len() * 8);
    for v in w.to_row_major() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn read_layer<R: Read>(mut input: R) -> Result<(String, WeightTensor)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let bad = |what: &str| Error::Checkpoint(format!("layer file {what}"));
    let u32_at = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| bad("header is truncated"))
    };
    let name_len = u32_at(0)? as usize;
    let name = bytes
        .get(4..4 + name_len)
        .ok_or_else(|| bad("name is truncated"))?;
    let name = String::from_utf8(name.to_vec()).map_err(|_| bad("name is not UTF-8"))?;
    let mut at = 4 + name_len;
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = u32_at(at)? as usize;
        at += 4;
    }
    let shape = KernelShape::new(dims[0], dims[1], dims[2], dims[3]);
    let body = &bytes[at..];
    if body.len() != shape.len() * 8 {
        return Err(Error::Checkpoint(format!(
            "layer {name}: expected {} weights, found {} bytes",
            shape.len(),
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((name, WeightTensor::from_row_major(shape, &values)?))
}

fn layer_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.bin"))
}

/// Writes every layer and the manifest into `dir`. Files are written under
/// temporary names and renamed, so a crash leaves the previous checkpoint
/// intact.
pub fn save(dir: &Path, net: &Network, iteration: u64, resume: Option<&ResumeState>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut renames = Vec::new();
    for (l, cfg) in net.config.layers.iter().enumerate() {
        let tmp = dir.join(format!(".{}.bin.tmp", cfg.name));
        write_layer(std::io::BufWriter::new(fs::File::create(&tmp)?), &cfg.name, &net.weights[l])?;
        renames.push((tmp, layer_path(dir, &cfg.name)));
    }
    let manifest = Manifest {
        layers: net.config.layers.iter().map(|l| l.name.clone()).collect(),
        iteration,
        resume: resume.cloned(),
    };
    let tmp = dir.join(".network.tmp");
    fs::write(&tmp, super::config::to_toml(&net.config)?)?;
    renames.push((tmp, dir.join(NETWORK)));
    let tmp = dir.join(".manifest.tmp");
    fs::write(&tmp, manifest.to_text())?;
    for (from, to) in renames {
        fs::rename(from, to)?;
    }
    fs::rename(tmp, dir.join(MANIFEST))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    Manifest::parse(&text)
}

/// Loads weights from `dir` into a network built from `config`.
pub fn load(dir: &Path, config: NetworkConfig) -> Result<(Network, Manifest)> {
    let manifest = read_manifest(dir)?;
    let names: Vec<&str> = config.layers.iter().map(|l| l.name.as_str()).collect();
    if manifest.layers != names {
        return Err(Error::Checkpoint(format!(
            "checkpoint layers {:?} do not match config layers {:?}",
            manifest.layers, names
        )));
    }
    let mut weights = Vec::new();
    for name in &names {
        let (stored, w) = read_layer(std::io::BufReader::new(fs::File::open(layer_path(dir, name))?))?;
        if stored != *name {
            return Err(Error::Checkpoint(format!("{name}.bin holds layer {stored}")));
        }
        weights.push(w);
    }
    Ok((Network::with_weights(config, weights)?, manifest))
}

/// Loads a checkpoint using the network config stored beside it.
pub fn load_saved(dir: &Path) -> Result<(Network, Manifest)> {
    let config: NetworkConfig = super::config::load_toml(&dir.join(NETWORK))?;
    load(dir, config)
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("layers {}\niteration {}\n", self.layers.join(" "), self.iteration);
        if let Some(r) = &self.resume {
            let t = &r.tracker;
            s += &format!(
                "phase {}\nphase_iteration {}\ntracker {} {} {} {} {}\n",
                r.phase,
                r.phase_iteration,
                t.batch_size,
                t.hits,
                t.misses,
                f64_hex(t.phi_r),
                f64_hex(t.phi_p)
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::Checkpoint(format!("bad manifest line: {line}"));
        let mut layers = None;
        let mut iteration = None;
        let (mut phase, mut phase_iteration, mut tracker) = (None, None, None);
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut it = line.split_whitespace();
            let key = it.next().unwrap();
            let rest: Vec<&str> = it.collect();
            let num = |i: usize| -> Result<u64> { rest.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| bad(line)) };
            match key {
                "layers" => layers = Some(rest.iter().map(|s| s.to_string()).collect()),
                "iteration" => iteration = Some(num(0)?),
                "phase" => phase = Some(num(0)? as usize),
                "phase_iteration" => phase_iteration = Some(num(0)?),
                "tracker" => {
                    let phi = |i: usize| rest.get(i).and_then(|v| f64_from_hex(v)).ok_or_else(|| bad(line));
                    tracker = Some(PhiTracker {
                        batch_size: num(0)? as usize,
                        hits: num(1)? as usize,
                        misses: num(2)? as usize,
                        phi_r: phi(3)?,
                        phi_p: phi(4)?,
                    });
                }
                _ => return Err(bad(line)),
            }
        }
        let resume = match (phase, phase_iteration, tracker) {
            (Some(phase), Some(phase_iteration), Some(tracker)) => Some(ResumeState {
                phase,
                phase_iteration,
                tracker,
            }),
            (None, None, None) => None,
            _ => return Err(Error::Checkpoint("incomplete resume state in manifest".into())),
        };
        Ok(Self {
            layers: layers.ok_or_else(|| Error::Checkpoint("manifest lacks layers".into()))?,
            iteration: iteration.ok_or_else(|| Error::Checkpoint("manifest lacks iteration".into()))?,
            resume,
        })
    }
}

// Exact text form of an f64, so resumed runs stay bitwise identical.
fn f64_hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn f64_from_hex(s: &str) -> Option<f64> {
    u64::from_str_radix(s, 16).ok().map(f64::from_bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::bars_network;
    use crate::plasticity::Rule;

    #[test]
    fn layer_header_layout() {
        let w = WeightTensor::from_fn(KernelShape::new(2, 1, 1, 2), |o, _, _, x| (o * 2 + x) as f64);
        let mut buf = Vec::new();
        write_layer(&mut buf, "S1", &w).unwrap();
        assert_eq!(&buf[..4], &2u32.to_le_bytes());
        assert_eq!(&buf[4..6], b"S1");
        assert_eq!(&buf[6..10], &2u32.to_le_bytes());
        assert_eq!(&buf[18..22], &2u32.to_le_bytes());
        assert_eq!(buf.len(), 22 + 4 * 8);
        assert_eq!(&buf[22 + 8..22 + 16], &1.0f64.to_le_bytes());
        let (name, back) = read_layer(&buf[..]).unwrap();
        assert_eq!(name, "S1");
        assert_eq!(back, w);
        assert!(read_layer(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let net = Network::new(bars_network(Rule::Stdp), 9).unwrap();
        let resume = ResumeState {
            phase: 1,
            phase_iteration: 77,
            tracker: PhiTracker {
                batch_size: 16,
                hits: 3,
                misses: 2,
                phi_r: 0.1 + 0.2,
                phi_p: 0.7,
            },
        };
        save(dir.path(), &net, 123, Some(&resume)).unwrap();
        let (back, m) = load(dir.path(), net.config.clone()).unwrap();
        assert_eq!(back.weights, net.weights);
        assert_eq!(m.iteration, 123);
        assert_eq!(m.resume, Some(resume));
        assert_eq!(m.layers, vec!["S1", "S2"]);
        let (own, _) = load_saved(dir.path()).unwrap();
        assert_eq!(own.config, net.config);
        assert_eq!(own.weights, net.weights);
    }

    #[test]
    fn mismatched_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let net = Network::new(bars_network(Rule::Stdp), 9).unwrap();
        save(dir.path(), &net, 0, None).unwrap();
        let mut other = net.config.clone();
        other.layers[0].name = "X".into();
        assert!(load(dir.path(), other).is_err());
    }
}
