//! MNIST IDX loading, the synthetic oriented-bars set, and seeded training
//! streams.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IdxError, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledImage {
    pub height: usize,
    pub width: usize,
    /// Row-major intensities, 0..=255.
    pub pixels: Vec<u8>,
    pub label: u32,
}

impl LabeledImage {
    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64).collect()
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, IdxError> {
    let io_err = |source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = std::fs::read(path).map_err(io_err)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(io_err)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IdxError> {
        if self.bytes.len() - self.pos < n {
            return Err(IdxError::Truncated {
                path: self.path.to_path_buf(),
                offset: self.pos,
                needed: n - (self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IdxError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: u32) -> Result<(), IdxError> {
        let found = self.u32()?;
        if found != expected {
            return Err(IdxError::BadMagic {
                path: self.path.to_path_buf(),
                expected,
                found,
            });
        }
        Ok(())
    }
}

/// Parses an IDX image file body: `(rows, cols, pixels per image)`.
pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<u8>>), IdxError> {
    let mut cur = Cursor { path, bytes, pos: 0 };
    cur.magic(IMAGES_MAGIC)?;
    let n = cur.u32()? as usize;
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    let mut images = Vec::with_capacity(n);
    for _ in 0..n {
        images.push(cur.take(rows * cols)?.to_vec());
    }
    Ok((rows, cols, images))
}

pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    let mut cur = Cursor { path, bytes, pos: 0 };
    cur.magic(LABELS_MAGIC)?;
    let n = cur.u32()? as usize;
    Ok(cur.take(n)?.to_vec())
}

/// Serializes images back to the IDX layout (uncompressed).
pub fn write_idx_images(images: &[LabeledImage]) -> Vec<u8> {
    let (rows, cols) = images.first().map_or((0, 0), |i| (i.height, i.width));
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        out.extend_from_slice(&img.pixels);
    }
    out
}

pub fn write_idx_labels(images: &[LabeledImage]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + images.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend(images.iter().map(|i| i.label as u8));
    out
}

/// Loads a pair of IDX files; gzip-compressed files are detected by their
/// header and decompressed transparently.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<LabeledImage>, IdxError> {
    let img_bytes = read_maybe_gz(images_path)?;
    let lbl_bytes = read_maybe_gz(labels_path)?;
    let (rows, cols, images) = parse_idx_images(images_path, &img_bytes)?;
    let labels = parse_idx_labels(labels_path, &lbl_bytes)?;
    if images.len() != labels.len() {
        return Err(IdxError::CountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    Ok(images
        .into_iter()
        .zip(labels)
        .map(|(pixels, label)| LabeledImage {
            height: rows,
            width: cols,
            pixels,
            label: label as u32,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Finds the IDX pair for `split` under `dir`, accepting the usual file
/// name spellings with or without `.gz`.
pub fn mnist_files(dir: &Path, split: Split) -> Option<(PathBuf, PathBuf)> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let find = |kind: &str, dims: &str| {
        [
            format!("{prefix}-{kind}-{dims}-ubyte"),
            format!("{prefix}-{kind}.{dims}-ubyte"),
            format!("{prefix}-{kind}-{dims}-ubyte.gz"),
            format!("{prefix}-{kind}.{dims}-ubyte.gz"),
        ]
        .into_iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
    };
    Some((find("images", "idx3")?, find("labels", "idx1")?))
}

pub fn load_mnist(dir: &Path, split: Split) -> Result<Vec<LabeledImage>> {
    let (images, labels) = mnist_files(dir, split).ok_or_else(|| {
        Error::invalid(format!("no MNIST {split:?} files under {}", dir.display()))
    })?;
    Ok(load_idx(&images, &labels)?)
}

/// Looks for MNIST in `$MNIST_DIR`, then `data/mnist` relative to the
/// working directory and its ancestors, then `/root/data/mnist`.
pub fn locate_mnist() -> Option<PathBuf> {
    let has = |p: &Path| mnist_files(p, Split::Train).is_some() && mnist_files(p, Split::Test).is_some();
    if let Some(dir) = std::env::var_os("MNIST_DIR").map(PathBuf::from) {
        if has(&dir) {
            return Some(dir);
        }
    }
    if let Ok(cwd) = std::env::current_dir() {
        for anc in cwd.ancestors() {
            let p = anc.join("data").join("mnist");
            if has(&p) {
                return Some(p);
            }
        }
    }
    let fallback = PathBuf::from("/root/data/mnist");
    has(&fallback).then_some(fallback)
}

/// The four straight 3-pixel bars of a 3x3 tile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    Horizontal,
    Vertical,
    /// Bottom-left to top-right.
    Diagonal45,
    /// Top-left to bottom-right.
    Diagonal135,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [
        Orientation::Horizontal,
        Orientation::Vertical,
        Orientation::Diagonal45,
        Orientation::Diagonal135,
    ];

    /// Lit cells `(row, col)` of the bar inside a 3x3 tile.
    pub fn cells(self) -> [(usize, usize); 3] {
        match self {
            Orientation::Horizontal => [(1, 0), (1, 1), (1, 2)],
            Orientation::Vertical => [(0, 1), (1, 1), (2, 1)],
            Orientation::Diagonal45 => [(2, 0), (1, 1), (0, 2)],
            Orientation::Diagonal135 => [(0, 0), (1, 1), (2, 2)],
        }
    }

    /// 3x3 binary mask, row-major.
    pub fn mask(self) -> [f64; 9] {
        let mut m = [0.0; 9];
        for (r, c) in self.cells() {
            m[r * 3 + c] = 1.0;
        }
        m
    }
}

pub const BARS_WIDTH: usize = 9;
pub const BARS_HEIGHT: usize = 3;
/// Label carried by bar images outside the target classes.
pub const BARS_DISTRACTOR: u32 = 3;

/// Target classes of the bars problem: unordered pairs of the three
/// non-horizontal orientations, in label order.
pub const BARS_CLASSES: [(Orientation, Orientation); 3] = [
    (Orientation::Vertical, Orientation::Diagonal45),
    (Orientation::Vertical, Orientation::Diagonal135),
    (Orientation::Diagonal45, Orientation::Diagonal135),
];

/// Class of a left/right bar combination, or [`BARS_DISTRACTOR`].
pub fn bars_label(left: Orientation, right: Orientation) -> u32 {
    BARS_CLASSES
        .iter()
        .position(|&(a, b)| (left, right) == (a, b) || (left, right) == (b, a))
        .map_or(BARS_DISTRACTOR, |p| p as u32)
}

/// Orientations of image `index` as produced by [`gen_bars`].
pub fn bars_orientations(index: usize) -> (Orientation, Orientation) {
    (Orientation::ALL[index / 4], Orientation::ALL[index % 4])
}

/// All 16 combinations of a left and a right bar in a 3-row, 9-column
/// image with a blank 3x3 gap in the middle. Lit pixels are 255.
pub fn gen_bars() -> Vec<LabeledImage> {
    let mut out = Vec::with_capacity(16);
    for left in Orientation::ALL {
        for right in Orientation::ALL {
            let mut pixels = vec![0u8; BARS_WIDTH * BARS_HEIGHT];
            for (r, c) in left.cells() {
                pixels[r * BARS_WIDTH + c] = 255;
            }
            for (r, c) in right.cells() {
                pixels[r * BARS_WIDTH + 6 + c] = 255;
            }
            out.push(LabeledImage {
                height: BARS_HEIGHT,
                width: BARS_WIDTH,
                pixels,
                label: bars_label(left, right),
            });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistractorPolicy {
    /// Drop non-target images from the stream.
    Exclude,
    /// Keep them; they receive a neutral reinforcement signal.
    Neutral,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskFilter {
    pub targets: BTreeSet<u32>,
    pub distractor_policy: DistractorPolicy,
}

impl TaskFilter {
    pub fn new(targets: impl IntoIterator<Item = u32>, distractor_policy: DistractorPolicy) -> Self {
        Self {
            targets: targets.into_iter().collect(),
            distractor_policy,
        }
    }

    /// Every label is a target.
    pub fn all(labels: impl IntoIterator<Item = u32>) -> Self {
        Self::new(labels, DistractorPolicy::Exclude)
    }

    pub fn is_target(&self, label: u32) -> bool {
        self.targets.contains(&label)
    }
}

/// A seeded, endlessly reshuffled sequence of dataset indices.
///
/// The pool is the filtered dataset, optionally subsampled to a fraction.
/// Each pass over the pool ("epoch") uses its own seeded permutation, so
/// position `i` of the stream can be recomputed without replaying it.
#[derive(Clone, Debug)]
pub struct Stream {
    pool: Vec<usize>,
    seed: u64,
    count: usize,
}

impl Stream {
    pub fn pool(&self) -> &[usize] {
        &self.pool
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    fn epoch(&self, e: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (e as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut perm = self.pool.clone();
        perm.shuffle(&mut rng);
        perm
    }

    /// Indices from position `start` to the end of the stream.
    pub fn iter_from(&self, start: usize) -> impl Iterator<Item = usize> + '_ {
        let n = self.pool.len();
        let mut cached: Option<(usize, Vec<usize>)> = None;
        (start..self.count).map(move |i| {
            let e = i / n;
            if cached.as_ref().map(|c| c.0) != Some(e) {
                cached = Some((e, self.epoch(e)));
            }
            cached.as_ref().unwrap().1[i % n]
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.iter_from(0)
    }
}

/// Builds a training stream of `count` draws over the images in `labels`
/// that pass `filter`, restricted to `fraction` of them (chosen by seed).
pub fn make_stream(labels: &[u32], filter: &TaskFilter, seed: u64, count: usize, fraction: f64) -> Result<Stream> {
    if count == 0 {
        return Err(Error::invalid("stream length must be at least 1"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("training fraction {fraction} outside (0, 1]")));
    }
    let mut pool: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| filter.distractor_policy == DistractorPolicy::Neutral || filter.is_target(l))
        .map(|(i, _)| i)
        .collect();
    if pool.is_empty() {
        return Err(Error::invalid("task filter excludes every image"));
    }
    if fraction < 1.0 {
        let keep = ((pool.len() as f64 * fraction).round() as usize).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5EED_F4AC));
        pool.shuffle(&mut rng);
        pool.truncate(keep);
        pool.sort_unstable();
    }
    Ok(Stream { pool, seed, count })
}

/// The first `per_class` images of each target label, in dataset order.
pub fn target_slice(images: &[LabeledImage], targets: &[u32], per_class: usize) -> Vec<usize> {
    let mut taken = vec![0usize; targets.len()];
    let mut out = Vec::new();
    for (i, img) in images.iter().enumerate() {
        if let Some(t) = targets.iter().position(|&l| l == img.label) {
            if taken[t] < per_class {
                taken[t] += 1;
                out.push(i);
            }
        }
    }
    out
}
