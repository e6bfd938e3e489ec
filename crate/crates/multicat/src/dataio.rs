//! IDX image/label files, the paired image–utterance dataset, and the plain
//! text corpus format.
//!
//! Labels are kept apart from the observations: modules only ever see an
//! [`Observations`], and evaluation code reads [`PairedDataset::labels`].

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use thiserror::Error;

use multicat_core::rng::stream;
use multicat_modules::asr::{Channel, PRONUNCIATIONS};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed IDX data at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Module(#[from] multicat_modules::ModuleError),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

fn format_err(offset: usize, message: impl Into<String>) -> DataError {
    DataError::Format {
        offset,
        message: message.into(),
    }
}

/// Reads a file, transparently inflating gzip content.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let io = |source| DataError::Io {
        path: path.to_owned(),
        source,
    };
    let raw = fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(offset, format!("header ends after {} bytes", bytes.len())))
}

/// Raw images of an IDX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// `count × rows × cols` bytes, image-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Pixel values scaled from `0..=255` to `[0, 1]`.
    pub fn scaled(&self, i: usize) -> Vec<f64> {
        self.image(i).iter().map(|b| f64::from(*b) / 255.0).collect()
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(format_err(0, format!("magic {magic}, expected {IMAGE_MAGIC}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let expected = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < expected {
        return Err(format_err(
            16 + payload.len(),
            format!("payload truncated: {} of {expected} pixel bytes", payload.len()),
        ));
    }
    if payload.len() > expected {
        return Err(format_err(16 + expected, "trailing bytes after the last image"));
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: payload.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(format_err(0, format!("magic {magic}, expected {LABEL_MAGIC}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(format_err(
            8 + payload.len().min(count),
            format!("header announces {count} labels, payload has {}", payload.len()),
        ));
    }
    Ok(payload.to_vec())
}

pub fn write_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count() as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Images and labels of an IDX pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Mnist {
    pub images: IdxImages,
    pub labels: Vec<u8>,
}

pub fn load_mnist(image_file: &Path, label_file: &Path) -> Result<Mnist> {
    let images = parse_idx_images(&read_bytes(image_file)?)?;
    let labels = parse_idx_labels(&read_bytes(label_file)?)?;
    if images.count() != labels.len() {
        return Err(format_err(
            4,
            format!("{} images but {} labels", images.count(), labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|l| **l > 9) {
        return Err(DataError::Input(format!("label {bad} is not a digit")));
    }
    Ok(Mnist { images, labels })
}

/// What the modules get to see.
#[derive(Clone, Debug, PartialEq)]
pub struct Observations {
    /// Pixel vectors in `[0, 1]`.
    pub images: Vec<Vec<f64>>,
    /// Observed syllables per utterance.
    pub utterances: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset {
    pub observations: Observations,
    /// Ground-truth digit of each pair; evaluation only.
    pub labels: Vec<u8>,
    /// Index of each pair's image in the source file.
    pub source_index: Vec<usize>,
    pub seed: u64,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-digit image indices, each shuffled with the dataset seed.
fn digit_pools(labels: &[u8], seed: u64) -> Vec<Vec<usize>> {
    let mut pools = vec![Vec::new(); 10];
    for (i, l) in labels.iter().enumerate() {
        pools[*l as usize].push(i);
    }
    let mut rng = stream(seed, "data/pools");
    for p in &mut pools {
        p.shuffle(&mut rng);
    }
    pools
}

/// Picks `n` images balanced across digits and pairs each with a synthesized
/// utterance of its digit.
pub fn make_pairs(mnist: &Mnist, n: usize, channel: &Channel, seed: u64) -> Result<PairedDataset> {
    if n > mnist.labels.len() {
        return Err(DataError::Input(format!(
            "{n} pairs requested but only {} images are available",
            mnist.labels.len()
        )));
    }
    let mut pools = digit_pools(&mnist.labels, seed);
    for p in &mut pools {
        p.reverse();
    }
    let mut chosen = Vec::with_capacity(n);
    'fill: loop {
        let mut progressed = false;
        for pool in pools.iter_mut() {
            if chosen.len() == n {
                break 'fill;
            }
            if let Some(i) = pool.pop() {
                chosen.push(i);
                progressed = true;
            }
        }
        if !progressed || chosen.len() == n {
            break;
        }
    }
    chosen.shuffle(&mut stream(seed, "data/order"));

    let mut rng = stream(seed, "data/speech");
    let mut utterances = Vec::with_capacity(n);
    for &i in &chosen {
        utterances.push(channel.synthesize(PRONUNCIATIONS[mnist.labels[i] as usize], &mut rng)?);
    }
    Ok(PairedDataset {
        observations: Observations {
            images: chosen.iter().map(|i| mnist.images.scaled(*i)).collect(),
            utterances,
        },
        labels: chosen.iter().map(|i| mnist.labels[*i]).collect(),
        source_index: chosen,
        seed,
    })
}

/// Pairs a pre-recorded corpus with images of the matching digits.
pub fn pair_corpus(mnist: &Mnist, utterances: Vec<Vec<String>>, labels: Vec<u8>, seed: u64) -> Result<PairedDataset> {
    if utterances.len() != labels.len() {
        return Err(DataError::Input(format!(
            "corpus has {} utterances but {} labels",
            utterances.len(),
            labels.len()
        )));
    }
    let mut pools = digit_pools(&mnist.labels, seed);
    let mut chosen = Vec::with_capacity(labels.len());
    for (line, l) in labels.iter().enumerate() {
        let pool = pools
            .get_mut(*l as usize)
            .ok_or_else(|| DataError::Input(format!("label line {}: {l} is not a digit", line + 1)))?;
        let i = pool
            .pop()
            .ok_or_else(|| DataError::Input(format!("not enough images of digit {l}")))?;
        chosen.push(i);
    }
    Ok(PairedDataset {
        observations: Observations {
            images: chosen.iter().map(|i| mnist.images.scaled(*i)).collect(),
            utterances,
        },
        labels,
        source_index: chosen,
        seed,
    })
}

/// One utterance per line, syllables separated by single spaces.
pub fn format_corpus(utterances: &[Vec<String>]) -> String {
    utterances.iter().map(|u| u.join(" ") + "\n").collect()
}

pub fn parse_corpus(text: &str) -> Result<Vec<Vec<String>>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let syl: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
            if syl.is_empty() {
                Err(DataError::Input(format!("corpus line {} is empty", i + 1)))
            } else {
                Ok(syl)
            }
        })
        .collect()
}

pub fn format_labels(labels: &[u8]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

pub fn parse_labels(text: &str) -> Result<Vec<u8>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.trim()
                .parse::<u8>()
                .ok()
                .filter(|d| *d <= 9)
                .ok_or_else(|| DataError::Input(format!("label line {}: `{line}` is not a digit", i + 1)))
        })
        .collect()
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_owned(),
        source,
    })
}
