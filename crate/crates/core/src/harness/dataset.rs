//! Dataset ingestion: IDX image/label pairs and JSON lines.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::LstmNetwork;
use crate::verifier::Sample;
use crate::{Error, Result};

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Idx,
    Jsonl,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "idx" => Ok(Self::Idx),
            "jsonl" => Ok(Self::Jsonl),
            _ => Err(Error::InvalidArgument(format!("unknown dataset format `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    Idx { images: PathBuf, labels: PathBuf },
    Jsonl(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    /// `(frames, features per frame)`.
    pub frame_shape: (usize, usize),
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Dataset("dataset is empty".into()))?;
        let frame_shape = (first.0.len(), first.0.first().map_or(0, Vec::len));
        for (i, (seq, _)) in samples.iter().enumerate() {
            if seq.len() != frame_shape.0 || seq.iter().any(|f| f.len() != frame_shape.1) {
                return Err(Error::Dataset(format!(
                    "sample {i} does not have shape {}×{}",
                    frame_shape.0, frame_shape.1
                )));
            }
            if seq.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!("sample {i} has non-finite values")));
            }
        }
        let num_classes = samples.iter().map(|s| s.1).max().unwrap_or(0) + 1;
        Ok(Self {
            samples,
            num_classes,
            frame_shape,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Errors unless every sample fits `net`'s input layout.
    pub fn check_against(&self, net: &LstmNetwork) -> Result<()> {
        if self.frame_shape != (net.num_frames, net.input_dim) {
            return Err(Error::Dataset(format!(
                "samples are {}×{} but the model expects {}×{}",
                self.frame_shape.0, self.frame_shape.1, net.num_frames, net.input_dim
            )));
        }
        if self.num_classes > net.num_classes() {
            return Err(Error::Dataset(format!(
                "label {} out of range for {} classes",
                self.num_classes - 1,
                net.num_classes()
            )));
        }
        Ok(())
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Dataset("truncated IDX header".into()))
}

/// Images of an IDX `0x803` file as `[0,1]` pixel vectors.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGES {
        return Err(Error::Dataset(format!(
            "bad IDX image magic {magic:#010x}, expected {IDX_IMAGES:#010x}"
        )));
    }
    let count = read_u32(bytes, 4)? as usize;
    let pixels = read_u32(bytes, 8)? as usize * read_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    if body.len() != count * pixels {
        return Err(Error::Dataset(format!(
            "IDX image payload has {} bytes, expected {}",
            body.len(),
            count * pixels
        )));
    }
    Ok(body
        .chunks(pixels.max(1))
        .take(count)
        .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_LABELS {
        return Err(Error::Dataset(format!(
            "bad IDX label magic {magic:#010x}, expected {IDX_LABELS:#010x}"
        )));
    }
    let count = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Dataset(format!(
            "IDX label payload has {} bytes, expected {count}",
            body.len()
        )));
    }
    Ok(body.iter().map(|&l| usize::from(l)).collect())
}

/// Splits a flat image into `frames` contiguous bands, top to bottom.
pub fn frame_image(pixels: &[f64], frames: usize) -> Result<Vec<Vec<f64>>> {
    if frames == 0 || pixels.len() % frames != 0 {
        return Err(Error::Dataset(format!(
            "cannot split {} pixels into f = {frames} equal frames",
            pixels.len()
        )));
    }
    Ok(pixels.chunks(pixels.len() / frames).map(<[f64]>::to_vec).collect())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlRow {
    sequence: Vec<Vec<f64>>,
    label: usize,
}

pub fn parse_jsonl(text: &str) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonlRow = serde_json::from_str(line)
            .map_err(|e| Error::Dataset(format!("line {}: {e}", n + 1)))?;
        out.push((row.sequence, row.label));
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(samples: &[Sample], mut writer: W) -> Result<()> {
    for (sequence, label) in samples {
        let row = JsonlRow {
            sequence: sequence.clone(),
            label: *label,
        };
        serde_json::to_writer(&mut writer, &row)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Loads samples, framing IDX images into `frames` bands.
pub fn load_dataset(source: &DatasetSource, frames: usize) -> Result<Dataset> {
    let samples = match source {
        DatasetSource::Idx { images, labels } => {
            let images = parse_idx_images(&fs::read(images)?)?;
            let labels = parse_idx_labels(&fs::read(labels)?)?;
            if images.len() != labels.len() {
                return Err(Error::Dataset(format!(
                    "{} images but {} labels",
                    images.len(),
                    labels.len()
                )));
            }
            images
                .iter()
                .zip(labels)
                .map(|(img, l)| Ok((frame_image(img, frames)?, l)))
                .collect::<Result<Vec<_>>>()?
        }
        DatasetSource::Jsonl(path) => {
            let mut text = String::new();
            for line in BufReader::new(fs::File::open(path)?).lines() {
                text.push_str(&line?);
                text.push('\n');
            }
            parse_jsonl(&text)?
        }
    };
    Dataset::new(samples)
}

pub fn save_jsonl(samples: &[Sample], path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    write_jsonl(samples, &mut w)?;
    w.flush()?;
    Ok(())
}

/// The first `n` correctly classified samples under a seeded shuffle.
pub fn select_samples(dataset: &Dataset, net: &LstmNetwork, n: usize, seed: u64) -> Result<Vec<Sample>> {
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = Vec::with_capacity(n);
    for i in order {
        if out.len() == n {
            break;
        }
        let (seq, label) = &dataset.samples[i];
        if net.predict(seq)? == *label {
            out.push((seq.clone(), *label));
        }
    }
    Ok(out)
}
