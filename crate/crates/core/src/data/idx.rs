//! IDX files as used by MNIST-style corpora: a big-endian magic
//! (`0x00000803` for u8 image stacks, `0x00000801` for u8 labels) followed by
//! big-endian u32 dimensions and the raw bytes.

use std::fs;
use std::path::Path;

use crate::data::{LabeledDataset, Sample, Split};
use crate::error::{DataError, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| DataError::Truncated(format!("{what} header")).into())
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let found = be_u32(bytes, 0, what)?;
    if found != expected {
        return Err(DataError::IdxMagic { expected, found }.into());
    }
    Ok(())
}

/// Returns `(rows, cols, pixels)` with one `rows * cols` slab per image.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, Vec<&[u8]>)> {
    check_magic(bytes, IMAGES_MAGIC, "image file")?;
    let n = be_u32(bytes, 4, "image file")? as usize;
    let rows = be_u32(bytes, 8, "image file")? as usize;
    let cols = be_u32(bytes, 12, "image file")? as usize;
    let size = rows * cols;
    let body = &bytes[16..];
    if size == 0 || body.len() < n * size {
        return Err(DataError::Truncated(format!(
            "image file declares {n} images of {rows}x{cols} but holds {} bytes",
            body.len()
        ))
        .into());
    }
    Ok((rows, cols, body.chunks_exact(size).take(n).collect()))
}

pub fn parse_labels(bytes: &[u8]) -> Result<&[u8]> {
    check_magic(bytes, LABELS_MAGIC, "label file")?;
    let n = be_u32(bytes, 4, "label file")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(DataError::Truncated(format!(
            "label file declares {n} labels but holds {}",
            body.len()
        ))
        .into());
    }
    Ok(&body[..n])
}

/// Decodes an image/label pair, scaling pixels to [0, 1].
pub fn decode_idx(images: &[u8], labels: &[u8], split: Split) -> Result<LabeledDataset> {
    let (rows, cols, imgs) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if imgs.len() != labels.len() {
        return Err(DataError::CountMismatch {
            images: imgs.len(),
            labels: labels.len(),
        }
        .into());
    }
    let samples = imgs
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (px, &label))| {
            let data = px.iter().map(|&b| f64::from(b) / 255.0).collect();
            Ok(Sample {
                id: i as u64,
                input: Tensor::new(vec![1, rows, cols], data)?,
                label: u32::from(label),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(samples, split)
}

pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<LabeledDataset> {
    decode_idx(&fs::read(images_path)?, &fs::read(labels_path)?, split)
}

/// Encodes `[1, rows, cols]` samples with values in [0, 1] as an IDX pair.
pub fn encode_idx(dataset: &LabeledDataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let [1, rows, cols] = *dataset.input_shape() else {
        return Err(DataError::Inconsistent(format!(
            "IDX export needs single-channel images, got {:?}",
            dataset.input_shape()
        ))
        .into());
    };
    let n = dataset.len() as u32;
    let mut images = Vec::with_capacity(16 + dataset.len() * rows * cols);
    for v in [IMAGES_MAGIC, n, rows as u32, cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    let mut labels = Vec::with_capacity(8 + dataset.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&n.to_be_bytes());
    for s in dataset.samples() {
        images.extend(s.input.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        let label = u8::try_from(s.label).map_err(|_| {
            DataError::Inconsistent(format!("label {} does not fit an IDX byte", s.label))
        })?;
        labels.push(label);
    }
    Ok((images, labels))
}
