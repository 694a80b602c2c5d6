//! CIFAR-10 binary batches: records of one label byte followed by a
//! 3×32×32 channel-major image.

use std::path::Path;

use crate::data::{LabeledDataset, Sample, Split};
use crate::error::{DataError, Error, Result};
use crate::tensor::Tensor;

const SIDE: usize = 32;
const RECORD: usize = 1 + 3 * SIDE * SIDE;

/// Decodes records, averaging `factor`×`factor` pixel blocks so the result
/// is `3 × 32/factor × 32/factor`.
pub fn decode_cifar(bytes: &[u8], factor: usize, first_id: u64) -> Result<Vec<Sample>> {
    if factor == 0 || SIDE % factor != 0 {
        return Err(Error::Config(format!("downsampling factor {factor} must divide 32")));
    }
    if bytes.len() % RECORD != 0 {
        return Err(DataError::Truncated(format!(
            "{} bytes is not a whole number of {RECORD}-byte records",
            bytes.len()
        ))
        .into());
    }
    let side = SIDE / factor;
    let area = (factor * factor) as f64;
    bytes
        .chunks_exact(RECORD)
        .enumerate()
        .map(|(i, rec)| {
            let px = &rec[1..];
            let input = Tensor::from_fn(&[3, side, side], |j| {
                let (c, y, x) = (j / (side * side), (j / side) % side, j % side);
                let mut acc = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += f64::from(px[(c * SIDE + y * factor + dy) * SIDE + x * factor + dx]);
                    }
                }
                acc / area / 255.0
            });
            Ok(Sample {
                id: first_id + i as u64,
                input,
                label: u32::from(rec[0]),
            })
        })
        .collect()
}

pub fn load_cifar(paths: &[&Path], factor: usize, split: Split) -> Result<LabeledDataset> {
    let mut samples = Vec::new();
    for p in paths {
        let bytes = std::fs::read(p)?;
        let next = decode_cifar(&bytes, factor, samples.len() as u64)?;
        samples.extend(next);
    }
    LabeledDataset::new(samples, split)
}
