//! Flat CSV datasets: one sample per row, a label column, and the pixel
//! values of the remaining columns in row-major order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Sample, Split};
use crate::error::{DataError, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: usize,
    /// Shape every row's pixel columns are reshaped to.
    pub shape: Vec<usize>,
    /// Cells are divided by this; 255 for byte-valued pixels.
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_scale() -> f64 {
    255.0
}

impl CsvSchema {
    pub fn new(label_column: usize, shape: Vec<usize>) -> Self {
        Self {
            label_column,
            shape,
            scale: default_scale(),
        }
    }
}

fn row_err(row: usize, message: impl Into<String>) -> Error {
    DataError::CsvRow {
        row,
        message: message.into(),
    }
    .into()
}

/// Parses CSV text. Rows are numbered from 1 in errors; a first row whose
/// label cell is not an integer is treated as a header and skipped.
pub fn parse_csv(text: &str, schema: &CsvSchema, split: Split) -> Result<LabeledDataset> {
    if !(schema.scale > 0.0) {
        return Err(Error::Config(format!("csv scale must be positive, got {}", schema.scale)));
    }
    let width: usize = schema.shape.iter().product::<usize>() + 1;
    if schema.label_column >= width {
        return Err(Error::Config(format!(
            "label column {} is outside the {width} expected columns",
            schema.label_column
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| row_err(row, e.to_string()))?;
        let label_cell = record.get(schema.label_column).unwrap_or("");
        if row == 1 && label_cell.parse::<u32>().is_err() {
            continue;
        }
        if record.len() != width {
            return Err(row_err(row, format!("expected {width} columns, found {}", record.len())));
        }
        let label = label_cell
            .parse::<u32>()
            .map_err(|_| row_err(row, format!("label '{label_cell}' is not a class id")))?;
        let data = record
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != schema.label_column)
            .map(|(c, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(|v| v / schema.scale)
                    .ok_or_else(|| row_err(row, format!("column {} holds non-numeric '{cell}'", c + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample {
            id: samples.len() as u64,
            input: Tensor::new(schema.shape.clone(), data)?,
            label,
        });
    }
    LabeledDataset::new(samples, split)
}

pub fn load_csv(path: &Path, schema: &CsvSchema, split: Split) -> Result<LabeledDataset> {
    parse_csv(&std::fs::read_to_string(path)?, schema, split)
}

/// Writes `label,p0,p1,..` with a header row and unscaled values; read it
/// back with a scale of 1.
pub fn export_csv(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let n: usize = dataset.input_shape().iter().product();
    let header = std::iter::once("label".to_string()).chain((0..n).map(|i| format!("p{i}")));
    w.write_record(header).map_err(|e| Error::Io(e.into()))?;
    for s in dataset.samples() {
        let row = std::iter::once(s.label.to_string()).chain(s.input.data().iter().map(|v| v.to_string()));
        w.write_record(row).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "label,a,b,c,d\n3,0,255,51,102\n1,255,255,0,0\n7,0,0,0,0\n";

    #[test]
    fn three_rows_with_header() {
        let d = parse_csv(FIXTURE, &CsvSchema::new(0, vec![1, 2, 2]), Split::Train).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.samples()[0].input.data(), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(d.class_ids(), &[1, 3, 7]);
    }

    #[test]
    fn label_column_can_be_last() {
        let d = parse_csv("1,2,9\n", &CsvSchema { label_column: 2, shape: vec![2], scale: 1.0 }, Split::Test)
            .unwrap();
        assert_eq!(d.samples()[0].label, 9);
        assert_eq!(d.samples()[0].input.data(), &[1.0, 2.0]);
    }

    #[test]
    fn errors_carry_row_numbers() {
        let schema = CsvSchema::new(0, vec![2]);
        let ragged = parse_csv("1,2,3\n1,2\n", &schema, Split::Train).unwrap_err();
        assert!(matches!(ragged, Error::Data(DataError::CsvRow { row: 2, .. })), "{ragged}");
        let junk = parse_csv("1,2,3\n2,x,3\n", &schema, Split::Train).unwrap_err();
        assert!(matches!(junk, Error::Data(DataError::CsvRow { row: 2, .. })), "{junk}");
    }

    #[test]
    fn export_round_trips() {
        let d = parse_csv(FIXTURE, &CsvSchema::new(0, vec![1, 2, 2]), Split::Train).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        export_csv(&d, &path).unwrap();
        let raw = CsvSchema { scale: 1.0, ..CsvSchema::new(0, vec![1, 2, 2]) };
        let back = load_csv(&path, &raw, Split::Train).unwrap();
        assert_eq!(back, d);
    }
}
