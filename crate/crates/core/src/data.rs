//! Dataset ingestion, normalization, summaries, and train/test splitting.
//!
//! Inputs are min–max rescaled to [0, 1] per dimension and targets are
//! standardized to zero mean and unit (sample) standard deviation; every
//! downstream module assumes these conventions.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A regression dataset: `inputs` has one row per instance.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub dim: usize,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, targets: DVector<f64>) -> Self {
        assert_eq!(inputs.nrows(), targets.len());
        let dim = inputs.ncols();
        Dataset { inputs, targets, dim }
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select_rows(&self, rows: &[usize]) -> Dataset {
        let inputs = DMatrix::from_fn(rows.len(), self.dim, |i, j| self.inputs[(rows[i], j)]);
        let targets = DVector::from_fn(rows.len(), |i, _| self.targets[rows[i]]);
        Dataset::new(inputs, targets)
    }
}

/// Affine transforms applied by [`normalize`], kept so predictions can be
/// mapped back to raw units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub input_offset: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub target_offset: f64,
    pub target_scale: f64,
}

impl NormalizationRecord {
    /// Maps a normalized dataset back to raw units.
    pub fn denormalize(&self, d: &Dataset) -> Dataset {
        let inputs = DMatrix::from_fn(d.len(), d.dim, |i, j| {
            d.inputs[(i, j)] * self.input_scale[j] + self.input_offset[j]
        });
        let targets = d.targets.map(|y| y * self.target_scale + self.target_offset);
        Dataset::new(inputs, targets)
    }

    /// Applies the stored forward transform (used for held-out data).
    pub fn normalize_with(&self, d: &Dataset) -> Dataset {
        let inputs = DMatrix::from_fn(d.len(), d.dim, |i, j| {
            (d.inputs[(i, j)] - self.input_offset[j]) / self.input_scale[j]
        });
        let targets = d.targets.map(|y| (y - self.target_offset) / self.target_scale);
        Dataset::new(inputs, targets)
    }
}

/// Per-dimension frequency statistics that drive the sampling prior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSummary {
    /// Highest frequency identifiable from the (fictitious evenly-resampled)
    /// data, per dimension: `0.5 / mean gap` between sorted distinct values.
    pub nyquist: Vec<f64>,
    /// Coordinate window `max - min`, per dimension.
    pub window: Vec<f64>,
    pub count: usize,
}

/// How the target column is identified in a CSV file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TargetColumn {
    Name(String),
    /// 0-based index into the original column order.
    Index(usize),
}

/// Loads a CSV file. The first row is treated as a header unless every cell
/// in it parses as a number. Remaining columns keep their original order.
pub fn load_csv(path: &Path, target: &TargetColumn) -> Result<Dataset> {
    let raw = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_reader(raw.as_bytes());

    let mut records: Vec<csv::StringRecord> = Vec::new();
    for rec in reader.records() {
        records.push(rec.map_err(|e| Error::Csv(e.to_string()))?);
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let first_is_header = records[0].iter().any(|cell| cell.trim().parse::<f64>().is_err());
    let header: Option<Vec<String>> = if first_is_header {
        Some(records[0].iter().map(|c| c.trim().to_string()).collect())
    } else {
        None
    };
    let data_rows = if first_is_header { &records[1..] } else { &records[..] };
    if data_rows.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let ncols = data_rows[0].len();
    let target_idx = match target {
        TargetColumn::Index(i) => {
            if *i >= ncols {
                return Err(Error::MissingTargetColumn(format!("index {i}")));
            }
            *i
        }
        TargetColumn::Name(name) => match &header {
            Some(cols) => cols
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::MissingTargetColumn(name.clone()))?,
            None => return Err(Error::MissingTargetColumn(name.clone())),
        },
    };
    if ncols < 2 {
        return Err(Error::Csv("need at least one input column and one target column".into()));
    }

    let column_label = |j: usize| -> String {
        match &header {
            Some(cols) => cols[j].clone(),
            None => format!("{}", j + 1),
        }
    };

    let n = data_rows.len();
    let dim = ncols - 1;
    let mut inputs = DMatrix::zeros(n, dim);
    let mut targets = DVector::zeros(n);
    for (i, rec) in data_rows.iter().enumerate() {
        if rec.len() != ncols {
            return Err(Error::Csv(format!(
                "row {} has {} fields, expected {}",
                i + 1,
                rec.len(),
                ncols
            )));
        }
        let mut col = 0;
        for (j, cell) in rec.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| Error::CsvCell {
                row: i + 1,
                column: column_label(j),
                detail: format!("non-numeric cell {:?}", cell),
            })?;
            if !value.is_finite() {
                return Err(Error::CsvCell {
                    row: i + 1,
                    column: column_label(j),
                    detail: format!("non-finite cell {:?}", cell),
                });
            }
            if j == target_idx {
                targets[i] = value;
            } else {
                inputs[(i, col)] = value;
                col += 1;
            }
        }
    }
    Ok(Dataset::new(inputs, targets))
}

/// Rescales inputs to [0, 1] per dimension and standardizes targets to zero
/// mean and unit sample standard deviation.
pub fn normalize(raw: &Dataset) -> Result<(Dataset, NormalizationRecord)> {
    let n = raw.len();
    if n < 2 {
        return Err(Error::EmptyDataset);
    }
    let mut input_offset = Vec::with_capacity(raw.dim);
    let mut input_scale = Vec::with_capacity(raw.dim);
    for j in 0..raw.dim {
        let col = raw.inputs.column(j);
        let min = col.min();
        let max = col.max();
        if max <= min {
            return Err(Error::ConstantInputDimension(j));
        }
        input_offset.push(min);
        input_scale.push(max - min);
    }

    let mean = raw.targets.mean();
    let var = raw.targets.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (n as f64 - 1.0);
    if var <= 0.0 {
        return Err(Error::ConstantTargets);
    }
    let sd = var.sqrt();

    let record = NormalizationRecord {
        input_offset,
        input_scale,
        target_offset: mean,
        target_scale: sd,
    };
    Ok((record.normalize_with(raw), record))
}

/// Frequency summary of a (normalized) dataset. Zero gaps from duplicate
/// coordinates are excluded from the mean gap.
pub fn summarize(d: &Dataset) -> Result<DataSummary> {
    let mut nyquist = Vec::with_capacity(d.dim);
    let mut window = Vec::with_capacity(d.dim);
    for j in 0..d.dim {
        let mut coords: Vec<f64> = d.inputs.column(j).iter().copied().collect();
        coords.sort_by(|a, b| a.total_cmp(b));
        coords.dedup();
        if coords.len() < 2 {
            return Err(Error::TooFewDistinctValues(j));
        }
        let span = coords[coords.len() - 1] - coords[0];
        let mean_gap = span / (coords.len() as f64 - 1.0);
        nyquist.push(0.5 / mean_gap);
        window.push(span);
    }
    Ok(DataSummary {
        nyquist,
        window,
        count: d.len(),
    })
}

/// Deterministic random partition into (train, test).
pub fn split(d: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidFraction(test_fraction));
    }
    let n = d.len();
    if n < 2 {
        return Err(Error::EmptyDataset);
    }
    let test_count = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let mut test_idx = indices[..test_count].to_vec();
    let mut train_idx = indices[test_count..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((d.select_rows(&train_idx), d.select_rows(&test_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_csv_with_header() {
        let f = write_csv("x,y\n0.0,1.0\n5.0,2.0\n10.0,3.0\n");
        let d = load_csv(f.path(), &TargetColumn::Name("y".into())).unwrap();
        assert_eq!(d.dim, 1);
        assert_eq!(d.len(), 3);
        assert_eq!(d.targets.as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(d.inputs[(1, 0)], 5.0);
    }

    #[test]
    fn nan_cell_is_reported_with_location() {
        let f = write_csv("x,y\n0.0,1.0\n5.0,NaN\n");
        let err = load_csv(f.path(), &TargetColumn::Name("y".into())).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2"), "{msg}");
        assert!(msg.contains("y"), "{msg}");
    }

    #[test]
    fn target_by_index_keeps_remaining_column_order() {
        let f = write_csv("1,10,100\n2,20,200\n3,30,300\n4,40,400\n5,50,500\n");
        let d = load_csv(f.path(), &TargetColumn::Index(0)).unwrap();
        assert_eq!(d.dim, 2);
        assert_eq!(d.len(), 5);
        assert_eq!(d.targets.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(d.inputs[(2, 0)], 30.0);
        assert_eq!(d.inputs[(2, 1)], 300.0);
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_csv(Path::new("/no/such/file.csv"), &TargetColumn::Index(0)).unwrap_err();
        assert!(err.to_string().contains("/no/such/file.csv"));
    }

    #[test]
    fn normalize_rescales_inputs_and_standardizes_targets() {
        let d = Dataset::new(
            DMatrix::from_column_slice(3, 1, &[0.0, 5.0, 10.0]),
            DVector::from_column_slice(&[1.0, 2.0, 3.0]),
        );
        let (norm, _) = normalize(&d).unwrap();
        assert_eq!(norm.inputs.column(0).as_slice(), &[0.0, 0.5, 1.0]);
        assert_relative_eq!(norm.targets.mean(), 0.0, epsilon = 1e-12);
        let sd = (norm.targets.iter().map(|y| y * y).sum::<f64>() / 2.0).sqrt();
        assert_relative_eq!(sd, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn two_point_targets_standardize_to_plus_minus_inv_sqrt2() {
        let d = Dataset::new(
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            DVector::from_column_slice(&[1.0, 3.0]),
        );
        let (norm, _) = normalize(&d).unwrap();
        assert_relative_eq!(norm.targets[0], -1.0 / 2.0f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(norm.targets[1], 1.0 / 2.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn normalize_round_trips() {
        let d = Dataset::new(
            DMatrix::from_column_slice(4, 2, &[1.0, 2.0, 3.0, 7.0, -1.0, 0.5, 2.5, 9.0]),
            DVector::from_column_slice(&[0.1, -4.0, 2.0, 8.0]),
        );
        let (norm, record) = normalize(&d).unwrap();
        let back = record.denormalize(&norm);
        for i in 0..d.len() {
            assert_relative_eq!(back.targets[i], d.targets[i], epsilon = 1e-9);
            for j in 0..d.dim {
                assert_relative_eq!(back.inputs[(i, j)], d.inputs[(i, j)], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn constant_input_dimension_is_an_error() {
        let d = Dataset::new(
            DMatrix::from_column_slice(3, 1, &[2.0, 2.0, 2.0]),
            DVector::from_column_slice(&[1.0, 2.0, 3.0]),
        );
        assert!(matches!(normalize(&d), Err(Error::ConstantInputDimension(0))));
    }

    #[test]
    fn summarize_evenly_spaced_grid() {
        let coords: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        let d = Dataset::new(
            DMatrix::from_column_slice(101, 1, &coords),
            DVector::from_element(101, 0.0),
        );
        let s = summarize(&d).unwrap();
        assert_relative_eq!(s.nyquist[0], 50.0, epsilon = 1e-9);
        assert_relative_eq!(s.window[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn summarize_irregular_coordinates() {
        let d = Dataset::new(
            DMatrix::from_column_slice(3, 1, &[0.0, 0.2, 1.0]),
            DVector::from_element(3, 0.0),
        );
        let s = summarize(&d).unwrap();
        assert_relative_eq!(s.nyquist[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn summarize_is_row_order_invariant() {
        let a = Dataset::new(
            DMatrix::from_column_slice(4, 1, &[0.3, 0.0, 1.0, 0.6]),
            DVector::from_element(4, 0.0),
        );
        let b = Dataset::new(
            DMatrix::from_column_slice(4, 1, &[1.0, 0.6, 0.0, 0.3]),
            DVector::from_element(4, 0.0),
        );
        assert_eq!(summarize(&a).unwrap().nyquist, summarize(&b).unwrap().nyquist);
    }

    #[test]
    fn summarize_ignores_duplicate_coordinates() {
        let d = Dataset::new(
            DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 0.5, 1.0]),
            DVector::from_element(4, 0.0),
        );
        let s = summarize(&d).unwrap();
        assert_relative_eq!(s.nyquist[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_deterministic() {
        let n = 10;
        let d = Dataset::new(
            DMatrix::from_fn(n, 1, |i, _| i as f64),
            DVector::from_fn(n, |i, _| i as f64 * 10.0),
        );
        let (train, test) = split(&d, 0.1, 42).unwrap();
        assert_eq!(train.len(), 9);
        assert_eq!(test.len(), 1);
        let mut all: Vec<f64> = train
            .inputs
            .column(0)
            .iter()
            .chain(test.inputs.column(0).iter())
            .copied()
            .collect();
        all.sort_by(|a, b| a.total_cmp(b));
        assert_eq!(all, (0..n).map(|i| i as f64).collect::<Vec<_>>());

        let (train2, test2) = split(&d, 0.1, 42).unwrap();
        assert_eq!(train.inputs, train2.inputs);
        assert_eq!(test.inputs, test2.inputs);
    }

    #[test]
    fn different_seeds_give_different_partitions() {
        let n = 40;
        let d = Dataset::new(
            DMatrix::from_fn(n, 1, |i, _| i as f64),
            DVector::from_fn(n, |i, _| i as f64),
        );
        let (_, test_a) = split(&d, 0.25, 1).unwrap();
        let (_, test_b) = split(&d, 0.25, 2).unwrap();
        assert_ne!(test_a.inputs, test_b.inputs);
    }

    #[test]
    fn bad_fraction_is_rejected() {
        let d = Dataset::new(DMatrix::zeros(3, 1), DVector::zeros(3));
        assert!(matches!(split(&d, 0.0, 1), Err(Error::InvalidFraction(_))));
        assert!(matches!(split(&d, 1.0, 1), Err(Error::InvalidFraction(_))));
    }
}
