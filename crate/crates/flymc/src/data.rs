//! Dense datasets and their CSV interchange format.
//!
//! A dataset is `N` feature rows of width `D` plus one target per row. The
//! target column is family-specific: labels in `{-1, +1}` for logistic
//! models, class ids `1..=K` for softmax, real values for regression.
//! Family-level validation lives with the model; this module only enforces
//! shape and finiteness.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::{Error, Result};

/// Immutable design matrix plus targets.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Array2<f64>,
    targets: Array1<f64>,
    n_classes: Option<usize>,
}

impl Dataset {
    /// Builds a dataset, checking shapes and finiteness. `n_classes` is
    /// required for class-id targets and must be at least 2.
    pub fn new(
        features: Array2<f64>,
        targets: Array1<f64>,
        n_classes: Option<usize>,
    ) -> Result<Self> {
        if features.nrows() != targets.len() {
            return Err(Error::Dataset(format!(
                "{} feature rows but {} targets",
                features.nrows(),
                targets.len()
            )));
        }
        if let Some(k) = n_classes {
            if k < 2 {
                return Err(Error::Dataset(format!("n_classes must be >= 2, got {k}")));
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "dataset features" });
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "dataset targets" });
        }
        Ok(Self { features, targets, n_classes })
    }

    pub fn n_points(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.n_classes
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn targets(&self) -> ArrayView1<'_, f64> {
        self.targets.view()
    }

    /// Feature row `n`. Callers indexing from untrusted input should check
    /// against [`Self::n_points`] first; this panics like slice indexing.
    pub fn feature_row(&self, n: usize) -> ArrayView1<'_, f64> {
        self.features.row(n)
    }

    pub fn target(&self, n: usize) -> f64 {
        self.targets[n]
    }

    /// Reads the `f0,..,f{D-1},target` CSV format written by [`Self::to_csv`].
    pub fn from_csv(path: impl AsRef<Path>, n_classes: Option<usize>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path.as_ref())?;

        let header = reader.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::Dataset(format!(
                "expected at least one feature column and a target column, got {} columns",
                header.len()
            )));
        }
        let d = header.len() - 1;
        for (i, name) in header.iter().take(d).enumerate() {
            let expected = format!("f{i}");
            if name != expected {
                return Err(Error::Dataset(format!(
                    "column {i} is named {name:?}, expected {expected:?}"
                )));
            }
        }
        if header.iter().nth(d) != Some("target") {
            return Err(Error::Dataset("last column must be named \"target\"".into()));
        }

        let mut features = Vec::new();
        let mut targets = Vec::new();
        for (row_idx, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != d + 1 {
                return Err(Error::Dataset(format!(
                    "row {row_idx} has {} fields, expected {}",
                    record.len(),
                    d + 1
                )));
            }
            for (col, field) in record.iter().enumerate() {
                let value: f64 = field.parse().map_err(|_| {
                    Error::Dataset(format!("row {row_idx}, column {col}: unparseable value {field:?}"))
                })?;
                if col < d {
                    features.push(value);
                } else {
                    targets.push(value);
                }
            }
        }

        let n = targets.len();
        let features = Array2::from_shape_vec((n, d), features)
            .expect("row-major feature buffer matches (n, d)");
        Self::new(features, Array1::from_vec(targets), n_classes)
    }

    /// Writes the dataset as CSV with header `f0,..,f{D-1},target`. Values
    /// use shortest-roundtrip formatting, so write/read is lossless.
    pub fn to_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path.as_ref())?;
        let d = self.n_features();
        let mut header: Vec<String> = (0..d).map(|i| format!("f{i}")).collect();
        header.push("target".into());
        writer.write_record(&header)?;
        let mut row_buf: Vec<String> = Vec::with_capacity(d + 1);
        for n in 0..self.n_points() {
            row_buf.clear();
            row_buf.extend(self.feature_row(n).iter().map(|v| v.to_string()));
            row_buf.push(self.target(n).to_string());
            writer.write_record(&row_buf)?;
        }
        writer.flush()?;
        Ok(())
    }
}
