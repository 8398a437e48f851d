//! Video records, the on-disk JSON dataset format, split manifests and the
//! synthetic multi-annotator benchmark.

mod io;
mod splits;
mod synthetic;

use ndarray::{Array2, ArrayView1};

use crate::diffusion::RawScores;
use crate::error::{Error, Result};
use crate::summarize::ShotSegmentation;

pub use io::{load_dataset, load_datasets, write_dataset, Dataset, DatasetManifest, MANIFEST_FILE};
pub use splits::{make_splits, SplitManifest, SplitSetting};
pub use synthetic::{generate_synthetic, ImportanceProfile, SyntheticSpec};

/// Row-major `n_frames × d_feature` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures(Array2<f64>);

impl FrameFeatures {
    pub fn new(matrix: Array2<f64>) -> Self {
        Self(matrix)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::shape(format!("feature row {i}"), d, row.len()));
            }
            data.extend_from_slice(row);
        }
        let matrix = Array2::from_shape_vec((n, d), data).expect("row lengths checked");
        Ok(Self(matrix))
    }

    pub fn n_frames(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    /// Frames reordered so that output row `i` is input row `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self(self.0.select(ndarray::Axis(0), order))
    }
}

/// One video: features, per-annotator scores, shots and optional user summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub features: FrameFeatures,
    pub annotations: Vec<RawScores>,
    pub change_points: ShotSegmentation,
    pub user_summaries: Option<Vec<Vec<bool>>>,
    pub n_frames_original: usize,
    pub picks: Option<Vec<usize>>,
    /// Ground-truth curve of synthetic videos.
    pub planted_truth: Option<RawScores>,
}

impl VideoRecord {
    pub fn n_frames(&self) -> usize {
        self.features.n_frames()
    }

    /// Checks every cross-field invariant, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_frames();
        let fail = |msg: String| Err(Error::data(&self.id, msg));
        if n == 0 {
            return fail("no frames".into());
        }
        if self.annotations.is_empty() {
            return fail("no annotations".into());
        }
        for (k, a) in self.annotations.iter().enumerate() {
            if a.len() != n {
                return fail(format!("annotation {k} has {} frames, expected {n}", a.len()));
            }
        }
        if self.change_points.n_frames() != n {
            return fail(format!(
                "change_points cover {} frames, expected {n}",
                self.change_points.n_frames()
            ));
        }
        if let Some(users) = &self.user_summaries {
            for (k, u) in users.iter().enumerate() {
                if u.len() != n {
                    return fail(format!("user_summaries[{k}] has {} frames, expected {n}", u.len()));
                }
            }
        }
        if let Some(picks) = &self.picks {
            if picks.len() != n {
                return fail(format!("picks has {} entries, expected {n}", picks.len()));
            }
        }
        if let Some(truth) = &self.planted_truth {
            if truth.len() != n {
                return fail(format!("planted_truth has {} frames, expected {n}", truth.len()));
            }
        }
        if self.features.matrix().iter().any(|v| !v.is_finite()) {
            return fail("features contain a non-finite value".into());
        }
        Ok(())
    }

    /// Per-frame mean over annotators. Used for plots and reports only.
    pub fn annotation_mean(&self) -> Vec<f64> {
        let n = self.n_frames();
        let k = self.annotations.len() as f64;
        (0..n)
            .map(|i| self.annotations.iter().map(|a| a.values()[i]).sum::<f64>() / k)
            .collect()
    }
}
