use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FrameFeatures, VideoRecord};
use crate::diffusion::RawScores;
use crate::error::{Error, Result};
use crate::summarize::ShotSegmentation;

pub const MANIFEST_FILE: &str = "manifest.json";

/// `manifest.json` at the root of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub d_feature: usize,
    pub videos: Vec<String>,
}

/// A loaded dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub d_feature: usize,
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    pub fn ids(&self) -> Vec<String> {
        self.videos.iter().map(|v| v.id.clone()).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct VideoFile {
    id: String,
    n_frames_original: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    picks: Option<Vec<usize>>,
    features: Vec<Vec<f32>>,
    annotations: Vec<Vec<f64>>,
    change_points: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    user_summaries: Option<Vec<Vec<u8>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    planted_truth: Option<Vec<f64>>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn video_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.json"))
}

fn record_from_file(file: VideoFile, d_feature: usize) -> Result<VideoRecord> {
    let id = file.id;
    let n = file.features.len();
    for (i, row) in file.features.iter().enumerate() {
        if row.len() != d_feature {
            return Err(Error::data(
                &id,
                format!("features[{i}] has {} values, manifest d_feature is {d_feature}", row.len()),
            ));
        }
    }
    let rows: Vec<Vec<f64>> = file
        .features
        .iter()
        .map(|r| r.iter().map(|v| f64::from(*v)).collect())
        .collect();
    let features = FrameFeatures::from_rows(&rows)?;

    let annotations = file
        .annotations
        .into_iter()
        .enumerate()
        .map(|(k, a)| {
            if a.len() != n {
                return Err(Error::data(
                    &id,
                    format!("annotations[{k}] has {} frames, expected {n}", a.len()),
                ));
            }
            RawScores::new_with_context(a, format!("video `{id}` annotation {k}"))
        })
        .collect::<Result<Vec<_>>>()?;

    let change_points = ShotSegmentation::new(file.change_points, n)
        .map_err(|e| Error::data(&id, format!("change_points: {e}")))?;

    let user_summaries = file
        .user_summaries
        .map(|users| {
            users
                .into_iter()
                .enumerate()
                .map(|(k, mask)| {
                    mask.into_iter()
                        .map(|b| match b {
                            0 => Ok(false),
                            1 => Ok(true),
                            other => Err(Error::data(
                                &id,
                                format!("user_summaries[{k}] contains {other}, expected 0 or 1"),
                            )),
                        })
                        .collect::<Result<Vec<bool>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;

    let planted_truth = file
        .planted_truth
        .map(|t| RawScores::new_with_context(t, format!("video `{id}` planted_truth")))
        .transpose()?;

    let record = VideoRecord {
        id,
        features,
        annotations,
        change_points,
        user_summaries,
        n_frames_original: file.n_frames_original,
        picks: file.picks,
        planted_truth,
    };
    record.validate()?;
    Ok(record)
}

/// Loads and validates a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest: DatasetManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let mut seen = HashSet::new();
    let mut videos = Vec::with_capacity(manifest.videos.len());
    for id in &manifest.videos {
        if !seen.insert(id.clone()) {
            return Err(Error::data(id, "duplicate video id in manifest"));
        }
        let file: VideoFile = read_json(&video_path(dir, id))?;
        if &file.id != id {
            return Err(Error::data(id, format!("file declares id `{}`", file.id)));
        }
        videos.push(record_from_file(file, manifest.d_feature)?);
    }
    Ok(Dataset {
        name: manifest.name,
        d_feature: manifest.d_feature,
        videos,
    })
}

/// Loads several dataset directories, rejecting ids that appear in more than one.
pub fn load_datasets<P: AsRef<Path>>(dirs: &[P]) -> Result<Vec<Dataset>> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let ds = load_dataset(dir)?;
        for v in &ds.videos {
            if !seen.insert(v.id.clone()) {
                return Err(Error::data(&v.id, "video id appears in more than one dataset"));
            }
        }
        out.push(ds);
    }
    Ok(out)
}

/// Writes the canonical directory layout. Features are stored at f32 precision.
pub fn write_dataset(dir: impl AsRef<Path>, name: &str, videos: &[VideoRecord]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d_feature = videos.first().map_or(0, |v| v.features.dim());
    for video in videos {
        video.validate()?;
        if video.features.dim() != d_feature {
            return Err(Error::data(&video.id, "feature width differs from the first video"));
        }
        let file = VideoFile {
            id: video.id.clone(),
            n_frames_original: video.n_frames_original,
            picks: video.picks.clone(),
            features: video
                .features
                .matrix()
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|v| *v as f32).collect())
                .collect(),
            annotations: video.annotations.iter().map(|a| a.values().to_vec()).collect(),
            change_points: video.change_points.shots().to_vec(),
            user_summaries: video
                .user_summaries
                .as_ref()
                .map(|u| u.iter().map(|m| m.iter().map(|b| u8::from(*b)).collect()).collect()),
            planted_truth: video.planted_truth.as_ref().map(|t| t.values().to_vec()),
        };
        write_json(&video_path(dir, &video.id), &file)?;
    }
    let manifest = DatasetManifest {
        name: name.to_string(),
        d_feature,
        videos: videos.iter().map(|v| v.id.clone()).collect(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}
