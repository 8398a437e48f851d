//! Label-free frame scorers that supply the starting point of the reverse chain.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::seq::index::sample;

use crate::dataset::{FrameFeatures, VideoRecord};
use crate::diffusion::RawScores;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

pub const DEFAULT_WINDOW: usize = 10;
/// Extension of per-video score files inside an external score directory.
pub const SCORE_FILE_EXT: &str = "txt";
const DEGENERATE_RANGE: f64 = 1e-9;
const MEDOID_ITERATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub enum ScorerSpec {
    /// Representativeness (k-medoids coverage) plus temporal uniqueness.
    RepDiv {
        /// Kernel bandwidth for `exp(-d² / bandwidth)`. `None` uses the mean
        /// nearest-medoid squared distance of the video.
        bandwidth: Option<f64>,
        window: usize,
        seed: u64,
    },
    Constant(f64),
    /// Returns annotation `k` of the video unchanged. For tests and oracle runs.
    OracleFromAnnotation(usize),
    /// Reads `<dir>/<video id>.txt` in the score-file format.
    ExternalFile(PathBuf),
}

impl Default for ScorerSpec {
    fn default() -> Self {
        ScorerSpec::RepDiv {
            bandwidth: None,
            window: DEFAULT_WINDOW,
            seed: 0,
        }
    }
}

impl ScorerSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ScorerSpec::RepDiv { bandwidth, window, .. } => {
                if let Some(b) = bandwidth {
                    if !(*b > 0.0 && b.is_finite()) {
                        return Err(Error::Config(format!("repdiv bandwidth must be positive, got {b}")));
                    }
                }
                if *window == 0 {
                    return Err(Error::Config("repdiv window must be at least 1".into()));
                }
                Ok(())
            }
            ScorerSpec::Constant(c) => {
                if (0.0..=1.0).contains(c) {
                    Ok(())
                } else {
                    Err(Error::Config(format!("constant score must lie in [0, 1], got {c}")))
                }
            }
            ScorerSpec::OracleFromAnnotation(_) => Ok(()),
            ScorerSpec::ExternalFile(dir) => {
                if dir.as_os_str().is_empty() {
                    Err(Error::Config("external_file scorer needs a directory".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Same scorer with its seed replaced, where the kind has one.
    pub fn with_seed(&self, seed: u64) -> Self {
        match self {
            ScorerSpec::RepDiv { bandwidth, window, .. } => ScorerSpec::RepDiv {
                bandwidth: *bandwidth,
                window: *window,
                seed,
            },
            other => other.clone(),
        }
    }
}

/// Accepted forms: `repdiv_baseline[:key=value,...]` (keys `bandwidth`,
/// `window`, `seed`), `constant:C`, `oracle_from_annotation:K`,
/// `external_file:DIR`. `repdiv`, `oracle` and `file` are short aliases.
impl FromStr for ScorerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let need = |what: &str| {
            arg.filter(|a| !a.is_empty())
                .ok_or_else(|| Error::Config(format!("scorer `{kind}` needs {what}")))
        };
        let spec = match kind {
            "repdiv_baseline" | "repdiv" => {
                let (mut bandwidth, mut window, mut seed) = (None, DEFAULT_WINDOW, 0u64);
                for part in arg.unwrap_or("").split(',').filter(|p| !p.trim().is_empty()) {
                    let (key, value) = part
                        .split_once('=')
                        .ok_or_else(|| Error::Config(format!("repdiv option `{part}` is not key=value")))?;
                    let value = value.trim();
                    let bad = || Error::Config(format!("repdiv option `{part}` has an invalid value"));
                    match key.trim() {
                        "bandwidth" => bandwidth = Some(value.parse().map_err(|_| bad())?),
                        "window" => window = value.parse().map_err(|_| bad())?,
                        "seed" => seed = value.parse().map_err(|_| bad())?,
                        other => return Err(Error::Config(format!("unknown repdiv option `{other}`"))),
                    }
                }
                ScorerSpec::RepDiv { bandwidth, window, seed }
            }
            "constant" => {
                let c = need("a value")?;
                ScorerSpec::Constant(
                    c.parse()
                        .map_err(|_| Error::Config(format!("constant scorer value `{c}` is not a number")))?,
                )
            }
            "oracle_from_annotation" | "oracle" => {
                let k = need("an annotator index")?;
                ScorerSpec::OracleFromAnnotation(
                    k.parse()
                        .map_err(|_| Error::Config(format!("annotator index `{k}` is not an integer")))?,
                )
            }
            "external_file" | "file" => ScorerSpec::ExternalFile(PathBuf::from(need("a directory")?)),
            other => return Err(Error::Config(format!("unknown scorer kind `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for ScorerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScorerSpec::RepDiv { bandwidth, window, seed } => {
                write!(f, "repdiv_baseline:")?;
                if let Some(b) = bandwidth {
                    write!(f, "bandwidth={b},")?;
                }
                write!(f, "window={window},seed={seed}")
            }
            ScorerSpec::Constant(c) => write!(f, "constant:{c}"),
            ScorerSpec::OracleFromAnnotation(k) => write!(f, "oracle_from_annotation:{k}"),
            ScorerSpec::ExternalFile(dir) => write!(f, "external_file:{}", dir.display()),
        }
    }
}

/// Scores every frame of `video` with the configured scorer.
pub fn score_video(spec: &ScorerSpec, video: &VideoRecord) -> Result<RawScores> {
    let n = video.n_frames();
    if n == 0 {
        return Err(Error::data(&video.id, "cannot score an empty video"));
    }
    let scores = match spec {
        ScorerSpec::RepDiv { bandwidth, window, seed } => {
            repdiv_scores(&video.features, *bandwidth, *window, derive_seed(*seed, &video.id))?
        }
        ScorerSpec::Constant(c) => {
            spec.validate()?;
            RawScores::new(vec![*c; n])?
        }
        ScorerSpec::OracleFromAnnotation(k) => video
            .annotations
            .get(*k)
            .cloned()
            .ok_or_else(|| {
                Error::data(
                    &video.id,
                    format!("oracle annotator {k} missing ({} annotations)", video.annotations.len()),
                )
            })?,
        ScorerSpec::ExternalFile(dir) => {
            let path = score_file_path(dir, &video.id);
            let (id, scores) = read_score_file(&path)?;
            if id != video.id {
                return Err(Error::data(
                    &video.id,
                    format!("score file {} is labelled `{id}`", path.display()),
                ));
            }
            scores
        }
    };
    if scores.len() != n {
        return Err(Error::data(
            &video.id,
            format!("scorer produced {} scores for {n} frames", scores.len()),
        ));
    }
    Ok(scores)
}

/// Training-free baseline: `0.5·norm(r) + 0.5·norm(u)`, min-max normalized.
pub fn repdiv_scores(
    features: &FrameFeatures,
    bandwidth: Option<f64>,
    window: usize,
    seed: u64,
) -> Result<RawScores> {
    let n = features.n_frames();
    if n == 0 {
        return Err(Error::Parameter("cannot score an empty feature sequence".into()));
    }
    let r = min_max(&representativeness(features, bandwidth, seed));
    let u = min_max(&uniqueness(features, window));
    let combined: Vec<f64> = r.iter().zip(&u).map(|(r, u)| 0.5 * r + 0.5 * u).collect();
    Ok(RawScores::clamped(&min_max(&combined)))
}

/// `r_i = exp(-min_m ||f_i - f_m||² / bandwidth)` over k-medoids with `k = max(2, n/20)`.
pub fn representativeness(features: &FrameFeatures, bandwidth: Option<f64>, seed: u64) -> Vec<f64> {
    let n = features.n_frames();
    let dist = squared_distances(features);
    let k = (n / 20).max(2).min(n);
    let medoids = k_medoids(&dist, k, seed);
    let nearest: Vec<f64> = (0..n)
        .map(|i| medoids.iter().map(|&m| dist[[i, m]]).fold(f64::INFINITY, f64::min))
        .collect();
    let h = bandwidth.unwrap_or_else(|| {
        let mean = nearest.iter().sum::<f64>() / n as f64;
        if mean > 0.0 {
            mean
        } else {
            1.0
        }
    });
    nearest.iter().map(|d| (-d / h).exp()).collect()
}

/// `u_i = 1 - mean cosine similarity to frames within ±window` (excluding `i`).
pub fn uniqueness(features: &FrameFeatures, window: usize) -> Vec<f64> {
    let n = features.n_frames();
    let norms: Vec<f64> = (0..n).map(|i| norm(features.row(i))).collect();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(n - 1);
            let mut total = 0.0;
            let mut count = 0usize;
            for j in lo..=hi {
                if j == i {
                    continue;
                }
                let denom = norms[i] * norms[j];
                if denom > 0.0 {
                    total += features.row(i).dot(&features.row(j)) / denom;
                }
                count += 1;
            }
            if count == 0 {
                0.0
            } else {
                1.0 - total / count as f64
            }
        })
        .collect()
}

fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

fn squared_distances(features: &FrameFeatures) -> Array2<f64> {
    let n = features.n_frames();
    let mut dist = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = &features.row(i) - &features.row(j);
            let d = diff.dot(&diff);
            dist[[i, j]] = d;
            dist[[j, i]] = d;
        }
    }
    dist
}

/// Alternating k-medoids from a seeded random start. Returns sorted medoid indices.
fn k_medoids(dist: &Array2<f64>, k: usize, seed: u64) -> Vec<usize> {
    let n = dist.nrows();
    let mut rng = seeded(seed);
    let mut medoids: Vec<usize> = sample(&mut rng, n, k).into_vec();
    medoids.sort_unstable();
    for _ in 0..MEDOID_ITERATIONS {
        let assign: Vec<usize> = (0..n)
            .map(|i| {
                let mut best = 0;
                for (c, &m) in medoids.iter().enumerate() {
                    if dist[[i, m]] < dist[[i, medoids[best]]] {
                        best = c;
                    }
                }
                best
            })
            .collect();
        let mut next = medoids.clone();
        for (c, slot) in next.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            let cost = |cand: usize| members.iter().map(|&i| dist[[cand, i]]).sum::<f64>();
            let mut best = *slot;
            let mut best_cost = cost(best);
            for &cand in &members {
                let c = cost(cand);
                if c < best_cost {
                    best = cand;
                    best_cost = c;
                }
            }
            *slot = best;
        }
        next.sort_unstable();
        next.dedup();
        if next == medoids {
            break;
        }
        if next.len() < k {
            // Two clusters collapsed onto one medoid; keep the previous set.
            break;
        }
        medoids = next;
    }
    medoids
}

/// Min-max normalization; a range below 1e-9 maps every entry to 0.5.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo >= DEGENERATE_RANGE) {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

pub fn score_file_path(dir: &Path, video_id: &str) -> PathBuf {
    dir.join(format!("{video_id}.{SCORE_FILE_EXT}"))
}

/// Header `# <id> <n_frames>`, then one score per line at f32 precision.
pub fn format_score_file(video_id: &str, scores: &RawScores) -> String {
    let mut out = format!("# {video_id} {}\n", scores.len());
    for v in scores.values() {
        let _ = writeln!(out, "{}", *v as f32);
    }
    out
}

pub fn write_score_file(path: &Path, video_id: &str, scores: &RawScores) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, format_score_file(video_id, scores)).map_err(|e| Error::io(path, e))
}

pub fn read_score_file(path: &Path) -> Result<(String, RawScores)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_score_file(&text).map_err(|message| Error::Data {
        video: path.display().to_string(),
        message,
    })
}

fn parse_score_file(text: &str) -> std::result::Result<(String, RawScores), String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty score file")?;
    let mut parts = header
        .strip_prefix('#')
        .ok_or("missing `# <id> <n_frames>` header")?
        .split_whitespace();
    let (id, count) = match (parts.next(), parts.next(), parts.next()) {
        (Some(id), Some(count), None) => (id.to_string(), count),
        _ => return Err("header must be `# <id> <n_frames>`".into()),
    };
    let n: usize = count
        .parse()
        .map_err(|_| format!("frame count `{count}` is not an integer"))?;
    let mut values = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f32 = line
            .parse()
            .map_err(|_| format!("line {}: `{line}` is not a number", i + 2))?;
        values.push(v as f64);
    }
    if values.len() != n {
        return Err(format!("header declares {n} frames but {} scores follow", values.len()));
    }
    let scores = RawScores::new_with_context(values, format!("score file for `{id}`"))
        .map_err(|e| e.to_string())?;
    Ok((id, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn feats(rows: Vec<Vec<f64>>) -> FrameFeatures {
        FrameFeatures::from_rows(&rows).unwrap()
    }

    #[test]
    fn identical_frames_are_degenerate() {
        let f = feats(vec![vec![0.3, -1.0, 2.0]; 17]);
        let s = repdiv_scores(&f, None, 10, 4).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn repdiv_in_range_and_deterministic() {
        let n = 45;
        let m = Array2::from_shape_fn((n, 6), |(i, j)| ((i * 7 + j * 3) as f64).sin() + (i / 9) as f64);
        let f = FrameFeatures::new(m);
        let a = repdiv_scores(&f, None, 10, 11).unwrap();
        let b = repdiv_scores(&f, None, 10, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), n);
        assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let lo = a.values().iter().cloned().fold(1.0, f64::min);
        let hi = a.values().iter().cloned().fold(0.0, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn single_frame_is_scored() {
        let f = feats(vec![vec![1.0, 2.0]]);
        assert_eq!(repdiv_scores(&f, None, 10, 0).unwrap().values(), &[0.5]);
    }

    #[test]
    fn rare_cluster_is_more_unique() {
        // 20 frames, frames 9 and 10 come from a second, orthogonal cluster.
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| if i == 9 || i == 10 { vec![0.0, 1.0] } else { vec![1.0, 0.0] })
            .collect();
        let u = uniqueness(&feats(rows.clone()), 10);
        // Direct computation with window ±10 and cosine = 1 within a cluster, 0 across.
        let expected: Vec<f64> = (0..20usize)
            .map(|i| {
                let lo = i.saturating_sub(10);
                let hi = (i + 10).min(19);
                let rare = |k: usize| k == 9 || k == 10;
                let same = (lo..=hi).filter(|&j| j != i && rare(j) == rare(i)).count();
                let total = hi - lo;
                1.0 - same as f64 / total as f64
            })
            .collect();
        for i in 0..20 {
            assert!((u[i] - expected[i]).abs() < 1e-12, "frame {i}");
        }
        assert!((u[9] - 18.0 / 19.0).abs() < 1e-12);
        let common_max = (0..20).filter(|&i| i != 9 && i != 10).map(|i| u[i]).fold(0.0, f64::max);
        assert!(u[9] > common_max && u[10] > common_max);
    }

    #[test]
    fn parse_and_display() {
        let s: ScorerSpec = "constant:0.5".parse().unwrap();
        assert_eq!(s, ScorerSpec::Constant(0.5));
        let s: ScorerSpec = "repdiv:window=4,seed=9,bandwidth=2.5".parse().unwrap();
        assert_eq!(
            s,
            ScorerSpec::RepDiv {
                bandwidth: Some(2.5),
                window: 4,
                seed: 9
            }
        );
        assert_eq!(s.to_string().parse::<ScorerSpec>().unwrap(), s);
        assert_eq!("oracle:2".parse::<ScorerSpec>().unwrap(), ScorerSpec::OracleFromAnnotation(2));
        assert_eq!("repdiv_baseline".parse::<ScorerSpec>().unwrap(), ScorerSpec::default());
        assert!("constant:1.5".parse::<ScorerSpec>().is_err());
        assert!("constant".parse::<ScorerSpec>().is_err());
        assert!("mystery".parse::<ScorerSpec>().is_err());
        assert!("repdiv:window=0".parse::<ScorerSpec>().is_err());
        assert!("repdiv:depth=3".parse::<ScorerSpec>().is_err());
    }

    #[test]
    fn score_file_text() {
        let s = RawScores::new(vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(format_score_file("v1", &s), "# v1 3\n0\n0.25\n1\n");
        let (id, back) = parse_score_file("# v1 3\n0\n0.25\n1\n").unwrap();
        assert_eq!((id.as_str(), back), ("v1", s));
        assert!(parse_score_file("# v1 4\n0\n0.25\n1\n").is_err());
        assert!(parse_score_file("v1 3\n0\n").is_err());
        assert!(parse_score_file("# v1 1\n1.5\n").is_err());
        assert!(parse_score_file("# v1 1\nabc\n").is_err());
    }

    proptest::proptest! {
        #[test]
        fn score_file_roundtrip_at_f32(values in proptest::collection::vec(0.0f64..=1.0, 1..64)) {
            let s = RawScores::new(values.clone()).unwrap();
            let (_, back) = parse_score_file(&format_score_file("clip", &s)).unwrap();
            for (a, b) in values.iter().zip(back.values()) {
                proptest::prop_assert_eq!(*a as f32, *b as f32);
            }
        }
    }
}
