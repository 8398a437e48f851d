//! Shot aggregation and budgeted 0/1 knapsack selection.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diffusion::RawScores;
use crate::error::{Error, Result};

/// Default summary length as a fraction of the video.
pub const DEFAULT_SUMMARY_RATIO: f64 = 0.15;

/// Ordered `[start, end)` shots that partition `0..n_frames`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShotSegmentation(Vec<[usize; 2]>);

impl ShotSegmentation {
    /// Validates that the intervals are non-empty, contiguous and cover `0..n_frames`.
    pub fn new(boundaries: Vec<[usize; 2]>, n_frames: usize) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(Error::Partition("no shots".into()));
        }
        let mut expected_start = 0;
        for (i, [start, end]) in boundaries.iter().copied().enumerate() {
            if start != expected_start {
                return Err(Error::Partition(format!(
                    "shot {i} starts at {start}, expected {expected_start} (gap or overlap)"
                )));
            }
            if end <= start {
                return Err(Error::Partition(format!("shot {i} is empty: [{start}, {end})")));
            }
            expected_start = end;
        }
        if expected_start != n_frames {
            return Err(Error::Partition(format!(
                "shots cover 0..{expected_start} but the video has {n_frames} frames"
            )));
        }
        Ok(Self(boundaries))
    }

    /// Shots of the given lengths laid end to end.
    pub fn from_lengths(lengths: &[usize]) -> Result<Self> {
        let mut start = 0;
        let mut boundaries = Vec::with_capacity(lengths.len());
        for len in lengths {
            boundaries.push([start, start + len]);
            start += len;
        }
        Self::new(boundaries, start)
    }

    pub fn shots(&self) -> &[[usize; 2]] {
        &self.0
    }

    pub fn n_shots(&self) -> usize {
        self.0.len()
    }

    pub fn n_frames(&self) -> usize {
        self.0.last().map_or(0, |s| s[1])
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.0.iter().map(|[s, e]| e - s).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummarySelection {
    pub selected: Vec<bool>,
    pub frame_mask: Vec<bool>,
    pub budget_frames: usize,
    pub total_value: f64,
}

impl SummarySelection {
    pub fn selected_indices(&self) -> Vec<usize> {
        self.selected
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.then_some(i))
            .collect()
    }

    /// Text block with the selected shot intervals and a run-length encoded frame mask.
    pub fn dump(&self, video_id: &str, seg: &ShotSegmentation) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "video {video_id}");
        let _ = writeln!(
            out,
            "budget_frames {} selected_frames {} total_value {}",
            self.budget_frames,
            self.frame_mask.iter().filter(|m| **m).count(),
            self.total_value
        );
        let shots: Vec<String> = self
            .selected_indices()
            .into_iter()
            .map(|i| {
                let [s, e] = seg.shots()[i];
                format!("{s}-{e}")
            })
            .collect();
        let _ = writeln!(out, "shots {}", shots.join(" "));
        let _ = writeln!(out, "mask_rle {}", run_length(&self.frame_mask));
        out
    }
}

fn run_length(mask: &[bool]) -> String {
    let mut runs: Vec<String> = Vec::new();
    let mut iter = mask.iter().peekable();
    while let Some(&bit) = iter.next() {
        let mut count = 1;
        while iter.peek() == Some(&&bit) {
            iter.next();
            count += 1;
        }
        runs.push(format!("{}:{count}", u8::from(bit)));
    }
    runs.join(" ")
}

/// Mean frame score of every shot.
pub fn shot_scores(frame_scores: &RawScores, seg: &ShotSegmentation) -> Result<Vec<f64>> {
    if seg.n_frames() != frame_scores.len() {
        return Err(Error::Partition(format!(
            "segmentation covers {} frames, scores have {}",
            seg.n_frames(),
            frame_scores.len()
        )));
    }
    let values = frame_scores.values();
    Ok(seg
        .shots()
        .iter()
        .map(|&[s, e]| values[s..e].iter().sum::<f64>() / (e - s) as f64)
        .collect())
}

/// Exact 0/1 knapsack by dynamic programming over capacities.
///
/// Among optimal selections, earlier shots are preferred: shot `i` is taken
/// whenever some optimal completion of the choices for shots `0..i` includes it.
pub fn knapsack_select(values: &[f64], lengths: &[usize], budget_frames: usize) -> Result<SummarySelection> {
    if values.len() != lengths.len() {
        return Err(Error::shape("knapsack lengths", values.len(), lengths.len()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("knapsack value for shot {i}")));
    }
    let n = values.len();
    let width = budget_frames + 1;
    // best[i * width + w]: optimum over shots i.. with capacity w
    let mut best = vec![0.0f64; (n + 1) * width];
    for i in (0..n).rev() {
        let (head, tail) = best.split_at_mut((i + 1) * width);
        let row = &mut head[i * width..];
        let next = &tail[..width];
        for w in 0..width {
            let skip = next[w];
            row[w] = if lengths[i] <= w {
                skip.max(values[i] + next[w - lengths[i]])
            } else {
                skip
            };
        }
    }

    let mut selected = vec![false; n];
    let mut w = budget_frames;
    let mut total = 0.0;
    for i in 0..n {
        if lengths[i] > w {
            continue;
        }
        let take = values[i] + best[(i + 1) * width + w - lengths[i]];
        let skip = best[(i + 1) * width + w];
        let tol = 1e-12 * (1.0 + skip.abs());
        if take >= skip - tol {
            selected[i] = true;
            total += values[i];
            w -= lengths[i];
        }
    }

    Ok(SummarySelection {
        selected,
        frame_mask: Vec::new(),
        budget_frames,
        total_value: total,
    })
}

/// Shot scores, knapsack at `floor(ratio * n_frames)`, and the resulting frame mask.
pub fn summarize_video(frame_scores: &RawScores, seg: &ShotSegmentation, ratio: f64) -> Result<SummarySelection> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Parameter(format!("summary ratio must be in (0, 1], got {ratio}")));
    }
    let values = shot_scores(frame_scores, seg)?;
    let budget = (ratio * seg.n_frames() as f64).floor() as usize;
    let mut selection = knapsack_select(&values, &seg.lengths(), budget)?;
    let mut mask = vec![false; seg.n_frames()];
    for i in selection.selected_indices() {
        let [s, e] = seg.shots()[i];
        mask[s..e].fill(true);
    }
    selection.frame_mask = mask;
    Ok(selection)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shot_means() {
        let scores = RawScores::new(vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let seg = ShotSegmentation::new(vec![[0, 2], [2, 4]], 4).unwrap();
        assert_eq!(shot_scores(&scores, &seg).unwrap(), vec![1.0, 0.0]);
        let whole = ShotSegmentation::new(vec![[0, 4]], 4).unwrap();
        let scores = RawScores::new(vec![0.1, 0.2, 0.6, 0.3]).unwrap();
        let got = shot_scores(&scores, &whole).unwrap();
        assert!((got[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn partition_validation() {
        assert!(ShotSegmentation::new(vec![[0, 3], [2, 5]], 5).is_err());
        assert!(ShotSegmentation::new(vec![[0, 2], [3, 5]], 5).is_err());
        assert!(ShotSegmentation::new(vec![[0, 2], [2, 2], [2, 5]], 5).is_err());
        assert!(ShotSegmentation::new(vec![[0, 2], [2, 4]], 5).is_err());
        assert!(ShotSegmentation::new(vec![], 0).is_err());
        let seg = ShotSegmentation::new(vec![[0, 2], [2, 4]], 4).unwrap();
        let scores = RawScores::new(vec![0.0; 5]).unwrap();
        assert!(matches!(shot_scores(&scores, &seg), Err(Error::Partition(_))));
    }

    #[test]
    fn small_knapsack() {
        let sel = knapsack_select(&[0.9, 0.6, 0.8], &[4, 3, 5], 8).unwrap();
        assert_eq!(sel.selected, vec![true, true, false]);
        assert!((sel.total_value - 1.5).abs() < 1e-12);
    }

    #[test]
    fn budget_extremes() {
        let sel = knapsack_select(&[0.9, 0.6, 0.8], &[4, 3, 5], 0).unwrap();
        assert!(sel.selected.iter().all(|s| !s));
        let sel = knapsack_select(&[0.9, 0.6, 0.8], &[4, 3, 5], 12).unwrap();
        assert!(sel.selected.iter().all(|s| *s));
        let sel = knapsack_select(&[], &[], 10).unwrap();
        assert!(sel.selected.is_empty());
    }

    #[test]
    fn ties_prefer_earlier_shots() {
        let scores = RawScores::new(vec![0.5; 4]).unwrap();
        let seg = ShotSegmentation::from_lengths(&[1, 1, 1, 1]).unwrap();
        let sel = summarize_video(&scores, &seg, 0.5).unwrap();
        assert_eq!(sel.selected, vec![true, true, false, false]);
        assert_eq!(sel.frame_mask, vec![true, true, false, false]);
        // {0, 3} and {1, 2} tie at 3.0; the earlier index wins
        let sel = knapsack_select(&[1.0, 2.0, 1.0, 2.0], &[1, 1, 1, 1], 2).unwrap();
        assert_eq!(sel.selected_indices(), vec![1, 3]);
        let sel = knapsack_select(&[2.0, 1.0, 1.0, 2.0], &[2, 1, 1, 2], 4).unwrap();
        assert_eq!(sel.selected_indices(), vec![0, 1, 2]);
    }

    #[test]
    fn mask_matches_selected_lengths() {
        let scores = RawScores::new((0..20).map(|i| (i as f64 * 0.37).sin().abs()).collect()).unwrap();
        let seg = ShotSegmentation::from_lengths(&[3, 5, 2, 4, 6]).unwrap();
        let sel = summarize_video(&scores, &seg, 0.15).unwrap();
        assert_eq!(sel.budget_frames, 3);
        let chosen: usize = sel.selected_indices().iter().map(|&i| seg.lengths()[i]).sum();
        assert_eq!(sel.frame_mask.iter().filter(|m| **m).count(), chosen);
        assert!(chosen <= 3);
        assert!(summarize_video(&scores, &seg, 0.0).is_err());
        assert!(summarize_video(&scores, &seg, 1.5).is_err());
    }

    #[test]
    fn dump_format() {
        let seg = ShotSegmentation::from_lengths(&[2, 3, 1]).unwrap();
        let scores = RawScores::new(vec![0.9, 0.9, 0.1, 0.1, 0.1, 0.8]).unwrap();
        let sel = summarize_video(&scores, &seg, 0.5).unwrap();
        let text = sel.dump("v1", &seg);
        assert_eq!(
            text,
            "video v1\nbudget_frames 3 selected_frames 3 total_value 1.7000000000000002\nshots 0-2 5-6\nmask_rle 1:2 0:3 1:1\n"
        );
    }
}
