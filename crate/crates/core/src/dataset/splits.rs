use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSetting {
    /// Random train/test partitions of one dataset.
    Canonical,
    /// Canonical partitions with every auxiliary video added to training.
    Augmented,
    /// Train on the auxiliary (source) datasets, test on the whole target.
    Transfer,
    /// First-person benchmark, laid out like `Transfer`.
    Fpv,
}

impl FromStr for SplitSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(Self::Canonical),
            "augmented" => Ok(Self::Augmented),
            "transfer" => Ok(Self::Transfer),
            "fpv" => Ok(Self::Fpv),
            other => Err(Error::Config(format!(
                "unknown split setting `{other}` (expected canonical, augmented, transfer or fpv)"
            ))),
        }
    }
}

impl fmt::Display for SplitSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Canonical => "canonical",
            Self::Augmented => "augmented",
            Self::Transfer => "transfer",
            Self::Fpv => "fpv",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub name: String,
    pub setting: SplitSetting,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub split_index: usize,
    pub seed: u64,
}

impl SplitManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let split: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        if self.test_ids.is_empty() {
            return Err(Error::Config(format!("split `{}` has an empty test set", self.name)));
        }
        let train: HashSet<&String> = self.train_ids.iter().collect();
        if let Some(id) = self.test_ids.iter().find(|id| train.contains(id)) {
            return Err(Error::Config(format!(
                "split `{}` has `{id}` in both train and test",
                self.name
            )));
        }
        Ok(())
    }
}

/// Builds split manifests for `target_ids`.
///
/// `auxiliary_ids` are the extra training videos for `Augmented` and the source
/// videos for `Transfer`/`Fpv`; they must be empty for `Canonical`. Transfer-style
/// settings always produce a single deterministic manifest.
pub fn make_splits(
    target_ids: &[String],
    auxiliary_ids: &[String],
    setting: SplitSetting,
    n_splits: usize,
    train_ratio: f64,
    seed: u64,
) -> Result<Vec<SplitManifest>> {
    match setting {
        SplitSetting::Transfer | SplitSetting::Fpv => {
            if auxiliary_ids.is_empty() || target_ids.is_empty() {
                return Err(Error::Config(format!(
                    "{setting} splits need non-empty source and target datasets"
                )));
            }
            let split = SplitManifest {
                name: format!("{setting}-0"),
                setting,
                train_ids: auxiliary_ids.to_vec(),
                test_ids: target_ids.to_vec(),
                split_index: 0,
                seed,
            };
            split.validate()?;
            Ok(vec![split])
        }
        SplitSetting::Canonical | SplitSetting::Augmented => {
            if setting == SplitSetting::Canonical && !auxiliary_ids.is_empty() {
                return Err(Error::Config("canonical splits take no auxiliary datasets".into()));
            }
            if n_splits == 0 {
                return Err(Error::Config("n_splits must be at least 1".into()));
            }
            if !(train_ratio > 0.0 && train_ratio < 1.0) {
                return Err(Error::Config(format!("train ratio must be in (0, 1), got {train_ratio}")));
            }
            let n = target_ids.len();
            let n_train = (train_ratio * n as f64).round() as usize;
            if n_train == 0 || n_train >= n {
                return Err(Error::Config(format!(
                    "{n} videos are not enough for a {train_ratio} train ratio with a non-empty test set"
                )));
            }
            (0..n_splits)
                .map(|i| {
                    let mut order: Vec<usize> = (0..n).collect();
                    order.shuffle(&mut seeded(derive_seed(seed, &format!("split-{i}"))));
                    let mut train_idx = order[..n_train].to_vec();
                    let mut test_idx = order[n_train..].to_vec();
                    train_idx.sort_unstable();
                    test_idx.sort_unstable();
                    let mut train_ids: Vec<String> =
                        train_idx.iter().map(|&j| target_ids[j].clone()).collect();
                    train_ids.extend(auxiliary_ids.iter().cloned());
                    let split = SplitManifest {
                        name: format!("{setting}-{i}"),
                        setting,
                        train_ids,
                        test_ids: test_idx.iter().map(|&j| target_ids[j].clone()).collect(),
                        split_index: i,
                        seed,
                    };
                    split.validate()?;
                    Ok(split)
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i:02}")).collect()
    }

    #[test]
    fn five_canonical_splits_of_fifty() {
        let all = ids("v", 50);
        let splits = make_splits(&all, &[], SplitSetting::Canonical, 5, 0.8, 42).unwrap();
        assert_eq!(splits.len(), 5);
        for s in &splits {
            assert_eq!(s.train_ids.len(), 40);
            assert_eq!(s.test_ids.len(), 10);
            let mut union: Vec<&String> = s.train_ids.iter().chain(&s.test_ids).collect();
            union.sort();
            union.dedup();
            assert_eq!(union.len(), 50);
        }
        for i in 0..5 {
            for j in i + 1..5 {
                assert_ne!(splits[i].test_ids, splits[j].test_ids);
            }
        }
        let again = make_splits(&all, &[], SplitSetting::Canonical, 5, 0.8, 42).unwrap();
        assert_eq!(splits, again);
        let other = make_splits(&all, &[], SplitSetting::Canonical, 5, 0.8, 43).unwrap();
        assert_ne!(splits, other);
    }

    #[test]
    fn transfer_uses_whole_datasets() {
        let a = ids("a", 7);
        let b = ids("b", 4);
        let splits = make_splits(&b, &a, SplitSetting::Transfer, 5, 0.8, 1).unwrap();
        assert_eq!(splits.len(), 1);
        assert_eq!(splits[0].train_ids, a);
        assert_eq!(splits[0].test_ids, b);
    }

    #[test]
    fn augmented_extends_canonical_training() {
        let target = ids("t", 20);
        let aux = ids("x", 6);
        let canonical = make_splits(&target, &[], SplitSetting::Canonical, 3, 0.8, 9).unwrap();
        let augmented = make_splits(&target, &aux, SplitSetting::Augmented, 3, 0.8, 9).unwrap();
        for (c, a) in canonical.iter().zip(&augmented) {
            assert_eq!(c.test_ids, a.test_ids);
            let mut expected = c.train_ids.clone();
            expected.extend(aux.iter().cloned());
            assert_eq!(a.train_ids, expected);
        }
    }

    #[test]
    fn insufficient_ids_rejected() {
        assert!(make_splits(&ids("v", 1), &[], SplitSetting::Canonical, 5, 0.8, 0).is_err());
        assert!(make_splits(&ids("v", 2), &[], SplitSetting::Canonical, 5, 0.9, 0).is_err());
        assert!(make_splits(&ids("v", 5), &ids("a", 2), SplitSetting::Canonical, 1, 0.8, 0).is_err());
        assert!(make_splits(&ids("v", 5), &[], SplitSetting::Transfer, 1, 0.8, 0).is_err());
        assert!("bogus".parse::<SplitSetting>().is_err());
    }
}
