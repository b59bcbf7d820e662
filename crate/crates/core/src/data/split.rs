use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Seeded shuffle, then 8:1:1 train/validation/test.
    Ratio,
    /// Leave one subject out as the test set; the rest is split 9:1.
    Loso,
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ratio" => Ok(SplitMode::Ratio),
            "loso" => Ok(SplitMode::Loso),
            other => Err(format!("unknown split mode '{other}' (expected ratio or loso)")),
        }
    }
}

/// Sample indices of the three partitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn shuffled(mut idx: Vec<usize>, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx
}

fn nonempty(name: &str, v: &[usize]) -> Result<()> {
    if v.is_empty() {
        Err(Error::EmptyPartition(name.to_string()))
    } else {
        Ok(())
    }
}

/// 8:1:1 split of `n` samples: validation and test get `n / 10` samples
/// each, training gets the rest.
pub fn split_ratio(n: usize, seed: u64) -> Result<Split> {
    let idx = shuffled((0..n).collect(), seed);
    let tenth = n / 10;
    let split = Split {
        val: idx[..tenth].to_vec(),
        test: idx[tenth..2 * tenth].to_vec(),
        train: idx[2 * tenth..].to_vec(),
    };
    nonempty("train", &split.train)?;
    nonempty("validation", &split.val)?;
    nonempty("test", &split.test)?;
    Ok(split)
}

/// Test set = every sample of `subject`; the remaining samples are
/// shuffled and split 9:1 into training and validation.
pub fn split_loso(ds: &LabeledDataset, subject: usize, seed: u64) -> Result<Split> {
    let test: Vec<usize> = (0..ds.len()).filter(|&k| ds.samples[k].subject == subject).collect();
    if test.is_empty() {
        return Err(Error::EmptyPartition(format!("no samples for subject {subject}")));
    }
    let rest: Vec<usize> = (0..ds.len()).filter(|&k| ds.samples[k].subject != subject).collect();
    let rest = shuffled(rest, seed);
    let n_val = rest.len() / 10;
    let split = Split {
        val: rest[..n_val].to_vec(),
        train: rest[n_val..].to_vec(),
        test,
    };
    nonempty("train", &split.train)?;
    nonempty("validation", &split.val)?;
    Ok(split)
}

/// One leave-one-subject-out split per subject, in ascending subject order.
pub fn loso_splits(ds: &LabeledDataset, seed: u64) -> Result<Vec<(usize, Split)>> {
    ds.subjects()
        .into_iter()
        .map(|s| Ok((s, split_loso(ds, s, seed)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_samples_split_80_10_10() {
        let s = split_ratio(100, 4).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, split_ratio(100, 4).unwrap());
        assert_ne!(s, split_ratio(100, 5).unwrap());
    }

    #[test]
    fn tiny_sets_are_rejected() {
        assert!(matches!(split_ratio(9, 0), Err(Error::EmptyPartition(_))));
    }

    #[test]
    fn parse_mode() {
        assert_eq!("loso".parse::<SplitMode>().unwrap(), SplitMode::Loso);
        assert!("kfold".parse::<SplitMode>().is_err());
    }
}
