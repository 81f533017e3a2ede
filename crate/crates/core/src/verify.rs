//! Pair-list verification accuracy under k-fold cross-validation, and
//! per-group aggregation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::biomet::compensated_sum;
use crate::embset::EmbeddingSet;
use crate::error::{Error, Result};
use crate::pairsample::PairKind;
use crate::rng;
use crate::simkern;

pub const DEFAULT_FOLDS: usize = 10;
/// Decimal places used when reporting the group average.
pub const AVERAGE_DECIMALS: u32 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntry {
    pub sample_id_a: String,
    pub sample_id_b: String,
    pub label: PairKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairList {
    pub entries: Vec<PairEntry>,
    pub fold_count: usize,
}

impl PairList {
    pub fn new(entries: Vec<PairEntry>, fold_count: usize) -> Self {
        Self { entries, fold_count }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads `sample_id_a,sample_id_b,label` rows; row order is kept.
    pub fn read_csv(path: impl AsRef<Path>, fold_count: usize) -> Result<Self> {
        let path = path.as_ref();
        let csv_err = |e: csv::Error| match e.kind() {
            csv::ErrorKind::Io(_) => {
                let csv::ErrorKind::Io(io) = e.into_kind() else { unreachable!() };
                Error::io(path, io)
            }
            _ => Error::Csv {
                path: path.to_path_buf(),
                reason: e.to_string(),
            },
        };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(csv_err)?;
        let entries = reader
            .deserialize()
            .collect::<std::result::Result<Vec<PairEntry>, _>>()
            .map_err(csv_err)?;
        Ok(Self::new(entries, fold_count))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(e).expect("in-memory csv write");
        }
        let bytes = w.into_inner().expect("in-memory csv flush");
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Resolves every entry to `(index_a, index_b, is_mated)`.
    pub fn resolve(&self, set: &EmbeddingSet) -> Result<Vec<(usize, usize, bool)>> {
        let idx = |id: &str| set.index_of(id).ok_or_else(|| Error::UnresolvableId(id.to_string()));
        self.entries
            .iter()
            .map(|e| Ok((idx(&e.sample_id_a)?, idx(&e.sample_id_b)?, e.label == PairKind::Mated)))
            .collect()
    }

    /// Entries whose two samples are both present in `set`, in order.
    pub fn restrict_to(&self, set: &EmbeddingSet) -> Self {
        let entries = self
            .entries
            .iter()
            .filter(|e| set.index_of(&e.sample_id_a).is_some() && set.index_of(&e.sample_id_b).is_some())
            .cloned()
            .collect();
        Self::new(entries, self.fold_count)
    }

    /// Seeded permutation of the entries, for `--shuffle-folds`.
    pub fn shuffled(&self, seed: u64) -> Self {
        let mut entries = self.entries.clone();
        entries.shuffle(&mut rng::seeded(seed));
        Self::new(entries, self.fold_count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub per_fold_accuracy: Vec<f64>,
    pub per_fold_threshold: Vec<f64>,
    pub mean_accuracy: f64,
    /// Sample standard deviation over folds.
    pub std: f64,
}

/// Threshold maximizing accuracy of `score >= t => mated` over the distinct
/// scores; the lowest such threshold wins ties.
pub fn select_threshold(scores: &[f64], mated: &[bool]) -> Result<f64> {
    if scores.len() != mated.len() {
        return Err(Error::LengthMismatch(scores.len(), mated.len()));
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("training scores"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let total_mated = mated.iter().filter(|&&m| m).count();
    let (mut mated_below, mut nonmated_below) = (0usize, 0usize);
    let mut best = (0usize, f64::NAN);
    for (pos, &i) in order.iter().enumerate() {
        let first_of_value = pos == 0 || scores[order[pos - 1]] != scores[i];
        if first_of_value {
            let correct = nonmated_below + (total_mated - mated_below);
            if best.1.is_nan() || correct > best.0 {
                best = (correct, scores[i]);
            }
        }
        if mated[i] {
            mated_below += 1;
        } else {
            nonmated_below += 1;
        }
    }
    Ok(best.1)
}

fn accuracy_at(scores: &[f64], mated: &[bool], t: f64) -> f64 {
    let correct = scores.iter().zip(mated).filter(|&(&s, &m)| (s >= t) == m).count();
    correct as f64 / scores.len() as f64
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    let std = if values.len() > 1 {
        (compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// k-fold protocol over precomputed scores. Folds are contiguous blocks in
/// input order.
pub fn kfold_scores(scores: &[f64], mated: &[bool], folds: usize) -> Result<VerificationResult> {
    if scores.len() != mated.len() {
        return Err(Error::LengthMismatch(scores.len(), mated.len()));
    }
    if folds < 2 {
        return Err(Error::InvalidParameter(format!("fold count {folds} (need at least 2)")));
    }
    if scores.is_empty() || !scores.len().is_multiple_of(folds) {
        return Err(Error::NonDivisibleCount {
            count: scores.len(),
            folds,
        });
    }
    let size = scores.len() / folds;
    let mut per_fold_accuracy = Vec::with_capacity(folds);
    let mut per_fold_threshold = Vec::with_capacity(folds);
    for f in 0..folds {
        let (lo, hi) = (f * size, (f + 1) * size);
        let train_s: Vec<f64> = scores[..lo].iter().chain(&scores[hi..]).copied().collect();
        let train_m: Vec<bool> = mated[..lo].iter().chain(&mated[hi..]).copied().collect();
        let t = select_threshold(&train_s, &train_m)?;
        per_fold_threshold.push(t);
        per_fold_accuracy.push(accuracy_at(&scores[lo..hi], &mated[lo..hi], t));
    }
    let (mean_accuracy, std) = mean_std(&per_fold_accuracy);
    Ok(VerificationResult {
        per_fold_accuracy,
        per_fold_threshold,
        mean_accuracy,
        std,
    })
}

pub fn kfold_accuracy(set: &EmbeddingSet, pairs: &PairList) -> Result<VerificationResult> {
    let resolved = pairs.resolve(set)?;
    if resolved.is_empty() || resolved.len() % pairs.fold_count.max(1) != 0 {
        return Err(Error::NonDivisibleCount {
            count: resolved.len(),
            folds: pairs.fold_count,
        });
    }
    let idx: Vec<(usize, usize)> = resolved.iter().map(|&(a, b, _)| (a, b)).collect();
    let mated: Vec<bool> = resolved.iter().map(|&(_, _, m)| m).collect();
    let scores = simkern::pair_scores(set, &idx)?;
    kfold_scores(&scores, &mated, pairs.fold_count)
}

/// Rounds half away from zero at `decimals` places. A scaled fraction within
/// 1e-9 of one half counts as an exact half.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = x.abs() * scale;
    let floor = scaled.floor();
    let frac = scaled - floor;
    let up = frac >= 0.5 - 1e-9;
    ((floor + if up { 1.0 } else { 0.0 }) / scale).copysign(x)
}

/// Unweighted mean of per-group accuracies.
pub fn group_average(means: &[f64]) -> Result<f64> {
    if means.is_empty() {
        return Err(Error::EmptyInput("group accuracies"));
    }
    Ok(compensated_sum(means.iter().copied()) / means.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub per_group: BTreeMap<String, VerificationResult>,
    pub average: f64,
    pub average_rounded: f64,
}

impl GroupReport {
    pub fn from_results(per_group: BTreeMap<String, VerificationResult>) -> Result<Self> {
        let means: Vec<f64> = per_group.values().map(|r| r.mean_accuracy).collect();
        let average = group_average(&means)?;
        Ok(Self {
            per_group,
            average,
            average_rounded: round_half_up(average, AVERAGE_DECIMALS),
        })
    }
}

pub fn group_accuracy(set: &EmbeddingSet, group_pairs: &BTreeMap<String, PairList>) -> Result<GroupReport> {
    let per_group = group_pairs
        .iter()
        .map(|(g, pl)| Ok((g.clone(), kfold_accuracy(set, pl)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    GroupReport::from_results(per_group)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupGap {
    pub best_group: String,
    pub worst_group: String,
    pub gap: f64,
}

/// Extreme groups by mean accuracy; equal means resolve to the
/// lexicographically smallest group name.
pub fn max_gap(report: &GroupReport) -> Result<GroupGap> {
    if report.per_group.len() < 2 {
        return Err(Error::TooFewGroups(report.per_group.len()));
    }
    let mut best: Option<(&String, f64)> = None;
    let mut worst: Option<(&String, f64)> = None;
    // BTreeMap iterates names in ascending order, so strict comparisons keep
    // the smallest name on ties.
    for (g, r) in &report.per_group {
        let m = r.mean_accuracy;
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((g, m));
        }
        if worst.is_none_or(|(_, w)| m < w) {
            worst = Some((g, m));
        }
    }
    let (best, worst) = (best.unwrap(), worst.unwrap());
    Ok(GroupGap {
        best_group: best.0.clone(),
        worst_group: worst.0.clone(),
        gap: best.1 - worst.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(mean: f64) -> VerificationResult {
        VerificationResult {
            per_fold_accuracy: vec![mean],
            per_fold_threshold: vec![0.0],
            mean_accuracy: mean,
            std: 0.0,
        }
    }

    fn groups(pairs: &[(&str, f64)]) -> GroupReport {
        GroupReport::from_results(pairs.iter().map(|&(g, m)| (g.to_string(), result(m))).collect()).unwrap()
    }

    #[test]
    fn separable_scores_are_perfect() {
        let mated: Vec<bool> = (0..60).map(|i| i % 2 == 0).collect();
        let scores: Vec<f64> = mated.iter().map(|&m| if m { 0.9 } else { 0.1 }).collect();
        for k in [2, 3, 5, 10] {
            let r = kfold_scores(&scores, &mated, k).unwrap();
            assert_eq!(r.mean_accuracy, 1.0);
            assert_eq!(r.std, 0.0);
        }
    }

    #[test]
    fn constant_scores_give_half() {
        let mated: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        let r = kfold_scores(&[0.5; 20], &mated, 10).unwrap();
        assert_eq!(r.mean_accuracy, 0.5);
    }

    #[test]
    fn threshold_ties_pick_lowest() {
        // t = 0.3 and t = 0.5 both classify 3 of 4 correctly.
        let t = select_threshold(&[0.2, 0.3, 0.4, 0.5], &[false, true, false, true]).unwrap();
        assert_eq!(t, 0.3);
        let t = select_threshold(&[0.1, 0.2, 0.3], &[true, false, true]).unwrap();
        assert_eq!(t, 0.1);
    }

    #[test]
    fn non_divisible_and_bad_k() {
        let m = [true, false, true];
        assert!(matches!(kfold_scores(&[0.1, 0.2, 0.3], &m, 2), Err(Error::NonDivisibleCount { .. })));
        assert!(matches!(kfold_scores(&[0.1, 0.2, 0.3], &m, 1), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn averages_and_rounding() {
        let r = groups(&[("African", 0.8415), ("Asian", 0.8535), ("Caucasian", 0.9028), ("Indian", 0.8750)]);
        assert_eq!(r.average_rounded, 0.8682);
        assert!((r.average - 0.8682).abs() < 1e-12);
        assert!((groups(&[("a", 0.9), ("b", 0.7)]).average - 0.8).abs() < 1e-15);
        assert_eq!(groups(&[("only", 0.77)]).average, 0.77);

        assert_eq!(round_half_up(0.982975, 4), 0.9830);
        assert_eq!(round_half_up(0.894975, 4), 0.8950);
        assert_eq!(round_half_up(0.12344, 4), 0.1234);
    }

    #[test]
    fn gap_examples() {
        let r = groups(&[("African", 0.8415), ("Asian", 0.8535), ("Caucasian", 0.9028), ("Indian", 0.8750)]);
        let g = max_gap(&r).unwrap();
        assert_eq!((g.best_group.as_str(), g.worst_group.as_str()), ("Caucasian", "African"));
        assert!((g.gap - 0.0613).abs() < 1e-12);

        let g = max_gap(&groups(&[("b", 0.9), ("a", 0.9), ("c", 0.9)])).unwrap();
        assert_eq!((g.best_group.as_str(), g.worst_group.as_str(), g.gap), ("a", "a", 0.0));
        assert!((max_gap(&groups(&[("x", 0.95), ("y", 0.90)])).unwrap().gap - 0.05).abs() < 1e-12);
        assert!(matches!(max_gap(&groups(&[("x", 0.95)])), Err(Error::TooFewGroups(1))));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.csv");
        std::fs::write(&p, "sample_id_a,sample_id_b,label\na,b,mated\nc,d,nonmated\n").unwrap();
        let pl = PairList::read_csv(&p, 10).unwrap();
        assert_eq!(pl.entries[1].label, PairKind::Nonmated);
        let q = dir.path().join("out.csv");
        pl.write_csv(&q).unwrap();
        assert_eq!(PairList::read_csv(&q, 10).unwrap(), pl);

        std::fs::write(&p, "sample_id_a,sample_id_b,label\na,b,maybe\n").unwrap();
        assert!(matches!(PairList::read_csv(&p, 10), Err(Error::Csv { .. })));
    }
}
