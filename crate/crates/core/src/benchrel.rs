//! Benchmark reliability: correlation of a synthetic benchmark with real
//! ones over a model × benchmark accuracy matrix, and consistency of
//! verification accuracy across identity-subset segments.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biomet::compensated_sum;
use crate::embset::EmbeddingSet;
use crate::error::{Error, Result};
use crate::rng;
use crate::verify::{kfold_accuracy, PairList, VerificationResult};

pub const MIN_MODELS: usize = 3;
/// Minimum usable pairs per segment, as a multiple of the fold count.
pub const MIN_PAIRS_PER_FOLD: usize = 10;

/// Product-moment correlation coefficient.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < MIN_MODELS {
        return Err(Error::TooFewPoints(x.len()));
    }
    let n = x.len() as f64;
    let mx = compensated_sum(x.iter().copied()) / n;
    let my = compensated_sum(y.iter().copied()) / n;
    let sxx = compensated_sum(x.iter().map(|a| (a - mx) * (a - mx)));
    let syy = compensated_sum(y.iter().map(|b| (b - my) * (b - my)));
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let sxy = compensated_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MatrixRecord {
    model: String,
    benchmark: String,
    accuracy: f64,
}

/// Dense model × benchmark accuracies; `None` marks a missing entry.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    pub models: Vec<String>,
    pub benchmarks: Vec<String>,
    pub accuracy: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    /// Builds a matrix from `(model, benchmark, accuracy)` triples. Models
    /// and benchmarks keep first-appearance order.
    pub fn from_records<'a>(records: impl IntoIterator<Item = (&'a str, &'a str, f64)>) -> Result<Self> {
        let mut models: Vec<String> = Vec::new();
        let mut benchmarks: Vec<String> = Vec::new();
        let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (m, b, acc) in records {
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::InvalidParameter(format!("accuracy {acc} for ({m}, {b}) outside [0, 1]")));
            }
            let mi = position_or_push(&mut models, m);
            let bi = position_or_push(&mut benchmarks, b);
            if cells.insert((mi, bi), acc).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate entry for ({m}, {b})")));
            }
        }
        let mut accuracy = vec![vec![None; benchmarks.len()]; models.len()];
        for ((mi, bi), acc) in cells {
            accuracy[mi][bi] = Some(acc);
        }
        Ok(Self {
            models,
            benchmarks,
            accuracy,
        })
    }

    /// Reads a `model,benchmark,accuracy` CSV.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let csv_err = |reason: String| Error::Csv {
            path: path.to_path_buf(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let records = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes())
            .deserialize()
            .collect::<std::result::Result<Vec<MatrixRecord>, _>>()
            .map_err(|e| csv_err(e.to_string()))?;
        Self::from_records(records.iter().map(|r| (r.model.as_str(), r.benchmark.as_str(), r.accuracy)))
            .map_err(|e| csv_err(e.to_string()))
    }

    fn column(&self, benchmark: &str) -> Option<usize> {
        self.benchmarks.iter().position(|b| b == benchmark)
    }
}

fn position_or_push(list: &mut Vec<String>, name: &str) -> usize {
    list.iter().position(|x| x == name).unwrap_or_else(|| {
        list.push(name.to_string());
        list.len() - 1
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCorrelation {
    pub benchmark: String,
    pub n_models: usize,
    pub pcc: Option<f64>,
    /// Why `pcc` is undefined, when it is.
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub synthetic: String,
    pub correlations: Vec<BenchmarkCorrelation>,
    pub consistency: Option<ConsistencyReport>,
}

/// Correlates the synthetic column with every other column over the models
/// present in both. Pairings are listed by benchmark name.
pub fn assess_benchmark(matrix: &AccuracyMatrix, synthetic: &str) -> Result<ReliabilityReport> {
    let s = matrix
        .column(synthetic)
        .ok_or_else(|| Error::ColumnMissing(synthetic.to_string()))?;
    let present = matrix.accuracy.iter().filter(|row| row[s].is_some()).count();
    if present < MIN_MODELS {
        return Err(Error::InsufficientOverlap(format!(
            "synthetic benchmark `{synthetic}` has {present} model entries, need {MIN_MODELS}"
        )));
    }
    // Model order must not influence the compensated sums.
    let mut by_name: Vec<usize> = (0..matrix.models.len()).collect();
    by_name.sort_by(|&a, &b| matrix.models[a].cmp(&matrix.models[b]));
    let mut others: Vec<usize> = (0..matrix.benchmarks.len()).filter(|&b| b != s).collect();
    others.sort_by(|&a, &b| matrix.benchmarks[a].cmp(&matrix.benchmarks[b]));

    let correlations = others
        .into_iter()
        .map(|b| {
            let (x, y): (Vec<f64>, Vec<f64>) = by_name
                .iter()
                .filter_map(|&m| Some((matrix.accuracy[m][s]?, matrix.accuracy[m][b]?)))
                .unzip();
            let (pcc, reason) = match pcc(&x, &y) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            BenchmarkCorrelation {
                benchmark: matrix.benchmarks[b].clone(),
                n_models: x.len(),
                pcc,
                reason,
            }
        })
        .collect();
    Ok(ReliabilityReport {
        synthetic: synthetic.to_string(),
        correlations,
        consistency: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResult {
    pub segment: usize,
    pub seed: u64,
    pub n_identities: usize,
    pub n_pairs: usize,
    pub result: VerificationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub fraction: f64,
    pub seed: u64,
    pub segments: Vec<SegmentResult>,
    pub mean: f64,
    /// Sample standard deviation of the per-segment mean accuracies.
    pub std: f64,
}

/// Re-runs the k-fold protocol on `segments` identity subsets of `set`.
///
/// Segment `i` keeps `fraction` of the identities, drawn with seed
/// `derive_seed(seed, i)`. The pair list is restricted to pairs with both
/// samples kept and then truncated to a multiple of the fold count.
pub fn consistency(
    set: &EmbeddingSet,
    pairs: &PairList,
    segments: usize,
    fraction: f64,
    seed: u64,
) -> Result<ConsistencyReport> {
    if segments < 2 {
        return Err(Error::InvalidParameter(format!("segments {segments} (need at least 2)")));
    }
    let k = pairs.fold_count;
    if k < 2 {
        return Err(Error::InvalidParameter(format!("fold count {k} (need at least 2)")));
    }
    // Unresolvable ids in the full list are an input error, not a segment effect.
    pairs.resolve(set)?;
    let needed = MIN_PAIRS_PER_FOLD * k;
    let results = (0..segments)
        .into_par_iter()
        .map(|i| {
            let seg_seed = rng::derive_seed(seed, i as u64);
            let sub = set.subset(fraction, seg_seed)?;
            let mut restricted = pairs.restrict_to(&sub);
            restricted.entries.truncate(restricted.len() / k * k);
            if restricted.len() < needed {
                return Err(Error::SegmentTooSmall {
                    segment: i,
                    pairs: restricted.len(),
                    needed,
                });
            }
            Ok(SegmentResult {
                segment: i,
                seed: seg_seed,
                n_identities: sub.identities().len(),
                n_pairs: restricted.len(),
                result: kfold_accuracy(&sub, &restricted)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<f64> = results.iter().map(|r| r.result.mean_accuracy).collect();
    let n = means.len() as f64;
    let mean = compensated_sum(means.iter().copied()) / n;
    let std = (compensated_sum(means.iter().map(|m| (m - mean) * (m - mean))) / (n - 1.0)).sqrt();
    Ok(ConsistencyReport {
        fraction,
        seed,
        segments: results,
        mean,
        std,
    })
}
