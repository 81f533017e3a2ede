//! Score-distribution statistics and verification operating points.
//!
//! Acceptance rule everywhere: a comparison is accepted as a match when
//! `score >= threshold`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 100;
pub const DEFAULT_RANGE: (f64, f64) = (-1.0, 1.0);
pub const DUPLICATE_EPS: f64 = 1e-6;
/// Share of near-1 mated scores above which duplicates are flagged.
pub const DUPLICATE_FLAG_FRACTION: f64 = 0.001;

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 when n = 1.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub fn score_stats(scores: &[f64]) -> Result<ScoreStats> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("score list"));
    }
    let n = scores.len();
    let mean = compensated_sum(scores.iter().copied()) / n as f64;
    let std = if n > 1 {
        let ss = compensated_sum(scores.iter().map(|&x| (x - mean) * (x - mean)));
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let (min, max) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    // Rounding can nudge the mean just outside [min, max] for constant input.
    Ok(ScoreStats {
        n,
        mean: mean.clamp(min, max),
        std,
        min,
        max,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    pub thresholds: Vec<f64>,
    pub fmr: Vec<f64>,
    pub fnmr: Vec<f64>,
    pub n_genuine: usize,
    pub n_impostor: usize,
}

impl DetCurve {
    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }
}

fn sorted_finite(scores: &[f64], what: &'static str) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput(what));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite {what}")));
    }
    let mut v = scores.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    Ok(v)
}

/// Exact FMR/FNMR at every distinct score plus one sentinel just above the
/// largest score, where everything is rejected.
pub fn det_sweep(genuine: &[f64], impostor: &[f64]) -> Result<DetCurve> {
    let gen = sorted_finite(genuine, "genuine scores")?;
    let imp = sorted_finite(impostor, "impostor scores")?;

    let mut thresholds = Vec::with_capacity(gen.len() + imp.len() + 1);
    let (mut a, mut b) = (0, 0);
    while a < gen.len() || b < imp.len() {
        let next = match (gen.get(a), imp.get(b)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        if thresholds.last() != Some(&next) {
            thresholds.push(next);
        }
        while a < gen.len() && gen[a] == next {
            a += 1;
        }
        while b < imp.len() && imp[b] == next {
            b += 1;
        }
    }
    let top = *thresholds.last().expect("non-empty");
    thresholds.push(top.next_up());

    let (ng, ni) = (gen.len() as f64, imp.len() as f64);
    let mut fmr = Vec::with_capacity(thresholds.len());
    let mut fnmr = Vec::with_capacity(thresholds.len());
    let (mut g_below, mut i_below) = (0usize, 0usize);
    for &t in &thresholds {
        while g_below < gen.len() && gen[g_below] < t {
            g_below += 1;
        }
        while i_below < imp.len() && imp[i_below] < t {
            i_below += 1;
        }
        fmr.push((imp.len() - i_below) as f64 / ni);
        fnmr.push(g_below as f64 / ng);
    }
    Ok(DetCurve {
        thresholds,
        fmr,
        fnmr,
        n_genuine: gen.len(),
        n_impostor: imp.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FnmrAtFmr {
    pub fnmr: f64,
    pub threshold: f64,
    /// The target FMR is reached only by rejecting every comparison.
    pub saturated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoints {
    pub eer: f64,
    pub eer_threshold: f64,
    pub fmr100: f64,
    pub fmr100_threshold: f64,
    pub fmr1000: f64,
    pub fmr1000_threshold: f64,
    pub fmr100_saturated: bool,
    pub fmr1000_saturated: bool,
}

/// Equal error rate at the first (lowest-threshold) crossing of FMR and
/// FNMR, linearly interpolated between the bracketing thresholds.
pub fn equal_error_rate(curve: &DetCurve) -> (f64, f64) {
    let diff = |i: usize| curve.fmr[i] - curve.fnmr[i];
    let i = (0..curve.len())
        .find(|&i| diff(i) <= 0.0)
        .expect("the sentinel threshold has FMR 0 and FNMR 1");
    if diff(i) == 0.0 || i == 0 {
        return (curve.fmr[i], curve.thresholds[i]);
    }
    let (d0, d1) = (diff(i - 1), diff(i));
    let alpha = d0 / (d0 - d1);
    let eer = curve.fmr[i - 1] + alpha * (curve.fmr[i] - curve.fmr[i - 1]);
    let thr = curve.thresholds[i - 1] + alpha * (curve.thresholds[i] - curve.thresholds[i - 1]);
    (eer, thr)
}

/// FNMR at the smallest threshold whose FMR does not exceed `target`.
pub fn fnmr_at_fmr(curve: &DetCurve, target: f64) -> FnmrAtFmr {
    let last = curve.len() - 1;
    let i = (0..curve.len()).find(|&i| curve.fmr[i] <= target).unwrap_or(last);
    FnmrAtFmr {
        fnmr: curve.fnmr[i],
        threshold: curve.thresholds[i],
        saturated: i == last,
    }
}

pub fn operating_points(curve: &DetCurve) -> OperatingPoints {
    let (eer, eer_threshold) = equal_error_rate(curve);
    let f100 = fnmr_at_fmr(curve, 0.01);
    let f1000 = fnmr_at_fmr(curve, 0.001);
    OperatingPoints {
        eer,
        eer_threshold,
        fmr100: f100.fnmr,
        fmr100_threshold: f100.threshold,
        fmr1000: f1000.fnmr,
        fmr1000_threshold: f1000.threshold,
        fmr100_saturated: f100.saturated,
        fmr1000_saturated: f1000.saturated,
    }
}

/// Fisher discriminant ratio `(μg − μi)² / (σg² + σi²)`.
pub fn fdr(genuine: &ScoreStats, impostor: &ScoreStats) -> Result<f64> {
    fdr_from_moments(genuine.mean, genuine.std, impostor.mean, impostor.std)
}

pub fn fdr_from_moments(mean_g: f64, std_g: f64, mean_i: f64, std_i: f64) -> Result<f64> {
    let var = std_g * std_g + std_i * std_i;
    if var <= 0.0 {
        return Err(Error::DegenerateVariances);
    }
    let d = mean_g - mean_i;
    Ok(d * d / var)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub n_total: u64,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn lo(&self) -> f64 {
        self.bin_edges[0]
    }

    pub fn hi(&self) -> f64 {
        self.bin_edges[self.bin_edges.len() - 1]
    }

    /// Index of the most populated bin; the lowest one on ties.
    pub fn modal_bin(&self) -> Option<usize> {
        if self.n_total == 0 {
            return None;
        }
        let max = *self.counts.iter().max()?;
        self.counts.iter().position(|&c| c == max)
    }
}

/// Equal-width histogram. Bins are `[lo_k, hi_k)` except the last, which also
/// takes `hi`; scores outside the range land in the boundary bins.
pub fn histogram(scores: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidParameter("histogram needs at least one bin".into()));
    }
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(Error::InvalidParameter(format!("histogram range [{lo}, {hi}]")));
    }
    let width = hi - lo;
    let bin_edges = (0..=bins)
        .map(|k| if k == bins { hi } else { lo + width * k as f64 / bins as f64 })
        .collect();
    let mut counts = vec![0u64; bins];
    for &s in scores {
        let pos = (s - lo) / width * bins as f64;
        let k = if pos.is_nan() || pos < 0.0 { 0 } else { (pos as usize).min(bins - 1) };
        counts[k] += 1;
    }
    Ok(Histogram {
        bin_edges,
        counts,
        n_total: scores.len() as u64,
    })
}

pub fn default_histogram(scores: &[f64]) -> Histogram {
    histogram(scores, DEFAULT_BINS, DEFAULT_RANGE.0, DEFAULT_RANGE.1).expect("valid defaults")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuplicateSpike {
    pub fraction: f64,
    pub flagged: bool,
}

/// Share of mated scores at (numerically) 1, the signature of the same image
/// stored several times under one identity.
pub fn duplicate_spike(mated_scores: &[f64], eps: f64) -> Result<DuplicateSpike> {
    if mated_scores.is_empty() {
        return Err(Error::EmptyInput("mated scores"));
    }
    let hits = mated_scores.iter().filter(|&&s| s >= 1.0 - eps).count();
    let fraction = hits as f64 / mated_scores.len() as f64;
    Ok(DuplicateSpike {
        fraction,
        flagged: fraction > DUPLICATE_FLAG_FRACTION,
    })
}

/// Everything derived from one genuine and one impostor score sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiometricSummary {
    pub genuine: ScoreStats,
    pub impostor: ScoreStats,
    pub operating_points: OperatingPoints,
    /// Undefined when both score sets have zero variance.
    pub fdr: Option<f64>,
    pub duplicates: DuplicateSpike,
    pub genuine_histogram: Histogram,
    pub impostor_histogram: Histogram,
}

pub fn summarize(genuine: &[f64], impostor: &[f64], bins: usize) -> Result<BiometricSummary> {
    let g = score_stats(genuine)?;
    let i = score_stats(impostor)?;
    let curve = det_sweep(genuine, impostor)?;
    let (lo, hi) = DEFAULT_RANGE;
    Ok(BiometricSummary {
        genuine: g,
        impostor: i,
        operating_points: operating_points(&curve),
        fdr: match fdr(&g, &i) {
            Ok(v) => Some(v),
            Err(Error::DegenerateVariances) => None,
            Err(e) => return Err(e),
        },
        duplicates: duplicate_spike(genuine, DUPLICATE_EPS)?,
        genuine_histogram: histogram(genuine, bins, lo, hi)?,
        impostor_histogram: histogram(impostor, bins, lo, hi)?,
    })
}
