//! Seeded sampling of mated and non-mated comparison pairs.
//!
//! All samplers draw with replacement and emit unordered pairs as `(i, j)`
//! with `i < j`. Mated pairs can be drawn under different weighting laws;
//! each law is a [`MatedSampler`] registered by name.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embset::EmbeddingSet;
use crate::error::{Error, Result};
use crate::rng::{self, ToolkitRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    Mated,
    Nonmated,
}

impl std::str::FromStr for PairKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mated" => Ok(PairKind::Mated),
            "nonmated" => Ok(PairKind::Nonmated),
            other => Err(Error::InvalidParameter(format!(
                "pair kind `{other}` (expected mated|nonmated)"
            ))),
        }
    }
}

impl std::fmt::Display for PairKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PairKind::Mated => "mated",
            PairKind::Nonmated => "nonmated",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSample {
    pub kind: PairKind,
    pub pairs: Vec<(usize, usize)>,
    pub seed: u64,
    pub source_set: String,
}

/// Number of unordered pairs among `n` items.
pub fn pair_count(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

/// Maps `rank` in `[0, C(n,2))` to the `rank`-th pair `(a, b)`, `a < b`, in
/// lexicographic order.
fn unrank_pair(n: usize, rank: u64) -> (usize, usize) {
    let n = n as u64;
    // Pairs before row a: a(2n - a - 1)/2.
    let before = |a: u64| a * (2 * n - a - 1) / 2;
    let nf = n as f64;
    let disc = (2.0 * nf - 1.0).powi(2) - 8.0 * rank as f64;
    let mut a = (((2.0 * nf - 1.0) - disc.max(0.0).sqrt()) / 2.0).floor().max(0.0) as u64;
    a = a.min(n - 2);
    while a > 0 && before(a) > rank {
        a -= 1;
    }
    while a + 1 < n - 1 && before(a + 1) <= rank {
        a += 1;
    }
    let b = a + 1 + (rank - before(a));
    (a as usize, b as usize)
}

/// A law for drawing mated pairs.
pub trait MatedSampler: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    /// Draws `n` pairs. `eligible` lists identity ordinals with at least two
    /// samples and is never empty.
    fn draw(&self, set: &EmbeddingSet, eligible: &[usize], n: usize, rng: &mut ToolkitRng) -> Vec<(usize, usize)>;
}

/// Uniform over all valid unordered mated pairs: identity `i` is hit with
/// probability proportional to `C(n_i, 2)`.
pub struct PerPair;

impl MatedSampler for PerPair {
    fn name(&self) -> &'static str {
        "per-pair"
    }

    fn description(&self) -> &'static str {
        "uniform over all same-identity pairs"
    }

    fn draw(&self, set: &EmbeddingSet, eligible: &[usize], n: usize, rng: &mut ToolkitRng) -> Vec<(usize, usize)> {
        let ids = set.identities();
        let mut cumulative = Vec::with_capacity(eligible.len());
        let mut total = 0u64;
        for &id in eligible {
            total += pair_count(ids[id].samples.len());
            cumulative.push(total);
        }
        (0..n)
            .map(|_| {
                let r = rng.gen_range(0..total);
                let slot = cumulative.partition_point(|&c| c <= r);
                let offset = if slot == 0 { 0 } else { cumulative[slot - 1] };
                let samples = &ids[eligible[slot]].samples;
                let (a, b) = unrank_pair(samples.len(), r - offset);
                (samples[a], samples[b])
            })
            .collect()
    }
}

/// Identity first (uniform over identities with two or more samples), then
/// a uniform pair within it.
pub struct PerIdentity;

impl MatedSampler for PerIdentity {
    fn name(&self) -> &'static str {
        "per-identity"
    }

    fn description(&self) -> &'static str {
        "uniform identity, then uniform pair within it"
    }

    fn draw(&self, set: &EmbeddingSet, eligible: &[usize], n: usize, rng: &mut ToolkitRng) -> Vec<(usize, usize)> {
        let ids = set.identities();
        (0..n)
            .map(|_| {
                let samples = &ids[eligible[rng.gen_range(0..eligible.len())]].samples;
                let r = rng.gen_range(0..pair_count(samples.len()));
                let (a, b) = unrank_pair(samples.len(), r);
                (samples[a], samples[b])
            })
            .collect()
    }
}

static MATED_SAMPLERS: [&dyn MatedSampler; 2] = [&PerPair, &PerIdentity];

pub const DEFAULT_MATED_SAMPLER: &str = "per-pair";

pub fn mated_samplers() -> &'static [&'static dyn MatedSampler] {
    &MATED_SAMPLERS
}

pub fn mated_sampler(name: &str) -> Result<&'static dyn MatedSampler> {
    MATED_SAMPLERS
        .iter()
        .copied()
        .find(|s| s.name() == name)
        .ok_or_else(|| Error::UnknownStrategy {
            kind: "mated sampler",
            name: name.to_owned(),
            known: MATED_SAMPLERS.iter().map(|s| s.name()).collect::<Vec<_>>().join(", "),
        })
}

pub fn sample_mated(set: &EmbeddingSet, n: usize, seed: u64) -> Result<PairSample> {
    sample_mated_with(set, n, seed, &PerPair)
}

pub fn sample_mated_with(
    set: &EmbeddingSet,
    n: usize,
    seed: u64,
    sampler: &dyn MatedSampler,
) -> Result<PairSample> {
    let eligible: Vec<usize> = set
        .identities()
        .iter()
        .enumerate()
        .filter(|(_, id)| id.samples.len() >= 2)
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return Err(Error::NoMatedPairs);
    }
    let mut rng = rng::seeded(seed);
    Ok(PairSample {
        kind: PairKind::Mated,
        pairs: sampler.draw(set, &eligible, n, &mut rng),
        seed,
        source_set: String::new(),
    })
}

/// Draws `i` uniformly over all samples, then `j` uniformly over the samples
/// of every other identity.
pub fn sample_nonmated(set: &EmbeddingSet, n: usize, seed: u64) -> Result<PairSample> {
    let ids = set.identities();
    if ids.len() < 2 {
        return Err(Error::SingleIdentitySet);
    }
    // Samples grouped by identity, so "everything outside identity k" is the
    // grouped order with one contiguous block removed.
    let mut grouped = Vec::with_capacity(set.len());
    let mut start = Vec::with_capacity(ids.len());
    for id in ids {
        start.push(grouped.len());
        grouped.extend_from_slice(&id.samples);
    }
    let total = set.len();
    let mut rng = rng::seeded(seed);
    let pairs = (0..n)
        .map(|_| {
            let i = rng.gen_range(0..total);
            let id = set.identity_of(i);
            let own = ids[id].samples.len();
            let r = rng.gen_range(0..total - own);
            let j = if r < start[id] { grouped[r] } else { grouped[r + own] };
            (i.min(j), i.max(j))
        })
        .collect();
    Ok(PairSample {
        kind: PairKind::Nonmated,
        pairs,
        seed,
        source_set: String::new(),
    })
}

/// Every unordered mated pair, sorted by `(i, j)`.
pub fn enumerate_mated(set: &EmbeddingSet) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for id in set.identities() {
        for (a, &i) in id.samples.iter().enumerate() {
            for &j in &id.samples[a + 1..] {
                out.push((i, j));
            }
        }
    }
    out.sort_unstable();
    out
}
