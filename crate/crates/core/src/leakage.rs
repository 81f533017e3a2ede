//! Identity-leakage audit of a synthetic set against a real reference set.
//!
//! For every synthetic sample (or identity) the closest reference sample is
//! found by exact search; the distribution of those maxima, its upper tail
//! and the globally most similar cross pairs form the report. The verdict is
//! advisory only: a high score flags a pair for human inspection.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::biomet::{self, Histogram};
use crate::embs::EmbsReader;
use crate::embset::{self, EmbeddingSet, SampleMeta};
use crate::error::{Error, Result};
use crate::simkern::{Match, TopKResult, TopKSearch, CHUNK_ROWS};

pub const DEFAULT_TAIL_THRESHOLD: f64 = 0.4;
pub const DEFAULT_TOP_PAIRS: usize = 5;
/// Tail share at or above which a long tail is reported.
pub const LONG_TAIL_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LeakageMode {
    #[default]
    PerSample,
    PerIdentity,
}

impl std::str::FromStr for LeakageMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-sample" => Ok(Self::PerSample),
            "per-identity" => Ok(Self::PerIdentity),
            other => Err(Error::InvalidParameter(format!(
                "leakage mode `{other}` (expected per-sample|per-identity)"
            ))),
        }
    }
}

/// Closest reference sample for one synthetic sample or identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxRecord {
    pub query_index: usize,
    pub query_sample_id: String,
    pub query_identity: String,
    pub target_index: usize,
    pub target_sample_id: String,
    pub target_identity: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossPair {
    pub synthetic_index: usize,
    pub synthetic_sample_id: String,
    pub synthetic_identity: String,
    pub reference_index: usize,
    pub reference_sample_id: String,
    pub reference_identity: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageSummary {
    pub threshold: f64,
    pub tail_fraction: f64,
    pub long_tail: bool,
    pub histogram: Histogram,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub mode: LeakageMode,
    pub n_synthetic: usize,
    pub n_reference: usize,
    pub per_query_max: Vec<MaxRecord>,
    pub top_pairs: Vec<CrossPair>,
    pub summary: LeakageSummary,
}

/// A reference set the scanner can stream through in row chunks.
pub trait ReferenceSource {
    fn dim(&self) -> usize;
    fn manifest(&self) -> &[SampleMeta];
    /// Feeds every reference row, in order, into `search`. `progress` is
    /// called after each chunk with `(rows_done, rows_total)`.
    fn feed(&mut self, search: &mut TopKSearch, progress: &mut dyn FnMut(usize, usize)) -> Result<()>;
}

pub struct InMemoryReference<'a> {
    set: &'a EmbeddingSet,
    chunk_rows: usize,
}

impl<'a> InMemoryReference<'a> {
    pub fn new(set: &'a EmbeddingSet) -> Self {
        Self {
            set,
            chunk_rows: CHUNK_ROWS,
        }
    }
}

impl ReferenceSource for InMemoryReference<'_> {
    fn dim(&self) -> usize {
        self.set.dim()
    }

    fn manifest(&self) -> &[SampleMeta] {
        self.set.manifest()
    }

    fn feed(&mut self, search: &mut TopKSearch, progress: &mut dyn FnMut(usize, usize)) -> Result<()> {
        let total = self.set.len();
        for chunk in self.set.rows().chunks(self.chunk_rows) {
            search.absorb(chunk.iter().map(|r| r.as_slice()))?;
            progress(search.targets_seen(), total);
        }
        Ok(())
    }
}

/// Reference rows read chunk by chunk from an EMBS file; only the manifest
/// and one chunk are resident at a time. Rows are normalized and checked
/// exactly as ingestion would.
pub struct StreamedReference {
    reader: EmbsReader,
    manifest: Vec<SampleMeta>,
    chunk_rows: usize,
}

impl StreamedReference {
    pub fn open(matrix_path: impl AsRef<Path>, manifest_path: impl AsRef<Path>) -> Result<Self> {
        let reader = EmbsReader::open(matrix_path)?;
        let manifest = embset::read_manifest(manifest_path)?;
        if reader.header().n_samples != manifest.len() as u64 {
            return Err(Error::CountMismatch {
                matrix: reader.header().n_samples,
                manifest: manifest.len(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for m in &manifest {
            if m.identity.is_empty() {
                return Err(Error::EmptyIdentity(m.sample_id.clone()));
            }
            if !seen.insert(m.sample_id.as_str()) {
                return Err(Error::DuplicateSampleId(m.sample_id.clone()));
            }
        }
        Ok(Self {
            reader,
            manifest,
            chunk_rows: CHUNK_ROWS,
        })
    }

    /// Opens a stored set (matrix plus manifest sidecar).
    pub fn open_set(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::open(path, embset::manifest_sidecar(path))
    }

    pub fn with_chunk_rows(mut self, rows: usize) -> Self {
        self.chunk_rows = rows.max(1);
        self
    }
}

impl ReferenceSource for StreamedReference {
    fn dim(&self) -> usize {
        self.reader.dim()
    }

    fn manifest(&self) -> &[SampleMeta] {
        &self.manifest
    }

    fn feed(&mut self, search: &mut TopKSearch, progress: &mut dyn FnMut(usize, usize)) -> Result<()> {
        let dim = self.reader.dim();
        let total = self.manifest.len();
        while let Some(mut chunk) = self.reader.next_chunk(self.chunk_rows)? {
            let base = search.targets_seen();
            for (k, row) in chunk.chunks_exact_mut(dim).enumerate() {
                embset::normalize_row(row, &self.manifest[base + k].sample_id, base + k)?;
            }
            search.absorb_flat(&chunk)?;
            progress(search.targets_seen(), total);
        }
        Ok(())
    }
}

fn run_search(
    synthetic: &EmbeddingSet,
    reference: &mut dyn ReferenceSource,
    k: usize,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<Vec<TopKResult>> {
    if synthetic.dim() != reference.dim() {
        return Err(Error::DimMismatch(synthetic.dim(), reference.dim()));
    }
    if reference.manifest().is_empty() {
        return Err(Error::EmptyInput("reference set"));
    }
    let mut search = TopKSearch::new(synthetic, k)?;
    reference.feed(&mut search, progress)?;
    Ok(search.finish())
}

fn max_records(
    synthetic: &EmbeddingSet,
    reference: &[SampleMeta],
    results: &[TopKResult],
    mode: LeakageMode,
) -> Vec<MaxRecord> {
    let record = |q: usize, m: &Match| MaxRecord {
        query_index: q,
        query_sample_id: synthetic.meta(q).sample_id.clone(),
        query_identity: synthetic.meta(q).identity.clone(),
        target_index: m.target_index,
        target_sample_id: reference[m.target_index].sample_id.clone(),
        target_identity: reference[m.target_index].identity.clone(),
        score: m.score,
    };
    match mode {
        LeakageMode::PerSample => results
            .iter()
            .map(|r| record(r.query_index, &r.matches[0]))
            .collect(),
        LeakageMode::PerIdentity => synthetic
            .identities()
            .iter()
            .map(|id| {
                let mut best = id.samples[0];
                for &q in &id.samples[1..] {
                    if results[q].matches[0].score > results[best].matches[0].score {
                        best = q;
                    }
                }
                record(best, &results[best].matches[0])
            })
            .collect(),
    }
}

fn global_top_pairs(
    synthetic: &EmbeddingSet,
    reference: &[SampleMeta],
    results: &[TopKResult],
    k: usize,
) -> Vec<CrossPair> {
    let mut all: Vec<(usize, Match)> = results
        .iter()
        .flat_map(|r| r.matches.iter().map(move |m| (r.query_index, *m)))
        .collect();
    all.sort_by(|a, b| {
        b.1.score
            .total_cmp(&a.1.score)
            .then(a.0.cmp(&b.0))
            .then(a.1.target_index.cmp(&b.1.target_index))
    });
    all.truncate(k);
    all.into_iter()
        .map(|(q, m)| CrossPair {
            synthetic_index: q,
            synthetic_sample_id: synthetic.meta(q).sample_id.clone(),
            synthetic_identity: synthetic.meta(q).identity.clone(),
            reference_index: m.target_index,
            reference_sample_id: reference[m.target_index].sample_id.clone(),
            reference_identity: reference[m.target_index].identity.clone(),
            score: m.score,
        })
        .collect()
}

/// Maximum similarity to the reference set per synthetic sample, or per
/// synthetic identity.
pub fn closest_real(synthetic: &EmbeddingSet, reference: &EmbeddingSet, mode: LeakageMode) -> Result<Vec<MaxRecord>> {
    let results = run_search(synthetic, &mut InMemoryReference::new(reference), 1, &mut |_, _| {})?;
    Ok(max_records(synthetic, reference.manifest(), &results, mode))
}

/// The `k` most similar synthetic/reference pairs overall, ordered by score,
/// then synthetic index, then reference index.
pub fn top_pairs(synthetic: &EmbeddingSet, reference: &EmbeddingSet, k: usize) -> Result<Vec<CrossPair>> {
    let results = run_search(synthetic, &mut InMemoryReference::new(reference), k, &mut |_, _| {})?;
    Ok(global_top_pairs(synthetic, reference.manifest(), &results, k))
}

pub fn leakage_summary(max_scores: &[f64], threshold: f64) -> Result<LeakageSummary> {
    if max_scores.is_empty() {
        return Err(Error::EmptyInput("closest-sample scores"));
    }
    let tail = max_scores.iter().filter(|&&s| s >= threshold).count();
    let tail_fraction = tail as f64 / max_scores.len() as f64;
    let histogram = biomet::default_histogram(max_scores);
    let modal = histogram.modal_bin().expect("non-empty");
    let modal_center = 0.5 * (histogram.bin_edges[modal] + histogram.bin_edges[modal + 1]);
    let long_tail = tail_fraction >= LONG_TAIL_FRACTION && modal_center < threshold;
    let mut notes = Vec::new();
    if long_tail {
        notes.push(format!(
            "long tail: {tail} of {} closest-sample scores are at or above {threshold} while the mode is near {modal_center:.2}; inspect the top pairs",
            max_scores.len()
        ));
    } else if modal_center >= threshold {
        notes.push(format!(
            "the bulk of closest-sample scores (mode near {modal_center:.2}) is at or above {threshold}"
        ));
    }
    Ok(LeakageSummary {
        threshold,
        tail_fraction,
        long_tail,
        histogram,
        notes,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ScanOptions {
    pub mode: LeakageMode,
    pub top_k: usize,
    pub threshold: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            mode: LeakageMode::PerSample,
            top_k: DEFAULT_TOP_PAIRS,
            threshold: DEFAULT_TAIL_THRESHOLD,
        }
    }
}

/// Full audit in a single pass over the reference.
pub fn scan(
    synthetic: &EmbeddingSet,
    reference: &mut dyn ReferenceSource,
    opts: ScanOptions,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<LeakageReport> {
    if opts.top_k == 0 {
        return Err(Error::InvalidParameter("top-k must be at least 1".into()));
    }
    if synthetic.is_empty() {
        return Err(Error::EmptyInput("synthetic set"));
    }
    let results = run_search(synthetic, reference, opts.top_k, progress)?;
    let manifest = reference.manifest();
    let per_query_max = max_records(synthetic, manifest, &results, opts.mode);
    let top_pairs = global_top_pairs(synthetic, manifest, &results, opts.top_k);
    let scores: Vec<f64> = per_query_max.iter().map(|r| r.score).collect();
    let summary = leakage_summary(&scores, opts.threshold)?;
    Ok(LeakageReport {
        mode: opts.mode,
        n_synthetic: synthetic.len(),
        n_reference: manifest.len(),
        per_query_max,
        top_pairs,
        summary,
    })
}
