//! Embedding datasets: ingestion, validation and identity subsets.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::embs::{self, EmbsReader};
use crate::error::{Error, Result};
use crate::rng;

/// Vectors with an L2 norm below this are rejected as zero vectors.
pub const ZERO_NORM_TOL: f64 = 1e-12;
/// Stored vectors have a norm within this distance of 1.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub sample_id: String,
    pub identity: String,
    #[serde(default)]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Identity {
    pub label: String,
    /// Sample indices in ascending order.
    pub samples: Vec<usize>,
}

/// An immutable set of unit-norm embeddings with identity structure.
///
/// Identities are kept in order of first appearance in the manifest, which
/// fixes the iteration order every seeded operation depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    rows: Vec<Vec<f32>>,
    manifest: Vec<SampleMeta>,
    identities: Vec<Identity>,
    sample_identity: Vec<usize>,
    by_sample_id: HashMap<String, usize>,
}

/// Path of the manifest sidecar that accompanies a stored set.
pub fn manifest_sidecar(matrix_path: &Path) -> PathBuf {
    let mut s = matrix_path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleMeta>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
}

/// Brings `row` to unit length, leaving rows already within
/// [`UNIT_NORM_TOL`] untouched so that re-ingesting exported data is the
/// identity.
fn normalize(row: &mut [f32]) -> std::result::Result<(), NormDefect> {
    if row.iter().any(|v| !v.is_finite()) {
        return Err(NormDefect::NonFinite);
    }
    let norm = l2_norm(row);
    if norm < ZERO_NORM_TOL {
        return Err(NormDefect::Zero);
    }
    if (norm - 1.0).abs() > UNIT_NORM_TOL {
        for v in row.iter_mut() {
            *v = (*v as f64 / norm) as f32;
        }
    }
    Ok(())
}

enum NormDefect {
    Zero,
    NonFinite,
}

/// Normalizes one row in place, reporting defects against `sample_id`.
pub(crate) fn normalize_row(row: &mut [f32], sample_id: &str, index: usize) -> Result<()> {
    normalize(row).map_err(|d| match d {
        NormDefect::Zero => Error::ZeroVector {
            sample_id: sample_id.to_owned(),
            row: index,
        },
        NormDefect::NonFinite => Error::NonFiniteValue {
            sample_id: sample_id.to_owned(),
            row: index,
        },
    })
}

pub(crate) fn l2_norm(row: &[f32]) -> f64 {
    row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
}

impl EmbeddingSet {
    /// Builds a validated set, normalizing every row.
    pub fn new(dim: usize, mut rows: Vec<Vec<f32>>, manifest: Vec<SampleMeta>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be positive".into()));
        }
        if rows.len() != manifest.len() {
            return Err(Error::CountMismatch {
                matrix: rows.len() as u64,
                manifest: manifest.len(),
            });
        }
        for (i, (row, meta)) in rows.iter_mut().zip(&manifest).enumerate() {
            if row.len() != dim {
                return Err(Error::DimMismatch(row.len(), dim));
            }
            normalize_row(row, &meta.sample_id, i)?;
        }
        let mut seen = HashSet::with_capacity(manifest.len());
        for meta in &manifest {
            if meta.identity.is_empty() {
                return Err(Error::EmptyIdentity(meta.sample_id.clone()));
            }
            if !seen.insert(meta.sample_id.as_str()) {
                return Err(Error::DuplicateSampleId(meta.sample_id.clone()));
            }
        }
        Ok(Self::from_parts_unchecked(dim, rows, manifest))
    }

    /// Assembles a set without normalizing or checking anything. Intended
    /// for tests and for callers that have already validated their data;
    /// [`EmbeddingSet::validate`] reports whatever is wrong with the result.
    pub fn from_parts_unchecked(dim: usize, rows: Vec<Vec<f32>>, manifest: Vec<SampleMeta>) -> Self {
        let mut identities: Vec<Identity> = Vec::new();
        let mut by_label: HashMap<&str, usize> = HashMap::new();
        let mut sample_identity = Vec::with_capacity(manifest.len());
        for (i, meta) in manifest.iter().enumerate() {
            let id = *by_label.entry(meta.identity.as_str()).or_insert_with(|| {
                identities.push(Identity {
                    label: meta.identity.clone(),
                    samples: Vec::new(),
                });
                identities.len() - 1
            });
            identities[id].samples.push(i);
            sample_identity.push(id);
        }
        let mut by_sample_id = HashMap::with_capacity(manifest.len());
        for (i, meta) in manifest.iter().enumerate() {
            by_sample_id.entry(meta.sample_id.clone()).or_insert(i);
        }
        Self {
            dim,
            rows,
            manifest,
            identities,
            sample_identity,
            by_sample_id,
        }
    }

    /// Reads an EMBS matrix and its JSON manifest.
    pub fn ingest(matrix_path: impl AsRef<Path>, manifest_path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = EmbsReader::open(matrix_path.as_ref())?;
        let header = reader.header();
        let manifest = read_manifest(manifest_path)?;
        if header.n_samples != manifest.len() as u64 {
            return Err(Error::CountMismatch {
                matrix: header.n_samples,
                manifest: manifest.len(),
            });
        }
        let dim = reader.dim();
        let mut rows = Vec::with_capacity(manifest.len());
        while let Some(chunk) = reader.next_chunk(4096)? {
            rows.extend(chunk.chunks_exact(dim).map(|r| r.to_vec()));
        }
        Self::new(dim, rows, manifest)
    }

    /// Loads a set stored as `path` plus its manifest sidecar.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::ingest(path, manifest_sidecar(path))
    }

    pub fn export(&self, matrix_path: impl AsRef<Path>, manifest_path: impl AsRef<Path>) -> Result<()> {
        embs::write_embs(
            matrix_path,
            self.dim,
            self.len(),
            self.rows.iter().map(|r| r.as_slice()),
        )?;
        let manifest_path = manifest_path.as_ref();
        let json = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(manifest_path, json).map_err(|e| Error::io(manifest_path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.export(path, manifest_sidecar(path))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f32>] {
        &self.rows
    }

    pub fn manifest(&self) -> &[SampleMeta] {
        &self.manifest
    }

    pub fn meta(&self, i: usize) -> &SampleMeta {
        &self.manifest[i]
    }

    pub fn identities(&self) -> &[Identity] {
        &self.identities
    }

    /// Ordinal (into [`EmbeddingSet::identities`]) of the identity owning sample `i`.
    pub fn identity_of(&self, i: usize) -> usize {
        self.sample_identity[i]
    }

    pub fn index_of(&self, sample_id: &str) -> Option<usize> {
        self.by_sample_id.get(sample_id).copied()
    }

    pub fn validate(&self) -> ValidationReport {
        let mut defects = Vec::new();
        let mut seen = HashSet::new();
        for (i, meta) in self.manifest.iter().enumerate() {
            let id = &meta.sample_id;
            if !seen.insert(id.as_str()) {
                defects.push(Defect::new(id, DefectKind::DuplicateId));
            }
            if meta.identity.is_empty() {
                defects.push(Defect::new(id, DefectKind::EmptyIdentity));
            }
            let Some(row) = self.rows.get(i) else {
                defects.push(Defect::new(id, DefectKind::DimMismatch));
                continue;
            };
            if row.len() != self.dim {
                defects.push(Defect::new(id, DefectKind::DimMismatch));
            }
            if row.iter().any(|v| !v.is_finite()) {
                defects.push(Defect::new(id, DefectKind::NonFinite));
                continue;
            }
            let norm = l2_norm(row);
            if norm < ZERO_NORM_TOL {
                defects.push(Defect::new(id, DefectKind::ZeroVector));
            } else if (norm - 1.0).abs() > UNIT_NORM_TOL {
                defects.push(Defect::new(id, DefectKind::NonUnitNorm));
            }
        }
        for i in self.manifest.len()..self.rows.len() {
            defects.push(Defect::new(&format!("<row {i}>"), DefectKind::DimMismatch));
        }

        let mut counts: Vec<usize> = self.identities.iter().map(|id| id.samples.len()).collect();
        counts.sort_unstable();
        let samples_per_identity = if counts.is_empty() {
            CountSummary::default()
        } else {
            let mid = counts.len() / 2;
            let median = if counts.len() % 2 == 1 {
                counts[mid] as f64
            } else {
                (counts[mid - 1] + counts[mid]) as f64 / 2.0
            };
            CountSummary {
                min: counts[0],
                median,
                max: counts[counts.len() - 1],
            }
        };
        ValidationReport {
            n_samples: self.manifest.len(),
            n_identities: self.identities.len(),
            samples_per_identity,
            defects,
        }
    }

    /// Keeps every sample of `⌈fraction · n_identities⌉` identities chosen
    /// uniformly without replacement.
    pub fn subset(&self, identity_fraction: f64, seed: u64) -> Result<Self> {
        if !(identity_fraction > 0.0 && identity_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "identity fraction {identity_fraction} not in (0, 1]"
            )));
        }
        let n_id = self.identities.len();
        // The small slack keeps e.g. 0.3 * 10 from rounding up to 4.
        let keep = ((identity_fraction * n_id as f64) - 1e-9).ceil().max(0.0) as usize;
        let keep = keep.min(n_id);
        if keep < 2 {
            return Err(Error::TooFewIdentities {
                needed: 2,
                have: keep,
            });
        }
        let mut rng = rng::seeded(seed);
        let mut chosen = vec![false; n_id];
        for id in index::sample(&mut rng, n_id, keep).iter() {
            chosen[id] = true;
        }
        let kept: Vec<usize> = (0..self.len())
            .filter(|&i| chosen[self.sample_identity[i]])
            .collect();
        let rows = kept.iter().map(|&i| self.rows[i].clone()).collect();
        let manifest = kept.iter().map(|&i| self.manifest[i].clone()).collect();
        Ok(Self::from_parts_unchecked(self.dim, rows, manifest))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefectKind {
    ZeroVector,
    NonFinite,
    DimMismatch,
    DuplicateId,
    NonUnitNorm,
    EmptyIdentity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Defect {
    pub sample_id: String,
    pub kind: DefectKind,
}

impl Defect {
    fn new(sample_id: &str, kind: DefectKind) -> Self {
        Self {
            sample_id: sample_id.to_owned(),
            kind,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CountSummary {
    pub min: usize,
    pub median: f64,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_samples: usize,
    pub n_identities: usize,
    pub samples_per_identity: CountSummary,
    pub defects: Vec<Defect>,
}
