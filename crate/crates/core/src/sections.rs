//! The sections of a one-shot audit. Each section is an [`AuditSection`]
//! registered by name; the audit runs every requested section whose inputs
//! are present.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::benchrel::{self, AccuracyMatrix};
use crate::biomet;
use crate::embset::EmbeddingSet;
use crate::error::{Error, Result};
use crate::leakage::{self, LeakageMode, ScanOptions, StreamedReference};
use crate::pairsample::{self, DEFAULT_MATED_SAMPLER};
use crate::report::{AuditReport, BiasSection, BiometricSection};
use crate::rng;
use crate::simkern;
use crate::verify::{self, PairList};

/// Tunable parameters shared by all sections.
#[derive(Debug, Clone)]
pub struct AuditParams {
    pub n: usize,
    pub seed: u64,
    pub mated_sampler: String,
    pub bins: usize,
    pub top_k: usize,
    pub threshold: f64,
    pub mode: LeakageMode,
    pub chunk_rows: usize,
    /// Consistency segments; the consistency check runs only when set.
    pub segments: Option<usize>,
    pub fraction: f64,
}

impl Default for AuditParams {
    fn default() -> Self {
        Self {
            n: 1_000_000,
            seed: 0,
            mated_sampler: DEFAULT_MATED_SAMPLER.to_string(),
            bins: biomet::DEFAULT_BINS,
            top_k: leakage::DEFAULT_TOP_PAIRS,
            threshold: leakage::DEFAULT_TAIL_THRESHOLD,
            mode: LeakageMode::PerSample,
            chunk_rows: simkern::CHUNK_ROWS,
            segments: None,
            fraction: 0.5,
        }
    }
}

pub struct AuditInputs<'a> {
    pub synthetic: &'a EmbeddingSet,
    /// Reference set path, streamed in chunks.
    pub reference: Option<PathBuf>,
    pub pairs: Option<PairList>,
    pub groups: Option<BTreeMap<String, PairList>>,
    /// Accuracy matrix and the name of the synthetic benchmark column.
    pub matrix: Option<(AccuracyMatrix, String)>,
    pub params: AuditParams,
    pub progress: &'a (dyn Fn(&str) + Sync),
}

pub trait AuditSection: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn applicable(&self, inputs: &AuditInputs) -> bool;
    fn run(&self, inputs: &AuditInputs, report: &mut AuditReport) -> Result<()>;
}

/// Distribution statistics and operating points from sampled mated and
/// non-mated comparisons. The non-mated draw uses `derive_seed(seed, 1)`.
pub fn biometric(set: &EmbeddingSet, params: &AuditParams) -> Result<BiometricSection> {
    let sampler = pairsample::mated_sampler(&params.mated_sampler)?;
    let mated = pairsample::sample_mated_with(set, params.n, params.seed, sampler)?;
    let nonmated = pairsample::sample_nonmated(set, params.n, rng::derive_seed(params.seed, 1))?;
    let genuine = simkern::pair_scores(set, &mated.pairs)?;
    let impostor = simkern::pair_scores(set, &nonmated.pairs)?;
    Ok(BiometricSection {
        mated_sampler: sampler.name().to_string(),
        n_per_kind: params.n,
        summary: biomet::summarize(&genuine, &impostor, params.bins)?,
    })
}

struct Biometric;

impl AuditSection for Biometric {
    fn name(&self) -> &'static str {
        "biometric"
    }
    fn description(&self) -> &'static str {
        "mated/non-mated score statistics, EER, FMR100, FMR1000, FDR, duplicates"
    }
    fn applicable(&self, _: &AuditInputs) -> bool {
        true
    }
    fn run(&self, inputs: &AuditInputs, report: &mut AuditReport) -> Result<()> {
        report.seeds.insert("biometric.mated".into(), inputs.params.seed);
        report
            .seeds
            .insert("biometric.nonmated".into(), rng::derive_seed(inputs.params.seed, 1));
        report.sections.biometric = Some(biometric(inputs.synthetic, &inputs.params)?);
        Ok(())
    }
}

struct Leakage;

impl AuditSection for Leakage {
    fn name(&self) -> &'static str {
        "leakage"
    }
    fn description(&self) -> &'static str {
        "closest real sample per synthetic sample and top cross-set pairs"
    }
    fn applicable(&self, inputs: &AuditInputs) -> bool {
        inputs.reference.is_some()
    }
    fn run(&self, inputs: &AuditInputs, report: &mut AuditReport) -> Result<()> {
        let path = inputs.reference.as_ref().expect("checked by applicable");
        let mut source = StreamedReference::open_set(path)?.with_chunk_rows(inputs.params.chunk_rows);
        let p = &inputs.params;
        let opts = ScanOptions {
            mode: p.mode,
            top_k: p.top_k,
            threshold: p.threshold,
        };
        let mut progress = |done: usize, total: usize| (inputs.progress)(&format!("leakage: {done}/{total} reference rows"));
        report.sections.leakage = Some(leakage::scan(inputs.synthetic, &mut source, opts, &mut progress)?);
        Ok(())
    }
}

struct Verification;

impl AuditSection for Verification {
    fn name(&self) -> &'static str {
        "verification"
    }
    fn description(&self) -> &'static str {
        "k-fold pair-list verification accuracy"
    }
    fn applicable(&self, inputs: &AuditInputs) -> bool {
        inputs.pairs.is_some()
    }
    fn run(&self, inputs: &AuditInputs, report: &mut AuditReport) -> Result<()> {
        let pairs = inputs.pairs.as_ref().expect("checked by applicable");
        report.sections.verification = Some(verify::kfold_accuracy(inputs.synthetic, pairs)?);
        Ok(())
    }
}

struct Bias;

impl AuditSection for Bias {
    fn name(&self) -> &'static str {
        "bias"
    }
    fn description(&self) -> &'static str {
        "per-group verification accuracy, unweighted average and largest gap"
    }
    fn applicable(&self, inputs: &AuditInputs) -> bool {
        inputs.groups.is_some()
    }
    fn run(&self, inputs: &AuditInputs, report: &mut AuditReport) -> Result<()> {
        let groups = inputs.groups.as_ref().expect("checked by applicable");
        let g = verify::group_accuracy(inputs.synthetic, groups)?;
        let gap = if g.per_group.len() >= 2 { Some(verify::max_gap(&g)?) } else { None };
        report.sections.bias = Some(BiasSection { groups: g, gap });
        Ok(())
    }
}

struct Reliability;

impl AuditSection for Reliability {
    fn name(&self) -> &'static str {
        "reliability"
    }
    fn description(&self) -> &'static str {
        "benchmark correlation over an accuracy matrix and segment consistency"
    }
    fn applicable(&self, inputs: &AuditInputs) -> bool {
        inputs.matrix.is_some() || (inputs.pairs.is_some() && inputs.params.segments.is_some())
    }
    fn run(&self, inputs: &AuditInputs, report: &mut AuditReport) -> Result<()> {
        let p = &inputs.params;
        let mut rel = match &inputs.matrix {
            Some((m, name)) => benchrel::assess_benchmark(m, name)?,
            None => benchrel::ReliabilityReport {
                synthetic: String::new(),
                correlations: Vec::new(),
                consistency: None,
            },
        };
        if let (Some(pairs), Some(segments)) = (&inputs.pairs, p.segments) {
            report.seeds.insert("reliability.consistency".into(), p.seed);
            rel.consistency = Some(benchrel::consistency(inputs.synthetic, pairs, segments, p.fraction, p.seed)?);
        }
        report.sections.reliability = Some(rel);
        Ok(())
    }
}

static SECTIONS: [&dyn AuditSection; 5] = [&Biometric, &Leakage, &Verification, &Bias, &Reliability];

pub fn sections() -> &'static [&'static dyn AuditSection] {
    &SECTIONS
}

pub fn section(name: &str) -> Result<&'static dyn AuditSection> {
    SECTIONS
        .iter()
        .copied()
        .find(|s| s.name() == name)
        .ok_or_else(|| Error::UnknownStrategy {
            kind: "audit section",
            name: name.to_owned(),
            known: SECTIONS.iter().map(|s| s.name()).collect::<Vec<_>>().join(", "),
        })
}

/// Runs the selected sections (all when `selected` is empty) in registry
/// order, skipping those whose inputs are absent.
pub fn run_audit(inputs: &AuditInputs, selected: &[String], report: &mut AuditReport) -> Result<Vec<&'static str>> {
    for name in selected {
        section(name)?;
    }
    let mut ran = Vec::new();
    for s in sections() {
        if !selected.is_empty() && !selected.iter().any(|n| n == s.name()) {
            continue;
        }
        if !s.applicable(inputs) {
            if !selected.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "section `{}` requested but its inputs are missing",
                    s.name()
                )));
            }
            continue;
        }
        (inputs.progress)(&format!("audit: {}", s.name()));
        s.run(inputs, report)?;
        ran.push(s.name());
    }
    Ok(ran)
}
