//! Command-line front end. [`run`] parses arguments, executes one
//! subcommand and maps the outcome onto the process exit code.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::benchrel::{self, AccuracyMatrix};
use crate::biomet::{Histogram, ScoreStats};
use crate::embset::{manifest_sidecar, EmbeddingSet};
use crate::error::{Error, Result};
use crate::leakage::{self, LeakageMode, ScanOptions, StreamedReference};
use crate::pairsample::{self, PairKind};
use crate::report::{self, AuditReport, Format, InputDigest};
use crate::sections::{self, AuditInputs, AuditParams};
use crate::simkern::{self, TopKSearch};
use crate::verify::{self, PairList};
use crate::leakage::ReferenceSource;

const DEFAULTS: &str = "\
Defaults:
  -n 1000000        comparisons per kind, the one-million-comparisons-per-kind protocol
  -k 10             cross-validation folds, the ten-fold pair-verification protocol
  --topk 5          cross-set pairs listed for inspection, the top-5 inspection protocol
  --threshold 0.4   leakage tail bound; closest-real scores below it are the low-similarity bulk
  --bins 100        histogram bins over [-1, 1]
  --workers         available parallelism (env FACEAUDIT_WORKERS)

Exit codes: 0 success, 1 invalid arguments or parameters, 2 data-integrity
defect in an input, 3 I/O failure.";

#[derive(Debug, Parser)]
#[command(name = "faceaudit", version, about = "Audit toolkit for face-embedding datasets", after_help = DEFAULTS)]
struct Cli {
    /// Worker threads [default: available parallelism]
    #[arg(long, global = true, env = "FACEAUDIT_WORKERS", value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
    /// Suppress progress messages on stderr
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Validate, normalize and store an embedding matrix with its manifest
    Ingest {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output set path; the manifest is written next to it
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw seeded mated or non-mated comparison pairs
    Pairs {
        #[arg(long)]
        set: PathBuf,
        /// mated or nonmated
        #[arg(long)]
        kind: PairKind,
        /// Number of pairs
        #[arg(short, long, default_value_t = 1_000_000, value_parser = positive)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        sampler: SamplerArgs,
        /// Output CSV (sample_id_a,sample_id_b)
        #[arg(long)]
        out: PathBuf,
    },
    /// Mated/non-mated score distributions and operating points
    Dist {
        #[arg(long)]
        set: PathBuf,
        /// Comparisons per kind
        #[arg(short, long, default_value_t = 1_000_000, value_parser = positive)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        sampler: SamplerArgs,
        /// Histogram bins over [-1, 1]
        #[arg(long, default_value_t = 100, value_parser = positive)]
        bins: usize,
        /// Output JSON; a histogram CSV is written next to it
        #[arg(long)]
        out: PathBuf,
    },
    /// Closest-real-sample scan of a synthetic set against a reference set
    Leakage {
        #[arg(long)]
        synthetic: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[command(flatten)]
        leak: LeakArgs,
        /// Output JSON; a histogram CSV is written next to it
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact top-k most similar targets for every query sample
    Topk {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(short, default_value_t = 5, value_parser = positive)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// k-fold verification accuracy over a pair list
    Verify {
        #[arg(long)]
        set: PathBuf,
        /// Pair list CSV (sample_id_a,sample_id_b,label)
        #[arg(long)]
        pairs: PathBuf,
        /// Cross-validation folds
        #[arg(short, default_value_t = 10, value_parser = at_least_two)]
        k: usize,
        /// Shuffle pairs with this seed before forming folds
        #[arg(long)]
        shuffle_folds: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-group verification accuracy with unweighted average
    Bias {
        #[arg(long)]
        set: PathBuf,
        /// Directory of `<group>.csv` pair lists
        #[arg(long)]
        groups: PathBuf,
        #[arg(short, default_value_t = 10, value_parser = at_least_two)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlate a synthetic benchmark with real ones over model accuracies
    BenchAssess {
        /// Accuracy CSV (model,benchmark,accuracy)
        #[arg(long)]
        matrix: PathBuf,
        /// Name of the synthetic benchmark column
        #[arg(long)]
        synthetic: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verification accuracy spread across identity-subset segments
    Consistency {
        #[arg(long)]
        set: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 10, value_parser = at_least_two)]
        segments: usize,
        /// Share of identities kept per segment
        #[arg(long, default_value_t = 0.5, value_parser = fraction)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, default_value_t = 10, value_parser = at_least_two)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every applicable section and emit one audit report
    Audit(AuditArgs),
    /// Re-emit a saved audit report in other formats
    Report {
        /// Audit report JSON
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated subset of json, csv, svg
        #[arg(long, value_delimiter = ',', default_value = "json,csv,svg")]
        formats: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "audit")]
        stem: String,
    },
}

#[derive(Debug, Args)]
struct SamplerArgs {
    /// Mated sampling law
    #[arg(long, default_value = pairsample::DEFAULT_MATED_SAMPLER)]
    sampler: String,
    /// Shorthand for `--sampler per-identity`
    #[arg(long, conflicts_with = "sampler")]
    per_identity: bool,
}

impl SamplerArgs {
    fn name(&self) -> String {
        if self.per_identity {
            "per-identity".into()
        } else {
            self.sampler.clone()
        }
    }
}

#[derive(Debug, Args)]
struct LeakArgs {
    /// per-sample or per-identity maxima
    #[arg(long, default_value = "per-sample")]
    mode: LeakageMode,
    /// Cross-set pairs to list
    #[arg(long, default_value_t = 5, value_parser = positive)]
    topk: usize,
    /// Leakage tail threshold
    #[arg(long, default_value_t = 0.4, value_parser = score, allow_negative_numbers = true)]
    threshold: f64,
    /// Reference rows per streamed chunk
    #[arg(long, default_value_t = simkern::CHUNK_ROWS, value_parser = positive)]
    chunk_rows: usize,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[arg(long)]
    synthetic: PathBuf,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Directory of `<group>.csv` pair lists
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Accuracy CSV; requires --benchmark
    #[arg(long, requires = "benchmark")]
    matrix: Option<PathBuf>,
    /// Synthetic benchmark column in --matrix
    #[arg(long)]
    benchmark: Option<String>,
    /// Consistency segments; enables the consistency check
    #[arg(long, value_parser = at_least_two)]
    segments: Option<usize>,
    #[arg(long, default_value_t = 0.5, value_parser = fraction)]
    fraction: f64,
    #[arg(short, long, default_value_t = 1_000_000, value_parser = positive)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long, default_value_t = 100, value_parser = positive)]
    bins: usize,
    #[arg(short, default_value_t = 10, value_parser = at_least_two)]
    k: usize,
    #[command(flatten)]
    leak: LeakArgs,
    /// Comma-separated sections to run [default: all applicable]
    #[arg(long, value_delimiter = ',')]
    sections: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "json,csv,svg")]
    formats: Vec<String>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value = "audit")]
    stem: String,
}

fn positive(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("`{s}` is not a positive integer")),
    }
}

fn at_least_two(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 2 => Ok(v),
        _ => Err(format!("`{s}` is not an integer >= 2")),
    }
}

fn fraction(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v <= 1.0 => Ok(v),
        _ => Err(format!("`{s}` is not in (0, 1]")),
    }
}

fn score(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (-1.0..=1.0).contains(&v) => Ok(v),
        _ => Err(format!("`{s}` is not in [-1, 1]")),
    }
}

/// Runs the command line `argv` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        pool = pool.num_threads(w as usize);
    }
    let outcome = pool
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
        .and_then(|pool| pool.install(|| execute(cli.command, cli.quiet)));
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("faceaudit: error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Serialize)]
struct Output<T: Serialize> {
    schema: &'static str,
    toolkit_version: &'static str,
    inputs: Vec<InputDigest>,
    #[serde(flatten)]
    body: T,
}

fn digest(role: &str, path: &Path) -> Result<InputDigest> {
    Ok(InputDigest {
        role: role.to_string(),
        path: path.display().to_string(),
        sha256: report::sha256_file(path)?,
    })
}

fn set_digests(role: &str, path: &Path) -> Result<Vec<InputDigest>> {
    Ok(vec![
        digest(role, path)?,
        digest(&format!("{role}.manifest"), &manifest_sidecar(path))?,
    ])
}

fn write_json<T: Serialize>(path: &Path, inputs: Vec<InputDigest>, body: T) -> Result<()> {
    let out = Output {
        schema: report::SCHEMA,
        toolkit_version: report::TOOLKIT_VERSION,
        inputs,
        body,
    };
    let json = report::to_canonical_json(&out)?;
    report::write_atomic(path, json.as_bytes())
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn read_groups(dir: &Path, k: usize) -> Result<BTreeMap<String, PairList>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut groups = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let name = path.file_stem().expect("csv file has a stem").to_string_lossy().into_owned();
        groups.insert(name, PairList::read_csv(&path, k)?);
    }
    if groups.is_empty() {
        return Err(Error::InvalidParameter(format!("no <group>.csv files in {}", dir.display())));
    }
    Ok(groups)
}

fn parse_formats(names: &[String]) -> Result<Vec<Format>> {
    names.iter().map(|s| s.parse()).collect()
}

#[derive(Serialize)]
struct DistHistograms<'a> {
    genuine: &'a Histogram,
    impostor: &'a Histogram,
}

#[derive(Serialize)]
struct DistBody<'a> {
    seeds: BTreeMap<&'static str, u64>,
    mated_sampler: &'a str,
    genuine: &'a ScoreStats,
    impostor: &'a ScoreStats,
    eer: f64,
    eer_threshold: f64,
    fmr100: f64,
    fmr1000: f64,
    fmr100_saturated: bool,
    fmr1000_saturated: bool,
    fdr: Option<f64>,
    duplicate_fraction: f64,
    duplicates_flagged: bool,
    histograms: DistHistograms<'a>,
}

#[derive(Serialize)]
struct TopKMatchOut<'a> {
    target_index: usize,
    target_sample_id: &'a str,
    score: f64,
}

#[derive(Serialize)]
struct TopKOut<'a> {
    query_index: usize,
    query_sample_id: &'a str,
    matches: Vec<TopKMatchOut<'a>>,
}

fn execute(command: Command, quiet: bool) -> Result<()> {
    let progress = move |msg: &str| {
        if !quiet {
            eprintln!("{msg}");
        }
    };
    match command {
        Command::Ingest { matrix, manifest, out } => {
            let set = EmbeddingSet::ingest(&matrix, &manifest)?;
            set.save(&out)?;
            let validation = set.validate();
            let json = report::to_canonical_json(&validation)?;
            print!("{json}");
            progress(&format!("ingested {} samples into {}", set.len(), out.display()));
        }
        Command::Pairs {
            set,
            kind,
            n,
            seed,
            sampler,
            out,
        } => {
            let s = EmbeddingSet::load(&set)?;
            let sample = match kind {
                PairKind::Mated => pairsample::sample_mated_with(&s, n, seed, pairsample::mated_sampler(&sampler.name())?)?,
                PairKind::Nonmated => pairsample::sample_nonmated(&s, n, seed)?,
            };
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["sample_id_a", "sample_id_b"]).expect("in-memory csv");
            for &(a, b) in &sample.pairs {
                w.write_record([&s.meta(a).sample_id, &s.meta(b).sample_id]).expect("in-memory csv");
            }
            report::write_atomic(&out, &w.into_inner().expect("in-memory csv"))?;
        }
        Command::Dist {
            set,
            n,
            seed,
            sampler,
            bins,
            out,
        } => {
            let s = EmbeddingSet::load(&set)?;
            let params = AuditParams {
                n,
                seed,
                mated_sampler: sampler.name(),
                bins,
                ..AuditParams::default()
            };
            let section = sections::biometric(&s, &params)?;
            let sum = &section.summary;
            let op = &sum.operating_points;
            let body = DistBody {
                seeds: BTreeMap::from([("mated", seed), ("nonmated", crate::rng::derive_seed(seed, 1))]),
                mated_sampler: &section.mated_sampler,
                genuine: &sum.genuine,
                impostor: &sum.impostor,
                eer: op.eer,
                eer_threshold: op.eer_threshold,
                fmr100: op.fmr100,
                fmr1000: op.fmr1000,
                fmr100_saturated: op.fmr100_saturated,
                fmr1000_saturated: op.fmr1000_saturated,
                fdr: sum.fdr,
                duplicate_fraction: sum.duplicates.fraction,
                duplicates_flagged: sum.duplicates.flagged,
                histograms: DistHistograms {
                    genuine: &sum.genuine_histogram,
                    impostor: &sum.impostor_histogram,
                },
            };
            let csv = report::histogram_pair_csv(&sum.genuine_histogram, &sum.impostor_histogram)?;
            write_json(&out, set_digests("set", &set)?, body)?;
            report::write_atomic(&sidecar(&out, "csv"), csv.as_bytes())?;
        }
        Command::Leakage {
            synthetic,
            reference,
            leak,
            out,
        } => {
            let syn = EmbeddingSet::load(&synthetic)?;
            let mut source = StreamedReference::open_set(&reference)?.with_chunk_rows(leak.chunk_rows);
            let opts = ScanOptions {
                mode: leak.mode,
                top_k: leak.topk,
                threshold: leak.threshold,
            };
            let mut chunk_progress = |done: usize, total: usize| progress(&format!("leakage: {done}/{total} reference rows"));
            let rep = leakage::scan(&syn, &mut source, opts, &mut chunk_progress)?;
            let mut inputs = set_digests("synthetic", &synthetic)?;
            inputs.extend(set_digests("reference", &reference)?);
            let csv = report::histogram_csv(&rep.summary.histogram);
            write_json(&out, inputs, &rep)?;
            report::write_atomic(&sidecar(&out, "csv"), csv.as_bytes())?;
        }
        Command::Topk { query, target, k, out } => {
            let q = EmbeddingSet::load(&query)?;
            let mut source = StreamedReference::open_set(&target)?;
            if source.dim() != q.dim() {
                return Err(Error::DimMismatch(q.dim(), source.dim()));
            }
            let mut search = TopKSearch::new(&q, k)?;
            let mut chunk_progress = |done: usize, total: usize| progress(&format!("topk: {done}/{total} target rows"));
            source.feed(&mut search, &mut chunk_progress)?;
            let results = search.finish();
            let manifest = source.manifest();
            let body: Vec<TopKOut> = results
                .iter()
                .map(|r| TopKOut {
                    query_index: r.query_index,
                    query_sample_id: &q.meta(r.query_index).sample_id,
                    matches: r
                        .matches
                        .iter()
                        .map(|m| TopKMatchOut {
                            target_index: m.target_index,
                            target_sample_id: &manifest[m.target_index].sample_id,
                            score: m.score,
                        })
                        .collect(),
                })
                .collect();
            let mut inputs = set_digests("query", &query)?;
            inputs.extend(set_digests("target", &target)?);
            #[derive(Serialize)]
            struct Body<'a> {
                k: usize,
                results: Vec<TopKOut<'a>>,
            }
            write_json(&out, inputs, Body { k, results: body })?;
        }
        Command::Verify {
            set,
            pairs,
            k,
            shuffle_folds,
            out,
        } => {
            let s = EmbeddingSet::load(&set)?;
            let mut pl = PairList::read_csv(&pairs, k)?;
            if let Some(seed) = shuffle_folds {
                pl = pl.shuffled(seed);
            }
            let result = verify::kfold_accuracy(&s, &pl)?;
            let mut inputs = set_digests("set", &set)?;
            inputs.push(digest("pairs", &pairs)?);
            #[derive(Serialize)]
            struct Body {
                folds: usize,
                shuffle_seed: Option<u64>,
                #[serde(flatten)]
                result: verify::VerificationResult,
            }
            write_json(
                &out,
                inputs,
                Body {
                    folds: k,
                    shuffle_seed: shuffle_folds,
                    result,
                },
            )?;
        }
        Command::Bias { set, groups, k, out } => {
            let s = EmbeddingSet::load(&set)?;
            let lists = read_groups(&groups, k)?;
            let rep = verify::group_accuracy(&s, &lists)?;
            let gap = if rep.per_group.len() >= 2 { Some(verify::max_gap(&rep)?) } else { None };
            let mut inputs = set_digests("set", &set)?;
            for g in lists.keys() {
                inputs.push(digest(&format!("groups.{g}"), &groups.join(format!("{g}.csv")))?);
            }
            write_json(&out, inputs, report::BiasSection { groups: rep, gap })?;
        }
        Command::BenchAssess { matrix, synthetic, out } => {
            let m = AccuracyMatrix::read_csv(&matrix)?;
            let rep = benchrel::assess_benchmark(&m, &synthetic)?;
            write_json(&out, vec![digest("matrix", &matrix)?], rep)?;
        }
        Command::Consistency {
            set,
            pairs,
            segments,
            fraction,
            seed,
            k,
            out,
        } => {
            let s = EmbeddingSet::load(&set)?;
            let pl = PairList::read_csv(&pairs, k)?;
            let rep = benchrel::consistency(&s, &pl, segments, fraction, seed)?;
            let mut inputs = set_digests("set", &set)?;
            inputs.push(digest("pairs", &pairs)?);
            write_json(&out, inputs, rep)?;
        }
        Command::Audit(a) => audit(a, &progress)?,
        Command::Report {
            input,
            formats,
            out_dir,
            stem,
        } => {
            let formats = parse_formats(&formats)?;
            let text = std::fs::read_to_string(&input).map_err(|e| Error::io(&input, e))?;
            let rep: AuditReport = serde_json::from_str(&text)
                .map_err(|e| Error::Format(format!("{}: not an audit report: {e}", input.display())))?;
            if rep.schema != report::SCHEMA {
                return Err(Error::Format(format!("unsupported report schema `{}`", rep.schema)));
            }
            for p in report::emit(&rep, &formats, &out_dir, &stem)? {
                progress(&format!("wrote {}", p.display()));
            }
        }
    }
    Ok(())
}

fn audit(a: AuditArgs, progress: &(dyn Fn(&str) + Sync)) -> Result<()> {
    let formats = parse_formats(&a.formats)?;
    for name in &a.sections {
        sections::section(name)?;
    }
    pairsample::mated_sampler(&a.sampler.name())?;

    let mut rep = AuditReport::new();
    let synthetic = EmbeddingSet::load(&a.synthetic)?;
    rep.inputs.extend(set_digests("synthetic", &a.synthetic)?);
    if let Some(r) = &a.reference {
        rep.inputs.extend(set_digests("reference", r)?);
    }
    let pairs = match &a.pairs {
        Some(p) => {
            rep.inputs.push(digest("pairs", p)?);
            Some(PairList::read_csv(p, a.k)?)
        }
        None => None,
    };
    let groups = match &a.groups {
        Some(dir) => {
            let g = read_groups(dir, a.k)?;
            for name in g.keys() {
                rep.inputs.push(digest(&format!("groups.{name}"), &dir.join(format!("{name}.csv")))?);
            }
            Some(g)
        }
        None => None,
    };
    let matrix = match (&a.matrix, &a.benchmark) {
        (Some(m), Some(b)) => {
            rep.inputs.push(digest("matrix", m)?);
            Some((AccuracyMatrix::read_csv(m)?, b.clone()))
        }
        _ => None,
    };
    rep.seeds.insert("seed".into(), a.seed);
    let inputs = AuditInputs {
        synthetic: &synthetic,
        reference: a.reference.clone(),
        pairs,
        groups,
        matrix,
        params: AuditParams {
            n: a.n,
            seed: a.seed,
            mated_sampler: a.sampler.name(),
            bins: a.bins,
            top_k: a.leak.topk,
            threshold: a.leak.threshold,
            mode: a.leak.mode,
            chunk_rows: a.leak.chunk_rows,
            segments: a.segments,
            fraction: a.fraction,
        },
        progress,
    };
    sections::run_audit(&inputs, &a.sections, &mut rep)?;
    for p in report::emit(&rep, &formats, &a.out_dir, &a.stem)? {
        progress(&format!("wrote {}", p.display()));
    }
    Ok(())
}
