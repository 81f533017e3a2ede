#![allow(dead_code)]

use std::path::{Path, PathBuf};

use faceaudit::simkern;
use faceaudit::{EmbeddingSet, SampleMeta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_row(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        if v.iter().any(|&x| x.abs() > 1e-3) {
            return v;
        }
    }
}

/// Set whose identity `k` holds `sizes[k]` random samples, optionally tagged
/// with a group.
pub fn set_with_sizes(sizes: &[usize], dim: usize, seed: u64) -> EmbeddingSet {
    let mut r = rng(seed);
    let mut rows = Vec::new();
    let mut manifest = Vec::new();
    for (id, &n) in sizes.iter().enumerate() {
        for s in 0..n {
            rows.push(random_row(&mut r, dim));
            manifest.push(SampleMeta {
                sample_id: format!("id{id}_s{s}"),
                identity: format!("id{id}"),
                group: None,
            });
        }
    }
    EmbeddingSet::new(dim, rows, manifest).unwrap()
}

/// `n` random samples with one identity each.
pub fn random_set(n: usize, dim: usize, seed: u64) -> EmbeddingSet {
    set_with_sizes(&vec![1; n], dim, seed)
}

pub fn set_from_rows(rows: Vec<Vec<f32>>, identities: &[usize]) -> EmbeddingSet {
    let dim = rows[0].len();
    let manifest = identities
        .iter()
        .enumerate()
        .map(|(i, id)| SampleMeta {
            sample_id: format!("x{i}"),
            identity: format!("id{id}"),
            group: None,
        })
        .collect();
    EmbeddingSet::new(dim, rows, manifest).unwrap()
}

pub fn save(set: &EmbeddingSet, dir: &Path, name: &str) -> PathBuf {
    let p = dir.join(name);
    set.save(&p).unwrap();
    p
}

/// Sequential double-precision dot product.
pub fn naive_dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Full score matrix sort: `(target, score)` for the top `k` of one query,
/// ordered by score descending then target ascending. Scores use the
/// toolkit's reference dot product so ties are bit-exact.
pub fn oracle_topk_row(q: &[f32], target: &EmbeddingSet, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = (0..target.len())
        .map(|t| (t, simkern::dot(q, target.row(t)).clamp(-1.0, 1.0)))
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Chi-squared goodness of fit p-value of `observed` against `expected`;
/// NaN when there is a single cell and hence no degrees of freedom.
pub fn chi2_p(observed: &[u64], expected: &[f64]) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    if observed.len() < 2 {
        return f64::NAN;
    }
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let df = (observed.len() - 1) as f64;
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}

pub fn normals(rng: &mut impl Rng, n: usize, mean: f64, sd: f64) -> Vec<f64> {
    use rand::distributions::Distribution;
    let d = statrs::distribution::Normal::new(mean, sd).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

pub fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

#[derive(Debug, PartialEq)]
pub struct OracleOps {
    pub eer: f64,
    pub eer_threshold: f64,
    pub fmr100: f64,
    pub fmr1000: f64,
    pub fmr100_saturated: bool,
    pub fmr1000_saturated: bool,
}

/// Operating points by evaluating every candidate threshold independently
/// (binary search over sorted scores) rather than with a running sweep.
pub fn oracle_operating_points(genuine: &[f64], impostor: &[f64]) -> OracleOps {
    let mut g = genuine.to_vec();
    let mut i = impostor.to_vec();
    g.sort_by(f64::total_cmp);
    i.sort_by(f64::total_cmp);
    let mut ts: Vec<f64> = g.iter().chain(&i).copied().collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.push(ts.last().unwrap().next_up());
    let fmr = |t: f64| (i.len() - i.partition_point(|&x| x < t)) as f64 / i.len() as f64;
    let fnmr = |t: f64| g.partition_point(|&x| x < t) as f64 / g.len() as f64;

    let d = |t: f64| fmr(t) - fnmr(t);
    let c = ts.iter().position(|&t| d(t) <= 0.0).unwrap();
    let (eer, eer_threshold) = if c == 0 || d(ts[c]) == 0.0 {
        (fmr(ts[c]), ts[c])
    } else {
        let (t0, t1) = (ts[c - 1], ts[c]);
        let alpha = d(t0) / (d(t0) - d(t1));
        (fmr(t0) + alpha * (fmr(t1) - fmr(t0)), t0 + alpha * (t1 - t0))
    };
    let at = |target: f64| {
        let k = ts.iter().position(|&t| fmr(t) <= target).unwrap();
        (fnmr(ts[k]), k == ts.len() - 1)
    };
    let (fmr100, fmr100_saturated) = at(0.01);
    let (fmr1000, fmr1000_saturated) = at(0.001);
    OracleOps {
        eer,
        eer_threshold,
        fmr100,
        fmr1000,
        fmr100_saturated,
        fmr1000_saturated,
    }
}

pub fn ops_match(genuine: &[f64], impostor: &[f64]) -> bool {
    let op = faceaudit::biomet::operating_points(&faceaudit::biomet::det_sweep(genuine, impostor).unwrap());
    let o = oracle_operating_points(genuine, impostor);
    op.eer == o.eer
        && op.eer_threshold == o.eer_threshold
        && op.fmr100 == o.fmr100
        && op.fmr1000 == o.fmr1000
        && op.fmr100_saturated == o.fmr100_saturated
        && op.fmr1000_saturated == o.fmr1000_saturated
}

/// Random score sets with ties: values on a coarse grid part of the time.
pub fn random_scores(rng: &mut impl Rng, n: usize, shift: f64) -> Vec<f64> {
    let coarse = rng.gen_bool(0.5);
    (0..n)
        .map(|_| {
            let v: f64 = (rng.gen_range(-1.0..1.0) + shift).clamp(-1.0, 1.0);
            if coarse {
                (v * 50.0).round() / 50.0
            } else {
                v
            }
        })
        .collect()
}

/// Draw counts per element of `universe`.
pub fn counts(pairs: &[(usize, usize)], universe: &[(usize, usize)]) -> Vec<u64> {
    let pos: std::collections::HashMap<(usize, usize), usize> = universe.iter().enumerate().map(|(k, &p)| (p, k)).collect();
    let mut c = vec![0u64; universe.len()];
    for p in pairs {
        c[pos[p]] += 1;
    }
    c
}

pub fn nonmated_universe(set: &EmbeddingSet) -> Vec<(usize, usize)> {
    let n = set.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if set.identity_of(i) != set.identity_of(j) {
                out.push((i, j));
            }
        }
    }
    out
}

/// P{a, b} = (1/N)(1/(N − n_a) + 1/(N − n_b)) for the two-stage law.
pub fn nonmated_expected(set: &EmbeddingSet, universe: &[(usize, usize)], draws: usize) -> Vec<f64> {
    let n = set.len() as f64;
    let size = |i: usize| set.identities()[set.identity_of(i)].samples.len() as f64;
    universe
        .iter()
        .map(|&(a, b)| draws as f64 * (1.0 / n) * (1.0 / (n - size(a)) + 1.0 / (n - size(b))))
        .collect()
}

pub const GROUPS: [&str; 4] = ["African", "Asian", "Caucasian", "Indian"];

/// Identities as noisy clusters around random centers; identity `k` carries
/// group `GROUPS[k % 4]`. `spread` scales the within-identity noise.
pub fn clustered_set(identities: usize, per_identity: usize, dim: usize, spread: f32, seed: u64) -> EmbeddingSet {
    let mut r = rng(seed);
    let mut rows = Vec::with_capacity(identities * per_identity);
    let mut manifest = Vec::with_capacity(identities * per_identity);
    for id in 0..identities {
        let center = random_row(&mut r, dim);
        for s in 0..per_identity {
            let noise = random_row(&mut r, dim);
            rows.push(center.iter().zip(&noise).map(|(c, n)| c + spread * n).collect());
            manifest.push(SampleMeta {
                sample_id: format!("p{id}_{s}"),
                identity: format!("p{id}"),
                group: Some(GROUPS[id % 4].to_string()),
            });
        }
    }
    EmbeddingSet::new(dim, rows, manifest).unwrap()
}

/// Alternating mated / non-mated pair list of `n` entries drawn from `set`.
pub fn pair_list(set: &EmbeddingSet, n: usize, seed: u64, folds: usize) -> faceaudit::verify::PairList {
    use faceaudit::pairsample::{sample_mated, sample_nonmated, PairKind};
    use faceaudit::verify::{PairEntry, PairList};
    let m = sample_mated(set, n / 2, seed).unwrap();
    let nm = sample_nonmated(set, n / 2, seed ^ 0x5555).unwrap();
    let entry = |(a, b): (usize, usize), label| PairEntry {
        sample_id_a: set.meta(a).sample_id.clone(),
        sample_id_b: set.meta(b).sample_id.clone(),
        label,
    };
    let entries = m
        .pairs
        .iter()
        .zip(&nm.pairs)
        .flat_map(|(&p, &q)| [entry(p, PairKind::Mated), entry(q, PairKind::Nonmated)])
        .collect();
    PairList::new(entries, folds)
}

pub struct AuditFixture {
    pub synthetic: PathBuf,
    pub reference: PathBuf,
    pub pairs: PathBuf,
    pub groups: PathBuf,
    pub matrix: PathBuf,
}

/// On-disk inputs for a full audit: `n_identities × 5` synthetic samples,
/// a random reference set, a pair list, per-group pair lists and an
/// accuracy matrix.
pub fn audit_fixture(dir: &Path, n_identities: usize, n_reference: usize) -> AuditFixture {
    let dim = 64;
    let syn = clustered_set(n_identities, 5, dim, 0.6, 1);
    let reference = random_set(n_reference, dim, 2);
    let synthetic = save(&syn, dir, "synthetic.embs");
    let reference = save(&reference, dir, "reference.embs");

    let pairs = dir.join("pairs.csv");
    pair_list(&syn, 600, 3, 10).write_csv(&pairs).unwrap();

    let groups = dir.join("groups");
    std::fs::create_dir_all(&groups).unwrap();
    for (g, name) in GROUPS.iter().enumerate() {
        let keep: Vec<usize> = (0..syn.len()).filter(|&i| syn.identity_of(i) % 4 == g).collect();
        let rows = keep.iter().map(|&i| syn.row(i).to_vec()).collect();
        let manifest = keep.iter().map(|&i| syn.meta(i).clone()).collect();
        let part = EmbeddingSet::new(dim, rows, manifest).unwrap();
        pair_list(&part, 200, 10 + g as u64, 10)
            .write_csv(groups.join(format!("{name}.csv")))
            .unwrap();
    }

    let matrix = dir.join("matrix.csv");
    let mut text = String::from("model,benchmark,accuracy\n");
    let models = [(0.91, 0.95, 0.88), (0.85, 0.90, 0.80), (0.97, 0.99, 0.93), (0.80, 0.86, 0.79), (0.93, 0.96, 0.90)];
    for (m, (syn_acc, lfw, cfp)) in models.iter().enumerate() {
        text += &format!("m{m},synthetic,{syn_acc}\nm{m},lfw,{lfw}\nm{m},cfp,{cfp}\n");
    }
    std::fs::write(&matrix, text).unwrap();
    AuditFixture {
        synthetic,
        reference,
        pairs,
        groups,
        matrix,
    }
}

/// Runs the built binary.
pub fn faceaudit(args: &[&std::ffi::OsStr], envs: &[(&str, &str)]) -> std::process::Output {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_faceaudit"));
    cmd.args(args).env_remove("FACEAUDIT_WORKERS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

#[macro_export]
macro_rules! args {
    ($($a:expr),* $(,)?) => {
        &[$(::std::ffi::OsStr::new(&$a)),*]
    };
}
