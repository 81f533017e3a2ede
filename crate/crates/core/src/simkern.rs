//! Exact cosine-similarity kernel.
//!
//! All dot products follow one fixed summation order: eight lane
//! accumulators in binary64, lane `l` summing the products of dimensions
//! `d ≡ l (mod 8)` in ascending `d`, reduced as
//! `((a0+a4)+(a2+a6)) + ((a1+a5)+(a3+a7))`. Inputs are binary32, so every
//! product is exact in binary64 and fused or unfused multiply-add round
//! identically. The vectorized path and the scalar path therefore produce the
//! same bits, whatever the CPU or the number of workers.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embset::EmbeddingSet;
use crate::error::{Error, Result};

/// Target rows per block product. Results do not depend on it.
pub const CHUNK_ROWS: usize = 4096;
const LANES: usize = 8;
const QUERY_BLOCK: usize = 64;
const TARGET_TILE: usize = 64;

#[inline(always)]
fn reduce(acc: &[f64; LANES]) -> f64 {
    let s = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
    (s[0] + s[2]) + (s[1] + s[3])
}

/// Dot product of two binary32 vectors under the kernel's summation order.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let full = a.len() / LANES * LANES;
    for (x, y) in a[..full].chunks_exact(LANES).zip(b[..full].chunks_exact(LANES)) {
        for l in 0..LANES {
            acc[l] += x[l] as f64 * y[l] as f64;
        }
    }
    for d in full..a.len() {
        acc[d % LANES] += a[d] as f64 * b[d] as f64;
    }
    reduce(&acc)
}

#[inline(always)]
fn clamp_score(s: f64) -> f64 {
    s.clamp(-1.0, 1.0)
}

/// Cosine similarity of two unit vectors.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch(u.len(), v.len()));
    }
    Ok(clamp_score(dot(u, v)))
}

/// Scores for a list of index pairs, in input order.
pub fn pair_scores(set: &EmbeddingSet, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let n = set.len();
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= n || j >= n) {
        return Err(Error::IndexOutOfRange {
            index: i.max(j),
            len: n,
        });
    }
    Ok(pairs
        .par_iter()
        .with_min_len(1024)
        .map(|&(i, j)| clamp_score(dot(set.row(i), set.row(j))))
        .collect())
}

// ---------------------------------------------------------------------------
// block products

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Isa {
    Scalar,
    #[cfg(target_arch = "x86_64")]
    Avx2Fma,
    #[cfg(target_arch = "x86_64")]
    Avx512,
}

fn detected_isa() -> Isa {
    static ISA: OnceLock<Isa> = OnceLock::new();
    *ISA.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            if std::env::var_os("FACEAUDIT_FORCE_SCALAR").is_some() {
                return Isa::Scalar;
            }
            if is_x86_feature_detected!("avx512f") {
                return Isa::Avx512;
            }
            if is_x86_feature_detected!("avx2")
                && is_x86_feature_detected!("fma")
            {
                return Isa::Avx2Fma;
            }
        }
        Isa::Scalar
    })
}

/// Eight binary64 lanes on their own cache line.
#[derive(Clone, Copy, Default)]
#[repr(C, align(64))]
struct Lane8([f64; LANES]);

/// Row-major binary64 copy of a block of rows, each row zero-padded to a
/// whole number of [`Lane8`] blocks. An accumulator that starts at +0.0 can
/// never become −0.0, so the padding leaves every sum bit-identical.
struct WideRows {
    dim: usize,
    stride: usize,
    data: Vec<Lane8>,
}

impl WideRows {
    fn from_rows<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f32]>) -> Self {
        let stride = dim.div_ceil(LANES);
        let mut data = Vec::new();
        for r in rows {
            let start = data.len();
            data.resize(start + stride, Lane8::default());
            for (d, &v) in r.iter().enumerate() {
                data[start + d / LANES].0[d % LANES] = v as f64;
            }
        }
        Self { dim, stride, data }
    }

    fn len(&self) -> usize {
        self.data.len() / self.stride
    }

    fn rows(&self, from: usize, to: usize) -> &[Lane8] {
        &self.data[from * self.stride..to * self.stride]
    }
}

fn dot_lanes_scalar(a: &[Lane8], b: &[Lane8]) -> f64 {
    let mut acc = [0.0f64; LANES];
    for (x, y) in a.iter().zip(b) {
        for (a, (u, v)) in acc.iter_mut().zip(x.0.iter().zip(&y.0)) {
            *a += u * v;
        }
    }
    reduce(&acc)
}

/// Calls `emit(q, t, score)` for every query row `q` and target row `t`,
/// targets visited in ascending order for each query.
fn block_dots(isa: Isa, queries: &[Lane8], targets: &[Lane8], stride: usize, mut emit: impl FnMut(usize, usize, f64)) {
    let nq = queries.len() / stride;
    let nt = targets.len() / stride;
    let row = |m: &'_ [Lane8], i: usize| -> *const f64 { m[i * stride..].as_ptr().cast() };
    match isa {
        #[cfg(target_arch = "x86_64")]
        Isa::Avx2Fma => {
            let mut t0 = 0;
            while t0 < nt {
                let t1 = (t0 + TARGET_TILE).min(nt);
                let mut q = 0;
                while q + 2 <= nq {
                    let (qa, qb) = (row(queries, q), row(queries, q + 1));
                    let mut t = t0;
                    while t + 2 <= t1 {
                        // SAFETY: the ISA was detected at runtime and every
                        // row pointer covers `stride` full blocks.
                        let s = unsafe { avx2::dot_2x2(qa, qb, row(targets, t), row(targets, t + 1), stride) };
                        emit(q, t, s[0]);
                        emit(q, t + 1, s[2]);
                        emit(q + 1, t, s[1]);
                        emit(q + 1, t + 1, s[3]);
                        t += 2;
                    }
                    if t < t1 {
                        let tr = row(targets, t);
                        // SAFETY: as above.
                        unsafe {
                            emit(q, t, avx2::dot_1x1(qa, tr, stride));
                            emit(q + 1, t, avx2::dot_1x1(qb, tr, stride));
                        }
                    }
                    q += 2;
                }
                if q < nq {
                    let qa = row(queries, q);
                    for t in t0..t1 {
                        // SAFETY: as above.
                        emit(q, t, unsafe { avx2::dot_1x1(qa, row(targets, t), stride) });
                    }
                }
                t0 = t1;
            }
        }
        #[cfg(target_arch = "x86_64")]
        Isa::Avx512 => {
            let mut t0 = 0;
            while t0 < nt {
                let t1 = (t0 + TARGET_TILE).min(nt);
                let mut q = 0;
                while q + 4 <= nq {
                    let qs = [row(queries, q), row(queries, q + 1), row(queries, q + 2), row(queries, q + 3)];
                    let mut t = t0;
                    while t + 2 <= t1 {
                        // SAFETY: the ISA was detected at runtime and every
                        // row pointer covers `stride` full aligned blocks.
                        let s = unsafe { avx512::dot_4x2(qs, row(targets, t), row(targets, t + 1), stride) };
                        for (k, pair) in s.chunks_exact(2).enumerate() {
                            emit(q + k, t, pair[0]);
                            emit(q + k, t + 1, pair[1]);
                        }
                        t += 2;
                    }
                    if t < t1 {
                        let tr = row(targets, t);
                        for (k, &qr) in qs.iter().enumerate() {
                            // SAFETY: as above.
                            emit(q + k, t, unsafe { avx512::dot_1x1(qr, tr, stride) });
                        }
                    }
                    q += 4;
                }
                while q < nq {
                    let qa = row(queries, q);
                    for t in t0..t1 {
                        // SAFETY: as above.
                        emit(q, t, unsafe { avx512::dot_1x1(qa, row(targets, t), stride) });
                    }
                    q += 1;
                }
                t0 = t1;
            }
        }
        Isa::Scalar => {
            for q in 0..nq {
                let qa = &queries[q * stride..(q + 1) * stride];
                for t in 0..nt {
                    emit(q, t, dot_lanes_scalar(qa, &targets[t * stride..(t + 1) * stride]));
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx2 {
    use super::{reduce, LANES};
    use std::arch::x86_64::*;

    #[inline(always)]
    unsafe fn finish(lo: __m256d, hi: __m256d) -> f64 {
        let mut acc = [0.0f64; LANES];
        _mm256_storeu_pd(acc.as_mut_ptr(), lo);
        _mm256_storeu_pd(acc.as_mut_ptr().add(4), hi);
        reduce(&acc)
    }

    /// `a` and `b` point at `blocks` 64-byte aligned groups of 8 lanes.
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn dot_1x1(a: *const f64, b: *const f64, blocks: usize) -> f64 {
        let mut lo = _mm256_setzero_pd();
        let mut hi = _mm256_setzero_pd();
        for k in 0..blocks {
            let d = k * LANES;
            lo = _mm256_fmadd_pd(_mm256_load_pd(a.add(d)), _mm256_load_pd(b.add(d)), lo);
            hi = _mm256_fmadd_pd(_mm256_load_pd(a.add(d + 4)), _mm256_load_pd(b.add(d + 4)), hi);
        }
        finish(lo, hi)
    }

    /// Returns `[qa·ta, qb·ta, qa·tb, qb·tb]`.
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn dot_2x2(
        qa: *const f64,
        qb: *const f64,
        ta: *const f64,
        tb: *const f64,
        blocks: usize,
    ) -> [f64; 4] {
        let z = _mm256_setzero_pd();
        let (mut aa_l, mut aa_h, mut ba_l, mut ba_h) = (z, z, z, z);
        let (mut ab_l, mut ab_h, mut bb_l, mut bb_h) = (z, z, z, z);
        for k in 0..blocks {
            let d = k * LANES;
            let xa_l = _mm256_load_pd(qa.add(d));
            let xa_h = _mm256_load_pd(qa.add(d + 4));
            let xb_l = _mm256_load_pd(qb.add(d));
            let xb_h = _mm256_load_pd(qb.add(d + 4));
            let ya_l = _mm256_load_pd(ta.add(d));
            let ya_h = _mm256_load_pd(ta.add(d + 4));
            aa_l = _mm256_fmadd_pd(xa_l, ya_l, aa_l);
            aa_h = _mm256_fmadd_pd(xa_h, ya_h, aa_h);
            ba_l = _mm256_fmadd_pd(xb_l, ya_l, ba_l);
            ba_h = _mm256_fmadd_pd(xb_h, ya_h, ba_h);
            let yb_l = _mm256_load_pd(tb.add(d));
            let yb_h = _mm256_load_pd(tb.add(d + 4));
            ab_l = _mm256_fmadd_pd(xa_l, yb_l, ab_l);
            ab_h = _mm256_fmadd_pd(xa_h, yb_h, ab_h);
            bb_l = _mm256_fmadd_pd(xb_l, yb_l, bb_l);
            bb_h = _mm256_fmadd_pd(xb_h, yb_h, bb_h);
        }
        [
            finish(aa_l, aa_h),
            finish(ba_l, ba_h),
            finish(ab_l, ab_h),
            finish(bb_l, bb_h),
        ]
    }
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use super::{reduce, LANES};
    use std::arch::x86_64::*;

    // One zmm register holds exactly the eight lane accumulators.
    #[inline(always)]
    unsafe fn finish(acc: __m512d) -> f64 {
        let mut lanes = [0.0f64; LANES];
        _mm512_storeu_pd(lanes.as_mut_ptr(), acc);
        reduce(&lanes)
    }

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn dot_1x1(a: *const f64, b: *const f64, blocks: usize) -> f64 {
        let mut acc = _mm512_setzero_pd();
        for k in 0..blocks {
            let d = k * LANES;
            acc = _mm512_fmadd_pd(_mm512_load_pd(a.add(d)), _mm512_load_pd(b.add(d)), acc);
        }
        finish(acc)
    }

    /// Returns `[q0·ta, q0·tb, q1·ta, q1·tb, ...]`.
    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn dot_4x2(q: [*const f64; 4], ta: *const f64, tb: *const f64, blocks: usize) -> [f64; 8] {
        let z = _mm512_setzero_pd();
        let mut acc = [z; 8];
        for k in 0..blocks {
            let d = k * LANES;
            let ya = _mm512_load_pd(ta.add(d));
            let yb = _mm512_load_pd(tb.add(d));
            let x0 = _mm512_load_pd(q[0].add(d));
            let x1 = _mm512_load_pd(q[1].add(d));
            let x2 = _mm512_load_pd(q[2].add(d));
            let x3 = _mm512_load_pd(q[3].add(d));
            acc[0] = _mm512_fmadd_pd(x0, ya, acc[0]);
            acc[1] = _mm512_fmadd_pd(x0, yb, acc[1]);
            acc[2] = _mm512_fmadd_pd(x1, ya, acc[2]);
            acc[3] = _mm512_fmadd_pd(x1, yb, acc[3]);
            acc[4] = _mm512_fmadd_pd(x2, ya, acc[4]);
            acc[5] = _mm512_fmadd_pd(x2, yb, acc[5]);
            acc[6] = _mm512_fmadd_pd(x3, ya, acc[6]);
            acc[7] = _mm512_fmadd_pd(x3, yb, acc[7]);
        }
        let mut out = [0.0; 8];
        for (o, a) in out.iter_mut().zip(acc) {
            *o = finish(a);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// top-k search

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub target_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKResult {
    pub query_index: usize,
    pub matches: Vec<Match>,
}

/// `true` when `a` ranks strictly before `b`: higher score, then lower index.
#[inline]
pub fn ranks_before(a: &Match, b: &Match) -> bool {
    a.score > b.score || (a.score == b.score && a.target_index < b.target_index)
}

#[derive(Debug, Clone)]
struct Leaders {
    k: usize,
    items: Vec<Match>,
}

impl Leaders {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, m: Match) {
        if self.items.len() == self.k {
            if !ranks_before(&m, &self.items[self.k - 1]) {
                return;
            }
            self.items.pop();
        }
        let mut pos = self.items.len();
        while pos > 0 && ranks_before(&m, &self.items[pos - 1]) {
            pos -= 1;
        }
        self.items.insert(pos, m);
    }
}

/// Incremental exact top-k search of a fixed query set over target rows that
/// arrive in chunks (in ascending target-index order).
pub struct TopKSearch {
    queries: WideRows,
    leaders: Vec<Leaders>,
    seen: usize,
    isa: Isa,
}

impl TopKSearch {
    pub fn new(query: &EmbeddingSet, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        let queries = WideRows::from_rows(query.dim(), query.rows().iter().map(|r| r.as_slice()));
        Ok(Self {
            leaders: vec![Leaders::new(k); query.len()],
            queries,
            seen: 0,
            isa: detected_isa(),
        })
    }

    #[cfg(test)]
    fn with_isa(mut self, isa: Isa) -> Self {
        self.isa = isa;
        self
    }

    pub fn dim(&self) -> usize {
        self.queries.dim
    }

    /// Number of target rows absorbed so far.
    pub fn targets_seen(&self) -> usize {
        self.seen
    }

    /// Folds the next target rows (global indices `targets_seen()..`) into
    /// the running leaders.
    pub fn absorb<'a>(&mut self, rows: impl IntoIterator<Item = &'a [f32]>) -> Result<()> {
        let dim = self.dim();
        let mut n = 0usize;
        let mut bad = None;
        let wide = WideRows::from_rows(
            dim,
            rows.into_iter().inspect(|r| {
                if r.len() != dim && bad.is_none() {
                    bad = Some(r.len());
                }
                n += 1;
            }),
        );
        if let Some(len) = bad {
            return Err(Error::DimMismatch(len, dim));
        }
        debug_assert_eq!(wide.len(), n);
        let base = self.seen;
        let isa = self.isa;
        let queries = &self.queries;
        self.leaders
            .par_chunks_mut(QUERY_BLOCK)
            .enumerate()
            .for_each(|(block, leaders)| {
                let q0 = block * QUERY_BLOCK;
                let qs = queries.rows(q0, q0 + leaders.len());
                block_dots(isa, qs, &wide.data, queries.stride, |q, t, s| {
                    leaders[q].offer(Match {
                        target_index: base + t,
                        score: clamp_score(s),
                    });
                });
            });
        self.seen += n;
        Ok(())
    }

    pub fn absorb_flat(&mut self, chunk: &[f32]) -> Result<()> {
        let dim = self.dim();
        if !chunk.len().is_multiple_of(dim) {
            return Err(Error::DimMismatch(chunk.len() % dim, dim));
        }
        self.absorb(chunk.chunks_exact(dim))
    }

    pub fn finish(self) -> Vec<TopKResult> {
        self.leaders
            .into_iter()
            .enumerate()
            .map(|(query_index, l)| TopKResult {
                query_index,
                matches: l.items,
            })
            .collect()
    }
}

/// Exact top-`k` targets for every query sample.
pub fn cross_topk(query: &EmbeddingSet, target: &EmbeddingSet, k: usize) -> Result<Vec<TopKResult>> {
    cross_topk_chunked(query, target, k, CHUNK_ROWS)
}

pub fn cross_topk_chunked(
    query: &EmbeddingSet,
    target: &EmbeddingSet,
    k: usize,
    chunk_rows: usize,
) -> Result<Vec<TopKResult>> {
    if query.dim() != target.dim() {
        return Err(Error::DimMismatch(query.dim(), target.dim()));
    }
    let mut search = TopKSearch::new(query, k)?;
    for chunk in target.rows().chunks(chunk_rows.max(1)) {
        search.absorb(chunk.iter().map(|r| r.as_slice()))?;
    }
    Ok(search.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embset::SampleMeta;
    use rand::{Rng, SeedableRng};

    fn set_from(rows: Vec<Vec<f32>>) -> EmbeddingSet {
        let dim = rows[0].len();
        let manifest = (0..rows.len())
            .map(|i| SampleMeta {
                sample_id: format!("s{i}"),
                identity: format!("id{}", i / 2),
                group: None,
            })
            .collect();
        EmbeddingSet::new(dim, rows, manifest).unwrap()
    }

    fn random_set(n: usize, dim: usize, seed: u64) -> EmbeddingSet {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        set_from(
            (0..n)
                .map(|_| (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
                .collect(),
        )
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let u = [0.6f32, 0.8];
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-6);
        let s = cosine(&[0.6, 0.8], &[0.8, 0.6]).unwrap();
        assert!((s - 0.96).abs() < 1e-6, "{s}");
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(Error::DimMismatch(1, 2))));
    }

    #[test]
    fn pair_scores_examples() {
        let set = random_set(10, 16, 1);
        let s = pair_scores(&set, &[(0, 0)]).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-6);
        let s = pair_scores(&set, &[(0, 1), (1, 0)]).unwrap();
        assert_eq!(s[0].to_bits(), s[1].to_bits());
        assert!(matches!(
            pair_scores(&set, &[(0, 10)]),
            Err(Error::IndexOutOfRange { index: 10, len: 10 })
        ));
    }

    #[test]
    fn vector_and_scalar_paths_agree_bitwise() {
        for dim in [1, 3, 8, 13, 64, 512] {
            let q = random_set(9, dim, dim as u64);
            let t = random_set(37, dim, 100 + dim as u64);
            let run = |isa| {
                let mut s = TopKSearch::new(&q, 37).unwrap().with_isa(isa);
                s.absorb(t.rows().iter().map(|r| r.as_slice())).unwrap();
                s.finish()
            };
            let slow = run(Isa::Scalar);
            let fast = run(detected_isa());
            assert_eq!(fast, slow, "dim {dim}");
            #[cfg(target_arch = "x86_64")]
            if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
                assert_eq!(run(Isa::Avx2Fma), slow, "dim {dim}");
            }
            // and both agree with the binary32 entry point
            for r in &fast {
                for m in &r.matches {
                    let d = clamp_score(dot(q.row(r.query_index), t.row(m.target_index)));
                    assert_eq!(d.to_bits(), m.score.to_bits());
                }
            }
        }
    }

    #[test]
    fn self_match_and_tie_break() {
        let set = random_set(20, 8, 3);
        for r in cross_topk(&set, &set, 1).unwrap() {
            assert_eq!(r.matches[0].target_index, r.query_index);
            assert!((r.matches[0].score - 1.0).abs() < 1e-6);
        }

        let mut rows: Vec<Vec<f32>> = random_set(12, 4, 5).rows().to_vec();
        rows[9] = rows[3].clone();
        let target = set_from(rows.clone());
        let query = set_from(vec![rows[3].clone()]);
        let r = cross_topk(&query, &target, 1).unwrap();
        assert_eq!(r[0].matches[0].target_index, 3);
        let r = cross_topk(&query, &target, 2).unwrap();
        assert_eq!(r[0].matches[1].target_index, 9);
    }

    #[test]
    fn k_larger_than_target() {
        let q = random_set(3, 4, 8);
        let t = random_set(5, 4, 9);
        let r = cross_topk(&q, &t, 50).unwrap();
        assert!(r.iter().all(|x| x.matches.len() == 5));
        assert!(matches!(cross_topk(&q, &t, 0), Err(Error::InvalidParameter(_))));
        let other = random_set(2, 5, 1);
        assert!(matches!(cross_topk(&q, &other, 1), Err(Error::DimMismatch(4, 5))));
    }
}
