//! Rank-sensitive hashing.
//!
//! A hash is an anchor pair `(x1, x2)`; object `u` gets bit 1 when the
//! oracle says `x2` is closer to `x1` than `u` is. One question per object.
//! Tables AND `bits` hashes together and a query ORs over tables.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{invalid, Error, Result};
use crate::oracle::{OracleSession, Phase, Point};
use crate::ranks::{DistortionFit, QueryRanks, RankMatrix};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"RKR1";
/// Refuse parameterizations that would need more tables than this.
pub const MAX_TABLES: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HashSpec {
    pub x1: usize,
    pub x2: usize,
}

impl HashSpec {
    pub fn new(x1: usize, x2: usize) -> Result<Self> {
        if x1 == x2 {
            return invalid("hash anchors must be distinct");
        }
        Ok(HashSpec { x1, x2 })
    }

    pub fn random<R: Rng>(rng: &mut R, n: usize) -> Self {
        let x1 = rng.gen_range(0..n);
        let mut x2 = rng.gen_range(0..n - 1);
        if x2 >= x1 {
            x2 += 1;
        }
        HashSpec { x1, x2 }
    }
}

/// One question: bit 1 exactly when the oracle answers `x2`.
pub fn hash_value<T: Scalar>(session: &OracleSession<'_, T>, spec: HashSpec, u: Point) -> Result<bool> {
    Ok(session.ask(Point::Object(spec.x1), Point::Object(spec.x2), u)? == Point::Object(spec.x2))
}

/// `1 - ||rho_u - rho_q||_1 / n^2`: the collision probability of `u` and
/// `q` under an anchor pair drawn uniformly from all `n^2` ordered pairs.
pub fn collision_prob_exact(rm: &RankMatrix, u: usize, q: &[u32]) -> f64 {
    let n = rm.n();
    let l1: u64 = (0..n).map(|i| (rm.get(i, u) as i64 - q[i] as i64).unsigned_abs()).sum();
    1.0 - l1 as f64 / (n * n) as f64
}

/// Rank column of a database object, for use as `q` above.
pub fn object_column(rm: &RankMatrix, u: usize) -> Vec<u32> {
    (0..rm.n()).map(|i| rm.get(i, u)).collect()
}

/// Rank column of an external query.
pub fn query_column(q: &QueryRanks) -> Vec<u32> {
    q.column()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RshParams {
    pub r: usize,
    pub epsilon: f64,
    /// Collision bound for objects ranked below `r`; `None` when the table
    /// shape was given explicitly.
    pub p: Option<f64>,
    /// Collision bound for objects ranked above `(1 + eps) r`.
    pub big_p: Option<f64>,
    pub theta: Option<f64>,
    pub bits: usize,
    pub tables: usize,
    /// Most candidates a query compares.
    pub scan_cap: usize,
}

impl RshParams {
    /// A table shape chosen by the caller rather than derived from a fit.
    pub fn explicit(r: usize, epsilon: f64, bits: usize, tables: usize) -> Result<Self> {
        if tables == 0 {
            return invalid("need at least one table");
        }
        Ok(RshParams { r, epsilon, p: None, big_p: None, theta: None, bits, tables, scan_cap: 3 * tables })
    }

    pub fn with_scan_cap(mut self, cap: usize) -> Self {
        self.scan_cap = cap;
        self
    }

    /// `(1 + eps) r`, rounded down.
    pub fn far_rank(&self) -> usize {
        ((1.0 + self.epsilon) * self.r as f64).floor() as usize
    }
}

/// Amplification parameters from a linear distortion fit `c r <= l1 <= gamma c r`.
///
/// The rank-sensitivity bounds come out with `f(r) = gamma c r`, the upper
/// envelope: `p = 1 - gamma c r / n^2` and `P = 1 - c (1 + eps) r / n^2`.
/// This needs `gamma < 1 + eps`; otherwise `P >= p` and the call fails.
pub fn derive_params(n: usize, r: usize, epsilon: f64, fit: &DistortionFit) -> Result<RshParams> {
    if n < 2 || r == 0 {
        return invalid("need n >= 2 and r >= 1");
    }
    if !(epsilon > 0.0) {
        return invalid("epsilon must be positive");
    }
    let c = crate::scalar::RankReal::to_f64_lossy(fit.c);
    let gamma = crate::scalar::RankReal::to_f64_lossy(fit.gamma);
    let n2 = (n * n) as f64;
    let p = 1.0 - gamma * c * r as f64 / n2;
    let big_p = 1.0 - c * (1.0 + epsilon) * r as f64 / n2;
    if !(0.0 < big_p && big_p < p && p < 1.0) {
        return Err(Error::Parameterization(format!(
            "need 0 < P < p < 1, got p = {p:.6}, P = {big_p:.6} (gamma = {gamma:.4}, 1 + eps = {})",
            1.0 + epsilon
        )));
    }
    let theta = (1.0 / p).ln() / (p / big_p).ln();
    let bits = ((n as f64).ln() / (1.0 / big_p).ln()).ceil() as usize;
    let tables_f = (n as f64).powf(theta).ceil();
    if !(tables_f <= MAX_TABLES as f64) {
        return Err(Error::Parameterization(format!("n^theta = {tables_f} tables exceeds {MAX_TABLES}")));
    }
    let tables = (tables_f as usize).max(1);
    Ok(RshParams { r, epsilon, p: Some(p), big_p: Some(big_p), theta: Some(theta), bits, tables, scan_cap: 3 * tables })
}

type Key = Vec<u64>;

fn key_push(key: &mut Key, bit: usize, value: bool) {
    if bit.is_multiple_of(64) {
        key.push(0);
    }
    if value {
        *key.last_mut().unwrap() |= 1 << (bit % 64);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RshTable {
    pub specs: Vec<HashSpec>,
    pub buckets: BTreeMap<Key, Vec<usize>>,
}

impl RshTable {
    fn key<T: Scalar>(&self, session: &OracleSession<'_, T>, u: Point) -> Result<Key> {
        let mut key = Vec::with_capacity(self.specs.len().div_ceil(64));
        for (b, &spec) in self.specs.iter().enumerate() {
            key_push(&mut key, b, hash_value(session, spec, u)?);
        }
        Ok(key)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RshTableSet {
    n: usize,
    params: RshParams,
    seed: u64,
    tables: Vec<RshTable>,
    build_questions: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableProbe {
    pub key: Vec<u64>,
    pub bucket_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RshQueryTrace {
    pub result: Option<usize>,
    pub probes: Vec<TableProbe>,
    /// Distinct objects sharing at least one bucket with the query.
    pub candidates: usize,
    /// Candidates actually considered, at most the scan cap.
    pub scanned: usize,
    pub comparisons: u64,
    pub questions: u64,
    /// Query rank of the result, filled in by analysis code only.
    pub result_rank: Option<u32>,
}

fn table_seed(seed: u64, t: usize) -> u64 {
    seed ^ (t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl RshTableSet {
    pub fn build<T: Scalar>(session: &OracleSession<'_, T>, params: RshParams, seed: u64) -> Result<Self> {
        let n = session.n();
        if n < 2 && params.bits > 0 {
            return invalid("hashing needs at least two objects");
        }
        if params.tables == 0 {
            return invalid("need at least one table");
        }
        let learn = session.in_phase(Phase::Learning).scoped();
        let tables = (0..params.tables)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(table_seed(seed, t));
                let specs = (0..params.bits).map(|_| HashSpec::random(&mut rng, n)).collect();
                let mut table = RshTable { specs, buckets: BTreeMap::new() };
                for u in 0..n {
                    let key = table.key(&learn, Point::Object(u))?;
                    table.buckets.entry(key).or_default().push(u);
                }
                Ok(table)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RshTableSet { n, params, seed, tables, build_questions: learn.ledger().total() })
    }

    pub fn params(&self) -> &RshParams {
        &self.params
    }

    pub fn tables(&self) -> &[RshTable] {
        &self.tables
    }

    pub fn build_questions(&self) -> u64 {
        self.build_questions
    }

    /// Hash the registered query, rank co-bucketed objects by how many tables
    /// they share with it, and keep the oracle's best of the first `scan_cap`.
    pub fn query<T: Scalar>(&self, session: &OracleSession<'_, T>) -> Result<RshQueryTrace> {
        if session.n() != self.n {
            return invalid(format!("tables cover {} objects, session has {}", self.n, session.n()));
        }
        if !session.has_query() {
            return Err(Error::State("query needs a registered query point".into()));
        }
        let s = session.in_phase(Phase::Search).scoped();
        let mut hits = vec![0u32; self.n];
        let mut probes = Vec::with_capacity(self.tables.len());
        for table in &self.tables {
            let key = table.key(&s, Point::Query)?;
            let bucket = table.buckets.get(&key).map(Vec::as_slice).unwrap_or(&[]);
            for &u in bucket {
                hits[u] += 1;
            }
            probes.push(TableProbe { key, bucket_size: bucket.len() });
        }
        let mut cands: Vec<usize> = (0..self.n).filter(|&u| hits[u] > 0).collect();
        cands.sort_by(|&a, &b| hits[b].cmp(&hits[a]).then(a.cmp(&b)));
        let candidates = cands.len();
        cands.truncate(self.params.scan_cap);
        let mut best: Option<usize> = None;
        let mut comparisons = 0;
        for &c in &cands {
            best = Some(match best {
                None => c,
                Some(b) => {
                    comparisons += 1;
                    s.ask(Point::Query, Point::Object(c), Point::Object(b))?.object().expect("object")
                }
            });
        }
        Ok(RshQueryTrace {
            result: best,
            probes,
            candidates,
            scanned: cands.len(),
            comparisons,
            questions: s.ledger().total(),
            result_rank: None,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC);
        let p = &self.params;
        w.u64(self.n as u64);
        w.u64(p.r as u64);
        w.f64(p.epsilon);
        for v in [p.p, p.big_p, p.theta] {
            w.u8(v.is_some() as u8);
            w.f64(v.unwrap_or(0.0));
        }
        w.u64(p.bits as u64);
        w.u64(p.tables as u64);
        w.u64(p.scan_cap as u64);
        w.u64(self.seed);
        w.u64(self.build_questions);
        for t in &self.tables {
            for s in &t.specs {
                w.id(s.x1);
                w.id(s.x2);
            }
            w.u64(t.buckets.len() as u64);
            for (key, ids) in &t.buckets {
                for &word in key {
                    w.u64(word);
                }
                w.ids(ids);
            }
        }
        w.buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, MAGIC)?;
        let n = r.count("n", u32::MAX as u64)?;
        let rank = r.count("r", u64::MAX)?;
        let epsilon = r.f64()?;
        let mut opt = || -> Result<Option<f64>> {
            let flag = r.u8()?;
            let v = r.f64()?;
            Ok((flag != 0).then_some(v))
        };
        let (p, big_p, theta) = (opt()?, opt()?, opt()?);
        let bits = r.count("bits", 1 << 20)?;
        let tables = r.count("tables", MAX_TABLES as u64)?;
        let scan_cap = r.count("scan cap", u64::MAX)?;
        let params = RshParams { r: rank, epsilon, p, big_p, theta, bits, tables, scan_cap };
        let seed = r.u64()?;
        let build_questions = r.u64()?;
        let words = bits.div_ceil(64);
        let mut out = Vec::with_capacity(tables);
        for _ in 0..tables {
            let mut specs = Vec::with_capacity(bits);
            for _ in 0..bits {
                let (x1, x2) = (r.bounded_id(n)?, r.bounded_id(n)?);
                specs.push(HashSpec::new(x1, x2).map_err(|e| Error::Format(e.to_string()))?);
            }
            let count = r.count("buckets", n as u64)?;
            let mut buckets = BTreeMap::new();
            for _ in 0..count {
                let key = (0..words).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
                buckets.insert(key, r.ids(n)?);
            }
            out.push(RshTable { specs, buckets });
        }
        r.finish()?;
        Ok(RshTableSet { n, params, seed, tables: out, build_questions })
    }
}
