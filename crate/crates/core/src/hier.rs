//! Randomized hierarchical index for exact nearest-neighbor search with a
//! known disorder constant.
//!
//! Level `i` holds `m_i = min(n, ceil(a (2D)^i log2 n))` samples drawn
//! without replacement. Every object keeps, per level, its closest sample
//! `phi_j(i)` and the first `kappa = ceil(4 a D log2 n)` entries of its
//! sorted candidate list. Candidates at level `i > 1` are the samples whose
//! level `i-1` closest sample is within that prefix.

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{invalid, Error, Result};
use crate::oracle::{OracleSession, Phase, Point};
use crate::ranks::{DisorderResult, QueryRanks, RankMatrix};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"RKH1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    /// Disorder constant used for sizing; any value at least the true one.
    pub d: f64,
    pub a: f64,
    pub seed: u64,
}

/// Level sizes implied by a config for a given `n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub sample_sizes: Vec<usize>,
    pub kappa: usize,
}

impl Layout {
    pub fn levels(&self) -> usize {
        self.sample_sizes.len()
    }
}

fn log2n(n: usize) -> f64 {
    (n as f64).log2()
}

impl BuildConfig {
    pub const DEFAULT_A: f64 = 2.0;

    pub fn new(d: f64, a: f64, seed: u64) -> Result<Self> {
        let cfg = BuildConfig { d, a, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_disorder(dr: &DisorderResult, a: f64, seed: u64) -> Result<Self> {
        Self::new(dr.d_f64(), a, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d >= 1.0) || !self.d.is_finite() {
            return invalid(format!("disorder constant must be >= 1 (got {})", self.d));
        }
        if !(self.a >= 1.0) || !self.a.is_finite() {
            return invalid(format!("sampling constant a must be >= 1 (got {})", self.a));
        }
        Ok(())
    }

    /// `L = max(1, ceil(log2 n / log2 2D))`.
    pub fn levels(&self, n: usize) -> usize {
        ((log2n(n) / (2.0 * self.d).log2()).ceil() as usize).max(1)
    }

    pub fn sample_size(&self, n: usize, level: usize) -> usize {
        let m = (self.a * (2.0 * self.d).powi(level as i32) * log2n(n)).ceil();
        (m.min(n as f64) as usize).clamp(1, n)
    }

    pub fn kappa(&self, n: usize) -> usize {
        ((4.0 * self.a * self.d * log2n(n)).ceil() as usize).max(1)
    }

    pub fn layout(&self, n: usize) -> Layout {
        Layout {
            sample_sizes: (1..=self.levels(n)).map(|i| self.sample_size(n, i)).collect(),
            kappa: self.kappa(n),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    pub questions: u64,
    /// Largest candidate set ranked for any object at any level.
    pub max_candidates: u64,
    pub total_candidates: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierIndex {
    n: usize,
    cfg: BuildConfig,
    kappa: usize,
    /// `samples[i]` is `S_{i+1}`, in draw order.
    samples: Vec<Vec<usize>>,
    /// `phi[i][j]` is object `j`'s closest sample at level `i+1`.
    phi: Vec<Vec<usize>>,
    /// `prefix[i][j]`: first entries of `c'_j(i+1)`: up to `kappa` of them
    /// below the last level, just the closest sample on the last level.
    prefix: Vec<Vec<Vec<usize>>>,
    stats: BuildStats,
}

/// Sort `cand` with respect to `o`, keeping the first `k`. An object that is
/// itself a candidate comes first without a question.
fn ranked<T: Scalar>(session: &OracleSession<'_, T>, o: Point, cand: &[usize], k: usize) -> Result<Vec<usize>> {
    match o.object().filter(|oi| cand.contains(oi)) {
        Some(oi) => {
            let rest: Vec<usize> = cand.iter().copied().filter(|&c| c != oi).collect();
            let mut out = vec![oi];
            out.extend(session.rank_prefix(o, &rest, k.saturating_sub(1))?);
            Ok(out)
        }
        None => session.rank_prefix(o, cand, k),
    }
}

/// Samples of `level_samples` whose previous-level closest sample is in `prefix`.
fn candidates(level_samples: &[usize], prev_phi: &[usize], prefix: &[usize], mark: &mut [bool]) -> Vec<usize> {
    for &p in prefix {
        mark[p] = true;
    }
    let out = level_samples.iter().copied().filter(|&v| mark[prev_phi[v]]).collect();
    for &p in prefix {
        mark[p] = false;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierSearch {
    pub nearest: usize,
    pub questions: u64,
    pub candidates_per_level: Vec<usize>,
}

impl HierIndex {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn config(&self) -> &BuildConfig {
        &self.cfg
    }

    pub fn levels(&self) -> usize {
        self.samples.len()
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    /// `S_level`, 1-based.
    pub fn samples(&self, level: usize) -> &[usize] {
        &self.samples[level - 1]
    }

    /// `phi_j(level)`, 1-based level.
    pub fn phi(&self, object: usize, level: usize) -> usize {
        self.phi[level - 1][object]
    }

    /// Stored prefix of `c'_j(level)`, 1-based level.
    pub fn prefix(&self, object: usize, level: usize) -> &[usize] {
        &self.prefix[level - 1][object]
    }

    pub fn stats(&self) -> &BuildStats {
        &self.stats
    }

    /// Algorithm 1, levels top-down and objects in parallel within a level.
    pub fn build<T: Scalar>(session: &OracleSession<'_, T>, cfg: BuildConfig) -> Result<Self> {
        cfg.validate()?;
        let n = session.n();
        if n == 0 {
            return invalid("cannot index an empty space");
        }
        let layout = cfg.layout(n);
        let levels = layout.levels();
        let kappa = layout.kappa;
        let learn = session.in_phase(Phase::Learning).scoped();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let samples: Vec<Vec<usize>> =
            layout.sample_sizes.iter().map(|&m| sample(&mut rng, n, m).into_vec()).collect();

        let mut phi: Vec<Vec<usize>> = Vec::with_capacity(levels);
        let mut prefix: Vec<Vec<Vec<usize>>> = Vec::with_capacity(levels);
        let mut stats = BuildStats::default();
        for lvl in 0..levels {
            let keep = if lvl + 1 == levels { 1 } else { kappa };
            let s = &samples[lvl];
            let rows: Vec<(usize, Vec<usize>)> = (0..n)
                .into_par_iter()
                .map_init(
                    || vec![false; n],
                    |mark, j| {
                        let cand = if lvl == 0 {
                            s.clone()
                        } else {
                            candidates(s, &phi[lvl - 1], &prefix[lvl - 1][j], mark)
                        };
                        if cand.is_empty() {
                            return Err(Error::BuildFailure { object: j, level: lvl + 1 });
                        }
                        Ok((cand.len(), ranked(&learn, Point::Object(j), &cand, keep)?))
                    },
                )
                .collect::<Result<_>>()?;
            for (c, _) in &rows {
                stats.max_candidates = stats.max_candidates.max(*c as u64);
                stats.total_candidates += *c as u64;
            }
            let lists: Vec<Vec<usize>> = rows.into_iter().map(|(_, l)| l).collect();
            phi.push(lists.iter().map(|l| l[0]).collect());
            prefix.push(lists);
        }
        stats.questions = learn.ledger().total();
        Ok(HierIndex { n, cfg, kappa, samples, phi, prefix, stats })
    }

    /// Retry a failed build with fresh seeds derived from `cfg.seed`.
    /// Returns the index and the number of attempts used.
    pub fn build_with_retry<T: Scalar>(
        session: &OracleSession<'_, T>,
        cfg: BuildConfig,
        attempts: usize,
    ) -> Result<(Self, usize)> {
        let mut last = None;
        for k in 0..attempts.max(1) {
            let seed = cfg.seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            match Self::build(session, BuildConfig { seed, ..cfg }) {
                Ok(idx) => return Ok((idx, k + 1)),
                Err(e @ Error::BuildFailure { .. }) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    /// Algorithm 2 with the registered query point.
    pub fn search<T: Scalar>(&self, session: &OracleSession<'_, T>) -> Result<HierSearch> {
        self.search_rnn(session, self.levels())
    }

    /// Descend only to `stop_level` and return the closest sample there.
    pub fn search_rnn<T: Scalar>(&self, session: &OracleSession<'_, T>, stop_level: usize) -> Result<HierSearch> {
        if session.n() != self.n {
            return invalid(format!("index covers {} objects, session has {}", self.n, session.n()));
        }
        if !session.has_query() {
            return Err(Error::State("search needs a registered query point".into()));
        }
        if stop_level == 0 || stop_level > self.levels() {
            return invalid(format!("stop level must be in 1..={}", self.levels()));
        }
        let s = session.in_phase(Phase::Search).scoped();
        let mut mark = vec![false; self.n];
        let mut current: Vec<usize> = Vec::new();
        let mut per_level = Vec::with_capacity(stop_level);
        for lvl in 0..stop_level {
            let cand = if lvl == 0 {
                self.samples[0].clone()
            } else {
                candidates(&self.samples[lvl], &self.phi[lvl - 1], &current, &mut mark)
            };
            per_level.push(cand.len());
            if cand.is_empty() {
                return Err(Error::SearchFailure { level: lvl + 1 });
            }
            let keep = if lvl + 1 == stop_level { 1 } else { self.kappa };
            current = s.rank_prefix(Point::Query, &cand, keep)?;
        }
        Ok(HierSearch { nearest: current[0], questions: s.ledger().total(), candidates_per_level: per_level })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC);
        w.u64(self.n as u64);
        w.u32(self.levels() as u32);
        w.f64(self.cfg.d);
        w.f64(self.cfg.a);
        w.u64(self.cfg.seed);
        w.u64(self.kappa as u64);
        w.u64(self.stats.questions);
        w.u64(self.stats.max_candidates);
        w.u64(self.stats.total_candidates);
        for s in &self.samples {
            w.ids(s);
        }
        for p in &self.phi {
            for &x in p {
                w.id(x);
            }
        }
        for level in &self.prefix {
            for list in level {
                w.ids(list);
            }
        }
        w.buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, MAGIC)?;
        let n = r.count("n", u32::MAX as u64)?;
        let levels = r.u32()? as usize;
        if n == 0 || levels == 0 || levels > 64 {
            return Err(Error::Format(format!("bad index header (n = {n}, L = {levels})")));
        }
        let cfg = BuildConfig { d: r.f64()?, a: r.f64()?, seed: r.u64()? };
        cfg.validate().map_err(|e| Error::Format(e.to_string()))?;
        let kappa = r.count("kappa", u32::MAX as u64)?;
        let stats = BuildStats { questions: r.u64()?, max_candidates: r.u64()?, total_candidates: r.u64()? };
        let samples = (0..levels).map(|_| r.ids(n)).collect::<Result<Vec<_>>>()?;
        let phi = (0..levels)
            .map(|_| (0..n).map(|_| r.bounded_id(n)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let prefix = (0..levels)
            .map(|_| (0..n).map(|_| r.ids(n)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(HierIndex { n, cfg, kappa, samples, phi, prefix, stats })
    }
}

// ---------------------------------------------------------------------------
// Sampling properties

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPropertyReport {
    /// `objects[j][i]`: properties 1..5 for object `j` at level `i+1`.
    pub objects: Vec<Vec<[bool; 5]>>,
    /// Same for the query point, if one was given.
    pub query: Option<Vec<[bool; 5]>>,
    pub pass: bool,
}

impl SamplingPropertyReport {
    /// Fraction of (object, level) pairs with all five properties.
    pub fn pass_fraction(&self) -> f64 {
        let all: Vec<bool> = self.objects.iter().flatten().map(|p| p.iter().all(|&b| b)).collect();
        all.iter().filter(|&&b| b).count() as f64 / all.len().max(1) as f64
    }

    pub fn query_pass(&self) -> bool {
        self.query.as_ref().is_some_and(|q| q.iter().flatten().all(|&b| b))
    }
}

/// Exact check of the five per-level sampling properties.
///
/// With `lambda_i = n / (2D)^(i-1)` and balls `beta_o(r) = {u : r_o(u) <= r}`:
/// 1. `|S_i ∩ beta_o(lambda_{i+1})| >= 1`
/// 2. `|S_i ∩ beta_o(lambda_i)| <= 4 a D log n`
/// 3. `|S_{i+1} ∩ beta_o(lambda_{i-1})| <= 16 a D^3 log n`
/// 4. `|S_i ∩ beta_o(4 lambda_i)| >= min(4 a D log n, E/2)` where `E` is the
///    expected count `m_i |beta_o(4 lambda_i)| / n`
/// 5. `|S_{i+1} ∩ beta_o(4 lambda_{i-1})| <= 64 a D^3 log n`
///
/// Properties 3 and 5 hold vacuously on the last level. For the query the
/// ranks come from its own ordering, where the nearest object has rank 1,
/// so property 1 uses radius `max(lambda_{i+1}, 1)`.
pub fn verify_sampling_properties(
    idx: &HierIndex,
    rm: &RankMatrix,
    q: Option<&QueryRanks>,
) -> Result<SamplingPropertyReport> {
    let n = idx.n();
    if rm.n() != n {
        return invalid("rank matrix and index cover different spaces");
    }
    let cfg = idx.config();
    let (a, d, logn) = (cfg.a, cfg.d, log2n(n));
    let levels = idx.levels();
    let lambda = |i: i32| n as f64 / (2.0 * d).powi(i - 1);
    let check = |ranks: &dyn Fn(usize) -> u32, is_query: bool| -> Vec<[bool; 5]> {
        let count = |level: usize, radius: f64| {
            idx.samples(level).iter().filter(|&&s| ranks(s) as f64 <= radius).count() as f64
        };
        (1..=levels)
            .map(|i| {
                let li = i as i32;
                let r1 = if is_query { lambda(li + 1).max(1.0) } else { lambda(li + 1) };
                let p1 = count(i, r1) >= 1.0;
                let p2 = count(i, lambda(li)) <= 4.0 * a * d * logn;
                let ball4 = (0..n).filter(|&u| ranks(u) as f64 <= 4.0 * lambda(li)).count() as f64;
                let expected = idx.samples(i).len() as f64 * ball4 / n as f64;
                let p4 = count(i, 4.0 * lambda(li)) >= (4.0 * a * d * logn).min(expected / 2.0);
                let (p3, p5) = if i == levels {
                    (true, true)
                } else {
                    (
                        count(i + 1, lambda(li - 1)) <= 16.0 * a * d.powi(3) * logn,
                        count(i + 1, 4.0 * lambda(li - 1)) <= 64.0 * a * d.powi(3) * logn,
                    )
                };
                [p1, p2, p3, p4, p5]
            })
            .collect()
    };
    let objects: Vec<Vec<[bool; 5]>> = (0..n).map(|o| check(&|u| rm.get(o, u), false)).collect();
    let query = q.map(|qr| check(&|u| qr.to_objects[u], true));
    let pass = objects.iter().chain(query.iter()).flatten().flatten().all(|&b| b);
    Ok(SamplingPropertyReport { objects, query, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranks::{compute_rank_matrix, RankMode};
    use crate::space::{HiddenSpace, QueryPoint};

    #[test]
    fn config_formulas() {
        let cfg = BuildConfig::new(2.0, 2.0, 0).unwrap();
        // log2 256 = 8, 2D = 4: L = 4, m_1 = 64, m_2 = 256, kappa = 128.
        assert_eq!(cfg.layout(256), Layout { sample_sizes: vec![64, 256, 256, 256], kappa: 128 });
        assert!(BuildConfig::new(2.0, 0.0, 0).is_err());
        assert!(BuildConfig::new(0.5, 2.0, 0).is_err());
        assert_eq!(BuildConfig::new(1.0, 1.0, 0).unwrap().layout(1).sample_sizes, vec![1]);
    }

    #[test]
    fn two_objects() {
        let s = HiddenSpace::line(vec![0.0f64, 1.0]).unwrap();
        let o = OracleSession::new(&s);
        let idx = HierIndex::build(&o, BuildConfig::new(3.0, 2.0, 1).unwrap()).unwrap();
        let last = idx.levels();
        let mut all = idx.samples(last).to_vec();
        all.sort();
        assert_eq!(all, vec![0, 1]);
        assert_eq!(idx.phi(0, last), 0);
        assert_eq!(idx.phi(1, last), 1);
    }

    #[test]
    fn single_object_search_is_free() {
        let s = HiddenSpace::line(vec![0.5f64]).unwrap();
        let o = OracleSession::new(&s);
        let idx = HierIndex::build(&o, BuildConfig::new(1.0, 2.0, 1).unwrap()).unwrap();
        let q = o.with_query(&QueryPoint::Coords(vec![3.0])).unwrap();
        let r = idx.search(&q).unwrap();
        assert_eq!(r.nearest, 0);
        assert_eq!(r.questions, 0);
    }

    #[test]
    fn search_needs_query() {
        let s = HiddenSpace::line(vec![0.0f64, 1.0, 2.0]).unwrap();
        let o = OracleSession::new(&s);
        let idx = HierIndex::build(&o, BuildConfig::new(1.0, 2.0, 1).unwrap()).unwrap();
        assert!(matches!(idx.search(&o), Err(Error::State(_))));
        let q = o.with_query(&QueryPoint::Coords(vec![0.9])).unwrap();
        assert!(idx.search_rnn(&q, 0).is_err());
    }

    #[test]
    fn stored_lists_are_sorted_samples() {
        let s = HiddenSpace::<f64>::torus(120, 2, 3).unwrap();
        let o = OracleSession::new(&s);
        let rm = compute_rank_matrix(&o, RankMode::Direct).unwrap();
        let idx = HierIndex::build(&o, BuildConfig::new(1.5, 1.0, 4).unwrap()).unwrap();
        assert_eq!(idx.stats().questions, o.ledger().phase(Phase::Learning));
        for lvl in 1..=idx.levels() {
            let set = idx.samples(lvl);
            for j in 0..120 {
                let list = idx.prefix(j, lvl);
                assert!(list.len() <= idx.kappa());
                assert!(list.iter().all(|x| set.contains(x)));
                assert!(list.windows(2).all(|w| rm.get(j, w[0]) < rm.get(j, w[1])));
                assert_eq!(list[0], idx.phi(j, lvl));
            }
        }
    }

    #[test]
    fn round_trip() {
        let s = HiddenSpace::<f64>::torus(50, 2, 8).unwrap();
        let o = OracleSession::new(&s);
        let idx = HierIndex::build(&o, BuildConfig::new(2.0, 1.0, 2).unwrap()).unwrap();
        let bytes = idx.to_bytes();
        let back = HierIndex::from_bytes(&bytes).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.to_bytes(), bytes);
        assert!(HierIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(HierIndex::from_bytes(b"RKA1").is_err());
    }
}
