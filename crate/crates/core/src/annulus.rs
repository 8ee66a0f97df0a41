//! Sampling search with a known disorder constant.
//!
//! Learning ranks the whole database with respect to `m` random samples.
//! A search finds the closest sample `x`, locates the query inside `x`'s
//! ranking, and then draws candidates from the rank annulus around `x` that
//! must contain the query's `R` nearest neighbors.

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{invalid, Error, Result};
use crate::oracle::{OracleSession, Phase, Point};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"RKA1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnulusIndex {
    n: usize,
    samples: Vec<usize>,
    /// `rankings[k]` lists every object except `samples[k]`, closest first,
    /// so the object at position `p` has rank `p + 1`.
    rankings: Vec<Vec<usize>>,
    learn_questions: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnulusParams {
    /// Target rank: success means the answer is among the `r` nearest.
    pub r: usize,
    pub d: f64,
    /// Scales the draw budget `(D + 1) + D^2 j' / R`.
    pub budget_multiplier: f64,
    pub seed: u64,
}

impl AnnulusParams {
    pub const DEFAULT_MULTIPLIER: f64 = 1.0;

    pub fn new(r: usize, d: f64, seed: u64) -> Self {
        AnnulusParams { r, d, budget_multiplier: Self::DEFAULT_MULTIPLIER, seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnulusSearchTrace {
    pub result: usize,
    /// Closest sample.
    pub x: usize,
    /// `r_x(q)`: `1 +` the number of objects `x` ranks before the query.
    pub j_prime: usize,
    pub lo: usize,
    pub hi: usize,
    pub budget: usize,
    pub draws: Vec<usize>,
    pub scan_questions: u64,
    pub locate_questions: u64,
    pub questions: u64,
    /// The annulus was empty and `x` was returned as is.
    pub fallback: bool,
}

/// Rank window `[max(1, ceil(j'/D^2) - R), ceil(D^2 j' + D R)]`, cut at
/// `n - 1`. Empty when `lo > hi`.
pub fn search_annulus(j_prime: usize, r: usize, d: f64, n: usize) -> (usize, usize) {
    let d2 = d * d;
    let lo = ((j_prime as f64 / d2).ceil() as i64 - r as i64).max(1) as usize;
    let hi = ((d2 * j_prime as f64 + d * r as f64).ceil() as usize).min(n.saturating_sub(1));
    (lo, hi)
}

pub fn draw_budget(j_prime: usize, r: usize, d: f64, multiplier: f64) -> usize {
    (multiplier * ((d + 1.0) + d * d * j_prime as f64 / r as f64)).ceil() as usize
}

impl AnnulusIndex {
    pub fn learn<T: Scalar>(session: &OracleSession<'_, T>, m: usize, seed: u64) -> Result<Self> {
        let n = session.n();
        if m == 0 || m > n {
            return invalid(format!("sample count must be in 1..={n} (got {m})"));
        }
        let learn = session.in_phase(Phase::Learning).scoped();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = sample(&mut rng, n, m).into_vec();
        let rankings = samples
            .par_iter()
            .map(|&s| {
                let others: Vec<usize> = (0..n).filter(|&j| j != s).collect();
                learn.rank_objects(Point::Object(s), &others)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AnnulusIndex { n, samples, rankings, learn_questions: learn.ledger().total() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn samples(&self) -> &[usize] {
        &self.samples
    }

    /// Stored ranking of the `k`th sample.
    pub fn ranking(&self, k: usize) -> &[usize] {
        &self.rankings[k]
    }

    pub fn learn_questions(&self) -> u64 {
        self.learn_questions
    }

    pub fn search<T: Scalar>(&self, session: &OracleSession<'_, T>, params: &AnnulusParams) -> Result<AnnulusSearchTrace> {
        if session.n() != self.n {
            return invalid(format!("index covers {} objects, session has {}", self.n, session.n()));
        }
        if params.r == 0 {
            return invalid("target rank R must be >= 1");
        }
        if !(params.d >= 1.0) {
            return invalid("disorder constant must be >= 1");
        }
        if !(params.budget_multiplier > 0.0) {
            return invalid("budget multiplier must be positive");
        }
        if !session.has_query() {
            return Err(Error::State("search needs a registered query point".into()));
        }
        let s = session.in_phase(Phase::Search).scoped();
        let q = Point::Query;

        // (1) closest sample by linear scan
        let mut best_k = 0;
        for k in 1..self.samples.len() {
            let cand = Point::Object(self.samples[k]);
            if s.ask(q, cand, Point::Object(self.samples[best_k]))? == cand {
                best_k = k;
            }
        }
        let x = self.samples[best_k];
        let scan_questions = s.ledger().total();

        // (2) binary search for the query's position in x's ranking
        let list = &self.rankings[best_k];
        let (mut lo, mut hi) = (0usize, list.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if s.ask(Point::Object(x), Point::Object(list[mid]), q)? == Point::Object(list[mid]) {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let j_prime = lo + 1;
        let locate_questions = s.ledger().total() - scan_questions;

        let (a_lo, a_hi) = search_annulus(j_prime, params.r, params.d, self.n);
        let mut trace = AnnulusSearchTrace {
            result: x,
            x,
            j_prime,
            lo: a_lo,
            hi: a_hi,
            budget: 0,
            draws: Vec::new(),
            scan_questions,
            locate_questions,
            questions: 0,
            fallback: false,
        };
        if params.r >= self.n {
            trace.questions = s.ledger().total();
            return Ok(trace);
        }
        if a_lo > a_hi {
            trace.fallback = true;
            trace.questions = s.ledger().total();
            return Ok(trace);
        }

        // (3) draws from the annulus, keeping the best so far
        let width = a_hi - a_lo + 1;
        let budget = draw_budget(j_prime, params.r, params.d, params.budget_multiplier);
        trace.budget = budget;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut best = x;
        for off in sample(&mut rng, width, budget.min(width)) {
            let cand = list[a_lo - 1 + off];
            trace.draws.push(cand);
            if s.ask(q, Point::Object(cand), Point::Object(best))? == Point::Object(cand) {
                best = cand;
            }
        }
        trace.result = best;
        trace.questions = s.ledger().total();
        Ok(trace)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC);
        w.u64(self.samples.len() as u64);
        w.u64(self.n as u64);
        w.u64(self.learn_questions);
        for &s in &self.samples {
            w.id(s);
        }
        for list in &self.rankings {
            for &o in list {
                w.id(o);
            }
        }
        w.buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, MAGIC)?;
        let m = r.count("m", u32::MAX as u64)?;
        let n = r.count("n", u32::MAX as u64)?;
        if m == 0 || m > n {
            return Err(Error::Format(format!("bad annulus header (m = {m}, n = {n})")));
        }
        let learn_questions = r.u64()?;
        let samples = (0..m).map(|_| r.bounded_id(n)).collect::<Result<Vec<_>>>()?;
        let mut rankings = Vec::with_capacity(m);
        for &s in &samples {
            let list = (0..n - 1).map(|_| r.bounded_id(n)).collect::<Result<Vec<_>>>()?;
            let mut seen = vec![false; n];
            seen[s] = true;
            for &o in &list {
                if std::mem::replace(&mut seen[o], true) {
                    return Err(Error::Format(format!("ranking of sample {s} is not a permutation")));
                }
            }
            rankings.push(list);
        }
        r.finish()?;
        Ok(AnnulusIndex { n, samples, rankings, learn_questions })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::insertion_bound;
    use crate::space::{HiddenSpace, QueryPoint};

    #[test]
    fn window_and_budget() {
        assert_eq!(search_annulus(10, 2, 1.0, 100), (8, 12));
        assert_eq!(search_annulus(10, 2, 2.0, 100), (1, 44));
        assert_eq!(search_annulus(90, 2, 2.0, 100), (21, 99));
        assert_eq!(draw_budget(10, 2, 2.0, 1.0), 23);
    }

    #[test]
    fn one_sample_by_hand() {
        let s = HiddenSpace::line(vec![0.0f64, 3.0, 1.0, 7.0]).unwrap();
        let o = OracleSession::new(&s);
        let idx = AnnulusIndex::learn(&o, 1, 0).unwrap();
        let x = idx.samples()[0];
        let expected: Vec<usize> = match x {
            0 => vec![2, 1, 3],
            1 => vec![2, 0, 3],
            2 => vec![0, 1, 3],
            _ => vec![1, 2, 0],
        };
        assert_eq!(idx.ranking(0), expected.as_slice());
        assert!(idx.learn_questions() <= insertion_bound(3));
        assert!(AnnulusIndex::learn(&o, 0, 0).is_err());
    }

    #[test]
    fn exact_metric_with_every_sample() {
        let pts: Vec<f64> = (0..20).map(|i| (i * i) as f64).collect();
        let s = HiddenSpace::line(pts).unwrap();
        let o = OracleSession::new(&s);
        let idx = AnnulusIndex::learn(&o, 20, 3).unwrap();
        let q = o.with_query(&QueryPoint::Coords(vec![50.0])).unwrap();
        let t = idx.search(&q, &AnnulusParams::new(1, 1.0, 0)).unwrap();
        assert_eq!(t.result, 7);
        assert_eq!(t.questions, t.scan_questions + t.locate_questions + t.draws.len() as u64);
    }

    #[test]
    fn vacuous_radius_stops_after_locating() {
        let s = HiddenSpace::<f64>::torus(40, 1, 3).unwrap();
        let o = OracleSession::new(&s);
        let idx = AnnulusIndex::learn(&o, 5, 1).unwrap();
        let q = o.with_query(&QueryPoint::Coords(vec![0.5])).unwrap();
        let t = idx.search(&q, &AnnulusParams::new(40, 2.0, 0)).unwrap();
        assert!(t.draws.is_empty());
        assert_eq!(t.result, t.x);
        assert_eq!(t.scan_questions, 4);
    }

    #[test]
    fn round_trip() {
        let s = HiddenSpace::<f64>::torus(30, 2, 3).unwrap();
        let o = OracleSession::new(&s);
        let idx = AnnulusIndex::learn(&o, 4, 9).unwrap();
        let bytes = idx.to_bytes();
        let back = AnnulusIndex::from_bytes(&bytes).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.to_bytes(), bytes);
        let mut bad = bytes.clone();
        let last = bad.len() - 4;
        let prev = bad[last - 4..last].to_vec();
        bad[last..].copy_from_slice(&prev);
        assert!(AnnulusIndex::from_bytes(&bad).is_err());
    }
}
