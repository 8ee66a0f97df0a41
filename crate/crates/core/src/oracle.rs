//! The similarity oracle and its question ledger.
//!
//! `ask(q, u, v)` answers "which of `u`, `v` is closer to `q`?". Ties are
//! decided by a fixed total order: smaller distance first, then database
//! objects before the query point, then lower id; the reference point beats
//! everything. Every call costs exactly
//! one question on the session's ledger.

use std::cmp::Ordering;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::space::{HiddenSpace, QueryPoint};

/// A database object or the session's registered external query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Point {
    Object(usize),
    Query,
}

impl Point {
    pub fn object(self) -> Option<usize> {
        match self {
            Point::Object(i) => Some(i),
            Point::Query => None,
        }
    }
}

impl From<usize> for Point {
    fn from(i: usize) -> Self {
        Point::Object(i)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Learning,
    Search,
    Analysis,
}

impl Phase {
    const ALL: [Phase; 3] = [Phase::Learning, Phase::Search, Phase::Analysis];

    fn slot(self) -> usize {
        match self {
            Phase::Learning => 0,
            Phase::Search => 1,
            Phase::Analysis => 2,
        }
    }
}

/// Exact count of oracle questions, split by phase.
///
/// Increments are atomic, so concurrent searches sharing a ledger still
/// produce an exact total. A ledger may forward every increment to a parent,
/// which lets a single search keep its own subtotal while the session-wide
/// count stays complete.
#[derive(Debug, Default)]
pub struct QuestionLedger {
    phases: [AtomicU64; 3],
    parent: Option<Arc<QuestionLedger>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub learning: u64,
    pub search: u64,
    pub analysis: u64,
}

impl LedgerSnapshot {
    pub fn total(&self) -> u64 {
        self.learning + self.search + self.analysis
    }
}

impl QuestionLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn child_of(parent: Arc<QuestionLedger>) -> Self {
        QuestionLedger { phases: Default::default(), parent: Some(parent) }
    }

    #[inline]
    fn record(&self, phase: Phase) {
        self.phases[phase.slot()].fetch_add(1, AtomicOrdering::Relaxed);
        if let Some(p) = &self.parent {
            p.record(phase);
        }
    }

    pub fn phase(&self, phase: Phase) -> u64 {
        self.phases[phase.slot()].load(AtomicOrdering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        Phase::ALL.iter().map(|&p| self.phase(p)).sum()
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            learning: self.phase(Phase::Learning),
            search: self.phase(Phase::Search),
            analysis: self.phase(Phase::Analysis),
        }
    }
}

/// Oracle access to a hidden space. This is the only interface search and
/// indexing code receives; it exposes no distances.
#[derive(Clone)]
pub struct OracleSession<'s, T> {
    space: &'s HiddenSpace<T>,
    query: Option<Arc<[T]>>,
    ledger: Arc<QuestionLedger>,
    phase: Phase,
}

impl<'s, T: Scalar> OracleSession<'s, T> {
    pub fn new(space: &'s HiddenSpace<T>) -> Self {
        OracleSession { space, query: None, ledger: Arc::new(QuestionLedger::new()), phase: Phase::Analysis }
    }

    pub fn n(&self) -> usize {
        self.space.n()
    }

    pub fn space(&self) -> &'s HiddenSpace<T> {
        self.space
    }

    pub fn ledger(&self) -> &Arc<QuestionLedger> {
        &self.ledger
    }

    pub fn current_phase(&self) -> Phase {
        self.phase
    }

    pub fn has_query(&self) -> bool {
        self.query.is_some()
    }

    /// Register the external query point used by [`Point::Query`].
    pub fn register_query(&mut self, q: &QueryPoint<T>) -> Result<()> {
        self.query = Some(self.space.query_row(q)?.into());
        Ok(())
    }

    /// Same space and ledger, with `q` registered as the query point.
    pub fn with_query(&self, q: &QueryPoint<T>) -> Result<Self> {
        let mut s = self.clone();
        s.register_query(q)?;
        Ok(s)
    }

    /// Same space, query, and ledger, charging questions to `phase`.
    pub fn in_phase(&self, phase: Phase) -> Self {
        OracleSession { phase, ..self.clone() }
    }

    /// A session with its own ledger whose questions also count on this one.
    pub fn scoped(&self) -> Self {
        OracleSession { ledger: Arc::new(QuestionLedger::child_of(self.ledger.clone())), ..self.clone() }
    }

    /// Distance used for answers; `Query` to `Query` is zero.
    #[inline]
    fn dist(&self, a: Point, b: Point) -> T {
        match (a, b) {
            (Point::Object(i), Point::Object(j)) => self.space.distance(i, j),
            (Point::Object(i), Point::Query) | (Point::Query, Point::Object(i)) => {
                self.query.as_ref().expect("validated")[i]
            }
            (Point::Query, Point::Query) => T::zero(),
        }
    }

    fn check(&self, p: Point) -> Result<()> {
        match p {
            Point::Object(i) if i >= self.space.n() => {
                invalid(format!("unknown object id {i} (n = {})", self.space.n()))
            }
            Point::Query if self.query.is_none() => {
                Err(Error::State("no query point registered with this session".into()))
            }
            _ => Ok(()),
        }
    }

    /// Returns whichever of `u`, `v` is closer to `q`. Costs one question.
    #[inline]
    pub fn ask(&self, q: Point, u: Point, v: Point) -> Result<Point> {
        self.check(q)?;
        self.check(u)?;
        self.check(v)?;
        self.ledger.record(self.phase);
        if u == v {
            return Ok(u);
        }
        Ok(match order_from(q, u, self.dist(q, u), v, self.dist(q, v)) {
            Ordering::Greater => v,
            _ => u,
        })
    }

    /// Sort database objects by closeness to `o` with binary insertion.
    ///
    /// Inserting into a list of length `i` asks at most `ceil(log2(i + 1))`
    /// questions, so the total never exceeds `sum_{i=2}^{m} ceil(log2 i)`.
    pub fn rank_objects(&self, o: Point, set: &[usize]) -> Result<Vec<usize>> {
        self.check(o)?;
        if let Point::Object(oi) = o {
            if set.contains(&oi) {
                return invalid(format!("object {oi} cannot be ranked against itself"));
            }
        }
        let mut sorted: Vec<usize> = Vec::with_capacity(set.len());
        for &item in set {
            self.check(Point::Object(item))?;
            let (mut lo, mut hi) = (0usize, sorted.len());
            while lo < hi {
                let mid = (lo + hi) / 2;
                if self.ask(o, Point::Object(item), Point::Object(sorted[mid]))? == Point::Object(item) {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            sorted.insert(lo, item);
        }
        Ok(sorted)
    }

    /// The first `k` elements of [`rank_objects`](Self::rank_objects), in
    /// order. When the list is full a newcomer is first compared with the
    /// current last entry, so rejected items cost one question.
    pub fn rank_prefix(&self, o: Point, set: &[usize], k: usize) -> Result<Vec<usize>> {
        if k >= set.len() {
            return self.rank_objects(o, set);
        }
        self.check(o)?;
        if let Point::Object(oi) = o {
            if set.contains(&oi) {
                return invalid(format!("object {oi} cannot be ranked against itself"));
            }
        }
        let mut top: Vec<usize> = Vec::with_capacity(k + 1);
        if k == 0 {
            return Ok(top);
        }
        for &item in set {
            self.check(Point::Object(item))?;
            let p = Point::Object(item);
            let full = top.len() == k;
            if full && self.ask(o, p, Point::Object(top[k - 1]))? != p {
                continue;
            }
            let (mut lo, mut hi) = (0usize, if full { k - 1 } else { top.len() });
            while lo < hi {
                let mid = (lo + hi) / 2;
                if self.ask(o, p, Point::Object(top[mid]))? == p {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            top.insert(lo, item);
            top.truncate(k);
        }
        Ok(top)
    }
}

/// Total order on candidates `u`, `v` as seen from `q`. The reference point
/// itself always comes first, so `r_x(x) = 0` even with coincident objects.
#[inline]
pub(crate) fn order_from<T: Scalar>(q: Point, u: Point, du: T, v: Point, dv: T) -> Ordering {
    if u == q || v == q {
        return (v == q).cmp(&(u == q));
    }
    du.partial_cmp(&dv).unwrap_or(Ordering::Equal).then_with(|| tie_key(u).cmp(&tie_key(v)))
}

#[inline]
fn tie_key(p: Point) -> (u8, usize) {
    match p {
        Point::Object(i) => (0, i),
        Point::Query => (1, 0),
    }
}

/// `sum_{i=2}^{m} ceil(log2 i)`: the binary-insertion question bound.
pub fn insertion_bound(m: usize) -> u64 {
    (2..=m as u64).map(|i| 64 - (i - 1).leading_zeros() as u64).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> HiddenSpace<f64> {
        HiddenSpace::line(points.to_vec()).unwrap()
    }

    #[test]
    fn strict_ordering_on_a_line() {
        let s = line(&[0.0, 0.1, 0.5]);
        let o = OracleSession::new(&s);
        assert_eq!(o.ask(0.into(), 1.into(), 2.into()).unwrap(), Point::Object(1));
        assert_eq!(o.ledger().total(), 1);
    }

    #[test]
    fn identical_arguments_and_ties() {
        let s = line(&[0.0, 1.0, -1.0]);
        let o = OracleSession::new(&s);
        assert_eq!(o.ask(0.into(), 2.into(), 2.into()).unwrap(), Point::Object(2));
        // Equidistant: lower id wins regardless of argument order.
        assert_eq!(o.ask(0.into(), 2.into(), 1.into()).unwrap(), Point::Object(1));
        assert_eq!(o.ask(0.into(), 1.into(), 2.into()).unwrap(), Point::Object(1));
    }

    #[test]
    fn query_loses_ties() {
        let s = line(&[0.0, 1.0]);
        let o = OracleSession::new(&s).with_query(&QueryPoint::Coords(vec![1.0])).unwrap();
        assert_eq!(o.ask(0.into(), Point::Query, 1.into()).unwrap(), Point::Object(1));
        assert_eq!(o.ask(0.into(), 1.into(), Point::Query).unwrap(), Point::Object(1));
    }

    #[test]
    fn wrap_distance_decides_on_torus() {
        let s = HiddenSpace::torus_from_coords(1, vec![0.9f64, 0.05, 0.7]).unwrap();
        let o = OracleSession::new(&s);
        assert_eq!(o.ask(0.into(), 1.into(), 2.into()).unwrap(), Point::Object(1));
    }

    #[test]
    fn errors() {
        let s = line(&[0.0, 1.0]);
        let o = OracleSession::new(&s);
        assert!(matches!(o.ask(0.into(), 5.into(), 1.into()), Err(Error::InvalidArgument(_))));
        assert!(matches!(o.ask(Point::Query, 0.into(), 1.into()), Err(Error::State(_))));
        assert!(matches!(o.rank_objects(0.into(), &[0, 1]), Err(Error::InvalidArgument(_))));
        assert_eq!(o.ledger().total(), 0);
    }

    #[test]
    fn rank_three_points() {
        let s = line(&[0.0, 0.5, 0.1, 0.3]);
        let o = OracleSession::new(&s);
        assert_eq!(o.rank_objects(0.into(), &[1, 2, 3]).unwrap(), vec![2, 3, 1]);
        let before = o.ledger().total();
        assert_eq!(o.rank_objects(0.into(), &[1]).unwrap(), vec![1]);
        assert_eq!(o.ledger().total(), before);
    }

    #[test]
    fn prefix_matches_full_sort() {
        let s = HiddenSpace::<f64>::torus(60, 2, 4).unwrap();
        let o = OracleSession::new(&s);
        let set: Vec<usize> = (1..60).collect();
        let full = o.rank_objects(0.into(), &set).unwrap();
        for k in [0, 1, 5, 58, 59, 80] {
            let top = o.rank_prefix(0.into(), &set, k).unwrap();
            assert_eq!(top, full[..k.min(59)].to_vec());
        }
        let before = o.ledger().total();
        o.rank_prefix(0.into(), &set, 1).unwrap();
        assert_eq!(o.ledger().total() - before, 58);
    }

    #[test]
    fn insertion_bound_values() {
        assert_eq!(insertion_bound(0), 0);
        assert_eq!(insertion_bound(1), 0);
        assert_eq!(insertion_bound(2), 1);
        assert_eq!(insertion_bound(4), 1 + 2 + 2);
        assert_eq!(insertion_bound(5), 1 + 2 + 2 + 3);
    }

    #[test]
    fn phases_and_scoped_ledgers() {
        let s = line(&[0.0, 1.0, 2.0]);
        let base = OracleSession::new(&s);
        let learn = base.in_phase(Phase::Learning);
        learn.ask(0.into(), 1.into(), 2.into()).unwrap();
        let scoped = base.in_phase(Phase::Search).scoped();
        scoped.ask(0.into(), 1.into(), 2.into()).unwrap();
        scoped.ask(1.into(), 0.into(), 2.into()).unwrap();
        assert_eq!(scoped.ledger().total(), 2);
        let snap = base.ledger().snapshot();
        assert_eq!(snap, LedgerSnapshot { learning: 1, search: 2, analysis: 0 });
        assert_eq!(snap.total(), base.ledger().total());
    }
}
