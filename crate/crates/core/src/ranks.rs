//! Ground-truth rank machinery.
//!
//! Ranks are 0-based: `r_x(x) = 0`, and `r_x(y)` is the number of objects
//! that precede `y` in `x`'s ordering of the database. Everything here works
//! on a full [`RankMatrix`] and asks no oracle questions, except building the
//! matrix in [`RankMode::Oracle`].

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::oracle::{order_from, OracleSession, Point};
use crate::scalar::{to_rank, Exact, RankReal, Scalar};
use crate::space::{GroundTruth, QueryPoint};

/// Row-major `r[i][j] = r_i(j)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankMatrix {
    n: usize,
    r: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RankMode {
    /// Sort every row with oracle questions.
    Oracle,
    /// Read concealed distances; only for verification.
    Direct,
}

impl RankMatrix {
    pub fn from_rows(n: usize, r: Vec<u32>) -> Result<Self> {
        if r.len() != n * n {
            return invalid(format!("rank matrix must have {} entries", n * n));
        }
        let mut seen = vec![usize::MAX; n];
        for i in 0..n {
            if r[i * n + i] != 0 {
                return invalid(format!("r[{i}][{i}] must be 0"));
            }
            for j in 0..n {
                let v = r[i * n + j] as usize;
                if v >= n || seen[v] == i {
                    return invalid(format!("row {i} is not a permutation of 0..{n}"));
                }
                seen[v] = i;
            }
        }
        Ok(RankMatrix { n, r })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.r[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.r[i * self.n..(i + 1) * self.n]
    }

    /// Objects in order of increasing rank from `i` (starting with `i`).
    pub fn ordering(&self, i: usize) -> Vec<usize> {
        let mut out = vec![0; self.n];
        for (j, &r) in self.row(i).iter().enumerate() {
            out[r as usize] = j;
        }
        out
    }

    pub fn transpose(&self) -> Vec<u32> {
        let n = self.n;
        let mut t = vec![0; n * n];
        for i in 0..n {
            for j in 0..n {
                t[j * n + i] = self.r[i * n + j];
            }
        }
        t
    }

    /// Ranks recomputed within `subset`; entry `(a, b)` of the result is
    /// `r_{subset[a]}(subset[b], subset)`.
    pub fn restrict(&self, subset: &[usize]) -> Result<RankMatrix> {
        let m = subset.len();
        if subset.iter().any(|&i| i >= self.n) {
            return invalid("subset contains an unknown id");
        }
        let mut r = vec![0u32; m * m];
        let mut idx: Vec<usize> = (0..m).collect();
        for a in 0..m {
            let row = self.row(subset[a]);
            idx.sort_unstable_by_key(|&b| row[subset[b]]);
            for (pos, &b) in idx.iter().enumerate() {
                r[a * m + b] = pos as u32;
            }
        }
        RankMatrix::from_rows(m, r)
    }

    /// The matrix over the database plus one query point (index `n`).
    pub fn augmented(&self, q: &QueryRanks) -> RankMatrix {
        let n = self.n;
        let m = n + 1;
        let mut r = vec![0u32; m * m];
        for i in 0..n {
            let p = q.of_query[i];
            for j in 0..n {
                let v = self.get(i, j);
                r[i * m + j] = if v >= p { v + 1 } else { v };
            }
            r[i * m + n] = p;
        }
        for j in 0..n {
            r[n * m + j] = q.to_objects[j];
        }
        r[n * m + n] = 0;
        RankMatrix { n: m, r }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(u32::to_string).collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }
}

/// Positions of all of `0..n` from `reference` under the oracle's total order.
fn direct_row<T: Scalar>(gt: &GroundTruth<'_, T>, reference: usize) -> Vec<u32> {
    let n = gt.n();
    let mut others: Vec<usize> = (0..n).filter(|&j| j != reference).collect();
    others.sort_by(|&a, &b| {
        order_from(
            Point::Object(reference),
            Point::Object(a),
            gt.distance(reference, a),
            Point::Object(b),
            gt.distance(reference, b),
        )
    });
    let mut row = vec![0u32; n];
    for (pos, &j) in others.iter().enumerate() {
        row[j] = pos as u32 + 1;
    }
    row
}

pub fn compute_rank_matrix<T: Scalar>(session: &OracleSession<'_, T>, mode: RankMode) -> Result<RankMatrix> {
    let n = session.n();
    if n == 0 {
        return invalid("empty space");
    }
    let rows: Vec<Vec<u32>> = match mode {
        RankMode::Direct => {
            let gt = session.space().ground_truth()?;
            (0..n).into_par_iter().map(|i| direct_row(&gt, i)).collect()
        }
        RankMode::Oracle => (0..n)
            .into_par_iter()
            .map(|i| {
                let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                let sorted = session.rank_objects(Point::Object(i), &others)?;
                let mut row = vec![0u32; n];
                for (pos, &j) in sorted.iter().enumerate() {
                    row[j] = pos as u32 + 1;
                }
                Ok(row)
            })
            .collect::<Result<_>>()?,
    };
    Ok(RankMatrix { n, r: rows.concat() })
}

/// Ground-truth ranks between the database and one external query point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryRanks {
    /// `r_q(o)`: 1-based position of `o` in the query's ordering
    /// (the query itself would sit at 0).
    pub to_objects: Vec<u32>,
    /// `r_i(q)`: position of the query in `i`'s ordering of the database
    /// plus the query, with `i` at 0.
    pub of_query: Vec<u32>,
}

impl QueryRanks {
    pub fn compute<T: Scalar>(gt: &GroundTruth<'_, T>, q: &QueryPoint<T>) -> Result<Self> {
        let n = gt.n();
        let qd = gt.query_distances(q)?;
        let to_objects = Self::ranks_from_row(&qd);
        let of_query = (0..n)
            .into_par_iter()
            .map(|i| {
                let before = (0..n)
                    .filter(|&y| y != i)
                    .filter(|&y| {
                        order_from(Point::Object(i), Point::Object(y), gt.distance(i, y), Point::Query, qd[i])
                            .is_lt()
                    })
                    .count();
                before as u32 + 1
            })
            .collect();
        Ok(QueryRanks { to_objects, of_query })
    }

    /// Only `r_q(o)` for every object, without the O(n^2) reverse ranks.
    pub fn to_objects_only<T: Scalar>(gt: &GroundTruth<'_, T>, q: &QueryPoint<T>) -> Result<Vec<u32>> {
        Ok(Self::ranks_from_row(&gt.query_distances(q)?))
    }

    fn ranks_from_row<T: Scalar>(qd: &[T]) -> Vec<u32> {
        let mut order: Vec<usize> = (0..qd.len()).collect();
        order.sort_by(|&a, &b| order_from(Point::Query, Point::Object(a), qd[a], Point::Object(b), qd[b]));
        let mut ranks = vec![0u32; qd.len()];
        for (pos, &o) in order.iter().enumerate() {
            ranks[o] = pos as u32 + 1;
        }
        ranks
    }

    /// The query's nearest database object.
    pub fn nearest(&self) -> usize {
        self.to_objects.iter().position(|&r| r == 1).expect("non-empty database")
    }

    /// The query's rank column `rho_q`: coordinate `i` is the query's
    /// position in `i`'s ordering with `i` itself removed. With this choice
    /// a query coinciding with object `u` has exactly `u`'s column.
    pub fn column(&self) -> Vec<u32> {
        self.of_query.iter().map(|&p| p - 1).collect()
    }
}

// ---------------------------------------------------------------------------
// Disorder constant

/// One of the four approximate triangle inequalities, as
/// `r_x(y) <= D * denominator(x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Inequality {
    /// `r_z(x) + r_z(y)`
    First,
    /// `r_x(z) + r_y(z)`
    Second,
    /// `r_x(z) + r_z(y)`
    Third,
    /// `r_z(x) + r_y(z)`
    Fourth,
}

impl Inequality {
    pub const ALL: [Inequality; 4] = [Inequality::First, Inequality::Second, Inequality::Third, Inequality::Fourth];

    pub fn denominator(self, rm: &RankMatrix, x: usize, y: usize, z: usize) -> u32 {
        match self {
            Inequality::First => rm.get(z, x) + rm.get(z, y),
            Inequality::Second => rm.get(x, z) + rm.get(y, z),
            Inequality::Third => rm.get(x, z) + rm.get(z, y),
            Inequality::Fourth => rm.get(z, x) + rm.get(y, z),
        }
    }

    /// Whether the inequality holds for `(x, y, z)` with constant `d`.
    pub fn holds(self, rm: &RankMatrix, x: usize, y: usize, z: usize, d: Exact) -> bool {
        Exact::from_integer(rm.get(x, y) as i64) <= d * Exact::from_integer(self.denominator(rm, x, y, z) as i64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub inequality: Inequality,
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub numerator: u32,
    pub denominator: u32,
}

impl Witness {
    pub fn ratio(&self) -> Exact {
        Exact::new(self.numerator as i64, self.denominator as i64)
    }

    fn beats(&self, other: &Witness) -> bool {
        let lhs = self.numerator as u64 * other.denominator as u64;
        let rhs = other.numerator as u64 * self.denominator as u64;
        lhs > rhs || (lhs == rhs && (self.x, self.y, self.z) < (other.x, other.y, other.z))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DisorderResult {
    /// Smallest D satisfying all four inequalities on every triple.
    pub d: Exact,
    /// Triple attaining the largest ratio for each inequality, in
    /// [`Inequality::ALL`] order.
    pub witnesses: [Witness; 4],
}

impl DisorderResult {
    pub fn d_f64(&self) -> f64 {
        self.d.to_f64_lossy()
    }

    /// The witness that determines D.
    pub fn binding(&self) -> &Witness {
        self.witnesses
            .iter()
            .find(|w| w.ratio() == self.d)
            .unwrap_or(&self.witnesses[0])
    }
}

/// Exact brute force over all ordered triples; O(n^3), no questions.
pub fn disorder_constant(rm: &RankMatrix) -> Result<DisorderResult> {
    let n = rm.n();
    if n < 2 {
        return invalid("disorder needs at least two objects");
    }
    let t = rm.transpose();
    let seed = |inequality| Witness { inequality, x: 0, y: 0, z: 0, numerator: 0, denominator: 1 };
    let per_x: Vec<[Witness; 4]> = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut best = Inequality::ALL.map(seed);
            let rx = rm.row(x);
            let tx = &t[x * n..(x + 1) * n];
            for y in 0..n {
                if y == x {
                    continue;
                }
                let num = rx[y];
                let ry = rm.row(y);
                let ty = &t[y * n..(y + 1) * n];
                let mut mins = [u32::MAX; 4];
                for z in 0..n {
                    mins[0] = mins[0].min(tx[z] + ty[z]);
                    mins[1] = mins[1].min(rx[z] + ry[z]);
                    mins[2] = mins[2].min(rx[z] + ty[z]);
                    mins[3] = mins[3].min(tx[z] + ry[z]);
                }
                for k in 0..4 {
                    let cand = Witness { inequality: Inequality::ALL[k], x, y, z: 0, numerator: num, denominator: mins[k] };
                    if cand.beats(&best[k]) {
                        let ineq = Inequality::ALL[k];
                        let z = (0..n).find(|&z| ineq.denominator(rm, x, y, z) == mins[k]).expect("min attained");
                        best[k] = Witness { z, ..cand };
                    }
                }
            }
            best
        })
        .collect();
    let mut witnesses = Inequality::ALL.map(seed);
    for b in per_x {
        for k in 0..4 {
            if b[k].beats(&witnesses[k]) {
                witnesses[k] = b[k];
            }
        }
    }
    let d = witnesses.iter().map(Witness::ratio).max().expect("four witnesses").max(Exact::from_integer(1));
    Ok(DisorderResult { d, witnesses })
}

/// Direct check of all four inequalities on every triple.
pub fn satisfies_triangle_inequalities(rm: &RankMatrix, d: Exact) -> bool {
    let n = rm.n();
    (0..n).into_par_iter().all(|x| {
        (0..n).all(|y| (0..n).all(|z| Inequality::ALL.iter().all(|ineq| ineq.holds(rm, x, y, z, d))))
    })
}

// ---------------------------------------------------------------------------
// Rank distortion

/// `sum_j |r_j(u) - r_j(v)|`.
pub fn rho_l1(rm: &RankMatrix, u: usize, v: usize) -> u64 {
    (0..rm.n()).map(|j| (rm.get(j, u) as i64 - rm.get(j, v) as i64).unsigned_abs()).sum()
}

/// `sum_j |r_j(u) - rho[j]|` against an explicit column.
pub fn rho_l1_column(rm: &RankMatrix, u: usize, rho: &[u32]) -> u64 {
    (0..rm.n()).map(|j| (rm.get(j, u) as i64 - rho[j] as i64).unsigned_abs()).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistortionPair {
    pub anchor: usize,
    pub other: usize,
    pub rank: u32,
    pub l1: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveBucket {
    pub rank: u32,
    pub count: usize,
    pub mean_l1: f64,
    pub std_l1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistortionFit {
    pub anchors: Vec<usize>,
    pub pairs: Vec<DistortionPair>,
    pub curve: Vec<CurveBucket>,
    /// Lower envelope slope: `min l1 / rank` over the sampled pairs.
    pub c: Exact,
    /// `max(l1 / rank) / c`.
    pub gamma: Exact,
}

impl DistortionFit {
    /// Whether `c r <= l1 <= gamma c r` holds for every sampled pair.
    pub fn sandwich_holds(&self) -> bool {
        let upper = self.gamma * self.c;
        self.pairs.iter().all(|p| {
            let r = Exact::from_integer(p.rank as i64);
            let l1 = Exact::from_integer(p.l1 as i64);
            self.c * r <= l1 && l1 <= upper * r
        })
    }

    pub fn curve_csv(&self) -> String {
        let mut s = String::from("rank,mean_l1,std_l1\n");
        for b in &self.curve {
            let _ = writeln!(s, "{},{},{}", b.rank, b.mean_l1, b.std_l1);
        }
        s
    }
}

/// Sample `anchor_count` anchors (capped at n) and record `(r_u(v), l1)`
/// for every other object `v`.
pub fn distortion_fit(rm: &RankMatrix, anchor_count: usize, seed: u64) -> Result<DistortionFit> {
    let n = rm.n();
    if anchor_count == 0 {
        return invalid("distortion fit needs at least one anchor");
    }
    if n < 2 {
        return invalid("distortion fit needs at least two objects");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut anchors = sample(&mut rng, n, anchor_count.min(n)).into_vec();
    anchors.sort_unstable();
    let t = rm.transpose();
    let col = |u: usize| &t[u * n..(u + 1) * n];
    let pairs: Vec<DistortionPair> = anchors
        .par_iter()
        .flat_map_iter(|&u| {
            let cu = col(u);
            (0..n).filter(move |&v| v != u).map(move |v| {
                let l1 = cu.iter().zip(col(v)).map(|(&a, &b)| (a as i64 - b as i64).unsigned_abs()).sum();
                DistortionPair { anchor: u, other: v, rank: rm.get(u, v), l1 }
            })
        })
        .collect();

    let mut sums = vec![(0usize, 0f64, 0f64); n];
    for p in &pairs {
        let e = &mut sums[p.rank as usize];
        e.0 += 1;
        e.1 += p.l1 as f64;
        e.2 += (p.l1 as f64).powi(2);
    }
    let curve = sums
        .iter()
        .enumerate()
        .filter(|(_, e)| e.0 > 0)
        .map(|(rank, &(count, s, s2))| {
            let mean = s / count as f64;
            let var = (s2 / count as f64 - mean * mean).max(0.0);
            CurveBucket { rank: rank as u32, count, mean_l1: mean, std_l1: var.sqrt() }
        })
        .collect();

    let ratio = |p: &DistortionPair| Exact::new(p.l1 as i64, p.rank as i64);
    let c = pairs.iter().map(ratio).min().expect("at least one pair");
    let max = pairs.iter().map(ratio).max().expect("at least one pair");
    Ok(DistortionFit { anchors, pairs, curve, c, gamma: max / c })
}

// ---------------------------------------------------------------------------
// Annuli, diameters, balls

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnulusBounds {
    pub lo: i64,
    pub hi: i64,
}

impl AnnulusBounds {
    pub fn contains(&self, rank: u32) -> bool {
        (self.lo..=self.hi).contains(&(rank as i64))
    }
}

/// `lo = max(1, ceil(j/D) - zeta)`, `hi = ceil(D (j + zeta))`.
///
/// Every `y != x` with `r_u(y) < zeta`, where `r_x(u) = j`, has
/// `lo <= r_x(y) <= hi` as long as `D` is at least the disorder constant.
pub fn annulus_bounds<R: RankReal>(j: u64, zeta: u64, d: R) -> AnnulusBounds {
    assert!(j >= 1, "annulus needs j >= 1");
    assert!(d >= R::one(), "disorder constant is at least 1");
    let jr = R::from_rank(j);
    let lo = (to_rank((jr / d).ceil()) - zeta as i64).max(1);
    let hi = to_rank((d * (jr + R::from_rank(zeta))).ceil());
    AnnulusBounds { lo, hi }
}

/// `max_{i,j in S} r_i(j, S) + r_j(i, S)`.
pub fn diameter(rm: &RankMatrix, subset: &[usize]) -> Result<u64> {
    if subset.is_empty() {
        return invalid("diameter of an empty set");
    }
    let sub = rm.restrict(subset)?;
    let m = sub.n();
    Ok((0..m)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| sub.get(i, j) as u64 + sub.get(j, i) as u64)
        .max()
        .unwrap_or(0))
}

/// `{ i : r_x(i) <= r }`, in id order.
pub fn rank_ball(rm: &RankMatrix, x: usize, r: u32) -> Vec<usize> {
    rm.row(x).iter().enumerate().filter(|(_, &v)| v <= r).map(|(i, _)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::HiddenSpace;

    fn line_ranks(points: &[f64]) -> RankMatrix {
        let s = HiddenSpace::line(points.to_vec()).unwrap();
        compute_rank_matrix(&OracleSession::new(&s), RankMode::Direct).unwrap()
    }

    #[test]
    fn equally_spaced_line() {
        let rm = line_ranks(&[0.0, 1.0, 2.0]);
        assert_eq!(rm.get(0, 1), 1);
        assert_eq!(rm.get(0, 2), 2);
        for i in 0..3 {
            assert_eq!(rm.get(i, i), 0);
        }
    }

    #[test]
    fn asymmetric_ranks() {
        let rm = line_ranks(&[0.0, 1.0, 1.5]);
        assert_eq!(rm.get(0, 1), 1);
        assert_eq!(rm.get(1, 0), 2);
    }

    #[test]
    fn oracle_and_direct_agree() {
        let s = HiddenSpace::<f64>::torus(20, 2, 5).unwrap();
        let o = OracleSession::new(&s);
        let a = compute_rank_matrix(&o, RankMode::Oracle).unwrap();
        let b = compute_rank_matrix(&o, RankMode::Direct).unwrap();
        assert_eq!(a, b);
        assert!(o.ledger().total() <= 20 * crate::oracle::insertion_bound(19));
    }

    #[test]
    fn direct_mode_refused_when_sealed() {
        let s = HiddenSpace::line(vec![0.0f64, 1.0]).unwrap().sealed();
        let o = OracleSession::new(&s);
        assert!(matches!(compute_rank_matrix(&o, RankMode::Direct), Err(crate::Error::State(_))));
        assert!(compute_rank_matrix(&o, RankMode::Oracle).is_ok());
    }

    #[test]
    fn two_points_have_unit_disorder() {
        let rm = line_ranks(&[0.0, 1.0]);
        assert_eq!(disorder_constant(&rm).unwrap().d, Exact::from_integer(1));
        assert!(disorder_constant(&line_ranks(&[0.0])).is_err());
    }

    #[test]
    fn rho_l1_five_point_line() {
        // Columns 0 and 1 of the rank matrix of {0,1,2,3,4}, by hand with
        // equal distances going to the lower id: seen from 2 the order is
        // 2, 1, 3, 0, 4, so r_2(0) = 3.
        let rm = line_ranks(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let col = |u: usize| (0..5).map(|j| rm.get(j, u)).collect::<Vec<_>>();
        assert_eq!(col(0), vec![0, 1, 3, 4, 4]);
        assert_eq!(col(1), vec![1, 0, 1, 3, 3]);
        assert_eq!(rho_l1(&rm, 0, 1), 1 + 1 + 2 + 1 + 1);
        assert_eq!(rho_l1(&rm, 1, 0), rho_l1(&rm, 0, 1));
        assert_eq!(rho_l1(&rm, 3, 3), 0);
    }

    #[test]
    fn annulus_formula() {
        assert_eq!(annulus_bounds(10, 2, 2.0f64), AnnulusBounds { lo: 3, hi: 24 });
        assert_eq!(annulus_bounds(10, 2, Exact::from_integer(2)), AnnulusBounds { lo: 3, hi: 24 });
        assert_eq!(annulus_bounds(7, 0, 1.0f64), AnnulusBounds { lo: 7, hi: 7 });
        assert_eq!(annulus_bounds(7, 0, Exact::new(3, 2)), AnnulusBounds { lo: 5, hi: 11 });
    }

    #[test]
    fn diameter_and_balls() {
        let pts: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let rm = line_ranks(&pts);
        assert_eq!(diameter(&rm, &[4]).unwrap(), 0);
        assert_eq!(diameter(&rm, &(0..10).collect::<Vec<_>>()).unwrap(), 18);
        assert_eq!(rank_ball(&rm, 3, 0), vec![3]);
        assert_eq!(rank_ball(&rm, 3, 9).len(), 10);
    }

    #[test]
    fn restrict_recomputes_ranks() {
        let rm = line_ranks(&[0.0, 1.0, 2.0, 3.0]);
        let sub = rm.restrict(&[0, 3]).unwrap();
        assert_eq!(sub.get(0, 1), 1);
        assert_eq!(sub.get(1, 0), 1);
    }

    #[test]
    fn two_point_distortion_has_one_bucket() {
        let rm = line_ranks(&[0.0, 1.0]);
        let fit = distortion_fit(&rm, 2, 0).unwrap();
        assert_eq!(fit.curve.len(), 1);
        assert_eq!(fit.curve[0].rank, 1);
        assert!(fit.sandwich_holds());
        assert!(distortion_fit(&rm, 0, 0).is_err());
    }
}
