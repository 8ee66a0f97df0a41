//! Rank-ball cuts and the binary tree they induce, plus the popularity
//! statistics of the good set and the good-cut probability model.

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{invalid, Result};
use crate::oracle::{OracleSession, Point};
use crate::ranks::RankMatrix;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutResult {
    pub x1: usize,
    pub x2: usize,
    /// `x1` and every object `x1` ranks before `x2`.
    pub s0: Vec<usize>,
    pub s1: Vec<usize>,
}

impl CutResult {
    /// `r_{x1}(x2, S)`, which equals `|S0|`.
    pub fn k(&self) -> usize {
        self.s0.len()
    }

    fn degenerate(&self) -> bool {
        self.s0.len() <= 1 || self.s1.len() <= 1
    }
}

/// One cut with the given anchors; asks `|S| - 2` questions.
pub fn cut_with_anchors<T: Scalar>(session: &OracleSession<'_, T>, set: &[usize], x1: usize, x2: usize) -> Result<CutResult> {
    if x1 == x2 || !set.contains(&x1) || !set.contains(&x2) {
        return invalid("anchors must be two distinct members of the set");
    }
    let (mut s0, mut s1) = (Vec::new(), Vec::new());
    for &u in set {
        if u == x1 {
            s0.push(u);
        } else if u == x2 {
            s1.push(u);
        } else if session.ask(Point::Object(x1), Point::Object(x2), Point::Object(u))? == Point::Object(u) {
            s0.push(u);
        } else {
            s1.push(u);
        }
    }
    Ok(CutResult { x1, x2, s0, s1 })
}

fn draw_anchors(rng: &mut ChaCha8Rng, set: &[usize]) -> (usize, usize) {
    let pick = sample(rng, set.len(), 2);
    (set[pick.index(0)], set[pick.index(1)])
}

/// Algorithm 3 with two distinct anchors drawn uniformly from `set`.
pub fn rank_ball_cut<T: Scalar>(session: &OracleSession<'_, T>, set: &[usize], seed: u64) -> Result<CutResult> {
    if set.len() < 2 {
        return invalid("a cut needs at least two objects");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x1, x2) = draw_anchors(&mut rng, set);
    cut_with_anchors(session, set, x1, x2)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf { depth: usize, ids: Vec<usize> },
    Internal { depth: usize, x1: usize, x2: usize, k: usize, children: [usize; 2] },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinTree {
    pub seed: u64,
    pub min_leaf: usize,
    pub max_depth: usize,
    /// Node 0 is the root; children refer to indices in this list.
    pub nodes: Vec<TreeNode>,
    pub depth: usize,
    /// Degenerate cuts that were redrawn.
    pub retries: usize,
    /// Degenerate cuts accepted after the retries ran out.
    pub accepted_degenerate: usize,
    pub questions: u64,
}

impl BinTree {
    pub const RETRIES: usize = 3;

    pub fn leaves(&self) -> impl Iterator<Item = &[usize]> {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf { ids, .. } => Some(ids.as_slice()),
            _ => None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }
}

/// Recursive rank-ball cuts until a node holds at most `min_leaf` objects or
/// reaches `max_depth`.
pub fn build_tree<T: Scalar>(
    session: &OracleSession<'_, T>,
    set: &[usize],
    min_leaf: usize,
    max_depth: usize,
    seed: u64,
) -> Result<BinTree> {
    if min_leaf == 0 || max_depth == 0 {
        return invalid("min_leaf and max_depth must be >= 1");
    }
    let s = session.scoped();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tree = BinTree {
        seed,
        min_leaf,
        max_depth,
        nodes: Vec::new(),
        depth: 0,
        retries: 0,
        accepted_degenerate: 0,
        questions: 0,
    };
    grow(&s, &mut tree, &mut rng, set.to_vec(), 0)?;
    tree.questions = s.ledger().total();
    Ok(tree)
}

fn grow<T: Scalar>(
    s: &OracleSession<'_, T>,
    tree: &mut BinTree,
    rng: &mut ChaCha8Rng,
    set: Vec<usize>,
    depth: usize,
) -> Result<usize> {
    let at = tree.nodes.len();
    tree.depth = tree.depth.max(depth);
    if set.len() <= tree.min_leaf.max(1) || depth >= tree.max_depth {
        tree.nodes.push(TreeNode::Leaf { depth, ids: set });
        return Ok(at);
    }
    let mut attempt = 0;
    let cut = loop {
        let (x1, x2) = draw_anchors(rng, &set);
        let cut = cut_with_anchors(s, &set, x1, x2)?;
        if !cut.degenerate() {
            break cut;
        }
        if attempt == BinTree::RETRIES {
            tree.accepted_degenerate += 1;
            break cut;
        }
        attempt += 1;
        tree.retries += 1;
    };
    tree.nodes.push(TreeNode::Internal { depth, x1: cut.x1, x2: cut.x2, k: cut.k(), children: [0, 0] });
    let k = cut.k();
    let left = grow(s, tree, rng, cut.s0, depth + 1)?;
    let right = grow(s, tree, rng, cut.s1, depth + 1)?;
    tree.nodes[at] = TreeNode::Internal { depth, x1: cut.x1, x2: cut.x2, k, children: [left, right] };
    Ok(at)
}

// ---------------------------------------------------------------------------
// Popularity

/// `(1/n) sum_j (1 - r_j(u)/n)`: the probability that `u` lies in the ball
/// `beta_{x1}(r_{x1}(x2))` when both anchors are drawn with replacement.
pub fn phi_exact(rm: &RankMatrix, u: usize) -> f64 {
    let n = rm.n() as f64;
    (0..rm.n()).map(|j| 1.0 - rm.get(j, u) as f64 / n).sum::<f64>() / n
}

/// Closed form for distinct anchors and the strict cut `u ∈ S0`:
/// `(1/n) sum_j (1 - r_j(u)/(n-1))`.
pub fn phi_distinct(rm: &RankMatrix, u: usize) -> f64 {
    let n = rm.n() as f64;
    (0..rm.n()).map(|j| 1.0 - rm.get(j, u) as f64 / (n - 1.0)).sum::<f64>() / n
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorDraw {
    /// Ordered distinct pairs; `u` counts when `r_{x1}(u) < r_{x1}(x2)`,
    /// which is what a cut puts in `S0`.
    Distinct,
    /// All `n^2` ordered pairs; `u` counts when `r_{x1}(u) <= r_{x1}(x2)`.
    WithReplacement,
}

/// Exhaustive enumeration of anchor pairs.
pub fn phi_exhaustive(rm: &RankMatrix, u: usize, draw: AnchorDraw) -> f64 {
    let n = rm.n();
    let mut hits = 0u64;
    let mut total = 0u64;
    for x1 in 0..n {
        let ru = rm.get(x1, u);
        for x2 in 0..n {
            let rx2 = rm.get(x1, x2);
            match draw {
                AnchorDraw::Distinct if x1 == x2 => continue,
                AnchorDraw::Distinct => hits += (ru < rx2) as u64,
                AnchorDraw::WithReplacement => hits += (ru <= rx2) as u64,
            }
            total += 1;
        }
    }
    hits as f64 / total as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopularityEstimate {
    pub cuts: usize,
    pub seed: u64,
    /// `y[u]`: number of cuts that put `u` in the good set.
    pub y: Vec<u64>,
    /// Objects by decreasing `y`, ties by id.
    pub ranking: Vec<usize>,
    /// `phi_exact` per object, when ground truth was supplied.
    pub phi: Option<Vec<f64>>,
    pub questions: u64,
}

impl PopularityEstimate {
    pub fn with_exact(mut self, rm: &RankMatrix) -> Self {
        self.phi = Some((0..rm.n()).map(|u| phi_exact(rm, u)).collect());
        self
    }

    pub fn frequency(&self, u: usize) -> f64 {
        self.y[u] as f64 / self.cuts as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,y,phi_exact\n");
        for (u, y) in self.y.iter().enumerate() {
            let phi = self.phi.as_ref().map(|p| p[u].to_string()).unwrap_or_default();
            let _ = writeln!(s, "{u},{y},{phi}");
        }
        s
    }
}

/// Seed of the `k`th cut in a popularity run.
pub fn cut_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Count good-set memberships over `cuts` independent cuts of the database.
pub fn popularity_scores<T: Scalar>(session: &OracleSession<'_, T>, cuts: usize, seed: u64) -> Result<PopularityEstimate> {
    if cuts == 0 {
        return invalid("popularity needs at least one cut");
    }
    let n = session.n();
    if n < 2 {
        return invalid("popularity needs at least two objects");
    }
    let s = session.scoped();
    let all: Vec<usize> = (0..n).collect();
    let y = (0..cuts)
        .into_par_iter()
        .map(|k| {
            let cut = rank_ball_cut(&s, &all, cut_seed(seed, k))?;
            let mut y = vec![0u64; n];
            for &u in &cut.s0 {
                y[u] += 1;
            }
            Ok::<_, crate::Error>(y)
        })
        .try_reduce(
            || vec![0u64; n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    let mut ranking: Vec<usize> = (0..n).collect();
    ranking.sort_by(|&a, &b| y[b].cmp(&y[a]).then(a.cmp(&b)));
    Ok(PopularityEstimate { cuts, seed, y, ranking, phi: None, questions: s.ledger().total() })
}

// ---------------------------------------------------------------------------
// Good-cut model

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodCutModel {
    pub d: f64,
    pub epsilon: f64,
    pub n: usize,
    /// `(1/2D) sqrt(1 - 8D(1 - eps))`, or 0 when the radicand is negative.
    pub value: f64,
    /// The radicand is non-negative, i.e. `eps >= 1 - 1/(8D)`.
    pub valid: bool,
}

pub fn good_cut_probability(d: f64, epsilon: f64, n: usize) -> GoodCutModel {
    let radicand = 1.0 - 8.0 * d * (1.0 - epsilon);
    let valid = radicand >= 0.0;
    let value = if valid { radicand.sqrt() / (2.0 * d) } else { 0.0 };
    GoodCutModel { d, epsilon, n, value, valid }
}

/// `|{k in 1..=n : (2D/n) k^2 - k + (1 - eps) n < 0}|`, with the quadratic
/// multiplied through by `n`.
pub fn good_cut_count(d: f64, epsilon: f64, n: usize) -> usize {
    let nf = n as f64;
    (1..=n)
        .filter(|&k| {
            let k = k as f64;
            2.0 * d * k * k - k * nf + (1.0 - epsilon) * nf * nf < 0.0
        })
        .count()
}
