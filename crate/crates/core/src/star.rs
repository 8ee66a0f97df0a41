//! Adversarial star graph with disorder constant of order `alpha`.
//!
//! A hub joins `alpha` branches. Each branch is a path of
//! `supernodes_per_branch` roots (edge weight 1, the first root one step
//! from the hub). Every root carries `alpha` leaf objects with edge weights
//! `1/(4 alpha), ..., alpha/(4 alpha)`. Only leaves are database objects.
//! The query is attached to one random leaf per branch with distinct
//! weights in `[1, 1 + eps]`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::space::{HiddenSpace, QueryPoint, SpaceKind};

#[derive(Clone, Debug, PartialEq)]
pub struct StarInstance<T> {
    pub alpha: usize,
    pub supernodes_per_branch: usize,
    pub epsilon: T,
    pub space: HiddenSpace<T>,
    /// One leaf per branch, in branch order.
    pub direct_neighbors: Vec<usize>,
    /// Query edge weight to each direct neighbor, in branch order.
    pub query_weights: Vec<T>,
    /// The query as a distance row over the database.
    pub query: QueryPoint<T>,
}

impl<T: Scalar> StarInstance<T> {
    pub fn n(&self) -> usize {
        self.space.n()
    }

    /// Object id of leaf `leaf` under supernode `s` of branch `b`.
    pub fn object_id(&self, b: usize, s: usize, leaf: usize) -> usize {
        (b * self.supernodes_per_branch + s) * self.alpha + leaf
    }

    /// `(branch, supernode, leaf)` of an object.
    pub fn locate(&self, id: usize) -> (usize, usize, usize) {
        let leaf = id % self.alpha;
        let node = id / self.alpha;
        (node / self.supernodes_per_branch, node % self.supernodes_per_branch, leaf)
    }

    pub fn leaf_weight(&self, leaf: usize) -> T {
        leaf_weight(self.alpha, leaf)
    }
}

fn leaf_weight<T: Scalar>(alpha: usize, leaf: usize) -> T {
    T::from_usize(leaf + 1).unwrap() / T::from_usize(4 * alpha).unwrap()
}

#[derive(PartialEq, PartialOrd)]
struct Key<T>(T);

impl<T: PartialEq> Eq for Key<T> {}

#[allow(clippy::derive_ord_xor_partial_ord)]
impl<T: PartialOrd> Ord for Key<T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.partial_cmp(&other.0).unwrap_or(std::cmp::Ordering::Equal)
    }
}

fn dijkstra<T: Scalar>(adj: &[Vec<(usize, T)>], src: usize) -> Vec<T> {
    let mut dist = vec![T::infinity(); adj.len()];
    let mut heap = BinaryHeap::new();
    dist[src] = T::zero();
    heap.push(Reverse((Key(T::zero()), src)));
    while let Some(Reverse((Key(d), u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse((Key(nd), v)));
            }
        }
    }
    dist
}

pub fn make_star_graph<T: Scalar>(alpha: usize, supernodes_per_branch: usize, seed: u64) -> Result<StarInstance<T>> {
    if alpha < 2 {
        return invalid(format!("a star needs alpha >= 2 (got {alpha})"));
    }
    if supernodes_per_branch == 0 {
        return invalid("a star needs at least one supernode per branch");
    }
    let spb = supernodes_per_branch;
    let n = alpha * alpha * spb;
    // Graph nodes: objects 0..n, then roots n..n+alpha*spb, then the hub.
    let root = |b: usize, s: usize| n + b * spb + s;
    let hub = n + alpha * spb;
    let mut adj: Vec<Vec<(usize, T)>> = vec![Vec::new(); hub + 1];
    let mut edge = |a: usize, b: usize, w: T| {
        adj[a].push((b, w));
        adj[b].push((a, w));
    };
    for b in 0..alpha {
        edge(hub, root(b, 0), T::one());
        for s in 0..spb {
            if s > 0 {
                edge(root(b, s - 1), root(b, s), T::one());
            }
            for leaf in 0..alpha {
                edge(root(b, s), (b * spb + s) * alpha + leaf, leaf_weight(alpha, leaf));
            }
        }
    }

    let mut matrix = vec![T::zero(); n * n];
    for i in 0..n {
        let d = dijkstra(&adj, i);
        matrix[i * n..(i + 1) * n].copy_from_slice(&d[..n]);
    }
    // Symmetrize against rounding in the summation order.
    for i in 0..n {
        for j in 0..i {
            matrix[i * n + j] = matrix[j * n + i];
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let epsilon = T::one() / T::from_usize(400 * alpha).unwrap();
    let direct_neighbors: Vec<usize> = (0..alpha)
        .map(|b| b * spb * alpha + rng.gen_range(0..spb * alpha))
        .collect();
    let mut steps: Vec<usize> = (0..alpha).collect();
    steps.shuffle(&mut rng);
    let query_weights: Vec<T> = steps
        .iter()
        .map(|&k| T::one() + epsilon * T::from_usize(k).unwrap() / T::from_usize(alpha - 1).unwrap())
        .collect();

    // Shortest paths from the query leave through one of its own edges; the
    // database distances are those of the graph without the query.
    let row: Vec<T> = (0..n)
        .map(|o| {
            direct_neighbors
                .iter()
                .zip(&query_weights)
                .map(|(&dn, &w)| w + matrix[dn * n + o])
                .fold(T::infinity(), T::min)
        })
        .collect();

    Ok(StarInstance {
        alpha,
        supernodes_per_branch,
        epsilon,
        space: HiddenSpace::matrix_space(SpaceKind::StarGraph, n, matrix)?,
        direct_neighbors,
        query_weights,
        query: QueryPoint::Distances(row),
    })
}
