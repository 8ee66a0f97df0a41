//! Hidden spaces: concealed point sets whose distances are reachable only
//! through an [`OracleSession`](crate::oracle::OracleSession), plus a gated
//! [`GroundTruth`] view used by verification code.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    Torus,
    Line,
    StarGraph,
    ExplicitMatrix,
}

impl SpaceKind {
    pub(crate) fn code(self) -> u32 {
        match self {
            SpaceKind::Torus => 0,
            SpaceKind::Line => 1,
            SpaceKind::StarGraph => 2,
            SpaceKind::ExplicitMatrix => 3,
        }
    }

    pub(crate) fn from_code(code: u32) -> Result<Self> {
        Ok(match code {
            0 => SpaceKind::Torus,
            1 => SpaceKind::Line,
            2 => SpaceKind::StarGraph,
            3 => SpaceKind::ExplicitMatrix,
            other => return Err(Error::Format(format!("unknown space kind {other}"))),
        })
    }

    pub fn has_coordinates(self) -> bool {
        matches!(self, SpaceKind::Torus | SpaceKind::Line)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Geometry<T> {
    /// Row-major coordinates, `dim` values per object.
    Coords { dim: usize, coords: Vec<T> },
    /// Full row-major n x n distance matrix.
    Matrix(Vec<T>),
}

/// An external query point, registered with a session rather than added to
/// the database.
#[derive(Clone, Debug, PartialEq)]
pub enum QueryPoint<T> {
    /// Coordinates in the same geometry as the database (torus, line).
    Coords(Vec<T>),
    /// Distance from the query to every database object, in id order.
    Distances(Vec<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenSpace<T> {
    kind: SpaceKind,
    n: usize,
    pub(crate) geometry: Geometry<T>,
    sealed: bool,
}

fn wrap_gap<T: Scalar>(a: T, b: T) -> T {
    let g = (a - b).abs();
    g.min(T::one() - g)
}

impl<T: Scalar> HiddenSpace<T> {
    /// `n` points drawn uniformly from `[0,1]^d` with wrap-around distance.
    pub fn torus(n: usize, d: usize, seed: u64) -> Result<Self> {
        if n == 0 || d == 0 {
            return invalid(format!("torus needs n >= 1 and d >= 1 (got n={n}, d={d})"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = (0..n * d)
            .map(|_| T::from_f64(rng.gen::<f64>()).expect("unit interval fits scalar"))
            .collect();
        Self::torus_from_coords(d, coords)
    }

    pub fn torus_from_coords(d: usize, coords: Vec<T>) -> Result<Self> {
        if d == 0 || coords.is_empty() || !coords.len().is_multiple_of(d) {
            return invalid("torus coordinates must be a non-empty multiple of d");
        }
        if coords.iter().any(|c| !(*c >= T::zero() && *c <= T::one())) {
            return invalid("torus coordinates must lie in [0,1]");
        }
        Ok(HiddenSpace {
            kind: SpaceKind::Torus,
            n: coords.len() / d,
            geometry: Geometry::Coords { dim: d, coords },
            sealed: false,
        })
    }

    /// Points on the real line with distance `|a - b|`.
    pub fn line(points: Vec<T>) -> Result<Self> {
        if points.is_empty() {
            return invalid("line needs at least one point");
        }
        if points.iter().any(|p| !p.is_finite()) {
            return invalid("line points must be finite");
        }
        Ok(HiddenSpace {
            kind: SpaceKind::Line,
            n: points.len(),
            geometry: Geometry::Coords { dim: 1, coords: points },
            sealed: false,
        })
    }

    /// An explicit symmetric distance matrix with zero diagonal.
    pub fn from_matrix(n: usize, matrix: Vec<T>) -> Result<Self> {
        Self::matrix_space(SpaceKind::ExplicitMatrix, n, matrix)
    }

    pub(crate) fn matrix_space(kind: SpaceKind, n: usize, matrix: Vec<T>) -> Result<Self> {
        if n == 0 || matrix.len() != n * n {
            return invalid(format!("distance matrix must be {n}x{n} and non-empty"));
        }
        for i in 0..n {
            if matrix[i * n + i] != T::zero() {
                return invalid(format!("d({i},{i}) must be 0"));
            }
            for j in 0..n {
                let v = matrix[i * n + j];
                if !(v >= T::zero()) || !v.is_finite() {
                    return invalid(format!("d({i},{j}) must be finite and non-negative"));
                }
                if v != matrix[j * n + i] {
                    return invalid(format!("distance matrix is not symmetric at ({i},{j})"));
                }
            }
        }
        Ok(HiddenSpace { kind, n, geometry: Geometry::Matrix(matrix), sealed: false })
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Coordinate dimension, or 0 for matrix spaces.
    pub fn dim(&self) -> usize {
        match &self.geometry {
            Geometry::Coords { dim, .. } => *dim,
            Geometry::Matrix(_) => 0,
        }
    }

    /// Forbid ground-truth access from now on.
    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn sealed(mut self) -> Self {
        self.seal();
        self
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    /// Distances for verification code; fails on a sealed space.
    pub fn ground_truth(&self) -> Result<GroundTruth<'_, T>> {
        if self.sealed {
            return Err(Error::State("ground truth requested on an oracle-only space".into()));
        }
        Ok(GroundTruth { space: self })
    }

    #[inline]
    pub(crate) fn distance(&self, i: usize, j: usize) -> T {
        match &self.geometry {
            Geometry::Coords { dim, coords } => {
                let a = &coords[i * dim..(i + 1) * dim];
                let b = &coords[j * dim..(j + 1) * dim];
                self.coord_distance(a, b)
            }
            Geometry::Matrix(m) => m[i * self.n + j],
        }
    }

    #[inline]
    fn coord_distance(&self, a: &[T], b: &[T]) -> T {
        match self.kind {
            SpaceKind::Torus => {
                if a.len() == 1 {
                    return wrap_gap(a[0], b[0]);
                }
                a.iter()
                    .zip(b)
                    .map(|(&x, &y)| {
                        let g = wrap_gap(x, y);
                        g * g
                    })
                    .fold(T::zero(), |s, v| s + v)
                    .sqrt()
            }
            _ => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| (x - y) * (x - y))
                .fold(T::zero(), |s, v| s + v)
                .sqrt(),
        }
    }

    /// Distances from `q` to every object, in id order.
    pub(crate) fn query_row(&self, q: &QueryPoint<T>) -> Result<Vec<T>> {
        match (q, &self.geometry) {
            (QueryPoint::Distances(row), _) => {
                if row.len() != self.n {
                    return invalid(format!("query row has {} entries, expected {}", row.len(), self.n));
                }
                if row.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
                    return invalid("query distances must be finite and non-negative");
                }
                Ok(row.clone())
            }
            (QueryPoint::Coords(c), Geometry::Coords { dim, coords }) => {
                if c.len() != *dim {
                    return invalid(format!("query has {} coordinates, expected {dim}", c.len()));
                }
                if self.kind == SpaceKind::Torus && c.iter().any(|x| !(*x >= T::zero() && *x <= T::one())) {
                    return invalid("torus query coordinates must lie in [0,1]");
                }
                Ok(coords.chunks_exact(*dim).map(|p| self.coord_distance(c, p)).collect())
            }
            (QueryPoint::Coords(_), Geometry::Matrix(_)) => {
                invalid("coordinate query on a distance-matrix space")
            }
        }
    }

    /// A random query point drawn from the same distribution as a torus
    /// dataset. Line and matrix spaces have no canonical query distribution.
    pub fn random_query<R: Rng>(&self, rng: &mut R) -> Result<QueryPoint<T>> {
        match (self.kind, &self.geometry) {
            (SpaceKind::Torus, Geometry::Coords { dim, .. }) => Ok(QueryPoint::Coords(
                (0..*dim)
                    .map(|_| T::from_f64(rng.gen::<f64>()).expect("unit interval fits scalar"))
                    .collect(),
            )),
            _ => invalid(format!("no query distribution for {:?} spaces", self.kind)),
        }
    }
}

/// Concealed-distance view of a space. Only verification paths use it.
#[derive(Clone, Copy)]
pub struct GroundTruth<'a, T> {
    space: &'a HiddenSpace<T>,
}

impl<'a, T: Scalar> GroundTruth<'a, T> {
    pub fn n(&self) -> usize {
        self.space.n
    }

    pub fn distance(&self, i: usize, j: usize) -> T {
        self.space.distance(i, j)
    }

    pub fn query_distances(&self, q: &QueryPoint<T>) -> Result<Vec<T>> {
        self.space.query_row(q)
    }

    /// Coordinates of object `i`, when the space has any.
    pub fn coords(&self, i: usize) -> Option<&'a [T]> {
        match &self.space.geometry {
            Geometry::Coords { dim, coords } => Some(&coords[i * dim..(i + 1) * dim]),
            Geometry::Matrix(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torus_wraps_around() {
        let s = HiddenSpace::torus_from_coords(1, vec![0.0f64, 0.9]).unwrap();
        let d = s.ground_truth().unwrap().distance(0, 1);
        assert!((d - 0.1).abs() < 1e-12);
    }

    #[test]
    fn torus_rejects_degenerate_sizes() {
        assert!(matches!(HiddenSpace::<f64>::torus(0, 2, 1), Err(Error::InvalidArgument(_))));
        assert!(matches!(HiddenSpace::<f64>::torus(5, 0, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn torus_is_deterministic_and_single_object_is_fine() {
        let a = HiddenSpace::<f64>::torus(1600, 2, 7).unwrap();
        let b = HiddenSpace::<f64>::torus(1600, 2, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n(), 1600);
        let one = HiddenSpace::<f32>::torus(1, 1, 3).unwrap();
        assert_eq!(one.n(), 1);
    }

    #[test]
    fn distances_are_symmetric_and_zero_on_diagonal() {
        let s = HiddenSpace::<f64>::torus(40, 3, 11).unwrap();
        let gt = s.ground_truth().unwrap();
        for i in 0..40 {
            assert_eq!(gt.distance(i, i), 0.0);
            for j in 0..40 {
                assert!(gt.distance(i, j) >= 0.0);
                assert_eq!(gt.distance(i, j), gt.distance(j, i));
            }
        }
    }

    #[test]
    fn sealed_space_hides_ground_truth() {
        let s = HiddenSpace::line(vec![0.0f64, 1.0]).unwrap().sealed();
        assert!(matches!(s.ground_truth(), Err(Error::State(_))));
    }

    #[test]
    fn matrix_validation() {
        assert!(HiddenSpace::from_matrix(2, vec![0.0f64, 1.0, 1.0, 0.0]).is_ok());
        assert!(HiddenSpace::from_matrix(2, vec![0.0f64, 1.0, 2.0, 0.0]).is_err());
        assert!(HiddenSpace::from_matrix(2, vec![1.0f64, 1.0, 1.0, 0.0]).is_err());
        assert!(HiddenSpace::from_matrix(2, vec![0.0f64, -1.0, -1.0, 0.0]).is_err());
    }
}
