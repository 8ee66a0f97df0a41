//! Dataset files.
//!
//! Layout (little-endian): `"RKQ1"`, kind `u32`, `n` `u64`, `d` `u64`, then
//! `f64` values. Coordinate kinds store `n * d` row-major coordinates.
//! Matrix kinds store the `n * n` distance matrix followed by `d` query rows
//! of `n` distances each.

use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::space::{Geometry, HiddenSpace, QueryPoint, SpaceKind};
use crate::star::StarInstance;

const MAGIC: &[u8; 4] = b"RKQ1";

/// A hidden space together with any stored query rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub space: HiddenSpace<T>,
    pub queries: Vec<QueryPoint<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(space: HiddenSpace<T>) -> Self {
        Dataset { space, queries: Vec::new() }
    }

    pub fn from_star(star: &StarInstance<T>) -> Self {
        Dataset { space: star.space.clone(), queries: vec![star.query.clone()] }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let s = &self.space;
        let n = s.n();
        let mut w = Writer::new(MAGIC);
        w.u32(s.kind().code());
        w.u64(n as u64);
        let f = |v: &T| v.to_f64().expect("scalar converts to f64");
        match &s.geometry {
            Geometry::Coords { dim, coords } => {
                if !self.queries.is_empty() {
                    return invalid("coordinate datasets do not store query rows");
                }
                w.u64(*dim as u64);
                coords.iter().for_each(|v| w.f64(f(v)));
            }
            Geometry::Matrix(m) => {
                w.u64(self.queries.len() as u64);
                m.iter().for_each(|v| w.f64(f(v)));
                for q in &self.queries {
                    match q {
                        QueryPoint::Distances(row) if row.len() == n => row.iter().for_each(|v| w.f64(f(v))),
                        _ => return invalid("matrix datasets store queries as length-n distance rows"),
                    }
                }
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, MAGIC)?;
        let kind = SpaceKind::from_code(r.u32()?)?;
        let n = r.count("n", u32::MAX as u64)?;
        let d = r.count("d", u32::MAX as u64)?;
        let values = |r: &mut Reader<'_>, k: usize| -> Result<Vec<T>> {
            (0..k)
                .map(|_| {
                    let v = r.f64()?;
                    T::from_f64(v).ok_or_else(|| Error::Format(format!("value {v} does not fit the scalar type")))
                })
                .collect()
        };
        let total = |a: usize, b: usize| {
            a.checked_mul(b)
                .filter(|&k| k.saturating_mul(8) <= buf.len())
                .ok_or_else(|| Error::Format("payload size exceeds file".into()))
        };
        let to_format = |e: Error| match e {
            Error::InvalidArgument(m) => Error::Format(m),
            other => other,
        };
        let ds = match kind {
            SpaceKind::Torus | SpaceKind::Line => {
                let coords = values(&mut r, total(n, d)?)?;
                let space = if kind == SpaceKind::Torus {
                    HiddenSpace::torus_from_coords(d, coords)
                } else if d == 1 {
                    HiddenSpace::line(coords)
                } else {
                    Err(Error::Format(format!("line datasets have d = 1 (got {d})")))
                };
                Dataset::new(space.map_err(to_format)?)
            }
            SpaceKind::StarGraph | SpaceKind::ExplicitMatrix => {
                let m = values(&mut r, total(n, n)?)?;
                let space = HiddenSpace::matrix_space(kind, n, m).map_err(to_format)?;
                let rows = (0..d)
                    .map(|_| Ok(QueryPoint::Distances(values(&mut r, n)?)))
                    .collect::<Result<Vec<_>>>()?;
                for q in &rows {
                    space.query_row(q).map_err(to_format)?;
                }
                Dataset { space, queries: rows }
            }
        };
        r.finish()?;
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Explicit distance matrix from CSV: `n` rows of `n` comma-separated
    /// values. Blank lines and lines starting with `#` are skipped.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<T>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(',')
                .map(|cell| {
                    let v: f64 = cell.trim().parse().map_err(|_| {
                        Error::Format(format!("line {}: cannot parse {:?} as a number", lineno + 1, cell.trim()))
                    })?;
                    T::from_f64(v).ok_or_else(|| Error::Format(format!("line {}: value out of range", lineno + 1)))
                })
                .collect::<Result<Vec<T>>>()?;
            rows.push(row);
        }
        let n = rows.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::Format(format!("row {i} has {} columns, expected {n}", r.len())));
        }
        let space = HiddenSpace::from_matrix(n, rows.concat()).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Format(m),
            other => other,
        })?;
        Ok(Dataset::new(space))
    }
}
