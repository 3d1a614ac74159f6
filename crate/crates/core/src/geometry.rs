//! Voronoi tessellation primitives.
//!
//! Positions are flat `N * d` vectors: `N` sequence positions, each a point in
//! `R^d` tessellated by the same [`EmbeddingTable`]. A structured cell is the
//! Cartesian product of the per-position cells, and the compact set is the
//! product of `N` copies of one axis-aligned [`BoundingBox`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Base embeddings `v_1..v_M` in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableRepr", into = "TableRepr")]
pub struct EmbeddingTable {
    centers: Vec<f64>,
    len: usize,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct TableRepr {
    centers: Vec<Vec<f64>>,
}

impl TryFrom<TableRepr> for EmbeddingTable {
    type Error = Error;
    fn try_from(repr: TableRepr) -> Result<Self> {
        EmbeddingTable::new(repr.centers)
    }
}

impl From<EmbeddingTable> for TableRepr {
    fn from(table: EmbeddingTable) -> Self {
        TableRepr {
            centers: table.rows().map(<[f64]>::to_vec).collect(),
        }
    }
}

impl EmbeddingTable {
    pub fn new(centers: Vec<Vec<f64>>) -> Result<Self> {
        let dim = centers.first().map_or(0, Vec::len);
        let flat: Vec<f64> = centers.iter().flatten().copied().collect();
        if centers.iter().any(|c| c.len() != dim) {
            return Err(Error::InvalidArgument(
                "all centers must share one dimension".into(),
            ));
        }
        Self::from_flat(flat, dim)
    }

    pub fn from_flat(centers: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be >= 1".into()));
        }
        if centers.len() % dim != 0 {
            return Err(Error::InvalidArgument(
                "flat center buffer is not a multiple of the dimension".into(),
            ));
        }
        let len = centers.len() / dim;
        if len < 2 {
            return Err(Error::InvalidArgument("need at least two centers".into()));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("centers must be finite".into()));
        }
        let table = EmbeddingTable { centers, len, dim };
        for a in 0..len {
            for b in (a + 1)..len {
                if dist2(table.center(a), table.center(b)) == 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "centers {a} and {b} coincide"
                    )));
                }
            }
        }
        Ok(table)
    }

    /// The four corner embeddings `[1,1], [-1,1], [-1,-1], [1,-1]`.
    pub fn square_toy() -> Self {
        Self::new(vec![
            vec![1.0, 1.0],
            vec![-1.0, 1.0],
            vec![-1.0, -1.0],
            vec![1.0, -1.0],
        ])
        .expect("static table is valid")
    }

    /// The `2^k` sign vectors `{-1, 1}^k`. Index bit `i` set means coordinate `i` is `-1`.
    pub fn hypercube(k: usize) -> Result<Self> {
        if k == 0 || k > 20 {
            return Err(Error::InvalidArgument(format!("hypercube dimension {k} out of range")));
        }
        let mut flat = Vec::with_capacity(k << k);
        for idx in 0..(1usize << k) {
            for i in 0..k {
                flat.push(if idx >> i & 1 == 1 { -1.0 } else { 1.0 });
            }
        }
        Self::from_flat(flat, k)
    }

    /// Number of centers `M`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Embedding dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self, m: usize) -> &[f64] {
        &self.centers[m * self.dim..(m + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.centers.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.centers
    }

    /// Concatenated embeddings `V_bm` of a structured index.
    pub fn embed(&self, cell: &[usize]) -> Vec<f64> {
        cell.iter().flat_map(|&m| self.center(m).iter().copied()).collect()
    }

    /// Number of sequence positions encoded by a flat position vector.
    pub fn positions_of(&self, x: &[f64]) -> Result<usize> {
        if x.is_empty() || x.len() % self.dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(x.len() / self.dim)
    }
}

/// Axis-aligned compact set `[lower, upper]` in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxRepr", into = "BoxRepr")]
pub struct BoundingBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BoxRepr {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<BoxRepr> for BoundingBox {
    type Error = Error;
    fn try_from(repr: BoxRepr) -> Result<Self> {
        BoundingBox::new(repr.lower, repr.upper)
    }
}

impl From<BoundingBox> for BoxRepr {
    fn from(b: BoundingBox) -> Self {
        BoxRepr {
            lower: b.lower,
            upper: b.upper,
        }
    }
}

impl BoundingBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidArgument("box bounds must have equal, nonzero length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidArgument("box requires finite lower[i] < upper[i]".into()));
        }
        Ok(BoundingBox { lower, upper })
    }

    /// The hypercube `[-half_width, half_width]^dim`.
    pub fn cube(dim: usize, half_width: f64) -> Result<Self> {
        Self::new(vec![-half_width; dim], vec![half_width; dim])
    }

    /// Smallest box containing every center, padded by `margin` on each side.
    pub fn around(table: &EmbeddingTable, margin: f64) -> Result<Self> {
        let d = table.dim();
        let mut lower = vec![f64::INFINITY; d];
        let mut upper = vec![f64::NEG_INFINITY; d];
        for row in table.rows() {
            for i in 0..d {
                lower[i] = lower[i].min(row[i] - margin);
                upper[i] = upper[i].max(row[i] + margin);
            }
        }
        Self::new(lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Volume of one copy of the box.
    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    fn bounds(&self, flat_index: usize) -> (f64, f64) {
        let i = flat_index % self.lower.len();
        (self.lower[i], self.upper[i])
    }

    /// Membership of a flat `N * d` vector in the product box (closed).
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(j, &v)| {
            let (lo, hi) = self.bounds(j);
            v >= lo && v <= hi
        })
    }

    pub fn contains_strictly(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(j, &v)| {
            let (lo, hi) = self.bounds(j);
            v > lo && v < hi
        })
    }

    /// Distance from `x` to the nearest box face (negative outside).
    pub fn face_gap(&self, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                let (lo, hi) = self.bounds(j);
                (v - lo).min(hi - v)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// True when every center lies strictly inside the box.
    pub fn covers(&self, table: &EmbeddingTable) -> bool {
        table.dim() == self.dim() && table.rows().all(|c| self.contains_strictly(c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossingKind {
    CellBoundary,
    BoxFace,
}

/// First facet hit along a ray.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossingEvent {
    /// Ray parameter at the hit: the crossing point is `x + t * direction`.
    pub t: f64,
    /// `t / span`, the portion of the searched span consumed.
    pub fraction: f64,
    /// Unit normal, oriented along the direction of travel.
    pub normal: Vec<f64>,
    pub from_cell: Vec<usize>,
    /// Cell on the far side; equals `from_cell` for box faces.
    pub to_cell: Vec<usize>,
    /// Sequence position whose block the facet belongs to.
    pub position: usize,
    pub kind: CrossingKind,
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the closest center; ties go to the smallest index.
pub fn nearest_center(x: &[f64], table: &EmbeddingTable) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (m, c) in table.rows().enumerate() {
        let d = dist2(x, c);
        if d < best_d {
            best_d = d;
            best = m;
        }
    }
    best
}

/// Position-wise nearest center. The joint argmin over `[M]^N` decomposes
/// because the objective is a sum of per-position distances.
pub fn structured_project(x: &[f64], table: &EmbeddingTable) -> Result<Vec<usize>> {
    table.positions_of(x)?;
    Ok(x.chunks_exact(table.dim())
        .map(|row| nearest_center(row, table))
        .collect())
}

/// Euclidean distance from `x` to the nearest bisector of its own structured cell.
/// Zero on a tie.
pub fn boundary_gap(x: &[f64], table: &EmbeddingTable) -> f64 {
    let mut gap = f64::INFINITY;
    for row in x.chunks_exact(table.dim()) {
        let m = nearest_center(row, table);
        let own = dist2(row, table.center(m));
        for (other, c) in table.rows().enumerate() {
            if other == m {
                continue;
            }
            let sep = dist2(table.center(m), c).sqrt();
            gap = gap.min((dist2(row, c) - own) / (2.0 * sep));
        }
    }
    gap
}

/// Earliest exit of the segment `x + t * direction`, `t in (0, span]`, from the
/// structured cell of `x` or from the box.
pub fn first_crossing(
    x: &[f64],
    direction: &[f64],
    span: f64,
    table: &EmbeddingTable,
    bbox: &BoundingBox,
) -> Result<Option<CrossingEvent>> {
    if !bbox.contains_strictly(x) {
        return Err(Error::OutsideBox);
    }
    if boundary_gap(x, table) <= 0.0 {
        return Err(Error::BoundaryPoint);
    }
    let cell = structured_project(x, table)?;
    first_crossing_in(x, direction, span, &cell, table, bbox)
}

/// Same as [`first_crossing`], with the current cell supplied by the caller.
///
/// The integrator tracks the cell explicitly so a point resting on the facet it
/// just crossed is attributed to the correct side.
pub fn first_crossing_in(
    x: &[f64],
    direction: &[f64],
    span: f64,
    cell: &[usize],
    table: &EmbeddingTable,
    bbox: &BoundingBox,
) -> Result<Option<CrossingEvent>> {
    let d = table.dim();
    let n_pos = table.positions_of(x)?;
    if direction.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: direction.len(),
        });
    }
    if cell.len() != n_pos {
        return Err(Error::DimensionMismatch {
            expected: n_pos,
            got: cell.len(),
        });
    }
    if bbox.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bbox.dim(),
        });
    }
    if direction.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateDirection);
    }
    if !(span > 0.0) {
        return Err(Error::InvalidArgument("span must be positive".into()));
    }

    // (t, position, target center or usize::MAX for a box face, flat axis)
    let mut best: Option<(f64, usize, usize, usize)> = None;
    let mut consider = |t: f64, pos: usize, to: usize, axis: usize| {
        if best.is_none_or(|(bt, ..)| t < bt) {
            best = Some((t, pos, to, axis));
        }
    };

    for pos in 0..n_pos {
        let xs = &x[pos * d..(pos + 1) * d];
        let ds = &direction[pos * d..(pos + 1) * d];
        if ds.iter().all(|&v| v == 0.0) {
            continue;
        }
        let from = cell[pos];
        let vf = table.center(from);
        let own = dist2(xs, vf);
        for (to, vt) in table.rows().enumerate() {
            if to == from {
                continue;
            }
            // ||y - v_to||^2 - ||y - v_from||^2 is affine in t along the ray.
            let rate: f64 = ds.iter().zip(vt.iter().zip(vf)).map(|(di, (a, b))| di * (a - b)).sum();
            if rate <= 0.0 {
                continue;
            }
            let gap = dist2(xs, vt) - own;
            consider((gap / (2.0 * rate)).max(0.0), pos, to, 0);
        }
    }
    for (j, (&xj, &dj)) in x.iter().zip(direction).enumerate() {
        let (lo, hi) = bbox.bounds(j);
        let t = if dj > 0.0 {
            (hi - xj) / dj
        } else if dj < 0.0 {
            (lo - xj) / dj
        } else {
            continue;
        };
        consider(t.max(0.0), j / d, usize::MAX, j);
    }

    let Some((t, pos, to, axis)) = best else {
        return Ok(None);
    };
    if t > span {
        return Ok(None);
    }
    let mut normal = vec![0.0; x.len()];
    let (kind, to_cell) = if to == usize::MAX {
        normal[axis] = direction[axis].signum();
        (CrossingKind::BoxFace, cell.to_vec())
    } else {
        let vf = table.center(cell[pos]);
        let vt = table.center(to);
        let norm = dist2(vt, vf).sqrt();
        for i in 0..d {
            normal[pos * d + i] = (vt[i] - vf[i]) / norm;
        }
        let mut to_cell = cell.to_vec();
        to_cell[pos] = to;
        (CrossingKind::CellBoundary, to_cell)
    };
    Ok(Some(CrossingEvent {
        t,
        fraction: t / span,
        normal,
        from_cell: cell.to_vec(),
        to_cell,
        position: pos,
        kind,
    }))
}

/// Mixed-radix index of a structured cell, first position most significant.
pub fn linear_index(cell: &[usize], m: usize) -> usize {
    cell.iter().fold(0, |acc, &c| acc * m + c)
}

/// Inverse of [`linear_index`].
pub fn unravel_index(mut idx: usize, m: usize, n: usize) -> Vec<usize> {
    let mut cell = vec![0; n];
    for slot in cell.iter_mut().rev() {
        *slot = idx % m;
        idx /= m;
    }
    cell
}
