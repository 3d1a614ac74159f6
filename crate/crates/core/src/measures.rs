//! Voronoi and structured Voronoi measures.
//!
//! Inside the box, the potential of `x` in structured cell `bm` is
//!
//! ```text
//! U(x) = -log p_bm + log mu(C_bm) + 0.5 * ||g_bm - x||^2      (gaussian base)
//! U(x) = -log p_bm + log lambda(C_bm)                          (uniform base)
//! ```
//!
//! and `+inf` outside. `log mu(C_bm)` is dropped when equal cell masses are
//! assumed; otherwise it comes from a Monte-Carlo [`MassCache`].

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    boundary_gap, dist2, linear_index, nearest_center, structured_project, unravel_index,
    BoundingBox, CrossingEvent, CrossingKind, EmbeddingTable,
};
use crate::models::{state_space, Control, TinyEmbedLM};

/// Tolerance on the normalization of input probability vectors.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Tolerance used when checking that a point sits on a shared facet.
pub const FACET_TOL: f64 = 1e-9;

/// Cell tables up to this size are precomputed for model-backed targets.
const PRECOMPUTE_LIMIT: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingAugmentedDistribution {
    pub probs: Vec<f64>,
    pub table: EmbeddingTable,
}

fn check_probs(probs: &[f64], len: usize) -> Result<()> {
    if probs.len() != len {
        return Err(Error::DimensionMismatch {
            expected: len,
            got: probs.len(),
        });
    }
    if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidArgument("probabilities must be finite and >= 0".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidArgument(format!("probabilities sum to {total}, not 1")));
    }
    Ok(())
}

impl EmbeddingAugmentedDistribution {
    pub fn new(probs: Vec<f64>, table: EmbeddingTable) -> Result<Self> {
        check_probs(&probs, table.len())?;
        Ok(EmbeddingAugmentedDistribution { probs, table })
    }
}

/// `p_m^(1/T)`, renormalized.
pub fn anneal_probs(probs: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidArgument("temperature must be finite and > 0".into()));
    }
    if temperature == 1.0 {
        return Ok(probs.to_vec());
    }
    if let Some(index) = probs.iter().position(|&p| p == 0.0) {
        return Err(Error::ZeroProbability { index, temperature });
    }
    let logs: Vec<f64> = probs.iter().map(|p| p.ln() / temperature).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.iter().map(|v| v / z).collect())
}

pub fn anneal(
    dist: &EmbeddingAugmentedDistribution,
    temperature: f64,
) -> Result<EmbeddingAugmentedDistribution> {
    Ok(EmbeddingAugmentedDistribution {
        probs: anneal_probs(&dist.probs, temperature)?,
        table: dist.table.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BaseMode {
    #[default]
    #[serde(alias = "gaussian")]
    GaussianAtGradient,
    #[serde(alias = "uniform")]
    UniformLebesgue,
}

/// Where the gaussian base measure of a cell is centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseCenter {
    /// `g_bm = V_bm`.
    CellCenter,
    /// `g_bm = grad_V log p(V)` at `V_bm`.
    TargetGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseMeasureSpec {
    pub mode: BaseMode,
    pub center: BaseCenter,
    pub equal_mass_assumed: bool,
}

impl BaseMeasureSpec {
    pub fn gaussian(center: BaseCenter, equal_mass_assumed: bool) -> Self {
        BaseMeasureSpec {
            mode: BaseMode::GaussianAtGradient,
            center,
            equal_mass_assumed,
        }
    }

    pub fn uniform(equal_mass_assumed: bool) -> Self {
        BaseMeasureSpec {
            mode: BaseMode::UniformLebesgue,
            center: BaseCenter::CellCenter,
            equal_mass_assumed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Independent categorical at every position (annealed at construction).
    Categorical { probs: Vec<f64> },
    Sequence { model: TinyEmbedLM },
    Controlled { model: TinyEmbedLM, control: Control },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassEstimate {
    pub mass: f64,
    pub stderr: f64,
    pub n: u64,
    pub seed: u64,
}

/// Base-measure masses per structured cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MassCache {
    entries: BTreeMap<Vec<usize>, MassEstimate>,
}

#[derive(Serialize, Deserialize)]
struct MassRecord {
    cell: Vec<usize>,
    mass: f64,
    stderr: f64,
    n: u64,
    seed: u64,
}

impl MassCache {
    pub fn insert(&mut self, cell: Vec<usize>, estimate: MassEstimate) {
        self.entries.insert(cell, estimate);
    }

    pub fn get(&self, cell: &[usize]) -> Option<&MassEstimate> {
        self.entries.get(cell)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<usize>, &MassEstimate)> {
        self.entries.iter()
    }

    pub fn to_json(&self) -> String {
        let records: Vec<MassRecord> = self
            .entries
            .iter()
            .map(|(cell, e)| MassRecord {
                cell: cell.clone(),
                mass: e.mass,
                stderr: e.stderr,
                n: e.n,
                seed: e.seed,
            })
            .collect();
        serde_json::to_string_pretty(&records).expect("mass records serialize")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        let records: Vec<MassRecord> = serde_json::from_str(text)?;
        Ok(MassCache {
            entries: records
                .into_iter()
                .map(|r| {
                    (
                        r.cell,
                        MassEstimate {
                            mass: r.mass,
                            stderr: r.stderr,
                            n: r.n,
                            seed: r.seed,
                        },
                    )
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct CellInfo {
    log_target: f64,
    center: Vec<f64>,
}

/// Value of the potential together with the cell it was evaluated in.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialValue {
    pub value: f64,
    pub cell: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiMeasureSpec {
    table: EmbeddingTable,
    bbox: BoundingBox,
    positions: usize,
    target: Target,
    base: BaseMeasureSpec,
    temperature: f64,
    masses: MassCache,
    cells: Option<Vec<CellInfo>>,
}

impl VoronoiMeasureSpec {
    /// Categorical target, iid over `positions` positions, annealed to `temperature`.
    pub fn categorical(
        table: EmbeddingTable,
        bbox: BoundingBox,
        probs: &[f64],
        positions: usize,
        temperature: f64,
        base: BaseMeasureSpec,
    ) -> Result<Self> {
        check_probs(probs, table.len())?;
        if base.mode == BaseMode::GaussianAtGradient && base.center == BaseCenter::TargetGradient {
            return Err(Error::InvalidArgument(
                "a categorical target has no embedding gradient; center the base at the cells".into(),
            ));
        }
        let probs = anneal_probs(probs, temperature)?;
        Self::build(table, bbox, positions, Target::Categorical { probs }, base, temperature)
    }

    /// The four-cell square in `[-2, 2]^2` with a gaussian base centered on each cell.
    pub fn toy(probs: &[f64], temperature: f64) -> Result<Self> {
        Self::categorical(
            EmbeddingTable::square_toy(),
            BoundingBox::cube(2, 2.0)?,
            probs,
            1,
            temperature,
            BaseMeasureSpec::gaussian(BaseCenter::CellCenter, true),
        )
    }

    /// `2^k` cells centered on `{-1, 1}^k` inside `[-2, 2]^k`.
    pub fn hypercube(k: usize, probs: &[f64], temperature: f64) -> Result<Self> {
        Self::categorical(
            EmbeddingTable::hypercube(k)?,
            BoundingBox::cube(k, 2.0)?,
            probs,
            1,
            temperature,
            BaseMeasureSpec::gaussian(BaseCenter::CellCenter, true),
        )
    }

    /// Sequence-model target, optionally controlled by `gamma * log p(t | V)`.
    pub fn sequence(
        model: TinyEmbedLM,
        bbox: BoundingBox,
        control: Option<Control>,
        temperature: f64,
        base: BaseMeasureSpec,
    ) -> Result<Self> {
        if let Some(c) = &control {
            if c.classifier.dim() != model.dim() {
                return Err(Error::DimensionMismatch {
                    expected: model.dim(),
                    got: c.classifier.dim(),
                });
            }
        }
        let table = model.table().clone();
        let positions = model.seq_len();
        let target = match control {
            Some(control) => Target::Controlled { model, control },
            None => Target::Sequence { model },
        };
        Self::build(table, bbox, positions, target, base, temperature)
    }

    fn build(
        table: EmbeddingTable,
        bbox: BoundingBox,
        positions: usize,
        target: Target,
        base: BaseMeasureSpec,
        temperature: f64,
    ) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::InvalidArgument("temperature must be finite and > 0".into()));
        }
        if positions == 0 {
            return Err(Error::InvalidArgument("need at least one position".into()));
        }
        if !bbox.covers(&table) {
            return Err(Error::InvalidArgument(
                "every center must lie strictly inside the box".into(),
            ));
        }
        let mut spec = VoronoiMeasureSpec {
            table,
            bbox,
            positions,
            target,
            base,
            temperature,
            masses: MassCache::default(),
            cells: None,
        };
        if !matches!(spec.target, Target::Categorical { .. }) {
            if let Ok(size) = state_space(spec.table.len(), positions) {
                if size <= PRECOMPUTE_LIMIT {
                    let cells = (0..size)
                        .map(|i| spec.compute_cell(&unravel_index(i, spec.table.len(), positions)))
                        .collect::<Result<Vec<_>>>()?;
                    spec.cells = Some(cells);
                }
            }
        }
        Ok(spec)
    }

    pub fn with_masses(mut self, masses: MassCache) -> Self {
        self.masses = masses;
        self
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    /// Length `N * d` of a position vector.
    pub fn state_dim(&self) -> usize {
        self.positions * self.table.dim()
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn base(&self) -> &BaseMeasureSpec {
        &self.base
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn masses(&self) -> &MassCache {
        &self.masses
    }

    /// Normalized probability of every cell, when the target is a categorical.
    pub fn categorical_probs(&self) -> Option<&[f64]> {
        match &self.target {
            Target::Categorical { probs } => Some(probs),
            _ => None,
        }
    }

    fn compute_cell(&self, cell: &[usize]) -> Result<CellInfo> {
        let v = self.table.embed(cell);
        let t = self.temperature;
        let (log_target, grad) = match &self.target {
            Target::Categorical { probs } => (cell.iter().map(|&m| probs[m].ln()).sum(), None),
            Target::Sequence { model } => {
                let g = model.grad_embeddings(&v)?;
                (model.log_prob_embeddings(&v)? / t, Some(g))
            }
            Target::Controlled { model, control } => {
                let mut lp = model.log_prob_embeddings(&v)?;
                let mut g = model.grad_embeddings(&v)?;
                if control.gamma != 0.0 {
                    lp += control.gamma * control.classifier.log_prob(&v, control.target)?;
                    let gc = control.classifier.grad(&v, control.target)?;
                    for (a, b) in g.iter_mut().zip(gc) {
                        *a += control.gamma * b;
                    }
                }
                (lp / t, Some(g))
            }
        };
        let center = match (self.base.center, grad) {
            (BaseCenter::TargetGradient, Some(g)) => g.into_iter().map(|x| x / t).collect(),
            _ => v,
        };
        Ok(CellInfo { log_target, center })
    }

    fn cell_info(&self, cell: &[usize]) -> std::borrow::Cow<'_, CellInfo> {
        match &self.cells {
            Some(cells) => std::borrow::Cow::Borrowed(&cells[linear_index(cell, self.table.len())]),
            None => std::borrow::Cow::Owned(
                self.compute_cell(cell).expect("cell indices are validated by callers"),
            ),
        }
    }

    fn check_cell(&self, cell: &[usize]) -> Result<()> {
        if cell.len() != self.positions {
            return Err(Error::DimensionMismatch {
                expected: self.positions,
                got: cell.len(),
            });
        }
        if cell.iter().any(|&m| m >= self.table.len()) {
            return Err(Error::InvalidArgument(format!("cell {cell:?} out of range")));
        }
        Ok(())
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("position must be finite".into()));
        }
        Ok(())
    }

    /// `log p_bm` (annealed, up to a constant for model-backed targets).
    pub fn log_target(&self, cell: &[usize]) -> Result<f64> {
        self.check_cell(cell)?;
        Ok(self.cell_info(cell).log_target)
    }

    /// Center `g_bm` of the gaussian base measure.
    pub fn base_center(&self, cell: &[usize]) -> Result<Vec<f64>> {
        self.check_cell(cell)?;
        Ok(self.cell_info(cell).center.clone())
    }

    /// `log mu(C_bm)`, zero under the equal-mass assumption.
    pub fn log_mass(&self, cell: &[usize]) -> Result<f64> {
        if self.base.equal_mass_assumed {
            return Ok(0.0);
        }
        self.masses
            .get(cell)
            .map(|e| e.mass.ln())
            .ok_or_else(|| Error::MissingMass(cell.to_vec()))
    }

    /// Potential of `x` evaluated with the branch of `cell`; `+inf` outside the box.
    pub fn potential_in(&self, x: &[f64], cell: &[usize]) -> Result<f64> {
        if !self.bbox.contains(x) {
            return Ok(f64::INFINITY);
        }
        let info = self.cell_info(cell);
        let base = -info.log_target + self.log_mass(cell)?;
        Ok(match self.base.mode {
            BaseMode::GaussianAtGradient => base + 0.5 * dist2(&info.center, x),
            BaseMode::UniformLebesgue => base,
        })
    }

    /// Gradient of the potential within `cell`.
    pub fn grad_in(&self, x: &[f64], cell: &[usize]) -> Vec<f64> {
        match self.base.mode {
            BaseMode::GaussianAtGradient => {
                let info = self.cell_info(cell);
                x.iter().zip(&info.center).map(|(a, g)| a - g).collect()
            }
            BaseMode::UniformLebesgue => vec![0.0; x.len()],
        }
    }

    pub fn potential(&self, x: &[f64]) -> Result<PotentialValue> {
        self.check_x(x)?;
        let cell = structured_project(x, &self.table)?;
        if !self.bbox.contains(x) {
            return Ok(PotentialValue {
                value: f64::INFINITY,
                cell,
            });
        }
        if boundary_gap(x, &self.table) <= 0.0 {
            return Err(Error::BoundaryPoint);
        }
        let value = self.potential_in(x, &cell)?;
        Ok(PotentialValue { value, cell })
    }

    /// `grad U(x) = x - g_bm` (gaussian) or zero (uniform).
    pub fn grad_potential(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_x(x)?;
        if !self.bbox.contains_strictly(x) {
            return Err(Error::OutsideBox);
        }
        if boundary_gap(x, &self.table) <= 0.0 {
            return Err(Error::BoundaryPoint);
        }
        let cell = structured_project(x, &self.table)?;
        Ok(self.grad_in(x, &cell))
    }

    /// `U_to(y) - U_from(y)` for a point on the facet shared by two cells.
    pub fn delta_potential(&self, y: &[f64], from: &[usize], to: &[usize]) -> Result<f64> {
        self.check_x(y)?;
        self.check_cell(from)?;
        self.check_cell(to)?;
        let not_adjacent = || Error::NotAdjacent {
            from: from.to_vec(),
            to: to.to_vec(),
        };
        let differing: Vec<usize> = (0..self.positions).filter(|&n| from[n] != to[n]).collect();
        let [pos] = differing[..] else {
            return Err(not_adjacent());
        };
        let d = self.table.dim();
        for n in 0..self.positions {
            let row = &y[n * d..(n + 1) * d];
            let best = dist2(row, self.table.center(nearest_center(row, &self.table))).sqrt();
            let own = dist2(row, self.table.center(from[n])).sqrt();
            if own - best > FACET_TOL {
                return Err(not_adjacent());
            }
            if n == pos {
                let other = dist2(row, self.table.center(to[n])).sqrt();
                if other - best > FACET_TOL {
                    return Err(not_adjacent());
                }
            }
        }
        Ok(self.potential_in(y, to)? - self.potential_in(y, from)?)
    }

    /// Potential jump across a crossing found by the geometry; box faces are `+inf`.
    pub fn jump_across(&self, y: &[f64], event: &CrossingEvent) -> Result<f64> {
        match event.kind {
            CrossingKind::BoxFace => Ok(f64::INFINITY),
            CrossingKind::CellBoundary => {
                Ok(self.potential_in(y, &event.to_cell)? - self.potential_in(y, &event.from_cell)?)
            }
        }
    }

    /// Potential of the center tuple `V_bm` under the embedding-augmented target alone.
    pub fn model_potential(&self, cell: &[usize]) -> Result<f64> {
        Ok(-self.log_target(cell)?)
    }

    /// `-grad_V log p(V)` at `V_bm`; zero for a categorical target.
    pub fn model_gradient(&self, cell: &[usize]) -> Result<Vec<f64>> {
        self.check_cell(cell)?;
        let v = self.table.embed(cell);
        let t = self.temperature;
        let g = match &self.target {
            Target::Categorical { .. } => return Ok(vec![0.0; v.len()]),
            Target::Sequence { model } => model.grad_embeddings(&v)?,
            Target::Controlled { model, control } => {
                let mut g = model.grad_embeddings(&v)?;
                let gc = control.classifier.grad(&v, control.target)?;
                for (a, b) in g.iter_mut().zip(gc) {
                    *a += control.gamma * b;
                }
                g
            }
        };
        Ok(g.into_iter().map(|x| -x / t).collect())
    }

    /// Uniform draw from the box, rejecting points within `gap` of a facet.
    pub fn random_interior_point<R: Rng + ?Sized>(&self, rng: &mut R, gap: f64) -> Vec<f64> {
        let d = self.table.dim();
        loop {
            let x: Vec<f64> = (0..self.state_dim())
                .map(|j| {
                    let (lo, hi) = (self.bbox.lower()[j % d], self.bbox.upper()[j % d]);
                    lo + (hi - lo) * rng.random::<f64>()
                })
                .collect();
            if boundary_gap(&x, &self.table) > gap && self.bbox.face_gap(&x) > gap {
                return x;
            }
        }
    }

    /// Monte-Carlo estimate of the base-measure mass of a whole structured cell.
    ///
    /// Gaussian mode integrates `exp(-0.5 ||g - x||^2)` over `C_bm` (within the
    /// box) by sampling `N(g, I)`; uniform mode measures the volume of `C_bm`
    /// by sampling the box.
    pub fn cell_mass_mc<R: Rng + ?Sized>(
        &self,
        cell: &[usize],
        n: u64,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        self.check_cell(cell)?;
        let blocks: Vec<usize> = (0..self.positions).collect();
        self.mass_mc(cell, &blocks, n, rng)
    }

    /// Mass of the single-position cell `C_{m_n}`, with the gaussian centered on
    /// block `position` of `g_bm`.
    pub fn position_mass_mc<R: Rng + ?Sized>(
        &self,
        cell: &[usize],
        position: usize,
        n: u64,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        self.check_cell(cell)?;
        if position >= self.positions {
            return Err(Error::InvalidArgument(format!("position {position} out of range")));
        }
        self.mass_mc(cell, &[position], n, rng)
    }

    fn mass_mc<R: Rng + ?Sized>(
        &self,
        cell: &[usize],
        blocks: &[usize],
        n: u64,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be positive".into()));
        }
        let d = self.table.dim();
        let k = blocks.len() * d;
        let center = self.cell_info(cell).center.clone();
        let (lo, hi) = (self.bbox.lower(), self.bbox.upper());
        let mut row = vec![0.0; d];
        let mut hits = 0u64;
        for _ in 0..n {
            let mut inside = true;
            for &b in blocks {
                for i in 0..d {
                    row[i] = match self.base.mode {
                        BaseMode::GaussianAtGradient => {
                            center[b * d + i] + rng.sample::<f64, _>(StandardNormal)
                        }
                        BaseMode::UniformLebesgue => lo[i] + (hi[i] - lo[i]) * rng.random::<f64>(),
                    };
                }
                inside &= row.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| v >= l && v <= h)
                    && nearest_center(&row, &self.table) == cell[b];
            }
            hits += inside as u64;
        }
        let frac = hits as f64 / n as f64;
        let scale = match self.base.mode {
            BaseMode::GaussianAtGradient => (2.0 * PI).powf(k as f64 / 2.0),
            BaseMode::UniformLebesgue => self.bbox.volume().powi(blocks.len() as i32),
        };
        let se = (frac * (1.0 - frac) / n as f64).sqrt();
        Ok((frac * scale, se * scale))
    }

    /// Fill the mass cache for every cell using the per-position product of masses.
    pub fn estimate_masses(mut self, n: u64, seed: u64) -> Result<Self> {
        let size = state_space(self.table.len(), self.positions)?;
        let mut cache = MassCache::default();
        for idx in 0..size {
            let cell = unravel_index(idx, self.table.len(), self.positions);
            let cell_seed = seed.wrapping_add(idx as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(cell_seed);
            let mut mass = 1.0;
            let mut rel_var = 0.0;
            for pos in 0..self.positions {
                let (m, se) = self.position_mass_mc(&cell, pos, n, &mut rng)?;
                mass *= m;
                rel_var += if m > 0.0 { (se / m).powi(2) } else { f64::INFINITY };
            }
            cache.insert(
                cell,
                MassEstimate {
                    mass,
                    stderr: mass * rel_var.sqrt(),
                    n,
                    seed: cell_seed,
                },
            );
        }
        self.masses = cache;
        Ok(self)
    }
}
