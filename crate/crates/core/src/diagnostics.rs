//! Reference comparisons and numerical checks.

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{boundary_gap, linear_index};
use crate::measures::VoronoiMeasureSpec;
use crate::samplers::{find_disc, run_chain, RefractionForm, RunRecord, SamplerConfig};

/// Counts of projected cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmpiricalDistribution {
    counts: BTreeMap<Vec<usize>, u64>,
    total: u64,
}

impl EmpiricalDistribution {
    pub fn from_cells<I: IntoIterator<Item = Vec<usize>>>(cells: I) -> Result<Self> {
        let mut dist = EmpiricalDistribution::default();
        for cell in cells {
            *dist.counts.entry(cell).or_default() += 1;
            dist.total += 1;
        }
        if dist.total == 0 {
            return Err(Error::EmptyStream);
        }
        Ok(dist)
    }

    pub fn from_records<'a, I: IntoIterator<Item = &'a RunRecord>>(records: I) -> Result<Self> {
        Self::from_cells(records.into_iter().map(|r| r.cell.clone()))
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, cell: &[usize]) -> u64 {
        self.counts.get(cell).copied().unwrap_or(0)
    }

    pub fn prob(&self, cell: &[usize]) -> f64 {
        self.count(cell) as f64 / self.total as f64
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<usize>, &u64)> {
        self.counts.iter()
    }

    /// Dense probability table over `[m]^n` in [`linear_index`] order.
    pub fn to_table(&self, m: usize, n: usize) -> Result<Vec<f64>> {
        let size = m.checked_pow(n as u32).ok_or(Error::StateSpaceTooLarge(u128::MAX))?;
        let mut table = vec![0.0; size];
        for (cell, &c) in &self.counts {
            if cell.len() != n || cell.iter().any(|&v| v >= m) {
                return Err(Error::InvalidArgument(format!("cell {cell:?} outside [{m}]^{n}")));
            }
            table[linear_index(cell, m)] = c as f64 / self.total as f64;
        }
        Ok(table)
    }
}

fn kl_to_mid(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (2.0 * a / (a + b)).ln())
        .sum()
}

/// Jensen-Shannon divergence in nats, bounded by `ln 2`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    let js = 0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p);
    Ok(js.clamp(0.0, std::f64::consts::LN_2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `||fd - grad|| / max(||grad||, 1)` over checked points.
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Central differences of `f` against `grad` at each point not rejected by `skip`.
pub fn finite_diff_grad_check<F, G, S>(
    f: F,
    grad: G,
    points: &[Vec<f64>],
    h: f64,
    skip: S,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
    S: Fn(&[f64]) -> bool,
{
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for x in points {
        if skip(x) {
            report.skipped += 1;
            continue;
        }
        let an = grad(x)?;
        let mut xp = x.clone();
        let mut err2 = 0.0;
        for i in 0..x.len() {
            xp[i] = x[i] + h;
            let up = f(&xp)?;
            xp[i] = x[i] - h;
            let down = f(&xp)?;
            xp[i] = x[i];
            let fd = (up - down) / (2.0 * h);
            err2 += (fd - an[i]).powi(2);
        }
        let scale = an.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        report.max_rel_error = report.max_rel_error.max(err2.sqrt() / scale);
        report.checked += 1;
    }
    Ok(report)
}

/// Gradient check of the measure's potential, skipping points within `2h` of a facet or face.
pub fn potential_grad_check(
    spec: &VoronoiMeasureSpec,
    points: &[Vec<f64>],
    h: f64,
) -> Result<GradCheckReport> {
    finite_diff_grad_check(
        |x| Ok(spec.potential(x)?.value),
        |x| spec.grad_potential(x),
        points,
        h,
        |x| boundary_gap(x, spec.table()) <= 2.0 * h || spec.bbox().face_gap(x) <= 2.0 * h,
    )
}

/// Determinant by LU decomposition with partial pivoting.
pub fn determinant(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            a.swap(pivot, col);
            det = -det;
        }
        det *= a[col][col];
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
        }
    }
    det
}

/// `|det J|` of `map` at `base` by central differences.
///
/// `map` returns the image and the number of facet events it went through;
/// every perturbed evaluation must see exactly `expected_events` of them.
pub fn jacobian_det_check<F>(map: F, base: &[f64], h: f64, expected_events: usize) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(Vec<f64>, usize)>,
{
    let n = base.len();
    let mut jac = vec![vec![0.0; n]; n];
    let mut z = base.to_vec();
    for j in 0..n {
        z[j] = base[j] + h;
        let (up, e_up) = map(&z)?;
        z[j] = base[j] - h;
        let (down, e_down) = map(&z)?;
        z[j] = base[j];
        for count in [e_up, e_down] {
            if count != expected_events {
                return Err(Error::Check(format!(
                    "perturbation along axis {j} saw {count} facet events, expected {expected_events}"
                )));
            }
        }
        if up.len() != n || down.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: up.len(),
            });
        }
        for i in 0..n {
            jac[i][j] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    Ok(determinant(jac).abs())
}

/// The phase-space map `(x, r) -> (x', r')` of one facet-aware drift.
pub fn drift_map(
    spec: &VoronoiMeasureSpec,
    eps: f64,
    form: RefractionForm,
) -> impl Fn(&[f64]) -> Result<(Vec<f64>, usize)> + '_ {
    move |z: &[f64]| {
        let k = z.len() / 2;
        let (x, r) = z.split_at(k);
        let cell = crate::geometry::structured_project(x, spec.table())?;
        let out = find_disc(spec, x, r, &cell, eps, 1.0, form)?;
        let mut image = out.x;
        image.extend(out.r);
        Ok((image, out.n_reflections + out.n_refractions))
    }
}

/// Probabilities of the categorical toy targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyProbs {
    /// Explicit probabilities, one per cell (requires `2^k` entries).
    Explicit(Vec<f64>),
    /// `peak` on cell 0, the rest shared equally.
    Peaked(f64),
}

impl ToyProbs {
    pub fn for_cells(&self, cells: usize) -> Result<Vec<f64>> {
        match self {
            ToyProbs::Explicit(p) => {
                if p.len() != cells {
                    return Err(Error::DimensionMismatch {
                        expected: cells,
                        got: p.len(),
                    });
                }
                Ok(p.clone())
            }
            ToyProbs::Peaked(peak) => {
                if !(*peak > 0.0 && *peak < 1.0) {
                    return Err(Error::InvalidArgument("peak must lie in (0, 1)".into()));
                }
                let rest = (1.0 - peak) / (cells - 1) as f64;
                let mut p = vec![rest; cells];
                p[0] = *peak;
                Ok(p)
            }
        }
    }
}

/// Grid of toy chains: every sampler at every temperature, dimension and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyGrid {
    pub samplers: Vec<SamplerConfig>,
    pub temperatures: Vec<f64>,
    /// Hypercube dimensions; `k = 2` uses the four-cell square.
    pub dims: Vec<usize>,
    pub probs: ToyProbs,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub algorithm: String,
    pub temperature: f64,
    pub k: usize,
    pub seed: u64,
    pub n_samples: usize,
    pub js: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceSummary {
    pub algorithm: String,
    pub temperature: f64,
    pub k: usize,
    pub n_seeds: usize,
    pub mean_js: f64,
    /// Half-width of a normal 95% interval on the mean.
    pub ci95: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub rows: Vec<DivergenceRow>,
    pub summary: Vec<DivergenceSummary>,
}

impl DivergenceReport {
    pub fn mean(&self, algorithm: &str, temperature: f64, k: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.algorithm == algorithm && s.temperature == temperature && s.k == k)
            .map(|s| s.mean_js)
    }

    /// One row per chain with columns `algorithm,temperature,k,seed,n_samples,js`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Check(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Check(e.to_string()))?;
        Ok(())
    }
}

/// Measure for one toy grid point.
pub fn toy_spec(k: usize, probs: &ToyProbs, temperature: f64) -> Result<VoronoiMeasureSpec> {
    if k == 2 {
        VoronoiMeasureSpec::toy(&probs.for_cells(4)?, temperature)
    } else {
        let cells = 1usize
            .checked_shl(k as u32)
            .ok_or_else(|| Error::InvalidArgument("k too large".into()))?;
        VoronoiMeasureSpec::hypercube(k, &probs.for_cells(cells)?, temperature)
    }
}

/// One chain of an experiment grid, scored against an exact reference table.
#[derive(Debug, Clone)]
pub struct ChainJob<'a> {
    pub spec: &'a VoronoiMeasureSpec,
    pub config: SamplerConfig,
    /// Reference probabilities in [`linear_index`] order over `[M]^N`.
    pub reference: &'a [f64],
    pub temperature: f64,
    pub k: usize,
    pub seed: u64,
}

impl ChainJob<'_> {
    pub fn id(&self) -> String {
        format!(
            "{}/T={}/k={}/seed={}",
            self.config.algorithm, self.temperature, self.k, self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub row: DivergenceRow,
    pub records: Vec<RunRecord>,
}

/// JS divergence of the projected cells of `records` to `reference`.
pub fn records_js(spec: &VoronoiMeasureSpec, records: &[RunRecord], reference: &[f64]) -> Result<f64> {
    let emp = EmpiricalDistribution::from_records(records)?;
    js_divergence(&emp.to_table(spec.table().len(), spec.positions())?, reference)
}

/// JS divergence of one chain's projected cells to the annealed categorical.
pub fn chain_js(spec: &VoronoiMeasureSpec, records: &[RunRecord]) -> Result<f64> {
    let reference = spec
        .categorical_probs()
        .ok_or_else(|| Error::InvalidArgument("toy chains need a categorical target".into()))?;
    records_js(spec, records, reference)
}

/// Runs the jobs in parallel, seeding each chain with its own seed. Results
/// keep the order of `jobs`.
pub fn run_jobs(jobs: &[ChainJob<'_>]) -> Result<Vec<ChainResult>> {
    jobs.par_iter()
        .map(|job| {
            let run = || -> Result<ChainResult> {
                let mut config = job.config.clone();
                config.seed = job.seed;
                let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
                let records = run_chain(job.spec, &config, None, &mut rng)?;
                let js = records_js(job.spec, &records, job.reference)?;
                Ok(ChainResult {
                    row: DivergenceRow {
                        algorithm: config.algorithm.name().to_string(),
                        temperature: job.temperature,
                        k: job.k,
                        seed: job.seed,
                        n_samples: records.len(),
                        js,
                    },
                    records,
                })
            };
            run().map_err(|e| Error::Chain {
                id: job.id(),
                source: Box::new(e),
            })
        })
        .collect()
}

/// Builds the report from chain rows.
pub fn report_from_rows(rows: Vec<DivergenceRow>) -> DivergenceReport {
    let summary = summarize(&rows);
    DivergenceReport { rows, summary }
}

/// Toy grid specs and jobs in `(algorithm, temperature, k, seed)` order.
pub fn toy_specs(grid: &ToyGrid) -> Result<Vec<((f64, usize), VoronoiMeasureSpec)>> {
    let mut specs = Vec::new();
    for &t in &grid.temperatures {
        for &k in &grid.dims {
            specs.push(((t, k), toy_spec(k, &grid.probs, t)?));
        }
    }
    Ok(specs)
}

pub fn toy_jobs<'a>(
    grid: &ToyGrid,
    specs: &'a [((f64, usize), VoronoiMeasureSpec)],
) -> Vec<ChainJob<'a>> {
    let mut samplers = grid.samplers.clone();
    samplers.sort_by_key(|s| s.algorithm);
    let mut jobs = Vec::new();
    for s in &samplers {
        for ((t, k), spec) in specs {
            for &seed in &grid.seeds {
                jobs.push(ChainJob {
                    spec,
                    config: s.clone(),
                    reference: spec.categorical_probs().expect("toy specs are categorical"),
                    temperature: *t,
                    k: *k,
                    seed,
                });
            }
        }
    }
    jobs
}

/// Runs every chain of the grid; rows come back in `(algorithm, temperature,
/// k, seed)` order regardless of scheduling.
pub fn toy_experiment(grid: &ToyGrid) -> Result<DivergenceReport> {
    let specs = toy_specs(grid)?;
    let results = run_jobs(&toy_jobs(grid, &specs))?;
    Ok(report_from_rows(results.into_iter().map(|r| r.row).collect()))
}

fn summarize(rows: &[DivergenceRow]) -> Vec<DivergenceSummary> {
    let mut out: Vec<DivergenceSummary> = Vec::new();
    let mut groups: Vec<(String, f64, usize, Vec<f64>)> = Vec::new();
    for r in rows {
        match groups
            .iter_mut()
            .find(|g| g.0 == r.algorithm && g.1 == r.temperature && g.2 == r.k)
        {
            Some(g) => g.3.push(r.js),
            None => groups.push((r.algorithm.clone(), r.temperature, r.k, vec![r.js])),
        }
    }
    for (algorithm, temperature, k, vals) in groups {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = if vals.len() > 1 {
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        out.push(DivergenceSummary {
            algorithm,
            temperature,
            k,
            n_seeds: vals.len(),
            mean_js: mean,
            ci95: 1.96 * (var / n).sqrt(),
        });
    }
    out
}
