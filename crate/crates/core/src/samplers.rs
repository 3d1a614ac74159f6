//! HMC, Langevin, projected Langevin and Structured Voronoi Sampling.
//!
//! All samplers share [`ChainState`], [`SamplerConfig`] and [`StepOutcome`].
//! SVS replaces the HMC drift with [`find_disc`], which walks the straight
//! drift segment facet by facet and refracts or reflects the momentum at each
//! potential jump.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{boundary_gap, dot, first_crossing_in, structured_project, CrossingKind};
use crate::measures::VoronoiMeasureSpec;

/// Facet events allowed in a single drift before the step is abandoned.
pub const MAX_EVENTS: usize = 10_000;

/// Final step size of the decay schedule.
pub const DECAY_FLOOR: f64 = 0.05;

/// Iteration at which the decay schedule reaches its floor.
pub const DECAY_AFTER: usize = 500;

/// Minimum distance from a facet for randomly drawn initial points.
pub const INIT_GAP: f64 = 1e-12;

/// Retries with fresh momentum when an HMC trajectory ends exactly on a facet.
const BOUNDARY_RETRIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Hmc,
    Langevin,
    #[serde(alias = "mucola")]
    ProjectedLangevin,
    Svs,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Hmc => "hmc",
            Algorithm::Langevin => "langevin",
            Algorithm::ProjectedLangevin => "projected-langevin",
            Algorithm::Svs => "svs",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentumScale {
    /// `r ~ N(0, I)`.
    #[default]
    UnitVariance,
    /// `r ~ N(0, eps I)` with kinetic energy still `0.5 ||r||^2`.
    EpsilonVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepDecay {
    #[default]
    None,
    /// Geometric interpolation from `step_size` to 0.05 over the first 500 iterations.
    ExponentialToFloor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefractionForm {
    /// Transmitted normal component `sqrt(|r_perp|^2 - 2 dU) * r_perp / |r_perp|`.
    #[default]
    UnitDirection,
    /// Transmitted normal component `sqrt(|r_perp|^2 - 2 dU) * r_perp / |r_perp|^2`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SvsGradient {
    /// `x - g_bm` at the current position.
    #[default]
    Position,
    /// Gradient evaluated at the projected center tuple `V_bm`.
    ProjectedCenter,
}

fn default_leapfrog() -> usize {
    1
}
fn default_fraction() -> f64 {
    0.1
}
fn default_burn_in() -> usize {
    500
}
fn default_samples() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub algorithm: Algorithm,
    pub step_size: f64,
    #[serde(default = "default_leapfrog")]
    pub leapfrog_steps: usize,
    #[serde(default = "default_fraction")]
    pub disc_fraction: f64,
    #[serde(default)]
    pub control_weight: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub momentum_scale: MomentumScale,
    #[serde(default)]
    pub step_decay: StepDecay,
    #[serde(default)]
    pub seed: u64,
    /// Metropolis correction for projected Langevin.
    #[serde(default)]
    pub mucola_metropolis: bool,
    #[serde(default)]
    pub refraction: RefractionForm,
    #[serde(default)]
    pub svs_gradient: SvsGradient,
}

impl SamplerConfig {
    pub fn new(algorithm: Algorithm, step_size: f64) -> Self {
        SamplerConfig {
            algorithm,
            step_size,
            leapfrog_steps: default_leapfrog(),
            disc_fraction: default_fraction(),
            control_weight: 0.0,
            burn_in: default_burn_in(),
            n_samples: default_samples(),
            momentum_scale: MomentumScale::default(),
            step_decay: StepDecay::default(),
            seed: 0,
            mucola_metropolis: false,
            refraction: RefractionForm::default(),
            svs_gradient: SvsGradient::default(),
        }
    }

    /// Checks the numeric fields, naming the first offending one.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err("step_size: must be finite and > 0".into());
        }
        if self.leapfrog_steps == 0 {
            return Err("leapfrog_steps: must be >= 1".into());
        }
        if !(self.disc_fraction > 0.0 && self.disc_fraction <= 1.0) {
            return Err("disc_fraction: must lie in (0, 1]".into());
        }
        if !(self.control_weight >= 0.0) || !self.control_weight.is_finite() {
            return Err("control_weight: must be finite and >= 0".into());
        }
        Ok(())
    }

    /// Step size at iteration `t` under the configured schedule.
    pub fn step_size_at(&self, t: usize) -> f64 {
        match self.step_decay {
            StepDecay::None => self.step_size,
            StepDecay::ExponentialToFloor => {
                let s = t.min(DECAY_AFTER) as f64 / DECAY_AFTER as f64;
                self.step_size * (DECAY_FLOOR / self.step_size).powf(s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub x: Vec<f64>,
    /// Momentum after the last step; empty before the first one.
    pub r: Vec<f64>,
    pub cell: Vec<usize>,
    pub potential: f64,
}

impl ChainState {
    /// State at `x`, which must lie strictly inside the box and off every facet.
    pub fn new(spec: &VoronoiMeasureSpec, x: Vec<f64>) -> Result<Self> {
        let pv = spec.potential(&x)?;
        if !spec.bbox().contains_strictly(&x) {
            return Err(Error::OutsideBox);
        }
        Ok(ChainState {
            x,
            r: Vec::new(),
            cell: pv.cell,
            potential: pv.value,
        })
    }

    /// State resting on the center tuple of `cell`, as used by projected Langevin.
    pub fn on_centers(spec: &VoronoiMeasureSpec, cell: Vec<usize>) -> Result<Self> {
        let potential = spec.model_potential(&cell)?;
        Ok(ChainState {
            x: spec.table().embed(&cell),
            r: Vec::new(),
            cell,
            potential,
        })
    }

    /// Uniform draw from the box, away from facets and outside zero-probability cells.
    pub fn random<R: Rng + ?Sized>(spec: &VoronoiMeasureSpec, rng: &mut R) -> Result<Self> {
        for _ in 0..10_000 {
            let x = spec.random_interior_point(rng, INIT_GAP);
            let state = ChainState::new(spec, x)?;
            if state.potential.is_finite() {
                return Ok(state);
            }
        }
        Err(Error::InvalidArgument("no finite-potential starting point found".into()))
    }

    /// Hamiltonian `U + 0.5 ||r||^2` for the stored momentum.
    pub fn hamiltonian(&self) -> f64 {
        self.potential + kinetic(&self.r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: ChainState,
    pub accepted: bool,
    pub hamiltonian_error: f64,
    pub n_reflections: usize,
    pub n_refractions: usize,
}

/// One recorded iteration, serialized as a JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iter: usize,
    pub x: Vec<f64>,
    pub cell: Vec<usize>,
    pub accepted: bool,
    #[serde(rename = "dH")]
    pub dh: f64,
    pub n_reflect: usize,
    pub n_refract: usize,
}

pub(crate) fn kinetic(r: &[f64]) -> f64 {
    0.5 * dot(r, r)
}

fn draw_momentum<R: Rng + ?Sized>(n: usize, scale: MomentumScale, eps: f64, rng: &mut R) -> Vec<f64> {
    let s = match scale {
        MomentumScale::UnitVariance => 1.0,
        MomentumScale::EpsilonVariance => eps.sqrt(),
    };
    (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            if s == 1.0 {
                z
            } else {
                s * z
            }
        })
        .collect()
}

fn half_kick(r: &mut [f64], grad: &[f64], eps: f64) {
    for (ri, gi) in r.iter_mut().zip(grad) {
        *ri -= 0.5 * eps * gi;
    }
}

/// Accept with probability `min(1, exp(-dh))`. Always consumes one uniform draw.
pub fn metropolis_accept<R: Rng + ?Sized>(dh: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    !dh.is_nan() && u < (-dh).exp()
}

/// Momentum update at a facet with unit normal `normal` and potential jump `delta_u`.
///
/// Returns the new momentum and whether the particle passed through.
pub fn refract_reflect(
    r: &[f64],
    normal: &[f64],
    delta_u: f64,
    form: RefractionForm,
) -> Result<(Vec<f64>, bool)> {
    if r.len() != normal.len() {
        return Err(Error::DimensionMismatch {
            expected: r.len(),
            got: normal.len(),
        });
    }
    let nn = dot(normal, normal);
    if !(nn > 0.0) {
        return Err(Error::ZeroNormal);
    }
    if delta_u.is_nan() {
        return Err(Error::InvalidArgument("potential jump is NaN".into()));
    }
    let inv = 1.0 / nn.sqrt();
    let n: Vec<f64> = normal.iter().map(|v| v * inv).collect();
    let proj = dot(r, &n);
    let perp2 = proj * proj;
    if delta_u == 0.0 {
        return Ok((r.to_vec(), true));
    }
    if perp2 > 2.0 * delta_u {
        let speed = (perp2 - 2.0 * delta_u).sqrt();
        let new_proj = match form {
            RefractionForm::UnitDirection => speed * proj.signum(),
            RefractionForm::Literal => speed * proj / perp2,
        };
        let out = r.iter().zip(&n).map(|(ri, ni)| ri + (new_proj - proj) * ni).collect();
        Ok((out, true))
    } else {
        let out = r.iter().zip(&n).map(|(ri, ni)| ri - 2.0 * proj * ni).collect();
        Ok((out, false))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscOutcome {
    pub x: Vec<f64>,
    pub r: Vec<f64>,
    pub cell: Vec<usize>,
    pub n_reflections: usize,
    pub n_refractions: usize,
}

/// Drift `x` along `r` for time `eps`, refracting or reflecting at every facet.
///
/// The drift is checked in slices of `alpha * eps`; inside a slice the first
/// facet is located exactly, so the path does not depend on `alpha`.
pub fn find_disc(
    spec: &VoronoiMeasureSpec,
    x: &[f64],
    r: &[f64],
    cell: &[usize],
    eps: f64,
    alpha: f64,
    form: RefractionForm,
) -> Result<DiscOutcome> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument("disc_fraction must lie in (0, 1]".into()));
    }
    let table = spec.table();
    let bbox = spec.bbox();
    let mut xa = x.to_vec();
    let mut tau_a = 0.0;
    let mut r = r.to_vec();
    let mut cell = cell.to_vec();
    let (mut n_reflections, mut n_refractions) = (0, 0);
    let moving = r.iter().any(|&v| v != 0.0);

    let mut k = 1usize;
    while moving {
        let tau_next = (k as f64 * alpha).min(1.0);
        loop {
            let span = (tau_next - tau_a) * eps;
            if !(span > 0.0) {
                break;
            }
            let end: Vec<f64> = xa.iter().zip(&r).map(|(a, ri)| a + span * ri).collect();
            // Cells intersected with the box are convex, so an endpoint in the
            // tracked cell means the whole slice stays inside it.
            if bbox.contains(&end) && structured_project(&end, table)? == cell {
                break;
            }
            let Some(ev) = first_crossing_in(&xa, &r, span, &cell, table, bbox)? else {
                break;
            };
            if n_reflections + n_refractions >= MAX_EVENTS {
                return Err(Error::TooManyEvents { limit: MAX_EVENTS });
            }
            let y: Vec<f64> = xa.iter().zip(&r).map(|(a, ri)| a + ev.t * ri).collect();
            let delta_u = spec.jump_across(&y, &ev)?;
            let (r_new, passed) = refract_reflect(&r, &ev.normal, delta_u, form)?;
            if passed && ev.kind == CrossingKind::CellBoundary {
                n_refractions += 1;
                cell = ev.to_cell;
            } else {
                n_reflections += 1;
            }
            tau_a += ev.t / eps;
            xa = y;
            r = r_new;
        }
        if tau_next >= 1.0 {
            break;
        }
        k += 1;
    }
    let h = (1.0 - tau_a) * eps;
    let x_new = xa.iter().zip(&r).map(|(a, ri)| a + h * ri).collect();
    Ok(DiscOutcome {
        x: x_new,
        r,
        cell,
        n_reflections,
        n_refractions,
    })
}

fn svs_grad(spec: &VoronoiMeasureSpec, x: &[f64], cell: &[usize], mode: SvsGradient) -> Vec<f64> {
    match mode {
        SvsGradient::Position => spec.grad_in(x, cell),
        SvsGradient::ProjectedCenter => spec.grad_in(&spec.table().embed(cell), cell),
    }
}

/// One SVS transition: half-kick, facet-aware drift, half-kick, Metropolis test.
pub fn svs_step<R: Rng + ?Sized>(
    state: &ChainState,
    spec: &VoronoiMeasureSpec,
    config: &SamplerConfig,
    eps: f64,
    rng: &mut R,
) -> Result<StepOutcome> {
    let mut r = draw_momentum(state.x.len(), config.momentum_scale, eps, rng);
    let h0 = state.potential + kinetic(&r);
    half_kick(&mut r, &svs_grad(spec, &state.x, &state.cell, config.svs_gradient), eps);
    let disc = find_disc(
        spec,
        &state.x,
        &r,
        &state.cell,
        eps,
        config.disc_fraction,
        config.refraction,
    )?;
    let mut r = disc.r;
    half_kick(&mut r, &svs_grad(spec, &disc.x, &disc.cell, config.svs_gradient), eps);
    let u1 = spec.potential_in(&disc.x, &disc.cell)?;
    let dh = (u1 + kinetic(&r)) - h0;
    let accepted = metropolis_accept(dh, rng);
    let next = if accepted {
        ChainState {
            x: disc.x,
            r,
            cell: disc.cell,
            potential: u1,
        }
    } else {
        ChainState {
            r,
            ..state.clone()
        }
    };
    Ok(StepOutcome {
        next,
        accepted,
        hamiltonian_error: dh,
        n_reflections: disc.n_reflections,
        n_refractions: disc.n_refractions,
    })
}

/// Plain leapfrog HMC, blind to the facets of the potential.
pub fn hmc_step<R: Rng + ?Sized>(
    state: &ChainState,
    spec: &VoronoiMeasureSpec,
    config: &SamplerConfig,
    eps: f64,
    rng: &mut R,
) -> Result<StepOutcome> {
    let table = spec.table();
    let mut last = None;
    for _ in 0..BOUNDARY_RETRIES {
        let mut r = draw_momentum(state.x.len(), config.momentum_scale, eps, rng);
        let h0 = state.potential + kinetic(&r);
        let mut x = state.x.clone();
        let mut cell = state.cell.clone();
        for _ in 0..config.leapfrog_steps {
            half_kick(&mut r, &spec.grad_in(&x, &cell), eps);
            for (xi, ri) in x.iter_mut().zip(&r) {
                *xi += eps * ri;
            }
            cell = structured_project(&x, table)?;
            half_kick(&mut r, &spec.grad_in(&x, &cell), eps);
        }
        if spec.bbox().contains(&x) && boundary_gap(&x, table) <= 0.0 {
            last = Some(r);
            continue;
        }
        let u1 = spec.potential_in(&x, &cell)?;
        let dh = (u1 + kinetic(&r)) - h0;
        let accepted = metropolis_accept(dh, rng);
        let next = if accepted {
            ChainState {
                x,
                r,
                cell,
                potential: u1,
            }
        } else {
            ChainState {
                r,
                ..state.clone()
            }
        };
        return Ok(StepOutcome {
            next,
            accepted,
            hamiltonian_error: dh,
            n_reflections: 0,
            n_refractions: 0,
        });
    }
    Ok(StepOutcome {
        next: ChainState {
            r: last.unwrap_or_default(),
            ..state.clone()
        },
        accepted: false,
        hamiltonian_error: f64::NAN,
        n_reflections: 0,
        n_refractions: 0,
    })
}

/// Fold `x` back into the box by mirroring at the faces; flips the matching momenta.
fn reflect_into_box(x: &mut [f64], r: &mut [f64], spec: &VoronoiMeasureSpec) -> usize {
    let d = spec.table().dim();
    let (lo, hi) = (spec.bbox().lower(), spec.bbox().upper());
    let mut count = 0;
    for (j, (xj, rj)) in x.iter_mut().zip(r.iter_mut()).enumerate() {
        let (l, h) = (lo[j % d], hi[j % d]);
        while *xj < l || *xj > h {
            *xj = if *xj < l { 2.0 * l - *xj } else { 2.0 * h - *xj };
            *rj = -*rj;
            count += 1;
        }
    }
    count
}

/// Uncorrected Langevin: one leapfrog drift with a fresh momentum, always accepted.
pub fn langevin_step<R: Rng + ?Sized>(
    state: &ChainState,
    spec: &VoronoiMeasureSpec,
    config: &SamplerConfig,
    eps: f64,
    rng: &mut R,
) -> Result<StepOutcome> {
    let mut r = draw_momentum(state.x.len(), config.momentum_scale, eps, rng);
    let h0 = state.potential + kinetic(&r);
    half_kick(&mut r, &spec.grad_in(&state.x, &state.cell), eps);
    let mut x: Vec<f64> = state.x.iter().zip(&r).map(|(xi, ri)| xi + eps * ri).collect();
    let n_reflections = reflect_into_box(&mut x, &mut r, spec);
    let cell = structured_project(&x, spec.table())?;
    let potential = spec.potential_in(&x, &cell)?;
    let dh = potential + kinetic(&r) - h0;
    Ok(StepOutcome {
        next: ChainState {
            x,
            r,
            cell,
            potential,
        },
        accepted: true,
        hamiltonian_error: dh,
        n_reflections,
        n_refractions: 0,
    })
}

/// Langevin proposal from the current center tuple, projected back onto centers.
pub fn mucola_step<R: Rng + ?Sized>(
    state: &ChainState,
    spec: &VoronoiMeasureSpec,
    config: &SamplerConfig,
    eps: f64,
    rng: &mut R,
) -> Result<StepOutcome> {
    let mut r = draw_momentum(state.x.len(), config.momentum_scale, eps, rng);
    let h0 = state.potential + kinetic(&r);
    half_kick(&mut r, &spec.model_gradient(&state.cell)?, eps);
    let z: Vec<f64> = state.x.iter().zip(&r).map(|(xi, ri)| xi + eps * ri).collect();
    let cell = structured_project(&z, spec.table())?;
    half_kick(&mut r, &spec.model_gradient(&cell)?, eps);
    let potential = spec.model_potential(&cell)?;
    let dh = potential + kinetic(&r) - h0;
    let accepted = !config.mucola_metropolis || metropolis_accept(dh, rng);
    let next = if accepted {
        ChainState {
            x: spec.table().embed(&cell),
            r,
            cell,
            potential,
        }
    } else {
        ChainState {
            r,
            ..state.clone()
        }
    };
    Ok(StepOutcome {
        next,
        accepted,
        hamiltonian_error: dh,
        n_reflections: 0,
        n_refractions: 0,
    })
}

/// Dispatch one transition of `config.algorithm` at iteration `t`.
pub fn step<R: Rng + ?Sized>(
    state: &ChainState,
    spec: &VoronoiMeasureSpec,
    config: &SamplerConfig,
    t: usize,
    rng: &mut R,
) -> Result<StepOutcome> {
    let eps = config.step_size_at(t);
    match config.algorithm {
        Algorithm::Hmc => hmc_step(state, spec, config, eps, rng),
        Algorithm::Langevin => langevin_step(state, spec, config, eps, rng),
        Algorithm::ProjectedLangevin => mucola_step(state, spec, config, eps, rng),
        Algorithm::Svs => svs_step(state, spec, config, eps, rng),
    }
}

/// Starting state for `config.algorithm`: a random interior point, snapped to
/// its center tuple for projected Langevin.
pub fn initial_state<R: Rng + ?Sized>(
    spec: &VoronoiMeasureSpec,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<ChainState> {
    let state = ChainState::random(spec, rng)?;
    match config.algorithm {
        Algorithm::ProjectedLangevin => ChainState::on_centers(spec, state.cell),
        _ => Ok(state),
    }
}

/// Runs burn-in then `n_samples` recorded iterations, passing each record to `sink`.
pub fn run_chain_with<R: Rng + ?Sized>(
    spec: &VoronoiMeasureSpec,
    config: &SamplerConfig,
    init: Option<ChainState>,
    rng: &mut R,
    mut sink: impl FnMut(RunRecord) -> Result<()>,
) -> Result<ChainState> {
    if let Err(msg) = config.validate() {
        return Err(Error::InvalidArgument(msg));
    }
    let mut state = match init {
        Some(s) => s,
        None => initial_state(spec, config, rng)?,
    };
    for t in 0..config.burn_in + config.n_samples {
        let out = step(&state, spec, config, t, rng)?;
        state = out.next;
        if t >= config.burn_in {
            sink(RunRecord {
                iter: t,
                x: state.x.clone(),
                cell: state.cell.clone(),
                accepted: out.accepted,
                dh: out.hamiltonian_error,
                n_reflect: out.n_reflections,
                n_refract: out.n_refractions,
            })?;
        }
    }
    Ok(state)
}

pub fn run_chain<R: Rng + ?Sized>(
    spec: &VoronoiMeasureSpec,
    config: &SamplerConfig,
    init: Option<ChainState>,
    rng: &mut R,
) -> Result<Vec<RunRecord>> {
    let mut records = Vec::with_capacity(config.n_samples);
    run_chain_with(spec, config, init, rng, |rec| {
        records.push(rec);
        Ok(())
    })?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn refract_example() {
        let (r, passed) = refract_reflect(&[2.0, 1.0], &[1.0, 0.0], 1.5, RefractionForm::UnitDirection).unwrap();
        assert!(passed);
        assert!((r[0] - 1.0).abs() < 1e-15 && r[1] == 1.0);
    }

    #[test]
    fn reflect_example() {
        let (r, passed) = refract_reflect(&[1.0, 1.0], &[1.0, 0.0], 2.0, RefractionForm::UnitDirection).unwrap();
        assert!(!passed);
        assert_eq!(r, vec![-1.0, 1.0]);
        let (r, _) = refract_reflect(&[1.0, 1.0], &[1.0, 0.0], f64::INFINITY, RefractionForm::UnitDirection).unwrap();
        assert_eq!(r, vec![-1.0, 1.0]);
    }

    #[test]
    fn zero_jump_is_identity() {
        let r = [0.3, -1.7, 2.2];
        let (out, passed) = refract_reflect(&r, &[0.0, 0.6, 0.8], 0.0, RefractionForm::UnitDirection).unwrap();
        assert!(passed);
        assert_eq!(out, r.to_vec());
        assert_eq!(
            refract_reflect(&r, &[0.0; 3], 1.0, RefractionForm::UnitDirection),
            Err(Error::ZeroNormal)
        );
    }

    #[test]
    fn literal_form_differs_off_unit_speed() {
        let (a, _) = refract_reflect(&[2.0, 0.0], &[1.0, 0.0], 1.5, RefractionForm::UnitDirection).unwrap();
        let (b, _) = refract_reflect(&[2.0, 0.0], &[1.0, 0.0], 1.5, RefractionForm::Literal).unwrap();
        assert_eq!(a[0], 1.0);
        assert_eq!(b[0], 0.5);
    }

    #[test]
    fn free_drift_without_facets() {
        let spec = VoronoiMeasureSpec::toy(&[0.25; 4], 1.0).unwrap();
        let x = [0.5, 0.5];
        let r = [0.3, 0.2];
        let out = find_disc(&spec, &x, &r, &[0], 1.0, 0.1, RefractionForm::UnitDirection).unwrap();
        assert_eq!(out.x, vec![0.5 + 0.3, 0.5 + 0.2]);
        assert_eq!(out.n_reflections + out.n_refractions, 0);
    }

    #[test]
    fn zero_jump_facet_goes_straight() {
        let spec = VoronoiMeasureSpec::toy(&[0.25; 4], 1.0).unwrap();
        let out = find_disc(&spec, &[0.5, 0.5], &[-1.0, 0.2], &[0], 1.0, 0.1, RefractionForm::UnitDirection)
            .unwrap();
        assert_eq!(out.n_refractions, 1);
        assert_eq!(out.cell, vec![1]);
        assert!((out.x[0] + 0.5).abs() < 1e-10 && (out.x[1] - 0.7).abs() < 1e-10);
    }

    #[test]
    fn box_face_mirrors() {
        let spec = VoronoiMeasureSpec::toy(&[0.25; 4], 1.0).unwrap();
        let out = find_disc(&spec, &[1.5, 0.5], &[1.0, 0.0], &[0], 1.0, 0.1, RefractionForm::UnitDirection)
            .unwrap();
        assert_eq!(out.n_reflections, 1);
        assert!((out.x[0] - 1.5).abs() < 1e-12);
        assert_eq!(out.r, vec![-1.0, 0.0]);
    }

    #[test]
    fn decay_schedule_reaches_floor() {
        let mut c = SamplerConfig::new(Algorithm::Langevin, 0.5);
        c.step_decay = StepDecay::ExponentialToFloor;
        assert_eq!(c.step_size_at(0), 0.5);
        assert!((c.step_size_at(500) - 0.05).abs() < 1e-15);
        assert!((c.step_size_at(5000) - 0.05).abs() < 1e-15);
        assert!(c.step_size_at(250) < 0.5 && c.step_size_at(250) > 0.05);
    }

    #[test]
    fn config_validation_names_fields() {
        let mut c = SamplerConfig::new(Algorithm::Svs, 0.1);
        assert!(c.validate().is_ok());
        c.disc_fraction = 0.0;
        assert!(c.validate().unwrap_err().starts_with("disc_fraction"));
        c.disc_fraction = 0.1;
        c.step_size = -1.0;
        assert!(c.validate().unwrap_err().starts_with("step_size"));
    }

    #[test]
    fn config_requires_step_size() {
        let err = toml::from_str::<SamplerConfig>("algorithm = \"svs\"").unwrap_err();
        assert!(err.to_string().contains("step_size"));
        let c: SamplerConfig = toml::from_str("algorithm = \"mucola\"\nstep_size = 0.1").unwrap();
        assert_eq!(c.algorithm, Algorithm::ProjectedLangevin);
        assert_eq!((c.burn_in, c.n_samples), (500, 200));
    }

    #[test]
    fn mucola_stays_on_centers() {
        let spec = VoronoiMeasureSpec::toy(&[0.7, 0.1, 0.1, 0.1], 1.0).unwrap();
        let mut c = SamplerConfig::new(Algorithm::ProjectedLangevin, 0.5);
        c.burn_in = 0;
        c.n_samples = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for rec in run_chain(&spec, &c, None, &mut rng).unwrap() {
            assert_eq!(rec.x, spec.table().embed(&rec.cell));
            assert!(rec.accepted);
        }
    }

    #[test]
    fn single_record_when_no_burn_in() {
        let spec = VoronoiMeasureSpec::toy(&[0.25; 4], 1.0).unwrap();
        let mut c = SamplerConfig::new(Algorithm::Svs, 0.1);
        c.burn_in = 0;
        c.n_samples = 1;
        let recs = run_chain(&spec, &c, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].iter, 0);
    }
}
