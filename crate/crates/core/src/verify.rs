//! Numerical property suite behind the `verify` subcommand.
//!
//! Each property returns a measured statistic and compares it with a fixed
//! tolerance.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::diagnostics::{
    drift_map, finite_diff_grad_check, jacobian_det_check, potential_grad_check, EmpiricalDistribution,
    js_divergence,
};
use crate::error::{Error, Result};
use crate::geometry::{dot, nearest_center, BoundingBox, EmbeddingTable};
use crate::measures::{anneal_probs, BaseCenter, BaseMeasureSpec, VoronoiMeasureSpec};
use crate::models::{LinearAttributeClassifier, TinyEmbedLM};
use crate::samplers::{
    find_disc, hmc_step, kinetic, refract_reflect, run_chain, svs_step, Algorithm, ChainState,
    RefractionForm, SamplerConfig,
};

pub const TOY_PEAKED: [f64; 4] = [0.7, 0.1, 0.1, 0.1];

#[derive(Debug, Clone, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn uniform_in<R: Rng + ?Sized>(rng: &mut R, bbox: &BoundingBox, n: usize) -> Vec<f64> {
    let d = bbox.dim();
    (0..n)
        .map(|j| {
            let (lo, hi) = (bbox.lower()[j % d], bbox.upper()[j % d]);
            lo + (hi - lo) * rng.random::<f64>()
        })
        .collect()
}

/// Max relative error of the toy potential gradient over `n` random interior points.
pub fn potential_gradient_error(n: usize, seed: u64) -> Result<f64> {
    let spec = VoronoiMeasureSpec::toy(&TOY_PEAKED, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..n).map(|_| spec.random_interior_point(&mut rng, 1e-3)).collect();
    Ok(potential_grad_check(&spec, &points, 1e-5)?.max_rel_error)
}

/// Max relative error of the LM gradient over `n` random seeded models and embedding tuples.
pub fn lm_gradient_error(n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let vocab = rng.random_range(2..=5);
        let seq_len = rng.random_range(1..=3);
        let dim = rng.random_range(1..=4);
        let lm = TinyEmbedLM::seeded(seed.wrapping_add(i as u64), vocab, dim, seq_len)?;
        let v = normals(&mut rng, seq_len * dim);
        let rep = finite_diff_grad_check(
            |x| lm.log_prob_embeddings(x),
            |x| lm.grad_embeddings(x),
            &[v],
            1e-5,
            |_| false,
        )?;
        worst = worst.max(rep.max_rel_error);
    }
    Ok(worst)
}

/// Max relative error of the classifier gradient over `n` random classifiers and inputs.
pub fn classifier_gradient_error(n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let classes = rng.random_range(2..=4);
        let dim = rng.random_range(1..=4);
        let seq_len = rng.random_range(1..=3);
        let clf = LinearAttributeClassifier::seeded(seed.wrapping_add(i as u64), classes, dim, 1.0)?;
        let t = rng.random_range(0..classes);
        let v = normals(&mut rng, seq_len * dim);
        let rep = finite_diff_grad_check(
            |x| clf.log_prob(x, t),
            |x| clf.grad(x, t),
            &[v],
            1e-5,
            |_| false,
        )?;
        worst = worst.max(rep.max_rel_error);
    }
    Ok(worst)
}

/// Largest `|H' - H|` over `n` random refract/reflect events.
pub fn conservation_error(n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let d = rng.random_range(1..=6);
        let r = normals(&mut rng, d);
        let normal = loop {
            let v = normals(&mut rng, d);
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-3 {
                break v.iter().map(|x| x / norm).collect::<Vec<_>>();
            }
        };
        let du = rng.random_range(-3.0..3.0);
        let (r2, passed) = refract_reflect(&r, &normal, du, RefractionForm::UnitDirection)?;
        let after = kinetic(&r2) + if passed { du } else { 0.0 };
        worst = worst.max((after - kinetic(&r)).abs());
    }
    Ok(worst)
}

/// Largest max-norm error of forward-then-reversed drifts through at least one facet.
pub fn reversibility_error(n: usize, seed: u64) -> Result<f64> {
    let spec = VoronoiMeasureSpec::toy(&TOY_PEAKED, 0.25)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < n {
        let state = ChainState::random(&spec, &mut rng)?;
        let r: Vec<f64> = normals(&mut rng, 2).iter().map(|v| 3.0 * v).collect();
        let alpha = rng.random_range(0.05..=1.0);
        let fwd = find_disc(&spec, &state.x, &r, &state.cell, 1.0, alpha, RefractionForm::UnitDirection)?;
        if fwd.n_reflections + fwd.n_refractions == 0 {
            continue;
        }
        let back_r: Vec<f64> = fwd.r.iter().map(|v| -v).collect();
        let back = find_disc(&spec, &fwd.x, &back_r, &fwd.cell, 1.0, alpha, RefractionForm::UnitDirection)?;
        let dx = state.x.iter().zip(&back.x).map(|(a, b)| (a - b).abs());
        let dr = r.iter().zip(&back.r).map(|(a, b)| (a + b).abs());
        let err = dx.chain(dr).fold(0.0, f64::max);
        worst = worst.max(err);
        done += 1;
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FacetKind {
    Refract,
    Reflect,
}

/// Largest `||det J| - 1|` of single-facet drift maps in the plane.
///
/// The box is wide enough that only cell facets are hit.
pub fn jacobian_error(n: usize, kind: FacetKind, seed: u64) -> Result<f64> {
    let spec = VoronoiMeasureSpec::categorical(
        EmbeddingTable::square_toy(),
        BoundingBox::cube(2, 10.0)?,
        &TOY_PEAKED,
        1,
        1.0,
        BaseMeasureSpec::gaussian(BaseCenter::CellCenter, true),
    )?;
    let map = drift_map(&spec, 1.0, RefractionForm::UnitDirection);
    let inner = BoundingBox::cube(2, 2.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut tries = 0;
    while done < n {
        tries += 1;
        if tries > 1000 * n {
            return Err(Error::Check("could not find enough single-facet base points".into()));
        }
        let x = uniform_in(&mut rng, &inner, 2);
        let r = normals(&mut rng, 2);
        let cell = vec![nearest_center(&x, spec.table())];
        let Ok(out) = find_disc(&spec, &x, &r, &cell, 1.0, 1.0, RefractionForm::UnitDirection) else {
            continue;
        };
        let matches = match kind {
            FacetKind::Refract => out.n_refractions == 1 && out.n_reflections == 0,
            FacetKind::Reflect => out.n_reflections == 1 && out.n_refractions == 0,
        };
        if !matches || crate::geometry::boundary_gap(&x, spec.table()) < 1e-3 {
            continue;
        }
        let mut z = x.clone();
        z.extend(&r);
        let Ok(det) = jacobian_det_check(&map, &z, 1e-6, 1) else {
            continue;
        };
        worst = worst.max((det - 1.0).abs());
        done += 1;
    }
    Ok(worst)
}

/// Largest `|p_hat - p| / se` over the toy cells, integrating `exp(-U)` by uniform sampling of the box.
pub fn mass_identity_zscore(n: usize, seed: u64) -> Result<f64> {
    let spec = VoronoiMeasureSpec::toy(&TOY_PEAKED, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = spec.table().len();
    let mut w = Vec::with_capacity(n);
    let mut cells = Vec::with_capacity(n);
    for _ in 0..n {
        let x = uniform_in(&mut rng, spec.bbox(), 2);
        let cell = nearest_center(&x, spec.table());
        w.push((-spec.potential_in(&x, &[cell])?).exp());
        cells.push(cell);
    }
    let nf = n as f64;
    let w_mean = w.iter().sum::<f64>() / nf;
    let mut worst: f64 = 0.0;
    for (c, &p) in TOY_PEAKED.iter().enumerate().take(m) {
        let a_mean = w.iter().zip(&cells).filter(|(_, &k)| k == c).map(|(v, _)| v).sum::<f64>() / nf;
        let ratio = a_mean / w_mean;
        let resid_var = w
            .iter()
            .zip(&cells)
            .map(|(&v, &k)| {
                let a = if k == c { v } else { 0.0 };
                (a - ratio * v).powi(2)
            })
            .sum::<f64>()
            / (nf - 1.0);
        let se = (resid_var / nf).sqrt() / w_mean;
        worst = worst.max((ratio - p).abs() / se);
    }
    Ok(worst)
}

/// Largest `|joint - product| / se` over `cells` random structured cells with `N = 2`.
pub fn product_measure_zscore(cells: usize, samples: u64, seed: u64) -> Result<f64> {
    let spec = VoronoiMeasureSpec::categorical(
        EmbeddingTable::square_toy(),
        BoundingBox::cube(2, 2.0)?,
        &[0.25; 4],
        2,
        1.0,
        BaseMeasureSpec::gaussian(BaseCenter::CellCenter, true),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cells {
        let cell = vec![rng.random_range(0..4), rng.random_range(0..4)];
        let (joint, se_j) = spec.cell_mass_mc(&cell, samples, &mut rng)?;
        let (m0, se0) = spec.position_mass_mc(&cell, 0, samples, &mut rng)?;
        let (m1, se1) = spec.position_mass_mc(&cell, 1, samples, &mut rng)?;
        let prod = m0 * m1;
        let se_p = prod * ((se0 / m0).powi(2) + (se1 / m1).powi(2)).sqrt();
        worst = worst.max((joint - prod).abs() / (se_j * se_j + se_p * se_p).sqrt());
    }
    Ok(worst)
}

/// A two-cell target whose second center is far outside any reachable region.
pub fn single_cell_spec() -> Result<VoronoiMeasureSpec> {
    VoronoiMeasureSpec::categorical(
        EmbeddingTable::new(vec![vec![0.0, 0.0], vec![50.0, 0.0]])?,
        BoundingBox::new(vec![-10.0, -10.0], vec![60.0, 10.0])?,
        &[0.5, 0.5],
        1,
        1.0,
        BaseMeasureSpec::gaussian(BaseCenter::CellCenter, true),
    )
}

/// Number of steps (out of `steps`) where SVS and one-step HMC differ in any bit.
pub fn reduction_mismatches(steps: usize, seed: u64) -> Result<usize> {
    let spec = single_cell_spec()?;
    let svs = SamplerConfig::new(Algorithm::Svs, 0.1);
    let hmc = SamplerConfig::new(Algorithm::Hmc, 0.1);
    let mut a = ChainState::new(&spec, vec![0.3, -0.2])?;
    let mut b = a.clone();
    let mut rng_a = ChaCha8Rng::seed_from_u64(seed);
    let mut rng_b = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..steps {
        let oa = svs_step(&a, &spec, &svs, 0.1, &mut rng_a)?;
        let ob = hmc_step(&b, &spec, &hmc, 0.1, &mut rng_b)?;
        if oa.n_reflections + oa.n_refractions > 0 {
            return Err(Error::Check("SVS chain hit a facet on the single-cell target".into()));
        }
        let same = oa.accepted == ob.accepted
            && oa.hamiltonian_error.to_bits() == ob.hamiltonian_error.to_bits()
            && oa.next.x.iter().zip(&ob.next.x).all(|(p, q)| p.to_bits() == q.to_bits())
            && oa.next.potential.to_bits() == ob.next.potential.to_bits();
        mismatches += (!same) as usize;
        a = oa.next;
        b = ob.next;
    }
    Ok(mismatches)
}

/// JS divergence of an SVS chain on the peaked toy at `T = 1` to the exact categorical.
pub fn svs_stationarity_js(n_samples: usize, seed: u64) -> Result<f64> {
    let spec = VoronoiMeasureSpec::toy(&TOY_PEAKED, 1.0)?;
    let mut config = SamplerConfig::new(Algorithm::Svs, 0.1);
    config.n_samples = n_samples;
    let records = run_chain(&spec, &config, None, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let emp = EmpiricalDistribution::from_records(&records)?;
    js_divergence(&emp.to_table(4, 1)?, &TOY_PEAKED)
}

/// Checks that annealing keeps the argmax and the normalization for random inputs.
pub fn anneal_violations(n: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..n {
        let m = rng.random_range(2..=8);
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let t = 10f64.powf(rng.random_range(-1.0..1.0));
        let Ok(q) = anneal_probs(&p, t) else {
            bad += 1;
            continue;
        };
        let argmax = |v: &[f64]| (0..v.len()).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap();
        if argmax(&p) != argmax(&q) || (q.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            bad += 1;
        }
    }
    Ok(bad)
}

type Check = fn() -> Result<(bool, String)>;

fn le(value: f64, bound: f64, label: &str) -> (bool, String) {
    (value <= bound, format!("{label} = {value:.3e} (bound {bound:.0e})"))
}

/// Every property as `(name, check)`.
pub fn properties() -> Vec<(&'static str, Check)> {
    vec![
        ("potential-gradient", || {
            Ok(le(potential_gradient_error(100, 1)?, 1e-6, "max rel err"))
        }),
        ("lm-gradient", || Ok(le(lm_gradient_error(50, 2)?, 1e-6, "max rel err"))),
        ("classifier-gradient", || {
            Ok(le(classifier_gradient_error(50, 3)?, 1e-6, "max rel err"))
        }),
        ("conservation", || Ok(le(conservation_error(10_000, 4)?, 1e-10, "max |dH|"))),
        ("reversibility", || Ok(le(reversibility_error(1000, 5)?, 1e-8, "max-norm err"))),
        ("jacobian-refract", || {
            Ok(le(jacobian_error(50, FacetKind::Refract, 6)?, 1e-4, "max ||det|-1|"))
        }),
        ("jacobian-reflect", || {
            Ok(le(jacobian_error(50, FacetKind::Reflect, 7)?, 1e-4, "max ||det|-1|"))
        }),
        ("mass-identity", || Ok(le(mass_identity_zscore(1_000_000, 8)?, 3.0, "max z"))),
        ("product-measure", || {
            Ok(le(product_measure_zscore(5, 200_000, 9)?, 3.0, "max z"))
        }),
        ("reduction-identity", || {
            let n = reduction_mismatches(1000, 10)?;
            Ok((n == 0, format!("{n} of 1000 steps differ")))
        }),
        ("anneal", || {
            let n = anneal_violations(1000, 11)?;
            Ok((n == 0, format!("{n} of 1000 inputs violate argmax or normalization")))
        }),
        ("svs-stationarity", || Ok(le(svs_stationarity_js(200_000, 12)?, 0.01, "JS"))),
    ]
}

/// Runs all properties whose name contains `filter`.
pub fn run_properties(filter: Option<&str>) -> Vec<PropertyResult> {
    properties()
        .into_iter()
        .filter(|(name, _)| filter.is_none_or(|f| name.contains(f)))
        .map(|(name, check)| {
            let start = Instant::now();
            let (passed, detail) = match check() {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            PropertyResult {
                name,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}
