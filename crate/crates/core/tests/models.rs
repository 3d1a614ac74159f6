use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use voronoi_mcmc::diagnostics::{js_divergence, EmpiricalDistribution};
use voronoi_mcmc::models::{ancestral_sample, lm_grad_embeddings, lm_log_prob};
use voronoi_mcmc::{exact_distribution, Control, EmbeddingTable, LinearAttributeClassifier, TinyEmbedLM};

/// Plain re-implementation of the model from its serialized parameters.
struct Oracle {
    m: usize,
    d: usize,
    n: usize,
    table: Vec<f64>,
    weight: Vec<f64>,
    bias: Vec<f64>,
    start: Vec<f64>,
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_str().unwrap().parse().unwrap())
        .collect()
}

impl Oracle {
    fn of(lm: &TinyEmbedLM) -> Self {
        let v: Value = serde_json::to_value(lm).unwrap();
        Oracle {
            m: v["vocab"].as_u64().unwrap() as usize,
            d: v["dim"].as_u64().unwrap() as usize,
            n: v["seq_len"].as_u64().unwrap() as usize,
            table: floats(&v["table"]),
            weight: floats(&v["weight"]),
            bias: floats(&v["bias"]),
            start: floats(&v["start"]),
        }
    }

    fn log_prob_rows(&self, v: &[f64]) -> f64 {
        let d = self.d;
        let mut total = 0.0;
        for pos in 0..self.n {
            let h: Vec<f64> = if pos == 0 {
                self.start.clone()
            } else {
                let mut mean = vec![0.0; d];
                for p in 0..pos {
                    for i in 0..d {
                        mean[i] += v[p * d + i] / pos as f64;
                    }
                }
                (0..d)
                    .map(|i| {
                        let s: f64 = (0..d).map(|j| self.weight[i * d + j] * mean[j]).sum();
                        (s + self.bias[i]).tanh()
                    })
                    .collect()
            };
            let logit = |row: &[f64]| row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
            let z: f64 = (0..self.m).map(|w| logit(&self.table[w * d..(w + 1) * d]).exp()).sum();
            total += logit(&v[pos * d..(pos + 1) * d]) - z.ln();
        }
        total
    }

    fn embed(&self, seq: &[usize]) -> Vec<f64> {
        seq.iter()
            .flat_map(|&t| self.table[t * self.d..(t + 1) * self.d].iter().copied())
            .collect()
    }
}

fn classifier_prob(clf: &LinearAttributeClassifier, v: &[f64], target: usize) -> f64 {
    let j: Value = serde_json::to_value(clf).unwrap();
    let d = j["dim"].as_u64().unwrap() as usize;
    let w = floats(&j["weights"]);
    let b = floats(&j["bias"]);
    let rows = v.len() / d;
    let mean: Vec<f64> = (0..d).map(|i| (0..rows).map(|r| v[r * d + i]).sum::<f64>() / rows as f64).collect();
    let scores: Vec<f64> = (0..b.len())
        .map(|c| (0..d).map(|i| w[c * d + i] * mean[i]).sum::<f64>() + b[c])
        .collect();
    let z: f64 = scores.iter().map(|s| s.exp()).sum();
    scores[target].exp() / z
}

fn all_sequences(m: usize, n: usize) -> Vec<Vec<usize>> {
    (0..m.pow(n as u32))
        .map(|mut idx| {
            let mut s = vec![0; n];
            for slot in s.iter_mut().rev() {
                *slot = idx % m;
                idx /= m;
            }
            s
        })
        .collect()
}

fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let down = f(&xp);
            xp[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_err(fd: &[f64], an: &[f64]) -> f64 {
    let num: f64 = fd.iter().zip(an).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    num / an.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0)
}

#[test]
fn seeded_model_matches_independent_enumeration() {
    let lm = TinyEmbedLM::seeded(7, 3, 4, 2).unwrap();
    let oracle = Oracle::of(&lm);
    let seqs = all_sequences(3, 2);
    assert_eq!(seqs.len(), 9);
    let logs: Vec<f64> = seqs.iter().map(|s| oracle.log_prob_rows(&oracle.embed(s))).collect();
    let z: f64 = logs.iter().map(|l| l.exp()).sum();
    assert!((z - 1.0).abs() < 1e-12);
    let table = exact_distribution(&lm, None).unwrap();
    for (s, l) in seqs.iter().zip(&logs) {
        assert!((lm_log_prob(&lm, s).unwrap() - l).abs() < 1e-12);
        assert!((table.prob(s) - l.exp()).abs() < 1e-12);
    }
}

#[test]
fn gradients_match_finite_differences_over_fifty_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for seed in 0..50u64 {
        let m = rng.random_range(2..=5);
        let d = rng.random_range(1..=4);
        let n = rng.random_range(1..=3);
        let lm = TinyEmbedLM::seeded(seed, m, d, n).unwrap();
        let oracle = Oracle::of(&lm);
        let v: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let fd = central_diff(|x| oracle.log_prob_rows(x), &v, 1e-5);
        let an = lm.grad_embeddings(&v).unwrap();
        assert!(rel_err(&fd, &an) < 1e-6, "lm seed {seed}");

        let clf = LinearAttributeClassifier::seeded(seed, rng.random_range(2..=4), d, 1.5).unwrap();
        let t = rng.random_range(0..clf.classes());
        let fd = central_diff(|x| classifier_prob(&clf, x, t).ln(), &v, 1e-5);
        let an = clf.grad(&v, t).unwrap();
        assert!(rel_err(&fd, &an) < 1e-6, "classifier seed {seed}");
    }
}

#[test]
fn single_token_and_uniform_gradients() {
    let lm = TinyEmbedLM::seeded(5, 4, 3, 1).unwrap();
    let oracle = Oracle::of(&lm);
    for t in 0..4 {
        let v = oracle.embed(&[t]);
        let fd = central_diff(|x| oracle.log_prob_rows(x), &v, 1e-5);
        let an = lm_grad_embeddings(&lm, &[t]).unwrap();
        assert!(rel_err(&fd, &an) < 1e-6);
        // Only the token's own logit moves with V when N = 1: the gradient is h_0.
        for (a, s) in an.iter().zip(&oracle.start) {
            assert!((a - s).abs() < 1e-12);
        }
    }

    let table = EmbeddingTable::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]]).unwrap();
    let uni = TinyEmbedLM::uniform(table, 3).unwrap();
    let oracle = Oracle::of(&uni);
    for seq in all_sequences(3, 3) {
        let v = oracle.embed(&seq);
        let fd = central_diff(|x| oracle.log_prob_rows(x), &v, 1e-5);
        assert!(rel_err(&fd, &lm_grad_embeddings(&uni, &seq).unwrap()) < 1e-6);
        assert!((lm_log_prob(&uni, &seq).unwrap() - 3.0 * (1.0f64 / 3.0).ln()).abs() < 1e-12);
    }
}

#[test]
fn uniform_model_ancestral_samples_pass_chi_square() {
    let table = EmbeddingTable::new(vec![vec![0.5, 1.0], vec![-2.0, 0.1], vec![0.3, -0.7]]).unwrap();
    let lm = TinyEmbedLM::uniform(table, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let draws = 100_000;
    let mut counts = [0u64; 9];
    for _ in 0..draws {
        let s = ancestral_sample(&lm, &mut rng);
        counts[s[0] * 3 + s[1]] += 1;
    }
    let expected = draws as f64 / 9.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // Upper 1% point of chi-square with 8 degrees of freedom.
    assert!(chi2 < 20.090, "chi2 = {chi2}");
}

#[test]
fn ancestral_samples_converge_to_enumeration() {
    let lm = TinyEmbedLM::seeded(7, 3, 4, 2).unwrap();
    let exact = exact_distribution(&lm, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let draws: Vec<Vec<usize>> = (0..1_000_000).map(|_| lm.ancestral_sample(&mut rng)).collect();
    let emp = EmpiricalDistribution::from_cells(draws.iter().cloned()).unwrap();
    let js = js_divergence(&emp.to_table(3, 2).unwrap(), &exact.probs).unwrap();
    assert!(js < 0.001, "js = {js}");
    assert!(js < 0.002);

    let small = EmpiricalDistribution::from_cells(draws[..10_000].iter().cloned()).unwrap();
    let js = js_divergence(&small.to_table(3, 2).unwrap(), &exact.probs).unwrap();
    assert!(js < 0.005, "js = {js}");
}

#[test]
fn controlled_table_is_prior_times_classifier() {
    let lm = TinyEmbedLM::seeded(7, 3, 4, 2).unwrap();
    let clf = LinearAttributeClassifier::seeded(11, 2, 4, 1.0).unwrap();
    let oracle = Oracle::of(&lm);
    let seqs = all_sequences(3, 2);
    let weights: Vec<f64> = seqs
        .iter()
        .map(|s| {
            let v = oracle.embed(s);
            oracle.log_prob_rows(&v).exp() * classifier_prob(&clf, &v, 1)
        })
        .collect();
    let z: f64 = weights.iter().sum();
    let table = exact_distribution(&lm, Some(&Control::new(clf.clone(), 1, 1.0).unwrap())).unwrap();
    for (s, w) in seqs.iter().zip(&weights) {
        assert!((table.prob(s) - w / z).abs() < 1e-12);
    }
    let gamma = exact_distribution(&lm, Some(&Control::new(clf, 0, 1.5).unwrap())).unwrap();
    assert!((gamma.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_conditional_normalizes(seed in 0u64..10_000, m in 2usize..=5, n in 1usize..=3, d in 1usize..=4) {
        let lm = TinyEmbedLM::seeded(seed, m, d, n).unwrap();
        for len in 0..n {
            for prefix in all_sequences(m, len) {
                let p = lm.conditional(&prefix).unwrap();
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn ancestral_sampling_is_deterministic(seed in 0u64..1000) {
        let lm = TinyEmbedLM::seeded(3, 4, 2, 3).unwrap();
        let a: Vec<_> = {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| lm.ancestral_sample(&mut rng)).collect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<_> = (0..20).map(|_| lm.ancestral_sample(&mut rng)).collect();
        prop_assert_eq!(a, b);
    }
}
