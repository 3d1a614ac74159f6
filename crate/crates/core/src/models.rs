//! A desk-scale embedding-tied autoregressive model and a linear attribute
//! classifier, both differentiable with respect to the sequence embeddings.
//!
//! The model scores fixed-length sequences (no end-of-sequence symbol):
//!
//! ```text
//! log p(V) = sum_n [ V_n . h_n - logsumexp_w (v_w . h_n) ]
//! h_0 = start,   h_n = tanh(A mean(V_0..V_{n-1}) + b)
//! ```
//!
//! `V_n` enters through its own logit and through every later context; the
//! softmax normalizer always runs over the fixed base table `v_w`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, linear_index, unravel_index, EmbeddingTable};

/// Largest state space [`exact_distribution`] will enumerate.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LmSnapshot", into = "LmSnapshot")]
pub struct TinyEmbedLM {
    table: EmbeddingTable,
    weight: Vec<f64>,
    bias: Vec<f64>,
    start: Vec<f64>,
    seq_len: usize,
    seed: Option<u64>,
}

fn normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl TinyEmbedLM {
    pub fn new(
        table: EmbeddingTable,
        weight: Vec<f64>,
        bias: Vec<f64>,
        start: Vec<f64>,
        seq_len: usize,
    ) -> Result<Self> {
        let d = table.dim();
        if weight.len() != d * d || bias.len() != d || start.len() != d {
            return Err(Error::InvalidArgument(format!(
                "encoder shapes must be {d}x{d}, {d}, {d}"
            )));
        }
        if seq_len == 0 {
            return Err(Error::InvalidArgument("sequence length must be >= 1".into()));
        }
        if weight.iter().chain(&bias).chain(&start).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("encoder parameters must be finite".into()));
        }
        Ok(TinyEmbedLM {
            table,
            weight,
            bias,
            start,
            seq_len,
            seed: None,
        })
    }

    /// Embeddings, encoder weights and start vector drawn from a seeded standard normal.
    pub fn seeded(seed: u64, vocab: usize, dim: usize, seq_len: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = EmbeddingTable::from_flat(normals(&mut rng, vocab * dim), dim)?;
        let weight = normals(&mut rng, dim * dim);
        let bias = normals(&mut rng, dim);
        let start = normals(&mut rng, dim);
        let mut lm = Self::new(table, weight, bias, start, seq_len)?;
        lm.seed = Some(seed);
        Ok(lm)
    }

    /// Zero encoder and zero start vector: every conditional is uniform.
    pub fn uniform(table: EmbeddingTable, seq_len: usize) -> Result<Self> {
        let d = table.dim();
        Self::new(table, vec![0.0; d * d], vec![0.0; d], vec![0.0; d], seq_len)
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn vocab(&self) -> usize {
        self.table.len()
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    fn check_rows(&self, v: &[f64]) -> Result<()> {
        let want = self.seq_len * self.dim();
        if v.len() != want {
            return Err(Error::DimensionMismatch {
                expected: want,
                got: v.len(),
            });
        }
        Ok(())
    }

    fn check_seq(&self, seq: &[usize]) -> Result<()> {
        if seq.len() != self.seq_len {
            return Err(Error::DimensionMismatch {
                expected: self.seq_len,
                got: seq.len(),
            });
        }
        if let Some(&bad) = seq.iter().find(|&&t| t >= self.vocab()) {
            return Err(Error::InvalidArgument(format!("token {bad} out of range")));
        }
        Ok(())
    }

    /// Context encodings `h_0..h_{N-1}` for the rows of `v` (only the first
    /// `count` contexts are computed).
    fn contexts(&self, v: &[f64], count: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut out = Vec::with_capacity(count);
        let mut running = vec![0.0; d];
        for n in 0..count {
            if n == 0 {
                out.push(self.start.clone());
            } else {
                for (acc, x) in running.iter_mut().zip(&v[(n - 1) * d..n * d]) {
                    *acc += x;
                }
                let h = (0..d)
                    .map(|i| {
                        let row = &self.weight[i * d..(i + 1) * d];
                        (row.iter().zip(&running).map(|(a, s)| a * s).sum::<f64>() / n as f64
                            + self.bias[i])
                            .tanh()
                    })
                    .collect();
                out.push(h);
            }
        }
        out
    }

    fn softmax_head(&self, h: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self.table.rows().map(|w| dot(w, h)).collect();
        let lse = log_sum_exp(&logits);
        logits.iter().map(|l| (l - lse).exp()).collect()
    }

    /// Next-token distribution after a token prefix.
    pub fn conditional(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        if prefix.len() >= self.seq_len || prefix.iter().any(|&t| t >= self.vocab()) {
            return Err(Error::InvalidArgument("prefix too long or token out of range".into()));
        }
        let v = self.table.embed(prefix);
        let h = self.contexts(&v, prefix.len() + 1).pop().expect("at least one context");
        Ok(self.softmax_head(&h))
    }

    /// `log p(V)` for an arbitrary `N x d` embedding matrix (row-major).
    pub fn log_prob_embeddings(&self, v: &[f64]) -> Result<f64> {
        self.check_rows(v)?;
        let d = self.dim();
        let hs = self.contexts(v, self.seq_len);
        Ok(hs
            .iter()
            .enumerate()
            .map(|(n, h)| {
                let logits: Vec<f64> = self.table.rows().map(|w| dot(w, h)).collect();
                dot(&v[n * d..(n + 1) * d], h) - log_sum_exp(&logits)
            })
            .sum())
    }

    /// Analytic gradient of [`Self::log_prob_embeddings`] with respect to `V`.
    pub fn grad_embeddings(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_rows(v)?;
        let d = self.dim();
        let hs = self.contexts(v, self.seq_len);
        let mut grad = vec![0.0; v.len()];
        for (n, h) in hs.iter().enumerate() {
            for (g, hi) in grad[n * d..(n + 1) * d].iter_mut().zip(h) {
                *g += hi;
            }
            if n == 0 {
                continue;
            }
            // d/dh of V_n . h - lse(W h) is V_n - E_p[v_w]; then through tanh and the mean.
            let probs = self.softmax_head(h);
            let mut delta = v[n * d..(n + 1) * d].to_vec();
            for (p, w) in probs.iter().zip(self.table.rows()) {
                for (dl, wi) in delta.iter_mut().zip(w) {
                    *dl -= p * wi;
                }
            }
            for (dl, hi) in delta.iter_mut().zip(h) {
                *dl *= 1.0 - hi * hi;
            }
            let mut back = vec![0.0; d];
            for i in 0..d {
                let row = &self.weight[i * d..(i + 1) * d];
                for (b, a) in back.iter_mut().zip(row) {
                    *b += a * delta[i];
                }
            }
            for j in 0..n {
                for (g, b) in grad[j * d..(j + 1) * d].iter_mut().zip(&back) {
                    *g += b / n as f64;
                }
            }
        }
        Ok(grad)
    }

    pub fn log_prob(&self, seq: &[usize]) -> Result<f64> {
        self.check_seq(seq)?;
        self.log_prob_embeddings(&self.table.embed(seq))
    }

    pub fn grad_at(&self, seq: &[usize]) -> Result<Vec<f64>> {
        self.check_seq(seq)?;
        self.grad_embeddings(&self.table.embed(seq))
    }

    /// Draw one sequence token by token from the model conditionals.
    pub fn ancestral_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let mut seq = Vec::with_capacity(self.seq_len);
        for _ in 0..self.seq_len {
            let probs = self.conditional(&seq).expect("prefix is valid by construction");
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = probs.len() - 1;
            for (w, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = w;
                    break;
                }
            }
            seq.push(pick);
        }
        seq
    }
}

pub fn lm_log_prob(model: &TinyEmbedLM, seq: &[usize]) -> Result<f64> {
    model.log_prob(seq)
}

pub fn lm_grad_embeddings(model: &TinyEmbedLM, seq: &[usize]) -> Result<Vec<f64>> {
    model.grad_at(seq)
}

pub fn ancestral_sample<R: Rng + ?Sized>(model: &TinyEmbedLM, rng: &mut R) -> Vec<usize> {
    model.ancestral_sample(rng)
}

/// Softmax over `w_c . mean(V) + b_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearAttributeClassifier {
    dim: usize,
    #[serde(with = "decimal")]
    weights: Vec<f64>,
    #[serde(with = "decimal")]
    bias: Vec<f64>,
}

impl LinearAttributeClassifier {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        let dim = weights.first().map_or(0, Vec::len);
        if weights.len() < 2 || weights.len() != bias.len() || dim == 0 {
            return Err(Error::InvalidArgument(
                "classifier needs >= 2 classes with one bias each".into(),
            ));
        }
        if weights.iter().any(|w| w.len() != dim) {
            return Err(Error::InvalidArgument("ragged classifier weights".into()));
        }
        Ok(LinearAttributeClassifier {
            dim,
            weights: weights.into_iter().flatten().collect(),
            bias,
        })
    }

    pub fn seeded(seed: u64, classes: usize, dim: usize, scale: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..classes)
            .map(|_| normals(&mut rng, dim).into_iter().map(|w| w * scale).collect())
            .collect();
        let bias = normals(&mut rng, classes);
        Self::new(weights, bias)
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn weight(&self, c: usize) -> &[f64] {
        &self.weights[c * self.dim..(c + 1) * self.dim]
    }

    fn class_probs(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.is_empty() || v.len() % self.dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        let n = v.len() / self.dim;
        let mut mean = vec![0.0; self.dim];
        for row in v.chunks_exact(self.dim) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x / n as f64;
            }
        }
        let scores: Vec<f64> = (0..self.classes())
            .map(|c| dot(self.weight(c), &mean) + self.bias[c])
            .collect();
        let lse = log_sum_exp(&scores);
        Ok(scores.iter().map(|s| (s - lse).exp()).collect())
    }

    pub fn log_prob(&self, v: &[f64], target: usize) -> Result<f64> {
        if target >= self.classes() {
            return Err(Error::UnknownClass(target));
        }
        Ok(self.class_probs(v)?[target].ln())
    }

    /// Gradient of `log p(target | V)`; each row receives `(w_t - E[w]) / N`.
    pub fn grad(&self, v: &[f64], target: usize) -> Result<Vec<f64>> {
        if target >= self.classes() {
            return Err(Error::UnknownClass(target));
        }
        let probs = self.class_probs(v)?;
        let n = (v.len() / self.dim) as f64;
        let mut row = self.weight(target).to_vec();
        for (c, p) in probs.iter().enumerate() {
            for (r, w) in row.iter_mut().zip(self.weight(c)) {
                *r -= p * w;
            }
        }
        Ok(v.chunks_exact(self.dim)
            .flat_map(|_| row.iter().map(move |r| r / n))
            .collect())
    }
}

pub fn classifier_log_prob(clf: &LinearAttributeClassifier, v: &[f64], target: usize) -> Result<f64> {
    clf.log_prob(v, target)
}

pub fn classifier_grad(clf: &LinearAttributeClassifier, v: &[f64], target: usize) -> Result<Vec<f64>> {
    clf.grad(v, target)
}

/// Control term `gamma * log p(target | V)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub classifier: LinearAttributeClassifier,
    pub target: usize,
    pub gamma: f64,
}

impl Control {
    pub fn new(classifier: LinearAttributeClassifier, target: usize, gamma: f64) -> Result<Self> {
        if target >= classifier.classes() {
            return Err(Error::UnknownClass(target));
        }
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidArgument("control weight must be finite and >= 0".into()));
        }
        Ok(Control {
            classifier,
            target,
            gamma,
        })
    }
}

/// Normalized probabilities over `[M]^N`, indexed by [`linear_index`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExactTable {
    pub vocab: usize,
    pub seq_len: usize,
    pub probs: Vec<f64>,
}

impl ExactTable {
    pub fn prob(&self, seq: &[usize]) -> f64 {
        self.probs[linear_index(seq, self.vocab)]
    }

    pub fn sequences(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, &p)| (unravel_index(i, self.vocab, self.seq_len), p))
    }
}

pub(crate) fn state_space(vocab: usize, seq_len: usize) -> Result<usize> {
    let size = (vocab as u128).checked_pow(seq_len as u32).unwrap_or(u128::MAX);
    if size > ENUMERATION_LIMIT {
        return Err(Error::StateSpaceTooLarge(size));
    }
    Ok(size as usize)
}

/// Exhaustive `p(seq)`, or `p(seq) p(t|seq)^gamma` renormalized when a control is given.
pub fn exact_distribution(model: &TinyEmbedLM, control: Option<&Control>) -> Result<ExactTable> {
    let (m, n) = (model.vocab(), model.seq_len());
    let size = state_space(m, n)?;
    let mut logw = Vec::with_capacity(size);
    for idx in 0..size {
        let seq = unravel_index(idx, m, n);
        let v = model.table().embed(&seq);
        let mut lw = model.log_prob_embeddings(&v)?;
        if let Some(c) = control {
            if c.gamma != 0.0 {
                lw += c.gamma * c.classifier.log_prob(&v, c.target)?;
            }
        }
        logw.push(lw);
    }
    let lse = log_sum_exp(&logw);
    Ok(ExactTable {
        vocab: m,
        seq_len: n,
        probs: logw.iter().map(|l| (l - lse).exp()).collect(),
    })
}

/// Serialized form: weights as decimal strings so reloads are bit-identical.
#[derive(Serialize, Deserialize)]
struct LmSnapshot {
    #[serde(default)]
    seed: Option<u64>,
    vocab: usize,
    dim: usize,
    seq_len: usize,
    #[serde(with = "decimal")]
    table: Vec<f64>,
    #[serde(with = "decimal")]
    weight: Vec<f64>,
    #[serde(with = "decimal")]
    bias: Vec<f64>,
    #[serde(with = "decimal")]
    start: Vec<f64>,
}

impl TryFrom<LmSnapshot> for TinyEmbedLM {
    type Error = Error;
    fn try_from(s: LmSnapshot) -> Result<Self> {
        let table = EmbeddingTable::from_flat(s.table, s.dim)?;
        if table.len() != s.vocab {
            return Err(Error::InvalidArgument("snapshot vocab does not match table".into()));
        }
        let mut lm = TinyEmbedLM::new(table, s.weight, s.bias, s.start, s.seq_len)?;
        lm.seed = s.seed;
        Ok(lm)
    }
}

impl From<TinyEmbedLM> for LmSnapshot {
    fn from(lm: TinyEmbedLM) -> Self {
        LmSnapshot {
            seed: lm.seed,
            vocab: lm.table.len(),
            dim: lm.table.dim(),
            seq_len: lm.seq_len,
            table: lm.table.as_flat().to_vec(),
            weight: lm.weight,
            bias: lm.bias,
            start: lm.start,
        }
    }
}

/// A model with an optional classifier, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub model: TinyEmbedLM,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<Control>,
}

mod decimal {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(values.iter().map(|v| format!("{v:?}")))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| s.parse::<f64>().map_err(D::Error::custom))
            .collect()
    }
}
