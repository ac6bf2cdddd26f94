//! Dual encoder Φ = head ∘ base and its batch-negative training.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::embedding::EmbeddingProvider;
use super::LinkError;
use crate::corpus_store::Corpus;
use crate::optim::Adam;
use crate::proposer::PropertyPool;

/// Trainable map from base embeddings to the scoring space.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    /// Φ = base embedding.
    Identity,
    /// Φ = tanh(A·e + b), A is `d_out × d_in` row-major followed by b.
    AffineTanh {
        d_in: usize,
        d_out: usize,
        params: Vec<f64>,
    },
}

impl Head {
    /// A = I (or seeded N(0, 1/d_in) when not square), b = 0.
    pub fn affine_tanh(d_in: usize, d_out: usize, seed: u64) -> Self {
        let mut params = vec![0.0; d_out * d_in + d_out];
        if d_in == d_out {
            for i in 0..d_in {
                params[i * d_in + i] = 1.0;
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, 1.0 / (d_in as f64).sqrt()).expect("valid sigma");
            for w in params.iter_mut().take(d_out * d_in) {
                *w = normal.sample(&mut rng);
            }
        }
        Head::AffineTanh { d_in, d_out, params }
    }

    pub fn d_out(&self, d_in: usize) -> usize {
        match self {
            Head::Identity => d_in,
            Head::AffineTanh { d_out, .. } => *d_out,
        }
    }

    pub fn apply(&self, e: &[f64]) -> Vec<f64> {
        match self {
            Head::Identity => e.to_vec(),
            Head::AffineTanh { params, .. } => affine_tanh(params, e),
        }
    }
}

fn affine_tanh(params: &[f64], e: &[f64]) -> Vec<f64> {
    let d_in = e.len();
    let d_out = params.len() / (d_in + 1);
    let (a, b) = params.split_at(d_out * d_in);
    (0..d_out)
        .map(|r| {
            let row = &a[r * d_in..(r + 1) * d_in];
            let pre = row.iter().zip(e).map(|(w, x)| w * x).sum::<f64>() + b[r];
            pre.tanh()
        })
        .collect()
}

/// Φ(text) = head(base.embed(text)).
#[derive(Clone)]
pub struct Encoder {
    base: Arc<dyn EmbeddingProvider>,
    head: Head,
}

impl std::fmt::Debug for Encoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Encoder")
            .field("dim", &self.base.dim())
            .field("head", &self.head)
            .finish()
    }
}

impl Encoder {
    pub fn identity(base: Arc<dyn EmbeddingProvider>) -> Self {
        Self {
            base,
            head: Head::Identity,
        }
    }

    /// Affine + tanh head with `d_out` outputs (`None` = base dimension).
    pub fn with_head(base: Arc<dyn EmbeddingProvider>, d_out: Option<usize>, seed: u64) -> Self {
        let d_in = base.dim();
        let head = Head::affine_tanh(d_in, d_out.unwrap_or(d_in), seed);
        Self { base, head }
    }

    pub fn from_parts(base: Arc<dyn EmbeddingProvider>, head: Head) -> Result<Self, LinkError> {
        if let Head::AffineTanh { d_in, d_out, params } = &head {
            if *d_in != base.dim() || params.len() != d_out * d_in + d_out {
                return Err(LinkError::Shape(format!(
                    "head expects {d_in} inputs with {} params, base has dim {}",
                    params.len(),
                    base.dim()
                )));
            }
        }
        Ok(Self { base, head })
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn base(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.base
    }

    pub fn d_out(&self) -> usize {
        self.head.d_out(self.base.dim())
    }

    pub fn base_embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, LinkError> {
        let raw = self.base.embed_batch(texts)?;
        Ok(raw
            .into_iter()
            .map(|v| v.into_iter().map(f64::from).collect())
            .collect())
    }

    pub fn encode(&self, text: &str) -> Result<Vec<f64>, LinkError> {
        Ok(self.encode_batch(&[text])?.remove(0))
    }

    /// Encodes in parallel; output order follows `texts`.
    pub fn encode_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, LinkError> {
        let base = self.base_embed(texts)?;
        Ok(base.par_iter().map(|e| self.head.apply(e)).collect())
    }
}

/// Batch loss and gradient w.r.t. head parameters.
///
/// Pair k links `docs[k]` with `props[k]`. Each document scores all `K`
/// properties of the batch; `excluded[k]` lists candidate indices l ≠ k that
/// are themselves positives of document k and are left out of its softmax.
/// Loss is the batch mean of −log p(c_k | x_k).
pub fn batch_loss_and_grad(
    params: &[f64],
    docs: &[&[f64]],
    props: &[&[f64]],
    excluded: &[Vec<usize>],
) -> (f64, Vec<f64>) {
    let k = docs.len();
    let d_in = docs[0].len();
    let d_out = params.len() / (d_in + 1);
    let u: Vec<Vec<f64>> = docs.iter().map(|e| affine_tanh(params, e)).collect();
    let v: Vec<Vec<f64>> = props.iter().map(|e| affine_tanh(params, e)).collect();

    let mut loss = 0.0;
    // g[r][l] = dL/dS_rl
    let mut g = vec![vec![0.0; k]; k];
    for r in 0..k {
        let scores: Vec<Option<f64>> = (0..k)
            .map(|l| {
                if l != r && excluded[r].contains(&l) {
                    None
                } else {
                    Some(dot(&u[r], &v[l]))
                }
            })
            .collect();
        let max = scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().flatten().map(|s| (s - max).exp()).sum();
        let pos = scores[r].expect("positive is always scored");
        loss += max + z.ln() - pos;
        for (l, s) in scores.iter().enumerate() {
            if let Some(s) = s {
                g[r][l] = ((s - max).exp() / z - if l == r { 1.0 } else { 0.0 }) / k as f64;
            }
        }
    }
    loss /= k as f64;

    let mut grad = vec![0.0; params.len()];
    let (ga, gb) = grad.split_at_mut(d_out * d_in);
    let mut backprop = |out: &[f64], input: &[f64], upstream: &[f64]| {
        for o in 0..d_out {
            let da = upstream[o] * (1.0 - out[o] * out[o]);
            if da == 0.0 {
                continue;
            }
            gb[o] += da;
            let row = &mut ga[o * d_in..(o + 1) * d_in];
            for (w, x) in row.iter_mut().zip(input) {
                *w += da * x;
            }
        }
    };
    for r in 0..k {
        let mut du = vec![0.0; d_out];
        for l in 0..k {
            if g[r][l] != 0.0 {
                axpy(&mut du, g[r][l], &v[l]);
            }
        }
        backprop(&u[r], docs[r], &du);
    }
    for l in 0..k {
        let mut dv = vec![0.0; d_out];
        for r in 0..k {
            if g[r][l] != 0.0 {
                axpy(&mut dv, g[r][l], &u[r]);
            }
        }
        backprop(&v[l], props[l], &dv);
    }
    (loss, grad)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 3,
            lr: 1e-3,
            seed: 17,
        }
    }
}

/// Resolved positive pairs as (document index, property index) into the
/// supplied embedding tables.
#[derive(Debug, Clone)]
pub struct PairSet {
    pub pairs: Vec<(usize, usize)>,
    positives: HashSet<(usize, usize)>,
}

impl PairSet {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        let positives = pairs.iter().cloned().collect();
        Self { pairs, positives }
    }

    pub fn is_positive(&self, doc: usize, prop: usize) -> bool {
        self.positives.contains(&(doc, prop))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Candidates of each row that are other positives of that row's document.
    pub fn exclusions(&self, batch: &[(usize, usize)]) -> Vec<Vec<usize>> {
        batch
            .iter()
            .enumerate()
            .map(|(r, &(doc, _))| {
                batch
                    .iter()
                    .enumerate()
                    .filter(|&(l, &(_, prop))| l != r && self.is_positive(doc, prop))
                    .map(|(l, _)| l)
                    .collect()
            })
            .collect()
    }
}

/// Trains the head on precomputed base embeddings. Returns the mean batch
/// loss of each epoch.
pub fn train_head(
    head: &mut Head,
    doc_emb: &[Vec<f64>],
    prop_emb: &[Vec<f64>],
    pairs: &PairSet,
    config: &TrainConfig,
) -> Result<Vec<f64>, LinkError> {
    if pairs.is_empty() {
        return Err(LinkError::NoPositives);
    }
    if config.batch_size < 2 {
        return Err(LinkError::Config("batch size must be at least 2".into()));
    }
    if config.batch_size > pairs.len() {
        return Err(LinkError::BatchTooLarge {
            batch: config.batch_size,
            positives: pairs.len(),
        });
    }
    let params = match head {
        Head::AffineTanh { params, .. } => params,
        Head::Identity => return Err(LinkError::Config("identity head has no parameters".into())),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Adam::new(params.len(), config.lr);
    let mut order = pairs.pairs.clone();
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let docs: Vec<&[f64]> = batch.iter().map(|&(d, _)| doc_emb[d].as_slice()).collect();
            let props: Vec<&[f64]> = batch.iter().map(|&(_, p)| prop_emb[p].as_slice()).collect();
            let excluded = pairs.exclusions(batch);
            let (loss, grad) = batch_loss_and_grad(params, &docs, &props, &excluded);
            if !loss.is_finite() {
                return Err(LinkError::NonFinite("training loss".into()));
            }
            opt.step(params, &grad);
            total += loss;
            batches += 1;
        }
        trace.push(total / batches.max(1) as f64);
    }
    Ok(trace)
}

/// Trains `encoder` on the pool's positive (document, property) links,
/// using in-batch negatives. Documents absent from `corpus` are ignored.
pub fn train_encoder(
    pool: &PropertyPool,
    corpus: &Corpus,
    encoder: &mut Encoder,
    config: &TrainConfig,
) -> Result<Vec<f64>, LinkError> {
    if pool.positives().is_empty() {
        return Err(LinkError::NoPositives);
    }
    let doc_index: HashMap<&str, usize> = corpus.ids().enumerate().map(|(i, id)| (id, i)).collect();
    let pairs: Vec<(usize, usize)> = pool
        .positives()
        .iter()
        .filter_map(|(doc, pid)| doc_index.get(doc.as_str()).map(|&d| (d, *pid as usize)))
        .collect();
    if pairs.is_empty() {
        return Err(LinkError::NoPositives);
    }
    let doc_texts: Vec<&str> = corpus.iter().map(|d| d.text.as_str()).collect();
    let prop_texts: Vec<&str> = pool.texts().collect();
    let doc_emb = encoder.base_embed(&doc_texts)?;
    let prop_emb = encoder.base_embed(&prop_texts)?;
    if matches!(encoder.head, Head::Identity) {
        encoder.head = Head::affine_tanh(encoder.base.dim(), encoder.base.dim(), config.seed);
    }
    train_head(&mut encoder.head, &doc_emb, &prop_emb, &PairSet::new(pairs), config)
}
