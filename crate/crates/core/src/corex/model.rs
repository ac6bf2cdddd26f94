//! Modular linear latent factor model.
//!
//! Latents are `Z = W·c + ε` with `ε ~ N(0, η²)` independent per factor. All
//! expectations are closed-form full-data moments of the inputs, so the loss
//! is a deterministic function of `W`:
//!
//! ```text
//! G = E[z cᵀ] = W S            S = E[c cᵀ],  s_i = S_ii
//! Q = E[z zᵀ] = W S Wᵀ + η² I  q_j = Q_jj
//! D_ij = q_j s_i − G_ji²
//! r_i  = Σ_j G_ji² / D_ij
//! b_ij = s_i G_ji / (D_ij (1 + r_i))          ν_i = Σ_j b_ij z_j
//! e_i  = E[(c_i − ν_i)²] = s_i − 2 Σ_j b_ij G_ji + b_iᵀ Q b_i
//! loss = Σ_i ½ log(e_i + ε) + Σ_j ½ log(q_j + ε)
//! ```
//!
//! Fitting anneals: each stage replaces `S` with `(1 − ε²) S + ε² I`, the
//! moments of `c` mixed with independent unit noise, and ε shrinks to 0.
//!
//! `ν_i` is the posterior mean of `c_i` under `p(c_i | z) ∝ p(c_i) Π_j p(z_j | c_i)`
//! with every factor jointly Gaussian with `c_i`.

use log::warn;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::CorexError;

pub const LOG_EPS: f64 = 1e-8;
pub const DEFAULT_NOISE_VAR: f64 = 1.0;
pub const INIT_SCALE: f64 = 0.01;
const CHUNK: usize = 64;
const GRAM_MAX_COLS: usize = 4096;
/// Noise levels ε per annealing stage; the last stage fits the data itself.
pub const ANNEAL_SCHEDULE: [f64; 7] = [0.6, 0.36, 0.216, 0.1296, 0.07776, 0.046656, 0.0];

#[derive(Debug, Clone, PartialEq)]
pub struct CorexModel {
    weights: Array2<f64>,
    noise_var: f64,
    loss_trace: Vec<f64>,
    seed: u64,
}

impl CorexModel {
    pub fn from_parts(
        weights: Array2<f64>,
        noise_var: f64,
        loss_trace: Vec<f64>,
        seed: u64,
    ) -> Result<Self, CorexError> {
        if weights.nrows() == 0 {
            return Err(CorexError::Shape("model needs at least one factor".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(CorexError::NonFinite("model weights".into()));
        }
        if !(noise_var > 0.0) {
            return Err(CorexError::Shape(format!(
                "noise variance {noise_var} must be positive"
            )));
        }
        Ok(Self {
            weights,
            noise_var,
            loss_trace,
            seed,
        })
    }

    /// `m × P` loadings.
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn num_factors(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_properties(&self) -> usize {
        self.weights.ncols()
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Z = C·Wᵀ for already-gaussianized rows (noise-free).
    pub fn project(&self, gaussianized: ArrayView2<'_, f64>) -> Result<Array2<f64>, CorexError> {
        if gaussianized.ncols() != self.num_properties() {
            return Err(CorexError::ColumnMismatch {
                expected: self.num_properties(),
                found: gaussianized.ncols(),
            });
        }
        Ok(gaussianized.dot(&self.weights.t()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub factors: usize,
    pub iters: usize,
    pub lr: f64,
    pub seed: u64,
    pub noise_var: f64,
    /// Spread `iters` over [`ANNEAL_SCHEDULE`] instead of fitting at ε = 0 only.
    pub anneal: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            factors: 50,
            iters: 5000,
            lr: 1e-2,
            seed: 17,
            noise_var: DEFAULT_NOISE_VAR,
            anneal: true,
        }
    }
}

/// Data-side moments reused by every loss evaluation.
pub struct Moments<'a> {
    data: ArrayView2<'a, f64>,
    /// s_i = E[c_i²]
    second: Array1<f64>,
    /// S = XᵀX/N when it is smaller than the data itself.
    gram: Option<Array2<f64>>,
    noise_var: f64,
    /// ε² of the current annealing stage.
    mix: f64,
}

impl<'a> Moments<'a> {
    pub fn new(data: ArrayView2<'a, f64>, noise_var: f64) -> Self {
        let n = data.nrows() as f64;
        let second = data.map_axis(Axis(0), |col| col.iter().map(|v| v * v).sum::<f64>() / n);
        let (rows, cols) = data.dim();
        let gram = (cols <= rows && cols <= GRAM_MAX_COLS).then(|| data.t().dot(&data) / n);
        Self {
            data,
            second,
            gram,
            noise_var,
            mix: 0.0,
        }
    }

    /// Moments of `sqrt(1 − ε²) c + ε u` with `u` independent unit noise.
    pub fn with_anneal(mut self, eps: f64) -> Self {
        self.mix = eps * eps;
        self
    }

    fn second(&self, i: usize, mix: f64) -> f64 {
        (1.0 - mix) * self.second[i] + mix
    }

    /// G·S for any m × P matrix G.
    fn times_gram(&self, g: &Array2<f64>) -> Array2<f64> {
        let gs = match &self.gram {
            Some(s) => g.dot(s),
            None => g.dot(&self.data.t()).dot(&self.data) / self.data.nrows() as f64,
        };
        if self.mix == 0.0 {
            gs
        } else {
            gs * (1.0 - self.mix) + &(g * self.mix)
        }
    }

    /// (W S, W S Wᵀ) of the data itself.
    fn raw_moments(&self, w: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        match &self.gram {
            Some(s) => {
                let g = w.dot(s);
                let q = g.dot(&w.t());
                (g, q)
            }
            None => {
                let n = self.data.nrows() as f64;
                let a = self.data.dot(&w.t()); // N × m
                (a.t().dot(&self.data) / n, a.t().dot(&a) / n)
            }
        }
    }

    /// (G, Q) at noise mix ε², from the raw moments.
    fn blend(&self, w: &Array2<f64>, raw: &(Array2<f64>, Array2<f64>), mix: f64) -> (Array2<f64>, Array2<f64>) {
        let (g0, q0) = raw;
        let (g, mut q) = if mix == 0.0 {
            (g0.clone(), q0.clone())
        } else {
            (g0 * (1.0 - mix) + &(w * mix), q0 * (1.0 - mix) + &(w.dot(&w.t()) * mix))
        };
        q.diag_mut().mapv_inplace(|v| v + self.noise_var);
        (g, q)
    }

    /// (G = W S, Q = W S Wᵀ + η² I) at the current stage.
    fn latent_moments(&self, w: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        self.blend(w, &self.raw_moments(w), self.mix)
    }

    /// (loss, per-property residual variances e_i, per-factor q_j).
    pub fn loss_terms(&self, w: &Array2<f64>) -> (f64, Vec<f64>, Vec<f64>) {
        let (g, q) = self.latent_moments(w);
        self.terms(&g, &q, self.mix)
    }

    fn terms(&self, g: &Array2<f64>, q: &Array2<f64>, mix: f64) -> (f64, Vec<f64>, Vec<f64>) {
        let (m, p) = g.dim();
        let qd: Vec<f64> = (0..m).map(|j| q[[j, j]]).collect();
        let resid: Vec<f64> = (0..p)
            .into_par_iter()
            .map(|i| {
                let s = self.second(i, mix);
                let gi: Vec<f64> = (0..m).map(|j| g[[j, i]]).collect();
                let d: Vec<f64> = (0..m).map(|j| qd[j] * s - gi[j] * gi[j]).collect();
                let r: f64 = (0..m).map(|j| gi[j] * gi[j] / d[j]).sum();
                let b: Vec<f64> = (0..m).map(|j| s * gi[j] / (d[j] * (1.0 + r))).collect();
                let mut e = s;
                for j in 0..m {
                    e -= 2.0 * b[j] * gi[j];
                    for k in 0..m {
                        e += b[j] * b[k] * q[[j, k]];
                    }
                }
                e
            })
            .collect();
        let loss = resid.iter().map(|e| 0.5 * (e + LOG_EPS).ln()).sum::<f64>()
            + qd.iter().map(|v| 0.5 * (v + LOG_EPS).ln()).sum::<f64>();
        (loss, resid, qd)
    }

    pub fn loss(&self, w: &Array2<f64>) -> f64 {
        self.loss_terms(w).0
    }

    /// Loss and its analytic gradient with respect to `W`.
    pub fn loss_and_grad(&self, w: &Array2<f64>) -> (f64, Array2<f64>) {
        let (g, q) = self.latent_moments(w);
        self.grad_from(w, &g, &q)
    }

    /// Stage loss, its gradient, and the noise-free loss at the same `W`.
    fn annealed_step(&self, w: &Array2<f64>) -> (f64, Array2<f64>, f64) {
        let raw = self.raw_moments(w);
        let (g, q) = self.blend(w, &raw, self.mix);
        let (loss, grad) = self.grad_from(w, &g, &q);
        if self.mix == 0.0 {
            return (loss, grad, loss);
        }
        let (g0, q0) = self.blend(w, &raw, 0.0);
        (loss, grad, self.terms(&g0, &q0, 0.0).0)
    }

    fn grad_from(&self, w: &Array2<f64>, g: &Array2<f64>, q: &Array2<f64>) -> (f64, Array2<f64>) {
        let m = w.nrows();
        let p = w.ncols();
        let qd: Vec<f64> = (0..m).map(|j| q[[j, j]]).collect();

        struct Partial {
            loss: f64,
            dq: Array2<f64>,
            dg: Vec<(usize, Vec<f64>)>,
        }

        // Per-column work in fixed-size chunks, then an ordered reduction, so
        // results do not depend on the thread count.
        let chunks: Vec<Partial> = (0..p)
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|cols| {
                let mut part = Partial {
                    loss: 0.0,
                    dq: Array2::zeros((m, m)),
                    dg: Vec::with_capacity(cols.len()),
                };
                for &i in cols {
                    let s = self.second(i, self.mix);
                    let gi: Vec<f64> = (0..m).map(|j| g[[j, i]]).collect();
                    let d: Vec<f64> = (0..m).map(|j| qd[j] * s - gi[j] * gi[j]).collect();
                    let r: f64 = (0..m).map(|j| gi[j] * gi[j] / d[j]).sum();
                    let opr = 1.0 + r;
                    let b: Vec<f64> = (0..m).map(|j| s * gi[j] / (d[j] * opr)).collect();
                    let qb: Vec<f64> = (0..m).map(|j| (0..m).map(|k| q[[j, k]] * b[k]).sum()).collect();
                    let mut e = s;
                    for j in 0..m {
                        e += -2.0 * b[j] * gi[j] + b[j] * qb[j];
                    }
                    let weight = 0.5 / (e + LOG_EPS);
                    part.loss += 0.5 * (e + LOG_EPS).ln();

                    // de/db_j
                    let beta: Vec<f64> = (0..m).map(|j| -2.0 * gi[j] + 2.0 * qb[j]).collect();
                    let lambda_r: f64 = (0..m).map(|j| -beta[j] * b[j] / opr).sum();
                    let mut dgi = vec![0.0; m];
                    for j in 0..m {
                        let dd = d[j] * d[j];
                        let db_dg = s / (d[j] * opr) + 2.0 * s * gi[j] * gi[j] / (dd * opr);
                        let dr_dg = 2.0 * gi[j] * qd[j] * s / dd;
                        dgi[j] = weight * (-2.0 * b[j] + beta[j] * db_dg + lambda_r * dr_dg);
                        let db_dq = -s * s * gi[j] / (dd * opr);
                        let dr_dq = -gi[j] * gi[j] * s / dd;
                        part.dq[[j, j]] += weight * (beta[j] * db_dq + lambda_r * dr_dq);
                        for k in 0..m {
                            part.dq[[j, k]] += weight * b[j] * b[k];
                        }
                    }
                    part.dg.push((i, dgi));
                }
                part
            })
            .collect();

        let mut loss = 0.0;
        let mut dq = Array2::<f64>::zeros((m, m));
        let mut dg = Array2::<f64>::zeros((m, p));
        for part in chunks {
            loss += part.loss;
            dq += &part.dq;
            for (i, col) in part.dg {
                for j in 0..m {
                    dg[[j, i]] = col[j];
                }
            }
        }
        for j in 0..m {
            loss += 0.5 * (qd[j] + LOG_EPS).ln();
            dq[[j, j]] += 0.5 / (qd[j] + LOG_EPS);
        }
        // dL/dW = (dL/dG + 2·dL/dQ·W)·S with S = XᵀX/N and dL/dQ symmetric.
        let mvec = dg + &(dq.dot(w) * 2.0);
        let grad = self.times_gram(&mvec);
        (loss, grad)
    }
}

/// Fits `W` (m × P) to gaussianized data by fixed-step gradient descent on the
/// closed-form loss.
/// The trace holds the noise-free loss before each step and after the last,
/// whatever noise level the step itself optimized.
pub fn fit(c_gauss: ArrayView2<'_, f64>, config: &FitConfig) -> Result<CorexModel, CorexError> {
    let (n, p) = c_gauss.dim();
    if config.factors == 0 {
        return Err(CorexError::Shape("need at least one factor".into()));
    }
    if config.factors > p {
        return Err(CorexError::TooManyFactors {
            factors: config.factors,
            properties: p,
        });
    }
    if n < 3 {
        return Err(CorexError::TooFewRows { rows: n, needed: 3 });
    }
    if c_gauss.iter().any(|v| !v.is_finite()) {
        return Err(CorexError::NonFinite("fit input".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, INIT_SCALE).expect("valid sigma");
    let mut w = Array2::from_shape_simple_fn((config.factors, p), || normal.sample(&mut rng));
    let schedule: &[f64] = if config.anneal { &ANNEAL_SCHEDULE } else { &[0.0] };
    let mut moments = Moments::new(c_gauss, config.noise_var);
    let mut trace = Vec::with_capacity(config.iters + 1);
    for (stage, &eps) in schedule.iter().enumerate() {
        // even split, remainder to the last (noise-free) stage
        let mut steps = config.iters / schedule.len();
        if stage + 1 == schedule.len() {
            steps = config.iters - steps * stage;
        }
        moments = moments.with_anneal(eps);
        for _ in 0..steps {
            let (loss, grad, clean) = moments.annealed_step(&w);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                trace.push(clean);
                return Err(CorexError::Diverged {
                    iteration: trace.len() - 1,
                    trace,
                });
            }
            trace.push(clean);
            w.scaled_add(-config.lr, &grad);
        }
    }
    let final_loss = moments.with_anneal(0.0).loss(&w);
    trace.push(final_loss);
    if !final_loss.is_finite() {
        return Err(CorexError::Diverged {
            iteration: config.iters,
            trace,
        });
    }
    if trace.first().is_some_and(|&first| final_loss > first) {
        warn!("corex loss rose from {} to {final_loss}", trace[0]);
    }
    CorexModel::from_parts(w, config.noise_var, trace, config.seed)
}
