//! Modality adapter: projects frozen image-encoder features into the
//! text-embedding space with one single-head cross-attention block, and
//! trains that projection against a frozen language-model stub with a
//! teacher-forced next-token objective.
//!
//! Everything is 64-bit and hand-derived so the analytic gradients can
//! be verified against central finite differences to tight tolerances.
//! The language model never trains here — only the adapter parameters
//! (latent queries and the four projection matrices) move.

pub mod matrix;
mod persist;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use matrix::Mat;
pub use persist::{load_adapter, load_toy_dataset, save_adapter, ToyExample};

/// Parameter init range (uniform, both signs).
pub const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
    #[error("text token sequence must be non-empty")]
    EmptyText,
    #[error("invalid adapter config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at step {step}: loss {loss}")]
    DivergenceDetected { step: usize, loss: f64 },
    #[error("I/O failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
}

/// Deployment-scale versus desk-scale latent budgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeProfile {
    /// Latent count must lie in [64, 256].
    Full,
    /// Latent count may be as small as 4 — keeps tests hand-checkable.
    #[default]
    Test,
}

/// Dimensions of one adapter instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterConfig {
    /// Number of learned latent queries (modality tokens produced).
    pub n_latents: usize,
    /// Image-encoder feature width.
    pub d_img: usize,
    /// Text-embedding width of the language model.
    pub d_text: usize,
    /// Image feature count (patches) expected from the encoder.
    pub n_patches: usize,
    /// Vocabulary size of the language model.
    pub vocab: usize,
}

impl AdapterConfig {
    pub fn validate(&self, profile: SizeProfile) -> Result<(), AdapterError> {
        for (name, v) in [
            ("n_latents", self.n_latents),
            ("d_img", self.d_img),
            ("d_text", self.d_text),
            ("n_patches", self.n_patches),
            ("vocab", self.vocab),
        ] {
            if v == 0 {
                return Err(AdapterError::InvalidConfig(format!(
                    "{name} must be positive"
                )));
            }
        }
        let bounds = match profile {
            SizeProfile::Full => 64..=256,
            SizeProfile::Test => 4..=usize::MAX,
        };
        if !bounds.contains(&self.n_latents) {
            return Err(AdapterError::InvalidConfig(format!(
                "n_latents {} outside {:?} bounds for the {profile:?} profile",
                self.n_latents,
                (bounds.start(), bounds.end()),
            )));
        }
        Ok(())
    }
}

/// Trainable adapter parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterParams {
    /// Learned latent queries, n_latents × d_img.
    pub h_latents: Mat,
    /// Query projection, d_img × d_img.
    pub w_q: Mat,
    /// Key projection, d_img × d_img.
    pub w_k: Mat,
    /// Value projection, d_img × d_img.
    pub w_v: Mat,
    /// Output projection into text space, d_img × d_text.
    pub w_out: Mat,
}

/// Same shapes as [`AdapterParams`]; holds ∂loss/∂θ.
pub type AdapterGrads = AdapterParams;

impl AdapterParams {
    /// Seeded uniform(−0.05, 0.05) init, filled matrix by matrix in
    /// declaration order, row-major within each matrix.
    pub fn init_seeded(config: &AdapterConfig, seed: u64) -> AdapterParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |rows: usize, cols: usize| {
            let mut m = Mat::zeros(rows, cols);
            for v in m.data_mut() {
                *v = rng.random_range(-INIT_RANGE..INIT_RANGE);
            }
            m
        };
        AdapterParams {
            h_latents: fill(config.n_latents, config.d_img),
            w_q: fill(config.d_img, config.d_img),
            w_k: fill(config.d_img, config.d_img),
            w_v: fill(config.d_img, config.d_img),
            w_out: fill(config.d_img, config.d_text),
        }
    }

    pub fn zeros_like(&self) -> AdapterParams {
        AdapterParams {
            h_latents: Mat::zeros(self.h_latents.rows(), self.h_latents.cols()),
            w_q: Mat::zeros(self.w_q.rows(), self.w_q.cols()),
            w_k: Mat::zeros(self.w_k.rows(), self.w_k.cols()),
            w_v: Mat::zeros(self.w_v.rows(), self.w_v.cols()),
            w_out: Mat::zeros(self.w_out.rows(), self.w_out.cols()),
        }
    }

    pub fn matrices(&self) -> [(&'static str, &Mat); 5] {
        [
            ("h_latents", &self.h_latents),
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_out", &self.w_out),
        ]
    }

    pub fn matrices_mut(&mut self) -> [(&'static str, &mut Mat); 5] {
        let AdapterParams {
            h_latents,
            w_q,
            w_k,
            w_v,
            w_out,
        } = self;
        [
            ("h_latents", h_latents),
            ("w_q", w_q),
            ("w_k", w_k),
            ("w_v", w_v),
            ("w_out", w_out),
        ]
    }

    fn n_latents(&self) -> usize {
        self.h_latents.rows()
    }

    fn d_img(&self) -> usize {
        self.h_latents.cols()
    }

    fn d_text(&self) -> usize {
        self.w_out.cols()
    }

    pub fn validate_shapes(&self) -> Result<(), AdapterError> {
        let d = self.d_img();
        for (name, m) in self.matrices() {
            let expected = match name {
                "h_latents" => (self.n_latents(), d),
                "w_out" => (d, self.d_text()),
                _ => (d, d),
            };
            if (m.rows(), m.cols()) != expected {
                return Err(AdapterError::ShapeMismatch(format!(
                    "{name} is {}x{}, expected {}x{}",
                    m.rows(),
                    m.cols(),
                    expected.0,
                    expected.1
                )));
            }
            if !m.is_finite() {
                return Err(AdapterError::NonFiniteInput(format!(
                    "{name} has non-finite entries"
                )));
            }
        }
        Ok(())
    }
}

/// Frozen language-model stand-in: an embedding table and an output
/// projection that never change during adapter training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenLmStub {
    /// vocab × d_text.
    pub embed: Mat,
    /// d_text × vocab.
    pub w_lm_out: Mat,
}

impl FrozenLmStub {
    /// Seeded uniform(−1, 1) weights. The stub is a fixture, not a
    /// trainee, so its scale is chosen for healthy gradient flow rather
    /// than matched to the adapter's init range.
    pub fn seeded(vocab: usize, d_text: usize, seed: u64) -> FrozenLmStub {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |rows: usize, cols: usize| {
            let mut m = Mat::zeros(rows, cols);
            for v in m.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            m
        };
        FrozenLmStub {
            embed: fill(vocab, d_text),
            w_lm_out: fill(d_text, vocab),
        }
    }

    /// Stub whose output projection is all zeros: every prediction is
    /// exactly uniform, so NLL is exactly L·ln(vocab).
    pub fn zero_output(vocab: usize, d_text: usize, seed: u64) -> FrozenLmStub {
        let mut stub = FrozenLmStub::seeded(vocab, d_text, seed);
        stub.w_lm_out = Mat::zeros(d_text, vocab);
        stub
    }

    pub fn vocab(&self) -> usize {
        self.embed.rows()
    }

    pub fn d_text(&self) -> usize {
        self.embed.cols()
    }
}

/// Frozen image-encoder output: n_patches × d_img features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedImage {
    pub features: Mat,
}

impl EncodedImage {
    pub fn new(features: Mat) -> Result<EncodedImage, AdapterError> {
        if !features.is_finite() {
            return Err(AdapterError::NonFiniteInput(
                "image features contain non-finite values".to_string(),
            ));
        }
        Ok(EncodedImage { features })
    }
}

/// Row-wise numerically stable softmax (max-subtracted).
fn softmax_rows(scores: &Mat) -> Mat {
    let mut out = scores.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// log(Σ exp(x)) with max subtraction.
fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max; // all -inf, or a NaN/inf poisoning the row
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Intermediate tensors of one projection forward pass, kept for the
/// backward pass.
struct ProjectTrace {
    attention: Mat, // m × n, rows sum to 1
    values: Mat,    // n × d_img (features · w_v)
    mixed: Mat,     // m × d_img (attention · values)
    queries: Mat,   // m × d_img
    keys: Mat,      // n × d_img
    tokens: Mat,    // m × d_text (the projection output)
}

fn project_trace(params: &AdapterParams, img: &EncodedImage) -> Result<ProjectTrace, AdapterError> {
    params.validate_shapes()?;
    let f = &img.features;
    if f.cols() != params.d_img() {
        return Err(AdapterError::ShapeMismatch(format!(
            "image features have width {}, adapter expects d_img {}",
            f.cols(),
            params.d_img()
        )));
    }
    if !f.is_finite() {
        return Err(AdapterError::NonFiniteInput(
            "image features contain non-finite values".to_string(),
        ));
    }
    let queries = params.h_latents.matmul(&params.w_q); // m × d_img
    let keys = f.matmul(&params.w_k); // n × d_img
    let values = f.matmul(&params.w_v); // n × d_img
    let scale = 1.0 / (params.d_img() as f64).sqrt();
    let mut scores = queries.matmul(&keys.transpose()); // m × n
    for v in scores.data_mut() {
        *v *= scale;
    }
    let attention = softmax_rows(&scores);
    let mixed = attention.matmul(&values); // m × d_img
    let tokens = mixed.matmul(&params.w_out); // m × d_text
    Ok(ProjectTrace {
        attention,
        values,
        mixed,
        queries,
        keys,
        tokens,
    })
}

/// Project image features into `n_latents` modality tokens in the text
/// embedding space: `softmax((H·W_q)(F·W_k)ᵀ/√d_img) · (F·W_v) · W_out`.
pub fn project(params: &AdapterParams, img: &EncodedImage) -> Result<Mat, AdapterError> {
    Ok(project_trace(params, img)?.tokens)
}

fn check_tokens(lm: &FrozenLmStub, token_ids: &[usize]) -> Result<(), AdapterError> {
    if token_ids.is_empty() {
        return Err(AdapterError::EmptyText);
    }
    for (i, &t) in token_ids.iter().enumerate() {
        if t >= lm.vocab() {
            return Err(AdapterError::ShapeMismatch(format!(
                "token id {t} at position {i} out of range for vocab {}",
                lm.vocab()
            )));
        }
    }
    Ok(())
}

/// Teacher-forced negative log-likelihood of `token_ids` under the
/// frozen stub, conditioned on the projected modality tokens.
///
/// Position `i` (0-based) predicts `token_ids[i]` from the mean of the
/// `n_latents` modality tokens plus the frozen embeddings of the first
/// `i` text tokens — so position 0 conditions on the image alone, and
/// the context vector at position `i` is a mean over `n_latents + i`
/// rows.
pub fn teacher_forced_nll(
    params: &AdapterParams,
    lm: &FrozenLmStub,
    img: &EncodedImage,
    token_ids: &[usize],
) -> Result<f64, AdapterError> {
    check_tokens(lm, token_ids)?;
    if lm.d_text() != params.d_text() {
        return Err(AdapterError::ShapeMismatch(format!(
            "stub d_text {} does not match adapter d_text {}",
            lm.d_text(),
            params.d_text()
        )));
    }
    let trace = project_trace(params, img)?;
    let m = params.n_latents();
    let d_text = params.d_text();

    let mut pooled_sum = vec![0.0; d_text]; // Σ modality tokens, then + prefix embeds
    for r in 0..m {
        for (acc, &v) in pooled_sum.iter_mut().zip(trace.tokens.row(r)) {
            *acc += v;
        }
    }
    let mut nll = 0.0;
    for (i, &target) in token_ids.iter().enumerate() {
        let denom = (m + i) as f64;
        let context: Vec<f64> = pooled_sum.iter().map(|&s| s / denom).collect();
        let mut logits = vec![0.0; lm.vocab()];
        for (d, &c) in context.iter().enumerate() {
            for (l, &w) in logits.iter_mut().zip(lm.w_lm_out.row(d)) {
                *l += c * w;
            }
        }
        nll += log_sum_exp(&logits) - logits[target];
        // Fold this token's frozen embedding into the running prefix sum.
        for (acc, &e) in pooled_sum.iter_mut().zip(lm.embed.row(target)) {
            *acc += e;
        }
    }
    Ok(nll)
}

/// NLL plus analytic gradients with respect to every adapter parameter.
pub fn nll_grad(
    params: &AdapterParams,
    lm: &FrozenLmStub,
    img: &EncodedImage,
    token_ids: &[usize],
) -> Result<(f64, AdapterGrads), AdapterError> {
    check_tokens(lm, token_ids)?;
    if lm.d_text() != params.d_text() {
        return Err(AdapterError::ShapeMismatch(format!(
            "stub d_text {} does not match adapter d_text {}",
            lm.d_text(),
            params.d_text()
        )));
    }
    let trace = project_trace(params, img)?;
    let m = params.n_latents();
    let d_text = params.d_text();
    let d_img = params.d_img();
    let f = &img.features;

    // Forward through the pooled stub, accumulating d(loss)/d(Σ tokens).
    let mut pooled_sum = vec![0.0; d_text];
    for r in 0..m {
        for (acc, &v) in pooled_sum.iter_mut().zip(trace.tokens.row(r)) {
            *acc += v;
        }
    }
    let mut nll = 0.0;
    let mut d_token_sum = vec![0.0; d_text];
    for (i, &target) in token_ids.iter().enumerate() {
        let denom = (m + i) as f64;
        let context: Vec<f64> = pooled_sum.iter().map(|&s| s / denom).collect();
        let mut logits = vec![0.0; lm.vocab()];
        for (d, &c) in context.iter().enumerate() {
            for (l, &w) in logits.iter_mut().zip(lm.w_lm_out.row(d)) {
                *l += c * w;
            }
        }
        let lse = log_sum_exp(&logits);
        nll += lse - logits[target];

        // d(loss_i)/d(logit_v) = softmax(logits)_v − [v == target]
        let mut d_logits: Vec<f64> = logits.iter().map(|&l| (l - lse).exp()).collect();
        d_logits[target] -= 1.0;
        // d(loss_i)/d(context) = W_lm_out · d_logits; contexts share the
        // token sum scaled by 1/denom.
        for (d, acc) in d_token_sum.iter_mut().enumerate() {
            let row = lm.w_lm_out.row(d);
            let dot: f64 = row.iter().zip(&d_logits).map(|(&w, &g)| w * g).sum();
            *acc += dot / denom;
        }
        for (acc, &e) in pooled_sum.iter_mut().zip(lm.embed.row(target)) {
            *acc += e;
        }
    }

    // Every modality-token row receives the same upstream gradient
    // because they enter only through their sum.
    let mut g_tokens = Mat::zeros(m, d_text);
    for r in 0..m {
        g_tokens.row_mut(r).copy_from_slice(&d_token_sum);
    }

    // tokens = mixed · w_out
    let d_w_out = trace.mixed.transpose().matmul(&g_tokens);
    let g_mixed = g_tokens.matmul(&params.w_out.transpose()); // m × d_img

    // mixed = attention · values
    let d_attention = g_mixed.matmul(&trace.values.transpose()); // m × n
    let g_values = trace.attention.transpose().matmul(&g_mixed); // n × d_img

    // values = features · w_v
    let d_w_v = f.transpose().matmul(&g_values);

    // attention = softmax_rows(scores):
    // dS_ij = A_ij (dA_ij − Σ_k dA_ik A_ik)
    let mut d_scores = Mat::zeros(d_attention.rows(), d_attention.cols());
    for r in 0..d_attention.rows() {
        let a_row = trace.attention.row(r);
        let da_row = d_attention.row(r);
        let inner: f64 = a_row.iter().zip(da_row).map(|(&a, &da)| a * da).sum();
        let out_row = d_scores.row_mut(r);
        for ((o, &a), &da) in out_row.iter_mut().zip(a_row).zip(da_row) {
            *o = a * (da - inner);
        }
    }
    let scale = 1.0 / (d_img as f64).sqrt();
    for v in d_scores.data_mut() {
        *v *= scale;
    }

    // scores·√d = queries · keysᵀ
    let d_queries = d_scores.matmul(&trace.keys); // m × d_img
    let d_keys = d_scores.transpose().matmul(&trace.queries); // n × d_img

    // queries = h_latents · w_q; keys = features · w_k
    let d_w_q = params.h_latents.transpose().matmul(&d_queries);
    let d_h = d_queries.matmul(&params.w_q.transpose());
    let d_w_k = f.transpose().matmul(&d_keys);

    Ok((
        nll,
        AdapterGrads {
            h_latents: d_h,
            w_q: d_w_q,
            w_k: d_w_k,
            w_v: d_w_v,
            w_out: d_w_out,
        },
    ))
}

/// Compare analytic gradients against central finite differences over
/// every adapter parameter; returns the maximum relative error
/// `|analytic − numeric| / max(1e-8, |numeric|)`.
pub fn grad_check(
    params: &AdapterParams,
    lm: &FrozenLmStub,
    img: &EncodedImage,
    token_ids: &[usize],
    h: f64,
) -> Result<f64, AdapterError> {
    if !h.is_finite() || h <= 0.0 {
        return Err(AdapterError::InvalidConfig(format!(
            "step size must be positive and finite, got {h}"
        )));
    }
    let (_, grads) = nll_grad(params, lm, img, token_ids)?;
    let mut max_rel = 0.0f64;
    for mat_idx in 0..5 {
        let n_entries = params.matrices()[mat_idx].1.data().len();
        for flat in 0..n_entries {
            let mut plus = params.clone();
            plus.matrices_mut()[mat_idx].1.data_mut()[flat] += h;
            let f_plus = teacher_forced_nll(&plus, lm, img, token_ids)?;
            let mut minus = params.clone();
            minus.matrices_mut()[mat_idx].1.data_mut()[flat] -= h;
            let f_minus = teacher_forced_nll(&minus, lm, img, token_ids)?;
            let numeric = (f_plus - f_minus) / (2.0 * h);
            let analytic = grads.matrices()[mat_idx].1.data()[flat];
            let rel = (analytic - numeric).abs() / numeric.abs().max(1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

/// Full-batch gradient descent on the adapter parameters only.
///
/// The loss is the mean NLL over the dataset. The trace records the loss
/// *before* each update, so it has exactly `steps` entries and
/// `trace[0]` is the initial loss. The stub is untouched by contract —
/// nothing here can write to it.
pub fn train_adapter(
    params: &AdapterParams,
    lm: &FrozenLmStub,
    dataset: &[(EncodedImage, Vec<usize>)],
    steps: usize,
    lr: f64,
) -> Result<(AdapterParams, Vec<f64>), AdapterError> {
    if dataset.is_empty() {
        return Err(AdapterError::InvalidConfig(
            "training dataset must be non-empty".to_string(),
        ));
    }
    if !lr.is_finite() || lr <= 0.0 {
        return Err(AdapterError::InvalidConfig(format!(
            "learning rate must be positive and finite, got {lr}"
        )));
    }
    let n = dataset.len() as f64;
    let mut current = params.clone();
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut total_loss = 0.0;
        let mut acc = current.zeros_like();
        for (img, token_ids) in dataset {
            let (loss, grads) = nll_grad(&current, lm, img, token_ids)?;
            total_loss += loss;
            for ((_, a), (_, g)) in acc.matrices_mut().into_iter().zip(grads.matrices()) {
                a.add_scaled(g, 1.0);
            }
        }
        let mean_loss = total_loss / n;
        trace.push(mean_loss);
        if !mean_loss.is_finite() {
            return Err(AdapterError::DivergenceDetected {
                step,
                loss: mean_loss,
            });
        }
        for ((_, p), (_, g)) in current.matrices_mut().into_iter().zip(acc.matrices()) {
            p.add_scaled(g, -lr / n);
        }
    }
    Ok((current, trace))
}
