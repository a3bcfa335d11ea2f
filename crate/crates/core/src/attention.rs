//! Single-layer attention denoisers and their training gradients.
//!
//! The context X (n x L) supplies keys and values; the query attends but is
//! never attended to, which the API enforces structurally by keeping it out
//! of X. Three score functions share the value path `W_PV X g`:
//!
//! * `Linear`: g = (1/L) X^T W_KQ q, so the output is
//!   (1/L) W_PV X X^T W_KQ q.
//! * `Softmax`: g = softmax(X^T W_KQ q), no 1/L factor.
//! * `GaussianKernel`: g = softmax of -(1/2) ||W_K x_t - W_Q q||^2. On
//!   constant-norm tokens with W_K^T W_Q = W_KQ this equals `Softmax` because
//!   the squared-norm terms shift every logit equally.
//!
//! Gradients of the batch-mean squared error are analytic (cost O(L n + n^2)
//! per prompt) and are checked against central finite differences in tests.

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{ensure_finite_2d, kahan_mean, softmax_stable, KahanSum};
use crate::tasks::{Prompt, TaskCase, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    Linear,
    Softmax,
    GaussianKernel,
}

/// Weight matrices for one attention layer. All matrices are n x n.
#[derive(Debug, Clone)]
pub enum AttentionWeights {
    Linear { w_kq: Array2<f64>, w_pv: Array2<f64> },
    Softmax { w_kq: Array2<f64>, w_pv: Array2<f64> },
    GaussianKernel { w_k: Array2<f64>, w_q: Array2<f64>, w_pv: Array2<f64> },
}

fn check_square(name: &str, m: ArrayView2<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::dims(format!(
            "{name} must be {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    ensure_finite_2d(name, m)
}

impl AttentionWeights {
    pub fn linear(w_kq: Array2<f64>, w_pv: Array2<f64>) -> Result<Self> {
        let n = w_kq.nrows();
        check_square("w_kq", w_kq.view(), n)?;
        check_square("w_pv", w_pv.view(), n)?;
        Ok(AttentionWeights::Linear { w_kq, w_pv })
    }

    pub fn softmax(w_kq: Array2<f64>, w_pv: Array2<f64>) -> Result<Self> {
        let n = w_kq.nrows();
        check_square("w_kq", w_kq.view(), n)?;
        check_square("w_pv", w_pv.view(), n)?;
        Ok(AttentionWeights::Softmax { w_kq, w_pv })
    }

    pub fn gaussian_kernel(w_k: Array2<f64>, w_q: Array2<f64>, w_pv: Array2<f64>) -> Result<Self> {
        let n = w_k.nrows();
        check_square("w_k", w_k.view(), n)?;
        check_square("w_q", w_q.view(), n)?;
        check_square("w_pv", w_pv.view(), n)?;
        Ok(AttentionWeights::GaussianKernel { w_k, w_q, w_pv })
    }

    /// W_PV = alpha I and W_KQ = beta I (for the kernel kind,
    /// W_K = W_Q = sqrt(beta) I, which needs beta >= 0).
    pub fn scaled_identity(kind: AttentionKind, n: usize, alpha: f64, beta: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        if !(alpha.is_finite() && beta.is_finite()) {
            return Err(Error::NonFinite(format!("alpha = {alpha}, beta = {beta}")));
        }
        let eye = Array2::<f64>::eye(n);
        match kind {
            AttentionKind::Linear => AttentionWeights::linear(&eye * beta, &eye * alpha),
            AttentionKind::Softmax => AttentionWeights::softmax(&eye * beta, &eye * alpha),
            AttentionKind::GaussianKernel => {
                if beta < 0.0 {
                    return Err(Error::invalid(
                        "kernel attention needs beta >= 0 for W_K = W_Q = sqrt(beta) I",
                    ));
                }
                let root = &eye * beta.sqrt();
                AttentionWeights::gaussian_kernel(root.clone(), root, &eye * alpha)
            }
        }
    }

    pub fn kind(&self) -> AttentionKind {
        match self {
            AttentionWeights::Linear { .. } => AttentionKind::Linear,
            AttentionWeights::Softmax { .. } => AttentionKind::Softmax,
            AttentionWeights::GaussianKernel { .. } => AttentionKind::GaussianKernel,
        }
    }

    pub fn dim(&self) -> usize {
        self.w_pv().nrows()
    }

    pub fn w_pv(&self) -> &Array2<f64> {
        match self {
            AttentionWeights::Linear { w_pv, .. }
            | AttentionWeights::Softmax { w_pv, .. }
            | AttentionWeights::GaussianKernel { w_pv, .. } => w_pv,
        }
    }

    /// Key-query product matrix; kernel attention keeps factors instead.
    pub fn w_kq(&self) -> Result<&Array2<f64>> {
        match self {
            AttentionWeights::Linear { w_kq, .. } | AttentionWeights::Softmax { w_kq, .. } => {
                Ok(w_kq)
            }
            AttentionWeights::GaussianKernel { .. } => Err(Error::invalid(
                "kernel attention has separate W_K and W_Q factors",
            )),
        }
    }

    pub fn kernel_factors(&self) -> Result<(&Array2<f64>, &Array2<f64>)> {
        match self {
            AttentionWeights::GaussianKernel { w_k, w_q, .. } => Ok((w_k, w_q)),
            _ => Err(Error::invalid("not kernel attention")),
        }
    }
}

fn check_prompt(w: &AttentionWeights, prompt: &Prompt) -> Result<()> {
    if prompt.is_empty() {
        return Err(Error::invalid("prompt has an empty context"));
    }
    if prompt.dim() != w.dim() || prompt.query.len() != w.dim() {
        return Err(Error::dims(format!(
            "weights are {0}x{0}, prompt dim is {1}",
            w.dim(),
            prompt.dim()
        )));
    }
    Ok(())
}

/// (1/L) W_PV X X^T W_KQ q.
pub fn forward_linear(w: &AttentionWeights, prompt: &Prompt) -> Result<Array1<f64>> {
    let (w_kq, w_pv) = match w {
        AttentionWeights::Linear { w_kq, w_pv } => (w_kq, w_pv),
        _ => return Err(Error::invalid("forward_linear needs Linear weights")),
    };
    check_prompt(w, prompt)?;
    let len = prompt.len() as f64;
    let scores = prompt.context.t().dot(&w_kq.dot(&prompt.query));
    Ok(w_pv.dot(&prompt.context.dot(&scores)) / len)
}

/// W_PV X softmax(X^T W_KQ q).
pub fn forward_softmax(w: &AttentionWeights, prompt: &Prompt) -> Result<Array1<f64>> {
    let (w_kq, w_pv) = match w {
        AttentionWeights::Softmax { w_kq, w_pv } => (w_kq, w_pv),
        _ => return Err(Error::invalid("forward_softmax needs Softmax weights")),
    };
    check_prompt(w, prompt)?;
    let logits = prompt.context.t().dot(&w_kq.dot(&prompt.query));
    let g = softmax_stable(logits.view())?;
    Ok(w_pv.dot(&prompt.context.dot(&g)))
}

/// W_PV X softmax_t( -(1/2) ||W_K x_t - W_Q q||^2 ).
pub fn forward_gaussian(w: &AttentionWeights, prompt: &Prompt) -> Result<Array1<f64>> {
    let (w_k, w_q, w_pv) = match w {
        AttentionWeights::GaussianKernel { w_k, w_q, w_pv } => (w_k, w_q, w_pv),
        _ => return Err(Error::invalid("forward_gaussian needs GaussianKernel weights")),
    };
    check_prompt(w, prompt)?;
    let keys = w_k.dot(&prompt.context);
    let qv = w_q.dot(&prompt.query);
    let logits = Array1::from_iter((0..prompt.len()).map(|t| {
        let col = keys.column(t);
        -0.5 * col
            .iter()
            .zip(qv.iter())
            .map(|(k, q)| (k - q) * (k - q))
            .sum::<f64>()
    }));
    let g = softmax_stable(logits.view())?;
    Ok(w_pv.dot(&prompt.context.dot(&g)))
}

/// Dispatch on the weight kind.
pub fn forward(w: &AttentionWeights, prompt: &Prompt) -> Result<Array1<f64>> {
    match w.kind() {
        AttentionKind::Linear => forward_linear(w, prompt),
        AttentionKind::Softmax => forward_softmax(w, prompt),
        AttentionKind::GaussianKernel => forward_gaussian(w, prompt),
    }
}

fn grad_linear_prompt(
    w_kq: &Array2<f64>,
    w_pv: &Array2<f64>,
    prompt: &Prompt,
) -> (Array2<f64>, Array2<f64>, f64) {
    let x = &prompt.context;
    let len = prompt.len() as f64;
    let scores = x.t().dot(&w_kq.dot(&prompt.query));
    let m = x.dot(&scores) / len;
    let f = w_pv.dot(&m);
    let r = &f - &prompt.target;
    let loss = r.dot(&r);

    // d loss / d W_PV = 2 r m^T.
    let g_pv = outer(&(&r * 2.0), &m);
    // d loss / d W_KQ = (2/L) X X^T W_PV^T r q^T.
    let v = x.t().dot(&w_pv.t().dot(&r));
    let g_kq = outer(&(x.dot(&v) * (2.0 / len)), &prompt.query);
    (g_kq, g_pv, loss)
}

fn grad_softmax_prompt(
    w_kq: &Array2<f64>,
    w_pv: &Array2<f64>,
    prompt: &Prompt,
) -> Result<(Array2<f64>, Array2<f64>, f64)> {
    let x = &prompt.context;
    let logits = x.t().dot(&w_kq.dot(&prompt.query));
    let g = softmax_stable(logits.view())?;
    let a = x.dot(&g);
    let f = w_pv.dot(&a);
    let r = &f - &prompt.target;
    let loss = r.dot(&r);

    let g_pv = outer(&(&r * 2.0), &a);
    // Chain rule through the softmax Jacobian diag(g) - g g^T.
    let q = x.t().dot(&w_pv.t().dot(&(&r * 2.0)));
    let gq = g.dot(&q);
    let h = Array1::from_iter(g.iter().zip(q.iter()).map(|(gi, qi)| gi * (qi - gq)));
    let g_kq = outer(&x.dot(&h), &prompt.query);
    Ok((g_kq, g_pv, loss))
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let (n, m) = (a.len(), b.len());
    let mut out = Array2::<f64>::zeros((n, m));
    for i in 0..n {
        let ai = a[i];
        for j in 0..m {
            out[(i, j)] = ai * b[j];
        }
    }
    out
}

/// Analytic gradients of the batch-mean squared error. Returns
/// (d/dW_KQ, d/dW_PV, loss). Only the trainable kinds are supported.
pub fn grad_mse(w: &AttentionWeights, batch: &[&Prompt]) -> Result<(Array2<f64>, Array2<f64>, f64)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    for p in batch {
        check_prompt(w, p)?;
    }
    let per_prompt: Vec<(Array2<f64>, Array2<f64>, f64)> = match w {
        AttentionWeights::Linear { w_kq, w_pv } => batch
            .par_iter()
            .map(|p| grad_linear_prompt(w_kq, w_pv, p))
            .collect(),
        AttentionWeights::Softmax { w_kq, w_pv } => batch
            .par_iter()
            .map(|p| grad_softmax_prompt(w_kq, w_pv, p))
            .collect::<Result<_>>()?,
        AttentionWeights::GaussianKernel { .. } => {
            return Err(Error::invalid("kernel attention is evaluation-only"))
        }
    };
    let n = w.dim();
    let scale = 1.0 / batch.len() as f64;
    let mut g_kq = Array2::<f64>::zeros((n, n));
    let mut g_pv = Array2::<f64>::zeros((n, n));
    let mut loss = KahanSum::new();
    for (kq, pv, l) in &per_prompt {
        g_kq.scaled_add(scale, kq);
        g_pv.scaled_add(scale, pv);
        loss.add(*l);
    }
    Ok((g_kq, g_pv, loss.value() * scale))
}

/// Batch-mean squared error of any attention kind (no gradients).
pub fn mse(w: &AttentionWeights, prompts: &[Prompt]) -> Result<f64> {
    if prompts.is_empty() {
        return Err(Error::invalid("no prompts to evaluate"));
    }
    let sq: Vec<f64> = prompts
        .par_iter()
        .map(|p| {
            let f = forward(w, p)?;
            let r = &f - &p.target;
            Ok(r.dot(&r))
        })
        .collect::<Result<_>>()?;
    kahan_mean(&sq)
}

/// First-order expansion of softmax attention at small key-query scale:
/// with weights (W_PV / eps, eps W_KQ), the output approaches
/// W_PV [ (1/eps) xbar + (1/L) X s ], s_t = (x_t - xbar)^T W_KQ q,
/// with O(eps) error.
pub fn softmax_small_beta(
    w: &AttentionWeights,
    prompt: &Prompt,
    eps: f64,
) -> Result<Array1<f64>> {
    let (w_kq, w_pv) = match w {
        AttentionWeights::Softmax { w_kq, w_pv } => (w_kq, w_pv),
        _ => return Err(Error::invalid("small-beta expansion needs Softmax weights")),
    };
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid("eps must be positive"));
    }
    check_prompt(w, prompt)?;
    let x = &prompt.context;
    let len = prompt.len() as f64;
    let xbar = x.sum_axis(ndarray::Axis(1)) / len;
    let z = x.t().dot(&w_kq.dot(&prompt.query));
    let zbar = z.sum() / len;
    let s = z - zbar;
    let inner = &(&xbar / eps) + &(x.dot(&s) / len);
    Ok(w_pv.dot(&inner))
}

/// Diagonal means and pooled off-diagonal RMS of the two weight matrices,
/// summarizing how close a trained layer is to scaled identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledIdentitySummary {
    /// Mean diagonal of W_PV.
    pub alpha: f64,
    /// Mean diagonal of W_KQ.
    pub beta: f64,
    /// Root mean square of off-diagonal entries pooled over both matrices.
    pub offdiag_rms: f64,
}

pub fn diag_mean(m: ArrayView2<f64>) -> f64 {
    let n = m.nrows().min(m.ncols());
    (0..n).map(|i| m[(i, i)]).sum::<f64>() / n as f64
}

pub fn offdiag_rms(m: ArrayView2<f64>) -> f64 {
    let (r, c) = m.dim();
    let count = r * c - r.min(c);
    if count == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..r {
        for j in 0..c {
            if i != j {
                acc += m[(i, j)] * m[(i, j)];
            }
        }
    }
    (acc / count as f64).sqrt()
}

pub fn summarize(w: &AttentionWeights) -> Result<ScaledIdentitySummary> {
    let w_kq = w.w_kq()?;
    let w_pv = w.w_pv();
    let n = w_pv.nrows();
    let off_count = 2 * (n * n - n);
    let pooled = if off_count == 0 {
        0.0
    } else {
        let a = offdiag_rms(w_kq.view());
        let b = offdiag_rms(w_pv.view());
        (((a * a + b * b) * (n * n - n) as f64) / off_count as f64).sqrt()
    };
    Ok(ScaledIdentitySummary {
        alpha: diag_mean(w_pv.view()),
        beta: diag_mean(w_kq.view()),
        offdiag_rms: pooled,
    })
}

/// Scaled-identity weights that realize the matching Bayes rule in the
/// large-L limit: for subspace tokens, linear attention with
/// alpha beta = 1 / (sigma0^2 + sigma_z^2); for spherical and mixture tokens,
/// softmax (or kernel) attention with alpha = 1, beta = 1 / sigma_z^2.
pub fn ideal_weights(spec: &TaskSpec, kind: AttentionKind) -> Result<AttentionWeights> {
    spec.validate()?;
    match (spec.case, kind) {
        (TaskCase::LinearSubspace, AttentionKind::Linear) => {
            let beta = 1.0 / (spec.sigma0_sq + spec.sigma_z_sq);
            AttentionWeights::scaled_identity(kind, spec.n, 1.0, beta)
        }
        (TaskCase::Sphere | TaskCase::GaussianMixture, AttentionKind::Softmax)
        | (TaskCase::Sphere | TaskCase::GaussianMixture, AttentionKind::GaussianKernel) => {
            AttentionWeights::scaled_identity(kind, spec.n, 1.0, 1.0 / spec.sigma_z_sq)
        }
        _ => Err(Error::invalid(format!(
            "no large-L optimal scaled identity for {:?} with {:?} attention",
            kind, spec.case
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{max_abs_diff_1d, normal_matrix, RngStream};
    use crate::tasks::{sample_prompt, sample_task, TaskSpec};
    use ndarray::Axis;

    fn fig3_linear() -> TaskSpec {
        TaskSpec::linear_subspace(16, 8, 2.0, 1.0)
    }

    fn small_weights(kind: AttentionKind, n: usize, seed: u64, scale: f64) -> AttentionWeights {
        let mut rng = RngStream::new(seed).rng();
        let a = normal_matrix(&mut rng, n, n) * scale;
        let b = normal_matrix(&mut rng, n, n) * scale;
        match kind {
            AttentionKind::Linear => AttentionWeights::linear(a, b).unwrap(),
            AttentionKind::Softmax => AttentionWeights::softmax(a, b).unwrap(),
            AttentionKind::GaussianKernel => {
                let c = normal_matrix(&mut rng, n, n) * scale;
                AttentionWeights::gaussian_kernel(a, b, c).unwrap()
            }
        }
    }

    fn small_prompt(seed: u64, n: usize, len: usize) -> Prompt {
        let spec = TaskSpec::linear_subspace(n, n.div_ceil(2), 2.0, 1.0);
        let task = sample_task(&spec, RngStream::new(seed)).unwrap();
        sample_prompt(&task, len, RngStream::new(seed ^ 0x5bd1)).unwrap()
    }

    #[test]
    fn linear_forward_matches_masked_full_prompt_form() {
        // Oracle: append the query as column L+1 and apply the mask
        // diag(1, ..., 1, 0), i.e. (1/L) W_PV X_full M X_full^T W_KQ q.
        let n = 6;
        let prompt = small_prompt(30, n, 9);
        let w = small_weights(AttentionKind::Linear, n, 31, 0.4);
        let got = forward_linear(&w, &prompt).unwrap();

        let len = prompt.len();
        let mut full = Array2::<f64>::zeros((n, len + 1));
        for t in 0..len {
            full.column_mut(t).assign(&prompt.context.column(t));
        }
        full.column_mut(len).assign(&prompt.query);
        let mut mask = Array2::<f64>::eye(len + 1);
        mask[(len, len)] = 0.0;
        let scores = mask.dot(&full.t().dot(&w.w_kq().unwrap().dot(&prompt.query)));
        let want = w.w_pv().dot(&full.dot(&scores)) / len as f64;
        assert!(max_abs_diff_1d(got.view(), want.view()) < 1e-12);
    }

    #[test]
    fn softmax_forward_matches_masked_full_prompt_form() {
        // Oracle: softmax over L+1 logits with the query slot forced to -inf.
        let n = 6;
        let prompt = small_prompt(32, n, 9);
        let w = small_weights(AttentionKind::Softmax, n, 33, 0.4);
        let got = forward_softmax(&w, &prompt).unwrap();

        let len = prompt.len();
        let logits_ctx = prompt
            .context
            .t()
            .dot(&w.w_kq().unwrap().dot(&prompt.query));
        let query_logit = prompt.query.dot(&w.w_kq().unwrap().dot(&prompt.query));
        let m = logits_ctx
            .iter()
            .copied()
            .fold(query_logit, f64::max);
        let mut weights: Vec<f64> = logits_ctx.iter().map(|z| (z - m).exp()).collect();
        let denom: f64 = weights.iter().sum(); // masked slot contributes zero
        weights.iter_mut().for_each(|x| *x /= denom);
        let mut want = Array1::<f64>::zeros(n);
        for t in 0..len {
            want.scaled_add(weights[t], &prompt.context.column(t));
        }
        let want = w.w_pv().dot(&want);
        assert!(max_abs_diff_1d(got.view(), want.view()) < 1e-12);
    }

    #[test]
    fn gaussian_kernel_equals_softmax_on_fixed_norm_tokens() {
        let spec = TaskSpec::sphere(12, 5, 1.3, 0.4);
        let task = sample_task(&spec, RngStream::new(34)).unwrap();
        let beta = 1.0 / spec.sigma_z_sq;
        let soft = AttentionWeights::scaled_identity(AttentionKind::Softmax, 12, 1.0, beta).unwrap();
        let kern =
            AttentionWeights::scaled_identity(AttentionKind::GaussianKernel, 12, 1.0, beta)
                .unwrap();
        for i in 0..50 {
            let prompt = sample_prompt(&task, 24, RngStream::new(35).substream(i)).unwrap();
            let a = forward_softmax(&soft, &prompt).unwrap();
            let b = forward_gaussian(&kern, &prompt).unwrap();
            assert!(
                max_abs_diff_1d(a.view(), b.view()) < 1e-12,
                "kernel and softmax disagree on fixed-norm tokens"
            );
        }
    }

    #[test]
    fn linear_forward_is_invariant_under_joint_sign_flip() {
        let n = 8;
        let prompt = small_prompt(36, n, 12);
        let w = small_weights(AttentionKind::Linear, n, 37, 0.5);
        let flipped = AttentionWeights::linear(
            w.w_kq().unwrap() * -1.0,
            w.w_pv() * -1.0,
        )
        .unwrap();
        let a = forward_linear(&w, &prompt).unwrap();
        let b = forward_linear(&flipped, &prompt).unwrap();
        assert!(max_abs_diff_1d(a.view(), b.view()) < 1e-14);
    }

    #[test]
    fn zero_key_query_gives_plain_context_average_under_softmax() {
        let n = 5;
        let prompt = small_prompt(38, n, 7);
        let w = AttentionWeights::softmax(Array2::zeros((n, n)), Array2::eye(n) * 2.0).unwrap();
        let got = forward_softmax(&w, &prompt).unwrap();
        let want = prompt.context.sum_axis(Axis(1)) * (2.0 / prompt.len() as f64);
        assert!(max_abs_diff_1d(got.view(), want.view()) < 1e-14);
    }

    fn numeric_grad(
        w: &AttentionWeights,
        batch: &[&Prompt],
        which: usize, // 0 = w_kq, 1 = w_pv
        i: usize,
        j: usize,
        h: f64,
    ) -> f64 {
        let perturb = |delta: f64| -> f64 {
            let (mut kq, mut pv) = (
                w.w_kq().unwrap().clone(),
                w.w_pv().clone(),
            );
            if which == 0 {
                kq[(i, j)] += delta;
            } else {
                pv[(i, j)] += delta;
            }
            let wp = match w.kind() {
                AttentionKind::Linear => AttentionWeights::linear(kq, pv).unwrap(),
                AttentionKind::Softmax => AttentionWeights::softmax(kq, pv).unwrap(),
                AttentionKind::GaussianKernel => unreachable!(),
            };
            grad_mse(&wp, batch).unwrap().2
        };
        (perturb(h) - perturb(-h)) / (2.0 * h)
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let n = 4;
        for kind in [AttentionKind::Linear, AttentionKind::Softmax] {
            for trial in 0..20 {
                let seed = 40 + trial;
                let w = small_weights(kind, n, seed, 0.5);
                let prompts: Vec<Prompt> =
                    (0..3).map(|k| small_prompt(seed * 100 + k, n, 6)).collect();
                let batch: Vec<&Prompt> = prompts.iter().collect();
                let (g_kq, g_pv, _) = grad_mse(&w, &batch).unwrap();
                for (which, analytic) in [(0usize, &g_kq), (1usize, &g_pv)] {
                    for i in 0..n {
                        for j in 0..n {
                            let fd = numeric_grad(&w, &batch, which, i, j, 1e-5);
                            let a = analytic[(i, j)];
                            let denom = a.abs().max(fd.abs()).max(1e-6);
                            assert!(
                                (a - fd).abs() / denom < 1e-5,
                                "{kind:?} matrix {which} entry ({i},{j}): analytic {a}, fd {fd}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn perfect_prediction_has_zero_gradients() {
        // With W_PV = 0 the output is 0; make the target 0 too, so r = 0 and
        // both gradients vanish identically.
        let n = 5;
        let mut prompt = small_prompt(41, n, 6);
        prompt.target = Array1::zeros(n);
        let w = AttentionWeights::softmax(
            normal_matrix(&mut RngStream::new(42).rng(), n, n),
            Array2::zeros((n, n)),
        )
        .unwrap();
        let (g_kq, g_pv, loss) = grad_mse(&w, &[&prompt]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g_kq.iter().all(|x| *x == 0.0));
        assert!(g_pv.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn batch_gradient_is_the_mean_of_per_prompt_gradients() {
        let n = 4;
        let prompts: Vec<Prompt> = (0..3).map(|k| small_prompt(43 + k, n, 5)).collect();
        let w = small_weights(AttentionKind::Linear, n, 44, 0.6);
        let batch: Vec<&Prompt> = prompts.iter().collect();
        let (g_kq, _, loss) = grad_mse(&w, &batch).unwrap();
        let mut want = Array2::<f64>::zeros((n, n));
        let mut want_loss = 0.0;
        for p in &prompts {
            let (kq, _, l) = grad_mse(&w, &[p]).unwrap();
            want.scaled_add(1.0 / 3.0, &kq);
            want_loss += l / 3.0;
        }
        assert!(
            g_kq.iter()
                .zip(want.iter())
                .all(|(a, b)| (a - b).abs() < 1e-12)
        );
        assert!((loss - want_loss).abs() < 1e-12);
    }

    #[test]
    fn small_beta_expansion_error_halves_with_eps() {
        let n = 8;
        let w = small_weights(AttentionKind::Softmax, n, 45, 0.3);
        let mut ratios = Vec::new();
        for trial in 0..10 {
            let prompt = small_prompt(46 + trial, n, 10);
            let err = |eps: f64| -> f64 {
                let (w_kq, w_pv) = (w.w_kq().unwrap(), w.w_pv());
                let scaled = AttentionWeights::softmax(w_kq * eps, w_pv / eps).unwrap();
                let full = forward_softmax(&scaled, &prompt).unwrap();
                let approx = softmax_small_beta(&w, &prompt, eps).unwrap();
                let d = &full - &approx;
                d.dot(&d).sqrt()
            };
            let e1 = err(1e-3);
            let e2 = err(5e-4);
            ratios.push(e1 / e2);
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!(
            (1.6..=2.6).contains(&mean),
            "halving eps changed the error by {mean}, expected about 2"
        );
    }

    #[test]
    fn ideal_softmax_approaches_bayes_with_longer_contexts() {
        for spec in [
            TaskSpec::sphere(12, 3, 1.0, 0.5),
            TaskSpec::gaussian_mixture(12, 4, 1.0, 0.05, 0.5),
        ] {
            let w = ideal_weights(&spec, AttentionKind::Softmax).unwrap();
            let mut errs = Vec::new();
            for len in [50usize, 200, 800, 3200] {
                let mut acc = 0.0;
                for trial in 0..30 {
                    let s = RngStream::new(47).substream(trial);
                    let task = sample_task(&spec, s.substream(0)).unwrap();
                    let prompt = sample_prompt(&task, len, s.substream(1)).unwrap();
                    let f = forward_softmax(&w, &prompt).unwrap();
                    let bayes = crate::baselines::predict(
                        crate::baselines::BaselineKind::applicable(spec.case)[0],
                        &task,
                        &prompt,
                    )
                    .unwrap();
                    let d = &f - &bayes;
                    acc += d.dot(&d).sqrt();
                }
                errs.push(acc / 30.0);
            }
            for pair in errs.windows(2) {
                assert!(
                    pair[1] < pair[0],
                    "{:?}: gap to Bayes did not shrink: {errs:?}",
                    spec.case
                );
            }
        }
    }

    #[test]
    fn summary_reads_scaled_identities_exactly() {
        let w = AttentionWeights::scaled_identity(AttentionKind::Softmax, 6, 3.0, 0.25).unwrap();
        let s = summarize(&w).unwrap();
        assert_eq!(s.alpha, 3.0);
        assert_eq!(s.beta, 0.25);
        assert_eq!(s.offdiag_rms, 0.0);
    }

    #[test]
    fn summary_pools_offdiagonal_energy() {
        let n = 3;
        let mut kq = Array2::<f64>::eye(n);
        kq[(0, 1)] = 0.3;
        let mut pv = Array2::<f64>::eye(n);
        pv[(2, 0)] = -0.4;
        let w = AttentionWeights::softmax(kq, pv).unwrap();
        let s = summarize(&w).unwrap();
        let want = ((0.3f64 * 0.3 + 0.4 * 0.4) / 12.0).sqrt();
        assert!((s.offdiag_rms - want).abs() < 1e-15);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let n = 4;
        let w = small_weights(AttentionKind::Linear, n, 48, 0.5);
        let empty = Prompt {
            context: Array2::zeros((n, 0)),
            query: Array1::zeros(n),
            target: Array1::zeros(n),
        };
        assert!(forward_linear(&w, &empty).is_err());
        let wrong_dim = small_prompt(49, 6, 5);
        assert!(forward_linear(&w, &wrong_dim).is_err());
        let soft = small_weights(AttentionKind::Softmax, n, 50, 0.5);
        assert!(forward_linear(&soft, &small_prompt(51, n, 5)).is_err());
        assert!(forward_softmax(&w, &small_prompt(51, n, 5)).is_err());
        assert!(grad_mse(&w, &[]).is_err());
        let kern = small_weights(AttentionKind::GaussianKernel, n, 52, 0.5);
        let p = small_prompt(53, n, 5);
        assert!(grad_mse(&kern, &[&p]).is_err());
        assert!(
            AttentionWeights::scaled_identity(AttentionKind::GaussianKernel, 4, 1.0, -1.0)
                .is_err()
        );
        assert!(AttentionWeights::linear(Array2::zeros((3, 4)), Array2::zeros((4, 4))).is_err());
        assert!(summarize(&kern).is_err());
    }

    #[test]
    fn ideal_weight_table_rejects_mismatches() {
        assert!(ideal_weights(&fig3_linear(), AttentionKind::Linear).is_ok());
        assert!(ideal_weights(&fig3_linear(), AttentionKind::Softmax).is_err());
        let sphere = TaskSpec::sphere(8, 2, 1.0, 0.1);
        assert!(ideal_weights(&sphere, AttentionKind::Softmax).is_ok());
        assert!(ideal_weights(&sphere, AttentionKind::GaussianKernel).is_ok());
        assert!(ideal_weights(&sphere, AttentionKind::Linear).is_err());
        let mix = TaskSpec::gaussian_mixture(8, 3, 1.0, 0.1, 0.5);
        assert!(ideal_weights(&mix, AttentionKind::Softmax).is_ok());
        assert!(ideal_weights(&mix, AttentionKind::Linear).is_err());
    }

    #[test]
    fn unused_query_column_never_contaminates_the_linear_output() {
        // The query enters only through W_KQ q; scaling the query's component
        // along directions orthogonal to all context columns changes scores
        // but the value path stays inside span(context columns).
        let n = 5;
        let prompt = small_prompt(54, n, 3);
        let w = small_weights(AttentionKind::Linear, n, 55, 0.5);
        let out = forward_linear(&w, &prompt).unwrap();
        // Output must lie in W_PV * span(context).
        let mut basis = Vec::new();
        for t in 0..prompt.len() {
            basis.push(w.w_pv().dot(&prompt.context.column(t).to_owned()));
        }
        // Solve least squares by projecting onto the (small) basis via normal
        // equations with a Gram inverse.
        let m = basis.len();
        let mut gram = Array2::<f64>::zeros((m, m));
        let mut rhs = Array1::<f64>::zeros(m);
        for i in 0..m {
            rhs[i] = basis[i].dot(&out);
            for j in 0..m {
                gram[(i, j)] = basis[i].dot(&basis[j]);
            }
        }
        let sol = crate::numerics::invert(gram.view()).unwrap().dot(&rhs);
        let mut recon = Array1::<f64>::zeros(n);
        for i in 0..m {
            recon.scaled_add(sol[i], &basis[i]);
        }
        assert!(max_abs_diff_1d(recon.view(), out.view()) < 1e-8);
    }

    #[test]
    fn mse_agrees_with_grad_mse_loss() {
        let n = 6;
        let prompts: Vec<Prompt> = (0..4).map(|k| small_prompt(56 + k, n, 8)).collect();
        let w = small_weights(AttentionKind::Softmax, n, 57, 0.4);
        let batch: Vec<&Prompt> = prompts.iter().collect();
        let (_, _, loss) = grad_mse(&w, &batch).unwrap();
        let direct = mse(&w, &prompts).unwrap();
        assert!((loss - direct).abs() < 1e-12);
    }
}
