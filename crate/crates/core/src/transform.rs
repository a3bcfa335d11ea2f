//! Linear attention under a change of token coordinates.
//!
//! If prompts are observed through Y = A X, the weights
//! W_PV = alpha A^-1 and W_KQ = (A A^T)^-1 / (alpha (sigma0^2 + sigma_z^2))
//! make linear attention on the transformed prompt compute exactly the same
//! output as the scaled-identity optimum does on the untransformed prompt:
//! the alpha factors cancel and the forward pass reduces to pulling the
//! context and query back through A. Training on transformed prompts should
//! therefore recover these matrices up to the free scalar alpha, which the
//! recovery report estimates by least squares.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::attention::{AttentionKind, AttentionWeights};
use crate::error::{Error, Result};
use crate::tasks::{TaskSpec, TransformSpec};
use crate::training::{train_with_transform, TrainConfig, TrainResult};

/// Closed-form optimal linear-attention weights on transformed prompts.
#[derive(Debug, Clone)]
pub struct TransformedOptimum {
    pub w_pv: Array2<f64>,
    pub w_kq: Array2<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl TransformedOptimum {
    pub fn weights(&self) -> Result<AttentionWeights> {
        AttentionWeights::linear(self.w_kq.clone(), self.w_pv.clone())
    }
}

/// W_PV = alpha A^-1, W_KQ = beta (A A^T)^-1 with
/// beta = 1 / (alpha (sigma0^2 + sigma_z^2)). Any nonzero alpha gives the
/// same product; it parametrizes the scale split between the two matrices.
pub fn optimal_transformed_weights(
    t: &TransformSpec,
    sigma0_sq: f64,
    sigma_z_sq: f64,
    alpha: f64,
) -> Result<TransformedOptimum> {
    if !(alpha.is_finite() && alpha != 0.0) {
        return Err(Error::invalid("alpha must be finite and nonzero"));
    }
    if !(sigma0_sq >= 0.0 && sigma_z_sq > 0.0)
        || !sigma0_sq.is_finite()
        || !sigma_z_sq.is_finite()
    {
        return Err(Error::invalid("need sigma0_sq >= 0 and sigma_z_sq > 0"));
    }
    let beta = 1.0 / (alpha * (sigma0_sq + sigma_z_sq));
    let a_inv = t.a_inv();
    let w_pv = a_inv * alpha;
    let w_kq = a_inv.t().dot(a_inv) * beta;
    Ok(TransformedOptimum {
        w_pv,
        w_kq,
        alpha,
        beta,
    })
}

/// Subspace-token posterior mean computed from a transformed prompt:
/// (1 / ((sigma0^2 + sigma_z^2) L)) sum_t Y_t <A^-1 Y_t, A^-1 y~>.
/// `context` and `query` are in transformed coordinates; the result is too.
pub fn transformed_coords_estimate(
    context: ArrayView2<f64>,
    query: ArrayView1<f64>,
    t: &TransformSpec,
    sigma0_sq: f64,
    sigma_z_sq: f64,
) -> Result<Array1<f64>> {
    if context.ncols() == 0 {
        return Err(Error::invalid("empty context"));
    }
    if context.nrows() != t.dim() || query.len() != t.dim() {
        return Err(Error::dims(format!(
            "transform dim {}, context dim {}, query dim {}",
            t.dim(),
            context.nrows(),
            query.len()
        )));
    }
    if !(sigma0_sq >= 0.0 && sigma_z_sq > 0.0) {
        return Err(Error::invalid("need sigma0_sq >= 0 and sigma_z_sq > 0"));
    }
    let c = sigma0_sq + sigma_z_sq;
    let len = context.ncols() as f64;
    let z = t.a_inv().dot(&context);
    let v = t.a_inv().dot(&query);
    let scores = z.t().dot(&v);
    Ok(context.dot(&scores) / (c * len))
}

/// Training outcome on transformed prompts plus how well the learned
/// matrices match the closed-form optimum up to its free scalar.
#[derive(Debug, Clone)]
pub struct TransformTrainReport {
    pub result: TrainResult,
    /// Least-squares scale of W_PV against A^-1.
    pub alpha_fit: f64,
    /// Least-squares scale of W_KQ against (A A^T)^-1.
    pub beta_fit: f64,
    /// ||W_PV A / alpha_fit - I||_F.
    pub pv_recovery: f64,
    /// ||W_KQ A A^T / beta_fit - I||_F.
    pub kq_recovery: f64,
}

fn frobenius_inner(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Train linear attention on transformed prompts and report how closely the
/// learned weights recovered the transform inverses.
pub fn run_transform_training(
    spec: &TaskSpec,
    t: &TransformSpec,
    cfg: &TrainConfig,
) -> Result<TransformTrainReport> {
    let result = train_with_transform(spec, AttentionKind::Linear, cfg, Some(t))?;

    let a_inv = t.a_inv();
    let gram_inv = a_inv.t().dot(a_inv);
    let w_pv = result.weights.w_pv().clone();
    let w_kq = result.weights.w_kq()?.clone();

    let alpha_fit = frobenius_inner(&w_pv, a_inv) / frobenius_inner(a_inv, a_inv);
    let beta_fit = frobenius_inner(&w_kq, &gram_inv) / frobenius_inner(&gram_inv, &gram_inv);

    let eye = Array2::<f64>::eye(t.dim());
    let pv_recovery = frob(&(&w_pv.dot(t.a()) / alpha_fit - &eye));
    let gram = t.a().dot(&t.a().t());
    let kq_recovery = frob(&(&w_kq.dot(&gram) / beta_fit - &eye));

    Ok(TransformTrainReport {
        result,
        alpha_fit,
        beta_fit,
        pv_recovery,
        kq_recovery,
    })
}

fn frob(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}
