//! Energy functions whose gradient descent reproduces attention updates.
//!
//! Two energies over the state s in R^n, both built from a fixed context
//! X (n x L):
//!
//! * `LogSumExp`: E(s) = ||s||^2 / (2 alpha) - (1/beta) log sum_t exp(beta x_t^T s).
//!   One factored descent step s <- (1 - gamma/alpha) s + gamma X softmax(beta X^T s)
//!   with gamma = alpha equals one softmax attention update with W_PV = alpha I,
//!   W_KQ = beta I.
//! * `NaiveSphericalHopfield`: E(s) = ||s||^2 / (2 gamma) - ||X^T s||^2 / (2 L).
//!   The analogous step at full length equals linear attention with
//!   alpha beta = gamma.
//!
//! The symmetry residual measures how far a softmax layer's update is from
//! any gradient field: the state Jacobian of attention is symmetric exactly
//! when W_PV ~ W_KQ^T up to the context-dependent factor.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::attention::AttentionWeights;
use crate::error::{Error, Result};
use crate::numerics::{ensure_finite_1d, ensure_finite_2d, log_sum_exp, softmax_stable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyKind {
    LogSumExp,
    NaiveSphericalHopfield,
}

/// An energy over states, parametrized by the context.
#[derive(Debug, Clone)]
pub struct EnergyModel {
    kind: EnergyKind,
    context: Array2<f64>,
    /// Quadratic coefficient: alpha for `LogSumExp`, gamma for the Hopfield
    /// variant.
    alpha: f64,
    /// Logit sharpness; unused by the Hopfield variant.
    beta: f64,
}

impl EnergyModel {
    pub fn log_sum_exp(context: Array2<f64>, alpha: f64, beta: f64) -> Result<Self> {
        if context.ncols() == 0 {
            return Err(Error::invalid("energy needs a nonempty context"));
        }
        ensure_finite_2d("context", context.view())?;
        if !(alpha > 0.0 && alpha.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid("log-sum-exp energy needs alpha > 0 and beta > 0"));
        }
        Ok(EnergyModel {
            kind: EnergyKind::LogSumExp,
            context,
            alpha,
            beta,
        })
    }

    pub fn naive_spherical_hopfield(context: Array2<f64>, gamma: f64) -> Result<Self> {
        if context.ncols() == 0 {
            return Err(Error::invalid("energy needs a nonempty context"));
        }
        ensure_finite_2d("context", context.view())?;
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid("spherical Hopfield energy needs gamma > 0"));
        }
        Ok(EnergyModel {
            kind: EnergyKind::NaiveSphericalHopfield,
            context,
            alpha: gamma,
            beta: 0.0,
        })
    }

    pub fn kind(&self) -> EnergyKind {
        self.kind
    }

    pub fn context(&self) -> ArrayView2<'_, f64> {
        self.context.view()
    }

    pub fn dim(&self) -> usize {
        self.context.nrows()
    }

    fn check_state(&self, s: ArrayView1<f64>) -> Result<()> {
        if s.len() != self.dim() {
            return Err(Error::dims(format!(
                "state has dim {}, context has dim {}",
                s.len(),
                self.dim()
            )));
        }
        ensure_finite_1d("state", s)
    }
}

pub fn energy(model: &EnergyModel, s: ArrayView1<f64>) -> Result<f64> {
    model.check_state(s)?;
    let sq = s.dot(&s);
    match model.kind {
        EnergyKind::LogSumExp => {
            let logits = model.context.t().dot(&s) * model.beta;
            Ok(sq / (2.0 * model.alpha) - log_sum_exp(logits.view())? / model.beta)
        }
        EnergyKind::NaiveSphericalHopfield => {
            let proj = model.context.t().dot(&s);
            Ok(sq / (2.0 * model.alpha) - proj.dot(&proj) / (2.0 * model.context.ncols() as f64))
        }
    }
}

pub fn energy_grad(model: &EnergyModel, s: ArrayView1<f64>) -> Result<Array1<f64>> {
    model.check_state(s)?;
    match model.kind {
        EnergyKind::LogSumExp => {
            let logits = model.context.t().dot(&s) * model.beta;
            let g = softmax_stable(logits.view())?;
            Ok(&s / model.alpha - &model.context.dot(&g))
        }
        EnergyKind::NaiveSphericalHopfield => {
            let proj = model.context.t().dot(&s);
            Ok(&s / model.alpha - &(model.context.dot(&proj) / model.context.ncols() as f64))
        }
    }
}

/// States and energies along a gradient descent run (steps + 1 entries each).
#[derive(Debug, Clone)]
pub struct DescentTrajectory {
    pub states: Vec<Array1<f64>>,
    pub energies: Vec<f64>,
}

/// Gradient descent with step size gamma, using the factored update
/// s <- (1 - gamma/alpha) s + gamma * (attraction term) so that gamma = alpha
/// reproduces one attention forward pass exactly rather than up to rounding
/// in s - gamma * grad.
pub fn descend(
    model: &EnergyModel,
    s0: ArrayView1<f64>,
    gamma: f64,
    steps: usize,
) -> Result<DescentTrajectory> {
    model.check_state(s0)?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("step size gamma must be positive"));
    }
    let mut states = Vec::with_capacity(steps + 1);
    let mut energies = Vec::with_capacity(steps + 1);
    let mut s = s0.to_owned();
    let keep = 1.0 - gamma / model.alpha;
    energies.push(energy(model, s.view())?);
    states.push(s.clone());
    for _ in 0..steps {
        let attract = match model.kind {
            EnergyKind::LogSumExp => {
                let logits = model.context.t().dot(&s) * model.beta;
                model.context.dot(&softmax_stable(logits.view())?)
            }
            EnergyKind::NaiveSphericalHopfield => {
                model.context.dot(&model.context.t().dot(&s)) / model.context.ncols() as f64
            }
        };
        s = &s * keep + &(attract * gamma);
        energies.push(energy(model, s.view())?);
        states.push(s.clone());
    }
    Ok(DescentTrajectory { states, energies })
}

/// Relative asymmetry ||J - J^T||_F / max(1, ||J||_F) of the state Jacobian
/// of softmax attention at state s. Zero means the update is locally a
/// gradient field.
pub fn jacobian_symmetry_residual(
    w: &AttentionWeights,
    context: ArrayView2<f64>,
    s: ArrayView1<f64>,
) -> Result<f64> {
    let (w_kq, w_pv) = match w {
        AttentionWeights::Softmax { w_kq, w_pv } => (w_kq, w_pv),
        _ => {
            return Err(Error::invalid(
                "symmetry residual is defined for softmax attention",
            ))
        }
    };
    if context.ncols() == 0 {
        return Err(Error::invalid("empty context"));
    }
    if s.len() != context.nrows() || w.dim() != context.nrows() {
        return Err(Error::dims(format!(
            "state dim {}, context dim {}, weights dim {}",
            s.len(),
            context.nrows(),
            w.dim()
        )));
    }
    ensure_finite_1d("state", s)?;
    let logits = context.t().dot(&w_kq.dot(&s));
    let g = softmax_stable(logits.view())?;
    // d(X g)/ds = X (diag(g) - g g^T) X^T W_KQ; wrap with W_PV on the left.
    let mut weighted = context.to_owned();
    for (t, mut col) in weighted.columns_mut().into_iter().enumerate() {
        col *= g[t];
    }
    let a = context.dot(&g);
    let mut core = weighted.dot(&context.t());
    let n = context.nrows();
    for i in 0..n {
        for j in 0..n {
            core[(i, j)] -= a[i] * a[j];
        }
    }
    let jac = w_pv.dot(&core.dot(w_kq));
    let mut asym_sq = 0.0;
    let mut norm_sq = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = jac[(i, j)] - jac[(j, i)];
            asym_sq += d * d;
            norm_sq += jac[(i, j)] * jac[(i, j)];
        }
    }
    Ok(asym_sq.sqrt() / norm_sq.sqrt().max(1.0))
}
