//! Closed-form optimal denoisers for each token distribution, plus reference
//! predictors to compare trained attention against.
//!
//! Each baseline is the posterior mean of the clean token given the query
//! under the matching task, so no predictor can beat it in mean squared
//! error. The empirical-projector variant replaces the true subspace
//! projector with the plug-in estimate built from the context.

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{bessel_ratio, kahan_mean, mean_and_stderr, softmax_stable};
use crate::tasks::{Prompt, Realization, TaskCase, TaskInstance, TaskSpec};

/// Reference predictors. `Zero` applies to every case; the others are tied to
/// one token distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Predicts the zero vector; MSE equals the clean token's second moment.
    Zero,
    /// Posterior mean for subspace Gaussian tokens: shrink the projected query.
    BayesLinear,
    /// Posterior mean for spherical tokens: Bessel-ratio shrinkage along the
    /// projected query direction.
    BayesSphere,
    /// Posterior mean for mixture tokens at the task's component variance.
    BayesMixtureGeneral,
    /// Mixture posterior mean in the zero-variance limit: softmax over centers.
    BayesMixtureZeroVar,
    /// Subspace rule with the projector estimated from the context.
    EmpiricalProjector,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Zero => "zero",
            BaselineKind::BayesLinear => "bayes_linear",
            BaselineKind::BayesSphere => "bayes_sphere",
            BaselineKind::BayesMixtureGeneral => "bayes_mixture_general",
            BaselineKind::BayesMixtureZeroVar => "bayes_mixture_zerovar",
            BaselineKind::EmpiricalProjector => "empirical_projector",
        }
    }

    /// Baselines meaningful for a given task case, most informative first.
    pub fn applicable(case: TaskCase) -> Vec<BaselineKind> {
        match case {
            TaskCase::LinearSubspace => vec![
                BaselineKind::BayesLinear,
                BaselineKind::EmpiricalProjector,
                BaselineKind::Zero,
            ],
            TaskCase::Sphere => vec![BaselineKind::BayesSphere, BaselineKind::Zero],
            TaskCase::GaussianMixture => vec![
                BaselineKind::BayesMixtureGeneral,
                BaselineKind::BayesMixtureZeroVar,
                BaselineKind::Zero,
            ],
        }
    }
}

fn require_case(task: &TaskInstance, case: TaskCase, what: &str) -> Result<()> {
    if task.spec.case != case {
        return Err(Error::invalid(format!(
            "{what} applies to {case:?} tasks, got {:?}",
            task.spec.case
        )));
    }
    Ok(())
}

/// Posterior mean for subspace Gaussian tokens:
/// sigma0^2 / (sigma0^2 + sigma_z^2) times the projected query.
pub fn bayes_linear(task: &TaskInstance, query: &Array1<f64>) -> Result<Array1<f64>> {
    require_case(task, TaskCase::LinearSubspace, "bayes_linear")?;
    let spec = &task.spec;
    if query.len() != spec.n {
        return Err(Error::dims(format!(
            "query has dim {}, task has n = {}",
            query.len(),
            spec.n
        )));
    }
    let b = task.basis().expect("linear task carries a basis");
    let shrink = spec.sigma0_sq / (spec.sigma0_sq + spec.sigma_z_sq);
    Ok(b.dot(&b.t().dot(query)) * shrink)
}

/// Exact MSE of [`bayes_linear`]: d sigma0^2 sigma_z^2 / (sigma0^2 + sigma_z^2).
pub fn bayes_linear_mse(spec: &TaskSpec) -> Result<f64> {
    if spec.case != TaskCase::LinearSubspace {
        return Err(Error::invalid("closed-form MSE only for subspace tokens"));
    }
    spec.validate()?;
    let c = spec.sigma0_sq + spec.sigma_z_sq;
    Ok(spec.d as f64 * spec.sigma0_sq * spec.sigma_z_sq / c)
}

/// Posterior mean for spherical tokens. A query with zero subspace component
/// carries no direction information; the posterior mean is then the subspace
/// average, which is zero (logged once per call since it usually signals a
/// degenerate setup).
pub fn bayes_sphere(task: &TaskInstance, query: &Array1<f64>) -> Result<Array1<f64>> {
    require_case(task, TaskCase::Sphere, "bayes_sphere")?;
    let spec = &task.spec;
    if query.len() != spec.n {
        return Err(Error::dims(format!(
            "query has dim {}, task has n = {}",
            query.len(),
            spec.n
        )));
    }
    let b = task.basis().expect("sphere task carries a basis");
    let coords = b.t().dot(query);
    let norm = coords.dot(&coords).sqrt();
    if norm == 0.0 {
        log::warn!("query orthogonal to the token subspace; posterior mean is zero");
        return Ok(Array1::zeros(spec.n));
    }
    let nu = (spec.d as f64 - 1.0) / 2.0;
    let kappa = spec.radius * norm / spec.sigma_z_sq;
    let ratio = bessel_ratio(nu, kappa)?;
    Ok(b.dot(&coords) * (ratio * spec.radius / norm))
}

fn mixture_posterior(
    centers: &Array2<f64>,
    weights: &[f64],
    query: &Array1<f64>,
    scale: f64,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let active: Vec<usize> = (0..weights.len()).filter(|&a| weights[a] > 0.0).collect();
    if active.is_empty() {
        return Err(Error::invalid("all mixture weights are zero"));
    }
    let logits = Array1::from_iter(
        active
            .iter()
            .map(|&a| weights[a].ln() + centers.row(a).dot(query) / scale),
    );
    let probs = softmax_stable(logits.view())?;
    let n = centers.ncols();
    let mut mean = Array1::<f64>::zeros(n);
    for (slot, &a) in active.iter().enumerate() {
        mean.scaled_add(probs[slot], &centers.row(a));
    }
    let mut full = Array1::<f64>::zeros(weights.len());
    for (slot, &a) in active.iter().enumerate() {
        full[a] = probs[slot];
    }
    Ok((mean, full))
}

/// Posterior mean for mixture tokens: shrink the query toward the
/// posterior-weighted average of the centers.
pub fn bayes_mixture(task: &TaskInstance, query: &Array1<f64>) -> Result<Array1<f64>> {
    require_case(task, TaskCase::GaussianMixture, "bayes_mixture")?;
    let spec = &task.spec;
    if query.len() != spec.n {
        return Err(Error::dims(format!(
            "query has dim {}, task has n = {}",
            query.len(),
            spec.n
        )));
    }
    let (centers, weights) = match &task.realization {
        Realization::Mixture { centers, weights } => (centers, weights.as_slice()),
        Realization::Basis(_) => unreachable!("mixture task carries centers"),
    };
    let c = spec.sigma0_sq + spec.sigma_z_sq;
    let (mean, _) = mixture_posterior(centers, weights, query, c)?;
    Ok(query * (spec.sigma0_sq / c) + &(mean * (spec.sigma_z_sq / c)))
}

/// Mixture posterior mean when components collapse onto their centers:
/// a softmax-weighted average of the centers with inverse-noise sharpness.
pub fn bayes_mixture_zerovar(task: &TaskInstance, query: &Array1<f64>) -> Result<Array1<f64>> {
    require_case(task, TaskCase::GaussianMixture, "bayes_mixture_zerovar")?;
    let spec = &task.spec;
    if query.len() != spec.n {
        return Err(Error::dims(format!(
            "query has dim {}, task has n = {}",
            query.len(),
            spec.n
        )));
    }
    let (centers, weights) = match &task.realization {
        Realization::Mixture { centers, weights } => (centers, weights.as_slice()),
        Realization::Basis(_) => unreachable!("mixture task carries centers"),
    };
    let (mean, _) = mixture_posterior(centers, weights, query, spec.sigma_z_sq)?;
    Ok(mean)
}

/// Plug-in projector (1 / (sigma0^2 L)) sum_t X_t X_t^T from the context.
pub fn empirical_projector(context: ArrayView2<f64>, sigma0_sq: f64) -> Result<Array2<f64>> {
    if !(sigma0_sq > 0.0 && sigma0_sq.is_finite()) {
        return Err(Error::invalid("empirical projector needs sigma0_sq > 0"));
    }
    let len = context.ncols();
    if len == 0 {
        return Err(Error::invalid("empirical projector needs a nonempty context"));
    }
    Ok(context.dot(&context.t()) / (sigma0_sq * len as f64))
}

/// Apply one baseline to one prompt.
pub fn predict(kind: BaselineKind, task: &TaskInstance, prompt: &Prompt) -> Result<Array1<f64>> {
    match kind {
        BaselineKind::Zero => Ok(Array1::zeros(prompt.dim())),
        BaselineKind::BayesLinear => bayes_linear(task, &prompt.query),
        BaselineKind::BayesSphere => bayes_sphere(task, &prompt.query),
        BaselineKind::BayesMixtureGeneral => bayes_mixture(task, &prompt.query),
        BaselineKind::BayesMixtureZeroVar => bayes_mixture_zerovar(task, &prompt.query),
        BaselineKind::EmpiricalProjector => {
            require_case(task, TaskCase::LinearSubspace, "empirical_projector")?;
            let spec = &task.spec;
            let proj = empirical_projector(prompt.context.view(), spec.sigma0_sq)?;
            let shrink = spec.sigma0_sq / (spec.sigma0_sq + spec.sigma_z_sq);
            Ok(proj.dot(&prompt.query) * shrink)
        }
    }
}

/// Mean squared error of a baseline over prompts sharing one task.
pub fn evaluate_baseline(
    kind: BaselineKind,
    task: &TaskInstance,
    prompts: &[Prompt],
) -> Result<f64> {
    if prompts.is_empty() {
        return Err(Error::invalid("no prompts to evaluate"));
    }
    let sq_errors: Vec<f64> = prompts
        .par_iter()
        .map(|p| {
            let f = predict(kind, task, p)?;
            let r = &f - &p.target;
            Ok(r.dot(&r))
        })
        .collect::<Result<_>>()?;
    kahan_mean(&sq_errors)
}

/// Mean squared error and its standard error over (task, prompt) pairs, i.e.
/// with task randomness included.
pub fn evaluate_baseline_ensemble(
    kind: BaselineKind,
    pairs: &[(TaskInstance, Prompt)],
) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::invalid("no prompts to evaluate"));
    }
    let sq_errors: Vec<f64> = pairs
        .par_iter()
        .map(|(task, p)| {
            let f = predict(kind, task, p)?;
            let r = &f - &p.target;
            Ok(r.dot(&r))
        })
        .collect::<Result<_>>()?;
    mean_and_stderr(&sq_errors)
}
