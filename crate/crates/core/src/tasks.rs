//! Token distributions and prompt sampling.
//!
//! A prompt consists of L clean tokens drawn i.i.d. from a task-specific
//! distribution over R^n, one more clean token held out as the target, and a
//! query equal to the target plus isotropic Gaussian noise of variance
//! sigma_z_sq per coordinate. Three distributions are supported:
//!
//! * `LinearSubspace`: N(0, sigma0_sq I_d) inside a uniformly random
//!   d-dimensional subspace.
//! * `Sphere`: uniform on the radius-R sphere inside a uniformly random
//!   (d+1)-dimensional subspace.
//! * `GaussianMixture`: k isotropic Gaussian components with variance
//!   sigma0_sq, centers drawn uniformly on the radius-R sphere in R^n.
//!
//! Sampling is deterministic per [`RngStream`]: a dataset derives one
//! substream per prompt, so generation can run in parallel and replays
//! bit-identically.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{
    ensure_finite_2d, invert, max_abs_diff_2d, normal_vector, random_orthonormal_basis,
    spectral_norm, RngStream, StreamRng,
};

/// Which token distribution a task uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskCase {
    LinearSubspace,
    Sphere,
    GaussianMixture,
}

/// Distribution-level description of a task family.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub case: TaskCase,
    /// Ambient dimension.
    pub n: usize,
    /// Subspace dimension (`LinearSubspace`) or sphere dimension (`Sphere`,
    /// which lives in a (d+1)-dimensional subspace). Unused for mixtures.
    pub d: usize,
    /// Number of mixture components. Unused outside `GaussianMixture`.
    pub k: usize,
    /// Sphere / center radius. Unused for `LinearSubspace`.
    pub radius: f64,
    /// Token variance per coordinate (subspace tokens, mixture components).
    pub sigma0_sq: f64,
    /// Query noise variance per coordinate.
    pub sigma_z_sq: f64,
    /// Mixture weights; `None` means uniform.
    pub weights: Option<Vec<f64>>,
}

impl TaskSpec {
    pub fn linear_subspace(n: usize, d: usize, sigma0_sq: f64, sigma_z_sq: f64) -> Self {
        TaskSpec {
            case: TaskCase::LinearSubspace,
            n,
            d,
            k: 0,
            radius: 0.0,
            sigma0_sq,
            sigma_z_sq,
            weights: None,
        }
    }

    pub fn sphere(n: usize, d: usize, radius: f64, sigma_z_sq: f64) -> Self {
        TaskSpec {
            case: TaskCase::Sphere,
            n,
            d,
            k: 0,
            radius,
            sigma0_sq: 0.0,
            sigma_z_sq,
            weights: None,
        }
    }

    pub fn gaussian_mixture(
        n: usize,
        k: usize,
        radius: f64,
        sigma0_sq: f64,
        sigma_z_sq: f64,
    ) -> Self {
        TaskSpec {
            case: TaskCase::GaussianMixture,
            n,
            d: 0,
            k,
            radius,
            sigma0_sq,
            sigma_z_sq,
            weights: None,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    /// Dimension of the subspace carrying the tokens (cases 1 and 2).
    pub fn subspace_dim(&self) -> usize {
        match self.case {
            TaskCase::LinearSubspace => self.d,
            TaskCase::Sphere => self.d + 1,
            TaskCase::GaussianMixture => self.n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("ambient dimension n must be >= 1"));
        }
        for (name, v) in [("sigma0_sq", self.sigma0_sq), ("sigma_z_sq", self.sigma_z_sq)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{name} = {v}")));
            }
        }
        if self.sigma0_sq < 0.0 {
            return Err(Error::invalid("sigma0_sq must be >= 0"));
        }
        if self.sigma_z_sq <= 0.0 {
            return Err(Error::invalid("sigma_z_sq must be > 0"));
        }
        match self.case {
            TaskCase::LinearSubspace => {
                if self.d == 0 || self.d > self.n {
                    return Err(Error::invalid(format!(
                        "linear subspace needs 1 <= d <= n, got d={}, n={}",
                        self.d, self.n
                    )));
                }
            }
            TaskCase::Sphere => {
                if self.d == 0 || self.d + 1 > self.n {
                    return Err(Error::invalid(format!(
                        "sphere needs 1 <= d and d+1 <= n, got d={}, n={}",
                        self.d, self.n
                    )));
                }
                if !(self.radius > 0.0 && self.radius.is_finite()) {
                    return Err(Error::invalid("sphere radius must be positive"));
                }
            }
            TaskCase::GaussianMixture => {
                if self.k == 0 {
                    return Err(Error::invalid("mixture needs k >= 1 components"));
                }
                if !(self.radius > 0.0 && self.radius.is_finite()) {
                    return Err(Error::invalid("center radius must be positive"));
                }
                if let Some(w) = &self.weights {
                    if w.len() != self.k {
                        return Err(Error::invalid(format!(
                            "got {} mixture weights for k={}",
                            w.len(),
                            self.k
                        )));
                    }
                    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                        return Err(Error::invalid("mixture weights must be finite and >= 0"));
                    }
                    let sum: f64 = w.iter().sum();
                    if (sum - 1.0).abs() > 1e-9 {
                        return Err(Error::invalid(format!(
                            "mixture weights must sum to 1, got {sum}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Realized parameters of one sampled task.
#[derive(Debug, Clone)]
pub struct TaskInstance {
    pub spec: TaskSpec,
    pub realization: Realization,
}

#[derive(Debug, Clone)]
pub enum Realization {
    /// Orthonormal basis of the token subspace: n x d (`LinearSubspace`) or
    /// n x (d+1) (`Sphere`).
    Basis(Array2<f64>),
    /// Mixture centers as rows (k x n) plus normalized weights.
    Mixture { centers: Array2<f64>, weights: Vec<f64> },
}

impl TaskInstance {
    pub fn basis(&self) -> Option<&Array2<f64>> {
        match &self.realization {
            Realization::Basis(b) => Some(b),
            Realization::Mixture { .. } => None,
        }
    }

    pub fn centers(&self) -> Option<&Array2<f64>> {
        match &self.realization {
            Realization::Mixture { centers, .. } => Some(centers),
            Realization::Basis(_) => None,
        }
    }

    pub fn mixture_weights(&self) -> Option<&[f64]> {
        match &self.realization {
            Realization::Mixture { weights, .. } => Some(weights),
            Realization::Basis(_) => None,
        }
    }
}

/// One in-context denoising example.
#[derive(Debug, Clone)]
pub struct Prompt {
    /// Clean tokens as columns: n x L.
    pub context: Array2<f64>,
    /// Corrupted held-out token.
    pub query: Array1<f64>,
    /// Clean held-out token.
    pub target: Array1<f64>,
}

impl Prompt {
    pub fn len(&self) -> usize {
        self.context.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.context.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.context.nrows()
    }
}

/// Draw the task-level randomness (basis or centers).
pub fn sample_task(spec: &TaskSpec, stream: RngStream) -> Result<TaskInstance> {
    spec.validate()?;
    let mut rng = stream.rng();
    let realization = match spec.case {
        TaskCase::LinearSubspace | TaskCase::Sphere => Realization::Basis(
            random_orthonormal_basis(spec.n, spec.subspace_dim(), &mut rng)?,
        ),
        TaskCase::GaussianMixture => {
            let mut centers = Array2::<f64>::zeros((spec.k, spec.n));
            for a in 0..spec.k {
                let g = normal_vector(&mut rng, spec.n);
                let norm = g.dot(&g).sqrt();
                let scale = spec.radius / norm;
                for j in 0..spec.n {
                    centers[(a, j)] = g[j] * scale;
                }
            }
            let weights = spec
                .weights
                .clone()
                .unwrap_or_else(|| vec![1.0 / spec.k as f64; spec.k]);
            Realization::Mixture { centers, weights }
        }
    };
    Ok(TaskInstance {
        spec: spec.clone(),
        realization,
    })
}

/// One clean token. Draw order (per token) is fixed: component index if any,
/// then the Gaussian coordinates.
fn sample_token(task: &TaskInstance, rng: &mut StreamRng) -> Array1<f64> {
    use rand::Rng;
    let spec = &task.spec;
    match (&task.realization, spec.case) {
        (Realization::Basis(b), TaskCase::LinearSubspace) => {
            let g = normal_vector(rng, spec.d);
            b.dot(&g) * spec.sigma0_sq.sqrt()
        }
        (Realization::Basis(b), TaskCase::Sphere) => {
            let g = normal_vector(rng, spec.d + 1);
            let norm = g.dot(&g).sqrt();
            b.dot(&g) * (spec.radius / norm)
        }
        (Realization::Mixture { centers, weights }, TaskCase::GaussianMixture) => {
            let u: f64 = rng.gen();
            let total: f64 = weights.iter().sum();
            let mut acc = 0.0;
            let mut idx = weights.len() - 1;
            for (a, w) in weights.iter().enumerate() {
                acc += w / total;
                if u < acc {
                    idx = a;
                    break;
                }
            }
            let g = normal_vector(rng, spec.n);
            let sigma0 = spec.sigma0_sq.sqrt();
            let mut token = centers.row(idx).to_owned();
            token.iter_mut().zip(g.iter()).for_each(|(t, gi)| *t += sigma0 * gi);
            token
        }
        _ => unreachable!("realization kind always matches the spec case"),
    }
}

/// Draw a prompt: L context tokens, the clean target, then the query noise.
pub fn sample_prompt(task: &TaskInstance, len: usize, stream: RngStream) -> Result<Prompt> {
    if len == 0 {
        return Err(Error::invalid("prompt needs at least one context token"));
    }
    let n = task.spec.n;
    let mut rng = stream.rng();
    let mut context = Array2::<f64>::zeros((n, len));
    for t in 0..len {
        let token = sample_token(task, &mut rng);
        context.column_mut(t).assign(&token);
    }
    let target = sample_token(task, &mut rng);
    let noise = normal_vector(&mut rng, n);
    let sigma_z = task.spec.sigma_z_sq.sqrt();
    let query = &target + &(noise * sigma_z);
    Ok(Prompt {
        context,
        query,
        target,
    })
}

/// Dataset with one fresh task realization per prompt.
pub fn sample_dataset(
    spec: &TaskSpec,
    count: usize,
    len: usize,
    stream: RngStream,
) -> Result<Vec<Prompt>> {
    Ok(sample_dataset_with_tasks(spec, count, len, stream)?
        .into_iter()
        .map(|(_, p)| p)
        .collect())
}

/// Like [`sample_dataset`] but keeps each prompt's task realization, which the
/// Bayes baselines need. Prompt i uses substream i of `stream` (task draw on
/// child 0, prompt draw on child 1), so the two functions agree bit-for-bit
/// and generation parallelizes safely.
pub fn sample_dataset_with_tasks(
    spec: &TaskSpec,
    count: usize,
    len: usize,
    stream: RngStream,
) -> Result<Vec<(TaskInstance, Prompt)>> {
    spec.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let s = stream.substream(i as u64);
            let task = sample_task(spec, s.substream(0))?;
            let prompt = sample_prompt(&task, len, s.substream(1))?;
            Ok((task, prompt))
        })
        .collect()
}

/// An invertible coordinate change Y = A X with a validated inverse.
#[derive(Debug, Clone)]
pub struct TransformSpec {
    a: Array2<f64>,
    a_inv: Array2<f64>,
}

impl TransformSpec {
    /// Build from a square matrix; fails if A is singular or the computed
    /// inverse does not verify ||A A^-1 - I||_max < 1e-8.
    pub fn new(a: Array2<f64>) -> Result<Self> {
        let (r, c) = a.dim();
        if r != c {
            return Err(Error::dims(format!("transform must be square, got {r}x{c}")));
        }
        ensure_finite_2d("transform matrix", a.view())?;
        let a_inv = invert(a.view())?;
        let err = max_abs_diff_2d(a.dot(&a_inv).view(), Array2::eye(r).view());
        if err >= 1e-8 {
            return Err(Error::Singular(format!(
                "inverse verification failed: ||A A^-1 - I||_max = {err:.3e}"
            )));
        }
        Ok(TransformSpec { a, a_inv })
    }

    /// A = I + s G / sqrt(n) with Gaussian G, redrawn until the 2-norm
    /// condition number is at most `max_condition`.
    pub fn random_well_conditioned(
        n: usize,
        scale: f64,
        max_condition: f64,
        stream: RngStream,
    ) -> Result<Self> {
        if !(scale.is_finite() && scale >= 0.0) || !(max_condition >= 1.0) {
            return Err(Error::invalid("need scale >= 0 and max_condition >= 1"));
        }
        let mut rng = stream.rng();
        for _ in 0..100 {
            let g = crate::numerics::normal_matrix(&mut rng, n, n);
            let a = Array2::eye(n) + &(g * (scale / (n as f64).sqrt()));
            let cond_ok = {
                let c = spectral_norm(a.view())? * spectral_norm(invert(a.view())?.view())?;
                c <= max_condition
            };
            if cond_ok {
                return TransformSpec::new(a);
            }
        }
        Err(Error::NoConvergence(
            "no well-conditioned transform within 100 draws".to_string(),
        ))
    }

    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn a_inv(&self) -> &Array2<f64> {
        &self.a_inv
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Map a prompt through Y = A X. The target is mapped only when
/// `transform_target` is set; leaving it in original coordinates trains
/// denoisers that undo the transform.
pub fn apply_transform(t: &TransformSpec, prompt: &Prompt, transform_target: bool) -> Result<Prompt> {
    if prompt.dim() != t.dim() {
        return Err(Error::dims(format!(
            "transform dim {} vs prompt dim {}",
            t.dim(),
            prompt.dim()
        )));
    }
    Ok(Prompt {
        context: t.a.dot(&prompt.context),
        query: t.a.dot(&prompt.query),
        target: if transform_target {
            t.a.dot(&prompt.target)
        } else {
            prompt.target.clone()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{max_abs_diff_1d, sym_op_norm};
    use approx::assert_abs_diff_eq;

    fn fig3_linear() -> TaskSpec {
        TaskSpec::linear_subspace(16, 8, 2.0, 1.0)
    }

    #[test]
    fn full_dimensional_subspace_projector_is_identity() {
        let spec = TaskSpec::linear_subspace(6, 6, 1.0, 0.5);
        let task = sample_task(&spec, RngStream::new(1)).unwrap();
        let b = task.basis().unwrap();
        let p = b.dot(&b.t());
        assert!(max_abs_diff_2d(p.view(), Array2::eye(6).view()) < 1e-12);
    }

    #[test]
    fn sphere_tokens_have_exact_radius_and_live_in_subspace() {
        let spec = TaskSpec::sphere(16, 8, 1.5, 0.1);
        let task = sample_task(&spec, RngStream::new(2)).unwrap();
        let prompt = sample_prompt(&task, 200, RngStream::new(3)).unwrap();
        let b = task.basis().unwrap();
        for t in 0..prompt.len() {
            let x = prompt.context.column(t);
            assert_abs_diff_eq!(x.dot(&x).sqrt(), 1.5, epsilon = 1e-12);
            let proj = b.dot(&b.t().dot(&x));
            assert!(max_abs_diff_1d(proj.view(), x) < 1e-12);
        }
    }

    #[test]
    fn mixture_tokens_stay_within_six_sigma_of_a_center() {
        let spec = TaskSpec::gaussian_mixture(16, 8, 1.0, 0.02, 0.1);
        let task = sample_task(&spec, RngStream::new(4)).unwrap();
        let prompt = sample_prompt(&task, 10_000, RngStream::new(5)).unwrap();
        let centers = task.centers().unwrap();
        let bound = 6.0 * spec.sigma0_sq.sqrt();
        for t in 0..prompt.len() {
            let x = prompt.context.column(t);
            let near = (0..spec.k).any(|a| {
                centers
                    .row(a)
                    .iter()
                    .zip(x.iter())
                    .all(|(c, xi)| (c - xi).abs() <= bound)
            });
            assert!(near, "token {t} is not within 6 sigma of any center");
        }
    }

    #[test]
    fn mixture_weights_bias_component_counts() {
        let spec = TaskSpec::gaussian_mixture(4, 2, 1.0, 1e-6, 0.1).with_weights(vec![0.9, 0.1]);
        let task = sample_task(&spec, RngStream::new(6)).unwrap();
        let prompt = sample_prompt(&task, 10_000, RngStream::new(7)).unwrap();
        let centers = task.centers().unwrap();
        let mut first = 0usize;
        for t in 0..prompt.len() {
            let x = prompt.context.column(t);
            let d0: f64 = centers
                .row(0)
                .iter()
                .zip(x.iter())
                .map(|(c, xi)| (c - xi) * (c - xi))
                .sum();
            let d1: f64 = centers
                .row(1)
                .iter()
                .zip(x.iter())
                .map(|(c, xi)| (c - xi) * (c - xi))
                .sum();
            if d0 < d1 {
                first += 1;
            }
        }
        assert!(
            (8700..=9300).contains(&first),
            "weight-0.9 component drew {first}/10000 tokens"
        );
    }

    #[test]
    fn query_noise_has_the_declared_variance() {
        let spec = fig3_linear();
        let pairs = sample_dataset_with_tasks(&spec, 10_000, 1, RngStream::new(8)).unwrap();
        let mean_sq: f64 = pairs
            .iter()
            .map(|(_, p)| {
                let d = &p.query - &p.target;
                d.dot(&d)
            })
            .sum::<f64>()
            / pairs.len() as f64;
        let expect = spec.n as f64 * spec.sigma_z_sq;
        assert!(
            (mean_sq - expect).abs() < 0.03 * expect,
            "mean ||query-target||^2 = {mean_sq}, expected about {expect}"
        );
    }

    #[test]
    fn subspace_coordinates_have_token_variance() {
        let spec = fig3_linear();
        let task = sample_task(&spec, RngStream::new(9)).unwrap();
        let prompt = sample_prompt(&task, 5000, RngStream::new(10)).unwrap();
        let coords = task.basis().unwrap().t().dot(&prompt.context);
        let m = coords.len() as f64;
        let var = coords.iter().map(|x| x * x).sum::<f64>() / m;
        assert!(
            (var - 2.0).abs() < 0.05 * 2.0,
            "per-coordinate variance {var}, expected about 2"
        );
    }

    #[test]
    fn empirical_second_moment_concentrates_on_projector() {
        let spec = fig3_linear();
        let mut failures = 0;
        for trial in 0..100 {
            let s = RngStream::new(11).substream(trial);
            let task = sample_task(&spec, s.substream(0)).unwrap();
            let prompt = sample_prompt(&task, 5000, s.substream(1)).unwrap();
            let b = task.basis().unwrap();
            let p = b.dot(&b.t());
            let second = prompt.context.dot(&prompt.context.t())
                / (spec.sigma0_sq * prompt.len() as f64);
            let dev = sym_op_norm((&second - &p).view()).unwrap();
            if dev >= 0.2 {
                failures += 1;
            }
        }
        assert!(failures <= 1, "{failures}/100 trials exceeded operator norm 0.2");
    }

    #[test]
    fn datasets_replay_bit_identically_and_substreams_differ() {
        let spec = fig3_linear();
        let a = sample_dataset(&spec, 4, 32, RngStream::new(12)).unwrap();
        let b = sample_dataset(&spec, 4, 32, RngStream::new(12)).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.context, y.context);
            assert_eq!(x.query, y.query);
            assert_eq!(x.target, y.target);
        }
        assert_ne!(a[0].context, a[1].context);

        let with_tasks = sample_dataset_with_tasks(&spec, 4, 32, RngStream::new(12)).unwrap();
        for ((_, x), y) in with_tasks.iter().zip(a.iter()) {
            assert_eq!(x.context, y.context);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(TaskSpec::linear_subspace(8, 0, 1.0, 1.0).validate().is_err());
        assert!(TaskSpec::linear_subspace(8, 9, 1.0, 1.0).validate().is_err());
        assert!(TaskSpec::linear_subspace(8, 4, 1.0, 0.0).validate().is_err());
        assert!(TaskSpec::linear_subspace(8, 4, -1.0, 1.0).validate().is_err());
        assert!(TaskSpec::sphere(8, 8, 1.0, 1.0).validate().is_err());
        assert!(TaskSpec::sphere(8, 7, 1.0, 1.0).validate().is_ok());
        assert!(TaskSpec::gaussian_mixture(8, 0, 1.0, 0.1, 1.0).validate().is_err());
        assert!(TaskSpec::gaussian_mixture(8, 2, 1.0, 0.1, 1.0)
            .with_weights(vec![0.5, 0.6])
            .validate()
            .is_err());
        assert!(TaskSpec::gaussian_mixture(8, 2, 1.0, 0.1, 1.0)
            .with_weights(vec![0.5, -0.5])
            .validate()
            .is_err());
        assert!(sample_prompt(
            &sample_task(&fig3_linear(), RngStream::new(0)).unwrap(),
            0,
            RngStream::new(1)
        )
        .is_err());
    }

    #[test]
    fn transform_round_trips_and_respects_target_flag() {
        let spec = fig3_linear();
        let task = sample_task(&spec, RngStream::new(13)).unwrap();
        let prompt = sample_prompt(&task, 16, RngStream::new(14)).unwrap();
        let t = TransformSpec::random_well_conditioned(16, 0.5, 3.0, RngStream::new(15)).unwrap();

        let fwd = apply_transform(&t, &prompt, false).unwrap();
        assert_eq!(fwd.target, prompt.target);
        assert_ne!(fwd.context, prompt.context);

        let inv = TransformSpec::new(t.a_inv().clone()).unwrap();
        let back = apply_transform(&inv, &fwd, false).unwrap();
        assert!(max_abs_diff_2d(back.context.view(), prompt.context.view()) < 1e-10);
        assert!(max_abs_diff_1d(back.query.view(), prompt.query.view()) < 1e-10);

        let both = apply_transform(&t, &prompt, true).unwrap();
        assert!(max_abs_diff_1d(both.target.view(), t.a().dot(&prompt.target).view()) < 1e-14);
    }

    #[test]
    fn transform_validation_rejects_bad_matrices() {
        assert!(TransformSpec::new(Array2::zeros((2, 3))).is_err());
        assert!(TransformSpec::new(Array2::zeros((3, 3))).is_err());
        let mut nan = Array2::eye(3);
        nan[(0, 0)] = f64::NAN;
        assert!(TransformSpec::new(nan).is_err());
    }

    #[test]
    fn random_transform_is_well_conditioned_and_deterministic() {
        let s = RngStream::new(16);
        let t1 = TransformSpec::random_well_conditioned(16, 0.5, 3.0, s).unwrap();
        let t2 = TransformSpec::random_well_conditioned(16, 0.5, 3.0, s).unwrap();
        assert_eq!(t1.a(), t2.a());
        let cond = spectral_norm(t1.a().view()).unwrap()
            * spectral_norm(t1.a_inv().view()).unwrap();
        assert!(cond <= 3.0, "condition number {cond}");
    }
}
