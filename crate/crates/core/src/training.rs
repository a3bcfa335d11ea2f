//! Adam training of attention weights on freshly sampled prompt datasets.
//!
//! One run samples a fixed training set (a new task realization per prompt),
//! a held-out evaluation set, and uniform initial weights, then minimizes the
//! batch-mean squared error with Adam over shuffled mini-batches. Everything
//! derives from one seed through fixed substream ids, so runs replay
//! bit-identically regardless of thread count.

use ndarray::Array2;
use rayon::prelude::*;

use crate::attention::{
    forward, grad_mse, summarize, AttentionKind, AttentionWeights, ScaledIdentitySummary,
};
use crate::baselines::{evaluate_baseline_ensemble, BaselineKind};
use crate::error::{Error, Result};
use crate::numerics::{kahan_mean, shuffle, RngStream};
use crate::tasks::{apply_transform, sample_dataset_with_tasks, TaskSpec, TransformSpec};

/// Substream ids hanging off the run seed. Fixed so that artifacts are
/// reproducible even if the call order changes.
const STREAM_DATA: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_EVAL: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Number of training prompts (each with its own task realization).
    pub dataset_size: usize,
    /// Context tokens per prompt.
    pub context_len: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Held-out prompts for the test curve and baselines.
    pub eval_prompts: usize,
    /// Record the loss every this many epochs (epoch 0 and the final epoch
    /// are always recorded).
    pub record_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 80,
            dataset_size: 800,
            context_len: 500,
            learning_rate: 1e-2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            eval_prompts: 1000,
            record_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > self.dataset_size {
            return Err(Error::invalid(format!(
                "need 0 < batch_size <= dataset_size, got {} and {}",
                self.batch_size, self.dataset_size
            )));
        }
        if self.context_len == 0 {
            return Err(Error::invalid("context_len must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return Err(Error::invalid("adam_eps must be positive"));
        }
        if self.eval_prompts == 0 {
            return Err(Error::invalid("eval_prompts must be >= 1"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every must be >= 1"));
        }
        Ok(())
    }
}

/// First and second moment accumulators for both weight matrices.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m_kq: Array2<f64>,
    pub v_kq: Array2<f64>,
    pub m_pv: Array2<f64>,
    pub v_pv: Array2<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m_kq: Array2::zeros((n, n)),
            v_kq: Array2::zeros((n, n)),
            m_pv: Array2::zeros((n, n)),
            v_pv: Array2::zeros((n, n)),
            t: 0,
        }
    }
}

/// Uniform initial weights on [-1/sqrt(n), 1/sqrt(n)] per entry; W_KQ is
/// drawn before W_PV. Only the trainable kinds are supported.
pub fn init_weights(n: usize, kind: AttentionKind, stream: RngStream) -> Result<AttentionWeights> {
    use rand::Rng;
    if n == 0 {
        return Err(Error::invalid("dimension must be >= 1"));
    }
    if kind == AttentionKind::GaussianKernel {
        return Err(Error::invalid("kernel attention is evaluation-only"));
    }
    let mut rng = stream.rng();
    let bound = 1.0 / (n as f64).sqrt();
    let mut draw = |rows: usize, cols: usize| {
        let mut m = Array2::<f64>::zeros((rows, cols));
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = rng.gen_range(-bound..bound);
            }
        }
        m
    };
    let w_kq = draw(n, n);
    let w_pv = draw(n, n);
    match kind {
        AttentionKind::Linear => AttentionWeights::linear(w_kq, w_pv),
        AttentionKind::Softmax => AttentionWeights::softmax(w_kq, w_pv),
        AttentionKind::GaussianKernel => unreachable!(),
    }
}

/// One Adam update with bias correction. Rejects non-finite gradients.
pub fn adam_step(
    weights: &mut AttentionWeights,
    state: &mut AdamState,
    g_kq: &Array2<f64>,
    g_pv: &Array2<f64>,
    cfg: &TrainConfig,
) -> Result<()> {
    if g_kq.iter().chain(g_pv.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("gradient".to_string()));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.adam_beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.adam_beta2.powi(state.t as i32);
    let update = |theta: &mut Array2<f64>,
                      m: &mut Array2<f64>,
                      v: &mut Array2<f64>,
                      g: &Array2<f64>| {
        azip_update(theta, m, v, g, cfg, bc1, bc2);
    };
    match weights {
        AttentionWeights::Linear { w_kq, w_pv } | AttentionWeights::Softmax { w_kq, w_pv } => {
            update(w_kq, &mut state.m_kq, &mut state.v_kq, g_kq);
            update(w_pv, &mut state.m_pv, &mut state.v_pv, g_pv);
        }
        AttentionWeights::GaussianKernel { .. } => {
            return Err(Error::invalid("kernel attention is evaluation-only"))
        }
    }
    Ok(())
}

fn azip_update(
    theta: &mut Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    g: &Array2<f64>,
    cfg: &TrainConfig,
    bc1: f64,
    bc2: f64,
) {
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    ndarray::Zip::from(theta)
        .and(m)
        .and(v)
        .and(g)
        .for_each(|t, m, v, g| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *t -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
        });
}

/// Batch-mean squared error of the weights over a prompt set.
pub fn evaluate(w: &AttentionWeights, prompts: &[crate::tasks::Prompt]) -> Result<f64> {
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

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub loss_curve: Vec<LossRecord>,
    pub weights: AttentionWeights,
    pub summary: ScaledIdentitySummary,
    /// Reference MSEs on the held-out prompts in original coordinates.
    pub baselines: Vec<(BaselineKind, f64)>,
}

/// Train on prompts from `spec` with the given attention kind.
pub fn train(spec: &TaskSpec, kind: AttentionKind, cfg: &TrainConfig) -> Result<TrainResult> {
    train_with_transform(spec, kind, cfg, None)
}

/// Like [`train`] but optionally maps the context and query (not the target)
/// of every prompt through a coordinate change before training, so the layer
/// must learn to undo it. Baselines stay in original coordinates.
pub fn train_with_transform(
    spec: &TaskSpec,
    kind: AttentionKind,
    cfg: &TrainConfig,
    transform: Option<&TransformSpec>,
) -> Result<TrainResult> {
    spec.validate()?;
    cfg.validate()?;
    if kind == AttentionKind::GaussianKernel {
        return Err(Error::invalid("kernel attention is evaluation-only"));
    }
    if let Some(t) = transform {
        if t.dim() != spec.n {
            return Err(Error::dims(format!(
                "transform dim {} vs task dim {}",
                t.dim(),
                spec.n
            )));
        }
    }
    let root = RngStream::new(cfg.seed);

    let map_prompts = |pairs: &[(crate::tasks::TaskInstance, crate::tasks::Prompt)]| -> Result<Vec<crate::tasks::Prompt>> {
        pairs
            .iter()
            .map(|(_, p)| match transform {
                Some(t) => apply_transform(t, p, false),
                None => Ok(p.clone()),
            })
            .collect()
    };

    let train_pairs =
        sample_dataset_with_tasks(spec, cfg.dataset_size, cfg.context_len, root.substream(STREAM_DATA))?;
    let eval_pairs =
        sample_dataset_with_tasks(spec, cfg.eval_prompts, cfg.context_len, root.substream(STREAM_EVAL))?;

    let baselines: Vec<(BaselineKind, f64)> = BaselineKind::applicable(spec.case)
        .into_iter()
        .map(|kind| Ok((kind, evaluate_baseline_ensemble(kind, &eval_pairs)?.0)))
        .collect::<Result<_>>()?;

    let train_prompts = map_prompts(&train_pairs)?;
    let eval_prompts = map_prompts(&eval_pairs)?;
    drop(train_pairs);
    drop(eval_pairs);

    let mut weights = init_weights(spec.n, kind, root.substream(STREAM_INIT))?;
    let mut state = AdamState::new(spec.n);
    let shuffle_root = root.substream(STREAM_SHUFFLE);

    let mut loss_curve = Vec::new();
    let record = |weights: &AttentionWeights, epoch: usize| -> Result<LossRecord> {
        let rec = LossRecord {
            epoch,
            train_mse: evaluate(weights, &train_prompts)?,
            test_mse: evaluate(weights, &eval_prompts)?,
        };
        Ok(rec)
    };
    loss_curve.push(record(&weights, 0)?);
    let initial = loss_curve[0].train_mse;
    let mut high_records = 0usize;

    let mut order: Vec<usize> = (0..cfg.dataset_size).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = shuffle_root.substream(epoch as u64).rng();
        for (i, v) in order.iter_mut().enumerate() {
            *v = i;
        }
        shuffle(&mut rng, &mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&crate::tasks::Prompt> =
                chunk.iter().map(|&i| &train_prompts[i]).collect();
            let (g_kq, g_pv, _) = grad_mse(&weights, &batch)?;
            adam_step(&mut weights, &mut state, &g_kq, &g_pv, cfg).map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFiniteGradient { epoch },
                other => other,
            })?;
        }
        if epoch % cfg.record_every == 0 || epoch == cfg.epochs {
            let rec = record(&weights, epoch)?;
            if rec.train_mse > 10.0 * initial {
                high_records += 1;
                if high_records >= 20 {
                    return Err(Error::Diverged {
                        epoch,
                        loss: rec.train_mse,
                        initial,
                    });
                }
            } else {
                high_records = 0;
            }
            loss_curve.push(rec);
        }
    }

    let summary = summarize(&weights)?;
    Ok(TrainResult {
        loss_curve,
        weights,
        summary,
        baselines,
    })
}
