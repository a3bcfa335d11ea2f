//! Experiment configuration.
//!
//! A config file is plain JSON. Every field is optional; omitted fields get
//! experiment-aware defaults, and `--set key=value` overrides individual
//! entries after the file is read. Resolution produces a [`ResolvedConfig`]
//! with every field concrete, which is stamped next to the results so a run
//! can be replayed from the stamped file alone.

use anyhow::{anyhow, bail, Context, Result};
use denoise_core::{AttentionKind, TaskCase, TaskSpec, TrainConfig};
use serde::{Deserialize, Serialize};

/// One subcommand = one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Train,
    ContextSweep,
    DimShift,
    Landscape,
    Transform,
    Rates,
    EnergyDemo,
    BaselineEval,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Train => "train",
            Experiment::ContextSweep => "context-sweep",
            Experiment::DimShift => "dim-shift",
            Experiment::Landscape => "landscape",
            Experiment::Transform => "transform",
            Experiment::Rates => "rates",
            Experiment::EnergyDemo => "energy-demo",
            Experiment::BaselineEval => "baseline-eval",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseName {
    LinearSubspace,
    Sphere,
    GaussianMixture,
}

impl CaseName {
    pub fn to_case(self) -> TaskCase {
        match self {
            CaseName::LinearSubspace => TaskCase::LinearSubspace,
            CaseName::Sphere => TaskCase::Sphere,
            CaseName::GaussianMixture => TaskCase::GaussianMixture,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionName {
    Linear,
    Softmax,
    GaussianKernel,
}

impl AttentionName {
    pub fn to_kind(self) -> AttentionKind {
        match self {
            AttentionName::Linear => AttentionKind::Linear,
            AttentionName::Softmax => AttentionKind::Softmax,
            AttentionName::GaussianKernel => AttentionKind::GaussianKernel,
        }
    }
}

/// A grid is either an explicit list or `{"min": a, "max": b, "count": m}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    List(Vec<f64>),
    Linspace { min: f64, max: f64, count: usize },
}

impl GridSpec {
    pub fn points(&self) -> Result<Vec<f64>> {
        let pts = match self {
            GridSpec::List(v) => v.clone(),
            GridSpec::Linspace { min, max, count } => {
                if *count == 0 {
                    bail!("linspace count must be positive");
                }
                if !(min.is_finite() && max.is_finite()) {
                    bail!("linspace endpoints must be finite");
                }
                if *count == 1 {
                    vec![*min]
                } else {
                    if max <= min {
                        bail!("linspace needs max > min, got [{min}, {max}]");
                    }
                    let step = (max - min) / (*count as f64 - 1.0);
                    (0..*count).map(|i| min + step * i as f64).collect()
                }
            }
        };
        if pts.is_empty() {
            bail!("grid is empty");
        }
        if let Some(v) = pts.iter().find(|v| !v.is_finite()) {
            bail!("grid contains a non-finite value {v}");
        }
        Ok(pts)
    }
}

// ---------------------------------------------------------------------------
// Raw config: what the file contains. Everything optional, unknown keys are
// rejected so typos fail loudly with a field path.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub experiment: Option<Experiment>,
    pub task: Option<RawTask>,
    pub attention: Option<AttentionName>,
    pub train: Option<RawTrain>,
    pub seeds: Option<Vec<u64>>,
    pub ideal: Option<bool>,
    pub sweep: Option<RawSweep>,
    pub rates: Option<RawRates>,
    pub energy: Option<RawEnergy>,
    pub eval: Option<RawEval>,
    pub transform: Option<RawTransform>,
    pub out_dir: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTask {
    pub case: Option<CaseName>,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub k: Option<usize>,
    pub radius: Option<f64>,
    pub sigma0_sq: Option<f64>,
    pub sigma_z_sq: Option<f64>,
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTrain {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub dataset_size: Option<usize>,
    pub context_len: Option<usize>,
    pub learning_rate: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub eval_prompts: Option<usize>,
    pub record_every: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSweep {
    pub context_lengths: Option<Vec<usize>>,
    pub dims: Option<Vec<usize>>,
    pub alpha_grid: Option<GridSpec>,
    pub beta_grid: Option<GridSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRates {
    pub trials: Option<usize>,
    pub delta: Option<f64>,
    pub context_lengths: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEnergy {
    pub steps: Option<usize>,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub prompts: Option<usize>,
    pub trajectories: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEval {
    pub prompts: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTransform {
    pub scale: Option<f64>,
    pub max_condition: Option<f64>,
}

// ---------------------------------------------------------------------------
// Resolved config: every field concrete. Serializing this and parsing it back
// through resolve() is the identity, which is what makes stamped configs
// replayable.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub experiment: Experiment,
    pub task: TaskSection,
    pub attention: AttentionName,
    pub train: TrainSection,
    pub seeds: Vec<u64>,
    pub ideal: bool,
    pub sweep: SweepSection,
    pub rates: RatesSection,
    pub energy: EnergySection,
    pub eval: EvalSection,
    pub transform: TransformSection,
    pub out_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSection {
    pub case: CaseName,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub radius: f64,
    pub sigma0_sq: f64,
    pub sigma_z_sq: f64,
    pub weights: Option<Vec<f64>>,
}

impl TaskSection {
    pub fn to_spec(&self) -> TaskSpec {
        let spec = match self.case {
            CaseName::LinearSubspace => {
                TaskSpec::linear_subspace(self.n, self.d, self.sigma0_sq, self.sigma_z_sq)
            }
            CaseName::Sphere => TaskSpec::sphere(self.n, self.d, self.radius, self.sigma_z_sq),
            CaseName::GaussianMixture => TaskSpec::gaussian_mixture(
                self.n,
                self.k,
                self.radius,
                self.sigma0_sq,
                self.sigma_z_sq,
            ),
        };
        match &self.weights {
            Some(w) => spec.with_weights(w.clone()),
            None => spec,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub dataset_size: usize,
    pub context_len: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub eval_prompts: usize,
    pub record_every: usize,
}

impl TrainSection {
    pub fn to_core(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            dataset_size: self.dataset_size,
            context_len: self.context_len,
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            seed,
            eval_prompts: self.eval_prompts,
            record_every: self.record_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    pub context_lengths: Vec<usize>,
    pub dims: Vec<usize>,
    pub alpha_grid: GridSpec,
    pub beta_grid: GridSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatesSection {
    pub trials: usize,
    pub delta: f64,
    pub context_lengths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySection {
    pub steps: usize,
    pub gamma: f64,
    pub alpha: f64,
    /// Inverse-temperature of the attraction term; defaults to 1/sigma_z_sq.
    pub beta: f64,
    pub prompts: usize,
    pub trajectories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub prompts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSection {
    pub scale: f64,
    pub max_condition: f64,
}

// ---------------------------------------------------------------------------
// Parsing and resolution
// ---------------------------------------------------------------------------

/// Parse a JSON config, reporting unknown or ill-typed fields by path.
pub fn parse_raw(text: &str) -> Result<RawConfig> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            anyhow!("config: {}", e.inner())
        } else {
            anyhow!("config field `{path}`: {}", e.inner())
        }
    })
}

/// Apply one `--set key=value` override onto the JSON tree. The key is a
/// dotted path; the value is parsed as JSON and falls back to a bare string,
/// so `--set task.case=sphere` and `--set train.epochs=200` both work.
pub fn apply_set(tree: &mut serde_json::Value, pair: &str) -> Result<()> {
    let (key, value) = pair
        .split_once('=')
        .ok_or_else(|| anyhow!("--set needs key=value, got `{pair}`"))?;
    if key.is_empty() {
        bail!("--set needs a nonempty key in `{pair}`");
    }
    let parsed: serde_json::Value = serde_json::from_str(value)
        .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            bail!("--set {key}: `{part}` is not an object");
        }
        node = node
            .as_object_mut()
            .unwrap()
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    let last = parts[parts.len() - 1];
    let obj = node
        .as_object_mut()
        .ok_or_else(|| anyhow!("--set {key}: parent is not an object"))?;
    obj.insert(last.to_string(), parsed);
    Ok(())
}

/// Shared training defaults; the energy demo runs at its own short context
/// length, L = 20.
fn default_train(experiment: Experiment) -> TrainSection {
    let base = TrainConfig::default();
    TrainSection {
        epochs: base.epochs,
        batch_size: base.batch_size,
        dataset_size: base.dataset_size,
        context_len: if experiment == Experiment::EnergyDemo {
            20
        } else {
            base.context_len
        },
        learning_rate: base.learning_rate,
        adam_beta1: base.adam_beta1,
        adam_beta2: base.adam_beta2,
        adam_eps: base.adam_eps,
        eval_prompts: base.eval_prompts,
        record_every: base.record_every,
    }
}

/// Per-case parameter defaults for the headline experiments; the energy
/// demo and the concentration runs use their own smaller setups.
fn default_task(experiment: Experiment, case: CaseName) -> TaskSection {
    let (n, d, k, radius, sigma0_sq, sigma_z_sq) = match (experiment, case) {
        (Experiment::EnergyDemo, CaseName::Sphere) => (2, 1, 0, 1.0, 0.0, 10.0),
        (Experiment::Rates, CaseName::Sphere) => (8, 2, 0, 1.0, 0.0, 0.5),
        (_, CaseName::LinearSubspace) => (16, 8, 0, 0.0, 2.0, 1.0),
        (_, CaseName::Sphere) => (16, 8, 0, 1.0, 0.0, 0.1),
        (_, CaseName::GaussianMixture) => (16, 0, 8, 1.0, 0.02, 0.1),
    };
    TaskSection {
        case,
        n,
        d,
        k,
        radius,
        sigma0_sq,
        sigma_z_sq,
        weights: None,
    }
}

fn default_beta_grid(case: CaseName) -> GridSpec {
    // Wide enough to show the optimum's valley and its mirrored twin.
    match case {
        CaseName::LinearSubspace => GridSpec::Linspace {
            min: -1.0,
            max: 1.0,
            count: 50,
        },
        _ => GridSpec::Linspace {
            min: -20.0,
            max: 20.0,
            count: 50,
        },
    }
}

/// Flags that override file contents.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub seeds: Option<Vec<u64>>,
    pub ideal: bool,
    pub out_dir: Option<String>,
}

/// Fill every hole in `raw` with defaults for `experiment` and validate the
/// result. `raw.experiment`, if present, must agree with the subcommand.
pub fn resolve(
    experiment: Experiment,
    raw: &RawConfig,
    overrides: &CliOverrides,
) -> Result<ResolvedConfig> {
    if let Some(e) = raw.experiment {
        if e != experiment {
            bail!(
                "config sets experiment `{}` but the `{}` subcommand was invoked",
                e.name(),
                experiment.name()
            );
        }
    }

    let raw_task = raw.task.clone().unwrap_or_default();
    let case = raw_task.case.unwrap_or(match experiment {
        Experiment::EnergyDemo | Experiment::Rates => CaseName::Sphere,
        _ => CaseName::LinearSubspace,
    });
    let base_task = default_task(experiment, case);
    let task = TaskSection {
        case,
        n: raw_task.n.unwrap_or(base_task.n),
        d: raw_task.d.unwrap_or(base_task.d),
        k: raw_task.k.unwrap_or(base_task.k),
        radius: raw_task.radius.unwrap_or(base_task.radius),
        sigma0_sq: raw_task.sigma0_sq.unwrap_or(base_task.sigma0_sq),
        sigma_z_sq: raw_task.sigma_z_sq.unwrap_or(base_task.sigma_z_sq),
        weights: raw_task.weights.clone(),
    };
    task.to_spec()
        .validate()
        .with_context(|| "config field `task`")?;

    let attention = raw.attention.unwrap_or(match case {
        CaseName::LinearSubspace => AttentionName::Linear,
        _ => AttentionName::Softmax,
    });

    let raw_train = raw.train.clone().unwrap_or_default();
    let base_train = default_train(experiment);
    let train = TrainSection {
        epochs: raw_train.epochs.unwrap_or(base_train.epochs),
        batch_size: raw_train.batch_size.unwrap_or(base_train.batch_size),
        dataset_size: raw_train.dataset_size.unwrap_or(base_train.dataset_size),
        context_len: raw_train.context_len.unwrap_or(base_train.context_len),
        learning_rate: raw_train.learning_rate.unwrap_or(base_train.learning_rate),
        adam_beta1: raw_train.adam_beta1.unwrap_or(base_train.adam_beta1),
        adam_beta2: raw_train.adam_beta2.unwrap_or(base_train.adam_beta2),
        adam_eps: raw_train.adam_eps.unwrap_or(base_train.adam_eps),
        eval_prompts: raw_train.eval_prompts.unwrap_or(base_train.eval_prompts),
        record_every: raw_train.record_every.unwrap_or(base_train.record_every),
    };
    train
        .to_core(0)
        .validate()
        .with_context(|| "config field `train`")?;

    let seeds = overrides
        .seeds
        .clone()
        .or_else(|| raw.seeds.clone())
        .unwrap_or_else(|| vec![0]);
    if seeds.is_empty() {
        bail!("config field `seeds`: at least one seed is required");
    }

    let ideal = overrides.ideal || raw.ideal.unwrap_or(false);
    if ideal && experiment != Experiment::ContextSweep {
        bail!("--ideal only applies to the context-sweep experiment");
    }

    let raw_sweep = raw.sweep.clone().unwrap_or_default();
    let sweep = SweepSection {
        context_lengths: raw_sweep
            .context_lengths
            .unwrap_or_else(|| vec![16, 64, 256, 1024]),
        dims: raw_sweep.dims.unwrap_or_else(|| vec![2, 4, 8, 12]),
        alpha_grid: raw_sweep.alpha_grid.unwrap_or(GridSpec::Linspace {
            min: -2.0,
            max: 2.0,
            count: 50,
        }),
        beta_grid: raw_sweep.beta_grid.unwrap_or_else(|| default_beta_grid(case)),
    };

    let raw_rates = raw.rates.clone().unwrap_or_default();
    let rates = RatesSection {
        trials: raw_rates.trials.unwrap_or(500),
        delta: raw_rates.delta.unwrap_or(0.1),
        context_lengths: raw_rates
            .context_lengths
            .unwrap_or_else(|| vec![50, 100, 200, 400]),
    };
    if !(rates.delta > 0.0 && rates.delta < 1.0) {
        bail!("config field `rates.delta`: need 0 < delta < 1");
    }

    let raw_energy = raw.energy.clone().unwrap_or_default();
    let alpha = raw_energy.alpha.unwrap_or(1.0);
    let energy = EnergySection {
        steps: raw_energy.steps.unwrap_or(20),
        gamma: raw_energy.gamma.unwrap_or(alpha),
        alpha,
        beta: raw_energy.beta.unwrap_or(1.0 / task.sigma_z_sq),
        prompts: raw_energy.prompts.unwrap_or(200),
        trajectories: raw_energy.trajectories.unwrap_or(8),
    };

    let eval = EvalSection {
        prompts: raw
            .eval
            .clone()
            .unwrap_or_default()
            .prompts
            .unwrap_or(2000),
    };
    if eval.prompts == 0 {
        bail!("config field `eval.prompts`: need at least one prompt");
    }

    let raw_transform = raw.transform.clone().unwrap_or_default();
    let transform = TransformSection {
        scale: raw_transform.scale.unwrap_or(0.5),
        max_condition: raw_transform.max_condition.unwrap_or(3.0),
    };

    let out_dir = overrides
        .out_dir
        .clone()
        .or_else(|| raw.out_dir.clone())
        .or_else(|| std::env::var("DENOISE_OUT").ok().map(|base| {
            format!("{base}/{}", experiment.name())
        }))
        .unwrap_or_else(|| format!("runs/{}", experiment.name()));

    Ok(ResolvedConfig {
        experiment,
        task,
        attention,
        train,
        seeds,
        ideal,
        sweep,
        rates,
        energy,
        eval,
        transform,
        out_dir,
    })
}
