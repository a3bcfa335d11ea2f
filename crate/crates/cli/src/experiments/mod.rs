//! One module per subcommand. Each takes the resolved config plus a
//! [`RunWriter`](crate::artifacts::RunWriter) and emits its CSV tables.

use anyhow::Result;
use denoise_core::baselines::BaselineKind;
use denoise_core::tasks::sample_dataset_with_tasks;
use denoise_core::{Prompt, RngStream, TaskCase, TaskInstance, TaskSpec};

use crate::artifacts::RunWriter;
use crate::config::ResolvedConfig;

pub mod baseline_eval;
pub mod context_sweep;
pub mod dim_shift;
pub mod energy_demo;
pub mod landscape;
pub mod rates;
pub mod train;
pub mod transform;

// Stream ids for run-level randomness, hanging off RngStream::new(seeds[0]).
// Training internally uses substreams 1..=4 of its own seed, so run-level
// draws start at 10 to stay disjoint even when a seed is reused.
pub(crate) const STREAM_EVAL_SET: u64 = 10;
pub(crate) const STREAM_SWEEP: u64 = 11;
pub(crate) const STREAM_DIM_SHIFT: u64 = 12;
pub(crate) const STREAM_TRANSFORM_A: u64 = 13;
pub(crate) const STREAM_TRANSFORM_EVAL: u64 = 14;
pub(crate) const STREAM_RATES: u64 = 15;
pub(crate) const STREAM_ENERGY: u64 = 16;

pub fn run(cfg: &ResolvedConfig, w: &mut RunWriter) -> Result<()> {
    use crate::config::Experiment::*;
    match cfg.experiment {
        Train => train::run(cfg, w),
        ContextSweep => context_sweep::run(cfg, w),
        DimShift => dim_shift::run(cfg, w),
        Landscape => landscape::run(cfg, w),
        Transform => transform::run(cfg, w),
        Rates => rates::run(cfg, w),
        EnergyDemo => energy_demo::run(cfg, w),
        BaselineEval => baseline_eval::run(cfg, w),
    }
}

/// The strongest baseline for a case: the posterior mean.
pub(crate) fn bayes_kind(case: TaskCase) -> BaselineKind {
    BaselineKind::applicable(case)[0]
}

/// Fresh evaluation pairs drawn from a dedicated stream.
pub(crate) fn eval_pairs(
    spec: &TaskSpec,
    count: usize,
    len: usize,
    stream: RngStream,
) -> Result<Vec<(TaskInstance, Prompt)>> {
    Ok(sample_dataset_with_tasks(spec, count, len, stream)?)
}

/// Sampling unit for large evaluation sets: big enough to amortize, small
/// enough that a chunk of long-context prompts stays well under 100 MB.
pub(crate) const EVAL_CHUNK: usize = 512;

/// Applies `f` to `count` fresh pairs drawn in fixed-size chunks, so large
/// evaluation sets never sit in memory at once. Chunk c draws from
/// `stream.substream(c)`, hence prompt j is a function of (stream, j) alone
/// and prefixes agree across different `count` values.
pub(crate) fn map_eval_chunks<T, F>(
    spec: &TaskSpec,
    count: usize,
    len: usize,
    stream: RngStream,
    mut f: F,
) -> Result<Vec<T>>
where
    F: FnMut(&[(TaskInstance, Prompt)]) -> Result<Vec<T>>,
{
    let mut out = Vec::with_capacity(count);
    let mut chunk = 0u64;
    let mut done = 0usize;
    while done < count {
        let take = EVAL_CHUNK.min(count - done);
        let pairs = sample_dataset_with_tasks(spec, take, len, stream.substream(chunk))?;
        let vals = f(&pairs)?;
        anyhow::ensure!(vals.len() == take, "chunk evaluator returned a wrong length");
        out.extend(vals);
        done += take;
        chunk += 1;
    }
    Ok(out)
}
