//! `dim-shift`: train once, then evaluate the frozen weights on tasks whose
//! subspace dimension differs from the training one.

use anyhow::{bail, ensure, Result};
use denoise_core::attention::forward;
use denoise_core::baselines::predict;
use denoise_core::numerics::kahan_mean;
use denoise_core::training::train;
use denoise_core::{RngStream, TaskCase};

use crate::artifacts::{fmt_f64, RunWriter};
use crate::config::ResolvedConfig;
use crate::experiments::{bayes_kind, map_eval_chunks, STREAM_DIM_SHIFT};

pub fn run(cfg: &ResolvedConfig, w: &mut RunWriter) -> Result<()> {
    let spec = cfg.task.to_spec();
    if spec.case == TaskCase::GaussianMixture {
        bail!("dim-shift varies a subspace dimension; mixtures have none");
    }
    ensure!(
        !cfg.sweep.dims.is_empty(),
        "config field `sweep.dims`: need at least one dimension"
    );
    ensure!(
        !cfg.sweep.context_lengths.is_empty(),
        "config field `sweep.context_lengths`: need at least one length"
    );
    let mut dims = cfg.sweep.dims.clone();
    dims.sort_unstable();
    dims.dedup();
    for &d in &dims {
        if d >= spec.n {
            bail!(
                "config field `sweep.dims`: inference dimension {d} must stay below n = {}",
                spec.n
            );
        }
    }
    let mut lengths = cfg.sweep.context_lengths.clone();
    lengths.sort_unstable();
    lengths.dedup();

    let trained = train(&spec, cfg.attention.to_kind(), &cfg.train.to_core(cfg.seeds[0]))?;
    let stream = RngStream::new(cfg.seeds[0]).substream(STREAM_DIM_SHIFT);

    let mut rows = Vec::new();
    for &d in &dims {
        let mut shifted = spec.clone();
        shifted.d = d;
        shifted.validate()?;
        let bayes = bayes_kind(shifted.case);
        for &len in &lengths {
            ensure!(len > 0, "config field `sweep.context_lengths`: lengths must be positive");
            let sq = map_eval_chunks(
                &shifted,
                cfg.eval.prompts,
                len,
                stream.substream(d as u64).substream(len as u64),
                |pairs| {
                    pairs
                        .iter()
                        .map(|(task, p)| {
                            let m = forward(&trained.weights, p)?;
                            let b = predict(bayes, task, p)?;
                            let em = &m - &p.target;
                            let eb = &b - &p.target;
                            Ok((em.dot(&em), eb.dot(&eb)))
                        })
                        .collect()
                },
            )?;
            let mse = kahan_mean(&sq.iter().map(|(m, _)| *m).collect::<Vec<_>>())?;
            let bayes_mse = kahan_mean(&sq.iter().map(|(_, b)| *b).collect::<Vec<_>>())?;
            rows.push(format!(
                "{d},{len},{},{}",
                fmt_f64(mse),
                fmt_f64(bayes_mse)
            ));
        }
    }
    w.write_csv("dim_shift.csv", "d_infer,L,mse,bayes_mse", &rows)?;
    Ok(())
}
