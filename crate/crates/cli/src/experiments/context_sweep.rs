//! `context-sweep`: MSE against context length, next to the posterior-mean
//! MSE on the same prompts. `--ideal` evaluates the analytic weights instead
//! of training at every length.

use anyhow::{ensure, Result};
use denoise_core::attention::{forward, ideal_weights};
use denoise_core::baselines::predict;
use denoise_core::numerics::kahan_mean;
use denoise_core::training::train;
use denoise_core::{AttentionWeights, RngStream};

use crate::artifacts::{fmt_f64, RunWriter};
use crate::config::ResolvedConfig;
use crate::experiments::{bayes_kind, map_eval_chunks, STREAM_SWEEP};

pub fn run(cfg: &ResolvedConfig, w: &mut RunWriter) -> Result<()> {
    let spec = cfg.task.to_spec();
    let kind = cfg.attention.to_kind();
    ensure!(
        !cfg.sweep.context_lengths.is_empty(),
        "config field `sweep.context_lengths`: need at least one length"
    );
    let mut lengths = cfg.sweep.context_lengths.clone();
    lengths.sort_unstable();
    lengths.dedup();

    let mode = if cfg.ideal { "ideal" } else { "trained" };
    let stream = RngStream::new(cfg.seeds[0]).substream(STREAM_SWEEP);
    let bayes = bayes_kind(spec.case);

    let mut rows = Vec::with_capacity(lengths.len());
    for &len in &lengths {
        ensure!(len > 0, "config field `sweep.context_lengths`: lengths must be positive");
        let weights: AttentionWeights = if cfg.ideal {
            ideal_weights(&spec, kind)?
        } else {
            let mut tc = cfg.train.to_core(cfg.seeds[0]);
            tc.context_len = len;
            train(&spec, kind, &tc)?.weights
        };

        // Paired per-prompt squared errors: model and posterior mean see the
        // same (task, prompt) draws, so the excess column is a low-variance
        // paired difference.
        let sq = map_eval_chunks(
            &spec,
            cfg.eval.prompts,
            len,
            stream.substream(len as u64),
            |pairs| {
                pairs
                    .iter()
                    .map(|(task, p)| {
                        let m = forward(&weights, p)?;
                        let b = predict(bayes, task, p)?;
                        let em = &m - &p.target;
                        let eb = &b - &p.target;
                        Ok((em.dot(&em), eb.dot(&eb)))
                    })
                    .collect()
            },
        )?;
        let model: Vec<f64> = sq.iter().map(|(m, _)| *m).collect();
        let bayes_sq: Vec<f64> = sq.iter().map(|(_, b)| *b).collect();
        let mse = kahan_mean(&model)?;
        let bayes_mse = kahan_mean(&bayes_sq)?;
        rows.push(format!(
            "{len},{mode},{},{},{}",
            fmt_f64(mse),
            fmt_f64(bayes_mse),
            fmt_f64(mse - bayes_mse)
        ));
    }
    w.write_csv("context_sweep.csv", "L,mode,mse,bayes_mse,excess", &rows)?;
    Ok(())
}
