//! `baseline-eval`: MSE and standard error of every reference predictor
//! that applies to the task.

use anyhow::Result;
use denoise_core::baselines::{predict, BaselineKind};
use denoise_core::numerics::mean_and_stderr;
use denoise_core::RngStream;

use crate::artifacts::{fmt_f64, RunWriter};
use crate::config::ResolvedConfig;
use crate::experiments::{map_eval_chunks, STREAM_EVAL_SET};

pub fn run(cfg: &ResolvedConfig, w: &mut RunWriter) -> Result<()> {
    let spec = cfg.task.to_spec();
    let kinds = BaselineKind::applicable(spec.case);

    // One pass over the evaluation stream; every kind scores the same pairs.
    let sq = map_eval_chunks(
        &spec,
        cfg.eval.prompts,
        cfg.train.context_len,
        RngStream::new(cfg.seeds[0]).substream(STREAM_EVAL_SET),
        |pairs| {
            pairs
                .iter()
                .map(|(task, p)| {
                    kinds
                        .iter()
                        .map(|&kind| {
                            let f = predict(kind, task, p)?;
                            let r = &f - &p.target;
                            Ok(r.dot(&r))
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect()
        },
    )?;

    let mut rows = Vec::with_capacity(kinds.len());
    for (j, kind) in kinds.iter().enumerate() {
        let per_kind: Vec<f64> = sq.iter().map(|row| row[j]).collect();
        let (mse, stderr) = mean_and_stderr(&per_kind)?;
        rows.push(format!(
            "{},{},{}",
            kind.name(),
            fmt_f64(mse),
            fmt_f64(stderr)
        ));
    }
    w.write_csv("baselines.csv", "kind,mse,stderr", &rows)?;
    Ok(())
}
