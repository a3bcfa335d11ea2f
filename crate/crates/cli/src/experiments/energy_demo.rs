//! `energy-demo`: gradient descent on the context-token energy, starting at
//! the corrupted query. Step 1 reproduces the attention output; later steps
//! show how recurrent retrieval drifts away from the clean token.

use anyhow::{bail, ensure, Result};
use denoise_core::energy::{descend, EnergyModel};
use denoise_core::numerics::mean_and_stderr;
use denoise_core::tasks::sample_dataset_with_tasks;
use denoise_core::{RngStream, TaskCase};
use ndarray::Array1;

use crate::artifacts::{fmt_f64, RunWriter};
use crate::config::ResolvedConfig;
use crate::experiments::STREAM_ENERGY;

fn dist(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let d = a - b;
    d.dot(&d).sqrt()
}

pub fn run(cfg: &ResolvedConfig, w: &mut RunWriter) -> Result<()> {
    let spec = cfg.task.to_spec();
    if spec.case != TaskCase::Sphere {
        bail!("the energy demo walks the sphere task's landscape; set task.case = sphere");
    }
    let e = &cfg.energy;
    ensure!(e.steps >= 1, "config field `energy.steps`: need at least one step");
    ensure!(e.prompts >= 1, "config field `energy.prompts`: need at least one prompt");

    let pairs = sample_dataset_with_tasks(
        &spec,
        e.prompts,
        cfg.train.context_len,
        RngStream::new(cfg.seeds[0]).substream(STREAM_ENERGY),
    )?;

    // Squared distance to the clean token per step, prompts x (steps + 1).
    let mut sq_dists = vec![Vec::with_capacity(e.prompts); e.steps + 1];
    for (i, (_, prompt)) in pairs.iter().enumerate() {
        let model = EnergyModel::log_sum_exp(prompt.context.clone(), e.alpha, e.beta)?;
        let traj = descend(&model, prompt.query.view(), e.gamma, e.steps)?;
        for (k, s) in traj.states.iter().enumerate() {
            let d = dist(s, &prompt.target);
            sq_dists[k].push(d * d);
        }
        if i < e.trajectories {
            let rows: Vec<String> = traj
                .states
                .iter()
                .zip(&traj.energies)
                .enumerate()
                .map(|(k, (s, en))| {
                    format!(
                        "{k},{},{},{}",
                        fmt_f64(*en),
                        fmt_f64(dist(s, &prompt.target)),
                        fmt_f64(dist(s, &prompt.query))
                    )
                })
                .collect();
            w.write_csv(
                &format!("trajectory_{i:03}.csv"),
                "step,energy,dist_to_target,dist_to_query",
                &rows,
            )?;
        }
    }

    let mut agg_rows = Vec::with_capacity(e.steps + 1);
    for (k, sq) in sq_dists.iter().enumerate() {
        let (mean, stderr) = mean_and_stderr(sq)?;
        agg_rows.push(format!("{k},{},{}", fmt_f64(mean), fmt_f64(stderr)));
    }
    w.write_csv(
        "aggregate.csv",
        "step,mean_sq_dist_to_target,stderr",
        &agg_rows,
    )?;

    // Paired one-step vs k-step comparison on the same prompts.
    let diffs: Vec<f64> = sq_dists[1]
        .iter()
        .zip(&sq_dists[e.steps])
        .map(|(one, last)| one - last)
        .collect();
    let (mean_diff, stderr_diff) = mean_and_stderr(&diffs)?;
    w.write_csv(
        "compare.csv",
        "step_a,step_b,mean_diff,stderr_diff,prompts",
        &[format!(
            "1,{},{},{},{}",
            e.steps,
            fmt_f64(mean_diff),
            fmt_f64(stderr_diff),
            e.prompts
        )],
    )?;
    Ok(())
}
