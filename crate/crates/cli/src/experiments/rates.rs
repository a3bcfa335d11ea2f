//! `rates`: Monte-Carlo checks of the concentration statements behind the
//! large-context limits.
//!
//! Subspace tasks measure sup-norm deviations of the empirical projector
//! applied to one fixed query and report their quantiles against the
//! sqrt((d + ln(2/delta))/L) shape. Sphere tasks measure the softmax
//! estimator's numerator and denominator sums against their Hoeffding bounds
//! and report violation rates. One task and one query are drawn per run and
//! shared across every L, so rows differ only through the context draws.

use anyhow::{bail, ensure, Result};
use denoise_core::baselines::empirical_projector;
use denoise_core::numerics::kahan_mean;
use denoise_core::tasks::{sample_prompt, sample_task};
use denoise_core::{RngStream, TaskCase};
use ndarray::{Array1, ArrayView2};

use crate::artifacts::{fmt_f64, RunWriter};
use crate::config::ResolvedConfig;
use crate::experiments::STREAM_RATES;

pub fn run(cfg: &ResolvedConfig, w: &mut RunWriter) -> Result<()> {
    let spec = cfg.task.to_spec();
    ensure!(
        cfg.rates.trials >= 100,
        "config field `rates.trials`: need at least 100 trials for a meaningful rate"
    );
    ensure!(
        !cfg.rates.context_lengths.is_empty(),
        "config field `rates.context_lengths`: need at least one length"
    );
    let mut lengths = cfg.rates.context_lengths.clone();
    lengths.sort_unstable();
    lengths.dedup();
    for &len in &lengths {
        ensure!(len > 0, "config field `rates.context_lengths`: lengths must be positive");
    }

    let root = RngStream::new(cfg.seeds[0]).substream(STREAM_RATES);
    let task = sample_task(&spec, root.substream(0))?;
    let query = sample_prompt(&task, 1, root.substream(1))?.query;

    match spec.case {
        TaskCase::LinearSubspace => subspace_quantiles(cfg, &spec, &task, &query, &lengths, root, w),
        TaskCase::Sphere => sphere_bounds(cfg, &spec, &task, &query, &lengths, root, w),
        TaskCase::GaussianMixture => {
            bail!("the concentration statements cover the subspace and sphere tasks only")
        }
    }
}

fn subspace_quantiles(
    cfg: &ResolvedConfig,
    spec: &denoise_core::TaskSpec,
    task: &denoise_core::TaskInstance,
    query: &Array1<f64>,
    lengths: &[usize],
    root: RngStream,
    w: &mut RunWriter,
) -> Result<()> {
    let delta = cfg.rates.delta;
    let basis = task.basis().expect("subspace tasks carry a basis");
    let projected = basis.dot(&basis.t().dot(query));

    let u = spec.d as f64 + (2.0 / delta).ln();
    let query_norm = query.dot(query).sqrt();

    let mut quantiles = vec![0.5, 0.9, 1.0 - delta];
    quantiles.sort_by(|a, b| a.total_cmp(b));
    quantiles.dedup();

    let mut rows = Vec::new();
    for &len in lengths {
        let trial_stream = root.substream(2).substream(len as u64);
        let mut devs = Vec::with_capacity(cfg.rates.trials);
        for i in 0..cfg.rates.trials {
            let ctx = sample_prompt(task, len, trial_stream.substream(i as u64))?.context;
            let proj = empirical_projector(ctx.view(), spec.sigma0_sq)?;
            let diff = &proj.dot(query) - &projected;
            devs.push(diff.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
        devs.sort_by(|a, b| a.total_cmp(b));

        let ratio = u / len as f64;
        let shape = query_norm * ratio.sqrt().max(ratio);
        for &q in &quantiles {
            let idx = ((q * devs.len() as f64).ceil() as usize).clamp(1, devs.len()) - 1;
            rows.push(format!(
                "{len},{},{},{},{}",
                fmt_f64(delta),
                fmt_f64(q),
                fmt_f64(devs[idx]),
                fmt_f64(shape)
            ));
        }
    }
    w.write_csv(
        "projector_quantiles.csv",
        "L,delta,quantile,deviation,shape",
        &rows,
    )?;
    Ok(())
}

/// Per-token weight of the softmax estimator at the analytic scales.
fn token_weights(context: ArrayView2<f64>, query: &Array1<f64>, sigma_z_sq: f64) -> Array1<f64> {
    let logits = context.t().dot(query) / sigma_z_sq;
    logits.mapv(f64::exp)
}

fn sphere_bounds(
    cfg: &ResolvedConfig,
    spec: &denoise_core::TaskSpec,
    task: &denoise_core::TaskInstance,
    query: &Array1<f64>,
    lengths: &[usize],
    root: RngStream,
    w: &mut RunWriter,
) -> Result<()> {
    let delta = cfg.rates.delta;
    let trials = cfg.rates.trials;
    let basis = task.basis().expect("sphere tasks carry a basis");
    let coords_dim = (spec.d + 1) as f64;
    let par_norm = {
        let c = basis.t().dot(query);
        c.dot(&c).sqrt()
    };
    let a = spec.radius * par_norm / spec.sigma_z_sq;

    let mut rows = Vec::new();
    for &len in lengths {
        // Expectations from a reference sample 100x the per-trial size.
        let reference = sample_prompt(task, 100 * len, root.substream(3).substream(len as u64))?
            .context;
        let ref_w = token_weights(reference.view(), query, spec.sigma_z_sq);
        let e_den = ref_w.sum() / ref_w.len() as f64;
        let e_num = basis.t().dot(&reference.dot(&ref_w)) / ref_w.len() as f64;

        let trial_stream = root.substream(2).substream(len as u64);
        let mut den_viol = Vec::with_capacity(trials);
        let mut num_viol = Vec::with_capacity(trials);
        let den_bound = a.sinh() * ((2.0 / len as f64) * (2.0 / delta).ln()).sqrt();
        let num_bound = spec.radius
            * a.exp()
            * ((2.0 / len as f64) * (2.0 * coords_dim / delta).ln()).sqrt();
        for i in 0..trials {
            let ctx = sample_prompt(task, len, trial_stream.substream(i as u64))?.context;
            let wts = token_weights(ctx.view(), query, spec.sigma_z_sq);
            let den = wts.sum() / len as f64;
            let num = basis.t().dot(&ctx.dot(&wts)) / len as f64;
            let num_dev = (&num - &e_num).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            den_viol.push(if (den - e_den).abs() > den_bound { 1.0 } else { 0.0 });
            num_viol.push(if num_dev > num_bound { 1.0 } else { 0.0 });
        }
        rows.push(format!(
            "{len},{},denominator,{},{}",
            fmt_f64(delta),
            fmt_f64(den_bound),
            fmt_f64(kahan_mean(&den_viol)?)
        ));
        rows.push(format!(
            "{len},{},numerator,{},{}",
            fmt_f64(delta),
            fmt_f64(num_bound),
            fmt_f64(kahan_mean(&num_viol)?)
        ));
    }
    w.write_csv("rates.csv", "L,delta,quantity,bound,violation_rate", &rows)?;
    Ok(())
}
