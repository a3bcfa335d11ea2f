//! `train`: attention training curves per seed, final weights, and the
//! baseline table for the same task.

use anyhow::Result;
use denoise_core::training::train;
use std::collections::BTreeMap;

use crate::artifacts::{fmt_f64, RunWriter};
use crate::config::ResolvedConfig;

pub fn run(cfg: &ResolvedConfig, w: &mut RunWriter) -> Result<()> {
    let spec = cfg.task.to_spec();
    let kind = cfg.attention.to_kind();

    // BTreeMap keys give the canonical row order and collapse repeated seeds.
    let mut results = BTreeMap::new();
    for &seed in &cfg.seeds {
        if results.contains_key(&seed) {
            continue;
        }
        let r = train(&spec, kind, &cfg.train.to_core(seed))?;
        results.insert(seed, r);
    }

    let mut loss_rows = Vec::new();
    let mut weight_rows = Vec::new();
    let mut summary_rows = Vec::new();
    for (seed, r) in &results {
        for rec in &r.loss_curve {
            loss_rows.push(format!(
                "{seed},{},{},{}",
                rec.epoch,
                fmt_f64(rec.train_mse),
                fmt_f64(rec.test_mse)
            ));
        }
        let mut mats = vec![("w_kq", r.weights.w_kq()?), ("w_pv", r.weights.w_pv())];
        mats.sort_by_key(|(name, _)| *name);
        for (name, m) in mats {
            for ((i, j), v) in m.indexed_iter() {
                weight_rows.push(format!("{seed},{name},{i},{j},{}", fmt_f64(*v)));
            }
        }
        summary_rows.push(format!(
            "{seed},{},{},{}",
            fmt_f64(r.summary.alpha),
            fmt_f64(r.summary.beta),
            fmt_f64(r.summary.offdiag_rms)
        ));
    }
    w.write_csv("loss_curve.csv", "seed,epoch,train_mse,test_mse", &loss_rows)?;
    w.write_csv("weights_final.csv", "seed,matrix,row,col,value", &weight_rows)?;
    w.write_csv(
        "summary.csv",
        "seed,alpha,beta,offdiag_rms",
        &summary_rows,
    )?;

    // Baselines are seed-independent references; the smallest seed's
    // held-out set is the canonical one.
    let first = results.values().next().expect("seeds validated nonempty");
    let baseline_rows: Vec<String> = first
        .baselines
        .iter()
        .map(|(kind, mse)| format!("{},{}", kind.name(), fmt_f64(*mse)))
        .collect();
    w.write_csv("baselines.csv", "kind,mse", &baseline_rows)?;
    Ok(())
}
