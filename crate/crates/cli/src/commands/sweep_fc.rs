//! `sweep-fc`: regenerate the test HPFP at each cutoff in the sweep list
//! (the fine-tuning loss keeps its own fixed cutoff) and evaluate all four
//! method tags.

use hpqsm_core::physics::{hpfp, make_hann_transfer_scaled, synth_complex};

use crate::cases::{load_eval_cases, load_manifest, EvalCase};
use crate::commands::engine::{
    dataset_dir, evaluate_cases, load_checkpoints, EvalContext, ALL_METHODS,
};
use crate::config::ExperimentConfig;
use crate::table::{aggregate, write_aggregate_csv, write_metrics_csv, write_roi_csv, MetricsRow, RoiRow};
use crate::CliError;

/// Cutoffs below this are flagged: the strong filtering regime carries no
/// fine-tuning improvement guarantee.
pub const FC_FLAG_BELOW: f64 = 0.3;
pub const FC_FLAG_NOTE: &str = "ft-improvement-not-expected";

pub fn cmd_sweep_fc(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let data_dir = dataset_dir(cfg);
    let manifest = load_manifest(&data_dir)?;
    let mut cases = load_eval_cases(&data_dir, &manifest)?;
    // attach phase volumes for regeneration
    let phases: Vec<hpqsm_core::RealVolume<f64>> = cases
        .iter()
        .map(|c| Ok(hpqsm_core::qvol::read_real(&data_dir.join(&c.record.phase_path))?))
        .collect::<Result<_, CliError>>()?;
    let nets = load_checkpoints(cfg)?;

    let out_dir = cfg.output.dir.join("sweep_fc");
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::runtime(format!("creating {}: {e}", out_dir.display())))?;

    let mut all_rows: Vec<MetricsRow> = Vec::new();
    let mut all_roi: Vec<RoiRow> = Vec::new();

    for &fc in &cfg.sweep.fc {
        let regen: Vec<EvalCase> = cases
            .iter()
            .zip(&phases)
            .map(|(c, phase)| {
                let complex = synth_complex(&c.magnitude, phase)?;
                let h = make_hann_transfer_scaled::<f64>(c.chi.grid(), fc, cfg.dataset.beta_scale)?;
                Ok(EvalCase {
                    id: c.id.clone(),
                    fc,
                    hpfp: hpfp(&complex, &h)?,
                    chi: c.chi.clone(),
                    magnitude: c.magnitude.clone(),
                    labels: c.labels.clone(),
                    record: c.record.clone(),
                })
            })
            .collect::<Result<_, CliError>>()?;

        let mut ctx = EvalContext::new(cfg, &nets, "sweep-fc", &out_dir)?;
        ctx.variant = format!("fc{}", fc);
        if fc < FC_FLAG_BELOW {
            ctx.note = FC_FLAG_NOTE.to_string();
        }
        let (rows, roi) = evaluate_cases(&ctx, &regen, &ALL_METHODS)?;
        println!(
            "sweep-fc {fc}: mean rmse by method {}",
            summarize(&rows)
        );
        all_rows.extend(rows);
        all_roi.extend(roi);
    }

    // extra axis: emulate an unknown filter by scaling the passband
    // constant at the training cutoff
    for &scale in &cfg.sweep.hpfp_beta_scales {
        let fc = cfg.dataset.train_fc;
        let regen: Vec<EvalCase> = cases
            .iter()
            .zip(&phases)
            .map(|(c, phase)| {
                let complex = synth_complex(&c.magnitude, phase)?;
                let h = make_hann_transfer_scaled::<f64>(c.chi.grid(), fc, cfg.dataset.beta_scale * scale)?;
                Ok(EvalCase {
                    id: c.id.clone(),
                    fc,
                    hpfp: hpfp(&complex, &h)?,
                    chi: c.chi.clone(),
                    magnitude: c.magnitude.clone(),
                    labels: c.labels.clone(),
                    record: c.record.clone(),
                })
            })
            .collect::<Result<_, CliError>>()?;
        let mut ctx = EvalContext::new(cfg, &nets, "sweep-fc", &out_dir)?;
        ctx.variant = format!("beta{}", scale);
        ctx.note = format!("hpfp-beta-scale={scale}");
        let (rows, roi) = evaluate_cases(&ctx, &regen, &ALL_METHODS)?;
        all_rows.extend(rows);
        all_roi.extend(roi);
    }

    cases.clear();
    write_metrics_csv(&out_dir.join("metrics.csv"), &all_rows)?;
    write_roi_csv(&out_dir.join("rois.csv"), &all_roi)?;
    write_aggregate_csv(&out_dir.join("report.csv"), &aggregate(&all_rows))?;
    println!("sweep-fc: wrote {}", out_dir.join("report.csv").display());
    Ok(())
}

fn summarize(rows: &[MetricsRow]) -> String {
    let mut by_method: std::collections::BTreeMap<&str, (f64, usize)> = Default::default();
    for r in rows {
        let e = by_method.entry(r.method.as_str()).or_insert((0.0, 0));
        e.0 += r.rmse;
        e.1 += 1;
    }
    by_method
        .iter()
        .map(|(m, (s, n))| format!("{m}={:.1}%", s / *n as f64))
        .collect::<Vec<_>>()
        .join(" ")
}
