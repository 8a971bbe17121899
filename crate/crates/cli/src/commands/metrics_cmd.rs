//! `metrics`: recompute quality metrics for a pair of stored volumes.

use std::path::Path;

use hpqsm_core::metrics::{self, LabelVolume};
use hpqsm_core::qvol;

use crate::config::ExperimentConfig;
use crate::table::{MetricsRow, METRICS_HEADER};
use crate::CliError;

pub fn cmd_metrics(
    cfg: &ExperimentConfig,
    estimate: &Path,
    reference: &Path,
    labels: Option<&Path>,
) -> Result<(), CliError> {
    let est: hpqsm_core::RealVolume<f64> = qvol::read_real(estimate)?;
    let refv: hpqsm_core::RealVolume<f64> = qvol::read_real(reference)?;
    let label_vol = labels
        .map(|p| -> Result<LabelVolume, CliError> {
            let v: hpqsm_core::RealVolume<f64> = qvol::read_real(p)?;
            Ok(LabelVolume::from_real(&v)?)
        })
        .transpose()?;

    let report = metrics::evaluate(&est, &refv, label_vol.as_ref())?;
    let roi_mae = if report.roi_means.is_empty() {
        f64::NAN
    } else {
        let ref_means = metrics::roi_means(&refv, label_vol.as_ref().unwrap())?;
        let mut acc = 0.0;
        for (id, m) in &report.roi_means {
            acc += (m - ref_means.get(id).copied().unwrap_or(f64::NAN)).abs();
        }
        acc / report.roi_means.len() as f64
    };

    let grid = refv.grid();
    let row = MetricsRow {
        config_hash: cfg.hash(),
        source: "metrics".into(),
        case_id: estimate
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "volume".into()),
        method: "recomputed".into(),
        fc: f64::NAN,
        dx_mm: grid.dx(),
        dy_mm: grid.dy(),
        dz_mm: grid.dz(),
        rmse: report.rmse_percent,
        psnr: report.psnr_db,
        ssim: report.ssim,
        hfen: report.hfen,
        roi_mae_ppm: roi_mae,
        loss_ft_initial: None,
        loss_ft_final: None,
        ft_iterations: None,
        note: String::new(),
    };
    println!("{METRICS_HEADER}");
    println!(
        "{},{},{},{},{},{},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},,,,",
        row.config_hash,
        row.source,
        row.case_id,
        row.method,
        row.fc,
        row.dx_mm,
        row.dy_mm,
        row.dz_mm,
        row.rmse,
        row.psnr,
        row.ssim,
        row.hfen,
        row.roi_mae_ppm,
    );
    Ok(())
}
