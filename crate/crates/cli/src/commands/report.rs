//! `report`: merge every metrics CSV under the output directory into one
//! table plus a grouped mean/stdev summary.

use crate::config::ExperimentConfig;
use crate::table::{aggregate, read_metrics_csv, write_aggregate_csv, write_metrics_csv, MetricsRow};
use crate::CliError;

pub fn cmd_report(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let candidates = [
        cfg.output.dir.join("eval/metrics_pretrained.csv"),
        cfg.output.dir.join("eval/metrics_finetuned.csv"),
        cfg.output.dir.join("sweep_fc/metrics.csv"),
        cfg.output.dir.join("sweep_voxel/metrics.csv"),
    ];
    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut found = 0;
    for path in &candidates {
        if path.exists() {
            rows.extend(read_metrics_csv(path)?);
            found += 1;
        }
    }
    if found == 0 {
        return Err(CliError::validation(format!(
            "no metrics CSVs found under {}; run eval or a sweep first",
            cfg.output.dir.display()
        )));
    }

    let report_dir = cfg.output.dir.join("report");
    std::fs::create_dir_all(&report_dir)
        .map_err(|e| CliError::runtime(format!("creating {}: {e}", report_dir.display())))?;
    write_metrics_csv(&report_dir.join("merged.csv"), &rows)?;
    let groups = aggregate(&rows);
    write_aggregate_csv(&report_dir.join("aggregate.csv"), &groups)?;

    println!("report: merged {} rows from {found} files", rows.len());
    for (k, s) in &groups {
        let flag = if s.note.is_empty() { String::new() } else { format!("  [{}]", s.note) };
        println!(
            "  {:<12} {:<11} fc {:<5} dx {:<6} n={}  rmse {:.2} ± {:.2}  ssim {:.4} ± {:.4}{}",
            k.source,
            k.method,
            k.fc_milli as f64 / 1000.0,
            k.dx_micro as f64 / 1000.0,
            s.n,
            s.rmse.0,
            s.rmse.1,
            s.ssim.0,
            s.ssim.1,
            flag
        );
    }
    Ok(())
}
