//! Metrics tables: per-case CSV rows, per-ROI rows, and grouped
//! mean/stdev aggregation for the sweep reports.

use std::collections::BTreeMap;
use std::path::Path;

use crate::CliError;

pub const METRICS_HEADER: &str = "config_hash,source,case,method,fc,dx_mm,dy_mm,dz_mm,rmse_percent,psnr_db,ssim,hfen,roi_mae_ppm,loss_ft_initial,loss_ft_final,ft_iterations,note";
pub const ROI_HEADER: &str = "config_hash,source,case,method,fc,roi_id,mean_est_ppm,mean_ref_ppm";

#[derive(Clone, Debug)]
pub struct MetricsRow {
    pub config_hash: String,
    pub source: String,
    pub case_id: String,
    pub method: String,
    pub fc: f64,
    pub dx_mm: f64,
    pub dy_mm: f64,
    pub dz_mm: f64,
    pub rmse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub hfen: f64,
    pub roi_mae_ppm: f64,
    pub loss_ft_initial: Option<f64>,
    pub loss_ft_final: Option<f64>,
    pub ft_iterations: Option<usize>,
    pub note: String,
}

#[derive(Clone, Debug)]
pub struct RoiRow {
    pub config_hash: String,
    pub source: String,
    pub case_id: String,
    pub method: String,
    pub fc: f64,
    pub roi_id: u32,
    pub mean_est_ppm: f64,
    pub mean_ref_ppm: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.17e}")).unwrap_or_default()
}

impl MetricsRow {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{},{},{}",
            self.config_hash,
            self.source,
            self.case_id,
            self.method,
            self.fc,
            self.dx_mm,
            self.dy_mm,
            self.dz_mm,
            self.rmse,
            self.psnr,
            self.ssim,
            self.hfen,
            self.roi_mae_ppm,
            opt(self.loss_ft_initial),
            opt(self.loss_ft_final),
            self.ft_iterations.map(|x| x.to_string()).unwrap_or_default(),
            self.note,
        )
    }

    fn from_csv(line: &str) -> Option<MetricsRow> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 17 {
            return None;
        }
        let num = |s: &str| s.parse::<f64>().ok();
        Some(MetricsRow {
            config_hash: f[0].to_string(),
            source: f[1].to_string(),
            case_id: f[2].to_string(),
            method: f[3].to_string(),
            fc: num(f[4])?,
            dx_mm: num(f[5])?,
            dy_mm: num(f[6])?,
            dz_mm: num(f[7])?,
            rmse: num(f[8])?,
            psnr: num(f[9])?,
            ssim: num(f[10])?,
            hfen: num(f[11])?,
            roi_mae_ppm: num(f[12])?,
            loss_ft_initial: num(f[13]),
            loss_ft_final: num(f[14]),
            ft_iterations: f[15].parse::<usize>().ok(),
            note: f[16].to_string(),
        })
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<(), CliError> {
    let mut text = String::from(METRICS_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::runtime(format!("reading {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        _ => return Err(CliError::runtime(format!("{}: unexpected CSV header", path.display()))),
    }
    Ok(lines.filter_map(MetricsRow::from_csv).collect())
}

pub fn write_roi_csv(path: &Path, rows: &[RoiRow]) -> Result<(), CliError> {
    let mut text = String::from(ROI_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{:.17e},{:.17e}\n",
            r.config_hash, r.source, r.case_id, r.method, r.fc, r.roi_id, r.mean_est_ppm, r.mean_ref_ppm
        ));
    }
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
}

/// Group key for aggregation: (source, method, fc, in-plane voxel size).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct GroupKey {
    pub source: String,
    pub method: String,
    pub fc_milli: i64,
    pub dx_micro: i64,
}

#[derive(Clone, Debug, Default)]
pub struct GroupStats {
    pub n: usize,
    pub rmse: (f64, f64),
    pub psnr: (f64, f64),
    pub ssim: (f64, f64),
    pub hfen: (f64, f64),
    pub note: String,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate(rows: &[MetricsRow]) -> BTreeMap<GroupKey, GroupStats> {
    let mut groups: BTreeMap<GroupKey, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        let key = GroupKey {
            source: r.source.clone(),
            method: r.method.clone(),
            fc_milli: (r.fc * 1000.0).round() as i64,
            dx_micro: (r.dx_mm * 1000.0).round() as i64,
        };
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(k, rs)| {
            let pick = |f: fn(&MetricsRow) -> f64| -> Vec<f64> { rs.iter().map(|r| f(r)).collect() };
            let note = rs
                .iter()
                .map(|r| r.note.as_str())
                .find(|n| !n.is_empty())
                .unwrap_or("")
                .to_string();
            let stats = GroupStats {
                n: rs.len(),
                rmse: mean_std(&pick(|r| r.rmse)),
                psnr: mean_std(&pick(|r| r.psnr)),
                ssim: mean_std(&pick(|r| r.ssim)),
                hfen: mean_std(&pick(|r| r.hfen)),
                note,
            };
            (k, stats)
        })
        .collect()
}

pub const AGGREGATE_HEADER: &str = "source,method,fc,dx_mm,n,rmse_mean,rmse_std,psnr_mean,psnr_std,ssim_mean,ssim_std,hfen_mean,hfen_std,note";

pub fn write_aggregate_csv(path: &Path, groups: &BTreeMap<GroupKey, GroupStats>) -> Result<(), CliError> {
    let mut text = String::from(AGGREGATE_HEADER);
    text.push('\n');
    for (k, s) in groups {
        text.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            k.source,
            k.method,
            k.fc_milli as f64 / 1000.0,
            k.dx_micro as f64 / 1000.0,
            s.n,
            s.rmse.0,
            s.rmse.1,
            s.psnr.0,
            s.psnr.1,
            s.ssim.0,
            s.ssim.1,
            s.hfen.0,
            s.hfen.1,
            s.note,
        ));
    }
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(case: &str, method: &str, rmse: f64) -> MetricsRow {
        MetricsRow {
            config_hash: "abc".into(),
            source: "eval".into(),
            case_id: case.into(),
            method: method.into(),
            fc: 0.5,
            dx_mm: 0.75,
            dy_mm: 0.75,
            dz_mm: 3.0,
            rmse,
            psnr: 20.0,
            ssim: 0.9,
            hfen: 0.5,
            roi_mae_ppm: 0.01,
            loss_ft_initial: None,
            loss_ft_final: Some(1.25),
            ft_iterations: Some(12),
            note: String::new(),
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row("a", "prognet", 50.0), row("b", "prognet", 60.0)];
        let path = std::env::temp_dir().join(format!("metrics-{}.csv", std::process::id()));
        write_metrics_csv(&path, &rows).unwrap();
        let back = read_metrics_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].case_id, "a");
        assert_eq!(back[0].loss_ft_final, Some(1.25));
        assert_eq!(back[0].loss_ft_initial, None);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn aggregation_groups_and_averages() {
        let rows = vec![row("a", "prognet", 50.0), row("b", "prognet", 70.0), row("a", "unet", 80.0)];
        let groups = aggregate(&rows);
        assert_eq!(groups.len(), 2);
        let key = GroupKey {
            source: "eval".into(),
            method: "prognet".into(),
            fc_milli: 500,
            dx_micro: 750,
        };
        let g = &groups[&key];
        assert_eq!(g.n, 2);
        assert!((g.rmse.0 - 60.0).abs() < 1e-12);
        assert!((g.rmse.1 - (200.0f64).sqrt()).abs() < 1e-9);
    }
}
