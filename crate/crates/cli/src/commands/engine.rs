//! Shared evaluation machinery: run the four method tags over test cases,
//! compute metrics, and emit slice images plus fine-tuning traces.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use hpqsm_core::metrics::{self, LabelVolume};
use hpqsm_core::physics::ScanParams;
use hpqsm_core::RealVolume;
use hpqsm_net::checkpoint;
use hpqsm_net::finetune::{fine_tune, FinetuneConfig, FinetuneOutcome};
use hpqsm_net::Prognet;

use crate::cases::EvalCase;
use crate::config::ExperimentConfig;
use crate::png;
use crate::table::{MetricsRow, RoiRow};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Base {
    Unet,
    Prognet,
}

#[derive(Clone, Copy, Debug)]
pub struct MethodSpec {
    pub tag: &'static str,
    pub base: Base,
    pub finetuned: bool,
}

pub const ALL_METHODS: [MethodSpec; 4] = [
    MethodSpec { tag: "unet", base: Base::Unet, finetuned: false },
    MethodSpec { tag: "unet-ft", base: Base::Unet, finetuned: true },
    MethodSpec { tag: "prognet", base: Base::Prognet, finetuned: false },
    MethodSpec { tag: "prognet-ft", base: Base::Prognet, finetuned: true },
];

pub const PRETRAINED_METHODS: [MethodSpec; 2] = [
    MethodSpec { tag: "unet", base: Base::Unet, finetuned: false },
    MethodSpec { tag: "prognet", base: Base::Prognet, finetuned: false },
];

pub const FINETUNED_METHODS: [MethodSpec; 2] = [
    MethodSpec { tag: "unet-ft", base: Base::Unet, finetuned: true },
    MethodSpec { tag: "prognet-ft", base: Base::Prognet, finetuned: true },
];

pub struct Checkpoints {
    pub prognet: Prognet<f64>,
    pub unet: Option<Prognet<f64>>,
}

pub fn checkpoint_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.dir.join("checkpoints")
}

pub fn dataset_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.dir.join("dataset")
}

pub fn load_checkpoints(cfg: &ExperimentConfig) -> Result<Checkpoints, CliError> {
    let dir = checkpoint_dir(cfg);
    let prog_path = dir.join("prognet.qnt");
    if !prog_path.exists() {
        return Err(CliError::validation(format!(
            "checkpoint not found at {}; run the train command first",
            prog_path.display()
        )));
    }
    let (prognet, _) = checkpoint::load::<f64>(&prog_path)?;
    let unet_path = dir.join("unet.qnt");
    let unet = if unet_path.exists() {
        Some(checkpoint::load::<f64>(&unet_path)?.0)
    } else {
        None
    };
    Ok(Checkpoints { prognet, unet })
}

pub struct EvalContext<'a> {
    pub config: &'a ExperimentConfig,
    pub nets: &'a Checkpoints,
    pub scan: ScanParams,
    pub ft: FinetuneConfig,
    pub source: String,
    pub slices_dir: PathBuf,
    pub traces_dir: PathBuf,
    /// Appended to file stems to keep sweep points apart.
    pub variant: String,
    /// Annotation column for every produced row.
    pub note: String,
}

impl<'a> EvalContext<'a> {
    pub fn new(
        config: &'a ExperimentConfig,
        nets: &'a Checkpoints,
        source: &str,
        out_subdir: &Path,
    ) -> Result<Self, CliError> {
        let slices_dir = out_subdir.join("slices");
        let traces_dir = out_subdir.join("traces");
        std::fs::create_dir_all(&slices_dir)
            .map_err(|e| CliError::runtime(format!("creating {}: {e}", slices_dir.display())))?;
        std::fs::create_dir_all(&traces_dir)
            .map_err(|e| CliError::runtime(format!("creating {}: {e}", traces_dir.display())))?;
        Ok(Self {
            config,
            nets,
            scan: config.scan_params()?,
            ft: config.finetune_config(),
            source: source.to_string(),
            slices_dir,
            traces_dir,
            variant: String::new(),
            note: String::new(),
        })
    }
}

fn write_trace(path: &Path, outcome: &FinetuneOutcome<f64>) -> Result<(), CliError> {
    let mut text = String::from("iteration,loss_ft,relative_change\n");
    for row in &outcome.trace {
        let rel = if row.rel_change.is_nan() {
            String::new()
        } else {
            format!("{:.17e}", row.rel_change)
        };
        text.push_str(&format!("{},{:.17e},{}\n", row.iteration, row.loss, rel));
    }
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
}

fn roi_abs_err(
    pred: &RealVolume<f64>,
    reference: &RealVolume<f64>,
    labels: &LabelVolume,
) -> Result<(f64, Vec<(u32, f64, f64)>), CliError> {
    let est = metrics::roi_means(pred, labels)?;
    let refm = metrics::roi_means(reference, labels)?;
    let mut rows = Vec::new();
    let mut acc = 0.0;
    let mut n = 0usize;
    for (&id, &m_ref) in &refm {
        let m_est = est.get(&id).copied().unwrap_or(f64::NAN);
        rows.push((id, m_est, m_ref));
        acc += (m_est - m_ref).abs();
        n += 1;
    }
    Ok((if n > 0 { acc / n as f64 } else { f64::NAN }, rows))
}

/// Run the given methods over the cases; one worker per case. Returns
/// per-case metric rows and per-ROI rows, sorted by (case, method).
pub fn evaluate_cases(
    ctx: &EvalContext,
    cases: &[EvalCase],
    methods: &[MethodSpec],
) -> Result<(Vec<MetricsRow>, Vec<RoiRow>), CliError> {
    let results: Vec<Result<(Vec<MetricsRow>, Vec<RoiRow>), CliError>> = cases
        .par_iter()
        .map(|case| evaluate_one_case(ctx, case, methods))
        .collect();
    let mut rows = Vec::new();
    let mut roi_rows = Vec::new();
    for r in results {
        let (m, roi) = r?;
        rows.extend(m);
        roi_rows.extend(roi);
    }
    rows.sort_by(|a, b| (a.case_id.clone(), a.method.clone()).cmp(&(b.case_id.clone(), b.method.clone())));
    roi_rows.sort_by(|a, b| {
        (a.case_id.clone(), a.method.clone(), a.roi_id).cmp(&(b.case_id.clone(), b.method.clone(), b.roi_id))
    });
    Ok((rows, roi_rows))
}

fn evaluate_one_case(
    ctx: &EvalContext,
    case: &EvalCase,
    methods: &[MethodSpec],
) -> Result<(Vec<MetricsRow>, Vec<RoiRow>), CliError> {
    let hash = ctx.config.hash();
    let grid = case.chi.grid();
    let mut rows = Vec::new();
    let mut roi_rows = Vec::new();

    let stem = |method: &str| {
        if ctx.variant.is_empty() {
            format!("{}_{method}", case.id)
        } else {
            format!("{}_{method}_{}", case.id, ctx.variant)
        }
    };

    // reference slice once per case/variant
    let ref_stem = if ctx.variant.is_empty() {
        format!("{}_label", case.id)
    } else {
        format!("{}_label_{}", case.id, ctx.variant)
    };
    png::write_mid_slice(&ctx.slices_dir.join(format!("{ref_stem}.png")), &case.chi)?;

    for spec in methods {
        let base_net = match spec.base {
            Base::Prognet => &ctx.nets.prognet,
            Base::Unet => ctx.nets.unet.as_ref().ok_or_else(|| {
                CliError::validation("unet baseline checkpoint missing; train with train_baseline = true")
            })?,
        };
        let mut net = base_net.clone();
        let (pred, ft_outcome) = if spec.finetuned {
            let outcome = fine_tune(&mut net, &case.hpfp, &case.magnitude, &ctx.scan, &ctx.ft)?;
            (outcome.prediction.clone(), Some(outcome))
        } else {
            (net.predict(&case.hpfp)?, None)
        };

        let report = metrics::evaluate(&pred, &case.chi, None)?;
        let (roi_mae, roi_detail) = roi_abs_err(&pred, &case.chi, &case.labels)?;
        for (id, est, refm) in roi_detail {
            roi_rows.push(RoiRow {
                config_hash: hash.clone(),
                source: ctx.source.clone(),
                case_id: case.id.clone(),
                method: spec.tag.to_string(),
                fc: case.fc,
                roi_id: id,
                mean_est_ppm: est,
                mean_ref_ppm: refm,
            });
        }

        png::write_mid_slice(&ctx.slices_dir.join(format!("{}.png", stem(spec.tag))), &pred)?;
        if let Some(outcome) = &ft_outcome {
            write_trace(&ctx.traces_dir.join(format!("{}.csv", stem(spec.tag))), outcome)?;
        }

        rows.push(MetricsRow {
            config_hash: hash.clone(),
            source: ctx.source.clone(),
            case_id: case.id.clone(),
            method: spec.tag.to_string(),
            fc: case.fc,
            dx_mm: grid.dx(),
            dy_mm: grid.dy(),
            dz_mm: grid.dz(),
            rmse: report.rmse_percent,
            psnr: report.psnr_db,
            ssim: report.ssim,
            hfen: report.hfen,
            roi_mae_ppm: roi_mae,
            loss_ft_initial: ft_outcome.as_ref().map(|o| o.initial_loss),
            loss_ft_final: ft_outcome.as_ref().map(|o| o.final_loss),
            ft_iterations: ft_outcome.as_ref().map(|o| o.iterations),
            note: ctx.note.clone(),
        });
    }
    Ok((rows, roi_rows))
}
