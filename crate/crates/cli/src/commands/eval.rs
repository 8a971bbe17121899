//! `eval`: run the pretrained or fine-tuned methods over the stored test
//! cases and write metrics, traces and slice images.

use clap::ValueEnum;

use crate::cases::{load_eval_cases, load_manifest};
use crate::commands::engine::{
    dataset_dir, evaluate_cases, load_checkpoints, EvalContext, FINETUNED_METHODS,
    PRETRAINED_METHODS,
};
use crate::config::ExperimentConfig;
use crate::table::{write_metrics_csv, write_roi_csv};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Pretrained,
    Finetuned,
}

pub fn cmd_eval(cfg: &ExperimentConfig, mode: EvalMode) -> Result<(), CliError> {
    let data_dir = dataset_dir(cfg);
    let manifest = load_manifest(&data_dir)?;
    let cases = load_eval_cases(&data_dir, &manifest)?;
    let nets = load_checkpoints(cfg)?;

    let out_dir = cfg.output.dir.join("eval");
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::runtime(format!("creating {}: {e}", out_dir.display())))?;
    let ctx = EvalContext::new(cfg, &nets, "eval", &out_dir)?;

    let (methods, name): (&[_], &str) = match mode {
        EvalMode::Pretrained => (&PRETRAINED_METHODS, "pretrained"),
        EvalMode::Finetuned => (&FINETUNED_METHODS, "finetuned"),
    };
    let (rows, roi_rows) = evaluate_cases(&ctx, &cases, methods)?;

    let csv = out_dir.join(format!("metrics_{name}.csv"));
    write_metrics_csv(&csv, &rows)?;
    write_roi_csv(&out_dir.join(format!("rois_{name}.csv")), &roi_rows)?;
    for r in &rows {
        println!(
            "eval[{}] {} {}: rmse {:.2}% psnr {:.2} dB ssim {:.4} hfen {:.4}",
            name, r.case_id, r.method, r.rmse, r.psnr, r.ssim, r.hfen
        );
    }
    println!("eval: wrote {}", csv.display());
    Ok(())
}
