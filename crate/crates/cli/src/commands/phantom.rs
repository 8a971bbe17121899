//! `phantom`: generate the synthetic dataset and its manifest.

use hpqsm_core::phantom::make_dataset;

use crate::commands::engine::dataset_dir;
use crate::config::ExperimentConfig;
use crate::CliError;

pub fn cmd_phantom(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let dir = dataset_dir(cfg);
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::runtime(format!("creating {}: {e}", dir.display())))?;
    let manifest = make_dataset(&cfg.dataset_config()?, &dir)?;
    let worst = manifest
        .cases
        .iter()
        .map(|c| c.self_loss_per_voxel)
        .fold(0.0f64, f64::max);
    println!(
        "phantom: wrote {} cases ({} train / {} val / {} test) to {}",
        manifest.cases.len(),
        cfg.dataset.n_train,
        cfg.dataset.n_val,
        cfg.dataset.n_test,
        dir.display()
    );
    println!("phantom: worst generation-time self-consistency loss {worst:.3e} per voxel");
    Ok(())
}
