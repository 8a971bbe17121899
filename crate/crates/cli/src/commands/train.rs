//! `train`: pre-train the progressive network (and the single-stage
//! baseline) on the phantom dataset.

use hpqsm_core::phantom::{SPLIT_TRAIN, SPLIT_VAL};
use hpqsm_net::train::pretrain;
use hpqsm_net::Prognet;

use crate::cases::{load_manifest, load_train_cases};
use crate::commands::engine::{checkpoint_dir, dataset_dir};
use crate::config::ExperimentConfig;
use crate::CliError;

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let data_dir = dataset_dir(cfg);
    let manifest = load_manifest(&data_dir)?;
    let train_cases = load_train_cases(&data_dir, &manifest, SPLIT_TRAIN)?;
    let val_cases = load_train_cases(&data_dir, &manifest, SPLIT_VAL)?;

    let ckpt_dir = checkpoint_dir(cfg);
    std::fs::create_dir_all(&ckpt_dir)
        .map_err(|e| CliError::runtime(format!("creating {}: {e}", ckpt_dir.display())))?;

    let tcfg = cfg.train_config();
    let ucfg = cfg.unet_config();

    let mut prognet = Prognet::<f64>::new(ucfg.clone(), cfg.network.stages, cfg.network.seed)?;
    println!(
        "train: progressive net K={} with {} parameters per stage",
        cfg.network.stages,
        prognet.num_params() / cfg.network.stages
    );
    let out = pretrain(
        &mut prognet,
        &train_cases,
        &val_cases,
        &tcfg,
        &ckpt_dir.join("prognet.qnt"),
        &ckpt_dir.join("prognet_loss.csv"),
    )?;
    println!(
        "train: prognet best val loss {:.6e} at epoch {} -> {}",
        out.best_val_loss,
        out.best_epoch,
        out.checkpoint_path.display()
    );

    if cfg.network.train_baseline {
        let mut unet = Prognet::<f64>::new(ucfg, 1, cfg.network.seed)?;
        let out = pretrain(
            &mut unet,
            &train_cases,
            &val_cases,
            &tcfg,
            &ckpt_dir.join("unet.qnt"),
            &ckpt_dir.join("unet_loss.csv"),
        )?;
        println!(
            "train: unet baseline best val loss {:.6e} at epoch {} -> {}",
            out.best_val_loss,
            out.best_epoch,
            out.checkpoint_path.display()
        );
    }
    Ok(())
}
