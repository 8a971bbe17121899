//! Experiment configuration file: structured TOML with one section per
//! pipeline stage. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hpqsm_core::phantom::DatasetConfig;
use hpqsm_core::physics::ScanParams;
use hpqsm_core::VoxelGrid;
use hpqsm_net::finetune::FinetuneConfig;
use hpqsm_net::train::TrainConfig;
use hpqsm_net::UnetConfig;

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx_mm: f64,
    pub dy_mm: f64,
    pub dz_mm: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
    pub train_fc: f64,
    #[serde(default = "one")]
    pub beta_scale: f64,
    #[serde(default)]
    pub noise_std: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub b0_t: f64,
    pub te_s: f64,
    pub gamma_bar_hz_per_t: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub levels: usize,
    pub widths: Vec<usize>,
    pub stages: usize,
    pub seed: u64,
    /// Also train a single-stage baseline with the same budget.
    #[serde(default = "yes")]
    pub train_baseline: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub lr: f64,
    pub patch: [usize; 3],
    pub stride: [usize; 3],
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSection {
    pub lr: f64,
    pub rel_change_threshold: f64,
    pub fluctuation_window: usize,
    pub max_iters: usize,
    pub loss_fc: f64,
    #[serde(default = "one")]
    pub hann_beta_scale: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub fc: Vec<f64>,
    pub voxel_matrices: Vec<usize>,
    /// Extra axis: regenerate test HPFP with a scaled passband constant to
    /// emulate an unknown filter.
    #[serde(default)]
    pub hpfp_beta_scales: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub scan: ScanSection,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub finetune: FinetuneSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(CliError::validation(msg)) };
        v(self.dataset.train_fc > 0.0 && self.dataset.train_fc <= 1.0, "dataset.train_fc must lie in (0, 1]")?;
        for &fc in &self.sweep.fc {
            v(fc > 0.0 && fc <= 1.0, &format!("sweep.fc entry {fc} must lie in (0, 1]"))?;
        }
        let div = 1usize << (self.network.levels.saturating_sub(1));
        v(self.network.levels >= 1, "network.levels must be >= 1")?;
        v(self.network.widths.len() == self.network.levels, "network.widths must list one width per level")?;
        v(self.network.stages >= 1, "network.stages must be >= 1")?;
        for &m in &self.sweep.voxel_matrices {
            v(m >= 4, &format!("sweep.voxel_matrices entry {m} must be >= 4"))?;
            v(m % div == 0, &format!("sweep.voxel_matrices entry {m} must be divisible by the network factor {div}"))?;
        }
        v(self.dataset.nx % div == 0 && self.dataset.ny % div == 0 && self.dataset.nz % div == 0,
          &format!("dataset grid must be divisible by the network factor {div}"))?;
        v(self.finetune.loss_fc > 0.0 && self.finetune.loss_fc <= 1.0, "finetune.loss_fc must lie in (0, 1]")?;
        Ok(())
    }

    pub fn grid(&self) -> Result<VoxelGrid, CliError> {
        VoxelGrid::new(
            self.dataset.nx,
            self.dataset.ny,
            self.dataset.nz,
            self.dataset.dx_mm,
            self.dataset.dy_mm,
            self.dataset.dz_mm,
        )
        .map_err(|e| CliError::validation(format!("dataset grid: {e}")))
    }

    pub fn scan_params(&self) -> Result<ScanParams, CliError> {
        ScanParams::new(self.scan.b0_t, self.scan.te_s, self.scan.gamma_bar_hz_per_t)
            .map_err(|e| CliError::validation(format!("scan section: {e}")))
    }

    pub fn dataset_config(&self) -> Result<DatasetConfig, CliError> {
        Ok(DatasetConfig {
            grid: self.grid()?,
            n_train: self.dataset.n_train,
            n_val: self.dataset.n_val,
            n_test: self.dataset.n_test,
            seed: self.dataset.seed,
            fc: self.dataset.train_fc,
            beta_scale: self.dataset.beta_scale,
            noise_std: self.dataset.noise_std,
            scan: self.scan_params()?,
        })
    }

    pub fn unet_config(&self) -> UnetConfig {
        UnetConfig {
            levels: self.network.levels,
            widths: self.network.widths.clone(),
            in_channels: 2,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            lr: self.training.lr,
            patch: self.training.patch,
            stride: self.training.stride,
            batch_size: self.training.batch_size,
            seed: self.training.seed,
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        FinetuneConfig {
            lr: self.finetune.lr,
            rel_change_threshold: self.finetune.rel_change_threshold,
            fluctuation_window: self.finetune.fluctuation_window,
            max_iters: self.finetune.max_iters,
            loss_fc: self.finetune.loss_fc,
            hann_beta_scale: self.finetune.hann_beta_scale,
        }
    }

    /// Hash of the effective configuration (after CLI overrides), carried
    /// in every CSV so reports are traceable.
    pub fn hash(&self) -> String {
        let canon = toml::to_string(self).expect("config serializable");
        let digest = Sha256::digest(canon.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..12].to_string()
    }

    /// Desk-scale default configuration.
    pub fn desk_default(out_dir: PathBuf) -> Self {
        Self {
            dataset: DatasetSection {
                nx: 64,
                ny: 64,
                nz: 16,
                dx_mm: 0.75,
                dy_mm: 0.75,
                dz_mm: 3.0,
                n_train: 6,
                n_val: 2,
                n_test: 4,
                seed: 17,
                train_fc: 0.5,
                beta_scale: 1.0,
                noise_std: 0.0,
            },
            scan: ScanSection { b0_t: 3.0, te_s: 0.0227, gamma_bar_hz_per_t: 42.577e6 },
            network: NetworkSection {
                levels: 3,
                widths: vec![8, 16, 32],
                stages: 2,
                seed: 7,
                train_baseline: true,
            },
            training: TrainingSection {
                epochs: 20,
                lr: 1e-3,
                patch: [32, 32, 8],
                stride: [32, 32, 8],
                batch_size: 4,
                seed: 23,
            },
            finetune: FinetuneSection {
                lr: 1e-4,
                rel_change_threshold: 5e-3,
                fluctuation_window: 3,
                max_iters: 200,
                loss_fc: 0.5,
                hann_beta_scale: 1.0,
            },
            sweep: SweepSection {
                fc: vec![0.25, 0.375, 0.5, 0.625, 0.75],
                voxel_matrices: vec![80, 52],
                hpfp_beta_scales: vec![],
            },
            output: OutputSection { dir: out_dir },
        }
    }
}
