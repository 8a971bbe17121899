//! Loading stored dataset cases back into memory for training, evaluation
//! and the sweeps.

use std::path::Path;

use hpqsm_core::metrics::LabelVolume;
use hpqsm_core::phantom::{CaseRecord, DatasetManifest};
use hpqsm_core::{qvol, RealVolume};
use hpqsm_net::train::TrainCase;

use crate::CliError;

/// Fully loaded test case.
pub struct EvalCase {
    pub id: String,
    pub fc: f64,
    pub hpfp: RealVolume<f64>,
    pub chi: RealVolume<f64>,
    pub magnitude: RealVolume<f64>,
    pub labels: LabelVolume,
    pub record: CaseRecord,
}

pub fn load_manifest(data_dir: &Path) -> Result<DatasetManifest, CliError> {
    let path = data_dir.join("manifest.toml");
    if !path.exists() {
        return Err(CliError::validation(format!(
            "dataset manifest not found at {}; run the phantom command first",
            path.display()
        )));
    }
    Ok(DatasetManifest::load(&path)?)
}

pub fn load_train_cases(
    data_dir: &Path,
    manifest: &DatasetManifest,
    split: &str,
) -> Result<Vec<TrainCase<f64>>, CliError> {
    manifest
        .cases_for(split)
        .into_iter()
        .map(|c| {
            Ok(TrainCase {
                hpfp: qvol::read_real(&data_dir.join(&c.hpfp_path))?,
                chi: qvol::read_real(&data_dir.join(&c.chi_path))?,
            })
        })
        .collect()
}

pub fn load_eval_cases(
    data_dir: &Path,
    manifest: &DatasetManifest,
) -> Result<Vec<EvalCase>, CliError> {
    manifest
        .cases_for(hpqsm_core::phantom::SPLIT_TEST)
        .into_iter()
        .map(|c| {
            let rois: RealVolume<f64> = qvol::read_real(&data_dir.join(&c.rois_path))?;
            Ok(EvalCase {
                id: c.id.clone(),
                fc: c.fc,
                hpfp: qvol::read_real(&data_dir.join(&c.hpfp_path))?,
                chi: qvol::read_real(&data_dir.join(&c.chi_path))?,
                magnitude: qvol::read_real(&data_dir.join(&c.magnitude_path))?,
                labels: LabelVolume::from_real(&rois)?,
                record: c.clone(),
            })
        })
        .collect()
}
