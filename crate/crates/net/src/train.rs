//! Patch-based pre-training with the sum of per-stage L1 losses.

use std::path::{Path, PathBuf};

use hpqsm_core::{wrap_phase, RealVolume, Scalar};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, quantize_params_f32};
use crate::unet::Mode;
use crate::{Adam, FeatureMap, NetError, Prognet, Result};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub patch: [usize; 3],
    pub stride: [usize; 3],
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn desk_scale() -> Self {
        Self {
            epochs: 20,
            lr: 1e-3,
            patch: [32, 32, 8],
            stride: [32, 32, 8],
            batch_size: 4,
            seed: 23,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(NetError::Shape("epochs and batch size must be >= 1".into()));
        }
        for a in 0..3 {
            if self.stride[a] == 0 || self.patch[a] == 0 || self.stride[a] > self.patch[a] {
                return Err(NetError::Shape(format!(
                    "stride {:?} must be in [1, patch {:?}] per axis",
                    self.stride, self.patch
                )));
            }
        }
        Ok(())
    }
}

/// Patch origins along one axis: multiples of the stride, with the final
/// origin clamped so the last patch touches the boundary.
pub fn patch_origins_axis(n: usize, patch: usize, stride: usize) -> Result<Vec<usize>> {
    if patch > n {
        return Err(NetError::Shape(format!("patch {patch} exceeds volume extent {n}")));
    }
    let mut out = Vec::new();
    let mut pos = 0;
    while pos + patch <= n {
        out.push(pos);
        pos += stride;
    }
    let last = n - patch;
    if *out.last().expect("at least origin 0") != last {
        out.push(last);
    }
    Ok(out)
}

/// Deterministic grid of 3D patch origins (x fastest).
pub fn extract_patch_origins(
    dims: (usize, usize, usize),
    patch: [usize; 3],
    stride: [usize; 3],
) -> Result<Vec<[usize; 3]>> {
    let xs = patch_origins_axis(dims.0, patch[0], stride[0])?;
    let ys = patch_origins_axis(dims.1, patch[1], stride[1])?;
    let zs = patch_origins_axis(dims.2, patch[2], stride[2])?;
    let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                out.push([x, y, z]);
            }
        }
    }
    Ok(out)
}

fn crop<S: Scalar>(v: &RealVolume<S>, origin: [usize; 3], patch: [usize; 3]) -> FeatureMap<S> {
    let (nx, ny, _) = v.grid().counts();
    let mut data = Vec::with_capacity(patch[0] * patch[1] * patch[2]);
    for z in 0..patch[2] {
        for y in 0..patch[1] {
            let row = (origin[0]) + nx * ((origin[1] + y) + ny * (origin[2] + z));
            data.extend_from_slice(&v.data()[row..row + patch[0]]);
        }
    }
    FeatureMap::from_data(1, patch[0], patch[1], patch[2], data).expect("crop dims consistent")
}

/// (input, label) patch pairs for one volume pair.
pub fn extract_patches<S: Scalar>(
    input: &RealVolume<S>,
    label: &RealVolume<S>,
    patch: [usize; 3],
    stride: [usize; 3],
) -> Result<Vec<(FeatureMap<S>, FeatureMap<S>)>> {
    if !input.grid().same_geometry(label.grid()) {
        return Err(NetError::Shape("patch extraction needs matching grids".into()));
    }
    let origins = extract_patch_origins(input.grid().counts(), patch, stride)?;
    Ok(origins
        .into_iter()
        .map(|o| (crop(input, o, patch), crop(label, o, patch)))
        .collect())
}

/// One training or validation case: HPFP input and susceptibility label.
#[derive(Clone, Debug)]
pub struct TrainCase<S: Scalar> {
    pub hpfp: RealVolume<S>,
    pub chi: RealVolume<S>,
}

/// Mean-per-voxel L1 between a stage output and the label patch; returns
/// the loss and the output gradient.
fn l1_and_grad<S: Scalar>(out: &FeatureMap<S>, label: &FeatureMap<S>) -> (S, FeatureMap<S>) {
    let n = hpqsm_core::sc::<S>(out.data().len() as f64);
    let mut grad = out.clone();
    let mut loss = S::zero();
    for (g, &l) in grad.data_mut().iter_mut().zip(label.data()) {
        let d = *g - l;
        loss += d.abs();
        *g = if d > S::zero() {
            S::one() / n
        } else if d < S::zero() {
            -S::one() / n
        } else {
            S::zero()
        };
    }
    (loss / n, grad)
}

/// Per-stage mean L1 losses over whole volumes in eval mode.
pub fn stage_losses<S: Scalar>(net: &mut Prognet<S>, cases: &[TrainCase<S>]) -> Result<Vec<f64>> {
    let k = net.num_stages();
    let mut acc = vec![0.0f64; k];
    for case in cases {
        let input = FeatureMap::from_volume(&case.hpfp);
        let label = FeatureMap::from_volume(&case.chi);
        let outs = net.forward_all(&input, Mode::Eval, false)?;
        for (s, out) in outs.iter().enumerate() {
            let (loss, _) = l1_and_grad(out, &label);
            acc[s] += loss.as_f64();
        }
    }
    for a in &mut acc {
        *a /= cases.len() as f64;
    }
    Ok(acc)
}

#[derive(Clone, Debug)]
pub struct EpochRow {
    pub epoch: usize,
    pub stage_train: Vec<f64>,
    pub stage_val: Vec<f64>,
}

impl EpochRow {
    pub fn train_total(&self) -> f64 {
        self.stage_train.iter().sum()
    }
    pub fn val_total(&self) -> f64 {
        self.stage_val.iter().sum()
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub checkpoint_path: PathBuf,
    pub loss_csv_path: PathBuf,
    /// Validation loss of the saved checkpoint, computed from the 32-bit
    /// quantized parameters (what a reload reproduces exactly).
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochRow>,
}

fn write_loss_csv(path: &Path, history: &[EpochRow]) -> Result<()> {
    let mut text = String::from("epoch,stage,train_loss,val_loss\n");
    for row in history {
        for (s, (tr, va)) in row.stage_train.iter().zip(&row.stage_val).enumerate() {
            text.push_str(&format!("{},{},{:.17e},{:.17e}\n", row.epoch, s + 1, tr, va));
        }
        text.push_str(&format!(
            "{},total,{:.17e},{:.17e}\n",
            row.epoch,
            row.train_total(),
            row.val_total()
        ));
    }
    std::fs::write(path, text).map_err(|e| NetError::io(path.display().to_string(), e))
}

/// Pre-train the progressive network, saving the best-validation checkpoint
/// and a per-epoch loss log. Training is bit-reproducible for a fixed seed.
pub fn pretrain<S: Scalar>(
    net: &mut Prognet<S>,
    train_cases: &[TrainCase<S>],
    val_cases: &[TrainCase<S>],
    cfg: &TrainConfig,
    checkpoint_path: &Path,
    loss_csv_path: &Path,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if train_cases.is_empty() || val_cases.is_empty() {
        return Err(NetError::Shape("need at least one train and one val case".into()));
    }
    // wrap phases once; labels are in ppm and pass through
    let train_cases: Vec<TrainCase<S>> = train_cases
        .iter()
        .map(|c| TrainCase { hpfp: c.hpfp.map(wrap_phase), chi: c.chi.clone() })
        .collect();
    let val_cases: Vec<TrainCase<S>> = val_cases
        .iter()
        .map(|c| TrainCase { hpfp: c.hpfp.map(wrap_phase), chi: c.chi.clone() })
        .collect();

    let k = net.num_stages();
    let mut patches = Vec::new();
    for case in &train_cases {
        patches.extend(extract_patches(&case.hpfp, &case.chi, cfg.patch, cfg.stride)?);
    }
    let div = net.config().divisibility();
    if cfg.patch.iter().any(|&p| p % div != 0) {
        return Err(NetError::Shape(format!(
            "patch {:?} not divisible by network factor {div}",
            cfg.patch
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::<S>::new(cfg.lr);
    let mut history: Vec<EpochRow> = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_quantized = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut saved_any = false;

    let abort = |epoch: usize, reason: String, saved: bool, path: &Path| NetError::TrainAborted {
        epoch,
        reason,
        checkpoint: if saved { path.display().to_string() } else { "(none)".into() },
    };

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..patches.len()).collect();
        order.shuffle(&mut rng);

        let mut train_acc = vec![0.0f64; k];
        let mut n_samples = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            net.zero_grad();
            for &idx in chunk {
                let (input, label) = &patches[idx];
                let outs = net.forward_all(input, Mode::Train, true)?;
                let mut grads = Vec::with_capacity(k);
                for (s, out) in outs.iter().enumerate() {
                    let (loss, grad) = l1_and_grad(out, label);
                    train_acc[s] += loss.as_f64();
                    grads.push(grad);
                }
                net.backward_all(&grads)?;
                n_samples += 1;
            }
            net.scale_grads(hpqsm_core::sc::<S>(1.0 / chunk.len() as f64));
            adam.begin_step();
            net.visit_trainable(&mut |name, w, g| adam.update(&name, w, g));
            adam.finish_step().map_err(|e| {
                abort(epoch, format!("{e}"), saved_any, checkpoint_path)
            })?;
        }
        for a in &mut train_acc {
            *a /= n_samples as f64;
        }

        let val_acc = stage_losses(net, &val_cases)?;
        let val_total: f64 = val_acc.iter().sum();
        let train_total: f64 = train_acc.iter().sum();
        if !val_total.is_finite() || !train_total.is_finite() {
            write_loss_csv(loss_csv_path, &history)?;
            return Err(abort(
                epoch,
                format!("non-finite loss (train {train_total}, val {val_total})"),
                saved_any,
                checkpoint_path,
            ));
        }

        history.push(EpochRow { epoch, stage_train: train_acc, stage_val: val_acc });

        if val_total < best_val {
            best_val = val_total;
            best_epoch = epoch;
            // the checkpoint stores 32-bit parameters; record the loss the
            // quantized parameters actually achieve so a reload reproduces
            // it exactly
            let mut qnet = net.clone();
            quantize_params_f32(&mut qnet);
            let qval: f64 = stage_losses(&mut qnet, &val_cases)?.iter().sum();
            checkpoint::save(net, checkpoint_path, Some(qval))?;
            best_quantized = qval;
            saved_any = true;
        }
    }

    write_loss_csv(loss_csv_path, &history)?;
    Ok(PretrainOutcome {
        checkpoint_path: checkpoint_path.to_path_buf(),
        loss_csv_path: loss_csv_path.to_path_buf(),
        best_val_loss: best_quantized,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use hpqsm_core::VoxelGrid;
    use rand::Rng;

    #[test]
    fn origin_axis_tiling() {
        assert_eq!(patch_origins_axis(64, 32, 32).unwrap(), vec![0, 32]);
        assert_eq!(patch_origins_axis(64, 64, 64).unwrap(), vec![0]);
        // production-scale clamped enumeration
        assert_eq!(patch_origins_axis(320, 128, 90).unwrap(), vec![0, 90, 180, 192]);
        assert_eq!(patch_origins_axis(48, 32, 10).unwrap(), vec![0, 10, 16]);
        assert!(patch_origins_axis(16, 32, 8).is_err());
    }

    #[test]
    fn origin_grid_counts() {
        let o = extract_patch_origins((64, 64, 16), [32, 32, 8], [32, 32, 8]).unwrap();
        assert_eq!(o.len(), 8);
        let o = extract_patch_origins((320, 320, 48), [128, 128, 32], [90, 90, 10]).unwrap();
        assert_eq!(o.len(), 48);
    }

    #[test]
    fn patches_cover_every_voxel() {
        let dims = (20, 14, 10);
        let patch = [8, 6, 4];
        let stride = [5, 4, 3];
        let origins = extract_patch_origins(dims, patch, stride).unwrap();
        let mut covered = vec![false; dims.0 * dims.1 * dims.2];
        for o in origins {
            for z in o[2]..o[2] + patch[2] {
                for y in o[1]..o[1] + patch[1] {
                    for x in o[0]..o[0] + patch[0] {
                        covered[x + dims.0 * (y + dims.1 * z)] = true;
                    }
                }
            }
        }
        assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn crop_extracts_expected_window() {
        let grid = VoxelGrid::new(8, 8, 4, 1.0, 1.0, 1.0).unwrap();
        let v = RealVolume::<f64>::from_fn(grid, |x, y, z| (x + 10 * y + 100 * z) as f64);
        let p = crop(&v, [2, 3, 1], [4, 4, 2]);
        assert_eq!(p.spatial(), (4, 4, 2));
        assert_eq!(p.data()[0], (2 + 30 + 100) as f64);
        assert_eq!(p.data()[1], (3 + 30 + 100) as f64);
    }

    #[test]
    fn zero_net_zero_labels_is_stationary() {
        let grid = VoxelGrid::new(8, 8, 4, 1.0, 1.0, 1.0).unwrap();
        let cfg = crate::unet::UnetConfig { levels: 2, widths: vec![2, 3], in_channels: 2 };
        let mut net = Prognet::<f64>::new(cfg, 2, 3).unwrap();
        for k in 0..2 {
            net.stage_mut(k).zero_params();
        }
        let before = net.snapshot_all();

        let zero_case = TrainCase {
            hpfp: RealVolume::<f64>::zeros(grid.clone()),
            chi: RealVolume::<f64>::zeros(grid),
        };
        let tcfg = TrainConfig {
            epochs: 2,
            lr: 1e-3,
            patch: [8, 8, 4],
            stride: [8, 8, 4],
            batch_size: 1,
            seed: 7,
        };
        let dir = std::env::temp_dir().join(format!("pretrain-zero-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let out = pretrain(
            &mut net,
            &[zero_case.clone()],
            &[zero_case],
            &tcfg,
            &dir.join("net.qnt"),
            &dir.join("loss.csv"),
        )
        .unwrap();
        assert_eq!(out.history[0].train_total(), 0.0);
        assert_eq!(out.best_val_loss, 0.0);
        let after = net.snapshot_all();
        assert_eq!(before, after, "zero gradients must leave parameters unchanged");
    }

    #[test]
    fn total_loss_is_sum_of_stage_terms_and_training_reduces_loss() {
        // tiny synthetic task: label is a smoothed copy of the input
        let grid = VoxelGrid::new(16, 16, 8, 1.0, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mk_case = |rng: &mut ChaCha8Rng| {
            let hpfp = RealVolume::<f64>::new(
                grid.clone(),
                (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let chi = hpfp.map(|v| 0.5 * v);
            TrainCase { hpfp, chi }
        };
        let train: Vec<_> = (0..2).map(|_| mk_case(&mut rng)).collect();
        let val = vec![mk_case(&mut rng)];

        let cfg = crate::unet::UnetConfig { levels: 2, widths: vec![4, 8], in_channels: 2 };
        let mut net = Prognet::<f64>::new(cfg, 2, 5).unwrap();
        let tcfg = TrainConfig {
            epochs: 8,
            lr: 1e-3,
            patch: [16, 16, 8],
            stride: [16, 16, 8],
            batch_size: 2,
            seed: 11,
        };
        let dir = std::env::temp_dir().join(format!("pretrain-tiny-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let out = pretrain(
            &mut net,
            &train,
            &val,
            &tcfg,
            &dir.join("net.qnt"),
            &dir.join("loss.csv"),
        )
        .unwrap();

        for row in &out.history {
            let total = row.train_total();
            let sum: f64 = row.stage_train.iter().sum();
            assert!((total - sum).abs() < 1e-12);
        }
        let first = out.history.first().unwrap().train_total();
        let last = out.history.last().unwrap().train_total();
        assert!(last < first, "training loss should decrease: {first} -> {last}");
        assert!(out.history.iter().map(|r| r.val_total()).fold(f64::INFINITY, f64::min) <= out.history[0].val_total());

        // reload reproduces the recorded quantized validation loss exactly
        let (mut loaded, meta) = checkpoint::load::<f64>(&dir.join("net.qnt")).unwrap();
        let val_wrapped: Vec<TrainCase<f64>> = val
            .iter()
            .map(|c| TrainCase { hpfp: c.hpfp.map(hpqsm_core::wrap_phase), chi: c.chi.clone() })
            .collect();
        let reloaded_val: f64 = stage_losses(&mut loaded, &val_wrapped).unwrap().iter().sum();
        assert_eq!(meta.val_loss.unwrap(), reloaded_val);
        assert_eq!(out.best_val_loss, reloaded_val);
    }
}
