//! Volumetric reconstruction quality metrics: RMSE, PSNR, SSIM, HFEN and
//! per-ROI mean susceptibility.

use std::collections::BTreeMap;

use crate::{sc, CoreError, RealVolume, Result, Scalar, VoxelGrid};

/// PSNR cap for identical volumes, in dB.
pub const PSNR_CAP_DB: f64 = 300.0;

/// LoG kernel width (voxels) used by [`hfen`].
pub const HFEN_SIGMA: f64 = 1.5;
/// LoG kernel support (odd, per axis) used by [`hfen`].
pub const HFEN_SUPPORT: usize = 15;

/// Integer ROI id map on a voxel grid; 0 is background.
#[derive(Clone, Debug)]
pub struct LabelVolume {
    grid: VoxelGrid,
    data: Vec<u32>,
}

impl LabelVolume {
    pub fn new(grid: VoxelGrid, data: Vec<u32>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(CoreError::InvalidArgument("label data length mismatch".into()));
        }
        Ok(Self { grid, data })
    }

    /// Round a real volume of integral values into ROI ids.
    pub fn from_real<S: Scalar>(v: &RealVolume<S>) -> Result<Self> {
        let data = v
            .data()
            .iter()
            .map(|&x| {
                let r = x.as_f64().round();
                if r < 0.0 || (x.as_f64() - r).abs() > 1e-6 {
                    Err(CoreError::InvalidArgument(format!("non-integral ROI label {x}")))
                } else {
                    Ok(r as u32)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid: v.grid().clone(), data })
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }
}

fn check_pair<S: Scalar>(a: &RealVolume<S>, b: &RealVolume<S>, what: &str) -> Result<()> {
    a.grid().check_same(b.grid(), what)
}

/// Normalized root mean squared error in percent:
/// `100 ||x - ref|| / ||ref||`.
pub fn rmse<S: Scalar>(estimate: &RealVolume<S>, reference: &RealVolume<S>) -> Result<S> {
    check_pair(estimate, reference, "rmse")?;
    let ref_norm = reference.norm2();
    if ref_norm == S::zero() {
        return Err(CoreError::InvalidArgument("rmse: zero reference norm".into()));
    }
    let diff: S = estimate
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(sc::<S>(100.0) * diff.sqrt() / ref_norm)
}

/// Peak signal-to-noise ratio in dB against the reference dynamic range,
/// capped at [`PSNR_CAP_DB`].
pub fn psnr<S: Scalar>(estimate: &RealVolume<S>, reference: &RealVolume<S>) -> Result<S> {
    check_pair(estimate, reference, "psnr")?;
    let (lo, hi) = min_max(reference.data());
    let range = hi - lo;
    if range == S::zero() {
        return Err(CoreError::InvalidArgument("psnr: zero reference range".into()));
    }
    let n = sc::<S>(reference.grid().len() as f64);
    let mse: S = estimate
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<S>()
        / n;
    if mse == S::zero() {
        return Ok(sc(PSNR_CAP_DB));
    }
    let v = sc::<S>(20.0) * (range / mse.sqrt()).log10();
    Ok(v.min(sc(PSNR_CAP_DB)))
}

fn min_max<S: Scalar>(data: &[S]) -> (S, S) {
    data.iter().fold((S::infinity(), S::neg_infinity()), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

/// Mean local SSIM with a uniform cubic window (7 per axis, clamped to the
/// volume extent), C1 = (0.01 L)^2, C2 = (0.03 L)^2 with L the reference
/// range. Both volumes are shifted by the reference minimum first, and only
/// fully interior windows contribute.
pub fn ssim3d<S: Scalar>(estimate: &RealVolume<S>, reference: &RealVolume<S>) -> Result<S> {
    check_pair(estimate, reference, "ssim3d")?;
    let (lo, hi) = min_max(reference.data());
    let range = (hi - lo).as_f64();
    if range == 0.0 {
        return Err(CoreError::InvalidArgument("ssim: zero reference range".into()));
    }
    let c1 = (0.01 * range) * (0.01 * range);
    let c2 = (0.03 * range) * (0.03 * range);

    let (nx, ny, nz) = estimate.grid().counts();
    let wx = 7usize.min(nx);
    let wy = 7usize.min(ny);
    let wz = 7usize.min(nz);

    let shift = lo.as_f64();
    let a: Vec<f64> = estimate.data().iter().map(|&v| v.as_f64() - shift).collect();
    let b: Vec<f64> = reference.data().iter().map(|&v| v.as_f64() - shift).collect();

    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let win_n = (wx * wy * wz) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for z0 in 0..=(nz - wz) {
        for y0 in 0..=(ny - wy) {
            for x0 in 0..=(nx - wx) {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for z in z0..z0 + wz {
                    for y in y0..y0 + wy {
                        let base = idx(x0, y, z);
                        for i in base..base + wx {
                            let va = a[i];
                            let vb = b[i];
                            sa += va;
                            sb += vb;
                            saa += va * va;
                            sbb += vb * vb;
                            sab += va * vb;
                        }
                    }
                }
                let ma = sa / win_n;
                let mb = sb / win_n;
                let va = saa / win_n - ma * ma;
                let vb = sbb / win_n - mb * mb;
                let cov = sab / win_n - ma * mb;
                let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                total += s;
                count += 1;
            }
        }
    }
    Ok(sc(total / count as f64))
}

fn log_kernel() -> Vec<f64> {
    let r = (HFEN_SUPPORT / 2) as i64;
    let s2 = HFEN_SIGMA * HFEN_SIGMA;
    let mut k = Vec::with_capacity(HFEN_SUPPORT.pow(3));
    for z in -r..=r {
        for y in -r..=r {
            for x in -r..=r {
                let r2 = (x * x + y * y + z * z) as f64;
                let g = (-r2 / (2.0 * s2)).exp();
                k.push(g * (r2 - 3.0 * s2) / (s2 * s2));
            }
        }
    }
    // zero-mean so constants are annihilated exactly
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    for v in &mut k {
        *v -= mean;
    }
    k
}

fn log_filter<S: Scalar>(v: &RealVolume<S>, kernel: &[f64]) -> Vec<f64> {
    let (nx, ny, nz) = v.grid().counts();
    let r = (HFEN_SUPPORT / 2) as i64;
    let data: Vec<f64> = v.data().iter().map(|&x| x.as_f64()).collect();
    let mut out = vec![0.0f64; data.len()];
    let idx = |x: i64, y: i64, z: i64| (x + nx as i64 * (y + ny as i64 * z)) as usize;
    for z in 0..nz as i64 {
        for y in 0..ny as i64 {
            for x in 0..nx as i64 {
                let mut acc = 0.0;
                let mut ki = 0;
                for dz in -r..=r {
                    let zz = z + dz;
                    if zz < 0 || zz >= nz as i64 {
                        ki += (HFEN_SUPPORT * HFEN_SUPPORT) as usize;
                        continue;
                    }
                    for dy in -r..=r {
                        let yy = y + dy;
                        if yy < 0 || yy >= ny as i64 {
                            ki += HFEN_SUPPORT;
                            continue;
                        }
                        for dx in -r..=r {
                            let xx = x + dx;
                            if xx >= 0 && xx < nx as i64 {
                                acc += kernel[ki] * data[idx(xx, yy, zz)];
                            }
                            ki += 1;
                        }
                    }
                }
                out[idx(x, y, z)] = acc;
            }
        }
    }
    out
}

/// High-frequency error norm: `||LoG(x) - LoG(ref)|| / ||LoG(ref)||` with a
/// 3D Laplacian-of-Gaussian kernel (sigma 1.5 voxels, 15^3 support). The
/// norms are taken over the interior (kernel radius cropped per axis where
/// the extent allows) so zero-padding edge effects cancel.
pub fn hfen<S: Scalar>(estimate: &RealVolume<S>, reference: &RealVolume<S>) -> Result<S> {
    check_pair(estimate, reference, "hfen")?;
    let kernel = log_kernel();
    let la = log_filter(estimate, &kernel);
    let lb = log_filter(reference, &kernel);
    let (nx, ny, nz) = estimate.grid().counts();
    let r = HFEN_SUPPORT / 2;
    let crop = |n: usize| if n > 2 * r { r } else { 0 };
    let (cx, cy, cz) = (crop(nx), crop(ny), crop(nz));
    let mut num = 0.0;
    let mut den = 0.0;
    for z in cz..nz - cz {
        for y in cy..ny - cy {
            for x in cx..nx - cx {
                let i = x + nx * (y + ny * z);
                let d = la[i] - lb[i];
                num += d * d;
                den += lb[i] * lb[i];
            }
        }
    }
    if den == 0.0 {
        return Err(CoreError::InvalidArgument("hfen: zero reference LoG norm".into()));
    }
    Ok(sc((num / den).sqrt()))
}

/// Arithmetic mean of `x` over every nonzero ROI id present in `labels`.
pub fn roi_means<S: Scalar>(
    x: &RealVolume<S>,
    labels: &LabelVolume,
) -> Result<BTreeMap<u32, S>> {
    x.grid().check_same(labels.grid(), "roi_means")?;
    let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (&v, &id) in x.data().iter().zip(labels.data()) {
        if id != 0 {
            let e = sums.entry(id).or_insert((0.0, 0));
            e.0 += v.as_f64();
            e.1 += 1;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(id, (sum, n))| (id, sc(sum / n as f64)))
        .collect())
}

/// Mean of `x` over one ROI; errors if the ROI id is absent or empty.
pub fn roi_mean<S: Scalar>(x: &RealVolume<S>, labels: &LabelVolume, id: u32) -> Result<S> {
    roi_means(x, labels)?
        .get(&id)
        .copied()
        .ok_or(CoreError::EmptyRoi(id))
}

/// Bundle of all metrics for one reconstruction.
#[derive(Clone, Debug)]
pub struct MetricsReport<S: Scalar = f64> {
    pub rmse_percent: S,
    pub psnr_db: S,
    pub ssim: S,
    pub hfen: S,
    pub roi_means: BTreeMap<u32, S>,
}

/// Compute the full report; ROI means are empty when `labels` is `None`.
pub fn evaluate<S: Scalar>(
    estimate: &RealVolume<S>,
    reference: &RealVolume<S>,
    labels: Option<&LabelVolume>,
) -> Result<MetricsReport<S>> {
    Ok(MetricsReport {
        rmse_percent: rmse(estimate, reference)?,
        psnr_db: psnr(estimate, reference)?,
        ssim: ssim3d(estimate, reference)?,
        hfen: hfen(estimate, reference)?,
        roi_means: match labels {
            Some(l) => roi_means(estimate, l)?,
            None => BTreeMap::new(),
        },
    })
}
