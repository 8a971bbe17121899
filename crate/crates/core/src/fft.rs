//! Discrete Fourier transforms over [`ComplexVolume`] and in-plane k-space
//! resampling.
//!
//! Convention used across the crate: the forward transform is unnormalized,
//! the inverse carries the full `1/N` factor, and the DC coefficient sits at
//! index `(0, 0, 0)`.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::{sc, ComplexVolume, CoreError, Result, Scalar, VoxelGrid};

fn run_rows<S: Scalar>(data: &mut [Complex<S>], n: usize, fft: &Arc<dyn Fft<S>>) {
    let mut scratch = vec![Complex::new(S::zero(), S::zero()); fft.get_inplace_scratch_len()];
    for row in data.chunks_exact_mut(n) {
        fft.process_with_scratch(row, &mut scratch);
    }
}

fn run_strided<S: Scalar>(
    data: &mut [Complex<S>],
    n: usize,
    stride: usize,
    starts: impl Iterator<Item = usize>,
    fft: &Arc<dyn Fft<S>>,
) {
    let mut scratch = vec![Complex::new(S::zero(), S::zero()); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(S::zero(), S::zero()); n];
    for start in starts {
        for (j, slot) in buf.iter_mut().enumerate() {
            *slot = data[start + j * stride];
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (j, &v) in buf.iter().enumerate() {
            data[start + j * stride] = v;
        }
    }
}

fn transform3<S: Scalar>(v: &ComplexVolume<S>, inverse: bool) -> ComplexVolume<S> {
    let grid = v.grid().clone();
    let (nx, ny, nz) = grid.counts();
    let mut data = v.data().to_vec();
    let mut planner = FftPlanner::<S>::new();
    let (fx, fy, fz) = if inverse {
        (
            planner.plan_fft_inverse(nx),
            planner.plan_fft_inverse(ny),
            planner.plan_fft_inverse(nz),
        )
    } else {
        (
            planner.plan_fft_forward(nx),
            planner.plan_fft_forward(ny),
            planner.plan_fft_forward(nz),
        )
    };

    run_rows(&mut data, nx, &fx);
    let plane = nx * ny;
    run_strided(
        &mut data,
        ny,
        nx,
        (0..nz).flat_map(|z| (0..nx).map(move |x| z * plane + x)),
        &fy,
    );
    run_strided(
        &mut data,
        nz,
        plane,
        (0..ny).flat_map(|y| (0..nx).map(move |x| y * nx + x)),
        &fz,
    );

    if inverse {
        let scale = sc::<S>(1.0 / grid.len() as f64);
        for c in &mut data {
            *c = *c * scale;
        }
    }
    ComplexVolume::from_vec_unchecked(grid, data)
}

/// Unnormalized forward 3D DFT; DC at index (0, 0, 0).
pub fn fft3<S: Scalar>(v: &ComplexVolume<S>) -> ComplexVolume<S> {
    transform3(v, false)
}

/// Inverse 3D DFT normalized by `1/(nx ny nz)`; exact inverse of [`fft3`].
pub fn ifft3<S: Scalar>(v: &ComplexVolume<S>) -> ComplexVolume<S> {
    transform3(v, true)
}

fn transform2<S: Scalar>(v: &ComplexVolume<S>, inverse: bool) -> ComplexVolume<S> {
    let grid = v.grid().clone();
    let (nx, ny, nz) = grid.counts();
    let mut data = v.data().to_vec();
    let mut planner = FftPlanner::<S>::new();
    let (fx, fy) = if inverse {
        (planner.plan_fft_inverse(nx), planner.plan_fft_inverse(ny))
    } else {
        (planner.plan_fft_forward(nx), planner.plan_fft_forward(ny))
    };

    run_rows(&mut data, nx, &fx);
    let plane = nx * ny;
    run_strided(
        &mut data,
        ny,
        nx,
        (0..nz).flat_map(|z| (0..nx).map(move |x| z * plane + x)),
        &fy,
    );

    if inverse {
        let scale = sc::<S>(1.0 / (nx * ny) as f64);
        for c in &mut data {
            *c = *c * scale;
        }
    }
    ComplexVolume::from_vec_unchecked(grid, data)
}

/// Independent 2D DFT of each axial (x-y) slice, unnormalized.
pub fn fft2_slicewise<S: Scalar>(v: &ComplexVolume<S>) -> ComplexVolume<S> {
    transform2(v, false)
}

/// Inverse of [`fft2_slicewise`], normalized by `1/(nx ny)` per slice.
pub fn ifft2_slicewise<S: Scalar>(v: &ComplexVolume<S>) -> ComplexVolume<S> {
    transform2(v, true)
}

/// Signed frequency of bin `i` on an `n`-point axis: `i` for `i <= n/2`,
/// else `i - n`. Even axes assign the shared Nyquist bin to `-n/2`.
#[inline]
pub(crate) fn signed_freq(i: usize, n: usize) -> i64 {
    let i = i as i64;
    let n = n as i64;
    if i <= n / 2 && !(n % 2 == 0 && i == n / 2) {
        i
    } else {
        i - n
    }
}

/// Resample a volume in-plane by centered k-space zero-padding (upsampling)
/// or truncation (downsampling).
///
/// Image values are preserved (a constant image keeps its value), so the
/// per-slice spectrum is rescaled by `(new_nx new_ny)/(nx ny)` relative to a
/// plain transform round trip. The output grid keeps `nz`/`dz` and carries
/// voxel sizes `dx nx / new_nx`, `dy ny / new_ny`.
pub fn resample_kspace<S: Scalar>(
    v: &ComplexVolume<S>,
    new_nx: usize,
    new_ny: usize,
) -> Result<ComplexVolume<S>> {
    if new_nx < 4 || new_ny < 4 {
        return Err(CoreError::InvalidArgument(format!(
            "resample target must be >= 4 per side, got {new_nx}x{new_ny}"
        )));
    }
    if !v.is_finite() {
        return Err(CoreError::NonFinite("resample_kspace input".into()));
    }
    let (nx, ny, nz) = v.grid().counts();
    let (dx, dy, dz) = v.grid().voxel_size();
    let new_grid = VoxelGrid::new(
        new_nx,
        new_ny,
        nz,
        dx * nx as f64 / new_nx as f64,
        dy * ny as f64 / new_ny as f64,
        dz,
    )?;

    // maps[q] = source bin for target bin q, by matching signed frequencies
    let axis_map = |m: usize, n: usize| -> Vec<Option<usize>> {
        (0..m)
            .map(|q| {
                let f = signed_freq(q, m);
                let lo = -((n / 2) as i64);
                let hi = (n as i64 - 1) - (n / 2) as i64;
                if f >= lo && f <= hi {
                    Some(if f >= 0 { f as usize } else { (f + n as i64) as usize })
                } else {
                    None
                }
            })
            .collect()
    };
    let map_x = axis_map(new_nx, nx);
    let map_y = axis_map(new_ny, ny);

    let spec = fft2_slicewise(v);
    let mut out = vec![Complex::new(S::zero(), S::zero()); new_grid.len()];
    let src_plane = nx * ny;
    let dst_plane = new_nx * new_ny;
    for z in 0..nz {
        for (qy, my) in map_y.iter().enumerate() {
            let Some(sy) = my else { continue };
            for (qx, mx) in map_x.iter().enumerate() {
                let Some(sx) = mx else { continue };
                out[z * dst_plane + qy * new_nx + qx] = spec.data()[z * src_plane + sy * nx + sx];
            }
        }
    }
    // inverse transform with 1/(nx ny): the 1/(new_nx new_ny) of the inverse
    // combined with the (new_nx new_ny)/(nx ny) intensity scaling
    let mut planner = FftPlanner::<S>::new();
    let ix = planner.plan_fft_inverse(new_nx);
    let iy = planner.plan_fft_inverse(new_ny);
    run_rows(&mut out, new_nx, &ix);
    run_strided(
        &mut out,
        new_ny,
        new_nx,
        (0..nz).flat_map(|z| (0..new_nx).map(move |x| z * dst_plane + x)),
        &iy,
    );
    let scale = sc::<S>(1.0 / (nx * ny) as f64);
    for c in &mut out {
        *c = *c * scale;
    }
    Ok(ComplexVolume::from_vec_unchecked(new_grid, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(nx: usize, ny: usize, nz: usize, seed: u64) -> ComplexVolume<f64> {
        let grid = VoxelGrid::new(nx, ny, nz, 1.0, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..grid.len())
            .map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        ComplexVolume::new(grid, data).unwrap()
    }

    #[test]
    fn zeros_transform_to_zeros() {
        let v = ComplexVolume::<f64>::zeros(VoxelGrid::new(4, 4, 4, 1.0, 1.0, 1.0).unwrap());
        assert_eq!(fft3(&v).data(), v.data());
        assert_eq!(ifft3(&v).data(), v.data());
        assert_eq!(fft2_slicewise(&v).data(), v.data());
    }

    #[test]
    fn constant_volume_has_only_dc() {
        let grid = VoxelGrid::new(4, 4, 4, 1.0, 1.0, 1.0).unwrap();
        let v = ComplexVolume::<f64>::new(grid, vec![Complex::new(1.0, 0.0); 64]).unwrap();
        let f = fft3(&v);
        assert!((f.data()[0].re - 64.0).abs() < 1e-12);
        assert!(f.data()[0].im.abs() < 1e-12);
        for &c in &f.data()[1..] {
            assert!(c.norm() < 1e-12);
        }
    }

    #[test]
    fn dc_only_spectrum_inverts_to_constant() {
        let grid = VoxelGrid::new(4, 4, 4, 1.0, 1.0, 1.0).unwrap();
        let mut d = vec![Complex::new(0.0, 0.0); 64];
        d[0] = Complex::new(64.0, 0.0);
        let v = ComplexVolume::<f64>::new(grid, d).unwrap();
        for &c in ifft3(&v).data() {
            assert!((c.re - 1.0).abs() < 1e-12 && c.im.abs() < 1e-12);
        }
    }

    #[test]
    fn fft3_round_trip() {
        let v = random_volume(8, 8, 8, 42);
        let back = ifft3(&fft3(&v));
        let max: f64 = v
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        let scale = v.data().iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(max <= 1e-12 * scale, "round trip error {max}");
    }

    #[test]
    fn parseval_holds() {
        let v = random_volume(8, 4, 6, 7);
        let f = fft3(&v);
        let n = v.grid().len() as f64;
        let lhs: f64 = v.data().iter().map(|c| c.norm_sqr()).sum();
        let rhs: f64 = f.data().iter().map(|c| c.norm_sqr()).sum::<f64>() / n;
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.max(1.0));
    }

    #[test]
    fn fft2_round_trip_and_slice_consistency() {
        let v = random_volume(8, 8, 4, 3);
        let back = ifft2_slicewise(&fft2_slicewise(&v));
        let max: f64 = v
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(max <= 1e-12, "2d round trip error {max}");

        // identical slices: fft3 z-bin 0 equals nz * per-slice 2D DFT, other bins 0
        let grid = VoxelGrid::new(4, 4, 4, 1.0, 1.0, 1.0).unwrap();
        let slice: Vec<Complex<f64>> = (0..16)
            .map(|i| Complex::new((i as f64 * 0.7).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(&slice);
        }
        let v = ComplexVolume::new(grid, data).unwrap();
        let f3 = fft3(&v);
        let f2 = fft2_slicewise(&v);
        for i in 0..16 {
            assert!((f3.data()[i] - f2.data()[i] * 4.0).norm() < 1e-10);
            for z in 1..4 {
                assert!(f3.data()[z * 16 + i].norm() < 1e-10);
            }
        }
    }

    #[test]
    fn resample_preserves_constant_value() {
        let grid = VoxelGrid::new(32, 32, 4, 0.75, 0.75, 3.0).unwrap();
        let v = ComplexVolume::<f64>::new(grid, vec![Complex::new(1.0, 0.0); 32 * 32 * 4]).unwrap();
        let r = resample_kspace(&v, 24, 24).unwrap();
        assert_eq!(r.grid().counts(), (24, 24, 4));
        assert!((r.grid().dx() - 1.0).abs() < 1e-12);
        for &c in r.data() {
            assert!((c.re - 1.0).abs() < 1e-10 && c.im.abs() < 1e-10);
        }
    }

    #[test]
    fn pad_then_truncate_is_identity() {
        let v = random_volume(16, 16, 4, 11);
        let padded = resample_kspace(&v, 24, 24).unwrap();
        let back = resample_kspace(&padded, 16, 16).unwrap();
        let norm = v.norm2();
        let err: f64 = v
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err <= 1e-10 * norm, "pad/truncate error {err}");
    }

    #[test]
    fn identity_resample_is_identity() {
        let v = random_volume(8, 8, 4, 5);
        let r = resample_kspace(&v, 8, 8).unwrap();
        for (a, b) in v.data().iter().zip(r.data()) {
            assert!((a - b).norm() <= 1e-12);
        }
    }

    #[test]
    fn voxel_size_follows_matrix_ratio() {
        let grid = VoxelGrid::new(320, 4, 4, 0.75, 0.75, 3.0).unwrap();
        let v = ComplexVolume::<f64>::zeros(grid);
        let r = resample_kspace(&v, 192, 4).unwrap();
        assert!((r.grid().dx() - 1.25).abs() < 1e-12);
    }
}
