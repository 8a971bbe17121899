//! Grayscale slice images for visual inspection.

use std::path::Path;

use hpqsm_core::RealVolume;
use image::{GrayImage, Luma};

use crate::CliError;

/// Fixed display window in ppm for cross-method comparability.
pub const WINDOW_PPM: (f64, f64) = (-0.2, 0.8);

/// Write the mid-volume axial slice as an 8-bit grayscale PNG with the
/// fixed susceptibility window.
pub fn write_mid_slice(path: &Path, v: &RealVolume<f64>) -> Result<(), CliError> {
    let (nx, ny, nz) = v.grid().counts();
    let z = nz / 2;
    let (lo, hi) = WINDOW_PPM;
    let mut img = GrayImage::new(nx as u32, ny as u32);
    for y in 0..ny {
        for x in 0..nx {
            let t = ((v.at(x, y, z) - lo) / (hi - lo)).clamp(0.0, 1.0);
            img.put_pixel(x as u32, y as u32, Luma([(t * 255.0).round() as u8]));
        }
    }
    img.save(path)
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
}
