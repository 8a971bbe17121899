//! FFT dipole convolution of a rasterized uniform sphere against the
//! analytic exterior dipole field.

use hpqsm_core::phantom::{analytic_sphere_field, rasterize_phantom, MagnitudeModel, PhantomSpec, Shape, ShapeKind};
use hpqsm_core::physics::{dipole_convolve, make_dipole_kernel};
use hpqsm_core::{RealVolume, VoxelGrid};

#[test]
fn fft_dipole_field_matches_analytic_sphere() {
    let n = 96;
    let a = 12.0; // voxels at 1 mm
    let grid = VoxelGrid::new(n, n, n, 1.0, 1.0, 1.0).unwrap();
    let center = [n as f64 / 2.0, n as f64 / 2.0, n as f64 / 2.0];

    let spec = PhantomSpec {
        grid: grid.clone(),
        shapes: vec![Shape {
            kind: ShapeKind::Sphere { radius_mm: a },
            center_mm: center,
            chi_ppm: 1.0,
        }],
        background_chi: 0.0,
        magnitude_model: MagnitudeModel::Uniform,
        rng_seed: 0,
    };
    let chi: RealVolume<f64> = rasterize_phantom(&spec).unwrap();
    let d = make_dipole_kernel(&grid);
    let field = dipole_convolve(&chi, &d).unwrap();
    let oracle = analytic_sphere_field::<f64>(center, a, 1.0, &grid);

    let mut num = 0.0f64;
    let mut den = 0.0f64;
    let mut interior_abs = 0.0f64;
    let mut interior_n = 0usize;
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let dx = (x as f64 + 0.5) - center[0];
                let dy = (y as f64 + 0.5) - center[1];
                let dz = (z as f64 + 0.5) - center[2];
                let r = (dx * dx + dy * dy + dz * dz).sqrt();
                if r > 1.5 * a && r < 3.0 * a {
                    let e = field.at(x, y, z) - oracle.at(x, y, z);
                    num += e * e;
                    den += oracle.at(x, y, z).powi(2);
                } else if r <= a {
                    interior_abs += field.at(x, y, z).abs();
                    interior_n += 1;
                }
            }
        }
    }
    let rel_l2 = (num / den).sqrt();
    let interior_mean = interior_abs / interior_n as f64;
    println!("sphere oracle: shell rel L2 {rel_l2:.4}, interior mean |field| {interior_mean:.5} ppm");
    assert!(rel_l2 < 0.10, "exterior shell relative L2 {rel_l2}");
    assert!(interior_mean < 0.05 * (1.0 / 3.0), "interior mean {interior_mean}");
}
