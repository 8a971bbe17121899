use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

/// Tolerance for voxel-size equality in mm.
pub const GRID_SIZE_TOL_MM: f64 = 1e-9;

/// Regular 3D voxel grid: matrix counts plus physical voxel edge lengths in mm.
///
/// Data attached to a grid is stored row-major with z slowest and x fastest,
/// i.e. `index = x + nx * (y + ny * z)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VoxelGrid {
    nx: usize,
    ny: usize,
    nz: usize,
    dx: f64,
    dy: f64,
    dz: f64,
}

impl VoxelGrid {
    pub fn new(nx: usize, ny: usize, nz: usize, dx: f64, dy: f64, dz: f64) -> Result<Self> {
        if nx < 4 || ny < 4 || nz < 4 {
            return Err(CoreError::InvalidArgument(format!(
                "grid counts must be >= 4, got {nx}x{ny}x{nz}"
            )));
        }
        if !(dx > 0.0 && dy > 0.0 && dz > 0.0) || !(dx.is_finite() && dy.is_finite() && dz.is_finite()) {
            return Err(CoreError::InvalidArgument(format!(
                "voxel sizes must be positive and finite, got {dx}x{dy}x{dz} mm"
            )));
        }
        Ok(Self { nx, ny, nz, dx, dy, dz })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn nz(&self) -> usize {
        self.nz
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dy(&self) -> f64 {
        self.dy
    }
    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn voxel_size(&self) -> (f64, f64, f64) {
        (self.dx, self.dy, self.dz)
    }

    /// Total number of voxels.
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Physical field of view in mm along each axis.
    pub fn fov_mm(&self) -> (f64, f64, f64) {
        (self.nx as f64 * self.dx, self.ny as f64 * self.dy, self.nz as f64 * self.dz)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        x + self.nx * (y + self.ny * z)
    }

    /// Grid equality: equal counts and voxel sizes within 1e-9 mm.
    pub fn same_geometry(&self, other: &VoxelGrid) -> bool {
        self.counts() == other.counts()
            && (self.dx - other.dx).abs() <= GRID_SIZE_TOL_MM
            && (self.dy - other.dy).abs() <= GRID_SIZE_TOL_MM
            && (self.dz - other.dz).abs() <= GRID_SIZE_TOL_MM
    }

    pub(crate) fn check_same(&self, other: &VoxelGrid, what: &str) -> Result<()> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(CoreError::GridMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.counts(),
                other.counts()
            )))
        }
    }
}
