use num_complex::Complex;

use crate::{CoreError, Result, Scalar, VoxelGrid};

/// Real-valued 3D scalar field on a voxel grid (susceptibility in ppm,
/// phase in radians, magnitude dimensionless).
#[derive(Clone, Debug)]
pub struct RealVolume<S: Scalar = f64> {
    grid: VoxelGrid,
    data: Vec<S>,
}

/// Complex-valued 3D field on a voxel grid (gradient-echo style images and
/// k-space spectra).
#[derive(Clone, Debug)]
pub struct ComplexVolume<S: Scalar = f64> {
    grid: VoxelGrid,
    data: Vec<Complex<S>>,
}

impl<S: Scalar> RealVolume<S> {
    pub fn new(grid: VoxelGrid, data: Vec<S>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(CoreError::InvalidArgument(format!(
                "data length {} does not match grid {:?}",
                data.len(),
                grid.counts()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite(format!("real volume voxel {i}")));
        }
        Ok(Self { grid, data })
    }

    /// Construct without the finiteness scan; callers guarantee finite data.
    pub(crate) fn from_vec_unchecked(grid: VoxelGrid, data: Vec<S>) -> Self {
        debug_assert_eq!(data.len(), grid.len());
        Self { grid, data }
    }

    pub fn zeros(grid: VoxelGrid) -> Self {
        let n = grid.len();
        Self { grid, data: vec![S::zero(); n] }
    }

    pub fn constant(grid: VoxelGrid, value: S) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![value; n])
    }

    pub fn from_fn(grid: VoxelGrid, mut f: impl FnMut(usize, usize, usize) -> S) -> Self {
        let (nx, ny, nz) = grid.counts();
        let mut data = Vec::with_capacity(grid.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self { grid, data }
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> S {
        self.data[self.grid.index(x, y, z)]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize, z: usize) -> &mut S {
        let i = self.grid.index(x, y, z);
        &mut self.data[i]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            grid: self.grid.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Euclidean norm of the voxel values.
    pub fn norm2(&self) -> S {
        self.data.iter().map(|&v| v * v).sum::<S>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> S {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum()
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, &v| m.max(v.abs()))
    }

    /// Promote to a complex volume with zero imaginary part.
    pub fn to_complex(&self) -> ComplexVolume<S> {
        ComplexVolume {
            grid: self.grid.clone(),
            data: self.data.iter().map(|&v| Complex::new(v, S::zero())).collect(),
        }
    }

    /// Convert voxel values to another scalar through f64.
    pub fn cast<T: Scalar>(&self) -> RealVolume<T> {
        RealVolume {
            grid: self.grid.clone(),
            data: self.data.iter().map(|&v| crate::sc(v.as_f64())).collect(),
        }
    }
}

impl<S: Scalar> ComplexVolume<S> {
    pub fn new(grid: VoxelGrid, data: Vec<Complex<S>>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(CoreError::InvalidArgument(format!(
                "data length {} does not match grid {:?}",
                data.len(),
                grid.counts()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(CoreError::NonFinite(format!("complex volume voxel {i}")));
        }
        Ok(Self { grid, data })
    }

    pub(crate) fn from_vec_unchecked(grid: VoxelGrid, data: Vec<Complex<S>>) -> Self {
        debug_assert_eq!(data.len(), grid.len());
        Self { grid, data }
    }

    pub fn zeros(grid: VoxelGrid) -> Self {
        let n = grid.len();
        Self { grid, data: vec![Complex::new(S::zero(), S::zero()); n] }
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn data(&self) -> &[Complex<S>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<S>] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex<S>> {
        self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> Complex<S> {
        self.data[self.grid.index(x, y, z)]
    }

    pub fn real_part(&self) -> RealVolume<S> {
        RealVolume {
            grid: self.grid.clone(),
            data: self.data.iter().map(|c| c.re).collect(),
        }
    }

    pub fn magnitude(&self) -> RealVolume<S> {
        RealVolume {
            grid: self.grid.clone(),
            data: self.data.iter().map(|c| c.norm()).collect(),
        }
    }

    pub fn norm2(&self) -> S {
        self.data.iter().map(|c| c.norm_sqr()).sum::<S>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}
