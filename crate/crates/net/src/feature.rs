use hpqsm_core::{RealVolume, Scalar, VoxelGrid};

use crate::{NetError, Result};

/// Multi-channel 3D activation tensor, channel slowest then z, y, x fastest;
/// each channel is laid out exactly like a volume.
#[derive(Clone, Debug)]
pub struct FeatureMap<S: Scalar = f64> {
    channels: usize,
    nx: usize,
    ny: usize,
    nz: usize,
    data: Vec<S>,
}

impl<S: Scalar> FeatureMap<S> {
    pub fn zeros(channels: usize, nx: usize, ny: usize, nz: usize) -> Self {
        Self { channels, nx, ny, nz, data: vec![S::zero(); channels * nx * ny * nz] }
    }

    pub fn from_data(channels: usize, nx: usize, ny: usize, nz: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != channels * nx * ny * nz {
            return Err(NetError::Shape(format!(
                "feature data length {} != {channels}x{nx}x{ny}x{nz}",
                data.len()
            )));
        }
        Ok(Self { channels, nx, ny, nz, data })
    }

    pub fn from_volume(v: &RealVolume<S>) -> Self {
        let (nx, ny, nz) = v.grid().counts();
        Self { channels: 1, nx, ny, nz, data: v.data().to_vec() }
    }

    /// Single-channel map back to a volume on the given grid.
    pub fn to_volume(&self, grid: &VoxelGrid) -> Result<RealVolume<S>> {
        if self.channels != 1 || grid.counts() != (self.nx, self.ny, self.nz) {
            return Err(NetError::Shape(format!(
                "cannot view {}x{}x{}x{} map as volume on grid {:?}",
                self.channels,
                self.nx,
                self.ny,
                self.nz,
                grid.counts()
            )));
        }
        Ok(RealVolume::new(grid.clone(), self.data.clone())?)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn spatial(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn voxels(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[S] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [S] {
        let n = self.voxels();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Stack two maps along the channel axis.
    pub fn concat(a: &FeatureMap<S>, b: &FeatureMap<S>) -> Result<FeatureMap<S>> {
        if a.spatial() != b.spatial() {
            return Err(NetError::Shape("concat spatial dims differ".into()));
        }
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(FeatureMap {
            channels: a.channels + b.channels,
            nx: a.nx,
            ny: a.ny,
            nz: a.nz,
            data,
        })
    }

    /// Split channels back into the two concat inputs.
    pub fn split(&self, first_channels: usize) -> (FeatureMap<S>, FeatureMap<S>) {
        debug_assert!(first_channels <= self.channels);
        let n = self.voxels();
        let a = FeatureMap {
            channels: first_channels,
            nx: self.nx,
            ny: self.ny,
            nz: self.nz,
            data: self.data[..first_channels * n].to_vec(),
        };
        let b = FeatureMap {
            channels: self.channels - first_channels,
            nx: self.nx,
            ny: self.ny,
            nz: self.nz,
            data: self.data[first_channels * n..].to_vec(),
        };
        (a, b)
    }

    /// Elementwise accumulate.
    pub fn add_in_place(&mut self, other: &FeatureMap<S>) -> Result<()> {
        if self.channels != other.channels || self.spatial() != other.spatial() {
            return Err(NetError::Shape("add_in_place shape mismatch".into()));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
