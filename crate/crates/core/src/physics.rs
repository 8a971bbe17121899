//! Forward physics: dipole convolution, in-plane Hann low-pass filtering,
//! high-pass filtered phase (HPFP) synthesis, and the fine-tuning fidelity
//! loss with its exact reverse-mode gradient.

use num_complex::Complex;

use crate::fft::{fft2_slicewise, fft3, ifft2_slicewise, ifft3, signed_freq};
use crate::{sc, wrap_phase, ComplexVolume, CoreError, RealVolume, Result, Scalar, VoxelGrid};

/// Hann passband constant at the reference in-plane matrix size of 320:
/// the passband radius in k-space samples is `beta / fc` with
/// `beta = HANN_BETA_320 * max(nx, ny) / 320`.
pub const HANN_BETA_320: f64 = 40.0;

/// Squared-magnitude floor below which HPFP voxels are treated as
/// degenerate (angle and gradient forced to zero).
const DEGENERATE_SQR: f64 = 1e-30;

/// Acquisition constants fixing the susceptibility-to-phase scale.
#[derive(Clone, Debug)]
pub struct ScanParams {
    b0: f64,
    te: f64,
    gamma_bar: f64,
    phase_per_ppm: f64,
}

impl ScanParams {
    /// `b0` in tesla, `te` in seconds, `gamma_bar` in Hz/T.
    pub fn new(b0: f64, te: f64, gamma_bar: f64) -> Result<Self> {
        if !(b0 > 0.0 && te > 0.0 && gamma_bar > 0.0)
            || !(b0.is_finite() && te.is_finite() && gamma_bar.is_finite())
        {
            return Err(CoreError::InvalidArgument(format!(
                "scan parameters must be positive and finite: b0={b0}, te={te}, gamma_bar={gamma_bar}"
            )));
        }
        let phase_per_ppm = 2.0 * std::f64::consts::PI * gamma_bar * b0 * te * 1e-6;
        Ok(Self { b0, te, gamma_bar, phase_per_ppm })
    }

    /// 3 T, TE 22.7 ms, 42.577 MHz/T.
    pub fn default_3t() -> Self {
        Self::new(3.0, 22.7e-3, 42.577e6).expect("default scan parameters are valid")
    }

    pub fn b0(&self) -> f64 {
        self.b0
    }
    pub fn te(&self) -> f64 {
        self.te
    }
    pub fn gamma_bar(&self) -> f64 {
        self.gamma_bar
    }

    /// Radians of phase per ppm of susceptibility-induced field shift.
    pub fn phase_per_ppm(&self) -> f64 {
        self.phase_per_ppm
    }
}

/// Precomputed k-space dipole multiplier `1/3 - kz^2/|k|^2` with zero DC.
#[derive(Clone, Debug)]
pub struct DipoleKernel<S: Scalar = f64> {
    grid: VoxelGrid,
    multiplier: Vec<S>,
}

impl<S: Scalar> DipoleKernel<S> {
    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn multiplier(&self) -> &[S] {
        &self.multiplier
    }
}

/// Build the dipole kernel for a grid, with frequencies in physical units
/// (cycles/mm) so anisotropic voxels are honored.
pub fn make_dipole_kernel<S: Scalar>(grid: &VoxelGrid) -> DipoleKernel<S> {
    let (nx, ny, nz) = grid.counts();
    let (dx, dy, dz) = grid.voxel_size();
    let mut multiplier = Vec::with_capacity(grid.len());
    for iz in 0..nz {
        let kz = signed_freq(iz, nz) as f64 / (nz as f64 * dz);
        let kz2 = kz * kz;
        for iy in 0..ny {
            let ky = signed_freq(iy, ny) as f64 / (ny as f64 * dy);
            let ky2 = ky * ky;
            for ix in 0..nx {
                let kx = signed_freq(ix, nx) as f64 / (nx as f64 * dx);
                let k2 = kx * kx + ky2 + kz2;
                // clamp away 1-ulp overshoot at the on-axis / equatorial limits
                let v = if k2 == 0.0 {
                    0.0
                } else {
                    (1.0 / 3.0 - kz2 / k2).clamp(-2.0 / 3.0, 1.0 / 3.0)
                };
                multiplier.push(sc(v));
            }
        }
    }
    DipoleKernel { grid: grid.clone(), multiplier }
}

/// Field shift (ppm) induced by a susceptibility map (ppm):
/// `Re(ifft3(D .* fft3(x)))`.
pub fn dipole_convolve<S: Scalar>(x: &RealVolume<S>, d: &DipoleKernel<S>) -> Result<RealVolume<S>> {
    x.grid().check_same(d.grid(), "dipole_convolve")?;
    let mut spec = fft3(&x.to_complex());
    for (c, &m) in spec.data_mut().iter_mut().zip(&d.multiplier) {
        *c = *c * m;
    }
    Ok(ifft3(&spec).real_part())
}

/// In-plane radial raised-cosine low-pass transfer function, shared by all
/// axial slices.
#[derive(Clone, Debug)]
pub struct HannFilter<S: Scalar = f64> {
    fc: f64,
    grid: VoxelGrid,
    transfer: Vec<S>,
}

impl<S: Scalar> HannFilter<S> {
    pub fn fc(&self) -> f64 {
        self.fc
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    /// `nx * ny` transfer values, y slowest.
    pub fn transfer(&self) -> &[S] {
        &self.transfer
    }

    /// Build a filter from an explicit transfer plane (mainly for tests).
    pub fn from_transfer(grid: VoxelGrid, fc: f64, transfer: Vec<S>) -> Result<Self> {
        if transfer.len() != grid.nx() * grid.ny() {
            return Err(CoreError::InvalidArgument("transfer plane size mismatch".into()));
        }
        if (transfer[0] - S::one()).abs() > sc(1e-12) {
            return Err(CoreError::InvalidArgument("transfer at DC must be 1".into()));
        }
        if transfer.iter().any(|&t| t < S::zero() || t > S::one()) {
            return Err(CoreError::InvalidArgument("transfer values must lie in [0,1]".into()));
        }
        Ok(Self { fc, grid, transfer })
    }
}

/// Raised-cosine low-pass with relative cutoff `fc` in (0, 1]:
/// `t(rho) = cos^2(pi rho / (2 rho_c))` for `rho <= rho_c`, else 0, where
/// `rho` is the in-plane frequency index radius in samples and
/// `rho_c = beta / fc` with `beta = HANN_BETA_320 * max(nx, ny) / 320`.
/// Larger `fc` means a narrower passband, i.e. less phase removed from the
/// HPFP.
pub fn make_hann_transfer<S: Scalar>(grid: &VoxelGrid, fc: f64) -> Result<HannFilter<S>> {
    make_hann_transfer_scaled(grid, fc, 1.0)
}

/// Same as [`make_hann_transfer`] with the passband constant multiplied by
/// `beta_scale`, used to emulate an unknown filter at test-data generation.
pub fn make_hann_transfer_scaled<S: Scalar>(
    grid: &VoxelGrid,
    fc: f64,
    beta_scale: f64,
) -> Result<HannFilter<S>> {
    if !(fc > 0.0 && fc <= 1.0) {
        return Err(CoreError::InvalidArgument(format!("fc must lie in (0, 1], got {fc}")));
    }
    if !(beta_scale > 0.0 && beta_scale.is_finite()) {
        return Err(CoreError::InvalidArgument(format!("beta_scale must be positive, got {beta_scale}")));
    }
    let (nx, ny, _) = grid.counts();
    let n_max = nx.max(ny) as f64;
    let beta = HANN_BETA_320 * (n_max / 320.0) * beta_scale;
    let rho_c = beta / fc;
    let mut transfer = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        let fy = signed_freq(iy, ny) as f64;
        for ix in 0..nx {
            let fx = signed_freq(ix, nx) as f64;
            let rho = (fx * fx + fy * fy).sqrt();
            let t = if rho <= rho_c {
                let c = (std::f64::consts::PI * rho / (2.0 * rho_c)).cos();
                c * c
            } else {
                0.0
            };
            transfer.push(sc(t));
        }
    }
    Ok(HannFilter { fc, grid: grid.clone(), transfer })
}

/// Per-slice low-pass: inverse 2D DFT of (transfer .* 2D DFT of slice).
pub fn lowpass_inplane<S: Scalar>(v: &ComplexVolume<S>, h: &HannFilter<S>) -> Result<ComplexVolume<S>> {
    v.grid().check_same(h.grid(), "lowpass_inplane")?;
    let (nx, ny, nz) = v.grid().counts();
    let mut spec = fft2_slicewise(v);
    let plane = nx * ny;
    for z in 0..nz {
        for (c, &t) in spec.data_mut()[z * plane..(z + 1) * plane]
            .iter_mut()
            .zip(&h.transfer)
        {
            *c = *c * t;
        }
    }
    Ok(ifft2_slicewise(&spec))
}

/// Complex image `m * exp(i phase)` from magnitude and phase volumes.
pub fn synth_complex<S: Scalar>(m: &RealVolume<S>, phase: &RealVolume<S>) -> Result<ComplexVolume<S>> {
    m.grid().check_same(phase.grid(), "synth_complex")?;
    if m.data().iter().any(|&v| v < S::zero()) {
        return Err(CoreError::InvalidArgument("magnitude must be nonnegative".into()));
    }
    let data = m
        .data()
        .iter()
        .zip(phase.data())
        .map(|(&mag, &ph)| Complex::new(mag * ph.cos(), mag * ph.sin()))
        .collect();
    Ok(ComplexVolume::new(m.grid().clone(), data)?)
}

#[inline]
fn principal_angle<S: Scalar>(c: Complex<S>) -> S {
    if c.norm_sqr() <= sc(DEGENERATE_SQR) {
        return S::zero();
    }
    let a = c.im.atan2(c.re);
    if a <= -S::PI() {
        S::PI()
    } else {
        a
    }
}

/// High-pass filtered phase: `angle(c .* conj(lowpass(c)))`, in `(-pi, pi]`.
///
/// Algebraically equal to the phase of `c / lowpass(c)` wherever the
/// low-pass is nonzero, and 0 where it vanishes.
pub fn hpfp<S: Scalar>(c: &ComplexVolume<S>, h: &HannFilter<S>) -> Result<RealVolume<S>> {
    let low = lowpass_inplane(c, h)?;
    let data = c
        .data()
        .iter()
        .zip(low.data())
        .map(|(&a, &b)| principal_angle(a * b.conj()))
        .collect();
    Ok(RealVolume::from_vec_unchecked(c.grid().clone(), data))
}

/// Full forward model: susceptibility (ppm) to simulated HPFP (radians).
pub fn forward_hpfp<S: Scalar>(
    x: &RealVolume<S>,
    m: &RealVolume<S>,
    d: &DipoleKernel<S>,
    h: &HannFilter<S>,
    scan: &ScanParams,
) -> Result<RealVolume<S>> {
    let field = dipole_convolve(x, d)?;
    let scale = sc::<S>(scan.phase_per_ppm());
    let phase = field.map(|v| v * scale);
    let c = synth_complex(m, &phase)?;
    hpfp(&c, h)
}

/// Fidelity loss: sum over voxels of the squared wrapped difference between
/// the forward-modeled HPFP of `x` and the measured HPFP.
pub fn loss_ft<S: Scalar>(
    x: &RealVolume<S>,
    m: &RealVolume<S>,
    f_hpfp: &RealVolume<S>,
    d: &DipoleKernel<S>,
    h: &HannFilter<S>,
    scan: &ScanParams,
) -> Result<S> {
    let sim = forward_hpfp(x, m, d, h, scan)?;
    x.grid().check_same(f_hpfp.grid(), "loss_ft")?;
    Ok(sim
        .data()
        .iter()
        .zip(f_hpfp.data())
        .map(|(&a, &b)| {
            let r = wrap_phase(a - b);
            r * r
        })
        .sum())
}

/// Exact gradient of [`loss_ft`] with respect to `x`, via the adjoints of
/// the dipole multiplier, the in-plane transfer, and the pointwise angle
/// derivative (wrap has derivative 1 almost everywhere).
pub fn grad_loss_ft<S: Scalar>(
    x: &RealVolume<S>,
    m: &RealVolume<S>,
    f_hpfp: &RealVolume<S>,
    d: &DipoleKernel<S>,
    h: &HannFilter<S>,
    scan: &ScanParams,
) -> Result<RealVolume<S>> {
    loss_and_grad(x, m, f_hpfp, d, h, scan).map(|(_, g)| g)
}

/// Loss value and gradient in one pass (shared forward computation).
pub fn loss_and_grad<S: Scalar>(
    x: &RealVolume<S>,
    m: &RealVolume<S>,
    f_hpfp: &RealVolume<S>,
    d: &DipoleKernel<S>,
    h: &HannFilter<S>,
    scan: &ScanParams,
) -> Result<(S, RealVolume<S>)> {
    x.grid().check_same(f_hpfp.grid(), "loss_and_grad")?;
    let grid = x.grid().clone();
    let scale = sc::<S>(scan.phase_per_ppm());

    let field = dipole_convolve(x, d)?;
    let phase = field.map(|v| v * scale);
    let c = synth_complex(m, &phase)?;
    let low = lowpass_inplane(&c, h)?;

    let n = grid.len();
    let mut loss = S::zero();
    // dtheta = Im(conj(p) dp)/|p|^2 with p = c conj(low); expanding dp gives
    //   dL = sum_v g |low|^2 Im(conj(c) dc) - g |c|^2 Im(conj(low) dlow)
    // with g = 2 r / |p|^2, so the adjoint seed splits into a direct term on
    // c and a low-passed term on low (the transfer is self-adjoint).
    let mut direct = Vec::with_capacity(n);
    let mut through_filter = Vec::with_capacity(n);
    let degenerate = sc::<S>(DEGENERATE_SQR);
    for i in 0..n {
        let cv = c.data()[i];
        let lv = low.data()[i];
        let p = cv * lv.conj();
        let ps = p.norm_sqr();
        let theta = principal_angle(p);
        let r = wrap_phase(theta - f_hpfp.data()[i]);
        loss += r * r;
        let g = if ps > degenerate { (r + r) / ps } else { S::zero() };
        direct.push(cv * (g * lv.norm_sqr()));
        through_filter.push(lv * (g * cv.norm_sqr()));
    }

    let filtered = lowpass_inplane(
        &ComplexVolume::from_vec_unchecked(grid.clone(), through_filter),
        h,
    )?;
    // dL/dphase_v = Re(conj(w_v) * i * c_v) with w = direct - filtered;
    // Im(conj(w) i c) = Re(conj(w) c)
    let mut q = Vec::with_capacity(n);
    for i in 0..n {
        let w = direct[i] - filtered.data()[i];
        q.push((w.conj() * c.data()[i]).re * scale);
    }
    let grad = dipole_convolve(&RealVolume::from_vec_unchecked(grid, q), d)?;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_16() -> VoxelGrid {
        VoxelGrid::new(16, 16, 8, 0.75, 0.75, 3.0).unwrap()
    }

    fn random_real(grid: &VoxelGrid, seed: u64, amp: f64) -> RealVolume<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealVolume::new(
            grid.clone(),
            (0..grid.len()).map(|_| rng.gen_range(-amp..amp)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn scan_params_scale() {
        let s = ScanParams::default_3t();
        let expect = 2.0 * std::f64::consts::PI * 42.577e6 * 3.0 * 22.7e-3 * 1e-6;
        assert!((s.phase_per_ppm() - expect).abs() < 1e-12);
        assert!((s.phase_per_ppm() - 18.22).abs() < 0.01);
        assert!(ScanParams::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn dipole_kernel_limits() {
        let grid = VoxelGrid::new(8, 8, 8, 1.0, 1.0, 1.0).unwrap();
        let d = make_dipole_kernel::<f64>(&grid);
        assert_eq!(d.multiplier()[grid.index(0, 0, 0)], 0.0);
        // on the kz axis
        assert!((d.multiplier()[grid.index(0, 0, 1)] + 2.0 / 3.0).abs() < 1e-15);
        // in the kz = 0 plane
        assert!((d.multiplier()[grid.index(1, 0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        // magic angle: 3 kz^2 = |k|^2 on an isotropic grid
        // kx = 2, ky = 2, kz = 2: kz^2/|k|^2 = 1/3 exactly
        assert!(d.multiplier()[grid.index(2, 2, 2)].abs() < 1e-15);
        for &v in d.multiplier() {
            assert!((-2.0 / 3.0..=1.0 / 3.0).contains(&v));
        }
        // even under frequency negation
        for iz in 0..8 {
            for iy in 0..8 {
                for ix in 0..8 {
                    let neg = |i: usize| (8 - i) % 8;
                    let a = d.multiplier()[grid.index(ix, iy, iz)];
                    let b = d.multiplier()[grid.index(neg(ix), neg(iy), neg(iz))];
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn dipole_convolve_kills_constants() {
        let grid = grid_16();
        let d = make_dipole_kernel(&grid);
        let zero = RealVolume::<f64>::zeros(grid.clone());
        assert!(dipole_convolve(&zero, &d).unwrap().max_abs() == 0.0);
        let c = RealVolume::<f64>::constant(grid, 0.7).unwrap();
        assert!(dipole_convolve(&c, &d).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn dipole_convolve_is_self_adjoint() {
        let grid = VoxelGrid::new(16, 16, 16, 1.0, 1.0, 2.0).unwrap();
        let d = make_dipole_kernel(&grid);
        for seed in 0..5 {
            let x = random_real(&grid, seed, 1.0);
            let y = random_real(&grid, seed + 100, 1.0);
            let dx = dipole_convolve(&x, &d).unwrap();
            let dy = dipole_convolve(&y, &d).unwrap();
            let lhs = dx.dot(&y);
            let rhs = x.dot(&dy);
            assert!((lhs - rhs).abs() <= 1e-10 * x.norm2() * y.norm2());
        }
    }

    #[test]
    fn hann_transfer_shape() {
        let grid = VoxelGrid::new(320, 320, 4, 0.75, 0.75, 3.0).unwrap();
        let h = make_hann_transfer::<f64>(&grid, 0.5).unwrap();
        assert_eq!(h.transfer()[0], 1.0);
        // rho_c = 40 / 0.5 = 80: transfer vanishes at radius 80 on the fx axis
        assert!(h.transfer()[80].abs() < 1e-12);
        assert!(h.transfer()[79] > 0.0);
        // fc = 1/4 keeps a wider passband (removes more from the HPFP)
        let h4 = make_hann_transfer::<f64>(&grid, 0.25).unwrap();
        assert!(h4.transfer()[159] > 0.0);
        assert!(h4.transfer()[160].abs() < 1e-12);
        for &t in h.transfer() {
            assert!((0.0..=1.0).contains(&t));
        }
        // radially non-increasing along the fx axis
        for i in 1..160 {
            assert!(h.transfer()[i] <= h.transfer()[i - 1] + 1e-15);
        }
        assert!(make_hann_transfer::<f64>(&grid, 0.0).is_err());
        assert!(make_hann_transfer::<f64>(&grid, 1.5).is_err());
    }

    #[test]
    fn lowpass_identity_and_composition() {
        let grid = VoxelGrid::new(8, 8, 4, 1.0, 1.0, 1.0).unwrap();
        let ident = HannFilter::from_transfer(grid.clone(), 1.0, vec![1.0f64; 64]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = ComplexVolume::new(
            grid.clone(),
            (0..grid.len())
                .map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap();
        let out = lowpass_inplane(&v, &ident).unwrap();
        for (a, b) in v.data().iter().zip(out.data()) {
            assert!((a - b).norm() < 1e-12);
        }

        // constant slice unchanged (DC gain 1)
        let h = make_hann_transfer::<f64>(&grid, 0.5).unwrap();
        let c = ComplexVolume::new(grid.clone(), vec![Complex::new(2.0, -1.0); 256]).unwrap();
        let out = lowpass_inplane(&c, &h).unwrap();
        for v in out.data() {
            assert!((v - Complex::new(2.0, -1.0)).norm() < 1e-12);
        }

        // filtering twice equals filtering once with the squared transfer
        let twice = lowpass_inplane(&lowpass_inplane(&v, &h).unwrap(), &h).unwrap();
        let sq = HannFilter::from_transfer(
            grid,
            0.5,
            h.transfer().iter().map(|&t| t * t).collect(),
        )
        .unwrap();
        let once = lowpass_inplane(&v, &sq).unwrap();
        for (a, b) in twice.data().iter().zip(once.data()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn lowpass_is_self_adjoint() {
        let grid = VoxelGrid::new(16, 16, 16, 1.0, 1.0, 1.0).unwrap();
        let h = make_hann_transfer::<f64>(&grid, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut rand_cvol = || {
            ComplexVolume::new(
                grid.clone(),
                (0..grid.len())
                    .map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect(),
            )
            .unwrap()
        };
        for _ in 0..5 {
            let x = rand_cvol();
            let y = rand_cvol();
            let lx = lowpass_inplane(&x, &h).unwrap();
            let ly = lowpass_inplane(&y, &h).unwrap();
            let dot = |a: &ComplexVolume<f64>, b: &ComplexVolume<f64>| -> Complex<f64> {
                a.data().iter().zip(b.data()).map(|(u, v)| u.conj() * v).sum()
            };
            let diff = (dot(&lx, &y) - dot(&x, &ly)).norm();
            assert!(diff <= 1e-10 * x.norm2() * y.norm2());
        }
    }

    #[test]
    fn synth_complex_contract() {
        let grid = VoxelGrid::new(4, 4, 4, 1.0, 1.0, 1.0).unwrap();
        let m = RealVolume::<f64>::constant(grid.clone(), 1.0).unwrap();
        let zero = RealVolume::<f64>::zeros(grid.clone());
        let c = synth_complex(&m, &zero).unwrap();
        for v in c.data() {
            assert_eq!(*v, Complex::new(1.0, 0.0));
        }
        let quarter = RealVolume::<f64>::constant(grid.clone(), std::f64::consts::FRAC_PI_2).unwrap();
        let c = synth_complex(&m, &quarter).unwrap();
        for v in c.data() {
            assert!(v.re.abs() < 1e-15 && (v.im - 1.0).abs() < 1e-15);
        }
        let mag = random_real(&grid, 3, 1.0).map(f64::abs);
        let ph = random_real(&grid, 4, 3.0);
        let c = synth_complex(&mag, &ph).unwrap();
        for (v, &m) in c.data().iter().zip(mag.data()) {
            assert!((v.norm() - m).abs() < 1e-12);
        }
        let neg = RealVolume::<f64>::constant(grid, -0.1).unwrap();
        assert!(synth_complex(&neg, &zero).is_err());
    }

    #[test]
    fn hpfp_constant_phase_is_zero() {
        let grid = VoxelGrid::new(16, 16, 4, 1.0, 1.0, 1.0).unwrap();
        let h = make_hann_transfer::<f64>(&grid, 0.5).unwrap();
        let mag = random_real(&grid, 5, 1.0).map(|v| v.abs() + 0.5);
        let phase = RealVolume::<f64>::constant(grid.clone(), 0.8).unwrap();
        let c = synth_complex(&mag, &phase).unwrap();
        let out = hpfp(&c, &h).unwrap();
        assert!(out.max_abs() < 1e-9, "max {}", out.max_abs());

        // degenerate all-pass filter: c * conj(c) is real nonnegative
        let ident = HannFilter::from_transfer(grid.clone(), 1.0, vec![1.0f64; 256]).unwrap();
        let varied = synth_complex(&mag, &random_real(&grid, 6, 2.0)).unwrap();
        let out = hpfp(&varied, &ident).unwrap();
        assert!(out.max_abs() < 1e-12);
    }

    #[test]
    fn hpfp_range_and_scaling_invariance() {
        let grid = VoxelGrid::new(16, 16, 8, 1.0, 1.0, 1.0).unwrap();
        let h = make_hann_transfer::<f64>(&grid, 0.5).unwrap();
        let mag = random_real(&grid, 7, 1.0).map(|v| v.abs() + 0.2);
        let ph = random_real(&grid, 8, 3.0);
        let c = synth_complex(&mag, &ph).unwrap();
        let out = hpfp(&c, &h).unwrap();
        for &v in out.data() {
            assert!(v > -std::f64::consts::PI && v <= std::f64::consts::PI);
        }
        let scaled = ComplexVolume::new(
            grid,
            c.data().iter().map(|&v| v * 3.7).collect(),
        )
        .unwrap();
        let out2 = hpfp(&scaled, &h).unwrap();
        for (a, b) in out.data().iter().zip(out2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_hpfp_trivial_inputs() {
        let grid = grid_16();
        let d = make_dipole_kernel(&grid);
        let h = make_hann_transfer(&grid, 0.5).unwrap();
        let scan = ScanParams::default_3t();
        let m = RealVolume::<f64>::constant(grid.clone(), 1.0).unwrap();

        let zero = RealVolume::<f64>::zeros(grid.clone());
        let out = forward_hpfp(&zero, &m, &d, &h, &scan).unwrap();
        assert!(out.max_abs() < 1e-12);

        let c = RealVolume::<f64>::constant(grid, 0.3).unwrap();
        let out = forward_hpfp(&c, &m, &d, &h, &scan).unwrap();
        assert!(out.max_abs() < 1e-9);
    }

    #[test]
    fn loss_self_consistency_and_sensitivity() {
        let grid = grid_16();
        let d = make_dipole_kernel(&grid);
        let h = make_hann_transfer(&grid, 0.5).unwrap();
        let scan = ScanParams::default_3t();
        let m = random_real(&grid, 11, 0.5).map(|v| v.abs() + 0.5);
        let x = random_real(&grid, 12, 0.1);

        let f = forward_hpfp(&x, &m, &d, &h, &scan).unwrap();
        let loss = loss_ft(&x, &m, &f, &d, &h, &scan).unwrap();
        assert!(loss / grid.len() as f64 <= 1e-18, "self loss {loss}");

        let zero = RealVolume::<f64>::zeros(grid.clone());
        let zf = RealVolume::<f64>::zeros(grid.clone());
        assert_eq!(loss_ft(&zero, &m, &zf, &d, &h, &scan).unwrap(), 0.0);

        let mut x2 = x.clone();
        x2.data_mut()[grid.index(8, 8, 4)] += 0.05;
        let loss2 = loss_ft(&x2, &m, &f, &d, &h, &scan).unwrap();
        assert!(loss2 > loss);
    }

    #[test]
    fn gradient_zero_at_consistent_point() {
        let grid = grid_16();
        let d = make_dipole_kernel(&grid);
        let h = make_hann_transfer(&grid, 0.5).unwrap();
        let scan = ScanParams::default_3t();
        let m = random_real(&grid, 13, 0.5).map(|v| v.abs() + 0.5);
        let x = random_real(&grid, 14, 0.1);
        let f = forward_hpfp(&x, &m, &d, &h, &scan).unwrap();
        let g = grad_loss_ft(&x, &m, &f, &d, &h, &scan).unwrap();
        assert!(g.max_abs() < 1e-10, "grad at optimum {}", g.max_abs());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let grid = grid_16();
        let d = make_dipole_kernel(&grid);
        let h = make_hann_transfer(&grid, 0.5).unwrap();
        let scan = ScanParams::default_3t();
        for seed in 0..3 {
            let m = random_real(&grid, 100 + seed, 0.5).map(|v| v.abs() + 0.5);
            let x = random_real(&grid, 200 + seed, 0.1);
            let f = forward_hpfp(&random_real(&grid, 300 + seed, 0.1), &m, &d, &h, &scan).unwrap();
            let g = grad_loss_ft(&x, &m, &f, &d, &h, &scan).unwrap();

            let step = 1e-4;
            let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
            for _ in 0..24 {
                let i = rng.gen_range(0..grid.len());
                let mut xp = x.clone();
                xp.data_mut()[i] += step;
                let mut xm = x.clone();
                xm.data_mut()[i] -= step;
                let lp = loss_ft(&xp, &m, &f, &d, &h, &scan).unwrap();
                let lm = loss_ft(&xm, &m, &f, &d, &h, &scan).unwrap();
                let fd = (lp - lm) / (2.0 * step);
                let an = g.data()[i];
                if an.abs() > 1e-8 {
                    let rel = (fd - an).abs() / an.abs().max(1e-12);
                    assert!(rel < 1e-3, "seed {seed} voxel {i}: fd {fd} vs analytic {an}");
                }
            }
        }
    }

    #[test]
    fn gradient_invariant_to_constant_shift() {
        let grid = grid_16();
        let d = make_dipole_kernel(&grid);
        let h = make_hann_transfer(&grid, 0.5).unwrap();
        let scan = ScanParams::default_3t();
        let m = random_real(&grid, 31, 0.5).map(|v| v.abs() + 0.5);
        let x = random_real(&grid, 32, 0.1);
        let f = forward_hpfp(&random_real(&grid, 33, 0.1), &m, &d, &h, &scan).unwrap();
        let g1 = grad_loss_ft(&x, &m, &f, &d, &h, &scan).unwrap();
        let shifted = x.map(|v| v + 0.37);
        let g2 = grad_loss_ft(&shifted, &m, &f, &d, &h, &scan).unwrap();
        let mut max = 0.0f64;
        for (a, b) in g1.data().iter().zip(g2.data()) {
            max = max.max((a - b).abs());
        }
        assert!(max < 1e-10 * g1.max_abs().max(1.0), "shift sensitivity {max}");
    }
}
