//! Differentiable building blocks: 3D convolution, batch normalization,
//! ReLU, 2x max pooling and nearest-neighbor upsampling.
//!
//! Each parameterized op owns its parameters, accumulated gradients and the
//! forward cache needed by `backward`; one optimization step is strictly
//! sequential per op instance.

use hpqsm_core::{sc, Scalar};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::{FeatureMap, NetError, Result};

/// Batch-norm variance floor / denominator epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics update momentum.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[inline]
fn row_acc3<S: Scalar>(out: &mut [S], inp: &[S], w0: S, w1: S, w2: S) {
    let nx = out.len();
    debug_assert_eq!(inp.len(), nx);
    if nx == 1 {
        out[0] += w1 * inp[0];
        return;
    }
    out[0] += w1 * inp[0] + w2 * inp[1];
    for x in 1..nx - 1 {
        out[x] += w0 * inp[x - 1] + w1 * inp[x] + w2 * inp[x + 1];
    }
    out[nx - 1] += w0 * inp[nx - 2] + w1 * inp[nx - 1];
}

/// out += inp (*) taps, 3x3x3 cross-correlation with zero padding 1.
fn conv_channel_acc<S: Scalar>(
    out: &mut [S],
    inp: &[S],
    taps: &[S],
    nx: usize,
    ny: usize,
    nz: usize,
) {
    debug_assert_eq!(taps.len(), 27);
    for z in 0..nz {
        for dz in 0..3usize {
            let zi = z as isize + dz as isize - 1;
            if zi < 0 || zi >= nz as isize {
                continue;
            }
            let zi = zi as usize;
            for y in 0..ny {
                let orow = (z * ny + y) * nx;
                for dy in 0..3usize {
                    let yi = y as isize + dy as isize - 1;
                    if yi < 0 || yi >= ny as isize {
                        continue;
                    }
                    let irow = (zi * ny + yi as usize) * nx;
                    let t = (dz * 3 + dy) * 3;
                    row_acc3(
                        &mut out[orow..orow + nx],
                        &inp[irow..irow + nx],
                        taps[t],
                        taps[t + 1],
                        taps[t + 2],
                    );
                }
            }
        }
    }
}

/// gw[taps] += correlation of dy with x at each of the 27 offsets.
fn corr_taps_acc<S: Scalar>(
    gw: &mut [S],
    dy: &[S],
    x: &[S],
    nx: usize,
    ny: usize,
    nz: usize,
) {
    debug_assert_eq!(gw.len(), 27);
    for z in 0..nz {
        for dz in 0..3usize {
            let zi = z as isize + dz as isize - 1;
            if zi < 0 || zi >= nz as isize {
                continue;
            }
            let zi = zi as usize;
            for y in 0..ny {
                let orow = (z * ny + y) * nx;
                for dy_k in 0..3usize {
                    let yi = y as isize + dy_k as isize - 1;
                    if yi < 0 || yi >= ny as isize {
                        continue;
                    }
                    let irow = (zi * ny + yi as usize) * nx;
                    let drow = &dy[orow..orow + nx];
                    let xrow = &x[irow..irow + nx];
                    let (mut a0, mut a1, mut a2) = (S::zero(), S::zero(), S::zero());
                    if nx == 1 {
                        a1 += drow[0] * xrow[0];
                    } else {
                        a1 += drow[0] * xrow[0];
                        a2 += drow[0] * xrow[1];
                        for xx in 1..nx - 1 {
                            let d = drow[xx];
                            a0 += d * xrow[xx - 1];
                            a1 += d * xrow[xx];
                            a2 += d * xrow[xx + 1];
                        }
                        let d = drow[nx - 1];
                        a0 += d * xrow[nx - 2];
                        a1 += d * xrow[nx - 1];
                    }
                    let t = (dz * 3 + dy_k) * 3;
                    gw[t] += a0;
                    gw[t + 1] += a1;
                    gw[t + 2] += a2;
                }
            }
        }
    }
}

/// 3D convolution layer, kernel 3 (padding 1) or 1, stride 1; output
/// spatial dims equal input dims.
#[derive(Clone, Debug)]
pub struct Conv3<S: Scalar> {
    c_in: usize,
    c_out: usize,
    ksize: usize,
    pub w: Vec<S>,
    pub b: Vec<S>,
    pub gw: Vec<S>,
    pub gb: Vec<S>,
    cache: Option<FeatureMap<S>>,
}

impl<S: Scalar> Conv3<S> {
    pub fn new(c_in: usize, c_out: usize, ksize: usize) -> Self {
        assert!(ksize == 1 || ksize == 3, "kernel must be 1 or 3");
        let len = c_in * c_out * ksize.pow(3);
        Self {
            c_in,
            c_out,
            ksize,
            w: vec![S::zero(); len],
            b: vec![S::zero(); c_out],
            gw: vec![S::zero(); len],
            gb: vec![S::zero(); c_out],
            cache: None,
        }
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }
    pub fn c_out(&self) -> usize {
        self.c_out
    }
    pub fn ksize(&self) -> usize {
        self.ksize
    }

    /// He-uniform fan-in initialization for weights, zero biases.
    pub fn init_he_uniform(&mut self, rng: &mut ChaCha8Rng) {
        let fan_in = (self.c_in * self.ksize.pow(3)) as f64;
        let bound = (6.0 / fan_in).sqrt();
        for v in &mut self.w {
            *v = sc(rng.gen_range(-bound..bound));
        }
        for v in &mut self.b {
            *v = S::zero();
        }
    }

    pub fn num_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn zero_grad(&mut self) {
        self.gw.iter_mut().for_each(|g| *g = S::zero());
        self.gb.iter_mut().for_each(|g| *g = S::zero());
    }

    pub fn forward(&mut self, x: &FeatureMap<S>, keep: bool) -> Result<FeatureMap<S>> {
        if x.channels() != self.c_in {
            return Err(NetError::Shape(format!(
                "conv expects {} input channels, got {}",
                self.c_in,
                x.channels()
            )));
        }
        let (nx, ny, nz) = x.spatial();
        let n = x.voxels();
        let mut out = FeatureMap::zeros(self.c_out, nx, ny, nz);
        for co in 0..self.c_out {
            let bias = self.b[co];
            let out_ch = out.channel_mut(co);
            out_ch.iter_mut().for_each(|v| *v = bias);
            for ci in 0..self.c_in {
                if self.ksize == 3 {
                    let t0 = (co * self.c_in + ci) * 27;
                    conv_channel_acc(out_ch, x.channel(ci), &self.w[t0..t0 + 27], nx, ny, nz);
                } else {
                    let wv = self.w[co * self.c_in + ci];
                    let xin = x.channel(ci);
                    for i in 0..n {
                        out_ch[i] += wv * xin[i];
                    }
                }
            }
        }
        if keep {
            self.cache = Some(x.clone());
        }
        Ok(out)
    }

    /// Accumulates gw/gb and returns the input gradient.
    pub fn backward(&mut self, dy: &FeatureMap<S>) -> Result<FeatureMap<S>> {
        let x = self
            .cache
            .as_ref()
            .ok_or_else(|| NetError::Shape("conv backward without cached forward".into()))?;
        let (nx, ny, nz) = x.spatial();
        let n = x.voxels();
        if dy.channels() != self.c_out || dy.spatial() != x.spatial() {
            return Err(NetError::Shape("conv backward gradient shape mismatch".into()));
        }
        let mut dx = FeatureMap::zeros(self.c_in, nx, ny, nz);
        for co in 0..self.c_out {
            let dych = dy.channel(co);
            self.gb[co] += dych.iter().copied().sum::<S>();
            for ci in 0..self.c_in {
                if self.ksize == 3 {
                    let t0 = (co * self.c_in + ci) * 27;
                    corr_taps_acc(&mut self.gw[t0..t0 + 27], dych, x.channel(ci), nx, ny, nz);
                    // dx = dy (*) flipped taps
                    let mut flipped = [S::zero(); 27];
                    for (i, f) in flipped.iter_mut().enumerate() {
                        *f = self.w[t0 + 26 - i];
                    }
                    conv_channel_acc(dx.channel_mut(ci), dych, &flipped, nx, ny, nz);
                } else {
                    let wi = co * self.c_in + ci;
                    let xin = x.channel(ci);
                    let mut acc = S::zero();
                    for i in 0..n {
                        acc += dych[i] * xin[i];
                    }
                    self.gw[wi] += acc;
                    let wv = self.w[wi];
                    let dxch = dx.channel_mut(ci);
                    for i in 0..n {
                        dxch[i] += wv * dych[i];
                    }
                }
            }
        }
        Ok(dx)
    }
}

#[derive(Clone, Debug)]
struct BnCache<S: Scalar> {
    xhat: Vec<S>,
    inv_std: Vec<S>,
    train: bool,
}

/// Per-channel batch normalization over the spatial elements of a single
/// sample, with running statistics for eval mode.
#[derive(Clone, Debug)]
pub struct BatchNorm<S: Scalar> {
    channels: usize,
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    pub ggamma: Vec<S>,
    pub gbeta: Vec<S>,
    cache: Option<BnCache<S>>,
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![S::one(); channels],
            beta: vec![S::zero(); channels],
            running_mean: vec![S::zero(); channels],
            running_var: vec![S::one(); channels],
            ggamma: vec![S::zero(); channels],
            gbeta: vec![S::zero(); channels],
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_params(&self) -> usize {
        2 * self.channels
    }

    pub fn zero_grad(&mut self) {
        self.ggamma.iter_mut().for_each(|g| *g = S::zero());
        self.gbeta.iter_mut().for_each(|g| *g = S::zero());
    }

    pub fn forward(&mut self, x: &FeatureMap<S>, mode: Mode, keep: bool) -> Result<FeatureMap<S>> {
        if x.channels() != self.channels {
            return Err(NetError::Shape("batchnorm channel mismatch".into()));
        }
        let n = x.voxels();
        if mode == Mode::Train && n < 2 {
            return Err(NetError::Shape("batchnorm train mode needs >= 2 elements".into()));
        }
        let eps = sc::<S>(BN_EPS);
        let mut out = FeatureMap::zeros(self.channels, x.spatial().0, x.spatial().1, x.spatial().2);
        let mut xhat = if keep { vec![S::zero(); x.data().len()] } else { Vec::new() };
        let mut inv_stds = vec![S::zero(); self.channels];
        for c in 0..self.channels {
            let xin = x.channel(c);
            let (mean, var) = match mode {
                Mode::Train => {
                    let nf = sc::<S>(n as f64);
                    let mean = xin.iter().copied().sum::<S>() / nf;
                    let var = xin.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / nf;
                    // running stats use the unbiased variance
                    let unbiased = var * sc::<S>(n as f64 / (n as f64 - 1.0));
                    let m = sc::<S>(BN_MOMENTUM);
                    self.running_mean[c] = (S::one() - m) * self.running_mean[c] + m * mean;
                    self.running_var[c] = (S::one() - m) * self.running_var[c] + m * unbiased;
                    (mean, var)
                }
                Mode::Eval => (self.running_mean[c], self.running_var[c]),
            };
            let inv_std = S::one() / (var + eps).sqrt();
            inv_stds[c] = inv_std;
            let g = self.gamma[c];
            let b = self.beta[c];
            let out_ch = out.channel_mut(c);
            for i in 0..n {
                let xh = (xin[i] - mean) * inv_std;
                out_ch[i] = g * xh + b;
                if keep {
                    xhat[c * n + i] = xh;
                }
            }
        }
        if keep {
            self.cache = Some(BnCache { xhat, inv_std: inv_stds, train: mode == Mode::Train });
        }
        Ok(out)
    }

    pub fn backward(&mut self, dy: &FeatureMap<S>) -> Result<FeatureMap<S>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| NetError::Shape("batchnorm backward without cached forward".into()))?;
        let n = dy.voxels();
        let nf = sc::<S>(n as f64);
        let mut dx = FeatureMap::zeros(self.channels, dy.spatial().0, dy.spatial().1, dy.spatial().2);
        for c in 0..self.channels {
            let dych = dy.channel(c);
            let xh = &cache.xhat[c * n..(c + 1) * n];
            let mut sum_dy = S::zero();
            let mut sum_dy_xh = S::zero();
            for i in 0..n {
                sum_dy += dych[i];
                sum_dy_xh += dych[i] * xh[i];
            }
            self.gbeta[c] += sum_dy;
            self.ggamma[c] += sum_dy_xh;
            let scale = self.gamma[c] * cache.inv_std[c];
            let dxch = dx.channel_mut(c);
            if cache.train {
                let mean_dy = sum_dy / nf;
                let mean_dy_xh = sum_dy_xh / nf;
                for i in 0..n {
                    dxch[i] = scale * (dych[i] - mean_dy - xh[i] * mean_dy_xh);
                }
            } else {
                for i in 0..n {
                    dxch[i] = scale * dych[i];
                }
            }
        }
        Ok(dx)
    }
}

/// ReLU with cached activity mask.
#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Self { mask: None }
    }

    pub fn forward<S: Scalar>(&mut self, x: &FeatureMap<S>, keep: bool) -> FeatureMap<S> {
        let mut out = x.clone();
        if keep {
            let mask = x.data().iter().map(|&v| v > S::zero()).collect();
            self.mask = Some(mask);
        }
        for v in out.data_mut() {
            if *v < S::zero() {
                *v = S::zero();
            }
        }
        out
    }

    pub fn backward<S: Scalar>(&mut self, dy: &FeatureMap<S>) -> Result<FeatureMap<S>> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| NetError::Shape("relu backward without cached forward".into()))?;
        let mut dx = dy.clone();
        for (v, &live) in dx.data_mut().iter_mut().zip(mask) {
            if !live {
                *v = S::zero();
            }
        }
        Ok(dx)
    }
}

/// 2x2x2 max pooling with stride 2; caches argmax indices for backward.
#[derive(Clone, Debug, Default)]
pub struct MaxPool {
    cache: Option<(Vec<u32>, (usize, usize, usize, usize))>,
}

impl MaxPool {
    pub fn new() -> Self {
        Self { cache: None }
    }

    pub fn forward<S: Scalar>(&mut self, x: &FeatureMap<S>, keep: bool) -> Result<FeatureMap<S>> {
        let (nx, ny, nz) = x.spatial();
        if nx % 2 != 0 || ny % 2 != 0 || nz % 2 != 0 {
            return Err(NetError::Shape(format!("max pool needs even dims, got {nx}x{ny}x{nz}")));
        }
        let c = x.channels();
        let (ox, oy, oz) = (nx / 2, ny / 2, nz / 2);
        let mut out = FeatureMap::zeros(c, ox, oy, oz);
        let mut argmax = if keep { vec![0u32; c * ox * oy * oz] } else { Vec::new() };
        let on = ox * oy * oz;
        for ch in 0..c {
            let xin = x.channel(ch);
            let out_ch = out.channel_mut(ch);
            for z in 0..oz {
                for y in 0..oy {
                    for xx in 0..ox {
                        let mut best = S::neg_infinity();
                        let mut best_i = 0usize;
                        for dz in 0..2 {
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let i = (2 * xx + dx) + nx * ((2 * y + dy) + ny * (2 * z + dz));
                                    if xin[i] > best {
                                        best = xin[i];
                                        best_i = i;
                                    }
                                }
                            }
                        }
                        let o = xx + ox * (y + oy * z);
                        out_ch[o] = best;
                        if keep {
                            argmax[ch * on + o] = best_i as u32;
                        }
                    }
                }
            }
        }
        if keep {
            self.cache = Some((argmax, (c, nx, ny, nz)));
        }
        Ok(out)
    }

    pub fn backward<S: Scalar>(&mut self, dy: &FeatureMap<S>) -> Result<FeatureMap<S>> {
        let (argmax, (c, nx, ny, nz)) = self
            .cache
            .as_ref()
            .ok_or_else(|| NetError::Shape("max pool backward without cached forward".into()))?;
        let mut dx = FeatureMap::zeros(*c, *nx, *ny, *nz);
        let on = dy.voxels();
        for ch in 0..*c {
            let dych = dy.channel(ch);
            let dxch = dx.channel_mut(ch);
            for o in 0..on {
                dxch[argmax[ch * on + o] as usize] += dych[o];
            }
        }
        Ok(dx)
    }
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2_forward<S: Scalar>(x: &FeatureMap<S>) -> FeatureMap<S> {
    let (nx, ny, nz) = x.spatial();
    let c = x.channels();
    let mut out = FeatureMap::zeros(c, 2 * nx, 2 * ny, 2 * nz);
    for ch in 0..c {
        let xin = x.channel(ch);
        let out_ch = out.channel_mut(ch);
        for z in 0..2 * nz {
            for y in 0..2 * ny {
                let src_row = (z / 2 * ny + y / 2) * nx;
                let dst_row = (z * 2 * ny + y) * 2 * nx;
                for xx in 0..2 * nx {
                    out_ch[dst_row + xx] = xin[src_row + xx / 2];
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample2_forward`]: sums each 2x2x2 child block.
pub fn upsample2_backward<S: Scalar>(dy: &FeatureMap<S>) -> Result<FeatureMap<S>> {
    let (nx, ny, nz) = dy.spatial();
    if nx % 2 != 0 || ny % 2 != 0 || nz % 2 != 0 {
        return Err(NetError::Shape("upsample backward needs even dims".into()));
    }
    let c = dy.channels();
    let (ox, oy, oz) = (nx / 2, ny / 2, nz / 2);
    let mut dx = FeatureMap::zeros(c, ox, oy, oz);
    for ch in 0..c {
        let dych = dy.channel(ch);
        let dxch = dx.channel_mut(ch);
        for z in 0..nz {
            for y in 0..ny {
                let src_row = (z * ny + y) * nx;
                let dst_row = (z / 2 * oy + y / 2) * ox;
                for xx in 0..nx {
                    dxch[dst_row + xx / 2] += dych[src_row + xx];
                }
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_map(c: usize, nx: usize, ny: usize, nz: usize, seed: u64) -> FeatureMap<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..c * nx * ny * nz).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FeatureMap::from_data(c, nx, ny, nz, data).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let mut conv = Conv3::<f64>::new(1, 1, 3);
        conv.w[13] = 1.0; // center tap
        let x = random_map(1, 6, 5, 4, 1);
        let y = conv.forward(&x, false).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn conv_zero_weights_bias_only() {
        let mut conv = Conv3::<f64>::new(2, 3, 3);
        conv.b = vec![0.5, -0.25, 0.0];
        let x = random_map(2, 4, 4, 4, 2);
        let y = conv.forward(&x, false).unwrap();
        for c in 0..3 {
            for &v in y.channel(c) {
                assert_eq!(v, conv.b[c]);
            }
        }
    }

    fn probe_loss(y: &FeatureMap<f64>, probe: &FeatureMap<f64>) -> f64 {
        y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let h = 1e-5;
        for seed in 0..3 {
            let x = random_map(1, 6, 6, 4, 100 + seed);
            let probe = random_map(1, 6, 6, 4, 200 + seed);
            let mut conv = Conv3::<f64>::new(1, 1, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            conv.init_he_uniform(&mut rng);

            conv.zero_grad();
            conv.forward(&x, true).unwrap();
            let dx = conv.backward(&probe).unwrap();

            // weights and bias
            let mut c2 = conv.clone();
            for i in 0..c2.w.len() {
                let orig = c2.w[i];
                c2.w[i] = orig + h;
                let lp = probe_loss(&c2.forward(&x, false).unwrap(), &probe);
                c2.w[i] = orig - h;
                let lm = probe_loss(&c2.forward(&x, false).unwrap(), &probe);
                c2.w[i] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = conv.gw[i];
                if an.abs() > 1e-8 {
                    assert!((fd - an).abs() / an.abs() < 1e-3, "weight {i}: {fd} vs {an}");
                }
            }
            {
                let orig = c2.b[0];
                c2.b[0] = orig + h;
                let lp = probe_loss(&c2.forward(&x, false).unwrap(), &probe);
                c2.b[0] = orig - h;
                let lm = probe_loss(&c2.forward(&x, false).unwrap(), &probe);
                c2.b[0] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - conv.gb[0]).abs() / conv.gb[0].abs().max(1e-10) < 1e-3);
            }

            // input
            let mut xm = x.clone();
            for i in 0..xm.data().len() {
                let orig = xm.data()[i];
                xm.data_mut()[i] = orig + h;
                let lp = probe_loss(&c2.forward(&xm, false).unwrap(), &probe);
                xm.data_mut()[i] = orig - h;
                let lm = probe_loss(&c2.forward(&xm, false).unwrap(), &probe);
                xm.data_mut()[i] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = dx.data()[i];
                if an.abs() > 1e-8 {
                    assert!((fd - an).abs() / an.abs() < 1e-3, "input grad {i}: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn conv1x1_gradcheck() {
        let x = random_map(3, 4, 4, 4, 7);
        let probe = random_map(2, 4, 4, 4, 8);
        let mut conv = Conv3::<f64>::new(3, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        conv.init_he_uniform(&mut rng);
        conv.zero_grad();
        conv.forward(&x, true).unwrap();
        conv.backward(&probe).unwrap();
        let gw = conv.gw.clone();
        let mut c2 = conv.clone();
        let h = 1e-6;
        for i in 0..c2.w.len() {
            let orig = c2.w[i];
            c2.w[i] = orig + h;
            let lp: f64 = c2.forward(&x, false).unwrap().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
            c2.w[i] = orig - h;
            let lm: f64 = c2.forward(&x, false).unwrap().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
            c2.w[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - gw[i]).abs() / gw[i].abs().max(1e-10) < 1e-3);
        }
    }

    #[test]
    fn batchnorm_eval_identity_and_train_stats() {
        let mut bn = BatchNorm::<f64>::new(2);
        let x = random_map(2, 4, 4, 4, 11);
        // eval with mean 0, var 1, gamma 1, beta 0 is (nearly) the identity
        let y = bn.forward(&x, Mode::Eval, false).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-5 * a.abs().max(1.0));
        }

        let y = bn.forward(&x, Mode::Train, false).unwrap();
        let n = x.voxels() as f64;
        for c in 0..2 {
            let mean: f64 = y.channel(c).iter().sum::<f64>() / n;
            let var: f64 = y.channel(c).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6, "channel mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel var {var}");
        }
    }

    #[test]
    fn batchnorm_gradcheck_train_and_eval() {
        for (mode, seed) in [(Mode::Train, 21u64), (Mode::Eval, 22)] {
            let x = random_map(2, 4, 3, 3, seed);
            let probe = random_map(2, 4, 3, 3, seed + 50);
            let mut bn = BatchNorm::<f64>::new(2);
            bn.gamma = vec![1.3, 0.7];
            bn.beta = vec![0.1, -0.2];
            bn.running_mean = vec![0.05, -0.1];
            bn.running_var = vec![1.5, 0.8];

            let mut bn_fwd = bn.clone();
            bn_fwd.forward(&x, mode, true).unwrap();
            let dx = bn_fwd.backward(&probe).unwrap();

            let h = 1e-5;
            let mut xm = x.clone();
            for i in 0..xm.data().len() {
                let orig = xm.data()[i];
                let mut eval = |v: f64| -> f64 {
                    xm.data_mut()[i] = v;
                    let mut b2 = bn.clone();
                    let y = b2.forward(&xm, mode, false).unwrap();
                    y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
                };
                let lp = eval(orig + h);
                let lm = eval(orig - h);
                xm.data_mut()[i] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = dx.data()[i];
                if an.abs() > 1e-8 {
                    assert!(
                        (fd - an).abs() / an.abs() < 1e-3,
                        "{mode:?} input {i}: {fd} vs {an}"
                    );
                }
            }

            // gamma/beta grads
            for (pick, grads) in [(0usize, bn_fwd.ggamma.clone()), (1, bn_fwd.gbeta.clone())] {
                for c in 0..2 {
                    let mut eval = |v: f64| -> f64 {
                        let mut b2 = bn.clone();
                        if pick == 0 {
                            b2.gamma[c] = v;
                        } else {
                            b2.beta[c] = v;
                        }
                        let y = b2.forward(&x, mode, false).unwrap();
                        y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
                    };
                    let orig = if pick == 0 { bn.gamma[c] } else { bn.beta[c] };
                    let fd = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
                    assert!(
                        (fd - grads[c]).abs() / grads[c].abs().max(1e-10) < 1e-3,
                        "{mode:?} affine {pick}/{c}: {fd} vs {}",
                        grads[c]
                    );
                }
            }
        }
    }

    #[test]
    fn relu_and_pool_and_upsample_adjoints() {
        let x = random_map(2, 4, 4, 4, 31);
        let mut relu = Relu::new();
        let y = relu.forward(&x, true);
        for (&a, &b) in x.data().iter().zip(y.data()) {
            assert_eq!(b, a.max(0.0));
        }
        let probe = random_map(2, 4, 4, 4, 32);
        let dx = relu.backward(&probe).unwrap();
        for i in 0..x.data().len() {
            let expect = if x.data()[i] > 0.0 { probe.data()[i] } else { 0.0 };
            assert_eq!(dx.data()[i], expect);
        }

        // pooling: forward picks the max, backward routes to the argmax
        let mut pool = MaxPool::new();
        let y = pool.forward(&x, true).unwrap();
        assert_eq!(y.spatial(), (2, 2, 2));
        let dy = random_map(2, 2, 2, 2, 33);
        let dx = pool.backward(&dy).unwrap();
        // adjoint identity: <pool(x), dy> pieces route exactly once
        let routed: f64 = dx.data().iter().filter(|v| **v != 0.0).count() as f64;
        assert!(routed <= dy.data().len() as f64);
        let lhs: f64 = y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = dx.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        // upsample adjoint: <up(x), w> == <x, up^T(w)>
        let w = random_map(2, 8, 8, 8, 34);
        let up = upsample2_forward(&x);
        let down = upsample2_backward(&w).unwrap();
        let lhs: f64 = up.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(down.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pool_rejects_odd_dims() {
        let x = random_map(1, 5, 4, 4, 35);
        assert!(MaxPool::new().forward(&x, false).is_err());
    }
}
