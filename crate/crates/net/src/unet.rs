//! Encoder/decoder 3D Unet: per level two conv-BN-ReLU blocks, 2x max-pool
//! downsampling, nearest-neighbor upsampling with a convolution, skip
//! concatenation, and a final 1x1x1 projection with linear output.

use hpqsm_core::Scalar;
use rand_chacha::ChaCha8Rng;

pub use crate::ops::Mode;
use crate::ops::{upsample2_backward, upsample2_forward, BatchNorm, Conv3, MaxPool, Relu};
use crate::{FeatureMap, NetError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnetConfig {
    pub levels: usize,
    pub widths: Vec<usize>,
    pub in_channels: usize,
}

impl UnetConfig {
    /// Desk-scale default: 3 levels at widths (8, 16, 32), two input
    /// channels (previous estimate + HPFP).
    pub fn desk() -> Self {
        Self { levels: 3, widths: vec![8, 16, 32], in_channels: 2 }
    }

    /// Full-size configuration: 4 levels at widths (32, 64, 128, 256).
    pub fn full() -> Self {
        Self { levels: 4, widths: vec![32, 64, 128, 256], in_channels: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.widths.len() != self.levels {
            return Err(NetError::Shape(format!(
                "widths list ({}) must match levels ({})",
                self.widths.len(),
                self.levels
            )));
        }
        if self.in_channels == 0 || self.widths.iter().any(|&w| w == 0) {
            return Err(NetError::Shape("channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Spatial dims must be divisible by this factor.
    pub fn divisibility(&self) -> usize {
        1 << (self.levels - 1)
    }
}

/// conv-BN-ReLU twice.
#[derive(Clone, Debug)]
pub struct ConvBlock<S: Scalar> {
    pub conv1: Conv3<S>,
    pub bn1: BatchNorm<S>,
    relu1: Relu,
    pub conv2: Conv3<S>,
    pub bn2: BatchNorm<S>,
    relu2: Relu,
}

impl<S: Scalar> ConvBlock<S> {
    fn new(c_in: usize, c_out: usize) -> Self {
        Self {
            conv1: Conv3::new(c_in, c_out, 3),
            bn1: BatchNorm::new(c_out),
            relu1: Relu::new(),
            conv2: Conv3::new(c_out, c_out, 3),
            bn2: BatchNorm::new(c_out),
            relu2: Relu::new(),
        }
    }

    fn init(&mut self, rng: &mut ChaCha8Rng) {
        self.conv1.init_he_uniform(rng);
        self.conv2.init_he_uniform(rng);
    }

    fn forward(&mut self, x: &FeatureMap<S>, mode: Mode, keep: bool) -> Result<FeatureMap<S>> {
        let h = self.conv1.forward(x, keep)?;
        let h = self.bn1.forward(&h, mode, keep)?;
        let h = self.relu1.forward(&h, keep);
        let h = self.conv2.forward(&h, keep)?;
        let h = self.bn2.forward(&h, mode, keep)?;
        Ok(self.relu2.forward(&h, keep))
    }

    fn backward(&mut self, dy: &FeatureMap<S>) -> Result<FeatureMap<S>> {
        let d = self.relu2.backward(dy)?;
        let d = self.bn2.backward(&d)?;
        let d = self.conv2.backward(&d)?;
        let d = self.relu1.backward(&d)?;
        let d = self.bn1.backward(&d)?;
        self.conv1.backward(&d)
    }

    fn zero_grad(&mut self) {
        self.conv1.zero_grad();
        self.bn1.zero_grad();
        self.conv2.zero_grad();
        self.bn2.zero_grad();
    }

    fn num_params(&self) -> usize {
        self.conv1.num_params() + self.bn1.num_params() + self.conv2.num_params() + self.bn2.num_params()
    }

    fn visit_trainable(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &mut Vec<S>, &mut Vec<S>),
    ) {
        f(format!("{prefix}.conv1.w"), &mut self.conv1.w, &mut self.conv1.gw);
        f(format!("{prefix}.conv1.b"), &mut self.conv1.b, &mut self.conv1.gb);
        f(format!("{prefix}.bn1.gamma"), &mut self.bn1.gamma, &mut self.bn1.ggamma);
        f(format!("{prefix}.bn1.beta"), &mut self.bn1.beta, &mut self.bn1.gbeta);
        f(format!("{prefix}.conv2.w"), &mut self.conv2.w, &mut self.conv2.gw);
        f(format!("{prefix}.conv2.b"), &mut self.conv2.b, &mut self.conv2.gb);
        f(format!("{prefix}.bn2.gamma"), &mut self.bn2.gamma, &mut self.bn2.ggamma);
        f(format!("{prefix}.bn2.beta"), &mut self.bn2.beta, &mut self.bn2.gbeta);
    }

    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Vec<S>)) {
        f(format!("{prefix}.bn1.running_mean"), &mut self.bn1.running_mean);
        f(format!("{prefix}.bn1.running_var"), &mut self.bn1.running_var);
        f(format!("{prefix}.bn2.running_mean"), &mut self.bn2.running_mean);
        f(format!("{prefix}.bn2.running_var"), &mut self.bn2.running_var);
    }
}

#[derive(Clone, Debug)]
pub struct Unet<S: Scalar> {
    cfg: UnetConfig,
    enc: Vec<ConvBlock<S>>,
    pools: Vec<MaxPool>,
    up_convs: Vec<Conv3<S>>,
    dec: Vec<ConvBlock<S>>,
    out_conv: Conv3<S>,
}

impl<S: Scalar> Unet<S> {
    pub fn new(cfg: UnetConfig) -> Result<Self> {
        cfg.validate()?;
        let l = cfg.levels;
        let mut enc = Vec::with_capacity(l);
        for i in 0..l {
            let c_in = if i == 0 { cfg.in_channels } else { cfg.widths[i - 1] };
            enc.push(ConvBlock::new(c_in, cfg.widths[i]));
        }
        let pools = (0..l.saturating_sub(1)).map(|_| MaxPool::new()).collect();
        let mut up_convs = Vec::with_capacity(l.saturating_sub(1));
        let mut dec = Vec::with_capacity(l.saturating_sub(1));
        for i in 0..l.saturating_sub(1) {
            up_convs.push(Conv3::new(cfg.widths[i + 1], cfg.widths[i], 3));
            dec.push(ConvBlock::new(2 * cfg.widths[i], cfg.widths[i]));
        }
        let out_conv = Conv3::new(cfg.widths[0], 1, 1);
        Ok(Self { cfg, enc, pools, up_convs, dec, out_conv })
    }

    pub fn config(&self) -> &UnetConfig {
        &self.cfg
    }

    pub fn init_weights(&mut self, rng: &mut ChaCha8Rng) {
        for b in &mut self.enc {
            b.init(rng);
        }
        for c in &mut self.up_convs {
            c.init_he_uniform(rng);
        }
        for b in &mut self.dec {
            b.init(rng);
        }
        self.out_conv.init_he_uniform(rng);
    }

    pub fn num_params(&self) -> usize {
        self.enc.iter().map(|b| b.num_params()).sum::<usize>()
            + self.up_convs.iter().map(|c| c.num_params()).sum::<usize>()
            + self.dec.iter().map(|b| b.num_params()).sum::<usize>()
            + self.out_conv.num_params()
    }

    fn check_dims(&self, x: &FeatureMap<S>) -> Result<()> {
        if x.channels() != self.cfg.in_channels {
            return Err(NetError::Shape(format!(
                "unet expects {} input channels, got {}",
                self.cfg.in_channels,
                x.channels()
            )));
        }
        let (nx, ny, nz) = x.spatial();
        let d = self.cfg.divisibility();
        if nx % d != 0 || ny % d != 0 || nz % d != 0 {
            return Err(NetError::Shape(format!(
                "spatial dims {nx}x{ny}x{nz} not divisible by {d}"
            )));
        }
        Ok(())
    }

    /// Forward pass; with `keep` the caches needed by [`Self::backward`]
    /// are retained.
    pub fn forward(&mut self, x: &FeatureMap<S>, mode: Mode, keep: bool) -> Result<FeatureMap<S>> {
        self.check_dims(x)?;
        let l = self.cfg.levels;
        let mut skips: Vec<FeatureMap<S>> = Vec::with_capacity(l - 1);
        let mut h = x.clone();
        for i in 0..l - 1 {
            let s = self.enc[i].forward(&h, mode, keep)?;
            h = self.pools[i].forward(&s, keep)?;
            skips.push(s);
        }
        h = self.enc[l - 1].forward(&h, mode, keep)?;
        for i in (0..l - 1).rev() {
            let up = upsample2_forward(&h);
            let up = self.up_convs[i].forward(&up, keep)?;
            let cat = FeatureMap::concat(&up, &skips[i])?;
            h = self.dec[i].forward(&cat, mode, keep)?;
        }
        self.out_conv.forward(&h, keep)
    }

    /// Reverse pass from the output gradient back to the input gradient,
    /// accumulating parameter gradients along the way.
    pub fn backward(&mut self, dy: &FeatureMap<S>) -> Result<FeatureMap<S>> {
        let l = self.cfg.levels;
        let mut d = self.out_conv.backward(dy)?;
        let mut skip_grads: Vec<FeatureMap<S>> = Vec::with_capacity(l - 1);
        for i in 0..l - 1 {
            d = self.dec[i].backward(&d)?;
            let (d_up, d_skip) = d.split(self.cfg.widths[i]);
            skip_grads.push(d_skip);
            let d_pre_up = self.up_convs[i].backward(&d_up)?;
            d = upsample2_backward(&d_pre_up)?;
        }
        d = self.enc[l - 1].backward(&d)?;
        for i in (0..l - 1).rev() {
            let mut dp = self.pools[i].backward(&d)?;
            dp.add_in_place(&skip_grads[i])?;
            d = self.enc[i].backward(&dp)?;
        }
        Ok(d)
    }

    pub fn zero_grad(&mut self) {
        for b in &mut self.enc {
            b.zero_grad();
        }
        for c in &mut self.up_convs {
            c.zero_grad();
        }
        for b in &mut self.dec {
            b.zero_grad();
        }
        self.out_conv.zero_grad();
    }

    /// Visit (name, parameter, gradient) in stable declaration order.
    pub fn visit_trainable(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &mut Vec<S>, &mut Vec<S>),
    ) {
        for (i, b) in self.enc.iter_mut().enumerate() {
            b.visit_trainable(&format!("{prefix}enc{i}"), f);
        }
        for (i, c) in self.up_convs.iter_mut().enumerate() {
            f(format!("{prefix}up{i}.w"), &mut c.w, &mut c.gw);
            f(format!("{prefix}up{i}.b"), &mut c.b, &mut c.gb);
        }
        for (i, b) in self.dec.iter_mut().enumerate() {
            b.visit_trainable(&format!("{prefix}dec{i}"), f);
        }
        f(format!("{prefix}out.w"), &mut self.out_conv.w, &mut self.out_conv.gw);
        f(format!("{prefix}out.b"), &mut self.out_conv.b, &mut self.out_conv.gb);
    }

    /// Visit non-trainable state (batch-norm running statistics).
    pub fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Vec<S>)) {
        for (i, b) in self.enc.iter_mut().enumerate() {
            b.visit_state(&format!("{prefix}enc{i}"), f);
        }
        for (i, b) in self.dec.iter_mut().enumerate() {
            b.visit_state(&format!("{prefix}dec{i}"), f);
        }
    }

    /// Clone of all trainable parameter vectors, in visit order.
    pub fn snapshot_params(&mut self) -> Vec<Vec<S>> {
        let mut out = Vec::new();
        self.visit_trainable("", &mut |_, w, _| out.push(w.clone()));
        out
    }

    pub fn restore_params(&mut self, snapshot: &[Vec<S>]) {
        let mut i = 0;
        self.visit_trainable("", &mut |_, w, _| {
            w.copy_from_slice(&snapshot[i]);
            i += 1;
        });
        assert_eq!(i, snapshot.len(), "snapshot length mismatch");
    }

    /// Scale all accumulated gradients (batch averaging).
    pub fn scale_grads(&mut self, factor: S) {
        self.visit_trainable("", &mut |_, _, g| {
            for v in g.iter_mut() {
                *v *= factor;
            }
        });
    }

    /// Set every trainable parameter to zero (testing helper).
    pub fn zero_params(&mut self) {
        self.visit_trainable("", &mut |_, w, _| {
            for v in w.iter_mut() {
                *v = S::zero();
            }
        });
    }
}
