//! Progressive architecture: K sequentially concatenated Unets, each
//! refining the previous stage's estimate given the original HPFP.

use hpqsm_core::{wrap_phase, RealVolume, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::unet::{Mode, Unet, UnetConfig};
use crate::{FeatureMap, NetError, Result};

#[derive(Clone, Debug)]
pub struct Prognet<S: Scalar> {
    cfg: UnetConfig,
    seed: u64,
    stages: Vec<Unet<S>>,
}

impl<S: Scalar> Prognet<S> {
    /// Build K stages with seeded He-uniform initialization. Every stage
    /// takes two input channels: the previous estimate (zero for the first
    /// stage) and the HPFP.
    pub fn new(cfg: UnetConfig, stages: usize, seed: u64) -> Result<Self> {
        if stages == 0 {
            return Err(NetError::Shape("progressive net needs at least one stage".into()));
        }
        if cfg.in_channels != 2 {
            return Err(NetError::Shape("progressive stages take exactly 2 input channels".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut built = Vec::with_capacity(stages);
        for _ in 0..stages {
            let mut u = Unet::new(cfg.clone())?;
            u.init_weights(&mut rng);
            built.push(u);
        }
        Ok(Self { cfg, seed, stages: built })
    }

    pub fn config(&self) -> &UnetConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stage_mut(&mut self, k: usize) -> &mut Unet<S> {
        &mut self.stages[k]
    }

    pub fn num_params(&self) -> usize {
        self.stages.iter().map(|s| s.num_params()).sum()
    }

    /// All stage outputs QSM_1..QSM_K; QSM_0 is identically zero.
    pub fn forward_all(
        &mut self,
        f_hpfp: &FeatureMap<S>,
        mode: Mode,
        keep: bool,
    ) -> Result<Vec<FeatureMap<S>>> {
        if f_hpfp.channels() != 1 {
            return Err(NetError::Shape("HPFP input must be single-channel".into()));
        }
        let (nx, ny, nz) = f_hpfp.spatial();
        let mut prev = FeatureMap::zeros(1, nx, ny, nz);
        let mut outs = Vec::with_capacity(self.stages.len());
        for stage in &mut self.stages {
            let input = FeatureMap::concat(&prev, f_hpfp)?;
            let out = stage.forward(&input, mode, keep)?;
            prev = out.clone();
            outs.push(out);
        }
        Ok(outs)
    }

    /// Backpropagate per-stage output gradients through the whole chain,
    /// including the previous-estimate input paths.
    pub fn backward_all(&mut self, stage_grads: &[FeatureMap<S>]) -> Result<()> {
        if stage_grads.len() != self.stages.len() {
            return Err(NetError::Shape("one output gradient per stage required".into()));
        }
        let mut carry: Option<FeatureMap<S>> = None;
        for (k, stage) in self.stages.iter_mut().enumerate().rev() {
            let mut d = stage_grads[k].clone();
            if let Some(c) = carry.take() {
                d.add_in_place(&c)?;
            }
            let d_input = stage.backward(&d)?;
            let (d_prev, _d_hpfp) = d_input.split(1);
            carry = Some(d_prev);
        }
        Ok(())
    }

    /// Inference on a whole volume: the input phase is wrapped to the
    /// principal interval, stages run in eval mode, and the last stage
    /// output is returned in ppm.
    pub fn predict(&mut self, f_hpfp: &RealVolume<S>) -> Result<RealVolume<S>> {
        let wrapped = f_hpfp.map(wrap_phase);
        let input = FeatureMap::from_volume(&wrapped);
        let outs = self.forward_all(&input, Mode::Eval, false)?;
        outs.last()
            .expect("at least one stage")
            .to_volume(f_hpfp.grid())
    }

    pub fn zero_grad(&mut self) {
        for s in &mut self.stages {
            s.zero_grad();
        }
    }

    pub fn scale_grads(&mut self, factor: S) {
        for s in &mut self.stages {
            s.scale_grads(factor);
        }
    }

    pub fn visit_trainable(&mut self, f: &mut dyn FnMut(String, &mut Vec<S>, &mut Vec<S>)) {
        for (k, s) in self.stages.iter_mut().enumerate() {
            s.visit_trainable(&format!("stage{k}."), f);
        }
    }

    pub fn visit_state(&mut self, f: &mut dyn FnMut(String, &mut Vec<S>)) {
        for (k, s) in self.stages.iter_mut().enumerate() {
            s.visit_state(&format!("stage{k}."), f);
        }
    }

    /// Snapshot of every stage's trainable parameters (testing.)
    pub fn snapshot_all(&mut self) -> Vec<Vec<S>> {
        let mut out = Vec::new();
        self.visit_trainable(&mut |_, w, _| out.push(w.clone()));
        out
    }
}
