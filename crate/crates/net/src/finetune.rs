//! Physics-based test-time fine-tuning of the last progressive stage: the
//! stage input (previous estimate + HPFP) is computed once and frozen,
//! then the stage weights are updated by Adam against the high-pass
//! filtering dipole convolution fidelity loss on the whole volume.

use hpqsm_core::physics::{loss_and_grad, make_dipole_kernel, make_hann_transfer_scaled, ScanParams};
use hpqsm_core::{wrap_phase, RealVolume, Scalar};

use crate::unet::Mode;
use crate::{Adam, FeatureMap, NetError, Prognet, Result};

#[derive(Clone, Debug)]
pub struct FinetuneConfig {
    pub lr: f64,
    /// Stop when `|L_t - L_{t-1}| / L_{t-1}` falls below this.
    pub rel_change_threshold: f64,
    /// Stop (and restore the best snapshot) after this many consecutive
    /// loss increases.
    pub fluctuation_window: usize,
    pub max_iters: usize,
    /// Relative cutoff of the Hann filter inside the loss, fixed regardless
    /// of how the test data was filtered.
    pub loss_fc: f64,
    /// Passband-constant scale of the loss filter (1 = nominal).
    pub hann_beta_scale: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            rel_change_threshold: 5e-3,
            fluctuation_window: 3,
            max_iters: 200,
            loss_fc: 0.5,
            hann_beta_scale: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    RelChange,
    Fluctuation,
    MaxIters,
    NonFinite,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StopDecision {
    Continue,
    Stop(StopReason),
}

/// Loss history and stopping bookkeeping, drivable on any loss sequence.
#[derive(Clone, Debug)]
pub struct FinetuneState<S: Scalar> {
    threshold: S,
    window: usize,
    max_iters: usize,
    history: Vec<S>,
    best_loss: S,
    best_iter: usize,
    consecutive_increases: usize,
}

impl<S: Scalar> FinetuneState<S> {
    pub fn new(threshold: S, window: usize, max_iters: usize) -> Self {
        Self {
            threshold,
            window,
            max_iters,
            history: Vec::new(),
            best_loss: S::infinity(),
            best_iter: 0,
            consecutive_increases: 0,
        }
    }

    pub fn from_config(cfg: &FinetuneConfig) -> Self {
        Self::new(hpqsm_core::sc(cfg.rel_change_threshold), cfg.fluctuation_window, cfg.max_iters)
    }

    pub fn history(&self) -> &[S] {
        &self.history
    }

    pub fn best_loss(&self) -> S {
        self.best_loss
    }

    /// 1-based iteration whose loss is the minimum of the history.
    pub fn best_iter(&self) -> usize {
        self.best_iter
    }

    /// Relative change between the two most recent recorded losses.
    pub fn last_rel_change(&self) -> Option<f64> {
        let n = self.history.len();
        if n < 2 {
            return None;
        }
        let prev = self.history[n - 2].as_f64();
        let cur = self.history[n - 1].as_f64();
        Some(if prev == 0.0 {
            if cur == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (cur - prev).abs() / prev
        })
    }

    /// Record the loss of the current iteration and decide whether to stop.
    pub fn record(&mut self, loss: S) -> StopDecision {
        let prev = self.history.last().copied();
        self.history.push(loss);
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_iter = self.history.len();
        }
        if let Some(p) = prev {
            if loss > p {
                self.consecutive_increases += 1;
            } else {
                self.consecutive_increases = 0;
            }
            let rel = self.last_rel_change().expect("two losses recorded");
            if rel < self.threshold.as_f64() {
                return StopDecision::Stop(StopReason::RelChange);
            }
            if self.consecutive_increases >= self.window {
                return StopDecision::Stop(StopReason::Fluctuation);
            }
        }
        if self.history.len() >= self.max_iters {
            return StopDecision::Stop(StopReason::MaxIters);
        }
        StopDecision::Continue
    }
}

#[derive(Clone, Debug)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    /// Relative change against the previous iteration; NaN on the first.
    pub rel_change: f64,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome<S: Scalar> {
    pub prediction: RealVolume<S>,
    /// Fidelity loss of the pre-fine-tuning prediction.
    pub initial_loss: f64,
    /// Fidelity loss of the returned (best-snapshot) prediction.
    pub final_loss: f64,
    pub iterations: usize,
    pub reason: StopReason,
    pub trace: Vec<TraceRow>,
}

/// Fine-tune the last stage of `net` against the measured HPFP and
/// magnitude. Earlier stages are left untouched; batch-norm statistics stay
/// frozen (eval mode) while the affine parameters train. The returned
/// prediction comes from the best-loss parameters seen.
pub fn fine_tune<S: Scalar>(
    net: &mut Prognet<S>,
    f_hpfp: &RealVolume<S>,
    magnitude: &RealVolume<S>,
    scan: &ScanParams,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome<S>> {
    if !f_hpfp.grid().same_geometry(magnitude.grid()) {
        return Err(NetError::Shape("HPFP and magnitude grids differ".into()));
    }
    let grid = f_hpfp.grid().clone();
    let wrapped = f_hpfp.map(wrap_phase);
    let f_map = FeatureMap::from_volume(&wrapped);
    let (nx, ny, nz) = grid.counts();

    // frozen input of the last stage: QSM_{K-1} and the HPFP
    let k = net.num_stages();
    let mut prev = FeatureMap::zeros(1, nx, ny, nz);
    for s in 0..k - 1 {
        let input = FeatureMap::concat(&prev, &f_map)?;
        prev = net.stage_mut(s).forward(&input, Mode::Eval, false)?;
    }
    let stage_input = FeatureMap::concat(&prev, &f_map)?;

    let dipole = make_dipole_kernel::<S>(&grid);
    let hann = make_hann_transfer_scaled::<S>(&grid, cfg.loss_fc, cfg.hann_beta_scale)?;

    let stage = net.stage_mut(k - 1);
    let mut best_params = stage.snapshot_params();
    let mut state = FinetuneState::<S>::from_config(cfg);
    let mut adam = Adam::<S>::new(cfg.lr);
    let mut trace = Vec::new();
    let mut reason = StopReason::MaxIters;

    for iteration in 1..=cfg.max_iters {
        let out = stage.forward(&stage_input, Mode::Eval, true)?;
        let x = out.to_volume(&grid)?;
        let (loss, grad) = loss_and_grad(&x, magnitude, &wrapped, &dipole, &hann, scan)?;

        if !loss.is_finite() {
            reason = StopReason::NonFinite;
            break;
        }
        let improved = loss < state.best_loss();
        let decision = state.record(loss);
        if improved {
            best_params = stage.snapshot_params();
        }
        trace.push(TraceRow {
            iteration,
            loss: loss.as_f64(),
            rel_change: state.last_rel_change().unwrap_or(f64::NAN),
        });
        if let StopDecision::Stop(r) = decision {
            reason = r;
            break;
        }

        stage.zero_grad();
        stage.backward(&FeatureMap::from_volume(&grad))?;
        adam.begin_step();
        stage.visit_trainable("", &mut |name, w, g| adam.update(&name, w, g));
        if let Err(e) = adam.finish_step() {
            // non-finite gradients: keep the best snapshot and stop
            trace.push(TraceRow {
                iteration: iteration + 1,
                loss: f64::NAN,
                rel_change: f64::NAN,
            });
            let _ = e;
            reason = StopReason::NonFinite;
            break;
        }
    }

    let stage = net.stage_mut(k - 1);
    stage.restore_params(&best_params);
    let out = stage.forward(&stage_input, Mode::Eval, false)?;
    let prediction = out.to_volume(&grid)?;
    let (final_loss, _) = loss_and_grad(&prediction, magnitude, &wrapped, &dipole, &hann, scan)?;

    let initial_loss = state.history().first().map(|l| l.as_f64()).unwrap_or(f64::NAN);
    Ok(FinetuneOutcome {
        prediction,
        initial_loss,
        final_loss: final_loss.as_f64(),
        iterations: state.history().len(),
        reason,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converges_at_first_qualifying_relative_change() {
        // decreasing by exactly 0.4% per step with a 0.5% threshold stops
        // at the first step where a change can be measured
        let mut st = FinetuneState::<f64>::new(5e-3, 3, 100);
        assert_eq!(st.record(1.0), StopDecision::Continue);
        assert_eq!(st.record(0.996), StopDecision::Stop(StopReason::RelChange));
        assert_eq!(st.history().len(), 2);

        // decreasing by 1% per step never triggers the rule before max
        let mut st = FinetuneState::<f64>::new(5e-3, 3, 10);
        let mut l = 1.0;
        for i in 1..=10 {
            let d = st.record(l);
            if i < 10 {
                assert_eq!(d, StopDecision::Continue, "iteration {i}");
            } else {
                assert_eq!(d, StopDecision::Stop(StopReason::MaxIters));
            }
            l *= 0.99;
        }
    }

    #[test]
    fn fluctuation_stops_after_consecutive_increases() {
        let mut st = FinetuneState::<f64>::new(5e-3, 3, 100);
        assert_eq!(st.record(1.0), StopDecision::Continue);
        assert_eq!(st.record(0.9), StopDecision::Continue);
        assert_eq!(st.record(0.95), StopDecision::Continue);
        assert_eq!(st.record(0.97), StopDecision::Continue);
        assert_eq!(st.record(0.99), StopDecision::Stop(StopReason::Fluctuation));
        assert_eq!(st.best_loss(), 0.9);
        assert_eq!(st.best_iter(), 2);
    }

    #[test]
    fn decrease_resets_fluctuation_counter() {
        let mut st = FinetuneState::<f64>::new(1e-9, 3, 100);
        for &l in &[1.0, 1.1, 1.2, 1.15, 1.3, 1.4] {
            assert_eq!(st.record(l), StopDecision::Continue, "loss {l}");
        }
        assert_eq!(st.record(1.5), StopDecision::Stop(StopReason::Fluctuation));
    }

    #[test]
    fn zero_loss_sequence_converges_immediately() {
        let mut st = FinetuneState::<f64>::new(5e-3, 3, 100);
        assert_eq!(st.record(0.0), StopDecision::Continue);
        assert_eq!(st.record(0.0), StopDecision::Stop(StopReason::RelChange));
    }
}
