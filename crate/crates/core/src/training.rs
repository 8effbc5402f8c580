//! Full-batch optimizers, the initial-stage stopping rule and the
//! radial/angular split of a weight velocity.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, norm};
use crate::network::{loss_and_grad, Batch, Gradients, NetworkConfig, NetworkParams};

/// The initial stage ends once the loss has decayed to this fraction of its
/// starting value.
pub const INITIAL_STAGE_FRACTION: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Gd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerSpec {
    pub fn gd(lr: f64) -> Self {
        OptimizerSpec {
            kind: OptimizerKind::Gd,
            lr,
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_eps(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerSpec {
            kind: OptimizerKind::Adam,
            ..OptimizerSpec::gd(lr)
        }
    }

    /// `lr = 0` is allowed so that a frozen run can serve as a control.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config(format!("adam_eps must be positive, got {}", self.adam_eps)));
        }
        Ok(())
    }
}

/// `θ ← θ - lr ∇R`, one explicit Euler step of gradient flow.
pub fn gd_step(params: &NetworkParams, grads: &Gradients, lr: f64) -> Result<NetworkParams> {
    let mut out = params.clone();
    gd_step_in_place(&mut out, grads, lr)?;
    Ok(out)
}

pub fn gd_step_in_place(params: &mut NetworkParams, grads: &Gradients, lr: f64) -> Result<()> {
    check_shapes(params, grads)?;
    for (p, g) in params.blocks_mut().zip(grads.blocks()) {
        for (x, d) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *x -= lr * d;
        }
    }
    Ok(())
}

/// First and second moment estimates for bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        let n = params.len();
        AdamState {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

pub fn adam_step(
    state: &AdamState,
    params: &NetworkParams,
    grads: &Gradients,
    spec: &OptimizerSpec,
) -> Result<(AdamState, NetworkParams)> {
    let mut s = state.clone();
    let mut p = params.clone();
    adam_step_in_place(&mut s, &mut p, grads, spec)?;
    Ok((s, p))
}

pub fn adam_step_in_place(
    state: &mut AdamState,
    params: &mut NetworkParams,
    grads: &Gradients,
    spec: &OptimizerSpec,
) -> Result<()> {
    check_shapes(params, grads)?;
    if state.m.len() != params.len() {
        return Err(Error::Shape("Adam state does not match the parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (spec.adam_beta1, spec.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let mut k = 0;
    for (p, g) in params.blocks_mut().zip(grads.blocks()) {
        for (x, &gi) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
            let m = b1 * state.m[k] + (1.0 - b1) * gi;
            let v = b2 * state.v[k] + (1.0 - b2) * gi * gi;
            state.m[k] = m;
            state.v[k] = v;
            let m_hat = m / c1;
            let v_hat = v / c2;
            *x -= spec.lr * m_hat / (v_hat.sqrt() + spec.adam_eps);
            k += 1;
        }
    }
    Ok(())
}

fn check_shapes(params: &NetworkParams, grads: &Gradients) -> Result<()> {
    if !params.same_shape(grads) {
        return Err(Error::Shape("gradient blocks do not match the parameters".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub max_epochs: usize,
    /// Stop at the first epoch whose loss is at most 70% of the initial loss.
    #[serde(default)]
    pub initial_stage: bool,
    #[serde(default)]
    pub snapshot_epochs: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    InitialStageEnd,
}

/// Record of one training run. One epoch is one full-batch step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// `loss_history[e]` is the loss after `e` steps; index 0 is untrained.
    pub loss_history: Vec<f64>,
    pub snapshots: Vec<(usize, NetworkParams)>,
    /// First epoch with loss <= 0.7 x initial, if reached.
    pub initial_stage_end: Option<usize>,
    pub stop_reason: StopReason,
    /// Epoch whose parameters should be analyzed: the last epoch strictly
    /// inside the initial stage when the run stopped on the rule, otherwise
    /// the final epoch.
    pub analysis_epoch: usize,
    #[serde(skip)]
    pub analysis_params: Option<NetworkParams>,
}

impl TrainLog {
    pub fn epochs_run(&self) -> usize {
        self.loss_history.len() - 1
    }

    pub fn initial_loss(&self) -> f64 {
        self.loss_history[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("history is never empty")
    }

    pub fn snapshot(&self, epoch: usize) -> Option<&NetworkParams> {
        self.snapshots.iter().find(|(e, _)| *e == epoch).map(|(_, p)| p)
    }
}

/// First epoch `e >= 1` with `loss_history[e] <= 0.7 loss_history[0]`.
pub fn initial_stage_end(loss_history: &[f64]) -> Option<usize> {
    let threshold = INITIAL_STAGE_FRACTION * *loss_history.first()?;
    loss_history
        .iter()
        .skip(1)
        .position(|&l| l <= threshold)
        .map(|i| i + 1)
}

/// Runs full-batch training from `params`.
pub fn train(
    config: &NetworkConfig,
    params: &NetworkParams,
    batch: &Batch,
    opt: &OptimizerSpec,
    stop: &StopRule,
) -> Result<(NetworkParams, TrainLog)> {
    opt.validate()?;
    if stop.max_epochs == 0 {
        return Err(Error::Config("max_epochs must be at least 1".into()));
    }
    let wanted: BTreeSet<usize> = stop.snapshot_epochs.iter().copied().collect();
    let mut params = params.clone();
    let mut adam = AdamState::new(&params);

    let (l0, mut grads) = loss_and_grad(config, &params, batch)?;
    if !l0.is_finite() {
        return Err(Error::Divergence { epoch: 0, loss: l0 });
    }
    let threshold = INITIAL_STAGE_FRACTION * l0;
    let mut history = vec![l0];
    let mut snapshots = Vec::new();
    if wanted.contains(&0) {
        snapshots.push((0, params.clone()));
    }
    let mut stage_end = None;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut previous = params.clone();

    for epoch in 1..=stop.max_epochs {
        if stop.initial_stage {
            previous.clone_from(&params);
        }
        match opt.kind {
            OptimizerKind::Gd => gd_step_in_place(&mut params, &grads, opt.lr)?,
            OptimizerKind::Adam => adam_step_in_place(&mut adam, &mut params, &grads, opt)?,
        }
        let (loss, g) = loss_and_grad(config, &params, batch)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        grads = g;
        history.push(loss);
        if wanted.contains(&epoch) {
            snapshots.push((epoch, params.clone()));
        }
        if stage_end.is_none() && loss <= threshold {
            stage_end = Some(epoch);
            if stop.initial_stage {
                stop_reason = StopReason::InitialStageEnd;
                break;
            }
        }
    }

    let (analysis_epoch, analysis_params) = match stop_reason {
        StopReason::InitialStageEnd => (history.len() - 2, previous),
        StopReason::MaxEpochs => (history.len() - 1, params.clone()),
    };
    let log = TrainLog {
        loss_history: history,
        snapshots,
        initial_stage_end: stage_end,
        stop_reason,
        analysis_epoch,
        analysis_params: Some(analysis_params),
    };
    Ok((params, log))
}

/// Rates of change of the amplitude `r = ‖w‖` and orientation `u = w / r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialAngularRate {
    pub r_dot: f64,
    pub u_dot: Vec<f64>,
}

/// `ṙ = u·ẇ`, `u̇ = (ẇ - (ẇ·u) u) / r`.
pub fn radial_angular(w: &[f64], w_dot: &[f64]) -> Result<RadialAngularRate> {
    if w.len() != w_dot.len() {
        return Err(Error::Shape(format!(
            "weight has length {}, velocity {}",
            w.len(),
            w_dot.len()
        )));
    }
    let r = norm(w);
    if r == 0.0 || !r.is_finite() {
        return Err(Error::Singular("orientation of the zero weight is undefined".into()));
    }
    let u: Vec<f64> = w.iter().map(|x| x / r).collect();
    let r_dot = dot(&u, w_dot);
    let u_dot = w_dot
        .iter()
        .zip(&u)
        .map(|(wd, ui)| (wd - r_dot * ui) / r)
        .collect();
    Ok(RadialAngularRate { r_dot, u_dot })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::Activation;
    use crate::matrix::Matrix;
    use crate::network::{init_params, NetworkConfig};

    fn setup() -> (NetworkConfig, NetworkParams, Batch) {
        let cfg = NetworkConfig::two_layer(2, 6, Activation::TANH).unwrap();
        let p = init_params(&cfg, 1, 0.1).unwrap();
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0 - 0.5, (i as f64).sin()]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0] * 2.0 + x[1]]).collect();
        let b = Batch::new(Matrix::from_rows(&xs).unwrap(), Matrix::from_rows(&ys).unwrap()).unwrap();
        (cfg, p, b)
    }

    fn grads_filled(cfg: &NetworkConfig, v: f64) -> Gradients {
        let mut g = Gradients::zeros(cfg);
        g.blocks_mut().for_each(|m| m.as_mut_slice().iter_mut().for_each(|x| *x = v));
        g
    }

    #[test]
    fn gd_step_examples() {
        let (cfg, p, _) = setup();
        assert_eq!(gd_step(&p, &Gradients::zeros(&cfg), 0.1).unwrap(), p);
        let g = grads_filled(&cfg, 0.25);
        let stepped = gd_step(&p, &g, 1.0).unwrap();
        for (a, b) in stepped.values().zip(p.values()) {
            assert_eq!(a, b - 0.25);
        }
        let twice = gd_step(&gd_step(&p, &g, 0.5).unwrap(), &g, 0.5).unwrap();
        let once = gd_step(&p, &g, 1.0).unwrap();
        for (a, b) in twice.values().zip(once.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let (cfg, p, b) = setup();
        let g = crate::network::grad_closed_form(&cfg, &p, &b).unwrap();
        let spec = OptimizerSpec::adam(1e-3);
        let (s, q) = adam_step(&AdamState::new(&p), &p, &g, &spec).unwrap();
        assert_eq!(s.step, 1);
        for ((new, old), gi) in q.values().zip(p.values()).zip(g.values()) {
            if gi.abs() > 1e-4 {
                let moved = old - new;
                assert!((moved - 1e-3 * gi.signum()).abs() < 1e-6, "{moved} for grad {gi}");
            }
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let (cfg, p, _) = setup();
        let spec = OptimizerSpec::adam(1e-2);
        let mut state = AdamState::new(&p);
        let mut q = p.clone();
        for _ in 0..5 {
            adam_step_in_place(&mut state, &mut q, &Gradients::zeros(&cfg), &spec).unwrap();
        }
        assert_eq!(p, q);
    }

    #[test]
    fn adam_two_steps_by_hand() {
        // one parameter: the output bias of a 1-1-1 net with zero hidden weights
        let cfg = NetworkConfig::two_layer(1, 1, Activation::TANH).unwrap();
        let p = NetworkParams::zeros(&cfg);
        let mut g1 = Gradients::zeros(&cfg);
        g1.output[(0, 1)] = 0.5;
        let mut g2 = Gradients::zeros(&cfg);
        g2.output[(0, 1)] = -0.2;
        let spec = OptimizerSpec::adam(0.1);
        let (s1, p1) = adam_step(&AdamState::new(&p), &p, &g1, &spec).unwrap();
        let (_, p2) = adam_step(&s1, &p1, &g2, &spec).unwrap();

        // hand recurrence
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
        let m1 = (1.0 - b1) * 0.5;
        let v1 = (1.0 - b2) * 0.25;
        let x1 = -lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let m2 = b1 * m1 + (1.0 - b1) * -0.2;
        let v2 = b2 * v1 + (1.0 - b2) * 0.04;
        let x2 = x1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        assert!((p1.output[(0, 1)] - x1).abs() < 1e-15);
        assert!((p2.output[(0, 1)] - x2).abs() < 1e-15);
    }

    #[test]
    fn steps_are_deterministic() {
        let (cfg, p, b) = setup();
        let g = crate::network::grad_closed_form(&cfg, &p, &b).unwrap();
        let spec = OptimizerSpec::adam(1e-2);
        let a = adam_step(&AdamState::new(&p), &p, &g, &spec).unwrap();
        let c = adam_step(&AdamState::new(&p), &p, &g, &spec).unwrap();
        assert_eq!(a, c);
        assert!(a.1.same_shape(&g));
    }

    #[test]
    fn zero_lr_keeps_loss_constant() {
        let (cfg, p, b) = setup();
        for opt in [OptimizerSpec::gd(0.0), OptimizerSpec::adam(0.0)] {
            let stop = StopRule {
                max_epochs: 20,
                initial_stage: true,
                snapshot_epochs: vec![],
            };
            let (_, log) = train(&cfg, &p, &b, &opt, &stop).unwrap();
            assert_eq!(log.loss_history.len(), 21);
            assert!(log.loss_history.iter().all(|&l| l == log.loss_history[0]));
            assert_eq!(log.initial_stage_end, None);
            assert_eq!(log.stop_reason, StopReason::MaxEpochs);
        }
    }

    #[test]
    fn initial_stage_rule_stops_at_first_crossing() {
        let (cfg, p, b) = setup();
        let opt = OptimizerSpec::gd(0.5);
        let free = StopRule {
            max_epochs: 400,
            initial_stage: false,
            snapshot_epochs: vec![0, 3],
        };
        let (_, full) = train(&cfg, &p, &b, &opt, &free).unwrap();
        let crossing = initial_stage_end(&full.loss_history).expect("lr 0.5 crosses 70%");
        assert_eq!(full.initial_stage_end, Some(crossing));
        assert_eq!(full.snapshot(0), Some(&p));
        assert!(full.snapshot(3).is_some());

        let stopping = StopRule {
            initial_stage: true,
            ..free
        };
        let (last, log) = train(&cfg, &p, &b, &opt, &stopping).unwrap();
        assert_eq!(log.initial_stage_end, Some(crossing));
        assert_eq!(log.epochs_run(), crossing);
        assert_eq!(log.stop_reason, StopReason::InitialStageEnd);
        assert_eq!(log.analysis_epoch, crossing - 1);
        assert_eq!(&log.loss_history[..], &full.loss_history[..=crossing]);
        assert_ne!(log.analysis_params.as_ref(), Some(&last));
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let (cfg, p, b) = setup();
        let err = train(
            &cfg,
            &p,
            &b,
            &OptimizerSpec::gd(1e200),
            &StopRule {
                max_epochs: 10,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch, .. } if epoch >= 1));
    }

    #[test]
    fn radial_angular_examples() {
        let w = [3.0, 4.0];
        let par = radial_angular(&w, &[0.6, 0.8]).unwrap();
        assert!((par.r_dot - 1.0).abs() < 1e-15);
        assert!(par.u_dot.iter().all(|x| x.abs() < 1e-15));
        let anti = radial_angular(&w, &[-0.6, -0.8]).unwrap();
        assert!((anti.r_dot + 1.0).abs() < 1e-15);

        let perp = radial_angular(&w, &[-4.0, 3.0]).unwrap();
        assert!(perp.r_dot.abs() < 1e-15);
        assert!((norm(&perp.u_dot) - 1.0).abs() < 1e-15);

        assert!(matches!(radial_angular(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Singular(_))));
    }
}
