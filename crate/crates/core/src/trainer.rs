//! PINN construction and training for the ESD system.
//!
//! The network is trained full-batch on an equispaced collocation grid. Each
//! epoch evaluates the five loss terms and the exact gradient of their
//! weighted total (via [`crate::diff`]), applies one optimizer update, and
//! records the breakdown. Training stops when the total loss reaches
//! `epsilon_stop` or after `max_epochs`, whichever comes first. Because the
//! loss in the chaotic regime is not monotone, the lowest-loss parameters
//! seen so far are retained alongside the final ones.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diff::{self, GradientVector, LossSpec, LossTerms};
use crate::error::{Error, Result};
use crate::esd::{rhs_unchecked, EsdParameters, State};
use crate::mlp::{init_network, InputScaling, MlpNetwork, NetworkCheckpoint, ParameterVector};
use crate::rk45::SolutionTable;

/// Equispaced training times, inclusive of both span endpoints.
///
/// [`CollocationGrid::make_grid`] is the uniform constructor used for
/// training; [`CollocationGrid::from_times`] accepts arbitrary finite batches
/// (duplicates allowed) for loss evaluation and testing.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationGrid {
    times: Vec<f64>,
}

impl CollocationGrid {
    /// `t_i = a + i*(b-a)/(n-1)` with the endpoints pinned exactly.
    pub fn make_grid(t_span: (f64, f64), n: usize) -> Result<Self> {
        let (a, b) = t_span;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidArgument(format!("invalid t_span ({a}, {b})")));
        }
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "collocation grid needs at least 2 points, got {n}"
            )));
        }
        let spacing = (b - a) / (n - 1) as f64;
        let mut times: Vec<f64> = (0..n).map(|i| a + i as f64 * spacing).collect();
        times[0] = a;
        times[n - 1] = b;
        Ok(Self { times })
    }

    /// Arbitrary evaluation batch; must be non-empty and finite.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if let Some(t) = times.iter().find(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite batch time {t}")));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Weights of the total loss: `alpha` on the residual sum, `beta` on the
/// initial-condition term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be nonnegative, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::InvalidArgument("loss weights cannot both be zero".into()));
        }
        Ok(())
    }
}

/// The five loss components and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub eq1: f64,
    pub eq2: f64,
    pub eq3: f64,
    pub eq4: f64,
    pub initial: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_terms(terms: &LossTerms, w: &LossWeights) -> Self {
        Self {
            eq1: terms.eq[0],
            eq2: terms.eq[1],
            eq3: terms.eq[2],
            eq4: terms.eq[3],
            initial: terms.initial,
            total: total_loss(&terms.eq, terms.initial, w),
        }
    }

    /// Name of the first non-finite component, if any.
    pub fn non_finite_component(&self) -> Option<&'static str> {
        [
            (self.eq1, "eq1"),
            (self.eq2, "eq2"),
            (self.eq3, "eq3"),
            (self.eq4, "eq4"),
            (self.initial, "initial"),
            (self.total, "total"),
        ]
        .into_iter()
        .find(|(v, _)| !v.is_finite())
        .map(|(_, name)| name)
    }
}

/// `alpha * (eq1 + eq2 + eq3 + eq4) + beta * initial`.
pub fn total_loss(eq: &[f64; 4], initial: f64, w: &LossWeights) -> f64 {
    w.alpha * (((eq[0] + eq[1]) + eq[2]) + eq[3]) + w.beta * initial
}

/// Mean squared residual of each equation over the grid.
///
/// For every grid time the network value and exact time derivative are
/// computed by tangent propagation, then substituted into the ESD system.
pub fn residual_losses(
    net: &MlpNetwork,
    params: &EsdParameters,
    grid: &CollocationGrid,
) -> [f64; 4] {
    let mut sums = [0.0f64; 4];
    for &t in grid.times() {
        let out = diff::forward_with_tangent(net, t);
        let s = State::from_array(out.value);
        let f = rhs_unchecked(params, &s).to_array();
        for k in 0..4 {
            let r = out.tangent[k] - f[k];
            sums[k] += r * r;
        }
    }
    let inv_n = 1.0 / grid.len() as f64;
    [
        sums[0] * inv_n,
        sums[1] * inv_n,
        sums[2] * inv_n,
        sums[3] * inv_n,
    ]
}

/// Squared deviation of the network from the initial condition at
/// `cfg.t_initial`.
pub fn initial_loss(net: &MlpNetwork, cfg: &TrainingConfig) -> f64 {
    let y = net.forward(cfg.t_initial);
    let x0 = cfg.initial_state.to_array();
    let mut acc = 0.0;
    for k in 0..4 {
        let d = y[k] - x0[k];
        acc += d * d;
    }
    acc
}

/// Adam moment coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Update rule selection. `Sgd` is the plain `w -= lr * grad` rule; Adam is
/// the default used by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Everything the training loop needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub t_span: (f64, f64),
    pub n_points: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub lr_initial: f64,
    pub lr_floor: f64,
    pub max_epochs: usize,
    pub epsilon_stop: f64,
    pub adam: AdamConfig,
    /// Emit a resume checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub t_initial: f64,
    pub initial_state: State,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Remap the time input onto [-1, 1] before the first layer. `None`
    /// enables the remap automatically when the span is wider than 10.
    #[serde(default)]
    pub input_rescale: Option<bool>,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.t_span;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::Config(format!("t_span ({a}, {b}) is not an increasing interval")));
        }
        if self.n_points < 2 {
            return Err(Error::Config(format!("n_points must be >= 2, got {}", self.n_points)));
        }
        if self.hidden_layers < 1 || self.hidden_width < 1 {
            return Err(Error::Config(format!(
                "network must be at least 1x1, got {}x{}",
                self.hidden_layers, self.hidden_width
            )));
        }
        LossWeights { alpha: self.alpha, beta: self.beta }
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(self.lr_initial > 0.0 && self.lr_initial.is_finite()) {
            return Err(Error::Config(format!("lr_initial must be positive, got {}", self.lr_initial)));
        }
        if !(self.lr_floor > 0.0 && self.lr_floor <= self.lr_initial) {
            return Err(Error::Config(format!(
                "lr_floor must satisfy 0 < lr_floor <= lr_initial, got {}",
                self.lr_floor
            )));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if !(self.epsilon_stop > 0.0) {
            return Err(Error::Config(format!(
                "epsilon_stop must be positive, got {}",
                self.epsilon_stop
            )));
        }
        let adam = &self.adam;
        if !((0.0..1.0).contains(&adam.beta1) && (0.0..1.0).contains(&adam.beta2) && adam.eps > 0.0)
        {
            return Err(Error::Config(format!(
                "adam coefficients out of range: beta1={} beta2={} eps={}",
                adam.beta1, adam.beta2, adam.eps
            )));
        }
        if !self.t_initial.is_finite() || !self.initial_state.is_finite() {
            return Err(Error::Config("initial condition must be finite".into()));
        }
        Ok(())
    }

    /// Whether the time input is remapped onto [-1, 1].
    pub fn input_rescale_enabled(&self) -> bool {
        self.input_rescale
            .unwrap_or(self.t_span.1 - self.t_span.0 > 10.0)
    }

    fn loss_spec(&self, esd: &EsdParameters) -> LossSpec {
        LossSpec::total(*esd, self.alpha, self.beta, self.t_initial, self.initial_state)
    }

    fn weights(&self) -> LossWeights {
        LossWeights { alpha: self.alpha, beta: self.beta }
    }
}

/// Adam first/second moments plus the bias-correction step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    opt: &mut OptimizerState,
    params: &mut ParameterVector,
    grad: &GradientVector,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if opt.m.len() != params.len() || grad.len() != params.len() {
        return Err(Error::LengthMismatch { expected: params.len(), got: grad.len() });
    }
    opt.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(opt.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(opt.step as i32);
    let p = params.as_mut_slice();
    for i in 0..p.len() {
        let g = grad.as_slice()[i];
        opt.m[i] = cfg.beta1 * opt.m[i] + (1.0 - cfg.beta1) * g;
        opt.v[i] = cfg.beta2 * opt.v[i] + (1.0 - cfg.beta2) * (g * g);
        let m_hat = opt.m[i] / bc1;
        let v_hat = opt.v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Plain gradient descent, `w -= lr * grad`, in place.
pub fn sgd_step(params: &mut ParameterVector, grad: &GradientVector, lr: f64) -> Result<()> {
    if grad.len() != params.len() {
        return Err(Error::LengthMismatch { expected: params.len(), got: grad.len() });
    }
    for (p, g) in params.as_mut_slice().iter_mut().zip(grad.as_slice()) {
        *p -= lr * g;
    }
    Ok(())
}

/// Exponentially decaying learning rate reaching `lr_floor` exactly at
/// `max_epochs`: `lr(e) = max(lr_floor, lr_initial * r^(e/max_epochs))` with
/// `r = lr_floor / lr_initial`.
pub fn lr_schedule(epoch: usize, cfg: &TrainingConfig) -> f64 {
    let ratio = cfg.lr_floor / cfg.lr_initial;
    let eta = cfg.lr_initial * ratio.powf(epoch as f64 / cfg.max_epochs as f64);
    eta.max(cfg.lr_floor)
}

/// Losses and learning rate of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub lr: f64,
}

/// Per-epoch records, in epoch order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub const CSV_HEADER: &'static str =
        "epoch,loss_eq1,loss_eq2,loss_eq3,loss_eq4,loss_initial,loss_total,lr";

    pub fn csv_rows(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 144);
        for r in &self.records {
            out.push_str(&Self::csv_row(r));
        }
        out
    }

    pub fn csv_row(r: &EpochRecord) -> String {
        let mut line = String::with_capacity(160);
        writeln!(
            line,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.epoch,
            r.losses.eq1,
            r.losses.eq2,
            r.losses.eq3,
            r.losses.eq4,
            r.losses.initial,
            r.losses.total,
            r.lr
        )
        .expect("string write");
        line
    }

    pub fn to_csv_string(&self) -> String {
        format!("{}\n{}", Self::CSV_HEADER, self.csv_rows())
    }
}

/// Serializable optimizer state for resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerCheckpoint {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

/// Everything needed to continue a run: current and best network, optimizer
/// moments, and the last completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCheckpoint {
    pub epoch: usize,
    pub network: NetworkCheckpoint,
    pub optimizer: OptimizerCheckpoint,
    pub best_epoch: usize,
    pub best_losses: LossBreakdown,
    pub best_network: NetworkCheckpoint,
}

/// Final and best-loss networks of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    final_network: MlpNetwork,
    final_losses: LossBreakdown,
    best_network: MlpNetwork,
    best_epoch: usize,
    best_losses: LossBreakdown,
}

impl TrainedModel {
    /// The network used for prediction: the lowest-total-loss checkpoint.
    pub fn network(&self) -> &MlpNetwork {
        &self.best_network
    }

    pub fn final_network(&self) -> &MlpNetwork {
        &self.final_network
    }

    pub fn final_losses(&self) -> &LossBreakdown {
        &self.final_losses
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_losses(&self) -> &LossBreakdown {
        &self.best_losses
    }
}

/// Callbacks fired by the training loop. The final checkpoint is always
/// emitted through [`TrainObserver::on_checkpoint`] when the loop ends.
pub trait TrainObserver {
    fn on_epoch(&mut self, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _ck: &TrainingCheckpoint) -> Result<()> {
        Ok(())
    }
}

/// No-op observer.
pub struct NullObserver;

impl TrainObserver for NullObserver {}

/// Trains a fresh network under `cfg`.
pub fn train(esd: &EsdParameters, cfg: &TrainingConfig) -> Result<(TrainedModel, TrainingHistory)> {
    train_with_observer(esd, cfg, &mut NullObserver)
}

/// [`train`] with per-epoch and checkpoint callbacks.
pub fn train_with_observer(
    esd: &EsdParameters,
    cfg: &TrainingConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(TrainedModel, TrainingHistory)> {
    cfg.validate()?;
    let scaling = cfg
        .input_rescale_enabled()
        .then(|| InputScaling::from_span(cfg.t_span.0, cfg.t_span.1));
    let template = init_network(cfg.hidden_layers, cfg.hidden_width, cfg.seed)?
        .with_input_scaling(scaling);
    let params = template.flatten();
    let opt = OptimizerState::new(params.len());
    run_loop(esd, cfg, template, params, opt, 0, None, observer)
}

/// Continues a checkpointed run until `cfg.max_epochs`.
pub fn resume_training(
    esd: &EsdParameters,
    cfg: &TrainingConfig,
    ck: &TrainingCheckpoint,
    observer: &mut dyn TrainObserver,
) -> Result<(TrainedModel, TrainingHistory)> {
    cfg.validate()?;
    if ck.epoch >= cfg.max_epochs {
        return Err(Error::InvalidArgument(format!(
            "checkpoint is already at epoch {} of {}",
            ck.epoch, cfg.max_epochs
        )));
    }
    let network = MlpNetwork::from_checkpoint(&ck.network)?;
    let params = network.flatten();
    if ck.optimizer.m.len() != params.len() || ck.optimizer.v.len() != params.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            got: ck.optimizer.m.len(),
        });
    }
    let opt = OptimizerState {
        m: ck.optimizer.m.clone(),
        v: ck.optimizer.v.clone(),
        step: ck.optimizer.step,
    };
    let best_params = MlpNetwork::from_checkpoint(&ck.best_network)?.flatten();
    let best = Some((best_params, ck.best_epoch, ck.best_losses));
    run_loop(esd, cfg, network, params, opt, ck.epoch, best, observer)
}

#[allow(clippy::too_many_arguments)]
fn run_loop(
    esd: &EsdParameters,
    cfg: &TrainingConfig,
    template: MlpNetwork,
    mut params: ParameterVector,
    mut opt: OptimizerState,
    start_epoch: usize,
    best: Option<(ParameterVector, usize, LossBreakdown)>,
    observer: &mut dyn TrainObserver,
) -> Result<(TrainedModel, TrainingHistory)> {
    let grid = CollocationGrid::make_grid(cfg.t_span, cfg.n_points)?;
    let spec = cfg.loss_spec(esd);
    let weights = cfg.weights();
    let mut history = TrainingHistory::default();
    let mut best = best;
    let mut last_losses: Option<LossBreakdown> = None;

    let make_checkpoint = |epoch: usize,
                           params: &ParameterVector,
                           opt: &OptimizerState,
                           best: &(ParameterVector, usize, LossBreakdown),
                           template: &MlpNetwork|
     -> Result<TrainingCheckpoint> {
        Ok(TrainingCheckpoint {
            epoch,
            network: template.unflatten(params)?.to_checkpoint(),
            optimizer: OptimizerCheckpoint {
                m: opt.m.clone(),
                v: opt.v.clone(),
                step: opt.step,
            },
            best_epoch: best.1,
            best_losses: best.2,
            best_network: template.unflatten(&best.0)?.to_checkpoint(),
        })
    };

    let mut epoch = start_epoch;
    while epoch < cfg.max_epochs {
        epoch += 1;
        let lr = lr_schedule(epoch - 1, cfg);
        let net = template.unflatten(&params)?;
        let (terms, _, grad) = diff::loss_terms_and_gradient(&net, &grid, &spec)?;
        let losses = LossBreakdown::from_terms(&terms, &weights);
        if let Some(component) = losses.non_finite_component() {
            return Err(Error::NonFiniteLoss { epoch, component });
        }
        let record = EpochRecord { epoch, losses, lr };
        history.records.push(record);
        observer.on_epoch(&record)?;
        last_losses = Some(losses);

        if best.as_ref().is_none_or(|(_, _, b)| losses.total < b.total) {
            best = Some((params.clone(), epoch, losses));
        }
        if losses.total <= cfg.epsilon_stop {
            break;
        }
        match cfg.optimizer {
            OptimizerKind::Adam => adam_step(&mut opt, &mut params, &grad, lr, &cfg.adam)?,
            OptimizerKind::Sgd => sgd_step(&mut params, &grad, lr)?,
        }
        if cfg.checkpoint_every > 0
            && epoch.is_multiple_of(cfg.checkpoint_every)
            && epoch < cfg.max_epochs
        {
            let best_ref = best.as_ref().expect("set on first epoch");
            observer.on_checkpoint(&make_checkpoint(epoch, &params, &opt, best_ref, &template)?)?;
        }
    }

    let best = best.expect("at least one epoch ran");
    let final_losses = last_losses.expect("at least one epoch ran");
    observer.on_checkpoint(&make_checkpoint(epoch, &params, &opt, &best, &template)?)?;

    let model = TrainedModel {
        final_network: template.unflatten(&params)?,
        final_losses,
        best_network: template.unflatten(&best.0)?,
        best_epoch: best.1,
        best_losses: best.2,
    };
    Ok((model, history))
}

/// Evaluates the trained network at arbitrary times; the solution is a
/// continuous function of t, so the times need not belong to the training
/// grid.
pub fn predict(model: &TrainedModel, times: &[f64]) -> Result<SolutionTable> {
    if times.is_empty() {
        return Err(Error::InvalidArgument("empty prediction grid".into()));
    }
    for (i, t) in times.iter().enumerate() {
        if !t.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite time at index {i}")));
        }
        if i > 0 && times[i - 1] >= *t {
            return Err(Error::InvalidArgument(format!(
                "prediction times not strictly ascending at index {i}"
            )));
        }
    }
    let net = model.network();
    let states = times
        .iter()
        .map(|&t| State::from_array(net.forward(t)))
        .collect();
    SolutionTable::new(times.to_vec(), states)
}
