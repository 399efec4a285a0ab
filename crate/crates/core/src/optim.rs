//! The optimizer engine: per-worker momentum SGD with periodic exact or
//! compressed gossip, plus baselines.
//!
//! Every iteration each worker updates its momentum buffer
//! `m <- mu m + g` and takes the local step `x_half = x - eta m`. Every
//! `p`-th iteration the workers communicate:
//!
//! * exact gossip (`pd_sgdm`, `d_sgd`, `pd_sgd`):
//!   `x_k <- sum_j w_kj x_half_j`;
//! * compressed gossip (`cpd_sgdm`): each worker keeps auxiliary copies
//!   `x_hat` of its own and its neighbors' models, corrects
//!   `x_k <- x_half_k + gamma sum_j w_kj (x_hat_j - x_hat_k)`, then sends
//!   the compressed delta `q_k = Q(x_k - x_hat_k)` so every holder applies
//!   `x_hat_j <- x_hat_j + q_j`. The copies stay bitwise identical across
//!   holders, which the engine monitors every round.
//!
//! `c_sgdm` is the centralized baseline: one model, gradients averaged
//! across workers each iteration, a single momentum buffer.
//!
//! Iterations are synchronous: local steps commute with a barrier, gossip
//! reads an immutable snapshot of the intermediate states. Workers run
//! sequentially in index order with per-worker RNG streams, so results are
//! independent of any scheduling.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;

use crate::compression::CompressorSpec;
use crate::diagnostics::{self, MetricsRecord};
use crate::error::{Error, Result};
use crate::problems::{Problem, ProblemKind};
use crate::streams;
use crate::topology::MixingMatrix;

/// Optimization method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Periodic decentralized momentum SGD (exact gossip every p steps).
    PdSgdm,
    /// Compressed periodic decentralized momentum SGD.
    CpdSgdm,
    /// Centralized momentum SGD (gradient averaging, single model).
    CSgdm,
    /// Decentralized SGD: momentum off, gossip every iteration.
    DSgd,
    /// Periodic decentralized SGD: momentum off.
    PdSgd,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pd_sgdm" => Ok(Self::PdSgdm),
            "cpd_sgdm" => Ok(Self::CpdSgdm),
            "c_sgdm" => Ok(Self::CSgdm),
            "d_sgd" => Ok(Self::DSgd),
            "pd_sgd" => Ok(Self::PdSgd),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (expected pd_sgdm, cpd_sgdm, c_sgdm, d_sgd, pd_sgd)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::PdSgdm => "pd_sgdm",
            Self::CpdSgdm => "cpd_sgdm",
            Self::CSgdm => "c_sgdm",
            Self::DSgd => "d_sgd",
            Self::PdSgd => "pd_sgd",
        }
    }

    pub fn centralized(self) -> bool {
        matches!(self, Self::CSgdm)
    }

    pub fn compressed(self) -> bool {
        matches!(self, Self::CpdSgdm)
    }

    /// Methods defined as momentum-free reductions.
    pub fn momentum_free(self) -> bool {
        matches!(self, Self::DSgd | Self::PdSgd)
    }

    /// Methods required to communicate every iteration.
    pub fn per_iteration_comm(self) -> bool {
        matches!(self, Self::CSgdm | Self::DSgd)
    }
}

/// Step-size decay: multiply `eta` by `factor` at each milestone iteration.
#[derive(Debug, Clone)]
pub struct LrDecay {
    pub factor: f64,
    pub milestones: Vec<usize>,
}

/// Resolved optimizer parameters.
#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub method: Method,
    pub eta: f64,
    /// Momentum coefficient in [0, 1). Zero recovers the SGD baselines.
    pub mu: f64,
    /// Communication period; 1 communicates every iteration.
    pub period: usize,
    /// Consensus step size (cpd_sgdm only).
    pub gamma: Option<f64>,
    pub iterations: usize,
    /// When set, invariant violations flip the run exit status.
    pub strict: bool,
    pub lr_decay: Option<LrDecay>,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::Config("optim.eta must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return Err(Error::Config("optim.mu must lie in [0, 1)".into()));
        }
        if self.period == 0 {
            return Err(Error::Config("optim.period must be >= 1".into()));
        }
        if self.method.per_iteration_comm() && self.period != 1 {
            return Err(Error::Config(format!(
                "method `{}` communicates every iteration; optim.period must be 1",
                self.method.name()
            )));
        }
        if self.method.momentum_free() && self.mu != 0.0 {
            return Err(Error::Config(format!(
                "method `{}` is momentum-free; optim.mu must be 0",
                self.method.name()
            )));
        }
        match (self.method.compressed(), self.gamma) {
            (true, None) => {
                return Err(Error::Config("cpd_sgdm requires optim.gamma (or a computed default)".into()))
            }
            (false, Some(_)) => {
                return Err(Error::Config(format!(
                    "optim.gamma only applies to cpd_sgdm, not `{}`",
                    self.method.name()
                )))
            }
            (true, Some(g)) if !(g > 0.0) => {
                return Err(Error::Config("optim.gamma must be > 0".into()))
            }
            _ => {}
        }
        if let Some(decay) = &self.lr_decay {
            if !(decay.factor > 0.0 && decay.factor <= 1.0) {
                return Err(Error::Config("optim.lr_decay.factor must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Per-worker optimizer state.
///
/// The auxiliary buffers exist only under cpd_sgdm: `x_hat_self` is this
/// worker's shared copy of its own model, `x_hat_neighbors[j]` its stored
/// copy of neighbor `j`'s. The protocol keeps each stored copy bitwise
/// identical to the owner's `x_hat_self` at every communication boundary.
#[derive(Debug, Clone)]
pub struct WorkerState {
    pub x: DVector<f64>,
    pub m: DVector<f64>,
    pub x_hat_self: Option<DVector<f64>>,
    pub x_hat_neighbors: BTreeMap<usize, DVector<f64>>,
}

impl WorkerState {
    /// Fresh state at `x0` with zero momentum.
    pub fn new(x0: DVector<f64>) -> Self {
        let m = DVector::zeros(x0.len());
        Self { x: x0, m, x_hat_self: None, x_hat_neighbors: BTreeMap::new() }
    }

    /// Fresh state with auxiliary copies `x_hat = x0` for self and each
    /// neighbor (cpd_sgdm). Starting all copies at the common x0 keeps the
    /// shared-knowledge invariant from t = 0 and zeroes the first round's
    /// correction term.
    pub fn with_aux(x0: DVector<f64>, neighbors: &[usize]) -> Self {
        let mut s = Self::new(x0.clone());
        s.x_hat_self = Some(x0.clone());
        s.x_hat_neighbors = neighbors.iter().map(|&j| (j, x0.clone())).collect();
        s
    }

    /// Momentum step: `m <- mu m + g`; returns the intermediate iterate
    /// `x - eta m` without touching `x`.
    pub fn local_step(&mut self, grad: &DVector<f64>, eta: f64, mu: f64) -> DVector<f64> {
        self.m *= mu;
        self.m += grad;
        &self.x - &self.m * eta
    }
}

/// Result of one exact gossip round.
pub struct GossipOutcome {
    pub new_x: Vec<DVector<f64>>,
    /// `max_i |sum_k x_k (before) - sum_k x_k (after)|_i`.
    pub conservation_residual: f64,
}

/// Exact neighbor averaging `x_k = sum_j w_kj half_j` from an immutable
/// snapshot (no read-after-write within the round).
pub fn gossip_exact(half: &[DVector<f64>], w: &MixingMatrix) -> GossipOutcome {
    let k = half.len();
    assert_eq!(k, w.workers(), "state count must match topology");
    let mut new_x = Vec::with_capacity(k);
    for i in 0..k {
        let mut xi = half[i].clone() * w.weight(i, i);
        for j in 0..k {
            let wij = w.weight(i, j);
            if j != i && wij != 0.0 {
                xi += &half[j] * wij;
            }
        }
        new_x.push(xi);
    }
    GossipOutcome { conservation_residual: column_sum_drift(half, &new_x), new_x }
}

/// Result of one compressed gossip round.
pub struct CompressedGossip {
    pub new_x: Vec<DVector<f64>>,
    /// Bits sent: one message per directed edge, self-updates free.
    pub bits: u64,
    /// Drift of `sum_k x_k` introduced by the consensus step (the gamma
    /// term is mean-zero under symmetric W).
    pub conservation_residual: f64,
}

/// Compressed gossip round (cpd_sgdm):
///
/// 1. `x_k = half_k + gamma sum_j w_kj (x_hat_j - x_hat_k)` from worker
///    k's stored copies;
/// 2. `q_k = Q(x_k - x_hat_k)`, one message per directed edge;
/// 3. every holder of a copy of j applies `x_hat_j <- x_hat_j + q_j`
///    (including j itself).
pub fn gossip_compressed(
    half: &[DVector<f64>],
    states: &mut [WorkerState],
    w: &MixingMatrix,
    gamma: f64,
    compressor: &CompressorSpec,
    rngs: &mut [ChaCha8Rng],
) -> Result<CompressedGossip> {
    let k = half.len();
    assert_eq!(k, w.workers(), "state count must match topology");
    let missing = |i: usize| {
        Error::Config(format!(
            "worker {i} is missing x_hat buffers (compressed gossip needs states built with_aux)"
        ))
    };
    let mut new_x = Vec::with_capacity(k);
    for i in 0..k {
        let self_hat = states[i].x_hat_self.as_ref().ok_or_else(|| missing(i))?;
        let mut xi = half[i].clone();
        for &j in w.neighbors(i) {
            let neighbor_hat = states[i].x_hat_neighbors.get(&j).ok_or_else(|| missing(i))?;
            xi += (neighbor_hat - self_hat) * (gamma * w.weight(i, j));
        }
        new_x.push(xi);
    }
    let conservation_residual = column_sum_drift(half, &new_x);

    let mut bits = 0u64;
    let mut q = Vec::with_capacity(k);
    for i in 0..k {
        let delta = &new_x[i] - states[i].x_hat_self.as_ref().expect("checked above");
        let (qi, msg_bits) = compressor.compress(&delta, Some(&mut rngs[i]))?;
        bits += msg_bits * w.neighbors(i).len() as u64;
        q.push(qi);
    }
    for i in 0..k {
        if let Some(hat) = states[i].x_hat_self.as_mut() {
            *hat += &q[i];
        }
        let neighbors: Vec<usize> = states[i].x_hat_neighbors.keys().copied().collect();
        for j in neighbors {
            let copy = states[i].x_hat_neighbors.get_mut(&j).expect("key exists");
            *copy += &q[j];
        }
    }
    Ok(CompressedGossip { new_x, bits, conservation_residual })
}

fn column_sum_drift(before: &[DVector<f64>], after: &[DVector<f64>]) -> f64 {
    let mut sum_before = DVector::zeros(before[0].len());
    let mut sum_after = DVector::zeros(before[0].len());
    for x in before {
        sum_before += x;
    }
    for x in after {
        sum_after += x;
    }
    (sum_before - sum_after).amax()
}

/// Consensus step size and effective contraction rate from the worst-case
/// analysis of compressed periodic gossip:
/// `gamma = rho delta / (16 rho + rho^2 + 4 beta^2 + 2 rho beta^2 - 8 rho delta)`
/// and `alpha = rho^2 delta / 82`.
pub fn default_gamma(rho: f64, delta: f64, beta: f64) -> Result<(f64, f64)> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Config(format!("rho must lie in (0, 1], got {rho}")));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1], got {delta}")));
    }
    if !(0.0..=2.0).contains(&beta) {
        return Err(Error::Config(format!("beta must lie in [0, 2], got {beta}")));
    }
    let denom = 16.0 * rho + rho * rho + 4.0 * beta * beta + 2.0 * rho * beta * beta - 8.0 * rho * delta;
    if denom <= 0.0 {
        return Err(Error::Config(format!(
            "default_gamma denominator non-positive ({denom}) for rho={rho}, delta={delta}, beta={beta}"
        )));
    }
    Ok((rho * delta / denom, rho * rho * delta / 82.0))
}

#[derive(Debug, Default, Clone)]
struct MonitorState {
    /// Worst residual per monitor over the whole run.
    worst: BTreeMap<&'static str, f64>,
    /// Violation counts per monitor (residual beyond its tolerance).
    violations: BTreeMap<&'static str, u64>,
    /// Worst residual per monitor since the last recorded row.
    window: BTreeMap<&'static str, f64>,
}

impl MonitorState {
    fn observe(&mut self, name: &'static str, residual: f64, tol: f64) {
        let w = self.worst.entry(name).or_insert(0.0);
        *w = w.max(residual);
        let win = self.window.entry(name).or_insert(0.0);
        *win = win.max(residual);
        if residual > tol {
            *self.violations.entry(name).or_insert(0) += 1;
        }
    }
}

struct CentralState {
    x: DVector<f64>,
    m: DVector<f64>,
}

/// A fully initialized run of one method on one problem/topology.
pub struct Engine {
    problem: Arc<Problem>,
    topology: MixingMatrix,
    config: OptimizerConfig,
    compressor: Option<CompressorSpec>,
    batch_size: usize,
    workers: Vec<WorkerState>,
    central: Option<CentralState>,
    grad_rngs: Vec<ChaCha8Rng>,
    comp_rngs: Vec<ChaCha8Rng>,
    t: usize,
    comm_bits: u64,
    comm_rounds: u64,
    /// Running max of observed stochastic-gradient norms.
    g_hat: f64,
    /// Guaranteed contraction parameter of the compressor at the model
    /// dimension (cpd_sgdm only).
    bound_delta: Option<f64>,
    /// Consensus-vs-bound violations are only meaningful when gradients are
    /// bounded, i.e. logistic problems.
    check_consensus_bound: bool,
    monitors: MonitorState,
    xbar_prev: Option<DVector<f64>>,
    xbar_prev2: Option<DVector<f64>>,
    xbar_history: Vec<DVector<f64>>,
    gbar_history: Vec<DVector<f64>>,
    aborted_at: Option<usize>,
}

impl Engine {
    pub fn new(
        problem: Arc<Problem>,
        topology: MixingMatrix,
        config: OptimizerConfig,
        compressor: Option<CompressorSpec>,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if batch_size == 0 {
            return Err(Error::Config("problem.batch_size must be >= 1".into()));
        }
        if problem.workers() != topology.workers() {
            return Err(Error::Config(format!(
                "problem has {} workers but topology has {}",
                problem.workers(),
                topology.workers()
            )));
        }
        match (config.method.compressed(), &compressor) {
            (true, None) => return Err(Error::Config("cpd_sgdm requires a compression section".into())),
            (false, Some(_)) => {
                return Err(Error::Config(format!(
                    "compression section only applies to cpd_sgdm, not `{}`",
                    config.method.name()
                )))
            }
            _ => {}
        }
        let d = problem.dim();
        let bound_delta = match &compressor {
            Some(c) => Some(c.delta_bound(d)?),
            None => None,
        };
        let x0 = problem.initial_point();
        let k = topology.workers();
        let workers = if config.method.centralized() {
            Vec::new()
        } else if config.method.compressed() {
            (0..k).map(|i| WorkerState::with_aux(x0.clone(), topology.neighbors(i))).collect()
        } else {
            (0..k).map(|_| WorkerState::new(x0.clone())).collect()
        };
        let central = config.method.centralized().then(|| CentralState {
            x: x0.clone(),
            m: DVector::zeros(d),
        });
        let grad_rngs = (0..k).map(|i| streams::stream(seed, "gradients", i as u64)).collect();
        let comp_rngs = (0..k).map(|i| streams::stream(seed, "compression", i as u64)).collect();
        let check_consensus_bound = problem.kind() == ProblemKind::Logistic;
        Ok(Self {
            problem,
            topology,
            config,
            compressor,
            batch_size,
            workers,
            central,
            grad_rngs,
            comp_rngs,
            t: 0,
            comm_bits: 0,
            comm_rounds: 0,
            g_hat: 0.0,
            bound_delta,
            check_consensus_bound,
            monitors: MonitorState::default(),
            xbar_prev: None,
            xbar_prev2: None,
            xbar_history: vec![x0],
            gbar_history: Vec::new(),
            aborted_at: None,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn topology(&self) -> &MixingMatrix {
        &self.topology
    }

    pub fn comm_bits(&self) -> u64 {
        self.comm_bits
    }

    pub fn comm_rounds(&self) -> u64 {
        self.comm_rounds
    }

    pub fn g_hat(&self) -> f64 {
        self.g_hat
    }

    pub fn aborted_at(&self) -> Option<usize> {
        self.aborted_at
    }

    pub fn states(&self) -> &[WorkerState] {
        &self.workers
    }

    /// Mean iterate `x_bar` (the model itself under c_sgdm).
    pub fn xbar(&self) -> DVector<f64> {
        if let Some(c) = &self.central {
            return c.x.clone();
        }
        let mut xbar = DVector::zeros(self.problem.dim());
        for w in &self.workers {
            xbar += &w.x;
        }
        xbar / self.workers.len() as f64
    }

    /// `x_bar_t` for t = 0..=current.
    pub fn xbar_history(&self) -> &[DVector<f64>] {
        &self.xbar_history
    }

    /// Average stochastic gradient per iteration, aligned so entry t drove
    /// the update from t to t+1.
    pub fn gbar_history(&self) -> &[DVector<f64>] {
        &self.gbar_history
    }

    pub fn worst_residuals(&self) -> &BTreeMap<&'static str, f64> {
        &self.monitors.worst
    }

    pub fn violations(&self) -> &BTreeMap<&'static str, u64> {
        &self.monitors.violations
    }

    pub fn total_violations(&self) -> u64 {
        self.monitors.violations.values().sum()
    }

    /// Step size in effect at iteration `t`.
    pub fn effective_eta(&self, t: usize) -> f64 {
        match &self.config.lr_decay {
            None => self.config.eta,
            Some(decay) => {
                let hits = decay.milestones.iter().filter(|&&m| m <= t).count() as i32;
                self.config.eta * decay.factor.powi(hits)
            }
        }
    }

    /// Run one iteration (gradient + local step on every worker, then
    /// gossip when due). Errors abort the run and leave `aborted_at` set.
    pub fn step(&mut self) -> Result<()> {
        if let Some(t) = self.aborted_at {
            return Err(Error::Numeric { iteration: t, message: "run already aborted".into() });
        }
        let t = self.t;
        let eta = self.effective_eta(t);
        let mu = self.config.mu;
        let k = self.topology.workers();
        let d = self.problem.dim();
        let comm_round = (t + 1) % self.config.period == 0;

        let mut gbar = DVector::zeros(d);
        if self.central.is_some() {
            let x = self.central.as_ref().expect("centralized").x.clone();
            for i in 0..k {
                let gs = self.problem.stochastic_gradient(i, &x, self.batch_size, &mut self.grad_rngs[i]);
                if !all_finite(&gs.grad) {
                    return self.abort(t, "non-finite stochastic gradient");
                }
                self.g_hat = self.g_hat.max(gs.grad.norm());
                gbar += &gs.grad;
            }
            gbar /= k as f64;
            let central = self.central.as_mut().expect("centralized");
            central.m *= mu;
            central.m += &gbar;
            let step = &central.m * eta;
            central.x -= step;
            // Every worker ships its gradient to the server model.
            self.comm_bits += (k as u64) * (d as u64) * 64;
            self.comm_rounds += 1;
            if !all_finite(&self.central.as_ref().expect("centralized").x) {
                return self.abort(t, "non-finite iterate");
            }
        } else {
            let mut half = Vec::with_capacity(k);
            for i in 0..k {
                let xi = self.workers[i].x.clone();
                let gs = self.problem.stochastic_gradient(i, &xi, self.batch_size, &mut self.grad_rngs[i]);
                if !all_finite(&gs.grad) {
                    return self.abort(t, "non-finite stochastic gradient");
                }
                self.g_hat = self.g_hat.max(gs.grad.norm());
                gbar += &gs.grad;
                half.push(self.workers[i].local_step(&gs.grad, eta, mu));
            }
            gbar /= k as f64;

            if comm_round {
                if self.config.method.compressed() {
                    let gamma = self.config.gamma.expect("validated");
                    let compressor = self.compressor.as_ref().expect("validated").clone();
                    let out = gossip_compressed(
                        &half,
                        &mut self.workers,
                        &self.topology,
                        gamma,
                        &compressor,
                        &mut self.comp_rngs,
                    )?;
                    for (w, x) in self.workers.iter_mut().zip(out.new_x) {
                        w.x = x;
                    }
                    self.comm_bits += out.bits;
                    self.monitors.observe(
                        "gossip_conservation",
                        out.conservation_residual,
                        diagnostics::TOL_GOSSIP_CONSERVATION,
                    );
                    let shared = self.shared_knowledge_residual();
                    self.monitors.observe("shared_knowledge", shared, 0.0);
                } else {
                    let out = gossip_exact(&half, &self.topology);
                    for (w, x) in self.workers.iter_mut().zip(out.new_x) {
                        w.x = x;
                    }
                    self.comm_bits += self.topology.directed_edges() * (d as u64) * 64;
                    self.monitors.observe(
                        "gossip_conservation",
                        out.conservation_residual,
                        diagnostics::TOL_GOSSIP_CONSERVATION,
                    );
                }
                self.comm_rounds += 1;
            } else {
                for (w, x) in self.workers.iter_mut().zip(half) {
                    w.x = x;
                }
            }
            for w in &self.workers {
                if !all_finite(&w.x) || !all_finite(&w.m) {
                    return self.abort(t, "non-finite iterate or momentum buffer");
                }
            }
        }

        // Invariant monitors on the freshly advanced state.
        let xbar_new = self.xbar();
        let xbar_old = self.xbar_history.last().expect("x0 recorded").clone();

        // Mean preservation: x_bar_{t+1} = x_bar_t - (eta/K) sum_k m_k.
        let msum = self.momentum_mean();
        let predicted = &xbar_old - &msum * eta;
        self.monitors.observe(
            "mean_preserve",
            (&xbar_new - predicted).amax(),
            diagnostics::TOL_MEAN_PRESERVE,
        );

        // Auxiliary z increment: z_{t+1} - z_t = -eta/(1-mu) gbar_t.
        // Exact under constant eta; with lr decay milestones introduce a
        // transient blip, recorded like any other residual.
        let res_z = if t == 0 {
            ((&xbar_new - &xbar_old) + &gbar * eta).amax() / (1.0 - mu)
        } else {
            let xbar_pp = self.xbar_prev2.as_ref().unwrap_or(&xbar_old);
            let dz = (&xbar_new - &xbar_old * (1.0 + mu) + xbar_pp * mu) / (1.0 - mu);
            (dz + &gbar * (eta / (1.0 - mu))).amax()
        };
        self.monitors.observe("aux_z", res_z, diagnostics::TOL_AUX_Z);

        // Momentum norm bound: ||m|| <= G_hat / (1 - mu), with G_hat the
        // running max of observed gradient norms.
        let m_cap = self.g_hat / (1.0 - mu);
        let m_worst = if let Some(c) = &self.central {
            c.m.norm()
        } else {
            self.workers.iter().map(|w| w.m.norm()).fold(0.0, f64::max)
        };
        self.monitors.observe(
            "momentum_bound",
            (m_worst - m_cap).max(0.0),
            1e-9 * (1.0 + m_cap),
        );

        // Consensus distance against the analytic bound (bounded-gradient
        // problems only).
        if !self.config.method.centralized() {
            let consensus = diagnostics::consensus_distance_of(self.workers.iter().map(|w| &w.x));
            if self.check_consensus_bound {
                if let Some(rhs) = self.consensus_bound_rhs() {
                    self.monitors.observe("consensus_vs_bound", (consensus - rhs).max(0.0), 0.0);
                }
            }
        }

        self.xbar_prev2 = Some(xbar_old);
        self.xbar_prev = Some(xbar_new.clone());
        self.xbar_history.push(xbar_new);
        self.gbar_history.push(gbar);
        self.t += 1;
        Ok(())
    }

    fn abort(&mut self, t: usize, message: &str) -> Result<()> {
        self.aborted_at = Some(t);
        Err(Error::Numeric { iteration: t, message: message.into() })
    }

    /// Mean momentum `(1/K) sum_k m_k` (the single buffer under c_sgdm).
    pub fn momentum_mean(&self) -> DVector<f64> {
        if let Some(c) = &self.central {
            return c.m.clone();
        }
        let mut m = DVector::zeros(self.problem.dim());
        for w in &self.workers {
            m += &w.m;
        }
        m / self.workers.len() as f64
    }

    /// Max absolute difference between any stored `x_hat` copy and its
    /// owner's buffer; bitwise-equal copies give exactly 0.
    pub fn shared_knowledge_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for w in &self.workers {
            for (&j, copy) in &w.x_hat_neighbors {
                if let Some(owner) = self.workers[j].x_hat_self.as_ref() {
                    worst = worst.max((copy - owner).amax());
                }
            }
        }
        worst
    }

    /// Right-hand side of the method's consensus bound at the current
    /// `G_hat` (with 5% slack), or None for centralized runs.
    pub fn consensus_bound_rhs(&self) -> Option<f64> {
        if self.config.method.centralized() {
            return None;
        }
        let g = 1.05 * self.g_hat;
        Some(diagnostics::consensus_bound(
            self.config.method,
            self.effective_eta(self.t),
            self.config.period,
            g,
            self.topology.workers(),
            self.config.mu,
            self.topology.rho(),
            self.bound_delta,
        ))
    }

    /// Build the metrics row for the current iterate and reset the
    /// since-last-record residual window.
    pub fn metrics_row(&mut self) -> MetricsRecord {
        let xbar = self.xbar();
        let f_bar = self.problem.loss_all(&xbar);
        let grad_norm_sq = self.problem.full_gradient_all(&xbar).norm_squared();
        let consensus = if self.central.is_some() {
            0.0
        } else {
            diagnostics::consensus_distance_of(self.workers.iter().map(|w| &w.x))
        };
        let suboptimality = self.problem.f_star().map(|fs| f_bar - fs);
        if let Some(s) = suboptimality {
            // f_star is a true minimum; meaningfully negative suboptimality
            // means the reference solve is wrong.
            self.monitors.observe("suboptimality_negative", (-s).max(0.0), 1e-8);
        }
        let window = std::mem::take(&mut self.monitors.window);
        let first_row = self.t == 0;
        MetricsRecord {
            t: self.t,
            f_bar,
            grad_norm_sq,
            consensus,
            comm_bits_cum: self.comm_bits,
            suboptimality,
            res_mean_preserve: if first_row { None } else { window.get("mean_preserve").copied().or(Some(0.0)) },
            res_aux_z: if first_row { None } else { window.get("aux_z").copied().or(Some(0.0)) },
            consensus_bound_rhs: self.consensus_bound_rhs(),
            holdout_loss: self.problem.holdout_loss(&xbar),
            invariant_residuals: window.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}
