//! Runtime monitors, proof-identity checkers, and the metrics schema.
//!
//! The engine's update rules imply exact algebraic identities (the mean
//! iterate follows the averaged momentum; the auxiliary sequence
//! `z_t = x_bar_t/(1-mu) - mu x_bar_{t-1}/(1-mu)` moves by scaled averaged
//! gradients) and inequalities (consensus distance bounded by a closed
//! form in `eta, p, G, K, mu` and the topology/compression contraction
//! rate). This module computes those residuals and bounds, and owns the
//! metrics CSV schema.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::optim::Method;

/// Mean-preservation residual tolerance (exact identity, float noise only).
pub const TOL_MEAN_PRESERVE: f64 = 1e-10;
/// Auxiliary-z residual tolerance (exact identity amplified by 1/(1-mu)).
pub const TOL_AUX_Z: f64 = 1e-8;
/// Gossip column-sum conservation tolerance.
pub const TOL_GOSSIP_CONSERVATION: f64 = 1e-10;

/// One row of per-iteration telemetry. `t` indexes the iterate, so row `t`
/// describes the state after `t` completed iterations; residual fields
/// cover the steps since the previously recorded row and are absent at
/// `t = 0`.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub t: usize,
    /// Global objective at the mean iterate, `f(x_bar_t)`.
    pub f_bar: f64,
    /// `||grad f(x_bar_t)||^2`.
    pub grad_norm_sq: f64,
    /// `sum_k ||x_k - x_bar||^2`.
    pub consensus: f64,
    /// Cumulative bits sent up to (not including) iteration t.
    pub comm_bits_cum: u64,
    /// `f(x_bar_t) - f_star` when the optimum is known.
    pub suboptimality: Option<f64>,
    pub res_mean_preserve: Option<f64>,
    pub res_aux_z: Option<f64>,
    /// Method-appropriate consensus bound at the running G_hat (absent for
    /// centralized runs).
    pub consensus_bound_rhs: Option<f64>,
    /// Held-out loss column, present only when a holdout fraction is
    /// configured.
    pub holdout_loss: Option<f64>,
    /// Worst residual per monitor since the last recorded row.
    pub invariant_residuals: BTreeMap<String, f64>,
}

/// Mandatory CSV header.
pub const CSV_HEADER: &str =
    "t,f_bar,grad_norm_sq,consensus,comm_bits_cum,suboptimality,res_mean_preserve,res_aux_z,consensus_bound_rhs";

/// Compact, deterministic float formatting that round-trips through
/// `str::parse::<f64>()`.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (1e-4..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl MetricsRecord {
    /// Render one CSV row (holdout column appended only when requested).
    pub fn csv_row(&self, with_holdout: bool) -> String {
        let mut row = format!(
            "{},{},{},{},{},{},{},{},{}",
            self.t,
            fmt_f64(self.f_bar),
            fmt_f64(self.grad_norm_sq),
            fmt_f64(self.consensus),
            self.comm_bits_cum,
            fmt_opt(self.suboptimality),
            fmt_opt(self.res_mean_preserve),
            fmt_opt(self.res_aux_z),
            fmt_opt(self.consensus_bound_rhs),
        );
        if with_holdout {
            row.push(',');
            row.push_str(&fmt_opt(self.holdout_loss));
        }
        row
    }
}

/// Render the full metrics CSV (header row mandatory; missing values are
/// empty fields).
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let with_holdout = records.iter().any(|r| r.holdout_loss.is_some());
    let mut out = String::from(CSV_HEADER);
    if with_holdout {
        out.push_str(",holdout_loss");
    }
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row(with_holdout));
        out.push('\n');
    }
    out
}

/// Total squared disagreement `sum_k ||x_k - x_bar||^2`.
pub fn consensus_distance(states: &[DVector<f64>]) -> f64 {
    consensus_distance_of(states.iter())
}

pub(crate) fn consensus_distance_of<'a, I>(states: I) -> f64
where
    I: Iterator<Item = &'a DVector<f64>> + Clone,
{
    let mut count = 0usize;
    let mut xbar: Option<DVector<f64>> = None;
    for x in states.clone() {
        match &mut xbar {
            None => xbar = Some(x.clone()),
            Some(acc) => *acc += x,
        }
        count += 1;
    }
    let Some(mut xbar) = xbar else { return 0.0 };
    xbar /= count as f64;
    states.map(|x| (x - &xbar).norm_squared()).sum()
}

/// Right-hand side of the consensus-distance bound.
///
/// Exact-gossip methods: `2 eta^2 p^2 G^2 K / (1-mu)^2 * (1 + 4/rho^2)`.
/// Compressed gossip replaces the topology rate by the combined rate
/// `alpha = rho^2 delta / 82` and doubles the constant:
/// `4 eta^2 p^2 G^2 K / (1-mu)^2 * (1 + 4/alpha^2)`.
/// Centralized runs have no consensus term (returns 0).
#[allow(clippy::too_many_arguments)]
pub fn consensus_bound(
    method: Method,
    eta: f64,
    p: usize,
    g_hat: f64,
    k: usize,
    mu: f64,
    rho: f64,
    delta: Option<f64>,
) -> f64 {
    let base = eta * eta * (p * p) as f64 * g_hat * g_hat * k as f64 / ((1.0 - mu) * (1.0 - mu));
    match method {
        Method::CSgdm => 0.0,
        Method::CpdSgdm => {
            let delta = delta.expect("cpd_sgdm consensus bound needs the compressor delta");
            let alpha = rho * rho * delta / 82.0;
            4.0 * base * (1.0 + 4.0 / (alpha * alpha))
        }
        _ => 2.0 * base * (1.0 + 4.0 / (rho * rho)),
    }
}

/// Residuals of the auxiliary-sequence identities over a recorded
/// trajectory.
#[derive(Debug, Clone, Copy)]
pub struct AuxZReport {
    /// `max_t || z_{t+1} - z_t + eta/(1-mu) gbar_t ||_inf`.
    pub max_increment_residual: f64,
    /// `max_t || z_{t+1} - x_bar_{t+1} + eta mu/(1-mu) mbar_t ||_inf`,
    /// with `mbar` reconstructed from the gradient history.
    pub max_momentum_residual: f64,
}

/// Check both auxiliary-z identities on the recorded `x_bar` trajectory
/// and per-iteration averaged stochastic gradients (constant step size).
///
/// `z_0 = x_bar_0`, `z_t = x_bar_t/(1-mu) - mu x_bar_{t-1}/(1-mu)`.
pub fn check_aux_z(
    xbar: &[DVector<f64>],
    gbar: &[DVector<f64>],
    eta: f64,
    mu: f64,
) -> AuxZReport {
    assert!(xbar.len() >= 2, "need at least two iterates");
    assert!(gbar.len() >= xbar.len() - 1, "need a gradient per transition");
    assert!((0.0..1.0).contains(&mu), "mu must lie in [0, 1)");
    let z = |t: usize| -> DVector<f64> {
        if t == 0 {
            xbar[0].clone()
        } else {
            (&xbar[t] - &xbar[t - 1] * mu) / (1.0 - mu)
        }
    };
    let mut max_inc = 0.0f64;
    let mut max_mom = 0.0f64;
    let mut mbar = DVector::zeros(xbar[0].len());
    for t in 0..xbar.len() - 1 {
        let dz = z(t + 1) - z(t);
        max_inc = max_inc.max((dz + &gbar[t] * (eta / (1.0 - mu))).amax());
        // mbar_t reconstructed independently of the engine's buffers.
        mbar *= mu;
        mbar += &gbar[t];
        let res = z(t + 1) - &xbar[t + 1] + &mbar * (eta * mu / (1.0 - mu));
        max_mom = max_mom.max(res.amax());
    }
    AuxZReport { max_increment_residual: max_inc, max_momentum_residual: max_mom }
}

/// First iteration whose trailing window-20 mean of the series drops to or
/// below `threshold` (`<=` comparison, so a constant series at the
/// threshold crosses at its first point). `points` are `(t, value)` pairs
/// in recording order.
pub fn time_to_threshold(points: &[(usize, f64)], threshold: f64) -> Option<usize> {
    let mut window = std::collections::VecDeque::with_capacity(20);
    let mut sum = 0.0f64;
    for &(t, v) in points {
        if window.len() == 20 {
            sum -= window.pop_front().expect("nonempty");
        }
        window.push_back(v);
        sum += v;
        if sum / window.len() as f64 <= threshold {
            return Some(t);
        }
    }
    None
}
