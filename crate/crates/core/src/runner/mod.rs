//! Experiment orchestration: single runs, parameter sweeps, presets.
//!
//! A run takes a validated [`RunConfig`], builds the topology/problem/
//! engine, executes `optim.iterations` iterations while recording metrics
//! every `record_stride` iterations (invariant monitors always run at full
//! cadence), and emits:
//!
//! * `metrics.csv` -- the diagnostics schema, one row per recorded iterate;
//! * `resolved.toml` -- the config with every default filled and per-key
//!   provenance;
//! * `summary.csv` -- final metrics, worst residuals, violation counts;
//! * `timing.csv` -- wall-clock time, segregated so that everything else is
//!   byte-reproducible from `(config, seed)`.
//!
//! A NaN/Inf abort keeps the partial CSV and flags `aborted_at`; strict
//! mode turns invariant violations into a nonzero exit status.

mod config;
pub mod preset;
mod sweep;

pub use config::{
    apply_overrides, is_known_key, load_config, load_config_file, resolve, suggest_key,
    CompressionSection, OptimSection, ProblemSection, Provenance, RunConfig, Thresholds,
    TopologySection,
};
pub use sweep::{load_grid, run_cells, sweep, AggregateRow, CellPlan, SweepGrid, SweepOutcome};

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;

use crate::diagnostics::{self, MetricsRecord};
use crate::error::{Error, Result};
use crate::optim::{default_gamma, Engine, OptimizerConfig};
use crate::problems::{Problem, ProblemSpec};
use crate::topology::MixingMatrix;

/// Deterministic end-of-run digest (wall time lives in `timing.csv`).
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub final_t: usize,
    pub final_f_bar: f64,
    pub final_grad_norm_sq: f64,
    pub final_consensus: f64,
    pub final_suboptimality: Option<f64>,
    pub total_comm_bits: u64,
    pub worst_residuals: BTreeMap<String, f64>,
    pub violations: BTreeMap<String, u64>,
    pub total_violations: u64,
    pub aborted_at: Option<usize>,
    pub time_to_threshold_grad: Option<usize>,
    pub time_to_threshold_subopt: Option<usize>,
    pub wall_ms: u128,
}

const SUMMARY_HEADER: &str = "final_t,final_f_bar,final_grad_norm_sq,final_consensus,final_suboptimality,total_comm_bits,worst_res_mean_preserve,worst_res_aux_z,worst_res_momentum_bound,worst_res_gossip_conservation,worst_res_shared_knowledge,worst_res_consensus_vs_bound,violations,aborted_at,ttt_grad_norm_sq,ttt_suboptimality";

impl RunSummary {
    fn worst(&self, key: &str) -> f64 {
        self.worst_residuals.get(key).copied().unwrap_or(0.0)
    }

    pub fn csv(&self) -> String {
        let opt_usize = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{SUMMARY_HEADER}\n{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            self.final_t,
            diagnostics::fmt_f64(self.final_f_bar),
            diagnostics::fmt_f64(self.final_grad_norm_sq),
            diagnostics::fmt_f64(self.final_consensus),
            self.final_suboptimality.map(diagnostics::fmt_f64).unwrap_or_default(),
            self.total_comm_bits,
            diagnostics::fmt_f64(self.worst("mean_preserve")),
            diagnostics::fmt_f64(self.worst("aux_z")),
            diagnostics::fmt_f64(self.worst("momentum_bound")),
            diagnostics::fmt_f64(self.worst("gossip_conservation")),
            diagnostics::fmt_f64(self.worst("shared_knowledge")),
            diagnostics::fmt_f64(self.worst("consensus_vs_bound")),
            self.total_violations,
            opt_usize(self.aborted_at),
            opt_usize(self.time_to_threshold_grad),
            opt_usize(self.time_to_threshold_subopt),
        )
    }
}

/// Everything a completed (or aborted) run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub records: Vec<MetricsRecord>,
    pub summary: RunSummary,
    pub xbar_history: Vec<DVector<f64>>,
    pub gbar_history: Vec<DVector<f64>>,
    pub resolved_toml: String,
    pub strict: bool,
}

impl RunOutcome {
    pub fn metrics_csv(&self) -> String {
        diagnostics::metrics_csv(&self.records)
    }

    /// 0 success; 1 numeric abort or strict-mode invariant violation.
    pub fn exit_code(&self) -> i32 {
        if self.summary.aborted_at.is_some() || (self.strict && self.summary.total_violations > 0) {
            1
        } else {
            0
        }
    }
}

/// Build the mixing matrix a config describes.
pub fn build_topology(cfg: &RunConfig) -> Result<MixingMatrix> {
    match (&cfg.topology.custom_path, cfg.topology.kind) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read topology.custom_path `{}`: {e}", path.display()))
            })?;
            let w = MixingMatrix::from_text(&text)?;
            let workers_pinned = cfg.provenance("topology.workers") == Provenance::User;
            if workers_pinned && w.workers() != cfg.topology.workers {
                return Err(Error::Config(format!(
                    "topology.workers = {} but `{}` is {}x{}",
                    cfg.topology.workers,
                    path.display(),
                    w.workers(),
                    w.workers()
                )));
            }
            Ok(w)
        }
        (None, Some(kind)) => MixingMatrix::build(kind, cfg.topology.workers),
        (None, None) => unreachable!("validated at resolve time"),
    }
}

fn problem_spec(cfg: &RunConfig, workers: usize) -> ProblemSpec {
    ProblemSpec {
        kind: cfg.problem.kind,
        dim: cfg.problem.dim,
        n_per_worker: cfg.problem.samples_per_worker,
        workers,
        heterogeneity: cfg.problem.heterogeneity,
        seed: cfg.problem.seed,
        shared_data: cfg.problem.shared_data,
        holdout_fraction: cfg.problem.holdout_fraction,
    }
}

/// Execute one run. Writes output files when `out_dir` is given; the
/// returned outcome carries everything in memory either way.
pub fn run(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<RunOutcome> {
    let start = Instant::now();
    let topology = build_topology(cfg)?;
    let workers = topology.workers();
    let problem = Arc::new(Problem::generate(&problem_spec(cfg, workers))?);

    let compressor = cfg.compression.as_ref().map(|c| c.spec()).transpose()?;
    let mut gamma_note = None;
    let gamma = match (cfg.optim.method.compressed(), cfg.optim.gamma) {
        (true, Some(g)) => Some(g),
        (true, None) => {
            let delta = compressor
                .as_ref()
                .expect("validated: cpd_sgdm has a compressor")
                .delta_bound(problem.dim())?;
            let (g, alpha) = default_gamma(topology.rho(), delta, topology.beta())?;
            gamma_note = Some((
                g,
                format!(
                    "default_gamma(rho={}, delta={}, beta={}) with alpha={}",
                    diagnostics::fmt_f64(topology.rho()),
                    diagnostics::fmt_f64(delta),
                    diagnostics::fmt_f64(topology.beta()),
                    diagnostics::fmt_f64(alpha)
                ),
            ));
            Some(g)
        }
        (false, g) => g,
    };
    let opt = OptimizerConfig {
        method: cfg.optim.method,
        eta: cfg.optim.eta,
        mu: cfg.optim.mu,
        period: cfg.optim.period,
        gamma,
        iterations: cfg.optim.iterations,
        strict: cfg.optim.strict,
        lr_decay: cfg.optim.lr_decay.clone(),
    };
    let resolved_toml = cfg.render_resolved(gamma_note);

    let mut engine = Engine::new(
        problem,
        topology,
        opt,
        compressor,
        cfg.problem.batch_size,
        cfg.seed,
    )?;

    let total = cfg.optim.iterations;
    let stride = cfg.record_stride;
    let mut records = vec![engine.metrics_row()];
    let mut aborted_at = None;
    for t in 0..total {
        match engine.step() {
            Ok(()) => {
                if (t + 1) % stride == 0 || t + 1 == total {
                    records.push(engine.metrics_row());
                }
            }
            Err(Error::Numeric { iteration, .. }) => {
                // Keep the partial CSV; the summary flags the abort point.
                aborted_at = Some(iteration);
                break;
            }
            Err(other) => return Err(other),
        }
    }

    let grad_series: Vec<(usize, f64)> = records.iter().map(|r| (r.t, r.grad_norm_sq)).collect();
    let subopt_series: Vec<(usize, f64)> = records
        .iter()
        .filter_map(|r| r.suboptimality.map(|s| (r.t, s)))
        .collect();
    let time_to_threshold_grad = cfg
        .thresholds
        .grad_norm_sq
        .and_then(|th| diagnostics::time_to_threshold(&grad_series, th));
    let time_to_threshold_subopt = cfg
        .thresholds
        .suboptimality
        .and_then(|th| diagnostics::time_to_threshold(&subopt_series, th));

    let last = records.last().expect("at least the t=0 row");
    let summary = RunSummary {
        final_t: last.t,
        final_f_bar: last.f_bar,
        final_grad_norm_sq: last.grad_norm_sq,
        final_consensus: last.consensus,
        final_suboptimality: last.suboptimality,
        total_comm_bits: engine.comm_bits(),
        worst_residuals: engine
            .worst_residuals()
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
        violations: engine
            .violations()
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
        total_violations: engine.total_violations(),
        aborted_at,
        time_to_threshold_grad,
        time_to_threshold_subopt,
        wall_ms: start.elapsed().as_millis(),
    };

    let outcome = RunOutcome {
        records,
        summary,
        xbar_history: engine.xbar_history().to_vec(),
        gbar_history: engine.gbar_history().to_vec(),
        resolved_toml,
        strict: cfg.optim.strict,
    };

    if let Some(dir) = out_dir {
        write_outputs(&outcome, dir)?;
    }
    Ok(outcome)
}

fn write_outputs(outcome: &RunOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), outcome.metrics_csv())?;
    std::fs::write(dir.join("resolved.toml"), &outcome.resolved_toml)?;
    std::fs::write(dir.join("summary.csv"), outcome.summary.csv())?;
    std::fs::write(dir.join("timing.csv"), format!("wall_ms\n{}\n", outcome.summary.wall_ms))?;
    Ok(())
}
