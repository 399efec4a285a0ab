//! Built-in experiment presets: one-command desk-scale analogs of the
//! three figure families (convergence vs iterations, convergence of the
//! compressed method vs the full-precision one, worker-count speedup).

use std::path::Path;

use crate::diagnostics::fmt_f64;
use crate::error::{Error, Result};

use super::sweep::{run_cells, CellPlan, SweepOutcome};

/// Step size for the d=50 quadratic used by the convergence presets.
/// Satisfies eta < (1-mu)^2 / (2L) for the generated instance (L ~ 1.5).
pub const QUAD_D50_ETA: f64 = 4e-4;
/// Per-worker sample count for the convergence presets. Large enough that
/// finite-sample heterogeneity drift does not dominate the noise floor.
pub const QUAD_D50_SAMPLES: usize = 512;
/// Iteration budget for the convergence presets.
pub const QUAD_D50_ITERS: usize = 5000;

/// Base step size for the speedup preset; workers K run at eta * sqrt(K).
pub const SPEEDUP_ETA_BASE: f64 = 5e-3;
/// Iteration budget for the speedup preset.
pub const SPEEDUP_ITERS: usize = 800;
/// Gradient-norm-squared threshold whose crossing time the speedup preset
/// reports.
pub const SPEEDUP_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub cells: Vec<(String, String)>,
}

fn quad_base(method: &str, period: usize, compression: Option<&str>) -> String {
    let mut text = format!(
        "seed = 0\nrepeats = 5\nrecord_stride = 10\n\n[topology]\nkind = \"ring\"\nworkers = 8\n\n[problem]\nkind = \"quadratic\"\ndim = 50\nsamples_per_worker = {}\nbatch_size = 4\n\n[optim]\nmethod = \"{method}\"\neta = {}\nmu = 0.9\nperiod = {period}\niterations = {}\n",
        QUAD_D50_SAMPLES,
        fmt_f64(QUAD_D50_ETA),
        QUAD_D50_ITERS,
    );
    if let Some(kind) = compression {
        text.push_str(&format!("\n[compression]\nkind = \"{kind}\"\n"));
    }
    text
}

fn speedup_cell(workers: usize) -> String {
    let eta = SPEEDUP_ETA_BASE * (workers as f64).sqrt();
    format!(
        "seed = 0\nrepeats = 5\n\n[threshold]\ngrad_norm_sq = {}\n\n[topology]\nkind = \"ring\"\nworkers = {workers}\n\n[problem]\nkind = \"logistic\"\ndim = 10\nsamples_per_worker = 64\nbatch_size = 4\nheterogeneity = 0.0\nseed = 7\n\n[optim]\nmethod = \"pd_sgdm\"\neta = {}\nmu = 0.9\nperiod = 4\niterations = {}\n",
        fmt_f64(SPEEDUP_THRESHOLD),
        fmt_f64(eta),
        SPEEDUP_ITERS,
    )
}

/// All built-in presets.
pub fn all() -> Vec<Preset> {
    let convergence = Preset {
        name: "convergence",
        description: "quadratic d=50, ring of 8: C-SGDM vs PD-SGDM at p in {4,8,16} (loss vs iterations)",
        cells: vec![
            ("c_sgdm".into(), quad_base("c_sgdm", 1, None)),
            ("pd_sgdm-p4".into(), quad_base("pd_sgdm", 4, None)),
            ("pd_sgdm-p8".into(), quad_base("pd_sgdm", 8, None)),
            ("pd_sgdm-p16".into(), quad_base("pd_sgdm", 16, None)),
        ],
    };
    let communication = Preset {
        name: "communication",
        description: "quadratic d=50, ring of 8: scaled-sign CPD-SGDM at p in {4,8,16} vs full-precision PD-SGDM p=16 (loss vs bits)",
        cells: vec![
            ("pd_sgdm-p16".into(), quad_base("pd_sgdm", 16, None)),
            ("cpd_sgdm-p4".into(), quad_base("cpd_sgdm", 4, Some("scaled_sign"))),
            ("cpd_sgdm-p8".into(), quad_base("cpd_sgdm", 8, Some("scaled_sign"))),
            ("cpd_sgdm-p16".into(), quad_base("cpd_sgdm", 16, Some("scaled_sign"))),
        ],
    };
    let speedup = Preset {
        name: "speedup",
        description: "iid logistic, eta scaled by sqrt(K): time-to-threshold vs worker count K in {1,2,4,8}",
        cells: [1usize, 2, 4, 8]
            .iter()
            .map(|&k| (format!("workers={k}"), speedup_cell(k)))
            .collect(),
    };
    vec![convergence, communication, speedup]
}

pub fn find(name: &str) -> Option<Preset> {
    all().into_iter().find(|p| p.name == name)
}

/// Execute a preset under `out_dir`.
pub fn run_preset(name: &str, out_dir: &Path) -> Result<SweepOutcome> {
    let preset = find(name).ok_or_else(|| {
        let names: Vec<&str> = all().iter().map(|p| p.name).collect();
        Error::Config(format!("unknown preset `{name}` (available: {})", names.join(", ")))
    })?;
    let mut cells = Vec::with_capacity(preset.cells.len());
    for (cell_name, text) in &preset.cells {
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("preset `{name}` cell `{cell_name}`: {e}")))?;
        cells.push(CellPlan { name: cell_name.clone(), table });
    }
    run_cells(&cells, out_dir, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_resolve() {
        for preset in all() {
            for (cell, text) in &preset.cells {
                let table: toml::Table = text.parse().unwrap_or_else(|e| {
                    panic!("preset {} cell {cell} does not parse: {e}", preset.name)
                });
                super::super::config::resolve(&table).unwrap_or_else(|e| {
                    panic!("preset {} cell {cell} does not validate: {e}", preset.name)
                });
            }
        }
    }

    #[test]
    fn preset_lookup() {
        assert!(find("convergence").is_some());
        assert!(find("communication").is_some());
        assert!(find("speedup").is_some());
        assert!(find("nope").is_none());
        assert_eq!(all().len(), 3);
    }
}
