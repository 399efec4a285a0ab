//! Parameter sweeps: cartesian grids over config keys, fail-fast
//! validation, concurrent cell execution, and the aggregate table.

use std::path::Path;

use rayon::prelude::*;
use toml::Value;

use crate::diagnostics::fmt_f64;
use crate::error::{Error, Result};

use super::config::{self, is_known_key, suggest_key, RunConfig};
use super::{run, RunSummary};

/// A parsed sweep grid: config keys mapped to candidate values. Axes are
/// held in sorted key order so cell enumeration is deterministic.
#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub axes: Vec<(String, Vec<Value>)>,
}

/// Parse a grid file: a TOML table whose leaves are arrays of values for
/// existing config keys.
pub fn load_grid(text: &str) -> Result<SweepGrid> {
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("grid parse error: {e}")))?;
    let mut flat = Vec::new();
    flatten_grid("", &table, &mut flat)?;
    flat.sort_by(|a, b| a.0.cmp(&b.0));
    for (key, values) in &flat {
        if !is_known_key(key) {
            let hint = suggest_key(key)
                .map(|s| format!("; did you mean `{s}`?"))
                .unwrap_or_default();
            return Err(Error::Config(format!("unknown grid key `{key}`{hint}")));
        }
        if values.is_empty() {
            return Err(Error::Config(format!("grid key `{key}` has no values")));
        }
    }
    if flat.is_empty() {
        return Err(Error::Config("grid has no axes".into()));
    }
    Ok(SweepGrid { axes: flat })
}

fn flatten_grid(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Vec<Value>)>) -> Result<()> {
    for (key, value) in table {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match value {
            Value::Table(inner) => flatten_grid(&path, inner, out)?,
            Value::Array(items) => out.push((path, items.clone())),
            other => {
                return Err(Error::Config(format!(
                    "grid key `{path}` must map to an array of values, got `{other}`"
                )))
            }
        }
    }
    Ok(())
}

fn value_label(v: &Value) -> String {
    let raw = match v {
        Value::String(s) => s.clone(),
        Value::Integer(i) => i.to_string(),
        Value::Float(f) => fmt_f64(*f),
        Value::Boolean(b) => b.to_string(),
        other => other.to_string(),
    };
    raw.replace(['/', ' '], "-")
}

fn set_path(table: &mut toml::Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("grid key `{key}` traverses non-table `{part}`")))?;
    }
    cursor.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// One grid point: directory-safe name plus the raw config it resolves to.
#[derive(Debug, Clone)]
pub struct CellPlan {
    pub name: String,
    pub table: toml::Table,
}

/// Expand the cartesian product of the grid over a base config.
pub fn expand(base: &toml::Table, grid: &SweepGrid) -> Result<Vec<CellPlan>> {
    let mut cells = vec![CellPlan { name: String::new(), table: base.clone() }];
    for (key, values) in &grid.axes {
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for cell in &cells {
            for v in values {
                let mut table = cell.table.clone();
                set_path(&mut table, key, v.clone())?;
                let label = format!("{key}={}", value_label(v));
                let name = if cell.name.is_empty() {
                    label
                } else {
                    format!("{}__{label}", cell.name)
                };
                next.push(CellPlan { name, table });
            }
        }
        cells = next;
    }
    Ok(cells)
}

/// One aggregate row: a `(cell, repeat)` run digest.
#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub cell: String,
    pub repeat: usize,
    pub seed: u64,
    pub summary: RunSummary,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<AggregateRow>,
    /// Number of distinct grid cells (rows = cells x repeats).
    pub cells: usize,
}

impl SweepOutcome {
    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from(
            "cell,repeat,seed,final_t,final_f_bar,final_grad_norm_sq,final_consensus,final_suboptimality,total_comm_bits,worst_res_mean_preserve,worst_res_aux_z,violations,aborted_at,ttt_grad_norm_sq,ttt_suboptimality\n",
        );
        let opt_usize = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in &self.rows {
            let s = &row.summary;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                row.cell,
                row.repeat,
                row.seed,
                s.final_t,
                fmt_f64(s.final_f_bar),
                fmt_f64(s.final_grad_norm_sq),
                fmt_f64(s.final_consensus),
                s.final_suboptimality.map(fmt_f64).unwrap_or_default(),
                s.total_comm_bits,
                fmt_f64(s.worst_residuals.get("mean_preserve").copied().unwrap_or(0.0)),
                fmt_f64(s.worst_residuals.get("aux_z").copied().unwrap_or(0.0)),
                s.total_violations,
                opt_usize(s.aborted_at),
                opt_usize(s.time_to_threshold_grad),
                opt_usize(s.time_to_threshold_subopt),
            ));
        }
        out
    }

    /// Worst exit code across the sweep.
    pub fn exit_code(&self, strict_any: bool) -> i32 {
        let aborted = self.rows.iter().any(|r| r.summary.aborted_at.is_some());
        let violated = self.rows.iter().any(|r| r.summary.total_violations > 0);
        if aborted || (strict_any && violated) {
            1
        } else {
            0
        }
    }
}

/// Validate then execute a list of named cells, each `repeats` times with
/// seeds `seed_base + repeat`. Validation failures abort before any run
/// starts or any directory is created. Cells execute concurrently; output
/// layout is `<out>/<cell>/metrics.csv` (with a `rep<i>` level when a cell
/// repeats).
pub fn run_cells(
    cells: &[CellPlan],
    out_dir: &Path,
    repeats_override: Option<usize>,
) -> Result<SweepOutcome> {
    // Fail-fast: resolve every cell before running anything.
    let mut resolved: Vec<(String, RunConfig)> = Vec::with_capacity(cells.len());
    for cell in cells {
        let cfg = config::resolve(&cell.table)
            .map_err(|e| Error::Config(format!("cell `{}`: {e}", cell.name)))?;
        resolved.push((cell.name.clone(), cfg));
    }

    let mut jobs = Vec::new();
    for (name, cfg) in &resolved {
        let repeats = repeats_override.unwrap_or(cfg.repeats);
        for r in 0..repeats {
            let mut job_cfg = cfg.clone();
            let seed = cfg.seed + r as u64;
            job_cfg.set_seed(seed, format!("seed_base {} + repeat {r}", cfg.seed));
            let dir = if repeats == 1 {
                out_dir.join(name)
            } else {
                out_dir.join(name).join(format!("rep{r}"))
            };
            jobs.push((name.clone(), r, seed, job_cfg, dir));
        }
    }

    let rows: Vec<AggregateRow> = jobs
        .into_par_iter()
        .map(|(cell, repeat, seed, cfg, dir)| {
            let outcome = run(&cfg, Some(&dir))?;
            Ok(AggregateRow { cell, repeat, seed, summary: outcome.summary })
        })
        .collect::<Result<Vec<_>>>()?;

    let outcome = SweepOutcome { rows, cells: cells.len() };
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("aggregate.csv"), outcome.aggregate_csv())?;
    Ok(outcome)
}

/// Cartesian sweep of `grid` over `base`, written under `out_dir`.
pub fn sweep(
    base: &toml::Table,
    grid: &SweepGrid,
    out_dir: &Path,
    repeats_override: Option<usize>,
) -> Result<SweepOutcome> {
    let cells = expand(base, grid)?;
    run_cells(&cells, out_dir, repeats_override)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "\
optim.method = \"pd_sgdm\"
optim.eta = 0.001
optim.iterations = 20
topology.kind = \"ring\"
topology.workers = 4
problem.kind = \"quadratic\"
problem.dim = 4
";

    #[test]
    fn grid_expansion_counts_and_names() {
        let base: toml::Table = BASE.parse().unwrap();
        let grid = load_grid("\"optim.period\" = [1, 4, 8, 16]\n").unwrap();
        let cells = expand(&base, &grid).unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[0].name, "optim.period=1");
        assert_eq!(cells[3].name, "optim.period=16");

        let grid2 = load_grid("\"optim.period\" = [1, 4]\n\"optim.mu\" = [0.0, 0.9]\n").unwrap();
        let cells2 = expand(&base, &grid2).unwrap();
        assert_eq!(cells2.len(), 4);
        // Axes sorted by key: mu varies before period.
        assert_eq!(cells2[0].name, "optim.mu=0__optim.period=1");
    }

    #[test]
    fn grid_rejects_unknown_keys_and_non_arrays() {
        let err = load_grid("\"optim.learning_rate\" = [0.1]\n").unwrap_err();
        assert!(err.to_string().contains("did you mean `optim.eta`"), "{err}");
        let err = load_grid("\"optim.period\" = 4\n").unwrap_err();
        assert!(err.to_string().contains("array"), "{err}");
    }

    #[test]
    fn sweep_layout_and_aggregate_row_count() {
        let dir = tempfile::tempdir().unwrap();
        let base: toml::Table = format!("{BASE}repeats = 2\n").parse().unwrap();
        let grid = load_grid("\"optim.period\" = [1, 4]\n").unwrap();
        let outcome = sweep(&base, &grid, dir.path(), None).unwrap();
        assert_eq!(outcome.cells, 2);
        assert_eq!(outcome.rows.len(), 4); // cells x repeats
        assert!(dir.path().join("aggregate.csv").exists());
        assert!(dir.path().join("optim.period=1/rep0/metrics.csv").exists());
        assert!(dir.path().join("optim.period=4/rep1/summary.csv").exists());
        // Seeds derive as base + repeat.
        assert_eq!(outcome.rows[0].seed, 0);
        assert_eq!(outcome.rows[1].seed, 1);
        let csv = outcome.aggregate_csv();
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn sweep_fails_fast_without_writing() {
        let dir = tempfile::tempdir().unwrap();
        let base: toml::Table = BASE.parse().unwrap();
        // One cell invalid (mu = 1.2) must abort the whole sweep upfront.
        let grid = load_grid("\"optim.mu\" = [0.0, 1.2]\n").unwrap();
        let err = sweep(&base, &grid, &dir.path().join("s"), None).unwrap_err();
        assert!(err.to_string().contains("optim.mu=1.2"), "{err}");
        assert!(!dir.path().join("s").exists(), "no outputs on fail-fast");
    }
}
