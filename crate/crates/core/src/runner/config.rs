//! Config parsing, validation, defaults, and resolved-config rendering.
//!
//! Configs are TOML; both sectioned (`[optim] eta = 0.01`) and dotted
//! (`optim.eta = 0.01`) spellings work. The schema is strict: unknown keys
//! are errors (with a suggestion where one is close), wrong types are
//! errors, and cross-field constraints are checked before any computation.
//! Every resolved key records whether it came from the user, a default, or
//! a computation, and the resolved config is serialized next to the run
//! outputs with that provenance as trailing comments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use toml::Value;

use crate::compression::{CompressorKind, CompressorSpec};
use crate::diagnostics::fmt_f64;
use crate::error::{Error, Result};
use crate::optim::{LrDecay, Method};
use crate::problems::{ProblemKind, MLP_HIDDEN};
use crate::topology::TopologyKind;

/// Where a resolved value came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    User,
    Default,
    Computed(String),
}

impl Provenance {
    fn label(&self) -> String {
        match self {
            Provenance::User => "user".to_string(),
            Provenance::Default => "default".to_string(),
            Provenance::Computed(note) => format!("computed: {note}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TopologySection {
    pub kind: Option<TopologyKind>,
    pub workers: usize,
    pub custom_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    pub dim: usize,
    pub samples_per_worker: usize,
    pub heterogeneity: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub shared_data: bool,
    pub holdout_fraction: f64,
}

impl ProblemSection {
    /// Model dimension implied by the section (the mlp parameter vector is
    /// larger than its input dimension).
    pub fn model_dim(&self) -> usize {
        match self.kind {
            ProblemKind::Mlp => MLP_HIDDEN * self.dim + 2 * MLP_HIDDEN + 1,
            _ => self.dim,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimSection {
    pub method: Method,
    pub eta: f64,
    pub mu: f64,
    pub period: usize,
    pub gamma: Option<f64>,
    pub iterations: usize,
    pub strict: bool,
    pub lr_decay: Option<LrDecay>,
}

#[derive(Debug, Clone)]
pub struct CompressionSection {
    pub kind: CompressorKind,
    pub k: Option<usize>,
}

impl CompressionSection {
    pub fn spec(&self) -> Result<CompressorSpec> {
        CompressorSpec::new(self.kind, self.k)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Thresholds {
    pub grad_norm_sq: Option<f64>,
    pub suboptimality: Option<f64>,
}

/// A fully validated run configuration with all defaults resolved.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub topology: TopologySection,
    pub problem: ProblemSection,
    pub optim: OptimSection,
    pub compression: Option<CompressionSection>,
    pub seed: u64,
    pub record_stride: usize,
    pub repeats: usize,
    pub output_dir: Option<PathBuf>,
    pub thresholds: Thresholds,
    provenance: BTreeMap<String, Provenance>,
}

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "record_stride",
    "repeats",
    "output_dir",
    "threshold.grad_norm_sq",
    "threshold.suboptimality",
    "topology.kind",
    "topology.workers",
    "topology.custom_path",
    "problem.kind",
    "problem.dim",
    "problem.samples_per_worker",
    "problem.heterogeneity",
    "problem.batch_size",
    "problem.seed",
    "problem.shared_data",
    "problem.holdout_fraction",
    "optim.method",
    "optim.eta",
    "optim.mu",
    "optim.period",
    "optim.gamma",
    "optim.iterations",
    "optim.strict",
    "optim.lr_decay.factor",
    "optim.lr_decay.milestones",
    "compression.kind",
    "compression.k",
];

const ALIASES: &[(&str, &str)] = &[
    ("optim.learning_rate", "optim.eta"),
    ("optim.lr", "optim.eta"),
    ("optim.step_size", "optim.eta"),
    ("optim.momentum", "optim.mu"),
    ("optim.p", "optim.period"),
    ("optim.steps", "optim.iterations"),
    ("optim.t", "optim.iterations"),
    ("topology.k", "topology.workers"),
    ("topology.nodes", "topology.workers"),
    ("problem.n", "problem.samples_per_worker"),
    ("problem.samples", "problem.samples_per_worker"),
    ("problem.het", "problem.heterogeneity"),
    ("problem.batch", "problem.batch_size"),
    ("compression.ratio", "compression.k"),
];

pub fn is_known_key(key: &str) -> bool {
    KNOWN_KEYS.contains(&key)
}

fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut cur = vec![i + 1];
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur.push(sub.min(prev[j + 1] + 1).min(cur[j] + 1));
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Best-effort suggestion for a mistyped key.
pub fn suggest_key(key: &str) -> Option<&'static str> {
    if let Some((_, target)) = ALIASES.iter().find(|(alias, _)| *alias == key) {
        return Some(target);
    }
    KNOWN_KEYS
        .iter()
        .map(|k| (levenshtein(key, k), *k))
        .min()
        .filter(|(dist, k)| *dist <= (k.len() / 3).max(2))
        .map(|(_, k)| k)
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (key, value) in table {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match value {
            Value::Table(inner) => flatten(&path, inner, out),
            other => out.push((path, other.clone())),
        }
    }
}

struct Extractor {
    values: BTreeMap<String, Value>,
    provenance: BTreeMap<String, Provenance>,
}

impl Extractor {
    fn new(table: &toml::Table) -> Result<Self> {
        let mut flat = Vec::new();
        flatten("", table, &mut flat);
        // Key names are checked before any value, so typos surface as
        // typos rather than as missing-required errors.
        for (path, _) in &flat {
            if !is_known_key(path) {
                let hint = suggest_key(path)
                    .map(|s| format!("; did you mean `{s}`?"))
                    .unwrap_or_default();
                return Err(Error::Config(format!("unknown config key `{path}`{hint}")));
            }
        }
        Ok(Self { values: flat.into_iter().collect(), provenance: BTreeMap::new() })
    }

    fn mark(&mut self, key: &str, p: Provenance) {
        self.provenance.insert(key.to_string(), p);
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        let v = self.values.remove(key);
        if v.is_some() {
            self.mark(key, Provenance::User);
        }
        v
    }

    fn opt_str(&mut self, key: &str) -> Result<Option<String>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(type_error(key, "a string", &v)),
        }
    }

    fn req_str(&mut self, key: &str) -> Result<String> {
        self.opt_str(key)?
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    fn opt_i64(&mut self, key: &str) -> Result<Option<i64>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Integer(i)) => Ok(Some(i)),
            Some(v) => Err(type_error(key, "an integer", &v)),
        }
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.opt_i64(key)? {
            None => {
                self.mark(key, Provenance::Default);
                Ok(default)
            }
            Some(i) if i >= 0 => Ok(i as usize),
            Some(i) => Err(Error::Config(format!("config key `{key}` must be >= 0, got {i}"))),
        }
    }

    fn opt_f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(f)),
            Some(Value::Integer(i)) => Ok(Some(i as f64)),
            Some(v) => Err(type_error(key, "a number", &v)),
        }
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.opt_f64(key)? {
            None => {
                self.mark(key, Provenance::Default);
                Ok(default)
            }
            Some(f) => Ok(f),
        }
    }

    fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key) {
            None => {
                self.mark(key, Provenance::Default);
                Ok(default)
            }
            Some(Value::Boolean(b)) => Ok(b),
            Some(v) => Err(type_error(key, "a boolean", &v)),
        }
    }

    fn opt_usize_array(&mut self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .into_iter()
                .map(|v| match v {
                    Value::Integer(i) if i >= 0 => Ok(i as usize),
                    other => Err(type_error(key, "an array of non-negative integers", &other)),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(v) => Err(type_error(key, "an array of integers", &v)),
        }
    }
}

fn type_error(key: &str, expected: &str, got: &Value) -> Error {
    Error::Config(format!("config key `{key}` expects {expected}, got `{got}`"))
}

fn check_range(key: &str, value: f64, lo: f64, hi: f64) -> Result<f64> {
    if value >= lo && value <= hi {
        Ok(value)
    } else {
        Err(Error::Config(format!(
            "config key `{key}` must lie in [{lo}, {hi}], got {value}"
        )))
    }
}

/// Parse and validate config text.
pub fn load_config(text: &str) -> Result<RunConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("parse error: {e}")))?;
    resolve(&table)
}

/// Parse and validate a config file.
pub fn load_config_file(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config `{}`: {e}", path.display())))?;
    load_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Apply `--set key=value` overrides onto a raw config table. Values parse
/// as TOML literals, falling back to strings.
pub fn apply_overrides(table: &mut toml::Table, sets: &[String]) -> Result<()> {
    for spec in sets {
        let (key, raw) = spec.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects KEY=VALUE, got `{spec}`"))
        })?;
        let key = key.trim();
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        let mut cursor = &mut *table;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            let entry = cursor
                .entry(part.to_string())
                .or_insert_with(|| Value::Table(toml::Table::new()));
            cursor = entry.as_table_mut().ok_or_else(|| {
                Error::Config(format!("--set key `{key}` traverses non-table `{part}`"))
            })?;
        }
        cursor.insert(parts[parts.len() - 1].to_string(), value);
    }
    Ok(())
}

/// Validate a raw table and fill defaults.
pub fn resolve(table: &toml::Table) -> Result<RunConfig> {
    let mut ex = Extractor::new(table)?;

    let seed = ex.usize_or("seed", 0)? as u64;
    let record_stride = ex.usize_or("record_stride", 1)?;
    if record_stride == 0 {
        return Err(Error::Config("record_stride must be >= 1".into()));
    }
    let repeats = ex.usize_or("repeats", 1)?;
    if repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    let output_dir = ex.opt_str("output_dir")?.map(PathBuf::from);

    let thresholds = Thresholds {
        grad_norm_sq: ex.opt_f64("threshold.grad_norm_sq")?,
        suboptimality: ex.opt_f64("threshold.suboptimality")?,
    };

    // --- topology ---
    let kind = ex.opt_str("topology.kind")?.map(|s| TopologyKind::parse(&s)).transpose()?;
    let custom_path = ex.opt_str("topology.custom_path")?.map(PathBuf::from);
    match (&kind, &custom_path) {
        (None, None) => {
            return Err(Error::Config(
                "missing required key `topology.kind` (or `topology.custom_path`)".into(),
            ))
        }
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "`topology.kind` and `topology.custom_path` are mutually exclusive".into(),
            ))
        }
        _ => {}
    }
    let workers = ex.usize_or("topology.workers", 8)?;
    if workers == 0 {
        return Err(Error::Config("topology.workers must be >= 1".into()));
    }
    if kind == Some(TopologyKind::Grid2d) {
        let side = (workers as f64).sqrt().round() as usize;
        if side * side != workers {
            return Err(Error::Config(format!(
                "topology.kind = grid2d requires a perfect-square worker count, got {workers}"
            )));
        }
    }
    let topology = TopologySection { kind, workers, custom_path };

    // --- problem ---
    let problem_kind = ProblemKind::parse(&ex.req_str("problem.kind")?)?;
    let dim = ex.usize_or("problem.dim", 10)?;
    if dim == 0 {
        return Err(Error::Config("problem.dim must be >= 1".into()));
    }
    let samples_per_worker = ex.usize_or("problem.samples_per_worker", 32)?;
    if samples_per_worker == 0 {
        return Err(Error::Config("problem.samples_per_worker must be >= 1".into()));
    }
    let heterogeneity = check_range(
        "problem.heterogeneity",
        ex.f64_or("problem.heterogeneity", 0.0)?,
        0.0,
        1.0,
    )?;
    let batch_size = ex.usize_or("problem.batch_size", 4)?;
    if batch_size == 0 {
        return Err(Error::Config("problem.batch_size must be >= 1".into()));
    }
    let problem_seed = match ex.opt_i64("problem.seed")? {
        Some(i) if i >= 0 => i as u64,
        Some(i) => return Err(Error::Config(format!("problem.seed must be >= 0, got {i}"))),
        None => {
            ex.mark("problem.seed", Provenance::Computed("inherited from seed".into()));
            seed
        }
    };
    let shared_data = ex.bool_or("problem.shared_data", false)?;
    if shared_data && heterogeneity != 0.0 {
        return Err(Error::Config(
            "problem.shared_data requires problem.heterogeneity = 0".into(),
        ));
    }
    let holdout_fraction = check_range(
        "problem.holdout_fraction",
        ex.f64_or("problem.holdout_fraction", 0.0)?,
        0.0,
        0.9,
    )?;
    if holdout_fraction > 0.0 {
        if problem_kind == ProblemKind::Quadratic {
            return Err(Error::Config(
                "problem.holdout_fraction applies to logistic/mlp only".into(),
            ));
        }
        let n_hold = (holdout_fraction * samples_per_worker as f64).floor() as usize;
        if samples_per_worker - n_hold == 0 {
            return Err(Error::Config(
                "problem.holdout_fraction leaves no training samples".into(),
            ));
        }
    }
    let problem = ProblemSection {
        kind: problem_kind,
        dim,
        samples_per_worker,
        heterogeneity,
        batch_size,
        seed: problem_seed,
        shared_data,
        holdout_fraction,
    };

    // --- optim ---
    let method = Method::parse(&ex.req_str("optim.method")?)?;
    let eta = ex.f64_or("optim.eta", 0.1)?;
    if !(eta > 0.0) {
        return Err(Error::Config(format!("optim.eta must be > 0, got {eta}")));
    }
    let mu = match ex.opt_f64("optim.mu")? {
        Some(m) => m,
        None => {
            ex.mark("optim.mu", Provenance::Default);
            if method.momentum_free() {
                0.0
            } else {
                0.9
            }
        }
    };
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::Config(format!("optim.mu must be < 1 and >= 0, got {mu}")));
    }
    if method.momentum_free() && mu != 0.0 {
        return Err(Error::Config(format!(
            "method `{}` is momentum-free; optim.mu must be 0",
            method.name()
        )));
    }
    let period = match ex.opt_i64("optim.period")? {
        Some(p) if p >= 1 => p as usize,
        Some(p) => return Err(Error::Config(format!("optim.period must be >= 1, got {p}"))),
        None => {
            ex.mark("optim.period", Provenance::Default);
            if method.per_iteration_comm() {
                1
            } else {
                4
            }
        }
    };
    if method.per_iteration_comm() && period != 1 {
        return Err(Error::Config(format!(
            "method `{}` communicates every iteration; optim.period must be 1",
            method.name()
        )));
    }
    let gamma = ex.opt_f64("optim.gamma")?;
    if let Some(g) = gamma {
        if !method.compressed() {
            return Err(Error::Config(format!(
                "optim.gamma only applies to cpd_sgdm, not `{}`",
                method.name()
            )));
        }
        if !(g > 0.0) {
            return Err(Error::Config(format!("optim.gamma must be > 0, got {g}")));
        }
    }
    let iterations = ex.usize_or("optim.iterations", 1000)?;
    let strict = ex.bool_or("optim.strict", false)?;
    let decay_factor = ex.opt_f64("optim.lr_decay.factor")?;
    let decay_milestones = ex.opt_usize_array("optim.lr_decay.milestones")?;
    let lr_decay = match (decay_factor, decay_milestones) {
        (None, None) => None,
        (Some(factor), Some(mut milestones)) => {
            if !(factor > 0.0 && factor <= 1.0) {
                return Err(Error::Config(format!(
                    "optim.lr_decay.factor must lie in (0, 1], got {factor}"
                )));
            }
            milestones.sort_unstable();
            Some(LrDecay { factor, milestones })
        }
        _ => {
            return Err(Error::Config(
                "optim.lr_decay needs both `factor` and `milestones`".into(),
            ))
        }
    };
    let optim = OptimSection { method, eta, mu, period, gamma, iterations, strict, lr_decay };

    // --- compression ---
    let comp_kind = ex.opt_str("compression.kind")?.map(|s| CompressorKind::parse(&s)).transpose()?;
    let comp_k = match ex.opt_i64("compression.k")? {
        Some(i) if i >= 1 => Some(i as usize),
        Some(i) => return Err(Error::Config(format!("compression.k must be >= 1, got {i}"))),
        None => None,
    };
    let compression = match (comp_kind, comp_k) {
        (None, None) => None,
        (None, Some(_)) => {
            return Err(Error::Config("compression.k given without compression.kind".into()))
        }
        (Some(kind), k) => {
            let section = CompressionSection { kind, k };
            section.spec()?; // kind/k consistency
            Some(section)
        }
    };
    match (method.compressed(), &compression) {
        (true, None) => {
            return Err(Error::Config(
                "optim.method = cpd_sgdm requires a [compression] section".into(),
            ))
        }
        (false, Some(_)) => {
            return Err(Error::Config(format!(
                "[compression] only applies to cpd_sgdm, not `{}`",
                method.name()
            )))
        }
        _ => {}
    }
    if let Some(section) = &compression {
        if let Some(k) = section.k {
            let model_dim = problem.model_dim();
            if k > model_dim {
                return Err(Error::Config(format!(
                    "compression.k = {k} exceeds the model dimension {model_dim}"
                )));
            }
        }
    }

    Ok(RunConfig {
        topology,
        problem,
        optim,
        compression,
        seed,
        record_stride,
        repeats,
        output_dir,
        thresholds,
        provenance: ex.provenance,
    })
}

impl RunConfig {
    pub fn provenance(&self, key: &str) -> Provenance {
        self.provenance.get(key).cloned().unwrap_or(Provenance::User)
    }

    /// Override the run seed (sweep repeats), recording the derivation.
    pub fn set_seed(&mut self, seed: u64, note: String) {
        // problem.seed inherits unless the user pinned it.
        if self.provenance.get("problem.seed") != Some(&Provenance::User) {
            self.problem.seed = seed;
        }
        self.seed = seed;
        self.provenance.insert("seed".into(), Provenance::Computed(note));
    }

    /// Render the resolved config as commented TOML. Key order is fixed and
    /// wall-clock-free so identical configs render byte-identically.
    /// `gamma_note` carries the computed consensus step size when the config
    /// left it to the default formula. `output_dir` is a CLI concern and is
    /// never serialized.
    pub fn render_resolved(&self, gamma_note: Option<(f64, String)>) -> String {
        let mut out = String::from("# resolved configuration\n");
        let line = |buf: &mut String, key: &str, value: String, prov: Provenance| {
            buf.push_str(&format!("{key} = {value}  # {}\n", prov.label()));
        };
        line(&mut out, "seed", self.seed.to_string(), self.provenance("seed"));
        line(
            &mut out,
            "record_stride",
            self.record_stride.to_string(),
            self.provenance("record_stride"),
        );
        line(&mut out, "repeats", self.repeats.to_string(), self.provenance("repeats"));
        if self.thresholds.grad_norm_sq.is_some() || self.thresholds.suboptimality.is_some() {
            out.push_str("\n[threshold]\n");
            if let Some(v) = self.thresholds.grad_norm_sq {
                line(&mut out, "grad_norm_sq", fmt_f64(v), Provenance::User);
            }
            if let Some(v) = self.thresholds.suboptimality {
                line(&mut out, "suboptimality", fmt_f64(v), Provenance::User);
            }
        }

        out.push_str("\n[topology]\n");
        if let Some(kind) = self.topology.kind {
            line(&mut out, "kind", format!("\"{}\"", kind.name()), self.provenance("topology.kind"));
        }
        if let Some(path) = &self.topology.custom_path {
            line(
                &mut out,
                "custom_path",
                format!("{:?}", path.display().to_string()),
                self.provenance("topology.custom_path"),
            );
        }
        line(&mut out, "workers", self.topology.workers.to_string(), self.provenance("topology.workers"));

        out.push_str("\n[problem]\n");
        line(&mut out, "kind", format!("\"{}\"", self.problem.kind.name()), self.provenance("problem.kind"));
        line(&mut out, "dim", self.problem.dim.to_string(), self.provenance("problem.dim"));
        line(
            &mut out,
            "samples_per_worker",
            self.problem.samples_per_worker.to_string(),
            self.provenance("problem.samples_per_worker"),
        );
        line(
            &mut out,
            "heterogeneity",
            fmt_f64(self.problem.heterogeneity),
            self.provenance("problem.heterogeneity"),
        );
        line(&mut out, "batch_size", self.problem.batch_size.to_string(), self.provenance("problem.batch_size"));
        line(&mut out, "seed", self.problem.seed.to_string(), self.provenance("problem.seed"));
        line(&mut out, "shared_data", self.problem.shared_data.to_string(), self.provenance("problem.shared_data"));
        line(
            &mut out,
            "holdout_fraction",
            fmt_f64(self.problem.holdout_fraction),
            self.provenance("problem.holdout_fraction"),
        );

        out.push_str("\n[optim]\n");
        line(&mut out, "method", format!("\"{}\"", self.optim.method.name()), self.provenance("optim.method"));
        line(&mut out, "eta", fmt_f64(self.optim.eta), self.provenance("optim.eta"));
        line(&mut out, "mu", fmt_f64(self.optim.mu), self.provenance("optim.mu"));
        line(&mut out, "period", self.optim.period.to_string(), self.provenance("optim.period"));
        match (self.optim.gamma, gamma_note) {
            (Some(g), _) => line(&mut out, "gamma", fmt_f64(g), self.provenance("optim.gamma")),
            (None, Some((g, note))) => line(&mut out, "gamma", fmt_f64(g), Provenance::Computed(note)),
            (None, None) => {}
        }
        line(&mut out, "iterations", self.optim.iterations.to_string(), self.provenance("optim.iterations"));
        line(&mut out, "strict", self.optim.strict.to_string(), self.provenance("optim.strict"));
        if let Some(decay) = &self.optim.lr_decay {
            line(&mut out, "lr_decay.factor", fmt_f64(decay.factor), self.provenance("optim.lr_decay.factor"));
            let ms: Vec<String> = decay.milestones.iter().map(|m| m.to_string()).collect();
            line(
                &mut out,
                "lr_decay.milestones",
                format!("[{}]", ms.join(", ")),
                self.provenance("optim.lr_decay.milestones"),
            );
        }

        if let Some(comp) = &self.compression {
            out.push_str("\n[compression]\n");
            line(&mut out, "kind", format!("\"{}\"", comp.kind.name()), self.provenance("compression.kind"));
            if let Some(k) = comp.k {
                line(&mut out, "k", k.to_string(), self.provenance("compression.k"));
            }
        }
        out
    }
}
