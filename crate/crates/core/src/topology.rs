//! Worker communication graphs and their doubly-stochastic mixing matrices.
//!
//! Gossip averaging multiplies the stacked worker states by a symmetric
//! doubly-stochastic matrix `W`. This module builds `W` for the supported
//! graph shapes with Metropolis-Hastings weights
//! `w_ij = 1 / (1 + max(deg_i, deg_j))` (self-weight absorbs the rest),
//! which are symmetric and doubly stochastic for any simple connected
//! graph, and computes the two spectral quantities the algorithms and
//! bounds depend on:
//!
//! * `rho = 1 - |lambda_2|`, the spectral gap (second-largest eigenvalue
//!   magnitude); for symmetric doubly-stochastic `W` it satisfies
//!   `||W - (1/K) 11^T||_2 = 1 - rho` exactly.
//! * `beta = max_i (1 - lambda_i)`, an operator-norm bound on `W - I`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Supported graph shapes for [`MixingMatrix::build`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyKind {
    /// Cycle; every worker averages with its two neighbors (uniform 1/3
    /// weights for K >= 3).
    Ring,
    /// Fully connected; `w_ij = 1/K`, one-shot exact averaging.
    Complete,
    /// Non-wrapping sqrt(K) x sqrt(K) lattice. Requires K a perfect square.
    Grid2d,
    /// Line graph.
    Path,
}

impl TopologyKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(Self::Ring),
            "complete" => Ok(Self::Complete),
            "grid2d" => Ok(Self::Grid2d),
            "path" => Ok(Self::Path),
            other => Err(Error::Config(format!(
                "unknown topology kind `{other}` (expected ring, complete, grid2d, path)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ring => "ring",
            Self::Complete => "complete",
            Self::Grid2d => "grid2d",
            Self::Path => "path",
        }
    }
}

/// A validated symmetric doubly-stochastic mixing matrix with cached
/// spectral quantities. Immutable after construction; safe to share across
/// workers.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    workers: usize,
    weights: DMatrix<f64>,
    rho: f64,
    beta: f64,
    neighbors: Vec<Vec<usize>>,
}

impl MixingMatrix {
    /// Build the mixing matrix for `kind` on `workers` nodes.
    pub fn build(kind: TopologyKind, workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::Topology("worker count must be >= 1".into()));
        }
        let weights = match kind {
            TopologyKind::Complete => DMatrix::from_element(workers, workers, 1.0 / workers as f64),
            _ => metropolis_weights(workers, &edges(kind, workers)?),
        };
        Self::from_weights(weights)
    }

    /// Wrap an explicit weight matrix, validating double stochasticity
    /// (tolerance 1e-8, suited to matrices round-tripped through text) and
    /// computing the spectral quantities.
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self> {
        let report = validate_doubly_stochastic(&weights, 1e-8)?;
        if !report.pass {
            return Err(Error::Topology(format!(
                "matrix is not symmetric doubly stochastic: {report}"
            )));
        }
        let (rho, beta) = spectral_gap(&weights)?;
        let workers = weights.nrows();
        let neighbors = (0..workers)
            .map(|i| {
                (0..workers)
                    .filter(|&j| j != i && weights[(i, j)] != 0.0)
                    .collect()
            })
            .collect();
        Ok(Self { workers, weights, rho, beta, neighbors })
    }

    /// The no-communication matrix `W = I`. Its spectral gap is zero, so
    /// no run config can produce it; it exists to exercise gossip plumbing
    /// (averaging with the identity must be a no-op).
    pub fn identity(workers: usize) -> Self {
        Self {
            workers,
            weights: DMatrix::identity(workers, workers),
            rho: 0.0,
            beta: 0.0,
            neighbors: vec![Vec::new(); workers],
        }
    }

    /// Parse a whitespace-delimited K x K matrix (any line structure; the
    /// token count must be a perfect square).
    pub fn from_text(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        for tok in text.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::Topology(format!("invalid matrix entry `{tok}`")))?;
            values.push(v);
        }
        let n = (values.len() as f64).sqrt().round() as usize;
        if n == 0 || n * n != values.len() {
            return Err(Error::Topology(format!(
                "expected K*K whitespace-delimited entries, got {}",
                values.len()
            )));
        }
        // Tokens are read row-major; symmetry makes the distinction moot.
        Self::from_weights(DMatrix::from_row_slice(n, n, &values))
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    /// Spectral gap `rho = 1 - |lambda_2|` (defined as 1 for K = 1).
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `beta = max_i (1 - lambda_i)`, bounds `||W - I||_2`.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Neighbors of worker `k` (nonzero off-diagonal weights).
    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.neighbors[k]
    }

    /// Number of directed edges, i.e. point-to-point messages per gossip
    /// round.
    pub fn directed_edges(&self) -> u64 {
        self.neighbors.iter().map(|n| n.len() as u64).sum()
    }
}

/// Outcome of [`validate_doubly_stochastic`].
#[derive(Debug, Clone, Copy)]
pub struct StochasticityReport {
    pub max_row_dev: f64,
    pub max_col_dev: f64,
    pub max_asymmetry: f64,
    pub min_entry: f64,
    pub max_entry: f64,
    pub tol: f64,
    pub pass: bool,
}

impl std::fmt::Display for StochasticityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "row dev {:.3e}, col dev {:.3e}, asymmetry {:.3e}, entries [{:.3e}, {:.3e}], tol {:.1e}",
            self.max_row_dev, self.max_col_dev, self.max_asymmetry, self.min_entry, self.max_entry, self.tol
        )
    }
}

/// Check symmetry, row/column stochasticity and the `[0, 1]` entry range.
///
/// Errors on non-square input; out-of-tolerance deviations are reported,
/// not errors.
pub fn validate_doubly_stochastic(w: &DMatrix<f64>, tol: f64) -> Result<StochasticityReport> {
    if w.nrows() != w.ncols() {
        return Err(Error::Shape(format!(
            "expected square matrix, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    let n = w.nrows();
    let mut max_row_dev: f64 = 0.0;
    let mut max_col_dev: f64 = 0.0;
    let mut max_asymmetry: f64 = 0.0;
    let mut min_entry = f64::INFINITY;
    let mut max_entry = f64::NEG_INFINITY;
    for i in 0..n {
        let mut row = 0.0;
        let mut col = 0.0;
        for j in 0..n {
            let v = w[(i, j)];
            row += v;
            col += w[(j, i)];
            min_entry = min_entry.min(v);
            max_entry = max_entry.max(v);
            max_asymmetry = max_asymmetry.max((v - w[(j, i)]).abs());
        }
        max_row_dev = max_row_dev.max((row - 1.0).abs());
        max_col_dev = max_col_dev.max((col - 1.0).abs());
    }
    let pass = max_row_dev <= tol
        && max_col_dev <= tol
        && max_asymmetry <= tol
        && min_entry >= -tol
        && max_entry <= 1.0 + tol;
    Ok(StochasticityReport {
        max_row_dev,
        max_col_dev,
        max_asymmetry,
        min_entry,
        max_entry,
        tol,
        pass,
    })
}

/// Compute `(rho, beta)` from the eigenvalues of a symmetric
/// doubly-stochastic matrix.
///
/// K is small here, so a dense symmetric eigensolver (O(K^3)) is fine.
/// Errors with "zero spectral gap" when `|lambda_2| = 1`, i.e. the graph is
/// disconnected (or bipartite with period 2 under the given weights).
pub fn spectral_gap(w: &DMatrix<f64>) -> Result<(f64, f64)> {
    if w.nrows() != w.ncols() {
        return Err(Error::Shape(format!(
            "expected square matrix, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    let n = w.nrows();
    if n == 1 {
        // Single worker: no disagreement to contract; rho defined as 1.
        return Ok((1.0, 1.0 - w[(0, 0)]));
    }
    let eig = w.clone().symmetric_eigen();
    let mut mags: Vec<f64> = eig.eigenvalues.iter().map(|l| l.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
    let lambda2 = mags[1];
    if lambda2 >= 1.0 - 1e-9 {
        return Err(Error::Topology(
            "zero spectral gap: |lambda_2| = 1 (disconnected graph)".into(),
        ));
    }
    let beta = eig
        .eigenvalues
        .iter()
        .map(|l| 1.0 - l)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((1.0 - lambda2, beta))
}

fn edges(kind: TopologyKind, n: usize) -> Result<Vec<(usize, usize)>> {
    match kind {
        TopologyKind::Complete => {
            Ok((0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect())
        }
        TopologyKind::Path => Ok((0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect()),
        TopologyKind::Ring => {
            if n <= 2 {
                // Degenerate rings collapse to a point or a single edge.
                return edges(TopologyKind::Path, n);
            }
            Ok((0..n).map(|i| (i, (i + 1) % n)).collect())
        }
        TopologyKind::Grid2d => {
            let side = (n as f64).sqrt().round() as usize;
            if side * side != n {
                return Err(Error::Topology(format!(
                    "grid2d requires a perfect-square worker count, got {n}"
                )));
            }
            let mut e = Vec::new();
            for r in 0..side {
                for c in 0..side {
                    let idx = r * side + c;
                    if c + 1 < side {
                        e.push((idx, idx + 1));
                    }
                    if r + 1 < side {
                        e.push((idx, idx + side));
                    }
                }
            }
            Ok(e)
        }
    }
}

fn metropolis_weights(n: usize, edges: &[(usize, usize)]) -> DMatrix<f64> {
    let mut deg = vec![0usize; n];
    for &(i, j) in edges {
        deg[i] += 1;
        deg[j] += 1;
    }
    let mut w = DMatrix::zeros(n, n);
    for &(i, j) in edges {
        let v = 1.0 / (1 + deg[i].max(deg[j])) as f64;
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent eigenvalue oracle for the uniform-weight ring: the
    /// circulant with first row (1/3, 1/3, 0, ..., 0, 1/3) has eigenvalues
    /// (1 + 2 cos(2 pi j / K)) / 3.
    fn ring_rho_circulant(k: usize) -> f64 {
        let lambda2 = (1..k)
            .map(|j| ((1.0 + 2.0 * (2.0 * std::f64::consts::PI * j as f64 / k as f64).cos()) / 3.0).abs())
            .fold(f64::NEG_INFINITY, f64::max);
        1.0 - lambda2
    }

    #[test]
    fn complete_k4_is_uniform_with_unit_gap() {
        let w = MixingMatrix::build(TopologyKind::Complete, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(w.weight(i, j), 0.25);
            }
        }
        // Eigenvalues of (1/K) 11^T are {1, 0, 0, 0}.
        assert!((w.rho() - 1.0).abs() < 1e-12);
        assert!((w.beta() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ring_k8_matches_circulant_oracle() {
        let w = MixingMatrix::build(TopologyKind::Ring, 8).unwrap();
        for i in 0..8 {
            assert!((w.weight(i, i) - 1.0 / 3.0).abs() < 1e-15);
            for &j in w.neighbors(i) {
                assert!((w.weight(i, j) - 1.0 / 3.0).abs() < 1e-15);
            }
            assert_eq!(w.neighbors(i).len(), 2);
        }
        // Frozen from the circulant formula: rho = 1 - (1 + sqrt(2))/3.
        let expected = 0.195_262_145_875_634_9;
        assert!((ring_rho_circulant(8) - expected).abs() < 1e-12);
        assert!((w.rho() - expected).abs() < 1e-10);
        // lambda_min = (1 - 2)/3 -> beta = 4/3.
        assert!((w.beta() - 4.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn single_worker_ring_is_identity() {
        let w = MixingMatrix::build(TopologyKind::Ring, 1).unwrap();
        assert_eq!(w.weight(0, 0), 1.0);
        assert_eq!(w.rho(), 1.0);
        assert_eq!(w.directed_edges(), 0);
    }

    #[test]
    fn identity_is_doubly_stochastic() {
        let report = validate_doubly_stochastic(&DMatrix::identity(3, 3), 1e-12).unwrap();
        assert!(report.pass);
    }

    #[test]
    fn asymmetric_matrix_fails_validation() {
        let w = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.1, 0.8]);
        let report = validate_doubly_stochastic(&w, 1e-12).unwrap();
        assert!(!report.pass);
        assert!(report.max_row_dev > 0.09);
        assert!(report.max_asymmetry > 0.09);
    }

    #[test]
    fn non_square_input_is_a_shape_error() {
        let w = DMatrix::from_row_slice(2, 3, &[0.5; 6]);
        assert!(matches!(validate_doubly_stochastic(&w, 1e-12), Err(Error::Shape(_))));
        assert!(matches!(spectral_gap(&w), Err(Error::Shape(_))));
    }

    #[test]
    fn disconnected_graph_has_zero_spectral_gap() {
        // Two disconnected pairs: eigenvalue 1 with multiplicity 2.
        let w = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.5, 0.5, 0.0, 0.0, //
                0.5, 0.5, 0.0, 0.0, //
                0.0, 0.0, 0.5, 0.5, //
                0.0, 0.0, 0.5, 0.5,
            ],
        );
        let err = spectral_gap(&w).unwrap_err();
        assert!(err.to_string().contains("zero spectral gap"));
    }

    #[test]
    fn grid_requires_perfect_square() {
        let err = MixingMatrix::build(TopologyKind::Grid2d, 8).unwrap_err();
        assert!(err.to_string().contains("perfect-square"));
        MixingMatrix::build(TopologyKind::Grid2d, 9).unwrap();
    }

    #[test]
    fn from_text_round_trips_ring() {
        let w = MixingMatrix::build(TopologyKind::Ring, 8).unwrap();
        let mut text = String::new();
        for i in 0..8 {
            for j in 0..8 {
                text.push_str(&format!("{:.17} ", w.weight(i, j)));
            }
            text.push('\n');
        }
        let parsed = MixingMatrix::from_text(&text).unwrap();
        assert!((parsed.rho() - w.rho()).abs() < 1e-9);
        let err = MixingMatrix::from_text("0.5 0.5 0.5").unwrap_err();
        assert!(err.to_string().contains("K*K"));
    }

    #[test]
    fn operator_norm_equals_one_minus_rho() {
        // Lemma-style identity, exact for symmetric W; the norm is computed
        // by an SVD, independent of the eigensolver route used for rho.
        for (kind, k) in [
            (TopologyKind::Ring, 8),
            (TopologyKind::Path, 5),
            (TopologyKind::Grid2d, 9),
            (TopologyKind::Complete, 6),
        ] {
            let w = MixingMatrix::build(kind, k).unwrap();
            let mut centered = w.weights().clone();
            centered.add_scalar_mut(-1.0 / k as f64);
            let norm = centered.svd(false, false).singular_values[0];
            assert!(
                (norm - (1.0 - w.rho())).abs() < 1e-10,
                "{} K={k}: ||W - J/K|| = {norm}, 1 - rho = {}",
                kind.name(),
                1.0 - w.rho()
            );
        }
    }

    #[test]
    fn powers_contract_toward_uniform() {
        for (kind, k) in [(TopologyKind::Ring, 8), (TopologyKind::Path, 5), (TopologyKind::Grid2d, 16)] {
            let w = MixingMatrix::build(kind, k).unwrap();
            let mut power = w.weights().clone();
            let shrink = 1.0 - w.rho();
            let mut bound = shrink;
            for _ in 1..=200 {
                let worst = power
                    .iter()
                    .map(|v| (v - 1.0 / k as f64).abs())
                    .fold(0.0, f64::max);
                assert!(
                    worst <= bound + 1e-9,
                    "{} K={k}: max |W^t - 1/K| = {worst} > (1-rho)^t = {bound}",
                    kind.name()
                );
                power *= w.weights();
                bound *= shrink;
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn construction_invariants(kind_idx in 0usize..4, k in 1usize..=64) {
            let kind = [TopologyKind::Ring, TopologyKind::Complete, TopologyKind::Grid2d, TopologyKind::Path][kind_idx];
            let k = if kind == TopologyKind::Grid2d {
                let side = (k as f64).sqrt().floor().max(1.0) as usize;
                side * side
            } else {
                k
            };
            let w = MixingMatrix::build(kind, k).unwrap();
            let report = validate_doubly_stochastic(w.weights(), 1e-12).unwrap();
            prop_assert!(report.pass, "{}", report);
            prop_assert!(w.rho() > 0.0 && w.rho() <= 1.0 + 1e-12);
            prop_assert!(w.beta() >= -1e-12 && w.beta() <= 2.0 + 1e-12);
            // Cached rho matches a recomputation.
            if k > 1 {
                let (rho2, beta2) = spectral_gap(w.weights()).unwrap();
                prop_assert!((w.rho() - rho2).abs() < 1e-10);
                prop_assert!((w.beta() - beta2).abs() < 1e-10);
            }
        }
    }
}
