//! Partitioned finite-sum objectives with stochastic-gradient oracles.
//!
//! The global objective is `f(x) = (1/K) sum_k f_k(x)` where worker `k`
//! holds its own samples. Three desk-scale families are provided, each
//! exercising a different regularity assumption:
//!
//! * `quadratic` -- blockwise least squares `f_k(x) = (1/2n) sum_i ||A_i x - b_i||^2`
//!   with a closed-form optimum (smoothness exact, gradients unbounded);
//! * `logistic` -- l2-regularized binary logistic regression on Gaussian
//!   cluster data with row-normalized features, so per-sample gradient
//!   norms obey `||g|| <= 1 + reg * ||x||` (bounded on bounded regions);
//! * `mlp` -- a one-hidden-layer tanh network (width 8) with squared loss
//!   on the same cluster data (non-convex coverage).
//!
//! The `heterogeneity` knob in [0, 1] shifts the per-worker data
//! distributions: feature-mean shifts for `quadratic`, label skew for the
//! cluster problems (0 = iid, 1 = each worker sees only its dominant
//! label). Sampling is uniform with replacement; a batch covering the
//! whole local set degenerates to the deterministic full gradient.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::streams;

/// Hidden width of the `mlp` problem (fixed; the config exposes only the
/// input dimension).
pub const MLP_HIDDEN: usize = 8;
/// l2 regularization coefficient of the `logistic` problem.
pub const LOGISTIC_REG: f64 = 1e-2;
const CLUSTER_SEPARATION: f64 = 1.5;
const QUADRATIC_NOISE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Quadratic,
    Logistic,
    Mlp,
}

impl ProblemKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(Self::Quadratic),
            "logistic" => Ok(Self::Logistic),
            "mlp" => Ok(Self::Mlp),
            other => Err(Error::Config(format!(
                "unknown problem kind `{other}` (expected quadratic, logistic, mlp)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Quadratic => "quadratic",
            Self::Logistic => "logistic",
            Self::Mlp => "mlp",
        }
    }
}

/// Generation recipe for [`Problem::generate`].
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    /// Feature dimension. Equals the model dimension for quadratic and
    /// logistic; the mlp parameter vector is larger (see [`Problem::dim`]).
    pub dim: usize,
    pub n_per_worker: usize,
    pub workers: usize,
    /// In [0, 1]; 0 = identically distributed workers.
    pub heterogeneity: f64,
    pub seed: u64,
    /// All workers hold one identical dataset (requires heterogeneity 0).
    pub shared_data: bool,
    /// Fraction of each worker's samples held out of training (cluster
    /// problems only).
    pub holdout_fraction: f64,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, dim: usize, n_per_worker: usize, workers: usize) -> Self {
        Self {
            kind,
            dim,
            n_per_worker,
            workers,
            heterogeneity: 0.0,
            seed: 0,
            shared_data: false,
            holdout_fraction: 0.0,
        }
    }
}

/// One stochastic gradient draw.
#[derive(Debug, Clone)]
pub struct GradientSample {
    pub grad: DVector<f64>,
    pub worker: usize,
    pub batch_indices: Vec<usize>,
}

/// A sample of the quadratic problem: loss `1/2 ||A x - b||^2`.
/// Generated data uses single-row blocks; tests build square blocks.
#[derive(Debug, Clone)]
struct QuadBlock {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

#[derive(Debug, Clone)]
struct ClusterWorker {
    /// Row-normalized features, one row per sample.
    features: DMatrix<f64>,
    /// Labels in {-1, +1}.
    labels: Vec<f64>,
    holdout_features: DMatrix<f64>,
    holdout_labels: Vec<f64>,
}

#[derive(Debug, Clone)]
enum ProblemData {
    Quadratic { workers: Vec<Vec<QuadBlock>> },
    Logistic { workers: Vec<ClusterWorker>, reg: f64 },
    Mlp { workers: Vec<ClusterWorker>, hidden: usize, input_dim: usize },
}

/// Constants estimated by [`Problem::estimate_constants`]; consumed only by
/// diagnostics, never by the optimizer.
#[derive(Debug, Clone, Copy)]
pub struct ProblemConstants {
    /// Smoothness: exact for quadratic, analytic upper bound for logistic,
    /// power-iteration estimate for mlp.
    pub l_smooth: f64,
    /// Empirical max over sampled points of the per-sample gradient
    /// variance.
    pub sigma_sq_hat: f64,
    /// Empirical max over sampled points/workers/samples of the gradient
    /// norm.
    pub g_hat: f64,
}

/// An immutable partitioned objective with gradient oracles.
#[derive(Debug, Clone)]
pub struct Problem {
    data: ProblemData,
    kind: ProblemKind,
    dim: usize,
    workers: usize,
    seed: u64,
    f_star: Option<f64>,
    x_star: Option<DVector<f64>>,
}

impl Problem {
    /// Generate a problem instance from the recipe.
    pub fn generate(spec: &ProblemSpec) -> Result<Self> {
        if spec.dim == 0 {
            return Err(Error::Problem("dim must be >= 1".into()));
        }
        if spec.n_per_worker == 0 {
            return Err(Error::Problem("samples_per_worker must be >= 1".into()));
        }
        if spec.workers == 0 {
            return Err(Error::Problem("workers must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&spec.heterogeneity) {
            return Err(Error::Problem("heterogeneity must lie in [0, 1]".into()));
        }
        if spec.shared_data && spec.heterogeneity != 0.0 {
            return Err(Error::Problem(
                "shared_data requires heterogeneity = 0".into(),
            ));
        }
        if spec.holdout_fraction != 0.0 && spec.kind == ProblemKind::Quadratic {
            return Err(Error::Problem(
                "holdout_fraction applies to logistic/mlp only".into(),
            ));
        }
        if !(0.0..=0.9).contains(&spec.holdout_fraction) {
            return Err(Error::Problem("holdout_fraction must lie in [0, 0.9]".into()));
        }
        let n_hold = (spec.holdout_fraction * spec.n_per_worker as f64).floor() as usize;
        if spec.n_per_worker - n_hold == 0 {
            return Err(Error::Problem(
                "holdout_fraction leaves no training samples".into(),
            ));
        }
        match spec.kind {
            ProblemKind::Quadratic => Self::generate_quadratic(spec),
            ProblemKind::Logistic | ProblemKind::Mlp => Self::generate_cluster(spec, n_hold),
        }
    }

    fn generate_quadratic(spec: &ProblemSpec) -> Result<Self> {
        let d = spec.dim;
        let mut rng = streams::stream(spec.seed, "problem.quadratic.truth", 0);
        let x_true = DVector::from_fn(d, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v / (d as f64).sqrt()
        });
        let make_worker = |k: u64| -> Vec<QuadBlock> {
            let mut rng = streams::stream(spec.seed, "problem.quadratic.data", k);
            let shift = if spec.heterogeneity > 0.0 {
                let raw = gaussian_vector(d, &mut rng);
                let norm = raw.norm();
                if norm > 0.0 {
                    raw * (spec.heterogeneity / norm)
                } else {
                    raw
                }
            } else {
                DVector::zeros(d)
            };
            (0..spec.n_per_worker)
                .map(|_| {
                    let a = DVector::from_fn(d, |i, _| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        g + shift[i]
                    });
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let b = a.dot(&x_true) + QUADRATIC_NOISE * noise;
                    QuadBlock {
                        a: DMatrix::from_row_slice(1, d, a.as_slice()),
                        b: DVector::from_vec(vec![b]),
                    }
                })
                .collect()
        };
        let workers: Vec<Vec<QuadBlock>> = if spec.shared_data {
            let one = make_worker(0);
            vec![one; spec.workers]
        } else {
            (0..spec.workers as u64).map(make_worker).collect()
        };
        Self::from_quadratic_blocks_inner(workers, spec.seed)
    }

    /// Build a quadratic problem from explicit per-worker blocks
    /// `(A_i, b_i)` with loss `1/2 ||A_i x - b_i||^2` per block.
    pub fn from_quadratic_blocks(workers: Vec<Vec<(DMatrix<f64>, DVector<f64>)>>) -> Result<Self> {
        let blocks = workers
            .into_iter()
            .map(|w| w.into_iter().map(|(a, b)| QuadBlock { a, b }).collect())
            .collect();
        Self::from_quadratic_blocks_inner(blocks, 0)
    }

    fn from_quadratic_blocks_inner(workers: Vec<Vec<QuadBlock>>, seed: u64) -> Result<Self> {
        if workers.is_empty() || workers.iter().any(|w| w.is_empty()) {
            return Err(Error::Problem("every worker needs at least one sample".into()));
        }
        let d = workers[0][0].a.ncols();
        for w in &workers {
            for blk in w {
                if blk.a.ncols() != d || blk.a.nrows() != blk.b.len() {
                    return Err(Error::Shape("inconsistent quadratic block shapes".into()));
                }
            }
        }
        let k = workers.len();
        // Normal equations on the averaged objective:
        //   H = (1/K) sum_k (1/n_k) sum_i A_i^T A_i,  c = same with A_i^T b_i.
        let mut h = DMatrix::<f64>::zeros(d, d);
        let mut c = DVector::<f64>::zeros(d);
        for w in &workers {
            let inv_n = 1.0 / w.len() as f64;
            for blk in w {
                h += blk.a.tr_mul(&blk.a) * inv_n;
                c += blk.a.tr_mul(&blk.b) * inv_n;
            }
        }
        h /= k as f64;
        c /= k as f64;
        let x_star = match Cholesky::new(h.clone()) {
            Some(chol) => chol.solve(&c),
            None => h
                .clone()
                .svd(true, true)
                .solve(&c, 1e-12)
                .map_err(|e| Error::Problem(format!("normal equations solve failed: {e}")))?,
        };
        let mut problem = Self {
            data: ProblemData::Quadratic { workers },
            kind: ProblemKind::Quadratic,
            dim: d,
            workers: k,
            seed,
            f_star: None,
            x_star: None,
        };
        problem.f_star = Some(problem.loss_all(&x_star));
        problem.x_star = Some(x_star);
        Ok(problem)
    }

    fn generate_cluster(spec: &ProblemSpec, n_hold: usize) -> Result<Self> {
        let d = spec.dim;
        let mut rng = streams::stream(spec.seed, "problem.cluster.direction", 0);
        let raw = gaussian_vector(d, &mut rng);
        let direction = if raw.norm() > 0.0 { raw.clone() / raw.norm() } else { raw };

        let n_train = spec.n_per_worker - n_hold;
        let make_worker = |k: u64| -> ClusterWorker {
            let mut rng = streams::stream(spec.seed, "problem.cluster.data", k);
            let n_skew = (spec.heterogeneity * spec.n_per_worker as f64).round() as usize;
            let dominant = if k % 2 == 0 { -1.0 } else { 1.0 };
            let mut feats = Vec::with_capacity(spec.n_per_worker);
            let mut labels = Vec::with_capacity(spec.n_per_worker);
            for i in 0..spec.n_per_worker {
                let y = if i < n_skew {
                    dominant
                } else if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                };
                let mut a = DVector::from_fn(d, |j, _| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    g + y * CLUSTER_SEPARATION * direction[j]
                });
                let norm = a.norm();
                if norm > 0.0 {
                    a /= norm;
                }
                feats.push(a);
                labels.push(y);
            }
            let rows = |range: std::ops::Range<usize>| {
                DMatrix::from_fn(range.len(), d, |r, c| feats[range.start + r][c])
            };
            ClusterWorker {
                features: rows(0..n_train),
                labels: labels[..n_train].to_vec(),
                holdout_features: rows(n_train..spec.n_per_worker),
                holdout_labels: labels[n_train..].to_vec(),
            }
        };
        let workers: Vec<ClusterWorker> = if spec.shared_data {
            let one = make_worker(0);
            vec![one; spec.workers]
        } else {
            (0..spec.workers as u64).map(make_worker).collect()
        };

        let (data, dim) = match spec.kind {
            ProblemKind::Logistic => (ProblemData::Logistic { workers, reg: LOGISTIC_REG }, d),
            ProblemKind::Mlp => (
                ProblemData::Mlp { workers, hidden: MLP_HIDDEN, input_dim: d },
                MLP_HIDDEN * d + 2 * MLP_HIDDEN + 1,
            ),
            ProblemKind::Quadratic => unreachable!(),
        };
        let mut problem = Self {
            data,
            kind: spec.kind,
            dim,
            workers: spec.workers,
            seed: spec.seed,
            f_star: None,
            x_star: None,
        };
        if spec.kind == ProblemKind::Logistic {
            let x_star = problem.solve_logistic_reference()?;
            problem.f_star = Some(problem.loss_all(&x_star));
            problem.x_star = Some(x_star);
        }
        Ok(problem)
    }

    /// Model dimension (length of the optimizer's parameter vector).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Training-sample count of worker `k`.
    pub fn samples(&self, worker: usize) -> usize {
        match &self.data {
            ProblemData::Quadratic { workers } => workers[worker].len(),
            ProblemData::Logistic { workers, .. } | ProblemData::Mlp { workers, .. } => {
                workers[worker].labels.len()
            }
        }
    }

    /// Closed-form / reference minimum of the global objective, when
    /// available (quadratic, logistic).
    pub fn f_star(&self) -> Option<f64> {
        self.f_star
    }

    pub fn x_star(&self) -> Option<&DVector<f64>> {
        self.x_star.as_ref()
    }

    /// Common initial iterate `x_0`: zero for the convex problems, a small
    /// deterministic random init for the mlp (zero is a saddle there).
    pub fn initial_point(&self) -> DVector<f64> {
        match &self.data {
            ProblemData::Mlp { hidden, input_dim, .. } => {
                let mut rng = streams::stream(self.seed, "problem.mlp.init", 0);
                let h = *hidden;
                let din = *input_dim;
                let mut x = DVector::zeros(self.dim);
                let w1_scale = 1.0 / (din as f64).sqrt();
                for i in 0..h * din {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    x[i] = g * w1_scale;
                }
                let w2_scale = 1.0 / (h as f64).sqrt();
                for i in 0..h {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    x[h * din + h + i] = g * w2_scale;
                }
                x
            }
            _ => DVector::zeros(self.dim),
        }
    }

    /// Loss of worker `worker`'s local objective at `x`.
    pub fn loss(&self, worker: usize, x: &DVector<f64>) -> f64 {
        let n = self.samples(worker);
        (0..n).map(|i| self.sample_loss(worker, i, x)).sum::<f64>() / n as f64
    }

    /// Global objective `(1/K) sum_k f_k(x)`.
    pub fn loss_all(&self, x: &DVector<f64>) -> f64 {
        (0..self.workers).map(|k| self.loss(k, x)).sum::<f64>() / self.workers as f64
    }

    /// Mean loss over all workers' holdout pools, if any were reserved.
    pub fn holdout_loss(&self, x: &DVector<f64>) -> Option<f64> {
        let per_worker: Vec<f64> = match &self.data {
            ProblemData::Quadratic { .. } => return None,
            // Pure data loss: the holdout column measures generalization,
            // so the regularizer stays out.
            ProblemData::Logistic { workers, .. } => workers
                .iter()
                .filter(|w| !w.holdout_labels.is_empty())
                .map(|w| {
                    let n = w.holdout_labels.len();
                    (0..n)
                        .map(|i| {
                            let z = w.holdout_features.row(i).transpose().dot(x);
                            softplus(-w.holdout_labels[i] * z)
                        })
                        .sum::<f64>()
                        / n as f64
                })
                .collect(),
            ProblemData::Mlp { workers, hidden, input_dim } => workers
                .iter()
                .filter(|w| !w.holdout_labels.is_empty())
                .map(|w| {
                    let n = w.holdout_labels.len();
                    (0..n)
                        .map(|i| {
                            let a = w.holdout_features.row(i).transpose();
                            let (out, _, _) = mlp_forward(x, &a, *hidden, *input_dim);
                            0.5 * (out - w.holdout_labels[i]).powi(2)
                        })
                        .sum::<f64>()
                        / n as f64
                })
                .collect(),
        };
        if per_worker.is_empty() {
            None
        } else {
            Some(per_worker.iter().sum::<f64>() / per_worker.len() as f64)
        }
    }

    fn sample_loss(&self, worker: usize, idx: usize, x: &DVector<f64>) -> f64 {
        match &self.data {
            ProblemData::Quadratic { workers } => {
                let blk = &workers[worker][idx];
                (&blk.a * x - &blk.b).norm_squared() * 0.5
            }
            ProblemData::Logistic { workers, reg } => {
                let w = &workers[worker];
                let z = w.features.row(idx).transpose().dot(x);
                softplus(-w.labels[idx] * z) + 0.5 * reg * x.norm_squared()
            }
            ProblemData::Mlp { workers, hidden, input_dim } => {
                let w = &workers[worker];
                let a = w.features.row(idx).transpose();
                let (out, _, _) = mlp_forward(x, &a, *hidden, *input_dim);
                0.5 * (out - w.labels[idx]).powi(2)
            }
        }
    }

    /// Gradient of one training sample.
    pub fn sample_gradient(&self, worker: usize, idx: usize, x: &DVector<f64>) -> DVector<f64> {
        match &self.data {
            ProblemData::Quadratic { workers } => {
                let blk = &workers[worker][idx];
                blk.a.tr_mul(&(&blk.a * x - &blk.b))
            }
            ProblemData::Logistic { workers, reg } => {
                let w = &workers[worker];
                let a = w.features.row(idx).transpose();
                let y = w.labels[idx];
                let z = a.dot(x);
                // d/dx softplus(-y z) = -y sigmoid(-y z) a
                let coeff = -y * sigmoid(-y * z);
                a * coeff + x * *reg
            }
            ProblemData::Mlp { workers, hidden, input_dim } => {
                let w = &workers[worker];
                let a = w.features.row(idx).transpose();
                mlp_gradient(x, &a, w.labels[idx], *hidden, *input_dim)
            }
        }
    }

    /// Unbiased stochastic gradient of worker `worker` at `x`: a uniform
    /// with-replacement batch mean. A batch covering the whole local set
    /// (`batch_size >= n`) returns the exact full gradient and consumes no
    /// randomness.
    pub fn stochastic_gradient(
        &self,
        worker: usize,
        x: &DVector<f64>,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> GradientSample {
        assert!(worker < self.workers, "worker index out of range");
        assert!(batch_size >= 1, "batch_size must be >= 1");
        let n = self.samples(worker);
        if batch_size >= n {
            return GradientSample {
                grad: self.full_gradient(worker, x),
                worker,
                batch_indices: (0..n).collect(),
            };
        }
        let indices: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..n)).collect();
        let mut grad = DVector::zeros(self.dim);
        for &i in &indices {
            grad += self.sample_gradient(worker, i, x);
        }
        grad /= batch_size as f64;
        GradientSample { grad, worker, batch_indices: indices }
    }

    /// Exact local gradient of worker `worker` at `x`.
    pub fn full_gradient(&self, worker: usize, x: &DVector<f64>) -> DVector<f64> {
        let n = self.samples(worker);
        let mut grad = DVector::zeros(self.dim);
        for i in 0..n {
            grad += self.sample_gradient(worker, i, x);
        }
        grad / n as f64
    }

    /// Gradient of the global objective: the average of per-worker full
    /// gradients, summed in worker order.
    pub fn full_gradient_all(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut grad = DVector::zeros(self.dim);
        for k in 0..self.workers {
            grad += self.full_gradient(k, x);
        }
        grad / self.workers as f64
    }

    /// Estimate the regularity constants on the ball of `region_radius`
    /// around the initial point.
    pub fn estimate_constants(&self, region_radius: f64) -> ProblemConstants {
        assert!(region_radius > 0.0, "region_radius must be positive");
        let l_smooth = match &self.data {
            ProblemData::Quadratic { workers } => {
                // Exact: largest eigenvalue of the averaged Hessian.
                let d = self.dim;
                let mut h = DMatrix::<f64>::zeros(d, d);
                for w in workers {
                    let inv_n = 1.0 / w.len() as f64;
                    for blk in w {
                        h += blk.a.tr_mul(&blk.a) * inv_n;
                    }
                }
                h /= workers.len() as f64;
                h.symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .fold(0.0f64, |acc, &l| acc.max(l))
            }
            ProblemData::Logistic { workers, reg } => {
                // sigma'(z) <= 1/4, so L <= max ||a||^2 / 4 + reg.
                let max_row = workers
                    .iter()
                    .flat_map(|w| w.features.row_iter().map(|r| r.norm_squared()))
                    .fold(0.0f64, f64::max);
                0.25 * max_row + reg
            }
            ProblemData::Mlp { .. } => self.mlp_power_iteration_l(region_radius),
        };

        let x0 = self.initial_point();
        let mut rng = streams::stream(self.seed, "problem.constants", 0);
        let mut points = vec![x0.clone()];
        for _ in 0..9 {
            let dir = gaussian_vector(self.dim, &mut rng);
            let norm = dir.norm();
            let scale: f64 = rng.random::<f64>() * region_radius / norm.max(1e-12);
            points.push(&x0 + dir * scale);
        }
        let mut sigma_sq_hat = 0.0f64;
        let mut g_hat = 0.0f64;
        for x in &points {
            for k in 0..self.workers {
                let full = self.full_gradient(k, x);
                let n = self.samples(k);
                let mut var = 0.0;
                for i in 0..n {
                    let g = self.sample_gradient(k, i, x);
                    g_hat = g_hat.max(g.norm());
                    var += (g - &full).norm_squared();
                }
                sigma_sq_hat = sigma_sq_hat.max(var / n as f64);
            }
        }
        ProblemConstants { l_smooth, sigma_sq_hat, g_hat }
    }

    fn mlp_power_iteration_l(&self, region_radius: f64) -> f64 {
        let x0 = self.initial_point();
        let mut rng = streams::stream(self.seed, "problem.mlp.power", 0);
        let mut l_max = 0.0f64;
        for p in 0..3 {
            let x = if p == 0 {
                x0.clone()
            } else {
                let dir = gaussian_vector(self.dim, &mut rng);
                let norm = dir.norm();
                &x0 + dir * (region_radius / norm.max(1e-12))
            };
            let mut v = gaussian_vector(self.dim, &mut rng);
            v /= v.norm();
            let eps = 1e-5 * (1.0 + x.norm());
            let mut rayleigh = 0.0f64;
            for _ in 0..30 {
                // Hessian-vector product by central differences of the gradient.
                let gp = self.full_gradient_all(&(&x + &v * eps));
                let gm = self.full_gradient_all(&(&x - &v * eps));
                let hv = (gp - gm) / (2.0 * eps);
                let norm = hv.norm();
                if norm < 1e-14 {
                    rayleigh = 0.0;
                    break;
                }
                rayleigh = v.dot(&hv).abs();
                v = hv / norm;
            }
            l_max = l_max.max(rayleigh);
        }
        l_max
    }

    /// High-precision full-batch reference solve for the logistic optimum
    /// (damped Newton to gradient norm 1e-10).
    fn solve_logistic_reference(&self) -> Result<DVector<f64>> {
        let (workers, reg) = match &self.data {
            ProblemData::Logistic { workers, reg } => (workers, *reg),
            _ => unreachable!(),
        };
        let d = self.dim;
        let mut x = DVector::<f64>::zeros(d);
        for _ in 0..200 {
            let grad = self.full_gradient_all(&x);
            if grad.norm() <= 1e-10 {
                return Ok(x);
            }
            let mut h = DMatrix::<f64>::from_diagonal_element(d, d, reg);
            let mut total_weight = 0.0;
            for w in workers {
                let inv_n = 1.0 / w.labels.len() as f64;
                for i in 0..w.labels.len() {
                    let a = w.features.row(i).transpose();
                    let z = a.dot(&x);
                    let s = sigmoid(z);
                    h += &a * a.transpose() * (s * (1.0 - s) * inv_n);
                }
                total_weight += 1.0;
            }
            // Per-sample Hessian terms were accumulated per worker; rescale
            // the data part (not the regularizer) by 1/K.
            let reg_part = DMatrix::<f64>::from_diagonal_element(d, d, reg);
            h = (&h - &reg_part) / total_weight + reg_part;
            let step = Cholesky::new(h)
                .ok_or_else(|| Error::Problem("logistic Hessian not positive definite".into()))?
                .solve(&grad);
            // Backtracking keeps Newton globally convergent here.
            let f0 = self.loss_all(&x);
            let slope = grad.dot(&step);
            let mut t = 1.0;
            while t > 1e-10 && self.loss_all(&(&x - &step * t)) > f0 - 0.25 * t * slope {
                t *= 0.5;
            }
            x -= step * t;
        }
        let grad_norm = self.full_gradient_all(&x).norm();
        if grad_norm <= 1e-8 {
            Ok(x)
        } else {
            Err(Error::Problem(format!(
                "logistic reference solve stalled at gradient norm {grad_norm:.3e}"
            )))
        }
    }
}

fn gaussian_vector(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| {
        let g: f64 = StandardNormal.sample(rng);
        g
    })
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Forward pass of the width-`h` tanh network. Returns (output, hidden
/// activations, pre-activations).
fn mlp_forward(
    x: &DVector<f64>,
    a: &DVector<f64>,
    h: usize,
    din: usize,
) -> (f64, DVector<f64>, DVector<f64>) {
    let mut pre = DVector::zeros(h);
    for i in 0..h {
        let mut s = x[h * din + i]; // b1
        for j in 0..din {
            s += x[i * din + j] * a[j];
        }
        pre[i] = s;
    }
    let z = pre.map(f64::tanh);
    let mut out = x[h * din + 2 * h]; // b2
    for i in 0..h {
        out += x[h * din + h + i] * z[i];
    }
    (out, z, pre)
}

fn mlp_gradient(x: &DVector<f64>, a: &DVector<f64>, y: f64, h: usize, din: usize) -> DVector<f64> {
    let (out, z, _) = mlp_forward(x, a, h, din);
    let delta = out - y;
    let mut g = DVector::zeros(x.len());
    for i in 0..h {
        let w2_i = x[h * din + h + i];
        let dpre = delta * w2_i * (1.0 - z[i] * z[i]);
        for j in 0..din {
            g[i * din + j] = dpre * a[j];
        }
        g[h * din + i] = dpre; // b1
        g[h * din + h + i] = delta * z[i]; // w2
    }
    g[h * din + 2 * h] = delta; // b2
    g
}
