//! Shared setup helpers for the criterion benches.

use std::sync::Arc;

use decsgd::{
    CompressorSpec, Engine, Method, MixingMatrix, OptimizerConfig, Problem, ProblemKind,
    ProblemSpec, TopologyKind,
};

/// A ready-to-step engine on a generated quadratic.
pub fn quadratic_engine(method: Method, dim: usize, workers: usize, period: usize) -> Engine {
    let problem = Arc::new(
        Problem::generate(&ProblemSpec {
            seed: 17,
            ..ProblemSpec::new(ProblemKind::Quadratic, dim, 32, workers)
        })
        .expect("generate"),
    );
    let topology = MixingMatrix::build(TopologyKind::Ring, workers).expect("topology");
    let compressor = method.compressed().then(CompressorSpec::scaled_sign);
    let config = OptimizerConfig {
        method,
        eta: 1e-4,
        mu: 0.9,
        period,
        gamma: method.compressed().then_some(0.05),
        iterations: usize::MAX,
        strict: false,
        lr_decay: None,
    };
    Engine::new(problem, topology, config, compressor, 4, 0).expect("engine")
}
