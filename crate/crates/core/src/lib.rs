//! decsgd: a desk-scale simulation engine for decentralized momentum SGD
//! with periodic and compressed communication.
//!
//! Workers sit on a graph with a symmetric doubly-stochastic mixing matrix
//! ([`topology`]), each holding a shard of a synthetic finite-sum
//! objective ([`problems`]). The engine ([`optim`]) runs per-worker
//! momentum SGD with gossip averaging every `p` iterations, either exact
//! or compressed through a contraction operator ([`compression`]) with an
//! auxiliary-variable correction, plus centralized and momentum-free
//! baselines. Runtime monitors ([`diagnostics`]) check the algebraic
//! identities and consensus bounds the update rules guarantee, and the
//! [`runner`] turns configs into reproducible runs, sweeps, and presets
//! with CSV outputs.

pub use nalgebra;

pub mod compression;
pub mod diagnostics;
pub mod error;
pub mod optim;
pub mod problems;
pub mod runner;
pub mod streams;
pub mod topology;

pub use compression::{CompressorKind, CompressorSpec, ContractionReport};
pub use diagnostics::{
    check_aux_z, consensus_bound, consensus_distance, metrics_csv, time_to_threshold, AuxZReport,
    MetricsRecord,
};
pub use error::{Error, Result};
pub use optim::{
    default_gamma, gossip_compressed, gossip_exact, Engine, LrDecay, Method, OptimizerConfig,
    WorkerState,
};
pub use problems::{GradientSample, Problem, ProblemConstants, ProblemKind, ProblemSpec};
pub use runner::{
    apply_overrides, load_config, load_config_file, run, sweep, RunConfig, RunOutcome, RunSummary,
};
pub use topology::{spectral_gap, validate_doubly_stochastic, MixingMatrix, TopologyKind};
