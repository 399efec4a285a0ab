//! Runner-level integration: custom topology files, strict mode, holdout
//! columns, and recording stride.

use decsgd::runner::{self, load_config};
use decsgd::topology::{MixingMatrix, TopologyKind};

#[test]
fn custom_topology_file_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let w = MixingMatrix::build(TopologyKind::Ring, 4).unwrap();
    let mut text = String::new();
    for i in 0..4 {
        for j in 0..4 {
            text.push_str(&format!("{:.17} ", w.weight(i, j)));
        }
        text.push('\n');
    }
    let path = dir.path().join("ring4.txt");
    std::fs::write(&path, &text).unwrap();

    let cfg = load_config(&format!(
        "topology.custom_path = \"{}\"\nproblem.kind = \"quadratic\"\nproblem.dim = 4\noptim.method = \"pd_sgdm\"\noptim.eta = 1e-3\noptim.iterations = 20\n",
        path.display()
    ))
    .unwrap();
    let outcome = runner::run(&cfg, None).unwrap();
    assert_eq!(outcome.summary.total_violations, 0);
    // 4 workers on the ring: 8 directed edges per gossip round.
    assert_eq!(outcome.summary.total_comm_bits, 5 * 8 * 64 * 4);

    // An explicitly pinned worker count must match the file.
    let mismatched = load_config(&format!(
        "topology.custom_path = \"{}\"\ntopology.workers = 8\nproblem.kind = \"quadratic\"\noptim.method = \"pd_sgdm\"\n",
        path.display()
    ))
    .unwrap();
    let err = runner::run(&mismatched, None).unwrap_err();
    assert!(err.to_string().contains("4x4"), "{err}");

    // Invalid matrices are rejected on load.
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "0.9 0.2 0.1 0.8").unwrap();
    let cfg = load_config(&format!(
        "topology.custom_path = \"{}\"\nproblem.kind = \"quadratic\"\noptim.method = \"pd_sgdm\"\n",
        bad.display()
    ))
    .unwrap();
    let err = runner::run(&cfg, None).unwrap_err();
    assert!(err.to_string().contains("doubly stochastic"), "{err}");
}

#[test]
fn slightly_asymmetric_matrix_trips_conservation_and_strict_exit() {
    // Row/column sums off by 3e-9 pass the 1e-8 load tolerance but break
    // gossip column-sum conservation beyond its 1e-10 monitor tolerance
    // once the iterates reach O(1) magnitude.
    let dir = tempfile::tempdir().unwrap();
    let eps = 3e-9;
    let skewed = format!("{a} 0.5 0.5 {a}", a = 0.5 + eps);
    let path = dir.path().join("skew.txt");
    std::fs::write(&path, &skewed).unwrap();

    let cfg = load_config(&format!(
        "topology.custom_path = \"{}\"\nproblem.kind = \"quadratic\"\nproblem.dim = 3\noptim.method = \"pd_sgdm\"\noptim.eta = 0.05\noptim.period = 1\noptim.iterations = 50\noptim.strict = true\n",
        path.display()
    ))
    .unwrap();
    let outcome = runner::run(&cfg, None).unwrap();
    assert!(
        outcome.summary.violations.contains_key("gossip_conservation"),
        "violations: {:?}",
        outcome.summary.violations
    );
    assert_eq!(outcome.exit_code(), 1, "strict mode must flip the exit code");

    // The same run without strict mode records the drift but exits 0.
    let lax = load_config(&format!(
        "topology.custom_path = \"{}\"\nproblem.kind = \"quadratic\"\nproblem.dim = 3\noptim.method = \"pd_sgdm\"\noptim.eta = 0.05\noptim.period = 1\noptim.iterations = 50\n",
        path.display()
    ))
    .unwrap();
    let outcome = runner::run(&lax, None).unwrap();
    assert!(outcome.summary.total_violations > 0);
    assert_eq!(outcome.exit_code(), 0);
}

#[test]
fn holdout_fraction_appends_a_metrics_column() {
    let cfg = load_config(
        "topology.kind = \"ring\"\nproblem.kind = \"logistic\"\nproblem.dim = 5\nproblem.samples_per_worker = 16\nproblem.holdout_fraction = 0.25\noptim.method = \"pd_sgdm\"\noptim.eta = 0.01\noptim.iterations = 30\n",
    )
    .unwrap();
    let outcome = runner::run(&cfg, None).unwrap();
    let csv = outcome.metrics_csv();
    let header = csv.lines().next().unwrap();
    assert!(header.ends_with(",holdout_loss"), "{header}");
    let last = csv.lines().last().unwrap();
    let holdout: f64 = last.rsplit(',').next().unwrap().parse().unwrap();
    assert!(holdout.is_finite() && holdout > 0.0);

    // Without holdout the schema stays at the nine mandatory columns.
    let cfg = load_config(
        "topology.kind = \"ring\"\nproblem.kind = \"logistic\"\nproblem.dim = 5\noptim.method = \"pd_sgdm\"\noptim.iterations = 1\noptim.eta = 0.01\n",
    )
    .unwrap();
    let outcome = runner::run(&cfg, None).unwrap();
    assert_eq!(
        outcome.metrics_csv().lines().next().unwrap(),
        decsgd::diagnostics::CSV_HEADER
    );
}

#[test]
fn record_stride_thins_rows_but_keeps_the_final_iterate() {
    let cfg = load_config(
        "record_stride = 10\ntopology.kind = \"ring\"\nproblem.kind = \"quadratic\"\nproblem.dim = 4\noptim.method = \"pd_sgdm\"\noptim.eta = 1e-3\noptim.iterations = 95\n",
    )
    .unwrap();
    let outcome = runner::run(&cfg, None).unwrap();
    let ts: Vec<usize> = outcome.records.iter().map(|r| r.t).collect();
    assert_eq!(ts.first(), Some(&0));
    assert_eq!(ts.last(), Some(&95));
    assert!(ts.contains(&10) && ts.contains(&90));
    assert_eq!(ts.len(), 11);
}

#[test]
fn user_gamma_takes_precedence_over_the_default_formula() {
    let base = "topology.kind = \"ring\"\nproblem.kind = \"quadratic\"\nproblem.dim = 8\noptim.method = \"cpd_sgdm\"\noptim.eta = 1e-3\noptim.iterations = 8\ncompression.kind = \"scaled_sign\"\n";
    let computed = runner::run(&load_config(base).unwrap(), None).unwrap();
    assert!(
        computed.resolved_toml.contains("# computed: default_gamma(rho="),
        "{}",
        computed.resolved_toml
    );

    let pinned = runner::run(
        &load_config(&format!("{base}optim.gamma = 0.4\n")).unwrap(),
        None,
    )
    .unwrap();
    assert!(pinned.resolved_toml.contains("gamma = 0.4  # user"), "{}", pinned.resolved_toml);
}

#[test]
fn every_problem_kind_and_topology_runs_clean() {
    for (problem, dim, eta) in [("quadratic", 6, "1e-3"), ("logistic", 6, "0.01"), ("mlp", 4, "0.02")] {
        for (topology, workers) in [("ring", 8), ("grid2d", 9), ("path", 5), ("complete", 4)] {
            let cfg = load_config(&format!(
                "topology.kind = \"{topology}\"\ntopology.workers = {workers}\nproblem.kind = \"{problem}\"\nproblem.dim = {dim}\nproblem.samples_per_worker = 12\nproblem.heterogeneity = 1.0\noptim.method = \"pd_sgdm\"\noptim.eta = {eta}\noptim.period = 4\noptim.iterations = 60\n",
            ))
            .unwrap();
            let outcome = runner::run(&cfg, None).unwrap();
            assert!(outcome.summary.aborted_at.is_none(), "{problem} on {topology}");
            assert_eq!(
                outcome.summary.total_violations, 0,
                "{problem} on {topology}: {:?}",
                outcome.summary.violations
            );
            // The objective moved.
            let first = outcome.records.first().unwrap().f_bar;
            let last = outcome.records.last().unwrap().f_bar;
            assert!(last < first, "{problem} on {topology}: {first} -> {last}");
        }
    }
}

#[test]
fn record_stride_does_not_perturb_the_trajectory() {
    let text = |stride: usize| {
        format!(
            "record_stride = {stride}\ntopology.kind = \"ring\"\nproblem.kind = \"logistic\"\nproblem.dim = 6\noptim.method = \"pd_sgdm\"\noptim.eta = 0.01\noptim.iterations = 84\n",
        )
    };
    let dense = runner::run(&load_config(&text(1)).unwrap(), None).unwrap();
    let sparse = runner::run(&load_config(&text(7)).unwrap(), None).unwrap();
    for rec in &sparse.records {
        let twin = dense.records.iter().find(|r| r.t == rec.t).unwrap();
        assert_eq!(rec.f_bar, twin.f_bar, "t={}", rec.t);
        assert_eq!(rec.grad_norm_sq, twin.grad_norm_sq);
        assert_eq!(rec.consensus, twin.consensus);
        assert_eq!(rec.comm_bits_cum, twin.comm_bits_cum);
    }
}
