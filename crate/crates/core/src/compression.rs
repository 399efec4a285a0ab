//! Contraction compression operators for gossip payloads.
//!
//! An operator `Q` is a delta-contraction when
//! `||x - Q(x)||^2 <= (1 - delta) ||x||^2` for some `delta` in (0, 1].
//! Each operator here carries the largest `delta` it guarantees plus a
//! model of its encoded wire size, so runs can account communication in
//! bits without actually serializing payloads.
//!
//! `scaled_sign` is the l1-scaled sign operator
//! `Q(x) = (||x||_1 / d) * sign(x)`: raw `sign(x)` is not a contraction,
//! while the scaled form keeps the one-bit-per-coordinate cost and
//! guarantees `delta = 1/d` (with equality only on one-hot inputs; typical
//! inputs contract far better).

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::streams;

/// Operator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompressorKind {
    /// Lossless pass-through, `delta = 1`.
    Identity,
    /// `(||x||_1 / d) * sign(x)`; one sign bit per coordinate plus a scale.
    ScaledSign,
    /// Keep the k largest-magnitude coordinates (ties to the lowest index).
    TopK,
    /// Keep k coordinates drawn uniformly without replacement; contraction
    /// holds in expectation only.
    RandomK,
}

impl CompressorKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "scaled_sign" => Ok(Self::ScaledSign),
            "top_k" => Ok(Self::TopK),
            "random_k" => Ok(Self::RandomK),
            other => Err(Error::Config(format!(
                "unknown compression kind `{other}` (expected identity, scaled_sign, top_k, random_k)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::ScaledSign => "scaled_sign",
            Self::TopK => "top_k",
            Self::RandomK => "random_k",
        }
    }
}

/// A named contraction operator with parameters. Immutable;
/// [`CompressorSpec::compress`] is a pure function of `(spec, x, rng)`.
#[derive(Debug, Clone, Copy)]
pub struct CompressorSpec {
    kind: CompressorKind,
    k: Option<usize>,
}

impl CompressorSpec {
    pub fn identity() -> Self {
        Self { kind: CompressorKind::Identity, k: None }
    }

    pub fn scaled_sign() -> Self {
        Self { kind: CompressorKind::ScaledSign, k: None }
    }

    pub fn top_k(k: usize) -> Self {
        Self { kind: CompressorKind::TopK, k: Some(k) }
    }

    pub fn random_k(k: usize) -> Self {
        Self { kind: CompressorKind::RandomK, k: Some(k) }
    }

    pub fn new(kind: CompressorKind, k: Option<usize>) -> Result<Self> {
        match (kind, k) {
            (CompressorKind::TopK | CompressorKind::RandomK, None) => Err(Error::Config(format!(
                "compression kind `{}` requires `compression.k`",
                kind.name()
            ))),
            (CompressorKind::Identity | CompressorKind::ScaledSign, Some(_)) => Err(Error::Config(
                format!("`compression.k` does not apply to kind `{}`", kind.name()),
            )),
            _ => Ok(Self { kind, k }),
        }
    }

    pub fn kind(&self) -> CompressorKind {
        self.kind
    }

    pub fn k(&self) -> Option<usize> {
        self.k
    }

    /// Whether this operator draws randomness per call.
    pub fn is_randomized(&self) -> bool {
        self.kind == CompressorKind::RandomK
    }

    /// Whether the guaranteed delta holds only in expectation.
    pub fn expectation_only(&self) -> bool {
        self.is_randomized()
    }

    /// Guaranteed contraction parameter for dimension `d`.
    pub fn delta_bound(&self, d: usize) -> Result<f64> {
        self.check_dim(d)?;
        Ok(match self.kind {
            CompressorKind::Identity => 1.0,
            CompressorKind::ScaledSign => 1.0 / d as f64,
            CompressorKind::TopK | CompressorKind::RandomK => {
                self.k.expect("validated") as f64 / d as f64
            }
        })
    }

    /// Encoded size in bits of one compressed message of dimension `d`.
    ///
    /// identity: 64 bits per coordinate. scaled_sign: one sign bit per
    /// coordinate plus a 64-bit scale. top_k: k values plus k indices of
    /// ceil(log2 d) bits. random_k: k values plus a 64-bit seed standing in
    /// for the index set.
    pub fn message_bits(&self, d: usize) -> Result<u64> {
        self.check_dim(d)?;
        let d64 = d as u64;
        Ok(match self.kind {
            CompressorKind::Identity => 64 * d64,
            CompressorKind::ScaledSign => d64 + 64,
            CompressorKind::TopK => {
                let idx_bits = (usize::BITS - (d - 1).leading_zeros()) as u64; // ceil(log2 d), 0 for d=1
                self.k.expect("validated") as u64 * (64 + idx_bits)
            }
            CompressorKind::RandomK => self.k.expect("validated") as u64 * 64 + 64,
        })
    }

    /// Apply the operator. Returns the compressed vector expanded back to a
    /// dense `d`-vector plus the encoded wire size in bits.
    ///
    /// `rng` is consulted only by `random_k`; deterministic operators accept
    /// `None`.
    pub fn compress(
        &self,
        x: &DVector<f64>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(DVector<f64>, u64)> {
        let d = x.len();
        self.check_dim(d)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Compression("non-finite input coordinate".into()));
        }
        let bits = self.message_bits(d)?;
        let q = match self.kind {
            CompressorKind::Identity => x.clone(),
            CompressorKind::ScaledSign => {
                let scale = x.iter().map(|v| v.abs()).sum::<f64>() / d as f64;
                // sign(0) fixed to +1 for determinism.
                DVector::from_iterator(d, x.iter().map(|&v| if v < 0.0 { -scale } else { scale }))
            }
            CompressorKind::TopK => {
                let k = self.k.expect("validated");
                let mut order: Vec<usize> = (0..d).collect();
                // Magnitude descending, ties broken by lowest index.
                order.sort_by(|&a, &b| {
                    x[b].abs()
                        .partial_cmp(&x[a].abs())
                        .expect("finite input")
                        .then(a.cmp(&b))
                });
                let mut q = DVector::zeros(d);
                for &i in &order[..k] {
                    q[i] = x[i];
                }
                q
            }
            CompressorKind::RandomK => {
                let k = self.k.expect("validated");
                let rng = rng.as_mut().ok_or_else(|| {
                    Error::Compression("random_k requires an rng stream".into())
                })?;
                // Partial Fisher-Yates: first k entries are a uniform
                // k-subset of 0..d.
                let mut idx: Vec<usize> = (0..d).collect();
                for i in 0..k {
                    let j = rng.random_range(i..d);
                    idx.swap(i, j);
                }
                let mut q = DVector::zeros(d);
                for &i in &idx[..k] {
                    q[i] = x[i];
                }
                q
            }
        };
        Ok((q, bits))
    }

    /// Empirically check the contraction inequality over `trials` standard
    /// normal vectors plus adversarial shapes (one-hot, constant,
    /// alternating-sign).
    ///
    /// Deterministic operators must satisfy
    /// `max ratio <= 1 - delta_bound + 1e-12`; `random_k` must satisfy it in
    /// expectation, checked at three standard errors around `1 - k/d`.
    pub fn verify_contraction(&self, d: usize, trials: usize, rng_seed: u64) -> Result<ContractionReport> {
        if trials == 0 {
            return Err(Error::Compression("trials must be >= 1".into()));
        }
        self.check_dim(d)?;
        let delta = self.delta_bound(d)?;
        let mut sample_rng = streams::stream(rng_seed, "contraction.samples", 0);
        let mut comp_rng = streams::stream(rng_seed, "contraction.compress", 1);

        let mut inputs: Vec<DVector<f64>> = Vec::with_capacity(trials + 3 * d.min(8) + 2);
        for _ in 0..trials {
            inputs.push(DVector::from_fn(d, |_, _| {
                StandardNormal.sample(&mut sample_rng)
            }));
        }
        // Adversarial shapes. One-hot vectors achieve the worst case for
        // scaled_sign; constants achieve it for top_k-style operators.
        for i in 0..d.min(8) {
            let mut one_hot = DVector::zeros(d);
            one_hot[i] = 1.0;
            inputs.push(one_hot);
        }
        inputs.push(DVector::from_element(d, 1.0));
        inputs.push(DVector::from_fn(d, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 }));

        let mut max_ratio = 0.0f64;
        let mut worst_input = None;
        let mut ratios = Vec::with_capacity(inputs.len());
        for x in &inputs {
            let norm_sq = x.norm_squared();
            if norm_sq == 0.0 {
                continue;
            }
            let (q, _) = self.compress(x, Some(&mut comp_rng))?;
            let ratio = (x - &q).norm_squared() / norm_sq;
            ratios.push(ratio);
            if ratio > max_ratio {
                max_ratio = ratio;
                worst_input = Some(x.clone());
            }
        }
        let n = ratios.len() as f64;
        let mean_ratio = ratios.iter().sum::<f64>() / n;
        let var = ratios.iter().map(|r| (r - mean_ratio).powi(2)).sum::<f64>() / n.max(2.0);
        let sem = (var / n).sqrt();

        let bound = 1.0 - delta;
        let pass = if self.expectation_only() {
            (mean_ratio - bound).abs() <= 3.0 * sem + 1e-12
        } else {
            max_ratio <= bound + 1e-12
        };
        Ok(ContractionReport {
            kind: self.kind,
            delta_bound: delta,
            expectation_only: self.expectation_only(),
            trials: ratios.len(),
            max_ratio,
            mean_ratio,
            sem,
            pass,
            worst_input: worst_input.map(|v| v.as_slice().to_vec()),
        })
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d == 0 {
            return Err(Error::Compression("dimension must be >= 1".into()));
        }
        if let Some(k) = self.k {
            if k == 0 || k > d {
                return Err(Error::Compression(format!(
                    "k = {k} out of range for dimension {d} (need 1 <= k <= d)"
                )));
            }
        }
        Ok(())
    }
}

/// Result of [`CompressorSpec::verify_contraction`].
#[derive(Debug, Clone)]
pub struct ContractionReport {
    pub kind: CompressorKind,
    pub delta_bound: f64,
    /// True when the bound is only guaranteed in expectation (random_k).
    pub expectation_only: bool,
    pub trials: usize,
    /// Worst observed `||x - Q(x)||^2 / ||x||^2`.
    pub max_ratio: f64,
    pub mean_ratio: f64,
    /// Standard error of `mean_ratio`.
    pub sem: f64,
    pub pass: bool,
    /// The input achieving `max_ratio`, kept for failure reports.
    pub worst_input: Option<Vec<f64>>,
}

impl std::fmt::Display for ContractionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: max ratio {:.6e}, mean {:.6e} (sem {:.2e}), bound 1-delta = {:.6e}{} over {} inputs -> {}",
            self.kind.name(),
            self.max_ratio,
            self.mean_ratio,
            self.sem,
            1.0 - self.delta_bound,
            if self.expectation_only { " (expectation only)" } else { "" },
            self.trials,
            if self.pass { "pass" } else { "FAIL" }
        )?;
        if !self.pass {
            if let Some(worst) = &self.worst_input {
                let head: Vec<String> = worst.iter().take(8).map(|v| format!("{v:.4}")).collect();
                write!(f, "; worst input [{}{}]", head.join(", "), if worst.len() > 8 { ", ..." } else { "" })?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    #[test]
    fn identity_is_lossless() {
        let (q, bits) = CompressorSpec::identity().compress(&vec2(3.0, 4.0), None).unwrap();
        assert_eq!(q, vec2(3.0, 4.0));
        assert_eq!(bits, 128);
    }

    #[test]
    fn top_k_keeps_largest_magnitude() {
        // Residual 9 <= (1 - 1/2) * 25.
        let (q, bits) = CompressorSpec::top_k(1).compress(&vec2(3.0, 4.0), None).unwrap();
        assert_eq!(q, vec2(0.0, 4.0));
        let residual = (vec2(3.0, 4.0) - q).norm_squared();
        assert_eq!(residual, 9.0);
        assert!(residual <= 0.5 * 25.0);
        assert_eq!(bits, 65); // 64 + ceil(log2 2)
    }

    #[test]
    fn scaled_sign_hits_its_equality_case() {
        // q = (7/2) * sign(x); residual 0.5 = (1 - ||x||_1^2/(d ||x||^2)) * ||x||^2.
        let x = vec2(3.0, 4.0);
        let (q, bits) = CompressorSpec::scaled_sign().compress(&x, None).unwrap();
        assert_eq!(q, vec2(3.5, 3.5));
        let residual = (x.clone() - q).norm_squared();
        assert!((residual - 0.5).abs() < 1e-12);
        let predicted = (1.0 - 49.0 / (2.0 * 25.0)) * 25.0;
        assert!((residual - predicted).abs() < 1e-12);
        assert_eq!(bits, 2 + 64);
    }

    #[test]
    fn scaled_sign_d1_is_exact() {
        let report = CompressorSpec::scaled_sign().verify_contraction(1, 10, 3).unwrap();
        assert!(report.pass);
        assert!(report.max_ratio < 1e-15, "{report}");
    }

    #[test]
    fn identity_report_has_zero_ratio() {
        let report = CompressorSpec::identity().verify_contraction(10, 100, 0).unwrap();
        assert!(report.pass);
        assert_eq!(report.max_ratio, 0.0);
    }

    #[test]
    fn top_k_keeps_at_least_its_energy_share() {
        // Brute-force oracle over the sampled vectors: keeping the k largest
        // of d coordinates retains at least k/d of the energy.
        let report = CompressorSpec::top_k(5).verify_contraction(10, 1000, 1).unwrap();
        assert!(report.pass, "{report}");
        assert!(report.max_ratio <= 0.5 + 1e-12);
    }

    #[test]
    fn random_k_contracts_in_expectation() {
        let report = CompressorSpec::random_k(3).verify_contraction(10, 4000, 2).unwrap();
        assert!(report.expectation_only);
        assert!(report.pass, "{report}");
        assert!((report.mean_ratio - 0.7).abs() < 0.02);
    }

    #[test]
    fn parameter_and_input_errors() {
        assert!(CompressorSpec::top_k(3).compress(&vec2(1.0, 2.0), None).is_err());
        assert!(CompressorSpec::top_k(0).compress(&vec2(1.0, 2.0), None).is_err());
        assert!(CompressorSpec::identity()
            .compress(&vec2(f64::NAN, 0.0), None)
            .is_err());
        assert!(CompressorSpec::random_k(1).compress(&vec2(1.0, 2.0), None).is_err());
        assert!(CompressorSpec::new(CompressorKind::TopK, None).is_err());
        assert!(CompressorSpec::new(CompressorKind::Identity, Some(2)).is_err());
    }

    #[test]
    fn message_bits_model() {
        let d = 1000;
        assert_eq!(CompressorSpec::identity().message_bits(d).unwrap(), 64_000);
        assert_eq!(CompressorSpec::scaled_sign().message_bits(d).unwrap(), 1064);
        assert_eq!(CompressorSpec::top_k(10).message_bits(d).unwrap(), 10 * (64 + 10));
        assert_eq!(CompressorSpec::random_k(10).message_bits(d).unwrap(), 704);
        assert_eq!(CompressorSpec::top_k(1).message_bits(1).unwrap(), 64);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn zero_maps_to_zero_and_deterministic_ops_contract(
            xs in proptest::collection::vec(-50.0f64..50.0, 1..40),
            c in 0.01f64..100.0,
        ) {
            let d = xs.len();
            let x = DVector::from_vec(xs);
            let zero = DVector::zeros(d);
            let specs = [
                CompressorSpec::identity(),
                CompressorSpec::scaled_sign(),
                CompressorSpec::top_k(1 + d / 2),
            ];
            for spec in specs {
                let (qz, _) = spec.compress(&zero, None).unwrap();
                prop_assert_eq!(&qz, &zero);

                let (q, _) = spec.compress(&x, None).unwrap();
                let bound = (1.0 - spec.delta_bound(d).unwrap()) * x.norm_squared();
                prop_assert!((&x - &q).norm_squared() <= bound + 1e-9 * (1.0 + x.norm_squared()));

                // Positive homogeneity: Q(c x) = c Q(x) for c > 0.
                if spec.kind() != CompressorKind::Identity {
                    let (qc, _) = spec.compress(&(&x * c), None).unwrap();
                    let diff = (&qc - &q * c).amax();
                    prop_assert!(diff <= 1e-9 * (1.0 + qc.amax()), "homogeneity violated: {}", diff);
                }
            }
            let mut rng = crate::streams::stream(0, "test.randk", 0);
            let spec = CompressorSpec::random_k(1 + d / 2);
            let (qz, _) = spec.compress(&zero, Some(&mut rng)).unwrap();
            prop_assert_eq!(&qz, &zero);
        }

        #[test]
        fn bits_are_deterministic_in_spec_and_dim(d in 1usize..2000, k in 1usize..50) {
            let k = k.min(d);
            for spec in [CompressorSpec::identity(), CompressorSpec::scaled_sign(), CompressorSpec::top_k(k), CompressorSpec::random_k(k)] {
                prop_assert_eq!(spec.message_bits(d).unwrap(), spec.message_bits(d).unwrap());
            }
        }
    }
}
