//! The six drift statistics and a single evaluation path shared by the
//! bootstrap and the detector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmd::{median_lengthscale, uniform, KernelFamily, KernelSpec, MmdParts};
use crate::numerics::{check_exponent, pairwise_sq_distances, Matrix, RngSeed, SampleSet};
use crate::ot::{check_alpha, partial_wasserstein_from_sq, wasserstein_from_sq, PartialOtResult, DEFAULT_DUMMY_MULTIPLIER};
use crate::partial_mmd::{
    partial_mmd_adhoc, partial_mmd_qp, quad_form, two_stage_from_parts, DEFAULT_ADHOC_ITERATIONS, DEFAULT_QP_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatisticKind {
    Wasserstein,
    PartialWasserstein,
    Mmd,
    PartialMmdTwoStage,
    PartialMmdAdhoc,
    PartialMmdQp,
}

impl StatisticKind {
    pub const ALL: [StatisticKind; 6] = [
        StatisticKind::Wasserstein,
        StatisticKind::PartialWasserstein,
        StatisticKind::Mmd,
        StatisticKind::PartialMmdTwoStage,
        StatisticKind::PartialMmdAdhoc,
        StatisticKind::PartialMmdQp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StatisticKind::Wasserstein => "wasserstein",
            StatisticKind::PartialWasserstein => "partial-wasserstein",
            StatisticKind::Mmd => "mmd",
            StatisticKind::PartialMmdTwoStage => "partial-mmd-two-stage",
            StatisticKind::PartialMmdAdhoc => "partial-mmd-adhoc",
            StatisticKind::PartialMmdQp => "partial-mmd-qp",
        }
    }

    pub fn uses_kernel(self) -> bool {
        !matches!(self, StatisticKind::Wasserstein | StatisticKind::PartialWasserstein)
    }

    /// Whether `alpha` affects the statistic.
    pub fn is_partial(self) -> bool {
        !matches!(self, StatisticKind::Wasserstein | StatisticKind::Mmd)
    }
}

impl std::fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StatisticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StatisticKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter {
                name: "kind",
                reason: format!("unknown statistic `{s}`"),
            })
    }
}

/// Kernel choice: fixed, or resolved from the reference sample by the
/// median heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum KernelChoice {
    Auto { family: KernelFamily },
    Fixed(KernelSpec),
}

impl Default for KernelChoice {
    fn default() -> Self {
        KernelChoice::Auto {
            family: KernelFamily::SquaredExponential,
        }
    }
}

impl KernelChoice {
    pub fn resolve(&self, reference: &SampleSet) -> Result<KernelSpec> {
        match *self {
            KernelChoice::Fixed(k) => Ok(k),
            KernelChoice::Auto { family } => KernelSpec::new(family, median_lengthscale(reference)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatisticSpec {
    pub kind: StatisticKind,
    pub alpha: f64,
    pub p: f64,
    pub kernel: KernelChoice,
}

impl StatisticSpec {
    pub fn new(kind: StatisticKind, alpha: f64, p: f64) -> Result<Self> {
        let spec = Self {
            kind,
            alpha,
            p,
            kernel: KernelChoice::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_kernel(mut self, kernel: KernelChoice) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        check_exponent(self.p)
    }
}

/// `match_fraction · n_test / n_reference`, capped at 1.
pub fn default_alpha(n_test: usize, n_reference: usize, match_fraction: f64) -> f64 {
    (match_fraction * n_test as f64 / n_reference as f64).min(1.0)
}

/// A statistic with its kernel resolved and solver knobs fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedStatistic {
    pub kind: StatisticKind,
    pub alpha: f64,
    pub p: f64,
    pub kernel: Option<KernelSpec>,
    pub dummy_multiplier: f64,
    pub adhoc_iterations: usize,
    pub qp_tol: f64,
}

impl ResolvedStatistic {
    pub fn resolve(spec: &StatisticSpec, reference: &SampleSet) -> Result<Self> {
        spec.validate()?;
        let kernel = if spec.kind.uses_kernel() {
            Some(spec.kernel.resolve(reference)?)
        } else {
            None
        };
        Ok(Self {
            kind: spec.kind,
            alpha: spec.alpha,
            p: spec.p,
            kernel,
            dummy_multiplier: DEFAULT_DUMMY_MULTIPLIER,
            adhoc_iterations: DEFAULT_ADHOC_ITERATIONS,
            qp_tol: DEFAULT_QP_TOL,
        })
    }

    /// The spec with the kernel pinned to its resolved value.
    pub fn spec(&self) -> StatisticSpec {
        StatisticSpec {
            kind: self.kind,
            alpha: self.alpha,
            p: self.p,
            kernel: match self.kernel {
                Some(k) => KernelChoice::Fixed(k),
                None => KernelChoice::default(),
            },
        }
    }

    fn kernel(&self) -> Result<&KernelSpec> {
        self.kernel.as_ref().ok_or(Error::InvalidParameter {
            name: "kernel",
            reason: format!("{} needs a kernel", self.kind),
        })
    }

    /// Reference-side kernel block when the statistic needs one.
    pub fn reference_gram(&self, reference: &SampleSet) -> Result<Option<Matrix>> {
        match self.kernel {
            Some(k) if self.kind.uses_kernel() => Ok(Some(k.apply_sq(&pairwise_sq_distances(reference, reference)?))),
            _ => Ok(None),
        }
    }

    pub fn evaluate(&self, reference: &SampleSet, test: &SampleSet, seed: RngSeed) -> Result<Evaluation> {
        reference.ensure_same_dim(test)?;
        let gram = self.reference_gram(reference)?;
        let sq_rt = pairwise_sq_distances(reference, test)?;
        let sq_tt = if self.kind.uses_kernel() {
            pairwise_sq_distances(test, test)?
        } else {
            Matrix::zeros(0, 0)
        };
        self.evaluate_blocks(gram.as_ref(), &sq_rt, &sq_tt, seed)
    }

    /// Evaluates from the reference kernel block `kx` (n × n, kernel kinds
    /// only), reference-test squared distances (n × m) and test-test squared
    /// distances (m × m, kernel kinds only).
    pub(crate) fn evaluate_blocks(
        &self,
        kx: Option<&Matrix>,
        sq_rt: &Matrix,
        sq_tt: &Matrix,
        seed: RngSeed,
    ) -> Result<Evaluation> {
        match self.kind {
            StatisticKind::Wasserstein => Ok(Evaluation::value(wasserstein_from_sq(sq_rt, self.p)?)),
            StatisticKind::PartialWasserstein => {
                let ot = partial_wasserstein_from_sq(sq_rt, self.alpha, self.p, self.dummy_multiplier)?;
                Ok(Evaluation {
                    value: ot.distance,
                    ot: Some(ot),
                    weights: None,
                })
            }
            _ => {
                let k = self.kernel()?;
                let kx = kx.ok_or(Error::InvalidParameter {
                    name: "kx",
                    reason: "reference kernel block missing".into(),
                })?;
                let parts = MmdParts::from_matrices(kx.clone(), k.apply_sq(sq_tt), k.apply_sq(&sq_rt.transpose()))?;
                self.evaluate_mmd(&parts, sq_rt, seed)
            }
        }
    }

    fn evaluate_mmd(&self, parts: &MmdParts, sq_rt: &Matrix, seed: RngSeed) -> Result<Evaluation> {
        let (value, weights, ot) = match self.kind {
            StatisticKind::Mmd => {
                let w = uniform(parts.n());
                (quad_form(parts, &w, &uniform(parts.m())), w, None)
            }
            StatisticKind::PartialMmdTwoStage => {
                let (r, ot) = two_stage_from_parts(parts, sq_rt, self.alpha, self.p, self.dummy_multiplier)?;
                (r.value, r.weights.w, Some(ot))
            }
            StatisticKind::PartialMmdAdhoc => {
                let r = partial_mmd_adhoc(parts, self.alpha, self.adhoc_iterations, seed)?;
                (r.value, r.weights.w, None)
            }
            StatisticKind::PartialMmdQp => {
                let r = match partial_mmd_qp(parts, self.alpha, self.qp_tol) {
                    Ok(r) => (r.value, r.weights.w),
                    // best-so-far is still feasible and close to optimal
                    Err(Error::NotConverged {
                        best_value,
                        best_weights,
                        ..
                    }) => (best_value, best_weights),
                    Err(e) => return Err(e),
                };
                (r.0, r.1, None)
            }
            StatisticKind::Wasserstein | StatisticKind::PartialWasserstein => unreachable!(),
        };
        Ok(Evaluation {
            value: value.max(0.0),
            ot,
            weights: Some(weights),
        })
    }
}

/// A statistic value plus the intermediate objects attribution needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub ot: Option<PartialOtResult>,
    /// Reference weights of MMD-type statistics.
    pub weights: Option<Vec<f64>>,
}

impl Evaluation {
    fn value(value: f64) -> Self {
        Self {
            value,
            ot: None,
            weights: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmd::mmd_sq;
    use crate::ot::{partial_wasserstein, wasserstein};

    fn scalars(v: &[f64]) -> SampleSet {
        SampleSet::from_scalars(v).unwrap()
    }

    #[test]
    fn kind_names_round_trip() {
        for k in StatisticKind::ALL {
            assert_eq!(k.name().parse::<StatisticKind>().unwrap(), k);
            assert_eq!(k.to_string(), k.name());
        }
        assert!("nope".parse::<StatisticKind>().is_err());
    }

    #[test]
    fn evaluation_matches_direct_functions() {
        let x = scalars(&[0.0, 1.0, 2.5, 4.0, -1.0]);
        let y = scalars(&[0.2, 3.9]);
        let seed = RngSeed(0);
        let k = KernelSpec::squared_exponential(1.5).unwrap();

        let spec = StatisticSpec::new(StatisticKind::Wasserstein, 1.0, 2.0).unwrap();
        let r = ResolvedStatistic::resolve(&spec, &x).unwrap();
        let v = r.evaluate(&x, &y, seed).unwrap().value;
        assert!((v - wasserstein(&x, &y, 2.0).unwrap()).abs() < 1e-12);

        let spec = StatisticSpec::new(StatisticKind::PartialWasserstein, 0.4, 1.0).unwrap();
        let r = ResolvedStatistic::resolve(&spec, &x).unwrap();
        let v = r.evaluate(&x, &y, seed).unwrap().value;
        assert!((v - partial_wasserstein(&x, &y, 0.4, 1.0).unwrap().distance).abs() < 1e-12);

        let spec = StatisticSpec::new(StatisticKind::Mmd, 1.0, 2.0)
            .unwrap()
            .with_kernel(KernelChoice::Fixed(k));
        let r = ResolvedStatistic::resolve(&spec, &x).unwrap();
        let v = r.evaluate(&x, &y, seed).unwrap().value;
        assert!((v - mmd_sq(&x, &y, &k).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn auto_kernel_uses_reference_median() {
        let x = scalars(&[0.0, 1.0, 3.0]);
        let spec = StatisticSpec::new(StatisticKind::Mmd, 1.0, 2.0).unwrap();
        let r = ResolvedStatistic::resolve(&spec, &x).unwrap();
        assert_eq!(r.kernel.unwrap().lengthscale, 2.0);
        let w = StatisticSpec::new(StatisticKind::Wasserstein, 1.0, 2.0).unwrap();
        assert!(ResolvedStatistic::resolve(&w, &x).unwrap().kernel.is_none());
    }

    #[test]
    fn alpha_one_partial_kinds_agree_with_full() {
        let x = scalars(&[0.0, 1.0, 2.5, 4.0]);
        let y = scalars(&[0.5, 3.0, 3.5]);
        let mmd = {
            let spec = StatisticSpec::new(StatisticKind::Mmd, 1.0, 2.0).unwrap();
            ResolvedStatistic::resolve(&spec, &x).unwrap().evaluate(&x, &y, RngSeed(1)).unwrap().value
        };
        for kind in [
            StatisticKind::PartialMmdTwoStage,
            StatisticKind::PartialMmdAdhoc,
            StatisticKind::PartialMmdQp,
        ] {
            let spec = StatisticSpec::new(kind, 1.0, 2.0).unwrap();
            let v = ResolvedStatistic::resolve(&spec, &x).unwrap().evaluate(&x, &y, RngSeed(1)).unwrap().value;
            assert!((v - mmd).abs() < 1e-9, "{kind}: {v} vs {mmd}");
        }
    }

    #[test]
    fn default_alpha_rule() {
        assert_eq!(default_alpha(50, 1000, 1.0), 0.05);
        assert_eq!(default_alpha(50, 1000, 2.0), 0.1);
        assert_eq!(default_alpha(50, 10, 1.0), 1.0);
    }
}
