//! Fit-once, score-many drift detection.
//!
//! Fitting bootstraps the null on the reference sample itself (pseudo
//! reference of `reference.n - n_test` points against pseudo batches of
//! `n_test`); scoring compares the full reference with a batch.

use serde::{Deserialize, Serialize};

use crate::attribution::{coupling_attribution, witness_values, TestAttribution};
use crate::calibration::{bootstrap_resolved, empirical_p_value_values, FitKind, NullFit, NullSamples, MIN_PERMUTATIONS};
use crate::error::{Error, Result};
use crate::mmd::uniform;
use crate::numerics::{pairwise_sq_distances, Matrix, RngSeed, SampleSet};
use crate::ot::{partial_wasserstein_from_sq, DEFAULT_DUMMY_MULTIPLIER};
use crate::partial_mmd::DEFAULT_ADHOC_ITERATIONS;
use crate::statistic::{ResolvedStatistic, StatisticKind, StatisticSpec};

pub const DEFAULT_PERMUTATIONS: usize = 1000;
pub const DEFAULT_P_THRESHOLD: f64 = 0.01;

/// Seed tag for solver randomness while scoring.
const SCORE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub spec: StatisticSpec,
    pub n_test: usize,
    pub permutations: usize,
    pub p_threshold: f64,
    pub dummy_multiplier: f64,
    pub seed: RngSeed,
    #[serde(default)]
    pub fit_kind: FitKind,
    #[serde(default = "default_adhoc_iterations")]
    pub adhoc_iterations: usize,
}

fn default_adhoc_iterations() -> usize {
    DEFAULT_ADHOC_ITERATIONS
}

impl DetectorConfig {
    pub fn new(spec: StatisticSpec, n_test: usize, seed: RngSeed) -> Self {
        Self {
            spec,
            n_test,
            permutations: DEFAULT_PERMUTATIONS,
            p_threshold: DEFAULT_P_THRESHOLD,
            dummy_multiplier: DEFAULT_DUMMY_MULTIPLIER,
            seed,
            fit_kind: FitKind::default(),
            adhoc_iterations: DEFAULT_ADHOC_ITERATIONS,
        }
    }

    pub fn with_permutations(mut self, permutations: usize) -> Self {
        self.permutations = permutations;
        self
    }

    pub fn with_threshold(mut self, p_threshold: f64) -> Self {
        self.p_threshold = p_threshold;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.n_test == 0 {
            return Err(Error::InvalidParameter {
                name: "n_test",
                reason: "must be positive".into(),
            });
        }
        if self.permutations < MIN_PERMUTATIONS {
            return Err(Error::InvalidParameter {
                name: "permutations",
                reason: format!("need at least {MIN_PERMUTATIONS}, got {}", self.permutations),
            });
        }
        if !(self.p_threshold > 0.0 && self.p_threshold < 1.0) {
            return Err(Error::InvalidParameter {
                name: "p_threshold",
                reason: format!("must lie in (0, 1), got {}", self.p_threshold),
            });
        }
        if !(self.dummy_multiplier > 1.0 && self.dummy_multiplier.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "dummy_multiplier",
                reason: format!("must be finite and > 1, got {}", self.dummy_multiplier),
            });
        }
        Ok(())
    }

    fn resolve(&self, spec: &StatisticSpec, reference: &SampleSet) -> Result<ResolvedStatistic> {
        let mut stat = ResolvedStatistic::resolve(spec, reference)?;
        stat.dummy_multiplier = self.dummy_multiplier;
        stat.adhoc_iterations = self.adhoc_iterations;
        Ok(stat)
    }
}

/// A calibrated detector. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    config: DetectorConfig,
    reference: SampleSet,
    statistic: ResolvedStatistic,
    null_fit: Option<NullFit>,
    null_samples: NullSamples,
    gram: Option<Matrix>,
}

pub fn fit_detector(config: DetectorConfig, reference: SampleSet) -> Result<Detector> {
    config.validate()?;
    if reference.n() < config.n_test + 1 {
        return Err(Error::PoolTooSmall {
            needed: config.n_test + 1,
            available: reference.n(),
        });
    }
    let statistic = config.resolve(&config.spec, &reference)?;
    let null_samples = bootstrap_resolved(
        &reference,
        &statistic,
        reference.n() - config.n_test,
        config.n_test,
        config.permutations,
        config.seed,
    )?;
    Detector::assemble(config, reference, statistic, null_samples)
}

impl Detector {
    /// Rebuilds a detector from stored null samples, refitting the null.
    pub fn from_parts(config: DetectorConfig, reference: SampleSet, null_samples: NullSamples) -> Result<Self> {
        config.validate()?;
        if null_samples.n_ref + null_samples.n_test > reference.n() {
            return Err(Error::PoolTooSmall {
                needed: null_samples.n_ref + null_samples.n_test,
                available: reference.n(),
            });
        }
        let statistic = config.resolve(&null_samples.spec, &reference)?;
        Self::assemble(config, reference, statistic, null_samples)
    }

    fn assemble(
        config: DetectorConfig,
        reference: SampleSet,
        statistic: ResolvedStatistic,
        null_samples: NullSamples,
    ) -> Result<Self> {
        let null_fit = match NullFit::fit(config.fit_kind, &null_samples.values) {
            Ok(f) => Some(f),
            Err(Error::ZeroVariance) => None,
            Err(e) => return Err(e),
        };
        let gram = statistic.reference_gram(&reference)?;
        Ok(Self {
            config,
            reference,
            statistic,
            null_fit,
            null_samples,
            gram,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn reference(&self) -> &SampleSet {
        &self.reference
    }

    pub fn statistic(&self) -> &ResolvedStatistic {
        &self.statistic
    }

    /// `None` when the null has zero variance; p-values are then empirical.
    pub fn null_fit(&self) -> Option<&NullFit> {
        self.null_fit.as_ref()
    }

    pub fn null_samples(&self) -> &NullSamples {
        &self.null_samples
    }

    pub fn is_empirical_only(&self) -> bool {
        self.null_fit.is_none()
    }

    pub fn score_batch(&self, batch: &SampleSet) -> Result<DetectionReport> {
        self.score(batch, false)
    }

    pub fn score_batch_with_attribution(&self, batch: &SampleSet) -> Result<DetectionReport> {
        self.score(batch, true)
    }

    fn score(&self, batch: &SampleSet, attribute: bool) -> Result<DetectionReport> {
        self.reference.ensure_same_dim(batch)?;
        let stat = &self.statistic;
        let sq_rt = pairwise_sq_distances(&self.reference, batch)?;
        let sq_tt = if stat.kind.uses_kernel() {
            pairwise_sq_distances(batch, batch)?
        } else {
            Matrix::zeros(0, 0)
        };
        let eval = stat.evaluate_blocks(self.gram.as_ref(), &sq_rt, &sq_tt, self.config.seed.derive(SCORE_STREAM))?;

        let empirical_p_value = empirical_p_value_values(&self.null_samples.values, eval.value);
        let p_value = match &self.null_fit {
            Some(fit) => fit.p_value(eval.value),
            None => empirical_p_value,
        };
        let warning = (batch.n() != self.null_samples.n_test).then(|| {
            format!(
                "batch has {} points but the null was calibrated for {}",
                batch.n(),
                self.null_samples.n_test
            )
        });
        let attribution = if attribute {
            let ot = match (eval.ot, stat.kind) {
                (Some(ot), _) => Some(ot),
                (None, StatisticKind::Wasserstein) => {
                    Some(partial_wasserstein_from_sq(&sq_rt, 1.0, stat.p, stat.dummy_multiplier)?)
                }
                _ => None,
            };
            let witness = match (&eval.weights, stat.kernel) {
                (Some(w), Some(k)) => {
                    let v = uniform(batch.n());
                    Some(Witness {
                        reference: witness_values(&self.reference, batch, w, &v, &k, &self.reference)?,
                        test: witness_values(&self.reference, batch, w, &v, &k, batch)?,
                    })
                }
                _ => None,
            };
            Some(Attribution {
                transport_distance: ot.as_ref().map(|o| o.distance),
                dummy_distance: ot.as_ref().map(|o| o.dummy_distance),
                matches: ot.as_ref().map(coupling_attribution),
                reference_weights: eval.weights.clone(),
                witness,
            })
        } else {
            None
        };

        Ok(DetectionReport {
            statistic: eval.value,
            p_value,
            empirical_p_value,
            drift_detected: p_value < self.config.p_threshold,
            p_threshold: self.config.p_threshold,
            empirical_only: self.null_fit.is_none(),
            spec: stat.spec(),
            n_reference: self.reference.n(),
            n_batch: batch.n(),
            calibration_n_ref: self.null_samples.n_ref,
            calibration_n_test: self.null_samples.n_test,
            permutations: self.null_samples.len(),
            warning,
            attribution,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub reference: Vec<f64>,
    pub test: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    /// Partial (or, for the full statistic, plain) transport distance behind `matches`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transport_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dummy_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matches: Option<Vec<TestAttribution>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub statistic: f64,
    pub p_value: f64,
    pub empirical_p_value: f64,
    pub drift_detected: bool,
    pub p_threshold: f64,
    pub empirical_only: bool,
    pub spec: StatisticSpec,
    pub n_reference: usize,
    pub n_batch: usize,
    pub calibration_n_ref: usize,
    pub calibration_n_test: usize,
    pub permutations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attribution: Option<Attribution>,
}
