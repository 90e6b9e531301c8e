//! Synthetic clustered-feature experiment: balanced and single-class
//! batches, additive-noise corruption, ROC/AUC across detectors and
//! one-axis sensitivity sweeps.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{fit_detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::numerics::{squared_euclidean, Matrix, RngSeed, SampleSet};
use crate::statistic::{default_alpha, KernelChoice, StatisticKind, StatisticSpec};

/// Corruption noise standard deviation per severity, in units of `spread`.
pub const SEVERITY_NOISE: [f64; 4] = [0.0, 0.5, 1.0, 2.0];

/// Minimum center spacing in units of `spread`.
pub const MIN_CENTER_SPACING: f64 = 4.0;

const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub classes: usize,
    pub dim: usize,
    /// Per-coordinate standard deviation of points around their center.
    pub spread: f64,
    /// Standard deviation of the center coordinates before any rescaling.
    pub center_scale: f64,
    pub seed: RngSeed,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 32,
            spread: 0.5,
            center_scale: 1.0,
            seed: RngSeed(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub classes: usize,
    pub dim: usize,
    pub centers: Matrix,
    pub spread: f64,
    pub seed: RngSeed,
}

pub fn make_world(cfg: &WorldConfig) -> Result<SyntheticWorld> {
    if cfg.classes < 2 {
        return Err(Error::InvalidParameter {
            name: "classes",
            reason: format!("need at least 2, got {}", cfg.classes),
        });
    }
    if cfg.dim == 0 {
        return Err(Error::InvalidParameter {
            name: "dim",
            reason: "must be positive".into(),
        });
    }
    for (name, v) in [("spread", cfg.spread), ("center_scale", cfg.center_scale)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter {
                name,
                reason: format!("must be finite and positive, got {v}"),
            });
        }
    }
    let mut rng = cfg.seed.stream(0);
    let mut z: Vec<f64> = (0..cfg.classes * cfg.dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut min_dist = f64::INFINITY;
    for a in 0..cfg.classes {
        for b in a + 1..cfg.classes {
            let d = squared_euclidean(&z[a * cfg.dim..(a + 1) * cfg.dim], &z[b * cfg.dim..(b + 1) * cfg.dim]).sqrt();
            min_dist = min_dist.min(d);
        }
    }
    if !(min_dist > 0.0) {
        return Err(Error::InvalidShape("coincident class centers".into()));
    }
    let scale = cfg.center_scale.max(MIN_CENTER_SPACING * cfg.spread / min_dist);
    z.iter_mut().for_each(|v| *v *= scale);
    Ok(SyntheticWorld {
        classes: cfg.classes,
        dim: cfg.dim,
        centers: Matrix::from_vec(cfg.classes, cfg.dim, z)?,
        spread: cfg.spread,
        seed: cfg.seed,
    })
}

impl SyntheticWorld {
    pub fn center(&self, class: usize) -> &[f64] {
        self.centers.row(class)
    }

    pub fn nearest_center(&self, x: &[f64]) -> usize {
        (0..self.classes)
            .map(|c| (c, squared_euclidean(self.center(c), x)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(c, _)| c)
            .unwrap_or(0)
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.classes {
            return Err(Error::UnknownClass {
                class,
                classes: self.classes,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DrawMode {
    /// Class chosen uniformly at random for every point.
    Balanced,
    /// All points from one class.
    Imbalanced(usize),
}

/// Draws points with their class labels.
pub fn draw_labeled(world: &SyntheticWorld, size: usize, mode: DrawMode, seed: RngSeed) -> Result<(SampleSet, Vec<usize>)> {
    if size == 0 {
        return Err(Error::Empty("batch"));
    }
    if let DrawMode::Imbalanced(c) = mode {
        world.check_class(c)?;
    }
    let mut rng = seed.stream(0);
    let mut data = Vec::with_capacity(size * world.dim);
    let mut labels = Vec::with_capacity(size);
    for _ in 0..size {
        let c = match mode {
            DrawMode::Balanced => rng.random_range(0..world.classes),
            DrawMode::Imbalanced(c) => c,
        };
        labels.push(c);
        for &mu in world.center(c) {
            data.push(mu + world.spread * rng.sample::<f64, _>(StandardNormal));
        }
    }
    Ok((SampleSet::new(Matrix::from_vec(size, world.dim, data)?)?, labels))
}

pub fn draw_batch(world: &SyntheticWorld, size: usize, mode: DrawMode, seed: RngSeed) -> Result<SampleSet> {
    draw_labeled(world, size, mode, seed).map(|(s, _)| s)
}

pub fn check_severity(severity: u8) -> Result<()> {
    if severity as usize >= SEVERITY_NOISE.len() {
        return Err(Error::InvalidParameter {
            name: "severity",
            reason: format!("must be 0..=3, got {severity}"),
        });
    }
    Ok(())
}

/// Adds isotropic Gaussian noise of standard deviation
/// `SEVERITY_NOISE[severity] * world.spread`.
pub fn corrupt(world: &SyntheticWorld, batch: &SampleSet, severity: u8, seed: RngSeed) -> Result<SampleSet> {
    check_severity(severity)?;
    if severity == 0 {
        return Ok(batch.clone());
    }
    let sd = SEVERITY_NOISE[severity as usize] * world.spread;
    let mut rng = seed.stream(0);
    let data: Vec<f64> = batch
        .points()
        .data()
        .iter()
        .map(|v| v + sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    SampleSet::new(Matrix::from_vec(batch.n(), batch.d(), data)?)
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting
/// one half.
pub fn roc_auc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::Empty("scores"));
    }
    if positive.iter().chain(negative).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    let (mut wins, mut losses) = (0u64, 0u64);
    for &a in positive {
        for &b in negative {
            if a > b {
                wins += 1;
            } else if a < b {
                losses += 1;
            }
        }
    }
    let pairs = (positive.len() * negative.len()) as u64;
    let ties = pairs - wins - losses;
    let twice = 2.0 * pairs as f64;
    // computing the smaller side directly makes auc(a, b) + auc(b, a) == 1 exactly
    if wins >= losses {
        Ok(1.0 - (2 * losses + ties) as f64 / twice)
    } else {
        Ok((2 * wins + ties) as f64 / twice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve from (0, 0) to (1, 1), one point per distinct score.
pub fn roc_curve(positive: &[f64], negative: &[f64]) -> Vec<RocPoint> {
    let mut thresholds: Vec<f64> = positive.iter().chain(negative).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let rate = |v: &[f64], t: f64| v.iter().filter(|&&s| s >= t).count() as f64 / v.len().max(1) as f64;
    let mut out = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    out.extend(thresholds.iter().map(|&t| RocPoint {
        fpr: rate(negative, t),
        tpr: rate(positive, t),
    }));
    if out.last() != Some(&RocPoint { fpr: 1.0, tpr: 1.0 }) {
        out.push(RocPoint { fpr: 1.0, tpr: 1.0 });
    }
    out
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.fpr, p.tpr));
    }
    out
}

/// Drift score used for ROC ranking.
pub fn drift_score(p_value: f64) -> f64 {
    -p_value.max(f64::MIN_POSITIVE).ln()
}

/// One configured detector; unset `alpha`/`p` fall back to the experiment's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorEntry {
    pub kind: StatisticKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default)]
    pub kernel: KernelChoice,
}

impl From<StatisticKind> for DetectorEntry {
    fn from(kind: StatisticKind) -> Self {
        Self {
            kind,
            alpha: None,
            p: None,
            kernel: KernelChoice::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub n_reference: usize,
    pub n_test: usize,
    /// Overrides the match-fraction rule for every partial detector.
    pub alpha: Option<f64>,
    pub match_fraction: f64,
    pub p: f64,
    pub corruption_severity: u8,
    pub draws_per_condition: usize,
    pub permutations: usize,
    pub detectors: Vec<DetectorEntry>,
    pub seed: RngSeed,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            n_reference: 1000,
            n_test: 50,
            alpha: None,
            match_fraction: 1.0,
            p: 2.0,
            corruption_severity: 2,
            draws_per_condition: 100,
            permutations: 300,
            detectors: [
                StatisticKind::Wasserstein,
                StatisticKind::PartialWasserstein,
                StatisticKind::Mmd,
                StatisticKind::PartialMmdTwoStage,
            ]
            .into_iter()
            .map(DetectorEntry::from)
            .collect(),
            seed: RngSeed(0),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_reference", self.n_reference),
            ("n_test", self.n_test),
            ("draws_per_condition", self.draws_per_condition),
        ] {
            if v == 0 {
                return Err(Error::InvalidParameter {
                    name,
                    reason: "must be positive".into(),
                });
            }
        }
        if self.detectors.is_empty() {
            return Err(Error::Empty("detectors"));
        }
        if !(self.match_fraction > 0.0 && self.match_fraction.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "match_fraction",
                reason: format!("must be finite and positive, got {}", self.match_fraction),
            });
        }
        check_severity(self.corruption_severity)?;
        for spec in self.specs()? {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn specs(&self) -> Result<Vec<StatisticSpec>> {
        let alpha = self
            .alpha
            .unwrap_or_else(|| default_alpha(self.n_test, self.n_reference, self.match_fraction));
        self.detectors
            .iter()
            .map(|e| {
                StatisticSpec::new(e.kind, e.alpha.unwrap_or(alpha), e.p.unwrap_or(self.p))
                    .map(|s| s.with_kernel(e.kernel))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    BalancedClean,
    ImbalancedClean,
    BalancedCorrupted,
    ImbalancedCorrupted,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::BalancedClean,
        Condition::ImbalancedClean,
        Condition::BalancedCorrupted,
        Condition::ImbalancedCorrupted,
    ];

    pub fn is_corrupted(self) -> bool {
        matches!(self, Condition::BalancedCorrupted | Condition::ImbalancedCorrupted)
    }

    pub fn is_balanced(self) -> bool {
        matches!(self, Condition::BalancedClean | Condition::BalancedCorrupted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: Condition,
    pub p_values: Vec<f64>,
    pub mean_p_value: f64,
    /// Counts over ten equal-width p-value bins on [0, 1].
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorResult {
    pub name: String,
    pub spec: StatisticSpec,
    pub empirical_only: bool,
    pub auc: f64,
    pub roc: Vec<RocPoint>,
    pub conditions: Vec<ConditionResult>,
}

impl DetectorResult {
    pub fn condition(&self, c: Condition) -> &ConditionResult {
        self.conditions
            .iter()
            .find(|r| r.condition == c)
            .expect("every condition is reported")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub detectors: Vec<DetectorResult>,
}

impl ExperimentReport {
    pub fn detector(&self, kind: StatisticKind) -> Option<&DetectorResult> {
        self.detectors.iter().find(|d| d.spec.kind == kind)
    }
}

/// Wall-clock timings, kept apart from the report so that the report is
/// reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorRuntime {
    pub name: String,
    pub calibration_seconds: f64,
    pub mean_score_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub runtimes: Vec<DetectorRuntime>,
}

fn histogram(p_values: &[f64]) -> Vec<usize> {
    let mut h = vec![0; HISTOGRAM_BINS];
    for &p in p_values {
        let bin = ((p * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        h[bin] += 1;
    }
    h
}

fn condition_batches(cfg: &ExperimentConfig, world: &SyntheticWorld, condition: Condition, index: u64) -> Result<Vec<SampleSet>> {
    (0..cfg.draws_per_condition)
        .map(|i| {
            let tag = (index << 32) | i as u64;
            let mode = if condition.is_balanced() {
                DrawMode::Balanced
            } else {
                DrawMode::Imbalanced(i % world.classes)
            };
            let batch = draw_batch(world, cfg.n_test, mode, cfg.seed.derive(tag))?;
            if condition.is_corrupted() {
                corrupt(world, &batch, cfg.corruption_severity, cfg.seed.derive(tag ^ (1 << 63)))
            } else {
                Ok(batch)
            }
        })
        .collect()
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let world = make_world(&cfg.world)?;
    let reference = draw_batch(&world, cfg.n_reference, DrawMode::Balanced, cfg.seed.derive(u64::MAX))?;
    let batches: Vec<(Condition, Vec<SampleSet>)> = Condition::ALL
        .iter()
        .enumerate()
        .map(|(k, &c)| condition_batches(cfg, &world, c, k as u64 + 1).map(|b| (c, b)))
        .collect::<Result<_>>()?;

    let mut detectors = Vec::new();
    let mut runtimes = Vec::new();
    for (idx, spec) in cfg.specs()?.into_iter().enumerate() {
        let start = Instant::now();
        let det_cfg = DetectorConfig::new(spec, cfg.n_test, cfg.seed.derive(idx as u64)).with_permutations(cfg.permutations);
        let det = fit_detector(det_cfg, reference.clone())?;
        let calibration_seconds = start.elapsed().as_secs_f64();

        let start = Instant::now();
        let mut conditions = Vec::new();
        for (c, bs) in &batches {
            let p_values = bs
                .par_iter()
                .map(|b| det.score_batch(b).map(|r| r.p_value))
                .collect::<Result<Vec<f64>>>()?;
            conditions.push(ConditionResult {
                condition: *c,
                mean_p_value: p_values.iter().sum::<f64>() / p_values.len() as f64,
                histogram: histogram(&p_values),
                p_values,
            });
        }
        let n_scored = (batches.len() * cfg.draws_per_condition) as f64;
        let mean_score_seconds = start.elapsed().as_secs_f64() / n_scored;

        let scores = |corrupted: bool| -> Vec<f64> {
            conditions
                .iter()
                .filter(|r| r.condition.is_corrupted() == corrupted)
                .flat_map(|r| r.p_values.iter().map(|&p| drift_score(p)))
                .collect()
        };
        let (pos, neg) = (scores(true), scores(false));
        let name = det.statistic().kind.name().to_string();
        detectors.push(DetectorResult {
            name: name.clone(),
            spec: det.statistic().spec(),
            empirical_only: det.is_empirical_only(),
            auc: roc_auc(&pos, &neg)?,
            roc: roc_curve(&pos, &neg),
            conditions,
        });
        runtimes.push(DetectorRuntime {
            name,
            calibration_seconds,
            mean_score_seconds,
        });
    }
    Ok(ExperimentOutcome {
        report: ExperimentReport {
            config: cfg.clone(),
            detectors,
        },
        runtimes,
    })
}

/// One sensitivity axis, varied with everything else at the base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "axis", content = "values")]
pub enum SweepAxis {
    Severity(Vec<u8>),
    /// Test size with the partial fraction following the match-fraction rule.
    TestSize(Vec<usize>),
    /// Match fraction at fixed test size.
    MatchFraction(Vec<f64>),
    Exponent(Vec<f64>),
}

impl SweepAxis {
    fn settings(&self) -> Vec<f64> {
        match self {
            SweepAxis::Severity(v) => v.iter().map(|&s| s as f64).collect(),
            SweepAxis::TestSize(v) => v.iter().map(|&s| s as f64).collect(),
            SweepAxis::MatchFraction(v) | SweepAxis::Exponent(v) => v.clone(),
        }
    }

    fn apply(&self, base: &ExperimentConfig, k: usize) -> ExperimentConfig {
        let mut cfg = base.clone();
        match self {
            SweepAxis::Severity(v) => cfg.corruption_severity = v[k],
            SweepAxis::TestSize(v) => {
                cfg.n_test = v[k];
                cfg.alpha = None;
            }
            SweepAxis::MatchFraction(v) => {
                cfg.match_fraction = v[k];
                cfg.alpha = None;
            }
            SweepAxis::Exponent(v) => cfg.p = v[k],
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default)]
    pub base: ExperimentConfig,
    pub sweep: SweepAxis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorAuc {
    pub name: String,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub aucs: Vec<DetectorAuc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub sweep: SweepAxis,
    pub points: Vec<SweepPoint>,
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    let values = cfg.sweep.settings();
    if values.is_empty() {
        return Err(Error::Empty("sweep values"));
    }
    let points = values
        .iter()
        .enumerate()
        .map(|(k, &value)| {
            let out = run_experiment(&cfg.sweep.apply(&cfg.base, k))?;
            Ok(SweepPoint {
                value,
                aucs: out
                    .report
                    .detectors
                    .into_iter()
                    .map(|d| DetectorAuc { name: d.name, auc: d.auc })
                    .collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(SweepReport {
        sweep: cfg.sweep.clone(),
        points,
    })
}
