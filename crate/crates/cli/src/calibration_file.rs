use anyhow::{bail, Context, Result};
use driftbridge::calibration::{FitKind, NullFit, NullSamples};
use driftbridge::detector::{Detector, DetectorConfig};
use driftbridge::mmd::{KernelFamily, KernelSpec};
use driftbridge::partial_mmd::DEFAULT_ADHOC_ITERATIONS;
use driftbridge::statistic::{KernelChoice, StatisticKind, StatisticSpec};
use driftbridge::{RngSeed, SampleSet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecRecord {
    pub kind: StatisticKind,
    pub alpha: f64,
    pub p: f64,
    pub kernel_family: Option<KernelFamily>,
    pub lengthscale: Option<f64>,
}

impl SpecRecord {
    pub fn from_spec(spec: &StatisticSpec) -> Self {
        let (kernel_family, lengthscale) = match spec.kernel {
            KernelChoice::Fixed(k) if spec.kind.uses_kernel() => (Some(k.family), Some(k.lengthscale)),
            _ => (None, None),
        };
        Self {
            kind: spec.kind,
            alpha: spec.alpha,
            p: spec.p,
            kernel_family,
            lengthscale,
        }
    }

    pub fn to_spec(&self) -> Result<StatisticSpec> {
        let spec = StatisticSpec::new(self.kind, self.alpha, self.p)?;
        Ok(match (self.kernel_family, self.lengthscale) {
            (Some(f), Some(l)) => spec.with_kernel(KernelChoice::Fixed(KernelSpec::new(f, l)?)),
            (None, None) if !self.kind.uses_kernel() => spec,
            _ => bail!("{} needs both kernel_family and lengthscale", self.kind),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sizes {
    pub n_ref: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub version: u32,
    pub spec: SpecRecord,
    pub sizes: Sizes,
    pub permutations: usize,
    pub seed: u64,
    pub dummy_multiplier: f64,
    pub null_samples: Vec<f64>,
    pub fit: NullFit,
    pub reference_digest: String,
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl CalibrationFile {
    pub fn from_detector(det: &Detector, reference_bytes: &[u8]) -> Result<Self> {
        let fit = *det
            .null_fit()
            .context("null distribution has zero variance; no parametric fit possible")?;
        let null = det.null_samples();
        Ok(Self {
            version: VERSION,
            spec: SpecRecord::from_spec(&det.statistic().spec()),
            sizes: Sizes {
                n_ref: null.n_ref,
                n_test: null.n_test,
            },
            permutations: null.len(),
            seed: null.seed.0,
            dummy_multiplier: det.config().dummy_multiplier,
            null_samples: null.values.clone(),
            fit,
            reference_digest: digest(reference_bytes),
        })
    }

    /// Rebuilds the detector, checking the reference digest and that the
    /// stored fit matches a refit of the stored null samples.
    pub fn detector(&self, reference: SampleSet, reference_bytes: &[u8], p_threshold: f64) -> Result<Detector> {
        if self.version != VERSION {
            bail!("unsupported calibration version {}", self.version);
        }
        let got = digest(reference_bytes);
        if got != self.reference_digest {
            bail!(
                "reference digest mismatch: calibration expects {}, file has {got}",
                self.reference_digest
            );
        }
        let spec = self.spec.to_spec()?;
        let seed = RngSeed(self.seed);
        let config = DetectorConfig {
            spec,
            n_test: self.sizes.n_test,
            permutations: self.permutations,
            p_threshold,
            dummy_multiplier: self.dummy_multiplier,
            seed,
            fit_kind: match self.fit {
                NullFit::ShiftedGamma(_) => FitKind::ShiftedGamma,
                NullFit::Normal { .. } => FitKind::Normal,
            },
            adhoc_iterations: DEFAULT_ADHOC_ITERATIONS,
        };
        let samples = NullSamples {
            values: self.null_samples.clone(),
            spec,
            n_ref: self.sizes.n_ref,
            n_test: self.sizes.n_test,
            seed,
        };
        let det = Detector::from_parts(config, reference, samples)?;
        if det.null_fit() != Some(&self.fit) {
            bail!("stored fit is inconsistent with the stored null samples");
        }
        Ok(det)
    }
}
