//! Records → pooled histogram → axis moments → radial moments → sweep.

use serde::{Deserialize, Serialize};

use crate::criterion::{sweep_cutoff, SweepResult};
use crate::error::{Error, Result};
use crate::model::{pool_angles, validate_records, AngleSet, AxisMoments, DetectionParams, PoolWeighting, PooledHistogram, PulseRecord};
use crate::moments::{axis_moments_factorial, axis_moments_from_marginal_with, radial_from_axis, MomentRoute};
use crate::reconstruct::{DeconvolutionSettings, Reconstructor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub detection: DetectionParams,
    pub angles: AngleSet,
    pub weighting: PoolWeighting,
    pub route: MomentRoute,
    pub deconvolution: DeconvolutionSettings,
    /// Largest cutoff order N_c of the sweep (even).
    pub n_cutoff_max: usize,
    /// Verdict threshold in bootstrap standard deviations.
    pub z: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            detection: DetectionParams::default(),
            angles: AngleSet::default(),
            weighting: PoolWeighting::default(),
            route: MomentRoute::default(),
            deconvolution: DeconvolutionSettings::default(),
            n_cutoff_max: 16,
            z: 2.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.detection.validate()?;
        self.deconvolution.validate()?;
        if self.n_cutoff_max < 2 || !self.n_cutoff_max.is_multiple_of(2) {
            return Err(Error::param("n_cutoff_max", format!("{} is not an even integer ≥ 2", self.n_cutoff_max)));
        }
        if !(self.z > 0.0 && self.z.is_finite()) {
            return Err(Error::param("z", format!("{} is not positive", self.z)));
        }
        Ok(())
    }
}

/// Validates records against the angle set and pools them.
pub fn pool_records(records: &[PulseRecord], config: &PipelineConfig) -> Result<PooledHistogram> {
    let per_angle = validate_records(records, &config.angles)?;
    pool_angles(&per_angle, config.weighting, Some(&config.angles))
}

/// Grid half-width factor for moments up to order k_max on the
/// deconvolution route: the default ±6 pilot std clips the high-order tails.
pub fn deconvolution_width_factor(settings: &DeconvolutionSettings, k_max: usize) -> f64 {
    settings.width_factor.max(6.0 + (2.0 * k_max as f64).sqrt())
}

/// Axis-moment estimator for one route. For the deconvolution route the
/// reconstruction set-up is built once from a reference histogram and
/// reused, e.g. for bootstrap halves of the same data.
pub struct MomentEstimator {
    route: MomentRoute,
    params: DetectionParams,
    k_max: usize,
    reconstructor: Option<Reconstructor>,
}

impl MomentEstimator {
    pub fn new(config: &PipelineConfig, route: MomentRoute, k_max: usize, reference: &PooledHistogram) -> Result<Self> {
        let reconstructor = match route {
            MomentRoute::Factorial => None,
            MomentRoute::Deconvolution => {
                let settings = DeconvolutionSettings {
                    width_factor: deconvolution_width_factor(&config.deconvolution, k_max),
                    ..config.deconvolution.clone()
                };
                let grid = settings.grid_for(reference, &config.detection)?;
                Some(Reconstructor::new(config.detection, settings, grid, reference.support_max())?)
            }
        };
        Ok(MomentEstimator { route, params: config.detection, k_max, reconstructor })
    }

    pub fn route(&self) -> MomentRoute {
        self.route
    }

    pub fn estimate(&self, pooled: &PooledHistogram) -> Result<AxisMoments> {
        match &self.reconstructor {
            None => axis_moments_factorial(pooled, &self.params, self.k_max),
            Some(engine) => {
                let marginal = engine.reconstruct(pooled)?;
                // The grid was widened for k_max already. What remains in the
                // outer band is deconvolution residue, which the M^{2k}
                // weight inflates without biasing the moments.
                axis_moments_from_marginal_with(&marginal, self.k_max, None)
            }
        }
    }
}

/// Axis moments by the requested route.
pub fn axis_moments(pooled: &PooledHistogram, config: &PipelineConfig, route: MomentRoute, k_max: usize) -> Result<AxisMoments> {
    MomentEstimator::new(config, route, k_max, pooled)?.estimate(pooled)
}

/// Sweep of a pooled histogram without bootstrap errors.
pub fn sweep_histogram(pooled: &PooledHistogram, config: &PipelineConfig) -> Result<SweepResult> {
    config.validate()?;
    let axis = axis_moments(pooled, config, config.route, config.n_cutoff_max)?;
    sweep_cutoff(&radial_from_axis(&axis), config.n_cutoff_max, config.z)
}
