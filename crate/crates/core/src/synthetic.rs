//! Rotationally symmetric test states in the (M_y, M_z) plane with closed-form
//! marginals and moments.
//!
//! `SingleExcitation` is the first-excited harmonic-oscillator profile: its 2D
//! quasi-density (r²/σ² − 1)·e^{−r²/2σ²}/(2πσ²) is negative near the origin,
//! yet its axis marginal (M²/σ²)·φ_σ(M) is a genuine probability density.
//! It is the stand-in for the heralded state; mixing it with the Gaussian
//! reference of the same σ models imperfect heralding.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::{covering_n_max, predict_histogram};
use crate::error::{Error, Result};
use crate::model::{AxisMoments, DetectionParams, MarginalDistribution, PooledHistogram, RadialMoments};
use crate::moments::radial_from_axis;
use crate::special::{binomial, odd_double_factorial};

/// Highest moment order the closed forms are offered for.
pub const MAX_MOMENT_ORDER: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticState {
    /// Isotropic Gaussian with axis standard deviation `sigma` (μ_B).
    GaussianReference { sigma: f64 },
    /// All probability on the circle of radius `radius`.
    Ring { radius: f64 },
    /// Flat density on the disc of radius `radius`.
    UniformDisc { radius: f64 },
    /// First-excited profile whose ground state has axis std `sigma`.
    SingleExcitation { sigma: f64 },
    Mixture { components: Vec<MixtureComponent> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub state: SyntheticState,
}

fn gaussian_pdf(m: f64, sigma: f64) -> f64 {
    (-(m * m) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt())
}

impl SyntheticState {
    /// The pure single-excitation state mixed with weight `1 − p` of the
    /// Gaussian reference of the same width.
    pub fn heralded(sigma: f64, p: f64) -> Self {
        SyntheticState::Mixture {
            components: vec![
                MixtureComponent { weight: p, state: SyntheticState::SingleExcitation { sigma } },
                MixtureComponent {
                    weight: 1.0 - p,
                    state: SyntheticState::GaussianReference { sigma },
                },
            ],
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SyntheticState::GaussianReference { .. } => "gaussian_reference",
            SyntheticState::Ring { .. } => "ring",
            SyntheticState::UniformDisc { .. } => "uniform_disc",
            SyntheticState::SingleExcitation { .. } => "single_excitation",
            SyntheticState::Mixture { .. } => "mixture",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("{v} is not positive")))
            }
        };
        match self {
            SyntheticState::GaussianReference { sigma } | SyntheticState::SingleExcitation { sigma } => {
                positive("sigma", *sigma)
            }
            SyntheticState::Ring { radius } | SyntheticState::UniformDisc { radius } => {
                positive("radius", *radius)
            }
            SyntheticState::Mixture { components } => {
                if components.is_empty() {
                    return Err(Error::EmptyInput("mixture components"));
                }
                if components.iter().any(|c| !(c.weight >= 0.0)) {
                    return Err(Error::param("weight", "mixture weights must be non-negative"));
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::param("weight", format!("mixture weights sum to {total}")));
                }
                components.iter().try_for_each(|c| c.state.validate())
            }
        }
    }

    fn components(&self) -> Vec<(f64, &SyntheticState)> {
        match self {
            SyntheticState::Mixture { components } => components
                .iter()
                .flat_map(|c| {
                    c.state
                        .components()
                        .into_iter()
                        .map(move |(w, s)| (c.weight * w, s))
                })
                .collect(),
            other => vec![(1.0, other)],
        }
    }

    /// Radially symmetric 2D (quasi-)density at radius r. The ring's delta
    /// shell is omitted: it is zero away from r = R.
    pub fn density_2d(&self, r: f64) -> f64 {
        self.components()
            .into_iter()
            .map(|(w, s)| {
                w * match *s {
                    SyntheticState::GaussianReference { sigma } => {
                        (-(r * r) / (2.0 * sigma * sigma)).exp() / (2.0 * PI * sigma * sigma)
                    }
                    SyntheticState::SingleExcitation { sigma } => {
                        let s2 = sigma * sigma;
                        (r * r / s2 - 1.0) * (-(r * r) / (2.0 * s2)).exp() / (2.0 * PI * s2)
                    }
                    SyntheticState::UniformDisc { radius } => {
                        if r < radius {
                            1.0 / (PI * radius * radius)
                        } else {
                            0.0
                        }
                    }
                    SyntheticState::Ring { .. } => 0.0,
                    SyntheticState::Mixture { .. } => unreachable!("components are flattened"),
                }
            })
            .sum()
    }

    /// Whether a non-negative 2D density exists, i.e. whether pulses can be
    /// sampled from a classical picture of the state.
    pub fn is_sampleable(&self) -> bool {
        let parts = self.components();
        if parts
            .iter()
            .all(|(_, s)| !matches!(s, SyntheticState::SingleExcitation { .. }))
        {
            return true;
        }
        let reach = 12.0 * self.axis_rms().max(self.support_radius().unwrap_or(0.0));
        let peak = self.density_2d(0.0).abs().max(1e-300);
        (0..=20_000)
            .map(|i| reach * i as f64 / 20_000.0)
            .all(|r| self.density_2d(r) >= -1e-14 * peak)
    }

    fn support_radius(&self) -> Option<f64> {
        self.components()
            .iter()
            .filter_map(|(_, s)| match s {
                SyntheticState::Ring { radius } | SyntheticState::UniformDisc { radius } => Some(*radius),
                _ => None,
            })
            .reduce(f64::max)
    }

    /// √⟨M²⟩ along any axis.
    pub fn axis_rms(&self) -> f64 {
        self.exact_axis_moments(1).map(|m| m.get(1).sqrt()).unwrap_or(0.0)
    }

    /// Closed-form axis moments ⟨M^{2k}⟩, k = 1..=k_max (k_max ≤ 16).
    pub fn exact_axis_moments(&self, k_max: usize) -> Result<AxisMoments> {
        if k_max == 0 || k_max > MAX_MOMENT_ORDER {
            return Err(Error::param("k_max", format!("{k_max} is outside 1..={MAX_MOMENT_ORDER}")));
        }
        let values = (1..=k_max as u64)
            .map(|k| {
                self.components()
                    .into_iter()
                    .map(|(w, s)| w * component_axis_moment(s, k))
                    .sum()
            })
            .collect();
        AxisMoments::new(values)
    }

    /// Radial moments ⟨M_ρ^{2k}⟩ from the closed-form axis moments.
    pub fn exact_radial_moments(&self, k_max: usize) -> Result<RadialMoments> {
        Ok(radial_from_axis(&self.exact_axis_moments(k_max)?))
    }

    /// A grid that resolves every component and covers its tails.
    pub fn default_grid(&self) -> (f64, usize) {
        let mut step = f64::INFINITY;
        let mut reach: f64 = 0.0;
        for (_, s) in self.components() {
            match *s {
                SyntheticState::GaussianReference { sigma } | SyntheticState::SingleExcitation { sigma } => {
                    step = step.min(sigma / 64.0);
                    reach = reach.max(16.0 * sigma);
                }
                SyntheticState::Ring { radius } | SyntheticState::UniformDisc { radius } => {
                    step = step.min(radius / 32768.0);
                    reach = reach.max(1.02 * radius);
                }
                SyntheticState::Mixture { .. } => unreachable!(),
            }
        }
        (step, (reach / step).ceil() as usize + 1)
    }

    /// Axis marginal on the grid M_i = i·step, i < len.
    ///
    /// Smooth kinds are sampled pointwise; the finite-support kinds (ring,
    /// disc) store exact cell averages over [M_i − step/2, M_i + step/2].
    pub fn exact_marginal(&self, step: f64, len: usize) -> Result<MarginalDistribution> {
        self.validate()?;
        let density = (0..len)
            .map(|i| {
                let m = i as f64 * step;
                self.components()
                    .into_iter()
                    .map(|(w, s)| w * component_axis_density(s, m, step))
                    .sum()
            })
            .collect();
        MarginalDistribution::from_axis_density(step, density)
    }

    /// One draw of the magnetization along the axis at angle `beta`. The
    /// states are rotationally symmetric, so `beta` does not change the law.
    pub fn sample_axis<R: Rng + ?Sized>(&self, _beta: f64, rng: &mut R) -> Result<f64> {
        if !self.is_sampleable() {
            return Err(Error::NotSampleable { kind: self.kind_name().to_string() });
        }
        Ok(self.draw(rng))
    }

    pub(crate) fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            SyntheticState::GaussianReference { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            }
            SyntheticState::Ring { radius } => radius * (2.0 * PI * rng.random::<f64>()).cos(),
            SyntheticState::UniformDisc { radius } => {
                let r = radius * rng.random::<f64>().sqrt();
                r * (2.0 * PI * rng.random::<f64>()).cos()
            }
            SyntheticState::SingleExcitation { sigma } => {
                // |M|/σ is chi-distributed with three degrees of freedom.
                let chi2: f64 = (0..3)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        z * z
                    })
                    .sum();
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * sigma * chi2.sqrt()
            }
            SyntheticState::Mixture { components } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for c in components {
                    acc += c.weight;
                    if u < acc {
                        return c.state.draw(rng);
                    }
                }
                components.last().expect("validated mixture").state.draw(rng)
            }
        }
    }

    /// Exact Poisson-mixture photon histogram of the state's marginal.
    pub fn exact_pooled_histogram(&self, params: &DetectionParams, n_max: Option<u64>) -> Result<PooledHistogram> {
        let (step, len) = self.default_grid();
        let marginal = self.exact_marginal(step, len)?;
        let n_max = n_max.unwrap_or_else(|| covering_n_max(&marginal, params));
        predict_histogram(&marginal, params, Some(n_max), 1e-9)?.into_pooled()
    }
}

fn component_axis_moment(state: &SyntheticState, k: u64) -> f64 {
    match *state {
        SyntheticState::GaussianReference { sigma } => {
            odd_double_factorial(k) as f64 * sigma.powi(2 * k as i32)
        }
        SyntheticState::SingleExcitation { sigma } => {
            odd_double_factorial(k + 1) as f64 * sigma.powi(2 * k as i32)
        }
        // Radial moment R^{2k}, mapped to the axis by C(2k,k)/4^k.
        SyntheticState::Ring { radius } => {
            radius.powi(2 * k as i32) * binomial(2 * k, k) as f64 / 4f64.powi(k as i32)
        }
        // Radial moment R^{2k}/(k+1).
        SyntheticState::UniformDisc { radius } => {
            radius.powi(2 * k as i32) * binomial(2 * k, k) as f64
                / (4f64.powi(k as i32) * (k + 1) as f64)
        }
        SyntheticState::Mixture { .. } => unreachable!("components are flattened"),
    }
}

fn component_axis_density(state: &SyntheticState, m: f64, step: f64) -> f64 {
    let cell = |cdf: &dyn Fn(f64) -> f64| (cdf(m + 0.5 * step) - cdf(m - 0.5 * step)) / step;
    match *state {
        SyntheticState::GaussianReference { sigma } => gaussian_pdf(m, sigma),
        SyntheticState::SingleExcitation { sigma } => (m * m) / (sigma * sigma) * gaussian_pdf(m, sigma),
        SyntheticState::Ring { radius } => cell(&|x: f64| (x / radius).clamp(-1.0, 1.0).asin() / PI),
        SyntheticState::UniformDisc { radius } => cell(&|x: f64| {
            let x = x.clamp(-radius, radius);
            let r2 = radius * radius;
            (x * (r2 - x * x).max(0.0).sqrt() + r2 * (x / radius).asin()) / (PI * r2)
        }),
        SyntheticState::Mixture { .. } => unreachable!("components are flattened"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::axis_moments_from_marginal;
    use crate::rng::substream;

    #[test]
    fn gaussian_marginal_variance() {
        let s = SyntheticState::GaussianReference { sigma: 3.0 };
        let (step, len) = s.default_grid();
        let m = s.exact_marginal(step, len).unwrap();
        assert!((m.normalization() - 1.0).abs() < 1e-12);
        let var = m.integrate(|x| x * x);
        assert!((var - 9.0).abs() < 1e-10);
    }

    #[test]
    fn ring_second_moment_from_marginal() {
        // Direct 1D oracle: M = R cos θ, ⟨M²⟩ = R²/2.
        let r = 2.0;
        let s = SyntheticState::Ring { radius: r };
        let (step, len) = s.default_grid();
        let m = s.exact_marginal(step, len).unwrap();
        assert!((m.normalization() - 1.0).abs() < 1e-12);
        let e = m.integrate(|x| x * x) - r * r / 2.0;
        assert!(e.abs() < 1e-6, "{e:e}");
        assert!((s.exact_axis_moments(1).unwrap().get(1) - r * r / 2.0).abs() < 1e-15);
    }

    #[test]
    fn single_excitation_natural_units() {
        let s = SyntheticState::SingleExcitation { sigma: 0.5f64.sqrt() };
        let ax = s.exact_axis_moments(3).unwrap();
        assert!((ax.get(1) - 1.5).abs() < 1e-14);
        assert!((ax.get(2) - 3.75).abs() < 1e-14);
        assert!((ax.get(3) - 105.0 / 8.0).abs() < 1e-13);
        let rad = s.exact_radial_moments(3).unwrap();
        assert!((rad.get(1) - 3.0).abs() < 1e-14);
        assert!((rad.get(2) - 10.0).abs() < 1e-13);
        assert!((rad.get(3) - 42.0).abs() < 1e-12);
        let (step, len) = s.default_grid();
        let m = s.exact_marginal(step, len).unwrap();
        assert!((m.integrate(|x| x * x) - 1.5).abs() < 1e-10);
    }

    #[test]
    fn closed_form_spot_values() {
        let ring = SyntheticState::Ring { radius: 3.0 };
        assert!((ring.exact_radial_moments(4).unwrap().get(4) - 3f64.powi(8)).abs() < 1e-9);
        let g = SyntheticState::GaussianReference { sigma: 1.0 };
        assert_eq!(g.exact_axis_moments(3).unwrap().get(3), 15.0);
        let disc = SyntheticState::UniformDisc { radius: 1.0 };
        assert!((disc.exact_radial_moments(2).unwrap().get(2) - 1.0 / 3.0).abs() < 1e-15);
        assert!(g.exact_axis_moments(17).is_err());
    }

    #[test]
    fn smooth_marginal_moments_match_closed_forms() {
        for s in [
            SyntheticState::GaussianReference { sigma: 1.7 },
            SyntheticState::SingleExcitation { sigma: 0.9 },
            SyntheticState::heralded(1.3, 0.6),
        ] {
            let (step, len) = s.default_grid();
            let m = s.exact_marginal(step, len).unwrap();
            let quad = axis_moments_from_marginal(&m, 8).unwrap();
            let exact = s.exact_axis_moments(8).unwrap();
            for k in 1..=8 {
                let rel = (quad.get(k) / exact.get(k) - 1.0).abs();
                assert!(rel < 1e-8, "{} k={k} rel={rel:e}", s.kind_name());
            }
        }
    }

    #[test]
    fn finite_support_marginal_moments_match_to_grid_resolution() {
        for s in [SyntheticState::Ring { radius: 2.0 }, SyntheticState::UniformDisc { radius: 1.5 }] {
            let (step, len) = s.default_grid();
            let m = s.exact_marginal(step, len).unwrap();
            let quad = axis_moments_from_marginal(&m, 8).unwrap();
            let exact = s.exact_axis_moments(8).unwrap();
            for k in 1..=8 {
                let rel = (quad.get(k) / exact.get(k) - 1.0).abs();
                assert!(rel < 1e-5, "{} k={k} rel={rel:e}", s.kind_name());
            }
        }
    }

    #[test]
    fn sampleability_tracks_negativity() {
        assert!(SyntheticState::GaussianReference { sigma: 1.0 }.is_sampleable());
        assert!(SyntheticState::Ring { radius: 1.0 }.is_sampleable());
        assert!(!SyntheticState::SingleExcitation { sigma: 1.0 }.is_sampleable());
        // Same-width mixture is non-negative exactly up to weight 1/2.
        assert!(SyntheticState::heralded(1.0, 0.5).is_sampleable());
        assert!(!SyntheticState::heralded(1.0, 0.51).is_sampleable());
    }

    #[test]
    fn sampling_contracts() {
        let mut rng = substream(2, 0);
        let ring = SyntheticState::Ring { radius: 3.0 };
        for _ in 0..10_000 {
            let m = ring.sample_axis(0.0, &mut rng).unwrap();
            assert!(m.abs() <= 3.0);
        }
        let e = SyntheticState::SingleExcitation { sigma: 1.0 };
        assert!(matches!(e.sample_axis(0.0, &mut rng), Err(Error::NotSampleable { .. })));
    }

    #[test]
    fn gaussian_sampler_variance() {
        let sigma = 2.0;
        let s = SyntheticState::GaussianReference { sigma };
        let mut rng = substream(8, 1);
        let n = 1_000_000;
        let var = (0..n)
            .map(|_| s.sample_axis(0.0, &mut rng).unwrap().powi(2))
            .sum::<f64>()
            / n as f64;
        // Var of M² is 2σ⁴, so the 3σ bound on the mean is 3·√(2/n)·σ².
        assert!((var - sigma * sigma).abs() < 3.0 * (2.0 / n as f64).sqrt() * sigma * sigma);
    }

    #[test]
    fn mixture_validation() {
        let bad = SyntheticState::Mixture {
            components: vec![MixtureComponent {
                weight: 0.7,
                state: SyntheticState::Ring { radius: 1.0 },
            }],
        };
        assert!(bad.validate().is_err());
        assert!(SyntheticState::heralded(1.0, 0.3).validate().is_ok());
    }

    #[test]
    fn exact_histogram_mean_identity() {
        // E[n] = λ·⟨M²⟩ = 8.64e-3 · 1500 = 12.96
        let params = DetectionParams::default();
        let s = SyntheticState::GaussianReference { sigma: 1500f64.sqrt() };
        let g = s.exact_pooled_histogram(&params, None).unwrap();
        assert!((g.mean() - 12.96).abs() < 1e-6);
    }

    #[test]
    fn all_mass_at_origin_gives_no_clicks() {
        let params = DetectionParams::default();
        let s = SyntheticState::Ring { radius: 1e-6 };
        let g = s.exact_pooled_histogram(&params, None).unwrap();
        assert!((g.prob(0) - 1.0).abs() < 1e-12);
    }
}
