//! Forward model of the Faraday-rotation detection channel.
//!
//! For a fixed magnetization M along the measured axis the detected photon
//! number is Poisson with mean χ = λ·M², λ = q·n_in·φ². A distribution of
//! magnetizations turns the photon histogram into a Poisson mixture over
//! the marginal F̄(M²).

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{AngleSet, DetectionParams, MarginalDistribution, PooledHistogram, PulseRecord};
use crate::rng::{pulse_stream, substream};
use crate::special::ln_factorial;
use crate::synthetic::SyntheticState;

/// Mass the default truncation may leave beyond n_max.
pub const DEFAULT_TAIL_MASS: f64 = 1e-9;

/// Predicted photon-number distribution up to a truncation point.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelPrediction {
    pub probs: Vec<f64>,
    /// Probability assigned to n > n_max.
    pub truncation_mass: f64,
}

impl ChannelPrediction {
    pub fn n_max(&self) -> u64 {
        self.probs.len() as u64 - 1
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    pub fn factorial_moment(&self, k: usize) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .skip(k)
            .map(|(n, p)| p * (0..k).map(|i| (n - i) as f64).product::<f64>())
            .sum()
    }

    /// Renormalizes the truncated prediction into a pooled histogram.
    pub fn into_pooled(self) -> Result<PooledHistogram> {
        PooledHistogram::from_weights(self.probs, None)
    }
}

/// Mean detected photon number χ = λ·M² for a squared magnetization `m_sq`.
pub fn mean_detected(m_sq: f64, params: &DetectionParams) -> Result<f64> {
    if !(m_sq >= 0.0) {
        return Err(Error::param("m_sq", format!("{m_sq} is negative")));
    }
    Ok(params.lambda() * m_sq)
}

/// ln of the Poisson probability e^{−χ}χⁿ/n!.
pub fn ln_poisson_pmf(n: u64, chi: f64) -> f64 {
    debug_assert!(chi >= 0.0);
    if chi == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -chi + n as f64 * chi.ln() - ln_factorial(n)
}

/// Poisson probability of detecting `n` photons at mean `chi`, evaluated in
/// log space so large n neither overflows nor underflows prematurely.
pub fn poisson_pmf(n: u64, chi: f64) -> f64 {
    ln_poisson_pmf(n, chi).exp()
}

fn mixture_probs(marginal: &MarginalDistribution, lambda: f64, ns: std::ops::Range<u64>) -> Vec<f64> {
    let nodes: Vec<(f64, f64)> = marginal
        .axis_density()
        .iter()
        .enumerate()
        .filter(|(_, p)| **p != 0.0)
        .map(|(i, p)| {
            let m = i as f64 * marginal.step();
            (marginal.weight(i) * p, lambda * m * m)
        })
        .collect();
    ns.into_par_iter()
        .map(|n| nodes.iter().map(|&(w, chi)| w * poisson_pmf(n, chi)).sum())
        .collect()
}

/// Smallest n_max for which every grid node's Poisson tail is negligible.
pub fn covering_n_max(marginal: &MarginalDistribution, params: &DetectionParams) -> u64 {
    let chi_max = params.lambda() * marginal.m_max() * marginal.m_max();
    (chi_max + 12.0 * chi_max.sqrt() + 40.0).ceil() as u64
}

/// Poisson mixture Σ_n ∫d(M²) F̄(M²)·p(n, λM²), by trapezoid quadrature on
/// the marginal's grid.
///
/// Probabilities are taken relative to the marginal's achieved
/// normalization, so `probs` plus `truncation_mass` sum to one. With
/// `n_max = None` the smallest n_max leaving less than
/// [`DEFAULT_TAIL_MASS`] is chosen; an explicit `n_max` leaving more than
/// `max_tail_mass` is an error naming the required value.
pub fn predict_histogram(
    marginal: &MarginalDistribution,
    params: &DetectionParams,
    n_max: Option<u64>,
    max_tail_mass: f64,
) -> Result<ChannelPrediction> {
    let norm = marginal.normalization();
    if !(norm > 0.0) {
        return Err(Error::param("marginal", format!("normalization {norm} is not positive")));
    }
    let lambda = params.lambda();
    let cover = covering_n_max(marginal, params);
    let scaled = |raw: Vec<f64>| raw.into_iter().map(|p| p / norm).collect::<Vec<_>>();

    let probs = match n_max {
        Some(n_max) => scaled(mixture_probs(marginal, lambda, 0..n_max + 1)),
        None => {
            const BLOCK: u64 = 64;
            let mut probs = Vec::new();
            let mut start = 0;
            loop {
                let end = (start + BLOCK).min(cover + 1);
                probs.extend(scaled(mixture_probs(marginal, lambda, start..end)));
                let cum: f64 = probs.iter().sum();
                if let Some(pos) = first_crossing(&probs, 1.0 - DEFAULT_TAIL_MASS) {
                    probs.truncate(pos + 1);
                    break;
                }
                if end > cover || cum >= 1.0 {
                    break;
                }
                start = end;
            }
            probs
        }
    };
    let truncation_mass = 1.0 - probs.iter().sum::<f64>();
    if let Some(n_max) = n_max {
        if truncation_mass > max_tail_mass {
            let full = scaled(mixture_probs(marginal, lambda, 0..cover + 1));
            let required = first_crossing(&full, 1.0 - max_tail_mass).unwrap_or(cover as usize) as u64;
            return Err(Error::TruncationTooLarge { n_max, mass: truncation_mass, required });
        }
    }
    Ok(ChannelPrediction { probs, truncation_mass })
}

fn first_crossing(probs: &[f64], level: f64) -> Option<usize> {
    let mut cum = 0.0;
    probs.iter().position(|p| {
        cum += p;
        cum >= level
    })
}

/// Inversion sampling is used below this mean; above it, an exact
/// transformed-rejection sampler.
const INVERSION_LIMIT: f64 = 30.0;

/// Draws one photon count for a magnetization `m_z` along the measured axis.
pub fn sample_pulse<R: Rng + ?Sized>(m_z: f64, params: &DetectionParams, rng: &mut R) -> u64 {
    let chi = params.lambda() * m_z * m_z;
    sample_poisson(chi, rng)
}

pub(crate) fn sample_poisson<R: Rng + ?Sized>(chi: f64, rng: &mut R) -> u64 {
    if chi <= 0.0 {
        return 0;
    }
    if chi < INVERSION_LIMIT {
        let u: f64 = rng.random();
        let mut n = 0u64;
        let mut p = (-chi).exp();
        let mut cum = p;
        while u > cum {
            n += 1;
            p *= chi / n as f64;
            cum += p;
            if p < f64::MIN_POSITIVE && n as f64 > chi {
                break;
            }
        }
        n
    } else {
        let dist = Poisson::new(chi).expect("positive finite Poisson mean");
        dist.sample(rng) as u64
    }
}

/// Simulates `pulses_per_angle` pulses at each configured angle, drawing the
/// magnetization from the state's axis marginal and then a photon count.
///
/// Every pulse owns the random stream `(seed, angle, pulse)`, so the output
/// is identical however the work is scheduled.
pub fn simulate_experiment(
    state: &SyntheticState,
    angles: &AngleSet,
    pulses_per_angle: u64,
    params: &DetectionParams,
    seed: u64,
) -> Result<Vec<PulseRecord>> {
    if pulses_per_angle == 0 {
        return Err(Error::param("pulses_per_angle", "must be positive"));
    }
    if !state.is_sampleable() {
        return Err(Error::NotSampleable { kind: state.kind_name().to_string() });
    }
    state.validate()?;
    let records = angles
        .angles()
        .iter()
        .enumerate()
        .flat_map(|(a, &beta)| (0..pulses_per_angle).map(move |p| (a, beta, p)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(a, beta, p)| {
            let mut rng = substream(seed, pulse_stream(a, p));
            let m = state.draw(&mut rng);
            PulseRecord { beta, n: sample_pulse(m, params, &mut rng) }
        })
        .collect();
    Ok(records)
}

/// Record-level sampling straight from a photon-number distribution: each
/// pulse's count is drawn by inversion of `pooled`'s cumulative
/// distribution. This is the path for states without a per-pulse sampler.
pub fn simulate_from_histogram(
    pooled: &PooledHistogram,
    angles: &AngleSet,
    pulses_per_angle: u64,
    seed: u64,
) -> Result<Vec<PulseRecord>> {
    if pulses_per_angle == 0 {
        return Err(Error::param("pulses_per_angle", "must be positive"));
    }
    let mut cdf = Vec::with_capacity(pooled.probs().len());
    let mut acc = 0.0;
    for p in pooled.probs() {
        acc += p;
        cdf.push(acc);
    }
    let total = acc;
    let records = angles
        .angles()
        .iter()
        .enumerate()
        .flat_map(|(a, &beta)| (0..pulses_per_angle).map(move |p| (a, beta, p)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(a, beta, p)| {
            let mut rng = substream(seed, pulse_stream(a, p));
            let u: f64 = rng.random::<f64>() * total;
            let n = cdf.partition_point(|c| *c < u).min(cdf.len() - 1);
            PulseRecord { beta, n: n as u64 }
        })
        .collect();
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spike(m0: f64, step: f64, len: usize) -> MarginalDistribution {
        let mut p = vec![0.0; len];
        let i = (m0 / step).round() as usize;
        p[i] = if i == 0 { 1.0 / step } else { 0.5 / step };
        MarginalDistribution::from_axis_density(step, p).unwrap()
    }

    #[test]
    fn mean_detected_law() {
        let p = DetectionParams::default();
        assert_eq!(mean_detected(0.0, &p).unwrap(), 0.0);
        let chi = mean_detected(2500.0, &p).unwrap();
        assert!((chi - 21.6).abs() < 1e-12);
        let a = mean_detected(9.0, &p).unwrap();
        let b = mean_detected(36.0, &p).unwrap();
        assert!((b - 4.0 * a).abs() < 1e-15);
        assert!(mean_detected(-1.0, &p).is_err());
    }

    #[test]
    fn pmf_closed_forms() {
        assert_eq!(poisson_pmf(0, 0.0), 1.0);
        assert_eq!(poisson_pmf(3, 0.0), 0.0);
        assert!((poisson_pmf(1, 1.0) - (-1f64).exp()).abs() < 1e-16);
        assert!((poisson_pmf(1, 1.0) - 0.367879).abs() < 1e-6);
        // Far tail stays finite instead of overflowing.
        let p = poisson_pmf(5000, 4000.0);
        assert!(p > 0.0 && p < 1e-40);
    }

    #[test]
    fn spike_at_origin_predicts_no_photons() {
        let m = spike(0.0, 0.5, 64);
        let pred = predict_histogram(&m, &DetectionParams::default(), None, 1e-9).unwrap();
        assert!((pred.probs[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spike_predicts_poisson() {
        let params = DetectionParams::default();
        let m = spike(30.0, 0.5, 128);
        let pred = predict_histogram(&m, &params, Some(60), 1e-6).unwrap();
        let chi = params.lambda() * 900.0;
        for n in 0..=60u64 {
            assert!((pred.probs[n as usize] - poisson_pmf(n, chi)).abs() < 1e-14);
        }
        assert!((pred.probs.iter().sum::<f64>() + pred.truncation_mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_n_max_names_requirement() {
        let params = DetectionParams::default();
        let m = spike(30.0, 0.5, 128);
        match predict_histogram(&m, &params, Some(5), 1e-9) {
            Err(Error::TruncationTooLarge { required, .. }) => assert!(required > 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_magnetization_never_clicks() {
        let params = DetectionParams::default();
        let mut rng = substream(1, 0);
        assert!((0..1000).all(|_| sample_pulse(0.0, &params, &mut rng) == 0));
    }

    #[test]
    fn sampler_mean_at_chi_four() {
        // λ = 1 so that M_z = 2 gives χ = 4; 1e6 draws, 5σ = 5·√(4/1e6) = 0.01.
        let params = DetectionParams::new(1.0, 1.0, 1.0).unwrap();
        let mut rng = substream(11, 0);
        let n = 1_000_000;
        let sum: u64 = (0..n).map(|_| sample_pulse(2.0, &params, &mut rng)).sum();
        let mean = sum as f64 / n as f64;
        assert!((mean - 4.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn large_mean_sampler_is_unbiased() {
        let mut rng = substream(5, 9);
        let n = 200_000;
        let sum: u64 = (0..n).map(|_| sample_poisson(120.0, &mut rng)).sum();
        let mean = sum as f64 / n as f64;
        // 5σ = 5·√(120/2e5)
        assert!((mean - 120.0).abs() < 5.0 * (120.0f64 / n as f64).sqrt());
    }

    #[test]
    fn sampler_is_deterministic() {
        let params = DetectionParams::default();
        let draw = || {
            let mut rng = substream(3, 7);
            (0..50).map(|i| sample_pulse(i as f64, &params, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn simulate_rejects_zero_pulses() {
        let state = SyntheticState::GaussianReference { sigma: 10.0 };
        let r = simulate_experiment(&state, &AngleSet::default(), 0, &DetectionParams::default(), 1);
        assert!(r.is_err());
    }

    #[test]
    fn histogram_sampler_hits_support() {
        let g = PooledHistogram::from_probs(vec![0.25, 0.0, 0.75], None).unwrap();
        let recs = simulate_from_histogram(&g, &AngleSet::default(), 2000, 4).unwrap();
        assert_eq!(recs.len(), 8000);
        assert!(recs.iter().all(|r| r.n == 0 || r.n == 2));
        let twos = recs.iter().filter(|r| r.n == 2).count() as f64 / 8000.0;
        assert!((twos - 0.75).abs() < 0.03);
    }
}
