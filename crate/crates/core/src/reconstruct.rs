//! Recovery of the marginal F̄(M²) from the pooled photon histogram.
//!
//! The photon histogram g(n) is mapped to
//!
//!   G(M̃) = Σ_n g(n)·e^{−λM̃²}·n!/(2n)!·(4λM̃²)ⁿ.
//!
//! Resumming the Poisson mixture term by term (Σ (2λMM̃)^{2n}/(2n)! =
//! cosh 2λMM̃) gives
//!
//!   G(M̃) = ∫_0^∞ d(M²) F̄(M²)·½[e^{−λ(M−M̃)²} + e^{−λ(M+M̃)²}]
//!        = ∫ dM |M|F̄(M²)·e^{−λ(M−M̃)²},
//!
//! a Gaussian convolution of the axis density P(M) = |M|·F̄(M²). Dividing the
//! Fourier transform of G by the kernel's transform √(π/λ)·e^{−ω²/4λ}
//! recovers P, and F̄ = P/|M|.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::channel::{predict_histogram, ChannelPrediction, DEFAULT_TAIL_MASS};
use crate::error::{Error, Result};
use crate::model::{DetectionParams, MarginalDistribution, PooledHistogram};
use crate::special::ln_factorial;

/// Uniform grid M̃_j = (j − points/2)·step, j = 0..points, centred on 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymmetricGrid {
    points: usize,
    step: f64,
}

impl SymmetricGrid {
    pub fn new(points: usize, half_width: f64) -> Result<Self> {
        if points < 16 || !points.is_multiple_of(2) {
            return Err(Error::param("grid_points", format!("{points} is not an even count ≥ 16")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::param("grid_half_width", format!("{half_width} is not positive")));
        }
        Ok(SymmetricGrid { points, step: 2.0 * half_width / points as f64 })
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn half_width(&self) -> f64 {
        self.step * (self.points / 2) as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        (j as f64 - (self.points / 2) as f64) * self.step
    }

    /// Angular frequency of DFT bin k.
    pub fn omega(&self, k: usize) -> f64 {
        let n = self.points as i64;
        let k = k as i64;
        let signed = if k < n / 2 { k } else { k - n };
        2.0 * std::f64::consts::PI * signed as f64 / (n as f64 * self.step)
    }
}

/// G(M̃) on a symmetric grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GFunction {
    pub grid: SymmetricGrid,
    pub values: Vec<f64>,
    pub lambda: f64,
}

impl GFunction {
    fn from_half(grid: SymmetricGrid, half: &[f64], lambda: f64) -> Self {
        let mid = grid.points / 2;
        let values = (0..grid.points).map(|j| half[j.abs_diff(mid)]).collect();
        GFunction { grid, values, lambda }
    }

    /// Largest |G(M̃) − G(−M̃)| over mirrored node pairs.
    pub fn evenness_defect(&self) -> f64 {
        let mid = self.grid.points / 2;
        (1..mid)
            .map(|i| (self.values[mid + i] - self.values[mid - i]).abs())
            .fold(0.0, f64::max)
    }
}

/// Frequency-domain regularization and grid choices for the deconvolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeconvolutionSettings {
    /// Number of grid nodes; a power of two keeps the FFT fast.
    pub grid_points: usize,
    /// Grid half-width in μ_B. When absent it is `width_factor` times the
    /// pilot scale √(E[n]/λ).
    pub grid_half_width: Option<f64>,
    pub width_factor: f64,
    /// Wiener floor ε: the kernel transform is replaced by
    /// max(S_f(ω), ε·S_f(0)).
    pub regularization: f64,
    /// Optional hard cutoff ω_c (per μ_B): bins with |ω| > ω_c are zeroed.
    pub frequency_cutoff: Option<f64>,
    /// Apply the gain |Ĝ|²/(|Ĝ|² + Var Ĝ), with the multinomial shot-noise
    /// variance of Ĝ, whenever the histogram's pulse count is known.
    pub noise_adaptive: bool,
    /// Largest accepted |∫F̄ d(M²) − 1|.
    pub normalization_bound: f64,
}

impl Default for DeconvolutionSettings {
    fn default() -> Self {
        DeconvolutionSettings {
            grid_points: 1 << 12,
            grid_half_width: None,
            width_factor: 6.0,
            regularization: 1e-6,
            frequency_cutoff: None,
            noise_adaptive: true,
            normalization_bound: 0.2,
        }
    }
}

impl DeconvolutionSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.regularization) {
            return Err(Error::param("regularization", format!("{} is outside [0, 1)", self.regularization)));
        }
        if let Some(c) = self.frequency_cutoff {
            if !(c > 0.0) {
                return Err(Error::param("frequency_cutoff", format!("{c} is not positive")));
            }
        }
        if !(self.width_factor >= 6.0) {
            return Err(Error::param("width_factor", "grid must cover at least 6 pilot standard deviations"));
        }
        if !(self.normalization_bound > 0.0) {
            return Err(Error::param("normalization_bound", "must be positive"));
        }
        if self.grid_points < 16 || !self.grid_points.is_multiple_of(2) {
            return Err(Error::param("grid_points", format!("{} is not an even count ≥ 16", self.grid_points)));
        }
        Ok(())
    }

    /// Grid for a histogram, sized from its pilot magnetization scale.
    pub fn grid_for(&self, pooled: &PooledHistogram, params: &DetectionParams) -> Result<SymmetricGrid> {
        self.validate()?;
        let lambda = params.lambda();
        let pilot = (pooled.mean() / lambda).sqrt();
        let half_width = match self.grid_half_width {
            Some(hw) => {
                if hw < 6.0 * pilot {
                    return Err(Error::param(
                        "grid_half_width",
                        format!("{hw} covers fewer than 6 pilot standard deviations ({pilot:.3})"),
                    ));
                }
                hw
            }
            // With no clicks at all the kernel width sets the scale.
            None => self.width_factor * pilot.max(1.0 / (2.0 * lambda).sqrt()),
        };
        SymmetricGrid::new(self.grid_points, half_width)
    }
}

/// ln of the G-function weight e^{−x}·n!/(2n)!·(4x)ⁿ at x = λM̃².
fn ln_g_weight(n: u64, x: f64) -> f64 {
    if n == 0 {
        return -x;
    }
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    -x + ln_factorial(n) - ln_factorial(2 * n) + n as f64 * (4.0 * x).ln()
}

/// The weight multiplying g(n) in G(M̃).
pub fn g_weight(n: u64, m_tilde: f64, lambda: f64) -> f64 {
    ln_g_weight(n, lambda * m_tilde * m_tilde).exp()
}

fn check_log_range(support_max: usize) -> Result<()> {
    let n = support_max as u64;
    if !ln_factorial(2 * n).is_finite() || n > u64::MAX / 4 {
        return Err(Error::LogSpaceOverflow { n });
    }
    Ok(())
}

/// Evaluates G(M̃) from the pooled histogram on `grid`. Each term is formed
/// in log space.
pub fn g_to_g_function(pooled: &PooledHistogram, params: &DetectionParams, grid: SymmetricGrid) -> Result<GFunction> {
    check_log_range(pooled.support_max())?;
    let lambda = params.lambda();
    let probs = pooled.probs();
    let half: Vec<f64> = (0..=grid.points / 2)
        .into_par_iter()
        .map(|i| {
            let m = i as f64 * grid.step;
            let x = lambda * m * m;
            probs
                .iter()
                .enumerate()
                .filter(|(_, g)| **g != 0.0)
                .map(|(n, g)| g * ln_g_weight(n as u64, x).exp())
                .sum()
        })
        .collect();
    Ok(GFunction::from_half(grid, &half, lambda))
}

/// Fourier transform √(π/λ)·e^{−ω²/4λ} of the kernel e^{−λM²}.
pub fn kernel_transform(omega: f64, lambda: f64) -> f64 {
    (std::f64::consts::PI / lambda).sqrt() * (-(omega * omega) / (4.0 * lambda)).exp()
}

/// G(M̃) = ∫d(M²) F̄(M²)·½[e^{−λ(M−M̃)²} + e^{−λ(M+M̃)²}] by direct quadrature.
pub fn forward_convolve(marginal: &MarginalDistribution, lambda: f64, grid: SymmetricGrid) -> GFunction {
    let nodes: Vec<(f64, f64)> = marginal
        .m_nodes()
        .zip(marginal.axis_density())
        .enumerate()
        .filter(|(_, (_, p))| **p != 0.0)
        .map(|(i, (m, p))| (m, marginal.weight(i) * p))
        .collect();
    let half: Vec<f64> = (0..=grid.points / 2)
        .into_par_iter()
        .map(|i| {
            let mt = i as f64 * grid.step;
            nodes
                .iter()
                .map(|&(m, w)| {
                    let a = (-lambda * (m - mt) * (m - mt)).exp();
                    let b = (-lambda * (m + mt) * (m + mt)).exp();
                    w * 0.5 * (a + b)
                })
                .sum()
        })
        .collect();
    GFunction::from_half(grid, &half, lambda)
}

struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    fn new(points: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftPair { forward: planner.plan_fft_forward(points), inverse: planner.plan_fft_inverse(points) }
    }

    fn spectrum(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }
}

fn divide_by_kernel(
    spectrum: &mut [Complex64],
    grid: &SymmetricGrid,
    lambda: f64,
    settings: &DeconvolutionSettings,
    noise_var: Option<&[f64]>,
) {
    let floor = settings.regularization * kernel_transform(0.0, lambda);
    let gains = noise_var.map(|var| wiener_gains(spectrum, grid, var));
    for (k, s) in spectrum.iter_mut().enumerate() {
        let omega = grid.omega(k);
        if settings.frequency_cutoff.is_some_and(|c| omega.abs() > c) {
            *s = Complex64::new(0.0, 0.0);
            continue;
        }
        if let Some(g) = &gains {
            *s *= g[k];
        }
        *s /= kernel_transform(omega, lambda).max(floor);
    }
}

/// Power above this multiple of the shot-noise variance counts as signal.
/// Pure noise power is roughly exponential, so it exceeds the level with
/// probability e^{−20}.
const SIGNAL_TO_NOISE: f64 = 20.0;
/// Relative size of floating-point noise in the computed spectrum of G.
const ROUNDOFF: f64 = 1e-13;
/// In-band bins used to extrapolate the signal power past the band edge.
const ENVELOPE_BINS: usize = 4;

/// Wiener gains S/(S + Var) per frequency bin.
///
/// Inside the band of clear signal (out to the last |ω| whose observed power
/// P exceeds the noise by SIGNAL_TO_NOISE) the signal power is P − Var.
/// Past it, S is extrapolated from a fit of ln S against ω² over the
/// outermost in-band bins, so the gain rolls off smoothly instead of ending
/// in a cliff that would ring.
fn wiener_gains(spectrum: &[Complex64], grid: &SymmetricGrid, var: &[f64]) -> Vec<f64> {
    let n = spectrum.len();
    // G is even, so bins k and n − k share |ω|; pool them.
    let power = |k: usize| 0.5 * (spectrum[k].norm_sqr() + spectrum[(n - k) % n].norm_sqr());
    let noise = |k: usize| 0.5 * (var[k] + var[(n - k) % n]);
    let clear = |k: usize| power(k) > SIGNAL_TO_NOISE * noise(k);
    let edge = (0..=n / 2).filter(|&k| clear(k)).max().unwrap_or(0);

    let in_band: Vec<(f64, f64)> = (1..=edge)
        .filter(|&k| clear(k))
        .map(|k| (grid.omega(k).powi(2), (power(k) - noise(k)).ln()))
        .collect();
    let tail = &in_band[in_band.len().saturating_sub(ENVELOPE_BINS)..];
    let envelope = (tail.len() >= 2).then(|| {
        let len = tail.len() as f64;
        let mx = tail.iter().map(|p| p.0).sum::<f64>() / len;
        let my = tail.iter().map(|p| p.1).sum::<f64>() / len;
        let sxy: f64 = tail.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = tail.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let b = sxy / sxx;
        (my - b * mx, b)
    });

    let edge_omega = grid.omega(edge).abs();
    (0..n)
        .map(|k| {
            let omega = grid.omega(k);
            if omega.abs() <= edge_omega {
                let p = spectrum[k].norm_sqr();
                return if p > 0.0 { ((p - var[k]) / p).max(0.0) } else { 0.0 };
            }
            match envelope {
                Some((a, b)) if b < 0.0 => {
                    let signal = (a + b * omega * omega).exp();
                    signal / (signal + var[k])
                }
                _ => 0.0,
            }
        })
        .collect()
}

fn fold_to_marginal(grid: &SymmetricGrid, full: &[f64], bound: f64) -> Result<MarginalDistribution> {
    let mid = grid.points / 2;
    let folded = (0..mid)
        .map(|i| if i == 0 { full[mid] } else { 0.5 * (full[mid + i] + full[mid - i]) })
        .collect();
    let marginal = MarginalDistribution::from_axis_density(grid.step, folded)?;
    let norm = marginal.normalization();
    if !((norm - 1.0).abs() <= bound) {
        return Err(Error::NormalizationFailure { normalization: norm, bound });
    }
    Ok(marginal)
}

/// Wiener-regularized Fourier deconvolution of G by the Gaussian kernel.
///
/// Returns the marginal on the non-negative half of G's grid. The result is
/// not clipped; negative excursions from noise are kept.
pub fn deconvolve(g: &GFunction, settings: &DeconvolutionSettings) -> Result<MarginalDistribution> {
    settings.validate()?;
    let fft = FftPair::new(g.grid.points);
    deconvolve_with(&fft, g, settings, None)
}

fn deconvolve_with(
    fft: &FftPair,
    g: &GFunction,
    settings: &DeconvolutionSettings,
    noise_var: Option<&[f64]>,
) -> Result<MarginalDistribution> {
    let mut spectrum = fft.spectrum(&g.values);
    divide_by_kernel(&mut spectrum, &g.grid, g.lambda, settings, noise_var);
    fft.inverse.process(&mut spectrum);
    let scale = 1.0 / g.grid.points as f64;
    let full: Vec<f64> = spectrum.iter().map(|c| c.re * scale).collect();
    fold_to_marginal(&g.grid, &full, settings.normalization_bound)
}

/// Reconstruction engine with the G-weights of one grid cached, so many
/// histograms (e.g. bootstrap replicates) can share the set-up cost.
pub struct Reconstructor {
    params: DetectionParams,
    settings: DeconvolutionSettings,
    grid: SymmetricGrid,
    /// weights[n][i] = g_weight(n, i·step) on the non-negative half grid.
    weights: Vec<Vec<f64>>,
    /// |Ŵ_n(ω_k)|², present when noise-adaptive filtering is enabled.
    weight_power: Option<Vec<Vec<f64>>>,
    fft: FftPair,
}

impl Reconstructor {
    /// Builds a reconstructor for histograms supported on 0..=n_max.
    pub fn new(params: DetectionParams, settings: DeconvolutionSettings, grid: SymmetricGrid, n_max: usize) -> Result<Self> {
        settings.validate()?;
        check_log_range(n_max)?;
        let lambda = params.lambda();
        let half_len = grid.points / 2 + 1;
        let weights: Vec<Vec<f64>> = (0..=n_max as u64)
            .into_par_iter()
            .map(|n| {
                (0..half_len)
                    .map(|i| {
                        let m = i as f64 * grid.step;
                        ln_g_weight(n, lambda * m * m).exp()
                    })
                    .collect()
            })
            .collect();
        let fft = FftPair::new(grid.points);
        let weight_power = settings.noise_adaptive.then(|| {
            let mid = grid.points / 2;
            weights
                .par_iter()
                .map(|half| {
                    let full: Vec<f64> = (0..grid.points).map(|j| half[j.abs_diff(mid)]).collect();
                    fft.spectrum(&full).iter().map(|c| c.norm_sqr()).collect()
                })
                .collect()
        });
        Ok(Reconstructor { params, settings, grid, weights, weight_power, fft })
    }

    /// Reconstructor sized for `pooled`: pilot-scaled grid, support of `pooled`.
    pub fn for_histogram(pooled: &PooledHistogram, params: &DetectionParams, settings: &DeconvolutionSettings) -> Result<Self> {
        let grid = settings.grid_for(pooled, params)?;
        Self::new(*params, settings.clone(), grid, pooled.support_max())
    }

    pub fn grid(&self) -> SymmetricGrid {
        self.grid
    }

    pub fn settings(&self) -> &DeconvolutionSettings {
        &self.settings
    }

    fn check_support(&self, pooled: &PooledHistogram) -> Result<()> {
        if pooled.support_max() >= self.weights.len() {
            return Err(Error::param(
                "pooled",
                format!(
                    "support reaches n = {} beyond the reconstructor's n_max = {}",
                    pooled.support_max(),
                    self.weights.len() - 1
                ),
            ));
        }
        Ok(())
    }

    pub fn g_function(&self, pooled: &PooledHistogram) -> Result<GFunction> {
        self.check_support(pooled)?;
        let mut half = vec![0.0; self.grid.points / 2 + 1];
        for (g, row) in pooled.probs().iter().zip(&self.weights) {
            if *g == 0.0 {
                continue;
            }
            for (h, w) in half.iter_mut().zip(row) {
                *h += g * w;
            }
        }
        Ok(GFunction::from_half(self.grid, &half, self.params.lambda()))
    }

    /// Shot-noise variance of Ĝ(ω_k) for a histogram of `sample_size` pulses:
    /// (Σ_n g(n)|Ŵ_n(ω_k)|² − |Ĝ(ω_k)|²) / sample_size.
    fn noise_variance(&self, pooled: &PooledHistogram, g_spec: &[Complex64], sample_size: u64) -> Option<Vec<f64>> {
        let power = self.weight_power.as_ref()?;
        let mut var = vec![0.0; self.grid.points];
        for (g, row) in pooled.probs().iter().zip(power) {
            if *g == 0.0 {
                continue;
            }
            for (v, p) in var.iter_mut().zip(row) {
                *v += g * p;
            }
        }
        // Arithmetic roundoff sets a floor under the shot noise far out in
        // the spectrum.
        let roundoff = (ROUNDOFF * g_spec[0].norm()).powi(2);
        for (v, s) in var.iter_mut().zip(g_spec) {
            *v = ((*v - s.norm_sqr()) / sample_size as f64).max(0.0) + roundoff;
        }
        Some(var)
    }

    /// g(n) → G → deconvolved marginal.
    pub fn reconstruct(&self, pooled: &PooledHistogram) -> Result<MarginalDistribution> {
        let g = self.g_function(pooled)?;
        let var = match pooled.sample_size() {
            Some(size) if self.settings.noise_adaptive => {
                let spectrum = self.fft.spectrum(&g.values);
                self.noise_variance(pooled, &spectrum, size)
            }
            _ => None,
        };
        deconvolve_with(&self.fft, &g, &self.settings, var.as_deref())
    }
}

/// Full reconstruction: g(n) → G → F̄, plus the photon histogram F̄ predicts
/// back through the channel for the self-consistency check.
pub fn reconstruct_marginal(
    pooled: &PooledHistogram,
    params: &DetectionParams,
    settings: &DeconvolutionSettings,
) -> Result<(MarginalDistribution, ChannelPrediction)> {
    let engine = Reconstructor::for_histogram(pooled, params, settings)?;
    let marginal = engine.reconstruct(pooled)?;
    let prediction = predict_histogram(&marginal, params, None, DEFAULT_TAIL_MASS)?;
    Ok((marginal, prediction))
}

/// Total-variation distance ½Σ|a(n) − b(n)| between two photon distributions.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().max(b.len());
    0.5 * (0..len)
        .map(|n| (a.get(n).copied().unwrap_or(0.0) - b.get(n).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::poisson_pmf;
    use crate::synthetic::SyntheticState;

    fn lab() -> DetectionParams {
        DetectionParams::default()
    }

    fn delta_pooled(chi: f64) -> PooledHistogram {
        let probs: Vec<f64> = (0..400).map(|n| poisson_pmf(n, chi)).collect();
        PooledHistogram::from_weights(probs, None).unwrap()
    }

    #[test]
    fn g_of_empty_pulses_is_the_kernel() {
        let p = lab();
        let g = PooledHistogram::from_probs(vec![1.0], None).unwrap();
        let grid = SymmetricGrid::new(64, 50.0).unwrap();
        let gf = g_to_g_function(&g, &p, grid).unwrap();
        for (j, v) in gf.values.iter().enumerate() {
            let m = grid.node(j);
            assert!((v - (-p.lambda() * m * m).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn g_of_poisson_delta_is_two_gaussians() {
        let p = lab();
        let lambda = p.lambda();
        let m0 = 40.0;
        let g = delta_pooled(lambda * m0 * m0);
        let grid = SymmetricGrid::new(128, 120.0).unwrap();
        let gf = g_to_g_function(&g, &p, grid).unwrap();
        for (j, v) in gf.values.iter().enumerate() {
            let mt = grid.node(j);
            let expect = 0.5 * ((-lambda * (m0 - mt).powi(2)).exp() + (-lambda * (m0 + mt).powi(2)).exp());
            assert!((v - expect).abs() < 1e-12, "M̃={mt}: {v} vs {expect}");
        }
        assert_eq!(gf.evenness_defect(), 0.0);
    }

    #[test]
    fn kernel_transform_values() {
        assert!((kernel_transform(0.0, 1.0) - std::f64::consts::PI.sqrt()).abs() < 1e-15);
        assert!((kernel_transform(0.0, 8.64e-3) - 19.0686).abs() < 1e-3);
    }

    #[test]
    fn kernel_transform_matches_discrete_transform() {
        let lambda = 8.64e-3;
        let grid = SymmetricGrid::new(4096, 400.0).unwrap();
        let h = grid.step();
        for omega in [0.0, 0.05, 0.2, 0.5] {
            let dft: f64 = (0..grid.points())
                .map(|j| {
                    let m = grid.node(j);
                    h * (-lambda * m * m).exp() * (omega * m).cos()
                })
                .sum();
            assert!((dft - kernel_transform(omega, lambda)).abs() < 1e-8, "ω={omega}");
        }
    }

    #[test]
    fn forward_convolve_of_delta_and_origin() {
        let lambda = lab().lambda();
        let grid = SymmetricGrid::new(64, 100.0).unwrap();
        let step = 0.5;
        let mut p = vec![0.0; 200];
        p[0] = 1.0 / step;
        let origin = MarginalDistribution::from_axis_density(step, p).unwrap();
        let g = forward_convolve(&origin, lambda, grid);
        for (j, v) in g.values.iter().enumerate() {
            let m = grid.node(j);
            assert!((v - (-lambda * m * m).exp()).abs() < 1e-14);
        }
        let mut p = vec![0.0; 200];
        p[60] = 0.5 / step; // M₀ = 30
        let shell = MarginalDistribution::from_axis_density(step, p).unwrap();
        let g = forward_convolve(&shell, lambda, grid);
        for (j, v) in g.values.iter().enumerate() {
            let mt = grid.node(j);
            let e = 0.5 * ((-lambda * (30.0 - mt).powi(2)).exp() + (-lambda * (30.0 + mt).powi(2)).exp());
            assert!((v - e).abs() < 1e-14);
        }
    }

    #[test]
    fn forward_convolve_is_linear() {
        let lambda = lab().lambda();
        let grid = SymmetricGrid::new(64, 150.0).unwrap();
        let a = SyntheticState::GaussianReference { sigma: 20.0 }.exact_marginal(0.5, 200).unwrap();
        let b = SyntheticState::SingleExcitation { sigma: 15.0 }.exact_marginal(0.5, 200).unwrap();
        let mix = MarginalDistribution::mixture(&[(0.3, &a), (0.7, &b)]).unwrap();
        let ga = forward_convolve(&a, lambda, grid);
        let gb = forward_convolve(&b, lambda, grid);
        let gm = forward_convolve(&mix, lambda, grid);
        for j in 0..grid.points() {
            let e = 0.3 * ga.values[j] + 0.7 * gb.values[j];
            assert!((gm.values[j] - e).abs() < 1e-14);
        }
    }

    #[test]
    fn deconvolve_exact_gaussian() {
        let sigma = 1500f64.sqrt();
        let lambda = lab().lambda();
        let state = SyntheticState::GaussianReference { sigma };
        let fine = state.exact_marginal(sigma / 64.0, 16 * 64 + 1).unwrap();
        let grid = SymmetricGrid::new(4096, 6.0 * sigma).unwrap();
        let g = forward_convolve(&fine, lambda, grid);
        let rec = deconvolve(&g, &DeconvolutionSettings::default()).unwrap();
        let exact = state.exact_marginal(rec.step(), rec.len()).unwrap();
        let l1: f64 = (0..rec.len())
            .map(|i| rec.weight(i) * (rec.axis_density()[i] - exact.axis_density()[i]).abs())
            .sum();
        assert!(l1 < 1e-3, "L1 = {l1}");
    }

    #[test]
    fn deconvolve_round_trips_two_component_marginal() {
        let lambda = lab().lambda();
        let a = SyntheticState::GaussianReference { sigma: 25.0 };
        let b = SyntheticState::SingleExcitation { sigma: 30.0 };
        let state = SyntheticState::Mixture {
            components: vec![
                crate::synthetic::MixtureComponent { weight: 0.4, state: a },
                crate::synthetic::MixtureComponent { weight: 0.6, state: b },
            ],
        };
        let grid = SymmetricGrid::new(4096, 300.0).unwrap();
        let fine = state.exact_marginal(0.25, 1600).unwrap();
        let g = forward_convolve(&fine, lambda, grid);
        let settings = DeconvolutionSettings { regularization: 1e-10, ..Default::default() };
        let rec = deconvolve(&g, &settings).unwrap();
        let exact = state.exact_marginal(rec.step(), rec.len()).unwrap();
        let l1: f64 = (0..rec.len())
            .map(|i| rec.weight(i) * (rec.axis_density()[i] - exact.axis_density()[i]).abs())
            .sum();
        assert!(l1 < 1e-3, "L1 = {l1}");
        let back = forward_convolve(&rec, lambda, grid);
        let linf = back.values.iter().zip(&g.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(linf < 1e-6, "L∞ = {linf}");
    }

    #[test]
    fn needle_kernel_fails_loudly() {
        // λ so large that the kernel is far narrower than a grid cell.
        let params = DetectionParams::new(1.0, 1.0e6, 1.0).unwrap();
        let g = PooledHistogram::from_probs(vec![1.0], None).unwrap();
        let grid = SymmetricGrid::new(256, 25.6).unwrap();
        let gf = g_to_g_function(&g, &params, grid).unwrap();
        let r = deconvolve(&gf, &DeconvolutionSettings::default());
        assert!(matches!(r, Err(Error::NormalizationFailure { .. })), "{r:?}");
    }

    #[test]
    fn settings_validation() {
        let bad = DeconvolutionSettings { regularization: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DeconvolutionSettings { frequency_cutoff: Some(0.0), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DeconvolutionSettings { width_factor: 3.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let g = delta_pooled(10.0);
        let narrow = DeconvolutionSettings { grid_half_width: Some(10.0), ..Default::default() };
        assert!(narrow.grid_for(&g, &lab()).is_err());
    }

    #[test]
    fn no_clicks_reconstructs_origin_spike() {
        let g = PooledHistogram::from_probs(vec![1.0], Some(1000)).unwrap();
        let (m, pred) = reconstruct_marginal(&g, &lab(), &DeconvolutionSettings::default()).unwrap();
        let mass_near_zero = m.integrate(|x| if x < 5.0 { 1.0 } else { 0.0 });
        assert!(mass_near_zero > 0.99 * m.normalization());
        assert!(pred.probs[0] > 0.99);
    }

    #[test]
    fn reconstructor_matches_direct_path() {
        let p = lab();
        let g = delta_pooled(12.0);
        let settings = DeconvolutionSettings { noise_adaptive: false, ..Default::default() };
        let engine = Reconstructor::for_histogram(&g, &p, &settings).unwrap();
        let cached = engine.g_function(&g).unwrap();
        let direct = g_to_g_function(&g, &p, engine.grid()).unwrap();
        for (a, b) in cached.values.iter().zip(&direct.values) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
