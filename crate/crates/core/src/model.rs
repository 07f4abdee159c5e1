//! Shared data model: channel constants, pulse records, histograms,
//! marginal distributions and moment vectors, plus angle pooling.
//!
//! Magnetization is measured in units of the Bohr magneton throughout, so
//! `phi` is in rad/μ_B and `lambda` in μ_B⁻².

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::xprec::Dd;

/// Constants of the Faraday-rotation detection channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionParams {
    /// Overall detection efficiency, in (0, 1].
    pub q: f64,
    /// Mean number of input photons per measurement pulse.
    pub n_in: f64,
    /// Polarization rotation per unit magnetization (rad/μ_B).
    pub phi: f64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams { q: 0.3, n_in: 2.0e4, phi: 0.0012 }
    }
}

impl DetectionParams {
    pub fn new(q: f64, n_in: f64, phi: f64) -> Result<Self> {
        let p = DetectionParams { q, n_in, phi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::param("q", format!("{} is outside (0, 1]", self.q)));
        }
        if !(self.n_in > 0.0 && self.n_in.is_finite()) {
            return Err(Error::param("n_in", format!("{} is not positive", self.n_in)));
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::param("phi", format!("{} is not positive", self.phi)));
        }
        Ok(())
    }

    /// Decay constant λ = q·n_in·φ², the mean detected photon number per μ_B².
    pub fn lambda(&self) -> f64 {
        self.q * self.n_in * self.phi * self.phi
    }
}

/// The configured set of measurement rotation angles (radians).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AngleSet(Vec<f64>);

impl Default for AngleSet {
    fn default() -> Self {
        AngleSet(vec![0.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0])
    }
}

impl AngleSet {
    /// Angles written as decimals in files are matched within this tolerance.
    pub const TOLERANCE: f64 = 1e-6;

    pub fn new(angles: Vec<f64>) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::EmptyInput("angle set"));
        }
        for (i, a) in angles.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::param("angles", format!("non-finite angle {a}")));
            }
            if angles[..i].iter().any(|b| (a - b).abs() < Self::TOLERANCE) {
                return Err(Error::param("angles", format!("duplicate angle {a}")));
            }
        }
        Ok(AngleSet(angles))
    }

    pub fn angles(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, beta: f64) -> Option<usize> {
        self.0.iter().position(|a| (a - beta).abs() < Self::TOLERANCE)
    }
}

/// One measurement pulse: the rotation angle it was taken at and the
/// number of photons detected.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PulseRecord {
    pub beta: f64,
    pub n: u64,
}

/// Photon-count histogram for one rotation angle, with exact integer counts.
#[derive(Clone, Debug, PartialEq)]
pub struct AngleHistogram {
    beta: f64,
    counts: BTreeMap<u64, u64>,
    total_pulses: u64,
}

impl AngleHistogram {
    pub fn new(beta: f64, counts: BTreeMap<u64, u64>) -> Result<Self> {
        let total_pulses: u64 = counts.values().sum();
        if total_pulses == 0 {
            return Err(Error::InconsistentHistogram(format!(
                "histogram at beta = {beta} holds no pulses"
            )));
        }
        Ok(AngleHistogram { beta, counts, total_pulses })
    }

    /// Builds a histogram and checks it against a declared pulse total.
    pub fn with_total(beta: f64, counts: BTreeMap<u64, u64>, total_pulses: u64) -> Result<Self> {
        let h = Self::new(beta, counts)?;
        if h.total_pulses != total_pulses {
            return Err(Error::InconsistentHistogram(format!(
                "counts sum to {} but total_pulses is {total_pulses}",
                h.total_pulses
            )));
        }
        Ok(h)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn counts(&self) -> &BTreeMap<u64, u64> {
        &self.counts
    }

    pub fn total_pulses(&self) -> u64 {
        self.total_pulses
    }

    pub fn count(&self, n: u64) -> u64 {
        self.counts.get(&n).copied().unwrap_or(0)
    }

    pub fn max_n(&self) -> u64 {
        self.counts.keys().next_back().copied().unwrap_or(0)
    }
}

/// Rotation-averaged photon-number distribution g(n), stored densely.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledHistogram {
    probs: Vec<f64>,
    sample_size: Option<u64>,
}

impl PooledHistogram {
    pub const SUM_TOLERANCE: f64 = 1e-12;

    /// Wraps a probability vector indexed by n. Trailing zeros are trimmed.
    pub fn from_probs(mut probs: Vec<f64>, sample_size: Option<u64>) -> Result<Self> {
        if let Some(bad) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InconsistentHistogram(format!("invalid probability {bad}")));
        }
        while probs.len() > 1 && probs[probs.len() - 1] == 0.0 {
            probs.pop();
        }
        let sum: f64 = probs.iter().sum();
        if probs.is_empty() || (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InconsistentHistogram(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(PooledHistogram { probs, sample_size })
    }

    /// Rescales non-negative weights to unit sum before wrapping them.
    pub fn from_weights(weights: Vec<f64>, sample_size: Option<u64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::InconsistentHistogram(format!("weights sum to {sum}")));
        }
        Self::from_probs(weights.into_iter().map(|w| w / sum).collect(), sample_size)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    /// Largest n carrying nonzero probability.
    pub fn support_max(&self) -> usize {
        self.probs.len() - 1
    }

    /// Number of pulses behind the histogram, when it came from data.
    pub fn sample_size(&self) -> Option<u64> {
        self.sample_size
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    /// k-th falling-factorial moment Σ g(n)·n(n−1)…(n−k+1).
    pub fn factorial_moment(&self, k: usize) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .skip(k)
            .map(|(n, p)| {
                let falling: f64 = (0..k).map(|i| (n - i) as f64).product();
                p * falling
            })
            .sum()
    }
}

/// How per-angle histograms are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolWeighting {
    /// Pool raw counts, i.e. weight each angle by its pulse count.
    #[default]
    Counts,
    /// Average per-angle frequencies with equal weight per angle.
    EqualAngle,
}

/// Combines per-angle histograms into the rotation-averaged g(n).
///
/// When `angles` is given, every histogram must belong to it. The result
/// does not depend on the order of `histograms`.
pub fn pool_angles(
    histograms: &[AngleHistogram],
    weighting: PoolWeighting,
    angles: Option<&AngleSet>,
) -> Result<PooledHistogram> {
    if histograms.is_empty() {
        return Err(Error::EmptyInput("histogram list"));
    }
    let mut sorted: Vec<&AngleHistogram> = histograms.iter().collect();
    sorted.sort_by(|a, b| a.beta.total_cmp(&b.beta));
    for pair in sorted.windows(2) {
        if (pair[0].beta - pair[1].beta).abs() < AngleSet::TOLERANCE {
            return Err(Error::InconsistentHistogram(format!(
                "angle {} appears twice",
                pair[0].beta
            )));
        }
    }
    if let Some(set) = angles {
        if let Some(h) = sorted.iter().find(|h| set.index_of(h.beta).is_none()) {
            return Err(Error::AngleNotConfigured { beta: h.beta });
        }
    }

    let max_n = sorted.iter().map(|h| h.max_n()).max().unwrap_or(0) as usize;
    let total: u64 = sorted.iter().map(|h| h.total_pulses).sum();
    let probs = match weighting {
        PoolWeighting::Counts => {
            let mut pooled = vec![0u64; max_n + 1];
            for h in &sorted {
                for (&n, &c) in &h.counts {
                    pooled[n as usize] += c;
                }
            }
            pooled.into_iter().map(|c| c as f64 / total as f64).collect()
        }
        PoolWeighting::EqualAngle => {
            let mut probs = vec![0.0; max_n + 1];
            let per_angle = 1.0 / sorted.len() as f64;
            for h in &sorted {
                let t = h.total_pulses as f64;
                for (&n, &c) in &h.counts {
                    probs[n as usize] += per_angle * (c as f64 / t);
                }
            }
            probs
        }
    };
    PooledHistogram::from_probs(probs, Some(total))
}

/// Groups pulse records into one histogram per angle, in angle-set order.
pub fn validate_records(records: &[PulseRecord], angles: &AngleSet) -> Result<Vec<AngleHistogram>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("pulse records"));
    }
    let mut per_angle: Vec<BTreeMap<u64, u64>> = vec![BTreeMap::new(); angles.len()];
    for r in records {
        let idx = angles
            .index_of(r.beta)
            .ok_or(Error::AngleNotConfigured { beta: r.beta })?;
        *per_angle[idx].entry(r.n).or_insert(0) += 1;
    }
    per_angle
        .into_iter()
        .zip(angles.angles())
        .filter(|(counts, _)| !counts.is_empty())
        .map(|(counts, &beta)| AngleHistogram::new(beta, counts))
        .collect()
}

/// Rotation-averaged marginal F̄(M²).
///
/// Stored as the folded axis density P(M) = |M|·F̄(M²) on the uniform grid
/// M_i = i·step, i = 0..len. Integrals over d(M²) are evaluated in M,
/// ∫F̄(M²)·h(M²) d(M²) = ∫P(M)·h(M²) dM over the full line, by the
/// trapezoid rule on the symmetric extension of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalDistribution {
    step: f64,
    axis_density: Vec<f64>,
    normalization: f64,
}

impl MarginalDistribution {
    pub fn from_axis_density(step: f64, axis_density: Vec<f64>) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::param("step", format!("{step} is not a positive grid step")));
        }
        if axis_density.len() < 4 {
            return Err(Error::param("axis_density", "grid needs at least 4 nodes"));
        }
        if let Some(i) = axis_density.iter().position(|v| !v.is_finite()) {
            return Err(Error::param("axis_density", format!("non-finite value at node {i}")));
        }
        let mut m = MarginalDistribution { step, axis_density, normalization: 0.0 };
        m.normalization = m.integrate(|_| 1.0);
        Ok(m)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.axis_density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis_density.is_empty()
    }

    /// Largest |M| covered by the grid.
    pub fn m_max(&self) -> f64 {
        (self.len() - 1) as f64 * self.step
    }

    /// P(M) at the grid nodes M_i = i·step.
    pub fn axis_density(&self) -> &[f64] {
        &self.axis_density
    }

    pub fn m_nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| i as f64 * self.step)
    }

    /// Grid in M² (μ_B²), strictly increasing from 0.
    pub fn m_sq_grid(&self) -> Vec<f64> {
        self.m_nodes().map(|m| m * m).collect()
    }

    /// F̄(M²) at the M² grid nodes. The M = 0 value is P/|M| extrapolated
    /// quadratically from the three nearest nodes.
    pub fn density(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .m_nodes()
            .zip(&self.axis_density)
            .map(|(m, p)| if m > 0.0 { p / m } else { 0.0 })
            .collect();
        out[0] = 3.0 * out[1] - 3.0 * out[2] + out[3];
        out
    }

    /// Achieved ∫F̄ d(M²); recorded, never rescaled away.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    /// Trapezoid weight of node i on the symmetric line.
    pub(crate) fn weight(&self, i: usize) -> f64 {
        let last = self.len() - 1;
        if i == 0 || i == last {
            self.step
        } else {
            2.0 * self.step
        }
    }

    /// ∫F̄(M²)·f(M) d(M²) for an even integrand f, by trapezoid quadrature.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.axis_density
            .iter()
            .enumerate()
            .map(|(i, p)| self.weight(i) * p * f(i as f64 * self.step))
            .sum()
    }

    /// ∫|F̄₁ − F̄₂| d(M²) between two marginals on the same grid.
    pub fn l1_distance(&self, other: &MarginalDistribution) -> Result<f64> {
        if self.len() != other.len() || self.step != other.step {
            return Err(Error::param("other", "marginals live on different grids"));
        }
        Ok((0..self.len())
            .map(|i| self.weight(i) * (self.axis_density[i] - other.axis_density[i]).abs())
            .sum())
    }

    /// Convex combination Σ wᵢ·marginalᵢ on a shared grid.
    pub fn mixture(parts: &[(f64, &MarginalDistribution)]) -> Result<Self> {
        let (_, first) = parts.first().ok_or(Error::EmptyInput("mixture components"))?;
        if parts
            .iter()
            .any(|(_, m)| m.len() != first.len() || m.step != first.step)
        {
            return Err(Error::param("mixture", "components live on different grids"));
        }
        let mut density = vec![0.0; first.len()];
        for (w, m) in parts {
            for (d, p) in density.iter_mut().zip(&m.axis_density) {
                *d += w * p;
            }
        }
        Self::from_axis_density(first.step, density)
    }
}

/// Checks the Cauchy–Schwarz chain m_k² ≤ m_{k−1}·m_{k+1} (with m_0 = 1)
/// and returns the orders k where it fails.
fn chain_violations(values: &[f64]) -> Vec<usize> {
    let m = |k: usize| if k == 0 { 1.0 } else { values[k - 1] };
    let mut bad = Vec::new();
    if values.first().is_some_and(|v| *v < 0.0) {
        bad.push(1);
    }
    for k in 1..values.len() {
        let lhs = m(k) * m(k);
        let rhs = m(k - 1) * m(k + 1);
        if lhs > rhs * (1.0 + 1e-12) {
            bad.push(k);
        }
    }
    bad
}

/// Even axis moments ⟨M^{2k}⟩, k = 1..=k_max (units μ_B^{2k}).
#[derive(Clone, Debug, PartialEq)]
pub struct AxisMoments {
    values: Vec<f64>,
}

impl AxisMoments {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("axis moments"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("axis moments", "non-finite moment"));
        }
        Ok(AxisMoments { values })
    }

    pub fn k_max(&self) -> usize {
        self.values.len()
    }

    /// ⟨M^{2k}⟩ for 1 ≤ k ≤ k_max.
    pub fn get(&self, k: usize) -> f64 {
        self.values[k - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Orders at which the moment chain of a genuine distribution fails;
    /// these point at noise, not at a fatal error.
    pub fn chain_violations(&self) -> Vec<usize> {
        chain_violations(&self.values)
    }
}

/// Even radial moments ⟨M_ρ^{2k}⟩ with M_ρ = √(M_y² + M_z²).
#[derive(Clone, Debug, PartialEq)]
pub struct RadialMoments {
    values: Vec<f64>,
}

impl RadialMoments {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("radial moments"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("radial moments", "non-finite moment"));
        }
        Ok(RadialMoments { values })
    }

    pub fn k_max(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, k: usize) -> f64 {
        self.values[k - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn chain_violations(&self) -> Vec<usize> {
        chain_violations(&self.values)
    }

    /// Moments of the distribution rescaled by `s`: m_k → s^{2k}·m_k.
    pub fn rescaled(&self, s: f64) -> RadialMoments {
        let s2 = Dd::from(s) * Dd::from(s);
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &m)| (Dd::from(m) * s2.powi(i as u32 + 1)).to_f64())
            .collect();
        RadialMoments { values }
    }
}
