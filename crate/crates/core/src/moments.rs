//! Axis moments ⟨M^{2k}⟩ by two independent routes, and their conversion to
//! radial moments ⟨M_ρ^{2k}⟩ = ⟨M^{2k}⟩·4^k / C(2k, k).
//!
//! The factorial route reads the moments straight off the photon histogram:
//! for a Poisson mixture the k-th falling-factorial moment is ⟨χ^k⟩ =
//! λ^k·⟨M^{2k}⟩. The marginal route integrates a (reconstructed) F̄(M²).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AxisMoments, DetectionParams, MarginalDistribution, PooledHistogram, RadialMoments};
use crate::special::binomial;

/// Which estimate of the axis moments feeds the criterion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentRoute {
    /// Falling-factorial moments of the photon histogram.
    #[default]
    Factorial,
    /// Quadrature over the Fourier-deconvolved marginal.
    Deconvolution,
}

impl MomentRoute {
    pub fn as_str(self) -> &'static str {
        match self {
            MomentRoute::Factorial => "factorial",
            MomentRoute::Deconvolution => "deconvolution",
        }
    }
}

/// Share of an order-k moment integrand allowed in the outermost hundredth of
/// the grid before the grid counts as too short.
pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-6;

/// ⟨M^{2k}⟩ = ∫M^{2k}F̄(M²)d(M²) / ∫F̄(M²)d(M²), k = 1..=k_max.
pub fn axis_moments_from_marginal(marginal: &MarginalDistribution, k_max: usize) -> Result<AxisMoments> {
    axis_moments_from_marginal_with(marginal, k_max, Some(DEFAULT_TAIL_TOLERANCE))
}

/// As [`axis_moments_from_marginal`] with an explicit tail-coverage bound;
/// `None` skips the check.
pub fn axis_moments_from_marginal_with(
    marginal: &MarginalDistribution,
    k_max: usize,
    tail_tolerance: Option<f64>,
) -> Result<AxisMoments> {
    if k_max == 0 {
        return Err(Error::param("k_max", "must be at least 1"));
    }
    let norm = marginal.normalization();
    if !(norm > 0.0) {
        return Err(Error::param("marginal", format!("normalization {norm} is not positive")));
    }
    let band_start = 0.99 * marginal.m_max();
    let mut total = vec![0.0; k_max];
    let mut band = vec![0.0; k_max];
    for (i, (m, p)) in marginal.m_nodes().zip(marginal.axis_density()).enumerate() {
        let w = marginal.weight(i) * p;
        let m2 = m * m;
        let mut pow = 1.0;
        for k in 0..k_max {
            pow *= m2;
            total[k] += w * pow;
            if m >= band_start {
                band[k] += (w * pow).abs();
            }
        }
    }
    if let Some(tol) = tail_tolerance {
        for k in 0..k_max {
            let share = band[k] / total[k].abs();
            if !(share <= tol) {
                return Err(Error::TailCoverage { k: k + 1, share });
            }
        }
    }
    AxisMoments::new(total.into_iter().map(|t| t / norm).collect())
}

/// ⟨M^{2k}⟩ = (Σ_n g(n)·n(n−1)…(n−k+1)) / λ^k, bypassing deconvolution.
pub fn axis_moments_factorial(pooled: &PooledHistogram, params: &DetectionParams, k_max: usize) -> Result<AxisMoments> {
    if k_max == 0 {
        return Err(Error::param("k_max", "must be at least 1"));
    }
    let lambda = params.lambda();
    let mut sums = vec![0.0; k_max];
    for (n, &p) in pooled.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let mut falling = 1.0;
        for (k, sum) in sums.iter_mut().enumerate() {
            if k >= n {
                break;
            }
            falling *= (n - k) as f64;
            *sum += p * falling;
        }
    }
    let values = sums
        .into_iter()
        .enumerate()
        .map(|(k, s)| s / lambda.powi(k as i32 + 1))
        .collect();
    AxisMoments::new(values)
}

/// 4^k / C(2k, k), formed from exact integers with a single rounding.
pub fn radial_factor(k: usize) -> f64 {
    let k = k as u64;
    let four_k = 4f64.powi(k as i32);
    four_k / binomial(2 * k, k) as f64
}

/// Converts axis moments to radial moments of the rotation-averaged 2D
/// distribution.
pub fn radial_from_axis(axis: &AxisMoments) -> RadialMoments {
    let values = axis
        .values()
        .iter()
        .enumerate()
        .map(|(i, m)| m * radial_factor(i + 1))
        .collect();
    RadialMoments::new(values).expect("finite scaling of finite moments")
}
