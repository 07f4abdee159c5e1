//! The phase-space-distribution criterion.
//!
//! The trial function 𝓕 = (1 + Σ_{k=1}^{N_c/2} C_{2k}·M_ρ^{2k})² is
//! non-negative, so its mean under any classical density ρ(M_y, M_z) is
//! ≥ 0. Minimizing ⟨𝓕⟩ over the coefficients gives the linear system
//!
//!   Σ_l ⟨M_ρ^{2(j+l)}⟩·C_{2l} = −⟨M_ρ^{2j}⟩,  j = 1..N_c/2,
//!
//! and at the solution ⟨𝓕⟩ = 1 + Σ_k C_{2k}⟨M_ρ^{2k}⟩. A negative value
//! certifies that no classical density reproduces the moments.

mod bootstrap;

pub use bootstrap::{bootstrap_moments, bootstrap_sweep, BootstrapPlan, MomentBootstrap};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RadialMoments;
use crate::xprec::{dot, symmetric_eigen, Dd, DdMatrix};

/// Above this condition number the spectral double-double solve is used.
/// Below it the refined LU converges (contraction about cond·2⁻⁵³ per round)
/// and no well-resolved eigendirection is discarded.
pub const CONDITION_THRESHOLD: f64 = 1e14;
/// Relative eigenvalue cutoff of the least-norm solve.
pub const SPECTRAL_CUTOFF: f64 = 1e-12;
/// Slack granted to exact-moment sweeps before a negative value counts.
pub const ROUNDOFF_FLOOR: f64 = 1e-10;
/// Allowed increase of ⟨𝓕⟩ from N_c to N_c + 2.
pub const MONOTONE_SLACK: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Vanishing moments: the all-zero coefficients are optimal.
    Trivial,
    /// Pivoted LU in f64 with double-double iterative refinement.
    RefinedLu,
    /// Double-double eigendecomposition with truncated least-norm solve.
    Spectral,
    /// The truncated solve did worse than the previous cutoff's polynomial,
    /// which is kept (zero-padded).
    Carried,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialSolution {
    pub n_cutoff: usize,
    /// C_{2k} for k = 1..=N_c/2, in μ_B^{−2k}.
    pub coefficients: Vec<f64>,
    pub f_mean: f64,
    /// Condition number of the scaled, equilibrated moment matrix.
    pub condition: f64,
    /// Preconditioning length s = √⟨M_ρ²⟩.
    pub scale: f64,
    /// The moment matrix is positive semidefinite (within the spectral
    /// cutoff), so the stationary point is a minimum.
    pub semidefinite: bool,
    pub method: SolveMethod,
}

impl TrialSolution {
    /// (1 + Σ C_{2k}·m_rho^{2k})², Horner in m_rho².
    pub fn trial_value(&self, m_rho: f64) -> f64 {
        let x = m_rho * m_rho;
        let poly = self.coefficients.iter().rev().fold(0.0, |acc, c| (acc + c) * x);
        (1.0 + poly).powi(2)
    }
}

/// (1 + Σ C_{2k}·m_rho^{2k})² for a solution.
pub fn trial_value(solution: &TrialSolution, m_rho: f64) -> f64 {
    solution.trial_value(m_rho)
}

/// μ_k = m_k / s^{2k} with s² = m_1, in double-double.
fn scaled_moments(radial: &RadialMoments, k_max: usize) -> (f64, Vec<Dd>) {
    let s2 = Dd::new(radial.get(1));
    let mut pow = Dd::ONE;
    let mut mu = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        pow *= s2;
        mu.push(Dd::new(radial.get(k)) / pow);
    }
    (s2.hi.sqrt(), mu)
}

fn require(radial: &RadialMoments, n_cutoff: usize) -> Result<()> {
    if n_cutoff < 2 || !n_cutoff.is_multiple_of(2) {
        return Err(Error::param("n_cutoff", format!("{n_cutoff} is not an even integer ≥ 2")));
    }
    if radial.k_max() < n_cutoff {
        return Err(Error::MissingMoments { required: n_cutoff, available: radial.k_max() });
    }
    Ok(())
}

/// Minimizes ⟨𝓕⟩ for cutoff order `n_cutoff`.
///
/// Moments are rescaled by s = √⟨M_ρ²⟩ and the matrix is equilibrated by its
/// diagonal; both transformations are exact changes of variable.
pub fn solve_coefficients(radial: &RadialMoments, n_cutoff: usize) -> Result<TrialSolution> {
    require(radial, n_cutoff)?;
    let half = n_cutoff / 2;
    if radial.values()[..n_cutoff].iter().all(|m| *m == 0.0) {
        return Ok(TrialSolution {
            n_cutoff,
            coefficients: vec![0.0; half],
            f_mean: 1.0,
            condition: 1.0,
            scale: 0.0,
            semidefinite: true,
            method: SolveMethod::Trivial,
        });
    }
    if !(radial.get(1) > 0.0) {
        return Err(Error::param("radial", format!("⟨M_ρ²⟩ = {} is not positive", radial.get(1))));
    }
    let (scale, mu) = scaled_moments(radial, n_cutoff);
    // Diagonal equilibration d_j = 1/√A_jj; a non-positive diagonal means the
    // moments are not those of any distribution, and equilibration is skipped.
    let diag_ok = (1..=half).all(|j| mu[2 * j - 1].hi > 0.0);
    let d: Vec<Dd> = (1..=half)
        .map(|j| if diag_ok { Dd::ONE / mu[2 * j - 1].sqrt() } else { Dd::ONE })
        .collect();
    let a: DdMatrix = (0..half)
        .map(|j| (0..half).map(|l| d[j] * mu[j + l + 1] * d[l]).collect())
        .collect();
    let rhs: Vec<Dd> = (0..half).map(|j| -(d[j] * mu[j])).collect();

    let eig = symmetric_eigen(&a);
    if eig.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteSolve { n_cutoff });
    }
    let max_abs = eig.values.iter().map(|v| v.hi.abs()).fold(0.0, f64::max);
    let min_abs = eig.values.iter().map(|v| v.hi.abs()).fold(f64::INFINITY, f64::min);
    let min_val = eig.values.iter().map(|v| v.hi).fold(f64::INFINITY, f64::min);
    let condition = if min_abs > 0.0 { max_abs / min_abs } else { f64::INFINITY };
    let semidefinite = min_val >= -SPECTRAL_CUTOFF * max_abs;

    let (z, method) = if condition <= CONDITION_THRESHOLD {
        (refined_lu(&a, &rhs).ok_or(Error::NonFiniteSolve { n_cutoff })?, SolveMethod::RefinedLu)
    } else {
        let cut = SPECTRAL_CUTOFF * max_abs;
        let mut z = vec![Dd::ZERO; half];
        for (i, ev) in eig.values.iter().enumerate() {
            if ev.hi.abs() <= cut {
                continue;
            }
            let col: Vec<Dd> = (0..half).map(|r| eig.vectors[r][i]).collect();
            let w = dot(&col, &rhs) / *ev;
            for (zr, c) in z.iter_mut().zip(&col) {
                *zr += w * *c;
            }
        }
        (z, SolveMethod::Spectral)
    };
    // c_k in scaled units, then C_{2k} = c_k / s^{2k}.
    let c: Vec<Dd> = z.iter().zip(&d).map(|(z, d)| *z * *d).collect();
    let f_mean = (Dd::ONE + dot(&c, &mu[..half])).to_f64();
    let s2 = Dd::new(radial.get(1));
    let mut pow = Dd::ONE;
    let coefficients: Vec<f64> = c
        .iter()
        .map(|ck| {
            pow *= s2;
            (*ck / pow).to_f64()
        })
        .collect();
    if !f_mean.is_finite() || coefficients.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteSolve { n_cutoff });
    }
    Ok(TrialSolution { n_cutoff, coefficients, f_mean, condition, scale, semidefinite, method })
}

/// LU solve in f64 followed by refinement with double-double residuals; the
/// iterate itself is kept in double-double.
fn refined_lu(a: &DdMatrix, rhs: &[Dd]) -> Option<Vec<Dd>> {
    let n = a.len();
    let lu = DMatrix::from_fn(n, n, |i, j| a[i][j].to_f64()).lu();
    let mut x = vec![Dd::ZERO; n];
    let mut r: Vec<Dd> = rhs.to_vec();
    for _ in 0..8 {
        let delta = lu.solve(&DVector::from_iterator(n, r.iter().map(|v| v.to_f64())))?;
        if delta.iter().any(|v| !v.is_finite()) {
            return None;
        }
        for (xi, di) in x.iter_mut().zip(delta.iter()) {
            *xi += Dd::new(*di);
        }
        let size = x.iter().map(|v| v.hi.abs()).fold(0.0, f64::max);
        if delta.amax() <= 1e-30 * size {
            break;
        }
        r = (0..n).map(|i| rhs[i] - dot(&a[i], &x)).collect();
    }
    Some(x)
}

/// ⟨𝓕⟩ by full expansion 1 + 2Σ C_k m_k + Σ_{j,l} C_j C_l m_{j+l}, accumulated
/// in double-double on the rescaled moments.
pub fn f_mean_quadratic(radial: &RadialMoments, solution: &TrialSolution) -> Result<f64> {
    require(radial, solution.n_cutoff)?;
    if radial.get(1) == 0.0 {
        return Ok(1.0);
    }
    let (_, mu) = scaled_moments(radial, solution.n_cutoff);
    let s2 = Dd::new(radial.get(1));
    let mut pow = Dd::ONE;
    let c: Vec<Dd> = solution
        .coefficients
        .iter()
        .map(|ck| {
            pow *= s2;
            Dd::new(*ck) * pow
        })
        .collect();
    let mut f = Dd::ONE;
    for (j, cj) in c.iter().enumerate() {
        f += Dd::new(2.0) * *cj * mu[j];
        for (l, cl) in c.iter().enumerate() {
            f += *cj * *cl * mu[j + l + 1];
        }
    }
    Ok(f.to_f64())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryFlag {
    /// The solve failed; f_mean is NaN.
    SolveFailed,
    /// The moment matrix is indefinite: ⟨𝓕⟩ is unbounded below and the
    /// reported stationary value is not a minimum.
    Indefinite,
    /// f_mean rose by more than the slack relative to the previous N_c.
    NonMonotone,
    /// Fewer than half of the bootstrap replicates gave a definite solve.
    FewValidReplicates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub n_cutoff: usize,
    pub f_mean: f64,
    /// Across-replicate mean and standard deviation; absent without bootstrap.
    pub bootstrap_mean: Option<f64>,
    pub std: Option<f64>,
    pub valid_replicates: usize,
    pub condition: f64,
    pub method: Option<SolveMethod>,
    pub flags: Vec<EntryFlag>,
}

impl SweepEntry {
    fn usable(&self) -> bool {
        !self
            .flags
            .iter()
            .any(|f| matches!(f, EntryFlag::SolveFailed | EntryFlag::Indefinite | EntryFlag::FewValidReplicates))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ClassicalConsistent,
    Nonclassical,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::ClassicalConsistent => "classical_consistent",
            Verdict::Nonclassical => "nonclassical",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
    /// Index into `entries` of the plateau: the largest N_c with a usable
    /// solve. None when no entry is usable.
    pub plateau: Option<usize>,
    pub verdict: Verdict,
    pub z: f64,
}

impl SweepResult {
    pub fn plateau_entry(&self) -> Option<&SweepEntry> {
        self.plateau.map(|i| &self.entries[i])
    }

    pub fn entry(&self, n_cutoff: usize) -> Option<&SweepEntry> {
        self.entries.iter().find(|e| e.n_cutoff == n_cutoff)
    }

    /// Smallest N_c whose usable f_mean is negative beyond the noise band.
    pub fn first_negative(&self) -> Option<usize> {
        self.entries
            .iter()
            .find(|e| e.usable() && e.f_mean < -self.threshold(e))
            .map(|e| e.n_cutoff)
    }

    fn threshold(&self, e: &SweepEntry) -> f64 {
        self.z * e.std.unwrap_or(0.0) + ROUNDOFF_FLOOR
    }

    /// Flags monotonicity breaks, chooses the plateau and fixes the verdict.
    pub(crate) fn finish(entries: Vec<SweepEntry>, z: f64) -> Self {
        let mut entries = entries;
        let mut prev: Option<f64> = None;
        for e in entries.iter_mut() {
            if e.f_mean.is_nan() || e.flags.contains(&EntryFlag::Indefinite) {
                continue;
            }
            if prev.is_some_and(|p| e.f_mean > p + MONOTONE_SLACK) {
                e.flags.push(EntryFlag::NonMonotone);
            }
            prev = Some(e.f_mean);
        }
        let plateau = entries.iter().rposition(SweepEntry::usable);
        let mut out = SweepResult { entries, plateau, verdict: Verdict::ClassicalConsistent, z };
        if let Some(e) = out.plateau_entry() {
            if e.f_mean < -out.threshold(e) {
                out.verdict = Verdict::Nonclassical;
            }
        }
        out
    }
}

pub(crate) fn entry_from(result: Result<TrialSolution>, n_cutoff: usize) -> SweepEntry {
    match result {
        Ok(sol) => SweepEntry {
            n_cutoff,
            f_mean: sol.f_mean,
            bootstrap_mean: None,
            std: None,
            valid_replicates: 0,
            condition: sol.condition,
            method: Some(sol.method),
            flags: if sol.semidefinite { vec![] } else { vec![EntryFlag::Indefinite] },
        },
        Err(_) => SweepEntry {
            n_cutoff,
            f_mean: f64::NAN,
            bootstrap_mean: None,
            std: None,
            valid_replicates: 0,
            condition: f64::NAN,
            method: None,
            flags: vec![EntryFlag::SolveFailed],
        },
    }
}

fn check_cutoff_max(n_cutoff_max: usize) -> Result<()> {
    if n_cutoff_max < 2 || !n_cutoff_max.is_multiple_of(2) {
        return Err(Error::param("n_cutoff_max", format!("{n_cutoff_max} is not an even integer ≥ 2")));
    }
    Ok(())
}

/// Solves every even N_c = 2..=n_cutoff_max; verdict at z standard deviations
/// (no bootstrap here, so the verdict compares against the roundoff floor).
pub fn sweep_cutoff(radial: &RadialMoments, n_cutoff_max: usize, z: f64) -> Result<SweepResult> {
    check_cutoff_max(n_cutoff_max)?;
    if radial.k_max() < n_cutoff_max {
        return Err(Error::MissingMoments { required: n_cutoff_max, available: radial.k_max() });
    }
    let entries = solve_sweep(radial, n_cutoff_max)
        .into_iter()
        .zip((2..=n_cutoff_max).step_by(2))
        .map(|(sol, nc)| entry_from(sol, nc))
        .collect();
    Ok(SweepResult::finish(entries, z))
}

/// Solutions for N_c = 2, 4, ..=n_cutoff_max. The least-norm solve only
/// minimizes over the retained eigendirections, so it can land above the
/// previous cutoff's optimum; a polynomial of lower degree is still a valid
/// trial function, and in that case it is carried forward.
pub fn solve_sweep(radial: &RadialMoments, n_cutoff_max: usize) -> Vec<Result<TrialSolution>> {
    let mut out: Vec<Result<TrialSolution>> = Vec::with_capacity(n_cutoff_max / 2);
    for nc in (2..=n_cutoff_max).step_by(2) {
        let mut sol = solve_coefficients(radial, nc);
        if let (Ok(cur), Some(Ok(prev))) = (&mut sol, out.last()) {
            if cur.method == SolveMethod::Spectral && cur.semidefinite && prev.semidefinite && prev.f_mean < cur.f_mean {
                cur.coefficients = prev.coefficients.clone();
                cur.coefficients.resize(nc / 2, 0.0);
                cur.f_mean = prev.f_mean;
                cur.method = SolveMethod::Carried;
            }
        }
        out.push(sol);
    }
    out
}
