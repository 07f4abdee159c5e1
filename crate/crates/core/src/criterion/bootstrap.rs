//! Half-sampling uncertainties: each replicate keeps a random half of the
//! pulses at every angle (without replacement), and the whole pipeline is
//! rerun on it. The reported spread is the plain across-replicate standard
//! deviation, with no half-sample correction.

use std::collections::BTreeMap;

use rand::seq::index;
use rayon::prelude::*;

use super::{entry_from, solve_sweep, EntryFlag, SweepResult};
use crate::error::{Error, Result};
use crate::model::{pool_angles, AngleHistogram, AngleSet, AxisMoments, PoolWeighting, PooledHistogram, PulseRecord};
use crate::moments::{radial_from_axis, MomentRoute};
use crate::pipeline::{MomentEstimator, PipelineConfig};
use crate::rng::{replicate_stream, substream};

/// Photon counts grouped per angle, in record order.
pub struct BootstrapPlan {
    per_angle: Vec<(f64, Vec<u64>)>,
}

impl BootstrapPlan {
    pub fn new(records: &[PulseRecord], angles: &AngleSet) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput("pulse records"));
        }
        let mut per_angle: Vec<(f64, Vec<u64>)> = angles.angles().iter().map(|b| (*b, Vec::new())).collect();
        for r in records {
            let idx = angles.index_of(r.beta).ok_or(Error::AngleNotConfigured { beta: r.beta })?;
            per_angle[idx].1.push(r.n);
        }
        per_angle.retain(|(_, v)| !v.is_empty());
        if let Some((beta, v)) = per_angle.iter().find(|(_, v)| v.len() < 2) {
            return Err(Error::TooFewRecords(format!("angle {beta} has {} record(s); half-sampling needs ≥ 2", v.len())));
        }
        Ok(BootstrapPlan { per_angle })
    }

    fn histogram(beta: f64, counts: impl Iterator<Item = u64>) -> Result<AngleHistogram> {
        let mut map = BTreeMap::new();
        for n in counts {
            *map.entry(n).or_insert(0u64) += 1;
        }
        AngleHistogram::new(beta, map)
    }

    /// All records pooled.
    pub fn full(&self, weighting: PoolWeighting) -> Result<PooledHistogram> {
        let hists = self
            .per_angle
            .iter()
            .map(|(beta, ns)| Self::histogram(*beta, ns.iter().copied()))
            .collect::<Result<Vec<_>>>()?;
        pool_angles(&hists, weighting, None)
    }

    /// Replicate `replicate`: ⌊N_β/2⌋ pulses per angle drawn without
    /// replacement from the replicate's own random stream.
    pub fn half_sample(&self, replicate: usize, seed: u64, weighting: PoolWeighting) -> Result<PooledHistogram> {
        let mut rng = substream(seed, replicate_stream(replicate));
        let hists = self
            .per_angle
            .iter()
            .map(|(beta, ns)| {
                let picked = index::sample(&mut rng, ns.len(), ns.len() / 2);
                Self::histogram(*beta, picked.into_iter().map(|i| ns[i]))
            })
            .collect::<Result<Vec<_>>>()?;
        pool_angles(&hists, weighting, None)
    }
}

/// Sample mean and (n − 1)-normalized standard deviation.
fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

fn check_replicates(replicates: usize) -> Result<()> {
    if replicates < 2 {
        return Err(Error::param("replicates", format!("{replicates} < 2")));
    }
    Ok(())
}

/// Full pipeline with half-sampling error bars.
///
/// f_mean of each entry is the full-data value; `std` and `bootstrap_mean`
/// summarize the replicates whose moment matrix is positive semidefinite
/// (an indefinite matrix has no minimum). Replicates are processed in
/// parallel and aggregated in index order, so the result is bitwise
/// reproducible for a given seed.
pub fn bootstrap_sweep(records: &[PulseRecord], config: &PipelineConfig, replicates: usize, seed: u64) -> Result<SweepResult> {
    config.validate()?;
    check_replicates(replicates)?;
    let plan = BootstrapPlan::new(records, &config.angles)?;
    let full = plan.full(config.weighting)?;
    let nc_max = config.n_cutoff_max;
    let estimator = MomentEstimator::new(config, config.route, nc_max, &full)?;
    let radial = radial_from_axis(&estimator.estimate(&full)?);
    let cutoffs: Vec<usize> = (2..=nc_max).step_by(2).collect();
    let mut entries: Vec<_> = solve_sweep(&radial, nc_max).into_iter().zip(&cutoffs).map(|(s, &nc)| entry_from(s, nc)).collect();

    let per_replicate: Vec<Vec<Option<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let radial = plan
                .half_sample(r, seed, config.weighting)
                .and_then(|h| estimator.estimate(&h))
                .map(|a| radial_from_axis(&a));
            match &radial {
                Ok(rad) => solve_sweep(rad, nc_max)
                    .into_iter()
                    .map(|s| s.ok().filter(|s| s.semidefinite).map(|s| s.f_mean))
                    .collect(),
                Err(_) => vec![None; cutoffs.len()],
            }
        })
        .collect();

    for (i, entry) in entries.iter_mut().enumerate() {
        let values: Vec<f64> = per_replicate.iter().filter_map(|row| row[i]).collect();
        entry.valid_replicates = values.len();
        if !values.is_empty() {
            let (mean, std) = mean_std(&values);
            entry.bootstrap_mean = Some(mean);
            entry.std = std;
        }
        if 2 * values.len() < replicates {
            entry.flags.push(EntryFlag::FewValidReplicates);
        }
    }
    Ok(SweepResult::finish(entries, config.z))
}

/// Full-data axis moments with half-sampling spreads.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentBootstrap {
    pub route: MomentRoute,
    pub full: AxisMoments,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub valid_replicates: usize,
}

pub fn bootstrap_moments(
    records: &[PulseRecord],
    config: &PipelineConfig,
    route: MomentRoute,
    k_max: usize,
    replicates: usize,
    seed: u64,
) -> Result<MomentBootstrap> {
    config.validate()?;
    check_replicates(replicates)?;
    let plan = BootstrapPlan::new(records, &config.angles)?;
    let full_hist = plan.full(config.weighting)?;
    let estimator = MomentEstimator::new(config, route, k_max, &full_hist)?;
    let full = estimator.estimate(&full_hist)?;
    let reps: Vec<Option<AxisMoments>> = (0..replicates)
        .into_par_iter()
        .map(|r| plan.half_sample(r, seed, config.weighting).and_then(|h| estimator.estimate(&h)).ok())
        .collect();
    let valid: Vec<&AxisMoments> = reps.iter().flatten().collect();
    if valid.len() < 2 {
        return Err(Error::TooFewRecords(format!("only {} replicate(s) produced moments", valid.len())));
    }
    let (mut mean, mut std) = (Vec::with_capacity(k_max), Vec::with_capacity(k_max));
    for k in 1..=k_max {
        let vals: Vec<f64> = valid.iter().map(|a| a.get(k)).collect();
        let (m, s) = mean_std(&vals);
        mean.push(m);
        std.push(s.unwrap_or(0.0));
    }
    Ok(MomentBootstrap { route, full, mean, std, valid_replicates: valid.len() })
}
