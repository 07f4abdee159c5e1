//! Plain-text file formats.
//!
//! | schema     | layout                                          |
//! |------------|-------------------------------------------------|
//! | records    | CSV `beta_rad,n`, one pulse per row             |
//! | histogram  | CSV `beta_rad,n,count`                          |
//! | marginal   | CSV `m_sq,density,axis_density` + `.meta.toml`  |
//! | moments    | CSV `k,value` + `.meta.toml` (kind, route)      |
//! | roundtrip  | CSV `n,observed,predicted`                      |
//! | sweep      | TOML with `[summary]` and `[[entries]]`         |
//!
//! Lines starting with `#` are comments in every CSV schema. The schema of
//! a file is recognized from its header row (or the `[summary]` table).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::criterion::{SweepEntry, SweepResult, Verdict};
use crate::error::{Error, Result};
use crate::model::{AngleHistogram, MarginalDistribution, PulseRecord};
use crate::moments::MomentRoute;

pub const RECORDS_HEADER: &str = "beta_rad,n";
pub const HISTOGRAM_HEADER: &str = "beta_rad,n,count";
pub const MARGINAL_HEADER: &str = "m_sq,density,axis_density";
pub const MOMENTS_HEADER: &str = "k,value";
pub const ROUNDTRIP_HEADER: &str = "n,observed,predicted";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schema {
    Records,
    Histogram,
    Marginal,
    Moments,
    Roundtrip,
    Sweep,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, reason: reason.into() }
}

/// Path of the metadata sidecar that accompanies `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.toml");
    path.with_file_name(name)
}

/// Recognizes the schema of a file from its first non-comment line.
pub fn detect_schema(path: &Path) -> Result<Schema> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    match first {
        RECORDS_HEADER => Ok(Schema::Records),
        HISTOGRAM_HEADER => Ok(Schema::Histogram),
        MARGINAL_HEADER => Ok(Schema::Marginal),
        MOMENTS_HEADER => Ok(Schema::Moments),
        ROUNDTRIP_HEADER => Ok(Schema::Roundtrip),
        "[summary]" => Ok(Schema::Sweep),
        _ => Err(Error::UnknownSchema(path.to_path_buf())),
    }
}

/// Rows of a CSV file with the given header, as string fields with their
/// 1-based line numbers.
fn read_rows(path: &Path, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let found = reader.headers().map_err(|e| csv_err(path, e))?.iter().collect::<Vec<_>>().join(",");
    if found != header {
        return Err(parse_err(path, 1, format!("expected header `{header}`, found `{found}`")));
    }
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != width {
            return Err(parse_err(path, line, format!("expected {width} fields, found {}", rec.len())));
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(rows)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io { path: path.to_path_buf(), source },
        kind => parse_err(path, line, format!("{kind:?}")),
    }
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| parse_err(path, line, format!("`{raw}` is not a valid {name}")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

pub fn read_records(path: &Path) -> Result<Vec<PulseRecord>> {
    read_rows(path, RECORDS_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            let beta: f64 = field(path, line, "angle", &f[0])?;
            if !beta.is_finite() {
                return Err(parse_err(path, line, "angle is not finite"));
            }
            Ok(PulseRecord { beta, n: field(path, line, "photon count", &f[1])? })
        })
        .collect()
}

pub fn format_records(records: &[PulseRecord]) -> String {
    let mut out = String::with_capacity(16 * records.len() + 16);
    out.push_str(RECORDS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!("{},{}\n", r.beta, r.n));
    }
    out
}

pub fn write_records(path: &Path, records: &[PulseRecord]) -> Result<()> {
    write_text(path, &format_records(records))
}

/// Per-angle histograms; several rows with the same (angle, n) add up.
pub fn read_histograms(path: &Path) -> Result<Vec<AngleHistogram>> {
    let mut per_angle: Vec<(f64, BTreeMap<u64, u64>)> = Vec::new();
    for (line, f) in read_rows(path, HISTOGRAM_HEADER)? {
        let beta: f64 = field(path, line, "angle", &f[0])?;
        let n: u64 = field(path, line, "photon count", &f[1])?;
        let count: u64 = field(path, line, "pulse count", &f[2])?;
        let slot = match per_angle.iter().position(|(b, _)| *b == beta) {
            Some(i) => i,
            None => {
                per_angle.push((beta, BTreeMap::new()));
                per_angle.len() - 1
            }
        };
        *per_angle[slot].1.entry(n).or_insert(0) += count;
    }
    per_angle.into_iter().map(|(b, c)| AngleHistogram::new(b, c)).collect()
}

pub fn write_histograms(path: &Path, histograms: &[AngleHistogram]) -> Result<()> {
    let mut out = format!("{HISTOGRAM_HEADER}\n");
    for h in histograms {
        for (n, c) in h.counts() {
            out.push_str(&format!("{},{n},{c}\n", h.beta()));
        }
    }
    write_text(path, &out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalMeta {
    pub schema: String,
    /// Grid step in |M| (μ_B); node i sits at M = i·step.
    pub step: f64,
    pub normalization: f64,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub source: Option<String>,
}

pub fn write_marginal(path: &Path, marginal: &MarginalDistribution, lambda: Option<f64>, source: Option<&str>) -> Result<()> {
    let mut out = format!("{MARGINAL_HEADER}\n");
    let density = marginal.density();
    for ((m2, f), p) in marginal.m_sq_grid().iter().zip(&density).zip(marginal.axis_density()) {
        out.push_str(&format!("{m2},{f},{p}\n"));
    }
    write_text(path, &out)?;
    let meta = MarginalMeta {
        schema: "marginal".into(),
        step: marginal.step(),
        normalization: marginal.normalization(),
        lambda,
        source: source.map(str::to_string),
    };
    write_toml(&sidecar_path(path), &meta)
}

pub fn read_marginal(path: &Path) -> Result<MarginalDistribution> {
    let rows = read_rows(path, MARGINAL_HEADER)?;
    let mut m_sq = Vec::with_capacity(rows.len());
    let mut axis = Vec::with_capacity(rows.len());
    for (line, f) in &rows {
        m_sq.push(field::<f64>(path, *line, "M²", &f[0])?);
        axis.push(field::<f64>(path, *line, "axis density", &f[2])?);
    }
    if m_sq.len() < 4 {
        return Err(parse_err(path, 0, "marginal needs at least 4 grid rows"));
    }
    let step = m_sq[1].sqrt();
    for (i, v) in m_sq.iter().enumerate() {
        let expect = (i as f64 * step).powi(2);
        if (v - expect).abs() > 1e-9 * expect.max(1.0) {
            return Err(parse_err(path, i + 2, "M² grid is not the square of a uniform |M| grid"));
        }
    }
    MarginalDistribution::from_axis_density(step, axis)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentKind {
    /// ⟨M^{2k}⟩ along a measurement axis.
    Axis,
    /// ⟨M_ρ^{2k}⟩ of the rotation-averaged 2D distribution.
    Radial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentsMeta {
    pub schema: String,
    pub kind: MomentKind,
    pub route: MomentRoute,
    /// Half-sampling standard deviation of each value, when computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<Vec<f64>>,
}

pub fn write_moments(path: &Path, values: &[f64], kind: MomentKind, route: MomentRoute, std: Option<&[f64]>) -> Result<()> {
    let mut out = format!("{MOMENTS_HEADER}\n");
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{},{v}\n", i + 1));
    }
    write_text(path, &out)?;
    let meta = MomentsMeta { schema: "moments".into(), kind, route, std: std.map(<[f64]>::to_vec) };
    write_toml(&sidecar_path(path), &meta)
}

pub fn read_moments(path: &Path) -> Result<(Vec<f64>, MomentsMeta)> {
    let mut values = Vec::new();
    for (line, f) in read_rows(path, MOMENTS_HEADER)? {
        let k: usize = field(path, line, "order", &f[0])?;
        if k != values.len() + 1 {
            return Err(parse_err(path, line, format!("order {k} out of sequence")));
        }
        values.push(field(path, line, "moment", &f[1])?);
    }
    let meta = read_toml(&sidecar_path(path))?;
    Ok((values, meta))
}

pub fn write_roundtrip(path: &Path, observed: &[f64], predicted: &[f64]) -> Result<()> {
    let len = observed.len().max(predicted.len());
    let mut out = format!("{ROUNDTRIP_HEADER}\n");
    for n in 0..len {
        let o = observed.get(n).copied().unwrap_or(0.0);
        let p = predicted.get(n).copied().unwrap_or(0.0);
        out.push_str(&format!("{n},{o},{p}\n"));
    }
    write_text(path, &out)
}

/// Rows of a round-trip file as (n, observed, predicted).
pub fn read_roundtrip(path: &Path) -> Result<Vec<(u64, f64, f64)>> {
    read_rows(path, ROUNDTRIP_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            Ok((
                field(path, line, "photon count", &f[0])?,
                field(path, line, "probability", &f[1])?,
                field(path, line, "probability", &f[2])?,
            ))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub verdict: Verdict,
    pub z: f64,
    pub route: MomentRoute,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plateau_n_cutoff: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plateau_f_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plateau_std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepDocument {
    pub summary: SweepSummary,
    pub entries: Vec<SweepEntry>,
}

impl SweepDocument {
    pub fn new(sweep: &SweepResult, route: MomentRoute, seed: Option<u64>, replicates: Option<usize>) -> Self {
        let plateau = sweep.plateau_entry();
        SweepDocument {
            summary: SweepSummary {
                verdict: sweep.verdict,
                z: sweep.z,
                route,
                seed,
                replicates,
                plateau_n_cutoff: plateau.map(|e| e.n_cutoff),
                plateau_f_mean: plateau.map(|e| e.f_mean),
                plateau_std: plateau.and_then(|e| e.std),
            },
            entries: sweep.entries.clone(),
        }
    }
}

pub fn write_sweep(path: &Path, doc: &SweepDocument) -> Result<()> {
    write_toml(path, doc)
}

pub fn read_sweep(path: &Path) -> Result<SweepDocument> {
    read_toml(path)
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| parse_err(path, 0, e.to_string()))?;
    write_text(path, &text)
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|e| {
        let line = e.span().map_or(0, |s| text[..s.start].lines().count().max(1));
        parse_err(path, line, e.message().to_string())
    })
}
