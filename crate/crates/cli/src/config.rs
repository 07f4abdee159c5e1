//! Run configuration: defaults, then the TOML file, then `--set` overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use magcert::reconstruct::DeconvolutionSettings;
use magcert::{AngleSet, DetectionParams, MomentRoute, PipelineConfig, PoolWeighting, SyntheticState};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub detection: DetectionParams,
    pub angles: AngleSet,
    pub weighting: PoolWeighting,
    pub route: MomentRoute,
    pub deconvolution: DeconvolutionSettings,
    pub sweep: SweepSection,
    pub bootstrap: BootstrapSection,
    pub simulate: SimulateSection,
    pub io: IoSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub n_cutoff_max: usize,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub state: SyntheticState,
    pub pulses_per_angle: u64,
    pub seed: u64,
    /// Draw counts from the state's exact photon distribution instead of
    /// sampling a magnetization per pulse.
    pub via_histogram: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    /// Parent directory of the numbered run directories.
    pub run_root: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        RunConfig {
            detection: p.detection,
            angles: p.angles,
            weighting: p.weighting,
            route: p.route,
            deconvolution: p.deconvolution,
            sweep: SweepSection::default(),
            bootstrap: BootstrapSection::default(),
            simulate: SimulateSection::default(),
            io: IoSection::default(),
        }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { n_cutoff_max: 16, z: 2.0 }
    }
}

impl Default for BootstrapSection {
    fn default() -> Self {
        BootstrapSection { replicates: 150, seed: 1 }
    }
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            state: SyntheticState::GaussianReference { sigma: 1500f64.sqrt() },
            pulses_per_angle: 25_000,
            seed: 1,
            via_histogram: false,
        }
    }
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection { run_root: PathBuf::from("runs") }
    }
}

impl RunConfig {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            detection: self.detection,
            angles: self.angles.clone(),
            weighting: self.weighting,
            route: self.route,
            deconvolution: self.deconvolution.clone(),
            n_cutoff_max: self.sweep.n_cutoff_max,
            z: self.sweep.z,
        }
    }

    /// Defaults, overlaid by `file` (if any), overlaid by `overrides` of the
    /// form `dotted.key=value`. Values are TOML literals; anything that does
    /// not parse as one is taken as a string.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = Value::try_from(RunConfig::default())?
            .as_table()
            .cloned()
            .context("default configuration is not a table")?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let doc: Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            merge(&mut table, doc);
        }
        for item in overrides {
            let (key, raw) = item.split_once('=').with_context(|| format!("override `{item}` is not key=value"))?;
            set_dotted(&mut table, key.trim(), parse_literal(raw.trim()))?;
        }
        let cfg: RunConfig = Value::Table(table).try_into().context("invalid configuration")?;
        AngleSet::new(cfg.angles.angles().to_vec())?;
        cfg.pipeline().validate()?;
        cfg.simulate.state.validate()?;
        Ok(cfg)
    }
}

fn parse_literal(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Tagged tables (those with a `kind` key) are replaced, not merged, so that
/// switching a state's kind does not leave the old kind's fields behind.
fn merge(base: &mut Table, over: Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) if !o.contains_key("kind") => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed key `{key}`");
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = match entry {
            Value::Table(t) => t,
            _ => bail!("`{key}`: `{part}` is not a table"),
        };
    }
    let leaf = parts[parts.len() - 1];
    if leaf == "kind" {
        node.clear();
    }
    node.insert(leaf.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::resolve(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.bootstrap.replicates, 150);
        assert_eq!(cfg.angles.len(), 4);
    }

    #[test]
    fn flag_wins_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "route = \"deconvolution\"\n[bootstrap]\nseed = 9\nreplicates = 40\n").unwrap();
        let cfg = RunConfig::resolve(Some(&path), &["bootstrap.seed=11".into()]).unwrap();
        assert_eq!(cfg.route, MomentRoute::Deconvolution);
        assert_eq!(cfg.bootstrap.seed, 11);
        assert_eq!(cfg.bootstrap.replicates, 40);
        assert_eq!(cfg.detection, DetectionParams::default());
    }

    #[test]
    fn switching_state_kind_drops_old_fields() {
        let cfg = RunConfig::resolve(
            None,
            &["simulate.state.kind=single_excitation".into(), "simulate.state.sigma=22.4".into()],
        )
        .unwrap();
        assert_eq!(cfg.simulate.state, SyntheticState::SingleExcitation { sigma: 22.4 });
        let cfg = RunConfig::resolve(None, &["simulate.state.kind=ring".into(), "simulate.state.radius=50".into()]).unwrap();
        assert_eq!(cfg.simulate.state, SyntheticState::Ring { radius: 50.0 });
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::resolve(None, &["deconvolution.regularization=-1".into()]).is_err());
        assert!(RunConfig::resolve(None, &["sweep.n_cutoff_max=7".into()]).is_err());
        assert!(RunConfig::resolve(None, &["detection.q=1.5".into()]).is_err());
        assert!(RunConfig::resolve(None, &["nonsense=1".into()]).is_err());
        assert!(RunConfig::resolve(None, &["route".into()]).is_err());
    }

    #[test]
    fn literal_parsing() {
        assert_eq!(parse_literal("3"), Value::Integer(3));
        assert_eq!(parse_literal("[0.0, 1.5]"), Value::Array(vec![Value::Float(0.0), Value::Float(1.5)]));
        assert_eq!(parse_literal("factorial"), Value::String("factorial".into()));
    }
}
