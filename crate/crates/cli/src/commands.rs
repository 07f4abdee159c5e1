use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use magcert::channel::{simulate_experiment, simulate_from_histogram};
use magcert::criterion::{bootstrap_moments, bootstrap_sweep, sweep_cutoff, SweepEntry};
use magcert::io::{self, MomentKind, Schema, SweepDocument};
use magcert::moments::{radial_factor, radial_from_axis};
use magcert::pipeline::{pool_records, sweep_histogram};
use magcert::reconstruct::{reconstruct_marginal, total_variation};
use magcert::{
    pool_angles, AxisMoments, MomentRoute, PooledHistogram, PulseRecord, RadialMoments, SweepResult, Verdict,
};

use crate::config::RunConfig;
use crate::run::{ensure_fresh, sha256_file, RunDir};

/// Writes a line to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// Exit code of a nonclassical verdict.
pub const EXIT_NONCLASSICAL: u8 = 10;

/// Pulse records from a records file or, expanded, from a histogram file.
fn load_records(path: &Path) -> Result<Vec<PulseRecord>> {
    match io::detect_schema(path)? {
        Schema::Records => Ok(io::read_records(path)?),
        Schema::Histogram => Ok(io::read_histograms(path)?
            .iter()
            .flat_map(|h| {
                h.counts()
                    .iter()
                    .flat_map(move |(&n, &c)| std::iter::repeat_n(PulseRecord { beta: h.beta(), n }, c as usize))
            })
            .collect()),
        other => bail!("{} holds {other:?} data, expected pulse records or a histogram", path.display()),
    }
}

fn load_pooled(path: &Path, cfg: &RunConfig) -> Result<PooledHistogram> {
    let pipeline = cfg.pipeline();
    match io::detect_schema(path)? {
        Schema::Records => Ok(pool_records(&io::read_records(path)?, &pipeline)?),
        Schema::Histogram => Ok(pool_angles(&io::read_histograms(path)?, cfg.weighting, Some(&cfg.angles))?),
        other => bail!("{} holds {other:?} data, expected pulse records or a histogram", path.display()),
    }
}

pub fn simulate(cfg: &RunConfig, out: Option<&Path>, out_dir: Option<&Path>) -> Result<()> {
    if let Some(path) = out {
        ensure_fresh(path)?;
    }
    let sim = &cfg.simulate;
    let records = if sim.via_histogram {
        let pooled = sim.state.exact_pooled_histogram(&cfg.detection, None)?;
        simulate_from_histogram(&pooled, &cfg.angles, sim.pulses_per_angle, sim.seed)?
    } else {
        if !sim.state.is_sampleable() {
            bail!(
                "state `{}` has a negative quasi-density and no per-pulse sampler; \
                 rerun with --via-histogram (or simulate.via_histogram = true)",
                sim.state.kind_name()
            );
        }
        simulate_experiment(&sim.state, &cfg.angles, sim.pulses_per_angle, &cfg.detection, sim.seed)?
    };
    let mut run = RunDir::create("simulate", cfg, out_dir)?;
    let path = out.map_or_else(|| run.file("records.csv"), Path::to_path_buf);
    io::write_records(&path, &records)?;
    let digest = run.output(&path)?;
    let dir = run.finish()?;
    say!("wrote {} records to {}", records.len(), path.display());
    say!("seed {}", sim.seed);
    say!("sha256 {digest}");
    say!("run {}", dir.display());
    Ok(())
}

pub fn reconstruct(cfg: &RunConfig, input: &Path, out_dir: Option<&Path>) -> Result<()> {
    let pooled = load_pooled(input, cfg)?;
    let (marginal, prediction) = reconstruct_marginal(&pooled, &cfg.detection, &cfg.deconvolution)?;
    let mut run = RunDir::create("reconstruct", cfg, out_dir)?;
    run.input(input)?;
    let source = format!("{} sha256:{}", input.display(), sha256_file(input)?);
    let marginal_path = run.file("marginal.csv");
    io::write_marginal(&marginal_path, &marginal, Some(cfg.detection.lambda()), Some(&source))?;
    run.output(&marginal_path)?;
    let roundtrip_path = run.file("roundtrip.csv");
    io::write_roundtrip(&roundtrip_path, pooled.probs(), &prediction.probs)?;
    run.output(&roundtrip_path)?;
    let dir = run.finish()?;
    say!("normalization {:.6}", marginal.normalization());
    say!("round-trip total variation {:.3e}", total_variation(pooled.probs(), &prediction.probs));
    say!("run {}", dir.display());
    Ok(())
}

pub fn moments(cfg: &RunConfig, input: &Path, route: Option<MomentRoute>, k_max: usize, out_dir: Option<&Path>) -> Result<()> {
    let records = load_records(input)?;
    let pipeline = cfg.pipeline();
    let routes = match route {
        Some(r) => vec![r],
        None => vec![MomentRoute::Factorial, MomentRoute::Deconvolution],
    };
    let mut run = RunDir::create("moments", cfg, out_dir)?;
    run.input(input)?;
    let mut report = String::new();
    for route in routes {
        let boot = bootstrap_moments(
            &records,
            &pipeline,
            route,
            k_max,
            cfg.bootstrap.replicates,
            cfg.bootstrap.seed,
        )?;
        let radial = radial_from_axis(&boot.full);
        let radial_std: Vec<f64> = boot.std.iter().enumerate().map(|(i, s)| s * radial_factor(i + 1)).collect();
        let tag = route.as_str();
        let axis_path = run.file(&format!("axis-{tag}.csv"));
        io::write_moments(&axis_path, boot.full.values(), MomentKind::Axis, route, Some(&boot.std))?;
        run.output(&axis_path)?;
        let radial_path = run.file(&format!("radial-{tag}.csv"));
        io::write_moments(&radial_path, radial.values(), MomentKind::Radial, route, Some(&radial_std))?;
        run.output(&radial_path)?;
        writeln!(report, "route {tag} ({} valid replicates)", boot.valid_replicates)?;
        for k in 1..=k_max {
            writeln!(report, "  k={k:<2} <M^{}> = {:.6e} ± {:.2e}", 2 * k, boot.full.get(k), boot.std[k - 1])?;
        }
    }
    let dir = run.finish()?;
    say!("{}", report.trim_end());
    say!("run {}", dir.display());
    Ok(())
}

fn print_sweep(sweep: &SweepResult) {
    say!("{:>4}  {:>13}  {:>10}  {:>9}  flags", "N_c", "f_mean", "std", "cond");
    for e in &sweep.entries {
        let std = e.std.map_or_else(|| "-".to_string(), |s| format!("{s:.3e}"));
        let flags: Vec<String> = e.flags.iter().map(|f| format!("{f:?}")).collect();
        say!("{:>4}  {:>13.6e}  {:>10}  {:>9.2e}  {}", e.n_cutoff, e.f_mean, std, e.condition, flags.join(","));
    }
}

fn print_plateau(sweep: &SweepResult) {
    match sweep.plateau_entry() {
        Some(SweepEntry { n_cutoff, f_mean, std: Some(std), .. }) => {
            say!("plateau N_c={n_cutoff}: <F> = {f_mean:.6} ± {std:.6} (z = {})", sweep.z)
        }
        Some(SweepEntry { n_cutoff, f_mean, .. }) => say!("plateau N_c={n_cutoff}: <F> = {f_mean:.6}"),
        None => say!("no usable cutoff"),
    }
    if let Some(nc) = sweep.first_negative() {
        say!("first negative at N_c={nc}");
    }
    say!("verdict {}", sweep.verdict.as_str());
}

fn verdict_code(verdict: Verdict) -> u8 {
    match verdict {
        Verdict::ClassicalConsistent => 0,
        Verdict::Nonclassical => EXIT_NONCLASSICAL,
    }
}

pub fn certify(cfg: &RunConfig, input: &Path, out_dir: Option<&Path>) -> Result<u8> {
    let records = load_records(input)?;
    let sweep = bootstrap_sweep(&records, &cfg.pipeline(), cfg.bootstrap.replicates, cfg.bootstrap.seed)?;
    let mut run = RunDir::create("certify", cfg, out_dir)?;
    run.input(input)?;
    let path = run.file("sweep.toml");
    let doc = SweepDocument::new(&sweep, cfg.route, Some(cfg.bootstrap.seed), Some(cfg.bootstrap.replicates));
    io::write_sweep(&path, &doc)?;
    run.output(&path)?;
    let dir = run.finish()?;
    print_sweep(&sweep);
    print_plateau(&sweep);
    say!("run {}", dir.display());
    Ok(verdict_code(sweep.verdict))
}

/// Sweep without error bars, from records, a histogram or a moments file.
pub fn sweep(cfg: &RunConfig, input: &Path, out_dir: Option<&Path>) -> Result<()> {
    let pipeline = cfg.pipeline();
    let (sweep, route) = match io::detect_schema(input)? {
        Schema::Moments => {
            let (values, meta) = io::read_moments(input)?;
            let radial = match meta.kind {
                MomentKind::Axis => radial_from_axis(&AxisMoments::new(values)?),
                MomentKind::Radial => RadialMoments::new(values)?,
            };
            (sweep_cutoff(&radial, cfg.sweep.n_cutoff_max, cfg.sweep.z)?, meta.route)
        }
        _ => (sweep_histogram(&load_pooled(input, cfg)?, &pipeline)?, cfg.route),
    };
    let mut run = RunDir::create("sweep", cfg, out_dir)?;
    run.input(input)?;
    let path = run.file("sweep.toml");
    io::write_sweep(&path, &SweepDocument::new(&sweep, route, None, None))?;
    run.output(&path)?;
    let dir = run.finish()?;
    print_sweep(&sweep);
    print_plateau(&sweep);
    say!("run {}", dir.display());
    Ok(())
}

/// Plain-column plot data: a sweep becomes `n_cutoff,f_mean,std`; a marginal
/// becomes `m_sq,density`, and optionally `m,p_m`, the axis density on the
/// full line under ⟨M⟩ = 0.
pub fn emit_plot(input: &Path, out: &Path, axis_out: Option<&Path>) -> Result<()> {
    ensure_fresh(out)?;
    if let Some(p) = axis_out {
        ensure_fresh(p)?;
    }
    let mut text = String::new();
    match io::detect_schema(input)? {
        Schema::Sweep => {
            if axis_out.is_some() {
                bail!("--axis-out applies to marginal input only");
            }
            let doc = io::read_sweep(input)?;
            text.push_str("n_cutoff,f_mean,std\n");
            for e in &doc.entries {
                let std = e.std.map_or_else(String::new, |s| format!("{s:e}"));
                writeln!(text, "{},{:e},{std}", e.n_cutoff, e.f_mean)?;
            }
        }
        Schema::Marginal => {
            let marginal = io::read_marginal(input)?;
            text.push_str("m_sq,density\n");
            for (x, d) in marginal.m_sq_grid().iter().zip(marginal.density()) {
                writeln!(text, "{x:e},{d:e}")?;
            }
            if let Some(path) = axis_out {
                let nodes: Vec<f64> = marginal.m_nodes().collect();
                let p = marginal.axis_density();
                let mut axis = String::from("m,p_m\n");
                for i in (1..nodes.len()).rev() {
                    writeln!(axis, "{:e},{:e}", -nodes[i], p[i])?;
                }
                for i in 0..nodes.len() {
                    writeln!(axis, "{:e},{:e}", nodes[i], p[i])?;
                }
                write_new(path, &axis)?;
            }
        }
        other => bail!("{} holds {other:?} data; emit-plot takes a sweep or a marginal", input.display()),
    }
    write_new(out, &text)?;
    say!("wrote {}", out.display());
    if let Some(p) = axis_out {
        say!("wrote {}", p.display());
    }
    Ok(())
}

fn write_new(path: &Path, text: &str) -> Result<()> {
    use std::io::Write;
    let mut f = fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .with_context(|| format!("creating {}", path.display()))?;
    f.write_all(text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

pub fn show_config(cfg: &RunConfig) -> Result<()> {
    say!("{}", toml::to_string(cfg)?.trim_end());
    Ok(())
}
