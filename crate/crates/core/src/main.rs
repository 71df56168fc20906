use abe_core::config::{parse_config, RunConfig};
use abe_core::experiments::{
    cutoff_bound_sweep, fringe_experiment, leakage_sweep, measure_run, run_sweep, ResolutionTier,
    SweepOptions,
};
use abe_core::output;
use abe_core::propagators::{PotentialContext, Scene};
use abe_core::snapshot::{write_snapshot, SnapshotHeader};
use abe_core::states::commensurate_velocity;
use abe_core::validation::{require_all, run_suite, SuiteOptions};
use abe_core::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "abe", about = "Electric Aharonov-Bohm simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults apply to everything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    tier: Option<Tier>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Error curve over the sweep velocities.
    Sweep,
    /// One run with snapshots and per-probe errors.
    Single,
    /// Scattering operator distances and phases.
    Smatrix,
    /// Two-arm interferogram.
    Fringe,
    /// Ballistic-cone leakage and the momentum-cutoff bound.
    Leakage,
    /// Exact-identity suite.
    Validate,
}

#[derive(ValueEnum, Clone, Copy)]
enum Tier {
    Base,
    Halved,
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => parse_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(tier) = cli.tier {
        cfg.sweep.resolution_tier = match tier {
            Tier::Base => ResolutionTier::Base,
            Tier::Halved => ResolutionTier::HalvedDxDt,
        };
        cfg.validate()?;
    }
    if let Some(out) = &cli.out {
        cfg.output.directory = out.clone();
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.output.directory.as_path();
    std::fs::create_dir_all(dir)?;
    Ok(dir)
}

fn sweep(cfg: &RunConfig) -> Result<()> {
    let result = run_sweep(&cfg.setup(), &cfg.sweep, SweepOptions::default())?;
    let curve = result.error_curve()?;
    let dir = out_dir(cfg)?;
    output::write_curves(&dir.join("curves.csv"), &result.runs)?;
    output::write_json(
        &dir.join("manifest.json"),
        &output::sweep_manifest(cfg, &result, &curve),
    )?;
    for r in &result.runs {
        let floor = r.floors.map_or(f64::NAN, |f| f.sup);
        println!(
            "v = {:8.4}  sup_error = {:.4e}  floor = {:.4e}  ({:.1} s)",
            r.v_actual, r.sup_error, floor, r.runtime_s
        );
    }
    match curve.series.fit {
        Some(f) => println!(
            "slope {:.3} ± {:.3}, band [{:.2}, {:.2}]",
            f.slope, f.half_width, curve.band.0, curve.band.1
        ),
        None => println!(
            "slope inconclusive: {} of {} points clear the floor rule",
            curve.series.passing(),
            result.runs.len()
        ),
    }
    Ok(())
}

fn single(cfg: &RunConfig) -> Result<()> {
    let setup = cfg.setup().at_tier(cfg.sweep.resolution_tier);
    let scene = Scene::new(
        setup.grid,
        setup.tube,
        setup.solver.cap_strength,
        setup.mass,
    )?;
    let env = setup.envelope.build(&setup.grid, &setup.tube)?;
    let v = commensurate_velocity(cfg.single.velocity, setup.mass, setup.grid.extent[1]);
    setup.check_box(&env, &scene.spectral, cfg.sweep.window, &[v])?;
    let pulse = setup.pulse(cfg.sweep.target_phi.unwrap_or(setup.target_phi))?;
    let potential = PotentialContext::free()
        .with_pulse(pulse, v)
        .with_background(setup.background);
    let params = setup.solver_for(cfg.sweep.window, v);
    let dir = out_dir(cfg)?;
    let hash = cfg.hash();
    let cadence = cfg.output.snapshot_cadence;
    let mut rows = Vec::new();
    let mut snapshots = Vec::new();
    let run = measure_run(
        &env,
        v,
        &params,
        &scene,
        potential,
        &pulse.profile,
        |t, psi, err| {
            let k = rows.len();
            rows.push((t, err, psi.l2_norm(setup.grid.cell_area())));
            if cadence > 0 && k % cadence == 0 {
                let name = format!("snapshot_{k:04}.bin");
                write_snapshot(
                    psi,
                    &SnapshotHeader::new(&setup.grid, t, v, &hash),
                    &dir.join(&name),
                )?;
                snapshots.push(name);
            }
            Ok(())
        },
    )?;
    output::write_probe_table(&dir.join("probes.csv"), &rows)?;
    let manifest = json!({
        "subcommand": "single",
        "config": cfg,
        "config_hash": hash,
        "constants": output::constants(cfg),
        "phi": abe_core::potentials::total_flux_phi(&pulse.profile),
        "v_requested": cfg.single.velocity,
        "v_actual": v,
        "sup_error": run.sup_error,
        "wave_error": run.wave_error,
        "steps": run.steps,
        "snapshots": snapshots,
    });
    output::write_json(&dir.join("manifest.json"), &manifest)?;
    println!(
        "v = {v:.4}  sup_error = {:.4e}  steps = {}",
        run.sup_error, run.steps
    );
    Ok(())
}

fn smatrix(cfg: &RunConfig) -> Result<()> {
    let result = run_sweep(&cfg.setup(), &cfg.sweep, SweepOptions::default())?;
    let dir = out_dir(cfg)?;
    output::write_scattering_table(&dir.join("scattering.csv"), &result.runs)?;
    let curve = result.error_curve()?;
    output::write_json(
        &dir.join("manifest.json"),
        &output::sweep_manifest(cfg, &result, &curve),
    )?;
    for r in &result.runs {
        println!(
            "v = {:8.4}  d = {:.4e}  arg<phi, S phi> = {:+.5}  (+phi: {:+.2e})",
            r.v_actual, r.scattering_distance, r.scattering_phase, r.phase_error
        );
    }
    Ok(())
}

fn fringe(cfg: &RunConfig) -> Result<()> {
    let result = fringe_experiment(&cfg.setup(), &cfg.fringe)?;
    let dir = out_dir(cfg)?;
    output::write_interferogram(&dir.join("interferogram.csv"), &result.table)?;
    output::write_json(
        &dir.join("manifest.json"),
        &output::fringe_manifest(cfg, &result),
    )?;
    println!(
        "theta* = {:.5}  phi = {:.5}  visibility = {:.5}  arg<psi_B, psi_A> = {:+.5}",
        result.theta_star, result.phi, result.visibility, result.relative_phase
    );
    Ok(())
}

fn leakage(cfg: &RunConfig) -> Result<()> {
    let setup = cfg.setup();
    let points = leakage_sweep(&setup, &cfg.leakage)?;
    let (cutoff, ratio) = cutoff_bound_sweep(&setup, &cfg.leakage)?;
    let dir = out_dir(cfg)?;
    output::write_leakage_table(&dir.join("leakage.csv"), &points)?;
    output::write_cutoff_table(&dir.join("cutoff.csv"), &cutoff)?;
    let manifest = json!({
        "subcommand": "leakage",
        "config": cfg,
        "config_hash": cfg.hash(),
        "constants": output::constants(cfg),
        "leakage": points,
        "cutoff": cutoff,
        "cutoff_ratio": ratio,
    });
    output::write_json(&dir.join("manifest.json"), &manifest)?;
    for p in &points {
        println!(
            "v = {:5.1}  leakage = {:.4e}  decay = {}",
            p.velocity,
            p.leakage,
            p.decay.map_or("-".into(), |d| format!("{d:.2}"))
        );
    }
    println!("cutoff bound ratio (largest / smallest) = {ratio:.3}");
    Ok(())
}

fn validate(cfg: &RunConfig) -> Result<()> {
    let checks = run_suite(&cfg.setup(), &SuiteOptions::default())?;
    for c in &checks {
        println!(
            "{} {:<26} {:.3e} (tol {:.0e})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance
        );
    }
    require_all(&checks)
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let cfg = load(cli)?;
    match cli.command {
        Command::Sweep => sweep(&cfg),
        Command::Single => single(&cfg),
        Command::Smatrix => smatrix(&cfg),
        Command::Fringe => fringe(&cfg),
        Command::Leakage => leakage(&cfg),
        Command::Validate => validate(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
