//! CSV tables and JSON manifests. Data files carry no timestamps; only the
//! `runtime_s` column depends on the machine.

use crate::config::RunConfig;
use crate::error::Result;
use crate::experiments::{
    CutoffPoint, ErrorCurve, FringeResult, LeakagePoint, RateSeries, SweepResult, VelocityRun,
    FLOOR_FACTOR,
};
use serde_json::{json, Value};
use std::path::Path;

pub const CURVE_COLUMNS: [&str; 7] = [
    "v_requested",
    "v_actual",
    "sup_error",
    "floor",
    "model_E",
    "phase_error",
    "runtime_s",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_curves(path: &Path, runs: &[VelocityRun]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CURVE_COLUMNS)?;
    for r in runs {
        w.write_record([
            r.v_requested.to_string(),
            r.v_actual.to_string(),
            r.sup_error.to_string(),
            opt(r.floors.map(|f| f.sup)),
            r.model_e.to_string(),
            r.phase_error.to_string(),
            format!("{:.3}", r.runtime_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scattering_table(path: &Path, runs: &[VelocityRun]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "v_requested",
        "v_actual",
        "distance",
        "floor",
        "phase",
        "phase_error",
        "wave_error",
        "wave_floor",
    ])?;
    for r in runs {
        w.write_record([
            r.v_requested.to_string(),
            r.v_actual.to_string(),
            r.scattering_distance.to_string(),
            opt(r.floors.map(|f| f.scattering)),
            r.scattering_phase.to_string(),
            r.phase_error.to_string(),
            r.wave_error.to_string(),
            opt(r.floors.map(|f| f.wave)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-probe errors of one run: `(t, error, norm)`.
pub fn write_probe_table(path: &Path, rows: &[(f64, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "error", "norm"])?;
    for (t, e, n) in rows {
        w.write_record([t.to_string(), e.to_string(), n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_interferogram(path: &Path, table: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["theta", "intensity"])?;
    for (theta, i) in table {
        w.write_record([theta.to_string(), i.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_leakage_table(path: &Path, points: &[LeakagePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["velocity", "leakage", "decay"])?;
    for p in points {
        w.write_record([p.velocity.to_string(), p.leakage.to_string(), opt(p.decay)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cutoff_table(path: &Path, points: &[CutoffPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["velocity", "distance", "scaled"])?;
    for p in points {
        w.write_record([
            p.velocity.to_string(),
            p.distance.to_string(),
            p.scaled.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Constants every manifest carries.
pub fn constants(cfg: &RunConfig) -> Value {
    json!({
        "mass": cfg.mass,
        "hbar": 1.0,
        "units": "hbar = 1, charge absorbed into the potential",
        "error_model": "E(v) = v^-rho (0 < rho < 1), |ln v|/v (rho = 1), 1/v (rho > 1)",
    })
}

fn series_json(series: &RateSeries) -> Value {
    json!({
        "points": series.points,
        "passing": series.passing(),
        "fit": series.fit,
        "verdict": if series.fit.is_some() { "fitted" } else { "inconclusive" },
    })
}

fn band_verdict(series: &RateSeries, band: (f64, f64)) -> Value {
    match series.fit {
        None => json!("inconclusive"),
        Some(f) if f.within(band.0, band.1) => json!("pass"),
        Some(_) => json!("fail"),
    }
}

pub fn sweep_manifest(cfg: &RunConfig, sweep: &SweepResult, curve: &ErrorCurve) -> Value {
    let scattering = sweep.scattering();
    let wave = sweep.wave_operator();
    json!({
        "subcommand": "sweep",
        "config": cfg,
        "config_hash": cfg.hash(),
        "constants": constants(cfg),
        "phi": sweep.phi,
        "f_minus_0": sweep.f_minus0,
        "f_plus_0": sweep.f_plus0,
        "background": sweep.background,
        "model_rho": sweep.config.model_rho(),
        "h2_norm": sweep.h2_norm,
        "floor_factor": FLOOR_FACTOR,
        "error_curve": {
            "series": series_json(&curve.series),
            "slope": curve.series.slope(),
            "model_exponent": curve.model_exponent,
            "band": [curve.band.0, curve.band.1],
            "c_fit": curve.c_fit,
            "c_spread": curve.c_spread,
            "monotone": curve.monotone,
        },
        "wave_operator": series_json(&wave),
        "scattering": {
            "series": series_json(&scattering),
            "phases": sweep.runs.iter().map(|r| json!({
                "v_actual": r.v_actual,
                "phase": r.scattering_phase,
                "phase_error": r.phase_error,
            })).collect::<Vec<_>>(),
        },
        "acceptance": {
            "error_slope_in_band": band_verdict(&curve.series, curve.band),
            "every_point_above_floor": curve.series.all_pass_floor(),
            "wave_slope_in_band": band_verdict(&wave, curve.band),
            "scattering_slope_in_band": band_verdict(&scattering, curve.band),
        },
    })
}

pub fn fringe_manifest(cfg: &RunConfig, fringe: &FringeResult) -> Value {
    json!({
        "subcommand": "fringe",
        "config": cfg,
        "config_hash": cfg.hash(),
        "constants": constants(cfg),
        "phi": fringe.phi,
        "v_requested": fringe.v_requested,
        "v_actual": fringe.v_actual,
        "theta_star": fringe.theta_star,
        "relative_phase": fringe.relative_phase,
        "visibility": fringe.visibility,
    })
}
