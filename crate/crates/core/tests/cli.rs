mod common;

use abe_core::snapshot::read_snapshot;
use common::SMALL_CONFIG;
use std::path::Path;
use std::process::{Command, Output};

fn abe(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_abe"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_passes_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = abe(&["validate"], None, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(
        text.lines().filter(|l| l.starts_with("PASS")).count(),
        7,
        "{text}"
    );
}

#[test]
fn constraint_violation_exits_2_and_names_the_inequality() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[envelope]\nR = 3.0\n");
    let o = abe(&["sweep"], Some(&cfg), dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("R < L1 − L0 violated: 3 ≥ 3"),
        "{}",
        stderr(&o)
    );

    let cfg = write_config(
        dir.path(),
        "rho.toml",
        "[background]\nrho = 1.0\nmu = 0.5\n",
    );
    let o = abe(&["validate"], Some(&cfg), dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("rho − mu > 1 violated"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn unresolved_envelope_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL_CONFIG}\n[output]\nsnapshot_cadence = 0\n")
        .replace("points = [128, 512]", "points = [32, 512]");
    let cfg = write_config(dir.path(), "coarse.toml", &text);
    let o = abe(&["single"], Some(&cfg), dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn non_finite_state_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL_CONFIG}\n[background]\nenabled = true\nstrength = inf\n");
    let cfg = write_config(dir.path(), "inf.toml", &text);
    let o = abe(&["single"], Some(&cfg), dir.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

fn strip_runtime(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').unwrap().0)
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn sweep_writes_curves_and_manifest_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL_CONFIG);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = abe(&["sweep"], Some(&cfg), out);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let ca = std::fs::read_to_string(a.join("curves.csv")).unwrap();
    let cb = std::fs::read_to_string(b.join("curves.csv")).unwrap();
    assert_eq!(
        ca.lines().next().unwrap(),
        "v_requested,v_actual,sup_error,floor,model_E,phase_error,runtime_s"
    );
    assert_eq!(ca.lines().count(), 5);
    assert_eq!(strip_runtime(&ca), strip_runtime(&cb));

    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    for key in [
        "phi",
        "f_minus_0",
        "f_plus_0",
        "model_rho",
        "error_curve",
        "acceptance",
        "config",
        "config_hash",
    ] {
        assert!(m.get(key).is_some(), "manifest lacks {key}");
    }
    for key in ["mass", "hbar", "error_model"] {
        assert!(m["constants"].get(key).is_some(), "constants lack {key}");
    }
    // defaults are echoed explicitly
    assert_eq!(m["config"]["solver"]["phase_per_step"], 0.05);
    assert_eq!(m["config"]["pulse"]["shape"], "quartic_bump");
    let ma = std::fs::read(a.join("manifest.json")).unwrap();
    let mb = std::fs::read(b.join("manifest.json")).unwrap();
    // only the output directory, and so the config hash, may differ
    let scrub = |bytes: &[u8]| {
        let mut j: serde_json::Value = serde_json::from_slice(bytes).unwrap();
        j["config"].as_object_mut().unwrap().remove("output");
        j.as_object_mut().unwrap().remove("config_hash");
        j
    };
    assert_eq!(scrub(&ma), scrub(&mb));
}

#[test]
fn fringe_without_flux_peaks_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "f.toml",
        &SMALL_CONFIG.replace(
            "absorber_width = 0.5",
            "absorber_width = 0.5\ntarget_phi = 0.0",
        ),
    );
    let o = abe(&["fringe"], Some(&cfg), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(dir.path().join("interferogram.csv")).unwrap();
    let rows: Vec<(f64, f64)> = r.deserialize().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 720);
    let best =
        rows.iter().cloned().fold(
            (f64::NAN, f64::NEG_INFINITY),
            |a, b| if b.1 > a.1 { b } else { a },
        );
    assert_eq!(best.0, 0.0);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["theta_star"], 0.0);
}

#[test]
fn single_writes_probe_table_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.toml",
        &format!("{SMALL_CONFIG}\n[output]\nsnapshot_cadence = 8\n"),
    );
    let o = abe(&["single"], Some(&cfg), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(dir.path().join("probes.csv")).unwrap();
    let rows: Vec<(f64, f64, f64)> = r.deserialize().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 33);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    let snaps = m["snapshots"].as_array().unwrap();
    assert_eq!(snaps.len(), 5);
    let (field, header) = read_snapshot(&dir.path().join(snaps[1].as_str().unwrap())).unwrap();
    assert_eq!(header.dims, [128, 512]);
    assert_eq!(header.time, rows[8].0);
    assert_eq!(header.velocity, m["v_actual"].as_f64().unwrap());
    assert_eq!(header.config_hash, m["config_hash"].as_str().unwrap());
    let norm = field.l2_norm(header.spacing[0] * header.spacing[1]);
    assert!((norm - rows[8].2).abs() < 1e-12);
}

#[test]
fn leakage_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "l.toml", SMALL_CONFIG);
    let o = abe(&["leakage"], Some(&cfg), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let leak = std::fs::read_to_string(dir.path().join("leakage.csv")).unwrap();
    assert_eq!(leak.lines().count(), 4);
    let cut = std::fs::read_to_string(dir.path().join("cutoff.csv")).unwrap();
    assert_eq!(cut.lines().count(), 5);
}
