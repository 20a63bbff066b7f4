use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fhn_split::cli::*;
use fhn_split::experiments::{ErrorRow, ErrorTable, Evolution, EvolutionRow, MomentRow, MomentTable, RateFit};
use fhn_split::schemes::SchemeKind;

fn fhn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fhn")).args(args).output().unwrap()
}

fn small_study(dir: &Path, jobs: &str) -> Output {
    fhn(&[
        "strong-error",
        "--n-modes",
        "16",
        "--tau-list",
        "2^-3,2^-4,2^-5",
        "--tau-ref",
        "2^-7",
        "--samples",
        "4",
        "--jobs",
        jobs,
        "--out-dir",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn strong_error_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_study(dir.path(), "1");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("strong_error.csv")).unwrap();
    assert!(csv.starts_with("scheme,tau,rms_error,stderr,n_samples\n"));
    assert!(!csv.contains('\r'));
    assert_eq!(csv.lines().count(), 1 + 9);

    let rates = read_rates_json(&dir.path().join("rates.json")).unwrap();
    assert_eq!(rates.len(), 3);
    assert_eq!(rates["LTexact"].points.len(), 3);
    let raw: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("rates.json")).unwrap()).unwrap();
    assert_eq!(raw["manifest"], "strong_error.manifest.json");

    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(dir.path().join("strong_error.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.command, "strong-error");
    assert_eq!(manifest.settings["tau_ref"], "0.0078125");
    assert!(manifest.outputs.iter().all(|o| dir.path().join(o).exists()));
}

#[test]
fn payloads_are_independent_of_jobs_and_reproducible_from_manifest() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(small_study(a.path(), "1").status.success());
    assert!(small_study(b.path(), "3").status.success());
    let config = a.path().join("strong_error.config");
    let out = fhn(&["strong-error", "--config", config.to_str().unwrap(), "--out-dir", c.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["strong_error.csv", "rates.json"] {
        let reference = fs::read(a.path().join(f)).unwrap();
        assert_eq!(reference, fs::read(b.path().join(f)).unwrap(), "{f}");
        assert_eq!(reference, fs::read(c.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        vec!["simulate", "--tau", "1.5"],
        vec!["strong-error", "--tau-list", "2^-5,0.02"],
        vec!["strong-error", "--tau-ref", "2^-9"],
        vec!["moments", "--scheme", "RK4"],
        vec!["moments", "--bogus", "1"],
    ] {
        let out = fhn(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    let out = fhn(&["simulate", "--tau", "1.5"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau must lie in (0, 1)"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.config");
    fs::write(&path, "seed = 3\nwidth = 9\n").unwrap();
    let out = fhn(&["moments", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("width"));
}

#[test]
fn defaults_manifest_for_strong_error() {
    let flat = resolve("strong-error", &BTreeMap::new(), &BTreeMap::new()).unwrap().to_flat();
    assert_eq!(flat["n_modes"], "128");
    assert_eq!(flat["backend"], "spectral");
    assert_eq!(flat["T"], "0.5");
    assert_eq!(flat["samples"], "64");
    assert_eq!(flat["tau_ref"], (2f64.powi(-14)).to_string());
    assert_eq!(flat["tau_list"].split(',').count(), 6);
}

#[test]
fn simulate_and_verify_ineq() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = fhn(&["simulate", "--n-modes", "16", "--tau", "2^-6", "--T", "0.25", "--snapshots", "5", "--out-dir", d]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_evolution_csv(&dir.path().join("evolution.csv")).unwrap();
    assert_eq!(rows.len(), 5 * 16);
    assert!(dir.path().join("evolution.manifest.json").exists());

    let out = fhn(&["verify-ineq", "--n-max", "50", "--z-count", "200", "--out-dir", d]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("ineq.json")).unwrap()).unwrap();
    assert!(report["constants"]["c_n"].as_f64().unwrap() <= 2.0);
    assert!(dir.path().join("ineq.manifest.json").exists());
}

#[test]
fn empty_tables_are_not_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.csv");
    assert!(emit_error_csv(&path, &ErrorTable::default()).is_err());
    assert!(emit_moments_csv(&path, &MomentTable::default()).is_err());
    assert!(emit_evolution_csv(&path, &Evolution::default()).is_err());
    assert!(!path.exists());
}

#[test]
fn one_row_table_is_two_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.csv");
    let table = ErrorTable {
        rows: vec![ErrorRow {
            kind: SchemeKind::LTimp,
            tau: 0.125,
            rms_error: 0.1,
            stderr: 0.01,
            n_samples: 3,
        }],
        fits: Default::default(),
    };
    emit_error_csv(&path, &table).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), "scheme,tau,rms_error,stderr,n_samples\nLTimp,0.125,0.1,0.01,3\n");
}

#[test]
fn csv_and_json_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let awkward = [1.0 / 3.0, 2f64.powi(-14), 1e-300, 123456.789e10, -0.0];
    let table = ErrorTable {
        rows: awkward
            .iter()
            .enumerate()
            .map(|(i, &x)| ErrorRow {
                kind: SchemeKind::SPLITTING[i],
                tau: x.abs().max(1e-9),
                rms_error: x.abs() + 0.1,
                stderr: x,
                n_samples: i,
            })
            .collect(),
        fits: [(
            SchemeKind::LTexact,
            RateFit {
                slope: 0.1 + 0.2,
                intercept: -1.0 / 7.0,
                ci_halfwidth: 1e-17,
            },
        )]
        .into_iter()
        .collect(),
    };
    let path = dir.path().join("e.csv");
    emit_error_csv(&path, &table).unwrap();
    assert_eq!(read_error_csv(&path).unwrap().rows, table.rows);

    let rates = dir.path().join("r.json");
    emit_rates_json(&rates, &table, "m.json").unwrap();
    let back = read_rates_json(&rates).unwrap();
    let fit = table.fits[&SchemeKind::LTexact];
    assert_eq!(back["LTexact"].slope, fit.slope);
    assert_eq!(back["LTexact"].ci_halfwidth, fit.ci_halfwidth);
    let pts: Vec<[f64; 2]> = table.points(SchemeKind::LTexact).into_iter().map(|(t, e)| [t, e]).collect();
    assert_eq!(back["LTexact"].points, pts);

    let moments = MomentTable {
        rows: vec![MomentRow {
            kind: SchemeKind::EulerMaruyama,
            tau: 0.0625,
            p: 2.0,
            sup_moment: f64::INFINITY,
            blowup_fraction: 0.97,
        }],
    };
    let mpath = dir.path().join("m.csv");
    emit_moments_csv(&mpath, &moments).unwrap();
    assert!(fs::read_to_string(&mpath).unwrap().starts_with("scheme,tau,p,sup_moment,blowup_fraction\n"));
    assert_eq!(read_moments_csv(&mpath).unwrap(), moments);

    let evo = Evolution {
        rows: vec![EvolutionRow {
            t: 0.1,
            zeta: 1.0 / 3.0,
            u: -2.5e-7,
            v: 0.7,
        }],
        blowup: None,
    };
    let epath = dir.path().join("ev.csv");
    emit_evolution_csv(&epath, &evo).unwrap();
    assert!(fs::read_to_string(&epath).unwrap().starts_with("t,zeta,u,v\n"));
    assert_eq!(read_evolution_csv(&epath).unwrap(), evo.rows);
}
