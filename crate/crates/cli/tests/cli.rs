// Copyright 2026 nanofb Contributors
// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nanofb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nanofb")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn preset_file(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/presets").join(format!("{name}.cfg"));
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn derive_prints_the_table_and_regime_report() {
    let o = nanofb(&["derive", "--preset", "device"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = String::from_utf8_lossy(&o.stdout);
    assert!(s.contains("g_MT") && s.contains("override"));
    assert!(s.contains("regime checks"));
}

#[test]
fn empty_config_is_a_config_error_listing_required_keys() {
    let dir = scratch("empty_config");
    let path = dir.join("empty.cfg");
    std::fs::write(&path, "# nothing here\n").unwrap();
    let o = nanofb(&["derive", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    for k in ["omega_M", "gamma_T", "engine", "seed", "v_x_over_wT"] {
        assert!(err.contains(k), "{k} not in {err}");
    }
}

#[test]
fn unknown_engine_and_missing_source_are_config_errors() {
    assert_eq!(code(&nanofb(&["sweep", "--preset", "squeeze_x", "--engine", "gaussian"])), 2);
    assert_eq!(code(&nanofb(&["sweep"])), 2);
    assert_eq!(code(&nanofb(&["sweep", "--preset", "no_such_preset"])), 2);
}

#[test]
fn sweep_is_reproducible_from_its_manifest() {
    let a = scratch("sweep_a");
    let b = scratch("sweep_b");
    let o = nanofb(&["sweep", "--preset", "squeeze_x", "--out", a.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv_a = std::fs::read(a.join("sweep.csv")).unwrap();
    let text = String::from_utf8_lossy(&csv_a);
    assert_eq!(text.lines().count(), 12);
    assert!(text.starts_with("v_p_over_wT,v_x_over_wT,VxM_c,VpM_c,VxM_uc,VpM_uc,product_c,product_uc,xi,"));
    let manifest = a.join("manifest.cfg");
    let o = nanofb(&["sweep", "--config", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(b.join("sweep.csv")).unwrap(), csv_a);
}

#[test]
fn strict_mode_aborts_on_failed_regime_checks() {
    // the softened instance breaks the dispersive-shift bounds on purpose
    let dir = scratch("strict");
    let args = ["sweep", "--preset", "crosscheck_softened", "--engine", "reduced-gaussian", "--out"];
    let mut with = args.to_vec();
    with.push(dir.to_str().unwrap());
    assert_eq!(code(&nanofb(&with)), 0);
    with.push("--strict");
    assert_eq!(code(&nanofb(&with)), 3);
}

#[test]
fn crosscheck_flags_a_time_grid_that_misses_the_horizon() {
    let dir = scratch("crosscheck_grid");
    let text = preset_file("crosscheck_small")
        .replace("n_traj = 500", "n_traj = 2")
        .replace("horizon_gM = 8", "horizon_gM = 0.5")
        .replace("dt_wM = 0.05", "dt_wM = 0.07");
    let path = dir.join("grid.cfg");
    std::fs::write(&path, text).unwrap();
    let o = nanofb(&["crosscheck", "--config", path.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    let report = std::fs::read_to_string(dir.join("crosscheck.txt")).unwrap();
    assert!(report.contains("not a multiple of dt"), "{report}");
}

#[test]
fn simulate_writes_the_loop_series() {
    let dir = scratch("simulate");
    let text = preset_file("device").replace("engine = reduced-gaussian", "engine = filter-selfloop")
        + "horizon_gM = 0.01\ndt_wM = 0.05\n";
    let path = dir.join("loop.cfg");
    std::fs::write(&path, text).unwrap();
    let o = nanofb(&["simulate", "--config", path.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = std::fs::read_to_string(dir.join("loop.csv")).unwrap();
    assert!(rows.starts_with("time_s,sx,sy,sz,re_b,im_b,re_a,im_a,VxT,VpT,CxTpT,u,dY"));
    assert!(rows.lines().count() > 100);
    assert!(dir.join("manifest.cfg").exists());
}
