use std::path::Path;
use std::process::Command;

use ulps_cli::capture::{sidecar_path, Capture, CaptureHeader, SampleFormat};
use ulps_cli::commands::{self, Manifest, Overrides, CAPTURE_FILE, FIXES_FILE, MANIFEST_FILE, SWEEP_FILE};
use ulps_cli::scenarios;
use ulps_core::{Method, Scenario};

fn ulps(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ulps"))
        .args(args)
        .output()
        .expect("spawn ulps")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn bundled_scenarios_match_library() {
    let expect = [
        Scenario::uex_noreflector(),
        Scenario::uex_reflector(),
        Scenario::box_room_images(),
    ];
    for s in expect {
        assert_eq!(scenarios::bundled(&s.name).unwrap().unwrap(), s, "{}", s.name);
    }
    assert!(scenarios::bundled("nope").is_none());
}

#[test]
fn scenario_unknown_key_rejected() {
    let mut v: serde_json::Value = serde_json::from_str(scenarios::BUNDLED[0].1).unwrap();
    v["surprise"] = 1.into();
    let err = scenarios::parse(&v.to_string()).unwrap_err();
    assert!(format!("{err:#}").contains("surprise"), "{err:#}");
    let mut v: serde_json::Value = serde_json::from_str(scenarios::BUNDLED[0].1).unwrap();
    v["mca"]["gamm"] = 0.5.into();
    assert!(scenarios::parse(&v.to_string()).is_err());
}

#[test]
fn scenario_file_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(&path, scenarios::BUNDLED[1].1).unwrap();
    assert_eq!(
        scenarios::load(path.to_str().unwrap()).unwrap(),
        Scenario::uex_reflector()
    );
    let err = scenarios::load("missing.json").unwrap_err();
    assert!(format!("{err:#}").contains("uex_reflector"));
}

#[test]
fn codes_dimensions() {
    let csv = commands::codes_csv(8, 0x11D, None).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 17);
    assert!(rows[0].starts_with("chip_0,chip_1,"));
    for r in &rows[1..] {
        let chips: Vec<i32> = r.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(chips.len(), 255);
        assert!(chips.iter().all(|&c| c == 1 || c == -1));
    }
    let five = commands::codes_csv(8, 0x11D, Some(5)).unwrap();
    assert_eq!(five.lines().count(), 6);
    assert_eq!(five.lines().skip(1).collect::<Vec<_>>(), rows[1..6].to_vec());
}

#[test]
fn codes_binary() {
    let out = ulps(&["codes", "--assign", "5"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 6);

    let out = ulps(&["codes", "--polynomial", "0x11F"]);
    assert!(!out.status.success());
    let msg = String::from_utf8(out.stderr).unwrap();
    assert!(msg.contains("period 84"), "{msg}");
}

#[test]
fn overrides_apply_and_validate() {
    let mut s = Scenario::uex_reflector();
    Overrides {
        min_components: Some(5),
        gamma: Some(0.4),
        max_iterations: Some(40),
        delta_ms: Some(2.5),
    }
    .apply(&mut s)
    .unwrap();
    assert_eq!((s.mca.min_components, s.mca.gamma, s.mca.max_iterations), (5, 0.4, 40));
    assert_eq!(s.delta_samples(), 250);
    let bad = Overrides {
        gamma: Some(1.5),
        ..Default::default()
    };
    assert!(bad.apply(&mut Scenario::uex_reflector()).is_err());
}

#[test]
fn simulate_single_trial() {
    let dir = tempfile::tempdir().unwrap();
    let m = commands::simulate(&Scenario::uex_noreflector(), 3, 1, &[Method::Mca], 0, dir.path()).unwrap();
    assert_eq!(m.outputs, vec![FIXES_FILE.to_string(), "ecdf_mca.csv".into()]);
    let fixes = String::from_utf8(read(dir.path(), FIXES_FILE)).unwrap();
    assert_eq!(fixes.lines().count(), 2);
    assert!(fixes.lines().nth(1).unwrap().starts_with("0,mca,"));
    let ecdf = String::from_utf8(read(dir.path(), "ecdf_mca.csv")).unwrap();
    assert_eq!(ecdf.lines().count(), 2);
    assert!(ecdf.lines().nth(1).unwrap().ends_with(",1"));
}

#[test]
fn simulate_is_reproducible_and_reruns() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let s = Scenario::uex_reflector();
    let both = [Method::Mca, Method::Classical];
    let m = commands::simulate(&s, 11, 12, &both, 2, a.path()).unwrap();
    // Same inputs on a single thread.
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| commands::simulate(&s, 11, 12, &both, 2, b.path()))
        .unwrap();
    let read_back = Manifest::read(&a.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(read_back, m);
    commands::rerun(&read_back, c.path()).unwrap();
    for name in m.outputs.iter().map(String::as_str).chain([MANIFEST_FILE]) {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
        assert_eq!(read(a.path(), name), read(c.path(), name), "{name}");
    }
    let other = tempfile::tempdir().unwrap();
    commands::simulate(&s, 12, 12, &both, 0, other.path()).unwrap();
    assert_ne!(read(a.path(), FIXES_FILE), read(other.path(), FIXES_FILE));
}

#[test]
fn simulate_binary_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let st = ulps(&[
        "simulate",
        "--scenario",
        "uex_reflector",
        "--trials",
        "4",
        "--seed",
        "9",
        "--out",
        out_s,
        "--M",
        "4",
    ]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let m = Manifest::read(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.scenario.mca.min_components, 4);
    assert!(out.join("ecdf_mca.csv").exists() && out.join("ecdf_classical.csv").exists());
    let again = dir.path().join("again");
    let st = ulps(&[
        "rerun",
        "--manifest",
        out.join(MANIFEST_FILE).to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    for name in m.outputs.iter().map(String::as_str).chain([MANIFEST_FILE]) {
        assert_eq!(read(&out, name), read(&again, name), "{name}");
    }
}

#[test]
fn dumped_capture_processes_back_to_truth() {
    let dir = tempfile::tempdir().unwrap();
    let s = Scenario::uex_reflector();
    commands::simulate(&s, 21, 6, &[Method::Mca], 6, dir.path()).unwrap();
    let capture = Capture::read(&dir.path().join(CAPTURE_FILE)).unwrap();
    assert_eq!(capture.header.buffers, Some(6));
    let (report, times) = commands::process(&capture, &s, &[Method::Mca]).unwrap();
    assert_eq!(report.buffers.len(), 6);
    assert_eq!(times.len(), 6);
    let fixes = String::from_utf8(read(dir.path(), FIXES_FILE)).unwrap();
    for (row, buf) in fixes.lines().skip(1).zip(&report.buffers) {
        let f: Vec<&str> = row.split(',').collect();
        let truth: Vec<f64> = f[2..5].iter().map(|v| v.parse().unwrap()).collect();
        let fix = buf.methods[0].fix.expect("fix");
        let err = ((fix.position.x - truth[0]).powi(2)
            + (fix.position.y - truth[1]).powi(2)
            + (fix.position.z - truth[2]).powi(2))
        .sqrt();
        assert!(err < 0.05, "buffer {}: error {err}", buf.index);
    }
}

fn header(window: Option<usize>, buffers: Option<usize>) -> CaptureHeader {
    CaptureHeader {
        rate_hz: 100_000.0,
        channels: 1,
        sample_format: SampleFormat::F64,
        window_samples: window,
        buffers,
    }
}

#[test]
fn capture_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    let cap = Capture {
        header: header(Some(3), Some(2)),
        samples: vec![0.5, -1.25, 1e-17, 3.0, 0.1, -0.2],
    };
    cap.write(&path).unwrap();
    assert!(sidecar_path(&path).exists());
    assert_eq!(Capture::read(&path).unwrap(), cap);

    let ints = Capture {
        header: CaptureHeader {
            sample_format: SampleFormat::I16,
            ..header(None, None)
        },
        samples: vec![12.0, -32768.0, 0.0],
    };
    ints.write(&path).unwrap();
    assert_eq!(Capture::read(&path).unwrap(), ints);
}

#[test]
fn capture_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    let side = sidecar_path(&path);
    std::fs::write(&path, "sample\n1\n2\n").unwrap();

    std::fs::write(&side, r#"{"rate_hz": 100000.0, "channels": 1}"#).unwrap();
    assert!(format!("{:#}", Capture::read(&path).unwrap_err()).contains("malformed capture header"));
    std::fs::write(&side, r#"{"rate_hz": -1.0, "channels": 1, "sample_format": "f64"}"#).unwrap();
    assert!(format!("{:#}", Capture::read(&path).unwrap_err()).contains("rate_hz"));
    std::fs::write(&side, r#"{"rate_hz": 1.0, "channels": 2, "sample_format": "f64"}"#).unwrap();
    assert!(Capture::read(&path).is_err());
    std::fs::write(
        &side,
        r#"{"rate_hz": 1.0, "channels": 1, "sample_format": "f64", "extra": 0}"#,
    )
    .unwrap();
    assert!(Capture::read(&path).is_err());

    std::fs::write(&side, r#"{"rate_hz": 1.0, "channels": 1, "sample_format": "f64"}"#).unwrap();
    std::fs::write(&path, "sample\n1\nabc\n").unwrap();
    assert!(format!("{:#}", Capture::read(&path).unwrap_err()).contains("line 3"));
    std::fs::write(&path, "value\n1\n").unwrap();
    assert!(Capture::read(&path).is_err());
    std::fs::write(&path, "sample\n").unwrap();
    assert!(Capture::read(&path).is_err());
}

#[test]
fn process_rejects_short_and_truncated() {
    let s = Scenario::uex_reflector();
    let short = Capture {
        header: header(None, None),
        samples: vec![0.1; 9999],
    };
    let msg = format!("{:#}", commands::process(&short, &s, &[Method::Mca]).unwrap_err());
    assert!(msg.contains("10000") && msg.contains("9999"), "{msg}");

    let truncated = Capture {
        header: header(Some(10000), Some(2)),
        samples: vec![0.1; 15000],
    };
    let msg = format!("{:#}", commands::process(&truncated, &s, &[Method::Mca]).unwrap_err());
    assert!(msg.contains("20000") && msg.contains("15000"), "{msg}");

    let wrong_rate = Capture {
        header: CaptureHeader {
            rate_hz: 48_000.0,
            ..header(None, None)
        },
        samples: vec![0.1; 10000],
    };
    assert!(commands::process(&wrong_rate, &s, &[Method::Mca]).is_err());
}

#[test]
fn process_binary_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    commands::simulate(&Scenario::uex_noreflector(), 4, 2, &[Method::Mca], 2, dir.path()).unwrap();
    let cap = dir.path().join(CAPTURE_FILE);
    let report = dir.path().join("report.json");
    let args = [
        "process",
        "--capture",
        cap.to_str().unwrap(),
        "--scenario",
        "uex_noreflector",
        "--method",
        "both",
        "--out",
        report.to_str().unwrap(),
    ];
    let st = ulps(&args);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    assert!(String::from_utf8(st.stderr).unwrap().contains("buffer 1:"));
    let first = std::fs::read(&report).unwrap();
    let parsed: commands::ProcessReport = serde_json::from_slice(&first).unwrap();
    assert_eq!(parsed.buffers.len(), 2);
    assert_eq!(parsed.buffers[0].methods.len(), 2);
    assert!(ulps(&args).status.success());
    assert_eq!(std::fs::read(&report).unwrap(), first);

    std::fs::write(&cap, "sample\n1.0\n").unwrap();
    let st = ulps(&args);
    assert!(!st.status.success());
    assert!(String::from_utf8(st.stderr).unwrap().contains("expected"));
}

#[test]
fn sweep_writes_grid() {
    let dir = tempfile::tempdir().unwrap();
    let m = commands::sweep(&Scenario::uex_reflector(), 2, 3, &[1, 3], &[0.1, 0.8, 1.0], dir.path()).unwrap();
    assert_eq!(m.outputs, vec![SWEEP_FILE.to_string()]);
    let csv = String::from_utf8(read(dir.path(), SWEEP_FILE)).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "m,gamma,mean_error_m,missing");
    assert_eq!(rows.len(), 7);
    assert!(rows[1].starts_with("1,0.1,"));
    assert!(rows[6].starts_with("3,1,"));
    let again = tempfile::tempdir().unwrap();
    commands::rerun(&m, again.path()).unwrap();
    assert_eq!(read(dir.path(), SWEEP_FILE), read(again.path(), SWEEP_FILE));
    assert_eq!(read(dir.path(), MANIFEST_FILE), read(again.path(), MANIFEST_FILE));
}

#[test]
fn bad_flags_fail() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let st = ulps(&[
        "simulate",
        "--scenario",
        "uex_reflector",
        "--trials",
        "2",
        "--out",
        out.to_str().unwrap(),
        "--gamma",
        "0",
    ]);
    assert!(!st.status.success());
    assert!(!out.join(MANIFEST_FILE).exists());
    let st = ulps(&["simulate", "--scenario", "nowhere.json", "--out", out.to_str().unwrap()]);
    assert!(!st.status.success());
}
