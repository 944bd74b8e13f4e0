use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn conewave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conewave"))
        .args(args)
        .env_remove("CONEWAVE_OUT")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let o = conewave(args);
    assert!(
        o.status.success(),
        "{args:?} exited {:?}: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.cfg");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn zero_potential_gives_zero_trace() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("fwd");
    run_ok(&["forward", "--config", s(&scenario("zero.cfg")), "--out", s(&out)]);
    let m = manifest(&out);
    assert_eq!(m["status"], "pass");
    for o in m["outputs"].as_array().unwrap() {
        assert!(out.join(o["path"].as_str().unwrap()).exists());
    }
    let text = std::fs::read_to_string(out.join("trace.txt")).unwrap();
    for line in text.lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit())) {
        for v in line.rsplit(',').take(3) {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{line}");
        }
    }
}

#[test]
fn r_not_below_t_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "R = 1\nT = 1\nh = 1/16\nq = zero\n");
    let o = conewave(&["forward", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("R < T"));
    assert!(!tmp.path().join("o").exists(), "nothing computed before validation");
}

#[test]
fn demo_outputs_are_bit_identical() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = scenario("radial_bump.cfg");
    run_ok(&["forward", "--config", s(&cfg), "--out", s(&a)]);
    run_ok(&["forward", "--config", s(&cfg), "--out", s(&b)]);
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma["outputs"], mb["outputs"]);
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    for f in ["trace.txt", "summary.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
}

#[test]
fn seeded_noise_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let fwd = tmp.path().join("fwd");
    run_ok(&["forward", "--config", s(&scenario("radial_bump.cfg")), "--out", s(&fwd)]);
    let base = std::fs::read_to_string(scenario("radial_bump.cfg")).unwrap();
    let noisy = |seed: u64, dir: &str| {
        let d = tmp.path().join(dir);
        std::fs::create_dir_all(&d).unwrap();
        let body = base.replace("threshold = 0.02", "threshold = 1");
        let cfg = write_config(&d, &format!("{body}noise = 1e-6\nseed = {seed}\n"));
        run_ok(&[
            "invert",
            "--config",
            s(&cfg),
            "--out",
            s(&d.join("out")),
            "--trace",
            s(&fwd.join("trace.txt")),
            "--method",
            "layer-strip",
        ]);
        std::fs::read(d.join("out/recovered.json")).unwrap()
    };
    let (a, b, c) = (noisy(7, "a"), noisy(7, "b"), noisy(8, "c"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn layer_strip_closed_loop() {
    let tmp = TempDir::new().unwrap();
    let (fwd, inv) = (tmp.path().join("fwd"), tmp.path().join("inv"));
    let cfg = scenario("radial_bump.cfg");
    run_ok(&["forward", "--config", s(&cfg), "--out", s(&fwd)]);
    run_ok(&[
        "invert",
        "--config",
        s(&cfg),
        "--out",
        s(&inv),
        "--trace",
        s(&fwd.join("trace.txt")),
        "--method",
        "layer-strip",
    ]);
    let m = manifest(&inv);
    assert_eq!(m["status"], "pass");
    assert!(m["checks"][0]["value"].as_f64().unwrap() < 0.02);
    let diag = std::fs::read_to_string(inv.join("diagnostics.csv")).unwrap();
    assert!(diag.lines().count() > 60);
}

#[test]
fn linearized_closed_loop() {
    let tmp = TempDir::new().unwrap();
    let (fwd, inv) = (tmp.path().join("fwd"), tmp.path().join("inv"));
    let cfg = scenario("linearized.cfg");
    run_ok(&["forward", "--config", s(&cfg), "--out", s(&fwd)]);
    run_ok(&[
        "invert",
        "--config",
        s(&cfg),
        "--out",
        s(&inv),
        "--trace",
        s(&fwd.join("trace.txt")),
        "--method",
        "linearized",
    ]);
    let errors = std::fs::read_to_string(inv.join("errors.csv")).unwrap();
    for line in errors.lines().skip(1) {
        let e: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(e < 0.02, "{line}");
    }
}

#[test]
fn kirchhoff_closed_loop_and_precondition() {
    let tmp = TempDir::new().unwrap();
    let (fwd, inv) = (tmp.path().join("fwd"), tmp.path().join("inv"));
    let cfg = scenario("kirchhoff.cfg");
    run_ok(&["forward", "--config", s(&cfg), "--out", s(&fwd)]);
    let trace = fwd.join("trace.txt");
    run_ok(&["invert", "--config", s(&cfg), "--out", s(&inv), "--trace", s(&trace), "--method", "kirchhoff"]);
    let m = manifest(&inv);
    assert_eq!(m["status"], "pass", "{m}");
    let cal: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(inv.join("calibration.json")).unwrap()).unwrap();
    assert!((cal["four_pi_kappa"].as_f64().unwrap() - 1.0).abs() < 1e-6);

    let short = write_config(tmp.path(), "R = 1/2\nT = 1\nh = 1/16\nq = zero\n");
    let o = conewave(&["invert", "--config", s(&short), "--out", s(&inv), "--trace", s(&trace), "--method", "kirchhoff"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("T >= 3R"));
}

#[test]
fn missing_trace_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let o = conewave(&[
        "invert",
        "--config",
        s(&scenario("radial_bump.cfg")),
        "--out",
        s(tmp.path()),
        "--trace",
        s(&tmp.path().join("nope.txt")),
        "--method",
        "layer-strip",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.txt"));
}

#[test]
fn energy_audit_zero_field_is_all_zero() {
    let tmp = TempDir::new().unwrap();
    let (fwd, audit) = (tmp.path().join("fwd"), tmp.path().join("audit"));
    let cfg = scenario("zero.cfg");
    run_ok(&["forward", "--config", s(&cfg), "--out", s(&fwd)]);
    run_ok(&["energy-audit", "--config", s(&cfg), "--out", s(&audit), "--field", s(&fwd.join("field"))]);
    for f in ["energy_field_sideways.csv", "energy_field_time.csv"] {
        let text = std::fs::read_to_string(audit.join(f)).unwrap();
        for line in text.lines().skip(1) {
            for v in line.split(',').skip(1) {
                assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{f}: {line}");
            }
        }
    }
}

#[test]
fn energy_audit_refinement_ratio_recorded() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("audit");
    run_ok(&["energy-audit", "--config", s(&scenario("energy.cfg")), "--out", s(&out)]);
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("refinement.json")).unwrap()).unwrap();
    assert!(r["sideways_gap_ratio"].as_f64().unwrap() >= 1.8);
    let rows = std::fs::read_to_string(out.join("energy_audit_sideways.csv")).unwrap();
    assert!(rows.starts_with("rho,J,gap\n0.25,"));
}

#[test]
fn energy_audit_pipeline_field() {
    let tmp = TempDir::new().unwrap();
    let (fwd, audit) = (tmp.path().join("fwd"), tmp.path().join("audit"));
    let cfg = scenario("energy.cfg");
    run_ok(&["forward", "--config", s(&cfg), "--out", s(&fwd)]);
    run_ok(&["energy-audit", "--config", s(&cfg), "--out", s(&audit), "--field", s(&fwd.join("field"))]);
    let m = manifest(&audit);
    let slack = m["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "inequality_slack")
        .unwrap();
    assert!(slack["value"].as_f64().unwrap() >= -5.0 / 32.0);
}

#[test]
fn qgamma_radial_and_single_mode() {
    let tmp = TempDir::new().unwrap();
    let radial = write_config(tmp.path(), "R = 1/4\nT = 5/4\nh = 1/32\nlmax = 2\nq = poly 1 1\n");
    let out = tmp.path().join("radial");
    run_ok(&["qgamma", "--config", s(&radial), "--out", s(&out)]);
    let j: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("qgamma.json")).unwrap()).unwrap();
    assert_eq!(j["gamma"].as_f64().unwrap(), 1.0);

    // a = r^2 and P = r^3/3 for a constant degree-2 coefficient.
    let single = write_config(tmp.path(), "R = 1/4\nT = 5/4\nh = 1/32\nlmax = 2\nq.2.0 = const 1\n");
    let out = tmp.path().join("single");
    run_ok(&["qgamma", "--config", s(&single), "--out", s(&out)]);
    let csv = std::fs::read_to_string(out.join("qgamma.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let (r, g) = line.split_once(',').unwrap();
        let (r, g): (f64, f64) = (r.parse().unwrap(), g.parse().unwrap());
        let sq = (1.0 + 6.0 / (r * r)).sqrt();
        let (p, a) = (r.powi(3) / 3.0, r * r);
        assert!((g - (p * sq * sq + a * sq) / (p * sq + a)).abs() < 1e-6, "{line}");
    }
}

#[test]
fn qgamma_empty_potential_file() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.json");
    std::fs::write(&empty, "").unwrap();
    let o = conewave(&[
        "qgamma",
        "--config",
        s(&scenario("zero.cfg")),
        "--out",
        s(&tmp.path().join("o")),
        "--potential",
        s(&empty),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty"));
}

#[test]
fn convergence_mms_and_zero() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("mms");
    run_ok(&["convergence", "--config", s(&scenario("mms.cfg")), "--out", s(&out)]);
    let m = manifest(&out);
    assert_eq!(m["sub_runs"].as_array().unwrap().len(), 3);
    for o in m["checks"][0]["value"].as_array().unwrap() {
        assert!(o.as_f64().unwrap() >= 1.8);
    }

    let out = tmp.path().join("zero");
    run_ok(&["convergence", "--config", s(&scenario("zero.cfg")), "--out", s(&out)]);
    let csv = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert_eq!(csv.matches("undefined").count(), 2);
    let m = manifest(&out);
    assert_eq!(m["checks"][0]["name"], "orders_undefined_flagged");
    let hashes: Vec<&str> = m["sub_runs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["config_hash"].as_str().unwrap())
        .collect();
    assert_eq!(hashes.len(), 3);
    assert!(hashes[0] != hashes[1] && hashes[1] != hashes[2]);
}

#[test]
fn failed_check_exits_two() {
    let tmp = TempDir::new().unwrap();
    let fwd = tmp.path().join("fwd");
    run_ok(&["forward", "--config", s(&scenario("radial_bump.cfg")), "--out", s(&fwd)]);
    let base = std::fs::read_to_string(scenario("radial_bump.cfg")).unwrap().replace("threshold = 0.02", "threshold = 1e-9");
    let cfg = write_config(tmp.path(), &base);
    let out = tmp.path().join("inv");
    let o = conewave(&[
        "invert",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--trace",
        s(&fwd.join("trace.txt")),
        "--method",
        "layer-strip",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(manifest(&out)["status"], "fail");
}

#[test]
fn out_dir_env_override() {
    let tmp = TempDir::new().unwrap();
    let target = tmp.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_conewave"))
        .args(["qgamma", "--config", s(&scenario("linearized.cfg"))])
        .env("CONEWAVE_OUT", &target)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(target.join("manifest.json").exists());
}
