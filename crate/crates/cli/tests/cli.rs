use serde_json::Value;
use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn bilheat(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bilheat"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("binary runs")
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn runs_are_byte_identical() {
    let config =
        "[moment_solve]\ninitial = \"c5 + s3\"\nhorizon = 0.5\ncost_horizons = [0.5, 0.7, 1.0]\n";
    for cmd in [
        "moment-solve",
        "constants",
        "density-check",
        "audit-potentials",
    ] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        for d in [&a, &b] {
            std::fs::write(d.path().join("run.toml"), config).unwrap();
            let out = bilheat(
                d.path(),
                &[cmd, "--config", "run.toml", "--out", "out", "--seed", "3"],
            );
            assert!(
                out.status.success(),
                "{cmd}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        }
        let (fa, fb) = (files(&a.path().join("out")), files(&b.path().join("out")));
        assert!(
            fa.contains_key("summary.json") && fa.contains_key("config.toml"),
            "{cmd}: {:?}",
            fa.keys()
        );
        assert_eq!(fa, fb, "{cmd} artifacts differ between runs");
    }
}

#[test]
fn resolved_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("a.toml"),
        "[pde]\nkappa = 0.5\n[constants]\nnu = 2.0\n",
    )
    .unwrap();
    let printed = bilheat(
        dir.path(),
        &["constants", "--config", "a.toml", "--print-config"],
    );
    assert!(printed.status.success());
    let text = String::from_utf8(printed.stdout).unwrap();
    assert!(text.contains("kappa = 0.5"));
    std::fs::write(dir.path().join("b.toml"), &text).unwrap();
    let again = bilheat(
        dir.path(),
        &["constants", "--config", "b.toml", "--print-config"],
    );
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);

    let run = bilheat(
        dir.path(),
        &["constants", "--config", "b.toml", "--out", "o"],
    );
    assert!(run.status.success());
    let written = std::fs::read_to_string(dir.path().join("o/config.toml")).unwrap();
    let reprint = bilheat(
        dir.path(),
        &[
            "constants",
            "--config",
            "o/config.toml",
            "--out",
            "o",
            "--print-config",
        ],
    );
    assert_eq!(String::from_utf8(reprint.stdout).unwrap(), written);
}

#[test]
fn constants_for_the_degenerate_case() {
    let dir = tempfile::tempdir().unwrap();
    let nu = 1.5;
    let c_q = 3.0f64;
    let cfg = format!("[pde]\nkappa = 0.0\np = 0\n[constants]\nnu = {nu}\nc_q = {c_q}\n");
    std::fs::write(dir.path().join("c.toml"), cfg).unwrap();
    let out = bilheat(
        dir.path(),
        &["constants", "--config", "c.toml", "--out", "o"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let s = summary(&dir.path().join("o"));
    let pack = &s["result"]["pack"];
    // empty sums: γ₁ = 0, γ₂ = 1
    assert_eq!(pack["gamma1"].as_f64(), Some(0.0));
    assert_eq!(pack["gamma2"].as_f64(), Some(1.0));
    let want = 2.0 * nu + ((c_q * c_q).ln() + 1.0 + 8f64.ln()) / 2.0;
    let got = pack["gamma0"].as_f64().unwrap();
    assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
    assert_eq!(s["result"]["k_below_exp_bound"], Value::Bool(true));
    assert_eq!(s["kind"], "constants");
}

#[test]
fn bad_fields_are_named() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("x.toml"), "[pde]\nkappa = 1.0\nn = 127\n").unwrap();
    let out = bilheat(
        dir.path(),
        &["simulate", "--config", "x.toml", "--out", "o"],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("pde.n"));

    std::fs::write(dir.path().join("y.toml"), "[pde]\nkapa = 1.0\n").unwrap();
    let out = bilheat(
        dir.path(),
        &["simulate", "--config", "y.toml", "--out", "o"],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("kapa"));
}

#[test]
fn simulate_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("s.toml"),
        "[simulate]\nhorizon = 0.2\nsamples = 5\n[pde]\nn = 32\npreset = \"mtA_d1\"\n",
    )
    .unwrap();
    let out = bilheat(
        dir.path(),
        &["simulate", "--config", "s.toml", "--out", "o"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let o = dir.path().join("o");
    for f in [
        "trajectory.csv",
        "final_state.csv",
        "norms.svg",
        "summary.json",
        "config.toml",
    ] {
        assert!(o.join(f).exists(), "missing {f}");
    }
    let s = summary(&o);
    assert_eq!(s["result"]["final_time"].as_f64(), Some(0.2));
}
