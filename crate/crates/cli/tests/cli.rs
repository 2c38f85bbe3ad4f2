use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gramswitch::output::{trace_header, SWITCHES_HEADER};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gramswitch"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "gramswitch {args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn summary_value(dir: &Path, key: &str) -> String {
    let text = fs::read_to_string(dir.join("summary.txt")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("{key} missing from summary"))
        .to_string()
}

fn run_to(cfg: &str, dir: &Path, extra: &[&str]) {
    let cfg = config(cfg);
    let mut args = vec![
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run_ok(&args);
}

#[test]
fn reference_run_writes_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    run_to("oscillator.toml", dir, &[]);

    let (header, rows) = read_csv(&dir.join("trace.csv"));
    assert_eq!(header, trace_header(2));
    assert!(rows.len() >= 50_001);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let (t, mode, g) = (col("t"), col("mode"), col("g"));
    let mut prev = f64::NEG_INFINITY;
    for row in &rows {
        assert_eq!(row.len(), header.len());
        let tv: f64 = row[t].parse().unwrap();
        assert!(tv >= prev);
        prev = tv;
        assert!(row[mode] == "observation" || row[mode] == "stabilization");
        // the Gramian is undefined for t < T
        assert_eq!(row[g].is_empty(), tv < 1.0 - 1e-12, "g column at t = {tv}");
        for (name, v) in header.iter().zip(row) {
            if name != "mode" && !v.is_empty() {
                assert!(v.parse::<f64>().unwrap().is_finite(), "{name} = {v}");
            }
        }
    }
    assert_eq!(rows.last().unwrap()[t].parse::<f64>().unwrap(), 50.0);

    let (sw_header, sw_rows) = read_csv(&dir.join("switches.csv"));
    assert_eq!(sw_header, SWITCHES_HEADER);
    let count: usize = summary_value(dir, "switch_count").parse().unwrap();
    assert_eq!(count, 11);
    assert_eq!(sw_rows.len() - 1, count);
    for (k, row) in sw_rows.iter().enumerate() {
        assert_eq!(row[0], (k + 1).to_string());
    }
    assert_eq!(sw_rows[0][2], "stabilization");
    assert_eq!(sw_rows[0][3], "timer");
    assert_eq!(sw_rows[0][1].parse::<f64>().unwrap(), 2.0);
    let closing = sw_rows.last().unwrap();
    assert_eq!(closing[3], "none_final");
    assert_eq!(closing[1].parse::<f64>().unwrap(), 50.0);
    assert_eq!(closing[2], summary_value(dir, "final_mode"));
    assert_eq!(summary_value(dir, "final_mode"), "stabilization");
    let eps: f64 = summary_value(dir, "final_eps_norm").parse().unwrap();
    assert!(eps <= 1e-4);
    let warned = fs::read_to_string(dir.join("summary.txt")).unwrap();
    assert!(warned.contains("warning = T outside certified range"));
}

#[test]
fn runs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_to("oscillator.toml", a.path(), &["--horizon", "12"]);
    run_to("oscillator.toml", b.path(), &["--horizon", "12"]);
    for f in ["trace.csv", "switches.csv"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn zero_horizon() {
    let tmp = tempfile::tempdir().unwrap();
    run_to("oscillator.toml", tmp.path(), &["--horizon", "0"]);
    let (_, rows) = read_csv(&tmp.path().join("trace.csv"));
    assert_eq!(rows.len(), 1);
    let (_, sw) = read_csv(&tmp.path().join("switches.csv"));
    assert_eq!(sw.len(), 1);
    assert_eq!(sw[0][2], "observation");
    assert_eq!(sw[0][3], "none_final");
    assert_eq!(summary_value(tmp.path(), "switch_count"), "0");
}

#[test]
fn equilibrium_and_bilinear_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let eq = config("equilibrium.toml");
    let bl = config("bilinear.toml");
    run_ok(&[
        "run",
        "--config",
        eq.to_str().unwrap(),
        "--config",
        bl.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    let eq_dir = tmp.path().join("equilibrium");
    assert_eq!(summary_value(&eq_dir, "switch_count"), "1");
    assert_eq!(
        summary_value(&eq_dir, "final_x_norm")
            .parse::<f64>()
            .unwrap(),
        0.0
    );
    assert!(tmp.path().join("bilinear/trace.csv").exists());
}

fn write_config(dir: &Path, edit: impl Fn(String) -> String) -> PathBuf {
    let text = edit(fs::read_to_string(config("oscillator.toml")).unwrap());
    let path = dir.join("edited.toml");
    fs::write(&path, text).unwrap();
    path
}

fn expect_config_error(edit: impl Fn(String) -> String, needle: &str) {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), edit);
    let out = bin()
        .args([
            "run",
            "--config",
            path.to_str().unwrap(),
            "--out",
            tmp.path().join("o").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(needle), "expected {needle:?} in {err}");
}

#[test]
fn config_errors_name_the_field() {
    expect_config_error(
        |s| s.replace("horizon = 50.0", "horizon = -1.0"),
        "run.horizon",
    );
    expect_config_error(
        |s| s.replace("x0 = [-10.0, 0.0]", "x0 = [-10.0]"),
        "initial.x0",
    );
    expect_config_error(
        |s| {
            s.replace(
                "s0 = [[1.0, 0.0], [0.0, 1.0]]",
                "s0 = [[1.0, 0.0], [0.0, -1.0]]",
            )
        },
        "initial.s0",
    );
    expect_config_error(
        |s| s.replace("name = \"oscillator\"", "name = \"pendulum\""),
        "system.name",
    );
    expect_config_error(
        |s| s.replace("alpha = 1.0", "alpha = 1.0\nalhpa = 2.0"),
        "alhpa",
    );
    expect_config_error(
        |s| {
            s.replace(
                "allow_uncertified_window = true",
                "allow_uncertified_window = false",
            )
        },
        "switching",
    );
    expect_config_error(|s| s.replace("step = 1e-3", "step = 0.5"), "integrator");
}

#[test]
fn verify_reference_run() {
    let cfg = config("oscillator.toml");
    let out = run_ok(&["verify", "--config", cfg.to_str().unwrap()]);
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in [
        "gramian_oracle: PASS",
        "variation_of_constants: PASS",
        "error_bound: PASS",
        "trace_bound: bound inapplicable",
    ] {
        assert!(text.contains(needle), "missing {needle:?} in\n{text}");
    }
}

#[test]
fn verify_trace_bound_applies_with_large_alpha() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), |s| {
        s.replace("t_obs = 2.0", "t_obs = 100.0")
            .replace("alpha = 1.0", "alpha = 3.0")
    });
    let out = run_ok(&[
        "verify",
        "--config",
        path.to_str().unwrap(),
        "--horizon",
        "10",
        "--check",
        "trace_bound",
    ]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("trace_bound: PASS"), "{text}");
    assert!(!text.contains("gramian_oracle"));
}

#[test]
fn tune_reports_constants_and_verdict() {
    let cfg = config("oscillator.toml");
    let out = run_ok(&["tune", "--config", cfg.to_str().unwrap()]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("window too large"), "{text}");
    assert!(text.contains("Verdict: NOT CERTIFIED"));
    let value = |key: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key}=")))
            .unwrap_or_else(|| panic!("{key} missing"))
            .parse()
            .unwrap()
    };
    let e3 = 3.0f64.exp();
    assert!((value("eta") - (e3 - 4.0) / (e3 + 2.0)).abs() < 1e-12);
    assert!(value("kappa") < 1.0);
    assert!((value("g0") - 0.0792645).abs() < 1e-6);
}

#[test]
fn tune_without_section_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), |s| s[..s.find("[tuning]").unwrap()].to_string());
    let out = bin()
        .args(["tune", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[tuning]"));
}
