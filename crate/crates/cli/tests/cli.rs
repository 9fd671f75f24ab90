use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn rdid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdid"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run_with(config: &Path, out: &Path, command: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        command,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ];
    args.extend_from_slice(extra);
    rdid(&args)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const SMALL_COMPETING: &str = r#"
[system]
preset = "competing-species"
beta = -1.0

[grid]
nx = 50
nt = 60

[measurement]
mode = "time-trace"

[inversion]
max_iters = 3
stagnation_tol = 0.0

[output]
svg = true
"#;

#[test]
fn forward_eigen_matches_closed_form() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "eigen.toml",
        "[system]\npreset = \"example1-eigen\"\nc = 0.5\n[output]\nsnapshots = [0.0, 0.5, 1.0]\n",
    );
    let out = tmp.path().join("out");
    let o = run_with(&cfg, &out, "forward", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x,u,v"));
    let lambda = (std::f64::consts::PI / 2.0).powi(2);
    let mut rows = 0;
    for line in lines {
        let r: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        let exact = (-(lambda - 0.5) * r[0]).exp()
            * 2f64.sqrt()
            * (std::f64::consts::PI / 2.0 * r[1]).sin();
        assert!((r[2] - exact).abs() <= 1e-4, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 3 * 200);
    assert!(out.join("forward_u.svg").exists());
}

#[test]
fn forward_competing_species_runs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        "[system]\npreset = \"competing-species\"\nbeta = -1.0\n[output]\nsvg = false\n",
    );
    let out = tmp.path().join("out");
    let o = run_with(&cfg, &out, "forward", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("trajectory.csv").exists());
    assert!(!out.join("forward_u.svg").exists());
}

#[test]
fn malformed_configs_exit_64_without_outputs() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        "[system\npreset = 1",
        "[system]\npreset = \"competing-species\"\nbogus = 3\n",
        "[system]\npreset = \"no-such-preset\"\n",
        "[system]\npreset = \"competing-species\"\nf = [\"u*(\", \"v\"]\n",
        "[system]\npreset = \"competing-species\"\n[grid]\nnx = 2\n",
    ];
    for (k, text) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("bad{k}.toml"), text);
        let out = tmp.path().join(format!("out{k}"));
        for command in ["forward", "invert"] {
            let o = run_with(&cfg, &out, command, &[]);
            assert_eq!(
                code(&o),
                64,
                "{text}: {}",
                String::from_utf8_lossy(&o.stderr)
            );
            assert!(!out.exists(), "{text}");
        }
    }
    let o = rdid(&["invert"]);
    assert_eq!(code(&o), 64);
    let o = rdid(&["invert", "--mode", "sideways"]);
    assert_eq!(code(&o), 64);
}

#[test]
fn invert_writes_artifacts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL_COMPETING);
    let out = tmp.path().join("out");
    let o = run_with(&cfg, &out, "invert", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in [
        "measurement.csv",
        "smoothed.csv",
        "errors.csv",
        "profiles.csv",
        "summary.txt",
        "reconstruction_f1.svg",
        "reconstruction_f2.svg",
        "errors.svg",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
    let errors = fs::read_to_string(out.join("errors.csv")).unwrap();
    assert!(errors.starts_with("iter,err_f1,err_f2\n"));
    assert_eq!(errors.lines().count(), 1 + 1 + 3);
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("verdict: converged"), "{summary}");
    let svg = fs::read_to_string(out.join("reconstruction_f1.svg")).unwrap();
    assert!(svg.contains("stroke-dasharray"));
}

#[test]
fn same_seed_gives_identical_csv() {
    let tmp = TempDir::new().unwrap();
    let text = format!("{SMALL_COMPETING}\n").replace(
        "mode = \"time-trace\"",
        "mode = \"time-trace\"\ndelta = 0.01",
    );
    let cfg = write_config(tmp.path(), "noisy.toml", &text);
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|d| tmp.path().join(d)).collect();
    for (dir, seed) in dirs.iter().zip(["5", "5", "6"]) {
        let o = run_with(&cfg, dir, "invert", &["--seed", seed]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in [
        "measurement.csv",
        "smoothed.csv",
        "errors.csv",
        "profiles.csv",
    ] {
        let a = fs::read(dirs[0].join(name)).unwrap();
        let b = fs::read(dirs[1].join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    assert_ne!(
        fs::read(dirs[0].join("measurement.csv")).unwrap(),
        fs::read(dirs[2].join("measurement.csv")).unwrap()
    );
}

#[test]
fn measurement_file_is_inverted() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL_COMPETING);
    let first = tmp.path().join("first");
    assert_eq!(code(&run_with(&cfg, &first, "invert", &[])), 0);
    let data = first.join("measurement.csv");
    let text = SMALL_COMPETING.replace(
        "mode = \"time-trace\"",
        &format!("mode = \"time-trace\"\nfile = {:?}", data.to_str().unwrap()),
    );
    let cfg = write_config(tmp.path(), "file.toml", &text);
    let second = tmp.path().join("second");
    let o = run_with(&cfg, &second, "invert", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read(first.join("errors.csv")).unwrap(),
        fs::read(second.join("errors.csv")).unwrap()
    );
    let o = run_with(
        &cfg,
        &tmp.path().join("third"),
        "invert",
        &["--mode", "final-time"],
    );
    assert_eq!(code(&o), 64);
}

#[test]
fn strong_interaction_time_trace_diverges() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "d.toml",
        "[system]\npreset = \"competing-species\"\n[measurement]\nmode = \"time-trace\"\n",
    );
    let out = tmp.path().join("out");
    let o = run_with(&cfg, &out, "invert", &["--beta", "1.5"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("verdict: diverged"), "{summary}");
}

#[test]
fn sweep_aggregates_runs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL_COMPETING);
    let out = tmp.path().join("out");
    let o = run_with(&cfg, &out, "sweep", &["--beta", "-1,0.3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("beta,iter,err_f1,err_f2\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
    let summary = fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(out.join("rates.svg").exists());

    let empty = tmp.path().join("empty");
    let o = run_with(&cfg, &empty, "sweep", &[]);
    assert_eq!(code(&o), 64);
    assert!(!empty.exists());
}

#[test]
fn diagnose_reports_checks() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "e.toml",
        "[system]\npreset = \"example1-eigen\"\nc = 0.5\n[grid]\nnx = 100\nnt = 100\n[measurement]\nmode = \"final-time\"\n",
    );
    let out = tmp.path().join("out");
    let o = run_with(&cfg, &out, "diagnose", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("diagnose.txt")).unwrap();
    assert!(text.contains("decay fit"), "{text}");
    assert!(text.contains("range condition: violated"), "{text}");
    assert!(text.contains("dissipativity"), "{text}");
    assert!(text.contains("competing species bound"), "{text}");
    let grid = fs::read_to_string(out.join("dissipativity.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 41 * 41);
}
