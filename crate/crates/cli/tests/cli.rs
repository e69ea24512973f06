use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_coarselat"));
    c.env_remove("COARSELAT_THREADS");
    c
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, json).unwrap();
    p
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    bin()
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--output")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn assert_manifest_complete(dir: &Path) -> Value {
    let m = read_json(&dir.join("manifest.json"));
    for a in m["artifacts"].as_array().unwrap() {
        let f = a["file"].as_str().unwrap();
        let len = std::fs::metadata(dir.join(f)).unwrap().len();
        assert!(len > 0, "{f} is empty");
        assert_eq!(len, a["bytes"].as_u64().unwrap());
    }
    assert_eq!(m["csv_schema"]["version"], 1);
    m
}

#[test]
fn forward_two_periodic_vanishes_together() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"command":"forward","params":{"beta":-1},"window_size":16,
            "initial_data":{"kind":"periodic","pattern":[2,1]},"t_end":2}"#,
    );
    let out = tmp.path().join("out");
    let o = run("forward", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = assert_manifest_complete(&out);
    assert_eq!(m["passed"], true);

    let events = std::fs::read_to_string(out.join("events.csv")).unwrap();
    let mut lines = events.lines();
    assert_eq!(lines.next(), Some("time,site,kind"));
    let vanish: Vec<(f64, usize)> = lines
        .filter(|l| l.ends_with(",vanish"))
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap())
        })
        .collect();
    let sites: Vec<usize> = vanish.iter().map(|v| v.1).collect();
    assert_eq!(sites, (1..16).step_by(2).collect::<Vec<_>>());
    let t0 = vanish[0].0;
    assert!(t0 > 0.0);
    assert!(vanish.iter().all(|v| (v.0 - t0).abs() <= 1e-6));

    let last_rows: Vec<String> = std::fs::read_to_string(out.join("trajectory.csv"))
        .unwrap()
        .lines()
        .rev()
        .take(16)
        .map(String::from)
        .collect();
    for row in last_rows {
        let f: Vec<&str> = row.split(',').collect();
        let (site, mass): (usize, f64) = (f[1].parse().unwrap(), f[2].parse().unwrap());
        let want = if site % 2 == 0 { 3.0 } else { 0.0 };
        assert!((mass - want).abs() < 1e-9, "{row}");
    }
}

#[test]
fn kernel_rows_sum_to_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"command":"kernel","params":{"beta":1},"t_list":[0.5,1,5]}"#,
    );
    let out = tmp.path().join("out");
    let o = run("kernel", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_manifest_complete(&out);

    let text = std::fs::read_to_string(out.join("kernel.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,k,psi,U_xi,xi"));
    let mut sums: Vec<(String, f64)> = Vec::new();
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        let psi: f64 = f[2].parse().unwrap();
        match sums.last_mut() {
            Some((t, s)) if t == f[0] => *s += psi,
            _ => sums.push((f[0].to_string(), psi)),
        }
    }
    assert_eq!(sums.len(), 3);
    for (t, s) in sums {
        assert!((s - 1.0).abs() <= 1e-9, "t = {t}: {s}");
    }
    let fits = read_json(&out.join("fits.json"));
    let kinds: Vec<&str> = fits.as_array().unwrap().iter().map(|f| f["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["aronson", "nash"]);
}

#[test]
fn nonlinear_kernel_conserves_mass() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"command":"kernel","params":{"beta":0.5},"window_size":41,"t_list":[0.5,2]}"#,
    );
    let out = tmp.path().join("out");
    let o = run("kernel", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = assert_manifest_complete(&out);
    let files: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|a| a["file"].as_str().unwrap()).collect();
    assert!(files.contains(&"trajectory.csv") && files.contains(&"kernel.csv"));
}

#[test]
fn identical_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"command":"backward","params":{"beta":0.5},"window_size":32,
            "initial_data":{"kind":"random","lo":0.0,"hi":1.0},"t_end":1,"record_interval":0.1}"#,
    );
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for d in [&a, &b] {
        let o = run("backward", &cfg, d, &["--seed", "11"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run("backward", &cfg, &c, &["--seed", "12"]);
    assert!(o.status.success());
    for f in ["trajectory.csv", "events.csv", "fits.json"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(
        std::fs::read(a.join("trajectory.csv")).unwrap(),
        std::fs::read(c.join("trajectory.csv")).unwrap()
    );
    let m = read_json(&a.join("manifest.json"));
    assert_eq!(m["config"]["seed"], 11);
    assert!(m["stats"]["steps"].as_u64().unwrap() > 0);
}

#[test]
fn sweep_over_n_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"command":"sweep","sweep_command":"construct","params":{"beta":0.5},
            "window_size":96,"sweep_axis":{"name":"n","values":[0,1,2]},"threads":3,
            "construction":{"probes":1}}"#,
    );
    let one = tmp.path().join("one");
    let o = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--output")
        .arg(&one)
        .env("COARSELAT_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let three = tmp.path().join("three");
    let o = run("sweep", &cfg, &three, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let summary = read_json(&three.join("summary.json"));
    assert_eq!(summary["entries"].as_array().unwrap().len(), 3);
    for n in 0..3 {
        let sub = format!("n={n}");
        let m = assert_manifest_complete(&three.join(&sub));
        assert_eq!(m["passed"], true);
        assert_eq!(m["config"]["n"], n);
        for f in ["trajectory.csv", "events.csv", "schedule.json"] {
            assert_eq!(
                std::fs::read(one.join(&sub).join(f)).unwrap(),
                std::fs::read(three.join(&sub).join(f)).unwrap(),
                "{sub}/{f}"
            );
        }
    }
    // n = 0 is the constant terminal state from the start.
    let traj = std::fs::read_to_string(three.join("n=0/trajectory.csv")).unwrap();
    let masses: Vec<f64> = traj.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(masses.iter().all(|&m| m == 1.0));
    let events = std::fs::read_to_string(three.join("n=0/events.csv")).unwrap();
    assert_eq!(events.lines().count(), 1);
    let schedule = read_json(&three.join("n=2/schedule.json"));
    assert_eq!(schedule["creation_ops"].as_array().unwrap().len(), 2);
    assert_eq!(schedule["t_events"].as_array().unwrap().len(), 3);
}

#[test]
fn empty_sweep_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"command":"sweep","params":{"beta":0.5},"sweep_axis":{"name":"beta","values":[]}}"#,
    );
    let out = tmp.path().join("out");
    let o = run("sweep", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn config_and_numerical_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"command":"forward","params":{"beta":0.5}}"#);
    assert_eq!(run("forward", &cfg, &tmp.path().join("a"), &[]).status.code(), Some(2));

    let cfg = write_config(
        tmp.path(),
        r#"{"command":"forward","params":{"beta":0.5},"window_size":8,
            "initial_data":{"kind":"file","path":"missing.json"},"t_end":1}"#,
    );
    assert_eq!(run("forward", &cfg, &tmp.path().join("b"), &[]).status.code(), Some(2));

    // Zero data with beta < 0 and no regularisation has a singular flux.
    let cfg = write_config(
        tmp.path(),
        r#"{"command":"backward","params":{"beta":-1},"window_size":8,
            "initial_data":{"kind":"periodic","pattern":[1,0]},"t_end":1}"#,
    );
    assert_eq!(run("backward", &cfg, &tmp.path().join("c"), &[]).status.code(), Some(3));
}

#[test]
fn analyze_reads_a_forward_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"command":"forward","params":{"beta":0.5},"window_size":32,
            "initial_data":{"kind":"random","lo":0.2,"hi":1.0,"seed":3},"t_end":4,"record_interval":0.25}"#,
    );
    let fwd = tmp.path().join("fwd");
    assert!(run("forward", &cfg, &fwd, &[]).status.success());

    let init = tmp.path().join("init.json");
    std::fs::write(&init, r#"{"masses":[1,0.5,1,0.5],"window_size":4,"boundary":"periodic"}"#).unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"command":"analyze","params":{"beta":0.5},"input":"fwd/trajectory.csv"}"#,
    );
    let out = tmp.path().join("an");
    let o = run("analyze", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_manifest_complete(&out);
    let fits = read_json(&out.join("fits.json"));
    assert!(fits.as_array().unwrap().iter().any(|f| f["kind"] == "holder_time"));

    let cfg = write_config(
        tmp.path(),
        r#"{"command":"forward","params":{"beta":0.5},"window_size":4,
            "initial_data":{"kind":"file","path":"init.json"},"t_end":1}"#,
    );
    let o = run("forward", &cfg, &tmp.path().join("file"), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
