use std::path::Path;
use std::process::{Command, Output};

fn taco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taco")).args(args).env("HDT_LOG", "error").output().expect("spawn taco")
}

fn short_config(dir: &Path) -> String {
    let p = dir.join("short.toml");
    std::fs::write(&p, "[system]\nnum_pts = 4\nnum_ess = 2\nframes = 2\nslots_per_frame = 3\n").unwrap();
    p.to_str().unwrap().to_string()
}

fn summary(dir: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn all_local_run_reports_local_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let out = dir.path().join("out");
    let o = taco(&["run", &cfg, "--policy", "all_local", "--seed", "9", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = summary(&out);
    assert_eq!(rows[0].join(","), taco_core::report::SUMMARY_HEADER.join(","));
    assert_eq!(rows[1][0], "all_local");
    assert_eq!(rows[1][1], "9");
    assert_eq!(rows[1][4], "0.5");
    assert_eq!(rows[1][11], "ok");
    let slots = std::fs::read_to_string(out.join("slots.csv")).unwrap();
    assert_eq!(slots.lines().count(), 1 + 2 * 3 * 4);
    assert!(slots.starts_with("t,tau,pt,policy,a_es,x,y,b,f,z,T_tol,E_tol_share,H,E_queue,A,"));
}

#[test]
fn missing_config_exits_1_with_path() {
    let o = taco(&["run", "/nonexistent/scenario.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/scenario.toml"));
}

#[test]
fn unknown_key_and_bad_flag_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "[system]\nnum_pts = 4\nwarp_speed = 9\n").unwrap();
    let o = taco(&["run", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("system.warp_speed"));
    let cfg = short_config(dir.path());
    assert_eq!(taco(&["run", &cfg, "--policy", "fastest"]).status.code(), Some(1));
    assert_eq!(taco(&["run", &cfg, "--round-z", "sometimes"]).status.code(), Some(1));
    assert_eq!(taco(&["validate", "--suite", "everything"]).status.code(), Some(1));
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, sign) in [(&a, "physical"), (&b, "literal")] {
        let o = taco(&[
            "run", &cfg, "--policy", "taco", "--round-z", "probabilistic", "--pathloss-sign", sign, "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_ne!(std::fs::read(a.join("slots.csv")).unwrap(), std::fs::read(b.join("slots.csv")).unwrap());
}

#[test]
fn sweep_writes_rows_in_order_with_plot_script() {
    let dir = tempfile::tempdir().unwrap();
    short_config(dir.path());
    let spec = dir.path().join("k.toml");
    std::fs::write(
        &spec,
        "param = \"system.slots_per_frame\"\nvalues = [2, 3]\nseeds = [4, 5]\npolicies = [\"lot\", \"taco\"]\nconfig = \"short.toml\"\nout = \"res\"\n",
    )
    .unwrap();
    let o = taco(&["sweep", spec.to_str().unwrap(), "--jobs", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let res = dir.path().join("res");
    let rows = summary(&res);
    let order: Vec<(String, String, String)> =
        rows[1..].iter().map(|r| (r[3].clone(), r[1].clone(), r[0].clone())).collect();
    let mut want = Vec::new();
    for v in ["2", "3"] {
        for s in ["4", "5"] {
            for p in ["lot", "taco"] {
                want.push((v.to_string(), s.to_string(), p.to_string()));
            }
        }
    }
    assert_eq!(order, want);
    assert!(rows[1..].iter().all(|r| r[2] == "system.slots_per_frame" && r[11] == "ok"));
    let plot = std::fs::read_to_string(res.join("plot.gp")).unwrap();
    assert!(plot.contains("means.csv") && plot.contains("set xlabel 'system.slots_per_frame'"));
    let means = std::fs::read_to_string(res.join("means.csv")).unwrap();
    assert_eq!(means.lines().count(), 1 + 4);
}

#[test]
fn bad_sweep_specs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    for (name, body) in [
        ("empty.toml", "param = \"solver.lyapunov_v\"\nvalues = []\nseeds = [1]\nout = \"x\"\n"),
        ("noseed.toml", "param = \"solver.lyapunov_v\"\nvalues = [1.0]\nseeds = []\nout = \"x\"\n"),
        ("param.toml", "param = \"solver.warp\"\nvalues = [1.0]\nseeds = [1]\nout = \"x\"\n"),
        ("value.toml", "param = \"system.num_pts\"\nvalues = [0]\nseeds = [1]\nout = \"x\"\n"),
    ] {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        let o = taco(&["sweep", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(1), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn validate_reports_counts() {
    let o = taco(&["validate", "--suite", "drift", "--suite", "envelopes"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("drift: 10000 checks, 10000 passed, 0 failed"), "{text}");
    assert!(text.contains("all 2 suites passed"));
}
