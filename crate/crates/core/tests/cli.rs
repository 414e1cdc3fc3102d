use std::path::Path;
use std::process::{Command, Output};

fn cctb(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cctb")).args(args).current_dir(cwd).env_remove("CCTB_JOBS").output().expect("spawn cctb")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cctb(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(cctb(&["run", "--xa", "abc"], dir.path()).status.code(), Some(1));
    assert_eq!(cctb(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[context]\ntype = \"merging\"\ncd = -1\n").unwrap();
    let o = cctb(&["--config", "bad.toml", "generate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("context.cd"));
    assert_eq!(cctb(&["--config", "missing.toml", "generate"], dir.path()).status.code(), Some(2));
    assert_eq!(cctb(&["run", "--ve", "9"], dir.path()).status.code(), Some(2));
}

#[test]
fn run_reports_verdicts_and_gates_on_unsafe() {
    let dir = tempfile::tempdir().unwrap();
    let safe = cctb(&["run", "--context", "cross_yield", "--xa", "37.7", "--xf", "5.3", "--out", "t"], dir.path());
    assert_eq!(safe.status.code(), Some(0));
    assert!(stdout(&safe).starts_with("verdict=PS"));
    let csv = std::fs::read_to_string(dir.path().join("t/trace.csv")).unwrap();
    assert!(csv.starts_with("t,vehicle,s,v,lat,branch,light"));

    let bad = cctb(&["run", "--context", "cross_yield", "--policy", "aggressive", "--xa", "5", "--format", "json"], dir.path());
    assert_eq!(bad.status.code(), Some(3));
    let v: serde_json::Value = serde_json::from_str(&stdout(&bad)).unwrap();
    assert_ne!(v["verdict"], "PS");
}

#[test]
fn grid_writes_artifacts_and_report_rerenders() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "[context]\ntype = \"cross_yield\"\n[grid]\nxa = [0, 40]\nxf = [0, 40]\nve = [0]\nrepeats = 2\n[output]\ndir = \"out\"\nformats = [\"csv\", \"json\", \"ansi\"]\n",
    )
    .unwrap();
    let o = cctb(&["--config", "c.toml", "grid", "--format", "csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    for f in ["campaign.json", "grid0_ve0.csv", "grid0_ve0.ansi"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(out.join("grid0_ve0.csv")).unwrap().trim_end(), stdout(&o).trim_end());

    let r = cctb(&["report", "out/campaign.json", "--format", "csv"], dir.path());
    assert_eq!(r.status.code(), Some(0));
    assert_eq!(stdout(&r), stdout(&o));

    let s = cctb(&["score", "out/campaign.json"], dir.path());
    assert_eq!(s.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&s)).unwrap();
    assert!(v[0]["comparison"]["mean_sc"].as_f64().is_some());
}

#[test]
fn unsafe_campaign_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = cctb(&["grid", "--context", "merging", "--policy", "aggressive", "--repeats", "1", "--jobs", "2"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn score_ledger() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("l.json"),
        r#"{ "R": 0.85, "failure": null, "incidents": {"pedestrian_collision": 1, "red_light": 2} }"#,
    )
    .unwrap();
    let o = cctb(&["score", "l.json"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["Sc"].as_f64().unwrap() - 20.825).abs() < 1e-9);
    assert!((v["contributions"]["red_light"].as_f64().unwrap() - 0.49).abs() < 1e-12);

    std::fs::write(dir.path().join("bad.json"), r#"{ "R": 1, "failure": null, "incidents": {"meteor": 1} }"#).unwrap();
    assert_eq!(cctb(&["score", "bad.json"], dir.path()).status.code(), Some(4));
}

#[test]
fn jobs_env_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_cctb"))
        .args(["grid", "--context", "cross_light", "--repeats", "1", "--format", "json"])
        .env("CCTB_JOBS", "3")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["execution"]["jobs"], 3);
}

#[test]
fn generate_and_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let g = cctb(&["generate", "--context", "cross_yield"], dir.path());
    assert_eq!(g.status.code(), Some(0));
    assert!(stdout(&g).contains("x_a_hat=37.615"));

    let e = cctb(&["estimate", "--speeds", "0,2,4", "--dists", "0,1,5"], dir.path());
    assert_eq!(e.status.code(), Some(0));
    let tables = cctb::kinematics::AdTables::from_csv(&stdout(&e)).unwrap();
    assert_eq!(tables.speeds(), &[0.0, 2.0, 4.0]);
}
