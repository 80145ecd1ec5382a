use std::fs;
use std::process::Command;

fn mtlqr() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mtlqr"));
    cmd.env_remove("MTLQR_WORKERS");
    cmd
}

const SMALL: &str = "fleet = synthetic\nH = 4\nseeds = 3, 4\ntau1 = 8\nk_fin = 3\nN = 10\n";

#[test]
fn run_writes_outputs_and_flag_overrides_config_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, format!("{SMALL}output_dir = {}\n", dir.path().join("ignored").display())).unwrap();
    let out = dir.path().join("res");
    let st = mtlqr().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).args(["--workers", "2"]).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    for f in ["regret.csv", "config.txt", "failures.log", "diagnostics_H4_seed3.csv", "diagnostics_H4_seed4.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(!dir.path().join("ignored").exists());
    let csv = fs::read_to_string(out.join("regret.csv")).unwrap();
    assert!(csv.starts_with("H,t,mean_regret,stderr,n_seeds\n"));
    assert!(csv.lines().any(|l| l.starts_with("1,")) && csv.lines().any(|l| l.starts_with("4,")));
}

#[test]
fn worker_count_does_not_change_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let mut csvs = Vec::new();
    for (i, w) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("o{i}"));
        let st = mtlqr().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).args(["--workers", w]).status().unwrap();
        assert!(st.success());
        csvs.push(fs::read(out.join("regret.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "tau1 = 30\nbogus = 1\n").unwrap();
    let st = mtlqr().args(["run", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("line 2"));
    let missing = mtlqr().args(["fleet-info", "--config"]).arg(dir.path().join("nope.cfg")).status().unwrap();
    assert_eq!(missing.code(), Some(2));
}

#[test]
fn experiment_failure_exits_with_one() {
    // d_theta larger than H leaves no identifiable fleet for any seed.
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, "fleet = synthetic\nsynthetic_dtheta = 5\nH = 3\nseeds = 1\ntau1 = 8\nk_fin = 2\nN = 5\n").unwrap();
    let st = mtlqr().args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")).status().unwrap();
    assert_eq!(st.code(), Some(1));
    let log = fs::read_to_string(dir.path().join("o/failures.log")).unwrap();
    assert!(log.contains("H=3 seed=1"));
}

#[test]
fn check_reports_every_oracle() {
    let out = mtlqr().arg("check").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 6);
    assert!(text.lines().all(|l| l.starts_with("PASS ")));
}

#[test]
fn fleet_info_lists_each_size() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, "H = 5, 9\nseeds = 2\n").unwrap();
    let out = mtlqr().args(["fleet-info", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("H = 5 ") && text.contains("H = 9 ") && text.contains("d_theta = 5"));
    assert_eq!(text.matches("alpha^2 at K0").count(), 2);
}
