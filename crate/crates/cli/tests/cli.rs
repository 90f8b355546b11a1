use std::process::{Command, Output};

fn pamlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pamlab")).args(args).output().unwrap()
}

#[test]
fn config_errors_exit_1() {
    for args in [
        &["sweep", "--L", "3"][..],
        &["solve", "--kind", "sep", "--rho", "1.5"],
        &["conditions", "--kind", "svm", "--L", "8", "--horizons", "1,20"],
        &["sweep", "--no-such-flag"],
        &["sweep", "--workers", "0"],
    ] {
        assert_eq!(pamlab(args).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "kind = sep\ncolour = red\n").unwrap();
    let out = pamlab(&["solve", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn solve_writes_header_and_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# constant field\nkind = constant:0.8\nkappa = 0.4\nn_paths = 2000\n").unwrap();
    let out = pamlab(&["solve", "--config", cfg.to_str().unwrap(), "--d", "2", "--L", "4", "--t-end", "1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("# pamlab solve kind=constant:0.8 d=2 L=4 kappa=0.4"));
    assert!(lines[1].starts_with("seed,kind,d,L,kappa,gamma,rho,t_end,log_u0,step_count,ic,"));
    let fields: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(fields.len(), lines[1].split(',').count());
    let direct: f64 = fields[11].parse().unwrap();
    let closed: f64 = fields[16].parse().unwrap();
    assert!((direct - closed).abs() <= 1e-6 * closed);
}

#[test]
fn saved_trajectory_reproduces_solve() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("env.bin");
    let traj = traj.to_str().unwrap();
    let common = ["solve", "--kind", "sep", "--d", "2", "--L", "4", "--t-end", "1.5", "--n-paths", "1000"];
    let a = pamlab(&[&common[..], &["--save-traj", traj]].concat());
    let b = pamlab(&[&common[..], &["--load-traj", traj]].concat());
    assert!(a.status.success() && b.status.success());
    let row = |o: &Output| String::from_utf8_lossy(&o.stdout).lines().nth(2).unwrap().to_string();
    assert_eq!(row(&a), row(&b));
    let wrong = pamlab(&["solve", "--kind", "sep", "--d", "1", "--L", "4", "--load-traj", traj]);
    assert_eq!(wrong.status.code(), Some(1));
}

#[test]
fn correlate_and_conditions_emit_rows() {
    let out = pamlab(&["correlate", "--L", "8", "--n-env", "200", "--times", "0.5"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("correlation,isrw")).count(), 2);

    let out = pamlab(&["conditions", "--kind", "sep", "--L", "8", "--n-env", "20", "--horizons", "5,10"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("noisiness,sep")).count(), 2);
}

#[test]
fn selfcheck_passes() {
    let out = pamlab(&["selfcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().skip(2).all(|l| l.split(',').nth(2) == Some("1")));
}
