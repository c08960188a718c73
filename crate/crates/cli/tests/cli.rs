use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use css_core::io::load_field;

fn lab(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_css-lab"));
    cmd.args(args).env("RUST_LOG", "error");
    match threads {
        Some(t) => cmd.env("CSS_LAB_THREADS", t),
        None => cmd.env_remove("CSS_LAB_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn body(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn identical_configs_give_identical_bodies_for_any_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "id.cfg", "study=identity-suite\nm=0,1,2\nn=512\nr_max=40\nseed=11\n");
    let mut bodies = Vec::new();
    for (k, threads) in ["1", "3", "3"].iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        let o = lab(&["study", "--config", &cfg, "--out", out.to_str().unwrap()], Some(threads));
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        bodies.push(body(&out.join("summary.csv")));
        assert!(out.join("report.txt").exists());
        assert!(out.join("cells/cell_002.csv").exists());
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
    let header = bodies[0].lines().next().unwrap();
    assert!(header.ends_with(",status,n,r_max,dt,seed,version"), "{header}");
    let rows: Vec<&str> = bodies[0].lines().skip(1).collect();
    assert_eq!(rows.len(), 21);
    assert!(rows.iter().all(|r| r.ends_with(&format!(",ok,512,40,0.0001,11,{}", env!("CARGO_PKG_VERSION")))));
    assert!(rows.iter().all(|r| r.contains(",true,")));

    let meta = fs::read_to_string(dir.path().join("run0/summary.csv")).unwrap();
    assert!(meta.lines().any(|l| l == "# seed=11"));
    assert!(meta.lines().any(|l| l.starts_with("# created_unix=")));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let bad_key = write_config(dir.path(), "a.cfg", "study=soliton-table\ncolour=red\n");
    let o = lab(&["study", "--config", &bad_key, "--out", out], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown key `colour`"), "{}", stderr(&o));

    let no_out = write_config(dir.path(), "b.cfg", "study=identity-suite\n");
    assert_eq!(lab(&["study", "--config", &no_out], None).status.code(), Some(2));

    let good = write_config(dir.path(), "c.cfg", "study=identity-suite\nm=1\nn=256\nr_max=30\n");
    assert_eq!(lab(&["study", "--config", &good, "--out", out], Some("0")).status.code(), Some(2));
    assert_eq!(lab(&["study", "--config", &good, "--out", out], Some("2")).status.code(), Some(0));

    let failing = write_config(dir.path(), "d.cfg", "study=soliton-table\nm=1\ng=1.5\nn=64\nr_max=0.05\n");
    let o = lab(&["study", "--config", &failing, "--out", out], None);
    assert_eq!(o.status.code(), Some(1));
    let summary = body(&dir.path().join("out/summary.csv"));
    assert!(summary.lines().nth(1).unwrap().contains(",failed: "), "{summary}");
    assert!(fs::read_to_string(dir.path().join("out/report.txt")).unwrap().contains("FAILED"));
}

#[test]
fn one_sweep_keeps_going_past_failed_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.cfg", "study=soliton-table\nm=1\ng=1.5,1.0\nn=64\nr_max=0.05\n");
    let out = dir.path().join("out");
    let o = lab(&["study", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    let summary = body(&out.join("summary.csv"));
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].contains("failed: ") && rows[1].contains(",ok,"), "{summary}");
}

#[test]
fn field_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();

    let o = lab(&["soliton", "--m", "1", "--g", "1.5", "--n", "400", "--rmax", "20", "--out", &p("q.csv")], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("charge="));
    let (q, meta) = load_field::<f64>(p("q.csv")).unwrap();
    assert_eq!(meta["alpha"], "1");
    assert!(meta["residual_norm"].parse::<f64>().unwrap() < 1e-9);

    let o = lab(&["diagnose", "--field", &p("q.csv")], None);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,mass,energy,energy_sd,l4,virial_v,virial_dv,morawetz");
    let row: Vec<f64> = lines[1].split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(row.len(), 8);
    assert!((row[1] - meta["charge"].parse::<f64>().unwrap()).abs() < 1e-12 * row[1]);
    assert!(row[7].abs() < 1e-12, "a real profile carries no momentum");

    let o = lab(&["gauge", "--field", &p("q.csv")], None);
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("r,a_theta,a_zero"));
    assert_eq!(text.lines().count(), 401);

    let o = lab(&["modfit", "--state", &p("q.csv"), "--profile", &p("q.csv"), "--mode", "nearest"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let fit: Vec<f64> = stdout(&o).lines().nth(1).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert!((fit[0] - 1.0).abs() < 1e-10 && fit[1].abs() < 1e-10 && fit[2] < 1e-8, "{fit:?}");

    let o = lab(&["spectrum", "--profile", &p("q.csv"), "--out", &p("psi.csv")], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("lambda_min_projected=")));
    let (psi, psi_meta) = load_field::<f64>(p("psi.csv")).unwrap();
    assert_eq!(psi.grid().n(), q.grid().n());
    assert!(psi_meta["lambda_min"].parse::<f64>().unwrap() < 0.0);

    let traj = p("traj");
    let o = lab(
        &[
            "evolve",
            "--init",
            &p("q.csv"),
            "--dt",
            "1e-3",
            "--t-end",
            "0.1",
            "--sample-every",
            "25",
            "--track",
            "--profile",
            &p("q.csv"),
            "--out",
            &traj,
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = body(&dir.path().join("traj/report.csv"));
    assert_eq!(report.lines().next(), Some("t,mass,energy,energy_sd,l4,virial_v,virial_dv,lambda,gamma,eps_l2"));
    assert_eq!(report.lines().count(), 6);
    for k in 0..5 {
        assert!(dir.path().join(format!("traj/field_{k:05}.csv")).exists());
    }
    let meta = fs::read_to_string(dir.path().join("traj/meta")).unwrap();
    assert!(meta.contains("dt=0.001") && meta.contains("stopped=none"), "{meta}");
    let (last, last_meta) = load_field::<f64>(dir.path().join("traj/field_00004.csv")).unwrap();
    assert_eq!(last_meta["t"].parse::<f64>().unwrap(), 0.1);
    assert_eq!(last.m(), 1);
}

#[test]
fn saved_fields_round_trip_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.csv");
    let o = lab(&["soliton", "--m", "0", "--g", "1", "--n", "300", "--rmax", "30", "--out", path.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (q, meta) = load_field::<f64>(&path).unwrap();
    let again = dir.path().join("again.csv");
    css_core::io::save_field(&again, &q, &meta).unwrap();
    let (q2, _) = load_field::<f64>(&again).unwrap();
    let worst = q.values().iter().zip(q2.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert_eq!(worst, 0.0);
    assert_eq!(fs::read_to_string(&path).unwrap(), fs::read_to_string(&again).unwrap());
}

#[test]
fn malformed_field_files_are_configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    let no_m = dir.path().join("no_m.csv");
    fs::write(&no_m, "# format_version=1\n# g=1\n# n=2\n# r_max=1\n0,0,0\n1,0,0\n").unwrap();
    let o = lab(&["diagnose", "--field", no_m.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing metadata key `m`"), "{}", stderr(&o));

    let v2 = dir.path().join("v2.csv");
    fs::write(&v2, "# format_version=2\n# m=0\n# g=1\n# n=2\n# r_max=1\n0,0,0\n1,0,0\n").unwrap();
    let o = lab(&["gauge", "--field", v2.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unsupported format_version=2"), "{}", stderr(&o));
}

#[test]
fn tracking_needs_a_profile() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q.csv");
    let o = lab(&["soliton", "--m", "1", "--g", "1", "--n", "200", "--rmax", "20", "--out", q.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("t");
    let o = lab(
        &["evolve", "--init", q.to_str().unwrap(), "--dt", "1e-3", "--t-end", "0.01", "--track", "--out", out.to_str().unwrap()],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--track needs --profile"));
}
