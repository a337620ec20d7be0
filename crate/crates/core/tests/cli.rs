use std::fs;
use std::path::Path;
use std::process::Command;

fn selfavg(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_selfavg"))
        .args(args)
        .status()
        .expect("binary runs")
        .code()
        .expect("exit code")
}

fn read_rows(dir: &Path) -> (Vec<String>, Vec<csv::StringRecord>) {
    let mut r = csv::Reader::from_path(dir.join("results.csv")).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap()).collect();
    (header, rows)
}

#[test]
fn psi_variance_run_passes_and_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        "experiment = \"psi_variance\"\nmodel = \"rem\"\nsizes = [8]\nreplicas = 2\nbetas = [1.0]\nlambdas = [0.0]\nsamples = 200\nseed = 42\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let code = selfavg(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(code, 0);
    let (header, rows) = read_rows(&out);
    assert_eq!(
        header,
        "experiment,model,N,n,beta,lambda,mu,alpha,observable,mean,variance,stderr,count,bound,ratio,pass"
            .split(',')
            .collect::<Vec<_>>()
    );
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][15], "true");
    assert_eq!(&rows[0][12], "200");
    let bound: f64 = rows[0][13].parse().unwrap();
    assert!((bound - 0.5).abs() < 1e-15);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["experiment"], "psi-variance");
    assert!(manifest["tool_version"].is_string());
    assert!(manifest["wall_time_seconds"].is_number());
}

#[test]
fn harris_random_instances_all_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("h");
    assert_eq!(
        selfavg(&[
            "--experiment",
            "harris",
            "--out",
            out.to_str().unwrap(),
            "--quiet"
        ]),
        0
    );
    let (_, rows) = read_rows(&out);
    assert!(rows.len() >= 200);
    assert!(rows.iter().all(|r| &r[15] == "true"));
}

#[test]
fn invalid_configs_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "experiment = \"guerra\"\nbetas = []\n").unwrap();
    let out = tmp.path().join("o");
    assert_eq!(
        selfavg(&[
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ]),
        2
    );
    assert!(!out.exists());
    assert_eq!(selfavg(&["--experiment", "no-such-thing"]), 2);
    assert_eq!(selfavg(&[]), 2);
    assert_eq!(selfavg(&["--bogus-flag"]), 2);
}

#[test]
fn lemma1_heisenberg_ratio_below_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("l1.toml");
    fs::write(
        &cfg,
        "experiment = \"lemma1\"\nmodel = \"heisenberg\"\nsizes = [4]\nmu = 0.5\nalpha = 0.5\nlambdas = [0.0, 0.3]\n",
    )
    .unwrap();
    let out = tmp.path().join("o");
    let code = selfavg(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(code, 0);
    let (_, rows) = read_rows(&out);
    assert_eq!(rows.len(), 2);
    for r in rows {
        let ratio: f64 = r[14].parse().unwrap();
        assert!(ratio <= 1.0, "{ratio}");
    }
}

#[test]
fn list_names_every_experiment() {
    let out = Command::new(env!("CARGO_BIN_EXE_selfavg"))
        .arg("--list")
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in [
        "variance-scan",
        "guerra",
        "lemma1",
        "psi-variance",
        "dichotomy",
        "limit-probe",
        "assumptions",
        "harris",
    ] {
        assert!(text.contains(name), "{name}");
    }
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("a");
    assert_eq!(
        selfavg(&[
            "--experiment",
            "dichotomy",
            "--samples",
            "20",
            "--out",
            first.to_str().unwrap(),
            "--quiet"
        ]),
        0
    );
    let second = tmp.path().join("b");
    let manifest = first.join("manifest.json");
    assert_eq!(
        selfavg(&[
            "--config",
            manifest.to_str().unwrap(),
            "--out",
            second.to_str().unwrap(),
            "--quiet"
        ]),
        0
    );
    assert_eq!(
        fs::read(first.join("results.csv")).unwrap(),
        fs::read(second.join("results.csv")).unwrap()
    );
}
