use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_superres"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn table(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    let header = lines
        .next()
        .unwrap()
        .split(',')
        .map(str::to_owned)
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

fn stdout_table(args: &[&str]) -> (Vec<String>, Vec<Vec<f64>>) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    table(&String::from_utf8(out.stdout).unwrap())
}

#[test]
fn golden_headers() {
    let scan = "x0,s,q,phi,H_s0,H_s,H_q,Hq_s0,Hq_s,Hq_q,Hdir_s";
    let (h, _) = stdout_table(&[
        "scan-separation",
        "--s",
        "0.1",
        "--q",
        "0.3",
        "--phi",
        "pi/4",
    ]);
    assert_eq!(h.join(","), scan);
    let (h, _) = stdout_table(&["robustness", "--x0", "0"]);
    assert_eq!(h.join(","), scan);
    let (h, _) = stdout_table(&["qfim", "--s", "0.1", "--q", "0.3"]);
    assert_eq!(
        h.join(","),
        "s0,s,q,Q_s0s0,Q_s0s,Q_s0q,Q_ss,Q_sq,Q_qq,numeric_rel_diff,Hq_s0,Hq_s,Hq_q,compat_residual"
    );
}

#[test]
fn qfim_rows() {
    let (h, rows) = stdout_table(&["qfim", "--q", "0.5", "--s", "0.1"]);
    assert_eq!(rows[0][column(&h, "Q_s0s")], 0.0);

    let (h, rows) = stdout_table(&["qfim", "--q", "0.3", "--s", "0.1"]);
    assert!(rows[0][column(&h, "numeric_rel_diff")] < 1e-6);

    let (h, rows) = stdout_table(&["qfim", "--q", "0.3", "--s", "1e-3,2e-3"]);
    let hq = column(&h, "Hq_q");
    let ratio = rows[1][hq] / rows[0][hq];
    assert!((ratio - 16.0).abs() < 0.01 * 16.0, "{ratio}");
}

#[test]
fn displacement_scan_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig1.csv");
    let status = run(&[
        "scan-displacement",
        "--normalize",
        "--svg",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let (h, rows) = table(&std::fs::read_to_string(&out).unwrap());
    let hs = column(&h, "H_s");
    let s = column(&h, "s");
    for target in [0.02, 0.014, 0.01] {
        let peak = rows
            .iter()
            .filter(|r| r[s] == target)
            .map(|r| r[hs])
            .fold(0.0, f64::max);
        assert_eq!(peak, 1.0);
    }
    let fits: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("fig1.csv.fit.json")).unwrap(),
    )
    .unwrap();
    let centers: Vec<f64> = fits
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["center"].as_f64().unwrap())
        .collect();
    assert_eq!(centers.len(), 3);
    assert!(centers[0].abs() > centers[1].abs() && centers[1].abs() > centers[2].abs());
    assert!(Path::new(&dir.path().join("fig1.csv.svg")).exists());
}

#[test]
fn separation_scan_trends() {
    let (h, rows) = stdout_table(&["scan-separation", "--s", "1e-3,0.1,0.3"]);
    let (s, q, phi) = (column(&h, "s"), column(&h, "q"), column(&h, "phi"));
    let (hs, hqs) = (column(&h, "H_s"), column(&h, "Hq_s"));
    let get = |sv: f64, qv: f64, pv: f64| {
        rows.iter()
            .find(|r| r[s] == sv && r[q] == qv && (r[phi] - pv).abs() < 1e-12)
            .unwrap()
    };
    let pis = [
        std::f64::consts::PI / 4.0,
        7.0 * std::f64::consts::PI / 20.0,
        9.0 * std::f64::consts::PI / 20.0,
    ];
    for &qv in &[0.49, 0.35, 0.1] {
        for &p in &pis {
            let r = get(1e-3, qv, p);
            assert!(r[hs] / r[hqs] > 0.99);
            // Inverting the nearly singular matrices at s = 1e-3 costs a few ppm.
            assert!(r[hs] <= r[hqs] * (1.0 + 1e-5));
        }
    }
    // Near-balanced signals favour angles close to π/2 away from s → 0.
    for &qv in &[0.49, 0.35] {
        for &sv in &[0.1, 0.3] {
            assert!(get(sv, qv, pis[2])[hs] > get(sv, qv, pis[1])[hs]);
            assert!(get(sv, qv, pis[1])[hs] > get(sv, qv, pis[0])[hs]);
        }
    }
    for &p in &pis {
        for &sv in &[0.1, 0.3] {
            assert!(get(sv, 0.49, p)[hs] > get(sv, 0.35, p)[hs]);
            assert!(get(sv, 0.35, p)[hs] > get(sv, 0.1, p)[hs]);
        }
    }
}

#[test]
fn robustness_defaults() {
    let (h, rows) = stdout_table(&["robustness"]);
    let (x0, phi) = (column(&h, "x0"), column(&h, "phi"));
    let (hs, hqs, hdir) = (column(&h, "H_s"), column(&h, "Hq_s"), column(&h, "Hdir_s"));
    let center = -0.03 * (1.0 - 0.2) / 2.0;
    for r in &rows {
        assert!(r[hs] <= r[hqs] * (1.0 + 1e-9));
        assert!(r[hdir] < 1e-2 * r[hqs]);
        if (r[phi] - 9.0 * std::f64::consts::PI / 20.0).abs() < 1e-12
            && (r[x0] - center).abs() <= 0.4 + 1e-12
        {
            assert!(r[hs] > r[hdir]);
        }
    }
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(&config, r#"{"s": [0.05, 0.2], "q": 0.4, "format": "json"}"#).unwrap();
    let out = run(&["qfim", "--config", config.to_str().unwrap(), "--q", "0.25"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let records = v.as_array().unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0]["theta"][2].as_f64(), Some(0.25));
    assert_eq!(records[1]["theta"][1].as_f64(), Some(0.2));
}

#[test]
fn errors_are_one_machine_readable_line() {
    for (args, kind) in [
        (vec!["qfim", "--dim", "2"], "config"),
        (vec!["qfim", "--s", "0:1"], "config"),
        (vec!["qfim", "--q", "1.5"], "invalid_parameter"),
        (vec!["qfim", "--psf", "table:/no/such/file"], "config"),
        (vec!["simulate", "--format", "csv"], "config"),
        (vec!["scan-separation", "--svg"], "config"),
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with(&format!("error: {kind}: ")), "{err}");
    }
}

#[test]
fn tabulated_psf_matches_gaussian() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("psf.txt");
    let mut text = String::from("# sampled Gaussian amplitude\n");
    for i in 0..=400 {
        let x = -10.0 + 0.05 * i as f64;
        let y = (2.0 * std::f64::consts::PI).powf(-0.25) * (-x * x / 4.0).exp();
        text += &format!("{x} {y}\n");
    }
    std::fs::write(&path, text).unwrap();
    let psf = format!("table:{}", path.display());
    let (h, tab) = stdout_table(&["qfim", "--psf", &psf, "--s", "0.1", "--q", "0.3"]);
    let (_, gauss) = stdout_table(&["qfim", "--s", "0.1", "--q", "0.3"]);
    for name in ["Q_s0s0", "Q_ss", "Q_qq", "Hq_s"] {
        let c = column(&h, name);
        assert!(
            (tab[0][c] - gauss[0][c]).abs() <= 1e-6 * gauss[0][c].abs(),
            "{name}"
        );
    }
}
