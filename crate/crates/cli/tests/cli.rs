use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaussdesign"))
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn write_covariates(path: &Path, n: usize, d: usize) {
    let mut s = String::new();
    for i in 0..n {
        let row: Vec<String> = (0..d)
            .map(|j| format!("{}", ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0))
            .collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    fs::write(path, s).unwrap();
}

fn identity(path: &Path, n: usize) {
    let mut s = String::new();
    for i in 0..n {
        let row: Vec<&str> = (0..n).map(|j| if i == j { "1" } else { "0" }).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    fs::write(path, s).unwrap();
}

#[test]
fn optimize_writes_factor_sigma_and_monotone_trace() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.csv");
    write_covariates(&x, 18, 5);
    let out = dir.path().join("out");
    let o = run(&[
        "optimize",
        "--covariates",
        x.to_str().unwrap(),
        "--arms",
        "3",
        "--iters",
        "200",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let factor = rows(&out.join("factor.csv"));
    assert_eq!(factor.len(), 18);
    for r in &factor {
        let norm: f64 = r.iter().map(|v| v.parse::<f64>().unwrap().powi(2)).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }
    let sigma = rows(&out.join("sigma.csv"));
    assert_eq!((sigma.len(), sigma[0].len()), (18, 18));
    let trace = rows(&out.join("trace.csv"));
    assert_eq!(trace[0], ["iteration", "objective", "eta", "grad_norm", "halvings"]);
    let obj: Vec<f64> = trace[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(!obj.is_empty());
    for w in obj.windows(2) {
        assert!(w[1] <= w[0] + 1e-12);
    }
}

#[test]
fn optimize_continuous_design() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.csv");
    write_covariates(&x, 8, 2);
    let o = run(&[
        "optimize",
        "--covariates",
        x.to_str().unwrap(),
        "--continuous",
        "--weight",
        "first-derivative",
        "--baseline",
        "1,-0.5",
        "--iters",
        "20",
        "--normalize-rows",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(rows(&dir.path().join("factor.csv")).len(), 8);
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["optimize", "--covariates", "/nonexistent/x.csv", "--arms", "3"]);
    assert_eq!(o.status.code(), Some(2));

    let x = dir.path().join("x.csv");
    write_covariates(&x, 6, 2);
    let o = run(&[
        "optimize",
        "--covariates",
        x.to_str().unwrap(),
        "--arms",
        "3",
        "--norm",
        "banana",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("nuc") && e.contains("op"), "{e}");

    let o = run(&["optimize", "--covariates", x.to_str().unwrap(), "--arms", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn row_norm_warning() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.csv");
    fs::write(&x, "x1,x2\n3,4\n1,0\n0,2\n").unwrap();
    let args = [
        "optimize",
        "--covariates",
        x.to_str().unwrap(),
        "--arms",
        "2",
        "--iters",
        "2",
        "--out-dir",
    ];
    let o = run(&[&args[..], &[dir.path().to_str().unwrap()]].concat());
    assert!(o.status.success());
    assert!(stderr(&o).contains("--normalize-rows"));
    let o = run(&[&args[..], &[dir.path().to_str().unwrap(), "--normalize-rows"]].concat());
    assert!(!stderr(&o).contains("warning"));
}

#[test]
fn sample_identity_factor() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("f.csv");
    identity(&f, 4);
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    for out in [&out1, &out2] {
        let o = run(&[
            "sample",
            "--factor",
            f.to_str().unwrap(),
            "--draws",
            "2",
            "--discretize",
            "2",
            "--rescale",
            "0",
            "250",
            "--seed",
            "5",
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read(out1.join("draws.csv")).unwrap();
    assert_eq!(a, fs::read(out2.join("draws.csv")).unwrap());
    let r = rows(&out1.join("draws.csv"));
    assert_eq!(r[0], ["unit", "rep", "T", "D", "T_rescaled"]);
    assert_eq!(r.len(), 9);
    for row in &r[1..] {
        let t: f64 = row[2].parse().unwrap();
        let d: usize = row[3].parse().unwrap();
        assert_eq!(d, if t <= 0.0 { 1 } else { 2 });
        let s: f64 = row[4].parse().unwrap();
        assert!((0.0..=250.0).contains(&s));
    }
}

#[test]
fn sample_rejects_invalid_factor() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("f.csv");
    fs::write(&f, "1,0\n0.5,0.5\n").unwrap();
    let o = run(&["sample", "--factor", f.to_str().unwrap(), "--draws", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn estimate_arm_mean() {
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().join("r.csv");
    fs::write(&r, "unit,T,D,Y,x1\n1,,1,2.0,0\n2,,2,5.0,0\n3,,1,4.0,0\n4,,2,1.0,0\n").unwrap();
    let o = run(&[
        "estimate",
        "--records",
        r.to_str().unwrap(),
        "--arms",
        "2",
        "--arm",
        "1",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = rows(&dir.path().join("estimate.csv"));
    // (K/n) Σ 1{D=1} Y = (2/4)(2 + 4)
    assert_eq!(out[1][1].parse::<f64>().unwrap(), 3.0);
}

#[test]
fn ci_guard_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("f.csv");
    fs::write(&f, "1,0\n-1,0\n").unwrap();
    let r = dir.path().join("r.csv");
    fs::write(&r, "unit,T,D,Y,x1\n1,,1,1.0,0.5\n2,,2,2.0,0.1\n").unwrap();
    let o = run(&[
        "ci",
        "--records",
        r.to_str().unwrap(),
        "--factor",
        f.to_str().unwrap(),
        "--arms",
        "2",
        "--arm",
        "1",
        "--method",
        "normal",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("joint probability"), "{}", stderr(&o));
}

#[test]
fn ci_randomization_discrete_and_continuous() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("f.csv");
    identity(&f, 12);
    let r = dir.path().join("r.csv");
    let mut s = String::from("unit,T,D,Y,x1\n");
    for i in 0..12 {
        let x = i as f64 / 12.0;
        let t = (i as f64 - 5.5) / 4.0;
        s.push_str(&format!("{},{t},{},{},{x}\n", i + 1, 1 + i % 2, 1.0 + x + 2.0 * t));
    }
    fs::write(&r, s).unwrap();
    let base = [
        "ci",
        "--records",
        r.to_str().unwrap(),
        "--factor",
        f.to_str().unwrap(),
        "--draws",
        "200",
        "--out-dir",
    ];
    let o = run(&[
        &base[..],
        &[dir.path().to_str().unwrap(), "--arms", "2", "--weights", "1,-1"],
    ]
    .concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let ci = rows(&dir.path().join("ci.csv"));
    assert_eq!(ci[0], ["estimate", "lower", "upper", "alpha", "method", "replicates"]);
    assert_eq!(ci[1][4], "randomization");
    let lo: f64 = ci[1][1].parse().unwrap();
    let hi: f64 = ci[1][2].parse().unwrap();
    assert!(lo <= hi);

    let o = run(&[
        &base[..],
        &[
            dir.path().to_str().unwrap(),
            "--weight",
            "first-derivative",
            "--regressors",
            "1,x1,t",
        ],
    ]
    .concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let ci = rows(&dir.path().join("ci.csv"));
    // Noiseless outcomes inside the model span: every imputation is exact.
    let lo: f64 = ci[1][1].parse().unwrap();
    let hi: f64 = ci[1][2].parse().unwrap();
    assert!(lo < 2.0 && 2.0 < hi, "[{lo}, {hi}]");

    let o = run(&[
        &base[..],
        &[
            dir.path().to_str().unwrap(),
            "--weight",
            "first-derivative",
            "--regressors",
            "1,z",
        ],
    ]
    .concat());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn covmap_table_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "covmap-table",
        "--arms",
        "3",
        "--arm",
        "1",
        "--grid",
        "101",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = rows(&dir.path().join("covmap.csv"));
    assert_eq!(r[0], ["rho", "f", "fprime"]);
    assert_eq!(r.len(), 102);
    assert_eq!(r[1][0].parse::<f64>().unwrap(), -1.0);
    assert_eq!(r[101][0].parse::<f64>().unwrap(), 1.0);
    let f1: f64 = r[101][1].parse().unwrap();
    assert!((f1 - 2.0 / 9.0).abs() < 1e-8);
    let f0: f64 = r[51][1].parse().unwrap();
    assert!(f0.abs() < 1e-10);
}

#[test]
fn simulate_with_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "# factorial benchmark\ngenerator = factorial\ndesigns = CR,OG\nreplicates = 200\niters = 10\nseed = 3\n",
    )
    .unwrap();
    let mut outputs = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        let o = run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(fs::read(out.join("report.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let r = rows(&dir.path().join("a").join("report.csv"));
    assert_eq!(
        r[0],
        [
            "scenario",
            "design",
            "estimand",
            "mse",
            "balance_objective_nuc",
            "coverage",
            "mean_ci_width",
            "replicates"
        ]
    );
    assert_eq!(r.len(), 7);
    assert_eq!(r.iter().skip(1).filter(|row| row[1] == "OG").count(), 3);

    // A flag overrides the config value.
    let out = dir.path().join("c");
    let o = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--designs",
        "CR",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(rows(&out.join("report.csv")).len(), 4);
}

#[test]
fn simulate_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "generator = factorial\ncolour = blue\n").unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));

    let o = run(&[
        "simulate",
        "--generator",
        "nope",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "simulate",
        "--generator",
        "factorial",
        "--designs",
        "XX",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
