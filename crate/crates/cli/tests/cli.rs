use std::path::Path;
use std::process::{Command, Output};

use gsmgp::data::linspace;
use gsmgp::experiments::{rmse, spearman};
use gsmgp::kernels::{GsmDimension, GsmParams};
use gsmgp::latent::{nyquist_for_axis, HyperPrior};
use gsmgp::modelfile::save_model;
use gsmgp::GpModel;

fn gsmgp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsmgp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(o),
        stderr(o)
    );
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|f| f.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn manifest(path: &Path) -> toml::Table {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.toml");
    std::fs::read_to_string(name).unwrap().parse().unwrap()
}

fn reported(out: &str, label: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix(label))
        .unwrap_or_else(|| panic!("no '{label}' in {out}"))
        .trim()
        .parse()
        .unwrap()
}

const QUICK: [&str; 6] = [
    "--restarts",
    "1",
    "--candidates",
    "4",
    "--max-iterations",
    "40",
];

fn simulate_chirp(dir: &Path, n: usize) {
    ok(&gsmgp(
        dir,
        &[
            "simulate",
            "--kind",
            "chirp",
            "--n",
            &n.to_string(),
            "--seed",
            "3",
            "--out",
            "chirp.csv",
        ],
    ));
}

#[test]
fn simulate_chirp_defaults() {
    let dir = tempfile::tempdir().unwrap();
    ok(&gsmgp(
        dir.path(),
        &["simulate", "--kind", "chirp", "--out", "chirp.csv"],
    ));
    let (header, rows) = read_csv(&dir.path().join("chirp.csv"));
    assert_eq!(header, ["x", "y"]);
    assert_eq!(rows.len(), 200);
    let (header, truth) = read_csv(&dir.path().join("chirp.truth.csv"));
    assert_eq!(header, ["x", "mu", "ell", "w"]);
    assert_eq!(truth.len(), 200);
    let m = manifest(&dir.path().join("chirp.csv"));
    assert_eq!(m["command"].as_str(), Some("simulate"));
    assert_eq!(m["seed"].as_integer(), Some(0));
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
    assert!(m["wall_clock_seconds"].as_float().is_some());
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (out, seed) in [("a.csv", "4"), ("b.csv", "4"), ("c.csv", "5")] {
        ok(&gsmgp(
            d,
            &[
                "simulate", "--kind", "texture", "--n", "10", "--seed", seed, "--out", out,
            ],
        ));
    }
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));
    assert!(
        d.join("a.axis0.csv").exists()
            && d.join("a.axis1.csv").exists()
            && d.join("a.truth.csv").exists()
    );
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = gsmgp(d, &["simulate", "--kind", "bogus", "--out", "x.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--kind"));
    assert_eq!(gsmgp(d, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(gsmgp(d, &["fit", "--data", "x.csv"]).status.code(), Some(2));
    assert_eq!(
        gsmgp(
            d,
            &["predict", "--model", "m.toml", "--at", "lin(0,1)", "--out", "p.csv"]
        )
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn missing_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = gsmgp(
        dir.path(),
        &["fit", "--data", "absent.csv", "--out", "m.toml"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("absent.csv"));
}

#[test]
fn fit_then_predict_reproduces_training_rmse() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate_chirp(d, 60);
    let mut args = vec![
        "fit",
        "--data",
        "chirp.csv",
        "--kernel",
        "gsm",
        "--Q",
        "1",
        "--init",
        "spectrogram",
        "--out",
        "m.toml",
    ];
    args.extend(QUICK);
    let fit = gsmgp(d, &args);
    ok(&fit);
    let objective = reported(&stdout(&fit), "final objective:");
    let training = reported(&stdout(&fit), "training RMSE:");
    assert!(objective.is_finite());
    let m = manifest(&d.join("m.toml"));
    assert!(
        (m["final_objective"].as_float().unwrap() - objective).abs()
            < 1e-5 * objective.abs().max(1.0)
    );
    assert_eq!(m["config"]["Q"].as_integer(), Some(1));

    // chirp.csv has the x,y header, so it doubles as an input file
    let (_, data) = read_csv(&d.join("chirp.csv"));
    std::fs::write(
        d.join("inputs.csv"),
        data.iter()
            .map(|r| format!("{}\n", r[0]))
            .fold("x\n".to_string(), |a, b| a + &b),
    )
    .unwrap();
    ok(&gsmgp(
        d,
        &[
            "predict",
            "--model",
            "m.toml",
            "--at",
            "inputs.csv",
            "--out",
            "p.csv",
        ],
    ));
    let (header, pred) = read_csv(&d.join("p.csv"));
    assert_eq!(header, ["x", "mean", "variance"]);
    let mean: Vec<f64> = pred.iter().map(|r| r[1]).collect();
    let y: Vec<f64> = data.iter().map(|r| r[1]).collect();
    assert!(
        (rmse(&mean, &y) - training).abs() < 1e-5,
        "{} vs {training}",
        rmse(&mean, &y)
    );
}

#[test]
fn predict_empty_inputs_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate_chirp(d, 30);
    let mut args = vec![
        "fit",
        "--data",
        "chirp.csv",
        "--kernel",
        "se",
        "--out",
        "m.toml",
    ];
    args.extend(QUICK);
    ok(&gsmgp(d, &args));
    ok(&gsmgp(
        d,
        &[
            "predict",
            "--model",
            "m.toml",
            "--at",
            "lin(0,1,0)",
            "--out",
            "a.csv",
        ],
    ));
    std::fs::write(d.join("none.csv"), "x\n").unwrap();
    ok(&gsmgp(
        d,
        &[
            "predict", "--model", "m.toml", "--at", "none.csv", "--out", "b.csv",
        ],
    ));
    for f in ["a.csv", "b.csv"] {
        assert_eq!(
            std::fs::read_to_string(d.join(f)).unwrap(),
            "x,mean,variance\n"
        );
    }
}

#[test]
fn extrapolated_variance_grows_with_distance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate_chirp(d, 60);
    for kernel in ["gsm", "se"] {
        let out = format!("{kernel}.toml");
        let mut args = vec![
            "fit",
            "--data",
            "chirp.csv",
            "--kernel",
            kernel,
            "--out",
            &out,
        ];
        args.extend(QUICK);
        ok(&gsmgp(d, &args));
        let pred = format!("{kernel}.csv");
        ok(&gsmgp(
            d,
            &[
                "predict",
                "--model",
                &out,
                "--at",
                "lin(1,4,13)",
                "--out",
                &pred,
            ],
        ));
        let (_, rows) = read_csv(&d.join(&pred));
        for w in rows.windows(2) {
            assert!(
                w[1][2] >= w[0][2] - 1e-9,
                "{kernel}: variance fell from {} to {}",
                w[0][2],
                w[1][2]
            );
        }
    }
}

#[test]
fn se_fit_warns_about_q_and_single_run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate_chirp(d, 40);
    let o = gsmgp(
        d,
        &[
            "fit",
            "--data",
            "chirp.csv",
            "--kernel",
            "se",
            "--Q",
            "3",
            "--out",
            "se.toml",
        ],
    );
    ok(&o);
    assert!(stderr(&o).contains("ignored"));
    for out in ["a.toml", "b.toml"] {
        ok(&gsmgp(
            d,
            &[
                "fit",
                "--data",
                "chirp.csv",
                "--kernel",
                "sm",
                "--Q",
                "2",
                "--restarts",
                "1",
                "--candidates",
                "1",
                "--seed",
                "8",
                "--out",
                out,
            ],
        ));
    }
    assert_eq!(
        std::fs::read(d.join("a.toml")).unwrap(),
        std::fs::read(d.join("b.toml")).unwrap()
    );
}

#[test]
fn constant_latent_model_has_identical_spectrogram_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let axis = linspace(-1.0, 1.0, 15);
    let dim = GsmDimension::constant(
        axis.clone(),
        nyquist_for_axis(&axis).unwrap(),
        HyperPrior::for_axis(&axis),
        &[(1.0, 0.3, 2.0), (0.5, 0.5, 2.5)],
    )
    .unwrap();
    let y = nalgebra::DVector::from_fn(15, |i, _| (i as f64).sin());
    let model = GpModel::from_gsm(vec![axis], y, GsmParams { dims: vec![dim] }, -2.0).unwrap();
    save_model(&model, &d.join("const.toml")).unwrap();
    ok(&gsmgp(
        d,
        &[
            "spectrogram",
            "--model",
            "const.toml",
            "--bins",
            "20",
            "--freq-range",
            "0,6",
            "--out",
            "s.csv",
        ],
    ));
    let (header, rows) = read_csv(&d.join("s.csv"));
    assert_eq!(header, ["x", "frequency", "amplitude"]);
    assert_eq!(rows.len(), 15 * 20);
    let first: Vec<f64> = rows[..20].iter().map(|r| r[2]).collect();
    let peak = first.iter().cloned().fold(0.0, f64::max);
    assert!(peak > 0.0);
    for chunk in rows.chunks(20) {
        for (r, v) in chunk.iter().zip(&first) {
            assert!((r[2] - v).abs() <= 1e-9 * peak, "{} vs {v}", r[2]);
        }
    }
}

#[test]
fn chirp_spectrogram_ridge_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&gsmgp(
        d,
        &[
            "simulate",
            "--kind",
            "chirp",
            "--noise",
            "0.01",
            "--seed",
            "2",
            "--out",
            "chirp.csv",
        ],
    ));
    ok(&gsmgp(
        d,
        &[
            "spectrogram",
            "--data",
            "chirp.csv",
            "--bins",
            "200",
            "--freq-range",
            "0,10",
            "--out",
            "s.csv",
        ],
    ));
    let (_, rows) = read_csv(&d.join("s.csv"));
    let mut xs = Vec::new();
    let mut ridge = Vec::new();
    for frame in rows.chunks(200) {
        let best = frame.iter().max_by(|a, b| a[2].total_cmp(&b[2])).unwrap();
        xs.push(frame[0][0]);
        ridge.push(best[1]);
    }
    assert!(xs.len() >= 3);
    assert!(spearman(&xs, &ridge) < -0.8, "ridge {ridge:?}");
}

#[test]
fn spectrogram_flag_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate_chirp(d, 40);
    let code = |args: &[&str]| gsmgp(d, args).status.code();
    assert_eq!(
        code(&[
            "spectrogram",
            "--data",
            "chirp.csv",
            "--bins",
            "0",
            "--out",
            "s.csv"
        ]),
        Some(2)
    );
    assert_eq!(code(&["spectrogram", "--out", "s.csv"]), Some(2));
    assert_eq!(
        code(&[
            "spectrogram",
            "--data",
            "chirp.csv",
            "--model",
            "m.toml",
            "--out",
            "s.csv"
        ]),
        Some(2)
    );
    assert_eq!(
        code(&[
            "spectrogram",
            "--data",
            "chirp.csv",
            "--freq-range",
            "3,1",
            "--out",
            "s.csv"
        ]),
        Some(2)
    );
    assert!(!d.join("s.csv").exists());
}

#[test]
fn check_suites_report_passes() {
    let dir = tempfile::tempdir().unwrap();
    for suite in ["reduction", "fourier", "gradient"] {
        let o = gsmgp(dir.path(), &["check", "--suite", suite, "--out", "r.csv"]);
        ok(&o);
        assert!(
            stdout(&o).lines().all(|l| l.contains("PASS")),
            "{}",
            stdout(&o)
        );
        let (header, rows) = {
            let mut r = csv::Reader::from_path(dir.path().join("r.csv")).unwrap();
            let h: Vec<String> = r.headers().unwrap().iter().map(str::to_string).collect();
            (h, r.records().count())
        };
        assert_eq!(
            header,
            ["suite", "property", "measured", "threshold", "passed"]
        );
        assert!(rows >= 1);
    }
    assert_eq!(
        manifest(&dir.path().join("r.csv"))["command"].as_str(),
        Some("check")
    );
}

#[test]
fn benchmark_has_one_row_per_kernel_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&gsmgp(
        d,
        &[
            "simulate", "--kind", "texture", "--n", "10", "--seed", "1", "--out", "tex.csv",
        ],
    ));
    for out in ["a.csv", "b.csv"] {
        let mut args = vec![
            "benchmark",
            "--data",
            "tex.csv",
            "--axis",
            "tex.axis0.csv",
            "--axis",
            "tex.axis1.csv",
            "--kernels",
            "se,sm,gsm",
            "--Q",
            "1",
            "--holdout",
            "cross",
            "--width",
            "2",
            "--seed",
            "4",
            "--out",
            out,
        ];
        args.extend(QUICK);
        ok(&gsmgp(d, &args));
    }
    let (header, rows) = read_csv_text(&d.join("a.csv"));
    assert_eq!(
        header,
        [
            "kernel",
            "q",
            "held_out",
            "rmse",
            "log_likelihood",
            "final_objective"
        ]
    );
    assert_eq!(
        rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(),
        ["se", "sm", "gsm"]
    );
    assert!(rows.iter().all(|r| r[2] == "36"));
    assert_eq!(
        std::fs::read(d.join("a.csv")).unwrap(),
        std::fs::read(d.join("b.csv")).unwrap()
    );
}

fn read_csv_text(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect();
    (header, rows)
}

#[test]
fn config_file_supplies_flags_and_explicit_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.toml"),
        "seed = 11\n[simulate]\nkind = \"chirp\"\nn = 25\nnoise = 0.2\n",
    )
    .unwrap();
    ok(&gsmgp(
        d,
        &["simulate", "--config", "run.toml", "--out", "a.csv"],
    ));
    ok(&gsmgp(
        d,
        &[
            "--config", "run.toml", "simulate", "--n", "30", "--out", "b.csv",
        ],
    ));
    assert_eq!(read_csv(&d.join("a.csv")).1.len(), 25);
    assert_eq!(read_csv(&d.join("b.csv")).1.len(), 30);
    let m = manifest(&d.join("b.csv"));
    assert_eq!(m["seed"].as_integer(), Some(11));
    assert_eq!(m["config"]["noise"].as_float(), Some(0.2));

    std::fs::write(d.join("bad.toml"), "[simulate]\nbogus = 1\n").unwrap();
    assert_eq!(
        gsmgp(d, &["simulate", "--config", "bad.toml", "--out", "c.csv"])
            .status
            .code(),
        Some(2)
    );
}
