use std::path::Path;
use std::process::{Command, Output};

use ppfit::io;
use ppfit::sim_eval::{simulate_poisson, Intensity};
use ppfit::{Point, PointPattern, Segment, SegmentPattern, Window};

fn ppfit(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppfit"))
        .args(args)
        .current_dir(dir)
        .env_remove("PPFIT_SEED")
        .output()
        .unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn setup(dir: &Path) {
    let w = Window::rectangle(0.0, 0.0, 100.0, 100.0).unwrap();
    io::write_window(std::fs::File::create(dir.join("window.csv")).unwrap(), &w).unwrap();
    let rho = |p: Point| 0.02 + 0.04 * p.y / 100.0;
    let x = simulate_poisson(
        &Intensity::Function {
            rho: &rho,
            bound: 0.06,
        },
        &w,
        8,
    )
    .unwrap();
    let marks = (0..x.len())
        .map(|i| if i % 4 == 0 { "2" } else { "1" }.to_string())
        .collect();
    let x = PointPattern::with_marks(x.points().to_vec(), marks, Some("priority".into())).unwrap();
    io::save_points(dir.join("events.csv"), &x).unwrap();
    let roads = SegmentPattern::new(
        (0..12)
            .map(|i| {
                let y = 5.0 + 8.0 * i as f64;
                Segment::new(
                    Point::new(5.0, y),
                    Point::new(20.0 + 6.0 * i as f64, y + 3.0),
                )
            })
            .collect(),
    )
    .unwrap();
    io::write_segments(
        std::fs::File::create(dir.join("roads.csv")).unwrap(),
        &roads,
    )
    .unwrap();
    std::fs::write(
        dir.join("manifest.json"),
        r#"{"covariates": [
            {"kind": "coordinate"},
            {"kind": "segments-density", "name": "road_density", "path": "roads.csv", "bandwidth": "default"},
            {"kind": "segments-distance", "name": "road_dist", "path": "roads.csv"}
        ]}"#,
    )
    .unwrap();
}

const FIT: &[&str] = &[
    "fit",
    "--pattern",
    "events.csv",
    "--window",
    "window.csv",
    "--manifest",
    "manifest.json",
    "--cell",
    "5",
    "--tiles-per-side",
    "20",
    "--path-length",
    "30",
    "--folds",
    "4",
];

#[test]
fn fit_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = ppfit(&[FIT, &["--out-dir", "out"]].concat(), dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let o = dir.path().join("out");
    for f in ["fit.json", "coefficients.csv", "dense.asc", "sparse.asc"] {
        assert!(o.join(f).exists(), "{f}");
    }
    let j = json(&o.join("fit.json"));
    assert_eq!(j["tool"], "ppfit");
    assert_eq!(j["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(j["config"]["fit"]["tiles_per_side"], 20);
    assert!(j["config"].get("threads").is_none());
    assert_eq!(j["result"]["path"]["lambdas"].as_array().unwrap().len(), 30);
    let h = j["result"]["covariates"][2]["bandwidth"].as_f64().unwrap();
    assert!((h - 0.1 * 100.0 * 2f64.sqrt()).abs() < 1e-9);
    let table = std::fs::read_to_string(o.join("coefficients.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 1 + 4);
    let dense = io::load_raster(o.join("dense.asc")).unwrap();
    assert_eq!((dense.ncols(), dense.nrows()), (20, 20));
}

#[test]
fn mark_filter_fits_marginal_pattern() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let all = ppfit(&[FIT, &["--out-dir", "all"]].concat(), dir.path());
    assert!(all.status.success());
    let p1 = ppfit(
        &[FIT, &["--mark-filter", "priority=1", "--out-dir", "p1"]].concat(),
        dir.path(),
    );
    assert!(
        p1.status.success(),
        "{}",
        String::from_utf8_lossy(&p1.stderr)
    );
    let n = json(&dir.path().join("all/fit.json"))["result"]["n_events"]
        .as_u64()
        .unwrap();
    let n1 = json(&dir.path().join("p1/fit.json"))["result"]["n_events"]
        .as_u64()
        .unwrap();
    let expected = (0..n).filter(|i| i % 4 != 0).count() as u64;
    assert_eq!(n1, expected);
    let bad = ppfit(
        &[FIT, &["--mark-filter", "kind=1", "--out-dir", "bad"]].concat(),
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(4));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    std::fs::write(
        dir.path().join("run.toml"),
        "pattern = \"events.csv\"\nwindow = \"window.csv\"\nmanifest = \"manifest.json\"\ncell = 5.0\n[fit]\ntiles_per_side = 16\npath_length = 10\nfolds = 3\nalpha = 0.5\n",
    )
    .unwrap();
    let out = ppfit(
        &[
            "fit",
            "--config",
            "run.toml",
            "--alpha",
            "1",
            "--out-dir",
            "o",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let j = json(&dir.path().join("o/fit.json"));
    assert_eq!(j["config"]["fit"]["alpha"], 1.0);
    assert_eq!(j["config"]["fit"]["tiles_per_side"], 16);
}

#[test]
fn seed_comes_from_environment_by_default() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let run = |env: Option<&str>, out: &str| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_ppfit"));
        c.args(["split", "--pattern", "events.csv", "--out-dir", out])
            .current_dir(dir.path());
        match env {
            Some(v) => c.env("PPFIT_SEED", v),
            None => c.env_remove("PPFIT_SEED"),
        };
        assert!(c.output().unwrap().status.success());
        json(&dir.path().join(out).join("split.json"))["config"]["seed"]
            .as_u64()
            .unwrap()
    };
    assert_eq!(run(None, "a"), 0);
    assert_eq!(run(Some("17"), "b"), 17);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    std::fs::write(dir.path().join("broken.csv"), "x,y\n1,abc\n").unwrap();
    let parse = ppfit(
        &["split", "--pattern", "broken.csv", "--out-dir", "o"],
        dir.path(),
    );
    assert_eq!(parse.status.code(), Some(2));
    let config = ppfit(
        &[&FIT[..FIT.len() - 2], &["--folds", "1", "--out-dir", "o"]].concat(),
        dir.path(),
    );
    assert_eq!(config.status.code(), Some(4));
    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"covariates":[{"kind":"elevation","name":"e"}]}"#,
    )
    .unwrap();
    let kind = ppfit(
        &[
            "covariates",
            "--manifest",
            "bad.json",
            "--window",
            "window.csv",
            "--out-dir",
            "o",
        ],
        dir.path(),
    );
    assert_eq!(kind.status.code(), Some(4));
    // two events cannot give four folds an event each
    io::save_points(
        dir.path().join("two.csv"),
        &PointPattern::new(vec![Point::new(10.0, 10.0), Point::new(90.0, 90.0)]).unwrap(),
    )
    .unwrap();
    let numerical = ppfit(
        &[
            "fit",
            "--pattern",
            "two.csv",
            "--window",
            "window.csv",
            "--manifest",
            "manifest.json",
            "--cell",
            "10",
            "--tiles-per-side",
            "8",
            "--folds",
            "4",
            "--out-dir",
            "o",
        ],
        dir.path(),
    );
    assert_eq!(
        numerical.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&numerical.stderr)
    );
    let usage = ppfit(&["fit"], dir.path());
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn covariates_command_writes_rasters() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = ppfit(
        &[
            "covariates",
            "--manifest",
            "manifest.json",
            "--window",
            "window.csv",
            "--cell",
            "10",
            "--out-dir",
            "cov",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "x.asc",
        "y.asc",
        "road_density.asc",
        "road_dist.asc",
        "covariates.json",
    ] {
        assert!(dir.path().join("cov").join(f).exists(), "{f}");
    }
    let x = io::load_raster(dir.path().join("cov/x.asc")).unwrap();
    assert_eq!(x.get(0, 0), Some(5.0));
}

#[test]
fn simulate_and_split() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let w = Window::unit_square();
    io::write_window(
        std::fs::File::create(dir.path().join("unit.csv")).unwrap(),
        &w,
    )
    .unwrap();
    let out = ppfit(
        &[
            "simulate",
            "--window",
            "unit.csv",
            "--rho-const",
            "100",
            "--seed",
            "3",
            "--out-dir",
            "sim",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let n = json(&dir.path().join("sim/simulate.json"))["result"]["n"]
        .as_u64()
        .unwrap();
    assert!((60..=140).contains(&n), "{n}");
    let pts = io::load_points(dir.path().join("sim/points.csv")).unwrap();
    assert_eq!(pts.len() as u64, n);

    let out = ppfit(
        &[
            "split",
            "--pattern",
            "sim/points.csv",
            "--fraction",
            "0.7",
            "--out-dir",
            "sp",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let train = io::load_points(dir.path().join("sp/train.csv")).unwrap();
    let test = io::load_points(dir.path().join("sp/test.csv")).unwrap();
    assert_eq!(train.len() + test.len(), pts.len());
    assert_eq!(train.len(), (0.7 * pts.len() as f64).round() as usize);
}

#[test]
fn bandwidth_prints_report() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = ppfit(
        &["bandwidth", "--segments", "roads.csv", "--k-max", "5"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let j: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(j["result"]["dim"], 1);
    assert!(j["result"]["h"].as_f64().unwrap() > 0.0);
    assert!(j["result"]["P0"].as_u64().unwrap() >= 2);
}

#[test]
fn eval_writes_stability_outputs() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let mut args = vec!["eval"];
    args.extend_from_slice(&FIT[1..]);
    args.extend(["--replicates", "3", "--fraction", "0.7", "--out-dir", "ev"]);
    let out = ppfit(&args, dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let j = json(&dir.path().join("ev/eval.json"));
    assert_eq!(j["result"]["replicates"], 3);
    assert_eq!(j["config"]["eval"]["fraction"], 0.7);
    for f in [
        "dense_mae.asc",
        "dense_q05.asc",
        "dense_q95.asc",
        "sparse_mae.asc",
        "dense_profile.csv",
    ] {
        assert!(dir.path().join("ev").join(f).exists(), "{f}");
    }
}
