use std::fs;
use std::path::Path;
use std::process::Command;

use penadd::anova::anova_decompose;
use penadd::estimator::fit;
use penadd::io::read_surface_csv;
use penadd::simulation::truth_additive;
use penadd::{BandwidthSpec, Dataset, FitConfig, Grid, Penalty};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn penadd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_penadd"))
}

/// Columns y, x1, x2; both predictors already span exactly [0, 1] so the
/// ingest scaling is the identity.
fn sample(n: usize, seed: u64) -> (Vec<[f64; 2]>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen(), rng.gen()]).collect();
    x[0] = [0.0, 1.0];
    x[1] = [1.0, 0.0];
    let y = x
        .iter()
        .map(|p| (4.0 * p[0]).sin() + 2.0 * p[0] * p[1] + 0.2 * rng.gen::<f64>())
        .collect();
    (x, y)
}

fn write_sample(path: &Path, x: &[[f64; 2]], y: &[f64]) {
    let mut text = String::from("y,x1,x2\n");
    for (p, v) in x.iter().zip(y) {
        text.push_str(&format!("{v:?},{:?},{:?}\n", p[0], p[1]));
    }
    fs::write(path, text).unwrap();
}

fn run_ok(cmd: &mut Command) {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn fit_args<'a>(cmd: &'a mut Command, input: &Path, out: &Path, r: &str) -> &'a mut Command {
    cmd.arg("fit")
        .arg("--input")
        .arg(input)
        .args(["--response", "y", "--predictors", "x1,x2", "--grid", "9,7", "--h", "0.25,0.3"])
        .arg(format!("--R={r}"))
        .arg("--out-dir")
        .arg(out)
}

#[test]
fn fit_writes_surface_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("data.csv");
    let (x, y) = sample(80, 1);
    write_sample(&input, &x, &y);
    run_ok(fit_args(&mut penadd(), &input, dir.path(), "2.5"));

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["details"]["n"], 80);
    assert!(manifest["details"]["diagnostics"]["residual"].as_f64().unwrap() < 1e-8);

    let (grid, values) = read_surface_csv(fs::File::open(dir.path().join("surface.csv")).unwrap()).unwrap();
    assert_eq!(grid.sizes(), &[9, 7]);
    let data = Dataset::from_rows(&x.iter().map(|p| p.to_vec()).collect::<Vec<_>>(), y).unwrap();
    let cfg = FitConfig::new(Penalty::finite(2.5).unwrap(), BandwidthSpec::new(vec![0.25, 0.3]).unwrap());
    let reference = fit(&data, &grid, &cfg).unwrap().surface();
    for (a, b) in values.iter().zip(&reference) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
    }

    // round trip through decompose reproduces the in-memory mean squares
    let anova_out = dir.path().join("anova.csv");
    run_ok(penadd().arg("decompose").arg("--surface").arg(dir.path().join("surface.csv")).arg("--out").arg(&anova_out));
    let table = anova_decompose(&reference, &grid).unwrap();
    let mut rdr = csv::Reader::from_path(&anova_out).unwrap();
    let header = rdr.headers().unwrap().clone();
    let row = rdr.records().next().unwrap().unwrap();
    assert_eq!(&row[0], "surface");
    let r0: f64 = row[1].parse().unwrap();
    assert!((r0 - table.constant).abs() < 1e-9);
    for (c, comp) in table.components.iter().enumerate() {
        assert_eq!(header[c + 2], comp.label());
        let v: f64 = row[c + 2].parse().unwrap();
        assert!((v - comp.mean_square).abs() < 1e-9, "{}: {v} vs {}", comp.label(), comp.mean_square);
    }
}

#[test]
fn tiny_penalty_matches_zero() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("data.csv");
    let (x, y) = sample(90, 2);
    write_sample(&input, &x, &y);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(fit_args(&mut penadd(), &input, &a, "0"));
    run_ok(fit_args(&mut penadd(), &input, &b, "1e-8"));
    let (_, sa) = read_surface_csv(fs::File::open(a.join("surface.csv")).unwrap()).unwrap();
    let (_, sb) = read_surface_csv(fs::File::open(b.join("surface.csv")).unwrap()).unwrap();
    for (u, v) in sa.iter().zip(&sb) {
        assert!((u - v).abs() < 1e-5, "{u} vs {v}");
    }
}

#[test]
fn decompose_of_additive_truth_has_no_interaction() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::uniform(2, 15).unwrap();
    let mut text = String::from("x1,x2,intercept\n");
    for j in 0..grid.len() {
        let t = grid.node(j);
        text.push_str(&format!("{:?},{:?},{:?}\n", t[0], t[1], truth_additive(&t)));
    }
    let surface = dir.path().join("truth.csv");
    fs::write(&surface, text).unwrap();
    let out = penadd().arg("decompose").arg("--surface").arg(&surface).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let mut rdr = csv::Reader::from_reader(stdout.as_bytes());
    let header = rdr.headers().unwrap().clone();
    let row = rdr.records().next().unwrap().unwrap();
    let col = header.iter().position(|h| h == "r12").unwrap();
    let inter: f64 = row[col].parse().unwrap();
    let main: f64 = row[2].parse().unwrap();
    assert!(inter < 1e-20 && main > 1e-3, "interaction {inter}, main {main}");
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        run_ok(
            penadd()
                .args(["simulate", "--seed", "17", "--reps", "2", "--grid", "10,10"])
                .args(["--search-R", "0.25", "--search-h", "0.1:0.4:0.2"])
                .arg("--out-dir")
                .arg(&out),
        );
        (
            fs::read(out.join("records.csv")).unwrap(),
            fs::read(out.join("quantiles.csv")).unwrap(),
        )
    };
    let first = run("one");
    let second = run("two");
    assert_eq!(first, second);
    let records = String::from_utf8(first.0).unwrap();
    assert_eq!(records.lines().count(), 3);
}

#[test]
fn select_reports_best_cell() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("data.csv");
    let (x, y) = sample(70, 3);
    write_sample(&input, &x, &y);
    run_ok(
        penadd()
            .arg("select")
            .arg("--input")
            .arg(&input)
            .args(["--response", "y", "--predictors", "x1,x2", "--grid", "8"])
            .args(["--search-R", "0.25", "--search-h", "0.15:0.45:0.1"])
            .arg("--out-dir")
            .arg(dir.path()),
    );
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    let sel = &manifest["details"]["selected"];
    assert!(sel["criterion"].as_f64().unwrap().is_finite());
    let rows = fs::read_to_string(dir.path().join("selection.csv")).unwrap().lines().count();
    assert_eq!(rows - 1, manifest["details"]["cells"].as_u64().unwrap() as usize);
}

#[test]
fn errors_are_json_records() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("data.csv");
    let (x, y) = sample(20, 4);
    write_sample(&input, &x, &y);

    let out = fit_args(&mut penadd(), &input, dir.path(), "-1").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "penalty_domain");

    let out = penadd()
        .arg("fit")
        .arg("--input")
        .arg(&input)
        .args(["--response", "nope", "--predictors", "x1,x2", "--h", "0.3"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"]["message"].as_str().unwrap().contains("nope"));

    let out = penadd().arg("decompose").arg("--surface").arg(dir.path().join("missing.csv")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "io");

    assert_eq!(penadd().arg("fit").output().unwrap().status.code(), Some(2));
}
