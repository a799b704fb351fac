use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mognmf::cli::{sha256_file, RunManifest, EVAL_CSV_HEADER};
use mognmf::hsi_core::{read_matrix_csv, save_cube, write_matrix_csv, CubeFormat};
use mognmf::simgen::{SceneManifest, SpectralLibrary};
use mognmf::HsiCube;
use ndarray::{Array2, Axis};
use tempfile::TempDir;

fn mognmf(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_mognmf"))
        .args(args)
        .env("MOGNMF_THREADS", "1")
        .output()
        .expect("binary runs");
    let text = format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    (out.status.code().unwrap_or(-1), text)
}

fn ok(args: &[&str]) {
    let (code, text) = mognmf(args);
    assert_eq!(code, 0, "{args:?} failed: {text}");
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_scene(dir: &Path, seed: &str) {
    ok(&[
        "simulate", "--preset", "simu1", "--m", "3", "--snr", "30", "--seed", seed, "--height",
        "10", "--width", "10", "--bands", "24", "--out", s(dir),
    ]);
}

/// Noiseless cube with one pure pixel per endmember, written as CSV.
fn exact_cube(dir: &Path) -> PathBuf {
    let a = SpectralLibrary::synthetic(20, 3, 5).unwrap().spectra;
    let mut sm = Array2::<f64>::zeros((3, 16));
    for j in 0..16 {
        match j {
            0..=2 => sm[[j, j]] = 1.0,
            _ => {
                let w = [1.0 + (j % 3) as f64, 1.0 + (j % 5) as f64, 2.0];
                let t: f64 = w.iter().sum();
                for m in 0..3 {
                    sm[[m, j]] = w[m] / t;
                }
            }
        }
    }
    let cube = HsiCube::new(a.dot(&sm), 4, 4).unwrap();
    let path = dir.join("cube.csv");
    save_cube(&cube, &path, CubeFormat::Csv).unwrap();
    path
}

#[test]
fn simulate_writes_reproducible_scene() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    small_scene(&a, "7");
    small_scene(&b, "7");
    for f in ["cube.raw", "cube.json", "A_true.csv", "S_true.csv", "manifest.json"] {
        assert!(a.join(f).exists(), "{f} missing");
    }
    assert_eq!(fs::read(a.join("cube.raw")).unwrap(), fs::read(b.join("cube.raw")).unwrap());
    let manifest: SceneManifest =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.target_snr_db, Some(30.0));
}

#[test]
fn simulate_rejects_single_endmember() {
    let tmp = TempDir::new().unwrap();
    let (code, _) = mognmf(&["simulate", "--m", "1", "--out", s(tmp.path())]);
    assert_eq!(code, 2);
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope.raw");
    let (code, text) = mognmf(&["unmix", "--cube", s(&missing), "--m", "3", "--out", s(tmp.path())]);
    assert_eq!(code, 2, "{text}");
    assert_eq!(mognmf(&["frobnicate"]).0, 2);
    let cube = exact_cube(tmp.path());
    let (code, _) = mognmf(&["unmix", "--cube", s(&cube), "--m", "3", "--beta", "-1", "--out", s(tmp.path())]);
    assert_eq!(code, 2);
}

#[test]
fn degenerate_cube_is_a_numerical_failure() {
    let tmp = TempDir::new().unwrap();
    let cube = HsiCube::new(Array2::from_elem((6, 9), 0.5), 3, 3).unwrap();
    let path = tmp.path().join("flat.csv");
    save_cube(&cube, &path, CubeFormat::Csv).unwrap();
    let (code, text) = mognmf(&["unmix", "--cube", s(&path), "--m", "2", "--variant", "nmf", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code, 3, "{text}");
}

#[test]
fn nmf_fits_exact_cube() {
    let tmp = TempDir::new().unwrap();
    let cube = exact_cube(tmp.path());
    let out = tmp.path().join("run");
    ok(&["unmix", "--cube", s(&cube), "--m", "3", "--variant", "nmf", "--out", s(&out)]);
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap();
    assert!(manifest.final_objective < 1e-6, "{}", manifest.final_objective);
    let e = read_matrix_csv(&out.join("E.csv")).unwrap();
    assert!(e.iter().all(|&v| v == 0.0));
    let trace = fs::read_to_string(out.join("objective.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("iteration,objective"));
    assert_eq!(trace.lines().count(), manifest.iterations + 1);
}

#[test]
fn mognmf_run_lists_and_hashes_everything() {
    let tmp = TempDir::new().unwrap();
    let scene = tmp.path().join("scene");
    small_scene(&scene, "1");
    let out = tmp.path().join("run");
    let config = tmp.path().join("config.json");
    fs::write(&config, r#"{"params": {"lambda": 0.2, "t1": 40}, "endmembers": 3}"#).unwrap();
    ok(&["unmix", "--cube", s(&scene.join("cube.raw")), "--config", s(&config), "--t1", "30", "--out", s(&out)]);
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.config.params.lambda, 0.2);
    assert_eq!(manifest.config.params.t1, 30, "flags override the config file");
    assert_eq!(manifest.endmembers, 3);
    for f in &manifest.outputs {
        assert!(out.join(f).exists(), "{f} listed but missing");
    }
    for f in ["A.csv", "S.csv", "E.csv", "objective.csv", "H.csv", "abundance_00.pgm"] {
        assert!(manifest.outputs.iter().any(|o| o == f), "{f} not listed");
    }
    let fusion = manifest.fusion.expect("fusion summary");
    assert!(fusion.nnz > 0 && fusion.mean_degree > 0.0);
    let h = read_matrix_csv(&out.join("H.csv")).unwrap();
    assert!((h.sum() - 1.0).abs() < 1e-12);
    assert_eq!(manifest.input_hashes.len(), 3);
    for (path, hash) in &manifest.input_hashes {
        assert_eq!(&sha256_file(Path::new(path)).unwrap(), hash);
    }
}

#[test]
fn unmix_is_bit_reproducible() {
    let tmp = TempDir::new().unwrap();
    let scene = tmp.path().join("scene");
    small_scene(&scene, "2");
    let runs: Vec<PathBuf> = ["r1", "r2"].iter().map(|r| tmp.path().join(r)).collect();
    for out in &runs {
        ok(&["unmix", "--cube", s(&scene.join("cube.raw")), "--m", "3", "--t1", "25", "--seed", "4", "--out", s(out)]);
    }
    for f in ["A.csv", "S.csv", "E.csv", "objective.csv", "H.csv"] {
        assert_eq!(fs::read(runs[0].join(f)).unwrap(), fs::read(runs[1].join(f)).unwrap(), "{f}");
    }
}

#[test]
fn evaluate_truth_against_itself() {
    let tmp = TempDir::new().unwrap();
    let scene = tmp.path().join("scene");
    small_scene(&scene, "3");
    let result = tmp.path().join("result");
    fs::create_dir_all(&result).unwrap();
    let a = read_matrix_csv(&scene.join("A_true.csv")).unwrap();
    let sm = read_matrix_csv(&scene.join("S_true.csv")).unwrap();
    let perm = [2, 0, 1];
    write_matrix_csv(&a.select(Axis(1), &perm).view(), &result.join("A.csv")).unwrap();
    write_matrix_csv(&sm.select(Axis(0), &perm).view(), &result.join("S.csv")).unwrap();
    ok(&["evaluate", "--result", s(&result), "--truth", s(&scene)]);
    let csv = fs::read_to_string(result.join("eval.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(EVAL_CSV_HEADER));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 8);
    assert_eq!(row[3], "30");
    assert!(row[4].parse::<f64>().unwrap() < 1e-7);
    assert_eq!(row[5].parse::<f64>().unwrap(), 0.0);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(result.join("eval.json")).unwrap()).unwrap();
    assert_eq!(json["report"]["per_endmember_sad"].as_array().unwrap().len(), 3);

    write_matrix_csv(&a.select(Axis(1), &[0, 1]).view(), &result.join("A.csv")).unwrap();
    let (code, _) = mognmf(&["evaluate", "--result", s(&result), "--truth", s(&scene)]);
    assert_eq!(code, 2);
}

#[test]
fn ablation_enumerates_cases_and_orders() {
    let tmp = TempDir::new().unwrap();
    let scene = tmp.path().join("scene");
    small_scene(&scene, "4");
    let out = tmp.path().join("ablate");
    ok(&["ablate", "--scene", s(&scene), "--seeds", "0..1", "--t1", "15", "--out", s(&out)]);
    let runs = fs::read_to_string(out.join("ablation_runs.csv")).unwrap();
    let rows: Vec<Vec<String>> = runs
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 10);
    let mut seen: Vec<(String, String)> = rows.iter().map(|r| (r[0].clone(), r[2].clone())).collect();
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), 10);
    assert!(rows.iter().any(|r| r[0] == "mognmf" && r[1] == "3"));

    let orders = fs::read_to_string(out.join("order_runs.csv")).unwrap();
    let ks: Vec<&str> = orders.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(ks, ["1", "2", "3", "1", "2", "3"]);

    let summary = fs::read_to_string(out.join("ablation_summary.csv")).unwrap();
    let case_i = summary
        .lines()
        .find(|l| l.starts_with("cases,I,mognmf,3,"))
        .expect("Case I summary row");
    let mean: f64 = case_i.split(',').nth(5).unwrap().parse().unwrap();
    let hand: f64 = rows
        .iter()
        .filter(|r| r[0] == "mognmf")
        .map(|r| r[4].parse::<f64>().unwrap())
        .sum::<f64>()
        / 2.0;
    assert!((mean - hand).abs() < 1e-12);
}

#[test]
fn fuse_writes_weights_and_graphs() {
    let tmp = TempDir::new().unwrap();
    let cube = exact_cube(tmp.path());
    let out = tmp.path().join("fuse");
    ok(&["fuse", "--cube", s(&cube), "--neighbors", "4", "--write-consensus", "--dump-graphs", "--out", s(&out)]);
    let h = read_matrix_csv(&out.join("H.csv")).unwrap();
    assert_eq!(h.dim(), (2, 3));
    assert!((h.sum() - 1.0).abs() < 1e-12);
    assert_eq!(read_matrix_csv(&out.join("Wm.csv")).unwrap().dim(), (16, 16));
    assert!(out.join("W_view1_order3.csv").exists());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("fusion.json")).unwrap()).unwrap();
    let trace = report["objective_trace"].as_array().unwrap();
    assert!(!trace.is_empty());
}

#[test]
fn sweep_covers_the_grid() {
    let tmp = TempDir::new().unwrap();
    let scene = tmp.path().join("scene");
    small_scene(&scene, "5");
    let out = tmp.path().join("sweep");
    ok(&[
        "sweep", "--scene", s(&scene), "--variants", "nmf,mognmf", "--lambdas", "0.05,0.5",
        "--betas", "1.5", "--snrs", "20,40", "--seeds", "0,1", "--t1", "10", "--keep-outputs",
        "--out", s(&out),
    ]);
    let text = fs::read_to_string(out.join("sweep_runs.csv")).unwrap();
    // per SNR and seed: nmf once, mognmf once per lambda
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 3);
    assert!(text.lines().any(|l| l.starts_with("mognmf,3,1,20,") && l.ends_with(",0.5,1.5")));
    let kept = fs::read_dir(out.join("runs")).unwrap().count();
    assert_eq!(kept, 12);
}
