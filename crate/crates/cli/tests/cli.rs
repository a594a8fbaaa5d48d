use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use svstitch::dataset::MANIFEST_NAME;
use svstitch::image::MaskedImage;

fn svstitch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svstitch"))
        .args(args)
        .env_remove("SVSTITCH_JOBS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_synth(dir: &Path, n: usize, seed: u64) {
    let spec = dir.join("spec.json");
    fs::write(
        &spec,
        format!(r#"{{"n_views": {n}, "width": 160, "height": 120, "perturbation": 5.0, "seed": {seed}}}"#),
    )
    .unwrap();
    let o = svstitch(&["synth", p(&spec), "--out", p(&dir.join("set"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn noise(path: &Path, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (320, 240);
    let vals: Vec<f64> = (0..w * h * 3).map(|_| rng.gen::<f64>()).collect();
    MaskedImage::new(w, h, 3, vals, vec![1.0; w * h]).unwrap().save(path).unwrap();
}

#[test]
fn synth_writes_views_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path(), 4, 1);
    let set = dir.path().join("set");
    for name in ["view_0.png", "view_1.png", "view_2.png", "view_3.png", "reference.png", MANIFEST_NAME] {
        assert!(set.join(name).is_file(), "{name}");
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(set.join(MANIFEST_NAME)).unwrap()).unwrap();
    assert_eq!(manifest["gt_warps"].as_array().unwrap().len(), 4);
}

#[test]
fn synth_stride_follows_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"n_views": 3, "width": 400, "height": 80, "overlap_ratio": 0.15, "perturbation": 0.0}"#).unwrap();
    let out = dir.path().join("set");
    assert_eq!(code(&svstitch(&["synth", p(&spec), "--out", p(&out)])), 0);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join(MANIFEST_NAME)).unwrap()).unwrap();
    let tx: Vec<f64> = manifest["gt_warps"].as_array().unwrap().iter().map(|m| m[2].as_f64().unwrap()).collect();
    for (t, want) in tx.iter().zip([-340.0, 0.0, 340.0]) {
        assert!((t - want).abs() < 1e-9, "{tx:?}");
    }
}

#[test]
fn synth_rejects_invalid_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"n_views": 1}"#).unwrap();
    assert_eq!(code(&svstitch(&["synth", p(&spec), "--out", p(&dir.path().join("x"))])), 2);
}

#[test]
fn stitch_writes_artifacts_and_eval_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path(), 3, 2);
    let run = dir.path().join("run");
    let o = svstitch(&["stitch", p(&dir.path().join("set")), "--out", p(&run)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["panorama.png", "motions.json", "report.csv", "warped_0.png", "mask_2.png"] {
        assert!(run.join(name).is_file(), "{name}");
    }
    let motions: Value = serde_json::from_str(&fs::read_to_string(run.join("motions.json")).unwrap()).unwrap();
    assert_eq!(motions["schema_version"], 1);
    assert_eq!(motions["pairs"].as_array().unwrap().len(), 2);
    assert_eq!(motions["global"][0]["h"].as_array().unwrap().len(), 9);
    assert!(motions["metrics"]["psnr"].as_f64().unwrap() >= 25.0);

    let csv = dir.path().join("eval.csv");
    assert_eq!(code(&svstitch(&["eval", p(&run), "--out", p(&csv)])), 0);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("run,3,"), "{}", lines[1]);

    // Ten runs with distinct scores split 3/4/3.
    let mut dirs = Vec::new();
    for i in 0..10 {
        let d = dir.path().join(format!("r{i}"));
        fs::create_dir(&d).unwrap();
        let mut m = motions.clone();
        m["metrics"]["psnr"] = Value::from(20.0 + i as f64);
        fs::write(d.join("motions.json"), serde_json::to_string(&m).unwrap()).unwrap();
        dirs.push(d);
    }
    let mut args = vec!["eval"];
    args.extend(dirs.iter().map(|d| p(d)));
    let o = svstitch(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let count = |b: &str| text.lines().filter(|l| l.split(',').nth(4) == Some(b)).count();
    assert_eq!((count("easy"), count("moderate"), count("hard")), (3, 4, 3));
    assert!(text.lines().nth(1).unwrap().starts_with("r9,"));
}

#[test]
fn eval_names_missing_motions() {
    let dir = tempfile::tempdir().unwrap();
    let o = svstitch(&["eval", p(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("motions.json"), "{}", stderr(&o));
}

#[test]
fn single_image_manifest_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    noise(&dir.path().join("a.png"), 1);
    fs::write(dir.path().join(MANIFEST_NAME), r#"{"images": ["a.png"]}"#).unwrap();
    let o = svstitch(&["stitch", p(dir.path()), "--out", p(&dir.path().join("run"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn missing_image_is_named() {
    let dir = tempfile::tempdir().unwrap();
    noise(&dir.path().join("a.png"), 1);
    fs::write(dir.path().join(MANIFEST_NAME), r#"{"images": ["a.png", "b.png"]}"#).unwrap();
    let o = svstitch(&["stitch", p(dir.path()), "--out", p(&dir.path().join("run"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("b.png"), "{}", stderr(&o));
}

#[test]
fn unrelated_images_exit_3_naming_the_pair() {
    let dir = tempfile::tempdir().unwrap();
    noise(&dir.path().join("a.png"), 1);
    noise(&dir.path().join("b.png"), 2);
    fs::write(dir.path().join(MANIFEST_NAME), r#"{"images": ["a.png", "b.png"], "cylindrical": false}"#).unwrap();
    let o = svstitch(&["stitch", p(dir.path()), "--out", p(&dir.path().join("run"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("pair (0, 1)"), "{}", stderr(&o));
}

#[test]
fn pair_of_identical_images_reports_infinite_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.png");
    MaskedImage::from_fn(96, 72, 3, |x, y| {
        let v = 0.5 + 0.4 * ((x as f64 / 6.0).sin() * (y as f64 / 9.0).cos());
        ([v, 1.0 - v, 0.3], 1.0)
    })
    .save(&img)
    .unwrap();
    let run = dir.path().join("run");
    let mut o = svstitch(&["pair", p(&img), p(&img), "--out", p(&run)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(run.join("report.csv")).unwrap();
    assert_eq!(report.lines().nth(1).unwrap().split(',').nth(2), Some("inf"), "{report}");
    o = svstitch(&["pair", p(&img), p(&dir.path().join("nope.png")), "--out", p(&run)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn translated_pair_aligns() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path(), 2, 5);
    let set = dir.path().join("set");
    let run = dir.path().join("run");
    let o = svstitch(&["pair", p(&set.join("view_0.png")), p(&set.join("view_1.png")), "--out", p(&run), "--no-cylindrical"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(run.join("report.csv")).unwrap();
    let psnr: f64 = report.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!(psnr >= 25.0, "{psnr}");
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path(), 2, 1);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"stitch": {"align": {"grid_u": 0}}}"#).unwrap();
    let o = svstitch(&["stitch", p(&dir.path().join("set")), "--out", p(&dir.path().join("run")), "--config", p(&cfg)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    fs::write(&cfg, r#"{"bogus": 1}"#).unwrap();
    let o = svstitch(&["stitch", p(&dir.path().join("set")), "--out", p(&dir.path().join("run")), "--config", p(&cfg)]);
    assert_eq!(code(&o), 2);
}
