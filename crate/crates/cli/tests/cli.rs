use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use patchcluster::io::{read_mask, DatasetManifest, Split};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_patchcluster"))
}

fn run_ok(cmd: &mut Command) -> serde_json::Value {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn failure(out: Output) -> serde_json::Value {
    assert!(!out.status.success(), "expected failure, got {}", String::from_utf8_lossy(&out.stdout));
    serde_json::from_slice(&out.stderr).expect("stderr is JSON")
}

fn small_dataset(dir: &Path) -> PathBuf {
    let cfg = dir.join("synth.json");
    fs::write(
        &cfg,
        r#"{"num_images": 20, "grid": [12, 12], "dim": 16, "anomaly_area_fraction": 0.1, "cell_pixels": 4}"#,
    )
    .unwrap();
    let out = dir.join("ds");
    run_ok(bin().arg("synth").arg("--out").arg(&out).arg("--config").arg(&cfg));
    out.join("manifest.json")
}

#[test]
fn run_reports_three_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let out = dir.path().join("run");
    let summary = run_ok(
        bin()
            .args(["--workers", "1", "run", "--setting", "test", "--ratio", "0.25"])
            .arg("--manifest")
            .arg(&manifest)
            .arg("--out")
            .arg(&out),
    );
    for key in ["image_auroc", "pixel_auroc", "pro"] {
        let v = summary[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("setting,metric,synthetic,Avg"));
    assert!(out.join("scores/maps/img_0000.pcfb").exists());

    // separate eval over the same scores reproduces the report
    let again = dir.path().join("eval");
    run_ok(
        bin()
            .arg("eval")
            .arg("--manifest")
            .arg(&manifest)
            .arg("--scores")
            .arg(out.join("scores"))
            .arg("--out")
            .arg(&again),
    );
    assert_eq!(
        fs::read(out.join("report.json")).unwrap(),
        fs::read(again.join("report.json")).unwrap()
    );

    let heat = dir.path().join("heat");
    run_ok(bin().arg("heatmap").arg("--scores").arg(out.join("scores")).arg("--out").arg(&heat));
    let png = image::open(heat.join("img_0003.png")).unwrap();
    assert_eq!((png.width(), png.height()), (48, 48));
}

#[test]
fn oversized_k_is_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let bank = dir.path().join("bank");
    run_ok(bin().args(["bank", "--ratio", "0.1"]).arg("--manifest").arg(&manifest).arg("--out").arg(&bank));
    let err = failure(
        bin()
            .args(["score", "--k", "1000"])
            .arg("--manifest")
            .arg(&manifest)
            .arg("--bank")
            .arg(&bank)
            .arg("--out")
            .arg(dir.path().join("scores"))
            .output()
            .unwrap(),
    );
    assert_eq!(err["kind"], "insufficient_bank_size");

    let err = failure(
        bin()
            .args(["score", "--setting", "mix"])
            .arg("--manifest")
            .arg(&manifest)
            .arg("--bank")
            .arg(&bank)
            .arg("--out")
            .arg(dir.path().join("scores"))
            .output()
            .unwrap(),
    );
    assert_eq!(err["kind"], "config_conflict");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let outs: Vec<PathBuf> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            run_ok(
                bin()
                    .args(["run", "--setting", "mix", "--ratio", "0.5", "--seed", "3"])
                    .arg("--manifest")
                    .arg(&manifest)
                    .arg("--out")
                    .arg(&out),
            );
            out
        })
        .collect();
    for rel in ["report.json", "report.csv", "scores/scores.json", "scores/maps/img_0007.pcfb", "bank/bank.pcfb", "bank/bank.json"] {
        assert_eq!(
            fs::read(outs[0].join(rel)).unwrap(),
            fs::read(outs[1].join(rel)).unwrap(),
            "{rel} differs"
        );
    }
}

#[test]
fn missing_features_are_a_missing_input() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = DatasetManifest::new("empty", (8, 8));
    manifest.records.push(patchcluster::io::ImageRecord {
        id: "test/good/000".into(),
        feature_paths: vec![],
        mask_path: None,
        image_path: None,
        split: Split::Test,
        label: patchcluster::io::Label::Normal,
    });
    let path = dir.path().join("manifest.json");
    manifest.save(&path).unwrap();
    let err = failure(
        bin()
            .arg("bank")
            .arg("--manifest")
            .arg(&path)
            .arg("--out")
            .arg(dir.path().join("bank"))
            .output()
            .unwrap(),
    );
    assert_eq!(err["kind"], "missing_input");
}

fn write_png(path: &Path, size: u32, fill: impl Fn(u32, u32) -> u8) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    image::GrayImage::from_fn(size, size, |x, y| image::Luma([fill(x, y)])).save(path).unwrap();
}

/// Tiny MVTec-style tree: one train image, one good and one defective test
/// image.
fn toy_mvtec(root: &Path) {
    let cat = root.join("widget");
    write_png(&cat.join("train/good/000.png"), 300, |_, _| 90);
    write_png(&cat.join("test/good/000.png"), 300, |_, _| 100);
    write_png(&cat.join("test/scratch/000.png"), 300, |x, _| (x % 255) as u8);
    // defect in the image center, so it survives the crop
    write_png(&cat.join("ground_truth/scratch/000_mask.png"), 300, |x, y| {
        if (120..180).contains(&x) && (140..160).contains(&y) { 255 } else { 0 }
    });
}

#[test]
fn import_mvtec_toy_tree() {
    let dir = tempfile::tempdir().unwrap();
    toy_mvtec(&dir.path().join("mvtec"));
    let out = dir.path().join("out");
    let summary = run_ok(bin().arg("import-mvtec").arg("--root").arg(dir.path().join("mvtec")).arg("--out").arg(&out));
    assert_eq!(summary["categories"][0]["images"], 3);
    assert_eq!(summary["categories"][0]["anomalous"], 1);

    let manifest = DatasetManifest::load(out.join("widget/manifest.json")).unwrap();
    assert_eq!(manifest.image_size, (224, 224));
    let ids: Vec<&str> = manifest.records.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["train/good/000", "test/good/000", "test/scratch/000"]);
    let defect = manifest.record("test/scratch/000").unwrap();
    assert!(defect.is_anomalous());
    assert!(defect.feature_paths.is_empty());
    assert!(defect.image_path.as_ref().unwrap().is_absolute());
    let mask = read_mask(defect.mask_path.as_ref().unwrap()).unwrap();
    assert_eq!((mask.height, mask.width), (224, 224));
    assert!(mask.data.iter().all(|&v| v <= 1));
    // 60x20 pixels at 300 px scale to about 51x17 at 256 px
    let area = mask.anomalous_pixels();
    assert!((700..1000).contains(&area), "mask area {area}");
}

#[test]
fn import_mvtec_without_test_dir_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("mvtec");
    toy_mvtec(&root);
    fs::remove_dir_all(root.join("widget/test")).unwrap();
    let err = failure(
        bin()
            .arg("import-mvtec")
            .arg("--root")
            .arg(&root)
            .arg("--out")
            .arg(dir.path().join("out"))
            .args(["--category", "widget"])
            .output()
            .unwrap(),
    );
    assert_eq!(err["kind"], "layout");
    assert!(err["missing"][0].as_str().unwrap().ends_with("widget/test"));
}
