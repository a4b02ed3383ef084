use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pathosynth::io::{read_volume, write_nifti, Datatype};
use pathosynth::phantom::write_phantom_dataset;
use serde_json::Value;

fn pathosynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathosynth"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(manifest: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "generate",
        s(manifest),
        s(out),
        "--sample-size",
        "16",
        "--batch-size",
        "3",
    ];
    args.extend_from_slice(extra);
    pathosynth(&args)
}

fn sample_dirs(out: &Path) -> Vec<PathBuf> {
    let mut dirs = Vec::new();
    for subject in std::fs::read_dir(out).unwrap() {
        for sample in std::fs::read_dir(subject.unwrap().path()).unwrap() {
            dirs.push(sample.unwrap().path());
        }
    }
    dirs.sort();
    dirs
}

#[test]
fn generate_writes_one_directory_per_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_phantom_dataset(&tmp.path().join("data"), 20).unwrap();
    let out = tmp.path().join("out");
    let o = generate(&manifest, &out, &["--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dirs = sample_dirs(&out);
    assert_eq!(dirs.len(), 3);
    for d in &dirs {
        for f in ["meta.json", "image.nii.gz", "pathology.nii.gz"] {
            assert!(d.join(f).is_file(), "{} lacks {f}", d.display());
        }
        assert_eq!(read_volume(d.join("image.nii.gz")).unwrap().dims(), [16; 3]);
    }
    let line: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(line["batch"], 0);
    let sev: Vec<f64> = line["severities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!(sev.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn reruns_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_phantom_dataset(&tmp.path().join("data"), 20).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(generate(&manifest, &a, &["--num-batches", "2"]).status.success());
    assert!(generate(&manifest, &b, &["--num-batches", "2", "--workers", "2"])
        .status
        .success());
    let (da, db) = (sample_dirs(&a), sample_dirs(&b));
    assert_eq!(da.len(), db.len());
    for (x, y) in da.iter().zip(&db) {
        for f in ["meta.json", "image.nii.gz"] {
            assert_eq!(std::fs::read(x.join(f)).unwrap(), std::fs::read(y.join(f)).unwrap());
        }
    }
}

#[test]
fn config_file_is_honoured() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_phantom_dataset(&tmp.path().join("data"), 20).unwrap();
    let cfg = tmp.path().join("gen.toml");
    std::fs::write(
        &cfg,
        "batch_size = 2\nsample_size = [12, 10, 8]\n[weights]\nt1only = 0.0\nflaironly = 0.0\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = pathosynth(&[
        "generate",
        s(&manifest),
        s(&out),
        "--config",
        s(&cfg),
        "--num-batches",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dirs = sample_dirs(&out);
    assert_eq!(dirs.len(), 6);
    assert!(dirs.iter().all(|d| d.parent().unwrap().ends_with("sub-01")));
    assert_eq!(read_volume(dirs[0].join("image.nii.gz")).unwrap().dims(), [12, 10, 8]);
}

#[test]
fn invalid_input_fails_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("manifest.toml");
    std::fs::write(&bad, "schema_version = 1\n[[subjects]]\nid = \"q\"\ndataset = \"d\"\nlabels = \"gone.nii.gz\"\npathology = \"gone.nii.gz\"\ngt_anat = \"gone.nii.gz\"\n").unwrap();
    let o = generate(&bad, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("q") && err.contains("labels"), "{err}");

    let o = pathosynth(&["generate", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    let o = generate(&bad, &tmp.path().join("out"), &["--batch-size", "0"]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn metrics_inspect_and_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_phantom_dataset(&tmp.path().join("data"), 20).unwrap();
    let out = tmp.path().join("out");
    assert!(generate(&manifest, &out, &["--seed", "1"]).status.success());
    let dirs = sample_dirs(&out);
    let image = dirs[0].join("image.nii.gz");

    let o = pathosynth(&["metrics", s(&image), s(&image), "--metric", "psnr"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["value"], "inf");
    for m in ["l1", "ssim", "dice"] {
        let o = pathosynth(&["metrics", s(&image), s(&image), "--metric", m]);
        let v: Value = serde_json::from_slice(&o.stdout).unwrap();
        let expect = if m == "l1" { 0.0 } else { 1.0 };
        assert!((v["value"].as_f64().unwrap() - expect).abs() < 1e-9, "{m}: {v}");
    }
    let o = pathosynth(&["metrics", s(&out), s(&image), "--metric", "l1"]);
    let n = String::from_utf8_lossy(&o.stdout).lines().count();
    assert!(n >= 3 * 3, "{n} records");

    let pgm = tmp.path().join("slice.pgm");
    let o = pathosynth(&["inspect", s(&dirs[0]), "--slice", "y:4", "--out", s(&pgm)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["slice"]["axis"], "y");
    let bytes = std::fs::read(&pgm).unwrap();
    assert!(bytes.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(bytes.len(), b"P5\n16 16\n255\n".len() + 256);

    let mut args = vec!["loss".to_string()];
    for d in &dirs {
        let target = read_volume(d.join("image.nii.gz")).unwrap();
        write_nifti(&target, d.join("pred_anat.nii.gz"), Datatype::F32).unwrap();
        write_nifti(&target, d.join("pred_pathol.nii.gz"), Datatype::F32).unwrap();
        args.push(d.display().to_string());
    }
    args.extend(["--iteration".into(), "100000".into()]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = pathosynth(&refs);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["iteration"], 100000);
    assert!(v["total"].as_f64().unwrap() > 0.0);
}
