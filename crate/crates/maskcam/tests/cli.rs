use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use maskcam::io::read_tensor;

fn dataset() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

fn maskcam(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskcam"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn maskcam")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = maskcam(dir, args);
    assert!(
        out.status.success(),
        "maskcam {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn smoke_config(name: &str) -> String {
    format!(
        "[experiment]\nname = {name}\n\n\
         [optics]\npreset = st7735r\nd1 = 0.40\nd2 = 0.004\ngrid = 96x128\n\n\
         [sim]\ndataset = {}\nh_obj = 0.12\ndownsample = 4\nsnr_db = 40\nseed = 0\nn_train = 200\nn_test = 100\n\n\
         [train]\narchitecture = lr\nmode = fixed\nepochs = 2\nbatch_size = 64\noptimizer = adam\nlr = 0.001\n\n\
         [attack]\niters = 5\nresolutions = 24x32,48x64,96x128\nn_images = 2\n",
        dataset().display()
    )
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("exp.ini");
    fs::write(&path, text).unwrap();
    path
}

fn run_pipeline(dir: &Path) -> Vec<u8> {
    write_config(dir, &smoke_config("smoke"));
    for cmd in ["simulate-psf", "simulate-dataset", "train"] {
        ok(dir, &["--config", "exp.ini", cmd]);
    }
    fs::read(dir.join("out/smoke/checkpoints/metrics.csv")).unwrap()
}

#[test]
fn smoke_pipeline_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let first = run_pipeline(a.path());
    let text = String::from_utf8(first.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,train_acc,test_acc,loss");
    assert_eq!(lines.len(), 3);

    let root = a.path().join("out/smoke");
    for rel in ["psf/psf.tensor", "psf/psf.png", "psf/psf.meta", "embeddings/train.tensor", "embeddings/index.csv", "checkpoints/classifier.ckpt"] {
        assert!(root.join(rel).is_file(), "missing {rel}");
    }
    let train = read_tensor(&root.join("embeddings/train.tensor")).unwrap();
    assert_eq!(train.shape(), &[200, 1, 24, 32]);
    let manifest = fs::read_to_string(root.join("manifest.txt")).unwrap();
    for section in ["[simulate-psf]", "[simulate-dataset]", "[train]", "config_hash="] {
        assert!(manifest.contains(section), "manifest lacks {section}");
    }
    assert!(!root.join(".lock").exists());

    // A second run in a fresh directory and a rerun in place both reproduce the metrics.
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run_pipeline(b.path()), first);
    assert_eq!(run_pipeline(a.path()), first);

    let gallery = root.join("psf");
    let out = maskcam(a.path(), &["metrics", gallery.to_str().unwrap(), gallery.to_str().unwrap()]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("file,psnr,ssim\n"));
    assert!(csv.contains("psf.png,inf,1.000000"));
}

#[test]
fn attack_emits_two_rows_per_resolution() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &smoke_config("atk"));
    ok(dir.path(), &["--config", "exp.ini", "simulate-psf"]);
    ok(dir.path(), &["--config", "exp.ini", "attack", "--decoy-seed", "3"]);
    let root = dir.path().join("out/atk/attack");
    let csv = fs::read_to_string(root.join("attack.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "resolution,psf_kind,psnr_mean,ssim_mean,n_images");
    assert_eq!(lines.len(), 7);
    let kinds: Vec<(&str, &str)> = lines[1..]
        .iter()
        .map(|l| {
            let mut f = l.split(',');
            (f.next().unwrap(), f.next().unwrap())
        })
        .collect();
    assert_eq!(
        kinds,
        [
            ("24x32", "good"),
            ("24x32", "bad"),
            ("48x64", "good"),
            ("48x64", "bad"),
            ("96x128", "good"),
            ("96x128", "bad")
        ]
    );
    assert!(root.join("gallery/24x32/001_truth.png").is_file());

    // A PSF file works as the decoy, and a narrower resolution list is honoured.
    let decoy = dir.path().join("out/atk/psf/psf.tensor");
    ok(dir.path(), &["--config", "exp.ini", "attack", "--psf", decoy.to_str().unwrap(), "--resolutions", "48x64", "--iters", "3"]);
    let csv = fs::read_to_string(root.join("attack.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn missing_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = smoke_config("broken").replace("d2 = 0.004\n", "");
    write_config(dir.path(), &text);
    let out = maskcam(dir.path(), &["--config", "exp.ini", "simulate-psf"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("optics.d2"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn invalid_values_never_create_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        smoke_config("bad").replace("snr_db = 40", "snr_db = loud"),
        smoke_config("bad").replace("grid = 96x128", "grid = 96x"),
        smoke_config("bad").replace("resolutions = 24x32,48x64,96x128", "resolutions = 25x32"),
        smoke_config("bad").replace(&dataset().display().to_string(), "/nonexistent/mnist"),
    ];
    for text in cases {
        write_config(dir.path(), &text);
        for cmd in ["simulate-dataset", "train", "attack"] {
            let out = maskcam(dir.path(), &["--config", "exp.ini", cmd]);
            assert_eq!(out.status.code(), Some(2), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        }
    }
    assert!(!dir.path().join("out").exists());
    let out = maskcam(dir.path(), &["simulate-psf"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn coded_aperture_preset_emits_mls_mask() {
    let dir = tempfile::tempdir().unwrap();
    let text = smoke_config("mls").replace("preset = st7735r", "preset = coded-aperture");
    write_config(dir.path(), &text);
    ok(dir.path(), &["--config", "exp.ini", "simulate-psf"]);
    let root = dir.path().join("out/mls/psf");
    let pattern = read_tensor(&root.join("mls.tensor")).unwrap();
    assert_eq!(pattern.shape(), &[126, 126]);
    assert!(pattern.values().all(|v| v == 0.0 || v == 1.0));
    let ones = pattern.values().filter(|&v| v == 1.0).count();
    // 64 of 126 entries per tiled row are ones, and the mask is an outer product.
    assert_eq!(ones, 64 * 64);
    let psf = read_tensor(&root.join("psf.tensor")).unwrap();
    assert_eq!(&psf.shape()[1..], &[96, 128]);
    let meta = fs::read_to_string(root.join("psf.meta")).unwrap();
    assert!(meta.contains("geometry_hash=mls63"));
}
