use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bsn_core::raster::{self, read_tensor, BinaryMask};
use bsn_core::synth::{portrait_suite, SynthParams};

fn bsn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsn"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = bsn(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the single stderr line of a failing run.
fn fails(args: &[&str], cwd: &Path) -> (i32, String) {
    let out = bsn(args, cwd);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "multi-line diagnostic: {err}");
    (out.status.code().unwrap(), err)
}

/// `images/`, `masks/` with three 20x20 synthetic portraits, plus `attrs.csv`.
fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::create_dir_all(root.join("images")).unwrap();
    fs::create_dir_all(root.join("masks")).unwrap();
    let params = SynthParams {
        size: 20,
        ..SynthParams::default()
    };
    let mut attrs = String::from("image_id,attribute\n");
    for s in portrait_suite(3, &params, 11) {
        raster::save_mask(&s.mask, root.join("masks").join(format!("{}.png", s.id))).unwrap();
        raster::save_rgb(&s.image, root.join("images").join(format!("{}.png", s.id))).unwrap();
        let label = match s.attribute.unwrap() {
            bsn_core::loss::Attribute::LongHair => "long",
            bsn_core::loss::Attribute::ShortHair => "short",
        };
        attrs.push_str(&format!("{},{label}\n", s.id));
    }
    fs::write(root.join("attrs.csv"), attrs).unwrap();
    dir
}

fn first_mask(root: &Path) -> PathBuf {
    root.join("masks/synth_000.png")
}

#[test]
fn contour_and_trimap() {
    let dir = fixture();
    let root = dir.path();
    let mask = first_mask(root);
    let m = mask.to_str().unwrap();
    let stdout = ok(&["contour", "--mask", m, "--out", "c.png", "--distance", "d.bsnt"], root);
    assert!(stdout.contains("contour pixels"));
    let contour = raster::load_mask(root.join("c.png")).unwrap();
    let distance = read_tensor(root.join("d.bsnt")).unwrap();
    for (i, &on) in contour.data().iter().enumerate() {
        assert_eq!(on, distance.data()[i] == 0.0);
    }

    ok(&["trimap", "--mask", m, "--width", "4", "--out", "t.png"], root);
    let (_, _, px) = raster::decode_gray8(&fs::read(root.join("t.png")).unwrap()).unwrap();
    assert!(px.iter().all(|p| [0, 128, 255].contains(p)));
    assert!(px.contains(&128));
}

#[test]
fn kernels_and_mean_mask() {
    let dir = fixture();
    let root = dir.path();
    let m = first_mask(root);
    ok(
        &["indiv-kernel", "--mask", m.to_str().unwrap(), "--width", "4", "--norm", "max", "--out", "k.bsnt", "--png", "k.png"],
        root,
    );
    let k = read_tensor(root.join("k.bsnt")).unwrap();
    assert_eq!((k.width(), k.height(), k.channels()), (20, 20, 3));
    for i in 0..k.plane_len() {
        let s: f32 = (0..3).map(|c| k.channel(c)[i]).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
    assert!(root.join("k.png").exists());

    ok(&["global-kernel", "--masks", "masks", "--a", "0.9", "--b", "1.0", "--mode", "literal", "--out", "g.bsnt"], root);
    let g = read_tensor(root.join("g.bsnt")).unwrap();
    assert!(g.data().iter().all(|&v| (0.9 - 1e-6..=1.0 + 1e-6).contains(&v)));

    ok(&["mean-mask", "--masks", "masks", "--out", "m.bsnt", "--png", "m.png"], root);
    let mean = read_tensor(root.join("m.bsnt")).unwrap();
    assert!(mean.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn train_then_eval() {
    let dir = fixture();
    let root = dir.path();
    let train = [
        "train", "--images", "images", "--masks", "masks", "--attributes", "attrs.csv", "--iterations", "8",
        "--phase2-iterations", "4", "--lr", "0.05", "--momentum", "0.9", "--width", "4", "--crop", "16", "--out", "ck",
    ];
    let stdout = ok(&train, root);
    assert!(stdout.contains("trained 12 iterations on 3 images"), "{stdout}");
    let log = fs::read_to_string(root.join("ck/loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 13);
    assert!(log.lines().last().unwrap().starts_with("11,2,"));

    let stdout = ok(
        &["eval", "--masks", "masks", "--checkpoint", "ck", "--images", "images", "--out", "r.csv", "--save-preds", "preds"],
        root,
    );
    assert!(stdout.starts_with("images=3 mean_iou="), "{stdout}");
    let report = fs::read_to_string(root.join("r.csv")).unwrap();
    assert!(report.starts_with("image_id,iou,band_iou\nsynth_000,"));

    // Re-scoring the saved predictions gives the same report.
    ok(&["eval", "--masks", "masks", "--preds", "preds", "--out", "r2.csv"], root);
    assert_eq!(report, fs::read_to_string(root.join("r2.csv")).unwrap());
}

#[test]
fn perfect_predictions_score_one() {
    let dir = fixture();
    let root = dir.path();
    let stdout = ok(&["eval", "--masks", "masks", "--preds", "masks", "--out", "r.csv", "--band-width", "3"], root);
    assert!(stdout.contains("mean_iou=1.000000 mean_band_iou=1.000000"), "{stdout}");
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    for loss in ["ik", "gk", "combined", "baseline"] {
        let stdout = ok(&["gradcheck", "--loss", loss, "--seed", "7", "--size", "4"], dir.path());
        assert!(stdout.starts_with("max relative error"), "{stdout}");
    }
}

#[test]
fn flags_override_config_file() {
    let dir = fixture();
    let root = dir.path();
    fs::write(root.join("run.toml"), "width = 2\nmasks = \"masks\"\nseed = 5\n").unwrap();
    let m = first_mask(root);
    let m = m.to_str().unwrap();
    ok(&["--config", "run.toml", "trimap", "--mask", m, "--out", "from_file.png"], root);
    ok(&["trimap", "--mask", m, "--width", "2", "--out", "flag2.png"], root);
    ok(&["--config", "run.toml", "trimap", "--mask", m, "--width", "6", "--out", "override.png"], root);
    ok(&["trimap", "--mask", m, "--width", "6", "--out", "flag6.png"], root);
    let read = |n: &str| fs::read(root.join(n)).unwrap();
    assert_eq!(read("from_file.png"), read("flag2.png"));
    assert_eq!(read("override.png"), read("flag6.png"));
    assert_ne!(read("flag2.png"), read("flag6.png"));

    // `masks` comes from the file when the flag is absent.
    ok(&["--config", "run.toml", "mean-mask", "--out", "m.bsnt"], root);
}

#[test]
fn diagnostics_name_the_culprit() {
    let dir = fixture();
    let root = dir.path();
    let m = first_mask(root);
    let m = m.to_str().unwrap();

    let (code, err) = fails(&["frobnicate"], root);
    assert_eq!(code, 2);
    assert!(err.contains("frobnicate"), "{err}");

    let (_, err) = fails(&["trimap", "--mask", "missing.png", "--out", "t.png"], root);
    assert!(err.contains("missing.png"), "{err}");

    let (_, err) = fails(&["indiv-kernel", "--mask", m, "--norm", "median", "--out", "k.bsnt"], root);
    assert!(err.contains("--norm"), "{err}");

    let (code, err) = fails(&["train", "--synthetic", "2", "--size", "16", "--lr", "-1", "--out", "x"], root);
    assert_eq!(code, 1);
    assert!(err.contains("--lr"), "{err}");

    let (_, err) = fails(&["train", "--synthetic", "2", "--size", "16", "--crop", "32", "--out", "x"], root);
    assert!(err.contains("--crop"), "{err}");

    let (_, err) = fails(&["global-kernel", "--masks", "masks", "--a", "2", "--b", "1", "--out", "g.bsnt"], root);
    assert!(err.contains("--a") || err.contains("--b"), "{err}");

    let (_, err) = fails(&["mean-mask", "--out", "m.bsnt"], root);
    assert!(err.contains("--masks"), "{err}");

    let (_, err) = fails(&["gradcheck", "--size", "9"], root);
    assert!(err.contains("--size"), "{err}");

    fs::write(root.join("bad.toml"), "width = 2\nwidht = 3\n").unwrap();
    let (_, err) = fails(&["--config", "bad.toml", "trimap", "--mask", m, "--out", "t.png"], root);
    assert!(err.contains("bad.toml") && err.contains("widht") && err.contains("line 2"), "{err}");

    fs::write(root.join("masks/not_a_png.png"), b"hello").unwrap();
    let (_, err) = fails(&["mean-mask", "--masks", "masks", "--out", "m.bsnt"], root);
    assert!(err.contains("not_a_png.png"), "{err}");
}

#[test]
fn mismatched_mask_sizes_are_reported() {
    let dir = fixture();
    let root = dir.path();
    raster::save_mask(&BinaryMask::filled(5, 5, true).unwrap(), root.join("masks/zz_small.png")).unwrap();
    let (_, err) = fails(&["mean-mask", "--masks", "masks", "--out", "m.bsnt"], root);
    assert!(err.contains("masks"), "{err}");
}
