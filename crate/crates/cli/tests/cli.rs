use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fadc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fadc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("run fadc")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn value(text: &str, key: &str) -> Option<f64> {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .and_then(|v| v.parse().ok())
}

/// One `error:` line and the expected status.
fn assert_error(o: &Output, code: i32) {
    assert_eq!(o.status.code(), Some(code), "stderr: {}", stderr(o));
    let err = stderr(o);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with("error: "), "{err}");
}

#[test]
fn generate_train_evaluate_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = fadc(&["gen-synth", "--out", "synth"], d);
    assert!(gen.status.success(), "{}", stderr(&gen));
    assert_eq!(stdout(&gen).trim(), "train=120 val=30 test=30 classes=3");
    assert!(d.join("synth/test/class_02/009.ppm").is_file());

    fs::write(d.join("run.txt"), "variant = dctvit\ndata_dir = synth\ntrain.epochs = 1\n").unwrap();
    let tr = fadc(&["train", "--config", "run.txt", "--out", "run"], d);
    assert!(tr.status.success(), "{}", stderr(&tr));
    for f in ["metrics.csv", "steps.csv", "config.txt", "checkpoint_final.fadc", "checkpoint_best.fadc"] {
        assert!(d.join("run").join(f).is_file(), "{f}");
    }
    let metrics = fs::read_to_string(d.join("run/metrics.csv")).unwrap();
    assert_eq!(
        metrics.lines().next().unwrap(),
        "epoch,train_loss,train_ce,train_kl,val_acc,lr_backbone,lr_head,c1,c2,alpha_low,alpha_mid,alpha_high,alpha_res"
    );
    assert_eq!(metrics.lines().count(), 2);

    let ev = fadc(&["eval", "--checkpoint", "run/checkpoint_final.fadc", "--data", "synth/test"], d);
    assert!(ev.status.success(), "{}", stderr(&ev));
    let out = stdout(&ev);
    assert!(value(&out, "accuracy").is_some(), "{out}");
    assert_eq!(value(&out, "total"), Some(30.0));
    assert!(value(&out, "mean_ce").is_some());
    assert!(value(&out, "mean_entropy").is_some());
    assert!(value(&out, "class_accuracy.class_01").is_some());

    let ins = fadc(
        &["inspect-dct", "--checkpoint", "run/checkpoint_final.fadc", "--image", "synth/test/class_00/000.ppm", "--out", "bands"],
        d,
    );
    assert!(ins.status.success(), "{}", stderr(&ins));
    assert!(value(&stdout(&ins), "c1").is_some());
    assert!(value(&stdout(&ins), "c2").is_some());
    for f in ["input.ppm", "low.ppm", "mid.ppm", "high.ppm", "mask_low.ppm", "mask_mid.ppm", "mask_high.ppm"] {
        let bytes = fs::read(d.join("bands").join(f)).unwrap();
        assert!(bytes.starts_with(b"P6\n32 32\n255\n"), "{f}");
        assert_eq!(bytes.len(), 13 + 3 * 32 * 32, "{f}");
    }
    // Unclamped dump: bands add back up to the input.
    let dump = fs::read_to_string(d.join("bands/bands.txt")).unwrap();
    let mut worst = 0.0f64;
    let mut rows = 0;
    for line in dump.lines().filter(|l| !l.starts_with('#') && !l.contains('=')) {
        let v: Vec<f64> = line.split(' ').map(|x| x.parse().unwrap()).collect();
        worst = worst.max((v[2] + v[3] + v[4] - v[1]).abs());
        rows += 1;
    }
    assert_eq!(rows, 3 * 32 * 32);
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn untrained_checkpoint_is_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(fadc(&["gen-synth", "--out", "synth"], d).status.success());
    fs::write(d.join("run.txt"), "data_dir = synth\ntrain.epochs = 0\nseed = 3\n").unwrap();
    let tr = fadc(&["train", "--config", "run.txt", "--out", "init"], d);
    assert!(tr.status.success(), "{}", stderr(&tr));
    let ev = fadc(&["eval", "--checkpoint", "init/checkpoint_final.fadc", "--data", "synth/test"], d);
    let acc = value(&stdout(&ev), "accuracy").unwrap();
    assert!((0.13..=0.55).contains(&acc), "{acc}");
}

#[test]
fn error_classes_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    fs::write(d.join("typo.txt"), "train.epoch = 3\n").unwrap();
    assert_error(&fadc(&["train", "--config", "typo.txt", "--out", "o"], d), 3);

    fs::write(d.join("ok.txt"), "data_dir = nowhere\n").unwrap();
    assert_error(&fadc(&["train", "--config", "ok.txt", "--out", "o", "--set", "loss.alpha=2"], d), 3);
    assert_error(&fadc(&["train", "--config", "ok.txt", "--out", "o"], d), 4);
    assert_error(&fadc(&["train", "--config", "missing.txt", "--out", "o"], d), 1);

    fs::write(d.join("bad.fadc"), b"FADC\x01\x00\x00").unwrap();
    assert_error(&fadc(&["eval", "--checkpoint", "bad.fadc", "--data", "."], d), 6);
    fs::write(d.join("bad.fadc"), b"NOPE").unwrap();
    let o = fadc(&["eval", "--checkpoint", "bad.fadc", "--data", "."], d);
    assert_error(&o, 6);
    assert!(stderr(&o).contains("byte 0"), "{}", stderr(&o));

    fs::write(d.join("spec.txt"), "amplitude = -1\n").unwrap();
    assert_error(&fadc(&["gen-synth", "--spec", "spec.txt", "--out", "s"], d), 3);

    let usage = fadc(&["frobnicate"], d);
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn truncated_checkpoint_reports_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("spec.txt"), "image_size = 8\ntrain_per_class = 2\nval_per_class = 0\ntest_per_class = 1\n").unwrap();
    assert!(fadc(&["gen-synth", "--spec", "spec.txt", "--out", "synth"], d).status.success());
    fs::write(
        d.join("run.txt"),
        "variant = vit\ndata_dir = synth\ntrain.epochs = 0\nimage_size = 8\nvit.patch_size = 4\nvit.embed_dim = 8\nvit.layers = 1\nvit.heads = 2\nfeature_dim = 4\n",
    )
    .unwrap();
    assert!(fadc(&["train", "--config", "run.txt", "--out", "o"], d).status.success());
    assert!(d.join("o/checkpoint_final.fadc").is_file());
    assert!(!d.join("o/checkpoint_best.fadc").exists());
    let bytes = fs::read(d.join("o/checkpoint_final.fadc")).unwrap();
    fs::write(d.join("cut.fadc"), &bytes[..bytes.len() - 5]).unwrap();
    assert_error(&fadc(&["eval", "--checkpoint", "cut.fadc", "--data", "synth/test"], d), 6);
    let ok = fadc(&["eval", "--checkpoint", "o/checkpoint_final.fadc", "--data", "synth/test"], d);
    assert!(ok.status.success(), "{}", stderr(&ok));
    assert!(!stdout(&ok).contains("mean_entropy"));

    let ins = fadc(&["inspect-dct", "--checkpoint", "o/checkpoint_final.fadc", "--image", "synth/test/class_00/000.ppm", "--out", "b"], d);
    assert_error(&ins, 3);
}

#[test]
fn gradcheck_passes_with_few_trials() {
    let dir = tempfile::tempdir().unwrap();
    let o = fadc(&["gradcheck", "--trials", "1"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.contains("pipeline.dctvitres.freq.raw_c1"));
    assert!(out.lines().last().unwrap().contains(" 0 failed"), "{out}");
}
