use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[scene]
n_paths_ris_ap = 6
noise_power_dbm = -120.0

[scene.ap]
count_a = 8
count_b = 8
spacing = 0.0053534
center = { x = -10.0, y = -5.0, z = 2.5 }
axis_a = "X"
axis_b = "Z"

[scene.ris]
count_a = 8
count_b = 8
spacing = 0.0053534
center = { x = -5.1, y = -1.43, z = 2.0 }
axis_a = "Y"
axis_b = "Z"

[grid]
length_m = 1.0
width_m = 0.6
heights_m = [1.5]

[dataset]
seed = 4
"#;

fn rcnr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcnr")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn generate(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let data = dir.join("data");
    let out = rcnr(&["generate", "--config", path(&cfg), "--out", path(&data)]);
    assert!(out.status.success(), "{}", stderr(&out));
    data
}

fn train(data: &Path, dir: &Path, spec: &str, tag: &str) -> (std::path::PathBuf, std::path::PathBuf) {
    let ckpt = dir.join(format!("{tag}.ckpt"));
    let metrics = dir.join(format!("{tag}.csv"));
    let out = rcnr(&[
        "train", "--data", path(data), "--spec", spec, "--blocks", "3", "--out", path(&ckpt), "--metrics",
        path(&metrics), "--epochs", "3", "--batch-size", "8", "--quiet",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    (ckpt, metrics)
}

#[test]
fn generate_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path());
    for f in ["manifest", "inputs.bin", "labels.bin"] {
        assert!(data.join(f).is_file(), "{f} missing");
    }
    // 6 × 4 grid points, 2 × 8 × 8 floats each.
    assert_eq!(std::fs::metadata(data.join("inputs.bin")).unwrap().len(), 24 * 128 * 4);

    let (ckpt, metrics) = train(&data, dir.path(), "rcnr", "a");
    let csv = std::fs::read_to_string(&metrics).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,test_loss,test_rmse_m");
    assert_eq!(lines.len(), 4);

    let out = rcnr(&["eval", "--data", path(&data), "--ckpt", path(&ckpt)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    let rmse: f64 = stdout.trim().parse().unwrap();
    // The last metrics row records the same evaluation.
    let last: f64 = lines[3].rsplit(',').next().unwrap().parse().unwrap();
    assert!((rmse - last).abs() < 1e-9, "{rmse} vs {last}");
}

#[test]
fn pipeline_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = generate(a.path());
    let db = generate(b.path());
    for f in ["manifest", "inputs.bin", "labels.bin"] {
        assert_eq!(std::fs::read(da.join(f)).unwrap(), std::fs::read(db.join(f)).unwrap(), "{f}");
    }
    let (ca, ma) = train(&da, a.path(), "cnn", "m");
    let (cb, mb) = train(&db, b.path(), "cnn", "m");
    assert_eq!(std::fs::read(ca).unwrap(), std::fs::read(cb).unwrap());
    assert_eq!(std::fs::read(ma).unwrap(), std::fs::read(mb).unwrap());
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "[scene]\nwavelenght = 1.0\n").unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec!["generate".into(), "--config".into(), path(&bad_cfg).into(), "--out".into(), path(dir.path()).into()],
        vec!["eval".into(), "--data".into(), path(&dir.path().join("none")).into(), "--ckpt".into(), "x".into()],
        vec![
            "train".into(), "--data".into(), path(&dir.path().join("none")).into(), "--spec".into(), "rcnr".into(),
            "--out".into(), "c".into(), "--metrics".into(), "m".into(),
        ],
    ];
    for args in cases {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = rcnr(&args);
        assert!(!out.status.success(), "{args:?}");
        let err = stderr(&out);
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        assert!(err.starts_with("error: "), "{err}");
    }
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path());
    let (ckpt, _) = train(&data, dir.path(), "rcnr", "c");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes.truncate(bytes.len() - 5);
    std::fs::write(&ckpt, bytes).unwrap();
    let out = rcnr(&["eval", "--data", path(&data), "--ckpt", path(&ckpt)]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("malformed checkpoint"), "{}", stderr(&out));
}

#[test]
fn unknown_variant_is_a_usage_error() {
    let out = rcnr(&["train", "--data", "d", "--spec", "mlp", "--out", "c", "--metrics", "m"]);
    assert!(!out.status.success());
}

#[test]
fn gradcheck_passes() {
    let out = rcnr(&["gradcheck"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().count() >= 10);
    assert!(stdout.lines().all(|l| l.starts_with("ok")), "{stdout}");
}
