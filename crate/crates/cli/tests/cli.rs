use std::path::Path;
use std::process::{Command, Output};

fn geofuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geofuse")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = geofuse(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    let (clean, degraded, noisy) = (d("clean"), d("degraded"), d("noisy"));
    let (pre, fine, png, report) = (d("pre.ckpt"), d("fine.ckpt"), d("view.png"), d("report.json"));

    ok(&["synth", "--spec", "desk:3:9:32", "--out", p(&clean)]);
    assert!(clean.join("cameras.json").exists());
    ok(&["degrade", "--scene", p(&clean), "--blur", "1.0", "--factor", "2", "--noise", "0.01", "--out", p(&degraded)]);
    ok(&["perturb", "--scene", p(&degraded), "--preset", "small", "--out", p(&noisy)]);
    ok(&["perturb", "--scene", p(&degraded), "--rot-sigma", "0.5", "--pos-sigma", "0.01", "--out", p(&d("custom"))]);
    let train = ["--budget", "steps:2", "--batch", "1", "--crop", "16"];
    let mut args = vec!["pretrain", "--scenes", p(&degraded), p(&noisy), "--out-ckpt", p(&pre)];
    args.extend(train);
    ok(&args);
    let mut args = vec!["finetune", "--scene", p(&degraded), "--ckpt", p(&pre), "--out-ckpt", p(&fine)];
    args.extend(train);
    ok(&args);
    ok(&["enhance", "--scene", p(&degraded), "--ckpt", p(&fine), "--view-index", "0", "--out-png", p(&png)]);
    let img = geofuse::scene::read_png(&png).unwrap();
    assert_eq!(img.shape(), &[3, 32, 32]);
    ok(&["eval", "--scene", p(&degraded), "--ckpt", p(&fine), "--report-json", p(&report)]);

    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let views = json["per_view"].as_array().unwrap();
    assert_eq!(views.len(), 2, "views 0 and 8 are held out");
    for key in ["index", "psnr_in", "psnr_out", "ssim_in", "ssim_out"] {
        assert!(views[0].get(key).is_some(), "{key}");
    }
    assert!(json["mean"]["psnr_out"].is_number());
    assert_eq!(json["config"]["neighbors"], 2);
}

#[test]
fn errors_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let cases: Vec<Vec<&str>> = vec![
        vec!["eval", "--scene", p(&missing), "--ckpt", "x", "--report-json", "r.json"],
        vec!["synth", "--spec", "desk:1:4:32", "--out", p(&missing)],
        vec!["perturb", "--scene", p(&missing), "--preset", "huge", "--out", p(&missing)],
        vec!["pretrain", "--scenes", p(&missing), "--budget", "soon", "--out-ckpt", "c"],
    ];
    for args in cases {
        let out = geofuse(&args);
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!out.stderr.is_empty(), "{args:?} gave no message");
    }
}

#[test]
fn gradcheck_passes() {
    let out = geofuse(&["gradcheck"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.lines().count() >= 20);
    assert!(!stdout.contains("FAILED"));
}
