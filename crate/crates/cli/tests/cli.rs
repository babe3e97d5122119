use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use ttr_core::{write_field, Dims, DisplacementField};

fn ttr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttr"))
        .args(args)
        .env_remove("REG_TTR_THREADS")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, seed: &str) {
    let out = ttr(&["synth", "--seed", seed, "--dims", "16", "--init-noise", "0.25", "--out-dir", s(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn report(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    synth(&dir.path().join("a"), "7");
    synth(&dir.path().join("b"), "7");
    synth(&dir.path().join("c"), "8");
    for f in ["fixed.mha", "moving.mha", "fixed_labels.mha", "moving_labels.mha", "gt_field.mha", "init_field.mha"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
        assert_ne!(a, fs::read(dir.path().join("c").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn refine_defaults_to_abdomen_preset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "1");
    let rep = d.join("r.json");
    let out = ttr(&[
        "refine", "--fixed", s(&d.join("fixed.mha")), "--moving", s(&d.join("moving.mha")),
        "--out-field", s(&d.join("f.mha")), "--out-warped", s(&d.join("w.mha")), "--report", s(&rep),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&rep);
    let cfg = &r["config"];
    assert_eq!(cfg["preset"], "abdomen");
    assert_eq!(cfg["lr"], 0.1);
    assert_eq!(cfg["max_iters"], 10);
    assert_eq!(cfg["patience"], 3);
    assert_eq!(cfg["weights"]["lambda_ncc"], 1.0);
    assert_eq!(cfg["weights"]["lambda_ssim"], 2.0);
    assert_eq!(cfg["weights"]["lambda_smooth"], 1.0);
    for key in ["loss_trace", "stop_reason", "iters_run", "wall_time_s"] {
        assert!(r.get(key).is_some(), "{key}");
    }
    assert!(r.get("metrics").is_none());
    let trace = r["loss_trace"].as_array().unwrap();
    assert_eq!(trace.len() as u64, r["iters_run"].as_u64().unwrap() + 1);
    for entry in trace {
        for key in ["total", "ncc", "ssim", "smooth"] {
            assert!(entry[key].is_f64(), "{key}");
        }
    }
    assert!(d.join("f.mha").exists() && d.join("w.mha").exists());
}

#[test]
fn presets_and_explicit_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "2");
    let fixed = d.join("fixed.mha");
    let moving = d.join("moving.mha");
    let rep = d.join("r.json");
    let base = ["refine", "--fixed", s(&fixed), "--moving", s(&moving), "--report", s(&rep)];

    let out = ttr(&[&base[..], &["--preset", "cardiac", "--max-iters", "2"]].concat());
    assert!(out.status.success());
    assert_eq!(report(&rep)["config"]["lr"], 0.025);

    let out = ttr(&[&base[..], &["--preset", "cardiac", "--lr", "0.05", "--max-iters", "2"]].concat());
    assert!(out.status.success());
    assert_eq!(report(&rep)["config"]["lr"], 0.05);

    let out = ttr(&[&base[..], &["--preset", "custom"]].concat());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ssim_ablation_reports_zero_component() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "3");
    let rep = d.join("r.json");
    let out = ttr(&[
        "refine", "--fixed", s(&d.join("fixed.mha")), "--moving", s(&d.join("moving.mha")),
        "--lambda-ssim", "0", "--report", s(&rep),
    ]);
    assert!(out.status.success());
    let r = report(&rep);
    assert_eq!(r["config"]["weights"]["lambda_ssim"], 0.0);
    assert!(r["loss_trace"].as_array().unwrap().iter().all(|e| e["ssim"] == 0.0));
}

#[test]
fn refine_with_labels_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "4");
    let rep = d.join("r.json");
    let out = ttr(&[
        "refine", "--fixed", s(&d.join("fixed.mha")), "--moving", s(&d.join("moving.mha")),
        "--init-field", s(&d.join("init_field.mha")),
        "--fixed-labels", s(&d.join("fixed_labels.mha")), "--moving-labels", s(&d.join("moving_labels.mha")),
        "--report", s(&rep),
    ]);
    assert!(out.status.success());
    let m = &report(&rep)["metrics"];
    let dice = m["dice_mean"].as_f64().unwrap();
    assert!(dice > 0.5 && dice <= 1.0);
    assert!(m["sdlogj"].as_f64().unwrap() >= 0.0);
    assert!(m["hd95_per_label"].is_object());
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "5");

    let out = ttr(&["refine", "--moving", s(&d.join("moving.mha"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--fixed"));

    let out = ttr(&["refine", "--fixed", s(&d.join("missing.mha")), "--moving", s(&d.join("moving.mha"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(String::from_utf8_lossy(&out.stderr).trim().lines().count(), 1);

    let out = ttr(&["refine", "--fixed", s(&d.join("fixed.mha")), "--moving", s(&d.join("moving.mha")), "--ncc-window", "4"]);
    assert_eq!(out.status.code(), Some(2));

    let small = d.join("small");
    let o = ttr(&["synth", "--dims", "12", "--out-dir", s(&small)]);
    assert!(o.status.success());
    let out = ttr(&["refine", "--fixed", s(&d.join("fixed.mha")), "--moving", s(&small.join("moving.mha"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = ttr(&["--threads", "0", "gradcheck"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn non_finite_initial_loss_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "6");
    // Finite on disk, but squared differences overflow in the smoothness term.
    let dims = Dims::cube(16);
    let huge = DisplacementField::from_fn(dims, [1.0; 3], |i, _, _| if i % 2 == 0 { [1e200, 0.0, 0.0] } else { [-1e200, 0.0, 0.0] }).unwrap();
    let init = d.join("huge.mha");
    write_field(&huge, &init).unwrap();
    let out = ttr(&[
        "refine", "--fixed", s(&d.join("fixed.mha")), "--moving", s(&d.join("moving.mha")),
        "--init-field", s(&init),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn metrics_with_identical_labels() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "7");
    let labels = d.join("fixed_labels.mha");
    let out = ttr(&["metrics", "--fixed-labels", s(&labels), "--moving-labels", s(&labels)]);
    assert!(out.status.success());
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["dice_mean"], 1.0);
    assert_eq!(r["sdlogj"], 0.0);
    assert!(r["hd95_per_label"].as_object().unwrap().values().all(|v| v == 0.0));
}

#[test]
fn warp_by_ground_truth_reproduces_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "8");
    let gt = d.join("gt_field.mha");
    let out = ttr(&["warp", "--labels", s(&d.join("moving_labels.mha")), "--field", s(&gt), "--out", s(&d.join("wl.mha"))]);
    assert!(out.status.success());
    assert_eq!(fs::read(d.join("wl.mha")).unwrap(), fs::read(d.join("fixed_labels.mha")).unwrap());
    let out = ttr(&["warp", "--moving", s(&d.join("moving.mha")), "--field", s(&gt), "--out", s(&d.join("w.mha"))]);
    assert!(out.status.success());
    assert_eq!(fs::read(d.join("w.mha")).unwrap(), fs::read(d.join("fixed.mha")).unwrap());
}

#[test]
fn gradcheck_passes() {
    let out = ttr(&["gradcheck", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(r["max_rel_error"].as_f64().unwrap() <= 1e-3);
    assert_eq!(r["passed"], true);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "9");
    let mut outputs = Vec::new();
    for threads in ["1", "2", "5"] {
        let f = d.join(format!("f{threads}.mha"));
        let rep = d.join(format!("r{threads}.json"));
        let out = Command::new(env!("CARGO_BIN_EXE_ttr"))
            .args(["refine", "--fixed", s(&d.join("fixed.mha")), "--moving", s(&d.join("moving.mha"))])
            .args(["--out-field", s(&f), "--report", s(&rep)])
            .env("REG_TTR_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success());
        let mut r = report(&rep);
        r.as_object_mut().unwrap().remove("wall_time_s");
        outputs.push((fs::read(&f).unwrap(), r));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}
