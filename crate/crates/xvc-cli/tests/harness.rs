//! Harness-level tests: registry dispatch, config plumbing, output
//! determinism, the gradcheck negative control, and the metrics subcommand
//! end to end (through the compiled binary).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use xvc_cli::context::{CliOverrides, Context};
use xvc_cli::experiments::{find, gradcheck_registry, negative_control_case, registry, run_cases};
use xvc_core::config::ConfigDoc;
use xvc_core::rng::SplitMix64;

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("xvc_harness_{}_{tag}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_experiment(name: &str, out: &Path, seed: u64) -> xvc_cli::ExperimentReport {
    let exp = find(name).unwrap();
    let overrides = CliOverrides {
        out: Some(out.to_path_buf()),
        seed: Some(seed),
        ..Default::default()
    };
    let ctx = Context::build(name, exp.default_config(), &overrides).unwrap();
    exp.run(&ctx).unwrap()
}

#[test]
fn registry_contains_all_subcommands() {
    let names: Vec<&str> = registry().iter().map(|e| e.name()).collect();
    assert_eq!(
        names,
        vec!["gradcheck", "photometric", "robustness", "voxelsweep", "totalloss", "metrics"]
    );
    for name in names {
        assert!(find(name).is_some());
    }
    assert!(find("nonsense").is_none());
}

#[test]
fn default_experiments_pass_their_assertions() {
    for name in ["gradcheck", "photometric", "robustness", "voxelsweep", "totalloss"] {
        let out = temp_dir(&format!("pass_{name}"));
        let report = run_experiment(name, &out, 7);
        assert!(report.passed(), "{name} failed: {:?}", report.assertions);
        assert!(!report.outputs.is_empty());
    }
}

#[test]
fn negative_control_is_a_named_failure() {
    let mut cases = gradcheck_registry();
    let baseline = cases.len();
    cases.push(negative_control_case());
    let results = run_cases(&cases, 7, 1e-5, 2);
    assert_eq!(results.len(), baseline + 1);
    let (name, outcome) = results.last().unwrap();
    assert_eq!(name, "square_wrong_backward");
    let err = outcome.as_ref().unwrap();
    assert!(*err > 0.1, "corrupted backward must exceed tolerance, got {err}");
    // and every honest case still passes
    for (name, outcome) in &results[..baseline] {
        assert!(*outcome.as_ref().unwrap() < 1e-4, "{name} regressed");
    }
}

#[test]
fn same_seed_gives_byte_identical_csvs() {
    for name in ["gradcheck", "photometric", "robustness", "voxelsweep", "totalloss"] {
        let out_a = temp_dir(&format!("det_a_{name}"));
        let out_b = temp_dir(&format!("det_b_{name}"));
        run_experiment(name, &out_a, 99);
        run_experiment(name, &out_b, 99);
        let mut compared = 0;
        for entry in fs::read_dir(&out_a).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().and_then(|e| e.to_str()) == Some("csv") {
                let twin = out_b.join(path.file_name().unwrap());
                assert_eq!(
                    fs::read(&path).unwrap(),
                    fs::read(&twin).unwrap(),
                    "{name}: {} differs between runs",
                    path.display()
                );
                compared += 1;
            }
        }
        assert!(compared > 0, "{name} produced no CSVs");
    }
}

#[test]
fn different_seeds_change_the_config_hash() {
    let out_a = temp_dir("hash_a");
    let out_b = temp_dir("hash_b");
    run_experiment("gradcheck", &out_a, 1);
    run_experiment("gradcheck", &out_b, 2);
    let first = fs::read_to_string(out_a.join("gradcheck.csv")).unwrap();
    let second = fs::read_to_string(out_b.join("gradcheck.csv")).unwrap();
    let hash = |text: &str| text.lines().next().unwrap().to_string();
    assert_ne!(hash(&first), hash(&second));
}

#[test]
fn user_config_overrides_scene_sections() {
    let dir = temp_dir("override");
    let config = dir.join("custom.cfg");
    // a custom sweep with only sub-voxel displacements still passes the
    // per-row assertions but cannot demonstrate a crossing
    fs::write(&config, "[sweep]\ndisplacements = 0 0 0,0.05 0 0\n").unwrap();
    let exp = find("robustness").unwrap();
    let overrides = CliOverrides {
        config: Some(config),
        out: Some(dir.join("out")),
        ..Default::default()
    };
    let ctx = Context::build("robustness", exp.default_config(), &overrides).unwrap();
    let report = exp.run(&ctx).unwrap();
    assert!(!report.passed());
    let failing: Vec<&str> = report
        .assertions
        .iter()
        .filter(|a| !a.passed)
        .map(|a| a.name.as_str())
        .collect();
    assert_eq!(failing, vec!["robustness/boundary_crossing_detected"]);
}

#[test]
fn totalloss_grid_defaults_to_joint_bounding_box() {
    let dir = temp_dir("aabb");
    let config = dir.join("grid.cfg");
    // a [grid] section without bounds: the experiment must fall back to the
    // joint AABB of the two clouds
    fs::write(&config, "[grid]\nnx = 16\nny = 16\nnz = 12\n").unwrap();
    let exp = find("totalloss").unwrap();
    let overrides = CliOverrides {
        config: Some(config),
        out: Some(dir.join("out")),
        ..Default::default()
    };
    let ctx = Context::build("totalloss", exp.default_config(), &overrides).unwrap();
    let report = exp.run(&ctx).unwrap();
    assert!(report.passed(), "{:?}", report.assertions);
}

#[test]
fn context_scene_file_reference_is_loaded() {
    let dir = temp_dir("scenefile");
    let scene = dir.join("scene.cfg");
    fs::write(
        &scene,
        "[scene]\nlight_scale = 1\n[plane]\nname = solo\naxis = z\ncenter = 0 0 4\nextent = 100 100\ntexture = constant\nvalue = 0.5\n",
    )
    .unwrap();
    let doc = ConfigDoc::parse(&format!(
        "[experiment]\nname = demo\nscene = {}\nout = {}\n",
        scene.display(),
        dir.join("out").display()
    ))
    .unwrap();
    // scene file splicing happens in Context::build
    let exp_doc_text = doc.to_text();
    let overrides = CliOverrides::default();
    let tmp_cfg = dir.join("exp.cfg");
    fs::write(&tmp_cfg, &exp_doc_text).unwrap();
    let ctx = Context::build(
        "demo",
        "[experiment]\nname = demo\n",
        &CliOverrides { config: Some(tmp_cfg), ..overrides },
    )
    .unwrap();
    let loaded = ctx.scene().unwrap();
    assert_eq!(loaded.primitives.len(), 1);
    assert_eq!(loaded.primitives[0].name, "solo");
}

// ── binary-level tests ───────────────────────────────────────────────────

fn xvc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_xvc"))
}

#[test]
fn binary_gradcheck_exits_zero_and_writes_csv() {
    let dir = temp_dir("bin_gradcheck");
    let status = xvc()
        .args(["gradcheck", "--out"])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(dir.join("gradcheck.csv")).unwrap();
    assert!(csv.starts_with("# config_hash="));
    let rows = csv.lines().skip(2).count();
    assert_eq!(rows, gradcheck_registry().len());
}

#[test]
fn binary_metrics_single_pair() {
    let dir = temp_dir("bin_metrics");
    let gt = dir.join("gt.xvt");
    let pred = dir.join("pred.xvt");
    xvc_core::io::write_tensor(&gt, &[1, 2], &[4.0, 10.0]).unwrap();
    xvc_core::io::write_tensor(&pred, &[1, 2], &[5.0, 8.0]).unwrap();
    let out = dir.join("out");
    let status = xvc()
        .args(["metrics", "--median-scale", "false"])
        .arg("--pred")
        .arg(&pred)
        .arg("--gt")
        .arg(&gt)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.next().unwrap(), "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3");
    let row: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!((row[0] - 0.225).abs() < 1e-9);
    assert!((row[2] - 2.5f64.sqrt()).abs() < 1e-9);
}

#[test]
fn binary_metrics_manifest_split() {
    let dir = temp_dir("bin_manifest");
    let mut rng = SplitMix64::new(5);
    let gt_vals: Vec<f64> = (0..16).map(|_| rng.uniform(2.0, 40.0)).collect();
    let pred_vals: Vec<f64> = gt_vals.iter().map(|v| v * rng.uniform(0.9, 1.1)).collect();
    let gt = dir.join("gt.xvt");
    let pred = dir.join("pred.xvt");
    xvc_core::io::write_tensor(&gt, &[4, 4], &gt_vals).unwrap();
    xvc_core::io::write_tensor(&pred, &[4, 4], &pred_vals).unwrap();
    let manifest = dir.join("pairs.txt");
    fs::write(
        &manifest,
        format!("{} {} motion\n{} {} static\n", pred.display(), gt.display(), pred.display(), gt.display()),
    )
    .unwrap();
    let out = dir.join("out");
    let status = xvc()
        .arg("metrics")
        .arg("--manifest")
        .arg(&manifest)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(out.join("metrics_split.csv")).unwrap();
    let body: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(body[0], "split,abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3");
    assert!(body[1].starts_with("motion,"));
    assert!(body[2].starts_with("static,"));
    // identical pairs in both splits -> identical metric rows
    assert_eq!(body[1].trim_start_matches("motion,"), body[2].trim_start_matches("static,"));
}

#[test]
fn binary_rejects_bad_sweep_flag() {
    let dir = temp_dir("bin_bad_sweep");
    let output = xvc()
        .args(["robustness", "--sweep", "nonsense-without-equals", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("sweep"), "stderr: {stderr}");
}
