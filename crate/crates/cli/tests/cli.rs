use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use poselift::io;
use tempfile::TempDir;

fn poselift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poselift"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = poselift(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

/// A small dictionary learned through the CLI itself.
fn small_dict(dir: &TempDir) -> String {
    let train = path(dir, "train.json");
    let dict = path(dir, "dict.json");
    ok(&["synth-train", "--count", "150", "--seed", "3", "--out", &train]);
    ok(&["learn-dict", "--train", &train, "--k", "8", "--max-rounds", "5", "--seed", "1", "--out", &dict]);
    dict
}

fn synth(dir: &TempDir, dict: &str, prefix: &str, extra: &[&str]) -> String {
    let prefix = path(dir, prefix);
    let mut args = vec!["synth", "--dict", dict, "--frames", "6", "--out-prefix", &prefix];
    args.extend_from_slice(extra);
    ok(&args);
    prefix
}

#[test]
fn help_lists_the_prior_defaults() {
    let out = ok(&["reconstruct", "--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for default in ["[default: 0.5]", "[default: 20]", "[default: 2]"] {
        assert!(text.contains(default), "missing {default} in\n{text}");
    }
}

#[test]
fn perspective_needs_a_calibration() {
    let dir = TempDir::new().unwrap();
    let dict = small_dict(&dir);
    let prefix = synth(&dir, &dict, "s", &[]);
    let out = poselift(&[
        "reconstruct",
        "--poses2d",
        &format!("{prefix}.clean2d.json"),
        "--dict",
        &dict,
        "--camera",
        "persp",
        "--out",
        &path(&dir, "o.json"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--calib"));
}

#[test]
fn bad_inputs_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    let dict = small_dict(&dir);
    let prefix = synth(&dir, &dict, "s", &[]);
    let maps = format!("{prefix}.heatmaps.mchm");
    let mut bytes = fs::read(&maps).unwrap();
    bytes[0] = b'X';
    let corrupt = path(&dir, "corrupt.mchm");
    fs::write(&corrupt, bytes).unwrap();
    let out = poselift(&["reconstruct-em", "--heatmaps", &corrupt, "--dict", &dict, "--out", &path(&dir, "o.json")]);
    assert_eq!(out.status.code(), Some(2));

    let out = poselift(&[
        "reconstruct",
        "--poses2d",
        &format!("{prefix}.clean2d.json"),
        "--dict",
        &dict,
        "--init",
        "zeros",
        "--out",
        &path(&dir, "o.json"),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = poselift(&["reconstruct", "--poses2d", &path(&dir, "missing.json"), "--dict", &dict, "--out", &path(&dir, "o.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(poselift(&["reconstruct", "--alpha", "x"]).status.code(), Some(2));
}

#[test]
fn explicit_flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    let dict = small_dict(&dir);
    let config = path(&dir, "synth.json");
    fs::write(&config, r#"{"frames": 5, "seed": 4, "heatmap_sigma": 0.5}"#).unwrap();
    let a = path(&dir, "a");
    ok(&["synth", "--config", &config, "--dict", &dict, "--frames", "3", "--out-prefix", &a]);
    let (poses, _) = io::read_pose3d(Path::new(&format!("{a}.truth3d.json"))).unwrap();
    assert_eq!(poses.len(), 3);

    let b = path(&dir, "b");
    ok(&["synth", "--dict", &dict, "--frames", "3", "--seed", "4", "--heatmap-sigma", "0.5", "--out-prefix", &b]);
    for suffix in ["truth3d.json", "noisy2d.json", "heatmaps.mchm"] {
        assert_eq!(
            fs::read(format!("{a}.{suffix}")).unwrap(),
            fs::read(format!("{b}.{suffix}")).unwrap(),
            "{suffix}"
        );
    }
}

#[test]
fn zero_em_iterations_match_reconstruction_from_the_argmax() {
    let dir = TempDir::new().unwrap();
    let dict = small_dict(&dir);
    let prefix = synth(&dir, &dict, "s", &["--distractors", "1"]);
    let maps = io::read_heatmaps(Path::new(&format!("{prefix}.heatmaps.mchm"))).unwrap();
    let argmax = path(&dir, "argmax.json");
    let sk = io::read_dictionary(Path::new(&dict)).unwrap().skeleton().clone();
    io::write_pose2d(Path::new(&argmax), &maps.argmax_poses(), &sk, "normalized").unwrap();

    let em = path(&dir, "em.json");
    let given = path(&dir, "given.json");
    ok(&["reconstruct-em", "--heatmaps", &format!("{prefix}.heatmaps.mchm"), "--dict", &dict, "--em-iters", "0", "--out", &em]);
    ok(&["reconstruct", "--poses2d", &argmax, "--dict", &dict, "--out", &given]);
    assert_eq!(fs::read(em).unwrap(), fs::read(given).unwrap());
}

#[test]
fn oversized_dictionary_warns_but_learns() {
    let dir = TempDir::new().unwrap();
    let train = path(&dir, "train.json");
    ok(&["synth-train", "--count", "5", "--out", &train]);
    let out = ok(&["learn-dict", "--train", &train, "--k", "8", "--max-rounds", "3", "--out", &path(&dir, "d.json")]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("underdetermined"));
}

#[test]
fn saved_parameters_restart_reconstruction() {
    let dir = TempDir::new().unwrap();
    let dict = small_dict(&dir);
    let prefix = path(&dir, "s");
    let out = ok(&["synth", "--dict", &dict, "--frames", "6", "--camera", "persp", "--out-prefix", &prefix]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let calib = stdout
        .lines()
        .find_map(|l| l.strip_prefix("calib "))
        .expect("perspective synth prints its intrinsics");
    let first = path(&dir, "first.params.json");
    let clean = format!("{prefix}.clean2d.json");
    ok(&[
        "reconstruct", "--poses2d", &clean, "--dict", &dict, "--camera", "persp", "--calib", calib,
        "--params-out", &first, "--trace", &path(&dir, "trace.json"), "--out", &path(&dir, "a.json"),
    ]);
    let init = format!("file:{first}");
    let out = ok(&[
        "reconstruct", "--poses2d", &clean, "--dict", &dict, "--camera", "persp", "--calib", calib,
        "--init", &init, "--out", &path(&dir, "b.json"),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("iterations"));
    let params = io::read_params(Path::new(&first)).unwrap();
    assert!(params.depths.is_some());
}

#[test]
fn evaluating_a_sequence_against_itself_is_perfect() {
    let dir = TempDir::new().unwrap();
    let dict = small_dict(&dir);
    let prefix = synth(&dir, &dict, "s", &[]);
    let truth = format!("{prefix}.truth3d.json");
    let report = path(&dir, "report.json");
    let csv = path(&dir, "frames.csv");
    ok(&["eval", "--est", &truth, "--gt", &truth, "--report", &report, "--plot-data", &csv]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(v["pje"]["mean"].as_f64(), Some(0.0));
    assert!(v["rec"]["mean"].as_f64().unwrap() < 1e-12);
    assert_eq!(v["pcp"]["overall"].as_f64(), Some(1.0));
    assert_eq!(fs::read_to_string(csv).unwrap().lines().count(), 7);
}
