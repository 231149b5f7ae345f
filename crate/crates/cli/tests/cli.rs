use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use dsnerv::media::{save_checkpoint, save_frames, synth_video, SynthKind};
use dsnerv::{Model, ModelSpec};

const BUNDLED: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/tiny.toml");

fn dsnerv(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsnerv"))
        .args(args)
        .current_dir(cwd)
        .env_remove("DSNERV_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = dsnerv(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn failure(args: &[&str], cwd: &Path) -> String {
    let out = dsnerv(args, cwd);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

/// The bundled config with fewer epochs and optional extra edits.
fn quick_config(dir: &Path, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = fs::read_to_string(BUNDLED)
        .unwrap()
        .replace("epochs = 250", "epochs = 20");
    for (from, to) in edits {
        assert!(text.contains(from), "{from}");
        text = text.replace(from, to);
    }
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn csv_column(path: &Path, row: usize, column: usize) -> f64 {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .nth(row)
        .unwrap()
        .split(',')
        .nth(column)
        .unwrap()
        .parse()
        .unwrap()
}

fn strip_time(summary: &str) -> String {
    summary
        .split(", ")
        .filter(|part| !part.ends_with(" s") && !part.contains(" s -> "))
        .collect()
}

#[test]
fn bundled_config_trains_within_budget() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let stdout = ok(&["train", "--config", BUNDLED, "--out", "run"], dir.path());
    assert!(start.elapsed() < Duration::from_secs(600));
    assert!(
        stdout.contains("final eval PSNR") && stdout.contains("49673 params"),
        "{stdout}"
    );
    let run = dir.path().join("run");
    assert!(run.join("model.dsnc").exists());
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(
        log.lines().next(),
        Some("epoch,loss,train_psnr,eval_psnr,lr,seconds")
    );
    assert_eq!(log.lines().count(), 251);
    let initial: f64 = stdout
        .split("(initial ")
        .nth(1)
        .unwrap()
        .split(' ')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(csv_column(&run.join("train_log.csv"), 250, 3) >= initial + 10.0);
}

#[test]
fn same_seed_gives_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(dir.path(), &[]);
    let config = config.to_str().unwrap();
    let a = ok(
        &["train", "--config", config, "--out", "a", "--seed", "4"],
        dir.path(),
    );
    let b = ok(
        &[
            "train",
            "--config",
            config,
            "--out",
            "b",
            "--seed",
            "4",
            "--threads",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(strip_time(&a).replace("a/", "b/"), strip_time(&b));
    assert_eq!(
        fs::read(dir.path().join("a/model.dsnc")).unwrap(),
        fs::read(dir.path().join("b/model.dsnc")).unwrap()
    );
    let c = ok(
        &["train", "--config", config, "--out", "c", "--seed", "5"],
        dir.path(),
    );
    assert_ne!(
        fs::read(dir.path().join("a/model.dsnc")).unwrap(),
        fs::read(dir.path().join("c/model.dsnc")).unwrap()
    );
    assert!(!c.is_empty());
}

#[test]
fn invalid_configs_fail_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(
        dir.path(),
        &[("strides = [2, 2, 2, 2]", "strides = [2, 2, 2]")],
    );
    let err = failure(
        &[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            "run",
        ],
        dir.path(),
    );
    assert!(err.contains("`model`") && err.contains("strides"), "{err}");
    assert!(!dir.path().join("run").exists());

    let config = quick_config(dir.path(), &[("c1 = 19", "c1 = \"wide\"")]);
    let err = failure(&["train", "--config", config.to_str().unwrap()], dir.path());
    assert!(err.contains("model.c1"), "{err}");

    let config = quick_config(dir.path(), &[("static_codes = 3", "static_codes = 30")]);
    let err = failure(&["train", "--config", config.to_str().unwrap()], dir.path());
    assert!(err.contains("`timeline`"), "{err}");
}

#[test]
fn failed_runs_leave_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    let video = synth_video(SynthKind::TexturedPan, 2, 32, 64, 0).unwrap();
    save_frames(&video, &frames).unwrap();
    fs::write(frames.join("00001.png"), b"truncated").unwrap();
    let config = quick_config(
        dir.path(),
        &[
            (
                "synth = \"static_plus_moving_square\"\nframes = 8",
                "path = \"frames\"",
            ),
            ("static_codes = 3", "static_codes = 2"),
            ("dynamic_codes = 4", "dynamic_codes = 2"),
        ],
    );
    let err = failure(
        &[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            "run/nested",
        ],
        dir.path(),
    );
    assert!(err.contains("00001.png"), "{err}");
    assert!(!dir.path().join("run").exists());
}

#[test]
fn reconstruct_matches_the_training_log() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(dir.path(), &[]);
    let config = config.to_str().unwrap();
    ok(&["train", "--config", config, "--out", "run"], dir.path());
    let stdout = ok(
        &["reconstruct", "--config", config, "--out", "run"],
        dir.path(),
    );
    assert!(stdout.contains("MS-SSIM"), "{stdout}");
    let run = dir.path().join("run");
    let logged = csv_column(&run.join("train_log.csv"), 20, 3);
    let scored = csv_column(&run.join("quality.csv"), 9, 1);
    assert!((logged - scored).abs() <= 1e-6, "{logged} vs {scored}");
    assert_eq!(fs::read_dir(run.join("frames")).unwrap().count(), 8);

    ok(
        &[
            "eval",
            "--config",
            config,
            "--checkpoint",
            "run/model.dsnc",
            "--out",
            "eval",
        ],
        dir.path(),
    );
    let err = failure(
        &["eval", "--config", config, "--out", "elsewhere"],
        dir.path(),
    );
    assert!(err.contains("cannot read elsewhere/model.dsnc"), "{err}");
    assert_eq!(csv_column(&dir.path().join("eval/eval.csv"), 9, 1), scored);
}

#[test]
fn interpolate_emits_only_odd_frames() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(
        dir.path(),
        &[("kind = \"reconstruction\"", "kind = \"interpolation\"")],
    );
    let config = config.to_str().unwrap();
    ok(&["train", "--config", config, "--out", "run"], dir.path());
    ok(
        &[
            "interpolate",
            "--config",
            config,
            "--checkpoint",
            "run/model.dsnc",
            "--out",
            "interp",
        ],
        dir.path(),
    );
    let mut names: Vec<String> = fs::read_dir(dir.path().join("interp/frames"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["00001.png", "00003.png", "00005.png", "00007.png"]);
    let report = fs::read_to_string(dir.path().join("interp/quality.csv")).unwrap();
    let rows: Vec<&str> = report
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(rows, ["1", "3", "5", "7", "mean"]);
}

#[test]
fn inpaint_scores_whole_frames() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(
        dir.path(),
        &[(
            "kind = \"reconstruction\"",
            "kind = \"inpainting\"\nmask = { kind = \"central\" }",
        )],
    );
    let config = config.to_str().unwrap();
    ok(&["train", "--config", config, "--out", "run"], dir.path());
    let stdout = ok(&["inpaint", "--config", config, "--out", "run"], dir.path());
    assert!(stdout.contains("masked region PSNR"), "{stdout}");
    let report = fs::read_to_string(dir.path().join("run/quality.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 8 + 1);
    let frame = image::open(dir.path().join("run/frames/00003.png")).unwrap();
    assert_eq!((frame.height(), frame.width()), (32, 64));
}

#[test]
fn compression_sweep_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(dir.path(), &[]);
    let config = config.to_str().unwrap();
    ok(&["train", "--config", config, "--out", "run"], dir.path());
    let stdout = ok(
        &["compress", "--config", config, "--out", "run"],
        dir.path(),
    );
    let rd = fs::read_to_string(dir.path().join("run/rd.csv")).unwrap();
    let rows: Vec<Vec<&str>> = rd.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rd.lines().next(), Some("bits,sparsity,bytes,bpp,psnr"));
    assert_eq!(rows.len(), 3);
    let psnr: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    assert!(psnr.windows(2).all(|p| p[1] >= p[0]), "{psnr:?}");
    for row in &rows {
        let size = fs::metadata(dir.path().join(format!("run/model-{}b.dsnv", row[0])))
            .unwrap()
            .len();
        assert_eq!(row[2].parse::<u64>().unwrap(), size);
        let bpp = size as f64 * 8.0 / (8.0 * 32.0 * 64.0);
        assert_eq!(row[3], format!("{bpp:.8}"));
        assert!(stdout.contains(&format!("{bpp:.6} bpp")), "{stdout}");
    }

    let printed = ok(
        &["decompress", "run/model-8b.dsnv", "--out", "restored"],
        dir.path(),
    );
    assert!(printed.starts_with("bpp "), "{printed}");
    fs::remove_file(dir.path().join("run/model.dsnc")).unwrap();
    ok(
        &[
            "reconstruct",
            "--config",
            config,
            "--checkpoint",
            "restored/decompressed.dsnc",
            "--out",
            "decoded",
        ],
        dir.path(),
    );
    let psnr8 = csv_column(&dir.path().join("decoded/quality.csv"), 9, 1);
    assert!((psnr8 - psnr[2]).abs() <= 1e-6, "{psnr8} vs {}", psnr[2]);

    let single = ok(
        &[
            "compress",
            "--config",
            config,
            "--checkpoint",
            "restored/decompressed.dsnc",
            "--bits",
            "16",
            "--sparsity",
            "0.3",
            "--out",
            "pruned",
        ],
        dir.path(),
    );
    assert!(single.contains("16 bits"), "{single}");
    assert_eq!(
        fs::read_to_string(dir.path().join("pruned/rd.csv"))
            .unwrap()
            .lines()
            .count(),
        2
    );
}

fn bunny_spec() -> ModelSpec {
    serde_json::from_str(
        r#"{"timeline":{"frames":132,"static_codes":13,"dynamic_codes":66},
            "decoder":{"c1":36,"ch_min":16,"strides":[5,2,2,2,2,2],"static_shape":[4,8,64],
                       "dynamic_shape":[20,40,1],"output":[640,1280]}}"#,
    )
    .unwrap()
}

#[test]
fn info_reports_parameter_shares() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bunny.dsnc");
    let spec = bunny_spec();
    save_checkpoint(&Model::<f32>::init(spec.clone(), 0).unwrap(), &path).unwrap();
    let stdout = ok(&["info", path.to_str().unwrap()], dir.path());
    let total = spec.param_count();
    assert!((total as f64 - 350_000.0).abs() <= 35_000.0);
    assert!(
        stdout.contains(&format!(
            "parameters     {total} ({:.4}M)",
            total as f64 / 1e6
        )),
        "{stdout}"
    );
    let static_len = 13 * 4 * 8 * 64;
    let dynamic_len = 66 * 20 * 40;
    assert!(stdout.contains(&format!(
        "static codes   {static_len} ({:.4}%)",
        100.0 * static_len as f64 / total as f64
    )));
    assert!(stdout.contains(&format!(
        "dynamic codes  {dynamic_len} ({:.4}%)",
        100.0 * dynamic_len as f64 / total as f64
    )));

    let bad = dir.path().join("bad.dsnc");
    fs::write(&bad, b"DSNC\x01\x00garbage").unwrap();
    let err = failure(&["info", bad.to_str().unwrap()], dir.path());
    assert!(err.starts_with("error: corrupt file"), "{err}");
    assert!(!err.contains("panicked"));
}

#[test]
fn thread_count_comes_from_flag_or_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dsnerv"))
        .args(["info", "missing.dsnc"])
        .env("DSNERV_THREADS", "0")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).contains("--threads must be positive"));
    let err = failure(&["info", "missing.dsnc", "--threads", "2"], dir.path());
    assert!(err.contains("cannot read missing.dsnc"), "{err}");
}

#[test]
fn mismatched_datasets_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(dir.path(), &[]);
    ok(
        &[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            "run",
        ],
        dir.path(),
    );
    let other = quick_config(dir.path(), &[("frames = 8", "frames = 6")]);
    let err = failure(
        &[
            "reconstruct",
            "--config",
            other.to_str().unwrap(),
            "--checkpoint",
            "run/model.dsnc",
            "--out",
            "x",
        ],
        dir.path(),
    );
    assert!(err.contains("does not match data"), "{err}");
    assert!(!dir.path().join("x").exists());
    let err = failure(
        &["reconstruct", "--checkpoint", "run/model.dsnc"],
        dir.path(),
    );
    assert!(err.contains("--data"), "{err}");
}
