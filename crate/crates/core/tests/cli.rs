use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use berrystack::cli::RunManifest;

const SMALL: &str = r#"
seed = 11
[extractor]
kind = "deterministic_surrogate"
seed = 1
output_dim = 16
[model]
fc = [8, 4]
epochs = 4
[ensemble]
learners = 2
[prepare]
equalize_770 = false
[synth]
samples = 60
[tuning]
fc = [[4, 4], [8, 4]]
optimizer = ["adam"]
batch_size = [10]
epochs = [2]
k = 2
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_berrystack"))
}

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    bin().args(args).arg("--config").arg(&path).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_gray_png(path: &Path, w: u32, h: u32) {
    let img = image::GrayImage::from_fn(w, h, |x, y| image::Luma([((x * 7 + y * 3) % 256) as u8]));
    img.save(path).unwrap();
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "seed = 1\n[model]\nbatchsize = 3\n", &["train"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("batchsize"));
}

#[test]
fn missing_config_and_seed_exit_2() {
    let o = bin().args(["synth", "--config", "/nonexistent/run.toml"]).output().unwrap();
    assert_eq!(code(&o), 2);
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "[synth]\nsamples = 20\n", &["synth"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("seed"));
    let o = bin().args(["synth"]).output().unwrap();
    assert_eq!(code(&o), 2);
    let o = bin().args(["no-such-command"]).output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_model_artifact_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), SMALL, &["evaluate"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn missing_mask_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), SMALL, &["synth"])), 0);
    std::fs::remove_file(dir.path().join("out/synth/scene/mask_3.png")).unwrap();
    let o = run(dir.path(), SMALL, &["select-wavelengths"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("mask_3.png"));
}

#[test]
fn odd_width_stereo_frame_exits_2_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    std::fs::create_dir_all(&frames).unwrap();
    let mut csv = String::from("berry_id,farm,label,stereo_path\n");
    for i in 0..6 {
        let w = if i == 4 { 81 } else { 80 };
        write_gray_png(&frames.join(format!("b{i}.png")), w, 40);
        csv.push_str(&format!("b{i},A,{},frames/b{i}.png\n", i % 2));
    }
    std::fs::write(dir.path().join("stereo.csv"), csv).unwrap();
    let config = format!("{SMALL}\n[paths]\nmanifest = \"stereo.csv\"\n");
    let o = run(dir.path(), &config, &["prepare"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("b4.png"), "{}", stderr(&o));
}

#[test]
fn stereo_manifest_prepares() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    std::fs::create_dir_all(&frames).unwrap();
    let mut csv = String::from("berry_id,farm,label,stereo_path\n");
    for i in 0..10 {
        write_gray_png(&frames.join(format!("b{i}.png")), 80, 40);
        csv.push_str(&format!("b{i},B,{},frames/b{i}.png\n", (i < 5) as u8));
    }
    std::fs::write(dir.path().join("stereo.csv"), csv).unwrap();
    let config = format!("{SMALL}\n[paths]\nmanifest = \"stereo.csv\"\n");
    let o = run(dir.path(), &config, &["prepare"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let counts = std::fs::read_to_string(dir.path().join("out/prepare/counts.tsv")).unwrap();
    assert!(counts.contains("train\t3\t3"), "{counts}");
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    std::fs::read(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

fn full_pipeline(dir: &Path) {
    for cmd in [
        "synth",
        "select-wavelengths",
        "prepare",
        "train",
        "tune",
        "train-ensemble",
        "evaluate",
        "robustness",
    ] {
        let o = run(dir, SMALL, &[cmd]);
        assert_eq!(code(&o), 0, "{cmd}: {}", stderr(&o));
    }
}

#[test]
fn pipeline_is_reproducible_byte_for_byte() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    full_pipeline(a.path());
    full_pipeline(b.path());
    for rel in [
        "out/synth/dataset/manifest.csv",
        "out/wavelengths/wavelengths.json",
        "out/wavelengths/spectra.tsv",
        "out/prepare/counts.tsv",
        "out/prepare/train_oversampled.csv",
        "out/train/model.bstk",
        "out/train/model.history.tsv",
        "out/tune/tune.tsv",
        "out/tune/model.toml",
        "out/ensemble/meta.toml",
        "out/ensemble/learner_1.bstk",
        "out/evaluate/metrics.json",
        "out/evaluate/roc.tsv",
        "out/evaluate/pr.tsv",
        "out/evaluate/predictions.tsv",
        "out/robustness/robustness.tsv",
    ] {
        assert_eq!(read(a.path(), rel), read(b.path(), rel), "{rel} differs between runs");
    }
    let wl = String::from_utf8(read(a.path(), "out/wavelengths/wavelengths.json")).unwrap();
    assert!(wl.contains("770"), "{wl}");

    // Run manifests: same digest, listed outputs exist under the out dir.
    let ma = RunManifest::load(&a.path().join("out/evaluate.run.json")).unwrap();
    let mb = RunManifest::load(&b.path().join("out/evaluate.run.json")).unwrap();
    assert_eq!(ma.config_digest, mb.config_digest);
    assert_eq!(ma.seed, 11);
    assert_eq!(ma.command, "evaluate");
    for p in &ma.outputs {
        assert!(p.exists() && p.starts_with(a.path().join("out")), "{}", p.display());
    }
    assert!(!a.path().join("out/.evaluate.run.json.tmp").exists());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let alt: PathBuf = dir.path().join("alt");
    let o = run(dir.path(), SMALL, &["synth", "--seed", "99", "--out", alt.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = RunManifest::load(&alt.join("synth.run.json")).unwrap();
    assert_eq!(m.seed, 99);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn correlate_reports_table6() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/table6.tsv");
    let config = format!("seed = 1\n[paths]\nsensory = \"{}\"\n", fixture.display());
    let o = run(dir.path(), &config, &["correlate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let tsv = String::from_utf8(read(dir.path(), "out/correlate/correlation.tsv")).unwrap();
    assert!(tsv.starts_with("variable\tmass_g"));
    let report = String::from_utf8(read(dir.path(), "out/correlate/sensory_report.tsv")).unwrap();
    assert!(report.contains("7DE558\t3\t4\t0\t96.85\t1\tN"), "{report}");
}

#[test]
fn correlate_without_table_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "seed = 1\n", &["correlate"]);
    assert_eq!(code(&o), 2);
}
