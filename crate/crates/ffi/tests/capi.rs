use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;
use std::sync::{Arc, OnceLock};

use berrystack::dataset::manifest::{prepare_bands, sample_from_bands};
use berrystack::dataset::{Farm, Image, Label};
use berrystack::ensemble::{predict_ensemble, train_ensemble, EnsembleConfig, EnsembleModel};
use berrystack::model::{feature_table, train_model, FeatureExtractor, ModelConfig, TrainedModel};
use berrystack::synth::{synth_dataset, SynthConfig};
use berrystack_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    model_stem: PathBuf,
    ensemble_dir: PathBuf,
}

fn small_config(seed: u64) -> ModelConfig {
    ModelConfig {
        fc: (8, 4),
        epochs: 3,
        seed,
        ..ModelConfig::default()
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            samples: 40,
            ..SynthConfig::default()
        };
        let train = synth_dataset(&cfg, 1).unwrap();
        let val = synth_dataset(&cfg, 2).unwrap();
        let extractor = Arc::new(FeatureExtractor::surrogate(3, 16).unwrap());
        let model = train_model(&train, &val, &small_config(5), extractor.clone()).unwrap();
        let model_stem = dir.path().join("model");
        model.save(&model_stem).unwrap();
        let tr = feature_table(&train, &extractor).unwrap();
        let va = feature_table(&val, &extractor).unwrap();
        let config = EnsembleConfig {
            learners: 3,
            ridge: 1e-3,
            seed: 9,
            base: small_config(9),
        };
        let ensemble = train_ensemble(&tr, &va, &config, extractor).unwrap();
        let ensemble_dir = dir.path().join("ensemble");
        ensemble.save(&ensemble_dir).unwrap();
        Fixture {
            _dir: dir,
            model_stem,
            ensemble_dir,
        }
    })
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = bs_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn bands(w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let a = (0..w * h).map(|i| (i % 17) as f64 / 16.0).collect();
    let b = (0..w * h).map(|i| ((i * 7) % 23) as f64 / 22.0).collect();
    (a, b)
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(bs_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn classify_threshold_and_errors() {
    let mut label = 9u8;
    unsafe {
        assert_eq!(bs_classify(0.5, &mut label), BsStatus::Ok);
        assert_eq!(label, 1);
        assert_eq!(bs_classify(0.4999, &mut label), BsStatus::Ok);
        assert_eq!(label, 0);
        assert_eq!(bs_classify(1.5, &mut label), BsStatus::Argument);
        assert!(last_error().contains("outside [0, 1]"));
        assert_eq!(bs_classify(f64::NAN, &mut label), BsStatus::Argument);
        assert_eq!(bs_classify(0.2, ptr::null_mut()), BsStatus::NullPointer);
        assert!(last_error().contains("out_label"));
        // Success clears the message.
        assert_eq!(bs_classify(0.2, &mut label), BsStatus::Ok);
    }
    assert!(bs_last_error_message().is_null());
}

#[test]
fn metrics_match_core() {
    let mut m = BsMetrics::default();
    unsafe {
        assert_eq!(bs_weighted_metrics(30, 4, 50, 6, &mut m), BsStatus::Ok);
        assert_eq!(bs_weighted_metrics(0, 0, 0, 0, &mut m), BsStatus::Argument);
    }
    let r = berrystack::evalx::weighted_metrics(&berrystack::evalx::ConfusionMatrix {
        tp: 30,
        fp: 4,
        tn: 50,
        fn_: 6,
    })
    .unwrap();
    assert_eq!(m.accuracy, r.accuracy);
    assert_eq!(m.weighted_recall, m.accuracy);
    assert_eq!(m.weighted_f1, r.weighted_f1);
    assert_eq!(m.unripe_precision, 30.0 / 34.0);
}

#[test]
fn roc_auc_half_credit_for_ties() {
    let conf = [0.1, 0.4, 0.4, 0.9];
    let labels = [0u8, 0, 1, 1];
    let mut auc = 0.0;
    unsafe {
        assert_eq!(bs_roc_auc(conf.as_ptr(), labels.as_ptr(), 4, &mut auc), BsStatus::Ok);
        assert_eq!(auc, 0.875);
        let bad = [0u8, 2, 1, 1];
        assert_eq!(bs_roc_auc(conf.as_ptr(), bad.as_ptr(), 4, &mut auc), BsStatus::Argument);
        assert_eq!(bs_roc_auc(ptr::null(), labels.as_ptr(), 4, &mut auc), BsStatus::NullPointer);
    }
}

#[test]
fn model_handle_round_trip() {
    let f = fixture();
    let stem = cpath(&f.model_stem);
    let mut h: *mut BsModel = ptr::null_mut();
    unsafe {
        assert_eq!(bs_model_load(stem.as_ptr(), &mut h), BsStatus::Ok);
        assert!(!h.is_null());
        assert_eq!(bs_model_feature_dim(h), 32);

        let core = TrainedModel::load(&f.model_stem, None).unwrap();
        let (a, b) = bands(40, 36);
        let mut c = -1.0;
        assert_eq!(bs_model_predict_bands(h, a.as_ptr(), b.as_ptr(), 40, 36, true, &mut c), BsStatus::Ok);
        let (pa, pb) = prepare_bands(
            &Image::new(40, 36, 1, a.clone()).unwrap(),
            &Image::new(40, 36, 1, b.clone()).unwrap(),
            true,
        )
        .unwrap();
        let s = sample_from_bands(&pa, &pb, Label::Ripe, "x", Farm::Synthetic).unwrap();
        assert_eq!(c, core.forward(&s).unwrap());

        let feats = vec![0.25; 32];
        assert_eq!(bs_model_predict_features(h, feats.as_ptr(), 32, &mut c), BsStatus::Ok);
        assert_eq!(c, core.forward_features(&feats).unwrap());
        assert_eq!(bs_model_predict_features(h, feats.as_ptr(), 31, &mut c), BsStatus::Dimension);

        let short = [0.5; 10];
        assert_eq!(
            bs_model_predict_bands(h, short.as_ptr(), short.as_ptr(), 2, 5, false, &mut c),
            BsStatus::Ok
        );
        let hot = [2.0; 10];
        assert_eq!(
            bs_model_predict_bands(h, hot.as_ptr(), short.as_ptr(), 2, 5, false, &mut c),
            BsStatus::Argument
        );
        bs_model_free(h);
    }
}

#[test]
fn ensemble_handle_round_trip() {
    let f = fixture();
    let dir = cpath(&f.ensemble_dir);
    let mut h: *mut BsEnsemble = ptr::null_mut();
    unsafe {
        assert_eq!(bs_ensemble_load(dir.as_ptr(), &mut h), BsStatus::Ok);
        assert_eq!(bs_ensemble_learner_count(h), 3);
        assert_eq!(bs_ensemble_feature_dim(h), 32);
        let core = EnsembleModel::load(&f.ensemble_dir).unwrap();
        let (a, b) = bands(32, 32);
        let mut c = -1.0;
        assert_eq!(bs_ensemble_predict_bands(h, a.as_ptr(), b.as_ptr(), 32, 32, false, &mut c), BsStatus::Ok);
        let s = sample_from_bands(
            &Image::new(32, 32, 1, a).unwrap(),
            &Image::new(32, 32, 1, b).unwrap(),
            Label::Ripe,
            "x",
            Farm::Synthetic,
        )
        .unwrap();
        assert_eq!(c, predict_ensemble(&core, &s).unwrap());
        let feats = vec![0.1; 32];
        assert_eq!(bs_ensemble_predict_features(h, feats.as_ptr(), 32, &mut c), BsStatus::Ok);
        assert_eq!(c, core.predict_features(&feats).unwrap());
        bs_ensemble_free(h);
        bs_ensemble_free(ptr::null_mut());
        assert_eq!(bs_ensemble_learner_count(ptr::null()), 0);
    }
}

#[test]
fn load_failures_map_to_status() {
    let missing = cpath(Path::new("/nonexistent/berrystack/model"));
    let mut m: *mut BsModel = std::ptr::dangling_mut::<BsModel>();
    let mut e: *mut BsEnsemble = ptr::null_mut();
    unsafe {
        assert_eq!(bs_model_load(missing.as_ptr(), &mut m), BsStatus::MissingFile);
        assert!(m.is_null());
        assert!(last_error().contains("/nonexistent/berrystack/model"));
        assert_eq!(bs_ensemble_load(missing.as_ptr(), &mut e), BsStatus::MissingFile);
        assert_eq!(bs_model_load(ptr::null(), &mut m), BsStatus::NullPointer);
        assert_eq!(bs_model_predict_features(ptr::null(), ptr::null(), 0, ptr::null_mut()), BsStatus::NullPointer);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/berrystack.h")).unwrap();
    for name in [
        "bs_version",
        "bs_last_error_message",
        "bs_classify",
        "bs_weighted_metrics",
        "bs_roc_auc",
        "bs_model_load",
        "bs_model_free",
        "bs_model_feature_dim",
        "bs_model_predict_bands",
        "bs_model_predict_features",
        "bs_ensemble_load",
        "bs_ensemble_free",
        "bs_ensemble_learner_count",
        "bs_ensemble_feature_dim",
        "bs_ensemble_predict_bands",
        "bs_ensemble_predict_features",
        "typedef struct BsModel BsModel",
        "typedef struct BsEnsemble BsEnsemble",
        "BS_STATUS_NULL_POINTER = 11",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "berrystack.h"

int main(int argc, char **argv) {
    BsEnsemble *e = NULL;
    if (bs_ensemble_load(argv[1], &e) != BS_STATUS_OK) {
        fprintf(stderr, "%s\n", bs_last_error_message());
        return 1;
    }
    double band[32 * 32];
    for (int i = 0; i < 32 * 32; i++) band[i] = (i % 17) / 16.0;
    double conf = -1.0;
    if (bs_ensemble_predict_bands(e, band, band, 32, 32, false, &conf) != BS_STATUS_OK) return 2;
    uint8_t label = 9;
    if (bs_classify(conf, &label) != BS_STATUS_OK) return 3;
    BsEnsemble *none = NULL;
    if (bs_ensemble_load(NULL, &none) != BS_STATUS_NULL_POINTER) return 4;
    printf("%zu %.17g %u\n", bs_ensemble_learner_count(e), conf, label);
    bs_ensemble_free(e);
    return 0;
}
"#;

fn staticlib() -> Option<PathBuf> {
    let deps = std::env::current_exe().ok()?.parent()?.to_path_buf();
    [deps.join("libberrystack_ffi.a"), deps.parent()?.join("libberrystack_ffi.a")]
        .into_iter()
        .find(|p| p.exists())
}

#[test]
fn c_program_links_against_header_and_staticlib() {
    let Some(lib) = staticlib() else {
        eprintln!("staticlib not found next to the test binary; skipping C link test");
        return;
    };
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping C link test");
        return;
    }
    let f = fixture();
    let work = tempfile::tempdir().unwrap();
    let src = work.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = work.path().join("bsdemo");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .unwrap();
    assert!(out.status.success(), "cc failed: {}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).arg(&f.ensemble_dir).output().unwrap();
    assert!(run.status.success(), "demo failed: {}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    let fields: Vec<&str> = stdout.split_whitespace().collect();
    assert_eq!(fields[0], "3");

    let core = EnsembleModel::load(&f.ensemble_dir).unwrap();
    let band: Vec<f64> = (0..32 * 32).map(|i| (i % 17) as f64 / 16.0).collect();
    let img = Image::new(32, 32, 1, band).unwrap();
    let s = sample_from_bands(&img, &img, Label::Ripe, "x", Farm::Synthetic).unwrap();
    let expected = predict_ensemble(&core, &s).unwrap();
    assert_eq!(fields[1].parse::<f64>().unwrap(), expected);
    assert_eq!(fields[2], if expected >= 0.5 { "1" } else { "0" });
}
