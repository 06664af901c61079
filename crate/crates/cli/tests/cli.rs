use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn diffroar(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffroar"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn manifest_outputs(out: &Path) -> Vec<String> {
    let text = fs::read_to_string(out.join("manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_str().unwrap().to_string())
        .collect()
}

fn assert_no_orphans(out: &Path) {
    let mut listed = manifest_outputs(out);
    listed.sort();
    let mut present: Vec<String> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    present.sort();
    assert_eq!(listed, present);
}

const RANDOM_DIFFROAR: &str = r#"
[data]
n_train = 300
n_test = 200

[train]
max_epochs = 10

[attribution]
scheme = "random"

[diffroar]
levels = [0.1, 0.5, 1.0]
n_seeds = 3
hidden = []
"#;

#[test]
fn theory_verify_defaults_pass_with_known_margin() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let res = diffroar(&["theory-verify"], &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report = fs::read_to_string(out.join("theory_report.txt")).unwrap();
    assert!(report.contains("margin: 0.204124"), "{report}");
    assert!(report.contains("overall: PASS"));
    let restarts = fs::read_to_string(out.join("theory_restarts.csv")).unwrap();
    assert!(restarts.starts_with("restart,kind,objective,converged\n"));
    assert!(restarts.lines().count() > 1000);
    assert_no_orphans(&out);
}

#[test]
fn theory_verify_failed_verdict_exits_nonzero() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[theory]\nrestarts = 10\ntolerance = -0.001\n");
    let res = diffroar(&["theory-verify", "--config", &cfg], &tmp.path().join("run"));
    assert_eq!(res.status.code(), Some(2));
    assert!(tmp.path().join("run/theory_report.txt").exists());
}

#[test]
fn unknown_key_is_rejected_by_name() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[train]\nlr = 0.1\nlearnig_rate = 0.2\n");
    let res = diffroar(&["train", "--config", &cfg], &tmp.path().join("run"));
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("learnig_rate"), "{err}");
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn type_errors_report_their_line() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "seed = 1\n\n[data]\nn_train = \"many\"\n");
    let res = diffroar(&["gen-data", "--config", &cfg], &tmp.path().join("run"));
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn missing_referenced_path_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[model]\ncheckpoint = \"nowhere.ckpt\"\n");
    let res = diffroar(&["train", "--config", &cfg], &tmp.path().join("run"));
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("nowhere.ckpt"));
}

#[test]
fn gen_data_writes_readable_containers() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[data]\nn_train = 40\nn_test = 20\nnoise = 0.01\n");
    let out = tmp.path().join("run");
    let res = diffroar(&["gen-data", "--config", &cfg], &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let f = fs::File::open(out.join("train.bin")).unwrap();
    let train = diffroar::data::read_dataset(std::io::BufReader::new(f)).unwrap();
    assert_eq!((train.len(), train.dim()), (40, 10));
    assert_no_orphans(&out);
}

#[test]
fn random_diffroar_summary_is_well_formed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), RANDOM_DIFFROAR);
    let out = tmp.path().join("run");
    let res = diffroar(&["diffroar", "--config", &cfg], &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let mut r = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    assert_eq!(
        headers.iter().collect::<Vec<_>>(),
        ["scheme", "model_id", "k", "pred_top_mean", "pred_bottom_mean", "aq_mean", "aq_stderr", "no_retrain"]
    );
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    for row in &rows {
        let aq: f64 = row[5].parse().unwrap();
        let se: f64 = row[6].parse().unwrap();
        assert!(aq.is_finite() && se.is_finite() && se >= 0.0);
    }
    // Keeping every coordinate makes both sides the same dataset.
    assert_eq!((&rows[2][2], &rows[2][5], &rows[2][6]), ("1.0", "0.0", "0.0"));
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 3 * 2 * 3);
    assert_no_orphans(&out);
}

#[test]
fn reruns_produce_identical_csvs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), RANDOM_DIFFROAR);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(diffroar(&["diffroar", "--config", &cfg, "--jobs", "1"], &a).status.success());
    assert!(diffroar(&["diffroar", "--config", &cfg, "--jobs", "3"], &b).status.success());
    for name in ["results.csv", "summary.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "seed = 5\n[data]\nn_train = 30\nn_test = 10\n");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(diffroar(&["gen-data", "--config", &cfg], &a).status.success());
    assert!(diffroar(&["gen-data", "--config", &cfg, "--seed", "6"], &b).status.success());
    assert_ne!(fs::read(a.join("train.bin")).unwrap(), fs::read(b.join("train.bin")).unwrap());
    let text = fs::read_to_string(b.join("manifest.json")).unwrap();
    assert!(text.contains("\"seed\": 6"));
}

#[test]
fn train_then_attribute_from_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let body = |model: &str| {
        format!(
            r#"
[data]
kind = "block-images"
n_train = 60
n_test = 20
block_h = 8
block_w = 8

[model]
{model}

[train]
max_epochs = 3

[attribution]
scheme = "occlusion"
patch = 3
dump = 2
"#
        )
    };
    let cfg = write_config(tmp.path(), &body("hidden = [16]"));
    let trained = tmp.path().join("trained");
    let res = diffroar(&["train", "--config", &cfg], &trained);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let log = fs::read_to_string(trained.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,train_acc,test_acc,lr\n"));
    assert_no_orphans(&trained);

    let ckpt = format!("checkpoint = {:?}", trained.join("model.ckpt"));
    let cfg = write_config(tmp.path(), &body(&ckpt));
    let attributed = tmp.path().join("attributed");
    let res = diffroar(&["attribute", "--config", &cfg], &attributed);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let header = b"P5\n8 16\n255\n";
    let pgm = fs::read(attributed.join("heatmap_0000.pgm")).unwrap();
    assert!(pgm.starts_with(header));
    assert_eq!(pgm.len(), header.len() + 128);
    assert_no_orphans(&attributed);
}
