use std::fs;
use std::path::Path;
use std::process::Command;

use sparsefed_cli::{execute_sweep, parse_config, RunManifest, RunSummary};
use sparsefed_core::cost::CostRecord;
use sparsefed_core::fedsim::{read_metrics_csv, Checkpoint, CSV_COLUMNS};

const SMALL: &str = r#"
name = "t"
algorithm = "fedtiny"
density = 0.1
rounds = 4
seed = 3

[data]
classes = 4
per_class = 40
dim = 8
clients = 4

[model]
hidden = [16, 16, 16]

[train]
local_epochs = 1
batch_size = 16
pretrain_epochs = 1

[pool]
size = 2

[schedule]
granularity = "entire"
interval = 2
stop = 4
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sparsefed"));
    c.env("SPARSEFED_WORKERS", "1");
    c
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("exp.toml");
    fs::write(&p, SMALL).unwrap();
    p
}

#[test]
fn run_writes_artifacts_and_refuses_reuse() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("runs");
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let dir = out.join("t-fedtiny-seed3");
    let manifest: RunManifest =
        serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.config, parse_config(SMALL, &[]).unwrap());
    assert_eq!(manifest.seeds.experiment, 3);

    let header = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), CSV_COLUMNS.join(","));
    let rows = read_metrics_csv(&dir.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().map(|r| r.round).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    let jsonl = fs::read_to_string(dir.join("metrics.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 4);

    let ck = Checkpoint::load(&dir.join("final.ckpt")).unwrap();
    assert_eq!(ck.round, 4);
    assert!(ck.mask.is_some());
    let summary: RunSummary =
        serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.final_accuracy, rows[3].accuracy);

    let again = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("already exists"));
}

#[test]
fn bad_config_reports_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--set", "train.batch_size=0", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.batch_size"), "{err}");

    let out = bin()
        .args(["run", "--config"])
        .arg(tmp.path().join("missing.toml"))
        .output()
        .unwrap();
    assert!(!out.status.success());

    let out = bin()
        .env("SPARSEFED_WORKERS", "zero")
        .args(["run", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("SPARSEFED_WORKERS"));
}

#[test]
fn sweep_writes_one_run_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sw");
    let rows = execute_sweep(
        SMALL,
        &["rounds=2".into()],
        "granularity",
        &["layer".into(), "block".into()],
        &out,
    )
    .unwrap();
    assert_eq!(rows.len(), 2);
    let mut rdr = csv::Reader::from_path(out.join("sweep-granularity.csv")).unwrap();
    let values: Vec<String> = rdr
        .records()
        .map(|r| r.unwrap().get(1).unwrap().to_string())
        .collect();
    assert_eq!(values, vec!["layer", "block"]);
    for r in &rows {
        let m: RunManifest = serde_json::from_slice(
            &fs::read(out.join(&r.summary.run_id).join("manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(format!("{:?}", m.config.schedule.granularity).to_lowercase(), r.value);
        assert_eq!(m.config.rounds, 2);
    }

    assert!(execute_sweep(SMALL, &[], "density", &[], &out).is_err());
    assert!(execute_sweep(SMALL, &[], "lr", &["0.1".into()], &out).is_err());
}

#[test]
fn cost_reads_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("runs");
    assert!(bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--set", "rounds=1", "--out"])
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let ckpt = out.join("t-fedtiny-seed3").join("final.ckpt");
    let run = |extra: &[&str]| {
        let o = bin()
            .args(["cost", "--ckpt"])
            .arg(&ckpt)
            .args(extra)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        serde_json::from_slice::<CostRecord>(&o.stdout).unwrap()
    };
    let r32 = run(&["--bits", "32", "--samples", "30"]);
    let r8 = run(&["--bits", "8", "--samples", "30"]);
    assert!(r8.bytes < r32.bytes);
    assert_eq!(r32.bits, r32.tensors.iter().map(|t| t.bits).sum::<u64>());
    let dense = run(&["--bits", "32", "--samples", "30", "--model", "dense"]);
    assert!(dense.flops_peak > r32.flops_peak);

    let bad = bin()
        .args(["cost", "--ckpt"])
        .arg(&ckpt)
        .args(["--model", "sparse"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            sparsefed_cli::load_config(&path, &[]).unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 2);
}
