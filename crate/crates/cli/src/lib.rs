//! Library side of the `sparsefed` command: config loading, run
//! directories, sweeps, and cost reports.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sparsefed_core::cost::{activation_bytes, cost_record, CostInputs, CostModel, CostRecord};
use sparsefed_core::fedsim::{
    run_experiment, Checkpoint, ExperimentConfig, ExperimentOutcome, MetricsWriter,
};
use sparsefed_core::rng::{derive_seed, stream};

pub use config::{apply_override, load_config, parse_config, to_toml};

/// Environment variable capping the worker thread count.
pub const WORKERS_ENV: &str = "SPARSEFED_WORKERS";

pub const MANIFEST: &str = "manifest.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const CHECKPOINT: &str = "final.ckpt";
pub const SUMMARY: &str = "summary.json";

/// Sizes the global thread pool from [`WORKERS_ENV`] when it is set.
pub fn init_workers() -> Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .with_context(|| format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))?;
        if n == 0 {
            bail!("{WORKERS_ENV} must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("thread pool already initialized")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub manifest: PathBuf,
    pub metrics_csv: PathBuf,
    pub metrics_jsonl: PathBuf,
    pub checkpoint: PathBuf,
    pub summary: PathBuf,
}

impl Artifacts {
    fn in_dir(dir: &Path) -> Self {
        Self {
            manifest: dir.join(MANIFEST),
            metrics_csv: dir.join(METRICS_CSV),
            metrics_jsonl: dir.join(METRICS_JSONL),
            checkpoint: dir.join(CHECKPOINT),
            summary: dir.join(SUMMARY),
        }
    }
}

/// Seeds derived from the experiment seed, recorded for reproduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSeeds {
    pub experiment: u64,
    pub test_split: u64,
    pub server_split: u64,
    pub pool: u64,
    pub static_mask: u64,
}

impl ResolvedSeeds {
    fn from_seed(seed: u64) -> Self {
        Self {
            experiment: seed,
            test_split: derive_seed(seed, &[stream::SPLIT, 0]),
            server_split: derive_seed(seed, &[stream::SPLIT, 1]),
            pool: derive_seed(seed, &[stream::POOL]),
            static_mask: derive_seed(seed, &[stream::MASK]),
        }
    }
}

/// Written before training starts and never modified afterward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub run_id: String,
    pub config: ExperimentConfig,
    pub seeds: ResolvedSeeds,
    pub out_dir: PathBuf,
    pub artifacts: Artifacts,
}

/// End-of-run digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub algorithm: String,
    pub target_density: f64,
    pub final_density: f64,
    pub initial_accuracy: f64,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub max_peak_flops: f64,
    pub max_memory_bytes: f64,
    pub selected_candidate: Option<usize>,
    pub pool_size: Option<usize>,
}

impl RunSummary {
    fn from_outcome(run_id: &str, out: &ExperimentOutcome) -> Self {
        let last = out.rounds.last();
        let fold = |f: fn(&sparsefed_core::fedsim::RoundMetrics) -> f64| {
            out.rounds.iter().map(f).fold(0.0, f64::max)
        };
        Self {
            run_id: run_id.to_string(),
            algorithm: out.config.algorithm.tag().to_string(),
            target_density: out.config.density,
            final_density: last.map_or(1.0, |m| m.density),
            initial_accuracy: out.initial.accuracy,
            final_accuracy: out.final_accuracy(),
            final_loss: last.map_or(out.initial.loss, |m| m.loss),
            max_peak_flops: fold(|m| m.peak_flops),
            max_memory_bytes: fold(|m| m.memory_bytes),
            selected_candidate: out.selection.as_ref().map(|s| s.chosen),
            pool_size: out.selection.as_ref().map(|s| s.pool_size),
        }
    }
}

/// Directory name of a run: config name, algorithm, and seed.
pub fn run_id(cfg: &ExperimentConfig) -> String {
    let clean: String = cfg
        .name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{clean}-{}-seed{}", cfg.algorithm.tag(), cfg.seed)
}

/// Runs one experiment into `<out>/<run-id>/`. Refuses to reuse an existing
/// run directory.
pub fn execute_run(cfg: &ExperimentConfig, out: &Path) -> Result<(RunManifest, RunSummary)> {
    cfg.validate()?;
    let id = run_id(cfg);
    let dir = out.join(&id);
    if dir.exists() {
        bail!("run directory {} already exists", dir.display());
    }
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let artifacts = Artifacts::in_dir(&dir);
    let manifest = RunManifest {
        tool: "sparsefed".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        run_id: id.clone(),
        config: cfg.clone(),
        seeds: ResolvedSeeds::from_seed(cfg.seed),
        out_dir: dir.clone(),
        artifacts: artifacts.clone(),
    };
    fs::write(&artifacts.manifest, serde_json::to_vec_pretty(&manifest)?)?;
    let mut writer = MetricsWriter::create(&artifacts.metrics_csv, &artifacts.metrics_jsonl)?;
    let outcome = run_experiment(cfg, |m| writer.write(m))?;
    Checkpoint::new(
        outcome.network.clone(),
        outcome.mask.clone(),
        Some(cfg.algorithm),
        outcome.rounds.len(),
    )
    .save(&artifacts.checkpoint)?;
    let summary = RunSummary::from_outcome(&id, &outcome);
    fs::write(&artifacts.summary, serde_json::to_vec_pretty(&summary)?)?;
    Ok((manifest, summary))
}

/// Config keys swept by each axis name.
pub fn axis_key(axis: &str) -> Result<&'static str> {
    Ok(match axis {
        "density" => "density",
        "alpha" => "data.alpha",
        "pool_size" => "pool.size",
        "granularity" => "schedule.granularity",
        "seed" => "seed",
        other => bail!(
            "unknown sweep axis `{other}`; expected density, alpha, pool_size, granularity, or seed"
        ),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    #[serde(flatten)]
    pub summary: RunSummary,
}

/// One run per grid value, each in its own directory, plus a merged
/// `sweep-<axis>.csv` summary in `out`.
pub fn execute_sweep(
    base_text: &str,
    overrides: &[String],
    axis: &str,
    values: &[String],
    out: &Path,
) -> Result<Vec<SweepRow>> {
    let key = axis_key(axis)?;
    if values.is_empty() {
        bail!("sweep grid is empty");
    }
    let mut rows = Vec::with_capacity(values.len());
    for v in values {
        let mut ov = overrides.to_vec();
        ov.push(format!("{key}={v}"));
        let mut cfg = parse_config(base_text, &ov)?;
        cfg.name = format!("{}-{axis}{v}", cfg.name);
        let (_, summary) = execute_run(&cfg, out)?;
        rows.push(SweepRow {
            axis: axis.to_string(),
            value: v.clone(),
            summary,
        });
    }
    let path = out.join(format!("sweep-{axis}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(CsvSummary::from(r))?;
    }
    w.flush()?;
    Ok(rows)
}

// Flattened rows cannot go through the csv serializer, so spell them out.
#[derive(Serialize)]
struct CsvSummary<'a> {
    axis: &'a str,
    value: &'a str,
    run_id: &'a str,
    algorithm: &'a str,
    target_density: f64,
    final_density: f64,
    final_accuracy: f64,
    final_loss: f64,
    max_peak_flops: f64,
    max_memory_bytes: f64,
}

impl<'a> From<&'a SweepRow> for CsvSummary<'a> {
    fn from(r: &'a SweepRow) -> Self {
        let s = &r.summary;
        Self {
            axis: &r.axis,
            value: &r.value,
            run_id: &s.run_id,
            algorithm: &s.algorithm,
            target_density: s.target_density,
            final_density: s.final_density,
            final_accuracy: s.final_accuracy,
            final_loss: s.final_loss,
            max_peak_flops: s.max_peak_flops,
            max_memory_bytes: s.max_memory_bytes,
        }
    }
}

/// Options of the `cost` command beyond the checkpoint and bit width.
#[derive(Debug, Clone, PartialEq)]
pub struct CostOptions {
    pub bits: u32,
    pub model: Option<CostModel>,
    pub samples: usize,
    pub epochs: usize,
    pub batch: usize,
    pub extra_flops: f64,
    pub topk_entries: usize,
}

/// Storage, memory, and FLOPs of a checkpointed model.
pub fn cost_report(ckpt: &Path, opts: &CostOptions) -> Result<CostRecord> {
    if opts.bits == 0 {
        bail!("bit width must be at least 1");
    }
    let ck = Checkpoint::load(ckpt).with_context(|| format!("cannot load {}", ckpt.display()))?;
    let model = opts.model.unwrap_or_else(|| match (ck.algorithm, &ck.mask) {
        (Some(a), _) => a.cost_model(),
        (None, Some(_)) => CostModel::StaticSparse,
        (None, None) => CostModel::Dense,
    });
    let inputs = CostInputs {
        model,
        bits: opts.bits,
        samples: opts.samples,
        epochs: opts.epochs,
        activation_bytes: activation_bytes(&ck.network, opts.batch, opts.bits)?,
        extra_flops: opts.extra_flops,
        topk_entries: opts.topk_entries,
    };
    Ok(cost_record(&ck.network, ck.mask.as_ref(), &inputs)?)
}
