//! Experiment configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::bn_select::SigmaAggregation;
use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::prog_prune::PruneSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Adaptive BN selection followed by progressive grow/prune.
    #[serde(rename = "fedtiny")]
    FedTiny,
    /// Random mask at the target density, never adjusted.
    StaticRandom,
    /// One-shot magnitude mask on the server, never adjusted.
    StaticMagnitude,
    /// Dense federated averaging.
    DenseFedavg,
    /// Vanilla selection followed by progressive grow/prune.
    ProgressiveOnly,
    /// Adaptive BN selection with a fixed mask.
    #[serde(rename = "adaptive_bn_only")]
    AdaptiveBnOnly,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::FedTiny,
        Algorithm::StaticRandom,
        Algorithm::StaticMagnitude,
        Algorithm::DenseFedavg,
        Algorithm::ProgressiveOnly,
        Algorithm::AdaptiveBnOnly,
    ];

    pub fn is_sparse(self) -> bool {
        self != Algorithm::DenseFedavg
    }

    pub fn grows(self) -> bool {
        matches!(self, Algorithm::FedTiny | Algorithm::ProgressiveOnly)
    }

    pub fn selects(self) -> bool {
        matches!(
            self,
            Algorithm::FedTiny | Algorithm::ProgressiveOnly | Algorithm::AdaptiveBnOnly
        )
    }

    pub fn cost_model(self) -> CostModel {
        match self {
            Algorithm::DenseFedavg => CostModel::Dense,
            Algorithm::FedTiny | Algorithm::ProgressiveOnly => CostModel::FedTiny,
            _ => CostModel::StaticSparse,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::FedTiny => "fedtiny",
            Algorithm::StaticRandom => "static_random",
            Algorithm::StaticMagnitude => "static_magnitude",
            Algorithm::DenseFedavg => "dense_fedavg",
            Algorithm::ProgressiveOnly => "progressive_only",
            Algorithm::AdaptiveBnOnly => "adaptive_bn_only",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.tag() == s)
            .ok_or_else(|| Error::UnknownAlgorithm(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Blobs,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Noise standard deviation around each class mean.
    pub spread: f64,
    pub csv_path: Option<PathBuf>,
    pub csv_header: bool,
    /// Share of all rows held out for testing.
    pub test_fraction: f64,
    /// Share of the remaining rows kept on the server for pretraining.
    pub server_fraction: f64,
    pub clients: usize,
    /// Dirichlet concentration; lower is more skewed.
    pub alpha: f64,
    /// Development share of each client's training rows.
    pub dev_ratio: f64,
    /// Remove development rows from the client's training rows instead of
    /// sharing them.
    pub dev_disjoint: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Blobs,
            classes: 10,
            per_class: 600,
            dim: 16,
            spread: 1.0,
            csv_path: None,
            csv_header: false,
            test_fraction: 0.2,
            server_fraction: 0.1,
            clients: 10,
            alpha: 0.5,
            dev_ratio: 0.1,
            dev_disjoint: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub batch_norm: bool,
    pub blocks: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64, 64],
            batch_norm: true,
            blocks: 5,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// `η·(1 + cos(π(r−1)/R))/2` in round `r` of `R`.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    /// Share of clients sampled each round.
    pub client_fraction: f64,
    /// Weight client updates by local sample count instead of uniformly.
    pub weighted_aggregation: bool,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    /// Run client work on the thread pool.
    pub parallel: bool,
    /// Bits per stored value.
    pub bits: u32,
    /// Batches observed when measuring activation memory.
    pub activation_batches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            local_epochs: 5,
            batch_size: 64,
            lr: 0.05,
            lr_schedule: LrSchedule::Constant,
            client_fraction: 1.0,
            weighted_aggregation: true,
            pretrain_epochs: 10,
            pretrain_lr: 0.05,
            parallel: true,
            bits: 32,
            activation_batches: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    /// Candidate count; 0 picks `round(0.1 / density)`.
    pub size: usize,
    pub noise: f64,
    pub min_survivors: usize,
    pub max_attempts: usize,
    pub sigma: SigmaAggregation,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            size: 0,
            noise: 0.5,
            min_survivors: 10,
            max_attempts: 100,
            sigma: SigmaAggregation::StdDev,
        }
    }
}

/// Complete description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub algorithm: Algorithm,
    /// Target density `d_target`.
    pub density: f64,
    #[serde(default)]
    pub seed: u64,
    pub rounds: usize,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub pool: PoolConfig,
    #[serde(default)]
    pub schedule: PruneSchedule,
}

fn default_name() -> String {
    "run".to_string()
}

fn check(ok: bool, field: &str, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, message()))
    }
}

fn fraction(v: f64) -> bool {
    v > 0.0 && v <= 1.0
}

impl ExperimentConfig {
    pub fn new(algorithm: Algorithm, density: f64, rounds: usize) -> Self {
        Self {
            name: default_name(),
            algorithm,
            density,
            seed: 0,
            rounds,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            pool: PoolConfig::default(),
            schedule: PruneSchedule::default(),
        }
    }

    /// Candidate count after resolving the automatic size.
    pub fn pool_size(&self) -> usize {
        if self.pool.size > 0 {
            self.pool.size
        } else {
            ((0.1 / self.density).round() as usize).max(1)
        }
    }

    pub fn learning_rate(&self, round: usize) -> f64 {
        match self.train.lr_schedule {
            LrSchedule::Constant => self.train.lr,
            LrSchedule::Cosine => {
                let p = (round.saturating_sub(1)) as f64 / self.rounds as f64;
                self.train.lr * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
            }
        }
    }

    /// Checks every field, reporting the first offending one by path.
    pub fn validate(&self) -> Result<()> {
        check(fraction(self.density), "density", || {
            format!("must lie in (0, 1], got {}", self.density)
        })?;
        check(self.rounds >= 1, "rounds", || "must be at least 1".into())?;
        // Config files are TOML, whose integers are signed.
        check(self.seed <= i64::MAX as u64, "seed", || {
            format!("must be at most {}, got {}", i64::MAX, self.seed)
        })?;
        let d = &self.data;
        match d.source {
            DataSource::Blobs => {
                check(d.classes >= 2, "data.classes", || "need at least 2 classes".into())?;
                check(d.per_class >= 1, "data.per_class", || "must be positive".into())?;
                check(d.dim >= 1, "data.dim", || "must be positive".into())?;
                check(d.spread >= 0.0 && d.spread.is_finite(), "data.spread", || {
                    format!("must be a non-negative number, got {}", d.spread)
                })?;
            }
            DataSource::Csv => {
                check(d.csv_path.is_some(), "data.csv_path", || {
                    "required when data.source = \"csv\"".into()
                })?;
            }
        }
        check(d.test_fraction > 0.0 && d.test_fraction < 1.0, "data.test_fraction", || {
            format!("must lie in (0, 1), got {}", d.test_fraction)
        })?;
        check(
            d.server_fraction >= 0.0 && d.server_fraction < 1.0,
            "data.server_fraction",
            || format!("must lie in [0, 1), got {}", d.server_fraction),
        )?;
        check(
            d.server_fraction > 0.0 || self.train.pretrain_epochs == 0,
            "data.server_fraction",
            || "server pretraining needs a positive server share".into(),
        )?;
        check(d.clients >= 1, "data.clients", || "must be at least 1".into())?;
        check(d.alpha > 0.0 && d.alpha.is_finite(), "data.alpha", || {
            format!("must be positive, got {}", d.alpha)
        })?;
        check(fraction(d.dev_ratio), "data.dev_ratio", || {
            format!("must lie in (0, 1], got {}", d.dev_ratio)
        })?;
        let m = &self.model;
        check(!m.hidden.is_empty() && !m.hidden.contains(&0), "model.hidden", || {
            "need at least one positive hidden width".into()
        })?;
        check(m.blocks >= 1, "model.blocks", || "must be at least 1".into())?;
        check(m.bn_momentum > 0.0 && m.bn_momentum < 1.0, "model.bn_momentum", || {
            format!("must lie in (0, 1), got {}", m.bn_momentum)
        })?;
        check(m.bn_eps > 0.0, "model.bn_eps", || "must be positive".into())?;
        let t = &self.train;
        check(t.local_epochs >= 1, "train.local_epochs", || "must be at least 1".into())?;
        check(t.batch_size >= 2, "train.batch_size", || "must be at least 2".into())?;
        check(t.lr >= 0.0 && t.lr.is_finite(), "train.lr", || {
            format!("must be a non-negative number, got {}", t.lr)
        })?;
        check(t.pretrain_lr >= 0.0 && t.pretrain_lr.is_finite(), "train.pretrain_lr", || {
            format!("must be a non-negative number, got {}", t.pretrain_lr)
        })?;
        check(fraction(t.client_fraction), "train.client_fraction", || {
            format!("must lie in (0, 1], got {}", t.client_fraction)
        })?;
        check(t.bits >= 1, "train.bits", || "must be at least 1".into())?;
        let p = &self.pool;
        check(p.noise >= 0.0 && p.noise.is_finite(), "pool.noise", || {
            format!("must be non-negative, got {}", p.noise)
        })?;
        check(p.max_attempts >= 1, "pool.max_attempts", || "must be at least 1".into())?;
        if self.algorithm.grows() {
            self.schedule
                .validate()
                .map_err(|e| Error::config("schedule", e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auto_pool_size() {
        let mut c = ExperimentConfig::new(Algorithm::FedTiny, 0.01, 10);
        assert_eq!(c.pool_size(), 10);
        c.density = 0.002;
        assert_eq!(c.pool_size(), 50);
        c.density = 0.5;
        assert_eq!(c.pool_size(), 1);
        c.pool.size = 3;
        assert_eq!(c.pool_size(), 3);
    }

    #[test]
    fn validation_names_field() {
        let mut c = ExperimentConfig::new(Algorithm::FedTiny, 0.0, 10);
        match c.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "density"),
            other => panic!("{other:?}"),
        }
        c.density = 0.1;
        c.train.local_epochs = 0;
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "train.local_epochs"));
        c.train.local_epochs = 1;
        c.schedule.stop = 1;
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "schedule"));
        c.algorithm = Algorithm::StaticRandom;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn cosine_lr() {
        let mut c = ExperimentConfig::new(Algorithm::FedTiny, 0.1, 10);
        assert_eq!(c.learning_rate(7), 0.05);
        c.train.lr_schedule = LrSchedule::Cosine;
        assert_eq!(c.learning_rate(1), 0.05);
        assert!((c.learning_rate(6) - 0.025).abs() < 1e-15);
    }

    #[test]
    fn algorithm_tags() {
        for a in Algorithm::ALL {
            assert_eq!(a.tag().parse::<Algorithm>().unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.tag()));
        }
        assert!("lotteryfl".parse::<Algorithm>().is_err());
    }
}
