//! Candidate selection by client feedback.
//!
//! Adaptive selection refreshes each candidate's batch-normalization
//! statistics on every client's development set (weights frozen), averages
//! them on the server weighted by development-set size, installs the result,
//! and picks the candidate with the lowest weighted development loss.
//! Vanilla selection skips the refresh and scores the candidates with the
//! statistics they already carry.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{chunk_indices, Dataset};
use crate::error::{Error, Result};
use crate::masking::Candidate;
use crate::net::{BnStats, Mode, Network};

/// Statistics a client reports for one candidate after the refresh pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnReport {
    pub candidate: usize,
    pub layers: Vec<BnStats>,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub candidate: usize,
    pub loss: f64,
    pub samples: usize,
}

/// How per-client spreads are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaAggregation {
    /// Weighted mean of standard deviations; the installed variance is the
    /// square of that mean.
    #[default]
    StdDev,
    /// Weighted mean of variances.
    Variance,
}

/// The candidate's sparse parameters `Θ ⊙ m` with `Θ`'s BN state.
pub fn candidate_network(theta: &Network, candidate: &Candidate) -> Result<Network> {
    let mut net = theta.clone();
    net.apply_mask(&candidate.mask)?;
    Ok(net)
}

/// Refreshes BN moving statistics of `net` over `dev` in insertion order,
/// batch by batch, with all weights frozen. Returns the final statistics.
///
/// A one-sample development set cannot form batch statistics; its report
/// carries the candidate's existing statistics.
pub fn client_bn_pass(
    net: &Network,
    candidate: usize,
    dev: &Dataset,
    batch_size: usize,
) -> Result<BnReport> {
    if dev.is_empty() {
        return Err(Error::EmptyDataset("development set"));
    }
    let mut work = net.clone();
    if dev.len() >= 2 {
        for idx in chunk_indices((0..dev.len()).collect(), batch_size) {
            let x = dev.features().select_rows(&idx);
            work.forward(&x, Mode::Train)?;
        }
    }
    Ok(BnReport {
        candidate,
        layers: work.bn_stats(),
        samples: dev.len(),
    })
}

/// Server-side weighted average of one candidate's reports, weighted by
/// development-set size.
pub fn aggregate_bn(reports: &[BnReport], mode: SigmaAggregation) -> Result<Vec<BnStats>> {
    let stats: Vec<&[BnStats]> = reports.iter().map(|r| r.layers.as_slice()).collect();
    let weights: Vec<f64> = reports.iter().map(|r| r.samples as f64).collect();
    aggregate_bn_weighted(&stats, &weights, mode)
}

/// `Σ_k w_k μ_k` and `Σ_k w_k σ_k` (or `Σ_k w_k σ²_k`) with the weights
/// normalized to sum to one, reduced in the given order.
pub fn aggregate_bn_weighted(
    stats: &[&[BnStats]],
    weights: &[f64],
    mode: SigmaAggregation,
) -> Result<Vec<BnStats>> {
    let first = stats
        .first()
        .ok_or_else(|| Error::InvalidArgument("no BN reports to aggregate".into()))?;
    if stats.len() != weights.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![stats.len()],
            actual: vec![weights.len()],
        });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidArgument("BN weights must be non-negative with a positive sum".into()));
    }
    let mut out: Vec<BnStats> = first
        .iter()
        .map(|l| BnStats {
            mean: vec![0.0; l.mean.len()],
            var: vec![0.0; l.var.len()],
        })
        .collect();
    for (layers, &w) in stats.iter().zip(weights) {
        if layers.len() != out.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![out.len()],
                actual: vec![layers.len()],
            });
        }
        let w = w / total;
        for (acc, l) in out.iter_mut().zip(layers.iter()) {
            if l.mean.len() != acc.mean.len() || l.var.len() != acc.var.len() {
                return Err(Error::ShapeMismatch {
                    expected: vec![acc.mean.len()],
                    actual: vec![l.mean.len()],
                });
            }
            for (a, m) in acc.mean.iter_mut().zip(&l.mean) {
                *a += w * m;
            }
            for (a, v) in acc.var.iter_mut().zip(&l.var) {
                *a += match mode {
                    SigmaAggregation::StdDev => w * v.max(0.0).sqrt(),
                    SigmaAggregation::Variance => w * v,
                };
            }
        }
    }
    if mode == SigmaAggregation::StdDev {
        for l in &mut out {
            l.var.iter_mut().for_each(|s| *s *= *s);
        }
    }
    Ok(out)
}

/// Eval-mode loss of `net` over the development set.
pub fn client_score(net: &Network, candidate: usize, dev: &Dataset) -> Result<ScoreReport> {
    if dev.is_empty() {
        return Err(Error::EmptyDataset("development set"));
    }
    let logits = net.predict(dev.features())?;
    let (loss, _) =
        crate::net::softmax_cross_entropy(logits.data(), net.output_dim(), dev.labels())?;
    Ok(ScoreReport {
        candidate,
        loss: loss.value,
        samples: dev.len(),
    })
}

/// `argmin_c Σ_k w_k · s_k^(c)` with `w_k = |D̂_k| / Σ|D̂_j|`; ties go to the
/// lowest candidate id. `scores[k]` holds client `k`'s reports.
pub fn select(scores: &[Vec<ScoreReport>], candidates: usize) -> Result<(usize, Vec<f64>)> {
    if candidates == 0 || scores.is_empty() {
        return Err(Error::InvalidArgument("selection needs candidates and clients".into()));
    }
    let total: usize = scores
        .iter()
        .map(|client| client.first().map_or(0, |s| s.samples))
        .sum();
    if total == 0 {
        return Err(Error::InvalidArgument("score reports carry no samples".into()));
    }
    let mut weighted = vec![0.0; candidates];
    for (k, client) in scores.iter().enumerate() {
        for (c, acc) in weighted.iter_mut().enumerate() {
            let s = client
                .iter()
                .find(|s| s.candidate == c)
                .ok_or(Error::MissingReport {
                    client: k,
                    candidate: c,
                })?;
            *acc += s.samples as f64 / total as f64 * s.loss;
        }
    }
    let mut best = 0;
    for c in 1..candidates {
        if weighted[c] < weighted[best] {
            best = c;
        }
    }
    Ok((best, weighted))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionOptions {
    pub batch_size: usize,
    pub sigma: SigmaAggregation,
    pub parallel: bool,
}

/// Outcome of a selection round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: usize,
    pub weighted_losses: Vec<f64>,
    /// Installed global statistics per candidate (adaptive selection only).
    pub global_bn: Option<Vec<Vec<BnStats>>>,
}

impl Selection {
    /// The chosen candidate's sparse network, with its installed statistics.
    pub fn network(&self, theta: &Network, pool: &[Candidate]) -> Result<Network> {
        let mut net = candidate_network(theta, &pool[self.chosen])?;
        if let Some(bn) = &self.global_bn {
            net.install_bn_stats(&bn[self.chosen])?;
        }
        Ok(net)
    }
}

fn map_pairs<T: Send>(
    clients: usize,
    candidates: usize,
    parallel: bool,
    f: impl Fn(usize, usize) -> Result<T> + Sync,
) -> Result<Vec<Vec<T>>> {
    let pairs: Vec<(usize, usize)> = (0..clients)
        .flat_map(|k| (0..candidates).map(move |c| (k, c)))
        .collect();
    let flat: Vec<T> = if parallel {
        pairs.par_iter().map(|&(k, c)| f(k, c)).collect::<Result<_>>()?
    } else {
        pairs.iter().map(|&(k, c)| f(k, c)).collect::<Result<_>>()?
    };
    let mut it = flat.into_iter();
    Ok((0..clients)
        .map(|_| it.by_ref().take(candidates).collect())
        .collect())
}

/// Full adaptive selection over the pool and client development sets.
pub fn adaptive_select(
    theta: &Network,
    pool: &[Candidate],
    devs: &[Dataset],
    opts: &SelectionOptions,
) -> Result<Selection> {
    let nets: Vec<Network> = pool
        .iter()
        .map(|c| candidate_network(theta, c))
        .collect::<Result<_>>()?;
    let reports = map_pairs(devs.len(), pool.len(), opts.parallel, |k, c| {
        client_bn_pass(&nets[c], c, &devs[k], opts.batch_size)
    })?;
    let global: Vec<Vec<BnStats>> = (0..pool.len())
        .map(|c| {
            let per_client: Vec<BnReport> = reports.iter().map(|r| r[c].clone()).collect();
            aggregate_bn(&per_client, opts.sigma)
        })
        .collect::<Result<_>>()?;
    let installed: Vec<Network> = nets
        .into_iter()
        .zip(&global)
        .map(|(mut n, g)| {
            n.install_bn_stats(g)?;
            Ok(n)
        })
        .collect::<Result<_>>()?;
    let scores = map_pairs(devs.len(), pool.len(), opts.parallel, |k, c| {
        client_score(&installed[c], c, &devs[k])
    })?;
    let (chosen, weighted_losses) = select(&scores, pool.len())?;
    Ok(Selection {
        chosen,
        weighted_losses,
        global_bn: Some(global),
    })
}

/// Selection without the BN refresh.
pub fn vanilla_select(
    theta: &Network,
    pool: &[Candidate],
    devs: &[Dataset],
    opts: &SelectionOptions,
) -> Result<Selection> {
    let nets: Vec<Network> = pool
        .iter()
        .map(|c| candidate_network(theta, c))
        .collect::<Result<_>>()?;
    let scores = map_pairs(devs.len(), pool.len(), opts.parallel, |k, c| {
        client_score(&nets[c], c, &devs[k])
    })?;
    let (chosen, weighted_losses) = select(&scores, pool.len())?;
    Ok(Selection {
        chosen,
        weighted_losses,
        global_bn: None,
    })
}
