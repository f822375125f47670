//! The federated round loop.

use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bn_select::{
    adaptive_select, aggregate_bn_weighted, vanilla_select, SelectionOptions, SigmaAggregation,
};
use crate::cost::{extra_block_flops, forward_flops, model_storage, round_peak_flops, training_memory};
use crate::data::{
    batch_indices, dev_indices, dirichlet_partition, load_csv, make_blobs, sample_clients, Dataset,
    PartitionSpec,
};
use crate::error::{Error, Result};
use crate::mask::{Mask, SparseLayout};
use crate::masking::{
    density, feasible_uniform_densities, generate_candidate_pool, magnitude_mask, prunable_shapes,
    random_mask_per_layer, PoolOptions,
};
use crate::net::{softmax_cross_entropy, BnStats, Layer, MlpSpec, Mode, Network};
use crate::prog_prune::{
    aggregate_topk, apply_plan, plan_grow_prune, pruning_number, target_layers, GrowPrunePlan,
    TopKBuffer,
};
use crate::rng::{derive_seed, rng_for, stream};

use super::config::{Algorithm, DataSource, ExperimentConfig};

/// Client shards, their development subsets, the server share, and the
/// held-out test set.
#[derive(Debug, Clone)]
pub struct Federation {
    pub clients: Vec<Dataset>,
    pub devs: Vec<Dataset>,
    pub server: Option<Dataset>,
    pub test: Dataset,
}

pub fn build_federation(cfg: &ExperimentConfig) -> Result<Federation> {
    let d = &cfg.data;
    let full = match d.source {
        DataSource::Blobs => make_blobs(d.classes, d.per_class, d.dim, d.spread, cfg.seed)?,
        DataSource::Csv => {
            let path = d
                .csv_path
                .as_ref()
                .ok_or_else(|| Error::config("data.csv_path", "missing"))?;
            load_csv(path, d.csv_header)?
        }
    };
    let (train, test) = full.split(d.test_fraction, derive_seed(cfg.seed, &[stream::SPLIT, 0]))?;
    let (pool, server) = if d.server_fraction > 0.0 {
        let (rest, server) =
            train.split(d.server_fraction, derive_seed(cfg.seed, &[stream::SPLIT, 1]))?;
        (rest, Some(server))
    } else {
        (train, None)
    };
    let mut clients = dirichlet_partition(
        &pool,
        &PartitionSpec {
            clients: d.clients,
            alpha: d.alpha,
            seed: cfg.seed,
        },
    )?;
    let mut devs = Vec::with_capacity(clients.len());
    for (k, c) in clients.iter_mut().enumerate() {
        let mut idx = dev_indices(c, d.dev_ratio, derive_seed(cfg.seed, &[stream::DEV, k as u64]))?;
        devs.push(if d.dev_disjoint {
            if c.len() < 2 {
                return Err(Error::config(
                    "data.dev_disjoint",
                    format!("client {k} has a single row to split"),
                ));
            }
            // Keep at least one training row.
            idx.truncate(c.len() - 1);
            let dev = c.subset(&idx);
            let rest: Vec<usize> = (0..c.len()).filter(|i| idx.binary_search(i).is_err()).collect();
            *c = c.subset(&rest);
            dev
        } else {
            c.subset(&idx)
        });
    }
    Ok(Federation {
        clients,
        devs,
        server,
        test,
    })
}

/// Eval-mode accuracy and mean loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

const EVAL_CHUNK: usize = 1024;

pub fn evaluate_global(net: &Network, test: &Dataset) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::EmptyDataset("test set"));
    }
    let classes = net.output_dim();
    let (mut correct, mut loss_sum) = (0usize, 0.0);
    let rows: Vec<usize> = (0..test.len()).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let logits = net.predict(&test.features().select_rows(chunk))?;
        let labels: Vec<usize> = chunk.iter().map(|&i| test.labels()[i]).collect();
        let (loss, _) = softmax_cross_entropy(logits.data(), classes, &labels)?;
        loss_sum += loss.value * chunk.len() as f64;
        for (row, &label) in logits.data().chunks(classes).zip(&labels) {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            correct += usize::from(best == label);
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / test.len() as f64,
        loss: loss_sum / test.len() as f64,
    })
}

fn has_bn(net: &Network) -> bool {
    net.layers().iter().any(|l| matches!(l, Layer::BatchNorm(_)))
}

/// Dense SGD on the server share. Returns the mean training loss of each
/// epoch; zero epochs leave `net` untouched.
pub fn pretrain_server(
    net: &mut Network,
    data: Option<&Dataset>,
    epochs: usize,
    batch: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if epochs == 0 {
        return Ok(Vec::new());
    }
    let data = data
        .filter(|d| !d.is_empty())
        .ok_or(Error::EmptyDataset("server pretraining set"))?;
    let mut losses = Vec::with_capacity(epochs);
    for e in 0..epochs {
        let mut r = rng_for(seed, &[stream::PRETRAIN, e as u64]);
        let (mut sum, mut count) = (0.0, 0usize);
        for b in batch_indices(data.len(), batch, &mut r) {
            if b.len() < 2 && has_bn(net) {
                continue;
            }
            let x = data.features().select_rows(&b);
            let y: Vec<usize> = b.iter().map(|&i| data.labels()[i]).collect();
            let (loss, _) = net.train_batch(&x, &y, None, None, lr)?;
            sum += loss.value * b.len() as f64;
            count += b.len();
        }
        losses.push(if count > 0 { sum / count as f64 } else { 0.0 });
    }
    Ok(losses)
}

/// `Σ_k w_k · net_k` over every trainable tensor, with BN moving statistics
/// combined like selection-time statistics. Weights are normalized here and
/// reduced in the given order.
pub fn aggregate_networks(
    nets: &[&Network],
    weights: &[f64],
    sigma: SigmaAggregation,
) -> Result<Network> {
    let first = *nets
        .first()
        .ok_or_else(|| Error::InvalidArgument("no client models to aggregate".into()))?;
    if nets.len() != weights.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![nets.len()],
            actual: vec![weights.len()],
        });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidArgument("aggregation weights must be non-negative with a positive sum".into()));
    }
    let mut out = first.clone();
    let count = out.params().len();
    for net in nets {
        if net.params().len() != count {
            return Err(Error::ShapeMismatch {
                expected: vec![count],
                actual: vec![net.params().len()],
            });
        }
    }
    for (i, acc) in out.params_mut().into_iter().enumerate() {
        let mut sum = vec![0.0; acc.len()];
        for (net, &w) in nets.iter().zip(weights) {
            let p = net.params()[i];
            if p.shape() != acc.shape() {
                return Err(Error::ShapeMismatch {
                    expected: acc.shape().to_vec(),
                    actual: p.shape().to_vec(),
                });
            }
            let w = w / total;
            for (s, v) in sum.iter_mut().zip(p.data()) {
                *s += w * v;
            }
        }
        acc.data_mut().copy_from_slice(&sum);
    }
    if !out.bn_states().is_empty() {
        let stats: Vec<Vec<BnStats>> = nets.iter().map(|n| n.bn_stats()).collect();
        let views: Vec<&[BnStats]> = stats.iter().map(Vec::as_slice).collect();
        out.install_bn_stats(&aggregate_bn_weighted(&views, weights, sigma)?)?;
    }
    Ok(out)
}

/// Initial mask choice and, for selecting algorithms, the selection outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub pool_size: usize,
    pub chosen: usize,
    pub weighted_losses: Vec<f64>,
    pub chosen_densities: Vec<f64>,
}

/// Per-round record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub density: f64,
    pub nnz_before: usize,
    pub nnz_after: usize,
    pub clients: Vec<usize>,
    pub train_loss: f64,
    pub lr: f64,
    pub targeted: Vec<usize>,
    /// Requested `a^l_t` per targeted layer, after capping.
    pub pruning_numbers: Vec<usize>,
    pub clamped_layers: usize,
    pub grown: usize,
    pub dropped: usize,
    /// Grow slots filled without a reported gradient.
    pub filled: usize,
    pub buffer_capacity: usize,
    pub buffer_peak: usize,
    pub buffer_violations: usize,
    pub peak_flops: f64,
    pub memory_bytes: f64,
    pub wall_ms: f64,
}

struct ClientUpdate {
    net: Network,
    loss_sum: f64,
    loss_count: usize,
    activation_elems: usize,
    buffers: Vec<TopKBuffer>,
}

/// Targeted layers with their pruning numbers and the layout that computes
/// their weight gradients densely.
struct TopkRequest {
    layers: Vec<(usize, usize)>,
    layout: SparseLayout,
}

/// A configured experiment in progress.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: ExperimentConfig,
    fed: Federation,
    net: Network,
    mask: Option<Mask>,
    selection: Option<SelectionSummary>,
    pretrain_losses: Vec<f64>,
    round: usize,
}

impl Simulation {
    /// Builds data, pretrains on the server, and picks the initial mask.
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let fed = build_federation(&cfg)?;
        let spec = MlpSpec {
            input: fed.test.dim(),
            hidden: cfg.model.hidden.clone(),
            classes: fed.test.classes(),
            batch_norm: cfg.model.batch_norm,
            blocks: cfg.model.blocks,
            bn_momentum: cfg.model.bn_momentum,
            bn_eps: cfg.model.bn_eps,
        };
        let mut net = Network::mlp(&spec, cfg.seed)?;
        let pretrain_losses = pretrain_server(
            &mut net,
            fed.server.as_ref(),
            cfg.train.pretrain_epochs,
            cfg.train.batch_size,
            cfg.train.pretrain_lr,
            cfg.seed,
        )?;
        let mut sim = Self {
            cfg,
            fed,
            net,
            mask: None,
            selection: None,
            pretrain_losses,
            round: 0,
        };
        sim.initialize_mask()?;
        Ok(sim)
    }

    /// Starts from an explicit model and mask, skipping pretraining and
    /// selection.
    pub fn from_parts(
        cfg: ExperimentConfig,
        fed: Federation,
        mut net: Network,
        mask: Option<Mask>,
    ) -> Result<Self> {
        cfg.validate()?;
        if let Some(m) = &mask {
            net.apply_mask(m)?;
        }
        Ok(Self {
            cfg,
            fed,
            net,
            mask,
            selection: None,
            pretrain_losses: Vec::new(),
            round: 0,
        })
    }

    fn initialize_mask(&mut self) -> Result<()> {
        let cfg = &self.cfg;
        let target = cfg.density;
        let uniform = || {
            let sizes: Vec<usize> = prunable_shapes(&self.net)
                .iter()
                .map(|(_, s)| s.iter().product())
                .collect();
            feasible_uniform_densities(&sizes, target)
        };
        let mask = match cfg.algorithm {
            Algorithm::DenseFedavg => None,
            Algorithm::StaticRandom => Some(random_mask_per_layer(
                &prunable_shapes(&self.net),
                &uniform(),
                derive_seed(cfg.seed, &[stream::MASK]),
            )?),
            Algorithm::StaticMagnitude => Some(magnitude_mask(&self.net, &uniform())?),
            Algorithm::FedTiny | Algorithm::ProgressiveOnly | Algorithm::AdaptiveBnOnly => {
                let opts = PoolOptions {
                    noise: cfg.pool.noise,
                    min_survivors: cfg.pool.min_survivors,
                    max_attempts: cfg.pool.max_attempts,
                    rescale_fallback: true,
                };
                let pool = generate_candidate_pool(
                    &self.net,
                    target,
                    cfg.pool_size(),
                    &opts,
                    derive_seed(cfg.seed, &[stream::POOL]),
                )?;
                let sel_opts = SelectionOptions {
                    batch_size: cfg.train.batch_size,
                    sigma: cfg.pool.sigma,
                    parallel: cfg.train.parallel,
                };
                let sel = if cfg.algorithm == Algorithm::ProgressiveOnly {
                    vanilla_select(&self.net, &pool, &self.fed.devs, &sel_opts)?
                } else {
                    adaptive_select(&self.net, &pool, &self.fed.devs, &sel_opts)?
                };
                let chosen = &pool[sel.chosen];
                self.net = sel.network(&self.net, &pool)?;
                self.selection = Some(SelectionSummary {
                    pool_size: pool.len(),
                    chosen: sel.chosen,
                    weighted_losses: sel.weighted_losses.clone(),
                    chosen_densities: chosen.mask.layers().iter().map(|l| l.density()).collect(),
                });
                Some(chosen.mask.clone())
            }
        };
        if let Some(m) = &mask {
            self.net.apply_mask(m)?;
        }
        self.mask = mask;
        Ok(())
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn federation(&self) -> &Federation {
        &self.fed
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn mask(&self) -> Option<&Mask> {
        self.mask.as_ref()
    }

    pub fn selection(&self) -> Option<&SelectionSummary> {
        self.selection.as_ref()
    }

    pub fn pretrain_losses(&self) -> &[f64] {
        &self.pretrain_losses
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    /// Density of the prune-eligible weights (1 for dense training).
    pub fn density(&self) -> f64 {
        self.mask.as_ref().map_or(1.0, density)
    }

    pub fn evaluate(&self) -> Result<Evaluation> {
        evaluate_global(&self.net, &self.fed.test)
    }

    fn sampled_clients(&self, round: usize) -> Vec<usize> {
        let n = self.fed.clients.len();
        let k = ((self.cfg.train.client_fraction * n as f64).round() as usize).clamp(1, n);
        let mut r = rng_for(self.cfg.seed, &[stream::SAMPLE_CLIENTS, round as u64]);
        sample_clients(n, k, &mut r)
    }

    fn local_update(
        &self,
        round: usize,
        client: usize,
        lr: f64,
        layout: Option<&SparseLayout>,
        request: Option<&TopkRequest>,
    ) -> Result<ClientUpdate> {
        let cfg = &self.cfg;
        let data = &self.fed.clients[client];
        let bn = has_bn(&self.net);
        let mut net = self.net.clone();
        let (mut loss_sum, mut loss_count, mut activation_elems, mut observed) = (0.0, 0, 0, 0);
        for epoch in 0..cfg.train.local_epochs {
            let mut r = rng_for(
                cfg.seed,
                &[stream::LOCAL, round as u64, client as u64, epoch as u64],
            );
            for b in batch_indices(data.len(), cfg.train.batch_size, &mut r) {
                if b.len() < 2 && bn {
                    continue;
                }
                let x = data.features().select_rows(&b);
                let y: Vec<usize> = b.iter().map(|&i| data.labels()[i]).collect();
                let (loss, elems) = net.train_batch(&x, &y, self.mask.as_ref(), layout, lr)?;
                if observed < cfg.train.activation_batches {
                    activation_elems = activation_elems.max(elems);
                    observed += 1;
                }
                loss_sum += loss.value * b.len() as f64;
                loss_count += b.len();
            }
        }
        let mut buffers = Vec::new();
        if let (Some(req), Some(mask)) = (request, self.mask.as_ref()) {
            let mut r = rng_for(cfg.seed, &[stream::TOPK_BATCH, round as u64, client as u64]);
            let take = cfg.train.batch_size.min(data.len());
            let mut rows = index::sample(&mut r, data.len(), take).into_vec();
            rows.sort_unstable();
            let x = data.features().select_rows(&rows);
            let y: Vec<usize> = rows.iter().map(|&i| data.labels()[i]).collect();
            let mode = if bn && rows.len() < 2 { Mode::Eval } else { Mode::Train };
            let (logits, cache) = net.forward_pure(&x, mode, Some(&req.layout))?;
            let (_, grads) = net.backward_with(&cache, &logits, &y, Some(&req.layout))?;
            for &(layer, a) in &req.layers {
                let g = grads
                    .weight(layer)
                    .ok_or_else(|| Error::InvalidPlan(format!("no gradient for layer {layer}")))?;
                let lm = mask
                    .get(layer)
                    .ok_or_else(|| Error::InvalidPlan(format!("layer {layer} has no mask")))?;
                buffers.push(crate::prog_prune::topk_collect(g.data(), lm, a)?);
            }
        }
        Ok(ClientUpdate {
            net,
            loss_sum,
            loss_count,
            activation_elems,
            buffers,
        })
    }

    /// Runs the next round and returns its metrics.
    pub fn step(&mut self) -> Result<RoundMetrics> {
        let start = Instant::now();
        let round = self.round + 1;
        let cfg = self.cfg.clone();
        let epochs = cfg.train.local_epochs;
        let sampled = self.sampled_clients(round);
        let lr = cfg.learning_rate(round);

        let targeted = if cfg.algorithm.grows() && self.mask.is_some() {
            target_layers(round, &cfg.schedule, &self.net)
        } else {
            Vec::new()
        };
        let mut pruning_numbers = Vec::new();
        let mut clamped_layers = 0;
        let mut request_layers = Vec::new();
        if let Some(mask) = &self.mask {
            for &l in &targeted {
                let lm = mask.get(l).expect("targeted layers are masked");
                let kept = lm.nnz();
                let n = pruning_number(true, round * epochs, &cfg.schedule, epochs, kept, lm.len() - kept);
                pruning_numbers.push(n.count);
                clamped_layers += usize::from(n.clamped);
                if n.count > 0 {
                    request_layers.push((l, n.count));
                }
            }
        }
        let request = match (&self.mask, request_layers.is_empty()) {
            (Some(mask), false) => {
                let dense: Vec<usize> = request_layers.iter().map(|&(l, _)| l).collect();
                Some(TopkRequest {
                    layout: SparseLayout::from_mask_except(mask, &dense),
                    layers: request_layers,
                })
            }
            _ => None,
        };
        let layout = self.mask.as_ref().map(SparseLayout::from_mask);

        let work = |&k: &usize| self.local_update(round, k, lr, layout.as_ref(), request.as_ref());
        let updates: Vec<ClientUpdate> = if cfg.train.parallel {
            sampled.par_iter().map(work).collect::<Result<_>>()?
        } else {
            sampled.iter().map(work).collect::<Result<_>>()?
        };

        let weights: Vec<f64> = sampled
            .iter()
            .map(|&k| {
                if cfg.train.weighted_aggregation {
                    self.fed.clients[k].len() as f64
                } else {
                    1.0
                }
            })
            .collect();
        let cost = self.round_costs(&sampled, &updates, request.as_ref())?;

        let nets: Vec<&Network> = updates.iter().map(|u| &u.net).collect();
        let mut global = aggregate_networks(&nets, &weights, cfg.pool.sigma)?;
        if let Some(m) = &self.mask {
            global.apply_mask(m)?;
        }
        self.net = global;

        let nnz_before = self.mask.as_ref().map_or(0, Mask::nnz);
        let (mut grown, mut filled) = (0, 0);
        let (mut buffer_capacity, mut buffer_peak, mut buffer_violations) = (0, 0, 0);
        if let (Some(req), Some(mask)) = (&request, self.mask.as_mut()) {
            let mut plan = GrowPrunePlan::default();
            for (j, &(layer, a)) in req.layers.iter().enumerate() {
                let bufs: Vec<(&TopKBuffer, usize)> = updates
                    .iter()
                    .zip(&weights)
                    .map(|(u, &w)| (&u.buffers[j], w as usize))
                    .collect();
                for (b, _) in &bufs {
                    buffer_capacity = buffer_capacity.max(b.capacity());
                    buffer_peak = buffer_peak.max(b.peak());
                    buffer_violations += usize::from(b.peak() > a || b.len() > a);
                }
                let agg = aggregate_topk(&bufs)?;
                let w = self.net.linear(layer).expect("masked layer").weight.data();
                let lp = plan_grow_prune(layer, &agg, mask.get(layer).expect("masked"), w, a)?;
                filled += lp.filled;
                plan.layers.push(lp);
            }
            grown = plan.total_grown();
            apply_plan(&mut self.net, mask, &plan)?;
        }
        let nnz_after = self.mask.as_ref().map_or(0, Mask::nnz);

        let eval = self.evaluate()?;
        let (loss_sum, loss_count) = updates
            .iter()
            .fold((0.0, 0), |(s, c), u| (s + u.loss_sum, c + u.loss_count));
        self.round = round;
        Ok(RoundMetrics {
            round,
            accuracy: eval.accuracy,
            loss: eval.loss,
            density: self.density(),
            nnz_before,
            nnz_after,
            clients: sampled,
            train_loss: if loss_count > 0 { loss_sum / loss_count as f64 } else { 0.0 },
            lr,
            targeted,
            pruning_numbers,
            clamped_layers,
            grown,
            dropped: grown,
            filled,
            buffer_capacity,
            buffer_peak,
            buffer_violations,
            peak_flops: cost.0,
            memory_bytes: cost.1,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Largest per-client peak FLOPs and memory footprint this round.
    fn round_costs(
        &self,
        sampled: &[usize],
        updates: &[ClientUpdate],
        request: Option<&TopkRequest>,
    ) -> Result<(f64, f64)> {
        let cfg = &self.cfg;
        let model = cfg.algorithm.cost_model();
        let bits = cfg.train.bits;
        let mask = self.mask.as_ref();
        let dense_bytes = self.net.param_count() as f64 * f64::from(bits) / 8.0;
        let sparse_bytes = model_storage(&self.net, mask, bits)?.bytes;
        let targeted: Vec<usize> = request.map_or(Vec::new(), |r| r.layers.iter().map(|l| l.0).collect());
        let topk_entries: usize = request.map_or(0, |r| r.layers.iter().map(|l| l.1).sum());
        let (mut flops, mut memory) = (0.0f64, 0.0f64);
        for (&k, u) in sampled.iter().zip(updates) {
            let n = self.fed.clients[k].len();
            let f_d = forward_flops(&self.net, None, n);
            let f_s = forward_flops(&self.net, mask, n);
            let extra = extra_block_flops(&self.net, &targeted, cfg.train.batch_size.min(n));
            flops = flops.max(round_peak_flops(model, f_d, f_s, cfg.train.local_epochs, extra));
            let act = u.activation_elems as f64 * f64::from(bits) / 8.0;
            let mem = training_memory(model, dense_bytes, sparse_bytes, act, bits, topk_entries);
            memory = memory.max(mem.total);
        }
        Ok((flops, memory))
    }
}

/// Everything a finished run produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub selection: Option<SelectionSummary>,
    pub pretrain_losses: Vec<f64>,
    pub initial: Evaluation,
    pub rounds: Vec<RoundMetrics>,
    pub network: Network,
    pub mask: Option<Mask>,
}

impl ExperimentOutcome {
    pub fn final_accuracy(&self) -> f64 {
        self.rounds.last().map_or(self.initial.accuracy, |m| m.accuracy)
    }
}

/// Runs all configured rounds, handing each round's metrics to `on_round`
/// as soon as it completes.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    mut on_round: impl FnMut(&RoundMetrics) -> Result<()>,
) -> Result<ExperimentOutcome> {
    let mut sim = Simulation::new(cfg.clone())?;
    let initial = sim.evaluate()?;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let m = sim.step()?;
        on_round(&m)?;
        rounds.push(m);
    }
    Ok(ExperimentOutcome {
        config: cfg.clone(),
        selection: sim.selection.clone(),
        pretrain_losses: sim.pretrain_losses.clone(),
        initial,
        rounds,
        network: sim.net,
        mask: sim.mask,
    })
}
