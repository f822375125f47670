//! Progressive grow/prune adjustment of a sparse mask.
//!
//! Clients stream the gradients of pruned coordinates through a bounded
//! buffer that keeps only the `a` largest magnitudes. The server averages the
//! buffers, grows the `a` pruned coordinates with the largest aggregated
//! gradient, and drops the `a` kept coordinates with the smallest weight
//! magnitude, so per-layer nonzero counts stay fixed.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{LayerMask, Mask};
use crate::net::{Layer, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Layer,
    Block,
    Entire,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    Backward,
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSchedule {
    pub granularity: Granularity,
    pub order: Order,
    /// Rounds between two adjustments (ΔR).
    pub interval: usize,
    /// Last round that may adjust the mask.
    pub stop: usize,
    pub beta: f64,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        Self {
            granularity: Granularity::Block,
            order: Order::Backward,
            interval: 10,
            stop: 100,
            beta: 0.15,
        }
    }
}

impl PruneSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.interval == 0 || self.stop < self.interval {
            return Err(Error::InvalidPlan(format!(
                "need 0 < interval <= stop, got interval {} and stop {}",
                self.interval, self.stop
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidPlan(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        Ok(())
    }

    pub fn is_pruning_round(&self, round: usize) -> bool {
        round >= 1 && round.is_multiple_of(self.interval) && round <= self.stop
    }
}

/// `⌊β(1 + cos(tπ/(R_stop·E)))·n⌋`, zero past `t = R_stop·E`. Not capped.
pub fn raw_pruning_number(t: usize, schedule: &PruneSchedule, epochs: usize, unpruned: usize) -> usize {
    let horizon = (schedule.stop * epochs) as f64;
    if horizon == 0.0 || t as f64 > horizon {
        return 0;
    }
    let v = schedule.beta * (1.0 + (t as f64 * PI / horizon).cos()) * unpruned as f64;
    // A cosine that should be exactly 0 or -1 comes out a hair off.
    (v + 1e-9 * v.max(1.0)).floor() as usize
}

/// Pruning number for one layer, capped by its pruned and unpruned counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruningNumber {
    pub count: usize,
    pub clamped: bool,
}

pub fn pruning_number(
    targeted: bool,
    t: usize,
    schedule: &PruneSchedule,
    epochs: usize,
    unpruned: usize,
    pruned: usize,
) -> PruningNumber {
    if !targeted {
        return PruningNumber {
            count: 0,
            clamped: false,
        };
    }
    let raw = raw_pruning_number(t, schedule, epochs, unpruned);
    let cap = unpruned.min(pruned);
    PruningNumber {
        count: raw.min(cap),
        clamped: raw > cap,
    }
}

/// Layers adjusted in round `round` (1-based).
///
/// Block granularity cycles over blocks that contain at least one eligible
/// layer; layer granularity cycles over eligible layers.
pub fn target_layers(round: usize, schedule: &PruneSchedule, net: &Network) -> Vec<usize> {
    if !schedule.is_pruning_round(round) {
        return Vec::new();
    }
    let step = round / schedule.interval - 1;
    let eligible = net.prunable_layers();
    if eligible.is_empty() {
        return Vec::new();
    }
    let pick = |len: usize| match schedule.order {
        Order::Forward => step % len,
        Order::Backward => len - 1 - step % len,
    };
    match schedule.granularity {
        Granularity::Entire => eligible,
        Granularity::Layer => vec![eligible[pick(eligible.len())]],
        Granularity::Block => {
            let mut blocks: Vec<usize> = eligible.iter().map(|&l| net.block_of(l)).collect();
            blocks.dedup();
            let b = blocks[pick(blocks.len())];
            eligible.into_iter().filter(|&l| net.block_of(l) == b).collect()
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    index: usize,
    value: f64,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// "Greater" means "ranks lower": smaller magnitude, then larger index.
// The max-heap therefore keeps the next entry to evict on top.
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .value
            .abs()
            .total_cmp(&self.value.abs())
            .then(self.index.cmp(&other.index))
    }
}

/// Bounded store of the `capacity` largest-magnitude values pushed into it.
/// Ties in magnitude favor the lower index.
#[derive(Debug, Clone)]
pub struct TopKBuffer {
    capacity: usize,
    heap: BinaryHeap<Entry>,
    peak: usize,
    seen: usize,
}

impl TopKBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            heap: BinaryHeap::with_capacity(capacity),
            peak: 0,
            seen: 0,
        }
    }

    pub fn push(&mut self, index: usize, value: f64) {
        self.seen += 1;
        if self.capacity == 0 {
            return;
        }
        let e = Entry { index, value };
        if self.heap.len() < self.capacity {
            self.heap.push(e);
            self.peak = self.peak.max(self.heap.len());
        } else if let Some(mut worst) = self.heap.peek_mut() {
            if e < *worst {
                *worst = e;
            }
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Most entries ever held at once.
    pub fn peak(&self) -> usize {
        self.peak
    }

    /// Number of values offered.
    pub fn seen(&self) -> usize {
        self.seen
    }

    /// Entries by descending magnitude, ties by ascending index.
    pub fn entries(&self) -> Vec<(usize, f64)> {
        let mut v: Vec<Entry> = self.heap.iter().copied().collect();
        v.sort_unstable();
        v.into_iter().map(|e| (e.index, e.value)).collect()
    }
}

/// Streams the gradient of every pruned coordinate of one layer through a
/// buffer of capacity `a`.
pub fn topk_collect(grad: &[f64], mask: &LayerMask, a: usize) -> Result<TopKBuffer> {
    if grad.len() != mask.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![mask.len()],
            actual: vec![grad.len()],
        });
    }
    let mut buf = TopKBuffer::new(a);
    for i in mask.pruned_indices() {
        buf.push(i, grad[i]);
    }
    Ok(buf)
}

/// `Σ_k w_k · g̃_k` with `w_k = |D_k| / Σ|D_j|` over the union of reported
/// indices. Buffers are reduced in the given order.
pub fn aggregate_topk(buffers: &[(&TopKBuffer, usize)]) -> Result<BTreeMap<usize, f64>> {
    if buffers.is_empty() {
        return Err(Error::InvalidArgument("no buffers to aggregate".into()));
    }
    let total: usize = buffers.iter().map(|(_, w)| w).sum();
    if total == 0 {
        return Err(Error::InvalidArgument("buffer weights sum to zero".into()));
    }
    let mut out = BTreeMap::new();
    for (buf, w) in buffers {
        let w = *w as f64 / total as f64;
        for (i, g) in buf.entries() {
            *out.entry(i).or_insert(0.0) += w * g;
        }
    }
    Ok(out)
}

/// Grow and drop sets for one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub layer: usize,
    pub grow: Vec<usize>,
    pub drop: Vec<usize>,
    /// Grow slots filled with the lowest unreported pruned indices because
    /// clients reported too few gradients.
    pub filled: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowPrunePlan {
    pub layers: Vec<LayerPlan>,
}

impl GrowPrunePlan {
    pub fn total_grown(&self) -> usize {
        self.layers.iter().map(|l| l.grow.len()).sum()
    }
}

/// Top-`a` aggregated `|g̃|` among pruned coordinates and bottom-`a` `|θ|`
/// among unpruned ones. Ties go to the lower index on both sides.
pub fn plan_grow_prune(
    layer: usize,
    aggregated: &BTreeMap<usize, f64>,
    mask: &LayerMask,
    weights: &[f64],
    a: usize,
) -> Result<LayerPlan> {
    if weights.len() != mask.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![mask.len()],
            actual: vec![weights.len()],
        });
    }
    let bits = mask.bits();
    let unpruned = mask.nnz();
    let pruned = mask.len() - unpruned;
    if a > pruned.min(unpruned) {
        return Err(Error::InvalidPlan(format!(
            "layer {layer}: a = {a} exceeds min(pruned {pruned}, unpruned {unpruned})"
        )));
    }
    let mut candidates: Vec<(usize, f64)> = aggregated
        .iter()
        .filter(|(&i, _)| i < bits.len() && !bits[i])
        .map(|(&i, &g)| (i, g))
        .collect();
    candidates.sort_by(|x, y| y.1.abs().total_cmp(&x.1.abs()).then(x.0.cmp(&y.0)));
    let mut grow: Vec<usize> = candidates.iter().take(a).map(|c| c.0).collect();
    let mut filled = 0;
    if grow.len() < a {
        let mut chosen = vec![false; bits.len()];
        grow.iter().for_each(|&i| chosen[i] = true);
        for i in mask.pruned_indices() {
            if grow.len() == a {
                break;
            }
            if !chosen[i] {
                grow.push(i);
                filled += 1;
            }
        }
    }
    let mut keep: Vec<usize> = (0..bits.len()).filter(|&i| bits[i]).collect();
    keep.sort_by(|&x, &y| weights[x].abs().total_cmp(&weights[y].abs()).then(x.cmp(&y)));
    let drop = keep.into_iter().take(a).collect();
    Ok(LayerPlan {
        layer,
        grow,
        drop,
        filled,
    })
}

/// Flips the mask on the planned coordinates and zeroes grown and dropped
/// weights. Validates the whole plan before touching anything.
pub fn apply_plan(net: &mut Network, mask: &mut Mask, plan: &GrowPrunePlan) -> Result<()> {
    for lp in &plan.layers {
        let lm = mask
            .get(lp.layer)
            .ok_or_else(|| Error::InvalidPlan(format!("layer {} has no mask", lp.layer)))?;
        if lp.grow.len() != lp.drop.len() {
            return Err(Error::InvalidPlan(format!(
                "layer {}: grow and drop sizes differ",
                lp.layer
            )));
        }
        let bits = lm.bits();
        let mut seen = vec![false; bits.len()];
        for (&i, want) in lp.grow.iter().map(|i| (i, false)).chain(lp.drop.iter().map(|i| (i, true))) {
            if i >= bits.len() || bits[i] != want || seen[i] {
                return Err(Error::InvalidPlan(format!(
                    "layer {}: index {i} is inconsistent with the mask",
                    lp.layer
                )));
            }
            seen[i] = true;
        }
        match net.layers().get(lp.layer) {
            Some(Layer::Linear(l)) if l.weight.len() == bits.len() => {}
            _ => {
                return Err(Error::InvalidPlan(format!(
                    "layer {} is not a matching linear layer",
                    lp.layer
                )))
            }
        }
    }
    for lp in &plan.layers {
        let lm = mask.get_mut(lp.layer).expect("validated above");
        let Layer::Linear(lin) = &mut net.layers_mut()[lp.layer] else {
            unreachable!("validated above")
        };
        let w = lin.weight.data_mut();
        for &i in &lp.grow {
            lm.bits_mut()[i] = true;
            w[i] = 0.0;
        }
        for &i in &lp.drop {
            lm.bits_mut()[i] = false;
            w[i] = 0.0;
        }
    }
    Ok(())
}
