//! Coarse pruning: per-layer magnitude masks, random masks, and candidate
//! pools whose layer-wise densities are the target density plus uniform
//! noise.
//!
//! Kept counts are always `⌈d·n⌉` for a requested density `d` on a tensor of
//! `n` entries. Ties in magnitude keep the lower flat index.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{LayerMask, Mask};
use crate::net::Network;
use crate::rng::{self, stream};
use crate::tensor::Tensor;

/// `⌈d·n⌉`, tolerant of products that land a rounding error above an integer.
pub fn keep_count(density: f64, n: usize) -> usize {
    let x = density * n as f64;
    ((x - 1e-9 * x.abs().max(1.0)).ceil().max(0.0) as usize).min(n)
}

/// Fraction of kept prune-eligible weights.
pub fn density(mask: &Mask) -> f64 {
    let total = mask.total();
    if total == 0 {
        return 0.0;
    }
    mask.nnz() as f64 / total as f64
}

/// Indices of the `k` largest-magnitude entries; ties keep the lower index.
pub fn top_magnitude_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        values[b]
            .abs()
            .total_cmp(&values[a].abs())
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Keeps the `⌈d·n⌉` largest-magnitude weights of one tensor.
pub fn magnitude_prune_layer(weights: &Tensor, density: f64) -> Result<Vec<bool>> {
    check_density(density)?;
    let k = keep_count(density, weights.len());
    let mut bits = vec![false; weights.len()];
    for i in top_magnitude_indices(weights.data(), k) {
        bits[i] = true;
    }
    Ok(bits)
}

fn check_density(d: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::InvalidArgument(format!("density must lie in [0, 1], got {d}")));
    }
    Ok(())
}

/// Magnitude-prunes every prune-eligible layer of `net` at its own density.
pub fn magnitude_mask(net: &Network, layer_densities: &[f64]) -> Result<Mask> {
    let layers = net.prunable_layers();
    if layers.len() != layer_densities.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![layers.len()],
            actual: vec![layer_densities.len()],
        });
    }
    let masks = layers
        .iter()
        .zip(layer_densities)
        .map(|(&l, &d)| {
            let w = &net.linear(l).expect("prunable layers are linear").weight;
            LayerMask::new(l, w.shape().to_vec(), magnitude_prune_layer(w, d)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Mask::new(masks)
}

/// Uniformly random support of `⌈d·n^l⌉` entries in each layer.
pub fn random_mask(layers: &[(usize, Vec<usize>)], density: f64, seed: u64) -> Result<Mask> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidArgument(format!("density must lie in (0, 1], got {density}")));
    }
    random_mask_per_layer(layers, &vec![density; layers.len()], seed)
}

pub fn random_mask_per_layer(
    layers: &[(usize, Vec<usize>)],
    densities: &[f64],
    seed: u64,
) -> Result<Mask> {
    let masks = layers
        .iter()
        .zip(densities)
        .map(|((layer, shape), &d)| {
            check_density(d)?;
            let n: usize = shape.iter().product();
            let k = keep_count(d, n);
            let mut r = rng::rng_for(seed, &[stream::MASK, *layer as u64]);
            let mut bits = vec![false; n];
            for i in index::sample(&mut r, n, k) {
                bits[i] = true;
            }
            LayerMask::new(*layer, shape.clone(), bits)
        })
        .collect::<Result<Vec<_>>>()?;
    Mask::new(masks)
}

/// Prune-eligible layer indices and weight shapes of `net`.
pub fn prunable_shapes(net: &Network) -> Vec<(usize, Vec<usize>)> {
    net.prunable_layers()
        .into_iter()
        .map(|l| (l, net.linear(l).unwrap().weight.shape().to_vec()))
        .collect()
}

/// Largest uniform per-layer densities whose `⌈d·n^l⌉` counts keep the total
/// density at or below `target`.
pub fn feasible_uniform_densities(sizes: &[usize], target: f64) -> Vec<f64> {
    let mut d: Vec<f64> = vec![target; sizes.len()];
    let total: usize = sizes.iter().sum();
    if total_density(sizes, &d) <= target {
        return d;
    }
    // Round each layer down to a whole count.
    for (di, &n) in d.iter_mut().zip(sizes) {
        *di = (target * n as f64 + 1e-9).floor() / n as f64;
    }
    debug_assert!(total > 0 && total_density(sizes, &d) <= target);
    d
}

fn total_density(sizes: &[usize], d: &[f64]) -> f64 {
    let kept: usize = sizes.iter().zip(d).map(|(&n, &di)| keep_count(di, n)).sum();
    kept as f64 / sizes.iter().sum::<usize>() as f64
}

/// One coarse-pruned model: its requested layer-wise densities and mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: usize,
    pub layer_densities: Vec<f64>,
    pub mask: Mask,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolOptions {
    /// Noise half-width as a fraction of the target density.
    pub noise: f64,
    /// Minimum survivors per layer; the floor density is `min_survivors / n^l`.
    pub min_survivors: usize,
    /// Draws per candidate before falling back to proportional rescaling.
    pub max_attempts: usize,
    pub rescale_fallback: bool,
}

impl Default for PoolOptions {
    fn default() -> Self {
        Self {
            noise: 0.5,
            min_survivors: 10,
            max_attempts: 100,
            rescale_fallback: true,
        }
    }
}

/// Builds `count` candidates from the dense weights of `net`.
///
/// Each draw sets `d^l = clamp(target + e^l, d_min^l, 1)` with
/// `e^l ~ U[−noise·target, +noise·target]` and is accepted only if the
/// resulting total density is at most `target`. A candidate that exhausts
/// its draws rescales its last draw proportionally until it fits.
pub fn generate_candidate_pool(
    net: &Network,
    target: f64,
    count: usize,
    opts: &PoolOptions,
    seed: u64,
) -> Result<Vec<Candidate>> {
    if count == 0 {
        return Err(Error::InvalidArgument("candidate pool size must be at least 1".into()));
    }
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target density must lie in (0, 1], got {target}"
        )));
    }
    if !(opts.noise >= 0.0) {
        return Err(Error::InvalidArgument("noise scale must be non-negative".into()));
    }
    let shapes = prunable_shapes(net);
    let sizes: Vec<usize> = shapes.iter().map(|(_, s)| s.iter().product()).collect();
    let floors: Vec<f64> = sizes
        .iter()
        .map(|&n| (opts.min_survivors as f64 / n as f64).min(1.0))
        .collect();
    let half_width = opts.noise * target;
    let mut r = rng::rng_for(seed, &[stream::POOL]);
    let mut pool = Vec::with_capacity(count);
    for id in 0..count {
        let mut accepted = None;
        let mut last = Vec::new();
        for _ in 0..opts.max_attempts.max(1) {
            let draw: Vec<f64> = floors
                .iter()
                .map(|&lo| {
                    let e = if half_width > 0.0 {
                        r.random_range(-half_width..=half_width)
                    } else {
                        0.0
                    };
                    (target + e).clamp(lo, 1.0)
                })
                .collect();
            if total_density(&sizes, &draw) <= target {
                accepted = Some(draw);
                break;
            }
            last = draw;
        }
        let densities = match accepted {
            Some(d) => d,
            None if opts.rescale_fallback => rescale_to_fit(&sizes, &floors, last, target)?,
            None => {
                return Err(Error::CandidateBudget {
                    target,
                    attempts: opts.max_attempts,
                })
            }
        };
        let mask = magnitude_mask(net, &densities)?;
        let d = density(&mask);
        debug_assert!(d <= target);
        pool.push(Candidate {
            id,
            layer_densities: densities,
            mask,
            density: d,
        });
    }
    Ok(pool)
}

fn rescale_to_fit(sizes: &[usize], floors: &[f64], draw: Vec<f64>, target: f64) -> Result<Vec<f64>> {
    let realized = total_density(sizes, &draw);
    let mut factor = target / realized;
    for _ in 0..10_000 {
        let d: Vec<f64> = draw
            .iter()
            .zip(floors)
            .map(|(&di, &lo)| (di * factor).clamp(lo, 1.0))
            .collect();
        if total_density(sizes, &d) <= target {
            return Ok(d);
        }
        factor *= 1.0 - 1e-4;
    }
    Err(Error::CandidateBudget {
        target,
        attempts: 10_000,
    })
}
