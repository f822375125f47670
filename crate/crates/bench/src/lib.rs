//! Benchmark fixtures shared by the criterion targets.

use sparsefed_core::masking::{prunable_shapes, random_mask};
use sparsefed_core::{Mask, MlpSpec, Network, Tensor};

/// A BN MLP with hidden widths `hidden` on 32 inputs and 10 classes.
pub fn network(hidden: &[usize]) -> Network {
    let spec = MlpSpec {
        input: 32,
        hidden: hidden.to_vec(),
        classes: 10,
        ..MlpSpec::default()
    };
    Network::mlp(&spec, 7).expect("valid spec")
}

pub fn mask(net: &Network, density: f64) -> Mask {
    random_mask(&prunable_shapes(net), density, 11).expect("valid density")
}

/// Deterministic pseudo-random batch.
pub fn batch(rows: usize, cols: usize, classes: usize) -> (Tensor, Vec<usize>) {
    let data: Vec<f64> = (0..rows * cols)
        .map(|i| ((i as f64 * 0.618_034).fract() - 0.5) * 2.0)
        .collect();
    let labels = (0..rows).map(|i| (i * 7) % classes).collect();
    (Tensor::new(vec![rows, cols], data).expect("shape"), labels)
}
