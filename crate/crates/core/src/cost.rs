//! Storage, training-memory, and FLOPs accounting.
//!
//! Storage is counted in bits and picks a compression scheme per tensor from
//! its density. Memory footprints are in bytes. FLOPs count multiply and add
//! separately; BN and the loss are free.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::net::{Layer, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionScheme {
    Dense,
    Bitmap,
    Coo,
    /// Compressed rows or compressed columns, whichever is cheaper.
    CsrCsc,
}

impl fmt::Display for CompressionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dense => "dense",
            Self::Bitmap => "bitmap",
            Self::Coo => "coo",
            Self::CsrCsc => "csr_csc",
        })
    }
}

/// Which axis a compressed-sparse layout indexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Row,
    Column,
}

/// Dense on `[0.9, 1]`, bitmap on `[0.3, 0.9)`, COO on `[0.1, 0.3)`,
/// compressed rows/columns on `[0, 0.1)`.
pub fn choose_scheme(density: f64) -> Result<CompressionScheme> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::InvalidArgument(format!("density {density} outside [0, 1]")));
    }
    Ok(if density >= 0.9 {
        CompressionScheme::Dense
    } else if density >= 0.3 {
        CompressionScheme::Bitmap
    } else if density >= 0.1 {
        CompressionScheme::Coo
    } else {
        CompressionScheme::CsrCsc
    })
}

/// `⌈log₂ x⌉`, taken as 0 for `x ≤ 1`.
pub fn ceil_log2(x: usize) -> u64 {
    if x <= 1 {
        0
    } else {
        u64::from(usize::BITS - (x - 1).leading_zeros())
    }
}

/// Storage of one tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageEntry {
    pub scheme: CompressionScheme,
    pub orientation: Option<Orientation>,
    /// Bits spent on positions (`o`).
    pub position_bits: u64,
    /// Total bits (`s`).
    pub bits: u64,
}

/// Bits to store an `n_r × n_c` tensor with `m` nonzeros at `b` bits each.
///
/// With `m = 0` only the position structure remains; with the `⌈log₂ m⌉ = 0`
/// convention that is zero bits for the compressed layouts.
pub fn storage_bits(n_r: usize, n_c: usize, m: usize, b: u32) -> Result<StorageEntry> {
    let n = n_r * n_c;
    if n == 0 || m > n || b == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot store {m} of {n_r}x{n_c} values at {b} bits"
        )));
    }
    let (n64, m64, b64) = (n as u64, m as u64, u64::from(b));
    let scheme = choose_scheme(m as f64 / n as f64)?;
    let (position_bits, orientation) = match scheme {
        CompressionScheme::Dense => {
            return Ok(StorageEntry {
                scheme,
                orientation: None,
                position_bits: 0,
                bits: n64 * b64,
            })
        }
        CompressionScheme::Bitmap => (n64, None),
        CompressionScheme::Coo => (m64 * ceil_log2(n), None),
        CompressionScheme::CsrCsc => {
            let csr = m64 * ceil_log2(n_c) + n_r as u64 * ceil_log2(m);
            let csc = m64 * ceil_log2(n_r) + n_c as u64 * ceil_log2(m);
            if csc < csr {
                (csc, Some(Orientation::Column))
            } else {
                (csr, Some(Orientation::Row))
            }
        }
    };
    Ok(StorageEntry {
        scheme,
        orientation,
        position_bits,
        bits: position_bits + m64 * b64,
    })
}

/// Views a shape as a matrix. The two longest extents (first occurrence on
/// ties) become columns and rows; any other extents multiply the row count.
pub fn matrix_dims(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => {
            let mut order: Vec<usize> = (0..shape.len()).collect();
            order.sort_by(|&a, &b| shape[b].cmp(&shape[a]).then(a.cmp(&b)));
            let (i, j) = (order[0].min(order[1]), order[0].max(order[1]));
            let rest: usize = shape
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != i && k != j)
                .map(|(_, &e)| e)
                .product();
            (shape[i] * rest, shape[j])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorStorage {
    pub layer: usize,
    pub name: String,
    pub shape: Vec<usize>,
    pub nnz: usize,
    pub scheme: CompressionScheme,
    pub orientation: Option<Orientation>,
    pub position_bits: u64,
    pub bits: u64,
    pub bytes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    pub tensors: Vec<TensorStorage>,
    pub bits: u64,
    pub bytes: f64,
}

impl StorageReport {
    pub fn megabytes(&self) -> f64 {
        self.bytes / 1e6
    }
}

/// Storage of every trainable tensor. Masked weights count the mask's kept
/// coordinates as nonzeros; all other tensors are fully dense.
pub fn model_storage(net: &Network, mask: Option<&Mask>, b: u32) -> Result<StorageReport> {
    if let Some(m) = mask {
        net.check_mask(m)?;
    }
    let mut tensors = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        let named: Vec<(&str, &crate::tensor::Tensor)> = match layer {
            Layer::Linear(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::BatchNorm(s) => vec![("scale", &s.scale), ("shift", &s.shift)],
            Layer::Relu => continue,
        };
        for (name, t) in named {
            let nnz = match (name, mask.and_then(|m| m.get(i))) {
                ("weight", Some(lm)) => lm.nnz(),
                _ => t.len(),
            };
            let (n_r, n_c) = matrix_dims(t.shape());
            let e = storage_bits(n_r, n_c, nnz, b)?;
            tensors.push(TensorStorage {
                layer: i,
                name: name.to_string(),
                shape: t.shape().to_vec(),
                nnz,
                scheme: e.scheme,
                orientation: e.orientation,
                position_bits: e.position_bits,
                bits: e.bits,
                bytes: e.bits as f64 / 8.0,
            });
        }
    }
    let bits = tensors.iter().map(|t| t.bits).sum();
    Ok(StorageReport {
        tensors,
        bits,
        bytes: bits as f64 / 8.0,
    })
}

/// Forward FLOPs for a batch of `batch` rows: `2·m·B` per linear layer with
/// `m` kept weights, `B·width` per activation.
pub fn forward_flops(net: &Network, mask: Option<&Mask>, batch: usize) -> f64 {
    let b = batch as f64;
    let mut width = net.input_dim();
    let mut total = 0.0;
    for (i, layer) in net.layers().iter().enumerate() {
        match layer {
            Layer::Linear(l) => {
                let m = mask
                    .and_then(|m| m.get(i))
                    .map_or(l.weight.len(), |lm| lm.nnz());
                total += 2.0 * m as f64 * b;
                width = l.out_features();
            }
            Layer::Relu => total += b * width as f64,
            Layer::BatchNorm(_) => {}
        }
    }
    total
}

/// Dense weight-gradient cost of `layers` for one batch: `2·n^l·B` each.
pub fn extra_block_flops(net: &Network, layers: &[usize], batch: usize) -> f64 {
    layers
        .iter()
        .filter_map(|&l| net.linear(l))
        .map(|l| 2.0 * l.weight.len() as f64 * batch as f64)
        .sum()
}

/// Activation bytes held by one training forward pass over `batch` rows.
pub fn activation_bytes(net: &Network, batch: usize, b: u32) -> Result<f64> {
    let x = crate::tensor::Tensor::zeros(vec![batch.max(2), net.input_dim()]);
    let (out, cache) = net.forward_pure(&x, crate::net::Mode::Train, None)?;
    let per_row = cache.activation_elements(&out) as f64 / batch.max(2) as f64;
    Ok(per_row * batch as f64 * f64::from(b) / 8.0)
}

/// Training-cost family of an algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostModel {
    /// Dense training of every parameter.
    Dense,
    /// Training under a fixed sparse mask.
    StaticSparse,
    /// Sparse forward with dense backward.
    #[serde(rename = "prunefl")]
    PruneFl,
    /// Sparse training plus top-K growth on the targeted layers.
    #[serde(rename = "fedtiny")]
    FedTiny,
}

impl FromStr for CostModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Self::Dense),
            "static_sparse" => Ok(Self::StaticSparse),
            "prunefl" => Ok(Self::PruneFl),
            "fedtiny" => Ok(Self::FedTiny),
            _ => Err(Error::UnknownAlgorithm(s.to_string())),
        }
    }
}

/// Per-round peak FLOPs. `extra` is only added for [`CostModel::FedTiny`].
pub fn round_peak_flops(model: CostModel, f_dense: f64, f_sparse: f64, epochs: usize, extra: f64) -> f64 {
    let e = epochs as f64;
    match model {
        CostModel::Dense => 3.0 * f_dense * e,
        CostModel::StaticSparse => 3.0 * f_sparse * e,
        CostModel::PruneFl => (2.0 * f_sparse + f_dense) * e,
        CostModel::FedTiny => 3.0 * f_sparse * e + extra,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub model: CostModel,
    pub param_dense: f64,
    pub param_sparse: f64,
    pub activation: f64,
    pub topk_entries: usize,
    pub total: f64,
}

/// Training footprint in bytes. Parameter and activation inputs are in
/// bytes, `b` is bits per value, and `topk_entries` is `Σ_l a^l_t`; each
/// buffered entry costs three values.
pub fn training_memory(
    model: CostModel,
    param_dense: f64,
    param_sparse: f64,
    activation: f64,
    b: u32,
    topk_entries: usize,
) -> MemoryReport {
    let total = match model {
        CostModel::Dense => 2.0 * param_dense + 2.0 * activation,
        CostModel::StaticSparse => 2.0 * param_sparse + 2.0 * activation,
        CostModel::PruneFl => param_dense + param_sparse + 2.0 * activation,
        CostModel::FedTiny => {
            2.0 * param_sparse + 2.0 * activation + 3.0 * f64::from(b) * topk_entries as f64 / 8.0
        }
    };
    MemoryReport {
        model,
        param_dense,
        param_sparse,
        activation,
        topk_entries,
        total,
    }
}

/// Forward FLOPs of the dense and masked model and the resulting peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub model: CostModel,
    /// Dense forward FLOPs over one epoch of `samples` rows (`F_d`).
    pub f_dense: f64,
    /// Sparse forward FLOPs over the same rows (`F_s`).
    pub f_sparse: f64,
    pub samples: usize,
    pub epochs: usize,
    pub extra: f64,
    pub peak: f64,
}

pub fn flops_report(
    net: &Network,
    mask: Option<&Mask>,
    model: CostModel,
    samples: usize,
    epochs: usize,
    extra: f64,
) -> FlopsReport {
    let f_dense = forward_flops(net, None, samples);
    let f_sparse = forward_flops(net, mask, samples);
    FlopsReport {
        model,
        f_dense,
        f_sparse,
        samples,
        epochs,
        extra,
        peak: round_peak_flops(model, f_dense, f_sparse, epochs, extra),
    }
}

/// Serialized cost summary of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub model: CostModel,
    pub tensors: Vec<TensorStorage>,
    pub bits: u64,
    pub bytes: f64,
    pub flops_peak: f64,
    pub memory_total: f64,
    pub flops: FlopsReport,
    pub memory: MemoryReport,
}

/// Inputs that cannot be read off the network itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostInputs {
    pub model: CostModel,
    pub bits: u32,
    /// Rows processed per local epoch (`|D_k|`).
    pub samples: usize,
    pub epochs: usize,
    pub activation_bytes: f64,
    pub extra_flops: f64,
    pub topk_entries: usize,
}

/// Storage, peak FLOPs, and memory of `net` under `mask`.
pub fn cost_record(net: &Network, mask: Option<&Mask>, inputs: &CostInputs) -> Result<CostRecord> {
    let storage = model_storage(net, mask, inputs.bits)?;
    let dense_bytes = net.param_count() as f64 * f64::from(inputs.bits) / 8.0;
    let flops = flops_report(net, mask, inputs.model, inputs.samples, inputs.epochs, inputs.extra_flops);
    let mem = training_memory(
        inputs.model,
        dense_bytes,
        storage.bytes,
        inputs.activation_bytes,
        inputs.bits,
        inputs.topk_entries,
    );
    Ok(CostRecord {
        model: inputs.model,
        tensors: storage.tensors,
        bits: storage.bits,
        bytes: storage.bytes,
        flops_peak: flops.peak,
        memory_total: mem.total,
        flops,
        memory: mem,
    })
}
