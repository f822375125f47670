//! Binary masks over prune-eligible weight tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mask for one weight tensor. `true` means the coordinate is kept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMask {
    pub layer: usize,
    pub shape: Vec<usize>,
    bits: Vec<bool>,
}

impl LayerMask {
    pub fn new(layer: usize, shape: Vec<usize>, bits: Vec<bool>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != bits.len() {
            return Err(Error::BadTensor {
                shape,
                expected: n,
                actual: bits.len(),
            });
        }
        Ok(Self { layer, shape, bits })
    }

    pub fn ones(layer: usize, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            layer,
            shape,
            bits: vec![true; n],
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn density(&self) -> f64 {
        self.nnz() as f64 / self.len() as f64
    }

    pub fn pruned_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| !b)
            .map(|(i, _)| i)
    }
}

/// Masks for every prune-eligible tensor, ordered by layer index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    layers: Vec<LayerMask>,
}

impl Mask {
    pub fn new(mut layers: Vec<LayerMask>) -> Result<Self> {
        layers.sort_by_key(|l| l.layer);
        if layers.windows(2).any(|w| w[0].layer == w[1].layer) {
            return Err(Error::InvalidArgument("duplicate layer in mask".into()));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[LayerMask] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerMask] {
        &mut self.layers
    }

    pub fn get(&self, layer: usize) -> Option<&LayerMask> {
        self.layers
            .binary_search_by_key(&layer, |l| l.layer)
            .ok()
            .map(|i| &self.layers[i])
    }

    pub fn get_mut(&mut self, layer: usize) -> Option<&mut LayerMask> {
        self.layers
            .binary_search_by_key(&layer, |l| l.layer)
            .ok()
            .map(move |i| &mut self.layers[i])
    }

    pub fn nnz(&self) -> usize {
        self.layers.iter().map(LayerMask::nnz).sum()
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(LayerMask::len).sum()
    }

    /// Per-layer kept counts, in layer order.
    pub fn layer_counts(&self) -> Vec<usize> {
        self.layers.iter().map(LayerMask::nnz).collect()
    }
}

/// Row-compressed support of a masked 2-D weight, used to skip pruned
/// coordinates in the linear kernels.
#[derive(Debug, Clone)]
pub(crate) struct RowSupport {
    pub offsets: Vec<usize>,
    pub cols: Vec<u32>,
}

impl RowSupport {
    fn from_mask(mask: &LayerMask) -> Self {
        let rows = mask.shape[0];
        let cols_n: usize = mask.shape[1..].iter().product();
        let mut offsets = Vec::with_capacity(rows + 1);
        let mut cols = Vec::with_capacity(mask.nnz());
        offsets.push(0);
        for r in 0..rows {
            for c in 0..cols_n {
                if mask.bits[r * cols_n + c] {
                    cols.push(c as u32);
                }
            }
            offsets.push(cols.len());
        }
        Self { offsets, cols }
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.cols[self.offsets[r]..self.offsets[r + 1]]
    }
}

/// Sparse execution plan derived from a [`Mask`].
///
/// Layers present in the layout run sparse kernels and produce weight
/// gradients only on their support, which equals `grad ⊙ mask`. Layers
/// absent from the layout run dense.
#[derive(Debug, Clone, Default)]
pub struct SparseLayout {
    pub(crate) rows: Vec<Option<RowSupport>>,
}

impl SparseLayout {
    pub fn from_mask(mask: &Mask) -> Self {
        Self::from_mask_except(mask, &[])
    }

    /// Like [`SparseLayout::from_mask`] but leaves `dense_layers` dense, so
    /// their weight gradients are computed for every coordinate.
    pub fn from_mask_except(mask: &Mask, dense_layers: &[usize]) -> Self {
        let len = mask.layers.last().map_or(0, |l| l.layer + 1);
        let mut rows = vec![None; len];
        for lm in &mask.layers {
            if !dense_layers.contains(&lm.layer) {
                rows[lm.layer] = Some(RowSupport::from_mask(lm));
            }
        }
        Self { rows }
    }

    pub(crate) fn get(&self, layer: usize) -> Option<&RowSupport> {
        self.rows.get(layer).and_then(Option::as_ref)
    }
}
