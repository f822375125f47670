//! Batch normalization over feature columns.
//!
//! Training batches are normalized with their own mean and biased variance;
//! the moving statistics follow `stat ← momentum·stat + (1 − momentum)·batch`.
//! Evaluation uses the stored moving statistics and leaves them untouched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Moving statistics and affine parameters of one batch-normalization layer.
///
/// `momentum` is the weight kept on the old statistic in the moving update;
/// `scale` and `shift` are the learned affine parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnState {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub scale: Tensor,
    pub shift: Tensor,
}

/// Mean and variance of one BN layer, as carried in reports and aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnState {
    pub fn new(features: usize, momentum: f64, eps: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "BN momentum must lie in (0, 1), got {momentum}"
            )));
        }
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::InvalidArgument(format!("BN epsilon must be positive, got {eps}")));
        }
        let mut scale = Tensor::zeros(vec![features]);
        scale.data_mut().fill(1.0);
        Ok(Self {
            mean: vec![0.0; features],
            var: vec![1.0; features],
            momentum,
            eps,
            scale,
            shift: Tensor::zeros(vec![features]),
        })
    }

    pub fn features(&self) -> usize {
        self.mean.len()
    }

    pub fn stats(&self) -> BnStats {
        BnStats {
            mean: self.mean.clone(),
            var: self.var.clone(),
        }
    }

    pub fn install(&mut self, stats: &BnStats) -> Result<()> {
        let f = self.features();
        if stats.mean.len() != f || stats.var.len() != f {
            return Err(Error::ShapeMismatch {
                expected: vec![f],
                actual: vec![stats.mean.len(), stats.var.len()],
            });
        }
        if stats.var.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidArgument("negative BN variance".into()));
        }
        self.mean.clone_from(&stats.mean);
        self.var.clone_from(&stats.var);
        Ok(())
    }

    pub(crate) fn update_moving(&mut self, batch: &BnStats) {
        let g = self.momentum;
        for (m, b) in self.mean.iter_mut().zip(&batch.mean) {
            *m = g * *m + (1.0 - g) * b;
        }
        for (v, b) in self.var.iter_mut().zip(&batch.var) {
            *v = (g * *v + (1.0 - g) * b).max(0.0);
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    pub x_hat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub batch_stats: bool,
}

/// Normalizes `x` (`batch × features`). Returns output, cache, and the batch
/// statistics when they were used.
pub(crate) fn bn_forward(
    state: &BnState,
    x: &[f64],
    batch: usize,
    use_batch_stats: bool,
) -> (Vec<f64>, BnCache, Option<BnStats>) {
    let f = state.features();
    let (mean, var, batch_stats) = if use_batch_stats {
        let mut mean = vec![0.0; f];
        for row in x.chunks_exact(f) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let inv_b = 1.0 / batch as f64;
        mean.iter_mut().for_each(|m| *m *= inv_b);
        let mut var = vec![0.0; f];
        for row in x.chunks_exact(f) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        var.iter_mut().for_each(|s| *s *= inv_b);
        let stats = BnStats {
            mean: mean.clone(),
            var: var.clone(),
        };
        (mean, var, Some(stats))
    } else {
        (state.mean.clone(), state.var.clone(), None)
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
    let scale = state.scale.data();
    let shift = state.shift.data();
    let mut x_hat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for ((xr, hr), yr) in x
        .chunks_exact(f)
        .zip(x_hat.chunks_exact_mut(f))
        .zip(y.chunks_exact_mut(f))
    {
        for j in 0..f {
            let h = (xr[j] - mean[j]) * inv_std[j];
            hr[j] = h;
            yr[j] = scale[j] * h + shift[j];
        }
    }
    (
        y,
        BnCache {
            x_hat,
            inv_std,
            batch_stats: batch_stats.is_some(),
        },
        batch_stats,
    )
}

pub(crate) struct BnGrads {
    pub dscale: Vec<f64>,
    pub dshift: Vec<f64>,
    pub dx: Vec<f64>,
}

pub(crate) fn bn_backward(state: &BnState, cache: &BnCache, dy: &[f64], batch: usize) -> BnGrads {
    let f = state.features();
    let scale = state.scale.data();
    let mut dscale = vec![0.0; f];
    let mut dshift = vec![0.0; f];
    for (gr, hr) in dy.chunks_exact(f).zip(cache.x_hat.chunks_exact(f)) {
        for j in 0..f {
            dshift[j] += gr[j];
            dscale[j] += gr[j] * hr[j];
        }
    }
    let mut dx = vec![0.0; dy.len()];
    if cache.batch_stats {
        // dx = inv_std/B · (B·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)), with dx̂ = dy·scale.
        let b = batch as f64;
        for (dxr, (gr, hr)) in dx
            .chunks_exact_mut(f)
            .zip(dy.chunks_exact(f).zip(cache.x_hat.chunks_exact(f)))
        {
            for j in 0..f {
                let sum_dxhat = dshift[j] * scale[j];
                let sum_dxhat_xhat = dscale[j] * scale[j];
                let dxhat = gr[j] * scale[j];
                dxr[j] = cache.inv_std[j] / b * (b * dxhat - sum_dxhat - hr[j] * sum_dxhat_xhat);
            }
        }
    } else {
        for (dxr, gr) in dx.chunks_exact_mut(f).zip(dy.chunks_exact(f)) {
            for j in 0..f {
                dxr[j] = gr[j] * scale[j] * cache.inv_std[j];
            }
        }
    }
    BnGrads { dscale, dshift, dx }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_mean_update() {
        let mut s = BnState::new(1, 0.9, 1e-5).unwrap();
        let (_, _, stats) = bn_forward(&s, &[2.0, 4.0], 2, true);
        s.update_moving(&stats.unwrap());
        assert!((s.mean[0] - 0.3).abs() < 1e-15);
        // biased batch variance is 1; 0.9·1 + 0.1·1
        assert!((s.var[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(BnState::new(2, 1.0, 1e-5).is_err());
        assert!(BnState::new(2, 0.9, 0.0).is_err());
    }

    #[test]
    fn eval_normalization_uses_stored_statistics() {
        let mut s = BnState::new(1, 0.9, 1e-300).unwrap();
        s.mean[0] = 1.0;
        s.var[0] = 4.0;
        let (y, _, stats) = bn_forward(&s, &[5.0], 1, false);
        assert!(stats.is_none());
        assert!((y[0] - 2.0).abs() < 1e-12);
    }
}
