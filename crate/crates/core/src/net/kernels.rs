//! Linear-layer kernels over row-major batches.
//!
//! Weights are `out × in`; activations are `batch × features`.

use crate::mask::RowSupport;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn linear_forward(
    x: &[f64],
    batch: usize,
    w: &[f64],
    bias: &[f64],
    support: Option<&RowSupport>,
) -> Vec<f64> {
    let out = bias.len();
    let inp = w.len() / out;
    let mut y = vec![0.0; batch * out];
    for b in 0..batch {
        let xr = &x[b * inp..(b + 1) * inp];
        let yr = &mut y[b * out..(b + 1) * out];
        for o in 0..out {
            let wr = &w[o * inp..(o + 1) * inp];
            let s = match support {
                None => dot(xr, wr),
                Some(sup) => sup
                    .row(o)
                    .iter()
                    .map(|&c| wr[c as usize] * xr[c as usize])
                    .sum(),
            };
            yr[o] = bias[o] + s;
        }
    }
    y
}

pub(crate) struct LinearGrads {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
    pub dx: Option<Vec<f64>>,
}

/// Gradients of a linear layer. With a support, `dw` is zero off-support.
pub(crate) fn linear_backward(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    w: &[f64],
    out: usize,
    support: Option<&RowSupport>,
    need_dx: bool,
) -> LinearGrads {
    let inp = w.len() / out;
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; out];
    let mut dx = need_dx.then(|| vec![0.0; batch * inp]);
    for b in 0..batch {
        let xr = &x[b * inp..(b + 1) * inp];
        let gr = &dy[b * out..(b + 1) * out];
        for o in 0..out {
            let g = gr[o];
            db[o] += g;
            if g == 0.0 {
                continue;
            }
            let wr = &w[o * inp..(o + 1) * inp];
            let dwr = &mut dw[o * inp..(o + 1) * inp];
            match support {
                None => {
                    axpy(dwr, g, xr);
                    if let Some(dx) = dx.as_mut() {
                        axpy(&mut dx[b * inp..(b + 1) * inp], g, wr);
                    }
                }
                Some(sup) => {
                    let cols = sup.row(o);
                    for &c in cols {
                        dwr[c as usize] += g * xr[c as usize];
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dxr = &mut dx[b * inp..(b + 1) * inp];
                        for &c in cols {
                            dxr[c as usize] += g * wr[c as usize];
                        }
                    }
                }
            }
        }
    }
    LinearGrads { dw, db, dx }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{LayerMask, Mask, SparseLayout};

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn sparse_kernels_agree_with_dense_on_masked_weights() {
        let bits = vec![true, false, true, true, false, false];
        let w: Vec<f64> = vec![0.5, 0.0, -1.0, 2.0, 0.0, 0.0];
        let lm = LayerMask::new(0, vec![2, 3], bits.clone()).unwrap();
        let layout = SparseLayout::from_mask(&Mask::new(vec![lm]).unwrap());
        let sup = layout.get(0).unwrap();
        let x = vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0];
        let bias = vec![0.1, -0.2];
        let dense = linear_forward(&x, 2, &w, &bias, None);
        let sparse = linear_forward(&x, 2, &w, &bias, Some(sup));
        assert_eq!(dense, sparse);

        let dy = vec![0.3, -0.7, 1.1, 0.2];
        let gd = linear_backward(&x, &dy, 2, &w, 2, None, true);
        let gs = linear_backward(&x, &dy, 2, &w, 2, Some(sup), true);
        assert_eq!(gd.db, gs.db);
        assert_eq!(gd.dx, gs.dx);
        for (i, keep) in bits.iter().enumerate() {
            if *keep {
                assert_eq!(gd.dw[i], gs.dw[i]);
            } else {
                assert_eq!(gs.dw[i], 0.0);
            }
        }
    }
}
