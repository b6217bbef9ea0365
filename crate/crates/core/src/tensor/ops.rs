//! Forward kernels and their analytic backward passes.
//!
//! Every forward function has a `_backward` counterpart that maps the
//! gradient of the loss with respect to the output back onto the inputs.
//! The pairs are exercised against central finite differences in the tests;
//! see [`super::check`].

use rand::Rng;

use super::array::Array;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out[i,m] = sum_n x[i,n] * w[n,m] + b[m]`
pub fn linear(x: &Array, w: &Array, b: &Array) -> Array {
    let (l, n) = (x.dim(0), x.dim(1));
    assert_eq!(w.shape().len(), 2, "linear: w must be 2-d");
    assert_eq!(w.dim(0), n, "linear: x/w inner dims differ");
    let m = w.dim(1);
    assert_eq!(b.shape(), [m], "linear: bias length != output channels");

    let mut out = Array::zeros(&[l, m]);
    for i in 0..l {
        let xi = x.row(i);
        let oi = out.row_mut(i);
        oi.copy_from_slice(b.data());
        for (k, &xv) in xi.iter().enumerate() {
            let wr = w.row(k);
            for (o, &wv) in oi.iter_mut().zip(wr) {
                *o += xv * wv;
            }
        }
    }
    out
}

pub fn linear_backward(x: &Array, w: &Array, d_out: &Array) -> (Array, Array, Array) {
    let (l, n) = (x.dim(0), x.dim(1));
    let m = w.dim(1);
    assert_eq!(d_out.shape(), [l, m], "linear_backward: bad d_out shape");

    let mut dx = Array::zeros(&[l, n]);
    let mut dw = Array::zeros(&[n, m]);
    let mut db = Array::zeros(&[m]);
    for i in 0..l {
        let go = d_out.row(i);
        for (j, g) in go.iter().enumerate() {
            db.data_mut()[j] += g;
        }
        let xi = x.row(i);
        let dxi = dx.row_mut(i);
        for k in 0..n {
            let wr = w.row(k);
            let mut acc = 0.0;
            for j in 0..m {
                acc += wr[j] * go[j];
            }
            dxi[k] += acc;
            let dwr = dw.row_mut(k);
            let xv = xi[k];
            for j in 0..m {
                dwr[j] += xv * go[j];
            }
        }
    }
    (dx, dw, db)
}

/// Same-length 1-d convolution: zero rows are padded symmetrically so the
/// output has exactly as many positions as the input. Kernel width must be
/// odd; even widths are rejected earlier, at config validation.
///
/// `out[i,m] = b[m] + sum_{j,n} pad(x)[i+j,n] * w[j,n,m]`
pub fn conv1d_same(x: &Array, w: &Array, b: &Array) -> Array {
    let (l, n) = (x.dim(0), x.dim(1));
    assert_eq!(w.shape().len(), 3, "conv1d_same: w must be [k,N,M]");
    let (k, wn, m) = (w.dim(0), w.dim(1), w.dim(2));
    assert_eq!(wn, n, "conv1d_same: channel mismatch");
    assert!(k % 2 == 1, "conv1d_same: kernel width must be odd");
    assert_eq!(b.shape(), [m], "conv1d_same: bias length != output channels");
    let r = k / 2;

    let mut out = Array::zeros(&[l, m]);
    for i in 0..l {
        let oi = out.row_mut(i);
        oi.copy_from_slice(b.data());
        for j in 0..k {
            // Input row feeding tap j at output position i.
            let t = i + j;
            if t < r || t >= l + r {
                continue; // zero padding
            }
            let xr = x.row(t - r);
            for (c, &xv) in xr.iter().enumerate() {
                let base = (j * n + c) * m;
                let wrow = &w.data()[base..base + m];
                for (o, &wv) in oi.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        }
    }
    out
}

#[allow(clippy::needless_range_loop)]
pub fn conv1d_same_backward(x: &Array, w: &Array, d_out: &Array) -> (Array, Array, Array) {
    let (l, n) = (x.dim(0), x.dim(1));
    let (k, _, m) = (w.dim(0), w.dim(1), w.dim(2));
    assert_eq!(d_out.shape(), [l, m], "conv1d_same_backward: bad d_out shape");
    let r = k / 2;

    let mut dx = Array::zeros(&[l, n]);
    let mut dw = Array::zeros(&[k, n, m]);
    let mut db = Array::zeros(&[m]);

    for i in 0..l {
        let go = d_out.row(i);
        for (j, g) in go.iter().enumerate() {
            db.data_mut()[j] += g;
        }
        for j in 0..k {
            let t = i + j;
            if t < r || t >= l + r {
                continue;
            }
            let src = t - r;
            let xr = x.row(src);
            for c in 0..n {
                let base = (j * n + c) * m;
                let wrow = &w.data()[base..base + m];
                let mut acc = 0.0;
                for q in 0..m {
                    acc += wrow[q] * go[q];
                }
                dx.row_mut(src)[c] += acc;
                let xv = xr[c];
                let dwrow = &mut dw.data_mut()[base..base + m];
                for q in 0..m {
                    dwrow[q] += xv * go[q];
                }
            }
        }
    }
    (dx, dw, db)
}

/// Gated linear unit: `out = a * sigmoid(b)`, elementwise.
pub fn glu(a: &Array, b: &Array) -> Array {
    assert_eq!(a.shape(), b.shape(), "glu: shape mismatch");
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&av, &bv)| av * sigmoid(bv))
        .collect();
    Array::from_vec(a.shape(), data)
}

pub fn glu_backward(a: &Array, b: &Array, d_out: &Array) -> (Array, Array) {
    assert_eq!(a.shape(), b.shape(), "glu_backward: shape mismatch");
    assert_eq!(a.shape(), d_out.shape(), "glu_backward: bad d_out shape");
    let mut da = Array::zeros(a.shape());
    let mut db = Array::zeros(b.shape());
    for i in 0..a.len() {
        let s = sigmoid(b.data()[i]);
        let g = d_out.data()[i];
        da.data_mut()[i] = g * s;
        db.data_mut()[i] = g * a.data()[i] * s * (1.0 - s);
    }
    (da, db)
}

pub fn relu(x: &Array) -> Array {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Array::from_vec(x.shape(), data)
}

pub fn relu_backward(x: &Array, d_out: &Array) -> Array {
    assert_eq!(x.shape(), d_out.shape(), "relu_backward: shape mismatch");
    let data = x
        .data()
        .iter()
        .zip(d_out.data())
        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
        .collect();
    Array::from_vec(x.shape(), data)
}

/// Per-element keep/scale factors recorded by [`dropout`] for the backward
/// pass. `None` means the op was an identity (inference mode or `p == 0`).
pub struct DropoutMask(Option<Vec<f64>>);

impl DropoutMask {
    pub fn identity() -> Self {
        DropoutMask(None)
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_none()
    }
}

/// Inverted dropout: kept elements are scaled by `1/(1-p)` during training
/// so that inference is an exact identity.
pub fn dropout(x: &Array, p: f64, training: bool, rng: &mut impl Rng) -> (Array, DropoutMask) {
    assert!((0.0..1.0).contains(&p), "dropout: rate must be in [0, 1)");
    if !training || p == 0.0 {
        return (x.clone(), DropoutMask::identity());
    }
    let keep = 1.0 - p;
    let inv = 1.0 / keep;
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.random::<f64>() < keep { inv } else { 0.0 })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    (Array::from_vec(x.shape(), data), DropoutMask(Some(mask)))
}

pub fn dropout_backward(mask: &DropoutMask, d_out: &Array) -> Array {
    match &mask.0 {
        None => d_out.clone(),
        Some(m) => {
            assert_eq!(m.len(), d_out.len(), "dropout_backward: mask length mismatch");
            let data = d_out.data().iter().zip(m).map(|(&g, &s)| g * s).collect();
            Array::from_vec(d_out.shape(), data)
        }
    }
}
