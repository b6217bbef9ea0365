//! Trainable parameters, optionally weight-normalized.

use crate::error::{Error, Result};

use super::array::Array;

/// Effective weight of a normalized parameter:
/// `w[..,m] = g[m] * v[..,m] / ||v[..,m]||_2`, where the norm runs over all
/// axes except the last (the output channel).
pub fn weight_norm_effective(v: &Array, g: &Array) -> Array {
    let m = *v.shape().last().expect("weight_norm: scalar parameter");
    assert_eq!(g.shape(), [m], "weight_norm: scale length != output channels");
    let norms = channel_norms(v);
    let mut w = v.clone();
    let data = w.data_mut();
    for (i, x) in data.iter_mut().enumerate() {
        let c = i % m;
        *x *= g.data()[c] / norms[c];
    }
    w
}

/// Routes the gradient of the effective weight back onto `(v, g)`.
///
/// With `n_m = ||v_m||`: `dg[m] = <dw_m, v_m> / n_m` and
/// `dv_m = g[m]/n_m * (dw_m - <dw_m, v_m>/n_m^2 * v_m)`.
pub fn weight_norm_backward(v: &Array, g: &Array, dw: &Array) -> (Array, Array) {
    assert_eq!(v.shape(), dw.shape(), "weight_norm_backward: shape mismatch");
    let m = *v.shape().last().unwrap();
    let norms = channel_norms(v);

    // Per-channel inner product <dw_m, v_m>.
    let mut dots = vec![0.0; m];
    for (i, (&dwv, &vv)) in dw.data().iter().zip(v.data()).enumerate() {
        dots[i % m] += dwv * vv;
    }

    let mut dv = Array::zeros(v.shape());
    for (i, out) in dv.data_mut().iter_mut().enumerate() {
        let c = i % m;
        let n = norms[c];
        *out = g.data()[c] / n * (dw.data()[i] - dots[c] / (n * n) * v.data()[i]);
    }
    let dg = Array::from_vec(&[m], dots.iter().zip(&norms).map(|(d, n)| d / n).collect());
    (dv, dg)
}

fn channel_norms(v: &Array) -> Vec<f64> {
    let m = *v.shape().last().unwrap();
    let mut sq = vec![0.0; m];
    for (i, &x) in v.data().iter().enumerate() {
        sq[i % m] += x * x;
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// A trainable tensor with its gradient accumulator.
///
/// A weight-normalized parameter stores the direction `v` and per-channel
/// scale `g` separately and exposes the reparameterized weight through
/// [`Param::effective`]; a plain parameter is just a value.
#[derive(Clone, Debug)]
pub struct Param {
    v: Array,
    g: Option<Array>,
    grad_v: Array,
    grad_g: Option<Array>,
}

impl Param {
    pub fn plain(value: Array) -> Self {
        let grad_v = Array::zeros(value.shape());
        Param {
            v: value,
            g: None,
            grad_v,
            grad_g: None,
        }
    }

    /// Neutral-start weight normalization: `g[m]` is set to `||v[..,m]||`,
    /// so the effective weight initially equals `v`.
    pub fn weight_normalized(v: Array) -> Result<Self> {
        let m = *v
            .shape()
            .last()
            .ok_or_else(|| Error::config("weight norm on a scalar parameter"))?;
        let norms = channel_norms(&v);
        if let Some(c) = norms.iter().position(|&n| n == 0.0 || !n.is_finite()) {
            return Err(Error::config(format!(
                "weight norm: direction slice for output channel {c} has zero or non-finite norm"
            )));
        }
        let grad_v = Array::zeros(v.shape());
        Ok(Param {
            v,
            g: Some(Array::from_vec(&[m], norms)),
            grad_v,
            grad_g: Some(Array::zeros(&[m])),
        })
    }

    /// Rebuilds a parameter from stored tensors without touching their
    /// bits, so a saved model reloads exactly.
    pub fn from_parts(v: Array, g: Option<Array>) -> Self {
        if let Some(g) = &g {
            assert_eq!(g.shape(), &[*v.shape().last().unwrap()]);
        }
        let grad_v = Array::zeros(v.shape());
        let grad_g = g.as_ref().map(|g| Array::zeros(g.shape()));
        Param { v, g, grad_v, grad_g }
    }

    pub fn is_normalized(&self) -> bool {
        self.g.is_some()
    }

    /// Raw stored value (`v`). For plain parameters this IS the weight.
    pub fn value(&self) -> &Array {
        &self.v
    }

    pub fn value_mut(&mut self) -> &mut Array {
        &mut self.v
    }

    pub fn scale_value(&self) -> Option<&Array> {
        self.g.as_ref()
    }

    /// Weight as seen by the forward pass.
    pub fn effective(&self) -> Array {
        match &self.g {
            Some(g) => weight_norm_effective(&self.v, g),
            None => self.v.clone(),
        }
    }

    /// Adds the gradient of the loss with respect to the *effective* weight,
    /// routing it through the reparameterization when normalized.
    pub fn accumulate(&mut self, d_effective: &Array) {
        match &self.g {
            Some(g) => {
                let (dv, dg) = weight_norm_backward(&self.v, g, d_effective);
                self.grad_v.add_assign(&dv);
                self.grad_g.as_mut().unwrap().add_assign(&dg);
            }
            None => self.grad_v.add_assign(d_effective),
        }
    }

    /// Direct gradient access for plain parameters, used by embedding
    /// scatter-adds. Normalized parameters must go through `accumulate`
    /// so the reparameterization chain rule is applied.
    pub fn grad_mut(&mut self) -> &mut Array {
        assert!(
            self.g.is_none(),
            "use accumulate() for weight-normalized parameters"
        );
        &mut self.grad_v
    }

    pub fn zero_grad(&mut self) {
        self.grad_v.fill(0.0);
        if let Some(gg) = self.grad_g.as_mut() {
            gg.fill(0.0);
        }
    }

    /// Scales accumulated gradients, e.g. to average over a batch.
    pub fn scale_grads(&mut self, alpha: f64) {
        self.grad_v.scale(alpha);
        if let Some(gg) = self.grad_g.as_mut() {
            gg.scale(alpha);
        }
    }

    pub fn grad(&self) -> &Array {
        &self.grad_v
    }

    pub fn grad_scale(&self) -> Option<&Array> {
        self.grad_g.as_ref()
    }

    /// The (value, gradient) pairs the optimizer must update: the direction
    /// tensor, plus the scale vector when normalized.
    pub fn optimizer_slots(&mut self) -> Vec<(&'static str, &mut Array, &Array)> {
        let mut slots: Vec<(&'static str, &mut Array, &Array)> =
            vec![("", &mut self.v, &self.grad_v)];
        if let (Some(g), Some(gg)) = (self.g.as_mut(), self.grad_g.as_ref()) {
            slots.push((".g", g, gg));
        }
        slots
    }
}
