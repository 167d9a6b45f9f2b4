//! Forward-mode propagation of input derivatives through a subnetwork.

use super::Scalar;
use crate::error::{Error, Result};
use crate::subnet::{layouts, SubnetParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DerivOrder {
    /// Output only.
    Value,
    /// Output with `du/dx` and `du/dt`.
    First,
    /// As `First`, plus `d2u/dx2`.
    Second,
}

impl DerivOrder {
    /// Number of stacked row blocks a batched pass carries.
    pub fn blocks(self) -> usize {
        match self {
            DerivOrder::Value => 1,
            DerivOrder::First => 3,
            DerivOrder::Second => 4,
        }
    }
}

/// Network output together with its input derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualValue<S = f64> {
    pub value: S,
    pub d_dx: S,
    pub d_dt: S,
    pub d2_dx2: Option<S>,
}

/// Forward pass over parameters of any [`Scalar`] type. Inputs are constants.
///
/// On a non-finite intermediate the index of the offending layer is returned.
pub fn forward_generic<S: Scalar>(
    layer_sizes: &[usize],
    params: &[S],
    x: f64,
    t: f64,
    order: DerivOrder,
) -> std::result::Result<DualValue<S>, usize> {
    let anchor = params[0];
    let c = |v: f64| anchor.constant_like(v);
    let second = order == DerivOrder::Second;

    let mut val = vec![c(x), c(t)];
    let mut dx = vec![c(1.0), c(0.0)];
    let mut dt = vec![c(0.0), c(1.0)];
    let mut dxx = vec![c(0.0), c(0.0)];

    let layers = layouts(layer_sizes);
    let last = layers.len() - 1;
    for (index, l) in layers.iter().enumerate() {
        let a = params[l.slope];
        let mut next_val = Vec::with_capacity(l.n_out);
        let mut next_dx = Vec::with_capacity(l.n_out);
        let mut next_dt = Vec::with_capacity(l.n_out);
        let mut next_dxx = Vec::with_capacity(l.n_out);
        for j in 0..l.n_out {
            let w = |i: usize| params[l.weights + j * l.n_in + i];
            let mut p = params[l.biases + j];
            let mut px = w(0) * dx[0];
            let mut pt = w(0) * dt[0];
            let mut pxx = w(0) * dxx[0];
            for i in 0..l.n_in {
                p = p + w(i) * val[i];
                if i > 0 {
                    px = px + w(i) * dx[i];
                    pt = pt + w(i) * dt[i];
                    if second {
                        pxx = pxx + w(i) * dxx[i];
                    }
                }
            }
            let (h, hx, ht, hxx) = (a * p, a * px, a * pt, a * pxx);
            if index == last {
                next_val.push(h);
                next_dx.push(hx);
                next_dt.push(ht);
                next_dxx.push(hxx);
            } else {
                let y = h.tanh();
                let g = y.constant_like(1.0) - y * y;
                next_val.push(y);
                next_dx.push(g * hx);
                next_dt.push(g * ht);
                if second {
                    // tanh'' = -2 tanh tanh'
                    next_dxx.push(g * hxx + y * g * hx * hx * -2.0);
                } else {
                    next_dxx.push(c(0.0));
                }
            }
        }
        let bad = next_val
            .iter()
            .chain(&next_dx)
            .chain(&next_dt)
            .chain(&next_dxx)
            .any(|v| !v.value().is_finite());
        if bad {
            return Err(index);
        }
        val = next_val;
        dx = next_dx;
        dt = next_dt;
        dxx = next_dxx;
    }

    Ok(DualValue {
        value: val[0],
        d_dx: dx[0],
        d_dt: dt[0],
        d2_dx2: second.then_some(dxx[0]),
    })
}

/// Output and exact input derivatives of `net` at `(x, t)`.
pub fn forward_with_input_derivs(
    net: &SubnetParams,
    x: f64,
    t: f64,
    order: DerivOrder,
) -> Result<DualValue<f64>> {
    if !x.is_finite() || !t.is_finite() {
        return Err(Error::NonFinite("network input"));
    }
    forward_generic(net.layer_sizes(), net.params(), x, t, order)
        .map_err(|layer| Error::NonFiniteForward { layer, epoch: None })
}
