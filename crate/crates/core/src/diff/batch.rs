//! Fused forward/reverse pass over a whole point set.
//!
//! Rows are stacked in blocks of `n` (one per point): the output values, then
//! `d/dx`, `d/dt` and `d2/dx2` as the [`DerivOrder`] requires. Each layer is
//! one matrix product over all blocks; biases only touch the value block.
//!
//! For a hidden layer with `h = a (W z + b)`, `y = tanh h`, `g = 1 - y^2`:
//!
//! ```text
//! y_x  = g h_x        y_t = g h_t
//! y_xx = g h_xx + g' h_x^2        g' = -2 y g
//! ```
//!
//! and the reverse pass differentiates these once more, which brings in
//! `g'' = -2 g^2 + 4 y^2 g`.

use ndarray::{s, Array2, ArrayView1, Axis};

use super::DerivOrder;
use crate::decomposition::Point;
use crate::error::{Error, Result};
use crate::subnet::SubnetParams;

struct LayerTrace {
    input: Array2<f64>,
    /// `W z + b` before the slope, all blocks.
    affine: Array2<f64>,
    /// tanh of the value block for hidden layers.
    activation: Option<Array2<f64>>,
}

pub struct BatchForward {
    order: DerivOrder,
    n: usize,
    traces: Vec<LayerTrace>,
    output: Array2<f64>,
}

pub fn batch_forward(net: &SubnetParams, points: &[Point], order: DerivOrder) -> Result<BatchForward> {
    let n = points.len();
    let k = order.blocks();
    let mut z = Array2::<f64>::zeros((k * n, 2));
    for (i, p) in points.iter().enumerate() {
        z[[i, 0]] = p.x;
        z[[i, 1]] = p.t;
        if k >= 3 {
            z[[n + i, 0]] = 1.0;
            z[[2 * n + i, 1]] = 1.0;
        }
    }

    let layouts = net.layouts();
    let last = layouts.len() - 1;
    let mut traces = Vec::with_capacity(layouts.len());
    for (l, layout) in layouts.iter().enumerate() {
        let w = net.weights(l);
        let a = net.slope(l);
        let mut affine = z.dot(&w.t());
        {
            let mut values = affine.slice_mut(s![0..n, ..]);
            values += &net.biases(l);
        }

        if l == last {
            let output = &affine * a;
            if output.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteForward { layer: l, epoch: None });
            }
            traces.push(LayerTrace { input: z, affine, activation: None });
            return Ok(BatchForward { order, n, traces, output });
        }

        let m = layout.n_out;
        let blk = n * m;
        let mut next = Array2::<f64>::zeros((k * n, m));
        let mut act = Array2::<f64>::zeros((n, m));
        {
            let aff = affine.as_slice().expect("standard layout");
            let out = next.as_slice_mut().expect("standard layout");
            let act = act.as_slice_mut().expect("standard layout");
            for idx in 0..blk {
                let y = (a * aff[idx]).tanh();
                act[idx] = y;
                out[idx] = y;
                if k >= 3 {
                    let g = 1.0 - y * y;
                    let hx = a * aff[blk + idx];
                    out[blk + idx] = g * hx;
                    out[2 * blk + idx] = g * a * aff[2 * blk + idx];
                    if k == 4 {
                        let hxx = a * aff[3 * blk + idx];
                        out[3 * blk + idx] = g * hxx - 2.0 * y * g * hx * hx;
                    }
                }
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteForward { layer: l, epoch: None });
        }
        traces.push(LayerTrace { input: z, affine, activation: Some(act) });
        z = next;
    }
    unreachable!("a network has at least one layer")
}

impl BatchForward {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn order(&self) -> DerivOrder {
        self.order
    }

    fn block(&self, b: usize) -> ArrayView1<'_, f64> {
        assert!(b < self.order.blocks(), "derivative block not computed");
        self.output.slice(s![b * self.n..(b + 1) * self.n, 0])
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.block(0)
    }

    pub fn d_dx(&self) -> ArrayView1<'_, f64> {
        self.block(1)
    }

    pub fn d_dt(&self) -> ArrayView1<'_, f64> {
        self.block(2)
    }

    pub fn d2_dx2(&self) -> ArrayView1<'_, f64> {
        self.block(3)
    }

    /// Accumulates into `grad` the parameter gradient of `sum(adjoint * output)`,
    /// where `adjoint` is stacked like the output (one entry per row, all blocks).
    pub fn backward(&self, net: &SubnetParams, adjoint: &[f64], grad: &mut [f64]) {
        let k = self.order.blocks();
        let n = self.n;
        assert_eq!(adjoint.len(), k * n, "adjoint must cover every output row");
        assert_eq!(grad.len(), net.param_count());

        let mut upstream = Array2::from_shape_vec((k * n, 1), adjoint.to_vec()).expect("shape");
        let layouts = net.layouts();
        for (l, layout) in layouts.iter().enumerate().rev() {
            let trace = &self.traces[l];
            let a = net.slope(l);
            let pre_bar = match &trace.activation {
                None => upstream,
                Some(act) => hidden_adjoint(&upstream, act, &trace.affine, a, n, k),
            };

            grad[layout.slope] += (&pre_bar * &trace.affine).sum();
            let affine_bar = pre_bar * a;

            let w_bar = affine_bar.t().dot(&trace.input);
            for (g, dw) in grad[layout.weights..layout.biases].iter_mut().zip(w_bar.iter()) {
                *g += dw;
            }
            let b_bar = affine_bar.slice(s![0..n, ..]).sum_axis(Axis(0));
            for (g, db) in grad[layout.biases..layout.slope].iter_mut().zip(b_bar.iter()) {
                *g += db;
            }

            if l == 0 {
                break;
            }
            upstream = affine_bar.dot(&net.weights(l));
        }
    }
}

/// Adjoint of the slope-scaled pre-activation given the adjoint of the
/// activation outputs.
fn hidden_adjoint(
    upstream: &Array2<f64>,
    act: &Array2<f64>,
    affine: &Array2<f64>,
    a: f64,
    n: usize,
    k: usize,
) -> Array2<f64> {
    let m = act.ncols();
    let blk = n * m;
    let up = upstream.as_slice().expect("standard layout");
    let aff = affine.as_slice().expect("standard layout");
    let act = act.as_slice().expect("standard layout");
    let mut out = Array2::<f64>::zeros((k * n, m));
    let o = out.as_slice_mut().expect("standard layout");
    for idx in 0..blk {
        let y = act[idx];
        let g = 1.0 - y * y;
        let mut h0 = up[idx] * g;
        if k >= 3 {
            let g1 = -2.0 * y * g;
            let hx = a * aff[blk + idx];
            let ht = a * aff[2 * blk + idx];
            let (yx, yt) = (up[blk + idx], up[2 * blk + idx]);
            h0 += g1 * (yx * hx + yt * ht);
            o[blk + idx] = yx * g;
            o[2 * blk + idx] = yt * g;
            if k == 4 {
                let g2 = -2.0 * g * g + 4.0 * y * y * g;
                let hxx = a * aff[3 * blk + idx];
                let yxx = up[3 * blk + idx];
                h0 += g1 * yxx * hxx + g2 * yxx * hx * hx;
                o[blk + idx] += 2.0 * yxx * g1 * hx;
                o[3 * blk + idx] = yxx * g;
            }
        }
        o[idx] = h0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{forward_generic, loss_gradient, ParamTape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
        (0..n)
            .map(|_| Point::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
            .collect()
    }

    fn random_net(rng: &mut ChaCha8Rng, seed: u64) -> SubnetParams {
        let mut sizes = vec![2];
        for _ in 0..rng.random_range(1..=2) {
            sizes.push(rng.random_range(1..=12));
        }
        sizes.push(1);
        let mut net = SubnetParams::init(&sizes, seed).unwrap();
        for l in 0..net.num_layers() {
            net.set_slope(l, rng.random_range(0.5..1.5));
            for j in 0..net.layout(l).n_out {
                net.set_bias(l, j, rng.random_range(-0.5..0.5));
            }
        }
        net
    }

    #[test]
    fn forward_matches_pointwise_duals() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..10 {
            let net = random_net(&mut rng, seed);
            let pts = random_points(&mut rng, 17);
            let batch = batch_forward(&net, &pts, DerivOrder::Second).unwrap();
            for (i, p) in pts.iter().enumerate() {
                let d = forward_generic(net.layer_sizes(), net.params(), p.x, p.t, DerivOrder::Second)
                    .unwrap();
                assert!((batch.values()[i] - d.value).abs() < 1e-13);
                assert!((batch.d_dx()[i] - d.d_dx).abs() < 1e-13);
                assert!((batch.d_dt()[i] - d.d_dt).abs() < 1e-13);
                assert!((batch.d2_dx2()[i] - d.d2_dx2.unwrap()).abs() < 1e-12);
            }
            let values = batch_forward(&net, &pts, DerivOrder::Value).unwrap();
            assert_eq!(values.values(), batch.values());
        }
    }

    /// Random linear functional of every output block, differentiated by
    /// the fused pass and by the scalar tape.
    #[test]
    fn backward_matches_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (seed, order) in [DerivOrder::Value, DerivOrder::First, DerivOrder::Second]
            .into_iter()
            .cycle()
            .take(12)
            .enumerate()
        {
            let net = random_net(&mut rng, seed as u64);
            let pts = random_points(&mut rng, 9);
            let k = order.blocks();
            let weights: Vec<f64> = (0..k * pts.len()).map(|_| rng.random_range(-1.0..1.0)).collect();

            let batch = batch_forward(&net, &pts, order).unwrap();
            let mut grad = vec![0.0; net.param_count()];
            batch.backward(&net, &weights, &mut grad);

            let tape = ParamTape::new();
            let params = tape.vars(net.params());
            let mut total = tape.var(0.0);
            let n = pts.len();
            for (i, p) in pts.iter().enumerate() {
                let d = forward_generic(net.layer_sizes(), &params, p.x, p.t, DerivOrder::Second).unwrap();
                total = total + d.value * weights[i];
                if k >= 3 {
                    total = total + d.d_dx * weights[n + i] + d.d_dt * weights[2 * n + i];
                }
                if k == 4 {
                    total = total + d.d2_dx2.unwrap() * weights[3 * n + i];
                }
            }
            let reference = loss_gradient(&tape, total, &params);
            for (j, (a, b)) in grad.iter().zip(&reference).enumerate() {
                assert!(
                    (a - b).abs() <= 1e-12 * b.abs().max(1.0),
                    "{order:?} param {j}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn empty_point_set() {
        let net = SubnetParams::init(&[2, 4, 1], 0).unwrap();
        let batch = batch_forward(&net, &[], DerivOrder::First).unwrap();
        assert!(batch.is_empty());
        let mut grad = vec![0.0; net.param_count()];
        batch.backward(&net, &[], &mut grad);
        assert!(grad.iter().all(|&g| g == 0.0));
    }
}
