//! Feed-forward subnetworks with layer-wise adaptive tanh activations.
//!
//! Every layer `l` owns a weight matrix `W_l`, a bias `b_l` and one trainable
//! slope `a_l`. Hidden layers compute `tanh(a_l (W_l z + b_l))`; the output
//! layer computes `a_L (W_L z + b_L)` without a nonlinearity. Counting one
//! slope per layer, output included, gives 777 parameters for the
//! (2-30-20-1, 2-10-1) pair and 798 for a single 2-30-22-1 network.
//!
//! Parameters are stored flat, layer by layer: weights (row-major,
//! `n_out x n_in`), then biases, then the slope.

use std::io::{BufRead, Write};

use ndarray::{ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &str = "xpinn-subnet v1";

/// Offsets of one layer's parameters inside the flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: usize,
    pub biases: usize,
    pub slope: usize,
}

impl LayerLayout {
    pub fn end(&self) -> usize {
        self.slope + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubnetParams {
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
    rng_seed: u64,
}

pub fn parameter_count(layer_sizes: &[usize]) -> usize {
    layer_sizes
        .windows(2)
        .map(|w| w[0] * w[1] + w[1] + 1)
        .sum()
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidArchitecture(format!(
            "need at least input and output widths, got {layer_sizes:?}"
        )));
    }
    if layer_sizes[0] != 2 || *layer_sizes.last().unwrap() != 1 {
        return Err(Error::InvalidArchitecture(format!(
            "widths must start with 2 (x, t) and end with 1, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidArchitecture(format!(
            "zero-width layer in {layer_sizes:?}"
        )));
    }
    Ok(())
}

impl SubnetParams {
    /// Glorot-uniform weights (variance `2 / (fan_in + fan_out)`), zero
    /// biases and unit slopes.
    pub fn init(layer_sizes: &[usize], rng_seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        net.rng_seed = rng_seed;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        for layout in net.layouts() {
            let bound = (6.0 / (layout.n_in + layout.n_out) as f64).sqrt();
            for w in &mut net.params[layout.weights..layout.biases] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    /// All weights and biases zero, slopes one.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut net = Self {
            layer_sizes: layer_sizes.to_vec(),
            params: vec![0.0; parameter_count(layer_sizes)],
            rng_seed: 0,
        };
        for layout in net.layouts() {
            net.params[layout.slope] = 1.0;
        }
        Ok(net)
    }

    pub fn from_parts(layer_sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let expected = parameter_count(layer_sizes);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            params,
            rng_seed: 0,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layouts(&self) -> Vec<LayerLayout> {
        layouts(&self.layer_sizes)
    }

    pub fn layout(&self, layer: usize) -> LayerLayout {
        self.layouts()[layer]
    }

    pub fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let l = self.layout(layer);
        ArrayView2::from_shape((l.n_out, l.n_in), &self.params[l.weights..l.biases])
            .expect("layout matches parameter vector")
    }

    pub fn biases(&self, layer: usize) -> ArrayView1<'_, f64> {
        let l = self.layout(layer);
        ArrayView1::from(&self.params[l.biases..l.slope])
    }

    pub fn slope(&self, layer: usize) -> f64 {
        self.params[self.layout(layer).slope]
    }

    pub fn set_weight(&mut self, layer: usize, row: usize, col: usize, value: f64) {
        let l = self.layout(layer);
        assert!(row < l.n_out && col < l.n_in);
        self.params[l.weights + row * l.n_in + col] = value;
    }

    pub fn set_bias(&mut self, layer: usize, row: usize, value: f64) {
        let l = self.layout(layer);
        assert!(row < l.n_out);
        self.params[l.biases + row] = value;
    }

    pub fn set_slope(&mut self, layer: usize, value: f64) {
        let l = self.layout(layer);
        self.params[l.slope] = value;
    }

    /// Network output at `(x, t)`. The output is not squashed to `[0, 1]`.
    pub fn evaluate(&self, x: f64, t: f64) -> Result<f64> {
        if !x.is_finite() || !t.is_finite() {
            return Err(Error::NonFinite("network input"));
        }
        let layouts = self.layouts();
        let last = layouts.len() - 1;
        let mut z = vec![x, t];
        for (index, l) in layouts.iter().enumerate() {
            let a = self.params[l.slope];
            let w = &self.params[l.weights..l.biases];
            let b = &self.params[l.biases..l.slope];
            let next: Vec<f64> = (0..l.n_out)
                .map(|j| {
                    let row = &w[j * l.n_in..(j + 1) * l.n_in];
                    let pre = row.iter().zip(&z).map(|(w, z)| w * z).sum::<f64>() + b[j];
                    if index == last { a * pre } else { (a * pre).tanh() }
                })
                .collect();
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteForward {
                    layer: index,
                    epoch: None,
                });
            }
            z = next;
        }
        Ok(z[0])
    }

    /// Text checkpoint: a magic line, `layers` with the widths, `seed`,
    /// `count`, then one parameter per line in storage order. Floats use the
    /// shortest representation that round-trips exactly.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CHECKPOINT_MAGIC}")?;
        let widths: Vec<String> = self.layer_sizes.iter().map(|n| n.to_string()).collect();
        writeln!(out, "layers {}", widths.join(" "))?;
        writeln!(out, "seed {}", self.rng_seed)?;
        writeln!(out, "count {}", self.params.len())?;
        for p in &self.params {
            writeln!(out, "{p:?}")?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::Checkpoint(format!("missing {what}")))
        };
        if next("header")?.trim() != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad header".into()));
        }
        let field = |line: String, key: &str| -> Result<String> {
            line.strip_prefix(key)
                .map(|rest| rest.trim().to_string())
                .ok_or_else(|| Error::Checkpoint(format!("expected `{key}` line")))
        };
        let parse_err = |e: std::num::ParseIntError| Error::Checkpoint(e.to_string());
        let sizes = field(next("layers")?, "layers")?
            .split_whitespace()
            .map(|s| s.parse::<usize>().map_err(parse_err))
            .collect::<Result<Vec<_>>>()?;
        let seed = field(next("seed")?, "seed")?.parse::<u64>().map_err(parse_err)?;
        let count = field(next("count")?, "count")?
            .parse::<usize>()
            .map_err(parse_err)?;
        let mut params = Vec::with_capacity(count);
        for i in 0..count {
            let line = next("parameter")?;
            params.push(line.trim().parse::<f64>().map_err(|e| {
                Error::Checkpoint(format!("parameter {i}: {e}"))
            })?);
        }
        let mut net = Self::from_parts(&sizes, params)?;
        net.rng_seed = seed;
        Ok(net)
    }
}

pub fn layouts(layer_sizes: &[usize]) -> Vec<LayerLayout> {
    let mut offset = 0;
    layer_sizes
        .windows(2)
        .map(|w| {
            let (n_in, n_out) = (w[0], w[1]);
            let layout = LayerLayout {
                n_in,
                n_out,
                weights: offset,
                biases: offset + n_in * n_out,
                slope: offset + n_in * n_out + n_out,
            };
            offset = layout.end();
            layout
        })
        .collect()
}
