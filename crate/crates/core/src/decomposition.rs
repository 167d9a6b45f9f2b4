//! Space-time decomposition along the shock path `x = sigma t`.
//!
//! The unit square is split into a pre-shock region `x < sigma t - band` and
//! a post-shock region `x > sigma t + band`. Interface points sit exactly on
//! the shock line, one per time instance.

use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux::ShockAnalysis;
use crate::subnet::SubnetParams;

pub const DEFAULT_BAND_HALFWIDTH: f64 = 0.007;
pub const MAX_REJECTION_DRAWS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub t: f64,
}

impl Point {
    pub fn new(x: f64, t: f64) -> Self {
        Self { x, t }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Ic,
    Bc,
    Pre,
    Post,
    Interface,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Ic => "ic",
            Region::Bc => "bc",
            Region::Pre => "pre",
            Region::Post => "post",
            Region::Interface => "interface",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointCounts {
    pub n_ic: usize,
    pub n_bc: usize,
    pub n_pre: usize,
    pub n_post: usize,
    pub n_interface: usize,
}

impl Default for PointCounts {
    fn default() -> Self {
        Self {
            n_ic: 200,
            n_bc: 200,
            n_pre: 2000,
            n_post: 2000,
            n_interface: 200,
        }
    }
}

impl PointCounts {
    pub fn total(&self) -> usize {
        self.n_ic + self.n_bc + self.n_pre + self.n_post + self.n_interface
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollocationPlan {
    pub ic_points: Vec<Point>,
    pub bc_points: Vec<Point>,
    pub pre_shock: Vec<Point>,
    pub post_shock: Vec<Point>,
    pub interface: Vec<Point>,
    pub band_halfwidth: f64,
    pub sigma: f64,
    pub rng_seed: u64,
}

/// Region of an interior point, or `None` inside the exclusion band.
pub fn classify_interior(p: Point, sigma: f64, band_halfwidth: f64) -> Option<Region> {
    let shock = sigma * p.t;
    if p.x < shock - band_halfwidth {
        Some(Region::Pre)
    } else if p.x > shock + band_halfwidth {
        Some(Region::Post)
    } else {
        None
    }
}

/// Uniform draws on the unit square, labelled by region.
pub struct InteriorSampler {
    rng: ChaCha8Rng,
    sigma: f64,
    band_halfwidth: f64,
}

impl InteriorSampler {
    fn new(rng: ChaCha8Rng, sigma: f64, band_halfwidth: f64) -> Self {
        Self { rng, sigma, band_halfwidth }
    }

    /// Sampler on its own stream, for statistics on the rejection scheme.
    pub fn seeded(seed: u64, sigma: f64, band_halfwidth: f64) -> Self {
        Self::new(ChaCha8Rng::seed_from_u64(seed), sigma, band_halfwidth)
    }
}

impl Iterator for InteriorSampler {
    type Item = (Point, Option<Region>);

    fn next(&mut self) -> Option<Self::Item> {
        let p = Point::new(self.rng.random::<f64>(), self.rng.random::<f64>());
        Some((p, classify_interior(p, self.sigma, self.band_halfwidth)))
    }
}

pub fn build_plan(
    analysis: &ShockAnalysis,
    counts: PointCounts,
    band_halfwidth: f64,
    rng_seed: u64,
) -> Result<CollocationPlan> {
    let sigma = analysis.sigma;
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidInput(format!("shock speed must be positive, got {sigma}")));
    }
    if !(band_halfwidth.is_finite() && band_halfwidth >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "band half-width must be non-negative, got {band_halfwidth}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    // 1 - u maps [0, 1) onto (0, 1].
    let ic_points = (0..counts.n_ic)
        .map(|_| Point::new(1.0 - rng.random::<f64>(), 0.0))
        .collect();
    let bc_points = (0..counts.n_bc)
        .map(|_| Point::new(0.0, rng.random::<f64>()))
        .collect();

    let mut pre_shock = Vec::with_capacity(counts.n_pre);
    let mut post_shock = Vec::with_capacity(counts.n_post);
    let sampler = InteriorSampler::new(rng, sigma, band_halfwidth);
    for (draws, (p, region)) in sampler.enumerate() {
        if pre_shock.len() == counts.n_pre && post_shock.len() == counts.n_post {
            break;
        }
        if draws == MAX_REJECTION_DRAWS {
            let (region, requested, placed) = if pre_shock.len() < counts.n_pre {
                ("pre-shock", counts.n_pre, pre_shock.len())
            } else {
                ("post-shock", counts.n_post, post_shock.len())
            };
            return Err(Error::Sampling { region, requested, placed, draws });
        }
        match region {
            Some(Region::Pre) if pre_shock.len() < counts.n_pre => pre_shock.push(p),
            Some(Region::Post) if post_shock.len() < counts.n_post => post_shock.push(p),
            _ => {}
        }
    }

    let t_end = (1.0 / sigma).min(1.0);
    let interface = (0..counts.n_interface)
        .map(|i| {
            let t = if counts.n_interface == 1 {
                0.0
            } else {
                t_end * i as f64 / (counts.n_interface - 1) as f64
            };
            Point::new(sigma * t, t)
        })
        .collect();

    Ok(CollocationPlan {
        ic_points,
        bc_points,
        pre_shock,
        post_shock,
        interface,
        band_halfwidth,
        sigma,
        rng_seed,
    })
}

impl CollocationPlan {
    pub fn total_points(&self) -> usize {
        self.ic_points.len()
            + self.bc_points.len()
            + self.pre_shock.len()
            + self.post_shock.len()
            + self.interface.len()
    }

    /// Interior set for a single network covering the whole domain: both
    /// regions, plus the interface points when `fold_interface` is set.
    pub fn single_domain_interior(&self, fold_interface: bool) -> Vec<Point> {
        let mut points = Vec::with_capacity(self.pre_shock.len() + self.post_shock.len() + self.interface.len());
        points.extend_from_slice(&self.pre_shock);
        points.extend_from_slice(&self.post_shock);
        if fold_interface {
            points.extend_from_slice(&self.interface);
        }
        points
    }

    pub fn labelled_points(&self) -> impl Iterator<Item = (Point, Region)> + '_ {
        [
            (&self.ic_points, Region::Ic),
            (&self.bc_points, Region::Bc),
            (&self.pre_shock, Region::Pre),
            (&self.post_shock, Region::Post),
            (&self.interface, Region::Interface),
        ]
        .into_iter()
        .flat_map(|(pts, r)| pts.iter().map(move |&p| (p, r)))
    }

    /// CSV with columns `x,t,region`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,t,region")?;
        for (p, region) in self.labelled_points() {
            writeln!(out, "{},{},{}", p.x, p.t, region)?;
        }
        Ok(())
    }
}

/// Indicator-weighted prediction: the pre-shock net left of the shock, the
/// post-shock net right of it, and their mean on the shock line itself.
pub fn stitch_prediction(
    nets: &[SubnetParams],
    analysis: &ShockAnalysis,
    x: f64,
    t: f64,
) -> Result<f64> {
    match nets {
        [single] => single.evaluate(x, t),
        [pre, post] => {
            let shock = analysis.sigma * t;
            if x < shock {
                pre.evaluate(x, t)
            } else if x > shock {
                post.evaluate(x, t)
            } else {
                Ok(0.5 * (pre.evaluate(x, t)? + post.evaluate(x, t)?))
            }
        }
        _ => Err(Error::InvalidInput(format!(
            "stitching supports one or two subnets, got {}",
            nets.len()
        ))),
    }
}
