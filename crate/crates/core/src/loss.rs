//! Loss terms for the XPINN and single-network PINN variants.
//!
//! Every subnet `q` minimises its own total
//!
//! ```text
//! J_q = data + PDE residual + Rankine-Hugoniot interface residual + interface average
//! ```
//!
//! with unit weights. The interface terms read the neighbour's prediction
//! but only differentiate with respect to `q`'s own parameters.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::decomposition::{CollocationPlan, Point};
use crate::diff::{batch_forward, DerivOrder};
use crate::error::{Error, Result};
use crate::flux::{FluxModel, ModifiedFluxKind, ShockAnalysis};
use crate::subnet::SubnetParams;

/// Network outputs are clamped to this range before a flux is evaluated.
/// Gradients pass straight through the clamp.
pub const FLUX_CLAMP: (f64, f64) = (-0.2, 1.2);
pub const DEFAULT_DIFFUSIVITY: f64 = 2.5e-3;
pub const DEFAULT_RH_STABILIZER: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Xpinn,
    XpinnNoInterface,
    StandardPinn,
    DiffusivityPinn,
    WelgePinn,
    OleinikPinn,
}

impl Mode {
    pub const ALL_METHODS: [Mode; 5] = [
        Mode::Xpinn,
        Mode::StandardPinn,
        Mode::DiffusivityPinn,
        Mode::WelgePinn,
        Mode::OleinikPinn,
    ];

    pub fn is_xpinn(self) -> bool {
        matches!(self, Mode::Xpinn | Mode::XpinnNoInterface)
    }

    pub fn subnet_count(self) -> usize {
        if self.is_xpinn() { 2 } else { 1 }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Xpinn => "xpinn",
            Mode::XpinnNoInterface => "xpinn_no_interface",
            Mode::StandardPinn => "standard_pinn",
            Mode::DiffusivityPinn => "diffusivity_pinn",
            Mode::WelgePinn => "welge_pinn",
            Mode::OleinikPinn => "oleinik_pinn",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantConfig {
    pub mode: Mode,
    /// Only used by [`Mode::DiffusivityPinn`].
    pub diffusivity_eps: f64,
    pub rh_stabilizer_eps: f64,
    pub enable_interface_average: bool,
    /// Flux used by [`Mode::WelgePinn`].
    pub welge_form: ModifiedFluxKind,
    /// Single-network modes also train on the interface points as interior points.
    pub fold_interface_into_interior: bool,
}

impl Default for VariantConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Xpinn,
            diffusivity_eps: DEFAULT_DIFFUSIVITY,
            rh_stabilizer_eps: DEFAULT_RH_STABILIZER,
            enable_interface_average: false,
            welge_form: ModifiedFluxKind::WelgeAsWritten,
            fold_interface_into_interior: true,
        }
    }
}

impl VariantConfig {
    pub fn with_mode(mode: Mode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn flux_kind(&self) -> ModifiedFluxKind {
        match self.mode {
            Mode::WelgePinn => self.welge_form,
            Mode::OleinikPinn => ModifiedFluxKind::Oleinik,
            _ => ModifiedFluxKind::Original,
        }
    }

    pub fn diffusivity(&self) -> Option<f64> {
        (self.mode == Mode::DiffusivityPinn).then_some(self.diffusivity_eps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == Mode::DiffusivityPinn && !(self.diffusivity_eps > 0.0) {
            return Err(Error::Config(format!(
                "diffusivity_eps must be positive, got {}",
                self.diffusivity_eps
            )));
        }
        if !(self.rh_stabilizer_eps.is_finite() && self.rh_stabilizer_eps >= 0.0) {
            return Err(Error::Config(format!(
                "rh_stabilizer_eps must be non-negative, got {}",
                self.rh_stabilizer_eps
            )));
        }
        if !matches!(self.welge_form, ModifiedFluxKind::WelgeAsWritten | ModifiedFluxKind::WelgeHull) {
            return Err(Error::Config(format!(
                "welge_form must be welge_as_written or welge_hull, got {:?}",
                self.welge_form
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data_loss: f64,
    pub residual_loss: f64,
    pub interface_residual_loss: f64,
    pub interface_average_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(data: f64, residual: f64, interface_residual: f64, interface_average: f64) -> Self {
        Self {
            data_loss: data,
            residual_loss: residual,
            interface_residual_loss: interface_residual,
            interface_average_loss: interface_average,
            total: data + residual + interface_residual + interface_average,
        }
    }
}

fn clamp_flux_arg(u: f64) -> f64 {
    u.clamp(FLUX_CLAMP.0, FLUX_CLAMP.1)
}

/// Mean squared deviation from `target`; accumulates its gradient when asked.
fn data_term(net: &SubnetParams, points: &[Point], target: f64, grad: Option<&mut [f64]>) -> Result<f64> {
    if points.is_empty() {
        return Ok(0.0);
    }
    let fwd = batch_forward(net, points, DerivOrder::Value)?;
    let n = points.len() as f64;
    let diffs: Vec<f64> = fwd.values().iter().map(|u| u - target).collect();
    let loss = diffs.iter().map(|d| d * d).sum::<f64>() / n;
    if let Some(grad) = grad {
        let adj: Vec<f64> = diffs.iter().map(|d| 2.0 * d / n).collect();
        fwd.backward(net, &adj, grad);
    }
    Ok(loss)
}

struct ResidualSpec<'a> {
    model: &'a FluxModel,
    analysis: &'a ShockAnalysis,
    kind: ModifiedFluxKind,
    diffusivity: Option<f64>,
}

/// Mean of `|u_t + F'(u) u_x - eps u_xx|^2`.
fn residual_term(
    net: &SubnetParams,
    points: &[Point],
    spec: &ResidualSpec<'_>,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    if points.is_empty() {
        return Ok(0.0);
    }
    let order = if spec.diffusivity.is_some() { DerivOrder::Second } else { DerivOrder::First };
    let eps = spec.diffusivity.unwrap_or(0.0);
    let fwd = batch_forward(net, points, order)?;
    let n = points.len();
    let (u, ux, ut) = (fwd.values(), fwd.d_dx(), fwd.d_dt());
    let uxx = spec.diffusivity.map(|_| fwd.d2_dx2());

    let mut loss = 0.0;
    let mut adj = grad.as_ref().map(|_| vec![0.0; order.blocks() * n]);
    for i in 0..n {
        let flux = spec.model.modified_flux_eval(spec.kind, spec.analysis, clamp_flux_arg(u[i]));
        let diffusion = uxx.as_ref().map_or(0.0, |uxx| eps * uxx[i]);
        let r = ut[i] + flux.slope * ux[i] - diffusion;
        if !r.is_finite() {
            return Err(Error::NonFiniteResidual { x: points[i].x, t: points[i].t });
        }
        loss += r * r;
        if let Some(adj) = adj.as_mut() {
            let r_bar = 2.0 * r / n as f64;
            adj[i] = r_bar * flux.curvature * ux[i];
            adj[n + i] = r_bar * flux.slope;
            adj[2 * n + i] = r_bar;
            if uxx.is_some() {
                adj[3 * n + i] = -eps * r_bar;
            }
        }
    }
    if let (Some(grad), Some(adj)) = (grad, adj) {
        fwd.backward(net, &adj, grad);
    }
    Ok(loss / n as f64)
}

/// Rankine-Hugoniot penalty with its derivatives with respect to each side.
struct InterfaceJump {
    loss: f64,
    d_pre: Vec<f64>,
    d_post: Vec<f64>,
}

fn rh_jump(model: &FluxModel, sigma: f64, stabilizer: f64, pre: &[f64], post: &[f64]) -> InterfaceJump {
    let n = pre.len();
    let mut jump = InterfaceJump { loss: 0.0, d_pre: vec![0.0; n], d_post: vec![0.0; n] };
    if n == 0 {
        return jump;
    }
    for i in 0..n {
        let (a, b) = (clamp_flux_arg(post[i]), clamp_flux_arg(pre[i]));
        let num = model.flux(a) - model.flux(b);
        let den = post[i] - pre[i] + stabilizer;
        let r = num / den - sigma;
        jump.loss += r * r;
        let r_bar = 2.0 * r / n as f64;
        jump.d_post[i] = r_bar * (model.flux_slope(a) / den - num / (den * den));
        jump.d_pre[i] = r_bar * (-model.flux_slope(b) / den + num / (den * den));
    }
    jump.loss /= n as f64;
    jump
}

/// `mean |u_own - (u_own + u_other) / 2|^2` and its derivative in `u_own`.
fn average_one_side(own: &[f64], other: &[f64]) -> (f64, Vec<f64>) {
    let n = own.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let mut loss = 0.0;
    let adj = own
        .iter()
        .zip(other)
        .map(|(u, v)| {
            let half = 0.5 * (u - v);
            loss += half * half;
            half / n as f64
        })
        .collect();
    (loss / n as f64, adj)
}

fn interface_values(net: &SubnetParams, points: &[Point]) -> Result<Vec<f64>> {
    Ok(batch_forward(net, points, DerivOrder::Value)?.values().to_vec())
}

/// Data loss: mean of `u^2` over the initial-condition points plus mean of
/// `(u - 1)^2` over the inlet points, each averaged over its own count.
pub fn data_loss(net: &SubnetParams, ic_points: &[Point], bc_points: &[Point]) -> Result<f64> {
    if ic_points.is_empty() {
        warn!("data loss: empty initial-condition set contributes 0");
    }
    if bc_points.is_empty() {
        warn!("data loss: empty boundary set contributes 0");
    }
    Ok(data_term(net, ic_points, 0.0, None)? + data_term(net, bc_points, 1.0, None)?)
}

pub fn pde_residual_loss(
    net: &SubnetParams,
    points: &[Point],
    model: &FluxModel,
    analysis: &ShockAnalysis,
    kind: ModifiedFluxKind,
    diffusivity: Option<f64>,
) -> Result<f64> {
    residual_term(net, points, &ResidualSpec { model, analysis, kind, diffusivity }, None)
}

/// `mean |(f(u_post) - f(u_pre)) / (u_post - u_pre + eps) - sigma|^2`.
pub fn rankine_hugoniot_loss(
    net_pre: &SubnetParams,
    net_post: &SubnetParams,
    points: &[Point],
    model: &FluxModel,
    sigma: f64,
    stabilizer: f64,
) -> Result<f64> {
    let pre = interface_values(net_pre, points)?;
    let post = interface_values(net_post, points)?;
    Ok(rh_jump(model, sigma, stabilizer, &pre, &post).loss)
}

/// Interface-average penalty summed over both sides; zero iff the nets agree
/// on every interface point.
pub fn interface_average_loss(net_pre: &SubnetParams, net_post: &SubnetParams, points: &[Point]) -> Result<f64> {
    let pre = interface_values(net_pre, points)?;
    let post = interface_values(net_post, points)?;
    Ok(average_one_side(&pre, &post).0 + average_one_side(&post, &pre).0)
}

/// Point sets one subnet is trained on.
#[derive(Clone, Debug)]
struct SubnetPoints {
    data: Vec<(Vec<Point>, f64)>,
    residual: Vec<Point>,
}

/// A variant bound to its flux and collocation points, ready to be evaluated
/// repeatedly during training.
#[derive(Clone, Debug)]
pub struct LossProblem {
    variant: VariantConfig,
    model: FluxModel,
    analysis: ShockAnalysis,
    subnets: Vec<SubnetPoints>,
    interface: Vec<Point>,
}

impl LossProblem {
    pub fn new(
        variant: &VariantConfig,
        model: FluxModel,
        analysis: ShockAnalysis,
        plan: &CollocationPlan,
    ) -> Self {
        let subnets = if variant.mode.is_xpinn() {
            vec![
                SubnetPoints { data: vec![(plan.bc_points.clone(), 1.0)], residual: plan.pre_shock.clone() },
                SubnetPoints { data: vec![(plan.ic_points.clone(), 0.0)], residual: plan.post_shock.clone() },
            ]
        } else {
            vec![SubnetPoints {
                data: vec![(plan.ic_points.clone(), 0.0), (plan.bc_points.clone(), 1.0)],
                residual: plan.single_domain_interior(variant.fold_interface_into_interior),
            }]
        };
        Self {
            variant: variant.clone(),
            model,
            analysis,
            subnets,
            interface: plan.interface.clone(),
        }
    }

    pub fn variant(&self) -> &VariantConfig {
        &self.variant
    }

    pub fn model(&self) -> &FluxModel {
        &self.model
    }

    pub fn analysis(&self) -> &ShockAnalysis {
        &self.analysis
    }

    pub fn interface_points(&self) -> &[Point] {
        &self.interface
    }

    /// Residual points of subnet `q`.
    pub fn residual_points(&self, q: usize) -> &[Point] {
        &self.subnets[q].residual
    }

    /// `(points, target)` data sets of subnet `q`.
    pub fn data_sets(&self, q: usize) -> impl Iterator<Item = (&[Point], f64)> {
        self.subnets[q].data.iter().map(|(p, v)| (p.as_slice(), *v))
    }

    pub fn subnet_count(&self) -> usize {
        self.subnets.len()
    }

    pub fn total_points(&self) -> usize {
        let own: usize = self
            .subnets
            .iter()
            .map(|s| s.residual.len() + s.data.iter().map(|(p, _)| p.len()).sum::<usize>())
            .sum();
        if self.variant.mode.is_xpinn() { own + self.interface.len() } else { own }
    }

    pub fn interface_residual_enabled(&self) -> bool {
        self.variant.mode == Mode::Xpinn
    }

    pub fn interface_average_enabled(&self) -> bool {
        self.variant.mode.is_xpinn() && self.variant.enable_interface_average
    }

    fn check_nets(&self, nets: &[SubnetParams]) -> Result<()> {
        if nets.len() != self.subnets.len() {
            return Err(Error::ModeMismatch {
                mode: self.variant.mode.to_string(),
                expected: self.subnets.len(),
                got: nets.len(),
            });
        }
        Ok(())
    }

    pub fn evaluate(&self, nets: &[SubnetParams]) -> Result<Vec<LossBreakdown>> {
        self.run(nets, false).map(|(b, _)| b)
    }

    /// Loss breakdowns and, per subnet, the gradient of that subnet's total
    /// with respect to its own parameters.
    pub fn evaluate_with_gradients(&self, nets: &[SubnetParams]) -> Result<(Vec<LossBreakdown>, Vec<Vec<f64>>)> {
        self.run(nets, true)
    }

    fn run(&self, nets: &[SubnetParams], want_grad: bool) -> Result<(Vec<LossBreakdown>, Vec<Vec<f64>>)> {
        self.check_nets(nets)?;
        let mut grads: Vec<Vec<f64>> = nets.iter().map(|n| vec![0.0; n.param_count()]).collect();
        let spec = ResidualSpec {
            model: &self.model,
            analysis: &self.analysis,
            kind: self.variant.flux_kind(),
            diffusivity: self.variant.diffusivity(),
        };

        let mut parts = Vec::with_capacity(nets.len());
        for (q, (net, points)) in nets.iter().zip(&self.subnets).enumerate() {
            let mut data = 0.0;
            for (set, target) in &points.data {
                data += data_term(net, set, *target, want_grad.then(|| grads[q].as_mut_slice()))?;
            }
            let residual = residual_term(net, &points.residual, &spec, want_grad.then(|| grads[q].as_mut_slice()))?;
            parts.push((data, residual));
        }

        let mut interface_residual = vec![0.0; nets.len()];
        let mut interface_average = vec![0.0; nets.len()];
        let rh = self.interface_residual_enabled();
        let avg = self.interface_average_enabled();
        if (rh || avg) && !self.interface.is_empty() {
            let pre_fwd = batch_forward(&nets[0], &self.interface, DerivOrder::Value)?;
            let post_fwd = batch_forward(&nets[1], &self.interface, DerivOrder::Value)?;
            let pre = pre_fwd.values().to_vec();
            let post = post_fwd.values().to_vec();
            let mut adj_pre = vec![0.0; pre.len()];
            let mut adj_post = vec![0.0; post.len()];
            if rh {
                let jump = rh_jump(&self.model, self.analysis.sigma, self.variant.rh_stabilizer_eps, &pre, &post);
                interface_residual = vec![jump.loss; 2];
                adj_pre.iter_mut().zip(&jump.d_pre).for_each(|(a, d)| *a += d);
                adj_post.iter_mut().zip(&jump.d_post).for_each(|(a, d)| *a += d);
            }
            if avg {
                let (l_pre, d_pre) = average_one_side(&pre, &post);
                let (l_post, d_post) = average_one_side(&post, &pre);
                interface_average = vec![l_pre, l_post];
                adj_pre.iter_mut().zip(&d_pre).for_each(|(a, d)| *a += d);
                adj_post.iter_mut().zip(&d_post).for_each(|(a, d)| *a += d);
            }
            if want_grad {
                pre_fwd.backward(&nets[0], &adj_pre, &mut grads[0]);
                post_fwd.backward(&nets[1], &adj_post, &mut grads[1]);
            }
        }

        let breakdowns = parts
            .into_iter()
            .enumerate()
            .map(|(q, (data, residual))| {
                LossBreakdown::new(data, residual, interface_residual[q], interface_average[q])
            })
            .collect();
        Ok((breakdowns, if want_grad { grads } else { Vec::new() }))
    }
}

/// One breakdown per subnet for `variant` evaluated on `plan`.
pub fn assemble(
    variant: &VariantConfig,
    nets: &[SubnetParams],
    plan: &CollocationPlan,
    model: &FluxModel,
    analysis: &ShockAnalysis,
) -> Result<Vec<LossBreakdown>> {
    LossProblem::new(variant, *model, *analysis, plan).evaluate(nets)
}

/// Pointwise reimplementation of each subnet's total loss over any
/// [`Scalar`], independent of the fused batch kernel. Instantiated with
/// `f64` it gives loss values for finite differences; with taped scalars it
/// gives reference gradients.
pub mod reference {
    use super::*;
    use crate::diff::{forward_generic, Scalar};

    fn flux<S: Scalar>(m: f64, s: S) -> S {
        let w = s.constant_like(1.0) - s;
        s * s / (s * s + w * w * m)
    }

    fn flux_slope<S: Scalar>(m: f64, s: S) -> S {
        let w = s.constant_like(1.0) - s;
        let d = s * s + w * w * m;
        s * w * (2.0 * m) / (d * d)
    }

    fn modified_slope<S: Scalar>(m: f64, kind: ModifiedFluxKind, a: &ShockAnalysis, s: S) -> S {
        let v = s.value();
        match kind {
            ModifiedFluxKind::WelgeAsWritten if v <= a.s_star => {
                let fs = a.s_star * a.s_star / (a.s_star * a.s_star + m * (1.0 - a.s_star).powi(2));
                s.constant_like(1.0 / fs)
            }
            ModifiedFluxKind::WelgeHull if v <= a.s_star => s.constant_like(a.sigma),
            ModifiedFluxKind::Oleinik if v < a.s_star => s.constant_like(a.sigma),
            _ => flux_slope(m, s),
        }
    }

    /// Straight-through clamp: clamped value, unit derivative.
    fn clamp<S: Scalar>(u: S) -> S {
        let v = u.value();
        u + (v.clamp(FLUX_CLAMP.0, FLUX_CLAMP.1) - v)
    }

    fn value_at<S: Scalar>(sizes: &[usize], params: &[S], p: Point) -> Result<S> {
        forward_generic(sizes, params, p.x, p.t, DerivOrder::First)
            .map(|d| d.value)
            .map_err(|layer| Error::NonFiniteForward { layer, epoch: None })
    }

    /// Total loss of subnet `q` with its parameters given as `params`; the
    /// neighbour (XPINN modes) enters as a constant.
    pub fn subnet_total<S: Scalar>(
        problem: &LossProblem,
        q: usize,
        sizes: &[usize],
        params: &[S],
        neighbour: Option<&SubnetParams>,
    ) -> Result<S> {
        let m = problem.model().mobility_ratio();
        let analysis = problem.analysis();
        let variant = problem.variant();
        let zero = params[0].constant_like(0.0);
        let mut total = zero;

        for (set, target) in problem.data_sets(q) {
            let mut acc = zero;
            for &p in set {
                let d = value_at(sizes, params, p)? - target;
                acc = acc + d * d;
            }
            if !set.is_empty() {
                total = total + acc / set.len() as f64;
            }
        }

        let residual_points = problem.residual_points(q);
        let order = if variant.diffusivity().is_some() { DerivOrder::Second } else { DerivOrder::First };
        let mut acc = zero;
        for &p in residual_points {
            let d = forward_generic(sizes, params, p.x, p.t, order)
                .map_err(|layer| Error::NonFiniteForward { layer, epoch: None })?;
            let slope = modified_slope(m, variant.flux_kind(), analysis, clamp(d.value));
            let mut r = d.d_dt + slope * d.d_dx;
            if let (Some(eps), Some(uxx)) = (variant.diffusivity(), d.d2_dx2) {
                r = r - uxx * eps;
            }
            acc = acc + r * r;
        }
        if !residual_points.is_empty() {
            total = total + acc / residual_points.len() as f64;
        }

        if problem.interface_residual_enabled() || problem.interface_average_enabled() {
            let other = neighbour.ok_or_else(|| Error::InvalidInput("XPINN loss needs the neighbour subnet".into()))?;
            let pts = problem.interface_points();
            let mut rh = zero;
            let mut avg = zero;
            for &p in pts {
                let own = value_at(sizes, params, p)?;
                let o = other.evaluate(p.x, p.t)?;
                if problem.interface_residual_enabled() {
                    let (pre, post) = if q == 0 { (own, own.constant_like(o)) } else { (own.constant_like(o), own) };
                    let num = flux(m, clamp(post)) - flux(m, clamp(pre));
                    let den = post - pre + variant.rh_stabilizer_eps;
                    let r = num / den - analysis.sigma;
                    rh = rh + r * r;
                }
                if problem.interface_average_enabled() {
                    let half = (own - o) * 0.5;
                    avg = avg + half * half;
                }
            }
            if !pts.is_empty() {
                total = total + rh / pts.len() as f64 + avg / pts.len() as f64;
            }
        }
        Ok(total)
    }
}
