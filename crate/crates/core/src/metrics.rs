//! Grading against the exact solution and diagnostics of trained models.
//!
//! L1 is the grid mean of `|pred - exact|`, L2 the root of the grid mean of
//! the squared error; the relative forms divide by the same norm of the
//! exact field.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::decomposition::Point;
use crate::diff::{batch_forward, DerivOrder};
use crate::error::{Error, Result};
use crate::flux::ShockAnalysis;
use crate::oracle::ExactSolution;
use crate::subnet::SubnetParams;

pub const DEFAULT_GRID: usize = 201;
pub const MIN_GRID: usize = 101;
/// Grading starts here to stay clear of the corner at the origin.
pub const GRID_T_MIN: f64 = 0.01;
pub const PROFILE_TIMES: [f64; 3] = [0.25, 0.5, 0.75];
pub const PLATEAU_MARGIN: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalGrid {
    pub nx: usize,
    pub nt: usize,
    pub t_min: f64,
    pub norms: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub l1_abs: f64,
    pub l2_abs: f64,
    pub l1_rel: f64,
    pub l2_rel: f64,
    pub train_seconds: Option<f64>,
    pub eval_grid: EvalGrid,
}

/// Uniform grid over `[0, 1] x [GRID_T_MIN, 1]`, x varying fastest.
pub fn grading_grid(nx: usize, nt: usize) -> Vec<Point> {
    let mut pts = Vec::with_capacity(nx * nt);
    for j in 0..nt {
        let t = GRID_T_MIN + (1.0 - GRID_T_MIN) * j as f64 / (nt - 1) as f64;
        for i in 0..nx {
            pts.push(Point::new(i as f64 / (nx - 1) as f64, t));
        }
    }
    pts
}

/// Stitched predictions at many points, one batched pass per subnet.
/// Agrees with [`crate::decomposition::stitch_prediction`] pointwise.
pub fn predict(nets: &[SubnetParams], analysis: &ShockAnalysis, points: &[Point]) -> Result<Vec<f64>> {
    let values = |net: &SubnetParams| -> Result<Vec<f64>> {
        Ok(batch_forward(net, points, DerivOrder::Value)?.values().to_vec())
    };
    match nets {
        [single] => values(single),
        [pre, post] => {
            let (a, b) = (values(pre)?, values(post)?);
            Ok(points
                .iter()
                .zip(a.iter().zip(&b))
                .map(|(p, (&u_pre, &u_post))| {
                    let shock = analysis.sigma * p.t;
                    if p.x < shock {
                        u_pre
                    } else if p.x > shock {
                        u_post
                    } else {
                        0.5 * (u_pre + u_post)
                    }
                })
                .collect())
        }
        _ => Err(Error::InvalidInput(format!("stitching supports one or two subnets, got {}", nets.len()))),
    }
}

fn check_grid(nx: usize, nt: usize) -> Result<()> {
    if nx < MIN_GRID || nt < MIN_GRID {
        return Err(Error::InvalidInput(format!("grading grid must be at least {MIN_GRID}x{MIN_GRID}, got {nx}x{nt}")));
    }
    Ok(())
}

fn report_from(pred: &[f64], exact: &[f64], nx: usize, nt: usize) -> ErrorReport {
    let n = pred.len() as f64;
    let (mut e1, mut e2, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0);
    for (p, e) in pred.iter().zip(exact) {
        let d = p - e;
        e1 += d.abs();
        e2 += d * d;
        r1 += e.abs();
        r2 += e * e;
    }
    let (l1, l2) = (e1 / n, (e2 / n).sqrt());
    let (n1, n2) = (r1 / n, (r2 / n).sqrt());
    ErrorReport {
        l1_abs: l1,
        l2_abs: l2,
        l1_rel: l1 / n1,
        l2_rel: l2 / n2,
        train_seconds: None,
        eval_grid: EvalGrid {
            nx,
            nt,
            t_min: GRID_T_MIN,
            norms: "l1 = mean|e|, l2 = sqrt(mean e^2), rel = divided by the same norm of the exact field".into(),
        },
    }
}

fn exact_on(oracle: &ExactSolution, points: &[Point]) -> Result<Vec<f64>> {
    points.iter().map(|p| oracle.evaluate(p.x, p.t)).collect()
}

/// Grades an arbitrary predictor on an `nx x nt` grid.
pub fn grade_fn<F>(predict: F, oracle: &ExactSolution, nx: usize, nt: usize) -> Result<ErrorReport>
where
    F: Fn(f64, f64) -> Result<f64>,
{
    check_grid(nx, nt)?;
    let pts = grading_grid(nx, nt);
    let pred: Vec<f64> = pts.iter().map(|p| predict(p.x, p.t)).collect::<Result<_>>()?;
    Ok(report_from(&pred, &exact_on(oracle, &pts)?, nx, nt))
}

/// Grades the stitched prediction of `nets`.
pub fn grade(nets: &[SubnetParams], oracle: &ExactSolution, nx: usize, nt: usize) -> Result<ErrorReport> {
    check_grid(nx, nt)?;
    let pts = grading_grid(nx, nt);
    let pred = predict(nets, &oracle.analysis, &pts)?;
    Ok(report_from(&pred, &exact_on(oracle, &pts)?, nx, nt))
}

/// Mean prediction ahead of the shock at `t_probe`, over `n_probe` points
/// uniformly spaced in the open interval `(sigma t + 0.05, 1)`.
pub fn post_shock_plateau(
    nets: &[SubnetParams],
    analysis: &ShockAnalysis,
    t_probe: f64,
    n_probe: usize,
) -> Result<f64> {
    let lo = analysis.sigma * t_probe + PLATEAU_MARGIN;
    if !(lo < 1.0) || n_probe == 0 {
        return Err(Error::InvalidInput(format!(
            "empty plateau probe interval ({lo}, 1) at t = {t_probe} with {n_probe} points"
        )));
    }
    let pts: Vec<Point> = (1..=n_probe)
        .map(|i| Point::new(lo + (1.0 - lo) * i as f64 / (n_probe + 1) as f64, t_probe))
        .collect();
    let values = predict(nets, analysis, &pts)?;
    Ok(values.iter().sum::<f64>() / n_probe as f64)
}

/// Midpoint of the steepest drop of the predicted profile at time `t`,
/// sampled at `nx` uniform points on `[0, 1]`.
pub fn shock_location_estimate(nets: &[SubnetParams], analysis: &ShockAnalysis, t: f64, nx: usize) -> Result<f64> {
    if nx < 2 {
        return Err(Error::InvalidInput("need at least two profile points".into()));
    }
    let xs: Vec<f64> = (0..nx).map(|i| i as f64 / (nx - 1) as f64).collect();
    let pts: Vec<Point> = xs.iter().map(|&x| Point::new(x, t)).collect();
    let u = predict(nets, analysis, &pts)?;
    let (i, _) = u
        .windows(2)
        .map(|w| w[0] - w[1])
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, drop)| if drop > best.1 { (i, drop) } else { best });
    Ok(0.5 * (xs[i] + xs[i + 1]))
}

/// Predicted and exact profiles at each time, columns `x,t,s_pred,s_exact`.
pub fn write_profiles_csv<W: Write>(
    mut out: W,
    nets: &[SubnetParams],
    oracle: &ExactSolution,
    times: &[f64],
    nx: usize,
) -> Result<()> {
    writeln!(out, "x,t,s_pred,s_exact")?;
    for &t in times {
        let pts: Vec<Point> = (0..nx).map(|i| Point::new(i as f64 / (nx - 1) as f64, t)).collect();
        let pred = predict(nets, &oracle.analysis, &pts)?;
        for (p, u) in pts.iter().zip(pred) {
            writeln!(out, "{},{},{},{}", p.x, p.t, u, oracle.evaluate(p.x, p.t)?)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::stitch_prediction;
    use crate::flux::FluxModel;

    fn oracle(m: f64) -> ExactSolution {
        ExactSolution::new(FluxModel::new(m).unwrap()).unwrap()
    }

    fn constant_net(c: f64) -> SubnetParams {
        let mut net = SubnetParams::zeros(&[2, 3, 1]).unwrap();
        net.set_bias(1, 0, c);
        net
    }

    #[test]
    fn oracle_against_itself() {
        let o = oracle(2.0);
        let r = grade_fn(|x, t| o.evaluate(x, t), &o, 101, 101).unwrap();
        assert_eq!((r.l1_abs, r.l2_abs, r.l1_rel, r.l2_rel), (0.0, 0.0, 0.0, 0.0));
    }

    /// Zero prediction: the L1 error is the grid mean of the exact field,
    /// which by mass conservation is close to the mean of t over the grid.
    #[test]
    fn zero_prediction_l1_is_mean_saturation() {
        let o = oracle(2.0);
        let r = grade(&[constant_net(0.0)], &o, 201, 201).unwrap();
        // Before breakthrough the x-integral equals t; after it, slightly less.
        let ts: Vec<f64> = (0..201).map(|j| GRID_T_MIN + (1.0 - GRID_T_MIN) * j as f64 / 200.0).collect();
        let upper = ts.iter().sum::<f64>() / ts.len() as f64;
        assert!(r.l1_abs <= upper + 0.01 && r.l1_abs > upper - 0.03, "{} vs {upper}", r.l1_abs);
        assert!((r.l1_rel - 1.0).abs() < 1e-12 && (r.l2_rel - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dominated_prediction_has_larger_errors() {
        let o = oracle(2.0);
        let good = grade_fn(|x, t| Ok(o.evaluate(x, t)? + 0.05), &o, 101, 101).unwrap();
        let bad = grade_fn(|x, t| Ok(o.evaluate(x, t)? + 0.2), &o, 101, 101).unwrap();
        assert!(bad.l1_abs >= good.l1_abs && bad.l2_abs >= good.l2_abs);
        assert!(bad.l1_rel >= good.l1_rel && bad.l2_rel >= good.l2_rel);
    }

    #[test]
    fn rejects_small_grids() {
        assert!(grade(&[constant_net(0.0)], &oracle(2.0), 100, 201).is_err());
    }

    #[test]
    fn batched_prediction_matches_stitching() {
        let o = oracle(2.0);
        let nets = vec![SubnetParams::init(&[2, 5, 1], 1).unwrap(), SubnetParams::init(&[2, 4, 1], 2).unwrap()];
        let mut pts = grading_grid(11, 11);
        pts.push(Point::new(o.analysis.sigma * 0.5, 0.5));
        let batched = predict(&nets, &o.analysis, &pts).unwrap();
        for (p, b) in pts.iter().zip(batched) {
            let s = stitch_prediction(&nets, &o.analysis, p.x, p.t).unwrap();
            assert!((s - b).abs() < 1e-14);
        }
    }

    #[test]
    fn plateau_examples() {
        let o = oracle(2.0);
        let pre = constant_net(0.9);
        assert!((post_shock_plateau(&[pre.clone(), constant_net(0.1)], &o.analysis, 0.5, 50).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(post_shock_plateau(&[pre, constant_net(0.0)], &o.analysis, 0.5, 50).unwrap(), 0.0);
        assert!(post_shock_plateau(&[constant_net(0.0)], &o.analysis, 0.9, 50).is_err());
    }

    #[test]
    fn stitched_oracle_like_nets_locate_the_shock() {
        let o = oracle(2.0);
        let nets = [constant_net(o.analysis.s_star), constant_net(0.0)];
        let x = shock_location_estimate(&nets, &o.analysis, 0.5, 1001).unwrap();
        assert!((x - o.analysis.sigma * 0.5).abs() <= 1e-3);
    }

    #[test]
    fn profile_csv() {
        let o = oracle(2.0);
        let mut buf = Vec::new();
        write_profiles_csv(&mut buf, &[constant_net(0.0)], &o, &PROFILE_TIMES, 11).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 33);
        assert!(text.starts_with("x,t,s_pred,s_exact\n0,0.25,0,1\n"));
    }
}
