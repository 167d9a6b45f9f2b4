//! Nonconvex fractional-flow function and its Welge tangent analysis.
//!
//! With the relative permeabilities and viscosities folded into a single
//! mobility ratio `M`, the water fractional flow is
//!
//! ```text
//! f(s) = s^2 / (s^2 + M (1 - s)^2)
//! ```
//!
//! which is S-shaped on `[0, 1]`. The frontal saturation `s*` is the point
//! where the chord from the origin touches `f`, and the shock speed is
//! `sigma = f(s*) / s*`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Saturations within this distance of `[0, 1]` are clamped instead of rejected.
pub const SATURATION_TOL: f64 = 1e-12;

const TANGENCY_UPPER: f64 = 1.0 - 1e-9;
const TANGENCY_LOWER: f64 = 0.5;
const TANGENCY_LOWER_FALLBACK: f64 = 1e-6;
const TANGENCY_MAX_ITER: usize = 200;
const TANGENCY_RESIDUAL_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxModel {
    mobility_ratio: f64,
}

/// Frontal saturation and shock speed from the Welge tangent construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShockAnalysis {
    pub s_star: f64,
    pub sigma: f64,
}

/// Which flux a PDE residual is built from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModifiedFluxKind {
    #[default]
    Original,
    /// `s / f(s*)` below the front, `f(s)` above it. Discontinuous at `s*`.
    WelgeAsWritten,
    /// Convex hull: the tangent chord `sigma * s` below the front, `f(s)` above.
    WelgeHull,
    /// Chord `sigma * s` for `s < s*`, `f(s)` for `s >= s*`.
    Oleinik,
}

/// Value, first and second derivative of a flux at one saturation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluxEval {
    pub value: f64,
    pub slope: f64,
    pub curvature: f64,
}

impl FluxModel {
    pub fn new(mobility_ratio: f64) -> Result<Self> {
        if !mobility_ratio.is_finite() || mobility_ratio <= 0.0 {
            return Err(Error::InvalidMobilityRatio(mobility_ratio));
        }
        Ok(Self { mobility_ratio })
    }

    pub fn mobility_ratio(&self) -> f64 {
        self.mobility_ratio
    }

    /// `f(s)`, rejecting saturations outside `[0, 1]`.
    pub fn fractional_flow(&self, s: f64) -> Result<f64> {
        Ok(self.flux(check_saturation(s)?))
    }

    /// `f'(s) = 2 M s (1 - s) / D^2` with `D = s^2 + M (1 - s)^2`.
    pub fn fractional_flow_derivative(&self, s: f64) -> Result<f64> {
        Ok(self.flux_slope(check_saturation(s)?))
    }

    /// Unchecked `f(s)`. The rational form is smooth on the whole real line
    /// since the denominator never vanishes for `M > 0`.
    pub fn flux(&self, s: f64) -> f64 {
        let w = 1.0 - s;
        s * s / (s * s + self.mobility_ratio * w * w)
    }

    /// Unchecked `f'(s)`.
    pub fn flux_slope(&self, s: f64) -> f64 {
        let w = 1.0 - s;
        let d = s * s + self.mobility_ratio * w * w;
        2.0 * self.mobility_ratio * s * w / (d * d)
    }

    /// Unchecked `f''(s)`.
    pub fn flux_curvature(&self, s: f64) -> f64 {
        let m = self.mobility_ratio;
        let w = 1.0 - s;
        let d = s * s + m * w * w;
        let dd = 2.0 * s - 2.0 * m * w;
        2.0 * m * ((1.0 - 2.0 * s) * d - 2.0 * s * w * dd) / (d * d * d)
    }

    /// Solves the tangency condition `f(s) = s f'(s)` by bisection.
    ///
    /// The closed form `sqrt(M / (M + 1))` exists for this flux but is only
    /// used as a cross-check in tests.
    pub fn welge_analysis(&self) -> Result<ShockAnalysis> {
        let g = |s: f64| self.flux(s) - s * self.flux_slope(s);

        let hi = TANGENCY_UPPER;
        let mut lo = TANGENCY_LOWER;
        // s* drops below 0.5 once M < 1/3.
        if g(lo) >= 0.0 {
            lo = TANGENCY_LOWER_FALLBACK;
        }
        let (g_lo, g_hi) = (g(lo), g(hi));
        if g_lo.signum() == g_hi.signum() || !g_lo.is_finite() || !g_hi.is_finite() {
            return Err(Error::NoBracket { lo, hi });
        }

        let (mut a, mut b) = (lo, hi);
        let mut g_a = g_lo;
        for _ in 0..TANGENCY_MAX_ITER {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            let g_mid = g(mid);
            if g_mid == 0.0 {
                a = mid;
                b = mid;
                break;
            }
            if g_mid.signum() == g_a.signum() {
                a = mid;
                g_a = g_mid;
            } else {
                b = mid;
            }
        }
        let s_star = 0.5 * (a + b);
        if g(s_star).abs() >= TANGENCY_RESIDUAL_TOL {
            return Err(Error::NoBracket { lo, hi });
        }
        Ok(ShockAnalysis {
            s_star,
            sigma: self.flux(s_star) / s_star,
        })
    }

    /// Modified flux value at `s`, rejecting saturations outside `[0, 1]`.
    pub fn modified_flux(
        &self,
        kind: ModifiedFluxKind,
        analysis: &ShockAnalysis,
        s: f64,
    ) -> Result<f64> {
        let s = check_saturation(s)?;
        Ok(self.modified_flux_eval(kind, analysis, s).value)
    }

    /// Unchecked modified flux with its first two derivatives. Branches
    /// extend linearly (or by the rational form) outside `[0, 1]`.
    pub fn modified_flux_eval(
        &self,
        kind: ModifiedFluxKind,
        analysis: &ShockAnalysis,
        s: f64,
    ) -> FluxEval {
        let chord = |slope: f64| FluxEval {
            value: slope * s,
            slope,
            curvature: 0.0,
        };
        match kind {
            ModifiedFluxKind::WelgeAsWritten if s <= analysis.s_star => {
                chord(1.0 / self.flux(analysis.s_star))
            }
            ModifiedFluxKind::WelgeHull if s <= analysis.s_star => chord(analysis.sigma),
            ModifiedFluxKind::Oleinik if s < analysis.s_star => chord(analysis.sigma),
            _ => FluxEval {
                value: self.flux(s),
                slope: self.flux_slope(s),
                curvature: self.flux_curvature(s),
            },
        }
    }
}

fn check_saturation(s: f64) -> Result<f64> {
    if !s.is_finite() {
        return Err(Error::NonFinite("saturation"));
    }
    if !(-SATURATION_TOL..=1.0 + SATURATION_TOL).contains(&s) {
        return Err(Error::SaturationOutOfRange(s));
    }
    Ok(s.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SWEEP: [f64; 6] = [0.5, 1.0, 2.0, 5.0, 10.0, 30.0];

    fn model(m: f64) -> FluxModel {
        FluxModel::new(m).unwrap()
    }

    fn closed_form_s_star(m: f64) -> f64 {
        (m / (m + 1.0)).sqrt()
    }

    #[test]
    fn endpoints_and_midpoint() {
        let f = model(2.0);
        assert_eq!(f.fractional_flow(0.0).unwrap(), 0.0);
        assert_eq!(f.fractional_flow(1.0).unwrap(), 1.0);
        assert!((f.fractional_flow(0.5).unwrap() - 0.25 / 0.75).abs() < 1e-15);
    }

    #[test]
    fn derivative_examples() {
        let f = model(2.0);
        let expected = 2.0 * 2.0 * 0.5 * 0.5 / (0.75 * 0.75);
        assert!((f.fractional_flow_derivative(0.5).unwrap() - expected).abs() < 1e-14);
        assert!((expected - 1.77778).abs() < 1e-5);
        assert_eq!(f.fractional_flow_derivative(1.0).unwrap(), 0.0);
        assert_eq!(f.fractional_flow_derivative(0.0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let f = model(2.0);
        assert!(matches!(
            f.fractional_flow(1.1),
            Err(Error::SaturationOutOfRange(_))
        ));
        assert!(matches!(
            f.fractional_flow(-1e-6),
            Err(Error::SaturationOutOfRange(_))
        ));
        assert!(matches!(f.fractional_flow(f64::NAN), Err(Error::NonFinite(_))));
        assert!(f.fractional_flow(1.0 + 5e-13).is_ok());
        assert_eq!(f.fractional_flow(-5e-13).unwrap(), 0.0);
        assert!(FluxModel::new(0.0).is_err());
        assert!(FluxModel::new(-2.0).is_err());
        assert!(FluxModel::new(f64::INFINITY).is_err());
    }

    #[test]
    fn welge_examples() {
        let a = model(2.0).welge_analysis().unwrap();
        assert!((a.s_star - 0.816497).abs() < 1e-6);
        assert!((a.sigma - 1.112372).abs() < 1e-6);
        let a = model(30.0).welge_analysis().unwrap();
        assert!((a.s_star - 0.983739).abs() < 1e-6);
        assert!((a.sigma - 1.008265).abs() < 1e-6);
        let a = model(1.0).welge_analysis().unwrap();
        assert!((a.s_star - 0.5f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn welge_tangency_and_closed_form_across_sweep() {
        for m in SWEEP {
            let f = model(m);
            let a = f.welge_analysis().unwrap();
            let tangency = f.flux(a.s_star) - a.s_star * f.flux_slope(a.s_star);
            assert!(tangency.abs() < 1e-10, "M={m}: {tangency}");
            assert!((a.s_star - closed_form_s_star(m)).abs() < 1e-10, "M={m}");
            assert!((a.sigma - f.flux(a.s_star) / a.s_star).abs() < 1e-15);
            // Oleinik branches meet at the front.
            assert!((a.sigma * a.s_star - f.flux(a.s_star)).abs() < 1e-12);
        }
    }

    #[test]
    fn welge_handles_small_mobility_ratio() {
        let a = model(0.1).welge_analysis().unwrap();
        assert!((a.s_star - closed_form_s_star(0.1)).abs() < 1e-10);
    }

    #[test]
    fn modified_flux_examples() {
        let f = model(2.0);
        let a = f.welge_analysis().unwrap();
        let v = f.modified_flux(ModifiedFluxKind::Oleinik, &a, 0.4).unwrap();
        assert!((v - a.sigma * 0.4).abs() < 1e-15);
        assert!((v - 0.444949).abs() < 1e-6);
        assert_eq!(f.modified_flux(ModifiedFluxKind::Oleinik, &a, 1.0).unwrap(), 1.0);

        let f_star = a.s_star.powi(2) / (a.s_star.powi(2) + 2.0 * (1.0 - a.s_star).powi(2));
        assert!((f_star - 0.908248).abs() < 1e-6);
        let v = f
            .modified_flux(ModifiedFluxKind::WelgeAsWritten, &a, 0.4)
            .unwrap();
        assert!((v - 0.4 / f_star).abs() < 1e-14);
        assert!((v - 0.440408).abs() < 1e-6);
        assert_eq!(
            f.modified_flux(ModifiedFluxKind::WelgeAsWritten, &a, 0.0).unwrap(),
            0.0
        );

        let hull = f.modified_flux(ModifiedFluxKind::WelgeHull, &a, 0.4).unwrap();
        assert!((hull - a.sigma * 0.4).abs() < 1e-15);
        assert_eq!(
            f.modified_flux(ModifiedFluxKind::Original, &a, 0.4).unwrap(),
            f.flux(0.4)
        );
    }

    #[test]
    fn hull_and_oleinik_are_continuous_at_front() {
        let f = model(2.0);
        let a = f.welge_analysis().unwrap();
        for kind in [ModifiedFluxKind::WelgeHull, ModifiedFluxKind::Oleinik] {
            let below = f.modified_flux_eval(kind, &a, a.s_star - 1e-9).value;
            let above = f.modified_flux_eval(kind, &a, a.s_star + 1e-9).value;
            assert!((below - above).abs() < 1e-8, "{kind:?}");
        }
        // The printed Welge form jumps at the front.
        let below = f
            .modified_flux_eval(ModifiedFluxKind::WelgeAsWritten, &a, a.s_star)
            .value;
        let above = f.flux(a.s_star);
        assert!((below - above).abs() > 1e-3);
    }

    #[test]
    fn monotone_on_grid() {
        for m in SWEEP {
            let f = model(m);
            let mut prev = f.fractional_flow(0.0).unwrap();
            for i in 1..=1000 {
                let v = f.fractional_flow(i as f64 / 1000.0).unwrap();
                assert!(v >= prev, "M={m} at {i}");
                prev = v;
            }
        }
    }

    #[test]
    fn curvature_matches_finite_difference() {
        let f = model(2.0);
        for i in 1..50 {
            let s = i as f64 / 50.0;
            let h = 1e-6;
            let fd = (f.flux_slope(s + h) - f.flux_slope(s - h)) / (2.0 * h);
            let c = f.flux_curvature(s);
            assert!((fd - c).abs() <= 1e-6 * c.abs().max(1.0), "s={s}: {fd} vs {c}");
        }
    }

    proptest! {
        #[test]
        fn derivative_matches_central_difference(s in 0.001f64..0.999, m in 0.5f64..30.0) {
            let f = model(m);
            let h = 1e-6;
            let fd = (f.flux(s + h) - f.flux(s - h)) / (2.0 * h);
            let d = f.fractional_flow_derivative(s).unwrap();
            prop_assert!((fd - d).abs() <= 1e-6 * d.abs(), "{} vs {}", fd, d);
        }
    }
}
