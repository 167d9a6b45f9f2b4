//! Exact entropy solution of the Buckley-Leverett Riemann problem.
//!
//! With `S(x, 0) = 0` and `S(0, t) = 1` the solution is self-similar in
//! `v = x / t`: a rarefaction fan on `0 < v < sigma` where `f'(S) = v`, then
//! a shock from `s*` down to zero travelling at `sigma`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux::{FluxModel, ShockAnalysis};

const INVERSION_TOL: f64 = 1e-12;
const INVERSION_MAX_ITER: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactSolution {
    pub model: FluxModel,
    pub analysis: ShockAnalysis,
}

impl ExactSolution {
    pub fn new(model: FluxModel) -> Result<Self> {
        let analysis = model.welge_analysis()?;
        Ok(Self { model, analysis })
    }

    /// Shock position at time `t`.
    pub fn shock_position(&self, t: f64) -> f64 {
        self.analysis.sigma * t
    }

    pub fn evaluate(&self, x: f64, t: f64) -> Result<f64> {
        if !x.is_finite() || !t.is_finite() {
            return Err(Error::NonFinite("oracle coordinate"));
        }
        if x < 0.0 || t < 0.0 {
            return Err(Error::InvalidInput(format!(
                "oracle needs x >= 0 and t >= 0, got ({x}, {t})"
            )));
        }
        if x == 0.0 {
            return Ok(1.0);
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        let v = x / t;
        if v > self.analysis.sigma {
            return Ok(0.0);
        }
        Ok(self.invert_characteristic_speed(v))
    }

    /// Unique `s` in `[s*, 1]` with `f'(s) = v`, for `0 <= v <= sigma`.
    fn invert_characteristic_speed(&self, v: f64) -> f64 {
        // f' decreases from sigma at s* to 0 at s = 1.
        let (mut lo, mut hi) = (self.analysis.s_star, 1.0);
        for _ in 0..INVERSION_MAX_ITER {
            if hi - lo <= INVERSION_TOL {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.model.flux_slope(mid) > v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if v >= self.analysis.sigma {
            self.analysis.s_star
        } else {
            0.5 * (lo + hi)
        }
    }

    pub fn evaluate_profile(&self, t: f64, grid: &[f64]) -> Result<Vec<f64>> {
        if grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput("profile grid must be sorted ascending".into()));
        }
        grid.iter().map(|&x| self.evaluate(x, t)).collect()
    }

    /// `|int_0^1 S(x, t) dx - t|` by composite trapezoid with the shock
    /// inserted as a breakpoint. Injected volume equals `t` because the inlet
    /// flux is `f(1) = 1` and nothing leaves before breakthrough.
    pub fn mass_balance_residual(&self, t: f64, n_quad: usize) -> Result<f64> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::InvalidInput(format!("mass balance needs t >= 0, got {t}")));
        }
        if n_quad < 1000 {
            return Err(Error::InvalidInput(format!(
                "mass balance needs at least 1000 quadrature nodes, got {n_quad}"
            )));
        }
        let x_shock = self.shock_position(t);
        if x_shock > 1.0 {
            return Err(Error::InvalidInput(format!(
                "shock at {x_shock} has left the domain at t = {t}"
            )));
        }
        if t == 0.0 {
            return Ok(0.0);
        }

        let mut nodes: Vec<f64> = (0..=n_quad).map(|i| i as f64 / n_quad as f64).collect();
        let at = nodes.partition_point(|&x| x < x_shock);
        if nodes.get(at) != Some(&x_shock) {
            nodes.insert(at, x_shock);
        }

        let mut integral = 0.0;
        for w in nodes.windows(2) {
            let (a, b) = (w[0], w[1]);
            // Right of the shock the solution vanishes; the left limit is used at the shock.
            let fa = self.evaluate(a, t)?;
            let fb = if b == x_shock { self.analysis.s_star } else { self.evaluate(b, t)? };
            let fa = if a == x_shock { 0.0 } else { fa };
            integral += 0.5 * (b - a) * (fa + fb);
        }
        Ok((integral - t).abs())
    }

    /// Writes `x,t,s_exact` rows for one time slice.
    pub fn write_profile_csv<W: Write>(&self, mut out: W, t: f64, grid: &[f64]) -> Result<()> {
        let values = self.evaluate_profile(t, grid)?;
        writeln!(out, "x,t,s_exact")?;
        for (x, s) in grid.iter().zip(values) {
            writeln!(out, "{x},{t},{s}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exact(m: f64) -> ExactSolution {
        ExactSolution::new(FluxModel::new(m).unwrap()).unwrap()
    }

    #[test]
    fn pointwise_examples() {
        let sol = exact(2.0);
        assert_eq!(sol.evaluate(0.9, 0.5).unwrap(), 0.0);
        assert_eq!(sol.evaluate(0.0, 0.3).unwrap(), 1.0);
        assert_eq!(sol.evaluate(0.0, 0.0).unwrap(), 1.0);
        assert_eq!(sol.evaluate(0.4, 0.0).unwrap(), 0.0);

        // Independent bracket search on f'(s) = 0.6 over [s*, 1].
        let s = sol.evaluate(0.3, 0.5).unwrap();
        let f = sol.model;
        let mut lo = sol.analysis.s_star;
        let mut hi = 1.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f.flux_slope(mid) > 0.6 { lo = mid } else { hi = mid }
        }
        assert!((s - lo).abs() < 1e-11);
        assert!((s - 0.888).abs() < 1e-3);
        assert!((f.flux_slope(s) - 0.6).abs() < 1e-9);
    }

    #[test]
    fn exact_shock_abscissa_returns_left_state() {
        let sol = exact(2.0);
        let t = 0.25;
        let x = sol.shock_position(t);
        assert!((sol.evaluate(x, t).unwrap() - sol.analysis.s_star).abs() < 1e-9);
    }

    #[test]
    fn rejects_invalid_coordinates() {
        let sol = exact(2.0);
        assert!(sol.evaluate(f64::NAN, 0.1).is_err());
        assert!(sol.evaluate(0.1, f64::INFINITY).is_err());
        assert!(sol.evaluate(-0.1, 0.1).is_err());
        assert!(sol.evaluate_profile(0.5, &[0.5, 0.1]).is_err());
    }

    #[test]
    fn profile_examples() {
        let sol = exact(2.0);
        let p = sol.evaluate_profile(0.5, &[0.0, 0.5561, 0.5562]).unwrap();
        assert_eq!(p[0], 1.0);
        assert!((p[1] - sol.analysis.s_star).abs() < 0.01);
        assert_eq!(p[2], 0.0);

        for m in [2.0, 30.0] {
            let p = exact(m).evaluate_profile(0.0, &[0.1, 0.5, 0.9]).unwrap();
            assert_eq!(p, vec![0.0, 0.0, 0.0]);
        }

        let sol = exact(30.0);
        let x_shock = 1.008265 * 0.9;
        assert!((sol.shock_position(0.9) - x_shock).abs() < 1e-6);
        let p = sol.evaluate_profile(0.9, &[0.90740, 0.90749]).unwrap();
        assert!(p[0] > 0.98);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn conservation() {
        for (m, t) in [(2.0, 0.5), (30.0, 0.8), (2.0, 0.2), (30.0, 0.2)] {
            let r = exact(m).mass_balance_residual(t, 10_000).unwrap();
            assert!(r < 1e-3, "M={m} t={t}: {r}");
        }
        assert_eq!(exact(2.0).mass_balance_residual(0.0, 1000).unwrap(), 0.0);
        assert!(exact(2.0).mass_balance_residual(0.95, 10_000).is_err());
        assert!(exact(2.0).mass_balance_residual(0.5, 10).is_err());
    }

    #[test]
    fn rankine_hugoniot_at_front() {
        for m in [0.5, 2.0, 30.0] {
            let sol = exact(m);
            let a = sol.analysis;
            let jump = (sol.model.flux(a.s_star) - sol.model.flux(0.0)) / (a.s_star - 0.0);
            assert!((jump - a.sigma).abs() < 1e-10);
        }
    }

    #[test]
    fn pde_residual_small_away_from_shock() {
        let sol = exact(2.0);
        let f = sol.model;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-5;
        let mut checked = 0;
        while checked < 100 {
            let x: f64 = rng.random_range(0.0..1.0);
            let t: f64 = rng.random_range(0.1..1.0);
            if (x - sol.shock_position(t)).abs() <= 0.05 || x < 2.0 * h {
                continue;
            }
            let s = |x: f64, t: f64| sol.evaluate(x, t).unwrap();
            let s_t = (s(x, t + h) - s(x, t - h)) / (2.0 * h);
            let f_x = (f.flux(s(x + h, t)) - f.flux(s(x - h, t))) / (2.0 * h);
            assert!((s_t + f_x).abs() < 1e-3, "({x}, {t}): {}", s_t + f_x);
            checked += 1;
        }
    }

    #[test]
    fn monotone_profiles() {
        let sol = exact(2.0);
        let grid: Vec<f64> = (0..=500).map(|i| i as f64 / 500.0).collect();
        for k in 1..=20 {
            let p = sol.evaluate_profile(k as f64 / 20.0, &grid).unwrap();
            assert!(p.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn self_similar() {
        let sol = exact(5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x: f64 = rng.random_range(0.0..0.5);
            let t: f64 = rng.random_range(0.01..0.5);
            let base = sol.evaluate(x, t).unwrap();
            for k in [0.5, 2.0] {
                let scaled = sol.evaluate(k * x, k * t).unwrap();
                assert!((base - scaled).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn profile_csv_has_header_and_rows() {
        let mut buf = Vec::new();
        exact(2.0).write_profile_csv(&mut buf, 0.5, &[0.0, 0.9]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "x,t,s_exact\n0,0.5,1\n0.9,0.5,0\n");
    }
}
