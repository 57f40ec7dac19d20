//! The dual difference as a time change of a free walk.
//!
//! Y runs at rate 2ρ|B_r|. The clock I(s) = ∫₀ˢ 1/β(Y_u) du is piecewise
//! linear, with slope 1/β(y) on a sojourn at y. The difference process is
//! ξ̃_t = Y(I⁻¹(t)), killed at the first dual time κ at which the
//! accumulated rate ∫ψ(ξ̃) exceeds an Exp(1) mark. Since ψ/β = k, the
//! accumulated rate up to dual time t equals ∫₀^{I⁻¹(t)} k(Y_u) du.

use rand::{Rng, RngExt};
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ModelParams;
use crate::point::Point;
use crate::walk::{simulate_walk, JumpPath};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeChangedDifference {
    pub base_path: JumpPath,
    /// Knots (s_k, I(s_k)) at the jump times of the base path, starting at
    /// (0, 0) and ending at the base horizon.
    pub clock_knots: Vec<(f64, f64)>,
    /// β and k on each sojourn of the base path.
    sojourn_rates: Vec<(f64, f64)>,
    pub exp_mark: Option<f64>,
    pub kappa: Option<f64>,
}

/// Builds the clock I for a sampled base path. Fails if the path visits
/// the origin, where β vanishes.
pub fn build_time_change(base_path: JumpPath, params: &ModelParams) -> Result<TimeChangedDifference> {
    let mut knots = Vec::with_capacity(base_path.n_jumps() + 2);
    let mut rates = Vec::with_capacity(base_path.n_jumps() + 1);
    knots.push((0.0, 0.0));
    let mut clock = 0.0;
    for (from, to, y) in base_path.sojourns() {
        let a = y.norm();
        if a == 0.0 {
            return Err(Error::Degenerate {
                separation: 0.0,
                beta: 0.0,
            });
        }
        let beta = params.beta(a);
        if beta <= 0.0 {
            return Err(Error::Degenerate { separation: a, beta });
        }
        clock += (to - from) / beta;
        knots.push((to, clock));
        rates.push((beta, params.kill(a)));
    }
    Ok(TimeChangedDifference {
        base_path,
        clock_knots: knots,
        sojourn_rates: rates,
        exp_mark: None,
        kappa: None,
    })
}

impl TimeChangedDifference {
    /// I(base horizon): the dual time covered by the base path.
    pub fn dual_horizon(&self) -> f64 {
        self.clock_knots.last().map_or(0.0, |k| k.1)
    }

    /// I(s) for s within the base horizon.
    pub fn clock(&self, s: f64) -> Result<f64> {
        let horizon = self.base_path.horizon;
        if !(0.0..=horizon).contains(&s) {
            return Err(Error::BeyondHorizon { t: s, horizon });
        }
        let k = self.segment(|knot| knot.0, s);
        let (s0, i0) = self.clock_knots[k];
        Ok(i0 + (s - s0) / self.sojourn_rates[k].0)
    }

    /// I⁻¹(t) for t within the dual horizon.
    pub fn inverse_clock(&self, t: f64) -> Result<f64> {
        let horizon = self.dual_horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::BeyondHorizon { t, horizon });
        }
        let k = self.segment(|knot| knot.1, t);
        let (s0, i0) = self.clock_knots[k];
        Ok((s0 + (t - i0) * self.sojourn_rates[k].0).min(self.base_path.horizon))
    }

    /// Index of the sojourn whose knot interval contains `v`.
    fn segment(&self, key: impl Fn(&(f64, f64)) -> f64, v: f64) -> usize {
        let k = self.clock_knots.partition_point(|knot| key(knot) <= v);
        k.saturating_sub(1).min(self.sojourn_rates.len() - 1)
    }

    /// ∫₀^{I⁻¹(t)} k(Y_u) du.
    pub fn kill_integral(&self, t: f64) -> Result<f64> {
        let s_end = self.inverse_clock(t)?;
        let mut total = 0.0;
        for ((from, to, _), &(_, k)) in self.base_path.sojourns().zip(&self.sojourn_rates) {
            if from >= s_end {
                break;
            }
            total += k * (to.min(s_end) - from);
        }
        Ok(total)
    }

    /// ξ̃ on [0, t] in dual time: jumps at I(s_k), sent to the origin at κ.
    pub fn dual_path(&self, t: f64) -> Result<JumpPath> {
        if t > self.dual_horizon() {
            return Err(Error::BeyondHorizon {
                t,
                horizon: self.dual_horizon(),
            });
        }
        let mut path = JumpPath::constant(self.base_path.start, t);
        let stop = self.kappa.filter(|&k| k <= t);
        for (k, &pos) in self.base_path.positions.iter().enumerate() {
            let when = self.clock_knots[k + 1].1;
            if when > t || stop.is_some_and(|kappa| when >= kappa) {
                break;
            }
            path.push(when, pos);
        }
        if let Some(kappa) = stop {
            path.push(kappa, Point::ORIGIN);
        }
        Ok(path)
    }

    /// Locates κ for a given Exp(1) mark, limited to dual times ≤ t.
    fn locate_kappa(&mut self, mark: f64, t: f64) {
        self.exp_mark = Some(mark);
        self.kappa = None;
        let mut accumulated = 0.0;
        for (k, &(beta, kill)) in self.sojourn_rates.iter().enumerate() {
            let (s0, i0) = self.clock_knots[k];
            let (s1, _) = self.clock_knots[k + 1];
            let gain = kill * (s1 - s0);
            if accumulated + gain > mark {
                let dual = i0 + (mark - accumulated) / kill / beta;
                if dual <= t {
                    self.kappa = Some(dual);
                }
                return;
            }
            accumulated += gain;
            if i0 > t {
                return;
            }
        }
    }
}

/// Samples Y, the clock and the killing mark, and returns the time-changed
/// difference on dual times [0, t].
pub fn simulate_difference_timechange<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ModelParams,
    x: Point,
    t: f64,
) -> Result<TimeChangedDifference> {
    if x.is_origin() {
        return Err(Error::AtOrigin);
    }
    // I(s) ≥ s, so a base path of length t covers dual time t.
    let base = simulate_walk(rng, params, x, params.pair_rate(), t)?;
    let mut tc = build_time_change(base, params)?;
    let mark: f64 = rng.sample(Exp1);
    tc.locate_kappa(mark, t);
    Ok(tc)
}

/// exp(−∫₀^{I⁻¹(t)} k(Y_u) du): the probability that ξ̃ survives to dual
/// time t given the base path.
pub fn survival_weight(tc: &TimeChangedDifference, t: f64) -> Result<f64> {
    if t > tc.base_path.horizon {
        return Err(Error::BeyondHorizon {
            t,
            horizon: tc.base_path.horizon,
        });
    }
    Ok((-tc.kill_integral(t)?).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replica_rng;

    fn params() -> ModelParams {
        ModelParams::new(2, 1.0, 0.5).unwrap()
    }

    fn handmade(p: &ModelParams) -> TimeChangedDifference {
        let mut path = JumpPath::constant(Point::on_axis(0.5), 3.0);
        path.push(1.0, Point::on_axis(5.0));
        path.push(2.0, Point::on_axis(1.0));
        build_time_change(path, p).unwrap()
    }

    #[test]
    fn clock_is_piecewise_linear_in_inverse_beta() {
        let p = params();
        let tc = handmade(&p);
        let (b1, b3) = (p.beta(0.5), p.beta(1.0));
        let expected = 1.0 / b1 + 1.0 + 1.0 / b3;
        assert!((tc.dual_horizon() - expected).abs() < 1e-12);
        assert!((tc.clock(0.5).unwrap() - 0.5 / b1).abs() < 1e-12);
        assert!((tc.clock(1.5).unwrap() - (1.0 / b1 + 0.5)).abs() < 1e-12);
        for s in [0.0, 0.3, 1.0, 1.7, 2.4, 3.0] {
            let back = tc.inverse_clock(tc.clock(s).unwrap()).unwrap();
            assert!((back - s).abs() < 1e-12, "{s} -> {back}");
        }
        assert!(tc.clock(3.5).is_err());
    }

    #[test]
    fn kill_integral_matches_sojourn_sum() {
        let p = params();
        let tc = handmade(&p);
        let full = p.kill(0.5) + p.kill(1.0);
        assert!((tc.kill_integral(tc.dual_horizon()).unwrap() - full).abs() < 1e-12);
        let w = survival_weight(&tc, 1.0).unwrap();
        let s = tc.inverse_clock(1.0).unwrap();
        assert!((w - (-p.kill(0.5) * s).exp()).abs() < 1e-12);
    }

    #[test]
    fn kappa_respects_mark() {
        let p = params();
        let mut tc = handmade(&p);
        let small = 0.5 * p.kill(0.5);
        tc.locate_kappa(small, tc.dual_horizon());
        let kappa = tc.kappa.unwrap();
        assert!((tc.kill_integral(kappa).unwrap() - small).abs() < 1e-12);
        tc.locate_kappa(1e9, tc.dual_horizon());
        assert!(tc.kappa.is_none());
    }

    #[test]
    fn dual_path_stops_at_kappa() {
        let p = ModelParams::new(2, 1.0, 1.0).unwrap();
        for s in 0..100 {
            let tc = simulate_difference_timechange(&mut replica_rng(1, s), &p, Point::on_axis(0.3), 20.0)
                .unwrap();
            let path = tc.dual_path(20.0).unwrap();
            assert!(tc.dual_horizon() >= 20.0);
            match tc.kappa {
                Some(k) => {
                    assert_eq!(path.final_value(), Point::ORIGIN);
                    assert_eq!(*path.jump_times.last().unwrap(), k);
                }
                None => assert!(!path.final_value().is_origin()),
            }
        }
    }

    #[test]
    fn origin_rejected() {
        let p = params();
        assert!(simulate_difference_timechange(&mut replica_rng(1, 0), &p, Point::ORIGIN, 1.0).is_err());
    }
}
