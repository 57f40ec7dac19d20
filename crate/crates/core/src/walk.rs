//! The continuous-time random walk with step law Ū, exact hitting times and
//! the harmonic / polynomial martingales used as optional-stopping oracles.

use rand::{Rng, RngExt};
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{sample_step, ModelParams};
use crate::mc;
use crate::point::Point;
use crate::stats::McEstimate;

/// Default time cap for entrance problems in d = 3, where the entrance time
/// is infinite with positive probability.
pub const DEFAULT_TIME_CAP: f64 = 1e6;

/// A piecewise-constant trajectory stored exactly as its jumps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpPath {
    pub start: Point,
    pub jump_times: Vec<f64>,
    /// Position after each jump.
    pub positions: Vec<Point>,
    pub horizon: f64,
}

impl JumpPath {
    pub fn constant(start: Point, horizon: f64) -> Self {
        JumpPath {
            start,
            jump_times: Vec::new(),
            positions: Vec::new(),
            horizon,
        }
    }

    pub fn n_jumps(&self) -> usize {
        self.jump_times.len()
    }

    pub fn push(&mut self, t: f64, pos: Point) {
        debug_assert!(self.jump_times.last().is_none_or(|&last| t > last));
        self.jump_times.push(t);
        self.positions.push(pos);
    }

    /// The position after the last jump at or before `t`.
    pub fn value_at(&self, t: f64) -> Result<Point> {
        if t > self.horizon {
            return Err(Error::BeyondHorizon {
                t,
                horizon: self.horizon,
            });
        }
        let k = self.jump_times.partition_point(|&s| s <= t);
        Ok(if k == 0 {
            self.start
        } else {
            self.positions[k - 1]
        })
    }

    pub fn final_value(&self) -> Point {
        self.positions.last().copied().unwrap_or(self.start)
    }

    /// Position at index `k` of the embedded chain (index 0 is the start).
    pub fn chain(&self, k: usize) -> Point {
        if k == 0 {
            self.start
        } else {
            self.positions[k - 1]
        }
    }

    /// The holding intervals `(from, to, position)` covering `[0, horizon]`.
    pub fn sojourns(&self) -> impl Iterator<Item = (f64, f64, Point)> + '_ {
        (0..=self.jump_times.len()).map(move |k| {
            let from = if k == 0 { 0.0 } else { self.jump_times[k - 1] };
            let to = self.jump_times.get(k).copied().unwrap_or(self.horizon);
            (from, to, self.chain(k))
        })
    }

    /// sup_{s ≤ t} |value(s)|.
    pub fn sup_norm_until(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.positions[..k]
            .iter()
            .fold(self.start.norm(), |m, p| m.max(p.norm()))
    }

    /// Checks the structural invariants: increasing jump times inside the
    /// horizon and steps no longer than `max_step`.
    pub fn is_consistent(&self, max_step: f64) -> bool {
        if self.jump_times.len() != self.positions.len() {
            return false;
        }
        let times_ok = self.jump_times.windows(2).all(|w| w[0] < w[1])
            && self
                .jump_times
                .iter()
                .all(|&t| t >= 0.0 && t <= self.horizon);
        let steps_ok = (0..self.positions.len())
            .all(|k| self.chain(k + 1).dist(self.chain(k)) <= max_step * (1.0 + 1e-12));
        times_ok && steps_ok
    }
}

/// One exponential holding time at `rate`.
#[inline]
pub fn holding_time<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let e: f64 = rng.sample(Exp1);
    e / rate
}

/// A walk advanced one jump at a time, for callers that stop on events and
/// never need the stored path.
#[derive(Clone, Copy, Debug)]
pub struct WalkStepper {
    pub pos: Point,
    pub time: f64,
    pub jumps: u64,
    rate: f64,
}

impl WalkStepper {
    pub fn new(start: Point, rate: f64) -> Self {
        WalkStepper {
            pos: start,
            time: 0.0,
            jumps: 0,
            rate,
        }
    }

    /// Draws the next holding time and step; returns the new jump time.
    #[inline]
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R, params: &ModelParams) -> f64 {
        self.time += holding_time(rng, self.rate);
        self.pos += sample_step(rng, params);
        self.jumps += 1;
        self.time
    }
}

/// Rate-`rate` walk with i.i.d. Ū steps from `start`, run to `horizon`.
pub fn simulate_walk<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ModelParams,
    start: Point,
    rate: f64,
    horizon: f64,
) -> Result<JumpPath> {
    if !(rate > 0.0) {
        return Err(invalid(format!("walk rate must be positive, got {rate}")));
    }
    if !(horizon >= 0.0) {
        return Err(invalid(format!("horizon must be non-negative, got {horizon}")));
    }
    let mut path = JumpPath::constant(start, horizon);
    let mut t = holding_time(rng, rate);
    let mut pos = start;
    while t <= horizon {
        pos += sample_step(rng, params);
        path.push(t, pos);
        t += holding_time(rng, rate);
    }
    Ok(path)
}

/// t_a: first time the path is in the closed ball of radius `a`.
pub fn first_entrance(path: &JumpPath, a: f64) -> Option<f64> {
    if path.start.norm() <= a {
        return Some(0.0);
    }
    path.positions
        .iter()
        .position(|p| p.norm() <= a)
        .map(|k| path.jump_times[k])
}

/// T_A: first time the path is outside the open ball of radius `big_a`.
pub fn first_exit(path: &JumpPath, big_a: f64) -> Option<f64> {
    if path.start.norm() >= big_a {
        return Some(0.0);
    }
    path.positions
        .iter()
        .position(|p| p.norm() >= big_a)
        .map(|k| path.jump_times[k])
}

/// Space-time functions whose compositions with the walk are martingales.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MartingaleValues {
    /// log|y| (d = 2) or |y|^{2−d} (d = 3); harmonic away from B_{2r}.
    pub h_radial: f64,
    pub u2: f64,
    pub u4: f64,
}

/// The martingale functions for the walk at rate 2ρ|B_r|.
pub fn martingale_functionals(params: &ModelParams, t: f64, y: Point) -> Result<MartingaleValues> {
    martingale_functionals_at_rate(params, params.pair_rate(), t, y)
}

/// The martingale functions for a walk with jump rate `rate`.
///
/// With σ₂ = E|Ū|², σ₄ = E|Ū|⁴ and c = 2 + 4/d,
/// u4 = |y|⁴ − cλσ₂|y|²t + (c/2)(λσ₂)²t² − λσ₄t; the generator of the walk
/// maps |y|⁴ to λ(σ₄ + c σ₂|y|²), which fixes the coefficients.
pub fn martingale_functionals_at_rate(
    params: &ModelParams,
    rate: f64,
    t: f64,
    y: Point,
) -> Result<MartingaleValues> {
    if y.is_origin() {
        return Err(Error::AtOrigin);
    }
    let n2 = y.norm_sq();
    let h_radial = if params.d() == 2 {
        0.5 * n2.ln()
    } else {
        n2.sqrt().powf(2.0 - params.d() as f64)
    };
    let (u2, u4) = polynomial_martingales(params, rate, t, n2);
    Ok(MartingaleValues { h_radial, u2, u4 })
}

/// (u2, u4) as functions of t and |y|²; defined everywhere, including the
/// origin.
pub fn polynomial_martingales(params: &ModelParams, rate: f64, t: f64, norm_sq: f64) -> (f64, f64) {
    let ls2 = rate * params.step_m2();
    let c = 2.0 + 4.0 / params.d() as f64;
    let u2 = norm_sq - ls2 * t;
    let u4 = norm_sq * norm_sq - c * ls2 * norm_sq * t + 0.5 * c * ls2 * ls2 * t * t
        - rate * params.step_m4() * t;
    (u2, u4)
}

/// How a walk run between two radii ended.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stopped {
    pub pos: Point,
    pub time: f64,
    /// |Y| ≥ A happened first.
    pub exited: bool,
    /// Neither event happened before the time cap.
    pub censored: bool,
}

/// Runs the rate-2ρ|B_r| walk from `x` until t_a ∧ T_A or the time cap.
pub fn run_to_annulus_exit<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ModelParams,
    x: Point,
    a: f64,
    big_a: f64,
    time_cap: f64,
) -> Stopped {
    let (a2, big_a2) = (a * a, big_a * big_a);
    let mut w = WalkStepper::new(x, params.pair_rate());
    loop {
        let n2 = w.pos.norm_sq();
        if n2 >= big_a2 {
            return Stopped {
                pos: w.pos,
                time: w.time,
                exited: true,
                censored: false,
            };
        }
        if n2 <= a2 {
            return Stopped {
                pos: w.pos,
                time: w.time,
                exited: false,
                censored: false,
            };
        }
        let prev = (w.pos, w.time);
        if w.step(rng, params) > time_cap {
            return Stopped {
                pos: prev.0,
                time: time_cap,
                exited: false,
                censored: true,
            };
        }
    }
}

fn check_annulus(params: &ModelParams, x: Point, a: f64, big_a: f64) -> Result<()> {
    let r2 = 2.0 * params.r();
    let nx = x.norm();
    if !(r2 < a && a < nx && nx < big_a) {
        return Err(invalid(format!(
            "need 2r < a < |x| < A, got 2r = {r2}, a = {a}, |x| = {nx}, A = {big_a}"
        )));
    }
    Ok(())
}

/// Monte Carlo estimate of P_x(T_A < t_a). In d = 2 every replica
/// terminates; in d = 3 replicas still running at `time_cap` count as
/// non-exits and are reported as censored.
pub fn estimate_exit_before_entrance(
    seed: u64,
    params: &ModelParams,
    x: Point,
    a: f64,
    big_a: f64,
    replicas: u64,
    time_cap: f64,
) -> Result<McEstimate> {
    check_annulus(params, x, a, big_a)?;
    mc::estimate(seed, replicas, |_, rng| {
        let s = run_to_annulus_exit(rng, params, x, a, big_a, time_cap);
        Ok((if s.exited { 1.0 } else { 0.0 }, s.censored))
    })
}

/// The two log-ratio bounds on P_x(T_A < t_a) in d = 2:
/// `1 − (log(A+2r) − log|x|)/(log(A+2r) − log a) ≤ P ≤ (log|x| − log(a−2r))/(log A − log(a−2r))`.
pub fn exit_probability_bounds_2d(r: f64, x_norm: f64, a: f64, big_a: f64) -> (f64, f64) {
    let r2 = 2.0 * r;
    let upper = (x_norm.ln() - (a - r2).ln()) / (big_a.ln() - (a - r2).ln());
    let entrance_upper = ((big_a + r2).ln() - x_norm.ln()) / ((big_a + r2).ln() - a.ln());
    (1.0 - entrance_upper, upper)
}

/// Upper bound (a/|x|)^{d−2} on P_x(t_a < ∞) for d ≥ 3.
pub fn entrance_probability_bound(d: usize, x_norm: f64, a: f64) -> f64 {
    (a / x_norm).powi(d as i32 - 2)
}

/// Monte Carlo estimate of P_x(t_a ≤ time_cap) without an outer radius;
/// meant for d = 3, where it is bounded by P_x(t_a < ∞).
pub fn estimate_entrance_before_cap(
    seed: u64,
    params: &ModelParams,
    x: Point,
    a: f64,
    replicas: u64,
    time_cap: f64,
) -> Result<McEstimate> {
    if !(2.0 * params.r() < a && a < x.norm()) {
        return Err(invalid("need 2r < a < |x|"));
    }
    mc::estimate(seed, replicas, |_, rng| {
        let s = run_to_annulus_exit(rng, params, x, a, f64::INFINITY, time_cap);
        Ok((if s.censored { 0.0 } else { 1.0 }, s.censored))
    })
}

/// Optional stopping of the radial harmonic function at t_a ∧ T_A.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OptionalStoppingReport {
    /// Mean of h(Y_{t_a ∧ T_A}).
    pub stopped_mean: McEstimate,
    /// h(x).
    pub target: f64,
    /// Mean of 1(T_A < t_a).
    pub exit_probability: McEstimate,
}

pub fn optional_stopping_harmonic(
    seed: u64,
    params: &ModelParams,
    x: Point,
    a: f64,
    big_a: f64,
    replicas: u64,
    time_cap: f64,
) -> Result<OptionalStoppingReport> {
    check_annulus(params, x, a, big_a)?;
    let rows = mc::run_replicas(seed, replicas, |_, rng| {
        let s = run_to_annulus_exit(rng, params, x, a, big_a, time_cap);
        let h = martingale_functionals(params, 0.0, s.pos)?.h_radial;
        Ok((h, s.exited, s.censored))
    })?;
    let mut hm = crate::stats::Accumulator::new();
    let mut pe = crate::stats::Accumulator::new();
    for (h, exited, censored) in rows {
        hm.push_censored(h, censored);
        pe.push_censored(if exited { 1.0 } else { 0.0 }, censored);
    }
    Ok(OptionalStoppingReport {
        stopped_mean: hm.estimate(seed),
        target: martingale_functionals(params, 0.0, x)?.h_radial,
        exit_probability: pe.estimate(seed),
    })
}

/// Means of u2 and u4 stopped at T_A ∧ t, with their common target values
/// |x|² and |x|⁴.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PolynomialStoppingReport {
    pub u2: McEstimate,
    pub u4: McEstimate,
    pub u2_target: f64,
    pub u4_target: f64,
}

pub fn optional_stopping_polynomial(
    seed: u64,
    params: &ModelParams,
    x: Point,
    big_a: f64,
    t: f64,
    replicas: u64,
) -> Result<PolynomialStoppingReport> {
    if !(x.norm() < big_a) || !(t >= 0.0) {
        return Err(invalid("need |x| < A and t ≥ 0"));
    }
    let big_a2 = big_a * big_a;
    let rows = mc::run_replicas(seed, replicas, |_, rng| {
        let mut w = WalkStepper::new(x, params.pair_rate());
        let (pos, time) = loop {
            if w.pos.norm_sq() >= big_a2 {
                break (w.pos, w.time);
            }
            let prev = w.pos;
            if w.step(rng, params) > t {
                break (prev, t);
            }
        };
        Ok(polynomial_martingales(params, params.pair_rate(), time, pos.norm_sq()))
    })?;
    let mut a2 = crate::stats::Accumulator::new();
    let mut a4 = crate::stats::Accumulator::new();
    for (u2, u4) in rows {
        a2.push(u2);
        a4.push(u4);
    }
    let n2 = x.norm_sq();
    Ok(PolynomialStoppingReport {
        u2: a2.estimate(seed),
        u4: a4.estimate(seed),
        u2_target: n2,
        u4_target: n2 * n2,
    })
}

/// Empirical ratio P(t_{3r} < T) · log N / log(1/|w|) with T = N s and the
/// walk started at w√N; reported as a diagnostic only.
pub fn short_range_entrance_diagnostic(
    seed: u64,
    params: &ModelParams,
    n_scale: f64,
    s: f64,
    w_norm: f64,
    replicas: u64,
) -> Result<f64> {
    let start = Point::on_axis(w_norm * n_scale.sqrt());
    let a = 3.0 * params.r();
    if start.norm() <= a {
        return Err(invalid("start already inside B_{3r}"));
    }
    let p = mc::estimate(seed, replicas, |_, rng| {
        let st = run_to_annulus_exit(rng, params, start, a, f64::INFINITY, n_scale * s);
        Ok((if st.censored { 0.0 } else { 1.0 }, st.censored))
    })?;
    Ok(p.mean * n_scale.ln() / (1.0 / w_norm).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replica_rng;

    fn params(d: usize) -> ModelParams {
        ModelParams::new(d, 1.0, 1.0).unwrap()
    }

    #[test]
    fn zero_horizon_is_constant() {
        let mut rng = replica_rng(1, 0);
        let p = params(2);
        let path = simulate_walk(&mut rng, &p, Point::new2(1.0, 2.0), 3.0, 0.0).unwrap();
        assert_eq!(path.n_jumps(), 0);
        assert_eq!(path.value_at(0.0).unwrap(), Point::new2(1.0, 2.0));
        assert!(path.value_at(0.5).is_err());
    }

    #[test]
    fn paths_are_consistent_and_reproducible() {
        let p = params(3);
        let a = simulate_walk(&mut replica_rng(3, 9), &p, Point::ORIGIN, 2.0, 50.0).unwrap();
        let b = simulate_walk(&mut replica_rng(3, 9), &p, Point::ORIGIN, 2.0, 50.0).unwrap();
        assert_eq!(a, b);
        assert!(a.is_consistent(2.0));
        assert!(a.n_jumps() > 50);
    }

    #[test]
    fn handcrafted_hitting_times() {
        let mut path = JumpPath::constant(Point::on_axis(3.0), 10.0);
        path.push(1.0, Point::on_axis(4.0));
        path.push(2.0, Point::on_axis(6.0));
        path.push(3.0, Point::on_axis(2.0));
        assert_eq!(first_exit(&path, 5.0), Some(2.0));
        assert_eq!(first_entrance(&path, 2.5), Some(3.0));
        assert_eq!(first_entrance(&path, 1.0), None);
        assert_eq!(first_entrance(&path, 3.0), Some(0.0));
        assert_eq!(path.value_at(2.5).unwrap(), Point::on_axis(6.0));
        assert_eq!(path.sup_norm_until(2.5), 6.0);
    }

    #[test]
    fn martingale_functions_at_time_zero() {
        let p = params(2);
        let y = Point::new2(3.0, 4.0);
        let m = martingale_functionals(&p, 0.0, y).unwrap();
        assert_eq!(m.u2, 25.0);
        assert_eq!(m.u4, 625.0);
        assert!((m.h_radial - 5f64.ln()).abs() < 1e-15);
        let m3 = martingale_functionals(&params(3), 0.0, y).unwrap();
        assert!((m3.h_radial - 0.2).abs() < 1e-15);
        assert!(martingale_functionals(&p, 0.0, Point::ORIGIN).is_err());
    }

    #[test]
    fn u4_generator_identity_by_quadrature() {
        // ∂_t u + λ E[u(t, y+Ū) − u(t, y)] = 0, with the expectation taken
        // over a large fixed sample of steps.
        let p = ModelParams::new(2, 1.0, 0.5).unwrap();
        let lambda = p.pair_rate();
        let mut rng = replica_rng(5, 0);
        let steps: Vec<Point> = (0..200_000).map(|_| sample_step(&mut rng, &p)).collect();
        let y = Point::new2(1.5, -0.7);
        let t = 0.8;
        let u = |t: f64, y: Point| martingale_functionals_at_rate(&p, lambda, t, y).unwrap().u4;
        let gen: f64 = steps.iter().map(|s| u(t, y + *s) - u(t, y)).sum::<f64>() / steps.len() as f64;
        let dt = 1e-6;
        let du = (u(t + dt, y) - u(t - dt, y)) / (2.0 * dt);
        let total = du + lambda * gen;
        assert!(total.abs() < 0.05 * du.abs(), "residual {total}, du {du}");
    }

    #[test]
    fn bounds_are_ordered() {
        let (lo, hi) = exit_probability_bounds_2d(1.0, 6.0, 3.0, 30.0);
        assert!(0.0 < lo && lo < hi && hi < 1.0);
        assert!((entrance_probability_bound(3, 6.0, 3.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn annulus_order_validated() {
        let p = params(2);
        assert!(estimate_exit_before_entrance(1, &p, Point::on_axis(2.5), 3.0, 10.0, 10, 1e3).is_err());
    }
}
