//! Reflection coupling of two walks started on the first axis.
//!
//! The walk from x′ is built from i.i.d. uniform-ball half-steps S^{x′}.
//! Until the coupling index the walk from x is its mirror image in the
//! perpendicular bisector of x and x′; at the first half-step that lands
//! within r of the mirror image of the previous position the two are glued
//! together. Pairing half-steps gives walks with step law Ū, which share a
//! single Poisson clock in continuous time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sample_uniform_ball, ModelParams};
use crate::point::{Point, Reflection};
use crate::walk::{holding_time, JumpPath};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledPair {
    pub path_xp: JumpPath,
    pub path_x: JumpPath,
    /// N_c in half-steps; `None` if the walks had not met by the horizon.
    pub coupling_index: Option<u64>,
    /// S_c = s_{⌈N_c/2⌉}.
    pub coupling_time: Option<f64>,
    pub midpoint: f64,
}

/// The half-step chains S^{x′} and S^x.
#[derive(Clone, Debug)]
pub struct HalfStepPair {
    reflection: Option<Reflection>,
    r: f64,
    d: usize,
    pub xp: Point,
    pub x: Point,
    pub n: u64,
    pub coupling_index: Option<u64>,
}

impl HalfStepPair {
    pub fn new(d: usize, r: f64, x_prime: Point, x: Point) -> Self {
        let reflection = Reflection::bisector(x_prime, x);
        HalfStepPair {
            reflection,
            r,
            d,
            xp: x_prime,
            x,
            n: 0,
            coupling_index: if reflection.is_none() { Some(0) } else { None },
        }
    }

    pub fn coupled(&self) -> bool {
        self.coupling_index.is_some()
    }

    pub fn reflection(&self) -> Option<Reflection> {
        self.reflection
    }

    /// Advances both chains by one uniform-ball half-step.
    #[inline]
    pub fn half_step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let prev = self.xp;
        self.xp = sample_uniform_ball(rng, self.d, self.r, prev);
        self.n += 1;
        match (self.coupling_index, self.reflection) {
            (None, Some(refl)) => {
                let mirror_prev = refl.apply(prev);
                if (self.xp - mirror_prev).norm_sq() <= self.r * self.r {
                    self.coupling_index = Some(self.n);
                    self.x = self.xp;
                } else {
                    self.x = refl.apply(self.xp);
                }
            }
            _ => self.x = self.xp,
        }
    }
}

fn coupling_starts(params: &ModelParams, k: f64, x_offset: f64) -> Result<(Point, Point)> {
    let r = params.r();
    if !(k > 3.0 * r) {
        return Err(Error::InvalidGeometry(format!("need K > 3r, got K = {k}, r = {r}")));
    }
    if !(0.0..=2.0 * r).contains(&x_offset) {
        return Err(Error::InvalidGeometry(format!(
            "offset must lie in [0, 2r], got {x_offset}"
        )));
    }
    Ok((Point::on_axis(k + 2.0 * r), Point::on_axis(k + x_offset)))
}

/// Simulates the coupled continuous-time pair from x′ = (K+2r, 0) and
/// x = (K + x_offset, 0) up to `horizon`. An offset of 2r starts the walks
/// together.
pub fn simulate_coupled_pair<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ModelParams,
    k: f64,
    x_offset: f64,
    horizon: f64,
) -> Result<CoupledPair> {
    let (xp, x) = coupling_starts(params, k, x_offset)?;
    let mut chains = HalfStepPair::new(params.d(), params.r(), xp, x);
    let mut path_xp = JumpPath::constant(xp, horizon);
    let mut path_x = JumpPath::constant(x, horizon);
    let mut coupling_time = if chains.coupled() { Some(0.0) } else { None };
    let rate = params.pair_rate();
    let mut t = holding_time(rng, rate);
    while t <= horizon {
        chains.half_step(rng);
        chains.half_step(rng);
        path_xp.push(t, chains.xp);
        path_x.push(t, chains.x);
        if coupling_time.is_none() && chains.coupled() {
            coupling_time = Some(t);
        }
        t += holding_time(rng, rate);
    }
    Ok(CoupledPair {
        path_xp,
        path_x,
        coupling_index: chains.coupling_index,
        coupling_time,
        midpoint: 0.5 * (xp.0[0] + x.0[0]),
    })
}

/// N_c for the pair, or `None` if it exceeds `max_half_steps`.
pub fn coupling_index<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ModelParams,
    k: f64,
    x_offset: f64,
    max_half_steps: u64,
) -> Result<Option<u64>> {
    let (xp, x) = coupling_starts(params, k, x_offset)?;
    let mut chains = HalfStepPair::new(params.d(), params.r(), xp, x);
    while !chains.coupled() && chains.n < max_half_steps {
        chains.half_step(rng);
    }
    Ok(chains.coupling_index)
}

/// Whether the walks couple strictly before either of them enters B_δ or
/// leaves B_{2K}. Both walks share one clock, so the comparison is made on
/// the embedded chains.
pub fn couples_before_hitting<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ModelParams,
    k: f64,
    x_offset: f64,
    delta: f64,
) -> Result<bool> {
    let (xp, x) = coupling_starts(params, k, x_offset)?;
    let mut chains = HalfStepPair::new(params.d(), params.r(), xp, x);
    let (d2, out2) = (delta * delta, 4.0 * k * k);
    let hit = |p: Point| {
        let n = p.norm_sq();
        n <= d2 || n >= out2
    };
    loop {
        let hit_now = hit(chains.x) || hit(chains.xp);
        if chains.coupled() {
            return Ok(!hit_now);
        }
        if hit_now {
            return Ok(false);
        }
        chains.half_step(rng);
        chains.half_step(rng);
    }
}

/// After `n` half-steps: |S^x_n − x| and the first-axis displacement.
pub fn reflected_marginal<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ModelParams,
    k: f64,
    x_offset: f64,
    n: u64,
) -> Result<(f64, f64)> {
    let (xp, x) = coupling_starts(params, k, x_offset)?;
    let mut chains = HalfStepPair::new(params.d(), params.r(), xp, x);
    for _ in 0..n {
        chains.half_step(rng);
    }
    let disp = chains.x - x;
    Ok((disp.norm(), disp.0[0]))
}

/// The same statistics for an uncoupled uniform-ball walk.
pub fn direct_marginal<R: Rng + ?Sized>(rng: &mut R, params: &ModelParams, n: u64) -> (f64, f64) {
    let mut p = Point::ORIGIN;
    for _ in 0..n {
        p = sample_uniform_ball(rng, params.d(), params.r(), p);
    }
    (p.norm(), p.0[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replica_rng;

    fn params() -> ModelParams {
        ModelParams::new(2, 1.0, 1.0).unwrap()
    }

    #[test]
    fn identical_starts_couple_at_zero() {
        let p = params();
        let pair = simulate_coupled_pair(&mut replica_rng(1, 0), &p, 10.0, 2.0, 5.0).unwrap();
        assert_eq!(pair.coupling_index, Some(0));
        assert_eq!(pair.coupling_time, Some(0.0));
        assert_eq!(pair.path_x, pair.path_xp);
    }

    #[test]
    fn reflection_before_and_identity_after_coupling() {
        let p = params();
        for s in 0..50 {
            let pair = simulate_coupled_pair(&mut replica_rng(2, s), &p, 10.0, 0.0, 30.0).unwrap();
            let refl = Reflection::bisector(pair.path_xp.start, pair.path_x.start).unwrap();
            let ct = pair.coupling_time.unwrap_or(f64::INFINITY);
            for (k, &t) in pair.path_xp.jump_times.iter().enumerate() {
                let (a, b) = (pair.path_xp.positions[k], pair.path_x.positions[k]);
                if t >= ct {
                    assert_eq!(a, b);
                } else {
                    assert_eq!(refl.apply(a), b);
                }
            }
        }
    }

    #[test]
    fn geometry_validated() {
        let p = params();
        assert!(simulate_coupled_pair(&mut replica_rng(1, 0), &p, 2.0, 0.0, 1.0).is_err());
        assert!(coupling_index(&mut replica_rng(1, 0), &p, 10.0, 2.5, 10).is_err());
    }

    #[test]
    fn coupling_happens_at_moderate_range() {
        let p = params();
        let coupled = (0..200)
            .filter(|&s| {
                coupling_index(&mut replica_rng(3, s), &p, 10.0, 0.0, 10_000)
                    .unwrap()
                    .is_some()
            })
            .count();
        assert!(coupled > 150);
    }
}
