//! One- and two-particle coalescing duals, the dual difference process and
//! the estimators built on them.

mod constant_rate;
mod estimators;
mod timechange;

pub use constant_rate::{simulate_constant_rate_pair, ConstantRatePair};
pub use estimators::{
    estimate_gamma_e, estimate_gamma_e_at, estimate_phi, extrapolate_c_phi, CPhiSequence,
    GammaMethod, KillFunction, ROULETTE_THRESHOLD,
};
pub use timechange::{
    build_time_change, simulate_difference_timechange, survival_weight, TimeChangedDifference,
};

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{sample_lens_point, sample_step, sample_uniform_ball, ModelParams};
use crate::point::Point;
use crate::walk::{holding_time, simulate_walk, JumpPath};

/// The single-particle dual: a walk with jump rate ρ|B_r|.
pub fn simulate_single_dual<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ModelParams,
    start: Point,
    horizon: f64,
) -> Result<JumpPath> {
    simulate_walk(rng, params, start, params.single_rate(), horizon)
}

/// Positions of the two dual particles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualPairState {
    pub pos1: Point,
    pub pos2: Point,
    pub coalesced: bool,
    pub tau: Option<f64>,
}

impl DualPairState {
    pub fn new(x1: Point, x2: Point) -> Self {
        let same = x1 == x2;
        DualPairState {
            pos1: x1,
            pos2: x2,
            coalesced: same,
            tau: same.then_some(0.0),
        }
    }

    pub fn separation(&self) -> f64 {
        self.pos1.dist(self.pos2)
    }

    /// max(|ξ¹|, |ξ²|).
    pub fn max_norm(&self) -> f64 {
        self.pos1.norm().max(self.pos2.norm())
    }
}

/// A piecewise-constant trajectory of the two-particle dual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTrajectory {
    pub start: DualPairState,
    pub jump_times: Vec<f64>,
    pub states: Vec<DualPairState>,
    pub horizon: f64,
    pub tau: Option<f64>,
}

impl PairTrajectory {
    fn new(start: DualPairState, horizon: f64) -> Self {
        PairTrajectory {
            start,
            jump_times: Vec::new(),
            states: Vec::new(),
            horizon,
            tau: start.tau,
        }
    }

    fn push(&mut self, t: f64, s: DualPairState) {
        self.jump_times.push(t);
        self.states.push(s);
    }

    pub fn value_at(&self, t: f64) -> Result<DualPairState> {
        if t > self.horizon {
            return Err(Error::BeyondHorizon {
                t,
                horizon: self.horizon,
            });
        }
        let k = self.jump_times.partition_point(|&s| s <= t);
        Ok(if k == 0 { self.start } else { self.states[k - 1] })
    }

    /// sup_{s ≤ t} max(|ξ¹_s|, |ξ²_s|).
    pub fn sup_max_norm_until(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.states[..k]
            .iter()
            .fold(self.start.max_norm(), |m, s| m.max(s.max_norm()))
    }

    pub fn final_state(&self) -> DualPairState {
        self.states.last().copied().unwrap_or(self.start)
    }
}

/// Landing point U + U_{y1,y2} of a coalescence from (y1, y2).
fn coalescence_landing<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ModelParams,
    y1: Point,
    y2: Point,
) -> Result<Point> {
    let lens = sample_lens_point(rng, params, y1, y2)?;
    Ok(lens + sample_uniform_ball(rng, params.d(), params.r(), Point::ORIGIN))
}

/// The two-particle dual as an exact continuous-time Markov chain.
pub fn simulate_two_particle<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ModelParams,
    x1: Point,
    x2: Point,
    horizon: f64,
) -> Result<PairTrajectory> {
    if !(horizon >= 0.0) {
        return Err(invalid("horizon must be non-negative"));
    }
    let mut state = DualPairState::new(x1, x2);
    let mut traj = PairTrajectory::new(state, horizon);
    let single = params.single_rate();
    let mut t = 0.0;
    loop {
        if state.coalesced {
            t += holding_time(rng, single);
            if t > horizon {
                break;
            }
            let step = sample_step(rng, params);
            state.pos1 += step;
            state.pos2 = state.pos1;
        } else {
            let psi = params.psi(state.separation());
            let total = 2.0 * single - psi;
            t += holding_time(rng, total);
            if t > horizon {
                break;
            }
            let u = rng.random::<f64>() * total;
            if u < psi {
                let landing = coalescence_landing(rng, params, state.pos1, state.pos2)?;
                state = DualPairState {
                    pos1: landing,
                    pos2: landing,
                    coalesced: true,
                    tau: Some(t),
                };
                traj.tau = Some(t);
            } else if u < psi + (single - psi) {
                state.pos1 += sample_step(rng, params);
            } else {
                state.pos2 += sample_step(rng, params);
            }
        }
        traj.push(t, state);
    }
    Ok(traj)
}

/// The difference ξ¹ − ξ² as a chain with a trap at the origin: Ū-jumps at
/// rate 2ρ|B_r| − 2ψ_r(y) and absorption at rate ψ_r(y).
pub fn simulate_difference_direct<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ModelParams,
    x: Point,
    horizon: f64,
) -> Result<(JumpPath, Option<f64>)> {
    if x.is_origin() {
        return Err(Error::AtOrigin);
    }
    let mut path = JumpPath::constant(x, horizon);
    let pair = params.pair_rate();
    let mut y = x;
    let mut t = 0.0;
    loop {
        let psi = params.psi(y.norm());
        let total = pair - psi;
        t += holding_time(rng, total);
        if t > horizon {
            return Ok((path, None));
        }
        if psi > 0.0 && rng.random::<f64>() * total < psi {
            path.push(t, Point::ORIGIN);
            return Ok((path, Some(t)));
        }
        y += sample_step(rng, params);
        path.push(t, y);
    }
}

/// Trap time of the direct difference chain if it is at most `horizon`,
/// without storing the path.
pub fn difference_trap_time<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ModelParams,
    x: Point,
    horizon: f64,
) -> Option<f64> {
    let pair = params.pair_rate();
    let two_r_sq = 4.0 * params.r() * params.r();
    let mut y = x;
    let mut t = 0.0;
    loop {
        let n2 = y.norm_sq();
        if n2 >= two_r_sq {
            t += holding_time(rng, pair);
            if t > horizon {
                return None;
            }
        } else {
            let psi = params.psi(n2.sqrt());
            let total = pair - psi;
            t += holding_time(rng, total);
            if t > horizon {
                return None;
            }
            if rng.random::<f64>() * total < psi {
                return Some(t);
            }
        }
        y += sample_step(rng, params);
    }
}
