//! The two-particle dual built from three independent constant-rate walks.
//!
//! W¹ and W² run independently at rate ρ|B_r| and the pair is killed at
//! rate k(|W¹ − W²|). At the kill time κ̄ the pair jumps to a common landing
//! point U + U_{W(κ̄−)} and afterwards both coordinates follow W³. Running
//! the pair with the clock Ī(s) = ∫₀ˢ 1/β(W̄_u) du, where β = 1 on the
//! diagonal, reproduces the two-particle dual.

use rand::{Rng, RngExt};
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::{coalescence_landing, DualPairState, PairTrajectory};
use crate::error::{Error, Result};
use crate::geometry::ModelParams;
use crate::point::Point;
use crate::walk::{simulate_walk, JumpPath};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantRatePair {
    /// W¹ from x₁, W² from x₂ and W³ from the origin.
    pub walks: [JumpPath; 3],
    /// κ̄ on the clock of the walks.
    pub kappa_bar: Option<f64>,
    pub landing: Option<Point>,
    /// ξ̄ on dual times [0, t]; its `tau` is Ī(κ̄) when that is at most t.
    pub xi: PairTrajectory,
}

impl ConstantRatePair {
    /// Both sides of the sup bound at dual time `t`:
    /// sup_{s≤t} max(|ξ̄¹_s|, |ξ̄²_s|) and Σᵢ sup_{s≤t}|Wⁱ_s| + 2√2 r.
    pub fn sup_bound(&self, t: f64, r: f64) -> (f64, f64) {
        let lhs = self.xi.sup_max_norm_until(t);
        let rhs = self.walks.iter().map(|w| w.sup_norm_until(t)).sum::<f64>()
            + 2.0 * std::f64::consts::SQRT_2 * r;
        (lhs, rhs)
    }
}

pub fn simulate_constant_rate_pair<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ModelParams,
    x1: Point,
    x2: Point,
    t: f64,
) -> Result<ConstantRatePair> {
    let rate = params.single_rate();
    // Ī(s) ≥ s, so walks of length t cover dual time t.
    let w1 = simulate_walk(rng, params, x1, rate, t)?;
    let w2 = simulate_walk(rng, params, x2, rate, t)?;
    let w3 = simulate_walk(rng, params, Point::ORIGIN, rate, t)?;
    let mark: f64 = rng.sample(Exp1);

    let mut xi = PairTrajectory::new(DualPairState::new(x1, x2), t);
    let (mut y1, mut y2) = (x1, x2);
    let (mut i1, mut i2) = (0usize, 0usize);
    let (mut s, mut dual, mut accumulated) = (0.0f64, 0.0f64, 0.0f64);
    let mut kappa_bar = None;

    if x1 == x2 {
        kappa_bar = Some(0.0);
    } else {
        loop {
            let a = y1.dist(y2);
            if a == 0.0 {
                return Err(Error::Degenerate {
                    separation: 0.0,
                    beta: params.beta(0.0),
                });
            }
            let (beta, kill) = (params.beta(a), params.kill(a));
            let n1 = w1.jump_times.get(i1).copied().unwrap_or(f64::INFINITY);
            let n2 = w2.jump_times.get(i2).copied().unwrap_or(f64::INFINITY);
            let next = n1.min(n2).min(t);
            let gain = kill * (next - s);
            if kill > 0.0 && accumulated + gain > mark {
                let kb = s + (mark - accumulated) / kill;
                let dual_kappa = dual + (kb - s) / beta;
                if dual_kappa <= t {
                    kappa_bar = Some(kb);
                    dual = dual_kappa;
                }
                break;
            }
            accumulated += gain;
            dual += (next - s) / beta;
            s = next;
            if next >= t || dual > t {
                break;
            }
            if n1 <= n2 {
                y1 = w1.positions[i1];
                i1 += 1;
            } else {
                y2 = w2.positions[i2];
                i2 += 1;
            }
            xi.push(dual, DualPairState::new(y1, y2));
        }
    }

    let mut landing = None;
    if let Some(kb) = kappa_bar {
        let base = if kb == 0.0 {
            x1
        } else {
            coalescence_landing(rng, params, y1, y2)?
        };
        landing = Some(base);
        let coalesced = |p: Point| DualPairState {
            pos1: p,
            pos2: p,
            coalesced: true,
            tau: Some(dual),
        };
        xi.tau = Some(dual);
        if kb > 0.0 {
            xi.push(dual, coalesced(base));
        } else {
            xi.start = coalesced(base);
        }
        // after κ̄ the clock runs at unit speed
        for (&s3, &p3) in w3.jump_times.iter().zip(&w3.positions) {
            let when = dual + s3;
            if when > t {
                break;
            }
            xi.push(when, coalesced(base + p3));
        }
    }

    Ok(ConstantRatePair {
        walks: [w1, w2, w3],
        kappa_bar,
        landing,
        xi,
    })
}
