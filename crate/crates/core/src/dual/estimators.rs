//! Non-coalescence probabilities and the killed-walk functional Φ(x, A).
//!
//! Both weighted estimators carry a survival weight exp(−∫k) along a free
//! walk. Weights that fall below [`ROULETTE_THRESHOLD`] are played off by
//! Russian roulette: the walk continues with probability w/threshold and
//! weight `threshold`, otherwise it is dropped with weight 0. This keeps
//! every estimator unbiased and every weight in [0, 1], so the weighted
//! variance never exceeds that of the survival indicator.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use super::difference_trap_time;
use crate::error::{invalid, Error, Result};
use crate::geometry::{sample_step, sample_uniform_ball, ModelParams};
use crate::mc;
use crate::point::Point;
use crate::stats::McEstimate;
use crate::walk::holding_time;

pub const ROULETTE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaMethod {
    /// Indicator of τ > t from the direct difference chain.
    Direct,
    /// Survival weight along the time-changed walk.
    Weighted,
}

#[inline]
fn roulette<R: Rng + ?Sized>(rng: &mut R, weight: f64) -> f64 {
    if weight >= ROULETTE_THRESHOLD {
        weight
    } else if rng.random::<f64>() * ROULETTE_THRESHOLD < weight {
        ROULETTE_THRESHOLD
    } else {
        0.0
    }
}

/// Survival weights of ξ̃ from x at the sorted dual times `ts`.
fn weighted_survival<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ModelParams,
    x: Point,
    ts: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; ts.len()];
    let rate = params.pair_rate();
    let two_r_sq = 4.0 * params.r() * params.r();
    let (mut y, mut weight, mut dual, mut j) = (x, 1.0f64, 0.0f64, 0usize);
    while j < ts.len() {
        let dt = holding_time(rng, rate);
        let n2 = y.norm_sq();
        let (beta, kill) = if n2 >= two_r_sq {
            (1.0, 0.0)
        } else {
            let a = n2.sqrt();
            (params.beta(a), params.kill(a))
        };
        let dual_end = dual + dt / beta;
        while j < ts.len() && ts[j] <= dual_end {
            out[j] = weight * (-kill * (ts[j] - dual) * beta).exp();
            j += 1;
        }
        if kill > 0.0 {
            weight = roulette(rng, weight * (-kill * dt).exp());
            if weight == 0.0 {
                break;
            }
        }
        dual = dual_end;
        y += sample_step(rng, params);
    }
    out
}

fn sorted_times(ts: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
    if let Some(&bad) = ts.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(invalid(format!("times must be finite and non-negative, got {bad}")));
    }
    let mut order: Vec<usize> = (0..ts.len()).collect();
    order.sort_by(|&a, &b| ts[a].total_cmp(&ts[b]));
    let sorted = order.iter().map(|&i| ts[i]).collect();
    Ok((order, sorted))
}

/// γ_e(t) at each time in `ts`, from one set of replicas. Each replica draws
/// x₁, x₂ uniformly on B_r and follows the difference from x₁ − x₂.
pub fn estimate_gamma_e(
    seed: u64,
    params: &ModelParams,
    ts: &[f64],
    replicas: u64,
    method: GammaMethod,
) -> Result<Vec<McEstimate>> {
    let (order, sorted) = sorted_times(ts)?;
    let t_max = sorted.last().copied().unwrap_or(0.0);
    let (d, r) = (params.d(), params.r());
    let per_sorted = mc::estimate_many(seed, replicas, ts.len(), |_, rng| {
        let x1 = sample_uniform_ball(rng, d, r, Point::ORIGIN);
        let x2 = sample_uniform_ball(rng, d, r, Point::ORIGIN);
        let x = x1 - x2;
        Ok(match method {
            GammaMethod::Direct => {
                let tau = difference_trap_time(rng, params, x, t_max);
                sorted
                    .iter()
                    .map(|&t| if tau.is_some_and(|tau| tau <= t) { 0.0 } else { 1.0 })
                    .collect()
            }
            GammaMethod::Weighted => weighted_survival(rng, params, x, &sorted),
        })
    })?;
    let mut out = per_sorted.clone();
    for (k, &i) in order.iter().enumerate() {
        out[i] = per_sorted[k];
    }
    Ok(out)
}

pub fn estimate_gamma_e_at(
    seed: u64,
    params: &ModelParams,
    t: f64,
    replicas: u64,
    method: GammaMethod,
) -> Result<McEstimate> {
    Ok(estimate_gamma_e(seed, params, &[t], replicas, method)?[0])
}

/// A radial killing rate for Φ.
#[derive(Clone)]
pub enum KillFunction {
    Zero,
    /// The interaction rate k of the model.
    Local,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for KillFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KillFunction::Zero => f.write_str("Zero"),
            KillFunction::Local => f.write_str("Local"),
            KillFunction::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl KillFunction {
    #[inline]
    fn rate(&self, params: &ModelParams, a: f64) -> f64 {
        match self {
            KillFunction::Zero => 0.0,
            KillFunction::Local => {
                if a >= 2.0 * params.r() {
                    0.0
                } else {
                    params.kill(a)
                }
            }
            KillFunction::Custom(f) => f(a),
        }
    }
}

/// Weights exp(−∫₀^{T_A} φ(|Y|)) at the exits from each ball in the
/// increasing list `radii`, for Y at rate 2ρ|B_r| started at x.
fn killed_exit_weights<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ModelParams,
    x: Point,
    radii: &[f64],
    kill: &KillFunction,
) -> Vec<f64> {
    let mut out = vec![0.0; radii.len()];
    let rate = params.pair_rate();
    let (mut y, mut weight, mut j) = (x, 1.0f64, 0usize);
    loop {
        let norm = y.norm();
        while j < radii.len() && norm >= radii[j] {
            out[j] = weight;
            j += 1;
        }
        if j == radii.len() {
            return out;
        }
        let phi = kill.rate(params, norm);
        if phi > 0.0 {
            let dt = holding_time(rng, rate);
            weight = roulette(rng, weight * (-phi * dt).exp());
            if weight == 0.0 {
                return out;
            }
        }
        // the holding time only matters through the killing integral
        y += sample_step(rng, params);
    }
}

/// Φ(x, A) = E_x exp(−∫₀^{T_A} φ(Y_s) ds).
pub fn estimate_phi(
    seed: u64,
    params: &ModelParams,
    x: Point,
    big_a: f64,
    kill: &KillFunction,
    replicas: u64,
) -> Result<McEstimate> {
    if x.norm() >= big_a || matches!(kill, KillFunction::Zero) {
        return Ok(McEstimate::exact(1.0, replicas, seed));
    }
    if x.is_origin() {
        return Err(Error::AtOrigin);
    }
    mc::estimate(seed, replicas, |_, rng| {
        Ok((killed_exit_weights(rng, params, x, &[big_a], kill)[0], false))
    })
}

/// log(A²)·Φ̂(x, A) along an increasing grid of A, with the successive
/// differences and whether their magnitudes shrink.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CPhiSequence {
    pub radii: Vec<f64>,
    pub values: Vec<McEstimate>,
    pub differences: Vec<f64>,
    pub differences_shrinking: bool,
}

/// All radii are estimated from the same walks, stopped at successive exits.
pub fn extrapolate_c_phi(
    seed: u64,
    params: &ModelParams,
    x: Point,
    radii: &[f64],
    kill: &KillFunction,
    replicas: u64,
) -> Result<CPhiSequence> {
    if radii.windows(2).any(|w| w[0] >= w[1]) || radii.iter().any(|&a| a <= 1.0) {
        return Err(invalid("radii must be increasing and greater than 1"));
    }
    if x.is_origin() {
        return Err(Error::AtOrigin);
    }
    let phi = if matches!(kill, KillFunction::Zero) {
        radii
            .iter()
            .map(|_| McEstimate::exact(1.0, replicas, seed))
            .collect()
    } else {
        mc::estimate_many(seed, replicas, radii.len(), |_, rng| {
            Ok(killed_exit_weights(rng, params, x, radii, kill))
        })?
    };
    let values: Vec<McEstimate> = phi
        .iter()
        .zip(radii)
        .map(|(e, &a)| e.scaled((a * a).ln()))
        .collect();
    let differences: Vec<f64> = values.windows(2).map(|w| w[1].mean - w[0].mean).collect();
    let differences_shrinking = differences.len() >= 2
        && differences
            .windows(2)
            .all(|w| w[1].abs() < w[0].abs());
    Ok(CPhiSequence {
        radii: radii.to_vec(),
        values,
        differences,
        differences_shrinking,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        ModelParams::new(2, 1.0, 1.0).unwrap()
    }

    #[test]
    fn time_zero_is_exactly_one() {
        let p = params();
        for m in [GammaMethod::Direct, GammaMethod::Weighted] {
            let e = estimate_gamma_e_at(1, &p, 0.0, 200, m).unwrap();
            assert_eq!(e.mean, 1.0);
            assert_eq!(e.se, 0.0);
        }
    }

    #[test]
    fn estimates_returned_in_caller_order() {
        let p = params();
        let ts = [10.0, 1.0, 100.0];
        let e = estimate_gamma_e(2, &p, &ts, 400, GammaMethod::Weighted).unwrap();
        assert!(e[1].mean >= e[0].mean && e[0].mean >= e[2].mean);
    }

    #[test]
    fn weighted_and_direct_agree() {
        let p = params();
        let ts = [1.0, 10.0];
        let direct = estimate_gamma_e(3, &p, &ts, 4000, GammaMethod::Direct).unwrap();
        let weighted = estimate_gamma_e(4, &p, &ts, 4000, GammaMethod::Weighted).unwrap();
        for (a, b) in direct.iter().zip(&weighted) {
            assert!((a.mean - b.mean).abs() <= 3.0 * a.pooled_se(b), "{a:?} {b:?}");
            assert!(b.variance <= a.variance);
        }
    }

    #[test]
    fn phi_trivial_cases() {
        let p = params();
        let x = Point::on_axis(3.0);
        assert_eq!(estimate_phi(1, &p, x, 10.0, &KillFunction::Zero, 10).unwrap().mean, 1.0);
        assert_eq!(estimate_phi(1, &p, x, 2.0, &KillFunction::Local, 10).unwrap().mean, 1.0);
        let seq = extrapolate_c_phi(1, &p, x, &[10.0, 100.0], &KillFunction::Zero, 10).unwrap();
        assert!((seq.values[1].mean - 100f64.powi(2).ln()).abs() < 1e-12);
        assert!(!seq.differences_shrinking);
    }

    #[test]
    fn phi_between_zero_and_one_and_consistent_across_grids() {
        let p = params();
        let x = Point::on_axis(3.0);
        let single = estimate_phi(5, &p, x, 10.0, &KillFunction::Local, 2000).unwrap();
        assert!(single.mean > 0.0 && single.mean < 1.0);
        let seq = extrapolate_c_phi(5, &p, x, &[10.0, 20.0], &KillFunction::Local, 2000).unwrap();
        let scale = 100f64.ln();
        assert!((seq.values[0].mean / scale - single.mean).abs() < 1e-12);
    }

    #[test]
    fn custom_kill_function() {
        let p = params();
        let x = Point::on_axis(1.5);
        let always = KillFunction::Custom(Arc::new(|_| 1e6));
        let e = estimate_phi(1, &p, x, 5.0, &always, 100).unwrap();
        assert_eq!(e.mean, 0.0);
    }
}
