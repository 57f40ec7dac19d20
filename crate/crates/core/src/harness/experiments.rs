//! The named experiments. Each takes a typed setup and returns a report
//! with its own checks; `bundle()` flattens a report into result rows.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Check, GridConfig, InitialCondition, ResultBundle, ResultRow};
use crate::coupling::{couples_before_hitting, coupling_index, direct_marginal, reflected_marginal};
use crate::dual::{
    estimate_gamma_e, extrapolate_c_phi, simulate_constant_rate_pair, simulate_difference_direct,
    simulate_difference_timechange, CPhiSequence, GammaMethod, KillFunction,
};
use crate::error::{invalid, Result};
use crate::forward::{mass_scale, observe_xn, run, Grid, GridBox};
use crate::functionals::{extract_martingale, sqfn_gap, FunctionalTables, TestFunction};
use crate::geometry::ModelParams;
use crate::mc;
use crate::point::Point;
use crate::rng::derive_seed;
use crate::sbm::{limit_params, sbm_mean, sbm_second_moment, GaussianMixture};
use crate::stats::{ks_two_sample, loglog_slope, KsResult, McEstimate};
use crate::walk::{
    entrance_probability_bound, estimate_entrance_before_cap, estimate_exit_before_entrance,
    exit_probability_bounds_2d, optional_stopping_harmonic, optional_stopping_polynomial,
    OptionalStoppingReport, PolynomialStoppingReport,
};

fn within(e: &McEstimate, target: f64, k: f64) -> bool {
    (e.mean - target).abs() <= k * e.se
}

// ---------------------------------------------------------------- mass

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassSetup {
    pub params: ModelParams,
    pub grid: GridConfig,
    /// w₀ in unscaled coordinates.
    pub initial: InitialCondition,
    pub horizon: f64,
    pub replicas: u64,
    /// Relative discretisation allowance.
    pub allowance: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassReport {
    /// h^d Σ w₀ on the grid.
    pub grid_mass: f64,
    /// ∫w₀ in the continuum.
    pub target: f64,
    pub final_mass: McEstimate,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn mass_experiment(s: &MassSetup) -> Result<MassReport> {
    let grid = Arc::new(s.grid.build(&s.params)?);
    let field0 = s.initial.build(grid, 1.0, s.grid.mode)?;
    let final_mass = mc::estimate(s.seed, s.replicas, |_, rng| {
        let mut field = field0.clone();
        run(rng, &mut field, &s.params, s.horizon, &[], &mut ())?;
        Ok((field.total_mass(), false))
    })?;
    let target = s.initial.continuum_mass(s.params.d());
    let tolerance = 3.0 * final_mass.se + s.allowance * target;
    Ok(MassReport {
        grid_mass: field0.total_mass(),
        target,
        final_mass,
        tolerance,
        passed: (final_mass.mean - target).abs() <= tolerance,
    })
}

impl MassReport {
    pub fn bundle(&self) -> ResultBundle {
        let mut b = ResultBundle::new("mass");
        b.rows.push(ResultRow::exact("grid_mass", self.grid_mass));
        b.rows.push(ResultRow::exact("target", self.target));
        b.rows.push(ResultRow::estimate("final_mass", &self.final_mass));
        b.checks.push(Check::new(
            "mass_conserved",
            self.passed,
            format!(
                "|{:.5} - {:.5}| vs {:.5}",
                self.final_mass.mean, self.target, self.tolerance
            ),
        ));
        b
    }
}

// ---------------------------------------------------------------- gamma_e

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaSetup {
    pub params: ModelParams,
    pub times: Vec<f64>,
    pub replicas: u64,
    pub seed: u64,
    /// Estimate every time from its own replicas (needed when estimates
    /// at different times are compared with a pooled standard error).
    pub independent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub d: usize,
    pub times: Vec<f64>,
    pub weighted: Vec<McEstimate>,
    pub direct: Vec<McEstimate>,
}

pub fn gamma_experiment(s: &GammaSetup) -> Result<GammaReport> {
    if s.times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("gamma times must be increasing"));
    }
    let run_method = |method: GammaMethod, label: &str| -> Result<Vec<McEstimate>> {
        if s.independent {
            s.times
                .iter()
                .enumerate()
                .map(|(k, &t)| {
                    let seed = derive_seed(s.seed, &format!("{label}-{k}"));
                    Ok(estimate_gamma_e(seed, &s.params, &[t], s.replicas, method)?[0])
                })
                .collect()
        } else {
            estimate_gamma_e(derive_seed(s.seed, label), &s.params, &s.times, s.replicas, method)
        }
    };
    Ok(GammaReport {
        d: s.params.d(),
        times: s.times.clone(),
        weighted: run_method(GammaMethod::Weighted, "weighted")?,
        direct: run_method(GammaMethod::Direct, "direct")?,
    })
}

impl GammaReport {
    /// (log t)·γ̂(t) for the weighted estimator.
    pub fn log_scaled(&self) -> Vec<f64> {
        self.times.iter().zip(&self.weighted).map(|(t, e)| t.ln() * e.mean).collect()
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.weighted
            .windows(2)
            .all(|w| w[0].mean - w[1].mean > 3.0 * w[0].pooled_se(&w[1]))
    }

    pub fn log_differences(&self) -> Vec<f64> {
        self.log_scaled().windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn log_differences_shrinking(&self) -> bool {
        let d = self.log_differences();
        d.len() >= 2 && d.windows(2).all(|w| w[1].abs() < w[0].abs())
    }

    /// |γ̂(t_{k−1}) − γ̂(t_k)| and 3 pooled SE for the last two times.
    pub fn plateau(&self) -> Option<(f64, f64)> {
        let n = self.weighted.len();
        (n >= 2).then(|| {
            let (a, b) = (&self.weighted[n - 2], &self.weighted[n - 1]);
            ((a.mean - b.mean).abs(), 3.0 * a.pooled_se(b))
        })
    }

    pub fn weighted_variance_not_larger(&self) -> bool {
        self.weighted
            .iter()
            .zip(&self.direct)
            .all(|(w, d)| w.variance <= d.variance)
    }

    /// The estimate of the limit constant from the largest time:
    /// (log t)·γ̂(t) in d = 2 and γ̂(t) in d ≥ 3.
    pub fn gamma_e_hat(&self) -> Option<McEstimate> {
        let (t, e) = (self.times.last()?, self.weighted.last()?);
        Some(if self.d == 2 { e.scaled(t.ln()) } else { *e })
    }

    pub fn bundle(&self) -> ResultBundle {
        let mut b = ResultBundle::new("gamma-e");
        for (k, &t) in self.times.iter().enumerate() {
            b.rows.push(ResultRow::estimate(format!("weighted_t={t}"), &self.weighted[k]));
            b.rows.push(ResultRow::estimate(format!("direct_t={t}"), &self.direct[k]));
            b.rows.push(ResultRow::exact(
                format!("log_t_weighted_t={t}"),
                t.ln() * self.weighted[k].mean,
            ));
        }
        if self.d == 2 {
            b.checks.push(Check::new(
                "strictly_decreasing",
                self.strictly_decreasing(),
                "consecutive weighted estimates differ by more than 3 pooled SE",
            ));
            b.checks.push(Check::new(
                "log_differences_shrinking",
                self.log_differences_shrinking(),
                format!("{:?}", self.log_differences()),
            ));
        } else if let Some((gap, bound)) = self.plateau() {
            b.checks.push(Check::new("plateau", gap <= bound, format!("{gap:.4e} vs {bound:.4e}")));
        }
        b.checks.push(Check::new(
            "weighted_variance",
            self.weighted_variance_not_larger(),
            "weighted variance at most direct variance at every time",
        ));
        b
    }
}

// ---------------------------------------------------------------- difference equivalence

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceSetup {
    pub params: ModelParams,
    /// Start of the difference (x₁ − x₂ with x₂ at the origin).
    pub x: Point,
    pub t: f64,
    pub replicas: u64,
    pub seed: u64,
    pub significance: f64,
}

/// Samples of τ ∧ t and |ξ̃_t| from one construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifferenceSamples {
    pub tau: Vec<f64>,
    pub endpoint: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub labels: [String; 3],
    pub samples: [DifferenceSamples; 3],
    /// KS results for the pairs (0,1), (0,2), (1,2).
    pub tau_ks: [KsResult; 3],
    pub endpoint_ks: [KsResult; 3],
    pub significance: f64,
}

const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

pub fn difference_equivalence(s: &EquivalenceSetup) -> Result<EquivalenceReport> {
    let (p, x, t) = (&s.params, s.x, s.t);
    let collect = |rows: Vec<(f64, f64)>| DifferenceSamples {
        tau: rows.iter().map(|r| r.0).collect(),
        endpoint: rows.iter().map(|r| r.1).collect(),
    };
    let direct = mc::run_replicas(derive_seed(s.seed, "direct"), s.replicas, |_, rng| {
        let (path, tau) = simulate_difference_direct(rng, p, x, t)?;
        Ok((tau.unwrap_or(t), path.final_value().norm()))
    })?;
    let timechange = mc::run_replicas(derive_seed(s.seed, "timechange"), s.replicas, |_, rng| {
        let tc = simulate_difference_timechange(rng, p, x, t)?;
        let path = tc.dual_path(t)?;
        Ok((tc.kappa.unwrap_or(t), path.final_value().norm()))
    })?;
    let pair = mc::run_replicas(derive_seed(s.seed, "constant-rate"), s.replicas, |_, rng| {
        let pr = simulate_constant_rate_pair(rng, p, x, Point::ORIGIN, t)?;
        Ok((pr.xi.tau.unwrap_or(t), pr.xi.value_at(t)?.separation()))
    })?;
    let samples = [collect(direct), collect(timechange), collect(pair)];
    let ks = |f: fn(&DifferenceSamples) -> &Vec<f64>| -> Result<[KsResult; 3]> {
        let mut out = Vec::with_capacity(3);
        for (i, j) in PAIRS {
            out.push(ks_two_sample(f(&samples[i]), f(&samples[j]))?);
        }
        Ok([out[0], out[1], out[2]])
    };
    Ok(EquivalenceReport {
        labels: ["direct".into(), "time-change".into(), "constant-rate".into()],
        tau_ks: ks(|d| &d.tau)?,
        endpoint_ks: ks(|d| &d.endpoint)?,
        samples,
        significance: s.significance,
    })
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.tau_ks
            .iter()
            .chain(&self.endpoint_ks)
            .all(|k| k.passes(self.significance))
    }

    pub fn bundle(&self) -> ResultBundle {
        let mut b = ResultBundle::new("difference-equivalence");
        for (k, &(i, j)) in PAIRS.iter().enumerate() {
            let name = format!("{}_vs_{}", self.labels[i], self.labels[j]);
            for (what, r) in [("tau", &self.tau_ks[k]), ("endpoint", &self.endpoint_ks[k])] {
                b.rows.push(ResultRow::exact(format!("ks_{what}_{name}"), r.statistic));
                b.rows.push(ResultRow::exact(format!("p_{what}_{name}"), r.p_value));
                b.checks.push(Check::new(
                    format!("{what}_{name}"),
                    r.passes(self.significance),
                    format!("D = {:.4}, p = {:.4}", r.statistic, r.p_value),
                ));
            }
        }
        b
    }
}

// ---------------------------------------------------------------- hitting

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingSetup {
    pub params: ModelParams,
    pub x_norm: f64,
    /// Inner radius a (> 2r).
    pub a: f64,
    /// Outer radius A.
    pub big_a: f64,
    /// Horizon for the polynomial martingales.
    pub poly_horizon: f64,
    /// Cap for the d ≥ 3 entrance estimate.
    pub time_cap: f64,
    pub replicas: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HittingReport {
    pub d: usize,
    pub harmonic: OptionalStoppingReport,
    pub polynomial: PolynomialStoppingReport,
    /// P(T_A < t_a) against its two bounds (d = 2), or the capped entrance
    /// probability against (a/|x|)^{d−2} (d ≥ 3).
    pub probability: McEstimate,
    pub bounds: (f64, f64),
}

pub fn hitting_experiment(s: &HittingSetup) -> Result<HittingReport> {
    let p = &s.params;
    let x = Point::on_axis(s.x_norm);
    let harmonic = optional_stopping_harmonic(
        derive_seed(s.seed, "harmonic"),
        p,
        x,
        s.a,
        s.big_a,
        s.replicas,
        s.time_cap,
    )?;
    let polynomial = optional_stopping_polynomial(
        derive_seed(s.seed, "polynomial"),
        p,
        x,
        s.big_a,
        s.poly_horizon,
        s.replicas,
    )?;
    let (probability, bounds) = if p.d() == 2 {
        let e = estimate_exit_before_entrance(
            derive_seed(s.seed, "exit"),
            p,
            x,
            s.a,
            s.big_a,
            s.replicas,
            f64::INFINITY,
        )?;
        (e, exit_probability_bounds_2d(p.r(), s.x_norm, s.a, s.big_a))
    } else {
        let e = estimate_entrance_before_cap(
            derive_seed(s.seed, "entrance"),
            p,
            x,
            s.a,
            s.replicas,
            s.time_cap,
        )?;
        (e, (0.0, entrance_probability_bound(p.d(), s.x_norm, s.a)))
    };
    Ok(HittingReport {
        d: p.d(),
        harmonic,
        polynomial,
        probability,
        bounds,
    })
}

impl HittingReport {
    pub fn checks(&self) -> Vec<Check> {
        let h = &self.harmonic;
        let q = &self.polynomial;
        let pr = &self.probability;
        let (lo, hi) = self.bounds;
        vec![
            Check::new(
                "harmonic",
                within(&h.stopped_mean, h.target, 3.0),
                format!("{:.5} ± {:.5} vs {:.5}", h.stopped_mean.mean, h.stopped_mean.se, h.target),
            ),
            Check::new(
                "u2",
                within(&q.u2, q.u2_target, 3.0),
                format!("{:.4} ± {:.4} vs {:.4}", q.u2.mean, q.u2.se, q.u2_target),
            ),
            Check::new(
                "u4",
                within(&q.u4, q.u4_target, 3.0),
                format!("{:.4} ± {:.4} vs {:.4}", q.u4.mean, q.u4.se, q.u4_target),
            ),
            Check::new(
                "hitting_bounds",
                pr.mean >= lo - 3.0 * pr.se && pr.mean <= hi + 3.0 * pr.se,
                format!("{lo:.4} ≤ {:.4} ± {:.4} ≤ {hi:.4}", pr.mean, pr.se),
            ),
        ]
    }

    pub fn bundle(&self) -> ResultBundle {
        let mut b = ResultBundle::new("hitting");
        b.rows.push(ResultRow::estimate("harmonic_stopped", &self.harmonic.stopped_mean));
        b.rows.push(ResultRow::exact("harmonic_target", self.harmonic.target));
        b.rows.push(ResultRow::estimate("u2_stopped", &self.polynomial.u2));
        b.rows.push(ResultRow::exact("u2_target", self.polynomial.u2_target));
        b.rows.push(ResultRow::estimate("u4_stopped", &self.polynomial.u4));
        b.rows.push(ResultRow::exact("u4_target", self.polynomial.u4_target));
        b.rows.push(ResultRow::estimate("probability", &self.probability));
        b.rows.push(ResultRow::exact("lower_bound", self.bounds.0));
        b.rows.push(ResultRow::exact("upper_bound", self.bounds.1));
        b.checks = self.checks();
        b
    }
}

// ---------------------------------------------------------------- coupling

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingSetup {
    pub params: ModelParams,
    pub ks: Vec<f64>,
    /// Half-steps before the marginal comparison.
    pub marginal_steps: u64,
    /// Cap on N_c for the tail estimate.
    pub max_half_steps: u64,
    pub replicas: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    /// KS of |S_n − x| and of the first-axis displacement.
    pub marginal_norm: KsResult,
    pub marginal_axis: KsResult,
    /// (n, P̂(N_c ≥ n)) on a logarithmic grid of n.
    pub tail: Vec<(f64, f64)>,
    pub slope: (f64, f64),
    /// (K, P̂(coupling before hitting)).
    pub before_hitting: Vec<(f64, McEstimate)>,
}

pub fn coupling_experiment(s: &CouplingSetup) -> Result<CouplingReport> {
    let p = &s.params;
    let k0 = s.ks.first().copied().ok_or_else(|| invalid("need at least one K"))?;
    let n = s.marginal_steps;
    let reflected = mc::run_replicas(derive_seed(s.seed, "reflected"), s.replicas, |_, rng| {
        reflected_marginal(rng, p, k0, 0.0, n)
    })?;
    let direct = mc::run_replicas(derive_seed(s.seed, "direct"), s.replicas, |_, rng| {
        Ok(direct_marginal(rng, p, n))
    })?;
    let col = |v: &[(f64, f64)], k: usize| -> Vec<f64> {
        v.iter().map(|r| if k == 0 { r.0 } else { r.1 }).collect()
    };
    let marginal_norm = ks_two_sample(&col(&reflected, 0), &col(&direct, 0))?;
    let marginal_axis = ks_two_sample(&col(&reflected, 1), &col(&direct, 1))?;

    let cap = s.max_half_steps;
    let indices = mc::run_replicas(derive_seed(s.seed, "tail"), s.replicas, |_, rng| {
        coupling_index(rng, p, k0, 0.0, cap)
    })?;
    let total = indices.len() as f64;
    let tail: Vec<(f64, f64)> = (0..=12)
        .map(|k| 10f64.powf(1.0 + k as f64 / 4.0))
        .filter(|&m| m <= cap as f64)
        .map(|m| {
            let hits = indices.iter().filter(|i| i.is_none_or(|i| i as f64 >= m)).count();
            (m, hits as f64 / total)
        })
        .collect();
    let usable: Vec<(f64, f64)> = tail.iter().copied().filter(|&(_, q)| q > 0.0).collect();
    let slope = loglog_slope(&usable)?;

    let delta = 3.0 * p.r();
    let mut before_hitting = Vec::with_capacity(s.ks.len());
    for (idx, &k) in s.ks.iter().enumerate() {
        let e = mc::estimate(derive_seed(s.seed, &format!("hit-{idx}")), s.replicas, |_, rng| {
            Ok((if couples_before_hitting(rng, p, k, 0.0, delta)? { 1.0 } else { 0.0 }, false))
        })?;
        before_hitting.push((k, e));
    }
    Ok(CouplingReport {
        marginal_norm,
        marginal_axis,
        tail,
        slope,
        before_hitting,
    })
}

impl CouplingReport {
    pub fn slope_ok(&self) -> bool {
        (self.slope.0 + 0.5).abs() <= 0.1
    }

    /// Failure frequencies 1 − P̂ decrease with K, and (1 − P̂)√K stays
    /// below its value at the smallest K up to 3 SE.
    pub fn hitting_trend_ok(&self) -> bool {
        let fail: Vec<(f64, f64, f64)> = self
            .before_hitting
            .iter()
            .map(|(k, e)| (*k, 1.0 - e.mean, e.se))
            .collect();
        let Some(&(k0, f0, _)) = fail.first() else {
            return false;
        };
        let c = f0 * k0.sqrt();
        fail.windows(2).all(|w| w[1].1 < w[0].1)
            && fail.iter().all(|&(k, f, se)| f * k.sqrt() <= c + 3.0 * se * k.sqrt())
    }

    pub fn bundle(&self) -> ResultBundle {
        let mut b = ResultBundle::new("coupling");
        b.rows.push(ResultRow::exact("ks_norm", self.marginal_norm.statistic));
        b.rows.push(ResultRow::exact("ks_axis", self.marginal_axis.statistic));
        for &(n, q) in &self.tail {
            b.rows.push(ResultRow::exact(format!("tail_n={n}"), q));
        }
        b.rows.push(ResultRow {
            key: "slope".into(),
            value: self.slope.0,
            se: self.slope.1,
            n: self.tail.len() as u64,
        });
        for (k, e) in &self.before_hitting {
            b.rows.push(ResultRow::estimate(format!("couple_before_hit_K={k}"), e));
        }
        b.checks.push(Check::new(
            "marginal",
            self.marginal_norm.passes(0.01) && self.marginal_axis.passes(0.01),
            format!(
                "p = {:.3}, {:.3}",
                self.marginal_norm.p_value, self.marginal_axis.p_value
            ),
        ));
        b.checks.push(Check::new(
            "tail_slope",
            self.slope_ok(),
            format!("{:.3} ± {:.3}", self.slope.0, self.slope.1),
        ));
        b.checks.push(Check::new("coupling_before_hitting", self.hitting_trend_ok(), ""));
        b
    }
}

// ---------------------------------------------------------------- Φ limit

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhiSetup {
    pub params: ModelParams,
    pub radii: Vec<f64>,
    pub starts: Vec<f64>,
    #[serde(skip, default = "local_kill")]
    pub kill: KillFunction,
    pub replicas: u64,
    pub seed: u64,
}

fn local_kill() -> KillFunction {
    KillFunction::Local
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiReport {
    pub starts: Vec<f64>,
    pub sequences: Vec<CPhiSequence>,
}

/// Each start uses its own seed, so estimates at different starts are
/// independent.
pub fn phi_limit_experiment(s: &PhiSetup) -> Result<PhiReport> {
    if s.starts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("starts must be increasing"));
    }
    let sequences = s
        .starts
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            extrapolate_c_phi(
                derive_seed(s.seed, &format!("start-{k}")),
                &s.params,
                Point::on_axis(x),
                &s.radii,
                &s.kill,
                s.replicas,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PhiReport {
        starts: s.starts.clone(),
        sequences,
    })
}

impl PhiReport {
    pub fn limits_ok(&self) -> bool {
        self.sequences
            .iter()
            .all(|q| q.differences_shrinking && q.values.iter().all(|v| v.mean > 0.0))
    }

    /// Φ̂ increases with |x| beyond 3 pooled SE at every A.
    pub fn monotone_ok(&self) -> bool {
        self.sequences.windows(2).all(|w| {
            w[0].values
                .iter()
                .zip(&w[1].values)
                .all(|(a, b)| b.mean - a.mean > 3.0 * a.pooled_se(b))
        })
    }

    pub fn bundle(&self) -> ResultBundle {
        let mut b = ResultBundle::new("phi-limit");
        for (x, q) in self.starts.iter().zip(&self.sequences) {
            for (a, v) in q.radii.iter().zip(&q.values) {
                b.rows.push(ResultRow::estimate(format!("log_a2_phi_x={x}_A={a}"), v));
            }
        }
        b.checks.push(Check::new("limit_trend", self.limits_ok(), ""));
        b.checks.push(Check::new("monotone_in_x", self.monotone_ok(), ""));
        b
    }
}

// ---------------------------------------------------------------- square function gap

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqfnSetup {
    pub params: ModelParams,
    pub ns: Vec<f64>,
    /// Rescaled horizon T.
    pub horizon: f64,
    /// Box and spacing; the box half-width is given in rescaled units and
    /// multiplied by √N.
    pub grid: GridConfig,
    /// w₀ in rescaled coordinates; a mass block is resolved per N.
    pub initial: InitialCondition,
    pub phi: TestFunction,
    pub gamma_e: f64,
    pub samples: usize,
    pub replicas: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqfnReport {
    pub ns: Vec<f64>,
    pub gaps: Vec<McEstimate>,
    /// Largest |ΔM| seen against the per-event bound, over all replicas.
    pub max_jump_ratio: f64,
}

pub fn sqfn_gap_experiment(s: &SqfnSetup) -> Result<SqfnReport> {
    let mut gaps = Vec::with_capacity(s.ns.len());
    let mut max_jump_ratio: f64 = 0.0;
    for (k, &n) in s.ns.iter().enumerate() {
        let d = s.params.d();
        let cfg = GridConfig {
            half_width: s.grid.half_width * n.sqrt(),
            ..s.grid
        };
        let grid = Arc::new(Grid::new(d, GridBox::cube(d, cfg.half_width), cfg.h, s.params.r())?);
        let field0 = s.initial.build(Arc::clone(&grid), n, cfg.mode)?;
        let tables = FunctionalTables::new(grid, s.phi.clone(), n)?;
        let rows = mc::run_replicas(derive_seed(s.seed, &format!("n-{k}")), s.replicas, |_, rng| {
            let mut field = field0.clone();
            let path = extract_martingale(rng, &mut field, &s.params, &tables, s.horizon, s.samples)?;
            let ratio = if path.jump_bound > 0.0 { path.max_jump / path.jump_bound } else { 0.0 };
            Ok((sqfn_gap(&path, &s.params, s.gamma_e), ratio))
        })?;
        let mut acc = crate::stats::Accumulator::new();
        for (g, r) in rows {
            acc.push(g);
            max_jump_ratio = max_jump_ratio.max(r);
        }
        gaps.push(acc.estimate(s.seed));
    }
    Ok(SqfnReport {
        ns: s.ns.clone(),
        gaps,
        max_jump_ratio,
    })
}

impl SqfnReport {
    pub fn strictly_decreasing(&self) -> bool {
        self.gaps.len() >= 2 && self.gaps.windows(2).all(|w| w[1].mean < w[0].mean)
    }

    pub fn bundle(&self) -> ResultBundle {
        let mut b = ResultBundle::new("sqfn-gap");
        for (n, g) in self.ns.iter().zip(&self.gaps) {
            b.rows.push(ResultRow::estimate(format!("gap_N={n}"), g));
        }
        b.rows.push(ResultRow::exact("max_jump_ratio", self.max_jump_ratio));
        b.checks.push(Check::new("gap_decreasing", self.strictly_decreasing(), ""));
        b.checks.push(Check::new(
            "jump_bound",
            self.max_jump_ratio <= 1.0,
            format!("{:.4}", self.max_jump_ratio),
        ));
        b
    }
}

// ---------------------------------------------------------------- SBM comparison

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmCompareSetup {
    pub params: ModelParams,
    pub n: f64,
    /// Rescaled time.
    pub t: f64,
    pub grid: GridConfig,
    pub initial: InitialCondition,
    pub phi: TestFunction,
    pub gamma_e: f64,
    /// Relative tolerance of the soft target.
    pub tolerance: f64,
    pub replicas: u64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmCompareReport {
    pub mean: McEstimate,
    pub second_moment: McEstimate,
    pub reference_mean: f64,
    pub reference_second_moment: f64,
    pub mean_gap: f64,
    pub second_moment_gap: f64,
    pub tolerance: f64,
}

/// X₀ as the point masses K′h^d w₀(y)/N at y/√N, one per nonzero cell.
pub fn initial_measure(field: &crate::forward::GridField, n: f64) -> GaussianMixture {
    let grid = field.grid();
    let weight = mass_scale(grid.d(), n) * grid.cell_volume() / n;
    let scale = 1.0 / n.sqrt();
    GaussianMixture {
        components: field
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(c, &v)| (weight * v, grid.center(c) * scale, 0.0))
            .collect(),
    }
}

pub fn sbm_compare_experiment(s: &SbmCompareSetup) -> Result<SbmCompareReport> {
    let grid = Arc::new(s.grid.build(&s.params)?);
    let field0 = s.initial.build(grid, s.n, s.grid.mode)?;
    let phi = s.phi.clone();
    let rows = mc::run_replicas(s.seed, s.replicas, |_, rng| {
        let mut field = field0.clone();
        run(rng, &mut field, &s.params, s.n * s.t, &[], &mut ())?;
        Ok(observe_xn(&field, s.n, |x| phi.value(x)))
    })?;
    let mut m1 = crate::stats::Accumulator::new();
    let mut m2 = crate::stats::Accumulator::new();
    for v in rows {
        m1.push(v);
        m2.push(v * v);
    }
    let sbm = limit_params(&s.params, s.gamma_e)?;
    let x0 = initial_measure(&field0, s.n);
    let reference_mean = sbm_mean(&sbm, &x0, &s.phi, s.t)?;
    let reference_second_moment = sbm_second_moment(&sbm, &x0, &s.phi, s.t)?;
    let (mean, second_moment) = (m1.estimate(s.seed), m2.estimate(s.seed));
    Ok(SbmCompareReport {
        mean,
        second_moment,
        reference_mean,
        reference_second_moment,
        mean_gap: (mean.mean - reference_mean).abs() / reference_mean.abs(),
        second_moment_gap: (second_moment.mean - reference_second_moment).abs()
            / reference_second_moment.abs(),
        tolerance: s.tolerance,
    })
}

impl SbmCompareReport {
    /// Whether both relative gaps meet the soft target.
    pub fn within_tolerance(&self) -> bool {
        self.mean_gap <= self.tolerance && self.second_moment_gap <= self.tolerance
    }

    pub fn bundle(&self) -> ResultBundle {
        let mut b = ResultBundle::new("sbm-compare");
        b.rows.push(ResultRow::estimate("mean", &self.mean));
        b.rows.push(ResultRow::exact("reference_mean", self.reference_mean));
        b.rows.push(ResultRow::estimate("second_moment", &self.second_moment));
        b.rows.push(ResultRow::exact("reference_second_moment", self.reference_second_moment));
        b.rows.push(ResultRow::exact("mean_gap", self.mean_gap));
        b.rows.push(ResultRow::exact("second_moment_gap", self.second_moment_gap));
        b.checks.push(Check::new(
            "soft_target",
            self.within_tolerance(),
            format!(
                "relative gaps {:.3} and {:.3} against {:.2}",
                self.mean_gap, self.second_moment_gap, self.tolerance
            ),
        ));
        b
    }
}

// ---------------------------------------------------------------- snapshots

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSetup {
    pub params: ModelParams,
    pub n: f64,
    pub grid: GridConfig,
    pub initial: InitialCondition,
    /// Rescaled snapshot times.
    pub times: Vec<f64>,
    pub seed: u64,
}

struct Snapshots {
    n: f64,
    files: Vec<(String, String)>,
    rows: Vec<ResultRow>,
    error: Option<crate::error::Error>,
}

impl crate::forward::Observer for Snapshots {
    fn on_sample(&mut self, field: &crate::forward::GridField, t: f64) {
        let k = self.files.len();
        let mut buf = Vec::new();
        if let Err(e) = field.write_csv(&mut buf) {
            self.error.get_or_insert(e);
        }
        let scaled = t / self.n;
        self.files
            .push((format!("snapshot_{k}.csv"), String::from_utf8_lossy(&buf).into_owned()));
        self.rows.push(ResultRow::exact(format!("mass_t={scaled}"), field.total_mass()));
        self.rows
            .push(ResultRow::exact(format!("X1_t={scaled}"), observe_xn(field, self.n, |_| 1.0)));
    }
}

/// One trajectory from stream 0, with the field dumped at each time.
pub fn snapshot_experiment(s: &SnapshotSetup) -> Result<ResultBundle> {
    if s.times.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid("snapshot times must be sorted"));
    }
    let grid = Arc::new(s.grid.build(&s.params)?);
    let mut field = s.initial.build(grid, s.n, s.grid.mode)?;
    let times: Vec<f64> = s.times.iter().map(|t| t * s.n).collect();
    let horizon = times.last().copied().unwrap_or(0.0);
    let mut obs = Snapshots {
        n: s.n,
        files: Vec::new(),
        rows: Vec::new(),
        error: None,
    };
    let mut rng = crate::rng::replica_rng(s.seed, 0);
    let stats = run(&mut rng, &mut field, &s.params, horizon, &times, &mut obs)?;
    if let Some(e) = obs.error {
        return Err(e);
    }
    let mut b = ResultBundle::new("forward-snapshot");
    b.rows = obs.rows;
    b.rows.push(ResultRow::exact("events", stats.events as f64));
    b.rows.push(ResultRow::exact("effective_events", stats.effective_events as f64));
    b.attachments = obs.files;
    Ok(b)
}
