//! Cross-checks of the forward field against its duals.
//!
//! Both sides are computed in unscaled coordinates: the rescaled field at
//! time t is the unscaled field at time N t read at √N x, and the dual
//! started from √N x is run for time N t.

use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::GaussHermite;
use rand::RngExt;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Check, GridConfig, InitialCondition, ResultBundle, ResultRow};
use crate::dual::simulate_two_particle;
use crate::error::{invalid, Result};
use crate::forward::{run, GridField};
use crate::functionals::TestFunction;
use crate::geometry::ModelParams;
use crate::mc;
use crate::point::Point;
use crate::rng::derive_seed;
use crate::stats::{Accumulator, McEstimate};
use crate::walk::WalkStepper;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualitySetup {
    pub params: ModelParams,
    pub n: f64,
    /// Rescaled time.
    pub t: f64,
    pub grid: GridConfig,
    /// w₀ in rescaled coordinates.
    pub initial: InitialCondition,
    /// ψ; must be Gaussian.
    pub psi: TestFunction,
    pub forward_replicas: u64,
    /// Dual replicas per quadrature node.
    pub dual_replicas: u64,
    /// Gauss–Hermite nodes per axis.
    pub nodes: usize,
    /// Relative discretisation allowance.
    pub allowance: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityRecord {
    pub forward: McEstimate,
    pub dual: McEstimate,
    pub pooled_se: f64,
    /// Absolute allowance: the relative allowance times the larger side.
    pub allowance: f64,
    pub gap: f64,
    pub passed: bool,
}

impl DualityRecord {
    fn new(forward: McEstimate, dual: McEstimate, rel_allowance: f64) -> Self {
        let pooled_se = forward.pooled_se(&dual);
        let allowance = rel_allowance * forward.mean.abs().max(dual.mean.abs());
        let gap = (forward.mean - dual.mean).abs();
        DualityRecord {
            forward,
            dual,
            pooled_se,
            allowance,
            gap,
            passed: gap <= 3.0 * pooled_se + allowance,
        }
    }

    pub fn bundle(&self, experiment: &str) -> ResultBundle {
        let mut b = ResultBundle::new(experiment);
        b.rows.push(ResultRow::estimate("forward", &self.forward));
        b.rows.push(ResultRow::estimate("dual", &self.dual));
        b.rows.push(ResultRow::exact("pooled_se", self.pooled_se));
        b.rows.push(ResultRow::exact("allowance", self.allowance));
        b.rows.push(ResultRow::exact("gap", self.gap));
        b.checks.push(Check::new(
            "agreement",
            self.passed,
            format!(
                "|{:.6} - {:.6}| = {:.3e} vs 3*{:.3e} + {:.3e}",
                self.forward.mean, self.dual.mean, self.gap, self.pooled_se, self.allowance
            ),
        ));
        b
    }
}

struct Prepared {
    grid: Arc<crate::forward::Grid>,
    initial_field: GridField,
    gaussian: ([f64; 3], f64, f64),
    sqrt_n: f64,
    dual_horizon: f64,
}

fn prepare(s: &DualitySetup) -> Result<Prepared> {
    if !(s.t >= 0.0) || !(s.n >= 1.0) {
        return Err(invalid("duality checks need t ≥ 0 and N ≥ 1"));
    }
    let gaussian = match s.psi {
        TestFunction::Gaussian {
            center,
            width,
            amplitude,
        } if width > 0.0 => (center, width, amplitude),
        _ => return Err(invalid("duality checks need a Gaussian ψ")),
    };
    let grid = Arc::new(s.grid.build(&s.params)?);
    let initial_field = s.initial.build(Arc::clone(&grid), s.n, s.grid.mode)?;
    Ok(Prepared {
        grid,
        initial_field,
        gaussian,
        sqrt_n: s.n.sqrt(),
        dual_horizon: s.n * s.t,
    })
}

impl Prepared {
    /// w₀ of the grid at an unscaled point; zero outside the box.
    fn w0(&self, y: Point) -> f64 {
        self.grid.locate(y).map_or(0.0, |c| self.initial_field.value(c))
    }

    /// ∫ψ = a(2πs²)^{d/2}.
    fn psi_mass(&self, d: usize) -> f64 {
        let (_, s, a) = self.gaussian;
        a * (2.0 * std::f64::consts::PI * s * s).powf(d as f64 / 2.0)
    }

    /// ∫ψ(x) w(√N x) dx for the current field.
    fn field_against_psi(&self, field: &GridField, psi: &TestFunction) -> f64 {
        let d = self.grid.d();
        let scale = 1.0 / self.sqrt_n;
        let sum: f64 = field
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(c, &v)| v * psi.value(self.grid.center(c) * scale))
            .sum();
        sum * self.grid.cell_volume() * scale.powi(d as i32)
    }
}

fn forward_side(s: &DualitySetup, prep: &Prepared, square: bool) -> Result<McEstimate> {
    let seed = derive_seed(s.seed, "forward");
    mc::estimate(seed, s.forward_replicas, |_, rng| {
        let mut field = prep.initial_field.clone();
        run(rng, &mut field, &s.params, prep.dual_horizon, &[], &mut ())?;
        let v = prep.field_against_psi(&field, &s.psi);
        Ok((if square { v * v } else { v }, false))
    })
}

/// Tensor-product Gauss–Hermite nodes for ∫exp(−|x − c|²/(2s²)) f(x) dx:
/// (point, weight) with the weights already including (√2 s)^d.
fn gauss_hermite_nodes(d: usize, per_axis: usize, center: [f64; 3], s: f64) -> Result<Vec<(Point, f64)>> {
    let deg = NonZeroUsize::new(per_axis).ok_or_else(|| invalid("need at least one node per axis"))?;
    let rule = GaussHermite::new(deg);
    let pairs = rule.as_node_weight_pairs();
    let stretch = std::f64::consts::SQRT_2 * s;
    let total = per_axis.pow(d as u32);
    let mut out = Vec::with_capacity(total);
    for mut k in 0..total {
        let mut p = Point(center);
        let mut w = 1.0;
        for axis in 0..d {
            let (node, weight) = pairs[k % per_axis];
            k /= per_axis;
            p.0[axis] += stretch * node;
            w *= stretch * weight;
        }
        out.push((p, w));
    }
    Ok(out)
}

/// Compares E w_t(ψ) from forward replicas with ∫ψ(x) E_x w₀(η_t) dx from
/// single-dual replicas at Gauss–Hermite nodes.
pub fn duality_check_first(s: &DualitySetup) -> Result<DualityRecord> {
    let prep = prepare(s)?;
    let d = s.params.d();
    let forward = forward_side(s, &prep, false)?;

    let (center, width, amplitude) = prep.gaussian;
    let nodes = gauss_hermite_nodes(d, s.nodes, center, width)?;
    let per = s.dual_replicas;
    let rate = s.params.single_rate();
    let values = mc::run_replicas(derive_seed(s.seed, "dual"), nodes.len() as u64 * per, |i, rng| {
        let start = nodes[(i / per) as usize].0 * prep.sqrt_n;
        let mut w = WalkStepper::new(start, rate);
        let end = loop {
            let before = w.pos;
            if w.step(rng, &s.params) > prep.dual_horizon {
                break before;
            }
        };
        Ok(prep.w0(end))
    })?;
    let mut mean = 0.0;
    let mut var = 0.0;
    for (k, chunk) in values.chunks(per.max(1) as usize).enumerate() {
        let mut acc = Accumulator::new();
        chunk.iter().for_each(|&v| acc.push(v));
        let e = acc.estimate(s.seed);
        let w = amplitude * nodes[k].1;
        mean += w * e.mean;
        var += w * w * e.se * e.se;
    }
    let dual = McEstimate {
        mean,
        se: var.sqrt(),
        variance: var * values.len() as f64,
        replicas: values.len() as u64,
        censored: 0,
        seed: s.seed,
    };
    Ok(DualityRecord::new(forward, dual, s.allowance))
}

/// Compares E w_t(ψ)² from forward replicas with the ψ⊗ψ average of
/// w₀(ξ¹_t)1{τ ≤ t} + w₀(ξ¹_t)w₀(ξ²_t)1{τ > t}.
///
/// The start pairs are drawn from the normalised ψ⊗ψ rather than placed on
/// a node grid: the dual functional has a logarithmic feature of width
/// r/√N along the diagonal, which a coarse tensor rule would miss. The
/// sample count is `dual_replicas · nodes^d`, the same budget as the first
/// moment.
pub fn duality_check_second(s: &DualitySetup) -> Result<DualityRecord> {
    let prep = prepare(s)?;
    let d = s.params.d();
    let forward = forward_side(s, &prep, true)?;

    let (center, width, _) = prep.gaussian;
    let samples = s.dual_replicas * (s.nodes.max(1) as u64).pow(d as u32);
    let mass = prep.psi_mass(d);
    let draw = |rng: &mut crate::rng::ReplicaRng| {
        let mut p = Point(center);
        for axis in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            p.0[axis] += width * z;
        }
        p * prep.sqrt_n
    };
    let dual = mc::estimate(derive_seed(s.seed, "dual"), samples, |_, rng| {
        let x1 = draw(rng);
        let x2 = draw(rng);
        let traj = simulate_two_particle(rng, &s.params, x1, x2, prep.dual_horizon)?;
        let end = traj.final_state();
        let a = prep.w0(end.pos1);
        let v = if traj.tau.is_some() { a } else { a * prep.w0(end.pos2) };
        Ok((v, false))
    })?
    .scaled(mass * mass);
    Ok(DualityRecord::new(forward, dual, s.allowance))
}
