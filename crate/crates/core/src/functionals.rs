//! Semimartingale functionals of the rescaled field.
//!
//! With φ̃(y) = φ(y/√N) and, for each cell x, the stencil sums
//! W(x) = Σ_{S(x)} w, P(x) = Σ_{S(x)} φ̃ w and Φ_S(x) = Σ_{S(x)} φ̃, the
//! generator of the grid process gives, per unit of rescaled time,
//!
//! * drift      d = ρK′h^{2d}/|S| · Σ_x [W Φ_S − |S| P],
//! * bracket    m = ρ²K′²h^{3d}/(N|S|) · Σ_x [W(Φ_S − P)² + (|S| − W)P²],
//! * and its diagonal form m̄ = ρ²K′²h^{3d}/N · Σ_x φ̃(x)²(|S| − W)W.
//!
//! The drift is linear in w: d = ρK′h^{2d}/|S| · Σ_y w(y) g(y) with
//! g(y) = Σ_{x∈S(y)} Φ_S(x) − |S|²φ̃(y), which vanishes identically for φ ≡ 1.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::forward::{mass_scale, observe_xn, run, EventRecord, Grid, GridField, Observer, RunStats};
use crate::geometry::ModelParams;
use crate::point::Point;
use crate::stats::CompensatedSum;

/// A test function φ on ℝ^d.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunction {
    ConstantOne,
    /// amplitude · exp(−|x − c|²/(2 width²)).
    Gaussian {
        center: [f64; 3],
        width: f64,
        amplitude: f64,
    },
    /// Indicator of the cube of half-width `half_width` around `center`.
    IndicatorBlock { center: [f64; 3], half_width: f64 },
    /// (1 − |x − c|²/R²)⁴ on the ball of radius R; C³ with compact support.
    CompactBump { center: [f64; 3], radius: f64 },
}

impl TestFunction {
    pub fn gaussian(width: f64) -> Self {
        TestFunction::Gaussian {
            center: [0.0; 3],
            width,
            amplitude: 1.0,
        }
    }

    pub fn value(&self, p: Point) -> f64 {
        match self {
            TestFunction::ConstantOne => 1.0,
            TestFunction::Gaussian {
                center,
                width,
                amplitude,
            } => amplitude * (-(p - Point(*center)).norm_sq() / (2.0 * width * width)).exp(),
            TestFunction::IndicatorBlock { center, half_width } => {
                let inside = (0..3).all(|k| (p.0[k] - center[k]).abs() <= *half_width);
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::CompactBump { center, radius } => {
                let q = (p - Point(*center)).norm_sq() / (radius * radius);
                if q >= 1.0 {
                    0.0
                } else {
                    (1.0 - q).powi(4)
                }
            }
        }
    }

    /// Δφ at `p` in dimension `d`; `None` for the indicator.
    pub fn laplacian(&self, p: Point, d: usize) -> Option<f64> {
        let d = d as f64;
        match self {
            TestFunction::ConstantOne => Some(0.0),
            TestFunction::Gaussian { center, width, .. } => {
                let s2 = width * width;
                let q = (p - Point(*center)).norm_sq();
                Some(self.value(p) * (q / (s2 * s2) - d / s2))
            }
            TestFunction::IndicatorBlock { .. } => None,
            TestFunction::CompactBump { center, radius } => {
                let r2 = radius * radius;
                let q2 = (p - Point(*center)).norm_sq();
                let q = q2 / r2;
                if q >= 1.0 {
                    return Some(0.0);
                }
                let g1 = -4.0 * (1.0 - q).powi(3);
                let g2 = 12.0 * (1.0 - q).powi(2);
                Some(g2 * 4.0 * q2 / (r2 * r2) + g1 * 2.0 * d / r2)
            }
        }
    }

    /// ‖φ‖_∞.
    pub fn sup_norm(&self) -> f64 {
        match self {
            TestFunction::Gaussian { amplitude, .. } => amplitude.abs(),
            _ => 1.0,
        }
    }
}

/// X^N(φ).
pub fn integrate(field: &GridField, phi: &TestFunction, n: f64) -> f64 {
    observe_xn(field, n, |p| phi.value(p))
}

/// Per-cell tables of φ̃, Φ_S and the drift weight g for one (grid, φ, N).
#[derive(Debug)]
pub struct FunctionalTables {
    grid: Arc<Grid>,
    phi: TestFunction,
    n: f64,
    k_prime: f64,
    phi_tilde: Vec<f64>,
    phi_stencil: Vec<f64>,
    drift_weight: Vec<f64>,
}

impl FunctionalTables {
    pub fn new(grid: Arc<Grid>, phi: TestFunction, n: f64) -> Result<Arc<Self>> {
        if !(n >= 1.0) {
            return Err(invalid(format!("N must be at least 1, got {n}")));
        }
        let scale = 1.0 / n.sqrt();
        let cells = grid.n_cells();
        let phi_tilde: Vec<f64> = (0..cells)
            .map(|c| phi.value(grid.center(c) * scale))
            .collect();
        let r = grid.r();
        let inner = grid.inner_radius();
        // stencil sums are only defined where the stencil lies in the box
        let fits = |c: usize, reach: f64| grid.cell_radius(c) + reach <= inner - 1e-9 * grid.h();
        let mut phi_stencil = vec![0.0; cells];
        for (c, slot) in phi_stencil.iter_mut().enumerate() {
            if fits(c, r) {
                *slot = grid.stencil_cells(c).map(|y| phi_tilde[y]).sum();
            }
        }
        let s = grid.stencil_len() as f64;
        let mut drift_weight = vec![0.0; cells];
        for (c, slot) in drift_weight.iter_mut().enumerate() {
            if fits(c, 2.0 * r) {
                let around: f64 = grid.stencil_cells(c).map(|x| phi_stencil[x]).sum();
                *slot = around - s * s * phi_tilde[c];
            }
        }
        let k_prime = mass_scale(grid.d(), n);
        Ok(Arc::new(FunctionalTables {
            grid,
            phi,
            n,
            k_prime,
            phi_tilde,
            phi_stencil,
            drift_weight,
        }))
    }

    pub fn phi(&self) -> &TestFunction {
        &self.phi
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn k_prime(&self) -> f64 {
        self.k_prime
    }

    fn hd(&self) -> f64 {
        self.grid.cell_volume()
    }

    fn s(&self) -> f64 {
        self.grid.stencil_len() as f64
    }

    /// K′h^d/N: the weight of one unit of w in X^N.
    fn mass_weight(&self) -> f64 {
        self.k_prime / self.n * self.hd()
    }

    fn drift_const(&self, params: &ModelParams) -> f64 {
        params.rho() * self.k_prime * self.hd() * self.hd() / self.s()
    }

    fn sqfn_const(&self, params: &ModelParams) -> f64 {
        let rho = params.rho();
        rho * rho * self.k_prime * self.k_prime * self.hd().powi(3) / self.n
    }

    /// Bracket term of cell x, without constants.
    #[inline]
    fn m_term(&self, x: usize, w: f64, p: f64) -> f64 {
        let s = self.s();
        let w = w.clamp(0.0, s);
        let a = self.phi_stencil[x] - p;
        (w * a * a + (s - w) * p * p) / s
    }

    #[inline]
    fn mbar_term(&self, x: usize, w: f64) -> f64 {
        let s = self.s();
        let w = w.clamp(0.0, s);
        let f = self.phi_tilde[x];
        f * f * (s - w) * w
    }

    /// Upper bound on |ΔX^N(φ)| for one event: ‖φ‖ρ|S|h^d K′/N.
    pub fn jump_bound(&self, params: &ModelParams) -> f64 {
        self.phi.sup_norm() * params.rho() * self.s() * self.mass_weight()
    }
}

/// Cells that can host a nonzero stencil sum.
fn candidate_cells(field: &GridField) -> impl Iterator<Item = usize> + '_ {
    let grid = field.grid();
    let reach = field.support_bound() + grid.r();
    (0..grid.n_cells()).filter(move |&c| grid.cell_radius(c) <= reach * (1.0 + 1e-12))
}

fn stencil_sums(field: &GridField, tables: &FunctionalTables, x: usize) -> (f64, f64) {
    let grid = field.grid();
    grid.stencil_cells(x).fold((0.0, 0.0), |(w, p), y| {
        let v = field.value(y);
        (w + v, p + v * tables.phi_tilde[y])
    })
}

/// d^N_s(φ) for the field at unscaled time N s.
pub fn drift_density(field: &GridField, tables: &FunctionalTables, params: &ModelParams) -> f64 {
    let sum: f64 = field
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(y, &v)| v * tables.drift_weight[y])
        .sum();
    tables.drift_const(params) * sum
}

/// m^N_s(φ).
pub fn sqfn_density(field: &GridField, tables: &FunctionalTables, params: &ModelParams) -> f64 {
    let sum: f64 = candidate_cells(field)
        .map(|x| {
            let (w, p) = stencil_sums(field, tables, x);
            tables.m_term(x, w, p)
        })
        .sum();
    tables.sqfn_const(params) * sum
}

/// m̄^N_s(φ).
pub fn sqfn_density_bar(field: &GridField, tables: &FunctionalTables, params: &ModelParams) -> f64 {
    let sum: f64 = candidate_cells(field)
        .map(|x| tables.mbar_term(x, stencil_sums(field, tables, x).0))
        .sum();
    tables.sqfn_const(params) * sum
}

/// One sample of the decomposition X_t = X_0 + D_t + M_t, in rescaled time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleSample {
    pub t: f64,
    pub x: f64,
    pub drift: f64,
    pub martingale: f64,
    pub bracket: f64,
    /// ∫₀ᵗ X^N_s(φ²) ds.
    pub x_phi_sq_integral: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MartingalePath {
    pub samples: Vec<MartingaleSample>,
    /// Largest |ΔM| over all events, and the bound it must respect.
    pub max_jump: f64,
    pub jump_bound: f64,
    /// Largest |X − X₀ − D − M| found when X was recomputed from scratch.
    pub max_decomposition_error: f64,
    pub stats: RunStats,
}

impl MartingalePath {
    pub fn bracket_monotone(&self) -> bool {
        self.samples.windows(2).all(|w| w[1].bracket >= w[0].bracket)
    }

    pub fn final_sample(&self) -> Option<&MartingaleSample> {
        self.samples.last()
    }

    /// Writes `t,X,D,M,bracket` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,X,D,M,bracket")?;
        for s in &self.samples {
            writeln!(out, "{},{},{},{},{}", s.t, s.x, s.drift, s.martingale, s.bracket)?;
        }
        Ok(())
    }
}

/// Online tracker of X(φ), X(φ²), the drift and both bracket densities.
///
/// Stencil sums W and P are kept for every cell and patched by scattering
/// each changed cell into the stencils that contain it; only cells within
/// 2r of an event have their bracket terms recomputed.
pub struct FunctionalTracker {
    tables: Arc<FunctionalTables>,
    params: ModelParams,
    w_sum: Vec<f64>,
    p_sum: Vec<f64>,
    touched: Vec<bool>,
    touched_list: Vec<usize>,
    x_raw: CompensatedSum,
    x_sq_raw: CompensatedSum,
    drift_raw: CompensatedSum,
    m_raw: CompensatedSum,
    mbar_raw: CompensatedSum,
    x0: f64,
    last_time: f64,
    drift_integral: CompensatedSum,
    bracket: CompensatedSum,
    bracket_bar: CompensatedSum,
    x_sq_integral: CompensatedSum,
    martingale: CompensatedSum,
    pub path: MartingalePath,
}

impl FunctionalTracker {
    pub fn new(field: &GridField, tables: Arc<FunctionalTables>, params: ModelParams) -> Self {
        let cells = field.grid().n_cells();
        let mut tr = FunctionalTracker {
            w_sum: vec![0.0; cells],
            p_sum: vec![0.0; cells],
            touched: vec![false; cells],
            touched_list: Vec::new(),
            x_raw: CompensatedSum::default(),
            x_sq_raw: CompensatedSum::default(),
            drift_raw: CompensatedSum::default(),
            m_raw: CompensatedSum::default(),
            mbar_raw: CompensatedSum::default(),
            x0: 0.0,
            last_time: field.time(),
            drift_integral: CompensatedSum::default(),
            bracket: CompensatedSum::default(),
            bracket_bar: CompensatedSum::default(),
            x_sq_integral: CompensatedSum::default(),
            martingale: CompensatedSum::default(),
            path: MartingalePath {
                jump_bound: tables.jump_bound(&params),
                ..Default::default()
            },
            tables,
            params,
        };
        for x in candidate_cells(field) {
            let (w, p) = stencil_sums(field, &tr.tables, x);
            tr.w_sum[x] = w;
            tr.p_sum[x] = p;
            tr.m_raw.add(tr.tables.m_term(x, w, p));
            tr.mbar_raw.add(tr.tables.mbar_term(x, w));
        }
        for (y, &v) in field.values().iter().enumerate() {
            if v > 0.0 {
                let f = tr.tables.phi_tilde[y];
                tr.x_raw.add(v * f);
                tr.x_sq_raw.add(v * f * f);
                tr.drift_raw.add(v * tr.tables.drift_weight[y]);
            }
        }
        tr.x0 = tr.x();
        tr
    }

    pub fn x(&self) -> f64 {
        self.tables.mass_weight() * self.x_raw.value()
    }

    pub fn x_phi_sq(&self) -> f64 {
        self.tables.mass_weight() * self.x_sq_raw.value()
    }

    pub fn drift(&self) -> f64 {
        self.tables.drift_const(&self.params) * self.drift_raw.value()
    }

    pub fn sqfn(&self) -> f64 {
        self.tables.sqfn_const(&self.params) * self.m_raw.value()
    }

    pub fn sqfn_bar(&self) -> f64 {
        self.tables.sqfn_const(&self.params) * self.mbar_raw.value()
    }

    pub fn bracket_bar(&self) -> f64 {
        self.bracket_bar.value()
    }

    /// Integrates the current densities up to unscaled time `t`.
    fn advance(&mut self, t: f64) {
        let ds = (t - self.last_time) / self.tables.n;
        if ds > 0.0 {
            let d = self.drift();
            self.drift_integral.add(d * ds);
            self.martingale.add(-d * ds);
            self.bracket.add(self.sqfn() * ds);
            self.bracket_bar.add(self.sqfn_bar() * ds);
            self.x_sq_integral.add(self.x_phi_sq() * ds);
        }
        self.last_time = t;
    }

    fn sample(&mut self, field: &GridField) -> MartingaleSample {
        let x = self.x();
        let exact = integrate(field, &self.tables.phi, self.tables.n);
        let m = self.martingale.value();
        let d = self.drift_integral.value();
        let err = (exact - self.x0 - d - m).abs();
        self.path.max_decomposition_error = self.path.max_decomposition_error.max(err);
        MartingaleSample {
            t: self.last_time / self.tables.n,
            x,
            drift: d,
            martingale: m,
            bracket: self.bracket.value(),
            x_phi_sq_integral: self.x_sq_integral.value(),
        }
    }
}

impl Observer for FunctionalTracker {
    fn after_event(&mut self, field: &GridField, event: &EventRecord, changes: &[(usize, f64)]) {
        self.advance(event.t);
        if changes.is_empty() {
            return;
        }
        let tables = Arc::clone(&self.tables);
        let grid = field.grid();
        // cells whose stencil sums change are those whose stencil holds a
        // changed cell
        for &(y, _) in changes {
            for x in grid.stencil_cells(y) {
                if !self.touched[x] {
                    self.touched[x] = true;
                    self.touched_list.push(x);
                    self.m_raw.add(-tables.m_term(x, self.w_sum[x], self.p_sum[x]));
                    self.mbar_raw.add(-tables.mbar_term(x, self.w_sum[x]));
                }
            }
        }
        let mut dx = 0.0;
        for &(y, old) in changes {
            let dw = field.value(y) - old;
            let f = tables.phi_tilde[y];
            dx += dw * f;
            self.x_raw.add(dw * f);
            self.x_sq_raw.add(dw * f * f);
            self.drift_raw.add(dw * tables.drift_weight[y]);
            for x in grid.stencil_cells(y) {
                self.w_sum[x] += dw;
                self.p_sum[x] += dw * f;
            }
        }
        for &x in &self.touched_list {
            self.m_raw.add(tables.m_term(x, self.w_sum[x], self.p_sum[x]));
            self.mbar_raw.add(tables.mbar_term(x, self.w_sum[x]));
            self.touched[x] = false;
        }
        self.touched_list.clear();
        let jump = tables.mass_weight() * dx;
        self.martingale.add(jump);
        self.path.max_jump = self.path.max_jump.max(jump.abs());
    }

    fn on_sample(&mut self, field: &GridField, t: f64) {
        self.advance(t);
        let s = self.sample(field);
        self.path.samples.push(s);
    }
}

/// Runs the field over rescaled times [0, horizon] and returns the
/// decomposition at `n_samples` + 1 equispaced times.
pub fn extract_martingale<R: Rng + ?Sized>(
    rng: &mut R,
    field: &mut GridField,
    params: &ModelParams,
    tables: &Arc<FunctionalTables>,
    horizon: f64,
    n_samples: usize,
) -> Result<MartingalePath> {
    if !Arc::ptr_eq(field.grid(), &tables.grid) {
        return Err(invalid("field and functional tables use different grids"));
    }
    let n = tables.n;
    let times: Vec<f64> = (0..=n_samples)
        .map(|k| n * horizon * k as f64 / n_samples.max(1) as f64)
        .collect();
    let mut tracker = FunctionalTracker::new(field, Arc::clone(tables), *params);
    let stats = run(rng, field, params, n * horizon, &times, &mut tracker)?;
    tracker.path.stats = stats;
    Ok(tracker.path)
}

/// sup over samples of |⟨M⟩_t − b̂ ∫₀ᵗ X_s(φ²) ds| with b̂ = ρ²|B_r|²γ̂_e.
pub fn sqfn_gap(path: &MartingalePath, params: &ModelParams, gamma_e_hat: f64) -> f64 {
    let rb = params.single_rate();
    let b = rb * rb * gamma_e_hat;
    path.samples
        .iter()
        .map(|s| (s.bracket - b * s.x_phi_sq_integral).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{indicator_block, init_field, ActiveMode, GridBox};
    use crate::rng::replica_rng;

    fn setup(rho: f64, n: f64, phi: TestFunction) -> (ModelParams, GridField, Arc<FunctionalTables>) {
        let p = ModelParams::new(2, 1.0, rho).unwrap();
        let grid = Arc::new(Grid::new(2, GridBox::cube(2, 8.0), 0.25, 1.0).unwrap());
        let f = init_field(Arc::clone(&grid), indicator_block(2, 1.5, 0.6), ActiveMode::Ball).unwrap();
        let t = FunctionalTables::new(grid, phi, n).unwrap();
        (p, f, t)
    }

    #[test]
    fn laplacians_match_finite_differences() {
        let fns = [
            TestFunction::gaussian(0.7),
            TestFunction::CompactBump {
                center: [0.1, -0.2, 0.0],
                radius: 1.3,
            },
        ];
        let p = Point::new2(0.3, 0.4);
        let e = 1e-4;
        for f in &fns {
            let fd: f64 = (0..2)
                .map(|k| {
                    let mut a = p;
                    let mut b = p;
                    a.0[k] += e;
                    b.0[k] -= e;
                    (f.value(a) + f.value(b) - 2.0 * f.value(p)) / (e * e)
                })
                .sum();
            let exact = f.laplacian(p, 2).unwrap();
            assert!((fd - exact).abs() < 1e-5 * exact.abs().max(1.0), "{fd} {exact}");
        }
        assert_eq!(TestFunction::ConstantOne.laplacian(p, 3), Some(0.0));
    }

    #[test]
    fn constant_one_identities() {
        let (p, f, t) = setup(0.5, 100.0, TestFunction::ConstantOne);
        assert!(drift_density(&f, &t, &p).abs() < 1e-12);
        let m = sqfn_density(&f, &t, &p);
        let mb = sqfn_density_bar(&f, &t, &p);
        assert!(m > 0.0);
        assert!((m - mb).abs() <= 1e-10 * m);
    }

    #[test]
    fn bracket_densities_dominated_by_constant_one() {
        let phi = TestFunction::gaussian(0.3);
        let (p, f, t) = setup(0.5, 100.0, phi);
        let t1 = FunctionalTables::new(Arc::clone(f.grid()), TestFunction::ConstantOne, 100.0).unwrap();
        let m1 = sqfn_density(&f, &t1, &p);
        assert!(sqfn_density(&f, &t, &p) <= m1 * (1.0 + 1e-12));
        assert!(sqfn_density_bar(&f, &t, &p) <= m1 * (1.0 + 1e-12));
    }

    #[test]
    fn saturated_field_has_zero_mbar() {
        let p = ModelParams::new(2, 1.0, 0.5).unwrap();
        let grid = Arc::new(Grid::new(2, GridBox::cube(2, 8.0), 0.25, 1.0).unwrap());
        let t = FunctionalTables::new(Arc::clone(&grid), TestFunction::ConstantOne, 10.0).unwrap();
        let zero = init_field(Arc::clone(&grid), |_| 0.0, ActiveMode::Ball).unwrap();
        assert_eq!(sqfn_density_bar(&zero, &t, &p), 0.0);
        assert_eq!(drift_density(&zero, &t, &p), 0.0);
    }

    #[test]
    fn tracker_matches_snapshot_recomputation() {
        let (p, mut f, t) = setup(0.5, 50.0, TestFunction::gaussian(0.4));
        let mut tr = FunctionalTracker::new(&f, Arc::clone(&t), p);
        let scale = (tr.x().abs(), tr.drift().abs(), tr.sqfn().abs(), tr.sqfn_bar().abs());
        run(&mut replica_rng(1, 0), &mut f, &p, 5.0, &[], &mut tr).unwrap();
        let close = |a: f64, b: f64, s: f64| (a - b).abs() <= 1e-10 * s;
        assert!(close(tr.x(), integrate(&f, &t.phi, 50.0), scale.0));
        assert!(close(tr.drift(), drift_density(&f, &t, &p), scale.1));
        assert!(close(tr.sqfn(), sqfn_density(&f, &t, &p), scale.2));
        assert!(close(tr.sqfn_bar(), sqfn_density_bar(&f, &t, &p), scale.3));
        assert!(f.total_mass() > 0.0);
    }

    #[test]
    fn constant_one_martingale_is_mass_change() {
        let (p, mut f, t) = setup(0.5, 20.0, TestFunction::ConstantOne);
        let x0 = integrate(&f, &TestFunction::ConstantOne, 20.0);
        let path = extract_martingale(&mut replica_rng(2, 0), &mut f, &p, &t, 1.0, 16).unwrap();
        for s in &path.samples {
            assert!(s.drift.abs() < 1e-12);
            assert!((s.martingale - (s.x - x0)).abs() < 1e-10);
        }
        assert!(path.bracket_monotone());
        assert!(path.max_jump <= path.jump_bound * (1.0 + 1e-12));
        assert!(path.max_decomposition_error < 1e-10);
        assert_eq!(path.samples.len(), 17);
    }

    #[test]
    fn decomposition_holds_for_gaussian() {
        let (p, mut f, t) = setup(1.0, 20.0, TestFunction::gaussian(0.5));
        let path = extract_martingale(&mut replica_rng(3, 0), &mut f, &p, &t, 1.0, 8).unwrap();
        assert!(path.max_decomposition_error < 1e-10);
        assert!(path.max_jump <= path.jump_bound * (1.0 + 1e-12));
    }

    #[test]
    fn gap_of_zero_field_is_zero() {
        let p = ModelParams::new(2, 1.0, 0.5).unwrap();
        let grid = Arc::new(Grid::new(2, GridBox::cube(2, 8.0), 0.25, 1.0).unwrap());
        let t = FunctionalTables::new(Arc::clone(&grid), TestFunction::gaussian(0.3), 100.0).unwrap();
        let mut f = init_field(grid, |_| 0.0, ActiveMode::Ball).unwrap();
        let path = extract_martingale(&mut replica_rng(1, 0), &mut f, &p, &t, 1.0, 4).unwrap();
        assert_eq!(sqfn_gap(&path, &p, 0.1), 0.0);
    }
}
