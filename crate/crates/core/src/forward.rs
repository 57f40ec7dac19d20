//! Event-driven simulation of the unscaled field w_t on a regular grid.
//!
//! Reproduction events sit at cell centres; each cell hosts events at rate
//! h^d. The ball of an event at x is its stencil S(x), the cells whose
//! centres lie within r of x. A parent is a uniformly chosen stencil cell,
//! so the offspring type is 1 with probability equal to the stencil mean
//! of w, and the whole stencil is then pulled towards it by a fraction ρ.
//!
//! Events whose stencil holds no mass are exact no-ops, so they are never
//! simulated: only an *active* set of cells hosts events. In
//! [`ActiveMode::Ball`] the active set is every cell within
//! `support_bound + r` of the origin; in [`ActiveMode::Dilated`] it is
//! exactly the set of cells whose stencil contains a nonzero cell, which
//! is much smaller when ρ = 1 leaves holes in the support.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::ModelParams;
use crate::point::Point;
use crate::walk::holding_time;

/// K′ = log N in d = 2 and 1 in d ≥ 3.
pub fn mass_scale(d: usize, n: f64) -> f64 {
    if d == 2 {
        n.ln()
    } else {
        1.0
    }
}

/// An axis-aligned box containing the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridBox {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl GridBox {
    /// The cube [−half, half]^d.
    pub fn cube(d: usize, half: f64) -> Self {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for k in 0..d {
            lo[k] = -half;
            hi[k] = half;
        }
        GridBox { lo, hi }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActiveMode {
    #[default]
    Ball,
    Dilated,
}

/// Cell geometry shared by every replica of one configuration.
#[derive(Debug)]
pub struct Grid {
    d: usize,
    h: f64,
    r: f64,
    lo: [f64; 3],
    dims: [usize; 3],
    strides: [usize; 3],
    radius: Vec<f64>,
    by_radius: Vec<u32>,
    sorted_radii: Vec<f64>,
    /// Distance from the origin to the nearest box face.
    inner_radius: f64,
    stencil: Vec<isize>,
    stencil_vecs: Vec<[i64; 3]>,
}

impl Grid {
    pub fn new(d: usize, bounds: GridBox, h: f64, r: f64) -> Result<Self> {
        if !(d == 2 || d == 3) {
            return Err(Error::UnsupportedDimension(d));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid(format!("grid spacing must be positive, got {h}")));
        }
        let mut dims = [1usize; 3];
        let mut inner_radius = f64::INFINITY;
        for k in 0..d {
            let (lo, hi) = (bounds.lo[k], bounds.hi[k]);
            if !(lo < 0.0 && hi > 0.0) {
                return Err(Error::InvalidGeometry(format!(
                    "box must contain the origin in its interior on axis {k}"
                )));
            }
            let n = ((hi - lo) / h).round();
            if n < 1.0 || n > 1e5 {
                return Err(invalid(format!("box/h gives {n} cells on axis {k}")));
            }
            dims[k] = n as usize;
            inner_radius = inner_radius.min(-lo).min(lo + n * h);
        }
        let strides = [1, dims[0], dims[0] * dims[1]];
        let total = dims[0] * dims[1] * dims[2];
        if total > u32::MAX as usize {
            return Err(invalid("grid too large"));
        }
        let mut grid = Grid {
            d,
            h,
            r,
            lo: bounds.lo,
            dims,
            strides,
            radius: Vec::with_capacity(total),
            by_radius: Vec::new(),
            sorted_radii: Vec::new(),
            inner_radius,
            stencil: Vec::new(),
            stencil_vecs: Vec::new(),
        };
        grid.radius = (0..total).map(|i| grid.center(i).norm()).collect();
        let mut order: Vec<u32> = (0..total as u32).collect();
        order.sort_by(|&a, &b| grid.radius[a as usize].total_cmp(&grid.radius[b as usize]));
        grid.sorted_radii = order.iter().map(|&i| grid.radius[i as usize]).collect();
        grid.by_radius = order;

        let reach = (r / h).floor() as i64;
        let z_reach = if d == 3 { reach } else { 0 };
        for k in -z_reach..=z_reach {
            for j in -reach..=reach {
                for i in -reach..=reach {
                    let v = [i, j, k];
                    let n2 = (i * i + j * j + k * k) as f64 * h * h;
                    if n2 <= r * r * (1.0 + 1e-12) {
                        grid.stencil_vecs.push(v);
                        grid.stencil.push(
                            i as isize * strides[0] as isize
                                + j as isize * strides[1] as isize
                                + k as isize * strides[2] as isize,
                        );
                    }
                }
            }
        }
        Ok(grid)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn n_cells(&self) -> usize {
        self.radius.len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.d as i32)
    }

    /// |S|, the number of cells in a stencil.
    pub fn stencil_len(&self) -> usize {
        self.stencil.len()
    }

    /// Flat index offsets of the stencil cells.
    pub fn stencil(&self) -> &[isize] {
        &self.stencil
    }

    /// Integer offsets of the stencil cells, in the order of [`Grid::stencil`].
    pub fn stencil_vectors(&self) -> &[[i64; 3]] {
        &self.stencil_vecs
    }

    /// |S| h^d, the grid volume of a ball.
    pub fn stencil_volume(&self) -> f64 {
        self.stencil.len() as f64 * self.cell_volume()
    }

    pub fn inner_radius(&self) -> f64 {
        self.inner_radius
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn center(&self, cell: usize) -> Point {
        let mut p = Point::ORIGIN;
        let mut rest = cell;
        for k in (0..self.d).rev() {
            let idx = rest / self.strides[k];
            rest %= self.strides[k];
            p.0[k] = self.lo[k] + (idx as f64 + 0.5) * self.h;
        }
        p
    }

    pub fn cell_radius(&self, cell: usize) -> f64 {
        self.radius[cell]
    }

    /// The cell containing `p`, if inside the box.
    pub fn locate(&self, p: Point) -> Option<usize> {
        let mut cell = 0;
        for k in 0..self.d {
            let idx = ((p.0[k] - self.lo[k]) / self.h).floor();
            if idx < 0.0 || idx >= self.dims[k] as f64 {
                return None;
            }
            cell += idx as usize * self.strides[k];
        }
        Some(cell)
    }

    /// Number of cells whose centre lies within `radius` of the origin.
    fn count_within(&self, radius: f64) -> usize {
        self.sorted_radii.partition_point(|&q| q <= radius * (1.0 + 1e-12))
    }

    /// Cells of S(cell) together with their flat indices. The caller must
    /// ensure the stencil lies in the box.
    #[inline]
    pub fn stencil_cells(&self, cell: usize) -> impl Iterator<Item = usize> + '_ {
        self.stencil
            .iter()
            .map(move |&o| (cell as isize + o) as usize)
    }

    /// Whether every stencil of a cell within `radius` lies inside the box.
    fn stencils_fit(&self, radius: f64) -> bool {
        radius + self.r <= self.inner_radius - 1e-9 * self.h
    }
}

/// The field w on the grid.
#[derive(Clone, Debug)]
pub struct GridField {
    grid: Arc<Grid>,
    values: Vec<f64>,
    support_bound: f64,
    nonzero: usize,
    time: f64,
    mode: ActiveMode,
    dilated: Option<DilatedIndex>,
}

/// Cells whose stencil holds mass, with the count of nonzero stencil cells.
#[derive(Clone, Debug)]
struct DilatedIndex {
    count: Vec<u32>,
    members: Vec<u32>,
    position: Vec<u32>,
}

const ABSENT: u32 = u32::MAX;

impl DilatedIndex {
    fn new(n: usize) -> Self {
        DilatedIndex {
            count: vec![0; n],
            members: Vec::new(),
            position: vec![ABSENT; n],
        }
    }

    fn became_nonzero(&mut self, grid: &Grid, cell: usize) {
        for x in grid.stencil_cells(cell) {
            self.count[x] += 1;
            if self.count[x] == 1 {
                self.position[x] = self.members.len() as u32;
                self.members.push(x as u32);
            }
        }
    }

    fn became_zero(&mut self, grid: &Grid, cell: usize) {
        for x in grid.stencil_cells(cell) {
            self.count[x] -= 1;
            if self.count[x] == 0 {
                let pos = self.position[x] as usize;
                let last = *self.members.last().expect("member present");
                self.members.swap_remove(pos);
                if pos < self.members.len() {
                    self.position[last as usize] = pos as u32;
                }
                self.position[x] = ABSENT;
            }
        }
    }
}

/// One reproduction event: its time, centre cell, parent cell and the
/// offspring type.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    pub x: Point,
    pub cell: usize,
    pub z: Point,
    pub parent_value: f64,
    pub alpha: bool,
}

/// Builds the field with cell values w0(centre).
pub fn init_field(
    grid: Arc<Grid>,
    w0: impl Fn(Point) -> f64,
    mode: ActiveMode,
) -> Result<GridField> {
    let mut values = Vec::with_capacity(grid.n_cells());
    let mut support: f64 = 0.0;
    for cell in 0..grid.n_cells() {
        let v = w0(grid.center(cell));
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::FieldRange { cell, value: v });
        }
        if v > 0.0 {
            support = support.max(grid.radius[cell]);
        }
        values.push(v);
    }
    if !grid.stencils_fit(support + grid.r) {
        return Err(Error::SupportOverflow {
            support_bound: support,
            margin: grid.inner_radius - support,
            reach: 2.0 * grid.r,
        });
    }
    let nonzero = values.iter().filter(|&&v| v > 0.0).count();
    let dilated = match mode {
        ActiveMode::Ball => None,
        ActiveMode::Dilated => {
            let mut idx = DilatedIndex::new(values.len());
            for (cell, &v) in values.iter().enumerate() {
                if v > 0.0 {
                    idx.became_nonzero(&grid, cell);
                }
            }
            Some(idx)
        }
    };
    Ok(GridField {
        grid,
        values,
        support_bound: support,
        nonzero,
        time: 0.0,
        mode,
        dilated,
    })
}

impl GridField {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, cell: usize) -> f64 {
        self.values[cell]
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn mode(&self) -> ActiveMode {
        self.mode
    }

    /// Upper bound on the radius of the support; exact after
    /// [`GridField::tighten_support`].
    pub fn support_bound(&self) -> f64 {
        self.support_bound
    }

    /// Exact radius of the smallest origin-centred ball holding the support.
    pub fn exact_support(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .fold(0.0, |m, (c, _)| m.max(self.grid.radius[c]))
    }

    pub fn tighten_support(&mut self) {
        self.support_bound = self.exact_support();
    }

    /// ∫ w = h^d Σ w.
    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Number of cells currently hosting events.
    pub fn active_count(&self) -> usize {
        if self.nonzero == 0 {
            return 0;
        }
        match &self.dilated {
            Some(idx) => idx.members.len(),
            None => self
                .grid
                .count_within(self.support_bound + self.grid.r)
                .min(self.grid.n_cells()),
        }
    }

    /// Total event rate: active volume.
    pub fn event_rate(&self) -> f64 {
        self.active_count() as f64 * self.grid.cell_volume()
    }

    fn active_cell(&self, k: usize) -> usize {
        match &self.dilated {
            Some(idx) => idx.members[k] as usize,
            None => self.grid.by_radius[k] as usize,
        }
    }

    /// Checks the range and support invariants.
    pub fn check_invariants(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
            && self.exact_support() <= self.support_bound * (1.0 + 1e-12) + 1e-12
    }

    /// Writes `x,y[,z],w` rows for every nonzero cell.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let names = ["x", "y", "z"];
        writeln!(out, "{},w", names[..self.grid.d].join(","))?;
        for (cell, &v) in self.values.iter().enumerate() {
            if v > 0.0 {
                let c = self.grid.center(cell);
                let coords: Vec<String> =
                    c.coords(self.grid.d).iter().map(|q| format!("{q}")).collect();
                writeln!(out, "{},{v}", coords.join(","))?;
            }
        }
        Ok(())
    }
}

/// Samples the next event after the current field time, or `None` if no
/// cell is active.
pub fn next_event<R: Rng + ?Sized>(rng: &mut R, field: &GridField) -> Option<EventRecord> {
    let active = field.active_count();
    if active == 0 {
        return None;
    }
    let t = field.time + holding_time(rng, active as f64 * field.grid.cell_volume());
    let cell = field.active_cell(rng.random_range(0..active));
    let stencil = &field.grid.stencil;
    let parent = (cell as isize + stencil[rng.random_range(0..stencil.len())]) as usize;
    let parent_value = field.values[parent];
    let alpha = parent_value > 0.0 && rng.random::<f64>() < parent_value;
    Some(EventRecord {
        t,
        x: field.grid.center(cell),
        cell,
        z: field.grid.center(parent),
        parent_value,
        alpha,
    })
}

/// Applies an event and appends `(cell, old value)` for every stencil cell
/// whose value changed.
pub fn apply_event(
    field: &mut GridField,
    event: &EventRecord,
    params: &ModelParams,
    changes: &mut Vec<(usize, f64)>,
) -> Result<()> {
    let rho = params.rho();
    let target = if event.alpha { 1.0 } else { 0.0 };
    let grid = Arc::clone(&field.grid);
    let mut reach: f64 = 0.0;
    for y in grid.stencil_cells(event.cell) {
        let old = field.values[y];
        let new = if rho == 1.0 {
            target
        } else {
            ((1.0 - rho) * old + rho * target).clamp(0.0, 1.0)
        };
        if new != old {
            field.values[y] = new;
            changes.push((y, old));
            if old == 0.0 {
                field.nonzero += 1;
            } else if new == 0.0 {
                field.nonzero -= 1;
            }
            if let Some(idx) = field.dilated.as_mut() {
                if old == 0.0 {
                    idx.became_nonzero(&grid, y);
                } else if new == 0.0 {
                    idx.became_zero(&grid, y);
                }
            }
            if new > 0.0 {
                reach = reach.max(grid.radius[y]);
            }
        }
    }
    field.time = event.t;
    if reach > field.support_bound {
        field.support_bound = reach;
        if !grid.stencils_fit(reach + grid.r) {
            return Err(Error::SupportOverflow {
                support_bound: reach,
                margin: grid.inner_radius - reach,
                reach: 2.0 * grid.r,
            });
        }
    }
    Ok(())
}

/// Receives the field after each event and at requested sample times.
pub trait Observer {
    /// Called after `event` was applied; `changes` lists the old values.
    fn after_event(&mut self, _field: &GridField, _event: &EventRecord, _changes: &[(usize, f64)]) {
    }

    /// Called when the process passes the sample time `t`.
    fn on_sample(&mut self, _field: &GridField, _t: f64) {}
}

impl Observer for () {}

/// Counts of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub events: u64,
    /// Events that changed at least one cell.
    pub effective_events: u64,
    /// ∫ active volume dt, the mean of `events`.
    pub integrated_rate: f64,
}

/// Runs the field to `horizon`, reporting to `observer` after every event
/// and at each of the increasing `sample_times`.
pub fn run<R: Rng + ?Sized, O: Observer + ?Sized>(
    rng: &mut R,
    field: &mut GridField,
    params: &ModelParams,
    horizon: f64,
    sample_times: &[f64],
    observer: &mut O,
) -> Result<RunStats> {
    if sample_times.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid("sample times must be sorted"));
    }
    let mut stats = RunStats::default();
    let mut pending = sample_times.iter().copied().peekable();
    let mut changes = Vec::with_capacity(field.grid.stencil_len());
    loop {
        let rate = field.event_rate();
        let event = next_event(rng, field);
        let until = event.map_or(horizon, |e| e.t.min(horizon));
        while let Some(&s) = pending.peek() {
            if s > until {
                break;
            }
            observer.on_sample(field, s);
            pending.next();
        }
        stats.integrated_rate += rate * (until - field.time);
        let Some(event) = event.filter(|e| e.t <= horizon) else {
            field.time = horizon;
            break;
        };
        changes.clear();
        apply_event(field, &event, params, &mut changes)?;
        stats.events += 1;
        if !changes.is_empty() {
            stats.effective_events += 1;
        }
        observer.after_event(field, &event, &changes);
    }
    for s in pending {
        observer.on_sample(field, s);
    }
    Ok(stats)
}

/// X^N(φ) = (K′/N) h^d Σ w(y) φ(y/√N) for a field at unscaled time N t.
pub fn observe_xn(field: &GridField, n: f64, phi: impl Fn(Point) -> f64) -> f64 {
    let grid = &field.grid;
    let scale = 1.0 / n.sqrt();
    let sum: f64 = field
        .values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(c, &v)| v * phi(grid.center(c) * scale))
        .sum();
    mass_scale(grid.d, n) / n * grid.cell_volume() * sum
}

/// Metadata written next to a snapshot.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub params: ModelParams,
    pub seed: u64,
    pub stream: u64,
    pub events: u64,
    pub time: f64,
    pub h: f64,
    pub dims: [usize; 3],
    pub support_bound: f64,
    pub total_mass: f64,
}

/// w0 = value on the cube of half-width `half` centred at the origin.
pub fn indicator_block(d: usize, half: f64, value: f64) -> impl Fn(Point) -> f64 {
    move |p: Point| {
        if p.coords(d).iter().all(|c| c.abs() <= half) {
            value
        } else {
            0.0
        }
    }
}

/// w0 = amplitude · exp(−|x|²/(2s²)), cut off beyond `cutoff` standard
/// deviations so the support is compact.
pub fn gaussian_bump(amplitude: f64, s: f64, cutoff: f64) -> impl Fn(Point) -> f64 {
    move |p: Point| {
        let q = p.norm_sq() / (s * s);
        if q > cutoff * cutoff {
            0.0
        } else {
            amplitude * (-0.5 * q).exp()
        }
    }
}
