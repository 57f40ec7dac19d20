//! Experiment orchestration: configuration files, dispatch to the named
//! experiments, and persistence of results.
//!
//! A run produces a [`ResultBundle`]: long-format rows
//! `(experiment, key, value, se, n)` plus named pass/fail checks. Bundles
//! are written as `results.csv` and `meta.json`; the CSV body depends only
//! on the configuration, never on the number of worker threads.

mod duality;
mod experiments;

pub use duality::{duality_check_first, duality_check_second, DualityRecord, DualitySetup};
pub use experiments::*;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::{init_field, mass_scale, ActiveMode, Grid, GridBox, GridField};
use crate::functionals::TestFunction;
use crate::geometry::ModelParams;
use crate::point::Point;
use crate::stats::McEstimate;

/// Names accepted by [`run_experiment`].
pub const EXPERIMENTS: [&str; 10] = [
    "gamma-e",
    "duality-first",
    "duality-second",
    "mass",
    "sqfn-gap",
    "hitting",
    "coupling",
    "phi-limit",
    "sbm-compare",
    "forward-snapshot",
];

/// The claim each experiment checks, written into its outputs.
pub fn claim(experiment: &str) -> Option<&'static str> {
    Some(match experiment {
        "gamma-e" => "non-coalescence probability of the dual pair: (log t)P(tau > t) converges in d = 2, P(tau > t) plateaus in d = 3",
        "duality-first" => "first-moment duality: E w_t(psi) equals the psi-average of E w_0 at the single dual",
        "duality-second" => "second-moment duality: E w_t(psi)^2 equals the psi x psi average of the two-particle dual functional",
        "mass" => "total mass w_t(1) is a martingale",
        "sqfn-gap" => "the bracket of M(phi) approaches b times the integral of X_s(phi^2)",
        "hitting" => "optional stopping of harmonic and polynomial martingales of the difference walk, and hitting bounds",
        "coupling" => "reflection coupling: unchanged marginals, n^(-1/2) coupling tail, coupling before hitting",
        "phi-limit" => "log(A^2) Phi(x, A) converges as A grows and Phi increases with |x|",
        "sbm-compare" => "mean and second moment of X_t(phi) approach those of super-Brownian motion",
        "forward-snapshot" => "single forward trajectory dump",
        _ => return None,
    })
}

/// Grid geometry: the cube [−half_width, half_width]^d in unscaled
/// coordinates with spacing `h`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub half_width: f64,
    pub h: f64,
    #[serde(default)]
    pub mode: ActiveMode,
}

impl GridConfig {
    pub fn build(&self, params: &ModelParams) -> Result<Grid> {
        let d = params.d();
        Grid::new(d, GridBox::cube(d, self.half_width), self.h, params.r())
    }
}

/// Initial field w₀ described in rescaled coordinates x = y/√N.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    Zero,
    /// `value` on the cube of the given half-width.
    Block { half_width: f64, value: f64 },
    /// amplitude · exp(−|x|²/(2 width²)), cut off beyond `cutoff` widths.
    Gaussian { amplitude: f64, width: f64, cutoff: f64 },
    /// The block whose value makes X₀(1) = `mass`, i.e.
    /// mass/(K′(2 half_width)^d); depends on N and becomes a
    /// [`InitialCondition::Block`] in [`InitialCondition::resolve`].
    MassBlock {
        half_width: f64,
        #[serde(default = "unit")]
        mass: f64,
    },
}

fn unit() -> f64 {
    1.0
}

impl InitialCondition {
    /// Replaces N-dependent descriptions by explicit ones.
    pub fn resolve(&self, d: usize, n: f64) -> Result<Self> {
        match *self {
            InitialCondition::MassBlock { half_width, mass } => {
                let value = mass / (mass_scale(d, n) * (2.0 * half_width).powi(d as i32));
                if !(value > 0.0 && value <= 1.0) {
                    return Err(Error::Config(format!(
                        "mass block needs value {value} in (0, 1]"
                    )));
                }
                Ok(InitialCondition::Block { half_width, value })
            }
            other => Ok(other),
        }
    }

    /// w₀(x); NaN for descriptions that need [`InitialCondition::resolve`].
    pub fn value(&self, d: usize, x: Point) -> f64 {
        match *self {
            InitialCondition::Zero => 0.0,
            InitialCondition::Block { half_width, value } => {
                if x.coords(d).iter().all(|c| c.abs() <= half_width) {
                    value
                } else {
                    0.0
                }
            }
            InitialCondition::Gaussian {
                amplitude,
                width,
                cutoff,
            } => {
                let q = x.norm_sq() / (width * width);
                if q > cutoff * cutoff {
                    0.0
                } else {
                    amplitude * (-0.5 * q).exp()
                }
            }
            InitialCondition::MassBlock { .. } => f64::NAN,
        }
    }

    /// ∫w₀ dx in rescaled coordinates (the Gaussian cut-off is ignored).
    pub fn continuum_mass(&self, d: usize) -> f64 {
        match *self {
            InitialCondition::Zero => 0.0,
            InitialCondition::Block { half_width, value } => value * (2.0 * half_width).powi(d as i32),
            InitialCondition::Gaussian { amplitude, width, .. } => {
                amplitude * (2.0 * std::f64::consts::PI * width * width).powf(d as f64 / 2.0)
            }
            InitialCondition::MassBlock { .. } => f64::NAN,
        }
    }

    /// Cell values w₀(centre/√N).
    pub fn build(&self, grid: std::sync::Arc<Grid>, n: f64, mode: ActiveMode) -> Result<GridField> {
        let d = grid.d();
        let resolved = self.resolve(d, n)?;
        let s = 1.0 / n.sqrt();
        init_field(grid, |y| resolved.value(d, y * s), mode)
    }
}

/// Experiment-specific knobs; every field is optional and falls back to
/// the default of the experiment that reads it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentOptions {
    /// Observation times (γ_e, snapshots).
    #[serde(default)]
    pub times: Vec<f64>,
    /// Outer radii A (Φ-limit, hitting).
    #[serde(default)]
    pub radii: Vec<f64>,
    /// Starting distances |x| (Φ-limit, hitting).
    #[serde(default)]
    pub starts: Vec<f64>,
    /// Scaling parameters N (square-function gap).
    #[serde(default)]
    pub ns: Vec<f64>,
    /// Coupling distances K.
    #[serde(default)]
    pub ks: Vec<f64>,
    pub inner_radius: Option<f64>,
    pub time_cap: Option<f64>,
    pub dual_replicas: Option<u64>,
    pub nodes: Option<usize>,
    pub gamma_e: Option<f64>,
    pub allowance: Option<f64>,
    pub samples: Option<usize>,
    /// Kill function for Φ: "local" (k) or "zero".
    pub kill: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub replicas: u64,
    pub model: ModelParams,
    /// Scaling parameter N.
    #[serde(default = "default_n")]
    pub n: f64,
    /// Horizon in rescaled time.
    #[serde(default)]
    pub horizon: f64,
    pub grid: Option<GridConfig>,
    pub initial: Option<InitialCondition>,
    pub test_function: Option<TestFunction>,
    #[serde(default)]
    pub options: ExperimentOptions,
    pub out: Option<PathBuf>,
}

fn default_n() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if claim(&self.experiment).is_none() {
            return Err(Error::UnknownExperiment(self.experiment.clone()));
        }
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.n >= 1.0 && self.n.is_finite()) {
            return bad("n must be at least 1");
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be finite and non-negative");
        }
        if let Some(g) = &self.grid {
            if !(g.h > 0.0 && g.half_width > g.h) {
                return bad("grid needs 0 < h < half_width");
            }
        }
        let o = &self.options;
        if o.times.iter().chain(&o.radii).chain(&o.starts).chain(&o.ks).any(|v| !(*v >= 0.0)) {
            return bad("grids must hold non-negative numbers");
        }
        if o.ns.iter().any(|v| !(*v >= 1.0)) {
            return bad("every N must be at least 1");
        }
        if let Some(a) = o.allowance {
            if !(a >= 0.0) {
                return bad("allowance must be non-negative");
            }
        }
        if let Some(k) = &o.kill {
            if k != "local" && k != "zero" {
                return bad("kill must be \"local\" or \"zero\"");
            }
        }
        Ok(())
    }

    /// SHA-256 of the JSON echo of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("configuration serialises");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn grid_or(&self, default: GridConfig) -> GridConfig {
        self.grid.unwrap_or(default)
    }

    fn need_grid(&self) -> Result<GridConfig> {
        self.grid.ok_or_else(|| Error::Config(format!("{} needs a [grid] table", self.experiment)))
    }

    fn need_initial(&self) -> Result<InitialCondition> {
        self.initial
            .ok_or_else(|| Error::Config(format!("{} needs an [initial] table", self.experiment)))
    }

    fn test_function_or(&self, default: TestFunction) -> TestFunction {
        self.test_function.clone().unwrap_or(default)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub key: String,
    pub value: f64,
    pub se: f64,
    pub n: u64,
}

impl ResultRow {
    pub fn exact(key: impl Into<String>, value: f64) -> Self {
        ResultRow {
            key: key.into(),
            value,
            se: 0.0,
            n: 0,
        }
    }

    pub fn estimate(key: impl Into<String>, e: &McEstimate) -> Self {
        ResultRow {
            key: key.into(),
            value: e.mean,
            se: e.se,
            n: e.replicas,
        }
    }
}

/// A named pass/fail outcome with a short human-readable account.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub experiment: String,
    pub rows: Vec<ResultRow>,
    pub checks: Vec<Check>,
    /// Optional extra CSV files (name, contents), such as path dumps.
    pub attachments: Vec<(String, String)>,
}

impl ResultBundle {
    pub fn new(experiment: &str) -> Self {
        ResultBundle {
            experiment: experiment.to_string(),
            rows: Vec::new(),
            checks: Vec::new(),
            attachments: Vec::new(),
        }
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn csv(&self) -> String {
        let mut s = String::new();
        if let Some(c) = claim(&self.experiment) {
            s.push_str(&format!("# {c}\n"));
        }
        s.push_str("experiment,key,value,se,n\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", self.experiment, r.key, r.value, r.se, r.n));
        }
        s
    }

    /// Writes `results.csv`, `meta.json` and any attachments into `dir`.
    pub fn write(&self, config: &ExperimentConfig, dir: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::Io(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join("results.csv"), self.csv()).map_err(io)?;
        let meta = serde_json::json!({
            "experiment": self.experiment,
            "claim": claim(&self.experiment),
            "config": config,
            "config_sha256": config.hash(),
            "seed": config.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "environment": {
                "os": std::env::consts::OS,
                "arch": std::env::consts::ARCH,
                "workers": rayon::current_num_threads(),
            },
            "checks": self.checks,
        });
        let mut f = fs::File::create(dir.join("meta.json")).map_err(io)?;
        serde_json::to_writer_pretty(&mut f, &meta).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(f).map_err(io)?;
        for (name, body) in &self.attachments {
            fs::write(dir.join(name), body).map_err(io)?;
        }
        Ok(())
    }
}

/// Validates the configuration, runs the named experiment and, if an output
/// directory is configured, writes the bundle there.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultBundle> {
    config.validate()?;
    let bundle = if config.replicas == 0 {
        ResultBundle::new(&config.experiment)
    } else {
        dispatch(config)?
    };
    if let Some(dir) = &config.out {
        bundle.write(config, dir)?;
    }
    Ok(bundle)
}

/// [`run_experiment`] on a dedicated pool of `workers` threads.
pub fn run_experiment_with_workers(config: &ExperimentConfig, workers: usize) -> Result<ResultBundle> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| run_experiment(config))
}

fn dispatch(cfg: &ExperimentConfig) -> Result<ResultBundle> {
    let p = cfg.model;
    let o = &cfg.options;
    let seed = cfg.seed;
    let reps = cfg.replicas;
    let bundle = match cfg.experiment.as_str() {
        "gamma-e" => {
            let times = if o.times.is_empty() {
                vec![1e2, 1e3, 1e4, 1e5]
            } else {
                o.times.clone()
            };
            gamma_experiment(&GammaSetup {
                params: p,
                times,
                replicas: reps,
                seed,
                independent: p.d() >= 3,
            })?
            .bundle()
        }
        "duality-first" | "duality-second" => {
            let setup = DualitySetup {
                params: p,
                n: cfg.n,
                t: cfg.horizon,
                grid: cfg.need_grid()?,
                initial: cfg.need_initial()?,
                psi: cfg.test_function_or(TestFunction::gaussian(0.3)),
                forward_replicas: reps,
                dual_replicas: o.dual_replicas.unwrap_or(reps),
                nodes: o.nodes.unwrap_or(6),
                allowance: o.allowance.unwrap_or(0.02),
                seed,
            };
            if cfg.experiment == "duality-first" {
                duality_check_first(&setup)?.bundle("duality-first")
            } else {
                duality_check_second(&setup)?.bundle("duality-second")
            }
        }
        "mass" => mass_experiment(&MassSetup {
            params: p,
            grid: cfg.need_grid()?,
            initial: cfg.need_initial()?,
            horizon: cfg.horizon,
            replicas: reps,
            allowance: o.allowance.unwrap_or(0.02),
            seed,
        })?
        .bundle(),
        "sqfn-gap" => {
            let gamma_e = o
                .gamma_e
                .ok_or_else(|| Error::Config("sqfn-gap needs options.gamma_e".into()))?;
            let ns = if o.ns.is_empty() { vec![cfg.n] } else { o.ns.clone() };
            sqfn_gap_experiment(&SqfnSetup {
                params: p,
                ns,
                horizon: cfg.horizon,
                grid: cfg.need_grid()?,
                initial: cfg.need_initial()?,
                phi: cfg.test_function_or(TestFunction::gaussian(1.0)),
                gamma_e,
                samples: o.samples.unwrap_or(50),
                replicas: reps,
                seed,
            })?
            .bundle()
        }
        "hitting" => {
            let x = o.starts.first().copied().unwrap_or(6.0 * p.r());
            let a = o.inner_radius.unwrap_or(3.0 * p.r());
            let big_a = o.radii.first().copied().unwrap_or(30.0 * p.r());
            hitting_experiment(&HittingSetup {
                params: p,
                x_norm: x,
                a,
                big_a,
                poly_horizon: if cfg.horizon > 0.0 { cfg.horizon } else { 50.0 },
                time_cap: o.time_cap.unwrap_or(1e6),
                replicas: reps,
                seed,
            })?
            .bundle()
        }
        "coupling" => {
            let ks = if o.ks.is_empty() { vec![10.0, 100.0, 1000.0] } else { o.ks.clone() };
            coupling_experiment(&CouplingSetup {
                params: p,
                ks,
                marginal_steps: 50,
                max_half_steps: 1_000_000,
                replicas: reps,
                seed,
            })?
            .bundle()
        }
        "phi-limit" => {
            let radii = if o.radii.is_empty() { vec![10.0, 100.0, 1000.0] } else { o.radii.clone() };
            let starts = if o.starts.is_empty() {
                vec![3.0 * p.r(), 5.0 * p.r(), 8.0 * p.r()]
            } else {
                o.starts.clone()
            };
            let kill = match o.kill.as_deref() {
                Some("zero") => crate::dual::KillFunction::Zero,
                _ => crate::dual::KillFunction::Local,
            };
            phi_limit_experiment(&PhiSetup {
                params: p,
                radii,
                starts,
                kill,
                replicas: reps,
                seed,
            })?
            .bundle()
        }
        "sbm-compare" => {
            let gamma_e = o
                .gamma_e
                .ok_or_else(|| Error::Config("sbm-compare needs options.gamma_e".into()))?;
            sbm_compare_experiment(&SbmCompareSetup {
                params: p,
                n: cfg.n,
                t: cfg.horizon,
                grid: cfg.need_grid()?,
                initial: cfg.need_initial()?,
                phi: cfg.test_function_or(TestFunction::gaussian(1.0)),
                gamma_e,
                tolerance: o.allowance.unwrap_or(0.10),
                replicas: reps,
                seed,
            })?
            .bundle()
        }
        "forward-snapshot" => snapshot_experiment(&SnapshotSetup {
            params: p,
            n: cfg.n,
            grid: cfg.grid_or(GridConfig {
                half_width: 20.0,
                h: 0.25,
                mode: ActiveMode::Ball,
            }),
            initial: cfg.initial.unwrap_or(InitialCondition::Block {
                half_width: 1.0,
                value: 1.0,
            }),
            times: if o.times.is_empty() { vec![cfg.horizon] } else { o.times.clone() },
            seed,
        })?,
        other => return Err(Error::UnknownExperiment(other.to_string())),
    };
    Ok(bundle)
}
