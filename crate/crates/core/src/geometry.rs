//! Ball and lens geometry, the dual step law, the two-particle interaction
//! rates and the samplers shared by every process in the crate.

use std::f64::consts::PI;

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::point::Point;

/// Volume of the radius-`r` ball in dimension `d`.
pub fn ball_volume(d: usize, r: f64) -> Result<f64> {
    match d {
        2 => Ok(PI * r * r),
        3 => Ok(4.0 / 3.0 * PI * r * r * r),
        _ => Err(Error::UnsupportedDimension(d)),
    }
}

/// Volume of `B_r(0) ∩ B_r(a e_1)`.
///
/// Twice a circular segment in the plane, twice a spherical cap in space.
pub fn lens_volume(d: usize, r: f64, a: f64) -> Result<f64> {
    let a = a.abs();
    if a >= 2.0 * r {
        // still reject bad dimensions
        ball_volume(d, r)?;
        return Ok(0.0);
    }
    match d {
        2 => {
            let half = a / 2.0;
            Ok(2.0 * r * r * (half / r).acos() - half * (4.0 * r * r - a * a).sqrt())
        }
        3 => {
            let gap = 2.0 * r - a;
            Ok(PI * (4.0 * r + a) * gap * gap / 12.0)
        }
        _ => Err(Error::UnsupportedDimension(d)),
    }
}

/// Interaction radius, impact factor and dimension of the model, together
/// with the constants derived from them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    d: usize,
    r: f64,
    rho: f64,
    ball: f64,
    sigma_bar_sq: f64,
    step_m4: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct RawParams {
    d: usize,
    r: f64,
    rho: f64,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;
    fn try_from(raw: RawParams) -> Result<Self> {
        ModelParams::new(raw.d, raw.r, raw.rho)
    }
}

impl From<ModelParams> for RawParams {
    fn from(p: ModelParams) -> Self {
        RawParams {
            d: p.d,
            r: p.r,
            rho: p.rho,
        }
    }
}

impl ModelParams {
    pub fn new(d: usize, r: f64, rho: f64) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(Error::UnsupportedDimension(d));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(invalid(format!("radius must be positive, got {r}")));
        }
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(invalid(format!("impact factor must lie in (0, 1], got {rho}")));
        }
        let ball = ball_volume(d, r)?;
        let sigma_bar_sq = 2.0 * r * r / (d as f64 + 2.0);
        let step_m4 = step_fourth_moment_quadrature(d, r)?;
        Ok(ModelParams {
            d,
            r,
            rho,
            ball,
            sigma_bar_sq,
            step_m4,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// |B_r|
    pub fn ball_volume(&self) -> f64 {
        self.ball
    }

    /// ρ|B_r|: jump rate of a single dual particle.
    pub fn single_rate(&self) -> f64 {
        self.rho * self.ball
    }

    /// 2ρ|B_r|: jump rate of the free difference walk.
    pub fn pair_rate(&self) -> f64 {
        2.0 * self.rho * self.ball
    }

    pub fn sigma_bar_sq(&self) -> f64 {
        self.sigma_bar_sq
    }

    /// E|Ū|² = d σ̄².
    pub fn step_m2(&self) -> f64 {
        self.d as f64 * self.sigma_bar_sq
    }

    /// E|Ū|⁴, by radial quadrature of the step density.
    pub fn step_m4(&self) -> f64 {
        self.step_m4
    }

    pub fn lens(&self, a: f64) -> f64 {
        lens_volume(self.d, self.r, a).expect("dimension validated at construction")
    }

    /// ψ_r(a) for a > 0 without validation; used in inner loops.
    #[inline]
    pub fn psi(&self, a: f64) -> f64 {
        if a >= 2.0 * self.r {
            0.0
        } else {
            self.rho * self.rho * self.lens(a)
        }
    }

    /// Killing rate k(a) = ρ|B_r| ψ/(ρ|B_r| − ψ) for a > 0, unvalidated.
    #[inline]
    pub fn kill(&self, a: f64) -> f64 {
        let psi = self.psi(a);
        if psi == 0.0 {
            return 0.0;
        }
        let rb = self.single_rate();
        rb * psi / (rb - psi)
    }

    /// β(a) = 1 − ψ_r(a)/(ρ|B_r|) for a > 0, unvalidated.
    #[inline]
    pub fn beta(&self, a: f64) -> f64 {
        1.0 - self.psi(a) / self.single_rate()
    }
}

/// Density of Ū = U¹ + U² at `z`.
pub fn step_density(params: &ModelParams, z: Point) -> f64 {
    let b = params.ball_volume();
    params.lens(z.norm()) / (b * b)
}

/// ψ_r, β and k at one separation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalRates {
    pub psi: f64,
    pub beta: f64,
    pub kill: f64,
}

/// The interaction functionals at separation `a > 0`.
///
/// The value of ψ_r at the origin is different from its right limit and is
/// only available through [`psi_at_origin`].
pub fn local_rates(params: &ModelParams, a: f64) -> Result<LocalRates> {
    if a == 0.0 {
        return Err(Error::AtOrigin);
    }
    if !(a > 0.0) {
        return Err(invalid(format!("separation must be positive, got {a}")));
    }
    if a >= 2.0 * params.r() {
        return Ok(LocalRates {
            psi: 0.0,
            beta: 1.0,
            kill: 0.0,
        });
    }
    let psi = params.psi(a);
    let rb = params.single_rate();
    let beta = 1.0 - psi / rb;
    if beta <= 0.0 {
        return Err(Error::Degenerate {
            separation: a,
            beta,
        });
    }
    Ok(LocalRates {
        psi,
        beta,
        kill: rb * psi / (rb - psi),
    })
}

/// ψ_r(0) = ρ|B_r|, the rate attached to the coalesced (trap) state.
pub fn psi_at_origin(params: &ModelParams) -> f64 {
    params.single_rate()
}

/// σ̄² = 2r²/(d+2).
pub fn sigma_bar_sq(params: &ModelParams) -> f64 {
    params.sigma_bar_sq()
}

fn sphere_area(d: usize, s: f64) -> f64 {
    if d == 2 {
        2.0 * PI * s
    } else {
        4.0 * PI * s * s
    }
}

/// E|Ū|^k by radial quadrature against the step density.
pub fn step_moment_quadrature(d: usize, r: f64, k: i32) -> Result<f64> {
    let b = ball_volume(d, r)?;
    let scale = (2.0 * r).powi(k);
    let out = quadrature::double_exponential::integrate(
        |s| {
            s.powi(k) * lens_volume(d, r, s).unwrap_or(0.0) * sphere_area(d, s) / (b * b)
        },
        0.0,
        2.0 * r,
        1e-12 * scale,
    );
    Ok(out.integral)
}

fn step_fourth_moment_quadrature(d: usize, r: f64) -> Result<f64> {
    step_moment_quadrature(d, r, 4)
}

/// Uniform point of the closed ball `B_r(center)`.
#[inline]
pub fn sample_uniform_ball<R: Rng + ?Sized>(rng: &mut R, d: usize, r: f64, center: Point) -> Point {
    loop {
        let x = 2.0 * rng.random::<f64>() - 1.0;
        let y = 2.0 * rng.random::<f64>() - 1.0;
        if d == 2 {
            if x * x + y * y <= 1.0 {
                return center + Point::new2(r * x, r * y);
            }
        } else {
            let z = 2.0 * rng.random::<f64>() - 1.0;
            if x * x + y * y + z * z <= 1.0 {
                return center + Point::new3(r * x, r * y, r * z);
            }
        }
    }
}

/// One draw of Ū = U¹ + U².
#[inline]
pub fn sample_step<R: Rng + ?Sized>(rng: &mut R, params: &ModelParams) -> Point {
    let d = params.d();
    let r = params.r();
    sample_uniform_ball(rng, d, r, Point::ORIGIN) + sample_uniform_ball(rng, d, r, Point::ORIGIN)
}

/// Uniform point of `B_r(y1) ∩ B_r(y2)` together with the number of
/// proposals used. Proposals are uniform on `B_r(y1)`.
pub fn sample_lens_point_counted<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ModelParams,
    y1: Point,
    y2: Point,
) -> Result<(Point, u64)> {
    let r = params.r();
    let dist = y1.dist(y2);
    if dist >= 2.0 * r {
        return Err(Error::EmptyIntersection { r, distance: dist });
    }
    let r2 = r * r;
    let mut attempts = 0;
    loop {
        attempts += 1;
        let p = sample_uniform_ball(rng, params.d(), r, y1);
        if (p - y2).norm_sq() <= r2 {
            return Ok((p, attempts));
        }
    }
}

pub fn sample_lens_point<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ModelParams,
    y1: Point,
    y2: Point,
) -> Result<Point> {
    sample_lens_point_counted(rng, params, y1, y2).map(|(p, _)| p)
}
