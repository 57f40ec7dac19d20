//! Moments of super-Brownian motion for Gaussian data.
//!
//! With P_t the heat semigroup of variance σ²t, a Gaussian
//! a·exp(−|x − c|²/(2S)) is mapped to a(S/(S + σ²t))^{d/2}·exp(−|x − c|²/(2(S + σ²t))),
//! and integrating it against a Gaussian of mean μ and variance v gives
//! a(S/(S + v))^{d/2}·exp(−|μ − c|²/(2(S + v))). These two rules give the mean
//! X₀(P_tφ) and the integrand of the second moment
//! X₀(P_tφ)² + b∫₀ᵗ X₀(P_s[(P_{t−s}φ)²]) ds in closed form.

use quadrature::double_exponential;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::functionals::TestFunction;
use crate::geometry::ModelParams;
use crate::point::Point;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub sigma_sq: f64,
    pub b: f64,
    pub d: usize,
}

/// σ² = ρ|B_r|σ̄² and b = ρ²|B_r|²γ̂_e.
pub fn limit_params(params: &ModelParams, gamma_e_hat: f64) -> Result<SbmParams> {
    if !(gamma_e_hat > 0.0 && gamma_e_hat.is_finite()) {
        return Err(invalid(format!(
            "non-coalescence estimate must be positive, got {gamma_e_hat}"
        )));
    }
    let rb = params.single_rate();
    Ok(SbmParams {
        sigma_sq: rb * params.sigma_bar_sq(),
        b: rb * rb * gamma_e_hat,
        d: params.d(),
    })
}

/// An unnormalised Gaussian a·exp(−|x − c|²/(2S)).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel {
    pub amplitude: f64,
    pub center: Point,
    pub var: f64,
}

impl GaussianKernel {
    pub fn from_test_function(phi: &TestFunction) -> Result<Self> {
        match phi {
            TestFunction::Gaussian {
                center,
                width,
                amplitude,
            } if *width > 0.0 => Ok(GaussianKernel {
                amplitude: *amplitude,
                center: Point(*center),
                var: width * width,
            }),
            _ => Err(Error::InvalidParameter(
                "reference moments need a Gaussian test function".into(),
            )),
        }
    }

    pub fn value(&self, x: Point) -> f64 {
        self.amplitude * (-(x - self.center).norm_sq() / (2.0 * self.var)).exp()
    }

    /// P_u applied with diffusion coefficient σ².
    pub fn evolve(&self, sigma_sq: f64, u: f64, d: usize) -> Self {
        let s = self.var + sigma_sq * u;
        GaussianKernel {
            amplitude: self.amplitude * (self.var / s).powf(d as f64 / 2.0),
            center: self.center,
            var: s,
        }
    }

    pub fn squared(&self) -> Self {
        GaussianKernel {
            amplitude: self.amplitude * self.amplitude,
            center: self.center,
            var: self.var / 2.0,
        }
    }
}

/// A finite mixture of weighted Gaussian measures; variance 0 is a point
/// mass.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    /// (weight, mean, variance) per component.
    pub components: Vec<(f64, Point, f64)>,
}

impl GaussianMixture {
    pub fn point_mass(weight: f64, at: Point) -> Self {
        GaussianMixture {
            components: vec![(weight, at, 0.0)],
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.components.iter().map(|c| c.0).sum()
    }

    /// ∫ g dμ for a Gaussian kernel g.
    pub fn integrate(&self, g: &GaussianKernel, d: usize) -> f64 {
        self.components
            .iter()
            .map(|&(w, mu, v)| {
                let s = g.var + v;
                w * g.amplitude
                    * (g.var / s).powf(d as f64 / 2.0)
                    * (-(mu - g.center).norm_sq() / (2.0 * s)).exp()
            })
            .sum()
    }
}

/// E X_t(φ) = X₀(P_tφ).
pub fn sbm_mean(sbm: &SbmParams, x0: &GaussianMixture, phi: &TestFunction, t: f64) -> Result<f64> {
    let g = GaussianKernel::from_test_function(phi)?;
    Ok(x0.integrate(&g.evolve(sbm.sigma_sq, t, sbm.d), sbm.d))
}

/// b∫₀ᵗ X₀(P_s[(P_{t−s}φ)²]) ds, the variance of X_t(φ).
pub fn sbm_variance(sbm: &SbmParams, x0: &GaussianMixture, phi: &TestFunction, t: f64) -> Result<f64> {
    let g = GaussianKernel::from_test_function(phi)?;
    if t == 0.0 || sbm.b == 0.0 {
        return Ok(0.0);
    }
    let d = sbm.d;
    let integrand = |s: f64| {
        let inner = g.evolve(sbm.sigma_sq, t - s, d).squared();
        x0.integrate(&inner.evolve(sbm.sigma_sq, s, d), d)
    };
    let scale = integrand(0.0).abs().max(integrand(t).abs()).max(f64::MIN_POSITIVE);
    let out = double_exponential::integrate(integrand, 0.0, t, 1e-10 * scale * t);
    Ok(sbm.b * out.integral)
}

/// E X_t(φ)².
pub fn sbm_second_moment(
    sbm: &SbmParams,
    x0: &GaussianMixture,
    phi: &TestFunction,
    t: f64,
) -> Result<f64> {
    let mean = sbm_mean(sbm, x0, phi, t)?;
    Ok(mean * mean + sbm_variance(sbm, x0, phi, t)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn std_gauss() -> TestFunction {
        TestFunction::gaussian(1.0)
    }

    #[test]
    fn limit_parameters() {
        let p = ModelParams::new(2, 1.0, 1.0).unwrap();
        let s = limit_params(&p, 0.3).unwrap();
        assert!((s.sigma_sq - PI / 2.0).abs() < 1e-12);
        assert!((s.b - PI * PI * 0.3).abs() < 1e-12);
        let half = limit_params(&ModelParams::new(2, 1.0, 0.5).unwrap(), 0.3).unwrap();
        assert!((half.sigma_sq - s.sigma_sq / 2.0).abs() < 1e-12);
        assert!((half.b - s.b / 4.0).abs() < 1e-12);
        assert!(limit_params(&p, 0.0).is_err());
    }

    #[test]
    fn time_zero_and_no_branching() {
        let sbm = SbmParams {
            sigma_sq: 1.0,
            b: 2.0,
            d: 2,
        };
        let x0 = GaussianMixture {
            components: vec![(1.0, Point::new2(0.5, 0.0), 0.2), (0.5, Point::ORIGIN, 0.0)],
        };
        let phi = std_gauss();
        let direct = x0.integrate(&GaussianKernel::from_test_function(&phi).unwrap(), 2);
        assert!((sbm_mean(&sbm, &x0, &phi, 0.0).unwrap() - direct).abs() < 1e-15);
        assert_eq!(sbm_variance(&sbm, &x0, &phi, 0.0).unwrap(), 0.0);
        let flat = SbmParams { b: 0.0, ..sbm };
        let m = sbm_mean(&flat, &x0, &phi, 1.0).unwrap();
        assert_eq!(sbm_second_moment(&flat, &x0, &phi, 1.0).unwrap(), m * m);
        assert!(sbm_second_moment(&sbm, &x0, &phi, 1.0).unwrap() > m * m);
    }

    #[test]
    fn point_mass_mean_against_quadrature() {
        let sbm = SbmParams {
            sigma_sq: 1.0,
            b: 1.0,
            d: 2,
        };
        let x0 = GaussianMixture::point_mass(1.0, Point::ORIGIN);
        let closed = sbm_mean(&sbm, &x0, &std_gauss(), 1.0).unwrap();
        // ∫ heat kernel(1, x) φ(x) dx by nested quadrature
        let f = |x: f64, y: f64| {
            let r2 = x * x + y * y;
            (-r2 / 2.0).exp() / (2.0 * PI) * (-r2 / 2.0).exp()
        };
        let oracle = double_exponential::integrate(
            |x| double_exponential::integrate(|y| f(x, y), -12.0, 12.0, 1e-13).integral,
            -12.0,
            12.0,
            1e-12,
        )
        .integral;
        assert!((closed - oracle).abs() < 1e-6);
        assert!((closed - 0.5).abs() < 1e-12);
    }

    #[test]
    fn chapman_kolmogorov() {
        let g = GaussianKernel {
            amplitude: 2.0,
            center: Point::new2(0.1, 0.2),
            var: 0.3,
        };
        for d in [2, 3] {
            let a = g.evolve(1.7, 0.4, d).evolve(1.7, 0.9, d);
            let b = g.evolve(1.7, 1.3, d);
            assert!((a.amplitude - b.amplitude).abs() < 1e-12);
            assert!((a.var - b.var).abs() < 1e-12);
        }
    }

    #[test]
    fn wide_test_functions_approach_total_mass() {
        let sbm = SbmParams {
            sigma_sq: 1.0,
            b: 1.0,
            d: 3,
        };
        let x0 = GaussianMixture {
            components: vec![(0.7, Point::new3(1.0, 0.0, 0.0), 0.5), (0.3, Point::ORIGIN, 0.0)],
        };
        let gaps: Vec<f64> = [5.0, 50.0, 500.0]
            .iter()
            .map(|&w| x0.total_mass() - sbm_mean(&sbm, &x0, &TestFunction::gaussian(w), 1.0).unwrap())
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2] && gaps[2] > 0.0);
    }

    #[test]
    fn non_gaussian_rejected() {
        let sbm = SbmParams {
            sigma_sq: 1.0,
            b: 1.0,
            d: 2,
        };
        let x0 = GaussianMixture::point_mass(1.0, Point::ORIGIN);
        assert!(sbm_mean(&sbm, &x0, &TestFunction::ConstantOne, 1.0).is_err());
    }

    #[test]
    fn variance_against_direct_formula() {
        // point mass at the origin in d = 2: the integrand is explicit
        let sbm = SbmParams {
            sigma_sq: 0.8,
            b: 1.5,
            d: 2,
        };
        let x0 = GaussianMixture::point_mass(1.0, Point::ORIGIN);
        let t = 2.0;
        let v = sbm_variance(&sbm, &x0, &std_gauss(), t).unwrap();
        // (P_uφ)²(0) = (1/(1+σ²u))², then P_s of the square at 0:
        // amplitude (S/2)/(S/2 + σ²s) with S = 1 + σ²(t−s)
        let integrand = |s: f64| {
            let su = 1.0 + sbm.sigma_sq * (t - s);
            let a2 = (1.0 / su).powi(2);
            a2 * (su / 2.0) / (su / 2.0 + sbm.sigma_sq * s)
        };
        let n = 200_000;
        let h = t / n as f64;
        let simpson: f64 = (0..=n)
            .map(|k| {
                let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                w * integrand(k as f64 * h)
            })
            .sum::<f64>()
            * h
            / 3.0;
        assert!((v - sbm.b * simpson).abs() < 1e-9 * v);
    }
}
