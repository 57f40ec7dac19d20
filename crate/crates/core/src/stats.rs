//! Monte Carlo summaries, the two-sample Kolmogorov–Smirnov test and
//! log–log slope fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Count, sum and sum of squares of a sample; merges commute.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accumulator {
    n: u64,
    censored: u64,
    sum: CompensatedSum,
    sum_sq: CompensatedSum,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum.add(x);
        self.sum_sq.add(x * x);
    }

    pub fn push_censored(&mut self, x: f64, censored: bool) {
        self.push(x);
        if censored {
            self.censored += 1;
        }
    }

    pub fn merge(&mut self, other: &Accumulator) {
        self.n += other.n;
        self.censored += other.censored;
        self.sum.merge(&other.sum);
        self.sum_sq.merge(&other.sum_sq);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        self.sum.value() / self.n as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let mean = self.sum.value() / n;
        ((self.sum_sq.value() - n * mean * mean) / (n - 1.0)).max(0.0)
    }

    pub fn estimate(&self, seed: u64) -> McEstimate {
        let var = self.variance();
        McEstimate {
            mean: self.mean(),
            se: if self.n > 0 {
                (var / self.n as f64).sqrt()
            } else {
                0.0
            },
            variance: var,
            replicas: self.n,
            censored: self.censored,
            seed,
        }
    }
}

/// Result of a Monte Carlo run: the mean, its standard error and the
/// provenance of the random streams.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    /// Sample variance of the per-replica values.
    pub variance: f64,
    pub replicas: u64,
    pub censored: u64,
    pub seed: u64,
}

impl McEstimate {
    /// An estimate known exactly (no Monte Carlo error).
    pub fn exact(value: f64, replicas: u64, seed: u64) -> Self {
        McEstimate {
            mean: value,
            se: 0.0,
            variance: 0.0,
            replicas,
            censored: 0,
            seed,
        }
    }

    /// Standard error of the difference of two independent estimates.
    pub fn pooled_se(&self, other: &McEstimate) -> f64 {
        (self.se * self.se + other.se * other.se).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> McEstimate {
        McEstimate {
            mean: self.mean * factor,
            se: self.se * factor.abs(),
            variance: self.variance * factor * factor,
            ..*self
        }
    }
}

/// Mean and standard error of a sample.
pub fn mean_ci(samples: &[f64]) -> Result<McEstimate> {
    if samples.len() < 2 {
        return Err(Error::SampleTooSmall {
            needed: 2,
            got: samples.len(),
        });
    }
    let mut acc = Accumulator::new();
    for &x in samples {
        acc.push(x);
    }
    let mut est = acc.estimate(0);
    // two-pass variance for exactness on constant samples
    let mean = est.mean;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
        / (samples.len() as f64 - 1.0);
    est.variance = var;
    est.se = (var / samples.len() as f64).sqrt();
    Ok(est)
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

impl KsResult {
    pub fn passes(&self, significance: f64) -> bool {
        self.p_value >= significance
    }
}

/// Minimum sample size per side for the asymptotic p-value.
pub const KS_MIN_SAMPLE: usize = 25;

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    for s in [a, b] {
        if s.len() < KS_MIN_SAMPLE {
            return Err(Error::SampleTooSmall {
                needed: KS_MIN_SAMPLE,
                got: s.len(),
            });
        }
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = xs[i].min(ys[j]);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n as f64 * m as f64) / (n + m) as f64;
    let lambda = ne.sqrt() * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(lambda),
    })
}

/// P(K > λ) for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.3 {
        // the alternating series converges slowly here and the value is 1 to
        // double precision
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Least-squares slope of log y against log x, with its standard error.
pub fn loglog_slope(pairs: &[(f64, f64)]) -> Result<(f64, f64)> {
    if pairs.len() < 2 {
        return Err(Error::SampleTooSmall {
            needed: 2,
            got: pairs.len(),
        });
    }
    let pts: Vec<(f64, f64)> = pairs.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("log-log fit needs distinct x values".into()));
    }
    let slope = sxy / sxx;
    if pts.len() == 2 {
        return Ok((slope, 0.0));
    }
    let intercept = my - slope * mx;
    let rss: f64 = pts
        .iter()
        .map(|p| {
            let e = p.1 - intercept - slope * p.0;
            e * e
        })
        .sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    Ok((slope, se))
}
