//! Log-log exponent fits, Kolmogorov-Smirnov against an exponential, and
//! tail-shape fits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Samples collected at one value of `q`; censored entries hold the horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QPoint {
    pub q: f64,
    pub values: Vec<f64>,
    pub censored: Vec<bool>,
}

impl QPoint {
    pub fn new(q: f64, values: Vec<f64>, censored: Vec<bool>) -> Self {
        QPoint { q, values, censored }
    }

    pub fn uncensored(q: f64, values: Vec<f64>) -> Self {
        let n = values.len();
        QPoint { q, values, censored: vec![false; n] }
    }

    pub fn censor_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 1.0;
        }
        self.censored.iter().filter(|&&c| c).count() as f64 / self.values.len() as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    /// Median with censored samples ordered last.
    #[default]
    Median,
    /// Plain mean; only defined when nothing is censored.
    MeanUncensored,
}

impl Statistic {
    /// `None` when the statistic is not identified by the sample.
    pub fn eval(self, values: &[f64], censored: &[bool]) -> Option<f64> {
        if values.is_empty() {
            return None;
        }
        match self {
            Statistic::Median => {
                let mut v: Vec<f64> =
                    values.iter().zip(censored).map(|(&x, &c)| if c { f64::INFINITY } else { x }).collect();
                v.sort_by(f64::total_cmp);
                let n = v.len();
                let m = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
                m.is_finite().then_some(m)
            }
            Statistic::MeanUncensored => {
                if censored.iter().any(|&c| c) {
                    return None;
                }
                Some(values.iter().sum::<f64>() / values.len() as f64)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Exponent: slope of log(statistic) against log(1/q).
    pub slope: f64,
    pub intercept: f64,
    /// Percentile bootstrap interval for the slope.
    pub ci: [f64; 2],
    pub statistic: Statistic,
    pub resamples: usize,
    pub r_squared: f64,
    /// q values that entered the fit.
    pub used: Vec<f64>,
    /// q values left out because of censoring, with their censor fraction.
    pub excluded: Vec<(f64, f64)>,
}

impl FitResult {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci[1] - self.ci[0])
    }
}

/// Slope, intercept and R² of ordinary least squares.
pub fn ols(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, intercept, r2))
}

pub const DEFAULT_RESAMPLES: usize = 1000;

/// Least squares of log(statistic) on log(1/q) over the points with censor
/// fraction below one half; the interval resamples trials within each q.
pub fn loglog_fit(points: &[QPoint], statistic: Statistic, resamples: usize, seed: u64) -> Result<FitResult> {
    let mut used = Vec::new();
    let mut excluded = Vec::new();
    for p in points {
        if !(p.q > 0.0 && p.q < 1.0) {
            return Err(Error::Parameter(format!("q = {} outside (0,1)", p.q)));
        }
        let cf = p.censor_fraction();
        match statistic.eval(&p.values, &p.censored) {
            Some(s) if cf < 0.5 && s > 0.0 => used.push(p),
            _ => excluded.push((p.q, cf)),
        }
    }
    if used.len() < 3 {
        return Err(Error::FitUnavailable(format!("{} usable q values, need 3", used.len())));
    }
    let x: Vec<f64> = used.iter().map(|p| (1.0 / p.q).ln()).collect();
    let y: Vec<f64> = used.iter().map(|p| statistic.eval(&p.values, &p.censored).unwrap().ln()).collect();
    let (slope, intercept, r_squared) =
        ols(&x, &y).ok_or_else(|| Error::FitUnavailable("q values coincide".into()))?;

    let mut rng = stream_rng(seed, 0x666974);
    let mut slopes = Vec::with_capacity(resamples);
    let mut vals = Vec::new();
    let mut cens = Vec::new();
    let mut yb = vec![0.0; used.len()];
    'rep: for _ in 0..resamples {
        for (j, p) in used.iter().enumerate() {
            let n = p.values.len();
            vals.clear();
            cens.clear();
            for _ in 0..n {
                let i = rng.gen_range(0..n);
                vals.push(p.values[i]);
                cens.push(p.censored[i]);
            }
            match statistic.eval(&vals, &cens) {
                Some(s) if s > 0.0 => yb[j] = s.ln(),
                _ => continue 'rep,
            }
        }
        if let Some((s, _, _)) = ols(&x, &yb) {
            slopes.push(s);
        }
    }
    let ci = if slopes.is_empty() {
        [f64::NEG_INFINITY, f64::INFINITY]
    } else {
        slopes.sort_by(f64::total_cmp);
        let at = |p: f64| slopes[((p * (slopes.len() - 1) as f64).round() as usize).min(slopes.len() - 1)];
        [at(0.025).min(slope), at(0.975).max(slope)]
    };
    Ok(FitResult {
        slope,
        intercept,
        ci,
        statistic,
        resamples,
        r_squared,
        used: used.iter().map(|p| p.q).collect(),
        excluded,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub n: usize,
    /// Fitted rate, the inverse sample mean.
    pub rate: f64,
    pub statistic: f64,
    pub p_value: f64,
}

impl KsResult {
    pub fn passes(&self, level: f64) -> bool {
        self.p_value >= level
    }
}

/// Asymptotic Kolmogorov tail `P(K > x)`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.3 {
        // the alternating series converges slowly here; the tail is 1 to double precision
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test of positive samples against the exponential law with
/// the fitted rate, p-value from the Kolmogorov law with Stephens' finite-n
/// correction. Estimating the rate makes the test conservative.
pub fn ks_exponential(samples: &[f64]) -> Result<KsResult> {
    let n = samples.len();
    if n < 5 {
        return Err(Error::Parameter(format!("KS test needs at least 5 samples, got {n}")));
    }
    if samples.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Parameter("KS samples must be finite and non-negative".into()));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if mean <= 0.0 {
        return Err(Error::Parameter("KS samples are all zero".into()));
    }
    let rate = 1.0 / mean;
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &t) in v.iter().enumerate() {
        let f = 1.0 - (-rate * t).exp();
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    let sq = nf.sqrt();
    let p_value = kolmogorov_sf(d * (sq + 0.12 + 0.11 / sq));
    Ok(KsResult { n, rate, statistic: d, p_value })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    /// Slope of log survival against log t.
    pub loglog_slope: f64,
    pub loglog_r2: f64,
    /// Slope of log survival against t.
    pub semilog_slope: f64,
    pub semilog_r2: f64,
    pub points: usize,
}

impl TailFit {
    /// Power-law shaped: finite negative log-log slope that fits at least as
    /// well as an exponential.
    pub fn heavier_than_exponential(&self) -> bool {
        self.loglog_slope.is_finite() && self.loglog_slope < 0.0 && self.loglog_r2 >= self.semilog_r2
    }
}

/// Fits the empirical survival function on the upper `tail` fraction of
/// the sample (order statistics at and above the `1 - tail` quantile).
pub fn tail_fit(samples: &[f64], tail: f64) -> Result<TailFit> {
    let mut v: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite() && *x > 0.0).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let start = ((1.0 - tail.clamp(0.0, 1.0)) * n as f64).floor() as usize;
    let mut t = Vec::new();
    let mut s = Vec::new();
    // survival at the i-th order statistic; the last one (S = 0) is dropped
    for (i, &x) in v.iter().enumerate().take(n.saturating_sub(1)).skip(start) {
        if i + 1 < n && v[i + 1] == x {
            continue;
        }
        t.push(x);
        s.push(((n - i - 1) as f64 / n as f64).ln());
    }
    if t.len() < 3 {
        return Err(Error::FitUnavailable(format!("{} distinct tail points, need 3", t.len())));
    }
    let lt: Vec<f64> = t.iter().map(|x| x.ln()).collect();
    let unavailable = || Error::FitUnavailable("degenerate tail".into());
    let (loglog_slope, _, loglog_r2) = ols(&lt, &s).ok_or_else(unavailable)?;
    let (semilog_slope, _, semilog_r2) = ols(&t, &s).ok_or_else(unavailable)?;
    Ok(TailFit { loglog_slope, loglog_r2, semilog_slope, semilog_r2, points: t.len() })
}
