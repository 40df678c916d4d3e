use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{ks_exponential, loglog_fit, tail_fit, FitResult, KsResult, QPoint, TailFit};
use super::{Dynamics, SweepSpec};
use crate::bootstrap::bp_tau0_local;
use crate::configuration::sample_equilibrium;
use crate::environment::{Environment, ModelKind};
use crate::error::{Error, Result};
use crate::kcm::{kcm_run, OriginEmpty, SimParams};
use crate::percolation::label_clusters;
use crate::rng;

/// One trial of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub dynamics: Dynamics,
    pub omega: u64,
    pub q: f64,
    pub trial: u64,
    pub seed: u64,
    /// Hitting time, or the final horizon when censored.
    pub tau0: f64,
    pub censored: bool,
}

impl RawRow {
    pub const CSV_HEADER: &'static str = "dynamics,omega,q,trial,seed,tau0,censored";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.dynamics, self.omega, self.q, self.trial, self.seed, self.tau0, self.censored as u8
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub q: f64,
    pub trials: usize,
    pub censor_fraction: f64,
    pub median: Option<f64>,
    /// Reported only when nothing is censored.
    pub mean: Option<f64>,
    /// Horizon after adaptive doubling.
    pub t_max: f64,
    pub window_clipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub dynamics: Dynamics,
    pub omega: u64,
    /// Digest of the quenched environment, absent in annealed mode.
    pub env_digest: Option<String>,
    pub points: Vec<PointSummary>,
    pub fit: Option<FitResult>,
    pub fit_error: Option<String>,
    pub rows: Vec<RawRow>,
}

impl SweepResult {
    fn assemble(spec: &SweepSpec, omega: u64, env_digest: Option<String>, qpoints: Vec<(QPoint, f64)>, rows: Vec<RawRow>) -> Self {
        let points = qpoints
            .iter()
            .map(|(p, t)| PointSummary {
                q: p.q,
                trials: p.values.len(),
                censor_fraction: p.censor_fraction(),
                median: super::Statistic::Median.eval(&p.values, &p.censored),
                mean: super::Statistic::MeanUncensored.eval(&p.values, &p.censored),
                t_max: *t,
                window_clipped: spec.clipped(p.q),
            })
            .collect();
        let pts: Vec<QPoint> = qpoints.into_iter().map(|(p, _)| p).collect();
        let (fit, fit_error) = match loglog_fit(&pts, spec.statistic, spec.resamples, spec.seed ^ omega) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        SweepResult { dynamics: spec.dynamics, omega, env_digest, points, fit, fit_error, rows }
    }
}

/// Runs `trial(t, horizon)` for every trial and doubles the horizon for the
/// censored ones until fewer than `keep` of them are censored (none, for
/// `keep = 0`) or the budget is spent. The trajectories are seeded per
/// trial, so a rerun only extends them.
fn adaptive<F>(trials: usize, t_max: f64, budget: f64, keep: f64, trial: F) -> Result<(Vec<(f64, bool)>, f64)>
where
    F: Fn(u64, f64) -> Result<(f64, bool)> + Sync,
{
    let mut horizon = t_max;
    let mut out: Vec<(f64, bool)> = (0..trials as u64).into_par_iter().map(|t| trial(t, horizon)).collect::<Result<_>>()?;
    loop {
        let censored: Vec<usize> = (0..trials).filter(|&i| out[i].1).collect();
        let few = if keep > 0.0 { (censored.len() as f64) < keep * trials as f64 } else { censored.is_empty() };
        if few || horizon * 2.0 > budget {
            return Ok((out, horizon));
        }
        horizon *= 2.0;
        let redo: Vec<(f64, bool)> =
            censored.par_iter().map(|&i| trial(i as u64, horizon)).collect::<Result<_>>()?;
        for (i, r) in censored.into_iter().zip(redo) {
            out[i] = r;
        }
        for r in out.iter_mut().filter(|r| r.1) {
            r.0 = horizon;
        }
    }
}

/// Censor fraction below which sweeps stop extending the horizon.
pub const SWEEP_CENSORING: f64 = 0.1;

fn collect_rows(dynamics: Dynamics, omega: u64, q: f64, seed: u64, res: &[(f64, bool)], rows: &mut Vec<RawRow>) -> QPoint {
    for (t, &(tau0, censored)) in res.iter().enumerate() {
        rows.push(RawRow { dynamics, omega, q, trial: t as u64, seed: rng::trial_seed(seed, t as u64), tau0, censored });
    }
    QPoint::new(q, res.iter().map(|r| r.0).collect(), res.iter().map(|r| r.1).collect())
}

/// Bootstrap-percolation emptying time of the origin over the q list, and
/// the log-log fit of its median against 1/q.
pub fn bp_scaling_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    if spec.dynamics != Dynamics::Bp || spec.model != ModelKind::MixedFa {
        return Err(Error::Parameter("bp_scaling_sweep needs dynamics = bp and the fa12 model".into()));
    }
    let quenched = if spec.quenched { Some(spec.environment(0)?) } else { None };
    let mut rows = Vec::new();
    let mut qpoints = Vec::new();
    for (qi, &q) in spec.q_list.iter().enumerate() {
        let seed = spec.q_seed(qi);
        let (res, horizon) = adaptive(spec.trials, spec.t_max.ceil(), spec.t_budget, SWEEP_CENSORING, |t, h| {
            let ts = rng::trial_seed(seed, t);
            let annealed;
            let env = match &quenched {
                Some(e) => e,
                None => {
                    annealed = spec.environment(1 + t + ((qi as u64) << 32))?;
                    &annealed
                }
            };
            let r = bp_tau0_local(env, q, ts, h as u64)?;
            Ok(match r.tau0 {
                Some(s) => (s as f64, false),
                None => (h, true),
            })
        })?;
        qpoints.push((collect_rows(Dynamics::Bp, 0, q, seed, &res, &mut rows), horizon));
    }
    Ok(SweepResult::assemble(spec, 0, quenched.map(|e| e.digest()), qpoints, rows))
}

/// KCM sweep on a given environment; `omega` only labels the output.
pub fn kcm_sweep_on(spec: &SweepSpec, env: &Environment, omega: u64) -> Result<SweepResult> {
    spec.validate()?;
    let mut rows = Vec::new();
    let mut qpoints = Vec::new();
    for (qi, &q) in spec.q_list.iter().enumerate() {
        let seed = spec.q_seed(qi);
        let (res, horizon) = adaptive(spec.trials, spec.t_max, spec.t_budget, SWEEP_CENSORING, |t, h| {
            kcm_trial(env, spec, q, seed, t, h)
        })?;
        qpoints.push((collect_rows(Dynamics::Kcm, omega, q, seed, &res, &mut rows), horizon));
    }
    Ok(SweepResult::assemble(spec, omega, Some(env.digest()), qpoints, rows))
}

fn kcm_trial(env: &Environment, spec: &SweepSpec, q: f64, seed: u64, t: u64, horizon: f64) -> Result<(f64, bool)> {
    let mut params = SimParams::new(q, horizon, seed).with_boundary(spec.boundary).with_scheme(spec.scheme);
    params.trial_index = t;
    let config = sample_equilibrium(q, env.dims(), spec.boundary, params.trial_seed())?;
    let s = kcm_run(env, &config, &mut OriginEmpty::new(env), &params)?;
    Ok((s.tau, s.censored))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KcmSweep {
    pub per_omega: Vec<SweepResult>,
    /// Largest minus smallest fitted exponent across environments.
    pub spread: Option<f64>,
    /// Whether the spread exceeds the sum of the two extreme half-widths.
    pub spread_significant: Option<bool>,
}

/// One sweep per quenched environment `0..spec.omegas`.
pub fn kcm_scaling_sweep(spec: &SweepSpec) -> Result<KcmSweep> {
    spec.validate()?;
    if spec.dynamics != Dynamics::Kcm {
        return Err(Error::Parameter("kcm_scaling_sweep needs dynamics = kcm".into()));
    }
    let per_omega = (0..spec.omegas as u64)
        .map(|w| kcm_sweep_on(spec, &spec.environment(w)?, w))
        .collect::<Result<Vec<_>>>()?;
    let fits: Vec<&FitResult> = per_omega.iter().filter_map(|r| r.fit.as_ref()).collect();
    let (spread, spread_significant) = if fits.len() >= 2 {
        let hi = fits.iter().max_by(|a, b| a.slope.total_cmp(&b.slope)).unwrap();
        let lo = fits.iter().min_by(|a, b| a.slope.total_cmp(&b.slope)).unwrap();
        let s = hi.slope - lo.slope;
        (Some(s), Some(s > hi.half_width() + lo.half_width()))
    } else {
        (None, None)
    };
    Ok(KcmSweep { per_omega, spread, spread_significant })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaTail {
    pub omega: u64,
    pub env_digest: String,
    pub origin_easy: bool,
    pub spanning_easy_cluster: bool,
    /// Fraction of trials with the origin already empty.
    pub atom: f64,
    /// Mean of the positive hitting times: the fitted exponential mean.
    pub tau_hat: Option<f64>,
    /// KS test of the positive hitting times against that exponential.
    pub ks: Option<KsResult>,
    /// KS test of the excess over the median positive time among the
    /// samples above it: exponentiality of the tail alone.
    pub tail_ks: Option<KsResult>,
    pub censor_fraction: f64,
    /// Censoring made the per-environment fit unreliable.
    pub heavy: bool,
}

impl OmegaTail {
    pub fn passes(&self, level: f64) -> bool {
        !self.heavy && self.ks.as_ref().is_some_and(|k| k.passes(level))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeTailPoint {
    pub q: f64,
    pub omegas: Vec<OmegaTail>,
    /// Fraction of environments passing KS at the 1% level.
    pub pass_fraction: f64,
    /// The same for the tail test.
    pub tail_pass_fraction: f64,
    /// Across-environment survival fit of `tau_hat`.
    pub tail: Option<TailFit>,
    pub tail_error: Option<String>,
    pub rows: Vec<RawRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeTailResult {
    pub points: Vec<NeTailPoint>,
    /// Whether the log-log tail slope is non-increasing as q decreases.
    pub slope_steepens: Option<bool>,
}

pub const KS_LEVEL: f64 = 0.01;
/// Upper fraction of the across-environment sample used for tail fits.
pub const TAIL_FRACTION: f64 = 0.5;

/// Per-environment exponential fits of the origin's hitting time in the
/// NE/FA1f model, and the shape of the across-environment tail of the
/// fitted means.
pub fn ne_tail_experiment(spec: &SweepSpec) -> Result<NeTailResult> {
    spec.validate()?;
    if spec.model != ModelKind::MixedNeFa1f {
        return Err(Error::Parameter("ne_tail_experiment needs the ne-fa1f model".into()));
    }
    let envs = (0..spec.omegas as u64).map(|w| spec.environment(w)).collect::<Result<Vec<_>>>()?;
    ne_tail_on(spec, &envs)
}

/// As [`ne_tail_experiment`] on given environments, indexed by position.
pub fn ne_tail_on(spec: &SweepSpec, envs: &[Environment]) -> Result<NeTailResult> {
    spec.validate()?;
    let mut points = Vec::new();
    for (qi, &q) in spec.q_list.iter().enumerate() {
        let seed = spec.q_seed(qi);
        let mut rows = Vec::new();
        let mut omegas = Vec::new();
        for (w, env) in envs.iter().enumerate() {
            let w = w as u64;
            let oseed = rng::hash3(seed, w, 0x6e65);
            let (res, _) = adaptive(spec.trials, spec.t_max, spec.t_budget, 0.0, |t, h| kcm_trial(env, spec, q, oseed, t, h))?;
            collect_rows(Dynamics::Kcm, w, q, oseed, &res, &mut rows);
            omegas.push(omega_tail(env, w, &res)?);
        }
        let passing = omegas.iter().filter(|o| o.passes(KS_LEVEL)).count();
        let tail_passing = omegas.iter().filter(|o| o.tail_ks.as_ref().is_some_and(|k| k.passes(KS_LEVEL))).count();
        let hats: Vec<f64> = omegas.iter().filter_map(|o| o.tau_hat).collect();
        let (tail, tail_error) = match tail_fit(&hats, TAIL_FRACTION) {
            Ok(t) => (Some(t), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let pass_fraction = passing as f64 / omegas.len().max(1) as f64;
        let tail_pass_fraction = tail_passing as f64 / omegas.len().max(1) as f64;
        points.push(NeTailPoint { q, omegas, pass_fraction, tail_pass_fraction, tail, tail_error, rows });
    }
    let slopes: Option<Vec<f64>> = points.iter().map(|p| p.tail.as_ref().map(|t| t.loglog_slope)).collect();
    let slope_steepens = slopes.filter(|s| s.len() >= 2).map(|s| s.windows(2).all(|w| w[1] <= w[0]));
    Ok(NeTailResult { points, slope_steepens })
}

fn omega_tail(env: &Environment, omega: u64, res: &[(f64, bool)]) -> Result<OmegaTail> {
    let labels = label_clusters(&(0..env.len()).map(|i| env.is_easy_index(i)).collect::<Vec<_>>(), env.dims())?;
    let n = res.len() as f64;
    let censored = res.iter().filter(|r| r.1).count();
    let positive: Vec<f64> = res.iter().filter(|r| !r.1 && r.0 > 0.0).map(|r| r.0).collect();
    let atom = res.iter().filter(|r| !r.1 && r.0 == 0.0).count() as f64 / n;
    let heavy = censored > 0;
    let tau_hat = (!heavy && !positive.is_empty()).then(|| positive.iter().sum::<f64>() / positive.len() as f64);
    let ks = if heavy { None } else { ks_exponential(&positive).ok() };
    let tail_ks = if heavy {
        None
    } else {
        let mut sorted = positive.clone();
        sorted.sort_by(f64::total_cmp);
        let cut = sorted.get(sorted.len() / 2).copied().unwrap_or(0.0);
        ks_exponential(&sorted.iter().filter(|&&t| t > cut).map(|t| t - cut).collect::<Vec<_>>()).ok()
    };
    Ok(OmegaTail {
        omega,
        env_digest: env.digest(),
        origin_easy: env.is_easy(env.origin()),
        spanning_easy_cluster: labels.spanning_cluster().is_some(),
        atom,
        tau_hat,
        ks,
        tail_ks,
        censor_fraction: censored as f64 / n,
        heavy,
    })
}
