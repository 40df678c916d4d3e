//! Experiment orchestration: q-sweeps with exponent fits, the NE/FA1f tail
//! experiment, and run directories driven by a TOML config.
//!
//! Seeds are derived per (q index, trial) and per environment index from
//! one master seed, so tables do not depend on the worker count.

mod config;
mod fit;
mod sweep;

pub use config::{run_config, run_config_str, RunBundle, RunConfig};
pub use fit::{
    kolmogorov_sf, ks_exponential, loglog_fit, ols, tail_fit, FitResult, KsResult, QPoint, Statistic, TailFit,
    DEFAULT_RESAMPLES,
};
pub use sweep::{
    bp_scaling_sweep, kcm_scaling_sweep, kcm_sweep_on, ne_tail_experiment, ne_tail_on, KcmSweep, NeTailPoint,
    NeTailResult, OmegaTail, PointSummary, RawRow, SweepResult,
};

use serde::{Deserialize, Serialize};

use crate::environment::{sample_environment, EnvParams, Environment, ModelKind};
use crate::error::{Error, Result};
use crate::kcm::Scheme;
use crate::lattice::Boundary;
use crate::rng::{self, STREAM_ENVIRONMENT, STREAM_TRIAL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dynamics {
    Bp,
    Kcm,
}

impl std::fmt::Display for Dynamics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Dynamics::Bp => "bp",
            Dynamics::Kcm => "kcm",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub model: ModelKind,
    pub pi: f64,
    /// Strictly decreasing, inside (0,1).
    pub q_list: Vec<f64>,
    /// Side of the square window.
    pub window: usize,
    /// Box side used for the window-size guideline; `None` means 1.
    pub side: Option<usize>,
    pub trials: usize,
    /// Initial horizon (BP steps or KCM time).
    pub t_max: f64,
    /// Ceiling for the adaptive doubling of the horizon.
    pub t_budget: f64,
    pub seed: u64,
    pub dynamics: Dynamics,
    /// One environment per sweep (or per index) versus one per trial.
    pub quenched: bool,
    pub boundary: Boundary,
    pub scheme: Scheme,
    pub statistic: Statistic,
    pub resamples: usize,
    /// Number of quenched environments for multi-environment experiments.
    pub omegas: usize,
}

impl SweepSpec {
    pub fn new(model: ModelKind, pi: f64, q_list: Vec<f64>, window: usize, trials: usize, dynamics: Dynamics) -> Self {
        let t_max = match dynamics {
            Dynamics::Bp => window as f64,
            Dynamics::Kcm => 100.0,
        };
        SweepSpec {
            model,
            pi,
            q_list,
            window,
            side: None,
            trials,
            t_max,
            t_budget: t_max * 64.0,
            seed: 0,
            dynamics,
            quenched: true,
            boundary: Boundary::Occupied,
            scheme: Scheme::Rejection,
            statistic: Statistic::Median,
            resamples: DEFAULT_RESAMPLES,
            omegas: 1,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.pi > 0.0 && self.pi <= 1.0) {
            problems.push(format!("pi = {} outside (0,1]", self.pi));
        }
        if self.q_list.is_empty() {
            problems.push("q_list is empty".into());
        }
        if let Some(q) = self.q_list.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
            problems.push(format!("q = {q} outside (0,1)"));
        }
        if self.q_list.windows(2).any(|w| !(w[0] > w[1])) {
            problems.push("q_list must be strictly decreasing".into());
        }
        if self.trials == 0 {
            problems.push("trials must be at least 1".into());
        }
        if self.window == 0 {
            problems.push("window must be positive".into());
        }
        if !(self.t_max > 0.0) || !(self.t_budget >= self.t_max) {
            problems.push(format!("need 0 < t_max <= t_budget, got {} and {}", self.t_max, self.t_budget));
        }
        if self.omegas == 0 {
            problems.push("omegas must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Seed of environment number `omega`.
    pub fn env_seed(&self, omega: u64) -> u64 {
        rng::hash3(self.seed, STREAM_ENVIRONMENT, omega)
    }

    /// Master seed of the trials at the `qi`-th q value.
    pub fn q_seed(&self, qi: usize) -> u64 {
        rng::hash3(self.seed, STREAM_TRIAL, qi as u64)
    }

    pub fn environment(&self, omega: u64) -> Result<Environment> {
        sample_environment(EnvParams::new(self.model, self.pi, self.window, self.window, self.env_seed(omega)))
    }

    /// Whether the window is below `4 q^{-1/2} L` sites across.
    pub fn clipped(&self, q: f64) -> bool {
        (self.window as f64) < 4.0 * q.powf(-0.5) * self.side.unwrap_or(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation_collects_problems() {
        let mut s = SweepSpec::new(ModelKind::MixedFa, 0.5, vec![0.1, 0.2], 11, 0, Dynamics::Bp);
        s.omegas = 0;
        match s.validate() {
            Err(Error::Config(p)) => assert_eq!(p.len(), 3, "{p:?}"),
            other => panic!("{other:?}"),
        }
        s.q_list = vec![0.2, 0.1];
        s.trials = 1;
        s.omegas = 1;
        s.validate().unwrap();
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let s = SweepSpec::new(ModelKind::MixedFa, 0.5, vec![0.1], 11, 1, Dynamics::Bp).with_seed(9);
        assert_ne!(s.env_seed(0), s.env_seed(1));
        assert_ne!(s.q_seed(0), s.q_seed(1));
        assert_ne!(s.env_seed(0), s.q_seed(0));
    }
}
