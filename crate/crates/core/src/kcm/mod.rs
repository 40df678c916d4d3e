//! Continuous-time constrained dynamics and hitting times.
//!
//! Every site carries a rate-1 clock; when it rings and the constraint
//! holds, the site is redrawn from Bernoulli(q) (empty with probability q).
//! [`Scheme::Rejection`] simulates exactly that. [`Scheme::Tracked`] keeps
//! the sets of flippable sites up to date and only draws state changes,
//! which has the same law for the trajectory and is much faster when most
//! sites are blocked.

mod boxes;
mod flip_path;
mod g_event;

pub use boxes::{bad_event_b, bad_event_probability, is_essentially_empty, path_length_for, BadEvent};
pub use flip_path::{build_flip_path, digest_of, FlipPath, FlipStep};
pub use g_event::{find_difficult_box, g_hitting_experiment, GEvent, GExperiment};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::configuration::{sample_equilibrium, Configuration};
use crate::configuration::{check_q, EMPTY, OCCUPIED};
use crate::environment::{Environment, SiteRule};
use crate::error::{Error, Result};
use crate::lattice::{Boundary, Dir};
use crate::rng::{self, STREAM_DYNAMICS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub q: f64,
    pub t_max: f64,
    pub boundary: Boundary,
    pub seed: u64,
    pub trial_index: u64,
    #[serde(default)]
    pub scheme: Scheme,
}

impl SimParams {
    pub fn new(q: f64, t_max: f64, seed: u64) -> Self {
        SimParams { q, t_max, boundary: Boundary::Occupied, seed, trial_index: 0, scheme: Scheme::Rejection }
    }

    pub fn with_boundary(mut self, b: Boundary) -> Self {
        self.boundary = b;
        self
    }

    pub fn with_scheme(mut self, s: Scheme) -> Self {
        self.scheme = s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_q(self.q)?;
        if !(self.t_max > 0.0) {
            return Err(Error::Parameter(format!("t_max must be positive, got {}", self.t_max)));
        }
        Ok(())
    }

    /// Seed shared by the initial field and the clocks of trial `trial_index`.
    pub fn trial_seed(&self) -> u64 {
        rng::trial_seed(self.seed, self.trial_index)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Global clock of rate |V|, uniform site, constraint check, fresh draw.
    #[default]
    Rejection,
    /// Only state changes are drawn, from the current flippable sets.
    Tracked,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rejection" => Ok(Scheme::Rejection),
            "tracked" => Ok(Scheme::Tracked),
            _ => Err(Error::Parameter(format!("unknown scheme {s:?} (rejection, tracked)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    OriginEmpty,
    BadEvent,
    GEvent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingSample {
    /// Hitting time, or `t_max` when censored.
    pub tau: f64,
    pub censored: bool,
    pub event: EventKind,
    /// Clock rings (rejection) or state changes (tracked) used.
    pub rings: u64,
}

/// A set of configurations watched during a run.
pub trait Target {
    fn kind(&self) -> EventKind;
    /// Resets internal state for the initial field; returns whether it already holds.
    fn start(&mut self, eta: &[u8]) -> bool;
    /// Called after site `i` changed value; `eta` is the new field.
    fn changed(&mut self, eta: &[u8], i: usize) -> bool;
}

#[derive(Clone, Copy, Debug)]
pub struct OriginEmpty {
    origin: usize,
}

impl OriginEmpty {
    pub fn new(env: &Environment) -> Self {
        OriginEmpty { origin: env.dims().index(env.origin()) }
    }
}

impl Target for OriginEmpty {
    fn kind(&self) -> EventKind {
        EventKind::OriginEmpty
    }

    fn start(&mut self, eta: &[u8]) -> bool {
        eta[self.origin] == EMPTY
    }

    fn changed(&mut self, eta: &[u8], i: usize) -> bool {
        i == self.origin && eta[i] == EMPTY
    }
}

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
enum Compiled {
    /// Needs `need` empty neighbours; `base` out-of-window neighbours count as empty.
    Count { need: u8, base: u8 },
    /// North and east must be empty; missing ones pass unless `blocked`.
    NorthEast { blocked: bool },
}

/// Neighbour table and compiled rules for one environment and boundary.
#[derive(Clone, Debug)]
pub struct Lattice {
    nbr: Vec<[u32; 4]>,
    rule: Vec<Compiled>,
}

impl Lattice {
    pub fn new(env: &Environment, boundary: Boundary) -> Self {
        let dims = env.dims();
        let mut nbr = Vec::with_capacity(dims.len());
        let mut rule = Vec::with_capacity(dims.len());
        for i in 0..dims.len() {
            let c = dims.coord(i);
            let n = Dir::ALL.map(|d| dims.neighbor(c, d).map_or(NONE, |m| dims.index(m) as u32));
            let missing = n.iter().filter(|&&j| j == NONE).count() as u8;
            rule.push(match env.rule_index(i) {
                SiteRule::Threshold(k) => match boundary {
                    Boundary::Occupied => Compiled::Count { need: k, base: 0 },
                    Boundary::Empty => Compiled::Count { need: k, base: missing },
                    Boundary::Free => Compiled::Count { need: k.min(4 - missing), base: 0 },
                },
                SiteRule::NorthEast => Compiled::NorthEast {
                    blocked: boundary == Boundary::Occupied && (n[0] == NONE || n[1] == NONE),
                },
            });
            nbr.push(n);
        }
        Lattice { nbr, rule }
    }

    pub fn len(&self) -> usize {
        self.nbr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nbr.is_empty()
    }

    #[inline]
    pub fn allowed(&self, eta: &[u8], i: usize) -> bool {
        let n = &self.nbr[i];
        match self.rule[i] {
            Compiled::Count { need, base } => {
                let mut e = base;
                for &j in n {
                    if j != NONE && eta[j as usize] == EMPTY {
                        e += 1;
                    }
                }
                e >= need
            }
            Compiled::NorthEast { blocked } => {
                !blocked
                    && (n[0] == NONE || eta[n[0] as usize] == EMPTY)
                    && (n[1] == NONE || eta[n[1] as usize] == EMPTY)
            }
        }
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.nbr[i].iter().filter(|&&j| j != NONE).map(|&j| j as usize)
    }

    /// Simulates from `eta` until `target` holds or time exceeds `t_max`.
    pub fn run<T: Target + ?Sized>(
        &self,
        eta: &mut [u8],
        target: &mut T,
        q: f64,
        t_max: f64,
        scheme: Scheme,
        rng: &mut ChaCha8Rng,
    ) -> HittingSample {
        let event = target.kind();
        if target.start(eta) {
            return HittingSample { tau: 0.0, censored: false, event, rings: 0 };
        }
        match scheme {
            Scheme::Rejection => self.run_rejection(eta, target, q, t_max, rng),
            Scheme::Tracked => self.run_tracked(eta, target, q, t_max, rng),
        }
    }

    fn run_rejection<T: Target + ?Sized>(
        &self,
        eta: &mut [u8],
        target: &mut T,
        q: f64,
        t_max: f64,
        rng: &mut ChaCha8Rng,
    ) -> HittingSample {
        let n = self.len();
        let rate = n as f64;
        let mut t = 0.0;
        let mut rings = 0u64;
        loop {
            t += exp_sample(rng) / rate;
            if t > t_max {
                return HittingSample { tau: t_max, censored: true, event: target.kind(), rings };
            }
            rings += 1;
            let i = rng.gen_range(0..n);
            if !self.allowed(eta, i) {
                continue;
            }
            let v = if rng.gen::<f64>() < q { EMPTY } else { OCCUPIED };
            if v != eta[i] {
                eta[i] = v;
                if target.changed(eta, i) {
                    return HittingSample { tau: t, censored: false, event: target.kind(), rings };
                }
            }
        }
    }

    fn run_tracked<T: Target + ?Sized>(
        &self,
        eta: &mut [u8],
        target: &mut T,
        q: f64,
        t_max: f64,
        rng: &mut ChaCha8Rng,
    ) -> HittingSample {
        // sets[0]: flippable occupied sites, sets[1]: flippable empty sites
        let n = self.len();
        let mut sets = [IndexSet::new(n), IndexSet::new(n)];
        for i in 0..n {
            if self.allowed(eta, i) {
                sets[class(eta[i])].insert(i);
            }
        }
        let rates = [q, 1.0 - q];
        let mut t = 0.0;
        let mut rings = 0u64;
        loop {
            let r0 = rates[0] * sets[0].len() as f64;
            let total = r0 + rates[1] * sets[1].len() as f64;
            if total <= 0.0 {
                return HittingSample { tau: t_max, censored: true, event: target.kind(), rings };
            }
            t += exp_sample(rng) / total;
            if t > t_max {
                return HittingSample { tau: t_max, censored: true, event: target.kind(), rings };
            }
            rings += 1;
            let k = usize::from(rng.gen::<f64>() * total >= r0);
            let k = if sets[k].len() == 0 { 1 - k } else { k };
            let i = sets[k].get(rng.gen_range(0..sets[k].len()));
            sets[k].remove(i);
            eta[i] ^= 1;
            sets[class(eta[i])].insert(i);
            for j in self.neighbors(i) {
                let c = class(eta[j]);
                let now = self.allowed(eta, j);
                if now != sets[c].contains(j) {
                    if now {
                        sets[c].insert(j);
                    } else {
                        sets[c].remove(j);
                    }
                }
            }
            if target.changed(eta, i) {
                return HittingSample { tau: t, censored: false, event: target.kind(), rings };
            }
        }
    }
}

#[inline]
fn class(v: u8) -> usize {
    usize::from(v == EMPTY)
}

#[inline]
fn exp_sample(rng: &mut ChaCha8Rng) -> f64 {
    // 1 - u lies in (0, 1]
    -(1.0 - rng.gen::<f64>()).ln()
}

/// Set of small integers with O(1) insert, remove and uniform access.
#[derive(Clone, Debug)]
struct IndexSet {
    items: Vec<u32>,
    pos: Vec<u32>,
}

impl IndexSet {
    fn new(n: usize) -> Self {
        IndexSet { items: Vec::new(), pos: vec![NONE; n] }
    }

    fn len(&self) -> usize {
        self.items.len()
    }

    fn contains(&self, i: usize) -> bool {
        self.pos[i] != NONE
    }

    fn get(&self, k: usize) -> usize {
        self.items[k] as usize
    }

    fn insert(&mut self, i: usize) {
        if self.pos[i] == NONE {
            self.pos[i] = self.items.len() as u32;
            self.items.push(i as u32);
        }
    }

    fn remove(&mut self, i: usize) {
        let p = self.pos[i];
        if p == NONE {
            return;
        }
        let last = self.items.pop().unwrap();
        if last as usize != i {
            self.items[p as usize] = last;
            self.pos[last as usize] = p;
        }
        self.pos[i] = NONE;
    }
}

/// One trajectory from `config` with clocks drawn from `params.trial_seed()`.
pub fn kcm_run<T: Target + ?Sized>(
    env: &Environment,
    config: &Configuration,
    target: &mut T,
    params: &SimParams,
) -> Result<HittingSample> {
    params.validate()?;
    crate::bootstrap::check_dims(env, config)?;
    let lattice = Lattice::new(env, config.boundary);
    let mut eta = config.eta().to_vec();
    let mut rng = rng::stream_rng(params.trial_seed(), STREAM_DYNAMICS);
    Ok(lattice.run(&mut eta, target, params.q, params.t_max, params.scheme, &mut rng))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingSummary {
    pub trials: usize,
    /// Mean with censored samples counted at `t_max`.
    pub mean: f64,
    pub se: f64,
    /// `None` when at least half the samples are censored.
    pub median: Option<f64>,
    pub censor_fraction: f64,
    /// True when some sample is censored, so `mean` only bounds from below.
    pub lower_bound_only: bool,
}

impl HittingSummary {
    pub fn from_samples(samples: &[HittingSample]) -> Self {
        let n = samples.len();
        let mean = samples.iter().map(|s| s.tau).sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s.tau - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
        let censored = samples.iter().filter(|s| s.censored).count();
        HittingSummary {
            trials: n,
            mean,
            se: (var / n as f64).sqrt(),
            median: median_uncensored(samples),
            censor_fraction: censored as f64 / n as f64,
            lower_bound_only: censored > 0,
        }
    }
}

/// Sample median with censored values ordered last; `None` if it is one of them.
pub fn median_uncensored(samples: &[HittingSample]) -> Option<f64> {
    let mut v: Vec<f64> = samples.iter().map(|s| if s.censored { f64::INFINITY } else { s.tau }).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    let m = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    m.is_finite().then_some(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tau0Estimate {
    pub samples: Vec<HittingSample>,
    pub summary: HittingSummary,
}

/// Independent trials from equilibrium: trial `t` uses seed
/// `trial_seed(params.seed, t)` for both the initial field and the clocks.
pub fn estimate_tau0(env: &Environment, params: &SimParams, trials: usize) -> Result<Tau0Estimate> {
    estimate_hitting(env, params, trials, || OriginEmpty::new(env))
}

pub fn estimate_hitting<T, F>(env: &Environment, params: &SimParams, trials: usize, make: F) -> Result<Tau0Estimate>
where
    T: Target,
    F: Fn() -> T + Sync,
{
    params.validate()?;
    if trials == 0 {
        return Err(Error::Parameter("trials must be positive".into()));
    }
    let lattice = Lattice::new(env, params.boundary);
    let dims = env.dims();
    let samples: Vec<HittingSample> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let seed = rng::trial_seed(params.seed, t);
            let mut eta = sample_equilibrium(params.q, dims, params.boundary, seed).expect("q validated").into_eta();
            let mut rng = rng::stream_rng(seed, STREAM_DYNAMICS);
            let mut target = make();
            lattice.run(&mut eta, &mut target, params.q, params.t_max, params.scheme, &mut rng)
        })
        .collect();
    let summary = HittingSummary::from_samples(&samples);
    Ok(Tau0Estimate { samples, summary })
}
