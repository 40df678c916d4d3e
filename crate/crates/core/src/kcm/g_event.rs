use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::closure_of;
use crate::configuration::{sample_equilibrium, EMPTY};
use crate::environment::{Environment, ModelKind};
use crate::error::{Error, Result};
use crate::kcm::{EventKind, HittingSample, HittingSummary, Lattice, SimParams, Target};
use crate::lattice::{Coord, Dims, Rect};
use crate::rng::{self, STREAM_DYNAMICS};

/// Largest `r >= 1` such that `[-r, r]^2` around the origin is all difficult.
pub fn find_difficult_box(env: &Environment) -> Option<usize> {
    let o = env.origin();
    let full = env.dims().rect();
    let mut best = None;
    for r in 1.. {
        match Rect::centered(o, r) {
            Some(b) if full.contains_rect(&b) && b.coords().all(|c| !env.is_easy(c)) => best = Some(r),
            _ => break,
        }
    }
    best
}

/// `G = union of G_x` over the inner boundary of a box around the origin.
#[derive(Clone, Debug)]
pub struct GEvent<'a> {
    env: &'a Environment,
    lattice: Lattice,
    bx: Rect,
    /// The box grown by one site; changes outside it cannot affect `G`.
    halo: Rect,
    dims: Dims,
    in_span: bool,
}

impl<'a> GEvent<'a> {
    pub fn new(env: &'a Environment, lattice: Lattice, bx: Rect) -> Self {
        let halo = Rect::new(bx.x0.saturating_sub(1), bx.y0.saturating_sub(1), bx.w + 2, bx.h + 2);
        GEvent { env, lattice, bx, halo, dims: env.dims(), in_span: false }
    }

    fn origin_in_span(&self, eta: &[u8], flip: Option<Coord>) -> bool {
        let d = self.dims;
        closure_of(self.env, self.bx, |c| (eta[d.index(c)] == EMPTY) != (Some(c) == flip)).contains(self.env.origin())
    }

    fn holds(&self, eta: &[u8]) -> bool {
        self.in_span
            && self.bx.coords().filter(|c| self.bx.on_inner_boundary(*c)).any(|x| {
                self.lattice.allowed(eta, self.dims.index(x)) && !self.origin_in_span(eta, Some(x))
            })
    }
}

impl Target for GEvent<'_> {
    fn kind(&self) -> EventKind {
        EventKind::GEvent
    }

    fn start(&mut self, eta: &[u8]) -> bool {
        self.in_span = self.origin_in_span(eta, None);
        self.holds(eta)
    }

    fn changed(&mut self, eta: &[u8], i: usize) -> bool {
        let c = self.dims.coord(i);
        if !self.halo.contains(c) {
            return false;
        }
        if self.bx.contains(c) {
            self.in_span = self.origin_in_span(eta, None);
        }
        self.holds(eta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GExperiment {
    pub radius: usize,
    pub samples: Vec<HittingSample>,
    pub summary: HittingSummary,
    /// Initial fields drawn in total, accepted ones included.
    pub draws: u64,
    pub acceptance: f64,
}

const MAX_DRAWS: u64 = 100_000;

/// Hitting time of `G` from equilibrium conditioned on the origin lying
/// outside the span of the largest all-difficult box around it.
pub fn g_hitting_experiment(env: &Environment, params: &SimParams, trials: usize) -> Result<GExperiment> {
    params.validate()?;
    if env.kind() != ModelKind::MixedFa {
        return Err(Error::NotApplicable("the G event is defined for threshold environments".into()));
    }
    let radius = find_difficult_box(env)
        .ok_or_else(|| Error::NotApplicable("no all-difficult box around the origin".into()))?;
    let bx = Rect::centered(env.origin(), radius).unwrap();
    let lattice = Lattice::new(env, params.boundary);
    let dims = env.dims();
    let origin = env.origin();
    let runs: Vec<Result<(HittingSample, u64)>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let ts = rng::trial_seed(params.seed, t);
            for draw in 0..MAX_DRAWS {
                let seed = rng::hash3(ts, draw, 0x6765);
                let mut eta = sample_equilibrium(params.q, dims, params.boundary, seed)?.into_eta();
                if closure_of(env, bx, |c| eta[dims.index(c)] == EMPTY).contains(origin) {
                    continue;
                }
                let mut target = GEvent::new(env, lattice.clone(), bx);
                let mut rng = rng::stream_rng(seed, STREAM_DYNAMICS);
                let s = lattice.run(&mut eta, &mut target, params.q, params.t_max, params.scheme, &mut rng);
                return Ok((s, draw + 1));
            }
            Err(Error::NotApplicable(format!("no admissible start in {MAX_DRAWS} draws")))
        })
        .collect();
    let mut samples = Vec::with_capacity(trials);
    let mut draws = 0;
    for r in runs {
        let (s, d) = r?;
        samples.push(s);
        draws += d;
    }
    let summary = HittingSummary::from_samples(&samples);
    Ok(GExperiment { radius, summary, acceptance: trials as f64 / draws as f64, samples, draws })
}
