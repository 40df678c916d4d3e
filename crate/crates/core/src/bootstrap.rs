//! Bootstrap percolation: constraints, synchronous dynamics and spans.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::configuration::{Configuration, Site, EMPTY, OCCUPIED};
use crate::environment::{Environment, ModelKind, SiteRule};
use crate::error::{Error, Result};
use crate::lattice::{Coord, Dir, Rect};
use crate::percolation::{BoxGrid, BoxIdx, ClusterGeometry};

const NEVER: u32 = u32::MAX;

/// Neighbour states are given in `Dir::ALL` order (east, north, west, south).
#[inline]
pub fn rule_allows(rule: SiteRule, nbrs: [Site; 4]) -> bool {
    match rule {
        SiteRule::Threshold(k) => {
            let mut empty = 0u8;
            let mut present = 0u8;
            for s in nbrs {
                match s {
                    Site::Empty => {
                        empty += 1;
                        present += 1;
                    }
                    Site::Occupied => present += 1,
                    Site::Absent => {}
                }
            }
            empty >= k.min(present)
        }
        SiteRule::NorthEast => nbrs[0] != Site::Occupied && nbrs[1] != Site::Occupied,
    }
}

/// `c_x(eta)`: whether site `x` may change state.
pub fn constraint(env: &Environment, config: &Configuration, x: Coord) -> Result<bool> {
    check_dims(env, config)?;
    config.dims().check(x)?;
    Ok(constraint_unchecked(env, config, x))
}

#[inline]
pub(crate) fn constraint_unchecked(env: &Environment, config: &Configuration, x: Coord) -> bool {
    let nbrs = Dir::ALL.map(|d| config.neighbor(x, d));
    rule_allows(env.rule(x), nbrs)
}

pub(crate) fn check_dims(env: &Environment, config: &Configuration) -> Result<()> {
    if env.dims() == config.dims() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "configuration {}x{} does not match environment {}x{}",
            config.dims().width,
            config.dims().height,
            env.width(),
            env.height()
        )))
    }
}

/// One synchronous sweep: every occupied site whose constraint holds in the
/// current field becomes empty.
pub fn bp_step(env: &Environment, config: &Configuration) -> Result<Configuration> {
    check_dims(env, config)?;
    let dims = config.dims();
    let mut next = config.clone();
    for i in 0..dims.len() {
        if !config.is_empty_index(i) && constraint_unchecked(env, config, dims.coord(i)) {
            next.eta_mut()[i] = EMPTY;
        }
    }
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BpResult {
    /// Step at which the origin first became empty; `None` if censored.
    pub tau0: Option<u64>,
    /// Row-major first-empty step per site.
    pub emptied_at: Vec<Option<u32>>,
    pub steps_run: u64,
    pub fixed_point: bool,
}

impl BpResult {
    pub fn censored(&self) -> bool {
        self.tau0.is_none()
    }
}

/// A rectangle simulated in isolation; neighbours outside it read as `edge`.
struct Region<'a> {
    env: &'a Environment,
    rect: Rect,
    edge: Site,
}

impl Region<'_> {
    #[inline]
    fn local(&self, c: Coord) -> usize {
        (c.y - self.rect.y0) * self.rect.w + (c.x - self.rect.x0)
    }

    #[inline]
    fn coord(&self, k: usize) -> Coord {
        Coord::new(self.rect.x0 + k % self.rect.w, self.rect.y0 + k / self.rect.w)
    }

    #[inline]
    fn neighbor_index(&self, c: Coord, d: Dir) -> Option<usize> {
        c.step(d).filter(|n| self.rect.contains(*n)).map(|n| self.local(n))
    }

    #[inline]
    fn allows(&self, eta: &[u8], k: usize) -> bool {
        let c = self.coord(k);
        let nbrs = Dir::ALL.map(|d| match self.neighbor_index(c, d) {
            Some(j) if eta[j] == EMPTY => Site::Empty,
            Some(_) => Site::Occupied,
            None => self.edge,
        });
        rule_allows(self.env.rule(c), nbrs)
    }
}

struct Evolution {
    emptied_at: Vec<u32>,
    steps: u64,
    fixed_point: bool,
    stopped_at: Option<u64>,
}

/// Synchronous dynamics on a region, tracking only sites next to fresh empties.
fn evolve(region: &Region<'_>, eta: &mut [u8], t_max: u64, stop: Option<usize>) -> Evolution {
    let n = eta.len();
    let mut emptied_at: Vec<u32> = eta.iter().map(|&v| if v == EMPTY { 0 } else { NEVER }).collect();
    if let Some(s) = stop {
        if eta[s] == EMPTY {
            return Evolution { emptied_at, steps: 0, fixed_point: false, stopped_at: Some(0) };
        }
    }
    let mut queued = vec![0u32; n];
    let mut candidates: Vec<usize> = (0..n).filter(|&k| eta[k] != EMPTY).collect();
    let mut fresh = Vec::new();
    let mut t = 0u64;
    while t < t_max {
        let step = (t + 1) as u32;
        fresh.clear();
        for &k in &candidates {
            if eta[k] != EMPTY && region.allows(eta, k) {
                fresh.push(k);
            }
        }
        if fresh.is_empty() {
            return Evolution { emptied_at, steps: t, fixed_point: true, stopped_at: None };
        }
        t += 1;
        for &k in &fresh {
            eta[k] = EMPTY;
            emptied_at[k] = step;
        }
        if let Some(s) = stop {
            if eta[s] == EMPTY {
                return Evolution { emptied_at, steps: t, fixed_point: false, stopped_at: Some(t) };
            }
        }
        candidates.clear();
        for &k in &fresh {
            let c = region.coord(k);
            for d in Dir::ALL {
                if let Some(j) = region.neighbor_index(c, d) {
                    if eta[j] != EMPTY && queued[j] != step {
                        queued[j] = step;
                        candidates.push(j);
                    }
                }
            }
        }
    }
    let fixed_point = candidates.iter().all(|&k| !region.allows(eta, k));
    Evolution { emptied_at, steps: t, fixed_point, stopped_at: None }
}

fn to_result(ev: Evolution) -> BpResult {
    BpResult {
        tau0: ev.stopped_at,
        emptied_at: ev.emptied_at.into_iter().map(|t| (t != NEVER).then_some(t)).collect(),
        steps_run: ev.steps,
        fixed_point: ev.fixed_point,
    }
}

/// Runs until the origin empties, a fixed point is reached, or `t_max` steps.
pub fn bp_run(env: &Environment, config: &Configuration, t_max: u64) -> Result<BpResult> {
    check_dims(env, config)?;
    let region = Region { env, rect: env.dims().rect(), edge: Site::from_boundary(config.boundary) };
    let mut eta = config.eta().to_vec();
    let origin = env.dims().index(env.origin());
    Ok(to_result(evolve(&region, &mut eta, t_max, Some(origin))))
}

/// Runs to a fixed point (or `t_max`) without stopping at the origin.
pub fn bp_evolve(env: &Environment, config: &Configuration, t_max: u64) -> Result<(Configuration, BpResult)> {
    check_dims(env, config)?;
    let region = Region { env, rect: env.dims().rect(), edge: Site::from_boundary(config.boundary) };
    let mut eta = config.eta().to_vec();
    let mut res = to_result(evolve(&region, &mut eta, t_max, None));
    let origin = env.dims().index(env.origin());
    res.tau0 = res.emptied_at[origin].map(u64::from);
    let out = Configuration::from_eta(config.dims(), config.boundary, eta)?;
    Ok((out, res))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalTau0 {
    pub tau0: Option<u64>,
    /// Radius of the simulated box around the origin.
    pub radius: usize,
}

/// Emptying time of the origin for the equilibrium field `(q, seed)` on the
/// whole window with occupied boundary, simulating only a box around the
/// origin. Influence travels at most one site per step, so a box of radius
/// `r` reproduces the full-window answer whenever the origin empties by
/// step `r`; otherwise the radius doubles until the box covers the window.
pub fn bp_tau0_local(env: &Environment, q: f64, seed: u64, t_max: u64) -> Result<LocalTau0> {
    crate::configuration::check_q(q)?;
    let dims = env.dims();
    let origin = env.origin();
    let full = dims.rect();
    let mut r = 8usize;
    loop {
        let half = Rect::new(origin.x.saturating_sub(r), origin.y.saturating_sub(r), 2 * r + 1, 2 * r + 1);
        let rect = half.intersect(&full);
        let covers = rect == full;
        let region = Region { env, rect, edge: Site::Occupied };
        let mut eta = crate::configuration::sample_equilibrium_rect(q, dims, rect, seed);
        let horizon = if covers { t_max } else { t_max.min(r as u64) };
        let ev = evolve(&region, &mut eta, horizon, Some(region.local(origin)));
        if ev.stopped_at.is_some() || covers || horizon == t_max {
            return Ok(LocalTau0 { tau0: ev.stopped_at, radius: r });
        }
        r *= 2;
    }
}

/// The sites of a rectangle lying in its span.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Span {
    pub rect: Rect,
    mask: Vec<bool>,
}

impl Span {
    pub fn contains(&self, c: Coord) -> bool {
        self.rect.contains(c) && self.mask[(c.y - self.rect.y0) * self.rect.w + (c.x - self.rect.x0)]
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_full(&self) -> bool {
        self.mask.iter().all(|&b| b)
    }

    pub fn coords(&self) -> Vec<Coord> {
        self.rect.coords().filter(|c| self.contains(*c)).collect()
    }
}

/// Span of `region`: bootstrap percolation seeded by the empty sites of
/// the region only, with every site outside it held occupied.
pub fn bp_closure(env: &Environment, config: &Configuration, region: Rect) -> Result<Span> {
    check_dims(env, config)?;
    env.dims().check_rect(&region)?;
    Ok(closure_of(env, region, |c| config.is_empty(c)))
}

pub(crate) fn closure_of(env: &Environment, rect: Rect, empty: impl Fn(Coord) -> bool) -> Span {
    let region = Region { env, rect, edge: Site::Occupied };
    let n = rect.area();
    let mut eta: Vec<u8> = rect.coords().map(|c| if empty(c) { EMPTY } else { OCCUPIED }).collect();
    let mut queue: VecDeque<usize> = (0..n).filter(|&k| eta[k] != EMPTY).collect();
    let mut queued: Vec<bool> = eta.iter().map(|&v| v != EMPTY).collect();
    while let Some(k) = queue.pop_front() {
        queued[k] = false;
        if eta[k] == EMPTY || !region.allows(&eta, k) {
            continue;
        }
        eta[k] = EMPTY;
        let c = region.coord(k);
        for d in Dir::ALL {
            if let Some(j) = region.neighbor_index(c, d) {
                if eta[j] != EMPTY && !queued[j] {
                    queued[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    Span { rect, mask: eta.into_iter().map(|v| v == EMPTY).collect() }
}

pub fn internally_spanned(env: &Environment, config: &Configuration, rect: Rect) -> Result<bool> {
    Ok(bp_closure(env, config, rect)?.is_full())
}

/// Whether the span of an all-difficult FA rectangle is the union of the
/// bounding rectangles of its connected components, each internally spanned.
pub fn span_decomposition_check(env: &Environment, config: &Configuration, rect: Rect) -> Result<bool> {
    check_dims(env, config)?;
    env.dims().check_rect(&rect)?;
    if env.kind() != ModelKind::MixedFa || rect.coords().any(|c| env.is_easy(c)) {
        return Err(Error::NotApplicable("span decomposition needs an all-difficult threshold rectangle".into()));
    }
    let span = bp_closure(env, config, rect)?;
    let mut seen = vec![false; rect.area()];
    let local = |c: Coord| (c.y - rect.y0) * rect.w + (c.x - rect.x0);
    for start in rect.coords() {
        if !span.contains(start) || seen[local(start)] {
            continue;
        }
        let (mut x0, mut y0, mut x1, mut y1) = (start.x, start.y, start.x, start.y);
        let mut stack = vec![start];
        seen[local(start)] = true;
        while let Some(c) = stack.pop() {
            x0 = x0.min(c.x);
            y0 = y0.min(c.y);
            x1 = x1.max(c.x);
            y1 = y1.max(c.y);
            for d in Dir::ALL {
                if let Some(n) = c.step(d) {
                    if span.contains(n) && !seen[local(n)] {
                        seen[local(n)] = true;
                        stack.push(n);
                    }
                }
            }
        }
        let hull = Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1);
        if !hull.coords().all(|c| span.contains(c)) || !internally_spanned(env, config, hull)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `G_x`: the origin is in the span of `bx` for `eta` but not for `eta^x`,
/// and `x` may flip. Only inner-boundary sites carry the event.
pub fn gx_event(env: &Environment, config: &Configuration, x: Coord, bx: Rect) -> Result<bool> {
    check_dims(env, config)?;
    env.dims().check_rect(&bx)?;
    let origin = env.origin();
    if !bx.on_inner_boundary(x) || !bx.contains(origin) {
        return Ok(false);
    }
    if !constraint_unchecked(env, config, x) {
        return Ok(false);
    }
    if !closure_of(env, bx, |c| config.is_empty(c)).contains(origin) {
        return Ok(false);
    }
    Ok(!closure_of(env, bx, |c| config.is_empty(c) != (c == x)).contains(origin))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillReport {
    /// Step by which the whole square was empty, if it ever was.
    pub filled_by: Option<u64>,
    pub bound: u64,
}

impl FillReport {
    pub fn holds(&self) -> bool {
        self.filled_by.is_some_and(|t| t <= self.bound)
    }
}

/// Starts from the square with only its south-west corner empty and runs
/// the dynamics confined to the square. Fails with `NotApplicable` unless
/// the square is excellent.
pub fn verify_excellent_fill(env: &Environment, corner: Coord, side: usize) -> Result<FillReport> {
    if !env.is_excellent_square(corner, side)? {
        return Err(Error::NotApplicable("square is not excellent".into()));
    }
    let rect = Rect::square(corner, side);
    let region = Region { env, rect, edge: Site::Occupied };
    let mut eta = vec![OCCUPIED; rect.area()];
    eta[0] = EMPTY;
    let bound = (side * side) as u64;
    let ev = evolve(&region, &mut eta, bound.max(1), None);
    let filled_by = eta.iter().all(|&v| v == EMPTY).then(|| {
        ev.emptied_at.iter().map(|&t| t as u64).max().unwrap_or(0)
    });
    Ok(FillReport { filled_by, bound })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationReport {
    pub ok: bool,
    /// Step at which each path box was first entirely empty.
    pub box_times: Vec<Option<u64>>,
    pub origin_time: Option<u64>,
    /// First violated box (path position) and the step at which the bound ran out.
    pub violation: Option<(usize, u64)>,
    pub origin_violation: Option<u64>,
}

/// Checks the box-to-box propagation bound along `path` (good boxes, the
/// first one entirely empty in `config`): each box is entirely empty within
/// `L^2` steps of its predecessor. When `geometry` is given, also checks that
/// the origin is empty within `T_0` steps of the last boundary box emptying.
pub fn verify_propagation(
    env: &Environment,
    grid: &BoxGrid,
    config: &Configuration,
    path: &[BoxIdx],
    geometry: Option<&ClusterGeometry>,
) -> Result<PropagationReport> {
    check_dims(env, config)?;
    let first = path.first().ok_or_else(|| Error::Parameter("empty box path".into()))?;
    if !grid.box_rect(*first).coords().all(|c| config.is_empty(c)) {
        return Err(Error::Parameter("first path box must be entirely empty".into()));
    }
    if let Some(b) = path.iter().find(|b| !grid.is_good(**b)) {
        return Err(Error::Parameter(format!("path box {b} is not good")));
    }
    let l2 = (grid.side * grid.side) as u64;
    let mut horizon = l2 * path.len() as u64 + 1;
    if let Some(g) = geometry {
        horizon += g.t0 as u64 + l2 * g.boundary.len() as u64;
    }
    let (_, run) = bp_evolve(env, config, horizon)?;
    let dims = env.dims();
    let box_time = |b: BoxIdx| -> Option<u64> {
        grid.box_rect(b)
            .coords()
            .map(|c| run.emptied_at[dims.index(c)].map(u64::from))
            .try_fold(0u64, |acc, t| t.map(|t| acc.max(t)))
    };
    let box_times: Vec<_> = path.iter().map(|b| box_time(*b)).collect();
    let mut violation = None;
    for j in 1..path.len() {
        let prev = box_times[j - 1].expect("predecessor emptied or already reported");
        match box_times[j] {
            Some(t) if t <= prev + l2 => {}
            _ => {
                violation = Some((j, prev + l2));
                break;
            }
        }
    }
    let origin_time = run.emptied_at[dims.index(env.origin())].map(u64::from);
    let mut origin_violation = None;
    if violation.is_none() {
        if let Some(g) = geometry {
            let boundary_time = g.boundary.iter().map(|b| box_time(*b)).try_fold(0u64, |acc, t| t.map(|t| acc.max(t)));
            if let Some(tb) = boundary_time {
                let deadline = tb + g.t0 as u64;
                if !origin_time.is_some_and(|t| t <= deadline) {
                    origin_violation = Some(deadline);
                }
            }
        }
    }
    Ok(PropagationReport {
        ok: violation.is_none() && origin_violation.is_none(),
        box_times,
        origin_time,
        violation,
        origin_violation,
    })
}
