use serde::{Deserialize, Serialize};

use crate::configuration::{Configuration, EMPTY};
use crate::environment::{Environment, Estimate};
use crate::error::{Error, Result};
use crate::kcm::{EventKind, Target};
use crate::lattice::{Dims, Rect};
use crate::percolation::{BoxGrid, BoxIdx};
use crate::rng::{self, STREAM_CONFIGURATION};

/// Good, and some full row or column of the box is empty.
pub fn is_essentially_empty(env: &Environment, config: &Configuration, grid: &BoxGrid, b: BoxIdx) -> bool {
    let r = grid.box_rect(b);
    let good = env.is_good_square(crate::lattice::Coord::new(r.x0, r.y0), r.w).unwrap_or(false);
    good && has_empty_line(config.dims(), config.eta(), r)
}

fn has_empty_line(dims: Dims, eta: &[u8], r: Rect) -> bool {
    let e = |x: usize, y: usize| eta[y * dims.width + x] == EMPTY;
    (r.y0..r.y1()).any(|y| (r.x0..r.x1()).all(|x| e(x, y))) || (r.x0..r.x1()).any(|x| (r.y0..r.y1()).all(|y| e(x, y)))
}

/// `B`: no box of the path is essentially empty.
pub fn bad_event_b(env: &Environment, config: &Configuration, grid: &BoxGrid, path: &[BoxIdx]) -> bool {
    !path.iter().any(|b| is_essentially_empty(env, config, grid, *b))
}

/// `ceil(q^{-L-1})`.
pub fn path_length_for(q: f64, side: usize) -> usize {
    q.powi(-(side as i32) - 1).ceil() as usize
}

/// Monte Carlo estimate of `mu(B)` drawing only the sites of the path boxes.
/// Sample `s` uses the same field as `sample_equilibrium(q, .., trial_seed(seed, s))`.
pub fn bad_event_probability(env: &Environment, grid: &BoxGrid, path: &[BoxIdx], q: f64, samples: usize, seed: u64) -> Result<Estimate> {
    crate::configuration::check_q(q)?;
    if samples == 0 {
        return Err(Error::Parameter("samples must be positive".into()));
    }
    if let Some(b) = path.iter().find(|b| !grid.is_good(**b)) {
        return Err(Error::Parameter(format!("path box {b} is not good")));
    }
    let dims = env.dims();
    let side = grid.side;
    let mut local = vec![0u8; side * side];
    let mut hits = 0usize;
    for s in 0..samples {
        let ts = rng::trial_seed(seed, s as u64);
        let mut bad = true;
        for b in path {
            let r = grid.box_rect(*b);
            for (k, c) in r.coords().enumerate() {
                local[k] = u8::from(rng::site_uniform(ts, STREAM_CONFIGURATION, dims.index(c)) >= q);
            }
            if has_empty_line(Dims::new(side, side), &local, Rect::new(0, 0, side, side)) {
                bad = false;
                break;
            }
        }
        hits += usize::from(bad);
    }
    let p = hits as f64 / samples as f64;
    Ok(Estimate { value: p, se: (p * (1.0 - p) / samples as f64).sqrt(), trials: samples })
}

/// Watches `B` along a fixed path of good boxes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BadEvent {
    dims: Dims,
    rects: Vec<Rect>,
    /// Path slot of each site, `u32::MAX` off the path.
    slot: Vec<u32>,
    ess: Vec<bool>,
    count: usize,
}

impl BadEvent {
    pub fn new(env: &Environment, grid: &BoxGrid, path: &[BoxIdx]) -> Result<Self> {
        let dims = env.dims();
        let mut slot = vec![u32::MAX; dims.len()];
        let mut rects = Vec::with_capacity(path.len());
        for (k, b) in path.iter().enumerate() {
            if !grid.is_good(*b) {
                return Err(Error::Parameter(format!("path box {b} is not good")));
            }
            let r = grid.box_rect(*b);
            for c in r.coords() {
                slot[dims.index(c)] = k as u32;
            }
            rects.push(r);
        }
        Ok(BadEvent { dims, ess: vec![false; rects.len()], rects, slot, count: 0 })
    }
}

impl Target for BadEvent {
    fn kind(&self) -> EventKind {
        EventKind::BadEvent
    }

    fn start(&mut self, eta: &[u8]) -> bool {
        for (k, r) in self.rects.iter().enumerate() {
            self.ess[k] = has_empty_line(self.dims, eta, *r);
        }
        self.count = self.ess.iter().filter(|&&e| e).count();
        self.count == 0
    }

    fn changed(&mut self, eta: &[u8], i: usize) -> bool {
        let k = self.slot[i];
        if k == u32::MAX {
            return false;
        }
        let k = k as usize;
        let now = has_empty_line(self.dims, eta, self.rects[k]);
        if now != self.ess[k] {
            self.ess[k] = now;
            if now {
                self.count += 1;
            } else {
                self.count -= 1;
            }
        }
        self.count == 0
    }
}
