use std::collections::BTreeSet;

use qkcm_core::bootstrap::constraint;
use qkcm_core::kcm::{build_flip_path, digest_of, is_essentially_empty};
use qkcm_core::percolation::{coarse_grain, good_box_path_truncated, label_clusters};
use qkcm_core::{sample_environment, sample_equilibrium, Boundary, Configuration, Coord, EnvParams, ModelKind};

pub struct Replayed {
    pub steps: usize,
    pub rotations: usize,
}

/// Builds a flip path on a random instance and replays it, checking every
/// step against the constraint. `Ok(None)` when no path box is essentially
/// empty (or the origin box misses the spanning cluster).
pub fn replay_flip_path(seed: u64, q: f64, plant: bool) -> Result<Option<Replayed>, String> {
    let side = 4;
    let env = sample_environment(EnvParams::new(ModelKind::MixedFa, 0.5, 48, 48, seed)).unwrap();
    let grid = coarse_grain(&env, side).unwrap();
    let labels = label_clusters(&grid.good, grid.dims).unwrap();
    let Ok(path) = good_box_path_truncated(&grid, &labels, 6) else {
        return Ok(None);
    };
    let mut cfg = sample_equilibrium(q, env.dims(), Boundary::Occupied, seed ^ 77).unwrap();
    if plant {
        let b = path[path.len() - 1 - (seed as usize % path.len().min(3))];
        let r = grid.box_rect(b);
        let y = r.y0 + (seed as usize / 3) % side;
        for x in r.x0..r.x1() {
            cfg.set(Coord::new(x, y), true);
        }
    }
    cfg.set(env.origin(), false);
    let fp = build_flip_path(&env, &grid, &path, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
    let Some(k) = fp.start_box else {
        if path.iter().any(|b| is_essentially_empty(&env, &cfg, &grid, *b)) {
            return Err(format!("seed {seed}: essentially empty box ignored"));
        }
        return if fp.is_empty() { Ok(None) } else { Err(format!("seed {seed}: steps without a start box")) };
    };
    if !is_essentially_empty(&env, &cfg, &grid, path[k]) {
        return Err(format!("seed {seed}: start box {k} is not essentially empty"));
    }
    let start = cfg.clone();
    let mut cur: Configuration = cfg;
    let mut max_diff = 0;
    for (n, step) in fp.steps.iter().enumerate() {
        if !constraint(&env, &cur, step.site).unwrap() {
            return Err(format!("seed {seed}: illegal flip {n} at {}", step.site));
        }
        cur.flip(step.site);
        if digest_of(cur.eta()) != step.digest {
            return Err(format!("seed {seed}: digest mismatch at step {n}"));
        }
        let d = cur.diff(&start);
        if d.len() > 3 * side {
            return Err(format!("seed {seed}: {} sites differ at step {n}", d.len()));
        }
        let boxes: BTreeSet<_> = d.iter().map(|c| grid.box_of(*c)).collect();
        if boxes.len() > 2 {
            return Err(format!("seed {seed}: differences span {} boxes at step {n}", boxes.len()));
        }
        if boxes.len() == 2 {
            let v: Vec<_> = boxes.into_iter().collect();
            if v[0].x.abs_diff(v[1].x) + v[0].y.abs_diff(v[1].y) != 1 {
                return Err(format!("seed {seed}: differing boxes are not adjacent at step {n}"));
            }
        }
        max_diff = max_diff.max(d.len());
        if n + 1 < fp.len() && cur.is_empty(env.origin()) {
            return Err(format!("seed {seed}: origin emptied before the last step"));
        }
    }
    if !cur.is_empty(env.origin()) || !fp.terminal_origin_empty {
        return Err(format!("seed {seed}: terminal state misses the origin"));
    }
    if fp.max_diff != max_diff {
        return Err(format!("seed {seed}: reported max_diff {} vs {max_diff}", fp.max_diff));
    }
    if !fp.within_length_bound() {
        return Err(format!("seed {seed}: length ratio {}", fp.length_ratio()));
    }
    Ok(Some(Replayed { steps: fp.len(), rotations: fp.rotations }))
}
