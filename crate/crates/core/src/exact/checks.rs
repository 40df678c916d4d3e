use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::generator::{ExactTarget, Generator, MAX_SITES};
use super::linalg::{dense_of, lanczos_smallest, sorted_eigenvalues};
use super::solve::{dirichlet_form, mean, solve_poisson, spectral_gap};
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::lattice::{Boundary, Coord, Rect};
use crate::rng::stream_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestrictedReport {
    pub gamma_h: f64,
    pub mu_a: f64,
    pub samples: usize,
    /// Smallest `D f - mu(A) gamma_H (mu f)^2`, relative to `D f`.
    pub worst_mean_slack: f64,
    /// Smallest `D f - mu(A)/(1 + mu(A)) gamma_H mu(f^2)`, relative to `D f`.
    pub worst_square_slack: f64,
    /// Smallest `D f - mu_{H^c} D_H f`, relative to `D f`.
    pub worst_restriction_slack: f64,
    pub ok: bool,
}

/// Standard normal values on the complement of `A`, zero on `A`.
pub(crate) fn random_in_va(a: &[bool], rng: &mut impl Rng) -> Vec<f64> {
    let n01 = Normal::standard();
    a.iter()
        .map(|&in_a| if in_a { 0.0 } else { n01.inverse_cdf(rng.gen_range(f64::EPSILON..1.0)) })
        .collect()
}

fn slack(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs) / lhs.abs().max(1e-300)
}

/// Checks, for random `f` vanishing on `A`, the comparison of the full
/// Dirichlet form with the dynamics restricted to `h` (occupied outside it)
/// and the two lower bounds it yields through the gap on `h`.
pub fn verify_restricted_inequalities(
    env: &Environment,
    region: Rect,
    h: Rect,
    target: &ExactTarget,
    q: f64,
    boundary: Boundary,
    samples: usize,
    seed: u64,
) -> Result<RestrictedReport> {
    if !region.contains_rect(&h) {
        return Err(Error::Parameter(format!("{h} is not inside {region}")));
    }
    if let Some(c) = target.sites(env).iter().find(|c| !h.contains(**c)) {
        return Err(Error::Parameter(format!("target site {c} lies outside {h}")));
    }
    let full = Generator::new(env, region, q, boundary)?;
    let restricted = Generator::restricted(env, region, h, q)?;
    let on_h = Generator::new(env, h, q, Boundary::Occupied)?;
    let gamma_h = spectral_gap(&on_h)?.gap;
    let a = target.mask(env, &full)?;
    let mu_a: f64 = (0..full.len()).filter(|&s| a[s]).map(|s| full.space.weight(s)).sum();
    let mut rng = stream_rng(seed, 0x7265);
    let mut worst = [f64::INFINITY; 3];
    let mut probes: Vec<Vec<f64>> = (0..samples).map(|_| random_in_va(&a, &mut rng)).collect();
    probes.push(a.iter().map(|&v| f64::from(u8::from(!v))).collect());
    if let Ok(sol) = solve_poisson(&full, &a) {
        if sol.finite {
            probes.push(sol.tau);
        }
    }
    for f in &probes {
        let d = dirichlet_form(&full, f)?;
        let dh = dirichlet_form(&restricted, f)?;
        let mf = mean(&full, f);
        let mf2: f64 = f.iter().enumerate().map(|(s, v)| full.space.weight(s) * v * v).sum();
        worst[0] = worst[0].min(slack(d, mu_a * gamma_h * mf * mf));
        worst[1] = worst[1].min(slack(d, mu_a / (1.0 + mu_a) * gamma_h * mf2));
        worst[2] = worst[2].min(slack(d, dh));
    }
    let ok = worst.iter().all(|&w| w >= -1e-10);
    Ok(RestrictedReport {
        gamma_h,
        mu_a,
        samples: probes.len(),
        worst_mean_slack: worst[0],
        worst_square_slack: worst[1],
        worst_restriction_slack: worst[2],
        ok,
    })
}

/// Two blocks of sites: the first is resampled at rate one, the second at
/// rate one while every `gate` site (inside the first block) is empty.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub always: Vec<Coord>,
    pub gated: Vec<Coord>,
    pub gate: Vec<Coord>,
}

impl BlockPartition {
    /// Square of side `side` (even) at `corner` split into a left and a right
    /// half; the left half moves when the inner left column of the right half
    /// is empty.
    pub fn ne_bisection(corner: Coord, side: usize) -> Result<Self> {
        if side < 2 || side % 2 != 0 {
            return Err(Error::Parameter(format!("bisection needs an even side, got {side}")));
        }
        let half = side / 2;
        let sq = Rect::square(corner, side);
        let left: Vec<Coord> = sq.coords().filter(|c| c.x < corner.x + half).collect();
        let right: Vec<Coord> = sq.coords().filter(|c| c.x >= corner.x + half).collect();
        let gate = right.iter().copied().filter(|c| c.x == corner.x + half).collect();
        Ok(BlockPartition { always: right, gated: left, gate })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockGapReport {
    pub computed: f64,
    pub closed_form: f64,
    pub gate_probability: f64,
    pub rel_err: f64,
    pub ok: bool,
}

/// Gap of the two-block dynamics against `1 - sqrt(1 - p)`.
pub fn verify_block_gap(env: &Environment, part: &BlockPartition, q: f64) -> Result<BlockGapReport> {
    crate::configuration::check_q(q)?;
    let dims = env.dims();
    for c in part.always.iter().chain(&part.gated) {
        dims.check(*c)?;
    }
    let (n1, n2) = (part.always.len(), part.gated.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::Parameter("both blocks must be nonempty".into()));
    }
    if n1 + n2 > MAX_SITES {
        return Err(Error::Capacity { sites: n1 + n2, cap: MAX_SITES });
    }
    if part.always.iter().any(|c| part.gated.contains(c)) {
        return Err(Error::Parameter("blocks overlap".into()));
    }
    let mut gate = 0usize;
    for g in &part.gate {
        let k = part
            .always
            .iter()
            .position(|c| c == g)
            .ok_or_else(|| Error::Parameter(format!("gate site {g} is not in the first block")))?;
        gate |= 1 << k;
    }
    let w = |s: usize, n: usize| {
        let e = s.count_ones() as i32;
        (q.powi(e) * (1.0 - q).powi(n as i32 - e)).sqrt()
    };
    let s1: Vec<f64> = (0..1usize << n1).map(|s| w(s, n1)).collect();
    let s2: Vec<f64> = (0..1usize << n2).map(|s| w(s, n2)).collect();
    let m1 = 1usize << n1;
    let len = m1 << n2;
    // symmetrised generator: (I - P1) + g (I - P2), P_i projections on sqrt(mu_i)
    let op = |y: &[f64], out: &mut [f64]| {
        for b in 0..1usize << n2 {
            let c: f64 = (0..m1).map(|a| s1[a] * y[a + b * m1]).sum();
            for a in 0..m1 {
                out[a + b * m1] = y[a + b * m1] - s1[a] * c;
            }
        }
        for a in 0..m1 {
            if a & gate != gate {
                continue;
            }
            let c: f64 = (0..1usize << n2).map(|b| s2[b] * y[a + b * m1]).sum();
            for b in 0..1usize << n2 {
                out[a + b * m1] += y[a + b * m1] - s2[b] * c;
            }
        }
    };
    let lock: Vec<f64> = (0..len).map(|s| s1[s % m1] * s2[s / m1]).collect();
    let computed = if len <= 1024 {
        sorted_eigenvalues(dense_of(&op, len))[1]
    } else {
        lanczos_smallest(&op, len, Some(&lock), 2.0, 100_000, len as u64)?
    };
    let p = q.powi(part.gate.len() as i32);
    let closed_form = 1.0 - (1.0 - p).sqrt();
    let rel_err = (computed - closed_form).abs() / closed_form;
    Ok(BlockGapReport { computed, closed_form, gate_probability: p, rel_err, ok: rel_err <= 1e-8 })
}
