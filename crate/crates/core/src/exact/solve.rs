use serde::{Deserialize, Serialize};
use statrs::distribution::{DiscreteCDF, Poisson};
use statrs::function::gamma::ln_gamma;

use super::generator::Generator;
use super::linalg::{lanczos_smallest, pcg, sorted_eigenvalues};
use crate::error::{Error, Result};

/// Systems at most this large are solved densely.
const DENSE_STATES: usize = 1024;
const SURVIVAL_TERMS: usize = 2_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingSolution {
    /// Expected hitting time from every state; infinite where `A` is unreachable.
    pub tau: Vec<f64>,
    pub mean: f64,
    pub dirichlet: f64,
    pub finite: bool,
    pub unreachable: Vec<usize>,
    /// `max |L tau + 1|` over the states outside `A`.
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralResult {
    pub gap: f64,
    pub taubar: Option<f64>,
    pub ergodic: bool,
}

/// `sqrt(mu) (-L) sqrt(mu)^{-1}` on the states marked active, acting on
/// full-length vectors. Moves leaving the active set are cut (the chain is
/// killed there) and inactive states are decoupled with diagonal `parked`.
const LOW_BITS: usize = 11;
const TILE: usize = 64;

struct Sym {
    exit: Vec<f64>,
    links: Vec<u32>,
    w: f64,
    sites: usize,
}

impl Sym {
    fn new(gen: &Generator, active: &[bool], parked: f64) -> Self {
        let n = gen.len();
        let mut exit = vec![parked; n];
        let mut links = vec![0u32; n];
        for s in 0..n {
            if !active[s] {
                continue;
            }
            exit[s] = gen.exit_rate(s);
            let mut a = gen.allowed(s);
            while a != 0 {
                let k = a.trailing_zeros();
                a &= a - 1;
                if active[s ^ 1 << k] {
                    links[s] |= 1 << k;
                }
            }
        }
        Sym { exit, links, w: (gen.q() * (1.0 - gen.q())).sqrt(), sites: gen.space.n_sites() }
    }

    fn apply(&self, y: &[f64], out: &mut [f64]) {
        for ((o, e), v) in out.iter_mut().zip(&self.exit).zip(y) {
            *o = e * v;
        }
        // cache blocking: low bits within contiguous blocks, then high bits
        // across tiles that hold one short run per high-bit pattern
        let low = self.sites.min(LOW_BITS);
        let block = 1usize << low;
        for start in (0..y.len()).step_by(block) {
            for k in 0..low {
                self.pass(y, out, k, start, start + block);
            }
        }
        if self.sites > low {
            let rows = 1usize << (self.sites - low);
            for t0 in (0..block).step_by(TILE) {
                for k in low..self.sites {
                    let hb = 1usize << (k - low);
                    for h in (0..rows).filter(|h| h & hb == 0) {
                        let i0 = (h << low) + t0;
                        let j0 = i0 + (1usize << k);
                        self.pair(y, out, k, i0, j0, TILE.min(block));
                    }
                }
            }
        }
    }

    fn pass(&self, y: &[f64], out: &mut [f64], k: usize, start: usize, end: usize) {
        let b = 1usize << k;
        for base in (start..end).step_by(2 * b) {
            self.pair(y, out, k, base, base + b, b);
        }
    }

    /// Couples the runs `[i0, i0 + len)` and `[j0, j0 + len)`, `j0 = i0 + 2^k`.
    #[inline]
    fn pair(&self, y: &[f64], out: &mut [f64], k: usize, i0: usize, j0: usize, len: usize) {
        let w = self.w;
        let (o_lo, o_hi) = out.split_at_mut(j0);
        let o_lo = &mut o_lo[i0..i0 + len];
        let o_hi = &mut o_hi[..len];
        let y_lo = &y[i0..i0 + len];
        let y_hi = &y[j0..j0 + len];
        let l = &self.links[i0..i0 + len];
        for ((((olo, ohi), ylo), yhi), l) in o_lo.iter_mut().zip(o_hi).zip(y_lo).zip(y_hi).zip(l) {
            let c = w * f64::from((l >> k) & 1);
            *olo -= c * yhi;
            *ohi -= c * ylo;
        }
    }

    /// Gershgorin bound on the spectrum.
    fn upper(&self) -> f64 {
        self.exit.iter().zip(&self.links).map(|(e, l)| e + self.w * f64::from(l.count_ones())).fold(0.0, f64::max)
    }

    fn diag(&self) -> Vec<f64> {
        self.exit.iter().map(|e| e.max(1e-300)).collect()
    }

    /// Dense matrix on the listed states.
    fn dense(&self, states: &[usize]) -> nalgebra::DMatrix<f64> {
        let mut pos = std::collections::HashMap::with_capacity(states.len());
        for (i, &s) in states.iter().enumerate() {
            pos.insert(s, i);
        }
        let m = states.len();
        let mut d = nalgebra::DMatrix::zeros(m, m);
        for (i, &s) in states.iter().enumerate() {
            d[(i, i)] = self.exit[s];
            let mut l = self.links[s];
            while l != 0 {
                let k = l.trailing_zeros();
                l &= l - 1;
                d[(i, pos[&(s ^ 1 << k)])] = -self.w;
            }
        }
        d
    }
}

fn check_mask(gen: &Generator, a: &[bool]) -> Result<()> {
    if a.len() != gen.len() {
        return Err(Error::Parameter(format!("event has {} entries for {} states", a.len(), gen.len())));
    }
    Ok(())
}

/// `sum_s mu(s) sum_x c_x(s) Var_x f (s)`.
pub fn dirichlet_form(gen: &Generator, f: &[f64]) -> Result<f64> {
    if f.len() != gen.len() {
        return Err(Error::Parameter(format!("function has {} entries for {} states", f.len(), gen.len())));
    }
    let qq = gen.q() * (1.0 - gen.q());
    let mut total = 0.0;
    for s in 0..gen.len() {
        let mut a = gen.allowed(s);
        let mut local = 0.0;
        while a != 0 {
            let k = a.trailing_zeros();
            a &= a - 1;
            let d = f[s] - f[s ^ 1 << k];
            local += d * d;
        }
        total += gen.space.weight(s) * qq * local;
    }
    Ok(total)
}

pub fn mean(gen: &Generator, f: &[f64]) -> f64 {
    f.iter().enumerate().map(|(s, v)| gen.space.weight(s) * v).sum()
}

/// States from which `A` can be reached.
fn reaches(gen: &Generator, a: &[bool]) -> Vec<bool> {
    let (comp, count) = gen.components();
    let mut hit = vec![false; count];
    for (s, &in_a) in a.iter().enumerate() {
        if in_a {
            hit[comp[s] as usize] = true;
        }
    }
    comp.iter().map(|&c| hit[c as usize]).collect()
}

fn unweighted_residual(gen: &Generator, a: &[bool], tau: &[f64], out: &mut [f64]) -> f64 {
    gen.apply(tau, out);
    let mut worst = 0.0f64;
    for s in 0..gen.len() {
        if !a[s] && tau[s].is_finite() {
            worst = worst.max((out[s] + 1.0).abs());
        }
    }
    worst
}

/// Expected hitting time of `A` from every state: `L tau = -1` off `A`,
/// `tau = 0` on `A`. States that cannot reach `A` get an infinite time.
pub fn solve_poisson(gen: &Generator, a: &[bool]) -> Result<HittingSolution> {
    check_mask(gen, a)?;
    if !a.iter().any(|&v| v) {
        return Err(Error::Parameter("target event is empty".into()));
    }
    let n = gen.len();
    let reach = reaches(gen, a);
    let unreachable: Vec<usize> = (0..n).filter(|&s| !reach[s]).collect();
    let active: Vec<bool> = (0..n).map(|s| !a[s] && reach[s]).collect();
    let states: Vec<usize> = (0..n).filter(|&s| active[s]).collect();
    let sym = Sym::new(gen, &active, 1.0);
    let sq: Vec<f64> = (0..n).map(|s| if active[s] { gen.space.weight(s).sqrt() } else { 0.0 }).collect();

    let mut tau = vec![0.0; n];
    for &s in &unreachable {
        tau[s] = f64::INFINITY;
    }
    let mut lt = vec![0.0; n];
    let mut residual = 0.0;
    if !states.is_empty() {
        let m = states.len();
        let dense = (m <= DENSE_STATES).then(|| sym.dense(&states).cholesky());
        if matches!(dense, Some(None)) {
            return Err(Error::Numerical("Dirichlet block is not positive definite".into()));
        }
        let diag = sym.diag();
        let op = |y: &[f64], out: &mut [f64]| sym.apply(y, out);
        // solves the symmetric system, right-hand side and result full length
        let solve = |rhs: &[f64]| -> Result<Vec<f64>> {
            match &dense {
                Some(Some(ch)) => {
                    let b = nalgebra::DVector::from_iterator(m, states.iter().map(|&s| rhs[s]));
                    let x = ch.solve(&b);
                    let mut y = vec![0.0; n];
                    for (i, &s) in states.iter().enumerate() {
                        y[s] = x[i];
                    }
                    Ok(y)
                }
                _ => {
                    let mut y = vec![0.0; n];
                    pcg(&op, &diag, rhs, &mut y, 1e-14, 50 * m + 10_000)?;
                    Ok(y)
                }
            }
        };
        // the symmetric unknown is y = sqrt(mu) tau
        let y = solve(&sq)?;
        for &s in &states {
            tau[s] = y[s] / sq[s];
        }
        for _ in 0..8 {
            residual = unweighted_residual(gen, a, &tau, &mut lt);
            let scale = tau.iter().filter(|v| v.is_finite()).fold(1.0f64, |m, v| m.max(v.abs()));
            if residual <= 1e-13 * scale {
                break;
            }
            let rhs: Vec<f64> = (0..n).map(|s| if active[s] { sq[s] * (1.0 + lt[s]) } else { 0.0 }).collect();
            let dy = solve(&rhs)?;
            for &s in &states {
                tau[s] += dy[s] / sq[s];
            }
        }
        residual = unweighted_residual(gen, a, &tau, &mut lt);
        let scale = tau.iter().filter(|v| v.is_finite()).fold(1.0f64, |m, v| m.max(v.abs()));
        if residual > 1e-9 * scale {
            return Err(Error::Numerical(format!("hitting-time residual {residual:e} exceeds tolerance")));
        }
    }
    let finite = unreachable.is_empty();
    let (mean_tau, dir) = if finite {
        (mean(gen, &tau), dirichlet_form(gen, &tau)?)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Ok(HittingSolution { tau, mean: mean_tau, dirichlet: dir, finite, unreachable, residual })
}

/// Smallest eigenvalue of `sym` on the active states, excluding the
/// direction `lock` when given.
fn smallest(sym: &Sym, active: &[bool], lock: Option<&[f64]>, dense: bool) -> Result<f64> {
    let states: Vec<usize> = (0..active.len()).filter(|&s| active[s]).collect();
    if dense {
        let ev = sorted_eigenvalues(sym.dense(&states));
        return Ok(if lock.is_some() { ev[1] } else { ev[0] });
    }
    let op = |y: &[f64], out: &mut [f64]| sym.apply(y, out);
    lanczos_smallest(&op, active.len(), lock, sym.upper(), 5_000_000, states.len() as u64)
}

/// Smallest nonzero eigenvalue of `-L`, or zero when the chain is reducible.
pub fn spectral_gap(gen: &Generator) -> Result<SpectralResult> {
    gap_with(gen, gen.len() <= DENSE_STATES)
}

pub(crate) fn gap_with(gen: &Generator, dense: bool) -> Result<SpectralResult> {
    let (_, count) = gen.components();
    if count > 1 {
        return Ok(SpectralResult { gap: 0.0, taubar: None, ergodic: false });
    }
    let n = gen.len();
    let active = vec![true; n];
    let sym = Sym::new(gen, &active, 0.0);
    let lock: Vec<f64> = (0..n).map(|s| gen.space.weight(s).sqrt()).collect();
    let gap = smallest(&sym, &active, Some(&lock), dense)?;
    Ok(SpectralResult { gap: gap.max(0.0), taubar: None, ergodic: true })
}

/// `1 / lambda` with `lambda` the principal Dirichlet eigenvalue of the
/// complement of `A`. Infinite when some state cannot reach `A`.
pub fn taubar(gen: &Generator, a: &[bool]) -> Result<f64> {
    check_mask(gen, a)?;
    if !a.iter().any(|&v| v) {
        return Err(Error::Parameter("target event is empty".into()));
    }
    let reach = reaches(gen, a);
    if reach.iter().any(|&r| !r) {
        return Ok(f64::INFINITY);
    }
    let active: Vec<bool> = a.iter().map(|&v| !v).collect();
    let m = active.iter().filter(|&&v| v).count();
    if m == 0 {
        return Ok(0.0);
    }
    // parked states sit above the whole active spectrum
    let probe = Sym::new(gen, &active, 0.0);
    let sym = Sym::new(gen, &active, 2.0 * probe.upper() + 1.0);
    let lambda = smallest(&sym, &active, None, m <= DENSE_STATES)?;
    if !(lambda > 0.0) {
        return Err(Error::Numerical(format!("principal Dirichlet eigenvalue {lambda:e} is not positive")));
    }
    Ok(1.0 / lambda)
}

pub fn spectral(gen: &Generator, a: &[bool]) -> Result<SpectralResult> {
    let mut r = spectral_gap(gen)?;
    r.taubar = Some(taubar(gen, a)?);
    Ok(r)
}

/// `2 mu(f) - D f` for `f` vanishing on `A`.
pub fn functional_t(gen: &Generator, f: &[f64], a: &[bool]) -> Result<f64> {
    check_mask(gen, a)?;
    if f.len() != gen.len() {
        return Err(Error::Parameter(format!("function has {} entries for {} states", f.len(), gen.len())));
    }
    if let Some(s) = (0..f.len()).find(|&s| a[s] && f[s] != 0.0) {
        return Err(Error::Domain(format!("function is {} at state {s} of the target", f[s])));
    }
    Ok(2.0 * mean(gen, f) - dirichlet_form(gen, f)?)
}

/// `P_mu(tau_A > t)` for every `t` by uniformisation of the chain killed
/// on `A`; the truncated Poisson tail is below `1e-10`.
pub fn survival_curve(gen: &Generator, a: &[bool], times: &[f64]) -> Result<Vec<f64>> {
    check_mask(gen, a)?;
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Error::Parameter(format!("time {t} must be finite and nonnegative")));
    }
    let n = gen.len();
    let states: Vec<usize> = (0..n).filter(|&s| !a[s]).collect();
    let mass: f64 = states.iter().map(|&s| gen.space.weight(s)).sum();
    let lam = states.iter().map(|&s| gen.exit_rate(s)).fold(0.0f64, f64::max);
    if states.is_empty() || lam == 0.0 {
        return Ok(vec![mass; times.len()]);
    }
    let t_max = times.iter().copied().fold(0.0, f64::max);
    let big = lam * t_max;
    let mut terms = (big + 12.0 * big.sqrt() + 60.0).ceil() as usize;
    if big > 0.0 {
        let pois = Poisson::new(big).map_err(|e| Error::Numerical(e.to_string()))?;
        while pois.sf(terms as u64) > 1e-10 && terms <= SURVIVAL_TERMS {
            terms += terms / 4 + 1;
        }
    }
    if terms > SURVIVAL_TERMS {
        let tail = Poisson::new(big).map(|p| p.sf(SURVIVAL_TERMS as u64)).unwrap_or(1.0);
        return Err(Error::Precision { achieved: tail, terms: SURVIVAL_TERMS });
    }
    // w_k = mu(P^k 1) with P = I + L / lam killed on A; v stays zero on A
    let mut v: Vec<f64> = a.iter().map(|&in_a| if in_a { 0.0 } else { 1.0 }).collect();
    let mut next = vec![0.0; n];
    let mut wk = Vec::with_capacity(terms + 1);
    for _ in 0..=terms {
        wk.push(states.iter().map(|&s| gen.space.weight(s) * v[s]).sum::<f64>());
        for &s in &states {
            let mut acc = (1.0 - gen.exit_rate(s) / lam) * v[s];
            let mut al = gen.allowed(s);
            while al != 0 {
                let k = al.trailing_zeros() as usize;
                al &= al - 1;
                acc += gen.rate(s, k) / lam * v[s ^ 1 << k];
            }
            next[s] = acc;
        }
        std::mem::swap(&mut v, &mut next);
    }
    Ok(times
        .iter()
        .map(|&t| {
            let x = lam * t;
            if x == 0.0 {
                return wk[0];
            }
            let lx = x.ln();
            wk.iter()
                .enumerate()
                .map(|(k, wv)| (k as f64 * lx - x - ln_gamma(k as f64 + 1.0)).exp() * wv)
                .sum()
        })
        .collect())
}

pub fn survival_probability(gen: &Generator, a: &[bool], t: f64) -> Result<f64> {
    Ok(survival_curve(gen, a, &[t])?[0])
}
