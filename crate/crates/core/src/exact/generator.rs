use serde::{Deserialize, Serialize};

use crate::bootstrap::rule_allows;
use crate::configuration::{Configuration, Site};
use crate::environment::{Environment, SiteRule};
use crate::error::{Error, Result};
use crate::lattice::{Boundary, Coord, Dir, Rect};

/// Largest number of sites handled exactly.
pub const MAX_SITES: usize = 20;

/// Configurations of a rectangle as bitmasks: bit `k` set means the `k`-th
/// site of the rectangle (row-major) is empty.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    pub region: Rect,
    pub q: f64,
    sites: Vec<Coord>,
}

impl StateSpace {
    pub fn new(region: Rect, q: f64) -> Result<Self> {
        crate::configuration::check_q(q)?;
        if region.is_empty() {
            return Err(Error::Parameter("empty region".into()));
        }
        if region.area() > MAX_SITES {
            return Err(Error::Capacity { sites: region.area(), cap: MAX_SITES });
        }
        Ok(StateSpace { region, q, sites: region.coords().collect() })
    }

    pub fn sites(&self) -> &[Coord] {
        &self.sites
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn len(&self) -> usize {
        1 << self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bit(&self, c: Coord) -> Option<usize> {
        self.region.contains(c).then(|| (c.y - self.region.y0) * self.region.w + (c.x - self.region.x0))
    }

    pub fn weight(&self, s: usize) -> f64 {
        let e = s.count_ones() as i32;
        self.q.powi(e) * (1.0 - self.q).powi(self.sites.len() as i32 - e)
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|s| self.weight(s)).collect()
    }

    /// State of the region in a window configuration.
    pub fn encode(&self, config: &Configuration) -> Result<usize> {
        config.dims().check_rect(&self.region)?;
        Ok(self.sites.iter().enumerate().fold(0, |s, (k, c)| s | (usize::from(config.is_empty(*c)) << k)))
    }

    /// Writes state `s` into the region of `config`.
    pub fn decode(&self, s: usize, config: &mut Configuration) -> Result<()> {
        config.dims().check_rect(&self.region)?;
        for (k, c) in self.sites.iter().enumerate() {
            config.set(*c, s >> k & 1 == 1);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
enum Nbr {
    Bit(usize),
    Fixed(Site),
}

/// Generator of the constrained dynamics on a region, stored implicitly:
/// `allowed[s]` is the set of sites whose constraint holds in state `s`.
/// A site flips from occupied to empty at rate `q` and back at rate `1 - q`.
#[derive(Clone, Debug)]
pub struct Generator {
    pub space: StateSpace,
    allowed: Vec<u32>,
}

impl Generator {
    fn from_table(space: StateSpace, rules: &[Option<(SiteRule, [Nbr; 4])>]) -> Self {
        let n = space.len();
        let mut allowed = vec![0u32; n];
        for (s, a) in allowed.iter_mut().enumerate() {
            for (k, r) in rules.iter().enumerate() {
                let Some((rule, nb)) = r else { continue };
                let sites = nb.map(|v| match v {
                    Nbr::Bit(j) => {
                        if s >> j & 1 == 1 {
                            Site::Empty
                        } else {
                            Site::Occupied
                        }
                    }
                    Nbr::Fixed(site) => site,
                });
                if rule_allows(*rule, sites) {
                    *a |= 1 << k;
                }
            }
        }
        Generator { space, allowed }
    }

    fn table(env: &Environment, space: &StateSpace, active: Rect, outside: Site) -> Vec<Option<(SiteRule, [Nbr; 4])>> {
        let dims = env.dims();
        space
            .sites()
            .iter()
            .map(|&c| {
                active.contains(c).then(|| {
                    let nb = Dir::ALL.map(|d| match dims.neighbor(c, d) {
                        Some(m) if active.contains(m) => Nbr::Bit(space.bit(m).unwrap()),
                        _ => Nbr::Fixed(outside),
                    });
                    (env.rule(c), nb)
                })
            })
            .collect()
    }

    /// Dynamics on `region` with every site outside it fixed by `boundary`.
    pub fn new(env: &Environment, region: Rect, q: f64, boundary: Boundary) -> Result<Self> {
        env.dims().check_rect(&region)?;
        let space = StateSpace::new(region, q)?;
        let rules = Self::table(env, &space, region, Site::from_boundary(boundary));
        Ok(Self::from_table(space, &rules))
    }

    /// Dynamics on `region` in which only the sites of `h` move, with
    /// constraints evaluated as if everything outside `h` were occupied.
    pub fn restricted(env: &Environment, region: Rect, h: Rect, q: f64) -> Result<Self> {
        env.dims().check_rect(&region)?;
        if !region.contains_rect(&h) || h.is_empty() {
            return Err(Error::Parameter(format!("{h} is not a nonempty subrectangle of {region}")));
        }
        let space = StateSpace::new(region, q)?;
        let rules = Self::table(env, &space, h, Site::Occupied);
        Ok(Self::from_table(space, &rules))
    }

    pub fn len(&self) -> usize {
        self.allowed.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn q(&self) -> f64 {
        self.space.q
    }

    /// Sites allowed to flip in state `s`, as a bitmask.
    pub fn allowed(&self, s: usize) -> u32 {
        self.allowed[s]
    }

    /// Rate of `s -> s ^ (1 << k)`.
    pub fn rate(&self, s: usize, k: usize) -> f64 {
        if self.allowed[s] >> k & 1 == 0 {
            0.0
        } else if s >> k & 1 == 1 {
            1.0 - self.space.q
        } else {
            self.space.q
        }
    }

    pub fn exit_rate(&self, s: usize) -> f64 {
        let a = self.allowed[s];
        let empty = (a & s as u32).count_ones() as f64;
        let occ = (a & !(s as u32)).count_ones() as f64;
        self.space.q * occ + (1.0 - self.space.q) * empty
    }

    /// `out = L f`.
    pub fn apply(&self, f: &[f64], out: &mut [f64]) {
        for (s, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut a = self.allowed[s];
            while a != 0 {
                let k = a.trailing_zeros() as usize;
                a &= a - 1;
                acc += self.rate(s, k) * (f[s ^ 1 << k] - f[s]);
            }
            *o = acc;
        }
    }

    /// Largest `|mu(s) r(s -> t) - mu(t) r(t -> s)|` over all transitions.
    pub fn detailed_balance_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for s in 0..self.len() {
            for k in 0..self.space.n_sites() {
                let t = s ^ 1 << k;
                let lhs = self.space.weight(s) * self.rate(s, k);
                let rhs = self.space.weight(t) * self.rate(t, k);
                worst = worst.max((lhs - rhs).abs());
            }
        }
        worst
    }

    /// Largest absolute row sum of the assembled matrix.
    pub fn row_sum_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for s in 0..self.len() {
            let off: f64 = (0..self.space.n_sites()).map(|k| self.rate(s, k)).sum();
            worst = worst.max((off - self.exit_rate(s)).abs());
        }
        worst
    }

    /// Connected component of every state under positive-rate moves.
    pub fn components(&self) -> (Vec<u32>, usize) {
        let n = self.len();
        let mut comp = vec![u32::MAX; n];
        let mut count = 0u32;
        let mut stack = Vec::new();
        for s0 in 0..n {
            if comp[s0] != u32::MAX {
                continue;
            }
            comp[s0] = count;
            stack.push(s0);
            while let Some(s) = stack.pop() {
                let mut a = self.allowed[s];
                while a != 0 {
                    let k = a.trailing_zeros();
                    a &= a - 1;
                    let t = s ^ 1 << k;
                    if comp[t] == u32::MAX {
                        comp[t] = count;
                        stack.push(t);
                    }
                }
            }
            count += 1;
        }
        (comp, count as usize)
    }

    /// Dense matrix of `L` (row `s` holds the rates out of `s`).
    pub fn to_dense(&self) -> Result<nalgebra::DMatrix<f64>> {
        if self.space.n_sites() > 12 {
            return Err(Error::Capacity { sites: self.space.n_sites(), cap: 12 });
        }
        let n = self.len();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for s in 0..n {
            for k in 0..self.space.n_sites() {
                m[(s, s ^ 1 << k)] = self.rate(s, k);
            }
            m[(s, s)] = -self.exit_rate(s);
        }
        Ok(m)
    }
}

/// Events on the region's sites.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExactTarget {
    OriginEmpty,
    SiteEmpty(Coord),
    AnyEmpty(Vec<Coord>),
    AllEmpty(Vec<Coord>),
}

impl ExactTarget {
    pub fn sites(&self, env: &Environment) -> Vec<Coord> {
        match self {
            ExactTarget::OriginEmpty => vec![env.origin()],
            ExactTarget::SiteEmpty(c) => vec![*c],
            ExactTarget::AnyEmpty(v) | ExactTarget::AllEmpty(v) => v.clone(),
        }
    }

    /// Membership of every state of `gen`.
    pub fn mask(&self, env: &Environment, gen: &Generator) -> Result<Vec<bool>> {
        let sites = self.sites(env);
        if sites.is_empty() {
            return Err(Error::Parameter("target lists no sites".into()));
        }
        let mut bits = 0usize;
        for c in &sites {
            let b = gen.space.bit(*c).ok_or_else(|| Error::Parameter(format!("target site {c} lies outside the region")))?;
            bits |= 1 << b;
        }
        let all = matches!(self, ExactTarget::AllEmpty(_));
        Ok((0..gen.len()).map(|s| if all { s & bits == bits } else { s & bits != 0 }).collect())
    }
}

impl std::str::FromStr for ExactTarget {
    type Err = Error;

    /// `origin`, `site:x,y`, `any:x,y;x,y;...` or `all:x,y;...`.
    fn from_str(s: &str) -> Result<Self> {
        let coords = |body: &str| -> Result<Vec<Coord>> {
            body.split(';')
                .map(|p| {
                    let (x, y) = p.split_once(',').ok_or_else(|| Error::Parameter(format!("bad site {p:?}")))?;
                    let x = x.trim().parse().map_err(|_| Error::Parameter(format!("bad site {p:?}")))?;
                    let y = y.trim().parse().map_err(|_| Error::Parameter(format!("bad site {p:?}")))?;
                    Ok(Coord::new(x, y))
                })
                .collect()
        };
        match s.split_once(':') {
            None if s == "origin" => Ok(ExactTarget::OriginEmpty),
            Some(("site", b)) => {
                let v = coords(b)?;
                if v.len() != 1 {
                    return Err(Error::Parameter("site: takes exactly one coordinate".into()));
                }
                Ok(ExactTarget::SiteEmpty(v[0]))
            }
            Some(("any", b)) => Ok(ExactTarget::AnyEmpty(coords(b)?)),
            Some(("all", b)) => Ok(ExactTarget::AllEmpty(coords(b)?)),
            _ => Err(Error::Parameter(format!("unknown target {s:?}"))),
        }
    }
}
