//! Occupation fields and equilibrium sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Boundary, Coord, Dir, Dims, Rect};
use crate::rng::{self, STREAM_CONFIGURATION};

pub const EMPTY: u8 = 0;
pub const OCCUPIED: u8 = 1;

/// What a site sees when it looks at one neighbour.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Site {
    Empty,
    Occupied,
    Absent,
}

impl Site {
    pub fn from_boundary(b: Boundary) -> Site {
        match b {
            Boundary::Occupied => Site::Occupied,
            Boundary::Empty => Site::Empty,
            Boundary::Free => Site::Absent,
        }
    }
}

/// Occupation field `eta` (0 = empty, 1 = occupied) on a window, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Configuration {
    dims: Dims,
    pub boundary: Boundary,
    eta: Vec<u8>,
}

impl Configuration {
    pub fn filled(dims: Dims, boundary: Boundary, value: u8) -> Self {
        Configuration { dims, boundary, eta: vec![value; dims.len()] }
    }

    pub fn all_occupied(dims: Dims, boundary: Boundary) -> Self {
        Self::filled(dims, boundary, OCCUPIED)
    }

    pub fn all_empty(dims: Dims, boundary: Boundary) -> Self {
        Self::filled(dims, boundary, EMPTY)
    }

    pub fn from_eta(dims: Dims, boundary: Boundary, eta: Vec<u8>) -> Result<Self> {
        if eta.len() != dims.len() || eta.iter().any(|&v| v > 1) {
            return Err(Error::Parameter(format!(
                "occupation field must have {} entries in {{0, 1}}",
                dims.len()
            )));
        }
        Ok(Configuration { dims, boundary, eta })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn eta(&self) -> &[u8] {
        &self.eta
    }

    pub fn eta_mut(&mut self) -> &mut [u8] {
        &mut self.eta
    }

    pub fn into_eta(self) -> Vec<u8> {
        self.eta
    }

    #[inline]
    pub fn is_empty_index(&self, i: usize) -> bool {
        self.eta[i] == EMPTY
    }

    #[inline]
    pub fn is_empty(&self, c: Coord) -> bool {
        self.eta[self.dims.index(c)] == EMPTY
    }

    pub fn set(&mut self, c: Coord, empty: bool) {
        let i = self.dims.index(c);
        self.eta[i] = if empty { EMPTY } else { OCCUPIED };
    }

    pub fn flip(&mut self, c: Coord) {
        let i = self.dims.index(c);
        self.eta[i] ^= 1;
    }

    pub fn count_empty(&self) -> usize {
        self.eta.iter().filter(|&&v| v == EMPTY).count()
    }

    /// State of the neighbour of `c` in direction `d`, window edge included.
    #[inline]
    pub fn neighbor(&self, c: Coord, d: Dir) -> Site {
        match self.dims.neighbor(c, d) {
            Some(n) if self.is_empty(n) => Site::Empty,
            Some(_) => Site::Occupied,
            None => Site::from_boundary(self.boundary),
        }
    }

    /// Sites where the two fields differ.
    pub fn diff(&self, other: &Configuration) -> Vec<Coord> {
        self.eta
            .iter()
            .zip(&other.eta)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| self.dims.coord(i))
            .collect()
    }
}

/// Product Bernoulli field: site `i` is empty iff its keyed uniform is below `q`.
pub fn sample_equilibrium(q: f64, dims: Dims, boundary: Boundary, seed: u64) -> Result<Configuration> {
    check_q(q)?;
    let eta = (0..dims.len())
        .map(|i| if rng::site_uniform(seed, STREAM_CONFIGURATION, i) < q { EMPTY } else { OCCUPIED })
        .collect();
    Ok(Configuration { dims, boundary, eta })
}

/// The same field as [`sample_equilibrium`], drawn only on `rect` and returned
/// row-major over the rectangle.
pub fn sample_equilibrium_rect(q: f64, dims: Dims, rect: Rect, seed: u64) -> Vec<u8> {
    rect.coords()
        .map(|c| {
            let i = dims.index(c);
            if rng::site_uniform(seed, STREAM_CONFIGURATION, i) < q {
                EMPTY
            } else {
                OCCUPIED
            }
        })
        .collect()
}

pub fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("q must lie in (0, 1), got {q}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marginal_matches_q() {
        let d = Dims::new(100, 100);
        let c = sample_equilibrium(0.999, d, Boundary::Occupied, 4).unwrap();
        // sd of the empty count is sqrt(1e4 * 0.999 * 0.001) ~ 3.2
        assert!((c.count_empty() as f64 - 9990.0).abs() <= 10.0);
        assert_eq!(c, sample_equilibrium(0.999, d, Boundary::Occupied, 4).unwrap());
    }

    #[test]
    fn rect_sampling_matches_full_window() {
        let d = Dims::new(31, 17);
        let full = sample_equilibrium(0.3, d, Boundary::Occupied, 8).unwrap();
        let r = Rect::new(4, 3, 10, 9);
        let part = sample_equilibrium_rect(0.3, d, r, 8);
        for (k, c) in r.coords().enumerate() {
            assert_eq!(part[k], full.eta()[d.index(c)]);
        }
    }

    #[test]
    fn boundary_neighbours() {
        let d = Dims::new(2, 2);
        let mut c = Configuration::all_occupied(d, Boundary::Empty);
        c.set(Coord::new(1, 0), true);
        assert_eq!(c.neighbor(Coord::new(0, 0), Dir::East), Site::Empty);
        assert_eq!(c.neighbor(Coord::new(0, 0), Dir::North), Site::Occupied);
        assert_eq!(c.neighbor(Coord::new(0, 0), Dir::West), Site::Empty);
        c.boundary = Boundary::Free;
        assert_eq!(c.neighbor(Coord::new(0, 0), Dir::South), Site::Absent);
    }

    #[test]
    fn rejects_degenerate_q() {
        assert!(sample_equilibrium(0.0, Dims::new(2, 2), Boundary::Occupied, 0).is_err());
        assert!(sample_equilibrium(1.0, Dims::new(2, 2), Boundary::Occupied, 0).is_err());
    }
}
