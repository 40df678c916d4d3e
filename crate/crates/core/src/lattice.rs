//! Window geometry: coordinates, rectangles, directions and boundary conventions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A lattice site. `x` grows east (e1), `y` grows north (e2).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub x: usize,
    pub y: usize,
}

impl Coord {
    pub const fn new(x: usize, y: usize) -> Self {
        Coord { x, y }
    }

    /// Nearest neighbour in direction `d`, if it has non-negative coordinates.
    pub fn step(self, d: Dir) -> Option<Coord> {
        let (dx, dy) = d.delta();
        let x = self.x.checked_add_signed(dx)?;
        let y = self.y.checked_add_signed(dy)?;
        Some(Coord { x, y })
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dir {
    East,
    North,
    West,
    South,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::East, Dir::North, Dir::West, Dir::South];

    pub const fn delta(self) -> (isize, isize) {
        match self {
            Dir::East => (1, 0),
            Dir::North => (0, 1),
            Dir::West => (-1, 0),
            Dir::South => (0, -1),
        }
    }

    pub const fn opposite(self) -> Dir {
        match self {
            Dir::East => Dir::West,
            Dir::North => Dir::South,
            Dir::West => Dir::East,
            Dir::South => Dir::North,
        }
    }

    pub const fn is_horizontal(self) -> bool {
        matches!(self, Dir::East | Dir::West)
    }
}

/// Axis-aligned rectangle `[x0, x0 + w) x [y0, y0 + h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub const fn new(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Rect { x0, y0, w, h }
    }

    pub const fn square(corner: Coord, side: usize) -> Self {
        Rect { x0: corner.x, y0: corner.y, w: side, h: side }
    }

    /// Square of radius `r` (side `2r + 1`) centred at `c`, clipped to nothing:
    /// returns `None` if it does not fit at non-negative coordinates.
    pub fn centered(c: Coord, r: usize) -> Option<Self> {
        Some(Rect { x0: c.x.checked_sub(r)?, y0: c.y.checked_sub(r)?, w: 2 * r + 1, h: 2 * r + 1 })
    }

    pub const fn x1(&self) -> usize {
        self.x0 + self.w
    }

    pub const fn y1(&self) -> usize {
        self.y0 + self.h
    }

    pub const fn area(&self) -> usize {
        self.w * self.h
    }

    pub const fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.x >= self.x0 && c.x < self.x1() && c.y >= self.y0 && c.y < self.y1()
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x0 >= self.x0 && other.y0 >= self.y0 && other.x1() <= self.x1() && other.y1() <= self.y1()
    }

    /// True for sites of the rectangle with a neighbour outside it.
    pub fn on_inner_boundary(&self, c: Coord) -> bool {
        self.contains(c) && (c.x == self.x0 || c.y == self.y0 || c.x + 1 == self.x1() || c.y + 1 == self.y1())
    }

    pub fn intersect(&self, other: &Rect) -> Rect {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1().min(other.x1());
        let y1 = self.y1().min(other.y1());
        Rect { x0, y0, w: x1.saturating_sub(x0), h: y1.saturating_sub(y0) }
    }

    /// Row-major iteration, south row first.
    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        (self.y0..self.y1()).flat_map(move |y| (self.x0..self.x1()).map(move |x| Coord { x, y }))
    }
}

impl FromStr for Rect {
    type Err = Error;

    /// Parses `x0,y0,w,h`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<_> = s.split(',').map(|p| p.trim().parse::<usize>()).collect();
        match parts.as_slice() {
            [Ok(x0), Ok(y0), Ok(w), Ok(h)] => Ok(Rect::new(*x0, *y0, *w, *h)),
            _ => Err(Error::Parameter(format!("expected region as x0,y0,w,h, got {s:?}"))),
        }
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x0, self.y0, self.w, self.h)
    }
}

/// State assumed for neighbours that fall outside the simulated window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Occupied,
    Empty,
    /// Out-of-window neighbours do not exist; FA thresholds are capped at
    /// the in-window degree and the north-east rule skips a missing neighbour.
    Free,
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "occupied" => Ok(Boundary::Occupied),
            "empty" => Ok(Boundary::Empty),
            "free" => Ok(Boundary::Free),
            _ => Err(Error::Parameter(format!("unknown boundary {s:?} (occupied, empty, free)"))),
        }
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Occupied => "occupied",
            Boundary::Empty => "empty",
            Boundary::Free => "free",
        })
    }
}

/// Dimensions of a window, with row-major indexing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub const fn new(width: usize, height: usize) -> Self {
        Dims { width, height }
    }

    pub const fn len(&self) -> usize {
        self.width * self.height
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn rect(&self) -> Rect {
        Rect::new(0, 0, self.width, self.height)
    }

    /// Centre of the window, standing in for the origin of Z^2.
    pub const fn origin(&self) -> Coord {
        Coord { x: self.width / 2, y: self.height / 2 }
    }

    #[inline]
    pub const fn index(&self, c: Coord) -> usize {
        c.y * self.width + c.x
    }

    #[inline]
    pub const fn coord(&self, i: usize) -> Coord {
        Coord { x: i % self.width, y: i / self.width }
    }

    #[inline]
    pub fn contains(&self, c: Coord) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn check(&self, c: Coord) -> Result<usize> {
        if self.contains(c) {
            Ok(self.index(c))
        } else {
            Err(Error::Range(format!("site {c} outside {}x{} window", self.width, self.height)))
        }
    }

    pub fn check_rect(&self, r: &Rect) -> Result<()> {
        if self.rect().contains_rect(r) && !r.is_empty() {
            Ok(())
        } else {
            Err(Error::Range(format!(
                "rectangle {}x{} at ({}, {}) does not fit the {}x{} window",
                r.w, r.h, r.x0, r.y0, self.width, self.height
            )))
        }
    }

    #[inline]
    pub fn neighbor(&self, c: Coord, d: Dir) -> Option<Coord> {
        c.step(d).filter(|n| self.contains(*n))
    }
}
