//! Explicit legal flip sequences that bring an empty line from an
//! essentially empty box along the good-box path to the origin.
//!
//! The moving object is always a set of empty sites (the "structure"):
//! a full line of a box, or during a rotation a line plus one hanging
//! segment. Every flip either empties a site next to two structure sites
//! (or one, when the site is easy), or returns a structure site to its
//! starting value while two of its neighbours (one, when easy) are still
//! in the structure. Sites are only ever returned to their starting values,
//! so the configuration differs from the start only on the structure.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::configuration::{Configuration, EMPTY};
use crate::environment::{Environment, ModelKind};
use crate::error::{Error, Result};
use crate::kcm::{is_essentially_empty, Lattice};
use crate::lattice::{Coord, Dir, Dims, Rect};
use crate::percolation::{BoxGrid, BoxIdx};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipStep {
    pub site: Coord,
    /// Zobrist digest of the configuration after the flip.
    pub digest: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipPath {
    pub steps: Vec<FlipStep>,
    /// Box side.
    pub side: usize,
    /// Path length `l` (the path has `l + 1` boxes).
    pub l: usize,
    /// Path position of the essentially empty box the line starts from.
    pub start_box: Option<usize>,
    pub rotations: usize,
    /// Largest number of sites differing from the start at any time.
    pub max_diff: usize,
    /// Largest number of boxes holding differences at any time.
    pub max_boxes: usize,
    pub terminal_origin_empty: bool,
}

impl FlipPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `N / (L^2 max(l, 1))`, to be compared with 4.
    pub fn length_ratio(&self) -> f64 {
        self.len() as f64 / (self.side * self.side * self.l.max(1)) as f64
    }

    pub fn within_length_bound(&self) -> bool {
        self.len() <= 4 * self.side * self.side * self.l.max(1)
    }
}

pub fn zobrist(i: usize) -> u64 {
    rng::hash3(0x5a0b_7157, 0, i as u64)
}

pub fn digest_of(eta: &[u8]) -> u64 {
    eta.iter().enumerate().filter(|(_, &v)| v == EMPTY).fold(0, |h, (i, _)| h ^ zobrist(i))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Orient {
    /// Fixed `x`, spanning the box rows.
    Col,
    /// Fixed `y`, spanning the box columns.
    Row,
}

#[derive(Clone, Copy, Debug)]
struct Line {
    orient: Orient,
    pos: usize,
    /// First coordinate along the line; the line has `side` sites.
    lo: usize,
}

/// Transposes coordinates so that every rotation can be written as
/// "column at fixed u to row at fixed v".
#[derive(Clone, Copy)]
struct Frame {
    transpose: bool,
}

impl Frame {
    fn at(&self, u: usize, v: usize) -> Coord {
        if self.transpose {
            Coord::new(v, u)
        } else {
            Coord::new(u, v)
        }
    }
}

struct Builder<'a> {
    env: &'a Environment,
    lattice: Lattice,
    dims: Dims,
    side: usize,
    start: Vec<u8>,
    cur: Vec<u8>,
    digest: u64,
    steps: Vec<FlipStep>,
    origin: usize,
    done: bool,
    diff: usize,
    diff_boxes: BTreeMap<(usize, usize), usize>,
    max_diff: usize,
    max_boxes: usize,
    rotations: usize,
}

impl<'a> Builder<'a> {
    fn bug(msg: String) -> Error {
        Error::ConstructionBug(msg)
    }

    fn is_empty(&self, c: Coord) -> bool {
        self.cur[self.dims.index(c)] == EMPTY
    }

    fn set(&mut self, c: Coord, empty: bool) -> Result<()> {
        if self.done {
            return Ok(());
        }
        let i = self.dims.index(c);
        let v = if empty { EMPTY } else { 1 };
        if self.cur[i] == v {
            return Ok(());
        }
        if !self.lattice.allowed(&self.cur, i) {
            return Err(Self::bug(format!("illegal flip at {c} (step {})", self.steps.len())));
        }
        let was_diff = self.cur[i] != self.start[i];
        self.cur[i] = v;
        self.digest ^= zobrist(i);
        self.steps.push(FlipStep { site: c, digest: self.digest });
        let key = (c.x / self.side, c.y / self.side);
        if was_diff {
            self.diff -= 1;
            let e = self.diff_boxes.get_mut(&key).unwrap();
            *e -= 1;
            if *e == 0 {
                self.diff_boxes.remove(&key);
            }
        } else {
            self.diff += 1;
            *self.diff_boxes.entry(key).or_default() += 1;
        }
        self.max_diff = self.max_diff.max(self.diff);
        self.max_boxes = self.max_boxes.max(self.diff_boxes.len());
        if self.diff > 3 * self.side {
            return Err(Self::bug(format!("{} sites differ from the start", self.diff)));
        }
        if self.diff_boxes.len() > 2 {
            return Err(Self::bug(format!("differences spread over {} boxes", self.diff_boxes.len())));
        }
        if self.diff_boxes.len() == 2 {
            let mut it = self.diff_boxes.keys();
            let (a, b) = (it.next().unwrap(), it.next().unwrap());
            if a.0.abs_diff(b.0) + a.1.abs_diff(b.1) != 1 {
                return Err(Self::bug("differences in two non-adjacent boxes".into()));
            }
        }
        if i == self.origin && v == EMPTY {
            self.done = true;
        }
        Ok(())
    }

    fn empty(&mut self, c: Coord) -> Result<()> {
        self.set(c, true)
    }

    fn restore(&mut self, c: Coord) -> Result<()> {
        let i = self.dims.index(c);
        self.set(c, self.start[i] == EMPTY)
    }

    fn cells(&self, l: Line) -> Vec<Coord> {
        (l.lo..l.lo + self.side)
            .map(|t| match l.orient {
                Orient::Col => Coord::new(l.pos, t),
                Orient::Row => Coord::new(t, l.pos),
            })
            .collect()
    }

    fn easy_index(&self, cells: &[Coord]) -> Result<usize> {
        cells
            .iter()
            .position(|c| self.env.is_easy(*c))
            .ok_or_else(|| Self::bug(format!("line through {} has no easy site", cells[0])))
    }

    /// Moves a full empty line one step across itself.
    fn shift(&mut self, line: Line, forward: bool) -> Result<Line> {
        let pos = if forward {
            line.pos + 1
        } else {
            line.pos.checked_sub(1).ok_or_else(|| Self::bug("line left the window".into()))?
        };
        let next = Line { pos, ..line };
        let old = self.cells(line);
        let new = self.cells(next);
        let je = self.easy_index(&new)?;
        self.empty(new[je])?;
        for j in je + 1..new.len() {
            self.empty(new[j])?;
        }
        for j in (0..je).rev() {
            self.empty(new[j])?;
        }
        let jo = self.easy_index(&old)?;
        for j in (jo + 1..old.len()).rev() {
            self.restore(old[j])?;
        }
        for j in 0..jo {
            self.restore(old[j])?;
        }
        self.restore(old[jo])?;
        Ok(next)
    }

    /// Turns a full line of the box `r` into a full line of the other orientation.
    fn rotate(&mut self, line: Line, r: Rect) -> Result<Line> {
        self.rotations += 1;
        let f = Frame { transpose: line.orient == Orient::Row };
        // box extent in (u, v): u runs across the moving line, v along it
        let (u0, v0) = if f.transpose { (r.y0, r.x0) } else { (r.x0, r.y0) };
        let (u1, v1) = (u0 + self.side - 1, v0 + self.side - 1);
        let a = line.pos;

        // grow a segment [lo, hi] x {v} hanging from the line at u = a
        let (mut lo, mut hi) = (a, a);
        let first = if a < u1 { a + 1 } else { a - 1 };
        let mut v = self.nearest_easy_v(f, first, v0, v1, v0)?;
        while lo > u0 || hi < u1 {
            let u = if hi < u1 { hi + 1 } else { lo - 1 };
            let target = self.nearest_easy_v(f, u, v0, v1, v)?;
            while v != target {
                let nv = if target > v { v + 1 } else { v - 1 };
                self.slide_segment(f, a, lo, hi, v, nv)?;
                v = nv;
            }
            self.empty(f.at(u, v))?;
            if u > hi {
                hi = u;
            } else {
                lo = u;
            }
        }
        let vs = v;

        // retract the rest of the old line, above and below the new one
        for upward in [true, false] {
            let mut col = a;
            let mut end = if upward { v1 } else { v0 };
            while end != vs {
                let tu = self.nearest_easy_u(f, end, u0, u1, col)?;
                while col != tu {
                    let nc = if tu > col { col + 1 } else { col - 1 };
                    self.slide_hanging(f, vs, end, col, nc)?;
                    col = nc;
                }
                self.restore(f.at(col, end))?;
                end = if upward { end - 1 } else { end + 1 };
            }
        }
        Ok(Line { orient: if f.transpose { Orient::Col } else { Orient::Row }, pos: vs, lo: u0 })
    }

    fn nearest_easy_v(&self, f: Frame, u: usize, v0: usize, v1: usize, near: usize) -> Result<usize> {
        (v0..=v1)
            .filter(|&v| self.env.is_easy(f.at(u, v)))
            .min_by_key(|&v| (v.abs_diff(near), v))
            .ok_or_else(|| Self::bug(format!("no easy site across {}", f.at(u, v0))))
    }

    fn nearest_easy_u(&self, f: Frame, v: usize, u0: usize, u1: usize, near: usize) -> Result<usize> {
        (u0..=u1)
            .filter(|&u| self.env.is_easy(f.at(u, v)))
            .min_by_key(|&u| (u.abs_diff(near), u))
            .ok_or_else(|| Self::bug(format!("no easy site along {}", f.at(u0, v))))
    }

    /// Moves the segment `[lo, hi] x {v}` anchored at `u = a` to row `nv`.
    fn slide_segment(&mut self, f: Frame, a: usize, lo: usize, hi: usize, v: usize, nv: usize) -> Result<()> {
        for u in a + 1..=hi {
            self.empty(f.at(u, nv))?;
        }
        for u in (lo..a).rev() {
            self.empty(f.at(u, nv))?;
        }
        for u in (a + 1..=hi).rev() {
            self.restore(f.at(u, v))?;
        }
        for u in lo..a {
            self.restore(f.at(u, v))?;
        }
        Ok(())
    }

    /// Moves the segment `{col} x (vs, end]` hanging from row `vs` to column `nc`.
    fn slide_hanging(&mut self, f: Frame, vs: usize, end: usize, col: usize, nc: usize) -> Result<()> {
        let rows: Vec<usize> = if end > vs { (vs + 1..=end).collect() } else { (end..vs).rev().collect() };
        for &v in &rows {
            self.empty(f.at(nc, v))?;
        }
        for &v in rows.iter().rev() {
            self.restore(f.at(col, v))?;
        }
        Ok(())
    }
}

fn direction(from: BoxIdx, to: BoxIdx) -> Option<Dir> {
    match (to.x as isize - from.x as isize, to.y as isize - from.y as isize) {
        (1, 0) => Some(Dir::East),
        (-1, 0) => Some(Dir::West),
        (0, 1) => Some(Dir::North),
        (0, -1) => Some(Dir::South),
        _ => None,
    }
}

/// Builds the flip sequence for `config` along `path` (origin box first).
/// Returns an empty path when `config` already lies in `A`, i.e. the origin
/// is empty or no path box is essentially empty.
pub fn build_flip_path(env: &Environment, grid: &BoxGrid, path: &[BoxIdx], config: &Configuration) -> Result<FlipPath> {
    crate::bootstrap::check_dims(env, config)?;
    if env.kind() != ModelKind::MixedFa {
        return Err(Error::NotApplicable("flip paths are built for threshold environments".into()));
    }
    let side = grid.side;
    let origin = env.origin();
    let first = *path.first().ok_or_else(|| Error::Parameter("empty box path".into()))?;
    if grid.box_of(origin) != first {
        return Err(Error::Parameter("path must start at the origin box".into()));
    }
    for w in path.windows(2) {
        if direction(w[0], w[1]).is_none() {
            return Err(Error::Parameter(format!("boxes {} and {} are not adjacent", w[0], w[1])));
        }
    }
    if let Some(b) = path.iter().find(|b| !grid.is_good(**b)) {
        return Err(Error::Parameter(format!("path box {b} is not good")));
    }
    let l = path.len() - 1;
    let mut out = FlipPath {
        steps: Vec::new(),
        side,
        l,
        start_box: None,
        rotations: 0,
        max_diff: 0,
        max_boxes: 0,
        terminal_origin_empty: config.is_empty(origin),
    };
    if config.is_empty(origin) {
        return Ok(out);
    }
    let Some(k) = path.iter().position(|b| is_essentially_empty(env, config, grid, *b)) else {
        return Ok(out);
    };
    out.start_box = Some(k);

    let dims = env.dims();
    let start = config.eta().to_vec();
    let mut b = Builder {
        env,
        lattice: Lattice::new(env, config.boundary),
        dims,
        side,
        digest: digest_of(&start),
        cur: start.clone(),
        start,
        steps: Vec::new(),
        origin: dims.index(origin),
        done: false,
        diff: 0,
        diff_boxes: BTreeMap::new(),
        max_diff: 0,
        max_boxes: 0,
        rotations: 0,
    };

    let rk = grid.box_rect(path[k]);
    let want = if k > 0 { direction(path[k], path[k - 1]) } else { None };
    let mut line = initial_line(&b, rk, want, origin);

    for j in (1..=k).rev() {
        let d = direction(path[j], path[j - 1]).unwrap();
        let r = grid.box_rect(path[j]);
        let needed = if d.is_horizontal() { Orient::Col } else { Orient::Row };
        if line.orient != needed {
            line = b.rotate(line, r)?;
        }
        let next = grid.box_rect(path[j - 1]);
        let goal = match d {
            Dir::East => next.x0,
            Dir::West => next.x1() - 1,
            Dir::North => next.y0,
            Dir::South => next.y1() - 1,
        };
        while line.pos != goal && !b.done {
            line = b.shift(line, goal > line.pos)?;
        }
    }
    let goal = match line.orient {
        Orient::Col => origin.x,
        Orient::Row => origin.y,
    };
    while line.pos != goal && !b.done {
        line = b.shift(line, goal > line.pos)?;
    }
    if !b.is_empty(origin) {
        return Err(Error::ConstructionBug("line reached the origin without emptying it".into()));
    }
    out.steps = b.steps;
    out.rotations = b.rotations;
    out.max_diff = b.max_diff;
    out.max_boxes = b.max_boxes;
    out.terminal_origin_empty = true;
    Ok(out)
}

/// Picks an empty line of the essentially empty box, preferring the
/// orientation that can leave towards `want` and, among those, the one
/// closest to the exit side (or to the origin when there is no exit).
fn initial_line(b: &Builder<'_>, r: Rect, want: Option<Dir>, origin: Coord) -> Line {
    let mut lines = Vec::new();
    for x in r.x0..r.x1() {
        if (r.y0..r.y1()).all(|y| b.is_empty(Coord::new(x, y))) {
            lines.push(Line { orient: Orient::Col, pos: x, lo: r.y0 });
        }
    }
    for y in r.y0..r.y1() {
        if (r.x0..r.x1()).all(|x| b.is_empty(Coord::new(x, y))) {
            lines.push(Line { orient: Orient::Row, pos: y, lo: r.x0 });
        }
    }
    let score = |l: &Line| -> (usize, usize) {
        match want {
            Some(d) => {
                if (l.orient == Orient::Col) != d.is_horizontal() {
                    return (1, 0);
                }
                let dist = match d {
                    Dir::East => r.x1() - 1 - l.pos,
                    Dir::West => l.pos - r.x0,
                    Dir::North => r.y1() - 1 - l.pos,
                    Dir::South => l.pos - r.y0,
                };
                (0, dist)
            }
            None => {
                let target = if l.orient == Orient::Col { origin.x } else { origin.y };
                (0, l.pos.abs_diff(target))
            }
        }
    };
    *lines.iter().min_by_key(|l| score(l)).expect("essentially empty box has an empty line")
}
