//! Cluster geometry of good boxes and easy sites.

use std::collections::VecDeque;

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::configuration::Configuration;
use crate::environment::{Environment, ModelKind};
use crate::error::{Error, Result};
use crate::lattice::{Coord, Dir, Dims, Rect};

/// Position of a box `L i + [0, L)^2` on the box lattice.
pub type BoxIdx = Coord;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxGrid {
    pub side: usize,
    pub dims: Dims,
    pub good: Vec<bool>,
}

impl BoxGrid {
    pub fn is_good(&self, b: BoxIdx) -> bool {
        self.dims.contains(b) && self.good[self.dims.index(b)]
    }

    pub fn box_rect(&self, b: BoxIdx) -> Rect {
        Rect::new(b.x * self.side, b.y * self.side, self.side, self.side)
    }

    pub fn box_of(&self, c: Coord) -> BoxIdx {
        Coord::new(c.x / self.side, c.y / self.side)
    }
}

pub fn coarse_grain(env: &Environment, side: usize) -> Result<BoxGrid> {
    if side == 0 || env.width() % side != 0 || env.height() % side != 0 {
        return Err(Error::Parameter(format!(
            "window {}x{} is not divisible into boxes of side {side}",
            env.width(),
            env.height()
        )));
    }
    let dims = Dims::new(env.width() / side, env.height() / side);
    let good = (0..dims.len())
        .map(|i| {
            let b = dims.coord(i);
            env.is_good_square(Coord::new(b.x * side, b.y * side), side)
        })
        .collect::<Result<_>>()?;
    Ok(BoxGrid { side, dims, good })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLabeling {
    pub dims: Dims,
    /// Cluster id per cell; ids are assigned in row-major order of first appearance.
    pub labels: Vec<Option<u32>>,
    pub sizes: Vec<usize>,
    pub spanning: Vec<bool>,
}

impl ClusterLabeling {
    pub fn label(&self, c: Coord) -> Option<u32> {
        if self.dims.contains(c) {
            self.labels[self.dims.index(c)]
        } else {
            None
        }
    }

    /// Largest cluster touching two opposite window edges.
    pub fn spanning_cluster(&self) -> Option<u32> {
        (0..self.sizes.len())
            .filter(|&k| self.spanning[k])
            .max_by(|&a, &b| self.sizes[a].cmp(&self.sizes[b]).then(b.cmp(&a)))
            .map(|k| k as u32)
    }

    pub fn flags(&self) -> Vec<bool> {
        self.labels.iter().map(Option::is_some).collect()
    }
}

/// Nearest-neighbour components of the flagged cells.
pub fn label_clusters(flags: &[bool], dims: Dims) -> Result<ClusterLabeling> {
    if flags.len() != dims.len() {
        return Err(Error::Parameter(format!("{} flags for {} cells", flags.len(), dims.len())));
    }
    let n = dims.len();
    let mut uf = UnionFind::<usize>::new(n);
    for i in 0..n {
        if !flags[i] {
            continue;
        }
        let c = dims.coord(i);
        for d in [Dir::East, Dir::North] {
            if let Some(m) = dims.neighbor(c, d) {
                let j = dims.index(m);
                if flags[j] {
                    uf.union(i, j);
                }
            }
        }
    }
    let mut canon = vec![u32::MAX; n];
    let mut labels = vec![None; n];
    let mut sizes = Vec::new();
    let mut touch = Vec::new();
    for i in 0..n {
        if !flags[i] {
            continue;
        }
        let root = uf.find(i);
        if canon[root] == u32::MAX {
            canon[root] = sizes.len() as u32;
            sizes.push(0);
            touch.push([false; 4]);
        }
        let id = canon[root];
        labels[i] = Some(id);
        sizes[id as usize] += 1;
        let c = dims.coord(i);
        let t = &mut touch[id as usize];
        t[0] |= c.x == 0;
        t[1] |= c.x + 1 == dims.width;
        t[2] |= c.y == 0;
        t[3] |= c.y + 1 == dims.height;
    }
    let spanning = touch.iter().map(|t| (t[0] && t[1]) || (t[2] && t[3])).collect();
    Ok(ClusterLabeling { dims, labels, sizes, spanning })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterGeometry {
    /// Cells (boxes or sites) of the origin's cluster `C_0`.
    pub c0: Vec<Coord>,
    /// Spanning-cluster cells adjacent to `C_0`.
    pub boundary: Vec<Coord>,
    /// `(|boundary| + |C_0|) * unit^2`.
    pub t0: usize,
    /// Largest l-infinity distance between two cells of `C_0`.
    pub diameter: usize,
    /// False when `C_0` reaches the window edge, so the window cannot tell
    /// whether it is really surrounded.
    pub enclosed: bool,
    /// Side of one cell in sites.
    pub unit: usize,
}

fn geometry_of(labeling: &ClusterLabeling, origin: Coord, unit: usize) -> Result<ClusterGeometry> {
    let dims = labeling.dims;
    let s = labeling
        .spanning_cluster()
        .ok_or_else(|| Error::GeometryUnavailable("no spanning cluster in the window".into()))?;
    let in_s = |c: Coord| labeling.label(c) == Some(s);
    let c0 = if in_s(origin) {
        vec![origin]
    } else {
        let mut seen = vec![false; dims.len()];
        seen[dims.index(origin)] = true;
        let mut out = vec![origin];
        let mut q = VecDeque::from([origin]);
        while let Some(c) = q.pop_front() {
            for d in Dir::ALL {
                if let Some(m) = dims.neighbor(c, d) {
                    if !in_s(m) && !seen[dims.index(m)] {
                        seen[dims.index(m)] = true;
                        out.push(m);
                        q.push_back(m);
                    }
                }
            }
        }
        out.sort_by_key(|c| dims.index(*c));
        out
    };
    let mut mark = vec![false; dims.len()];
    let mut boundary = Vec::new();
    for c in &c0 {
        for d in Dir::ALL {
            if let Some(m) = dims.neighbor(*c, d) {
                if in_s(m) && m != *c && !c0.contains(&m) && !mark[dims.index(m)] {
                    mark[dims.index(m)] = true;
                    boundary.push(m);
                }
            }
        }
    }
    boundary.sort_by_key(|c| dims.index(*c));
    let (xs, ys) = (c0.iter().map(|c| c.x), c0.iter().map(|c| c.y));
    let dx = xs.clone().max().unwrap() - xs.min().unwrap();
    let dy = ys.clone().max().unwrap() - ys.min().unwrap();
    let enclosed = c0.iter().all(|c| c.x > 0 && c.y > 0 && c.x + 1 < dims.width && c.y + 1 < dims.height);
    Ok(ClusterGeometry {
        t0: (boundary.len() + c0.len()) * unit * unit,
        c0,
        boundary,
        diameter: dx.max(dy),
        enclosed,
        unit,
    })
}

/// `C_0` is the origin box if it lies in the spanning cluster, otherwise the
/// origin's component in the complement of the spanning cluster.
pub fn origin_cluster_geometry(grid: &BoxGrid, labeling: &ClusterLabeling) -> Result<ClusterGeometry> {
    let origin = Coord::new(grid.dims.width / 2, grid.dims.height / 2);
    geometry_of(labeling, origin, grid.side)
}

/// The box containing the origin site of the underlying window.
pub fn origin_box(env: &Environment, grid: &BoxGrid) -> BoxIdx {
    grid.box_of(env.origin())
}

/// Breadth-first distances inside the cluster of `sources` (all of which
/// must share one cluster).
pub fn distance_map(labeling: &ClusterLabeling, sources: &[Coord]) -> Result<Vec<Option<u32>>> {
    let dims = labeling.dims;
    let first = sources.first().ok_or_else(|| Error::Parameter("empty source set".into()))?;
    let id = labeling.label(*first).ok_or_else(|| Error::Parameter(format!("source {first} is not in a cluster")))?;
    if let Some(bad) = sources.iter().find(|c| labeling.label(**c) != Some(id)) {
        return Err(Error::Parameter(format!("source {bad} lies outside the cluster of {first}")));
    }
    let mut dist = vec![None; dims.len()];
    let mut q = VecDeque::new();
    for c in sources {
        if dist[dims.index(*c)].is_none() {
            dist[dims.index(*c)] = Some(0);
            q.push_back(*c);
        }
    }
    while let Some(c) = q.pop_front() {
        let dc = dist[dims.index(c)].unwrap();
        for d in Dir::ALL {
            if let Some(m) = dims.neighbor(c, d) {
                let j = dims.index(m);
                if labeling.labels[j] == Some(id) && dist[j].is_none() {
                    dist[j] = Some(dc + 1);
                    q.push_back(m);
                }
            }
        }
    }
    Ok(dist)
}

pub fn chemical_distance(labeling: &ClusterLabeling, sources: &[Coord], targets: &[Coord]) -> Result<Vec<Option<u32>>> {
    let map = distance_map(labeling, sources)?;
    Ok(targets
        .iter()
        .map(|t| if labeling.dims.contains(*t) { map[labeling.dims.index(*t)] } else { None })
        .collect())
}

/// Excellent boxes of the spanning cluster within chemical distance `l` of `boundary`.
pub fn count_excellent_within(
    env: &Environment,
    grid: &BoxGrid,
    labeling: &ClusterLabeling,
    geometry: &ClusterGeometry,
    l: u32,
) -> Result<usize> {
    if geometry.boundary.is_empty() {
        return Ok(0);
    }
    let map = distance_map(labeling, &geometry.boundary)?;
    let mut count = 0;
    for (i, d) in map.iter().enumerate() {
        if d.is_some_and(|d| d <= l) {
            let b = grid.dims.coord(i);
            if env.is_excellent_square(Coord::new(b.x * grid.side, b.y * grid.side), grid.side)? {
                count += 1;
            }
        }
    }
    Ok(count)
}

fn lex_neighbors(dims: Dims, c: Coord) -> impl Iterator<Item = Coord> {
    // (x-1, y) < (x, y-1) < (x, y+1) < (x+1, y)
    [Dir::West, Dir::South, Dir::North, Dir::East].into_iter().filter_map(move |d| dims.neighbor(c, d))
}

/// Shortest path `i_0 = origin box, ..., i_l` of good boxes on the breadth-first
/// tree of the origin's cluster. Neighbours are explored in lexicographic
/// order and the target is the lexicographically smallest box at depth `l`.
pub fn good_box_path(grid: &BoxGrid, labeling: &ClusterLabeling, l: usize) -> Result<Vec<BoxIdx>> {
    let (tree, depth) = bfs_tree(grid, labeling)?;
    let dims = grid.dims;
    let max_depth = depth.iter().flatten().copied().max().unwrap_or(0) as usize;
    if l > max_depth {
        return Err(Error::PathTooShort { achieved: max_depth, requested: l });
    }
    let target = (0..dims.len())
        .filter(|&i| depth[i] == Some(l as u32))
        .map(|i| dims.coord(i))
        .min()
        .expect("depth attained");
    let mut path = vec![target];
    let mut cur = target;
    while let Some(p) = tree[dims.index(cur)] {
        path.push(p);
        cur = p;
    }
    path.reverse();
    Ok(path)
}

/// As [`good_box_path`] with `l` clipped to the depth of the cluster.
pub fn good_box_path_truncated(grid: &BoxGrid, labeling: &ClusterLabeling, l: usize) -> Result<Vec<BoxIdx>> {
    match good_box_path(grid, labeling, l) {
        Err(Error::PathTooShort { achieved, .. }) => good_box_path(grid, labeling, achieved),
        other => other,
    }
}

type Tree = (Vec<Option<Coord>>, Vec<Option<u32>>);

fn bfs_tree(grid: &BoxGrid, labeling: &ClusterLabeling) -> Result<Tree> {
    let dims = grid.dims;
    let origin = Coord::new(dims.width / 2, dims.height / 2);
    let s = labeling.spanning_cluster();
    if s.is_none() || labeling.label(origin) != s {
        return Err(Error::GeometryUnavailable("origin box is not in the spanning cluster".into()));
    }
    let mut parent = vec![None; dims.len()];
    let mut depth = vec![None; dims.len()];
    depth[dims.index(origin)] = Some(0);
    let mut q = VecDeque::from([origin]);
    while let Some(c) = q.pop_front() {
        let dc = depth[dims.index(c)].unwrap();
        for m in lex_neighbors(dims, c) {
            let j = dims.index(m);
            if labeling.labels[j] == s && depth[j].is_none() {
                depth[j] = Some(dc + 1);
                parent[j] = Some(c);
                q.push_back(m);
            }
        }
    }
    Ok((parent, depth))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteGeometry {
    pub geometry: ClusterGeometry,
    pub cluster_sizes: Vec<usize>,
    pub spanning_size: usize,
    /// Self-avoiding path of easy spanning-cluster sites: the first
    /// `loop_len` sites form a closed loop around `C_0`, the rest run to
    /// the window edge.
    pub path: Vec<Coord>,
    pub loop_len: usize,
}

/// Site-level geometry of easy clusters around the origin.
pub fn easy_site_geometry(env: &Environment) -> Result<SiteGeometry> {
    if env.kind() != ModelKind::MixedNeFa1f {
        return Err(Error::NotApplicable("easy-site geometry is defined for the north-east/FA1f mixture".into()));
    }
    let dims = env.dims();
    let flags: Vec<bool> = (0..dims.len()).map(|i| env.is_easy_index(i)).collect();
    let labeling = label_clusters(&flags, dims)?;
    let geometry = geometry_of(&labeling, env.origin(), 1)?;
    let s = labeling.spanning_cluster().unwrap();
    let in_s = |c: Coord| labeling.label(c) == Some(s);
    let origin = env.origin();

    let lp: Vec<Coord> = if in_s(origin) {
        Vec::new()
    } else {
        if !geometry.enclosed {
            return Err(Error::GeometryUnavailable("origin cluster reaches the window edge".into()));
        }
        encircling_loop(dims, origin, &geometry.c0, in_s)?
    };

    // tail: shortest spanning-cluster path from the loop (or origin) to the window edge
    let sources = if lp.is_empty() { vec![origin] } else { lp.clone() };
    let mut prev: Vec<Option<Coord>> = vec![None; dims.len()];
    let mut seen = vec![false; dims.len()];
    let mut q = VecDeque::new();
    for c in &sources {
        seen[dims.index(*c)] = true;
        q.push_back(*c);
    }
    let at_edge = |c: Coord| c.x == 0 || c.y == 0 || c.x + 1 == dims.width || c.y + 1 == dims.height;
    let mut end = None;
    while let Some(c) = q.pop_front() {
        if at_edge(c) {
            end = Some(c);
            break;
        }
        for d in Dir::ALL {
            if let Some(m) = dims.neighbor(c, d) {
                if in_s(m) && !seen[dims.index(m)] {
                    seen[dims.index(m)] = true;
                    prev[dims.index(m)] = Some(c);
                    q.push_back(m);
                }
            }
        }
    }
    let end = end.ok_or_else(|| Error::GeometryUnavailable("spanning cluster does not reach the edge".into()))?;
    let mut tail = vec![end];
    while let Some(p) = prev[dims.index(*tail.last().unwrap())] {
        tail.push(p);
    }
    tail.reverse();
    let anchor = tail[0];
    let mut path = Vec::new();
    let loop_len = lp.len();
    if !lp.is_empty() {
        let k = lp.iter().position(|c| *c == anchor).unwrap();
        // rotate so the loop ends at the anchor
        path.extend(lp[k + 1..].iter().chain(lp[..=k].iter()).copied());
        path.extend(tail.into_iter().skip(1));
    } else {
        path = tail;
    }
    Ok(SiteGeometry {
        geometry,
        spanning_size: labeling.sizes[s as usize],
        cluster_sizes: labeling.sizes,
        path,
        loop_len,
    })
}

/// Crossings of the horizontal ray leaving `o` eastward between rows `o.y` and `o.y + 1`.
fn crosses(o: Coord, a: Coord, b: Coord) -> bool {
    a.x == b.x && a.x > o.x && a.y.min(b.y) == o.y && a.y.max(b.y) == o.y + 1
}

/// Shortest closed walk in the spanning cluster with an odd number of ray
/// crossings, reduced to a simple loop. `C_0` is connected and avoids the
/// loop, so every site of `C_0` has the same nonzero winding number.
fn encircling_loop(dims: Dims, origin: Coord, c0: &[Coord], in_s: impl Fn(Coord) -> bool) -> Result<Vec<Coord>> {
    let mut start = origin;
    while c0.contains(&start) {
        start = dims
            .neighbor(start, Dir::East)
            .ok_or_else(|| Error::GeometryUnavailable("origin cluster reaches the east edge".into()))?;
    }
    let n = dims.len();
    let idx = |c: Coord, p: usize| dims.index(c) * 2 + p;
    let mut prev = vec![usize::MAX; 2 * n];
    let mut seen = vec![false; 2 * n];
    seen[idx(start, 0)] = true;
    let mut q = VecDeque::from([(start, 0usize)]);
    let mut found = false;
    while let Some((c, p)) = q.pop_front() {
        if c == start && p == 1 {
            found = true;
            break;
        }
        for d in Dir::ALL {
            if let Some(m) = dims.neighbor(c, d) {
                if !in_s(m) {
                    continue;
                }
                let pm = p ^ usize::from(crosses(origin, c, m));
                if !seen[idx(m, pm)] {
                    seen[idx(m, pm)] = true;
                    prev[idx(m, pm)] = idx(c, p);
                    q.push_back((m, pm));
                }
            }
        }
    }
    if !found {
        return Err(Error::GeometryUnavailable("no loop of the spanning cluster surrounds the origin".into()));
    }
    let mut walk = Vec::new();
    let mut cur = idx(start, 1);
    while cur != idx(start, 0) {
        walk.push(dims.coord(cur / 2));
        cur = prev[cur];
    }
    walk.reverse();
    // walk ends back at start; drop the repeat
    let mut lp = vec![start];
    lp.extend(walk);
    lp.pop();
    Ok(simplify_loop(origin, lp))
}

fn loop_crossings(o: Coord, lp: &[Coord]) -> usize {
    (0..lp.len()).filter(|&i| crosses(o, lp[i], lp[(i + 1) % lp.len()])).count()
}

/// Splits a closed walk at repeated sites until it is simple, keeping the
/// piece with an odd crossing count each time.
fn simplify_loop(o: Coord, mut lp: Vec<Coord>) -> Vec<Coord> {
    'outer: loop {
        for i in 0..lp.len() {
            for j in i + 1..lp.len() {
                if lp[i] == lp[j] {
                    let inner: Vec<Coord> = lp[i..j].to_vec();
                    let outer: Vec<Coord> = lp[j..].iter().chain(lp[..i].iter()).copied().collect();
                    lp = if loop_crossings(o, &inner) % 2 == 1 { inner } else { outer };
                    continue 'outer;
                }
            }
        }
        return lp;
    }
}

/// Whether an up-right path of occupied difficult sites joins the part of
/// the west/south edges below-left of the origin to the part of the
/// east/north edges above-right of it.
pub fn oriented_occupied_path_exists(env: &Environment, config: &Configuration) -> Result<bool> {
    crate::bootstrap::check_dims(env, config)?;
    let dims = env.dims();
    let o = env.origin();
    let blocked = |c: Coord| !env.is_easy(c) && !config.is_empty(c);
    let mut reach = vec![false; dims.len()];
    for y in 0..dims.height {
        for x in 0..dims.width {
            let c = Coord::new(x, y);
            if !blocked(c) {
                continue;
            }
            let start = (x == 0 && y <= o.y) || (y == 0 && x <= o.x);
            let from_w = x > 0 && reach[dims.index(Coord::new(x - 1, y))];
            let from_s = y > 0 && reach[dims.index(Coord::new(x, y - 1))];
            if start || from_w || from_s {
                reach[dims.index(c)] = true;
                let end = (x + 1 == dims.width && y >= o.y) || (y + 1 == dims.height && x >= o.x);
                if end {
                    return Ok(true);
                }
            }
        }
    }
    Ok(false)
}
