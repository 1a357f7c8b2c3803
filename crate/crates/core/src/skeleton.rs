//! Thinning of tip component masks to one-pixel-wide skeletons and
//! conversion of a skeleton into an ordered centerline.
//!
//! Thinning removes simple points (8-connected foreground, 4-connected
//! background) in directional raster passes until nothing changes. Curve
//! endpoints are kept, so elongated shapes shrink to their medial line.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point2, Polyline};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    /// An all-background mask.
    pub fn new(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "mask of {width}x{height} needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = BinaryMask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.bits[y * width + x] = f(x, y);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Out-of-range coordinates read as background.
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Foreground pixel coordinates in raster order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    /// Number of foreground 8-neighbors of `(x, y)`.
    pub fn neighbor_count(&self, x: usize, y: usize) -> usize {
        NEIGHBORS
            .iter()
            .filter(|&&(dx, dy)| self.get_signed(x as isize + dx, y as isize + dy))
            .count()
    }

    fn neighborhood_code(&self, x: usize, y: usize) -> u8 {
        let mut code = 0u8;
        for (bit, &(dx, dy)) in NEIGHBORS.iter().enumerate() {
            if self.get_signed(x as isize + dx, y as isize + dy) {
                code |= 1 << bit;
            }
        }
        code
    }
}

/// 8-neighborhood in circular order starting east, counter-clockwise in
/// screen terms (y grows downwards).
pub(crate) const NEIGHBORS: [(isize, isize); 8] = [
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Counts connected groups among the flagged neighbor slots. With `four`
/// only edge-sharing slots connect and only groups touching a 4-neighbor of
/// the center count.
fn neighbor_groups(code: u8, four: bool) -> u32 {
    let member = |i: usize| (code >> i) & 1 == 1;
    let adjacent = |i: usize, j: usize| {
        let (a, b) = (NEIGHBORS[i], NEIGHBORS[j]);
        let (dx, dy) = ((a.0 - b.0).abs(), (a.1 - b.1).abs());
        if four {
            dx + dy == 1
        } else {
            dx <= 1 && dy <= 1
        }
    };
    let mut seen = [false; 8];
    let mut groups = 0;
    for start in 0..8 {
        if !member(start) || seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut touches_edge = false;
        while let Some(i) = stack.pop() {
            touches_edge |= i % 2 == 0;
            for j in 0..8 {
                if member(j) && !seen[j] && adjacent(i, j) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if !four || touches_edge {
            groups += 1;
        }
    }
    groups
}

fn simple_lut() -> &'static [bool; 256] {
    static LUT: OnceLock<[bool; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut lut = [false; 256];
        for code in 0..256usize {
            let fg = code as u8;
            lut[code] = neighbor_groups(fg, false) == 1 && neighbor_groups(!fg, true) == 1;
        }
        lut
    })
}

/// True when deleting `(x, y)` changes neither the 8-connected foreground
/// nor the 4-connected background topology.
pub fn is_simple(mask: &BinaryMask, x: usize, y: usize) -> bool {
    simple_lut()[mask.neighborhood_code(x, y) as usize]
}

/// Topology-preserving thinning to a one-pixel-wide skeleton. Endpoints
/// (exactly one foreground neighbor) are never removed.
pub fn thin(mask: &BinaryMask) -> BinaryMask {
    let lut = simple_lut();
    let mut m = mask.clone();
    // North, south, east, west border passes.
    const SIDES: [(isize, isize); 4] = [(0, -1), (0, 1), (1, 0), (-1, 0)];
    let mut candidates = Vec::new();
    loop {
        let mut changed = false;
        for &(dx, dy) in &SIDES {
            candidates.clear();
            candidates.extend(m.foreground().filter(|&(x, y)| {
                !m.get_signed(x as isize + dx, y as isize + dy)
            }));
            for &(x, y) in &candidates {
                let code = m.neighborhood_code(x, y);
                if code.count_ones() >= 2 && lut[code as usize] {
                    m.set(x, y, false);
                    changed = true;
                }
            }
        }
        if !changed {
            return m;
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Pixel adjacency graph of a skeleton. A diagonal step is only an edge
/// when no 4-path through a shared neighbor exists, so corners of staircase
/// runs stay on the path and no pixel triangles appear.
pub(crate) struct PixelGraph {
    pub(crate) coords: Vec<(usize, usize)>,
    pub(crate) adj: Vec<Vec<(usize, f64)>>,
}

impl PixelGraph {
    pub(crate) fn new(mask: &BinaryMask) -> Self {
        let coords: Vec<(usize, usize)> = mask.foreground().collect();
        let mut index = vec![usize::MAX; mask.width() * mask.height()];
        for (i, &(x, y)) in coords.iter().enumerate() {
            index[y * mask.width() + x] = i;
        }
        let adj = coords
            .iter()
            .map(|&(x, y)| {
                let (xi, yi) = (x as isize, y as isize);
                NEIGHBORS
                    .iter()
                    .filter(|&&(dx, dy)| {
                        mask.get_signed(xi + dx, yi + dy)
                            && (dx == 0
                                || dy == 0
                                || !(mask.get_signed(xi + dx, yi) || mask.get_signed(xi, yi + dy)))
                    })
                    .map(|&(dx, dy)| {
                        let (nx, ny) = ((xi + dx) as usize, (yi + dy) as usize);
                        let w = if dx != 0 && dy != 0 {
                            std::f64::consts::SQRT_2
                        } else {
                            1.0
                        };
                        (index[ny * mask.width() + nx], w)
                    })
                    .collect()
            })
            .collect();
        PixelGraph { coords, adj }
    }

    fn dijkstra(&self, src: usize) -> (Vec<f64>, Vec<usize>) {
        let n = self.coords.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        dist[src] = 0.0;
        heap.push(HeapItem { dist: 0.0, node: src });
        while let Some(HeapItem { dist: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            for &(nb, w) in &self.adj[node] {
                let nd = d + w;
                if nd < dist[nb] - 1e-12 {
                    dist[nb] = nd;
                    prev[nb] = node;
                    heap.push(HeapItem { dist: nd, node: nb });
                }
            }
        }
        (dist, prev)
    }
}

/// Removes terminal branches shorter than `min_len` (arc length in pixels
/// from the endpoint to the junction). Branches that never reach a junction
/// are left alone, so an isolated short curve survives.
pub fn prune_spurs(skel: &BinaryMask, min_len: f64) -> BinaryMask {
    let g = PixelGraph::new(skel);
    let degree: Vec<usize> = g.adj.iter().map(Vec::len).collect();
    let mut out = skel.clone();
    for end in (0..g.coords.len()).filter(|&i| degree[i] == 1) {
        let mut branch = vec![end];
        let mut length = 0.0;
        let (mut prev, mut cur) = (usize::MAX, end);
        let junction = loop {
            let Some(&(next, w)) = g.adj[cur].iter().find(|&&(n, _)| n != prev) else {
                break false;
            };
            length += w;
            if degree[next] >= 3 {
                break true;
            }
            if degree[next] != 2 || length >= min_len {
                break false;
            }
            branch.push(next);
            (prev, cur) = (cur, next);
        };
        if junction && length < min_len {
            for i in branch {
                let (x, y) = g.coords[i];
                out.set(x, y, false);
            }
        }
    }
    out
}

/// Shortest spur (in pixels) kept when turning a skeleton into a curve.
pub const SPUR_PRUNE_PX: f64 = 3.0;

/// Longest geodesic path through a skeleton as an ordered polyline of pixel
/// centers. Spurs under [`SPUR_PRUNE_PX`] are pruned first; the first vertex
/// is the endpoint with the smaller `(y, x)`.
pub fn skeleton_to_curve(skel: &BinaryMask) -> Result<Polyline> {
    let pruned = prune_spurs(skel, SPUR_PRUNE_PX);
    let g = PixelGraph::new(&pruned);
    if g.coords.len() < 2 {
        return Err(Error::DegenerateSkeleton(format!(
            "skeleton has {} pixel(s)",
            g.coords.len()
        )));
    }
    let ends: Vec<usize> = (0..g.coords.len())
        .filter(|&i| g.adj[i].len() == 1)
        .collect();
    if ends.is_empty() {
        return Err(Error::DegenerateSkeleton(
            "skeleton is a closed loop without endpoints".into(),
        ));
    }
    let key = |i: usize| (g.coords[i].1, g.coords[i].0);

    // (length, endpoint pair ordered by key, prev table of the source)
    let mut best: Option<(f64, (usize, usize), usize, Vec<usize>)> = None;
    for &a in &ends {
        let (dist, prev) = g.dijkstra(a);
        for &b in &ends {
            if b == a || !dist[b].is_finite() {
                continue;
            }
            let pair = if key(a) <= key(b) { (a, b) } else { (b, a) };
            let better = match &best {
                None => true,
                Some((len, bp, _, _)) => {
                    dist[b] > len + 1e-9
                        || ((dist[b] - len).abs() <= 1e-9
                            && (key(pair.0), key(pair.1)) < (key(bp.0), key(bp.1)))
                }
            };
            if better {
                best = Some((dist[b], pair, b, prev.clone()));
            }
        }
    }
    let Some((_, (first, _), target, prev)) = best else {
        return Err(Error::DegenerateSkeleton(
            "skeleton has a single endpoint".into(),
        ));
    };

    let mut path = vec![target];
    while let Some(&last) = path.last() {
        let p = prev[last];
        if p == usize::MAX {
            break;
        }
        path.push(p);
    }
    // `path` runs target → source; orient it to start at `first`.
    if path[0] != first {
        path.reverse();
    }
    let pts = path
        .iter()
        .map(|&i| Point2::new(g.coords[i].0 as f64, g.coords[i].1 as f64));
    let curve = Polyline::from_points_dedup(pts)?;
    debug_assert!(!curve.last().row_major_lt(curve.first()));
    Ok(curve)
}

/// A tip candidate curve extracted from one navigation frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TipCandidate {
    #[serde(flatten)]
    pub curve: Polyline,
    pub score: f64,
    #[serde(skip)]
    pub source_frame: usize,
}

/// Tip candidates file: `{frame, candidates: [{score, points}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TipCandidatesFile {
    pub frame: usize,
    pub candidates: Vec<TipCandidate>,
}

impl TipCandidatesFile {
    /// Candidates with `source_frame` restored from the file header.
    pub fn into_candidates(self) -> Vec<TipCandidate> {
        let frame = self.frame;
        self.candidates
            .into_iter()
            .map(|mut c| {
                c.source_frame = frame;
                c
            })
            .collect()
    }
}
