//! Min tree: the inclusion tree of the connected components of the lower
//! level sets `{p : f(p) <= λ}` of an image, with incremental second-order
//! moments per node and the elongation attribute used to pick guidewire-tip
//! candidates.
//!
//! Construction processes pixels by increasing intensity with a union-find
//! over already-seen neighbors, then compresses equal-level chains so every
//! node is a canonical component.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::GrayImage;
use crate::skeleton::BinaryMask;

/// Pixel adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(format!("connectivity must be 4 or 8, got {v}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

impl Connectivity {
    pub(crate) fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
        const EIGHT: [(isize, isize); 8] = [
            (-1, -1),
            (0, -1),
            (1, -1),
            (-1, 0),
            (1, 0),
            (-1, 1),
            (0, 1),
            (1, 1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

/// Component tree of lower level sets. Node 0 is the root; every parent id
/// is smaller than its children's ids.
#[derive(Debug, Clone)]
pub struct MinTree {
    width: usize,
    height: usize,
    parent: Vec<u32>,
    level: Vec<u16>,
    pixel_node: Vec<u32>,
    /// Darkest pixel value inside each node's component.
    min_level: Vec<u16>,
    moments: Vec<Moments>,
}

/// Exact integer pixel moments of a component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Moments {
    pub area: u64,
    pub sum_x: i64,
    pub sum_y: i64,
    pub sum_xx: i64,
    pub sum_yy: i64,
    pub sum_xy: i64,
}

impl Moments {
    fn pixel(x: usize, y: usize) -> Self {
        let (x, y) = (x as i64, y as i64);
        Moments {
            area: 1,
            sum_x: x,
            sum_y: y,
            sum_xx: x * x,
            sum_yy: y * y,
            sum_xy: x * y,
        }
    }

    fn add(&mut self, o: &Moments) {
        self.area += o.area;
        self.sum_x += o.sum_x;
        self.sum_y += o.sum_y;
        self.sum_xx += o.sum_xx;
        self.sum_yy += o.sum_yy;
        self.sum_xy += o.sum_xy;
    }

    /// Largest eigenvalue of the coordinate covariance matrix.
    pub fn major_variance(&self) -> f64 {
        if self.area == 0 {
            return 0.0;
        }
        // n²·cov computed exactly in integers, then scaled once.
        let n = i128::from(self.area as i64);
        let sx = i128::from(self.sum_x);
        let sy = i128::from(self.sum_y);
        let a = (n * i128::from(self.sum_xx) - sx * sx) as f64;
        let c = (n * i128::from(self.sum_yy) - sy * sy) as f64;
        let b = (n * i128::from(self.sum_xy) - sx * sy) as f64;
        let half_diff = (a - c) / 2.0;
        let lambda = (a + c) / 2.0 + (half_diff * half_diff + b * b).sqrt();
        lambda / (self.area as f64 * self.area as f64)
    }

    /// `π · l_max² / |C|` with `l_max = 2·sqrt(λ₁)`, the semi-major axis of
    /// the equal-moments ellipse; a continuous disk scores exactly 1.
    /// Components under 3 pixels score 0.
    pub fn elongation(&self) -> f64 {
        if self.area < 3 {
            return 0.0;
        }
        std::f64::consts::PI * 4.0 * self.major_variance() / self.area as f64
    }
}

struct ZparForest {
    zpar: Vec<u32>,
}

impl ZparForest {
    fn find(&mut self, mut p: u32) -> u32 {
        let mut root = p;
        while self.zpar[root as usize] != root {
            root = self.zpar[root as usize];
        }
        while self.zpar[p as usize] != root {
            let next = self.zpar[p as usize];
            self.zpar[p as usize] = root;
            p = next;
        }
        root
    }
}

/// Pixel indices sorted by increasing intensity, ties by raster index.
fn sort_by_level(img: &GrayImage) -> Vec<u32> {
    let buckets = usize::from(img.max_value()) + 1;
    let mut counts = vec![0usize; buckets + 1];
    for &v in img.pixels() {
        counts[usize::from(v) + 1] += 1;
    }
    for i in 1..counts.len() {
        counts[i] += counts[i - 1];
    }
    let mut out = vec![0u32; img.pixels().len()];
    for (i, &v) in img.pixels().iter().enumerate() {
        let slot = &mut counts[usize::from(v)];
        out[*slot] = i as u32;
        *slot += 1;
    }
    out
}

/// Builds the min tree of `img`.
pub fn build_min_tree(img: &GrayImage, connectivity: Connectivity) -> MinTree {
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    let f = img.pixels();
    let order = sort_by_level(img);
    const UNSEEN: u32 = u32::MAX;

    let mut parent = vec![UNSEEN; n];
    let mut forest = ZparForest { zpar: vec![UNSEEN; n] };
    let offsets = connectivity.offsets();

    for &p in &order {
        let pu = p as usize;
        parent[pu] = p;
        forest.zpar[pu] = p;
        let (x, y) = ((pu % w) as isize, (pu / w) as isize);
        for &(dx, dy) in offsets {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let q = ny as usize * w + nx as usize;
            if forest.zpar[q] == UNSEEN {
                continue;
            }
            let r = forest.find(q as u32);
            if r != p {
                parent[r as usize] = p;
                forest.zpar[r as usize] = p;
            }
        }
    }

    // Canonicalize from the root down: point every pixel at the canonical
    // element of its own level.
    for &p in order.iter().rev() {
        let pu = p as usize;
        let q = parent[pu] as usize;
        if f[parent[q] as usize] == f[q] {
            parent[pu] = parent[q];
        }
    }

    let root_px = *order.last().expect("image has at least one pixel") as usize;
    let is_canonical = |p: usize| p == root_px || f[parent[p] as usize] != f[p];

    let mut pixel_node = vec![0u32; n];
    let mut node_parent = Vec::new();
    let mut level = Vec::new();
    for &p in order.iter().rev() {
        let pu = p as usize;
        if is_canonical(pu) {
            let id = level.len() as u32;
            level.push(f[pu]);
            node_parent.push(if pu == root_px {
                id
            } else {
                pixel_node[parent[pu] as usize]
            });
            pixel_node[pu] = id;
        } else {
            pixel_node[pu] = pixel_node[parent[pu] as usize];
        }
    }

    let nodes = level.len();
    let mut moments = vec![Moments::default(); nodes];
    let mut min_level = level.clone();
    for (p, &node) in pixel_node.iter().enumerate() {
        moments[node as usize].add(&Moments::pixel(p % w, p / w));
    }
    for id in (1..nodes).rev() {
        let par = node_parent[id] as usize;
        let m = moments[id];
        moments[par].add(&m);
        min_level[par] = min_level[par].min(min_level[id]);
    }

    MinTree {
        width: w,
        height: h,
        parent: node_parent,
        level,
        pixel_node,
        min_level,
        moments,
    }
}

impl MinTree {
    pub fn node_count(&self) -> usize {
        self.level.len()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn parent(&self, node: usize) -> usize {
        self.parent[node] as usize
    }

    pub fn level(&self, node: usize) -> u16 {
        self.level[node]
    }

    pub fn area(&self, node: usize) -> u64 {
        self.moments[node].area
    }

    pub fn moments(&self, node: usize) -> &Moments {
        &self.moments[node]
    }

    /// Node owning pixel `(x, y)`: the smallest component containing it.
    pub fn pixel_node(&self, x: usize, y: usize) -> usize {
        self.pixel_node[y * self.width + x] as usize
    }

    pub fn pixel_nodes(&self) -> &[u32] {
        &self.pixel_node
    }

    /// Intensity range between the node's level and its darkest pixel.
    pub fn depth(&self, node: usize) -> u16 {
        self.level[node] - self.min_level[node]
    }

    pub fn elongation(&self, node: usize) -> f64 {
        self.moments[node].elongation()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.leaf_flags()[node]
    }

    fn leaf_flags(&self) -> Vec<bool> {
        let mut leaf = vec![true; self.node_count()];
        for id in 1..self.node_count() {
            leaf[self.parent(id)] = false;
        }
        leaf
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_flags().iter().filter(|&&l| l).count()
    }

    /// True when `anc` is `node` or one of its ancestors.
    pub fn is_ancestor(&self, anc: usize, mut node: usize) -> bool {
        loop {
            if node == anc {
                return true;
            }
            if node == 0 || anc > node {
                return false;
            }
            node = self.parent(node);
        }
    }

    /// Full-image mask of the component of `node` (node plus descendants).
    pub fn component_mask(&self, node: usize) -> BinaryMask {
        let mut inside = vec![false; self.node_count()];
        inside[node] = true;
        for id in node + 1..self.node_count() {
            inside[id] = inside[self.parent(id)];
        }
        let bits = self.pixel_node.iter().map(|&n| inside[n as usize]).collect();
        BinaryMask::from_bits(self.width, self.height, bits).expect("dimensions match")
    }

    /// Debug dump: node table plus run-length encoded pixel→node map.
    pub fn dump(&self) -> TreeDump {
        let nodes = (0..self.node_count())
            .map(|id| DumpNode {
                id,
                parent: self.parent(id),
                level: self.level[id],
                area: self.area(id),
                attr: self.elongation(id),
            })
            .collect();
        let mut pixel_node: Vec<[u64; 2]> = Vec::new();
        for &n in &self.pixel_node {
            match pixel_node.last_mut() {
                Some(run) if run[0] == u64::from(n) => run[1] += 1,
                _ => pixel_node.push([u64::from(n), 1]),
            }
        }
        TreeDump {
            width: self.width,
            height: self.height,
            nodes,
            pixel_node,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DumpNode {
    pub id: usize,
    pub parent: usize,
    pub level: u16,
    pub area: u64,
    pub attr: f64,
}

/// JSON form of a tree: `pixel_node` holds `[node, run_length]` pairs in
/// raster order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeDump {
    pub width: usize,
    pub height: usize,
    pub nodes: Vec<DumpNode>,
    pub pixel_node: Vec<[u64; 2]>,
}

/// Bounds for tip component selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TipSegConfig {
    /// Exclusive lower bound on (regularized) elongation.
    pub t_min: f64,
    /// Inclusive upper bound on (regularized) elongation.
    pub t_max: f64,
    pub a_min: u64,
    pub a_max: u64,
    pub connectivity: Connectivity,
    /// Minimum intensity range between a component's level and its darkest
    /// pixel; rejects flat noise clusters.
    pub min_depth: u16,
}

impl Default for TipSegConfig {
    fn default() -> Self {
        TipSegConfig {
            t_min: 5.0,
            t_max: 150.0,
            a_min: 30,
            a_max: 3000,
            connectivity: Connectivity::Four,
            min_depth: 20,
        }
    }
}

impl TipSegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_min < self.t_max) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < t_min < t_max, got t_min={} t_max={}",
                self.t_min, self.t_max
            )));
        }
        if !(self.a_min > 0 && self.a_min < self.a_max) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < a_min < a_max, got a_min={} a_max={}",
                self.a_min, self.a_max
            )));
        }
        Ok(())
    }
}

/// A selected component, cropped to its bounding box.
#[derive(Debug, Clone)]
pub struct TipComponent {
    pub node: usize,
    /// Regularized elongation.
    pub score: f64,
    pub area: u64,
    pub level: u16,
    /// Top-left corner of `mask` in image coordinates.
    pub origin: (usize, usize),
    pub mask: BinaryMask,
}

impl TipComponent {
    /// The component mask placed back into a full-size frame.
    pub fn full_mask(&self, width: usize, height: usize) -> BinaryMask {
        let mut out = BinaryMask::new(width, height);
        for y in 0..self.mask.height() {
            for x in 0..self.mask.width() {
                if self.mask.get(x, y) {
                    out.set(x + self.origin.0, y + self.origin.1, true);
                }
            }
        }
        out
    }
}

/// Elongation smoothed over the one-ring of the tree: the max over the
/// node, its parent and its direct children.
pub fn regularized_elongation(tree: &MinTree) -> Vec<f64> {
    let attr: Vec<f64> = (0..tree.node_count()).map(|n| tree.elongation(n)).collect();
    let mut reg = attr.clone();
    for id in 1..tree.node_count() {
        let p = tree.parent(id);
        reg[id] = reg[id].max(attr[p]);
        reg[p] = reg[p].max(attr[id]);
    }
    reg
}

/// Picks tip-like components: regularized elongation in `(t_min, t_max]`,
/// area in `[a_min, a_max]` and depth at least `min_depth`; when qualifying
/// nodes nest, only the largest (outermost) survives. Sorted by score,
/// highest first.
pub fn select_tip_components(tree: &MinTree, cfg: &TipSegConfig) -> Vec<TipComponent> {
    let nodes = tree.node_count();
    let reg = regularized_elongation(tree);
    let qualifies: Vec<bool> = (0..nodes)
        .map(|n| {
            let area = tree.area(n);
            reg[n] > cfg.t_min
                && reg[n] <= cfg.t_max
                && area >= cfg.a_min
                && area <= cfg.a_max
                && tree.depth(n) >= cfg.min_depth
        })
        .collect();

    // Parents precede children, so one forward pass settles both the
    // "qualifying ancestor" flag and the owning selection of every node.
    const NONE: u32 = u32::MAX;
    let mut has_qualifying_ancestor = vec![false; nodes];
    let mut owner = vec![NONE; nodes];
    let mut kept = Vec::new();
    for n in 0..nodes {
        if n > 0 {
            let p = tree.parent(n);
            has_qualifying_ancestor[n] = has_qualifying_ancestor[p] || qualifies[p];
            owner[n] = owner[p];
        }
        if qualifies[n] && !has_qualifying_ancestor[n] {
            owner[n] = kept.len() as u32;
            kept.push(n);
        }
    }
    if kept.is_empty() {
        return Vec::new();
    }

    let (w, h) = (tree.width(), tree.height());
    let mut bbox = vec![(usize::MAX, usize::MAX, 0usize, 0usize); kept.len()];
    for (p, &node) in tree.pixel_nodes().iter().enumerate() {
        let k = owner[node as usize];
        if k != NONE {
            let b = &mut bbox[k as usize];
            let (x, y) = (p % w, p / w);
            *b = (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y));
        }
    }
    let mut masks: Vec<BinaryMask> = bbox
        .iter()
        .map(|b| BinaryMask::new(b.2 - b.0 + 1, b.3 - b.1 + 1))
        .collect();
    for y in 0..h {
        for x in 0..w {
            let k = owner[tree.pixel_node(x, y)];
            if k != NONE {
                let b = bbox[k as usize];
                masks[k as usize].set(x - b.0, y - b.1, true);
            }
        }
    }

    let mut out: Vec<TipComponent> = kept
        .iter()
        .zip(masks)
        .zip(&bbox)
        .map(|((&node, mask), b)| TipComponent {
            node,
            score: reg[node],
            area: tree.area(node),
            level: tree.level(node),
            origin: (b.0, b.1),
            mask,
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.node.cmp(&b.node)));
    out
}
