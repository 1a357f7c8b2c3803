//! Undirected vessel graph: bifurcation and endpoint nodes joined by
//! centerline polylines.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point2, Polyline};
use crate::skeleton::{BinaryMask, PixelGraph};

/// Edge polyline ends must lie this close to their node positions.
pub const NODE_TOLERANCE_PX: f64 = 0.5;
/// Edges between two bifurcations shorter than this are contracted.
pub const CONTRACT_EDGE_PX: f64 = 5.0;
/// Half window of the moving average applied to traced edge pixels.
pub const EDGE_SMOOTHING_RADIUS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Bifurcation,
    Endpoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub id: usize,
    pub pos: Point2,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEdge {
    pub id: usize,
    pub node_a: usize,
    pub node_b: usize,
    pub polyline: Polyline,
    pub length: f64,
}

impl GraphEdge {
    /// The node at the other end of the edge.
    pub fn other(&self, node: usize) -> usize {
        if node == self.node_a {
            self.node_b
        } else {
            self.node_a
        }
    }
}

/// A location on an edge, `offset` px along its polyline from `node_a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphPosition {
    pub edge: usize,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct VesselGraph {
    pub phase: usize,
    nodes: Vec<GraphNode>,
    edges: Vec<GraphEdge>,
    incident: Vec<Vec<usize>>,
}

impl VesselGraph {
    /// Validates ids, references and endpoint/node agreement.
    pub fn new(phase: usize, nodes: Vec<GraphNode>, edges: Vec<GraphEdge>) -> Result<Self> {
        let bad = |field: String, msg: String| Err(Error::validation("graph", field, msg));
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i {
                return bad(format!("nodes[{i}].id"), format!("expected {i}, got {}", n.id));
            }
            if !n.pos.is_finite() {
                return bad(format!("nodes[{i}]"), "non-finite position".into());
            }
        }
        let mut incident = vec![Vec::new(); nodes.len()];
        for (i, e) in edges.iter().enumerate() {
            if e.id != i {
                return bad(format!("edges[{i}].id"), format!("expected {i}, got {}", e.id));
            }
            for (name, n) in [("a", e.node_a), ("b", e.node_b)] {
                if n >= nodes.len() {
                    return bad(format!("edges[{i}].{name}"), format!("unknown node {n}"));
                }
            }
            let da = e.polyline.first().distance(nodes[e.node_a].pos);
            let db = e.polyline.last().distance(nodes[e.node_b].pos);
            if da > NODE_TOLERANCE_PX || db > NODE_TOLERANCE_PX {
                return bad(
                    format!("edges[{i}].points"),
                    "polyline ends do not meet their nodes".into(),
                );
            }
            incident[e.node_a].push(i);
            incident[e.node_b].push(i);
        }
        Ok(VesselGraph {
            phase,
            nodes,
            edges,
            incident,
        })
    }

    /// A graph with no nodes or edges.
    pub fn empty(phase: usize) -> Self {
        VesselGraph {
            phase,
            nodes: Vec::new(),
            edges: Vec::new(),
            incident: Vec::new(),
        }
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> Result<&GraphEdge> {
        self.edges
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("no edge with id {id}")))
    }

    /// Edge ids incident to `node`; a self-loop appears twice.
    pub fn incident(&self, node: usize) -> &[usize] {
        &self.incident[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.incident[node].len()
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    pub fn point_at(&self, pos: GraphPosition) -> Result<Point2> {
        Ok(self.edge(pos.edge)?.polyline.point_at(pos.offset))
    }

    /// Closest position on edge `edge` to `q`, with its distance.
    pub fn project_on_edge(&self, edge: usize, q: Point2) -> Result<(GraphPosition, f64)> {
        let (offset, d) = self.edge(edge)?.polyline.project(q);
        Ok((GraphPosition { edge, offset }, d))
    }

    fn check(&self, pos: GraphPosition) -> Result<&GraphEdge> {
        let e = self.edge(pos.edge)?;
        if !(pos.offset >= -1e-9 && pos.offset <= e.length + 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "offset {} outside edge {} of length {}",
                pos.offset, pos.edge, e.length
            )));
        }
        Ok(e)
    }

    /// Shortest along-graph distance between two positions, or `None` when
    /// they lie in different connected components.
    pub fn geodesic(&self, a: GraphPosition, b: GraphPosition) -> Result<Option<f64>> {
        // A fixed argument order makes the result exactly symmetric.
        let (a, b) = if (b.edge, b.offset) < (a.edge, a.offset) { (b, a) } else { (a, b) };
        let ea = self.check(a)?;
        let eb = self.check(b)?;
        let direct = if a.edge == b.edge {
            (a.offset - b.offset).abs()
        } else {
            f64::INFINITY
        };
        let dist = self.dijkstra(&[
            (ea.node_a, a.offset),
            (ea.node_b, ea.length - a.offset),
        ]);
        let via = (dist[eb.node_a] + b.offset).min(dist[eb.node_b] + eb.length - b.offset);
        let best = direct.min(via);
        Ok(best.is_finite().then_some(best))
    }

    /// Node distances from weighted sources.
    pub fn dijkstra(&self, sources: &[(usize, f64)]) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.nodes.len()];
        let mut heap = BinaryHeap::new();
        for &(n, d) in sources {
            if d < dist[n] {
                dist[n] = d;
                heap.push(Entry { dist: d, node: n });
            }
        }
        while let Some(Entry { dist: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            for &e in &self.incident[node] {
                let edge = &self.edges[e];
                let other = edge.other(node);
                let nd = d + edge.length;
                if nd < dist[other] {
                    dist[other] = nd;
                    heap.push(Entry { dist: nd, node: other });
                }
            }
        }
        dist
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.display().to_string(),
            source,
        })?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|source| Error::Json {
            path: path.display().to_string(),
            source,
        })
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRepr {
    id: usize,
    x: f64,
    y: f64,
    kind: NodeKind,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRepr {
    id: usize,
    a: usize,
    b: usize,
    points: Vec<Point2>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRepr {
    phase: usize,
    nodes: Vec<NodeRepr>,
    edges: Vec<EdgeRepr>,
}

impl From<VesselGraph> for GraphRepr {
    fn from(g: VesselGraph) -> Self {
        GraphRepr {
            phase: g.phase,
            nodes: g
                .nodes
                .into_iter()
                .map(|n| NodeRepr {
                    id: n.id,
                    x: n.pos.x,
                    y: n.pos.y,
                    kind: n.kind,
                })
                .collect(),
            edges: g
                .edges
                .into_iter()
                .map(|e| EdgeRepr {
                    id: e.id,
                    a: e.node_a,
                    b: e.node_b,
                    points: e.polyline.into_points(),
                })
                .collect(),
        }
    }
}

impl TryFrom<GraphRepr> for VesselGraph {
    type Error = Error;

    fn try_from(r: GraphRepr) -> Result<Self> {
        let nodes = r
            .nodes
            .into_iter()
            .map(|n| GraphNode {
                id: n.id,
                pos: Point2::new(n.x, n.y),
                kind: n.kind,
            })
            .collect();
        let edges = r
            .edges
            .into_iter()
            .enumerate()
            .map(|(i, e)| {
                let polyline = Polyline::new(e.points).map_err(|err| {
                    Error::validation("graph", format!("edges[{i}].points"), err.to_string())
                })?;
                Ok(GraphEdge {
                    id: e.id,
                    node_a: e.a,
                    node_b: e.b,
                    length: polyline.length(),
                    polyline,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        VesselGraph::new(r.phase, nodes, edges)
    }
}

/// Work-in-progress edge during graph construction.
#[derive(Clone)]
struct RawEdge {
    a: usize,
    b: usize,
    points: Vec<Point2>,
}

impl RawEdge {
    fn length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].distance(w[1])).sum()
    }
}

fn union_find_root(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Builds the vessel graph of a one-pixel-wide centerline mask.
pub fn build_graph(mask: &BinaryMask, phase: usize) -> VesselGraph {
    let pg = PixelGraph::new(mask);
    let n = pg.coords.len();
    let degree: Vec<usize> = pg.adj.iter().map(Vec::len).collect();

    // Cluster junction pixels; every endpoint pixel is its own node.
    let mut node_of = vec![usize::MAX; n];
    let mut node_pos: Vec<Point2> = Vec::new();
    let mut node_kind: Vec<NodeKind> = Vec::new();
    for start in 0..n {
        if node_of[start] != usize::MAX || (degree[start] != 1 && degree[start] < 3) {
            continue;
        }
        let id = node_pos.len();
        if degree[start] == 1 {
            node_of[start] = id;
            let (x, y) = pg.coords[start];
            node_pos.push(Point2::new(x as f64, y as f64));
            node_kind.push(NodeKind::Endpoint);
            continue;
        }
        let mut cluster = vec![start];
        node_of[start] = id;
        let mut i = 0;
        while i < cluster.len() {
            let p = cluster[i];
            i += 1;
            for &(q, _) in &pg.adj[p] {
                if degree[q] >= 3 && node_of[q] == usize::MAX {
                    node_of[q] = id;
                    cluster.push(q);
                }
            }
        }
        let (sx, sy) = cluster.iter().fold((0.0, 0.0), |(sx, sy), &p| {
            (sx + pg.coords[p].0 as f64, sy + pg.coords[p].1 as f64)
        });
        let k = cluster.len() as f64;
        node_pos.push(Point2::new(sx / k, sy / k));
        node_kind.push(NodeKind::Bifurcation);
    }

    let pixel = |i: usize| Point2::new(pg.coords[i].0 as f64, pg.coords[i].1 as f64);
    let mut visited = vec![false; n];
    let mut raw: Vec<RawEdge> = Vec::new();
    for u in 0..n {
        let nu = node_of[u];
        if nu == usize::MAX {
            continue;
        }
        for &(v, _) in &pg.adj[u] {
            let nv = node_of[v];
            if nv == nu {
                continue;
            }
            if nv != usize::MAX {
                if u < v {
                    raw.push(RawEdge {
                        a: nu,
                        b: nv,
                        points: vec![node_pos[nu], pixel(u), pixel(v), node_pos[nv]],
                    });
                }
                continue;
            }
            if visited[v] {
                continue;
            }
            let mut pts = vec![node_pos[nu], pixel(u)];
            let (mut prev, mut cur) = (u, v);
            let end = loop {
                visited[cur] = true;
                pts.push(pixel(cur));
                let next = pg.adj[cur].iter().map(|&(q, _)| q).find(|&q| q != prev);
                match next {
                    None => break None,
                    Some(q) if node_of[q] != usize::MAX => break Some(q),
                    Some(q) if visited[q] => break None,
                    Some(q) => (prev, cur) = (cur, q),
                }
            };
            if let Some(q) = end {
                pts.push(pixel(q));
                pts.push(node_pos[node_of[q]]);
                raw.push(RawEdge {
                    a: nu,
                    b: node_of[q],
                    points: pts,
                });
            }
        }
    }
    for e in &mut raw {
        e.points.dedup_by(|a, b| a.distance(*b) <= 1e-9);
        if let Ok(p) = Polyline::new(e.points.clone()) {
            e.points = p.smoothed(EDGE_SMOOTHING_RADIUS).into_points();
        }
    }

    // Contract short edges between two distinct bifurcations.
    let mut uf: Vec<usize> = (0..node_pos.len()).collect();
    let mut weight = vec![1.0f64; node_pos.len()];
    let mut alive = vec![true; raw.len()];
    loop {
        let mut changed = false;
        for i in 0..raw.len() {
            if !alive[i] {
                continue;
            }
            let (ra, rb) = (union_find_root(&mut uf, raw[i].a), union_find_root(&mut uf, raw[i].b));
            raw[i].a = ra;
            raw[i].b = rb;
            if ra == rb
                || node_kind[ra] != NodeKind::Bifurcation
                || node_kind[rb] != NodeKind::Bifurcation
                || raw[i].length() >= CONTRACT_EDGE_PX
            {
                continue;
            }
            let (wa, wb) = (weight[ra], weight[rb]);
            let merged = Point2::new(
                (node_pos[ra].x * wa + node_pos[rb].x * wb) / (wa + wb),
                (node_pos[ra].y * wa + node_pos[rb].y * wb) / (wa + wb),
            );
            uf[rb] = ra;
            weight[ra] = wa + wb;
            node_pos[ra] = merged;
            alive[i] = false;
            changed = true;
        }
        if !changed {
            break;
        }
    }
    let mut edges: Vec<RawEdge> = Vec::new();
    for (i, mut e) in raw.into_iter().enumerate() {
        if !alive[i] {
            continue;
        }
        e.a = union_find_root(&mut uf, e.a);
        e.b = union_find_root(&mut uf, e.b);
        let last = e.points.len() - 1;
        e.points[0] = node_pos[e.a];
        e.points[last] = node_pos[e.b];
        e.points.dedup_by(|a, b| a.distance(*b) <= 1e-9);
        if e.points.len() >= 2 {
            edges.push(e);
        }
    }

    // Splice out degree-2 nodes, drop isolated loops and nodes.
    let node_count = node_pos.len();
    loop {
        let mut deg = vec![0usize; node_count];
        for e in &edges {
            deg[e.a] += 1;
            deg[e.b] += 1;
        }
        let Some(v) = (0..node_count).find(|&v| {
            deg[v] == 2 && !edges.iter().any(|e| e.a == v && e.b == v)
        }) else {
            break;
        };
        let mut idx: Vec<usize> = (0..edges.len()).filter(|&i| edges[i].a == v || edges[i].b == v).collect();
        idx.sort_unstable();
        let second = edges.remove(idx[1]);
        let first = edges.remove(idx[0]);
        let orient = |e: RawEdge, start_at_v: bool| -> RawEdge {
            if (e.a == v) == start_at_v {
                e
            } else {
                let mut p = e.points;
                p.reverse();
                RawEdge { a: e.b, b: e.a, points: p }
            }
        };
        let f = orient(first, false);
        let s = orient(second, true);
        let mut points = f.points;
        points.extend_from_slice(&s.points[1..]);
        edges.insert(idx[0], RawEdge { a: f.a, b: s.b, points });
    }
    // A self-loop whose node has no other edge is an isolated loop.
    let mut deg = vec![0usize; node_count];
    for e in &edges {
        deg[e.a] += 1;
        deg[e.b] += 1;
    }
    edges.retain(|e| !(e.a == e.b && deg[e.a] == 2));

    let mut deg = vec![0usize; node_count];
    for e in &edges {
        deg[e.a] += 1;
        deg[e.b] += 1;
    }
    let mut remap = vec![usize::MAX; node_count];
    let mut nodes = Vec::new();
    for v in 0..node_count {
        if deg[v] == 0 || union_find_root(&mut uf, v) != v {
            continue;
        }
        remap[v] = nodes.len();
        let kind = if deg[v] == 1 {
            NodeKind::Endpoint
        } else {
            NodeKind::Bifurcation
        };
        nodes.push(GraphNode {
            id: nodes.len(),
            pos: node_pos[v],
            kind,
        });
    }
    let edges: Vec<GraphEdge> = edges
        .into_iter()
        .filter_map(|e| {
            let polyline = Polyline::new(e.points).ok()?;
            Some((e.a, e.b, polyline))
        })
        .enumerate()
        .map(|(id, (a, b, polyline))| GraphEdge {
            id,
            node_a: remap[a],
            node_b: remap[b],
            length: polyline.length(),
            polyline,
        })
        .collect();
    VesselGraph::new(phase, nodes, edges).unwrap_or_else(|_| VesselGraph::empty(phase))
}
