//! Point sets, Delaunay graphs, minimum spanning trees and the BFS-ordered
//! recovery paths used to unwrap phases on scattered points.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use robust::{Coord, Coord3D};

use crate::error::{Error, Result};

/// `N` points in `d` dimensions (`d` = 2 or 3), stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

/// Points closer than this are treated as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-12;

impl PointSet {
    /// Build from row-major coordinates. Rejects non-finite values, empty sets
    /// and duplicate points.
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Input(format!("dimension must be 2 or 3, got {dim}")));
        }
        if coords.is_empty() || coords.len() % dim != 0 {
            return Err(Error::Dimension(format!("{} coordinates for dimension {dim}", coords.len())));
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("non-finite coordinate".into()));
        }
        let ps = Self { dim, coords };
        if let Some((a, b)) = ps.find_duplicate() {
            return Err(Error::Input(format!("points {a} and {b} coincide")));
        }
        Ok(ps)
    }

    /// Build from a list of points of equal length.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map_or(0, |p| p.len());
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Dimension("points of mixed dimension".into()));
        }
        Self::new(dim, points.iter().flatten().copied().collect())
    }

    /// Uniform tensor grid `{0, 1/n, ..., (n-1)/n}^d`, last coordinate fastest.
    pub fn grid(dim: usize, n: usize) -> Result<Self> {
        let total = n.pow(dim as u32);
        let mut coords = Vec::with_capacity(total * dim);
        for idx in 0..total {
            let mut rem = idx;
            let mut p = vec![0.0; dim];
            for a in (0..dim).rev() {
                p[a] = (rem % n) as f64 / n as f64;
                rem /= n;
            }
            coords.extend(p);
        }
        Self::new(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Points restricted to `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let coords = idx.iter().flat_map(|&i| self.point(i).iter().copied()).collect();
        Self { dim: self.dim, coords }
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.point(i)
            .iter()
            .zip(self.point(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Per-axis bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for i in 0..self.len() {
            for (a, &x) in self.point(i).iter().enumerate() {
                lo[a] = lo[a].min(x);
                hi[a] = hi[a].max(x);
            }
        }
        (lo, hi)
    }

    fn find_duplicate(&self) -> Option<(usize, usize)> {
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.point(a)[0].total_cmp(&self.point(b)[0]));
        for (k, &a) in order.iter().enumerate() {
            for &b in &order[k + 1..] {
                if self.point(b)[0] - self.point(a)[0] > DUPLICATE_TOL {
                    break;
                }
                if self.distance(a, b) <= DUPLICATE_TOL {
                    return Some((a.min(b), a.max(b)));
                }
            }
        }
        None
    }
}

/// Interleave the bits of per-axis integer coordinates; axis 0 is the most
/// significant bit within each group.
pub fn morton_key(cells: &[u32], bits: u32) -> u64 {
    let mut key = 0u64;
    for b in (0..bits).rev() {
        for &c in cells {
            key = (key << 1) | u64::from((c >> b) & 1);
        }
    }
    key
}

/// Point indices sorted along a Z-order curve over the bounding box.
pub fn morton_order(points: &PointSet) -> Vec<usize> {
    let d = points.dim();
    let bits: u32 = if d == 2 { 31 } else { 21 };
    let (lo, hi) = points.bounding_box();
    let scale = ((1u64 << bits) - 1) as f64;
    let keys: Vec<u64> = (0..points.len())
        .map(|i| {
            let cells: Vec<u32> = points
                .point(i)
                .iter()
                .enumerate()
                .map(|(a, &x)| {
                    let w = hi[a] - lo[a];
                    if w > 0.0 {
                        (((x - lo[a]) / w) * scale) as u32
                    } else {
                        0
                    }
                })
                .collect();
            morton_key(&cells, bits)
        })
        .collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by_key(|&i| (keys[i], i));
    order
}

/// Undirected graph with Euclidean edge weights.
#[derive(Clone, Debug)]
pub struct WeightedGraph {
    pub vertex_count: usize,
    /// `(i, j, weight)` with `i < j`, sorted by `(i, j)`.
    pub edges: Vec<(usize, usize, f64)>,
}

impl WeightedGraph {
    /// Graph from an edge list; self-loops and duplicates are dropped.
    pub fn from_edges(vertex_count: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut e: Vec<(usize, usize, f64)> = edges
            .into_iter()
            .filter(|&(i, j, _)| i != j)
            .map(|(i, j, w)| (i.min(j), i.max(j), w))
            .collect();
        e.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        e.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
        Self { vertex_count, edges: e }
    }

    /// Complete graph over a point set.
    pub fn complete(points: &PointSet) -> Self {
        let n = points.len();
        let mut e = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                e.push((i, j, points.distance(i, j)));
            }
        }
        Self { vertex_count: n, edges: e }
    }

    fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.vertex_count];
        for &(i, j, w) in &self.edges {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        adj
    }

    /// Number of connected components.
    pub fn component_count(&self) -> usize {
        let adj = self.adjacency();
        let mut seen = vec![false; self.vertex_count];
        let mut count = 0;
        for s in 0..self.vertex_count {
            if seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            let mut stack = vec![s];
            while let Some(v) = stack.pop() {
                for &(w, _) in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        count
    }
}

/// Operation counts of a Delaunay construction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DelaunayStats {
    pub orientation_tests: u64,
    pub sphere_tests: u64,
    pub simplices_created: u64,
}

const NONE: usize = usize::MAX;

struct Triangulation {
    dim: usize,
    pts: Vec<[f64; 3]>,
    verts: Vec<[usize; 4]>,
    nbrs: Vec<[usize; 4]>,
    alive: Vec<bool>,
    free: Vec<usize>,
    stats: DelaunayStats,
    cavity_stamp: Vec<u32>,
    checked_stamp: Vec<u32>,
    epoch: u32,
    last: usize,
    walk_rot: usize,
}

impl Triangulation {
    fn k(&self) -> usize {
        self.dim + 1
    }

    fn orient(&mut self, v: &[usize]) -> f64 {
        self.stats.orientation_tests += 1;
        let p = &self.pts;
        if self.dim == 2 {
            let c = |i: usize| Coord { x: p[i][0], y: p[i][1] };
            robust::orient2d(c(v[0]), c(v[1]), c(v[2]))
        } else {
            let c = |i: usize| Coord3D { x: p[i][0], y: p[i][1], z: p[i][2] };
            robust::orient3d(c(v[0]), c(v[1]), c(v[2]), c(v[3]))
        }
    }

    fn in_conflict(&mut self, s: usize, q: usize) -> bool {
        self.stats.sphere_tests += 1;
        let v = self.verts[s];
        let p = &self.pts;
        if self.dim == 2 {
            let c = |i: usize| Coord { x: p[i][0], y: p[i][1] };
            robust::incircle(c(v[0]), c(v[1]), c(v[2]), c(q)) > 0.0
        } else {
            let c = |i: usize| Coord3D { x: p[i][0], y: p[i][1], z: p[i][2] };
            robust::insphere(c(v[0]), c(v[1]), c(v[2]), c(v[3]), c(q)) > 0.0
        }
    }

    fn new_simplex(&mut self, v: [usize; 4]) -> usize {
        self.stats.simplices_created += 1;
        if let Some(s) = self.free.pop() {
            self.verts[s] = v;
            self.nbrs[s] = [NONE; 4];
            self.alive[s] = true;
            s
        } else {
            self.verts.push(v);
            self.nbrs.push([NONE; 4]);
            self.alive.push(true);
            self.cavity_stamp.push(0);
            self.checked_stamp.push(0);
            self.verts.len() - 1
        }
    }

    fn locate(&mut self, q: usize) -> usize {
        let k = self.k();
        let mut s = self.last;
        if !self.alive[s] {
            s = self.alive.iter().position(|&a| a).expect("triangulation is nonempty");
        }
        loop {
            self.walk_rot = (self.walk_rot + 1) % k;
            let mut moved = false;
            for off in 0..k {
                let i = (off + self.walk_rot) % k;
                let nb = self.nbrs[s][i];
                if nb == NONE {
                    continue;
                }
                let mut v = self.verts[s];
                v[i] = q;
                if self.orient(&v[..k]) < 0.0 {
                    s = nb;
                    moved = true;
                    break;
                }
            }
            if !moved {
                return s;
            }
        }
    }

    fn insert(&mut self, q: usize) {
        let k = self.k();
        let start = self.locate(q);
        self.epoch += 1;
        let ep = self.epoch;
        let mut cavity = vec![start];
        self.cavity_stamp[start] = ep;
        self.checked_stamp[start] = ep;
        let mut boundary: Vec<(usize, usize, usize)> = Vec::new();
        let mut head = 0;
        while head < cavity.len() {
            let s = cavity[head];
            head += 1;
            for i in 0..k {
                let nb = self.nbrs[s][i];
                if nb == NONE {
                    boundary.push((s, i, nb));
                    continue;
                }
                if self.checked_stamp[nb] != ep {
                    self.checked_stamp[nb] = ep;
                    if self.in_conflict(nb, q) {
                        self.cavity_stamp[nb] = ep;
                        cavity.push(nb);
                    }
                }
                if self.cavity_stamp[nb] != ep {
                    boundary.push((s, i, nb));
                }
            }
        }

        let mut faces: HashMap<[usize; 2], (usize, usize)> = HashMap::new();
        let mut created = Vec::with_capacity(boundary.len());
        for &(s, i, nb) in &boundary {
            let mut v = self.verts[s];
            v[i] = q;
            created.push((v, i, nb, s));
        }
        for &c in &cavity {
            self.alive[c] = false;
        }
        let mut new_ids = Vec::with_capacity(created.len());
        for (v, i, nb, old) in created {
            let ns = self.new_simplex(v);
            self.nbrs[ns][i] = nb;
            if nb != NONE {
                for slot in 0..k {
                    if self.nbrs[nb][slot] == old {
                        self.nbrs[nb][slot] = ns;
                    }
                }
            }
            new_ids.push((ns, i));
        }
        for &(ns, i) in &new_ids {
            let v = self.verts[ns];
            for j in 0..k {
                if j == i {
                    continue;
                }
                let mut key = [NONE; 2];
                let mut t = 0;
                for (slot, &x) in v[..k].iter().enumerate() {
                    if slot != i && slot != j {
                        key[t] = x;
                        t += 1;
                    }
                }
                if key[0] > key[1] && key[1] != NONE {
                    key.swap(0, 1);
                }
                match faces.remove(&key) {
                    Some((other, oj)) => {
                        self.nbrs[ns][j] = other;
                        self.nbrs[other][oj] = ns;
                    }
                    None => {
                        faces.insert(key, (ns, j));
                    }
                }
            }
        }
        for &c in &cavity {
            self.free.push(c);
        }
        self.last = new_ids.last().map_or(self.last, |x| x.0);
    }
}

/// Delaunay tessellation of a point set.
#[derive(Clone, Debug)]
pub struct Delaunay {
    /// Simplices whose vertices are all input points (`d + 1` indices each).
    pub simplices: Vec<Vec<usize>>,
    /// Edge graph between input points, including edges of simplices that
    /// touch the auxiliary bounding vertices.
    pub graph: WeightedGraph,
    pub stats: DelaunayStats,
}

/// Bowyer-Watson construction with exact predicates and Z-order insertion.
pub fn delaunay_full(points: &PointSet) -> Delaunay {
    let n = points.len();
    let d = points.dim();
    let (lo, hi) = points.bounding_box();
    let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let extent = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max).max(1.0);
    let big = 1e10 * extent;

    let mut pts: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let p = points.point(i);
            [p[0], p[1], if d == 3 { p[2] } else { 0.0 }]
        })
        .collect();
    let sup: Vec<[f64; 3]> = if d == 2 {
        vec![
            [center[0] - 2.0 * big, center[1] - big, 0.0],
            [center[0] + 2.0 * big, center[1] - big, 0.0],
            [center[0], center[1] + 2.0 * big, 0.0],
        ]
    } else {
        [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
            .iter()
            .map(|s| [center[0] + 3.0 * big * s[0], center[1] + 3.0 * big * s[1], center[2] + 3.0 * big * s[2]])
            .collect()
    };
    pts.extend(sup);

    let mut tri = Triangulation {
        dim: d,
        pts,
        verts: Vec::new(),
        nbrs: Vec::new(),
        alive: Vec::new(),
        free: Vec::new(),
        stats: DelaunayStats::default(),
        cavity_stamp: Vec::new(),
        checked_stamp: Vec::new(),
        epoch: 0,
        last: 0,
        walk_rot: 0,
    };
    let mut root = [n, n + 1, n + 2, if d == 3 { n + 3 } else { NONE }];
    if tri.orient(&root[..d + 1]) < 0.0 {
        root.swap(0, 1);
    }
    tri.new_simplex(root);

    for q in morton_order(points) {
        tri.insert(q);
    }

    let mut simplices = Vec::new();
    let mut pairs = Vec::new();
    for s in 0..tri.verts.len() {
        if !tri.alive[s] {
            continue;
        }
        let v = &tri.verts[s][..d + 1];
        if v.iter().all(|&x| x < n) {
            let mut sv = v.to_vec();
            sv.sort_unstable();
            simplices.push(sv);
        }
        for a in 0..=d {
            for b in a + 1..=d {
                let (i, j) = (v[a], v[b]);
                if i < n && j < n {
                    pairs.push((i.min(j), i.max(j)));
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    simplices.sort();
    let edges = pairs.into_iter().map(|(i, j)| (i, j, points.distance(i, j)));
    Delaunay { simplices, graph: WeightedGraph::from_edges(n, edges), stats: tri.stats }
}

/// Delaunay edge graph with Euclidean weights.
pub fn delaunay(points: &PointSet) -> WeightedGraph {
    delaunay_full(points).graph
}

/// Rooted spanning tree.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanningTree {
    pub root: usize,
    /// Predecessor of each node; `None` only at the root.
    pub parent: Vec<Option<usize>>,
    pub depth: Vec<usize>,
}

impl SpanningTree {
    /// Tree from a parent array; validates acyclicity and connectivity.
    pub fn from_parents(root: usize, parent: Vec<Option<usize>>) -> Result<Self> {
        let n = parent.len();
        if root >= n || parent[root].is_some() {
            return Err(Error::Input("root must exist and have no parent".into()));
        }
        let mut children = vec![Vec::new(); n];
        for (c, p) in parent.iter().enumerate() {
            match p {
                Some(p) if *p < n && c != root => children[*p].push(c),
                None if c == root => {}
                _ => return Err(Error::Input(format!("invalid parent link at node {c}"))),
            }
        }
        let mut depth = vec![usize::MAX; n];
        depth[root] = 0;
        let mut queue = VecDeque::from([root]);
        let mut seen = 1;
        while let Some(v) = queue.pop_front() {
            for &c in &children[v] {
                depth[c] = depth[v] + 1;
                seen += 1;
                queue.push_back(c);
            }
        }
        if seen != n {
            return Err(Error::Input("parent links do not form a tree".into()));
        }
        Ok(Self { root, parent, depth })
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// Total edge weight measured with `weight(parent, child)`.
    pub fn total_weight(&self, mut weight: impl FnMut(usize, usize) -> f64) -> f64 {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(c, p)| p.map(|p| weight(p, c)))
            .sum()
    }

    /// Children of every node, ascending.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.len()];
        for (c, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                ch[*p].push(c);
            }
        }
        ch
    }
}

#[derive(PartialEq)]
struct HeapItem(f64, usize, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
            .then_with(|| other.2.cmp(&self.2))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Prim's algorithm from `root`. Ties are broken by the lower vertex index.
pub fn mst_from(g: &WeightedGraph, root: usize) -> Result<SpanningTree> {
    let n = g.vertex_count;
    if root >= n {
        return Err(Error::Input(format!("root {root} out of range {n}")));
    }
    let adj = g.adjacency();
    let mut parent = vec![None; n];
    let mut depth = vec![0usize; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    heap.push(HeapItem(0.0, root, root));
    let mut count = 0;
    while let Some(HeapItem(_, v, from)) = heap.pop() {
        if done[v] {
            continue;
        }
        done[v] = true;
        count += 1;
        if v != root {
            parent[v] = Some(from);
            depth[v] = depth[from] + 1;
        }
        for &(w, wt) in &adj[v] {
            if !done[w] {
                heap.push(HeapItem(wt, w, v));
            }
        }
    }
    if count != n {
        return Err(Error::Disconnected { components: g.component_count() });
    }
    Ok(SpanningTree { root, parent, depth })
}

/// Minimum spanning tree rooted at node 0.
pub fn mst(g: &WeightedGraph) -> Result<SpanningTree> {
    mst_from(g, 0)
}

/// `(N-1) x 2` predecessor/successor list in breadth-first order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecoveryPath {
    pub root: usize,
    /// `[predecessor, successor]` pairs.
    pub rows: Vec<[usize; 2]>,
}

impl RecoveryPath {
    /// Number of nodes covered (root plus successors).
    pub fn node_count(&self) -> usize {
        self.rows.len() + 1
    }

    /// Root followed by the successors in path order.
    pub fn nodes(&self) -> Vec<usize> {
        std::iter::once(self.root).chain(self.rows.iter().map(|r| r[1])).collect()
    }

    /// Check that every predecessor is visited before its successor and that
    /// no node is visited twice.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        if self.root >= n {
            return Err(Error::Input("root out of range".into()));
        }
        seen[self.root] = true;
        for (k, &[p, c]) in self.rows.iter().enumerate() {
            if p >= n || c >= n || !seen[p] || seen[c] {
                return Err(Error::Input(format!("path row {k} = [{p}, {c}] is invalid")));
            }
            seen[c] = true;
        }
        Ok(())
    }
}

/// Breadth-first traversal of a tree; children are visited in ascending order.
pub fn bfs_path(t: &SpanningTree) -> RecoveryPath {
    let children = t.children();
    let mut rows = Vec::with_capacity(t.len().saturating_sub(1));
    let mut queue = VecDeque::from([t.root]);
    while let Some(v) = queue.pop_front() {
        for &c in &children[v] {
            rows.push([v, c]);
            queue.push_back(c);
        }
    }
    RecoveryPath { root: t.root, rows }
}

/// Delaunay graph, minimum spanning tree from node 0, and BFS ordering.
pub fn recovery_path(points: &PointSet) -> Result<RecoveryPath> {
    if points.len() == 1 {
        return Ok(RecoveryPath { root: 0, rows: Vec::new() });
    }
    let g = delaunay(points);
    Ok(bfs_path(&mst(&g)?))
}

/// Cut the tree above every node of `d` and return one sub-path per cut,
/// rooted at the cut node. The original root always comes first, followed by
/// the other cut nodes in order of first appearance. Rows keep their relative
/// order.
pub fn split_path(p: &RecoveryPath, d: &[usize]) -> Result<Vec<RecoveryPath>> {
    let n = p.rows.iter().map(|r| r[0].max(r[1])).max().unwrap_or(0).max(p.root) + 1;
    let mut owner = vec![NONE; n];
    owner[p.root] = p.root;
    let mut roots: Vec<usize> = vec![p.root];
    for &x in d {
        if x >= n || (x != p.root && !p.rows.iter().any(|r| r[1] == x)) {
            return Err(Error::Input(format!("cut node {x} is not on the path")));
        }
        if !roots.contains(&x) {
            roots.push(x);
        }
    }
    let mut is_cut = vec![false; n];
    for &r in &roots {
        is_cut[r] = true;
    }
    let slot: HashMap<usize, usize> = roots.iter().enumerate().map(|(k, &r)| (r, k)).collect();
    let mut out: Vec<RecoveryPath> = roots.iter().map(|&r| RecoveryPath { root: r, rows: Vec::new() }).collect();
    for &[a, c] in &p.rows {
        if is_cut[c] {
            owner[c] = c;
        } else {
            owner[c] = owner[a];
            out[slot[&owner[c]]].rows.push([a, c]);
        }
    }
    Ok(out)
}
