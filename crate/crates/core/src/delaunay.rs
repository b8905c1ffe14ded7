//! Planar Delaunay triangulation of pixel samples.
//!
//! Incremental Bowyer–Watson insertion over a triangle mesh with explicit
//! adjacency. The unbounded outside of the hull is represented by "ghost"
//! triangles sharing a vertex at infinity, which plays the role of the
//! classic super-triangle but without ever producing a triangle that later
//! has to be removed: the output always covers exactly the convex hull.
//!
//! Predicates run on coordinates normalized to the unit bounding box and use
//! a relative tolerance ([`PREDICATE_EPS`]) against the magnitude of the
//! terms entering each determinant. Inputs are pixel grids with mild jitter;
//! there is no exact-arithmetic fallback.

use thiserror::Error;

use crate::geometry::PixelPoint;

/// Relative tolerance of the orientation and in-circle predicates.
pub const PREDICATE_EPS: f64 = 1e-9;
/// Input points closer than this (in pixels) are merged.
pub const MERGE_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DelaunayError {
    #[error("insufficient points: {0} distinct, need at least 3")]
    InsufficientPoints(usize),
    #[error("degenerate input: all points are collinear")]
    DegenerateInput,
    #[error("degenerate triangle: vertices are collinear")]
    DegenerateTriangle,
    #[error("non-finite input point at index {0}")]
    NonFinite(usize),
}

/// A triangulated set of pixel points. Triangles are counter-clockwise in
/// the usual math orientation of `(u, v)` (positive signed area).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Triangulation2D {
    pub vertices: Vec<PixelPoint>,
    pub triangles: Vec<[usize; 3]>,
    /// For each vertex, the index of the input point it came from.
    pub source_indices: Vec<usize>,
}

impl Triangulation2D {
    pub fn triangle_points(&self, t: usize) -> [PixelPoint; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Number of distinct undirected edges.
    pub fn edge_count(&self) -> usize {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| {
                [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])]
                    .map(|(a, b)| (a.min(b), a.max(b)))
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle_points(t);
                0.5 * cross(&a, &b, &c)
            })
            .sum()
    }
}

/// Result of a point-location query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Triangle(usize),
    OutsideHull,
}

#[inline]
fn cross(a: &PixelPoint, b: &PixelPoint, c: &PixelPoint) -> f64 {
    (b.u - a.u) * (c.v - a.v) - (b.v - a.v) * (c.u - a.u)
}

/// Signed orientation with relative tolerance: `1` left turn, `-1` right
/// turn, `0` collinear within tolerance.
fn orient_sign(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> i8 {
    let l = (b[0] - a[0]) * (c[1] - a[1]);
    let r = (b[1] - a[1]) * (c[0] - a[0]);
    let det = l - r;
    let bound = PREDICATE_EPS * (l.abs() + r.abs());
    if det > bound {
        1
    } else if det < -bound {
        -1
    } else {
        0
    }
}

/// In-circle determinant for CCW `a, b, c` and its permanent (sum of the
/// absolute term magnitudes) used to scale the tolerance.
fn incircle_terms(a: [f64; 2], b: [f64; 2], c: [f64; 2], p: [f64; 2]) -> (f64, f64) {
    let (adx, ady) = (a[0] - p[0], a[1] - p[1]);
    let (bdx, bdy) = (b[0] - p[0], b[1] - p[1]);
    let (cdx, cdy) = (c[0] - p[0], c[1] - p[1]);
    let alift = adx * adx + ady * ady;
    let blift = bdx * bdx + bdy * bdy;
    let clift = cdx * cdx + cdy * cdy;
    let (bc1, bc2) = (bdx * cdy, cdx * bdy);
    let (ca1, ca2) = (cdx * ady, adx * cdy);
    let (ab1, ab2) = (adx * bdy, bdx * ady);
    let det = alift * (bc1 - bc2) + blift * (ca1 - ca2) + clift * (ab1 - ab2);
    let perm = alift * (bc1.abs() + bc2.abs())
        + blift * (ca1.abs() + ca2.abs())
        + clift * (ab1.abs() + ab2.abs());
    (det, perm)
}

fn strictly_in_circle(a: [f64; 2], b: [f64; 2], c: [f64; 2], p: [f64; 2]) -> bool {
    let (det, perm) = incircle_terms(a, b, c, p);
    det > PREDICATE_EPS * perm
}

/// Whether `p` lies strictly inside the circumcircle of the CCW triangle
/// `a, b, c`. Points on the circle (within tolerance) are outside.
pub fn in_circumcircle(
    a: &PixelPoint,
    b: &PixelPoint,
    c: &PixelPoint,
    p: &PixelPoint,
) -> Result<bool, DelaunayError> {
    // translate to `a` and scale by the triangle extent so that the
    // tolerance is independent of where the triangle sits in the image
    let scale = [b, c]
        .iter()
        .map(|q| (q.u - a.u).abs().max((q.v - a.v).abs()))
        .fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(DelaunayError::DegenerateTriangle);
    }
    let n = |q: &PixelPoint| [(q.u - a.u) / scale, (q.v - a.v) / scale];
    let (na, nb, nc, np) = (n(a), n(b), n(c), n(p));
    match orient_sign(na, nb, nc) {
        0 => Err(DelaunayError::DegenerateTriangle),
        1 => Ok(strictly_in_circle(na, nb, nc, np)),
        _ => Ok(strictly_in_circle(na, nc, nb, np)),
    }
}

/// Barycentric containment with tolerance `PREDICATE_EPS`.
pub fn triangle_contains(a: &PixelPoint, b: &PixelPoint, c: &PixelPoint, p: &PixelPoint) -> bool {
    let area = cross(a, b, c);
    if area == 0.0 || !area.is_finite() {
        return false;
    }
    let l0 = cross(b, c, p) / area;
    let l1 = cross(c, a, p) / area;
    let l2 = cross(a, b, p) / area;
    l0 >= -PREDICATE_EPS && l1 >= -PREDICATE_EPS && l2 >= -PREDICATE_EPS
}

/// Brute-force point location: the lowest-index triangle containing `p`.
pub fn locate(tri: &Triangulation2D, p: &PixelPoint) -> Location {
    for (i, t) in tri.triangles.iter().enumerate() {
        if triangle_contains(&tri.vertices[t[0]], &tri.vertices[t[1]], &tri.vertices[t[2]], p) {
            return Location::Triangle(i);
        }
    }
    Location::OutsideHull
}

/// Bucket-grid accelerated point location over an arbitrary triangle soup
/// (triangles may overlap). Answers agree with the brute-force scan: the
/// lowest-index containing triangle wins.
#[derive(Debug, Clone)]
pub struct PointLocator<'a> {
    vertices: &'a [PixelPoint],
    triangles: &'a [[usize; 3]],
    origin: [f64; 2],
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<u32>>,
}

impl<'a> PointLocator<'a> {
    pub fn new(vertices: &'a [PixelPoint], triangles: &'a [[usize; 3]]) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for t in triangles {
            for &i in t {
                let p = vertices[i];
                lo = [lo[0].min(p.u), lo[1].min(p.v)];
                hi = [hi[0].max(p.u), hi[1].max(p.v)];
            }
        }
        if triangles.is_empty() {
            return Self {
                vertices,
                triangles,
                origin: [0.0; 2],
                cell: 1.0,
                cols: 0,
                rows: 0,
                buckets: Vec::new(),
            };
        }
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
        let target = (triangles.len() as f64).sqrt().ceil().clamp(1.0, 256.0);
        let cell = extent / target;
        let cols = ((hi[0] - lo[0]) / cell).floor() as usize + 1;
        let rows = ((hi[1] - lo[1]) / cell).floor() as usize + 1;
        let mut buckets = vec![Vec::new(); cols * rows];
        for (ti, t) in triangles.iter().enumerate() {
            let ps = t.map(|i| vertices[i]);
            let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            for p in &ps {
                x0 = x0.min(p.u);
                y0 = y0.min(p.v);
                x1 = x1.max(p.u);
                y1 = y1.max(p.v);
            }
            let cx0 = ((x0 - lo[0]) / cell).floor().max(0.0) as usize;
            let cy0 = ((y0 - lo[1]) / cell).floor().max(0.0) as usize;
            let cx1 = (((x1 - lo[0]) / cell).floor() as usize).min(cols - 1);
            let cy1 = (((y1 - lo[1]) / cell).floor() as usize).min(rows - 1);
            for cy in cy0..=cy1 {
                for cx in cx0..=cx1 {
                    buckets[cy * cols + cx].push(ti as u32);
                }
            }
        }
        Self {
            vertices,
            triangles,
            origin: lo,
            cell,
            cols,
            rows,
            buckets,
        }
    }

    pub fn locate(&self, p: &PixelPoint) -> Location {
        if self.buckets.is_empty() || !p.is_finite() {
            return Location::OutsideHull;
        }
        // a point sitting on a cell border may belong to either side
        let fx = (p.u - self.origin[0]) / self.cell;
        let fy = (p.v - self.origin[1]) / self.cell;
        let slack = 1e-6;
        let cx_lo = (fx - slack).floor();
        let cx_hi = (fx + slack).floor();
        let cy_lo = (fy - slack).floor();
        let cy_hi = (fy + slack).floor();
        let mut best: Option<u32> = None;
        for cy in cy_lo as i64..=cy_hi as i64 {
            for cx in cx_lo as i64..=cx_hi as i64 {
                if cx < 0 || cy < 0 || cx as usize >= self.cols || cy as usize >= self.rows {
                    continue;
                }
                for &ti in &self.buckets[cy as usize * self.cols + cx as usize] {
                    if best.is_some_and(|b| b <= ti) {
                        break;
                    }
                    let t = self.triangles[ti as usize];
                    if triangle_contains(
                        &self.vertices[t[0]],
                        &self.vertices[t[1]],
                        &self.vertices[t[2]],
                        p,
                    ) {
                        best = Some(ti);
                        break;
                    }
                }
            }
        }
        match best {
            Some(t) => Location::Triangle(t as usize),
            None => Location::OutsideHull,
        }
    }
}

const GHOST: u32 = u32::MAX;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Tri {
    /// Vertex ids; a ghost triangle stores `GHOST` in slot 2 and its hull
    /// edge `v[0] -> v[1]` has the outside on its left.
    v: [u32; 3],
    /// `n[i]` is the neighbour across the edge opposite `v[i]`.
    n: [u32; 3],
    alive: bool,
}

impl Tri {
    fn is_ghost(&self) -> bool {
        self.v[2] == GHOST
    }

    /// Index `i` such that the edge opposite `v[i]` joins `a` and `b`.
    fn edge_index(&self, a: u32, b: u32) -> usize {
        (0..3)
            .find(|&i| {
                let (x, y) = (self.v[(i + 1) % 3], self.v[(i + 2) % 3]);
                (x == a && y == b) || (x == b && y == a)
            })
            .expect("edge belongs to triangle")
    }
}

struct Mesher {
    pts: Vec<[f64; 2]>,
    tris: Vec<Tri>,
    free: Vec<u32>,
    last: u32,
    stamp: Vec<u32>,
    epoch: u32,
}

impl Mesher {
    fn point(&self, v: u32) -> [f64; 2] {
        self.pts[v as usize]
    }

    fn ghost_contains(&self, t: &Tri, p: [f64; 2]) -> bool {
        let (a, b) = (self.point(t.v[0]), self.point(t.v[1]));
        match orient_sign(a, b, p) {
            1 => true,
            -1 => false,
            _ => {
                // open hull segment
                let d = [b[0] - a[0], b[1] - a[1]];
                let s = (p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1];
                s > 0.0 && s < d[0] * d[0] + d[1] * d[1]
            }
        }
    }

    fn circle_contains(&self, t: &Tri, p: [f64; 2]) -> bool {
        if t.is_ghost() {
            self.ghost_contains(t, p)
        } else {
            strictly_in_circle(self.point(t.v[0]), self.point(t.v[1]), self.point(t.v[2]), p)
        }
    }

    fn alloc(&mut self, t: Tri) -> u32 {
        if let Some(i) = self.free.pop() {
            self.tris[i as usize] = t;
            i
        } else {
            self.tris.push(t);
            self.stamp.push(0);
            (self.tris.len() - 1) as u32
        }
    }

    fn init(pts: Vec<[f64; 2]>, a: u32, b: u32, c: u32) -> Self {
        let mut m = Mesher {
            pts,
            tris: Vec::new(),
            free: Vec::new(),
            last: 0,
            stamp: Vec::new(),
            epoch: 0,
        };
        let dead = Tri {
            v: [0; 3],
            n: [NONE; 3],
            alive: true,
        };
        let real = m.alloc(Tri { v: [a, b, c], ..dead });
        let g_ab = m.alloc(Tri { v: [b, a, GHOST], ..dead });
        let g_bc = m.alloc(Tri { v: [c, b, GHOST], ..dead });
        let g_ca = m.alloc(Tri { v: [a, c, GHOST], ..dead });
        let all = [real, g_ab, g_bc, g_ca];
        for &t in &all {
            for i in 0..3 {
                let tv = m.tris[t as usize].v;
                let (x, y) = (tv[(i + 1) % 3], tv[(i + 2) % 3]);
                let other = all
                    .iter()
                    .copied()
                    .find(|&o| {
                        o != t && {
                            let ov = m.tris[o as usize].v;
                            ov.contains(&x) && ov.contains(&y)
                        }
                    })
                    .expect("closed initial mesh");
                m.tris[t as usize].n[i] = other;
            }
        }
        m.last = real;
        m
    }

    /// Visibility walk to a triangle whose closure contains `p`, or to a
    /// ghost triangle whose half-plane contains it.
    fn walk(&self, p: [f64; 2]) -> u32 {
        let mut t = self.last;
        let limit = 4 * self.tris.len() + 16;
        let mut rot = 0usize;
        'outer: for _ in 0..limit {
            let tri = &self.tris[t as usize];
            if tri.is_ghost() {
                if self.ghost_contains(tri, p) {
                    return t;
                }
                t = tri.n[2];
                continue;
            }
            rot = (rot + 1) % 3;
            for k in 0..3 {
                let i = (k + rot) % 3;
                let a = self.point(tri.v[(i + 1) % 3]);
                let b = self.point(tri.v[(i + 2) % 3]);
                let det = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                if det < 0.0 {
                    t = tri.n[i];
                    continue 'outer;
                }
            }
            return t;
        }
        self.scan(p)
    }

    fn scan(&self, p: [f64; 2]) -> u32 {
        let mut ghost_hit = None;
        for (i, tri) in self.tris.iter().enumerate() {
            if !tri.alive {
                continue;
            }
            if tri.is_ghost() {
                if ghost_hit.is_none() && self.ghost_contains(tri, p) {
                    ghost_hit = Some(i as u32);
                }
                continue;
            }
            let [a, b, c] = tri.v.map(|v| self.point(v));
            if orient_sign(a, b, p) >= 0 && orient_sign(b, c, p) >= 0 && orient_sign(c, a, p) >= 0
            {
                return i as u32;
            }
        }
        ghost_hit.expect("point is either inside a triangle or beyond a hull edge")
    }

    fn insert(&mut self, pv: u32) {
        let p = self.point(pv);
        let start = self.walk(p);

        self.epoch += 1;
        let epoch = self.epoch;
        let mut cavity = vec![start];
        self.stamp[start as usize] = epoch;
        let mut stack = vec![start];
        while let Some(t) = stack.pop() {
            for i in 0..3 {
                let nb = self.tris[t as usize].n[i];
                if self.stamp[nb as usize] == epoch {
                    continue;
                }
                if self.circle_contains(&self.tris[nb as usize], p) {
                    self.stamp[nb as usize] = epoch;
                    cavity.push(nb);
                    stack.push(nb);
                }
            }
        }

        // boundary edges (a -> b, outer neighbour); grow the cavity until
        // every real boundary edge sees `p` strictly on its left
        let boundary = loop {
            let mut boundary = Vec::new();
            let mut grow = None;
            for &t in &cavity {
                let tri = self.tris[t as usize];
                for i in 0..3 {
                    let nb = tri.n[i];
                    if self.stamp[nb as usize] == epoch {
                        continue;
                    }
                    let a = tri.v[(i + 1) % 3];
                    let b = tri.v[(i + 2) % 3];
                    if a != GHOST && b != GHOST {
                        let (pa, pb) = (self.point(a), self.point(b));
                        let det = (pb[0] - pa[0]) * (p[1] - pa[1]) - (pb[1] - pa[1]) * (p[0] - pa[0]);
                        if det <= 0.0 {
                            grow = Some(nb);
                            break;
                        }
                    }
                    boundary.push((a, b, nb));
                }
                if grow.is_some() {
                    break;
                }
            }
            match grow {
                Some(nb) => {
                    self.stamp[nb as usize] = epoch;
                    cavity.push(nb);
                }
                None => break boundary,
            }
        };

        for &t in &cavity {
            self.tris[t as usize].alive = false;
            self.free.push(t);
        }

        let mut created: Vec<(u32, u32, u32)> = Vec::with_capacity(boundary.len());
        for &(a, b, outer) in &boundary {
            let mut v = [a, b, pv];
            let mut n = [NONE, NONE, outer];
            // ghost vertex always goes last
            while v[2] != GHOST && (v[0] == GHOST || v[1] == GHOST) {
                v.rotate_left(1);
                n.rotate_left(1);
            }
            let id = self.alloc(Tri { v, n, alive: true });
            // the freshly allocated slot may share a stamp with the cavity
            self.stamp[id as usize] = 0;
            let outer_tri = &mut self.tris[outer as usize];
            let j = outer_tri.edge_index(a, b);
            outer_tri.n[j] = id;
            created.push((a, b, id));
        }
        // link the fan: edge (b, p) of the triangle starting at a is shared
        // with the triangle whose boundary edge starts at b
        for &(a, b, id) in &created {
            let next = created
                .iter()
                .find(|&&(a2, _, _)| a2 == b)
                .map(|&(_, _, t)| t)
                .expect("closed cavity boundary");
            let prev = created
                .iter()
                .find(|&&(_, b2, _)| b2 == a)
                .map(|&(_, _, t)| t)
                .expect("closed cavity boundary");
            let tri = &mut self.tris[id as usize];
            let i_bp = tri.edge_index(b, pv);
            let i_pa = tri.edge_index(pv, a);
            tri.n[i_bp] = next;
            tri.n[i_pa] = prev;
        }
        self.last = created
            .iter()
            .map(|c| c.2)
            .find(|&t| !self.tris[t as usize].is_ghost())
            .unwrap_or(created[0].2);
    }
}

/// Hilbert index of a point quantized on a 2^16 grid; gives the insertion
/// order spatial locality so that walks stay short.
fn hilbert_index(x: u32, y: u32) -> u64 {
    let (mut x, mut y) = (x as u64, y as u64);
    let n: u64 = 1 << 16;
    let mut d = 0u64;
    let mut s = n / 2;
    while s > 0 {
        let rx = u64::from(x & s > 0);
        let ry = u64::from(y & s > 0);
        d += s * s * ((3 * rx) ^ ry);
        if ry == 0 {
            if rx == 1 {
                x = n - 1 - x;
                y = n - 1 - y;
            }
            std::mem::swap(&mut x, &mut y);
        }
        s /= 2;
    }
    d
}

/// Delaunay triangulation of `points`. Points closer than [`MERGE_EPS`]
/// are merged (first occurrence wins); the result covers their convex hull.
pub fn triangulate(points: &[PixelPoint]) -> Result<Triangulation2D, DelaunayError> {
    if let Some(i) = points.iter().position(|p| !p.is_finite()) {
        return Err(DelaunayError::NonFinite(i));
    }

    // merge duplicates on a hash grid of cell size MERGE_EPS
    let mut cells: std::collections::HashMap<(i64, i64), Vec<usize>> =
        std::collections::HashMap::with_capacity(points.len());
    let mut vertices: Vec<PixelPoint> = Vec::with_capacity(points.len());
    let mut source_indices = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let key = ((p.u / MERGE_EPS).floor() as i64, (p.v / MERGE_EPS).floor() as i64);
        let mut dup = false;
        'search: for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(list) = cells.get(&(key.0 + dx, key.1 + dy)) {
                    if list.iter().any(|&j| vertices[j].distance(p) <= MERGE_EPS) {
                        dup = true;
                        break 'search;
                    }
                }
            }
        }
        if !dup {
            cells.entry(key).or_default().push(vertices.len());
            vertices.push(*p);
            source_indices.push(i);
        }
    }
    let n = vertices.len();
    if n < 3 {
        return Err(DelaunayError::InsufficientPoints(n));
    }

    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &vertices {
        lo = [lo[0].min(p.u), lo[1].min(p.v)];
        hi = [hi[0].max(p.u), hi[1].max(p.v)];
    }
    let scale = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let pts: Vec<[f64; 2]> = vertices
        .iter()
        .map(|p| [(p.u - lo[0]) / scale, (p.v - lo[1]) / scale])
        .collect();

    // seed triangle: first point, the point farthest from it, and the point
    // farthest from that line
    let a = 0usize;
    let d2 = |i: usize, j: usize| {
        let (dx, dy) = (pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]);
        dx * dx + dy * dy
    };
    let b = (1..n)
        .max_by(|&i, &j| d2(a, i).total_cmp(&d2(a, j)).then(j.cmp(&i)))
        .expect("n >= 3");
    let area = |c: usize| {
        ((pts[b][0] - pts[a][0]) * (pts[c][1] - pts[a][1])
            - (pts[b][1] - pts[a][1]) * (pts[c][0] - pts[a][0]))
            .abs()
    };
    let c = (1..n)
        .filter(|&i| i != b)
        .max_by(|&i, &j| area(i).total_cmp(&area(j)).then(j.cmp(&i)))
        .expect("n >= 3");
    let (a, b, c) = match orient_sign(pts[a], pts[b], pts[c]) {
        0 => return Err(DelaunayError::DegenerateInput),
        1 => (a, b, c),
        _ => (a, c, b),
    };

    let mut order: Vec<usize> = (0..n).filter(|&i| i != a && i != b && i != c).collect();
    let q = |x: f64| (x * 65535.0).round().clamp(0.0, 65535.0) as u32;
    order.sort_by_key(|&i| (hilbert_index(q(pts[i][0]), q(pts[i][1])), i));

    let mut mesher = Mesher::init(pts, a as u32, b as u32, c as u32);
    for i in order {
        mesher.insert(i as u32);
    }

    let mut triangles: Vec<[usize; 3]> = mesher
        .tris
        .iter()
        .filter(|t| t.alive && !t.is_ghost())
        .map(|t| {
            let mut v = t.v.map(|x| x as usize);
            // canonical rotation: smallest index first, orientation kept
            let k = (0..3).min_by_key(|&k| v[k]).unwrap();
            v.rotate_left(k);
            v
        })
        .collect();
    triangles.sort_unstable();

    Ok(Triangulation2D {
        vertices,
        triangles,
        source_indices,
    })
}
