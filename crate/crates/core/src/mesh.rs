//! Structured triangulations of two adjacent rectangles: a free-flow
//! subdomain and a porous subdomain sharing one full side (the interface).
//!
//! Each rectangle is cut into an `nx × ny` grid and every cell is split
//! along its lower-left to upper-right diagonal. Nodes on the interface are
//! shared, so the mesh is conforming across it.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Axis-aligned rectangle `[x_min, x_max] × [y_min, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self { x_min, x_max, y_min, y_max }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point, tol: f64) -> bool {
        p[0] >= self.x_min - tol && p[0] <= self.x_max + tol && p[1] >= self.y_min - tol && p[1] <= self.y_max + tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subdomain {
    Fluid,
    Porous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeTag {
    /// Outer boundary of the free-flow region.
    GammaF,
    /// Outer boundary of the porous region.
    GammaP,
    Interface,
}

/// Which side of the fluid rectangle touches the porous rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterfaceSide {
    Bottom,
    Top,
    Left,
    Right,
}

impl InterfaceSide {
    /// Unit normal pointing out of the fluid region, into the porous one.
    pub fn fluid_normal(self) -> Point {
        match self {
            InterfaceSide::Bottom => [0.0, -1.0],
            InterfaceSide::Top => [0.0, 1.0],
            InterfaceSide::Left => [-1.0, 0.0],
            InterfaceSide::Right => [1.0, 0.0],
        }
    }

    pub fn is_horizontal(self) -> bool {
        matches!(self, InterfaceSide::Bottom | InterfaceSide::Top)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geometry {
    pub fluid: Rect,
    pub porous: Rect,
    pub interface: InterfaceSide,
}

impl Geometry {
    /// Validates the two rectangles and works out which side they share.
    pub fn new(fluid: Rect, porous: Rect) -> Result<Self> {
        for (name, r) in [("fluid", &fluid), ("porous", &porous)] {
            if !(r.width() > 0.0 && r.height() > 0.0) {
                return Err(Error::Geometry(format!("{name} rectangle has non-positive area")));
            }
        }
        let tol = 1e-12 * (fluid.width() + fluid.height() + porous.width() + porous.height());
        let same = |a: f64, b: f64| (a - b).abs() <= tol;
        let side = if same(fluid.x_min, porous.x_min) && same(fluid.x_max, porous.x_max) {
            if same(fluid.y_min, porous.y_max) {
                Some(InterfaceSide::Bottom)
            } else if same(fluid.y_max, porous.y_min) {
                Some(InterfaceSide::Top)
            } else {
                None
            }
        } else if same(fluid.y_min, porous.y_min) && same(fluid.y_max, porous.y_max) {
            if same(fluid.x_min, porous.x_max) {
                Some(InterfaceSide::Left)
            } else if same(fluid.x_max, porous.x_min) {
                Some(InterfaceSide::Right)
            } else {
                None
            }
        } else {
            None
        };
        let interface =
            side.ok_or_else(|| Error::Geometry("rectangles must share exactly one full side".to_string()))?;
        Ok(Self { fluid, porous, interface })
    }

    /// Free flow on `[0,1]×[0,1]` above porous medium on `[0,1]×[-1,0]`.
    pub fn unit_stack() -> Self {
        Self::new(Rect::new(0.0, 1.0, 0.0, 1.0), Rect::new(0.0, 1.0, -1.0, 0.0)).expect("valid geometry")
    }

    pub fn interface_length(&self) -> f64 {
        if self.interface.is_horizontal() {
            self.fluid.width()
        } else {
            self.fluid.height()
        }
    }

    pub fn bounding_box(&self) -> Rect {
        Rect::new(
            self.fluid.x_min.min(self.porous.x_min),
            self.fluid.x_max.max(self.porous.x_max),
            self.fluid.y_min.min(self.porous.y_min),
            self.fluid.y_max.max(self.porous.y_max),
        )
    }

    pub fn total_area(&self) -> f64 {
        self.fluid.area() + self.porous.area()
    }
}

/// An edge of the triangulation with its (sorted) endpoint nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge(pub usize, pub usize);

impl Edge {
    pub fn new(a: usize, b: usize) -> Self {
        if a < b {
            Edge(a, b)
        } else {
            Edge(b, a)
        }
    }
}

/// A tagged edge together with its orientation data.
#[derive(Clone, Debug)]
pub struct TaggedEdge {
    pub edge_index: usize,
    pub nodes: [usize; 2],
    /// Outward normal for boundary edges; fluid-to-porous normal on the interface.
    pub normal: Point,
    /// `normal` rotated by +90 degrees.
    pub tangent: Point,
    pub length: f64,
    /// Adjacent triangle (the fluid one for interface edges).
    pub triangle: usize,
    /// Porous triangle across an interface edge.
    pub porous_triangle: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub geometry: Geometry,
    pub nodes: Vec<Point>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub subdomain: Vec<Subdomain>,
    /// All distinct edges, indexed.
    pub edges: Vec<Edge>,
    /// Local edge `k` of a triangle joins local vertices `k` and `(k+1) % 3`.
    pub triangle_edges: Vec<[usize; 3]>,
    pub edge_tags: BTreeMap<Edge, EdgeTag>,
    pub h: f64,
}

fn cells(length: f64, h: f64) -> usize {
    ((length / h).round() as usize).max(1)
}

/// Builds the conforming two-rectangle triangulation with target size `h`.
///
/// Node numbering is lexicographic in `(y, x)`, porous nodes first.
pub fn build_two_domain_mesh(geometry: &Geometry, h: f64) -> Result<Mesh> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Geometry(format!("mesh size must be positive, got {h}")));
    }
    let (fx, fy) = (cells(geometry.fluid.width(), h), cells(geometry.fluid.height(), h));
    let (mut px, mut py) = (cells(geometry.porous.width(), h), cells(geometry.porous.height(), h));
    // Conformity across the interface forces a common subdivision along it.
    if geometry.interface.is_horizontal() {
        px = fx;
    } else {
        py = fy;
    }

    let mut nodes: Vec<Point> = Vec::new();
    let mut lookup: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    // Integer keys in units of a common fine lattice so interface nodes coincide.
    let bbox = geometry.bounding_box();
    let key = |p: Point| -> (i64, i64) {
        let s = 1e9 / (bbox.width().max(bbox.height()));
        (((p[1] - bbox.y_min) * s).round() as i64, ((p[0] - bbox.x_min) * s).round() as i64)
    };

    let grid = |r: &Rect, nx: usize, ny: usize| -> Vec<Vec<Point>> {
        (0..=ny)
            .map(|j| {
                (0..=nx)
                    .map(|i| [r.x_min + r.width() * i as f64 / nx as f64, r.y_min + r.height() * j as f64 / ny as f64])
                    .collect()
            })
            .collect()
    };

    let mut index_grid = |pts: &Vec<Vec<Point>>, nodes: &mut Vec<Point>| -> Vec<Vec<usize>> {
        pts.iter()
            .map(|row| {
                row.iter()
                    .map(|&p| {
                        *lookup.entry(key(p)).or_insert_with(|| {
                            nodes.push(p);
                            nodes.len() - 1
                        })
                    })
                    .collect()
            })
            .collect()
    };

    let porous_pts = grid(&geometry.porous, px, py);
    let fluid_pts = grid(&geometry.fluid, fx, fy);
    let porous_ids = index_grid(&porous_pts, &mut nodes);
    let fluid_ids = index_grid(&fluid_pts, &mut nodes);

    let mut triangles = Vec::new();
    let mut subdomain = Vec::new();
    for (ids, dom) in [(&porous_ids, Subdomain::Porous), (&fluid_ids, Subdomain::Fluid)] {
        let ny = ids.len() - 1;
        let nx = ids[0].len() - 1;
        for j in 0..ny {
            for i in 0..nx {
                let ll = ids[j][i];
                let lr = ids[j][i + 1];
                let ur = ids[j + 1][i + 1];
                let ul = ids[j + 1][i];
                triangles.push([ll, lr, ur]);
                triangles.push([ll, ur, ul]);
                subdomain.push(dom);
                subdomain.push(dom);
            }
        }
    }

    Ok(Mesh::from_parts(*geometry, nodes, triangles, subdomain, h))
}

impl Mesh {
    /// Builds edge connectivity and tags from raw connectivity. Boundary
    /// edges are tagged by the subdomain of their only triangle; edges
    /// shared by a fluid and a porous triangle are interface edges.
    pub fn from_parts(
        geometry: Geometry,
        nodes: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        subdomain: Vec<Subdomain>,
        h: f64,
    ) -> Self {
        let mut edge_index: BTreeMap<Edge, usize> = BTreeMap::new();
        let mut edges = Vec::new();
        let mut owners: Vec<Vec<usize>> = Vec::new();
        let mut triangle_edges = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let mut te = [0; 3];
            for k in 0..3 {
                let e = Edge::new(tri[k], tri[(k + 1) % 3]);
                let idx = *edge_index.entry(e).or_insert_with(|| {
                    edges.push(e);
                    owners.push(Vec::new());
                    edges.len() - 1
                });
                owners[idx].push(t);
                te[k] = idx;
            }
            triangle_edges.push(te);
        }
        let mut edge_tags = BTreeMap::new();
        for (idx, e) in edges.iter().enumerate() {
            match owners[idx].as_slice() {
                [t] => {
                    let tag = match subdomain[*t] {
                        Subdomain::Fluid => EdgeTag::GammaF,
                        Subdomain::Porous => EdgeTag::GammaP,
                    };
                    edge_tags.insert(*e, tag);
                }
                [a, b] if subdomain[*a] != subdomain[*b] => {
                    edge_tags.insert(*e, EdgeTag::Interface);
                }
                _ => {}
            }
        }
        Self { geometry, nodes, triangles, subdomain, edges, triangle_edges, edge_tags, h }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self, t: usize) -> [Point; 3] {
        let tri = self.triangles[t];
        [self.nodes[tri[0]], self.nodes[tri[1]], self.nodes[tri[2]]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.vertices(t);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.vertices(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn triangles_in(&self, dom: Subdomain) -> impl Iterator<Item = usize> + '_ {
        (0..self.triangles.len()).filter(move |&t| self.subdomain[t] == dom)
    }

    pub fn edge_tag(&self, edge_index: usize) -> Option<EdgeTag> {
        self.edge_tags.get(&self.edges[edge_index]).copied()
    }

    /// Triangles owning each edge.
    fn edge_owners(&self) -> Vec<Vec<usize>> {
        let mut owners = vec![Vec::new(); self.edges.len()];
        for (t, te) in self.triangle_edges.iter().enumerate() {
            for &e in te {
                owners[e].push(t);
            }
        }
        owners
    }

    /// All edges carrying `tag`, with unit normal and tangent.
    ///
    /// Interface normals point from the fluid into the porous region.
    pub fn tagged_edges(&self, tag: EdgeTag) -> Vec<TaggedEdge> {
        let owners = self.edge_owners();
        let mut out = Vec::new();
        for (idx, e) in self.edges.iter().enumerate() {
            if self.edge_tags.get(e) != Some(&tag) {
                continue;
            }
            let (a, b) = (self.nodes[e.0], self.nodes[e.1]);
            let d = [b[0] - a[0], b[1] - a[1]];
            let length = (d[0] * d[0] + d[1] * d[1]).sqrt();
            let own = &owners[idx];
            let triangle = *own
                .iter()
                .find(|&&t| tag != EdgeTag::Interface || self.subdomain[t] == Subdomain::Fluid)
                .expect("tagged edge has an owner");
            let porous_triangle = if tag == EdgeTag::Interface {
                own.iter().copied().find(|&t| self.subdomain[t] == Subdomain::Porous)
            } else {
                None
            };
            // Outward normal of `triangle` across this edge.
            let mut n = [d[1] / length, -d[0] / length];
            let c = self.centroid(triangle);
            let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            if (mid[0] - c[0]) * n[0] + (mid[1] - c[1]) * n[1] < 0.0 {
                n = [-n[0], -n[1]];
            }
            out.push(TaggedEdge {
                edge_index: idx,
                nodes: [e.0, e.1],
                normal: n,
                tangent: [-n[1], n[0]],
                length,
                triangle,
                porous_triangle,
            });
        }
        out
    }

    /// Nodes lying on an edge carrying `tag`.
    pub fn nodes_on(&self, tag: EdgeTag) -> Vec<bool> {
        let mut mask = vec![false; self.nodes.len()];
        for (e, t) in &self.edge_tags {
            if *t == tag {
                mask[e.0] = true;
                mask[e.1] = true;
            }
        }
        mask
    }

    /// Finds the triangle containing `p` together with its barycentric
    /// coordinates. Linear scan; intended for diagnostics and tests.
    pub fn locate(&self, p: Point) -> Option<(usize, [f64; 3])> {
        self.locate_in(p, |_| true)
    }

    /// As [`Mesh::locate`], restricted to triangles accepted by `keep`.
    pub fn locate_in(&self, p: Point, keep: impl Fn(usize) -> bool) -> Option<(usize, [f64; 3])> {
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for t in (0..self.triangles.len()).filter(|&t| keep(t)) {
            let lam = barycentric(&self.vertices(t), p);
            let worst = lam.iter().cloned().fold(f64::INFINITY, f64::min);
            if worst >= -1e-12 {
                return Some((t, lam));
            }
            if best.as_ref().map_or(true, |b| worst > b.2) {
                best = Some((t, lam, worst));
            }
        }
        best.filter(|b| b.2 > -1e-9).map(|b| (b.0, b.1))
    }
}

pub fn barycentric(v: &[Point; 3], p: Point) -> [f64; 3] {
    let det = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
    let l1 = ((p[0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (p[1] - v[0][1])) / det;
    let l2 = ((v[1][0] - v[0][0]) * (p[1] - v[0][1]) - (p[0] - v[0][0]) * (v[1][1] - v[0][1])) / det;
    [1.0 - l1 - l2, l1, l2]
}
