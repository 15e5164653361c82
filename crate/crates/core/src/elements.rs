//! Reference-element bases, quadrature rules and global DOF maps.
//!
//! Reference triangle: vertices `(0,0)`, `(1,0)`, `(0,1)`, barycentric
//! coordinates `(1-x-y, x, y)`. Quadratic local nodes are the three vertices
//! followed by the midpoints of edges `(0,1)`, `(1,2)`, `(2,0)`.
//!
//! Vector-valued fields use a blocked layout: all x-components, then all
//! y-components (`dof = component * n_scalar + scalar_dof`).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mesh::{EdgeTag, Mesh, Point, Subdomain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BasisFamily {
    Linear,
    Quadratic,
}

impl BasisFamily {
    pub fn local_count(self) -> usize {
        match self {
            BasisFamily::Linear => 3,
            BasisFamily::Quadratic => 6,
        }
    }

    pub fn degree(self) -> usize {
        match self {
            BasisFamily::Linear => 1,
            BasisFamily::Quadratic => 2,
        }
    }
}

/// Basis values and reference-coordinate gradients at one point.
#[derive(Clone, Copy, Debug)]
pub struct BasisEval {
    pub n: usize,
    pub values: [f64; 6],
    pub grads: [[f64; 2]; 6],
}

/// Evaluates the reference basis at barycentric point `lam`.
pub fn reference_basis(family: BasisFamily, lam: [f64; 3]) -> BasisEval {
    // d(lambda_i)/d(x, y) on the reference triangle
    const DL: [[f64; 2]; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
    let mut values = [0.0; 6];
    let mut grads = [[0.0; 2]; 6];
    match family {
        BasisFamily::Linear => {
            for i in 0..3 {
                values[i] = lam[i];
                grads[i] = DL[i];
            }
            BasisEval { n: 3, values, grads }
        }
        BasisFamily::Quadratic => {
            for i in 0..3 {
                values[i] = lam[i] * (2.0 * lam[i] - 1.0);
                let s = 4.0 * lam[i] - 1.0;
                grads[i] = [s * DL[i][0], s * DL[i][1]];
            }
            for k in 0..3 {
                let (a, b) = (k, (k + 1) % 3);
                values[3 + k] = 4.0 * lam[a] * lam[b];
                grads[3 + k] =
                    [4.0 * (lam[a] * DL[b][0] + lam[b] * DL[a][0]), 4.0 * (lam[a] * DL[b][1] + lam[b] * DL[a][1])];
            }
            BasisEval { n: 6, values, grads }
        }
    }
}

/// Barycentric coordinates of the local nodes of `family`.
pub fn local_nodes(family: BasisFamily) -> &'static [[f64; 3]] {
    const P1: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    const P2: [[f64; 3]; 6] =
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];
    match family {
        BasisFamily::Linear => &P1,
        BasisFamily::Quadratic => &P2,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Entity {
    Triangle,
    Edge,
}

/// Quadrature on the reference triangle (barycentric points, weights summing
/// to 1/2) or on the unit interval (points in `[0,1]`, weights summing to 1).
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub exact_degree: usize,
}

/// Legendre polynomial `P_n(z)` and its derivative.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, n as f64 * (z * p1 - p0) / (z * z - 1.0))
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(n, z);
                let dz = p / dp;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre(n, z);
            (0.5 * (1.0 - z), 1.0 / ((1.0 - z * z) * dp * dp))
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

fn symmetric_orbit(points: &mut Vec<[f64; 3]>, weights: &mut Vec<f64>, a: f64, b: f64, c: f64, w: f64) {
    let mut orbit: Vec<[f64; 3]> = Vec::new();
    for p in [[a, b, c], [b, c, a], [c, a, b], [a, c, b], [c, b, a], [b, a, c]] {
        if !orbit.iter().any(|q| q.iter().zip(&p).all(|(x, y)| (x - y).abs() < 1e-15)) {
            orbit.push(p);
        }
    }
    for p in orbit {
        points.push(p);
        weights.push(0.5 * w);
    }
}

/// Returns the cheapest available rule integrating polynomials of total
/// degree `exact_degree` exactly.
pub fn quadrature_rule(entity: Entity, exact_degree: usize) -> Result<QuadratureRule> {
    match entity {
        Entity::Edge => {
            if !(1..=9).contains(&exact_degree) {
                return Err(Error::QuadratureDegree { entity: "edge", degree: exact_degree });
            }
            let n = (exact_degree + 2) / 2;
            let (x, w) = gauss_legendre(n);
            Ok(QuadratureRule {
                points: x.iter().map(|&s| [1.0 - s, s, 0.0]).collect(),
                weights: w,
                exact_degree: 2 * n - 1,
            })
        }
        Entity::Triangle => {
            let mut points = Vec::new();
            let mut weights = Vec::new();
            let degree = match exact_degree {
                1 => {
                    symmetric_orbit(&mut points, &mut weights, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0);
                    1
                }
                2 => {
                    symmetric_orbit(&mut points, &mut weights, 2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0);
                    2
                }
                3 | 4 => {
                    let a = 0.445948490915965;
                    let b = 0.091576213509771;
                    symmetric_orbit(&mut points, &mut weights, 1.0 - 2.0 * a, a, a, 0.223381589678011);
                    symmetric_orbit(&mut points, &mut weights, 1.0 - 2.0 * b, b, b, 0.109951743655322);
                    4
                }
                5 => {
                    let s = 15f64.sqrt();
                    let a = (6.0 - s) / 21.0;
                    let b = (6.0 + s) / 21.0;
                    symmetric_orbit(&mut points, &mut weights, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.225);
                    symmetric_orbit(&mut points, &mut weights, 1.0 - 2.0 * a, a, a, (155.0 - s) / 1200.0);
                    symmetric_orbit(&mut points, &mut weights, 1.0 - 2.0 * b, b, b, (155.0 + s) / 1200.0);
                    5
                }
                6 => {
                    let a = 0.063089014491502;
                    let b = 0.249286745170910;
                    symmetric_orbit(&mut points, &mut weights, 1.0 - 2.0 * a, a, a, 0.050844906370207);
                    symmetric_orbit(&mut points, &mut weights, 1.0 - 2.0 * b, b, b, 0.116786275726379);
                    let (c, d) = (0.053145049844817, 0.310352451033784);
                    symmetric_orbit(&mut points, &mut weights, 1.0 - c - d, c, d, 0.082851075618374);
                    6
                }
                7 => {
                    // Collapsed tensor Gauss rule; the Jacobian adds one degree in u.
                    let (xu, wu) = gauss_legendre(5);
                    let (xv, wv) = gauss_legendre(4);
                    for (u, wu) in xu.iter().zip(&wu) {
                        for (v, wv) in xv.iter().zip(&wv) {
                            let x = *u;
                            let y = v * (1.0 - u);
                            points.push([1.0 - x - y, x, y]);
                            weights.push(wu * wv * (1.0 - u));
                        }
                    }
                    7
                }
                d => return Err(Error::QuadratureDegree { entity: "triangle", degree: d }),
            };
            Ok(QuadratureRule { points, weights, exact_degree: degree })
        }
    }
}

/// Affine map data of one physical triangle.
#[derive(Clone, Copy, Debug)]
pub struct ElementMap {
    pub vertices: [Point; 3],
    /// `|det J| / 2`.
    pub area: f64,
    /// Inverse transpose of the Jacobian, row-major.
    pub inv_jt: [[f64; 2]; 2],
}

impl ElementMap {
    pub fn new(vertices: [Point; 3]) -> Self {
        let j = [
            [vertices[1][0] - vertices[0][0], vertices[2][0] - vertices[0][0]],
            [vertices[1][1] - vertices[0][1], vertices[2][1] - vertices[0][1]],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let inv_jt = [[j[1][1] / det, -j[1][0] / det], [-j[0][1] / det, j[0][0] / det]];
        Self { vertices, area: 0.5 * det.abs(), inv_jt }
    }

    pub fn of(mesh: &Mesh, t: usize) -> Self {
        Self::new(mesh.vertices(t))
    }

    pub fn point(&self, lam: [f64; 3]) -> Point {
        let v = &self.vertices;
        [lam[0] * v[0][0] + lam[1] * v[1][0] + lam[2] * v[2][0], lam[0] * v[0][1] + lam[1] * v[1][1] + lam[2] * v[2][1]]
    }

    pub fn physical_grad(&self, g: [f64; 2]) -> [f64; 2] {
        [self.inv_jt[0][0] * g[0] + self.inv_jt[0][1] * g[1], self.inv_jt[1][0] * g[0] + self.inv_jt[1][1] * g[1]]
    }

    /// Basis values and physical gradients at `lam`.
    pub fn eval(&self, family: BasisFamily, lam: [f64; 3]) -> BasisEval {
        let mut b = reference_basis(family, lam);
        for i in 0..b.n {
            b.grads[i] = self.physical_grad(b.grads[i]);
        }
        b
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DofDomain {
    Fluid,
    Porous,
    Whole,
}

impl DofDomain {
    pub fn includes(self, s: Subdomain) -> bool {
        match self {
            DofDomain::Fluid => s == Subdomain::Fluid,
            DofDomain::Porous => s == Subdomain::Porous,
            DofDomain::Whole => true,
        }
    }
}

/// Global numbering of a (possibly vector-valued) Lagrange space on part of
/// the mesh.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub family: BasisFamily,
    pub components: usize,
    pub domain: DofDomain,
    pub n_scalar: usize,
    /// Scalar DOFs of each triangle; empty slots (`usize::MAX`) outside the domain.
    cell_dofs: Vec<[usize; 6]>,
    pub coords: Vec<Point>,
    pub vertex_dof: Vec<Option<usize>>,
    pub edge_dof: Vec<Option<usize>>,
    boundary: BTreeMap<EdgeTag, Vec<bool>>,
    pub triangles: Vec<usize>,
}

pub fn build_dof_map(mesh: &Mesh, family: BasisFamily, components: usize, domain: DofDomain) -> DofMap {
    assert!(components == 1 || components == 2);
    let triangles: Vec<usize> = (0..mesh.num_triangles()).filter(|&t| domain.includes(mesh.subdomain[t])).collect();
    let mut used_v = vec![false; mesh.num_nodes()];
    let mut used_e = vec![false; mesh.edges.len()];
    for &t in &triangles {
        for k in 0..3 {
            used_v[mesh.triangles[t][k]] = true;
            used_e[mesh.triangle_edges[t][k]] = true;
        }
    }
    let mut coords = Vec::new();
    let mut vertex_dof = vec![None; mesh.num_nodes()];
    for (v, &u) in used_v.iter().enumerate() {
        if u {
            vertex_dof[v] = Some(coords.len());
            coords.push(mesh.nodes[v]);
        }
    }
    let mut edge_dof = vec![None; mesh.edges.len()];
    if family == BasisFamily::Quadratic {
        for (e, &u) in used_e.iter().enumerate() {
            if u {
                edge_dof[e] = Some(coords.len());
                let (a, b) = (mesh.nodes[mesh.edges[e].0], mesh.nodes[mesh.edges[e].1]);
                coords.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
            }
        }
    }
    let mut cell_dofs = vec![[usize::MAX; 6]; mesh.num_triangles()];
    for &t in &triangles {
        for k in 0..3 {
            cell_dofs[t][k] = vertex_dof[mesh.triangles[t][k]].unwrap();
            if family == BasisFamily::Quadratic {
                cell_dofs[t][3 + k] = edge_dof[mesh.triangle_edges[t][k]].unwrap();
            }
        }
    }
    let n_scalar = coords.len();
    let mut boundary = BTreeMap::new();
    for tag in [EdgeTag::GammaF, EdgeTag::GammaP, EdgeTag::Interface] {
        let mut mask = vec![false; n_scalar];
        for (e, edge) in mesh.edges.iter().enumerate() {
            if mesh.edge_tags.get(edge) != Some(&tag) {
                continue;
            }
            for v in [edge.0, edge.1] {
                if let Some(d) = vertex_dof[v] {
                    mask[d] = true;
                }
            }
            if let Some(d) = edge_dof[e] {
                mask[d] = true;
            }
        }
        boundary.insert(tag, mask);
    }
    DofMap { family, components, domain, n_scalar, cell_dofs, coords, vertex_dof, edge_dof, boundary, triangles }
}

impl DofMap {
    pub fn total_dofs(&self) -> usize {
        self.components * self.n_scalar
    }

    pub fn local_count(&self) -> usize {
        self.family.local_count()
    }

    pub fn dof_of(&self, triangle: usize, local: usize, component: usize) -> usize {
        let d = self.cell_dofs[triangle][local];
        debug_assert!(d != usize::MAX, "triangle {triangle} is outside the dof map domain");
        component * self.n_scalar + d
    }

    /// Scalar DOFs of a triangle.
    pub fn cell(&self, triangle: usize) -> &[usize] {
        &self.cell_dofs[triangle][..self.local_count()]
    }

    pub fn contains_triangle(&self, triangle: usize) -> bool {
        self.cell_dofs[triangle][0] != usize::MAX
    }

    /// Scalar DOFs lying on edges tagged `tag`.
    pub fn boundary_mask(&self, tag: EdgeTag) -> &[bool] {
        &self.boundary[&tag]
    }

    /// Nodal interpolation of a scalar function.
    pub fn interpolate_scalar(&self, mut f: impl FnMut(Point) -> f64) -> Vec<f64> {
        assert_eq!(self.components, 1);
        self.coords.iter().map(|&p| f(p)).collect()
    }

    /// Nodal interpolation of a vector function (blocked layout).
    pub fn interpolate_vector(&self, f: impl Fn(Point) -> [f64; 2]) -> Vec<f64> {
        assert_eq!(self.components, 2);
        let n = self.n_scalar;
        let mut out = vec![0.0; 2 * n];
        for (i, &p) in self.coords.iter().enumerate() {
            let v = f(p);
            out[i] = v[0];
            out[n + i] = v[1];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_two_domain_mesh, Geometry, Rect};

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    /// Exact integral of x^a y^b over the reference triangle.
    fn monomial_integral(a: usize, b: usize) -> f64 {
        factorial(a) * factorial(b) / factorial(a + b + 2)
    }

    #[test]
    fn triangle_rules_are_exact() {
        for degree in 1..=7 {
            let q = quadrature_rule(Entity::Triangle, degree).unwrap();
            assert!(q.exact_degree >= degree);
            let wsum: f64 = q.weights.iter().sum();
            assert!((wsum - 0.5).abs() < 1e-14, "degree {degree}: weight sum {wsum}");
            for a in 0..=degree {
                for b in 0..=(degree - a) {
                    let approx: f64 = q
                        .points
                        .iter()
                        .zip(&q.weights)
                        .map(|(l, w)| w * l[1].powi(a as i32) * l[2].powi(b as i32))
                        .sum();
                    let exact = monomial_integral(a, b);
                    assert!((approx - exact).abs() < 1e-14, "deg {degree} x^{a} y^{b}: {approx} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn centroid_rule_and_quintic_monomial() {
        let q = quadrature_rule(Entity::Triangle, 1).unwrap();
        assert_eq!(q.points.len(), 1);
        assert!((q.weights[0] - 0.5).abs() < 1e-16);
        let q5 = quadrature_rule(Entity::Triangle, 5).unwrap();
        let v: f64 = q5.points.iter().zip(&q5.weights).map(|(l, w)| w * l[1].powi(2) * l[2].powi(3)).sum();
        assert!((v - 1.0 / 420.0).abs() < 1e-14);
    }

    #[test]
    fn edge_rules_are_exact() {
        let q3 = quadrature_rule(Entity::Edge, 3).unwrap();
        assert_eq!(q3.points.len(), 2);
        assert!(q3.weights.iter().all(|w| (w - 0.5).abs() < 1e-15));
        for degree in 1..=9 {
            let q = quadrature_rule(Entity::Edge, degree).unwrap();
            for k in 0..=degree {
                let v: f64 = q.points.iter().zip(&q.weights).map(|(p, w)| w * p[1].powi(k as i32)).sum();
                assert!((v - 1.0 / (k as f64 + 1.0)).abs() < 1e-14);
            }
        }
        assert!(quadrature_rule(Entity::Edge, 10).is_err());
        assert!(quadrature_rule(Entity::Triangle, 8).is_err());
        assert!(quadrature_rule(Entity::Triangle, 0).is_err());
    }

    #[test]
    fn nodal_property_and_partition_of_unity() {
        for fam in [BasisFamily::Linear, BasisFamily::Quadratic] {
            for (k, node) in local_nodes(fam).iter().enumerate() {
                let b = reference_basis(fam, *node);
                for i in 0..b.n {
                    let expect = if i == k { 1.0 } else { 0.0 };
                    assert!((b.values[i] - expect).abs() < 1e-15);
                }
            }
            let b = reference_basis(fam, [1.0 / 3.0; 3]);
            let s: f64 = b.values[..b.n].iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
            let gs = b.grads[..b.n].iter().fold([0.0, 0.0], |a, g| [a[0] + g[0], a[1] + g[1]]);
            assert!(gs[0].abs() < 1e-14 && gs[1].abs() < 1e-14);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let lam = [0.2, 0.3, 0.5];
        for fam in [BasisFamily::Linear, BasisFamily::Quadratic] {
            let b = reference_basis(fam, lam);
            let d = 1e-6;
            let at = |x: f64, y: f64| reference_basis(fam, [1.0 - x - y, x, y]);
            let (x, y) = (lam[1], lam[2]);
            for i in 0..b.n {
                let gx = (at(x + d, y).values[i] - at(x - d, y).values[i]) / (2.0 * d);
                let gy = (at(x, y + d).values[i] - at(x, y - d).values[i]) / (2.0 * d);
                assert!((gx - b.grads[i][0]).abs() < 1e-8);
                assert!((gy - b.grads[i][1]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn quadratic_mass_on_reference_triangle() {
        // Exact P2 mass matrix on the reference triangle (area 1/2):
        // vertex-vertex 6/360 diag, -1/360 off; vertex-midpoint 0 / -4/360;
        // midpoint-midpoint 32/360 diag, 16/360 off. Scaled by 2*area = 1.
        let q = quadrature_rule(Entity::Triangle, 4).unwrap();
        let mut m = [[0.0; 6]; 6];
        for (l, w) in q.points.iter().zip(&q.weights) {
            let b = reference_basis(BasisFamily::Quadratic, *l);
            for i in 0..6 {
                for j in 0..6 {
                    m[i][j] += w * b.values[i] * b.values[j];
                }
            }
        }
        let s = 1.0 / 360.0;
        for i in 0..6 {
            for j in 0..6 {
                let exact = match (i < 3, j < 3) {
                    (true, true) if i == j => 6.0 * s,
                    (true, true) => -1.0 * s,
                    (false, false) if i == j => 32.0 * s,
                    (false, false) => 16.0 * s,
                    _ => {
                        // midpoint opposite vertex couples with -4; adjacent with 0
                        let (v, m) = if i < 3 { (i, j - 3) } else { (j, i - 3) };
                        let opposite = (m + 2) % 3;
                        if v == opposite {
                            -4.0 * s
                        } else {
                            0.0
                        }
                    }
                };
                assert!((m[i][j] - exact).abs() < 1e-15, "({i},{j}) {} vs {exact}", m[i][j]);
            }
        }
    }

    #[test]
    fn dof_counts() {
        let g = Geometry::unit_stack();
        let single =
            Mesh::from_parts(g, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]], vec![Subdomain::Fluid], 1.0);
        assert_eq!(build_dof_map(&single, BasisFamily::Linear, 1, DofDomain::Whole).total_dofs(), 3);
        assert_eq!(build_dof_map(&single, BasisFamily::Quadratic, 2, DofDomain::Whole).total_dofs(), 12);
        let square = Mesh::from_parts(
            g,
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![Subdomain::Fluid; 2],
            1.0,
        );
        assert_eq!(build_dof_map(&square, BasisFamily::Quadratic, 1, DofDomain::Fluid).total_dofs(), 9);
        assert_eq!(build_dof_map(&square, BasisFamily::Quadratic, 1, DofDomain::Porous).total_dofs(), 0);
    }

    #[test]
    fn dof_map_is_bijective_and_shares_interface() {
        let m = build_two_domain_mesh(&Geometry::unit_stack(), 0.25).unwrap();
        let whole = build_dof_map(&m, BasisFamily::Quadratic, 2, DofDomain::Whole);
        let fluid = build_dof_map(&m, BasisFamily::Quadratic, 2, DofDomain::Fluid);
        let porous = build_dof_map(&m, BasisFamily::Quadratic, 2, DofDomain::Porous);
        // 9x17 quadratic lattice on the whole; interface row of 9 shared.
        assert_eq!(whole.n_scalar, 9 * 17);
        assert_eq!(fluid.n_scalar + porous.n_scalar - 9, whole.n_scalar);
        let mut seen = vec![false; whole.total_dofs()];
        for &t in &whole.triangles {
            for l in 0..6 {
                for c in 0..2 {
                    seen[whole.dof_of(t, l, c)] = true;
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
        let gamma = fluid.boundary_mask(EdgeTag::Interface).iter().filter(|&&b| b).count();
        assert_eq!(gamma, 9);
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let g = Geometry::new(Rect::new(0.0, 1.0, 0.0, 1.0), Rect::new(0.0, 1.0, -0.5, 0.0)).unwrap();
        let m = build_two_domain_mesh(&g, 0.2).unwrap();
        let f = |p: Point| 1.0 + 2.0 * p[0] - p[1] + 3.0 * p[0] * p[1] - p[0] * p[0] + 0.5 * p[1] * p[1];
        let map = build_dof_map(&m, BasisFamily::Quadratic, 1, DofDomain::Whole);
        let coef = map.interpolate_scalar(f);
        let lin = build_dof_map(&m, BasisFamily::Linear, 1, DofDomain::Whole);
        let flin = |p: Point| 0.3 - p[0] + 2.0 * p[1];
        let clin = lin.interpolate_scalar(flin);
        let mut state = 12345u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let t = (rnd() * m.num_triangles() as f64) as usize % m.num_triangles();
            let (a, b) = (rnd(), rnd());
            let lam = if a + b <= 1.0 { [1.0 - a - b, a, b] } else { [a + b - 1.0, 1.0 - b, 1.0 - a] };
            let em = ElementMap::of(&m, t);
            let p = em.point(lam);
            let v2 = reference_basis(BasisFamily::Quadratic, lam);
            let val: f64 = (0..6).map(|i| v2.values[i] * coef[map.cell(t)[i]]).sum();
            assert!((val - f(p)).abs() < 1e-12);
            let v1 = reference_basis(BasisFamily::Linear, lam);
            let val: f64 = (0..3).map(|i| v1.values[i] * clin[lin.cell(t)[i]]).sum();
            assert!((val - flin(p)).abs() < 1e-12);
        }
    }
}
