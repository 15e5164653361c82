//! Brute-force reference computations for the assembly routines and the
//! manufactured forcing terms.
//!
//! The assembly oracle never touches the reference element: each global
//! basis function is rebuilt on every triangle as the Lagrange polynomial
//! through the physical DOF coordinates, integrals use a collapsed
//! tensor Gauss rule, and every matrix is filled densely over all pairs of
//! global DOFs. The forcing oracle differentiates the closed-form fields by
//! central finite differences.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::elements::{build_dof_map, gauss_legendre, BasisFamily, DofDomain, DofMap};
use crate::error::Result;
use crate::forms::{self, Convection, Field, Mobility, Tensor};
use crate::mesh::{build_two_domain_mesh, Geometry, Mesh, Point, Rect, Subdomain};
use crate::mms::{CaseId, ManufacturedCase};
use crate::sparse::CsrMatrix;

/// Entry-wise agreement required between assembled and oracle values.
pub const ASSEMBLY_TOLERANCE: f64 = 1e-12;
/// Relative agreement required between hand-derived and differenced forcing.
pub const FORCING_TOLERANCE: f64 = 1e-7;

/// Points per direction of the collapsed Gauss rule (exact to degree 14).
const TRIANGLE_POINTS: usize = 8;
const EDGE_POINTS: usize = 8;

/// Outcome of one oracle comparison.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub name: String,
    pub max_error: f64,
    pub max_value: f64,
    pub tolerance: f64,
}

impl Comparison {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

/// Meshes with at most eight triangles: the structured two-rectangle
/// layouts at `h = 1` plus hand-built skewed and diagonal-interface cases.
pub fn small_meshes() -> Vec<(String, Mesh)> {
    let mut out = Vec::new();
    let rect_cases = [
        ("stack-1x1", Rect::new(0.0, 1.0, 0.0, 1.0), Rect::new(0.0, 1.0, -1.0, 0.0)),
        ("stack-2x1", Rect::new(0.0, 2.0, 0.0, 1.0), Rect::new(0.0, 2.0, -1.0, 0.0)),
        ("side-by-side", Rect::new(0.0, 1.0, 0.0, 1.0), Rect::new(1.0, 2.0, 0.0, 1.0)),
        ("porous-above", Rect::new(0.0, 1.0, 0.0, 1.0), Rect::new(0.0, 1.0, 1.0, 3.0)),
    ];
    for (name, fluid, porous) in rect_cases {
        let g = Geometry::new(fluid, porous).expect("valid geometry");
        out.push((name.to_string(), build_two_domain_mesh(&g, 1.0).expect("valid mesh")));
    }

    let stack = build_two_domain_mesh(&Geometry::unit_stack(), 1.0).expect("valid mesh");
    let mut nodes = stack.nodes.clone();
    for p in nodes.iter_mut() {
        if p[1] > 0.5 {
            *p = [p[0] * 1.2 + 0.1 * p[1], p[1] + 0.15 * p[0]];
        } else if p[1] < -0.5 {
            *p = [p[0] * 0.9 - 0.2, p[1] - 0.3 * p[0]];
        }
    }
    out.push((
        "skewed".to_string(),
        Mesh::from_parts(stack.geometry, nodes, stack.triangles.clone(), stack.subdomain.clone(), 1.0),
    ));

    let nodes = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    out.push((
        "diagonal".to_string(),
        Mesh::from_parts(
            Geometry::unit_stack(),
            nodes,
            vec![[0, 1, 2], [0, 2, 3]],
            vec![Subdomain::Porous, Subdomain::Fluid],
            1.0,
        ),
    ));

    let nodes = vec![[0.0, 0.0], [1.0, 0.1], [0.4, 0.9], [1.3, 1.1], [-0.6, 0.7], [0.5, -0.8]];
    out.push((
        "fan".to_string(),
        Mesh::from_parts(
            Geometry::unit_stack(),
            nodes,
            vec![[0, 1, 2], [1, 3, 2], [0, 2, 4], [0, 5, 1]],
            vec![Subdomain::Fluid, Subdomain::Fluid, Subdomain::Porous, Subdomain::Porous],
            1.0,
        ),
    ));
    out
}

/// Physical quadrature point.
#[derive(Clone, Copy)]
struct Point2 {
    x: Point,
    w: f64,
}

fn triangle_points(v: [Point; 3]) -> Vec<Point2> {
    let (z, w) = gauss_legendre(TRIANGLE_POINTS);
    let area = 0.5 * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1])).abs();
    let mut out = Vec::new();
    for (a, wa) in z.iter().zip(&w) {
        for (b, wb) in z.iter().zip(&w) {
            let (s, r) = (*a, b * (1.0 - a));
            let x = [
                v[0][0] + s * (v[1][0] - v[0][0]) + r * (v[2][0] - v[0][0]),
                v[0][1] + s * (v[1][1] - v[0][1]) + r * (v[2][1] - v[0][1]),
            ];
            out.push(Point2 { x, w: 2.0 * area * wa * wb * (1.0 - a) });
        }
    }
    out
}

fn segment_points(p0: Point, p1: Point) -> Vec<Point2> {
    let (z, w) = gauss_legendre(EDGE_POINTS);
    let len = ((p1[0] - p0[0]).powi(2) + (p1[1] - p0[1]).powi(2)).sqrt();
    z.iter()
        .zip(&w)
        .map(|(s, ws)| Point2 { x: [p0[0] + s * (p1[0] - p0[0]), p0[1] + s * (p1[1] - p0[1])], w: ws * len })
        .collect()
}

/// Monomials `1, s, r, s², sr, r²` in scaled local coordinates.
fn monomials(x: Point, c: Point, l: f64, degree: usize) -> (Vec<f64>, Vec<[f64; 2]>) {
    let (s, r) = ((x[0] - c[0]) / l, (x[1] - c[1]) / l);
    let mut v = vec![1.0, s, r];
    let mut g = vec![[0.0, 0.0], [1.0 / l, 0.0], [0.0, 1.0 / l]];
    if degree == 2 {
        v.extend([s * s, s * r, r * r]);
        g.extend([[2.0 * s / l, 0.0], [r / l, s / l], [0.0, 2.0 * r / l]]);
    }
    (v, g)
}

fn invert(mut a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        inv.swap(k, p);
        let d = a[k][k];
        for j in 0..n {
            a[k][j] /= d;
            inv[k][j] /= d;
        }
        for i in (0..n).filter(|&i| i != k) {
            let f = a[i][k];
            if f != 0.0 {
                for j in 0..n {
                    a[i][j] -= f * a[k][j];
                    inv[i][j] -= f * inv[k][j];
                }
            }
        }
    }
    inv
}

/// Dense global basis of a scalar or vector Lagrange space.
struct DenseSpace<'a> {
    space: &'a DofMap,
    /// Per triangle: inverse Vandermonde, centre and scale.
    local: Vec<Option<(Vec<Vec<f64>>, Point, f64)>>,
}

impl<'a> DenseSpace<'a> {
    fn new(mesh: &Mesh, space: &'a DofMap) -> Self {
        let degree = space.family.degree();
        let local = (0..mesh.num_triangles())
            .map(|t| {
                if !space.contains_triangle(t) {
                    return None;
                }
                let c = mesh.centroid(t);
                let v = mesh.vertices(t);
                let l = v.iter().map(|p| (p[0] - c[0]).hypot(p[1] - c[1])).fold(0.0, f64::max);
                let rows = space.cell(t).iter().map(|&d| monomials(space.coords[d], c, l, degree).0).collect();
                Some((invert(rows), c, l))
            })
            .collect();
        Self { space, local }
    }

    fn dim(&self) -> usize {
        self.space.total_dofs()
    }

    /// Values and gradients of every global basis function at `x`, taken
    /// as restrictions to triangle `t`. Vector functions come as the value
    /// and gradient of their single nonzero component.
    fn eval(&self, t: usize, x: Point) -> Vec<(usize, f64, [f64; 2])> {
        let ns = self.space.n_scalar;
        let mut out = vec![(0, 0.0, [0.0, 0.0]); self.dim()];
        for (i, o) in out.iter_mut().enumerate() {
            o.0 = i / ns;
        }
        let Some((inv, c, l)) = &self.local[t] else { return out };
        let (mv, mg) = monomials(x, *c, *l, self.space.family.degree());
        for (k, &d) in self.space.cell(t).iter().enumerate() {
            let mut v = 0.0;
            let mut g = [0.0, 0.0];
            for m in 0..mv.len() {
                v += mv[m] * inv[m][k];
                g[0] += mg[m][0] * inv[m][k];
                g[1] += mg[m][1] * inv[m][k];
            }
            for comp in 0..self.space.components {
                out[comp * ns + d].1 = v;
                out[comp * ns + d].2 = g;
            }
        }
        out
    }

    /// Field value (`[u, 0]` for scalars) and gradient rows at `x` on `t`.
    fn field(&self, values: &[f64], t: usize, x: Point) -> ([f64; 2], [[f64; 2]; 2]) {
        let mut u = [0.0; 2];
        let mut g = [[0.0; 2]; 2];
        for (i, (c, v, d)) in self.eval(t, x).into_iter().enumerate() {
            u[c] += values[i] * v;
            g[c][0] += values[i] * d[0];
            g[c][1] += values[i] * d[1];
        }
        (u, g)
    }
}

fn unit(c: usize) -> [f64; 2] {
    if c == 0 {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    }
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn tensor_apply(k: &Tensor, v: [f64; 2]) -> [f64; 2] {
    [k[0][0] * v[0] + k[0][1] * v[1], k[1][0] * v[0] + k[1][1] * v[1]]
}

/// Dense `A[i][j] = Σ_t ∫_t kernel(t, x, ψ_i, ψ_j)` over triangles in both spaces.
fn dense_matrix(
    mesh: &Mesh,
    rows: &DenseSpace,
    cols: &DenseSpace,
    kernel: impl Fn(usize, Point, (usize, f64, [f64; 2]), (usize, f64, [f64; 2])) -> f64,
) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; cols.dim()]; rows.dim()];
    for t in 0..mesh.num_triangles() {
        if rows.local[t].is_none() || cols.local[t].is_none() {
            continue;
        }
        for q in triangle_points(mesh.vertices(t)) {
            let (br, bc) = (rows.eval(t, q.x), cols.eval(t, q.x));
            for i in 0..rows.dim() {
                for j in 0..cols.dim() {
                    a[i][j] += q.w * kernel(t, q.x, br[i], bc[j]);
                }
            }
        }
    }
    a
}

fn dense_vector(
    mesh: &Mesh,
    space: &DenseSpace,
    kernel: impl Fn(usize, Point, (usize, f64, [f64; 2])) -> f64,
) -> Vec<f64> {
    let mut out = vec![0.0; space.dim()];
    for t in 0..mesh.num_triangles() {
        if space.local[t].is_none() {
            continue;
        }
        for q in triangle_points(mesh.vertices(t)) {
            for (i, b) in space.eval(t, q.x).into_iter().enumerate() {
                out[i] += q.w * kernel(t, q.x, b);
            }
        }
    }
    out
}

/// Interface edges found by brute force: `(a, b, fluid triangle, porous
/// triangle, unit normal from fluid to porous)`.
fn interface_edges(mesh: &Mesh) -> Vec<(Point, Point, usize, usize, Point)> {
    let mut out = Vec::new();
    for f in 0..mesh.num_triangles() {
        if mesh.subdomain[f] != Subdomain::Fluid {
            continue;
        }
        for p in 0..mesh.num_triangles() {
            if mesh.subdomain[p] != Subdomain::Porous {
                continue;
            }
            let shared: Vec<usize> =
                mesh.triangles[f].iter().copied().filter(|v| mesh.triangles[p].contains(v)).collect();
            if shared.len() != 2 {
                continue;
            }
            let (a, b) = (mesh.nodes[shared[0]], mesh.nodes[shared[1]]);
            let third = mesh.triangles[f].iter().copied().find(|v| !shared.contains(v)).unwrap();
            let o = mesh.nodes[third];
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            let mut n = [(b[1] - a[1]) / len, -(b[0] - a[0]) / len];
            if dot(n, [o[0] - a[0], o[1] - a[1]]) > 0.0 {
                n = [-n[0], -n[1]];
            }
            out.push((a, b, f, p, n));
        }
    }
    out
}

fn dense_interface_matrix(
    mesh: &Mesh,
    rows: &DenseSpace,
    cols: &DenseSpace,
    kernel: impl Fn(Point, Point, (usize, f64, [f64; 2]), (usize, f64, [f64; 2])) -> f64,
) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; cols.dim()]; rows.dim()];
    for (p0, p1, f, p, n) in interface_edges(mesh) {
        let tr = if rows.local[f].is_some() { f } else { p };
        let tc = if cols.local[f].is_some() { f } else { p };
        for q in segment_points(p0, p1) {
            let (br, bc) = (rows.eval(tr, q.x), cols.eval(tc, q.x));
            for i in 0..rows.dim() {
                for j in 0..cols.dim() {
                    a[i][j] += q.w * kernel(q.x, n, br[i], bc[j]);
                }
            }
        }
    }
    a
}

fn compare_matrix(name: &str, assembled: &CsrMatrix, oracle: &[Vec<f64>]) -> Comparison {
    let dense = assembled.to_dense();
    let mut max_error: f64 = 0.0;
    let mut max_value: f64 = 0.0;
    if dense.len() != oracle.len() || dense.first().map(Vec::len) != oracle.first().map(Vec::len) {
        max_error = f64::INFINITY;
    } else {
        for (r, o) in dense.iter().zip(oracle) {
            for (x, y) in r.iter().zip(o) {
                max_error = max_error.max((x - y).abs());
                max_value = max_value.max(y.abs());
            }
        }
    }
    Comparison { name: name.to_string(), max_error, max_value, tolerance: ASSEMBLY_TOLERANCE }
}

fn compare_vector(name: &str, assembled: &[f64], oracle: &[f64]) -> Comparison {
    let mut max_error: f64 = if assembled.len() == oracle.len() { 0.0 } else { f64::INFINITY };
    let mut max_value: f64 = 0.0;
    for (x, y) in assembled.iter().zip(oracle) {
        max_error = max_error.max((x - y).abs());
        max_value = max_value.max(y.abs());
    }
    Comparison { name: name.to_string(), max_error, max_value, tolerance: ASSEMBLY_TOLERANCE }
}

fn compare_scalar(name: &str, assembled: f64, oracle: f64) -> Comparison {
    compare_vector(name, &[assembled], &[oracle])
}

fn conductivity(t: usize) -> Tensor {
    let s = t as f64;
    [[1.0 + 0.1 * s, 0.2 - 0.03 * s], [0.2 - 0.03 * s, 2.0 - 0.05 * s]]
}

fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn cubic(x: Point) -> [f64; 2] {
    [1.0 + x[0] * x[0] * x[1] - 0.5 * x[1].powi(3), x[0] - 2.0 * x[0] * x[1] * x[1]]
}

/// Compares every assembly routine against the dense oracle on `mesh`.
pub fn assembly_comparisons(mesh: &Mesh, seed: u64) -> Vec<Comparison> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p1_whole = Arc::new(build_dof_map(mesh, BasisFamily::Linear, 1, DofDomain::Whole));
    let p1_fluid = build_dof_map(mesh, BasisFamily::Linear, 1, DofDomain::Fluid);
    let p1_porous = Arc::new(build_dof_map(mesh, BasisFamily::Linear, 1, DofDomain::Porous));
    let p2_fluid = Arc::new(build_dof_map(mesh, BasisFamily::Quadratic, 2, DofDomain::Fluid));
    let p2_porous = Arc::new(build_dof_map(mesh, BasisFamily::Quadratic, 2, DofDomain::Porous));
    let p2_scalar = build_dof_map(mesh, BasisFamily::Quadratic, 1, DofDomain::Whole);

    let d_p1w = DenseSpace::new(mesh, &p1_whole);
    let d_p1f = DenseSpace::new(mesh, &p1_fluid);
    let d_p1p = DenseSpace::new(mesh, &p1_porous);
    let d_p2f = DenseSpace::new(mesh, &p2_fluid);
    let d_p2p = DenseSpace::new(mesh, &p2_porous);
    let d_p2s = DenseSpace::new(mesh, &p2_scalar);

    let vv = |a: (usize, f64, [f64; 2]), b: (usize, f64, [f64; 2])| if a.0 == b.0 { a.1 * b.1 } else { 0.0 };
    let gg = |a: (usize, f64, [f64; 2]), b: (usize, f64, [f64; 2])| if a.0 == b.0 { dot(a.2, b.2) } else { 0.0 };

    let mut out = Vec::new();
    for (name, space, dense, w) in [
        ("mass P1 whole", &*p1_whole, &d_p1w, 0.7),
        ("mass P1 porous", &*p1_porous, &d_p1p, 1.0),
        ("mass P2 scalar", &p2_scalar, &d_p2s, 2.5),
        ("mass P2 vector fluid", &*p2_fluid, &d_p2f, 1.3),
    ] {
        let o = dense_matrix(mesh, dense, dense, |_, _, a, b| w * vv(a, b));
        out.push(compare_matrix(name, &forms::mass_matrix(mesh, space, w), &o));
    }

    let o = dense_matrix(mesh, &d_p2p, &d_p2p, |t, _, a, b| tensor_apply(&conductivity(t), unit(b.0))[a.0] * a.1 * b.1);
    out.push(compare_matrix("tensor mass P2 porous", &forms::tensor_mass_matrix(mesh, &p2_porous, &conductivity), &o));

    let o = dense_matrix(mesh, &d_p1p, &d_p1p, |t, _, a, b| dot(tensor_apply(&conductivity(t), a.2), b.2));
    out.push(compare_matrix("stiffness P1 porous", &forms::stiffness_matrix(mesh, &p1_porous, &conductivity), &o));

    let o = dense_matrix(mesh, &d_p2f, &d_p2f, |_, _, a, b| 0.03 * gg(a, b));
    out.push(compare_matrix("laplace P2 vector fluid", &forms::laplace_matrix(mesh, &p2_fluid, 0.03), &o));

    let phi = Field::new(&p1_whole, random_values(&mut rng, p1_whole.total_dofs())).expect("sized");
    let mu = Field::new(&p1_whole, random_values(&mut rng, p1_whole.total_dofs())).expect("sized");
    let o = dense_matrix(mesh, &d_p1w, &d_p1w, |_, _, a, b| 0.3 * gg(a, b));
    out.push(compare_matrix(
        "mobility constant",
        &forms::mobility_matrix(mesh, &p1_whole, &phi, Mobility::Constant(0.3)),
        &o,
    ));
    let flat = Field::new(&p1_whole, vec![0.4; p1_whole.total_dofs()]).expect("sized");
    let m = Mobility::Regularized(0.05).eval(0.4);
    let o = dense_matrix(mesh, &d_p1w, &d_p1w, |_, _, a, b| m * gg(a, b));
    out.push(compare_matrix(
        "mobility regularized, uniform phase",
        &forms::mobility_matrix(mesh, &p1_whole, &flat, Mobility::Regularized(0.05)),
        &o,
    ));

    let o = dense_matrix(mesh, &d_p1f, &d_p2f, |_, _, q, v| q.1 * v.2[v.0]);
    out.push(compare_matrix("divergence fluid", &forms::divergence_matrix(mesh, &p2_fluid, &p1_fluid), &o));
    let o = dense_matrix(mesh, &d_p1p, &d_p2p, |_, _, q, v| q.2[v.0] * v.1);
    out.push(compare_matrix(
        "gradient pairing porous",
        &forms::gradient_pairing_matrix(mesh, &p2_porous, &p1_porous),
        &o,
    ));

    let gamma = |a: Point, b: Point| 1.0 + 0.25 * (a[0] + b[0]) - 0.1 * (a[1] + b[1]);
    let edges = interface_edges(mesh);
    let o = {
        let mut acc = vec![vec![0.0; d_p2f.dim()]; d_p2f.dim()];
        for &(a, b, f, _, n) in &edges {
            let tau = [-n[1], n[0]];
            let g = gamma(a, b);
            for q in segment_points(a, b) {
                let bv = d_p2f.eval(f, q.x);
                for i in 0..bv.len() {
                    for j in 0..bv.len() {
                        acc[i][j] += q.w * g * bv[i].1 * tau[bv[i].0] * bv[j].1 * tau[bv[j].0];
                    }
                }
            }
        }
        acc
    };
    let assembled = forms::bjs_matrix(mesh, &p2_fluid, &|e| gamma(mesh.nodes[e.nodes[0]], mesh.nodes[e.nodes[1]]));
    out.push(compare_matrix("bjs", &assembled, &o));

    let o = dense_interface_matrix(mesh, &d_p2f, &d_p1p, |_, n, v, h| 9.8 * v.1 * n[v.0] * h.1);
    out.push(compare_matrix("interface coupling", &forms::cgamma_matrix(mesh, &p2_fluid, &p1_porous, 9.8), &o));

    let u = Field::new(&p2_fluid, random_values(&mut rng, p2_fluid.total_dofs())).expect("sized");
    let up = Field::new(&p2_porous, random_values(&mut rng, p2_porous.total_dofs())).expect("sized");
    for (name, form) in [("convection standard", Convection::Standard), ("convection emac", Convection::Emac)] {
        let mut o = dense_vector(mesh, &d_p2f, |t, x, w| {
            let (uv, g) = d_p2f.field(&u.values, t, x);
            let r = match form {
                Convection::Standard => [dot(uv, g[0]), dot(uv, g[1])],
                Convection::Emac => {
                    let div = g[0][0] + g[1][1];
                    let mut r = [0.0; 2];
                    for i in 0..2 {
                        for j in 0..2 {
                            r[i] += (g[i][j] + g[j][i]) * uv[j];
                        }
                        r[i] += div * uv[i];
                    }
                    r
                }
            };
            r[w.0] * w.1
        });
        let factor = if form == Convection::Standard { -0.5 } else { -1.0 };
        for &(a, b, f, _, n) in &edges {
            for q in segment_points(a, b) {
                let (uv, _) = d_p2f.field(&u.values, f, q.x);
                for (i, w) in d_p2f.eval(f, q.x).into_iter().enumerate() {
                    o[i] += q.w * factor * dot(uv, uv) * w.1 * n[w.0];
                }
            }
        }
        out.push(compare_vector(name, &forms::convection_vector(mesh, &u, form), &o));
    }

    let o = dense_vector(mesh, &d_p2f, |_, x, w| cubic(x)[w.0] * w.1);
    out.push(compare_vector("load vector", &forms::load_vector(mesh, &p2_fluid, &cubic), &o));
    let o = dense_vector(mesh, &d_p1p, |_, x, w| cubic(x)[1] * w.1);
    out.push(compare_vector("load scalar", &forms::load_scalar(mesh, &p1_porous, &|x| cubic(x)[1]), &o));

    let lin = |x: Point| [1.0 - 2.0 * x[0] + x[1], 0.5 + x[0] * x[1]];
    for (name, space, dense) in
        [("interface load fluid", &*p2_fluid, &d_p2f), ("interface load porous", &*p1_porous, &d_p1p)]
    {
        let mut o = vec![0.0; dense.dim()];
        for &(a, b, f, p, _) in &edges {
            let t = if dense.local[f].is_some() { f } else { p };
            for q in segment_points(a, b) {
                for (i, w) in dense.eval(t, q.x).into_iter().enumerate() {
                    o[i] += q.w * lin(q.x)[w.0] * w.1;
                }
            }
        }
        out.push(compare_vector(name, &forms::interface_load_vector(mesh, space, &lin), &o));
    }

    for (name, space, dense) in
        [("phase coupling fluid", &p2_fluid, &d_p2f), ("phase coupling porous", &p2_porous, &d_p2p)]
    {
        let o = dense_vector(mesh, dense, |t, x, w| {
            let p = d_p1w.field(&phi.values, t, x).0[0];
            let gm = d_p1w.field(&mu.values, t, x).1[0];
            p * gm[w.0] * w.1
        });
        out.push(compare_vector(name, &forms::phase_coupling_vector(mesh, &phi, &mu, space), &o));
    }

    let (mean, bvec) = (0.1, [0.3, -2.0]);
    let o = dense_vector(mesh, &d_p2f, |t, x, w| bvec[w.0] * (d_p1w.field(&phi.values, t, x).0[0] - mean) * w.1);
    out.push(compare_vector("buoyancy", &forms::buoyancy_vector(mesh, &phi, mean, bvec, &p2_fluid), &o));

    let o = dense_vector(mesh, &d_p1w, |t, x, w| {
        let p = d_p1w.field(&phi.values, t, x).0[0];
        let uv = if mesh.subdomain[t] == Subdomain::Fluid {
            d_p2f.field(&u.values, t, x).0
        } else {
            d_p2p.field(&up.values, t, x).0
        };
        p * dot(uv, w.2)
    });
    out.push(compare_vector("transport", &forms::transport_vector(mesh, &p1_whole, &phi, &u, &up), &o));

    let o =
        dense_vector(mesh, &d_p1w, |t, x, w| forms::double_well_derivative(d_p1w.field(&phi.values, t, x).0[0]) * w.1);
    out.push(compare_vector("potential", &forms::potential_vector(mesh, &phi), &o));

    let quad = |f: &dyn Fn(usize, Point) -> f64| -> f64 {
        (0..mesh.num_triangles())
            .flat_map(|t| triangle_points(mesh.vertices(t)).into_iter().map(move |q| (t, q)))
            .map(|(t, q)| q.w * f(t, q.x))
            .sum()
    };
    let total = quad(&|t, x| d_p1w.field(&phi.values, t, x).0[0]);
    out.push(compare_scalar("phase integral", forms::integral(mesh, &phi), total));
    let g_energy = quad(&|t, x| forms::double_well(d_p1w.field(&phi.values, t, x).0[0]));
    out.push(compare_scalar("double-well energy", forms::double_well_energy(mesh, &phi), g_energy));
    let diss = quad(&|t, x| {
        let g = d_p1w.field(&mu.values, t, x).1[0];
        0.3 * dot(g, g)
    });
    out.push(compare_scalar(
        "mobility dissipation",
        forms::mobility_dissipation(mesh, &phi, &mu, Mobility::Constant(0.3)),
        diss,
    ));
    out
}

/// Runs [`assembly_comparisons`] on every mesh of [`small_meshes`], prefixing
/// each name with the mesh label.
pub fn assembly_oracle(seed: u64) -> Vec<Comparison> {
    small_meshes()
        .into_iter()
        .flat_map(|(label, mesh)| {
            assembly_comparisons(&mesh, seed).into_iter().map(move |mut c| {
                c.name = format!("{label}: {}", c.name);
                c
            })
        })
        .collect()
}

/// Fourth-order central first derivative.
fn d1(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Fourth-order central second derivative.
fn d2(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 16.0 * f(x + h) - 30.0 * f(x) + 16.0 * f(x - h) - f(x - 2.0 * h)) / (12.0 * h * h)
}

const FD_FIRST: f64 = 1e-3;
const FD_SECOND: f64 = 4e-3;

/// Fluid forcing from finite differences of the closed-form `u` and `p`.
pub fn differenced_fluid_forcing(case: &ManufacturedCase, x: Point, t: f64) -> [f64; 2] {
    let nu = case.coefficients.nu;
    let u = case.u(x, t);
    let mut out = [0.0; 2];
    for c in 0..2 {
        let ut = d1(|s| case.u(x, s)[c], t, FD_FIRST);
        let uxx = d2(|s| case.u([s, x[1]], t)[c], x[0], FD_SECOND);
        let uyy = d2(|s| case.u([x[0], s], t)[c], x[1], FD_SECOND);
        let ux = d1(|s| case.u([s, x[1]], t)[c], x[0], FD_FIRST);
        let uy = d1(|s| case.u([x[0], s], t)[c], x[1], FD_FIRST);
        let px = if c == 0 {
            d1(|s| case.p([s, x[1]], t), x[0], FD_FIRST)
        } else {
            d1(|s| case.p([x[0], s], t), x[1], FD_FIRST)
        };
        out[c] = ut - nu * (uxx + uyy) + px + u[0] * ux + u[1] * uy;
    }
    out
}

/// Porous forcing from finite differences of the closed-form `φ`, `K = I`.
pub fn differenced_porous_forcing(case: &ManufacturedCase, x: Point, t: f64) -> f64 {
    let phi_t = d1(|s| case.phi(x, s), t, FD_FIRST);
    let lap = d2(|s| case.phi([s, x[1]], t), x[0], FD_SECOND) + d2(|s| case.phi([x[0], s], t), x[1], FD_SECOND);
    case.coefficients.s0 * phi_t - lap
}

fn sample_points(r: Rect, n: usize) -> Vec<Point> {
    let mut out = Vec::new();
    for i in 0..=n {
        for j in 0..=n {
            out.push([r.x_min + r.width() * i as f64 / n as f64, r.y_min + r.height() * j as f64 / n as f64]);
        }
    }
    out
}

/// Compares the hand-derived forcing of each case with the differenced one
/// on a grid of points, boundaries included, at several times.
pub fn forcing_oracle() -> Result<Vec<Comparison>> {
    let times = [0.0, 0.3, std::f64::consts::FRAC_PI_2, 1.0];
    let mut out = Vec::new();
    for id in [CaseId::Ex1, CaseId::Ex2] {
        let case = ManufacturedCase::new(id);
        let (mut fe, mut fv, mut pe, mut pv) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for &t in &times {
            for x in sample_points(case.geometry.fluid, 10) {
                let a = case.fluid_forcing(x, t)?;
                let b = differenced_fluid_forcing(&case, x, t);
                for c in 0..2 {
                    fe = fe.max((a[c] - b[c]).abs());
                    fv = fv.max(b[c].abs());
                }
            }
            for x in sample_points(case.geometry.porous, 10) {
                let a = case.porous_forcing(x, t)?;
                let b = differenced_porous_forcing(&case, x, t);
                pe = pe.max((a - b).abs());
                pv = pv.max(b.abs());
            }
        }
        out.push(Comparison {
            name: format!("{id} fluid forcing"),
            max_error: fe / fv.max(1.0),
            max_value: fv,
            tolerance: FORCING_TOLERANCE,
        });
        out.push(Comparison {
            name: format!("{id} porous forcing"),
            max_error: pe / pv.max(1.0),
            max_value: pv,
            tolerance: FORCING_TOLERANCE,
        });
    }
    Ok(out)
}
