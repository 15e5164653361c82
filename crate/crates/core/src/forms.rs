//! Assembly of the bilinear, trilinear and interface forms.
//!
//! Vector fields use the blocked layout of [`DofMap`]: all x-components,
//! then all y-components. Local element indices follow the same pattern,
//! `component * local_count + local`.

use std::sync::Arc;

use crate::elements::{quadrature_rule, BasisEval, DofMap, ElementMap, Entity, QuadratureRule};
use crate::error::{Error, Result};
use crate::mesh::{EdgeTag, Mesh, Point, TaggedEdge};
use crate::par;
use crate::sparse::{CsrMatrix, Triplets};

/// Exact for the quintic integrands of the convection forms on quadratic fields.
pub const VOLUME_DEGREE: usize = 5;
/// Exact for the sextic interface integrand `|u|² (w·n)`.
pub const EDGE_DEGREE: usize = 7;

pub type Tensor = [[f64; 2]; 2];

pub const IDENTITY: Tensor = [[1.0, 0.0], [0.0, 1.0]];

pub fn tensor_scaled(s: f64) -> Tensor {
    [[s, 0.0], [0.0, s]]
}

pub fn tensor_inverse(k: Tensor) -> Tensor {
    let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
    [[k[1][1] / det, -k[0][1] / det], [-k[1][0] / det, k[0][0] / det]]
}

fn apply(k: &Tensor, v: [f64; 2]) -> [f64; 2] {
    [k[0][0] * v[0] + k[0][1] * v[1], k[1][0] * v[0] + k[1][1] * v[1]]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Hydraulic conductivity, constant or piecewise constant per triangle.
#[derive(Clone, Debug, PartialEq)]
pub enum Conductivity {
    Uniform(Tensor),
    PerTriangle(Vec<Tensor>),
}

impl Conductivity {
    pub fn scalar(k: f64) -> Self {
        Conductivity::Uniform(tensor_scaled(k))
    }

    pub fn at(&self, triangle: usize) -> Tensor {
        match self {
            Conductivity::Uniform(k) => *k,
            Conductivity::PerTriangle(ks) => ks[triangle],
        }
    }

    pub fn trace_at(&self, triangle: usize) -> f64 {
        let k = self.at(triangle);
        k[0][0] + k[1][1]
    }

    /// Checks symmetry and positive definiteness on every porous triangle.
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        let check = |k: &Tensor, t: Option<usize>| -> Result<()> {
            let asym = (k[0][1] - k[1][0]).abs();
            let scale = k[0][0].abs().max(k[1][1].abs());
            let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
            if asym > 1e-14 * scale || !(k[0][0] > 0.0) || !(det > 0.0) {
                let at = t.map(|t| format!(" on triangle {t}")).unwrap_or_default();
                return Err(Error::Coefficient(format!("conductivity {k:?}{at} is not symmetric positive definite")));
            }
            Ok(())
        };
        match self {
            Conductivity::Uniform(k) => check(k, None),
            Conductivity::PerTriangle(ks) => {
                if ks.len() != mesh.num_triangles() {
                    return Err(Error::Coefficient(format!(
                        "{} conductivity tensors for {} triangles",
                        ks.len(),
                        mesh.num_triangles()
                    )));
                }
                for t in mesh.triangles_in(crate::mesh::Subdomain::Porous) {
                    check(&ks[t], Some(t))?;
                }
                Ok(())
            }
        }
    }
}

/// Cahn–Hilliard mobility.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mobility {
    Constant(f64),
    /// `M(φ) = ε √((1 − φ)² + ε²)`.
    Regularized(f64),
}

impl Mobility {
    pub fn eval(self, phi: f64) -> f64 {
        match self {
            Mobility::Constant(m) => m,
            Mobility::Regularized(eps) => eps * ((1.0 - phi).powi(2) + eps * eps).sqrt(),
        }
    }
}

/// Physical and model coefficients shared by the forms.
#[derive(Clone, Debug, PartialEq)]
pub struct FormCoefficients {
    pub nu: f64,
    pub g: f64,
    pub s0: f64,
    pub conductivity: Conductivity,
    pub alpha: f64,
    /// Porous viscosity, only used by the two-phase interface condition.
    pub nu_p: f64,
    pub lambda: f64,
    pub eps: f64,
    pub chi: f64,
    pub mobility: Mobility,
    pub buoyancy: [f64; 2],
}

impl Default for FormCoefficients {
    fn default() -> Self {
        Self {
            nu: 1.0,
            g: 1.0,
            s0: 1.0,
            conductivity: Conductivity::Uniform(IDENTITY),
            alpha: 1.0,
            nu_p: 1.0,
            lambda: 1.0,
            eps: 1.0,
            chi: 1.0,
            mobility: Mobility::Constant(1.0),
            buoyancy: [0.0, 0.0],
        }
    }
}

impl FormCoefficients {
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        for (name, v) in [("nu", self.nu), ("g", self.g), ("s0", self.s0), ("eps", self.eps), ("chi", self.chi)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Coefficient(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Coefficient(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        self.conductivity.validate(mesh)
    }

    /// `α √(ν g / tr K)` on an interface edge.
    pub fn bjs_nsd(&self, edge: &TaggedEdge) -> f64 {
        let t = edge.porous_triangle.expect("interface edge without porous neighbour");
        self.alpha * (self.nu * self.g / self.conductivity.trace_at(t)).sqrt()
    }

    /// `α ν_f √d / √(ν_p tr K)` on an interface edge, `d = 2`.
    pub fn bjs_chnsd(&self, edge: &TaggedEdge) -> f64 {
        let t = edge.porous_triangle.expect("interface edge without porous neighbour");
        self.alpha * self.nu * 2f64.sqrt() / (self.nu_p * self.conductivity.trace_at(t)).sqrt()
    }
}

/// Coefficients attached to a DOF map.
#[derive(Clone, Debug)]
pub struct Field {
    pub space: Arc<DofMap>,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(space: &Arc<DofMap>) -> Self {
        Self { space: space.clone(), values: vec![0.0; space.total_dofs()] }
    }

    pub fn new(space: &Arc<DofMap>, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.total_dofs() {
            return Err(Error::Dimension(format!(
                "{} coefficients for a space with {} dofs",
                values.len(),
                space.total_dofs()
            )));
        }
        Ok(Self { space: space.clone(), values })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { space: self.space.clone(), values: self.values.iter().map(|v| v * s).collect() }
    }

    /// Element coefficients `[component][local]`.
    pub fn local(&self, t: usize) -> [[f64; 6]; 2] {
        local_coefficients(&self.space, &self.values, t)
    }

    /// Value (component 0 for scalars) and gradient rows at a basis evaluation.
    pub fn eval(&self, t: usize, be: &BasisEval) -> ([f64; 2], [[f64; 2]; 2]) {
        eval_local(&self.local(t), self.space.components, be)
    }

    /// Evaluates the field at an arbitrary point of the mesh.
    pub fn eval_at(&self, mesh: &Mesh, p: Point) -> Option<([f64; 2], [[f64; 2]; 2])> {
        let (t, lam) = mesh.locate_in(p, |t| self.space.contains_triangle(t))?;
        let be = ElementMap::of(mesh, t).eval(self.space.family, lam);
        Some(self.eval(t, &be))
    }
}

pub fn local_coefficients(space: &DofMap, values: &[f64], t: usize) -> [[f64; 6]; 2] {
    let mut out = [[0.0; 6]; 2];
    for c in 0..space.components {
        for i in 0..space.local_count() {
            out[c][i] = values[space.dof_of(t, i, c)];
        }
    }
    out
}

pub fn eval_local(coef: &[[f64; 6]; 2], components: usize, be: &BasisEval) -> ([f64; 2], [[f64; 2]; 2]) {
    let mut v = [0.0; 2];
    let mut g = [[0.0; 2]; 2];
    for c in 0..components {
        for i in 0..be.n {
            v[c] += coef[c][i] * be.values[i];
            g[c][0] += coef[c][i] * be.grads[i][0];
            g[c][1] += coef[c][i] * be.grads[i][1];
        }
    }
    (v, g)
}

/// A quadrature point mapped to a triangle.
#[derive(Clone, Copy, Debug)]
pub struct Qp {
    pub weight: f64,
    pub x: Point,
    pub lam: [f64; 3],
}

pub fn volume_points(emap: &ElementMap, rule: &QuadratureRule) -> Vec<Qp> {
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(&lam, &w)| Qp { weight: 2.0 * emap.area * w, x: emap.point(lam), lam })
        .collect()
}

/// Quadrature points along an edge, expressed in the barycentric
/// coordinates of `triangle`.
pub fn edge_points(mesh: &Mesh, nodes: [usize; 2], triangle: usize, rule: &QuadratureRule, length: f64) -> Vec<Qp> {
    let tri = mesh.triangles[triangle];
    let a = tri.iter().position(|&v| v == nodes[0]).expect("edge node not in triangle");
    let b = tri.iter().position(|&v| v == nodes[1]).expect("edge node not in triangle");
    let (p0, p1) = (mesh.nodes[nodes[0]], mesh.nodes[nodes[1]]);
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(pt, &w)| {
            let s = pt[1];
            let mut lam = [0.0; 3];
            lam[a] = 1.0 - s;
            lam[b] = s;
            Qp { weight: w * length, x: [p0[0] + s * (p1[0] - p0[0]), p0[1] + s * (p1[1] - p0[1])], lam }
        })
        .collect()
}

fn volume_rule() -> QuadratureRule {
    quadrature_rule(Entity::Triangle, VOLUME_DEGREE).expect("supported degree")
}

fn edge_rule() -> QuadratureRule {
    quadrature_rule(Entity::Edge, EDGE_DEGREE).expect("supported degree")
}

type Local = [[f64; 12]; 12];

/// Generic element loop for a bilinear form. `kernel(t, emap, local)` fills
/// the dense element matrix.
pub fn assemble_matrix<F>(mesh: &Mesh, rows: &DofMap, cols: &DofMap, kernel: F) -> CsrMatrix
where
    F: Fn(usize, &ElementMap, &mut Local) + Sync + Send,
{
    let triangles: Vec<usize> = rows.triangles.iter().copied().filter(|&t| cols.contains_triangle(t)).collect();
    let (nr, nc) = (rows.local_count(), cols.local_count());
    let blocks = par::map(&triangles, |t| {
        let emap = ElementMap::of(mesh, t);
        let mut local = [[0.0; 12]; 12];
        kernel(t, &emap, &mut local);
        let mut out = Vec::with_capacity(rows.components * nr * cols.components * nc);
        for ci in 0..rows.components {
            for i in 0..nr {
                let gi = rows.dof_of(t, i, ci);
                for cj in 0..cols.components {
                    for j in 0..nc {
                        out.push((gi, cols.dof_of(t, j, cj), local[ci * nr + i][cj * nc + j]));
                    }
                }
            }
        }
        out
    });
    let mut trip = Triplets::with_capacity(blocks.iter().map(Vec::len).sum());
    for b in blocks {
        trip.entries.extend(b);
    }
    CsrMatrix::from_triplets(rows.total_dofs(), cols.total_dofs(), &trip.entries).expect("dofs in range")
}

/// Generic element loop for a linear form.
pub fn assemble_vector<F>(mesh: &Mesh, space: &DofMap, kernel: F) -> Vec<f64>
where
    F: Fn(usize, &ElementMap, &mut [f64; 12]) + Sync + Send,
{
    let n = space.local_count();
    let blocks = par::map(&space.triangles, |t| {
        let emap = ElementMap::of(mesh, t);
        let mut local = [0.0; 12];
        kernel(t, &emap, &mut local);
        local
    });
    let mut out = vec![0.0; space.total_dofs()];
    for (&t, local) in space.triangles.iter().zip(&blocks) {
        for c in 0..space.components {
            for i in 0..n {
                out[space.dof_of(t, i, c)] += local[c * n + i];
            }
        }
    }
    out
}

/// Sums `f` over the quadrature points of the given triangles.
pub fn integrate<F>(mesh: &Mesh, triangles: &[usize], degree: usize, f: F) -> Result<f64>
where
    F: Fn(usize, &ElementMap, &Qp) -> f64 + Sync + Send,
{
    let rule = quadrature_rule(Entity::Triangle, degree)?;
    let parts = par::map(triangles, |t| {
        let emap = ElementMap::of(mesh, t);
        volume_points(&emap, &rule).iter().map(|q| f(t, &emap, q)).sum::<f64>()
    });
    Ok(parts.iter().sum())
}

/// `weight ∫ u·v` on a scalar or vector space.
pub fn mass_matrix(mesh: &Mesh, space: &DofMap, weight: f64) -> CsrMatrix {
    let rule = volume_rule();
    let n = space.local_count();
    assemble_matrix(mesh, space, space, |_, emap, local| {
        for q in volume_points(emap, &rule) {
            let be = emap.eval(space.family, q.lam);
            for i in 0..n {
                for j in 0..n {
                    let v = weight * q.weight * be.values[i] * be.values[j];
                    for c in 0..space.components {
                        local[c * n + i][c * n + j] += v;
                    }
                }
            }
        }
    })
}

/// `∫ (T u)·v` on a vector space with a per-triangle tensor `T`.
pub fn tensor_mass_matrix(mesh: &Mesh, space: &DofMap, tensor: &(dyn Fn(usize) -> Tensor + Sync)) -> CsrMatrix {
    assert_eq!(space.components, 2);
    let rule = volume_rule();
    let n = space.local_count();
    assemble_matrix(mesh, space, space, |t, emap, local| {
        let k = tensor(t);
        for q in volume_points(emap, &rule) {
            let be = emap.eval(space.family, q.lam);
            for i in 0..n {
                for j in 0..n {
                    let v = q.weight * be.values[i] * be.values[j];
                    for a in 0..2 {
                        for b in 0..2 {
                            local[a * n + i][b * n + j] += k[a][b] * v;
                        }
                    }
                }
            }
        }
    })
}

/// `∫ (T ∇u)·∇v`, componentwise for vector spaces.
pub fn stiffness_matrix(mesh: &Mesh, space: &DofMap, tensor: &(dyn Fn(usize) -> Tensor + Sync)) -> CsrMatrix {
    let rule = volume_rule();
    let n = space.local_count();
    assemble_matrix(mesh, space, space, |t, emap, local| {
        let k = tensor(t);
        for q in volume_points(emap, &rule) {
            let be = emap.eval(space.family, q.lam);
            for i in 0..n {
                let kg = apply(&k, be.grads[i]);
                for j in 0..n {
                    let v = q.weight * dot(kg, be.grads[j]);
                    for c in 0..space.components {
                        local[c * n + i][c * n + j] += v;
                    }
                }
            }
        }
    })
}

/// `coef ∫ ∇u:∇v`.
pub fn laplace_matrix(mesh: &Mesh, space: &DofMap, coef: f64) -> CsrMatrix {
    stiffness_matrix(mesh, space, &|_| tensor_scaled(coef))
}

/// `∫ M(φ) ∇u·∇v` with the mobility evaluated pointwise from `phi`.
pub fn mobility_matrix(mesh: &Mesh, space: &DofMap, phi: &Field, mobility: Mobility) -> CsrMatrix {
    let rule = volume_rule();
    let n = space.local_count();
    assemble_matrix(mesh, space, space, |t, emap, local| {
        let pc = phi.local(t);
        for q in volume_points(emap, &rule) {
            let bp = emap.eval(phi.space.family, q.lam);
            let m = mobility.eval(eval_local(&pc, 1, &bp).0[0]);
            let be = emap.eval(space.family, q.lam);
            for i in 0..n {
                for j in 0..n {
                    local[i][j] += m * q.weight * dot(be.grads[i], be.grads[j]);
                }
            }
        }
    })
}

/// `B[q, v] = ∫ q ∇·v`.
pub fn divergence_matrix(mesh: &Mesh, velocity: &DofMap, pressure: &DofMap) -> CsrMatrix {
    assert_eq!(velocity.components, 2);
    let rule = volume_rule();
    let (np, nv) = (pressure.local_count(), velocity.local_count());
    assemble_matrix(mesh, pressure, velocity, |_, emap, local| {
        for q in volume_points(emap, &rule) {
            let bp = emap.eval(pressure.family, q.lam);
            let bv = emap.eval(velocity.family, q.lam);
            for i in 0..np {
                for j in 0..nv {
                    for c in 0..2 {
                        local[i][c * nv + j] += q.weight * bp.values[i] * bv.grads[j][c];
                    }
                }
            }
        }
    })
}

/// `D[q, v] = ∫ v·∇q`.
pub fn gradient_pairing_matrix(mesh: &Mesh, velocity: &DofMap, pressure: &DofMap) -> CsrMatrix {
    assert_eq!(velocity.components, 2);
    let rule = volume_rule();
    let (np, nv) = (pressure.local_count(), velocity.local_count());
    assemble_matrix(mesh, pressure, velocity, |_, emap, local| {
        for q in volume_points(emap, &rule) {
            let bp = emap.eval(pressure.family, q.lam);
            let bv = emap.eval(velocity.family, q.lam);
            for i in 0..np {
                for j in 0..nv {
                    for c in 0..2 {
                        local[i][c * nv + j] += q.weight * bp.grads[i][c] * bv.values[j];
                    }
                }
            }
        }
    })
}

/// Element-local DOF triples for an interface edge evaluation.
fn edge_basis(mesh: &Mesh, space: &DofMap, t: usize, q: &Qp) -> BasisEval {
    ElementMap::of(mesh, t).eval(space.family, q.lam)
}

/// Generic loop over interface edges. `kernel(edge, fluid_qps, porous_qps, local)`.
fn assemble_interface<F>(
    mesh: &Mesh,
    rows: &DofMap,
    rows_porous: bool,
    cols: &DofMap,
    cols_porous: bool,
    kernel: F,
) -> CsrMatrix
where
    F: Fn(&TaggedEdge, &Qp, &BasisEval, &BasisEval, &mut Local),
{
    let rule = edge_rule();
    let mut trip = Triplets::new();
    for e in mesh.tagged_edges(EdgeTag::Interface) {
        let tf = e.triangle;
        let tp = e.porous_triangle.expect("interface edge without porous neighbour");
        let tr = if rows_porous { tp } else { tf };
        let tc = if cols_porous { tp } else { tf };
        let qr = edge_points(mesh, e.nodes, tr, &rule, e.length);
        let qc = edge_points(mesh, e.nodes, tc, &rule, e.length);
        let mut local = [[0.0; 12]; 12];
        for (a, b) in qr.iter().zip(&qc) {
            let br = edge_basis(mesh, rows, tr, a);
            let bc = edge_basis(mesh, cols, tc, b);
            kernel(&e, a, &br, &bc, &mut local);
        }
        let (nr, nc) = (rows.local_count(), cols.local_count());
        for ci in 0..rows.components {
            for i in 0..nr {
                for cj in 0..cols.components {
                    for j in 0..nc {
                        let v = local[ci * nr + i][cj * nc + j];
                        if v != 0.0 {
                            trip.push(rows.dof_of(tr, i, ci), cols.dof_of(tc, j, cj), v);
                        }
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(rows.total_dofs(), cols.total_dofs(), &trip.entries).expect("dofs in range")
}

/// `∫_Γ γ (u·τ)(v·τ)` with `γ` constant on each interface edge.
pub fn bjs_matrix(mesh: &Mesh, velocity: &DofMap, coef: &dyn Fn(&TaggedEdge) -> f64) -> CsrMatrix {
    let n = velocity.local_count();
    assemble_interface(mesh, velocity, false, velocity, false, |e, q, b, _, local| {
        let gamma = coef(e);
        let tau = e.tangent;
        for i in 0..n {
            for j in 0..n {
                let v = gamma * q.weight * b.values[i] * b.values[j];
                for a in 0..2 {
                    for c in 0..2 {
                        local[a * n + i][c * n + j] += v * tau[a] * tau[c];
                    }
                }
            }
        }
    })
}

/// `C[v, φ] = g ∫_Γ φ (v·n)`, fluid trace for `v`, porous trace for `φ`.
pub fn cgamma_matrix(mesh: &Mesh, velocity: &DofMap, head: &DofMap, g: f64) -> CsrMatrix {
    let (nv, nh) = (velocity.local_count(), head.local_count());
    assemble_interface(mesh, velocity, false, head, true, |e, q, bv, bh, local| {
        for i in 0..nv {
            for j in 0..nh {
                let v = g * q.weight * bv.values[i] * bh.values[j];
                for a in 0..2 {
                    local[a * nv + i][j] += v * e.normal[a];
                }
            }
        }
    })
}

/// Convection form used for the momentum equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Convection {
    /// `((u·∇)v, w) − ½ ∫_Γ (u·v)(w·n)`.
    Standard,
    /// `(2D(u)v, w) + ((∇·u)v, w) − ∫_Γ (u·v)(w·n)`.
    Emac,
}

/// The vector `w ↦ form(u, u, w)` on the space of `u`.
pub fn convection_vector(mesh: &Mesh, u: &Field, form: Convection) -> Vec<f64> {
    let space = &*u.space;
    let rule = volume_rule();
    let n = space.local_count();
    let mut out = assemble_vector(mesh, space, |t, emap, local| {
        let coef = u.local(t);
        for q in volume_points(emap, &rule) {
            let be = emap.eval(space.family, q.lam);
            let (uv, g) = eval_local(&coef, 2, &be);
            // g[c][d] = ∂_d u_c
            let r = match form {
                Convection::Standard => [dot(uv, g[0]), dot(uv, g[1])],
                Convection::Emac => {
                    let div = g[0][0] + g[1][1];
                    let d01 = g[0][1] + g[1][0];
                    [
                        2.0 * g[0][0] * uv[0] + d01 * uv[1] + div * uv[0],
                        d01 * uv[0] + 2.0 * g[1][1] * uv[1] + div * uv[1],
                    ]
                }
            };
            for i in 0..n {
                local[i] += q.weight * r[0] * be.values[i];
                local[n + i] += q.weight * r[1] * be.values[i];
            }
        }
    });
    let factor = match form {
        Convection::Standard => -0.5,
        Convection::Emac => -1.0,
    };
    let rule = edge_rule();
    for e in mesh.tagged_edges(EdgeTag::Interface) {
        let t = e.triangle;
        let coef = u.local(t);
        for q in edge_points(mesh, e.nodes, t, &rule, e.length) {
            let be = edge_basis(mesh, space, t, &q);
            let (uv, _) = eval_local(&coef, 2, &be);
            let s = factor * q.weight * dot(uv, uv);
            for i in 0..n {
                out[space.dof_of(t, i, 0)] += s * e.normal[0] * be.values[i];
                out[space.dof_of(t, i, 1)] += s * e.normal[1] * be.values[i];
            }
        }
    }
    out
}

/// `∫ f·v` for a vector space, or `∫ f[0] v` for a scalar space.
pub fn load_vector(mesh: &Mesh, space: &DofMap, f: &(dyn Fn(Point) -> [f64; 2] + Sync)) -> Vec<f64> {
    let rule = volume_rule();
    let n = space.local_count();
    assemble_vector(mesh, space, |_, emap, local| {
        for q in volume_points(emap, &rule) {
            let be = emap.eval(space.family, q.lam);
            let fv = f(q.x);
            for c in 0..space.components {
                for i in 0..n {
                    local[c * n + i] += q.weight * fv[c] * be.values[i];
                }
            }
        }
    })
}

pub fn load_scalar(mesh: &Mesh, space: &DofMap, f: &(dyn Fn(Point) -> f64 + Sync)) -> Vec<f64> {
    load_vector(mesh, space, &|p| [f(p), 0.0])
}

/// `∫_Γ f·w` on the trace of `space`, taken from whichever side carries it.
/// Scalar spaces use `f[0]`.
pub fn interface_load_vector(mesh: &Mesh, space: &DofMap, f: &dyn Fn(Point) -> [f64; 2]) -> Vec<f64> {
    let rule = edge_rule();
    let n = space.local_count();
    let mut out = vec![0.0; space.total_dofs()];
    for e in mesh.tagged_edges(EdgeTag::Interface) {
        let t = if space.contains_triangle(e.triangle) {
            e.triangle
        } else {
            e.porous_triangle.expect("interface edge without porous neighbour")
        };
        for q in edge_points(mesh, e.nodes, t, &rule, e.length) {
            let be = edge_basis(mesh, space, t, &q);
            let fv = f(q.x);
            for c in 0..space.components {
                for i in 0..n {
                    out[space.dof_of(t, i, c)] += q.weight * fv[c] * be.values[i];
                }
            }
        }
    }
    out
}

/// `∫ φ ∇μ·w` over the domain of the velocity space.
pub fn phase_coupling_vector(mesh: &Mesh, phi: &Field, mu: &Field, velocity: &DofMap) -> Vec<f64> {
    let rule = volume_rule();
    let n = velocity.local_count();
    assemble_vector(mesh, velocity, |t, emap, local| {
        let (pc, mc) = (phi.local(t), mu.local(t));
        for q in volume_points(emap, &rule) {
            let bs = emap.eval(phi.space.family, q.lam);
            let p = eval_local(&pc, 1, &bs).0[0];
            let gm = eval_local(&mc, 1, &emap.eval(mu.space.family, q.lam)).1[0];
            let be = emap.eval(velocity.family, q.lam);
            for i in 0..n {
                local[i] += q.weight * p * gm[0] * be.values[i];
                local[n + i] += q.weight * p * gm[1] * be.values[i];
            }
        }
    })
}

/// `∫ B (φ − φ̄)·w` over the domain of the velocity space.
pub fn buoyancy_vector(mesh: &Mesh, phi: &Field, mean: f64, b: [f64; 2], velocity: &DofMap) -> Vec<f64> {
    let rule = volume_rule();
    let n = velocity.local_count();
    assemble_vector(mesh, velocity, |t, emap, local| {
        let pc = phi.local(t);
        for q in volume_points(emap, &rule) {
            let p = eval_local(&pc, 1, &emap.eval(phi.space.family, q.lam)).0[0] - mean;
            let be = emap.eval(velocity.family, q.lam);
            for i in 0..n {
                local[i] += q.weight * b[0] * p * be.values[i];
                local[n + i] += q.weight * b[1] * p * be.values[i];
            }
        }
    })
}

/// `∫ φ u·∇ψ` on the whole-domain scalar space, with `u = u_f` on the
/// fluid part and `u = u_p` on the porous part.
pub fn transport_vector(mesh: &Mesh, space: &DofMap, phi: &Field, u_f: &Field, u_p: &Field) -> Vec<f64> {
    let rule = volume_rule();
    let n = space.local_count();
    assemble_vector(mesh, space, |t, emap, local| {
        let u = if u_f.space.contains_triangle(t) { u_f } else { u_p };
        let (pc, uc) = (phi.local(t), u.local(t));
        for q in volume_points(emap, &rule) {
            let p = eval_local(&pc, 1, &emap.eval(phi.space.family, q.lam)).0[0];
            let uv = eval_local(&uc, 2, &emap.eval(u.space.family, q.lam)).0;
            let be = emap.eval(space.family, q.lam);
            for i in 0..n {
                local[i] += q.weight * p * dot(uv, be.grads[i]);
            }
        }
    })
}

/// Double-well potential `G(φ) = ¼ (φ² − 1)²`.
pub fn double_well(phi: f64) -> f64 {
    0.25 * (phi * phi - 1.0).powi(2)
}

pub fn double_well_derivative(phi: f64) -> f64 {
    phi * phi * phi - phi
}

/// `∫ G'(φ) ω`.
pub fn potential_vector(mesh: &Mesh, phi: &Field) -> Vec<f64> {
    let space = &*phi.space;
    let rule = volume_rule();
    let n = space.local_count();
    assemble_vector(mesh, space, |t, emap, local| {
        let pc = phi.local(t);
        for q in volume_points(emap, &rule) {
            let be = emap.eval(space.family, q.lam);
            let gp = double_well_derivative(eval_local(&pc, 1, &be).0[0]);
            for i in 0..n {
                local[i] += q.weight * gp * be.values[i];
            }
        }
    })
}

/// `∫ G(φ)`.
pub fn double_well_energy(mesh: &Mesh, phi: &Field) -> f64 {
    integrate(mesh, &phi.space.triangles, VOLUME_DEGREE, |t, emap, q| {
        let be = emap.eval(phi.space.family, q.lam);
        q.weight * double_well(phi.eval(t, &be).0[0])
    })
    .expect("supported degree")
}

/// `∫ M(φ) |∇μ|²`.
pub fn mobility_dissipation(mesh: &Mesh, phi: &Field, mu: &Field, mobility: Mobility) -> f64 {
    integrate(mesh, &mu.space.triangles, VOLUME_DEGREE, |t, emap, q| {
        let p = phi.eval(t, &emap.eval(phi.space.family, q.lam)).0[0];
        let g = mu.eval(t, &emap.eval(mu.space.family, q.lam)).1[0];
        q.weight * mobility.eval(p) * dot(g, g)
    })
    .expect("supported degree")
}

/// `∫ φ` over the domain of the field.
pub fn integral(mesh: &Mesh, phi: &Field) -> f64 {
    integrate(mesh, &phi.space.triangles, VOLUME_DEGREE, |t, emap, q| {
        q.weight * phi.eval(t, &emap.eval(phi.space.family, q.lam)).0[0]
    })
    .expect("supported degree")
}

/// Row and column elimination of essential boundary conditions.
///
/// Constrained rows become identity rows; the couplings of free rows to
/// constrained columns are kept aside to lift nonhomogeneous data onto the
/// right-hand side.
#[derive(Clone, Debug)]
pub struct Dirichlet {
    pub constrained: Vec<bool>,
    coupling: CsrMatrix,
}

impl Dirichlet {
    pub fn eliminate(a: &CsrMatrix, constrained: Vec<bool>) -> (CsrMatrix, Self) {
        let n = a.nrows();
        assert_eq!(constrained.len(), n);
        let mut kept = Triplets::with_capacity(a.nnz());
        let mut coupling = Triplets::new();
        for (i, j, v) in a.iter() {
            if constrained[i] {
                continue;
            }
            if constrained[j] {
                coupling.push(i, j, v);
            } else {
                kept.push(i, j, v);
            }
        }
        for (i, &c) in constrained.iter().enumerate() {
            if c {
                kept.push(i, i, 1.0);
            }
        }
        let reduced = CsrMatrix::from_triplets(n, n, &kept.entries).expect("in range");
        let coupling = CsrMatrix::from_triplets(n, n, &coupling.entries).expect("in range");
        (reduced, Self { constrained, coupling })
    }

    /// Modifies `rhs` in place for prescribed values `g` (read only at
    /// constrained positions).
    pub fn apply(&self, rhs: &mut [f64], g: &[f64]) {
        let gc: Vec<f64> = g.iter().zip(&self.constrained).map(|(&v, &c)| if c { v } else { 0.0 }).collect();
        let lift = self.coupling.mul(&gc);
        for i in 0..rhs.len() {
            if self.constrained[i] {
                rhs[i] = g[i];
            } else {
                rhs[i] -= lift[i];
            }
        }
    }

    pub fn apply_homogeneous(&self, rhs: &mut [f64]) {
        for (r, &c) in rhs.iter_mut().zip(&self.constrained) {
            if c {
                *r = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elements::{build_dof_map, BasisFamily, DofDomain};
    use crate::mesh::{build_two_domain_mesh, Geometry};

    fn unit_mesh(h: f64) -> Mesh {
        build_two_domain_mesh(&Geometry::unit_stack(), h).unwrap()
    }

    fn space(mesh: &Mesh, family: BasisFamily, comps: usize, dom: DofDomain) -> Arc<DofMap> {
        Arc::new(build_dof_map(mesh, family, comps, dom))
    }

    #[test]
    fn p1_mass_integrates_one() {
        let mesh = unit_mesh(0.25);
        let s = space(&mesh, BasisFamily::Linear, 1, DofDomain::Fluid);
        let m = mass_matrix(&mesh, &s, 1.0);
        let one = vec![1.0; s.total_dofs()];
        assert!((m.bilinear(&one, &one) - 1.0).abs() < 1e-13);
        assert!(m.is_symmetric(1e-15));
        let c = vec![3.0; s.total_dofs()];
        assert!((m.bilinear(&c, &c) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn corner_stiffness_entry() {
        let mesh = unit_mesh(1.0);
        let s = space(&mesh, BasisFamily::Linear, 1, DofDomain::Fluid);
        let a = laplace_matrix(&mesh, &s, 1.0);
        // the corner (0,1) belongs to a single triangle with a right angle there
        let corner = s.coords.iter().position(|p| p[0] == 0.0 && p[1] == 1.0).unwrap();
        assert!((a.get(corner, corner) - 1.0).abs() < 1e-14);
        let ones = vec![1.0; s.total_dofs()];
        assert!(a.mul(&ones).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn anisotropic_energy() {
        let mesh = unit_mesh(0.5);
        let s = space(&mesh, BasisFamily::Linear, 1, DofDomain::Porous);
        let a = stiffness_matrix(&mesh, &s, &|_| [[2.0, 0.0], [0.0, 1.0]]);
        let x = s.interpolate_scalar(|p| p[0]);
        assert!((a.bilinear(&x, &x) - 2.0).abs() < 1e-13);
    }

    #[test]
    fn divergence_of_simple_fields() {
        let mesh = unit_mesh(0.25);
        let v = space(&mesh, BasisFamily::Quadratic, 2, DofDomain::Fluid);
        let p = space(&mesh, BasisFamily::Linear, 1, DofDomain::Fluid);
        let b = divergence_matrix(&mesh, &v, &p);
        let trans = v.interpolate_vector(|_| [1.0, 0.0]);
        assert!(b.mul(&trans).iter().all(|x| x.abs() < 1e-14));
        let free = v.interpolate_vector(|q| [q[0] * q[0], -2.0 * q[0] * q[1]]);
        assert!(b.mul(&free).iter().all(|x| x.abs() < 1e-12));
        let stretch = v.interpolate_vector(|q| [q[0], 0.0]);
        let m = mass_matrix(&mesh, &p, 1.0);
        let ones = vec![1.0; p.total_dofs()];
        let lhs = b.mul(&stretch);
        let rhs = m.mul(&ones);
        for (x, y) in lhs.iter().zip(&rhs) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn interface_forms() {
        let mesh = unit_mesh(0.25);
        let v = space(&mesh, BasisFamily::Quadratic, 2, DofDomain::Fluid);
        let h = space(&mesh, BasisFamily::Linear, 1, DofDomain::Porous);
        let s = bjs_matrix(&mesh, &v, &|_| 1.0);
        let tang = v.interpolate_vector(|_| [1.0, 0.0]);
        let norm = v.interpolate_vector(|_| [0.0, 1.0]);
        assert!((s.bilinear(&tang, &tang) - 1.0).abs() < 1e-14);
        assert!(s.bilinear(&norm, &norm).abs() < 1e-14);
        let s3 = bjs_matrix(&mesh, &v, &|_| 3.0);
        assert!((s3.bilinear(&tang, &tang) - 3.0).abs() < 1e-13);
        let c = cgamma_matrix(&mesh, &v, &h, 1.0);
        let down = v.interpolate_vector(|_| [0.0, -1.0]);
        let one = vec![1.0; h.total_dofs()];
        assert!((c.bilinear(&down, &one) - 1.0).abs() < 1e-14);
        assert!(c.bilinear(&tang, &one).abs() < 1e-14);
        let c2 = cgamma_matrix(&mesh, &v, &h, 2.5);
        assert!((c2.bilinear(&down, &one) - 2.5).abs() < 1e-13);
    }

    #[test]
    fn convection_of_constant_field_is_interface_only() {
        let mesh = unit_mesh(0.25);
        let v = space(&mesh, BasisFamily::Quadratic, 2, DofDomain::Fluid);
        let u = Field::new(&v, v.interpolate_vector(|_| [1.0, 2.0])).unwrap();
        let w = v.interpolate_vector(|p| [p[0], 1.0 + p[0]]);
        let a = convection_vector(&mesh, &u, Convection::Standard);
        let pair: f64 = a.iter().zip(&w).map(|(x, y)| x * y).sum();
        // −½ |u|² ∫_Γ w·n with n = (0, −1): −½ · 5 · (−∫ (1 + x)) = 3.75
        assert!((pair - 3.75).abs() < 1e-13);
        let z = Field::zeros(&v);
        assert!(convection_vector(&mesh, &z, Convection::Emac).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rotation_has_no_emac_volume_part() {
        let mesh = unit_mesh(0.25);
        let v = space(&mesh, BasisFamily::Quadratic, 2, DofDomain::Fluid);
        let u = Field::new(&v, v.interpolate_vector(|p| [-p[1], p[0]])).unwrap();
        let b = convection_vector(&mesh, &u, Convection::Emac);
        let only_edges = interface_load_vector(&mesh, &v, &|p| {
            let s = p[0] * p[0] + p[1] * p[1];
            [0.0, s]
        });
        for (x, y) in b.iter().zip(&only_edges) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn loads_and_phase_coupling() {
        let mesh = unit_mesh(0.25);
        let s = space(&mesh, BasisFamily::Linear, 1, DofDomain::Fluid);
        let one: f64 = load_scalar(&mesh, &s, &|_| 1.0).iter().sum();
        assert!((one - 1.0).abs() < 1e-14);
        let x: f64 = load_scalar(&mesh, &s, &|p| p[0]).iter().sum();
        assert!((x - 0.5).abs() < 1e-14);
        let y = space(&mesh, BasisFamily::Linear, 1, DofDomain::Whole);
        let v = space(&mesh, BasisFamily::Quadratic, 2, DofDomain::Fluid);
        let phi = Field::new(&y, y.interpolate_scalar(|p| p[0])).unwrap();
        let mu = phi.clone();
        let c = phase_coupling_vector(&mesh, &phi, &mu, &v);
        let w = v.interpolate_vector(|_| [1.0, 0.0]);
        let pair: f64 = c.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((pair - 0.5).abs() < 1e-14);
        let flat = Field::new(&y, vec![2.0; y.total_dofs()]).unwrap();
        assert!(phase_coupling_vector(&mesh, &phi, &flat, &v).iter().all(|x| x.abs() < 1e-15));
        let unit = Field::new(&y, vec![1.0; y.total_dofs()]).unwrap();
        let c1 = phase_coupling_vector(&mesh, &unit, &mu, &v);
        let l = load_vector(&mesh, &v, &|_| [1.0, 0.0]);
        for (a, b) in c1.iter().zip(&l) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn dirichlet_lifting_reproduces_solution() {
        let mesh = unit_mesh(0.25);
        let s = space(&mesh, BasisFamily::Linear, 1, DofDomain::Porous);
        let a = laplace_matrix(&mesh, &s, 1.0).linear_combination(1.0, &mass_matrix(&mesh, &s, 1.0), 1.0).unwrap();
        let exact = s.interpolate_scalar(|p| 1.0 + p[0] - 2.0 * p[1]);
        let mut rhs = a.mul(&exact);
        let mask = s.boundary_mask(EdgeTag::GammaP).to_vec();
        let (reduced, bc) = Dirichlet::eliminate(&a, mask);
        bc.apply(&mut rhs, &exact);
        let x = crate::sparse::LuFactors::factor(&reduced).unwrap().solve(&rhs).unwrap();
        for (p, q) in x.iter().zip(&exact) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
