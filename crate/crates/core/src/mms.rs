//! Manufactured solutions for the single-phase model and convergence studies.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};

use crate::elements::{gauss_legendre, ElementMap};
use crate::error::{Error, Result};
use crate::forms::{integrate, Convection, Field, FormCoefficients};
use crate::mesh::{build_two_domain_mesh, Geometry, Mesh, Point, Rect, Subdomain};
use crate::nsd::{NsdData, NsdInitial, NsdSolver, NsdSpaces, Scheme, SchemeConfig};
use crate::sparse::SolverKind;

/// Quadrature degree used for error norms.
pub const ERROR_DEGREE: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CaseId {
    /// Polynomial solution on the unit stack, `c = 64π²`.
    Ex1,
    /// Trigonometric solution with `l = 1/(20π²)`.
    Ex2,
}

impl CaseId {
    pub fn name(self) -> &'static str {
        match self {
            CaseId::Ex1 => "ex1",
            CaseId::Ex2 => "ex2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ex1" | "1" => Some(CaseId::Ex1),
            "ex2" | "2" => Some(CaseId::Ex2),
            _ => None,
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Pointwise values of a manufactured solution and its derivatives.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet {
    pub u: [f64; 2],
    /// `grad_u[i][j] = ∂_j u_i`.
    pub grad_u: [[f64; 2]; 2],
    pub lap_u: [f64; 2],
    pub u_t: [f64; 2],
    pub p: f64,
    pub grad_p: [f64; 2],
    pub phi: f64,
    pub grad_phi: [f64; 2],
    pub lap_phi: f64,
    pub phi_t: f64,
}

/// Closed-form solution on the unit stack with `K = I` and unit
/// coefficients except `ν = 0.001`.
#[derive(Clone, Debug)]
pub struct ManufacturedCase {
    pub id: CaseId,
    pub coefficients: FormCoefficients,
    pub geometry: Geometry,
    pub convection: Convection,
}

impl ManufacturedCase {
    pub fn new(id: CaseId) -> Self {
        Self {
            id,
            coefficients: FormCoefficients { nu: 0.001, ..Default::default() },
            geometry: Geometry::unit_stack(),
            convection: Convection::Standard,
        }
    }

    pub fn with_convection(mut self, convection: Convection) -> Self {
        self.convection = convection;
        self
    }

    /// Hand-derived closed forms.
    pub fn jet(&self, x: Point, t: f64) -> Jet {
        match self.id {
            CaseId::Ex1 => ex1_jet(x, t),
            CaseId::Ex2 => ex2_jet(x, t),
        }
    }

    pub fn u(&self, x: Point, t: f64) -> [f64; 2] {
        self.jet(x, t).u
    }

    pub fn p(&self, x: Point, t: f64) -> f64 {
        self.jet(x, t).p
    }

    /// Pressure variable solved for: `p`, or `p − ½|u|²` under EMAC.
    pub fn solved_pressure(&self, x: Point, t: f64) -> f64 {
        let j = self.jet(x, t);
        match self.convection {
            Convection::Standard => j.p,
            Convection::Emac => j.p - 0.5 * dot(j.u, j.u),
        }
    }

    pub fn phi(&self, x: Point, t: f64) -> f64 {
        self.jet(x, t).phi
    }

    fn check_domain(&self, x: Point, dom: Subdomain) -> Result<()> {
        let r = match dom {
            Subdomain::Fluid => self.geometry.fluid,
            Subdomain::Porous => self.geometry.porous,
        };
        if r.contains(x, 1e-12) {
            Ok(())
        } else {
            Err(Error::OutsideDomain(x[0], x[1]))
        }
    }

    /// `f_f = ∂ₜu − νΔu + ∇p + (u·∇)u`.
    pub fn fluid_forcing(&self, x: Point, t: f64) -> Result<[f64; 2]> {
        self.check_domain(x, Subdomain::Fluid)?;
        Ok(fluid_forcing_from(&self.jet(x, t), self.coefficients.nu))
    }

    /// `f_p = S₀ ∂ₜφ − ∇·(K∇φ)` with `K = I`.
    pub fn porous_forcing(&self, x: Point, t: f64) -> Result<f64> {
        self.check_domain(x, Subdomain::Porous)?;
        let j = self.jet(x, t);
        Ok(self.coefficients.s0 * j.phi_t - j.lap_phi)
    }

    fn gamma(&self) -> f64 {
        let c = &self.coefficients;
        c.alpha * (c.nu * c.g / 2.0).sqrt()
    }

    /// Residuals of the interface conditions at a point of Γ:
    /// `(mass, normal force, tangential slip)`.
    pub fn interface_residuals(&self, x: Point, t: f64) -> [f64; 3] {
        let n = self.geometry.interface.fluid_normal();
        let tau = [-n[1], n[0]];
        let j = self.jet(x, t);
        let c = &self.coefficients;
        let gun = matvec(j.grad_u, n);
        let mass = dot(j.u, n) + dot(j.grad_phi, n);
        let normal = j.p - c.nu * dot(n, gun) + 0.5 * dot(j.u, j.u) - c.g * j.phi;
        let slip = -c.nu * dot(tau, gun) - self.gamma() * dot(j.u, tau);
        [mass, normal, slip]
    }

    /// Time derivative of the exact energy plus its dissipation,
    /// `∫ u·∂ₜu + gS₀ ∫ φ ∂ₜφ + 𝕀(u, φ)`, by tensor Gauss quadrature.
    pub fn energy_source(&self, t: f64) -> f64 {
        let c = &self.coefficients;
        let fluid = rect_integral(self.geometry.fluid, |x| {
            let j = self.jet(x, t);
            let g = j.grad_u;
            dot(j.u, j.u_t) + c.nu * (g[0][0] * g[0][0] + g[0][1] * g[0][1] + g[1][0] * g[1][0] + g[1][1] * g[1][1])
        });
        let porous = rect_integral(self.geometry.porous, |x| {
            let j = self.jet(x, t);
            c.g * c.s0 * j.phi * j.phi_t + c.g * dot(j.grad_phi, j.grad_phi)
        });
        let n = self.geometry.interface.fluid_normal();
        let tau = [-n[1], n[0]];
        let slip = interface_integral(&self.geometry, |x| {
            let s = dot(self.jet(x, t).u, tau);
            self.gamma() * s * s
        });
        fluid + porous + slip
    }

    /// `½‖u‖² + (gS₀/2)‖φ‖²` of the exact fields.
    pub fn exact_energy(&self, t: f64) -> f64 {
        let c = &self.coefficients;
        let fluid = rect_integral(self.geometry.fluid, |x| {
            let u = self.jet(x, t).u;
            0.5 * dot(u, u)
        });
        let porous = rect_integral(self.geometry.porous, |x| 0.5 * c.g * c.s0 * self.jet(x, t).phi.powi(2));
        fluid + porous
    }
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn matvec(m: [[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [dot(m[0], v), dot(m[1], v)]
}

/// `∂ₜu − νΔu + ∇p + (u·∇)u` from pointwise derivatives.
pub fn fluid_forcing_from(j: &Jet, nu: f64) -> [f64; 2] {
    let conv = matvec(j.grad_u, j.u);
    [0, 1].map(|i| j.u_t[i] - nu * j.lap_u[i] + j.grad_p[i] + conv[i])
}

fn rect_integral(r: Rect, f: impl Fn(Point) -> f64) -> f64 {
    const CELLS: usize = 8;
    let (x, w) = gauss_legendre(8);
    let (dx, dy) = (r.width() / CELLS as f64, r.height() / CELLS as f64);
    let mut sum = 0.0;
    for a in 0..CELLS {
        for b in 0..CELLS {
            for (xi, wi) in x.iter().zip(&w) {
                for (yj, wj) in x.iter().zip(&w) {
                    let p = [r.x_min + (a as f64 + xi) * dx, r.y_min + (b as f64 + yj) * dy];
                    sum += wi * wj * f(p);
                }
            }
        }
    }
    sum * dx * dy
}

fn interface_points(g: &Geometry, s: f64) -> Point {
    let (f, _) = (g.fluid, g.porous);
    use crate::mesh::InterfaceSide::*;
    match g.interface {
        Bottom => [f.x_min + s * f.width(), f.y_min],
        Top => [f.x_min + s * f.width(), f.y_max],
        Left => [f.x_min, f.y_min + s * f.height()],
        Right => [f.x_max, f.y_min + s * f.height()],
    }
}

fn interface_integral(g: &Geometry, f: impl Fn(Point) -> f64) -> f64 {
    const CELLS: usize = 16;
    let (x, w) = gauss_legendre(8);
    let mut sum = 0.0;
    for a in 0..CELLS {
        for (xi, wi) in x.iter().zip(&w) {
            sum += wi * f(interface_points(g, (a as f64 + xi) / CELLS as f64));
        }
    }
    sum * g.interface_length() / CELLS as f64
}

fn ex1_jet(x: Point, t: f64) -> Jet {
    let c = 64.0 * PI * PI;
    let (x, y) = (x[0], x[1]);
    let (ct, st) = (t.cos(), t.sin());
    let xx = (x * (x - 1.0)).powi(2);
    let dxx = 2.0 * x * (x - 1.0) * (2.0 * x - 1.0);
    let ddxx = 2.0 * (6.0 * x * x - 6.0 * x + 1.0);
    let yy = (y * (y - 1.0)).powi(2);
    let dyy = 2.0 * y * (y - 1.0) * (2.0 * y - 1.0);
    let zz = (y * (y + 1.0)).powi(2);
    let dzz = 2.0 * y * (y + 1.0) * (2.0 * y + 1.0);
    let ddzz = 2.0 * (6.0 * y * y + 6.0 * y + 1.0);
    Jet {
        u: [x * x * y * y * ct, -2.0 / 3.0 * x * y.powi(3) * ct],
        grad_u: [[2.0 * x * y * y * ct, 2.0 * x * x * y * ct], [-2.0 / 3.0 * y.powi(3) * ct, -2.0 * x * y * y * ct]],
        lap_u: [2.0 * (x * x + y * y) * ct, -4.0 * x * y * ct],
        u_t: [-x * x * y * y * st, 2.0 / 3.0 * x * y.powi(3) * st],
        p: c * xx * yy * ct,
        grad_p: [c * dxx * yy * ct, c * xx * dyy * ct],
        phi: c * xx * zz * ct,
        grad_phi: [c * dxx * zz * ct, c * xx * dzz * ct],
        lap_phi: c * (ddxx * zz + xx * ddzz) * ct,
        phi_t: -c * xx * zz * st,
    }
}

fn ex2_jet(x: Point, t: f64) -> Jet {
    let l = 1.0 / (20.0 * PI * PI);
    let (x, y) = (x[0], x[1]);
    let (ct, st) = (t.cos(), t.sin());
    let (sx, cx, s2x, c2x) = ((PI * x).sin(), (PI * x).cos(), (2.0 * PI * x).sin(), (2.0 * PI * x).cos());
    let (sy, cy, s2y, c2y) = ((PI * y).sin(), (PI * y).cos(), (2.0 * PI * y).sin(), (2.0 * PI * y).cos());
    let pi2 = PI * PI;
    Jet {
        u: [l * sx * sx * s2y * ct, -l * s2x * sy * sy * ct],
        grad_u: [
            [l * PI * s2x * s2y * ct, 2.0 * PI * l * sx * sx * c2y * ct],
            [-2.0 * PI * l * c2x * sy * sy * ct, -l * PI * s2x * s2y * ct],
        ],
        lap_u: [
            l * (2.0 * pi2 * c2x * s2y - 4.0 * pi2 * sx * sx * s2y) * ct,
            l * (4.0 * pi2 * s2x * sy * sy - 2.0 * pi2 * s2x * c2y) * ct,
        ],
        u_t: [-l * sx * sx * s2y * st, l * s2x * sy * sy * st],
        p: sy * cx * ct,
        grad_p: [-PI * sy * sx * ct, PI * cy * cx * ct],
        phi: sx * sy * sy * ct,
        grad_phi: [PI * cx * sy * sy * ct, PI * sx * s2y * ct],
        lap_phi: (-pi2 * sx * sy * sy + 2.0 * pi2 * sx * c2y) * ct,
        phi_t: -sx * sy * sy * st,
    }
}

/// Plugs a manufactured case into the time stepper. Interface residuals
/// of the closed forms enter as a traction and a flux so that the exact
/// fields solve the interface problem.
#[derive(Debug)]
pub struct CaseData(pub ManufacturedCase);

impl NsdData for CaseData {
    fn fluid_force(&self, p: Point, t: f64) -> [f64; 2] {
        fluid_forcing_from(&self.0.jet(p, t), self.0.coefficients.nu)
    }

    fn porous_source(&self, p: Point, t: f64) -> f64 {
        let j = self.0.jet(p, t);
        self.0.coefficients.s0 * j.phi_t - j.lap_phi
    }

    fn velocity_boundary(&self, p: Point, t: f64) -> [f64; 2] {
        self.0.u(p, t)
    }

    fn head_boundary(&self, p: Point, t: f64) -> f64 {
        self.0.phi(p, t)
    }

    fn interface_traction(&self, p: Point, t: f64) -> [f64; 2] {
        let n = self.0.geometry.interface.fluid_normal();
        let tau = [-n[1], n[0]];
        let [_, rn, rt] = self.0.interface_residuals(p, t);
        [-(rn * n[0] + rt * tau[0]), -(rn * n[1] + rt * tau[1])]
    }

    fn interface_flux(&self, p: Point, t: f64) -> f64 {
        -self.0.coefficients.g * self.0.interface_residuals(p, t)[0]
    }

    fn energy_source(&self, t: f64) -> f64 {
        self.0.energy_source(t)
    }

    fn is_homogeneous(&self) -> bool {
        false
    }
}

/// `‖field − exact‖_{L²}` over the triangles carrying `field`; scalar
/// fields use `exact[0]`.
pub fn l2_error(mesh: &Mesh, field: &Field, exact: impl Fn(Point) -> [f64; 2] + Sync + Send) -> Result<f64> {
    let tris: Vec<usize> = (0..mesh.num_triangles()).filter(|&t| field.space.contains_triangle(t)).collect();
    let comps = field.space.components;
    let sq = integrate(mesh, &tris, ERROR_DEGREE, |t, emap: &ElementMap, q| {
        let (v, _) = field.eval(t, &emap.eval(field.space.family, q.lam));
        let e = exact(q.x);
        q.weight * (0..comps).map(|c| (v[c] - e[c]).powi(2)).sum::<f64>()
    })?;
    Ok(sq.sqrt())
}

/// `‖q − mean(q) − (exact − mean(exact))‖_{L²}`; used for pressures
/// that are only fixed up to a constant.
pub fn l2_error_mean_free(mesh: &Mesh, field: &Field, exact: impl Fn(Point) -> f64 + Sync + Send) -> Result<f64> {
    let tris: Vec<usize> = (0..mesh.num_triangles()).filter(|&t| field.space.contains_triangle(t)).collect();
    let area = integrate(mesh, &tris, 1, |_, _, q| q.weight)?;
    let diff = |t: usize, emap: &ElementMap, x: Point, lam: [f64; 3]| {
        field.eval(t, &emap.eval(field.space.family, lam)).0[0] - exact(x)
    };
    let mean = integrate(mesh, &tris, ERROR_DEGREE, |t, emap, q| q.weight * diff(t, emap, q.x, q.lam))? / area;
    let sq = integrate(mesh, &tris, ERROR_DEGREE, |t, emap, q| q.weight * (diff(t, emap, q.x, q.lam) - mean).powi(2))?;
    Ok(sq.sqrt())
}

/// Time-step rule of a convergence study.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DtRule {
    /// `Δt = h²`.
    HSquared,
    /// `Δt = h / k`.
    HOver(f64),
    Fixed(f64),
}

impl DtRule {
    pub fn dt(self, h: f64) -> f64 {
        match self {
            DtRule::HSquared => h * h,
            DtRule::HOver(k) => h / k,
            DtRule::Fixed(dt) => dt,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub h: f64,
    pub dt: f64,
    pub err_u: f64,
    pub err_phi: f64,
    pub err_p: f64,
    /// Solver failure message; errors are NaN when set.
    pub failure: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ConvergenceTable {
    pub case: CaseId,
    pub scheme: Scheme,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slopes of `log err` against `log Δt`.
    pub rate_u: f64,
    pub rate_phi: f64,
    pub rate_p: f64,
}

/// Least-squares slope of `log y` against `log x`, skipping non-finite rows.
pub fn fit_rate(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite() && **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Errors of one run at its final time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunErrors {
    pub err_u: f64,
    pub err_phi: f64,
    pub err_p: f64,
}

/// Builds a solver for `case` started from the exact fields at `t = 0`.
pub fn case_solver(case: &ManufacturedCase, scheme: Scheme, h: f64, dt: f64, t_end: f64) -> Result<NsdSolver> {
    let mesh = Arc::new(build_two_domain_mesh(&case.geometry, h)?);
    let spaces = NsdSpaces::new(&mesh);
    let initial =
        NsdInitial::interpolate(&spaces, |x| case.u(x, 0.0), |x| case.phi(x, 0.0), |x| case.solved_pressure(x, 0.0));
    let config = SchemeConfig {
        coefficients: case.coefficients.clone(),
        dt,
        t_end,
        scheme,
        convection: case.convection,
        solver: SolverKind::Direct,
        data: Arc::new(CaseData(case.clone())),
    };
    NsdSolver::new(mesh, config, initial)
}

/// L² errors of the corrected fields against the exact solution at the
/// solver's current time.
pub fn solver_errors(case: &ManufacturedCase, solver: &NsdSolver) -> Result<RunErrors> {
    let t = solver.state.t;
    let mesh = &solver.mesh;
    Ok(RunErrors {
        err_u: l2_error(mesh, &solver.velocity(), |x| case.u(x, t))?,
        err_phi: l2_error(mesh, &solver.head(), |x| [case.phi(x, t), 0.0])?,
        err_p: l2_error(mesh, &solver.pressure(), |x| [case.solved_pressure(x, t), 0.0])?,
    })
}

pub fn run_case(case: &ManufacturedCase, scheme: Scheme, h: f64, dt: f64, t_end: f64) -> Result<RunErrors> {
    let mut solver = case_solver(case, scheme, h, dt, t_end)?;
    solver.run()?;
    solver_errors(case, &solver)
}

/// Runs one row per mesh size; failures are recorded and the study goes on.
pub fn convergence_study(
    case: &ManufacturedCase,
    scheme: Scheme,
    h_list: &[f64],
    rule: DtRule,
    t_end: f64,
) -> Result<ConvergenceTable> {
    if h_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config { key: "h_list".into(), message: "mesh sizes must be strictly descending".into() });
    }
    let mut rows = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let dt = rule.dt(h);
        let row = match run_case(case, scheme, h, dt, t_end) {
            Ok(e) => ConvergenceRow { h, dt, err_u: e.err_u, err_phi: e.err_phi, err_p: e.err_p, failure: None },
            Err(err) => {
                warn!("{} {:?} h = {h}: {err}", case.id, scheme);
                ConvergenceRow {
                    h,
                    dt,
                    err_u: f64::NAN,
                    err_phi: f64::NAN,
                    err_p: f64::NAN,
                    failure: Some(err.to_string()),
                }
            }
        };
        info!(
            "{} {:?} h = {h:.5} dt = {dt:.3e}: u {:.3e} phi {:.3e} p {:.3e}",
            case.id, scheme, row.err_u, row.err_phi, row.err_p
        );
        rows.push(row);
    }
    let dts: Vec<f64> = rows.iter().map(|r| r.dt).collect();
    let col = |f: fn(&ConvergenceRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    Ok(ConvergenceTable {
        case: case.id,
        scheme,
        rate_u: fit_rate(&dts, &col(|r| r.err_u)),
        rate_phi: fit_rate(&dts, &col(|r| r.err_phi)),
        rate_p: fit_rate(&dts, &col(|r| r.err_p)),
        rows,
    })
}

impl ConvergenceTable {
    pub fn file_name(&self) -> String {
        let s = match self.scheme {
            Scheme::One => "1",
            Scheme::Two => "2",
        };
        format!("convergence_{}_{}.csv", self.case, s)
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "h,dt,err_u,err_phi,err_p")?;
        for r in &self.rows {
            writeln!(w, "{:e},{:e},{:e},{:e},{:e}", r.h, r.dt, r.err_u, r.err_phi, r.err_p)?;
        }
        Ok(())
    }

    /// Writes `convergence_<case>_<scheme>.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(self.file_name());
        let f = std::fs::File::create(&path)?;
        self.write_csv(std::io::BufWriter::new(f))?;
        Ok(path)
    }
}

/// Largest interface residual of the closed forms over `n` points on Γ
/// at each of `times`, per condition.
pub fn interface_self_test(case: &ManufacturedCase, n: usize, times: &[f64]) -> [f64; 3] {
    let mut worst = [0.0f64; 3];
    for &t in times {
        for k in 0..n {
            let x = interface_points(&case.geometry, (k as f64 + 0.5) / n as f64);
            let r = case.interface_residuals(x, t);
            for i in 0..3 {
                worst[i] = worst[i].max(r[i].abs());
            }
        }
    }
    worst
}
