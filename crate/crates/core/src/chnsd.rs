//! Scheme III: decoupled Cahn–Hilliard, Darcy and Navier–Stokes solves
//! followed by a relaxation of the kinetic energy.

use std::sync::Arc;

use log::{debug, warn};

use crate::elements::{build_dof_map, BasisFamily, DofDomain, DofMap};
use crate::error::{Error, Result};
use crate::forms::{
    bjs_matrix, buoyancy_vector, cgamma_matrix, convection_vector, divergence_matrix, double_well_energy,
    gradient_pairing_matrix, integral, laplace_matrix, mass_matrix, mobility_dissipation, mobility_matrix,
    phase_coupling_vector, potential_vector, tensor_inverse, tensor_mass_matrix, transport_vector, Convection,
    Dirichlet, Field, FormCoefficients,
};
use crate::mesh::{EdgeTag, InterfaceSide, Mesh, Point};
use crate::sparse::{CsrMatrix, PreparedSystem, SolverFactory, SolverKind, Triplets};
use crate::trace::TraceRecord;

/// Flag attached to steps whose relaxation factor had to be clamped at 0.
pub const CLAMP_FLAG: &str = "xi_clamped";

/// Per-step allowance for the drift of `∫ φ`, relative to `max(1, |Ω|)`.
pub const MASS_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct ChnsdConfig {
    /// `nu` is the fluid viscosity, `nu_p` the porous one; `buoyancy`
    /// switches on `B (φ − φ̄)` in both momentum equations when nonzero.
    pub coefficients: FormCoefficients,
    pub dt: f64,
    pub t_end: f64,
    pub convection: Convection,
    pub solver: SolverKind,
    /// Linear stabilization `S (λ/ε)(φⁿ⁺¹ − φⁿ)` added to the chemical
    /// potential. Zero gives the unmodified explicit treatment of `G'`.
    pub stabilization: f64,
}

impl ChnsdConfig {
    pub fn new(coefficients: FormCoefficients, dt: f64, t_end: f64) -> Self {
        Self {
            coefficients,
            dt,
            t_end,
            convection: Convection::Standard,
            solver: SolverKind::Direct,
            stabilization: 0.0,
        }
    }

    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config { key: "dt".into(), message: format!("must be positive, got {}", self.dt) });
        }
        if !(self.t_end >= self.dt) {
            return Err(Error::Config {
                key: "t_end".into(),
                message: format!("must be at least dt, got {}", self.t_end),
            });
        }
        if !(self.stabilization >= 0.0) || !self.stabilization.is_finite() {
            return Err(Error::Config {
                key: "stabilization".into(),
                message: format!("must be nonnegative, got {}", self.stabilization),
            });
        }
        let c = &self.coefficients;
        for (name, v) in [("lambda", c.lambda), ("nu_p", c.nu_p)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Coefficient(format!("{name} must be positive, got {v}")));
            }
        }
        c.validate(mesh)
    }

    pub fn num_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn has_buoyancy(&self) -> bool {
        self.coefficients.buoyancy != [0.0, 0.0]
    }
}

#[derive(Clone, Debug)]
pub struct ChnsdSpaces {
    /// Linear scalars on the whole domain, for `φ` and `μ`.
    pub phase: Arc<DofMap>,
    pub velocity_f: Arc<DofMap>,
    pub pressure_f: Arc<DofMap>,
    pub velocity_p: Arc<DofMap>,
    pub pressure_p: Arc<DofMap>,
}

impl ChnsdSpaces {
    pub fn new(mesh: &Mesh) -> Self {
        Self {
            phase: Arc::new(build_dof_map(mesh, BasisFamily::Linear, 1, DofDomain::Whole)),
            velocity_f: Arc::new(build_dof_map(mesh, BasisFamily::Quadratic, 2, DofDomain::Fluid)),
            pressure_f: Arc::new(build_dof_map(mesh, BasisFamily::Linear, 1, DofDomain::Fluid)),
            velocity_p: Arc::new(build_dof_map(mesh, BasisFamily::Quadratic, 2, DofDomain::Porous)),
            pressure_p: Arc::new(build_dof_map(mesh, BasisFamily::Linear, 1, DofDomain::Porous)),
        }
    }

    /// Normal velocity components on the outer porous boundary.
    fn porous_normal_mask(&self, mesh: &Mesh) -> Vec<bool> {
        let v = &*self.velocity_p;
        let r = mesh.geometry.porous;
        let side = mesh.geometry.interface;
        let tol = 1e-10 * (r.width() + r.height());
        let on = v.boundary_mask(EdgeTag::GammaP);
        let mut mask = vec![false; v.total_dofs()];
        for (i, &b) in on.iter().enumerate() {
            if !b {
                continue;
            }
            let p = v.coords[i];
            // sides of the porous rectangle other than the interface
            let left = (p[0] - r.x_min).abs() < tol && side != InterfaceSide::Right;
            let right = (p[0] - r.x_max).abs() < tol && side != InterfaceSide::Left;
            let bottom = (p[1] - r.y_min).abs() < tol && side != InterfaceSide::Top;
            let top = (p[1] - r.y_max).abs() < tol && side != InterfaceSide::Bottom;
            if left || right {
                mask[i] = true;
            }
            if bottom || top {
                mask[v.n_scalar + i] = true;
            }
        }
        mask
    }
}

#[derive(Clone, Debug)]
pub struct ChnsdState {
    pub step: usize,
    pub t: f64,
    pub phi: Vec<f64>,
    pub mu: Vec<f64>,
    pub u_f: Vec<f64>,
    pub u_f_tilde: Vec<f64>,
    /// Pressure, or `p − ½|u|²` under EMAC convection.
    pub p_f: Vec<f64>,
    pub u_p: Vec<f64>,
    pub u_p_tilde: Vec<f64>,
    /// Zero-mean porous pressure.
    pub p_p: Vec<f64>,
    pub energy: f64,
    pub e0: f64,
    pub xi: f64,
}

/// Constant matrices and the two factorizations reused every step.
#[derive(Debug)]
pub struct ChnsdOperators {
    pub mass_phase: CsrMatrix,
    pub laplace_phase: CsrMatrix,
    pub mass_f: CsrMatrix,
    /// `ν_f A + S` with the two-phase slip coefficient.
    pub viscous_f: CsrMatrix,
    pub div_f: CsrMatrix,
    /// `C[v, q] = ∫_Γ q (v·n)`.
    pub interface: CsrMatrix,
    pub mass_p: CsrMatrix,
    /// `(K⁻¹ u, v)`.
    pub resistance_p: CsrMatrix,
    /// `D[q, v] = (v, ∇q)`.
    pub grad_p: CsrMatrix,
    fluid: PreparedSystem,
    fluid_bc: Dirichlet,
    darcy: PreparedSystem,
    darcy_bc: Dirichlet,
}

fn precompute(mesh: &Mesh, sp: &ChnsdSpaces, cfg: &ChnsdConfig, factory: &SolverFactory) -> Result<ChnsdOperators> {
    let c = &cfg.coefficients;
    let dt = cfg.dt;
    let mass_phase = mass_matrix(mesh, &sp.phase, 1.0);
    let laplace_phase = laplace_matrix(mesh, &sp.phase, 1.0);

    let (vf, pf) = (&*sp.velocity_f, &*sp.pressure_f);
    let mass_f = mass_matrix(mesh, vf, 1.0);
    let lap = laplace_matrix(mesh, vf, c.nu);
    let bjs = bjs_matrix(mesh, vf, &|e| c.bjs_chnsd(e));
    let viscous_f = lap.linear_combination(1.0, &bjs, 1.0)?;
    let div_f = divergence_matrix(mesh, vf, pf);
    let nvf = vf.total_dofs();
    let nf = nvf + pf.total_dofs();
    let mut t = Triplets::with_capacity(mass_f.nnz() + viscous_f.nnz() + 2 * div_f.nnz());
    t.add_block(&mass_f, 0, 0, 1.0 / dt);
    t.add_block(&viscous_f, 0, 0, 1.0);
    t.add_block_transposed(&div_f, 0, nvf, -1.0);
    t.add_block(&div_f, nvf, 0, 1.0);
    let fluid_matrix = CsrMatrix::from_triplets(nf, nf, &t.entries)?;
    let mut mask: Vec<bool> =
        vf.boundary_mask(EdgeTag::GammaF).iter().chain(vf.boundary_mask(EdgeTag::GammaF)).copied().collect();
    mask.resize(nf, false);
    let (fluid_matrix, fluid_bc) = Dirichlet::eliminate(&fluid_matrix, mask);

    let (vp, pp) = (&*sp.velocity_p, &*sp.pressure_p);
    let interface = cgamma_matrix(mesh, vf, pp, 1.0);
    let mass_p = mass_matrix(mesh, vp, 1.0);
    let resistance_p = tensor_mass_matrix(mesh, vp, &|t| tensor_inverse(c.conductivity.at(t)));
    let grad_p = gradient_pairing_matrix(mesh, vp, pp);
    let (nvp, npp) = (vp.total_dofs(), pp.total_dofs());
    let nd = nvp + npp + 1;
    let mean = mass_matrix(mesh, pp, 1.0).mul(&vec![1.0; npp]);
    let mut t = Triplets::with_capacity(mass_p.nnz() + resistance_p.nnz() + 2 * grad_p.nnz() + 2 * npp);
    t.add_block(&mass_p, 0, 0, 1.0 / (c.chi * dt));
    t.add_block(&resistance_p, 0, 0, 1.0);
    t.add_block_transposed(&grad_p, 0, nvp, 1.0);
    t.add_block(&grad_p, nvp, 0, 1.0);
    for (j, &m) in mean.iter().enumerate() {
        t.push(nvp + j, nd - 1, m);
        t.push(nd - 1, nvp + j, m);
    }
    let darcy_matrix = CsrMatrix::from_triplets(nd, nd, &t.entries)?;
    let mut mask = sp.porous_normal_mask(mesh);
    mask.resize(nd, false);
    let (darcy_matrix, darcy_bc) = Dirichlet::eliminate(&darcy_matrix, mask);

    let (fluid, darcy) = crate::par::join(|| factory.prepare(fluid_matrix), || factory.prepare(darcy_matrix));
    Ok(ChnsdOperators {
        mass_phase,
        laplace_phase,
        mass_f,
        viscous_f,
        div_f,
        interface,
        mass_p,
        resistance_p,
        grad_p,
        fluid: fluid?,
        fluid_bc,
        darcy: darcy?,
        darcy_bc,
    })
}

/// Largest step for which the unstabilized phase update is linearly
/// stable near a pure phase (`G'' = 2`) with frozen mobility `m`:
/// the worst Fourier mode has amplification `1 − √(Δt m λ) / ε^{3/2}`.
pub fn critical_step(lambda: f64, eps: f64, m: f64) -> f64 {
    4.0 * eps.powi(3) / (lambda * m)
}

/// Energy split `(E₀, E₁)`: free energy `λε/2‖∇φ‖² + (λ/ε)∫G(φ)` and
/// kinetic energy `½‖u_f‖² + (1/2χ)‖u_p‖²`.
pub fn chnsd_energy(
    mesh: &Mesh,
    sp: &ChnsdSpaces,
    ops: &ChnsdOperators,
    c: &FormCoefficients,
    phi: &[f64],
    u_f: &[f64],
    u_p: &[f64],
) -> (f64, f64) {
    let field = Field { space: sp.phase.clone(), values: phi.to_vec() };
    let e0 = 0.5 * c.lambda * c.eps * ops.laplace_phase.bilinear(phi, phi)
        + c.lambda / c.eps * double_well_energy(mesh, &field);
    let e1 = 0.5 * ops.mass_f.bilinear(u_f, u_f) + 0.5 / c.chi * ops.mass_p.bilinear(u_p, u_p);
    (e0, e1)
}

/// Outcome of the split relaxation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correction3 {
    pub xi: f64,
    pub energy: f64,
    pub clamped: bool,
}

/// `ξ = (Eⁿ − E₀ⁿ⁺¹)/(Ẽ₁ + Δt 𝕀₃)`, clamped at 0. When numerator and
/// denominator are both at round-off level `ξ = 1` is kept.
pub fn correct3(e_n: f64, e0_next: f64, e1_tilde: f64, dissipation: f64, dt: f64) -> Result<Correction3> {
    let num = e_n - e0_next;
    let den = e1_tilde + dt * dissipation;
    let scale = 1e-13 * e_n.abs().max(1.0);
    if den <= scale && num.abs() <= scale {
        return Ok(Correction3 { xi: 1.0, energy: e0_next + e1_tilde, clamped: false });
    }
    if den <= 0.0 {
        if num < 0.0 {
            return Ok(Correction3 { xi: 0.0, energy: e0_next, clamped: true });
        }
        return Err(Error::Assertion {
            step: 0,
            message: format!("zero kinetic energy and dissipation with E − E₀ = {num:e}"),
        });
    }
    let xi = num / den;
    if xi < 0.0 {
        return Ok(Correction3 { xi: 0.0, energy: e0_next, clamped: true });
    }
    Ok(Correction3 { xi, energy: e0_next + xi * e1_tilde, clamped: false })
}

/// Initial data; velocities default to zero.
#[derive(Clone, Debug)]
pub struct ChnsdInitial {
    pub phi: Vec<f64>,
    pub u_f: Vec<f64>,
    pub u_p: Vec<f64>,
}

impl ChnsdInitial {
    pub fn from_phase(sp: &ChnsdSpaces, phi: impl FnMut(Point) -> f64) -> Self {
        Self {
            phi: sp.phase.interpolate_scalar(phi),
            u_f: vec![0.0; sp.velocity_f.total_dofs()],
            u_p: vec![0.0; sp.velocity_p.total_dofs()],
        }
    }
}

#[derive(Debug)]
pub struct ChnsdSolver {
    pub mesh: Arc<Mesh>,
    pub spaces: ChnsdSpaces,
    pub config: ChnsdConfig,
    pub ops: ChnsdOperators,
    pub state: ChnsdState,
    pub trace: Vec<TraceRecord>,
    pub initial_mass: f64,
    pub clamped_steps: usize,
    factory: SolverFactory,
}

impl ChnsdSolver {
    pub fn new(mesh: Arc<Mesh>, config: ChnsdConfig, initial: ChnsdInitial) -> Result<Self> {
        config.validate(&mesh)?;
        let spaces = ChnsdSpaces::new(&mesh);
        for (name, got, want) in [
            ("phi", initial.phi.len(), spaces.phase.total_dofs()),
            ("u_f", initial.u_f.len(), spaces.velocity_f.total_dofs()),
            ("u_p", initial.u_p.len(), spaces.velocity_p.total_dofs()),
        ] {
            if got != want {
                return Err(Error::Dimension(format!("initial {name} has {got} values, expected {want}")));
            }
        }
        let factory = SolverFactory::new(config.solver);
        let ops = precompute(&mesh, &spaces, &config, &factory)?;
        let c = &config.coefficients;
        let (e0, e1) = chnsd_energy(&mesh, &spaces, &ops, c, &initial.phi, &initial.u_f, &initial.u_p);
        // lumped-mass chemical potential of the initial phase, for output only
        let field = Field { space: spaces.phase.clone(), values: initial.phi.clone() };
        let g = potential_vector(&mesh, &field);
        let a = ops.laplace_phase.mul(&initial.phi);
        let lumped = ops.mass_phase.mul(&vec![1.0; initial.phi.len()]);
        let mu: Vec<f64> =
            (0..a.len()).map(|i| (c.lambda * c.eps * a[i] + c.lambda / c.eps * g[i]) / lumped[i]).collect();
        let initial_mass = integral(&mesh, &field);
        let state = ChnsdState {
            step: 0,
            t: 0.0,
            phi: initial.phi,
            mu,
            u_f_tilde: initial.u_f.clone(),
            u_f: initial.u_f,
            p_f: vec![0.0; spaces.pressure_f.total_dofs()],
            u_p_tilde: initial.u_p.clone(),
            u_p: initial.u_p,
            p_p: vec![0.0; spaces.pressure_p.total_dofs()],
            energy: e0 + e1,
            e0,
            xi: 1.0,
        };
        Ok(Self { mesh, spaces, config, ops, state, trace: Vec::new(), initial_mass, clamped_steps: 0, factory })
    }

    pub fn factorizations(&self) -> usize {
        self.factory.factorizations()
    }

    pub fn phase_field(&self) -> Field {
        Field { space: self.spaces.phase.clone(), values: self.state.phi.clone() }
    }

    pub fn chemical_potential(&self) -> Field {
        Field { space: self.spaces.phase.clone(), values: self.state.mu.clone() }
    }

    pub fn fluid_velocity(&self) -> Field {
        Field { space: self.spaces.velocity_f.clone(), values: self.state.u_f.clone() }
    }

    pub fn porous_velocity(&self) -> Field {
        Field { space: self.spaces.velocity_p.clone(), values: self.state.u_p.clone() }
    }

    pub fn fluid_pressure(&self) -> Field {
        Field { space: self.spaces.pressure_f.clone(), values: self.state.p_f.clone() }
    }

    pub fn porous_pressure(&self) -> Field {
        Field { space: self.spaces.pressure_p.clone(), values: self.state.p_p.clone() }
    }

    pub fn mass(&self) -> f64 {
        integral(&self.mesh, &self.phase_field())
    }

    /// Cahn–Hilliard step with mobility and potential frozen at `φⁿ`.
    /// Without stabilization the explicit `G'` limits the step; see
    /// [`critical_step`].
    /// Assembles and factorizes a fresh operator.
    pub fn ch_step(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = &self.state;
        let c = &self.config.coefficients;
        let dt = self.config.dt;
        let mesh = &*self.mesh;
        let sp = &self.spaces;
        let n = sp.phase.total_dofs();
        let phi_n = Field { space: sp.phase.clone(), values: s.phi.clone() };
        let mob = mobility_matrix(mesh, &sp.phase, &phi_n, c.mobility);
        let m = &self.ops.mass_phase;
        let mut t = Triplets::with_capacity(3 * m.nnz() + mob.nnz());
        t.add_block(m, 0, 0, 1.0 / dt);
        t.add_block(&mob, 0, n, 1.0);
        t.add_block(&self.ops.laplace_phase, n, 0, -c.lambda * c.eps);
        let stab = self.config.stabilization * c.lambda / c.eps;
        if stab != 0.0 {
            t.add_block(m, n, 0, -stab);
        }
        t.add_block(m, n, n, 1.0);
        let matrix = CsrMatrix::from_triplets(2 * n, 2 * n, &t.entries)?;
        let system = self.factory.prepare(matrix)?;

        let u_f = Field { space: sp.velocity_f.clone(), values: s.u_f.clone() };
        let u_p = Field { space: sp.velocity_p.clone(), values: s.u_p.clone() };
        let transport = transport_vector(mesh, &sp.phase, &phi_n, &u_f, &u_p);
        let pot = potential_vector(mesh, &phi_n);
        let mphi = m.mul(&s.phi);
        let mut rhs = vec![0.0; 2 * n];
        for i in 0..n {
            rhs[i] = mphi[i] / dt + transport[i];
            rhs[n + i] = c.lambda / c.eps * pot[i] - stab * mphi[i];
        }
        let x = system.solve(&rhs)?;
        Ok((x[..n].to_vec(), x[n..].to_vec()))
    }

    fn buoyancy(&self, phi: &Field, velocity: &DofMap) -> Option<Vec<f64>> {
        if !self.config.has_buoyancy() {
            return None;
        }
        let mean = integral(&self.mesh, phi) / self.mesh.geometry.total_area();
        Some(buoyancy_vector(&self.mesh, phi, mean, self.config.coefficients.buoyancy, velocity))
    }

    /// Porous momentum and continuity; returns `(ũ_p, p_p)`.
    pub fn darcy_step(&self, phi: &[f64], mu: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = &self.state;
        let c = &self.config.coefficients;
        let dt = self.config.dt;
        let sp = &self.spaces;
        let ops = &self.ops;
        let phi_f = Field { space: sp.phase.clone(), values: phi.to_vec() };
        let mu_f = Field { space: sp.phase.clone(), values: mu.to_vec() };
        let (nvp, npp) = (sp.velocity_p.total_dofs(), sp.pressure_p.total_dofs());
        let mut rhs = vec![0.0; ops.darcy.dim()];
        let inertia = ops.mass_p.mul(&s.u_p_tilde);
        let coupling = phase_coupling_vector(&self.mesh, &phi_f, &mu_f, &sp.velocity_p);
        for i in 0..nvp {
            rhs[i] = inertia[i] / (c.chi * dt) - coupling[i];
        }
        if let Some(b) = self.buoyancy(&phi_f, &sp.velocity_p) {
            rhs[..nvp].iter_mut().zip(&b).for_each(|(r, v)| *r += v);
        }
        let flux = ops.interface.mul_transposed(&s.u_f);
        for j in 0..npp {
            rhs[nvp + j] = -flux[j];
        }
        ops.darcy_bc.apply_homogeneous(&mut rhs);
        let x = ops.darcy.solve(&rhs)?;
        Ok((x[..nvp].to_vec(), x[nvp..nvp + npp].to_vec()))
    }

    /// Free-flow momentum and continuity; returns `(ũ_f, p_f)`.
    pub fn ns_step(&self, phi: &[f64], mu: &[f64], p_p: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = &self.state;
        let dt = self.config.dt;
        let sp = &self.spaces;
        let ops = &self.ops;
        let phi_f = Field { space: sp.phase.clone(), values: phi.to_vec() };
        let mu_f = Field { space: sp.phase.clone(), values: mu.to_vec() };
        let u_n = Field { space: sp.velocity_f.clone(), values: s.u_f.clone() };
        let nv = sp.velocity_f.total_dofs();
        let inertia = ops.mass_f.mul(&s.u_f_tilde);
        let conv = convection_vector(&self.mesh, &u_n, self.config.convection);
        let pressure = ops.interface.mul(p_p);
        let coupling = phase_coupling_vector(&self.mesh, &phi_f, &mu_f, &sp.velocity_f);
        let mut rhs = vec![0.0; ops.fluid.dim()];
        for i in 0..nv {
            rhs[i] = inertia[i] / dt - conv[i] - pressure[i] - coupling[i];
        }
        if let Some(b) = self.buoyancy(&phi_f, &sp.velocity_f) {
            rhs[..nv].iter_mut().zip(&b).for_each(|(r, v)| *r += v);
        }
        ops.fluid_bc.apply_homogeneous(&mut rhs);
        let x = ops.fluid.solve(&rhs)?;
        Ok((x[..nv].to_vec(), x[nv..].to_vec()))
    }

    /// `ν_f‖∇u_f‖² + slip + ‖K^{-1/2} u_p‖² + ∫ M(φ)|∇μ|²`.
    pub fn dissipation(&self, u_f: &[f64], u_p: &[f64], phi: &[f64], mu: &[f64]) -> f64 {
        let phi_f = Field { space: self.spaces.phase.clone(), values: phi.to_vec() };
        let mu_f = Field { space: self.spaces.phase.clone(), values: mu.to_vec() };
        self.ops.viscous_f.bilinear(u_f, u_f)
            + self.ops.resistance_p.bilinear(u_p, u_p)
            + mobility_dissipation(&self.mesh, &phi_f, &mu_f, self.config.coefficients.mobility)
    }

    pub fn step(&mut self) -> Result<&TraceRecord> {
        let step = self.state.step + 1;
        let (phi, mu) = self.ch_step()?;
        let (u_p_tilde, p_p) = self.darcy_step(&phi, &mu)?;
        let (u_f_tilde, p_f) = self.ns_step(&phi, &mu, &p_p)?;

        let c = &self.config.coefficients;
        let dt = self.config.dt;
        let (e0, e1) = chnsd_energy(&self.mesh, &self.spaces, &self.ops, c, &phi, &u_f_tilde, &u_p_tilde);
        let dissipation = self.dissipation(&u_f_tilde, &u_p_tilde, &phi, &mu);
        let e_n = self.state.energy;
        let corr = correct3(e_n, e0, e1, dissipation, dt).map_err(|e| match e {
            Error::Assertion { message, .. } => Error::Assertion { step, message },
            other => other,
        })?;
        let mut flags = Vec::new();
        if corr.clamped {
            warn!("step {step}: relaxation factor clamped at 0 (E = {e_n:e}, E0 = {e0:e})");
            flags.push(CLAMP_FLAG.to_string());
            self.clamped_steps += 1;
        } else {
            let identity = corr.energy - e_n + dt * corr.xi * dissipation;
            if identity.abs() > 1e-12 * e_n.abs().max(1.0) {
                return Err(Error::Assertion { step, message: format!("energy identity violated by {identity:e}") });
            }
        }

        let div_residual = self.ops.div_f.mul(&u_f_tilde).iter().map(|v| v * v).sum::<f64>().sqrt();
        let root = corr.xi.sqrt();
        let s = &mut self.state;
        s.u_f = u_f_tilde.iter().map(|v| root * v).collect();
        s.u_p = u_p_tilde.iter().map(|v| root * v).collect();
        s.u_f_tilde = u_f_tilde;
        s.u_p_tilde = u_p_tilde;
        s.p_f = p_f;
        s.p_p = p_p;
        s.phi = phi;
        s.mu = mu;
        s.energy = corr.energy;
        s.e0 = e0;
        s.xi = corr.xi;
        s.step = step;
        s.t = step as f64 * dt;

        let mass = self.mass();
        let allowance = step as f64 * MASS_TOLERANCE * self.mesh.geometry.total_area().max(1.0);
        if (mass - self.initial_mass).abs() > allowance {
            return Err(Error::Assertion {
                step,
                message: format!("phase mass drifted from {:e} to {mass:e}", self.initial_mass),
            });
        }
        debug!("step {step}: E = {:.6e}, xi = {:.12}, mass = {mass:.12e}", corr.energy, corr.xi);
        self.trace.push(TraceRecord {
            step,
            t: self.state.t,
            energy: corr.energy,
            xi: corr.xi,
            dissipation,
            div_residual,
            mass,
            source: 0.0,
            flags,
        });
        Ok(self.trace.last().unwrap())
    }

    pub fn run_with(&mut self, mut observe: impl FnMut(&ChnsdSolver) -> Result<()>) -> Result<()> {
        let n = self.config.num_steps();
        while self.state.step < n {
            self.step()?;
            observe(self)?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_| Ok(()))
    }
}
