//! Relaxation-corrected time stepping for the Navier–Stokes–Darcy model.

use std::fmt::Debug;
use std::sync::Arc;

use log::debug;

use crate::elements::{build_dof_map, BasisFamily, DofDomain, DofMap};
use crate::error::{Error, Result};
use crate::forms::{
    bjs_matrix, cgamma_matrix, convection_vector, divergence_matrix, interface_load_vector, laplace_matrix,
    load_scalar, load_vector, mass_matrix, stiffness_matrix, Convection, Dirichlet, Field, FormCoefficients,
};
use crate::mesh::{EdgeTag, Mesh, Point};
use crate::par;
use crate::sparse::{CsrMatrix, PreparedSystem, SolverFactory, SolverKind, Triplets};
use crate::trace::TraceRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Backward Euler with explicit convection and coupling.
    One,
    /// Crank–Nicolson with Adams–Bashforth extrapolation.
    Two,
}

/// Sources and boundary data. The defaults describe the homogeneous,
/// unforced problem.
pub trait NsdData: Send + Sync + Debug {
    fn fluid_force(&self, _p: Point, _t: f64) -> [f64; 2] {
        [0.0, 0.0]
    }
    fn porous_source(&self, _p: Point, _t: f64) -> f64 {
        0.0
    }
    /// Velocity on the outer fluid boundary.
    fn velocity_boundary(&self, _p: Point, _t: f64) -> [f64; 2] {
        [0.0, 0.0]
    }
    /// Head on the outer porous boundary.
    fn head_boundary(&self, _p: Point, _t: f64) -> f64 {
        0.0
    }
    /// Extra interface traction `g` entering the momentum equation as `∫_Γ g·v`.
    fn interface_traction(&self, _p: Point, _t: f64) -> [f64; 2] {
        [0.0, 0.0]
    }
    /// Extra interface flux `s` entering the head equation as `∫_Γ s ψ`.
    fn interface_flux(&self, _p: Point, _t: f64) -> f64 {
        0.0
    }
    /// Source `S(t)` in the relaxation law `dE/dt = −ξ 𝕀 + S`. Manufactured
    /// solutions set it to `dE/dt + 𝕀` of the exact fields so that `ξ ≡ 1`
    /// is consistent with the forcing.
    fn energy_source(&self, _t: f64) -> f64 {
        0.0
    }
    /// True when every hook above vanishes identically.
    fn is_homogeneous(&self) -> bool {
        true
    }
}

#[derive(Debug, Default)]
pub struct Homogeneous;

impl NsdData for Homogeneous {}

#[derive(Clone, Debug)]
pub struct SchemeConfig {
    pub coefficients: FormCoefficients,
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub convection: Convection,
    pub solver: SolverKind,
    pub data: Arc<dyn NsdData>,
}

impl SchemeConfig {
    pub fn new(coefficients: FormCoefficients, dt: f64, t_end: f64, scheme: Scheme) -> Self {
        Self {
            coefficients,
            dt,
            t_end,
            scheme,
            convection: Convection::Standard,
            solver: SolverKind::Direct,
            data: Arc::new(Homogeneous),
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
        self.coefficients.validate(mesh)
    }

    pub fn num_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// The three finite element spaces of the model.
#[derive(Clone, Debug)]
pub struct NsdSpaces {
    /// Quadratic vector velocity on the fluid part.
    pub velocity: Arc<DofMap>,
    /// Linear pressure on the fluid part.
    pub pressure: Arc<DofMap>,
    /// Linear head on the porous part.
    pub head: Arc<DofMap>,
}

impl NsdSpaces {
    pub fn new(mesh: &Mesh) -> Self {
        Self {
            velocity: Arc::new(build_dof_map(mesh, BasisFamily::Quadratic, 2, DofDomain::Fluid)),
            pressure: Arc::new(build_dof_map(mesh, BasisFamily::Linear, 1, DofDomain::Fluid)),
            head: Arc::new(build_dof_map(mesh, BasisFamily::Linear, 1, DofDomain::Porous)),
        }
    }

    fn velocity_mask(&self) -> Vec<bool> {
        let m = self.velocity.boundary_mask(EdgeTag::GammaF);
        m.iter().chain(m.iter()).copied().collect()
    }
}

#[derive(Clone, Debug)]
pub struct NsdState {
    pub step: usize,
    pub t: f64,
    pub u: Vec<f64>,
    pub u_tilde: Vec<f64>,
    pub u_prev: Vec<f64>,
    /// Pressure, or the shifted pressure `p − ½|u|²` under EMAC convection.
    pub p: Vec<f64>,
    pub phi: Vec<f64>,
    pub phi_tilde: Vec<f64>,
    pub phi_prev: Vec<f64>,
    pub energy: f64,
    pub xi: f64,
}

/// Time-independent matrices and factorized prediction operators.
#[derive(Debug)]
pub struct NsdOperators {
    pub mass_f: CsrMatrix,
    /// `ν A + S`: viscous and slip terms.
    pub viscous: CsrMatrix,
    pub div: CsrMatrix,
    pub cgamma: CsrMatrix,
    pub mass_p: CsrMatrix,
    /// `g (K ∇φ, ∇ψ)`.
    pub darcy: CsrMatrix,
    fluid: PreparedSystem,
    fluid_bc: Dirichlet,
    head: PreparedSystem,
    head_bc: Dirichlet,
    theta: f64,
}

/// Assembles and factorizes both prediction operators.
///
/// Fluid: `[M/Δt + θ(νA + S), −θBᵀ; B, 0]`; porous: `gS₀M/Δt + θ g A_K`,
/// with `θ = 1` for Scheme I and `½` for Scheme II.
pub fn precompute_systems(
    mesh: &Mesh,
    spaces: &NsdSpaces,
    config: &SchemeConfig,
    factory: &SolverFactory,
) -> Result<NsdOperators> {
    let c = &config.coefficients;
    let theta = match config.scheme {
        Scheme::One => 1.0,
        Scheme::Two => 0.5,
    };
    let (v, p, h) = (&*spaces.velocity, &*spaces.pressure, &*spaces.head);
    let mass_f = mass_matrix(mesh, v, 1.0);
    let lap = laplace_matrix(mesh, v, c.nu);
    let bjs = bjs_matrix(mesh, v, &|e| c.bjs_nsd(e));
    let viscous = lap.linear_combination(1.0, &bjs, 1.0)?;
    let div = divergence_matrix(mesh, v, p);
    let cgamma = cgamma_matrix(mesh, v, h, c.g);
    let mass_p = mass_matrix(mesh, h, 1.0);
    let darcy = stiffness_matrix(mesh, h, &|t| c.conductivity.at(t)).scaled(c.g);

    let nv = v.total_dofs();
    let n = nv + p.total_dofs();
    let mut t = Triplets::with_capacity(mass_f.nnz() + viscous.nnz() + 2 * div.nnz());
    t.add_block(&mass_f, 0, 0, 1.0 / config.dt);
    t.add_block(&viscous, 0, 0, theta);
    t.add_block_transposed(&div, 0, nv, -theta);
    t.add_block(&div, nv, 0, 1.0);
    let fluid_matrix = CsrMatrix::from_triplets(n, n, &t.entries)?;
    let mut mask = spaces.velocity_mask();
    mask.resize(n, false);
    let (fluid_matrix, fluid_bc) = Dirichlet::eliminate(&fluid_matrix, mask);

    let head_matrix = mass_p.linear_combination(c.g * c.s0 / config.dt, &darcy, theta)?;
    let (head_matrix, head_bc) = Dirichlet::eliminate(&head_matrix, h.boundary_mask(EdgeTag::GammaP).to_vec());

    let (fluid, head) = par::join(|| factory.prepare(fluid_matrix), || factory.prepare(head_matrix));
    Ok(NsdOperators {
        mass_f,
        viscous,
        div,
        cgamma,
        mass_p,
        darcy,
        fluid: fluid?,
        fluid_bc,
        head: head?,
        head_bc,
        theta,
    })
}

/// `½‖u‖² + (gS₀/2)‖φ‖²`.
pub fn nsd_energy(ops: &NsdOperators, coefficients: &FormCoefficients, u: &[f64], phi: &[f64]) -> f64 {
    0.5 * ops.mass_f.bilinear(u, u) + 0.5 * coefficients.g * coefficients.s0 * ops.mass_p.bilinear(phi, phi)
}

/// `ν‖∇u‖² + BJS slip term + g‖√K ∇φ‖²`.
pub fn dissipation_functional(ops: &NsdOperators, u: &[f64], phi: &[f64]) -> f64 {
    ops.viscous.bilinear(u, u) + ops.darcy.bilinear(phi, phi)
}

/// Outcome of the relaxation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correction {
    pub xi: f64,
    pub energy: f64,
}

/// Solves `(ξẼ − Eⁿ)/Δt = −ξ 𝕀` for `ξ`.
///
/// A zero state with zero predicted energy keeps `ξ = 1`.
pub fn correct(e_n: f64, e_tilde: f64, dissipation: f64, dt: f64) -> Result<Correction> {
    let denom = e_tilde + dt * dissipation;
    if !(e_n >= 0.0) || !(e_tilde >= 0.0) || !(dissipation >= 0.0) {
        return Err(Error::Assertion {
            step: 0,
            message: format!("negative energy input: E = {e_n:e}, Ẽ = {e_tilde:e}, I = {dissipation:e}"),
        });
    }
    if denom == 0.0 {
        if e_n == 0.0 {
            return Ok(Correction { xi: 1.0, energy: 0.0 });
        }
        return Err(Error::Assertion { step: 0, message: format!("zero denominator with E = {e_n:e}") });
    }
    let xi = e_n / denom;
    Ok(Correction { xi, energy: xi * e_tilde })
}

fn axpby(a: f64, x: &[f64], b: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Initial fields; `p` seeds the pressure average of Scheme II.
#[derive(Clone, Debug)]
pub struct NsdInitial {
    pub u: Vec<f64>,
    pub phi: Vec<f64>,
    pub p: Vec<f64>,
}

impl NsdInitial {
    pub fn zero(spaces: &NsdSpaces) -> Self {
        Self {
            u: vec![0.0; spaces.velocity.total_dofs()],
            phi: vec![0.0; spaces.head.total_dofs()],
            p: vec![0.0; spaces.pressure.total_dofs()],
        }
    }

    pub fn interpolate(
        spaces: &NsdSpaces,
        u: impl Fn(Point) -> [f64; 2],
        phi: impl Fn(Point) -> f64,
        p: impl Fn(Point) -> f64,
    ) -> Self {
        Self {
            u: spaces.velocity.interpolate_vector(u),
            phi: spaces.head.interpolate_scalar(phi),
            p: spaces.pressure.interpolate_scalar(p),
        }
    }
}

/// Time stepper owning the state, operators and trace.
#[derive(Debug)]
pub struct NsdSolver {
    pub mesh: Arc<Mesh>,
    pub spaces: NsdSpaces,
    pub config: SchemeConfig,
    pub ops: NsdOperators,
    pub state: NsdState,
    pub trace: Vec<TraceRecord>,
    pub initial_energy: f64,
    /// `Δt Σ ξⁿ⁺¹ 𝕀ⁿ⁺¹` accumulated over the run.
    pub dissipated: f64,
    factory: SolverFactory,
}

impl NsdSolver {
    pub fn new(mesh: Arc<Mesh>, config: SchemeConfig, initial: NsdInitial) -> Result<Self> {
        config.validate(&mesh)?;
        let spaces = NsdSpaces::new(&mesh);
        let factory = SolverFactory::new(config.solver);
        let ops = precompute_systems(&mesh, &spaces, &config, &factory)?;
        for (name, got, want) in [
            ("u", initial.u.len(), spaces.velocity.total_dofs()),
            ("phi", initial.phi.len(), spaces.head.total_dofs()),
            ("p", initial.p.len(), spaces.pressure.total_dofs()),
        ] {
            if got != want {
                return Err(Error::Dimension(format!("initial {name} has {got} values, expected {want}")));
            }
        }
        let energy = nsd_energy(&ops, &config.coefficients, &initial.u, &initial.phi);
        let state = NsdState {
            step: 0,
            t: 0.0,
            u_tilde: initial.u.clone(),
            u_prev: initial.u.clone(),
            u: initial.u,
            p: initial.p,
            phi_tilde: initial.phi.clone(),
            phi_prev: initial.phi.clone(),
            phi: initial.phi,
            energy,
            xi: 1.0,
        };
        Ok(Self {
            mesh,
            spaces,
            config,
            ops,
            state,
            trace: Vec::new(),
            initial_energy: energy,
            dissipated: 0.0,
            factory,
        })
    }

    pub fn factorizations(&self) -> usize {
        self.factory.factorizations()
    }

    pub fn velocity(&self) -> Field {
        Field::new(&self.spaces.velocity, self.state.u.clone()).expect("sizes fixed")
    }

    pub fn pressure(&self) -> Field {
        Field::new(&self.spaces.pressure, self.state.p.clone()).expect("sizes fixed")
    }

    pub fn head(&self) -> Field {
        Field::new(&self.spaces.head, self.state.phi.clone()).expect("sizes fixed")
    }

    /// `½‖u‖² + (gS₀/2)‖φ‖²` of the current corrected fields.
    pub fn current_energy(&self) -> f64 {
        nsd_energy(&self.ops, &self.config.coefficients, &self.state.u, &self.state.phi)
    }

    fn fluid_loads(&self, t: f64) -> Vec<f64> {
        let data = &self.config.data;
        let mut f = load_vector(&self.mesh, &self.spaces.velocity, &|p| data.fluid_force(p, t));
        let tr = interface_load_vector(&self.mesh, &self.spaces.velocity, &|p| data.interface_traction(p, t));
        f.iter_mut().zip(&tr).for_each(|(a, b)| *a += b);
        f
    }

    fn head_loads(&self, t: f64) -> Vec<f64> {
        let data = &self.config.data;
        let g = self.config.coefficients.g;
        let mut f = load_scalar(&self.mesh, &self.spaces.head, &|p| g * data.porous_source(p, t));
        let flux = interface_load_vector(&self.mesh, &self.spaces.head, &|p| [data.interface_flux(p, t), 0.0]);
        f.iter_mut().zip(&flux).for_each(|(a, b)| *a += b);
        f
    }

    /// Prediction step; returns `(ũⁿ⁺¹, pⁿ⁺¹, φ̃ⁿ⁺¹)`.
    pub fn predict(&self) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let s = &self.state;
        let cfg = &self.config;
        let dt = cfg.dt;
        let t_next = s.t + dt;
        let ops = &self.ops;
        let nv = self.spaces.velocity.total_dofs();
        let homogeneous = cfg.data.is_homogeneous();

        // explicit velocity and head entering convection and coupling
        let (u_ex, phi_ex) = match cfg.scheme {
            Scheme::One => (s.u.clone(), s.phi.clone()),
            Scheme::Two => (axpby(1.5, &s.u, -0.5, &s.u_prev), axpby(1.5, &s.phi, -0.5, &s.phi_prev)),
        };

        let fluid = || -> Result<(Vec<f64>, Vec<f64>)> {
            let u_field = Field::new(&self.spaces.velocity, u_ex.clone())?;
            let conv = convection_vector(&self.mesh, &u_field, cfg.convection);
            let mut rhs_u: Vec<f64> = ops.mass_f.mul(&s.u_tilde).iter().map(|v| v / dt).collect();
            let cphi = ops.cgamma.mul(&phi_ex);
            for i in 0..nv {
                rhs_u[i] -= conv[i] + cphi[i];
            }
            if cfg.scheme == Scheme::Two {
                let visc = ops.viscous.mul(&s.u);
                let bp = ops.div.mul_transposed(&s.p);
                for i in 0..nv {
                    rhs_u[i] += -ops.theta * visc[i] + ops.theta * bp[i];
                }
            }
            let mut g = vec![0.0; ops.fluid.dim()];
            if !homogeneous {
                let f = match cfg.scheme {
                    Scheme::One => self.fluid_loads(t_next),
                    Scheme::Two => axpby(0.5, &self.fluid_loads(t_next), 0.5, &self.fluid_loads(s.t)),
                };
                rhs_u.iter_mut().zip(&f).for_each(|(a, b)| *a += b);
                let bd = self.spaces.velocity.interpolate_vector(|p| cfg.data.velocity_boundary(p, t_next));
                g[..nv].copy_from_slice(&bd);
            }
            let mut rhs = rhs_u;
            rhs.resize(ops.fluid.dim(), 0.0);
            ops.fluid_bc.apply(&mut rhs, &g);
            let x = ops.fluid.solve(&rhs)?;
            Ok((x[..nv].to_vec(), x[nv..].to_vec()))
        };

        let head = || -> Result<Vec<f64>> {
            let c = &cfg.coefficients;
            let mut rhs: Vec<f64> = ops.mass_p.mul(&s.phi_tilde).iter().map(|v| c.g * c.s0 * v / dt).collect();
            let cu = ops.cgamma.mul_transposed(&u_ex);
            rhs.iter_mut().zip(&cu).for_each(|(a, b)| *a += b);
            if cfg.scheme == Scheme::Two {
                let k = ops.darcy.mul(&s.phi);
                rhs.iter_mut().zip(&k).for_each(|(a, b)| *a -= ops.theta * b);
            }
            let mut g = vec![0.0; rhs.len()];
            if !homogeneous {
                let f = match cfg.scheme {
                    Scheme::One => self.head_loads(t_next),
                    Scheme::Two => axpby(0.5, &self.head_loads(t_next), 0.5, &self.head_loads(s.t)),
                };
                rhs.iter_mut().zip(&f).for_each(|(a, b)| *a += b);
                g = self.spaces.head.interpolate_scalar(|p| cfg.data.head_boundary(p, t_next));
            }
            ops.head_bc.apply(&mut rhs, &g);
            ops.head.solve(&rhs)
        };

        let (f, h) = par::join(fluid, head);
        let (u_t, p) = f?;
        Ok((u_t, p, h?))
    }

    /// Advances one step: prediction, relaxation and rescaling.
    pub fn step(&mut self) -> Result<&TraceRecord> {
        let (u_tilde, p, phi_tilde) = self.predict()?;
        let step = self.state.step + 1;
        let cfg = &self.config;
        let ops = &self.ops;
        let e_tilde = nsd_energy(ops, &cfg.coefficients, &u_tilde, &phi_tilde);
        let dissipation = match cfg.scheme {
            Scheme::One => dissipation_functional(ops, &u_tilde, &phi_tilde),
            Scheme::Two => dissipation_functional(
                ops,
                &axpby(0.5, &u_tilde, 0.5, &self.state.u),
                &axpby(0.5, &phi_tilde, 0.5, &self.state.phi),
            ),
        };
        let e_n = self.state.energy;
        let source = match cfg.scheme {
            Scheme::One => cfg.data.energy_source(self.state.t + cfg.dt),
            Scheme::Two => cfg.data.energy_source(self.state.t + 0.5 * cfg.dt),
        };
        let Correction { xi, energy } =
            correct(e_n + cfg.dt * source, e_tilde, dissipation, cfg.dt).map_err(|e| match e {
                Error::Assertion { message, .. } => Error::Assertion { step, message },
                other => other,
            })?;

        let fail = |message: String| Err(Error::Assertion { step, message });
        if !(xi >= 0.0) {
            return fail(format!("relaxation factor {xi:e} is negative"));
        }
        let identity = energy - e_n + cfg.dt * xi * dissipation - cfg.dt * source;
        if identity.abs() > 1e-12 * e_n.max(1.0) {
            return fail(format!("energy identity violated by {identity:e}"));
        }
        if cfg.data.is_homogeneous() && energy > e_n + 1e-12 * self.initial_energy {
            return fail(format!("energy increased from {e_n:e} to {energy:e}"));
        }

        let div_residual = norm(&ops.div.mul(&u_tilde));
        let root = xi.sqrt();
        let ops = &self.ops;
        let s = &mut self.state;
        s.u_prev = std::mem::take(&mut s.u);
        s.phi_prev = std::mem::take(&mut s.phi);
        s.u = u_tilde.iter().map(|v| root * v).collect();
        s.phi = phi_tilde.iter().map(|v| root * v).collect();
        s.u_tilde = u_tilde;
        s.phi_tilde = phi_tilde;
        s.p = p;
        s.energy = energy;
        s.xi = xi;
        s.step = step;
        s.t = step as f64 * cfg.dt;
        self.dissipated += cfg.dt * xi * dissipation;
        debug!("step {step}: E = {energy:.6e}, xi = {xi:.12}, I = {dissipation:.6e}");
        self.trace.push(TraceRecord {
            step,
            t: s.t,
            energy,
            xi,
            dissipation,
            div_residual,
            mass: ops.mass_p.mul(&s.phi).iter().sum(),
            source,
            flags: Vec::new(),
        });
        Ok(self.trace.last().unwrap())
    }

    /// Steps until `t_end`, calling `observe` after every step.
    pub fn run_with(&mut self, mut observe: impl FnMut(&NsdSolver) -> Result<()>) -> Result<()> {
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

/// Builds and runs a solver to completion.
pub fn run_nsd(mesh: Arc<Mesh>, config: SchemeConfig, initial: NsdInitial) -> Result<NsdSolver> {
    let mut solver = NsdSolver::new(mesh, config, initial)?;
    solver.run()?;
    Ok(solver)
}
