//! Drivers turning a [`RunConfig`] into a run with trace and snapshots.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chnsd::{ChnsdConfig, ChnsdInitial, ChnsdSolver, ChnsdSpaces};
use crate::error::{Error, Result};
use crate::forms::{Conductivity, Field, FormCoefficients, Tensor};
use crate::io::{vertex_data, write_trace, write_vtk, ConductivitySpec, Experiment, RunConfig, VtkData};
use crate::mesh::{build_two_domain_mesh, EdgeTag, Geometry, Mesh, Point, Rect};
use crate::mms::{convergence_study, CaseId, ConvergenceTable, ManufacturedCase};
use crate::nsd::{NsdInitial, NsdSolver, NsdSpaces, SchemeConfig};
use crate::trace::TraceRecord;

/// `Ω_f = [0,2] × [1.5,2]` above `Ω_p = [0,2] × [0,1.5]`.
pub fn filtration_geometry() -> Geometry {
    Geometry::new(Rect::new(0.0, 2.0, 1.5, 2.0), Rect::new(0.0, 2.0, 0.0, 1.5)).expect("valid geometry")
}

/// `Ω_f = [0,1]²` below `Ω_p = [0,1] × [1,2]`.
pub fn two_phase_geometry() -> Geometry {
    Geometry::new(Rect::new(0.0, 1.0, 0.0, 1.0), Rect::new(0.0, 1.0, 1.0, 2.0)).expect("valid geometry")
}

/// Per-triangle or uniform conductivity on `mesh`. Random tensors draw
/// one `r ∈ (0, 1]` per triangle in triangle order.
pub fn build_conductivity(spec: &ConductivitySpec, mesh: &Mesh, seed: u64) -> Conductivity {
    match spec {
        ConductivitySpec::Tensor(k) => Conductivity::Uniform(*k),
        ConductivitySpec::Blocks { base, low, blocks } => Conductivity::PerTriangle(
            (0..mesh.num_triangles())
                .map(|t| {
                    let c = mesh.centroid(t);
                    let k = if blocks.iter().any(|b| b.contains(c, 0.0)) { *low } else { *base };
                    [[k, 0.0], [0.0, k]]
                })
                .collect(),
        ),
        ConductivitySpec::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Conductivity::PerTriangle(
                (0..mesh.num_triangles())
                    .map(|_| {
                        let r = 1.0 - rng.random::<f64>();
                        [[r, 0.1 * r], [0.1 * r, r]] as Tensor
                    })
                    .collect(),
            )
        }
    }
}

/// Initial phase of the droplet: an `n`-petal perturbation of a circle of
/// radius 0.25. The angle is taken with `atan2`, which agrees with the
/// single-argument arctangent under `cos(n ·)` for even `n`.
pub fn petal_phase(p: Point, center: Point, petals: u32, eps: f64) -> f64 {
    let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
    let r = dx.hypot(dy);
    let theta = dy.atan2(dx);
    ((0.25 + 0.1 * (petals as f64 * theta).cos() - r) / (2f64.sqrt() * eps)).tanh()
}

pub fn bubble_phase(p: Point, center: Point, radius: f64, eps: f64) -> f64 {
    let r = (p[0] - center[0]).hypot(p[1] - center[1]);
    ((radius - r) / (2f64.sqrt() * eps)).tanh()
}

/// Centres and radius of the two-bubble variant.
pub const TWO_BUBBLES: ([Point; 2], f64) = ([[0.32, 0.5], [0.68, 0.5]], 0.15);

/// Area of `{φ > 0}` and length of `{φ = 0}` for a linear field given by
/// vertex values, exact per triangle.
pub fn level_set_geometry(mesh: &Mesh, phi_at_vertex: &[f64]) -> (f64, f64) {
    let mut area = 0.0;
    let mut length = 0.0;
    for t in 0..mesh.num_triangles() {
        let v = mesh.vertices(t);
        let idx = mesh.triangles[t];
        let f = [phi_at_vertex[idx[0]], phi_at_vertex[idx[1]], phi_at_vertex[idx[2]]];
        // clip the triangle against φ > 0
        let mut poly: Vec<Point> = Vec::with_capacity(4);
        let mut cut: Vec<Point> = Vec::with_capacity(2);
        for i in 0..3 {
            let j = (i + 1) % 3;
            if f[i] > 0.0 {
                poly.push(v[i]);
            }
            if (f[i] > 0.0) != (f[j] > 0.0) {
                let s = f[i] / (f[i] - f[j]);
                let q = [v[i][0] + s * (v[j][0] - v[i][0]), v[i][1] + s * (v[j][1] - v[i][1])];
                poly.push(q);
                cut.push(q);
            }
        }
        if poly.len() >= 3 {
            let mut a = 0.0;
            for i in 0..poly.len() {
                let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
                a += p[0] * q[1] - q[0] * p[1];
            }
            area += 0.5 * a.abs();
        }
        if cut.len() == 2 {
            length += (cut[0][0] - cut[1][0]).hypot(cut[0][1] - cut[1][1]);
        }
    }
    (area, length)
}

/// `L² / (4π A)` of the positive phase; 1 for a disc.
pub fn isoperimetric_ratio(mesh: &Mesh, phi: &Field) -> f64 {
    let (a, l) = level_set_geometry(mesh, &vertex_values(mesh, phi));
    l * l / (4.0 * std::f64::consts::PI * a)
}

/// Centroid of the positive phase `{φ > 0}`, using the exact clipped
/// polygons of the linear interpolant.
pub fn phase_centroid(mesh: &Mesh, phi: &Field) -> Point {
    let values = vertex_values(mesh, phi);
    let mut m = 0.0;
    let mut c = [0.0, 0.0];
    for t in 0..mesh.num_triangles() {
        let v = mesh.vertices(t);
        let idx = mesh.triangles[t];
        let f = [values[idx[0]], values[idx[1]], values[idx[2]]];
        let mut poly: Vec<Point> = Vec::with_capacity(4);
        for i in 0..3 {
            let j = (i + 1) % 3;
            if f[i] > 0.0 {
                poly.push(v[i]);
            }
            if (f[i] > 0.0) != (f[j] > 0.0) {
                let s = f[i] / (f[i] - f[j]);
                poly.push([v[i][0] + s * (v[j][0] - v[i][0]), v[i][1] + s * (v[j][1] - v[i][1])]);
            }
        }
        for k in 1..poly.len().saturating_sub(1) {
            let (a, b, d) = (poly[0], poly[k], poly[k + 1]);
            let w = 0.5 * ((b[0] - a[0]) * (d[1] - a[1]) - (d[0] - a[0]) * (b[1] - a[1])).abs();
            m += w;
            c[0] += w * (a[0] + b[0] + d[0]) / 3.0;
            c[1] += w * (a[1] + b[1] + d[1]) / 3.0;
        }
    }
    [c[0] / m, c[1] / m]
}

fn vertex_values(mesh: &Mesh, phi: &Field) -> Vec<f64> {
    match vertex_data(mesh, phi) {
        VtkData::Scalar(v) => v,
        VtkData::Vector(v) => v.into_iter().map(|x| x[0]).collect(),
    }
}

/// Shape diagnostics sampled after every step of a two-phase run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeSample {
    pub t: f64,
    pub isoperimetric: f64,
    pub centroid: Point,
}

#[derive(Clone, Debug, Default)]
pub struct RunOutcome {
    pub records: Vec<TraceRecord>,
    pub trace: Option<PathBuf>,
    pub snapshots: Vec<PathBuf>,
    pub convergence: Option<ConvergenceTable>,
    pub factorizations: usize,
    pub clamped_steps: usize,
    pub shape: Vec<ShapeSample>,
}

/// Step index at which each snapshot time is written.
fn snapshot_steps(times: &[f64], dt: f64) -> Vec<(usize, f64)> {
    times.iter().map(|&t| ((t / dt).round() as usize, t)).collect()
}

fn snapshot_path(out: &Path, tag: &str, t: f64) -> PathBuf {
    out.join(format!("{tag}_t{t:.3}.vtk"))
}

pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out)?;
    info!("running {} into {}", cfg.tag(), cfg.out.display());
    match cfg.experiment {
        Experiment::Convergence => run_convergence(cfg),
        Experiment::Filtration | Experiment::Custom => run_single_phase(cfg),
        Experiment::PhaseSeparation | Experiment::Droplet | Experiment::Bubble => run_two_phase(cfg),
    }
}

fn run_convergence(cfg: &RunConfig) -> Result<RunOutcome> {
    let id = CaseId::parse(&cfg.case).ok_or_else(|| Error::Config { key: "case".into(), message: cfg.case.clone() })?;
    let mut case = ManufacturedCase::new(id).with_convection(cfg.convection);
    let ConductivitySpec::Tensor(k) = cfg.conductivity else {
        return Err(Error::Config { key: "k".into(), message: "manufactured cases need a uniform tensor".into() });
    };
    case.coefficients = FormCoefficients { conductivity: Conductivity::Uniform(k), ..cfg.coefficients.clone() };
    let table = convergence_study(&case, cfg.scheme, &cfg.h_list, cfg.dt_rule, cfg.t_end)?;
    let path = table.save(&cfg.out)?;
    info!("rates u {:.3} phi {:.3} p {:.3} written to {}", table.rate_u, table.rate_phi, table.rate_p, path.display());
    Ok(RunOutcome { convergence: Some(table), ..Default::default() })
}

/// NSD run with homogeneous data: filtration presets, or seeded random
/// velocity and head for `custom`.
pub fn single_phase_solver(cfg: &RunConfig) -> Result<NsdSolver> {
    let geometry = match cfg.experiment {
        Experiment::Filtration => filtration_geometry(),
        _ => Geometry::unit_stack(),
    };
    let mesh = Arc::new(build_two_domain_mesh(&geometry, cfg.h)?);
    let mut coefficients = cfg.coefficients.clone();
    coefficients.conductivity = build_conductivity(&cfg.conductivity, &mesh, cfg.seed);
    let mut config = SchemeConfig::new(coefficients, cfg.dt, cfg.t_end, cfg.scheme);
    config.convection = cfg.convection;
    config.solver = cfg.solver;
    let spaces = NsdSpaces::new(&mesh);
    let mut initial = match cfg.experiment {
        Experiment::Filtration => {
            NsdInitial::interpolate(&spaces, |x| [0.0, 0.01 * x[0] * (x[0] - 2.0)], |_| 0.0, |_| 0.0)
        }
        _ => random_initial(&spaces, cfg.seed),
    };
    // walls are no-slip, so the nodal initial velocity is zeroed there
    let wall = spaces.velocity.boundary_mask(EdgeTag::GammaF);
    let n = spaces.velocity.n_scalar;
    for (i, _) in wall.iter().enumerate().filter(|(_, &b)| b) {
        initial.u[i] = 0.0;
        initial.u[n + i] = 0.0;
    }
    for (i, &b) in spaces.head.boundary_mask(EdgeTag::GammaP).iter().enumerate() {
        if b {
            initial.phi[i] = 0.0;
        }
    }
    NsdSolver::new(mesh, config, initial)
}

/// Uniform `[-1, 1]` nodal values for velocity and head.
pub fn random_initial(spaces: &NsdSpaces, seed: u64) -> NsdInitial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect::<Vec<f64>>();
    NsdInitial {
        u: draw(spaces.velocity.total_dofs()),
        phi: draw(spaces.head.total_dofs()),
        p: vec![0.0; spaces.pressure.total_dofs()],
    }
}

fn nsd_snapshot(solver: &NsdSolver, path: &Path) -> Result<()> {
    let mesh = &*solver.mesh;
    let fields = [
        ("velocity", vertex_data(mesh, &solver.velocity())),
        ("pressure", vertex_data(mesh, &solver.pressure())),
        ("head", vertex_data(mesh, &solver.head())),
    ];
    write_vtk(mesh, &fields, path)
}

fn run_single_phase(cfg: &RunConfig) -> Result<RunOutcome> {
    let mut solver = single_phase_solver(cfg)?;
    let tag = cfg.tag();
    let plan = snapshot_steps(&cfg.snapshots, cfg.dt);
    let mut snapshots = Vec::new();
    for &(_, t) in plan.iter().filter(|(k, _)| *k == 0) {
        let p = snapshot_path(&cfg.out, &tag, t);
        nsd_snapshot(&solver, &p)?;
        snapshots.push(p);
    }
    let result = solver.run_with(|s| {
        for &(_, t) in plan.iter().filter(|(k, _)| *k == s.state.step) {
            let p = snapshot_path(&cfg.out, &tag, t);
            nsd_snapshot(s, &p)?;
            snapshots.push(p);
        }
        Ok(())
    });
    let trace = cfg.out.join(format!("trace_{tag}.csv"));
    write_trace(&solver.trace, &trace, &cfg.hash(), cfg.seed)?;
    result?;
    Ok(RunOutcome {
        records: solver.trace.clone(),
        trace: Some(trace),
        snapshots,
        factorizations: solver.factorizations(),
        ..Default::default()
    })
}

/// Scheme III solver for the phase-field presets.
pub fn two_phase_solver(cfg: &RunConfig) -> Result<ChnsdSolver> {
    let mesh = Arc::new(build_two_domain_mesh(&two_phase_geometry(), cfg.h)?);
    let mut coefficients = cfg.coefficients.clone();
    coefficients.conductivity = build_conductivity(&cfg.conductivity, &mesh, cfg.seed);
    let eps = coefficients.eps;
    let mut config = ChnsdConfig::new(coefficients, cfg.dt, cfg.t_end);
    config.convection = cfg.convection;
    config.solver = cfg.solver;
    config.stabilization = cfg.stabilization;
    let spaces = ChnsdSpaces::new(&mesh);
    let initial = match cfg.experiment {
        Experiment::PhaseSeparation => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            ChnsdInitial::from_phase(&spaces, |p| p[1] - 1.0 + 0.01 * rng.random_range(-1.0..=1.0))
        }
        Experiment::Droplet => ChnsdInitial::from_phase(&spaces, |p| petal_phase(p, cfg.center, cfg.petals, eps)),
        Experiment::Bubble if cfg.bubbles == 2 => {
            let (centers, r) = TWO_BUBBLES;
            ChnsdInitial::from_phase(&spaces, |p| {
                bubble_phase(p, centers[0], r, eps).max(bubble_phase(p, centers[1], r, eps))
            })
        }
        Experiment::Bubble => ChnsdInitial::from_phase(&spaces, |p| bubble_phase(p, cfg.center, cfg.radius, eps)),
        e => return Err(Error::Config { key: "experiment".into(), message: format!("{e} is not a two-phase run") }),
    };
    ChnsdSolver::new(mesh, config, initial)
}

fn chnsd_snapshot(solver: &ChnsdSolver, path: &Path) -> Result<()> {
    let mesh = &*solver.mesh;
    let fields = [
        ("phi", vertex_data(mesh, &solver.phase_field())),
        ("mu", vertex_data(mesh, &solver.chemical_potential())),
        ("velocity_f", vertex_data(mesh, &solver.fluid_velocity())),
        ("velocity_p", vertex_data(mesh, &solver.porous_velocity())),
        ("pressure_f", vertex_data(mesh, &solver.fluid_pressure())),
        ("pressure_p", vertex_data(mesh, &solver.porous_pressure())),
    ];
    write_vtk(mesh, &fields, path)
}

fn shape_sample(solver: &ChnsdSolver) -> ShapeSample {
    let phi = solver.phase_field();
    ShapeSample {
        t: solver.state.t,
        isoperimetric: isoperimetric_ratio(&solver.mesh, &phi),
        centroid: phase_centroid(&solver.mesh, &phi),
    }
}

fn run_two_phase(cfg: &RunConfig) -> Result<RunOutcome> {
    let mut solver = two_phase_solver(cfg)?;
    let tag = cfg.tag();
    let plan = snapshot_steps(&cfg.snapshots, cfg.dt);
    let mut snapshots = Vec::new();
    for &(_, t) in plan.iter().filter(|(k, _)| *k == 0) {
        let p = snapshot_path(&cfg.out, &tag, t);
        chnsd_snapshot(&solver, &p)?;
        snapshots.push(p);
    }
    let mut shape = vec![shape_sample(&solver)];
    let result = solver.run_with(|s| {
        shape.push(shape_sample(s));
        for &(_, t) in plan.iter().filter(|(k, _)| *k == s.state.step) {
            let p = snapshot_path(&cfg.out, &tag, t);
            chnsd_snapshot(s, &p)?;
            snapshots.push(p);
        }
        Ok(())
    });
    let trace = cfg.out.join(format!("trace_{tag}.csv"));
    write_trace(&solver.trace, &trace, &cfg.hash(), cfg.seed)?;
    if solver.clamped_steps > 0 {
        log::warn!("{} of {} steps clamped the relaxation factor", solver.clamped_steps, solver.state.step);
    }
    result?;
    Ok(RunOutcome {
        records: solver.trace.clone(),
        trace: Some(trace),
        snapshots,
        factorizations: solver.factorizations(),
        clamped_steps: solver.clamped_steps,
        shape,
        ..Default::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elements::{build_dof_map, BasisFamily, DofDomain};

    #[test]
    fn level_set_of_a_half_plane() {
        let mesh = build_two_domain_mesh(&two_phase_geometry(), 0.25).unwrap();
        let phi: Vec<f64> = mesh.nodes.iter().map(|p| 0.6 - p[0]).collect();
        let (a, l) = level_set_geometry(&mesh, &phi);
        assert!((a - 1.2).abs() < 1e-12 && (l - 2.0).abs() < 1e-12, "{a} {l}");
    }

    #[test]
    fn disc_ratio_and_centroid() {
        let mesh = build_two_domain_mesh(&two_phase_geometry(), 1.0 / 64.0).unwrap();
        let space = Arc::new(build_dof_map(&mesh, BasisFamily::Linear, 1, DofDomain::Whole));
        let disc = Field::new(&space, space.interpolate_scalar(|p| bubble_phase(p, [0.5, 0.7], 0.3, 0.01))).unwrap();
        let r = isoperimetric_ratio(&mesh, &disc);
        assert!((1.0..1.01).contains(&r), "{r}");
        let c = phase_centroid(&mesh, &disc);
        assert!((c[0] - 0.5).abs() < 1e-3 && (c[1] - 0.7).abs() < 1e-3, "{c:?}");
        let petal = Field::new(&space, space.interpolate_scalar(|p| petal_phase(p, [0.5, 1.0], 4, 0.01))).unwrap();
        assert!(isoperimetric_ratio(&mesh, &petal) > r + 0.05);
    }

    #[test]
    fn random_conductivity_is_seeded_and_in_range() {
        let mesh = build_two_domain_mesh(&filtration_geometry(), 0.25).unwrap();
        let a = build_conductivity(&ConductivitySpec::Random, &mesh, 5);
        assert_eq!(a, build_conductivity(&ConductivitySpec::Random, &mesh, 5));
        assert_ne!(a, build_conductivity(&ConductivitySpec::Random, &mesh, 6));
        let Conductivity::PerTriangle(ks) = a else { panic!() };
        assert!(ks.iter().all(|k| k[0][0] > 0.0 && k[0][0] <= 1.0 && k[0][1] == 0.1 * k[0][0]));
    }

    #[test]
    fn blocks_lower_conductivity_inside() {
        let mesh = build_two_domain_mesh(&filtration_geometry(), 0.05).unwrap();
        let spec = ConductivitySpec::Blocks {
            base: 1.0,
            low: 1e-6,
            blocks: crate::io::filtration_blocks('b').unwrap().to_vec(),
        };
        let k = build_conductivity(&spec, &mesh, 0);
        let low = (0..mesh.num_triangles()).filter(|&t| k.at(t)[0][0] == 1e-6).count();
        assert!(low > 0);
        let (probe, _) = mesh.locate([1.0, 1.05]).unwrap();
        assert_eq!(k.at(probe)[0][0], 1e-6);
    }
}
