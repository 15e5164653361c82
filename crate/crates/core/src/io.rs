//! Run configuration, trace CSV and legacy VTK output.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forms::{tensor_scaled, Convection, Field, FormCoefficients, Mobility, Tensor};
use crate::mesh::{Mesh, Point, Rect};
use crate::mms::{CaseId, DtRule};
use crate::nsd::Scheme;
use crate::sparse::SolverKind;
use crate::trace::TraceRecord;

/// Exact header of trace files.
pub const TRACE_HEADER: &str = "step,t,E,xi,I,div_residual,mass,flags";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Experiment {
    Convergence,
    Filtration,
    PhaseSeparation,
    Droplet,
    Bubble,
    Custom,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Convergence,
        Experiment::Filtration,
        Experiment::PhaseSeparation,
        Experiment::Droplet,
        Experiment::Bubble,
        Experiment::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Convergence => "convergence",
            Experiment::Filtration => "filtration",
            Experiment::PhaseSeparation => "phase-separation",
            Experiment::Droplet => "droplet",
            Experiment::Bubble => "bubble",
            Experiment::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| config_error("experiment", format!("unknown experiment `{s}`")))
    }

    /// Whether the experiment runs the phase-field scheme.
    pub fn is_two_phase(self) -> bool {
        matches!(self, Experiment::PhaseSeparation | Experiment::Droplet | Experiment::Bubble)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where the hydraulic conductivity comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum ConductivitySpec {
    Tensor(Tensor),
    /// `low` inside the rectangles, `base` elsewhere.
    Blocks {
        base: f64,
        low: f64,
        blocks: Vec<Rect>,
    },
    /// `[[r, 0.1 r], [0.1 r, r]]` with `r` uniform on `(0, 1]` per triangle.
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    /// `ex1`/`ex2` for convergence studies, `a`..`g` for filtration.
    pub case: String,
    pub scheme: Scheme,
    pub convection: Convection,
    pub solver: SolverKind,
    pub h: f64,
    pub dt: f64,
    pub t_end: f64,
    pub coefficients: FormCoefficients,
    pub conductivity: ConductivitySpec,
    /// Petal count of the initial droplet.
    pub petals: u32,
    /// Bubble count: 1, or 2 for the merging variant.
    pub bubbles: u32,
    pub radius: f64,
    pub center: Point,
    pub stabilization: f64,
    pub snapshots: Vec<f64>,
    pub seed: u64,
    pub out: PathBuf,
    pub h_list: Vec<f64>,
    pub dt_rule: DtRule,
}

fn config_error(key: &str, message: impl Into<String>) -> Error {
    Error::Config { key: key.to_string(), message: message.into() }
}

/// Default rectangles of the filtration cases inside `[0,2] × [0,1.5]`.
/// The first block sits in the upper third; the second varies in width
/// for cases a–c and in height for cases d–f.
pub fn filtration_blocks(case: char) -> Option<[Rect; 2]> {
    let first = Rect::new(0.6, 1.4, 1.0, 1.1);
    let second = match case {
        'a' => Rect::new(0.8, 1.2, 0.5, 0.6),
        'b' => Rect::new(0.6, 1.4, 0.5, 0.6),
        'c' => Rect::new(0.4, 1.6, 0.5, 0.6),
        'd' => Rect::new(0.95, 1.05, 0.45, 0.65),
        'e' => Rect::new(0.95, 1.05, 0.35, 0.75),
        'f' => Rect::new(0.95, 1.05, 0.25, 0.85),
        _ => return None,
    };
    Some([first, second])
}

impl RunConfig {
    /// Parameter set of `experiment` before any key is applied.
    pub fn preset(experiment: Experiment) -> Self {
        let mut c = RunConfig {
            experiment,
            case: String::new(),
            scheme: Scheme::One,
            convection: Convection::Emac,
            solver: SolverKind::Direct,
            h: 1.0 / 16.0,
            dt: 0.01,
            t_end: 1.0,
            coefficients: FormCoefficients::default(),
            conductivity: ConductivitySpec::Tensor(tensor_scaled(1.0)),
            petals: 4,
            bubbles: 1,
            radius: 0.3,
            center: [0.5, 0.5],
            stabilization: 0.0,
            snapshots: Vec::new(),
            seed: 0,
            out: PathBuf::from("out"),
            h_list: Vec::new(),
            dt_rule: DtRule::HSquared,
        };
        let two_phase = FormCoefficients {
            nu: 0.1,
            nu_p: 0.1,
            alpha: 0.01,
            chi: 1.0,
            lambda: 0.1,
            eps: 0.01,
            mobility: Mobility::Regularized(0.01),
            ..FormCoefficients::default()
        };
        match experiment {
            Experiment::Convergence => {
                c.case = "ex1".into();
                c.convection = Convection::Standard;
                c.coefficients.nu = 0.001;
                c.t_end = 0.5;
                c.h_list = vec![1.0 / 16.0, 1.0 / 20.0, 1.0 / 24.0, 1.0 / 28.0, 1.0 / 32.0];
                c.h = 1.0 / 32.0;
            }
            Experiment::Filtration => {
                c.case = "a".into();
                c.h = 1.0 / 80.0;
                c.dt = 0.005;
                c.t_end = 0.5;
                c.conductivity =
                    ConductivitySpec::Blocks { base: 1.0, low: 1e-6, blocks: filtration_blocks('a').unwrap().to_vec() };
                c.snapshots = vec![0.0, 0.5];
            }
            Experiment::PhaseSeparation => {
                c.h = 0.01;
                c.dt = 0.005;
                c.t_end = 10.0;
                c.coefficients = two_phase;
                c.conductivity = ConductivitySpec::Tensor([[0.5, 0.1], [0.1, 0.2]]);
                c.snapshots = vec![0.0, 0.5, 1.0, 2.0, 4.0, 10.0];
            }
            Experiment::Droplet => {
                c.h = 0.01;
                c.dt = 0.005;
                c.t_end = 4.0;
                c.coefficients = FormCoefficients { nu_p: 1.0, ..two_phase };
                c.conductivity = ConductivitySpec::Tensor(tensor_scaled(0.01));
                c.snapshots = vec![0.0, 0.2, 0.6, 1.0, 4.0];
                c.center = [0.5, 1.0];
            }
            Experiment::Bubble => {
                c.h = 0.01;
                c.dt = 0.005;
                c.t_end = 4.0;
                c.coefficients = FormCoefficients { nu_p: 1.0, buoyancy: [0.0, 5.0], ..two_phase };
                c.conductivity = ConductivitySpec::Tensor(tensor_scaled(0.01));
                c.snapshots = vec![0.0, 0.4, 1.0, 1.4, 2.0, 2.2, 2.8, 4.0];
            }
            Experiment::Custom => {
                c.convection = Convection::Standard;
                c.t_end = 0.1;
            }
        }
        c
    }

    fn set_case(&mut self, value: &str) -> Result<()> {
        match self.experiment {
            Experiment::Convergence => {
                CaseId::parse(value)
                    .ok_or_else(|| config_error("case", format!("expected ex1 or ex2, got `{value}`")))?;
            }
            Experiment::Filtration => {
                let mut chars = value.chars();
                let (Some(ch), None) = (chars.next(), chars.next()) else {
                    return Err(config_error("case", format!("expected a letter a..g, got `{value}`")));
                };
                self.conductivity = match ch {
                    'g' => ConductivitySpec::Random,
                    _ => {
                        let blocks = filtration_blocks(ch)
                            .ok_or_else(|| config_error("case", format!("expected a letter a..g, got `{value}`")))?;
                        ConductivitySpec::Blocks { base: 1.0, low: 1e-6, blocks: blocks.to_vec() }
                    }
                };
            }
            _ => return Err(config_error("case", format!("not used by {}", self.experiment))),
        }
        self.case = value.to_string();
        Ok(())
    }

    fn set_bubbles(&mut self, n: u32) -> Result<()> {
        match n {
            1 => {
                self.coefficients.buoyancy = [0.0, 5.0];
                self.snapshots = vec![0.0, 0.4, 1.0, 1.4, 2.0, 2.2, 2.8, 4.0];
                self.t_end = 4.0;
            }
            2 => {
                self.coefficients.buoyancy = [0.0, 8.0];
                self.snapshots = vec![0.0, 0.2, 0.5, 0.7, 1.0, 1.1, 1.4, 2.0];
                self.t_end = 2.0;
            }
            _ => return Err(config_error("bubbles", format!("expected 1 or 2, got {n}"))),
        }
        self.bubbles = n;
        Ok(())
    }

    fn set_petals(&mut self, n: u32) -> Result<()> {
        if n == 0 || n % 2 == 1 {
            return Err(config_error("petals", format!("expected a positive even count, got {n}")));
        }
        self.petals = n;
        self.snapshots = if n == 6 { vec![0.0, 0.2, 0.4, 0.6, 4.0] } else { vec![0.0, 0.2, 0.6, 1.0, 4.0] };
        Ok(())
    }

    /// Applies one `key=value` setting.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| v.parse::<f64>().map_err(|_| config_error(key, format!("expected a number, got `{v}`")));
        let positive = |v: &str| {
            let x = num(v)?;
            if x > 0.0 && x.is_finite() {
                Ok(x)
            } else {
                Err(config_error(key, format!("must be positive, got {v}")))
            }
        };
        let nonneg = |v: &str| {
            let x = num(v)?;
            if x >= 0.0 && x.is_finite() {
                Ok(x)
            } else {
                Err(config_error(key, format!("must be nonnegative, got {v}")))
            }
        };
        let list = |v: &str| -> Result<Vec<f64>> {
            v.split(',').map(|s| s.trim()).filter(|s| !s.is_empty()).map(num).collect()
        };
        let integer =
            |v: &str| v.parse::<u64>().map_err(|_| config_error(key, format!("expected an integer, got `{v}`")));
        let rect = |v: &str| -> Result<Rect> {
            let x = list(v)?;
            if x.len() != 4 || !(x[0] < x[1] && x[2] < x[3]) {
                return Err(config_error(key, format!("expected x0,x1,y0,y1 with x0<x1 and y0<y1, got `{v}`")));
            }
            Ok(Rect::new(x[0], x[1], x[2], x[3]))
        };
        match key {
            "experiment" => {
                let e = Experiment::parse(value)?;
                if e != self.experiment {
                    return Err(config_error(key, "must come first and appear once"));
                }
            }
            "case" => self.set_case(value)?,
            "scheme" => {
                self.scheme = match value {
                    "1" => Scheme::One,
                    "2" => Scheme::Two,
                    _ => return Err(config_error(key, format!("expected 1 or 2, got `{value}`"))),
                };
                if self.experiment == Experiment::Convergence {
                    self.dt_rule = default_dt_rule(&self.case, self.scheme);
                }
            }
            "convection" => {
                self.convection = match value {
                    "standard" => Convection::Standard,
                    "emac" => Convection::Emac,
                    _ => return Err(config_error(key, format!("expected standard or emac, got `{value}`"))),
                }
            }
            "solver" => {
                self.solver = match value {
                    "direct" => SolverKind::Direct,
                    "bicgstab" => SolverKind::BiCgStab { tol: 1e-12, max_iter: 20_000 },
                    _ => return Err(config_error(key, format!("expected direct or bicgstab, got `{value}`"))),
                }
            }
            "h" => {
                let h = positive(value)?;
                if h > 1.0 {
                    return Err(config_error(key, format!("must not exceed 1, got {h}")));
                }
                self.h = h;
            }
            "dt" => self.dt = positive(value)?,
            "t_end" => {
                self.t_end = positive(value)?;
                // preset snapshot times past the new end are dropped; explicit ones are applied later
                let end = self.t_end;
                self.snapshots.retain(|&t| t <= end + 1e-12);
            }
            "nu" => self.coefficients.nu = positive(value)?,
            "nu_p" => self.coefficients.nu_p = positive(value)?,
            "g" => self.coefficients.g = positive(value)?,
            "s0" => self.coefficients.s0 = positive(value)?,
            "alpha" => self.coefficients.alpha = nonneg(value)?,
            "chi" => self.coefficients.chi = positive(value)?,
            "lambda" => self.coefficients.lambda = positive(value)?,
            "eps" => self.coefficients.eps = positive(value)?,
            "mobility" => {
                self.coefficients.mobility = if value == "regularized" {
                    Mobility::Regularized(self.coefficients.eps)
                } else {
                    Mobility::Constant(positive(value)?)
                }
            }
            "buoyancy" => {
                let b = list(value)?;
                if b.len() != 2 {
                    return Err(config_error(key, format!("expected bx,by, got `{value}`")));
                }
                self.coefficients.buoyancy = [b[0], b[1]];
            }
            "k" => self.conductivity = ConductivitySpec::Tensor(tensor_scaled(positive(value)?)),
            "k_tensor" => {
                let k = list(value)?;
                if k.len() != 3 {
                    return Err(config_error(key, format!("expected k11,k12,k22, got `{value}`")));
                }
                let t = [[k[0], k[1]], [k[1], k[2]]];
                if !(t[0][0] > 0.0 && t[0][0] * t[1][1] - t[0][1] * t[1][0] > 0.0) {
                    return Err(config_error(key, "tensor must be symmetric positive definite"));
                }
                self.conductivity = ConductivitySpec::Tensor(t);
            }
            "block1" | "block2" => {
                let r = rect(value)?;
                let ConductivitySpec::Blocks { blocks, .. } = &mut self.conductivity else {
                    return Err(config_error(key, "only used by the block conductivity cases"));
                };
                blocks[if key == "block1" { 0 } else { 1 }] = r;
            }
            "k_low" => {
                let v = positive(value)?;
                let ConductivitySpec::Blocks { low, .. } = &mut self.conductivity else {
                    return Err(config_error(key, "only used by the block conductivity cases"));
                };
                *low = v;
            }
            "petals" => self.set_petals(integer(value)? as u32)?,
            "bubbles" => self.set_bubbles(integer(value)? as u32)?,
            "radius" => self.radius = positive(value)?,
            "center" => {
                let p = list(value)?;
                if p.len() != 2 {
                    return Err(config_error(key, format!("expected x,y, got `{value}`")));
                }
                self.center = [p[0], p[1]];
            }
            "stabilization" => self.stabilization = nonneg(value)?,
            "snapshots" => self.snapshots = list(value)?,
            "seed" => self.seed = integer(value)?,
            "out" => self.out = PathBuf::from(value),
            "h_list" => self.h_list = list(value)?,
            "dt_rule" => {
                self.dt_rule = match value {
                    "h^2" => DtRule::HSquared,
                    v if v.starts_with("h/") => DtRule::HOver(positive(&v[2..])?),
                    v => DtRule::Fixed(positive(v)?),
                }
            }
            _ => return Err(config_error(key, "unknown key")),
        }
        if key == "eps" {
            if let Mobility::Regularized(_) = self.coefficients.mobility {
                self.coefficients.mobility = Mobility::Regularized(self.coefficients.eps);
            }
        }
        Ok(())
    }

    /// Range checks that involve more than one key.
    pub fn validate(&self) -> Result<()> {
        if self.t_end < self.dt {
            return Err(config_error("t_end", format!("must be at least dt = {}", self.dt)));
        }
        if let Some(&t) = self.snapshots.iter().find(|&&t| !(0.0..=self.t_end + 1e-12).contains(&t)) {
            return Err(config_error("snapshots", format!("time {t} outside [0, {}]", self.t_end)));
        }
        if self.experiment == Experiment::Convergence {
            if self.h_list.len() < 2 {
                return Err(config_error("h_list", "needs at least two mesh sizes"));
            }
            if self.h_list.windows(2).any(|w| !(w[0] > w[1])) || self.h_list.iter().any(|&h| !(h > 0.0)) {
                return Err(config_error("h_list", "must be positive and strictly descending"));
            }
        }
        Ok(())
    }

    /// Deterministic text form used for hashing. The output directory
    /// is left out so relocated runs share a hash.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        format!("{c:?}")
    }

    /// Hex SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Suffix identifying case variants in file names.
    pub fn tag(&self) -> String {
        match self.experiment {
            Experiment::Filtration | Experiment::Convergence => format!("{}_{}", self.experiment, self.case),
            Experiment::Droplet => format!("{}_n{}", self.experiment, self.petals),
            Experiment::Bubble if self.bubbles == 2 => format!("{}_two", self.experiment),
            _ => self.experiment.to_string(),
        }
    }
}

/// Time step rule of the convergence studies: `h²` for the first-order
/// scheme, `h/8` (Ex1) or `h/4` (Ex2) for the second-order one.
pub fn default_dt_rule(case: &str, scheme: Scheme) -> DtRule {
    match (scheme, CaseId::parse(case)) {
        (Scheme::One, _) => DtRule::HSquared,
        (Scheme::Two, Some(CaseId::Ex2)) => DtRule::HOver(4.0),
        (Scheme::Two, _) => DtRule::HOver(8.0),
    }
}

/// Parses `key=value` lines with `#` comments. `experiment` is required
/// and selects the preset; `case` is applied before the other keys.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, &[])
}

/// Like [`parse_config`], with `overrides` replacing or adding keys.
pub fn parse_config_with(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(config_error(line, format!("line {}: expected key=value", n + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if pairs.iter().any(|(p, _): &(&str, &str)| *p == k) {
            return Err(config_error(k, "given more than once"));
        }
        pairs.push((k, v));
    }
    for (k, v) in overrides {
        pairs.retain(|(p, _)| p != k);
        pairs.push((k.as_str(), v.as_str()));
    }
    let experiment = pairs
        .iter()
        .find(|(k, _)| *k == "experiment")
        .map(|(_, v)| Experiment::parse(v))
        .transpose()?
        .ok_or_else(|| config_error("experiment", "required"))?;
    let mut cfg = RunConfig::preset(experiment);
    pairs.sort_by_key(|(k, _)| match *k {
        "experiment" => 0,
        "case" | "bubbles" | "petals" => 1,
        "eps" | "scheme" => 2,
        "snapshots" => 4,
        _ => 3,
    });
    for (k, v) in pairs {
        cfg.apply(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Point data attached to the mesh vertices.
#[derive(Clone, Debug, PartialEq)]
pub enum VtkData {
    Scalar(Vec<f64>),
    Vector(Vec<[f64; 2]>),
}

/// Vertex values of a field; vertices outside its domain get zero.
/// Quadratic fields lose their edge-midpoint values.
pub fn vertex_data(mesh: &Mesh, field: &Field) -> VtkData {
    let s = &*field.space;
    let get = |v: usize, c: usize| s.vertex_dof[v].map_or(0.0, |d| field.values[c * s.n_scalar + d]);
    if s.components == 1 {
        VtkData::Scalar((0..mesh.num_nodes()).map(|v| get(v, 0)).collect())
    } else {
        VtkData::Vector((0..mesh.num_nodes()).map(|v| [get(v, 0), get(v, 1)]).collect())
    }
}

/// Legacy ASCII unstructured grid with triangles (cell type 5).
pub fn write_vtk_to(mut w: impl Write, mesh: &Mesh, fields: &[(&str, VtkData)]) -> Result<()> {
    let n = mesh.num_nodes();
    for (name, data) in fields {
        let len = match data {
            VtkData::Scalar(v) => v.len(),
            VtkData::Vector(v) => v.len(),
        };
        if len != n {
            return Err(Error::Dimension(format!("field {name} has {len} values for {n} points")));
        }
    }
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "nsd snapshot")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {n} double")?;
    for p in &mesh.nodes {
        writeln!(w, "{:e} {:e} 0", p[0], p[1])?;
    }
    let m = mesh.num_triangles();
    writeln!(w, "CELLS {m} {}", 4 * m)?;
    for t in &mesh.triangles {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(w, "CELL_TYPES {m}")?;
    for _ in 0..m {
        writeln!(w, "5")?;
    }
    if !fields.is_empty() {
        writeln!(w, "POINT_DATA {n}")?;
    }
    for (name, data) in fields {
        match data {
            VtkData::Scalar(v) => {
                writeln!(w, "SCALARS {name} double 1")?;
                writeln!(w, "LOOKUP_TABLE default")?;
                for x in v {
                    writeln!(w, "{x:e}")?;
                }
            }
            VtkData::Vector(v) => {
                writeln!(w, "VECTORS {name} double")?;
                for x in v {
                    writeln!(w, "{:e} {:e} 0", x[0], x[1])?;
                }
            }
        }
    }
    Ok(())
}

pub fn write_vtk(mesh: &Mesh, fields: &[(&str, VtkData)], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_vtk_to(&mut w, mesh, fields)?;
    w.flush()?;
    Ok(())
}

/// Trace CSV preceded by `# config_hash=` and `# seed=` comment lines.
pub fn write_trace_to(mut w: impl Write, records: &[TraceRecord], config_hash: &str, seed: u64) -> Result<()> {
    writeln!(w, "# config_hash={config_hash}")?;
    writeln!(w, "# seed={seed}")?;
    writeln!(w, "{TRACE_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            r.step,
            r.t,
            r.energy,
            r.xi,
            r.dissipation,
            r.div_residual,
            r.mass,
            r.flag_string()
        )?;
    }
    Ok(())
}

pub fn write_trace(records: &[TraceRecord], path: &Path, config_hash: &str, seed: u64) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_trace_to(&mut w, records, config_hash, seed)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_two_domain_mesh, Geometry};

    #[test]
    fn empty_file_needs_experiment() {
        let e = parse_config("# nothing\n\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "experiment"), "{e}");
    }

    #[test]
    fn negative_dt_names_the_key() {
        let e = parse_config("experiment=custom\ndt=-1").unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "dt"), "{e}");
    }

    #[test]
    fn unknown_and_repeated_keys_are_rejected() {
        let e = parse_config("experiment=custom\nviscosity=2").unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "viscosity"));
        let e = parse_config("experiment=custom\nh=0.1\nh=0.2").unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "h"));
    }

    #[test]
    fn filtration_alone_is_the_preset() {
        let c = parse_config("experiment=filtration").unwrap();
        assert_eq!(c, RunConfig::preset(Experiment::Filtration));
        let g = parse_config("experiment = filtration # comment\ncase = g\nseed = 9").unwrap();
        assert_eq!(g.conductivity, ConductivitySpec::Random);
        assert_eq!(g.seed, 9);
    }

    #[test]
    fn two_bubbles_switch_buoyancy_and_times() {
        let c = parse_config("experiment=bubble\nbubbles=2").unwrap();
        assert_eq!(c.coefficients.buoyancy, [0.0, 8.0]);
        assert_eq!(c.snapshots.last(), Some(&2.0));
        assert!(parse_config("experiment=bubble\nsnapshots=5").is_err());
        let c = parse_config("experiment=bubble\nsnapshots=0.3\nt_end=1").unwrap();
        assert_eq!(c.snapshots, vec![0.3]);
        let c = parse_config("experiment=bubble\nt_end=1").unwrap();
        assert_eq!(c.snapshots, vec![0.0, 0.4, 1.0]);
    }

    #[test]
    fn overrides_replace_file_values() {
        let o = [("case".to_string(), "ex2".to_string()), ("scheme".to_string(), "2".to_string())];
        let c = parse_config_with("experiment=convergence\ncase=ex1", &o).unwrap();
        assert_eq!(c.case, "ex2");
        assert_eq!(c.dt_rule, DtRule::HOver(4.0));
        let c = parse_config("experiment=convergence\ndt_rule=h/2\nscheme=2").unwrap();
        assert_eq!(c.dt_rule, DtRule::HOver(2.0));
    }

    #[test]
    fn eps_updates_regularized_mobility() {
        let c = parse_config("experiment=droplet\neps=0.05").unwrap();
        assert_eq!(c.coefficients.mobility, Mobility::Regularized(0.05));
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse_config("experiment=custom").unwrap();
        let b = parse_config("experiment=custom\nseed=1").unwrap();
        assert_eq!(a.hash(), RunConfig::preset(Experiment::Custom).hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn vtk_layout() {
        let mesh = build_two_domain_mesh(&Geometry::unit_stack(), 0.5).unwrap();
        let n = mesh.num_nodes();
        let mut buf = Vec::new();
        let fields = [("s", VtkData::Scalar(vec![1.0; n])), ("v", VtkData::Vector(vec![[1.0, 2.0]; n]))];
        write_vtk_to(&mut buf, &mesh, &fields).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains(&format!("POINTS {n} double")));
        assert!(text.contains(&format!("CELL_TYPES {}", mesh.num_triangles())));
        assert!(text.contains("VECTORS v double"));
        assert!(text.lines().any(|l| l == "1e0 2e0 0"));
        let bad = [("s", VtkData::Scalar(vec![1.0; n - 1]))];
        assert!(write_vtk_to(Vec::new(), &mesh, &bad).is_err());
    }

    #[test]
    fn trace_header_and_rows() {
        let mut buf = Vec::new();
        write_trace_to(&mut buf, &[], "abc", 3).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("# config_hash=abc\n# seed=3\n{TRACE_HEADER}\n"));
        let r = TraceRecord {
            step: 1,
            t: 0.5,
            energy: 1.0,
            xi: 1.0,
            dissipation: 0.0,
            div_residual: 0.0,
            mass: 0.0,
            source: 0.0,
            flags: vec!["xi_clamped".into()],
        };
        let mut buf = Vec::new();
        write_trace_to(&mut buf, &[r.clone(), r], "abc", 3).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().last().unwrap().ends_with(",xi_clamped"));
    }
}
