//! Per-step diagnostic records.

/// One completed time step.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub xi: f64,
    /// Dissipation functional multiplied into the relaxation equation.
    pub dissipation: f64,
    pub div_residual: f64,
    /// `∫ φ` over the domain of the scalar unknown.
    pub mass: f64,
    /// Energy source of the relaxation law, zero for unforced runs.
    pub source: f64,
    pub flags: Vec<String>,
}

impl TraceRecord {
    pub fn flag_string(&self) -> String {
        self.flags.join("|")
    }
}
