//! Mixed finite element solvers for coupled free-flow and porous-media
//! problems on two-rectangle domains.

pub mod chnsd;
pub mod elements;
pub mod error;
pub mod experiments;
pub mod forms;
pub mod io;
pub mod mesh;
pub mod mms;
pub mod nsd;
pub mod oracles;
pub mod par;
pub mod sparse;
pub mod trace;

pub use error::{Error, Result};
