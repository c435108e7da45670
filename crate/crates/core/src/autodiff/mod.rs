//! Exact input derivatives (forward-mode jets) and exact parameter gradients
//! (reverse-mode tape over the jet arithmetic).

pub mod jet;
pub mod params;
pub mod tape;

pub use jet::{Dirs, Jet2, Lane};
pub use params::{Matrix, ParamLayout, ParameterVector, Role, Segment, Unpacked};
pub use tape::{grad_params, Tape, Var};
