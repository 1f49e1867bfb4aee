//! Monotone finite-difference solver for the dividend / injection
//! variational inequality.

mod barriers;
mod grid;
mod howard;
mod operators;
mod sweep;

pub use barriers::{extract_barriers, BarrierPolicy};
pub use grid::{Grid, GridSpec, PolicyGrid, Regime, ValueGrid};
pub use howard::{howard_solve, improve_policy, policy_evaluation, Solution, SolveOptions};
pub use operators::{Scheme, ViTerms};
pub use sweep::{sensitivity_sweep, SweepParam};
