//! Linear and 0/1 mixed-integer programming.
//!
//! [`lp`] holds the problem representation and [`solve_lp`]; [`milp`] runs
//! branch and bound on top of the same simplex engine; [`format`] reads and
//! writes problems as text for debugging.

pub mod format;
pub mod lp;
pub mod milp;
mod simplex;

pub use lp::{solve_lp, Bounds, Constraint, LpError, LpProblem, LpResult, LpStatus, Relation};
pub use milp::{
    relative_gap, solve_milp, solve_milp_from, MilpConfig, MilpError, MilpProblem, MilpResult,
    MilpStatus, SearchSnapshot,
};
