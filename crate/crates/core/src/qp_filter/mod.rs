//! Minimally-invasive safety filter: a tiny convex QP over the robot's 2-D control.

mod filter;
mod solver;

pub use filter::{apply_filter, build_problem, FilterOutput, FilterParams, FilterVariant};
pub use solver::{solve, Active, Halfspace, QpProblem, QpSolution, SLACK_WEIGHT};
