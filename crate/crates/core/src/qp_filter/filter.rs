use serde::{Deserialize, Serialize};

use super::solver::{solve, QpProblem, QpSolution};
use crate::barrier::{constraint_coefficients, neighborhood, BarrierSpec};
use crate::dynamics::{ControlBox, ControlInput, JointState};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which margin the filter enforces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterVariant {
    /// Plain CBF-QP: no discretization or uncertainty margin.
    CbfQp,
    /// Robust CBF-QP: discretization margin `eta` only.
    RcbfQp,
    /// CRC safety filter: `eta + lambda + epsilon`.
    CrcSf,
}

impl FilterVariant {
    pub fn margin<T: Scalar>(self, eta: T, lambda: T, epsilon: T) -> T {
        match self {
            Self::CbfQp => T::zero(),
            Self::RcbfQp => eta,
            Self::CrcSf => eta + lambda + epsilon,
        }
    }
}

/// Parameters shared by every filter call of an episode.
#[derive(Clone, Copy, Debug)]
pub struct FilterParams<'a, T> {
    pub spec: &'a BarrierSpec<T>,
    pub eta: T,
    pub bounds: &'a ControlBox<T>,
}

#[derive(Clone, Debug)]
pub struct FilterOutput<T> {
    pub control: ControlInput<T>,
    /// `None` when no human was in the neighborhood.
    pub solution: Option<QpSolution<T>>,
    pub margin: T,
    /// Neighborhood members, nearest first.
    pub neighbors: Vec<usize>,
}

impl<T: Scalar> FilterOutput<T> {
    pub fn feasible(&self) -> bool {
        self.solution.as_ref().is_none_or(|s| s.feasible)
    }
}

/// Builds the filter QP: one constraint per neighborhood human and per sampled
/// human action (`u_h_samples[s][i]` is sample `s` for human `i`).
pub fn build_problem<T: Scalar>(
    x: &JointState<T>,
    u_nom: ControlInput<T>,
    u_h_samples: &[Vec<ControlInput<T>>],
    neighbors: &[usize],
    margin: T,
    params: &FilterParams<'_, T>,
) -> QpProblem<T> {
    let mut constraints = Vec::with_capacity(neighbors.len() * u_h_samples.len());
    for &i in neighbors {
        for sample in u_h_samples {
            constraints.push(constraint_coefficients(x, i, sample[i], params.spec, margin));
        }
    }
    QpProblem {
        u_nom: u_nom.as_vec(),
        constraints,
        bounds: *params.bounds,
    }
}

/// Minimally-invasive safety filter around `u_nom`.
pub fn apply_filter<T: Scalar>(
    x: &JointState<T>,
    u_nom: ControlInput<T>,
    u_h_samples: &[Vec<ControlInput<T>>],
    variant: FilterVariant,
    lambda: T,
    epsilon: T,
    params: &FilterParams<'_, T>,
) -> Result<FilterOutput<T>> {
    if let Some(bad) = u_h_samples.iter().find(|s| s.len() != x.humans.len()) {
        return Err(Error::DimensionMismatch {
            what: "human actions per sample",
            expected: x.humans.len(),
            got: bad.len(),
        });
    }
    let margin = variant.margin(params.eta, lambda, epsilon);
    let neighbors = neighborhood(x, params.spec);
    if neighbors.is_empty() {
        return Ok(FilterOutput {
            control: params.bounds.clamp(u_nom),
            solution: None,
            margin,
            neighbors,
        });
    }
    if u_h_samples.is_empty() {
        return Err(Error::Empty("predicted human action samples"));
    }
    let problem = build_problem(x, u_nom, u_h_samples, &neighbors, margin, params);
    let sol = solve(&problem);
    Ok(FilterOutput {
        control: params.bounds.clamp(ControlInput::from_vec(sol.u)),
        solution: Some(sol),
        margin,
        neighbors,
    })
}
