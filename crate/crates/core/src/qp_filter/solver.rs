//! Exact solver for `min |u - u_nom|^2` over a box intersected with halfspaces,
//! for 2-D controls.
//!
//! The minimizer of a strictly convex QP in the plane is the projection of
//! `u_nom` onto the intersection of at most two active constraint lines, so
//! every KKT point is one of: `u_nom`, a projection onto one line, or the
//! intersection of two lines. Candidates are ranked by objective (ties broken
//! lexicographically) and the first feasible one is the optimum.

use std::cmp::Ordering;

use crate::dynamics::ControlBox;
use crate::scalar::{Scalar, Vec2};

/// Slack penalty weight used when the constraints and box do not intersect.
pub const SLACK_WEIGHT: f64 = 1e4;

/// The halfspace `a . u + b >= 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Halfspace<T> {
    pub a: Vec2<T>,
    pub b: T,
}

impl<T: Scalar> Halfspace<T> {
    pub fn new(a: Vec2<T>, b: T) -> Self {
        Self { a, b }
    }

    #[inline]
    pub fn eval(&self, u: Vec2<T>) -> T {
        self.a.dot(u) + self.b
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem<T> {
    pub u_nom: Vec2<T>,
    pub constraints: Vec<Halfspace<T>>,
    pub bounds: ControlBox<T>,
}

/// A constraint that holds with equality at the solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Active {
    Halfspace(usize),
    Lower(usize),
    Upper(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution<T> {
    pub u: Vec2<T>,
    pub feasible: bool,
    pub active_set: Vec<Active>,
    /// Largest deficit `max(0, -(a . u + b))` over the original halfspaces.
    pub violation: T,
}

/// One row of the stacked constraint system (halfspaces then box faces).
#[derive(Clone, Copy)]
struct Row<T> {
    c: Halfspace<T>,
    tag: Active,
}

fn rows<T: Scalar>(p: &QpProblem<T>) -> Vec<Row<T>> {
    let one = T::one();
    let zero = T::zero();
    let mut out: Vec<Row<T>> = p
        .constraints
        .iter()
        .enumerate()
        .map(|(i, c)| Row { c: *c, tag: Active::Halfspace(i) })
        .collect();
    let lo = p.bounds.lower;
    let hi = p.bounds.upper;
    out.push(Row { c: Halfspace::new(Vec2::new(one, zero), -lo[0]), tag: Active::Lower(0) });
    out.push(Row { c: Halfspace::new(Vec2::new(-one, zero), hi[0]), tag: Active::Upper(0) });
    out.push(Row { c: Halfspace::new(Vec2::new(zero, one), -lo[1]), tag: Active::Lower(1) });
    out.push(Row { c: Halfspace::new(Vec2::new(zero, -one), hi[1]), tag: Active::Upper(1) });
    out
}

fn tolerance<T: Scalar>(c: &Halfspace<T>, u: Vec2<T>) -> T {
    T::lit(1e-10) * (T::one() + c.a.norm() * u.norm() + c.b.abs())
}

fn clamp_to_box<T: Scalar>(u: Vec2<T>, bounds: &ControlBox<T>) -> Vec2<T> {
    Vec2::new(
        u.x.max(bounds.lower[0]).min(bounds.upper[0]),
        u.y.max(bounds.lower[1]).min(bounds.upper[1]),
    )
}

fn lex_cmp<T: Scalar>(a: &(T, Vec2<T>), b: &(T, Vec2<T>)) -> Ordering {
    a.0.partial_cmp(&b.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.x.partial_cmp(&b.1.x).unwrap_or(Ordering::Equal))
        .then(a.1.y.partial_cmp(&b.1.y).unwrap_or(Ordering::Equal))
}

/// Solves the filter QP. Infeasible problems return the slack-relaxed
/// minimizer with `feasible = false`.
pub fn solve<T: Scalar>(p: &QpProblem<T>) -> QpSolution<T> {
    let rows = rows(p);
    let u0 = p.u_nom;
    let objective = |u: Vec2<T>| (u - u0).norm_squared();

    let mut candidates: Vec<(T, Vec2<T>)> = Vec::with_capacity(1 + rows.len() + rows.len() * rows.len() / 2);
    candidates.push((T::zero(), u0));
    for r in &rows {
        let n2 = r.c.a.norm_squared();
        if n2 > T::zero() {
            let u = u0 - r.c.a * (r.c.eval(u0) / n2);
            candidates.push((objective(u), u));
        }
    }
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let (a, b) = (rows[i].c, rows[j].c);
            let det = a.a.x * b.a.y - a.a.y * b.a.x;
            let scale = a.a.norm() * b.a.norm();
            if det.abs() <= T::lit(1e-12) * scale || scale == T::zero() {
                continue;
            }
            // a.a . u = -a.b, b.a . u = -b.b
            let ux = (-a.b * b.a.y + b.b * a.a.y) / det;
            let uy = (-b.b * a.a.x + a.b * b.a.x) / det;
            let u = Vec2::new(ux, uy);
            if u.is_finite() {
                candidates.push((objective(u), u));
            }
        }
    }
    candidates.sort_by(lex_cmp);

    let feasible_at = |u: Vec2<T>| rows.iter().all(|r| r.c.eval(u) >= -tolerance(&r.c, u));
    if let Some(&(_, u)) = candidates.iter().find(|(_, u)| feasible_at(*u)) {
        let u = clamp_to_box(u, &p.bounds);
        return finish(p, &rows, u, true);
    }
    let u = solve_relaxed(p);
    finish(p, &rows, u, false)
}

fn finish<T: Scalar>(p: &QpProblem<T>, rows: &[Row<T>], u: Vec2<T>, feasible: bool) -> QpSolution<T> {
    let mut active_set: Vec<Active> = rows
        .iter()
        .filter(|r| r.c.eval(u).abs() <= T::lit(1e3) * tolerance(&r.c, u))
        .map(|r| r.tag)
        .collect();
    active_set.sort();
    let violation = if feasible {
        T::zero()
    } else {
        p.constraints
            .iter()
            .map(|c| (-c.eval(u)).max(T::zero()))
            .fold(T::zero(), T::max)
    };
    QpSolution {
        u,
        feasible,
        active_set,
        violation,
    }
}

/// Minimizes `|u - u_nom|^2 + w * sum_i max(0, -(a_i . u + b_i))^2` over the box.
///
/// Generalized Newton on the set of violated constraints, each step an exact
/// 2-D box-constrained quadratic solve; projected gradient as a fallback.
fn solve_relaxed<T: Scalar>(p: &QpProblem<T>) -> Vec2<T> {
    let w = T::lit(SLACK_WEIGHT);
    let u0 = p.u_nom;
    let phi = |u: Vec2<T>| {
        let pen: T = p
            .constraints
            .iter()
            .map(|c| {
                let d = (-c.eval(u)).max(T::zero());
                d * d
            })
            .fold(T::zero(), |a, b| a + b);
        (u - u0).norm_squared() + w * pen
    };
    let violated = |u: Vec2<T>| -> Vec<bool> { p.constraints.iter().map(|c| c.eval(u) < T::zero()).collect() };

    let mut u = clamp_to_box(u0, &p.bounds);
    let mut active = violated(u);
    let mut seen: Vec<Vec<bool>> = vec![active.clone()];
    for _ in 0..64 {
        let next = box_quadratic(p, &active, w);
        let next_active = violated(next);
        let improved = phi(next) <= phi(u);
        if improved {
            u = next;
        }
        if next_active == active || seen.contains(&next_active) || !improved {
            break;
        }
        seen.push(next_active.clone());
        active = next_active;
    }

    // Projected gradient polish; phi is C1 with Lipschitz gradient.
    let lip = T::lit(2.0)
        * (T::one()
            + w * p.constraints.iter().map(|c| c.a.norm_squared()).fold(T::zero(), |a, b| a + b));
    let step = T::one() / lip;
    let grad = |u: Vec2<T>| {
        let mut g = (u - u0) * T::lit(2.0);
        for c in &p.constraints {
            let v = c.eval(u);
            if v < T::zero() {
                g += c.a * (T::lit(2.0) * w * v);
            }
        }
        g
    };
    for _ in 0..10_000 {
        let g = grad(u);
        let next = clamp_to_box(u - g * step, &p.bounds);
        let moved = (next - u).norm();
        u = next;
        if moved <= T::lit(1e-12) {
            break;
        }
    }
    u
}

/// Exact minimizer over the box of `|u - u0|^2 + w * sum_{active} (a . u + b)^2`.
fn box_quadratic<T: Scalar>(p: &QpProblem<T>, active: &[bool], w: T) -> Vec2<T> {
    let two = T::lit(2.0);
    // Objective = u^T H u / 2 + g^T u + const, H = 2 (I + w sum a a^T), g = -2 u0 + 2 w sum b a
    let mut h = [[two, T::zero()], [T::zero(), two]];
    let mut g = p.u_nom * (-two);
    for (c, on) in p.constraints.iter().zip(active) {
        if *on {
            h[0][0] += two * w * c.a.x * c.a.x;
            h[0][1] += two * w * c.a.x * c.a.y;
            h[1][0] += two * w * c.a.x * c.a.y;
            h[1][1] += two * w * c.a.y * c.a.y;
            g += c.a * (two * w * c.b);
        }
    }
    let q = |u: Vec2<T>| {
        let hu = Vec2::new(h[0][0] * u.x + h[0][1] * u.y, h[1][0] * u.x + h[1][1] * u.y);
        hu.dot(u) / two + g.dot(u)
    };
    let lo = p.bounds.lower;
    let hi = p.bounds.upper;
    let inside = |u: Vec2<T>| u.x >= lo[0] && u.x <= hi[0] && u.y >= lo[1] && u.y <= hi[1];

    let mut cands: Vec<Vec2<T>> = Vec::with_capacity(9);
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    if det > T::zero() {
        let ux = (-g.x * h[1][1] + g.y * h[0][1]) / det;
        let uy = (-g.y * h[0][0] + g.x * h[1][0]) / det;
        cands.push(Vec2::new(ux, uy));
    }
    // Edges: fix one coordinate, minimize the 1-D quadratic in the other.
    for fixed in [lo[0], hi[0]] {
        let uy = (-(g.y + h[1][0] * fixed) / h[1][1]).max(lo[1]).min(hi[1]);
        cands.push(Vec2::new(fixed, uy));
    }
    for fixed in [lo[1], hi[1]] {
        let ux = (-(g.x + h[0][1] * fixed) / h[0][0]).max(lo[0]).min(hi[0]);
        cands.push(Vec2::new(ux, fixed));
    }
    cands
        .into_iter()
        .filter(|u| inside(*u))
        .map(|u| (q(u), u))
        .min_by(lex_cmp)
        .map(|(_, u)| u)
        .unwrap_or_else(|| clamp_to_box(p.u_nom, &p.bounds))
}
