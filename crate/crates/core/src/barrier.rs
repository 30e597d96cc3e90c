//! Distance barrier, its second-order (HOCBF) constraint, the discretization
//! margin and the barrier certificates.
//!
//! The position barrier `h = |p_R - p_H|^2 - R^2` has relative degree two with
//! respect to the robot's steering/acceleration inputs, so the enforced
//! condition is the cascaded one
//!
//! ```text
//! psi0 = h
//! psi1 = h' + kappa * h
//! psi1' + hocbf_gain * psi1 >= margin
//! ```
//!
//! whose left-hand side is affine in the robot control: `a . u_R + b`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentModel, ControlBox, ControlInput, HumanState, IntegratorState, JointState, RobotState, UnicycleState};
use crate::error::{Error, Result};
use crate::qp_filter::Halfspace;
use crate::scalar::{Scalar, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierSpec<T> {
    /// Safety radius `R`, meters.
    pub safety_radius: T,
    /// Gain of the linear class-K function on `h`, 1/s.
    pub kappa: T,
    /// Gain of the linear class-K function on `psi1`, 1/s.
    pub hocbf_gain: T,
    /// Humans farther than this are ignored by the filter, meters.
    pub neighborhood_radius: T,
}

impl<T: Scalar> BarrierSpec<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.safety_radius > T::zero()
            && self.kappa > T::zero()
            && self.hocbf_gain > T::zero()
            && self.neighborhood_radius >= self.safety_radius;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "barrier: need safety_radius > 0, kappa > 0, hocbf_gain > 0, \
                 neighborhood_radius >= safety_radius"
                    .into(),
            ))
        }
    }
}

/// Lipschitz constants entering the discretization margin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipschitzBundle<T> {
    /// Bound on the state speed, i.e. Lipschitz constant of `t -> x(t)`.
    pub l_x: T,
    pub l_f: T,
    pub l_g: T,
    /// Lipschitz constant of the barrier the margin protects (`psi1`).
    pub l_h: T,
    /// Lipschitz constant of the class-K function composed with that barrier.
    pub l_kh: T,
    /// Control-norm bound.
    pub b_u: T,
}

impl<T: Scalar> LipschitzBundle<T> {
    pub fn validate(&self, joint_control_norm: T) -> Result<()> {
        let fields = [self.l_x, self.l_f, self.l_g, self.l_h, self.l_kh];
        if fields.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidConfig("lipschitz: constants must be finite and >= 0".into()));
        }
        if !(self.b_u > T::zero()) {
            return Err(Error::InvalidConfig("lipschitz.b_u must be > 0".into()));
        }
        if self.b_u < joint_control_norm * (T::one() - T::lit(1e-9)) {
            return Err(Error::InvalidConfig(format!(
                "lipschitz.b_u = {} is below the largest control norm {}",
                self.b_u, joint_control_norm
            )));
        }
        Ok(())
    }
}

/// Discretization margin `dt * L_x * (L_h L_g B_u + L_h L_f + L_kh)`.
pub fn eta<T: Scalar>(bundle: &LipschitzBundle<T>, dt: T) -> T {
    dt * bundle.l_x * (bundle.l_h * bundle.l_g * bundle.b_u + bundle.l_h * bundle.l_f + bundle.l_kh)
}

pub fn h_value<T: Scalar>(robot: &RobotState<T>, human: &HumanState<T>, spec: &BarrierSpec<T>) -> T {
    h_from_positions(robot.position(), human.position(), spec.safety_radius)
}

#[inline]
fn h_from_positions<T: Scalar>(p_r: Vec2<T>, p_h: Vec2<T>, radius: T) -> T {
    (p_r - p_h).norm_squared() - radius * radius
}

/// Human velocity and acceleration over the hold interval under action `u_h`.
fn human_motion<T: Scalar>(human: &HumanState<T>, u_h: ControlInput<T>) -> (Vec2<T>, Vec2<T>) {
    match human {
        HumanState::Unicycle(s) => {
            let e = Vec2::heading(s.theta);
            (e * s.v, e * u_h.u2 + e.perp() * (s.v * u_h.u1))
        }
        HumanState::SingleIntegrator(_) => (u_h.as_vec(), Vec2::zero()),
    }
}

/// The cascade values at one robot/human pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HocbfTerms<T> {
    pub h: T,
    pub h_dot: T,
    pub psi1: T,
    /// `psi1' + hocbf_gain * psi1 = a . u_R + b`.
    pub a: Vec2<T>,
    pub b: T,
}

pub fn hocbf_terms<T: Scalar>(
    robot: &RobotState<T>,
    human: &HumanState<T>,
    u_h: ControlInput<T>,
    spec: &BarrierSpec<T>,
) -> HocbfTerms<T> {
    let two = T::lit(2.0);
    let d = robot.position() - human.position();
    let e_r = Vec2::heading(robot.theta);
    let (vel_h, acc_h) = human_motion(human, u_h);
    let w = e_r * robot.v - vel_h;
    let h = d.norm_squared() - spec.safety_radius * spec.safety_radius;
    let h_dot = two * d.dot(w);
    let k1 = spec.kappa;
    let k2 = spec.hocbf_gain;
    let a = Vec2::new(two * robot.v * d.dot(e_r.perp()), two * d.dot(e_r));
    let b = two * w.norm_squared() - two * d.dot(acc_h) + (k1 + k2) * h_dot + k1 * k2 * h;
    HocbfTerms {
        h,
        h_dot,
        psi1: h_dot + k1 * h,
        a,
        b,
    }
}

/// `(a, b)` such that the robot control is admissible for human `human_index`
/// iff `a . u_R + b >= 0`, with `margin` already subtracted from `b`.
pub fn constraint_coefficients<T: Scalar>(
    x: &JointState<T>,
    human_index: usize,
    u_h: ControlInput<T>,
    spec: &BarrierSpec<T>,
    margin: T,
) -> Halfspace<T> {
    let t = hocbf_terms(&x.robot, &x.humans[human_index], u_h, spec);
    Halfspace::new(t.a, t.b - margin)
}

/// Barrier certificate: the constraint's left-hand side minus `eta`.
/// Nonnegative iff `u_r` lies in the robust safe set for this human action.
pub fn certificate<T: Scalar>(
    x: &JointState<T>,
    human_index: usize,
    u_r: ControlInput<T>,
    u_h: ControlInput<T>,
    spec: &BarrierSpec<T>,
    eta: T,
) -> T {
    constraint_coefficients(x, human_index, u_h, spec, eta).eval(u_r.as_vec())
}

/// Indices of humans within the (closed) neighborhood radius, nearest first,
/// ties broken by index.
pub fn neighborhood<T: Scalar>(x: &JointState<T>, spec: &BarrierSpec<T>) -> Vec<usize> {
    let p = x.robot.position();
    let mut near: Vec<(T, usize)> = x
        .humans
        .iter()
        .enumerate()
        .map(|(i, h)| ((p - h.position()).norm(), i))
        .filter(|(d, _)| *d <= spec.neighborhood_radius)
        .collect();
    near.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    near.into_iter().map(|(_, i)| i).collect()
}

/// Index of the nearest human (ties by index). `None` when there are no humans.
pub fn nearest_human<T: Scalar>(x: &JointState<T>) -> Option<usize> {
    let p = x.robot.position();
    x.humans
        .iter()
        .enumerate()
        .map(|(i, h)| ((p - h.position()).norm_squared(), i))
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)))
        .map(|(_, i)| i)
}

// ---------------------------------------------------------------------------
// Lipschitz estimation

/// Region of the joint robot/human state space over which Lipschitz constants
/// are estimated. Both agent layouts are 8-dimensional: robot
/// `[px, py, theta, v]` followed by human `[px, py, theta, v]` (unicycle) or
/// `[px, py, vx, vy]` (single integrator).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleBox {
    /// Robot and human positions are drawn from `[-e, e]^2`.
    pub position_half_extent: f64,
    /// Unicycle speeds are drawn from `[speed_min, speed_max]`; integrator
    /// velocity components from `[-speed_max, speed_max]`.
    pub speed_min: f64,
    pub speed_max: f64,
    pub human_model: AgentModel,
    pub robot_control_bounds: ControlBox<f64>,
    pub human_control_bounds: ControlBox<f64>,
}

impl SampleBox {
    fn validate(&self) -> Result<()> {
        if !(self.position_half_extent > 0.0) || !self.position_half_extent.is_finite() {
            return Err(Error::DegenerateBox("position_half_extent must be > 0".into()));
        }
        if !(self.speed_max > self.speed_min) || !self.speed_min.is_finite() || !self.speed_max.is_finite() {
            return Err(Error::DegenerateBox("need speed_min < speed_max".into()));
        }
        if !self.robot_control_bounds.is_valid() || !self.human_control_bounds.is_valid() {
            return Err(Error::DegenerateBox("control bounds must be non-degenerate".into()));
        }
        Ok(())
    }

    /// Lower/upper corners of the 8-dimensional state box.
    pub fn bounds(&self) -> ([f64; 8], [f64; 8]) {
        use std::f64::consts::PI;
        let e = self.position_half_extent;
        let (s0, s1) = (self.speed_min, self.speed_max);
        let human = match self.human_model {
            AgentModel::Unicycle => ([-e, -e, -PI, s0], [e, e, PI, s1]),
            AgentModel::SingleIntegrator => ([-e, -e, -s1, -s1], [e, e, s1, s1]),
        };
        (
            [-e, -e, -PI, s0, human.0[0], human.0[1], human.0[2], human.0[3]],
            [e, e, PI, s1, human.1[0], human.1[1], human.1[2], human.1[3]],
        )
    }

    /// Builds a joint state from an 8-vector in the box layout.
    pub fn joint_state(&self, z: &[f64]) -> JointState<f64> {
        let robot = UnicycleState { px: z[0], py: z[1], theta: z[2], v: z[3] };
        let human = match self.human_model {
            AgentModel::Unicycle => HumanState::Unicycle(UnicycleState { px: z[4], py: z[5], theta: z[6], v: z[7] }),
            AgentModel::SingleIntegrator => {
                HumanState::SingleIntegrator(IntegratorState { px: z[4], py: z[5], vx: z[6], vy: z[7] })
            }
        };
        JointState::new(robot, vec![human])
    }

    /// Joint vector field `f(z) + g(z) u` in the box layout. Integrator humans
    /// move with their cached velocity, which the control overwrites.
    pub fn vector_field(&self, z: &[f64], u_r: ControlInput<f64>, u_h: Option<ControlInput<f64>>) -> [f64; 8] {
        let mut out = [0.0; 8];
        out[0] = z[3] * z[2].cos();
        out[1] = z[3] * z[2].sin();
        out[2] = u_r.u1;
        out[3] = u_r.u2;
        match self.human_model {
            AgentModel::Unicycle => {
                let u = u_h.unwrap_or_default();
                out[4] = z[7] * z[6].cos();
                out[5] = z[7] * z[6].sin();
                out[6] = u.u1;
                out[7] = u.u2;
            }
            AgentModel::SingleIntegrator => {
                let v = u_h.map(|u| (u.u1, u.u2)).unwrap_or((z[6], z[7]));
                out[4] = v.0;
                out[5] = v.1;
            }
        }
        out
    }
}

const INFLATION: f64 = 1.2;

/// Maximum finite-difference Jacobian spectral norm of `f` over points drawn
/// uniformly from `[lo, hi]`, inflated by the 1.2 safety factor.
///
/// Each sample contributes central-difference pairs along every coordinate.
pub fn estimate_lipschitz_of<F>(f: F, lo: &[f64], hi: &[f64], n_samples: usize, seed: u64) -> Result<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if lo.len() != hi.len() || lo.is_empty() {
        return Err(Error::DegenerateBox("bounds must have equal, nonzero length".into()));
    }
    if lo.iter().zip(hi).any(|(a, b)| !(b > a) || !a.is_finite() || !b.is_finite()) {
        return Err(Error::DegenerateBox("every coordinate needs lo < hi".into()));
    }
    if n_samples < 2 {
        return Err(Error::InvalidConfig("estimate_lipschitz needs n_samples >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = lo.len();
    let mut best = 0.0f64;
    let mut z = vec![0.0; dim];
    for _ in 0..n_samples {
        for i in 0..dim {
            z[i] = rng.random_range(lo[i]..hi[i]);
        }
        let jac = fd_jacobian(&f, &z, lo, hi);
        best = best.max(spectral_norm(&jac, dim));
    }
    Ok(best * INFLATION)
}

fn fd_jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: &F, z: &[f64], lo: &[f64], hi: &[f64]) -> Vec<Vec<f64>> {
    let dim = z.len();
    let mut cols = Vec::with_capacity(dim);
    let mut zp = z.to_vec();
    let mut zm = z.to_vec();
    for i in 0..dim {
        let step = 1e-5 * (hi[i] - lo[i]).max(1e-3);
        zp[i] = z[i] + step;
        zm[i] = z[i] - step;
        let fp = f(&zp);
        let fm = f(&zm);
        cols.push(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * step)).collect::<Vec<_>>());
        zp[i] = z[i];
        zm[i] = z[i];
    }
    cols
}

/// Spectral norm of a matrix given as columns, via power iteration on J^T J.
fn spectral_norm(cols: &[Vec<f64>], dim: usize) -> f64 {
    let rows = cols.first().map_or(0, Vec::len);
    if rows == 0 {
        return 0.0;
    }
    let frob: f64 = cols.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    if frob == 0.0 || rows == 1 {
        return frob;
    }
    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut sigma = 0.0;
    for _ in 0..100 {
        let mut jv = vec![0.0; rows];
        for (j, col) in cols.iter().enumerate() {
            for r in 0..rows {
                jv[r] += col[r] * v[j];
            }
        }
        let mut jtjv: Vec<f64> = cols.iter().map(|col| col.iter().zip(&jv).map(|(a, b)| a * b).sum()).collect();
        let n = jtjv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            break;
        }
        jtjv.iter_mut().for_each(|x| *x /= n);
        v = jtjv;
        sigma = jv.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    // One more product for the converged direction.
    let mut jv = vec![0.0; rows];
    for (j, col) in cols.iter().enumerate() {
        for r in 0..rows {
            jv[r] += col[r] * v[j];
        }
    }
    sigma.max(jv.iter().map(|x| x * x).sum::<f64>().sqrt())
}

/// Estimates the bundle for the joint system on `sample_box`.
///
/// `l_f` comes from the drift, `l_g` from the input matrix columns, `l_h` from
/// `psi1` (with the human's held action set to the box's maximal-norm corner
/// for integrators, whose velocity is that action), `l_kh` from
/// `hocbf_gain * psi1`, and `l_x` from the largest sampled state speed.
pub fn estimate_lipschitz(
    sample_box: &SampleBox,
    spec: &BarrierSpec<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<LipschitzBundle<f64>> {
    sample_box.validate()?;
    if n_samples < 2 {
        return Err(Error::InvalidConfig("estimate_lipschitz needs n_samples >= 2".into()));
    }
    let (lo, hi) = sample_box.bounds();
    let zero = ControlInput::zero();

    let drift = |z: &[f64]| sample_box.vector_field(z, zero, Some(zero)).to_vec();
    let drift_integrator = |z: &[f64]| sample_box.vector_field(z, zero, None).to_vec();
    let l_f = match sample_box.human_model {
        AgentModel::Unicycle => estimate_lipschitz_of(drift, &lo, &hi, n_samples, seed)?,
        AgentModel::SingleIntegrator => estimate_lipschitz_of(drift_integrator, &lo, &hi, n_samples, seed)?,
    };

    // g(z) u - g(z) 0 for unit robot/human controls: columns of the input matrix.
    let input_columns = |z: &[f64]| {
        let mut out = Vec::with_capacity(32);
        for (ur, uh) in [
            (ControlInput::new(1.0, 0.0), ControlInput::zero()),
            (ControlInput::new(0.0, 1.0), ControlInput::zero()),
            (ControlInput::zero(), ControlInput::new(1.0, 0.0)),
            (ControlInput::zero(), ControlInput::new(0.0, 1.0)),
        ] {
            let a = sample_box.vector_field(z, ur, Some(uh));
            let b = sample_box.vector_field(z, zero, Some(zero));
            out.extend(a.iter().zip(&b).map(|(x, y)| x - y));
        }
        out
    };
    let l_g = estimate_lipschitz_of(input_columns, &lo, &hi, n_samples, seed.wrapping_add(1))?;

    let psi1 = |z: &[f64]| {
        let x = sample_box.joint_state(z);
        let u_h = match sample_box.human_model {
            AgentModel::Unicycle => zero,
            AgentModel::SingleIntegrator => ControlInput::new(z[6], z[7]),
        };
        vec![hocbf_terms(&x.robot, &x.humans[0], u_h, spec).psi1]
    };
    let l_h = estimate_lipschitz_of(psi1, &lo, &hi, n_samples, seed.wrapping_add(2))?;
    let k_psi1 = |z: &[f64]| psi1(z).into_iter().map(|v| spec.hocbf_gain * v).collect();
    let l_kh = estimate_lipschitz_of(k_psi1, &lo, &hi, n_samples, seed.wrapping_add(2))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    let mut speed = 0.0f64;
    let mut z = [0.0; 8];
    for _ in 0..n_samples {
        for i in 0..8 {
            z[i] = rng.random_range(lo[i]..hi[i]);
        }
        for ur in sample_box.robot_control_bounds.corners() {
            for uh in sample_box.human_control_bounds.corners() {
                let v = sample_box.vector_field(&z, ur, Some(uh));
                speed = speed.max(v.iter().map(|c| c * c).sum::<f64>().sqrt());
            }
        }
    }
    let b_u = sample_box
        .robot_control_bounds
        .max_norm()
        .hypot(sample_box.human_control_bounds.max_norm());
    Ok(LipschitzBundle {
        l_x: speed * INFLATION,
        l_f,
        l_g,
        l_h,
        l_kh,
        b_u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DynamicsConfig;

    fn spec() -> BarrierSpec<f64> {
        BarrierSpec {
            safety_radius: 1.0,
            kappa: 1.0,
            hocbf_gain: 1.0,
            neighborhood_radius: 3.0,
        }
    }

    fn joint(robot: RobotState<f64>, humans: Vec<HumanState<f64>>) -> JointState<f64> {
        JointState::new(robot, humans)
    }

    #[test]
    fn h_examples() {
        let s = spec();
        let r = RobotState::new(0.0, 0.0, 0.0, 0.0);
        assert_eq!(h_value(&r, &HumanState::integrator(2.0, 0.0), &s), 3.0);
        assert_eq!(h_value(&r, &HumanState::integrator(1.0, 0.0), &s), 0.0);
        let r = RobotState::new(1.0, 2.0, 0.0, 0.0);
        assert_eq!(h_value(&r, &HumanState::integrator(4.0, 6.0), &s), 24.0);
    }

    #[test]
    fn eta_examples() {
        let b = LipschitzBundle {
            l_x: 1.0,
            l_f: 1.0,
            l_g: 1.0,
            l_h: 2.0,
            l_kh: 1.0,
            b_u: 1.0,
        };
        assert_eq!(eta(&b, 0.0), 0.0);
        // 0.1 * 1 * (2*1*1 + 2*1 + 1)
        assert!((eta::<f64>(&b, 0.1) - 0.5).abs() < 1e-12);
        assert!((eta::<f64>(&b, 0.2) - 2.0 * eta(&b, 0.1)).abs() < 1e-15);
    }

    #[test]
    fn receding_agents_admit_zero_control() {
        let x = joint(
            RobotState::new(0.0, 0.0, std::f64::consts::PI, 1.0),
            vec![HumanState::Unicycle(UnicycleState::new(6.0, 0.0, 0.0, 1.0))],
        );
        let c = constraint_coefficients(&x, 0, ControlInput::zero(), &spec(), 0.0);
        assert!(c.b > 0.0);
        assert!(c.eval(Vec2::zero()) >= 0.0);
    }

    #[test]
    fn head_on_has_no_steering_sensitivity() {
        // Zero robot speed: steering cannot change psi1'.
        let x = joint(
            RobotState::new(0.0, 0.0, 0.0, 0.0),
            vec![HumanState::Unicycle(UnicycleState::new(4.0, 0.0, std::f64::consts::PI, 1.0))],
        );
        let c = constraint_coefficients(&x, 0, ControlInput::zero(), &spec(), 0.0);
        assert_eq!(c.a.x, 0.0);
        assert!(c.a.y < 0.0, "accelerating toward the human must tighten the constraint");
    }

    #[test]
    fn certificate_is_zero_on_boundary() {
        let x = joint(
            RobotState::new(0.3, -0.2, 0.4, 0.9),
            vec![HumanState::Unicycle(UnicycleState::new(2.5, 0.7, 2.8, 1.1))],
        );
        let u_h = ControlInput::new(0.1, -0.3);
        let eta = 0.37;
        let c = constraint_coefficients(&x, 0, u_h, &spec(), eta);
        // Pick u with a . u + b = 0.
        let t = -c.b / c.a.norm_squared();
        let u = ControlInput::from_vec(c.a * t);
        assert!(certificate(&x, 0, u, u_h, &spec(), eta).abs() < 1e-9);
    }

    #[test]
    fn neighborhood_ordering_and_closed_ball() {
        let x = joint(
            RobotState::new(0.0, 0.0, 0.0, 0.0),
            vec![
                HumanState::integrator(0.0, 2.0),
                HumanState::integrator(3.0, 0.0),
                HumanState::integrator(1.0, 0.0),
                HumanState::integrator(5.0, 0.0),
            ],
        );
        assert_eq!(neighborhood(&x, &spec()), vec![2, 0, 1]);
        let far = joint(RobotState::default(), vec![HumanState::integrator(3.5, 0.0)]);
        assert!(neighborhood(&far, &spec()).is_empty());
    }

    #[test]
    fn lipschitz_of_constant_and_linear() {
        let c = estimate_lipschitz_of(|_| vec![4.2], &[-1.0, -1.0], &[1.0, 1.0], 50, 1).unwrap();
        assert_eq!(c, 0.0);
        let l = estimate_lipschitz_of(|z| vec![3.0 * z[0]], &[-2.0], &[2.0], 50, 1).unwrap();
        assert!((3.0..=3.6 + 1e-9).contains(&l), "{l}");
        assert!(estimate_lipschitz_of(|z| vec![z[0]], &[1.0], &[1.0], 50, 1).is_err());
    }

    #[test]
    fn bundle_estimate_is_deterministic_and_consistent() {
        let sb = SampleBox {
            position_half_extent: 2.0,
            speed_min: 0.0,
            speed_max: 1.5,
            human_model: AgentModel::Unicycle,
            robot_control_bounds: ControlBox::symmetric(0.3, 1.0),
            human_control_bounds: ControlBox::symmetric(0.3, 1.0),
        };
        let a = estimate_lipschitz(&sb, &spec(), 200, 7).unwrap();
        let b = estimate_lipschitz(&sb, &spec(), 200, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.l_g.abs() < 1e-9, "input matrix is constant");
        assert!((a.l_kh - spec().hocbf_gain * a.l_h).abs() < 1e-9);
        let dyn_cfg = DynamicsConfig {
            dt: 0.1,
            horizon_steps: 10,
            robot_control_bounds: sb.robot_control_bounds,
            human_control_bounds: sb.human_control_bounds,
        };
        let joint_norm = dyn_cfg.robot_control_bounds.max_norm().hypot(dyn_cfg.human_control_bounds.max_norm());
        a.validate(joint_norm).unwrap();
    }
}
