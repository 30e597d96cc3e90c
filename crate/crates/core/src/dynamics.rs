//! Joint robot/human dynamics under a zero-order hold.
//!
//! The robot (and, in the single-agent scenario, the human) follows the
//! dynamically-extended unicycle
//!
//! ```text
//! px' = v cos(theta),  py' = v sin(theta),  theta' = u1,  v' = u2
//! ```
//!
//! integrated with one RK4 step per hold interval. Crowd humans are single
//! integrators whose velocity is the held control, so their update is exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{wrap_angle, Scalar, Vec2};

/// Two-component control. For unicycles `u1` is the steering rate and `u2`
/// the acceleration; for single integrators they are the x and y velocities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput<T> {
    pub u1: T,
    pub u2: T,
}

impl<T: Scalar> ControlInput<T> {
    pub fn new(u1: T, u2: T) -> Self {
        Self { u1, u2 }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn as_vec(self) -> Vec2<T> {
        Vec2::new(self.u1, self.u2)
    }

    pub fn from_vec(v: Vec2<T>) -> Self {
        Self::new(v.x, v.y)
    }

    pub fn norm(self) -> T {
        self.as_vec().norm()
    }
}

/// Axis-aligned control box `[lower, upper]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBox<T> {
    pub lower: [T; 2],
    pub upper: [T; 2],
}

impl<T: Scalar> ControlBox<T> {
    pub fn new(lower: [T; 2], upper: [T; 2]) -> Self {
        Self { lower, upper }
    }

    /// Box symmetric about the origin with half-widths `(a, b)`.
    pub fn symmetric(a: T, b: T) -> Self {
        Self::new([-a, -b], [a, b])
    }

    pub fn is_valid(&self) -> bool {
        (0..2).all(|i| {
            self.lower[i].is_finite() && self.upper[i].is_finite() && self.lower[i] < self.upper[i]
        })
    }

    pub fn contains(&self, u: ControlInput<T>, tol: T) -> bool {
        let c = [u.u1, u.u2];
        (0..2).all(|i| c[i] >= self.lower[i] - tol && c[i] <= self.upper[i] + tol)
    }

    pub fn clamp(&self, u: ControlInput<T>) -> ControlInput<T> {
        ControlInput::new(
            u.u1.max(self.lower[0]).min(self.upper[0]),
            u.u2.max(self.lower[1]).min(self.upper[1]),
        )
    }

    /// Largest Euclidean norm of any control in the box.
    pub fn max_norm(&self) -> T {
        let a = self.lower[0].abs().max(self.upper[0].abs());
        let b = self.lower[1].abs().max(self.upper[1].abs());
        a.hypot(b)
    }

    pub fn corners(&self) -> [ControlInput<T>; 4] {
        [
            ControlInput::new(self.lower[0], self.lower[1]),
            ControlInput::new(self.upper[0], self.lower[1]),
            ControlInput::new(self.lower[0], self.upper[1]),
            ControlInput::new(self.upper[0], self.upper[1]),
        ]
    }
}

/// Extended-unicycle state `[px, py, theta, v]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UnicycleState<T> {
    pub px: T,
    pub py: T,
    pub theta: T,
    pub v: T,
}

pub type RobotState<T> = UnicycleState<T>;

impl<T: Scalar> UnicycleState<T> {
    pub fn new(px: T, py: T, theta: T, v: T) -> Self {
        Self {
            px,
            py,
            theta: wrap_angle(theta),
            v,
        }
    }

    pub fn position(&self) -> Vec2<T> {
        Vec2::new(self.px, self.py)
    }

    pub fn velocity(&self) -> Vec2<T> {
        Vec2::heading(self.theta) * self.v
    }

    fn to_array(self) -> [T; 4] {
        [self.px, self.py, self.theta, self.v]
    }

    fn from_array(a: [T; 4]) -> Self {
        Self {
            px: a[0],
            py: a[1],
            theta: a[2],
            v: a[3],
        }
    }
}

/// Single-integrator state. `vx, vy` cache the most recently applied control.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegratorState<T> {
    pub px: T,
    pub py: T,
    pub vx: T,
    pub vy: T,
}

/// Which model a human agent follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentModel {
    Unicycle,
    SingleIntegrator,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum HumanState<T> {
    Unicycle(UnicycleState<T>),
    SingleIntegrator(IntegratorState<T>),
}

impl<T: Scalar> HumanState<T> {
    pub fn integrator(px: T, py: T) -> Self {
        Self::SingleIntegrator(IntegratorState {
            px,
            py,
            vx: T::zero(),
            vy: T::zero(),
        })
    }

    pub fn model(&self) -> AgentModel {
        match self {
            Self::Unicycle(_) => AgentModel::Unicycle,
            Self::SingleIntegrator(_) => AgentModel::SingleIntegrator,
        }
    }

    pub fn position(&self) -> Vec2<T> {
        match self {
            Self::Unicycle(s) => s.position(),
            Self::SingleIntegrator(s) => Vec2::new(s.px, s.py),
        }
    }

    /// Current planar velocity (cached control for integrators).
    pub fn velocity(&self) -> Vec2<T> {
        match self {
            Self::Unicycle(s) => s.velocity(),
            Self::SingleIntegrator(s) => Vec2::new(s.vx, s.vy),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position().is_finite() && self.velocity().is_finite()
    }

    /// Advance by `dt` under a held control.
    pub fn step(&self, u: ControlInput<T>, dt: T) -> Self {
        match self {
            Self::Unicycle(s) => Self::Unicycle(rk4_unicycle(*s, u, dt)),
            Self::SingleIntegrator(s) => Self::SingleIntegrator(IntegratorState {
                px: s.px + u.u1 * dt,
                py: s.py + u.u2 * dt,
                vx: u.u1,
                vy: u.u2,
            }),
        }
    }
}

/// Robot plus all humans at one sampled instant `t = k * dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointState<T> {
    pub robot: RobotState<T>,
    pub humans: Vec<HumanState<T>>,
    pub k: usize,
    pub t: T,
}

impl<T: Scalar> JointState<T> {
    pub fn new(robot: RobotState<T>, humans: Vec<HumanState<T>>) -> Self {
        Self {
            robot,
            humans,
            k: 0,
            t: T::zero(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig<T> {
    pub dt: T,
    pub horizon_steps: usize,
    pub robot_control_bounds: ControlBox<T>,
    pub human_control_bounds: ControlBox<T>,
}

impl<T: Scalar> DynamicsConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig("dynamics.dt must be > 0".into()));
        }
        if self.horizon_steps == 0 {
            return Err(Error::InvalidConfig("dynamics.horizon_steps must be >= 1".into()));
        }
        if !self.robot_control_bounds.is_valid() {
            return Err(Error::InvalidConfig(
                "dynamics.robot_control_bounds must be a non-degenerate box".into(),
            ));
        }
        if !self.human_control_bounds.is_valid() {
            return Err(Error::InvalidConfig(
                "dynamics.human_control_bounds must be a non-degenerate box".into(),
            ));
        }
        Ok(())
    }
}

/// Time derivative of the extended unicycle. Control-affine in `u`.
pub fn robot_derivative<T: Scalar>(s: &RobotState<T>, u: ControlInput<T>) -> [T; 4] {
    [s.v * s.theta.cos(), s.v * s.theta.sin(), u.u1, u.u2]
}

fn rk4_unicycle<T: Scalar>(s: UnicycleState<T>, u: ControlInput<T>, dt: T) -> UnicycleState<T> {
    let two = T::lit(2.0);
    let half = dt / two;
    let x0 = s.to_array();
    let at = |x: [T; 4], k: [T; 4], h: T| -> UnicycleState<T> {
        UnicycleState::from_array([x[0] + h * k[0], x[1] + h * k[1], x[2] + h * k[2], x[3] + h * k[3]])
    };
    let k1 = robot_derivative(&s, u);
    let k2 = robot_derivative(&at(x0, k1, half), u);
    let k3 = robot_derivative(&at(x0, k2, half), u);
    let k4 = robot_derivative(&at(x0, k3, dt), u);
    let mut out = [T::zero(); 4];
    for i in 0..4 {
        out[i] = x0[i] + dt / T::lit(6.0) * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
    }
    let mut next = UnicycleState::from_array(out);
    next.theta = wrap_angle(next.theta);
    next
}

/// Advance the robot alone by `dt` under a held control.
pub fn step_robot<T: Scalar>(s: &RobotState<T>, u: ControlInput<T>, dt: T) -> RobotState<T> {
    rk4_unicycle(*s, u, dt)
}

fn check_lengths<T>(x: &JointState<T>, u_h: &[ControlInput<T>]) -> Result<()> {
    if u_h.len() != x.humans.len() {
        return Err(Error::DimensionMismatch {
            what: "human controls",
            expected: x.humans.len(),
            got: u_h.len(),
        });
    }
    Ok(())
}

fn advance<T: Scalar>(
    x: &JointState<T>,
    u_r: ControlInput<T>,
    u_h: &[ControlInput<T>],
    h: T,
) -> JointState<T> {
    JointState {
        robot: rk4_unicycle(x.robot, u_r, h),
        humans: x.humans.iter().zip(u_h).map(|(s, u)| s.step(*u, h)).collect(),
        k: x.k,
        t: x.t + h,
    }
}

/// One zero-order-hold interval of the joint system.
pub fn step_joint<T: Scalar>(
    x: &JointState<T>,
    u_r: ControlInput<T>,
    u_h: &[ControlInput<T>],
    cfg: &DynamicsConfig<T>,
) -> Result<JointState<T>> {
    check_lengths(x, u_h)?;
    let mut next = advance(x, u_r, u_h, cfg.dt);
    next.k = x.k + 1;
    next.t = T::lit((x.k + 1) as f64) * cfg.dt;
    Ok(next)
}

/// States at `t_k + i * dt / m` for `i = 0..=m` under the same held controls.
pub fn substep_trajectory<T: Scalar>(
    x: &JointState<T>,
    u_r: ControlInput<T>,
    u_h: &[ControlInput<T>],
    cfg: &DynamicsConfig<T>,
    m: usize,
) -> Result<Vec<JointState<T>>> {
    check_lengths(x, u_h)?;
    let m = m.max(1);
    let h = cfg.dt / T::lit(m as f64);
    let mut out = Vec::with_capacity(m + 1);
    out.push(x.clone());
    for i in 1..=m {
        let mut next = advance(&out[i - 1], u_r, u_h, h);
        next.t = x.t + T::lit(i as f64) * h;
        if i == m {
            next.k = x.k + 1;
            next.t = T::lit((x.k + 1) as f64) * cfg.dt;
        }
        out.push(next);
    }
    Ok(out)
}
