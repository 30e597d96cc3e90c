//! Conformal risk control safety filters for human-robot navigation.
//!
//! The numerical core (dynamics, barrier, QP filter, CRC) is generic over
//! [`scalar::Scalar`]; the aliases below fix it to `f64`.

pub mod barrier;
pub mod calibration;
pub mod crc;
pub mod dynamics;
pub mod error;
pub mod human_policy;
pub mod margin_model;
pub mod qp_filter;
pub mod scalar;
pub mod simulator;

pub use error::{Error, Result};

pub type Vec2 = scalar::Vec2<f64>;
pub type ControlInput = dynamics::ControlInput<f64>;
pub type ControlBox = dynamics::ControlBox<f64>;
pub type RobotState = dynamics::RobotState<f64>;
pub type HumanState = dynamics::HumanState<f64>;
pub type JointState = dynamics::JointState<f64>;
pub type DynamicsConfig = dynamics::DynamicsConfig<f64>;
pub type BarrierSpec = barrier::BarrierSpec<f64>;
pub type LipschitzBundle = barrier::LipschitzBundle<f64>;
pub type Halfspace = qp_filter::Halfspace<f64>;
pub type QpProblem = qp_filter::QpProblem<f64>;
pub type QpSolution = qp_filter::QpSolution<f64>;
pub type CrcConfig = crc::CrcConfig<f64>;
pub type CalibrationSample = crc::CalibrationSample<f64>;

/// Single-precision aliases for the generic core.
pub mod f32 {
    pub type Vec2 = crate::scalar::Vec2<f32>;
    pub type ControlInput = crate::dynamics::ControlInput<f32>;
    pub type ControlBox = crate::dynamics::ControlBox<f32>;
    pub type RobotState = crate::dynamics::RobotState<f32>;
    pub type HumanState = crate::dynamics::HumanState<f32>;
    pub type JointState = crate::dynamics::JointState<f32>;
    pub type BarrierSpec = crate::barrier::BarrierSpec<f32>;
    pub type QpProblem = crate::qp_filter::QpProblem<f32>;
    pub type CrcConfig = crate::crc::CrcConfig<f32>;
}
