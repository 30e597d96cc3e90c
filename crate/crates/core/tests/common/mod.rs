#![allow(dead_code)]

use crcsf::barrier::BarrierSpec;
use crcsf::dynamics::{ControlBox, DynamicsConfig};
use crcsf::human_policy::{HeadOnLayout, HumanPolicyConfig};
use crcsf::simulator::{RobotNominalConfig, ScenarioSpec, SimConfig};

pub fn human(sigma: f64) -> HumanPolicyConfig {
    HumanPolicyConfig {
        noise_sigma: sigma,
        noise_clip: 0.5,
        gain: 1.0,
        preferred_speed: 1.0,
        heading_gain: 1.0,
        speed_gain: 1.0,
        repulsion_gain: 0.0,
        repulsion_radius: 0.0,
        predictor_sigma_scale: 1.0,
    }
}

pub fn sim(sigma: f64, horizon: usize) -> SimConfig {
    let b = ControlBox::symmetric(0.3, 1.0);
    SimConfig {
        dynamics: DynamicsConfig { dt: 0.1, horizon_steps: horizon, robot_control_bounds: b, human_control_bounds: b },
        spec: BarrierSpec { safety_radius: 1.0, kappa: 1.5, hocbf_gain: 3.0, neighborhood_radius: 20.0 },
        eta: 5.0,
        epsilon: 0.01 / 0.99,
        robot: RobotNominalConfig { preferred_speed: 1.25, ..Default::default() },
        human: human(sigma),
        sample_count: 10,
        prediction_horizon: 1,
        substeps: 10,
    }
}

pub fn head_on() -> ScenarioSpec {
    ScenarioSpec::HeadOn(HeadOnLayout {
        corridor_length: 6.0,
        goal_lateral_offset: 2.0,
        human_goal_overshoot: -4.0,
        ..Default::default()
    })
}
