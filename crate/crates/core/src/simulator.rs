//! Closed-loop episodes under the filter variants, and evaluation metrics.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::{certificate, h_value, nearest_human, BarrierSpec};
use crate::calibration::FeatureVector;
use crate::dynamics::{substep_trajectory, ControlBox, ControlInput, DynamicsConfig, JointState, RobotState};
use crate::error::{Error, Result};
use crate::human_policy::{
    crowd_preset, crowd_scenario, derive_seed, head_on_scenario, rng_for, CrowdLayout, HeadOnLayout, HumanPolicy,
    HumanPolicyConfig, Scenario, CROWD_PRESETS,
};
use crate::margin_model::MarginModel;
use crate::qp_filter::{apply_filter, FilterParams, FilterVariant};
use crate::scalar::{wrap_angle, Vec2};

const STREAM_REALIZED: u64 = 1;
const STREAM_PREDICTED: u64 = 2;

/// Proportional goal-reaching law for the robot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotNominalConfig {
    pub heading_gain: f64,
    pub speed_gain: f64,
    /// Desired speed is `min(distance_gain * distance, preferred_speed)`.
    pub distance_gain: f64,
    pub preferred_speed: f64,
    pub goal_radius: f64,
}

impl Default for RobotNominalConfig {
    fn default() -> Self {
        Self {
            heading_gain: 1.0,
            speed_gain: 1.0,
            distance_gain: 1.0,
            preferred_speed: 1.5,
            goal_radius: 0.5,
        }
    }
}

pub fn nominal_control(
    robot: &RobotState<f64>,
    goal: Vec2<f64>,
    cfg: &RobotNominalConfig,
    bounds: &ControlBox<f64>,
) -> ControlInput<f64> {
    let to_goal = goal - robot.position();
    let dist = to_goal.norm();
    let err = if dist > 1e-9 { wrap_angle(to_goal.y.atan2(to_goal.x) - robot.theta) } else { 0.0 };
    let v_des = (cfg.distance_gain * dist).min(cfg.preferred_speed) * err.cos().max(0.0);
    bounds.clamp(ControlInput::new(cfg.heading_gain * err, cfg.speed_gain * (v_des - robot.v)))
}

/// Episode layout family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "layout", rename_all = "snake_case")]
pub enum ScenarioSpec {
    HeadOn(HeadOnLayout),
    /// One named crowd preset.
    CrowdPreset { name: String, crowd: CrowdLayout },
    /// All presets, cycled by episode index.
    CrowdPresets(CrowdLayout),
    /// Fresh random crowd per episode.
    RandomCrowd(CrowdLayout),
}

impl ScenarioSpec {
    pub fn name(&self) -> String {
        match self {
            Self::HeadOn(_) => "head_on".into(),
            Self::CrowdPreset { name, .. } => name.clone(),
            Self::CrowdPresets(_) => "crowd_presets".into(),
            Self::RandomCrowd(_) => "random_crowd".into(),
        }
    }

    /// Parses a CLI scenario name; crowd names take their layout from `crowd`.
    pub fn from_name(name: &str, head_on: &HeadOnLayout, crowd: &CrowdLayout) -> Result<Self> {
        match name {
            "head_on" => Ok(Self::HeadOn(head_on.clone())),
            "crowd_presets" | "crowd" => Ok(Self::CrowdPresets(crowd.clone())),
            "random_crowd" => Ok(Self::RandomCrowd(crowd.clone())),
            n if CROWD_PRESETS.iter().any(|p| p.0 == n) => Ok(Self::CrowdPreset { name: n.into(), crowd: crowd.clone() }),
            n => Err(Error::UnknownScenario(n.into())),
        }
    }

    pub fn instantiate(&self, episode_index: usize, seed: u64, safety_radius: f64) -> Result<Scenario> {
        match self {
            Self::HeadOn(l) => Ok(head_on_scenario(seed, l)),
            Self::CrowdPreset { name, crowd } => crowd_preset(name, crowd, safety_radius),
            Self::CrowdPresets(c) => crowd_preset(CROWD_PRESETS[episode_index % CROWD_PRESETS.len()].0, c, safety_radius),
            Self::RandomCrowd(c) => crowd_scenario(c.n_humans, seed, c, safety_radius),
        }
    }
}

/// Robot policy under evaluation.
#[derive(Clone, Debug)]
pub enum PolicyVariant {
    CbfQp,
    RcbfQp,
    FixedCrcSf(f64),
    OnlineCrcSf(Arc<MarginModel>),
}

impl PolicyVariant {
    pub fn name(&self) -> &'static str {
        match self {
            Self::CbfQp => "cbf_qp",
            Self::RcbfQp => "rcbf_qp",
            Self::FixedCrcSf(_) => "fixed_crc_sf",
            Self::OnlineCrcSf(_) => "online_crc_sf",
        }
    }

    pub fn filter_variant(&self) -> FilterVariant {
        match self {
            Self::CbfQp => FilterVariant::CbfQp,
            Self::RcbfQp => FilterVariant::RcbfQp,
            Self::FixedCrcSf(_) | Self::OnlineCrcSf(_) => FilterVariant::CrcSf,
        }
    }

    fn lambda(&self, phi: Option<&FeatureVector>) -> f64 {
        match self {
            Self::CbfQp | Self::RcbfQp => 0.0,
            Self::FixedCrcSf(l) => *l,
            Self::OnlineCrcSf(m) => phi.map_or(0.0, |p| m.predict(p)),
        }
    }
}

/// Everything an episode needs besides the scenario and the variant.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub dynamics: DynamicsConfig<f64>,
    pub spec: BarrierSpec<f64>,
    pub eta: f64,
    pub epsilon: f64,
    pub robot: RobotNominalConfig,
    pub human: HumanPolicyConfig,
    pub sample_count: usize,
    pub prediction_horizon: usize,
    pub substeps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub state: JointState<f64>,
    pub u_nom: ControlInput<f64>,
    pub control: ControlInput<f64>,
    pub human_actions: Vec<ControlInput<f64>>,
    pub lambda: f64,
    pub margin: f64,
    /// Whether the filter had any constraint this step.
    pub filtered: bool,
    pub feasible: bool,
    pub neighbors: Vec<usize>,
    /// Minimum realized certificate over the neighborhood.
    pub min_certificate: Option<f64>,
    /// Minimum `h` over all humans and `substeps + 1` instants of the interval.
    pub min_h_substep: f64,
    pub min_distance_substep: f64,
    /// Minimum `h` at `t_{k+1}` over this step's neighborhood.
    pub next_h_neighbors: Option<f64>,
    pub nearest: Option<usize>,
    /// Realized and predicted certificates of the nearest human under the applied control.
    pub b_true: Option<f64>,
    pub b_pred: Option<f64>,
    pub features: Option<FeatureVector>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub scenario: String,
    pub variant: String,
    pub seed: u64,
    pub episode_index: usize,
    pub robot_goal: Vec2<f64>,
    pub steps: Vec<StepRecord>,
    pub final_state: JointState<f64>,
}

/// One closed-loop episode. Deterministic given its arguments.
pub fn run_episode(
    scenario: &Scenario,
    variant: &PolicyVariant,
    cfg: &SimConfig,
    seed: u64,
    episode_index: usize,
) -> Result<EpisodeRecord> {
    let dyn_cfg = &cfg.dynamics;
    let policy = HumanPolicy::new(cfg.human.clone(), scenario.human_goals.clone(), dyn_cfg.human_control_bounds);
    let mut rng_real = rng_for(seed, STREAM_REALIZED);
    let mut rng_pred = rng_for(seed, STREAM_PREDICTED);
    let params = FilterParams {
        spec: &cfg.spec,
        eta: cfg.eta,
        bounds: &dyn_cfg.robot_control_bounds,
    };
    let r = cfg.spec.safety_radius;
    let mut x = scenario.initial.clone();
    let mut steps = Vec::with_capacity(dyn_cfg.horizon_steps);
    for k in 0..dyn_cfg.horizon_steps {
        let u_nom = nominal_control(&x.robot, scenario.robot_goal, &cfg.robot, &dyn_cfg.robot_control_bounds);
        let pred = policy.sample_predicted(&x.humans, cfg.prediction_horizon, cfg.sample_count, dyn_cfg.dt, &mut rng_pred);
        let samples = pred.first_actions();
        let nearest = nearest_human(&x);
        let features = nearest.map(|j| {
            let b_hat = certificate(&x, j, u_nom, samples[0][j], &cfg.spec, cfg.eta);
            FeatureVector::from_state(&x, j, b_hat, k)
        });
        let lambda = variant.lambda(features.as_ref());
        let out = apply_filter(&x, u_nom, &samples, variant.filter_variant(), lambda, cfg.epsilon, &params)?;
        let u_r = out.control;
        let u_h = policy.realized_actions(&x.humans, &mut rng_real);

        let min_certificate = out
            .neighbors
            .iter()
            .map(|&i| certificate(&x, i, u_r, u_h[i], &cfg.spec, cfg.eta))
            .reduce(f64::min);
        let (b_true, b_pred) = match nearest {
            Some(j) => (
                Some(certificate(&x, j, u_r, u_h[j], &cfg.spec, cfg.eta)),
                Some(certificate(&x, j, u_r, samples[0][j], &cfg.spec, cfg.eta)),
            ),
            None => (None, None),
        };
        let traj = substep_trajectory(&x, u_r, &u_h, dyn_cfg, cfg.substeps)?;
        let mut min_h = f64::INFINITY;
        let mut min_d = f64::INFINITY;
        for s in &traj {
            for hmn in &s.humans {
                min_h = min_h.min(h_value(&s.robot, hmn, &cfg.spec));
                min_d = min_d.min((s.robot.position() - hmn.position()).norm());
            }
        }
        let next = traj.last().expect("substep trajectory is non-empty").clone();
        let next_h_neighbors = out
            .neighbors
            .iter()
            .map(|&i| h_value(&next.robot, &next.humans[i], &cfg.spec))
            .reduce(f64::min);
        debug_assert!(min_d.is_infinite() || (min_d * min_d - r * r - min_h).abs() < 1e-6 * (1.0 + min_d * min_d));
        steps.push(StepRecord {
            k,
            state: x.clone(),
            u_nom,
            control: u_r,
            human_actions: u_h,
            lambda,
            margin: out.margin,
            filtered: out.solution.is_some(),
            feasible: out.feasible(),
            neighbors: out.neighbors.clone(),
            min_certificate,
            min_h_substep: min_h,
            min_distance_substep: min_d,
            next_h_neighbors,
            nearest,
            b_true,
            b_pred,
            features,
        });
        x = next;
    }
    Ok(EpisodeRecord {
        scenario: scenario.name.clone(),
        variant: variant.name().into(),
        seed,
        episode_index,
        robot_goal: scenario.robot_goal,
        steps,
        final_state: x,
    })
}

/// Per-episode flags and metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode_index: usize,
    pub seed: u64,
    pub scenario: String,
    pub variant: String,
    pub collision: bool,
    pub safety_violation: bool,
    pub goal_reached: bool,
    pub control_effort: f64,
    pub control_smoothness: f64,
    pub min_distance: f64,
    pub infeasible_steps: usize,
    /// Feasible filtered steps, and those followed by `h(x_{k+1}) < 0`.
    pub feasible_filter_steps: usize,
    pub unsafe_after_feasible: usize,
}

pub fn outcome(rec: &EpisodeRecord, safety_radius: f64, goal_radius: f64) -> EpisodeOutcome {
    let first_collision = rec.steps.iter().position(|s| s.min_distance_substep < safety_radius);
    let violation = rec
        .steps
        .iter()
        .any(|s| s.min_certificate.is_some_and(|c| c < 0.0) && s.min_distance_substep >= safety_radius);
    let positions = rec
        .steps
        .iter()
        .map(|s| s.state.robot.position())
        .chain(std::iter::once(rec.final_state.robot.position()));
    let last_ok = first_collision.unwrap_or(usize::MAX);
    let goal_reached = positions
        .enumerate()
        .any(|(i, p)| i <= last_ok && (p - rec.robot_goal).norm() <= goal_radius);
    let n = rec.steps.len().max(1) as f64;
    let effort = rec.steps.iter().map(|s| s.control.norm()).sum::<f64>() / n;
    let smooth = if rec.steps.len() > 1 {
        rec.steps
            .windows(2)
            .map(|w| (w[1].control.as_vec() - w[0].control.as_vec()).norm())
            .sum::<f64>()
            / (rec.steps.len() - 1) as f64
    } else {
        0.0
    };
    let feasible: Vec<&StepRecord> = rec.steps.iter().filter(|s| s.filtered && s.feasible).collect();
    EpisodeOutcome {
        episode_index: rec.episode_index,
        seed: rec.seed,
        scenario: rec.scenario.clone(),
        variant: rec.variant.clone(),
        collision: first_collision.is_some(),
        safety_violation: violation,
        goal_reached,
        control_effort: effort,
        control_smoothness: smooth,
        min_distance: rec.steps.iter().map(|s| s.min_distance_substep).fold(f64::INFINITY, f64::min),
        infeasible_steps: rec.steps.iter().filter(|s| !s.feasible).count(),
        feasible_filter_steps: feasible.len(),
        unsafe_after_feasible: feasible.iter().filter(|s| s.next_h_neighbors.is_some_and(|h| h < 0.0)).count(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub scenario: String,
    pub variant: String,
    pub trials: usize,
    pub collision_rate: f64,
    pub safety_violation_rate: f64,
    pub goal_success_rate: f64,
    pub mean_control_effort: f64,
    pub mean_control_smoothness: f64,
    /// Fraction of feasible filtered steps followed by `h(x_{k+1}) < 0`.
    pub unsafe_step_frequency: f64,
    pub feasible_filter_steps: usize,
}

pub fn summarize(scenario: &str, variant: &str, outcomes: &[EpisodeOutcome]) -> MetricsSummary {
    let n = outcomes.len().max(1) as f64;
    let rate = |f: fn(&EpisodeOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as f64 / n;
    let feasible: usize = outcomes.iter().map(|o| o.feasible_filter_steps).sum();
    let unsafe_steps: usize = outcomes.iter().map(|o| o.unsafe_after_feasible).sum();
    MetricsSummary {
        scenario: scenario.into(),
        variant: variant.into(),
        trials: outcomes.len(),
        collision_rate: rate(|o| o.collision),
        safety_violation_rate: rate(|o| o.safety_violation),
        goal_success_rate: rate(|o| o.goal_reached),
        mean_control_effort: outcomes.iter().map(|o| o.control_effort).sum::<f64>() / n,
        mean_control_smoothness: outcomes.iter().map(|o| o.control_smoothness).sum::<f64>() / n,
        unsafe_step_frequency: if feasible > 0 { unsafe_steps as f64 / feasible as f64 } else { 0.0 },
        feasible_filter_steps: feasible,
    }
}

/// Runs `n_trials` episodes in parallel; episode `i` uses seed
/// `derive_seed(base_seed, i)`. Results do not depend on the thread count.
pub fn run_episodes(
    scenario: &ScenarioSpec,
    variant: &PolicyVariant,
    cfg: &SimConfig,
    n_trials: usize,
    base_seed: u64,
) -> Result<Vec<EpisodeRecord>> {
    (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(base_seed, i as u64);
            let sc = scenario.instantiate(i, seed, cfg.spec.safety_radius)?;
            run_episode(&sc, variant, cfg, seed, i)
        })
        .collect()
}

pub fn evaluate(
    scenario: &ScenarioSpec,
    variant: &PolicyVariant,
    cfg: &SimConfig,
    n_trials: usize,
    base_seed: u64,
) -> Result<(MetricsSummary, Vec<EpisodeOutcome>)> {
    if n_trials == 0 {
        return Err(Error::InvalidConfig("n_trials must be >= 1".into()));
    }
    let outcomes: Vec<EpisodeOutcome> = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(base_seed, i as u64);
            let sc = scenario.instantiate(i, seed, cfg.spec.safety_radius)?;
            let rec = run_episode(&sc, variant, cfg, seed, i)?;
            Ok(outcome(&rec, cfg.spec.safety_radius, cfg.robot.goal_radius))
        })
        .collect::<Result<_>>()?;
    Ok((summarize(&scenario.name(), variant.name(), &outcomes), outcomes))
}
