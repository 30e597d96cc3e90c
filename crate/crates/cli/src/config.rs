//! Experiment configuration: one JSON document with named sections.

use std::path::Path;

use crcsf::barrier::{eta, estimate_lipschitz, BarrierSpec, LipschitzBundle, SampleBox};
use crcsf::calibration::{CalibrationConfig, CrcSettings};
use crcsf::crc::epsilon;
use crcsf::dynamics::{AgentModel, ControlBox, DynamicsConfig};
use crcsf::human_policy::{CrowdLayout, HeadOnLayout, HumanPolicyConfig};
use crcsf::margin_model::TrainConfig;
use crcsf::simulator::{RobotNominalConfig, ScenarioSpec, SimConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// `head_on`, `crowd_presets`, `crowd_1` .. `crowd_5` or `random_crowd`.
    pub name: String,
    #[serde(default)]
    pub head_on: HeadOnLayout,
    #[serde(default)]
    pub crowd: CrowdLayout,
}

impl ScenarioSection {
    pub fn spec(&self) -> Result<ScenarioSpec, CliError> {
        Ok(ScenarioSpec::from_name(&self.name, &self.head_on, &self.crowd)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum LipschitzSection {
    Bundle(LipschitzBundle<f64>),
    Estimate { sample_box: SampleBox, n_samples: usize, seed: u64 },
}

impl LipschitzSection {
    pub fn bundle(&self, spec: &BarrierSpec<f64>) -> Result<LipschitzBundle<f64>, CliError> {
        match self {
            Self::Bundle(b) => Ok(*b),
            Self::Estimate { sample_box, n_samples, seed } => Ok(estimate_lipschitz(sample_box, spec, *n_samples, *seed)?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    /// Total trajectories.
    pub m: usize,
    /// Trajectories per batch.
    pub k: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub variants: Vec<String>,
    pub n_trials: usize,
    pub base_seed: u64,
    /// Predicted human-action samples per filter step.
    pub sample_count: usize,
    /// Override of `sample_count` for the plain CBF-QP baseline.
    #[serde(default)]
    pub cbf_sample_count: Option<usize>,
    pub prediction_horizon: usize,
    /// Subdivisions of each hold interval for inter-sample checks.
    pub substeps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSection,
    pub dynamics: DynamicsConfig<f64>,
    pub barrier: BarrierSpec<f64>,
    pub lipschitz: LipschitzSection,
    pub robot: RobotNominalConfig,
    pub human: HumanPolicyConfig,
    pub crc: CrcSettings,
    pub calibration: CalibrationSection,
    pub margin_model: TrainConfig,
    pub evaluation: EvaluationSection,
    pub output_dir: String,
}

/// Several experiment groups run back to back by `repro-paper`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReproConfig {
    pub groups: Vec<ExperimentConfig>,
}

pub const VARIANTS: [&str; 4] = ["cbf_qp", "rcbf_qp", "fixed_crc_sf", "online_crc_sf"];

impl ExperimentConfig {
    pub fn head_on_default() -> Self {
        let robot_box = ControlBox::symmetric(0.3, 1.0);
        Self {
            scenario: ScenarioSection {
                name: "head_on".into(),
                head_on: HeadOnLayout {
                    corridor_length: 6.0,
                    goal_lateral_offset: 2.0,
                    human_goal_overshoot: -4.0,
                    ..HeadOnLayout::default()
                },
                crowd: CrowdLayout::default(),
            },
            dynamics: DynamicsConfig {
                dt: 0.1,
                horizon_steps: 80,
                robot_control_bounds: robot_box,
                human_control_bounds: robot_box,
            },
            barrier: BarrierSpec {
                safety_radius: 1.0,
                kappa: 4.0,
                hocbf_gain: 2.0,
                neighborhood_radius: 20.0,
            },
            lipschitz: LipschitzSection::Estimate {
                sample_box: SampleBox {
                    position_half_extent: 0.5,
                    speed_min: 0.0,
                    speed_max: 1.0,
                    human_model: AgentModel::Unicycle,
                    robot_control_bounds: robot_box,
                    human_control_bounds: robot_box,
                },
                n_samples: 2000,
                seed: 7,
            },
            robot: RobotNominalConfig { preferred_speed: 1.0, ..RobotNominalConfig::default() },
            human: HumanPolicyConfig {
                noise_sigma: 1.2,
                noise_clip: 0.5,
                gain: 1.0,
                preferred_speed: 0.8,
                heading_gain: 1.0,
                speed_gain: 1.0,
                repulsion_gain: 0.0,
                repulsion_radius: 0.0,
                predictor_sigma_scale: 1.0,
            },
            crc: CrcSettings {
                alpha: 0.01,
                gamma: 0.99,
                beta: 0.0,
                rho: 0.99999,
                loss_bound: None,
            },
            calibration: CalibrationSection { m: 2000, k: 500, seed: 11 },
            margin_model: TrainConfig::default(),
            evaluation: EvaluationSection {
                variants: vec!["cbf_qp".into(), "fixed_crc_sf".into(), "online_crc_sf".into()],
                n_trials: 100,
                base_seed: 2024,
                sample_count: 10,
                cbf_sample_count: None,
                prediction_horizon: 1,
                substeps: 10,
            },
            output_dir: "out/head_on".into(),
        }
    }

    pub fn crowd_default() -> Self {
        let mut c = Self::head_on_default();
        let human_box = ControlBox::symmetric(1.5, 1.5);
        c.scenario.name = "crowd_presets".into();
        c.dynamics.human_control_bounds = human_box;
        c.lipschitz = LipschitzSection::Estimate {
            sample_box: SampleBox {
                position_half_extent: 0.5,
                speed_min: 0.0,
                speed_max: 1.5,
                human_model: AgentModel::SingleIntegrator,
                robot_control_bounds: c.dynamics.robot_control_bounds,
                human_control_bounds: human_box,
            },
            n_samples: 2000,
            seed: 7,
        };
        c.human.repulsion_gain = 0.5;
        c.human.repulsion_radius = 1.5;
        c.human.preferred_speed = 0.8;
        c.barrier.neighborhood_radius = 3.0;
        c.robot.preferred_speed = 1.25;
        c.calibration = CalibrationSection { m: 1000, k: 200, seed: 13 };
        c.output_dir = "out/crowd".into();
        c
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.dynamics.validate()?;
        self.barrier.validate()?;
        self.human.validate()?;
        self.crc.validate()?;
        self.margin_model.validate()?;
        self.scenario.spec()?;
        self.calibration_config()?.validate(self.dynamics.horizon_steps)?;
        if let LipschitzSection::Bundle(b) = &self.lipschitz {
            let joint = self
                .dynamics
                .robot_control_bounds
                .max_norm()
                .hypot(self.dynamics.human_control_bounds.max_norm());
            b.validate(joint)?;
        }
        let e = &self.evaluation;
        if e.n_trials == 0 {
            return Err(CliError::Config("evaluation.n_trials must be >= 1".into()));
        }
        if e.sample_count == 0 || e.cbf_sample_count == Some(0) {
            return Err(CliError::Config("evaluation.sample_count must be >= 1".into()));
        }
        if e.prediction_horizon == 0 || e.substeps == 0 {
            return Err(CliError::Config("evaluation.prediction_horizon and evaluation.substeps must be >= 1".into()));
        }
        for v in &e.variants {
            if !VARIANTS.contains(&v.as_str()) {
                return Err(CliError::Config(format!("evaluation.variants: unknown variant `{v}`")));
            }
        }
        Ok(())
    }

    pub fn calibration_config(&self) -> Result<CalibrationConfig, CliError> {
        Ok(CalibrationConfig {
            m: self.calibration.m,
            k: self.calibration.k,
            n: self.dynamics.horizon_steps,
            crc: self.crc.clone(),
            scenario: self.scenario.spec()?,
            seed: self.calibration.seed,
        })
    }

    /// Simulation settings with the discretization margin resolved.
    pub fn sim_config(&self, bundle: &LipschitzBundle<f64>) -> SimConfig {
        SimConfig {
            dynamics: self.dynamics.clone(),
            spec: self.barrier,
            eta: eta(bundle, self.dynamics.dt),
            epsilon: epsilon(&self.crc.with_bound(1.0)),
            robot: self.robot.clone(),
            human: self.human.clone(),
            sample_count: self.evaluation.sample_count,
            prediction_horizon: self.evaluation.prediction_horizon,
            substeps: self.evaluation.substeps,
        }
    }

    /// SHA-256 of the canonical form: sorted keys, shortest round-trip floats.
    pub fn hash(&self) -> String {
        canonical_hash(&serde_json::to_value(self).expect("config serializes"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub fn canonical_hash(v: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(serde_json::to_string(v).expect("value serializes").as_bytes()))
}

fn parse<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let field = if path == "." { String::new() } else { format!(" at `{path}`") };
        CliError::Config(format!("{origin}{field}: {inner}"))
    })
}

pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig, CliError> {
    let cfg: ExperimentConfig = parse(text, origin)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text, &path.display().to_string())
}

pub fn load_repro_config(path: &Path) -> Result<ReproConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let cfg: ReproConfig = parse(&text, &path.display().to_string())?;
    for g in &cfg.groups {
        g.validate()?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for c in [ExperimentConfig::head_on_default(), ExperimentConfig::crowd_default()] {
            c.validate().unwrap();
            let back = parse_config(&c.to_json(), "test").unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
    }

    #[test]
    fn missing_field_is_named() {
        let mut v = serde_json::to_value(ExperimentConfig::head_on_default()).unwrap();
        v["crc"].as_object_mut().unwrap().remove("alpha");
        let err = parse_config(&v.to_string(), "cfg.json").unwrap_err().to_string();
        assert!(err.contains("crc") && err.contains("alpha"), "{err}");
    }

    #[test]
    fn hash_ignores_key_order() {
        let c = ExperimentConfig::head_on_default();
        let v = serde_json::to_value(&c).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().iter().collect();
        keys.reverse();
        let reordered = format!(
            "{{{}}}",
            keys.iter().map(|(k, v)| format!("{:?}:{}", k, v)).collect::<Vec<_>>().join(",")
        );
        assert_eq!(parse_config(&reordered, "x").unwrap().hash(), c.hash());
    }
}
