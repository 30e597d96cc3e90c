//! Stochastic human behavior: a goal-reaching nominal law with clipped
//! Gaussian control noise, used both to realize human actions and (with an
//! independent random stream) to sample predictions.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlBox, ControlInput, HumanState, JointState, RobotState, UnicycleState};
use crate::scalar::{wrap_angle, Vec2};

/// Random generator used throughout the simulation.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Builds the generator for `(seed, stream)`; distinct streams are independent.
pub fn rng_for(seed: u64, stream: u64) -> SimRng {
    use rand::SeedableRng;
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer used to derive per-episode seeds from a base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanPolicyConfig {
    /// Standard deviation of the per-axis control noise.
    pub noise_sigma: f64,
    /// Noise is clipped to `[-noise_clip, noise_clip]` before being added.
    pub noise_clip: f64,
    /// Goal attraction gain, 1/s: nominal speed is `min(gain * distance, preferred_speed)`.
    pub gain: f64,
    pub preferred_speed: f64,
    /// Unicycle humans: steering gain on heading error.
    #[serde(default = "default_heading_gain")]
    pub heading_gain: f64,
    /// Unicycle humans: acceleration gain on speed error.
    #[serde(default = "default_speed_gain")]
    pub speed_gain: f64,
    /// Single-integrator humans: push-away gain from other humans.
    #[serde(default)]
    pub repulsion_gain: f64,
    #[serde(default)]
    pub repulsion_radius: f64,
    /// Multiplier on `noise_sigma` used by the predictor (1 = well specified).
    #[serde(default = "one")]
    pub predictor_sigma_scale: f64,
}

fn default_heading_gain() -> f64 {
    1.0
}

fn default_speed_gain() -> f64 {
    1.0
}

fn one() -> f64 {
    1.0
}

impl HumanPolicyConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let fields = [
            ("noise_sigma", self.noise_sigma),
            ("noise_clip", self.noise_clip),
            ("gain", self.gain),
            ("preferred_speed", self.preferred_speed),
            ("heading_gain", self.heading_gain),
            ("speed_gain", self.speed_gain),
            ("repulsion_gain", self.repulsion_gain),
            ("repulsion_radius", self.repulsion_radius),
            ("predictor_sigma_scale", self.predictor_sigma_scale),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(crate::Error::InvalidConfig(format!("human.{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Human policy for one episode: shared parameters plus each human's goal.
#[derive(Clone, Debug)]
pub struct HumanPolicy {
    pub cfg: HumanPolicyConfig,
    pub goals: Vec<Vec2<f64>>,
    pub bounds: ControlBox<f64>,
}

/// One noise draw per axis: `sigma * z` clipped to `[-clip, clip]`. Always
/// consumes exactly two standard normals so streams stay aligned for any sigma.
pub fn clipped_noise<R: Rng + ?Sized>(sigma: f64, clip: f64, rng: &mut R) -> (f64, f64) {
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    ((sigma * a).clamp(-clip, clip), (sigma * b).clamp(-clip, clip))
}

impl HumanPolicy {
    pub fn new(cfg: HumanPolicyConfig, goals: Vec<Vec2<f64>>, bounds: ControlBox<f64>) -> Self {
        Self { cfg, goals, bounds }
    }

    /// Noise-free goal-reaching control of human `i` given all human states.
    pub fn nominal(&self, humans: &[HumanState<f64>], i: usize) -> ControlInput<f64> {
        let goal = self.goals[i];
        let c = &self.cfg;
        match &humans[i] {
            HumanState::Unicycle(s) => {
                let to_goal = goal - s.position();
                let dist = to_goal.norm();
                let steer = if dist > 1e-9 {
                    c.heading_gain * wrap_angle(to_goal.y.atan2(to_goal.x) - s.theta)
                } else {
                    0.0
                };
                let v_des = (c.gain * dist).min(c.preferred_speed);
                ControlInput::new(steer, c.speed_gain * (v_des - s.v))
            }
            HumanState::SingleIntegrator(_) => {
                let p = humans[i].position();
                let to_goal = goal - p;
                let dist = to_goal.norm();
                let mut v = if dist > 1e-12 {
                    to_goal * ((c.gain * dist).min(c.preferred_speed) / dist)
                } else {
                    Vec2::zero()
                };
                if c.repulsion_gain > 0.0 && c.repulsion_radius > 0.0 {
                    for (j, other) in humans.iter().enumerate() {
                        if j == i {
                            continue;
                        }
                        let away = p - other.position();
                        let d = away.norm();
                        if d > 1e-9 && d < c.repulsion_radius {
                            v += away * (c.repulsion_gain * (c.repulsion_radius - d) / (c.repulsion_radius * d));
                        }
                    }
                }
                ControlInput::from_vec(v)
            }
        }
    }

    fn noisy<R: Rng + ?Sized>(&self, humans: &[HumanState<f64>], i: usize, sigma: f64, rng: &mut R) -> ControlInput<f64> {
        let nominal = self.nominal(humans, i);
        let (n1, n2) = clipped_noise(sigma, self.cfg.noise_clip, rng);
        self.bounds.clamp(ControlInput::new(nominal.u1 + n1, nominal.u2 + n2))
    }

    /// The action human `i` actually takes.
    pub fn realized_action<R: Rng + ?Sized>(&self, humans: &[HumanState<f64>], i: usize, rng: &mut R) -> ControlInput<f64> {
        self.noisy(humans, i, self.cfg.noise_sigma, rng)
    }

    /// Realized actions for all humans, drawn in index order.
    pub fn realized_actions<R: Rng + ?Sized>(&self, humans: &[HumanState<f64>], rng: &mut R) -> Vec<ControlInput<f64>> {
        (0..humans.len()).map(|i| self.realized_action(humans, i, rng)).collect()
    }

    /// Independent rollouts of the same stochastic law through the humans'
    /// own dynamics. The robot is not modeled by the predictor.
    pub fn sample_predicted<R: Rng + ?Sized>(
        &self,
        humans: &[HumanState<f64>],
        horizon: usize,
        sample_count: usize,
        dt: f64,
        rng: &mut R,
    ) -> PredictedActions {
        let sigma = self.cfg.noise_sigma * self.cfg.predictor_sigma_scale;
        let horizon = horizon.max(1);
        let mut actions = Vec::with_capacity(sample_count);
        let mut states = Vec::with_capacity(sample_count);
        for _ in 0..sample_count.max(1) {
            let mut cur = humans.to_vec();
            let mut seq = Vec::with_capacity(horizon);
            let mut traj = Vec::with_capacity(horizon + 1);
            traj.push(cur.clone());
            for _ in 0..horizon {
                let u: Vec<ControlInput<f64>> = (0..cur.len()).map(|i| self.noisy(&cur, i, sigma, rng)).collect();
                cur = cur.iter().zip(&u).map(|(s, a)| s.step(*a, dt)).collect();
                traj.push(cur.clone());
                seq.push(u);
            }
            actions.push(seq);
            states.push(traj);
        }
        PredictedActions { actions, states }
    }
}

/// Sampled predictions: `actions[s][t][i]` is sample `s`, step `t`, human `i`;
/// `states[s][t]` the integrated human states (`t = 0` is the current state).
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedActions {
    pub actions: Vec<Vec<Vec<ControlInput<f64>>>>,
    pub states: Vec<Vec<Vec<HumanState<f64>>>>,
}

impl PredictedActions {
    pub fn sample_count(&self) -> usize {
        self.actions.len()
    }

    /// First-step action of every human for every sample: `[s][i]`.
    pub fn first_actions(&self) -> Vec<Vec<ControlInput<f64>>> {
        self.actions.iter().map(|seq| seq[0].clone()).collect()
    }
}

/// Geometry of the single-agent corridor encounter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadOnLayout {
    /// Initial robot-human separation along the corridor axis.
    pub corridor_length: f64,
    /// Lateral offset of the human's goal; its sign is the pass side.
    pub goal_lateral_offset: f64,
    /// How far past the robot's start the human's goal lies.
    pub human_goal_overshoot: f64,
    pub robot_speed: f64,
    pub human_speed: f64,
}

impl Default for HeadOnLayout {
    fn default() -> Self {
        Self {
            corridor_length: 8.0,
            goal_lateral_offset: 1.0,
            human_goal_overshoot: 1.0,
            robot_speed: 0.0,
            human_speed: 0.0,
        }
    }
}

/// Random crowd arena used by the multi-agent scenarios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrowdLayout {
    /// Humans start and aim inside `[-h, h]^2`.
    pub arena_half_extent: f64,
    pub n_humans: usize,
    /// Minimum distance of every human start from the robot start and goal.
    pub robot_clearance: f64,
    /// Minimum lateral distance of every human start and goal from the line
    /// through the robot start and goal. Goals lie on the opposite side of
    /// that line from their start, so every human crosses the robot's path.
    pub path_clearance: f64,
    /// Uniform jitter added to each human goal (mirror of its start).
    pub goal_jitter: f64,
    pub max_attempts: usize,
}

impl Default for CrowdLayout {
    fn default() -> Self {
        Self {
            arena_half_extent: 3.5,
            n_humans: 4,
            robot_clearance: 2.0,
            path_clearance: 1.0,
            goal_jitter: 1.0,
            max_attempts: 10_000,
        }
    }
}

/// Which side the human passes on in the head-on encounter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassSide {
    Left,
    Right,
}

/// An instantiated episode layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub initial: JointState<f64>,
    pub robot_goal: Vec2<f64>,
    pub human_goals: Vec<Vec2<f64>>,
    pub pass_side: Option<PassSide>,
}

/// Head-on corridor encounter; the pass side is a fair coin drawn from `seed`.
pub fn head_on_scenario(seed: u64, layout: &HeadOnLayout) -> Scenario {
    let side = if rng_for(seed, 0).random::<bool>() { PassSide::Left } else { PassSide::Right };
    let sign = if side == PassSide::Left { 1.0 } else { -1.0 };
    let l = layout.corridor_length;
    let robot = RobotState::new(0.0, 0.0, 0.0, layout.robot_speed);
    let human = HumanState::Unicycle(UnicycleState::new(l, 0.0, std::f64::consts::PI, layout.human_speed));
    Scenario {
        name: "head_on".into(),
        initial: JointState::new(robot, vec![human]),
        robot_goal: Vec2::new(l, 0.0),
        human_goals: vec![Vec2::new(-layout.human_goal_overshoot, sign * layout.goal_lateral_offset)],
        pass_side: Some(side),
    }
}

/// Robot start and goal for the named crowd presets `crowd_1` to `crowd_5`.
pub const CROWD_PRESETS: [(&str, [f64; 2], [f64; 2]); 5] = [
    ("crowd_1", [-3.5, 0.0], [3.5, 0.0]),
    ("crowd_2", [0.0, -3.5], [0.0, 3.5]),
    ("crowd_3", [-2.5, -2.5], [2.5, 2.5]),
    ("crowd_4", [-2.5, 2.5], [2.5, -2.5]),
    ("crowd_5", [3.5, 0.5], [-3.5, -0.5]),
];

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3))
}

/// Random crowd crossing the robot's straight path from `(-h, 0)` to `(h, 0)`.
pub fn crowd_scenario(n_humans: usize, seed: u64, layout: &CrowdLayout, safety_radius: f64) -> crate::Result<Scenario> {
    let h = layout.arena_half_extent;
    place_crowd("crowd", Vec2::new(-h, 0.0), Vec2::new(h, 0.0), n_humans, seed, layout, safety_radius)
}

/// Preset crowd by name; the layout depends only on the name.
pub fn crowd_preset(name: &str, layout: &CrowdLayout, safety_radius: f64) -> crate::Result<Scenario> {
    let (_, start, goal) = CROWD_PRESETS
        .iter()
        .find(|(n, _, _)| *n == name)
        .ok_or_else(|| crate::Error::UnknownScenario(name.into()))?;
    place_crowd(
        name,
        Vec2::new(start[0], start[1]),
        Vec2::new(goal[0], goal[1]),
        layout.n_humans,
        fnv1a(name),
        layout,
        safety_radius,
    )
}

fn place_crowd(
    name: &str,
    start: Vec2<f64>,
    goal: Vec2<f64>,
    n_humans: usize,
    seed: u64,
    layout: &CrowdLayout,
    safety_radius: f64,
) -> crate::Result<Scenario> {
    if n_humans == 0 {
        return Err(crate::Error::InvalidConfig("crowd needs at least one human".into()));
    }
    let mut rng = rng_for(seed, 0);
    let h = layout.arena_half_extent;
    let heading = (goal - start).y.atan2((goal - start).x);
    let mid = (start + goal) * 0.5;
    let e = Vec2::heading(heading);
    let n = e.perp();
    let c = layout.path_clearance;
    let mut starts: Vec<Vec2<f64>> = Vec::with_capacity(n_humans);
    let mut attempts = 0;
    while starts.len() < n_humans {
        if attempts >= layout.max_attempts {
            return Err(crate::Error::PlacementFailed { n_humans, attempts });
        }
        attempts += 1;
        let p = Vec2::new(rng.random_range(-h..=h), rng.random_range(-h..=h));
        let clear_robot = (p - start).norm() > layout.robot_clearance && (p - goal).norm() > layout.robot_clearance;
        let clear_path = (p - mid).dot(n).abs() > c;
        let clear_humans = starts.iter().all(|q| (p - *q).norm() > 2.0 * safety_radius);
        if clear_robot && clear_path && clear_humans {
            starts.push(p);
        }
    }
    let j = layout.goal_jitter;
    let goals = starts
        .iter()
        .map(|p| {
            let along = (*p - mid).dot(e) + rng.random_range(-j..=j);
            let lateral = (*p - mid).dot(n);
            let mirrored = -lateral + rng.random_range(-j..=j);
            let lateral_goal = -lateral.signum() * mirrored.abs().max(c);
            let g = mid + e * along + n * lateral_goal;
            Vec2::new(g.x.clamp(-h, h), g.y.clamp(-h, h))
        })
        .collect();
    let humans = starts.iter().map(|p| HumanState::integrator(p.x, p.y)).collect();
    Ok(Scenario {
        name: name.into(),
        initial: JointState::new(RobotState::new(start.x, start.y, heading, 0.0), humans),
        robot_goal: goal,
        human_goals: goals,
        pass_side: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::UnicycleState;

    fn cfg(sigma: f64) -> HumanPolicyConfig {
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

    #[test]
    fn at_goal_without_noise_is_still() {
        let mut rng = rng_for(1, 0);
        let p = HumanPolicy::new(cfg(0.0), vec![Vec2::new(2.0, 3.0)], ControlBox::symmetric(1.5, 1.5));
        let humans = vec![HumanState::integrator(2.0, 3.0)];
        assert_eq!(p.realized_action(&humans, 0, &mut rng), ControlInput::zero());
        let pu = HumanPolicy::new(cfg(0.0), vec![Vec2::new(2.0, 3.0)], ControlBox::symmetric(0.3, 1.0));
        let humans = vec![HumanState::Unicycle(UnicycleState::new(2.0, 3.0, 0.4, 0.0))];
        assert_eq!(pu.realized_action(&humans, 0, &mut rng), ControlInput::zero());
    }

    #[test]
    fn proportional_law_points_at_goal() {
        let mut rng = rng_for(1, 0);
        let mut c = cfg(0.0);
        c.gain = 0.4;
        c.preferred_speed = 1.2;
        let p = HumanPolicy::new(c, vec![Vec2::new(2.0, 0.0)], ControlBox::symmetric(1.5, 1.5));
        let u = p.realized_action(&[HumanState::integrator(0.0, 0.0)], 0, &mut rng);
        assert!((u.u1 - 0.8).abs() < 1e-12 && u.u2 == 0.0);
        let p = HumanPolicy::new(cfg(0.0), vec![Vec2::new(10.0, 0.0)], ControlBox::symmetric(1.5, 1.5));
        let u = p.realized_action(&[HumanState::integrator(0.0, 0.0)], 0, &mut rng);
        assert!((u.u1 - 1.0).abs() < 1e-12 && u.u2 == 0.0);
    }

    #[test]
    fn repulsion_pushes_apart() {
        let mut c = cfg(0.0);
        c.gain = 0.0;
        c.repulsion_gain = 1.0;
        c.repulsion_radius = 2.0;
        let p = HumanPolicy::new(c, vec![Vec2::zero(); 2], ControlBox::symmetric(1.5, 1.5));
        let humans = vec![HumanState::integrator(0.0, 0.0), HumanState::integrator(1.0, 0.0)];
        let u = p.nominal(&humans, 0);
        assert!(u.u1 < 0.0 && u.u2.abs() < 1e-12);
    }

    #[test]
    fn shared_stream_prediction_equals_realization() {
        let p = HumanPolicy::new(cfg(1.2), vec![Vec2::new(5.0, 1.0)], ControlBox::symmetric(1.5, 1.5));
        let humans = vec![HumanState::integrator(0.0, 0.0)];
        let mut a = rng_for(9, 3);
        let mut b = rng_for(9, 3);
        let real = p.realized_actions(&humans, &mut a);
        let pred = p.sample_predicted(&humans, 1, 1, 0.1, &mut b);
        assert_eq!(pred.first_actions()[0], real);
    }

    #[test]
    fn zero_noise_samples_are_identical() {
        let p = HumanPolicy::new(cfg(0.0), vec![Vec2::new(5.0, 1.0)], ControlBox::symmetric(1.5, 1.5));
        let humans = vec![HumanState::integrator(0.0, 0.0)];
        let pred = p.sample_predicted(&humans, 5, 4, 0.1, &mut rng_for(2, 2));
        for s in &pred.actions[1..] {
            assert_eq!(s, &pred.actions[0]);
        }
        assert_eq!(pred.states[0].len(), 6);
    }

    #[test]
    fn seeds_are_distinct() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_eq!(derive_seed(5, 7), derive_seed(5, 7));
    }
    #[test]
    fn head_on_sides_mirror() {
        let layout = HeadOnLayout::default();
        let mut seen = [None, None];
        for seed in 0..64 {
            let s = head_on_scenario(seed, &layout);
            let k = (s.pass_side == Some(PassSide::Left)) as usize;
            seen[k].get_or_insert(s);
        }
        let (r, l) = (seen[0].clone().unwrap(), seen[1].clone().unwrap());
        assert_eq!(l.human_goals[0].x, r.human_goals[0].x);
        assert_eq!(l.human_goals[0].y, -r.human_goals[0].y);
        let sep = l.initial.humans[0].position() - l.initial.robot.position();
        assert_eq!(sep.x, layout.corridor_length);
        assert_eq!(sep.y, 0.0);
    }

    #[test]
    fn head_on_side_is_fair() {
        let layout = HeadOnLayout::default();
        let left = (0..1000).filter(|&s| head_on_scenario(s, &layout).pass_side == Some(PassSide::Left)).count();
        assert!((left as f64 / 1000.0 - 0.5).abs() <= 0.05, "{left}");
    }

    #[test]
    fn crowd_starts_are_separated() {
        let layout = CrowdLayout::default();
        for seed in 0..50 {
            let s = crowd_scenario(6, seed, &layout, 0.5).unwrap();
            let ps: Vec<_> = s.initial.humans.iter().map(|h| h.position()).collect();
            for i in 0..ps.len() {
                for j in i + 1..ps.len() {
                    assert!((ps[i] - ps[j]).norm() > 1.0);
                }
            }
        }
        let one = crowd_scenario(1, 3, &layout, 0.5).unwrap();
        assert_eq!(one.initial.humans.len(), 1);
    }

    #[test]
    fn crowd_humans_cross_the_robot_path() {
        let layout = CrowdLayout::default();
        for (name, start, goal) in CROWD_PRESETS {
            let s = crowd_preset(name, &layout, 1.0).unwrap();
            let (a, b) = (Vec2::new(start[0], start[1]), Vec2::new(goal[0], goal[1]));
            let n = (b - a).perp();
            let side = |p: Vec2<f64>| (p - a).dot(n) / n.norm();
            for (h, g) in s.initial.humans.iter().zip(&s.human_goals) {
                let l = side(h.position());
                assert!(l.abs() > layout.path_clearance, "{name}");
                assert!(side(*g) * l < 0.0, "{name}");
            }
        }
    }

    #[test]
    fn crowd_placement_can_fail() {
        let layout = CrowdLayout { arena_half_extent: 0.5, max_attempts: 100, ..CrowdLayout::default() };
        assert!(matches!(crowd_scenario(5, 0, &layout, 0.5), Err(crate::Error::PlacementFailed { .. })));
    }

    #[test]
    fn presets_are_reproducible() {
        let layout = CrowdLayout::default();
        for (name, _, _) in CROWD_PRESETS {
            let a = crowd_preset(name, &layout, 0.5).unwrap();
            let b = crowd_preset(name, &layout, 0.5).unwrap();
            assert_eq!(a, b);
        }
        assert_ne!(crowd_preset("crowd_1", &layout, 0.5).unwrap().initial, crowd_preset("crowd_2", &layout, 0.5).unwrap().initial);
        assert!(crowd_preset("crowd_9", &layout, 0.5).is_err());
    }
}
