//! Offline margin calibration: interaction batches under the robust filter,
//! certificate pairs, per-timestep CRC margins, and the training set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crc::{check_clamp_rate, default_loss_bound, optimal_lambda, CrcConfig};
use crate::dynamics::{HumanState, JointState};
use crate::error::{Error, Result};
use crate::human_policy::derive_seed;
use crate::simulator::{run_episode, PolicyVariant, ScenarioSpec, SimConfig};

pub const FEATURE_DIM: usize = 11;
pub const DISTANCE_INDEX: usize = 8;
pub const B_HAT_INDEX: usize = 9;
pub const K_INDEX: usize = 10;

/// Robot state (4), nearest-human state (4), distance, predicted certificate, timestep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn from_state(x: &JointState<f64>, human: usize, b_hat: f64, k: usize) -> Self {
        let r = &x.robot;
        let hs = match &x.humans[human] {
            HumanState::Unicycle(s) => [s.px, s.py, s.theta, s.v],
            HumanState::SingleIntegrator(s) => [s.px, s.py, s.vx, s.vy],
        };
        let d = (r.position() - x.humans[human].position()).norm();
        Self([r.px, r.py, r.theta, r.v, hs[0], hs[1], hs[2], hs[3], d, b_hat, k as f64])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub batch: usize,
    pub k: usize,
    pub features: FeatureVector,
    pub lambda: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub rows: Vec<TrainingRow>,
}

/// Risk parameters for calibration; `loss_bound` defaults to a data-driven value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrcSettings {
    pub alpha: f64,
    pub gamma: f64,
    #[serde(default)]
    pub beta: f64,
    pub rho: f64,
    #[serde(default)]
    pub loss_bound: Option<f64>,
}

impl CrcSettings {
    pub fn with_bound(&self, loss_bound: f64) -> CrcConfig<f64> {
        CrcConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            beta: self.beta,
            rho: self.rho,
            loss_bound,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.with_bound(self.loss_bound.unwrap_or(1.0)).validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Total trajectories.
    pub m: usize,
    /// Trajectories per batch.
    pub k: usize,
    /// Horizon steps.
    pub n: usize,
    pub crc: CrcSettings,
    pub scenario: ScenarioSpec,
    pub seed: u64,
}

impl CalibrationConfig {
    pub fn validate(&self, horizon_steps: usize) -> Result<()> {
        if self.k == 0 || self.m == 0 || self.m % self.k != 0 {
            return Err(Error::InvalidConfig(format!(
                "calibration.k ({}) must be >= 1 and divide calibration.m ({})",
                self.k, self.m
            )));
        }
        if self.n == 0 || self.n != horizon_steps {
            return Err(Error::InvalidConfig(format!(
                "calibration.n ({}) must equal dynamics.horizon_steps ({horizon_steps})",
                self.n
            )));
        }
        self.crc.validate()
    }

    pub fn batches(&self) -> usize {
        self.m / self.k
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificatePair {
    pub batch: usize,
    pub trajectory: usize,
    pub k: usize,
    pub b_true: f64,
    pub b_pred: f64,
}

impl CertificatePair {
    pub fn error(&self) -> f64 {
        (self.b_true - self.b_pred).abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelInfo {
    pub batch: usize,
    pub k: usize,
    pub lambda: f64,
    pub attainable: bool,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationOutput {
    pub training_set: TrainingSet,
    /// Per batch, ordered by `(k, trajectory)`.
    pub archive: Vec<Vec<CertificatePair>>,
    pub labels: Vec<LabelInfo>,
    pub crc: CrcConfig<f64>,
    pub clamped: usize,
}

/// Errors of `pairs` clamped to `bound`, in the given order.
fn clamped_errors(pairs: &[CertificatePair], bound: f64) -> Vec<f64> {
    pairs.iter().map(|p| p.error().min(bound)).collect()
}

/// Pooled samples of one batch with timestep `>= k`, ordered by `(k, trajectory)`.
pub fn pooled_at(batch: &[CertificatePair], k: usize) -> &[CertificatePair] {
    let start = batch.partition_point(|p| p.k < k);
    &batch[start..]
}

pub fn run_calibration(cfg: &CalibrationConfig, sim: &SimConfig) -> Result<CalibrationOutput> {
    cfg.validate(sim.dynamics.horizon_steps)?;
    let mut robust = sim.clone();
    robust.sample_count = 1;
    let episodes: Vec<(Vec<(usize, f64, f64)>, Vec<FeatureVector>)> = (0..cfg.m)
        .into_par_iter()
        .map(|e| {
            let seed = derive_seed(cfg.seed, e as u64);
            let sc = cfg.scenario.instantiate(e, seed, sim.spec.safety_radius)?;
            let rec = run_episode(&sc, &PolicyVariant::RcbfQp, &robust, seed, e)?;
            let mut pairs = Vec::with_capacity(cfg.n);
            let mut feats = Vec::with_capacity(cfg.n);
            for s in &rec.steps {
                let (Some(bt), Some(bp), Some(f)) = (s.b_true, s.b_pred, s.features.clone()) else {
                    return Err(Error::Empty("humans in calibration scenario"));
                };
                pairs.push((s.k, bt, bp));
                feats.push(f);
            }
            Ok((pairs, feats))
        })
        .collect::<Result<_>>()?;

    let n_batches = cfg.batches();
    let mut archive = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let mut batch = Vec::with_capacity(cfg.k * cfg.n);
        for k in 0..cfg.n {
            for t in 0..cfg.k {
                let (kk, bt, bp) = episodes[b * cfg.k + t].0[k];
                batch.push(CertificatePair { batch: b, trajectory: t, k: kk, b_true: bt, b_pred: bp });
            }
        }
        archive.push(batch);
    }

    let all_errors: Vec<f64> = archive.iter().flatten().map(|p| p.error()).collect();
    let bound = match cfg.crc.loss_bound {
        Some(b) => b,
        None => {
            let b = default_loss_bound(&all_errors);
            if b > 0.0 { b } else { 1.0 }
        }
    };
    let crc = cfg.crc.with_bound(bound);
    crc.validate()?;
    let clamped = all_errors.iter().filter(|&&e| e > bound).count();
    if clamped > 0 {
        log::warn!("{clamped} of {} calibration errors exceed the loss bound {bound}", all_errors.len());
    }
    check_clamp_rate(clamped, all_errors.len())?;

    let jobs: Vec<(usize, usize)> = (0..n_batches).flat_map(|b| (0..cfg.n).map(move |k| (b, k))).collect();
    let labels: Vec<LabelInfo> = jobs
        .par_iter()
        .map(|&(b, k)| {
            let pooled = pooled_at(&archive[b], k);
            let est = optimal_lambda(&clamped_errors(pooled, bound), &crc)?;
            Ok(LabelInfo { batch: b, k, lambda: est.lambda, attainable: est.attainable, n_samples: pooled.len() })
        })
        .collect::<Result<_>>()?;
    let unattainable = labels.iter().filter(|l| !l.attainable).count();
    if unattainable > 0 {
        log::warn!("{unattainable} of {} margin labels hit the risk floor and were set to the loss bound", labels.len());
    }

    let mut rows = Vec::with_capacity(cfg.m * cfg.n);
    for l in &labels {
        for t in 0..cfg.k {
            rows.push(TrainingRow {
                batch: l.batch,
                k: l.k,
                features: episodes[l.batch * cfg.k + t].1[l.k].clone(),
                lambda: l.lambda,
            });
        }
    }
    Ok(CalibrationOutput {
        training_set: TrainingSet { rows },
        archive,
        labels,
        crc,
        clamped,
    })
}

/// Margin from the whole archive pooled at `k = 0`, ordered by
/// `(k, batch, trajectory)`.
pub fn fixed_lambda(archive: &[Vec<CertificatePair>], crc: &CrcConfig<f64>) -> Result<f64> {
    let mut all: Vec<CertificatePair> = archive.iter().flatten().copied().collect();
    all.sort_by_key(|p| (p.k, p.batch, p.trajectory));
    if all.is_empty() {
        return Err(Error::Empty("certificate archive"));
    }
    Ok(optimal_lambda(&clamped_errors(&all, crc.loss_bound), crc)?.lambda)
}
