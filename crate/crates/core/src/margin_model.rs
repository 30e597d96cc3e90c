//! Learned map from interaction context to safety margin.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{FeatureVector, TrainingSet, FEATURE_DIM, K_INDEX, DISTANCE_INDEX};
use crate::error::{Error, Result};

pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub kind: ModelKind,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default)]
    pub seed: u64,
    /// Fraction of batches held out for validation.
    #[serde(default = "default_val")]
    pub validation_fraction: f64,
    /// Training rows above this count are subsampled (mlp only).
    #[serde(default = "default_max_rows")]
    pub max_train_rows: usize,
    #[serde(default = "default_k_bucket")]
    pub k_bucket_width: usize,
    #[serde(default = "default_d_bucket")]
    pub distance_bucket_width: f64,
}

fn default_lr() -> f64 {
    1e-2
}
fn default_epochs() -> usize {
    2000
}
fn default_hidden() -> usize {
    32
}
fn default_val() -> f64 {
    0.1
}
fn default_max_rows() -> usize {
    2048
}
fn default_k_bucket() -> usize {
    5
}
fn default_d_bucket() -> f64 {
    0.5
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mlp,
            learning_rate: default_lr(),
            epochs: default_epochs(),
            hidden: default_hidden(),
            seed: 0,
            validation_fraction: default_val(),
            max_train_rows: default_max_rows(),
            k_bucket_width: default_k_bucket(),
            distance_bucket_width: default_d_bucket(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("margin_model.{m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.hidden == 0 {
            return bad("hidden must be >= 1");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        if self.max_train_rows == 0 || self.k_bucket_width == 0 {
            return bad("max_train_rows and k_bucket_width must be >= 1");
        }
        if !(self.distance_bucket_width > 0.0) {
            return bad("distance_bucket_width must be > 0");
        }
        Ok(())
    }
}

/// Per-feature affine normalization `(x - mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn fit(rows: &[FeatureVector]) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; FEATURE_DIM];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.0.iter()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; FEATURE_DIM];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.0.iter()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var.into_iter().map(|s| if s.sqrt() > 1e-9 { s.sqrt() } else { 1.0 }).collect();
        Self { mean, scale }
    }

    fn apply(&self, phi: &FeatureVector) -> [f64; FEATURE_DIM] {
        let mut z = [0.0; FEATURE_DIM];
        for i in 0..FEATURE_DIM {
            z[i] = (phi.0[i] - self.mean[i]) / self.scale[i];
        }
        z
    }
}

/// Two tanh hidden layers and a linear head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub norm: Normalization,
    /// Row-major `hidden x 11`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major `hidden x hidden`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: f64,
    pub target_mean: f64,
    pub target_scale: f64,
}

impl Mlp {
    fn hidden(&self) -> usize {
        self.b1.len()
    }

    fn forward_normalized(&self, z: &[f64], a1: &mut [f64], a2: &mut [f64]) -> f64 {
        let h = self.hidden();
        for j in 0..h {
            let row = &self.w1[j * FEATURE_DIM..(j + 1) * FEATURE_DIM];
            a1[j] = (self.b1[j] + row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>()).tanh();
        }
        for j in 0..h {
            let row = &self.w2[j * h..(j + 1) * h];
            a2[j] = (self.b2[j] + row.iter().zip(a1.iter()).map(|(w, x)| w * x).sum::<f64>()).tanh();
        }
        self.b3 + self.w3.iter().zip(a2.iter()).map(|(w, x)| w * x).sum::<f64>()
    }

    /// Unclamped regression output in label units.
    pub fn raw(&self, phi: &FeatureVector) -> f64 {
        let z = self.norm.apply(phi);
        let h = self.hidden();
        let mut a1 = vec![0.0; h];
        let mut a2 = vec![0.0; h];
        self.target_mean + self.target_scale * self.forward_normalized(&z, &mut a1, &mut a2)
    }
}

/// Mean label per `(k bucket, distance bucket)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableModel {
    pub k_bucket_width: usize,
    pub distance_bucket_width: f64,
    pub n_k_buckets: usize,
    pub n_distance_buckets: usize,
    /// Row-major `n_k_buckets x n_distance_buckets`; `None` for empty bins.
    pub values: Vec<Option<f64>>,
    /// Mean label per k bucket, used for empty bins.
    pub k_means: Vec<Option<f64>>,
    pub global_mean: f64,
}

impl TableModel {
    fn bin(&self, phi: &FeatureVector) -> (usize, usize) {
        let k = phi.0[K_INDEX].max(0.0) as usize / self.k_bucket_width;
        let d = (phi.0[DISTANCE_INDEX].max(0.0) / self.distance_bucket_width) as usize;
        (k.min(self.n_k_buckets - 1), d.min(self.n_distance_buckets - 1))
    }

    pub fn raw(&self, phi: &FeatureVector) -> f64 {
        let (k, d) = self.bin(phi);
        self.values[k * self.n_distance_buckets + d]
            .or(self.k_means[k])
            .unwrap_or(self.global_mean)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelBody {
    Mlp(Mlp),
    Table(TableModel),
    /// Fixed output, mostly for tests and ablations.
    Constant { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginModel {
    pub version: u32,
    pub config_hash: String,
    pub lambda_max: f64,
    pub body: ModelBody,
}

impl MarginModel {
    pub fn constant(value: f64) -> Self {
        Self {
            version: MODEL_VERSION,
            config_hash: String::new(),
            lambda_max: value.max(0.0),
            body: ModelBody::Constant { value },
        }
    }

    pub fn raw(&self, phi: &FeatureVector) -> f64 {
        match &self.body {
            ModelBody::Mlp(m) => m.raw(phi),
            ModelBody::Table(t) => t.raw(phi),
            ModelBody::Constant { value } => *value,
        }
    }

    /// Margin in `[0, lambda_max]`.
    pub fn predict(&self, phi: &FeatureVector) -> f64 {
        let v = self.raw(phi);
        if v.is_nan() {
            return self.lambda_max;
        }
        v.clamp(0.0, self.lambda_max)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s).map_err(|e| Error::InvalidConfig(format!("margin model: {e}")))?;
        if m.version != MODEL_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported margin model version {}", m.version)));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub kind: ModelKind,
    pub train_mse: f64,
    pub validation_mse: f64,
    pub epochs: usize,
    pub seed: u64,
    pub train_rows: usize,
    pub validation_rows: usize,
    pub validation_batches: Vec<usize>,
}

/// Batch-wise split: the last `ceil(fraction * batches)` batches of a seeded
/// permutation are held out.
pub fn split_batches(ts: &TrainingSet, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut batches: Vec<usize> = ts.rows.iter().map(|r| r.batch).collect();
    batches.sort_unstable();
    batches.dedup();
    if batches.len() < 2 {
        return Err(Error::TooFewBatches { batches: batches.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    batches.shuffle(&mut rng);
    let n_val = ((fraction * batches.len() as f64).ceil() as usize).clamp(1, batches.len() - 1);
    let val = batches.split_off(batches.len() - n_val);
    let (train, val) = (
        ts.rows.iter().enumerate().filter(|(_, r)| !val.contains(&r.batch)).map(|(i, _)| i).collect(),
        ts.rows.iter().enumerate().filter(|(_, r)| val.contains(&r.batch)).map(|(i, _)| i).collect(),
    );
    Ok((train, val))
}

fn mse<F: Fn(&FeatureVector) -> f64>(ts: &TrainingSet, idx: &[usize], f: F) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    idx.iter()
        .map(|&i| {
            let r = &ts.rows[i];
            let e = f(&r.features) - r.lambda;
            e * e
        })
        .sum::<f64>()
        / idx.len() as f64
}

/// Fits a margin model. Deterministic given `(ts, cfg)`.
pub fn train(ts: &TrainingSet, cfg: &TrainConfig) -> Result<(MarginModel, TrainReport)> {
    cfg.validate()?;
    if ts.rows.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let (train_idx, val_idx) = split_batches(ts, cfg.validation_fraction, cfg.seed)?;
    let max_label = ts.rows.iter().map(|r| r.lambda).fold(0.0f64, f64::max);
    let lambda_max = 1.5 * max_label;
    let body = match cfg.kind {
        ModelKind::Table => ModelBody::Table(fit_table(ts, &train_idx, cfg)),
        ModelKind::Mlp => ModelBody::Mlp(fit_mlp(ts, &train_idx, cfg)),
    };
    let model = MarginModel {
        version: MODEL_VERSION,
        config_hash: String::new(),
        lambda_max,
        body,
    };
    let report = TrainReport {
        kind: cfg.kind,
        train_mse: mse(ts, &train_idx, |p| model.predict(p)),
        validation_mse: mse(ts, &val_idx, |p| model.predict(p)),
        epochs: if cfg.kind == ModelKind::Mlp { cfg.epochs } else { 0 },
        seed: cfg.seed,
        train_rows: train_idx.len(),
        validation_rows: val_idx.len(),
        validation_batches: {
            let mut b: Vec<usize> = val_idx.iter().map(|&i| ts.rows[i].batch).collect();
            b.dedup();
            b
        },
    };
    Ok((model, report))
}

/// Validation MSE of `model` on the rows of the given batches.
pub fn validation_mse(model: &MarginModel, ts: &TrainingSet, batches: &[usize]) -> f64 {
    let idx: Vec<usize> = (0..ts.rows.len()).filter(|&i| batches.contains(&ts.rows[i].batch)).collect();
    mse(ts, &idx, |p| model.predict(p))
}

fn fit_table(ts: &TrainingSet, idx: &[usize], cfg: &TrainConfig) -> TableModel {
    let max_k = idx.iter().map(|&i| ts.rows[i].features.0[K_INDEX] as usize).max().unwrap_or(0);
    let max_d = idx.iter().map(|&i| ts.rows[i].features.0[DISTANCE_INDEX]).fold(0.0f64, f64::max);
    let n_k = max_k / cfg.k_bucket_width + 1;
    let n_d = (max_d / cfg.distance_bucket_width) as usize + 1;
    let mut model = TableModel {
        k_bucket_width: cfg.k_bucket_width,
        distance_bucket_width: cfg.distance_bucket_width,
        n_k_buckets: n_k,
        n_distance_buckets: n_d,
        values: vec![None; n_k * n_d],
        k_means: vec![None; n_k],
        global_mean: 0.0,
    };
    // Running means are exact for constant labels.
    let mut sums = vec![(0.0, 0usize); n_k * n_d];
    let mut k_sums = vec![(0.0, 0usize); n_k];
    let mut total = (0.0, 0usize);
    let push = |acc: &mut (f64, usize), y: f64| {
        acc.1 += 1;
        acc.0 += (y - acc.0) / acc.1 as f64;
    };
    for &i in idx {
        let r = &ts.rows[i];
        let (k, d) = model.bin(&r.features);
        push(&mut sums[k * n_d + d], r.lambda);
        push(&mut k_sums[k], r.lambda);
        push(&mut total, r.lambda);
    }
    let mean = |(m, c): (f64, usize)| (c > 0).then_some(m);
    model.values = sums.into_iter().map(mean).collect();
    model.k_means = k_sums.into_iter().map(mean).collect();
    model.global_mean = mean(total).unwrap_or(0.0);
    model
}

fn fit_mlp(ts: &TrainingSet, idx: &[usize], cfg: &TrainConfig) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d6c_705f_696e_6974);
    let mut rows: Vec<usize> = idx.to_vec();
    if rows.len() > cfg.max_train_rows {
        rows.shuffle(&mut rng);
        rows.truncate(cfg.max_train_rows);
        rows.sort_unstable();
    }
    let feats: Vec<FeatureVector> = rows.iter().map(|&i| ts.rows[i].features.clone()).collect();
    let labels: Vec<f64> = rows.iter().map(|&i| ts.rows[i].lambda).collect();
    let norm = Normalization::fit(&feats);
    let n = labels.len().max(1) as f64;
    let target_mean = labels.iter().sum::<f64>() / n;
    let target_sd = (labels.iter().map(|y| (y - target_mean).powi(2)).sum::<f64>() / n).sqrt();
    let target_scale = if target_sd > 1e-9 { target_sd } else { 1.0 };

    let h = cfg.hidden;
    let init = |fan_in: usize, len: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let s = (1.0 / fan_in as f64).sqrt();
        (0..len).map(|_| rng.random_range(-s..s)).collect()
    };
    let mut params = Mlp {
        norm,
        w1: init(FEATURE_DIM, h * FEATURE_DIM, &mut rng),
        b1: vec![0.0; h],
        w2: init(h, h * h, &mut rng),
        b2: vec![0.0; h],
        w3: init(h, h, &mut rng),
        b3: 0.0,
        target_mean,
        target_scale,
    };
    let z: Vec<[f64; FEATURE_DIM]> = feats.iter().map(|f| params.norm.apply(f)).collect();
    let y: Vec<f64> = labels.iter().map(|l| (l - target_mean) / target_scale).collect();

    let n_params = h * FEATURE_DIM + h + h * h + h + h + 1;
    let mut adam = Adam::new(n_params, cfg.learning_rate);
    let mut grad = vec![0.0; n_params];
    let mut a1 = vec![0.0; h];
    let mut a2 = vec![0.0; h];
    let mut d2 = vec![0.0; h];
    let mut d1 = vec![0.0; h];
    for _ in 0..cfg.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (g_w1, rest) = grad.split_at_mut(h * FEATURE_DIM);
        let (g_b1, rest) = rest.split_at_mut(h);
        let (g_w2, rest) = rest.split_at_mut(h * h);
        let (g_b2, rest) = rest.split_at_mut(h);
        let (g_w3, g_b3) = rest.split_at_mut(h);
        for (zi, yi) in z.iter().zip(&y) {
            let out = params.forward_normalized(zi, &mut a1, &mut a2);
            let d_out = 2.0 * (out - yi) / n;
            g_b3[0] += d_out;
            for j in 0..h {
                g_w3[j] += d_out * a2[j];
                d2[j] = d_out * params.w3[j] * (1.0 - a2[j] * a2[j]);
            }
            for j in 0..h {
                let row = &mut g_w2[j * h..(j + 1) * h];
                for (g, a) in row.iter_mut().zip(a1.iter()) {
                    *g += d2[j] * a;
                }
                g_b2[j] += d2[j];
            }
            for (l, d) in d1.iter_mut().enumerate() {
                let mut s = 0.0;
                for j in 0..h {
                    s += d2[j] * params.w2[j * h + l];
                }
                *d = s * (1.0 - a1[l] * a1[l]);
            }
            for j in 0..h {
                let row = &mut g_w1[j * FEATURE_DIM..(j + 1) * FEATURE_DIM];
                for (g, x) in row.iter_mut().zip(zi.iter()) {
                    *g += d1[j] * x;
                }
                g_b1[j] += d1[j];
            }
        }
        adam.step(&mut params, &grad);
    }
    params
}

struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self { lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, p: &mut Mlp, g: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        let b3 = std::slice::from_mut(&mut p.b3);
        let slots: [&mut [f64]; 6] = [&mut p.w1, &mut p.b1, &mut p.w2, &mut p.b2, &mut p.w3, b3];
        let mut off = 0;
        for slot in slots {
            for w in slot.iter_mut() {
                let gi = g[off];
                self.m[off] = B1 * self.m[off] + (1.0 - B1) * gi;
                self.v[off] = B2 * self.v[off] + (1.0 - B2) * gi * gi;
                *w -= self.lr * (self.m[off] / c1) / ((self.v[off] / c2).sqrt() + 1e-8);
                off += 1;
            }
        }
    }
}
