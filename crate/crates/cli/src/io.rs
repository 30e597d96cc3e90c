//! On-disk artifacts: CSV tables, JSON documents, and run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crcsf::calibration::{CertificatePair, FeatureVector, LabelInfo, TrainingRow, TrainingSet, FEATURE_DIM};
use crcsf::simulator::{EpisodeOutcome, EpisodeRecord, MetricsSummary};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const TRAINING_SET: &str = "training_set.csv";
pub const LABELS: &str = "labels.csv";
pub const CALIBRATION: &str = "calibration.json";
pub const MANIFEST: &str = "manifest.json";
pub const MARGIN_MODEL: &str = "margin_model.json";
pub const TRAIN_REPORT: &str = "train_report.json";
pub const EPISODES: &str = "episodes.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const CONFIG_COPY: &str = "config.json";

const FEATURE_COLUMNS: [&str; FEATURE_DIM] = [
    "robot_px", "robot_py", "robot_theta", "robot_v", "human_px", "human_py", "human_x2", "human_x3", "distance",
    "b_hat", "timestep",
];

pub fn certificates_file(batch: usize) -> String {
    format!("certificates_batch_{batch}.csv")
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

pub fn training_set_csv(ts: &TrainingSet) -> String {
    let mut s = format!("batch,k,{},lambda\n", FEATURE_COLUMNS.join(","));
    for r in &ts.rows {
        let _ = write!(s, "{},{}", r.batch, r.k);
        for v in r.features.0 {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{}", r.lambda);
    }
    s
}

pub fn parse_training_set(text: &str, origin: &str) -> Result<TrainingSet, CliError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| CliError::Input(format!("{origin}: {e}")))?.clone();
    let expected: Vec<String> = ["batch", "k"]
        .into_iter()
        .chain(FEATURE_COLUMNS)
        .chain(["lambda"])
        .map(String::from)
        .collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(CliError::Input(format!("{origin}: unexpected header")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row_no = i + 2;
        let bad = |msg: String| CliError::Input(format!("{origin} row {row_no}: {msg}"));
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != expected.len() {
            return Err(bad(format!("expected {} fields, got {}", expected.len(), rec.len())));
        }
        let int = |j: usize| rec[j].trim().parse::<usize>().map_err(|e| bad(format!("column {}: {e}", expected[j])));
        let float = |j: usize| {
            let v = rec[j].trim().parse::<f64>().map_err(|e| bad(format!("column {}: {e}", expected[j])))?;
            if v.is_finite() { Ok(v) } else { Err(bad(format!("column {}: not finite", expected[j]))) }
        };
        let mut f = [0.0; FEATURE_DIM];
        for (j, slot) in f.iter_mut().enumerate() {
            *slot = float(j + 2)?;
        }
        let lambda = float(FEATURE_DIM + 2)?;
        if lambda < 0.0 {
            return Err(bad("negative lambda".into()));
        }
        rows.push(TrainingRow { batch: int(0)?, k: int(1)?, features: FeatureVector(f), lambda });
    }
    if rows.is_empty() {
        return Err(CliError::Input(format!("{origin}: no rows")));
    }
    Ok(TrainingSet { rows })
}

pub fn certificates_csv(pairs: &[CertificatePair]) -> String {
    let mut s = String::from("batch,k,b_true,b_pred\n");
    for p in pairs {
        let _ = writeln!(s, "{},{},{},{}", p.batch, p.k, p.b_true, p.b_pred);
    }
    s
}

pub fn labels_csv(labels: &[LabelInfo]) -> String {
    let mut s = String::from("batch,k,n_samples,lambda,attainable\n");
    for l in labels {
        let _ = writeln!(s, "{},{},{},{},{}", l.batch, l.k, l.n_samples, l.lambda, l.attainable);
    }
    s
}

pub fn episodes_csv(outcomes: &[EpisodeOutcome]) -> String {
    let mut s = String::from(
        "scenario,variant,episode,seed,collision,safety_violation,goal_reached,control_effort,control_smoothness,\
         min_distance,infeasible_steps,feasible_filter_steps,unsafe_after_feasible\n",
    );
    for o in outcomes {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            o.scenario,
            o.variant,
            o.episode_index,
            o.seed,
            o.collision as u8,
            o.safety_violation as u8,
            o.goal_reached as u8,
            o.control_effort,
            o.control_smoothness,
            o.min_distance,
            o.infeasible_steps,
            o.feasible_filter_steps,
            o.unsafe_after_feasible
        );
    }
    s
}

pub fn summary_csv(rows: &[MetricsSummary]) -> String {
    let mut s = String::from(
        "scenario,variant,trials,collision_rate,safety_violation_rate,goal_success_rate,mean_control_effort,\
         mean_control_smoothness,unsafe_step_frequency,feasible_filter_steps\n",
    );
    for m in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            m.scenario,
            m.variant,
            m.trials,
            m.collision_rate,
            m.safety_violation_rate,
            m.goal_success_rate,
            m.mean_control_effort,
            m.mean_control_smoothness,
            m.unsafe_step_frequency,
            m.feasible_filter_steps
        );
    }
    s
}

pub fn summary_table(rows: &[MetricsSummary]) -> String {
    let mut s = format!(
        "{:<16} {:<14} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "scenario", "variant", "trials", "coll%", "viol%", "goal%", "effort", "smooth"
    );
    for m in rows {
        let _ = writeln!(
            s,
            "{:<16} {:<14} {:>6} {:>8.1} {:>8.1} {:>8.1} {:>8.3} {:>8.3}",
            m.scenario,
            m.variant,
            m.trials,
            100.0 * m.collision_rate,
            100.0 * m.safety_violation_rate,
            100.0 * m.goal_success_rate,
            m.mean_control_effort,
            m.mean_control_smoothness
        );
    }
    s
}

/// One JSON object per step.
pub fn trajectory_jsonl(rec: &EpisodeRecord) -> String {
    let mut s = String::new();
    for st in &rec.steps {
        s.push_str(&serde_json::to_string(st).expect("step serializes"));
        s.push('\n');
    }
    s
}

/// Seconds since the epoch, honoring `SOURCE_DATE_EPOCH`.
pub fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub tool_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Accumulates one record per command run in an output directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub runs: BTreeMap<String, RunRecord>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Self {
        std::fs::read_to_string(dir.join(MANIFEST))
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok())
            .unwrap_or_default()
    }

    /// Records digests of `inputs` and `outputs` (relative to `dir`) under `command`.
    pub fn record(
        dir: &Path,
        command: &str,
        config_hash: &str,
        started: u64,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> Result<(), CliError> {
        let digest = |files: &[PathBuf]| -> Result<BTreeMap<String, String>, CliError> {
            files
                .iter()
                .map(|p| {
                    let name = p.strip_prefix(dir).unwrap_or(p).display().to_string();
                    Ok((name, sha256_file(p)?))
                })
                .collect()
        };
        let mut m = Self::load(dir);
        m.runs.insert(
            command.into(),
            RunRecord {
                config_hash: config_hash.into(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                started_unix: started,
                finished_unix: timestamp(),
                inputs: digest(inputs)?,
                outputs: digest(outputs)?,
            },
        );
        write_file(&dir.join(MANIFEST), &serde_json::to_string_pretty(&m).expect("manifest serializes"))
    }

    /// Files whose current digest differs from the recorded one.
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        let mut bad = Vec::new();
        for r in self.runs.values() {
            for (name, digest) in r.inputs.iter().chain(&r.outputs) {
                let p = dir.join(name);
                let ok = sha256_file(&p).map(|d| &d == digest).unwrap_or(false);
                if !ok && !bad.contains(name) {
                    bad.push(name.clone());
                }
            }
        }
        bad
    }
}
