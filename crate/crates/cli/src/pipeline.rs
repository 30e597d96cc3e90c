//! Subcommand implementations shared by the binary and the tests.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crcsf::barrier::{eta, LipschitzBundle};
use crcsf::calibration::{fixed_lambda, run_calibration};
use crcsf::human_policy::CROWD_PRESETS;
use crcsf::margin_model::{train, MarginModel, TrainReport};
use crcsf::simulator::{outcome, run_episodes, summarize, EpisodeOutcome, MetricsSummary, PolicyVariant, ScenarioSpec};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ReproConfig};
use crate::error::CliError;
use crate::io::*;

/// Calibration results needed downstream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub config_hash: String,
    pub bundle: LipschitzBundle<f64>,
    pub eta: f64,
    pub epsilon: f64,
    pub loss_bound: f64,
    pub fixed_lambda: f64,
    pub total_samples: usize,
    pub clamped: usize,
    pub labels: usize,
    pub unattainable_labels: usize,
    pub batches: usize,
}

pub fn estimate_bundle(cfg: &ExperimentConfig) -> Result<LipschitzBundle<f64>, CliError> {
    cfg.lipschitz.bundle(&cfg.barrier)
}

pub fn calibrate(cfg: &ExperimentConfig, out: &Path) -> Result<CalibrationSummary, CliError> {
    let started = timestamp();
    let bundle = estimate_bundle(cfg)?;
    let sim = cfg.sim_config(&bundle);
    let cal_cfg = cfg.calibration_config()?;
    let res = run_calibration(&cal_cfg, &sim)?;
    let fixed = fixed_lambda(&res.archive, &res.crc)?;

    let mut outputs = Vec::new();
    let mut put = |name: String, text: String| -> Result<(), CliError> {
        let p = out.join(name);
        write_file(&p, &text)?;
        outputs.push(p);
        Ok(())
    };
    put(CONFIG_COPY.into(), cfg.to_json())?;
    put(TRAINING_SET.into(), training_set_csv(&res.training_set))?;
    put(LABELS.into(), labels_csv(&res.labels))?;
    for (b, batch) in res.archive.iter().enumerate() {
        put(certificates_file(b), certificates_csv(batch))?;
    }
    let summary = CalibrationSummary {
        config_hash: cfg.hash(),
        bundle,
        eta: eta(&bundle, cfg.dynamics.dt),
        epsilon: sim.epsilon,
        loss_bound: res.crc.loss_bound,
        fixed_lambda: fixed,
        total_samples: res.archive.iter().map(Vec::len).sum(),
        clamped: res.clamped,
        labels: res.labels.len(),
        unattainable_labels: res.labels.iter().filter(|l| !l.attainable).count(),
        batches: res.archive.len(),
    };
    put(CALIBRATION.into(), serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    RunManifest::record(out, "calibrate", &cfg.hash(), started, &[], &outputs)?;
    Ok(summary)
}

pub fn load_calibration(out: &Path) -> Result<CalibrationSummary, CliError> {
    let p = out.join(CALIBRATION);
    serde_json::from_str(&read_file(&p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
}

pub fn train_margin(cfg: &ExperimentConfig, out: &Path) -> Result<(MarginModel, TrainReport), CliError> {
    let started = timestamp();
    let ts_path = out.join(TRAINING_SET);
    if !ts_path.exists() {
        return Err(CliError::Input(format!("missing training set {}", ts_path.display())));
    }
    let ts = parse_training_set(&read_file(&ts_path)?, &ts_path.display().to_string())?;
    let (mut model, report) = train(&ts, &cfg.margin_model)?;
    model.config_hash = cfg.hash();
    let model_path = out.join(MARGIN_MODEL);
    let report_path = out.join(TRAIN_REPORT);
    write_file(&model_path, &model.to_json()?)?;
    write_file(&report_path, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    RunManifest::record(out, "train_margin", &cfg.hash(), started, &[ts_path], &[model_path, report_path])?;
    Ok((model, report))
}

pub fn load_model(out: &Path) -> Result<MarginModel, CliError> {
    let p = out.join(MARGIN_MODEL);
    if !p.exists() {
        return Err(CliError::Input(
            crcsf::Error::MissingMarginModel(format!("online_crc_sf (no {})", p.display())).to_string(),
        ));
    }
    Ok(MarginModel::from_json(&read_file(&p)?)?)
}

#[derive(Clone, Debug, Default)]
pub struct EvaluateOptions {
    pub dump_trajectories: bool,
}

#[derive(Clone, Debug)]
pub struct EvaluationResult {
    /// Per scenario and variant; crowd preset families add a mean row.
    pub summaries: Vec<MetricsSummary>,
    pub outcomes: Vec<EpisodeOutcome>,
}

fn scenarios_of(spec: &ScenarioSpec) -> Vec<ScenarioSpec> {
    match spec {
        ScenarioSpec::CrowdPresets(c) => CROWD_PRESETS
            .iter()
            .map(|p| ScenarioSpec::CrowdPreset { name: p.0.into(), crowd: c.clone() })
            .collect(),
        s => vec![s.clone()],
    }
}

fn mean_summary(scenario: &str, rows: &[&MetricsSummary]) -> MetricsSummary {
    let n = rows.len().max(1) as f64;
    let avg = |f: fn(&MetricsSummary) -> f64| rows.iter().map(|m| f(m)).sum::<f64>() / n;
    let feasible: usize = rows.iter().map(|m| m.feasible_filter_steps).sum();
    let unsafe_steps: f64 = rows.iter().map(|m| m.unsafe_step_frequency * m.feasible_filter_steps as f64).sum();
    MetricsSummary {
        scenario: scenario.into(),
        variant: rows.first().map(|m| m.variant.clone()).unwrap_or_default(),
        trials: rows.iter().map(|m| m.trials).sum(),
        collision_rate: avg(|m| m.collision_rate),
        safety_violation_rate: avg(|m| m.safety_violation_rate),
        goal_success_rate: avg(|m| m.goal_success_rate),
        mean_control_effort: avg(|m| m.mean_control_effort),
        mean_control_smoothness: avg(|m| m.mean_control_smoothness),
        unsafe_step_frequency: if feasible > 0 { unsafe_steps / feasible as f64 } else { 0.0 },
        feasible_filter_steps: feasible,
    }
}

pub fn build_variant(name: &str, out: &Path) -> Result<PolicyVariant, CliError> {
    Ok(match name {
        "cbf_qp" => PolicyVariant::CbfQp,
        "rcbf_qp" => PolicyVariant::RcbfQp,
        "fixed_crc_sf" => PolicyVariant::FixedCrcSf(load_calibration(out)?.fixed_lambda),
        "online_crc_sf" => PolicyVariant::OnlineCrcSf(Arc::new(load_model(out)?)),
        other => return Err(CliError::Config(format!("unknown variant `{other}`"))),
    })
}

pub fn evaluate(cfg: &ExperimentConfig, out: &Path, opts: &EvaluateOptions) -> Result<EvaluationResult, CliError> {
    let started = timestamp();
    let variants: Vec<PolicyVariant> =
        cfg.evaluation.variants.iter().map(|v| build_variant(v, out)).collect::<Result<_, _>>()?;
    let bundle = match load_calibration(out) {
        Ok(c) => c.bundle,
        Err(_) => estimate_bundle(cfg)?,
    };
    let base = cfg.sim_config(&bundle);
    let spec = cfg.scenario.spec()?;
    let family = scenarios_of(&spec);
    let mut summaries = Vec::new();
    let mut outcomes = Vec::new();
    let mut outputs: Vec<PathBuf> = Vec::new();
    for variant in &variants {
        let mut sim = base.clone();
        if matches!(variant, PolicyVariant::CbfQp) {
            sim.sample_count = cfg.evaluation.cbf_sample_count.unwrap_or(sim.sample_count);
        }
        let mut rows = Vec::new();
        for sc in &family {
            let recs = run_episodes(sc, variant, &sim, cfg.evaluation.n_trials, cfg.evaluation.base_seed)?;
            let outs: Vec<EpisodeOutcome> =
                recs.iter().map(|r| outcome(r, sim.spec.safety_radius, sim.robot.goal_radius)).collect();
            if opts.dump_trajectories {
                for r in &recs {
                    let p = out
                        .join("trajectories")
                        .join(sc.name())
                        .join(variant.name())
                        .join(format!("trajectory_{}.jsonl", r.seed));
                    write_file(&p, &trajectory_jsonl(r))?;
                }
            }
            rows.push(summarize(&sc.name(), variant.name(), &outs));
            outcomes.extend(outs);
        }
        if family.len() > 1 {
            let refs: Vec<&MetricsSummary> = rows.iter().collect();
            let mean = mean_summary(&spec.name(), &refs);
            rows.push(mean);
        }
        summaries.extend(rows);
    }
    let mut put = |name: &str, text: String| -> Result<(), CliError> {
        let p = out.join(name);
        write_file(&p, &text)?;
        outputs.push(p);
        Ok(())
    };
    put(EPISODES, episodes_csv(&outcomes))?;
    put(SUMMARY_CSV, summary_csv(&summaries))?;
    put(SUMMARY_TXT, summary_table(&summaries))?;
    let mut inputs = Vec::new();
    for f in [CALIBRATION, MARGIN_MODEL] {
        if out.join(f).exists() {
            inputs.push(out.join(f));
        }
    }
    RunManifest::record(out, "evaluate", &cfg.hash(), started, &inputs, &outputs)?;
    Ok(EvaluationResult { summaries, outcomes })
}

pub fn default_repro() -> ReproConfig {
    ReproConfig {
        groups: vec![ExperimentConfig::crowd_default(), ExperimentConfig::head_on_default()],
    }
}

/// Report with one block per scenario group, three rows per block.
pub fn repro_report(groups: &[(String, Vec<MetricsSummary>)]) -> String {
    let mut s = String::from("| Scenario | Method | Trials | Coll. (%) | Safety Viol. (%) | Goal (%) | Control Effort | Control Smooth. |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for (label, rows) in groups {
        for m in rows {
            let method = match m.variant.as_str() {
                "cbf_qp" => "CBF-QP",
                "rcbf_qp" => "RCBF-QP",
                "fixed_crc_sf" => "Fixed CRC-SF",
                "online_crc_sf" => "Online CRC-SF",
                v => v,
            };
            s.push_str(&format!(
                "| {label} | {method} | {} | {:.1} | {:.1} | {:.1} | {:.3} | {:.3} |\n",
                m.trials / scenario_count(m),
                100.0 * m.collision_rate,
                100.0 * m.safety_violation_rate,
                100.0 * m.goal_success_rate,
                m.mean_control_effort,
                m.mean_control_smoothness
            ));
        }
    }
    s
}

fn scenario_count(m: &MetricsSummary) -> usize {
    if m.scenario == "crowd_presets" { CROWD_PRESETS.len() } else { 1 }
}

pub fn repro_csv(groups: &[(String, Vec<MetricsSummary>)]) -> String {
    let rows: Vec<MetricsSummary> = groups.iter().flat_map(|(_, r)| r.iter().cloned()).collect();
    summary_csv(&rows)
}

/// calibrate, train-margin and evaluate for every group, then a combined report.
pub fn repro_paper(repro: &ReproConfig, out: &Path) -> Result<Vec<(String, Vec<MetricsSummary>)>, CliError> {
    let mut groups = Vec::new();
    for cfg in &repro.groups {
        let dir = out.join(&cfg.scenario.name);
        log::info!("calibrating {}", cfg.scenario.name);
        calibrate(cfg, &dir)?;
        log::info!("training margin model for {}", cfg.scenario.name);
        train_margin(cfg, &dir)?;
        log::info!("evaluating {}", cfg.scenario.name);
        let res = evaluate(cfg, &dir, &EvaluateOptions::default())?;
        let label = if cfg.scenario.name == "head_on" { "Single-agent" } else { "Multi-agent" };
        let top: Vec<MetricsSummary> =
            res.summaries.into_iter().filter(|m| m.scenario == cfg.scenario.spec().map(|s| s.name()).unwrap_or_default()).collect();
        groups.push((label.to_string(), top));
    }
    write_file(&out.join("report.md"), &repro_report(&groups))?;
    write_file(&out.join("report.csv"), &repro_csv(&groups))?;
    Ok(groups)
}
