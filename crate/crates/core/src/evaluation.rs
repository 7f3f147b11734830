//! The evaluation engine: per-judge rubric scoring over eight metrics, mean
//! aggregation, variance-triggered dispute detection, debate-based
//! arbitration, and validity tooling (Pearson correlation, summary grids).
//!
//! For non-disputed metrics the final score is the arithmetic mean of the
//! judge scores; a disputed metric is replaced by the referee's reconciled
//! score, and only that metric.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatMessage, CompletionRequest, Gateway, GatewayError};
use crate::prompts::{self, bindings, PromptError};
use crate::simulation::Trajectory;
use crate::structured::extract_json;

pub const REPORT_SCHEMA: &str = "report/v1";

#[derive(Debug, thiserror::Error)]
pub enum EvaluationError {
    #[error("no judge scores to aggregate")]
    NoScores,
    #[error("need at least 2 judges, got {0}")]
    NotEnoughJudges(usize),
    #[error("dispute threshold must be > 0")]
    InvalidThreshold,
    #[error("judge `{judge}`: {metric} score {value} outside the 1-5 scale")]
    ScoreOutOfRange { judge: String, metric: Metric, value: f64 },
    #[error("judge `{judge}` output unparseable after a retry: {reason}")]
    UnparseableScore { judge: String, reason: String },
    #[error("arbitration for {metric} unparseable after a retry: {reason}")]
    UnparseableArbitration { metric: Metric, reason: String },
    #[error("arbitration for {metric} needs at least 2 critic statements, got {got}")]
    NotEnoughCritics { metric: Metric, got: usize },
    #[error("cannot evaluate an aborted trajectory")]
    AbortedTrajectory,
    #[error("sequences must have equal length >= 2 ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("pearson is undefined for a constant sequence")]
    ConstantSequence,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// The eight role-play metrics, each scored on a 1-5 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    KA,
    BA,
    EE,
    PT,
    IM,
    BC,
    AD,
    IR,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::KA,
        Metric::BA,
        Metric::EE,
        Metric::PT,
        Metric::IM,
        Metric::BC,
        Metric::AD,
        Metric::IR,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::KA => "KA",
            Metric::BA => "BA",
            Metric::EE => "EE",
            Metric::PT => "PT",
            Metric::IM => "IM",
            Metric::BC => "BC",
            Metric::AD => "AD",
            Metric::IR => "IR",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One real score per metric. Judge-emitted vectors hold integers; aggregated
/// vectors hold unrounded means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    #[serde(rename = "KA")]
    pub ka: f64,
    #[serde(rename = "BA")]
    pub ba: f64,
    #[serde(rename = "EE")]
    pub ee: f64,
    #[serde(rename = "PT")]
    pub pt: f64,
    #[serde(rename = "IM")]
    pub im: f64,
    #[serde(rename = "BC")]
    pub bc: f64,
    #[serde(rename = "AD")]
    pub ad: f64,
    #[serde(rename = "IR")]
    pub ir: f64,
}

impl MetricVector {
    pub fn uniform(value: f64) -> Self {
        MetricVector { ka: value, ba: value, ee: value, pt: value, im: value, bc: value, ad: value, ir: value }
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::KA => self.ka,
            Metric::BA => self.ba,
            Metric::EE => self.ee,
            Metric::PT => self.pt,
            Metric::IM => self.im,
            Metric::BC => self.bc,
            Metric::AD => self.ad,
            Metric::IR => self.ir,
        }
    }

    pub fn set(&mut self, metric: Metric, value: f64) {
        match metric {
            Metric::KA => self.ka = value,
            Metric::BA => self.ba = value,
            Metric::EE => self.ee = value,
            Metric::PT => self.pt = value,
            Metric::IM => self.im = value,
            Metric::BC => self.bc = value,
            Metric::AD => self.ad = value,
            Metric::IR => self.ir = value,
        }
    }

    /// Mean of the eight metrics in canonical order, left to right.
    pub fn overall(&self) -> f64 {
        let sum: f64 = Metric::ALL.iter().map(|m| self.get(*m)).sum();
        sum / Metric::ALL.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeScore {
    pub judge_id: String,
    pub vector: MetricVector,
    pub raw_output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticStatement {
    pub judge_id: String,
    pub metric: Metric,
    pub score: i64,
    pub justification: String,
    /// Excerpts validated as substrings of the trajectory's event contents.
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arbitration {
    pub score: i64,
    pub rationale: String,
    pub critics: Vec<CriticStatement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema: String,
    pub trajectory_id: String,
    pub persona_id: String,
    pub protagonist_model_id: String,
    pub repeat: u32,
    pub judge_scores: Vec<JudgeScore>,
    pub disputed_metrics: BTreeSet<Metric>,
    pub arbitrations: BTreeMap<Metric, Arbitration>,
    pub final_scores: MetricVector,
    pub overall: f64,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Roster and knobs for one evaluation pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub judges: Vec<String>,
    pub arbiter: String,
    /// Strict lower bound on per-metric population variance before a
    /// dispute is declared.
    pub dispute_threshold: f64,
    pub temperature: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            judges: vec!["judge-a".to_string(), "judge-b".to_string(), "judge-c".to_string()],
            arbiter: "arbiter".to_string(),
            dispute_threshold: 1.0,
            temperature: 0.0,
        }
    }
}

fn complete(
    gateway: &Gateway,
    model_id: &str,
    temperature: f64,
    tag: String,
    user: String,
) -> Result<String, EvaluationError> {
    let request = CompletionRequest::new(
        model_id,
        vec![
            ChatMessage::system("You are part of a role-play evaluation panel."),
            ChatMessage::user(user),
        ],
        temperature,
        1024,
        tag,
    )?;
    Ok(gateway.complete(&request)?.filtered_text)
}

fn parse_judge_vector(text: &str) -> Result<MetricVector, JudgeParseFailure> {
    let raw: BTreeMap<String, serde_json::Value> =
        extract_json(text).map_err(JudgeParseFailure::Unparseable)?;
    let mut vector = MetricVector::uniform(0.0);
    for metric in Metric::ALL {
        let value = raw
            .get(metric.as_str())
            .ok_or_else(|| JudgeParseFailure::Unparseable(format!("missing key {metric}")))?;
        let value = value
            .as_f64()
            .ok_or_else(|| JudgeParseFailure::Unparseable(format!("{metric} is not a number")))?;
        if value.fract() != 0.0 || !(1.0..=5.0).contains(&value) {
            return Err(JudgeParseFailure::OutOfRange { metric, value });
        }
        vector.set(metric, value);
    }
    Ok(vector)
}

enum JudgeParseFailure {
    Unparseable(String),
    OutOfRange { metric: Metric, value: f64 },
}

/// Score a complete trajectory with one judge. Invalid output earns one
/// re-prompt; a second failure is an error.
pub fn judge_score(
    trajectory: &Trajectory,
    judge_id: &str,
    gateway: &Gateway,
    config: &EvaluationConfig,
    tag_scope: &str,
) -> Result<JudgeScore, EvaluationError> {
    if trajectory.aborted {
        return Err(EvaluationError::AbortedTrajectory);
    }
    let prompt = prompts::render("judge", &bindings([("transcript", trajectory.transcript())]))?;
    let tag = format!("{tag_scope}.judge.{judge_id}");
    let first = complete(gateway, judge_id, config.temperature, tag.clone(), prompt.clone())?;
    match parse_judge_vector(&first) {
        Ok(vector) => Ok(JudgeScore { judge_id: judge_id.to_string(), vector, raw_output: first }),
        Err(_) => {
            let second = complete(gateway, judge_id, config.temperature, tag, prompt)?;
            match parse_judge_vector(&second) {
                Ok(vector) => {
                    Ok(JudgeScore { judge_id: judge_id.to_string(), vector, raw_output: second })
                }
                Err(JudgeParseFailure::OutOfRange { metric, value }) => {
                    Err(EvaluationError::ScoreOutOfRange { judge: judge_id.to_string(), metric, value })
                }
                Err(JudgeParseFailure::Unparseable(reason)) => {
                    Err(EvaluationError::UnparseableScore { judge: judge_id.to_string(), reason })
                }
            }
        }
    }
}

/// Mean aggregation over judges: per-metric arithmetic mean, unrounded,
/// summed in judge order.
pub fn aggregate_mean(scores: &[JudgeScore]) -> Result<MetricVector, EvaluationError> {
    if scores.is_empty() {
        return Err(EvaluationError::NoScores);
    }
    let k = scores.len() as f64;
    let mut out = MetricVector::uniform(0.0);
    for metric in Metric::ALL {
        let sum: f64 = scores.iter().map(|s| s.vector.get(metric)).sum();
        out.set(metric, sum / k);
    }
    Ok(out)
}

/// Population variance (divide by K), computed from the definition.
pub fn population_variance(values: &[f64]) -> f64 {
    let k = values.len() as f64;
    let mean: f64 = values.iter().sum::<f64>() / k;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k
}

/// Metrics whose per-judge score variance strictly exceeds the threshold.
pub fn detect_disagreement(
    scores: &[JudgeScore],
    threshold: f64,
) -> Result<BTreeSet<Metric>, EvaluationError> {
    if scores.len() < 2 {
        return Err(EvaluationError::NotEnoughJudges(scores.len()));
    }
    if !(threshold > 0.0) {
        return Err(EvaluationError::InvalidThreshold);
    }
    let mut disputed = BTreeSet::new();
    for metric in Metric::ALL {
        let values: Vec<f64> = scores.iter().map(|s| s.vector.get(metric)).collect();
        if population_variance(&values) > threshold {
            disputed.insert(metric);
        }
    }
    Ok(disputed)
}

fn evidence_is_grounded(trajectory: &Trajectory, excerpt: &str) -> bool {
    !excerpt.trim().is_empty() && trajectory.events().any(|e| e.content.contains(excerpt))
}

#[derive(Deserialize)]
struct RawCritic {
    score: i64,
    justification: String,
    #[serde(default)]
    evidence: Vec<String>,
}

/// Gather one critic statement per disagreeing judge for a disputed metric.
/// Fabricated excerpts are dropped with a warning; a statement whose every
/// excerpt drops is rejected.
pub fn collect_critics(
    trajectory: &Trajectory,
    metric: Metric,
    judges: &[JudgeScore],
    gateway: &Gateway,
    config: &EvaluationConfig,
    tag_scope: &str,
) -> Result<Vec<CriticStatement>, EvaluationError> {
    let mut statements = Vec::new();
    for judge in judges {
        let prompt = prompts::render(
            "critic",
            &bindings([
                ("transcript", trajectory.transcript()),
                ("metric", metric.to_string()),
                ("score", format!("{}", judge.vector.get(metric) as i64)),
            ]),
        )?;
        let tag = format!("{tag_scope}.critic.{}.{metric}", judge.judge_id);
        let first = complete(gateway, &judge.judge_id, config.temperature, tag.clone(), prompt.clone())?;
        let raw: RawCritic = match extract_json(&first) {
            Ok(r) => r,
            Err(_) => {
                let second = complete(gateway, &judge.judge_id, config.temperature, tag, prompt)?;
                match extract_json(&second) {
                    Ok(r) => r,
                    Err(reason) => {
                        log::warn!(
                            "critic statement from `{}` for {metric} unparseable, skipping: {reason}",
                            judge.judge_id
                        );
                        continue;
                    }
                }
            }
        };
        let mut evidence = Vec::new();
        for excerpt in raw.evidence {
            if evidence_is_grounded(trajectory, &excerpt) {
                evidence.push(excerpt);
            } else {
                log::warn!(
                    "evidence not found in trajectory (judge `{}`, {metric}): {excerpt:?}",
                    judge.judge_id
                );
            }
        }
        if evidence.is_empty() || raw.justification.trim().is_empty() {
            log::warn!(
                "critic statement from `{}` for {metric} rejected: no grounded evidence",
                judge.judge_id
            );
            continue;
        }
        statements.push(CriticStatement {
            judge_id: judge.judge_id.clone(),
            metric,
            score: raw.score,
            justification: raw.justification,
            evidence,
        });
    }
    Ok(statements)
}

#[derive(Deserialize)]
struct RawArbitration {
    score: serde_json::Value,
    rationale: String,
}

/// Referee pass over the critic statements for one disputed metric. The
/// reconciled score replaces the mean for that metric only.
pub fn arbitrate(
    metric: Metric,
    critics: &[CriticStatement],
    referee: &str,
    gateway: &Gateway,
    config: &EvaluationConfig,
    tag_scope: &str,
) -> Result<(i64, String), EvaluationError> {
    if critics.len() < 2 {
        return Err(EvaluationError::NotEnoughCritics { metric, got: critics.len() });
    }
    let critics_text = critics
        .iter()
        .map(|c| {
            format!(
                "- {} rated {} = {}\n  justification: {}\n  evidence: {}",
                c.judge_id,
                c.metric,
                c.score,
                c.justification,
                c.evidence.join(" | "),
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = prompts::render(
        "referee",
        &bindings([("metric", metric.to_string()), ("critics", critics_text)]),
    )?;
    let tag = format!("{tag_scope}.referee.{metric}");

    let parse = |text: &str| -> Result<(i64, String), JudgeParseFailure> {
        let raw: RawArbitration = extract_json(text).map_err(JudgeParseFailure::Unparseable)?;
        let value = raw
            .score
            .as_f64()
            .ok_or_else(|| JudgeParseFailure::Unparseable("score is not a number".to_string()))?;
        if value.fract() != 0.0 || !(1.0..=5.0).contains(&value) {
            return Err(JudgeParseFailure::OutOfRange { metric, value });
        }
        Ok((value as i64, raw.rationale))
    };

    let first = complete(gateway, referee, config.temperature, tag.clone(), prompt.clone())?;
    match parse(&first) {
        Ok(out) => Ok(out),
        Err(_) => {
            let second = complete(gateway, referee, config.temperature, tag, prompt)?;
            match parse(&second) {
                Ok(out) => Ok(out),
                Err(JudgeParseFailure::OutOfRange { metric, value }) => {
                    Err(EvaluationError::ScoreOutOfRange { judge: referee.to_string(), metric, value })
                }
                Err(JudgeParseFailure::Unparseable(reason)) => {
                    Err(EvaluationError::UnparseableArbitration { metric, reason })
                }
            }
        }
    }
}

/// Full evaluation of one trajectory: judge panel, dispute detection,
/// debate arbitration for disputed metrics, final vector and overall.
pub fn evaluate_trajectory(
    trajectory: &Trajectory,
    gateway: &Arc<Gateway>,
    config: &EvaluationConfig,
) -> Result<EvaluationReport, EvaluationError> {
    if trajectory.aborted {
        return Err(EvaluationError::AbortedTrajectory);
    }
    let tag_scope = trajectory.trajectory_id.clone();

    let mut judge_scores = Vec::with_capacity(config.judges.len());
    for judge in &config.judges {
        judge_scores.push(judge_score(trajectory, judge, gateway, config, &tag_scope)?);
    }

    let disputed_metrics = if judge_scores.len() >= 2 {
        detect_disagreement(&judge_scores, config.dispute_threshold)?
    } else {
        BTreeSet::new()
    };

    let mean = aggregate_mean(&judge_scores)?;
    let mut final_scores = mean.clone();
    let mut arbitrations = BTreeMap::new();
    for metric in &disputed_metrics {
        let critics =
            collect_critics(trajectory, *metric, &judge_scores, gateway, config, &tag_scope)?;
        if critics.len() < 2 {
            return Err(EvaluationError::NotEnoughCritics { metric: *metric, got: critics.len() });
        }
        let (score, rationale) =
            arbitrate(*metric, &critics, &config.arbiter, gateway, config, &tag_scope)?;
        final_scores.set(*metric, score as f64);
        arbitrations.insert(*metric, Arbitration { score, rationale, critics });
    }

    let overall = final_scores.overall();
    Ok(EvaluationReport {
        schema: REPORT_SCHEMA.to_string(),
        trajectory_id: trajectory.trajectory_id.clone(),
        persona_id: trajectory.persona_id.clone(),
        protagonist_model_id: trajectory.protagonist_model_id.clone(),
        repeat: trajectory.repeat,
        judge_scores,
        disputed_metrics,
        arbitrations,
        final_scores,
        overall,
    })
}

/// Sample Pearson correlation between two equal-length sequences.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvaluationError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(EvaluationError::LengthMismatch { left: xs.len(), right: ys.len() });
    }
    let n = xs.len() as f64;
    let mean_x: f64 = xs.iter().sum::<f64>() / n;
    let mean_y: f64 = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den_x = 0.0;
    let mut den_y = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        num += dx * dy;
        den_x += dx * dx;
        den_y += dy * dy;
    }
    if den_x == 0.0 || den_y == 0.0 {
        return Err(EvaluationError::ConstantSequence);
    }
    Ok(num / (den_x * den_y).sqrt())
}

/// One row of the batch summary grid: per-metric mean ± std for a model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridRow {
    pub model: String,
    /// metric name → (mean across repeats of per-repeat means, population std).
    pub cells: BTreeMap<String, (f64, f64)>,
    pub overall: (f64, f64),
    pub episodes: usize,
    pub repeats: usize,
    pub arbitrated_metrics: usize,
}

/// Table-style aggregation across repeated runs: per-repeat means over
/// episodes, then mean ± population std across repeats.
pub fn summarize_reports(reports: &[EvaluationReport]) -> Vec<GridRow> {
    let mut by_model: BTreeMap<&str, Vec<&EvaluationReport>> = BTreeMap::new();
    for report in reports {
        by_model.entry(&report.protagonist_model_id).or_default().push(report);
    }

    let mut rows = Vec::new();
    for (model, model_reports) in by_model {
        let mut by_repeat: BTreeMap<u32, Vec<&EvaluationReport>> = BTreeMap::new();
        for report in &model_reports {
            by_repeat.entry(report.repeat).or_default().push(report);
        }

        let mut cells = BTreeMap::new();
        for metric in Metric::ALL {
            let per_repeat: Vec<f64> = by_repeat
                .values()
                .map(|rs| {
                    rs.iter().map(|r| r.final_scores.get(metric)).sum::<f64>() / rs.len() as f64
                })
                .collect();
            cells.insert(metric.to_string(), mean_and_std(&per_repeat));
        }
        let per_repeat_overall: Vec<f64> = by_repeat
            .values()
            .map(|rs| rs.iter().map(|r| r.overall).sum::<f64>() / rs.len() as f64)
            .collect();

        rows.push(GridRow {
            model: model.to_string(),
            cells,
            overall: mean_and_std(&per_repeat_overall),
            episodes: model_reports.len(),
            repeats: by_repeat.len(),
            arbitrated_metrics: model_reports.iter().map(|r| r.arbitrations.len()).sum(),
        });
    }
    rows
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (mean, population_variance(values).sqrt())
}

/// Render the grid as fixed-width text, one model per row, with an
/// arbitration footnote when any metric was arbitrated.
pub fn render_grid(rows: &[GridRow]) -> String {
    if rows.is_empty() {
        return "(no reports)\n".to_string();
    }
    let model_width = rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<model_width$}", "Model");
    for metric in Metric::ALL {
        out.push_str(&format!("  {:>13}", metric.to_string()));
    }
    out.push_str(&format!("  {:>13}\n", "Average"));

    let mut total_arbitrated = 0usize;
    for row in rows {
        out.push_str(&format!("{:<model_width$}", row.model));
        for metric in Metric::ALL {
            let (mean, std) = row.cells[metric.as_str()];
            out.push_str(&format!("  {:>13}", format!("{mean:.3}±{std:.3}")));
        }
        let (mean, std) = row.overall;
        out.push_str(&format!("  {:>13}\n", format!("{mean:.3}±{std:.3}")));
        total_arbitrated += row.arbitrated_metrics;
    }
    if total_arbitrated > 0 {
        out.push_str(&format!("note: {total_arbitrated} disputed metric(s) resolved by arbitration\n"));
    }
    out
}
