//! Cascaded clip curation over precomputed metadata records: heuristic
//! quality filtering, dyadic identification, and dynamic-aware motion
//! filtering. Feature extraction itself (optical flow, clarity, pose) is out
//! of scope; records arrive with the scores already computed.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::BufRead;

/// Precomputed per-clip metadata. Every score is optional so that records
/// with missing fields can be rejected as incomplete instead of failing the
/// whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    #[serde(default)]
    pub width: Option<u32>,
    #[serde(default)]
    pub height: Option<u32>,
    #[serde(default)]
    pub fps: Option<f64>,
    #[serde(default)]
    pub duration_s: Option<f64>,
    #[serde(default)]
    pub jitter_score: Option<f64>,
    #[serde(default)]
    pub mean_optical_flow: Option<f64>,
    #[serde(default)]
    pub mean_clarity: Option<f64>,
    #[serde(default)]
    pub frame_count: Option<u64>,
    #[serde(default)]
    pub dual_body_frame_ratio: Option<f64>,
    #[serde(default)]
    pub dual_face_frame_ratio: Option<f64>,
    #[serde(default)]
    pub body_type: Option<String>,
    #[serde(default)]
    pub max_motion_velocity: Option<f64>,
}

/// Filter thresholds. Inequalities are strict exactly where the rules say
/// so: jitter rejects below `tau_s`, flow rejects above `tau_v`, clarity
/// rejects below `tau_c`, motion accepts strictly above `tau_m`, and the
/// ratio checks accept at or above their minimums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurationThresholds {
    pub tau_s: f64,
    pub tau_v: f64,
    pub tau_c: f64,
    pub r_body: f64,
    pub r_face: f64,
    pub tau_m: f64,
    pub min_res: u32,
    pub min_fps: f64,
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for CurationThresholds {
    fn default() -> Self {
        CurationThresholds {
            tau_s: 3.66,
            tau_v: 6.0,
            tau_c: 0.95,
            r_body: 0.80,
            r_face: 0.30,
            tau_m: 0.12,
            min_res: 720,
            min_fps: 25.0,
            t_min: 3.0,
            t_max: 10.0,
        }
    }
}

impl CurationThresholds {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.tau_s,
            self.tau_v,
            self.tau_c,
            self.r_body,
            self.r_face,
            self.tau_m,
            self.min_fps,
            self.t_min,
            self.t_max,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || self.min_res == 0 {
            return Err(Error::Config("curation thresholds must be positive".into()));
        }
        if self.t_min > self.t_max {
            return Err(Error::Config("t_min exceeds t_max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
    AcceptTruncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Heuristic,
    Dyadic,
    Motion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationDecision {
    pub clip_id: String,
    pub verdict: Verdict,
    /// The stage that rejected the clip, or the last stage for accepts.
    pub stage: Stage,
    pub failed_rules: Vec<String>,
    /// Duration after truncation, absent when the record never reached the
    /// duration rules.
    pub effective_duration: Option<f64>,
}

impl CurationDecision {
    fn accept(clip_id: &str, stage: Stage, truncated: bool, effective: Option<f64>) -> Self {
        CurationDecision {
            clip_id: clip_id.to_string(),
            verdict: if truncated {
                Verdict::AcceptTruncated
            } else {
                Verdict::Accept
            },
            stage,
            failed_rules: Vec::new(),
            effective_duration: effective,
        }
    }

    fn reject(clip_id: &str, stage: Stage, rules: Vec<String>) -> Self {
        CurationDecision {
            clip_id: clip_id.to_string(),
            verdict: Verdict::Reject,
            stage,
            failed_rules: rules,
            effective_duration: None,
        }
    }

    pub fn accepted(&self) -> bool {
        self.verdict != Verdict::Reject
    }
}

fn required<T: Copy>(field: Option<T>, name: &str, missing: &mut Vec<String>) -> Option<T> {
    if field.is_none() {
        missing.push(format!("incomplete:{name}"));
    }
    field
}

/// Stage 1: resolution, frame rate, duration window, camera stability,
/// camera motion, clarity. Clips longer than `t_max` pass truncated to the
/// initial `t_max` window.
pub fn heuristic_filter(rec: &ClipRecord, th: &CurationThresholds) -> CurationDecision {
    let mut missing = Vec::new();
    let width = required(rec.width, "width", &mut missing);
    let height = required(rec.height, "height", &mut missing);
    let fps = required(rec.fps, "fps", &mut missing);
    let duration = required(rec.duration_s, "duration_s", &mut missing);
    let jitter = required(rec.jitter_score, "jitter_score", &mut missing);
    let flow = required(rec.mean_optical_flow, "mean_optical_flow", &mut missing);
    let clarity = required(rec.mean_clarity, "mean_clarity", &mut missing);
    if !missing.is_empty() {
        return CurationDecision::reject(&rec.clip_id, Stage::Heuristic, missing);
    }
    let (width, height) = (width.unwrap(), height.unwrap());
    let fps = fps.unwrap();
    let duration = duration.unwrap();

    let mut failed = Vec::new();
    if width.min(height) < th.min_res {
        failed.push("resolution".to_string());
    }
    if fps < th.min_fps {
        failed.push("frame-rate".to_string());
    }
    if duration < th.t_min {
        failed.push("duration-min".to_string());
    }
    if jitter.unwrap() < th.tau_s {
        failed.push("camera-stability".to_string());
    }
    if flow.unwrap() > th.tau_v {
        failed.push("camera-motion".to_string());
    }
    if clarity.unwrap() < th.tau_c {
        failed.push("clarity".to_string());
    }
    if !failed.is_empty() {
        return CurationDecision::reject(&rec.clip_id, Stage::Heuristic, failed);
    }
    let truncated = duration > th.t_max;
    let effective = if truncated { th.t_max } else { duration };
    CurationDecision::accept(&rec.clip_id, Stage::Heuristic, truncated, Some(effective))
}

const DYADIC_BODY_TYPES: [&str; 2] = ["upper-body", "full-body"];

/// Stage 2: dual-body and dual-face co-occurrence ratios plus the body-type
/// constraint.
pub fn dyadic_identify(rec: &ClipRecord, th: &CurationThresholds) -> CurationDecision {
    let mut missing = Vec::new();
    let body = required(
        rec.dual_body_frame_ratio,
        "dual_body_frame_ratio",
        &mut missing,
    );
    let face = required(
        rec.dual_face_frame_ratio,
        "dual_face_frame_ratio",
        &mut missing,
    );
    if rec.body_type.is_none() {
        missing.push("incomplete:body_type".to_string());
    }
    if !missing.is_empty() {
        return CurationDecision::reject(&rec.clip_id, Stage::Dyadic, missing);
    }
    let mut failed = Vec::new();
    if body.unwrap() < th.r_body {
        failed.push("dual-body-ratio".to_string());
    }
    if face.unwrap() < th.r_face {
        failed.push("dual-face-ratio".to_string());
    }
    let body_type = rec.body_type.as_deref().unwrap();
    if !DYADIC_BODY_TYPES.contains(&body_type) {
        failed.push("body-type".to_string());
    }
    if failed.is_empty() {
        CurationDecision::accept(&rec.clip_id, Stage::Dyadic, false, None)
    } else {
        CurationDecision::reject(&rec.clip_id, Stage::Dyadic, failed)
    }
}

/// Stage 3: keep only clips whose peak hand/head velocity strictly exceeds
/// `tau_m`, dropping static talking heads.
pub fn motion_filter(rec: &ClipRecord, th: &CurationThresholds) -> CurationDecision {
    let mut missing = Vec::new();
    let motion = required(rec.max_motion_velocity, "max_motion_velocity", &mut missing);
    if !missing.is_empty() {
        return CurationDecision::reject(&rec.clip_id, Stage::Motion, missing);
    }
    if motion.unwrap() > th.tau_m {
        CurationDecision::accept(&rec.clip_id, Stage::Motion, false, None)
    } else {
        CurationDecision::reject(&rec.clip_id, Stage::Motion, vec!["motion".to_string()])
    }
}

/// Run all three stages in cascade order on one record.
pub fn curate_record(rec: &ClipRecord, th: &CurationThresholds) -> CurationDecision {
    let d1 = heuristic_filter(rec, th);
    if !d1.accepted() {
        return d1;
    }
    let d2 = dyadic_identify(rec, th);
    if !d2.accepted() {
        return d2;
    }
    let d3 = motion_filter(rec, th);
    if !d3.accepted() {
        return d3;
    }
    CurationDecision {
        clip_id: rec.clip_id.clone(),
        verdict: d1.verdict,
        stage: Stage::Motion,
        failed_rules: Vec::new(),
        effective_duration: d1.effective_duration,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationSummary {
    pub input: usize,
    pub malformed: usize,
    pub pass_stage1: usize,
    pub pass_stage2: usize,
    pub pass_stage3: usize,
}

#[derive(Debug, Clone)]
pub struct CurationReport {
    pub decisions: Vec<CurationDecision>,
    pub summary: CurationSummary,
    /// `(line_number, error)` for lines that did not parse.
    pub diagnostics: Vec<(usize, String)>,
}

/// Parse one JSONL line into a record.
pub fn parse_record_line(line: &str) -> std::result::Result<ClipRecord, String> {
    serde_json::from_str::<ClipRecord>(line).map_err(|e| e.to_string())
}

/// Assemble a report from already-computed decisions. Counts are plain sums,
/// so they do not depend on decision order.
pub fn build_report(
    decisions: Vec<CurationDecision>,
    parsed: usize,
    diagnostics: Vec<(usize, String)>,
) -> CurationReport {
    let mut summary = CurationSummary {
        input: parsed,
        malformed: diagnostics.len(),
        ..Default::default()
    };
    for d in &decisions {
        let reached = match (d.verdict, d.stage) {
            (Verdict::Reject, Stage::Heuristic) => 0,
            (Verdict::Reject, Stage::Dyadic) => 1,
            (Verdict::Reject, Stage::Motion) => 2,
            _ => 3,
        };
        if reached >= 1 {
            summary.pass_stage1 += 1;
        }
        if reached >= 2 {
            summary.pass_stage2 += 1;
        }
        if reached >= 3 {
            summary.pass_stage3 += 1;
        }
    }
    CurationReport {
        decisions,
        summary,
        diagnostics,
    }
}

/// Curate pre-parsed records (order preserved; counts are order-free sums).
pub fn run_pipeline_records(
    records: &[ClipRecord],
    th: &CurationThresholds,
) -> Result<CurationReport> {
    th.validate()?;
    let decisions: Vec<CurationDecision> = records.iter().map(|r| curate_record(r, th)).collect();
    let parsed = records.len();
    Ok(build_report(decisions, parsed, Vec::new()))
}

/// Curate a JSONL stream. Malformed lines are skipped, counted, and carried
/// in the diagnostics; blank lines are ignored.
pub fn run_pipeline(reader: impl BufRead, th: &CurationThresholds) -> Result<CurationReport> {
    th.validate()?;
    let mut decisions = Vec::new();
    let mut diagnostics = Vec::new();
    let mut parsed = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record_line(&line) {
            Ok(rec) => {
                parsed += 1;
                decisions.push(curate_record(&rec, th));
            }
            Err(e) => diagnostics.push((idx + 1, e)),
        }
    }
    Ok(build_report(decisions, parsed, diagnostics))
}
