//! Independent oracles shared by the integration suites. These deliberately
//! re-derive results through a different route than the library code they
//! check.

use interdyad_core::curation::{ClipRecord, CurationThresholds, Verdict};
use interdyad_core::metrics::SegmentSet;

/// Discretized temporal IoU on a fixed grid (1 ms by default): rasterize
/// both sets onto bins and count bin centers.
pub fn discretized_tiou(
    audio: &SegmentSet<f64>,
    video_shifted: &SegmentSet<f64>,
    grid: f64,
) -> f64 {
    let all: Vec<(f64, f64)> = audio
        .intervals()
        .iter()
        .chain(video_shifted.intervals())
        .copied()
        .collect();
    if all.is_empty() {
        return 1.0;
    }
    let lo = all.iter().map(|i| i.0).fold(f64::INFINITY, f64::min);
    let hi = all.iter().map(|i| i.1).fold(f64::NEG_INFINITY, f64::max);
    let first = (lo / grid).floor() as i64 - 1;
    let last = (hi / grid).ceil() as i64 + 1;
    let inside =
        |set: &SegmentSet<f64>, t: f64| set.intervals().iter().any(|&(s, e)| t >= s && t < e);
    let mut inter = 0u64;
    let mut union = 0u64;
    for bin in first..last {
        let center = (bin as f64 + 0.5) * grid;
        let a = inside(audio, center);
        let b = inside(video_shifted, center);
        if a && b {
            inter += 1;
        }
        if a || b {
            union += 1;
        }
    }
    if union == 0 {
        return 1.0;
    }
    inter as f64 / union as f64
}

/// Straight-line re-statement of the curation rules, no cascade machinery.
pub fn curation_oracle(rec: &ClipRecord, th: &CurationThresholds) -> Verdict {
    let (Some(w), Some(h), Some(fps), Some(dur), Some(jit), Some(flow), Some(clar)) = (
        rec.width,
        rec.height,
        rec.fps,
        rec.duration_s,
        rec.jitter_score,
        rec.mean_optical_flow,
        rec.mean_clarity,
    ) else {
        return Verdict::Reject;
    };
    let stage1 = w.min(h) >= th.min_res
        && fps >= th.min_fps
        && dur >= th.t_min
        && !(jit < th.tau_s)
        && !(flow > th.tau_v)
        && !(clar < th.tau_c);
    if !stage1 {
        return Verdict::Reject;
    }
    let (Some(body), Some(face), Some(ref ty)) = (
        rec.dual_body_frame_ratio,
        rec.dual_face_frame_ratio,
        rec.body_type.clone(),
    ) else {
        return Verdict::Reject;
    };
    let stage2 =
        body >= th.r_body && face >= th.r_face && (ty == "upper-body" || ty == "full-body");
    if !stage2 {
        return Verdict::Reject;
    }
    let Some(motion) = rec.max_motion_velocity else {
        return Verdict::Reject;
    };
    if !(motion > th.tau_m) {
        return Verdict::Reject;
    }
    if dur > th.t_max {
        Verdict::AcceptTruncated
    } else {
        Verdict::Accept
    }
}

/// Corpus generator concentrating samples near every threshold, including
/// exact boundary hits.
pub fn boundary_corpus(count: usize, seed: u64) -> Vec<ClipRecord> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let pick = |candidates: &[f64], lo: f64, hi: f64, rng: &mut rand_chacha::ChaCha8Rng| {
        if rng.gen_bool(0.25) {
            candidates[rng.gen_range(0..candidates.len())]
        } else {
            rng.gen_range(lo..hi)
        }
    };
    (0..count)
        .map(|i| {
            let res = [480u32, 719, 720, 721, 1080, 1920];
            let body_types = ["upper-body", "full-body", "crowd", "half-body"];
            ClipRecord {
                clip_id: format!("clip-{i:04}"),
                width: Some(res[rng.gen_range(0..res.len())]),
                height: Some(res[rng.gen_range(0..res.len())]),
                fps: Some(pick(&[24.0, 25.0, 30.0], 20.0, 60.0, &mut rng)),
                duration_s: Some(pick(&[2.9, 3.0, 10.0, 10.1], 1.0, 15.0, &mut rng)),
                jitter_score: Some(pick(&[3.65, 3.66, 3.67], 3.0, 4.5, &mut rng)),
                mean_optical_flow: Some(pick(&[5.9, 6.0, 6.1], 4.0, 8.0, &mut rng)),
                mean_clarity: Some(pick(&[0.949, 0.95, 0.951], 0.9, 1.0, &mut rng)),
                frame_count: Some(rng.gen_range(50..400)),
                dual_body_frame_ratio: Some(pick(&[0.79, 0.8, 0.81], 0.0, 1.0, &mut rng)),
                dual_face_frame_ratio: Some(pick(&[0.29, 0.3, 0.31], 0.0, 1.0, &mut rng)),
                body_type: Some(body_types[rng.gen_range(0..body_types.len())].to_string()),
                max_motion_velocity: Some(pick(&[0.11, 0.12, 0.13], 0.0, 0.4, &mut rng)),
            }
        })
        .collect()
}
