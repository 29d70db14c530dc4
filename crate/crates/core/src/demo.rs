//! End-to-end pipeline: synthetic scene, motion latents, oracle-field
//! chunked sampling, guidance fields, and the interactivity report, all
//! written to one output directory. Everything is a pure function of the
//! seed, so reruns reproduce byte-identical artifacts.

use crate::align::{build_meta_queries, MetaQuerySequence};
use crate::error::Result;
use crate::flow::{multi_clip_generate, oracle_velocity, Anchors, MultiClipOutput, SamplerConfig};
use crate::guidance::{
    role_timeline, spatial_cfg_scale, FrameSpatial, GuidanceConfig, RoleTimeline,
};
use crate::latent::{matrix_to_grid, write_idlt, Dims, LatentGrid};
use crate::metrics::{
    aggregate_rows, di_sali, di_sync, save_segments, write_aggregate, write_report, LandmarkTrack,
    MetricsRow, SegmentRecord, SegmentSet,
};
use crate::num::fl;
use crate::scene::{
    extract_motion_latent, generate_scene, save_scene, DyadicScene, MotionLatentSeq, SceneConfig,
};
use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct DemoConfig {
    pub seed: u64,
    pub frames: usize,
    pub sampler: SamplerConfig,
    pub guidance: GuidanceConfig<f64>,
    pub motion_dim: usize,
    /// Social-latency compensation for the report, seconds.
    pub delta: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            seed: 0,
            frames: 153,
            sampler: SamplerConfig::default(),
            guidance: GuidanceConfig::default(),
            motion_dim: crate::scene::DEFAULT_MOTION_DIM,
            delta: crate::metrics::DEFAULT_SYNC_DELTA,
        }
    }
}

#[derive(Debug)]
pub struct DemoOutcome {
    pub scene: DyadicScene<f64>,
    pub motion: Vec<MotionLatentSeq<f64>>,
    pub sample: MultiClipOutput<f64>,
    pub timeline: RoleTimeline<f64>,
    pub rows: Vec<MetricsRow>,
    pub written: Vec<PathBuf>,
}

/// Smooth deterministic target latent standing in for decoded data.
fn oracle_target(dims: Dims) -> LatentGrid<f64> {
    LatentGrid::from_fn(dims, |c, t, h, w| {
        (0.3 * c as f64 + 0.05 * t as f64 + 0.2 * h as f64 - 0.15 * w as f64).sin()
    })
}

fn gaussian_noise(dims: Dims, seed: u64) -> LatentGrid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    LatentGrid::from_fn(dims, |_, _, _, _| normal.sample(&mut rng))
}

fn eye_track(scene: &DyadicScene<f64>, person: usize) -> LandmarkTrack<f64> {
    let p = &scene.persons[person];
    let eyes = &scene.layout.eyes;
    let track = Array3::from_shape_fn((scene.frames, eyes.len(), 2), |(t, e, c)| {
        p.landmarks[(t, eyes[e], c)]
    });
    LandmarkTrack::new(track, scene.fps).expect("valid track")
}

/// Frames where any speaker is active, as merged second intervals.
fn speech_segments(timeline: &RoleTimeline<f64>, fps: u32) -> Result<SegmentSet<f64>> {
    let active: Vec<bool> = timeline
        .speaker
        .iter()
        .map(|s| s.person_index().is_some())
        .collect();
    runs_to_segments(&active, fps)
}

/// Listener-reaction proxy: frames where the current listener's mean eye
/// displacement since the previous frame exceeds the median displacement.
fn reaction_segments(
    scene: &DyadicScene<f64>,
    timeline: &RoleTimeline<f64>,
) -> Result<SegmentSet<f64>> {
    let tracks = [eye_track(scene, 0), eye_track(scene, 1)];
    let mut speed = vec![None::<f64>; scene.frames];
    for t in 1..scene.frames {
        let Some(speaker) = timeline.speaker[t].person_index() else {
            continue;
        };
        let listener = 1 - speaker;
        let track = &tracks[listener];
        let e = track.eyes.dim().1;
        let mut acc = 0.0;
        for i in 0..e {
            let dx = track.eyes[(t, i, 0)] - track.eyes[(t - 1, i, 0)];
            let dy = track.eyes[(t, i, 1)] - track.eyes[(t - 1, i, 1)];
            acc += (dx * dx + dy * dy).sqrt();
        }
        speed[t] = Some(acc / e as f64);
    }
    let mut observed: Vec<f64> = speed.iter().flatten().copied().collect();
    if observed.is_empty() {
        return Ok(SegmentSet::empty());
    }
    observed.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = observed[observed.len() / 2];
    let active: Vec<bool> = speed
        .iter()
        .map(|s| s.is_some_and(|v| v > median))
        .collect();
    runs_to_segments(&active, scene.fps)
}

/// Stack the per-frame guidance fields of a whole scene into a
/// `(1, T, H, W)` grid.
pub fn guidance_fields(
    scene: &DyadicScene<f64>,
    timeline: &RoleTimeline<f64>,
    cfg: &GuidanceConfig<f64>,
) -> Result<LatentGrid<f64>> {
    let (h, w) = (scene.latent_dims.h, scene.latent_dims.w);
    let mut fields = LatentGrid::<f64>::zeros(Dims::new(1, scene.frames, h, w));
    for t in 0..scene.frames {
        let spatial = FrameSpatial {
            lip_latent: [
                Some(scene.lip_center_latent(1, t)?),
                Some(scene.lip_center_latent(2, t)?),
            ],
            region_masks: [&scene.persons[0].region_mask, &scene.persons[1].region_mask],
        };
        let field = spatial_cfg_scale(timeline, t, &spatial, cfg)?;
        for i in 0..h {
            for j in 0..w {
                fields.set(0, t, i, j, field[(i, j)]);
            }
        }
    }
    Ok(fields)
}

/// Write the `frame,speaker_id,alpha` CSV for a timeline.
pub fn write_roles_csv(path: impl AsRef<Path>, timeline: &RoleTimeline<f64>) -> Result<()> {
    let mut roles = BufWriter::new(File::create(path.as_ref())?);
    writeln!(roles, "frame,speaker_id,alpha")?;
    for t in 0..timeline.len() {
        writeln!(
            roles,
            "{t},{},{}",
            timeline.speaker[t].label(),
            timeline.alpha[t]
        )?;
    }
    roles.flush()?;
    Ok(())
}

fn runs_to_segments(active: &[bool], fps: u32) -> Result<SegmentSet<f64>> {
    let mut raw = Vec::new();
    let mut start = None::<usize>;
    for (t, &on) in active.iter().enumerate() {
        match (on, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                raw.push((s as f64 / fps as f64, t as f64 / fps as f64));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        raw.push((s as f64 / fps as f64, active.len() as f64 / fps as f64));
    }
    SegmentSet::new(&raw)
}

/// Run the whole pipeline and write every artifact into `out_dir`.
pub fn run_demo(cfg: &DemoConfig, out_dir: impl AsRef<Path>) -> Result<DemoOutcome> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    // Scene.
    let scene_cfg = SceneConfig {
        frames: cfg.frames,
        ..SceneConfig::default()
    };
    let scene = generate_scene::<f64>(cfg.seed, &scene_cfg)?;
    let scene_path = out_dir.join("scene.json");
    save_scene(&scene_path, &scene)?;
    written.push(scene_path);

    // Motion latents, lips masked.
    let motion: Vec<MotionLatentSeq<f64>> = [1usize, 2]
        .iter()
        .map(|&pid| extract_motion_latent(&scene, pid, true, cfg.motion_dim))
        .collect::<Result<_>>()?;
    for m in &motion {
        let path = out_dir.join(format!("motion_{}.idlt", m.person_id));
        write_idlt(&path, &matrix_to_grid(&m.vectors)?)?;
        written.push(path);
    }

    // Meta queries sized one-per-frame, recorded as an artifact.
    let queries: MetaQuerySequence<f64> =
        build_meta_queries(scene.frames, crate::align::DEFAULT_HIDDEN_DIM, cfg.seed)?;
    let mq_path = out_dir.join("meta_queries.idlt");
    write_idlt(&mq_path, &matrix_to_grid(&queries.queries)?)?;
    written.push(mq_path);

    // Oracle-field multi-clip sampling.
    let dims = scene.latent_dims;
    let z0 = oracle_target(dims);
    let z1 = gaussian_noise(dims, cfg.seed.wrapping_add(1));
    let reference = z0.frames(0..1)?;
    let anchors = Anchors {
        reference: Some(&reference),
        motion: &motion,
        init: &z1,
    };
    let sample = multi_clip_generate(
        oracle_velocity(&z0, &z1),
        cfg.frames,
        &cfg.sampler,
        &anchors,
    )?;
    let sample_path = out_dir.join("sample.idlt");
    write_idlt(&sample_path, &sample.latent)?;
    written.push(sample_path);

    // Role timeline and guidance fields.
    let timeline = role_timeline(&scene.persons[0].vad, &scene.persons[1].vad, &cfg.guidance)?;
    let fields = guidance_fields(&scene, &timeline, &cfg.guidance)?;
    let guidance_path = out_dir.join("guidance.idlt");
    write_idlt(&guidance_path, &fields)?;
    written.push(guidance_path);

    let roles_path = out_dir.join("roles.csv");
    write_roles_csv(&roles_path, &timeline)?;
    written.push(roles_path);

    // Interactivity metrics.
    let audio = speech_segments(&timeline, scene.fps)?;
    let video = reaction_segments(&scene, &timeline)?;
    let record = SegmentRecord {
        clip_id: format!("demo-{}", cfg.seed),
        audio_segments: audio.intervals().iter().map(|&(s, e)| [s, e]).collect(),
        video_segments: video.intervals().iter().map(|&(s, e)| [s, e]).collect(),
    };
    let segments_path = out_dir.join("segments.json");
    save_segments(&segments_path, std::slice::from_ref(&record))?;
    written.push(segments_path);

    let sync = di_sync(&audio, &video, fl::<f64>(cfg.delta));
    let sali = di_sali(&eye_track(&scene, 0), &eye_track(&scene, 1))?;
    let rows = vec![MetricsRow {
        clip_id: record.clip_id.clone(),
        di_sync: sync,
        di_sali: sali,
    }];
    let report_path = out_dir.join("report.csv");
    write_report(&report_path, &rows)?;
    written.push(report_path);
    let agg_path = out_dir.join("report_aggregate.json");
    write_aggregate(&agg_path, &aggregate_rows(&rows))?;
    written.push(agg_path);

    Ok(DemoOutcome {
        scene,
        motion,
        sample,
        timeline,
        rows,
        written,
    })
}
