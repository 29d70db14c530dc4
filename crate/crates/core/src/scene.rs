//! Synthetic dyadic scenes: two tracked persons on a shared canvas with
//! per-frame landmarks, voice activity, lip centers and latent-grid region
//! masks, plus the desk-scale motion encoder stand-in.
//!
//! Landmark layout convention: the first four indices are eye-region points,
//! the next four are mouth-region points, the remainder outline the head.
//! The scene JSON records this layout explicitly.

use crate::error::{Error, Result};
use crate::latent::Dims;
use crate::num::{fl, Scalar};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

/// Default width of a motion latent vector.
pub const DEFAULT_MOTION_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canvas {
    pub w: u32,
    pub h: u32,
}

/// Which landmark indices belong to the eye and mouth regions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkLayout {
    pub eyes: Vec<usize>,
    pub mouth: Vec<usize>,
}

impl LandmarkLayout {
    pub fn standard() -> Self {
        LandmarkLayout {
            eyes: vec![0, 1, 2, 3],
            mouth: vec![4, 5, 6, 7],
        }
    }

    fn validate(&self, landmark_count: usize) -> Result<()> {
        if self.eyes.len() < 4 || self.mouth.len() < 4 {
            return Err(Error::Invalid(
                "landmark layout needs at least 4 eye and 4 mouth indices".into(),
            ));
        }
        for &i in self.eyes.iter().chain(&self.mouth) {
            if i >= landmark_count {
                return Err(Error::Invalid(format!(
                    "layout index {i} out of range for {landmark_count} landmarks"
                )));
            }
        }
        if self.eyes.iter().any(|i| self.mouth.contains(i)) {
            return Err(Error::Invalid("eye and mouth index sets overlap".into()));
        }
        Ok(())
    }
}

/// One tracked person.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonTrack<F> {
    /// `(T, L, 2)` landmark coordinates in canvas pixels.
    pub landmarks: Array3<F>,
    /// `(T, 2)` lip centers in canvas pixels.
    pub lip_centers: Array2<F>,
    /// Per-frame voice activity.
    pub vad: Vec<bool>,
    /// Axis-aligned region `[x0, y0, x1, y1]` in canvas pixels.
    pub region_box: [F; 4],
    /// `(H, W)` occupancy on the latent grid.
    pub region_mask: Array2<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DyadicScene<F> {
    pub fps: u32,
    pub frames: usize,
    pub canvas: Canvas,
    pub latent_dims: Dims,
    pub layout: LandmarkLayout,
    pub persons: [PersonTrack<F>; 2],
}

/// Identity-agnostic per-frame motion vectors for one person.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionLatentSeq<F> {
    pub person_id: u8,
    /// `(T, D_m)`.
    pub vectors: Array2<F>,
    pub lips_masked: bool,
}

#[derive(Debug, Clone)]
pub struct SceneConfig<F> {
    pub frames: usize,
    pub fps: u32,
    pub canvas: Canvas,
    pub latent_channels: usize,
    pub latent_h: usize,
    pub latent_w: usize,
    pub landmark_count: usize,
    /// One `[x0, y0, x1, y1]` box per person, canvas pixels, non-overlapping.
    pub region_boxes: [[F; 4]; 2],
    /// Head-motion amplitude per person, pixels.
    pub motion_amplitude: [F; 2],
    /// Average speech-turn length in frames.
    pub mean_turn_frames: usize,
}

impl<F: Scalar> Default for SceneConfig<F> {
    fn default() -> Self {
        SceneConfig {
            frames: 50,
            fps: 25,
            canvas: Canvas { w: 640, h: 320 },
            latent_channels: 4,
            latent_h: 20,
            latent_w: 40,
            landmark_count: 12,
            region_boxes: [
                [fl(32.0), fl(48.0), fl(288.0), fl(272.0)],
                [fl(352.0), fl(48.0), fl(608.0), fl(272.0)],
            ],
            motion_amplitude: [fl(6.0), fl(6.0)],
            mean_turn_frames: 30,
        }
    }
}

fn boxes_overlap<F: Scalar>(a: &[F; 4], b: &[F; 4]) -> bool {
    a[0] < b[2] && b[0] < a[2] && a[1] < b[3] && b[1] < a[3]
}

/// Mark latent cells whose centers fall inside the canvas-pixel box.
pub fn region_mask_from_box<F: Scalar>(
    region_box: &[F; 4],
    canvas: Canvas,
    latent_h: usize,
    latent_w: usize,
) -> Array2<bool> {
    let cell_w = canvas.w as f64 / latent_w as f64;
    let cell_h = canvas.h as f64 / latent_h as f64;
    let (x0, y0) = (
        region_box[0].to_f64().unwrap(),
        region_box[1].to_f64().unwrap(),
    );
    let (x1, y1) = (
        region_box[2].to_f64().unwrap(),
        region_box[3].to_f64().unwrap(),
    );
    Array2::from_shape_fn((latent_h, latent_w), |(i, j)| {
        let cx = (j as f64 + 0.5) * cell_w;
        let cy = (i as f64 + 0.5) * cell_h;
        cx >= x0 && cx < x1 && cy >= y0 && cy < y1
    })
}

impl<F: Scalar> DyadicScene<F> {
    /// Person track by 1-based id.
    pub fn person(&self, person_id: usize) -> Result<&PersonTrack<F>> {
        match person_id {
            1 => Ok(&self.persons[0]),
            2 => Ok(&self.persons[1]),
            other => Err(Error::Invalid(format!(
                "person_id must be 1 or 2, got {other}"
            ))),
        }
    }

    /// Lip center of a person at frame `t`, in latent-grid coordinates.
    pub fn lip_center_latent(&self, person_id: usize, t: usize) -> Result<(F, F)> {
        let p = self.person(person_id)?;
        if t >= self.frames {
            return Err(Error::Invalid(format!(
                "frame {t} out of range T={}",
                self.frames
            )));
        }
        let sx = fl::<F>(self.latent_dims.w as f64 / self.canvas.w as f64);
        let sy = fl::<F>(self.latent_dims.h as f64 / self.canvas.h as f64);
        Ok((p.lip_centers[(t, 0)] * sx, p.lip_centers[(t, 1)] * sy))
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Invalid("scene must have at least one frame".into()));
        }
        if self.latent_dims.t != self.frames {
            return Err(Error::Invalid(format!(
                "latent T={} must equal scene frames {}",
                self.latent_dims.t, self.frames
            )));
        }
        let l = self.persons[0].landmarks.dim().1;
        if l < 10 {
            return Err(Error::Invalid(format!(
                "need at least 10 landmarks, got {l}"
            )));
        }
        self.layout.validate(l)?;
        let (w, h) = (fl::<F>(self.canvas.w as f64), fl::<F>(self.canvas.h as f64));
        for (pi, p) in self.persons.iter().enumerate() {
            let (t_dim, l_dim, two) = p.landmarks.dim();
            if t_dim != self.frames || l_dim != l || two != 2 {
                return Err(Error::Shape(format!(
                    "person {} landmark array has wrong shape",
                    pi + 1
                )));
            }
            if p.lip_centers.dim() != (self.frames, 2) || p.vad.len() != self.frames {
                return Err(Error::Shape(format!(
                    "person {} track lengths disagree",
                    pi + 1
                )));
            }
            if p.region_mask.dim() != (self.latent_dims.h, self.latent_dims.w) {
                return Err(Error::Shape(format!(
                    "person {} mask is not latent-sized",
                    pi + 1
                )));
            }
            for v in p.landmarks.iter() {
                if !v.is_finite() {
                    return Err(Error::Invalid(format!(
                        "person {} has non-finite landmark",
                        pi + 1
                    )));
                }
            }
            for t in 0..self.frames {
                for li in 0..l {
                    let x = p.landmarks[(t, li, 0)];
                    let y = p.landmarks[(t, li, 1)];
                    if x < F::zero() || x >= w || y < F::zero() || y >= h {
                        return Err(Error::Invalid(format!(
                            "person {} landmark {li} outside canvas at frame {t}",
                            pi + 1
                        )));
                    }
                }
            }
        }
        // Masks must never intersect.
        for (m1, m2) in self.persons[0]
            .region_mask
            .iter()
            .zip(self.persons[1].region_mask.iter())
        {
            if *m1 && *m2 {
                return Err(Error::Invalid("person region masks intersect".into()));
            }
        }
        // Each lip center must land in its own mask footprint.
        for (pi, p) in self.persons.iter().enumerate() {
            for t in 0..self.frames {
                let (lx, ly) = self.lip_center_latent(pi + 1, t)?;
                let (j, i) = (lx.to_f64().unwrap().floor(), ly.to_f64().unwrap().floor());
                let inside = i >= 0.0
                    && j >= 0.0
                    && (i as usize) < self.latent_dims.h
                    && (j as usize) < self.latent_dims.w
                    && p.region_mask[(i as usize, j as usize)];
                if !inside {
                    return Err(Error::Invalid(format!(
                        "person {} lip center leaves its region at frame {t}",
                        pi + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Deterministically generate a two-person scene from a seed.
///
/// Heads follow smooth sinusoidal trajectories, eyes carry extra small
/// oscillation, mouths open only while that person's VAD is active, and the
/// two VAD tracks alternate speech turns with occasional gaps and rare short
/// overlaps.
pub fn generate_scene<F: Scalar>(seed: u64, config: &SceneConfig<F>) -> Result<DyadicScene<F>> {
    if config.frames < 2 {
        return Err(Error::Config("scene needs at least 2 frames".into()));
    }
    if config.landmark_count < 12 {
        return Err(Error::Config(
            "scene generator needs at least 12 landmarks".into(),
        ));
    }
    if boxes_overlap(&config.region_boxes[0], &config.region_boxes[1]) {
        return Err(Error::Config("person region boxes overlap".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_total = config.frames;
    let vad = generate_vad(&mut rng, t_total, config.mean_turn_frames);

    let layout = LandmarkLayout::standard();
    let mut persons = Vec::with_capacity(2);
    for pi in 0..2 {
        let b = &config.region_boxes[pi];
        let (x0, y0, x1, y1) = (
            b[0].to_f64().unwrap(),
            b[1].to_f64().unwrap(),
            b[2].to_f64().unwrap(),
            b[3].to_f64().unwrap(),
        );
        let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
        let scale = 0.25 * (x1 - x0).min(y1 - y0);
        let amp = config.motion_amplitude[pi].to_f64().unwrap();

        let local = base_face(config.landmark_count, scale);
        let freqs: Vec<f64> = (0..5).map(|_| rng.gen_range(1.0..3.0)).collect();
        let phases: Vec<f64> = (0..5)
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();

        let mut landmarks = Array3::<F>::zeros((t_total, config.landmark_count, 2));
        let mut lips = Array2::<F>::zeros((t_total, 2));
        for t in 0..t_total {
            let phase =
                |k: usize| std::f64::consts::TAU * freqs[k] * t as f64 / t_total as f64 + phases[k];
            let dx = amp * phase(0).sin();
            let dy = 0.6 * amp * phase(1).sin();
            let rot = 0.08 * phase(2).sin();
            let eye_dy = 0.15 * amp * phase(3).sin();
            let mouth_open = if vad[pi][t] {
                0.12 * scale
                    * (std::f64::consts::PI * 8.0 * t as f64 / t_total as f64)
                        .sin()
                        .abs()
            } else {
                0.0
            };
            let (sr, cr) = (rot.sin(), rot.cos());
            let mut lip_acc = (0.0, 0.0);
            for li in 0..config.landmark_count {
                let (lx, ly) = local[li];
                let mut x = cx + cr * lx - sr * ly + dx;
                let mut y = cy + sr * lx + cr * ly + dy;
                if layout.eyes.contains(&li) {
                    y += eye_dy;
                }
                if layout.mouth.contains(&li) {
                    y += mouth_open;
                }
                x = x.clamp(0.0, config.canvas.w as f64 - 1.0);
                y = y.clamp(0.0, config.canvas.h as f64 - 1.0);
                landmarks[(t, li, 0)] = fl(x);
                landmarks[(t, li, 1)] = fl(y);
                if layout.mouth.contains(&li) {
                    lip_acc.0 += x;
                    lip_acc.1 += y;
                }
            }
            let m = layout.mouth.len() as f64;
            lips[(t, 0)] = fl(lip_acc.0 / m);
            lips[(t, 1)] = fl(lip_acc.1 / m);
        }

        persons.push(PersonTrack {
            landmarks,
            lip_centers: lips,
            vad: vad[pi].clone(),
            region_box: *b,
            region_mask: region_mask_from_box(b, config.canvas, config.latent_h, config.latent_w),
        });
    }

    let scene = DyadicScene {
        fps: config.fps,
        frames: t_total,
        canvas: config.canvas,
        latent_dims: Dims::new(
            config.latent_channels,
            t_total,
            config.latent_h,
            config.latent_w,
        ),
        layout,
        persons: [persons.remove(0), persons.remove(0)],
    };
    scene.validate()?;
    Ok(scene)
}

fn base_face(count: usize, scale: f64) -> Vec<(f64, f64)> {
    let mut pts = vec![
        (-0.5 * scale, -0.5 * scale),
        (-0.2 * scale, -0.5 * scale),
        (0.2 * scale, -0.5 * scale),
        (0.5 * scale, -0.5 * scale),
        (-0.3 * scale, 0.5 * scale),
        (-0.1 * scale, 0.6 * scale),
        (0.1 * scale, 0.6 * scale),
        (0.3 * scale, 0.5 * scale),
    ];
    let outline = count - 8;
    for k in 0..outline {
        let a = std::f64::consts::TAU * k as f64 / outline as f64;
        pts.push((scale * a.cos(), scale * a.sin()));
    }
    pts
}

fn generate_vad(rng: &mut ChaCha8Rng, frames: usize, mean_turn: usize) -> [Vec<bool>; 2] {
    let mean_turn = mean_turn.max(2);
    let mut vad = [vec![false; frames], vec![false; frames]];
    let mut speaker = usize::from(rng.gen_bool(0.5));
    let mut t = 0usize;
    while t < frames {
        let turn = rng.gen_range(mean_turn / 2..=mean_turn * 3 / 2).max(1);
        let end = (t + turn).min(frames);
        for f in t..end {
            vad[speaker][f] = true;
        }
        // Rare short overlap where the next speaker starts early.
        if rng.gen_bool(0.15) && end < frames {
            let overlap = rng.gen_range(1..=2usize);
            for f in end.saturating_sub(overlap)..end {
                vad[1 - speaker][f] = true;
            }
        }
        t = end;
        // Occasional silent gap between turns.
        if rng.gen_bool(0.3) {
            t += rng.gen_range(1..=3usize);
        }
        speaker = 1 - speaker;
    }
    vad
}

/// Centroid of the selected landmark rows of one frame.
pub fn mouth_centroid<F: Scalar>(frame: &Array2<F>, mouth: &[usize]) -> Result<(F, F)> {
    if mouth.is_empty() {
        return Err(Error::Invalid("mouth index set is empty".into()));
    }
    let l = frame.dim().0;
    let mut sx = F::zero();
    let mut sy = F::zero();
    for &i in mouth {
        if i >= l {
            return Err(Error::Invalid(format!(
                "mouth index {i} out of range for {l} landmarks"
            )));
        }
        sx = sx + frame[(i, 0)];
        sy = sy + frame[(i, 1)];
    }
    let n = fl::<F>(mouth.len() as f64);
    Ok((sx / n, sy / n))
}

/// Replace the mouth rows of one `L x 2` frame with a frozen neutral point.
///
/// The neutral point is the mouth centroid of the sequence's first frame so
/// that every masked frame carries the identical, motion-free mouth.
pub fn apply_lips_mask<F: Scalar>(
    frame: &Array2<F>,
    mouth: &[usize],
    neutral: (F, F),
) -> Result<Array2<F>> {
    if mouth.is_empty() {
        return Err(Error::Invalid("mouth index set is empty".into()));
    }
    let l = frame.dim().0;
    let mut out = frame.clone();
    for &i in mouth {
        if i >= l {
            return Err(Error::Invalid(format!(
                "mouth index {i} out of range for {l} landmarks"
            )));
        }
        out[(i, 0)] = neutral.0;
        out[(i, 1)] = neutral.1;
    }
    Ok(out)
}

/// Apply [`apply_lips_mask`] to every frame, frozen at the first frame's
/// mouth centroid.
pub fn mask_lip_sequence<F: Scalar>(seq: &Array3<F>, mouth: &[usize]) -> Result<Array3<F>> {
    let (t_total, l, _) = seq.dim();
    if t_total == 0 {
        return Err(Error::Invalid("empty landmark sequence".into()));
    }
    let first = seq.index_axis(ndarray::Axis(0), 0).to_owned();
    let neutral = mouth_centroid(&first, mouth)?;
    let mut out = seq.clone();
    for t in 0..t_total {
        let frame = seq.index_axis(ndarray::Axis(0), t).to_owned();
        let masked = apply_lips_mask(&frame, mouth, neutral)?;
        for i in 0..l {
            out[(t, i, 0)] = masked[(i, 0)];
            out[(t, i, 1)] = masked[(i, 1)];
        }
    }
    Ok(out)
}

/// Desk-scale stand-in for a pretrained motion encoder.
///
/// Per frame the vector is: non-mouth centroid offset from frame 0 (2), the
/// least-squares rotation angle of the non-mouth shape against frame 0 (1),
/// then eye-landmark displacements from frame 0 (2 per eye landmark), zero
/// padded to `dim`. Every component is relative, so a global translation of
/// all landmarks cancels exactly. Not equivalent to any pretrained encoder;
/// interface-compatible only.
pub fn extract_motion_latent<F: Scalar>(
    scene: &DyadicScene<F>,
    person_id: usize,
    lips_masked: bool,
    dim: usize,
) -> Result<MotionLatentSeq<F>> {
    let person = scene.person(person_id)?;
    let layout = &scene.layout;
    let needed = 3 + 2 * layout.eyes.len();
    if dim < needed {
        return Err(Error::Config(format!(
            "motion dim {dim} too small, need at least {needed}"
        )));
    }
    let landmarks = if lips_masked {
        mask_lip_sequence(&person.landmarks, &layout.mouth)?
    } else {
        person.landmarks.clone()
    };
    let (t_total, l, _) = landmarks.dim();
    let non_mouth: Vec<usize> = (0..l).filter(|i| !layout.mouth.contains(i)).collect();

    let centroid = |t: usize| -> (f64, f64) {
        let mut sx = 0.0;
        let mut sy = 0.0;
        for &i in &non_mouth {
            sx += landmarks[(t, i, 0)].to_f64().unwrap();
            sy += landmarks[(t, i, 1)].to_f64().unwrap();
        }
        (sx / non_mouth.len() as f64, sy / non_mouth.len() as f64)
    };

    let c0 = centroid(0);
    let centered0: Vec<(f64, f64)> = non_mouth
        .iter()
        .map(|&i| {
            (
                landmarks[(0, i, 0)].to_f64().unwrap() - c0.0,
                landmarks[(0, i, 1)].to_f64().unwrap() - c0.1,
            )
        })
        .collect();

    let mut vectors = Array2::<F>::zeros((t_total, dim));
    for t in 0..t_total {
        let ct = centroid(t);
        // Least-squares rotation of the frame-0 shape onto frame t.
        let mut cross = 0.0;
        let mut dot = 0.0;
        for (k, &i) in non_mouth.iter().enumerate() {
            let dx = landmarks[(t, i, 0)].to_f64().unwrap() - ct.0;
            let dy = landmarks[(t, i, 1)].to_f64().unwrap() - ct.1;
            let (rx, ry) = centered0[k];
            cross += rx * dy - ry * dx;
            dot += rx * dx + ry * dy;
        }
        let angle = cross.atan2(dot);
        vectors[(t, 0)] = fl(ct.0 - c0.0);
        vectors[(t, 1)] = fl(ct.1 - c0.1);
        vectors[(t, 2)] = fl(angle);
        for (k, &i) in layout.eyes.iter().enumerate() {
            vectors[(t, 3 + 2 * k)] = landmarks[(t, i, 0)] - landmarks[(0, i, 0)];
            vectors[(t, 3 + 2 * k + 1)] = landmarks[(t, i, 1)] - landmarks[(0, i, 1)];
        }
    }
    Ok(MotionLatentSeq {
        person_id: person_id as u8,
        vectors,
        lips_masked,
    })
}

// ---------------------------------------------------------------------------
// Scene JSON file format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SceneFile {
    fps: u32,
    frames: usize,
    canvas: Canvas,
    latent_dims: LatentDimsFile,
    landmark_layout: LandmarkLayout,
    persons: Vec<PersonFile>,
}

#[derive(Serialize, Deserialize)]
struct LatentDimsFile {
    c: usize,
    t: usize,
    h: usize,
    w: usize,
}

#[derive(Serialize, Deserialize)]
struct PersonFile {
    landmarks: Vec<Vec<[f64; 2]>>,
    lip_center: Vec<[f64; 2]>,
    vad: Vec<bool>,
    region_box: [f64; 4],
}

pub fn save_scene<F: Scalar>(path: impl AsRef<Path>, scene: &DyadicScene<F>) -> Result<()> {
    let persons = scene
        .persons
        .iter()
        .map(|p| {
            let (t_total, l, _) = p.landmarks.dim();
            PersonFile {
                landmarks: (0..t_total)
                    .map(|t| {
                        (0..l)
                            .map(|i| {
                                [
                                    p.landmarks[(t, i, 0)].to_f64().unwrap(),
                                    p.landmarks[(t, i, 1)].to_f64().unwrap(),
                                ]
                            })
                            .collect()
                    })
                    .collect(),
                lip_center: (0..t_total)
                    .map(|t| {
                        [
                            p.lip_centers[(t, 0)].to_f64().unwrap(),
                            p.lip_centers[(t, 1)].to_f64().unwrap(),
                        ]
                    })
                    .collect(),
                vad: p.vad.clone(),
                region_box: [
                    p.region_box[0].to_f64().unwrap(),
                    p.region_box[1].to_f64().unwrap(),
                    p.region_box[2].to_f64().unwrap(),
                    p.region_box[3].to_f64().unwrap(),
                ],
            }
        })
        .collect();
    let file = SceneFile {
        fps: scene.fps,
        frames: scene.frames,
        canvas: scene.canvas,
        latent_dims: LatentDimsFile {
            c: scene.latent_dims.c,
            t: scene.latent_dims.t,
            h: scene.latent_dims.h,
            w: scene.latent_dims.w,
        },
        landmark_layout: scene.layout.clone(),
        persons,
    };
    let out = BufWriter::new(File::create(path.as_ref())?);
    serde_json::to_writer_pretty(out, &file)
        .map_err(|e| Error::format(path.as_ref(), e.to_string()))
}

pub fn load_scene<F: Scalar>(path: impl AsRef<Path>) -> Result<DyadicScene<F>> {
    let path = path.as_ref();
    let input = BufReader::new(File::open(path)?);
    let file: SceneFile =
        serde_json::from_reader(input).map_err(|e| Error::format(path, e.to_string()))?;
    if file.persons.len() != 2 {
        return Err(Error::format(
            path,
            format!("need exactly 2 persons, got {}", file.persons.len()),
        ));
    }
    let canvas = file.canvas;
    let latent_dims = Dims::new(
        file.latent_dims.c,
        file.latent_dims.t,
        file.latent_dims.h,
        file.latent_dims.w,
    );
    let mut persons = Vec::with_capacity(2);
    for p in &file.persons {
        let t_total = p.landmarks.len();
        let l = p.landmarks.first().map_or(0, Vec::len);
        let mut landmarks = Array3::<F>::zeros((t_total, l, 2));
        for (t, frame) in p.landmarks.iter().enumerate() {
            if frame.len() != l {
                return Err(Error::format(path, "ragged landmark frames"));
            }
            for (i, xy) in frame.iter().enumerate() {
                landmarks[(t, i, 0)] = fl(xy[0]);
                landmarks[(t, i, 1)] = fl(xy[1]);
            }
        }
        let mut lips = Array2::<F>::zeros((p.lip_center.len(), 2));
        for (t, xy) in p.lip_center.iter().enumerate() {
            lips[(t, 0)] = fl(xy[0]);
            lips[(t, 1)] = fl(xy[1]);
        }
        let region_box = [
            fl(p.region_box[0]),
            fl(p.region_box[1]),
            fl(p.region_box[2]),
            fl(p.region_box[3]),
        ];
        persons.push(PersonTrack {
            landmarks,
            lip_centers: lips,
            vad: p.vad.clone(),
            region_box,
            region_mask: region_mask_from_box(&region_box, canvas, latent_dims.h, latent_dims.w),
        });
    }
    let scene = DyadicScene {
        fps: file.fps,
        frames: file.frames,
        canvas,
        latent_dims,
        layout: file.landmark_layout,
        persons: [persons.remove(0), persons.remove(0)],
    };
    scene
        .validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_scene(seed: u64) -> DyadicScene<f64> {
        generate_scene(seed, &SceneConfig::default()).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let a = default_scene(7);
        let b = default_scene(7);
        assert_eq!(a, b);
        assert_eq!(a.frames, 50);
    }

    #[test]
    fn different_seeds_differ() {
        let a = default_scene(7);
        let b = default_scene(8);
        assert_ne!(a.persons[0].landmarks, b.persons[0].landmarks);
    }

    #[test]
    fn region_masks_are_disjoint() {
        for seed in 0..8 {
            let s = default_scene(seed);
            for (m1, m2) in s.persons[0]
                .region_mask
                .iter()
                .zip(s.persons[1].region_mask.iter())
            {
                assert!(!(*m1 && *m2));
            }
        }
    }

    #[test]
    fn vad_is_mostly_single_speaker() {
        let s = default_scene(3);
        let both = (0..s.frames)
            .filter(|&t| s.persons[0].vad[t] && s.persons[1].vad[t])
            .count();
        assert!((both as f64) < 0.2 * s.frames as f64);
    }

    #[test]
    fn overlapping_boxes_rejected() {
        let mut cfg = SceneConfig::<f64>::default();
        cfg.region_boxes[1] = [200.0, 48.0, 500.0, 272.0];
        assert!(matches!(generate_scene(1, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn lips_mask_keeps_non_mouth_rows() {
        let s = default_scene(11);
        let mouth = s.layout.mouth.clone();
        let frame = s.persons[0]
            .landmarks
            .index_axis(ndarray::Axis(0), 5)
            .to_owned();
        let neutral = mouth_centroid(
            &s.persons[0]
                .landmarks
                .index_axis(ndarray::Axis(0), 0)
                .to_owned(),
            &mouth,
        )
        .unwrap();
        let masked = apply_lips_mask(&frame, &mouth, neutral).unwrap();
        for i in 0..frame.dim().0 {
            if !mouth.contains(&i) {
                assert_eq!(masked[(i, 0)], frame[(i, 0)]);
                assert_eq!(masked[(i, 1)], frame[(i, 1)]);
            } else {
                assert_eq!(masked[(i, 0)], neutral.0);
            }
        }
    }

    #[test]
    fn lips_mask_is_fixed_point_on_masked_frames() {
        let s = default_scene(11);
        let mouth = &s.layout.mouth;
        let masked = mask_lip_sequence(&s.persons[0].landmarks, mouth).unwrap();
        let again = mask_lip_sequence(&masked, mouth).unwrap();
        assert_eq!(masked, again);
    }

    #[test]
    fn frames_differing_only_in_mouth_mask_identically() {
        let s = default_scene(2);
        let mouth = s.layout.mouth.clone();
        let f0 = s.persons[0]
            .landmarks
            .index_axis(ndarray::Axis(0), 0)
            .to_owned();
        let mut f1 = f0.clone();
        for &i in &mouth {
            f1[(i, 0)] += 3.0;
            f1[(i, 1)] -= 2.0;
        }
        let neutral = mouth_centroid(&f0, &mouth).unwrap();
        let a = apply_lips_mask(&f0, &mouth, neutral).unwrap();
        let b = apply_lips_mask(&f1, &mouth, neutral).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_mouth_set_is_an_error() {
        let s = default_scene(2);
        let frame = s.persons[0]
            .landmarks
            .index_axis(ndarray::Axis(0), 0)
            .to_owned();
        assert!(apply_lips_mask(&frame, &[], (0.0, 0.0)).is_err());
    }

    fn static_scene() -> DyadicScene<f64> {
        let mut s = default_scene(5);
        for p in s.persons.iter_mut() {
            let first = p.landmarks.index_axis(ndarray::Axis(0), 0).to_owned();
            let lip0 = [p.lip_centers[(0, 0)], p.lip_centers[(0, 1)]];
            for t in 0..s.frames {
                for i in 0..first.dim().0 {
                    p.landmarks[(t, i, 0)] = first[(i, 0)];
                    p.landmarks[(t, i, 1)] = first[(i, 1)];
                }
                p.lip_centers[(t, 0)] = lip0[0];
                p.lip_centers[(t, 1)] = lip0[1];
            }
        }
        s
    }

    #[test]
    fn static_scene_yields_zero_motion() {
        let s = static_scene();
        let m = extract_motion_latent(&s, 1, false, DEFAULT_MOTION_DIM).unwrap();
        for v in m.vectors.iter() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn motion_latent_is_translation_invariant() {
        let s = default_scene(9);
        let mut shifted = s.clone();
        for p in shifted.persons.iter_mut() {
            p.landmarks.mapv_inplace(|v| v + 10.0);
            p.lip_centers.mapv_inplace(|v| v + 10.0);
        }
        let a = extract_motion_latent(&s, 2, true, DEFAULT_MOTION_DIM).unwrap();
        let b = extract_motion_latent(&shifted, 2, true, DEFAULT_MOTION_DIM).unwrap();
        // All components are relative, so the shift cancels up to the
        // rounding of the +10 additions themselves.
        for (x, y) in a.vectors.iter().zip(b.vectors.iter()) {
            assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn mouth_only_motion_is_invisible_when_masked() {
        let s = static_scene();
        let mut moving = s.clone();
        for t in 0..moving.frames {
            for &i in moving.layout.mouth.clone().iter() {
                moving.persons[0].landmarks[(t, i, 1)] += (t as f64).sin().abs() * 3.0;
            }
        }
        let base = extract_motion_latent(&s, 1, true, DEFAULT_MOTION_DIM).unwrap();
        let masked = extract_motion_latent(&moving, 1, true, DEFAULT_MOTION_DIM).unwrap();
        assert_eq!(base.vectors, masked.vectors);
    }

    #[test]
    fn bad_person_id_is_rejected() {
        let s = default_scene(1);
        assert!(extract_motion_latent(&s, 3, false, DEFAULT_MOTION_DIM).is_err());
    }

    #[test]
    fn scene_json_round_trips() {
        let s = default_scene(21);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        save_scene(&path, &s).unwrap();
        let back: DyadicScene<f64> = load_scene(&path).unwrap();
        assert_eq!(s, back);
    }
}
