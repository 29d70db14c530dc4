//! Dyadic interactivity metrics: canonical interval sets, latency-shifted
//! temporal IoU, and eye-landmark co-motion saliency.

use crate::error::{Error, Result};
use crate::num::{fl, Scalar};
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

/// A canonical set of half-open `[start, end)` intervals in seconds: sorted,
/// pairwise disjoint, touching intervals merged.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet<F> {
    intervals: Vec<(F, F)>,
}

impl<F: Scalar> SegmentSet<F> {
    pub fn new(raw: &[(F, F)]) -> Result<Self> {
        for &(s, e) in raw {
            if !(s.is_finite() && e.is_finite()) {
                return Err(Error::Invalid("segment bounds must be finite".into()));
            }
            if s >= e {
                return Err(Error::Invalid(format!(
                    "segment [{s}, {e}) is empty or reversed"
                )));
            }
        }
        let mut sorted: Vec<(F, F)> = raw.to_vec();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut intervals: Vec<(F, F)> = Vec::with_capacity(sorted.len());
        for (s, e) in sorted {
            match intervals.last_mut() {
                Some(last) if s <= last.1 => {
                    if e > last.1 {
                        last.1 = e;
                    }
                }
                _ => intervals.push((s, e)),
            }
        }
        Ok(SegmentSet { intervals })
    }

    pub fn empty() -> Self {
        SegmentSet {
            intervals: Vec::new(),
        }
    }

    pub fn intervals(&self) -> &[(F, F)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn total_len(&self) -> F {
        self.intervals
            .iter()
            .fold(F::zero(), |acc, &(s, e)| acc + (e - s))
    }

    /// Translate every interval by `-delta` (positive `delta` pulls segments
    /// backward in time) and re-canonicalize. Negative times are fine.
    pub fn shift(&self, delta: F) -> Self {
        let moved: Vec<(F, F)> = self
            .intervals
            .iter()
            .map(|&(s, e)| (s - delta, e - delta))
            .collect();
        // Translation preserves order and disjointness.
        SegmentSet { intervals: moved }
    }

    /// Intersection by a two-pointer sweep over the sorted interval lists.
    pub fn intersection(&self, other: &Self) -> Self {
        let mut out = Vec::new();
        let (mut i, mut j) = (0usize, 0usize);
        while i < self.intervals.len() && j < other.intervals.len() {
            let (a_s, a_e) = self.intervals[i];
            let (b_s, b_e) = other.intervals[j];
            let s = a_s.max(b_s);
            let e = a_e.min(b_e);
            if s < e {
                out.push((s, e));
            }
            if a_e <= b_e {
                i += 1;
            } else {
                j += 1;
            }
        }
        SegmentSet { intervals: out }
    }
}

/// Translate intervals by `-delta`; see [`SegmentSet::shift`].
pub fn shift_segments<F: Scalar>(segments: &SegmentSet<F>, delta: F) -> SegmentSet<F> {
    segments.shift(delta)
}

/// Default social-latency compensation in seconds.
pub const DEFAULT_SYNC_DELTA: f64 = 0.5;

/// Temporal IoU between the audio segments and the latency-shifted video
/// segments. Two empty sets score 1, exactly one empty scores 0.
pub fn di_sync<F: Scalar>(audio: &SegmentSet<F>, video: &SegmentSet<F>, delta: F) -> F {
    let shifted = video.shift(delta);
    if audio.is_empty() && shifted.is_empty() {
        return F::one();
    }
    let inter = audio.intersection(&shifted).total_len();
    let union = audio.total_len() + shifted.total_len() - inter;
    if union <= F::zero() {
        return F::one();
    }
    (inter / union).max(F::zero()).min(F::one())
}

/// Eye-landmark coordinates of one person: `(T, E, 2)` in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkTrack<F> {
    pub eyes: Array3<F>,
    pub fps: u32,
}

impl<F: Scalar> LandmarkTrack<F> {
    pub fn new(eyes: Array3<F>, fps: u32) -> Result<Self> {
        let (_, e, two) = eyes.dim();
        if e == 0 || two != 2 {
            return Err(Error::Shape("landmark track must be (T, E>=1, 2)".into()));
        }
        Ok(LandmarkTrack { eyes, fps })
    }

    pub fn frames(&self) -> usize {
        self.eyes.dim().0
    }
}

fn mean_eye_step<F: Scalar>(track: &LandmarkTrack<F>, t: usize) -> F {
    let e = track.eyes.dim().1;
    let mut acc = F::zero();
    for i in 0..e {
        let dx = track.eyes[(t + 1, i, 0)] - track.eyes[(t, i, 0)];
        let dy = track.eyes[(t + 1, i, 1)] - track.eyes[(t, i, 1)];
        acc = acc + (dx * dx + dy * dy).sqrt();
    }
    acc / fl::<F>(e as f64)
}

/// Co-motion saliency: the summed per-transition mean eye-landmark
/// displacement of both persons, averaged over the `T - 1` transitions.
pub fn di_sali<F: Scalar>(speaker: &LandmarkTrack<F>, listener: &LandmarkTrack<F>) -> Result<F> {
    let t = speaker.frames();
    if listener.frames() != t {
        return Err(Error::Shape(format!(
            "tracks differ in length: {} vs {}",
            t,
            listener.frames()
        )));
    }
    if t < 2 {
        return Err(Error::Invalid("saliency needs at least 2 frames".into()));
    }
    let mut acc = F::zero();
    for step in 0..t - 1 {
        acc = acc + mean_eye_step(speaker, step) + mean_eye_step(listener, step);
    }
    Ok(acc / fl::<F>((t - 1) as f64))
}

/// [`di_sali`] divided by a spatial unit (for normalized-coordinate
/// reporting).
pub fn di_sali_normalized<F: Scalar>(
    speaker: &LandmarkTrack<F>,
    listener: &LandmarkTrack<F>,
    unit: F,
) -> Result<F> {
    if unit <= F::zero() {
        return Err(Error::Invalid("normalization unit must be positive".into()));
    }
    Ok(di_sali(speaker, listener)? / unit)
}

// ---------------------------------------------------------------------------
// Segment file and report formats
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub clip_id: String,
    pub audio_segments: Vec<[f64; 2]>,
    pub video_segments: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SegmentFile {
    One(SegmentRecord),
    Many(Vec<SegmentRecord>),
}

/// Load a segment file holding either a single record or a list of records.
pub fn load_segments(path: impl AsRef<Path>) -> Result<Vec<SegmentRecord>> {
    let path = path.as_ref();
    let file: SegmentFile = serde_json::from_reader(BufReader::new(File::open(path)?))
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(match file {
        SegmentFile::One(r) => vec![r],
        SegmentFile::Many(rs) => rs,
    })
}

pub fn save_segments(path: impl AsRef<Path>, records: &[SegmentRecord]) -> Result<()> {
    let path = path.as_ref();
    let out = BufWriter::new(File::create(path)?);
    if records.len() == 1 {
        serde_json::to_writer_pretty(out, &records[0])
    } else {
        serde_json::to_writer_pretty(out, records)
    }
    .map_err(|e| Error::format(path, e.to_string()))
}

impl SegmentRecord {
    pub fn audio_set<F: Scalar>(&self) -> Result<SegmentSet<F>> {
        segment_set_from(&self.audio_segments)
    }

    pub fn video_set<F: Scalar>(&self) -> Result<SegmentSet<F>> {
        segment_set_from(&self.video_segments)
    }
}

fn segment_set_from<F: Scalar>(raw: &[[f64; 2]]) -> Result<SegmentSet<F>> {
    let pairs: Vec<(F, F)> = raw.iter().map(|&[s, e]| (fl(s), fl(e))).collect();
    SegmentSet::new(&pairs)
}

/// One row of the metrics report.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub clip_id: String,
    pub di_sync: f64,
    pub di_sali: f64,
}

pub fn write_report(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    writeln!(out, "clip_id,di_sync,di_sali")?;
    for row in rows {
        writeln!(out, "{},{},{}", row.clip_id, row.di_sync, row.di_sali)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsAggregate {
    pub mean: MetricsMean,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsMean {
    pub di_sync: f64,
    pub di_sali: f64,
}

pub fn aggregate_rows(rows: &[MetricsRow]) -> MetricsAggregate {
    let count = rows.len();
    let n = count.max(1) as f64;
    MetricsAggregate {
        mean: MetricsMean {
            di_sync: rows.iter().map(|r| r.di_sync).sum::<f64>() / n,
            di_sali: rows.iter().map(|r| r.di_sali).sum::<f64>() / n,
        },
        count,
    }
}

pub fn write_aggregate(path: impl AsRef<Path>, agg: &MetricsAggregate) -> Result<()> {
    let path = path.as_ref();
    let out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(out, agg).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(raw: &[(f64, f64)]) -> SegmentSet<f64> {
        SegmentSet::new(raw).unwrap()
    }

    #[test]
    fn construction_canonicalizes() {
        let s = seg(&[(3.0, 4.0), (1.0, 2.0), (1.5, 2.5), (2.5, 2.8)]);
        assert_eq!(s.intervals(), &[(1.0, 2.8), (3.0, 4.0)]);
    }

    #[test]
    fn reversed_segment_is_rejected() {
        assert!(SegmentSet::new(&[(2.0, 1.0)]).is_err());
        assert!(SegmentSet::new(&[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn shift_translates_and_inverts() {
        let s = seg(&[(1.5, 3.5)]);
        assert_eq!(s.shift(0.5).intervals(), &[(1.0, 3.0)]);
        assert_eq!(s.shift(0.0), s);
        let back = s.shift(0.7).shift(-0.7);
        for ((a, b), (c, d)) in back.intervals().iter().zip(s.intervals()) {
            assert!((a - c).abs() < 1e-12 && (b - d).abs() < 1e-12);
        }
    }

    #[test]
    fn di_sync_hand_examples() {
        // Shifted video coincides with audio.
        let audio = seg(&[(1.0, 3.0)]);
        let video = seg(&[(1.5, 3.5)]);
        assert!((di_sync(&audio, &video, 0.5) - 1.0).abs() < 1e-12);
        // Intersection 1, union 2.
        let audio = seg(&[(0.0, 2.0)]);
        let video = seg(&[(1.0, 2.0)]);
        assert!((di_sync(&audio, &video, 0.5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn disjoint_after_shift_scores_zero() {
        let audio = seg(&[(0.0, 1.0)]);
        let video = seg(&[(5.0, 6.0)]);
        assert_eq!(di_sync(&audio, &video, 0.5), 0.0);
    }

    #[test]
    fn empty_conventions() {
        let empty = SegmentSet::<f64>::empty();
        let full = seg(&[(0.0, 1.0)]);
        assert_eq!(di_sync(&empty, &empty, 0.5), 1.0);
        assert_eq!(di_sync(&full, &empty, 0.5), 0.0);
        assert_eq!(di_sync(&empty, &full, 0.5), 0.0);
    }

    #[test]
    fn self_sync_after_forward_shift_is_one() {
        let a = seg(&[(0.25, 1.0), (2.0, 4.5)]);
        // Video delayed by delta scores 1 once compensated.
        let delayed = a.shift(-0.5);
        assert!((di_sync(&a, &delayed, 0.5) - 1.0).abs() < 1e-12);
    }

    fn track(frames: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> LandmarkTrack<f64> {
        let eyes = Array3::from_shape_fn((frames, 3, 2), |(t, e, c)| {
            let (x, y) = f(t, e);
            if c == 0 {
                x
            } else {
                y
            }
        });
        LandmarkTrack::new(eyes, 25).unwrap()
    }

    #[test]
    fn static_tracks_score_zero() {
        let s = track(5, |_, e| (e as f64, 2.0 * e as f64));
        assert_eq!(di_sali(&s, &s.clone()).unwrap(), 0.0);
    }

    #[test]
    fn uniform_three_four_motion_scores_ten() {
        let mover = |t: usize, e: usize| (3.0 * t as f64 + e as f64, 4.0 * t as f64);
        let s = track(2, mover);
        let l = track(2, mover);
        assert_eq!(di_sali(&s, &l).unwrap(), 10.0);
    }

    #[test]
    fn frame_duplication_halves_the_score() {
        let s = track(6, |t, e| {
            ((t * t) as f64 * 0.3 + e as f64, (t as f64).sin())
        });
        let l = track(6, |t, e| (e as f64, (t as f64) * 1.7));
        let base = di_sali(&s, &l).unwrap();
        let dup = |tr: &LandmarkTrack<f64>| {
            let (t, e, _) = tr.eyes.dim();
            let eyes =
                Array3::from_shape_fn((2 * t - 1, e, 2), |(i, j, c)| tr.eyes[((i + 1) / 2, j, c)]);
            LandmarkTrack::new(eyes, tr.fps).unwrap()
        };
        let halved = di_sali(&dup(&s), &dup(&l)).unwrap();
        assert!((halved - base / 2.0).abs() < 1e-12);
    }

    #[test]
    fn short_tracks_are_rejected() {
        let s = track(1, |_, _| (0.0, 0.0));
        assert!(di_sali(&s, &s.clone()).is_err());
        let a = track(3, |_, _| (0.0, 0.0));
        let b = track(4, |_, _| (0.0, 0.0));
        assert!(di_sali(&a, &b).is_err());
    }

    #[test]
    fn segment_file_round_trips_single_and_many() {
        let dir = tempfile::tempdir().unwrap();
        let one = vec![SegmentRecord {
            clip_id: "a".into(),
            audio_segments: vec![[0.0, 1.0]],
            video_segments: vec![[0.5, 1.5]],
        }];
        let p1 = dir.path().join("one.json");
        save_segments(&p1, &one).unwrap();
        assert_eq!(load_segments(&p1).unwrap().len(), 1);

        let many = vec![
            one[0].clone(),
            SegmentRecord {
                clip_id: "b".into(),
                audio_segments: vec![],
                video_segments: vec![[2.0, 3.0]],
            },
        ];
        let p2 = dir.path().join("many.json");
        save_segments(&p2, &many).unwrap();
        let back = load_segments(&p2).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].clip_id, "b");
    }
}
