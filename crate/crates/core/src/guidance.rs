//! Role-aware spatial guidance: VAD-driven speaker/listener assignment, the
//! smoothed boost-intensity curve, lip-centered Gaussian fields, the
//! spatially modulated guidance scale, and the guided velocity combiner.

use crate::error::{Error, Result};
use crate::latent::LatentGrid;
use crate::num::{fl, Scalar};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Active speaker at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Speaker {
    None,
    Person1,
    Person2,
}

impl Speaker {
    pub fn person_index(self) -> Option<usize> {
        match self {
            Speaker::Person1 => Some(0),
            Speaker::Person2 => Some(1),
            Speaker::None => None,
        }
    }

    /// `"1"`, `"2"` or `"none"`, the CSV encoding.
    pub fn label(self) -> &'static str {
        match self {
            Speaker::Person1 => "1",
            Speaker::Person2 => "2",
            Speaker::None => "none",
        }
    }
}

/// Per-frame speaker assignment plus boost intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct RoleTimeline<F> {
    pub speaker: Vec<Speaker>,
    pub alpha: Vec<F>,
}

impl<F: Scalar> RoleTimeline<F> {
    pub fn len(&self) -> usize {
        self.speaker.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speaker.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GuidanceConfig<F> {
    /// Baseline guidance scale.
    pub w_base: F,
    /// Gaussian radius in latent cells; `None` resolves to `0.15 * min(H, W)`.
    pub sigma: Option<F>,
    /// Peak boost intensity.
    pub alpha_max: F,
    /// Odd moving-average window for the boost curve, in frames.
    pub smooth_window: usize,
}

impl<F: Scalar> Default for GuidanceConfig<F> {
    fn default() -> Self {
        GuidanceConfig {
            w_base: fl(4.0),
            sigma: None,
            alpha_max: fl(2.0),
            smooth_window: 5,
        }
    }
}

impl<F: Scalar> GuidanceConfig<F> {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.sigma {
            if s <= F::zero() {
                return Err(Error::Config("sigma must be positive".into()));
            }
        }
        if self.alpha_max < F::zero() {
            return Err(Error::Config("alpha_max must be nonnegative".into()));
        }
        if self.smooth_window == 0 || self.smooth_window % 2 == 0 {
            return Err(Error::Config(format!(
                "smooth_window must be odd, got {}",
                self.smooth_window
            )));
        }
        Ok(())
    }

    pub fn resolve_sigma(&self, h: usize, w: usize) -> F {
        self.sigma
            .unwrap_or_else(|| fl::<F>(0.15) * fl::<F>(h.min(w) as f64))
    }
}

/// Length of the maximal true-run of `vad` containing `t` (0 when inactive).
fn run_length(vad: &[bool], t: usize) -> usize {
    if !vad[t] {
        return 0;
    }
    let mut start = t;
    while start > 0 && vad[start - 1] {
        start -= 1;
    }
    let mut end = t;
    while end + 1 < vad.len() && vad[end + 1] {
        end += 1;
    }
    end - start + 1
}

/// Assign the active speaker per frame from two VAD tracks.
///
/// Sole activity wins outright; simultaneous activity goes to the person
/// whose surrounding speech run is longer, ties to person 1. Boost
/// intensities start at zero; see [`boost_curve`].
pub fn assign_roles<F: Scalar>(vad1: &[bool], vad2: &[bool]) -> Result<RoleTimeline<F>> {
    if vad1.len() != vad2.len() {
        return Err(Error::Shape(format!(
            "VAD tracks differ in length: {} vs {}",
            vad1.len(),
            vad2.len()
        )));
    }
    let speaker = (0..vad1.len())
        .map(|t| match (vad1[t], vad2[t]) {
            (true, false) => Speaker::Person1,
            (false, true) => Speaker::Person2,
            (false, false) => Speaker::None,
            (true, true) => {
                if run_length(vad2, t) > run_length(vad1, t) {
                    Speaker::Person2
                } else {
                    Speaker::Person1
                }
            }
        })
        .collect::<Vec<_>>();
    let alpha = vec![F::zero(); speaker.len()];
    Ok(RoleTimeline { speaker, alpha })
}

/// Active-speaker VAD indicator: the assigned speaker's own activity.
pub fn active_speaker_vad<F: Scalar>(
    timeline: &RoleTimeline<F>,
    vad1: &[bool],
    vad2: &[bool],
) -> Vec<bool> {
    timeline
        .speaker
        .iter()
        .enumerate()
        .map(|(t, s)| match s {
            Speaker::Person1 => vad1[t],
            Speaker::Person2 => vad2[t],
            Speaker::None => false,
        })
        .collect()
}

/// `alpha_t = alpha_max * movavg(speaker_vad, window)`, forced to zero on
/// frames without a speaker. The moving average is centered with zero
/// padding and a constant divisor, so interior continuous speech saturates
/// at `alpha_max` while an isolated active frame peaks at
/// `alpha_max / window`.
pub fn boost_curve<F: Scalar>(
    timeline: &RoleTimeline<F>,
    speaker_vad: &[bool],
    cfg: &GuidanceConfig<F>,
) -> Result<Vec<F>> {
    cfg.validate()?;
    if speaker_vad.len() != timeline.len() {
        return Err(Error::Shape(
            "speaker VAD length differs from timeline".into(),
        ));
    }
    let n = timeline.len();
    let half = (cfg.smooth_window / 2) as isize;
    let inv = F::one() / fl::<F>(cfg.smooth_window as f64);
    let mut alpha = vec![F::zero(); n];
    for t in 0..n {
        if timeline.speaker[t] == Speaker::None {
            continue;
        }
        let mut acc = F::zero();
        for off in -half..=half {
            let src = t as isize + off;
            if src >= 0 && (src as usize) < n && speaker_vad[src as usize] {
                acc = acc + F::one();
            }
        }
        alpha[t] = cfg.alpha_max * acc * inv;
    }
    Ok(alpha)
}

/// Assignment and boost curve in one call.
pub fn role_timeline<F: Scalar>(
    vad1: &[bool],
    vad2: &[bool],
    cfg: &GuidanceConfig<F>,
) -> Result<RoleTimeline<F>> {
    let mut timeline = assign_roles::<F>(vad1, vad2)?;
    let indicator = active_speaker_vad(&timeline, vad1, vad2);
    timeline.alpha = boost_curve(&timeline, &indicator, cfg)?;
    Ok(timeline)
}

/// Unnormalized Gaussian `exp(-|x - mu|^2 / (2 sigma^2))` over an `H x W`
/// cell lattice. `mu` is given in continuous latent coordinates and snapped
/// to the containing cell so the peak value is exactly 1 there.
pub fn gaussian_map<F: Scalar>(mu: (F, F), sigma: F, h: usize, w: usize) -> Result<Array2<F>> {
    if sigma <= F::zero() {
        return Err(Error::Config("sigma must be positive".into()));
    }
    let (mx, my) = (mu.0.to_f64().unwrap(), mu.1.to_f64().unwrap());
    if mx < 0.0 || my < 0.0 || mx >= w as f64 || my >= h as f64 {
        return Err(Error::Invalid(format!(
            "gaussian center ({mx}, {my}) outside {h}x{w} grid"
        )));
    }
    let (cx, cy) = (mx.floor(), my.floor());
    let two_sigma_sq = fl::<F>(2.0) * sigma * sigma;
    Ok(Array2::from_shape_fn((h, w), |(i, j)| {
        let dx = fl::<F>(j as f64 - cx);
        let dy = fl::<F>(i as f64 - cy);
        (-(dx * dx + dy * dy) / two_sigma_sq).exp()
    }))
}

/// Per-frame spatial inputs: each person's lip center in latent coordinates
/// (if known) and their latent-grid region mask.
#[derive(Debug, Clone)]
pub struct FrameSpatial<'a, F> {
    pub lip_latent: [Option<(F, F)>; 2],
    pub region_masks: [&'a Array2<bool>; 2],
}

/// The spatially modulated guidance scale for frame `t`.
///
/// Listener and background cells receive exactly `w_base`; cells in the
/// speaker's region receive `w_base + alpha_t * G(x)` with the Gaussian
/// peaked at the speaker's lip cell. No speaker means a constant field.
pub fn spatial_cfg_scale<F: Scalar>(
    timeline: &RoleTimeline<F>,
    t: usize,
    spatial: &FrameSpatial<'_, F>,
    cfg: &GuidanceConfig<F>,
) -> Result<Array2<F>> {
    cfg.validate()?;
    if t >= timeline.len() {
        return Err(Error::Invalid(format!(
            "frame {t} out of range {}",
            timeline.len()
        )));
    }
    let (h, w) = spatial.region_masks[0].dim();
    if spatial.region_masks[1].dim() != (h, w) {
        return Err(Error::Shape("region masks differ in shape".into()));
    }
    let mut field = Array2::from_elem((h, w), cfg.w_base);
    let Some(k) = timeline.speaker[t].person_index() else {
        return Ok(field);
    };
    let lip = spatial.lip_latent[k].ok_or_else(|| {
        Error::Invalid(format!(
            "missing lip center for active speaker at frame {t}"
        ))
    })?;
    let gauss = gaussian_map(lip, cfg.resolve_sigma(h, w), h, w)?;
    let alpha = timeline.alpha[t];
    let mask = spatial.region_masks[k];
    for i in 0..h {
        for j in 0..w {
            if mask[(i, j)] {
                field[(i, j)] = field[(i, j)] + alpha * gauss[(i, j)];
            }
        }
    }
    Ok(field)
}

/// Classifier-free-guidance composition with a spatially varying scale:
/// `v = v_uncond + w (.) (v_cond - v_uncond)`, the field broadcast over
/// channels and frames.
pub fn guided_velocity<F: Scalar>(
    v_cond: &LatentGrid<F>,
    v_uncond: &LatentGrid<F>,
    w_field: &Array2<F>,
) -> Result<LatentGrid<F>> {
    let dims = v_cond.dims();
    if v_uncond.dims() != dims {
        return Err(Error::Shape("conditional/unconditional dims differ".into()));
    }
    if w_field.dim() != (dims.h, dims.w) {
        return Err(Error::Shape(format!(
            "guidance field {:?} does not match spatial dims ({}, {})",
            w_field.dim(),
            dims.h,
            dims.w
        )));
    }
    let mut out = v_uncond.clone();
    for c in 0..dims.c {
        for t in 0..dims.t {
            for i in 0..dims.h {
                for j in 0..dims.w {
                    let u = v_uncond.at(c, t, i, j);
                    let delta = v_cond.at(c, t, i, j) - u;
                    out.set(c, t, i, j, u + w_field[(i, j)] * delta);
                }
            }
        }
    }
    Ok(out)
}
