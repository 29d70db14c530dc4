//! Flow-matching primitives: straight-path interpolation, the velocity
//! regression loss, Euler integration, and chunked long-form generation with
//! hard context anchoring.

use crate::error::{Error, Result};
use crate::latent::LatentGrid;
use crate::num::{fl, Scalar};
use crate::scene::MotionLatentSeq;
use ndarray::Array2;
use std::ops::Range;

/// One training draw: data `z0`, noise `z1`, a time in `[0, 1]`, and an
/// opaque condition bundle.
#[derive(Debug, Clone)]
pub struct FlowSample<F, C> {
    pub z0: LatentGrid<F>,
    pub z1: LatentGrid<F>,
    pub t: F,
    pub conditions: C,
}

impl<F: Scalar, C> FlowSample<F, C> {
    pub fn new(z0: LatentGrid<F>, z1: LatentGrid<F>, t: F, conditions: C) -> Result<Self> {
        if z0.dims() != z1.dims() {
            return Err(Error::Shape("z0 and z1 dims differ".into()));
        }
        if t < F::zero() || t > F::one() {
            return Err(Error::Invalid(format!("t must lie in [0,1], got {t}")));
        }
        Ok(FlowSample {
            z0,
            z1,
            t,
            conditions,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SamplerConfig {
    /// Euler steps per chunk.
    pub steps: usize,
    /// Frames generated per chunk.
    pub chunk_frames: usize,
    /// Leading frames of each later chunk pinned to the previous chunk.
    pub context_frames: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps: 16,
            chunk_frames: 81,
            context_frames: 9,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.chunk_frames == 0 {
            return Err(Error::Config("chunk_frames must be positive".into()));
        }
        if self.context_frames >= self.chunk_frames {
            return Err(Error::Config(format!(
                "context_frames {} must be below chunk_frames {}",
                self.context_frames, self.chunk_frames
            )));
        }
        Ok(())
    }
}

/// `t * z0 + (1 - t) * z1`, elementwise.
pub fn interpolate_latent<F: Scalar>(
    z0: &LatentGrid<F>,
    z1: &LatentGrid<F>,
    t: F,
) -> Result<LatentGrid<F>> {
    if t < F::zero() || t > F::one() {
        return Err(Error::Invalid(format!("t must lie in [0,1], got {t}")));
    }
    let u = F::one() - t;
    z0.zip_with(z1, |a, b| t * a + u * b)
}

/// Mean squared error between the predicted velocity and the straight-path
/// target `z0 - z1`.
pub fn flow_matching_loss<F: Scalar>(
    v_pred: &LatentGrid<F>,
    z0: &LatentGrid<F>,
    z1: &LatentGrid<F>,
) -> Result<F> {
    if z0.dims() != z1.dims() {
        return Err(Error::Shape("z0 and z1 dims differ".into()));
    }
    if v_pred.dims() != z0.dims() {
        return Err(Error::Shape("v_pred dims differ from targets".into()));
    }
    let mut acc = F::zero();
    for ((&v, &a), &b) in v_pred.data().iter().zip(z0.data()).zip(z1.data()) {
        let e = v - (a - b);
        acc = acc + e * e;
    }
    Ok(acc / fl::<F>(z0.dims().len() as f64))
}

/// Integrate `z' = velocity_fn(z, t, c)` from `t = 0` to `t = 1` in `steps`
/// uniform Euler steps, starting at `z1`.
pub fn euler_sample<F, C, V>(
    velocity_fn: V,
    z1: &LatentGrid<F>,
    steps: usize,
    conditions: &C,
) -> Result<LatentGrid<F>>
where
    F: Scalar,
    V: Fn(&LatentGrid<F>, F, &C) -> Result<LatentGrid<F>>,
{
    euler_sample_frozen(velocity_fn, z1, steps, conditions, 0)
}

/// [`euler_sample`] with the first `frozen_frames` frames held bit-exact at
/// their initial values through every step.
pub fn euler_sample_frozen<F, C, V>(
    velocity_fn: V,
    init: &LatentGrid<F>,
    steps: usize,
    conditions: &C,
    frozen_frames: usize,
) -> Result<LatentGrid<F>>
where
    F: Scalar,
    V: Fn(&LatentGrid<F>, F, &C) -> Result<LatentGrid<F>>,
{
    if steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    if frozen_frames > init.dims().t {
        return Err(Error::Invalid("frozen prefix exceeds frame count".into()));
    }
    let dt = F::one() / fl::<F>(steps as f64);
    let mut z = init.clone();
    for step in 0..steps {
        let t = fl::<F>(step as f64) * dt;
        let v = velocity_fn(&z, t, conditions)?;
        if v.dims() != z.dims() {
            return Err(Error::Shape(format!(
                "velocity dims {:?} differ from state {:?}",
                v.dims(),
                z.dims()
            )));
        }
        z.add_scaled_frames(&v, dt, frozen_frames)?;
    }
    Ok(z)
}

/// Anchors for chunked generation: a global reference latent, per-person
/// motion latents covering the full timeline, and the initial noise for the
/// whole sequence.
#[derive(Debug, Clone)]
pub struct Anchors<'a, F> {
    pub reference: Option<&'a LatentGrid<F>>,
    pub motion: &'a [MotionLatentSeq<F>],
    pub init: &'a LatentGrid<F>,
}

/// Per-chunk conditions handed to the velocity function.
#[derive(Debug)]
pub struct ChunkContext<'a, F> {
    pub index: usize,
    /// Global frames covered by this chunk.
    pub frames: Range<usize>,
    /// Leading frames pinned to already-generated content.
    pub anchored: usize,
    pub reference: &'a LatentGrid<F>,
    /// Motion-latent window per person, `chunk_frames x D_m`.
    pub motion: Vec<Array2<F>>,
}

#[derive(Debug, Clone)]
pub struct MultiClipOutput<F> {
    pub latent: LatentGrid<F>,
    /// Global frame range and sampled latent of every chunk, in order.
    pub chunks: Vec<(Range<usize>, LatentGrid<F>)>,
}

/// Generate `total_frames` frames in chunks of `cfg.chunk_frames`.
///
/// Each chunk after the first starts `chunk_frames - context_frames` frames
/// after its predecessor and has its overlapping prefix hard-copied from the
/// already generated frames, then held fixed through sampling, so boundary
/// frames are shared bit-exactly between consecutive chunks. The final chunk
/// is clamped to end at `total_frames`, which widens its anchored prefix
/// when the stride does not divide evenly.
pub fn multi_clip_generate<F, V>(
    velocity_fn: V,
    total_frames: usize,
    cfg: &SamplerConfig,
    anchors: &Anchors<'_, F>,
) -> Result<MultiClipOutput<F>>
where
    F: Scalar,
    V: Fn(&LatentGrid<F>, F, &ChunkContext<'_, F>) -> Result<LatentGrid<F>>,
{
    cfg.validate()?;
    if total_frames < cfg.chunk_frames {
        return Err(Error::Invalid(format!(
            "total_frames {} below chunk_frames {}",
            total_frames, cfg.chunk_frames
        )));
    }
    let reference = anchors
        .reference
        .ok_or_else(|| Error::Invalid("missing reference anchor".into()))?;
    if anchors.motion.is_empty() {
        return Err(Error::Invalid("missing motion-latent anchors".into()));
    }
    for m in anchors.motion {
        if m.vectors.dim().0 < total_frames {
            return Err(Error::Invalid(format!(
                "motion latents for person {} cover {} frames, need {}",
                m.person_id,
                m.vectors.dim().0,
                total_frames
            )));
        }
    }
    let init_dims = anchors.init.dims();
    if init_dims.t != total_frames {
        return Err(Error::Shape(format!(
            "initial noise has T={} but total_frames={}",
            init_dims.t, total_frames
        )));
    }

    let stride = cfg.chunk_frames - cfg.context_frames;
    let mut output = LatentGrid::zeros(init_dims);
    let mut chunks = Vec::new();
    let mut start = 0usize;
    let mut generated = 0usize; // frames finalized so far
    let mut index = 0usize;
    loop {
        let start_clamped = start.min(total_frames - cfg.chunk_frames);
        let range = start_clamped..start_clamped + cfg.chunk_frames;
        let anchored = generated.saturating_sub(start_clamped);

        let mut chunk_init = anchors.init.frames(range.clone())?;
        if anchored > 0 {
            let ctx_frames = output.frames(start_clamped..start_clamped + anchored)?;
            chunk_init.write_frames(0, &ctx_frames)?;
        }
        let ctx = ChunkContext {
            index,
            frames: range.clone(),
            anchored,
            reference,
            motion: anchors
                .motion
                .iter()
                .map(|m| {
                    m.vectors
                        .slice(ndarray::s![range.start..range.end, ..])
                        .to_owned()
                })
                .collect(),
        };
        let sampled = euler_sample_frozen(
            |z, t, c: &ChunkContext<'_, F>| velocity_fn(z, t, c),
            &chunk_init,
            cfg.steps,
            &ctx,
            anchored,
        )?;
        output.write_frames(start_clamped, &sampled)?;
        chunks.push((range.clone(), sampled));
        generated = range.end;
        index += 1;
        if generated >= total_frames {
            break;
        }
        start = start_clamped + stride;
    }
    debug_assert_eq!(output.dims().t, total_frames);
    Ok(MultiClipOutput {
        latent: output,
        chunks,
    })
}

/// Convenience for the tests and the demo: a fixed target `z0` induces the
/// exact straight-path field `z0 - z1` restricted to the chunk window.
pub fn oracle_velocity<'a, F: Scalar>(
    z0_full: &'a LatentGrid<F>,
    z1_full: &'a LatentGrid<F>,
) -> impl Fn(&LatentGrid<F>, F, &ChunkContext<'_, F>) -> Result<LatentGrid<F>> + 'a {
    move |_z, _t, ctx| {
        let a = z0_full.frames(ctx.frames.clone())?;
        let b = z1_full.frames(ctx.frames.clone())?;
        a.zip_with(&b, |x, y| x - y)
    }
}
