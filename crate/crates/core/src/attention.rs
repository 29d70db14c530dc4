//! Identity binding in attention: label-modulated rotary embeddings for
//! audio-to-person binding, and region-masked cross-attention that injects
//! per-person motion tokens without leakage across identities.

use crate::error::{Error, Result};
use crate::num::{fl, Scalar};
use crate::scene::MotionLatentSeq;
use ndarray::Array2;

/// Tokens with per-token integer labels and positions.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTokenSet<F> {
    pub tokens: Array2<F>,
    pub labels: Vec<i64>,
    pub positions: Vec<i64>,
}

impl<F: Scalar> LabeledTokenSet<F> {
    pub fn new(tokens: Array2<F>, labels: Vec<i64>, positions: Vec<i64>) -> Result<Self> {
        let (n, d) = tokens.dim();
        if d == 0 || d % 2 != 0 {
            return Err(Error::Invalid(format!(
                "token width must be even and positive, got {d}"
            )));
        }
        if labels.len() != n || positions.len() != n {
            return Err(Error::Shape(format!(
                "labels ({}) / positions ({}) must match token count {n}",
                labels.len(),
                positions.len()
            )));
        }
        Ok(LabeledTokenSet {
            tokens,
            labels,
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.tokens.dim().1
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RotaryConfig<F> {
    /// Base of the per-plane frequency ladder.
    pub theta_base: F,
    /// Multiplier applied to labels before they enter the rotation phase.
    pub label_scale: F,
}

impl<F: Scalar> Default for RotaryConfig<F> {
    fn default() -> Self {
        RotaryConfig {
            theta_base: fl(10000.0),
            label_scale: F::one(),
        }
    }
}

impl<F: Scalar> RotaryConfig<F> {
    fn validate(&self) -> Result<()> {
        if self.theta_base <= F::one() {
            return Err(Error::Config("theta_base must exceed 1".into()));
        }
        if self.label_scale <= F::zero() {
            return Err(Error::Config("label_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Label value assigned to each identity's visual and audio tokens.
///
/// A wide gap maximizes rotary phase separation between the identities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelRanges {
    pub person1: i64,
    pub person2: i64,
}

impl Default for LabelRanges {
    fn default() -> Self {
        LabelRanges {
            person1: 0,
            person2: 100,
        }
    }
}

/// Rotate each `(2j, 2j+1)` plane of `vec` by `(position + label_scale *
/// label) * theta_base^(-2j/d)`.
///
/// The rotation is orthogonal, so the Euclidean norm is preserved, and inner
/// products of rotated pairs depend only on the difference of their combined
/// phases.
pub fn lrope_rotate<F: Scalar>(
    vec: &[F],
    label: i64,
    position: i64,
    cfg: &RotaryConfig<F>,
) -> Result<Vec<F>> {
    cfg.validate()?;
    let d = vec.len();
    if d == 0 || d % 2 != 0 {
        return Err(Error::Invalid(format!(
            "vector length must be even and positive, got {d}"
        )));
    }
    let phase = fl::<F>(position as f64) + cfg.label_scale * fl::<F>(label as f64);
    let mut out = vec![F::zero(); d];
    for j in 0..d / 2 {
        let freq = cfg.theta_base.powf(fl::<F>(-2.0 * j as f64 / d as f64));
        let angle = phase * freq;
        let (s, c) = (angle.sin(), angle.cos());
        let x = vec[2 * j];
        let y = vec[2 * j + 1];
        out[2 * j] = x * c - y * s;
        out[2 * j + 1] = x * s + y * c;
    }
    Ok(out)
}

fn softmax_row<F: Scalar>(row: &mut [F]) {
    let mut max = row[0];
    for &v in row.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Output of [`bound_audio_attention`]: attended tokens plus the attention
/// matrix and where the second track's keys start in its columns.
#[derive(Debug, Clone)]
pub struct BoundAttention<F> {
    pub tokens: LabeledTokenSet<F>,
    /// `N_visual x (N_a1 + N_a2)` row-stochastic attention weights.
    pub weights: Array2<F>,
    /// Column index where track-2 keys begin.
    pub track_split: usize,
}

/// Cross-attention from visual queries onto two audio tracks with rotary
/// label modulation, binding each track to the identity sharing its label.
pub fn bound_audio_attention<F: Scalar>(
    visual: &LabeledTokenSet<F>,
    audio_tracks: &[LabeledTokenSet<F>; 2],
    cfg: &RotaryConfig<F>,
    ranges: &LabelRanges,
) -> Result<BoundAttention<F>> {
    cfg.validate()?;
    if ranges.person1 == ranges.person2 {
        return Err(Error::Config("identity label ranges overlap".into()));
    }
    let d = visual.width();
    for (k, track) in audio_tracks.iter().enumerate() {
        if track.width() != d {
            return Err(Error::Shape(format!(
                "audio track {} width differs from visual",
                k + 1
            )));
        }
        let expected = if k == 0 {
            ranges.person1
        } else {
            ranges.person2
        };
        if track.labels.iter().any(|&l| l != expected) {
            return Err(Error::Invalid(format!(
                "audio track {} must carry label {expected}",
                k + 1
            )));
        }
    }
    for &l in &visual.labels {
        if l != ranges.person1 && l != ranges.person2 {
            return Err(Error::Invalid(format!(
                "visual label {l} matches neither identity"
            )));
        }
    }

    let nq = visual.len();
    let nk = audio_tracks[0].len() + audio_tracks[1].len();
    if nk == 0 {
        return Err(Error::Invalid("no audio keys".into()));
    }
    let rotated_q: Vec<Vec<F>> = (0..nq)
        .map(|i| {
            lrope_rotate(
                visual.tokens.row(i).as_slice().unwrap(),
                visual.labels[i],
                visual.positions[i],
                cfg,
            )
        })
        .collect::<Result<_>>()?;
    let mut rotated_k = Vec::with_capacity(nk);
    let mut values = Array2::<F>::zeros((nk, d));
    let mut col = 0usize;
    for track in audio_tracks {
        for i in 0..track.len() {
            rotated_k.push(lrope_rotate(
                track.tokens.row(i).as_slice().unwrap(),
                track.labels[i],
                track.positions[i],
                cfg,
            )?);
            values.row_mut(col).assign(&track.tokens.row(i));
            col += 1;
        }
    }

    let scale = F::one() / fl::<F>((d as f64).sqrt());
    let mut weights = Array2::<F>::zeros((nq, nk));
    for qi in 0..nq {
        for ki in 0..nk {
            let mut dot = F::zero();
            for j in 0..d {
                dot = dot + rotated_q[qi][j] * rotated_k[ki][j];
            }
            weights[(qi, ki)] = dot * scale;
        }
        softmax_row(weights.row_mut(qi).as_slice_mut().unwrap());
    }
    let out = weights.dot(&values);
    Ok(BoundAttention {
        tokens: LabeledTokenSet::new(out, visual.labels.clone(), visual.positions.clone())?,
        weights,
        track_split: audio_tracks[0].len(),
    })
}

/// Region ownership of a flattened latent query token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionTag {
    Person1,
    Person2,
    Background,
}

/// Key/value token pair projected from one person's motion latents.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyValueSet<F> {
    pub keys: Array2<F>,
    pub values: Array2<F>,
}

impl<F: Scalar> KeyValueSet<F> {
    pub fn new(keys: Array2<F>, values: Array2<F>) -> Result<Self> {
        if keys.dim() != values.dim() {
            return Err(Error::Shape("keys and values must share a shape".into()));
        }
        Ok(KeyValueSet { keys, values })
    }

    /// Zero-pad motion vectors to token width `d`; keys and values coincide.
    pub fn from_motion(seq: &MotionLatentSeq<F>, d: usize) -> Result<Self> {
        let (n, dm) = seq.vectors.dim();
        if d < dm {
            return Err(Error::Config(format!(
                "token width {d} below motion dim {dm}"
            )));
        }
        let mut tokens = Array2::<F>::zeros((n, d));
        for i in 0..n {
            for j in 0..dm {
                tokens[(i, j)] = seq.vectors[(i, j)];
            }
        }
        Ok(KeyValueSet {
            keys: tokens.clone(),
            values: tokens,
        })
    }
}

/// Inputs of the masked interaction injection.
#[derive(Debug, Clone)]
pub struct InjectionInputs<F> {
    /// `N x d` query tokens flattened from the video latents.
    pub queries: Array2<F>,
    /// Region ownership per query token.
    pub tags: Vec<RegionTag>,
    pub speaker: KeyValueSet<F>,
    pub listener: KeyValueSet<F>,
    /// Speaker-region mask per query token.
    pub mask_speaker: Vec<bool>,
    /// Listener-region mask per query token.
    pub mask_listener: Vec<bool>,
}

impl<F: Scalar> InjectionInputs<F> {
    fn validate(&self) -> Result<()> {
        let (n, d) = self.queries.dim();
        if self.tags.len() != n || self.mask_speaker.len() != n || self.mask_listener.len() != n {
            return Err(Error::Shape(
                "per-token metadata must match query count".into(),
            ));
        }
        if self.speaker.keys.dim().1 != d || self.listener.keys.dim().1 != d {
            return Err(Error::Shape("key width must match query width".into()));
        }
        for i in 0..n {
            if self.mask_speaker[i] && self.mask_listener[i] {
                return Err(Error::Invalid(format!(
                    "token {i} carries both region masks"
                )));
            }
            if self.tags[i] == RegionTag::Background
                && (self.mask_speaker[i] || self.mask_listener[i])
            {
                return Err(Error::Invalid(format!(
                    "background token {i} carries a region mask"
                )));
            }
        }
        Ok(())
    }
}

fn attend_one<F: Scalar>(query: &[F], kv: &KeyValueSet<F>, scale: F) -> Vec<F> {
    let (nk, d) = kv.keys.dim();
    let mut logits = vec![F::zero(); nk];
    for (ki, logit) in logits.iter_mut().enumerate() {
        let mut dot = F::zero();
        for j in 0..d {
            dot = dot + query[j] * kv.keys[(ki, j)];
        }
        *logit = dot * scale;
    }
    softmax_row(&mut logits);
    let mut out = vec![F::zero(); d];
    for ki in 0..nk {
        for j in 0..d {
            out[j] = out[j] + logits[ki] * kv.values[(ki, j)];
        }
    }
    out
}

/// JSON sidecar describing the labels and positions of an IDLT-packed token
/// matrix.
#[derive(serde::Serialize, serde::Deserialize)]
struct TokenSidecar {
    labels: Vec<i64>,
    positions: Vec<i64>,
}

/// Serialize a token set as an IDLT matrix plus a JSON sidecar.
pub fn write_token_set<F: Scalar>(
    idlt_path: impl AsRef<std::path::Path>,
    sidecar_path: impl AsRef<std::path::Path>,
    set: &LabeledTokenSet<F>,
) -> Result<()> {
    crate::latent::write_idlt(idlt_path, &crate::latent::matrix_to_grid(&set.tokens)?)?;
    let out = std::io::BufWriter::new(std::fs::File::create(sidecar_path.as_ref())?);
    serde_json::to_writer_pretty(
        out,
        &TokenSidecar {
            labels: set.labels.clone(),
            positions: set.positions.clone(),
        },
    )
    .map_err(|e| Error::format(sidecar_path.as_ref(), e.to_string()))
}

pub fn read_token_set<F: Scalar>(
    idlt_path: impl AsRef<std::path::Path>,
    sidecar_path: impl AsRef<std::path::Path>,
) -> Result<LabeledTokenSet<F>> {
    let tokens = crate::latent::grid_to_matrix(&crate::latent::read_idlt::<F>(idlt_path)?)?;
    let sidecar: TokenSidecar = serde_json::from_reader(std::io::BufReader::new(
        std::fs::File::open(sidecar_path.as_ref())?,
    ))
    .map_err(|e| Error::format(sidecar_path.as_ref(), e.to_string()))?;
    LabeledTokenSet::new(tokens, sidecar.labels, sidecar.positions)
}

/// Spatial-masking cross-attention.
///
/// Tokens under the speaker mask attend only to the speaker's key/value set,
/// tokens under the listener mask only to the listener's, and everything
/// else emits exactly zero. The two paths never read the other identity's
/// tokens, so the speaker-side output is bit-independent of the listener's
/// motion and vice versa.
pub fn masked_interaction_attention<F: Scalar>(inputs: &InjectionInputs<F>) -> Result<Array2<F>> {
    inputs.validate()?;
    let (n, d) = inputs.queries.dim();
    if inputs.speaker.keys.dim().0 == 0 || inputs.listener.keys.dim().0 == 0 {
        return Err(Error::Invalid(
            "both key/value sets must be non-empty".into(),
        ));
    }
    let scale = F::one() / fl::<F>((d as f64).sqrt());
    let mut out = Array2::<F>::zeros((n, d));
    for i in 0..n {
        let query: Vec<F> = inputs.queries.row(i).to_vec();
        let row = if inputs.mask_speaker[i] {
            attend_one(&query, &inputs.speaker, scale)
        } else if inputs.mask_listener[i] {
            attend_one(&query, &inputs.listener, scale)
        } else {
            continue;
        };
        for j in 0..d {
            out[(i, j)] = row[j];
        }
    }
    Ok(out)
}
