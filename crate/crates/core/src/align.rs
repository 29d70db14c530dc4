//! Audio-context to motion-space alignment: temporal meta-query
//! construction, the temporal connector network (1D conv, residual
//! self-attention, linear head), the pointwise + temporal-difference loss,
//! analytic backpropagation with a finite-difference audit, and a plain
//! gradient-descent trainer.

use crate::error::{Error, Result};
use crate::latent::{grid_to_matrix, matrix_to_grid, read_idlt, write_idlt};
use crate::num::{fl, Scalar};
use ndarray::{Array1, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

/// Default hidden width of context states.
pub const DEFAULT_HIDDEN_DIM: usize = 64;
/// Default meta-query initialization scale.
pub const META_QUERY_SIGMA: f64 = 0.02;

/// One learnable query vector per acoustic frame of a training crop.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaQuerySequence<F> {
    /// `(N, D)`, one row per acoustic frame.
    pub queries: Array2<F>,
}

/// Deterministic Gaussian initialization (`sigma` = 0.02) of `n` queries of
/// width `d`.
pub fn build_meta_queries<F: Scalar>(
    n: usize,
    d: usize,
    seed: u64,
) -> Result<MetaQuerySequence<F>> {
    if n == 0 || d == 0 {
        return Err(Error::Invalid("meta-query shape must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, META_QUERY_SIGMA).expect("valid normal");
    let queries = Array2::from_shape_fn((n, d), |_| fl::<F>(normal.sample(&mut rng)));
    Ok(MetaQuerySequence { queries })
}

/// Connector hyperparameters. `kernel` must be odd; convolution uses same
/// padding so the sequence length never changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectorDims {
    pub kernel: usize,
    pub hidden: usize,
    pub motion: usize,
}

impl ConnectorDims {
    pub fn new(kernel: usize, hidden: usize, motion: usize) -> Result<Self> {
        if kernel % 2 == 0 || kernel == 0 {
            return Err(Error::Config(format!("kernel must be odd, got {kernel}")));
        }
        if hidden == 0 || motion == 0 {
            return Err(Error::Config(
                "hidden and motion dims must be positive".into(),
            ));
        }
        Ok(ConnectorDims {
            kernel,
            hidden,
            motion,
        })
    }
}

/// All trainable tensors of the connector. The same struct doubles as the
/// gradient container since gradients share every shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectorParams<F> {
    /// `(K, D, D)` conv kernel, input dim in the middle.
    pub conv_w: Array3<F>,
    /// `(D,)` conv bias.
    pub conv_b: Array1<F>,
    pub wq: Array2<F>,
    pub wk: Array2<F>,
    pub wv: Array2<F>,
    pub wo: Array2<F>,
    /// `(D, D_m)` output head.
    pub lin_w: Array2<F>,
    /// `(D_m,)`.
    pub lin_b: Array1<F>,
}

impl<F: Scalar> ConnectorParams<F> {
    pub fn zeros(dims: ConnectorDims) -> Self {
        let d = dims.hidden;
        ConnectorParams {
            conv_w: Array3::zeros((dims.kernel, d, d)),
            conv_b: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
            lin_w: Array2::zeros((d, dims.motion)),
            lin_b: Array1::zeros(dims.motion),
        }
    }

    /// Gaussian init, deterministic per seed.
    pub fn init(dims: ConnectorDims, seed: u64, sigma: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("valid normal");
        let mut draw = |_: ()| fl::<F>(normal.sample(&mut rng));
        let d = dims.hidden;
        ConnectorParams {
            conv_w: Array3::from_shape_fn((dims.kernel, d, d), |_| draw(())),
            conv_b: Array1::from_shape_fn(d, |_| draw(())),
            wq: Array2::from_shape_fn((d, d), |_| draw(())),
            wk: Array2::from_shape_fn((d, d), |_| draw(())),
            wv: Array2::from_shape_fn((d, d), |_| draw(())),
            wo: Array2::from_shape_fn((d, d), |_| draw(())),
            lin_w: Array2::from_shape_fn((d, dims.motion), |_| draw(())),
            lin_b: Array1::from_shape_fn(dims.motion, |_| draw(())),
        }
    }

    pub fn dims(&self) -> ConnectorDims {
        ConnectorDims {
            kernel: self.conv_w.dim().0,
            hidden: self.conv_w.dim().1,
            motion: self.lin_w.dim().1,
        }
    }

    /// Flatten every tensor into one vector, fixed order.
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::new();
        out.extend(self.conv_w.iter().copied());
        out.extend(self.conv_b.iter().copied());
        out.extend(self.wq.iter().copied());
        out.extend(self.wk.iter().copied());
        out.extend(self.wv.iter().copied());
        out.extend(self.wo.iter().copied());
        out.extend(self.lin_w.iter().copied());
        out.extend(self.lin_b.iter().copied());
        out
    }

    pub fn from_flat(dims: ConnectorDims, flat: &[F]) -> Result<Self> {
        let d = dims.hidden;
        let sizes = [
            dims.kernel * d * d,
            d,
            d * d,
            d * d,
            d * d,
            d * d,
            d * dims.motion,
            dims.motion,
        ];
        let total: usize = sizes.iter().sum();
        if flat.len() != total {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} values, expected {total}",
                flat.len()
            )));
        }
        let mut off = 0usize;
        let mut take = |len: usize| {
            let s = flat[off..off + len].to_vec();
            off += len;
            s
        };
        Ok(ConnectorParams {
            conv_w: Array3::from_shape_vec((dims.kernel, d, d), take(sizes[0])).unwrap(),
            conv_b: Array1::from_vec(take(sizes[1])),
            wq: Array2::from_shape_vec((d, d), take(sizes[2])).unwrap(),
            wk: Array2::from_shape_vec((d, d), take(sizes[3])).unwrap(),
            wv: Array2::from_shape_vec((d, d), take(sizes[4])).unwrap(),
            wo: Array2::from_shape_vec((d, d), take(sizes[5])).unwrap(),
            lin_w: Array2::from_shape_vec((d, dims.motion), take(sizes[6])).unwrap(),
            lin_b: Array1::from_vec(take(sizes[7])),
        })
    }
}

/// Context states plus ground-truth motion targets for one training crop.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentBatch<F> {
    /// `(N, D)` hidden states sliced at the meta-query positions.
    pub hidden: Array2<F>,
    /// `(N, D_m)` target motion vectors.
    pub target: Array2<F>,
}

impl<F: Scalar> AlignmentBatch<F> {
    pub fn new(hidden: Array2<F>, target: Array2<F>) -> Result<Self> {
        if hidden.dim().0 != target.dim().0 {
            return Err(Error::Shape("hidden and target disagree on N".into()));
        }
        if hidden.dim().0 == 0 {
            return Err(Error::Invalid(
                "batch must contain at least one frame".into(),
            ));
        }
        Ok(AlignmentBatch { hidden, target })
    }
}

fn conv1d_same<F: Scalar>(x: &Array2<F>, w: &Array3<F>, b: &Array1<F>) -> Array2<F> {
    let (n, d_in) = x.dim();
    let (k, _, d_out) = w.dim();
    let c = k / 2;
    let mut out = Array2::<F>::zeros((n, d_out));
    for t in 0..n {
        for o in 0..d_out {
            let mut acc = b[o];
            for kk in 0..k {
                let src = t as isize + kk as isize - c as isize;
                if src < 0 || src >= n as isize {
                    continue;
                }
                let src = src as usize;
                for i in 0..d_in {
                    acc = acc + x[(src, i)] * w[(kk, i, o)];
                }
            }
            out[(t, o)] = acc;
        }
    }
    out
}

fn softmax_rows<F: Scalar>(s: &Array2<F>) -> Array2<F> {
    let mut out = s.clone();
    for mut row in out.rows_mut() {
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
    out
}

struct ForwardTrace<F> {
    h1: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    attn: Array2<F>,
    attended: Array2<F>,
    h2: Array2<F>,
    pred: Array2<F>,
}

fn forward_trace<F: Scalar>(
    params: &ConnectorParams<F>,
    hidden: &Array2<F>,
) -> Result<ForwardTrace<F>> {
    let d = params.dims().hidden;
    if hidden.dim().1 != d {
        return Err(Error::Shape(format!(
            "hidden width {} does not match connector width {d}",
            hidden.dim().1
        )));
    }
    if hidden.dim().0 == 0 {
        return Err(Error::Invalid("empty sequence".into()));
    }
    let pre = conv1d_same(hidden, &params.conv_w, &params.conv_b);
    let h1 = pre.mapv(|v| v.tanh());
    let q = h1.dot(&params.wq);
    let k = h1.dot(&params.wk);
    let v = h1.dot(&params.wv);
    let scale = F::one() / fl::<F>((d as f64).sqrt());
    let scores = q.dot(&k.t()).mapv(|x| x * scale);
    let attn = softmax_rows(&scores);
    let attended = attn.dot(&v);
    let proj = attended.dot(&params.wo);
    let h2 = &h1 + &proj;
    let pred = h2.dot(&params.lin_w) + &params.lin_b;
    Ok(ForwardTrace {
        h1,
        q,
        k,
        v,
        attn,
        attended,
        h2,
        pred,
    })
}

/// `m_hat = h2 * W_lin + b` where `h1 = tanh(conv1d(hidden))` and
/// `h2 = h1 + selfattention(h1)`.
pub fn connector_forward<F: Scalar>(
    params: &ConnectorParams<F>,
    hidden: &Array2<F>,
) -> Result<Array2<F>> {
    Ok(forward_trace(params, hidden)?.pred)
}

/// Pointwise mean-squared error plus mean-squared error of the first
/// temporal differences (forward difference, `x_{t+1} - x_t`). The temporal
/// term vanishes for `N = 1`.
pub fn alignment_loss<F: Scalar>(target: &Array2<F>, pred: &Array2<F>) -> Result<F> {
    alignment_loss_weighted(target, pred, F::one())
}

/// [`alignment_loss`] with an explicit weight on the temporal term. The
/// unweighted sum (weight 1) is the canonical objective.
pub fn alignment_loss_weighted<F: Scalar>(
    target: &Array2<F>,
    pred: &Array2<F>,
    temporal_weight: F,
) -> Result<F> {
    if target.dim() != pred.dim() {
        return Err(Error::Shape(format!(
            "target {:?} and prediction {:?} shapes differ",
            target.dim(),
            pred.dim()
        )));
    }
    let (n, dm) = target.dim();
    if n == 0 {
        return Err(Error::Invalid("empty sequence".into()));
    }
    let mut point = F::zero();
    for (&m, &p) in target.iter().zip(pred.iter()) {
        let e = p - m;
        point = point + e * e;
    }
    point = point / fl::<F>((n * dm) as f64);
    if n == 1 {
        return Ok(point);
    }
    let mut temporal = F::zero();
    for t in 0..n - 1 {
        for j in 0..dm {
            let dp = pred[(t + 1, j)] - pred[(t, j)];
            let dm_ = target[(t + 1, j)] - target[(t, j)];
            let e = dp - dm_;
            temporal = temporal + e * e;
        }
    }
    temporal = temporal / fl::<F>(((n - 1) * dm) as f64);
    Ok(point + temporal_weight * temporal)
}

fn loss_grad_wrt_pred<F: Scalar>(target: &Array2<F>, pred: &Array2<F>) -> Array2<F> {
    let (n, dm) = target.dim();
    let mut g = Array2::<F>::zeros((n, dm));
    let cp = fl::<F>(2.0 / (n * dm) as f64);
    for t in 0..n {
        for j in 0..dm {
            g[(t, j)] = cp * (pred[(t, j)] - target[(t, j)]);
        }
    }
    if n > 1 {
        let ct = fl::<F>(2.0 / ((n - 1) * dm) as f64);
        for t in 0..n - 1 {
            for j in 0..dm {
                let e = (pred[(t + 1, j)] - pred[(t, j)]) - (target[(t + 1, j)] - target[(t, j)]);
                g[(t + 1, j)] = g[(t + 1, j)] + ct * e;
                g[(t, j)] = g[(t, j)] - ct * e;
            }
        }
    }
    g
}

/// Loss and analytic gradient of [`alignment_loss`] composed with
/// [`connector_forward`], with respect to every parameter tensor.
pub fn alignment_grad<F: Scalar>(
    params: &ConnectorParams<F>,
    batch: &AlignmentBatch<F>,
) -> Result<(F, ConnectorParams<F>)> {
    let dims = params.dims();
    let d = dims.hidden;
    let tr = forward_trace(params, &batch.hidden)?;
    let loss = alignment_loss(&batch.target, &tr.pred)?;

    let g_pred = loss_grad_wrt_pred(&batch.target, &tr.pred);

    // Linear head.
    let d_lin_w = tr.h2.t().dot(&g_pred);
    let d_lin_b = g_pred.sum_axis(Axis(0));
    let d_h2 = g_pred.dot(&params.lin_w.t());

    // Residual branch: h2 = h1 + attended * Wo.
    let d_proj = d_h2.clone();
    let d_wo = tr.attended.t().dot(&d_proj);
    let d_attended = d_proj.dot(&params.wo.t());

    // Attention: attended = attn * v, attn = softmax(q k^T / sqrt(d)).
    let d_attn = d_attended.dot(&tr.v.t());
    let d_v = tr.attn.t().dot(&d_attended);
    let mut d_scores = Array2::<F>::zeros(tr.attn.dim());
    for i in 0..tr.attn.dim().0 {
        let mut inner = F::zero();
        for j in 0..tr.attn.dim().1 {
            inner = inner + tr.attn[(i, j)] * d_attn[(i, j)];
        }
        for j in 0..tr.attn.dim().1 {
            d_scores[(i, j)] = tr.attn[(i, j)] * (d_attn[(i, j)] - inner);
        }
    }
    let scale = F::one() / fl::<F>((d as f64).sqrt());
    let d_q = d_scores.dot(&tr.k).mapv(|x| x * scale);
    let d_k = d_scores.t().dot(&tr.q).mapv(|x| x * scale);
    let d_wq = tr.h1.t().dot(&d_q);
    let d_wk = tr.h1.t().dot(&d_k);
    let d_wv = tr.h1.t().dot(&d_v);

    let mut d_h1 = d_h2; // identity path of the residual
    d_h1 = d_h1 + d_q.dot(&params.wq.t());
    d_h1 = d_h1 + d_k.dot(&params.wk.t());
    d_h1 = d_h1 + d_v.dot(&params.wv.t());

    // tanh.
    let d_pre = &d_h1 * &tr.h1.mapv(|h| F::one() - h * h);

    // Conv.
    let (n, _) = batch.hidden.dim();
    let kernel = dims.kernel;
    let c = kernel / 2;
    let mut d_conv_w = Array3::<F>::zeros((kernel, d, d));
    let mut d_conv_b = Array1::<F>::zeros(d);
    for t in 0..n {
        for o in 0..d {
            let g = d_pre[(t, o)];
            d_conv_b[o] = d_conv_b[o] + g;
            for kk in 0..kernel {
                let src = t as isize + kk as isize - c as isize;
                if src < 0 || src >= n as isize {
                    continue;
                }
                let src = src as usize;
                for i in 0..d {
                    d_conv_w[(kk, i, o)] = d_conv_w[(kk, i, o)] + batch.hidden[(src, i)] * g;
                }
            }
        }
    }

    Ok((
        loss,
        ConnectorParams {
            conv_w: d_conv_w,
            conv_b: d_conv_b,
            wq: d_wq,
            wk: d_wk,
            wv: d_wv,
            wo: d_wo,
            lin_w: d_lin_w,
            lin_b: d_lin_b,
        },
    ))
}

/// Central finite-difference gradient of the same objective. Only touches
/// the forward pass, so it stays independent of the analytic backward path.
pub fn finite_difference_grad<F: Scalar>(
    params: &ConnectorParams<F>,
    batch: &AlignmentBatch<F>,
    eps: F,
) -> Result<ConnectorParams<F>> {
    let dims = params.dims();
    let base = params.flatten();
    let mut grad = vec![F::zero(); base.len()];
    let mut work = base.clone();
    for i in 0..base.len() {
        work[i] = base[i] + eps;
        let plus = {
            let p = ConnectorParams::from_flat(dims, &work)?;
            alignment_loss(&batch.target, &connector_forward(&p, &batch.hidden)?)?
        };
        work[i] = base[i] - eps;
        let minus = {
            let p = ConnectorParams::from_flat(dims, &work)?;
            alignment_loss(&batch.target, &connector_forward(&p, &batch.hidden)?)?
        };
        work[i] = base[i];
        grad[i] = (plus - minus) / (fl::<F>(2.0) * eps);
    }
    ConnectorParams::from_flat(dims, &grad)
}

/// Max elementwise relative error between the analytic and finite-difference
/// gradients, `|a - n| / max(|a| + |n|, 1e-3)`.
///
/// The denominator floor absorbs the roundoff carried by the central
/// difference itself (about `ulp(loss) / (2 eps)`, circa 1e-11 here), which
/// otherwise dominates entries whose true gradient is near zero. Real
/// defects produce errors on the scale of the gradient and stay visible.
pub fn gradient_check<F: Scalar>(
    params: &ConnectorParams<F>,
    batch: &AlignmentBatch<F>,
    eps: F,
) -> Result<F> {
    let (_, analytic) = alignment_grad(params, batch)?;
    let numeric = finite_difference_grad(params, batch, eps)?;
    let a = analytic.flatten();
    let n = numeric.flatten();
    let floor = fl::<F>(1e-3);
    let mut worst = F::zero();
    for (&x, &y) in a.iter().zip(&n) {
        let rel = (x - y).abs() / (x.abs() + y.abs()).max(floor);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub kernel: usize,
    /// Parameter init scale.
    pub init_sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            lr: 1e-2,
            seed: 0,
            kernel: 3,
            init_sigma: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub params: ConnectorParams<F>,
    /// Full-batch loss before each step plus one final entry, `steps + 1`
    /// values.
    pub trace: Vec<F>,
}

fn dataset_loss_grad<F: Scalar>(
    params: &ConnectorParams<F>,
    dataset: &[AlignmentBatch<F>],
) -> Result<(F, Vec<F>)> {
    let mut total = F::zero();
    let mut grad = vec![F::zero(); params.flatten().len()];
    for batch in dataset {
        let (loss, g) = alignment_grad(params, batch)?;
        total = total + loss;
        for (acc, v) in grad.iter_mut().zip(g.flatten()) {
            *acc = *acc + v;
        }
    }
    let scale = F::one() / fl::<F>(dataset.len() as f64);
    for v in grad.iter_mut() {
        *v = *v * scale;
    }
    Ok((total * scale, grad))
}

/// Full-batch gradient descent on the alignment objective. Deterministic
/// for a fixed config; aborts on a non-finite loss.
pub fn train_connector<F: Scalar>(
    dataset: &[AlignmentBatch<F>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    if dataset.is_empty() {
        return Err(Error::Invalid("training dataset is empty".into()));
    }
    let d = dataset[0].hidden.dim().1;
    let dm = dataset[0].target.dim().1;
    for b in dataset {
        if b.hidden.dim().1 != d || b.target.dim().1 != dm {
            return Err(Error::Shape("dataset batches disagree on widths".into()));
        }
    }
    let dims = ConnectorDims::new(cfg.kernel, d, dm)?;
    let mut params = ConnectorParams::<F>::init(dims, cfg.seed, cfg.init_sigma);
    let lr = fl::<F>(cfg.lr);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    for step in 0..cfg.steps {
        let (loss, grad) = dataset_loss_grad(&params, dataset)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                loss: loss.to_f64().unwrap_or(f64::NAN),
            });
        }
        trace.push(loss);
        let mut flat = params.flatten();
        for (p, g) in flat.iter_mut().zip(&grad) {
            *p = *p - lr * *g;
        }
        params = ConnectorParams::from_flat(dims, &flat)?;
    }
    let (final_loss, _) = dataset_loss_grad(&params, dataset)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            step: cfg.steps,
            loss: final_loss.to_f64().unwrap_or(f64::NAN),
        });
    }
    trace.push(final_loss);
    Ok(TrainOutcome { params, trace })
}

/// A learnable-in-principle linear task: targets are `hidden * w_star`, so a
/// near-linear connector can drive the loss toward zero.
pub fn synthetic_linear_task<F: Scalar>(
    seed: u64,
    batches: usize,
    n: usize,
    d: usize,
    dm: usize,
) -> Vec<AlignmentBatch<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_noise = Normal::new(0.0, 1.0).expect("valid normal");
    let w_noise = Normal::new(0.0, 0.5).expect("valid normal");
    let w_star = Array2::from_shape_fn((d, dm), |_| fl::<F>(w_noise.sample(&mut rng)));
    (0..batches)
        .map(|_| {
            let hidden = Array2::from_shape_fn((n, d), |_| fl::<F>(x_noise.sample(&mut rng)));
            let target = hidden.dot(&w_star);
            AlignmentBatch { hidden, target }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// On-disk dataset layout: manifest.json + hidden_*.idlt / target_*.idlt
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignManifest {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "D_m")]
    pub d_m: usize,
    pub fps: u32,
}

/// Write batches as paired IDLT files plus a manifest.
pub fn write_alignment_dir<F: Scalar>(
    dir: impl AsRef<Path>,
    manifest: &AlignManifest,
    dataset: &[AlignmentBatch<F>],
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut out = BufWriter::new(File::create(dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut out, manifest)
        .map_err(|e| Error::format(dir.join("manifest.json"), e.to_string()))?;
    out.flush()?;
    for (i, batch) in dataset.iter().enumerate() {
        write_idlt(
            dir.join(format!("hidden_{i:03}.idlt")),
            &matrix_to_grid(&batch.hidden)?,
        )?;
        write_idlt(
            dir.join(format!("target_{i:03}.idlt")),
            &matrix_to_grid(&batch.target)?,
        )?;
    }
    Ok(())
}

/// Load every `hidden_*/target_*` pair in lexicographic order and validate
/// against the manifest.
pub fn read_alignment_dir<F: Scalar>(
    dir: impl AsRef<Path>,
) -> Result<(AlignManifest, Vec<AlignmentBatch<F>>)> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    let manifest: AlignManifest =
        serde_json::from_reader(BufReader::new(File::open(&manifest_path)?))
            .map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("hidden_") && n.ends_with(".idlt"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Invalid(format!(
            "no hidden_*.idlt files in {}",
            dir.display()
        )));
    }
    let mut dataset = Vec::with_capacity(names.len());
    for name in names {
        let hidden = grid_to_matrix(&read_idlt::<F>(dir.join(&name))?)?;
        let target_name = name.replacen("hidden_", "target_", 1);
        let target = grid_to_matrix(&read_idlt::<F>(dir.join(&target_name))?)?;
        if hidden.dim() != (manifest.n, manifest.d) {
            return Err(Error::format(
                dir.join(&name),
                "shape disagrees with manifest",
            ));
        }
        if target.dim() != (manifest.n, manifest.d_m) {
            return Err(Error::format(
                dir.join(&target_name),
                "shape disagrees with manifest",
            ));
        }
        dataset.push(AlignmentBatch::new(hidden, target)?);
    }
    Ok((manifest, dataset))
}

/// Write a `step,loss` CSV trace.
pub fn write_loss_trace<F: Scalar>(path: impl AsRef<Path>, trace: &[F]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    writeln!(out, "step,loss")?;
    for (i, loss) in trace.iter().enumerate() {
        writeln!(out, "{i},{loss}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_batch(seed: u64, n: usize, d: usize, dm: usize) -> AlignmentBatch<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AlignmentBatch {
            hidden: Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0)),
            target: Array2::from_shape_fn((n, dm), |_| rng.gen_range(-1.0..1.0)),
        }
    }

    fn random_params(seed: u64, dims: ConnectorDims) -> ConnectorParams<f64> {
        ConnectorParams::init(dims, seed, 0.3)
    }

    #[test]
    fn zero_params_broadcast_bias() {
        let dims = ConnectorDims::new(3, 6, 3).unwrap();
        let mut params = ConnectorParams::<f64>::zeros(dims);
        params.lin_b = Array1::from_vec(vec![0.5, -1.0, 2.0]);
        let hidden = random_batch(1, 5, 6, 3).hidden;
        let pred = connector_forward(&params, &hidden).unwrap();
        for t in 0..5 {
            assert_eq!(pred[(t, 0)], 0.5);
            assert_eq!(pred[(t, 1)], -1.0);
            assert_eq!(pred[(t, 2)], 2.0);
        }
    }

    #[test]
    fn single_frame_sequence_is_well_defined() {
        let dims = ConnectorDims::new(3, 4, 2).unwrap();
        let params = random_params(2, dims);
        let batch = random_batch(3, 1, 4, 2);
        let pred = connector_forward(&params, &batch.hidden).unwrap();
        assert_eq!(pred.dim(), (1, 2));
        assert!(pred.iter().all(|v| v.is_finite()));
        // Temporal term must vanish for N = 1.
        let loss = alignment_loss(&batch.target, &pred).unwrap();
        let mut point = 0.0;
        for j in 0..2 {
            let e = pred[(0, j)] - batch.target[(0, j)];
            point += e * e;
        }
        assert!((loss - point / 2.0).abs() < 1e-15);
    }

    #[test]
    fn independent_sequences_permute_with_the_batch() {
        let dims = ConnectorDims::new(3, 5, 2).unwrap();
        let params = random_params(4, dims);
        let a = random_batch(5, 6, 5, 2);
        let b = random_batch(6, 6, 5, 2);
        let pa = connector_forward(&params, &a.hidden).unwrap();
        let pb = connector_forward(&params, &b.hidden).unwrap();
        // Processing them in the other order changes nothing.
        let pb2 = connector_forward(&params, &b.hidden).unwrap();
        let pa2 = connector_forward(&params, &a.hidden).unwrap();
        assert_eq!(pa, pa2);
        assert_eq!(pb, pb2);
    }

    #[test]
    fn loss_examples_by_hand() {
        // Exact match.
        let m = Array2::from_shape_vec((2, 1), vec![0.0f64, 0.0]).unwrap();
        assert_eq!(alignment_loss(&m, &m).unwrap(), 0.0);
        // Constant offset: temporal term vanishes.
        let mhat = m.mapv(|v| v + 0.7);
        assert!((alignment_loss(&m, &mhat).unwrap() - 0.49).abs() < 1e-12);
        // N=2, D_m=1, m=(0,0), m_hat=(0,1): 0.5 + 1.0.
        let mhat = Array2::from_shape_vec((2, 1), vec![0.0, 1.0]).unwrap();
        assert!((alignment_loss(&m, &mhat).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn temporal_weight_scales_only_the_difference_term() {
        let m = Array2::from_shape_vec((2, 1), vec![0.0f64, 0.0]).unwrap();
        let pred = Array2::from_shape_vec((2, 1), vec![0.0f64, 1.0]).unwrap();
        // Pointwise 0.5, temporal 1.0.
        assert!((alignment_loss_weighted(&m, &pred, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((alignment_loss_weighted(&m, &pred, 2.0).unwrap() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn loss_is_time_reversal_invariant() {
        let a = random_batch(7, 6, 3, 3);
        let pred = random_batch(8, 6, 3, 3).target;
        let rev = |m: &Array2<f64>| {
            let n = m.dim().0;
            let mut out = m.clone();
            for t in 0..n {
                out.row_mut(t).assign(&m.row(n - 1 - t));
            }
            out
        };
        let l1 = alignment_loss(&a.target, &pred).unwrap();
        let l2 = alignment_loss(&rev(&a.target), &rev(&pred)).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn temporal_term_ignores_constant_offsets() {
        let m = random_batch(9, 5, 3, 2).target;
        let pred = random_batch(10, 5, 3, 2).target;
        let temporal = |m: &Array2<f64>, p: &Array2<f64>| {
            alignment_loss(m, p).unwrap() - {
                let (n, dm) = m.dim();
                let mut point = 0.0;
                for (a, b) in m.iter().zip(p.iter()) {
                    point += (b - a) * (b - a);
                }
                point / (n * dm) as f64
            }
        };
        let shifted = pred.mapv(|v| v + 3.25);
        assert!((temporal(&m, &pred) - temporal(&m, &shifted)).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..8u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
            let n = rng.gen_range(1..=8usize);
            let d = rng.gen_range(2..=16usize);
            let dm = rng.gen_range(1..=8usize);
            let dims = ConnectorDims::new(3, d, dm).unwrap();
            let params = random_params(30 + seed, dims);
            let batch = random_batch(60 + seed, n, d, dm);
            let err = gradient_check(&params, &batch, 1e-5).unwrap();
            assert!(err < 1e-5, "seed {seed}: max rel err {err}");
        }
    }

    #[test]
    fn zero_loss_means_zero_gradient() {
        // Zero net + matching zero target: loss 0 at a stationary point.
        let dims = ConnectorDims::new(3, 4, 2).unwrap();
        let params = ConnectorParams::<f64>::zeros(dims);
        let hidden = random_batch(11, 4, 4, 2).hidden;
        let target = Array2::<f64>::zeros((4, 2));
        let batch = AlignmentBatch { hidden, target };
        let (loss, grad) = alignment_grad(&params, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn residual_doubling_doubles_linear_gradient() {
        let dims = ConnectorDims::new(3, 4, 2).unwrap();
        let params = random_params(12, dims);
        let batch = random_batch(13, 1, 4, 2);
        let pred = connector_forward(&params, &batch.hidden).unwrap();
        // Targets chosen so the residual doubles while the Jacobian of the
        // prediction (fixed params) stays put. N = 1 kills the temporal term.
        let t1 = &pred - &Array2::from_elem(pred.dim(), 0.5);
        let t2 = &pred - &Array2::from_elem(pred.dim(), 1.0);
        let b1 = AlignmentBatch {
            hidden: batch.hidden.clone(),
            target: t1,
        };
        let b2 = AlignmentBatch {
            hidden: batch.hidden.clone(),
            target: t2,
        };
        let (_, g1) = alignment_grad(&params, &b1).unwrap();
        let (_, g2) = alignment_grad(&params, &b2).unwrap();
        for (a, b) in g1.lin_w.iter().zip(g2.lin_w.iter()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let dataset = synthetic_linear_task::<f64>(1, 2, 4, 5, 2);
        let cfg = TrainConfig {
            steps: 5,
            lr: 0.0,
            ..TrainConfig::default()
        };
        let out = train_connector(&dataset, &cfg).unwrap();
        let virgin = ConnectorParams::<f64>::init(
            ConnectorDims::new(cfg.kernel, 5, 2).unwrap(),
            cfg.seed,
            cfg.init_sigma,
        );
        assert_eq!(out.params, virgin);
        assert!(out.trace.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn full_batch_descent_ignores_dataset_order() {
        let dataset = synthetic_linear_task::<f64>(2, 2, 5, 4, 2);
        let swapped = vec![dataset[1].clone(), dataset[0].clone()];
        let cfg = TrainConfig {
            steps: 20,
            ..TrainConfig::default()
        };
        let a = train_connector(&dataset, &cfg).unwrap();
        let b = train_connector(&swapped, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn linear_task_trains_below_one_percent() {
        let dataset = synthetic_linear_task::<f64>(3, 4, 8, 8, 4);
        let cfg = TrainConfig {
            steps: 2000,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let out = train_connector(&dataset, &cfg).unwrap();
        let initial = out.trace[0];
        let final_loss = *out.trace.last().unwrap();
        assert!(
            final_loss < 0.01 * initial,
            "loss only fell from {initial} to {final_loss}"
        );
    }

    #[test]
    fn runaway_learning_rate_aborts_with_a_diagnostic() {
        let dataset = synthetic_linear_task::<f64>(6, 2, 6, 6, 3);
        let cfg = TrainConfig {
            steps: 400,
            lr: 1e8,
            ..TrainConfig::default()
        };
        match train_connector(&dataset, &cfg) {
            Err(crate::error::Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn meta_queries_are_deterministic_and_centered() {
        let a = build_meta_queries::<f64>(5, 64, 1).unwrap();
        let b = build_meta_queries::<f64>(5, 64, 1).unwrap();
        assert_eq!(a, b);
        let big = build_meta_queries::<f64>(1000, 1000, 2).unwrap();
        let mean = big.queries.iter().sum::<f64>() / 1e6;
        assert!(mean.abs() < 3.0 * META_QUERY_SIGMA / 1000.0, "mean {mean}");
    }

    #[test]
    fn alignment_dir_round_trips() {
        let dataset = synthetic_linear_task::<f64>(4, 3, 6, 5, 3);
        let manifest = AlignManifest {
            n: 6,
            d: 5,
            d_m: 3,
            fps: 25,
        };
        let dir = tempfile::tempdir().unwrap();
        write_alignment_dir(dir.path(), &manifest, &dataset).unwrap();
        let (m2, back) = read_alignment_dir::<f64>(dir.path()).unwrap();
        assert_eq!(manifest, m2);
        assert_eq!(back.len(), dataset.len());
        for (a, b) in dataset.iter().zip(&back) {
            for (x, y) in a.hidden.iter().zip(b.hidden.iter()) {
                assert!((x - y).abs() < 1e-6); // f32 storage
            }
        }
    }
}
