//! Spatio-temporal latent grids and the IDLT binary format.
//!
//! A [`LatentGrid`] is a dense `C x T x H x W` array in row-major order with
//! `C` slowest. On disk it is stored as the magic bytes `IDLT`, four
//! little-endian `u32` dims `(C, T, H, W)`, then `C*T*H*W` little-endian
//! `f32` values.

use crate::error::{Error, Result};
use crate::num::{fl, Scalar};
use ndarray::Array2;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

pub const IDLT_MAGIC: &[u8; 4] = b"IDLT";

/// Grid dimensions `(C, T, H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub c: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(c: usize, t: usize, h: usize, w: usize) -> Self {
        Dims { c, t, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.t * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        if self.c == 0 || self.t == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::Invalid(format!(
                "latent dims must be positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid<F> {
    dims: Dims,
    data: Vec<F>,
}

impl<F: Scalar> LatentGrid<F> {
    pub fn new(dims: Dims, data: Vec<F>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::Shape(format!(
                "latent data length {} does not match dims {:?} ({} values)",
                data.len(),
                dims,
                dims.len()
            )));
        }
        Ok(LatentGrid { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        LatentGrid {
            dims,
            data: vec![F::zero(); dims.len()],
        }
    }

    pub fn filled(dims: Dims, value: F) -> Self {
        LatentGrid {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> F) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for c in 0..dims.c {
            for t in 0..dims.t {
                for h in 0..dims.h {
                    for w in 0..dims.w {
                        data.push(f(c, t, h, w));
                    }
                }
            }
        }
        LatentGrid { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    #[inline]
    fn index(&self, c: usize, t: usize, h: usize, w: usize) -> usize {
        ((c * self.dims.t + t) * self.dims.h + h) * self.dims.w + w
    }

    #[inline]
    pub fn at(&self, c: usize, t: usize, h: usize, w: usize) -> F {
        self.data[self.index(c, t, h, w)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, h: usize, w: usize, value: F) {
        let i = self.index(c, t, h, w);
        self.data[i] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        LatentGrid {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two grids with identical dims.
    pub fn zip_with(&self, other: &Self, f: impl Fn(F, F) -> F) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "grid dims differ: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(LatentGrid {
            dims: self.dims,
            data,
        })
    }

    /// Copy of the frame range `[range.start, range.end)` as its own grid.
    pub fn frames(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.dims.t {
            return Err(Error::Invalid(format!(
                "frame range {range:?} out of bounds for T={}",
                self.dims.t
            )));
        }
        let nt = range.end - range.start;
        let out_dims = Dims::new(self.dims.c, nt, self.dims.h, self.dims.w);
        let plane = self.dims.h * self.dims.w;
        let mut data = Vec::with_capacity(out_dims.len());
        for c in 0..self.dims.c {
            let base = (c * self.dims.t + range.start) * plane;
            data.extend_from_slice(&self.data[base..base + nt * plane]);
        }
        Ok(LatentGrid {
            dims: out_dims,
            data,
        })
    }

    /// Overwrite frames starting at `start` with the frames of `src`.
    pub fn write_frames(&mut self, start: usize, src: &Self) -> Result<()> {
        if src.dims.c != self.dims.c || src.dims.h != self.dims.h || src.dims.w != self.dims.w {
            return Err(Error::Shape(
                "frame write: channel/spatial dims differ".into(),
            ));
        }
        if start + src.dims.t > self.dims.t {
            return Err(Error::Invalid(format!(
                "frame write [{start}, {}) exceeds T={}",
                start + src.dims.t,
                self.dims.t
            )));
        }
        let plane = self.dims.h * self.dims.w;
        for c in 0..self.dims.c {
            let dst_base = (c * self.dims.t + start) * plane;
            let src_base = c * src.dims.t * plane;
            let n = src.dims.t * plane;
            self.data[dst_base..dst_base + n].copy_from_slice(&src.data[src_base..src_base + n]);
        }
        Ok(())
    }

    /// `self[t] += scale * v[t]` for every frame `t >= first_frame`.
    ///
    /// Frames below `first_frame` are left bit-untouched, which is what pins
    /// anchored context frames through an integration step.
    pub fn add_scaled_frames(&mut self, v: &Self, scale: F, first_frame: usize) -> Result<()> {
        if self.dims != v.dims {
            return Err(Error::Shape(format!(
                "grid dims differ: {:?} vs {:?}",
                self.dims, v.dims
            )));
        }
        let plane = self.dims.h * self.dims.w;
        for c in 0..self.dims.c {
            for t in first_frame..self.dims.t {
                let base = (c * self.dims.t + t) * plane;
                for i in base..base + plane {
                    self.data[i] = self.data[i] + scale * v.data[i];
                }
            }
        }
        Ok(())
    }

    pub fn cast<G: Scalar>(&self) -> LatentGrid<G> {
        LatentGrid {
            dims: self.dims,
            data: self
                .data
                .iter()
                .map(|&v| G::from(v).expect("scalar cast"))
                .collect(),
        }
    }
}

/// Pack an `N x D` matrix into a `(1, N, 1, D)` grid so that token sequences
/// and motion latents share the IDLT container.
pub fn matrix_to_grid<F: Scalar>(m: &Array2<F>) -> Result<LatentGrid<F>> {
    let (n, d) = m.dim();
    LatentGrid::new(Dims::new(1, n, 1, d), m.iter().copied().collect())
}

/// Inverse of [`matrix_to_grid`]; accepts any grid with `C == H == 1`.
pub fn grid_to_matrix<F: Scalar>(g: &LatentGrid<F>) -> Result<Array2<F>> {
    let d = g.dims();
    if d.c != 1 || d.h != 1 {
        return Err(Error::Shape(format!(
            "grid {:?} is not a packed matrix (need C=1, H=1)",
            d
        )));
    }
    Array2::from_shape_vec((d.t, d.w), g.data().to_vec()).map_err(|e| Error::Shape(e.to_string()))
}

pub fn write_idlt<F: Scalar>(path: impl AsRef<Path>, grid: &LatentGrid<F>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    out.write_all(IDLT_MAGIC)?;
    let d = grid.dims();
    for v in [d.c, d.t, d.h, d.w] {
        let v = u32::try_from(v)
            .map_err(|_| Error::Invalid(format!("dim {v} exceeds u32 in IDLT header")))?;
        out.write_all(&v.to_le_bytes())?;
    }
    for &v in grid.data() {
        let v32 = v.to_f32().unwrap_or(f32::NAN);
        out.write_all(&v32.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_idlt<F: Scalar>(path: impl AsRef<Path>) -> Result<LatentGrid<F>> {
    let path = path.as_ref();
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != IDLT_MAGIC {
        return Err(Error::format(path, "bad magic, expected IDLT"));
    }
    let mut dim_bytes = [0u8; 16];
    input.read_exact(&mut dim_bytes)?;
    let dim =
        |i: usize| u32::from_le_bytes(dim_bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let dims = Dims::new(dim(0), dim(1), dim(2), dim(3));
    dims.validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut payload = Vec::with_capacity(dims.len());
    let mut buf = [0u8; 4];
    for _ in 0..dims.len() {
        input
            .read_exact(&mut buf)
            .map_err(|_| Error::format(path, "truncated payload"))?;
        let v = f32::from_le_bytes(buf);
        if !v.is_finite() {
            return Err(Error::format(path, "non-finite value in payload"));
        }
        payload.push(fl::<F>(v as f64));
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::format(path, "trailing bytes after payload"));
    }
    LatentGrid::new(dims, payload)
}
