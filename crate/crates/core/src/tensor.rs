//! Dense numeric primitives for the stylization pipeline.
//!
//! Storage is `f32` throughout. Reductions (dot products, means, variances)
//! accumulate in `f64` in a fixed order, so results are deterministic no
//! matter how many threads the row-parallel kernels use.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Default epsilon for instance normalization.
pub const DEFAULT_EPS: f32 = 1e-5;

/// Row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f32) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Elementwise map into a new matrix of the same shape.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0f32; n * m];
    out.par_chunks_mut(m.max(1))
        .take(n)
        .enumerate()
        .for_each(|(i, out_row)| {
            let a_row = &a.data[i * k..(i + 1) * k];
            let mut acc = vec![0f64; m];
            for (p, &av) in a_row.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let av = av as f64;
                let b_row = &b.data[p * m..(p + 1) * m];
                for (s, &bv) in acc.iter_mut().zip(b_row) {
                    *s += av * bv as f64;
                }
            }
            for (o, s) in out_row.iter_mut().zip(acc) {
                *o = s as f32;
            }
        });
    Ok(Matrix {
        rows: n,
        cols: m,
        data: out,
    })
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_transposed(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::DimensionMismatch(format!(
            "cannot multiply {}x{} by transpose of {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (n, k, m) = (a.rows, a.cols, b.rows);
    let mut out = vec![0f32; n * m];
    out.par_chunks_mut(m.max(1))
        .take(n)
        .enumerate()
        .for_each(|(i, out_row)| {
            let a_row = &a.data[i * k..(i + 1) * k];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = &b.data[j * k..(j + 1) * k];
                *o = dot(a_row, b_row);
            }
        });
    Ok(Matrix {
        rows: n,
        cols: m,
        data: out,
    })
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum::<f64>() as f32
}

/// A feature grid: `spatial_h * spatial_w` positions by `channels` values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    spatial_h: usize,
    spatial_w: usize,
    data: Matrix,
}

impl FeatureMap {
    pub fn new(spatial_h: usize, spatial_w: usize, data: Matrix) -> Result<Self> {
        if data.rows() != spatial_h * spatial_w {
            return Err(Error::DimensionMismatch(format!(
                "{spatial_h}x{spatial_w} grid needs {} rows, got {}",
                spatial_h * spatial_w,
                data.rows()
            )));
        }
        if data.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch(
                "feature map contains non-finite values".into(),
            ));
        }
        Ok(Self {
            spatial_h,
            spatial_w,
            data,
        })
    }

    pub fn from_vec(spatial_h: usize, spatial_w: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(spatial_h, spatial_w, Matrix::new(spatial_h * spatial_w, channels, data)?)
    }

    pub fn spatial_h(&self) -> usize {
        self.spatial_h
    }

    pub fn spatial_w(&self) -> usize {
        self.spatial_w
    }

    pub fn positions(&self) -> usize {
        self.spatial_h * self.spatial_w
    }

    pub fn channels(&self) -> usize {
        self.data.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn into_matrix(self) -> Matrix {
        self.data
    }

    pub fn get(&self, pos: usize, channel: usize) -> f32 {
        self.data.get(pos, channel)
    }

    fn with_data(&self, data: Matrix) -> FeatureMap {
        FeatureMap {
            spatial_h: self.spatial_h,
            spatial_w: self.spatial_w,
            data,
        }
    }
}

/// Per-channel mean and (population) variance over all spatial positions.
pub(crate) fn channel_moments(m: &Matrix, rows: impl Iterator<Item = usize> + Clone) -> Vec<(f64, f64)> {
    (0..m.cols())
        .map(|c| {
            let mut n = 0usize;
            let mut sum = 0f64;
            for r in rows.clone() {
                sum += m.get(r, c) as f64;
                n += 1;
            }
            let mean = sum / n.max(1) as f64;
            let var = rows
                .clone()
                .map(|r| {
                    let d = m.get(r, c) as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / n.max(1) as f64;
            (mean, var)
        })
        .collect()
}

/// Instance normalization: each channel standardized over all positions.
pub fn instance_norm(f: &FeatureMap, eps: f32) -> FeatureMap {
    let m = f.matrix();
    let moments = channel_moments(m, 0..m.rows());
    let scale: Vec<(f64, f64)> = moments
        .iter()
        .map(|&(mean, var)| (mean, 1.0 / (var + eps as f64).sqrt()))
        .collect();
    let out = Matrix::from_fn(m.rows(), m.cols(), |r, c| {
        let (mean, inv) = scale[c];
        ((m.get(r, c) as f64 - mean) * inv) as f32
    });
    f.with_data(out)
}

/// 1×1 convolution parameters: `weight` is `f_out x f_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1x1Params {
    pub weight: Matrix,
    pub bias: Vec<f32>,
}

impl Conv1x1Params {
    pub fn new(weight: Matrix, bias: Vec<f32>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Shape(format!(
                "bias has {} entries for {} output channels",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            weight: Matrix::identity(channels),
            bias: vec![0.0; channels],
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_channels(&self) -> usize {
        self.weight.rows()
    }
}

pub fn conv1x1(f: &FeatureMap, p: &Conv1x1Params) -> Result<FeatureMap> {
    if p.in_channels() != f.channels() {
        return Err(Error::ChannelMismatch {
            expected: p.in_channels(),
            got: f.channels(),
        });
    }
    let mut out = matmul_transposed(f.matrix(), &p.weight)?;
    for r in 0..out.rows() {
        for (v, b) in out.row_mut(r).iter_mut().zip(&p.bias) {
            *v += b;
        }
    }
    Ok(f.with_data(out))
}

/// Grid shapes of the content (rows) and style (columns) sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub h: usize,
    pub w: usize,
}

impl GridShape {
    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w }
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }
}

/// Content-position by style-position score matrix.
///
/// Pre-softmax maps may hold `f32::NEG_INFINITY` for masked entries.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    content: GridShape,
    style: GridShape,
    data: Matrix,
}

impl AttentionMap {
    pub fn new(content: GridShape, style: GridShape, data: Matrix) -> Result<Self> {
        if data.rows() != content.cells() || data.cols() != style.cells() {
            return Err(Error::DimensionMismatch(format!(
                "attention {}x{} does not match grids {}x{} / {}x{}",
                data.rows(),
                data.cols(),
                content.h,
                content.w,
                style.h,
                style.w
            )));
        }
        if data.as_slice().iter().any(|v| v.is_nan() || *v == f32::INFINITY) {
            return Err(Error::DimensionMismatch(
                "attention scores contain NaN or +inf".into(),
            ));
        }
        Ok(Self {
            content,
            style,
            data,
        })
    }

    /// Attention map over flat grids (`rows x 1` content, `cols x 1` style).
    pub fn from_matrix(data: Matrix) -> Self {
        Self {
            content: GridShape::new(data.rows(), 1),
            style: GridShape::new(data.cols(), 1),
            data,
        }
    }

    pub fn content_grid(&self) -> GridShape {
        self.content
    }

    pub fn style_grid(&self) -> GridShape {
        self.style
    }

    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    pub fn cols(&self) -> usize {
        self.data.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data.get(r, c)
    }

    pub fn row(&self, r: usize) -> &[f32] {
        self.data.row(r)
    }
}

/// Row-wise softmax with `-inf` entries mapped to exactly zero.
pub fn softmax_rows(scores: &AttentionMap) -> Result<AttentionMap> {
    let cols = scores.cols();
    let mut out = scores.data.clone();
    if cols == 0 {
        return Ok(AttentionMap { data: out, ..*scores });
    }
    out.as_mut_slice()
        .par_chunks_mut(cols)
        .enumerate()
        .try_for_each(|(row, values)| {
            let max = values
                .iter()
                .copied()
                .filter(|v| v.is_finite())
                .fold(f32::NEG_INFINITY, f32::max);
            if max == f32::NEG_INFINITY {
                return Err(Error::DegenerateRow { row });
            }
            let mut sum = 0f64;
            for v in values.iter_mut() {
                *v = (*v - max).exp();
                sum += *v as f64;
            }
            for v in values.iter_mut() {
                *v = (*v as f64 / sum) as f32;
            }
            Ok(())
        })?;
    Ok(AttentionMap { data: out, ..*scores })
}
