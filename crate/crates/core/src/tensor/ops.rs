//! Composite operations built from the primitive nodes. Layout-only ops
//! (transpose, slicing, im2col, upsampling, patch folding) all lower to a single
//! gather node, so their backward pass is the matching scatter-add.

use super::graph::{BinaryKind, GATHER_ZERO};
use super::{Graph, Var};
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Silu,
    Sigmoid,
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Silu => x * sigmoid(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Output side length of a convolution, or None when it would be non-positive.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

impl Graph {
    /// `x[n×in] · w[in×out] + b[out]`
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.binary(y, b, BinaryKind::Add),
            None => Ok(y),
        }
    }

    pub fn mse(&mut self, prediction: Var, target: Var) -> Result<Var> {
        let d = self.sub(prediction, target)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    pub fn transpose2d(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return shape_err(format!("transpose of rank-{} tensor", s.len()));
        }
        let (r, c) = (s[0], s[1]);
        let index = (0..c).flat_map(|j| (0..r).map(move |i| i * c + j)).collect();
        self.gather(x, index, vec![c, r])
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return shape_err(format!("narrow {s:?} axis {axis} [{start}, {})", start + len));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let mut index = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for a in start..start + len {
                let base = (o * s[axis] + a) * inner;
                index.extend(base..base + inner);
            }
        }
        let mut shape = s;
        shape[axis] = len;
        self.gather(x, index, shape)
    }

    /// Select rows of a matrix (rows may repeat).
    pub fn index_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || rows.iter().any(|&r| r >= s[0]) || rows.is_empty() {
            return shape_err(format!("index_rows on {s:?}"));
        }
        let k = s[1];
        let index = rows.iter().flat_map(|&r| r * k..(r + 1) * k).collect();
        self.gather(x, index, vec![rows.len(), k])
    }

    /// Place row `i` of `x` at row `rows[i]` of an `n_rows`-row zero matrix.
    /// `rows` must be distinct.
    pub fn scatter_rows(&mut self, x: Var, rows: &[usize], n_rows: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != rows.len() || rows.iter().any(|&r| r >= n_rows) {
            return shape_err(format!("scatter_rows of {s:?} into {n_rows} rows"));
        }
        let k = s[1];
        let mut index = vec![GATHER_ZERO; n_rows * k];
        for (i, &r) in rows.iter().enumerate() {
            for c in 0..k {
                index[r * k + c] = i * k + c;
            }
        }
        self.gather(x, index, vec![n_rows, k])
    }

    /// Patch extraction for convolution: `x[C×H×W]` becomes
    /// `[C·k·k × H'·W']`, zero-padded by `pad` on every side.
    pub fn im2col(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return shape_err(format!("im2col expects C×H×W, got {s:?}"));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (Some(ho), Some(wo)) = (
            conv_output_len(h, kernel, stride, pad),
            conv_output_len(w, kernel, stride, pad),
        ) else {
            return shape_err(format!("non-positive conv output for {s:?} k={kernel} s={stride} p={pad}"));
        };
        let mut index = Vec::with_capacity(c * kernel * kernel * ho * wo);
        for ch in 0..c {
            for ky in 0..kernel {
                for kx in 0..kernel {
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                            index.push(if inside {
                                (ch * h + iy as usize) * w + ix as usize
                            } else {
                                GATHER_ZERO
                            });
                        }
                    }
                }
            }
        }
        self.gather(x, index, vec![c * kernel * kernel, ho * wo])
    }

    /// 2-D convolution `x[C×H×W] ⊛ w[O×C×k×k] (+ b[O])` via im2col and matmul.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        let xs = self.shape(x).to_vec();
        if ws.len() != 4 || xs.len() != 3 || ws[1] != xs[0] || ws[2] != ws[3] {
            return shape_err(format!("conv2d input {xs:?} weight {ws:?}"));
        }
        let (o, k) = (ws[0], ws[2]);
        let cols = self.im2col(x, k, stride, pad)?;
        let ho = conv_output_len(xs[1], k, stride, pad).unwrap();
        let wo = conv_output_len(xs[2], k, stride, pad).unwrap();
        let w2 = self.reshape(w, vec![o, ws[1] * k * k])?;
        let mut y = self.matmul(w2, cols)?;
        if let Some(b) = b {
            let bc = self.reshape(b, vec![o, 1])?;
            y = self.add(y, bc)?;
        }
        self.reshape(y, vec![o, ho, wo])
    }

    /// Nearest-neighbour 2× upsampling of `x[C×H×W]`.
    pub fn upsample_nearest2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return shape_err(format!("upsample expects C×H×W, got {s:?}"));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut index = Vec::with_capacity(c * 4 * h * w);
        for ch in 0..c {
            for y in 0..2 * h {
                for x2 in 0..2 * w {
                    index.push((ch * h + y / 2) * w + x2 / 2);
                }
            }
        }
        self.gather(x, index, vec![c, 2 * h, 2 * w])
    }

    /// Non-overlapping `p×p` patches of `x[C×h×w]` as rows: `[N × C·p·p]`,
    /// patches in row-major order.
    pub fn patchify(&mut self, x: Var, p: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || p == 0 || s[1] % p != 0 || s[2] % p != 0 {
            return shape_err(format!("patchify {s:?} with patch {p}"));
        }
        let index = patch_index(s[0], s[1], s[2], p);
        let n = (s[1] / p) * (s[2] / p);
        self.gather(x, index, vec![n, s[0] * p * p])
    }

    /// Inverse of [`Graph::patchify`].
    pub fn unpatchify(&mut self, tokens: Var, c: usize, h: usize, w: usize, p: usize) -> Result<Var> {
        let s = self.shape(tokens).to_vec();
        if p == 0 || h % p != 0 || w % p != 0 || s != [(h / p) * (w / p), c * p * p] {
            return shape_err(format!("unpatchify {s:?} into {c}×{h}×{w} with patch {p}"));
        }
        let forward = patch_index(c, h, w, p);
        let mut index = vec![0; forward.len()];
        for (token_pos, &grid_pos) in forward.iter().enumerate() {
            index[grid_pos] = token_pos;
        }
        self.gather(tokens, index, vec![c, h, w])
    }
}

/// For each element of the `[N × C·p·p]` patch matrix, its offset in `C×h×w`.
fn patch_index(c: usize, h: usize, w: usize, p: usize) -> Vec<usize> {
    let (ph, pw) = (h / p, w / p);
    let mut index = Vec::with_capacity(c * h * w);
    for py in 0..ph {
        for px in 0..pw {
            for ch in 0..c {
                for dy in 0..p {
                    for dx in 0..p {
                        index.push((ch * h + py * p + dy) * w + px * p + dx);
                    }
                }
            }
        }
    }
    index
}
