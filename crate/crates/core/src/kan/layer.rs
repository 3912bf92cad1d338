//! Fused KAN layer node: every edge is `w_b·silu(x) + w_s·Σ_c coef_c·B_c(x)`
//! and each output sums its incoming edges.

use super::spline::SplineGrid;
use crate::error::{shape_err, Result};
use crate::tensor::{silu, Activation, CustomOp, Graph, Tensor, Var};

/// Per-input spline evaluation shared by all outgoing edges.
#[derive(Clone, Debug)]
struct InputBasis {
    start: usize,
    values: [f64; 8],
    derivs: [f64; 8],
    silu: f64,
    silu_deriv: f64,
}

fn input_bases(grid: &SplineGrid, x: &[f64]) -> Vec<InputBasis> {
    x.iter()
        .map(|&v| {
            let mut b = InputBasis { start: 0, values: [0.0; 8], derivs: [0.0; 8], silu: silu(v), silu_deriv: 0.0 };
            b.start = grid.eval_local(v, &mut b.values, Some(&mut b.derivs));
            b.silu_deriv = Activation::Silu.derivative(v);
            b
        })
        .collect()
}

/// Layer weights as flat row-major slices.
#[derive(Clone, Copy)]
pub struct LayerWeights<'a> {
    /// `[n_out × n_in × n_basis]`
    pub coef: &'a [f64],
    /// `[n_out × n_in]`
    pub base: &'a [f64],
    /// `[n_out × n_in]`
    pub spline: &'a [f64],
}

/// Forward pass of one sample. Used both by the graph node and by
/// tape-free evaluation, so both paths agree exactly.
pub fn layer_row(grid: &SplineGrid, n_in: usize, n_out: usize, w: LayerWeights, x: &[f64], out: &mut [f64]) {
    row_from_bases(grid, n_in, n_out, w, &input_bases(grid, x), out);
}

fn row_from_bases(grid: &SplineGrid, n_in: usize, n_out: usize, w: LayerWeights, bases: &[InputBasis], out: &mut [f64]) {
    let nb = grid.n_basis();
    let k = grid.order();
    for j in 0..n_out {
        let mut acc = 0.0;
        for (i, b) in bases.iter().enumerate() {
            let e = j * n_in + i;
            let c = &w.coef[e * nb + b.start..];
            let mut s = 0.0;
            for r in 0..=k {
                if b.start + r < nb {
                    s += c[r] * b.values[r];
                }
            }
            acc += w.base[e] * b.silu + w.spline[e] * s;
        }
        out[j] = acc;
    }
}

struct KanLayerOp {
    grid: SplineGrid,
    n_in: usize,
    n_out: usize,
    bases: Vec<Vec<InputBasis>>,
}

impl CustomOp for KanLayerOp {
    fn name(&self) -> &'static str {
        "kan_layer"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &[f64], grads: &mut [Option<&mut [f64]>]) {
        let (n_in, n_out) = (self.n_in, self.n_out);
        let nb = self.grid.n_basis();
        let k = self.grid.order();
        let coef = inputs[1].data();
        let base = inputs[2].data();
        let spline = inputs[3].data();
        let [gx, gcoef, gbase, gspline] = grads else { unreachable!("kan layer has four inputs") };
        for (row, bases) in self.bases.iter().enumerate() {
            let go = &grad_output[row * n_out..(row + 1) * n_out];
            for (j, &g) in go.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (i, b) in bases.iter().enumerate() {
                    let e = j * n_in + i;
                    let c = &coef[e * nb..(e + 1) * nb];
                    let (mut s, mut ds) = (0.0, 0.0);
                    for r in 0..=k {
                        if b.start + r < nb {
                            s += c[b.start + r] * b.values[r];
                            ds += c[b.start + r] * b.derivs[r];
                        }
                    }
                    if let Some(gx) = gx.as_deref_mut() {
                        gx[row * n_in + i] += g * (base[e] * b.silu_deriv + spline[e] * ds);
                    }
                    if let Some(gc) = gcoef.as_deref_mut() {
                        for r in 0..=k {
                            if b.start + r < nb {
                                gc[e * nb + b.start + r] += g * spline[e] * b.values[r];
                            }
                        }
                    }
                    if let Some(gb) = gbase.as_deref_mut() {
                        gb[e] += g * b.silu;
                    }
                    if let Some(gs) = gspline.as_deref_mut() {
                        gs[e] += g * s;
                    }
                }
            }
        }
    }
}

/// Record a KAN layer on the tape. `x` is `[batch × n_in]`; the result is
/// `[batch × n_out]`.
pub fn kan_layer(g: &mut Graph, grid: SplineGrid, x: Var, coef: Var, base: Var, spline: Var) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    let cs = g.shape(coef).to_vec();
    if xs.len() != 2 || cs.len() != 3 || cs[2] != grid.n_basis() || cs[1] != xs[1] {
        return shape_err(format!("kan layer: input {xs:?}, coefficients {cs:?}, {} bases", grid.n_basis()));
    }
    let (batch, n_in, n_out) = (xs[0], xs[1], cs[0]);
    if g.shape(base) != [n_out, n_in] || g.shape(spline) != [n_out, n_in] {
        return shape_err(format!("kan layer edge weights must be [{n_out}, {n_in}]"));
    }
    let xv = g.value(x).data();
    let w = LayerWeights { coef: g.value(coef).data(), base: g.value(base).data(), spline: g.value(spline).data() };
    let mut out = vec![0.0; batch * n_out];
    let mut bases = Vec::with_capacity(batch);
    for row in 0..batch {
        let xr = &xv[row * n_in..(row + 1) * n_in];
        let b = input_bases(&grid, xr);
        row_from_bases(&grid, n_in, n_out, w, &b, &mut out[row * n_out..(row + 1) * n_out]);
        bases.push(b);
    }
    let out = Tensor::new([batch, n_out], out)?;
    Ok(g.custom(&[x, coef, base, spline], out, Box::new(KanLayerOp { grid, n_in, n_out, bases })))
}
