//! Multi-head scaled dot-product self-attention over token rows.

use rand::Rng;

use super::init::{xavier, zeros_vec};
use crate::error::{invalid, Result};
use crate::tensor::{softmax_row, Graph, ParamId, ParamStore, Var};

#[derive(Clone, Debug)]
pub(crate) struct AttentionIds {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub heads: usize,
}

impl AttentionIds {
    pub fn new(store: &mut ParamStore, prefix: &str, k: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || k % heads != 0 {
            return invalid(format!("token width {k} is not divisible by {heads} heads"));
        }
        let mut proj = |name: &str| {
            (
                store.add(format!("{prefix}.w{name}"), xavier([k, k], k, k, rng)),
                store.add(format!("{prefix}.b{name}"), zeros_vec(k)),
            )
        };
        let (wq, bq) = proj("q");
        let (wk, bk) = proj("k");
        let (wv, bv) = proj("v");
        let (wo, bo) = proj("o");
        Ok(AttentionIds { wq, bq, wk, bk, wv, bv, wo, bo, heads })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<Var> {
        let k = g.shape(z)[1];
        let dh = k / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let lin = |g: &mut Graph, w: ParamId, b: ParamId| {
            let (w, b) = (g.param(store, w), g.param(store, b));
            g.linear(z, w, Some(b))
        };
        let q = lin(g, self.wq, self.bq)?;
        let kk = lin(g, self.wk, self.bk)?;
        let v = lin(g, self.wv, self.bv)?;
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.narrow(q, 1, h * dh, dh)?;
            let kh = g.narrow(kk, 1, h * dh, dh)?;
            let vh = g.narrow(v, 1, h * dh, dh)?;
            let kt = g.transpose2d(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let att = g.softmax_last(scores);
            heads.push(g.matmul(att, vh)?);
        }
        let cat = g.concat(&heads, 1)?;
        let (wo, bo) = (g.param(store, self.wo), g.param(store, self.bo));
        g.linear(cat, wo, Some(bo))
    }
}

/// Step-by-step attention on plain rows, for cross-checking.
pub fn attention_reference(
    tokens: &[Vec<f64>],
    heads: usize,
    w: [&[f64]; 4],
    b: [&[f64]; 4],
) -> Vec<Vec<f64>> {
    let k = tokens[0].len();
    let dh = k / heads;
    let project = |x: &[f64], m: usize| -> Vec<f64> {
        (0..k).map(|o| b[m][o] + (0..k).map(|i| x[i] * w[m][i * k + o]).sum::<f64>()).collect()
    };
    let q: Vec<Vec<f64>> = tokens.iter().map(|t| project(t, 0)).collect();
    let kk: Vec<Vec<f64>> = tokens.iter().map(|t| project(t, 1)).collect();
    let v: Vec<Vec<f64>> = tokens.iter().map(|t| project(t, 2)).collect();
    let n = tokens.len();
    let mut concat = vec![vec![0.0; k]; n];
    for h in 0..heads {
        let r = h * dh..(h + 1) * dh;
        for i in 0..n {
            let mut s: Vec<f64> = (0..n)
                .map(|j| r.clone().map(|c| q[i][c] * kk[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            softmax_row(&mut s);
            for c in r.clone() {
                concat[i][c] = (0..n).map(|j| s[j] * v[j][c]).sum();
            }
        }
    }
    concat.iter().map(|x| project(x, 3)).collect()
}
