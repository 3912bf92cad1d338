//! Sparse mixture-of-experts feed-forward layer with a softmax top-k router.

use rand::Rng;

use super::init::{xavier, zeros_vec};
use crate::error::{invalid, Result};
use crate::tensor::{softmax_row, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Debug)]
pub(crate) struct FfnIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FfnIds {
    pub fn new(store: &mut ParamStore, prefix: &str, k: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        FfnIds {
            w1: store.add(format!("{prefix}.w1"), xavier([k, hidden], k, hidden, rng)),
            b1: store.add(format!("{prefix}.b1"), zeros_vec(hidden)),
            w2: store.add(format!("{prefix}.w2"), xavier([hidden, k], hidden, k, rng)),
            b2: store.add(format!("{prefix}.b2"), zeros_vec(k)),
        }
    }

    /// `silu(h·W1 + b1)·W2 + b2` on token rows.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Result<Var> {
        let (w1, b1, w2, b2) = (g.param(store, self.w1), g.param(store, self.b1), g.param(store, self.w2), g.param(store, self.b2));
        let a = g.linear(h, w1, Some(b1))?;
        let a = g.silu(a);
        g.linear(a, w2, Some(b2))
    }

    /// Tape-free evaluation of one token.
    #[cfg(test)]
    pub fn eval_row(&self, store: &ParamStore, h: &[f64]) -> Vec<f64> {
        let (w1, b1, w2, b2) = (store.get(self.w1), store.get(self.b1), store.get(self.w2), store.get(self.b2));
        let (k, hid) = (w1.shape()[0], w1.shape()[1]);
        let mut a = b1.data().to_vec();
        for i in 0..k {
            for j in 0..hid {
                a[j] += h[i] * w1.data()[i * hid + j];
            }
        }
        let mut out = b2.data().to_vec();
        for j in 0..hid {
            let s = crate::tensor::silu(a[j]);
            for o in 0..k {
                out[o] += s * w2.data()[j * k + o];
            }
        }
        out
    }
}

/// Indices of the `k` largest probabilities, ties going to the lower index,
/// listed in descending probability order.
pub fn top_k(probs: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Router decision for one token: `(expert, renormalized weight)` pairs for
/// the selected experts, from the raw router logits.
pub fn route(logits: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut p = logits.to_vec();
    softmax_row(&mut p);
    let sel = top_k(&p, k);
    let total: f64 = sel.iter().map(|&e| p[e]).sum();
    sel.into_iter().map(|e| (e, p[e] / total)).collect()
}

/// Per-expert routing counters accumulated over forward passes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoutingStats {
    pub tokens: usize,
    pub top_k: usize,
    /// Tokens dispatched to each expert.
    pub counts: Vec<usize>,
    /// Sum over tokens of each expert's router probability.
    pub prob_sum: Vec<f64>,
}

impl RoutingStats {
    pub fn new(experts: usize, top_k: usize) -> Self {
        RoutingStats { tokens: 0, top_k, counts: vec![0; experts], prob_sum: vec![0.0; experts] }
    }

    pub fn merge(&mut self, other: &RoutingStats) {
        self.tokens += other.tokens;
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.prob_sum.iter_mut().zip(&other.prob_sum) {
            *a += b;
        }
    }

    /// Share of dispatched token slots taken by each expert; sums to 1.
    pub fn token_fraction(&self) -> Vec<f64> {
        let slots = (self.tokens * self.top_k).max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / slots).collect()
    }

    /// Mean router probability of each expert over all tokens.
    pub fn mean_gate(&self) -> Vec<f64> {
        let n = self.tokens.max(1) as f64;
        self.prob_sum.iter().map(|&s| s / n).collect()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct MoeIds {
    pub router_w: ParamId,
    pub router_b: ParamId,
    pub experts: Vec<FfnIds>,
    pub top_k: usize,
}

/// Result of one recorded MoE layer.
pub(crate) struct MoeOutput {
    pub out: Var,
    /// `E_x · Σ_e fraction_e · mean_prob_e`
    pub aux: Var,
    pub stats: RoutingStats,
}

impl MoeIds {
    pub fn new(store: &mut ParamStore, prefix: &str, k: usize, hidden: usize, experts: usize, top_k: usize, rng: &mut impl Rng) -> Result<Self> {
        if top_k == 0 || top_k > experts {
            return invalid(format!("top-k {top_k} outside 1..={experts}"));
        }
        let router_w = store.add(format!("{prefix}.router.w"), xavier([k, experts], k, experts, rng));
        let router_b = store.add(format!("{prefix}.router.b"), zeros_vec(experts));
        let experts = (0..experts).map(|e| FfnIds::new(store, &format!("{prefix}.expert{e}"), k, hidden, rng)).collect();
        Ok(MoeIds { router_w, router_b, experts, top_k })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Result<MoeOutput> {
        let n = g.shape(h)[0];
        let ex = self.experts.len();
        let (rw, rb) = (g.param(store, self.router_w), g.param(store, self.router_b));
        let logits = g.linear(h, rw, Some(rb))?;
        let probs = g.softmax_last(logits);
        let pv = g.value(probs).data().to_vec();
        let mut mask = vec![0.0; n * ex];
        let mut stats = RoutingStats::new(ex, self.top_k);
        stats.tokens = n;
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); ex];
        for t in 0..n {
            let row = &pv[t * ex..(t + 1) * ex];
            for e in top_k(row, self.top_k) {
                mask[t * ex + e] = 1.0;
                rows[e].push(t);
                stats.counts[e] += 1;
            }
            for (e, p) in row.iter().enumerate() {
                stats.prob_sum[e] += p;
            }
        }
        for r in rows.iter_mut() {
            r.sort_unstable();
        }
        let mask = g.constant(Tensor::new([n, ex], mask)?);
        let kept = g.mul(probs, mask)?;
        let total = g.sum_last(kept);
        let gates = g.div(kept, total)?;

        let mut out: Option<Var> = None;
        for (e, ids) in self.experts.iter().enumerate() {
            if rows[e].is_empty() {
                continue;
            }
            let he = g.index_rows(h, &rows[e])?;
            let y = ids.forward(g, store, he)?;
            let col = g.narrow(gates, 1, e, 1)?;
            let ge = g.index_rows(col, &rows[e])?;
            let weighted = g.mul(y, ge)?;
            let placed = g.scatter_rows(weighted, &rows[e], n)?;
            out = Some(match out {
                Some(o) => g.add(o, placed)?,
                None => placed,
            });
        }
        let out = out.expect("every token selects at least one expert");

        // Load-balance term: fractions are constants, mean probabilities carry the gradient.
        let fraction = stats.token_fraction();
        let frac = g.constant(Tensor::new([1, ex], fraction.iter().map(|f| f * ex as f64 / n as f64).collect())?);
        let weighted = g.mul(probs, frac)?;
        let aux = g.sum(weighted);
        Ok(MoeOutput { out, aux, stats })
    }

    /// Tape-free evaluation of one token.
    #[cfg(test)]
    pub fn eval_row(&self, store: &ParamStore, h: &[f64]) -> Vec<f64> {
        let rw = store.get(self.router_w);
        let ex = self.experts.len();
        let k = h.len();
        let mut logits = store.get(self.router_b).data().to_vec();
        for i in 0..k {
            for e in 0..ex {
                logits[e] += h[i] * rw.data()[i * ex + e];
            }
        }
        let mut out = vec![0.0; k];
        for (e, w) in route(&logits, self.top_k) {
            for (o, y) in out.iter_mut().zip(self.experts[e].eval_row(store, h)) {
                *o += w * y;
            }
        }
        out
    }
}
