//! Residual refinement network: a convolutional encoder, Transformer blocks
//! at the bottleneck whose feed-forward sublayer is a sparse mixture of
//! experts, and a skip-connected decoder that emits one residual channel per
//! band. The final estimate is `clamp(base + residual, 0, 1)`.

mod attention;
mod init;
mod moe;
mod train;

pub use attention::attention_reference;
pub use moe::{route, top_k, RoutingStats};
pub use train::{
    evaluate_refiner, train_refiner, write_routing_csv, EpochLog, RefinerSample, RefinerTrainConfig, TrainedRefiner,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use attention::AttentionIds;
use init::{he, normal, xavier, zeros_vec};
use moe::{FfnIds, MoeIds};

use crate::error::{invalid, shape_err, Error, Result};
use crate::priors::PriorTensor;
use crate::scene::Radiomap;
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

pub const CHECKPOINT_PREFIX: &str = "refiner.";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FfnKind {
    /// Sparse mixture of experts.
    Moe,
    /// Single dense feed-forward network with the given hidden width.
    Dense { hidden: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinerConfig {
    pub in_channels: usize,
    pub out_bands: usize,
    pub height: usize,
    pub width: usize,
    /// Channels after the first (full resolution) and second (half
    /// resolution) encoder stages; the bottleneck keeps the second width at
    /// quarter resolution.
    pub encoder_widths: (usize, usize),
    pub patch: usize,
    pub token_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub experts: usize,
    pub top_k: usize,
    pub expert_hidden: usize,
    pub ffn: FfnKind,
    pub positional: bool,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        RefinerConfig {
            in_channels: 9,
            out_bands: 2,
            height: 32,
            width: 32,
            encoder_widths: (16, 32),
            patch: 4,
            token_dim: 64,
            depth: 2,
            heads: 4,
            experts: 4,
            top_k: 2,
            expert_hidden: 128,
            ffn: FfnKind::Moe,
            positional: true,
        }
    }
}

impl RefinerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.in_channels,
            self.out_bands,
            self.encoder_widths.0,
            self.encoder_widths.1,
            self.patch,
            self.token_dim,
            self.heads,
            self.experts,
            self.expert_hidden,
        ];
        if positive.contains(&0) {
            return invalid("refiner sizes must be positive");
        }
        if self.height % 4 != 0 || self.width % 4 != 0 {
            return invalid(format!("grid {}x{} must be divisible by 4", self.height, self.width));
        }
        let (bh, bw) = self.bottleneck();
        if bh % self.patch != 0 || bw % self.patch != 0 {
            return invalid(format!("bottleneck {bh}x{bw} is not divisible by patch {}", self.patch));
        }
        if self.token_dim % self.heads != 0 {
            return invalid(format!("token width {} is not divisible by {} heads", self.token_dim, self.heads));
        }
        if self.top_k == 0 || self.top_k > self.experts {
            return invalid(format!("top-k {} outside 1..={}", self.top_k, self.experts));
        }
        if let FfnKind::Dense { hidden: 0 } = self.ffn {
            return invalid("dense feed-forward width must be positive");
        }
        Ok(())
    }

    pub fn bottleneck(&self) -> (usize, usize) {
        (self.height / 4, self.width / 4)
    }

    pub fn tokens(&self) -> usize {
        let (bh, bw) = self.bottleneck();
        (bh / self.patch) * (bw / self.patch)
    }

    /// Parameters of one mixture-of-experts sublayer (router plus experts).
    pub fn moe_params_per_block(&self) -> usize {
        let k = self.token_dim;
        k * self.experts + self.experts + self.experts * (2 * k * self.expert_hidden + self.expert_hidden + k)
    }

    /// Hidden width of a dense feed-forward sublayer whose parameter count
    /// matches the mixture of experts.
    pub fn matched_dense_hidden(&self) -> usize {
        let k = self.token_dim;
        ((self.moe_params_per_block() - k) as f64 / (2 * k + 1) as f64).round() as usize
    }

    fn record(&self) -> Vec<f64> {
        let (kind, hidden) = match self.ffn {
            FfnKind::Moe => (0, 0),
            FfnKind::Dense { hidden } => (1, hidden),
        };
        [
            self.in_channels,
            self.out_bands,
            self.height,
            self.width,
            self.encoder_widths.0,
            self.encoder_widths.1,
            self.patch,
            self.token_dim,
            self.depth,
            self.heads,
            self.experts,
            self.top_k,
            self.expert_hidden,
            kind,
            hidden,
            usize::from(self.positional),
        ]
        .iter()
        .map(|&v| v as f64)
        .collect()
    }

    fn from_record(r: &[f64]) -> Result<Self> {
        if r.len() != 16 || r.iter().any(|v| !(v.fract() == 0.0 && *v >= 0.0 && *v < 1e9)) {
            return Err(Error::Format("malformed refiner config record".into()));
        }
        let u: Vec<usize> = r.iter().map(|&v| v as usize).collect();
        let ffn = match u[13] {
            0 => FfnKind::Moe,
            1 => FfnKind::Dense { hidden: u[14] },
            k => return Err(Error::Format(format!("unknown feed-forward kind {k}"))),
        };
        let c = RefinerConfig {
            in_channels: u[0],
            out_bands: u[1],
            height: u[2],
            width: u[3],
            encoder_widths: (u[4], u[5]),
            patch: u[6],
            token_dim: u[7],
            depth: u[8],
            heads: u[9],
            experts: u[10],
            top_k: u[11],
            expert_hidden: u[12],
            ffn,
            positional: u[15] != 0,
        };
        c.validate().map_err(|e| Error::Format(format!("refiner config: {e}")))?;
        Ok(c)
    }
}

#[derive(Clone, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

impl Conv {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        Conv {
            w: store.add(format!("{name}.w"), he([cout, cin, k, k], cin * k * k, rng)),
            b: store.add(format!("{name}.b"), zeros_vec(cout)),
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, stride: usize) -> Result<Var> {
        let (w, b) = (g.param(store, self.w), g.param(store, self.b));
        let pad = g.shape(w)[2] / 2;
        g.conv2d(x, w, Some(b), stride, pad)
    }
}

#[derive(Clone, Debug)]
enum BlockFfn {
    Moe(MoeIds),
    Dense(FfnIds),
}

#[derive(Clone, Debug)]
struct Block {
    ln1: (ParamId, ParamId),
    attn: AttentionIds,
    ln2: (ParamId, ParamId),
    ffn: BlockFfn,
}

/// One recorded Transformer block.
pub struct BlockPass {
    pub out: Var,
    /// Load-balance term, for mixture-of-experts blocks.
    pub aux: Option<Var>,
    pub stats: Option<RoutingStats>,
}

impl Block {
    fn forward(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<BlockPass> {
        let (g1, b1) = (g.param(store, self.ln1.0), g.param(store, self.ln1.1));
        let n1 = g.layer_norm(z, g1, b1)?;
        let a = self.attn.forward(g, store, n1)?;
        let h = g.add(a, z)?;
        let (g2, b2) = (g.param(store, self.ln2.0), g.param(store, self.ln2.1));
        let n2 = g.layer_norm(h, g2, b2)?;
        let (f, aux, stats) = match &self.ffn {
            BlockFfn::Moe(m) => {
                let o = m.forward(g, store, n2)?;
                (o.out, Some(o.aux), Some(o.stats))
            }
            BlockFfn::Dense(d) => (d.forward(g, store, n2)?, None, None),
        };
        Ok(BlockPass { out: g.add(f, h)?, aux, stats })
    }
}

#[derive(Clone, Debug)]
pub struct RefinerNet {
    config: RefinerConfig,
    params: ParamStore,
    enc: [Conv; 3],
    embed: (ParamId, ParamId),
    pos: ParamId,
    blocks: Vec<Block>,
    unembed: (ParamId, ParamId),
    dec: [Conv; 2],
    head: Conv,
}

/// Everything recorded by one forward pass.
pub struct RefinerPass {
    /// `[F × H × W]`
    pub residual: Var,
    /// Sum of the per-block load-balance terms, when any block is sparse.
    pub aux: Option<Var>,
    /// Per sparse block.
    pub stats: Vec<RoutingStats>,
}

impl RefinerNet {
    /// Random initialization; the output head starts at zero so the initial
    /// residual vanishes.
    pub fn new(config: RefinerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let (c1, c2) = config.encoder_widths;
        let k = config.token_dim;
        let p = config.patch;
        let patch_dim = c2 * p * p;
        let enc = [
            Conv::new(&mut s, "enc0", config.in_channels, c1, 3, &mut rng),
            Conv::new(&mut s, "enc1", c1, c2, 3, &mut rng),
            Conv::new(&mut s, "enc2", c2, c2, 3, &mut rng),
        ];
        let embed = (
            s.add("embed.w", xavier([patch_dim, k], patch_dim, k, &mut rng)),
            s.add("embed.b", zeros_vec(k)),
        );
        let pos = s.add("embed.pos", normal([config.tokens(), k], 0.02, &mut rng));
        let mut blocks = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            let prefix = format!("block{l}");
            let ln1 = (s.add(format!("{prefix}.ln1.g"), Tensor::ones([k])), s.add(format!("{prefix}.ln1.b"), zeros_vec(k)));
            let attn = AttentionIds::new(&mut s, &format!("{prefix}.attn"), k, config.heads, &mut rng)?;
            let ln2 = (s.add(format!("{prefix}.ln2.g"), Tensor::ones([k])), s.add(format!("{prefix}.ln2.b"), zeros_vec(k)));
            let ffn = match config.ffn {
                FfnKind::Moe => BlockFfn::Moe(MoeIds::new(
                    &mut s,
                    &format!("{prefix}.moe"),
                    k,
                    config.expert_hidden,
                    config.experts,
                    config.top_k,
                    &mut rng,
                )?),
                FfnKind::Dense { hidden } => BlockFfn::Dense(FfnIds::new(&mut s, &format!("{prefix}.ffn"), k, hidden, &mut rng)),
            };
            blocks.push(Block { ln1, attn, ln2, ffn });
        }
        let unembed = (
            s.add("unembed.w", xavier([k, patch_dim], k, patch_dim, &mut rng)),
            s.add("unembed.b", zeros_vec(patch_dim)),
        );
        let dec = [
            Conv::new(&mut s, "dec0", 2 * c2, c2, 3, &mut rng),
            Conv::new(&mut s, "dec1", c2 + c1, c1, 3, &mut rng),
        ];
        let head = Conv {
            w: s.add("head.w", Tensor::zeros([config.out_bands, c1, 1, 1])),
            b: s.add("head.b", zeros_vec(config.out_bands)),
        };
        Ok(RefinerNet { config, params: s, enc, embed, pos, blocks, unembed, dec, head })
    }

    pub fn config(&self) -> &RefinerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Patch features `[C × h × w]` into tokens `[N × K]` plus positions.
    pub fn patch_embed(&self, g: &mut Graph, store: &ParamStore, features: Var) -> Result<Var> {
        let patches = g.patchify(features, self.config.patch)?;
        let (w, b) = (g.param(store, self.embed.0), g.param(store, self.embed.1));
        let tokens = g.linear(patches, w, Some(b))?;
        if self.config.positional {
            let pos = g.param(store, self.pos);
            g.add(tokens, pos)
        } else {
            Ok(tokens)
        }
    }

    pub fn block_forward(&self, g: &mut Graph, store: &ParamStore, l: usize, z: Var) -> Result<BlockPass> {
        self.blocks[l].forward(g, store, z)
    }

    pub fn forward_with(&self, g: &mut Graph, store: &ParamStore, input: Var) -> Result<RefinerPass> {
        let c = &self.config;
        if g.shape(input) != [c.in_channels, c.height, c.width] {
            return shape_err(format!(
                "refiner expects [{}, {}, {}], got {:?}",
                c.in_channels,
                c.height,
                c.width,
                g.shape(input)
            ));
        }
        let e0 = self.enc[0].forward(g, store, input, 1)?;
        let skip0 = g.silu(e0);
        let e1 = self.enc[1].forward(g, store, skip0, 2)?;
        let skip1 = g.silu(e1);
        let e2 = self.enc[2].forward(g, store, skip1, 2)?;
        let bottleneck = g.silu(e2);

        let mut z = self.patch_embed(g, store, bottleneck)?;
        let mut aux: Option<Var> = None;
        let mut stats = Vec::new();
        for block in &self.blocks {
            let pass = block.forward(g, store, z)?;
            z = pass.out;
            if let Some(a) = pass.aux {
                aux = Some(match aux {
                    Some(t) => g.add(t, a)?,
                    None => a,
                });
            }
            stats.extend(pass.stats);
        }

        let (bh, bw) = c.bottleneck();
        let (w, b) = (g.param(store, self.unembed.0), g.param(store, self.unembed.1));
        let un = g.linear(z, w, Some(b))?;
        let grid = g.unpatchify(un, c.encoder_widths.1, bh, bw, c.patch)?;
        let up = g.upsample_nearest2x(grid)?;
        let cat = g.concat(&[up, skip1], 0)?;
        let d0 = self.dec[0].forward(g, store, cat, 1)?;
        let d0 = g.silu(d0);
        let up = g.upsample_nearest2x(d0)?;
        let cat = g.concat(&[up, skip0], 0)?;
        let d1 = self.dec[1].forward(g, store, cat, 1)?;
        let d1 = g.silu(d1);
        let residual = self.head.forward(g, store, d1, 1)?;
        Ok(RefinerPass { residual, aux, stats })
    }

    pub fn forward(&self, g: &mut Graph, input: Var) -> Result<RefinerPass> {
        self.forward_with(g, &self.params, input)
    }

    /// Residual map `[F·H·W]` for a prior tensor, without gradients.
    pub fn residual(&self, prior: &PriorTensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = g.constant(prior.to_tensor());
        let pass = self.forward(&mut g, x)?;
        Ok(g.value(pass.residual).data().to_vec())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_store(&self.params, CHECKPOINT_PREFIX);
        let rec = self.config.record();
        ck.push(format!("{CHECKPOINT_PREFIX}config"), Tensor::new([rec.len()], rec).unwrap());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let rec = ck
            .get(&format!("{CHECKPOINT_PREFIX}config"))
            .ok_or_else(|| Error::Format("checkpoint has no refiner config".into()))?;
        let mut net = Self::new(RefinerConfig::from_record(rec.data())?, 0)?;
        ck.restore_into(&mut net.params, CHECKPOINT_PREFIX)?;
        Ok(net)
    }
}

/// Final estimate `clamp(base + residual, 0, 1)`.
pub fn refine(net: &RefinerNet, prior: &PriorTensor, base: &Radiomap) -> Result<Radiomap> {
    let c = net.config();
    if prior.height != c.height || prior.width != c.width || prior.d_in() != c.in_channels {
        return shape_err(format!(
            "prior {}x{}x{} does not fit a refiner for {}x{}x{}",
            prior.d_in(),
            prior.height,
            prior.width,
            c.in_channels,
            c.height,
            c.width
        ));
    }
    if base.height() != c.height || base.width() != c.width || base.bands() != c.out_bands {
        return shape_err("base map does not match the refiner output");
    }
    let residual = net.residual(prior)?;
    let values = base.values().iter().zip(&residual).map(|(b, r)| b + r).collect();
    Radiomap::from_clamped(c.height, c.width, c.out_bands, values)
}

#[cfg(test)]
mod tests;
