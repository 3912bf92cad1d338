//! Kolmogorov–Arnold network used as the coarse coverage prior.
//!
//! One network is shared by all bands; the band enters through the feature
//! vector. Training is full batch over every observation of every band.

mod features;
mod layer;
mod spline;

pub use features::{build_features, feature_dim, feature_matrix, grid_diagonal_m, log_frequency, nearest_transmitter_m};
pub use layer::{kan_layer, layer_row, LayerWeights};
pub use spline::SplineGrid;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::scene::{ObservationSet, RadioScene, Radiomap};
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::{AdamState, Graph, ParamId, ParamStore, Tensor, Var};

pub const CHECKPOINT_PREFIX: &str = "kan.";

#[derive(Clone, Copy, Debug)]
struct LayerParams {
    coef: ParamId,
    base: ParamId,
    spline: ParamId,
}

#[derive(Clone, Debug)]
pub struct KanNetwork {
    widths: Vec<usize>,
    grid: SplineGrid,
    params: ParamStore,
    layers: Vec<LayerParams>,
}

impl KanNetwork {
    /// Random initialization: small spline coefficients, base weights
    /// uniform in `±1/√n_in`, spline weights `1/√n_in`.
    pub fn new(widths: &[usize], grid: SplineGrid, seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return invalid(format!("KAN widths {widths:?} need at least two positive entries"));
        }
        if *widths.last().unwrap() != 1 {
            return invalid("KAN output width must be 1");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.1 / grid.intervals() as f64).unwrap();
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        for (l, win) in widths.windows(2).enumerate() {
            let (n_in, n_out) = (win[0], win[1]);
            let nb = grid.n_basis();
            let scale = 1.0 / (n_in as f64).sqrt();
            let coef = Tensor::from_fn([n_out, n_in, nb], |_| noise.sample(&mut rng));
            let base = Tensor::from_fn([n_out, n_in], |_| rng.random_range(-scale..scale));
            let spline = Tensor::full([n_out, n_in], scale);
            layers.push(LayerParams {
                coef: params.add(format!("layer{l}.coef"), coef),
                base: params.add(format!("layer{l}.base"), base),
                spline: params.add(format!("layer{l}.spline"), spline),
            });
        }
        Ok(KanNetwork { widths: widths.to_vec(), grid, params, layers })
    }

    /// Network whose every edge is identically zero.
    pub fn zeros(widths: &[usize], grid: SplineGrid) -> Result<Self> {
        let mut net = Self::new(widths, grid, 0)?;
        for p in net.params.ids().collect::<Vec<_>>() {
            net.params.get_mut(p).data_mut().fill(0.0);
        }
        Ok(net)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn grid(&self) -> SplineGrid {
        self.grid
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// `(coefficients, base weights, spline weights)` of layer `l`.
    pub fn layer_params(&self, l: usize) -> (ParamId, ParamId, ParamId) {
        let p = self.layers[l];
        (p.coef, p.base, p.spline)
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Record the forward pass on `g` using the parameters in `store`, which
    /// must have this network's layout. `x` is `[batch × d]`.
    pub fn forward_with(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for p in &self.layers {
            let coef = g.param(store, p.coef);
            let base = g.param(store, p.base);
            let spline = g.param(store, p.spline);
            h = kan_layer(g, self.grid, h, coef, base, spline)?;
        }
        Ok(h)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.forward_with(g, &self.params, x)
    }

    /// Tape-free prediction for a single feature vector.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.input_dim() {
            return Err(Error::Shape(format!("expected {} features, got {}", self.input_dim(), features.len())));
        }
        let mut h = features.to_vec();
        for (p, win) in self.layers.iter().zip(self.widths.windows(2)) {
            let w = LayerWeights {
                coef: self.params.get(p.coef).data(),
                base: self.params.get(p.base).data(),
                spline: self.params.get(p.spline).data(),
            };
            let mut out = vec![0.0; win[1]];
            layer_row(&self.grid, win[0], win[1], w, &h, &mut out);
            h = out;
        }
        Ok(h[0])
    }

    /// Sum over edges of squared second differences of the coefficients.
    pub fn smoothness_penalty(&self, g: &mut Graph, store: &ParamStore) -> Result<Option<Var>> {
        let nb = self.grid.n_basis();
        if nb < 3 {
            return Ok(None);
        }
        let mut total: Option<Var> = None;
        for p in &self.layers {
            let coef = g.param(store, p.coef);
            let shape = g.shape(coef).to_vec();
            let edges = shape[0] * shape[1];
            let flat = g.reshape(coef, [edges, nb])?;
            let a = g.narrow(flat, 1, 0, nb - 2)?;
            let b = g.narrow(flat, 1, 1, nb - 2)?;
            let c = g.narrow(flat, 1, 2, nb - 2)?;
            let ab = g.sub(a, b)?;
            let cb = g.sub(c, b)?;
            let d2 = g.add(ab, cb)?;
            let sq = g.mul(d2, d2)?;
            let s = g.sum(sq);
            total = Some(match total {
                Some(t) => g.add(t, s)?,
                None => s,
            });
        }
        Ok(total)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_store(&self.params, CHECKPOINT_PREFIX);
        let mut arch = vec![self.grid.intervals() as f64, self.grid.order() as f64];
        arch.extend(self.widths.iter().map(|&w| w as f64));
        let n = arch.len();
        ck.push(format!("{CHECKPOINT_PREFIX}architecture"), Tensor::new([n], arch).unwrap());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let arch = ck
            .get(&format!("{CHECKPOINT_PREFIX}architecture"))
            .ok_or_else(|| Error::Format("checkpoint has no KAN architecture".into()))?;
        let a = arch.data();
        let as_usize = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v < 1e6 {
                Ok(v as usize)
            } else {
                Err(Error::Format(format!("bad KAN architecture entry {v}")))
            }
        };
        if a.len() < 4 {
            return Err(Error::Format("KAN architecture record too short".into()));
        }
        let grid = SplineGrid::new(as_usize(a[0])?, as_usize(a[1])?)?;
        let widths = a[2..].iter().map(|&v| as_usize(v)).collect::<Result<Vec<_>>>()?;
        let mut net = Self::new(&widths, grid, 0)?;
        ck.restore_into(&mut net.params, CHECKPOINT_PREFIX)?;
        Ok(net)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KanConfig {
    /// Hidden widths; the input width follows from the band count and the
    /// output width is 1.
    pub hidden: Vec<usize>,
    pub grid_intervals: usize,
    pub spline_order: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Weight of the coefficient second-difference penalty.
    pub smoothness: f64,
}

impl Default for KanConfig {
    fn default() -> Self {
        KanConfig { hidden: vec![16, 16], grid_intervals: 8, spline_order: 3, epochs: 600, lr: 0.01, smoothness: 1e-4 }
    }
}

impl KanConfig {
    pub fn widths(&self, bands: usize) -> Vec<usize> {
        let mut w = vec![feature_dim(bands)];
        w.extend(&self.hidden);
        w.push(1);
        w
    }

    pub fn grid(&self) -> Result<SplineGrid> {
        SplineGrid::new(self.grid_intervals, self.spline_order)
    }

    pub fn build(&self, bands: usize, seed: u64) -> Result<KanNetwork> {
        KanNetwork::new(&self.widths(bands), self.grid()?, seed)
    }
}

/// Training data: feature rows and targets.
#[derive(Clone, Debug)]
pub struct PointSet {
    pub features: Tensor,
    pub targets: Tensor,
}

impl PointSet {
    pub fn new(features: Tensor, targets: Vec<f64>) -> Result<Self> {
        if features.rank() != 2 || features.shape()[0] != targets.len() {
            return Err(Error::Shape(format!(
                "{} targets for features of shape {:?}",
                targets.len(),
                features.shape()
            )));
        }
        let n = targets.len();
        Ok(PointSet { features, targets: Tensor::new([n, 1], targets)? })
    }

    /// One point per observation, over all bands.
    pub fn from_observations(scene: &RadioScene, obs: &ObservationSet) -> Result<Self> {
        obs.validate()?;
        if obs.band_count() != scene.spec.bands() || obs.height != scene.height() || obs.width != scene.width() {
            return Err(Error::Shape("observations do not match the scene".into()));
        }
        let mut points = Vec::new();
        let mut targets = Vec::new();
        for (f, b) in obs.bands.iter().enumerate() {
            points.extend(b.cells.iter().map(|&c| (f, c)));
            targets.extend_from_slice(&b.values);
        }
        Self::new(feature_matrix(scene, &points), targets)
    }

    pub fn len(&self) -> usize {
        self.targets.numel()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct KanFit {
    pub network: KanNetwork,
    /// Objective value before each epoch's update, followed by the final value.
    pub losses: Vec<f64>,
}

impl KanFit {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().unwrap()
    }
}

fn objective(net: &KanNetwork, g: &mut Graph, store: &ParamStore, data: &PointSet, smoothness: f64) -> Result<Var> {
    let x = g.constant(data.features.clone());
    let y = g.constant(data.targets.clone());
    let pred = net.forward_with(g, store, x)?;
    let d = g.sub(pred, y)?;
    let sq = g.mul(d, d)?;
    let mut loss = g.sum(sq);
    if smoothness > 0.0 {
        if let Some(p) = net.smoothness_penalty(g, store)? {
            let p = g.scale(p, smoothness);
            loss = g.add(loss, p)?;
        }
    }
    Ok(loss)
}

/// Sum of squared errors plus the smoothness term, at the current parameters.
pub fn kan_objective(net: &KanNetwork, data: &PointSet, smoothness: f64) -> Result<f64> {
    let mut g = Graph::new();
    let loss = objective(net, &mut g, &net.params, data, smoothness)?;
    Ok(g.value(loss).data()[0])
}

/// Full-batch Adam on the sum of squared errors plus `smoothness` times the
/// coefficient penalty.
pub fn train_kan(mut net: KanNetwork, data: &PointSet, epochs: usize, lr: f64, smoothness: f64) -> Result<KanFit> {
    if data.is_empty() {
        return invalid("KAN training needs at least one observation");
    }
    if data.features.shape()[1] != net.input_dim() {
        return Err(Error::Shape(format!(
            "features have {} columns, network expects {}",
            data.features.shape()[1],
            net.input_dim()
        )));
    }
    let mut adam = AdamState::new(lr);
    let mut losses = Vec::with_capacity(epochs + 1);
    for epoch in 0..epochs {
        let mut g = Graph::new();
        let loss = objective(&net, &mut g, &net.params, data, smoothness)?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Diverged { stage: "kan", epoch });
        }
        losses.push(value);
        net.params.zero_grad();
        g.backward(loss)?;
        g.accumulate_into(&mut net.params);
        adam.step(&mut net.params).map_err(|_| Error::Diverged { stage: "kan", epoch })?;
    }
    let last = kan_objective(&net, data, smoothness)?;
    if !last.is_finite() {
        return Err(Error::Diverged { stage: "kan", epoch: epochs });
    }
    losses.push(last);
    Ok(KanFit { network: net, losses })
}

/// Build, train and return a network for one scene's observations.
pub fn fit_scene(config: &KanConfig, scene: &RadioScene, obs: &ObservationSet, seed: u64) -> Result<KanFit> {
    let net = config.build(scene.spec.bands(), seed)?;
    let data = PointSet::from_observations(scene, obs)?;
    train_kan(net, &data, config.epochs, config.lr, config.smoothness)
}

/// Dense prediction over the grid for every band, clamped to `[0, 1]`.
pub fn evaluate_coarse(net: &KanNetwork, scene: &RadioScene) -> Result<Radiomap> {
    let bands = scene.spec.bands();
    if net.input_dim() != feature_dim(bands) {
        return Err(Error::Shape(format!(
            "network takes {} features, scene with {bands} bands produces {}",
            net.input_dim(),
            feature_dim(bands)
        )));
    }
    let mut values = Vec::with_capacity(scene.cells() * bands);
    for f in 0..bands {
        for i in 0..scene.cells() {
            values.push(net.predict(&build_features(scene, f, scene.cell_of(i)))?);
        }
    }
    Radiomap::from_clamped(scene.height(), scene.width(), bands, values)
}
