//! Sampling-ratio sweep and ablation ladder over synthetic scene sets.
//!
//! Every method and arm sees the same scenes and the same observation
//! cells for a given `(seed, ratio)`, so comparisons are paired.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use super::interp::{idw_interpolate, ordinary_kriging, KrigingOptions};
use super::metrics::{compute_metrics, compute_metrics_open, mean_std, MetricReport};
use crate::error::{invalid, Result};
use crate::kan::{evaluate_coarse, fit_scene, KanConfig};
use crate::priors::{assemble_prior_tensor, depth_map, ChannelKind, DepthMap, PriorTensor, CHANNEL_ORDER_VERSION};
use crate::refiner::{refine, train_refiner, FfnKind, RefinerConfig, RefinerNet, RefinerSample, RefinerTrainConfig, TrainedRefiner};
use crate::scene::{
    generate_scene, sample_observations_with, simulate_radiomap, ObservationSet, PropagationParams, RadioScene, Radiomap,
    SamplingOptions, SceneSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    KanOnly,
    Idw,
    Kriging,
    RadioKMoE,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::KanOnly, Method::Idw, Method::Kriging, Method::RadioKMoE];

    pub fn id(&self) -> &'static str {
        match self {
            Method::KanOnly => "kan-only",
            Method::Idw => "idw",
            Method::Kriging => "kriging",
            Method::RadioKMoE => "radiokmoe",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.id() == s)
    }

    fn needs_kan(&self) -> bool {
        matches!(self, Method::KanOnly | Method::RadioKMoE)
    }
}

/// Rungs of the ablation ladder, in table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arm {
    Backbone,
    BackboneKan,
    BackboneMoe,
    BackboneMoeKan,
    Full,
}

impl Arm {
    pub const LADDER: [Arm; 5] = [Arm::Backbone, Arm::BackboneKan, Arm::BackboneMoe, Arm::BackboneMoeKan, Arm::Full];

    pub fn id(&self) -> &'static str {
        match self {
            Arm::Backbone => "backbone",
            Arm::BackboneKan => "backbone+kan",
            Arm::BackboneMoe => "backbone+moe",
            Arm::BackboneMoeKan => "backbone+moe+kan",
            Arm::Full => "backbone+moe+kan+depth",
        }
    }

    pub fn uses_kan(&self) -> bool {
        matches!(self, Arm::BackboneKan | Arm::BackboneMoeKan | Arm::Full)
    }

    pub fn uses_moe(&self) -> bool {
        matches!(self, Arm::BackboneMoe | Arm::BackboneMoeKan | Arm::Full)
    }

    pub fn uses_depth(&self) -> bool {
        matches!(self, Arm::Full)
    }

    /// Input channels of this arm, in the order of the full layout.
    pub fn channels(&self, bands: usize) -> Vec<ChannelKind> {
        ChannelKind::full_layout(bands)
            .into_iter()
            .filter(|k| match k {
                ChannelKind::Coarse(_) => self.uses_kan(),
                ChannelKind::Depth => self.uses_depth(),
                _ => true,
            })
            .collect()
    }

    /// Refiner architecture for this arm; the dense variant matches the
    /// sparse layer's parameter count.
    pub fn refiner_config(&self, template: &RefinerConfig, bands: usize, height: usize, width: usize) -> RefinerConfig {
        let base = RefinerConfig {
            in_channels: self.channels(bands).len(),
            out_bands: bands,
            height,
            width,
            ffn: FfnKind::Moe,
            ..template.clone()
        };
        if self.uses_moe() {
            base
        } else {
            RefinerConfig { ffn: FfnKind::Dense { hidden: base.matched_dense_hidden() }, ..base }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub scene: SceneSpec,
    pub propagation: PropagationParams,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub test_scenes: usize,
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub ablation_ratio: f64,
    pub noise_sigma: f64,
    pub tau_max: u32,
    pub idw_power: f64,
    pub kan: KanConfig,
    /// Template for the refiner; channel, band and grid sizes are filled in
    /// per arm.
    pub refiner: RefinerConfig,
    pub training: RefinerTrainConfig,
    /// Score only cells outside buildings.
    pub open_space_only: bool,
    /// Fill `wall_seconds`; off by default so reruns produce identical bytes.
    pub record_timing: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            scene: SceneSpec::default(),
            propagation: PropagationParams::default(),
            train_scenes: 300,
            val_scenes: 20,
            test_scenes: 20,
            ratios: vec![0.001, 0.01, 0.1, 0.2],
            seeds: vec![0],
            methods: Method::ALL.to_vec(),
            ablation_ratio: 0.01,
            noise_sigma: 0.0,
            tau_max: crate::priors::DEFAULT_TAU_MAX,
            idw_power: 2.0,
            kan: KanConfig::default(),
            refiner: RefinerConfig::default(),
            training: RefinerTrainConfig::default(),
            open_space_only: false,
            record_timing: false,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.train_scenes == 0 || self.test_scenes == 0 {
            return invalid("train and test splits need at least one scene");
        }
        if self.seeds.is_empty() || self.ratios.is_empty() || self.methods.is_empty() {
            return invalid("seeds, ratios and methods must be non-empty");
        }
        for &r in self.ratios.iter().chain([&self.ablation_ratio]) {
            if !(r > 0.0 && r <= 0.25) {
                return invalid(format!("sampling ratio {r} outside (0, 0.25]"));
            }
        }
        let cfg = Arm::Full.refiner_config(&self.refiner, self.scene.bands(), self.scene.height, self.scene.width);
        cfg.validate()
    }
}

/// One aggregate line of a result table.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub arm: String,
    pub ratio: f64,
    pub seed: u64,
    pub scene_count: usize,
    pub nmse_mean: f64,
    pub nmse_std: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub wall_seconds: f64,
}

pub const CSV_HEADER: &str = "method,arm,ratio,seed,scene_count,nmse_mean,nmse_std,mse_mean,mse_std,wall_seconds";

pub fn write_csv(out: &mut impl Write, rows: &[ResultRow]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.3}",
            r.method, r.arm, r.ratio, r.seed, r.scene_count, r.nmse_mean, r.nmse_std, r.mse_mean, r.mse_std, r.wall_seconds
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct BenchOutput {
    pub rows: Vec<ResultRow>,
    /// Bands where kriging replaced a singular system with IDW.
    pub kriging_fallbacks: usize,
}

/// Seed mixing for independent streams (splitmix64 finalizer).
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut z = base;
    for &t in tags {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(t);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const TAG_TRAIN: u64 = 1;
const TAG_VAL: u64 = 2;
const TAG_TEST: u64 = 3;
const TAG_OBS: u64 = 10;
const TAG_KAN: u64 = 11;
const TAG_REFINER: u64 = 12;

/// A scene with its ground truth and depth cue.
#[derive(Clone, Debug)]
pub struct SceneCase {
    pub scene: RadioScene,
    pub truth: Radiomap,
    pub depth: DepthMap,
}

/// A scene case under one observation draw, with its fitted coarse prior
/// when requested.
#[derive(Clone, Debug)]
pub struct ObservedCase {
    pub case: SceneCase,
    pub obs: ObservationSet,
    pub coarse: Option<Radiomap>,
    /// Seconds spent fitting the coarse prior.
    pub kan_seconds: f64,
}

impl ObservedCase {
    /// Full prior stack; the coarse channels are zero without a fitted prior.
    pub fn prior(&self) -> Result<PriorTensor> {
        let s = &self.case.scene;
        let zeros = Radiomap::zeros(s.height(), s.width(), s.spec.bands());
        assemble_prior_tensor(self.coarse.as_ref().unwrap_or(&zeros), &self.obs, s, &self.case.depth)
    }
}

/// Paired data of one `(seed, ratio)` cell.
#[derive(Clone, Debug)]
pub struct BenchData {
    pub train: Vec<ObservedCase>,
    pub val: Vec<ObservedCase>,
    pub test: Vec<ObservedCase>,
}

fn ratio_tag(ratio: f64) -> u64 {
    ratio.to_bits()
}

fn scene_case(cfg: &BenchConfig, seed: u64) -> Result<SceneCase> {
    let scene = generate_scene(&cfg.scene, seed)?;
    let truth = simulate_radiomap(&scene, &cfg.propagation)?;
    let depth = depth_map(&scene, cfg.tau_max)?;
    Ok(SceneCase { scene, truth, depth })
}

fn observe(cfg: &BenchConfig, case: SceneCase, seed: u64, split: u64, index: u64, ratio: f64, with_kan: bool) -> Result<ObservedCase> {
    let options = SamplingOptions { noise_sigma: cfg.noise_sigma, ..SamplingOptions::default() };
    let tags = [split, index, ratio_tag(ratio)];
    let obs = sample_observations_with(&case.truth, ratio, derive_seed(seed, &[&tags[..], &[TAG_OBS]].concat()), &options)?;
    let start = Instant::now();
    let coarse = if with_kan {
        let fit = fit_scene(&cfg.kan, &case.scene, &obs, derive_seed(seed, &[&tags[..], &[TAG_KAN]].concat()))?;
        Some(evaluate_coarse(&fit.network, &case.scene)?)
    } else {
        None
    };
    Ok(ObservedCase { case, obs, coarse, kan_seconds: start.elapsed().as_secs_f64() })
}

fn split_cases(cfg: &BenchConfig, seed: u64, split: u64, count: usize, ratio: f64, with_kan: bool) -> Result<Vec<ObservedCase>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let case = scene_case(cfg, derive_seed(seed, &[split, i]))?;
            observe(cfg, case, seed, split, i, ratio, with_kan)
        })
        .collect()
}

impl BenchData {
    /// Generates the three splits. Coarse priors are fitted on the test
    /// split when `kan_test` is set and on train/val when `kan_train` is.
    pub fn prepare(cfg: &BenchConfig, seed: u64, ratio: f64, kan_train: bool, kan_test: bool) -> Result<BenchData> {
        let (train_n, val_n) = if kan_train || cfg.methods.contains(&Method::RadioKMoE) {
            (cfg.train_scenes, cfg.val_scenes)
        } else {
            (0, 0)
        };
        Ok(BenchData {
            train: split_cases(cfg, seed, TAG_TRAIN, train_n, ratio, kan_train)?,
            val: split_cases(cfg, seed, TAG_VAL, val_n, ratio, kan_train)?,
            test: split_cases(cfg, seed, TAG_TEST, cfg.test_scenes, ratio, kan_test)?,
        })
    }
}

fn score(cfg: &BenchConfig, estimate: &Radiomap, case: &SceneCase) -> Result<MetricReport> {
    if cfg.open_space_only {
        compute_metrics_open(estimate, &case.truth, &case.scene)
    } else {
        compute_metrics(estimate, &case.truth)
    }
}

fn aggregate(method: Method, arm: &str, ratio: f64, seed: u64, reports: &[MetricReport], seconds: Option<f64>) -> ResultRow {
    let nmse: Vec<f64> = reports.iter().map(|r| r.nmse_mean).collect();
    let mse: Vec<f64> = reports.iter().map(|r| r.mse_mean).collect();
    let (nmse_mean, nmse_std) = mean_std(&nmse);
    let (mse_mean, mse_std) = mean_std(&mse);
    ResultRow {
        method: method.id().into(),
        arm: arm.into(),
        ratio,
        seed,
        scene_count: reports.len(),
        nmse_mean,
        nmse_std,
        mse_mean,
        mse_std,
        wall_seconds: seconds.unwrap_or(0.0),
    }
}

fn zero_base(case: &ObservedCase) -> Radiomap {
    let s = &case.case.scene;
    Radiomap::zeros(s.height(), s.width(), s.spec.bands())
}

fn arm_inputs(arm: Arm, case: &ObservedCase) -> Result<(PriorTensor, Radiomap)> {
    let bands = case.case.scene.spec.bands();
    let prior = case.prior()?.select(&arm.channels(bands))?;
    let base = if arm.uses_kan() {
        case.coarse.clone().ok_or_else(|| crate::Error::InvalidArgument(format!("arm {} needs a coarse prior", arm.id())))?
    } else {
        zero_base(case)
    };
    Ok((prior, base))
}

/// Training samples of one arm.
pub fn arm_samples(arm: Arm, cases: &[ObservedCase]) -> Result<Vec<RefinerSample>> {
    cases
        .iter()
        .map(|c| {
            let (prior, base) = arm_inputs(arm, c)?;
            RefinerSample::new(&prior, &base, &c.case.truth)
        })
        .collect()
}

/// Trains one arm's refiner on the train split (model selection on val).
pub fn train_arm(cfg: &BenchConfig, arm: Arm, data: &BenchData, seed: u64, ratio: f64) -> Result<TrainedRefiner> {
    let s = &cfg.scene;
    let rc = arm.refiner_config(&cfg.refiner, s.bands(), s.height, s.width);
    let net = RefinerNet::new(rc, derive_seed(seed, &[TAG_REFINER, ratio_tag(ratio)]))?;
    let tc = RefinerTrainConfig { seed: derive_seed(seed, &[TAG_REFINER, ratio_tag(ratio), 1]), ..cfg.training.clone() };
    train_refiner(net, &arm_samples(arm, &data.train)?, &arm_samples(arm, &data.val)?, &tc)
}

/// Test-split reports of a trained arm.
pub fn evaluate_arm(cfg: &BenchConfig, arm: Arm, net: &RefinerNet, cases: &[ObservedCase]) -> Result<Vec<MetricReport>> {
    cases
        .iter()
        .map(|c| {
            let (prior, base) = arm_inputs(arm, c)?;
            score(cfg, &refine(net, &prior, &base)?, &c.case)
        })
        .collect()
}

struct CellResult {
    rows: Vec<ResultRow>,
    fallbacks: usize,
}

fn experiment_cell(cfg: &BenchConfig, seed: u64, ratio: f64) -> Result<CellResult> {
    let learned = cfg.methods.contains(&Method::RadioKMoE);
    let kan_test = cfg.methods.iter().any(Method::needs_kan);
    let data = BenchData::prepare(cfg, seed, ratio, learned, kan_test)?;
    let timed = |t: f64| cfg.record_timing.then_some(t);
    let test_kan: f64 = data.test.iter().map(|c| c.kan_seconds).sum();
    let mut rows = Vec::with_capacity(cfg.methods.len());
    let mut fallbacks = 0;
    for &m in &cfg.methods {
        let start = Instant::now();
        let (arm, reports) = match m {
            Method::KanOnly => {
                let r = data.test.iter().map(|c| score(cfg, c.coarse.as_ref().expect("fitted"), &c.case)).collect::<Result<Vec<_>>>()?;
                ("-", r)
            }
            Method::Idw => {
                let r = data
                    .test
                    .iter()
                    .map(|c| score(cfg, &idw_interpolate(&c.obs, cfg.idw_power)?, &c.case))
                    .collect::<Result<Vec<_>>>()?;
                ("-", r)
            }
            Method::Kriging => {
                let mut r = Vec::with_capacity(data.test.len());
                for c in &data.test {
                    let out = ordinary_kriging(&c.obs, &KrigingOptions::default())?;
                    fallbacks += out.variograms.iter().filter(|v| v.is_none()).count();
                    r.push(score(cfg, &out.map, &c.case)?);
                }
                ("-", r)
            }
            Method::RadioKMoE => {
                let net = train_arm(cfg, Arm::Full, &data, seed, ratio)?.net;
                (Arm::Full.id(), evaluate_arm(cfg, Arm::Full, &net, &data.test)?)
            }
        };
        let mut seconds = start.elapsed().as_secs_f64();
        if m.needs_kan() {
            seconds += test_kan;
        }
        if m == Method::RadioKMoE {
            seconds += data.train.iter().chain(&data.val).map(|c| c.kan_seconds).sum::<f64>();
        }
        rows.push(aggregate(m, arm, ratio, seed, &reports, timed(seconds)));
    }
    Ok(CellResult { rows, fallbacks })
}

/// Sampling-ratio sweep: one row per `(seed, ratio, method)`, ordered by
/// seed, then ratio, then the configured method order.
pub fn run_experiment(cfg: &BenchConfig) -> Result<BenchOutput> {
    cfg.validate()?;
    let cells: Vec<(u64, f64)> = cfg.seeds.iter().flat_map(|&s| cfg.ratios.iter().map(move |&r| (s, r))).collect();
    let results: Vec<CellResult> = cells.par_iter().map(|&(s, r)| experiment_cell(cfg, s, r)).collect::<Result<_>>()?;
    Ok(BenchOutput {
        kriging_fallbacks: results.iter().map(|c| c.fallbacks).sum(),
        rows: results.into_iter().flat_map(|c| c.rows).collect(),
    })
}

/// Ablation ladder at `ablation_ratio`: five rows per seed in ladder order.
/// All arms share the scenes, observations and coarse priors of a seed.
pub fn run_ablation(cfg: &BenchConfig) -> Result<BenchOutput> {
    run_arms(cfg, &Arm::LADDER)
}

/// [`run_ablation`] restricted to `arms`; rows are ordered by seed, then by
/// the order of `arms`. The full arm reproduces the `radiokmoe` rows of
/// [`run_experiment`] at the same ratio and seed.
pub fn run_arms(cfg: &BenchConfig, arms: &[Arm]) -> Result<BenchOutput> {
    cfg.validate()?;
    let ratio = cfg.ablation_ratio;
    let per_seed: Vec<Vec<ResultRow>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let data = BenchData::prepare(cfg, seed, ratio, true, true)?;
            let kan_seconds: f64 = data.train.iter().chain(&data.val).chain(&data.test).map(|c| c.kan_seconds).sum();
            arms.par_iter()
                .map(|&arm| {
                    let start = Instant::now();
                    let net = train_arm(cfg, arm, &data, seed, ratio)?.net;
                    let reports = evaluate_arm(cfg, arm, &net, &data.test)?;
                    let mut seconds = start.elapsed().as_secs_f64();
                    if arm.uses_kan() {
                        seconds += kan_seconds;
                    }
                    Ok(aggregate(Method::RadioKMoE, arm.id(), ratio, seed, &reports, cfg.record_timing.then_some(seconds)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(BenchOutput { rows: per_seed.into_iter().flatten().collect(), kriging_fallbacks: 0 })
}

/// Mean `nmse_mean` of the rows matching `method` and `arm`.
pub fn mean_nmse(rows: &[ResultRow], method: &str, arm: Option<&str>) -> f64 {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == method && arm.is_none_or(|a| r.arm == a))
        .map(|r| r.nmse_mean)
        .collect();
    mean_std(&v).0
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn version_string() -> String {
    format!("rkmoe-v{}-ch{}", env!("CARGO_PKG_VERSION"), CHANNEL_ORDER_VERSION)
}

/// Companion metadata: config hash, artifact version, kriging fallbacks and
/// the channel-order table of the full prior stack.
pub fn metadata_text(config_echo: &str, bands: usize, output: &BenchOutput) -> String {
    let mut s = format!(
        "config_hash = {:016x}\nversion = {}\nkriging_fallbacks = {}\n# channel order\n",
        fnv1a(config_echo.as_bytes()),
        version_string(),
        output.kriging_fallbacks
    );
    for (i, k) in ChannelKind::full_layout(bands).iter().enumerate() {
        s.push_str(&format!("{i}\t{}\n", k.label()));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BenchConfig {
        BenchConfig {
            scene: SceneSpec { height: 16, width: 16, ..SceneSpec::default() },
            train_scenes: 2,
            val_scenes: 1,
            test_scenes: 2,
            ratios: vec![0.05],
            kan: KanConfig { hidden: vec![4], epochs: 20, ..KanConfig::default() },
            refiner: RefinerConfig { encoder_widths: (4, 8), token_dim: 8, heads: 2, expert_hidden: 8, patch: 2, ..RefinerConfig::default() },
            training: RefinerTrainConfig { epochs: 1, ..RefinerTrainConfig::default() },
            ..BenchConfig::default()
        }
    }

    #[test]
    fn arm_channels() {
        assert_eq!(Arm::Backbone.channels(2).len(), 2 * 2 + 2);
        assert_eq!(Arm::BackboneMoe.channels(3).len(), 2 * 3 + 2);
        assert_eq!(Arm::BackboneKan.channels(2).len(), 8);
        assert_eq!(Arm::Full.channels(2), ChannelKind::full_layout(2));
        let t = RefinerConfig::default();
        assert!(matches!(Arm::Backbone.refiner_config(&t, 2, 32, 32).ffn, FfnKind::Dense { .. }));
        assert_eq!(Arm::Full.refiner_config(&t, 2, 32, 32).ffn, FfnKind::Moe);
    }

    #[test]
    fn seeds_are_distinct() {
        let a = derive_seed(0, &[1, 0]);
        assert_ne!(a, derive_seed(0, &[1, 1]));
        assert_ne!(a, derive_seed(1, &[1, 0]));
        assert_ne!(a, derive_seed(0, &[0, 1]));
    }

    #[test]
    fn degenerate_sweep_has_one_row() {
        let cfg = BenchConfig { methods: vec![Method::Idw], ratios: vec![0.01], ..tiny() };
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.rows[0].scene_count, 2);
        let mut csv = Vec::new();
        write_csv(&mut csv, &out.rows).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert!(text.lines().nth(1).unwrap().starts_with("idw,-,0.01,0,2,"));
    }

    #[test]
    fn arms_share_observations() {
        let cfg = tiny();
        let data = BenchData::prepare(&cfg, 3, 0.05, true, true).unwrap();
        for c in &data.test {
            let full = c.prior().unwrap();
            for arm in Arm::LADDER {
                let (p, base) = arm_inputs(arm, c).unwrap();
                for k in p.channels() {
                    assert_eq!(p.channel(*k), full.channel(*k));
                }
                assert_eq!(arm.uses_kan(), &base == c.coarse.as_ref().unwrap());
            }
        }
    }

    #[test]
    fn ladder_rows_in_order() {
        let cfg = tiny();
        let out = run_ablation(&cfg).unwrap();
        let arms: Vec<&str> = out.rows.iter().map(|r| r.arm.as_str()).collect();
        assert_eq!(arms, Arm::LADDER.iter().map(Arm::id).collect::<Vec<_>>());
        assert!(out.rows.iter().all(|r| r.nmse_mean.is_finite() && r.wall_seconds == 0.0));
        let exp = run_experiment(&BenchConfig { methods: vec![Method::RadioKMoE], ratios: vec![cfg.ablation_ratio], ..cfg.clone() }).unwrap();
        let mut full = out.rows[4].clone();
        full.method = exp.rows[0].method.clone();
        assert_eq!(exp.rows[0], full);
    }

    #[test]
    fn metadata_lists_channels() {
        let out = BenchOutput { rows: vec![], kriging_fallbacks: 2 };
        let m = metadata_text("a = 1\n", 2, &out);
        assert!(m.contains("kriging_fallbacks = 2"));
        assert!(m.contains("8\tdepth"));
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
