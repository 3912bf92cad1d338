//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Lists are comma
//! separated. Every key has a default, unknown keys are rejected, and
//! [`RunConfig::echo`] writes a text that parses back to the same config.

use crate::error::{Error, Result};
use crate::eval::{BenchConfig, Method};
use crate::kan::KanConfig;
use crate::refiner::{FfnKind, RefinerConfig, RefinerTrainConfig};
use crate::scene::{PropagationParams, SceneSpec};

/// A scalar or list type that can appear on the right of `=`.
pub trait ConfigValue: Sized {
    fn parse_value(text: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! from_str_value {
    ($($t:ty => $what:literal),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(text: &str) -> std::result::Result<Self, String> {
                text.parse().map_err(|_| format!("expected {}, found `{text}`", $what))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

from_str_value!(usize => "a non-negative integer", u64 => "a non-negative integer", u32 => "a non-negative integer", bool => "true or false");

impl ConfigValue for f64 {
    fn parse_value(text: &str) -> std::result::Result<Self, String> {
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("expected a finite number, found `{text}`")),
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for String {
    fn parse_value(text: &str) -> std::result::Result<Self, String> {
        if text.is_empty() {
            return Err("expected a non-empty string".into());
        }
        Ok(text.to_string())
    }
    fn render(&self) -> String {
        self.clone()
    }
}

impl ConfigValue for Method {
    fn parse_value(text: &str) -> std::result::Result<Self, String> {
        Method::parse(text).ok_or_else(|| {
            let ids: Vec<&str> = Method::ALL.iter().map(Method::id).collect();
            format!("unknown method `{text}` (expected one of {})", ids.join(", "))
        })
    }
    fn render(&self) -> String {
        self.id().to_string()
    }
}

impl<T: ConfigValue> ConfigValue for Vec<T> {
    fn parse_value(text: &str) -> std::result::Result<Self, String> {
        if text.is_empty() {
            return Ok(Vec::new());
        }
        text.split(',').map(|item| T::parse_value(item.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter().map(T::render).collect::<Vec<_>>().join(", ")
    }
}

macro_rules! run_config {
    ($( $(#[doc = $doc:literal])* $key:ident : $ty:ty = $default:expr ),* $(,)?) => {
        /// Every tunable of the pipeline under one flat namespace.
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $( $(#[doc = $doc])* pub $key: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $( $key: $default, )* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            /// Sets one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
                match key {
                    $( stringify!($key) => self.$key = <$ty as ConfigValue>::parse_value(value)?, )*
                    _ => return Err(format!("unknown key `{key}`")),
                }
                Ok(())
            }

            /// One `key = value` line per key, in declaration order.
            pub fn echo(&self) -> String {
                let mut s = String::new();
                $( s.push_str(&format!("{} = {}\n", stringify!($key), ConfigValue::render(&self.$key))); )*
                s
            }
        }
    };
}

run_config! {
    /// Directory that receives every output file.
    out_dir: String = "out".into(),
    /// Seed of single-scene commands.
    seed: u64 = 0,
    /// Seeds of `experiment` and `ablate`.
    seeds: Vec<u64> = vec![0],
    height: usize = 32,
    width: usize = 32,
    cell_size_m: f64 = 4.0,
    buildings_min: usize = 3,
    buildings_max: usize = 8,
    building_size_min: usize = 3,
    building_size_max: usize = 8,
    transmitters: usize = 1,
    frequencies_hz: Vec<f64> = vec![2.4e9, 5.8e9],
    path_loss_exponent: f64 = 3.0,
    ref_distance_m: f64 = 4.0,
    penetration_db: f64 = 2.5,
    p0_db: f64 = -30.0,
    dynamic_range_db: f64 = 120.0,
    /// Gaussian observation noise in normalized units.
    noise_sigma: f64 = 0.0,
    tau_max: u32 = 150,
    /// Scenes written by `generate`.
    scenes: usize = 4,
    /// Sampling ratio of single-scene commands and `train-refiner`.
    ratio: f64 = 0.01,
    train_scenes: usize = 300,
    val_scenes: usize = 20,
    test_scenes: usize = 20,
    ratios: Vec<f64> = vec![0.001, 0.01, 0.1, 0.2],
    ablation_ratio: f64 = 0.01,
    methods: Vec<Method> = Method::ALL.to_vec(),
    idw_power: f64 = 2.0,
    open_space_only: bool = false,
    record_timing: bool = false,
    kan_hidden: Vec<usize> = vec![16, 16],
    kan_grid: usize = 8,
    kan_order: usize = 3,
    kan_epochs: usize = 600,
    kan_lr: f64 = 0.01,
    kan_smoothness: f64 = 1e-4,
    encoder_widths: Vec<usize> = vec![16, 32],
    patch: usize = 4,
    token_dim: usize = 64,
    blocks: usize = 2,
    heads: usize = 4,
    experts: usize = 4,
    top_k: usize = 2,
    expert_hidden: usize = 128,
    positional: bool = true,
    refiner_epochs: usize = 12,
    refiner_lr: f64 = 2e-3,
    balance_coef: f64 = 0.01,
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(a, _)| a).trim()
}

impl RunConfig {
    /// Parses config text over the defaults. Errors name the 1-based line.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Config { line: i + 1, msg };
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) && RunConfig::KEYS.contains(&key) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            cfg.set(key, value.trim()).map_err(|m| err(format!("{key}: {m}")))?;
        }
        Ok(cfg)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("override `{assignment}` is not key=value")))?;
        self.set(k.trim(), v.trim()).map_err(|m| Error::InvalidArgument(format!("override {}: {m}", k.trim())))
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            height: self.height,
            width: self.width,
            cell_size_m: self.cell_size_m,
            building_count: (self.buildings_min, self.buildings_max),
            building_size: (self.building_size_min, self.building_size_max),
            transmitters: self.transmitters,
            frequencies_hz: self.frequencies_hz.clone(),
        }
    }

    pub fn propagation(&self) -> PropagationParams {
        PropagationParams {
            path_loss_exponent: self.path_loss_exponent,
            ref_distance_m: self.ref_distance_m,
            penetration_db: self.penetration_db,
            p0_db: self.p0_db,
            dynamic_range_db: self.dynamic_range_db,
        }
    }

    pub fn kan(&self) -> KanConfig {
        KanConfig {
            hidden: self.kan_hidden.clone(),
            grid_intervals: self.kan_grid,
            spline_order: self.kan_order,
            epochs: self.kan_epochs,
            lr: self.kan_lr,
            smoothness: self.kan_smoothness,
        }
    }

    /// Refiner template; channel, band and grid sizes are set per arm.
    pub fn refiner(&self) -> Result<RefinerConfig> {
        let [a, b] = self.encoder_widths[..] else {
            return Err(Error::InvalidArgument(format!("encoder_widths needs two entries, got {}", self.encoder_widths.len())));
        };
        Ok(RefinerConfig {
            encoder_widths: (a, b),
            patch: self.patch,
            token_dim: self.token_dim,
            depth: self.blocks,
            heads: self.heads,
            experts: self.experts,
            top_k: self.top_k,
            expert_hidden: self.expert_hidden,
            ffn: FfnKind::Moe,
            positional: self.positional,
            ..RefinerConfig::default()
        })
    }

    pub fn training(&self) -> RefinerTrainConfig {
        RefinerTrainConfig { epochs: self.refiner_epochs, lr: self.refiner_lr, balance_coef: self.balance_coef, seed: self.seed }
    }

    pub fn bench(&self) -> Result<BenchConfig> {
        let cfg = BenchConfig {
            scene: self.scene_spec(),
            propagation: self.propagation(),
            train_scenes: self.train_scenes,
            val_scenes: self.val_scenes,
            test_scenes: self.test_scenes,
            ratios: self.ratios.clone(),
            seeds: self.seeds.clone(),
            methods: self.methods.clone(),
            ablation_ratio: self.ablation_ratio,
            noise_sigma: self.noise_sigma,
            tau_max: self.tau_max,
            idw_power: self.idw_power,
            kan: self.kan(),
            refiner: self.refiner()?,
            training: self.training(),
            open_space_only: self.open_space_only,
            record_timing: self.record_timing,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::parse("# only a comment\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn type_error_names_the_line() {
        match RunConfig::parse("experts = four") {
            Err(Error::Config { line, msg }) => {
                assert_eq!(line, 1);
                assert!(msg.contains("experts"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(RunConfig::parse("\n\nratio = 0.1\nbogus = 1"), Err(Error::Config { line: 4, .. })));
        assert!(matches!(RunConfig::parse("heads"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(RunConfig::parse("seed = 1\nseed = 2"), Err(Error::Config { line: 2, .. })));
        assert!(matches!(RunConfig::parse("kan_lr = nan"), Err(Error::Config { line: 1, .. })));
    }

    #[test]
    fn values_and_comments() {
        let cfg = RunConfig::parse("experts = 8  # more\nratios = 0.05, 0.1\nmethods = idw,kriging\npositional = false").unwrap();
        assert_eq!(cfg.experts, 8);
        assert_eq!(cfg.ratios, vec![0.05, 0.1]);
        assert_eq!(cfg.methods, vec![Method::Idw, Method::Kriging]);
        assert!(!cfg.positional);
        let mut c = cfg.clone();
        c.apply_override("top_k=1").unwrap();
        assert_eq!(c.top_k, 1);
        assert!(c.apply_override("top_k").is_err());
        assert!(c.apply_override("nope=1").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::parse("kan_smoothness = 3.3e-7\nfrequencies_hz = 9e8\nseeds = 4, 5, 6\nout_dir = results/a").unwrap();
        let echo = cfg.echo();
        assert_eq!(RunConfig::parse(&echo).unwrap(), cfg);
        assert_eq!(echo.lines().count(), RunConfig::KEYS.len());
    }

    #[test]
    fn conversions() {
        let cfg = RunConfig::default();
        let b = cfg.bench().unwrap();
        assert_eq!(b.scene, SceneSpec::default());
        assert_eq!(b.propagation, PropagationParams::default());
        assert_eq!(b.kan, KanConfig::default());
        assert_eq!(b.refiner, RefinerConfig::default());
        assert_eq!(b.training, RefinerTrainConfig::default());
        assert_eq!(b, BenchConfig::default());
        let bad = RunConfig { encoder_widths: vec![8], ..RunConfig::default() };
        assert!(bad.bench().is_err());
    }

    proptest! {
        #[test]
        fn numeric_round_trip(lr in 1e-9f64..10.0, ratios in prop::collection::vec(1e-4f64..0.25, 1..5), e in 1usize..16) {
            let cfg = RunConfig { kan_lr: lr, ratios, experts: e, ..RunConfig::default() };
            prop_assert_eq!(RunConfig::parse(&cfg.echo()).unwrap(), cfg);
        }
    }
}
