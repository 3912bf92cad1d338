//! Command-line front end. Every command writes only inside the output
//! directory and is deterministic given its config and seeds.

pub mod config;
pub mod render;
pub mod selftest;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataset::{load_observations, load_scene, save_observations, save_scene};
use crate::error::{Error, Result};
use crate::eval::bench::{arm_samples, derive_seed, metadata_text, train_arm, BenchData};
use crate::eval::{compute_metrics, run_ablation, run_experiment, write_csv, Arm, BenchOutput, MetricReport};
use crate::kan::{evaluate_coarse, fit_scene, KanNetwork};
use crate::priors::{assemble_prior_tensor, depth_map};
use crate::refiner::{refine, write_routing_csv, RefinerNet};
use crate::scene::{generate_scene, sample_observations_with, simulate_radiomap, ObservationSet, RadioScene, Radiomap, SamplingOptions};
use crate::tensor::checkpoint::Checkpoint;

pub use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "rkmoe", version, about = "Radiomap estimation with a KAN coarse prior and a sparse-MoE refiner")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for single-scene commands; for `experiment` and `ablate` it
    /// replaces the `seeds` list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// `key=value` override applied after the config file; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate scenes with ground-truth maps (RKM1) and observations (RKO1).
    Generate,
    /// Fit the coarse-prior network to one scene's observations.
    TrainKan(SceneArgs),
    /// Evaluate a fitted coarse-prior network densely on a scene.
    EvalKan {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long)]
        kan: PathBuf,
    },
    /// Train the refiner on generated scenes at the configured ratio.
    TrainRefiner,
    /// Coarse prior plus refinement on one scene.
    Estimate {
        #[command(flatten)]
        scene: SceneArgs,
        /// Fitted coarse-prior checkpoint; fitted on the fly when absent.
        #[arg(long)]
        kan: Option<PathBuf>,
        /// Refiner checkpoint; a freshly initialized refiner when absent.
        #[arg(long)]
        refiner: Option<PathBuf>,
    },
    /// Sampling-ratio sweep over all configured methods.
    Experiment,
    /// Ablation ladder at `ablation_ratio`.
    Ablate,
    /// Render one band of an RKM1 map as a PPM image.
    Render {
        #[arg(long)]
        map: PathBuf,
        #[arg(long, default_value_t = 0)]
        band: usize,
        /// Skip the building overlay.
        #[arg(long)]
        no_buildings: bool,
    },
    /// Run the built-in property suite.
    Selftest,
}

#[derive(Args, Debug, Clone)]
pub struct SceneArgs {
    /// Scene file (RKM1).
    #[arg(long)]
    pub scene: PathBuf,
    /// Observation file (RKO1); sampled at `ratio` with `seed` when absent.
    #[arg(long)]
    pub obs: Option<PathBuf>,
}

/// One-line error report: `error kind=<kind> message="<text>"`.
pub fn error_line(kind: &str, message: &str) -> String {
    let flat: String = message.replace('"', "'").split_whitespace().collect::<Vec<_>>().join(" ");
    format!("error kind={kind} message=\"{flat}\"")
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(argv: I, stdout: &mut (impl Write + Send), stderr: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = write!(stdout, "{e}");
                return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 };
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(stderr, "{}", error_line("usage", first));
            return 2;
        }
    };
    match execute(&cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "{}", error_line(e.kind(), &e.to_string()));
            1
        }
    }
}

/// Reads the config file and applies overrides and flags.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::parse(&fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.seeds = vec![s];
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn execute(cli: &Cli, stdout: &mut (impl Write + Send)) -> Result<i32> {
    let cfg = resolve_config(&cli.common)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| {
        let out = Output::create(&cfg)?;
        dispatch(&cli.command, &cfg, &out, stdout)
    })
}

/// The output directory; every file goes through [`Output::path`].
struct Output {
    dir: PathBuf,
}

impl Output {
    fn create(cfg: &RunConfig) -> Result<Output> {
        let dir = PathBuf::from(&cfg.out_dir);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("config.txt"), cfg.echo())?;
        Ok(Output { dir })
    }

    /// Path of a plain file name inside the directory.
    fn path(&self, name: &str) -> Result<PathBuf> {
        if name.is_empty() || name.contains(['/', '\\']) || name == ".." || name == "." {
            return Err(Error::InvalidArgument(format!("output name `{name}` must be a plain file name")));
        }
        Ok(self.dir.join(name))
    }

    fn write(&self, name: &str, bytes: &[u8], stdout: &mut impl Write) -> Result<()> {
        let p = self.path(name)?;
        fs::write(&p, bytes)?;
        writeln!(stdout, "wrote {}", p.display())?;
        Ok(())
    }
}

fn metrics_line(label: &str, r: &MetricReport) -> String {
    format!("metrics {label} nmse={:.9e} mse={:.9e}", r.nmse_mean, r.mse_mean)
}

fn observations_for(cfg: &RunConfig, args: &SceneArgs, truth: &Radiomap) -> Result<(ObservationSet, bool)> {
    match &args.obs {
        Some(p) => Ok((load_observations(p, truth.height(), truth.width())?, false)),
        None => {
            let options = SamplingOptions { noise_sigma: cfg.noise_sigma, ..SamplingOptions::default() };
            Ok((sample_observations_with(truth, cfg.ratio, derive_seed(cfg.seed, &[1]), &options)?, true))
        }
    }
}

/// Rounds values to single precision so the map can be stored in RKM1.
fn storable(map: &Radiomap, calibration: &[(f64, f64)]) -> Result<Radiomap> {
    let values = map.values().iter().map(|&v| v as f32 as f64).collect();
    Radiomap::new(map.height(), map.width(), values, calibration.to_vec())
}

fn save_map(out: &Output, name: &str, scene: &RadioScene, map: &Radiomap, stdout: &mut impl Write) -> Result<()> {
    let p = out.path(name)?;
    save_scene(&p, scene, map)?;
    writeln!(stdout, "wrote {}", p.display())?;
    Ok(())
}

fn write_bench(out: &Output, cfg: &RunConfig, stem: &str, result: &BenchOutput, stdout: &mut impl Write) -> Result<()> {
    let mut csv = Vec::new();
    write_csv(&mut csv, &result.rows)?;
    out.write(&format!("{stem}.csv"), &csv, stdout)?;
    let meta = metadata_text(&cfg.echo(), cfg.frequencies_hz.len(), result);
    out.write(&format!("{stem}_meta.txt"), meta.as_bytes(), stdout)
}

fn dispatch(command: &Command, cfg: &RunConfig, out: &Output, stdout: &mut impl Write) -> Result<i32> {
    match command {
        Command::Generate => {
            let spec = cfg.scene_spec();
            let options = SamplingOptions { noise_sigma: cfg.noise_sigma, ..SamplingOptions::default() };
            for i in 0..cfg.scenes as u64 {
                let scene = generate_scene(&spec, derive_seed(cfg.seed, &[i]))?;
                let map = simulate_radiomap(&scene, &cfg.propagation())?;
                let obs = sample_observations_with(&map, cfg.ratio, derive_seed(cfg.seed, &[i, 1]), &options)?;
                save_map(out, &format!("scene_{i:04}.rkm"), &scene, &map, stdout)?;
                let p = out.path(&format!("scene_{i:04}.rko"))?;
                save_observations(&p, &obs)?;
                writeln!(stdout, "wrote {}", p.display())?;
            }
        }
        Command::TrainKan(args) => {
            let (scene, truth) = load_scene(&args.scene)?;
            let (obs, sampled) = observations_for(cfg, args, &truth)?;
            if sampled {
                let p = out.path("observations.rko")?;
                save_observations(&p, &obs)?;
                writeln!(stdout, "wrote {}", p.display())?;
            }
            let fit = fit_scene(&cfg.kan(), &scene, &obs, cfg.seed)?;
            out.write("kan.rkck", &fit.network.to_checkpoint().to_bytes()?, stdout)?;
            let log: String = std::iter::once("epoch,loss\n".to_string())
                .chain(fit.losses.iter().enumerate().map(|(e, l)| format!("{e},{l:.9e}\n")))
                .collect();
            out.write("kan_loss.csv", log.as_bytes(), stdout)?;
            let coarse = evaluate_coarse(&fit.network, &scene)?;
            writeln!(stdout, "{}", metrics_line("kan", &compute_metrics(&coarse, &truth)?))?;
        }
        Command::EvalKan { scene: args, kan } => {
            let (scene, truth) = load_scene(&args.scene)?;
            let net = KanNetwork::from_checkpoint(&Checkpoint::load(kan)?)?;
            let coarse = evaluate_coarse(&net, &scene)?;
            writeln!(stdout, "{}", metrics_line("kan", &compute_metrics(&coarse, &truth)?))?;
            save_map(out, "coarse.rkm", &scene, &storable(&coarse, truth.calibration())?, stdout)?;
        }
        Command::TrainRefiner => {
            let bench = cfg.bench()?;
            let data = BenchData::prepare(&bench, cfg.seed, cfg.ratio, true, false)?;
            let trained = train_arm(&bench, Arm::Full, &data, cfg.seed, cfg.ratio)?;
            out.write("refiner.rkck", &trained.net.to_checkpoint().to_bytes()?, stdout)?;
            let mut routing = Vec::new();
            write_routing_csv(&mut routing, &trained.logs)?;
            out.write("routing.csv", &routing, stdout)?;
            let mut log = String::from("epoch,train_loss,val_mse\n");
            for l in &trained.logs {
                log.push_str(&format!("{},{:.9e},{:.9e}\n", l.epoch, l.train_loss, l.val_mse));
            }
            out.write("refiner_log.csv", log.as_bytes(), stdout)?;
            writeln!(stdout, "best_epoch {} train_scenes {}", trained.best_epoch, arm_samples(Arm::Full, &data.train)?.len())?;
        }
        Command::Estimate { scene: args, kan, refiner } => {
            let (scene, truth) = load_scene(&args.scene)?;
            let (obs, sampled) = observations_for(cfg, args, &truth)?;
            if sampled {
                let p = out.path("observations.rko")?;
                save_observations(&p, &obs)?;
                writeln!(stdout, "wrote {}", p.display())?;
            }
            let net = match kan {
                Some(p) => KanNetwork::from_checkpoint(&Checkpoint::load(p)?)?,
                None => fit_scene(&cfg.kan(), &scene, &obs, cfg.seed)?.network,
            };
            let coarse = evaluate_coarse(&net, &scene)?;
            let refiner = match refiner {
                Some(p) => RefinerNet::from_checkpoint(&Checkpoint::load(p)?)?,
                None => {
                    let rc = Arm::Full.refiner_config(&cfg.refiner()?, scene.spec.bands(), scene.height(), scene.width());
                    RefinerNet::new(rc, cfg.seed)?
                }
            };
            let depth = depth_map(&scene, cfg.tau_max)?;
            let prior = assemble_prior_tensor(&coarse, &obs, &scene, &depth)?;
            let estimate = refine(&refiner, &prior, &coarse)?;
            writeln!(stdout, "{}", metrics_line("kan", &compute_metrics(&coarse, &truth)?))?;
            writeln!(stdout, "{}", metrics_line("estimate", &compute_metrics(&estimate, &truth)?))?;
            save_map(out, "coarse.rkm", &scene, &storable(&coarse, truth.calibration())?, stdout)?;
            save_map(out, "estimate.rkm", &scene, &storable(&estimate, truth.calibration())?, stdout)?;
        }
        Command::Experiment => {
            let result = run_experiment(&cfg.bench()?)?;
            write_bench(out, cfg, "experiment", &result, stdout)?;
        }
        Command::Ablate => {
            let result = run_ablation(&cfg.bench()?)?;
            write_bench(out, cfg, "ablation", &result, stdout)?;
        }
        Command::Render { map, band, no_buildings } => {
            let (scene, m) = load_scene(map)?;
            let stem = Path::new(map).file_stem().map_or("map".into(), |s| s.to_string_lossy().into_owned());
            let bytes = render::encode_ppm(&m, *band, (!no_buildings).then_some(&scene))?;
            out.write(&format!("{stem}_band{band}.ppm"), &bytes, stdout)?;
        }
        Command::Selftest => {
            let failures = selftest::run_selftest(stdout, cfg.seed)?;
            writeln!(stdout, "selftest {} failed", failures)?;
            return Ok(if failures == 0 { 0 } else { 1 });
        }
    }
    Ok(0)
}
