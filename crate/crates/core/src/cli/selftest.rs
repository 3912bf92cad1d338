//! Fast in-process property suite behind the `selftest` subcommand.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{decode_scene, encode_scene};
use crate::eval::{compute_metrics, ordinary_kriging, KrigingOptions};
use crate::kan::SplineGrid;
use crate::priors::{bresenham_line, depth_map, DEFAULT_TAU_MAX};
use crate::refiner::{refine, route, RefinerConfig, RefinerNet};
use crate::scene::{generate_scene, sample_observations, simulate_radiomap, PropagationParams, Radiomap, SceneSpec};
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::gradcheck::{check_inputs, DEFAULT_STEP};
use crate::tensor::Tensor;

type Check = fn(&mut ChaCha8Rng) -> Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn spline_partition(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let grid = SplineGrid::new(8, 3).map_err(|e| e.to_string())?;
    for _ in 0..1000 {
        let x: f64 = rng.random_range(-1.0..=1.0);
        let s: f64 = grid.basis(x).iter().sum();
        ensure((s - 1.0).abs() < 1e-12, || format!("basis sum {s} at {x}"))?;
    }
    Ok(())
}

fn routing(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for _ in 0..10_000 {
        let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let r = route(&logits, 2);
        ensure(r.len() == 2, || "wrong number of experts".into())?;
        let s: f64 = r.iter().map(|p| p.1).sum();
        ensure((s - 1.0).abs() < 1e-12, || format!("gate sum {s}"))?;
        let rev: Vec<f64> = logits.iter().rev().cloned().collect();
        let mut a: Vec<(usize, f64)> = route(&rev, 2).into_iter().map(|(e, w)| (3 - e, w)).collect();
        a.sort_by_key(|p| p.0);
        let mut b = r.clone();
        b.sort_by_key(|p| p.0);
        let same = a.iter().zip(&b).all(|(x, y)| x.0 == y.0 && (x.1 - y.1).abs() < 1e-12);
        ensure(same, || format!("permutation changed routing for {logits:?}"))?;
    }
    Ok(())
}

fn line_endpoints(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for _ in 0..1000 {
        let a = (rng.random_range(0..32), rng.random_range(0..32));
        let b = (rng.random_range(0..32), rng.random_range(0..32));
        let line = bresenham_line(a, b, 32, 32).map_err(|e| e.to_string())?;
        let steps = (a.0 as i64 - b.0 as i64).abs().max((a.1 as i64 - b.1 as i64).abs()) as usize;
        let ends = (line[0], line[line.len() - 1]);
        let endpoints_ok = ends == (a, b) || ends == (b, a);
        ensure(endpoints_ok && line.len() == steps + 1, || format!("line {a:?}->{b:?}"))?;
    }
    Ok(())
}

fn depth_clipping(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let spec = SceneSpec { building_count: (20, 30), ..SceneSpec::default() };
    let scene = generate_scene(&spec, rng.random()).map_err(|e| e.to_string())?;
    let d = depth_map(&scene, 2).map_err(|e| e.to_string())?;
    ensure(d.normalized.iter().all(|&v| (0.0..=1.0).contains(&v)), || "normalized depth outside [0,1]".into())?;
    let t = scene.transmitters()[0];
    ensure(d.raw[t.1 * scene.width() + t.0] == scene.is_building(t) as u32, || "depth at the transmitter".into())
}

fn gradients(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let a = Tensor::from_fn(vec![3, 4], |_| rng.random_range(-1.0..1.0));
    let b = Tensor::from_fn(vec![4, 2], |_| rng.random_range(-1.0..1.0));
    let report = check_inputs(&[a, b], DEFAULT_STEP, |g, v| {
        let m = g.matmul(v[0], v[1])?;
        let s = g.softmax_last(m);
        let t = g.silu(s);
        let sq = g.mul(t, m)?;
        Ok(g.sum(sq))
    })
    .map_err(|e| e.to_string())?;
    ensure(report.max_rel_error < 1e-5, || format!("relative error {:.3e}", report.max_rel_error))
}

fn metrics(_: &mut ChaCha8Rng) -> Result<(), String> {
    let truth = Radiomap::from_clamped(2, 2, 1, vec![1.0; 4]).map_err(|e| e.to_string())?;
    let est = Radiomap::from_clamped(2, 2, 1, vec![1.0, 1.0, 1.0, 0.0]).map_err(|e| e.to_string())?;
    let r = compute_metrics(&est, &truth).map_err(|e| e.to_string())?;
    ensure(r.mse_mean == 0.25 && r.nmse_mean == 0.25, || format!("2x2 example gave {r:?}"))
}

fn kriging_constraint(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let scene = generate_scene(&SceneSpec::default(), rng.random()).map_err(|e| e.to_string())?;
    let map = simulate_radiomap(&scene, &PropagationParams::default()).map_err(|e| e.to_string())?;
    let obs = sample_observations(&map, 0.02, rng.random()).map_err(|e| e.to_string())?;
    let out = ordinary_kriging(&obs, &KrigingOptions::default()).map_err(|e| e.to_string())?;
    for (b, o) in obs.bands.iter().enumerate() {
        if out.variograms[b].is_some() {
            for (&c, &v) in o.cells.iter().zip(&o.values) {
                ensure((out.map.band(b)[c] - v).abs() < 1e-8, || "kriging not exact at an observation".into())?;
            }
        }
    }
    Ok(())
}

fn zero_residual(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let spec = SceneSpec { height: 16, width: 16, ..SceneSpec::default() };
    let scene = generate_scene(&spec, rng.random()).map_err(|e| e.to_string())?;
    let map = simulate_radiomap(&scene, &PropagationParams::default()).map_err(|e| e.to_string())?;
    let obs = sample_observations(&map, 0.05, 0).map_err(|e| e.to_string())?;
    let depth = depth_map(&scene, DEFAULT_TAU_MAX).map_err(|e| e.to_string())?;
    let coarse = Radiomap::from_clamped(16, 16, 2, map.values().iter().map(|v| v * 0.9).collect()).map_err(|e| e.to_string())?;
    let prior = crate::priors::assemble_prior_tensor(&coarse, &obs, &scene, &depth).map_err(|e| e.to_string())?;
    let cfg = RefinerConfig { height: 16, width: 16, patch: 2, ..RefinerConfig::default() };
    let net = RefinerNet::new(cfg, rng.random()).map_err(|e| e.to_string())?;
    let out = refine(&net, &prior, &coarse).map_err(|e| e.to_string())?;
    ensure(out == coarse, || "zero-initialized refiner changed the prior".into())
}

fn formats(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let scene = generate_scene(&SceneSpec::default(), rng.random()).map_err(|e| e.to_string())?;
    let map = simulate_radiomap(&scene, &PropagationParams::default()).map_err(|e| e.to_string())?;
    let bytes = encode_scene(&scene, &map).map_err(|e| e.to_string())?;
    let (s2, m2) = decode_scene(&bytes).map_err(|e| e.to_string())?;
    ensure(s2 == scene && m2 == map, || "RKM1 round trip".into())?;
    let net = RefinerNet::new(RefinerConfig::default(), rng.random()).map_err(|e| e.to_string())?;
    let ck = Checkpoint::from_bytes(&net.to_checkpoint().to_bytes().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let back = RefinerNet::from_checkpoint(&ck).map_err(|e| e.to_string())?;
    ensure(net.params().ids().all(|id| net.params().get(id) == back.params().get(id)), || "RKCK round trip".into())
}

pub const CHECKS: [(&str, Check); 9] = [
    ("spline_partition_of_unity", spline_partition),
    ("routing_invariants", routing),
    ("line_endpoints", line_endpoints),
    ("depth_clipping", depth_clipping),
    ("gradient_check", gradients),
    ("metric_example", metrics),
    ("kriging_interpolates", kriging_constraint),
    ("zero_residual_identity", zero_residual),
    ("format_round_trips", formats),
];

/// Runs every check, printing `selftest <name> pass|fail [detail]`.
/// Returns the number of failures.
pub fn run_selftest(out: &mut impl Write, seed: u64) -> std::io::Result<usize> {
    let mut failures = 0;
    for (i, (name, check)) in CHECKS.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        match check(&mut rng) {
            Ok(()) => writeln!(out, "selftest {name} pass")?,
            Err(msg) => {
                failures += 1;
                writeln!(out, "selftest {name} fail {msg}")?;
            }
        }
    }
    Ok(failures)
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        let mut out = Vec::new();
        let failures = super::run_selftest(&mut out, 0).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(failures, 0, "{text}");
        assert_eq!(text.lines().count(), super::CHECKS.len());
    }
}
