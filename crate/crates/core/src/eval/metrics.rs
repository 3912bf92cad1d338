//! Reconstruction error metrics on the normalized linear scale.

use crate::error::{invalid, shape_err, Result};
use crate::scene::{RadioScene, Radiomap};

/// Per-band and band-averaged errors of one estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub mse: Vec<f64>,
    pub nmse: Vec<f64>,
    /// `ΣR² / n` of each truth band over the evaluated cells.
    pub mean_square_truth: Vec<f64>,
    pub mse_mean: f64,
    pub nmse_mean: f64,
    /// Cells per band that entered the sums.
    pub cells: usize,
}

impl MetricReport {
    /// Largest violation of `MSE = NMSE · ΣR²/n` across bands.
    pub fn scale_relation_error(&self) -> f64 {
        self.mse
            .iter()
            .zip(&self.nmse)
            .zip(&self.mean_square_truth)
            .map(|((m, n), s)| (m - n * s).abs())
            .fold(0.0, f64::max)
    }
}

/// Metrics over every cell of the map.
pub fn compute_metrics(estimate: &Radiomap, truth: &Radiomap) -> Result<MetricReport> {
    metrics_over(estimate, truth, None)
}

/// Metrics restricted to cells outside buildings.
pub fn compute_metrics_open(estimate: &Radiomap, truth: &Radiomap, scene: &RadioScene) -> Result<MetricReport> {
    if scene.height() != truth.height() || scene.width() != truth.width() {
        return shape_err("scene and maps differ in size");
    }
    let open: Vec<bool> = scene.buildings().iter().map(|&b| b == 0).collect();
    metrics_over(estimate, truth, Some(&open))
}

fn metrics_over(estimate: &Radiomap, truth: &Radiomap, keep: Option<&[bool]>) -> Result<MetricReport> {
    if !estimate.same_grid(truth) {
        return shape_err(format!(
            "estimate {}x{}x{} vs truth {}x{}x{}",
            estimate.bands(),
            estimate.height(),
            estimate.width(),
            truth.bands(),
            truth.height(),
            truth.width()
        ));
    }
    let cells = keep.map_or(truth.height() * truth.width(), |k| k.iter().filter(|&&b| b).count());
    if cells == 0 {
        return invalid("no cells to evaluate");
    }
    let bands = truth.bands();
    let (mut mse, mut nmse, mut msq) = (Vec::with_capacity(bands), Vec::with_capacity(bands), Vec::with_capacity(bands));
    for f in 0..bands {
        let (mut err, mut energy) = (0.0, 0.0);
        for (i, (e, r)) in estimate.band(f).iter().zip(truth.band(f)).enumerate() {
            if keep.is_some_and(|k| !k[i]) {
                continue;
            }
            err += (e - r) * (e - r);
            energy += r * r;
        }
        if energy == 0.0 {
            return invalid(format!("truth band {f} is identically zero; NMSE undefined"));
        }
        mse.push(err / cells as f64);
        nmse.push(err / energy);
        msq.push(energy / cells as f64);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(MetricReport { mse_mean: mean(&mse), nmse_mean: mean(&nmse), mse, nmse, mean_square_truth: msq, cells })
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
