//! Classical spatial interpolation baselines: inverse distance weighting
//! and ordinary kriging with an exponential variogram.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::scene::{ObservationSet, Radiomap};

/// Observation samples of one band as `(x, y, value)` in cell units.
fn band_points(obs: &ObservationSet, band: usize) -> Vec<(f64, f64, f64)> {
    let b = &obs.bands[band];
    b.cells
        .iter()
        .zip(&b.values)
        .map(|(&c, &v)| ((c % obs.width) as f64, (c / obs.width) as f64, v))
        .collect()
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn idw_at(points: &[(f64, f64, f64)], at: (f64, f64), power: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &(x, y, v) in points {
        let d = dist((x, y), at);
        if d == 0.0 {
            return v;
        }
        let w = d.powf(-power);
        num += w * v;
        den += w;
    }
    num / den
}

/// Inverse-distance-weighted estimate of every band; observed cells keep
/// their observed values.
pub fn idw_interpolate(obs: &ObservationSet, power: f64) -> Result<Radiomap> {
    obs.validate()?;
    if !(power > 0.0) {
        return invalid(format!("IDW power must be positive, got {power}"));
    }
    let (h, w) = (obs.height, obs.width);
    let mut values = Vec::with_capacity(obs.band_count() * h * w);
    for f in 0..obs.band_count() {
        let points = band_points(obs, f);
        if points.is_empty() {
            return invalid(format!("band {f} has no observations"));
        }
        for i in 0..h * w {
            values.push(idw_at(&points, ((i % w) as f64, (i / w) as f64), power));
        }
    }
    Radiomap::from_clamped(h, w, obs.band_count(), values)
}

/// `γ(h) = nugget + sill · (1 − exp(−h / range))` for `h > 0`, `γ(0) = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Variogram {
    pub nugget: f64,
    pub sill: f64,
    /// Range parameter in cell units.
    pub range: f64,
}

impl Variogram {
    pub fn gamma(&self, h: f64) -> f64 {
        if h == 0.0 {
            0.0
        } else {
            self.nugget + self.sill * (1.0 - (-h / self.range).exp())
        }
    }

    /// Method-of-moments fit: the empirical semivariogram is binned by lag,
    /// then for each candidate range the nugget and sill come from a
    /// non-negative weighted least-squares fit; the best range wins.
    pub fn fit(points: &[(f64, f64, f64)]) -> Variogram {
        let mut pairs = Vec::new();
        let mut max_lag: f64 = 0.0;
        for (i, a) in points.iter().enumerate() {
            for b in &points[i + 1..] {
                let h = dist((a.0, a.1), (b.0, b.1));
                max_lag = max_lag.max(h);
                pairs.push((h, 0.5 * (a.2 - b.2).powi(2)));
            }
        }
        if pairs.is_empty() || max_lag == 0.0 {
            return Variogram { nugget: 0.0, sill: 0.0, range: 1.0 };
        }
        let n_bins = pairs.len().clamp(1, 10);
        let width = max_lag / n_bins as f64;
        let mut bins = vec![(0.0, 0.0, 0usize); n_bins];
        for &(h, g) in &pairs {
            let b = ((h / width) as usize).min(n_bins - 1);
            bins[b].0 += h;
            bins[b].1 += g;
            bins[b].2 += 1;
        }
        let lags: Vec<(f64, f64, f64)> = bins
            .into_iter()
            .filter(|b| b.2 > 0)
            .map(|(h, g, n)| (h / n as f64, g / n as f64, n as f64))
            .collect();
        let mut best = (f64::INFINITY, Variogram { nugget: 0.0, sill: 0.0, range: 1.0 });
        for step in 1..=40 {
            let range = max_lag * step as f64 / 40.0;
            let fit = fit_nugget_sill(&lags, range);
            let sse: f64 = lags.iter().map(|&(h, g, n)| n * (fit.gamma(h) - g).powi(2)).sum();
            if sse < best.0 {
                best = (sse, fit);
            }
        }
        best.1
    }
}

/// Weighted least squares for `g ≈ a + b·u` with `u = 1 − exp(−h/range)`,
/// restricted to `a, b ≥ 0`.
fn fit_nugget_sill(lags: &[(f64, f64, f64)], range: f64) -> Variogram {
    let u = |h: f64| 1.0 - (-h / range).exp();
    let (mut sw, mut su, mut sg, mut suu, mut sug) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(h, g, n) in lags {
        let x = u(h);
        sw += n;
        su += n * x;
        sg += n * g;
        suu += n * x * x;
        sug += n * x * g;
    }
    let det = sw * suu - su * su;
    let (mut a, mut b) = if det.abs() > 1e-300 {
        ((suu * sg - su * sug) / det, (sw * sug - su * sg) / det)
    } else {
        (sg / sw, 0.0)
    };
    if a < 0.0 {
        a = 0.0;
        b = if suu > 0.0 { (sug / suu).max(0.0) } else { 0.0 };
    }
    if b < 0.0 {
        b = 0.0;
        a = (sg / sw).max(0.0);
    }
    Variogram { nugget: a, sill: b, range }
}

/// Factored ordinary-kriging system for one band's observations.
#[derive(Clone, Debug)]
pub struct KrigingSystem {
    points: Vec<(f64, f64, f64)>,
    variogram: Variogram,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl KrigingSystem {
    /// Builds and factors the `(N+1)×(N+1)` system. Fails when it is
    /// numerically singular (reciprocal condition below `1e-12`).
    pub fn new(points: Vec<(f64, f64, f64)>, variogram: Variogram) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::Singular(format!("ordinary kriging needs at least 2 observations, got {n}")));
        }
        let mut a = DMatrix::<f64>::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = variogram.gamma(dist((points[i].0, points[i].1), (points[j].0, points[j].1)));
            }
            a[(i, n)] = 1.0;
            a[(n, i)] = 1.0;
        }
        let sv = a.clone().singular_values();
        let (lo, hi) = (sv.min(), sv.max());
        if !(hi > 0.0) || lo / hi < 1e-12 {
            return Err(Error::Singular(format!("kriging system has reciprocal condition {:.3e}", lo / hi)));
        }
        Ok(KrigingSystem { points, variogram, lu: a.lu() })
    }

    pub fn variogram(&self) -> Variogram {
        self.variogram
    }

    /// Kriging weights at `(x, y)`, one per observation.
    pub fn weights(&self, x: f64, y: f64) -> Vec<f64> {
        let n = self.points.len();
        let mut rhs = DVector::<f64>::zeros(n + 1);
        for (i, p) in self.points.iter().enumerate() {
            rhs[i] = self.variogram.gamma(dist((p.0, p.1), (x, y)));
        }
        rhs[n] = 1.0;
        let sol = self.lu.solve(&rhs).expect("factored system is nonsingular");
        sol.as_slice()[..n].to_vec()
    }

    pub fn predict(&self, x: f64, y: f64) -> f64 {
        self.weights(x, y).iter().zip(&self.points).map(|(w, p)| w * p.2).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrigingOptions {
    /// Fixed variogram; fitted per band when `None`.
    pub variogram: Option<Variogram>,
    /// Use IDW (power 2) for bands whose system is singular.
    pub idw_fallback: bool,
}

impl Default for KrigingOptions {
    fn default() -> Self {
        KrigingOptions { variogram: None, idw_fallback: true }
    }
}

#[derive(Clone, Debug)]
pub struct KrigingOutput {
    pub map: Radiomap,
    /// Per band: the variogram used, or `None` where IDW replaced kriging.
    pub variograms: Vec<Option<Variogram>>,
}

impl KrigingOutput {
    pub fn fell_back(&self) -> bool {
        self.variograms.iter().any(Option::is_none)
    }
}

pub fn ordinary_kriging(obs: &ObservationSet, options: &KrigingOptions) -> Result<KrigingOutput> {
    obs.validate()?;
    let (h, w) = (obs.height, obs.width);
    let mut values = Vec::with_capacity(obs.band_count() * h * w);
    let mut variograms = Vec::with_capacity(obs.band_count());
    for f in 0..obs.band_count() {
        let points = band_points(obs, f);
        let vg = options.variogram.unwrap_or_else(|| Variogram::fit(&points));
        match KrigingSystem::new(points.clone(), vg) {
            Ok(sys) => {
                for i in 0..h * w {
                    values.push(sys.predict((i % w) as f64, (i / w) as f64));
                }
                variograms.push(Some(vg));
            }
            Err(e) if !options.idw_fallback => return Err(e),
            Err(_) => {
                if points.is_empty() {
                    return invalid(format!("band {f} has no observations"));
                }
                for i in 0..h * w {
                    values.push(idw_at(&points, ((i % w) as f64, (i / w) as f64), 2.0));
                }
                variograms.push(None);
            }
        }
    }
    Ok(KrigingOutput { map: Radiomap::from_clamped(h, w, obs.band_count(), values)?, variograms })
}
