//! Synthetic urban scenes and their ground-truth multiband radiomaps.
//!
//! Cells are addressed as `(x, y)` with `x` the column and `y` the row;
//! rasters are stored row-major (`y * width + x`). Radiomaps are stored
//! band-major: `F` consecutive `H×W` planes.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::priors;

pub type Cell = (usize, usize);

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub cell_size_m: f64,
    /// Inclusive range of rectangles drawn per scene.
    pub building_count: (usize, usize),
    /// Inclusive range of rectangle side lengths, in cells.
    pub building_size: (usize, usize),
    pub transmitters: usize,
    pub frequencies_hz: Vec<f64>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: 32,
            width: 32,
            cell_size_m: 4.0,
            building_count: (3, 8),
            building_size: (3, 8),
            transmitters: 1,
            frequencies_hz: vec![2.4e9, 5.8e9],
        }
    }
}

impl SceneSpec {
    pub fn bands(&self) -> usize {
        self.frequencies_hz.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return invalid(format!("grid {}x{} smaller than 16x16", self.height, self.width));
        }
        if !(self.cell_size_m > 0.0 && self.cell_size_m.is_finite()) {
            return invalid("cell size must be positive");
        }
        if self.building_count.0 > self.building_count.1 {
            return invalid("building count range is empty");
        }
        let (lo, hi) = self.building_size;
        if lo == 0 || lo > hi || hi > self.height.min(self.width) {
            return invalid(format!("building size range ({lo}, {hi}) does not fit the grid"));
        }
        if self.transmitters == 0 {
            return invalid("at least one transmitter is required");
        }
        if self.frequencies_hz.is_empty() {
            return invalid("at least one frequency band is required");
        }
        if self.frequencies_hz.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return invalid("frequencies must be positive");
        }
        Ok(())
    }

    /// Lowest band frequency, the reference for the frequency term.
    pub fn reference_frequency(&self) -> f64 {
        self.frequencies_hz.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RadioScene {
    pub spec: SceneSpec,
    /// Building occupancy, 1 on building cells.
    buildings: Vec<u8>,
    transmitters: Vec<Cell>,
}

impl RadioScene {
    pub fn new(spec: SceneSpec, buildings: Vec<u8>, transmitters: Vec<Cell>) -> Result<Self> {
        spec.validate()?;
        if buildings.len() != spec.height * spec.width {
            return invalid("building raster does not match the grid");
        }
        if buildings.iter().any(|&b| b > 1) {
            return invalid("building raster must be binary");
        }
        if transmitters.is_empty() {
            return invalid("scene has no transmitter");
        }
        for &(x, y) in &transmitters {
            if x >= spec.width || y >= spec.height {
                return invalid(format!("transmitter ({x}, {y}) outside the grid"));
            }
            if buildings[y * spec.width + x] == 1 {
                return invalid(format!("transmitter ({x}, {y}) inside a building"));
            }
        }
        Ok(RadioScene { spec, buildings, transmitters })
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn cells(&self) -> usize {
        self.spec.height * self.spec.width
    }

    pub fn buildings(&self) -> &[u8] {
        &self.buildings
    }

    pub fn is_building(&self, (x, y): Cell) -> bool {
        self.buildings[y * self.spec.width + x] == 1
    }

    pub fn transmitters(&self) -> &[Cell] {
        &self.transmitters
    }

    pub fn building_fraction(&self) -> f64 {
        self.buildings.iter().map(|&b| b as f64).sum::<f64>() / self.buildings.len() as f64
    }

    /// Euclidean distance in meters between cell centers.
    pub fn distance_m(&self, a: Cell, b: Cell) -> f64 {
        let dx = a.0 as f64 - b.0 as f64;
        let dy = a.1 as f64 - b.1 as f64;
        (dx * dx + dy * dy).sqrt() * self.spec.cell_size_m
    }

    pub fn cell_of(&self, index: usize) -> Cell {
        (index % self.spec.width, index / self.spec.width)
    }
}

/// Draw a scene: uniform rectangles (overlaps merge) and transmitters drawn
/// uniformly from the remaining open cells.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<RadioScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (spec.height, spec.width);
    let mut buildings = vec![0u8; h * w];
    let count = rng.random_range(spec.building_count.0..=spec.building_count.1);
    for _ in 0..count {
        let bw = rng.random_range(spec.building_size.0..=spec.building_size.1);
        let bh = rng.random_range(spec.building_size.0..=spec.building_size.1);
        let x0 = rng.random_range(0..=w - bw);
        let y0 = rng.random_range(0..=h - bh);
        for y in y0..y0 + bh {
            buildings[y * w + x0..y * w + x0 + bw].fill(1);
        }
    }
    let open: Vec<usize> = (0..h * w).filter(|&i| buildings[i] == 0).collect();
    if open.len() < spec.transmitters {
        return invalid(format!("only {} open cells for {} transmitters", open.len(), spec.transmitters));
    }
    let transmitters = index::sample(&mut rng, open.len(), spec.transmitters)
        .into_iter()
        .map(|i| (open[i] % w, open[i] / w))
        .collect();
    RadioScene::new(spec.clone(), buildings, transmitters)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagationParams {
    pub path_loss_exponent: f64,
    pub ref_distance_m: f64,
    /// Loss per building cell crossed by the direct path.
    pub penetration_db: f64,
    pub p0_db: f64,
    /// Values are clipped to `[p0_db - dynamic_range_db, p0_db]`.
    pub dynamic_range_db: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        PropagationParams {
            path_loss_exponent: 3.0,
            ref_distance_m: 4.0,
            penetration_db: 2.5,
            p0_db: -30.0,
            dynamic_range_db: 120.0,
        }
    }
}

impl PropagationParams {
    /// Received power in dB for one link, before clipping.
    pub fn received_db(&self, distance_m: f64, freq_hz: f64, ref_freq_hz: f64, depth: u32) -> f64 {
        let d = distance_m.max(self.ref_distance_m);
        self.p0_db
            - 10.0 * self.path_loss_exponent * (d / self.ref_distance_m).log10()
            - 20.0 * (freq_hz / ref_freq_hz).log10()
            - self.penetration_db * depth as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Radiomap {
    height: usize,
    width: usize,
    bands: usize,
    values: Vec<f64>,
    /// Per band `(min_db, max_db)`; `db = min + v·(max − min)`.
    calibration: Vec<(f64, f64)>,
}

impl Radiomap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, calibration: Vec<(f64, f64)>) -> Result<Self> {
        let bands = calibration.len();
        if bands == 0 || values.len() != height * width * bands {
            return invalid(format!(
                "radiomap {height}x{width} with {bands} bands cannot hold {} values",
                values.len()
            ));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return invalid("radiomap values must lie in [0, 1]");
        }
        if calibration.iter().any(|(lo, hi)| !(lo < hi)) {
            return invalid("calibration requires min_db < max_db");
        }
        Ok(Radiomap { height, width, bands, values, calibration })
    }

    /// Build from unconstrained values, clamping into `[0, 1]`, with a unit
    /// calibration. Used for estimates.
    pub fn from_clamped(height: usize, width: usize, bands: usize, values: Vec<f64>) -> Result<Self> {
        let values = values.into_iter().map(|v| if v.is_nan() { v } else { v.clamp(0.0, 1.0) }).collect::<Vec<_>>();
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("radiomap estimate".into()));
        }
        Self::new(height, width, values, vec![(0.0, 1.0); bands])
    }

    pub fn zeros(height: usize, width: usize, bands: usize) -> Self {
        Radiomap { height, width, bands, values: vec![0.0; height * width * bands], calibration: vec![(0.0, 1.0); bands] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn band(&self, f: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[f * n..(f + 1) * n]
    }

    pub fn get(&self, f: usize, (x, y): Cell) -> f64 {
        self.values[(f * self.height + y) * self.width + x]
    }

    pub fn calibration(&self) -> &[(f64, f64)] {
        &self.calibration
    }

    pub fn to_db(&self, f: usize, v: f64) -> f64 {
        let (lo, hi) = self.calibration[f];
        lo + v * (hi - lo)
    }

    pub fn same_grid(&self, other: &Radiomap) -> bool {
        self.height == other.height && self.width == other.width && self.bands == other.bands
    }
}

/// Received power per band in dB, clipped to the dynamic range. Multiple
/// transmitters combine by maximum.
pub fn simulate_db(scene: &RadioScene, params: &PropagationParams) -> Vec<Vec<f64>> {
    let n = scene.cells();
    let f_ref = scene.spec.reference_frequency();
    let depths: Vec<Vec<u32>> = scene.transmitters().iter().map(|&t| priors::depth_counts(scene, t)).collect();
    let floor = params.p0_db - params.dynamic_range_db;
    scene
        .spec
        .frequencies_hz
        .iter()
        .map(|&f| {
            (0..n)
                .map(|i| {
                    let cell = scene.cell_of(i);
                    let best = scene
                        .transmitters()
                        .iter()
                        .zip(&depths)
                        .map(|(&t, d)| params.received_db(scene.distance_m(cell, t), f, f_ref, d[i]))
                        .fold(f64::NEG_INFINITY, f64::max);
                    best.clamp(floor, params.p0_db)
                })
                .collect()
        })
        .collect()
}

/// Ground-truth radiomap: simulated dB, min–max normalized per band.
/// Normalized values are rounded to single precision so that the map is
/// exactly representable in the dataset file format.
pub fn simulate_radiomap(scene: &RadioScene, params: &PropagationParams) -> Result<Radiomap> {
    let db = simulate_db(scene, params);
    let mut values = Vec::with_capacity(scene.cells() * db.len());
    let mut calibration = Vec::with_capacity(db.len());
    for (f, band) in db.iter().enumerate() {
        let lo = band.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = band.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return invalid(format!("band {f} is constant after clipping"));
        }
        calibration.push((lo, hi));
        values.extend(band.iter().map(|&v| ((v - lo) / (hi - lo)) as f32 as f64));
    }
    Radiomap::new(scene.height(), scene.width(), values, calibration)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandObservations {
    /// Flat cell indices, strictly increasing.
    pub cells: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    pub height: usize,
    pub width: usize,
    pub bands: Vec<BandObservations>,
}

impl ObservationSet {
    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    /// Observations in the first band (all bands have the same count).
    pub fn len(&self) -> usize {
        self.bands.first().map_or(0, |b| b.cells.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ratio(&self) -> f64 {
        self.len() as f64 / (self.height * self.width) as f64
    }

    pub fn shared_cells(&self) -> bool {
        self.bands.windows(2).all(|w| w[0].cells == w[1].cells)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return invalid("observation set is empty");
        }
        for (f, b) in self.bands.iter().enumerate() {
            if b.cells.len() != n || b.values.len() != n {
                return invalid(format!("band {f} has a different observation count"));
            }
            if b.cells.windows(2).any(|w| w[0] >= w[1]) {
                return invalid(format!("band {f} cells are not unique and sorted"));
            }
            if b.cells.iter().any(|&c| c >= self.height * self.width) {
                return invalid(format!("band {f} has a cell outside the grid"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingOptions {
    /// Additive Gaussian noise in normalized units; results are clamped to
    /// [0, 1] and rounded to single precision.
    pub noise_sigma: f64,
    /// Co-located sensors: one cell set shared by all bands.
    pub shared_cells: bool,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        SamplingOptions { noise_sigma: 0.0, shared_cells: true }
    }
}

/// Number of observations for a sampling ratio on an `H×W` grid.
pub fn observation_count(ratio: f64, height: usize, width: usize) -> usize {
    ((ratio * (height * width) as f64).round() as usize).max(1)
}

pub fn sample_observations(map: &Radiomap, ratio: f64, seed: u64) -> Result<ObservationSet> {
    sample_observations_with(map, ratio, seed, &SamplingOptions::default())
}

pub fn sample_observations_with(
    map: &Radiomap,
    ratio: f64,
    seed: u64,
    options: &SamplingOptions,
) -> Result<ObservationSet> {
    if !(ratio > 0.0 && ratio <= 0.25) {
        return invalid(format!("sampling ratio {ratio} outside (0, 0.25]"));
    }
    if !(options.noise_sigma >= 0.0 && options.noise_sigma.is_finite()) {
        return invalid("noise sigma must be non-negative");
    }
    let total = map.height() * map.width();
    let n = observation_count(ratio, map.height(), map.width());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, options.noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let draw_cells = |rng: &mut ChaCha8Rng| {
        let mut cells = index::sample(rng, total, n).into_vec();
        cells.sort_unstable();
        cells
    };
    let shared = draw_cells(&mut rng);
    let mut bands = Vec::with_capacity(map.bands());
    for f in 0..map.bands() {
        let cells = if options.shared_cells || f == 0 { shared.clone() } else { draw_cells(&mut rng) };
        let values = cells
            .iter()
            .map(|&c| {
                let v = map.band(f)[c];
                if options.noise_sigma > 0.0 {
                    (v + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32 as f64
                } else {
                    v
                }
            })
            .collect();
        bands.push(BandObservations { cells, values });
    }
    Ok(ObservationSet { height: map.height(), width: map.width(), bands })
}
