//! Knowledge-guided prior channels: building, transmitter and radio-depth
//! maps, observation rasters, and their assembly into the refiner input.

use crate::error::{invalid, shape_err, Result};
use crate::scene::{Cell, ObservationSet, Radiomap, RadioScene};
use crate::tensor::Tensor;

pub const DEFAULT_TAU_MAX: u32 = 150;

/// Version of the channel layout emitted by [`assemble_prior_tensor`].
pub const CHANNEL_ORDER_VERSION: u32 = 1;

/// Visit the cells of the integer Bresenham segment between `a` and `b`,
/// endpoints included. The segment is always traced from the
/// lexicographically smaller endpoint, so the cell set does not depend on
/// argument order. Ties in the minor coordinate round toward the start.
pub fn for_each_line_cell(a: Cell, b: Cell, mut visit: impl FnMut(Cell)) {
    let (start, end) = if a <= b { (a, b) } else { (b, a) };
    let (x0, y0) = (start.0 as isize, start.1 as isize);
    let (x1, y1) = (end.0 as isize, end.1 as isize);
    let dx = x1 - x0;
    let dy = (y1 - y0).abs();
    let sy = if y1 >= y0 { 1 } else { -1 };
    if dy <= dx {
        let mut d = 2 * dy - dx;
        let mut y = y0;
        for x in x0..=x1 {
            visit((x as usize, y as usize));
            if d > 0 {
                y += sy;
                d -= 2 * dx;
            }
            d += 2 * dy;
        }
    } else {
        let mut d = 2 * dx - dy;
        let mut x = x0;
        let mut y = y0;
        for _ in 0..=dy {
            visit((x as usize, y as usize));
            if d > 0 {
                x += 1;
                d -= 2 * dy;
            }
            d += 2 * dx;
            y += sy;
        }
    }
}

pub fn bresenham_line(a: Cell, b: Cell, height: usize, width: usize) -> Result<Vec<Cell>> {
    for &(x, y) in &[a, b] {
        if x >= width || y >= height {
            return invalid(format!("cell ({x}, {y}) outside {width}x{height} grid"));
        }
    }
    let mut cells = Vec::new();
    for_each_line_cell(a, b, |c| cells.push(c));
    Ok(cells)
}

/// Building cells on the segment from each cell to `t`, endpoints included.
pub fn depth_counts(scene: &RadioScene, t: Cell) -> Vec<u32> {
    let w = scene.width();
    let e = scene.buildings();
    (0..scene.cells())
        .map(|i| {
            let mut count = 0u32;
            for_each_line_cell(scene.cell_of(i), t, |(x, y)| count += e[y * w + x] as u32);
            count
        })
        .collect()
}

pub fn normalize_depth(count: u32, tau_max: u32) -> f64 {
    (count as f64 / tau_max as f64).min(1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub raw: Vec<u32>,
    pub normalized: Vec<f64>,
    pub tau_max: u32,
}

impl DepthMap {
    fn from_raw(height: usize, width: usize, raw: Vec<u32>, tau_max: u32) -> Result<Self> {
        if tau_max == 0 {
            return invalid("tau_max must be positive");
        }
        let normalized = raw.iter().map(|&d| normalize_depth(d, tau_max)).collect();
        Ok(DepthMap { height, width, raw, normalized, tau_max })
    }
}

/// Depth map for a single transmitter cell.
pub fn depth_map_for(scene: &RadioScene, t: Cell, tau_max: u32) -> Result<DepthMap> {
    if t.0 >= scene.width() || t.1 >= scene.height() {
        return invalid(format!("transmitter {t:?} outside the grid"));
    }
    DepthMap::from_raw(scene.height(), scene.width(), depth_counts(scene, t), tau_max)
}

/// Depth map over all transmitters of the scene: the least-obstructed link
/// (elementwise minimum) is kept before normalizing.
pub fn depth_map(scene: &RadioScene, tau_max: u32) -> Result<DepthMap> {
    let mut raw = vec![u32::MAX; scene.cells()];
    for &t in scene.transmitters() {
        for (r, d) in raw.iter_mut().zip(depth_counts(scene, t)) {
            *r = (*r).min(d);
        }
    }
    DepthMap::from_raw(scene.height(), scene.width(), raw, tau_max)
}

/// Transmitter indicator raster.
pub fn tx_map(scene: &RadioScene) -> Vec<f64> {
    let mut t = vec![0.0; scene.cells()];
    for &(x, y) in scene.transmitters() {
        t[y * scene.width() + x] = 1.0;
    }
    t
}

/// Sparse observation raster `S_f` and its 0/1 mask `M_f` for band `f`.
pub fn observation_raster(obs: &ObservationSet, band: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let b = obs
        .bands
        .get(band)
        .ok_or_else(|| crate::Error::InvalidArgument(format!("band {band} not observed")))?;
    if b.cells.is_empty() {
        return invalid("observation list is empty");
    }
    let n = obs.height * obs.width;
    let mut s = vec![0.0; n];
    let mut m = vec![0.0; n];
    for (&c, &v) in b.cells.iter().zip(&b.values) {
        if c >= n {
            return invalid(format!("observation cell {c} outside the grid"));
        }
        if m[c] == 1.0 {
            return invalid(format!("duplicate observation at cell {c}"));
        }
        s[c] = v;
        m[c] = 1.0;
    }
    Ok((s, m))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    Coarse(usize),
    Observed(usize),
    Mask(usize),
    Building,
    Transmitter,
    Depth,
}

impl ChannelKind {
    pub fn label(&self) -> String {
        match self {
            ChannelKind::Coarse(f) => format!("coarse[{f}]"),
            ChannelKind::Observed(f) => format!("observed[{f}]"),
            ChannelKind::Mask(f) => format!("mask[{f}]"),
            ChannelKind::Building => "building".into(),
            ChannelKind::Transmitter => "transmitter".into(),
            ChannelKind::Depth => "depth".into(),
        }
    }

    /// Full layout for `bands` bands: coarse priors, observation rasters,
    /// masks, then building, transmitter and normalized depth.
    pub fn full_layout(bands: usize) -> Vec<ChannelKind> {
        let mut v: Vec<ChannelKind> = (0..bands).map(ChannelKind::Coarse).collect();
        v.extend((0..bands).map(ChannelKind::Observed));
        v.extend((0..bands).map(ChannelKind::Mask));
        v.extend([ChannelKind::Building, ChannelKind::Transmitter, ChannelKind::Depth]);
        v
    }
}

/// Channel-major `d_in × H × W` stack of prior rasters.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorTensor {
    pub height: usize,
    pub width: usize,
    channels: Vec<ChannelKind>,
    data: Vec<f64>,
}

/// The individual rasters a [`PriorTensor`] was assembled from.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorParts {
    pub coarse: Vec<Vec<f64>>,
    pub observed: Vec<Vec<f64>>,
    pub masks: Vec<Vec<f64>>,
    pub building: Vec<f64>,
    pub transmitter: Vec<f64>,
    pub depth: Vec<f64>,
}

impl PriorTensor {
    pub fn d_in(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[ChannelKind] {
        &self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, kind: ChannelKind) -> Option<&[f64]> {
        let n = self.height * self.width;
        self.channels.iter().position(|&k| k == kind).map(|i| &self.data[i * n..(i + 1) * n])
    }

    /// Keep only the listed channels, in the listed order.
    pub fn select(&self, kinds: &[ChannelKind]) -> Result<PriorTensor> {
        let mut data = Vec::with_capacity(kinds.len() * self.height * self.width);
        for &k in kinds {
            let c = self.channel(k).ok_or_else(|| crate::Error::InvalidArgument(format!("no channel {}", k.label())))?;
            data.extend_from_slice(c);
        }
        Ok(PriorTensor { height: self.height, width: self.width, channels: kinds.to_vec(), data })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([self.d_in(), self.height, self.width], self.data.clone()).expect("prior tensor shape")
    }

    /// `index<TAB>label` lines, for experiment metadata.
    pub fn channel_table(&self) -> String {
        self.channels.iter().enumerate().map(|(i, k)| format!("{i}\t{}\n", k.label())).collect()
    }

    pub fn disassemble(&self) -> Result<PriorParts> {
        let bands = self.channels.iter().filter(|k| matches!(k, ChannelKind::Coarse(_))).count();
        let get = |k: ChannelKind| -> Result<Vec<f64>> {
            self.channel(k)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| crate::Error::InvalidArgument(format!("no channel {}", k.label())))
        };
        Ok(PriorParts {
            coarse: (0..bands).map(|f| get(ChannelKind::Coarse(f))).collect::<Result<_>>()?,
            observed: (0..bands).map(|f| get(ChannelKind::Observed(f))).collect::<Result<_>>()?,
            masks: (0..bands).map(|f| get(ChannelKind::Mask(f))).collect::<Result<_>>()?,
            building: get(ChannelKind::Building)?,
            transmitter: get(ChannelKind::Transmitter)?,
            depth: get(ChannelKind::Depth)?,
        })
    }
}

pub fn assemble_prior_tensor(
    coarse: &Radiomap,
    obs: &ObservationSet,
    scene: &RadioScene,
    depth: &DepthMap,
) -> Result<PriorTensor> {
    let (h, w) = (scene.height(), scene.width());
    let bands = coarse.bands();
    if coarse.height() != h || coarse.width() != w || obs.height != h || obs.width != w || depth.height != h || depth.width != w {
        return shape_err("prior rasters do not share one grid");
    }
    if obs.band_count() != bands || scene.spec.bands() != bands {
        return shape_err(format!(
            "coarse prior has {bands} bands, observations {}, scene {}",
            obs.band_count(),
            scene.spec.bands()
        ));
    }
    let channels = ChannelKind::full_layout(bands);
    let mut data = Vec::with_capacity(channels.len() * h * w);
    let rasters: Vec<(Vec<f64>, Vec<f64>)> = (0..bands).map(|f| observation_raster(obs, f)).collect::<Result<_>>()?;
    for f in 0..bands {
        data.extend_from_slice(coarse.band(f));
    }
    for (s, _) in &rasters {
        data.extend_from_slice(s);
    }
    for (_, m) in &rasters {
        data.extend_from_slice(m);
    }
    data.extend(scene.buildings().iter().map(|&b| b as f64));
    data.extend(tx_map(scene));
    data.extend_from_slice(&depth.normalized);
    Ok(PriorTensor { height: h, width: w, channels, data })
}
