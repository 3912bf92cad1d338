//! Binary PPM (P6) rendering of one radiomap band.

use std::io::Write;
use std::path::Path;

use crate::error::{invalid, Result};
use crate::scene::{RadioScene, Radiomap};

/// Anchors of the colormap, evenly spaced over `[0, 1]`: dark purple, blue,
/// teal, green, yellow. Entries between anchors are linear blends rounded
/// to the nearest integer.
pub const COLORMAP_ANCHORS: [[u8; 3]; 5] = [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]];

/// Color of building cells when the overlay is on; not in the colormap.
pub const BUILDING_COLOR: [u8; 3] = [255, 255, 255];

/// The 256-entry colormap; entry `i` colors the value `i / 255`.
pub fn colormap() -> [[u8; 3]; 256] {
    let mut map = [[0u8; 3]; 256];
    let segments = (COLORMAP_ANCHORS.len() - 1) as f64;
    for (i, entry) in map.iter_mut().enumerate() {
        let t = i as f64 / 255.0 * segments;
        let s = (t.floor() as usize).min(COLORMAP_ANCHORS.len() - 2);
        let u = t - s as f64;
        let (a, b) = (COLORMAP_ANCHORS[s], COLORMAP_ANCHORS[s + 1]);
        for c in 0..3 {
            entry[c] = (a[c] as f64 + u * (b[c] as f64 - a[c] as f64)).round() as u8;
        }
    }
    map
}

/// Colormap index of a value: `round(255·v)` after clamping to `[0, 1]`.
pub fn color_index(v: f64) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

/// Encodes `band` as a P6 image; with a scene, building cells are painted
/// in [`BUILDING_COLOR`].
pub fn encode_ppm(map: &Radiomap, band: usize, buildings: Option<&RadioScene>) -> Result<Vec<u8>> {
    if band >= map.bands() {
        return invalid(format!("band {band} out of range for a {}-band map", map.bands()));
    }
    if let Some(s) = buildings {
        if s.height() != map.height() || s.width() != map.width() {
            return invalid("scene and map differ in size");
        }
    }
    let cmap = colormap();
    let mut out = format!("P6\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    for (i, &v) in map.band(band).iter().enumerate() {
        let px = match buildings {
            Some(s) if s.buildings()[i] != 0 => BUILDING_COLOR,
            _ => cmap[color_index(v)],
        };
        out.extend_from_slice(&px);
    }
    Ok(out)
}

pub fn render_map(map: &Radiomap, band: usize, buildings: Option<&RadioScene>, path: &Path) -> Result<()> {
    let bytes = encode_ppm(map, band, buildings)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}
