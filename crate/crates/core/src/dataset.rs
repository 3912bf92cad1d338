//! `RKM1` scene/radiomap files and `RKO1` observation files.
//!
//! `RKM1` (little-endian): magic, `u16` version, `u32` H, W, F, N_t, the
//! building raster as H·W bytes, transmitter cells as `u32` (x, y) pairs,
//! F `f64` frequencies, the `f64` cell size in meters, F `f64` (min_db,
//! max_db) calibration pairs, then H·W·F `f32` normalized values, band-major.
//!
//! `RKO1`: magic, `u32` N, `u32` band count, then per band N `u32` flat cell
//! indices followed by N `f32` values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::{BandObservations, ObservationSet, RadioScene, Radiomap, SceneSpec};
use crate::tensor::checkpoint::Reader;

pub const MAP_MAGIC: &[u8; 4] = b"RKM1";
pub const MAP_VERSION: u16 = 1;
pub const OBS_MAGIC: &[u8; 4] = b"RKO1";

fn u32_of(v: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(v).map(u32::to_le_bytes).map_err(|_| Error::InvalidArgument(format!("{what} too large")))
}

fn f32_exact(v: f64, what: &str) -> Result<[u8; 4]> {
    let s = v as f32;
    if s as f64 != v {
        return Err(Error::InvalidArgument(format!("{what} value {v} is not representable in single precision")));
    }
    Ok(s.to_le_bytes())
}

/// Serialize a scene with its ground-truth map. Map values must already be
/// single-precision exact so that reading the file back is lossless.
pub fn encode_scene(scene: &RadioScene, map: &Radiomap) -> Result<Vec<u8>> {
    if map.height() != scene.height() || map.width() != scene.width() || map.bands() != scene.spec.bands() {
        return Err(Error::Shape("radiomap does not match the scene grid".into()));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&MAP_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of(scene.height(), "height")?);
    out.extend_from_slice(&u32_of(scene.width(), "width")?);
    out.extend_from_slice(&u32_of(map.bands(), "band count")?);
    out.extend_from_slice(&u32_of(scene.transmitters().len(), "transmitter count")?);
    out.extend_from_slice(scene.buildings());
    for &(x, y) in scene.transmitters() {
        out.extend_from_slice(&u32_of(x, "x")?);
        out.extend_from_slice(&u32_of(y, "y")?);
    }
    for f in &scene.spec.frequencies_hz {
        out.extend_from_slice(&f.to_le_bytes());
    }
    out.extend_from_slice(&scene.spec.cell_size_m.to_le_bytes());
    for (lo, hi) in map.calibration() {
        out.extend_from_slice(&lo.to_le_bytes());
        out.extend_from_slice(&hi.to_le_bytes());
    }
    for &v in map.values() {
        out.extend_from_slice(&f32_exact(v, "radiomap")?);
    }
    Ok(out)
}

/// Parse an `RKM1` file. Scene-generation ranges are not stored and come
/// back as defaults.
pub fn decode_scene(bytes: &[u8]) -> Result<(RadioScene, Radiomap)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAP_MAGIC {
        return Err(Error::Format("not an RKM1 file".into()));
    }
    let version = r.u16()?;
    if version != MAP_VERSION {
        return Err(Error::Format(format!("unsupported RKM1 version {version}")));
    }
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let bands = r.u32()? as usize;
    let n_tx = r.u32()? as usize;
    let cells = h.checked_mul(w).ok_or_else(|| Error::Format("grid too large".into()))?;
    let buildings = r.take(cells)?.to_vec();
    let mut transmitters = Vec::with_capacity(n_tx.min(cells));
    for _ in 0..n_tx {
        transmitters.push((r.u32()? as usize, r.u32()? as usize));
    }
    let mut frequencies_hz = Vec::with_capacity(bands.min(1024));
    for _ in 0..bands {
        frequencies_hz.push(r.f64()?);
    }
    let cell_size_m = r.f64()?;
    let mut calibration = Vec::with_capacity(bands.min(1024));
    for _ in 0..bands {
        calibration.push((r.f64()?, r.f64()?));
    }
    let n = cells.checked_mul(bands).ok_or_else(|| Error::Format("map too large".into()))?;
    let mut values = Vec::with_capacity(n.min(bytes.len()));
    for _ in 0..n {
        values.push(r.f32()? as f64);
    }
    r.finish()?;
    let spec = SceneSpec { height: h, width: w, cell_size_m, transmitters: n_tx, frequencies_hz, ..SceneSpec::default() };
    let fmt = |e: Error| Error::Format(format!("RKM1 content: {e}"));
    let scene = RadioScene::new(spec, buildings, transmitters).map_err(fmt)?;
    let map = Radiomap::new(h, w, values, calibration).map_err(fmt)?;
    Ok((scene, map))
}

pub fn save_scene(path: &Path, scene: &RadioScene, map: &Radiomap) -> Result<()> {
    fs::write(path, encode_scene(scene, map)?)?;
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<(RadioScene, Radiomap)> {
    decode_scene(&fs::read(path)?)
}

pub fn encode_observations(obs: &ObservationSet) -> Result<Vec<u8>> {
    obs.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(OBS_MAGIC);
    out.extend_from_slice(&u32_of(obs.len(), "observation count")?);
    out.extend_from_slice(&u32_of(obs.band_count(), "band count")?);
    for b in &obs.bands {
        for &c in &b.cells {
            out.extend_from_slice(&u32_of(c, "cell index")?);
        }
        for &v in &b.values {
            out.extend_from_slice(&f32_exact(v, "observation")?);
        }
    }
    Ok(out)
}

/// Parse an `RKO1` file for an `height × width` grid.
pub fn decode_observations(bytes: &[u8], height: usize, width: usize) -> Result<ObservationSet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != OBS_MAGIC {
        return Err(Error::Format("not an RKO1 file".into()));
    }
    let n = r.u32()? as usize;
    let bands = r.u32()? as usize;
    let mut out = ObservationSet { height, width, bands: Vec::with_capacity(bands.min(1024)) };
    for _ in 0..bands {
        let cells = (0..n).map(|_| r.u32().map(|c| c as usize)).collect::<Result<Vec<_>>>()?;
        let values = (0..n).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
        out.bands.push(BandObservations { cells, values });
    }
    r.finish()?;
    out.validate().map_err(|e| Error::Format(format!("RKO1 content: {e}")))?;
    Ok(out)
}

pub fn save_observations(path: &Path, obs: &ObservationSet) -> Result<()> {
    fs::write(path, encode_observations(obs)?)?;
    Ok(())
}

pub fn load_observations(path: &Path, height: usize, width: usize) -> Result<ObservationSet> {
    decode_observations(&fs::read(path)?, height, width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, sample_observations, simulate_radiomap, PropagationParams};

    fn fixture() -> (RadioScene, Radiomap) {
        let spec = SceneSpec { transmitters: 2, frequencies_hz: vec![1e9, 2e9, 3.5e9], ..SceneSpec::default() };
        let scene = generate_scene(&spec, 17).unwrap();
        let map = simulate_radiomap(&scene, &PropagationParams::default()).unwrap();
        (scene, map)
    }

    #[test]
    fn scene_file_round_trips() {
        let (scene, map) = fixture();
        let bytes = encode_scene(&scene, &map).unwrap();
        assert_eq!(bytes.len(), 4 + 2 + 16 + 1024 + 16 + 24 + 8 + 48 + 4 * 3072);
        let (s2, m2) = decode_scene(&bytes).unwrap();
        assert_eq!(m2, map);
        assert_eq!(s2.buildings(), scene.buildings());
        assert_eq!(s2.transmitters(), scene.transmitters());
        assert_eq!(s2.spec.frequencies_hz, scene.spec.frequencies_hz);
        assert_eq!(s2.spec.cell_size_m, scene.spec.cell_size_m);
        assert_eq!(encode_scene(&s2, &m2).unwrap(), bytes);
    }

    #[test]
    fn scene_file_rejects_damage() {
        let (scene, map) = fixture();
        let bytes = encode_scene(&scene, &map).unwrap();
        assert!(matches!(decode_scene(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_scene(&extra), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[3] = b'2';
        assert!(matches!(decode_scene(&bad), Err(Error::Format(_))));
        let mut bad = bytes;
        bad[22] = 7;
        assert!(matches!(decode_scene(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn inexact_values_are_refused() {
        let (scene, _) = fixture();
        let map = Radiomap::new(32, 32, vec![0.1; 3072], vec![(0.0, 1.0); 3]).unwrap();
        assert!(encode_scene(&scene, &map).is_err());
    }

    #[test]
    fn observation_file_round_trips() {
        let (_, map) = fixture();
        let obs = sample_observations(&map, 0.05, 4).unwrap();
        let bytes = encode_observations(&obs).unwrap();
        assert_eq!(bytes.len(), 12 + 3 * 51 * 8);
        assert_eq!(decode_observations(&bytes, 32, 32).unwrap(), obs);
        assert!(decode_observations(&bytes, 4, 4).is_err());
        assert!(decode_observations(&bytes[..20], 32, 32).is_err());
    }

    #[test]
    fn files_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let (scene, map) = fixture();
        let p = dir.path().join("s.rkm");
        save_scene(&p, &scene, &map).unwrap();
        assert_eq!(load_scene(&p).unwrap().1, map);
        let obs = sample_observations(&map, 0.01, 1).unwrap();
        let q = dir.path().join("o.rko");
        save_observations(&q, &obs).unwrap();
        assert_eq!(load_observations(&q, 32, 32).unwrap(), obs);
    }
}
