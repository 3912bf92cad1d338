//! Pointwise input features: position, band embedding and distance cues.
//! Every component lies in `[-1, 1]`.

use crate::scene::{Cell, RadioScene};
use crate::tensor::Tensor;

/// `2` coordinates, `F` one-hot band entries, one log-frequency scalar and
/// two distance cues.
pub fn feature_dim(bands: usize) -> usize {
    2 + bands + 1 + 2
}

fn unit_to_signed(v: f64) -> f64 {
    2.0 * v - 1.0
}

/// Log-frequency of `band` rescaled to `[-1, 1]` across the scene's bands,
/// or `0` when all bands share one frequency.
pub fn log_frequency(scene: &RadioScene, band: usize) -> f64 {
    let f = &scene.spec.frequencies_hz;
    let lo = f.iter().cloned().fold(f64::INFINITY, f64::min).ln();
    let hi = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ln();
    if hi - lo <= 0.0 {
        return 0.0;
    }
    unit_to_signed((f[band].ln() - lo) / (hi - lo))
}

/// Distance from `cell` to the nearest transmitter, in meters.
pub fn nearest_transmitter_m(scene: &RadioScene, cell: Cell) -> f64 {
    scene.transmitters().iter().map(|&t| scene.distance_m(cell, t)).fold(f64::INFINITY, f64::min)
}

/// Distance between opposite corner cell centers, in meters.
pub fn grid_diagonal_m(scene: &RadioScene) -> f64 {
    scene.distance_m((0, 0), (scene.width() - 1, scene.height() - 1))
}

pub fn build_features(scene: &RadioScene, band: usize, cell: Cell) -> Vec<f64> {
    let mut v = Vec::with_capacity(feature_dim(scene.spec.bands()));
    push_features(scene, band, cell, &mut v);
    v
}

fn push_features(scene: &RadioScene, band: usize, (x, y): Cell, out: &mut Vec<f64>) {
    let (h, w) = (scene.height(), scene.width());
    out.push(unit_to_signed(x as f64 / (w - 1) as f64));
    out.push(unit_to_signed(y as f64 / (h - 1) as f64));
    out.extend((0..scene.spec.bands()).map(|f| if f == band { 1.0 } else { 0.0 }));
    out.push(log_frequency(scene, band));
    let d = nearest_transmitter_m(scene, (x, y));
    let diag = grid_diagonal_m(scene);
    out.push(unit_to_signed((d / diag).min(1.0)));
    // Log distance in cell units, floored at one cell.
    let unit = scene.spec.cell_size_m;
    let log_d = (d.max(unit) / unit).ln() / (diag.max(unit) / unit).ln();
    out.push(unit_to_signed(log_d.min(1.0)));
}

/// Feature rows for `(band, flat cell index)` pairs, as `[n × d]`.
pub fn feature_matrix(scene: &RadioScene, points: &[(usize, usize)]) -> Tensor {
    let d = feature_dim(scene.spec.bands());
    let mut data = Vec::with_capacity(points.len() * d);
    for &(band, idx) in points {
        push_features(scene, band, scene.cell_of(idx), &mut data);
    }
    Tensor::new([points.len().max(1), d], data).expect("feature matrix needs at least one point")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneSpec;

    fn scene(tx: Cell, freqs: Vec<f64>) -> RadioScene {
        let spec = SceneSpec { frequencies_hz: freqs, ..SceneSpec::default() };
        RadioScene::new(spec, vec![0; 1024], vec![tx]).unwrap()
    }

    #[test]
    fn dimension_and_range() {
        let s = scene((5, 9), vec![2.4e9, 5.8e9]);
        assert_eq!(feature_dim(2), 7);
        for i in 0..s.cells() {
            let f = build_features(&s, 1, s.cell_of(i));
            assert_eq!(f.len(), 7);
            assert!(f.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn distance_endpoints() {
        let s = scene((0, 0), vec![1e9]);
        let at_tx = build_features(&s, 0, (0, 0));
        assert_eq!(at_tx[4], -1.0);
        assert_eq!(at_tx[5], -1.0);
        let corner = build_features(&s, 0, (31, 31));
        assert!((corner[4] - 1.0).abs() < 1e-15);
        assert!((corner[5] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn band_embedding() {
        let s = scene((3, 3), vec![2.4e9, 5.8e9]);
        let f = build_features(&s, 1, (10, 4));
        assert_eq!(&f[2..4], &[0.0, 1.0]);
        let expected = 2.0 * ((5.8e9f64).ln() - (2.4e9f64).ln()) / ((5.8e9f64).ln() - (2.4e9f64).ln()) - 1.0;
        assert_eq!(f[4], expected);
        assert_eq!(build_features(&s, 0, (10, 4))[4], -1.0);
        let s3 = scene((3, 3), vec![1e9, 2e9, 4e9]);
        assert!(log_frequency(&s3, 1).abs() < 1e-12);
        assert_eq!(log_frequency(&scene((3, 3), vec![1e9]), 0), 0.0);
    }

    #[test]
    fn coordinates() {
        let s = scene((3, 3), vec![1e9]);
        assert_eq!(&build_features(&s, 0, (0, 31))[..2], &[-1.0, 1.0]);
        let m = feature_matrix(&s, &[(0, 0), (0, 1023)]);
        assert_eq!(m.shape(), &[2, 6]);
        assert_eq!(&m.data()[6..8], &[1.0, 1.0]);
    }
}
