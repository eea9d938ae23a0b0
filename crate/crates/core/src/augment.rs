//! Training-time augmentation: random flips and affine warps.
//!
//! Transforms compose as flip, then scale, then rotation, then translation,
//! all about the image centre. Warps sample bilinearly and fill exposed
//! borders by reflection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::NormalizedImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Zoom factors are drawn from `[1 - r, 1 + r]`.
    pub scaling_range: f32,
    /// Degrees, drawn from `[-r, r]`.
    pub rotation_range: f32,
    /// Fraction of width/height, drawn from `[-r, r]`.
    pub translation_range: f32,
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            scaling_range: 0.3,
            rotation_range: 50.0,
            translation_range: 0.2,
            horizontal_flip: true,
            vertical_flip: true,
        }
    }
}

impl AugmentConfig {
    /// No augmentation at all.
    pub fn disabled() -> Self {
        AugmentConfig {
            scaling_range: 0.0,
            rotation_range: 0.0,
            translation_range: 0.0,
            horizontal_flip: false,
            vertical_flip: false,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.scaling_range, self.rotation_range, self.translation_range]
            .iter()
            .all(|r| r.is_finite() && *r >= 0.0)
            && self.scaling_range < 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledTransform {
    pub flip_h: bool,
    pub flip_v: bool,
    pub scale: f32,
    /// Degrees, counter-clockwise on screen.
    pub rotation: f32,
    /// Fractions of the width and height.
    pub shift_x: f32,
    pub shift_y: f32,
}

impl SampledTransform {
    pub const IDENTITY: SampledTransform = SampledTransform {
        flip_h: false,
        flip_v: false,
        scale: 1.0,
        rotation: 0.0,
        shift_x: 0.0,
        shift_y: 0.0,
    };

    fn is_pure_flip(&self) -> bool {
        self.scale == 1.0 && self.rotation == 0.0 && self.shift_x == 0.0 && self.shift_y == 0.0
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, range: f32) -> f32 {
    if range > 0.0 { rng.random_range(-range..=range) } else { 0.0 }
}

/// Draws every parameter uniformly within its range; flips are fair coins.
pub fn sample_transform<R: Rng + ?Sized>(rng: &mut R, config: &AugmentConfig) -> SampledTransform {
    let flip_h = config.horizontal_flip && rng.random_bool(0.5);
    let flip_v = config.vertical_flip && rng.random_bool(0.5);
    let scale = 1.0 + symmetric(rng, config.scaling_range);
    let rotation = symmetric(rng, config.rotation_range);
    let shift_x = symmetric(rng, config.translation_range);
    let shift_y = symmetric(rng, config.translation_range);
    SampledTransform { flip_h, flip_v, scale, rotation, shift_x, shift_y }
}

/// Half-sample symmetric reflection of a continuous pixel coordinate into `[0, n-1]`.
fn reflect(mut x: f32, n: usize) -> f32 {
    let n = n as f32;
    let period = 2.0 * n;
    x = (x + 0.5).rem_euclid(period);
    if x >= n {
        x = period - x;
    }
    (x - 0.5).clamp(0.0, n - 1.0)
}

pub fn apply(t: &SampledTransform, img: &NormalizedImage) -> NormalizedImage {
    let n = NormalizedImage::SIZE;
    let plane = n * n;
    let src = img.as_slice();

    let mut flipped = vec![0f32; src.len()];
    for c in 0..3 {
        for r in 0..n {
            let sr = if t.flip_v { n - 1 - r } else { r };
            for col in 0..n {
                let sc = if t.flip_h { n - 1 - col } else { col };
                flipped[c * plane + r * n + col] = src[c * plane + sr * n + sc];
            }
        }
    }
    if t.is_pure_flip() {
        return NormalizedImage::from_chw(flipped).expect("shape preserved");
    }

    // Output pixel y maps back to x = R(-θ)(y - c - shift)/s + c.
    let centre = (n as f32 - 1.0) / 2.0;
    let theta = t.rotation.to_radians();
    let (cos, sin) = (theta.cos(), theta.sin());
    let (tx, ty) = (t.shift_x * n as f32, t.shift_y * n as f32);
    let mut out = vec![0f32; src.len()];
    for r in 0..n {
        for col in 0..n {
            let dx = col as f32 - centre - tx;
            let dy = r as f32 - centre - ty;
            // Screen rotation with y pointing down: counter-clockwise by θ.
            let sx = (cos * dx - sin * dy) / t.scale + centre;
            let sy = (sin * dx + cos * dy) / t.scale + centre;
            let (x, y) = (reflect(sx, n), reflect(sy, n));
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(n - 1), (y0 + 1).min(n - 1));
            let (fx, fy) = (x - x0 as f32, y - y0 as f32);
            for c in 0..3 {
                let p = &flipped[c * plane..(c + 1) * plane];
                let top = p[y0 * n + x0] * (1.0 - fx) + p[y0 * n + x1] * fx;
                let bottom = p[y1 * n + x0] * (1.0 - fx) + p[y1 * n + x1] * fx;
                out[c * plane + r * n + col] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    NormalizedImage::from_chw(out).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn patterned() -> NormalizedImage {
        let n = NormalizedImage::SIZE;
        let data = (0..NormalizedImage::LEN)
            .map(|i| ((i % n) as f32 * 0.003 + (i / n % n) as f32 * 0.001 + (i / (n * n)) as f32 * 0.1) % 1.0)
            .collect();
        NormalizedImage::from_chw(data).unwrap()
    }

    #[test]
    fn defaults_match_training_setup() {
        let c = AugmentConfig::default();
        assert_eq!((c.scaling_range, c.rotation_range, c.translation_range), (0.3, 50.0, 0.2));
        assert!(c.horizontal_flip && c.vertical_flip && c.is_valid());
    }

    #[test]
    fn disabled_config_samples_identity() {
        let mut rng = seed::rng(1);
        for _ in 0..50 {
            assert_eq!(sample_transform(&mut rng, &AugmentConfig::disabled()), SampledTransform::IDENTITY);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_bounded() {
        let cfg = AugmentConfig::default();
        let (mut a, mut b) = (seed::rng(9), seed::rng(9));
        for _ in 0..100 {
            let t = sample_transform(&mut a, &cfg);
            assert_eq!(t, sample_transform(&mut b, &cfg));
            assert!((0.7..=1.3).contains(&t.scale));
            assert!((-50.0..=50.0).contains(&t.rotation));
            assert!((-0.2..=0.2).contains(&t.shift_x) && (-0.2..=0.2).contains(&t.shift_y));
        }
    }

    #[test]
    fn rotation_histogram_is_flat() {
        let cfg = AugmentConfig::default();
        let mut rng = seed::rng(2024);
        let mut bins = [0usize; 10];
        let (mut lo, mut hi) = (f32::MAX, f32::MIN);
        for _ in 0..10_000 {
            let r = sample_transform(&mut rng, &cfg).rotation;
            lo = lo.min(r);
            hi = hi.max(r);
            bins[(((r + 50.0) / 10.0) as usize).min(9)] += 1;
        }
        assert!(lo >= -50.0 && hi <= 50.0);
        assert!(lo < -49.0 && hi > 49.0);
        // Each bin expects 1000; 5 sigma is about 150.
        for b in bins {
            assert!((850..=1150).contains(&b), "{bins:?}");
        }
    }

    #[test]
    fn identity_is_fixed_point() {
        let img = patterned();
        assert_eq!(apply(&SampledTransform::IDENTITY, &img), img);
    }

    #[test]
    fn flips_are_involutions() {
        let img = patterned();
        for (h, v) in [(true, false), (false, true), (true, true)] {
            let t = SampledTransform { flip_h: h, flip_v: v, ..SampledTransform::IDENTITY };
            let once = apply(&t, &img);
            assert_ne!(once, img);
            assert_eq!(apply(&t, &once), img);
        }
        let t = SampledTransform { flip_h: true, ..SampledTransform::IDENTITY };
        assert_eq!(apply(&t, &img).get(1, 10, 0), img.get(1, 10, 255));
    }

    #[test]
    fn rotation_round_trip_preserves_constant() {
        let img = NormalizedImage::filled(0.37);
        let fwd = SampledTransform { rotation: 33.0, ..SampledTransform::IDENTITY };
        let back = SampledTransform { rotation: -33.0, ..SampledTransform::IDENTITY };
        let out = apply(&back, &apply(&fwd, &img));
        assert!(out.as_slice().iter().all(|&v| (v - 0.37).abs() < 1e-6));
    }

    #[test]
    fn quarter_turn_moves_pixels() {
        // A single bright pixel right of centre moves above centre after +90°.
        let n = NormalizedImage::SIZE;
        let mut data = vec![0f32; NormalizedImage::LEN];
        data[100 * n + 150] = 1.0;
        let img = NormalizedImage::from_chw(data).unwrap();
        let t = SampledTransform { rotation: 90.0, ..SampledTransform::IDENTITY };
        let out = apply(&t, &img);
        // Centre is 127.5: (row 100, col 150) -> offset (+22.5, -27.5) -> (-27.5, -22.5).
        let mut best = (0, 0, 0.0);
        for r in 0..n {
            for c in 0..n {
                if out.get(0, r, c) > best.2 {
                    best = (r, c, out.get(0, r, c));
                }
            }
        }
        assert_eq!((best.0, best.1), (105, 100));
    }

    #[test]
    fn warps_stay_bounded() {
        let img = patterned();
        let mut rng = seed::rng(3);
        for _ in 0..5 {
            let t = sample_transform(&mut rng, &AugmentConfig::default());
            let out = apply(&t, &img);
            assert_eq!(out.as_slice().len(), NormalizedImage::LEN);
            assert!(out.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn reflect_mirrors_at_borders() {
        assert_eq!(reflect(-1.0, 10), 0.0);
        assert_eq!(reflect(-2.0, 10), 1.0);
        assert_eq!(reflect(10.0, 10), 9.0);
        assert_eq!(reflect(11.0, 10), 8.0);
        assert_eq!(reflect(4.25, 10), 4.25);
    }
}
