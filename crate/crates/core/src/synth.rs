//! Procedural phantom stones with exact ground-truth masks.
//!
//! Each image shows a stone on a mucosa-like background, optionally with the
//! endoscope tip entering from a corner. Stone textures follow the visual
//! hallmarks of each morphology and view:
//!
//! | morphology | surface                               | section                          |
//! |------------|---------------------------------------|----------------------------------|
//! | Ia         | dark-brown mammillary bumps           | concentric radiating layers      |
//! | IIb        | pale-yellow angular crystal facets    | pale brown-yellow speckle        |
//! | IIIb       | beige-to-orange surface with pits     | porous ochre-orange structure    |
//!
//! Mixed stones are split by a chord into two regions, one per component.
//! Images of one stone share its outline and texture; viewpoint and
//! illumination vary per image.

use std::collections::BTreeMap;
use std::f32::consts::PI;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, ClassLabel, ManifestRow, Morphology, StoneObservation, View, INPUT_SIZE};
use crate::seed;

/// Fraction of images showing the endoscope tip when not configured otherwise.
pub const DEFAULT_TIP_PROBABILITY: f64 = 0.05;

/// Minimum difference in mean hue (degrees) between Ia and IIb regions.
pub const HUE_MARGIN_DEG: f32 = 12.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("inconsistent counts for {view} {label}: {message}")]
    InconsistentCounts { view: View, label: ClassLabel, message: String },
    #[error("tip probability {0} outside [0, 1]")]
    TipProbability(f64),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Binary raster aligned with a 256×256 image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask { width, height, bits: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Mask::new(width, height);
        for r in 0..height {
            for c in 0..width {
                m.bits[r * width + c] = f(r, c);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn overlap(&self, other: &Mask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count()
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(y as usize, x as usize) { 255 } else { 0 }])
        })
    }

    pub fn from_image(img: &GrayImage) -> Self {
        Mask::from_fn(img.width() as usize, img.height() as usize, |r, c| {
            img.get_pixel(c as u32, r as u32).0[0] >= 128
        })
    }
}

/// A generated image together with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticObservation {
    pub observation: StoneObservation,
    pub stone_mask: Mask,
    /// Possibly empty.
    pub tip_mask: Mask,
    /// One sub-region of the stone mask per component morphology.
    pub regions: Vec<(Morphology, Mask)>,
    pub seed: u64,
}

/// Requested counts for one (view, class) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassQuota {
    pub view: View,
    pub label: ClassLabel,
    pub image_count: usize,
    pub unique_stone_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub tip_probability: f64,
    pub classes: Vec<ClassQuota>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec::clinical_profile(2021)
    }
}

impl GeneratorSpec {
    /// The clinical corpus profile: 347 surface and 236 section images.
    pub fn clinical_profile(seed: u64) -> Self {
        use ClassLabel::*;
        let q = |view, label, image_count, unique_stone_count| ClassQuota { view, label, image_count, unique_stone_count };
        GeneratorSpec {
            seed,
            tip_probability: DEFAULT_TIP_PROBABILITY,
            classes: vec![
                q(View::Surface, Ia, 191, 150),
                q(View::Surface, IIb, 53, 48),
                q(View::Surface, IIIb, 29, 23),
                q(View::Surface, IaIIb, 64, 54),
                q(View::Surface, IaIIIb, 10, 9),
                q(View::Section, Ia, 127, 96),
                q(View::Section, IIb, 30, 29),
                q(View::Section, IIIb, 25, 22),
                q(View::Section, IaIIb, 31, 26),
                q(View::Section, IaIIIb, 23, 15),
            ],
        }
    }

    /// Keeps only the quotas of one view.
    pub fn restricted_to(&self, view: View) -> Self {
        GeneratorSpec {
            classes: self.classes.iter().copied().filter(|q| q.view == view).collect(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.0..=1.0).contains(&self.tip_probability) {
            return Err(SynthError::TipProbability(self.tip_probability));
        }
        let mut seen = std::collections::HashSet::new();
        for q in &self.classes {
            let bad = |message: &str| SynthError::InconsistentCounts {
                view: q.view,
                label: q.label,
                message: message.to_string(),
            };
            if !seen.insert((q.view, q.label)) {
                return Err(bad("listed twice"));
            }
            if q.image_count < q.unique_stone_count {
                return Err(bad("fewer images than stones"));
            }
            if q.image_count > 0 && q.unique_stone_count == 0 {
                return Err(bad("images without any stone"));
            }
        }
        Ok(())
    }
}

/// Per-stone shape and texture parameters, shared by all images of a stone.
#[derive(Debug, Clone)]
struct StoneGeometry {
    radius: f32,
    aspect: f32,
    harmonics: [(f32, f32); 4],
    texture_seed: u64,
    split_angle: f32,
    split_offset: f32,
    nucleus: (f32, f32),
}

impl StoneGeometry {
    fn sample(stone_seed: u64) -> Self {
        let mut rng = seed::rng(stone_seed);
        let mut harmonics = [(0.0, 0.0); 4];
        for (i, h) in harmonics.iter_mut().enumerate() {
            *h = (rng.random_range(0.01..0.06) / (i as f32 + 1.0).sqrt(), rng.random_range(0.0..2.0 * PI));
        }
        StoneGeometry {
            radius: rng.random_range(88.0..104.0),
            aspect: rng.random_range(0.85..1.15),
            harmonics,
            texture_seed: rng.random(),
            split_angle: rng.random_range(0.0..2.0 * PI),
            split_offset: rng.random_range(-0.18..0.18),
            nucleus: (rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0)),
        }
    }

    /// Outline radius at polar angle `theta` (local frame).
    fn outline(&self, theta: f32) -> f32 {
        let mut r = 1.0;
        for (k, (amp, phase)) in self.harmonics.iter().enumerate() {
            r += amp * ((k as f32 + 2.0) * theta + phase).sin();
        }
        self.radius * r
    }
}

/// Per-image viewpoint and lighting.
#[derive(Debug, Clone)]
struct Viewpoint {
    center: (f32, f32),
    rotation: f32,
    scale: f32,
    gain: f32,
    light: f32,
    tip: Option<Tip>,
    noise_seed: u64,
    tissue_seed: u64,
}

#[derive(Debug, Clone)]
struct Tip {
    center: (f32, f32),
    radius: f32,
}

impl Viewpoint {
    fn sample(image_seed: u64, tip_probability: f64) -> Self {
        let mut rng = seed::rng(image_seed);
        let c = INPUT_SIZE as f32 / 2.0;
        let center = (c + rng.random_range(-18.0..18.0), c + rng.random_range(-18.0..18.0));
        let rotation = rng.random_range(-PI..PI);
        let scale = rng.random_range(0.92..1.08);
        let gain = rng.random_range(0.92..1.08);
        let light = rng.random_range(-PI..PI);
        let noise_seed = rng.random();
        let tissue_seed = rng.random();
        let tip = if rng.random_bool(tip_probability) {
            let corner = rng.random_range(0..4u32);
            let n = INPUT_SIZE as f32;
            let (cx, cy) = match corner {
                0 => (0.0, 0.0),
                1 => (n, 0.0),
                2 => (0.0, n),
                _ => (n, n),
            };
            Some(Tip {
                center: (cx + rng.random_range(-12.0..12.0), cy + rng.random_range(-12.0..12.0)),
                radius: rng.random_range(58.0..76.0),
            })
        } else {
            None
        };
        Viewpoint { center, rotation, scale, gain, light, tip, noise_seed, tissue_seed }
    }
}

#[inline]
fn lattice(seed: u64, ix: i64, iy: i64) -> f32 {
    let h = seed::mix64(seed ^ seed::mix64((ix as u64).wrapping_mul(0x9E37_79B9) ^ (iy as u64).rotate_left(32)));
    (h >> 40) as f32 / (1u64 << 24) as f32
}

/// Smooth lattice noise in `[0, 1)`.
fn value_noise(seed: u64, x: f32, y: f32, cell: f32) -> f32 {
    let (gx, gy) = (x / cell, y / cell);
    let (ix, iy) = (gx.floor() as i64, gy.floor() as i64);
    let (fx, fy) = (gx - ix as f32, gy - iy as f32);
    let s = |t: f32| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (s(fx), s(fy));
    let a = lattice(seed, ix, iy) * (1.0 - sx) + lattice(seed, ix + 1, iy) * sx;
    let b = lattice(seed, ix, iy + 1) * (1.0 - sx) + lattice(seed, ix + 1, iy + 1) * sx;
    a * (1.0 - sy) + b * sy
}

/// Jittered-grid feature point of cell `(ix, iy)`.
fn cell_point(seed: u64, ix: i64, iy: i64, cell: f32) -> (f32, f32) {
    (
        (ix as f32 + 0.15 + 0.7 * lattice(seed, ix, iy)) * cell,
        (iy as f32 + 0.15 + 0.7 * lattice(seed ^ 0x55, ix, iy)) * cell,
    )
}

/// Nearest and second-nearest feature points around `(x, y)`.
fn voronoi(seed: u64, x: f32, y: f32, cell: f32) -> ((i64, i64), f32, f32) {
    let (ix, iy) = ((x / cell).floor() as i64, (y / cell).floor() as i64);
    let mut best = ((0, 0), f32::MAX);
    let mut second = f32::MAX;
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (cx, cy) = (ix + dx, iy + dy);
            let (px, py) = cell_point(seed, cx, cy, cell);
            let d = ((px - x).powi(2) + (py - y).powi(2)).sqrt();
            if d < best.1 {
                second = best.1;
                best = ((cx, cy), d);
            } else if d < second {
                second = d;
            }
        }
    }
    (best.0, best.1, second)
}

/// Strongest dome over nearby bumps: `1 - d²/r²` inside a bump, 0 outside.
fn bumps(seed: u64, x: f32, y: f32, cell: f32, rmin: f32, rmax: f32) -> f32 {
    let (ix, iy) = ((x / cell).floor() as i64, (y / cell).floor() as i64);
    let mut best = 0f32;
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (cx, cy) = (ix + dx, iy + dy);
            let (px, py) = cell_point(seed, cx, cy, cell);
            let r = rmin + (rmax - rmin) * lattice(seed ^ 0xB0B, cx, cy);
            let d2 = (px - x).powi(2) + (py - y).powi(2);
            best = best.max(1.0 - d2 / (r * r));
        }
    }
    best
}

fn lerp3(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn scale3(a: [f32; 3], s: f32) -> [f32; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Stone texture colour (0..255 scale) at local coordinates `(u, v)`.
fn texture(morph: Morphology, view: View, geo: &StoneGeometry, u: f32, v: f32) -> [f32; 3] {
    let ts = geo.texture_seed ^ (morph as u64 + 1) * 0x1000_0001;
    let low = value_noise(ts, u + 500.0, v + 500.0, 24.0);
    match (morph, view) {
        (Morphology::Ia, View::Surface) => {
            let dome = bumps(ts, u + 300.0, v + 300.0, 14.0, 5.0, 8.5);
            let base = lerp3([78.0, 42.0, 26.0], [104.0, 60.0, 36.0], low);
            lerp3(base, [176.0, 116.0, 74.0], dome.max(0.0) * 0.7)
        }
        (Morphology::Ia, View::Section) => {
            let (du, dv) = (u - geo.nucleus.0, v - geo.nucleus.1);
            let d = (du * du + dv * dv).sqrt();
            let theta = dv.atan2(du);
            let ring = 0.5 + 0.5 * (2.0 * PI * d / 9.0 + 1.5 * low).sin();
            let radial = 1.0 + 0.08 * (26.0 * theta).sin();
            scale3(lerp3([68.0, 38.0, 24.0], [122.0, 72.0, 42.0], ring), radial)
        }
        (Morphology::IIb, View::Surface) => {
            let (cell, d1, d2) = voronoi(ts, u + 700.0, v + 700.0, 18.0);
            let facet = 0.86 + 0.22 * lattice(ts ^ 0xFACE, cell.0, cell.1);
            let dir = 2.0 * PI * lattice(ts ^ 0xD1, cell.0, cell.1);
            let slope = 0.006 * (u * dir.cos() + v * dir.sin());
            let edge = ((1.8 - (d2 - d1)) / 1.8).clamp(0.0, 1.0);
            let c = scale3([220.0, 198.0, 128.0], (facet + slope.sin() * 0.6).clamp(0.7, 1.15));
            lerp3(c, [250.0, 240.0, 188.0], edge * 0.8)
        }
        (Morphology::IIb, View::Section) => {
            let speck = lattice(ts ^ 0x5EC, u.floor() as i64, v.floor() as i64);
            let fine = value_noise(ts ^ 0xF1, u, v, 3.0);
            scale3([202.0, 176.0, 116.0], 0.84 + 0.14 * speck + 0.1 * fine + 0.06 * low)
        }
        (Morphology::IIIb, View::Surface) => {
            let base = lerp3([222.0, 150.0, 100.0], [208.0, 92.0, 48.0], low);
            let pit = bumps(ts ^ 0x917, u + 100.0, v + 100.0, 10.0, 1.8, 3.6);
            let rough = 0.92 + 0.12 * value_noise(ts ^ 0x33, u, v, 2.5);
            scale3(base, rough * (1.0 - 0.45 * pit.max(0.0)))
        }
        (Morphology::IIIb, View::Section) => {
            let base = lerp3([204.0, 140.0, 60.0], [196.0, 112.0, 44.0], low);
            let pore = bumps(ts ^ 0x707, u + 50.0, v + 50.0, 8.0, 1.5, 3.0);
            scale3(base, (0.95 + 0.1 * value_noise(ts ^ 0x44, u, v, 4.0)) * (1.0 - 0.5 * pore.max(0.0)))
        }
    }
}

fn tissue(seed: u64, x: f32, y: f32) -> [f32; 3] {
    let low = value_noise(seed, x, y, 40.0);
    let mid = value_noise(seed ^ 0xAB, x, y, 11.0);
    let vessel = (value_noise(seed ^ 0xCD, x, y, 30.0) - 0.5).abs();
    // Tissue lies behind the stone, further from the scope's light.
    let base = lerp3([58.0, 20.0, 28.0], [84.0, 34.0, 40.0], 0.6 * low + 0.4 * mid);
    if vessel < 0.02 {
        lerp3(base, [40.0, 8.0, 14.0], 1.0 - vessel / 0.02)
    } else {
        base
    }
}

/// Generates images for one stone, sharing its geometry.
#[derive(Debug, Clone, Copy)]
pub struct Generator {
    pub tip_probability: f64,
}

impl Default for Generator {
    fn default() -> Self {
        Generator { tip_probability: DEFAULT_TIP_PROBABILITY }
    }
}

impl Generator {
    /// Renders one image of the stone keyed by `stone_seed` from the viewpoint
    /// keyed by `image_seed`.
    pub fn render(
        &self,
        class: ClassLabel,
        view: View,
        stone_seed: u64,
        image_seed: u64,
        observation_id: String,
        stone_id: String,
    ) -> SyntheticObservation {
        let geo = StoneGeometry::sample(stone_seed);
        let vp = Viewpoint::sample(image_seed, self.tip_probability);
        let n = INPUT_SIZE;
        let components = class.components();
        let mut img = RgbImage::new(n as u32, n as u32);
        let mut stone_mask = Mask::new(n, n);
        let mut tip_mask = Mask::new(n, n);
        let mut region_masks: Vec<Mask> = components.iter().map(|_| Mask::new(n, n)).collect();
        let (cos_r, sin_r) = (vp.rotation.cos(), vp.rotation.sin());
        let (split_x, split_y) = (geo.split_angle.cos(), geo.split_angle.sin());
        let mut noise_rng = seed::rng(vp.noise_seed);
        let half = n as f32 / 2.0;
        let corner = (2.0 * half * half).sqrt();

        for r in 0..n {
            for c in 0..n {
                let (x, y) = (c as f32 + 0.5, r as f32 + 0.5);
                let vignette = 1.0 - 0.5 * (((x - half).powi(2) + (y - half).powi(2)).sqrt() / corner).powi(2);
                let on_tip = vp.tip.as_ref().is_some_and(|t| {
                    (x - t.center.0).powi(2) + (y - t.center.1).powi(2) <= t.radius * t.radius
                });
                // Local stone frame.
                let (dx, dy) = ((x - vp.center.0) / vp.scale, (y - vp.center.1) / vp.scale);
                let u = cos_r * dx + sin_r * dy;
                let v = -sin_r * dx + cos_r * dy;
                let (ue, ve) = (u, v / geo.aspect);
                let rho = (ue * ue + ve * ve).sqrt();
                let theta = ve.atan2(ue);
                let on_stone = !on_tip && rho <= geo.outline(theta);

                let mut colour = if on_tip {
                    tip_mask.set(r, c, true);
                    let t = vp.tip.as_ref().unwrap();
                    let d = ((x - t.center.0).powi(2) + (y - t.center.1).powi(2)).sqrt() / t.radius;
                    lerp3([196.0, 198.0, 204.0], [92.0, 94.0, 102.0], d)
                } else if on_stone {
                    stone_mask.set(r, c, true);
                    let region = if components.len() == 2 {
                        let side = (u * split_x + v * split_y) / geo.radius;
                        usize::from(side >= geo.split_offset)
                    } else {
                        0
                    };
                    region_masks[region].set(r, c, true);
                    let edge = (rho / geo.outline(theta)).min(1.0);
                    let nz = (1.0 - edge * edge).sqrt();
                    let lambert = 0.72 + 0.28 * (nz + 0.35 * edge * (theta - vp.light + vp.rotation).cos());
                    scale3(texture(components[region], view, &geo, u, v), lambert * vp.gain)
                } else {
                    scale3(tissue(vp.tissue_seed, x, y), vp.gain)
                };
                if !on_tip {
                    colour = scale3(colour, vignette);
                }
                let px = [0, 1, 2].map(|k| {
                    let jitter: f32 = noise_rng.random_range(-4.0..4.0);
                    (colour[k] + jitter).round().clamp(0.0, 255.0) as u8
                });
                img.put_pixel(c as u32, r as u32, image::Rgb(px));
            }
        }

        SyntheticObservation {
            observation: StoneObservation { observation_id, stone_id, view, label: class, image: img },
            stone_mask,
            tip_mask,
            regions: components.iter().copied().zip(region_masks).collect(),
            seed: image_seed,
        }
    }
}

/// Generates a single phantom image, deterministic in `(class, view, seed)`.
pub fn generate_observation(class: ClassLabel, view: View, seed: u64) -> SyntheticObservation {
    let stone_seed = seed::derive(seed, &[0x5701E]);
    let image_seed = seed::derive(seed, &[0x1A6E]);
    Generator::default().render(
        class,
        view,
        stone_seed,
        image_seed,
        format!("{view}-{}-seed{seed}", class_slug(class)),
        format!("{view}-{}-stone{seed}", class_slug(class)),
    )
}

/// Filesystem-safe class token.
pub fn class_slug(class: ClassLabel) -> &'static str {
    match class {
        ClassLabel::Ia => "Ia",
        ClassLabel::IaIIb => "IaIIb",
        ClassLabel::IaIIIb => "IaIIIb",
        ClassLabel::IIb => "IIb",
        ClassLabel::IIIb => "IIIb",
    }
}

/// Distributes `images` over `stones` so every stone has at least one image.
fn images_per_stone(images: usize, stones: usize, seed: u64) -> Vec<usize> {
    let mut counts = vec![1usize; stones];
    let mut rng = seed::rng(seed);
    for _ in stones..images {
        let s = rng.random_range(0..stones);
        counts[s] += 1;
    }
    counts
}

/// Identifiers and seeds of every image a spec will produce, in corpus order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedImage {
    pub view: View,
    pub label: ClassLabel,
    pub stone_id: String,
    pub observation_id: String,
    pub stone_seed: u64,
    pub image_seed: u64,
}

pub fn plan_corpus(spec: &GeneratorSpec) -> Result<Vec<PlannedImage>, SynthError> {
    spec.validate()?;
    let mut plan = Vec::new();
    for q in &spec.classes {
        let cell_seed = seed::derive(spec.seed, &[q.view as u64, q.label.index() as u64]);
        let per_stone = images_per_stone(q.image_count, q.unique_stone_count, seed::derive(cell_seed, &[0xC0]));
        for (s, &k) in per_stone.iter().enumerate() {
            let stone_seed = seed::derive(cell_seed, &[1, s as u64]);
            let stone_id = format!("{}-{}-{s:03}", q.view, class_slug(q.label));
            for j in 0..k {
                plan.push(PlannedImage {
                    view: q.view,
                    label: q.label,
                    observation_id: format!("{stone_id}-{j}"),
                    stone_id: stone_id.clone(),
                    stone_seed,
                    image_seed: seed::derive(stone_seed, &[2, j as u64]),
                });
            }
        }
    }
    Ok(plan)
}

/// Generates the full corpus described by `spec`, in plan order.
pub fn generate_corpus(spec: &GeneratorSpec) -> Result<Vec<SyntheticObservation>, SynthError> {
    let generator = Generator { tip_probability: spec.tip_probability };
    Ok(plan_corpus(spec)?
        .into_iter()
        .map(|p| generator.render(p.label, p.view, p.stone_seed, p.image_seed, p.observation_id, p.stone_id))
        .collect())
}

/// Mean hue in degrees of the pixels under `mask`, via the circular mean.
pub fn mean_hue(img: &RgbImage, mask: &Mask) -> Option<f32> {
    let (mut sx, mut sy, mut n) = (0f64, 0f64, 0usize);
    for (i, px) in img.pixels().enumerate() {
        if !mask.bits()[i] {
            continue;
        }
        let [r, g, b] = px.0.map(|v| v as f32);
        let max = r.max(g).max(b);
        let min = r.min(g).min(b);
        if max - min < 1.0 {
            continue;
        }
        let h = if max == r {
            60.0 * ((g - b) / (max - min))
        } else if max == g {
            60.0 * ((b - r) / (max - min) + 2.0)
        } else {
            60.0 * ((r - g) / (max - min) + 4.0)
        };
        let rad = (h as f64).to_radians();
        sx += rad.cos();
        sy += rad.sin();
        n += 1;
    }
    (n > 0).then(|| {
        let deg = sy.atan2(sx).to_degrees() as f32;
        if deg < 0.0 { deg + 360.0 } else { deg }
    })
}

/// Mean RGB of the pixels under `mask`.
pub fn mean_rgb(img: &RgbImage, mask: &Mask) -> Option<[f64; 3]> {
    let mut sum = [0f64; 3];
    let mut n = 0usize;
    for (i, px) in img.pixels().enumerate() {
        if mask.bits()[i] {
            for k in 0..3 {
                sum[k] += px.0[k] as f64;
            }
            n += 1;
        }
    }
    (n > 0).then(|| sum.map(|s| s / n as f64))
}

/// Paths of one observation's masks, relative to the corpus directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub stone_mask: String,
    pub tip_mask: String,
    pub regions: Vec<RegionEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub morphology: Morphology,
    pub mask: String,
}

/// Ground-truth masks loaded back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMasks {
    pub stone_mask: Mask,
    pub tip_mask: Mask,
    pub regions: Vec<(Morphology, Mask)>,
}

/// Files written by [`write_corpus`].
#[derive(Debug, Clone)]
pub struct CorpusFiles {
    pub manifest: PathBuf,
    pub sidecar: PathBuf,
    pub files: Vec<PathBuf>,
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const SIDECAR_FILE: &str = "masks.json";

/// Writes images, masks, the manifest CSV and the mask sidecar into `dir`.
pub fn write_corpus(dir: &Path, corpus: &[SyntheticObservation]) -> Result<CorpusFiles, SynthError> {
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    let mut rows = Vec::with_capacity(corpus.len());
    let mut sidecar = BTreeMap::new();
    let mut files = Vec::new();
    for item in corpus {
        let obs = &item.observation;
        let id = &obs.observation_id;
        let image_path = format!("images/{id}.png");
        obs.image.save(dir.join(&image_path))?;
        let stone_mask = format!("masks/{id}_stone.png");
        item.stone_mask.to_image().save(dir.join(&stone_mask))?;
        let tip_mask = format!("masks/{id}_tip.png");
        item.tip_mask.to_image().save(dir.join(&tip_mask))?;
        let mut regions = Vec::new();
        for (morph, mask) in &item.regions {
            let path = format!("masks/{id}_{}.png", morph.code());
            mask.to_image().save(dir.join(&path))?;
            files.push(dir.join(&path));
            regions.push(RegionEntry { morphology: *morph, mask: path });
        }
        files.extend([dir.join(&image_path), dir.join(&stone_mask), dir.join(&tip_mask)]);
        sidecar.insert(id.clone(), MaskEntry { stone_mask, tip_mask, regions });
        rows.push(ManifestRow {
            observation_id: id.clone(),
            stone_id: obs.stone_id.clone(),
            view: obs.view,
            label: obs.label,
            image_path,
        });
    }
    let manifest = dir.join(MANIFEST_FILE);
    dataset::write_manifest(&manifest, &rows)?;
    let sidecar_path = dir.join(SIDECAR_FILE);
    std::fs::write(&sidecar_path, serde_json::to_vec_pretty(&sidecar)?)?;
    files.push(manifest.clone());
    files.push(sidecar_path.clone());
    Ok(CorpusFiles { manifest, sidecar: sidecar_path, files })
}

/// Loads the masks referenced by a sidecar file.
pub fn load_masks(sidecar: &Path) -> Result<BTreeMap<String, ObservationMasks>, SynthError> {
    let entries: BTreeMap<String, MaskEntry> = serde_json::from_slice(&std::fs::read(sidecar)?)?;
    let base = sidecar.parent().unwrap_or(Path::new("."));
    let load = |p: &str| -> Result<Mask, SynthError> {
        let path = base.join(p);
        if !path.is_file() {
            return Err(dataset::DatasetError::MissingImage(path).into());
        }
        Ok(Mask::from_image(&image::open(&path)?.to_luma8()))
    };
    entries
        .into_iter()
        .map(|(id, e)| {
            let regions = e
                .regions
                .iter()
                .map(|r| Ok((r.morphology, load(&r.mask)?)))
                .collect::<Result<Vec<_>, SynthError>>()?;
            Ok((id, ObservationMasks { stone_mask: load(&e.stone_mask)?, tip_mask: load(&e.tip_mask)?, regions }))
        })
        .collect()
}
