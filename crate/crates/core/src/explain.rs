//! Grad-CAM heat maps, overlays and hot-spot localization.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{self, ClassifierError, FeatureGradients, TrainedModel};
use crate::dataset::{ClassLabel, NormalizedImage, View};
use crate::nn::{Network, Tensor};
use crate::render;
use crate::synth::Mask;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("no hotspot: the heat map is identically zero")]
    NoHotspot,
    #[error("mask is {found:?}, heat map is {expected:?}")]
    MaskShape { expected: (usize, usize), found: (usize, usize) },
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

/// Normalized Grad-CAM map aligned with the input image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub target_class: ClassLabel,
    /// `(row, col)` of the first maximum; `None` for an all-zero map.
    pub peak: Option<(usize, usize)>,
}

impl HeatMap {
    /// Divides by the maximum and records the peak. All-zero input stays zero.
    pub fn normalized(height: usize, width: usize, mut values: Vec<f64>, target_class: ClassLabel) -> Self {
        assert_eq!(values.len(), height * width);
        let mut best: Option<usize> = None;
        for (i, &v) in values.iter().enumerate() {
            if v > 0.0 && best.is_none_or(|b| v > values[b]) {
                best = Some(i);
            }
        }
        if let Some(b) = best {
            let max = values[b];
            values.iter_mut().for_each(|v| *v /= max);
        }
        HeatMap { height, width, values, target_class, peak: best.map(|i| (i / width, i % width)) }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn is_zero(&self) -> bool {
        self.peak.is_none()
    }
}

/// `ReLU(Σ_k α_k A^k)` at feature resolution, with `α_k` the spatial mean of
/// the gradients of map `k`.
pub fn coarse_cam(fg: &FeatureGradients) -> Vec<f64> {
    let hw = fg.height * fg.width;
    let mut cam = vec![0f64; hw];
    for (a, g) in fg.features.chunks(hw).zip(fg.gradients.chunks(hw)) {
        let alpha = g.iter().sum::<f64>() / hw as f64;
        if alpha == 0.0 {
            continue;
        }
        for (c, v) in cam.iter_mut().zip(a) {
            *c += alpha * v;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    cam
}

/// Bilinear resize with pixel centres aligned and edge clamping.
pub fn upsample_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(src.len(), h * w);
    let taps = |n_in: usize, n_out: usize, i: usize| -> (usize, usize, f64) {
        let x = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, x - lo as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        let (r0, r1, fr) = taps(h, out_h, r);
        for c in 0..out_w {
            let (c0, c1, fc) = taps(w, out_w, c);
            let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
            let bottom = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}

/// Grad-CAM from precomputed features and gradients, resized to `out_h × out_w`.
pub fn grad_cam_from(fg: &FeatureGradients, target: ClassLabel, out_h: usize, out_w: usize) -> HeatMap {
    let coarse = coarse_cam(fg);
    let values = upsample_bilinear(&coarse, fg.height, fg.width, out_h, out_w);
    HeatMap::normalized(out_h, out_w, values, target)
}

pub fn grad_cam(model: &TrainedModel, img: &NormalizedImage, target: ClassLabel) -> HeatMap {
    let fg = model.feature_maps_and_grads(img, target);
    grad_cam_from(&fg, target, NormalizedImage::SIZE, NormalizedImage::SIZE)
}

/// Grad-CAM for a bare network and a single input of any size; the map has
/// the input's spatial size.
pub fn grad_cam_network(network: &Network, x: Tensor, target: ClassLabel) -> Result<HeatMap, ExplainError> {
    let (h, w) = (x.h, x.w);
    let fg = classifier::feature_maps_and_grads(network, x, target.index())?;
    Ok(grad_cam_from(&fg, target, h, w))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HotspotLocation {
    InStone,
    OutsideStone,
    EndoscopeTip,
}

impl HotspotLocation {
    pub const ALL: [HotspotLocation; 3] =
        [HotspotLocation::InStone, HotspotLocation::OutsideStone, HotspotLocation::EndoscopeTip];

    pub fn name(self) -> &'static str {
        match self {
            HotspotLocation::InStone => "in_stone",
            HotspotLocation::OutsideStone => "outside_stone",
            HotspotLocation::EndoscopeTip => "endoscope_tip",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HotspotThresholds {
    /// Fraction of the maximum that makes a pixel part of the hot region.
    pub hot: f64,
    /// Share of the hot region on the tip that makes it a tip hot spot.
    pub tip_overlap: f64,
    /// Share of the hot region on the stone that makes it an in-stone hot spot.
    pub stone_overlap: f64,
}

impl Default for HotspotThresholds {
    fn default() -> Self {
        HotspotThresholds { hot: 0.8, tip_overlap: 0.25, stone_overlap: 0.5 }
    }
}

impl HotspotThresholds {
    pub fn validate(&self) -> Result<(), ExplainError> {
        for (name, v) in [("hot", self.hot), ("tip_overlap", self.tip_overlap), ("stone_overlap", self.stone_overlap)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ExplainError::InvalidThresholds(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Tip if the hot region sits on the tip by at least `tip_overlap`, else in
/// stone if it sits on the stone by at least `stone_overlap`, else outside.
pub fn localize_hotspot(
    map: &HeatMap,
    stone_mask: &Mask,
    tip_mask: &Mask,
    thresholds: &HotspotThresholds,
) -> Result<HotspotLocation, ExplainError> {
    for m in [stone_mask, tip_mask] {
        if (m.height(), m.width()) != (map.height, map.width) {
            return Err(ExplainError::MaskShape { expected: (map.height, map.width), found: (m.height(), m.width()) });
        }
    }
    if map.is_zero() {
        return Err(ExplainError::NoHotspot);
    }
    let (mut hot, mut on_tip, mut on_stone) = (0usize, 0usize, 0usize);
    for (i, &v) in map.values.iter().enumerate() {
        if v >= thresholds.hot {
            hot += 1;
            let (r, c) = (i / map.width, i % map.width);
            on_tip += tip_mask.get(r, c) as usize;
            on_stone += stone_mask.get(r, c) as usize;
        }
    }
    let hot = hot as f64;
    Ok(if on_tip as f64 >= thresholds.tip_overlap * hot {
        HotspotLocation::EndoscopeTip
    } else if on_stone as f64 >= thresholds.stone_overlap * hot {
        HotspotLocation::InStone
    } else {
        HotspotLocation::OutsideStone
    })
}

/// Per-pixel opacity of the heat colour is `OVERLAY_ALPHA · value`.
pub const OVERLAY_ALPHA: f64 = 0.4;

/// Blends the inferno-coloured map over the image.
pub fn overlay(img: &NormalizedImage, map: &HeatMap) -> RgbImage {
    let n = NormalizedImage::SIZE;
    assert_eq!((map.height, map.width), (n, n), "heat map must match the image");
    RgbImage::from_fn(n as u32, n as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        let v = map.get(r, c);
        let a = OVERLAY_ALPHA * v;
        let heat = render::heat_color(v);
        Rgb([0, 1, 2].map(|ch| {
            let base = img.get(ch, r, c) as f64;
            let mixed = if a == 0.0 { base } else { (1.0 - a) * base + a * heat[ch] };
            (mixed.clamp(0.0, 1.0) * 255.0).round() as u8
        }))
    })
}

/// One explained test image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HotspotCase {
    pub view: View,
    pub correct: bool,
    pub location: HotspotLocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotspotRateRow {
    pub view: View,
    pub correct: bool,
    pub category: HotspotLocation,
    pub count: usize,
    /// Percentage of the `(view, correct)` group; `None` for an empty group.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HotspotRateReport {
    pub rows: Vec<HotspotRateRow>,
}

impl HotspotRateReport {
    pub fn rate(&self, view: View, correct: bool, category: HotspotLocation) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.view == view && r.correct == correct && r.category == category)
            .and_then(|r| r.rate)
    }

    /// In-stone share among correctly classified images.
    pub fn on_stone_when_correct(&self, view: View) -> Option<f64> {
        self.rate(view, true, HotspotLocation::InStone)
    }

    pub fn outside_when_wrong(&self, view: View) -> Option<f64> {
        self.rate(view, false, HotspotLocation::OutsideStone)
    }

    pub fn tip_when_wrong(&self, view: View) -> Option<f64> {
        self.rate(view, false, HotspotLocation::EndoscopeTip)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("view,correct,category,count,rate\n");
        for r in &self.rows {
            let rate = r.rate.map_or(String::new(), |v| format!("{v:.1}"));
            writeln!(out, "{},{},{},{},{}", r.view, r.correct, r.category.name(), r.count, rate).unwrap();
        }
        out
    }
}

/// Tallies hot-spot categories per view, split by classification outcome.
/// Only views that occur in `cases` get rows.
pub fn hotspot_rates(cases: &[HotspotCase]) -> HotspotRateReport {
    let mut counts: BTreeMap<(View, bool, HotspotLocation), usize> = BTreeMap::new();
    let mut groups: BTreeMap<(View, bool), usize> = BTreeMap::new();
    for c in cases {
        *counts.entry((c.view, c.correct, c.location)).or_default() += 1;
        *groups.entry((c.view, c.correct)).or_default() += 1;
    }
    let mut rows = Vec::new();
    for view in [View::Surface, View::Section] {
        if !cases.iter().any(|c| c.view == view) {
            continue;
        }
        for correct in [true, false] {
            let total = groups.get(&(view, correct)).copied().unwrap_or(0);
            for category in HotspotLocation::ALL {
                let count = counts.get(&(view, correct, category)).copied().unwrap_or(0);
                let rate = (total > 0).then(|| 100.0 * count as f64 / total as f64);
                rows.push(HotspotRateRow { view, correct, category, count, rate });
            }
        }
    }
    HotspotRateReport { rows }
}
