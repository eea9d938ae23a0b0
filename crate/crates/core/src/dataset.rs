//! Stone taxonomy, observation records, manifest ingestion and preprocessing.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{DynamicImage, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Side length of the square network input.
pub const INPUT_SIZE: usize = 256;

/// Header of the observation manifest.
pub const MANIFEST_HEADER: [&str; 5] = ["observation_id", "stone_id", "view", "label", "image_path"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unsupported class: {0}")]
    UnsupportedClass(String),
    #[error("unknown morphology token `{0}`")]
    UnknownMorphology(String),
    #[error("unknown view `{0}` (expected surface or section)")]
    UnknownView(String),
    #[error("duplicate observation_id `{0}`")]
    DuplicateObservation(String),
    #[error("missing image file {0}")]
    MissingImage(PathBuf),
    #[error("image {path} is not 8-bit RGB ({found})")]
    NonRgb { path: String, found: String },
    #[error("manifest header must be `{expected}`, found `{found}`")]
    BadHeader { expected: String, found: String },
    #[error("manifest line {line}: {message}")]
    BadRow { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Morpho-constitutional type of a stone component.
///
/// `Ia` is calcium oxalate monohydrate (COM), `IIb` calcium oxalate dihydrate
/// (COD) and `IIIb` uric acid (UA).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Morphology {
    Ia,
    IIb,
    IIIb,
}

impl Morphology {
    pub const ALL: [Morphology; 3] = [Morphology::Ia, Morphology::IIb, Morphology::IIIb];

    pub fn code(self) -> &'static str {
        match self {
            Morphology::Ia => "Ia",
            Morphology::IIb => "IIb",
            Morphology::IIIb => "IIIb",
        }
    }

    /// Crystalline constituent abbreviation.
    pub fn constituent(self) -> &'static str {
        match self {
            Morphology::Ia => "COM",
            Morphology::IIb => "COD",
            Morphology::IIIb => "UA",
        }
    }
}

impl fmt::Display for Morphology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Morphology {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "Ia" => Ok(Morphology::Ia),
            "IIb" => Ok(Morphology::IIb),
            "IIIb" => Ok(Morphology::IIIb),
            other => Err(DatasetError::UnknownMorphology(other.to_string())),
        }
    }
}

/// One of the five classes predicted by the classifier.
///
/// The declaration order (Ia, Ia+IIb, Ia+IIIb, IIb, IIIb) is the canonical
/// class order: it indexes network outputs, breaks argmax ties and lays out
/// confusion matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    #[serde(rename = "Ia")]
    Ia,
    #[serde(rename = "Ia+IIb")]
    IaIIb,
    #[serde(rename = "Ia+IIIb")]
    IaIIIb,
    #[serde(rename = "IIb")]
    IIb,
    #[serde(rename = "IIIb")]
    IIIb,
}

pub const NUM_CLASSES: usize = 5;

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [
        ClassLabel::Ia,
        ClassLabel::IaIIb,
        ClassLabel::IaIIIb,
        ClassLabel::IIb,
        ClassLabel::IIIb,
    ];

    pub const PURE: [ClassLabel; 3] = [ClassLabel::Ia, ClassLabel::IIb, ClassLabel::IIIb];

    pub const MIXED: [ClassLabel; 2] = [ClassLabel::IaIIb, ClassLabel::IaIIIb];

    pub fn index(self) -> usize {
        match self {
            ClassLabel::Ia => 0,
            ClassLabel::IaIIb => 1,
            ClassLabel::IaIIIb => 2,
            ClassLabel::IIb => 3,
            ClassLabel::IIIb => 4,
        }
    }

    pub fn from_index(index: usize) -> Option<ClassLabel> {
        Self::ALL.get(index).copied()
    }

    pub fn token(self) -> &'static str {
        match self {
            ClassLabel::Ia => "Ia",
            ClassLabel::IaIIb => "Ia+IIb",
            ClassLabel::IaIIIb => "Ia+IIIb",
            ClassLabel::IIb => "IIb",
            ClassLabel::IIIb => "IIIb",
        }
    }

    pub fn is_mixed(self) -> bool {
        matches!(self, ClassLabel::IaIIb | ClassLabel::IaIIIb)
    }

    /// Component morphologies, Ia first for mixed classes.
    pub fn components(self) -> &'static [Morphology] {
        match self {
            ClassLabel::Ia => &[Morphology::Ia],
            ClassLabel::IaIIb => &[Morphology::Ia, Morphology::IIb],
            ClassLabel::IaIIIb => &[Morphology::Ia, Morphology::IIIb],
            ClassLabel::IIb => &[Morphology::IIb],
            ClassLabel::IIIb => &[Morphology::IIIb],
        }
    }

    pub fn contains(self, morphology: Morphology) -> bool {
        self.components().contains(&morphology)
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ClassLabel {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = BTreeSet::new();
        for token in s.split('+') {
            parts.insert(token.parse::<Morphology>()?);
        }
        class_of(&parts).map_err(|_| DatasetError::UnsupportedClass(s.trim().to_string()))
    }
}

/// Maps a set of component morphologies to its class.
pub fn class_of(components: &BTreeSet<Morphology>) -> Result<ClassLabel, DatasetError> {
    use Morphology::*;
    let parts: Vec<Morphology> = components.iter().copied().collect();
    match parts.as_slice() {
        [Ia] => Ok(ClassLabel::Ia),
        [IIb] => Ok(ClassLabel::IIb),
        [IIIb] => Ok(ClassLabel::IIIb),
        [Ia, IIb] => Ok(ClassLabel::IaIIb),
        [Ia, IIIb] => Ok(ClassLabel::IaIIIb),
        _ => Err(DatasetError::UnsupportedClass(
            parts.iter().map(|m| m.code()).collect::<Vec<_>>().join("+"),
        )),
    }
}

/// Inverse of [`class_of`].
pub fn components_of(label: ClassLabel) -> BTreeSet<Morphology> {
    label.components().iter().copied().collect()
}

/// Whether an image shows the outer surface or a section of the stone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Surface,
    Section,
}

impl View {
    pub const ALL: [View; 2] = [View::Surface, View::Section];

    pub fn name(self) -> &'static str {
        match self {
            View::Surface => "surface",
            View::Section => "section",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for View {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "surface" => Ok(View::Surface),
            "section" => Ok(View::Section),
            other => Err(DatasetError::UnknownView(other.to_string())),
        }
    }
}

/// One endoscopic image of one physical stone.
#[derive(Debug, Clone, PartialEq)]
pub struct StoneObservation {
    pub observation_id: String,
    /// Identity of the physical stone; several observations may share it.
    pub stone_id: String,
    pub view: View,
    pub label: ClassLabel,
    pub image: RgbImage,
}

/// Network input: 3×256×256 channel-major pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    data: Vec<f32>,
}

impl NormalizedImage {
    pub const CHANNELS: usize = 3;
    pub const SIZE: usize = INPUT_SIZE;
    pub const LEN: usize = Self::CHANNELS * Self::SIZE * Self::SIZE;

    /// Wraps channel-major data, clamping values into `[0, 1]`.
    pub fn from_chw(mut data: Vec<f32>) -> Option<Self> {
        if data.len() != Self::LEN {
            return None;
        }
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Some(NormalizedImage { data })
    }

    pub fn filled(value: f32) -> Self {
        NormalizedImage { data: vec![value.clamp(0.0, 1.0); Self::LEN] }
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[(channel * Self::SIZE + row) * Self::SIZE + col]
    }

    /// Converts back to an 8-bit raster.
    pub fn to_rgb(&self) -> RgbImage {
        let n = Self::SIZE;
        let plane = n * n;
        RgbImage::from_fn(n as u32, n as u32, |x, y| {
            let i = y as usize * n + x as usize;
            image::Rgb([
                to_u8(self.data[i]),
                to_u8(self.data[plane + i]),
                to_u8(self.data[2 * plane + i]),
            ])
        })
    }
}

pub(crate) fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rejects anything but 8-bit RGB, then preprocesses.
pub fn preprocess_image(raw: &DynamicImage) -> Result<NormalizedImage, DatasetError> {
    match raw {
        DynamicImage::ImageRgb8(rgb) => Ok(preprocess_rgb(rgb)),
        other => Err(DatasetError::NonRgb {
            path: "<memory>".into(),
            found: format!("{:?}", other.color()),
        }),
    }
}

/// Center square crop, bilinear resampling to 256×256 and scaling to `[0, 1]`.
pub fn preprocess_rgb(raw: &RgbImage) -> NormalizedImage {
    let (w, h) = (raw.width() as usize, raw.height() as usize);
    let side = w.min(h);
    let x0 = (w - side) / 2;
    let y0 = (h - side) / 2;
    let n = INPUT_SIZE;
    let plane = n * n;
    let mut data = vec![0f32; 3 * plane];
    let scale = side as f32 / n as f32;
    let src = raw.as_raw();
    let px = |x: usize, y: usize, c: usize| src[((y0 + y) * w + x0 + x) * 3 + c] as f32;
    for r in 0..n {
        let (ya, yb, fy) = bilinear_taps(r, scale, side);
        for col in 0..n {
            let (xa, xb, fx) = bilinear_taps(col, scale, side);
            for c in 0..3 {
                let top = px(xa, ya, c) * (1.0 - fx) + px(xb, ya, c) * fx;
                let bottom = px(xa, yb, c) * (1.0 - fx) + px(xb, yb, c) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data[c * plane + r * n + col] = (v / 255.0).clamp(0.0, 1.0);
            }
        }
    }
    NormalizedImage { data }
}

/// Half-pixel-centred source taps for output index `i`.
pub(crate) fn bilinear_taps(i: usize, scale: f32, src_len: usize) -> (usize, usize, f32) {
    let pos = ((i as f32 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f32);
    let a = pos.floor() as usize;
    let b = (a + 1).min(src_len - 1);
    (a, b, pos - a as f32)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub image_count: usize,
    pub unique_stone_count: usize,
}

/// Image and unique-stone counts per (view, class).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusSummary {
    pub counts: BTreeMap<(View, ClassLabel), ClassCounts>,
}

impl CorpusSummary {
    pub fn get(&self, view: View, label: ClassLabel) -> ClassCounts {
        self.counts.get(&(view, label)).copied().unwrap_or_default()
    }

    pub fn view_totals(&self, view: View) -> ClassCounts {
        ClassLabel::ALL.iter().fold(ClassCounts::default(), |acc, &l| {
            let c = self.get(view, l);
            ClassCounts {
                image_count: acc.image_count + c.image_count,
                unique_stone_count: acc.unique_stone_count + c.unique_stone_count,
            }
        })
    }

    pub fn total_images(&self) -> usize {
        self.counts.values().map(|c| c.image_count).sum()
    }
}

impl fmt::Display for CorpusSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for view in View::ALL {
            let t = self.view_totals(view);
            write!(f, "{view}: {} images / {} stones (", t.image_count, t.unique_stone_count)?;
            for (i, label) in ClassLabel::ALL.iter().enumerate() {
                let c = self.get(view, *label);
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{label} = {}/{}", c.image_count, c.unique_stone_count)?;
            }
            writeln!(f, ")")?;
        }
        Ok(())
    }
}

pub fn corpus_summary(observations: &[StoneObservation]) -> CorpusSummary {
    summarize(observations.iter().map(|o| (o.view, o.label, o.stone_id.as_str())))
}

/// Counts images and distinct stone ids per (view, class).
pub fn summarize<'a>(items: impl IntoIterator<Item = (View, ClassLabel, &'a str)>) -> CorpusSummary {
    let mut stones: BTreeMap<(View, ClassLabel), HashSet<&'a str>> = BTreeMap::new();
    let mut summary = CorpusSummary::default();
    for (view, label, stone) in items {
        summary.counts.entry((view, label)).or_default().image_count += 1;
        stones.entry((view, label)).or_default().insert(stone);
    }
    for (key, set) in stones {
        summary.counts.get_mut(&key).unwrap().unique_stone_count = set.len();
    }
    summary
}

/// One manifest row before its image is loaded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub observation_id: String,
    pub stone_id: String,
    pub view: View,
    pub label: ClassLabel,
    pub image_path: String,
}

/// Reads and validates manifest rows without touching image files.
pub fn read_manifest_rows(path: &Path) -> Result<Vec<ManifestRow>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != MANIFEST_HEADER {
        return Err(DatasetError::BadHeader {
            expected: MANIFEST_HEADER.join(","),
            found: header.join(","),
        });
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 5 {
            return Err(DatasetError::BadRow { line, message: format!("expected 5 fields, found {}", record.len()) });
        }
        let observation_id = record[0].to_string();
        if !seen.insert(observation_id.clone()) {
            return Err(DatasetError::DuplicateObservation(observation_id));
        }
        rows.push(ManifestRow {
            observation_id,
            stone_id: record[1].to_string(),
            view: record[2].parse()?,
            label: record[3].parse()?,
            image_path: record[4].to_string(),
        });
    }
    Ok(rows)
}

/// Resolves an image path relative to the manifest's directory.
pub fn resolve_image_path(manifest: &Path, image_path: &str) -> PathBuf {
    let p = Path::new(image_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

pub fn load_rgb(path: &Path) -> Result<RgbImage, DatasetError> {
    if !path.is_file() {
        return Err(DatasetError::MissingImage(path.to_path_buf()));
    }
    match image::open(path)? {
        DynamicImage::ImageRgb8(rgb) => Ok(rgb),
        other => Err(DatasetError::NonRgb {
            path: path.display().to_string(),
            found: format!("{:?}", other.color()),
        }),
    }
}

/// Parses a manifest CSV and loads every referenced image.
pub fn parse_manifest(path: &Path) -> Result<Vec<StoneObservation>, DatasetError> {
    read_manifest_rows(path)?
        .into_iter()
        .map(|row| {
            let image = load_rgb(&resolve_image_path(path, &row.image_path))?;
            Ok(StoneObservation {
                observation_id: row.observation_id,
                stone_id: row.stone_id,
                view: row.view,
                label: row.label,
                image,
            })
        })
        .collect()
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<(), DatasetError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(MANIFEST_HEADER)?;
    for row in rows {
        writer.write_record([
            row.observation_id.as_str(),
            row.stone_id.as_str(),
            row.view.name(),
            row.label.token(),
            row.image_path.as_str(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
