//! Manifest parsing, patch decoding and the tensor preparation steps shared by
//! every model.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::npy::{NpyArray, NpyData};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    NotDusty,
    Dusty,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::NotDusty, Label::Dusty];

    /// Dusty is 1, not dusty is 0.
    pub fn code(self) -> u8 {
        match self {
            Label::NotDusty => 0,
            Label::Dusty => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Label> {
        match code {
            0 => Some(Label::NotDusty),
            1 => Some(Label::Dusty),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::NotDusty => "not_dusty",
            Label::Dusty => "dusty",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        match norm.as_str() {
            "dusty" | "1" => Ok(Label::Dusty),
            "notdusty" | "nondusty" | "clear" | "0" => Ok(Label::NotDusty),
            _ => Err(format!("unknown label `{}`", s.trim())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" | "training" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" | "testing" => Ok(Split::Test),
            _ => Err(format!("unknown split `{}`", s.trim())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image_path: PathBuf,
    pub label: Label,
    pub split: Split,
}

/// CSV header names holding the path, label and split columns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub path: String,
    pub label: String,
    pub split: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            path: "path".into(),
            label: "label".into(),
            split: "split".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitManifest {
    /// Directory that relative image paths are resolved against.
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl SplitManifest {
    pub fn counts(&self) -> SplitCounts {
        let mut c = SplitCounts::default();
        for row in &self.rows {
            match row.split {
                Split::Train => c.train += 1,
                Split::Val => c.val += 1,
                Split::Test => c.test += 1,
            }
        }
        c
    }

    /// `[not_dusty, dusty]` counts within one split.
    pub fn label_counts(&self, split: Split) -> [usize; 2] {
        let mut c = [0; 2];
        for row in self.rows.iter().filter(|r| r.split == split) {
            c[row.label.code() as usize] += 1;
        }
        c
    }

    pub fn rows_in(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        if row.image_path.is_absolute() {
            row.image_path.clone()
        } else {
            self.root.join(&row.image_path)
        }
    }
}

const PATH_ALIASES: &[&str] = &["path", "image_path", "file", "filename", "image"];
const LABEL_ALIASES: &[&str] = &["label", "class", "category"];
const SPLIT_ALIASES: &[&str] = &["split", "set", "subset"];

pub fn load_manifest(csv_path: &Path) -> Result<SplitManifest> {
    load_manifest_with(csv_path, &ColumnMapping::default())
}

/// Parse a manifest CSV. Row numbers in errors count the header as row 1.
/// When a mapped column is missing and the mapping is the default one,
/// common alternative header names are tried.
pub fn load_manifest_with(csv_path: &Path, columns: &ColumnMapping) -> Result<SplitManifest> {
    let file = std::fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::ManifestParse {
            row: 1,
            msg: e.to_string(),
        })?
        .clone();
    let defaults = *columns == ColumnMapping::default();
    let find = |name: &str, aliases: &[&str]| -> Result<usize> {
        let lookup = |n: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(n));
        lookup(name)
            .or_else(|| {
                if defaults {
                    aliases.iter().find_map(|a| lookup(a))
                } else {
                    None
                }
            })
            .ok_or_else(|| Error::ManifestParse {
                row: 1,
                msg: format!("header lacks a `{name}` column"),
            })
    };
    let ip = find(&columns.path, PATH_ALIASES)?;
    let il = find(&columns.label, LABEL_ALIASES)?;
    let is = find(&columns.split, SPLIT_ALIASES)?;

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::ManifestParse {
            row,
            msg: e.to_string(),
        })?;
        let field = |idx: usize| {
            record.get(idx).ok_or_else(|| Error::ManifestParse {
                row,
                msg: format!("missing column {idx}"),
            })
        };
        let path = field(ip)?;
        if path.is_empty() {
            return Err(Error::ManifestParse {
                row,
                msg: "empty image path".into(),
            });
        }
        let label = field(il)?
            .parse::<Label>()
            .map_err(|msg| Error::ManifestParse { row, msg })?;
        let split = field(is)?
            .parse::<Split>()
            .map_err(|msg| Error::ManifestParse { row, msg })?;
        if !seen.insert(path.to_string()) {
            return Err(Error::ManifestParse {
                row,
                msg: format!("image path `{path}` appears more than once"),
            });
        }
        rows.push(ManifestRow {
            image_path: PathBuf::from(path),
            label,
            split,
        });
    }
    Ok(SplitManifest {
        root: csv_path.parent().map(Path::to_path_buf).unwrap_or_default(),
        rows,
    })
}

/// One grayscale patch of raw 8-bit intensities, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImagePatch {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
    pub label: Option<Label>,
    pub split: Option<Split>,
}

impl ImagePatch {
    pub fn new(
        id: impl Into<String>,
        height: usize,
        width: usize,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::shape(format!(
                "{height}x{width} patch needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        Ok(Self {
            id: id.into(),
            height,
            width,
            pixels,
            label: None,
            split: None,
        })
    }

    pub fn constant(id: impl Into<String>, height: usize, width: usize, value: u8) -> Self {
        Self::new(id, height, width, vec![value; height * width]).expect("sizes agree")
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }
}

/// Decodes patch files and counts multi-channel inputs that had to be
/// collapsed to one channel.
#[derive(Debug, Default)]
pub struct PatchLoader {
    multichannel: AtomicUsize,
}

impl PatchLoader {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of loaded files that had more than one channel.
    pub fn multichannel_conversions(&self) -> usize {
        self.multichannel.load(Ordering::Relaxed)
    }

    pub fn load(&self, path: &Path) -> Result<ImagePatch> {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let is_npy = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("npy"));
        let (h, w, channels, values) = if is_npy {
            decode_npy(path)?
        } else {
            decode_image(path)?
        };
        let pixels = if channels == 1 {
            values
        } else {
            self.multichannel.fetch_add(1, Ordering::Relaxed);
            log::warn!(
                "{} has {channels} channels; averaging to one",
                path.display()
            );
            luminance_average(&values, channels)
        };
        ImagePatch::new(id, h, w, pixels)
    }
}

pub fn load_patch(path: &Path) -> Result<ImagePatch> {
    PatchLoader::new().load(path)
}

/// Write a patch as an 8-bit grayscale PNG.
pub fn save_patch(patch: &ImagePatch, path: &Path) -> Result<()> {
    let buf = image::GrayImage::from_raw(
        patch.width as u32,
        patch.height as u32,
        patch.pixels.clone(),
    )
    .ok_or_else(|| {
        Error::shape(format!(
            "patch {} pixel count does not match its dims",
            patch.id
        ))
    })?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Decode {
                path: path.to_path_buf(),
                msg: other.to_string(),
            },
        })
}

/// Average of the colour channels of interleaved pixels. A fourth (alpha)
/// channel is ignored.
fn luminance_average(values: &[u8], channels: usize) -> Vec<u8> {
    let used = if channels == 4 || channels == 2 {
        channels - 1
    } else {
        channels
    };
    values
        .chunks_exact(channels)
        .map(|px| {
            let sum: u32 = px[..used].iter().map(|&v| v as u32).sum();
            ((sum as f64 / used as f64).round()) as u8
        })
        .collect()
}

fn decode_image(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let decode_err = |msg: String| Error::Decode {
        path: path.to_path_buf(),
        msg,
    };
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| decode_err(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    use image::DynamicImage as D;
    let out = match img {
        D::ImageLuma8(b) => (h, w, 1, b.into_raw()),
        D::ImageLumaA8(b) => (h, w, 2, b.into_raw()),
        D::ImageRgb8(b) => (h, w, 3, b.into_raw()),
        D::ImageRgba8(b) => (h, w, 4, b.into_raw()),
        D::ImageLuma16(b) => (h, w, 1, b.into_raw().iter().map(|&v| to_u8(v)).collect()),
        D::ImageLumaA16(b) => (h, w, 2, b.into_raw().iter().map(|&v| to_u8(v)).collect()),
        D::ImageRgb16(b) => (h, w, 3, b.into_raw().iter().map(|&v| to_u8(v)).collect()),
        D::ImageRgba16(b) => (h, w, 4, b.into_raw().iter().map(|&v| to_u8(v)).collect()),
        other => (h, w, 3, other.to_rgb8().into_raw()),
    };
    Ok(out)
}

fn to_u8(v: u16) -> u8 {
    ((v as u32 + 128) / 257) as u8
}

fn decode_npy(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let arr = NpyArray::read(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let (h, w, c) = match arr.shape[..] {
        [h, w] => (h, w, 1),
        [h, w, c] if (1..=4).contains(&c) => (h, w, c),
        _ => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                msg: format!("expected a 2-D or HxWxC array, found shape {:?}", arr.shape),
            })
        }
    };
    let values = match arr.data {
        NpyData::U8(v) => v,
        _ => arr
            .to_f32_vec()
            .into_iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect(),
    };
    Ok((h, w, c, values))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// raw / 255, in [0, 1]
    Unit,
    /// (raw / 255 - mean) / std per channel
    Standardized,
    /// raw / 127.5 - 1, in [-1, 1]
    SignedUnit,
}

impl NormMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NormMode::Unit => "unit",
            NormMode::Standardized => "standardized",
            NormMode::SignedUnit => "signed_unit",
        }
    }
}

/// Per-channel mean and standard deviation on the unit scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    pub fn uniform(channels: usize, mean: f32, std: f32) -> Self {
        Self {
            mean: vec![mean; channels],
            std: vec![std; channels],
        }
    }

    fn check(&self, channels: usize) -> Result<()> {
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(Error::shape(format!(
                "stats cover {} channels, image has {channels}",
                self.mean.len()
            )));
        }
        if let Some(i) = self.std.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::DegenerateStats(format!(
                "channel {i} has standard deviation {}",
                self.std[i]
            )));
        }
        Ok(())
    }
}

/// Real-valued image in channel-planar (C, H, W) layout.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedImage {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub mode: NormMode,
    pub stats: Option<ChannelStats>,
}

impl NormalizedImage {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
        mode: NormMode,
    ) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "{channels}x{height}x{width} image needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
            mode,
            stats: None,
        })
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Re-express a unit-mode image in another mode.
    pub fn convert(&self, mode: NormMode, stats: Option<&ChannelStats>) -> Result<Self> {
        if self.mode != NormMode::Unit {
            return Err(Error::invalid(format!(
                "conversion starts from unit mode, image is {}",
                self.mode.as_str()
            )));
        }
        let n = self.height * self.width;
        let mut data = self.data.clone();
        match mode {
            NormMode::Unit => {}
            NormMode::SignedUnit => data.iter_mut().for_each(|v| *v = *v * 2.0 - 1.0),
            NormMode::Standardized => {
                let stats = stats
                    .ok_or_else(|| Error::invalid("standardized mode requires channel stats"))?;
                stats.check(self.channels)?;
                for c in 0..self.channels {
                    let (m, s) = (stats.mean[c], stats.std[c]);
                    data[c * n..(c + 1) * n]
                        .iter_mut()
                        .for_each(|v| *v = (*v - m) / s);
                }
            }
        }
        Ok(Self {
            data,
            mode,
            stats: if mode == NormMode::Standardized {
                stats.cloned()
            } else {
                None
            },
            ..*self
        })
    }

    /// Values mapped back to the unit scale.
    pub fn to_unit(&self) -> Vec<f32> {
        let n = self.height * self.width;
        match self.mode {
            NormMode::Unit => self.data.clone(),
            NormMode::SignedUnit => self.data.iter().map(|v| (v + 1.0) * 0.5).collect(),
            NormMode::Standardized => {
                let stats = self
                    .stats
                    .as_ref()
                    .expect("standardized image carries stats");
                self.data
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let c = i / n;
                        v * stats.std[c] + stats.mean[c]
                    })
                    .collect()
            }
        }
    }

    pub fn as_unit(&self) -> NormalizedImage {
        NormalizedImage {
            data: self.to_unit(),
            mode: NormMode::Unit,
            stats: None,
            ..*self
        }
    }
}

pub fn normalize(
    patch: &ImagePatch,
    mode: NormMode,
    stats: Option<&ChannelStats>,
) -> Result<NormalizedImage> {
    let data = match mode {
        NormMode::Unit => patch.pixels.iter().map(|&v| v as f32 / 255.0).collect(),
        NormMode::SignedUnit => patch
            .pixels
            .iter()
            .map(|&v| v as f32 / 127.5 - 1.0)
            .collect(),
        NormMode::Standardized => {
            let stats =
                stats.ok_or_else(|| Error::invalid("standardized mode requires channel stats"))?;
            stats.check(1)?;
            let (m, s) = (stats.mean[0], stats.std[0]);
            patch
                .pixels
                .iter()
                .map(|&v| (v as f32 / 255.0 - m) / s)
                .collect()
        }
    };
    let mut img = NormalizedImage::new(1, patch.height, patch.width, data, mode)?;
    if mode == NormMode::Standardized {
        img.stats = stats.cloned();
    }
    Ok(img)
}

/// Raw 8-bit values of every channel (planar), rounded and clamped.
pub fn denormalize(image: &NormalizedImage) -> Vec<u8> {
    image
        .to_unit()
        .into_iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Single-channel image back to a patch.
pub fn to_patch(image: &NormalizedImage, id: impl Into<String>) -> Result<ImagePatch> {
    if image.channels != 1 {
        return Err(Error::shape(format!(
            "expected 1 channel, found {}",
            image.channels
        )));
    }
    ImagePatch::new(id, image.height, image.width, denormalize(image))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMethod {
    #[default]
    Bilinear,
    Nearest,
}

/// Resize one row-major plane. Bilinear uses half-pixel centres with edge
/// clamping, so outputs are convex combinations of inputs.
pub fn resize_plane(
    src: &[f32],
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    method: ResizeMethod,
) -> Vec<f32> {
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let mut out = vec![0.0f32; oh * ow];
    match method {
        ResizeMethod::Nearest => {
            let cols: Vec<usize> = (0..ow).map(|x| ((x * w) / ow).min(w - 1)).collect();
            for y in 0..oh {
                let sy = ((y * h) / oh).min(h - 1);
                let row = &src[sy * w..(sy + 1) * w];
                for (o, &sx) in out[y * ow..(y + 1) * ow].iter_mut().zip(&cols) {
                    *o = row[sx];
                }
            }
        }
        ResizeMethod::Bilinear => {
            let axis = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f32)> {
                let scale = n_in as f64 / n_out as f64;
                (0..n_out)
                    .map(|i| {
                        let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                        let lo = s.floor() as usize;
                        let hi = (lo + 1).min(n_in - 1);
                        (lo, hi, (s - lo as f64) as f32)
                    })
                    .collect()
            };
            let xs = axis(ow, w);
            for (y, &(y0, y1, fy)) in axis(oh, h).iter().enumerate() {
                let r0 = &src[y0 * w..(y0 + 1) * w];
                let r1 = &src[y1 * w..(y1 + 1) * w];
                for (o, &(x0, x1, fx)) in out[y * ow..(y + 1) * ow].iter_mut().zip(&xs) {
                    let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                    let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                    *o = top + (bot - top) * fy;
                }
            }
        }
    }
    out
}

pub fn resize(
    image: &NormalizedImage,
    target: (usize, usize),
    method: ResizeMethod,
) -> Result<NormalizedImage> {
    let (oh, ow) = target;
    if oh == 0 || ow == 0 {
        return Err(Error::invalid(format!(
            "resize target {oh}x{ow} must be at least 1x1"
        )));
    }
    let mut data = Vec::with_capacity(image.channels * oh * ow);
    for c in 0..image.channels {
        data.extend(resize_plane(
            image.plane(c),
            image.height,
            image.width,
            oh,
            ow,
            method,
        ));
    }
    Ok(NormalizedImage {
        height: oh,
        width: ow,
        data,
        ..image.clone()
    })
}

pub fn to_rgb_stack(image: &NormalizedImage) -> Result<NormalizedImage> {
    if image.channels != 1 {
        return Err(Error::shape(format!(
            "grayscale stacking needs 1 channel, found {}",
            image.channels
        )));
    }
    let mut data = Vec::with_capacity(image.data.len() * 3);
    for _ in 0..3 {
        data.extend_from_slice(&image.data);
    }
    let stats = image.stats.as_ref().map(|s| ChannelStats {
        mean: vec![s.mean[0]; 3],
        std: vec![s.std[0]; 3],
    });
    Ok(NormalizedImage {
        channels: 3,
        data,
        stats,
        ..image.clone()
    })
}

/// Rows of one split in a seed-determined order.
pub fn shuffled_rows(manifest: &SplitManifest, split: Split, seed: u64) -> Vec<ManifestRow> {
    let mut rows: Vec<ManifestRow> = manifest.rows_in(split).cloned().collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    rows
}

/// Load one split's patches in seed-determined order with their label codes.
pub fn prepare_split(
    manifest: &SplitManifest,
    split: Split,
    seed: u64,
) -> Result<Vec<(ImagePatch, u8)>> {
    let loader = PatchLoader::new();
    shuffled_rows(manifest, split, seed)
        .into_iter()
        .map(|row| {
            let mut patch = loader.load(&manifest.resolve(&row))?;
            patch.id = row.image_path.to_string_lossy().into_owned();
            patch.label = Some(row.label);
            patch.split = Some(row.split);
            Ok((patch, row.label.code()))
        })
        .collect()
}

/// Mean and population standard deviation of raw/255 over a set of patches.
pub fn compute_stats(patches: &[ImagePatch]) -> Result<ChannelStats> {
    let mut n = 0u64;
    let mut sum = 0f64;
    let mut sq = 0f64;
    for p in patches {
        for &v in &p.pixels {
            let x = v as f64 / 255.0;
            sum += x;
            sq += x * x;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::DegenerateStats("no pixels to summarise".into()));
    }
    let mean = sum / n as f64;
    let var = (sq / n as f64 - mean * mean).max(0.0);
    Ok(ChannelStats::uniform(1, mean as f32, var.sqrt() as f32))
}

/// Identity of one cached, preprocessed split.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub split: Split,
    pub mode: NormMode,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl CacheKey {
    pub fn stem(&self) -> String {
        format!(
            "{}_{}_{}x{}_s{}",
            self.split.as_str(),
            self.mode.as_str(),
            self.height,
            self.width,
            self.seed
        )
    }
}

/// Write images (N x C x H x W, f32) and label codes as two NPY files.
pub fn write_cache(
    dir: &Path,
    key: &CacheKey,
    images: &[NormalizedImage],
    labels: &[u8],
) -> Result<()> {
    if images.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let c = images.first().map_or(1, |i| i.channels);
    let mut data = Vec::with_capacity(images.len() * c * key.height * key.width);
    for img in images {
        if (img.channels, img.height, img.width) != (c, key.height, key.width) {
            return Err(Error::shape(format!(
                "cache expects {c}x{}x{} images, found {}x{}x{}",
                key.height, key.width, img.channels, img.height, img.width
            )));
        }
        data.extend_from_slice(&img.data);
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = key.stem();
    NpyArray::f32(vec![images.len(), c, key.height, key.width], data)?
        .write(&dir.join(format!("{stem}_x.npy")))?;
    NpyArray::u8(vec![labels.len()], labels.to_vec())?.write(&dir.join(format!("{stem}_y.npy")))
}

/// Read a cache entry back; `None` when it was never written.
pub fn read_cache(dir: &Path, key: &CacheKey) -> Result<Option<(Vec<NormalizedImage>, Vec<u8>)>> {
    let stem = key.stem();
    let (xp, yp) = (
        dir.join(format!("{stem}_x.npy")),
        dir.join(format!("{stem}_y.npy")),
    );
    if !xp.exists() || !yp.exists() {
        return Ok(None);
    }
    let x = NpyArray::read(&xp)?;
    let y = NpyArray::read(&yp)?;
    let [n, c, h, w] = x.shape[..] else {
        return Err(Error::Npy(format!("cache images have shape {:?}", x.shape)));
    };
    let labels = y
        .as_u8()
        .ok_or_else(|| Error::Npy("cache labels are not u8".into()))?
        .to_vec();
    if labels.len() != n {
        return Err(Error::Npy(format!(
            "{n} cached images but {} labels",
            labels.len()
        )));
    }
    let data = x.to_f32_vec();
    let per = c * h * w;
    let images = (0..n)
        .map(|i| NormalizedImage::new(c, h, w, data[i * per..(i + 1) * per].to_vec(), key.mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some((images, labels)))
}
