//! On-disk formats: JSON records for boxes and centers, PNG for rasters.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use image::{ImageBuffer, ImageReader, Luma, Rgb};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crownfuse::eval::GroundTruthBox;
use crownfuse::integrate::{AvgCrownSize, IntegratedCenter, RejectedCenter};
use crownfuse::raster::{BinaryMap, GrayMap, LabelMap, RgbRaster};
use crownfuse::segmentation::TreeCenter;
use crownfuse::wbf::{DetectionBox, FusedBox};

use crate::failure::{Failure, InFile};

/// Detector output for one image, normalized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionFile {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub boxes: Vec<DetectionBox>,
}

/// Ground-truth box; `score` and `model_id` are accepted and ignored so
/// detection files double as ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<usize>,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtFile {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub boxes: Vec<GtRecord>,
}

impl GtFile {
    pub fn from_boxes(image_id: &str, width: usize, height: usize, gt: &[GroundTruthBox]) -> Self {
        Self {
            image_id: image_id.to_string(),
            width,
            height,
            boxes: gt
                .iter()
                .map(|g| GtRecord {
                    id: Some(g.id),
                    model_id: None,
                    x1: g.x1,
                    y1: g.y1,
                    x2: g.x2,
                    y2: g.y2,
                    score: None,
                })
                .collect(),
        }
    }

    /// Boxes with ids defaulting to their position; ids must be unique.
    pub fn ground_truth(&self, path: &Path) -> Result<Vec<GroundTruthBox>, Failure> {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(self.boxes.len());
        for (i, b) in self.boxes.iter().enumerate() {
            let id = b.id.unwrap_or(i as u64);
            if !seen.insert(id) {
                return Err(Failure::parse(path, format!("duplicate ground-truth id {id}")).with_field("boxes.id"));
            }
            if !(b.x1 < b.x2 && b.y1 < b.y2) {
                return Err(Failure::parse(path, format!("box {i} has x1 >= x2 or y1 >= y2")).with_field("boxes"));
            }
            out.push(GroundTruthBox {
                id,
                x1: b.x1,
                y1: b.y1,
                x2: b.x2,
                y2: b.y2,
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusedFile {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub n_models: usize,
    pub boxes: Vec<FusedBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentersFile {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub centers: Vec<TreeCenter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratedFile {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub centers: Vec<IntegratedCenter>,
    pub dropped_segments: usize,
    pub avg_crown_size: AvgCrownSize,
    pub avg_is_fallback: bool,
    pub rejected: Vec<RejectedCenter>,
}

/// Any result carrying point predictions.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PointResult {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub centers: Vec<Point>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct Point {
    pub x: usize,
    pub y: usize,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::parse(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::parse(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

fn decode(path: &Path) -> Result<image::DynamicImage, Failure> {
    ImageReader::open(path)
        .map_err(|e| Failure::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Failure::io(path, e))?
        .decode()
        .map_err(|e| Failure::parse(path, e.to_string()))
}

/// 8-bit RGB PNG or TIFF (other layouts are converted).
pub fn read_rgb(path: &Path) -> Result<RgbRaster, Failure> {
    let img = decode(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    RgbRaster::from_interleaved(w as usize, h as usize, img.as_raw()).in_file(path)
}

pub fn write_rgb(path: &Path, raster: &RgbRaster) -> Result<(), Failure> {
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(raster.width() as u32, raster.height() as u32, raster.to_interleaved())
            .expect("buffer matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Failure::io(path, e))
}

/// Binary mask as 0/255.
pub fn write_mask(path: &Path, mask: &BinaryMap) -> Result<(), Failure> {
    let data = mask.values().iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    save_l8(path, mask.width(), mask.height(), data)
}

pub fn read_mask(path: &Path) -> Result<BinaryMap, Failure> {
    let img = decode(path)?.to_luma8();
    let (w, h) = img.dimensions();
    BinaryMap::new(w as usize, h as usize, img.into_raw()).in_file(path)
}

/// Gray map already scaled to `0..=255`.
pub fn write_gray(path: &Path, map: &GrayMap) -> Result<(), Failure> {
    let data = map
        .values()
        .iter()
        .map(|&v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    save_l8(path, map.width(), map.height(), data)
}

fn save_l8(path: &Path, w: usize, h: usize, data: Vec<u8>) -> Result<(), Failure> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w as u32, h as u32, data).expect("buffer matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Failure::io(path, e))
}

/// 16-bit label PNG; labels above 65535 are clamped.
pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<(), Failure> {
    let data = labels
        .labels()
        .iter()
        .map(|&l| l.min(u32::from(u16::MAX)) as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(labels.width() as u32, labels.height() as u32, data).expect("buffer matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Failure::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<LabelMap, Failure> {
    let img = decode(path)?.to_luma16();
    let (w, h) = img.dimensions();
    let labels = img.into_raw().into_iter().map(u32::from).collect();
    LabelMap::new(w as usize, h as usize, labels).in_file(path)
}
