//! Rule-based integration of fused detector boxes with the traditional
//! segmentation.
//!
//! 1. keep boxes scoring at least `tau_a`;
//! 2. measure the average crown size from mask contours inside those boxes;
//! 3. validate every traditional center: box containment, then neighbor
//!    proximity, then a local contour test on a recomputed probability map;
//! 4. prune segments without a reliable center and split segments holding
//!    several.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::probmap::{joint_probability_map, threshold_probability};
use crate::raster::{distance_transform, find_contours, morphological_open, BinaryMap, GrayMap, LabelMap, Rect};
use crate::segmentation::{extract_centers, watershed_split, CenterSource, SegmentationResult, TreeCenter};
use crate::wbf::{Extent, FusedBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrationConfig {
    /// Minimum fused score for a box to count as reliable.
    pub tau_a: f64,
    /// Box growth per side, as a fraction of the box size.
    pub expansion: f64,
    /// Neighbors required for proximity validation.
    pub n_neighbors: usize,
    /// Neighbor radius in pixels; `None` means `2 * max(w̄, h̄)`.
    pub tau_d: Option<f64>,
    /// Relative size tolerance of the local contour test.
    pub tau_c: f64,
    /// Local window size as a multiple of `(w̄, h̄)`.
    pub local_crop: f64,
    /// Disk radius used when splitting multi-center segments.
    pub refine_open_radius: usize,
    /// Crown size used when no contour statistics are available.
    pub fallback_crown_size: f64,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            tau_a: 0.8,
            expansion: 0.10,
            n_neighbors: 2,
            tau_d: None,
            tau_c: 0.5,
            local_crop: 1.5,
            refine_open_radius: 1,
            fallback_crown_size: 20.0,
        }
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_a > 0.0 && self.tau_a <= 1.0) {
            return Err(invalid("tau_a", "must lie in (0, 1]"));
        }
        if !(self.expansion >= 0.0) {
            return Err(invalid("expansion", "must be non-negative"));
        }
        if self.n_neighbors < 1 {
            return Err(invalid("n_neighbors", "must be at least 1"));
        }
        if let Some(d) = self.tau_d {
            if !(d > 0.0) {
                return Err(invalid("tau_d", "must be positive"));
            }
        }
        if !(self.tau_c > 0.0 && self.tau_c <= 1.0) {
            return Err(invalid("tau_c", "must lie in (0, 1]"));
        }
        if !(self.local_crop >= 1.0) {
            return Err(invalid("local_crop", "must be at least 1"));
        }
        if self.refine_open_radius < 1 {
            return Err(invalid("refine_open_radius", "must be at least 1"));
        }
        if !(self.fallback_crown_size > 0.0) {
            return Err(invalid("fallback_crown_size", "must be positive"));
        }
        Ok(())
    }

    /// Effective neighbor radius for a crown size.
    pub fn neighbor_radius(&self, avg: &AvgCrownSize) -> f64 {
        self.tau_d.unwrap_or(2.0 * avg.w_bar.max(avg.h_bar))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvgCrownSize {
    pub w_bar: f64,
    pub h_bar: f64,
    pub sample_count: usize,
}

impl AvgCrownSize {
    pub fn fallback(size: f64) -> Self {
        Self {
            w_bar: size,
            h_bar: size,
            sample_count: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    /// No rule confirmed the center.
    Unsupported,
    /// The center (and so its local window) lies outside the image.
    OutOfBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedCenter {
    pub center: TreeCenter,
    pub reason: RejectReason,
}

/// Partition of the traditional centers into reliable and rejected ones.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReliableSet {
    pub centers: Vec<TreeCenter>,
    pub rejected: Vec<RejectedCenter>,
}

/// Color mask `C`, texture map `G` and the weights combining them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub c: BinaryMap,
    pub g: GrayMap,
    pub w1: f64,
    pub w2: f64,
}

impl FeatureMaps {
    pub fn dims(&self) -> (usize, usize) {
        self.c.dims()
    }
}

/// Boxes with score `>= tau_a`, in input order.
pub fn filter_boxes(boxes: &[FusedBox], tau_a: f64) -> Vec<FusedBox> {
    boxes.iter().copied().filter(|b| b.score >= tau_a).collect()
}

/// Normalized extent to pixel coordinates (continuous, not rounded).
fn to_pixels(e: &Extent, width: usize, height: usize) -> Extent {
    Extent {
        x1: e.x1 * width as f64,
        y1: e.y1 * height as f64,
        x2: e.x2 * width as f64,
        y2: e.y2 * height as f64,
    }
}

/// Smallest pixel rectangle covering a continuous extent, clipped to the
/// image. `None` when nothing remains.
fn pixel_rect(e: &Extent, width: usize, height: usize) -> Option<Rect> {
    let x0 = e.x1.floor().max(0.0);
    let y0 = e.y1.floor().max(0.0);
    let x1 = e.x2.ceil().min(width as f64);
    let y1 = e.y2.ceil().min(height as f64);
    (x1 > x0 && y1 > y0).then_some(Rect {
        x: x0 as usize,
        y: y0 as usize,
        w: (x1 - x0) as usize,
        h: (y1 - y0) as usize,
    })
}

/// Mean bounding-rectangle size of the mask contours found inside each
/// (expanded) box.
pub fn average_crown_size(boxes: &[FusedBox], mask: &BinaryMap, expansion: f64) -> Result<AvgCrownSize> {
    let (width, height) = mask.dims();
    let (mut sw, mut sh, mut n) = (0.0, 0.0, 0usize);
    for b in boxes {
        let e = to_pixels(&b.extent().expanded(expansion), width, height);
        let Some(rect) = pixel_rect(&e, width, height) else {
            continue;
        };
        for c in find_contours(&mask.crop(rect)?) {
            sw += c.bounding_rect.w as f64;
            sh += c.bounding_rect.h as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoCrownStatistics);
    }
    Ok(AvgCrownSize {
        w_bar: sw / n as f64,
        h_bar: sh / n as f64,
        sample_count: n,
    })
}

fn inside_any_box(center: &TreeCenter, boxes: &[FusedBox], expansion: f64, width: usize, height: usize) -> bool {
    let (px, py) = (center.x as f64 + 0.5, center.y as f64 + 0.5);
    boxes
        .iter()
        .any(|b| to_pixels(&b.extent().expanded(expansion), width, height).contains(px, py))
}

/// Local window of `local_crop · (w̄, h̄)` centered on a pixel, clipped to
/// the image.
fn local_window(center: &TreeCenter, avg: &AvgCrownSize, local_crop: f64, width: usize, height: usize) -> Option<Rect> {
    if center.x >= width || center.y >= height {
        return None;
    }
    let ww = (local_crop * avg.w_bar).round().max(1.0);
    let wh = (local_crop * avg.h_bar).round().max(1.0);
    let cx = center.x as f64 + 0.5;
    let cy = center.y as f64 + 0.5;
    let e = Extent {
        x1: cx - ww / 2.0,
        y1: cy - wh / 2.0,
        x2: cx + ww / 2.0,
        y2: cy + wh / 2.0,
    };
    pixel_rect(&e, width, height)
}

/// Whether a contour of the locally thresholded probability map matches the
/// average crown size within `tau_c`.
fn local_contour_match(rect: Rect, features: &FeatureMaps, avg: &AvgCrownSize, tau_c: f64) -> Result<bool> {
    let c = features.c.crop(rect)?;
    let g = features.g.crop(rect)?;
    let j = joint_probability_map(&c, &g, features.w1, features.w2)?;
    let mask = match threshold_probability(&j) {
        Ok(m) => m,
        Err(Error::DegenerateHistogram) => return Ok(false),
        Err(e) => return Err(e),
    };
    Ok(find_contours(&mask).iter().any(|contour| {
        let w = contour.bounding_rect.w as f64;
        let h = contour.bounding_rect.h as f64;
        (w - avg.w_bar).abs() / avg.w_bar <= tau_c && (h - avg.h_bar).abs() / avg.h_bar <= tau_c
    }))
}

/// Validates traditional centers against the accepted boxes, their
/// neighbors, and the local probability map, in that order.
pub fn validate_centers(
    centers: &[TreeCenter],
    boxes: &[FusedBox],
    avg: &AvgCrownSize,
    features: &FeatureMaps,
    cfg: &IntegrationConfig,
) -> Result<ReliableSet> {
    cfg.validate()?;
    if !(avg.w_bar > 0.0 && avg.h_bar > 0.0) {
        return Err(invalid("avg", "crown size must be positive"));
    }
    if features.c.dims() != features.g.dims() {
        return Err(Error::DimensionMismatch {
            expected: features.c.dims(),
            found: features.g.dims(),
        });
    }
    let (width, height) = features.dims();
    let tau_d = cfg.neighbor_radius(avg);
    let mut out = ReliableSet::default();
    for (i, t) in centers.iter().enumerate() {
        let accept = |source| TreeCenter { source, ..*t };
        if inside_any_box(t, boxes, cfg.expansion, width, height) {
            out.centers.push(accept(CenterSource::ValidatedBbox));
            continue;
        }
        let neighbors = centers
            .iter()
            .enumerate()
            .filter(|&(j, o)| j != i && t.distance_to(o) <= tau_d)
            .count();
        if neighbors >= cfg.n_neighbors {
            out.centers.push(accept(CenterSource::ValidatedProximity));
            continue;
        }
        let Some(rect) = local_window(t, avg, cfg.local_crop, width, height) else {
            out.rejected.push(RejectedCenter {
                center: *t,
                reason: RejectReason::OutOfBounds,
            });
            continue;
        };
        if local_contour_match(rect, features, avg, cfg.tau_c)? {
            out.centers.push(accept(CenterSource::ValidatedLocal));
        } else {
            out.rejected.push(RejectedCenter {
                center: *t,
                reason: RejectReason::Unsupported,
            });
        }
    }
    Ok(out)
}

/// Refined segmentation plus the number of pruned segments.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedSegmentation {
    pub result: SegmentationResult,
    pub dropped_segments: usize,
}

fn label_of(center: &TreeCenter, labels: &LabelMap) -> u32 {
    if center.x < labels.width() && center.y < labels.height() {
        match labels.get(center.x, center.y) {
            0 => center.segment_label,
            l => l,
        }
    } else {
        center.segment_label
    }
}

/// Drops segments without a reliable center and splits segments holding
/// two or more by a local opening followed by watershed.
pub fn refine_segmentation(
    reliable: &ReliableSet,
    seg: &SegmentationResult,
    open_radius: usize,
    th_area: usize,
    th_dist: f64,
) -> Result<RefinedSegmentation> {
    if open_radius == 0 {
        return Err(invalid("open_radius", "must be at least 1"));
    }
    let labels = &seg.labels;
    let (w, h) = labels.dims();
    let n = labels.count() as usize;
    let mut hits = vec![0usize; n + 1];
    for c in &reliable.centers {
        let l = label_of(c, labels) as usize;
        if l != 0 && l <= n {
            hits[l] += 1;
        }
    }
    let extents = labels.extents();

    // Fresh label space: untouched segments keep one id, split segments get
    // one per piece; compaction happens at the end.
    let mut out = vec![0u32; w * h];
    let mut next = 1u32;
    let mut dropped = 0;
    for l in 1..=n {
        let ext = extents[l - 1];
        if hits[l] == 0 {
            dropped += 1;
            continue;
        }
        let region = BinaryMap::from_fn(ext.w, ext.h, |x, y| labels.get(x + ext.x, y + ext.y) == l as u32)?;
        let pieces = if hits[l] >= 2 {
            let opened = morphological_open(&region, open_radius, 1)?;
            let split = watershed_split(&opened);
            (split.count() > 0).then_some(split)
        } else {
            None
        };
        match pieces {
            Some(split) => {
                for y in 0..ext.h {
                    for x in 0..ext.w {
                        let s = split.get(x, y);
                        if s != 0 {
                            out[(y + ext.y) * w + x + ext.x] = next + s - 1;
                        }
                    }
                }
                next += split.count();
            }
            None => {
                for y in 0..ext.h {
                    for x in 0..ext.w {
                        if region.get(x, y) {
                            out[(y + ext.y) * w + x + ext.x] = next;
                        }
                    }
                }
                next += 1;
            }
        }
    }
    // Pieces of a split segment that received no center are pruned too.
    let mut refined = LabelMap::compacted(w, h, out)?;
    let attach = |map: &LabelMap| -> Vec<Option<u32>> {
        reliable.centers.iter().map(|c| resync_center(c, map, labels)).collect()
    };
    let mut held = vec![false; refined.count() as usize + 1];
    for l in attach(&refined).into_iter().flatten() {
        held[l as usize] = true;
    }
    let orphans = held[1..].iter().filter(|&&h| !h).count();
    if orphans > 0 {
        let kept = refined
            .labels()
            .iter()
            .map(|&l| if held[l as usize] { l } else { 0 })
            .collect();
        refined = LabelMap::compacted(w, h, kept)?;
        dropped += orphans;
    }
    let distance = distance_transform(&refined.foreground());
    let mut result = extract_centers(&refined, &distance, th_area, th_dist)?;
    result.centers = reliable
        .centers
        .iter()
        .zip(attach(&refined))
        .filter_map(|(c, l)| l.map(|segment_label| TreeCenter { segment_label, ..*c }))
        .collect();
    Ok(RefinedSegmentation {
        result,
        dropped_segments: dropped,
    })
}

/// New label for a center: the label under it, else the nearest refined
/// pixel that belonged to its old segment.
fn resync_center(c: &TreeCenter, refined: &LabelMap, old: &LabelMap) -> Option<u32> {
    let (w, h) = refined.dims();
    if c.x < w && c.y < h && refined.get(c.x, c.y) != 0 {
        return Some(refined.get(c.x, c.y));
    }
    let old_label = label_of(c, old);
    let mut best: Option<(f64, u32)> = None;
    for y in 0..h {
        for x in 0..w {
            let l = refined.get(x, y);
            if l == 0 || old.get(x, y) != old_label {
                continue;
            }
            let d = (x as f64 - c.x as f64).hypot(y as f64 - c.y as f64);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, l));
            }
        }
    }
    best.map(|(_, l)| l)
}

/// Source tag of an integrated detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegratedSource {
    /// Center of an accepted box that no reliable traditional center claimed.
    Detector,
    ValidatedBbox,
    ValidatedProximity,
    ValidatedLocal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegratedCenter {
    pub x: usize,
    pub y: usize,
    pub source: IntegratedSource,
}

/// Pixel at the center of a normalized box.
pub fn box_center_pixel(b: &FusedBox, width: usize, height: usize) -> (usize, usize) {
    let (cx, cy) = b.extent().center();
    let x = ((cx * width as f64).floor().max(0.0) as usize).min(width - 1);
    let y = ((cy * height as f64).floor().max(0.0) as usize).min(height - 1);
    (x, y)
}

/// Final detections: every reliable center, plus the center of each
/// accepted box not already claimed by one of them (one claim per center).
pub fn integrated_centers(
    reliable: &ReliableSet,
    boxes: &[FusedBox],
    expansion: f64,
    width: usize,
    height: usize,
) -> Vec<IntegratedCenter> {
    let mut out: Vec<IntegratedCenter> = reliable
        .centers
        .iter()
        .map(|c| IntegratedCenter {
            x: c.x,
            y: c.y,
            source: match c.source {
                CenterSource::ValidatedProximity => IntegratedSource::ValidatedProximity,
                CenterSource::ValidatedLocal => IntegratedSource::ValidatedLocal,
                _ => IntegratedSource::ValidatedBbox,
            },
        })
        .collect();
    let mut used = vec![false; reliable.centers.len()];
    for b in boxes {
        let e = to_pixels(&b.extent().expanded(expansion), width, height);
        let claim = reliable
            .centers
            .iter()
            .enumerate()
            .find(|(i, c)| !used[*i] && e.contains(c.x as f64 + 0.5, c.y as f64 + 0.5));
        match claim {
            Some((i, _)) => used[i] = true,
            None => {
                let (x, y) = box_center_pixel(b, width, height);
                out.push(IntegratedCenter {
                    x,
                    y,
                    source: IntegratedSource::Detector,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fused(x1: f64, y1: f64, x2: f64, y2: f64, score: f64) -> FusedBox {
        FusedBox {
            x1,
            y1,
            x2,
            y2,
            score,
            cluster_size: 1,
            model_count: 1,
        }
    }

    fn tc(x: usize, y: usize, label: u32) -> TreeCenter {
        TreeCenter {
            x,
            y,
            segment_label: label,
            source: CenterSource::Traditional,
        }
    }

    fn disk_mask(w: usize, h: usize, disks: &[(f64, f64, f64)]) -> BinaryMap {
        BinaryMap::from_fn(w, h, |x, y| {
            disks
                .iter()
                .any(|&(cx, cy, r)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r)
        })
        .unwrap()
    }

    fn features_from(mask: &BinaryMap) -> FeatureMaps {
        let g = GrayMap::from_fn(
            mask.width(),
            mask.height(),
            |x, y| if mask.get(x, y) { 0.8 } else { 0.1 },
        )
        .unwrap();
        FeatureMaps {
            c: mask.clone(),
            g,
            w1: 0.5,
            w2: 0.5,
        }
    }

    #[test]
    fn filter_examples() {
        let boxes = [
            fused(0.1, 0.1, 0.2, 0.2, 0.85),
            fused(0.1, 0.1, 0.2, 0.2, 0.79),
            fused(0.1, 0.1, 0.2, 0.2, 0.92),
        ];
        let kept: Vec<f64> = filter_boxes(&boxes, 0.8).iter().map(|b| b.score).collect();
        assert_eq!(kept, vec![0.85, 0.92]);
        assert!(filter_boxes(&[], 0.8).is_empty());
        assert_eq!(filter_boxes(&[fused(0.1, 0.1, 0.2, 0.2, 0.80)], 0.8).len(), 1);
    }

    #[test]
    fn mean_of_contour_rects() {
        // blobs of 10x20 and 20x10 pixels, each inside its own box
        let mask = BinaryMap::from_fn(100, 100, |x, y| {
            ((10..20).contains(&x) && (10..30).contains(&y)) || ((50..70).contains(&x) && (50..60).contains(&y))
        })
        .unwrap();
        let boxes = [fused(0.09, 0.09, 0.21, 0.31, 0.9), fused(0.49, 0.49, 0.71, 0.61, 0.9)];
        let avg = average_crown_size(&boxes, &mask, 0.0).unwrap();
        assert_eq!((avg.w_bar, avg.h_bar, avg.sample_count), (15.0, 15.0, 2));
    }

    #[test]
    fn one_blob_one_box() {
        let mask = BinaryMap::from_fn(64, 64, |x, y| (20..28).contains(&x) && (30..38).contains(&y)).unwrap();
        let avg = average_crown_size(
            &[fused(18.0 / 64.0, 28.0 / 64.0, 30.0 / 64.0, 40.0 / 64.0, 0.9)],
            &mask,
            0.1,
        )
        .unwrap();
        assert_eq!((avg.w_bar, avg.h_bar), (8.0, 8.0));
    }

    #[test]
    fn no_boxes_no_statistics() {
        let mask = BinaryMap::zeros(10, 10).unwrap();
        assert_eq!(average_crown_size(&[], &mask, 0.1), Err(Error::NoCrownStatistics));
    }

    #[test]
    fn containment_wins_first() {
        let mask = BinaryMap::zeros(100, 100).unwrap();
        let f = features_from(&mask);
        let boxes = [fused(0.1, 0.1, 0.3, 0.3, 0.9)];
        let avg = AvgCrownSize::fallback(20.0);
        let r = validate_centers(&[tc(20, 20, 1)], &boxes, &avg, &f, &IntegrationConfig::default()).unwrap();
        assert_eq!(r.centers[0].source, CenterSource::ValidatedBbox);
        assert!(r.rejected.is_empty());
    }

    #[test]
    fn proximity_with_exact_neighbor_count() {
        let mask = BinaryMap::zeros(200, 200).unwrap();
        let f = features_from(&mask);
        let cfg = IntegrationConfig {
            tau_d: Some(10.0),
            ..Default::default()
        };
        let avg = AvgCrownSize::fallback(20.0);
        // two neighbors at distance 9 = tau_d - 1
        let centers = [tc(100, 100, 1), tc(109, 100, 2), tc(100, 91, 3)];
        let r = validate_centers(&centers, &[], &avg, &f, &cfg).unwrap();
        assert_eq!(r.centers[0].source, CenterSource::ValidatedProximity);
        // a lone center on an empty map finds nothing
        let r = validate_centers(&[tc(20, 20, 1)], &[], &avg, &f, &cfg).unwrap();
        assert!(r.centers.is_empty());
        assert_eq!(r.rejected[0].reason, RejectReason::Unsupported);
    }

    #[test]
    fn local_contour_validates_disk() {
        let mask = disk_mask(120, 120, &[(60.0, 60.0, 10.0)]);
        let f = features_from(&mask);
        let avg = AvgCrownSize {
            w_bar: 21.0,
            h_bar: 21.0,
            sample_count: 4,
        };
        let r = validate_centers(&[tc(60, 60, 1)], &[], &avg, &f, &IntegrationConfig::default()).unwrap();
        assert_eq!(r.centers.len(), 1);
        assert_eq!(r.centers[0].source, CenterSource::ValidatedLocal);

        // a tiny speck does not look like a crown
        let speck = disk_mask(120, 120, &[(60.0, 60.0, 1.0)]);
        let r = validate_centers(
            &[tc(60, 60, 1)],
            &[],
            &avg,
            &features_from(&speck),
            &IntegrationConfig::default(),
        )
        .unwrap();
        assert!(r.centers.is_empty());
    }

    #[test]
    fn out_of_bounds_center_is_rejected() {
        let f = features_from(&BinaryMap::zeros(50, 50).unwrap());
        let r = validate_centers(
            &[tc(80, 10, 1)],
            &[],
            &AvgCrownSize::fallback(10.0),
            &f,
            &IntegrationConfig::default(),
        )
        .unwrap();
        assert_eq!(r.rejected[0].reason, RejectReason::OutOfBounds);
    }

    fn single_label_seg(mask: &BinaryMap) -> SegmentationResult {
        let labels = crate::raster::connected_components(mask);
        let d = distance_transform(mask);
        extract_centers(&labels, &d, 64, 8.0).unwrap()
    }

    #[test]
    fn dumbbell_with_two_reliable_centers_splits() {
        let mask = disk_mask(50, 30, &[(15.0, 15.0, 7.0), (27.0, 15.0, 7.0)]);
        let seg = single_label_seg(&mask);
        assert_eq!(seg.labels.count(), 1);
        let reliable = ReliableSet {
            centers: vec![tc(15, 15, 1), tc(27, 15, 1)],
            rejected: vec![],
        };
        let r = refine_segmentation(&reliable, &seg, 1, 64, 8.0).unwrap();
        assert_eq!(r.result.labels.count(), 2);
        assert_eq!(r.dropped_segments, 0);
        assert_ne!(r.result.centers[0].segment_label, r.result.centers[1].segment_label);
    }

    #[test]
    fn unsupported_segment_is_dropped_and_single_kept() {
        let mask = disk_mask(80, 40, &[(15.0, 20.0, 8.0), (55.0, 20.0, 8.0)]);
        let seg = single_label_seg(&mask);
        let reliable = ReliableSet {
            centers: vec![tc(15, 20, 1)],
            rejected: vec![],
        };
        let r = refine_segmentation(&reliable, &seg, 1, 64, 8.0).unwrap();
        assert_eq!(r.dropped_segments, 1);
        assert_eq!(r.result.labels.count(), 1);
        assert_eq!(r.result.labels.foreground(), disk_mask(80, 40, &[(15.0, 20.0, 8.0)]));
        assert_eq!(r.result.centers[0].segment_label, 1);
    }

    #[test]
    fn integrated_adds_unclaimed_boxes() {
        let reliable = ReliableSet {
            centers: vec![TreeCenter {
                source: CenterSource::ValidatedBbox,
                ..tc(15, 15, 1)
            }],
            rejected: vec![],
        };
        let boxes = [fused(0.1, 0.1, 0.2, 0.2, 0.9), fused(0.5, 0.5, 0.6, 0.6, 0.9)];
        let out = integrated_centers(&reliable, &boxes, 0.1, 100, 100);
        assert_eq!(out.len(), 2);
        assert_eq!(
            out[1],
            IntegratedCenter {
                x: 55,
                y: 55,
                source: IntegratedSource::Detector
            }
        );
    }
}
