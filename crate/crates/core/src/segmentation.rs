//! Crown segments and trunk positions from the candidate mask.
//!
//! The mask is split by marker-controlled watershed flooding of its distance
//! transform; each segment's distance maxima are then merged into tree
//! centers by segment size and inter-maximum distance.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::raster::{
    connected_components, distance_transform, find_contours, BinaryMap, Contour, GrayMap, LabelMap, Rect,
};

/// Which rule produced (or confirmed) a tree center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CenterSource {
    Traditional,
    ValidatedBbox,
    ValidatedProximity,
    ValidatedLocal,
}

impl CenterSource {
    pub fn is_validated(self) -> bool {
        !matches!(self, CenterSource::Traditional)
    }
}

/// Trunk position in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeCenter {
    pub x: usize,
    pub y: usize,
    pub segment_label: u32,
    pub source: CenterSource,
}

impl TreeCenter {
    pub fn distance_to(&self, other: &TreeCenter) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        dx.hypot(dy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub label: u32,
    pub area: usize,
    pub contour: Contour,
    pub maxima: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub labels: LabelMap,
    pub segments: Vec<Segment>,
    pub centers: Vec<TreeCenter>,
}

impl SegmentationResult {
    pub fn segment(&self, label: u32) -> Option<&Segment> {
        self.segments.iter().find(|s| s.label == label)
    }

    /// Binary crown mask (every labeled pixel).
    pub fn mask(&self) -> BinaryMap {
        self.labels.foreground()
    }
}

/// Size/distance thresholds of the maxima merge rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationConfig {
    /// Segments with fewer pixels collapse to a single center.
    pub th_area: usize,
    /// Maxima closer than this (pixels) in larger segments are merged.
    pub th_dist: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            th_area: 64,
            th_dist: 8.0,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.th_area < 1 {
            return Err(invalid("th_area", "must be at least 1"));
        }
        if !(self.th_dist >= 1.0) {
            return Err(invalid("th_dist", "must be at least 1"));
        }
        Ok(())
    }
}

/// Regional maxima of a map: 8-connected plateaus of equal value, at least
/// `min_value`, whose outside neighbors are all strictly lower. A strict
/// local maximum is the one-pixel case. Plateaus are returned in raster
/// order of their first pixel.
pub fn regional_maxima(map: &GrayMap, min_value: f64) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = map.dims();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        let v = map.values()[start];
        if seen[start] || v < min_value {
            continue;
        }
        let mut plateau = Vec::new();
        let mut is_max = true;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            plateau.push((x, y));
            for (nx, ny) in neighbors8(x, y, w, h) {
                let j = ny * w + nx;
                let nv = map.values()[j];
                if nv > v {
                    is_max = false;
                } else if nv == v && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if is_max {
            plateau.sort_by_key(|&(x, y)| (y, x));
            out.push(plateau);
        }
    }
    out
}

fn neighbors8(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1i64..=1)
        .flat_map(|dy| (-1i64..=1).map(move |dx| (dx, dy)))
        .filter(|&d| d != (0, 0))
        .filter_map(move |(dx, dy)| {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            (nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64).then_some((nx as usize, ny as usize))
        })
}

/// Representative pixel of a plateau: the member closest to its centroid
/// (first in raster order on ties).
fn plateau_point(plateau: &[(usize, usize)]) -> (usize, usize) {
    let n = plateau.len() as f64;
    let cx = plateau.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let cy = plateau.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    let mut best = plateau[0];
    let mut best_d = f64::INFINITY;
    for &p in plateau {
        let d = (p.0 as f64 - cx).powi(2) + (p.1 as f64 - cy).powi(2);
        if d < best_d {
            best = p;
            best_d = d;
        }
    }
    best
}

/// Floods `relief` from the seeded pixels in `labels` (highest relief
/// first), restricted to `mask`. Ties go to the earliest queued pixel.
fn flood(mask: &BinaryMap, relief: &GrayMap, labels: &mut [u32]) {
    let (w, h) = mask.dims();
    let key = |i: usize| (relief.values()[i] * 1024.0).round() as i64;
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 {
            heap.push((key(i), Reverse(seq), i));
            seq += 1;
        }
    }
    while let Some((_, _, i)) = heap.pop() {
        let label = labels[i];
        for (nx, ny) in neighbors8(i % w, i / w, w, h) {
            let j = ny * w + nx;
            if labels[j] == 0 && mask.values()[j] != 0 {
                labels[j] = label;
                heap.push((key(j), Reverse(seq), j));
                seq += 1;
            }
        }
    }
}

/// Marker-controlled watershed: every regional maximum (value ≥ 1) of the
/// distance transform seeds one region, and the regions grow over the
/// negated distance so touching crowns split along the distance ridge.
pub fn watershed_split(mask: &BinaryMap) -> LabelMap {
    let distance = distance_transform(mask);
    let (w, h) = mask.dims();
    let mut labels = vec![0u32; w * h];
    for (k, plateau) in regional_maxima(&distance, 1.0).iter().enumerate() {
        for &(x, y) in plateau {
            labels[y * w + x] = k as u32 + 1;
        }
    }
    flood(mask, &distance, &mut labels);
    LabelMap::compacted(w, h, labels).expect("dims match mask")
}

fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor().max(0.0) as usize
}

fn mean_point(points: &[(usize, usize)]) -> (usize, usize) {
    let n = points.len() as f64;
    let x = points.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let y = points.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    (round_half_up(x), round_half_up(y))
}

/// Single-linkage clusters of points closer than `dist`, ordered by their
/// first member.
pub fn single_linkage(points: &[(usize, usize)], dist: f64) -> Vec<Vec<(usize, usize)>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let dx = points[i].0 as f64 - points[j].0 as f64;
            let dy = points[i].1 as f64 - points[j].1 as f64;
            if dx.hypot(dy) < dist {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut clusters: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for (i, &p) in points.iter().enumerate() {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[slot[r]].push(p);
    }
    clusters
}

/// Builds segments and tree centers from a watershed labeling.
///
/// Segments smaller than `th_area` pixels yield exactly one center (the
/// rounded mean of their maxima); larger ones yield one center per
/// single-linkage cluster of maxima closer than `th_dist`.
pub fn extract_centers(
    labels: &LabelMap,
    distance: &GrayMap,
    th_area: usize,
    th_dist: f64,
) -> Result<SegmentationResult> {
    if labels.dims() != distance.dims() {
        return Err(Error::DimensionMismatch {
            expected: labels.dims(),
            found: distance.dims(),
        });
    }
    SegmentationConfig { th_area, th_dist }.validate()?;

    let n = labels.count() as usize;
    let mut maxima: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for plateau in regional_maxima(distance, 1.0) {
        let p = plateau_point(&plateau);
        let l = labels.get(p.0, p.1) as usize;
        if l != 0 {
            maxima[l - 1].push(p);
        }
    }

    let areas = labels.areas();
    let extents = labels.extents();
    let mut segments = Vec::with_capacity(n);
    let mut centers = Vec::new();
    for (k, seg_maxima) in maxima.into_iter().enumerate() {
        let label = k as u32 + 1;
        let area = areas[k + 1];
        let contour = segment_contour(labels, label, extents[k]);
        let picks = if seg_maxima.is_empty() {
            Vec::new()
        } else if area < th_area {
            vec![mean_point(&seg_maxima)]
        } else {
            single_linkage(&seg_maxima, th_dist)
                .iter()
                .map(|c| mean_point(c))
                .collect()
        };
        centers.extend(picks.into_iter().map(|(x, y)| TreeCenter {
            x,
            y,
            segment_label: label,
            source: CenterSource::Traditional,
        }));
        segments.push(Segment {
            label,
            area,
            contour,
            maxima: seg_maxima,
        });
    }
    Ok(SegmentationResult {
        labels: labels.clone(),
        segments,
        centers,
    })
}

fn segment_contour(labels: &LabelMap, label: u32, extent: Rect) -> Contour {
    let crop = BinaryMap::from_fn(extent.w, extent.h, |x, y| {
        labels.get(x + extent.x, y + extent.y) == label
    })
    .expect("non-empty extent");
    let mut contours = find_contours(&crop);
    // Flooded regions are 8-connected, so the first contour is the outer one.
    let mut c = contours.swap_remove(0);
    for p in &mut c.points {
        p.0 += extent.x;
        p.1 += extent.y;
    }
    c.bounding_rect.x += extent.x;
    c.bounding_rect.y += extent.y;
    c
}

/// Watershed + center extraction in one call.
pub fn segment_mask(mask: &BinaryMap, cfg: &SegmentationConfig) -> Result<SegmentationResult> {
    let labels = watershed_split(mask);
    let distance = distance_transform(mask);
    extract_centers(&labels, &distance, cfg.th_area, cfg.th_dist)
}

/// Number of 8-connected components, for comparison with the watershed count.
pub fn component_count(mask: &BinaryMap) -> u32 {
    connected_components(mask).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(w: usize, h: usize, disks: &[(f64, f64, f64)]) -> BinaryMap {
        BinaryMap::from_fn(w, h, |x, y| {
            disks
                .iter()
                .any(|&(cx, cy, r)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r)
        })
        .unwrap()
    }

    #[test]
    fn disjoint_disks_match_components() {
        let m = disk(60, 40, &[(12.0, 12.0, 8.0), (42.0, 25.0, 10.0)]);
        let ws = watershed_split(&m);
        assert_eq!(ws, connected_components(&m));
        assert_eq!(ws.count(), 2);
    }

    #[test]
    fn solid_disk_is_one_label() {
        for r in 3..16 {
            let m = disk(40, 40, &[(20.0, 20.0, r as f64)]);
            assert_eq!(watershed_split(&m).count(), 1, "radius {r}");
        }
    }

    #[test]
    fn dumbbell_splits_between_centers() {
        // radius 7, centers 12 apart: the disks overlap by 2 px
        let m = disk(40, 24, &[(12.0, 12.0, 7.0), (24.0, 12.0, 7.0)]);
        assert_eq!(component_count(&m), 1);
        let ws = watershed_split(&m);
        assert_eq!(ws.count(), 2);
        assert_ne!(ws.get(12, 12), ws.get(24, 12));
        assert_eq!(ws.get(8, 12), ws.get(12, 12));
        assert_eq!(ws.get(28, 12), ws.get(24, 12));
    }

    #[test]
    fn every_foreground_pixel_labeled() {
        let m = disk(50, 50, &[(10.0, 10.0, 6.0), (18.0, 14.0, 7.0), (35.0, 35.0, 9.0)]);
        let ws = watershed_split(&m);
        for (i, &l) in ws.labels().iter().enumerate() {
            assert_eq!(l != 0, m.values()[i] != 0);
        }
        assert!(watershed_split(&BinaryMap::zeros(5, 5).unwrap()).count() == 0);
    }

    fn single_segment(w: usize, h: usize, area_rect: Rect) -> LabelMap {
        LabelMap::new(
            w,
            h,
            (0..w * h)
                .map(|i| u32::from(area_rect.contains(i % w, i / w)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn small_segment_averages_maxima() {
        // 8x5 = 40 px segment with maxima at (10,10) and (12,12)
        let labels = single_segment(20, 20, Rect { x: 6, y: 9, w: 8, h: 5 });
        let mut d = GrayMap::zeros(20, 20).unwrap();
        d.set(10, 10, 5.0);
        d.set(12, 12, 5.0);
        for y in 9..14 {
            for x in 6..14 {
                if d.get(x, y) == 0.0 {
                    d.set(x, y, 1.0);
                }
            }
        }
        let r = extract_centers(&labels, &d, 64, 8.0).unwrap();
        assert_eq!(r.segments[0].area, 40);
        assert_eq!(r.segments[0].maxima, vec![(10, 10), (12, 12)]);
        assert_eq!(r.centers.len(), 1);
        assert_eq!((r.centers[0].x, r.centers[0].y), (11, 11));
        assert_eq!(r.centers[0].source, CenterSource::Traditional);
    }

    #[test]
    fn large_segment_keeps_distant_maxima() {
        let labels = single_segment(
            50,
            20,
            Rect {
                x: 5,
                y: 5,
                w: 40,
                h: 10,
            },
        );
        let mut d = GrayMap::zeros(50, 20).unwrap();
        for y in 5..15 {
            for x in 5..45 {
                d.set(x, y, 1.0);
            }
        }
        d.set(10, 10, 4.0);
        d.set(40, 10, 4.0);
        let r = extract_centers(&labels, &d, 64, 8.0).unwrap();
        let pts: Vec<_> = r.centers.iter().map(|c| (c.x, c.y)).collect();
        assert_eq!(pts, vec![(10, 10), (40, 10)]);
    }

    #[test]
    fn single_maximum_is_the_center() {
        let m = disk(30, 30, &[(15.0, 15.0, 9.0)]);
        let r = segment_mask(&m, &SegmentationConfig::default()).unwrap();
        assert_eq!(r.centers.len(), 1);
        assert_eq!((r.centers[0].x, r.centers[0].y), (15, 15));
        assert_eq!(
            r.segments[0].contour.bounding_rect,
            Rect {
                x: 6,
                y: 6,
                w: 19,
                h: 19
            }
        );
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let labels = LabelMap::new(3, 3, vec![0; 9]).unwrap();
        let d = GrayMap::zeros(4, 3).unwrap();
        assert!(matches!(
            extract_centers(&labels, &d, 64, 8.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn linkage_chains_points() {
        let c = single_linkage(&[(0, 0), (5, 0), (10, 0), (30, 0)], 8.0);
        assert_eq!(c, vec![vec![(0, 0), (5, 0), (10, 0)], vec![(30, 0)]]);
    }

    #[test]
    fn plateau_maxima() {
        let m = GrayMap::new(5, 1, vec![1., 3., 3., 1., 2.]).unwrap();
        let r = regional_maxima(&m, 0.0);
        assert_eq!(r, vec![vec![(1, 0), (2, 0)], vec![(4, 0)]]);
    }
}
