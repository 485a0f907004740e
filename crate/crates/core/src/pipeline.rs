//! End-to-end stage composition shared by the CLI and the tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{gabor_response, green_dominance_map, normalize_unit, GaborBankSpec, GreenDominanceSpec};
use crate::integrate::{
    average_crown_size, filter_boxes, integrated_centers, refine_segmentation, validate_centers, AvgCrownSize,
    FeatureMaps, IntegratedCenter, IntegrationConfig, ReliableSet,
};
use crate::probmap::{candidate_mask, joint_probability_map, ProbMapConfig, ProbabilityMap};
use crate::raster::{BinaryMap, GrayMap, Rect, RgbRaster};
use crate::segmentation::{segment_mask, SegmentationConfig, SegmentationResult};
use crate::wbf::FusedBox;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraditionalConfig {
    pub green: GreenDominanceSpec,
    pub gabor: GaborBankSpec,
    pub probmap: ProbMapConfig,
    pub segmentation: SegmentationConfig,
}

impl TraditionalConfig {
    pub fn validate(&self) -> Result<()> {
        self.green.validate()?;
        self.gabor.validate()?;
        self.probmap.validate()?;
        self.segmentation.validate()
    }
}

/// Every intermediate product of the traditional pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct TraditionalOutput {
    pub c: BinaryMap,
    pub g: GrayMap,
    pub j: ProbabilityMap,
    pub mask: BinaryMap,
    pub seg: SegmentationResult,
}

impl TraditionalOutput {
    pub fn dims(&self) -> (usize, usize) {
        self.c.dims()
    }

    pub fn features(&self) -> FeatureMaps {
        let (w1, w2) = self.j.weights_used();
        FeatureMaps {
            c: self.c.clone(),
            g: self.g.clone(),
            w1,
            w2,
        }
    }
}

/// Row-major tiles of at most `tile x tile` pixels covering the image.
pub fn tile_rects(width: usize, height: usize, tile: usize) -> Vec<Rect> {
    let tile = tile.max(1);
    let mut out = Vec::new();
    for y in (0..height).step_by(tile) {
        for x in (0..width).step_by(tile) {
            out.push(Rect {
                x,
                y,
                w: tile.min(width - x),
                h: tile.min(height - y),
            });
        }
    }
    out
}

/// Pastes per-tile raw Gabor responses into one map.
pub fn stitch(width: usize, height: usize, tiles: &[(Rect, GrayMap)]) -> Result<GrayMap> {
    let mut out = GrayMap::zeros(width, height)?;
    for (rect, map) in tiles {
        if map.dims() != (rect.w, rect.h) {
            return Err(Error::DimensionMismatch {
                expected: (rect.w, rect.h),
                found: map.dims(),
            });
        }
        for y in 0..rect.h {
            for x in 0..rect.w {
                out.set(rect.x + x, rect.y + y, map.get(x, y));
            }
        }
    }
    Ok(out)
}

/// Runs the traditional chain from a precomputed texture map `G`.
pub fn detect_with_texture(image: &RgbRaster, g: GrayMap, cfg: &TraditionalConfig) -> Result<TraditionalOutput> {
    cfg.validate()?;
    let c = green_dominance_map(image, &cfg.green)?;
    let j = joint_probability_map(&c, &g, cfg.probmap.w1, cfg.probmap.w2)?;
    let mask = candidate_mask(&j, cfg.probmap.open_radius, cfg.probmap.open_iterations)?;
    let seg = segment_mask(&mask, &cfg.segmentation)?;
    Ok(TraditionalOutput { c, g, j, mask, seg })
}

/// Color + texture features, probability map, mask, watershed and centers.
pub fn detect_traditional(image: &RgbRaster, cfg: &TraditionalConfig) -> Result<TraditionalOutput> {
    cfg.validate()?;
    let full = Rect {
        x: 0,
        y: 0,
        w: image.width(),
        h: image.height(),
    };
    let g = normalize_unit(&gabor_response(image, &cfg.gabor, full)?);
    detect_with_texture(image, g, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationOutput {
    pub filtered: Vec<FusedBox>,
    pub avg: AvgCrownSize,
    /// Whether `avg` came from the configured fallback size.
    pub avg_is_fallback: bool,
    pub reliable: ReliableSet,
    pub refined: SegmentationResult,
    pub dropped_segments: usize,
    pub centers: Vec<IntegratedCenter>,
}

/// Merges fused detector boxes with a traditional result.
pub fn integrate(
    fused: &[FusedBox],
    trad: &TraditionalOutput,
    seg_cfg: &SegmentationConfig,
    cfg: &IntegrationConfig,
) -> Result<IntegrationOutput> {
    cfg.validate()?;
    let (width, height) = trad.dims();
    let filtered = filter_boxes(fused, cfg.tau_a);
    let (avg, avg_is_fallback) = match average_crown_size(&filtered, &trad.mask, cfg.expansion) {
        Ok(a) => (a, false),
        Err(Error::NoCrownStatistics) => (AvgCrownSize::fallback(cfg.fallback_crown_size), true),
        Err(e) => return Err(e),
    };
    let reliable = validate_centers(&trad.seg.centers, &filtered, &avg, &trad.features(), cfg)?;
    let refined = refine_segmentation(
        &reliable,
        &trad.seg,
        cfg.refine_open_radius,
        seg_cfg.th_area,
        seg_cfg.th_dist,
    )?;
    let centers = integrated_centers(&reliable, &filtered, cfg.expansion, width, height);
    Ok(IntegrationOutput {
        filtered,
        avg,
        avg_is_fallback,
        reliable,
        refined: refined.result,
        dropped_segments: refined.dropped_segments,
        centers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::gabor_feature_map;
    use crate::synth::{render_scene, CrownSpec, SceneSpec};

    fn scene() -> RgbRaster {
        let spec = SceneSpec {
            width: 256,
            height: 256,
            crowns: vec![
                CrownSpec {
                    cx: 60.0,
                    cy: 60.0,
                    radius: 12.0,
                    green: 200,
                },
                CrownSpec {
                    cx: 180.0,
                    cy: 90.0,
                    radius: 9.0,
                    green: 180,
                },
                CrownSpec {
                    cx: 120.0,
                    cy: 190.0,
                    radius: 14.0,
                    green: 220,
                },
            ],
            seed: 3,
            ..Default::default()
        };
        render_scene(&spec).unwrap().0
    }

    #[test]
    fn tiles_cover_image_once() {
        let tiles = tile_rects(300, 170, 128);
        assert_eq!(tiles.len(), 6);
        let area: usize = tiles.iter().map(|r| r.w * r.h).sum();
        assert_eq!(area, 300 * 170);
        assert_eq!(
            tiles[2],
            Rect {
                x: 256,
                y: 0,
                w: 44,
                h: 128
            }
        );
    }

    #[test]
    fn tiled_texture_equals_whole() {
        let img = scene();
        let spec = GaborBankSpec::default();
        let tiles: Vec<(Rect, GrayMap)> = tile_rects(256, 256, 100)
            .into_iter()
            .map(|r| (r, gabor_response(&img, &spec, r).unwrap()))
            .collect();
        let tiled = normalize_unit(&stitch(256, 256, &tiles).unwrap());
        let whole = gabor_feature_map(&img, &spec).unwrap();
        let worst = tiled
            .values()
            .iter()
            .zip(whole.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn three_crowns_three_centers() {
        let out = detect_traditional(&scene(), &TraditionalConfig::default()).unwrap();
        let mut got: Vec<(usize, usize)> = out.seg.centers.iter().map(|c| (c.x, c.y)).collect();
        got.sort();
        assert_eq!(got.len(), 3, "{got:?}");
        for (truth, c) in [(60, 60), (120, 190), (180, 90)].iter().zip(&got) {
            let d = ((truth.0 as f64 - c.0 as f64).powi(2) + (truth.1 as f64 - c.1 as f64).powi(2)).sqrt();
            assert!(d <= 4.0, "{truth:?} vs {c:?}");
        }
    }
}
