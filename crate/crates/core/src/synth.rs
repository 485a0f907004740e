//! Synthetic forest scenes with exactly known crowns, plus simulated
//! ensemble detections for them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::eval::GroundTruthBox;
use crate::raster::RgbRaster;
use crate::wbf::DetectionBox;

/// One rendered crown; `green` is the peak green intensity at the center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrownSpec {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub green: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub crowns: Vec<CrownSpec>,
    pub background: [u8; 3],
    pub clutter: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            crowns: Vec::new(),
            background: [150, 118, 84],
            clutter: 0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(invalid("width/height", "must be at least 1"));
        }
        for (index, c) in self.crowns.iter().enumerate() {
            if c.radius < 2.0 {
                return Err(invalid("radius", format!("crown {index} radius {} < 2", c.radius)));
            }
            let inside = c.cx - c.radius >= 0.0
                && c.cy - c.radius >= 0.0
                && c.cx + c.radius <= (self.width - 1) as f64
                && c.cy + c.radius <= (self.height - 1) as f64;
            if !inside {
                return Err(Error::CrownOutOfBounds {
                    index,
                    cx: c.cx,
                    cy: c.cy,
                    radius: c.radius,
                });
            }
        }
        Ok(())
    }
}

/// Random crown placement with a guaranteed center separation of
/// `2 * radius_max + min_gap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutSpec {
    pub width: usize,
    pub height: usize,
    pub count: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub min_gap: f64,
}

impl Default for LayoutSpec {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            count: 20,
            radius_min: 5.0,
            radius_max: 15.0,
            min_gap: 4.0,
        }
    }
}

/// Places `layout.count` crowns at integer centers by rejection sampling.
pub fn random_layout(layout: &LayoutSpec, seed: u64) -> Result<Vec<CrownSpec>> {
    if !(layout.radius_min >= 2.0 && layout.radius_max >= layout.radius_min) {
        return Err(invalid("radius_min/radius_max", "need 2 <= radius_min <= radius_max"));
    }
    let margin = layout.radius_max.ceil() as usize + 1;
    if layout.width <= 2 * margin || layout.height <= 2 * margin {
        return Err(invalid("width/height", "scene too small for the crown radius"));
    }
    let sep = 2.0 * layout.radius_max + layout.min_gap;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut crowns: Vec<CrownSpec> = Vec::with_capacity(layout.count);
    let mut attempts = 0;
    while crowns.len() < layout.count {
        attempts += 1;
        if attempts > 200_000 {
            return Err(invalid("count", format!("could not place {} crowns", layout.count)));
        }
        let cx = rng.gen_range(margin..layout.width - margin) as f64;
        let cy = rng.gen_range(margin..layout.height - margin) as f64;
        if crowns.iter().any(|c| (c.cx - cx).hypot(c.cy - cy) < sep) {
            continue;
        }
        let radius = rng.gen_range(layout.radius_min..=layout.radius_max);
        let green = rng.gen_range(150..=225);
        crowns.push(CrownSpec { cx, cy, radius, green });
    }
    Ok(crowns)
}

/// Tight normalized box of the pixels covered by a crown disk.
pub fn crown_box(id: u64, c: &CrownSpec, width: usize, height: usize) -> GroundTruthBox {
    let (x0, x1, y0, y1) = crown_pixel_bounds(c);
    GroundTruthBox {
        id,
        x1: x0 as f64 / width as f64,
        y1: y0 as f64 / height as f64,
        x2: (x1 + 1) as f64 / width as f64,
        y2: (y1 + 1) as f64 / height as f64,
    }
}

fn crown_pixel_bounds(c: &CrownSpec) -> (usize, usize, usize, usize) {
    let r2 = c.radius * c.radius;
    let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
    let lo_x = (c.cx - c.radius).floor().max(0.0) as usize;
    let lo_y = (c.cy - c.radius).floor().max(0.0) as usize;
    for y in lo_y..=(c.cy + c.radius).ceil() as usize {
        for x in lo_x..=(c.cx + c.radius).ceil() as usize {
            if (x as f64 - c.cx).powi(2) + (y as f64 - c.cy).powi(2) <= r2 {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
    }
    (x0, x1, y0, y1)
}

/// Renders green, noisy disks with a radial falloff over a flat background
/// and scatters `clutter` green speckles of at most 2x2 pixels.
pub fn render_scene(spec: &SceneSpec) -> Result<(RgbRaster, Vec<GroundTruthBox>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut img = RgbRaster::filled(spec.width, spec.height, spec.background)?;

    for c in &spec.crowns {
        let (x0, x1, y0, y1) = crown_pixel_bounds(c);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = ((x as f64 - c.cx).powi(2) + (y as f64 - c.cy).powi(2)) / (c.radius * c.radius);
                if d2 > 1.0 {
                    continue;
                }
                let falloff = 1.0 - 0.4 * d2;
                let noise: f64 = rng.gen_range(-30.0..30.0);
                let g = (f64::from(c.green) * falloff + noise).clamp(60.0, 255.0);
                let r = g * rng.gen_range(0.25..0.45);
                let b = g * rng.gen_range(0.15..0.35);
                img.set(x, y, [r as u8, g as u8, b as u8]);
            }
        }
    }
    for _ in 0..spec.clutter {
        let x = rng.gen_range(0..spec.width);
        let y = rng.gen_range(0..spec.height);
        let size = rng.gen_range(1..=2);
        let g = rng.gen_range(120..200u8);
        for yy in y..(y + size).min(spec.height) {
            for xx in x..(x + size).min(spec.width) {
                img.set(xx, yy, [g / 3, g, g / 4]);
            }
        }
    }
    let gt = spec
        .crowns
        .iter()
        .enumerate()
        .map(|(i, c)| crown_box(i as u64, c, spec.width, spec.height))
        .collect();
    Ok((img, gt))
}

/// Ensemble-output simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionSimSpec {
    pub n_models: usize,
    pub drop_rate: f64,
    pub jitter: f64,
    pub score_min: f64,
    pub score_max: f64,
}

impl Default for DetectionSimSpec {
    fn default() -> Self {
        Self {
            n_models: 4,
            drop_rate: 0.15,
            jitter: 0.05,
            score_min: 0.7,
            score_max: 1.0,
        }
    }
}

/// Simulated detections. For every model and then every box the generator
/// draws, in this order: one uniform for the drop decision, four uniforms in
/// `[-1, 1)` for the corner jitter (x1, y1, x2, y2), and one score.
/// Dropped boxes consume only the first draw.
pub fn simulate_detections(
    gt: &[GroundTruthBox],
    n_models: usize,
    drop_rate: f64,
    jitter: f64,
    seed: u64,
) -> Result<Vec<DetectionBox>> {
    simulate_with(
        gt,
        &DetectionSimSpec {
            n_models,
            drop_rate,
            jitter,
            ..Default::default()
        },
        seed,
    )
}

pub fn simulate_with(gt: &[GroundTruthBox], sim: &DetectionSimSpec, seed: u64) -> Result<Vec<DetectionBox>> {
    if sim.n_models == 0 {
        return Err(invalid("n_models", "must be at least 1"));
    }
    if !(0.0..1.0).contains(&sim.drop_rate) {
        return Err(invalid("drop_rate", "must lie in [0, 1)"));
    }
    if !(0.0..0.5).contains(&sim.jitter) {
        return Err(invalid("jitter", "must lie in [0, 0.5)"));
    }
    if !(0.0 <= sim.score_min && sim.score_min <= sim.score_max && sim.score_max <= 1.0) {
        return Err(invalid("score_min/score_max", "need 0 <= min <= max <= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for model_id in 0..sim.n_models {
        for g in gt {
            if rng.gen::<f64>() < sim.drop_rate {
                continue;
            }
            let (w, h) = (g.x2 - g.x1, g.y2 - g.y1);
            let mut j = [0.0; 4];
            for v in &mut j {
                *v = rng.gen_range(-1.0..1.0) * sim.jitter;
            }
            let x1 = (g.x1 + j[0] * w).clamp(0.0, 1.0);
            let y1 = (g.y1 + j[1] * h).clamp(0.0, 1.0);
            let x2 = (g.x2 + j[2] * w).clamp(0.0, 1.0);
            let y2 = (g.y2 + j[3] * h).clamp(0.0, 1.0);
            let score = if sim.score_max > sim.score_min {
                rng.gen_range(sim.score_min..sim.score_max)
            } else {
                sim.score_min
            };
            out.push(DetectionBox {
                model_id,
                x1,
                y1,
                x2,
                y2,
                score,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn five_crowns() -> SceneSpec {
        SceneSpec {
            width: 200,
            height: 200,
            crowns: (0..5)
                .map(|i| CrownSpec {
                    cx: 20.0 + 38.0 * i as f64,
                    cy: 100.0,
                    radius: 10.0,
                    green: 200,
                })
                .collect(),
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn five_crowns_five_boxes() {
        let (img, gt) = render_scene(&five_crowns()).unwrap();
        assert_eq!(gt.len(), 5);
        assert_eq!((img.width(), img.height()), (200, 200));
        let b = gt[0];
        assert!((b.x1 - 10.0 / 200.0).abs() < 1e-12);
        assert!((b.x2 - 31.0 / 200.0).abs() < 1e-12);
        let p = img.get(20, 100);
        assert!(p[1] > p[0] && p[1] > p[2]);
    }

    #[test]
    fn empty_scene_is_plain() {
        let spec = SceneSpec {
            width: 32,
            height: 16,
            ..Default::default()
        };
        let (img, gt) = render_scene(&spec).unwrap();
        assert!(gt.is_empty());
        assert_eq!(img, RgbRaster::filled(32, 16, spec.background).unwrap());
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut spec = five_crowns();
        spec.clutter = 30;
        assert_eq!(render_scene(&spec).unwrap(), render_scene(&spec).unwrap());
    }

    #[test]
    fn crown_outside_is_error() {
        let spec = SceneSpec {
            width: 50,
            height: 50,
            crowns: vec![CrownSpec {
                cx: 3.0,
                cy: 25.0,
                radius: 5.0,
                green: 200,
            }],
            ..Default::default()
        };
        assert!(matches!(
            render_scene(&spec),
            Err(Error::CrownOutOfBounds { index: 0, .. })
        ));
    }

    #[test]
    fn no_drop_emits_everything() {
        let (_, gt) = render_scene(&five_crowns()).unwrap();
        let d = simulate_detections(&gt, 3, 0.0, 0.1, 1).unwrap();
        assert_eq!(d.len(), 15);
        assert!(d.iter().all(|b| (0.7..1.0).contains(&b.score)));
    }

    #[test]
    fn zero_jitter_keeps_coordinates() {
        let (_, gt) = render_scene(&five_crowns()).unwrap();
        let d = simulate_detections(&gt, 1, 0.0, 0.0, 9).unwrap();
        for (b, g) in d.iter().zip(&gt) {
            assert_eq!((b.x1, b.y1, b.x2, b.y2), (g.x1, g.y1, g.x2, g.y2));
        }
    }

    #[test]
    fn drop_count_follows_seeded_draws() {
        let gt: Vec<GroundTruthBox> = (0..10)
            .map(|i| GroundTruthBox {
                id: i,
                x1: 0.05 * i as f64,
                y1: 0.1,
                x2: 0.05 * i as f64 + 0.04,
                y2: 0.2,
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut expected = 0;
        for _ in 0..10 {
            if rng.gen::<f64>() < 0.2 {
                continue;
            }
            expected += 1;
            for _ in 0..4 {
                let _: f64 = rng.gen_range(-1.0..1.0);
            }
            let _: f64 = rng.gen_range(0.7..1.0);
        }
        let d = simulate_detections(&gt, 1, 0.2, 0.05, 7).unwrap();
        assert_eq!(d.len(), expected);
        assert_eq!(d, simulate_detections(&gt, 1, 0.2, 0.05, 7).unwrap());
    }

    #[test]
    fn layout_respects_separation() {
        let layout = LayoutSpec {
            count: 50,
            ..Default::default()
        };
        let crowns = random_layout(&layout, 42).unwrap();
        assert_eq!(crowns.len(), 50);
        for (i, a) in crowns.iter().enumerate() {
            for b in &crowns[i + 1..] {
                assert!((a.cx - b.cx).hypot(a.cy - b.cy) >= 34.0);
            }
        }
        let spec = SceneSpec {
            crowns,
            ..Default::default()
        };
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn bad_simulation_params() {
        assert!(simulate_detections(&[], 1, 1.0, 0.0, 0).is_err());
        assert!(simulate_detections(&[], 1, 0.0, 0.5, 0).is_err());
        assert!(simulate_detections(&[], 0, 0.0, 0.0, 0).is_err());
    }
}
