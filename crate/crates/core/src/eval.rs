//! Detection-rate evaluation against ground-truth crown boxes.
//!
//! A ground-truth tree counts as detected when an unused prediction lies
//! inside its box. Matching is greedy and one-to-one: predictions are taken
//! in input order and each claims the first unmatched box containing it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::TreeCenter;
use crate::wbf::{iou, Extent};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub id: u64,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl GroundTruthBox {
    pub fn extent(&self) -> Extent {
        Extent {
            x1: self.x1,
            y1: self.y1,
            x2: self.x2,
            y2: self.y2,
        }
    }

    /// Whether the pixel `(x, y)` of a `width x height` image falls inside
    /// the box (tested at the pixel center).
    pub fn contains_pixel(&self, x: usize, y: usize, width: usize, height: usize) -> bool {
        self.extent()
            .contains((x as f64 + 0.5) / width as f64, (y as f64 + 0.5) / height as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageReport {
    pub image_id: String,
    pub gt: usize,
    pub detected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total_gt: usize,
    pub detected: usize,
    pub rate: f64,
    pub per_image: Vec<ImageReport>,
}

impl EvalReport {
    /// Reduces per-image counts; errors when there is no ground truth at all.
    pub fn from_images(per_image: Vec<ImageReport>) -> Result<Self> {
        let total_gt: usize = per_image.iter().map(|r| r.gt).sum();
        let detected: usize = per_image.iter().map(|r| r.detected).sum();
        if total_gt == 0 {
            return Err(Error::NoGroundTruth);
        }
        Ok(Self {
            total_gt,
            detected,
            rate: detected as f64 / total_gt as f64,
            per_image,
        })
    }

    /// Rate in percent rounded to one decimal.
    pub fn rate_percent(&self) -> f64 {
        (self.rate * 1000.0).round() / 10.0
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>8} {:>8} {:>8}", "image", "gt", "detected", "rate")?;
        for r in &self.per_image {
            let rate = if r.gt == 0 {
                0.0
            } else {
                100.0 * r.detected as f64 / r.gt as f64
            };
            writeln!(f, "{:<24} {:>8} {:>8} {:>7.1}%", r.image_id, r.gt, r.detected, rate)?;
        }
        writeln!(
            f,
            "{:<24} {:>8} {:>8} {:>7.1}%",
            "total",
            self.total_gt,
            self.detected,
            self.rate_percent()
        )
    }
}

/// Point-in-box matching for one image. Returns, per ground-truth box, the
/// index of the prediction that claimed it.
pub fn match_points(
    points: &[(usize, usize)],
    gt: &[GroundTruthBox],
    width: usize,
    height: usize,
) -> Vec<Option<usize>> {
    let mut claimed = vec![None; gt.len()];
    for (pi, &(x, y)) in points.iter().enumerate() {
        if let Some(g) = (0..gt.len()).find(|&g| claimed[g].is_none() && gt[g].contains_pixel(x, y, width, height)) {
            claimed[g] = Some(pi);
        }
    }
    claimed
}

pub fn match_image(
    image_id: &str,
    predictions: &[TreeCenter],
    gt: &[GroundTruthBox],
    width: usize,
    height: usize,
) -> ImageReport {
    let points: Vec<(usize, usize)> = predictions.iter().map(|c| (c.x, c.y)).collect();
    let detected = match_points(&points, gt, width, height).iter().flatten().count();
    ImageReport {
        image_id: image_id.to_string(),
        gt: gt.len(),
        detected,
    }
}

/// Single-image detection rate of predicted centers.
pub fn match_and_rate(
    image_id: &str,
    predictions: &[TreeCenter],
    gt: &[GroundTruthBox],
    width: usize,
    height: usize,
) -> Result<EvalReport> {
    if gt.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    EvalReport::from_images(vec![match_image(image_id, predictions, gt, width, height)])
}

/// Box-mode matching: a ground-truth box is detected by the first unused
/// predicted box (input order) reaching `min_iou`.
pub fn match_boxes(image_id: &str, predictions: &[Extent], gt: &[GroundTruthBox], min_iou: f64) -> ImageReport {
    let mut used = vec![false; gt.len()];
    for p in predictions {
        if let Some(g) = (0..gt.len()).find(|&g| !used[g] && iou(p, &gt[g].extent()) >= min_iou) {
            used[g] = true;
        }
    }
    ImageReport {
        image_id: image_id.to_string(),
        gt: gt.len(),
        detected: used.iter().filter(|&&u| u).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::CenterSource;

    fn center(x: usize, y: usize) -> TreeCenter {
        TreeCenter {
            x,
            y,
            segment_label: 1,
            source: CenterSource::Traditional,
        }
    }

    fn gt(id: u64, x1: f64, y1: f64, x2: f64, y2: f64) -> GroundTruthBox {
        GroundTruthBox { id, x1, y1, x2, y2 }
    }

    #[test]
    fn zero_predictions_rate_zero() {
        let r = match_and_rate("a", &[], &[gt(0, 0.0, 0.0, 0.5, 0.5)], 100, 100).unwrap();
        assert_eq!(r.rate, 0.0);
        assert_eq!(r.detected, 0);
    }

    #[test]
    fn empty_ground_truth_is_error() {
        assert_eq!(
            match_and_rate("a", &[center(1, 1)], &[], 10, 10),
            Err(Error::NoGroundTruth)
        );
    }

    #[test]
    fn matching_is_one_to_one() {
        let boxes = [gt(0, 0.0, 0.0, 0.5, 0.5), gt(1, 0.6, 0.6, 0.9, 0.9)];
        let preds = [center(10, 10), center(12, 12), center(70, 70)];
        let r = match_and_rate("a", &preds, &boxes, 100, 100).unwrap();
        assert_eq!(r.detected, 2);
        let preds = [center(10, 10), center(12, 12)];
        let r = match_and_rate("a", &preds, &boxes, 100, 100).unwrap();
        assert_eq!(r.detected, 1);
        assert_eq!(r.rate, 0.5);
    }

    #[test]
    fn greedy_order_is_input_order() {
        // overlapping boxes: the first prediction claims box 0
        let boxes = [gt(0, 0.0, 0.0, 0.6, 0.6), gt(1, 0.4, 0.4, 1.0, 1.0)];
        let claims = match_points(&[(50, 50), (20, 20)], &boxes, 100, 100);
        assert_eq!(claims, vec![Some(0), None]);
        let claims = match_points(&[(20, 20), (50, 50)], &boxes, 100, 100);
        assert_eq!(claims, vec![Some(0), Some(1)]);
    }

    #[test]
    fn published_rates() {
        let dl = EvalReport::from_images(vec![ImageReport {
            image_id: "test".into(),
            gt: 13552,
            detected: 12353,
        }])
        .unwrap();
        assert_eq!(dl.rate_percent(), 91.2);
        let fused = EvalReport::from_images(vec![ImageReport {
            image_id: "test".into(),
            gt: 13552,
            detected: 13012,
        }])
        .unwrap();
        assert_eq!(fused.rate_percent(), 96.0);
    }

    #[test]
    fn box_mode() {
        let boxes = [gt(0, 0.1, 0.1, 0.3, 0.3)];
        let p = Extent {
            x1: 0.11,
            y1: 0.1,
            x2: 0.3,
            y2: 0.3,
        };
        assert_eq!(match_boxes("a", &[p], &boxes, 0.5).detected, 1);
        let far = Extent {
            x1: 0.2,
            y1: 0.2,
            x2: 0.4,
            y2: 0.4,
        };
        assert_eq!(match_boxes("a", &[far], &boxes, 0.5).detected, 0);
    }

    #[test]
    fn table_rendering() {
        let r = match_and_rate("img-1", &[center(10, 10)], &[gt(0, 0.0, 0.0, 0.5, 0.5)], 100, 100).unwrap();
        let text = r.to_string();
        assert!(text.contains("img-1"));
        assert!(text.contains("100.0%"));
    }
}
