//! Weighted Boxes Fusion of an ensemble's detections.
//!
//! Boxes are pre-filtered by score, clustered greedily in descending score
//! order against each cluster's running fused extent, averaged with
//! confidence weights, and finally rescaled by `min(T, N) / N` where `T` is
//! the cluster size and `N` the number of models.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Box corners in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Extent {
    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x <= self.x2 && y >= self.y1 && y <= self.y2
    }

    /// Grows the box by `frac` of its width/height on every side.
    pub fn expanded(&self, frac: f64) -> Extent {
        let dx = (self.x2 - self.x1) * frac;
        let dy = (self.y2 - self.y1) * frac;
        Extent {
            x1: self.x1 - dx,
            y1: self.y1 - dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &Extent, b: &Extent) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// One detector output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub model_id: usize,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
}

impl DetectionBox {
    pub fn extent(&self) -> Extent {
        Extent {
            x1: self.x1,
            y1: self.y1,
            x2: self.x2,
            y2: self.y2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_extent(&self.extent())?;
        if !(0.0..=1.0).contains(&self.score) {
            return Err(invalid("score", format!("{} outside [0, 1]", self.score)));
        }
        Ok(())
    }
}

fn validate_extent(e: &Extent) -> Result<()> {
    let unit = 0.0..=1.0;
    if !(unit.contains(&e.x1) && unit.contains(&e.x2) && unit.contains(&e.y1) && unit.contains(&e.y2)) {
        return Err(invalid("box", format!("{e:?} outside the unit square")));
    }
    if !(e.x1 < e.x2 && e.y1 < e.y2) {
        return Err(invalid("box", format!("{e:?} has non-positive size")));
    }
    Ok(())
}

/// A fused cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
    /// `T`: number of member boxes (or distinct models, see [`ClusterCount`]).
    pub cluster_size: usize,
    /// `N`: models in the ensemble.
    pub model_count: usize,
}

impl FusedBox {
    pub fn extent(&self) -> Extent {
        Extent {
            x1: self.x1,
            y1: self.y1,
            x2: self.x2,
            y2: self.y2,
        }
    }
}

/// How a cluster's confidence is formed before rescaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    #[default]
    Max,
    Average,
}

/// What `T` counts in the rescaling factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterCount {
    #[default]
    Boxes,
    Models,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WbfConfig {
    pub prefilter_score: f64,
    pub iou_cluster: f64,
    /// Per-model multipliers; models without an entry weigh 1.
    pub model_weights: Vec<f64>,
    pub score_mode: ScoreMode,
    pub cluster_count: ClusterCount,
    /// Ensemble size; when unset callers infer it from the largest model id.
    pub n_models: Option<usize>,
}

impl Default for WbfConfig {
    fn default() -> Self {
        Self {
            prefilter_score: 0.05,
            iou_cluster: 0.55,
            model_weights: Vec::new(),
            score_mode: ScoreMode::Max,
            cluster_count: ClusterCount::Boxes,
            n_models: None,
        }
    }
}

impl WbfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.prefilter_score) {
            return Err(invalid("prefilter_score", "must lie in [0, 1)"));
        }
        if !(self.iou_cluster > 0.0 && self.iou_cluster < 1.0) {
            return Err(invalid("iou_cluster", "must lie in (0, 1)"));
        }
        if self.model_weights.iter().any(|&w| !(w > 0.0)) {
            return Err(invalid("model_weights", "weights must be positive"));
        }
        if self.n_models == Some(0) {
            return Err(invalid("n_models", "must be at least 1"));
        }
        Ok(())
    }

    pub fn model_weight(&self, model_id: usize) -> f64 {
        self.model_weights.get(model_id).copied().unwrap_or(1.0)
    }

    /// Configured ensemble size, else one more than the largest model id.
    pub fn resolve_models(&self, detections: &[DetectionBox]) -> usize {
        self.n_models
            .unwrap_or_else(|| detections.iter().map(|d| d.model_id + 1).max().unwrap_or(1))
    }
}

/// Processing order: score descending, then model id, then coordinates,
/// then input position. Identical boxes are interchangeable, so permuting
/// the input never changes the result.
pub fn fusion_order(detections: &[DetectionBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&detections[a], &detections[b]);
        db.score
            .total_cmp(&da.score)
            .then(da.model_id.cmp(&db.model_id))
            .then(da.x1.total_cmp(&db.x1))
            .then(da.y1.total_cmp(&db.y1))
            .then(da.x2.total_cmp(&db.x2))
            .then(da.y2.total_cmp(&db.y2))
            .then(a.cmp(&b))
    });
    order
}

struct Cluster {
    members: Vec<usize>,
    weight: f64,
    sums: [f64; 4],
}

impl Cluster {
    fn extent(&self) -> Extent {
        Extent {
            x1: self.sums[0] / self.weight,
            y1: self.sums[1] / self.weight,
            x2: self.sums[2] / self.weight,
            y2: self.sums[3] / self.weight,
        }
    }

    fn push(&mut self, i: usize, d: &DetectionBox, w: f64) {
        self.members.push(i);
        self.weight += w;
        for (s, v) in self.sums.iter_mut().zip([d.x1, d.y1, d.x2, d.y2]) {
            *s += w * v;
        }
    }
}

/// Fuses one image's detections from `n_models` models.
pub fn fuse(detections: &[DetectionBox], n_models: usize, config: &WbfConfig) -> Result<Vec<FusedBox>> {
    config.validate()?;
    if n_models == 0 {
        return Err(invalid("n_models", "must be at least 1"));
    }
    for d in detections {
        if d.model_id >= n_models {
            return Err(Error::InvalidModelId {
                model_id: d.model_id,
                n_models,
            });
        }
        d.validate()?;
    }

    let kept: Vec<DetectionBox> = detections
        .iter()
        .copied()
        .filter(|d| d.score >= config.prefilter_score)
        .collect();

    let mut clusters: Vec<Cluster> = Vec::new();
    for i in fusion_order(&kept) {
        let d = &kept[i];
        let w = d.score * config.model_weight(d.model_id);
        match clusters
            .iter_mut()
            .find(|c| iou(&c.extent(), &d.extent()) >= config.iou_cluster)
        {
            Some(c) => c.push(i, d, w),
            None => {
                let mut c = Cluster {
                    members: Vec::new(),
                    weight: 0.0,
                    sums: [0.0; 4],
                };
                c.push(i, d, w);
                clusters.push(c);
            }
        }
    }

    let mut fused: Vec<FusedBox> = clusters
        .iter()
        .map(|c| {
            let scores = c.members.iter().map(|&i| kept[i].score);
            let raw = match config.score_mode {
                ScoreMode::Max => scores.fold(0.0, f64::max),
                ScoreMode::Average => scores.sum::<f64>() / c.members.len() as f64,
            };
            let t = match config.cluster_count {
                ClusterCount::Boxes => c.members.len(),
                ClusterCount::Models => {
                    let mut ids: Vec<usize> = c.members.iter().map(|&i| kept[i].model_id).collect();
                    ids.sort_unstable();
                    ids.dedup();
                    ids.len()
                }
            };
            let e = c.extent();
            FusedBox {
                x1: e.x1,
                y1: e.y1,
                x2: e.x2,
                y2: e.y2,
                score: rescale(raw, t, n_models),
                cluster_size: t,
                model_count: n_models,
            }
        })
        .collect();
    fused.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
    Ok(fused)
}

/// `c · min(T, N) / N`.
pub fn rescale(score: f64, cluster_size: usize, n_models: usize) -> f64 {
    score * cluster_size.min(n_models) as f64 / n_models as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(model_id: usize, x1: f64, y1: f64, x2: f64, y2: f64, score: f64) -> DetectionBox {
        DetectionBox {
            model_id,
            x1,
            y1,
            x2,
            y2,
            score,
        }
    }

    fn e(x1: f64, y1: f64, x2: f64, y2: f64) -> Extent {
        Extent { x1, y1, x2, y2 }
    }

    #[test]
    fn iou_examples() {
        let a = e(0.1, 0.1, 0.3, 0.3);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &e(0.5, 0.5, 0.6, 0.6)), 0.0);
        assert!((iou(&a, &e(0.2, 0.2, 0.4, 0.4)) - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn single_box_is_identity() {
        let out = fuse(&[b(0, 0.1, 0.2, 0.3, 0.4, 0.9)], 1, &WbfConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].extent(), e(0.1, 0.2, 0.3, 0.4));
        assert_eq!(out[0].score, 0.9);
        assert_eq!(out[0].cluster_size, 1);
    }

    #[test]
    fn two_box_cluster_weighted_mean() {
        let dets = [b(0, 0.10, 0.10, 0.30, 0.30, 0.8), b(1, 0.12, 0.12, 0.32, 0.32, 0.4)];
        let out = fuse(&dets, 2, &WbfConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        let f = out[0];
        assert!((f.x1 - (0.8 * 0.10 + 0.4 * 0.12) / 1.2).abs() < 1e-12);
        assert!((f.x1 - 0.1067).abs() < 1e-4);
        assert!((f.y1 - 0.1067).abs() < 1e-4);
        assert!((f.x2 - 0.3067).abs() < 1e-4);
        assert!((f.y2 - 0.3067).abs() < 1e-4);
        assert_eq!(f.score, 0.8);
        assert_eq!((f.cluster_size, f.model_count), (2, 2));
    }

    #[test]
    fn lone_box_in_three_model_ensemble() {
        let out = fuse(&[b(2, 0.5, 0.5, 0.6, 0.6, 0.9)], 3, &WbfConfig::default()).unwrap();
        assert!((out[0].score - 0.3).abs() < 1e-12);
    }

    #[test]
    fn empty_input_and_bad_model() {
        assert!(fuse(&[], 2, &WbfConfig::default()).unwrap().is_empty());
        assert_eq!(
            fuse(&[b(3, 0.1, 0.1, 0.2, 0.2, 0.5)], 2, &WbfConfig::default()),
            Err(Error::InvalidModelId {
                model_id: 3,
                n_models: 2
            })
        );
        assert!(fuse(&[b(0, 0.3, 0.1, 0.2, 0.2, 0.5)], 1, &WbfConfig::default()).is_err());
    }

    #[test]
    fn prefilter_drops_low_scores() {
        let dets = [b(0, 0.1, 0.1, 0.2, 0.2, 0.04), b(0, 0.5, 0.5, 0.6, 0.6, 0.05)];
        let out = fuse(&dets, 1, &WbfConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].x1, 0.5);
    }

    #[test]
    fn average_mode_and_model_count() {
        let dets = [
            b(0, 0.1, 0.1, 0.3, 0.3, 0.9),
            b(0, 0.1, 0.1, 0.3, 0.31, 0.5),
            b(1, 0.1, 0.1, 0.31, 0.3, 0.7),
        ];
        let cfg = WbfConfig {
            score_mode: ScoreMode::Average,
            cluster_count: ClusterCount::Models,
            ..Default::default()
        };
        let out = fuse(&dets, 3, &cfg).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].cluster_size, 2);
        assert!((out[0].score - 0.7 * 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn output_sorted_by_score() {
        let dets = [
            b(0, 0.1, 0.1, 0.2, 0.2, 0.6),
            b(0, 0.5, 0.5, 0.6, 0.6, 0.9),
            b(1, 0.5, 0.5, 0.6, 0.6, 0.8),
        ];
        let out = fuse(&dets, 2, &WbfConfig::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out[0].score >= out[1].score);
        assert_eq!(out[0].cluster_size, 2);
    }

    #[test]
    fn model_weights_shift_coordinates() {
        let dets = [b(0, 0.10, 0.10, 0.30, 0.30, 0.5), b(1, 0.12, 0.12, 0.32, 0.32, 0.5)];
        let cfg = WbfConfig {
            model_weights: vec![1.0, 3.0],
            ..Default::default()
        };
        let out = fuse(&dets, 2, &cfg).unwrap();
        assert!((out[0].x1 - (0.10 + 3.0 * 0.12) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let cfg = WbfConfig {
            iou_cluster: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = WbfConfig {
            model_weights: vec![0.0],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert_eq!(WbfConfig::default().resolve_models(&[b(3, 0.1, 0.1, 0.2, 0.2, 0.5)]), 4);
    }
}
