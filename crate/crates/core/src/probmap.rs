//! Joint crown probability map and the thresholded candidate mask.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::raster::{morphological_open, otsu_threshold, BinaryMap, GrayMap};

/// Per-pixel crown likelihood `J = w1·C + w2·G`, always in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    map: GrayMap,
    weights: (f64, f64),
}

impl ProbabilityMap {
    pub fn width(&self) -> usize {
        self.map.width()
    }

    pub fn height(&self) -> usize {
        self.map.height()
    }

    pub fn values(&self) -> &[f64] {
        self.map.values()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.map.get(x, y)
    }

    pub fn weights_used(&self) -> (f64, f64) {
        self.weights
    }

    /// Scales to `0..=255` with round-half-up.
    pub fn to_u8_gray(&self) -> GrayMap {
        let values = self
            .map
            .values()
            .iter()
            .map(|&v| (v * 255.0 + 0.5).floor().clamp(0.0, 255.0))
            .collect();
        GrayMap::new(self.width(), self.height(), values).expect("same dims")
    }
}

/// Weights and opening parameters for the candidate mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbMapConfig {
    pub w1: f64,
    pub w2: f64,
    pub open_radius: usize,
    pub open_iterations: usize,
}

impl Default for ProbMapConfig {
    fn default() -> Self {
        Self {
            w1: 0.5,
            w2: 0.5,
            open_radius: 1,
            open_iterations: 2,
        }
    }
}

impl ProbMapConfig {
    pub fn validate(&self) -> Result<()> {
        check_weights(self.w1, self.w2)?;
        if self.open_radius == 0 {
            return Err(invalid("open_radius", "must be at least 1"));
        }
        if self.open_iterations == 0 {
            return Err(invalid("open_iterations", "must be at least 1"));
        }
        Ok(())
    }
}

fn check_weights(w1: f64, w2: f64) -> Result<()> {
    if !(w1 >= 0.0 && w2 >= 0.0) {
        return Err(invalid("w1/w2", "weights must be non-negative"));
    }
    if (w1 + w2 - 1.0).abs() > 1e-9 {
        return Err(invalid("w1/w2", format!("weights sum to {}, expected 1", w1 + w2)));
    }
    Ok(())
}

/// Convex combination of the color mask `c` and the unit texture map `g`.
pub fn joint_probability_map(c: &BinaryMap, g: &GrayMap, w1: f64, w2: f64) -> Result<ProbabilityMap> {
    if c.dims() != g.dims() {
        return Err(Error::DimensionMismatch {
            expected: c.dims(),
            found: g.dims(),
        });
    }
    check_weights(w1, w2)?;
    let values = c
        .values()
        .iter()
        .zip(g.values())
        .map(|(&cv, &gv)| (w1 * f64::from(cv) + w2 * gv.clamp(0.0, 1.0)).clamp(0.0, 1.0))
        .collect();
    Ok(ProbabilityMap {
        map: GrayMap::new(c.width(), c.height(), values)?,
        weights: (w1, w2),
    })
}

/// Otsu split of `J` without the opening. Pixels at or above the Otsu level
/// (the lowest level of the upper class) are foreground.
pub fn threshold_probability(j: &ProbabilityMap) -> Result<BinaryMap> {
    let gray = j.to_u8_gray();
    let t = f64::from(otsu_threshold(&gray)?);
    BinaryMap::from_fn(j.width(), j.height(), |x, y| gray.get(x, y) >= t)
}

/// Crown candidates: Otsu threshold on the 8-bit `J`, then a disk opening.
pub fn candidate_mask(j: &ProbabilityMap, open_radius: usize, open_iterations: usize) -> Result<BinaryMap> {
    let mask = threshold_probability(j)?;
    morphological_open(&mask, open_radius, open_iterations)
}
