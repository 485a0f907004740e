//! Pixel grids and the low-level image primitives used by every later stage.
//!
//! All grids are row-major with the origin at the top-left corner; `x` is the
//! column index and `y` the row index. Neighborhoods are 8-connected
//! throughout.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Neighbor offsets ordered counterclockwise (on screen) starting east.
const RING: [(i64, i64); 8] = [(1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1)];

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(invalid("dimensions", "width and height must be at least 1"));
    }
    if width * height != len {
        return Err(Error::DimensionMismatch {
            expected: (width, height),
            found: (len, 1),
        });
    }
    Ok(())
}

/// Axis-aligned pixel rectangle, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

/// Three-channel 8-bit image stored as separate R, G and B planes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbRaster {
    width: usize,
    height: usize,
    planes: [Vec<u8>; 3],
}

impl RgbRaster {
    pub fn new(width: usize, height: usize, planes: [Vec<u8>; 3]) -> Result<Self> {
        for p in &planes {
            check_dims(width, height, p.len())?;
        }
        Ok(Self { width, height, planes })
    }

    /// Builds a raster from interleaved `RGBRGB...` bytes.
    pub fn from_interleaved(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        check_dims(width, height, data.len() / 3)?;
        if !data.len().is_multiple_of(3) {
            return Err(invalid("data", "interleaved length is not a multiple of 3"));
        }
        let mut planes = [
            Vec::with_capacity(width * height),
            Vec::with_capacity(width * height),
            Vec::with_capacity(width * height),
        ];
        for px in data.chunks_exact(3) {
            for c in 0..3 {
                planes[c].push(px[c]);
            }
        }
        Self::new(width, height, planes)
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let n = width * height;
        Self::new(width, height, [vec![rgb[0]; n], vec![rgb[1]; n], vec![rgb[2]; n]])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut out = Self::filled(width, height, [0; 3])?;
        for y in 0..height {
            for x in 0..width {
                out.set(x, y, f(x, y));
            }
        }
        Ok(out)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn plane(&self, channel: usize) -> &[u8] {
        &self.planes[channel]
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = y * self.width + x;
        [self.planes[0][i], self.planes[1][i], self.planes[2][i]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = y * self.width + x;
        for (c, v) in rgb.into_iter().enumerate() {
            self.planes[c][i] = v;
        }
    }

    pub fn to_interleaved(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.width * self.height * 3);
        for i in 0..self.width * self.height {
            out.extend(self.planes.iter().map(|p| p[i]));
        }
        out
    }
}

/// Single plane of real values. Callers use it either in the `0..=255`
/// ("u8-normalized") range or the unit range, depending on the stage.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl GrayMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        Ok(Self { width, height, values })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    pub fn crop(&self, rect: Rect) -> Result<Self> {
        crop_plane(&self.values, self.width, self.height, rect).and_then(|v| Self::new(rect.w, rect.h, v))
    }
}

/// Binary mask over `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMap {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl BinaryMap {
    /// Any nonzero input value is stored as 1.
    pub fn new(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        let values = values.into_iter().map(|v| u8::from(v != 0)).collect();
        Ok(Self { width, height, values })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(u8::from(f(x, y)));
            }
        }
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.values[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.values[y * self.width + x] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }

    pub fn crop(&self, rect: Rect) -> Result<Self> {
        crop_plane(&self.values, self.width, self.height, rect).and_then(|v| Self::new(rect.w, rect.h, v))
    }
}

/// Integer labels, 0 is background and regions are numbered `1..=count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    count: u32,
}

impl LabelMap {
    /// Validates that the label set is exactly `1..=max`.
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        check_dims(width, height, labels.len())?;
        let count = labels.iter().copied().max().unwrap_or(0);
        let mut seen = vec![false; count as usize + 1];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if seen.iter().skip(1).any(|s| !s) {
            return Err(invalid("labels", "label set is not contiguous"));
        }
        Ok(Self {
            width,
            height,
            labels,
            count,
        })
    }

    /// Renumbers arbitrary labels to `1..=L` in raster order of first
    /// appearance.
    pub fn compacted(width: usize, height: usize, mut labels: Vec<u32>) -> Result<Self> {
        check_dims(width, height, labels.len())?;
        let mut map = std::collections::HashMap::new();
        for l in labels.iter_mut().filter(|l| **l != 0) {
            let next = map.len() as u32 + 1;
            *l = *map.entry(*l).or_insert(next);
        }
        let count = map.len() as u32;
        Ok(Self {
            width,
            height,
            labels,
            count,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Foreground mask of every labeled pixel.
    pub fn foreground(&self) -> BinaryMap {
        BinaryMap {
            width: self.width,
            height: self.height,
            values: self.labels.iter().map(|&l| u8::from(l != 0)).collect(),
        }
    }

    /// Mask of the pixels carrying `label`.
    pub fn region(&self, label: u32) -> BinaryMap {
        BinaryMap {
            width: self.width,
            height: self.height,
            values: self.labels.iter().map(|&l| u8::from(l == label)).collect(),
        }
    }

    /// Pixel count per label; index 0 holds the background count.
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0; self.count as usize + 1];
        for &l in &self.labels {
            areas[l as usize] += 1;
        }
        areas
    }

    /// Tight extents per label (index `label - 1`).
    pub fn extents(&self) -> Vec<Rect> {
        let n = self.count as usize;
        let mut lo = vec![(usize::MAX, usize::MAX); n];
        let mut hi = vec![(0, 0); n];
        for y in 0..self.height {
            for x in 0..self.width {
                let l = self.get(x, y) as usize;
                if l == 0 {
                    continue;
                }
                let (lx, ly) = &mut lo[l - 1];
                *lx = (*lx).min(x);
                *ly = (*ly).min(y);
                let (hx, hy) = &mut hi[l - 1];
                *hx = (*hx).max(x);
                *hy = (*hy).max(y);
            }
        }
        lo.into_iter()
            .zip(hi)
            .map(|((x0, y0), (x1, y1))| Rect {
                x: x0,
                y: y0,
                w: x1 - x0 + 1,
                h: y1 - y0 + 1,
            })
            .collect()
    }
}

fn crop_plane<T: Copy>(values: &[T], width: usize, height: usize, rect: Rect) -> Result<Vec<T>> {
    if rect.w == 0 || rect.h == 0 || rect.x + rect.w > width || rect.y + rect.h > height {
        return Err(invalid("crop", format!("{rect:?} outside {width}x{height}")));
    }
    let mut out = Vec::with_capacity(rect.w * rect.h);
    for y in rect.y..rect.y + rect.h {
        out.extend_from_slice(&values[y * width + rect.x..y * width + rect.x + rect.w]);
    }
    Ok(out)
}

/// Ordered outer boundary of one 8-connected region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contour {
    pub points: Vec<(usize, usize)>,
    pub bounding_rect: Rect,
}

impl Contour {
    fn from_points(points: Vec<(usize, usize)>) -> Self {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for &(x, y) in &points {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let bounding_rect = Rect {
            x: x0,
            y: y0,
            w: x1 - x0 + 1,
            h: y1 - y0 + 1,
        };
        Self { points, bounding_rect }
    }
}

/// Otsu threshold over the 256-bin histogram of a `0..=255` map.
///
/// The returned `t` is the lowest level of the upper class: pixels with
/// value `< t` form the lower class. Among equally good splits the smallest
/// `t` wins.
pub fn otsu_threshold(map: &GrayMap) -> Result<u8> {
    let mut hist = [0u64; 256];
    for &v in map.values() {
        hist[v.round().clamp(0.0, 255.0) as usize] += 1;
    }
    // Between-class variance is proportional to (n0*S1 - n1*S0)^2 / (n0*n1);
    // candidates are compared as exact fractions so ties resolve to the
    // smallest t regardless of rounding.
    let total: u64 = hist.iter().sum();
    let sum_all: u64 = hist.iter().enumerate().map(|(i, &c)| i as u64 * c).sum();

    let mut best: Option<(u8, u128, u128)> = None;
    let (mut n0, mut s0) = (0u64, 0u64);
    for t in 1..256usize {
        n0 += hist[t - 1];
        s0 += (t as u64 - 1) * hist[t - 1];
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = sum_all - s0;
        let diff = (i128::from(n0) * i128::from(s1) - i128::from(n1) * i128::from(s0)).unsigned_abs();
        let num = diff * diff;
        let den = u128::from(n0) * u128::from(n1);
        let better = match best {
            None => num > 0,
            Some((_, bn, bd)) => match (num.checked_mul(bd), bn.checked_mul(den)) {
                (Some(a), Some(b)) => a > b,
                _ => num as f64 / den as f64 > bn as f64 / bd as f64,
            },
        };
        if better {
            best = Some((t as u8, num, den));
        }
    }
    let Some(best) = best else {
        return Err(Error::DegenerateHistogram);
    };
    Ok(best.0)
}

/// Digital disk `dx² + dy² <= r² + r`, i.e. the half-pixel-padded circle;
/// radius 1 gives the full 3x3 square.
fn disk_offsets(radius: usize) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r + r {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn morph(mask: &BinaryMap, offsets: &[(i64, i64)], erode: bool) -> BinaryMap {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut out = mask.clone();
    for y in 0..h {
        for x in 0..w {
            // Outside the raster counts as background for both operators.
            let hit = |&(dx, dy): &(i64, i64)| {
                let (nx, ny) = (x + dx, y + dy);
                nx >= 0 && ny >= 0 && nx < w && ny < h && mask.get(nx as usize, ny as usize)
            };
            let on = if erode {
                offsets.iter().all(hit)
            } else {
                offsets.iter().any(hit)
            };
            out.set(x as usize, y as usize, on);
        }
    }
    out
}

/// Morphological opening with a disk: `iterations` erosions followed by the
/// same number of dilations.
pub fn morphological_open(mask: &BinaryMap, radius: usize, iterations: usize) -> Result<BinaryMap> {
    if radius == 0 {
        return Err(invalid("radius", "must be at least 1"));
    }
    if iterations == 0 {
        return Err(invalid("iterations", "must be at least 1"));
    }
    let offsets = disk_offsets(radius);
    let mut out = mask.clone();
    for _ in 0..iterations {
        out = morph(&out, &offsets, true);
    }
    for _ in 0..iterations {
        out = morph(&out, &offsets, false);
    }
    Ok(out)
}

/// City-block distance from each foreground pixel to the nearest background
/// pixel, with everything outside the raster treated as background.
pub fn distance_transform(mask: &BinaryMap) -> GrayMap {
    let (w, h) = mask.dims();
    let mut d = vec![0u32; w * h];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let up = if y > 0 { d[(y - 1) * w + x] } else { 0 };
            let left = if x > 0 { d[y * w + x - 1] } else { 0 };
            d[y * w + x] = up.min(left) + 1;
        }
    }
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let i = y * w + x;
            if d[i] == 0 {
                continue;
            }
            let down = if y + 1 < h { d[i + w] } else { 0 };
            let right = if x + 1 < w { d[i + 1] } else { 0 };
            d[i] = d[i].min(down.min(right) + 1);
        }
    }
    GrayMap {
        width: w,
        height: h,
        values: d.into_iter().map(f64::from).collect(),
    }
}

fn neighbors(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    RING.iter().filter_map(move |&(dx, dy)| {
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        (nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64).then_some((nx as usize, ny as usize))
    })
}

/// 8-connected labeling; labels follow raster order of each component's
/// first pixel.
pub fn connected_components(mask: &BinaryMap) -> LabelMap {
    let (w, h) = mask.dims();
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if mask.values[start] == 0 || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for (nx, ny) in neighbors(i % w, i / w, w, h) {
                let j = ny * w + nx;
                if mask.values[j] != 0 && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    LabelMap {
        width: w,
        height: h,
        labels,
        count: next,
    }
}

/// Outer borders of every 8-connected component, traced with Suzuki-Abe
/// border following. Hole borders are followed (so their pixels get marked)
/// but not returned. Contours come out in raster order of their start pixel.
pub fn find_contours(mask: &BinaryMap) -> Vec<Contour> {
    let (w, h) = mask.dims();
    let pw = w + 2;
    let ph = h + 2;
    // Zero frame around the image so every neighbor lookup is in bounds.
    let mut f = vec![0i32; pw * ph];
    for y in 0..h {
        for x in 0..w {
            f[(y + 1) * pw + x + 1] = i32::from(mask.values[y * w + x]);
        }
    }
    let idx = |x: i64, y: i64| y as usize * pw + x as usize;
    let dir_of = |dx: i64, dy: i64| RING.iter().position(|&d| d == (dx, dy)).unwrap();

    let mut nbd = 1i32;
    let mut contours = Vec::new();
    for y in 1..(ph - 1) as i64 {
        for x in 1..(pw - 1) as i64 {
            let v = f[idx(x, y)];
            if v == 0 {
                continue;
            }
            let outer = v == 1 && f[idx(x - 1, y)] == 0;
            let hole = !outer && v >= 1 && f[idx(x + 1, y)] == 0;
            if !outer && !hole {
                continue;
            }
            nbd += 1;
            let start_dir = if outer { 4 } else { 0 };

            // Clockwise search for the first nonzero neighbor.
            let first = (0..8)
                .map(|k| (start_dir + 8 - k) % 8)
                .find(|&d| f[idx(x + RING[d].0, y + RING[d].1)] != 0);
            let mut points = vec![((x - 1) as usize, (y - 1) as usize)];
            let Some(d1) = first else {
                f[idx(x, y)] = -nbd;
                if outer {
                    contours.push(Contour::from_points(points));
                }
                continue;
            };
            let p1 = (x + RING[d1].0, y + RING[d1].1);
            let mut p2 = p1;
            let mut p3 = (x, y);
            loop {
                let back = dir_of(p2.0 - p3.0, p2.1 - p3.1);
                let mut east_zero = false;
                let mut p4 = p3;
                for k in 1..=8 {
                    let d = (back + k) % 8;
                    let q = (p3.0 + RING[d].0, p3.1 + RING[d].1);
                    if f[idx(q.0, q.1)] != 0 {
                        p4 = q;
                        break;
                    }
                    if d == 0 {
                        east_zero = true;
                    }
                }
                let cell = &mut f[idx(p3.0, p3.1)];
                if east_zero {
                    *cell = -nbd;
                } else if *cell == 1 {
                    *cell = nbd;
                }
                if p4 == (x, y) && p3 == p1 {
                    break;
                }
                p2 = p3;
                p3 = p4;
                points.push(((p3.0 - 1) as usize, (p3.1 - 1) as usize));
            }
            if outer {
                contours.push(Contour::from_points(points));
            }
        }
    }
    contours
}

/// Pixels strictly greater than every in-raster 8-neighbor and at least
/// `min_value`, in raster order. Flat plateaus produce no maxima.
pub fn local_maxima(map: &GrayMap, min_value: f64) -> Vec<(usize, usize)> {
    let (w, h) = map.dims();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = map.get(x, y);
            if v < min_value {
                continue;
            }
            if neighbors(x, y, w, h).all(|(nx, ny)| v > map.get(nx, ny)) {
                out.push((x, y));
            }
        }
    }
    out
}
