//! Per-pixel features: the HSV green-dominance mask and the Gabor texture map.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fft::{smooth_len, Fft2, Scratch};
use crate::raster::{BinaryMap, GrayMap, Rect, RgbRaster};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsvPixel {
    /// Degrees in `[0, 360)`, 0 for achromatic pixels.
    pub hue: f64,
    pub saturation: f64,
    pub value: f64,
}

impl HsvPixel {
    /// Hexcone conversion of one 8-bit RGB triple.
    pub fn from_rgb([r, g, b]: [u8; 3]) -> Self {
        let (r, g, b) = (f64::from(r), f64::from(g), f64::from(b));
        let max = r.max(g).max(b);
        let min = r.min(g).min(b);
        let delta = max - min;
        let hue = if delta == 0.0 {
            0.0
        } else if max == r {
            60.0 * ((g - b) / delta).rem_euclid(6.0)
        } else if max == g {
            60.0 * ((b - r) / delta + 2.0)
        } else {
            60.0 * ((r - g) / delta + 4.0)
        };
        let saturation = if max == 0.0 { 0.0 } else { delta / max };
        Self {
            hue: if hue >= 360.0 { hue - 360.0 } else { hue },
            saturation,
            value: max / 255.0,
        }
    }
}

/// Row-major HSV plane with the raster's dimensions.
pub fn rgb_to_hsv(image: &RgbRaster) -> Vec<HsvPixel> {
    (0..image.height())
        .flat_map(|y| (0..image.width()).map(move |x| (x, y)))
        .map(|(x, y)| HsvPixel::from_rgb(image.get(x, y)))
        .collect()
}

/// Hue window plus saturation/value floors deciding whether green dominates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GreenDominanceSpec {
    pub hue_min: f64,
    pub hue_max: f64,
    pub sat_min: f64,
    pub val_min: f64,
}

impl Default for GreenDominanceSpec {
    fn default() -> Self {
        Self {
            hue_min: 60.0,
            hue_max: 180.0,
            sat_min: 0.2,
            val_min: 0.2,
        }
    }
}

impl GreenDominanceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.hue_min && self.hue_min < self.hue_max && self.hue_max < 360.0) {
            return Err(invalid("hue_min/hue_max", "need 0 <= hue_min < hue_max < 360"));
        }
        if !(0.0..=1.0).contains(&self.sat_min) {
            return Err(invalid("sat_min", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.val_min) {
            return Err(invalid("val_min", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn is_green(&self, p: HsvPixel) -> bool {
        p.hue >= self.hue_min && p.hue <= self.hue_max && p.saturation >= self.sat_min && p.value >= self.val_min
    }
}

/// Binary color-invariant map: 1 where green dominates.
pub fn green_dominance_map(image: &RgbRaster, spec: &GreenDominanceSpec) -> Result<BinaryMap> {
    spec.validate()?;
    BinaryMap::from_fn(image.width(), image.height(), |x, y| {
        spec.is_green(HsvPixel::from_rgb(image.get(x, y)))
    })
}

/// Parameters of the Gabor filter bank.
///
/// Radial frequencies are given in cycles per `reference_width` pixels, so
/// the bank does not change with the size of the processed raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaborBankSpec {
    /// Degrees; 0 responds to intensity varying along x.
    pub orientations: Vec<f64>,
    pub radial_frequencies: Vec<f64>,
    pub reference_width: f64,
    /// Radial bandwidth in octaves.
    pub bandwidth: f64,
    /// Kernel half-width in multiples of sigma.
    pub kernel_truncation: f64,
}

impl Default for GaborBankSpec {
    fn default() -> Self {
        Self {
            orientations: vec![0.0, 45.0, 90.0, 135.0],
            radial_frequencies: (2..=5).map(|k| 2f64.sqrt() * 2f64.powi(k)).collect(),
            reference_width: 256.0,
            bandwidth: 1.0,
            kernel_truncation: 3.0,
        }
    }
}

impl GaborBankSpec {
    pub fn validate(&self) -> Result<()> {
        if self.orientations.is_empty() {
            return Err(invalid("orientations", "must not be empty"));
        }
        if self.radial_frequencies.is_empty() {
            return Err(invalid("radial_frequencies", "must not be empty"));
        }
        if self.radial_frequencies[0] <= 0.0 || self.radial_frequencies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid(
                "radial_frequencies",
                "must be positive and strictly increasing",
            ));
        }
        if !(self.bandwidth > 0.0) {
            return Err(invalid("bandwidth", "must be positive"));
        }
        if !(self.kernel_truncation > 0.0) {
            return Err(invalid("kernel_truncation", "must be positive"));
        }
        if !(self.reference_width > 0.0) {
            return Err(invalid("reference_width", "must be positive"));
        }
        Ok(())
    }
}

/// One even-symmetric, zero-mean Gabor kernel with unit L1 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct GaborKernel {
    pub orientation: f64,
    /// Cycles per pixel.
    pub frequency: f64,
    pub sigma: f64,
    half: usize,
    weights: Vec<f64>,
}

impl GaborKernel {
    fn new(orientation: f64, frequency: f64, sigma: f64, truncation: f64) -> Self {
        let half = (truncation * sigma).ceil() as usize;
        let size = 2 * half + 1;
        let (s, c) = orientation.to_radians().sin_cos();
        let h = half as f64;
        let mut weights = Vec::with_capacity(size * size);
        for iy in 0..size {
            for ix in 0..size {
                let (dx, dy) = (ix as f64 - h, iy as f64 - h);
                let envelope = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                let carrier = (2.0 * std::f64::consts::PI * frequency * (dx * c + dy * s)).cos();
                weights.push(envelope * carrier);
            }
        }
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        weights.iter_mut().for_each(|w| *w -= mean);
        let norm: f64 = weights.iter().map(|w| w.abs()).sum();
        weights.iter_mut().for_each(|w| *w /= norm);
        Self {
            orientation,
            frequency,
            sigma,
            half,
            weights,
        }
    }

    pub fn half_width(&self) -> usize {
        self.half
    }

    pub fn size(&self) -> usize {
        2 * self.half + 1
    }

    /// Weight at offset `(dx, dy)` from the kernel center.
    pub fn weight(&self, dx: i64, dy: i64) -> f64 {
        let h = self.half as i64;
        self.weights[((dy + h) as usize) * self.size() + (dx + h) as usize]
    }

    /// Signed response over a whole plane with reflect-101 borders.
    pub fn convolve(&self, plane: &GrayMap) -> Result<GrayMap> {
        let (w, h) = plane.dims();
        let rect = Rect { x: 0, y: 0, w, h };
        if w < self.size() || h < self.size() {
            return Err(Error::ImageTooSmall {
                width: w,
                height: h,
                kernel: self.size(),
            });
        }
        let engine = Engine::new(rect, self.half);
        let mut s = engine.fft.scratch();
        let source = engine.source(|x, y| Complex64::new(plane.get(x, y), 0.0), w, h, &mut s);
        let (mut k, mut out) = (engine.zeros(), engine.zeros());
        engine.kernels(self, None, &mut out, &mut k, &mut s);
        let mut work: Vec<Complex64> = source.iter().zip(&k).map(|(a, b)| a * b.re).collect();
        engine.inverse(&mut work, &mut out, &mut s);
        GrayMap::from_fn(w, h, |x, y| engine.at(&out, x, y).re)
    }
}

/// Envelope sigma for a radial frequency (cycles/pixel) and octave
/// bandwidth.
pub fn gabor_sigma(frequency: f64, bandwidth: f64) -> f64 {
    let b = 2f64.powf(bandwidth);
    (2f64.ln().sqrt() * (b + 1.0)) / (2f64.sqrt() * std::f64::consts::PI * frequency * (b - 1.0))
}

/// One kernel per (orientation, frequency), orientation-major.
pub fn gabor_bank(spec: &GaborBankSpec) -> Result<Vec<GaborKernel>> {
    spec.validate()?;
    let mut bank = Vec::new();
    for &theta in &spec.orientations {
        for &f in &spec.radial_frequencies {
            let frequency = f / spec.reference_width;
            let sigma = gabor_sigma(frequency, spec.bandwidth);
            if sigma < 1.0 {
                return Err(Error::FrequencyTooHigh { frequency: f, sigma });
            }
            bank.push(GaborKernel::new(theta, frequency, sigma, spec.kernel_truncation));
        }
    }
    Ok(bank)
}

fn reflect101(i: i64, n: usize) -> usize {
    let n = n as i64;
    let mut i = i;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// FFT convolution of a region padded by `half` pixels of real context.
struct Engine {
    region: Rect,
    half: usize,
    fft: Fft2,
}

impl Engine {
    fn new(region: Rect, half: usize) -> Self {
        let nx = smooth_len(region.w + 2 * half);
        let ny = smooth_len(region.h + 2 * half);
        Self {
            region,
            half,
            fft: Fft2::new(nx, ny),
        }
    }

    fn zeros(&self) -> Vec<Complex64> {
        vec![Complex64::default(); self.fft.len()]
    }

    /// Spectrum of the source pixels around the region; positions outside
    /// the image are mirrored (reflect-101).
    fn source(&self, f: impl Fn(usize, usize) -> Complex64, w: usize, h: usize, s: &mut Scratch) -> Vec<Complex64> {
        let nx = self.fft.nx;
        let hh = self.half as i64;
        let rows = self.region.h + 2 * self.half;
        let mut data = self.zeros();
        for py in 0..rows {
            let sy = reflect101(self.region.y as i64 + py as i64 - hh, h);
            for px in 0..self.region.w + 2 * self.half {
                let sx = reflect101(self.region.x as i64 + px as i64 - hh, w);
                data[py * nx + px] = f(sx, sy);
            }
        }
        let mut spec = self.zeros();
        self.fft.forward(&mut data, std::iter::once(0..rows), &mut spec, s);
        spec
    }

    /// Spectra of one or two kernels packed as `ka + i kb`, scaled by the
    /// inverse transform's `1 / len`. The kernels are point-symmetric, so
    /// `ka` and `kb` are real and each can be read back from one part.
    fn kernels(
        &self,
        a: &GaborKernel,
        b: Option<&GaborKernel>,
        data: &mut [Complex64],
        out: &mut [Complex64],
        s: &mut Scratch,
    ) {
        let (nx, ny) = (self.fft.nx, self.fft.ny);
        data.fill(Complex64::default());
        let mut reach = 0;
        for (k, part) in [Some(a), b].into_iter().enumerate() {
            let Some(kernel) = part else { continue };
            let h = kernel.half as i64;
            reach = reach.max(kernel.half);
            for dy in -h..=h {
                for dx in -h..=h {
                    let ix = dx.rem_euclid(nx as i64) as usize;
                    let iy = dy.rem_euclid(ny as i64) as usize;
                    let w = kernel.weight(dx, dy);
                    if k == 0 {
                        data[iy * nx + ix].re += w;
                    } else {
                        data[iy * nx + ix].im += w;
                    }
                }
            }
        }
        self.fft.forward(data, [0..reach + 1, ny - reach..ny], out, s);
        let scale = 1.0 / self.fft.len() as f64;
        out.iter_mut().for_each(|v| *v *= scale);
    }

    /// Inverse transform of `spectrum`, limited to the rows of the region.
    fn inverse(&self, spectrum: &mut [Complex64], out: &mut [Complex64], s: &mut Scratch) {
        self.fft.inverse(spectrum, self.half..self.half + self.region.h, out, s);
    }

    fn at(&self, out: &[Complex64], x: usize, y: usize) -> Complex64 {
        out[(y + self.half) * self.fft.nx + x + self.half]
    }
}

/// Mean absolute Gabor response over every kernel and color channel for the
/// pixels of `region`, before normalization.
///
/// Context outside `region` is taken from the image itself, so computing a
/// raster tile by tile reproduces the whole-image result.
pub fn gabor_response(image: &RgbRaster, spec: &GaborBankSpec, region: Rect) -> Result<GrayMap> {
    let bank = gabor_bank(spec)?;
    let (w, h) = (image.width(), image.height());
    let half = bank.iter().map(|k| k.half).max().unwrap_or(0);
    let size = 2 * half + 1;
    if w < size || h < size {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            kernel: size,
        });
    }
    if region.w == 0 || region.h == 0 || region.x + region.w > w || region.y + region.h > h {
        return Err(invalid("region", format!("{region:?} outside {w}x{h}")));
    }

    let engine = Engine::new(region, half);
    let mut s = engine.fft.scratch();
    let rg = engine.source(
        |x, y| {
            let p = image.get(x, y);
            Complex64::new(f64::from(p[0]), f64::from(p[1]))
        },
        w,
        h,
        &mut s,
    );
    let blue = engine.source(|x, y| Complex64::new(f64::from(image.get(x, y)[2]), 0.0), w, h, &mut s);

    let (mut k, mut work, mut out) = (engine.zeros(), engine.zeros(), engine.zeros());
    let mut acc = vec![0.0f64; region.w * region.h];
    let mut add = |out: &[Complex64]| {
        for y in 0..region.h {
            for x in 0..region.w {
                let v = engine.at(out, x, y);
                acc[y * region.w + x] += v.re.abs() + v.im.abs();
            }
        }
    };
    for pair in bank.chunks(2) {
        engine.kernels(&pair[0], pair.get(1), &mut work, &mut k, &mut s);
        // Red and green ride in one complex transform per kernel.
        let parts: [fn(&Complex64) -> f64; 2] = [|v| v.re, |v| v.im];
        for part in &parts[..pair.len()] {
            for ((wv, r), kv) in work.iter_mut().zip(&rg).zip(&k) {
                *wv = r * part(kv);
            }
            engine.inverse(&mut work, &mut out, &mut s);
            add(&out);
        }
        // Blue against both kernels at once: re = B*ka, im = B*kb.
        for ((wv, b), kv) in work.iter_mut().zip(&blue).zip(&k) {
            *wv = b * kv;
        }
        engine.inverse(&mut work, &mut out, &mut s);
        add(&out);
    }
    let scale = 1.0 / (3 * bank.len()) as f64;
    GrayMap::new(region.w, region.h, acc.into_iter().map(|v| v * scale).collect())
}

/// Min-max normalization to `[0, 1]`; a (numerically) flat map becomes zero.
pub fn normalize_unit(map: &GrayMap) -> GrayMap {
    let (lo, hi) = map
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    let values = if range <= 1e-9 {
        vec![0.0; map.values().len()]
    } else {
        map.values()
            .iter()
            .map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
            .collect()
    };
    GrayMap::new(map.width(), map.height(), values).expect("same dims")
}

/// Texture feature map `G` in `[0, 1]`.
pub fn gabor_feature_map(image: &RgbRaster, spec: &GaborBankSpec) -> Result<GrayMap> {
    let full = Rect {
        x: 0,
        y: 0,
        w: image.width(),
        h: image.height(),
    };
    Ok(normalize_unit(&gabor_response(image, spec, full)?))
}
