//! Stage implementations behind the subcommands. `all` chains the same
//! functions the individual subcommands use.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rayon::ThreadPool;

use crownfuse::eval::{match_boxes, match_image, EvalReport, GroundTruthBox, ImageReport};
use crownfuse::features::{gabor_response, green_dominance_map, normalize_unit};
use crownfuse::integrate::{IntegratedSource, IntegrationConfig};
use crownfuse::pipeline::{self, stitch, tile_rects, TraditionalOutput};
use crownfuse::probmap::joint_probability_map;
use crownfuse::raster::{distance_transform, GrayMap, Rect, RgbRaster};
use crownfuse::segmentation::{extract_centers, CenterSource, TreeCenter};
use crownfuse::synth::{random_layout, render_scene, simulate_with, SceneSpec};
use crownfuse::wbf::{fuse, Extent};

use crate::config::PipelineConfig;
use crate::failure::{Failure, InFile};
use crate::formats::*;

pub const CENTERS: &str = "centers.json";
pub const MASK: &str = "mask.png";
pub const LABELS: &str = "labels.png";
pub const PROBABILITY: &str = "probability.png";
pub const FUSED: &str = "fused.json";
pub const INTEGRATED: &str = "integrated.json";
pub const REFINED_LABELS: &str = "refined_labels.png";
pub const OVERLAY: &str = "overlay.png";
pub const REPORT: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const SYNTH_IMAGE: &str = "scene.png";
pub const SYNTH_GT: &str = "gt.json";
pub const SYNTH_DETECTIONS: &str = "detections.json";

pub struct Context {
    pub cfg: PipelineConfig,
    pub out_dir: PathBuf,
    pool: ThreadPool,
}

impl Context {
    pub fn new(cfg: PipelineConfig) -> Result<Self, Failure> {
        let out_dir = cfg.io.out_dir.clone().unwrap_or_else(|| PathBuf::from("crownfuse-out"));
        fs::create_dir_all(&out_dir).map_err(|e| Failure::io(&out_dir, e))?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.workers)
            .build()
            .map_err(|e| Failure::config_field("run.workers", e.to_string()))?;
        Ok(Self { cfg, out_dir, pool })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Normalized texture map, optionally computed tile by tile on the pool.
    fn texture(&self, image: &RgbRaster) -> crownfuse::Result<GrayMap> {
        let (w, h) = (image.width(), image.height());
        let spec = &self.cfg.gabor;
        let raw = if self.cfg.run.tiling {
            let tiles = tile_rects(w, h, self.cfg.run.tile_size);
            let parts: crownfuse::Result<Vec<(Rect, GrayMap)>> = self.pool.install(|| {
                tiles
                    .par_iter()
                    .map(|&r| gabor_response(image, spec, r).map(|g| (r, g)))
                    .collect()
            });
            stitch(w, h, &parts?)?
        } else {
            gabor_response(image, spec, Rect { x: 0, y: 0, w, h })?
        };
        Ok(normalize_unit(&raw))
    }
}

fn image_id_for(explicit: Option<&str>, image: &Path) -> String {
    explicit
        .map(str::to_string)
        .or_else(|| image.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "image".to_string())
}

pub fn require<'a>(value: Option<&'a PathBuf>, what: &str) -> Result<&'a Path, Failure> {
    value
        .map(PathBuf::as_path)
        .ok_or_else(|| Failure::usage(format!("missing input: {what}")).with_field(what))
}

fn mismatch(path: &Path, expected: (usize, usize), found: (usize, usize)) -> Failure {
    Failure::from(crownfuse::Error::DimensionMismatch { expected, found }).with_file(path)
}

// ---------- detect-traditional ----------

pub struct Detected {
    pub image_id: String,
    pub image: RgbRaster,
    pub out: TraditionalOutput,
}

pub fn detect_traditional(ctx: &Context, image_path: &Path, image_id: Option<&str>) -> Result<Detected, Failure> {
    let image = read_rgb(image_path)?;
    let g = ctx.texture(&image).in_file(image_path)?;
    let out = pipeline::detect_with_texture(&image, g, &ctx.cfg.traditional()).in_file(image_path)?;
    let image_id = image_id_for(image_id, image_path);
    let (w, h) = out.dims();
    write_json(
        &ctx.out(CENTERS),
        &CentersFile {
            image_id: image_id.clone(),
            width: w,
            height: h,
            centers: out.seg.centers.clone(),
        },
    )?;
    write_mask(&ctx.out(MASK), &out.mask)?;
    write_labels(&ctx.out(LABELS), &out.seg.labels)?;
    write_gray(&ctx.out(PROBABILITY), &out.j.to_u8_gray())?;
    Ok(Detected { image_id, image, out })
}

/// Rebuilds a traditional result from the files `detect-traditional` wrote.
fn load_traditional(ctx: &Context, image_path: &Path, dir: &Path) -> Result<Detected, Failure> {
    let image = read_rgb(image_path)?;
    let dims = (image.width(), image.height());
    let centers_path = dir.join(CENTERS);
    let centers: CentersFile = read_json(&centers_path)?;
    if (centers.width, centers.height) != dims {
        return Err(mismatch(&centers_path, dims, (centers.width, centers.height)));
    }
    let mask_path = dir.join(MASK);
    let mask = read_mask(&mask_path)?;
    if mask.dims() != dims {
        return Err(mismatch(&mask_path, dims, mask.dims()));
    }
    let labels_path = dir.join(LABELS);
    let labels = read_labels(&labels_path)?;
    if labels.dims() != dims {
        return Err(mismatch(&labels_path, dims, labels.dims()));
    }

    let trad = ctx.cfg.traditional();
    let c = green_dominance_map(&image, &trad.green).in_file(image_path)?;
    let g = ctx.texture(&image).in_file(image_path)?;
    let j = joint_probability_map(&c, &g, trad.probmap.w1, trad.probmap.w2).in_file(image_path)?;
    let seg_cfg = trad.segmentation;
    let mut seg =
        extract_centers(&labels, &distance_transform(&mask), seg_cfg.th_area, seg_cfg.th_dist).in_file(&labels_path)?;
    seg.centers = centers.centers;
    Ok(Detected {
        image_id: centers.image_id,
        image,
        out: TraditionalOutput { c, g, j, mask, seg },
    })
}

// ---------- fuse ----------

pub fn fuse_files(ctx: &Context, paths: &[PathBuf]) -> Result<FusedFile, Failure> {
    if paths.is_empty() {
        return Err(Failure::usage("missing input: detections").with_field("detections"));
    }
    let files: Vec<DetectionFile> = paths.iter().map(|p| read_json(p)).collect::<Result<_, _>>()?;
    let first = &files[0];
    let mut boxes = Vec::new();
    for (p, f) in paths.iter().zip(&files) {
        if (f.width, f.height) != (first.width, first.height) {
            return Err(mismatch(p, (first.width, first.height), (f.width, f.height)));
        }
        if f.image_id != first.image_id {
            return Err(Failure::parse(
                p,
                format!("image_id {:?} differs from {:?}", f.image_id, first.image_id),
            )
            .with_field("image_id"));
        }
        boxes.extend_from_slice(&f.boxes);
    }
    let n_models = ctx.cfg.wbf.resolve_models(&boxes);
    let fused = fuse(&boxes, n_models, &ctx.cfg.wbf).map_err(|e| {
        let f = Failure::from(e);
        if paths.len() == 1 {
            f.with_file(&paths[0])
        } else {
            f
        }
    })?;
    let out = FusedFile {
        image_id: first.image_id.clone(),
        width: first.width,
        height: first.height,
        n_models,
        boxes: fused,
    };
    write_json(&ctx.out(FUSED), &out)?;
    Ok(out)
}

// ---------- integrate ----------

const GREEN: [u8; 3] = [0, 255, 0];
const BLUE: [u8; 3] = [0, 64, 255];
const ORANGE: [u8; 3] = [255, 140, 0];

fn dot(img: &mut RgbRaster, x: usize, y: usize, color: [u8; 3]) {
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            let (px, py) = (x as i64 + dx, y as i64 + dy);
            if px >= 0 && py >= 0 && (px as usize) < img.width() && (py as usize) < img.height() {
                img.set(px as usize, py as usize, color);
            }
        }
    }
}

fn outline(img: &mut RgbRaster, e: &Extent, color: [u8; 3]) {
    let (w, h) = (img.width(), img.height());
    let px = |v: f64, n: usize| ((v * n as f64).floor().max(0.0) as usize).min(n - 1);
    let (x0, x1, y0, y1) = (px(e.x1, w), px(e.x2, w), px(e.y1, h), px(e.y2, h));
    for x in x0..=x1 {
        img.set(x, y0, color);
        img.set(x, y1, color);
    }
    for y in y0..=y1 {
        img.set(x0, y, color);
        img.set(x1, y, color);
    }
}

/// Accepted boxes in green, traditional centers in blue, centers confirmed
/// by the local test in orange.
pub fn overlay(image: &RgbRaster, boxes: &[Extent], traditional: &[TreeCenter], local: &[(usize, usize)]) -> RgbRaster {
    let mut img = image.clone();
    for b in boxes {
        outline(&mut img, b, GREEN);
    }
    for c in traditional {
        dot(&mut img, c.x, c.y, BLUE);
    }
    for &(x, y) in local {
        dot(&mut img, x, y, ORANGE);
    }
    img
}

pub fn integrate_with(
    ctx: &Context,
    detected: &Detected,
    fused: &FusedFile,
    fused_path: &Path,
) -> Result<IntegratedFile, Failure> {
    let dims = detected.out.dims();
    if (fused.width, fused.height) != dims {
        return Err(mismatch(fused_path, dims, (fused.width, fused.height)));
    }
    let icfg: &IntegrationConfig = &ctx.cfg.integrate;
    let result = pipeline::integrate(&fused.boxes, &detected.out, &ctx.cfg.segmentation, icfg)?;

    let local: Vec<(usize, usize)> = result
        .centers
        .iter()
        .filter(|c| c.source == IntegratedSource::ValidatedLocal)
        .map(|c| (c.x, c.y))
        .collect();
    let boxes: Vec<Extent> = result.filtered.iter().map(|b| b.extent()).collect();
    write_rgb(
        &ctx.out(OVERLAY),
        &overlay(&detected.image, &boxes, &detected.out.seg.centers, &local),
    )?;
    write_labels(&ctx.out(REFINED_LABELS), &result.refined.labels)?;
    let file = IntegratedFile {
        image_id: detected.image_id.clone(),
        width: dims.0,
        height: dims.1,
        centers: result.centers,
        dropped_segments: result.dropped_segments,
        avg_crown_size: result.avg,
        avg_is_fallback: result.avg_is_fallback,
        rejected: result.reliable.rejected,
    };
    write_json(&ctx.out(INTEGRATED), &file)?;
    Ok(file)
}

pub fn integrate_files(
    ctx: &Context,
    image_path: &Path,
    fused_path: &Path,
    traditional_dir: &Path,
) -> Result<IntegratedFile, Failure> {
    let fused: FusedFile = read_json(fused_path)?;
    let detected = load_traditional(ctx, image_path, traditional_dir)?;
    integrate_with(ctx, &detected, &fused, fused_path)
}

// ---------- evaluate ----------

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalMode {
    /// Predicted centers inside ground-truth boxes.
    Points,
    /// Predicted boxes with IoU >= 0.5 against ground truth.
    Boxes,
}

struct Pair {
    result: PathBuf,
    gt_path: PathBuf,
    gt: GtFile,
}

fn pair_up(results: &[PathBuf], gts: &[PathBuf]) -> Result<Vec<Pair>, Failure> {
    if results.is_empty() || gts.is_empty() {
        return Err(Failure::usage("evaluate needs at least one --result and one --gt"));
    }
    let gt_files: Vec<GtFile> = gts.iter().map(|p| read_json(p)).collect::<Result<_, _>>()?;
    if results.len() == 1 && gts.len() == 1 {
        return Ok(vec![Pair {
            result: results[0].clone(),
            gt_path: gts[0].clone(),
            gt: gt_files.into_iter().next().expect("one file"),
        }]);
    }
    // several images: pair by image id, in ground-truth order
    let ids: Vec<(PathBuf, String)> = results
        .iter()
        .map(|p| {
            read_json::<serde_json::Value>(p).map(|v| (p.clone(), v["image_id"].as_str().unwrap_or("").to_string()))
        })
        .collect::<Result<_, _>>()?;
    let mut pairs = Vec::new();
    for (gt_path, gt) in gts.iter().zip(gt_files) {
        let Some((result, _)) = ids.iter().find(|(_, id)| *id == gt.image_id) else {
            return Err(Failure::usage(format!("no result for image {:?}", gt.image_id)).with_file(gt_path));
        };
        pairs.push(Pair {
            result: result.clone(),
            gt_path: gt_path.clone(),
            gt,
        });
    }
    Ok(pairs)
}

fn evaluate_pair(pair: &Pair, mode: EvalMode) -> Result<ImageReport, Failure> {
    let gt: Vec<GroundTruthBox> = pair.gt.ground_truth(&pair.gt_path)?;
    let dims = (pair.gt.width, pair.gt.height);
    match mode {
        EvalMode::Points => {
            let r: PointResult = read_json(&pair.result)?;
            if (r.width, r.height) != dims {
                return Err(mismatch(&pair.result, dims, (r.width, r.height)));
            }
            let preds: Vec<TreeCenter> = r
                .centers
                .iter()
                .map(|p| TreeCenter {
                    x: p.x,
                    y: p.y,
                    segment_label: 0,
                    source: CenterSource::Traditional,
                })
                .collect();
            Ok(match_image(&pair.gt.image_id, &preds, &gt, dims.0, dims.1))
        }
        EvalMode::Boxes => {
            let r: FusedFile = read_json(&pair.result)?;
            if (r.width, r.height) != dims {
                return Err(mismatch(&pair.result, dims, (r.width, r.height)));
            }
            let preds: Vec<Extent> = r.boxes.iter().map(|b| b.extent()).collect();
            Ok(match_boxes(&pair.gt.image_id, &preds, &gt, 0.5))
        }
    }
}

pub fn evaluate_files(
    ctx: &Context,
    results: &[PathBuf],
    gts: &[PathBuf],
    mode: EvalMode,
) -> Result<EvalReport, Failure> {
    let pairs = pair_up(results, gts)?;
    let per_image: Vec<ImageReport> = ctx.pool.install(|| {
        pairs
            .par_iter()
            .map(|p| evaluate_pair(p, mode))
            .collect::<Result<_, _>>()
    })?;
    let report = EvalReport::from_images(per_image).map_err(|e| {
        let f = Failure::from(e);
        if gts.len() == 1 {
            f.with_file(&gts[0])
        } else {
            f
        }
    })?;
    write_json(&ctx.out(REPORT), &report)?;
    write_text(&ctx.out(REPORT_TEXT), &report.to_string())?;
    Ok(report)
}

// ---------- synth ----------

pub struct SynthOutput {
    pub image: PathBuf,
    pub gt: PathBuf,
    pub detections: PathBuf,
    pub crowns: usize,
}

pub fn synth(ctx: &Context) -> Result<SynthOutput, Failure> {
    let s = &ctx.cfg.synth;
    let seed = ctx.cfg.run.seed;
    let crowns = if s.crowns.is_empty() {
        random_layout(&s.layout(), seed).map_err(|e| Failure::from(e).with_field("synth"))?
    } else {
        s.crowns.clone()
    };
    let spec = SceneSpec {
        width: s.width,
        height: s.height,
        crowns,
        background: s.background,
        clutter: s.clutter,
        seed,
    };
    let (image, gt) = render_scene(&spec).map_err(|e| Failure::from(e).with_field("synth"))?;
    // detector draws use their own stream so the image does not depend on them
    let detections = simulate_with(&gt, &s.detector(), seed ^ 0x9e37_79b9_7f4a_7c15)
        .map_err(|e| Failure::from(e).with_field("synth"))?;

    let image_id = SYNTH_IMAGE.trim_end_matches(".png");
    let out = SynthOutput {
        image: ctx.out(SYNTH_IMAGE),
        gt: ctx.out(SYNTH_GT),
        detections: ctx.out(SYNTH_DETECTIONS),
        crowns: gt.len(),
    };
    write_rgb(&out.image, &image)?;
    write_json(&out.gt, &GtFile::from_boxes(image_id, s.width, s.height, &gt))?;
    write_json(
        &out.detections,
        &DetectionFile {
            image_id: image_id.to_string(),
            width: s.width,
            height: s.height,
            boxes: detections,
        },
    )?;
    Ok(out)
}

// ---------- all ----------

pub struct AllInputs<'a> {
    pub image: Option<&'a PathBuf>,
    pub image_id: Option<&'a str>,
    pub detections: &'a [PathBuf],
    pub gt: Option<&'a PathBuf>,
}

pub struct AllOutput {
    pub centers: usize,
    pub integrated: IntegratedFile,
    pub report: Option<EvalReport>,
}

pub fn all(ctx: &Context, inputs: &AllInputs) -> Result<AllOutput, Failure> {
    let image = require(inputs.image, "image")?;
    let detected = detect_traditional(ctx, image, inputs.image_id)?;
    let fused = fuse_files(ctx, inputs.detections)?;
    let integrated = integrate_with(ctx, &detected, &fused, &ctx.out(FUSED))?;
    let report = match inputs.gt {
        Some(gt) => Some(evaluate_files(
            ctx,
            &[ctx.out(INTEGRATED)],
            std::slice::from_ref(gt),
            EvalMode::Points,
        )?),
        None => None,
    };
    Ok(AllOutput {
        centers: detected.out.seg.centers.len(),
        integrated,
        report,
    })
}
