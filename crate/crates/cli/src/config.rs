//! Pipeline configuration: one TOML file, environment overrides of the form
//! `CROWNFUSE_<SECTION>_<KEY>`, then command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crownfuse::features::{GaborBankSpec, GreenDominanceSpec};
use crownfuse::integrate::IntegrationConfig;
use crownfuse::pipeline::TraditionalConfig;
use crownfuse::probmap::ProbMapConfig;
use crownfuse::segmentation::SegmentationConfig;
use crownfuse::synth::{CrownSpec, DetectionSimSpec, LayoutSpec, SceneSpec};
use crownfuse::wbf::WbfConfig;

use crate::failure::Failure;

pub const ENV_PREFIX: &str = "CROWNFUSE_";

const SECTIONS: [&str; 9] = [
    "green",
    "gabor",
    "probmap",
    "segmentation",
    "wbf",
    "integrate",
    "synth",
    "run",
    "io",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Compute the texture map tile by tile.
    pub tiling: bool,
    pub tile_size: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            tiling: false,
            tile_size: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub image: Option<PathBuf>,
    pub image_id: Option<String>,
    pub detections: Vec<PathBuf>,
    pub gt: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Synthetic scene and detector simulation. Explicit `crowns` win over the
/// random layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub width: usize,
    pub height: usize,
    pub crowns: Vec<CrownSpec>,
    pub count: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub min_gap: f64,
    pub background: [u8; 3],
    pub clutter: usize,
    pub n_models: usize,
    pub drop_rate: f64,
    pub jitter: f64,
    pub score_min: f64,
    pub score_max: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let layout = LayoutSpec::default();
        let scene = SceneSpec::default();
        let sim = DetectionSimSpec::default();
        Self {
            width: layout.width,
            height: layout.height,
            crowns: Vec::new(),
            count: layout.count,
            radius_min: layout.radius_min,
            radius_max: layout.radius_max,
            min_gap: layout.min_gap,
            background: scene.background,
            clutter: scene.clutter,
            n_models: sim.n_models,
            drop_rate: sim.drop_rate,
            jitter: sim.jitter,
            score_min: sim.score_min,
            score_max: sim.score_max,
        }
    }
}

impl SynthSection {
    pub fn layout(&self) -> LayoutSpec {
        LayoutSpec {
            width: self.width,
            height: self.height,
            count: self.count,
            radius_min: self.radius_min,
            radius_max: self.radius_max,
            min_gap: self.min_gap,
        }
    }

    pub fn detector(&self) -> DetectionSimSpec {
        DetectionSimSpec {
            n_models: self.n_models,
            drop_rate: self.drop_rate,
            jitter: self.jitter,
            score_min: self.score_min,
            score_max: self.score_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub green: GreenDominanceSpec,
    pub gabor: GaborBankSpec,
    pub probmap: ProbMapConfig,
    pub segmentation: SegmentationConfig,
    pub wbf: WbfConfig,
    pub integrate: IntegrationConfig,
    pub synth: SynthSection,
    pub run: RunSection,
    pub io: IoSection,
}

impl PipelineConfig {
    pub fn traditional(&self) -> TraditionalConfig {
        TraditionalConfig {
            green: self.green,
            gabor: self.gabor.clone(),
            probmap: self.probmap,
            segmentation: self.segmentation,
        }
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let check = |r: crownfuse::Result<()>| r.map_err(|e| Failure::config(e.to_string()));
        check(self.traditional().validate())?;
        check(self.wbf.validate())?;
        check(self.integrate.validate())?;
        if self.run.tile_size < 16 {
            return Err(Failure::config_field("run.tile_size", "must be at least 16"));
        }
        Ok(())
    }
}

/// Command-line overrides; `None` leaves the configured value alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub tau_a: Option<f64>,
    pub tau_c: Option<f64>,
    pub tau_d: Option<f64>,
    pub n_neighbors: Option<usize>,
    pub iou_cluster: Option<f64>,
    pub th_area: Option<usize>,
    pub th_dist: Option<f64>,
    pub tiling: Option<bool>,
}

impl Overrides {
    fn apply(&self, cfg: &mut PipelineConfig) {
        macro_rules! set {
            ($src:ident => $($dst:tt)+) => {
                if let Some(v) = self.$src.clone() {
                    cfg.$($dst)+ = v;
                }
            };
        }
        set!(seed => run.seed);
        set!(workers => run.workers);
        set!(tau_a => integrate.tau_a);
        set!(tau_c => integrate.tau_c);
        set!(n_neighbors => integrate.n_neighbors);
        set!(iou_cluster => wbf.iou_cluster);
        set!(th_area => segmentation.th_area);
        set!(th_dist => segmentation.th_dist);
        set!(tiling => run.tiling);
        if let Some(d) = self.tau_d {
            cfg.integrate.tau_d = Some(d);
        }
        if let Some(dir) = &self.out_dir {
            cfg.io.out_dir = Some(dir.clone());
        }
    }
}

/// Reads a raw env value as a TOML value, falling back to a plain string.
fn env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Layers `CROWNFUSE_<SECTION>_<KEY>` variables over a parsed file.
pub fn apply_env(table: &mut toml::Table, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), Failure> {
    let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (name, raw) in vars {
        let rest = name[ENV_PREFIX.len()..].to_ascii_lowercase();
        let Some((section, key)) = SECTIONS
            .iter()
            .find_map(|s| rest.strip_prefix(s).and_then(|k| k.strip_prefix('_')).map(|k| (*s, k)))
        else {
            return Err(Failure::config_field(&name, "does not name a known config section"));
        };
        if key.is_empty() {
            return Err(Failure::config_field(&name, "missing key"));
        }
        let entry = table
            .entry(section)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let Some(sec) = entry.as_table_mut() else {
            return Err(Failure::config_field(section, "must be a table"));
        };
        sec.insert(key.to_string(), env_value(&raw));
    }
    Ok(())
}

/// Default < file < environment < flags.
pub fn load(
    path: Option<&Path>,
    vars: impl IntoIterator<Item = (String, String)>,
    overrides: &Overrides,
) -> Result<PipelineConfig, Failure> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::io(p, e))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| Failure::parse(p, e.to_string()))?
        }
        None => toml::Table::new(),
    };
    apply_env(&mut table, vars)?;
    let mut cfg: PipelineConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
        let f = Failure::config(e.message().to_string());
        match path {
            Some(p) => f.with_file(p),
            None => f,
        }
    })?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}
