//! Pipeline configuration.
//!
//! A single JSON file. Relative paths resolve against the file's directory. Command-line
//! flags take precedence over the file, which takes precedence over built-in defaults.

use std::path::{Path, PathBuf};

use arbor_core::flowfield::FlowParams;
use arbor_core::medialaxis::TraceParams;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Cameras JSON array.
    pub cameras: PathBuf,
    /// Directory of per-image annotation JSON files.
    pub annotations: PathBuf,
    pub output: PathBuf,
    /// Directory of `<image_id>.png|jpg` photographs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    /// Externally produced branch masks `<image_id>.png`; rasterized annotations otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<PathBuf>,
    /// Binary PLY point cloud.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud: Option<PathBuf>,
    /// Frame directories of the two video feeds to synchronize.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_a: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_b: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncConfig {
    pub fps: f64,
    pub max_lag: usize,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self { fps: 30.0, max_lag: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub crops_per_image: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { crops_per_image: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiviewConfig {
    pub clamp_alpha: f64,
    /// Interior vertices inserted per 3D edge.
    pub subdivisions: usize,
    pub reregister: bool,
}

impl Default for MultiviewConfig {
    fn default() -> Self {
        Self {
            clamp_alpha: arbor_core::multiview::DEFAULT_CLAMP_FRACTION,
            subdivisions: 2,
            reregister: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkinConfig {
    pub ring_sides: usize,
    pub samples_per_segment: usize,
}

impl Default for SkinConfig {
    fn default() -> Self {
        Self {
            ring_sides: 16,
            samples_per_segment: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisplaceConfig {
    pub sample_radius: f64,
    pub sample_height: f64,
    pub smooth_iterations: usize,
    pub smooth_lambda: f64,
}

impl Default for DisplaceConfig {
    fn default() -> Self {
        Self {
            sample_radius: 0.02,
            sample_height: 0.05,
            smooth_iterations: 2,
            smooth_lambda: 0.5,
        }
    }
}

/// Where vertex colors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureSource {
    /// The point cloud when configured, else the photographs.
    #[default]
    Auto,
    Cloud,
    Images,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextureConfig {
    pub source: TextureSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    /// Wood density, kg/m³.
    pub density: f64,
    pub stiffness: f64,
    pub damping: f64,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            density: 700.0,
            stiffness: 1000.0,
            damping: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sync: SyncConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub flow: FlowParams,
    #[serde(default)]
    pub trace: TraceParams,
    #[serde(default)]
    pub multiview: MultiviewConfig,
    #[serde(default)]
    pub skin: SkinConfig,
    #[serde(default)]
    pub displace: DisplaceConfig,
    #[serde(default)]
    pub texture: TextureConfig,
    #[serde(default)]
    pub export: ExportConfig,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    /// Reads, resolves and validates a config file. Every referenced input path must
    /// exist; the output directory is created on demand.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|_| CliError::ConfigPathMissing {
            field: "config".into(),
            path: path.to_path_buf(),
        })?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| CliError::ConfigParse(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for field in [&mut p.cameras, &mut p.annotations, &mut p.output] {
            *field = resolve(base, field);
        }
        for f in [&mut p.images, &mut p.masks, &mut p.cloud, &mut p.video_a, &mut p.video_b].into_iter().flatten() {
            *f = resolve(base, f);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.paths;
        let mut required: Vec<(&str, &Path)> = vec![("cameras", &p.cameras), ("annotations", &p.annotations)];
        for (name, opt) in [
            ("images", &p.images),
            ("masks", &p.masks),
            ("cloud", &p.cloud),
            ("video_a", &p.video_a),
            ("video_b", &p.video_b),
        ] {
            if let Some(path) = opt {
                required.push((name, path));
            }
        }
        for (field, path) in required {
            if !path.exists() {
                return Err(CliError::ConfigPathMissing {
                    field: field.into(),
                    path: path.to_path_buf(),
                });
            }
        }
        if p.video_a.is_some() != p.video_b.is_some() {
            return Err(CliError::ConfigInvalid("video_a and video_b must be given together".into()));
        }
        let bad = |m: String| Err(CliError::ConfigInvalid(m));
        self.flow.kernel.validate().map_err(|e| CliError::ConfigInvalid(format!("flow.kernel: {e}")))?;
        if self.flow.scales.is_empty() || self.flow.scales.iter().any(|s| !(*s > 0.0)) {
            return bad("flow.scales must be non-empty and positive".into());
        }
        self.trace.validate().map_err(|e| CliError::ConfigInvalid(format!("trace: {e}")))?;
        if !(self.sync.fps > 0.0) {
            return bad("sync.fps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.multiview.clamp_alpha) {
            return bad(format!("multiview.clamp_alpha {} outside [0, 1]", self.multiview.clamp_alpha));
        }
        if self.skin.ring_sides < 3 || self.skin.samples_per_segment < 1 {
            return bad("skin.ring_sides must be >= 3 and skin.samples_per_segment >= 1".into());
        }
        let d = &self.displace;
        if !(d.sample_radius > 0.0 && d.sample_height > 0.0) {
            return bad("displace sampling region must have positive size".into());
        }
        if !(d.smooth_lambda > 0.0 && d.smooth_lambda <= 1.0) {
            return bad(format!("displace.smooth_lambda {} outside (0, 1]", d.smooth_lambda));
        }
        let e = &self.export;
        if !(e.density > 0.0) || e.stiffness < 0.0 || e.damping < 0.0 {
            return bad("export.density must be positive and joint defaults non-negative".into());
        }
        Ok(())
    }
}
