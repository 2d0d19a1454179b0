//! Stage runners. Each stage reads its inputs, computes its outputs in memory, and hands
//! them to [`Runner::stage`], which skips up-to-date stages, writes files atomically and
//! records hashes in the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use arbor_core::annotation::{gen_crops, extract_crop, rasterize_mask, CropSpec, ImageAnnotation};
use arbor_core::camera::{cameras_from_json, cameras_to_json, CameraSet};
use arbor_core::flowfield::{compute_flow, flow_to_hsv, read_ffld, write_ffld, FlowField};
use arbor_core::io::{obj_string, parse_ply, to_json_bytes};
use arbor_core::medialaxis::{trace, MedialAxisPolyline};
use arbor_core::multiview::{
    clamp_narrow_baseline, reregister_misaligned, subdivide_curves, transfer_topology, triangulate_keypoints,
    Branch3D, Keypoint3D, ReportEntry,
};
use arbor_core::treegeom::{
    bind_orphan_points, displace_mesh, export_rigid_bodies, skeleton_from_branches, skin_skeleton, smooth,
    texture_from_images, texture_nearest, PointCloud, SkinnedMesh, TreeSkeleton,
};
use arbor_core::videosync::{best_offset, frame_diff_sequence, load_frame_dir};
use arbor_core::Grid;
use serde::Serialize;
use serde_json::json;

use crate::config::{PipelineConfig, TextureSource};
use crate::error::CliError;
use crate::manifest::{sha256_hex, Manifest, StageRecord, MANIFEST_FILE};

pub const LOCK_FILE: &str = ".arbor.lock";

/// Output file names inside the output directory.
pub mod artifacts {
    pub const SYNC: &str = "sync.json";
    pub const MASKS: &str = "masks";
    pub const DATASET: &str = "dataset";
    pub const FLOW: &str = "flow";
    pub const TRACES: &str = "traces";
    pub const KEYPOINTS: &str = "keypoints.json";
    pub const BRANCH: &str = "branch3d.json";
    pub const TRIANGULATION_REPORT: &str = "triangulation_report.json";
    pub const CAMERAS: &str = "cameras_registered.json";
    pub const SKELETON: &str = "skeleton.json";
    pub const MESH_SKIN: &str = "mesh_skin.json";
    pub const MESH_DISPLACED: &str = "mesh_displaced.json";
    pub const DISPLACE_REPORT: &str = "displace_report.json";
    pub const MESH: &str = "mesh.json";
    pub const MESH_OBJ: &str = "mesh.obj";
    pub const TEXTURE_REPORT: &str = "texture_report.json";
    pub const BINDINGS: &str = "bindings.json";
    pub const RIGID_BODIES: &str = "rigid_bodies.json";
}
use artifacts as a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum Stage {
    Sync,
    Rasterize,
    Dataset,
    Flow,
    Trace,
    Triangulate,
    Skeleton,
    Skin,
    Displace,
    Texture,
    Bind,
    Export,
    All,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Sync => "sync",
            Stage::Rasterize => "rasterize",
            Stage::Dataset => "dataset",
            Stage::Flow => "flow",
            Stage::Trace => "trace",
            Stage::Triangulate => "triangulate",
            Stage::Skeleton => "skeleton",
            Stage::Skin => "skin",
            Stage::Displace => "displace",
            Stage::Texture => "texture",
            Stage::Bind => "bind",
            Stage::Export => "export",
            Stage::All => "all",
        }
    }
}

/// What one stage produced.
#[derive(Debug, Default)]
struct Produced {
    files: Vec<(String, Vec<u8>)>,
    notes: Vec<String>,
    stdout: Option<String>,
}

impl Produced {
    fn json<T: Serialize + ?Sized>(&mut self, rel: impl Into<String>, value: &T) {
        self.files.push((rel.into(), to_json_bytes(value)));
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    UpToDate,
    Skipped(String),
}

/// Removes the lock file when dropped.
struct LockGuard(PathBuf);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

pub struct Runner {
    cfg: PipelineConfig,
    out: PathBuf,
    force: bool,
    manifest: Manifest,
    _lock: LockGuard,
    pub log: Vec<(Stage, StageOutcome)>,
    pub stdout: Vec<String>,
}

fn list_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>, CliError> {
    let rd = fs::read_dir(dir).map_err(|source| arbor_core::io::IoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| exts.iter().any(|x| x.eq_ignore_ascii_case(e)))
        })
        .collect();
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn read_bytes(stage: &'static str, p: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(p).map_err(|_| CliError::InputMissing {
        stage,
        path: p.to_path_buf(),
    })
}

fn parse_json<T: serde::de::DeserializeOwned>(stage: &'static str, p: &Path, bytes: &[u8]) -> Result<T, CliError> {
    serde_json::from_slice(bytes).map_err(|e| CliError::stage(stage, format!("{}: {e}", p.display())))
}

fn png_bytes(img: image::DynamicImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).expect("PNG encoding to memory");
    buf.into_inner()
}

impl Runner {
    pub fn new(cfg: PipelineConfig, force: bool) -> Result<Self, CliError> {
        let out = cfg.paths.output.clone();
        fs::create_dir_all(&out).map_err(|source| arbor_core::io::IoError::Io { path: out.clone(), source })?;
        let lock = out.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => return Err(CliError::Locked(lock)),
            Err(source) => return Err(arbor_core::io::IoError::Io { path: lock, source }.into()),
        }
        let manifest = Manifest::load(&out);
        Ok(Self {
            cfg,
            out,
            force,
            manifest,
            _lock: LockGuard(lock),
            log: Vec::new(),
            stdout: Vec::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn run(&mut self, stage: Stage) -> Result<(), CliError> {
        if stage != Stage::All {
            let outcome = self.run_one(stage, true)?;
            self.log.push((stage, outcome));
            return Ok(());
        }
        for s in [
            Stage::Sync,
            Stage::Rasterize,
            Stage::Dataset,
            Stage::Flow,
            Stage::Trace,
            Stage::Triangulate,
            Stage::Skeleton,
            Stage::Skin,
            Stage::Displace,
            Stage::Texture,
            Stage::Bind,
            Stage::Export,
        ] {
            let outcome = self.run_one(s, false)?;
            self.log.push((s, outcome));
        }
        Ok(())
    }

    /// `explicit` stages fail on missing optional inputs; within `all` they are skipped.
    fn run_one(&mut self, stage: Stage, explicit: bool) -> Result<StageOutcome, CliError> {
        let p = self.cfg.paths.clone();
        let optional = |field: &'static str, present: bool| -> Result<Option<StageOutcome>, CliError> {
            match (present, explicit) {
                (true, _) => Ok(None),
                (false, true) => Err(CliError::ConfigFieldMissing { stage: stage.name(), field }),
                (false, false) => Ok(Some(StageOutcome::Skipped(format!("paths.{field} not configured")))),
            }
        };
        match stage {
            Stage::Sync => {
                if let Some(s) = optional("video_a", p.video_a.is_some())? {
                    return Ok(s);
                }
                self.sync()
            }
            Stage::Rasterize => self.rasterize(),
            Stage::Dataset => {
                if let Some(s) = optional("images", p.images.is_some())? {
                    return Ok(s);
                }
                self.dataset()
            }
            Stage::Flow => self.flow(),
            Stage::Trace => self.trace(),
            Stage::Triangulate => self.triangulate(),
            Stage::Skeleton => self.skeleton(),
            Stage::Skin => self.skin(),
            Stage::Displace => {
                if let Some(s) = optional("cloud", p.cloud.is_some())? {
                    return Ok(s);
                }
                self.displace()
            }
            Stage::Texture => self.texture(),
            Stage::Bind => {
                if let Some(s) = optional("cloud", p.cloud.is_some())? {
                    return Ok(s);
                }
                self.bind()
            }
            Stage::Export => self.export(),
            Stage::All => unreachable!("expanded by run"),
        }
    }

    /// Hashes inputs, skips when current, otherwise runs `body` and records the result.
    fn stage(
        &mut self,
        stage: Stage,
        inputs: Vec<(String, Vec<u8>)>,
        params: serde_json::Value,
        body: impl FnOnce(&BTreeMap<String, Vec<u8>>) -> Result<Produced, CliError>,
    ) -> Result<StageOutcome, CliError> {
        let hashes: BTreeMap<String, String> = inputs.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect();
        if !self.force && self.manifest.is_current(&self.out, stage.name(), &hashes, &params) {
            return Ok(StageOutcome::UpToDate);
        }
        let data: BTreeMap<String, Vec<u8>> = inputs.into_iter().collect();
        let produced = body(&data)?;
        // Remove files this stage wrote last time but no longer produces.
        if let Some(prev) = self.manifest.stages.get(stage.name()) {
            for rel in prev.outputs.keys() {
                if !produced.files.iter().any(|(r, _)| r == rel) {
                    let _ = fs::remove_file(self.out.join(rel));
                }
            }
        }
        let mut outputs = BTreeMap::new();
        for (rel, bytes) in &produced.files {
            arbor_core::io::atomic_write(&self.out.join(rel), bytes)?;
            outputs.insert(rel.clone(), sha256_hex(bytes));
        }
        if let Some(s) = produced.stdout {
            self.stdout.push(s);
        }
        self.manifest.stages.insert(
            stage.name().to_owned(),
            StageRecord {
                params,
                inputs: hashes,
                outputs,
                notes: produced.notes,
            },
        );
        arbor_core::io::write_json(&self.out.join(MANIFEST_FILE), &self.manifest)?;
        Ok(StageOutcome::Ran)
    }

    fn input_files(&self, stage: &'static str, label: &str, dir: &Path, exts: &[&str]) -> Result<Vec<(String, Vec<u8>)>, CliError> {
        list_files(dir, exts)?
            .into_iter()
            .map(|f| Ok((format!("{label}:{}", file_name(&f)), read_bytes(stage, &f)?)))
            .collect()
    }

    fn out_input(&self, stage: &'static str, rel: &str) -> Result<(String, Vec<u8>), CliError> {
        Ok((format!("out:{rel}"), read_bytes(stage, &self.out.join(rel))?))
    }

    fn annotations(&self, stage: &'static str) -> Result<Vec<(String, Vec<u8>)>, CliError> {
        self.input_files(stage, "annotations", &self.cfg.paths.annotations, &["json"])
    }

    fn cameras_input(&self, stage: &'static str) -> Result<(String, Vec<u8>), CliError> {
        Ok(("cameras".to_owned(), read_bytes(stage, &self.cfg.paths.cameras)?))
    }

    fn sync(&mut self) -> Result<StageOutcome, CliError> {
        const S: &str = "sync";
        let (da, db) = (self.cfg.paths.video_a.clone().unwrap(), self.cfg.paths.video_b.clone().unwrap());
        let mut inputs = self.input_files(S, "video_a", &da, &["png", "jpg", "jpeg"])?;
        inputs.extend(self.input_files(S, "video_b", &db, &["png", "jpg", "jpeg"])?);
        let params = serde_json::to_value(&self.cfg.sync).unwrap();
        let sc = self.cfg.sync.clone();
        self.stage(Stage::Sync, inputs, params, |_| {
            let fa = load_frame_dir(&da).map_err(|e| CliError::stage(S, e))?;
            let fb = load_frame_dir(&db).map_err(|e| CliError::stage(S, e))?;
            let sa = frame_diff_sequence(&fa, sc.fps).map_err(|e| CliError::stage(S, e))?;
            let sb = frame_diff_sequence(&fb, sc.fps).map_err(|e| CliError::stage(S, e))?;
            // Short overlaps correlate trivially, so lags stay within half the series.
            let cap = sa.len().min(sb.len()) / 2;
            let mut p = Produced::default();
            let max_lag = if sc.max_lag > cap {
                p.notes.push(format!("max_lag {} capped to {cap}", sc.max_lag));
                cap
            } else {
                sc.max_lag
            };
            let offset = best_offset(&sa, &sb, max_lag).map_err(|e| CliError::stage(S, e))?;
            p.json(
                a::SYNC,
                &json!({
                    "offset": offset,
                    "fps": sc.fps,
                    "max_lag": max_lag,
                    "max_temporal_error_s": sa.max_temporal_error(),
                    "frames_a": fa.len(),
                    "frames_b": fb.len(),
                }),
            );
            p.stdout = Some(offset.to_string());
            Ok(p)
        })
    }

    fn parse_annotations(data: &BTreeMap<String, Vec<u8>>, stage: &'static str) -> Result<Vec<ImageAnnotation>, CliError> {
        data.iter()
            .filter(|(k, _)| k.starts_with("annotations:"))
            .map(|(k, v)| parse_json(stage, Path::new(k), v))
            .collect()
    }

    fn rasterize(&mut self) -> Result<StageOutcome, CliError> {
        const S: &str = "rasterize";
        let inputs = self.annotations(S)?;
        self.stage(Stage::Rasterize, inputs, json!({}), |data| {
            let mut p = Produced::default();
            for ann in Self::parse_annotations(data, S)? {
                match rasterize_mask(&ann) {
                    Ok(mask) => p.files.push((
                        format!("{}/{}.png", a::MASKS, ann.image_id),
                        png_bytes(image::DynamicImage::ImageLuma8(mask.to_gray_image())),
                    )),
                    Err(e) => p.notes.push(format!("{}: {e}", ann.image_id)),
                }
            }
            Ok(p)
        })
    }

    /// Mask files: the configured external masks, else the rasterized ones.
    fn mask_inputs(&self, stage: &'static str) -> Result<Vec<(String, Vec<u8>)>, CliError> {
        match &self.cfg.paths.masks {
            Some(dir) => self.input_files(stage, "masks", dir, &["png"]),
            None => {
                let dir = self.out.join(a::MASKS);
                if !dir.is_dir() {
                    return Err(CliError::InputMissing { stage, path: dir });
                }
                self.input_files(stage, "out:masks", &dir, &["png"])
            }
        }
    }

    fn decode_mask(stage: &'static str, label: &str, bytes: &[u8]) -> Result<Grid<u8>, CliError> {
        let img = image::load_from_memory(bytes).map_err(|e| CliError::stage(stage, format!("{label}: {e}")))?;
        Ok(Grid::from_gray_image(&img.to_luma8()))
    }

    fn mask_id(label: &str) -> Option<&str> {
        label.rsplit(':').next()?.strip_suffix(".png")
    }

    fn dataset(&mut self) -> Result<StageOutcome, CliError> {
        const S: &str = "dataset";
        let mut inputs = self.mask_inputs(S)?;
        let images = self.cfg.paths.images.clone().unwrap();
        inputs.extend(self.input_files(S, "images", &images, &["png", "jpg", "jpeg"])?);
        let (n, seed) = (self.cfg.dataset.crops_per_image, self.cfg.seed);
        let params = json!({ "dataset": self.cfg.dataset, "seed": seed });
        self.stage(Stage::Dataset, inputs, params, |data| {
            let mut p = Produced::default();
            let images: BTreeMap<&str, &Vec<u8>> = data
                .iter()
                .filter(|(k, _)| k.starts_with("images:"))
                .filter_map(|(k, v)| Some((Path::new(k.strip_prefix("images:")?).file_stem()?.to_str()?, v)))
                .collect();
            let mut all: Vec<CropSpec> = Vec::new();
            let masks = data.iter().filter(|(k, _)| !k.starts_with("images:"));
            for (i, (label, bytes)) in masks.enumerate() {
                let Some(id) = Self::mask_id(label) else { continue };
                let Some(img_bytes) = images.get(id) else {
                    p.notes.push(format!("no image for mask {id}"));
                    continue;
                };
                let mask = Self::decode_mask(S, label, bytes)?;
                let img = image::load_from_memory(img_bytes).map_err(|e| CliError::stage(S, format!("{id}: {e}")))?.to_rgb8();
                let dims = (img.width() as usize, img.height() as usize);
                let crops = match gen_crops(dims, &mask, (id, id), n, seed.wrapping_add(i as u64)) {
                    Ok(c) => c,
                    Err(e) => {
                        p.notes.push(format!("{id}: {e}"));
                        continue;
                    }
                };
                if crops.len() < n {
                    p.notes.push(format!("{id}: {} of {n} crops placed", crops.len()));
                }
                let rgb = Grid::from_fn(dims.0, dims.1, |x, y| img.get_pixel(x as u32, y as u32).0);
                for (k, c) in crops.iter().enumerate() {
                    let m = extract_crop(&mask, c);
                    let im = extract_crop(&rgb, c);
                    let raw: Vec<u8> = im.data().iter().flatten().copied().collect();
                    let im = image::RgbImage::from_raw(im.width() as u32, im.height() as u32, raw).expect("crop buffer");
                    p.files.push((format!("{}/{id}_{k:03}_image.png", a::DATASET), png_bytes(im.into())));
                    p.files.push((format!("{}/{id}_{k:03}_mask.png", a::DATASET), png_bytes(image::DynamicImage::ImageLuma8(m.to_gray_image()))));
                }
                all.extend(crops);
            }
            p.json(format!("{}/crops.json", a::DATASET), &all);
            Ok(p)
        })
    }

    fn flow(&mut self) -> Result<StageOutcome, CliError> {
        const S: &str = "flow";
        let inputs = self.mask_inputs(S)?;
        let params = serde_json::to_value(&self.cfg.flow).unwrap();
        let fp = self.cfg.flow.clone();
        self.stage(Stage::Flow, inputs, params, |data| {
            use rayon::prelude::*;
            let jobs: Vec<(&String, &Vec<u8>)> = data.iter().collect();
            let results: Vec<Result<Vec<(String, Vec<u8>)>, CliError>> = jobs
                .par_iter()
                .map(|(label, bytes)| {
                    let id = Self::mask_id(label).unwrap_or(label);
                    let mask = Self::decode_mask(S, label, bytes)?;
                    let field = compute_flow(&mask, &fp).map_err(|e| CliError::stage(S, format!("{id}: {e}")))?;
                    let mut ffld = Vec::new();
                    write_ffld(&field, &mut ffld).expect("write to memory");
                    Ok(vec![
                        (format!("{}/{id}.ffld", a::FLOW), ffld),
                        (format!("{}/{id}.png", a::FLOW), png_bytes(flow_to_hsv(&field).into())),
                    ])
                })
                .collect();
            let mut p = Produced::default();
            for r in results {
                p.files.extend(r?);
            }
            Ok(p)
        })
    }

    fn trace(&mut self) -> Result<StageOutcome, CliError> {
        const S: &str = "trace";
        let mut inputs = self.annotations(S)?;
        let flow_dir = self.out.join(a::FLOW);
        if !flow_dir.is_dir() {
            return Err(CliError::InputMissing { stage: S, path: flow_dir });
        }
        inputs.extend(self.input_files(S, "out:flow", &flow_dir, &["ffld"])?);
        let params = serde_json::to_value(self.cfg.trace).unwrap();
        let tp = self.cfg.trace;
        self.stage(Stage::Trace, inputs, params, |data| {
            let mut p = Produced::default();
            for ann in Self::parse_annotations(data, S)? {
                let Some(bytes) = data.get(&format!("out:flow:{}.ffld", ann.image_id)) else {
                    p.notes.push(format!("{}: no flow field", ann.image_id));
                    continue;
                };
                let field: FlowField = read_ffld(bytes.as_slice()).map_err(|e| CliError::stage(S, e))?;
                #[derive(Serialize)]
                struct Traced {
                    from: String,
                    to: String,
                    #[serde(skip_serializing_if = "Option::is_none")]
                    polyline: Option<MedialAxisPolyline>,
                    #[serde(skip_serializing_if = "Option::is_none")]
                    error: Option<String>,
                }
                let traced: Vec<Traced> = ann
                    .keypoint_curves()
                    .iter()
                    .map(|c| {
                        let (p0, p1) = (c.at_fraction(0.0).0, c.at_fraction(1.0).0);
                        let r = trace(&field, p0, Some(p1), &tp);
                        Traced {
                            from: c.from.0.clone(),
                            to: c.to.0.clone(),
                            error: r.as_ref().err().map(|e| e.to_string()),
                            polyline: r.ok(),
                        }
                    })
                    .collect();
                p.json(format!("{}/{}.json", a::TRACES, ann.image_id), &traced);
            }
            Ok(p)
        })
    }

    fn triangulate(&mut self) -> Result<StageOutcome, CliError> {
        const S: &str = "triangulate";
        let mut inputs = self.annotations(S)?;
        inputs.push(self.cameras_input(S)?);
        let params = serde_json::to_value(&self.cfg.multiview).unwrap();
        let mv = self.cfg.multiview.clone();
        self.stage(Stage::Triangulate, inputs, params, |data| {
            let anns = Self::parse_annotations(data, S)?;
            let text = std::str::from_utf8(&data["cameras"]).map_err(|e| CliError::stage(S, e))?;
            let mut cameras: CameraSet = cameras_from_json(text).map_err(|e| CliError::stage(S, e))?;
            let (mut kps, mut report): (Vec<Keypoint3D>, Vec<ReportEntry>) = triangulate_keypoints(&anns, &cameras);
            let mut p = Produced::default();
            if mv.reregister && cameras.values().any(|c| !c.aligned) {
                let rr = reregister_misaligned(&kps, &anns, &cameras);
                report.extend(rr.report);
                kps = rr.keypoints;
                cameras = rr.cameras;
                p.files.push((a::CAMERAS.to_owned(), cameras_to_json(&cameras).into_bytes()));
            }
            if kps.is_empty() {
                return Err(CliError::stage(S, "no keypoint could be triangulated"));
            }
            let (branch, r) = transfer_topology(&anns, &kps);
            report.extend(r);
            let (mut branch, r) = subdivide_curves(&branch, &anns, &cameras, mv.subdivisions);
            report.extend(r);
            for root in branch.roots.clone() {
                branch = clamp_narrow_baseline(&branch, root, &cameras, mv.clamp_alpha).map_err(|e| CliError::stage(S, e))?;
            }
            p.json(a::KEYPOINTS, &kps);
            p.json(a::BRANCH, &branch);
            p.json(a::TRIANGULATION_REPORT, &report);
            p.notes.extend(report.iter().map(|e| serde_json::to_string(e).unwrap()));
            Ok(p)
        })
    }

    fn skeleton(&mut self) -> Result<StageOutcome, CliError> {
        const S: &str = "skeleton";
        let inputs = vec![self.out_input(S, a::BRANCH)?];
        let sps = self.cfg.skin.samples_per_segment;
        self.stage(Stage::Skeleton, inputs, json!({ "samples_per_segment": sps }), |data| {
            let branch: Branch3D = parse_json(S, Path::new(a::BRANCH), &data[&format!("out:{}", a::BRANCH)])?;
            let skel = skeleton_from_branches(&branch, sps).map_err(|e| CliError::stage(S, e))?;
            let mut p = Produced::default();
            p.json(a::SKELETON, &skel);
            Ok(p)
        })
    }

    fn load_skeleton(data: &BTreeMap<String, Vec<u8>>, stage: &'static str) -> Result<TreeSkeleton, CliError> {
        parse_json(stage, Path::new(a::SKELETON), &data[&format!("out:{}", a::SKELETON)])
    }

    fn skin(&mut self) -> Result<StageOutcome, CliError> {
        const S: &str = "skin";
        let inputs = vec![self.out_input(S, a::SKELETON)?];
        let sides = self.cfg.skin.ring_sides;
        self.stage(Stage::Skin, inputs, json!({ "ring_sides": sides }), |data| {
            let skel = Self::load_skeleton(data, S)?;
            let mesh = skin_skeleton(&skel, sides).map_err(|e| CliError::stage(S, e))?;
            let mut p = Produced::default();
            p.json(a::MESH_SKIN, &mesh);
            Ok(p)
        })
    }

    fn cloud_input(&self, stage: &'static str) -> Result<(String, Vec<u8>), CliError> {
        let path = self.cfg.paths.cloud.as_ref().unwrap();
        Ok(("cloud".to_owned(), read_bytes(stage, path)?))
    }

    fn parse_cloud(stage: &'static str, data: &BTreeMap<String, Vec<u8>>) -> Result<PointCloud, CliError> {
        let cloud = parse_ply(&data["cloud"]).map_err(|e| CliError::stage(stage, e))?;
        if cloud.is_empty() {
            return Err(CliError::stage(stage, "point cloud is empty"));
        }
        Ok(cloud)
    }

    fn displace(&mut self) -> Result<StageOutcome, CliError> {
        const S: &str = "displace";
        let inputs = vec![self.out_input(S, a::MESH_SKIN)?, self.cloud_input(S)?];
        let d = self.cfg.displace.clone();
        self.stage(Stage::Displace, inputs, serde_json::to_value(&d).unwrap(), |data| {
            let mesh: SkinnedMesh = parse_json(S, Path::new(a::MESH_SKIN), &data[&format!("out:{}", a::MESH_SKIN)])?;
            let cloud = Self::parse_cloud(S, data)?;
            let (mesh, report) = displace_mesh(&mesh, &cloud, d.sample_radius, d.sample_height).map_err(|e| CliError::stage(S, e))?;
            let (mesh, energies) = smooth(&mesh, d.smooth_iterations, d.smooth_lambda).map_err(|e| CliError::stage(S, e))?;
            let mut p = Produced::default();
            p.notes.extend(report.warnings.iter().cloned());
            p.json(a::MESH_DISPLACED, &mesh);
            p.json(a::DISPLACE_REPORT, &json!({ "displacement": report, "smoothing_energy": energies }));
            Ok(p)
        })
    }

    fn texture(&mut self) -> Result<StageOutcome, CliError> {
        const S: &str = "texture";
        let source = match (self.cfg.texture.source, self.cfg.paths.cloud.is_some(), self.cfg.paths.images.is_some()) {
            (TextureSource::Cloud, false, _) => return Err(CliError::ConfigFieldMissing { stage: S, field: "cloud" }),
            (TextureSource::Images, _, false) => return Err(CliError::ConfigFieldMissing { stage: S, field: "images" }),
            (TextureSource::Auto, true, _) | (TextureSource::Cloud, true, _) => Some(TextureSource::Cloud),
            (TextureSource::Auto, false, true) | (TextureSource::Images, _, true) => Some(TextureSource::Images),
            (TextureSource::Auto, false, false) => None,
        };
        let mesh_rel = if self.cfg.paths.cloud.is_some() { a::MESH_DISPLACED } else { a::MESH_SKIN };
        let mut inputs = vec![self.out_input(S, mesh_rel)?];
        match source {
            Some(TextureSource::Cloud) => inputs.push(self.cloud_input(S)?),
            Some(TextureSource::Images) => {
                inputs.push(self.out_input(S, a::SKELETON)?);
                inputs.push(self.cameras_input(S)?);
                inputs.extend(self.annotations(S)?);
                let dir = self.cfg.paths.images.clone().unwrap();
                inputs.extend(self.input_files(S, "images", &dir, &["png", "jpg", "jpeg"])?);
            }
            _ => {}
        }
        let params = json!({ "source": source.map(|s| format!("{s:?}").to_lowercase()) });
        self.stage(Stage::Texture, inputs, params, |data| {
            let mut mesh: SkinnedMesh = parse_json(S, Path::new(mesh_rel), &data[&format!("out:{mesh_rel}")])?;
            let mut p = Produced::default();
            let report = match source {
                Some(TextureSource::Cloud) => {
                    let cloud = Self::parse_cloud(S, data)?;
                    let colors = texture_nearest(&mesh, &cloud).map_err(|e| CliError::stage(S, e))?;
                    for (v, c) in mesh.vertices.iter_mut().zip(colors) {
                        v.color = c;
                    }
                    json!({ "source": "cloud", "uncolored": [] })
                }
                Some(TextureSource::Images) => {
                    let skel = Self::load_skeleton(data, S)?;
                    let cams = cameras_from_json(std::str::from_utf8(&data["cameras"]).map_err(|e| CliError::stage(S, e))?)
                        .map_err(|e| CliError::stage(S, e))?;
                    let anns = Self::parse_annotations(data, S)?;
                    let mut images = BTreeMap::new();
                    for (k, v) in data.iter().filter(|(k, _)| k.starts_with("images:")) {
                        let stem = Path::new(&k["images:".len()..]).file_stem().unwrap().to_string_lossy().into_owned();
                        let img = image::load_from_memory(v).map_err(|e| CliError::stage(S, format!("{k}: {e}")))?;
                        images.insert(stem, img.to_rgb8());
                    }
                    let res = texture_from_images(&mesh, &skel, &anns, &cams, &images);
                    for (v, c) in mesh.vertices.iter_mut().zip(&res.colors) {
                        if let Some(c) = c {
                            v.color = *c;
                        }
                    }
                    if !res.uncolored.is_empty() {
                        p.notes.push(format!("{} vertices uncolored", res.uncolored.len()));
                    }
                    json!({ "source": "images", "uncolored": res.uncolored })
                }
                _ => {
                    p.notes.push("no color source configured; default color kept".into());
                    json!({ "source": null, "uncolored": [] })
                }
            };
            p.json(a::MESH, &mesh);
            p.files.push((a::MESH_OBJ.to_owned(), obj_string(&mesh).into_bytes()));
            p.json(a::TEXTURE_REPORT, &report);
            Ok(p)
        })
    }

    fn bind(&mut self) -> Result<StageOutcome, CliError> {
        const S: &str = "bind";
        let inputs = vec![self.out_input(S, a::SKELETON)?, self.cloud_input(S)?];
        self.stage(Stage::Bind, inputs, json!({}), |data| {
            let skel = Self::load_skeleton(data, S)?;
            let cloud = Self::parse_cloud(S, data)?;
            let binds = bind_orphan_points(&cloud.positions(), &skel).map_err(|e| CliError::stage(S, e))?;
            let mut p = Produced::default();
            p.json(a::BINDINGS, &binds);
            Ok(p)
        })
    }

    fn export(&mut self) -> Result<StageOutcome, CliError> {
        const S: &str = "export";
        let inputs = vec![self.out_input(S, a::SKELETON)?];
        let e = self.cfg.export.clone();
        self.stage(Stage::Export, inputs, serde_json::to_value(&e).unwrap(), |data| {
            let skel = Self::load_skeleton(data, S)?;
            let model = export_rigid_bodies(&skel, e.density, e.stiffness, e.damping).map_err(|err| CliError::stage(S, err))?;
            let mut p = Produced::default();
            p.json(a::RIGID_BODIES, &model);
            Ok(p)
        })
    }
}
