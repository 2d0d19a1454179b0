//! Versioned annotation documents, image and camera registries, and flow/trace caches.
//!
//! All methods are blocking; the HTTP layer runs them on the blocking pool.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use arbor_core::annotation::{rasterize_mask, validate, ImageAnnotation};
use arbor_core::camera::{cameras_from_json, Camera, CameraSet};
use arbor_core::flowfield::{compute_flow, read_ffld, write_ffld, FlowField, FlowParams};
use arbor_core::io::{atomic_write, read_json, write_json};
use arbor_core::medialaxis::{trace, TraceParams};
use arbor_core::multiview::{project_branch, Branch3D, OverlaySegment};
use arbor_core::{Grid, Vec2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::ApiError;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Trace results kept in memory before the cache is reset.
const TRACE_CACHE_LIMIT: usize = 4096;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Directory of `<image_id>.png|jpg|jpeg` photographs.
    pub images: PathBuf,
    /// Directory of `<image_id>.json` annotation documents, read and written.
    pub annotations: PathBuf,
    /// Cameras JSON array.
    pub cameras: PathBuf,
    /// Optional `<image_id>.png` branch masks; rasterized annotations otherwise.
    pub masks: Option<PathBuf>,
    /// Optional `Branch3D` JSON used for reprojection overlays, re-read on every request.
    pub model: Option<PathBuf>,
    /// Version records and cached flow fields.
    pub state: PathBuf,
    pub flow: FlowParams,
}

#[derive(Debug, Error)]
pub enum OpenError {
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("malformed cameras file: {0}")]
    Cameras(#[from] arbor_core::camera::CamerasFileError),
    #[error("duplicate image id {0}")]
    DuplicateImage(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageInfo {
    pub id: String,
    pub camera_id: String,
    pub width: u32,
    pub height: u32,
    pub version: u64,
}

#[derive(Debug, Clone)]
struct ImageEntry {
    path: PathBuf,
    content_type: &'static str,
    width: u32,
    height: u32,
}

/// A document as stored: version 0 means nothing has been written yet.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Versioned {
    pub version: u64,
    pub document: Option<Arc<ImageAnnotation>>,
}

#[derive(Serialize, Deserialize)]
struct VersionRecord {
    version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRequest {
    pub p0: [f64; 2],
    #[serde(default)]
    pub p1: Option<[f64; 2]>,
    #[serde(default)]
    pub params: TraceParams,
}

/// A flow field together with its FFLD encoding and cache key.
#[derive(Debug)]
pub struct CachedFlow {
    pub key: String,
    pub field: FlowField,
    pub ffld: Vec<u8>,
}

/// Counters for cache audits.
#[derive(Debug, Default)]
pub struct Stats {
    pub flow_computed: AtomicU64,
    pub flow_disk_hits: AtomicU64,
    pub trace_computed: AtomicU64,
    pub trace_hits: AtomicU64,
}

pub struct AnnotationStore {
    cfg: ServerConfig,
    images: BTreeMap<String, ImageEntry>,
    cameras: CameraSet,
    docs: RwLock<HashMap<String, Versioned>>,
    writers: HashMap<String, Mutex<()>>,
    flows: HashMap<String, Mutex<Option<Arc<CachedFlow>>>>,
    traces: Mutex<HashMap<String, Arc<Vec<u8>>>>,
    pub stats: Stats,
}

fn read_err(path: &Path) -> impl FnOnce(std::io::Error) -> OpenError + '_ {
    move |e| OpenError::Read {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

fn hash_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

impl AnnotationStore {
    pub fn open(cfg: ServerConfig) -> Result<Self, OpenError> {
        let cam_text = std::fs::read_to_string(&cfg.cameras).map_err(read_err(&cfg.cameras))?;
        let cameras = cameras_from_json(&cam_text)?;

        let mut images = BTreeMap::new();
        let mut listing: Vec<PathBuf> = std::fs::read_dir(&cfg.images)
            .map_err(read_err(&cfg.images))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        listing.sort();
        for path in listing {
            let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
            let Some(ext) = ext.filter(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) else {
                continue;
            };
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned) else {
                continue;
            };
            let (width, height) = image::image_dimensions(&path).map_err(|e| OpenError::Read {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let content_type = if ext == "png" { "image/png" } else { "image/jpeg" };
            let entry = ImageEntry {
                path,
                content_type,
                width,
                height,
            };
            if images.insert(id.clone(), entry).is_some() {
                return Err(OpenError::DuplicateImage(id));
            }
        }

        let mut docs = HashMap::new();
        for id in images.keys() {
            let doc_path = cfg.annotations.join(format!("{id}.json"));
            let document = if doc_path.exists() {
                let doc: ImageAnnotation = read_json(&doc_path).map_err(|e| OpenError::Read {
                    path: doc_path.clone(),
                    message: e.to_string(),
                })?;
                Some(Arc::new(doc))
            } else {
                None
            };
            let rec_path = Self::version_path(&cfg.state, id);
            let stored = if rec_path.exists() {
                read_json::<VersionRecord>(&rec_path)
                    .map_err(|e| OpenError::Read {
                        path: rec_path.clone(),
                        message: e.to_string(),
                    })?
                    .version
            } else {
                0
            };
            // A document written by another tool counts as at least one revision.
            let version = stored.max(u64::from(document.is_some()));
            docs.insert(id.clone(), Versioned { version, document });
        }

        let writers = images.keys().map(|id| (id.clone(), Mutex::new(()))).collect();
        let flows = images.keys().map(|id| (id.clone(), Mutex::new(None))).collect();
        Ok(Self {
            cfg,
            images,
            cameras,
            docs: RwLock::new(docs),
            writers,
            flows,
            traces: Mutex::new(HashMap::new()),
            stats: Stats::default(),
        })
    }

    fn version_path(state: &Path, id: &str) -> PathBuf {
        state.join("versions").join(format!("{id}.json"))
    }

    fn entry(&self, id: &str) -> Result<&ImageEntry, ApiError> {
        self.images.get(id).ok_or_else(|| ApiError::UnknownImage(id.to_owned()))
    }

    pub fn images(&self) -> Vec<ImageInfo> {
        let docs = self.docs.read().unwrap_or_else(|p| p.into_inner());
        self.images
            .iter()
            .map(|(id, e)| {
                let v = docs.get(id).cloned().unwrap_or_default();
                ImageInfo {
                    id: id.clone(),
                    camera_id: Self::camera_id_of(id, &v),
                    width: e.width,
                    height: e.height,
                    version: v.version,
                }
            })
            .collect()
    }

    /// Encoded photograph and its content type.
    pub fn image_bytes(&self, id: &str) -> Result<(Vec<u8>, &'static str), ApiError> {
        let e = self.entry(id)?;
        let bytes = std::fs::read(&e.path).map_err(|err| ApiError::Internal(format!("{}: {err}", e.path.display())))?;
        Ok((bytes, e.content_type))
    }

    /// Consistent snapshot of one image's document.
    pub fn annotation(&self, id: &str) -> Result<Versioned, ApiError> {
        self.entry(id)?;
        let docs = self.docs.read().unwrap_or_else(|p| p.into_inner());
        Ok(docs.get(id).cloned().unwrap_or_default())
    }

    /// Stores `doc` if `expected` is the current version; returns the new version.
    pub fn put_annotation(&self, id: &str, doc: ImageAnnotation, expected: u64) -> Result<u64, ApiError> {
        self.entry(id)?;
        let _serial = lock(&self.writers[id]);
        let current = self.annotation(id)?.version;
        if expected != current {
            return Err(ApiError::StaleVersion { expected, current });
        }
        if doc.image_id != id {
            return Err(ApiError::ImageMismatch {
                expected: id.to_owned(),
                found: doc.image_id,
            });
        }
        let violations = validate(&doc);
        if !violations.is_empty() {
            return Err(ApiError::InvalidAnnotation(violations));
        }
        let version = current + 1;
        write_json(&self.cfg.annotations.join(format!("{id}.json")), &doc)?;
        write_json(&Self::version_path(&self.cfg.state, id), &VersionRecord { version })?;
        let mut docs = self.docs.write().unwrap_or_else(|p| p.into_inner());
        docs.insert(
            id.to_owned(),
            Versioned {
                version,
                document: Some(Arc::new(doc)),
            },
        );
        Ok(version)
    }

    fn camera_id_of(id: &str, v: &Versioned) -> String {
        v.document.as_ref().map_or_else(|| id.to_owned(), |d| d.camera_id.clone())
    }

    /// The camera of an image: the document's `camera_id`, else the camera named like the image.
    pub fn camera(&self, id: &str) -> Result<&Camera, ApiError> {
        let camera = Self::camera_id_of(id, &self.annotation(id)?);
        self.cameras.get(&camera).ok_or_else(|| ApiError::UnknownCamera {
            image: id.to_owned(),
            camera,
        })
    }

    fn mask(&self, id: &str) -> Result<Grid<u8>, ApiError> {
        let e = self.entry(id)?;
        if let Some(dir) = &self.cfg.masks {
            let path = dir.join(format!("{id}.png"));
            if path.exists() {
                let img = image::open(&path).map_err(|err| ApiError::Internal(format!("{}: {err}", path.display())))?;
                return Ok(Grid::from_gray_image(&img.to_luma8()));
            }
        }
        let doc = self.annotation(id)?.document.ok_or_else(|| ApiError::NoMask(id.to_owned()))?;
        let mut mask = rasterize_mask(&doc).map_err(|err| ApiError::Internal(err.to_string()))?;
        if mask.dims() != (e.width as usize, e.height as usize) {
            mask = Grid::from_fn(e.width as usize, e.height as usize, |x, y| {
                mask.get_checked(x as i64, y as i64).copied().unwrap_or(0)
            });
        }
        Ok(mask)
    }

    /// Flow field of an image, keyed by its mask and the flow parameters. Served from
    /// memory, then from the on-disk FFLD cache, then computed. The returned field is
    /// always the decoded FFLD so every path yields identical values.
    pub fn flow(&self, id: &str) -> Result<Arc<CachedFlow>, ApiError> {
        let mask = self.mask(id)?;
        let params = serde_json::to_vec(&self.cfg.flow).expect("flow parameters serialize");
        let (w, h) = mask.dims();
        let key = hash_hex(&[&params, &(w as u64).to_le_bytes(), &(h as u64).to_le_bytes(), mask.data()]);
        let mut slot = lock(&self.flows[id]);
        if let Some(c) = slot.as_ref().filter(|c| c.key == key) {
            return Ok(Arc::clone(c));
        }
        let path = self.cfg.state.join("flow").join(format!("{id}-{}.ffld", &key[..16]));
        let ffld = match std::fs::read(&path) {
            Ok(bytes) => {
                self.stats.flow_disk_hits.fetch_add(1, Ordering::Relaxed);
                bytes
            }
            Err(_) => {
                let field = compute_flow(&mask, &self.cfg.flow).map_err(|e| ApiError::Internal(e.to_string()))?;
                let mut bytes = Vec::new();
                write_ffld(&field, &mut bytes).expect("writing to memory");
                atomic_write(&path, &bytes)?;
                self.stats.flow_computed.fetch_add(1, Ordering::Relaxed);
                bytes
            }
        };
        let field = read_ffld(ffld.as_slice()).map_err(|e| ApiError::Internal(format!("{}: {e}", path.display())))?;
        let cached = Arc::new(CachedFlow { key, field, ffld });
        *slot = Some(Arc::clone(&cached));
        Ok(cached)
    }

    /// JSON body of a guided trace; identical requests against the same flow field are
    /// served from cache. The flag reports a cache hit.
    pub fn trace(&self, id: &str, req: &TraceRequest) -> Result<(Arc<Vec<u8>>, bool), ApiError> {
        req.params.validate().map_err(ApiError::Trace)?;
        let flow = self.flow(id)?;
        let req_bytes = serde_json::to_vec(req).expect("trace request serializes");
        let key = hash_hex(&[id.as_bytes(), flow.key.as_bytes(), &req_bytes]);
        if let Some(body) = lock(&self.traces).get(&key) {
            self.stats.trace_hits.fetch_add(1, Ordering::Relaxed);
            return Ok((Arc::clone(body), true));
        }
        let p0 = Vec2::new(req.p0[0], req.p0[1]);
        let p1 = req.p1.map(|p| Vec2::new(p[0], p[1]));
        let poly = trace(&flow.field, p0, p1, &req.params).map_err(ApiError::Trace)?;
        let body = Arc::new(serde_json::to_vec(&poly).expect("polyline serializes"));
        self.stats.trace_computed.fetch_add(1, Ordering::Relaxed);
        let mut traces = lock(&self.traces);
        if traces.len() >= TRACE_CACHE_LIMIT {
            traces.clear();
        }
        traces.insert(key, Arc::clone(&body));
        Ok((body, false))
    }

    /// Epipolar line `(a, b, c)` in `dst` of pixel `(x, y)` in `src`, with `a² + b² = 1`.
    pub fn epipolar(&self, src: &str, dst: &str, x: f64, y: f64) -> Result<[f64; 3], ApiError> {
        let (c1, c2) = (self.camera(src)?, self.camera(dst)?);
        let f = arbor_core::camera::fundamental_matrix(c1, c2).map_err(|e| ApiError::BadRequest(e.to_string()))?;
        let l = arbor_core::camera::epipolar_line(&f, &Vec2::new(x, y))
            .ok_or_else(|| ApiError::BadRequest(format!("({x}, {y}) is the epipole")))?;
        Ok([l.x, l.y, l.z])
    }

    fn model(&self) -> Result<Branch3D, ApiError> {
        let path = self.cfg.model.as_ref().ok_or(ApiError::NoModel)?;
        if !path.exists() {
            return Err(ApiError::NoModel);
        }
        let model: Branch3D = read_json(path)?;
        if model.vertices.is_empty() {
            return Err(ApiError::NoModel);
        }
        Ok(model)
    }

    /// The current 3D model projected into an image.
    pub fn overlay(&self, id: &str) -> Result<Vec<OverlaySegment>, ApiError> {
        let camera = self.camera(id)?;
        Ok(project_branch(&self.model()?, camera))
    }
}
