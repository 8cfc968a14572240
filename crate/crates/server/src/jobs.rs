//! Background work: model import, plan application and thumbnails.
//!
//! CPU-bound jobs run on the blocking pool, at most one per core at a time.

use std::collections::BTreeMap;
use std::fs;
use std::sync::{Arc, Mutex};

use orbitcad_core::io::{import_model_with, Format, ImportOptions};
use orbitcad_core::reduction::{apply_plan, ReductionPlan};
use orbitcad_core::render::{draw_items, render_sprite_sheet, SpriteOptions};
use orbitcad_session::{session_view, SessionState};
use serde::Serialize;
use tokio::sync::Semaphore;
use tracing::{info, warn};

use crate::store::{new_id, ModelStatus, Store};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, Serialize)]
pub struct Job {
    pub job_id: String,
    pub kind: &'static str,
    pub target: String,
    pub status: JobStatus,
    pub error: Option<String>,
    /// Where the result can be fetched once done.
    pub result_url: Option<String>,
}

/// What a thumbnail shows.
#[derive(Clone, Debug)]
pub enum ThumbTarget {
    Model { model_id: String },
    /// The session's current state, or a slide of it.
    Session { session_id: String, state: SessionState, slide: Option<String> },
}

impl ThumbTarget {
    pub fn key(&self, viewpoints: u32) -> String {
        match self {
            ThumbTarget::Model { model_id } => format!("model-{model_id}-{viewpoints}"),
            ThumbTarget::Session { session_id, slide: None, .. } => format!("session-{session_id}-{viewpoints}"),
            ThumbTarget::Session { session_id, slide: Some(s), .. } => format!("session-{session_id}-{s}-{viewpoints}"),
        }
    }
}

pub struct Jobs {
    store: Arc<Store>,
    permits: Arc<Semaphore>,
    jobs: Mutex<BTreeMap<String, Job>>,
}

impl Jobs {
    pub fn new(store: Arc<Store>) -> Self {
        let n = std::thread::available_parallelism().map_or(2, |n| n.get());
        Jobs {
            store,
            permits: Arc::new(Semaphore::new(n)),
            jobs: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn get(&self, id: &str) -> Option<Job> {
        self.jobs.lock().unwrap().get(id).cloned()
    }

    fn set(&self, id: &str, status: JobStatus, error: Option<String>) {
        if let Some(j) = self.jobs.lock().unwrap().get_mut(id) {
            j.status = status;
            j.error = error;
        }
    }

    fn spawn(self: &Arc<Self>, kind: &'static str, target: String, result_url: Option<String>, work: impl FnOnce(&Store) -> Result<(), String> + Send + 'static) -> Job {
        let job = Job {
            job_id: new_id("j"),
            kind,
            target,
            status: JobStatus::Queued,
            error: None,
            result_url,
        };
        self.jobs.lock().unwrap().insert(job.job_id.clone(), job.clone());
        let this = self.clone();
        let id = job.job_id.clone();
        tokio::spawn(async move {
            let _permit = this.permits.clone().acquire_owned().await.expect("semaphore is never closed");
            this.set(&id, JobStatus::Running, None);
            let store = this.store.clone();
            let result = tokio::task::spawn_blocking(move || work(&store)).await.unwrap_or_else(|e| Err(format!("job panicked: {e}")));
            match result {
                Ok(()) => this.set(&id, JobStatus::Done, None),
                Err(e) => {
                    warn!(job = %id, kind, "job failed: {e}");
                    this.set(&id, JobStatus::Failed, Some(e));
                }
            }
        });
        job
    }

    /// Imports an uploaded source file into the model container.
    pub fn process_model(self: &Arc<Self>, model_id: &str) -> Job {
        let id = model_id.to_string();
        self.spawn("model_import", id.clone(), Some(format!("/api/models/{id}")), move |store| {
            let r = import(store, &id);
            finish_model(store, &id, r)
        })
    }

    /// Applies `plan` to `source`, storing the result as `derived`.
    pub fn reduce_model(self: &Arc<Self>, source: &str, derived: &str, plan: ReductionPlan) -> Job {
        let (src, id) = (source.to_string(), derived.to_string());
        self.spawn("reduction", id.clone(), Some(format!("/api/models/{id}")), move |store| {
            let r = reduce(store, &src, &id, &plan);
            finish_model(store, &id, r)
        })
    }

    pub fn thumbnail(self: &Arc<Self>, target: ThumbTarget, viewpoints: u32) -> Job {
        let key = target.key(viewpoints);
        let url = match &target {
            ThumbTarget::Model { model_id } => format!("/api/models/{model_id}/thumbnail?viewpoints={viewpoints}"),
            ThumbTarget::Session { session_id, slide, .. } => {
                let slide = slide.as_ref().map(|s| format!("&slide={s}")).unwrap_or_default();
                format!("/api/sessions/{session_id}/thumbnail?viewpoints={viewpoints}{slide}")
            }
        };
        self.spawn("thumbnail", key.clone(), Some(url), move |store| {
            let png = render_thumbnail(store, &target, viewpoints, THUMB_TILE)?;
            let path = store.thumbnail_path(&key);
            let tmp = path.with_extension("png.tmp");
            fs::write(&tmp, png).and_then(|_| fs::rename(&tmp, &path)).map_err(|e| e.to_string())
        })
    }

    /// Requeues models a previous process left unfinished.
    pub fn resume(self: &Arc<Self>) {
        for m in self.store.models() {
            if !matches!(m.status, ModelStatus::Queued | ModelStatus::Processing) {
                continue;
            }
            info!(model = %m.model_id, "resuming model processing");
            match (&m.derived_from, self.store.load_plan(&m.model_id)) {
                (Some(src), Some(plan)) => {
                    self.reduce_model(src, &m.model_id, plan);
                }
                _ => {
                    self.process_model(&m.model_id);
                }
            }
        }
    }
}

fn finish_model(store: &Store, id: &str, result: Result<(), String>) -> Result<(), String> {
    if let Err(e) = &result {
        let _ = store.update_model(id, |m| {
            m.status = ModelStatus::Failed;
            m.error = Some(e.clone());
        });
    }
    result
}

fn import(store: &Store, id: &str) -> Result<(), String> {
    let meta = store.model_meta(id).ok_or("model record is gone")?;
    store.update_model(id, |m| m.status = ModelStatus::Processing).map_err(|e| e.to_string())?;
    let ext = meta.source_ext.clone().ok_or("model has no source file")?;
    let format = Format::from_extension(&ext).ok_or_else(|| format!("unsupported format {ext}"))?;
    let bytes = fs::read(store.model_dir(id).join(format!("source.{ext}"))).map_err(|e| e.to_string())?;
    let opts = ImportOptions {
        model_id: Some(id.to_string()),
        unit_scale: meta.unit_scale,
        resolver: None,
    };
    let (model, report) = import_model_with(&bytes, format, &opts).map_err(|e| e.to_string())?;
    store.store_model(id, &model).map_err(|e| e.to_string())?;
    store.update_model(id, |m| m.warnings = report.warnings).map_err(|e| e.to_string())?;
    Ok(())
}

fn reduce(store: &Store, source: &str, id: &str, plan: &ReductionPlan) -> Result<(), String> {
    store.update_model(id, |m| m.status = ModelStatus::Processing).map_err(|e| e.to_string())?;
    let model = store.load_model(source).map_err(|e| format!("source model {source}: {e}"))?;
    let (mut reduced, report) = apply_plan(&model, plan).map_err(|e| e.to_string())?;
    reduced.model_id = id.to_string();
    store.store_model(id, &reduced).map_err(|e| e.to_string())?;
    store.update_model(id, |m| m.report = Some(report)).map_err(|e| e.to_string())?;
    Ok(())
}

/// Tile edge of server-rendered thumbnails, pixels.
pub const THUMB_TILE: u32 = 256;

pub fn render_thumbnail(store: &Store, target: &ThumbTarget, viewpoints: u32, tile: u32) -> Result<Vec<u8>, String> {
    let mut opts = SpriteOptions {
        viewpoints,
        tile_width: tile,
        tile_height: tile,
        ..Default::default()
    };
    let items = match target {
        ThumbTarget::Model { model_id } => {
            let model = store.load_model(model_id).map_err(|e| e.to_string())?;
            draw_items(&model, &Default::default(), &Default::default())
        }
        ThumbTarget::Session { state, slide, .. } => {
            let state = match slide {
                None => state.clone(),
                Some(s) => {
                    let slide = state.slides.get(s).ok_or_else(|| format!("no slide {s}"))?;
                    orbitcad_session::state::slide_state(slide).map_err(|e| e.to_string())?
                }
            };
            let model_id = state.active_model.as_deref().ok_or("session has no active model")?;
            let model = store.load_model(model_id).map_err(|e| e.to_string())?;
            let view = session_view(&state, &model);
            opts.cut_plane = state.cut_plane;
            draw_items(&view.model, &view.whole, &view.hidden)
        }
    };
    Ok(render_sprite_sheet(&items, &opts).map_err(|e| e.to_string())?.to_png())
}
