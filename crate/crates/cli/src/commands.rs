//! Offline commands working directly on the data directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use orbitcad_align::{build_tag_layout, layout_svg as render_layout_svg};
use orbitcad_core::io::{export_model, import_model_with, Format, ImportOptions};
use orbitcad_core::reduction::{apply_plan, PlanError, ReductionPlan};
use orbitcad_core::render::grid_dims;
use orbitcad_core::compute_world_bounds;
use orbitcad_server::jobs::{render_thumbnail, ThumbTarget};
use orbitcad_server::store::{new_id, ModelMeta, ModelStatus, Project, Store};
use orbitcad_server::wal::Wal;
use orbitcad_server::{start, ServerConfig};
use orbitcad_session::{apply_op, SessionState};
use serde_json::json;

use crate::{CliError, Output};

fn open(dir: &Path) -> Result<Store, CliError> {
    Store::open(dir).map_err(|e| CliError::new("data_dir", format!("{}: {e}", dir.display())))
}

fn ready_model(store: &Store, id: &str) -> Result<ModelMeta, CliError> {
    let m = store.model_meta(id).ok_or_else(|| CliError::not_found("model", id))?;
    if m.status != ModelStatus::Ready {
        return Err(CliError::new("not_ready", format!("model {id} is not ready ({:?})", m.status)));
    }
    Ok(m)
}

fn ensure_project(store: &Store, id: &str) -> Result<(), CliError> {
    if store.project(id).is_none() {
        store.save_project(&Project {
            project_id: id.to_string(),
            name: id.to_string(),
            members: Default::default(),
            model_ids: BTreeSet::new(),
            session_ids: BTreeSet::new(),
        })?;
    }
    Ok(())
}

pub fn import(dir: &Path, path: &Path, format: Option<&str>, unit_scale: Option<f64>, project: &str, name: Option<String>) -> Result<Output, CliError> {
    let ext = format
        .map(str::to_string)
        .or_else(|| path.extension().and_then(|e| e.to_str()).map(str::to_string))
        .ok_or_else(|| CliError::new("unknown_format", "cannot tell the format; pass --format"))?
        .to_ascii_lowercase();
    let fmt = Format::from_extension(&ext).ok_or_else(|| CliError::new("unknown_format", format!("unsupported format {ext}")))?;
    let bytes = fs::read(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    let store = open(dir)?;
    let model_id = new_id("m");
    let opts = ImportOptions {
        model_id: Some(model_id.clone()),
        unit_scale,
        resolver: None,
    };
    let (model, report) = import_model_with(&bytes, fmt, &opts).map_err(|e| CliError::new("parse", e.to_string()))?;
    ensure_project(&store, project)?;
    let mdir = store.model_dir(&model_id);
    fs::create_dir_all(&mdir)?;
    fs::write(mdir.join(format!("source.{ext}")), &bytes)?;
    store.save_model_meta(&ModelMeta {
        model_id: model_id.clone(),
        project_id: project.to_string(),
        name: name.unwrap_or_else(|| path.file_name().map_or(model_id.clone(), |n| n.to_string_lossy().into_owned())),
        status: ModelStatus::Processing,
        error: None,
        source_ext: Some(ext),
        unit_scale,
        triangle_count: 0,
        node_count: 0,
        sha256: None,
        derived_from: None,
        report: None,
        warnings: report.warnings.clone(),
    })?;
    let meta = store.store_model(&model_id, &model)?;
    store.update_project(project, |p| p.model_ids.insert(model_id.clone()))?;
    let b = compute_world_bounds(&model, model.root())?;
    // World bounds already include the unit scale.
    let (lo, hi) = (b.min, b.max);
    let mut text = format!("{model_id}\n{} triangles, {} nodes", report.triangle_count, meta.node_count);
    for w in &report.warnings {
        text.push_str(&format!("\nwarning: {w}"));
    }
    Ok(Output {
        json: json!({
            "model_id": model_id,
            "triangle_count": report.triangle_count,
            "node_count": meta.node_count,
            "mesh_count": report.mesh_count,
            "bounds_m": {"min": [lo.x, lo.y, lo.z], "max": [hi.x, hi.y, hi.z]},
            "warnings": report.warnings,
        }),
        text,
    })
}

pub fn export(dir: &Path, model_id: &str, format: &str, output: &Path) -> Result<Output, CliError> {
    let store = open(dir)?;
    ready_model(&store, model_id)?;
    let (bytes, warnings) = if format.eq_ignore_ascii_case("ocm") {
        (store.model_bytes(model_id)?, Vec::new())
    } else {
        let fmt = Format::from_extension(format).ok_or_else(|| CliError::new("unknown_format", format!("unsupported export format {format}")))?;
        let model = store.load_model(model_id)?;
        let out = export_model(&model, fmt).map_err(|e| CliError::new("export", e.to_string()))?;
        (out.bytes, out.warnings)
    };
    fs::write(output, &bytes).map_err(|e| CliError::new("io", format!("{}: {e}", output.display())))?;
    let mut text = format!("wrote {} bytes to {}", bytes.len(), output.display());
    for w in &warnings {
        text.push_str(&format!("\nwarning: {w}"));
    }
    Ok(Output {
        json: json!({"path": output, "bytes": bytes.len(), "warnings": warnings}),
        text,
    })
}

/// Plan errors exit with 3 and name the failing step.
fn plan_error(e: PlanError) -> CliError {
    let step = match &e {
        PlanError::InvalidStep { index, .. } | PlanError::UnknownNode { index, .. } => Some(*index),
        _ => None,
    };
    CliError {
        code: "invalid_plan",
        message: e.to_string(),
        exit: 3,
        extra: json!({ "step": step }),
    }
}

pub fn reduce(dir: &Path, model_id: &str, plan_path: &Path, dry_run: bool) -> Result<Output, CliError> {
    let store = open(dir)?;
    let meta = ready_model(&store, model_id)?;
    let text = fs::read_to_string(plan_path).map_err(|e| CliError::new("io", format!("{}: {e}", plan_path.display())))?;
    let plan = ReductionPlan::from_json(&text).map_err(plan_error)?;
    let model = store.load_model(model_id)?;
    let (mut reduced, report) = apply_plan(&model, &plan).map_err(plan_error)?;
    let mut lines = vec![format!("{:>4}  {:<20} {:>12} {:>12} {:>8}", "step", "op", "before", "after", "removed")];
    for s in &report.steps {
        lines.push(format!("{:>4}  {:<20} {:>12} {:>12} {:>8}", s.index, s.op, s.triangles_before, s.triangles_after, s.removed.len()));
    }
    lines.push(format!(
        "{} -> {} triangles (ideal {}, hard {}): {}",
        report.initial_triangles, report.final_triangles, report.ideal_budget, report.hard_budget, report.verdict
    ));
    let mut out = json!({ "report": report, "dry_run": dry_run });
    if !dry_run {
        let derived = new_id("m");
        reduced.model_id = derived.clone();
        store.save_model_meta(&ModelMeta {
            model_id: derived.clone(),
            project_id: meta.project_id.clone(),
            name: format!("{} (reduced)", meta.name),
            status: ModelStatus::Processing,
            error: None,
            source_ext: None,
            unit_scale: None,
            triangle_count: 0,
            node_count: 0,
            sha256: None,
            derived_from: Some(model_id.to_string()),
            report: Some(report.clone()),
            warnings: Vec::new(),
        })?;
        store.save_plan(&derived, &plan)?;
        store.store_model(&derived, &reduced)?;
        store.update_project(&meta.project_id, |p| p.model_ids.insert(derived.clone()))?;
        lines.push(format!("stored as {derived}"));
        out["model_id"] = json!(derived);
    }
    Ok(Output { json: out, text: lines.join("\n") })
}

/// Session state as the log on disk leaves it.
fn session_state(store: &Store, id: &str) -> Result<SessionState, CliError> {
    store.session_meta(id).ok_or_else(|| CliError::not_found("session", id))?;
    let (_, rec) = Wal::open(store.session_dir(id), id)?;
    let mut s = SessionState::new();
    for op in &rec.compacted {
        apply_op(&mut s, op).map_err(|e| CliError::new("corrupt_log", e.to_string()))?;
    }
    s.advance_to(rec.compacted_high_water);
    for op in &rec.tail {
        apply_op(&mut s, op).map_err(|e| CliError::new("corrupt_log", e.to_string()))?;
    }
    Ok(s)
}

pub fn thumbs(dir: &Path, model: Option<&str>, session: Option<&str>, slide: Option<String>, viewpoints: u32, tile: u32, output: &Path) -> Result<Output, CliError> {
    if viewpoints == 0 || tile == 0 {
        return Err(CliError::new("usage", "viewpoints and tile size must be positive"));
    }
    let store = open(dir)?;
    let target = match (model, session) {
        (Some(m), _) => {
            ready_model(&store, m)?;
            ThumbTarget::Model { model_id: m.to_string() }
        }
        (None, Some(s)) => {
            let state = session_state(&store, s)?;
            if let Some(sl) = &slide {
                if !state.slides.contains_key(sl) {
                    return Err(CliError::not_found("slide", sl));
                }
            }
            if let Some(m) = &state.active_model {
                ready_model(&store, m)?;
            }
            ThumbTarget::Session {
                session_id: s.to_string(),
                state,
                slide,
            }
        }
        (None, None) => return Err(CliError::new("usage", "pass --model or --session")),
    };
    let png = render_thumbnail(&store, &target, viewpoints, tile).map_err(|e| CliError::new("render", e))?;
    fs::write(output, &png)?;
    let (cols, rows) = grid_dims(viewpoints);
    Ok(Output {
        json: json!({"path": output, "viewpoints": viewpoints, "columns": cols, "rows": rows, "width": cols * tile, "height": rows * tile, "bytes": png.len()}),
        text: format!("wrote {} ({cols}×{rows} tiles of {tile} px)", output.display()),
    })
}

pub fn layout_svg(tag_size: f64, spacing: f64, output: &Path) -> Result<Output, CliError> {
    let layout = build_tag_layout(tag_size, spacing).map_err(|e| CliError::new("layout", e.to_string()))?;
    fs::write(output, render_layout_svg(&layout))?;
    Ok(Output {
        json: json!({"path": output, "layout": layout}),
        text: format!("wrote {} (span {:.1} mm)", output.display(), layout.span() * 1000.0),
    })
}

pub fn serve(dir: &Path, bind: Option<&str>, flush_secs: Option<f64>) -> Result<Output, CliError> {
    let mut cfg = ServerConfig::from_env().map_err(|e| CliError::new("config", e))?;
    cfg.data_dir = dir.to_path_buf();
    if let Some(b) = bind {
        cfg.bind = b.parse().map_err(|e| CliError::new("usage", format!("--bind {b}: {e}")))?;
    }
    if let Some(s) = flush_secs {
        if !(s > 0.0 && s.is_finite()) {
            return Err(CliError::new("usage", "--flush-secs must be positive"));
        }
        cfg.flush_interval = std::time::Duration::from_secs_f64(s);
    }
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .try_init();
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let handle = start(cfg).await?;
        // Scripts wait for this line to learn the bound port.
        println!("listening on {}", handle.addr);
        let _ = tokio::signal::ctrl_c().await;
        handle.shutdown().await
    })?;
    Ok(Output {
        json: json!({"stopped": true}),
        text: String::new(),
    })
}
