//! Projects, users, models and session records, one JSON file per entity
//! under the data directory:
//!
//! ```text
//! data_dir/
//!   admin.token
//!   users/{user_id}.json
//!   projects/{project_id}.json
//!   models/{model_id}/meta.json, source.{ext}, model.ocm, plan.json
//!   sessions/{session_id}/meta.json, {session_id}.{first_op}.log
//!   thumbnails/{key}.png
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use orbitcad_core::reduction::{ReductionPlan, ReductionReport};
use orbitcad_core::{container, NodeId, SceneModel};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Viewer,
    Member,
    Admin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub user_id: String,
    pub name: String,
    /// Hex SHA-256 of the bearer token; the token itself is never stored.
    pub token_sha256: String,
    #[serde(default)]
    pub site_admin: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub project_id: String,
    pub name: String,
    pub members: BTreeMap<String, Role>,
    pub model_ids: BTreeSet<String>,
    pub session_ids: BTreeSet<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelStatus {
    Queued,
    Processing,
    Ready,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub model_id: String,
    pub project_id: String,
    pub name: String,
    pub status: ModelStatus,
    #[serde(default)]
    pub error: Option<String>,
    /// Source file extension for uploads; absent for plan outputs.
    #[serde(default)]
    pub source_ext: Option<String>,
    #[serde(default)]
    pub unit_scale: Option<f64>,
    #[serde(default)]
    pub triangle_count: u64,
    #[serde(default)]
    pub node_count: usize,
    /// Hex SHA-256 of `model.ocm`; doubles as the download ETag.
    #[serde(default)]
    pub sha256: Option<String>,
    #[serde(default)]
    pub derived_from: Option<String>,
    #[serde(default)]
    pub report: Option<ReductionReport>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub project_id: String,
    pub name: String,
}

impl User {
    /// The user without the token hash.
    pub fn public(&self) -> serde_json::Value {
        serde_json::json!({"user_id": self.user_id, "name": self.name, "site_admin": self.site_admin})
    }
}

pub fn token_hash(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

pub fn new_id(prefix: &str) -> String {
    format!("{prefix}{}", uuid::Uuid::new_v4().simple())
}

pub fn new_token() -> String {
    format!("{}{}", uuid::Uuid::new_v4().simple(), uuid::Uuid::new_v4().simple())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(value).expect("entity serializes"))?;
    fs::rename(tmp, path)
}

fn read_all<T: DeserializeOwned>(dir: &Path, nested: bool) -> io::Result<Vec<T>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let file = if nested { path.join("meta.json") } else { path.clone() };
        if file.extension().and_then(|e| e.to_str()) != Some("json") || !file.exists() {
            continue;
        }
        let bytes = fs::read(&file)?;
        out.push(serde_json::from_slice(&bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", file.display())))?);
    }
    Ok(out)
}

#[derive(Default)]
struct Tables {
    users: BTreeMap<String, User>,
    projects: BTreeMap<String, Project>,
    models: BTreeMap<String, ModelMeta>,
    sessions: BTreeMap<String, SessionMeta>,
}

/// Node ids of a ready model, for validating session ops.
pub type Catalog = Arc<BTreeSet<NodeId>>;

pub struct Store {
    root: PathBuf,
    tables: RwLock<Tables>,
    catalogs: RwLock<BTreeMap<String, Catalog>>,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Store> {
        let root = root.into();
        for sub in ["users", "projects", "models", "sessions", "thumbnails"] {
            fs::create_dir_all(root.join(sub))?;
        }
        let mut t = Tables::default();
        for u in read_all::<User>(&root.join("users"), false)? {
            t.users.insert(u.user_id.clone(), u);
        }
        for p in read_all::<Project>(&root.join("projects"), false)? {
            t.projects.insert(p.project_id.clone(), p);
        }
        for m in read_all::<ModelMeta>(&root.join("models"), true)? {
            t.models.insert(m.model_id.clone(), m);
        }
        for s in read_all::<SessionMeta>(&root.join("sessions"), true)? {
            t.sessions.insert(s.session_id.clone(), s);
        }
        Ok(Store {
            root,
            tables: RwLock::new(t),
            catalogs: RwLock::new(BTreeMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn model_dir(&self, id: &str) -> PathBuf {
        self.root.join("models").join(id)
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    pub fn thumbnail_path(&self, key: &str) -> PathBuf {
        self.root.join("thumbnails").join(format!("{key}.png"))
    }

    // Users

    pub fn user_count(&self) -> usize {
        self.tables.read().unwrap().users.len()
    }

    pub fn user_by_token(&self, token: &str) -> Option<User> {
        let h = token_hash(token);
        self.tables.read().unwrap().users.values().find(|u| u.token_sha256 == h).cloned()
    }

    pub fn user(&self, id: &str) -> Option<User> {
        self.tables.read().unwrap().users.get(id).cloned()
    }

    pub fn users(&self) -> Vec<User> {
        self.tables.read().unwrap().users.values().cloned().collect()
    }

    /// Creates a user and returns it with its bearer token.
    pub fn create_user(&self, name: &str, site_admin: bool, token: Option<String>) -> io::Result<(User, String)> {
        let token = token.unwrap_or_else(new_token);
        let user = User {
            user_id: new_id("u"),
            name: name.to_string(),
            token_sha256: token_hash(&token),
            site_admin,
        };
        write_json(&self.root.join("users").join(format!("{}.json", user.user_id)), &user)?;
        self.tables.write().unwrap().users.insert(user.user_id.clone(), user.clone());
        Ok((user, token))
    }

    // Projects

    pub fn project(&self, id: &str) -> Option<Project> {
        self.tables.read().unwrap().projects.get(id).cloned()
    }

    pub fn projects(&self) -> Vec<Project> {
        self.tables.read().unwrap().projects.values().cloned().collect()
    }

    pub fn save_project(&self, p: &Project) -> io::Result<()> {
        write_json(&self.root.join("projects").join(format!("{}.json", p.project_id)), p)?;
        self.tables.write().unwrap().projects.insert(p.project_id.clone(), p.clone());
        Ok(())
    }

    /// Edits a project in place and persists it.
    pub fn update_project<R>(&self, id: &str, f: impl FnOnce(&mut Project) -> R) -> io::Result<Option<R>> {
        let Some(mut p) = self.project(id) else { return Ok(None) };
        let r = f(&mut p);
        self.save_project(&p)?;
        Ok(Some(r))
    }

    pub fn delete_project(&self, id: &str) -> io::Result<Option<Project>> {
        let Some(p) = self.tables.write().unwrap().projects.remove(id) else { return Ok(None) };
        let path = self.root.join("projects").join(format!("{id}.json"));
        if path.exists() {
            fs::remove_file(path)?;
        }
        Ok(Some(p))
    }

    /// Effective role of `user` in `project`; site admins are admins
    /// everywhere.
    pub fn role(&self, user: &User, project: &str) -> Option<Role> {
        if user.site_admin {
            return Some(Role::Admin);
        }
        self.tables.read().unwrap().projects.get(project)?.members.get(&user.user_id).copied()
    }

    // Models

    pub fn model_meta(&self, id: &str) -> Option<ModelMeta> {
        self.tables.read().unwrap().models.get(id).cloned()
    }

    pub fn models(&self) -> Vec<ModelMeta> {
        self.tables.read().unwrap().models.values().cloned().collect()
    }

    pub fn save_model_meta(&self, m: &ModelMeta) -> io::Result<()> {
        write_json(&self.model_dir(&m.model_id).join("meta.json"), m)?;
        self.tables.write().unwrap().models.insert(m.model_id.clone(), m.clone());
        Ok(())
    }

    pub fn update_model<R>(&self, id: &str, f: impl FnOnce(&mut ModelMeta) -> R) -> io::Result<Option<R>> {
        let Some(mut m) = self.model_meta(id) else { return Ok(None) };
        let r = f(&mut m);
        self.save_model_meta(&m)?;
        Ok(Some(r))
    }

    /// Stores a processed model and marks it ready.
    pub fn store_model(&self, id: &str, model: &SceneModel) -> io::Result<ModelMeta> {
        let bytes = container::encode(model);
        let sha = hex::encode(Sha256::digest(&bytes));
        let dir = self.model_dir(id);
        fs::create_dir_all(&dir)?;
        let tmp = dir.join("model.ocm.tmp");
        fs::write(&tmp, &bytes)?;
        fs::rename(&tmp, dir.join("model.ocm"))?;
        let tris = orbitcad_core::total_triangles(model, orbitcad_core::LodPolicy::PerNodeSelected);
        let nodes = model.node_count();
        self.catalogs.write().unwrap().insert(id.to_string(), Arc::new(model.node_ids().collect()));
        self.update_model(id, |m| {
            m.status = ModelStatus::Ready;
            m.error = None;
            m.sha256 = Some(sha);
            m.triangle_count = tris;
            m.node_count = nodes;
            m.clone()
        })?
        .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("model {id} vanished")))
    }

    pub fn load_model(&self, id: &str) -> io::Result<SceneModel> {
        let bytes = fs::read(self.model_dir(id).join("model.ocm"))?;
        container::decode(&bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
    }

    pub fn model_bytes(&self, id: &str) -> io::Result<Vec<u8>> {
        fs::read(self.model_dir(id).join("model.ocm"))
    }

    pub fn save_plan(&self, id: &str, plan: &ReductionPlan) -> io::Result<()> {
        fs::create_dir_all(self.model_dir(id))?;
        fs::write(self.model_dir(id).join("plan.json"), plan.to_json())
    }

    pub fn load_plan(&self, id: &str) -> Option<ReductionPlan> {
        let text = fs::read_to_string(self.model_dir(id).join("plan.json")).ok()?;
        ReductionPlan::from_json(&text).ok()
    }

    /// Node ids of a ready model, loading them on first use.
    pub fn catalog(&self, id: &str) -> Option<Catalog> {
        if let Some(c) = self.catalogs.read().unwrap().get(id) {
            return Some(c.clone());
        }
        if self.model_meta(id)?.status != ModelStatus::Ready {
            return None;
        }
        let model = self.load_model(id).ok()?;
        let c: Catalog = Arc::new(model.node_ids().collect());
        self.catalogs.write().unwrap().insert(id.to_string(), c.clone());
        Some(c)
    }

    pub fn delete_model(&self, id: &str) -> io::Result<()> {
        self.tables.write().unwrap().models.remove(id);
        self.catalogs.write().unwrap().remove(id);
        let dir = self.model_dir(id);
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        Ok(())
    }

    // Sessions

    pub fn session_meta(&self, id: &str) -> Option<SessionMeta> {
        self.tables.read().unwrap().sessions.get(id).cloned()
    }

    pub fn sessions(&self) -> Vec<SessionMeta> {
        self.tables.read().unwrap().sessions.values().cloned().collect()
    }

    pub fn save_session_meta(&self, s: &SessionMeta) -> io::Result<()> {
        write_json(&self.session_dir(&s.session_id).join("meta.json"), s)?;
        self.tables.write().unwrap().sessions.insert(s.session_id.clone(), s.clone());
        Ok(())
    }

    pub fn delete_session(&self, id: &str) -> io::Result<()> {
        self.tables.write().unwrap().sessions.remove(id);
        let dir = self.session_dir(id);
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        Ok(())
    }
}
