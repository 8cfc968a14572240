//! HTTP and WebSocket server for shared model-review sessions.
//!
//! REST endpoints live under `/api`, the live session socket under
//! `/ws/sessions/{id}`. State is kept under one data directory; see
//! [`store`] for its layout and [`wal`] for the session log format.

pub mod api;
pub mod auth;
pub mod client;
pub mod config;
pub mod crash;
pub mod error;
pub mod jobs;
pub mod session;
pub mod store;
pub mod wal;
pub mod ws;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::routing::get;
use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tracing::info;

pub use config::ServerConfig;
use jobs::Jobs;
use session::Sessions;
use store::Store;

/// Uploads up to this size are accepted.
pub const MAX_UPLOAD_BYTES: usize = 2 << 30;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub sessions: Arc<Sessions>,
    pub jobs: Arc<Jobs>,
    pub config: Arc<ServerConfig>,
}

impl AppState {
    /// Opens the data directory, creating the bootstrap admin on first use.
    /// Returns the state and the admin token when one was created.
    pub fn open(config: ServerConfig) -> std::io::Result<(AppState, Option<String>)> {
        let store = Arc::new(Store::open(&config.data_dir)?);
        let mut created = None;
        if let Some(t) = &config.admin_token {
            if store.user_by_token(t).is_none() {
                store.create_user("admin", true, Some(t.clone()))?;
            }
        } else if store.user_count() == 0 {
            let (_, token) = store.create_user("admin", true, None)?;
            let path = config.data_dir.join("admin.token");
            std::fs::write(&path, format!("{token}\n"))?;
            info!(path = %path.display(), "created admin user; token written to file");
            created = Some(token);
        }
        let state = AppState {
            sessions: Arc::new(Sessions::new(store.clone())),
            jobs: Arc::new(Jobs::new(store.clone())),
            store,
            config: Arc::new(config),
        };
        Ok((state, created))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .nest("/api", api::routes())
        .route("/ws/sessions/{id}", get(ws::handler))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    pub state: AppState,
    shutdown: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl ServerHandle {
    /// Stops accepting connections, flushes every session and waits for the
    /// server task.
    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let r = self.task.await.map_err(std::io::Error::other)?;
        self.state.sessions.flush_all(true);
        r
    }
}

/// Binds, resumes unfinished jobs, starts the periodic flusher and serves
/// in the background.
pub async fn start(config: ServerConfig) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind(config.bind).await?;
    let addr = listener.local_addr()?;
    let interval = config.flush_interval;
    let (state, _) = AppState::open(config)?;
    state.jobs.resume();
    let sessions = state.sessions.clone();
    let flusher = tokio::spawn(async move {
        let mut tick = tokio::time::interval(interval);
        tick.tick().await;
        loop {
            tick.tick().await;
            let s = sessions.clone();
            let _ = tokio::task::spawn_blocking(move || s.flush_all(true)).await;
        }
    });
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(state.clone());
    let task = tokio::spawn(async move {
        let r = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
        flusher.abort();
        r
    });
    info!(%addr, "listening");
    Ok(ServerHandle {
        addr,
        state,
        shutdown: Some(tx),
        task,
    })
}
