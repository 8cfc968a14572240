use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

pub const DEFAULT_BIND: &str = "127.0.0.1:8640";
pub const DEFAULT_FLUSH_SECS: u64 = 30;
/// Poses above this rate per client are dropped.
pub const POSE_HZ: u32 = 20;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub data_dir: PathBuf,
    pub bind: SocketAddr,
    /// Interval between fsync + compaction passes.
    pub flush_interval: Duration,
    /// Token for the bootstrap site admin. Generated and written to
    /// `data_dir/admin.token` on first start when absent.
    pub admin_token: Option<String>,
}

impl ServerConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServerConfig {
            data_dir: data_dir.into(),
            bind: DEFAULT_BIND.parse().expect("valid default"),
            flush_interval: Duration::from_secs(DEFAULT_FLUSH_SECS),
            admin_token: None,
        }
    }

    /// Reads `ORBITCAD_DATA_DIR`, `ORBITCAD_BIND`, `ORBITCAD_FLUSH_SECS` and
    /// `ORBITCAD_ADMIN_TOKEN`.
    pub fn from_env() -> Result<Self, String> {
        let data_dir = std::env::var("ORBITCAD_DATA_DIR").unwrap_or_else(|_| "./orbitcad-data".into());
        let mut c = ServerConfig::new(data_dir);
        if let Ok(b) = std::env::var("ORBITCAD_BIND") {
            c.bind = b.parse().map_err(|e| format!("ORBITCAD_BIND={b}: {e}"))?;
        }
        if let Ok(s) = std::env::var("ORBITCAD_FLUSH_SECS") {
            let secs: f64 = s.parse().map_err(|e| format!("ORBITCAD_FLUSH_SECS={s}: {e}"))?;
            if !(secs > 0.0 && secs.is_finite()) {
                return Err(format!("ORBITCAD_FLUSH_SECS must be positive, got {s}"));
            }
            c.flush_interval = Duration::from_secs_f64(secs);
        }
        c.admin_token = std::env::var("ORBITCAD_ADMIN_TOKEN").ok().filter(|t| !t.is_empty());
        Ok(c)
    }
}
