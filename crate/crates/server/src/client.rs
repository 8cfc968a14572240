//! REST and WebSocket client for the server, used by the command-line tools
//! and the tests.

use std::time::Duration;

use futures::{SinkExt, StreamExt};
use orbitcad_session::{apply_op, ClientKind, Payload, SessionOp, SessionState};
use reqwest::multipart::{Form, Part};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::protocol::frame::coding::CloseCode;
use tokio_tungstenite::tungstenite::Message;

pub use reqwest::Method;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("http: {0}")]
    Http(#[from] reqwest::Error),
    #[error("{status}: {body}")]
    Status { status: u16, body: String },
    #[error("websocket: {0}")]
    Ws(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("connection closed with code {0}")]
    Closed(u16),
    #[error("timed out waiting for the server")]
    Timeout,
}

pub type ClientResult<T> = Result<T, ClientError>;

#[derive(Clone)]
pub struct RestClient {
    pub base: String,
    pub token: String,
    http: reqwest::Client,
}

impl RestClient {
    /// `base` is `http://host:port`.
    pub fn new(base: impl Into<String>, token: impl Into<String>) -> Self {
        RestClient {
            base: base.into().trim_end_matches('/').to_string(),
            token: token.into(),
            http: reqwest::Client::new(),
        }
    }

    pub fn ws_base(&self) -> String {
        self.base.replacen("http", "ws", 1)
    }

    fn req(&self, method: reqwest::Method, path: &str) -> reqwest::RequestBuilder {
        self.http.request(method, format!("{}{path}", self.base)).bearer_auth(&self.token)
    }

    async fn check(resp: reqwest::Response) -> ClientResult<reqwest::Response> {
        let status = resp.status();
        if status.is_success() || status == reqwest::StatusCode::NOT_MODIFIED {
            Ok(resp)
        } else {
            Err(ClientError::Status {
                status: status.as_u16(),
                body: resp.text().await.unwrap_or_default(),
            })
        }
    }

    pub async fn get<T: DeserializeOwned>(&self, path: &str) -> ClientResult<T> {
        Ok(Self::check(self.req(reqwest::Method::GET, path).send().await?).await?.json().await?)
    }

    pub async fn get_text(&self, path: &str) -> ClientResult<String> {
        Ok(Self::check(self.req(reqwest::Method::GET, path).send().await?).await?.text().await?)
    }

    pub async fn get_bytes(&self, path: &str) -> ClientResult<Vec<u8>> {
        Ok(Self::check(self.req(reqwest::Method::GET, path).send().await?).await?.bytes().await?.to_vec())
    }

    pub async fn post<T: DeserializeOwned>(&self, path: &str, body: &Value) -> ClientResult<T> {
        Ok(Self::check(self.req(reqwest::Method::POST, path).json(body).send().await?).await?.json().await?)
    }

    pub async fn delete(&self, path: &str) -> ClientResult<()> {
        Self::check(self.req(reqwest::Method::DELETE, path).send().await?).await?;
        Ok(())
    }

    /// Raw request for callers that need the status code.
    pub fn request(&self, method: reqwest::Method, path: &str) -> reqwest::RequestBuilder {
        self.req(method, path)
    }

    pub async fn create_project(&self, name: &str) -> ClientResult<String> {
        let v: Value = self.post("/api/projects", &json!({"name": name})).await?;
        id_field(&v, "project_id")
    }

    /// Uploads a model file and returns its id. The model is queued; see
    /// [`RestClient::wait_model`].
    pub async fn upload_model(&self, project_id: &str, file_name: &str, bytes: Vec<u8>) -> ClientResult<String> {
        let form = Form::new()
            .text("project_id", project_id.to_string())
            .part("file", Part::bytes(bytes).file_name(file_name.to_string()));
        let resp = self.req(reqwest::Method::POST, "/api/models").multipart(form).send().await?;
        let v: Value = Self::check(resp).await?.json().await?;
        id_field(&v["model"], "model_id")
    }

    /// Polls until the model is ready; a failed model is an error.
    pub async fn wait_model(&self, model_id: &str, timeout: Duration) -> ClientResult<Value> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let m: Value = self.get(&format!("/api/models/{model_id}")).await?;
            match m["status"].as_str() {
                Some("ready") => return Ok(m),
                Some("failed") => return Err(ClientError::Protocol(format!("model {model_id} failed: {}", m["error"]))),
                _ if tokio::time::Instant::now() > deadline => return Err(ClientError::Timeout),
                _ => tokio::time::sleep(Duration::from_millis(20)).await,
            }
        }
    }

    /// Polls a job until it finishes and returns it.
    pub async fn wait_job(&self, job_id: &str, timeout: Duration) -> ClientResult<Value> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let j: Value = self.get(&format!("/api/jobs/{job_id}")).await?;
            match j["status"].as_str() {
                Some("done") | Some("failed") => return Ok(j),
                _ if tokio::time::Instant::now() > deadline => return Err(ClientError::Timeout),
                _ => tokio::time::sleep(Duration::from_millis(20)).await,
            }
        }
    }

    pub async fn create_session(&self, project_id: &str, name: &str, model_id: Option<&str>) -> ClientResult<String> {
        let v: Value = self.post("/api/sessions", &json!({"project_id": project_id, "name": name, "model_id": model_id})).await?;
        id_field(&v, "session_id")
    }

    /// Canonical state text, with participants when `full` is set.
    pub async fn session_state(&self, session_id: &str, full: bool) -> ClientResult<String> {
        self.get_text(&format!("/api/sessions/{session_id}/state?full={full}")).await
    }

    pub async fn flush(&self, session_id: &str, compact: bool) -> ClientResult<Value> {
        self.post(&format!("/api/sessions/{session_id}/flush?compact={compact}"), &json!({})).await
    }
}

fn id_field(v: &Value, key: &str) -> ClientResult<String> {
    v[key].as_str().map(str::to_string).ok_or_else(|| ClientError::Protocol(format!("response lacks {key}: {v}")))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Op(SessionOp),
    Error { code: String, message: String },
}

/// A session participant that keeps its own copy of the state by folding
/// everything the server sends.
pub struct SessionClient {
    pub cid: String,
    pub high_water_at_join: u64,
    pub state: SessionState,
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
}

pub struct Connect<'a> {
    pub ws_base: &'a str,
    pub session_id: &'a str,
    pub token: &'a str,
    pub cid: &'a str,
    pub name: &'a str,
    pub kind: ClientKind,
}

impl SessionClient {
    /// Connects, reads the welcome frame and folds the late-join bundle.
    pub async fn connect(c: Connect<'_>) -> ClientResult<SessionClient> {
        let kind = match c.kind {
            ClientKind::Headset => "headset",
            ClientKind::Web => "web",
        };
        let url = format!("{}/ws/sessions/{}?token={}&cid={}&name={}&kind={kind}", c.ws_base, c.session_id, c.token, c.cid, c.name);
        let (ws, _) = tokio_tungstenite::connect_async(url).await?;
        let mut client = SessionClient {
            cid: c.cid.to_string(),
            high_water_at_join: 0,
            state: SessionState::new(),
            ws,
        };
        let welcome = client.next_json(Duration::from_secs(10)).await?;
        if welcome["ctrl"] != "welcome" {
            return Err(ClientError::Protocol(format!("expected welcome, got {welcome}")));
        }
        let bundle = welcome["bundle"].as_u64().unwrap_or(0);
        let hw = welcome["high_water"].as_u64().unwrap_or(0);
        for _ in 0..bundle {
            let v = client.next_json(Duration::from_secs(10)).await?;
            let op = SessionOp::from_value(v).map_err(|e| ClientError::Protocol(e.to_string()))?;
            apply_op(&mut client.state, &op).map_err(|e| ClientError::Protocol(e.to_string()))?;
        }
        client.state.advance_to(hw);
        client.high_water_at_join = hw;
        Ok(client)
    }

    async fn next_json(&mut self, timeout: Duration) -> ClientResult<Value> {
        loop {
            let msg = tokio::time::timeout(timeout, self.ws.next()).await.map_err(|_| ClientError::Timeout)?;
            match msg {
                None => return Err(ClientError::Closed(1006)),
                Some(Err(e)) => return Err(e.into()),
                Some(Ok(Message::Text(t))) => {
                    return serde_json::from_str(t.as_str()).map_err(|e| ClientError::Protocol(e.to_string()));
                }
                Some(Ok(Message::Close(frame))) => {
                    return Err(ClientError::Closed(frame.map_or(1005, |f| u16::from(f.code))));
                }
                Some(Ok(_)) => {}
            }
        }
    }

    /// Sends a payload for the server to sequence.
    pub async fn send(&mut self, payload: Payload) -> ClientResult<()> {
        let frame = SessionOp::new(0, self.cid.clone(), 0, payload).to_wire();
        self.ws.send(Message::Text(frame.into())).await?;
        Ok(())
    }

    pub async fn send_raw(&mut self, frame: &str) -> ClientResult<()> {
        self.ws.send(Message::Text(frame.to_string().into())).await?;
        Ok(())
    }

    /// The next op or error from the server. Ops are applied to the local
    /// state before they are returned.
    pub async fn next_event(&mut self, timeout: Duration) -> ClientResult<Event> {
        let v = self.next_json(timeout).await?;
        if v["ctrl"] == "error" {
            return Ok(Event::Error {
                code: v["code"].as_str().unwrap_or_default().to_string(),
                message: v["message"].as_str().unwrap_or_default().to_string(),
            });
        }
        let op = SessionOp::from_value(v).map_err(|e| ClientError::Protocol(e.to_string()))?;
        apply_op(&mut self.state, &op).map_err(|e| ClientError::Protocol(e.to_string()))?;
        Ok(Event::Op(op))
    }

    /// Reads until an op with `op_id >= target` has been applied.
    pub async fn sync_to(&mut self, target: u64, timeout: Duration) -> ClientResult<()> {
        let deadline = tokio::time::Instant::now() + timeout;
        while self.state.last_op_id < target {
            let left = deadline.saturating_duration_since(tokio::time::Instant::now());
            if left.is_zero() {
                return Err(ClientError::Timeout);
            }
            self.next_event(left).await?;
        }
        Ok(())
    }

    /// Reads events until the server has been quiet for `quiet`.
    pub async fn drain(&mut self, quiet: Duration) -> ClientResult<Vec<Event>> {
        let mut out = Vec::new();
        loop {
            match self.next_event(quiet).await {
                Ok(e) => out.push(e),
                Err(ClientError::Timeout) => return Ok(out),
                Err(e) => return Err(e),
            }
        }
    }

    pub async fn close(mut self) -> ClientResult<()> {
        self.ws
            .close(Some(tokio_tungstenite::tungstenite::protocol::CloseFrame {
                code: CloseCode::Normal,
                reason: "".into(),
            }))
            .await?;
        // Wait for the server's close so its leave is sequenced first.
        while let Some(Ok(_)) = self.ws.next().await {}
        Ok(())
    }
}
