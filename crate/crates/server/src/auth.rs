//! Bearer-token authentication. Tokens arrive in `Authorization: Bearer`
//! or, for WebSocket upgrades that cannot set headers, a `token` query
//! parameter.

use axum::extract::FromRequestParts;
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;
use axum::http::HeaderMap;

use crate::error::ApiError;
use crate::store::{Role, User};
use crate::AppState;

pub struct AuthUser(pub User);

pub fn token_from(headers: &HeaderMap, query: Option<&str>) -> Option<String> {
    if let Some(h) = headers.get(AUTHORIZATION).and_then(|v| v.to_str().ok()) {
        if let Some(t) = h.strip_prefix("Bearer ") {
            return Some(t.trim().to_string());
        }
    }
    query?
        .split('&')
        .find_map(|kv| kv.strip_prefix("token="))
        .map(str::to_string)
}

impl FromRequestParts<AppState> for AuthUser {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = token_from(&parts.headers, parts.uri.query()).ok_or_else(ApiError::unauthorized)?;
        state.store.user_by_token(&token).map(AuthUser).ok_or_else(ApiError::unauthorized)
    }
}

impl AuthUser {
    /// Checks that the user holds at least `need` in `project`. Unknown
    /// projects are 404, missing membership 403.
    pub fn require(&self, state: &AppState, project: &str, need: Role) -> Result<Role, ApiError> {
        if state.store.project(project).is_none() {
            return Err(ApiError::not_found("project", project));
        }
        match state.store.role(&self.0, project) {
            Some(r) if r >= need => Ok(r),
            Some(r) => Err(ApiError::forbidden(format!("requires {need:?} role, you are {r:?}").to_lowercase())),
            None => Err(ApiError::forbidden("not a member of this project")),
        }
    }

    pub fn require_site_admin(&self) -> Result<(), ApiError> {
        if self.0.site_admin {
            Ok(())
        } else {
            Err(ApiError::forbidden("site administrators only"))
        }
    }
}
