//! HTTP JSON API and the per-session WebSocket.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use ifassist_core::user_model::DEFAULT_SMOOTHING;
use ifassist_core::InterfaceAction;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::error::ServiceError;
use crate::manager::{ProfileRequest, SessionManager};
use crate::session::{ServerMessage, SessionConfig, SessionPhase};

pub type AppState = Arc<SessionManager>;

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownProfile(_) | ServiceError::UnknownSession(_) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::ProfileExists(_)
            | ServiceError::SessionClosed(_)
            | ServiceError::PhaseMismatch(_) => StatusCode::CONFLICT,
            ServiceError::InvalidPhaseConfig(_)
            | ServiceError::BadRequest(_)
            | ServiceError::Env(_) => StatusCode::BAD_REQUEST,
            ServiceError::Model(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Io(_) | ServiceError::Corrupt(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::UnknownProfile(_) => "unknown_profile",
            ServiceError::ProfileExists(_) => "profile_exists",
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::InvalidPhaseConfig(_) => "invalid_phase_config",
            ServiceError::SessionClosed(_) => "session_closed",
            ServiceError::PhaseMismatch(_) => "phase_mismatch",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Model(_) => "model",
            ServiceError::Env(_) => "env",
            ServiceError::Io(_) => "io",
            ServiceError::Corrupt(_) => "corrupt",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if self.status().is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let body = json!({ "error": self.kind(), "message": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ActionRequest {
    pub phi: InterfaceAction,
    #[serde(default)]
    pub ts: Option<f64>,
    #[serde(default)]
    pub phase: Option<SessionPhase>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FinishRequest {
    pub alpha: Option<f64>,
}

/// Messages a WebSocket client may send.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Action {
        phi: InterfaceAction,
        #[serde(default)]
        ts: Option<f64>,
    },
}

pub fn router(manager: AppState) -> Router {
    Router::new()
        .route("/profiles", post(create_profile))
        .route("/profiles/{id}", get(get_profile))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/actions", post(submit_action))
        .route("/sessions/{id}/finish", post(finish))
        .route("/sessions/{id}/trace", get(trace))
        .route("/sessions/{id}/replay", get(replay))
        .route("/sessions/{id}/ws", get(ws_upgrade))
        .with_state(manager)
}

async fn create_profile(
    State(m): State<AppState>,
    Json(req): Json<ProfileRequest>,
) -> Result<impl IntoResponse, ServiceError> {
    Ok((StatusCode::CREATED, Json(m.create_profile(req)?)))
}

async fn get_profile(
    State(m): State<AppState>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(m.get_profile(&id)?))
}

async fn create_session(
    State(m): State<AppState>,
    Json(cfg): Json<SessionConfig>,
) -> Result<impl IntoResponse, ServiceError> {
    let (id, state) = m.create_session(cfg)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "session_id": id, "state": state })),
    ))
}

async fn list_sessions(State(m): State<AppState>) -> impl IntoResponse {
    Json(json!({ "sessions": m.session_ids() }))
}

async fn get_session(
    State(m): State<AppState>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(m.state(&id)?))
}

async fn submit_action(
    State(m): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<ActionRequest>,
) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(m.submit_action(&id, req.phi, req.ts, req.phase)?))
}

async fn finish(
    State(m): State<AppState>,
    Path(id): Path<String>,
    body: Option<Json<FinishRequest>>,
) -> Result<impl IntoResponse, ServiceError> {
    let alpha = body.and_then(|b| b.0.alpha).unwrap_or(DEFAULT_SMOOTHING);
    Ok(Json(m.finish_calibration(&id, alpha)?))
}

async fn trace(
    State(m): State<AppState>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(m.trace(&id)?))
}

async fn replay(
    State(m): State<AppState>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(m.replay_session(&id)?))
}

async fn ws_upgrade(
    State(m): State<AppState>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, ServiceError> {
    // fail before upgrading so the client gets a proper status
    m.state(&id)?;
    Ok(ws.on_upgrade(move |socket| ws_session(m, id, socket)))
}

fn to_text(msg: &ServerMessage) -> Message {
    Message::Text(
        serde_json::to_string(msg)
            .expect("server messages serialize")
            .into(),
    )
}

async fn ws_session(m: AppState, id: String, socket: WebSocket) {
    let (mut sink, mut stream) = socket.split();
    let (state, mut rx) = match m.subscribe(&id) {
        Ok(x) => x,
        Err(e) => {
            let _ = sink
                .send(to_text(&ServerMessage::Error {
                    message: e.to_string(),
                }))
                .await;
            return;
        }
    };
    if sink.send(to_text(&state)).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            incoming = stream.next() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let reply = match serde_json::from_str::<ClientMessage>(&text) {
                    Ok(ClientMessage::Action { phi, ts }) => m.submit_action(&id, phi, ts, None).err(),
                    Err(e) => Some(ServiceError::BadRequest(e.to_string())),
                };
                // successful events arrive through the broadcast channel
                if let Some(e) = reply {
                    if sink.send(to_text(&ServerMessage::Error { message: e.to_string() })).await.is_err() {
                        break;
                    }
                }
            }
            outgoing = rx.recv() => {
                let msg = match outgoing {
                    Ok(msg) => msg,
                    Err(RecvError::Lagged(_)) => match m.state(&id) {
                        Ok(state) => state,
                        Err(_) => break,
                    },
                    Err(RecvError::Closed) => break,
                };
                if sink.send(to_text(&msg)).await.is_err() {
                    break;
                }
            }
        }
    }
}

/// Periodically applies calibration deadlines so timeouts are pushed to
/// clients even when no input arrives.
pub fn spawn_ticker(manager: AppState, period: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(period);
        loop {
            interval.tick().await;
            if let Err(e) = manager.tick() {
                tracing::error!(error = %e, "deadline tick failed");
            }
        }
    })
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(manager: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    let ticker = spawn_ticker(manager.clone(), Duration::from_millis(100));
    let result = axum::serve(listener, router(manager))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    ticker.abort();
    result
}
