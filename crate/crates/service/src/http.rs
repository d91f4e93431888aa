use axum::body::Bytes;
use axum::extract::ws::{self, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use irrigation_core::controller::ControllerMode;
use irrigation_core::rulebase::PumpDuty;
use irrigation_core::telemetry::{encode_message, to_ndjson, ErrorCode, Message, TelemetryError};
use serde::Deserialize;
use tokio::sync::{broadcast, watch};
use tower_http::cors::CorsLayer;

use crate::actor::{RequestError, ServiceHandle};
use crate::dispatch::respond;

#[derive(Clone)]
struct AppState {
    handle: ServiceHandle,
    shutdown: watch::Receiver<bool>,
}

/// Routes: `GET /status`, `POST /override`, `POST /mode`, `GET /events?from=N`
/// and the WebSocket `GET /stream`.
pub fn router(handle: ServiceHandle, shutdown: watch::Receiver<bool>) -> Router {
    Router::new()
        .route("/status", get(status))
        .route("/override", post(override_duty))
        .route("/mode", post(set_mode))
        .route("/events", get(events))
        .route("/stream", get(stream))
        .layer(CorsLayer::permissive())
        .with_state(AppState { handle, shutdown })
}

struct ApiError(StatusCode, Box<Message>);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(*self.1)).into_response()
    }
}

impl From<RequestError> for ApiError {
    fn from(e: RequestError) -> Self {
        let status = match &e {
            RequestError::Stopped => StatusCode::SERVICE_UNAVAILABLE,
            RequestError::Rejected(TelemetryError::InvalidReading(_)) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            RequestError::Rejected(_) => StatusCode::CONFLICT,
        };
        ApiError(status, Box::new(crate::dispatch::error_message(&e)))
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        let code = if e.is_data() {
            ErrorCode::SchemaViolation
        } else {
            ErrorCode::MalformedFrame
        };
        ApiError(
            StatusCode::BAD_REQUEST,
            Box::new(Message::Error {
                code,
                message: e.to_string(),
            }),
        )
    })
}

async fn status(State(app): State<AppState>) -> Result<Response, ApiError> {
    Ok(Json(app.handle.status().await?).into_response())
}

#[derive(Deserialize)]
struct OverrideBody {
    duty: PumpDuty,
    #[serde(default)]
    source: Option<String>,
}

async fn override_duty(State(app): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: OverrideBody = parse_body(&body)?;
    let source = req.source.unwrap_or_else(|| "http".into());
    Ok(Json(app.handle.override_duty(req.duty, source).await?).into_response())
}

#[derive(Deserialize)]
struct ModeBody {
    mode: ControllerMode,
}

async fn set_mode(State(app): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: ModeBody = parse_body(&body)?;
    Ok(Json(app.handle.set_mode(req.mode).await?).into_response())
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    from: u64,
}

async fn events(
    State(app): State<AppState>,
    Query(q): Query<EventsQuery>,
) -> Result<Response, ApiError> {
    let events = app.handle.events_since(q.from).await?;
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        to_ndjson(&events),
    )
        .into_response())
}

async fn stream(State(app): State<AppState>, upgrade: WebSocketUpgrade) -> Response {
    upgrade.on_upgrade(move |socket| async move {
        if let Err(e) = push_status(socket, app).await {
            log::debug!("stream closed: {e}");
        }
    })
}

fn status_frame(msg: &Message) -> ws::Message {
    ws::Message::Text(encode_message(msg).trim_end().to_string().into())
}

/// Sends the current status, then every broadcast. Text frames from the
/// client are handled like TCP protocol lines and answered in place.
async fn push_status(mut socket: WebSocket, mut app: AppState) -> Result<(), axum::Error> {
    let mut updates = app.handle.subscribe();
    match app.handle.status().await {
        Ok(status) => socket.send(status_frame(&Message::Status(status))).await?,
        Err(_) => return Ok(()),
    }
    loop {
        tokio::select! {
            update = updates.recv() => match update {
                Ok(status) => socket.send(status_frame(&Message::Status(status))).await?,
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    if let Ok(status) = app.handle.status().await {
                        socket.send(status_frame(&Message::Status(status))).await?;
                    }
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(ws::Message::Text(text))) => {
                    let reply = respond(&app.handle, text.as_bytes(), "websocket").await;
                    // successful commands are confirmed by the broadcast
                    if matches!(reply, Message::Error { .. }) {
                        socket.send(status_frame(&reply)).await?;
                    }
                }
                Some(Ok(ws::Message::Close(_))) | None => return Ok(()),
                Some(Ok(_)) => {}
                Some(Err(e)) => return Err(e),
            },
            _ = app.shutdown.changed() => break,
        }
    }
    let _ = socket.send(ws::Message::Close(None)).await;
    Ok(())
}
