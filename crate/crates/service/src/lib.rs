//! Network host for the irrigation controller.
//!
//! A single actor task owns the [`ServerState`] and the NDJSON event log;
//! sensor connections (TCP line protocol), HTTP handlers and WebSocket
//! subscribers talk to it through a [`ServiceHandle`].

mod actor;
mod dispatch;
mod http;
mod tcp;

use std::fs::File;
use std::io::{self, BufReader};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use irrigation_core::controller::{Controller, ControllerMode};
use irrigation_core::telemetry::{
    read_ndjson, LogError, ServerState, ServerStatus, TelemetryError,
};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{oneshot, watch};
use tokio::task::JoinHandle;

pub use actor::{system_clock, Clock, RequestError, ServiceHandle};
pub use dispatch::respond;
pub use http::router;
pub use tcp::MAX_LINE_BYTES;

use actor::{Actor, LogFile};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: io::Error },
    #[error("event log {path}: {source}")]
    LogFile { path: PathBuf, source: io::Error },
    #[error("event log {path}: {source}")]
    CorruptLog { path: PathBuf, source: LogError },
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error("service task failed: {0}")]
    Task(String),
}

#[derive(Clone)]
pub struct ServiceConfig {
    pub sensor_addr: SocketAddr,
    pub http_addr: SocketAddr,
    /// Event log; replayed on start and appended to while running.
    pub log_path: Option<PathBuf>,
    /// Mode to switch to on start. `None` keeps the logged mode, or rule-only
    /// for a fresh log.
    pub mode: Option<ControllerMode>,
    pub controller: Controller,
    pub clock: Clock,
}

impl ServiceConfig {
    pub fn new(sensor_addr: SocketAddr, http_addr: SocketAddr) -> Self {
        Self {
            sensor_addr,
            http_addr,
            log_path: None,
            mode: None,
            controller: Controller::default(),
            clock: system_clock(),
        }
    }
}

pub struct RunningService {
    pub sensor_addr: SocketAddr,
    pub http_addr: SocketAddr,
    handle: ServiceHandle,
    stop_listeners: watch::Sender<bool>,
    stop_actor: oneshot::Sender<()>,
    actor: JoinHandle<io::Result<ServerStatus>>,
    listeners: Vec<JoinHandle<()>>,
}

/// Replays the log (if any), binds both listeners and starts serving.
pub async fn start(config: ServiceConfig) -> Result<RunningService, ServiceError> {
    let now = (config.clock)();
    let (mut server, persisted) = match &config.log_path {
        Some(path) if path.exists() => {
            let file = File::open(path).map_err(|source| ServiceError::LogFile {
                path: path.clone(),
                source,
            })?;
            let events =
                read_ndjson(BufReader::new(file)).map_err(|source| ServiceError::CorruptLog {
                    path: path.clone(),
                    source,
                })?;
            if events.is_empty() {
                let mode = config.mode.unwrap_or_default();
                (ServerState::new(config.controller.clone(), mode, now)?, 0)
            } else {
                let n = events.len();
                let server = ServerState::restore(config.controller.clone(), events).map_err(
                    |e| match e {
                        TelemetryError::Log(source) => ServiceError::CorruptLog {
                            path: path.clone(),
                            source,
                        },
                        other => other.into(),
                    },
                )?;
                (server, n)
            }
        }
        _ => {
            let mode = config.mode.unwrap_or_default();
            (ServerState::new(config.controller.clone(), mode, now)?, 0)
        }
    };
    if let Some(mode) = config.mode {
        if server.status().mode != mode {
            server.handle_mode(mode, now)?;
        }
    }

    let log = match &config.log_path {
        Some(path) => {
            let log_err = |source| ServiceError::LogFile {
                path: path.clone(),
                source,
            };
            let mut log = LogFile::open(path).map_err(log_err)?;
            log.append(&server.log().events()[persisted..])
                .map_err(log_err)?;
            Some(log)
        }
        None => None,
    };

    let sensor_listener = bind(config.sensor_addr).await?;
    let http_listener = bind(config.http_addr).await?;
    let sensor_addr = local_addr(&sensor_listener, config.sensor_addr)?;
    let http_addr = local_addr(&http_listener, config.http_addr)?;

    let (stop_actor, actor_stop_rx) = oneshot::channel();
    let (handle, actor) = Actor::new(server, log, config.clock.clone()).spawn(actor_stop_rx);
    let (stop_listeners, stop_rx) = watch::channel(false);

    let tcp_task = tokio::spawn(tcp::serve(sensor_listener, handle.clone(), stop_rx.clone()));
    let app = router(handle.clone(), stop_rx.clone());
    let mut http_stop = stop_rx;
    let http_task = tokio::spawn(async move {
        let serve = axum::serve(http_listener, app).with_graceful_shutdown(async move {
            let _ = http_stop.changed().await;
        });
        if let Err(e) = serve.await {
            log::error!("http server failed: {e}");
        }
    });
    log::info!("sensor protocol on {sensor_addr}, http on {http_addr}");

    Ok(RunningService {
        sensor_addr,
        http_addr,
        handle,
        stop_listeners,
        stop_actor,
        actor,
        listeners: vec![tcp_task, http_task],
    })
}

async fn bind(addr: SocketAddr) -> Result<TcpListener, ServiceError> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind { addr, source })
}

fn local_addr(listener: &TcpListener, addr: SocketAddr) -> Result<SocketAddr, ServiceError> {
    listener
        .local_addr()
        .map_err(|source| ServiceError::Bind { addr, source })
}

impl RunningService {
    pub fn handle(&self) -> &ServiceHandle {
        &self.handle
    }

    /// Stops accepting connections, lets in-flight commands finish, flushes
    /// the log and returns the final status.
    pub async fn shutdown(self) -> Result<ServerStatus, ServiceError> {
        let _ = self.stop_listeners.send(true);
        for task in self.listeners {
            if tokio::time::timeout(Duration::from_secs(5), task)
                .await
                .is_err()
            {
                log::warn!("listener did not stop within 5 s");
            }
        }
        let _ = self.stop_actor.send(());
        match self.actor.await {
            Ok(Ok(status)) => Ok(status),
            Ok(Err(e)) => Err(ServiceError::Task(format!("event log write failed: {e}"))),
            Err(e) => Err(ServiceError::Task(e.to_string())),
        }
    }
}
