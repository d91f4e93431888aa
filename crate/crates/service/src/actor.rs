use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use irrigation_core::controller::ControllerMode;
use irrigation_core::rulebase::{PumpDuty, SensorReading};
use irrigation_core::telemetry::{
    event_to_line, Event, Outcome, ServerState, ServerStatus, TelemetryError,
};
use thiserror::Error;
use tokio::sync::{broadcast, mpsc, oneshot};

/// Milliseconds since the Unix epoch; swappable for tests.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64)
    })
}

#[derive(Debug, Error)]
pub enum RequestError {
    #[error(transparent)]
    Rejected(#[from] TelemetryError),
    #[error("service is shutting down")]
    Stopped,
}

pub(crate) enum Command {
    Reading {
        reading: SensorReading,
        reply: oneshot::Sender<Result<ServerStatus, TelemetryError>>,
    },
    Override {
        duty: PumpDuty,
        source: String,
        reply: oneshot::Sender<ServerStatus>,
    },
    Mode {
        mode: ControllerMode,
        reply: oneshot::Sender<Result<ServerStatus, TelemetryError>>,
    },
    Status {
        reply: oneshot::Sender<ServerStatus>,
    },
    Events {
        from: u64,
        reply: oneshot::Sender<Vec<Event>>,
    },
}

/// Cloneable front door to the single state owner.
#[derive(Clone)]
pub struct ServiceHandle {
    tx: mpsc::Sender<Command>,
    updates: broadcast::Sender<ServerStatus>,
}

impl ServiceHandle {
    async fn ask<T>(
        &self,
        make: impl FnOnce(oneshot::Sender<T>) -> Command,
    ) -> Result<T, RequestError> {
        let (reply, rx) = oneshot::channel();
        self.tx
            .send(make(reply))
            .await
            .map_err(|_| RequestError::Stopped)?;
        rx.await.map_err(|_| RequestError::Stopped)
    }

    pub async fn submit_reading(
        &self,
        reading: SensorReading,
    ) -> Result<ServerStatus, RequestError> {
        Ok(self
            .ask(|reply| Command::Reading { reading, reply })
            .await??)
    }

    pub async fn override_duty(
        &self,
        duty: PumpDuty,
        source: impl Into<String>,
    ) -> Result<ServerStatus, RequestError> {
        let source = source.into();
        self.ask(|reply| Command::Override {
            duty,
            source,
            reply,
        })
        .await
    }

    pub async fn set_mode(&self, mode: ControllerMode) -> Result<ServerStatus, RequestError> {
        Ok(self.ask(|reply| Command::Mode { mode, reply }).await??)
    }

    pub async fn status(&self) -> Result<ServerStatus, RequestError> {
        self.ask(|reply| Command::Status { reply }).await
    }

    /// Logged events with `seq >= from`.
    pub async fn events_since(&self, from: u64) -> Result<Vec<Event>, RequestError> {
        self.ask(|reply| Command::Events { from, reply }).await
    }

    /// Receives one status per accepted command and per pump change.
    pub fn subscribe(&self) -> broadcast::Receiver<ServerStatus> {
        self.updates.subscribe()
    }
}

/// Append-only NDJSON log, flushed after every command.
pub(crate) struct LogFile {
    out: BufWriter<File>,
}

impl LogFile {
    pub(crate) fn open(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub(crate) fn append(&mut self, events: &[Event]) -> io::Result<()> {
        for event in events {
            self.out.write_all(event_to_line(event).as_bytes())?;
            self.out.write_all(b"\n")?;
        }
        self.out.flush()
    }
}

pub(crate) struct Actor {
    server: ServerState,
    log: Option<LogFile>,
    updates: broadcast::Sender<ServerStatus>,
    clock: Clock,
}

impl Actor {
    pub(crate) fn new(server: ServerState, log: Option<LogFile>, clock: Clock) -> Self {
        let (updates, _) = broadcast::channel(256);
        Self {
            server,
            log,
            updates,
            clock,
        }
    }

    pub(crate) fn spawn(
        self,
        shutdown: oneshot::Receiver<()>,
    ) -> (
        ServiceHandle,
        tokio::task::JoinHandle<io::Result<ServerStatus>>,
    ) {
        let (tx, rx) = mpsc::channel(1024);
        let handle = ServiceHandle {
            tx,
            updates: self.updates.clone(),
        };
        (handle, tokio::spawn(self.run(rx, shutdown)))
    }

    async fn run(
        mut self,
        mut rx: mpsc::Receiver<Command>,
        mut shutdown: oneshot::Receiver<()>,
    ) -> io::Result<ServerStatus> {
        loop {
            let wait = self
                .server
                .next_deadline_ms()
                .map(|deadline| Duration::from_millis(deadline.saturating_sub((self.clock)())));
            tokio::select! {
                biased;
                _ = &mut shutdown => break,
                cmd = rx.recv() => match cmd {
                    Some(cmd) => self.handle(cmd)?,
                    None => break,
                },
                _ = tokio::time::sleep(wait.unwrap_or_default()), if wait.is_some() => {
                    let out = self.server.tick((self.clock)());
                    self.commit(&out)?;
                }
            }
        }
        if let Some(log) = &mut self.log {
            log.out.flush()?;
        }
        Ok(self.server.status().clone())
    }

    fn handle(&mut self, cmd: Command) -> io::Result<()> {
        let now = (self.clock)();
        match cmd {
            Command::Reading { reading, reply } => {
                let result = self.server.handle_reading(reading, now);
                if let Ok(out) = &result {
                    self.commit(out)?;
                } else if let Err(e) = &result {
                    log::warn!("rejected reading: {e}");
                }
                let _ = reply.send(result.map(|_| self.server.status().clone()));
            }
            Command::Override {
                duty,
                source,
                reply,
            } => {
                let out = self.server.handle_override(duty, &source, now);
                self.commit(&out)?;
                let _ = reply.send(self.server.status().clone());
            }
            Command::Mode { mode, reply } => {
                let result = self.server.handle_mode(mode, now);
                if let Ok(out) = &result {
                    self.commit(out)?;
                }
                let _ = reply.send(result.map(|_| self.server.status().clone()));
            }
            Command::Status { reply } => {
                let _ = reply.send(self.server.status().clone());
            }
            Command::Events { from, reply } => {
                let _ = reply.send(self.server.log().since(from).to_vec());
            }
        }
        Ok(())
    }

    /// Persists first so nothing is announced that is not on disk.
    fn commit(&mut self, out: &Outcome) -> io::Result<()> {
        if let Some(log) = &mut self.log {
            log.append(&out.events)?;
        }
        if let Some(status) = &out.broadcast {
            // no subscribers is fine
            let _ = self.updates.send(status.clone());
        }
        Ok(())
    }
}
