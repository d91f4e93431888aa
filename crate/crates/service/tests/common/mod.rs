#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;

use irrigation_core::controller::Controller;
use irrigation_service::{start, RunningService, ServiceConfig};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;

pub fn local() -> SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}

pub fn config(log: Option<&Path>) -> ServiceConfig {
    let mut cfg = ServiceConfig::new(local(), local());
    cfg.log_path = log.map(Path::to_path_buf);
    cfg.controller = Controller::default();
    cfg
}

pub async fn running(log: Option<&Path>) -> RunningService {
    start(config(log)).await.unwrap()
}

pub struct LineClient {
    reader: BufReader<OwnedReadHalf>,
    writer: OwnedWriteHalf,
}

impl LineClient {
    pub async fn connect(addr: SocketAddr) -> Self {
        let (r, w) = TcpStream::connect(addr).await.unwrap().into_split();
        Self {
            reader: BufReader::new(r),
            writer: w,
        }
    }

    pub async fn send_raw(&mut self, bytes: &[u8]) {
        self.writer.write_all(bytes).await.unwrap();
    }

    pub async fn request(&mut self, line: &str) -> serde_json::Value {
        self.send_raw(line.as_bytes()).await;
        self.send_raw(b"\n").await;
        self.reply().await
    }

    pub async fn reply(&mut self) -> serde_json::Value {
        let mut buf = String::new();
        self.reader.read_line(&mut buf).await.unwrap();
        assert!(buf.ends_with('\n'), "reply not newline-terminated: {buf:?}");
        serde_json::from_str(&buf).unwrap()
    }
}

pub const DRY: &str =
    r#"{"type":"reading","t_c":20.0,"h_pct":30.0,"m_pct":5.0,"ts_ms":1700000000000}"#;
pub const WET: &str =
    r#"{"type":"reading","t_c":40.0,"h_pct":80.0,"m_pct":25.0,"ts_ms":1700000000000}"#;
