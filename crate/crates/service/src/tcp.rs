use std::io;

use irrigation_core::telemetry::{encode_message, ErrorCode, Message};
use tokio::io::{AsyncBufRead, AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;

use crate::actor::ServiceHandle;
use crate::dispatch::respond;

/// Longest accepted line in bytes, newline included.
pub const MAX_LINE_BYTES: usize = 64 * 1024;

pub(crate) async fn serve(
    listener: TcpListener,
    handle: ServiceHandle,
    mut shutdown: watch::Receiver<bool>,
) {
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    log::debug!("sensor connection from {peer}");
                    let handle = handle.clone();
                    let shutdown = shutdown.clone();
                    tokio::spawn(async move {
                        if let Err(e) = connection(stream, handle, shutdown).await {
                            log::debug!("sensor connection {peer} ended: {e}");
                        }
                    });
                }
                Err(e) => log::warn!("accept failed: {e}"),
            },
            _ = shutdown.changed() => break,
        }
    }
}

async fn connection(
    stream: TcpStream,
    handle: ServiceHandle,
    mut shutdown: watch::Receiver<bool>,
) -> io::Result<()> {
    let source = stream
        .peer_addr()
        .map_or_else(|_| "tcp".to_string(), |a| format!("tcp:{a}"));
    let (read, mut write) = stream.into_split();
    let mut reader = BufReader::new(read);
    let mut line = Vec::new();
    loop {
        line.clear();
        let read = tokio::select! {
            read = read_line(&mut reader, &mut line) => read?,
            _ = shutdown.changed() => return Ok(()),
        };
        let reply = match read {
            Line::Eof => return Ok(()),
            Line::TooLong => Message::Error {
                code: ErrorCode::MalformedFrame,
                message: format!("line exceeds {MAX_LINE_BYTES} bytes"),
            },
            Line::Complete => respond(&handle, &line, &source).await,
        };
        write.write_all(encode_message(&reply).as_bytes()).await?;
    }
}

enum Line {
    Complete,
    TooLong,
    Eof,
}

/// Reads up to and including `\n`. An over-long line is consumed and reported
/// so the connection can carry on with the next one.
async fn read_line<R: AsyncBufRead + Unpin>(reader: &mut R, buf: &mut Vec<u8>) -> io::Result<Line> {
    let n = (&mut *reader)
        .take(MAX_LINE_BYTES as u64)
        .read_until(b'\n', buf)
        .await?;
    if n == 0 {
        return Ok(Line::Eof);
    }
    if buf.last() == Some(&b'\n') {
        return Ok(Line::Complete);
    }
    if n < MAX_LINE_BYTES {
        // final line without a terminator
        return Ok(Line::Complete);
    }
    let mut rest = Vec::new();
    loop {
        rest.clear();
        let n = (&mut *reader)
            .take(MAX_LINE_BYTES as u64)
            .read_until(b'\n', &mut rest)
            .await?;
        if n == 0 || rest.last() == Some(&b'\n') {
            return Ok(Line::TooLong);
        }
    }
}
