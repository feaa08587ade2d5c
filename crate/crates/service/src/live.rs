//! Live frame ingestion over a local TCP stream: one newline-delimited
//! frame or gaze record per line, the same schema `/v1/ingest` accepts.

use gazecoach_core::session::IngestRecord;
use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::net::{TcpListener, TcpStream};

use crate::worker::{Request, ServiceClient};

/// Accepts adapter connections until the session ends. With
/// `end_on_close`, the first connection to close ends the source.
pub async fn serve_ingest(listener: TcpListener, client: ServiceClient, end_on_close: bool) {
    loop {
        let Ok((stream, peer)) = listener.accept().await else {
            continue;
        };
        tracing::info!(%peer, "frame source connected");
        if end_on_close {
            read_records(stream, &client).await;
            tracing::info!(%peer, "frame source closed");
            let _ = client.send(Request::EndOfSource { end_t: None });
            return;
        }
        let client = client.clone();
        tokio::spawn(async move {
            read_records(stream, &client).await;
            tracing::info!(%peer, "frame source closed");
        });
    }
}

async fn read_records(stream: TcpStream, client: &ServiceClient) {
    let mut lines = BufReader::new(stream).lines();
    let mut n = 0usize;
    while let Ok(Some(line)) = lines.next_line().await {
        n += 1;
        if line.trim().is_empty() {
            continue;
        }
        match IngestRecord::parse(&line) {
            Ok(r) => {
                let request = Request::Ingest {
                    records: vec![r],
                    reply: None,
                };
                if client.send(request).is_err() {
                    return;
                }
            }
            Err(e) => tracing::warn!(line = n, "unreadable record: {e}"),
        }
    }
}
