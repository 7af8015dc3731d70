//! Read-only diagnostic endpoint: `GET /status` returns a JSON snapshot of
//! the service counters. Every other path gets 404 with an empty body.
//!
//! The detect loop owns the counters and copies them into the board with
//! `try_lock`, skipping the copy when a responder holds the lock, so the
//! endpoint can never stall ingest. A responder always sees one whole copy,
//! never a mix of two.

use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, PoisonError};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::detector::{AnalysisKind, Verdict};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LastAnalysis {
    pub kind: AnalysisKind,
    pub at_s: f64,
    pub verdict: Option<Verdict>,
}

/// Counters as served. Field order is the JSON order.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StatusSnapshot {
    pub uptime_s: f64,
    pub samples_processed: u64,
    pub spectra_computed: u64,
    pub pulses_detected: u64,
    pub last_analysis: Option<LastAnalysis>,
    pub alerts_emitted: u64,
    pub input_errors: u64,
}

#[derive(Debug)]
pub struct StatusBoard {
    started: Instant,
    current: Mutex<StatusSnapshot>,
}

impl Default for StatusBoard {
    fn default() -> Self {
        Self::new()
    }
}

impl StatusBoard {
    pub fn new() -> Self {
        Self {
            started: Instant::now(),
            current: Mutex::new(StatusSnapshot::default()),
        }
    }

    /// Copies `snapshot` in unless a reader holds the lock. Returns whether
    /// the copy happened.
    pub fn try_publish(&self, snapshot: &StatusSnapshot) -> bool {
        match self.current.try_lock() {
            Ok(mut cur) => {
                cur.clone_from(snapshot);
                true
            }
            Err(_) => false,
        }
    }

    /// Copies `snapshot` in, waiting for the lock.
    pub fn publish(&self, snapshot: &StatusSnapshot) {
        self.current
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .clone_from(snapshot);
    }

    pub fn snapshot(&self) -> StatusSnapshot {
        let mut snap = self
            .current
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .clone();
        snap.uptime_s = self.started.elapsed().as_secs_f64();
        snap
    }
}

/// Background HTTP responder for a [`StatusBoard`].
pub struct StatusServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl StatusServer {
    /// Binds `addr` (`host:port`; port 0 picks a free one) and starts serving.
    pub fn bind(addr: &str, board: Arc<StatusBoard>) -> Result<Self> {
        let bind_err =
            |e: std::io::Error| Error::InvalidConfig(format!("status address {addr}: {e}"));
        let resolved = addr
            .to_socket_addrs()
            .map_err(bind_err)?
            .next()
            .ok_or_else(|| {
                Error::InvalidConfig(format!("status address {addr} does not resolve"))
            })?;
        let listener = TcpListener::bind(resolved).map_err(bind_err)?;
        let addr = listener.local_addr().map_err(bind_err)?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = std::thread::Builder::new()
            .name("status".into())
            .spawn(move || {
                for conn in listener.incoming() {
                    if flag.load(Ordering::Acquire) {
                        break;
                    }
                    if let Ok(stream) = conn {
                        // a misbehaving client only costs its own request
                        let _ = respond(stream, &board);
                    }
                }
            })
            .map_err(|e| Error::io("status thread", e))?;
        Ok(Self {
            addr,
            stop,
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        let Some(thread) = self.thread.take() else {
            return;
        };
        self.stop.store(true, Ordering::Release);
        // wake the blocking accept
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        let _ = thread.join();
    }
}

impl Drop for StatusServer {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

const MAX_REQUEST: usize = 8 * 1024;

fn respond(mut stream: TcpStream, board: &StatusBoard) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(2)))?;
    stream.set_write_timeout(Some(Duration::from_secs(2)))?;
    let mut buf = Vec::with_capacity(512);
    let mut chunk = [0u8; 512];
    while !buf.windows(4).any(|w| w == b"\r\n\r\n") && buf.len() < MAX_REQUEST {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            break;
        }
        buf.extend_from_slice(&chunk[..n]);
    }
    let head = String::from_utf8_lossy(&buf);
    let mut parts = head.lines().next().unwrap_or("").split_whitespace();
    let (method, target) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
    let path = target.split('?').next().unwrap_or("");
    let response = match (method, path) {
        ("GET", "/status") => {
            let body = serde_json::to_string(&board.snapshot()).expect("status serializes");
            format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
        }
        ("GET", _) => empty_response("404 Not Found"),
        _ => empty_response("405 Method Not Allowed"),
    };
    stream.write_all(response.as_bytes())?;
    stream.flush()?;
    stream.shutdown(Shutdown::Both)
}

fn empty_response(status: &str) -> String {
    format!("HTTP/1.1 {status}\r\nContent-Length: 0\r\nConnection: close\r\n\r\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn get(addr: SocketAddr, path: &str) -> (String, String) {
        let mut s = TcpStream::connect(addr).unwrap();
        write!(s, "GET {path} HTTP/1.1\r\nHost: x\r\n\r\n").unwrap();
        let mut text = String::new();
        s.read_to_string(&mut text).unwrap();
        let (head, body) = text.split_once("\r\n\r\n").unwrap();
        (head.lines().next().unwrap().to_string(), body.to_string())
    }

    #[test]
    fn serves_snapshot_and_404s() {
        let board = Arc::new(StatusBoard::new());
        let server = StatusServer::bind("127.0.0.1:0", Arc::clone(&board)).unwrap();
        let (status, body) = get(server.local_addr(), "/status");
        assert_eq!(status, "HTTP/1.1 200 OK");
        let v: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(v["samples_processed"], 0);
        let positions: Vec<usize> = [
            "uptime_s",
            "samples_processed",
            "spectra_computed",
            "pulses_detected",
            "last_analysis",
            "alerts_emitted",
            "input_errors",
        ]
        .iter()
        .map(|k| body.find(&format!("\"{k}\"")).expect("key present"))
        .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{body}");

        board.publish(&StatusSnapshot {
            samples_processed: 1200,
            ..StatusSnapshot::default()
        });
        let (_, body) = get(server.local_addr(), "/status?x=1");
        let v: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(v["samples_processed"], 1200);

        let (status, body) = get(server.local_addr(), "/metrics");
        assert_eq!(
            (status.as_str(), body.as_str()),
            ("HTTP/1.1 404 Not Found", "")
        );
        server.shutdown();
    }

    #[test]
    fn try_publish_skips_while_read_locked() {
        let board = StatusBoard::new();
        let snap = StatusSnapshot {
            samples_processed: 5,
            ..StatusSnapshot::default()
        };
        let guard = board.current.lock().unwrap();
        assert!(!board.try_publish(&snap));
        drop(guard);
        assert!(board.try_publish(&snap));
        assert_eq!(board.snapshot().samples_processed, 5);
    }
}
