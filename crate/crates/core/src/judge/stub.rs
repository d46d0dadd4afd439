//! Minimal scripted chat-completions endpoint.
//!
//! Serves a fixed sequence of actions, one per incoming request: reply with
//! canned content, return an error status, or hang past the client timeout.
//! Used by the test suite and handy for trying `--judge remote` without a
//! real model server.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

/// What to do with one incoming request.
#[derive(Debug, Clone)]
pub enum StubAction {
    /// Respond 200 with a chat completion whose content is the string.
    Reply(String),
    /// Respond with the given HTTP status and an empty JSON body.
    Status(u16),
    /// Sleep this long, then drop the connection (client observes a timeout
    /// or reset).
    Hang(u64),
}

pub struct StubServer {
    addr: std::net::SocketAddr,
    stop: Arc<AtomicBool>,
    served: Arc<AtomicUsize>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Bind to an ephemeral local port and serve the script. Requests past
    /// the end of the script repeat the final action.
    pub fn start(script: Vec<StubAction>) -> std::io::Result<StubServer> {
        assert!(!script.is_empty(), "stub script must have at least one action");
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));
        let served = Arc::new(AtomicUsize::new(0));
        let stop2 = stop.clone();
        let served2 = served.clone();
        let handle = std::thread::spawn(move || {
            let mut next = 0usize;
            while !stop2.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let action = script[next.min(script.len() - 1)].clone();
                        next += 1;
                        served2.fetch_add(1, Ordering::Relaxed);
                        // Own thread per connection: a Hang action must not
                        // stall the accept loop or retries never get served.
                        std::thread::spawn(move || handle_connection(stream, action));
                    }
                    Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(2));
                    }
                    Err(_) => break,
                }
            }
        });
        Ok(StubServer { addr, stop, served, handle: Some(handle) })
    }

    /// Base URL in the shape the endpoint config expects.
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn requests_served(&self) -> usize {
        self.served.load(Ordering::Relaxed)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(mut stream: TcpStream, action: StubAction) {
    let _ = stream.set_read_timeout(Some(Duration::from_secs(5)));
    // Drain the request: headers, then Content-Length bytes of body.
    let mut buf = Vec::new();
    let mut chunk = [0u8; 1024];
    let header_end = loop {
        match stream.read(&mut chunk) {
            Ok(0) => return,
            Ok(n) => {
                buf.extend_from_slice(&chunk[..n]);
                if let Some(pos) = find_header_end(&buf) {
                    break pos;
                }
                if buf.len() > 1 << 20 {
                    return;
                }
            }
            Err(_) => return,
        }
    };
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length = headers
        .lines()
        .find_map(|l| {
            let (name, value) = l.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse::<usize>().ok())?
        })
        .unwrap_or(0);
    let mut body_have = buf.len() - (header_end + 4);
    while body_have < content_length {
        match stream.read(&mut chunk) {
            Ok(0) | Err(_) => break,
            Ok(n) => body_have += n,
        }
    }

    match action {
        StubAction::Reply(content) => {
            let body = serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": content}}]
            })
            .to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                body.len(),
                body
            );
        }
        StubAction::Status(code) => {
            let _ = write!(
                stream,
                "HTTP/1.1 {code} ERR\r\nContent-Type: application/json\r\nContent-Length: 2\r\nConnection: close\r\n\r\n{{}}"
            );
        }
        StubAction::Hang(ms) => {
            std::thread::sleep(Duration::from_millis(ms));
            // Drop without replying.
        }
    }
    let _ = stream.flush();
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}
