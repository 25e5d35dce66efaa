//! Minimal HTTP/1.1 transport over TCP.
//!
//! The server accepts on a nonblocking listener and serves each
//! connection on its own worker thread, so a slow handler never blocks
//! other requests. Exchanges are one request, one response,
//! `Connection: close`.
//!
//! Only the slice of HTTP/1.1 the peer protocol needs is implemented:
//! GET and POST, `Content-Length` bodies, status codes 200, 400, 404,
//! and 500. Anything else on the wire is a protocol error.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::{Client, Handler, Method, TransportError, WireRequest, WireResponse, WireStatus};

/// Wall-clock deadline for a full request/response exchange.
pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(5);

/// Shorter deadline for fire-and-forget notifications.
pub const DEFAULT_NOTIFY_TIMEOUT: Duration = Duration::from_secs(1);

const MAX_HEADER_BYTES: usize = 64 * 1024;
const MAX_BODY_BYTES: usize = 16 * 1024 * 1024;
const ACCEPT_POLL: Duration = Duration::from_millis(5);

/// A listening HTTP server; stops accepting when dropped or shut down.
pub struct HttpServer {
    local_addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl HttpServer {
    /// Binds `addr` (`host:port`; port 0 picks an ephemeral port) and
    /// starts accepting. The handler runs on a dedicated thread per
    /// connection.
    pub fn bind(addr: &str, handler: Arc<dyn Handler>) -> Result<HttpServer, TransportError> {
        let listener = TcpListener::bind(addr).map_err(|e| {
            if e.kind() == ErrorKind::AddrInUse {
                TransportError::EndpointInUse(addr.to_string())
            } else {
                TransportError::Unreachable(addr.to_string(), e.to_string())
            }
        })?;
        let local_addr = listener
            .local_addr()
            .map_err(|e| TransportError::Unreachable(addr.to_string(), e.to_string()))?;
        listener
            .set_nonblocking(true)
            .map_err(|e| TransportError::Unreachable(addr.to_string(), e.to_string()))?;

        let shutdown = Arc::new(AtomicBool::new(false));
        let accept_shutdown = Arc::clone(&shutdown);
        let accept_thread = std::thread::Builder::new()
            .name(format!("http-accept-{local_addr}"))
            .spawn(move || accept_loop(listener, handler, accept_shutdown))
            .expect("spawn accept thread");

        Ok(HttpServer {
            local_addr,
            shutdown,
            accept_thread: Some(accept_thread),
        })
    }

    /// The bound address, with the ephemeral port resolved.
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Stops accepting new connections and joins the accept thread.
    /// Connections already being served run to completion on their own
    /// worker threads.
    pub fn shutdown(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, handler: Arc<dyn Handler>, shutdown: Arc<AtomicBool>) {
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let handler = Arc::clone(&handler);
                let _ = std::thread::Builder::new()
                    .name("http-worker".to_string())
                    .spawn(move || serve_connection(stream, handler));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                std::thread::sleep(ACCEPT_POLL);
            }
            Err(_) => {
                // Transient accept failure; keep the listener alive.
                std::thread::sleep(ACCEPT_POLL);
            }
        }
    }
}

fn serve_connection(stream: TcpStream, handler: Arc<dyn Handler>) {
    let _ = stream.set_read_timeout(Some(DEFAULT_REQUEST_TIMEOUT));
    let _ = stream.set_write_timeout(Some(DEFAULT_REQUEST_TIMEOUT));
    // Small request/response exchanges; Nagle only adds latency here.
    let _ = stream.set_nodelay(true);
    let mut reader = BufReader::new(match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    });
    let mut stream = stream;

    let response = match read_request(&mut reader) {
        Ok(request) => handler.handle(request),
        Err(msg) => WireResponse::new(WireStatus::BadRequest, msg.into_bytes()),
    };
    let _ = write_response(&mut stream, &response);
    let _ = stream.shutdown(std::net::Shutdown::Both);
}

fn read_line(reader: &mut impl BufRead, budget: &mut usize) -> Result<String, String> {
    let mut line = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        match reader.read(&mut byte) {
            Ok(0) => return Err("connection closed mid-line".to_string()),
            Ok(_) => {
                if *budget == 0 {
                    return Err("header section too large".to_string());
                }
                *budget -= 1;
                if byte[0] == b'\n' {
                    if line.last() == Some(&b'\r') {
                        line.pop();
                    }
                    return String::from_utf8(line).map_err(|_| "non-UTF-8 header".to_string());
                }
                line.push(byte[0]);
            }
            Err(e) => return Err(format!("read failed: {e}")),
        }
    }
}

fn read_request(reader: &mut impl BufRead) -> Result<WireRequest, String> {
    let mut budget = MAX_HEADER_BYTES;
    let request_line = read_line(reader, &mut budget)?;
    let mut parts = request_line.split(' ');
    let method = match parts.next() {
        Some("GET") => Method::Get,
        Some("POST") => Method::Post,
        Some(other) => return Err(format!("unsupported method {other:?}")),
        None => return Err("empty request line".to_string()),
    };
    let path = parts
        .next()
        .filter(|p| p.starts_with('/'))
        .ok_or_else(|| "missing request path".to_string())?
        .to_string();
    match parts.next() {
        Some("HTTP/1.1") | Some("HTTP/1.0") => {}
        _ => return Err("missing or unsupported HTTP version".to_string()),
    }

    let mut content_length = 0usize;
    loop {
        let line = read_line(reader, &mut budget)?;
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| format!("invalid Content-Length {:?}", value.trim()))?;
            }
        }
    }
    if content_length > MAX_BODY_BYTES {
        return Err(format!("body of {content_length} bytes exceeds limit"));
    }

    let mut body = vec![0u8; content_length];
    reader
        .read_exact(&mut body)
        .map_err(|e| format!("short body: {e}"))?;
    Ok(WireRequest { method, path, body })
}

fn write_response(stream: &mut TcpStream, response: &WireResponse) -> std::io::Result<()> {
    let code = response.status.http_code();
    let reason = match response.status {
        WireStatus::Ok => "OK",
        WireStatus::BadRequest => "Bad Request",
        WireStatus::NotFound => "Not Found",
        WireStatus::ServerError => "Internal Server Error",
    };
    let mut message = format!(
        "HTTP/1.1 {code} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        response.body.len()
    )
    .into_bytes();
    message.extend_from_slice(&response.body);
    stream.write_all(&message)?;
    stream.flush()
}

/// TCP client for the peer protocol. One connection per exchange.
#[derive(Debug, Clone)]
pub struct HttpClient {
    request_timeout: Duration,
    notify_timeout: Duration,
}

impl Default for HttpClient {
    fn default() -> HttpClient {
        HttpClient::new()
    }
}

impl HttpClient {
    pub fn new() -> HttpClient {
        HttpClient {
            request_timeout: DEFAULT_REQUEST_TIMEOUT,
            notify_timeout: DEFAULT_NOTIFY_TIMEOUT,
        }
    }

    pub fn with_timeouts(request_timeout: Duration, notify_timeout: Duration) -> HttpClient {
        HttpClient {
            request_timeout,
            notify_timeout,
        }
    }

    fn exchange(
        &self,
        endpoint: &str,
        request: &WireRequest,
        timeout: Duration,
    ) -> Result<WireResponse, TransportError> {
        let addr = resolve(endpoint)?;
        let stream = TcpStream::connect_timeout(&addr, timeout).map_err(|e| {
            if e.kind() == ErrorKind::TimedOut {
                TransportError::Timeout(endpoint.to_string())
            } else {
                TransportError::Unreachable(endpoint.to_string(), e.to_string())
            }
        })?;
        let map_io = |e: std::io::Error| {
            if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) {
                TransportError::Timeout(endpoint.to_string())
            } else {
                TransportError::Protocol(endpoint.to_string(), e.to_string())
            }
        };
        stream.set_read_timeout(Some(timeout)).map_err(map_io)?;
        stream.set_write_timeout(Some(timeout)).map_err(map_io)?;
        let _ = stream.set_nodelay(true);

        let mut head = format!(
            "{} {} HTTP/1.1\r\nHost: {endpoint}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
            request.method, request.path, request.body.len()
        )
        .into_bytes();
        head.extend_from_slice(&request.body);
        let mut stream = stream;
        stream.write_all(&head).map_err(map_io)?;

        let mut reader = BufReader::new(stream);
        read_response(&mut reader, endpoint).map_err(|e| match e {
            ReadError::Io(err) => map_io(err),
            ReadError::Protocol(msg) => TransportError::Protocol(endpoint.to_string(), msg),
        })
    }
}

enum ReadError {
    Io(std::io::Error),
    Protocol(String),
}

fn read_response(reader: &mut impl BufRead, endpoint: &str) -> Result<WireResponse, ReadError> {
    let mut budget = MAX_HEADER_BYTES;
    let read = |reader: &mut dyn BufRead, budget: &mut usize| -> Result<String, ReadError> {
        let mut line = Vec::new();
        loop {
            let mut byte = [0u8; 1];
            match reader.read(&mut byte) {
                Ok(0) => {
                    return Err(ReadError::Protocol(format!(
                        "{endpoint} closed mid-response"
                    )))
                }
                Ok(_) => {
                    if *budget == 0 {
                        return Err(ReadError::Protocol("response headers too large".into()));
                    }
                    *budget -= 1;
                    if byte[0] == b'\n' {
                        if line.last() == Some(&b'\r') {
                            line.pop();
                        }
                        return String::from_utf8(line)
                            .map_err(|_| ReadError::Protocol("non-UTF-8 header".into()));
                    }
                    line.push(byte[0]);
                }
                Err(e) => return Err(ReadError::Io(e)),
            }
        }
    };

    let status_line = read(reader, &mut budget)?;
    let mut parts = status_line.split(' ');
    match parts.next() {
        Some(v) if v.starts_with("HTTP/1.") => {}
        _ => return Err(ReadError::Protocol(format!("bad status line {status_line:?}"))),
    }
    let code: u16 = parts
        .next()
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| ReadError::Protocol(format!("bad status line {status_line:?}")))?;
    let status = WireStatus::from_http_code(code)
        .ok_or_else(|| ReadError::Protocol(format!("unexpected status code {code}")))?;

    let mut content_length: Option<usize> = None;
    loop {
        let line = read(reader, &mut budget)?;
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                let n = value
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| ReadError::Protocol("invalid Content-Length".into()))?;
                content_length = Some(n);
            }
        }
    }

    let body = match content_length {
        Some(n) if n > MAX_BODY_BYTES => {
            return Err(ReadError::Protocol(format!("body of {n} bytes exceeds limit")))
        }
        Some(n) => {
            let mut body = vec![0u8; n];
            reader.read_exact(&mut body).map_err(ReadError::Io)?;
            body
        }
        // Connection: close responses without a length run to EOF.
        None => {
            let mut body = Vec::new();
            reader.read_to_end(&mut body).map_err(ReadError::Io)?;
            body
        }
    };
    Ok(WireResponse { status, body })
}

fn resolve(endpoint: &str) -> Result<SocketAddr, TransportError> {
    endpoint
        .to_socket_addrs()
        .map_err(|e| TransportError::Unreachable(endpoint.to_string(), e.to_string()))?
        .next()
        .ok_or_else(|| {
            TransportError::Unreachable(endpoint.to_string(), "no address for host".to_string())
        })
}

impl Client for HttpClient {
    fn request(
        &self,
        endpoint: &str,
        request: WireRequest,
    ) -> Result<WireResponse, TransportError> {
        self.exchange(endpoint, &request, self.request_timeout)
    }

    /// Delivery confirmation only: the response body is discarded, but a
    /// transmission failure is still reported so callers can count it.
    fn notify(&self, endpoint: &str, request: WireRequest) -> Result<(), TransportError> {
        self.exchange(endpoint, &request, self.notify_timeout)
            .map(|_| ())
    }
}
