//! Wire abstractions shared by every backend.
//!
//! Peers exchange request/response documents over four routes. The
//! transport layer carries opaque method, path, and body; routing and
//! document semantics live above it. Two backends implement the same
//! contracts: a minimal HTTP/1.1 server over TCP ([`http`]) and a
//! deterministic in-memory simulator with virtual time ([`sim`]).

pub mod http;
pub mod sim;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Request method. Reads use `Get`, mutations and invocations use `Post`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Get => f.write_str("GET"),
            Method::Post => f.write_str("POST"),
        }
    }
}

/// Outcome class of a handled request.
///
/// HTTP mapping: `Ok` 200, `BadRequest` 400, `NotFound` 404,
/// `ServerError` 500.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WireStatus {
    Ok,
    BadRequest,
    NotFound,
    ServerError,
}

impl WireStatus {
    pub fn http_code(self) -> u16 {
        match self {
            WireStatus::Ok => 200,
            WireStatus::BadRequest => 400,
            WireStatus::NotFound => 404,
            WireStatus::ServerError => 500,
        }
    }

    pub fn from_http_code(code: u16) -> Option<WireStatus> {
        match code {
            200 => Some(WireStatus::Ok),
            400 => Some(WireStatus::BadRequest),
            404 => Some(WireStatus::NotFound),
            500 => Some(WireStatus::ServerError),
            _ => None,
        }
    }
}

/// One request as seen by a handler.
#[derive(Debug, Clone)]
pub struct WireRequest {
    pub method: Method,
    pub path: String,
    pub body: Vec<u8>,
}

impl WireRequest {
    pub fn get(path: impl Into<String>) -> WireRequest {
        WireRequest {
            method: Method::Get,
            path: path.into(),
            body: Vec::new(),
        }
    }

    pub fn post(path: impl Into<String>, body: Vec<u8>) -> WireRequest {
        WireRequest {
            method: Method::Post,
            path: path.into(),
            body,
        }
    }
}

/// One response as produced by a handler.
#[derive(Debug, Clone)]
pub struct WireResponse {
    pub status: WireStatus,
    pub body: Vec<u8>,
}

impl WireResponse {
    pub fn new(status: WireStatus, body: Vec<u8>) -> WireResponse {
        WireResponse { status, body }
    }

    pub fn ok(body: Vec<u8>) -> WireResponse {
        WireResponse::new(WireStatus::Ok, body)
    }
}

/// Transport-level failures, distinct from application errors carried in
/// response bodies.
#[derive(Debug, Clone, Error)]
pub enum TransportError {
    /// The destination could not be reached at all.
    #[error("endpoint {0} unreachable: {1}")]
    Unreachable(String, String),
    /// The destination was reached but did not answer within the deadline.
    #[error("request to {0} timed out")]
    Timeout(String),
    /// A server could not claim its endpoint because it is already taken.
    #[error("endpoint {0} already in use")]
    EndpointInUse(String),
    /// The bytes on the wire did not form a valid message.
    #[error("protocol error talking to {0}: {1}")]
    Protocol(String, String),
}

/// Server-side request processor. One handler serves all routes of a peer;
/// backends call it for every delivered request.
///
/// Implementations must be thread-safe: the TCP backend invokes the same
/// handler concurrently from one worker thread per connection.
pub trait Handler: Send + Sync {
    fn handle(&self, request: WireRequest) -> WireResponse;
}

impl<F> Handler for F
where
    F: Fn(WireRequest) -> WireResponse + Send + Sync,
{
    fn handle(&self, request: WireRequest) -> WireResponse {
        self(request)
    }
}

/// Client-side sender. `request` waits for the response; `notify` is
/// fire-and-forget delivery for gossip, where only transmission failures
/// matter.
pub trait Client: Send + Sync {
    fn request(&self, endpoint: &str, request: WireRequest)
        -> Result<WireResponse, TransportError>;

    fn notify(&self, endpoint: &str, request: WireRequest) -> Result<(), TransportError>;
}

impl<C: Client + ?Sized> Client for Arc<C> {
    fn request(
        &self,
        endpoint: &str,
        request: WireRequest,
    ) -> Result<WireResponse, TransportError> {
        (**self).request(endpoint, request)
    }

    fn notify(&self, endpoint: &str, request: WireRequest) -> Result<(), TransportError> {
        (**self).notify(endpoint, request)
    }
}
