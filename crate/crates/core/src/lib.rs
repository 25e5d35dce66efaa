//! Unstructured peer-to-peer service network with typed service discovery,
//! composition planning, and lazy service injection.
//!
//! Each peer hosts a set of typed services (some active, some dormant in a
//! local repository), floods advertisements for them over a neighbor overlay,
//! and caches the advertisements it hears in a local registry. A composite
//! client request is answered by planning a checklist of service invocations
//! over the registry, executing it step by step across peers, and returning
//! one aggregated response. Dormant services are injected (activated) on
//! first invocation and re-advertised so the whole network learns the new
//! state.
//!
//! The wire layer has two interchangeable backends: a minimal HTTP/1.1
//! server over TCP for real deployments and a deterministic in-memory
//! simulator for tests and scripted scenarios.

pub mod cluster;
pub mod config;
pub mod descriptor;
pub mod executor;
pub mod overlay;
pub mod planner;
pub mod registry;
pub mod repository;
pub mod scenario;
pub mod transport;

mod peer;

pub use peer::Peer;
