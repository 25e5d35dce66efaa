//! Multi-peer assembly over either backend.
//!
//! [`SimCluster`] binds a set of configured peers onto one simulated
//! network for deterministic, externally stepped runs. [`TcpCluster`]
//! starts real HTTP servers in-process, resolving ephemeral ports and
//! rewriting intra-cluster neighbor endpoints to the actually bound
//! addresses, so a whole network can run inside one test process.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::config::{ConfigError, PeerConfig};
use crate::descriptor::PeerId;
use crate::overlay::{spawn_readvertise_loop, Neighbor, PushReport};
use crate::peer::Peer;
use crate::transport::http::{HttpClient, HttpServer};
use crate::transport::sim::SimNet;
use crate::transport::{Client, Handler, TransportError, WireRequest, WireResponse, WireStatus};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("transport failure: {0}")]
    Transport(#[from] TransportError),
    #[error("invalid cluster: {0}")]
    Invalid(String),
}

fn check_unique_ids(configs: &[PeerConfig]) -> Result<(), ClusterError> {
    let mut seen = std::collections::BTreeSet::new();
    for c in configs {
        if !seen.insert(c.peer_id.clone()) {
            return Err(ClusterError::Invalid(format!(
                "peer id {} configured twice",
                c.peer_id
            )));
        }
    }
    Ok(())
}

/// A set of peers bound onto one simulated network.
pub struct SimCluster {
    net: Arc<SimNet>,
    peers: BTreeMap<PeerId, Arc<Peer>>,
}

impl SimCluster {
    /// Builds and binds every configured peer on a fresh default network.
    pub fn build(configs: &[PeerConfig]) -> Result<SimCluster, ClusterError> {
        SimCluster::build_on(SimNet::new(), configs)
    }

    /// Builds and binds every configured peer on the given network. The
    /// peer's label is its advertised endpoint.
    pub fn build_on(net: Arc<SimNet>, configs: &[PeerConfig]) -> Result<SimCluster, ClusterError> {
        check_unique_ids(configs)?;
        let mut peers = BTreeMap::new();
        for config in configs {
            config.validate()?;
            let label = config.advertised().to_string();
            let client: Arc<dyn Client> = Arc::new(net.client(&label));
            let peer = Peer::new(
                config.peer_id.clone(),
                label.clone(),
                config.neighbors.clone(),
                config.ttl,
                config.max_plan_len,
                config.definitions()?,
                client,
            )
            .map_err(|e| ClusterError::Invalid(e.to_string()))?;
            net.bind(&label, Arc::clone(&peer) as Arc<dyn Handler>)?;
            peers.insert(config.peer_id.clone(), peer);
        }
        Ok(SimCluster { net, peers })
    }

    pub fn net(&self) -> &Arc<SimNet> {
        &self.net
    }

    pub fn peers(&self) -> &BTreeMap<PeerId, Arc<Peer>> {
        &self.peers
    }

    pub fn peer(&self, id: &str) -> Option<&Arc<Peer>> {
        let id = PeerId::new(id).ok()?;
        self.peers.get(&id)
    }

    /// Every peer advertises all of its services, in peer id order.
    pub fn advertise_all(&self) -> PushReport {
        let mut total = PushReport::default();
        for peer in self.peers.values() {
            let report = peer.advertise_all();
            total.sent += report.sent;
            total.failures += report.failures;
        }
        total
    }

    /// Drains the network.
    pub fn settle(&self) -> u64 {
        self.net.run_to_quiescence()
    }
}

/// Handler shim that lets a server start accepting before its peer
/// exists; requests arriving in the gap are answered with a retryable
/// server error.
#[derive(Default)]
struct LateHandler {
    inner: RwLock<Option<Arc<dyn Handler>>>,
}

impl LateHandler {
    fn install(&self, handler: Arc<dyn Handler>) {
        *self.inner.write().unwrap() = Some(handler);
    }
}

impl Handler for LateHandler {
    fn handle(&self, request: WireRequest) -> WireResponse {
        let handler = self.inner.read().unwrap().clone();
        match handler {
            Some(h) => h.handle(request),
            None => WireResponse::new(
                WireStatus::ServerError,
                b"{\"message\":\"starting up\"}".to_vec(),
            ),
        }
    }
}

/// Knobs for an in-process TCP cluster; defaults match production use.
#[derive(Debug, Clone)]
pub struct TcpClusterOptions {
    pub request_timeout: Duration,
    pub notify_timeout: Duration,
    /// Overrides every peer's configured re-advertisement period when
    /// set; tests shorten it to observe convergence quickly.
    pub readvertise_period_override: Option<Duration>,
}

impl Default for TcpClusterOptions {
    fn default() -> TcpClusterOptions {
        TcpClusterOptions {
            request_timeout: crate::transport::http::DEFAULT_REQUEST_TIMEOUT,
            notify_timeout: crate::transport::http::DEFAULT_NOTIFY_TIMEOUT,
            readvertise_period_override: None,
        }
    }
}

/// A set of peers served over real TCP listeners in this process.
pub struct TcpCluster {
    peers: BTreeMap<PeerId, Arc<Peer>>,
    endpoints: BTreeMap<PeerId, String>,
    servers: Vec<HttpServer>,
    shutdown: Arc<AtomicBool>,
    readvertise_threads: Vec<JoinHandle<()>>,
}

impl TcpCluster {
    pub fn start(configs: &[PeerConfig]) -> Result<TcpCluster, ClusterError> {
        TcpCluster::start_with(configs, TcpClusterOptions::default())
    }

    /// Binds every listener first (resolving ephemeral ports), then
    /// builds the peers with intra-cluster neighbor endpoints rewritten
    /// to the bound addresses and installs them behind their servers.
    pub fn start_with(
        configs: &[PeerConfig],
        options: TcpClusterOptions,
    ) -> Result<TcpCluster, ClusterError> {
        check_unique_ids(configs)?;
        for config in configs {
            config.validate()?;
        }

        let mut servers = Vec::new();
        let mut late_handlers = Vec::new();
        let mut bound: BTreeMap<PeerId, String> = BTreeMap::new();
        for config in configs {
            let late = Arc::new(LateHandler::default());
            let server = HttpServer::bind(&config.listen, Arc::clone(&late) as Arc<dyn Handler>)?;
            bound.insert(config.peer_id.clone(), server.local_addr().to_string());
            servers.push(server);
            late_handlers.push(late);
        }

        let shutdown = Arc::new(AtomicBool::new(false));
        let mut peers = BTreeMap::new();
        let mut readvertise_threads = Vec::new();
        for (config, late) in configs.iter().zip(late_handlers) {
            let advertised = match &config.advertised_endpoint {
                Some(ep) => ep.clone(),
                None => bound[&config.peer_id].clone(),
            };
            let neighbors: Vec<Neighbor> = config
                .neighbors
                .iter()
                .map(|n| Neighbor {
                    id: n.id.clone(),
                    endpoint: bound.get(&n.id).cloned().unwrap_or_else(|| n.endpoint.clone()),
                })
                .collect();
            let client: Arc<dyn Client> = Arc::new(HttpClient::with_timeouts(
                options.request_timeout,
                options.notify_timeout,
            ));
            let peer = Peer::new(
                config.peer_id.clone(),
                advertised,
                neighbors,
                config.ttl,
                config.max_plan_len,
                config.definitions()?,
                client,
            )
            .map_err(|e| ClusterError::Invalid(e.to_string()))?;
            late.install(Arc::clone(&peer) as Arc<dyn Handler>);

            let period = options
                .readvertise_period_override
                .unwrap_or(Duration::from_millis(config.readvertise_period_ms));
            readvertise_threads.push(spawn_readvertise_loop(
                Arc::clone(peer.overlay()),
                period,
                Arc::clone(&shutdown),
            ));
            peers.insert(config.peer_id.clone(), peer);
        }

        Ok(TcpCluster {
            peers,
            endpoints: bound,
            servers,
            shutdown,
            readvertise_threads,
        })
    }

    pub fn peers(&self) -> &BTreeMap<PeerId, Arc<Peer>> {
        &self.peers
    }

    pub fn peer(&self, id: &str) -> Option<&Arc<Peer>> {
        let id = PeerId::new(id).ok()?;
        self.peers.get(&id)
    }

    /// Actually bound address of each peer.
    pub fn endpoints(&self) -> &BTreeMap<PeerId, String> {
        &self.endpoints
    }

    pub fn endpoint(&self, id: &str) -> Option<&str> {
        let id = PeerId::new(id).ok()?;
        self.endpoints.get(&id).map(String::as_str)
    }

    /// Every peer advertises all of its services once, immediately.
    pub fn advertise_all(&self) -> PushReport {
        let mut total = PushReport::default();
        for peer in self.peers.values() {
            let report = peer.advertise_all();
            total.sent += report.sent;
            total.failures += report.failures;
        }
        total
    }

    /// Polls until every peer's registry holds at least
    /// `expected_entries` entries, or the deadline passes. Returns
    /// whether convergence was reached.
    pub fn wait_converged(&self, expected_entries: usize, deadline: Duration) -> bool {
        let start = Instant::now();
        loop {
            let done = self
                .peers
                .values()
                .all(|p| p.registry().len() >= expected_entries);
            if done {
                return true;
            }
            if start.elapsed() > deadline {
                return false;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    }

    /// Stops re-advertisement loops and all listeners.
    pub fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        for t in self.readvertise_threads.drain(..) {
            let _ = t.join();
        }
        for server in &mut self.servers {
            server.shutdown();
        }
    }
}

impl Drop for TcpCluster {
    fn drop(&mut self) {
        self.stop();
    }
}
