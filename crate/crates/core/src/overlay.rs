//! Gossip flooding of service advertisements over the neighbor overlay.
//!
//! Each peer advertises its own services to its direct neighbors; a
//! receiver absorbs the advertisement into its registry and forwards it
//! to its other neighbors while the hop budget lasts. Two mechanisms
//! bound the flood: `hops_remaining` decrements per hop, and a seen set
//! keyed by `(origin, service_name, seqno)` ensures any peer forwards a
//! given advertisement at most once no matter how many copies arrive.
//!
//! Sequence numbers are per service and owned by the origin: the first
//! advertisement of a service carries seqno 1, and every re-advertisement
//! (periodic refresh or a status change) increments it, which is what
//! lets stale news lose everywhere without coordination.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::descriptor::{
    to_canonical_json, Advertisement, DescriptorError, PeerId, ServiceDescriptor,
};
use crate::registry::Registry;
use crate::transport::{Client, WireRequest};

/// Default hop budget for a fresh advertisement.
pub const DEFAULT_TTL: u32 = 8;

/// Default wall-clock period between advertisement refreshes on the TCP
/// backend.
pub const DEFAULT_READVERTISE_PERIOD: Duration = Duration::from_secs(30);

/// A direct neighbor: overlay identity plus transport address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Neighbor {
    pub id: PeerId,
    pub endpoint: String,
}

/// The document POSTed to `/gossip`: the advertisement plus the identity
/// of the peer that relayed it, so the receiver can skip it when
/// forwarding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GossipMessage {
    pub forwarder: PeerId,
    pub advertisement: Advertisement,
}

impl GossipMessage {
    pub fn encode(&self) -> Vec<u8> {
        to_canonical_json(self)
    }

    pub fn decode(doc: &[u8]) -> Result<GossipMessage, DescriptorError> {
        let value: serde_json::Value = serde_json::from_slice(doc)
            .map_err(|e| DescriptorError::MalformedDocument(e.to_string()))?;
        let msg: GossipMessage = serde_json::from_value(value)
            .map_err(|e| DescriptorError::SchemaViolation(e.to_string()))?;
        msg.advertisement.validate()?;
        Ok(msg)
    }
}

/// What the overlay did with one incoming gossip message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GossipOutcome {
    /// The `(origin, service, seqno)` triple was already seen; nothing was
    /// forwarded.
    DuplicateDropped,
    /// First sight, but the hop budget was exhausted or no neighbor was
    /// eligible; absorbed only.
    Absorbed,
    /// First sight with budget left and someone to relay to; absorbed and
    /// forwarded.
    AbsorbedAndForwarded { forwarded_to: usize, failures: usize },
}

/// Source of the descriptors a peer advertises for itself.
pub trait HostedDirectory: Send + Sync {
    /// Names of all hosted services, active and dormant, in stable order.
    fn hosted(&self) -> Vec<String>;
    /// Current descriptor of one hosted service.
    fn descriptor_of(&self, name: &str) -> Option<ServiceDescriptor>;
}

/// Totals from pushing an advertisement to the neighbor set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PushReport {
    pub sent: usize,
    pub failures: usize,
}

/// Advertisement key used for dedup and per-triple accounting.
type AdKey = (PeerId, String, u64);

#[derive(Debug, Default)]
struct Accounting {
    /// on_gossip calls that absorbed the keyed advertisement first-hand.
    absorbed: BTreeMap<AdKey, u64>,
    /// on_gossip calls that resulted in a forwarding decision for the key.
    forwarded: BTreeMap<AdKey, u64>,
}

/// The gossip engine of one peer.
pub struct Overlay {
    self_id: PeerId,
    neighbors: Vec<Neighbor>,
    ttl: u32,
    registry: Arc<Registry>,
    directory: Arc<dyn HostedDirectory>,
    client: Arc<dyn Client>,
    seqnos: Mutex<BTreeMap<String, u64>>,
    seen: Mutex<BTreeSet<AdKey>>,
    accounting: Mutex<Accounting>,
    malformed_drops: AtomicU64,
}

impl Overlay {
    pub fn new(
        self_id: PeerId,
        neighbors: Vec<Neighbor>,
        ttl: u32,
        registry: Arc<Registry>,
        directory: Arc<dyn HostedDirectory>,
        client: Arc<dyn Client>,
    ) -> Overlay {
        Overlay {
            self_id,
            neighbors,
            ttl,
            registry,
            directory,
            client,
            seqnos: Mutex::new(BTreeMap::new()),
            seen: Mutex::new(BTreeSet::new()),
            accounting: Mutex::new(Accounting::default()),
            malformed_drops: AtomicU64::new(0),
        }
    }

    pub fn self_id(&self) -> &PeerId {
        &self.self_id
    }

    pub fn neighbors(&self) -> &[Neighbor] {
        &self.neighbors
    }

    pub fn ttl(&self) -> u32 {
        self.ttl
    }

    /// Advertises one hosted service with a fresh sequence number: stores
    /// it in the local registry, marks it seen, and pushes it to every
    /// neighbor. Send failures are reported, not fatal; the periodic
    /// refresh retries them.
    pub fn advertise(&self, service_name: &str) -> Result<(u64, PushReport), DescriptorError> {
        let descriptor = self.directory.descriptor_of(service_name).ok_or_else(|| {
            DescriptorError::SchemaViolation(format!("service {service_name:?} is not hosted here"))
        })?;
        let seqno = {
            let mut seqnos = self.seqnos.lock().unwrap();
            let next = seqnos.get(service_name).copied().unwrap_or(0) + 1;
            seqnos.insert(service_name.to_string(), next);
            next
        };
        let ad = Advertisement::new(descriptor, seqno, self.ttl)?;
        self.seen.lock().unwrap().insert(ad_key(&ad));
        self.registry.upsert(ad.clone());
        let report = self.push_to_neighbors(&ad, None);
        Ok((seqno, report))
    }

    /// Advertises every hosted service once.
    pub fn advertise_all(&self) -> PushReport {
        let mut total = PushReport::default();
        for name in self.directory.hosted() {
            if let Ok((_, report)) = self.advertise(&name) {
                total.sent += report.sent;
                total.failures += report.failures;
            }
        }
        total
    }

    /// Handles one incoming gossip message: dedup, absorb, forward.
    pub fn on_gossip(&self, msg: &GossipMessage) -> GossipOutcome {
        let ad = &msg.advertisement;
        let key = ad_key(ad);

        let first_sight = self.seen.lock().unwrap().insert(key.clone());
        // Absorption is idempotent, so it runs even for duplicates; the
        // registry ignores anything not strictly newer.
        self.registry.upsert(ad.clone());
        if !first_sight {
            return GossipOutcome::DuplicateDropped;
        }
        *self
            .accounting
            .lock()
            .unwrap()
            .absorbed
            .entry(key.clone())
            .or_insert(0) += 1;

        let eligible = self
            .neighbors
            .iter()
            .filter(|n| n.id != msg.forwarder)
            .count();
        if ad.hops_remaining == 0 || eligible == 0 {
            return GossipOutcome::Absorbed;
        }
        *self
            .accounting
            .lock()
            .unwrap()
            .forwarded
            .entry(key)
            .or_insert(0) += 1;
        let mut relayed = ad.clone();
        relayed.hops_remaining -= 1;
        let report = self.push_to_neighbors(&relayed, Some(&msg.forwarder));
        GossipOutcome::AbsorbedAndForwarded {
            forwarded_to: report.sent,
            failures: report.failures,
        }
    }

    /// Records an undecodable gossip body.
    pub fn note_malformed(&self) {
        self.malformed_drops.fetch_add(1, Ordering::Relaxed);
    }

    pub fn malformed_drops(&self) -> u64 {
        self.malformed_drops.load(Ordering::Relaxed)
    }

    /// Per-advertisement counts of first-hand absorptions via gossip.
    pub fn absorb_counts(&self) -> BTreeMap<AdKey, u64> {
        self.accounting.lock().unwrap().absorbed.clone()
    }

    /// Per-advertisement counts of forwarding decisions. The seen set
    /// keeps every count at 1; tests assert it.
    pub fn forward_counts(&self) -> BTreeMap<AdKey, u64> {
        self.accounting.lock().unwrap().forwarded.clone()
    }

    /// Latest sequence number this peer assigned for one of its own
    /// services.
    pub fn current_seqno(&self, service_name: &str) -> Option<u64> {
        self.seqnos.lock().unwrap().get(service_name).copied()
    }

    fn push_to_neighbors(&self, ad: &Advertisement, skip: Option<&PeerId>) -> PushReport {
        let msg = GossipMessage {
            forwarder: self.self_id.clone(),
            advertisement: ad.clone(),
        };
        let body = msg.encode();
        let mut report = PushReport::default();
        for neighbor in &self.neighbors {
            if skip == Some(&neighbor.id) {
                continue;
            }
            report.sent += 1;
            let req = WireRequest::post("/gossip", body.clone());
            if self.client.notify(&neighbor.endpoint, req).is_err() {
                report.failures += 1;
            }
        }
        report
    }
}

/// Spawns the periodic refresh loop used on the TCP backend: every
/// `period`, each hosted service is re-advertised with a fresh seqno so
/// late joiners and peers behind lossy links converge.
pub fn spawn_readvertise_loop(
    overlay: Arc<Overlay>,
    period: Duration,
    shutdown: Arc<AtomicBool>,
) -> JoinHandle<()> {
    std::thread::Builder::new()
        .name(format!("readvertise-{}", overlay.self_id))
        .spawn(move || {
            // Poll the shutdown flag in small slices so teardown is prompt
            // even with long periods.
            let slice = Duration::from_millis(20).min(period);
            let mut elapsed = Duration::ZERO;
            loop {
                if shutdown.load(Ordering::SeqCst) {
                    return;
                }
                std::thread::sleep(slice);
                elapsed += slice;
                if elapsed >= period {
                    elapsed = Duration::ZERO;
                    overlay.advertise_all();
                }
            }
        })
        .expect("spawn readvertise thread")
}

fn ad_key(ad: &Advertisement) -> AdKey {
    (
        ad.origin.clone(),
        ad.descriptor.service_name.clone(),
        ad.seqno,
    )
}
