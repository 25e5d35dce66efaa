//! Deterministic in-memory transport with virtual time.
//!
//! Nodes bind string labels instead of sockets. Every message is an event
//! in a priority queue ordered by `(deliver_at, enqueue_seq)`; delivery
//! never depends on wall-clock time or thread scheduling, so a scenario
//! run twice produces identical traffic, tick by tick.
//!
//! The network is externally stepped: [`SimNet::step`] delivers the next
//! event, [`SimNet::run_to_quiescence`] drains the queue. A blocking
//! [`Client::request`] from inside a handler pumps the same queue until
//! its own message comes up, so nested calls advance virtual time instead
//! of deadlocking.
//!
//! The queue lock is always released before a handler runs. A handler may
//! therefore bind, send, and pump freely; one external `step` can cascade
//! into many nested deliveries.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::{Arc, Mutex};

use super::{Client, Handler, TransportError, WireRequest, WireResponse};

/// Ticks a request may wait before the sender gives up.
pub const DEFAULT_TIMEOUT_TICKS: u64 = 1000;

/// One-way delivery delay when no per-link latency is configured.
pub const DEFAULT_LATENCY_TICKS: u64 = 1;

struct QueuedMessage {
    deliver_at: u64,
    seq: u64,
    to: String,
    request: WireRequest,
}

struct SimInner {
    nodes: BTreeMap<String, Arc<dyn Handler>>,
    latencies: BTreeMap<(String, String), u64>,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    messages: BTreeMap<u64, QueuedMessage>,
    now: u64,
    next_seq: u64,
    delivered: u64,
    default_latency: u64,
    timeout_ticks: u64,
}

impl SimInner {
    fn latency(&self, from: &str, to: &str) -> u64 {
        self.latencies
            .get(&(from.to_string(), to.to_string()))
            .copied()
            .unwrap_or(self.default_latency)
    }

    fn enqueue(&mut self, from: &str, to: &str, request: WireRequest) -> Result<u64, TransportError> {
        if !self.nodes.contains_key(to) {
            return Err(TransportError::Unreachable(
                to.to_string(),
                "no node bound to label".to_string(),
            ));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let deliver_at = self.now + self.latency(from, to);
        self.queue.push(Reverse((deliver_at, seq)));
        self.messages.insert(
            seq,
            QueuedMessage {
                deliver_at,
                seq,
                to: to.to_string(),
                request,
            },
        );
        Ok(seq)
    }

    /// Deliver tick of the earliest live message, discarding heap entries
    /// abandoned by timed-out requests along the way.
    fn peek_live(&mut self) -> Option<u64> {
        while let Some(&Reverse((at, seq))) = self.queue.peek() {
            if self.messages.contains_key(&seq) {
                return Some(at);
            }
            self.queue.pop();
        }
        None
    }

    fn pop(&mut self) -> Option<QueuedMessage> {
        self.peek_live()?;
        let Reverse((_, seq)) = self.queue.pop().expect("peeked entry exists");
        let msg = self.messages.remove(&seq).expect("peeked message is live");
        debug_assert!(msg.deliver_at >= self.now);
        self.now = msg.deliver_at;
        Some(msg)
    }
}

/// The shared in-memory network.
pub struct SimNet {
    inner: Mutex<SimInner>,
}

impl SimNet {
    pub fn new() -> Arc<SimNet> {
        SimNet::with_settings(DEFAULT_LATENCY_TICKS, DEFAULT_TIMEOUT_TICKS)
    }

    pub fn with_settings(default_latency: u64, timeout_ticks: u64) -> Arc<SimNet> {
        Arc::new(SimNet {
            inner: Mutex::new(SimInner {
                nodes: BTreeMap::new(),
                latencies: BTreeMap::new(),
                queue: BinaryHeap::new(),
                messages: BTreeMap::new(),
                now: 0,
                next_seq: 0,
                delivered: 0,
                default_latency,
                timeout_ticks,
            }),
        })
    }

    /// Claims a label for a handler. Fails if the label is taken.
    pub fn bind(&self, label: &str, handler: Arc<dyn Handler>) -> Result<(), TransportError> {
        let mut inner = self.inner.lock().unwrap();
        if inner.nodes.contains_key(label) {
            return Err(TransportError::EndpointInUse(label.to_string()));
        }
        inner.nodes.insert(label.to_string(), handler);
        Ok(())
    }

    /// Sets the one-way latency in ticks for both directions of a pair.
    pub fn set_latency(&self, a: &str, b: &str, ticks: u64) {
        let mut inner = self.inner.lock().unwrap();
        inner
            .latencies
            .insert((a.to_string(), b.to_string()), ticks);
        inner
            .latencies
            .insert((b.to_string(), a.to_string()), ticks);
    }

    /// A client that sends from the given label.
    pub fn client(self: &Arc<Self>, label: &str) -> SimClient {
        SimClient {
            net: Arc::clone(self),
            label: label.to_string(),
        }
    }

    /// Delivers the earliest pending message, advancing virtual time to its
    /// deliver tick. Returns false when the queue is empty. The handler
    /// runs outside the queue lock and may itself send and pump, so one
    /// step can cascade.
    pub fn step(&self) -> bool {
        let (handler, msg) = {
            let mut inner = self.inner.lock().unwrap();
            let Some(msg) = inner.pop() else {
                return false;
            };
            inner.delivered += 1;
            let handler = Arc::clone(
                inner
                    .nodes
                    .get(&msg.to)
                    .expect("bound at enqueue; labels are never unbound"),
            );
            (handler, msg)
        };
        handler.handle(msg.request);
        true
    }

    /// Steps until no messages remain. Returns the number of deliveries
    /// made by this call, excluding nested deliveries pumped by handlers.
    pub fn run_to_quiescence(&self) -> u64 {
        let mut n = 0;
        while self.step() {
            n += 1;
        }
        n
    }

    /// Current virtual time in ticks.
    pub fn now(&self) -> u64 {
        self.inner.lock().unwrap().now
    }

    /// Total messages handed to handlers since creation.
    pub fn delivered(&self) -> u64 {
        self.inner.lock().unwrap().delivered
    }

    /// Messages waiting in the queue.
    pub fn pending(&self) -> usize {
        self.inner.lock().unwrap().messages.len()
    }
}

/// Sender bound to one label of a [`SimNet`].
///
/// `request` delivers every message scheduled before its own, in order, so
/// a synchronous call observes exactly the traffic a real network would
/// have delivered first.
#[derive(Clone)]
pub struct SimClient {
    net: Arc<SimNet>,
    label: String,
}

impl SimClient {
    pub fn label(&self) -> &str {
        &self.label
    }
}

impl Client for SimClient {
    fn request(
        &self,
        endpoint: &str,
        request: WireRequest,
    ) -> Result<WireResponse, TransportError> {
        let (own_seq, deadline) = {
            let mut inner = self.net.inner.lock().unwrap();
            let deadline = inner.now + inner.timeout_ticks;
            let seq = inner.enqueue(&self.label, endpoint, request)?;
            (seq, deadline)
        };

        loop {
            let (handler, msg) = {
                let mut inner = self.net.inner.lock().unwrap();
                match inner.peek_live() {
                    // Own message is live until delivered or abandoned, so
                    // an empty queue is unreachable here; bail defensively.
                    None => return Err(TransportError::Timeout(endpoint.to_string())),
                    Some(at) if at > deadline => {
                        // Nothing can be delivered before the deadline
                        // passes. Abandon our own message so it is never
                        // delivered late.
                        inner.now = deadline;
                        inner.messages.remove(&own_seq);
                        return Err(TransportError::Timeout(endpoint.to_string()));
                    }
                    Some(_) => {}
                }
                let msg = inner.pop().expect("peeked message exists");
                inner.delivered += 1;
                let handler = Arc::clone(
                    inner
                        .nodes
                        .get(&msg.to)
                        .expect("bound at enqueue; labels are never unbound"),
                );
                (handler, msg)
            };

            if msg.seq == own_seq {
                return Ok(handler.handle(msg.request));
            }
            handler.handle(msg.request);
        }
    }

    fn notify(&self, endpoint: &str, request: WireRequest) -> Result<(), TransportError> {
        let mut inner = self.net.inner.lock().unwrap();
        inner.enqueue(&self.label, endpoint, request)?;
        Ok(())
    }
}
