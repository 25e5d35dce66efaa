//! Scripted runs on the simulated network.
//!
//! A scenario file describes a topology (peer configs plus per-link
//! latencies) and an event list. Running it builds a [`SimCluster`],
//! executes the events in order, and returns a transcript string. The
//! simulator is single threaded and virtual-timed, so the transcript for
//! a given scenario is byte for byte reproducible.
//!
//! Invocations are issued over the wire from an unbound `client` label,
//! exercising the same routes a remote caller would.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{ClusterError, SimCluster};
use crate::config::PeerConfig;
use crate::descriptor::{to_canonical_json, ParameterSpec, Value};
use crate::executor::{
    AggregatedResponse, CompositeEnvelope, ErrorBody, InvokeEnvelope, OutputsBody, ProvidedValue,
    RegistryDump, ServiceError,
};
use crate::transport::sim::{SimClient, SimNet};
use crate::transport::{Client, WireRequest, WireStatus};

pub const CLIENT_LABEL: &str = "client";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario document: {0}")]
    Malformed(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl From<ClusterError> for ScenarioError {
    fn from(e: ClusterError) -> ScenarioError {
        ScenarioError::Invalid(e.to_string())
    }
}

/// Extra latency on the path between two peers, symmetric. Ends name
/// peers by id.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    pub latency_ticks: u64,
}

/// One scripted action.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioEvent {
    /// Every peer advertises everything it hosts.
    AdvertiseAll,
    /// One peer advertises one hosted service.
    Advertise { peer: String, service: String },
    /// Drain the network completely.
    Settle,
    /// Deliver at most `count` queued messages.
    Step { count: u64 },
    /// Invoke a single service on `target` over the wire.
    Invoke {
        target: String,
        service_name: String,
        #[serde(default)]
        arguments: BTreeMap<String, Value>,
    },
    /// Send a composite request to `target` over the wire.
    Composite {
        target: String,
        request_id: String,
        goals: Vec<ParameterSpec>,
        #[serde(default)]
        provided: Vec<ProvidedValue>,
    },
    /// Report every peer's registry size on one line.
    RegistryCounts,
    /// Fetch and print one peer's registry over the wire.
    RegistryDump { peer: String },
}

impl ScenarioEvent {
    pub fn is_composite(&self) -> bool {
        matches!(self, ScenarioEvent::Composite { .. })
    }
}

/// A named post-run check. The run fails (nonzero exit from `sim run`)
/// when any assertion fails; each failure names its assertion in the
/// transcript.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioAssertion {
    pub name: String,
    #[serde(flatten)]
    pub check: AssertionCheck,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum AssertionCheck {
    /// The registry of `peer` (every peer when omitted) holds exactly
    /// `expected` entries.
    RegistrySize {
        #[serde(default)]
        peer: Option<String>,
        expected: usize,
    },
    /// The registry entry for (origin, service) as seen by `peer` has
    /// this status, and this seqno when given.
    EntryStatus {
        peer: String,
        origin: String,
        service: String,
        status: crate::descriptor::ServiceState,
        #[serde(default)]
        seqno: Option<u64>,
    },
    /// The transcript produced so far contains this exact text.
    TranscriptContains { text: String },
}

/// A scripted topology plus event list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_latency_ticks")]
    pub default_latency_ticks: u64,
    #[serde(default = "default_timeout_ticks")]
    pub timeout_ticks: u64,
    pub peers: Vec<PeerConfig>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub events: Vec<ScenarioEvent>,
    #[serde(default)]
    pub assertions: Vec<ScenarioAssertion>,
}

fn default_latency_ticks() -> u64 {
    crate::transport::sim::DEFAULT_LATENCY_TICKS
}

fn default_timeout_ticks() -> u64 {
    crate::transport::sim::DEFAULT_TIMEOUT_TICKS
}

impl Scenario {
    pub fn from_json(bytes: &[u8]) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario =
            serde_json::from_slice(bytes).map_err(|e| ScenarioError::Malformed(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
        let bytes = std::fs::read(path)?;
        Scenario::from_json(&bytes)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.is_empty() {
            return Err(ScenarioError::Invalid("scenario name is empty".into()));
        }
        if self.peers.is_empty() {
            return Err(ScenarioError::Invalid("scenario has no peers".into()));
        }
        for config in &self.peers {
            config
                .validate()
                .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        }
        let ids: std::collections::BTreeSet<&str> =
            self.peers.iter().map(|p| p.peer_id.as_str()).collect();
        if ids.len() != self.peers.len() {
            return Err(ScenarioError::Invalid("duplicate peer id".into()));
        }
        for link in &self.links {
            for end in [&link.a, &link.b] {
                if !ids.contains(end.as_str()) {
                    return Err(ScenarioError::Invalid(format!(
                        "link references unknown peer {end}"
                    )));
                }
            }
        }
        for assertion in &self.assertions {
            if assertion.name.is_empty() {
                return Err(ScenarioError::Invalid("assertion with empty name".into()));
            }
            let named_peer = match &assertion.check {
                AssertionCheck::RegistrySize { peer, .. } => peer.as_deref(),
                AssertionCheck::EntryStatus { peer, .. } => Some(peer.as_str()),
                AssertionCheck::TranscriptContains { .. } => None,
            };
            if let Some(p) = named_peer {
                if !ids.contains(p) {
                    return Err(ScenarioError::Invalid(format!(
                        "assertion {} references unknown peer {p}",
                        assertion.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Index of the first composite event, if any. Benchmarks treat the
    /// events before it as setup and repeat that composite.
    pub fn first_composite(&self) -> Option<usize> {
        self.events.iter().position(ScenarioEvent::is_composite)
    }
}

/// An in-progress scenario execution. Events can be fed one at a time,
/// which benchmarking uses to repeat a single composite event.
pub struct ScenarioRun {
    cluster: SimCluster,
    client: SimClient,
    endpoints: BTreeMap<String, String>,
    transcript: String,
}

impl ScenarioRun {
    pub fn new(scenario: &Scenario) -> Result<ScenarioRun, ScenarioError> {
        scenario.validate()?;
        let net = SimNet::with_settings(scenario.default_latency_ticks, scenario.timeout_ticks);
        let cluster = SimCluster::build_on(Arc::clone(&net), &scenario.peers)?;
        let endpoints: BTreeMap<String, String> = scenario
            .peers
            .iter()
            .map(|p| (p.peer_id.to_string(), p.advertised().to_string()))
            .collect();
        for link in &scenario.links {
            net.set_latency(&endpoints[&link.a], &endpoints[&link.b], link.latency_ticks);
        }
        let client = net.client(CLIENT_LABEL);
        let mut run = ScenarioRun {
            cluster,
            client,
            endpoints,
            transcript: String::new(),
        };
        run.line(format!(
            "scenario {}: {} peers, {} links",
            scenario.name,
            scenario.peers.len(),
            scenario.links.len()
        ));
        Ok(run)
    }

    fn now(&self) -> u64 {
        self.cluster.net().now()
    }

    fn line(&mut self, text: String) {
        self.transcript
            .push_str(&format!("[t={}] {}\n", self.now(), text));
    }

    fn endpoint_of(&self, peer: &str) -> Result<String, ScenarioError> {
        self.endpoints
            .get(peer)
            .cloned()
            .ok_or_else(|| ScenarioError::Invalid(format!("event references unknown peer {peer}")))
    }

    pub fn transcript(&self) -> &str {
        &self.transcript
    }

    pub fn into_transcript(self) -> String {
        self.transcript
    }

    pub fn execute(&mut self, event: &ScenarioEvent) -> Result<(), ScenarioError> {
        match event {
            ScenarioEvent::AdvertiseAll => {
                let report = self.cluster.advertise_all();
                self.line(format!(
                    "advertise_all: sent {}, failures {}",
                    report.sent, report.failures
                ));
            }
            ScenarioEvent::Advertise { peer, service } => {
                let handle = self
                    .cluster
                    .peer(peer)
                    .cloned()
                    .ok_or_else(|| {
                        ScenarioError::Invalid(format!("event references unknown peer {peer}"))
                    })?;
                match handle.overlay().advertise(service) {
                    Ok((seqno, report)) => self.line(format!(
                        "advertise {peer}/{service}: seqno {seqno}, sent {}, failures {}",
                        report.sent, report.failures
                    )),
                    Err(e) => self.line(format!("advertise {peer}/{service}: error {e}")),
                }
            }
            ScenarioEvent::Settle => {
                let delivered = self.cluster.settle();
                self.line(format!("settle: delivered {delivered}"));
            }
            ScenarioEvent::Step { count } => {
                let mut delivered = 0u64;
                for _ in 0..*count {
                    if self.cluster.net().step() {
                        delivered += 1;
                    } else {
                        break;
                    }
                }
                self.line(format!("step {count}: delivered {delivered}"));
            }
            ScenarioEvent::Invoke {
                target,
                service_name,
                arguments,
            } => {
                let endpoint = self.endpoint_of(target)?;
                let body = to_canonical_json(&InvokeEnvelope {
                    service_name: service_name.clone(),
                    arguments: arguments.clone(),
                });
                let text = match self.client.request(&endpoint, WireRequest::post("/invoke", body))
                {
                    Ok(resp) if resp.status == WireStatus::Ok => {
                        match serde_json::from_slice::<OutputsBody>(&resp.body) {
                            Ok(out) => format!(
                                "ok {}",
                                String::from_utf8_lossy(&to_canonical_json(&out.outputs))
                            ),
                            Err(_) => "bad_body".to_string(),
                        }
                    }
                    Ok(resp) => describe_error_body(&resp.body),
                    Err(e) => format!("transport_error: {e}"),
                };
                self.line(format!("invoke {target}/{service_name}: {text}"));
            }
            ScenarioEvent::Composite {
                target,
                request_id,
                goals,
                provided,
            } => {
                let endpoint = self.endpoint_of(target)?;
                let body = to_canonical_json(&CompositeEnvelope {
                    request_id: request_id.clone(),
                    goals: goals.clone(),
                    provided: provided.clone(),
                });
                let text = match self.client.request(&endpoint, WireRequest::post("/invoke", body))
                {
                    Ok(resp) if resp.status == WireStatus::Ok => {
                        match serde_json::from_slice::<AggregatedResponse>(&resp.body) {
                            Ok(agg) => {
                                let plan: Vec<String> = agg
                                    .plan_trace
                                    .iter()
                                    .map(|s| {
                                        format!("{}/{}({})", s.provider, s.service_name, s.planned_status)
                                    })
                                    .collect();
                                format!(
                                    "ok values={} plan=[{}]",
                                    String::from_utf8_lossy(&to_canonical_json(&agg.values)),
                                    plan.join(" -> ")
                                )
                            }
                            Err(_) => "bad_body".to_string(),
                        }
                    }
                    Ok(resp) => describe_error_body(&resp.body),
                    Err(e) => format!("transport_error: {e}"),
                };
                self.line(format!("composite {target} {request_id}: {text}"));
            }
            ScenarioEvent::RegistryCounts => {
                let counts: Vec<String> = self
                    .cluster
                    .peers()
                    .iter()
                    .map(|(id, p)| format!("{id}={}", p.registry().len()))
                    .collect();
                self.line(format!("registry_counts: {}", counts.join(" ")));
            }
            ScenarioEvent::RegistryDump { peer } => {
                let endpoint = self.endpoint_of(peer)?;
                match self.client.request(&endpoint, WireRequest::get("/registry")) {
                    Ok(resp) if resp.status == WireStatus::Ok => {
                        match serde_json::from_slice::<RegistryDump>(&resp.body) {
                            Ok(dump) => {
                                self.line(format!(
                                    "registry_dump {peer}: {} entries",
                                    dump.entries.len()
                                ));
                                for e in &dump.entries {
                                    self.line(format!(
                                        "  {}/{} seqno={} status={} hops={} endpoint={}",
                                        e.origin,
                                        e.descriptor.service_name,
                                        e.seqno,
                                        e.descriptor.status,
                                        e.hops_remaining,
                                        e.descriptor.endpoint
                                    ));
                                }
                            }
                            Err(_) => self.line(format!("registry_dump {peer}: bad_body")),
                        }
                    }
                    Ok(resp) => {
                        let text = describe_error_body(&resp.body);
                        self.line(format!("registry_dump {peer}: {text}"));
                    }
                    Err(e) => self.line(format!("registry_dump {peer}: transport_error: {e}")),
                }
            }
        }
        Ok(())
    }

    /// Sends one composite over the wire without writing to the
    /// transcript; used by benchmarking. Returns the parsed success or
    /// the service error.
    pub fn send_composite(
        &mut self,
        target: &str,
        request_id: &str,
        goals: &[ParameterSpec],
        provided: &[ProvidedValue],
    ) -> Result<Result<AggregatedResponse, ServiceError>, ScenarioError> {
        let endpoint = self.endpoint_of(target)?;
        let body = to_canonical_json(&CompositeEnvelope {
            request_id: request_id.to_string(),
            goals: goals.to_vec(),
            provided: provided.to_vec(),
        });
        let resp = self
            .client
            .request(&endpoint, WireRequest::post("/invoke", body))
            .map_err(|e| ScenarioError::Invalid(format!("composite transport failure: {e}")))?;
        if resp.status == WireStatus::Ok {
            let agg: AggregatedResponse = serde_json::from_slice(&resp.body)
                .map_err(|e| ScenarioError::Invalid(format!("bad composite body: {e}")))?;
            Ok(Ok(agg))
        } else {
            let body: ErrorBody = serde_json::from_slice(&resp.body)
                .map_err(|e| ScenarioError::Invalid(format!("bad error body: {e}")))?;
            Ok(Err(body.error))
        }
    }

    pub fn cluster(&self) -> &SimCluster {
        &self.cluster
    }

    /// Evaluates one assertion, appends its verdict line, and reports
    /// whether it held.
    pub fn evaluate(&mut self, assertion: &ScenarioAssertion) -> bool {
        let verdict = self.check(&assertion.check);
        match verdict {
            Ok(()) => {
                self.line(format!("assert {}: ok", assertion.name));
                true
            }
            Err(detail) => {
                self.line(format!("assert {}: FAILED ({detail})", assertion.name));
                false
            }
        }
    }

    fn check(&self, check: &AssertionCheck) -> Result<(), String> {
        match check {
            AssertionCheck::RegistrySize { peer, expected } => {
                let targets: Vec<&str> = match peer {
                    Some(p) => vec![p.as_str()],
                    None => self.endpoints.keys().map(String::as_str).collect(),
                };
                for id in targets {
                    let handle = self
                        .cluster
                        .peer(id)
                        .ok_or_else(|| format!("unknown peer {id}"))?;
                    let got = handle.registry().len();
                    if got != *expected {
                        return Err(format!("{id} has {got} entries, expected {expected}"));
                    }
                }
                Ok(())
            }
            AssertionCheck::EntryStatus {
                peer,
                origin,
                service,
                status,
                seqno,
            } => {
                let handle = self
                    .cluster
                    .peer(peer)
                    .ok_or_else(|| format!("unknown peer {peer}"))?;
                let origin_id = crate::descriptor::PeerId::new(origin)
                    .map_err(|e| format!("bad origin: {e}"))?;
                let entry = handle
                    .registry()
                    .get(&origin_id, service)
                    .ok_or_else(|| format!("{peer} has no entry for {origin}/{service}"))?;
                let got = entry.descriptor().status;
                if got != *status {
                    return Err(format!(
                        "{peer} sees {origin}/{service} as {got}, expected {status}"
                    ));
                }
                if let Some(want) = seqno {
                    let got = entry.advertisement.seqno;
                    if got != *want {
                        return Err(format!(
                            "{peer} sees {origin}/{service} at seqno {got}, expected {want}"
                        ));
                    }
                }
                Ok(())
            }
            AssertionCheck::TranscriptContains { text } => {
                if self.transcript.contains(text) {
                    Ok(())
                } else {
                    Err(format!("transcript lacks {text:?}"))
                }
            }
        }
    }
}

/// Everything a finished run produced: the transcript plus the assertion
/// tally.
#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub transcript: String,
    pub assertions_total: usize,
    pub assertions_failed: usize,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.assertions_failed == 0
    }
}

fn describe_error_body(body: &[u8]) -> String {
    match serde_json::from_slice::<ErrorBody>(body) {
        Ok(b) => format_service_error(&b.error),
        Err(_) => "bad_body".to_string(),
    }
}

fn format_service_error(e: &ServiceError) -> String {
    let mut s = format!("error {}", e.code.as_str());
    if let Some(step) = e.step {
        s.push_str(&format!(" step={step}"));
    }
    if let (Some(p), Some(n)) = (&e.provider, &e.service_name) {
        s.push_str(&format!(" at {p}/{n}"));
    }
    s.push_str(&format!(": {}", e.message));
    s
}

/// Runs a whole scenario: all events in order, then every assertion.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioReport, ScenarioError> {
    let mut run = ScenarioRun::new(scenario)?;
    for event in &scenario.events {
        run.execute(event)?;
    }
    let mut failed = 0;
    for assertion in &scenario.assertions {
        if !run.evaluate(assertion) {
            failed += 1;
        }
    }
    Ok(ScenarioReport {
        transcript: run.into_transcript(),
        assertions_total: scenario.assertions.len(),
        assertions_failed: failed,
    })
}
