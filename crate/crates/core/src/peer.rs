//! One peer: wiring of registry, repository, overlay, and executor, plus
//! the route handler that exposes them on the wire.
//!
//! Routes:
//!
//! * `GET /services` lists the descriptors this peer hosts.
//! * `GET /services/{name}` returns one hosted descriptor.
//! * `POST /invoke` runs a single invocation (`service_name` body) or a
//!   composite request (`goals` body).
//! * `POST /gossip` receives an advertisement flood message.
//! * `GET /registry` dumps the peer's advertisement cache.
//!
//! The handler is transport-agnostic: the same peer object serves behind
//! the TCP server or a simulator binding.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::descriptor::{
    to_canonical_json, DescriptorError, PeerId, ServiceState, Value,
};
use crate::executor::{
    error_response, CompositeEnvelope, ErrorCode, GossipAck, InvokeEnvelope, OutputsBody,
    RegistryDump, RegistryDumpEntry, ServiceError, ServiceExecutor, ServicesBody,
};
use crate::overlay::{GossipMessage, GossipOutcome, HostedDirectory, Overlay, PushReport};
use crate::registry::Registry;
use crate::repository::{ActiveServices, Repository, RepositoryDirectory, ServiceDefinition};
use crate::transport::{Client, Handler, Method, WireRequest, WireResponse, WireStatus};

/// A running peer's components, assembled and ready to serve.
pub struct Peer {
    id: PeerId,
    endpoint: String,
    registry: Arc<Registry>,
    repository: Arc<Repository>,
    directory: Arc<RepositoryDirectory>,
    overlay: Arc<Overlay>,
    executor: Arc<ServiceExecutor>,
}

impl Peer {
    /// Assembles a peer. `endpoint` is the address other peers use to
    /// reach this one and is baked into every descriptor it advertises.
    pub fn new(
        id: PeerId,
        endpoint: impl Into<String>,
        neighbors: Vec<crate::overlay::Neighbor>,
        ttl: u32,
        max_plan_len: usize,
        definitions: Vec<(ServiceDefinition, ServiceState)>,
        client: Arc<dyn Client>,
    ) -> Result<Arc<Peer>, DescriptorError> {
        let endpoint = endpoint.into();
        let registry = Arc::new(Registry::new());
        let active = Arc::new(ActiveServices::default());
        let repository = Arc::new(Repository::new(definitions, active)?);
        let directory = Arc::new(RepositoryDirectory::new(
            Arc::clone(&repository),
            id.clone(),
            endpoint.clone(),
        ));
        let overlay = Arc::new(Overlay::new(
            id.clone(),
            neighbors,
            ttl,
            Arc::clone(&registry),
            Arc::clone(&directory) as Arc<dyn HostedDirectory>,
            Arc::clone(&client),
        ));
        let executor = Arc::new(ServiceExecutor::new(
            id.clone(),
            Arc::clone(&registry),
            Arc::clone(&repository),
            Arc::clone(&overlay),
            client,
            max_plan_len,
        ));
        Ok(Arc::new(Peer {
            id,
            endpoint,
            registry,
            repository,
            directory,
            overlay,
            executor,
        }))
    }

    pub fn id(&self) -> &PeerId {
        &self.id
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn repository(&self) -> &Arc<Repository> {
        &self.repository
    }

    pub fn overlay(&self) -> &Arc<Overlay> {
        &self.overlay
    }

    pub fn executor(&self) -> &Arc<ServiceExecutor> {
        &self.executor
    }

    /// Announces every hosted service to the neighbors.
    pub fn advertise_all(&self) -> PushReport {
        self.overlay.advertise_all()
    }

    fn services_body(&self) -> ServicesBody {
        ServicesBody {
            services: self
                .directory
                .hosted()
                .iter()
                .filter_map(|name| self.directory.descriptor_of(name))
                .collect(),
        }
    }

    fn handle_get_service(&self, name: &str) -> WireResponse {
        match self.directory.descriptor_of(name) {
            Some(descriptor) => WireResponse::ok(to_canonical_json(&descriptor)),
            None => error_response(&ServiceError::new(
                ErrorCode::UnknownService,
                format!("service {name:?} is not deployed on {}", self.id),
            )),
        }
    }

    fn handle_invoke(&self, body: &[u8]) -> WireResponse {
        let value: serde_json::Value = match serde_json::from_slice(body) {
            Ok(v) => v,
            Err(e) => {
                return error_response(&ServiceError::new(
                    ErrorCode::BadArguments,
                    format!("malformed invoke document: {e}"),
                ))
            }
        };
        let Some(object) = value.as_object() else {
            return error_response(&ServiceError::new(
                ErrorCode::BadArguments,
                "invoke document must be an object",
            ));
        };

        if object.contains_key("service_name") {
            let envelope: InvokeEnvelope = match serde_json::from_value(value.clone()) {
                Ok(e) => e,
                Err(e) => {
                    return error_response(&ServiceError::new(
                        ErrorCode::BadArguments,
                        format!("invalid invocation envelope: {e}"),
                    ))
                }
            };
            return match self
                .executor
                .invoke_local(&envelope.service_name, &envelope.arguments)
            {
                Ok(outputs) => WireResponse::ok(to_canonical_json(&OutputsBody { outputs })),
                Err(error) => error_response(&error),
            };
        }

        if object.contains_key("goals") {
            let envelope: CompositeEnvelope = match serde_json::from_value(value.clone()) {
                Ok(e) => e,
                Err(e) => {
                    return error_response(&ServiceError::new(
                        ErrorCode::BadArguments,
                        format!("invalid composite envelope: {e}"),
                    ))
                }
            };
            let request_id = envelope.request_id.clone();
            let (request, values) = envelope.into_parts();
            return match self.executor.execute_composite(&request_id, &request, &values) {
                Ok(response) => WireResponse::ok(to_canonical_json(&response)),
                Err(error) => error_response(&error),
            };
        }

        error_response(&ServiceError::new(
            ErrorCode::BadArguments,
            "invoke document carries neither \"service_name\" nor \"goals\"",
        ))
    }

    fn handle_gossip(&self, body: &[u8]) -> WireResponse {
        let message = match GossipMessage::decode(body) {
            Ok(m) => m,
            Err(e) => {
                self.overlay.note_malformed();
                return error_response(&ServiceError::new(
                    ErrorCode::BadArguments,
                    format!("dropped gossip message: {e}"),
                ));
            }
        };
        let outcome = match self.overlay.on_gossip(&message) {
            GossipOutcome::DuplicateDropped => "duplicate_dropped",
            GossipOutcome::Absorbed => "absorbed",
            GossipOutcome::AbsorbedAndForwarded { .. } => "absorbed_and_forwarded",
        };
        WireResponse::ok(to_canonical_json(&GossipAck {
            outcome: outcome.to_string(),
        }))
    }

    fn handle_registry_dump(&self) -> WireResponse {
        let entries = self
            .registry
            .snapshot()
            .into_iter()
            .map(|entry| RegistryDumpEntry {
                origin: entry.advertisement.origin.clone(),
                seqno: entry.advertisement.seqno,
                received_at: entry.received_at,
                hops_remaining: entry.advertisement.hops_remaining,
                descriptor: entry.advertisement.descriptor,
            })
            .collect();
        WireResponse::ok(to_canonical_json(&RegistryDump { entries }))
    }

    /// Invokes a hosted service directly, bypassing the wire. Used by
    /// in-process harnesses; the wire path goes through [`Handler`].
    pub fn invoke(
        &self,
        service_name: &str,
        arguments: &BTreeMap<String, Value>,
    ) -> Result<BTreeMap<String, Value>, ServiceError> {
        self.executor.invoke_local(service_name, arguments)
    }
}

impl Handler for Peer {
    fn handle(&self, request: WireRequest) -> WireResponse {
        match (request.method, request.path.as_str()) {
            (Method::Get, "/services") => WireResponse::ok(to_canonical_json(&self.services_body())),
            (Method::Get, path) if path.starts_with("/services/") => {
                self.handle_get_service(&path["/services/".len()..])
            }
            (Method::Post, "/invoke") => self.handle_invoke(&request.body),
            (Method::Post, "/gossip") => self.handle_gossip(&request.body),
            (Method::Get, "/registry") => self.handle_registry_dump(),
            (method, path) => WireResponse::new(
                WireStatus::NotFound,
                to_canonical_json(&serde_json::json!({
                    "message": format!("no route {method} {path}")
                })),
            ),
        }
    }
}
