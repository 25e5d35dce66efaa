//! Local service store with lazy activation.
//!
//! A peer deploys services in one of two states. Active services have a
//! live handler and serve invocations immediately. Dormant services exist
//! only as definitions in the repository; the first invocation injects
//! one, running its factory to build the handler, flipping its state to
//! activated, and (at the caller's initiative) re-advertising it.
//!
//! The factory for a given service runs at most once per activation no
//! matter how many invocations race: one caller claims the injection and
//! runs the factory with no lock held, concurrent callers for the same
//! service wait for the verdict, and everything else on the peer stays
//! invocable. Handlers themselves also run outside any lock; a slow
//! service never blocks other invocations.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::Duration;

use thiserror::Error;

use crate::descriptor::{
    validate_schema, DescriptorError, ParameterSpec, PeerId, ServiceDescriptor, ServiceState,
    Value,
};
use crate::overlay::HostedDirectory;

/// Invocation behavior: arguments in, outputs out.
pub type ServiceFn =
    Arc<dyn Fn(&BTreeMap<String, Value>) -> Result<BTreeMap<String, Value>, String> + Send + Sync>;

#[derive(Debug, Error)]
pub enum RepositoryError {
    #[error("service {0:?} is not deployed on this peer")]
    UnknownService(String),
    #[error("injection of service {service:?} failed: {message}")]
    InjectionFailed { service: String, message: String },
}

/// Whether an injection request did the work or found it already done.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectOutcome {
    Performed,
    AlreadyActive,
}

/// Everything a peer knows about one deployed service, independent of its
/// activation state.
///
/// Behavior is declarative so scenarios can describe it: `fixtures` are
/// the outputs every invocation returns, `delay_ms` stalls the handler,
/// `fault` makes every invocation fail. `injection_delay_ms` and
/// `injection_fault` shape the factory instead of the handler. Fixtures
/// are deliberately not checked against the declared outputs; a
/// mismatched fixture is how tests exercise consumer-side verification.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceDefinition {
    pub name: String,
    pub version: u64,
    pub inputs: Vec<ParameterSpec>,
    pub outputs: Vec<ParameterSpec>,
    pub fixtures: BTreeMap<String, Value>,
    pub delay_ms: u64,
    pub fault: Option<String>,
    pub injection_delay_ms: u64,
    pub injection_fault: Option<String>,
}

impl ServiceDefinition {
    /// A minimal definition returning `fixtures` on every call.
    pub fn fixed(
        name: impl Into<String>,
        inputs: Vec<ParameterSpec>,
        outputs: Vec<ParameterSpec>,
        fixtures: BTreeMap<String, Value>,
    ) -> ServiceDefinition {
        ServiceDefinition {
            name: name.into(),
            version: 0,
            inputs,
            outputs,
            fixtures,
            delay_ms: 0,
            fault: None,
            injection_delay_ms: 0,
            injection_fault: None,
        }
    }

    pub fn validate(&self) -> Result<(), DescriptorError> {
        validate_schema(&self.name, &self.inputs, &self.outputs)
    }

    fn build_handler(&self) -> ServiceFn {
        let outputs = self.fixtures.clone();
        let delay = Duration::from_millis(self.delay_ms);
        let fault = self.fault.clone();
        Arc::new(move |_args| {
            if !delay.is_zero() {
                std::thread::sleep(delay);
            }
            if let Some(message) = &fault {
                return Err(message.clone());
            }
            Ok(outputs.clone())
        })
    }

    /// Runs the factory: optional stall, optional configured failure, then
    /// the handler is built.
    fn run_factory(&self) -> Result<ServiceFn, String> {
        if self.injection_delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.injection_delay_ms));
        }
        if let Some(message) = &self.injection_fault {
            return Err(message.clone());
        }
        Ok(self.build_handler())
    }
}

/// A live, invocable service.
pub struct ActiveService {
    name: String,
    handler: ServiceFn,
    invocations: AtomicU64,
}

impl ActiveService {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Runs the handler. Callers validate arguments against the descriptor
    /// before invoking; outputs are returned unchecked.
    pub fn invoke(
        &self,
        args: &BTreeMap<String, Value>,
    ) -> Result<BTreeMap<String, Value>, String> {
        self.invocations.fetch_add(1, Ordering::Relaxed);
        (self.handler)(args)
    }

    /// Completed or in-flight invocation count, for observability.
    pub fn invocation_count(&self) -> u64 {
        self.invocations.load(Ordering::Relaxed)
    }
}

/// The set of currently invocable services. Reads are lock-free of the
/// repository; handlers run with no lock held at all.
#[derive(Default)]
pub struct ActiveServices {
    inner: RwLock<BTreeMap<String, Arc<ActiveService>>>,
}

impl ActiveServices {
    pub fn get(&self, name: &str) -> Option<Arc<ActiveService>> {
        self.inner.read().unwrap().get(name).cloned()
    }

    pub fn names(&self) -> Vec<String> {
        self.inner.read().unwrap().keys().cloned().collect()
    }

    fn install(&self, service: Arc<ActiveService>) {
        self.inner
            .write()
            .unwrap()
            .insert(service.name.clone(), service);
    }

    fn remove(&self, name: &str) -> Option<Arc<ActiveService>> {
        self.inner.write().unwrap().remove(name)
    }
}

struct RepositoryEntry {
    definition: ServiceDefinition,
    state: ServiceState,
    activation_events: u64,
    /// A caller has claimed this service's injection and is running the
    /// factory outside the lock.
    injecting: bool,
}

/// All services deployed on one peer, dormant definitions included.
pub struct Repository {
    entries: Mutex<BTreeMap<String, RepositoryEntry>>,
    /// Signaled on every injection verdict; same-service waiters re-check
    /// under the lock.
    injection_done: Condvar,
    active: Arc<ActiveServices>,
}

impl Repository {
    /// Deploys the given definitions. Services marked activated get their
    /// handler built immediately; that is deployment, not injection, so it
    /// counts no activation event and skips factory delay and fault.
    pub fn new(
        definitions: Vec<(ServiceDefinition, ServiceState)>,
        active: Arc<ActiveServices>,
    ) -> Result<Repository, DescriptorError> {
        let mut entries = BTreeMap::new();
        for (definition, state) in definitions {
            definition.validate()?;
            if entries.contains_key(&definition.name) {
                return Err(DescriptorError::SchemaViolation(format!(
                    "service {:?} deployed twice",
                    definition.name
                )));
            }
            if state == ServiceState::Activated {
                active.install(Arc::new(ActiveService {
                    name: definition.name.clone(),
                    handler: definition.build_handler(),
                    invocations: AtomicU64::new(0),
                }));
            }
            entries.insert(
                definition.name.clone(),
                RepositoryEntry {
                    definition,
                    state,
                    activation_events: 0,
                    injecting: false,
                },
            );
        }
        Ok(Repository {
            entries: Mutex::new(entries),
            injection_done: Condvar::new(),
            active,
        })
    }

    pub fn active(&self) -> &Arc<ActiveServices> {
        &self.active
    }

    /// Names of every deployed service, in stable order.
    pub fn hosted(&self) -> Vec<String> {
        self.entries.lock().unwrap().keys().cloned().collect()
    }

    pub fn definition(&self, name: &str) -> Option<ServiceDefinition> {
        self.entries
            .lock()
            .unwrap()
            .get(name)
            .map(|e| e.definition.clone())
    }

    pub fn state(&self, name: &str) -> Option<ServiceState> {
        self.entries.lock().unwrap().get(name).map(|e| e.state)
    }

    /// Factory runs performed for one service across its lifetime.
    pub fn activation_events(&self, name: &str) -> Option<u64> {
        self.entries
            .lock()
            .unwrap()
            .get(name)
            .map(|e| e.activation_events)
    }

    /// Activates a dormant service, running its factory exactly once even
    /// under concurrent callers. Already-active services are returned
    /// as-is. On factory failure the service stays dormant and a later
    /// injection may retry.
    ///
    /// The factory runs with no repository lock held: one caller claims
    /// the injection, same-service callers wait for its verdict, and
    /// every other service stays invocable throughout.
    pub fn inject(
        &self,
        name: &str,
    ) -> Result<(Arc<ActiveService>, InjectOutcome), RepositoryError> {
        let mut entries = self.entries.lock().unwrap();
        let definition = loop {
            let entry = entries
                .get_mut(name)
                .ok_or_else(|| RepositoryError::UnknownService(name.to_string()))?;
            if entry.state == ServiceState::Activated {
                let service = self
                    .active
                    .get(name)
                    .expect("activated entry has an installed handler");
                return Ok((service, InjectOutcome::AlreadyActive));
            }
            if !entry.injecting {
                entry.injecting = true;
                break entry.definition.clone();
            }
            entries = self.injection_done.wait(entries).unwrap();
        };
        drop(entries);

        let built = definition.run_factory();

        let mut entries = self.entries.lock().unwrap();
        let entry = entries.get_mut(name).expect("entries are never removed");
        entry.injecting = false;
        let result = match built {
            Ok(handler) => {
                entry.state = ServiceState::Activated;
                entry.activation_events += 1;
                let service = Arc::new(ActiveService {
                    name: name.to_string(),
                    handler,
                    invocations: AtomicU64::new(0),
                });
                self.active.install(Arc::clone(&service));
                Ok((service, InjectOutcome::Performed))
            }
            Err(message) => Err(RepositoryError::InjectionFailed {
                service: name.to_string(),
                message,
            }),
        };
        drop(entries);
        self.injection_done.notify_all();
        result
    }

    /// Returns an active service to the dormant state, dropping its
    /// handler. A later injection runs the factory again.
    pub fn deactivate(&self, name: &str) -> Result<bool, RepositoryError> {
        let mut entries = self.entries.lock().unwrap();
        let entry = entries
            .get_mut(name)
            .ok_or_else(|| RepositoryError::UnknownService(name.to_string()))?;
        if entry.state == ServiceState::Deactivated {
            return Ok(false);
        }
        entry.state = ServiceState::Deactivated;
        self.active.remove(name);
        Ok(true)
    }
}

/// Presents a repository as the peer's hosted directory: descriptors are
/// assembled from the stored definition, the current activation state,
/// and the peer's own identity and endpoint.
pub struct RepositoryDirectory {
    repository: Arc<Repository>,
    provider: PeerId,
    endpoint: String,
}

impl RepositoryDirectory {
    pub fn new(
        repository: Arc<Repository>,
        provider: PeerId,
        endpoint: impl Into<String>,
    ) -> RepositoryDirectory {
        RepositoryDirectory {
            repository,
            provider,
            endpoint: endpoint.into(),
        }
    }
}

impl HostedDirectory for RepositoryDirectory {
    fn hosted(&self) -> Vec<String> {
        self.repository.hosted()
    }

    fn descriptor_of(&self, name: &str) -> Option<ServiceDescriptor> {
        let definition = self.repository.definition(name)?;
        let status = self.repository.state(name)?;
        Some(ServiceDescriptor {
            service_name: definition.name,
            version: definition.version,
            inputs: definition.inputs,
            outputs: definition.outputs,
            status,
            provider: self.provider.clone(),
            endpoint: self.endpoint.clone(),
        })
    }
}
