//! Invocation execution and composite orchestration.
//!
//! [`ServiceExecutor`] drives both sides of the protocol on one peer:
//!
//! * single invocations of locally deployed services, injecting dormant
//!   ones on first use and re-advertising them once activated;
//! * composite requests, planned over the local registry snapshot and
//!   executed as a checklist of local and remote invocations whose
//!   results are verified and aggregated into one response.
//!
//! Verification is consumer-side: each step's inputs, and finally each
//! goal, are resolved from their bound source and checked against the
//! expected name and type at the moment of use. A provider that returns
//! ill-typed outputs is caught by whoever consumes them, as
//! `PLAN_STEP_UNSATISFIED` at the consuming step.
//!
//! No lock is ever held across a wire call; handlers and factories run
//! with the repository lock released before any remote traffic starts.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::descriptor::{
    to_canonical_json, ParameterSpec, PeerId, ServiceState, TypeTag, Value,
};
use crate::overlay::Overlay;
use crate::planner::{
    self, Checklist, CompositeRequest, PlanError, ScoredPlan,
};
use crate::registry::Registry;
use crate::repository::{InjectOutcome, Repository, RepositoryError};
use crate::transport::{Client, TransportError, WireRequest, WireResponse, WireStatus};

/// Stable error codes carried in error response bodies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    UnknownService,
    BadArguments,
    NoCandidatePlan,
    PlanStepUnsatisfied,
    PeerUnreachable,
    RemoteError,
    InjectionFailed,
    ServiceFault,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::UnknownService => "UNKNOWN_SERVICE",
            ErrorCode::BadArguments => "BAD_ARGUMENTS",
            ErrorCode::NoCandidatePlan => "NO_CANDIDATE_PLAN",
            ErrorCode::PlanStepUnsatisfied => "PLAN_STEP_UNSATISFIED",
            ErrorCode::PeerUnreachable => "PEER_UNREACHABLE",
            ErrorCode::RemoteError => "REMOTE_ERROR",
            ErrorCode::InjectionFailed => "INJECTION_FAILED",
            ErrorCode::ServiceFault => "SERVICE_FAULT",
        }
    }

    /// Transport status an error of this code travels under.
    pub fn wire_status(self) -> WireStatus {
        match self {
            ErrorCode::UnknownService | ErrorCode::NoCandidatePlan => WireStatus::NotFound,
            ErrorCode::BadArguments => WireStatus::BadRequest,
            ErrorCode::PlanStepUnsatisfied
            | ErrorCode::PeerUnreachable
            | ErrorCode::RemoteError
            | ErrorCode::InjectionFailed
            | ErrorCode::ServiceFault => WireStatus::ServerError,
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An application-level failure, with checklist step context when it
/// happened mid-composite. `step` is the 0-based index of the failing
/// item, so it equals the number of invocations completed before it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub provider: Option<PeerId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub service_name: Option<String>,
}

impl ServiceError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> ServiceError {
        ServiceError {
            code,
            message: message.into(),
            step: None,
            provider: None,
            service_name: None,
        }
    }

    fn at_step(mut self, step: usize, provider: &PeerId, service_name: &str) -> ServiceError {
        self.step = Some(step);
        self.provider = Some(provider.clone());
        self.service_name = Some(service_name.to_string());
        self
    }
}

impl fmt::Display for ServiceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)?;
        if let (Some(step), Some(provider), Some(service)) =
            (self.step, &self.provider, &self.service_name)
        {
            write!(f, " (step {step}: {provider}/{service})")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Wire documents. Everything crossing the wire is canonical: sorted keys,
// no insignificant whitespace.

/// `POST /invoke` body for a single service invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvokeEnvelope {
    pub service_name: String,
    pub arguments: BTreeMap<String, Value>,
}

/// One client-provided input: name, declared type, and value. The
/// declared type disambiguates numeric literals; an integer literal for a
/// decimal parameter is widened on decode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProvidedValue {
    pub name: String,
    #[serde(rename = "type")]
    pub type_tag: TypeTag,
    pub value: Value,
}

/// `POST /invoke` body for a composite request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompositeEnvelope {
    pub request_id: String,
    pub goals: Vec<ParameterSpec>,
    pub provided: Vec<ProvidedValue>,
}

impl CompositeEnvelope {
    /// Splits the envelope into the pure planning request and the typed
    /// value map, widening integer literals for decimal parameters.
    pub fn into_parts(self) -> (CompositeRequest, BTreeMap<String, Value>) {
        let mut values = BTreeMap::new();
        let mut provided = Vec::new();
        for p in self.provided {
            provided.push(ParameterSpec::new(p.name.clone(), p.type_tag));
            values.insert(p.name, p.value.normalize_for(p.type_tag));
        }
        (
            CompositeRequest {
                goals: self.goals,
                provided,
            },
            values,
        )
    }
}

/// Successful single-invocation response body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputsBody {
    pub outputs: BTreeMap<String, Value>,
}

/// Error response body on any route.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ServiceError,
}

/// One checklist step as echoed back to the client: routing facts plus
/// the status the planner saw. A `deactivated` planned status marks the
/// step that triggered an injection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanTraceEntry {
    pub provider: PeerId,
    pub service_name: String,
    pub endpoint: String,
    pub planned_status: ServiceState,
}

/// Successful composite response: the requested goal values only, plus
/// the executed plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregatedResponse {
    pub request_id: String,
    pub values: BTreeMap<String, Value>,
    pub plan_trace: Vec<PlanTraceEntry>,
}

/// `GET /registry` response body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistryDump {
    pub entries: Vec<RegistryDumpEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistryDumpEntry {
    pub origin: PeerId,
    pub seqno: u64,
    pub received_at: u64,
    pub hops_remaining: u32,
    pub descriptor: crate::descriptor::ServiceDescriptor,
}

/// `GET /services` response body: descriptors this peer hosts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServicesBody {
    pub services: Vec<crate::descriptor::ServiceDescriptor>,
}

/// `POST /gossip` acknowledgement body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GossipAck {
    pub outcome: String,
}

pub fn error_response(error: &ServiceError) -> WireResponse {
    WireResponse::new(
        error.code.wire_status(),
        to_canonical_json(&ErrorBody {
            error: error.clone(),
        }),
    )
}

// ---------------------------------------------------------------------------
// Task log.

/// One unit of work the executor performed, for observability.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskRecord {
    /// Logical timestamp: strictly increasing per executor.
    pub id: u64,
    pub label: String,
    pub ok: bool,
}

const TASK_LOG_CAPACITY: usize = 1024;

/// Bounded log of recent executor work. Oldest records fall off; the
/// total count keeps running.
#[derive(Default)]
pub struct TaskLog {
    inner: Mutex<TaskLogInner>,
}

#[derive(Default)]
struct TaskLogInner {
    records: VecDeque<TaskRecord>,
    next_id: u64,
}

impl TaskLog {
    fn record(&self, label: String, ok: bool) {
        let mut inner = self.inner.lock().unwrap();
        let id = inner.next_id;
        inner.next_id += 1;
        if inner.records.len() == TASK_LOG_CAPACITY {
            inner.records.pop_front();
        }
        inner.records.push_back(TaskRecord { id, label, ok });
    }

    /// Most recent records, oldest first.
    pub fn recent(&self, n: usize) -> Vec<TaskRecord> {
        let inner = self.inner.lock().unwrap();
        inner
            .records
            .iter()
            .skip(inner.records.len().saturating_sub(n))
            .cloned()
            .collect()
    }

    /// Total records ever written, including ones that fell off.
    pub fn total(&self) -> u64 {
        self.inner.lock().unwrap().next_id
    }
}

// ---------------------------------------------------------------------------
// Executor.

/// Executes invocations and composite requests on behalf of one peer.
pub struct ServiceExecutor {
    self_id: PeerId,
    registry: Arc<Registry>,
    repository: Arc<Repository>,
    overlay: Arc<Overlay>,
    client: Arc<dyn Client>,
    max_plan_len: usize,
    tasks: TaskLog,
}

impl ServiceExecutor {
    pub fn new(
        self_id: PeerId,
        registry: Arc<Registry>,
        repository: Arc<Repository>,
        overlay: Arc<Overlay>,
        client: Arc<dyn Client>,
        max_plan_len: usize,
    ) -> ServiceExecutor {
        ServiceExecutor {
            self_id,
            registry,
            repository,
            overlay,
            client,
            max_plan_len,
            tasks: TaskLog::default(),
        }
    }

    pub fn tasks(&self) -> &TaskLog {
        &self.tasks
    }

    /// Invokes a locally deployed service, injecting it first when
    /// dormant. A performed injection is followed by a re-advertisement
    /// so the network learns the new status; the repository lock is
    /// released before that traffic starts.
    pub fn invoke_local(
        &self,
        service_name: &str,
        arguments: &BTreeMap<String, Value>,
    ) -> Result<BTreeMap<String, Value>, ServiceError> {
        let result = self.invoke_local_inner(service_name, arguments);
        self.tasks.record(
            format!("invoke {service_name}"),
            result.is_ok(),
        );
        result
    }

    fn invoke_local_inner(
        &self,
        service_name: &str,
        arguments: &BTreeMap<String, Value>,
    ) -> Result<BTreeMap<String, Value>, ServiceError> {
        let definition = self.repository.definition(service_name).ok_or_else(|| {
            ServiceError::new(
                ErrorCode::UnknownService,
                format!("service {service_name:?} is not deployed on {}", self.self_id),
            )
        })?;

        let service = match self.repository.active().get(service_name) {
            Some(service) => service,
            None => {
                let (service, outcome) =
                    self.repository
                        .inject(service_name)
                        .map_err(|e| match e {
                            RepositoryError::UnknownService(_) => ServiceError::new(
                                ErrorCode::UnknownService,
                                e.to_string(),
                            ),
                            RepositoryError::InjectionFailed { .. } => {
                                ServiceError::new(ErrorCode::InjectionFailed, e.to_string())
                            }
                        })?;
                if outcome == InjectOutcome::Performed {
                    self.tasks.record(format!("inject {service_name}"), true);
                    // Lock-free of the repository here; the advertisement
                    // carries the new activated status to the network.
                    let _ = self.overlay.advertise(service_name);
                }
                service
            }
        };

        let normalized = validate_arguments(&definition.inputs, arguments)
            .map_err(|msg| ServiceError::new(ErrorCode::BadArguments, msg))?;

        service.invoke(&normalized).map_err(|message| {
            ServiceError::new(
                ErrorCode::ServiceFault,
                format!("service {service_name:?} failed: {message}"),
            )
        })
    }

    /// Plans a composite request against the current registry snapshot
    /// without executing it.
    pub fn plan_composite(&self, request: &CompositeRequest) -> Result<ScoredPlan, ServiceError> {
        let snapshot = self.registry.snapshot();
        planner::plan(&snapshot, request, self.max_plan_len).map_err(|e| match e {
            PlanError::NoCandidatePlan => ServiceError::new(
                ErrorCode::NoCandidatePlan,
                "no checklist over the known services satisfies the request",
            ),
            PlanError::InvalidRequest(msg) => ServiceError::new(ErrorCode::BadArguments, msg),
        })
    }

    /// Plans and executes a composite request, returning the aggregated
    /// goal values and the executed plan.
    pub fn execute_composite(
        &self,
        request_id: &str,
        request: &CompositeRequest,
        provided_values: &BTreeMap<String, Value>,
    ) -> Result<AggregatedResponse, ServiceError> {
        let result = self.execute_composite_inner(request_id, request, provided_values);
        self.tasks.record(
            format!("composite {request_id}"),
            result.is_ok(),
        );
        result
    }

    fn execute_composite_inner(
        &self,
        request_id: &str,
        request: &CompositeRequest,
        provided_values: &BTreeMap<String, Value>,
    ) -> Result<AggregatedResponse, ServiceError> {
        let provided_values = check_provided(&request.provided, provided_values)
            .map_err(|msg| ServiceError::new(ErrorCode::BadArguments, msg))?;

        let plan = self.plan_composite(request)?;
        let checklist = &plan.checklist;
        self.tasks.record(
            format!("plan {request_id} -> {}", plan.score.tiebreak_key),
            true,
        );

        let mut step_outputs: Vec<BTreeMap<String, Value>> = Vec::new();
        for (index, item) in checklist.items.iter().enumerate() {
            let args = resolve_step_inputs(item, &provided_values, &step_outputs)
                .map_err(|e| e.at_step(index, &item.provider, &item.service_name))?;

            let outputs = if item.provider == self.self_id {
                self.invoke_local(&item.service_name, &args)
            } else {
                self.invoke_remote(&item.endpoint, &item.service_name, &args)
            }
            .map_err(|e| {
                if e.step.is_some() {
                    e
                } else {
                    e.at_step(index, &item.provider, &item.service_name)
                }
            })?;

            self.tasks.record(
                format!(
                    "composite {request_id} step {index} {}/{}",
                    item.provider, item.service_name
                ),
                true,
            );
            step_outputs.push(outputs);
        }

        let values = aggregate_goals(request, checklist, &provided_values, &step_outputs)?;
        Ok(AggregatedResponse {
            request_id: request_id.to_string(),
            values,
            plan_trace: checklist
                .items
                .iter()
                .map(|item| PlanTraceEntry {
                    provider: item.provider.clone(),
                    service_name: item.service_name.clone(),
                    endpoint: item.endpoint.clone(),
                    planned_status: item.planned_status,
                })
                .collect(),
        })
    }

    fn invoke_remote(
        &self,
        endpoint: &str,
        service_name: &str,
        arguments: &BTreeMap<String, Value>,
    ) -> Result<BTreeMap<String, Value>, ServiceError> {
        let body = to_canonical_json(&InvokeEnvelope {
            service_name: service_name.to_string(),
            arguments: arguments.clone(),
        });
        let response = self
            .client
            .request(endpoint, WireRequest::post("/invoke", body))
            .map_err(|e| match e {
                TransportError::Unreachable(_, _) | TransportError::Timeout(_) => {
                    ServiceError::new(ErrorCode::PeerUnreachable, e.to_string())
                }
                TransportError::EndpointInUse(_) | TransportError::Protocol(_, _) => {
                    ServiceError::new(ErrorCode::RemoteError, e.to_string())
                }
            })?;

        if response.status == WireStatus::Ok {
            let body: OutputsBody = serde_json::from_slice(&response.body).map_err(|e| {
                ServiceError::new(
                    ErrorCode::RemoteError,
                    format!("undecodable response from {endpoint}: {e}"),
                )
            })?;
            return Ok(body.outputs);
        }

        // Provider-side failures keep their code when they describe the
        // service itself; anything else is the remote peer misbehaving
        // from this peer's point of view.
        let parsed: Option<ErrorBody> = serde_json::from_slice(&response.body).ok();
        Err(match parsed {
            Some(body)
                if matches!(
                    body.error.code,
                    ErrorCode::InjectionFailed | ErrorCode::ServiceFault
                ) =>
            {
                ServiceError::new(body.error.code, body.error.message)
            }
            Some(body) => ServiceError::new(
                ErrorCode::RemoteError,
                format!("{endpoint} answered {}: {}", body.error.code, body.error.message),
            ),
            None => ServiceError::new(
                ErrorCode::RemoteError,
                format!(
                    "{endpoint} answered status {} with undecodable body",
                    response.status.http_code()
                ),
            ),
        })
    }
}

/// Checks an argument map against declared inputs: exact name set, each
/// value conforming to its declared type after integer widening.
pub fn validate_arguments(
    inputs: &[ParameterSpec],
    arguments: &BTreeMap<String, Value>,
) -> Result<BTreeMap<String, Value>, String> {
    let mut normalized = BTreeMap::new();
    for spec in inputs {
        let value = arguments
            .get(&spec.name)
            .ok_or_else(|| format!("missing argument {:?}", spec.name))?;
        let value = value.clone().normalize_for(spec.type_tag);
        if value.type_tag() != spec.type_tag {
            return Err(format!(
                "argument {:?} has type {}, expected {}",
                spec.name,
                value.type_tag(),
                spec.type_tag
            ));
        }
        normalized.insert(spec.name.clone(), value);
    }
    for name in arguments.keys() {
        if !inputs.iter().any(|spec| &spec.name == name) {
            return Err(format!("unexpected argument {name:?}"));
        }
    }
    Ok(normalized)
}

fn check_provided(
    specs: &[ParameterSpec],
    values: &BTreeMap<String, Value>,
) -> Result<BTreeMap<String, Value>, String> {
    validate_arguments(specs, values)
        .map_err(|msg| format!("provided values do not match their declaration: {msg}"))
}

/// Resolves one step's arguments from its canonical binding sources,
/// verifying name and type at the moment of use.
fn resolve_step_inputs(
    item: &crate::planner::ChecklistItem,
    provided: &BTreeMap<String, Value>,
    step_outputs: &[BTreeMap<String, Value>],
) -> Result<BTreeMap<String, Value>, ServiceError> {
    let mut args = BTreeMap::new();
    for spec in &item.inputs {
        let binding = item.bindings.get(&spec.name).ok_or_else(|| {
            ServiceError::new(
                ErrorCode::PlanStepUnsatisfied,
                format!("input {:?} has no binding", spec.name),
            )
        })?;
        let value = match binding {
            crate::planner::BindingSource::Provided => provided.get(&spec.name),
            crate::planner::BindingSource::StepOutput { step } => {
                step_outputs.get(*step).and_then(|o| o.get(&spec.name))
            }
        }
        .ok_or_else(|| {
            ServiceError::new(
                ErrorCode::PlanStepUnsatisfied,
                format!(
                    "input {:?} missing from its bound source {:?}",
                    spec.name, binding
                ),
            )
        })?;
        let value = value.clone().normalize_for(spec.type_tag);
        if value.type_tag() != spec.type_tag {
            return Err(ServiceError::new(
                ErrorCode::PlanStepUnsatisfied,
                format!(
                    "input {:?} resolved to type {}, expected {}",
                    spec.name,
                    value.type_tag(),
                    spec.type_tag
                ),
            ));
        }
        args.insert(spec.name.clone(), value);
    }
    Ok(args)
}

/// Pulls each goal value from its recorded source, verifying type. A
/// failure is attributed to the producing step; goals sourced straight
/// from the provided inputs were validated at entry and cannot fail.
fn aggregate_goals(
    request: &CompositeRequest,
    checklist: &Checklist,
    provided: &BTreeMap<String, Value>,
    step_outputs: &[BTreeMap<String, Value>],
) -> Result<BTreeMap<String, Value>, ServiceError> {
    let mut values = BTreeMap::new();
    for goal in &request.goals {
        let source = checklist
            .goal_sources
            .get(&goal.name)
            .expect("planner recorded a source for every goal");
        let step = match source {
            crate::planner::BindingSource::Provided => {
                let value = provided
                    .get(&goal.name)
                    .expect("provided values were checked at entry")
                    .clone();
                values.insert(goal.name.clone(), value);
                continue;
            }
            crate::planner::BindingSource::StepOutput { step } => *step,
        };
        let item = &checklist.items[step];
        let value = step_outputs
            .get(step)
            .and_then(|o| o.get(&goal.name))
            .ok_or_else(|| {
                ServiceError::new(
                    ErrorCode::PlanStepUnsatisfied,
                    format!("goal {:?} missing from its producing step", goal.name),
                )
                .at_step(step, &item.provider, &item.service_name)
            })?;
        let value = value.clone().normalize_for(goal.type_tag);
        if value.type_tag() != goal.type_tag {
            return Err(ServiceError::new(
                ErrorCode::PlanStepUnsatisfied,
                format!(
                    "goal {:?} resolved to type {}, expected {}",
                    goal.name,
                    value.type_tag(),
                    goal.type_tag
                ),
            )
            .at_step(step, &item.provider, &item.service_name));
        }
        values.insert(goal.name.clone(), value);
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::ServiceDescriptor;
    use crate::overlay::Neighbor;
    use crate::repository::{ActiveServices, RepositoryDirectory, ServiceDefinition};
    use crate::transport::sim::SimNet;

    fn spec(name: &str, tag: TypeTag) -> ParameterSpec {
        ParameterSpec::new(name, tag)
    }

    fn fixtures(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    struct Rig {
        executor: ServiceExecutor,
        registry: Arc<Registry>,
        overlay: Arc<Overlay>,
        repository: Arc<Repository>,
        net: Arc<SimNet>,
    }

    fn rig(definitions: Vec<(ServiceDefinition, ServiceState)>) -> Rig {
        let net = SimNet::new();
        let self_id = PeerId::new("self").unwrap();
        let endpoint = "self.sim".to_string();
        let registry = Arc::new(Registry::new());
        let active = Arc::new(ActiveServices::default());
        let repository = Arc::new(Repository::new(definitions, active).unwrap());
        let directory = Arc::new(RepositoryDirectory::new(
            Arc::clone(&repository),
            self_id.clone(),
            endpoint.clone(),
        ));
        let client: Arc<dyn Client> = Arc::new(net.client(&endpoint));
        let overlay = Arc::new(Overlay::new(
            self_id.clone(),
            vec![Neighbor {
                id: PeerId::new("witness").unwrap(),
                endpoint: "witness.sim".to_string(),
            }],
            4,
            Arc::clone(&registry),
            directory,
            Arc::clone(&client),
        ));
        // The witness absorbs gossip so advertisement sends succeed.
        net.bind("witness.sim", Arc::new(|_req: WireRequest| WireResponse::ok(vec![])))
            .unwrap();
        let executor = ServiceExecutor::new(
            self_id,
            Arc::clone(&registry),
            Arc::clone(&repository),
            Arc::clone(&overlay),
            client,
            5,
        );
        Rig {
            executor,
            registry,
            overlay,
            repository,
            net,
        }
    }

    /// Binds a scripted remote provider that answers `/invoke` for one
    /// service and registers it in the rig's registry.
    fn add_remote_provider(
        rig: &Rig,
        peer: &str,
        service: &str,
        inputs: Vec<ParameterSpec>,
        outputs: Vec<ParameterSpec>,
        status: ServiceState,
        response: Result<BTreeMap<String, Value>, ServiceError>,
        bind: bool,
    ) {
        let endpoint = format!("{peer}.sim");
        let descriptor = ServiceDescriptor {
            service_name: service.to_string(),
            version: 0,
            inputs,
            outputs,
            status,
            provider: PeerId::new(peer).unwrap(),
            endpoint: endpoint.clone(),
        };
        rig.registry.upsert(
            crate::descriptor::Advertisement::new(descriptor, 1, 4).unwrap(),
        );
        if bind {
            rig.net
                .bind(
                    &endpoint,
                    Arc::new(move |req: WireRequest| {
                        assert_eq!(req.path, "/invoke");
                        match &response {
                            Ok(outputs) => WireResponse::ok(to_canonical_json(&OutputsBody {
                                outputs: outputs.clone(),
                            })),
                            Err(error) => error_response(error),
                        }
                    }),
                )
                .unwrap();
        }
    }

    fn pc_order_definition() -> ServiceDefinition {
        ServiceDefinition::fixed(
            "pc_order",
            vec![spec("brand", TypeTag::String), spec("qty", TypeTag::Int)],
            vec![
                spec("stock", TypeTag::Int),
                spec("delivery_date", TypeTag::String),
            ],
            fixtures(&[
                ("stock", Value::Int(12)),
                ("delivery_date", Value::Str("2025-01-15".to_string())),
            ]),
        )
    }

    fn pc_args() -> BTreeMap<String, Value> {
        fixtures(&[
            ("brand", Value::Str("dell".to_string())),
            ("qty", Value::Int(2)),
        ])
    }

    #[test]
    fn invoke_local_unknown_service() {
        let rig = rig(vec![]);
        let err = rig.executor.invoke_local("ghost", &BTreeMap::new()).unwrap_err();
        assert_eq!(err.code, ErrorCode::UnknownService);
    }

    #[test]
    fn invoke_local_active_service_returns_outputs() {
        let rig = rig(vec![(pc_order_definition(), ServiceState::Activated)]);
        let out = rig.executor.invoke_local("pc_order", &pc_args()).unwrap();
        assert_eq!(out["stock"], Value::Int(12));
        assert_eq!(rig.executor.tasks().total(), 1);
    }

    #[test]
    fn invoke_local_rejects_bad_arguments() {
        let rig = rig(vec![(pc_order_definition(), ServiceState::Activated)]);

        let mut missing = pc_args();
        missing.remove("qty");
        assert_eq!(
            rig.executor.invoke_local("pc_order", &missing).unwrap_err().code,
            ErrorCode::BadArguments
        );

        let mut extra = pc_args();
        extra.insert("color".to_string(), Value::Str("red".to_string()));
        assert_eq!(
            rig.executor.invoke_local("pc_order", &extra).unwrap_err().code,
            ErrorCode::BadArguments
        );

        let mut wrong = pc_args();
        wrong.insert("qty".to_string(), Value::Str("two".to_string()));
        assert_eq!(
            rig.executor.invoke_local("pc_order", &wrong).unwrap_err().code,
            ErrorCode::BadArguments
        );
    }

    #[test]
    fn integer_literal_widens_for_decimal_parameter() {
        let def = ServiceDefinition::fixed(
            "pricer",
            vec![spec("rate", TypeTag::Decimal)],
            vec![spec("total", TypeTag::Decimal)],
            fixtures(&[("total", Value::Decimal(9.5))]),
        );
        let rig = rig(vec![(def, ServiceState::Activated)]);
        let out = rig
            .executor
            .invoke_local("pricer", &fixtures(&[("rate", Value::Int(3))]))
            .unwrap();
        assert_eq!(out["total"], Value::Decimal(9.5));
    }

    #[test]
    fn invoke_local_injects_dormant_service_and_readvertises() {
        let rig = rig(vec![(pc_order_definition(), ServiceState::Deactivated)]);
        assert_eq!(rig.overlay.current_seqno("pc_order"), None);

        let out = rig.executor.invoke_local("pc_order", &pc_args()).unwrap();
        assert_eq!(out["stock"], Value::Int(12));
        assert_eq!(rig.repository.state("pc_order"), Some(ServiceState::Activated));
        assert_eq!(rig.repository.activation_events("pc_order"), Some(1));
        assert_eq!(rig.overlay.current_seqno("pc_order"), Some(1));

        let own_entry = rig
            .registry
            .get(&PeerId::new("self").unwrap(), "pc_order")
            .unwrap();
        assert_eq!(own_entry.descriptor().status, ServiceState::Activated);

        // Second call takes the active path, no second injection.
        rig.executor.invoke_local("pc_order", &pc_args()).unwrap();
        assert_eq!(rig.repository.activation_events("pc_order"), Some(1));
        assert_eq!(rig.overlay.current_seqno("pc_order"), Some(1));
    }

    #[test]
    fn failed_injection_keeps_service_dormant() {
        let mut def = pc_order_definition();
        def.injection_fault = Some("factory broke".to_string());
        let rig = rig(vec![(def, ServiceState::Deactivated)]);
        let err = rig.executor.invoke_local("pc_order", &pc_args()).unwrap_err();
        assert_eq!(err.code, ErrorCode::InjectionFailed);
        assert_eq!(rig.repository.state("pc_order"), Some(ServiceState::Deactivated));
        assert_eq!(rig.overlay.current_seqno("pc_order"), None);
    }

    #[test]
    fn service_fault_is_reported_as_such() {
        let mut def = pc_order_definition();
        def.fault = Some("backend gone".to_string());
        let rig = rig(vec![(def, ServiceState::Activated)]);
        let err = rig.executor.invoke_local("pc_order", &pc_args()).unwrap_err();
        assert_eq!(err.code, ErrorCode::ServiceFault);
        assert!(err.message.contains("backend gone"));
    }

    fn composite_request() -> (CompositeRequest, BTreeMap<String, Value>) {
        (
            CompositeRequest {
                goals: vec![spec("stock", TypeTag::Int)],
                provided: vec![spec("brand", TypeTag::String), spec("qty", TypeTag::Int)],
            },
            pc_args(),
        )
    }

    #[test]
    fn composite_with_local_step_aggregates_goals() {
        let rig = rig(vec![(pc_order_definition(), ServiceState::Activated)]);
        rig.overlay.advertise_all();
        let (req, values) = composite_request();
        let resp = rig.executor.execute_composite("r-1", &req, &values).unwrap();
        assert_eq!(resp.request_id, "r-1");
        assert_eq!(resp.values, fixtures(&[("stock", Value::Int(12))]));
        assert_eq!(resp.plan_trace.len(), 1);
        assert_eq!(resp.plan_trace[0].provider.as_str(), "self");
        assert_eq!(resp.plan_trace[0].planned_status, ServiceState::Activated);
    }

    #[test]
    fn goals_already_provided_echo_with_empty_trace() {
        let rig = rig(vec![(pc_order_definition(), ServiceState::Activated)]);
        rig.overlay.advertise_all();
        let req = CompositeRequest {
            goals: vec![spec("brand", TypeTag::String)],
            provided: vec![spec("brand", TypeTag::String)],
        };
        let values = fixtures(&[("brand", Value::Str("dell".to_string()))]);
        let resp = rig.executor.execute_composite("r-echo", &req, &values).unwrap();
        assert_eq!(resp.values, values);
        assert!(resp.plan_trace.is_empty());
    }

    #[test]
    fn composite_with_remote_step() {
        let rig = rig(vec![]);
        add_remote_provider(
            &rig,
            "peer9",
            "pc_order",
            vec![spec("brand", TypeTag::String), spec("qty", TypeTag::Int)],
            vec![spec("stock", TypeTag::Int), spec("delivery_date", TypeTag::String)],
            ServiceState::Activated,
            Ok(fixtures(&[
                ("stock", Value::Int(3)),
                ("delivery_date", Value::Str("2025-02-02".to_string())),
            ])),
            true,
        );
        let (req, values) = composite_request();
        let resp = rig.executor.execute_composite("r-2", &req, &values).unwrap();
        assert_eq!(resp.values["stock"], Value::Int(3));
        assert_eq!(resp.plan_trace[0].provider.as_str(), "peer9");
    }

    #[test]
    fn unreachable_provider_fails_with_zero_based_step() {
        let rig = rig(vec![]);
        add_remote_provider(
            &rig,
            "peer9",
            "pc_order",
            vec![],
            vec![spec("stock", TypeTag::Int)],
            ServiceState::Activated,
            Ok(fixtures(&[("stock", Value::Int(3))])),
            false, // never bound: unreachable
        );
        let req = CompositeRequest {
            goals: vec![spec("stock", TypeTag::Int)],
            provided: vec![],
        };
        let err = rig
            .executor
            .execute_composite("r-3", &req, &BTreeMap::new())
            .unwrap_err();
        assert_eq!(err.code, ErrorCode::PeerUnreachable);
        assert_eq!(err.step, Some(0));
        assert_eq!(err.provider.as_ref().unwrap().as_str(), "peer9");
        assert_eq!(err.service_name.as_deref(), Some("pc_order"));
    }

    #[test]
    fn remote_service_fault_keeps_its_code() {
        let rig = rig(vec![]);
        add_remote_provider(
            &rig,
            "peer9",
            "pc_order",
            vec![],
            vec![spec("stock", TypeTag::Int)],
            ServiceState::Activated,
            Err(ServiceError::new(ErrorCode::ServiceFault, "remote backend down")),
            true,
        );
        let req = CompositeRequest {
            goals: vec![spec("stock", TypeTag::Int)],
            provided: vec![],
        };
        let err = rig
            .executor
            .execute_composite("r-4", &req, &BTreeMap::new())
            .unwrap_err();
        assert_eq!(err.code, ErrorCode::ServiceFault);
        assert_eq!(err.step, Some(0));
    }

    #[test]
    fn remote_unknown_service_becomes_remote_error() {
        // Registry says peer9 has it; peer9 disagrees. From this peer's
        // view that is the remote misbehaving, not a client mistake.
        let rig = rig(vec![]);
        add_remote_provider(
            &rig,
            "peer9",
            "pc_order",
            vec![],
            vec![spec("stock", TypeTag::Int)],
            ServiceState::Activated,
            Err(ServiceError::new(ErrorCode::UnknownService, "not here")),
            true,
        );
        let req = CompositeRequest {
            goals: vec![spec("stock", TypeTag::Int)],
            provided: vec![],
        };
        let err = rig
            .executor
            .execute_composite("r-5", &req, &BTreeMap::new())
            .unwrap_err();
        assert_eq!(err.code, ErrorCode::RemoteError);
        assert!(err.message.contains("UNKNOWN_SERVICE"));
    }

    #[test]
    fn ill_typed_remote_output_fails_at_the_consumer() {
        let rig = rig(vec![]);
        // Advertised as int, delivered as string.
        add_remote_provider(
            &rig,
            "peer9",
            "pc_order",
            vec![],
            vec![spec("stock", TypeTag::Int)],
            ServiceState::Activated,
            Ok(fixtures(&[("stock", Value::Str("many".to_string()))])),
            true,
        );
        let req = CompositeRequest {
            goals: vec![spec("stock", TypeTag::Int)],
            provided: vec![],
        };
        let err = rig
            .executor
            .execute_composite("r-6", &req, &BTreeMap::new())
            .unwrap_err();
        assert_eq!(err.code, ErrorCode::PlanStepUnsatisfied);
        assert_eq!(err.step, Some(0));
    }

    #[test]
    fn missing_chained_output_fails_at_the_consuming_step() {
        let rig = rig(vec![]);
        // Step 0 advertises "account" but does not deliver it; step 1
        // consumes it, so step 1 is where the failure lands.
        add_remote_provider(
            &rig,
            "peer8",
            "lookup",
            vec![],
            vec![spec("account", TypeTag::Int)],
            ServiceState::Activated,
            Ok(fixtures(&[])),
            true,
        );
        add_remote_provider(
            &rig,
            "peer9",
            "balance",
            vec![spec("account", TypeTag::Int)],
            vec![spec("amount", TypeTag::Int)],
            ServiceState::Activated,
            Ok(fixtures(&[("amount", Value::Int(10))])),
            true,
        );
        let req = CompositeRequest {
            goals: vec![spec("amount", TypeTag::Int)],
            provided: vec![],
        };
        let err = rig
            .executor
            .execute_composite("r-7", &req, &BTreeMap::new())
            .unwrap_err();
        assert_eq!(err.code, ErrorCode::PlanStepUnsatisfied);
        assert_eq!(err.step, Some(1));
        assert_eq!(err.service_name.as_deref(), Some("balance"));
    }

    #[test]
    fn no_candidate_plan_is_reported() {
        let rig = rig(vec![]);
        let req = CompositeRequest {
            goals: vec![spec("stock", TypeTag::Int)],
            provided: vec![],
        };
        let err = rig
            .executor
            .execute_composite("r-8", &req, &BTreeMap::new())
            .unwrap_err();
        assert_eq!(err.code, ErrorCode::NoCandidatePlan);
    }

    #[test]
    fn provided_values_must_match_declaration() {
        let rig = rig(vec![(pc_order_definition(), ServiceState::Activated)]);
        rig.overlay.advertise_all();
        let (req, _) = composite_request();
        let wrong = fixtures(&[
            ("brand", Value::Str("dell".to_string())),
            ("qty", Value::Str("two".to_string())),
        ]);
        let err = rig.executor.execute_composite("r-9", &req, &wrong).unwrap_err();
        assert_eq!(err.code, ErrorCode::BadArguments);
    }

    #[test]
    fn composite_injects_dormant_local_step() {
        let rig = rig(vec![(pc_order_definition(), ServiceState::Deactivated)]);
        rig.overlay.advertise_all();
        let (req, values) = composite_request();
        let resp = rig.executor.execute_composite("r-10", &req, &values).unwrap();
        assert_eq!(resp.plan_trace[0].planned_status, ServiceState::Deactivated);
        assert_eq!(rig.repository.state("pc_order"), Some(ServiceState::Activated));
        // Initial advertisement was seqno 1; the injection re-advertised.
        assert_eq!(rig.overlay.current_seqno("pc_order"), Some(2));
    }

    #[test]
    fn envelope_into_parts_widens_decimal_literals() {
        let envelope = CompositeEnvelope {
            request_id: "r".to_string(),
            goals: vec![spec("total", TypeTag::Decimal)],
            provided: vec![ProvidedValue {
                name: "rate".to_string(),
                type_tag: TypeTag::Decimal,
                value: Value::Int(3),
            }],
        };
        let (req, values) = envelope.into_parts();
        assert_eq!(req.provided, vec![spec("rate", TypeTag::Decimal)]);
        assert_eq!(values["rate"], Value::Decimal(3.0));
    }

    #[test]
    fn task_log_caps_and_counts() {
        let log = TaskLog::default();
        for i in 0..1500u64 {
            log.record(format!("t{i}"), true);
        }
        assert_eq!(log.total(), 1500);
        let recent = log.recent(8);
        assert_eq!(recent.len(), 8);
        assert_eq!(recent.last().unwrap().id, 1499);
        assert_eq!(recent.first().unwrap().id, 1492);
        assert_eq!(log.recent(10_000).len(), 1024);
    }

    #[test]
    fn error_codes_serialize_screaming() {
        let err = ServiceError::new(ErrorCode::NoCandidatePlan, "nope");
        let doc = to_canonical_json(&ErrorBody { error: err });
        let text = String::from_utf8(doc).unwrap();
        assert!(text.contains("\"code\":\"NO_CANDIDATE_PLAN\""));
        assert!(!text.contains("step"));
    }
}
