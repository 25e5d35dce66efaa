//! One function per subcommand; each prints its own output and returns
//! the process exit code. Documents go to stdout, diagnostics to stderr.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use peercompose::cluster::{ClusterError, TcpCluster};
use peercompose::config::PeerConfig;
use peercompose::descriptor::{to_canonical_json, ParameterSpec};
use peercompose::executor::{CompositeEnvelope, ErrorBody, ProvidedValue, RegistryDump};
use peercompose::planner::{self, BindingSource, CompositeRequest, PlanError, ScoredPlan};
use peercompose::registry::RegistryEntry;
use peercompose::scenario::{run_scenario, Scenario, ScenarioEvent, ScenarioRun};
use peercompose::transport::http::HttpClient;
use peercompose::transport::{Client, WireRequest, WireResponse, WireStatus};

use crate::exit::{self, service_code, transport_code, GENERAL, OK, USAGE};
use crate::specs;

fn fail_usage(message: impl std::fmt::Display) -> u8 {
    eprintln!("error: {message}");
    USAGE
}

/// Prints the peer's response document to stdout and maps its status to
/// an exit code.
fn print_wire_result(resp: &WireResponse) -> u8 {
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(&resp.body).expect("stdout");
    stdout.write_all(b"\n").expect("stdout");
    drop(stdout);
    if resp.status == WireStatus::Ok {
        return OK;
    }
    match serde_json::from_slice::<ErrorBody>(&resp.body) {
        Ok(body) => {
            eprintln!("error: {} {}", body.error.code.as_str(), body.error.message);
            service_code(body.error.code)
        }
        Err(_) => {
            eprintln!(
                "error: peer answered status {} with an unrecognized body",
                resp.status.http_code()
            );
            GENERAL
        }
    }
}

pub fn peer_run(config_path: &Path) -> u8 {
    let config = match PeerConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => return fail_usage(e),
    };
    let peer_id = config.peer_id.clone();
    let service_count = config.services.len();
    let cluster = match TcpCluster::start(std::slice::from_ref(&config)) {
        Ok(c) => c,
        Err(ClusterError::Transport(e)) => {
            eprintln!("error: {e}");
            return transport_code(&e);
        }
        Err(e) => return fail_usage(e),
    };
    let listening = cluster
        .endpoint(peer_id.as_str())
        .expect("started peer is present")
        .to_string();

    let startup = serde_json::json!({
        "peer_id": peer_id.as_str(),
        "listening": listening,
        "services": service_count,
    });
    let mut stdout = std::io::stdout().lock();
    stdout
        .write_all(&to_canonical_json(&startup))
        .expect("stdout");
    stdout.write_all(b"\n").expect("stdout");
    stdout.flush().expect("stdout");
    drop(stdout);

    let report = cluster.advertise_all();
    if report.failures > 0 {
        eprintln!(
            "warning: {} of {} initial advertisement pushes failed; re-advertisement will retry",
            report.failures, report.sent
        );
    }

    loop {
        std::thread::sleep(Duration::from_secs(3600));
    }
}

#[allow(clippy::too_many_arguments)]
pub fn client_invoke(
    to: &str,
    goal_specs: &[String],
    input_specs: &[String],
    request_id: Option<String>,
    timeout_ms: u64,
) -> u8 {
    let mut goals: Vec<ParameterSpec> = Vec::new();
    for s in goal_specs {
        match specs::parse_goal(s) {
            Ok(g) => goals.push(g),
            Err(e) => return fail_usage(e),
        }
    }
    let mut provided: Vec<ProvidedValue> = Vec::new();
    for s in input_specs {
        match specs::parse_input(s, false) {
            Ok(p) => provided.push(p),
            Err(e) => return fail_usage(e),
        }
    }
    let request_id = request_id.unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    let envelope = CompositeEnvelope {
        request_id,
        goals,
        provided,
    };
    let client = HttpClient::with_timeouts(
        Duration::from_millis(timeout_ms),
        Duration::from_millis(timeout_ms),
    );
    match client.request(to, WireRequest::post("/invoke", to_canonical_json(&envelope))) {
        Ok(resp) => print_wire_result(&resp),
        Err(e) => {
            eprintln!("error: {e}");
            transport_code(&e)
        }
    }
}

pub fn registry_dump(to: &str, timeout_ms: u64) -> u8 {
    let client = HttpClient::with_timeouts(
        Duration::from_millis(timeout_ms),
        Duration::from_millis(timeout_ms),
    );
    match client.request(to, WireRequest::get("/registry")) {
        Ok(resp) => print_wire_result(&resp),
        Err(e) => {
            eprintln!("error: {e}");
            transport_code(&e)
        }
    }
}

pub fn plan_explain(
    snapshot_path: &Path,
    goal_specs: &[String],
    input_specs: &[String],
    max_plan_len: usize,
) -> u8 {
    let bytes = match std::fs::read(snapshot_path) {
        Ok(b) => b,
        Err(e) => return fail_usage(format!("cannot read snapshot: {e}")),
    };
    let dump: RegistryDump = match serde_json::from_slice(&bytes) {
        Ok(d) => d,
        Err(e) => return fail_usage(format!("malformed snapshot document: {e}")),
    };
    let mut snapshot: Vec<RegistryEntry> = Vec::new();
    for entry in dump.entries {
        let ad = peercompose::descriptor::Advertisement {
            origin: entry.origin,
            descriptor: entry.descriptor,
            seqno: entry.seqno,
            hops_remaining: entry.hops_remaining,
        };
        if let Err(e) = ad.validate() {
            return fail_usage(format!("invalid snapshot entry: {e}"));
        }
        snapshot.push(RegistryEntry {
            advertisement: ad,
            received_at: entry.received_at,
        });
    }

    let mut goals: Vec<ParameterSpec> = Vec::new();
    for s in goal_specs {
        match specs::parse_goal(s) {
            Ok(g) => goals.push(g),
            Err(e) => return fail_usage(e),
        }
    }
    let mut provided: Vec<ParameterSpec> = Vec::new();
    for s in input_specs {
        match specs::parse_input(s, true) {
            Ok(p) => provided.push(ParameterSpec::new(p.name, p.type_tag)),
            Err(e) => return fail_usage(e),
        }
    }

    let request = CompositeRequest { goals, provided };
    match planner::plan(&snapshot, &request, max_plan_len) {
        Ok(plan) => {
            print_plan(&plan);
            OK
        }
        Err(PlanError::NoCandidatePlan) => {
            eprintln!("error: NO_CANDIDATE_PLAN no checklist over the snapshot satisfies the request");
            service_code(peercompose::executor::ErrorCode::NoCandidatePlan)
        }
        Err(PlanError::InvalidRequest(msg)) => {
            eprintln!("error: BAD_ARGUMENTS {msg}");
            service_code(peercompose::executor::ErrorCode::BadArguments)
        }
    }
}

fn print_plan(plan: &ScoredPlan) {
    if plan.checklist.items.is_empty() {
        println!("(empty checklist)");
    }
    for (index, item) in plan.checklist.items.iter().enumerate() {
        let bindings: Vec<String> = item
            .inputs
            .iter()
            .map(|input| {
                let source = match item.bindings.get(&input.name) {
                    Some(BindingSource::Provided) => "provided".to_string(),
                    Some(BindingSource::StepOutput { step }) => format!("item{}", step + 1),
                    None => "unbound".to_string(),
                };
                format!("{}={}", input.name, source)
            })
            .collect();
        let bindings = if bindings.is_empty() {
            "(none)".to_string()
        } else {
            bindings.join(", ")
        };
        println!(
            "{}. {}/{} ({}) <- {}",
            index + 1,
            item.provider,
            item.service_name,
            item.planned_status,
            bindings
        );
    }
    println!("score: {}", plan.score);
}

pub fn sim_run(scenario_path: &Path) -> u8 {
    let scenario = match Scenario::load(scenario_path) {
        Ok(s) => s,
        Err(e) => return fail_usage(e),
    };
    match run_scenario(&scenario) {
        Ok(report) => {
            print!("{}", report.transcript);
            if report.passed() {
                OK
            } else {
                eprintln!(
                    "error: {} of {} assertions failed",
                    report.assertions_failed, report.assertions_total
                );
                GENERAL
            }
        }
        Err(e) => fail_usage(e),
    }
}

pub fn bench_run(runs: u64, scenario_path: &Path) -> u8 {
    let scenario = match Scenario::load(scenario_path) {
        Ok(s) => s,
        Err(e) => return fail_usage(e),
    };
    let Some(split) = scenario.first_composite() else {
        return fail_usage("scenario has no composite event to measure");
    };
    let mut run = match ScenarioRun::new(&scenario) {
        Ok(r) => r,
        Err(e) => return fail_usage(e),
    };
    for event in &scenario.events[..split] {
        if let Err(e) = run.execute(event) {
            return fail_usage(e);
        }
    }
    eprint!("{}", run.transcript());

    let ScenarioEvent::Composite {
        target,
        request_id,
        goals,
        provided,
    } = &scenario.events[split]
    else {
        unreachable!("first_composite returned a composite index");
    };

    let mut durations: Vec<Duration> = Vec::new();
    for i in 1..=runs {
        let rid = format!("{request_id}-{i}");
        let started = Instant::now();
        match run.send_composite(target, &rid, goals, provided) {
            Ok(Ok(_)) => {
                let elapsed = started.elapsed();
                durations.push(elapsed);
                println!("run {i}: {:.1} us", micros(elapsed));
            }
            Ok(Err(error)) => {
                eprintln!(
                    "error: run {i} failed: {} {}",
                    error.code.as_str(),
                    error.message
                );
                return service_code(error.code);
            }
            Err(e) => return fail_usage(e),
        }
    }

    let mut sorted = durations.clone();
    sorted.sort();
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    let median = if sorted.len() % 2 == 1 {
        micros(sorted[sorted.len() / 2])
    } else {
        (micros(sorted[sorted.len() / 2 - 1]) + micros(sorted[sorted.len() / 2])) / 2.0
    };
    println!(
        "summary: runs={} min={:.1} us median={:.1} us max={:.1} us",
        durations.len(),
        micros(min),
        median,
        micros(max)
    );
    exit::OK
}

fn micros(d: Duration) -> f64 {
    d.as_secs_f64() * 1_000_000.0
}
