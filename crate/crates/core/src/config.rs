//! Peer configuration: identity, endpoints, neighbor overlay, and the
//! services deployed on the peer, loadable from a JSON document.
//!
//! Endpoints are backend-agnostic strings: socket addresses for the TCP
//! backend, plain labels for the simulator. A listen port of 0 asks the
//! TCP backend for an ephemeral port; the advertised endpoint is then
//! resolved from the actual binding at startup.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{ParameterSpec, PeerId, ServiceState, Value};
use crate::overlay::Neighbor;
use crate::repository::ServiceDefinition;

pub const DEFAULT_TTL: u32 = 8;
pub const DEFAULT_MAX_PLAN_LEN: usize = 5;
pub const DEFAULT_READVERTISE_PERIOD_MS: u64 = 30_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(String),
    #[error("malformed config document: {0}")]
    Malformed(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// One deployed service as declared in configuration. Behavior fields
/// mirror [`ServiceDefinition`]; `status` picks the initial activation
/// state, dormant by default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub name: String,
    #[serde(default)]
    pub version: u64,
    #[serde(default)]
    pub status: ServiceState,
    #[serde(default)]
    pub inputs: Vec<ParameterSpec>,
    pub outputs: Vec<ParameterSpec>,
    #[serde(default)]
    pub fixtures: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub delay_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
    #[serde(default)]
    pub injection_delay_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injection_fault: Option<String>,
}

impl ServiceConfig {
    /// Converts to a runtime definition. Fixture values must be scalars;
    /// an integer fixture declared for a decimal output is widened here,
    /// while any other mismatch is kept verbatim so scenarios can deploy
    /// deliberately ill-typed providers.
    pub fn to_definition(&self) -> Result<(ServiceDefinition, ServiceState), ConfigError> {
        let mut fixtures = BTreeMap::new();
        for (name, raw) in &self.fixtures {
            let value: Value = serde_json::from_value(raw.clone()).map_err(|_| {
                ConfigError::Invalid(format!(
                    "fixture {name:?} of service {:?} is not a scalar",
                    self.name
                ))
            })?;
            let value = match self.outputs.iter().find(|o| &o.name == name) {
                Some(spec) => value.normalize_for(spec.type_tag),
                None => value,
            };
            fixtures.insert(name.clone(), value);
        }
        let definition = ServiceDefinition {
            name: self.name.clone(),
            version: self.version,
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            fixtures,
            delay_ms: self.delay_ms,
            fault: self.fault.clone(),
            injection_delay_ms: self.injection_delay_ms,
            injection_fault: self.injection_fault.clone(),
        };
        definition
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok((definition, self.status))
    }
}

/// Full configuration of one peer.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeerConfig {
    pub peer_id: PeerId,
    /// Address or label to serve on.
    pub listen: String,
    /// Endpoint baked into advertised descriptors. Defaults to `listen`,
    /// or to the actually bound address when the TCP backend resolves an
    /// ephemeral port.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advertised_endpoint: Option<String>,
    #[serde(default = "default_ttl")]
    pub ttl: u32,
    #[serde(default = "default_max_plan_len")]
    pub max_plan_len: usize,
    #[serde(default = "default_readvertise_period_ms")]
    pub readvertise_period_ms: u64,
    #[serde(default)]
    pub neighbors: Vec<Neighbor>,
    #[serde(default)]
    pub services: Vec<ServiceConfig>,
}

fn default_ttl() -> u32 {
    DEFAULT_TTL
}

fn default_max_plan_len() -> usize {
    DEFAULT_MAX_PLAN_LEN
}

fn default_readvertise_period_ms() -> u64 {
    DEFAULT_READVERTISE_PERIOD_MS
}

impl PeerConfig {
    pub fn from_json(doc: &[u8]) -> Result<PeerConfig, ConfigError> {
        let config: PeerConfig =
            serde_json::from_slice(doc).map_err(|e| ConfigError::Malformed(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PeerConfig, ConfigError> {
        let path = path.as_ref();
        let doc = std::fs::read(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        PeerConfig::from_json(&doc)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check_endpoint("listen", &self.listen)?;
        if let Some(ep) = &self.advertised_endpoint {
            check_endpoint("advertised_endpoint", ep)?;
        }
        if self.max_plan_len == 0 {
            return Err(ConfigError::Invalid("max_plan_len must be at least 1".into()));
        }
        if self.readvertise_period_ms == 0 {
            return Err(ConfigError::Invalid(
                "readvertise_period_ms must be at least 1".into(),
            ));
        }

        let mut neighbor_ids = BTreeSet::new();
        for n in &self.neighbors {
            if n.id == self.peer_id {
                return Err(ConfigError::Invalid(format!(
                    "peer {} lists itself as a neighbor",
                    self.peer_id
                )));
            }
            if !neighbor_ids.insert(n.id.clone()) {
                return Err(ConfigError::Invalid(format!(
                    "neighbor {} listed twice",
                    n.id
                )));
            }
            check_endpoint(&format!("neighbor {}", n.id), &n.endpoint)?;
        }

        let mut service_names = BTreeSet::new();
        for s in &self.services {
            if !service_names.insert(s.name.clone()) {
                return Err(ConfigError::Invalid(format!(
                    "service {:?} declared twice",
                    s.name
                )));
            }
            s.to_definition()?;
        }
        Ok(())
    }

    /// The endpoint advertised in descriptors before any ephemeral-port
    /// resolution.
    pub fn advertised(&self) -> &str {
        self.advertised_endpoint.as_deref().unwrap_or(&self.listen)
    }

    /// Runtime definitions for every configured service.
    pub fn definitions(&self) -> Result<Vec<(ServiceDefinition, ServiceState)>, ConfigError> {
        self.services.iter().map(|s| s.to_definition()).collect()
    }
}

fn check_endpoint(what: &str, endpoint: &str) -> Result<(), ConfigError> {
    if endpoint.is_empty()
        || endpoint
            .chars()
            .any(|c| c.is_whitespace() || c.is_control())
    {
        return Err(ConfigError::Invalid(format!(
            "{what} endpoint {endpoint:?} must be a non-empty single token"
        )));
    }
    Ok(())
}
