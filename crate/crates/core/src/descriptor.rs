//! Service descriptors, parameter schemas, advertisements, and their
//! canonical serialized form.
//!
//! A descriptor is the typed input/output schema a peer publishes for one
//! service, together with its activation status. Descriptors travel inside
//! advertisements and are stored in peer registries, so their encoding is
//! canonical: object keys sorted, no insignificant whitespace, UTF-8,
//! lowercase enum strings. Identical descriptors always produce
//! byte-identical documents.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from decoding or validating descriptor documents.
#[derive(Debug, Error)]
pub enum DescriptorError {
    /// The byte sequence is not a well-formed document.
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    /// The document parses but violates a descriptor invariant.
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

/// Returns true if `s` is a valid service or parameter identifier:
/// `[a-z][a-z0-9_]*`.
pub fn is_valid_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Returns true if `s` is a valid peer identifier: `[a-z][a-z0-9_-]*`.
pub fn is_valid_peer_id(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-')
}

/// Scalar type of a service parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TypeTag {
    String,
    Int,
    Decimal,
    Bool,
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TypeTag::String => "string",
            TypeTag::Int => "int",
            TypeTag::Decimal => "decimal",
            TypeTag::Bool => "bool",
        };
        f.write_str(s)
    }
}

impl TypeTag {
    /// Parses one of the four lowercase tag names.
    pub fn parse(s: &str) -> Option<TypeTag> {
        match s {
            "string" => Some(TypeTag::String),
            "int" => Some(TypeTag::Int),
            "decimal" => Some(TypeTag::Decimal),
            "bool" => Some(TypeTag::Bool),
            _ => None,
        }
    }
}

/// A named, typed service parameter.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub type_tag: TypeTag,
}

impl ParameterSpec {
    pub fn new(name: impl Into<String>, type_tag: TypeTag) -> ParameterSpec {
        ParameterSpec {
            name: name.into(),
            type_tag,
        }
    }

    fn validate(&self) -> Result<(), DescriptorError> {
        if !is_valid_identifier(&self.name) {
            return Err(DescriptorError::SchemaViolation(format!(
                "invalid parameter name {:?}",
                self.name
            )));
        }
        Ok(())
    }
}

impl fmt::Display for ParameterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name, self.type_tag)
    }
}

/// Activation status of a service. `Deactivated < Activated` so that
/// activation is a monotone step.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "lowercase")]
pub enum ServiceState {
    #[default]
    Deactivated,
    Activated,
}

impl fmt::Display for ServiceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ServiceState::Deactivated => f.write_str("deactivated"),
            ServiceState::Activated => f.write_str("activated"),
        }
    }
}

/// Identifier of a peer, unique within a network.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PeerId(String);

impl PeerId {
    pub fn new(id: impl Into<String>) -> Result<PeerId, DescriptorError> {
        let id = id.into();
        if !is_valid_peer_id(&id) {
            return Err(DescriptorError::SchemaViolation(format!(
                "invalid peer id {:?}",
                id
            )));
        }
        Ok(PeerId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for PeerId {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        PeerId::new(value).map_err(|e| e.to_string())
    }
}

impl From<PeerId> for String {
    fn from(id: PeerId) -> String {
        id.0
    }
}

/// A runtime parameter value, tagged with its scalar type.
///
/// JSON mapping is untagged: strings, integers, non-integral numbers, and
/// booleans map to `Str`, `Int`, `Decimal`, and `Bool` respectively. An
/// integer literal intended for a decimal parameter is normalized with
/// [`Value::normalize_for`] wherever the expected tag is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Decimal(f64),
    Str(String),
}

impl Value {
    /// The type tag this value conforms to.
    pub fn type_tag(&self) -> TypeTag {
        match self {
            Value::Bool(_) => TypeTag::Bool,
            Value::Int(_) => TypeTag::Int,
            Value::Decimal(_) => TypeTag::Decimal,
            Value::Str(_) => TypeTag::String,
        }
    }

    /// Widens an integer literal to decimal when the expected tag calls for
    /// it. All other combinations are returned unchanged; conformance is
    /// still checked separately.
    pub fn normalize_for(self, expected: TypeTag) -> Value {
        match (self, expected) {
            (Value::Int(i), TypeTag::Decimal) => Value::Decimal(i as f64),
            (v, _) => v,
        }
    }

    /// Parses a literal as the given tag, as written on a command line.
    pub fn parse_as(tag: TypeTag, literal: &str) -> Result<Value, String> {
        match tag {
            TypeTag::String => Ok(Value::Str(literal.to_string())),
            TypeTag::Int => literal
                .parse::<i64>()
                .map(Value::Int)
                .map_err(|e| format!("invalid int literal {literal:?}: {e}")),
            TypeTag::Decimal => {
                let v = literal
                    .parse::<f64>()
                    .map_err(|e| format!("invalid decimal literal {literal:?}: {e}"))?;
                if !v.is_finite() {
                    return Err(format!("non-finite decimal literal {literal:?}"));
                }
                Ok(Value::Decimal(v))
            }
            TypeTag::Bool => match literal {
                "true" => Ok(Value::Bool(true)),
                "false" => Ok(Value::Bool(false)),
                _ => Err(format!("invalid bool literal {literal:?}")),
            },
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Decimal(d) => write!(f, "{d:?}"),
            Value::Str(s) => write!(f, "{s}"),
        }
    }
}

/// The typed schema and status a peer publishes for one service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceDescriptor {
    pub service_name: String,
    pub version: u64,
    pub inputs: Vec<ParameterSpec>,
    pub outputs: Vec<ParameterSpec>,
    pub status: ServiceState,
    pub provider: PeerId,
    pub endpoint: String,
}

impl ServiceDescriptor {
    /// Checks all descriptor invariants: identifier syntax, parameter name
    /// uniqueness within each direction, and non-empty outputs.
    pub fn validate(&self) -> Result<(), DescriptorError> {
        validate_schema(&self.service_name, &self.inputs, &self.outputs)
    }
}

/// Shared schema checks for anything that declares a service interface:
/// identifier syntax, parameter name uniqueness within each direction,
/// and non-empty outputs.
pub fn validate_schema(
    service_name: &str,
    inputs: &[ParameterSpec],
    outputs: &[ParameterSpec],
) -> Result<(), DescriptorError> {
    if !is_valid_identifier(service_name) {
        return Err(DescriptorError::SchemaViolation(format!(
            "invalid service name {service_name:?}"
        )));
    }
    if outputs.is_empty() {
        return Err(DescriptorError::SchemaViolation(format!(
            "service {service_name:?} declares no outputs"
        )));
    }
    for (side, params) in [("input", inputs), ("output", outputs)] {
        let mut seen = BTreeSet::new();
        for p in params.iter() {
            p.validate()?;
            if !seen.insert(&p.name) {
                return Err(DescriptorError::SchemaViolation(format!(
                    "duplicate {side} parameter {:?} in service {service_name:?}",
                    p.name
                )));
            }
        }
    }
    Ok(())
}

/// A descriptor wrapped for gossip flooding: origin, per-origin sequence
/// number, and the remaining hop budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Advertisement {
    pub origin: PeerId,
    pub descriptor: ServiceDescriptor,
    pub seqno: u64,
    pub hops_remaining: u32,
}

impl Advertisement {
    pub fn new(
        descriptor: ServiceDescriptor,
        seqno: u64,
        hops_remaining: u32,
    ) -> Result<Advertisement, DescriptorError> {
        let ad = Advertisement {
            origin: descriptor.provider.clone(),
            descriptor,
            seqno,
            hops_remaining,
        };
        ad.validate()?;
        Ok(ad)
    }

    /// Checks that the wrapped descriptor is valid and advertised by its
    /// own provider.
    pub fn validate(&self) -> Result<(), DescriptorError> {
        self.descriptor.validate()?;
        if self.descriptor.provider != self.origin {
            return Err(DescriptorError::SchemaViolation(format!(
                "advertisement origin {} does not match descriptor provider {}",
                self.origin, self.descriptor.provider
            )));
        }
        Ok(())
    }

    /// Registry key for this advertisement.
    pub fn key(&self) -> (PeerId, String) {
        (self.origin.clone(), self.descriptor.service_name.clone())
    }
}

/// Serializes any serde value as a canonical document: object keys sorted,
/// no insignificant whitespace, UTF-8.
///
/// Sorting falls out of routing the value through `serde_json::Value`,
/// whose object map is ordered by key.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("value serializes to JSON");
    serde_json::to_vec(&v).expect("JSON value encodes")
}

/// Encodes a valid descriptor as its canonical document.
///
/// Identical descriptors produce byte-identical documents; distinct valid
/// descriptors produce distinct documents.
pub fn encode_descriptor(d: &ServiceDescriptor) -> Vec<u8> {
    to_canonical_json(d)
}

/// Decodes and validates a descriptor document.
pub fn decode_descriptor(doc: &[u8]) -> Result<ServiceDescriptor, DescriptorError> {
    // Two phases so syntax errors and invariant breaches stay distinct.
    let value: serde_json::Value = serde_json::from_slice(doc)
        .map_err(|e| DescriptorError::MalformedDocument(e.to_string()))?;
    let d: ServiceDescriptor = serde_json::from_value(value)
        .map_err(|e| DescriptorError::SchemaViolation(e.to_string()))?;
    d.validate()?;
    Ok(d)
}

/// Returns true iff every input of `d` is present in `available` with
/// identical name and type. Matching is exact; there is no coercion.
pub fn applicable(d: &ServiceDescriptor, available: &BTreeSet<ParameterSpec>) -> bool {
    d.inputs.iter().all(|p| available.contains(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn peer(id: &str) -> PeerId {
        PeerId::new(id).unwrap()
    }

    fn descriptor(
        name: &str,
        inputs: Vec<ParameterSpec>,
        outputs: Vec<ParameterSpec>,
        status: ServiceState,
    ) -> ServiceDescriptor {
        ServiceDescriptor {
            service_name: name.to_string(),
            version: 0,
            inputs,
            outputs,
            status,
            provider: peer("peer1"),
            endpoint: "127.0.0.1:7001".to_string(),
        }
    }

    #[test]
    fn noop_descriptor_encodes_canonically() {
        let d = descriptor(
            "noop",
            vec![],
            vec![ParameterSpec::new("done", TypeTag::Bool)],
            ServiceState::Deactivated,
        );
        let doc = String::from_utf8(encode_descriptor(&d)).unwrap();
        assert_eq!(
            doc,
            "{\"endpoint\":\"127.0.0.1:7001\",\"inputs\":[],\
             \"outputs\":[{\"name\":\"done\",\"type\":\"bool\"}],\
             \"provider\":\"peer1\",\"service_name\":\"noop\",\
             \"status\":\"deactivated\",\"version\":0}"
        );
    }

    #[test]
    fn pc_order_fixture_names_the_service() {
        let d = descriptor(
            "pc_order",
            vec![
                ParameterSpec::new("brand", TypeTag::String),
                ParameterSpec::new("qty", TypeTag::Int),
            ],
            vec![
                ParameterSpec::new("stock", TypeTag::Int),
                ParameterSpec::new("delivery_date", TypeTag::String),
            ],
            ServiceState::Activated,
        );
        let doc = String::from_utf8(encode_descriptor(&d)).unwrap();
        assert!(doc.contains("\"service_name\":\"pc_order\""));
        assert!(doc.contains("\"status\":\"activated\""));
    }

    #[test]
    fn decode_rejects_duplicate_input_names() {
        let d = descriptor(
            "svc",
            vec![
                ParameterSpec::new("brand", TypeTag::String),
                ParameterSpec::new("brand", TypeTag::Int),
            ],
            vec![ParameterSpec::new("out", TypeTag::Int)],
            ServiceState::Activated,
        );
        let doc = to_canonical_json(&d);
        match decode_descriptor(&doc) {
            Err(DescriptorError::SchemaViolation(msg)) => assert!(msg.contains("brand")),
            other => panic!("expected SchemaViolation, got {other:?}"),
        }
    }

    #[test]
    fn decode_rejects_truncated_document() {
        let d = descriptor(
            "svc",
            vec![],
            vec![ParameterSpec::new("out", TypeTag::Int)],
            ServiceState::Activated,
        );
        let mut doc = encode_descriptor(&d);
        doc.truncate(doc.len() / 2);
        assert!(matches!(
            decode_descriptor(&doc),
            Err(DescriptorError::MalformedDocument(_))
        ));
    }

    #[test]
    fn decode_rejects_unknown_type_tag() {
        let doc = br#"{"endpoint":"h:1","inputs":[{"name":"a","type":"blob"}],"outputs":[{"name":"b","type":"int"}],"provider":"peer1","service_name":"svc","status":"activated","version":0}"#;
        assert!(matches!(
            decode_descriptor(doc),
            Err(DescriptorError::SchemaViolation(_))
        ));
    }

    #[test]
    fn decode_rejects_empty_outputs() {
        let doc = br#"{"endpoint":"h:1","inputs":[],"outputs":[],"provider":"peer1","service_name":"svc","status":"activated","version":0}"#;
        assert!(matches!(
            decode_descriptor(doc),
            Err(DescriptorError::SchemaViolation(_))
        ));
    }

    #[test]
    fn applicable_empty_inputs_is_vacuous() {
        let d = descriptor(
            "svc",
            vec![],
            vec![ParameterSpec::new("out", TypeTag::Int)],
            ServiceState::Activated,
        );
        assert!(applicable(&d, &BTreeSet::new()));
    }

    #[test]
    fn applicable_requires_exact_type_match() {
        let d = descriptor(
            "svc",
            vec![ParameterSpec::new("brand", TypeTag::String)],
            vec![ParameterSpec::new("out", TypeTag::Int)],
            ServiceState::Activated,
        );
        let mut available = BTreeSet::new();
        available.insert(ParameterSpec::new("brand", TypeTag::Int));
        assert!(!applicable(&d, &available));
        available.insert(ParameterSpec::new("brand", TypeTag::String));
        assert!(applicable(&d, &available));
    }

    #[test]
    fn state_ordering_is_monotone() {
        assert!(ServiceState::Deactivated < ServiceState::Activated);
    }

    #[test]
    fn identifier_syntax() {
        assert!(is_valid_identifier("pc_order2"));
        assert!(!is_valid_identifier("PcOrder"));
        assert!(!is_valid_identifier("2pc"));
        assert!(!is_valid_identifier(""));
        assert!(is_valid_peer_id("peer-1"));
        assert!(!is_valid_identifier("peer-1"));
    }

    #[test]
    fn peer_id_rejects_bad_syntax() {
        assert!(PeerId::new("Peer1").is_err());
        assert!(PeerId::new("").is_err());
        assert!(PeerId::new("p1").is_ok());
    }

    #[test]
    fn advertisement_requires_origin_to_match_provider() {
        let d = descriptor(
            "svc",
            vec![],
            vec![ParameterSpec::new("out", TypeTag::Int)],
            ServiceState::Activated,
        );
        let mut ad = Advertisement::new(d, 1, 4).unwrap();
        ad.origin = peer("peer2");
        assert!(ad.validate().is_err());
    }

    #[test]
    fn value_normalization_widens_int_to_decimal() {
        assert_eq!(
            Value::Int(5).normalize_for(TypeTag::Decimal),
            Value::Decimal(5.0)
        );
        assert_eq!(Value::Int(5).normalize_for(TypeTag::Int), Value::Int(5));
        assert_eq!(
            Value::Str("x".into()).normalize_for(TypeTag::Decimal),
            Value::Str("x".into())
        );
    }

    // -- randomized properties ----------------------------------------------

    prop_compose! {
        fn arb_identifier()(first in "[a-z]", rest in "[a-z0-9_]{0,6}") -> String {
            format!("{first}{rest}")
        }
    }

    fn arb_type_tag() -> impl Strategy<Value = TypeTag> {
        prop_oneof![
            Just(TypeTag::String),
            Just(TypeTag::Int),
            Just(TypeTag::Decimal),
            Just(TypeTag::Bool),
        ]
    }

    prop_compose! {
        fn arb_param()(name in arb_identifier(), tag in arb_type_tag()) -> ParameterSpec {
            ParameterSpec::new(name, tag)
        }
    }

    fn dedup_params(params: Vec<ParameterSpec>) -> Vec<ParameterSpec> {
        let mut seen = BTreeSet::new();
        params
            .into_iter()
            .filter(|p| seen.insert(p.name.clone()))
            .collect()
    }

    prop_compose! {
        fn arb_descriptor()(
            name in arb_identifier(),
            version in 0u64..10,
            inputs in proptest::collection::vec(arb_param(), 0..4),
            outputs in proptest::collection::vec(arb_param(), 1..4),
            activated in any::<bool>(),
            peer_n in 1u8..4,
            port in 1u16..60000,
        ) -> ServiceDescriptor {
            let outputs = dedup_params(outputs);
            let outputs = if outputs.is_empty() {
                vec![ParameterSpec::new("out", TypeTag::Bool)]
            } else {
                outputs
            };
            ServiceDescriptor {
                service_name: name,
                version,
                inputs: dedup_params(inputs),
                outputs,
                status: if activated { ServiceState::Activated } else { ServiceState::Deactivated },
                provider: PeerId::new(format!("peer{peer_n}")).unwrap(),
                endpoint: format!("127.0.0.1:{port}"),
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn encode_decode_round_trip(d in arb_descriptor()) {
            let decoded = decode_descriptor(&encode_descriptor(&d)).unwrap();
            prop_assert_eq!(decoded, d);
        }

        #[test]
        fn encoding_is_injective(d1 in arb_descriptor(), d2 in arb_descriptor()) {
            if d1 != d2 {
                prop_assert_ne!(encode_descriptor(&d1), encode_descriptor(&d2));
            }
        }

        #[test]
        fn applicable_matches_brute_force_subset_check(
            d in arb_descriptor(),
            available in proptest::collection::btree_set(arb_param(), 0..8),
        ) {
            let brute = d.inputs.iter().all(|input| {
                available
                    .iter()
                    .any(|a| a.name == input.name && a.type_tag == input.type_tag)
            });
            prop_assert_eq!(applicable(&d, &available), brute);
        }

        #[test]
        fn applicable_is_monotone_in_available(
            d in arb_descriptor(),
            available in proptest::collection::btree_set(arb_param(), 0..8),
            extra in proptest::collection::btree_set(arb_param(), 0..4),
        ) {
            let before = applicable(&d, &available);
            let mut larger = available.clone();
            larger.extend(extra);
            if before {
                prop_assert!(applicable(&d, &larger));
            }
        }
    }
}
