//! Parsing for `name:type` and `name:type=value` command line specs.

use peercompose::descriptor::{ParameterSpec, TypeTag, Value};
use peercompose::executor::ProvidedValue;

/// Parses a goal spec of the form `name:type`.
pub fn parse_goal(spec: &str) -> Result<ParameterSpec, String> {
    let (name, tag) = split_name_type(spec)?;
    Ok(ParameterSpec::new(name, tag))
}

/// Parses an input spec of the form `name:type=value`. The value part is
/// optional for callers that only plan (`allow_missing_value`), never for
/// execution.
pub fn parse_input(spec: &str, allow_missing_value: bool) -> Result<ProvidedValue, String> {
    match spec.split_once('=') {
        Some((head, literal)) => {
            let (name, tag) = split_name_type(head)?;
            let value = Value::parse_as(tag, literal)?;
            Ok(ProvidedValue {
                name: name.to_string(),
                type_tag: tag,
                value,
            })
        }
        None if allow_missing_value => {
            let (name, tag) = split_name_type(spec)?;
            Ok(ProvidedValue {
                name: name.to_string(),
                type_tag: tag,
                value: placeholder(tag),
            })
        }
        None => Err(format!("input spec {spec:?} is missing '=value'")),
    }
}

fn split_name_type(s: &str) -> Result<(&str, TypeTag), String> {
    let (name, tag) = s
        .split_once(':')
        .ok_or_else(|| format!("spec {s:?} is missing ':type'"))?;
    if name.is_empty() {
        return Err(format!("spec {s:?} has an empty name"));
    }
    let tag = TypeTag::parse(tag)
        .ok_or_else(|| format!("unknown type {tag:?} (expected string, int, decimal, or bool)"))?;
    Ok((name, tag))
}

/// Dummy value for plan-only inputs; planning looks at names and types
/// only.
fn placeholder(tag: TypeTag) -> Value {
    match tag {
        TypeTag::String => Value::Str(String::new()),
        TypeTag::Int => Value::Int(0),
        TypeTag::Decimal => Value::Decimal(0.0),
        TypeTag::Bool => Value::Bool(false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goal_specs_parse_name_and_type() {
        let g = parse_goal("stock:int").unwrap();
        assert_eq!(g.name, "stock");
        assert_eq!(g.type_tag, TypeTag::Int);
        assert!(parse_goal("stock").is_err());
        assert!(parse_goal(":int").is_err());
        assert!(parse_goal("stock:float").is_err());
    }

    #[test]
    fn input_specs_parse_typed_literals() {
        let i = parse_input("qty:int=2", false).unwrap();
        assert_eq!(i.value, Value::Int(2));
        let s = parse_input("brand:string=dell", false).unwrap();
        assert_eq!(s.value, Value::Str("dell".into()));
        let d = parse_input("rate:decimal=1.5", false).unwrap();
        assert_eq!(d.value, Value::Decimal(1.5));
        let b = parse_input("ready:bool=true", false).unwrap();
        assert_eq!(b.value, Value::Bool(true));
    }

    #[test]
    fn string_values_may_contain_separators() {
        let i = parse_input("note:string=a:b=c", false).unwrap();
        assert_eq!(i.value, Value::Str("a:b=c".into()));
    }

    #[test]
    fn bad_literals_are_rejected() {
        assert!(parse_input("qty:int=two", false).is_err());
        assert!(parse_input("ready:bool=yes", false).is_err());
        assert!(parse_input("qty:int", false).is_err());
    }

    #[test]
    fn plan_only_inputs_may_omit_the_value() {
        let i = parse_input("qty:int", true).unwrap();
        assert_eq!(i.name, "qty");
        assert_eq!(i.type_tag, TypeTag::Int);
    }
}
