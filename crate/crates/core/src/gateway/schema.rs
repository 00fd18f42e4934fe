//! Structural validation for LLM responses.
//!
//! Supports the subset of JSON Schema the prompt catalog uses: `type`
//! (single or list), `properties`, `required`, `additionalProperties`
//! (boolean), `items`, `enum`, `const`, `minItems`, `maxItems`,
//! `minLength`, `minimum` and `maximum`.

use std::collections::BTreeMap;
use std::fmt;

use serde_json::Value;

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_empty() { "/" } else { &self.path };
        write!(f, "{path}: {}", self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum JsonType {
    Object,
    Array,
    String,
    Integer,
    Number,
    Boolean,
    Null,
}

impl JsonType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "object" => JsonType::Object,
            "array" => JsonType::Array,
            "string" => JsonType::String,
            "integer" => JsonType::Integer,
            "number" => JsonType::Number,
            "boolean" => JsonType::Boolean,
            "null" => JsonType::Null,
            _ => return None,
        })
    }

    fn matches(&self, v: &Value) -> bool {
        match self {
            JsonType::Object => v.is_object(),
            JsonType::Array => v.is_array(),
            JsonType::String => v.is_string(),
            JsonType::Integer => v.is_i64() || v.is_u64(),
            JsonType::Number => v.is_number(),
            JsonType::Boolean => v.is_boolean(),
            JsonType::Null => v.is_null(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Schema {
    types: Vec<JsonType>,
    properties: BTreeMap<String, Schema>,
    required: Vec<String>,
    additional_properties: bool,
    items: Option<Box<Schema>>,
    enumeration: Option<Vec<Value>>,
    min_items: Option<usize>,
    max_items: Option<usize>,
    min_length: Option<usize>,
    minimum: Option<f64>,
    maximum: Option<f64>,
}

impl Schema {
    pub fn parse(v: &Value) -> Result<Self, String> {
        let obj = v.as_object().ok_or("schema must be an object")?;
        let mut s = Schema {
            additional_properties: true,
            ..Default::default()
        };
        match obj.get("type") {
            None => {}
            Some(Value::String(t)) => {
                s.types.push(JsonType::parse(t).ok_or(format!("unknown type {t:?}"))?)
            }
            Some(Value::Array(ts)) => {
                for t in ts {
                    let t = t.as_str().ok_or("type list must hold strings")?;
                    s.types.push(JsonType::parse(t).ok_or(format!("unknown type {t:?}"))?);
                }
            }
            Some(_) => return Err("type must be a string or list".into()),
        }
        if let Some(props) = obj.get("properties") {
            let props = props.as_object().ok_or("properties must be an object")?;
            for (k, sub) in props {
                s.properties.insert(k.clone(), Schema::parse(sub)?);
            }
        }
        if let Some(req) = obj.get("required") {
            let req = req.as_array().ok_or("required must be a list")?;
            for r in req {
                s.required
                    .push(r.as_str().ok_or("required entries must be strings")?.to_string());
            }
        }
        if let Some(ap) = obj.get("additionalProperties") {
            s.additional_properties = ap
                .as_bool()
                .ok_or("additionalProperties must be a boolean")?;
        }
        if let Some(items) = obj.get("items") {
            s.items = Some(Box::new(Schema::parse(items)?));
        }
        if let Some(e) = obj.get("enum") {
            s.enumeration = Some(e.as_array().ok_or("enum must be a list")?.clone());
        }
        if let Some(c) = obj.get("const") {
            s.enumeration = Some(vec![c.clone()]);
        }
        let count = |key: &str| -> Result<Option<usize>, String> {
            obj.get(key)
                .map(|v| v.as_u64().map(|n| n as usize).ok_or(format!("{key} must be a count")))
                .transpose()
        };
        s.min_items = count("minItems")?;
        s.max_items = count("maxItems")?;
        s.min_length = count("minLength")?;
        s.minimum = obj.get("minimum").and_then(Value::as_f64);
        s.maximum = obj.get("maximum").and_then(Value::as_f64);
        Ok(s)
    }

    pub fn validate(&self, v: &Value) -> Result<(), Vec<SchemaError>> {
        let mut errors = Vec::new();
        self.check(v, "", &mut errors);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    fn check(&self, v: &Value, path: &str, errors: &mut Vec<SchemaError>) {
        let mut push = |message: String| {
            errors.push(SchemaError {
                path: path.to_string(),
                message,
            })
        };
        if !self.types.is_empty() && !self.types.iter().any(|t| t.matches(v)) {
            push(format!("expected type {:?}, got {}", self.types, type_name(v)));
            return;
        }
        if let Some(options) = &self.enumeration {
            if !options.contains(v) {
                push(format!("value {v} not in {}", Value::Array(options.clone())));
            }
        }
        match v {
            Value::Object(map) => {
                for r in &self.required {
                    if !map.contains_key(r) {
                        push(format!("missing required field {r:?}"));
                    }
                }
                for (k, val) in map {
                    match self.properties.get(k) {
                        Some(sub) => sub.check(val, &format!("{path}/{k}"), errors),
                        None if !self.additional_properties => errors.push(SchemaError {
                            path: path.to_string(),
                            message: format!("unexpected field {k:?}"),
                        }),
                        None => {}
                    }
                }
            }
            Value::Array(items) => {
                if let Some(min) = self.min_items {
                    if items.len() < min {
                        push(format!("expected at least {min} items, got {}", items.len()));
                    }
                }
                if let Some(max) = self.max_items {
                    if items.len() > max {
                        push(format!("expected at most {max} items, got {}", items.len()));
                    }
                }
                if let Some(sub) = &self.items {
                    for (i, item) in items.iter().enumerate() {
                        sub.check(item, &format!("{path}/{i}"), errors);
                    }
                }
            }
            Value::String(s) => {
                if let Some(min) = self.min_length {
                    if s.trim().chars().count() < min {
                        push(format!("string shorter than {min}"));
                    }
                }
            }
            Value::Number(n) => {
                let x = n.as_f64().unwrap_or(f64::NAN);
                if self.minimum.is_some_and(|m| x < m) {
                    push(format!("{x} below minimum"));
                }
                if self.maximum.is_some_and(|m| x > m) {
                    push(format!("{x} above maximum"));
                }
            }
            _ => {}
        }
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn arcs_schema() -> Schema {
        Schema::parse(&json!({
            "type": "object",
            "required": ["arcs"],
            "additionalProperties": false,
            "properties": {
                "arcs": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["title", "arc_type"],
                        "properties": {
                            "title": {"type": "string", "minLength": 1},
                            "arc_type": {"const": "Anthology"},
                            "rank": {"type": "integer", "minimum": 0}
                        }
                    }
                }
            }
        }))
        .unwrap()
    }

    #[test]
    fn accepts_conforming_value() {
        let v = json!({"arcs": [{"title": "Case", "arc_type": "Anthology", "rank": 1}]});
        assert!(arcs_schema().validate(&v).is_ok());
    }

    #[test]
    fn reports_paths_of_violations() {
        let v = json!({"arcs": [{"title": " ", "arc_type": "Soap", "rank": -1}], "extra": 1});
        let errs = arcs_schema().validate(&v).unwrap_err();
        let paths: Vec<&str> = errs.iter().map(|e| e.path.as_str()).collect();
        assert!(paths.contains(&"/arcs/0/title"));
        assert!(paths.contains(&"/arcs/0/arc_type"));
        assert!(paths.contains(&"/arcs/0/rank"));
        assert!(paths.contains(&""));
    }

    #[test]
    fn missing_required_field() {
        let errs = arcs_schema().validate(&json!({})).unwrap_err();
        assert!(errs[0].message.contains("\"arcs\""));
    }

    #[test]
    fn nullable_types() {
        let s = Schema::parse(&json!({"type": ["object", "null"]})).unwrap();
        assert!(s.validate(&Value::Null).is_ok());
        assert!(s.validate(&json!(3)).is_err());
    }
}
