//! Prompt templates with `{name}` placeholders. `{{` and `}}` render as
//! literal braces.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;

use super::schema::Schema;
use super::GatewayError;

pub type Variables = BTreeMap<String, String>;

#[derive(Debug, Clone)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub template_id: String,
    pub version: u32,
    pub text: String,
    pub response_schema: Value,
    schema: Schema,
    pieces: Vec<Piece>,
}

impl PromptTemplate {
    pub fn new(
        template_id: impl Into<String>,
        version: u32,
        text: impl Into<String>,
        response_schema: Value,
    ) -> Result<Self, String> {
        let template_id = template_id.into();
        let text = text.into();
        let pieces = parse_pieces(&text).map_err(|e| format!("{template_id}: {e}"))?;
        let schema = Schema::parse(&response_schema).map_err(|e| format!("{template_id}: {e}"))?;
        Ok(Self {
            template_id,
            version,
            text,
            response_schema,
            schema,
            pieces,
        })
    }

    pub fn placeholders(&self) -> BTreeSet<&str> {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(name) => Some(name.as_str()),
                Piece::Text(_) => None,
            })
            .collect()
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    /// Strict substitution: every placeholder must be supplied and every
    /// supplied variable must be used.
    pub fn render(&self, vars: &Variables) -> Result<String, GatewayError> {
        let wanted = self.placeholders();
        if let Some(missing) = wanted.iter().find(|n| !vars.contains_key(**n)) {
            return Err(GatewayError::MissingVariable {
                template_id: self.template_id.clone(),
                name: missing.to_string(),
            });
        }
        if let Some(extra) = vars.keys().find(|k| !wanted.contains(k.as_str())) {
            return Err(GatewayError::UnusedVariable {
                template_id: self.template_id.clone(),
                name: extra.clone(),
            });
        }
        let mut out = String::with_capacity(self.text.len());
        for p in &self.pieces {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => out.push_str(&vars[name]),
            }
        }
        Ok(out)
    }
}

fn parse_pieces(text: &str) -> Result<Vec<Piece>, String> {
    let mut pieces = Vec::new();
    let mut buf = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                buf.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                buf.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(c) if c.is_ascii_alphanumeric() || c == '_' => name.push(c),
                        Some(c) => return Err(format!("invalid character {c:?} in placeholder")),
                        None => return Err("unterminated placeholder".into()),
                    }
                }
                if name.is_empty() {
                    return Err("empty placeholder".into());
                }
                if !buf.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut buf)));
                }
                pieces.push(Piece::Slot(name));
            }
            '}' => return Err("unmatched '}'".into()),
            c => buf.push(c),
        }
    }
    if !buf.is_empty() {
        pieces.push(Piece::Text(buf));
    }
    Ok(pieces)
}

/// Builds a [`Variables`] map from string pairs.
pub fn vars<const N: usize>(pairs: [(&str, String); N]) -> Variables {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn t(text: &str) -> PromptTemplate {
        PromptTemplate::new("t", 1, text, json!({})).unwrap()
    }

    #[test]
    fn substitutes_placeholders() {
        let out = t("Plot: {plot}").render(&vars([("plot", "X".into())])).unwrap();
        assert_eq!(out, "Plot: X");
    }

    #[test]
    fn missing_variable_names_placeholder() {
        let err = t("Plot: {plot}").render(&Variables::new()).unwrap_err();
        assert!(matches!(err, GatewayError::MissingVariable { ref name, .. } if name == "plot"));
    }

    #[test]
    fn unused_variable_is_rejected() {
        let err = t("Plot: {plot}")
            .render(&vars([("plot", "X".into()), ("extra", "Y".into())]))
            .unwrap_err();
        assert!(matches!(err, GatewayError::UnusedVariable { ref name, .. } if name == "extra"));
    }

    #[test]
    fn escaped_braces_are_literal() {
        let tpl = t("{{\"a\": {x}}}");
        assert_eq!(tpl.placeholders().len(), 1);
        assert_eq!(tpl.render(&vars([("x", "1".into())])).unwrap(), "{\"a\": 1}");
    }

    #[test]
    fn substituted_values_are_not_reparsed() {
        let out = t("{a}").render(&vars([("a", "{b}".into())])).unwrap();
        assert_eq!(out, "{b}");
    }

    #[test]
    fn malformed_templates_fail_to_load() {
        assert!(PromptTemplate::new("t", 1, "{oops", json!({})).is_err());
        assert!(PromptTemplate::new("t", 1, "a } b", json!({})).is_err());
        assert!(PromptTemplate::new("t", 1, "{}", json!({})).is_err());
    }
}
