//! The shipped prompt catalog. Template text and response schemas live in
//! `prompts/` and are compiled in; bump a template's version whenever its
//! wording or schema changes so old fixtures stop matching.

use std::collections::BTreeMap;

use super::template::PromptTemplate;
use super::GatewayError;

macro_rules! entry {
    ($id:literal, $version:literal) => {
        (
            $id,
            $version,
            include_str!(concat!("../../prompts/", $id, ".txt")),
            include_str!(concat!("../../prompts/", $id, ".schema.json")),
        )
    };
}

const SHIPPED: &[(&str, u32, &str, &str)] = &[
    entry!("simplify_plot", 1),
    entry!("resolve_pronouns", 1),
    entry!("refine_entities", 1),
    entry!("agent1_thread_cues", 1),
    entry!("agent2_anthology", 1),
    entry!("agent3_serial", 1),
    entry!("agent4_overlap", 1),
    entry!("agent5_dedup", 1),
    entry!("agent6_enhance", 1),
    entry!("agent7_verify", 1),
    entry!("agent8_roles", 1),
    entry!("agent9_final_review", 1),
    entry!("same_storyline", 1),
];

pub mod ids {
    pub const SIMPLIFY_PLOT: &str = "simplify_plot";
    pub const RESOLVE_PRONOUNS: &str = "resolve_pronouns";
    pub const REFINE_ENTITIES: &str = "refine_entities";
    pub const AGENT1_THREAD_CUES: &str = "agent1_thread_cues";
    pub const AGENT2_ANTHOLOGY: &str = "agent2_anthology";
    pub const AGENT3_SERIAL: &str = "agent3_serial";
    pub const AGENT4_OVERLAP: &str = "agent4_overlap";
    pub const AGENT5_DEDUP: &str = "agent5_dedup";
    pub const AGENT6_ENHANCE: &str = "agent6_enhance";
    pub const AGENT7_VERIFY: &str = "agent7_verify";
    pub const AGENT8_ROLES: &str = "agent8_roles";
    pub const AGENT9_FINAL_REVIEW: &str = "agent9_final_review";
    pub const SAME_STORYLINE: &str = "same_storyline";
}

#[derive(Debug, Clone)]
pub struct PromptCatalog {
    templates: BTreeMap<String, PromptTemplate>,
}

impl PromptCatalog {
    pub fn shipped() -> Self {
        let mut templates = BTreeMap::new();
        for (id, version, text, schema) in SHIPPED {
            let schema = serde_json::from_str(schema)
                .unwrap_or_else(|e| panic!("prompts/{id}.schema.json: {e}"));
            let t = PromptTemplate::new(*id, *version, text.trim_end(), schema)
                .unwrap_or_else(|e| panic!("prompts/{id}.txt: {e}"));
            templates.insert(id.to_string(), t);
        }
        Self { templates }
    }

    pub fn from_templates(templates: impl IntoIterator<Item = PromptTemplate>) -> Self {
        Self {
            templates: templates
                .into_iter()
                .map(|t| (t.template_id.clone(), t))
                .collect(),
        }
    }

    pub fn get(&self, template_id: &str) -> Result<&PromptTemplate, GatewayError> {
        self.templates
            .get(template_id)
            .ok_or_else(|| GatewayError::UnknownTemplate(template_id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

impl Default for PromptCatalog {
    fn default() -> Self {
        Self::shipped()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_catalog_loads() {
        let c = PromptCatalog::shipped();
        assert_eq!(c.len(), 13);
        assert_eq!(
            c.get(ids::AGENT6_ENHANCE).unwrap().placeholders().into_iter().collect::<Vec<_>>(),
            vec!["arc_type", "characters", "description", "notes", "plot", "title"]
        );
        assert!(matches!(c.get("nope"), Err(GatewayError::UnknownTemplate(_))));
    }
}
