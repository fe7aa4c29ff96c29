//! Versioned prompt templates with `{{slot}}` placeholders.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;

use super::GatewayError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub version: String,
    pub slots: Vec<String>,
    pub body: String,
}

#[derive(Deserialize)]
struct Header {
    name: String,
    version: String,
    slots: Vec<String>,
}

const BUNDLED: &[&str] = &[
    include_str!("../../prompts/cluster_description.prompt"),
    include_str!("../../prompts/cluster_label.prompt"),
    include_str!("../../prompts/facilitator_question.prompt"),
    include_str!("../../prompts/issue_proposal.prompt"),
    include_str!("../../prompts/recommendation_synthesis.prompt"),
    include_str!("../../prompts/report_analytical.prompt"),
    include_str!("../../prompts/report_executive.prompt"),
    include_str!("../../prompts/report_narrative.prompt"),
    include_str!("../../prompts/speaker_positions.prompt"),
    include_str!("../../prompts/thematic_analysis.prompt"),
    include_str!("../../prompts/theme_question.prompt"),
    include_str!("../../prompts/working_issue.prompt"),
];

fn placeholders(body: &str) -> Vec<(usize, usize, &str)> {
    let mut out = Vec::new();
    let mut i = 0;
    while let Some(open) = body[i..].find("{{") {
        let start = i + open;
        let Some(close) = body[start + 2..].find("}}") else { break };
        let end = start + 2 + close + 2;
        out.push((start, end, body[start + 2..end - 2].trim()));
        i = end;
    }
    out
}

/// Bound values cannot introduce placeholders of their own.
fn escape_slot(value: &str) -> String {
    value.replace("{{", "{ {").replace("}}", "} }")
}

impl PromptTemplate {
    /// Parses `toml header`, a `---` line, then the body.
    pub fn parse(source: &str) -> Result<Self, GatewayError> {
        let (head, body) = source
            .split_once("\n---\n")
            .ok_or_else(|| GatewayError::Template("missing '---' separator".into()))?;
        let header: Header = toml::from_str(head).map_err(|e| GatewayError::Template(e.to_string()))?;
        let semver_ok = header.version.split('.').count() == 3
            && header.version.split('.').all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_digit()));
        if !semver_ok {
            return Err(GatewayError::Template(format!("{}: version {} is not semver", header.name, header.version)));
        }
        let declared: BTreeSet<&str> = header.slots.iter().map(String::as_str).collect();
        let used: BTreeSet<&str> = placeholders(body).into_iter().map(|(_, _, s)| s).collect();
        if declared != used {
            return Err(GatewayError::Template(format!(
                "{}: declared slots {:?} differ from placeholders {:?}",
                header.name, declared, used
            )));
        }
        Ok(Self { name: header.name, version: header.version, slots: header.slots, body: body.to_string() })
    }

    pub fn versioned_name(&self) -> String {
        format!("{}@{}", self.name, self.version)
    }

    /// Single-pass substitution. Every declared slot must be bound and no
    /// unknown binding is accepted.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String, GatewayError> {
        for slot in &self.slots {
            if !bindings.contains_key(slot) {
                return Err(GatewayError::UnboundSlot(slot.clone()));
            }
        }
        if let Some(extra) = bindings.keys().find(|k| !self.slots.contains(k)) {
            return Err(GatewayError::UnknownSlot(extra.clone()));
        }
        let mut out = String::with_capacity(self.body.len());
        let mut last = 0;
        for (start, end, slot) in placeholders(&self.body) {
            out.push_str(&self.body[last..start]);
            out.push_str(&escape_slot(&bindings[slot]));
            last = end;
        }
        out.push_str(&self.body[last..]);
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateSet {
    pub fn bundled() -> Self {
        let templates = BUNDLED
            .iter()
            .map(|src| {
                let t = PromptTemplate::parse(src).expect("bundled templates are valid");
                (t.name.clone(), t)
            })
            .collect();
        Self { templates }
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, GatewayError> {
        self.templates.get(name).ok_or_else(|| GatewayError::UnknownTemplate(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

pub fn bindings<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_set_loads() {
        let set = TemplateSet::bundled();
        assert_eq!(set.names().count(), BUNDLED.len());
        assert_eq!(set.get("cluster_label").unwrap().versioned_name(), "cluster_label@1.0.0");
    }

    #[test]
    fn unbound_slot_fails() {
        let set = TemplateSet::bundled();
        let t = set.get("speaker_positions").unwrap();
        let err = t.render(&bindings([("speaker", "A".into())])).unwrap_err();
        assert_eq!(err, GatewayError::UnboundSlot("text".into()));
    }

    #[test]
    fn slot_values_cannot_inject() {
        let t = PromptTemplate::parse("name = \"t\"\nversion = \"1.0.0\"\nslots = [\"a\", \"b\"]\n---\n{{a}}|{{b}}").unwrap();
        let out = t.render(&bindings([("a", "{{b}}".into()), ("b", "B".into())])).unwrap();
        assert_eq!(out, "{ {b} }|B");
    }

    #[test]
    fn header_must_match_body() {
        let err = PromptTemplate::parse("name = \"t\"\nversion = \"1.0.0\"\nslots = [\"a\"]\n---\n{{a}} {{b}}");
        assert!(matches!(err, Err(GatewayError::Template(_))));
        let err = PromptTemplate::parse("name = \"t\"\nversion = \"1.0\"\nslots = []\n---\nx");
        assert!(matches!(err, Err(GatewayError::Template(_))));
    }

    #[test]
    fn facilitator_template_takes_segment_aggregate_and_instruction() {
        let set = TemplateSet::bundled();
        let t = set.get("facilitator_question").unwrap();
        let out = t
            .render(&bindings([
                ("speaker", "Panelist 2".into()),
                ("segment", "Community-generated data can train fairer models.".into()),
                ("aggregate", "Disagree: 14 clicks (baseline 1.5)".into()),
                ("instruction", "Generate a clarifying question.".into()),
            ]))
            .unwrap();
        assert!(out.contains("Community-generated data can train fairer models."));
        assert!(out.contains("Disagree: 14 clicks"));
        assert!(out.contains("Generate a clarifying question."));
        assert!(out.contains("Panelist 2"));
    }
}
