//! Versioned prompt pack: every question and prompt template the pipeline sends.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUILTIN: &str = include_str!("../assets/prompt_pack.v1.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPack {
    #[serde(default = "builtin_version")]
    pub version: String,
    pub meta_question: String,
    pub attribute_questions: Vec<String>,
    /// Placeholders: `{g}`, `{attributes}`.
    pub name_reasoning_template: String,
    /// Placeholders: `{question}`, `{answers}`.
    #[serde(default = "builtin_consolidation")]
    pub consolidation_template: String,
    #[serde(default = "builtin_repair")]
    pub repair_instruction: String,
    /// Placeholders: `{m}`, `{classname}`, `{g}`, `{g_plural}`.
    #[serde(default = "builtin_context")]
    pub context_template: String,
}

fn builtin() -> PromptPack {
    serde_json::from_str(BUILTIN).expect("builtin prompt pack parses")
}

fn builtin_version() -> String {
    builtin().version
}
fn builtin_consolidation() -> String {
    builtin().consolidation_template
}
fn builtin_repair() -> String {
    builtin().repair_instruction
}
fn builtin_context() -> String {
    builtin().context_template
}

impl Default for PromptPack {
    fn default() -> Self {
        builtin()
    }
}

impl PromptPack {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let pack: PromptPack = serde_json::from_str(&text)?;
        pack.validate()?;
        Ok(pack)
    }

    pub fn validate(&self) -> Result<()> {
        let need = |template: &str, name: &str, slots: &[&str]| -> Result<()> {
            for slot in slots {
                if !template.contains(slot) {
                    return Err(Error::Config(format!("prompt pack {name} lacks {slot}")));
                }
            }
            Ok(())
        };
        if self.meta_question.trim().is_empty() {
            return Err(Error::Config("prompt pack meta_question is empty".into()));
        }
        need(&self.name_reasoning_template, "name_reasoning_template", &["{g}", "{attributes}"])?;
        need(&self.consolidation_template, "consolidation_template", &["{answers}"])?;
        need(&self.context_template, "context_template", &["{m}", "{classname}"])?;
        Ok(())
    }
}

/// Replace `{key}` slots in one pass; substituted text is never rescanned.
pub fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let key = &after[..close];
            slots.iter().find(|(k, _)| *k == key).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Naive English plural, enough for category nouns.
pub fn pluralize(noun: &str) -> String {
    let lower = noun.to_lowercase();
    if ["s", "x", "z", "ch", "sh"].iter().any(|s| lower.ends_with(s)) {
        return format!("{noun}es");
    }
    let mut chars = lower.chars().rev();
    if let (Some('y'), Some(prev)) = (chars.next(), chars.next()) {
        if !"aeiou".contains(prev) {
            return format!("{}ies", &noun[..noun.len() - 1]);
        }
    }
    format!("{noun}s")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_pack_is_valid() {
        let pack = PromptPack::default();
        pack.validate().unwrap();
        assert_eq!(pack.attribute_questions.len(), 5);
        assert_eq!(pack.version, "1");
    }

    #[test]
    fn fill_is_single_pass() {
        assert_eq!(fill("{a} and {b}", &[("a", "{b}"), ("b", "x")]), "{b} and x");
        assert_eq!(fill("keep {unknown} {a}", &[("a", "1")]), "keep {unknown} 1");
        assert_eq!(fill("open { brace", &[]), "open { brace");
    }

    #[test]
    fn plurals() {
        assert_eq!(pluralize("bird"), "birds");
        assert_eq!(pluralize("butterfly"), "butterflies");
        assert_eq!(pluralize("fox"), "foxes");
        assert_eq!(pluralize("toy"), "toys");
    }

    #[test]
    fn partial_pack_gets_defaults() {
        let json = r#"{"meta_question": "q?", "attribute_questions": [], "name_reasoning_template": "{g} {attributes}"}"#;
        let pack: PromptPack = serde_json::from_str(json).unwrap();
        pack.validate().unwrap();
        assert_eq!(pack.context_template, PromptPack::default().context_template);
    }

    #[test]
    fn missing_slot_rejected() {
        let pack = PromptPack {
            name_reasoning_template: "no slots".into(),
            ..Default::default()
        };
        assert!(pack.validate().is_err());
    }
}
