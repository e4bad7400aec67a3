//! Prompt templates and their assembly.

use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::GridConfig;

pub const SYSTEM_TEMPLATE: &str = include_str!("../../prompts/system.txt");
pub const USER_TEMPLATE: &str = include_str!("../../prompts/user.txt");
pub const ICL_HOUSE: &str = include_str!("../../prompts/icl_house.txt");
pub const EDITING_TEMPLATE: &str = include_str!("../../prompts/editing.txt");
pub const CONTINUE_TEMPLATE: &str = include_str!("../../prompts/continue.txt");

/// Reply used by the `mock-house` backend: the complete house from the
/// in-context example, wrapped the way the user prompt asks for.
pub const MOCK_HOUSE_REPLY: &str = include_str!("../../prompts/mock_house.txt");

/// The chain-of-thought instructions dropped by [`PromptOptions::chain_of_thought`].
const COT_BLOCK: &str = "Think before you provide the x-y coordinates in <thinking> tags.\n\
First, think through what parts of the {concept} you want to sketch and the sketching order.\n\
Then, think about where the parts should be located on the grid.\n\
Finally, provide your response in <answer> tags, using your analysis.\n";
const NO_COT_REPLACEMENT: &str = "Provide your response in <answer> tags.\n";

const EDIT_PLACEHOLDER: &str = "<editing instruction>";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("prompt template {0} is missing")]
    TemplateMissing(String),
    #[error("unresolved placeholder {0} in prompt")]
    UnresolvedPlaceholder(String),
    #[error("concept must not be empty")]
    EmptyConcept,
    #[error("the user template has no chain-of-thought block to remove")]
    AblationNotApplicable,
}

/// The template texts. The bundled set matches the ones shipped in
/// `prompts/`; a directory with the same file names can replace them.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub system: String,
    pub user: String,
    pub icl: String,
    pub editing: String,
    pub continuation: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::bundled()
    }
}

impl PromptTemplates {
    pub fn bundled() -> Self {
        Self {
            system: SYSTEM_TEMPLATE.into(),
            user: USER_TEMPLATE.into(),
            icl: ICL_HOUSE.into(),
            editing: EDITING_TEMPLATE.into(),
            continuation: CONTINUE_TEMPLATE.into(),
        }
    }

    /// Load `system.txt`, `user.txt`, `icl_house.txt`, `editing.txt` and
    /// `continue.txt` from `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name))
                .map_err(|_| PromptError::TemplateMissing(dir.join(name).display().to_string()))
        };
        Ok(Self {
            system: read("system.txt")?,
            user: read("user.txt")?,
            icl: read("icl_house.txt")?,
            editing: read("editing.txt")?,
            continuation: read("continue.txt")?,
        })
    }
}

/// Ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptOptions {
    pub system_prompt: bool,
    pub chain_of_thought: bool,
    /// Replacement in-context example text.
    pub icl_example: Option<String>,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            system_prompt: true,
            chain_of_thought: true,
            icl_example: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: Option<String>,
    pub user: String,
    pub icl_examples: Vec<String>,
}

static PLACEHOLDER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{[A-Za-z_-]+\}").unwrap());

fn check_resolved(text: &str) -> Result<(), PromptError> {
    match PLACEHOLDER_RE.find(text) {
        Some(m) => Err(PromptError::UnresolvedPlaceholder(m.as_str().into())),
        None => Ok(()),
    }
}

/// Fill `{key}` placeholders and make sure none are left.
pub(crate) fn fill(template: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = template.to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    check_resolved(&out)?;
    Ok(out)
}

pub fn build_prompts(
    concept: &str,
    cfg: &GridConfig,
    options: &PromptOptions,
    templates: &PromptTemplates,
) -> Result<PromptBundle, PromptError> {
    let concept = concept.trim();
    if concept.is_empty() {
        return Err(PromptError::EmptyConcept);
    }
    let res = cfg.resolution.to_string();
    let icl = options.icl_example.clone().unwrap_or_else(|| templates.icl.clone());
    let icl = icl.trim_end().to_string();

    let system = if options.system_prompt {
        Some(fill(&templates.system, &[("res", &res)])?)
    } else {
        None
    };

    let mut user_template = templates.user.clone();
    if !options.chain_of_thought {
        if !user_template.contains(COT_BLOCK) {
            return Err(PromptError::AblationNotApplicable);
        }
        user_template = user_template.replace(COT_BLOCK, NO_COT_REPLACEMENT);
    }
    // Substitute the example last so braces inside it are never treated as
    // placeholders of the template.
    let user = fill(&user_template, &[("concept", concept), ("res", &res), ("gt-sketches", "\u{0}ICL\u{0}")])?
        .replace("\u{0}ICL\u{0}", &icl);

    Ok(PromptBundle {
        system,
        user,
        icl_examples: vec![icl],
    })
}

/// The chat-editing request for `instruction`.
pub fn editing_prompt(instruction: &str, templates: &PromptTemplates) -> String {
    let instruction = instruction.trim().trim_end_matches('.');
    templates.editing.trim_end().replace(EDIT_PLACEHOLDER, instruction)
}

/// The turn request for collaborative sketching: continue from stroke
/// `next` and stop after stroke `stop`.
pub fn continuation_prompt(
    concept: &str,
    next: usize,
    stop: usize,
    templates: &PromptTemplates,
) -> Result<String, PromptError> {
    fill(
        templates.continuation.trim_end(),
        &[("concept", concept), ("next", &next.to_string()), ("stop", &stop.to_string())],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(concept: &str, cfg: &GridConfig, options: &PromptOptions) -> PromptBundle {
        build_prompts(concept, cfg, options, &PromptTemplates::bundled()).unwrap()
    }

    #[test]
    fn shark_defaults() {
        let b = bundle("shark", &GridConfig::default(), &PromptOptions::default());
        let system = b.system.unwrap();
        assert!(system.starts_with("You are an expert artist specializing in drawing sketches"));
        assert!(system.contains("1 to 50"));
        assert!(system.contains("'x50y50' for column 50, row 50"));
        assert!(b.user.contains("sketch of a shark"));
        assert!(b.user.contains("<thinking> tags"));
        assert!(b.user.contains("<examples>\n<example>\nTo draw a house"));
        assert!(!b.user.contains('{'));
    }

    #[test]
    fn no_cot_ablation() {
        let opts = PromptOptions {
            chain_of_thought: false,
            ..PromptOptions::default()
        };
        let b = bundle("shark", &GridConfig::default(), &opts);
        assert!(!b.user.contains("in <thinking> tags"));
        assert!(b.user.contains("Provide your response in <answer> tags."));
    }

    #[test]
    fn no_system_and_custom_icl() {
        let opts = PromptOptions {
            system_prompt: false,
            icl_example: Some("<example>a {cat}</example>\n".into()),
            ..PromptOptions::default()
        };
        let b = bundle("cat", &GridConfig::default(), &opts);
        assert!(b.system.is_none());
        assert!(b.user.contains("<example>a {cat}</example>"));
        assert!(!b.user.contains("To draw a house"));
    }

    #[test]
    fn resolution_substitution() {
        let b = bundle("cat", &GridConfig::new(30, 20.0), &PromptOptions::default());
        let system = b.system.unwrap();
        assert!(system.contains("1 to 30"));
        assert!(!system.contains("{res}"));
    }

    #[test]
    fn errors() {
        let t = PromptTemplates::bundled();
        let cfg = GridConfig::default();
        assert_eq!(build_prompts("  ", &cfg, &PromptOptions::default(), &t), Err(PromptError::EmptyConcept));
        let broken = PromptTemplates {
            user: "draw a {concept} in {style}".into(),
            ..PromptTemplates::bundled()
        };
        assert_eq!(
            build_prompts("cat", &cfg, &PromptOptions::default(), &broken),
            Err(PromptError::UnresolvedPlaceholder("{style}".into()))
        );
        assert!(matches!(
            PromptTemplates::from_dir(Path::new("/nonexistent/prompts")),
            Err(PromptError::TemplateMissing(_))
        ));
    }

    #[test]
    fn editing_and_continuation_text() {
        let t = PromptTemplates::bundled();
        let e = editing_prompt("Add a hat", &t);
        assert!(e.starts_with("Add a hat. Describe the location of the added concepts first in <thinking> tags."));
        assert!(e.ends_with("Only provide the added strokes. Respond in the same format as before. Be concise."));
        let c = continuation_prompt("fish", 3, 4, &t).unwrap();
        assert!(c.contains("starting at <s3>"));
        assert!(c.contains("stop after </s4>"));
    }
}
