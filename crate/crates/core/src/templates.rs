//! Versioned prompt template registry and context assembly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BUILTIN_REGISTRY: &str = include_str!("../templates/qlfr.toml");

pub const CONTEXT_SHORT_TEXT: &str = "context.short_text";
pub const SSE_IDENTIFY: &str = "sse.step1";
pub const SSE_RETRIEVE: &str = "sse.step2";
pub const SSE_REWRITE: &str = "sse.step3";
pub const SSE_CLASSIFY: &str = "sse.step4";
pub const DA_IDENTIFY: &str = "da.step1";
pub const DA_SUMMARIZE: &str = "da.step2";
pub const CLASSIFY_BARE: &str = "classify.bare";
pub const CLASSIFY_VERBOSE: &str = "classify.verbose";

/// Separator between context parts. A part already ending in a period only
/// gets the space, so "..." never doubles into "..".
pub const PART_SEPARATOR: &str = ". ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateRegistry {
    pub version: u32,
    templates: BTreeMap<String, String>,
}

impl TemplateRegistry {
    pub fn builtin() -> Self {
        Self::from_toml_str(BUILTIN_REGISTRY).expect("builtin registry parses")
    }

    pub fn from_toml_str(content: &str) -> Result<Self> {
        toml::from_str(content)
            .map_err(|e| Error::Config(format!("template registry: {}", e.message())))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&content).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Verbatim template text.
    pub fn get(&self, id: &str) -> Result<&str> {
        self.templates
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownTemplate(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    /// Fills `{name}` placeholders in one pass; substituted values are never
    /// re-scanned. A placeholder without a value is an error.
    pub fn render(&self, id: &str, vars: &[(&str, &str)]) -> Result<String> {
        let template = self.get(id)?;
        let mut out = String::with_capacity(template.len());
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close)
                    if !after[..close].is_empty()
                        && after[..close]
                            .chars()
                            .all(|c| c.is_ascii_alphanumeric() || c == '_') =>
                {
                    let name = &after[..close];
                    let value = vars
                        .iter()
                        .find(|(k, _)| *k == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| {
                            Error::InvalidArgument(format!(
                                "template {id:?} needs a value for {{{name}}}"
                            ))
                        })?;
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                _ => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }

    /// `Given the short text '<text>'`
    pub fn short_text_context(&self, text: &str) -> Result<String> {
        self.render(CONTEXT_SHORT_TEXT, &[("text", text)])
    }
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Joins context parts with [`PART_SEPARATOR`], collapsing the period when a
/// part already ends with one. The result always starts with the first part
/// unchanged, so each accumulated context is a prefix of the next.
pub fn join_parts<S: AsRef<str>>(parts: &[S]) -> String {
    let mut out = String::new();
    for (i, part) in parts.iter().enumerate() {
        let part = part.as_ref();
        if i > 0 {
            if out.ends_with('.') {
                out.push(' ');
            } else {
                out.push_str(PART_SEPARATOR);
            }
        }
        out.push_str(part);
    }
    out
}

/// Context plus instruction for one reasoning step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedStep {
    pub context: String,
    pub instruction: String,
}

impl RenderedStep {
    /// The text sent to the model: context ⊕ instruction.
    pub fn prompt(&self) -> String {
        if self.context.is_empty() {
            self.instruction.clone()
        } else {
            join_parts(&[self.context.as_str(), self.instruction.as_str()])
        }
    }
}

pub fn render_step<S: AsRef<str>>(
    registry: &TemplateRegistry,
    template_id: &str,
    context_parts: &[S],
    vars: &[(&str, &str)],
) -> Result<RenderedStep> {
    if context_parts.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "step {template_id:?} needs at least one context part"
        )));
    }
    let instruction = registry.render(template_id, vars)?;
    Ok(RenderedStep {
        context: join_parts(context_parts),
        instruction,
    })
}

/// `'a', 'b' and 'c'`
pub fn quoted_list<S: AsRef<str>>(items: &[S]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| format!("'{}'", s.as_ref())).collect();
    and_list(&quoted)
}

/// `a, b and c`
pub fn and_list<S: AsRef<str>>(items: &[S]) -> String {
    match items {
        [] => String::new(),
        [only] => only.as_ref().to_string(),
        [init @ .., last] => {
            let head: Vec<&str> = init.iter().map(AsRef::as_ref).collect();
            format!("{} and {}", head.join(", "), last.as_ref())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_registry_has_every_step() {
        let reg = TemplateRegistry::builtin();
        for id in [
            CONTEXT_SHORT_TEXT,
            SSE_IDENTIFY,
            SSE_RETRIEVE,
            SSE_REWRITE,
            SSE_CLASSIFY,
            DA_IDENTIFY,
            DA_SUMMARIZE,
            CLASSIFY_BARE,
            CLASSIFY_VERBOSE,
        ] {
            assert!(reg.get(id).is_ok(), "{id}");
        }
        assert!(matches!(
            reg.get("sse.step9"),
            Err(Error::UnknownTemplate(_))
        ));
    }

    #[test]
    fn step_templates_match_the_method_wording() {
        let reg = TemplateRegistry::builtin();
        let s1 = render_step(
            &reg,
            SSE_IDENTIFY,
            &["Given the short text 'Del Potro says make French Open'"],
            &[],
        )
        .unwrap();
        assert!(s1.instruction.contains("identify key concepts"));
        assert_eq!(
            s1.prompt(),
            "Given the short text 'Del Potro says make French Open'. identify key concepts."
        );

        let s3 = render_step(&reg, SSE_REWRITE, &["C12", "S"], &[]).unwrap();
        assert!(s3.instruction.contains("Refine and enhance the language"));
        assert_eq!(s3.context, "C12. S");

        let d2 = render_step(
            &reg,
            DA_SUMMARIZE,
            &["C21", "K2"],
            &[("synthesis_cue", "their interrelations")],
        )
        .unwrap();
        assert!(d2
            .instruction
            .contains("Provide a summary of the identified components"));
    }

    #[test]
    fn join_collapses_periods() {
        assert_eq!(join_parts(&["a", "b"]), "a. b");
        assert_eq!(join_parts(&["a.", "b"]), "a. b");
        assert_eq!(join_parts(&["a", ""]), "a. ");
        assert_eq!(join_parts(&["only"]), "only");
    }

    #[test]
    fn render_is_single_pass() {
        let reg = TemplateRegistry::from_toml_str(
            "version = 1\n[templates]\nt = \"x {a} {b} {not closed\"\n",
        )
        .unwrap();
        assert_eq!(
            reg.render("t", &[("a", "{b}"), ("b", "B")]).unwrap(),
            "x {b} B {not closed"
        );
        assert!(reg.render("t", &[("a", "1")]).is_err());
    }

    #[test]
    fn unknown_registry_keys_rejected() {
        assert!(TemplateRegistry::from_toml_str("version = 1\nextra = 2\n[templates]\n").is_err());
    }

    #[test]
    fn list_formatting() {
        assert_eq!(quoted_list(&["a"]), "'a'");
        assert_eq!(quoted_list(&["a", "b"]), "'a' and 'b'");
        assert_eq!(and_list(&["a", "b", "c"]), "a, b and c");
    }
}
