//! Extraction of `# Name:` / `# Code:` / `# Space:` sections from model output.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub name: String,
    pub code: String,
    pub space_text: String,
    pub raw: String,
}

impl ParsedResponse {
    /// Rebuilds a canonical response document from the parsed fields.
    pub fn to_document(&self) -> String {
        format!(
            "# Name: {}\n# Code:\n```python\n{}\n```\n# Space:\n```python\n{}\n```\n",
            self.name, self.code, self.space_text
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Name,
    Code,
    Space,
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Section::Name => "name",
            Section::Code => "code",
            Section::Space => "space",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("response is missing the {0} section")]
    MissingSection(Section),
}

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^\s*(?:\*\*)?\s*#{1,4}\s*(?:\*\*)?\s*(name|code|configspace|configuration\s+space|space)\s*(?:\*\*)?\s*:\s*(?:\*\*)?(.*)$",
        )
        .expect("static regex")
    })
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Splits a response into sections and extracts name, code, and space.
///
/// Headers are only recognized outside fenced blocks, so comments inside
/// generated code never start a new section. Code and space take the first
/// fenced block of their section verbatim when one exists.
pub fn parse_response(raw: &str) -> Result<ParsedResponse, ParseError> {
    let mut sections: Vec<(Section, Vec<&str>)> = Vec::new();
    let mut in_fence = false;
    for line in raw.lines() {
        if !in_fence {
            if let Some(caps) = header_re().captures(line) {
                let keyword = caps[1].to_ascii_lowercase();
                let section = match keyword.as_str() {
                    "name" => Section::Name,
                    "code" => Section::Code,
                    _ => Section::Space,
                };
                let rest = caps.get(2).map_or("", |m| m.as_str());
                let mut body = Vec::new();
                if !rest.trim().is_empty() {
                    if is_fence(rest) {
                        in_fence = !in_fence;
                    }
                    body.push(rest);
                }
                sections.push((section, body));
                continue;
            }
        }
        if is_fence(line) {
            in_fence = !in_fence;
        }
        if let Some((_, body)) = sections.last_mut() {
            body.push(line);
        }
    }

    let first = |which: Section| -> Option<&Vec<&str>> {
        let mut found = sections.iter().filter(|(s, _)| *s == which);
        let body = found.next().map(|(_, b)| b);
        if found.next().is_some() {
            tracing::warn!(section = %which, "multiple sections in response, using the first");
        }
        body
    };

    let name = first(Section::Name)
        .and_then(|body| body.iter().map(|l| clean_name(l)).find(|l| !l.is_empty()))
        .ok_or(ParseError::MissingSection(Section::Name))?;
    let code = first(Section::Code)
        .map(|body| section_payload(body))
        .filter(|c| !c.trim().is_empty())
        .ok_or(ParseError::MissingSection(Section::Code))?;
    let space_text = first(Section::Space)
        .map(|body| section_payload(body))
        .filter(|c| !c.trim().is_empty())
        .ok_or(ParseError::MissingSection(Section::Space))?;

    Ok(ParsedResponse { name, code, space_text, raw: raw.to_string() })
}

fn clean_name(line: &str) -> String {
    line.trim()
        .trim_matches(|c: char| c == '*' || c == '`' || c == '"' || c == '\'')
        .trim()
        .to_string()
}

/// The first fenced block's contents, or the trimmed section text when the
/// section is not fenced.
fn section_payload(body: &[&str]) -> String {
    if let Some(open) = body.iter().position(|l| is_fence(l)) {
        let inner: Vec<&str> = body[open + 1..].iter().take_while(|l| !is_fence(l)).copied().collect();
        return inner.join("\n");
    }
    let text = body.join("\n");
    text.trim_matches('\n').trim_end().to_string()
}
