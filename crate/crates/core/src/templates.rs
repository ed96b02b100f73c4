//! Prompt template assets and rendering.
//!
//! Templates are versioned text files compiled into the binary and keyed by
//! (template id, model family). Rendering follows `str.format` rules:
//! `{name}` is substituted, `{{` and `}}` produce literal braces.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const TEMPLATE_VERSION: &str = "v1";

/// Checksums of the template files, one `sha256  name` line per file.
pub const CHECKSUMS: &str = include_str!("../templates/v1/SHA256SUMS");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template {template}: placeholder `{name}` has no binding")]
    Unbound { template: String, name: String },
    #[error("template {template}: unbalanced `{brace}` at byte {offset}")]
    Unbalanced {
        template: String,
        brace: char,
        offset: usize,
    },
}

/// Prompt dialect. The coaxing variant adds sentences that push models with
/// weaker instruction following towards well-formed JSON.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    Standard,
    StrictJsonCoaxing,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 2] = [ModelFamily::Standard, ModelFamily::StrictJsonCoaxing];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelFamily::Standard => "standard",
            ModelFamily::StrictJsonCoaxing => "strict-json-coaxing",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown model family `{s}` (expected standard or strict-json-coaxing)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ActionSummary,
    ObjectSummary,
    Answerability,
    Qa,
    Reflection,
    OpenAnswerability,
    OpenQa,
    OpenJudge,
}

impl TemplateId {
    pub const ALL: [TemplateId; 8] = [
        TemplateId::ActionSummary,
        TemplateId::ObjectSummary,
        TemplateId::Answerability,
        TemplateId::Qa,
        TemplateId::Reflection,
        TemplateId::OpenAnswerability,
        TemplateId::OpenQa,
        TemplateId::OpenJudge,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateId::ActionSummary => "action_summary",
            TemplateId::ObjectSummary => "object_summary",
            TemplateId::Answerability => "answerability",
            TemplateId::Qa => "qa",
            TemplateId::Reflection => "reflection",
            TemplateId::OpenAnswerability => "open_answerability",
            TemplateId::OpenQa => "open_qa",
            TemplateId::OpenJudge => "open_judge",
        }
    }

    /// Whether the template ships a separate text per model family.
    pub fn is_family_specific(&self) -> bool {
        !matches!(
            self,
            TemplateId::OpenAnswerability | TemplateId::OpenQa | TemplateId::OpenJudge
        )
    }
}

macro_rules! asset {
    ($file:literal) => {
        ($file, include_str!(concat!("../templates/v1/", $file)))
    };
}

/// Every asset file with its name, in checksum-file order.
pub const ASSETS: [(&str, &str); 13] = [
    asset!("action_summary.standard.txt"),
    asset!("action_summary.strict-json-coaxing.txt"),
    asset!("answerability.standard.txt"),
    asset!("answerability.strict-json-coaxing.txt"),
    asset!("object_summary.standard.txt"),
    asset!("object_summary.strict-json-coaxing.txt"),
    asset!("open_answerability.txt"),
    asset!("open_judge.txt"),
    asset!("open_qa.txt"),
    asset!("qa.standard.txt"),
    asset!("qa.strict-json-coaxing.txt"),
    asset!("reflection.standard.txt"),
    asset!("reflection.strict-json-coaxing.txt"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub family: ModelFamily,
    pub body: &'static str,
}

impl PromptTemplate {
    pub fn file_name(id: TemplateId, family: ModelFamily) -> String {
        if id.is_family_specific() {
            format!("{}.{}.txt", id.as_str(), family.as_str())
        } else {
            format!("{}.txt", id.as_str())
        }
    }

    pub fn get(id: TemplateId, family: ModelFamily) -> Self {
        let name = Self::file_name(id, family);
        let body = ASSETS
            .iter()
            .find(|(file, _)| *file == name)
            .map(|(_, body)| *body)
            .expect("every template id has an asset");
        Self { id, family, body }
    }

    pub fn name(&self) -> String {
        format!("{}/{}", self.id.as_str(), self.family)
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Result<Vec<String>, TemplateError> {
        let mut names: Vec<String> = Vec::new();
        for piece in self.parse()? {
            if let Piece::Field(name) = piece {
                if !names.iter().any(|n| n == name) {
                    names.push(name.to_string());
                }
            }
        }
        Ok(names)
    }

    /// Substitute every placeholder. Extra bindings are ignored; a missing
    /// one is an error.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len() + 256);
        for piece in self.parse()? {
            match piece {
                Piece::Literal(s) => out.push_str(s),
                Piece::Brace(c) => out.push(c),
                Piece::Field(name) => {
                    let value = bindings
                        .iter()
                        .find(|(k, _)| *k == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| TemplateError::Unbound {
                            template: self.name(),
                            name: name.to_string(),
                        })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }

    fn parse(&self) -> Result<Vec<Piece<'static>>, TemplateError> {
        let body = self.body;
        let bytes = body.as_bytes();
        let mut pieces = Vec::new();
        let mut lit_start = 0;
        let mut i = 0;
        let unbalanced = |brace, offset| TemplateError::Unbalanced {
            template: self.name(),
            brace,
            offset,
        };
        while i < bytes.len() {
            match bytes[i] {
                b'{' | b'}' if bytes.get(i + 1) == Some(&bytes[i]) => {
                    pieces.push(Piece::Literal(&body[lit_start..i]));
                    pieces.push(Piece::Brace(bytes[i] as char));
                    i += 2;
                    lit_start = i;
                }
                b'{' => {
                    let close = body[i + 1..].find(['{', '}']).map(|p| p + i + 1);
                    match close {
                        Some(end) if bytes[end] == b'}' => {
                            pieces.push(Piece::Literal(&body[lit_start..i]));
                            pieces.push(Piece::Field(&body[i + 1..end]));
                            i = end + 1;
                            lit_start = i;
                        }
                        _ => return Err(unbalanced('{', i)),
                    }
                }
                b'}' => return Err(unbalanced('}', i)),
                _ => i += 1,
            }
        }
        pieces.push(Piece::Literal(&body[lit_start..]));
        Ok(pieces)
    }
}

enum Piece<'a> {
    Literal(&'a str),
    Brace(char),
    Field(&'a str),
}

/// Number words used in clip headers; falls back to digits.
pub fn number_word(n: usize) -> String {
    const WORDS: [&str; 21] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
        "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
    ];
    WORDS.get(n).map_or_else(|| n.to_string(), |w| w.to_string())
}
