//! Pull a single field out of a free-form completion.
//!
//! Models asked for `{'confidence': X}` answer with prose, code fences,
//! Python-style single quotes, echoed `{{...}}` templates and sometimes more
//! than one object. The rules, in order:
//!
//! 1. Every balanced `{...}` span is a candidate. Candidates are tried from
//!    the one starting last to the one starting first, so a later object wins
//!    over an earlier one and an inner object over its enclosing one.
//! 2. A candidate is parsed leniently (single or double quotes, bare keys,
//!    `True`/`False`/`None`, trailing commas). The first candidate whose
//!    top-level keys contain `key` yields the value. An exact key match is
//!    preferred to an ASCII case-insensitive one.
//! 3. If no balanced object carries the key, the last `key: value` pair in the
//!    text is used (this covers truncated objects such as `{'x': 3`).
//!
//! The function never panics; anything else is [`ExtractError::NotFound`].

use serde_json::{Map, Number, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExtractError {
    #[error("no field `{key}` found in completion")]
    NotFound { key: String },
}

pub fn extract_json_field(completion: &str, key: &str) -> Result<Value, ExtractError> {
    let chars: Vec<char> = completion.chars().collect();
    let mut spans = balanced_spans(&chars, true);
    for span in balanced_spans(&chars, false) {
        if !spans.contains(&span) {
            spans.push(span);
        }
    }
    spans.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

    for &(start, end) in &spans {
        let mut parser = Parser::new(&chars[start..=end]);
        let Some(Value::Object(map)) = parser.parse_complete() else {
            continue;
        };
        if let Some(value) = lookup(&map, key) {
            return Ok(value);
        }
    }

    loose_pair(&chars, key).ok_or_else(|| ExtractError::NotFound { key: key.to_string() })
}

fn lookup(map: &Map<String, Value>, key: &str) -> Option<Value> {
    if let Some(v) = map.get(key) {
        return Some(v.clone());
    }
    map.iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(key))
        .map(|(_, v)| v.clone())
}

/// All `(open, close)` index pairs of balanced braces. With `quote_aware`,
/// braces inside quoted strings are ignored.
fn balanced_spans(chars: &[char], quote_aware: bool) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    for start in 0..chars.len() {
        if chars[start] != '{' {
            continue;
        }
        let mut depth = 0usize;
        let mut quote: Option<char> = None;
        let mut i = start;
        while i < chars.len() {
            let c = chars[i];
            if let Some(q) = quote {
                if c == '\\' {
                    i += 2;
                    continue;
                }
                if c == q {
                    quote = None;
                }
            } else if quote_aware && (c == '"' || c == '\'') && opens_string(chars, i) {
                quote = Some(c);
            } else if c == '{' {
                depth += 1;
            } else if c == '}' {
                depth -= 1;
                if depth == 0 {
                    spans.push((start, i));
                    break;
                }
            }
            i += 1;
        }
    }
    spans
}

/// A quote opens a string only after a structural character, so apostrophes
/// in prose ("it's") do not swallow the rest of the text.
fn opens_string(chars: &[char], at: usize) -> bool {
    let prev = chars[..at].iter().rev().find(|c| !c.is_whitespace());
    matches!(prev, None | Some('{' | '[' | '(' | ',' | ':'))
}

fn loose_pair(chars: &[char], key: &str) -> Option<Value> {
    let key_chars: Vec<char> = key.chars().collect();
    if key_chars.is_empty() || key_chars.len() > chars.len() {
        return None;
    }
    let mut found = None;
    for start in 0..=chars.len() - key_chars.len() {
        let window = &chars[start..start + key_chars.len()];
        let same = window
            .iter()
            .zip(&key_chars)
            .all(|(a, b)| a.eq_ignore_ascii_case(b));
        if !same {
            continue;
        }
        let before = start.checked_sub(1).map(|i| chars[i]);
        if before.is_some_and(|c| c.is_alphanumeric() || c == '_') {
            continue;
        }
        let mut i = start + key_chars.len();
        if i < chars.len() && (chars[i] == '"' || chars[i] == '\'') {
            i += 1;
        } else if i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
            continue;
        }
        while i < chars.len() && chars[i].is_whitespace() {
            i += 1;
        }
        if i >= chars.len() || chars[i] != ':' {
            continue;
        }
        let mut parser = Parser::new(&chars[i + 1..]);
        if let Some(value) = parser.parse_scalar_prefix() {
            found = Some(value);
        }
    }
    found
}

struct Parser<'a> {
    chars: &'a [char],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(chars: &'a [char]) -> Self {
        Self { chars, pos: 0 }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn parse_complete(&mut self) -> Option<Value> {
        let value = self.parse_value()?;
        self.skip_ws();
        (self.pos == self.chars.len()).then_some(value)
    }

    /// Leading scalar (string, number, literal or bare word) of a fragment.
    fn parse_scalar_prefix(&mut self) -> Option<Value> {
        self.skip_ws();
        match self.peek()? {
            '{' | '[' | '(' => None,
            _ => self.parse_value(),
        }
    }

    fn parse_value(&mut self) -> Option<Value> {
        self.skip_ws();
        match self.peek()? {
            '{' => self.parse_object(),
            '[' => self.parse_array(']'),
            '(' => self.parse_array(')'),
            '"' | '\'' => self.parse_string().map(Value::String),
            c if c == '-' || c == '+' || c == '.' || c.is_ascii_digit() => self.parse_number(),
            c if c.is_alphabetic() || c == '_' => {
                let word = self.parse_word();
                Some(match word.as_str() {
                    "true" | "True" => Value::Bool(true),
                    "false" | "False" => Value::Bool(false),
                    "null" | "None" => Value::Null,
                    _ => Value::String(word),
                })
            }
            _ => None,
        }
    }

    fn parse_word(&mut self) -> String {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_alphanumeric() || c == '_' || c == '-')
        {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn parse_object(&mut self) -> Option<Value> {
        self.pos += 1;
        let mut map = Map::new();
        loop {
            self.skip_ws();
            match self.peek()? {
                '}' => {
                    self.pos += 1;
                    return Some(Value::Object(map));
                }
                '"' | '\'' => {
                    let key = self.parse_string()?;
                    self.finish_entry(&mut map, key)?;
                }
                c if c.is_alphanumeric() || c == '_' => {
                    let key = self.parse_word();
                    self.finish_entry(&mut map, key)?;
                }
                _ => return None,
            }
            self.skip_ws();
            match self.peek()? {
                ',' => self.pos += 1,
                '}' => {}
                _ => return None,
            }
        }
    }

    fn finish_entry(&mut self, map: &mut Map<String, Value>, key: String) -> Option<()> {
        self.skip_ws();
        if self.peek()? != ':' {
            return None;
        }
        self.pos += 1;
        let value = self.parse_value()?;
        map.insert(key, value);
        Some(())
    }

    fn parse_array(&mut self, close: char) -> Option<Value> {
        self.pos += 1;
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            if self.peek()? == close {
                self.pos += 1;
                return Some(Value::Array(items));
            }
            items.push(self.parse_value()?);
            self.skip_ws();
            match self.peek()? {
                ',' => self.pos += 1,
                c if c == close => {}
                _ => return None,
            }
        }
    }

    fn parse_string(&mut self) -> Option<String> {
        let quote = self.peek()?;
        self.pos += 1;
        let mut out = String::new();
        loop {
            let c = self.peek()?;
            self.pos += 1;
            match c {
                '\\' => {
                    let esc = self.peek()?;
                    self.pos += 1;
                    match esc {
                        'n' => out.push('\n'),
                        't' => out.push('\t'),
                        'r' => out.push('\r'),
                        'u' => {
                            let hex: String = self.chars.get(self.pos..self.pos + 4)?.iter().collect();
                            let code = u32::from_str_radix(&hex, 16).ok()?;
                            out.push(char::from_u32(code).unwrap_or('\u{fffd}'));
                            self.pos += 4;
                        }
                        other => out.push(other),
                    }
                }
                c if c == quote => return Some(out),
                c => out.push(c),
            }
        }
    }

    fn parse_number(&mut self) -> Option<Value> {
        let start = self.pos;
        if matches!(self.peek(), Some('-' | '+')) {
            self.pos += 1;
        }
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E'))
        {
            if matches!(self.peek(), Some('e' | 'E')) {
                self.pos += 1;
                if matches!(self.peek(), Some('-' | '+')) {
                    self.pos += 1;
                }
                continue;
            }
            self.pos += 1;
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        let text = text.trim_start_matches('+');
        if let Ok(i) = text.parse::<i64>() {
            return Some(Value::Number(i.into()));
        }
        let f = text.parse::<f64>().ok()?;
        Number::from_f64(f).map(Value::Number)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn prose_then_object() {
        assert_eq!(
            extract_json_field("sure! {'best_answer': 'B'}", "best_answer").unwrap(),
            json!("B")
        );
    }

    #[test]
    fn later_object_wins() {
        let text = "{'confidence': 1} on reflection {\"confidence\": 3}";
        assert_eq!(extract_json_field(text, "confidence").unwrap(), json!(3));
    }

    #[test]
    fn trailing_text_after_object() {
        assert_eq!(
            extract_json_field("{'answerability': 2} trailing", "answerability").unwrap(),
            json!(2)
        );
    }

    #[test]
    fn echoed_double_braces() {
        assert_eq!(
            extract_json_field("Answer: {{'confidence': 2}}", "confidence").unwrap(),
            json!(2)
        );
    }

    #[test]
    fn nested_object_value() {
        let text = r#"{"result": {"best_answer": "d"}}"#;
        assert_eq!(extract_json_field(text, "best_answer").unwrap(), json!("d"));
        assert_eq!(
            extract_json_field(text, "result").unwrap(),
            json!({"best_answer": "d"})
        );
    }

    #[test]
    fn truncated_object_falls_back_to_pair() {
        assert_eq!(
            extract_json_field("final: {'answerability': 3", "answerability").unwrap(),
            json!(3)
        );
    }

    #[test]
    fn key_must_be_a_whole_word_in_fallback() {
        assert!(extract_json_field("my_confidence: 3", "confidence").is_err());
    }

    #[test]
    fn missing_key_is_not_found() {
        assert_eq!(
            extract_json_field("{'other': 1}", "confidence"),
            Err(ExtractError::NotFound {
                key: "confidence".into()
            })
        );
        assert!(extract_json_field("", "confidence").is_err());
    }

    #[test]
    fn python_literals() {
        let v = extract_json_field("{'ok': True, 'n': None, 'xs': (1, 2,),}", "xs").unwrap();
        assert_eq!(v, json!([1, 2]));
    }

    proptest! {
        #[test]
        fn never_panics(text in any::<String>(), key in "[a-z_]{0,12}") {
            let _ = extract_json_field(&text, &key);
        }

        #[test]
        fn finds_embedded_score(prefix in "[^{}']{0,30}", suffix in "[^{}']{0,30}", x in 1u8..=3) {
            let text = format!("{prefix}{{'confidence': {x}}}{suffix}");
            prop_assert_eq!(extract_json_field(&text, "confidence").unwrap(), json!(x));
        }
    }
}
