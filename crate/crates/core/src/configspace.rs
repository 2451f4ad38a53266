//! Hyper-parameter configuration spaces.
//!
//! Candidates declare their tunable parameters as a dictionary literal:
//!
//! ```text
//! {
//!     "float_parameter": (0.1, 1.5),
//!     "int_parameter": (2, 10),
//!     "categoral_parameter": ["mouse", "cat", "dog"]
//! }
//! ```
//!
//! A 2-tuple is a float range when either endpoint is written with a decimal
//! point or an exponent, otherwise an integer range. A list of strings is a
//! categorical choice. The grammar is documented in `docs/configspace-grammar.md`.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamKind {
    Float { lo: f64, hi: f64 },
    Int { lo: i64, hi: i64 },
    Categorical { choices: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn contains(&self, value: &ParamValue) -> bool {
        match (&self.kind, value) {
            (ParamKind::Float { lo, hi }, ParamValue::Float(v)) => v.is_finite() && lo <= v && v <= hi,
            (ParamKind::Int { lo, hi }, ParamValue::Int(v)) => lo <= v && v <= hi,
            (ParamKind::Categorical { choices }, ParamValue::Str(v)) => choices.contains(v),
            _ => false,
        }
    }
}

/// Ordered parameter declarations. Order is taken from the source text and
/// drives serialization order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigSpace {
    pub params: Vec<ParamSpec>,
}

impl ConfigSpace {
    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn get(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Parameters whose names collide with constructor arguments the harness
    /// supplies itself (`budget` and `dim` for continuous optimizers).
    pub fn reserved_collisions(&self, reserved: &[&str]) -> Vec<Violation> {
        self.params
            .iter()
            .filter(|p| reserved.contains(&p.name.as_str()))
            .map(|p| Violation::Reserved { key: p.name.clone() })
            .collect()
    }

    /// Renders the space back into the dictionary-literal format.
    pub fn to_literal(&self) -> String {
        let entries: Vec<String> = self
            .params
            .iter()
            .map(|p| {
                let value = match &p.kind {
                    ParamKind::Float { lo, hi } => format!("({}, {})", float_literal(*lo), float_literal(*hi)),
                    ParamKind::Int { lo, hi } => format!("({lo}, {hi})"),
                    ParamKind::Categorical { choices } => {
                        let quoted: Vec<String> = choices.iter().map(|c| quote(c)).collect();
                        format!("[{}]", quoted.join(", "))
                    }
                };
                format!("{}: {}", quote(&p.name), value)
            })
            .collect();
        format!("{{{}}}", entries.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Str(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Float(v) => Some(*v),
            ParamValue::Str(_) => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => f.write_str(&float_literal(*v)),
            ParamValue::Str(v) => f.write_str(&quote(v)),
        }
    }
}

/// A concrete value for every parameter of a space.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigAssignment {
    pub values: BTreeMap<String, ParamValue>,
}

impl ConfigAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ParamValue) {
        self.values.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.values.get(name)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("value for `{key}` is outside its domain")]
    OutOfDomain { key: String },
    #[error("missing value for `{key}`")]
    Missing { key: String },
    #[error("`{key}` is not a parameter of the space")]
    Extra { key: String },
    #[error("`{key}` collides with a reserved constructor argument")]
    Reserved { key: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpaceError {
    #[error("syntax error at byte {position}: {reason}")]
    Syntax { position: usize, reason: String },
}

impl SpaceError {
    fn at(position: usize, reason: impl Into<String>) -> Self {
        SpaceError::Syntax { position, reason: reason.into() }
    }
}

/// Parses a configuration-space dictionary literal.
///
/// An empty dictionary is legal and yields an empty space. A leading
/// `identifier =` assignment is tolerated since generated code often names
/// the dictionary.
pub fn parse_space(text: &str) -> Result<ConfigSpace, SpaceError> {
    let mut parser = Parser::new(text);
    parser.skip_assignment_prefix();
    let mut space = ConfigSpace::default();
    parser.parse_dict(|parser, key, key_pos| {
        if space.params.iter().any(|p| p.name == key) {
            return Err(SpaceError::at(key_pos, format!("duplicate parameter `{key}`")));
        }
        let kind = parser.parse_domain()?;
        space.params.push(ParamSpec { name: key, kind });
        Ok(())
    })?;
    parser.expect_end()?;
    if space.is_empty() {
        tracing::warn!("configuration space declares no parameters");
    }
    Ok(space)
}

/// Reads an assignment literal such as `{"s1": 1.0, "s2": 100, "mode": "cat"}`.
pub fn parse_assignment(text: &str) -> Result<ConfigAssignment, SpaceError> {
    let mut parser = Parser::new(text);
    let mut assignment = ConfigAssignment::new();
    parser.parse_dict(|parser, key, key_pos| {
        if assignment.values.contains_key(&key) {
            return Err(SpaceError::at(key_pos, format!("duplicate key `{key}`")));
        }
        let value = match parser.peek() {
            Some(b'"') | Some(b'\'') => ParamValue::Str(parser.parse_string()?),
            _ => match parser.parse_number()? {
                Number::Int(v) => ParamValue::Int(v),
                Number::Float(v) => ParamValue::Float(v),
            },
        };
        assignment.values.insert(key, value);
        Ok(())
    })?;
    parser.expect_end()?;
    Ok(assignment)
}

/// Draws one assignment: floats and integers uniformly on their closed
/// range, categoricals uniformly over the choices.
pub fn sample<R: Rng + ?Sized>(space: &ConfigSpace, rng: &mut R) -> ConfigAssignment {
    let mut assignment = ConfigAssignment::new();
    for p in &space.params {
        let value = match &p.kind {
            ParamKind::Float { lo, hi } => {
                if lo == hi {
                    ParamValue::Float(*lo)
                } else {
                    ParamValue::Float(rng.random_range(*lo..=*hi))
                }
            }
            ParamKind::Int { lo, hi } => ParamValue::Int(rng.random_range(*lo..=*hi)),
            ParamKind::Categorical { choices } => {
                ParamValue::Str(choices[rng.random_range(0..choices.len())].clone())
            }
        };
        assignment.values.insert(p.name.clone(), value);
    }
    assignment
}

/// Lists every missing, extra, or out-of-domain key. Empty means valid.
pub fn validate(assignment: &ConfigAssignment, space: &ConfigSpace) -> Vec<Violation> {
    let mut violations = Vec::new();
    for p in &space.params {
        match assignment.values.get(&p.name) {
            None => violations.push(Violation::Missing { key: p.name.clone() }),
            Some(v) if !p.contains(v) => violations.push(Violation::OutOfDomain { key: p.name.clone() }),
            Some(_) => {}
        }
    }
    for key in assignment.values.keys() {
        if space.get(key).is_none() {
            violations.push(Violation::Extra { key: key.clone() });
        }
    }
    violations
}

/// Renders an assignment as a dictionary literal in the space's parameter
/// order. Keys absent from the space are appended in sorted order.
pub fn serialize_assignment(assignment: &ConfigAssignment, space: &ConfigSpace) -> String {
    let mut entries = Vec::with_capacity(assignment.values.len());
    for p in &space.params {
        if let Some(v) = assignment.values.get(&p.name) {
            entries.push(format!("{}: {}", quote(&p.name), v));
        }
    }
    for (k, v) in &assignment.values {
        if space.get(k).is_none() {
            entries.push(format!("{}: {}", quote(k), v));
        }
    }
    format!("{{{}}}", entries.join(", "))
}

/// Shortest round-tripping float text that always carries a decimal point or
/// exponent, so it reads back as a float.
fn float_literal(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains(['.', 'e', 'E']) || !v.is_finite() {
        s
    } else {
        format!("{s}.0")
    }
}

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

enum Number {
    Int(i64),
    Float(f64),
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, bytes: src.as_bytes(), pos: 0 }
    }

    fn skip_ws(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            match b {
                b' ' | b'\t' | b'\n' | b'\r' => self.pos += 1,
                b'#' => {
                    while let Some(&c) = self.bytes.get(self.pos) {
                        if c == b'\n' {
                            break;
                        }
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, want: u8) -> Result<(), SpaceError> {
        match self.peek() {
            Some(b) if b == want => {
                self.pos += 1;
                Ok(())
            }
            Some(b) => Err(SpaceError::at(self.pos, format!("expected `{}`, found `{}`", want as char, b as char))),
            None => Err(SpaceError::at(self.pos, format!("expected `{}`, found end of input", want as char))),
        }
    }

    fn expect_end(&mut self) -> Result<(), SpaceError> {
        match self.peek() {
            None => Ok(()),
            Some(b) => Err(SpaceError::at(self.pos, format!("unexpected `{}` after dictionary", b as char))),
        }
    }

    fn skip_assignment_prefix(&mut self) {
        let save = self.pos;
        self.skip_ws();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_alphanumeric() || b == b'_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos > start && self.peek() == Some(b'=') {
            self.pos += 1;
        } else {
            self.pos = save;
        }
    }

    /// `{ key: <value>, ... }` with an optional trailing comma.
    fn parse_dict<F>(&mut self, mut entry: F) -> Result<(), SpaceError>
    where
        F: FnMut(&mut Self, String, usize) -> Result<(), SpaceError>,
    {
        self.expect(b'{')?;
        loop {
            match self.peek() {
                Some(b'}') => {
                    self.pos += 1;
                    return Ok(());
                }
                Some(b'"') | Some(b'\'') => {}
                Some(b) => return Err(SpaceError::at(self.pos, format!("expected a string key, found `{}`", b as char))),
                None => return Err(SpaceError::at(self.pos, "unterminated dictionary")),
            }
            let key_pos = self.pos;
            let key = self.parse_string()?;
            self.expect(b':')?;
            entry(self, key, key_pos)?;
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {}
                Some(b) => return Err(SpaceError::at(self.pos, format!("expected `,` or `}}`, found `{}`", b as char))),
                None => return Err(SpaceError::at(self.pos, "unterminated dictionary")),
            }
        }
    }

    fn parse_domain(&mut self) -> Result<ParamKind, SpaceError> {
        let start = self.pos;
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let lo = self.parse_number()?;
                self.expect(b',')?;
                let hi = self.parse_number()?;
                if self.peek() == Some(b',') {
                    self.pos += 1;
                }
                if self.peek() != Some(b')') {
                    return Err(SpaceError::at(self.pos, "range tuples must have exactly two elements"));
                }
                self.pos += 1;
                match (lo, hi) {
                    (Number::Int(lo), Number::Int(hi)) => {
                        if lo > hi {
                            return Err(SpaceError::at(start, format!("empty range ({lo}, {hi})")));
                        }
                        Ok(ParamKind::Int { lo, hi })
                    }
                    (lo, hi) => {
                        let lo = lo.to_f64();
                        let hi = hi.to_f64();
                        if lo > hi {
                            return Err(SpaceError::at(start, format!("empty range ({lo}, {hi})")));
                        }
                        Ok(ParamKind::Float { lo, hi })
                    }
                }
            }
            Some(b'[') => {
                self.pos += 1;
                let mut choices = Vec::new();
                loop {
                    match self.peek() {
                        Some(b']') => {
                            self.pos += 1;
                            break;
                        }
                        Some(b'"') | Some(b'\'') => {
                            choices.push(self.parse_string()?);
                            match self.peek() {
                                Some(b',') => self.pos += 1,
                                Some(b']') => {}
                                _ => return Err(SpaceError::at(self.pos, "expected `,` or `]` in choice list")),
                            }
                        }
                        _ => return Err(SpaceError::at(self.pos, "categorical choices must be string literals")),
                    }
                }
                if choices.is_empty() {
                    return Err(SpaceError::at(start, "categorical parameter needs at least one choice"));
                }
                Ok(ParamKind::Categorical { choices })
            }
            Some(b) => Err(SpaceError::at(self.pos, format!("expected `(` or `[`, found `{}`", b as char))),
            None => Err(SpaceError::at(self.pos, "expected a parameter domain")),
        }
    }

    fn parse_string(&mut self) -> Result<String, SpaceError> {
        let start = self.pos;
        let quote = match self.peek() {
            Some(q @ (b'"' | b'\'')) => q,
            _ => return Err(SpaceError::at(self.pos, "expected a string literal")),
        };
        self.pos += 1;
        let mut out = String::new();
        let mut chars = self.src[self.pos..].char_indices();
        while let Some((off, c)) = chars.next() {
            match c {
                '\\' => {
                    let (_, esc) = chars
                        .next()
                        .ok_or_else(|| SpaceError::at(self.pos + off, "unterminated escape"))?;
                    match esc {
                        'n' => out.push('\n'),
                        't' => out.push('\t'),
                        'r' => out.push('\r'),
                        '0' => out.push('\0'),
                        'a' => out.push('\u{7}'),
                        'b' => out.push('\u{8}'),
                        'f' => out.push('\u{c}'),
                        'v' => out.push('\u{b}'),
                        'u' => {
                            let hex: String = chars.by_ref().take(4).map(|(_, c)| c).collect();
                            let code = u32::from_str_radix(&hex, 16)
                                .ok()
                                .and_then(char::from_u32)
                                .ok_or_else(|| SpaceError::at(self.pos + off, "invalid \\u escape"))?;
                            out.push(code);
                        }
                        other => out.push(other),
                    }
                }
                '\n' => return Err(SpaceError::at(start, "unterminated string literal")),
                c if c as u32 == quote as u32 => {
                    self.pos += off + 1;
                    return Ok(out);
                }
                c => out.push(c),
            }
        }
        Err(SpaceError::at(start, "unterminated string literal"))
    }

    fn parse_number(&mut self) -> Result<Number, SpaceError> {
        self.skip_ws();
        let start = self.pos;
        let mut is_float = false;
        if matches!(self.bytes.get(self.pos), Some(b'+' | b'-')) {
            self.pos += 1;
        }
        while let Some(&b) = self.bytes.get(self.pos) {
            match b {
                b'0'..=b'9' | b'_' => self.pos += 1,
                b'.' => {
                    is_float = true;
                    self.pos += 1;
                }
                b'e' | b'E' => {
                    is_float = true;
                    self.pos += 1;
                    if matches!(self.bytes.get(self.pos), Some(b'+' | b'-')) {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
        let lexeme: String = self.src[start..self.pos].chars().filter(|&c| c != '_').collect();
        let digits = lexeme.trim_start_matches(['+', '-']);
        if digits.is_empty() || !digits.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
            return Err(SpaceError::at(start, "expected a numeric literal"));
        }
        if is_float {
            lexeme
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Number::Float)
                .ok_or_else(|| SpaceError::at(start, format!("invalid float literal `{lexeme}`")))
        } else {
            lexeme
                .parse::<i64>()
                .map(Number::Int)
                .map_err(|_| SpaceError::at(start, format!("invalid integer literal `{lexeme}`")))
        }
    }
}

impl Number {
    fn to_f64(&self) -> f64 {
        match self {
            Number::Int(v) => *v as f64,
            Number::Float(v) => *v,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DOC_EXAMPLE: &str = r#"{
    "float_parameter": (0.1, 1.5),
    "int_parameter": (2, 10),
    "categoral_parameter": ["mouse", "cat", "dog"]
}"#;

    #[test]
    fn parses_example_dictionary() {
        let space = parse_space(DOC_EXAMPLE).unwrap();
        assert_eq!(space.len(), 3);
        assert_eq!(space.params[0].kind, ParamKind::Float { lo: 0.1, hi: 1.5 });
        assert_eq!(space.params[1].kind, ParamKind::Int { lo: 2, hi: 10 });
        assert_eq!(
            space.params[2].kind,
            ParamKind::Categorical { choices: vec!["mouse".into(), "cat".into(), "dog".into()] }
        );
        assert_eq!(space.params[2].name, "categoral_parameter");
    }

    #[test]
    fn empty_dictionary_is_empty_space() {
        assert!(parse_space("{}").unwrap().is_empty());
        assert!(parse_space("  {\n}\n").unwrap().is_empty());
    }

    #[test]
    fn mixed_literals_promote_to_float() {
        let space = parse_space(r#"{"a": (1.0, 5)}"#).unwrap();
        assert_eq!(space.params[0].kind, ParamKind::Float { lo: 1.0, hi: 5.0 });
        let space = parse_space(r#"{"a": (1e-3, 5)}"#).unwrap();
        assert_eq!(space.params[0].kind, ParamKind::Float { lo: 1e-3, hi: 5.0 });
    }

    #[test]
    fn tolerates_comments_trailing_commas_and_prefix() {
        let text = "space = {\n  # step size\n  'a': (0, 3,),  # trailing\n  \"b\": ['x',],\n}\n";
        let space = parse_space(text).unwrap();
        assert_eq!(space.params[0].kind, ParamKind::Int { lo: 0, hi: 3 });
        assert_eq!(space.params[1].kind, ParamKind::Categorical { choices: vec!["x".into()] });
    }

    #[test]
    fn rejects_out_of_grammar_forms() {
        for bad in [
            r#"{"a": (1, 2, 3)}"#,
            r#"{"a": {"b": (1, 2)}}"#,
            r#"{"a": [1, 2]}"#,
            r#"{"a": []}"#,
            r#"{"a": (5, 1)}"#,
            r#"{"a": (1, 2), "a": (3, 4)}"#,
            r#"{a: (1, 2)}"#,
            r#"{"a": (1, 2)} extra"#,
            r#"{"a": (1, 2)"#,
        ] {
            assert!(parse_space(bad).is_err(), "accepted {bad}");
        }
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_space(r#"{"a": (1, 2, 3)}"#).unwrap_err();
        let SpaceError::Syntax { position, .. } = err;
        assert_eq!(position, 13);
    }

    #[test]
    fn degenerate_domains_sample_constant() {
        let space = parse_space(r#"{"n": (2, 2), "c": ["a"]}"#).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let a = sample(&space, &mut rng);
            assert_eq!(a.get("n"), Some(&ParamValue::Int(2)));
            assert_eq!(a.get("c"), Some(&ParamValue::Str("a".into())));
        }
    }

    #[test]
    fn float_sampling_mean() {
        let space = parse_space(r#"{"x": (0.1, 1.5)}"#).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| sample(&space, &mut rng).get("x").unwrap().as_f64().unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.8).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn validation_reports_each_violation() {
        let space = parse_space(DOC_EXAMPLE).unwrap();
        let mut a = ConfigAssignment::new();
        a.insert("float_parameter", ParamValue::Float(0.5));
        a.insert("int_parameter", ParamValue::Int(5));
        a.insert("categoral_parameter", ParamValue::Str("cat".into()));
        assert!(validate(&a, &space).is_empty());

        a.insert("int_parameter", ParamValue::Int(11));
        assert_eq!(validate(&a, &space), vec![Violation::OutOfDomain { key: "int_parameter".into() }]);

        a.values.remove("int_parameter");
        assert_eq!(validate(&a, &space), vec![Violation::Missing { key: "int_parameter".into() }]);

        a.insert("int_parameter", ParamValue::Int(3));
        a.insert("bogus", ParamValue::Int(3));
        assert_eq!(validate(&a, &space), vec![Violation::Extra { key: "bogus".into() }]);
    }

    #[test]
    fn reserved_names_are_distinct_violations() {
        let space = parse_space(r#"{"budget": (1, 5), "dim": (1, 3), "f": (0.1, 0.9)}"#).unwrap();
        assert_eq!(
            space.reserved_collisions(&["budget", "dim"]),
            vec![Violation::Reserved { key: "budget".into() }, Violation::Reserved { key: "dim".into() }]
        );
    }

    #[test]
    fn serializes_in_space_order() {
        let space = parse_space(r#"{"s1": (0.1, 2.0), "s2": (1, 200), "mode": ["a", "b"]}"#).unwrap();
        let mut a = ConfigAssignment::new();
        a.insert("mode", ParamValue::Str("b".into()));
        a.insert("s2", ParamValue::Int(100));
        a.insert("s1", ParamValue::Float(1.0));
        assert_eq!(serialize_assignment(&a, &space), r#"{"s1": 1.0, "s2": 100, "mode": "b"}"#);
        assert_eq!(serialize_assignment(&ConfigAssignment::new(), &ConfigSpace::default()), "{}");
    }

    #[test]
    fn control_characters_survive_quoting() {
        let s = ConfigSpace {
            params: vec![ParamSpec {
                name: "m".into(),
                kind: ParamKind::Categorical { choices: vec!["\u{8}\u{c}\u{1}\\\"'".into()] },
            }],
        };
        assert_eq!(parse_space(&s.to_literal()).unwrap(), s);
    }

    #[test]
    fn serialized_assignment_reads_back() {
        let space = parse_space(r#"{"s1": (0.0, 1.0), "s2": (1, 200)}"#).unwrap();
        let mut a = ConfigAssignment::new();
        a.insert("s1", ParamValue::Float(0.1 + 0.2));
        a.insert("s2", ParamValue::Int(100));
        let text = serialize_assignment(&a, &space);
        assert_eq!(parse_assignment(&text).unwrap(), a);
    }
}
