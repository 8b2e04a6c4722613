//! Regex classification of compiler messages into the error taxonomy.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Diagnostic, ErrorKind, ExecutorError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierRule {
    pub kind: ErrorKind,
    pub pattern: String,
    /// Pattern whose first capture group is the offending identifier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identifier: Option<String>,
}

/// Rules are tried in order; the first match decides the kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub rules: Vec<ClassifierRule>,
    /// First capture group is the reported line.
    pub line_pattern: String,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        let rule = |kind, pattern: &str, identifier: Option<&str>| ClassifierRule {
            kind,
            pattern: pattern.into(),
            identifier: identifier.map(Into::into),
        };
        ClassifierConfig {
            rules: vec![
                rule(
                    ErrorKind::UndeclaredIdentifier,
                    r"(?i)undeclared identifier",
                    Some(r#"(?i)undeclared identifier\W{0,2}"([^"]+)""#),
                ),
                rule(ErrorKind::Member, r#"\bMember\b"#, Some(r#"Member "([^"]+)""#)),
                rule(
                    ErrorKind::IdentifierNotUnique,
                    r"(?i)identifier not unique",
                    Some(r#"(?i)identifier not unique\W{0,2}"([^"]+)""#),
                ),
                rule(ErrorKind::IndexedExpression, r"(?i)\bindex(ed)? expression", None),
                rule(ErrorKind::ImplicitlyConvertible, r"(?i)not implicitly convertible", None),
            ],
            line_pattern: r":(\d+):\d+".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Classifier {
    rules: Vec<(ErrorKind, Regex, Option<Regex>)>,
    line: Regex,
}

fn compile(p: &str) -> Result<Regex, ExecutorError> {
    Regex::new(p).map_err(|e| ExecutorError::InvalidConfig(format!("bad pattern {p:?}: {e}")))
}

impl Classifier {
    pub fn new(cfg: &ClassifierConfig) -> Result<Self, ExecutorError> {
        let rules = cfg
            .rules
            .iter()
            .map(|r| Ok((r.kind, compile(&r.pattern)?, r.identifier.as_deref().map(compile).transpose()?)))
            .collect::<Result<_, ExecutorError>>()?;
        Ok(Classifier {
            rules,
            line: compile(&cfg.line_pattern)?,
        })
    }

    /// Total: every message yields exactly one diagnostic. The line is
    /// whatever the message reports; callers rebase it onto the body.
    pub fn classify(&self, message: &str) -> Diagnostic {
        let hit = self.rules.iter().find(|(_, re, _)| re.is_match(message));
        let (kind, identifier) = match hit {
            Some((kind, _, id_re)) => (
                *kind,
                id_re
                    .as_ref()
                    .and_then(|re| re.captures(message))
                    .and_then(|c| c.get(1))
                    .map(|m| m.as_str().to_string()),
            ),
            None => (ErrorKind::Other, None),
        };
        let line = self
            .line
            .captures(message)
            .and_then(|c| c.get(1))
            .and_then(|m| m.as_str().parse().ok());
        Diagnostic {
            kind,
            message: message.to_string(),
            line,
            identifier,
        }
    }
}

impl Default for Classifier {
    fn default() -> Self {
        Classifier::new(&ClassifierConfig::default()).expect("default patterns compile")
    }
}

/// Classifies with the default rules.
pub fn classify_error(message: &str) -> Diagnostic {
    static DEFAULT: OnceLock<Classifier> = OnceLock::new();
    DEFAULT.get_or_init(Classifier::default).classify(message)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn undeclared_identifier_with_quote() {
        let d = classify_error("DeclarationError: Undeclared identifier \"foo\".");
        assert_eq!(d.kind, ErrorKind::UndeclaredIdentifier);
        assert_eq!(d.identifier.as_deref(), Some("foo"));
    }

    #[test]
    fn suggestion_is_not_taken_as_identifier() {
        let d = classify_error("DeclarationError: Undeclared identifier. Did you mean \"owner\"?\n --> C.sol:12:9:");
        assert_eq!(d.kind, ErrorKind::UndeclaredIdentifier);
        assert_eq!(d.identifier, None);
        assert_eq!(d.line, Some(12));
    }

    #[test]
    fn taxonomy() {
        let cases = [
            ("TypeError: Member \"transferr\" not found or not visible after argument-dependent lookup in contract IERC20.", ErrorKind::Member),
            ("DeclarationError: Identifier not unique.", ErrorKind::IdentifierNotUnique),
            ("TypeError: Indexed expression has to be a type, mapping or array (is function ())", ErrorKind::IndexedExpression),
            ("TypeError: Type uint256 is not implicitly convertible to expected type address.", ErrorKind::ImplicitlyConvertible),
            ("ParserError: Expected ';' but got '}'", ErrorKind::Other),
            ("", ErrorKind::Other),
        ];
        for (msg, kind) in cases {
            assert_eq!(classify_error(msg).kind, kind, "{msg}");
        }
        assert_eq!(classify_error(cases[0].0).identifier.as_deref(), Some("transferr"));
    }

    #[test]
    fn custom_rules_from_config() {
        let cfg = ClassifierConfig {
            rules: vec![ClassifierRule {
                kind: ErrorKind::Member,
                pattern: "no such field".into(),
                identifier: None,
            }],
            ..ClassifierConfig::default()
        };
        let c = Classifier::new(&cfg).unwrap();
        assert_eq!(c.classify("no such field x").kind, ErrorKind::Member);
        assert_eq!(c.classify("Undeclared identifier").kind, ErrorKind::Other);
        let bad = ClassifierConfig {
            line_pattern: "(".into(),
            ..ClassifierConfig::default()
        };
        assert!(Classifier::new(&bad).is_err());
    }

    proptest! {
        #[test]
        fn classification_is_total(msg in ".{0,120}") {
            let d = classify_error(&msg);
            prop_assert!(ErrorKind::ALL.contains(&d.kind));
            prop_assert_eq!(d.message, msg);
        }
    }
}
