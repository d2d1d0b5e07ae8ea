//! RDF-style terms and triples shared by the object model and the index.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A node in a triple: an absolute IRI or a UTF-8 literal. An IRI never equals
/// a literal even when the underlying strings match.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Term {
    Iri(String),
    Literal(String),
}

impl Term {
    pub fn iri(s: impl Into<String>) -> Term {
        Term::Iri(s.into())
    }

    pub fn literal(s: impl Into<String>) -> Term {
        Term::Literal(s.into())
    }

    pub fn as_str(&self) -> &str {
        match self {
            Term::Iri(s) | Term::Literal(s) => s,
        }
    }

    pub fn as_iri(&self) -> Option<&str> {
        match self {
            Term::Iri(s) => Some(s),
            Term::Literal(_) => None,
        }
    }

    pub fn is_iri(&self) -> bool {
        matches!(self, Term::Iri(_))
    }
}

/// Writes the term in query-text syntax: `<iri>` or `"literal"`.
impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Iri(s) => write!(f, "<{s}>"),
            Term::Literal(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
        }
    }
}

/// `(subject, predicate, object)` where subject and predicate are IRIs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: Term,
}

impl Triple {
    pub fn new(subject: impl Into<String>, predicate: impl Into<String>, object: Term) -> Self {
        Triple {
            subject: subject.into(),
            predicate: predicate.into(),
            object,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}> <{}> {}", self.subject, self.predicate, self.object)
    }
}

/// Absolute IRI check: a scheme, a colon, and a non-empty remainder with no
/// whitespace or characters IRIs forbid.
pub fn is_absolute_iri(s: &str) -> bool {
    let Some((scheme, rest)) = s.split_once(':') else {
        return false;
    };
    let mut sc = scheme.chars();
    let scheme_ok = matches!(sc.next(), Some(c) if c.is_ascii_alphabetic())
        && sc.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'));
    scheme_ok
        && !rest.is_empty()
        && !rest
            .chars()
            .any(|c| c.is_whitespace() || c.is_control() || matches!(c, '<' | '>' | '"' | '{' | '}' | '|' | '\\' | '^' | '`'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iri_and_literal_never_equal() {
        assert_ne!(Term::iri("info:ino/r1"), Term::literal("info:ino/r1"));
    }

    #[test]
    fn absolute_iri_grammar() {
        assert!(is_absolute_iri("info:ino/r1"));
        assert!(is_absolute_iri("http://example.org/a?b=c#d"));
        assert!(!is_absolute_iri("relative/path"));
        assert!(!is_absolute_iri("1http://x"));
        assert!(!is_absolute_iri("http://exa mple.org"));
        assert!(!is_absolute_iri("urn:"));
    }

    #[test]
    fn display_escapes_literals() {
        assert_eq!(Term::literal("a\"b\\c").to_string(), r#""a\"b\\c""#);
        assert_eq!(Term::iri("info:x").to_string(), "<info:x>");
    }
}
