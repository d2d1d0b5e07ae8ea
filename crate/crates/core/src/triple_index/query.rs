//! Triple patterns, conjunctive queries and their text syntax.
//!
//! ```text
//! SELECT ?m ?r WHERE ?m <info:ino/def#metadataFor> ?r ; ?m <info:ino/def#objectType> <info:ino/def#Metadata>
//! ```
//!
//! Patterns are separated by `;`, each holding three whitespace-separated
//! terms: a variable `?name`, an IRI `<...>`, or a literal `"..."` (with `\"`
//! and `\\` escapes). `SELECT *` projects every variable in order of first
//! appearance.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::term::{is_absolute_iri, Term, Triple};

pub const MAX_PATTERNS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("invalid query: {0}")]
    Invalid(String),
    #[error("query syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("intermediate result exceeded {cap} rows")]
    QueryTooLarge { cap: usize },
    #[error("brute-force oracle refuses {triples} triples (limit {limit})")]
    OracleTooLarge { triples: usize, limit: usize },
}

/// One position of a pattern. Variable names are stored without the `?`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PatternTerm {
    Var(String),
    Const(Term),
}

impl PatternTerm {
    pub fn var(name: &str) -> Self {
        PatternTerm::Var(name.trim_start_matches('?').to_string())
    }

    pub fn iri(s: &str) -> Self {
        PatternTerm::Const(Term::iri(s))
    }

    pub fn literal(s: &str) -> Self {
        PatternTerm::Const(Term::literal(s))
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            PatternTerm::Var(v) => Some(v),
            PatternTerm::Const(_) => None,
        }
    }

    pub fn as_const(&self) -> Option<&Term> {
        match self {
            PatternTerm::Const(t) => Some(t),
            PatternTerm::Var(_) => None,
        }
    }
}

impl fmt::Display for PatternTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatternTerm::Var(v) => write!(f, "?{v}"),
            PatternTerm::Const(t) => t.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TriplePattern {
    pub subject: PatternTerm,
    pub predicate: PatternTerm,
    pub object: PatternTerm,
}

impl TriplePattern {
    pub fn new(subject: PatternTerm, predicate: PatternTerm, object: PatternTerm) -> Self {
        TriplePattern {
            subject,
            predicate,
            object,
        }
    }

    pub fn positions(&self) -> [&PatternTerm; 3] {
        [&self.subject, &self.predicate, &self.object]
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.positions().into_iter().filter_map(PatternTerm::as_var)
    }

    /// Whether a triple unifies with this pattern, honouring repeated variables.
    pub fn matches(&self, t: &Triple) -> bool {
        let subject = Term::Iri(t.subject.clone());
        let predicate = Term::Iri(t.predicate.clone());
        let values = [&subject, &predicate, &t.object];
        let mut seen: Vec<(&str, &Term)> = Vec::new();
        for (pos, value) in self.positions().into_iter().zip(values) {
            match pos {
                PatternTerm::Const(c) if c != value => return false,
                PatternTerm::Const(_) => {}
                PatternTerm::Var(v) => match seen.iter().find(|(n, _)| n == v) {
                    Some((_, prev)) if *prev != value => return false,
                    Some(_) => {}
                    None => seen.push((v, value)),
                },
            }
        }
        true
    }
}

impl fmt::Display for TriplePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.subject, self.predicate, self.object)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConjunctiveQuery {
    pub patterns: Vec<TriplePattern>,
    /// Projected variable names, without `?`.
    pub projected: Vec<String>,
}

fn valid_var_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
}

impl ConjunctiveQuery {
    pub fn new(patterns: Vec<TriplePattern>, projected: &[&str]) -> Result<Self, QueryError> {
        let q = ConjunctiveQuery {
            patterns,
            projected: projected.iter().map(|v| v.trim_start_matches('?').to_string()).collect(),
        };
        q.validate()?;
        Ok(q)
    }

    pub fn parse(text: &str) -> Result<Self, QueryError> {
        parse_query(text)
    }

    /// Distinct variable names in order of first appearance.
    pub fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for v in self.patterns.iter().flat_map(|p| p.vars()) {
            if !out.iter().any(|o| o == v) {
                out.push(v.to_string());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        if self.patterns.is_empty() {
            return Err(QueryError::Invalid("a query needs at least one pattern".into()));
        }
        if self.patterns.len() > MAX_PATTERNS {
            return Err(QueryError::Invalid(format!(
                "{} patterns exceed the limit of {MAX_PATTERNS}",
                self.patterns.len()
            )));
        }
        for p in &self.patterns {
            for pos in p.positions() {
                match pos {
                    PatternTerm::Var(v) if !valid_var_name(v) => {
                        return Err(QueryError::Invalid(format!("invalid variable name `?{v}`")))
                    }
                    PatternTerm::Const(Term::Iri(i)) if !is_absolute_iri(i) => {
                        return Err(QueryError::Invalid(format!("`{i}` is not an absolute IRI")))
                    }
                    _ => {}
                }
            }
        }
        let vars = self.variables();
        let mut seen = HashSet::new();
        for v in &self.projected {
            if !vars.contains(v) {
                return Err(QueryError::Invalid(format!("projected variable `?{v}` occurs in no pattern")));
            }
            if !seen.insert(v) {
                return Err(QueryError::Invalid(format!("variable `?{v}` projected twice")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ConjunctiveQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT")?;
        for v in &self.projected {
            write!(f, " ?{v}")?;
        }
        f.write_str(" WHERE ")?;
        for (i, p) in self.patterns.iter().enumerate() {
            if i > 0 {
                f.write_str(" ; ")?;
            }
            p.fmt(f)?;
        }
        Ok(())
    }
}

/// Duplicate-free query answer. Rows are sorted so equal answers compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Solutions {
    pub vars: Vec<String>,
    pub rows: Vec<Vec<Term>>,
}

/// One answer row as a variable-to-term map.
pub type SolutionRow = BTreeMap<String, Term>;

impl Solutions {
    pub(crate) fn from_rows(vars: Vec<String>, mut rows: Vec<Vec<Term>>) -> Self {
        rows.sort_unstable();
        rows.dedup();
        Solutions { vars, rows }
    }

    /// `rows` must already be sorted and free of duplicates.
    pub(crate) fn from_sorted_rows(vars: Vec<String>, rows: Vec<Vec<Term>>) -> Self {
        debug_assert!(rows.windows(2).all(|w| w[0] < w[1]));
        Solutions { vars, rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row_maps(&self) -> Vec<SolutionRow> {
        self.rows
            .iter()
            .map(|r| self.vars.iter().cloned().zip(r.iter().cloned()).collect())
            .collect()
    }

    /// Values bound to one variable across all rows.
    pub fn column(&self, var: &str) -> Vec<&Term> {
        let var = var.trim_start_matches('?');
        match self.vars.iter().position(|v| v == var) {
            Some(i) => self.rows.iter().map(|r| &r[i]).collect(),
            None => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Var(String),
    Iri(String),
    Literal(String),
    Word(String),
    Semi,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>, QueryError> {
    let err = |offset, message: &str| QueryError::Syntax {
        offset,
        message: message.to_string(),
    };
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(start, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        match c {
            ';' => {
                chars.next();
                out.push((start, Token::Semi));
            }
            '<' => {
                chars.next();
                let mut iri = String::new();
                loop {
                    match chars.next() {
                        Some((_, '>')) => break,
                        Some((_, c)) => iri.push(c),
                        None => return Err(err(start, "unterminated IRI")),
                    }
                }
                out.push((start, Token::Iri(iri)));
            }
            '"' => {
                chars.next();
                let mut lit = String::new();
                loop {
                    match chars.next() {
                        Some((_, '"')) => break,
                        Some((i, '\\')) => match chars.next() {
                            Some((_, '"')) => lit.push('"'),
                            Some((_, '\\')) => lit.push('\\'),
                            _ => return Err(err(i, "bad escape in literal")),
                        },
                        Some((_, c)) => lit.push(c),
                        None => return Err(err(start, "unterminated literal")),
                    }
                }
                out.push((start, Token::Literal(lit)));
            }
            '?' => {
                chars.next();
                let mut name = String::new();
                while let Some(&(_, c)) = chars.peek() {
                    if c.is_whitespace() || c == ';' {
                        break;
                    }
                    name.push(c);
                    chars.next();
                }
                out.push((start, Token::Var(name)));
            }
            _ => {
                let mut word = String::new();
                while let Some(&(_, c)) = chars.peek() {
                    if c.is_whitespace() || c == ';' {
                        break;
                    }
                    word.push(c);
                    chars.next();
                }
                out.push((start, Token::Word(word)));
            }
        }
    }
    Ok(out)
}

fn finish_pattern(
    patterns: &mut Vec<TriplePattern>,
    current: &mut Vec<PatternTerm>,
    offset: usize,
) -> Result<(), QueryError> {
    if current.len() != 3 {
        return Err(QueryError::Syntax {
            offset,
            message: format!("a pattern needs 3 terms, found {}", current.len()),
        });
    }
    let o = current.pop().unwrap();
    let p = current.pop().unwrap();
    let s = current.pop().unwrap();
    patterns.push(TriplePattern::new(s, p, o));
    Ok(())
}

fn parse_query(text: &str) -> Result<ConjunctiveQuery, QueryError> {
    let tokens = tokenize(text)?;
    let mut it = tokens.into_iter().peekable();
    let syntax = |offset, message: String| QueryError::Syntax { offset, message };

    match it.next() {
        Some((_, Token::Word(w))) if w.eq_ignore_ascii_case("SELECT") => {}
        Some((o, _)) => return Err(syntax(o, "expected SELECT".into())),
        None => return Err(syntax(0, "empty query".into())),
    }
    let mut projected = Vec::new();
    let mut star = false;
    loop {
        match it.next() {
            Some((_, Token::Var(v))) => projected.push(v),
            Some((_, Token::Word(w))) if w == "*" => star = true,
            Some((_, Token::Word(w))) if w.eq_ignore_ascii_case("WHERE") => break,
            Some((o, t)) => return Err(syntax(o, format!("unexpected {t:?} in projection"))),
            None => return Err(syntax(text.len(), "missing WHERE".into())),
        }
    }
    if star && !projected.is_empty() {
        return Err(syntax(0, "SELECT * cannot be combined with variables".into()));
    }

    let mut patterns = Vec::new();
    let mut current: Vec<PatternTerm> = Vec::new();
    let mut last_offset = text.len();
    while let Some((offset, tok)) = it.next() {
        last_offset = offset;
        match tok {
            Token::Semi => {
                // A trailing separator is tolerated.
                if current.is_empty() && it.peek().is_none() {
                    break;
                }
                finish_pattern(&mut patterns, &mut current, offset)?;
            }
            Token::Var(v) => current.push(PatternTerm::Var(v)),
            Token::Iri(i) => current.push(PatternTerm::Const(Term::Iri(i))),
            Token::Literal(l) => current.push(PatternTerm::Const(Term::Literal(l))),
            Token::Word(w) => return Err(syntax(offset, format!("unexpected `{w}`"))),
        }
    }
    if !current.is_empty() || patterns.is_empty() {
        finish_pattern(&mut patterns, &mut current, last_offset)?;
    }

    let mut q = ConjunctiveQuery {
        patterns,
        projected,
    };
    if star {
        q.projected = q.variables();
    }
    q.validate()?;
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_pattern_query() {
        let q = ConjunctiveQuery::parse(
            r#"SELECT ?m WHERE ?m <info:ino/def#metadataFor> <info:ino/r1> ; ?m <info:ino/def#objectType> <info:ino/def#Metadata>"#,
        )
        .unwrap();
        assert_eq!(q.projected, vec!["m"]);
        assert_eq!(q.patterns.len(), 2);
        assert_eq!(q.patterns[0].object, PatternTerm::iri("info:ino/r1"));
        let again = ConjunctiveQuery::parse(&q.to_string()).unwrap();
        assert_eq!(again, q);
    }

    #[test]
    fn literal_escapes_and_star() {
        let q = ConjunctiveQuery::parse(r#"select * where ?s ?p "say \"hi\" \\ ; ok" ;"#).unwrap();
        assert_eq!(q.projected, vec!["s", "p"]);
        assert_eq!(q.patterns[0].object, PatternTerm::literal("say \"hi\" \\ ; ok"));
        assert_eq!(ConjunctiveQuery::parse(&q.to_string()).unwrap(), q);
    }

    #[test]
    fn syntax_and_validation_errors() {
        assert!(matches!(ConjunctiveQuery::parse(""), Err(QueryError::Syntax { .. })));
        assert!(matches!(ConjunctiveQuery::parse("SELECT ?a ?a"), Err(QueryError::Syntax { .. })));
        assert!(matches!(
            ConjunctiveQuery::parse("SELECT ?a WHERE ?a <info:x>"),
            Err(QueryError::Syntax { .. })
        ));
        assert!(matches!(
            ConjunctiveQuery::parse("SELECT ?z WHERE ?a <info:x> ?b"),
            Err(QueryError::Invalid(_))
        ));
        assert!(matches!(
            ConjunctiveQuery::parse("SELECT ?A WHERE ?A <info:x> ?b"),
            Err(QueryError::Invalid(_))
        ));
        assert!(matches!(
            ConjunctiveQuery::parse("SELECT ?a WHERE ?a <notabsolute> ?b"),
            Err(QueryError::Invalid(_))
        ));
        let nine = ["?a <info:x> ?b"; 9].join(" ; ");
        assert!(matches!(
            ConjunctiveQuery::parse(&format!("SELECT ?a WHERE {nine}")),
            Err(QueryError::Invalid(_))
        ));
    }

    #[test]
    fn pattern_matching_with_repeated_variable() {
        let p = TriplePattern::new(PatternTerm::var("x"), PatternTerm::iri("info:p"), PatternTerm::var("x"));
        assert!(p.matches(&Triple::new("info:a", "info:p", Term::iri("info:a"))));
        assert!(!p.matches(&Triple::new("info:a", "info:p", Term::iri("info:b"))));
        assert!(!p.matches(&Triple::new("info:a", "info:p", Term::literal("info:a"))));
    }
}
