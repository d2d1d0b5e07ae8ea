//! Object types and predicate rules with domain, range and cardinality.
//!
//! Configuration is line oriented; `#` starts a comment:
//!
//! ```text
//! type Annotation
//! predicate annotates domain Resource,Annotation range Resource card 0..*
//! predicate <http://example.org/rating> domain Metadata range Literal card 0..1
//! annotates: Resource -> Resource, 0..∞
//! ```
//!
//! Bare predicate names expand into the model namespace. The last form is a
//! shorthand for the `predicate` line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::vocab;

pub const BUILTIN_TYPES: [&str; 4] = ["Resource", "Metadata", "Agent", "Aggregation"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OntologyError {
    #[error("ontology config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("`{0}` is built in and cannot be redefined")]
    BuiltinRedefinition(String),
    #[error("invalid rule for `{predicate}`: {reason}")]
    InvalidRule { predicate: String, reason: String },
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("`{predicate}` does not admit a subject typed {subject_types:?}")]
    DomainViolation {
        predicate: String,
        subject_types: Vec<String>,
    },
    #[error("`{predicate}` does not admit object {object}")]
    RangeViolation { predicate: String, object: String },
    #[error("`{predicate}` on {subject}: {attempted} arcs outside {bound}")]
    CardinalityViolation {
        subject: String,
        predicate: String,
        bound: Cardinality,
        attempted: i64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cardinality {
    pub min: u32,
    /// `None` is unbounded.
    pub max: Option<u32>,
}

impl Cardinality {
    pub const ANY: Cardinality = Cardinality { min: 0, max: None };
    pub const EXACTLY_ONE: Cardinality = Cardinality { min: 1, max: Some(1) };

    pub fn admits(&self, n: i64) -> bool {
        n >= self.min as i64 && self.max.is_none_or(|m| n <= m as i64)
    }
}

impl fmt::Display for Cardinality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.max {
            Some(m) => write!(f, "{}..{m}", self.min),
            None => write!(f, "{}..*", self.min),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Range {
    Types(BTreeSet<String>),
    Literal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateRule {
    pub predicate: String,
    pub domain: BTreeSet<String>,
    pub range: Range,
    pub card: Cardinality,
}

impl PredicateRule {
    fn new(predicate: &str, domain: &[&str], range: Option<&[&str]>, card: Cardinality) -> Self {
        PredicateRule {
            predicate: predicate.to_string(),
            domain: domain.iter().map(|s| s.to_string()).collect(),
            range: match range {
                Some(r) => Range::Types(r.iter().map(|s| s.to_string()).collect()),
                None => Range::Literal,
            },
            card,
        }
    }

    pub fn applies_to(&self, subject_types: &[String]) -> bool {
        subject_types.iter().any(|t| self.domain.contains(t))
    }
}

/// Object of a relationship as seen by validation.
#[derive(Debug, Clone, Copy)]
pub enum ObjectKind<'a> {
    Typed(&'a [String]),
    Literal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    types: BTreeSet<String>,
    rules: BTreeMap<String, PredicateRule>,
    builtin: BTreeSet<String>,
}

fn builtin_rules() -> Vec<PredicateRule> {
    vec![
        PredicateRule::new(vocab::MEMBER_OF, &["Resource", "Metadata"], Some(&["Aggregation"]), Cardinality::ANY),
        PredicateRule::new(vocab::METADATA_FOR, &["Metadata"], Some(&["Resource"]), Cardinality::EXACTLY_ONE),
        PredicateRule::new(vocab::REPRESENTED_BY, &["Aggregation"], Some(&["Resource"]), Cardinality::EXACTLY_ONE),
        PredicateRule::new(vocab::AGGREGATOR_FOR, &["Agent"], Some(&["Aggregation"]), Cardinality::ANY),
    ]
}

/// Predicates the repository API itself relies on beyond the four core rules.
pub fn builtin_extensions() -> Vec<PredicateRule> {
    vec![
        PredicateRule::new(vocab::PROVIDED_BY, &["Metadata"], Some(&["Agent"]), Cardinality::EXACTLY_ONE),
        PredicateRule::new(vocab::SOURCE_RECORD_ID, &["Metadata"], None, Cardinality { min: 0, max: Some(1) }),
    ]
}

impl Default for Ontology {
    fn default() -> Self {
        Ontology::with_extensions()
    }
}

impl Ontology {
    /// The four core rules only.
    pub fn core() -> Self {
        let rules = builtin_rules();
        Ontology {
            types: BUILTIN_TYPES.iter().map(|s| s.to_string()).collect(),
            builtin: rules.iter().map(|r| r.predicate.clone()).collect(),
            rules: rules.into_iter().map(|r| (r.predicate.clone(), r)).collect(),
        }
    }

    /// Core rules plus `providedBy` and `sourceRecordId`.
    pub fn with_extensions() -> Self {
        let mut o = Ontology::core();
        for r in builtin_extensions() {
            o.builtin.insert(r.predicate.clone());
            o.rules.insert(r.predicate.clone(), r);
        }
        o
    }

    /// Parses `config` on top of `self`.
    pub fn extend(mut self, config: &str) -> Result<Self, OntologyError> {
        for (i, raw) in config.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| OntologyError::Parse { line: i + 1, message };
            let words: Vec<&str> = line.split_whitespace().collect();
            match words[0] {
                "type" => {
                    if words.len() != 2 {
                        return Err(parse_err("expected `type <Name>`".into()));
                    }
                    self.add_type(words[1])?;
                }
                "predicate" => {
                    let rule = parse_predicate_line(&words).map_err(parse_err)?;
                    self.add_rule(rule)?;
                }
                _ if line.contains("->") => {
                    let rule = parse_shorthand(line).map_err(parse_err)?;
                    self.add_rule(rule)?;
                }
                w => return Err(parse_err(format!("unknown directive `{w}`"))),
            }
        }
        Ok(self)
    }

    /// Loads a configuration over the default registry.
    pub fn load(config: &str) -> Result<Self, OntologyError> {
        Ontology::default().extend(config)
    }

    pub fn add_type(&mut self, name: &str) -> Result<(), OntologyError> {
        if BUILTIN_TYPES.contains(&name) {
            return Err(OntologyError::BuiltinRedefinition(name.to_string()));
        }
        if !crate::object_store::valid_type_name(name) {
            return Err(OntologyError::InvalidRule {
                predicate: String::new(),
                reason: format!("invalid type name `{name}`"),
            });
        }
        self.types.insert(name.to_string());
        Ok(())
    }

    pub fn add_rule(&mut self, rule: PredicateRule) -> Result<(), OntologyError> {
        let invalid = |reason: String| OntologyError::InvalidRule {
            predicate: rule.predicate.clone(),
            reason,
        };
        if self.builtin.contains(&rule.predicate) {
            return Err(OntologyError::BuiltinRedefinition(rule.predicate));
        }
        if vocab::SYSTEM_PREDICATES.contains(&rule.predicate.as_str()) {
            return Err(invalid("system predicates cannot carry rules".into()));
        }
        if self.rules.contains_key(&rule.predicate) {
            return Err(invalid("predicate declared twice".into()));
        }
        if !crate::term::is_absolute_iri(&rule.predicate) {
            return Err(invalid("predicate is not an absolute IRI".into()));
        }
        if rule.card.max.is_some_and(|m| m < rule.card.min) {
            return Err(invalid(format!("min exceeds max in {}", rule.card)));
        }
        if rule.domain.is_empty() {
            return Err(invalid("empty domain".into()));
        }
        let mut named: Vec<&String> = rule.domain.iter().collect();
        if let Range::Types(r) = &rule.range {
            if r.is_empty() {
                return Err(invalid("empty range".into()));
            }
            named.extend(r.iter());
        }
        if let Some(t) = named.into_iter().find(|t| !self.types.contains(*t)) {
            return Err(invalid(format!("unknown type `{t}`")));
        }
        self.rules.insert(rule.predicate.clone(), rule);
        Ok(())
    }

    /// Drops a rule, including the built-in extensions. Core rules stay.
    pub fn remove_rule(&mut self, predicate: &str) -> bool {
        let core = builtin_rules().iter().any(|r| r.predicate == predicate);
        if core {
            return false;
        }
        self.builtin.remove(predicate);
        self.rules.remove(predicate).is_some()
    }

    pub fn has_type(&self, name: &str) -> bool {
        self.types.contains(name)
    }

    pub fn types(&self) -> impl Iterator<Item = &str> {
        self.types.iter().map(String::as_str)
    }

    pub fn rule(&self, predicate: &str) -> Option<&PredicateRule> {
        self.rules.get(predicate)
    }

    pub fn rules(&self) -> impl Iterator<Item = &PredicateRule> {
        self.rules.values()
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    pub fn validate_relationship(
        &self,
        subject_types: &[String],
        predicate: &str,
        object: ObjectKind<'_>,
    ) -> Result<(), OntologyError> {
        let rule = self
            .rule(predicate)
            .ok_or_else(|| OntologyError::UnknownPredicate(predicate.to_string()))?;
        if !rule.applies_to(subject_types) {
            return Err(OntologyError::DomainViolation {
                predicate: predicate.to_string(),
                subject_types: subject_types.to_vec(),
            });
        }
        let ok = match (&rule.range, object) {
            (Range::Literal, ObjectKind::Literal) => true,
            (Range::Types(r), ObjectKind::Typed(types)) => types.iter().any(|t| r.contains(t)),
            _ => false,
        };
        if !ok {
            let object = match object {
                ObjectKind::Literal => "a literal".to_string(),
                ObjectKind::Typed(t) => format!("typed {t:?}"),
            };
            return Err(OntologyError::RangeViolation {
                predicate: predicate.to_string(),
                object,
            });
        }
        Ok(())
    }

    /// Fails unless `current + delta` lies within the predicate's bounds.
    pub fn check_cardinality(
        &self,
        subject: &str,
        predicate: &str,
        current: u32,
        delta: i64,
    ) -> Result<(), OntologyError> {
        let rule = self
            .rule(predicate)
            .ok_or_else(|| OntologyError::UnknownPredicate(predicate.to_string()))?;
        let attempted = current as i64 + delta;
        if rule.card.admits(attempted) {
            Ok(())
        } else {
            Err(OntologyError::CardinalityViolation {
                subject: subject.to_string(),
                predicate: predicate.to_string(),
                bound: rule.card,
                attempted,
            })
        }
    }
}

fn split_types(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect()
}

fn parse_card(s: &str) -> Result<Cardinality, String> {
    let (min, max) = s.split_once("..").ok_or_else(|| format!("bad cardinality `{s}`"))?;
    let min = min.trim().parse().map_err(|_| format!("bad minimum `{min}`"))?;
    let max = match max.trim() {
        "*" | "∞" => None,
        m => Some(m.parse().map_err(|_| format!("bad maximum `{m}`"))?),
    };
    Ok(Cardinality { min, max })
}

fn parse_range(words: &str) -> Range {
    if words.trim() == "Literal" {
        Range::Literal
    } else {
        Range::Types(split_types(words).into_iter().collect())
    }
}

fn predicate_iri(s: &str) -> String {
    match s.strip_prefix('<').and_then(|s| s.strip_suffix('>')) {
        Some(iri) => iri.to_string(),
        None => vocab::expand_predicate(s),
    }
}

fn parse_predicate_line(words: &[&str]) -> Result<PredicateRule, String> {
    // predicate <iri> domain <types> range <types> card <m..n>
    let mut fields: BTreeMap<&str, String> = BTreeMap::new();
    let mut key: Option<&str> = None;
    for w in &words[2.min(words.len())..] {
        match *w {
            "domain" | "range" | "card" => {
                if fields.contains_key(w) {
                    return Err(format!("`{w}` given twice"));
                }
                fields.insert(w, String::new());
                key = Some(w);
            }
            other => match key {
                Some(k) => fields.get_mut(k).expect("inserted").push_str(other),
                None => return Err(format!("unexpected `{other}`")),
            },
        }
    }
    if words.len() < 2 {
        return Err("missing predicate".into());
    }
    let get = |k: &str| fields.get(k).filter(|v| !v.is_empty()).ok_or_else(|| format!("missing `{k}`"));
    Ok(PredicateRule {
        predicate: predicate_iri(words[1]),
        domain: split_types(get("domain")?).into_iter().collect(),
        range: parse_range(get("range")?),
        card: parse_card(get("card")?)?,
    })
}

fn parse_shorthand(line: &str) -> Result<PredicateRule, String> {
    // name: Domain,.. -> Range,.., m..n
    let (name, rest) = line.split_once(':').ok_or("expected `name: Domain -> Range, m..n`")?;
    let (domain, rest) = rest.split_once("->").ok_or("missing `->`")?;
    let (range, card) = rest.rsplit_once(',').ok_or("missing cardinality")?;
    Ok(PredicateRule {
        predicate: predicate_iri(name.trim()),
        domain: split_types(domain).into_iter().collect(),
        range: parse_range(range),
        card: parse_card(card.trim())?,
    })
}
