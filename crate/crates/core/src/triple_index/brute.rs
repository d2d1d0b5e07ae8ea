use std::collections::HashMap;

use super::query::{ConjunctiveQuery, PatternTerm, QueryError, Solutions};
use crate::term::{Term, Triple};

pub const BRUTE_FORCE_LIMIT: usize = 1_000_000;

/// Reference semantics: patterns in their given order, each filtered over
/// the full triple list and joined against the bindings so far.
pub fn evaluate_brute_force(triples: &[Triple], q: &ConjunctiveQuery) -> Result<Solutions, QueryError> {
    q.validate()?;
    if triples.len() > BRUTE_FORCE_LIMIT {
        return Err(QueryError::OracleTooLarge {
            triples: triples.len(),
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let rows: Vec<[Term; 3]> = triples
        .iter()
        .map(|t| [Term::Iri(t.subject.clone()), Term::Iri(t.predicate.clone()), t.object.clone()])
        .collect();
    let mut bindings: Vec<HashMap<&str, &Term>> = vec![HashMap::new()];
    for p in &q.patterns {
        let positions = p.positions();
        let candidates: Vec<&[Term; 3]> = rows
            .iter()
            .filter(|r| positions.iter().zip(r.iter()).all(|(pos, v)| pos.as_const().is_none_or(|c| c == v)))
            .collect();
        let mut next = Vec::new();
        for b in &bindings {
            for r in &candidates {
                let mut nb = HashMap::new();
                let ok = positions.iter().zip(r.iter()).all(|(pos, v)| match pos {
                    PatternTerm::Const(_) => true,
                    PatternTerm::Var(name) => match b.get(name.as_str()).or(nb.get(name.as_str())) {
                        Some(bound) => *bound == v,
                        None => {
                            nb.insert(name.as_str(), v);
                            true
                        }
                    },
                });
                if ok {
                    let mut merged = b.clone();
                    merged.extend(nb);
                    next.push(merged);
                }
            }
        }
        bindings = next;
    }
    let solutions = bindings
        .into_iter()
        .map(|b| q.projected.iter().map(|v| b[v.as_str()].clone()).collect())
        .collect();
    Ok(Solutions::from_rows(q.projected.clone(), solutions))
}
