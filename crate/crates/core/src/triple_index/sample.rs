//! Random conjunctive queries drawn from an existing triple set, for
//! benchmarks and equivalence testing.

use std::collections::{BTreeMap, HashMap};

use rand::seq::IndexedRandom;
use rand::Rng;

use super::query::{ConjunctiveQuery, PatternTerm, TriplePattern, MAX_PATTERNS};
use crate::term::{Term, Triple};

/// Builds queries by walking connected triples and generalizing some of
/// their terms into variables, so most queries have at least one answer.
pub struct QuerySampler<'a> {
    triples: &'a [Triple],
    by_node: HashMap<&'a str, Vec<usize>>,
}

impl<'a> QuerySampler<'a> {
    pub fn new(triples: &'a [Triple]) -> Self {
        let mut by_node: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, t) in triples.iter().enumerate() {
            by_node.entry(t.subject.as_str()).or_default().push(i);
            if let Term::Iri(o) = &t.object {
                by_node.entry(o.as_str()).or_default().push(i);
            }
        }
        QuerySampler { triples, by_node }
    }

    /// A query of up to `patterns` patterns. With probability `miss` one
    /// constant is replaced by an IRI absent from the data.
    pub fn sample(&self, rng: &mut impl Rng, patterns: usize, miss: f64) -> Option<ConjunctiveQuery> {
        let patterns = patterns.clamp(1, MAX_PATTERNS);
        if self.triples.is_empty() {
            return None;
        }
        let mut chosen = vec![rng.random_range(0..self.triples.len())];
        let mut tries = 0;
        while chosen.len() < patterns && tries < 8 * patterns {
            tries += 1;
            let from = &self.triples[*chosen.choose(rng)?];
            let node = match (&from.object, rng.random_bool(0.5)) {
                (Term::Iri(o), true) => o.as_str(),
                _ => from.subject.as_str(),
            };
            let Some(next) = self.by_node.get(node).and_then(|c| c.choose(rng)) else {
                continue;
            };
            if !chosen.contains(next) {
                chosen.push(*next);
            }
        }

        // Nodes shared by two chosen triples become join variables; at most two
        // leaf nodes are generalized so answers stay bounded.
        let mut uses: HashMap<&str, usize> = HashMap::new();
        for &i in &chosen {
            let t = &self.triples[i];
            *uses.entry(t.subject.as_str()).or_default() += 1;
            if let Term::Iri(o) = &t.object {
                *uses.entry(o.as_str()).or_default() += 1;
            }
        }
        let mut node_vars: BTreeMap<&str, Option<String>> = BTreeMap::new();
        let mut fresh = 0usize;
        let mut leaf_vars = 0usize;
        let next_var = |fresh: &mut usize| {
            *fresh += 1;
            format!("v{fresh}")
        };
        let mut out = Vec::with_capacity(chosen.len());
        for &i in &chosen {
            let t = &self.triples[i];
            let mut node = |s: &'a str, rng: &mut dyn rand::RngCore, fresh: &mut usize| -> PatternTerm {
                let slot = node_vars.entry(s).or_insert_with(|| {
                    let shared = uses[s] > 1;
                    let leaf = !shared && leaf_vars < 2 && rng.random_bool(0.5);
                    leaf_vars += usize::from(leaf);
                    (shared || leaf).then(|| next_var(fresh))
                });
                match slot {
                    Some(v) => PatternTerm::Var(v.clone()),
                    None => PatternTerm::Const(Term::Iri(s.to_string())),
                }
            };
            let s = node(t.subject.as_str(), rng, &mut fresh);
            let o = match &t.object {
                Term::Iri(o) => node(o.as_str(), rng, &mut fresh),
                Term::Literal(_) if rng.random_bool(0.3) => PatternTerm::Var(next_var(&mut fresh)),
                lit => PatternTerm::Const(lit.clone()),
            };
            let p = if rng.random_bool(0.1) && (s.as_const().is_some() || o.as_const().is_some()) {
                PatternTerm::Var(next_var(&mut fresh))
            } else {
                PatternTerm::Const(Term::Iri(t.predicate.clone()))
            };
            out.push(TriplePattern::new(s, p, o));
        }

        if rng.random_bool(miss) {
            let k = rng.random_range(0..out.len());
            out[k].predicate = PatternTerm::Const(Term::Iri("info:ino/def#absentPredicate".into()));
        }
        let mut vars: Vec<String> = Vec::new();
        for p in &out {
            for v in p.vars() {
                if !vars.iter().any(|x| x == v) {
                    vars.push(v.to_string());
                }
            }
        }
        if vars.is_empty() {
            // Generalize one subject so there is something to project.
            out[0].subject = PatternTerm::Var("v0".into());
            vars.push("v0".into());
        }
        let projected: Vec<&str> = {
            let picked: Vec<&str> = vars.iter().filter(|_| rng.random_bool(0.6)).map(String::as_str).collect();
            if picked.is_empty() {
                vec![vars[0].as_str()]
            } else {
                picked
            }
        };
        ConjunctiveQuery::new(out, &projected).ok()
    }
}
