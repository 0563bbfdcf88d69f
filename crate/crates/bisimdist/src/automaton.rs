//! Labelled probabilistic automata: data model, file format, validation and
//! seeded random generation.
//!
//! An automaton has a finite set of labelled states; each state owns one or
//! more probability distributions over successor states (the transition
//! relation is total). Distributions are stored sparsely over their support.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use thiserror::Error;

/// Tolerance on the total mass of a probability distribution.
pub const MASS_TOL: f64 = 1e-9;

/// Sparse probability distribution over state indices.
///
/// Entries are sorted by state index, all weights are strictly positive and
/// the total mass is 1 within [`MASS_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dist {
    entries: Vec<(usize, f64)>,
}

impl Dist {
    /// Builds a distribution from (state, weight) pairs, merging duplicates
    /// and dropping zero weights. Fails on negative weights or bad mass.
    pub fn from_pairs(pairs: &[(usize, f64)]) -> Result<Dist, ParseError> {
        let mut map: BTreeMap<usize, f64> = BTreeMap::new();
        for &(s, w) in pairs {
            if w < 0.0 || !w.is_finite() {
                return Err(ParseError::WeightOutOfRange { state: s, weight: w });
            }
            *map.entry(s).or_insert(0.0) += w;
        }
        let entries: Vec<(usize, f64)> = map.into_iter().filter(|&(_, w)| w > 0.0).collect();
        let mass: f64 = entries.iter().map(|&(_, w)| w).sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(ParseError::MassMismatch { mass });
        }
        Ok(Dist { entries })
    }

    /// Point mass at `s`.
    pub fn dirac(s: usize) -> Dist {
        Dist { entries: vec![(s, 1.0)] }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn support_size(&self) -> usize {
        self.entries.len()
    }

    /// Probability assigned to `s` (zero off the support).
    pub fn prob(&self, s: usize) -> f64 {
        self.entries
            .binary_search_by_key(&s, |&(i, _)| i)
            .map(|k| self.entries[k].1)
            .unwrap_or(0.0)
    }

    pub fn mass(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w).sum()
    }
}

/// A finite labelled probabilistic automaton.
///
/// States are dense indices `0..n` with display names; `labels[s]` is the
/// label id of state `s` and `transitions[s]` its nonempty set of successor
/// distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct Automaton {
    state_names: Vec<String>,
    labels: Vec<usize>,
    label_names: Vec<String>,
    transitions: Vec<Vec<Dist>>,
}

impl Automaton {
    pub fn new(
        state_names: Vec<String>,
        labels: Vec<usize>,
        label_names: Vec<String>,
        transitions: Vec<Vec<Dist>>,
    ) -> Automaton {
        Automaton { state_names, labels, label_names, transitions }
    }

    pub fn num_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn num_labels(&self) -> usize {
        self.label_names.len()
    }

    pub fn label(&self, s: usize) -> usize {
        self.labels[s]
    }

    /// Successor distributions of state `s`.
    pub fn dists(&self, s: usize) -> &[Dist] {
        &self.transitions[s]
    }

    pub fn state_name(&self, s: usize) -> &str {
        &self.state_names[s]
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn label_name(&self, l: usize) -> &str {
        &self.label_names[l]
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn find_state(&self, name: &str) -> Option<usize> {
        self.state_names.iter().position(|n| n == name)
    }

    pub fn find_label(&self, name: &str) -> Option<usize> {
        self.label_names.iter().position(|n| n == name)
    }

    /// Total number of distributions, summed over all states.
    pub fn num_dists(&self) -> usize {
        self.transitions.iter().map(|d| d.len()).sum()
    }

    /// Checks all structural invariants and returns the violations found.
    /// An empty list means the automaton is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let n = self.num_states();
        let mut out = Vec::new();
        if self.labels.len() != n || self.transitions.len() != n {
            out.push(Violation::Structural("state/label/transition arity mismatch".into()));
            return out;
        }
        for (s, &l) in self.labels.iter().enumerate() {
            if l >= self.label_names.len() {
                out.push(Violation::Structural(format!("state {s} has unknown label id {l}")));
            }
        }
        for (s, dists) in self.transitions.iter().enumerate() {
            if dists.is_empty() {
                out.push(Violation::NonTotal { state: s });
            }
            for (k, d) in dists.iter().enumerate() {
                let mass = d.mass();
                if (mass - 1.0).abs() > MASS_TOL {
                    out.push(Violation::Mass { state: s, dist: k, mass });
                }
                for &(target, w) in d.entries() {
                    if target >= n {
                        out.push(Violation::UnknownTarget { state: s, dist: k, target });
                    }
                    if !(w > 0.0 && w <= 1.0 + MASS_TOL) {
                        out.push(Violation::WeightOutOfRange { state: s, dist: k, weight: w });
                    }
                }
            }
        }
        out
    }
}

/// A single invariant violation reported by [`Automaton::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Non-total transition relation: a state with no outgoing distribution.
    NonTotal { state: usize },
    Mass { state: usize, dist: usize, mass: f64 },
    UnknownTarget { state: usize, dist: usize, target: usize },
    WeightOutOfRange { state: usize, dist: usize, weight: f64 },
    Structural(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonTotal { state } => {
                write!(f, "non-total transition relation: state {state} has no distribution")
            }
            Violation::Mass { state, dist, mass } => {
                write!(f, "mass mismatch: distribution {dist} of state {state} sums to {mass}")
            }
            Violation::UnknownTarget { state, dist, target } => {
                write!(f, "unknown state reference {target} in distribution {dist} of state {state}")
            }
            Violation::WeightOutOfRange { state, dist, weight } => {
                write!(f, "weight out of range: {weight} in distribution {dist} of state {state}")
            }
            Violation::Structural(msg) => write!(f, "{msg}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("malformed syntax: {0}")]
    Syntax(String),
    #[error("unknown state reference: {0}")]
    UnknownState(String),
    #[error("mass mismatch: distribution sums to {mass}")]
    MassMismatch { mass: f64 },
    #[error("weight out of range for state {state}: {weight}")]
    WeightOutOfRange { state: usize, weight: f64 },
    #[error("invalid automaton: {0}")]
    Invalid(Violation),
}

fn parse_weight(v: &Value) -> Result<f64, ParseError> {
    match v {
        Value::Number(n) => n
            .as_f64()
            .ok_or_else(|| ParseError::Syntax(format!("bad number {n}"))),
        Value::String(s) => {
            if let Some((p, q)) = s.split_once('/') {
                let p: f64 = p.trim().parse().map_err(|_| {
                    ParseError::Syntax(format!("bad fraction numerator in {s:?}"))
                })?;
                let q: f64 = q.trim().parse().map_err(|_| {
                    ParseError::Syntax(format!("bad fraction denominator in {s:?}"))
                })?;
                if q == 0.0 {
                    return Err(ParseError::Syntax(format!("zero denominator in {s:?}")));
                }
                Ok(p / q)
            } else {
                s.trim()
                    .parse()
                    .map_err(|_| ParseError::Syntax(format!("bad weight {s:?}")))
            }
        }
        other => Err(ParseError::Syntax(format!("weight must be number or string, got {other}"))),
    }
}

/// Parses the textual automaton format.
///
/// The format is a JSON object with `states` (array of names), `labels`
/// (name → label string) and `transitions` (array of `{"from": name,
/// "to": {name: weight}}` entries). Weights are decimal numbers or exact
/// `"p/q"` fraction strings.
pub fn parse(text: &str) -> Result<Automaton, ParseError> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| ParseError::Syntax(e.to_string()))?;
    let obj = root
        .as_object()
        .ok_or_else(|| ParseError::Syntax("top level must be an object".into()))?;

    let states = obj
        .get("states")
        .and_then(Value::as_array)
        .ok_or_else(|| ParseError::Syntax("missing \"states\" array".into()))?;
    let mut state_names = Vec::with_capacity(states.len());
    for s in states {
        let name = s
            .as_str()
            .ok_or_else(|| ParseError::Syntax("state names must be strings".into()))?;
        if state_names.iter().any(|n: &String| n == name) {
            return Err(ParseError::Syntax(format!("duplicate state {name:?}")));
        }
        state_names.push(name.to_string());
    }
    let index_of = |name: &str| -> Result<usize, ParseError> {
        state_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| ParseError::UnknownState(name.to_string()))
    };

    let labels_obj = obj
        .get("labels")
        .and_then(Value::as_object)
        .ok_or_else(|| ParseError::Syntax("missing \"labels\" object".into()))?;
    let mut label_names: Vec<String> = Vec::new();
    let mut labels = vec![usize::MAX; state_names.len()];
    for (state, label) in labels_obj {
        let s = index_of(state)?;
        let l = label
            .as_str()
            .ok_or_else(|| ParseError::Syntax("labels must be strings".into()))?;
        let id = label_names.iter().position(|n| n == l).unwrap_or_else(|| {
            label_names.push(l.to_string());
            label_names.len() - 1
        });
        labels[s] = id;
    }
    if let Some(s) = labels.iter().position(|&l| l == usize::MAX) {
        return Err(ParseError::Syntax(format!("state {:?} has no label", state_names[s])));
    }

    let trans = obj
        .get("transitions")
        .and_then(Value::as_array)
        .ok_or_else(|| ParseError::Syntax("missing \"transitions\" array".into()))?;
    let mut transitions: Vec<Vec<Dist>> = vec![Vec::new(); state_names.len()];
    for t in trans {
        let t = t
            .as_object()
            .ok_or_else(|| ParseError::Syntax("transition entries must be objects".into()))?;
        let from = t
            .get("from")
            .and_then(Value::as_str)
            .ok_or_else(|| ParseError::Syntax("transition missing \"from\"".into()))?;
        let s = index_of(from)?;
        let to = t
            .get("to")
            .and_then(Value::as_object)
            .ok_or_else(|| ParseError::Syntax("transition missing \"to\" object".into()))?;
        let mut pairs = Vec::with_capacity(to.len());
        for (target, w) in to {
            pairs.push((index_of(target)?, parse_weight(w)?));
        }
        transitions[s].push(Dist::from_pairs(&pairs)?);
    }

    let a = Automaton::new(state_names, labels, label_names, transitions);
    let violations = a.validate();
    if let Some(v) = violations.into_iter().next() {
        return Err(ParseError::Invalid(v));
    }
    Ok(a)
}

/// Serializes to the canonical form of the file format: states in index
/// order, decimal weights. `parse(serialize(a)) == a` exactly.
pub fn serialize(a: &Automaton) -> String {
    let mut labels = Map::new();
    for s in 0..a.num_states() {
        labels.insert(
            a.state_name(s).to_string(),
            Value::String(a.label_name(a.label(s)).to_string()),
        );
    }
    let mut transitions = Vec::new();
    for s in 0..a.num_states() {
        for d in a.dists(s) {
            let mut to = Map::new();
            for &(target, w) in d.entries() {
                to.insert(a.state_name(target).to_string(), json!(w));
            }
            transitions.push(json!({"from": a.state_name(s), "to": Value::Object(to)}));
        }
    }
    let root = json!({
        "states": a.state_names(),
        "labels": Value::Object(labels),
        "transitions": transitions,
    });
    serde_json::to_string_pretty(&root).expect("automaton serialization")
}

/// Parameters for seeded random instance generation.
#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    /// Number of states.
    pub n: usize,
    /// Inclusive range for the per-state number of distributions.
    pub nd_degree: (usize, usize),
    /// Inclusive range for the support size of each distribution.
    pub prob_degree: (usize, usize),
    pub label_count: usize,
    pub seed: u64,
}

#[derive(Debug, Error)]
#[error("invalid generation parameters: {0}")]
pub struct InvalidParams(String);

impl GenParams {
    pub fn validate(&self) -> Result<(), InvalidParams> {
        if self.n < 1 {
            return Err(InvalidParams("need at least one state".into()));
        }
        let (klo, khi) = self.nd_degree;
        if klo < 1 || klo > khi {
            return Err(InvalidParams(format!("bad nondeterministic degree range {klo}..{khi}")));
        }
        let (plo, phi) = self.prob_degree;
        if plo < 1 || plo > phi {
            return Err(InvalidParams(format!("bad probabilistic degree range {plo}..{phi}")));
        }
        if plo > self.n {
            return Err(InvalidParams(format!(
                "support size {plo} exceeds state count {}",
                self.n
            )));
        }
        if self.label_count < 1 {
            return Err(InvalidParams("need at least one label".into()));
        }
        Ok(())
    }
}

/// Generates a random automaton, deterministically from the seed.
///
/// Supports are drawn uniformly without replacement, weights are normalized
/// i.i.d. uniforms on (0,1], labels are uniform over the alphabet.
pub fn generate(p: &GenParams) -> Result<Automaton, InvalidParams> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let n = p.n;
    let state_names: Vec<String> = (0..n).map(|s| format!("s{s}")).collect();
    let label_names: Vec<String> = (0..p.label_count).map(|l| format!("l{l}")).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..p.label_count)).collect();

    let all_states: Vec<usize> = (0..n).collect();
    let mut transitions = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.gen_range(p.nd_degree.0..=p.nd_degree.1);
        let mut dists = Vec::with_capacity(k);
        for _ in 0..k {
            let draw = rng.gen_range(p.prob_degree.0..=p.prob_degree.1);
            let size = draw.min(n);
            let mut support: Vec<usize> =
                all_states.choose_multiple(&mut rng, size).copied().collect();
            support.sort_unstable();
            let raw: Vec<f64> = (0..size).map(|_| 1.0 - rng.gen::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            let entries: Vec<(usize, f64)> =
                support.into_iter().zip(raw.into_iter().map(|w| w / total)).collect();
            dists.push(Dist { entries });
        }
        transitions.push(dists);
    }
    Ok(Automaton::new(state_names, labels, label_names, transitions))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(name: &str) -> String {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../fixtures")
            .join(name);
        std::fs::read_to_string(path).expect("fixture file")
    }

    #[test]
    fn parses_gamblers_fixture() {
        let a = parse(&fixture("gamblers.json")).unwrap();
        assert_eq!(a.num_states(), 4);
        let f = a.find_state("f").unwrap();
        let h = a.find_state("h").unwrap();
        assert_eq!(a.dists(f).len(), 3);
        assert_eq!(a.dists(h).len(), 1);
        assert!(a.validate().is_empty());
        // exact fraction parsing
        let t = a.find_state("t").unwrap();
        assert_eq!(a.dists(f)[2].prob(h), 0.5);
        assert_eq!(a.dists(f)[2].prob(t), 0.5);
        let b = a.find_state("b").unwrap();
        assert_eq!(a.dists(b)[2].prob(h), 0.51);
    }

    #[test]
    fn parses_single_dirac_self_loop() {
        let a = parse(r#"{"states":["s"],"labels":{"s":"a"},"transitions":[{"from":"s","to":{"s":1}}]}"#)
            .unwrap();
        assert_eq!(a.num_states(), 1);
        assert_eq!(a.dists(0).len(), 1);
    }

    #[test]
    fn rejects_bad_mass() {
        let err = parse(
            r#"{"states":["s"],"labels":{"s":"a"},"transitions":[{"from":"s","to":{"s":0.999}}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("mass mismatch"), "{err}");
    }

    #[test]
    fn rejects_unknown_state() {
        let err = parse(
            r#"{"states":["s"],"labels":{"s":"a"},"transitions":[{"from":"s","to":{"x":1}}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, ParseError::UnknownState(_)));
    }

    #[test]
    fn rejects_non_total() {
        let err = parse(
            r#"{"states":["s","r"],"labels":{"s":"a","r":"a"},"transitions":[{"from":"s","to":{"s":1}}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("non-total"), "{err}");
    }

    #[test]
    fn validate_reports_all_violations() {
        let a = Automaton::new(
            vec!["x".into(), "y".into()],
            vec![0, 0],
            vec!["a".into()],
            vec![vec![], vec![Dist { entries: vec![(1, -0.5), (0, 1.5)] }]],
        );
        let violations = a.validate();
        assert!(violations.iter().any(|v| matches!(v, Violation::NonTotal { state: 0 })));
        assert!(violations.iter().any(|v| matches!(v, Violation::WeightOutOfRange { .. })));
    }

    #[test]
    fn roundtrip_is_identity() {
        for name in ["gamblers.json", "coin.json"] {
            let a = parse(&fixture(name)).unwrap();
            let b = parse(&serialize(&a)).unwrap();
            assert_eq!(a, b);
            // canonical form is stable
            assert_eq!(serialize(&a), serialize(&b));
        }
    }

    #[test]
    fn generate_matches_degree_parameters() {
        let p = GenParams {
            n: 10,
            nd_degree: (1, 3),
            prob_degree: (2, 3),
            label_count: 2,
            seed: 42,
        };
        let a = generate(&p).unwrap();
        assert_eq!(a.num_states(), 10);
        assert!(a.validate().is_empty());
        for s in 0..10 {
            assert!((1..=3).contains(&a.dists(s).len()));
            for d in a.dists(s) {
                assert!((2..=3).contains(&d.support_size()));
            }
        }
    }

    #[test]
    fn generate_single_state_is_dirac_loop() {
        let p = GenParams { n: 1, nd_degree: (1, 1), prob_degree: (1, 1), label_count: 1, seed: 0 };
        let a = generate(&p).unwrap();
        assert_eq!(a.dists(0), &[Dist::dirac(0)]);
    }

    #[test]
    fn generate_is_deterministic() {
        let p = GenParams {
            n: 12,
            nd_degree: (1, 3),
            prob_degree: (2, 3),
            label_count: 3,
            seed: 7,
        };
        let a = generate(&p).unwrap();
        let b = generate(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(serialize(&a), serialize(&b));
    }

    #[test]
    fn generated_automata_validate() {
        for seed in 0..30 {
            let p = GenParams {
                n: 1 + (seed as usize % 9),
                nd_degree: (1, 3),
                prob_degree: (1, 2.min(1 + seed as usize % 9)),
                label_count: 2,
                seed,
            };
            let a = generate(&p).unwrap();
            assert!(a.validate().is_empty(), "seed {seed}");
        }
    }
}
