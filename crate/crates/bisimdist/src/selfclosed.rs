//! Self-closed relations at a fixed point of the undiscounted one-step
//! operator, and the certified decrease step.
//!
//! A fixed point other than the least one admits a nonempty self-closed
//! relation: pairs whose optimal matchings can stay inside the relation
//! forever. Finding the largest such relation and pushing the fixed point
//! down on it drives the undiscounted algorithm towards the least fixed
//! point.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::automaton::Automaton;
use crate::lifting::{delta_apply, kantorovich, Counters, DistMatrix};
use crate::transport::{restricted_min, Restricted};

/// A set of ordered state pairs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairRelation {
    pairs: BTreeSet<(usize, usize)>,
}

impl PairRelation {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> PairRelation {
        PairRelation { pairs: pairs.into_iter().collect() }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn contains(&self, s: usize, t: usize) -> bool {
        self.pairs.contains(&(s, t))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn is_symmetric(&self) -> bool {
        self.pairs.iter().all(|&(s, t)| self.pairs.contains(&(t, s)))
    }
}

/// Certified decrease of a fixed point on a self-closed relation.
#[derive(Debug, Clone)]
pub struct DecreaseCert {
    pub theta: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub new_d: DistMatrix,
}

#[derive(Debug, Error)]
pub enum SelfClosedError {
    #[error("input is not a fixed point of the one-step operator (gap {gap:.3e})")]
    NotFixedPoint { gap: f64 },
    #[error("the relation is empty")]
    EmptyRelation,
    #[error("the relation is not self-closed at pair ({0}, {1})")]
    NotSelfClosed(usize, usize),
    #[error("the relation is not symmetric at pair ({0}, {1})")]
    NotSymmetric(usize, usize),
}

/// The matching condition at `(s, t)` on the side of `s`: every transition
/// of `s` whose best response already attains `d(s,t)` must admit a coupling
/// of that exact value supported inside the relation.
fn side_condition(
    d: &DistMatrix,
    a: &Automaton,
    s: usize,
    t: usize,
    rel: &impl Fn(usize, usize) -> bool,
    eps: f64,
    counters: &mut Counters,
) -> bool {
    let dst = d.get(s, t);
    for mu in a.dists(s) {
        let best = a
            .dists(t)
            .iter()
            .map(|nu| kantorovich(d, mu, nu, counters).0)
            .fold(f64::INFINITY, f64::min);
        if (dst - best).abs() > eps {
            continue; // premise not met for this transition
        }
        let witnessed = a.dists(t).iter().any(|nu| {
            match restricted_min(mu, nu, d, rel).expect("valid distributions") {
                Restricted::Value(v) => (v - dst).abs() <= eps,
                Restricted::Infeasible => false,
            }
        });
        if !witnessed {
            return false;
        }
    }
    true
}

/// Returns the first pair violating the self-closedness conditions, or
/// `None` when the relation is self-closed w.r.t. `d`.
pub fn selfclosed_violation(
    d: &DistMatrix,
    a: &Automaton,
    m: &PairRelation,
    eps: f64,
) -> Option<(usize, usize)> {
    let mut counters = Counters::default();
    let rel = |u: usize, v: usize| m.contains(u, v);
    for (s, t) in m.iter() {
        if a.label(s) != a.label(t) || d.get(s, t) <= eps {
            return Some((s, t));
        }
        if !side_condition(d, a, s, t, &rel, eps, &mut counters) {
            return Some((s, t));
        }
        // mirrored condition on the side of t
        if !side_condition(d, a, t, s, &|u, v| rel(v, u), eps, &mut counters) {
            return Some((s, t));
        }
    }
    None
}

/// The largest self-closed relation w.r.t. a fixed point `d`, computed by
/// refinement from all same-label pairs with positive distance, deleting
/// violating pairs between sweeps until stable.
pub fn largest_selfclosed(
    d: &DistMatrix,
    a: &Automaton,
    eps: f64,
) -> Result<PairRelation, SelfClosedError> {
    let mut counters = Counters::default();
    let gap = delta_apply(1.0, d, a, &mut counters).max_abs_diff(d);
    if gap > eps {
        return Err(SelfClosedError::NotFixedPoint { gap });
    }

    let n = a.num_states();
    // unordered candidates; the relation is kept symmetric throughout
    let mut m: BTreeSet<(usize, usize)> = BTreeSet::new();
    for s in 0..n {
        for t in s + 1..n {
            if a.label(s) == a.label(t) && d.get(s, t) > eps {
                m.insert((s, t));
            }
        }
    }
    loop {
        let rel = {
            let snapshot = m.clone();
            move |u: usize, v: usize| {
                let key = if u <= v { (u, v) } else { (v, u) };
                snapshot.contains(&key)
            }
        };
        let mut removals = Vec::new();
        for &(s, t) in &m {
            let keep = side_condition(d, a, s, t, &rel, eps, &mut counters)
                && side_condition(d, a, t, s, &rel, eps, &mut counters);
            if !keep {
                removals.push((s, t));
            }
        }
        if removals.is_empty() {
            break;
        }
        for p in removals {
            m.remove(&p);
        }
    }
    Ok(PairRelation::from_pairs(
        m.into_iter().flat_map(|(s, t)| [(s, t), (t, s)]),
    ))
}

/// Subtracts the certified step from `d` on a nonempty self-closed relation,
/// yielding a strictly smaller prefix point of the one-step operator.
pub fn decrease(
    d: &DistMatrix,
    m: &PairRelation,
    a: &Automaton,
    eps: f64,
) -> Result<DecreaseCert, SelfClosedError> {
    if m.is_empty() {
        return Err(SelfClosedError::EmptyRelation);
    }
    if let Some((s, t)) = m.iter().find(|&(s, t)| !m.contains(t, s)) {
        return Err(SelfClosedError::NotSymmetric(s, t));
    }
    if let Some((s, t)) = selfclosed_violation(d, a, m, eps) {
        return Err(SelfClosedError::NotSelfClosed(s, t));
    }

    let mut counters = Counters::default();
    // minimum over empty candidate sets is 1 by convention
    let mut theta1: f64 = 1.0;
    let mut theta2: f64 = 1.0;
    let mut theta3: f64 = 1.0;
    for (s, t) in m.iter() {
        theta3 = theta3.min(d.get(s, t));
        for mu in a.dists(s) {
            let best = a
                .dists(t)
                .iter()
                .map(|nu| kantorovich(d, mu, nu, &mut counters).0)
                .fold(f64::INFINITY, f64::min);
            let gap = d.get(s, t) - best;
            if gap > eps {
                theta1 = theta1.min(gap);
            }
        }
        for nu in a.dists(t) {
            let best = a
                .dists(s)
                .iter()
                .map(|mu| kantorovich(d, mu, nu, &mut counters).0)
                .fold(f64::INFINITY, f64::min);
            let gap = d.get(s, t) - best;
            if gap > eps {
                theta2 = theta2.min(gap);
            }
        }
    }
    let theta = theta1.min(theta2).min(theta3);
    let mut new_d = d.clone();
    for (s, t) in m.iter() {
        if s <= t {
            new_d.set_sym(s, t, (d.get(s, t) - theta).max(0.0));
        }
    }
    Ok(DecreaseCert { theta, theta1, theta2, theta3, new_d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::parse;

    fn fixture(name: &str) -> Automaton {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../fixtures")
            .join(name);
        parse(&std::fs::read_to_string(path).unwrap()).unwrap()
    }

    /// The one-parameter family of undiscounted fixed points on the coin
    /// model: alpha on the (t,u) pair, 1 across labels, 0 on the diagonal.
    fn coin_fixed_point(a: &Automaton, alpha: f64) -> DistMatrix {
        let (t, u) = (a.find_state("t").unwrap(), a.find_state("u").unwrap());
        let mut d = DistMatrix::label_mismatch(a);
        d.set_sym(t, u, alpha);
        d
    }

    #[test]
    fn coin_family_members_are_fixed_points() {
        let a = fixture("coin.json");
        for alpha in [0.5, 0.75, 1.0] {
            let d = coin_fixed_point(&a, alpha);
            let mut c = Counters::default();
            let gap = delta_apply(1.0, &d, &a, &mut c).max_abs_diff(&d);
            assert!(gap < 1e-12, "alpha {alpha}: gap {gap}");
        }
    }

    #[test]
    fn coin_largest_selfclosed_above_the_least_fixed_point() {
        let a = fixture("coin.json");
        let (t, u) = (a.find_state("t").unwrap(), a.find_state("u").unwrap());
        let m = largest_selfclosed(&coin_fixed_point(&a, 0.75), &a, 1e-6).unwrap();
        assert_eq!(m, PairRelation::from_pairs([(t, u), (u, t)]));
        assert!(selfclosed_violation(&coin_fixed_point(&a, 0.75), &a, &m, 1e-6).is_none());
    }

    #[test]
    fn coin_least_fixed_point_has_empty_selfclosed() {
        let a = fixture("coin.json");
        let m = largest_selfclosed(&coin_fixed_point(&a, 0.5), &a, 1e-6).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn gamblers_least_fixed_point_has_empty_selfclosed() {
        let a = fixture("gamblers.json");
        let (f, b) = (a.find_state("f").unwrap(), a.find_state("b").unwrap());
        let mut d = DistMatrix::label_mismatch(&a);
        d.set_sym(f, b, 0.01);
        let m = largest_selfclosed(&d, &a, 1e-6).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn rejects_non_fixed_points() {
        let a = fixture("coin.json");
        let d = DistMatrix::zero(3);
        assert!(matches!(
            largest_selfclosed(&d, &a, 1e-6),
            Err(SelfClosedError::NotFixedPoint { .. })
        ));
    }

    #[test]
    fn decrease_at_the_top_fixed_point() {
        let a = fixture("coin.json");
        let (t, u) = (a.find_state("t").unwrap(), a.find_state("u").unwrap());
        let d = coin_fixed_point(&a, 1.0);
        let m = PairRelation::from_pairs([(t, u), (u, t)]);
        let cert = decrease(&d, &m, &a, 1e-6).unwrap();
        assert!((cert.theta1 - 0.5).abs() < 1e-9);
        assert!((cert.theta2 - 0.5).abs() < 1e-9);
        assert!((cert.theta3 - 1.0).abs() < 1e-9);
        assert!((cert.theta - 0.5).abs() < 1e-9);
        assert!((cert.new_d.get(t, u) - 0.5).abs() < 1e-9);
        // the result is a prefix point
        let mut c = Counters::default();
        let step = delta_apply(1.0, &cert.new_d, &a, &mut c);
        assert!(step.le(&cert.new_d, 1e-6));
    }

    #[test]
    fn decrease_at_the_intermediate_fixed_point() {
        let a = fixture("coin.json");
        let (t, u) = (a.find_state("t").unwrap(), a.find_state("u").unwrap());
        let d = coin_fixed_point(&a, 0.75);
        let m = PairRelation::from_pairs([(t, u), (u, t)]);
        let cert = decrease(&d, &m, &a, 1e-6).unwrap();
        assert!((cert.theta - 0.25).abs() < 1e-9);
        assert!((cert.new_d.get(t, u) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn decrease_with_no_positive_gaps_uses_the_distance_itself() {
        let a = parse(
            r#"{"states":["x","y"],"labels":{"x":"a","y":"a"},
                "transitions":[{"from":"x","to":{"x":1}},{"from":"y","to":{"y":1}}]}"#,
        )
        .unwrap();
        let mut d = DistMatrix::zero(2);
        d.set_sym(0, 1, 0.3);
        let m = PairRelation::from_pairs([(0, 1), (1, 0)]);
        let cert = decrease(&d, &m, &a, 1e-6).unwrap();
        assert_eq!(cert.theta1, 1.0, "empty minimum defaults to one");
        assert_eq!(cert.theta2, 1.0);
        assert!((cert.theta3 - 0.3).abs() < 1e-12);
        assert!((cert.theta - 0.3).abs() < 1e-12);
        assert!(cert.new_d.get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn decrease_rejects_empty_or_foreign_relations() {
        let a = fixture("coin.json");
        let d = coin_fixed_point(&a, 0.75);
        assert!(matches!(
            decrease(&d, &PairRelation::default(), &a, 1e-6),
            Err(SelfClosedError::EmptyRelation)
        ));
        // a pair with zero distance is not self-closed
        let bogus = PairRelation::from_pairs([(0, 0)]);
        assert!(matches!(
            decrease(&d, &bogus, &a, 1e-6),
            Err(SelfClosedError::NotSelfClosed(0, 0))
        ));
    }
}
