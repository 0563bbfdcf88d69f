//! Reachability probabilities under randomized schedulers and verification
//! of the distance bound: the undiscounted distance between two states
//! bounds how far apart their optimal reachability probabilities can be.

use std::collections::VecDeque;

use thiserror::Error;

use crate::automaton::Automaton;
use crate::coupling::{SolveError, SWEEP_CAP};
use crate::lifting::DistMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Max,
    Min,
}

/// "Eventually a state whose label lies in `target`", optimised in the
/// given direction over schedulers.
#[derive(Debug, Clone)]
pub struct ReachQuery {
    pub target: Vec<usize>,
    pub mode: Mode,
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("unknown label: {0}")]
    UnknownLabel(String),
    #[error("target must be nonempty")]
    EmptyTarget,
}

impl ReachQuery {
    /// Resolves label names against the automaton's alphabet.
    pub fn from_names(a: &Automaton, names: &[String], mode: Mode) -> Result<ReachQuery, QueryError> {
        if names.is_empty() {
            return Err(QueryError::EmptyTarget);
        }
        let mut target = Vec::new();
        for name in names {
            target.push(a.find_label(name).ok_or_else(|| QueryError::UnknownLabel(name.clone()))?);
        }
        target.sort_unstable();
        target.dedup();
        Ok(ReachQuery { target, mode })
    }
}

/// Optimal probability, per state, of eventually visiting a target label.
/// Pure stationary schedulers suffice for reachability, so the value is the
/// least fixed point of the corresponding Bellman operator, computed after a
/// qualitative zero-probability precomputation.
pub fn reach_prob(a: &Automaton, q: &ReachQuery) -> Result<Vec<f64>, SolveError> {
    let n = a.num_states();
    let is_target: Vec<bool> = (0..n).map(|s| q.target.contains(&a.label(s))).collect();

    // states with value exactly zero under the chosen direction
    let pinned_zero: Vec<bool> = match q.mode {
        Mode::Max => {
            // cannot reach a target along any support path
            let mut reach = is_target.clone();
            let mut queue: VecDeque<usize> =
                (0..n).filter(|&s| is_target[s]).collect();
            let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
            for s in 0..n {
                for d in a.dists(s) {
                    for &(u, _) in d.entries() {
                        rev[u].push(s);
                    }
                }
            }
            while let Some(u) = queue.pop_front() {
                for &s in &rev[u] {
                    if !reach[s] {
                        reach[s] = true;
                        queue.push_back(s);
                    }
                }
            }
            (0..n).map(|s| !reach[s]).collect()
        }
        Mode::Min => {
            // greatest set of non-target states where some transition stays
            // inside the set: the scheduler can avoid the target forever
            let mut avoid: Vec<bool> = (0..n).map(|s| !is_target[s]).collect();
            loop {
                let mut changed = false;
                for s in 0..n {
                    if !avoid[s] {
                        continue;
                    }
                    let can_stay = a
                        .dists(s)
                        .iter()
                        .any(|d| d.entries().iter().all(|&(u, _)| avoid[u]));
                    if !can_stay {
                        avoid[s] = false;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
            avoid
        }
    };

    let mut x = vec![0.0; n];
    for s in 0..n {
        if is_target[s] {
            x[s] = 1.0;
        }
    }
    for _ in 0..SWEEP_CAP {
        let mut residual: f64 = 0.0;
        for s in 0..n {
            if is_target[s] || pinned_zero[s] {
                continue;
            }
            let over_dists = a
                .dists(s)
                .iter()
                .map(|d| d.entries().iter().map(|&(u, w)| w * x[u]).sum::<f64>());
            let next = match q.mode {
                Mode::Max => over_dists.fold(f64::NEG_INFINITY, f64::max),
                Mode::Min => over_dists.fold(f64::INFINITY, f64::min),
            }
            .clamp(0.0, 1.0);
            residual = residual.max((next - x[s]).abs());
            x[s] = next;
        }
        if residual <= 1e-12 {
            return Ok(x);
        }
    }
    Err(SolveError::NonConvergence { residual: 1e-12, sweeps: SWEEP_CAP })
}

/// A pair whose reachability gap exceeds its distance bound.
#[derive(Debug, Clone)]
pub struct BoundViolation {
    pub s: usize,
    pub t: usize,
    pub gap: f64,
    pub bound: f64,
}

/// Outcome of checking `|value(s) - value(t)| <= d1(s,t) + eps` over all
/// pairs for one query.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub violations: Vec<BoundViolation>,
    /// The pair with the least slack between gap and bound, for display.
    pub tightest: Option<BoundViolation>,
    pub values: Vec<f64>,
}

/// Verifies the distance bound for one reachability query against an
/// undiscounted distance matrix. An empty violation list is the expected
/// outcome.
pub fn check_bound(
    a: &Automaton,
    d1: &DistMatrix,
    q: &ReachQuery,
    eps: f64,
) -> Result<BoundReport, SolveError> {
    let values = reach_prob(a, q)?;
    let n = a.num_states();
    let mut violations = Vec::new();
    let mut tightest: Option<BoundViolation> = None;
    for s in 0..n {
        for t in s + 1..n {
            let gap = (values[s] - values[t]).abs();
            let bound = d1.get(s, t);
            let entry = BoundViolation { s, t, gap, bound };
            if gap > bound + eps {
                violations.push(entry.clone());
            }
            let slack = bound - gap;
            if tightest.as_ref().is_none_or(|b| slack < b.bound - b.gap) {
                tightest = Some(entry);
            }
        }
    }
    Ok(BoundReport { violations, tightest, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::parse;
    use crate::policy_iter::spi_undiscounted;

    fn fixture(name: &str) -> Automaton {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../fixtures")
            .join(name);
        parse(&std::fs::read_to_string(path).unwrap()).unwrap()
    }

    fn query(a: &Automaton, label: &str, mode: Mode) -> ReachQuery {
        ReachQuery::from_names(a, &[label.to_string()], mode).unwrap()
    }

    #[test]
    fn coin_max_reachability() {
        let a = fixture("coin.json");
        let (t, u, v) = (
            a.find_state("t").unwrap(),
            a.find_state("u").unwrap(),
            a.find_state("v").unwrap(),
        );
        let values = reach_prob(&a, &query(&a, "purple", Mode::Max)).unwrap();
        assert!((values[t] - 0.5).abs() < 1e-9);
        assert_eq!(values[u], 0.0);
        assert_eq!(values[v], 1.0);
    }

    #[test]
    fn coin_min_reachability() {
        let a = fixture("coin.json");
        let (t, u, v) = (
            a.find_state("t").unwrap(),
            a.find_state("u").unwrap(),
            a.find_state("v").unwrap(),
        );
        let values = reach_prob(&a, &query(&a, "purple", Mode::Min)).unwrap();
        assert_eq!(values[t], 0.0, "the self-loop avoids the target forever");
        assert_eq!(values[u], 0.0);
        assert_eq!(values[v], 1.0);
    }

    #[test]
    fn gamblers_max_reachability() {
        let a = fixture("gamblers.json");
        let values = reach_prob(&a, &query(&a, "red", Mode::Max)).unwrap();
        let (f, b) = (a.find_state("f").unwrap(), a.find_state("b").unwrap());
        let (h, t) = (a.find_state("h").unwrap(), a.find_state("t").unwrap());
        assert_eq!(values[f], 1.0, "choosing the sure transition to h");
        assert_eq!(values[b], 1.0);
        assert_eq!(values[h], 1.0);
        assert_eq!(values[t], 0.0);
    }

    #[test]
    fn unknown_label_is_rejected() {
        let a = fixture("coin.json");
        assert!(matches!(
            ReachQuery::from_names(&a, &["chartreuse".into()], Mode::Max),
            Err(QueryError::UnknownLabel(_))
        ));
    }

    #[test]
    fn coin_bound_is_tight() {
        let a = fixture("coin.json");
        let d1 = spi_undiscounted(&a, 1e-6, true).unwrap().final_d;
        let report = check_bound(&a, &d1, &query(&a, "purple", Mode::Max), 1e-6).unwrap();
        assert!(report.violations.is_empty());
        let tight = report.tightest.unwrap();
        let (t, u) = (a.find_state("t").unwrap(), a.find_state("u").unwrap());
        assert_eq!((tight.s, tight.t), (t, u));
        assert!((tight.gap - 0.5).abs() < 1e-6);
        assert!((tight.bound - 0.5).abs() < 1e-6);
    }

    #[test]
    fn gamblers_bound_holds() {
        let a = fixture("gamblers.json");
        let d1 = spi_undiscounted(&a, 1e-6, true).unwrap().final_d;
        for mode in [Mode::Max, Mode::Min] {
            let report = check_bound(&a, &d1, &query(&a, "red", mode), 1e-6).unwrap();
            assert!(report.violations.is_empty());
        }
    }

    #[test]
    fn max_dominates_min() {
        let a = fixture("gamblers.json");
        let max = reach_prob(&a, &query(&a, "blue", Mode::Max)).unwrap();
        let min = reach_prob(&a, &query(&a, "blue", Mode::Min)).unwrap();
        for s in 0..a.num_states() {
            assert!(max[s] >= min[s] - 1e-12);
            assert!((0.0..=1.0).contains(&max[s]));
        }
    }
}
