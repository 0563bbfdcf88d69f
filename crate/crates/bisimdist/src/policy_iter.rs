//! Simple policy iteration over coupling structures.
//!
//! The discounted solver improves the structure one state pair at a time
//! until its discrepancy is a fixed point of the one-step operator; the
//! unique fixed point is the distance. The undiscounted solver wraps the
//! same inner loop in an outer loop that certifies least-ness through the
//! largest self-closed relation, decreasing and re-initialising whenever a
//! non-minimal fixed point is reached.

use std::collections::HashSet;
use std::time::Instant;

use thiserror::Error;

use crate::automaton::Automaton;
use crate::bisim::bisimilarity;
use crate::coupling::{discrepancy, CouplingStructure, SolveError, ZeroPairs};
use crate::lifting::{delta_at, hausdorff_with_plans, Counters, DistMatrix, SetCoupling};
use crate::selfclosed::{decrease, largest_selfclosed, SelfClosedError};
use crate::transport::Coupling;

/// Cap on coupling structures per run. Termination is guaranteed with exact
/// arithmetic; the cap turns a numerical livelock into a reported error.
const STRUCTURE_CAP: u64 = 100_000;
/// Cap on outer-loop executions of the undiscounted solver.
const OUTER_CAP: u64 = 10_000;

/// Run summary of a policy-iteration solve.
#[derive(Debug, Clone)]
pub struct SpiTrace {
    /// Coupling structures generated, i.e. discrepancy computations.
    pub iterations: u64,
    /// Transportation problems solved.
    pub tp_count: u64,
    /// Outer-loop executions (zero for the discounted solver).
    pub outer_loops: u64,
    pub wall_time: f64,
    pub final_d: DistMatrix,
}

#[derive(Debug, Error)]
pub enum SpiError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("policy iteration exceeded {structures} coupling structures")]
    IterationCap { structures: u64 },
    #[error("internal invariant failed: {0}")]
    Internal(String),
}

impl From<SelfClosedError> for SpiError {
    fn from(e: SelfClosedError) -> SpiError {
        SpiError::Internal(e.to_string())
    }
}

/// First pair, in row-major order, where one step of the operator drops the
/// value by more than `eps`; `None` at an approximate fixed point.
pub fn find_violator(
    d: &DistMatrix,
    a: &Automaton,
    lambda: f64,
    eps: f64,
) -> Option<(usize, usize)> {
    let mut counters = Counters::default();
    let n = a.num_states();
    for s in 0..n {
        for t in s + 1..n {
            if a.label(s) != a.label(t) {
                continue; // the operator yields 1 there, never a decrease
            }
            if d.get(s, t) <= eps {
                continue; // the operator is nonnegative
            }
            let v = delta_at(lambda, d, a, s, t, &mut counters);
            if v < d.get(s, t) - eps {
                return Some((s, t));
            }
        }
    }
    None
}

struct Run<'a> {
    a: &'a Automaton,
    lambda: f64,
    eps: f64,
    /// Discrepancies are solved ten times tighter than the comparison
    /// margin so their error cannot flip an improvement test.
    eps_in: f64,
    zero: ZeroPairs,
    counters: Counters,
    structures: u64,
    seen: HashSet<String>,
}

impl<'a> Run<'a> {
    fn new(a: &'a Automaton, lambda: f64, eps: f64, zero: ZeroPairs) -> Run<'a> {
        Run {
            a,
            lambda,
            eps,
            eps_in: eps / 10.0,
            zero,
            counters: Counters::default(),
            structures: 0,
            seen: HashSet::new(),
        }
    }

    /// Solves the discrepancy of a structure, enforcing the no-repeat and
    /// cap invariants.
    fn discrepancy_of(&mut self, c: &CouplingStructure) -> Result<DistMatrix, SpiError> {
        if !self.seen.insert(c.key()) {
            return Err(SpiError::Internal(
                "coupling structure repeated within a run".into(),
            ));
        }
        self.structures += 1;
        if self.structures > STRUCTURE_CAP {
            return Err(SpiError::IterationCap { structures: self.structures });
        }
        Ok(discrepancy(c, self.a, self.lambda, self.eps_in, &self.zero)?)
    }

    /// Row-major scan for a pair where the structure is improvable, together
    /// with the greedy set-coupling and the plans backing it.
    #[allow(clippy::type_complexity)]
    fn violator_with_witness(
        &mut self,
        gamma: &DistMatrix,
    ) -> Option<(usize, usize, SetCoupling, Vec<Vec<(f64, Coupling)>>)> {
        let n = self.a.num_states();
        for s in 0..n {
            for t in s + 1..n {
                if self.a.label(s) != self.a.label(t) || self.zero.contains(s, t) {
                    continue;
                }
                // the operator is nonnegative, so a near-zero entry cannot
                // strictly decrease
                if gamma.get(s, t) <= self.eps {
                    continue;
                }
                let (h, r, plans) = hausdorff_with_plans(
                    gamma,
                    self.a.dists(s),
                    self.a.dists(t),
                    &mut self.counters,
                );
                if self.lambda * h < gamma.get(s, t) - self.eps {
                    return Some((s, t, r, plans));
                }
            }
        }
        None
    }

    /// Policy improvement until the discrepancy is an approximate fixed
    /// point of the one-step operator. Every update strictly decreases the
    /// discrepancy at the updated pair; the descent is asserted.
    fn inner_loop(&mut self, c: &mut CouplingStructure) -> Result<DistMatrix, SpiError> {
        let mut gamma = self.discrepancy_of(c)?;
        while let Some((s, t, r, plans)) = self.violator_with_witness(&gamma) {
            c.update(s, t, r, &plans);
            let next = self.discrepancy_of(c)?;
            let descent = gamma.get(s, t) - next.get(s, t);
            if descent <= self.eps * 0.5 {
                return Err(SpiError::Internal(format!(
                    "update at ({s},{t}) decreased the discrepancy by only {descent:.3e}"
                )));
            }
            gamma = next;
        }
        Ok(gamma)
    }
}

/// Policy iteration for a discount strictly below one. The one-step
/// operator is then a contraction, so the terminal fixed point is the
/// distance.
pub fn spi_discounted(a: &Automaton, lambda: f64, eps: f64) -> Result<SpiTrace, SpiError> {
    assert!(lambda > 0.0 && lambda < 1.0, "discount must lie in (0,1)");
    assert!(eps > 0.0);
    let start = Instant::now();
    let zero = ZeroPairs::diagonal(a.num_states());
    let mut run = Run::new(a, lambda, eps, zero);
    let mut c = CouplingStructure::initial(a, &run.zero, &mut run.counters);
    let final_d = run.inner_loop(&mut c)?;
    Ok(SpiTrace {
        iterations: run.structures,
        tp_count: run.counters.tp,
        outer_loops: 0,
        wall_time: start.elapsed().as_secs_f64(),
        final_d,
    })
}

/// Policy iteration for the undiscounted distance. The inner loop lands on
/// some fixed point; the outer loop checks it is the least one by computing
/// the largest self-closed relation, and otherwise decreases the fixed
/// point on it and re-initialises the structure for the decreased matrix.
pub fn spi_undiscounted(
    a: &Automaton,
    eps: f64,
    precompute_bisim: bool,
) -> Result<SpiTrace, SpiError> {
    assert!(eps > 0.0);
    let start = Instant::now();
    let zero = if precompute_bisim {
        ZeroPairs::from_partition(&bisimilarity(a))
    } else {
        ZeroPairs::diagonal(a.num_states())
    };
    let mut run = Run::new(a, 1.0, eps, zero);
    let mut c = CouplingStructure::initial(a, &run.zero, &mut run.counters);
    let mut outer_loops = 0u64;
    loop {
        outer_loops += 1;
        if outer_loops > OUTER_CAP {
            return Err(SpiError::IterationCap { structures: run.structures });
        }
        let gamma = run.inner_loop(&mut c)?;
        let m = largest_selfclosed(&gamma, a, eps)?;
        if m.is_empty() {
            return Ok(SpiTrace {
                iterations: run.structures,
                tp_count: run.counters.tp,
                outer_loops,
                wall_time: start.elapsed().as_secs_f64(),
                final_d: gamma,
            });
        }
        let cert = decrease(&gamma, &m, a, eps)?;
        if cert.theta <= eps * 0.5 {
            return Err(SpiError::Internal(format!(
                "decrease step produced a non-positive theta {:.3e}",
                cert.theta
            )));
        }
        c = CouplingStructure::optimal_for(&cert.new_d, a, &run.zero, &mut run.counters);
    }
}

/// Runs the policy-improvement loop from a caller-supplied structure and
/// returns the fixed point it reaches. For a discount below one this is the
/// distance; at one it is some fixed point of the operator, not necessarily
/// the least.
pub fn policy_fixpoint_from(
    a: &Automaton,
    mut c: CouplingStructure,
    lambda: f64,
    eps: f64,
) -> Result<DistMatrix, SpiError> {
    assert!(lambda > 0.0 && lambda <= 1.0);
    let zero = ZeroPairs::diagonal(a.num_states());
    let mut run = Run::new(a, lambda, eps, zero);
    run.inner_loop(&mut c)
}
