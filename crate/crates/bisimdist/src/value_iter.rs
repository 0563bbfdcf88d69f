//! Value-iteration baseline: apply the one-step distance operator to the
//! zero matrix until a budget runs out. The iterates increase monotonically
//! towards the distance from below.

use std::time::Instant;

use crate::automaton::Automaton;
use crate::lifting::{delta_apply, Counters, DistMatrix};

/// Exactly one stopping rule per run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    MaxIters(u64),
    MaxSeconds(f64),
    TargetResidual(f64),
}

#[derive(Debug, Clone)]
pub struct ViTrace {
    pub d: DistMatrix,
    pub iters: u64,
    pub tp_count: u64,
    pub wall_time: f64,
    /// Supremum-norm change of the last completed iteration.
    pub residual: f64,
}

/// Iterates the one-step operator from the zero matrix under the budget.
/// Budget exhaustion is normal termination.
pub fn vi_run(a: &Automaton, lambda: f64, budget: Budget) -> ViTrace {
    assert!(lambda > 0.0 && lambda <= 1.0, "discount must lie in (0,1]");
    let start = Instant::now();
    let mut counters = Counters::default();
    let mut d = DistMatrix::zero(a.num_states());
    let mut iters = 0u64;
    let mut residual = f64::INFINITY;
    loop {
        match budget {
            Budget::MaxIters(k) => {
                if iters >= k {
                    break;
                }
            }
            Budget::MaxSeconds(secs) => {
                if start.elapsed().as_secs_f64() >= secs {
                    break;
                }
            }
            Budget::TargetResidual(r) => {
                if residual <= r {
                    break;
                }
            }
        }
        let next = delta_apply(lambda, &d, a, &mut counters);
        residual = next.max_abs_diff(&d);
        d = next;
        iters += 1;
        // a zero-residual step is a fixed point under any budget
        if residual == 0.0 {
            break;
        }
    }
    ViTrace {
        d,
        iters,
        tp_count: counters.tp,
        wall_time: start.elapsed().as_secs_f64(),
        residual,
    }
}
