//! Probabilistic bisimilarity via iterated partition refinement.
//!
//! Two states are equivalent when they carry the same label and every
//! transition of one is matched by a transition of the other through a
//! coupling supported inside the relation, and vice versa. The refinement
//! starts from the label partition and deletes pairs until stable.

use crate::automaton::{Automaton, Dist};
use crate::transport::feasible;

/// A partition of the state space; states in one block are equivalent.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    block_of: Vec<usize>,
    blocks: Vec<Vec<usize>>,
}

impl Partition {
    fn from_relation(n: usize, related: &[bool]) -> Partition {
        let mut block_of = vec![usize::MAX; n];
        let mut blocks = Vec::new();
        for s in 0..n {
            if block_of[s] != usize::MAX {
                continue;
            }
            let id = blocks.len();
            let members: Vec<usize> =
                (s..n).filter(|&t| related[s * n + t]).collect();
            for &t in &members {
                block_of[t] = id;
            }
            blocks.push(members);
        }
        Partition { block_of, blocks }
    }

    pub fn num_states(&self) -> usize {
        self.block_of.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_of(&self, s: usize) -> usize {
        self.block_of[s]
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn same_block(&self, s: usize, t: usize) -> bool {
        self.block_of[s] == self.block_of[t]
    }
}

/// Whether the relation lifts to the two distributions: some coupling of
/// `mu` and `nu` has its support inside the relation. Decided by max-flow
/// saturation.
pub fn lift_check(mu: &Dist, nu: &Dist, related: &impl Fn(usize, usize) -> bool) -> bool {
    feasible(mu, nu, related)
}

/// The coarsest probabilistic bisimulation, as a partition.
///
/// Plain pairwise refinement: sound at the desk scales this crate targets,
/// with deletions applied between sweeps so a sweep sees a fixed relation.
pub fn bisimilarity(a: &Automaton) -> Partition {
    let n = a.num_states();
    let mut related = vec![false; n * n];
    for s in 0..n {
        for t in 0..n {
            related[s * n + t] = a.label(s) == a.label(t);
        }
    }
    loop {
        let mut deletions: Vec<(usize, usize)> = Vec::new();
        let rel = |u: usize, v: usize| related[u * n + v];
        for s in 0..n {
            for t in s + 1..n {
                if !related[s * n + t] {
                    continue;
                }
                let forward = a
                    .dists(s)
                    .iter()
                    .all(|mu| a.dists(t).iter().any(|nu| lift_check(mu, nu, &rel)));
                let backward = forward
                    && a.dists(t)
                        .iter()
                        .all(|nu| a.dists(s).iter().any(|mu| lift_check(mu, nu, &rel)));
                if !(forward && backward) {
                    deletions.push((s, t));
                }
            }
        }
        if deletions.is_empty() {
            break;
        }
        for (s, t) in deletions {
            related[s * n + t] = false;
            related[t * n + s] = false;
        }
    }
    Partition::from_relation(n, &related)
}

/// Re-checks that the partition's induced relation is a probabilistic
/// bisimulation (both matching clauses and the label clause).
pub fn is_bisimulation(a: &Automaton, p: &Partition) -> bool {
    let n = a.num_states();
    let rel = |u: usize, v: usize| p.same_block(u, v);
    for s in 0..n {
        for t in 0..n {
            if !p.same_block(s, t) {
                continue;
            }
            if a.label(s) != a.label(t) {
                return false;
            }
            let matched = a
                .dists(s)
                .iter()
                .all(|mu| a.dists(t).iter().any(|nu| lift_check(mu, nu, &rel)));
            if !matched {
                return false;
            }
        }
    }
    true
}
