//! Coupling structures: a fixed choice of measure-coupling per distribution
//! pair plus a set-coupling per state pair, the two-copy automaton this
//! induces, and its discrepancy (the worst-case probability, suitably
//! discounted, of reaching a label-mismatched pair).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::automaton::Automaton;
use crate::bisim::Partition;
use crate::lifting::{
    build_h, hausdorff_with_plans, Counters, DistMatrix, SetCoupling,
};
use crate::transport::{min_cost_coupling, northwest_coupling, Coupling};

/// Identity of a distribution: (state, index within the state's successor
/// list). Identical distributions at different states stay distinct.
pub type DistId = (usize, usize);

/// Value-iteration sweep cap for discrepancy and reachability solvers.
pub const SWEEP_CAP: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("value iteration did not converge within {sweeps} sweeps (residual {residual:.3e})")]
    NonConvergence { residual: f64, sweeps: u64 },
}

#[derive(Debug, Error)]
pub enum CouplingError {
    #[error("no set-coupling for state pair ({0}, {1})")]
    MissingRho(usize, usize),
    #[error("no measure-coupling for distribution pair {0:?}, {1:?}")]
    MissingCoupling(DistId, DistId),
    #[error("coupling/automaton mismatch: {0}")]
    Mismatch(String),
}

/// Unordered state pairs pinned to distance zero: the diagonal always, plus
/// any precomputed behaviourally-equivalent pairs.
#[derive(Debug, Clone)]
pub struct ZeroPairs {
    n: usize,
    bits: Vec<bool>,
}

impl ZeroPairs {
    /// Only the diagonal.
    pub fn diagonal(n: usize) -> ZeroPairs {
        let mut z = ZeroPairs { n, bits: vec![false; n * n] };
        for s in 0..n {
            z.bits[s * n + s] = true;
        }
        z
    }

    /// All pairs lying in one block of the partition.
    pub fn from_partition(p: &Partition) -> ZeroPairs {
        let n = p.num_states();
        let mut z = ZeroPairs::diagonal(n);
        for s in 0..n {
            for t in s + 1..n {
                if p.same_block(s, t) {
                    z.bits[s * n + t] = true;
                    z.bits[t * n + s] = true;
                }
            }
        }
        z
    }

    pub fn contains(&self, s: usize, t: usize) -> bool {
        self.bits[s * self.n + t]
    }
}

/// A coupling structure over an automaton.
///
/// `rho` is defined on every unordered same-label pair that is not pinned to
/// zero; `f` is materialized exactly on the distribution pairs the
/// set-couplings demand.
#[derive(Debug, Clone)]
pub struct CouplingStructure {
    rho: BTreeMap<(usize, usize), SetCoupling>,
    f: BTreeMap<(DistId, DistId), Coupling>,
}

/// Pairs that carry a set-coupling: same label, distinct, not pinned to zero.
pub fn active_pairs(a: &Automaton, zero: &ZeroPairs) -> Vec<(usize, usize)> {
    let n = a.num_states();
    let mut out = Vec::new();
    for s in 0..n {
        for t in s + 1..n {
            if a.label(s) == a.label(t) && !zero.contains(s, t) {
                out.push((s, t));
            }
        }
    }
    out
}

impl CouplingStructure {
    /// Initial structure: set-couplings greedy for the label-mismatch
    /// distance, measure-couplings from the North-West corner rule.
    pub fn initial(
        a: &Automaton,
        zero: &ZeroPairs,
        counters: &mut Counters,
    ) -> CouplingStructure {
        let d0 = DistMatrix::label_mismatch(a);
        let mut rho = BTreeMap::new();
        let mut f = BTreeMap::new();
        for (s, t) in active_pairs(a, zero) {
            let r = build_h(&d0, a, s, t, counters);
            for &(i, j) in r.pairs() {
                f.entry(((s, i), (t, j))).or_insert_with(|| {
                    northwest_coupling(&a.dists(s)[i], &a.dists(t)[j])
                        .expect("valid distributions")
                });
            }
            rho.insert((s, t), r);
        }
        CouplingStructure { rho, f }
    }

    /// Structure whose one-step operator agrees with the distance operator
    /// at `d`: greedy set-couplings and optimal vertex couplings for `d`.
    pub fn optimal_for(
        d: &DistMatrix,
        a: &Automaton,
        zero: &ZeroPairs,
        counters: &mut Counters,
    ) -> CouplingStructure {
        let mut rho = BTreeMap::new();
        let mut f = BTreeMap::new();
        for (s, t) in active_pairs(a, zero) {
            let (_, r, plans) = hausdorff_with_plans(d, a.dists(s), a.dists(t), counters);
            for &(i, j) in r.pairs() {
                f.insert(((s, i), (t, j)), plans[i][j].1.clone());
            }
            rho.insert((s, t), r);
        }
        CouplingStructure { rho, f }
    }

    /// Seeded random vertex coupling structure (random matchings plus random
    /// extra pairs; couplings optimal for random costs, hence vertices).
    pub fn random(a: &Automaton, seed: u64, zero: &ZeroPairs) -> CouplingStructure {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rho = BTreeMap::new();
        let mut f = BTreeMap::new();
        for (s, t) in active_pairs(a, zero) {
            let (ls, lt) = (a.dists(s).len(), a.dists(t).len());
            let mut pairs = Vec::new();
            for i in 0..ls {
                pairs.push((i, rng.gen_range(0..lt)));
            }
            for j in 0..lt {
                pairs.push((rng.gen_range(0..ls), j));
            }
            for i in 0..ls {
                for j in 0..lt {
                    if rng.gen_bool(0.25) {
                        pairs.push((i, j));
                    }
                }
            }
            let r = SetCoupling::new(pairs);
            for &(i, j) in r.pairs() {
                let noise: Vec<f64> =
                    (0..a.num_states() * a.num_states()).map(|_| rng.gen()).collect();
                let n = a.num_states();
                let cost = move |u: usize, v: usize| noise[u * n + v];
                let (_, plan) =
                    min_cost_coupling(&a.dists(s)[i], &a.dists(t)[j], &cost)
                        .expect("valid distributions");
                f.insert(((s, i), (t, j)), plan);
            }
            rho.insert((s, t), r);
        }
        CouplingStructure { rho, f }
    }

    pub fn rho(&self, s: usize, t: usize) -> Option<&SetCoupling> {
        self.rho.get(&(s, t))
    }

    pub fn coupling(&self, left: DistId, right: DistId) -> Option<&Coupling> {
        self.f.get(&(left, right))
    }

    /// Replaces the set-coupling at one pair, installing the given plans for
    /// its distribution pairs. Couplings at other pairs are left in place.
    pub fn update(
        &mut self,
        s: usize,
        t: usize,
        r: SetCoupling,
        plans: &[Vec<(f64, Coupling)>],
    ) {
        for &(i, j) in r.pairs() {
            self.f.insert(((s, i), (t, j)), plans[i][j].1.clone());
        }
        self.rho.insert((s, t), r);
    }

    /// Checks marginals, projections and the vertex support bound; returns
    /// the first problem found.
    pub fn validate(&self, a: &Automaton) -> Result<(), CouplingError> {
        for (&(s, t), r) in &self.rho {
            if !r.covers(a.dists(s).len(), a.dists(t).len()) {
                return Err(CouplingError::Mismatch(format!(
                    "set-coupling at ({s},{t}) does not project onto both successor sets"
                )));
            }
            for &(i, j) in r.pairs() {
                let c = self
                    .coupling((s, i), (t, j))
                    .ok_or(CouplingError::MissingCoupling((s, i), (t, j)))?;
                if c.left() != &a.dists(s)[i] || c.right() != &a.dists(t)[j] {
                    return Err(CouplingError::Mismatch(format!(
                        "coupling at (({s},{i}),({t},{j})) has foreign marginals"
                    )));
                }
                if c.marginal_error() > 1e-9 {
                    return Err(CouplingError::Mismatch(format!(
                        "coupling at (({s},{i}),({t},{j})) violates its marginals"
                    )));
                }
                let bound = c.left().support_size() + c.right().support_size() - 1;
                if c.support().len() > bound {
                    return Err(CouplingError::Mismatch(format!(
                        "coupling at (({s},{i}),({t},{j})) is not a vertex"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Canonical fingerprint of the structure: set-couplings plus coupling
    /// supports. Two vertex structures with equal keys have equal
    /// discrepancies.
    pub fn key(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        for (&(s, t), r) in &self.rho {
            write!(out, "r{s},{t}:{:?};", r.pairs()).unwrap();
        }
        for (&(l, rgt), c) in &self.f {
            write!(out, "f{l:?},{rgt:?}:{:?};", c.support()).unwrap();
        }
        out
    }
}

/// How a pair behaves inside the induced two-copy automaton.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    /// Label mismatch: absorbing with value one.
    Bad,
    /// Pinned to zero (diagonal or precomputed equivalent pair).
    Zero,
    /// Carries the actions prescribed by the coupling structure.
    Live,
}

/// One enabled coupling at a pair, with mass folded onto unordered pairs.
#[derive(Debug, Clone)]
pub struct Action {
    /// Mass landing directly on label-mismatched pairs.
    pub bad_mass: f64,
    /// Mass moving to live pairs, by pair index.
    pub moves: Vec<(usize, f64)>,
}

/// The automaton induced by a coupling structure, restricted to the pairs
/// reachable from the requested sources. Bad and zero pairs are absorbing.
#[derive(Debug)]
pub struct InducedMdp {
    pairs: Vec<(usize, usize)>,
    index: BTreeMap<(usize, usize), usize>,
    kind: Vec<PairKind>,
    actions: Vec<Vec<Action>>,
}

fn norm(s: usize, t: usize) -> (usize, usize) {
    if s <= t {
        (s, t)
    } else {
        (t, s)
    }
}

/// Builds the induced automaton from the structure, exploring only pairs
/// reachable from `sources`.
pub fn induce(
    c: &CouplingStructure,
    a: &Automaton,
    sources: &[(usize, usize)],
    zero: &ZeroPairs,
) -> Result<InducedMdp, CouplingError> {
    let classify = |(s, t): (usize, usize)| {
        if zero.contains(s, t) {
            PairKind::Zero
        } else if a.label(s) != a.label(t) {
            PairKind::Bad
        } else {
            PairKind::Live
        }
    };

    let mut reached: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
    for &(s, t) in sources {
        let p = norm(s, t);
        if reached.insert(p) {
            queue.push_back(p);
        }
    }
    while let Some((s, t)) = queue.pop_front() {
        if classify((s, t)) != PairKind::Live {
            continue;
        }
        let r = c.rho(s, t).ok_or(CouplingError::MissingRho(s, t))?;
        for &(i, j) in r.pairs() {
            let plan = c
                .coupling((s, i), (t, j))
                .ok_or(CouplingError::MissingCoupling((s, i), (t, j)))?;
            for &((u, v), _) in plan.entries() {
                let q = norm(u, v);
                if reached.insert(q) {
                    queue.push_back(q);
                }
            }
        }
    }

    let pairs: Vec<(usize, usize)> = reached.into_iter().collect();
    let index: BTreeMap<(usize, usize), usize> =
        pairs.iter().enumerate().map(|(k, &p)| (p, k)).collect();
    let kind: Vec<PairKind> = pairs.iter().map(|&p| classify(p)).collect();
    let mut actions: Vec<Vec<Action>> = vec![Vec::new(); pairs.len()];
    for (k, &(s, t)) in pairs.iter().enumerate() {
        if kind[k] != PairKind::Live {
            continue;
        }
        let r = c.rho(s, t).expect("present after reachability pass");
        for &(i, j) in r.pairs() {
            let plan = c.coupling((s, i), (t, j)).expect("present after reachability pass");
            let mut bad_mass = 0.0;
            let mut moves: BTreeMap<usize, f64> = BTreeMap::new();
            for &((u, v), w) in plan.entries() {
                let q = norm(u, v);
                match classify(q) {
                    PairKind::Bad => bad_mass += w,
                    PairKind::Zero => {}
                    PairKind::Live => *moves.entry(index[&q]).or_insert(0.0) += w,
                }
            }
            actions[k].push(Action { bad_mass, moves: moves.into_iter().collect() });
        }
        if actions[k].is_empty() {
            return Err(CouplingError::Mismatch(format!(
                "pair ({s},{t}) has an empty set-coupling"
            )));
        }
    }
    Ok(InducedMdp { pairs, index, kind, actions })
}

impl InducedMdp {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn kind_of(&self, s: usize, t: usize) -> Option<PairKind> {
        self.index.get(&norm(s, t)).map(|&k| self.kind[k])
    }

    pub fn actions_of(&self, s: usize, t: usize) -> Option<&[Action]> {
        self.index.get(&norm(s, t)).map(|&k| self.actions[k].as_slice())
    }

    /// One synchronous Bellman step of the one-step operator of the induced
    /// automaton on a value vector indexed like `pairs`.
    pub fn bellman(&self, lambda: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.pairs.len()];
        for k in 0..self.pairs.len() {
            out[k] = match self.kind[k] {
                PairKind::Bad => 1.0,
                PairKind::Zero => 0.0,
                PairKind::Live => {
                    let best = self.actions[k]
                        .iter()
                        .map(|act| {
                            act.bad_mass
                                + act.moves.iter().map(|&(q, w)| w * x[q]).sum::<f64>()
                        })
                        .fold(0.0, f64::max);
                    lambda * best
                }
            };
        }
        out
    }

    /// Live pairs from which no label-mismatched pair is reachable; their
    /// value is exactly zero.
    fn prob0(&self) -> Vec<bool> {
        let m = self.pairs.len();
        let mut rev: Vec<Vec<usize>> = vec![Vec::new(); m];
        let mut can_reach = vec![false; m];
        let mut queue = VecDeque::new();
        for k in 0..m {
            for act in &self.actions[k] {
                if act.bad_mass > 0.0 && !can_reach[k] {
                    can_reach[k] = true;
                    queue.push_back(k);
                }
                for &(q, _) in &act.moves {
                    rev[q].push(k);
                }
            }
        }
        while let Some(q) = queue.pop_front() {
            for &p in &rev[q] {
                if !can_reach[p] {
                    can_reach[p] = true;
                    queue.push_back(p);
                }
            }
        }
        (0..m)
            .map(|k| self.kind[k] == PairKind::Live && !can_reach[k])
            .collect()
    }

    /// Least fixed point of the induced one-step operator, by Gauss-Seidel
    /// sweeps in pair-index order from below.
    pub fn solve(&self, lambda: f64, eps_in: f64) -> Result<Vec<f64>, SolveError> {
        let m = self.pairs.len();
        let mut x = vec![0.0; m];
        for k in 0..m {
            if self.kind[k] == PairKind::Bad {
                x[k] = 1.0;
            }
        }
        let pinned = if lambda >= 1.0 { self.prob0() } else { vec![false; m] };
        // residual threshold that keeps the final error within eps_in;
        // undiscounted instances rely on the qualitative precompute plus a
        // hundredfold margin
        let threshold = if lambda < 1.0 {
            (eps_in * (1.0 - lambda) / lambda).max(1e-15)
        } else {
            (eps_in * 1e-2).max(1e-15)
        };
        for _ in 0..SWEEP_CAP {
            let mut residual: f64 = 0.0;
            for k in 0..m {
                if self.kind[k] != PairKind::Live || pinned[k] {
                    continue;
                }
                let best = self.actions[k]
                    .iter()
                    .map(|act| {
                        act.bad_mass + act.moves.iter().map(|&(q, w)| w * x[q]).sum::<f64>()
                    })
                    .fold(0.0, f64::max);
                let next = (lambda * best).clamp(0.0, 1.0);
                residual = residual.max((next - x[k]).abs());
                x[k] = next;
            }
            if residual <= threshold {
                return Ok(x);
            }
        }
        Err(SolveError::NonConvergence { residual: threshold, sweeps: SWEEP_CAP })
    }
}

/// The discrepancy of a coupling structure: the least fixed point of its
/// one-step operator, as a full distance matrix.
pub fn discrepancy(
    c: &CouplingStructure,
    a: &Automaton,
    lambda: f64,
    eps_in: f64,
    zero: &ZeroPairs,
) -> Result<DistMatrix, SolveError> {
    let n = a.num_states();
    let mut sources = Vec::with_capacity(n * (n + 1) / 2);
    for s in 0..n {
        for t in s..n {
            sources.push((s, t));
        }
    }
    let mdp = induce(c, a, &sources, zero).expect("structure covers all live pairs");
    let values = mdp.solve(lambda, eps_in)?;
    let mut d = DistMatrix::zero(n);
    for (k, &(s, t)) in mdp.pairs().iter().enumerate() {
        d.set_sym(s, t, values[k]);
    }
    Ok(d)
}
