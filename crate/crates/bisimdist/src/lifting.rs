//! Kantorovich and Hausdorff liftings of a state distance, the one-step
//! operator whose least fixed point is the behavioural distance, and the
//! greedy constructions used for policy improvement.

use crate::automaton::{Automaton, Dist};
use crate::transport::{min_cost_coupling, CostView, Coupling};

/// Running counters for a solver pipeline.
#[derive(Debug, Default, Clone, Copy)]
pub struct Counters {
    /// Transportation problems solved.
    pub tp: u64,
}

/// Symmetric pairwise distance on states with zero diagonal, entries in
/// [0,1]. Writes go through [`DistMatrix::set_sym`], which mirrors.
#[derive(Debug, Clone, PartialEq)]
pub struct DistMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistMatrix {
    pub fn zero(n: usize) -> DistMatrix {
        DistMatrix { n, values: vec![0.0; n * n] }
    }

    /// 1 on label mismatch, 0 elsewhere.
    pub fn label_mismatch(a: &Automaton) -> DistMatrix {
        let n = a.num_states();
        let mut d = DistMatrix::zero(n);
        for s in 0..n {
            for t in s + 1..n {
                if a.label(s) != a.label(t) {
                    d.set_sym(s, t, 1.0);
                }
            }
        }
        d
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> DistMatrix {
        let mut d = DistMatrix::zero(n);
        for s in 0..n {
            for t in s + 1..n {
                d.set_sym(s, t, f(s, t));
            }
        }
        d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, s: usize, t: usize) -> f64 {
        self.values[s * self.n + t]
    }

    pub fn set_sym(&mut self, s: usize, t: usize, v: f64) {
        self.values[s * self.n + t] = v;
        self.values[t * self.n + s] = v;
    }

    /// Supremum-norm distance to another matrix.
    pub fn max_abs_diff(&self, other: &DistMatrix) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest amount by which some entry exceeds the other matrix.
    pub fn excess_over(&self, other: &DistMatrix) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .fold(0.0, f64::max)
    }

    pub fn le(&self, other: &DistMatrix, eps: f64) -> bool {
        self.excess_over(other) <= eps
    }

    /// Largest violation of zero diagonal, symmetry, or the [0,1] range.
    pub fn shape_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for s in 0..self.n {
            err = err.max(self.get(s, s).abs());
            for t in 0..self.n {
                let v = self.get(s, t);
                err = err.max((v - self.get(t, s)).abs());
                err = err.max(-v);
                err = err.max(v - 1.0);
            }
        }
        err
    }

    /// Largest triangle-inequality violation over all state triples.
    pub fn triangle_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for s in 0..self.n {
            for t in 0..self.n {
                for r in 0..self.n {
                    err = err.max(self.get(s, t) - self.get(s, r) - self.get(r, t));
                }
            }
        }
        err
    }
}

impl CostView for DistMatrix {
    fn at(&self, u: usize, v: usize) -> f64 {
        self.get(u, v)
    }
}

/// A relation between two finite sets of distributions (given by index)
/// whose projections cover both sides.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SetCoupling {
    pairs: Vec<(usize, usize)>,
}

impl SetCoupling {
    pub fn new(mut pairs: Vec<(usize, usize)>) -> SetCoupling {
        pairs.sort_unstable();
        pairs.dedup();
        SetCoupling { pairs }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Whether the projections cover `0..left` and `0..right`.
    pub fn covers(&self, left: usize, right: usize) -> bool {
        (0..left).all(|i| self.pairs.iter().any(|&(a, _)| a == i))
            && (0..right).all(|j| self.pairs.iter().any(|&(_, b)| b == j))
    }
}

/// Kantorovich distance between two distributions under `d`, together with
/// an optimal vertex coupling.
pub fn kantorovich(
    d: &DistMatrix,
    mu: &Dist,
    nu: &Dist,
    counters: &mut Counters,
) -> (f64, Coupling) {
    counters.tp += 1;
    min_cost_coupling(mu, nu, d).expect("valid distributions")
}

/// Greedy evaluation of the Hausdorff lifting of the Kantorovich distance
/// between two sets of distributions.
///
/// Rather than ranging over all set-couplings (exponentially many), the
/// witness pairs each element with a nearest partner on the other side;
/// the maximum over the witness attains the Hausdorff value. Ties in the
/// argmin are broken towards the smallest index.
pub fn hausdorff(
    d: &DistMatrix,
    a_side: &[Dist],
    b_side: &[Dist],
    counters: &mut Counters,
) -> (f64, SetCoupling) {
    let (value, witness, _) = hausdorff_with_plans(d, a_side, b_side, counters);
    (value, witness)
}

/// As [`hausdorff`], additionally returning the optimal coupling solved for
/// every pair in `a_side x b_side` (row-major).
pub fn hausdorff_with_plans(
    d: &DistMatrix,
    a_side: &[Dist],
    b_side: &[Dist],
    counters: &mut Counters,
) -> (f64, SetCoupling, Vec<Vec<(f64, Coupling)>>) {
    assert!(!a_side.is_empty() && !b_side.is_empty(), "sides must be nonempty");
    let plans: Vec<Vec<(f64, Coupling)>> = a_side
        .iter()
        .map(|mu| b_side.iter().map(|nu| kantorovich(d, mu, nu, counters)).collect())
        .collect();
    let mut pairs = Vec::with_capacity(a_side.len() + b_side.len());
    for i in 0..a_side.len() {
        let phi = (0..b_side.len())
            .min_by(|&x, &y| plans[i][x].0.partial_cmp(&plans[i][y].0).unwrap())
            .unwrap();
        pairs.push((i, phi));
    }
    for j in 0..b_side.len() {
        let psi = (0..a_side.len())
            .min_by(|&x, &y| plans[x][j].0.partial_cmp(&plans[y][j].0).unwrap())
            .unwrap();
        pairs.push((psi, j));
    }
    let witness = SetCoupling::new(pairs);
    let value = witness
        .pairs()
        .iter()
        .map(|&(i, j)| plans[i][j].0)
        .fold(0.0, f64::max);
    (value, witness, plans)
}

/// One-step distance operator: 1 on label mismatch, otherwise lambda times
/// the Hausdorff-Kantorovich distance between the successor sets.
pub fn delta_apply(
    lambda: f64,
    d: &DistMatrix,
    a: &Automaton,
    counters: &mut Counters,
) -> DistMatrix {
    assert!(lambda > 0.0 && lambda <= 1.0, "discount must lie in (0,1]");
    let n = a.num_states();
    let mut out = DistMatrix::zero(n);
    for s in 0..n {
        for t in s + 1..n {
            out.set_sym(s, t, delta_at(lambda, d, a, s, t, counters));
        }
    }
    out
}

/// Single entry of the one-step operator.
pub fn delta_at(
    lambda: f64,
    d: &DistMatrix,
    a: &Automaton,
    s: usize,
    t: usize,
    counters: &mut Counters,
) -> f64 {
    if s == t {
        return 0.0;
    }
    if a.label(s) != a.label(t) {
        return 1.0;
    }
    let (h, _) = hausdorff(d, a.dists(s), a.dists(t), counters);
    lambda * h
}

/// The greedy set-coupling for a state pair: each successor distribution is
/// matched with a Kantorovich-nearest partner on the other side.
pub fn build_h(
    d: &DistMatrix,
    a: &Automaton,
    s: usize,
    t: usize,
    counters: &mut Counters,
) -> SetCoupling {
    hausdorff(d, a.dists(s), a.dists(t), counters).1
}

/// The measure-coupling map evaluated at one pair: an optimal vertex
/// coupling for the current distance.
pub fn build_k(d: &DistMatrix, mu: &Dist, nu: &Dist, counters: &mut Counters) -> Coupling {
    kantorovich(d, mu, nu, counters).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::parse;
    use crate::ssg::enumerate_setcouplings;

    fn fixture(name: &str) -> Automaton {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../fixtures")
            .join(name);
        parse(&std::fs::read_to_string(path).unwrap()).unwrap()
    }

    /// Distance that is 1 exactly on the (h,t) pair of the gamblers model.
    fn gamblers_dstar(a: &Automaton) -> DistMatrix {
        let (h, t) = (a.find_state("h").unwrap(), a.find_state("t").unwrap());
        let mut d = DistMatrix::zero(a.num_states());
        d.set_sym(h, t, 1.0);
        d
    }

    #[test]
    fn kantorovich_identity_is_zero() {
        let a = fixture("gamblers.json");
        let d = gamblers_dstar(&a);
        let f = a.find_state("f").unwrap();
        let fair = &a.dists(f)[2];
        let mut c = Counters::default();
        let (v, _) = kantorovich(&d, fair, fair, &mut c);
        assert_eq!(v, 0.0);
        assert_eq!(c.tp, 1);
    }

    #[test]
    fn kantorovich_dirac_pair_is_the_distance() {
        let a = fixture("gamblers.json");
        let d = gamblers_dstar(&a);
        let (h, t) = (a.find_state("h").unwrap(), a.find_state("t").unwrap());
        let mut c = Counters::default();
        let (v, _) = kantorovich(&d, &Dist::dirac(h), &Dist::dirac(t), &mut c);
        assert_eq!(v, 1.0);
    }

    #[test]
    fn kantorovich_fair_vs_biased_under_dstar() {
        let a = fixture("gamblers.json");
        let d = gamblers_dstar(&a);
        let (f, b) = (a.find_state("f").unwrap(), a.find_state("b").unwrap());
        let (h, t) = (a.find_state("h").unwrap(), a.find_state("t").unwrap());
        let mut c = Counters::default();
        let (v, plan) = kantorovich(&d, &a.dists(f)[2], &a.dists(b)[2], &mut c);
        assert!((v - 0.01).abs() < 1e-12);
        assert!((plan.mass_at(h, h) - 0.5).abs() < 1e-12);
        assert!((plan.mass_at(t, t) - 0.49).abs() < 1e-12);
        assert!((plan.mass_at(t, h) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn hausdorff_singletons_reduce_to_kantorovich() {
        let a = fixture("coin.json");
        let u = a.find_state("u").unwrap();
        let v = a.find_state("v").unwrap();
        let mut d = DistMatrix::zero(3);
        d.set_sym(u, v, 0.25);
        let mut c = Counters::default();
        let (val, witness) = hausdorff(&d, a.dists(u), a.dists(v), &mut c);
        assert_eq!(val, 0.25);
        assert_eq!(witness.pairs(), &[(0, 0)]);
    }

    #[test]
    fn hausdorff_gamblers_matches_brute_force() {
        let a = fixture("gamblers.json");
        let d = gamblers_dstar(&a);
        let (f, b) = (a.find_state("f").unwrap(), a.find_state("b").unwrap());
        let mut c = Counters::default();
        let (val, witness, plans) = hausdorff_with_plans(&d, a.dists(f), a.dists(b), &mut c);
        assert!((val - 0.01).abs() < 1e-12);
        // witness attains the value exactly
        let attained = witness
            .pairs()
            .iter()
            .map(|&(i, j)| plans[i][j].0)
            .fold(0.0, f64::max);
        assert_eq!(attained, val);
        // brute force over all set-couplings
        let brute = enumerate_setcouplings(a.dists(f).len(), a.dists(b).len())
            .unwrap()
            .iter()
            .map(|r| {
                r.pairs()
                    .iter()
                    .map(|&(i, j)| plans[i][j].0)
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        assert!((val - brute).abs() < 1e-9);
    }

    #[test]
    fn hausdorff_coin_forced_witness() {
        let a = fixture("coin.json");
        let (t, u, v) = (
            a.find_state("t").unwrap(),
            a.find_state("u").unwrap(),
            a.find_state("v").unwrap(),
        );
        let mut d = DistMatrix::zero(3);
        d.set_sym(t, u, 0.5);
        d.set_sym(v, u, 1.0);
        let mut c = Counters::default();
        let (val, witness) = hausdorff(&d, a.dists(t), a.dists(u), &mut c);
        assert!((val - 0.5).abs() < 1e-12);
        assert_eq!(witness.pairs(), &[(0, 0), (1, 0)], "both members of the left side covered");
    }

    #[test]
    fn delta_on_zero_matrix() {
        let a = fixture("gamblers.json");
        let mut c = Counters::default();
        let d = delta_apply(0.8, &DistMatrix::zero(4), &a, &mut c);
        let (f, b) = (a.find_state("f").unwrap(), a.find_state("b").unwrap());
        let (h, t) = (a.find_state("h").unwrap(), a.find_state("t").unwrap());
        assert_eq!(d.get(h, t), 1.0, "label mismatch clause");
        assert_eq!(d.get(f, b), 0.0, "all Kantorovich values vanish under the zero matrix");
        assert_eq!(d.shape_error(), 0.0);
    }

    #[test]
    fn delta_fixed_point_entry_on_coin() {
        let a = fixture("coin.json");
        let (t, u) = (a.find_state("t").unwrap(), a.find_state("u").unwrap());
        let v = a.find_state("v").unwrap();
        let mut d = DistMatrix::label_mismatch(&a);
        d.set_sym(t, u, 0.5);
        let mut c = Counters::default();
        let out = delta_apply(1.0, &d, &a, &mut c);
        assert!((out.get(t, u) - 0.5).abs() < 1e-12, "the half-distance entry is stationary");
        assert_eq!(out.get(t, v), 1.0);
    }

    #[test]
    fn build_h_on_coin_picks_cheaper_partner() {
        let a = fixture("coin.json");
        let (t, u) = (a.find_state("t").unwrap(), a.find_state("u").unwrap());
        let mut d = DistMatrix::label_mismatch(&a);
        d.set_sym(t, u, 1.0); // alpha = 1 fixed point
        let mut c = Counters::default();
        let r = build_h(&d, &a, t, u, &mut c);
        // the Dirac on u is matched with the coin flip, whose lifted
        // distance 1/2 beats the Dirac pair at distance 1
        assert_eq!(r.pairs(), &[(0, 0), (1, 0)]);
        assert!(r.covers(a.dists(t).len(), a.dists(u).len()));
    }

    #[test]
    fn build_h_gamblers_pairs_coins_together() {
        let a = fixture("gamblers.json");
        let d = gamblers_dstar(&a);
        let (f, b) = (a.find_state("f").unwrap(), a.find_state("b").unwrap());
        let mut c = Counters::default();
        let r = build_h(&d, &a, f, b, &mut c);
        assert_eq!(r.pairs(), &[(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn build_k_diagonal_on_identical_marginals() {
        let a = fixture("gamblers.json");
        let f = a.find_state("f").unwrap();
        let fair = &a.dists(f)[2];
        let d = DistMatrix::from_fn(4, |_, _| 1.0);
        let mut c = Counters::default();
        let plan = build_k(&d, fair, fair, &mut c);
        let (h, t) = (a.find_state("h").unwrap(), a.find_state("t").unwrap());
        assert_eq!(plan.entries(), &[((h, h), 0.5), ((t, t), 0.5)]);
    }

    #[test]
    fn kantorovich_symmetry() {
        let a = fixture("gamblers.json");
        let d = gamblers_dstar(&a);
        let (f, b) = (a.find_state("f").unwrap(), a.find_state("b").unwrap());
        let mut c = Counters::default();
        for mu in a.dists(f) {
            for nu in a.dists(b) {
                let (x, _) = kantorovich(&d, mu, nu, &mut c);
                let (y, _) = kantorovich(&d, nu, mu, &mut c);
                assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
            }
        }
    }
}
