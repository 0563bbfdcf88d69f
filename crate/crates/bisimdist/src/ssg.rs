//! Brute-force ground truth on tiny instances: the explicit two-player
//! stochastic game whose vertex values are the behavioural distances, and a
//! generic fixpoint solver for such games.
//!
//! The construction enumerates every set-coupling and every polytope vertex,
//! which blows up quickly; hard guards keep it at desk scale. The production
//! solvers never touch this module.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::automaton::{Automaton, Dist};
use crate::lifting::SetCoupling;
use crate::transport::enumerate_vertices;

#[derive(Debug, Error)]
pub enum SsgError {
    #[error("oracle guard exceeded: {0}")]
    GuardExceeded(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexKind {
    Sink0,
    Sink1,
    Max,
    Min,
    Rnd,
}

#[derive(Debug, Clone)]
pub struct Vertex {
    pub kind: VertexKind,
    /// Human-readable description, for inspection output.
    pub desc: String,
}

/// An explicit simple stochastic game. Sinks have outdegree zero, all other
/// vertices at least one; random vertices carry a full probability row.
#[derive(Debug)]
pub struct Game {
    lambda: f64,
    vertices: Vec<Vertex>,
    edges: Vec<Vec<usize>>,
    probs: Vec<Vec<(usize, f64)>>,
    pair_vertex: BTreeMap<(usize, usize), usize>,
}

/// A pure stationary strategy: a successor choice per min or max vertex.
#[derive(Debug, Clone)]
pub struct Strategy {
    pub choice: BTreeMap<usize, usize>,
}

impl Game {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Vec<usize>] {
        &self.edges
    }

    pub fn probs_of(&self, v: usize) -> &[(usize, f64)] {
        &self.probs[v]
    }

    /// Vertex id of an ordered state pair.
    pub fn pair_vertex(&self, s: usize, t: usize) -> Option<usize> {
        self.pair_vertex.get(&(s, t)).copied()
    }

    /// One application of the game's Bellman operator.
    pub fn phi_step(&self, x: &[f64]) -> Vec<f64> {
        (0..self.vertices.len())
            .map(|v| match self.vertices[v].kind {
                VertexKind::Sink0 => 0.0,
                VertexKind::Sink1 => 1.0,
                VertexKind::Max => {
                    self.edges[v].iter().map(|&w| x[w]).fold(f64::NEG_INFINITY, f64::max)
                }
                VertexKind::Min => {
                    self.edges[v].iter().map(|&w| x[w]).fold(f64::INFINITY, f64::min)
                }
                VertexKind::Rnd => self.probs[v].iter().map(|&(w, p)| p * x[w]).sum(),
            })
            .collect()
    }

    /// Validates the structural game invariants.
    pub fn validate(&self) -> Result<(), String> {
        for (v, vert) in self.vertices.iter().enumerate() {
            match vert.kind {
                VertexKind::Sink0 | VertexKind::Sink1 => {
                    if !self.edges[v].is_empty() {
                        return Err(format!("sink {v} has outgoing edges"));
                    }
                }
                _ => {
                    if self.edges[v].is_empty() {
                        return Err(format!("non-sink {v} has outdegree zero"));
                    }
                }
            }
            if vert.kind == VertexKind::Rnd {
                let mass: f64 = self.probs[v].iter().map(|&(_, p)| p).sum();
                if (mass - 1.0).abs() > 1e-9 {
                    return Err(format!("random vertex {v} has mass {mass}"));
                }
                for &(w, p) in &self.probs[v] {
                    if p <= 0.0 || !self.edges[v].contains(&w) {
                        return Err(format!("random vertex {v} has a bad edge to {w}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Uniformly random strategies for both players.
    pub fn random_strategies(&self, seed: u64) -> (Strategy, Strategy) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut smin = BTreeMap::new();
        let mut smax = BTreeMap::new();
        for v in 0..self.vertices.len() {
            match self.vertices[v].kind {
                VertexKind::Min => {
                    smin.insert(v, self.edges[v][rng.gen_range(0..self.edges[v].len())]);
                }
                VertexKind::Max => {
                    smax.insert(v, self.edges[v][rng.gen_range(0..self.edges[v].len())]);
                }
                _ => {}
            }
        }
        (Strategy { choice: smin }, Strategy { choice: smax })
    }

    /// Probability, per vertex, of eventually reaching any sink in the
    /// Markov chain induced by a strategy pair.
    pub fn reach_sink_probability(&self, smin: &Strategy, smax: &Strategy) -> Vec<f64> {
        let m = self.vertices.len();
        let mut x = vec![0.0; m];
        for _ in 0..crate::coupling::SWEEP_CAP {
            let mut residual: f64 = 0.0;
            for v in 0..m {
                let next = match self.vertices[v].kind {
                    VertexKind::Sink0 | VertexKind::Sink1 => 1.0,
                    VertexKind::Min => x[smin.choice[&v]],
                    VertexKind::Max => x[smax.choice[&v]],
                    VertexKind::Rnd => self.probs[v].iter().map(|&(w, p)| p * x[w]).sum(),
                };
                residual = residual.max((next - x[v]).abs());
                x[v] = next;
            }
            if residual <= 1e-12 {
                break;
            }
        }
        x
    }
}

/// All set-couplings between index sets of the given sizes: subsets of the
/// product whose projections cover both sides. Guarded to sizes at most 3.
pub fn enumerate_setcouplings(
    left: usize,
    right: usize,
) -> Result<Vec<SetCoupling>, SsgError> {
    if left > 3 || right > 3 {
        return Err(SsgError::GuardExceeded(format!(
            "set-coupling enumeration over {left}x{right} sides"
        )));
    }
    let cells = left * right;
    let mut out = Vec::new();
    for mask in 1u32..(1 << cells) {
        let pairs: Vec<(usize, usize)> = (0..cells)
            .filter(|&c| mask & (1 << c) != 0)
            .map(|c| (c / right, c % right))
            .collect();
        let sc = SetCoupling::new(pairs);
        if sc.covers(left, right) {
            out.push(sc);
        }
    }
    Ok(out)
}

/// Bit-exact identity of a distribution, for interning shared vertices.
type DistBits = Vec<(usize, u64)>;
/// Bit-exact identity of a coupling.
type CouplingBits = Vec<((usize, usize), u64)>;

fn dist_key(d: &Dist) -> DistBits {
    d.entries().iter().map(|&(s, w)| (s, w.to_bits())).collect()
}

/// Builds the explicit game for an automaton and discount. Random vertices
/// are polytope vertices; at discount one the bottom sink keeps no incoming
/// edges.
pub fn build_game(a: &Automaton, lambda: f64) -> Result<Game, SsgError> {
    assert!(lambda > 0.0 && lambda <= 1.0);
    let n = a.num_states();
    if n > 5 {
        return Err(SsgError::GuardExceeded(format!("{n} states > 5")));
    }
    for s in 0..n {
        if a.dists(s).len() > 3 {
            return Err(SsgError::GuardExceeded(format!(
                "state {s} has {} distributions > 3",
                a.dists(s).len()
            )));
        }
        for d in a.dists(s) {
            if d.support_size() > 3 {
                return Err(SsgError::GuardExceeded(format!(
                    "a distribution of state {s} has support {} > 3",
                    d.support_size()
                )));
            }
        }
    }

    let mut vertices = vec![Vertex { kind: VertexKind::Sink0, desc: "bottom".into() }];
    let mut edges: Vec<Vec<usize>> = vec![Vec::new()];
    let mut probs: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
    let bottom = 0usize;

    let mut pair_vertex = BTreeMap::new();
    for s in 0..n {
        for t in 0..n {
            let kind = if a.label(s) == a.label(t) { VertexKind::Min } else { VertexKind::Sink1 };
            let id = vertices.len();
            vertices.push(Vertex {
                kind,
                desc: format!("({},{})", a.state_name(s), a.state_name(t)),
            });
            edges.push(Vec::new());
            probs.push(Vec::new());
            pair_vertex.insert((s, t), id);
        }
    }

    // distribution-pair min vertices and coupling random vertices are
    // interned by value, so equal distributions share vertices
    let mut dp_vertex: BTreeMap<(DistBits, DistBits), usize> = BTreeMap::new();
    let mut omega_vertex: BTreeMap<CouplingBits, usize> = BTreeMap::new();
    let mut max_vertex: BTreeMap<Vec<usize>, usize> = BTreeMap::new();

    for s in 0..n {
        for t in 0..n {
            if a.label(s) != a.label(t) {
                continue;
            }
            let pv = pair_vertex[&(s, t)];
            for r in enumerate_setcouplings(a.dists(s).len(), a.dists(t).len())? {
                // intern the distribution pairs of this set-coupling
                let mut members = Vec::new();
                for &(i, j) in r.pairs() {
                    let mu = &a.dists(s)[i];
                    let nu = &a.dists(t)[j];
                    let key = (dist_key(mu), dist_key(nu));
                    let dp = *dp_vertex.entry(key).or_insert_with(|| {
                        let id = vertices.len();
                        vertices.push(Vertex {
                            kind: VertexKind::Min,
                            desc: format!(
                                "dist-pair {}[{i}] | {}[{j}]",
                                a.state_name(s),
                                a.state_name(t)
                            ),
                        });
                        edges.push(Vec::new());
                        probs.push(Vec::new());
                        // populate the coupling vertices below this pair
                        for omega in enumerate_vertices(mu, nu).expect("guarded supports") {
                            let okey: Vec<((usize, usize), u64)> = omega
                                .entries()
                                .iter()
                                .map(|&(k, w)| (k, w.to_bits()))
                                .collect();
                            let ov = *omega_vertex.entry(okey).or_insert_with(|| {
                                let oid = vertices.len();
                                vertices.push(Vertex {
                                    kind: VertexKind::Rnd,
                                    desc: format!("coupling {:?}", omega.entries()),
                                });
                                edges.push(Vec::new());
                                probs.push(Vec::new());
                                oid
                            });
                            if edges[id].contains(&ov) {
                                continue;
                            }
                            edges[id].push(ov);
                            if probs[ov].is_empty() {
                                for &((u, v), w) in omega.entries() {
                                    let target = pair_vertex[&(u, v)];
                                    edges[ov].push(target);
                                    probs[ov].push((target, lambda * w));
                                }
                                if lambda < 1.0 {
                                    edges[ov].push(bottom);
                                    probs[ov].push((bottom, 1.0 - lambda));
                                }
                            }
                        }
                        id
                    });
                    members.push(dp);
                }
                members.sort_unstable();
                members.dedup();
                let mv = *max_vertex.entry(members.clone()).or_insert_with(|| {
                    let id = vertices.len();
                    vertices.push(Vertex {
                        kind: VertexKind::Max,
                        desc: format!("matching {:?}", r.pairs()),
                    });
                    edges.push(members.clone());
                    probs.push(Vec::new());
                    id
                });
                if !edges[pv].contains(&mv) {
                    edges[pv].push(mv);
                }
            }
        }
    }

    let game = Game { lambda, vertices, edges, probs, pair_vertex };
    debug_assert_eq!(game.validate(), Ok(()));
    Ok(game)
}

/// Least fixed point of the game's Bellman operator, iterated from zero
/// until the residual drops below `eps`.
pub fn ssg_value(g: &Game, eps: f64) -> Vec<f64> {
    let mut x = vec![0.0; g.vertices().len()];
    for _ in 0..crate::coupling::SWEEP_CAP {
        let next = g.phi_step(&x);
        let residual = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        if residual <= eps {
            break;
        }
    }
    x
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

    #[test]
    fn setcoupling_counts() {
        assert_eq!(enumerate_setcouplings(1, 1).unwrap().len(), 1);
        assert_eq!(enumerate_setcouplings(2, 1).unwrap().len(), 1);
        assert_eq!(enumerate_setcouplings(2, 2).unwrap().len(), 7);
        assert!(enumerate_setcouplings(4, 2).is_err());
    }

    #[test]
    fn sinks_take_their_values() {
        let a = fixture("coin.json");
        let g = build_game(&a, 1.0).unwrap();
        g.validate().unwrap();
        let values = ssg_value(&g, 1e-9);
        let (t, u, v) = (
            a.find_state("t").unwrap(),
            a.find_state("u").unwrap(),
            a.find_state("v").unwrap(),
        );
        assert_eq!(values[g.pair_vertex(v, u).unwrap()], 1.0, "1-sink");
        assert_eq!(values[g.pair_vertex(u, u).unwrap()], 0.0);
        assert!((values[g.pair_vertex(t, u).unwrap()] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn gamblers_game_value() {
        let a = fixture("gamblers.json");
        let g = build_game(&a, 1.0).unwrap();
        let values = ssg_value(&g, 1e-9);
        let (f, b) = (a.find_state("f").unwrap(), a.find_state("b").unwrap());
        assert!((values[g.pair_vertex(f, b).unwrap()] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn all_labels_distinct_means_all_pairs_are_one_sinks() {
        let a = parse(
            r#"{"states":["x","y"],"labels":{"x":"a","y":"b"},
                "transitions":[{"from":"x","to":{"x":1}},{"from":"y","to":{"y":1}}]}"#,
        )
        .unwrap();
        let g = build_game(&a, 1.0).unwrap();
        assert_eq!(g.vertices()[g.pair_vertex(0, 1).unwrap()].kind, VertexKind::Sink1);
        assert_eq!(g.vertices()[g.pair_vertex(1, 0).unwrap()].kind, VertexKind::Sink1);
        // only diagonal pairs are min vertices
        let mins = g
            .vertices()
            .iter()
            .filter(|v| v.kind == VertexKind::Min && v.desc.starts_with('('))
            .count();
        assert_eq!(mins, 2);
    }

    #[test]
    fn discounted_random_vertices_route_to_bottom() {
        let a = fixture("coin.json");
        let g = build_game(&a, 0.5).unwrap();
        for v in 0..g.vertices().len() {
            if g.vertices()[v].kind == VertexKind::Rnd {
                let to_bottom: f64 = g
                    .probs_of(v)
                    .iter()
                    .filter(|&&(w, _)| w == 0)
                    .map(|&(_, p)| p)
                    .sum();
                assert!((to_bottom - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn undiscounted_game_omits_bottom_edges() {
        let a = fixture("coin.json");
        let g = build_game(&a, 1.0).unwrap();
        for v in 0..g.vertices().len() {
            assert!(g.probs_of(v).iter().all(|&(w, _)| w != 0));
        }
    }

    #[test]
    fn guard_rejects_large_automata() {
        let p = crate::automaton::GenParams {
            n: 6,
            nd_degree: (1, 1),
            prob_degree: (1, 1),
            label_count: 2,
            seed: 0,
        };
        let a = crate::automaton::generate(&p).unwrap();
        assert!(build_game(&a, 1.0).is_err());
    }

    #[test]
    fn phi_is_monotone_and_nonexpansive() {
        let a = fixture("gamblers.json");
        let g = build_game(&a, 0.8).unwrap();
        let m = g.vertices().len();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..30 {
            let f: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
            let gvec: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
            let lo: Vec<f64> = f.iter().zip(&gvec).map(|(a, b)| a.min(*b)).collect();
            let hi: Vec<f64> = f.iter().zip(&gvec).map(|(a, b)| a.max(*b)).collect();
            let phi_lo = g.phi_step(&lo);
            let phi_hi = g.phi_step(&hi);
            for v in 0..m {
                assert!(phi_lo[v] <= phi_hi[v] + 1e-12, "monotone");
            }
            let norm_in: f64 =
                f.iter().zip(&gvec).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let phi_f = g.phi_step(&f);
            let phi_g = g.phi_step(&gvec);
            let norm_out: f64 = phi_f
                .iter()
                .zip(&phi_g)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(norm_out <= norm_in + 1e-12, "nonexpansive");
        }
    }

    #[test]
    fn discounted_games_are_stopping() {
        let a = fixture("gamblers.json");
        let g = build_game(&a, 0.8).unwrap();
        for seed in 0..30 {
            let (smin, smax) = g.random_strategies(seed);
            let reach = g.reach_sink_probability(&smin, &smax);
            for (v, &p) in reach.iter().enumerate() {
                assert!(p >= 1.0 - 1e-6, "vertex {v} reaches a sink with prob {p}");
            }
        }
    }

    #[test]
    fn undiscounted_coin_game_admits_a_non_stopping_strategy_pair() {
        let a = fixture("coin.json");
        let (t, u) = (a.find_state("t").unwrap(), a.find_state("u").unwrap());
        let g = build_game(&a, 1.0).unwrap();
        let start = g.pair_vertex(t, u).unwrap();
        // the min player's structure is forced; search the max player's
        // finitely many strategies for one trapping the play in a cycle
        let (smin, smax0) = g.random_strategies(0);
        let mut found = false;
        let max_vertices: Vec<usize> = smax0.choice.keys().copied().collect();
        let mut stack = vec![smax0];
        // enumerate all max strategies (tiny game)
        for v in max_vertices {
            let mut next = Vec::new();
            for strat in stack {
                for &w in &g.edges()[v] {
                    let mut s2 = strat.clone();
                    s2.choice.insert(v, w);
                    next.push(s2);
                }
            }
            stack = next;
        }
        for smax in &stack {
            let reach = g.reach_sink_probability(&smin, smax);
            if reach[start] <= 1e-9 {
                found = true;
                break;
            }
        }
        assert!(found, "some max strategy keeps the token away from every sink");
    }
}
