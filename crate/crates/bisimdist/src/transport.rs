//! Exact transportation-problem solver over finite distributions.
//!
//! Couplings of a pair of distributions form a transportation polytope; the
//! minimum of a linear cost over it is attained at a vertex (a basic feasible
//! solution whose support is a spanning forest of the bipartite support
//! graph). The solver is a transportation simplex with a North-West-corner
//! initial basis and Bland-style smallest-index pivoting, which makes every
//! run deterministic and cycle-free. Degenerate basic cells are kept in the
//! basis so the vertex support bound always holds.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::automaton::{Dist, MASS_TOL};

/// Reduced costs below this margin trigger a pivot.
const PIVOT_TOL: f64 = 1e-12;
/// Max-flow saturation margin: infeasible iff max flow < 1 - FEAS_TOL.
const FEAS_TOL: f64 = 1e-12;
/// Flows below this are treated as numerically zero when stripping plans.
const STRIP_TOL: f64 = 1e-15;

/// Read-only view of the cost of moving mass from one state to another.
pub trait CostView {
    fn at(&self, u: usize, v: usize) -> f64;
}

impl<F: Fn(usize, usize) -> f64> CostView for F {
    fn at(&self, u: usize, v: usize) -> f64 {
        self(u, v)
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("marginal mismatch: {0}")]
    InvalidDist(String),
    #[error("vertex enumeration guard exceeded: {cells} support cells > 16")]
    GuardExceeded { cells: usize },
}

/// A joint distribution over state pairs with prescribed marginals.
///
/// Entries are sorted by `(left state, right state)` and strictly positive;
/// row sums reproduce the left marginal and column sums the right one.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    entries: Vec<((usize, usize), f64)>,
    left: Dist,
    right: Dist,
}

impl Coupling {
    pub fn entries(&self) -> &[((usize, usize), f64)] {
        &self.entries
    }

    pub fn left(&self) -> &Dist {
        &self.left
    }

    pub fn right(&self) -> &Dist {
        &self.right
    }

    pub fn mass_at(&self, u: usize, v: usize) -> f64 {
        self.entries
            .binary_search_by_key(&(u, v), |&(k, _)| k)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    /// Expected cost of the plan; the solver computes its reported value
    /// through this same summation, so the two agree exactly.
    pub fn cost(&self, cost: &impl CostView) -> f64 {
        self.entries.iter().map(|&((u, v), w)| w * cost.at(u, v)).sum()
    }

    /// Largest violation of the marginal and positivity constraints.
    pub fn marginal_error(&self) -> f64 {
        let mut rows: BTreeMap<usize, f64> = BTreeMap::new();
        let mut cols: BTreeMap<usize, f64> = BTreeMap::new();
        let mut err: f64 = 0.0;
        for &((u, v), w) in &self.entries {
            err = err.max(-w);
            *rows.entry(u).or_insert(0.0) += w;
            *cols.entry(v).or_insert(0.0) += w;
        }
        for &(s, w) in self.left.entries() {
            err = err.max((rows.remove(&s).unwrap_or(0.0) - w).abs());
        }
        for &(s, w) in self.right.entries() {
            err = err.max((cols.remove(&s).unwrap_or(0.0) - w).abs());
        }
        for (_, w) in rows.into_iter().chain(cols) {
            err = err.max(w.abs());
        }
        err
    }

    /// Support cells, for vertex-structure bookkeeping.
    pub fn support(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|&(k, _)| k).collect()
    }
}

/// Outcome of a restricted minimisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Restricted {
    Value(f64),
    Infeasible,
}

fn check_dist(d: &Dist, side: &str) -> Result<(), TransportError> {
    let mass = d.mass();
    if (mass - 1.0).abs() > MASS_TOL {
        return Err(TransportError::InvalidDist(format!("{side} marginal sums to {mass}")));
    }
    Ok(())
}

/// Transportation simplex state over the supports of the two marginals.
///
/// Rows are nodes `0..m`, columns are nodes `m..m+n`. The basis is always a
/// spanning forest of the allowed-arc graph with exactly one tree per
/// connected component.
struct Simplex<'c, C: CostView> {
    m: usize,
    n: usize,
    row_state: Vec<usize>,
    col_state: Vec<usize>,
    supply: Vec<f64>,
    demand: Vec<f64>,
    cost: &'c C,
    allowed: Vec<bool>,  // m*n arc mask
    in_basis: Vec<bool>, // m*n
    flow: Vec<f64>,      // m*n
}

impl<'c, C: CostView> Simplex<'c, C> {
    fn new(mu: &Dist, nu: &Dist, cost: &'c C) -> Simplex<'c, C> {
        let row_state: Vec<usize> = mu.entries().iter().map(|&(s, _)| s).collect();
        let col_state: Vec<usize> = nu.entries().iter().map(|&(s, _)| s).collect();
        let supply: Vec<f64> = mu.entries().iter().map(|&(_, w)| w).collect();
        let demand: Vec<f64> = nu.entries().iter().map(|&(_, w)| w).collect();
        let (m, n) = (supply.len(), demand.len());
        Simplex {
            m,
            n,
            row_state,
            col_state,
            supply,
            demand,
            cost,
            allowed: vec![true; m * n],
            in_basis: vec![false; m * n],
            flow: vec![0.0; m * n],
        }
    }

    fn cell(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    fn arc_cost(&self, i: usize, j: usize) -> f64 {
        self.cost.at(self.row_state[i], self.col_state[j])
    }

    /// North-West-corner initial basis; exactly m+n-1 basic cells, including
    /// degenerate ones.
    fn init_northwest(&mut self) {
        let (mut i, mut j) = (0, 0);
        let mut a = self.supply.clone();
        let mut b = self.demand.clone();
        loop {
            let x = a[i].min(b[j]).max(0.0);
            let c = self.cell(i, j);
            self.in_basis[c] = true;
            self.flow[c] = x;
            a[i] -= x;
            b[j] -= x;
            if i == self.m - 1 && j == self.n - 1 {
                break;
            }
            if a[i] <= 0.0 && i < self.m - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    /// Neighbour lists of the basis forest: node -> (neighbour node, cell).
    fn basis_adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for i in 0..self.m {
            for j in 0..self.n {
                let c = self.cell(i, j);
                if self.in_basis[c] {
                    adj[i].push((self.m + j, c));
                    adj[self.m + j].push((i, c));
                }
            }
        }
        adj
    }

    /// Dual potentials per node (u on rows, v on columns), rooted per tree.
    fn duals(&self) -> Vec<f64> {
        let adj = self.basis_adjacency();
        let mut pot = vec![f64::NAN; self.m + self.n];
        for root in 0..self.m + self.n {
            if !pot[root].is_nan() {
                continue;
            }
            pot[root] = 0.0;
            let mut stack = vec![root];
            while let Some(node) = stack.pop() {
                for &(next, c) in &adj[node] {
                    if pot[next].is_nan() {
                        let (i, j) = (c / self.n, c % self.n);
                        // u_i + v_j = cost_ij on basic cells
                        pot[next] = self.arc_cost(i, j) - pot[node];
                        stack.push(next);
                    }
                }
            }
        }
        pot
    }

    /// First allowed nonbasic cell (lexicographic) with reduced cost below
    /// -PIVOT_TOL.
    fn entering(&self, pot: &[f64]) -> Option<(usize, usize)> {
        for i in 0..self.m {
            for j in 0..self.n {
                let c = self.cell(i, j);
                if !self.allowed[c] || self.in_basis[c] {
                    continue;
                }
                let reduced = self.arc_cost(i, j) - pot[i] - pot[self.m + j];
                if reduced < -PIVOT_TOL {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Unique basis path from row `ei` to column `ej`, as a list of cells.
    fn path_cells(&self, ei: usize, ej: usize) -> Vec<usize> {
        let adj = self.basis_adjacency();
        let target = self.m + ej;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        seen[ei] = true;
        let mut queue = std::collections::VecDeque::from([ei]);
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &(next, c) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, c));
                    queue.push_back(next);
                }
            }
        }
        assert!(seen[target], "entering arc endpoints must share a basis tree");
        let mut cells = Vec::new();
        let mut node = target;
        while node != ei {
            let (prev, c) = parent[node].expect("path parent");
            cells.push(c);
            node = prev;
        }
        cells.reverse();
        cells
    }

    /// One simplex pivot on the entering cell. Returns false when the pivot
    /// is degenerate in a way that only swaps basis cells.
    fn pivot(&mut self, ei: usize, ej: usize) {
        let path = self.path_cells(ei, ej);
        // Walking row ei -> ... -> col ej, path cells alternate -,+,-,...,-
        let minus: Vec<usize> = path.iter().copied().step_by(2).collect();
        let plus: Vec<usize> = path.iter().copied().skip(1).step_by(2).collect();
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for &c in &minus {
            let f = self.flow[c];
            if f < theta - 1e-18 || (f <= theta + 1e-18 && c < leaving) {
                theta = f;
                leaving = c;
            }
        }
        let theta = theta.max(0.0);
        for &c in &minus {
            self.flow[c] = (self.flow[c] - theta).max(0.0);
        }
        for &c in &plus {
            self.flow[c] += theta;
        }
        let ec = self.cell(ei, ej);
        self.in_basis[ec] = true;
        self.flow[ec] = theta;
        self.in_basis[leaving] = false;
        self.flow[leaving] = 0.0;
    }

    /// Runs pivots to optimality.
    fn optimize(&mut self) {
        let cap = 1000 * (self.m + self.n) * (self.m + self.n) + 1000;
        for _ in 0..cap {
            let pot = self.duals();
            match self.entering(&pot) {
                Some((i, j)) => self.pivot(i, j),
                None => return,
            }
        }
        panic!("transportation simplex exceeded its pivot cap");
    }

    /// Extracts the plan from the current basis, dropping numerically zero
    /// cells.
    fn plan(&self, mu: &Dist, nu: &Dist) -> Coupling {
        let mut entries: Vec<((usize, usize), f64)> = Vec::new();
        for i in 0..self.m {
            for j in 0..self.n {
                let c = self.cell(i, j);
                if self.in_basis[c] && self.flow[c] > STRIP_TOL {
                    entries.push(((self.row_state[i], self.col_state[j]), self.flow[c]));
                }
            }
        }
        entries.sort_by_key(|&(k, _)| k);
        Coupling { entries, left: mu.clone(), right: nu.clone() }
    }
}

/// Minimum-cost coupling of `mu` and `nu` under the given cost.
///
/// The value is the exact optimum attained by the returned plan, which is a
/// vertex of the transportation polytope (support at most
/// `|supp mu| + |supp nu| - 1`). Deterministic for fixed inputs.
pub fn min_cost_coupling(
    mu: &Dist,
    nu: &Dist,
    cost: &impl CostView,
) -> Result<(f64, Coupling), TransportError> {
    check_dist(mu, "left")?;
    check_dist(nu, "right")?;
    let mut sx = Simplex::new(mu, nu, cost);
    sx.init_northwest();
    sx.optimize();
    let plan = sx.plan(mu, nu);
    let value = plan.cost(cost);
    Ok((value, plan))
}

/// The North-West-corner coupling: the basic feasible solution obtained by
/// exhausting supplies and demands in index order. A vertex of the polytope,
/// computed without any pivoting.
pub fn northwest_coupling(mu: &Dist, nu: &Dist) -> Result<Coupling, TransportError> {
    check_dist(mu, "left")?;
    check_dist(nu, "right")?;
    let zero_cost = |_: usize, _: usize| 0.0;
    let mut sx = Simplex::new(mu, nu, &zero_cost);
    sx.init_northwest();
    Ok(sx.plan(mu, nu))
}

/// Max flow from `mu` to `nu` through the allowed arcs (unit total supply).
/// Returns the attained flow value and per-arc flows keyed by support index.
fn max_flow(
    mu: &Dist,
    nu: &Dist,
    allowed: &impl Fn(usize, usize) -> bool,
) -> (f64, Vec<Vec<f64>>) {
    let m = mu.support_size();
    let n = nu.support_size();
    // nodes: 0 = source, 1..=m rows, m+1..=m+n cols, m+n+1 = sink
    let nodes = m + n + 2;
    let (source, sink) = (0, m + n + 1);
    let mut cap = vec![vec![0.0f64; nodes]; nodes];
    for (i, &(_, w)) in mu.entries().iter().enumerate() {
        cap[source][1 + i] = w;
    }
    for (j, &(_, w)) in nu.entries().iter().enumerate() {
        cap[1 + m + j][sink] = w;
    }
    for (i, &(u, _)) in mu.entries().iter().enumerate() {
        for (j, &(v, _)) in nu.entries().iter().enumerate() {
            if allowed(u, v) {
                cap[1 + i][1 + m + j] = 2.0; // effectively unbounded
            }
        }
    }
    let mut flow = vec![vec![0.0f64; nodes]; nodes];
    let mut total = 0.0;
    loop {
        // BFS for an augmenting path with residual above FEAS_TOL
        let mut parent = vec![usize::MAX; nodes];
        parent[source] = source;
        let mut queue = std::collections::VecDeque::from([source]);
        while let Some(x) = queue.pop_front() {
            for y in 0..nodes {
                if parent[y] == usize::MAX && cap[x][y] - flow[x][y] > FEAS_TOL {
                    parent[y] = x;
                    queue.push_back(y);
                }
            }
        }
        if parent[sink] == usize::MAX {
            break;
        }
        let mut bottleneck = f64::INFINITY;
        let mut y = sink;
        while y != source {
            let x = parent[y];
            bottleneck = bottleneck.min(cap[x][y] - flow[x][y]);
            y = x;
        }
        let mut y = sink;
        while y != source {
            let x = parent[y];
            flow[x][y] += bottleneck;
            flow[y][x] -= bottleneck;
            y = x;
        }
        total += bottleneck;
    }
    let mut arc = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            arc[i][j] = flow[1 + i][1 + m + j].max(0.0);
        }
    }
    (total, arc)
}

/// Whether a coupling of `mu` and `nu` supported inside `allowed` exists.
pub fn feasible(mu: &Dist, nu: &Dist, allowed: &impl Fn(usize, usize) -> bool) -> bool {
    let (total, _) = max_flow(mu, nu, allowed);
    total >= 1.0 - FEAS_TOL
}

/// Minimum cost over couplings whose support lies inside `allowed`, or
/// `Infeasible` when no such coupling exists.
pub fn restricted_min(
    mu: &Dist,
    nu: &Dist,
    cost: &impl CostView,
    allowed: &impl Fn(usize, usize) -> bool,
) -> Result<Restricted, TransportError> {
    check_dist(mu, "left")?;
    check_dist(nu, "right")?;
    let (total, arc) = max_flow(mu, nu, allowed);
    if total < 1.0 - FEAS_TOL {
        return Ok(Restricted::Infeasible);
    }

    let mut sx = Simplex::new(mu, nu, cost);
    for i in 0..sx.m {
        for j in 0..sx.n {
            let c = sx.cell(i, j);
            sx.allowed[c] = allowed(sx.row_state[i], sx.col_state[j]);
            sx.flow[c] = if sx.allowed[c] { arc[i][j] } else { 0.0 };
        }
    }
    cancel_cycles(&mut sx);
    // basic = positive-flow forest, extended to a maximal spanning forest of
    // the allowed graph with degenerate cells
    let mut dsu = Dsu::new(sx.m + sx.n);
    for i in 0..sx.m {
        for j in 0..sx.n {
            let c = sx.cell(i, j);
            if sx.flow[c] > STRIP_TOL {
                sx.in_basis[c] = true;
                dsu.union(i, sx.m + j);
            } else {
                sx.flow[c] = 0.0;
            }
        }
    }
    for i in 0..sx.m {
        for j in 0..sx.n {
            let c = sx.cell(i, j);
            if sx.allowed[c] && !sx.in_basis[c] && dsu.union(i, sx.m + j) {
                sx.in_basis[c] = true; // degenerate
            }
        }
    }
    sx.optimize();
    let plan = sx.plan(mu, nu);
    Ok(Restricted::Value(plan.cost(cost)))
}

/// Removes cycles from the positive-flow support so it becomes a forest,
/// preserving the marginals.
fn cancel_cycles<C: CostView>(sx: &mut Simplex<'_, C>) {
    loop {
        // DFS over the positive-support graph looking for a cycle
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); sx.m + sx.n];
        for i in 0..sx.m {
            for j in 0..sx.n {
                let c = sx.cell(i, j);
                if sx.flow[c] > STRIP_TOL {
                    adj[i].push((sx.m + j, c));
                    adj[sx.m + j].push((i, c));
                }
            }
        }
        let cycle = match find_cycle(&adj, sx.m + sx.n) {
            Some(c) => c,
            None => return,
        };
        // alternate +/- around the cycle; cancel the class holding the
        // minimum-flow cell so at least one cell drops out
        let even: Vec<usize> = cycle.iter().copied().step_by(2).collect();
        let odd: Vec<usize> = cycle.iter().copied().skip(1).step_by(2).collect();
        let min_of = |cells: &[usize]| {
            cells.iter().map(|&c| sx.flow[c]).fold(f64::INFINITY, f64::min)
        };
        let (minus, plus) = if min_of(&even) <= min_of(&odd) { (even, odd) } else { (odd, even) };
        let theta = min_of(&minus);
        for c in minus {
            sx.flow[c] = (sx.flow[c] - theta).max(0.0);
            if sx.flow[c] <= STRIP_TOL {
                sx.flow[c] = 0.0;
            }
        }
        for c in plus {
            sx.flow[c] += theta;
        }
    }
}

/// Finds any cycle in an undirected graph given as adjacency (node, edge id)
/// lists; returns the edge ids around the cycle in order.
fn find_cycle(adj: &[Vec<(usize, usize)>], nodes: usize) -> Option<Vec<usize>> {
    let mut state = vec![0u8; nodes]; // 0 unseen, 1 on stack, 2 done
    let mut parent_edge = vec![usize::MAX; nodes];
    let mut parent_node = vec![usize::MAX; nodes];
    for root in 0..nodes {
        if state[root] != 0 {
            continue;
        }
        let mut stack = vec![(root, usize::MAX, usize::MAX)];
        while let Some((node, from, via)) = stack.pop() {
            if state[node] == 1 {
                continue;
            }
            state[node] = 1;
            parent_node[node] = from;
            parent_edge[node] = via;
            for &(next, edge) in &adj[node] {
                if edge == via {
                    continue;
                }
                if state[next] == 1 {
                    // back edge: recover node path next..=node
                    let mut cells = vec![edge];
                    let mut x = node;
                    while x != next {
                        cells.push(parent_edge[x]);
                        x = parent_node[x];
                    }
                    return Some(cells);
                }
                if state[next] == 0 {
                    stack.push((next, node, edge));
                }
            }
        }
    }
    None
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Dsu {
        Dsu { parent: (0..n).collect() }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    /// Returns true when the two nodes were in different components.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// All extreme points of the coupling polytope, as basic feasible solutions
/// over spanning trees of the bipartite support graph. Guarded to small
/// supports.
pub fn enumerate_vertices(mu: &Dist, nu: &Dist) -> Result<Vec<Coupling>, TransportError> {
    check_dist(mu, "left")?;
    check_dist(nu, "right")?;
    let m = mu.support_size();
    let n = nu.support_size();
    if m * n > 16 {
        return Err(TransportError::GuardExceeded { cells: m * n });
    }
    let supply: Vec<f64> = mu.entries().iter().map(|&(_, w)| w).collect();
    let demand: Vec<f64> = nu.entries().iter().map(|&(_, w)| w).collect();
    let row_state: Vec<usize> = mu.entries().iter().map(|&(s, _)| s).collect();
    let col_state: Vec<usize> = nu.entries().iter().map(|&(s, _)| s).collect();

    let edges: Vec<(usize, usize)> =
        (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let need = m + n - 1;
    let mut seen: BTreeMap<Vec<(usize, usize, i64)>, Coupling> = BTreeMap::new();

    // every size-(m+n-1) acyclic edge subset is a spanning tree of K_{m,n}
    let mut chosen: Vec<usize> = Vec::with_capacity(need);
    enumerate_trees(&edges, 0, need, &mut chosen, &mut |tree| {
        if let Some(flows) = solve_tree(m, n, &supply, &demand, tree) {
            let mut entries: Vec<((usize, usize), f64)> = Vec::new();
            let mut key = Vec::new();
            for (&(i, j), &f) in tree.iter().zip(&flows) {
                if f > STRIP_TOL {
                    entries.push(((row_state[i], col_state[j]), f));
                    key.push((i, j, (f * 1e9).round() as i64));
                }
            }
            entries.sort_by_key(|&(k, _)| k);
            key.sort_unstable();
            seen.entry(key).or_insert(Coupling {
                entries,
                left: mu.clone(),
                right: nu.clone(),
            });
        }
    });
    Ok(seen.into_values().collect())
}

/// Recursively enumerates acyclic edge subsets of the given size, invoking
/// the callback with each spanning candidate.
fn enumerate_trees(
    edges: &[(usize, usize)],
    start: usize,
    need: usize,
    chosen: &mut Vec<usize>,
    f: &mut impl FnMut(&[(usize, usize)]),
) {
    if chosen.len() == need {
        let tree: Vec<(usize, usize)> = chosen.iter().map(|&e| edges[e]).collect();
        f(&tree);
        return;
    }
    let remaining = need - chosen.len();
    for e in start..edges.len() {
        if edges.len() - e < remaining {
            break;
        }
        chosen.push(e);
        // acyclicity check over the partial selection
        let mut dsu = Dsu::new(edge_nodes(edges));
        let mut ok = true;
        for &c in chosen.iter() {
            let (i, j) = edges[c];
            if !dsu.union(i, edge_nodes(edges) / 2 + j) {
                ok = false;
                break;
            }
        }
        if ok {
            enumerate_trees(edges, e + 1, need, chosen, f);
        }
        chosen.pop();
    }
}

fn edge_nodes(edges: &[(usize, usize)]) -> usize {
    let m = edges.iter().map(|&(i, _)| i + 1).max().unwrap_or(0);
    let n = edges.iter().map(|&(_, j)| j + 1).max().unwrap_or(0);
    2 * m.max(n)
}

/// Solves the unique flows on a spanning tree by peeling leaves; `None` when
/// some flow comes out negative (infeasible basis).
fn solve_tree(
    m: usize,
    n: usize,
    supply: &[f64],
    demand: &[f64],
    tree: &[(usize, usize)],
) -> Option<Vec<f64>> {
    let nodes = m + n;
    let mut residual: Vec<f64> = supply.iter().chain(demand.iter()).copied().collect();
    let mut degree = vec![0usize; nodes];
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (e, &(i, j)) in tree.iter().enumerate() {
        degree[i] += 1;
        degree[m + j] += 1;
        incident[i].push(e);
        incident[m + j].push(e);
    }
    if tree.len() + 1 != nodes {
        return None;
    }
    let mut flows = vec![f64::NAN; tree.len()];
    let mut done_edge = vec![false; tree.len()];
    let mut leaves: Vec<usize> = (0..nodes).filter(|&v| degree[v] == 1).collect();
    while let Some(v) = leaves.pop() {
        let Some(&e) = incident[v].iter().find(|&&e| !done_edge[e]) else {
            continue;
        };
        let (i, j) = tree[e];
        let other = if v == i { m + j } else { i };
        let f = residual[v];
        if f < -1e-12 {
            return None;
        }
        flows[e] = f.max(0.0);
        residual[v] = 0.0;
        residual[other] -= f;
        done_edge[e] = true;
        degree[other] -= 1;
        degree[v] = 0;
        if degree[other] == 1 {
            leaves.push(other);
        }
    }
    if flows.iter().any(|f| f.is_nan() || *f < -1e-12) {
        return None;
    }
    Some(flows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(pairs: &[(usize, f64)]) -> Dist {
        Dist::from_pairs(pairs).unwrap()
    }

    fn indicator(bad: &'static [(usize, usize)]) -> impl Fn(usize, usize) -> f64 {
        move |u, v| if bad.contains(&(u, v)) { 1.0 } else { 0.0 }
    }

    #[test]
    fn identity_marginals_zero_diagonal_cost() {
        let mu = dist(&[(0, 0.3), (1, 0.7)]);
        let cost = |u: usize, v: usize| if u == v { 0.0 } else { 1.0 };
        let (value, plan) = min_cost_coupling(&mu, &mu, &cost).unwrap();
        assert_eq!(value, 0.0);
        assert_eq!(plan.entries(), &[((0, 0), 0.3), ((1, 1), 0.7)]);
    }

    #[test]
    fn dirac_pair_has_unique_coupling() {
        let (value, plan) =
            min_cost_coupling(&Dist::dirac(3), &Dist::dirac(1), &|_, _| 0.25).unwrap();
        assert_eq!(value, 0.25);
        assert_eq!(plan.entries(), &[((3, 1), 1.0)]);
    }

    #[test]
    fn fair_vs_biased_coin() {
        // states: 0 = h, 1 = t
        let fair = dist(&[(0, 0.5), (1, 0.5)]);
        let biased = dist(&[(0, 0.51), (1, 0.49)]);
        let cost = indicator(&[(0, 1), (1, 0)]);
        let (value, plan) = min_cost_coupling(&fair, &biased, &cost).unwrap();
        assert!((value - 0.01).abs() < 1e-12, "value {value}");
        assert!((plan.mass_at(0, 0) - 0.5).abs() < 1e-12);
        assert!((plan.mass_at(1, 1) - 0.49).abs() < 1e-12);
        assert!((plan.mass_at(1, 0) - 0.01).abs() < 1e-12);
        assert!(plan.support().len() <= 3);
    }

    #[test]
    fn plan_cost_equals_value_exactly() {
        let mu = dist(&[(0, 0.2), (2, 0.5), (4, 0.3)]);
        let nu = dist(&[(1, 0.6), (3, 0.4)]);
        let cost = |u: usize, v: usize| ((u * 7 + v * 13) % 10) as f64 / 10.0;
        let (value, plan) = min_cost_coupling(&mu, &nu, &cost).unwrap();
        assert_eq!(value, plan.cost(&cost));
        assert!(plan.marginal_error() < 1e-12);
    }

    #[test]
    fn restricted_full_relation_matches_unrestricted() {
        let mu = dist(&[(0, 0.5), (1, 0.5)]);
        let nu = dist(&[(0, 0.51), (1, 0.49)]);
        let cost = indicator(&[(0, 1), (1, 0)]);
        let (value, _) = min_cost_coupling(&mu, &nu, &cost).unwrap();
        match restricted_min(&mu, &nu, &cost, &|_, _| true).unwrap() {
            Restricted::Value(v) => assert!((v - value).abs() < 1e-12),
            Restricted::Infeasible => panic!("full relation must be feasible"),
        }
    }

    #[test]
    fn restricted_dirac_single_pair() {
        let cost = |_: usize, _: usize| 0.7;
        let r = restricted_min(&Dist::dirac(0), &Dist::dirac(1), &cost, &|u, v| {
            (u, v) == (0, 1)
        })
        .unwrap();
        assert_eq!(r, Restricted::Value(0.7));
    }

    #[test]
    fn restricted_antidiagonal_forces_value_one() {
        let mu = dist(&[(0, 0.5), (1, 0.5)]);
        let cost = indicator(&[(0, 1), (1, 0)]);
        let r = restricted_min(&mu, &mu, &cost, &|u, v| u != v).unwrap();
        match r {
            Restricted::Value(v) => assert!((v - 1.0).abs() < 1e-12, "value {v}"),
            Restricted::Infeasible => panic!("antidiagonal coupling exists"),
        }
    }

    #[test]
    fn restricted_detects_infeasibility() {
        let mu = dist(&[(0, 0.5), (1, 0.5)]);
        let nu = dist(&[(0, 0.51), (1, 0.49)]);
        // diagonal-only support strands 0.01 of mass
        let r = restricted_min(&mu, &nu, &|_, _| 0.0, &|u, v| u == v).unwrap();
        assert_eq!(r, Restricted::Infeasible);
        assert!(!feasible(&mu, &nu, &|u, v| u == v));
        assert!(feasible(&mu, &nu, &|u, v| u == v || (u, v) == (1, 0)));
    }

    #[test]
    fn enumerate_dirac_pairs() {
        let vs = enumerate_vertices(&Dist::dirac(0), &Dist::dirac(5)).unwrap();
        assert_eq!(vs.len(), 1);
        assert_eq!(vs[0].entries(), &[((0, 5), 1.0)]);
    }

    #[test]
    fn enumerate_one_dirac_marginal() {
        let mu = dist(&[(1, 0.5), (2, 0.5)]);
        let vs = enumerate_vertices(&mu, &Dist::dirac(1)).unwrap();
        assert_eq!(vs.len(), 1);
        assert_eq!(vs[0].entries(), &[((1, 1), 0.5), ((2, 1), 0.5)]);
    }

    #[test]
    fn enumerate_two_by_two_symmetric() {
        let mu = dist(&[(0, 0.5), (1, 0.5)]);
        let vs = enumerate_vertices(&mu, &mu).unwrap();
        assert_eq!(vs.len(), 2, "diagonal and anti-diagonal");
        for v in &vs {
            assert!(v.marginal_error() < 1e-12);
        }
    }

    #[test]
    fn enumeration_guard() {
        let mu = dist(&(0..5).map(|i| (i, 0.2)).collect::<Vec<_>>());
        let nu = dist(&(0..4).map(|i| (i, 0.25)).collect::<Vec<_>>());
        assert!(matches!(
            enumerate_vertices(&mu, &nu),
            Err(TransportError::GuardExceeded { cells: 20 })
        ));
    }

    #[test]
    fn simplex_matches_vertex_enumeration() {
        // a couple of fixed instances with awkward costs
        let cases: Vec<(Dist, Dist)> = vec![
            (dist(&[(0, 0.25), (1, 0.25), (2, 0.5)]), dist(&[(0, 0.1), (3, 0.9)])),
            (dist(&[(0, 0.4), (2, 0.6)]), dist(&[(1, 0.3), (2, 0.3), (3, 0.4)])),
            (
                dist(&[(0, 0.25), (1, 0.25), (2, 0.25), (3, 0.25)]),
                dist(&[(0, 0.4), (1, 0.1), (2, 0.2), (3, 0.3)]),
            ),
        ];
        for (k, (mu, nu)) in cases.into_iter().enumerate() {
            let cost = move |u: usize, v: usize| (((u + 1) * (v + 3) + k) % 11) as f64 / 11.0;
            let (value, plan) = min_cost_coupling(&mu, &nu, &cost).unwrap();
            let brute = enumerate_vertices(&mu, &nu)
                .unwrap()
                .iter()
                .map(|c| c.cost(&cost))
                .fold(f64::INFINITY, f64::min);
            assert!((value - brute).abs() < 1e-9, "case {k}: {value} vs {brute}");
            assert!(plan.support().len() <= mu.support_size() + nu.support_size() - 1);
        }
    }
}
