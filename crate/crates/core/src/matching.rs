//! Max-covering bipartite matching between trajectories (rows) and
//! current-frame person candidates (columns).
//!
//! The energy of a matching is `λ_D Σd + λ_A Σa − λ_P Σ p_j` over matched
//! pairs. The coverage reward of candidate `j` is folded into every edge
//! incident to `j`, which turns the problem into an ordinary min-cost
//! assignment over the sparse edge set. Among all matchings of maximum
//! cardinality the solver returns the minimum-energy one, breaking ties by the
//! lexicographically smallest sorted pair list.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cap on edges kept per trajectory row.
pub const MAX_EDGES_PER_ROW: usize = 10;

/// Fixed-point factor applied to edge weights inside the solver.
pub const COST_SCALE: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub distance: f64,
    pub appearance: f64,
    pub coverage: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            distance: 1.0,
            appearance: 5.0,
            coverage: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub row: usize,
    pub col: usize,
    pub distance: f64,
    pub appearance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentProblem {
    rows: usize,
    cols: usize,
    edges: Vec<Edge>,
    coverage: Vec<f64>,
    weights: Weights,
    /// Edge indices per row, sorted by column.
    by_row: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub energy: f64,
}

impl AssignmentProblem {
    pub fn new(rows: usize, cols: usize, edges: Vec<Edge>, coverage: Vec<f64>, weights: Weights) -> Result<Self> {
        if coverage.len() != cols {
            return Err(Error::InvalidInput(format!("{} coverage values for {cols} candidates", coverage.len())));
        }
        if let Some(p) = coverage.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidInput(format!("coverage reward {p} outside [0, 1]")));
        }
        if [weights.distance, weights.appearance, weights.coverage]
            .iter()
            .any(|w| !(*w >= 0.0) || !w.is_finite())
        {
            return Err(Error::InvalidInput(format!("weights {weights:?} must be finite and nonnegative")));
        }
        let mut by_row = vec![Vec::new(); rows];
        for (k, e) in edges.iter().enumerate() {
            if e.row >= rows || e.col >= cols {
                return Err(Error::InvalidInput(format!("edge ({}, {}) out of range", e.row, e.col)));
            }
            if !(e.distance >= 0.0) || !(e.appearance >= 0.0) || !e.distance.is_finite() || !e.appearance.is_finite() {
                return Err(Error::InvalidInput(format!("edge ({}, {}) has a negative cost", e.row, e.col)));
            }
            by_row[e.row].push(k);
        }
        for (i, list) in by_row.iter_mut().enumerate() {
            if list.len() > MAX_EDGES_PER_ROW {
                return Err(Error::InvalidInput(format!("row {i} has {} edges", list.len())));
            }
            list.sort_by_key(|&k| edges[k].col);
            if list.windows(2).any(|w| edges[w[0]].col == edges[w[1]].col) {
                return Err(Error::InvalidInput(format!("row {i} has duplicate edges")));
            }
        }
        Ok(AssignmentProblem {
            rows,
            cols,
            edges,
            coverage,
            weights,
            by_row,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn coverage(&self) -> &[f64] {
        &self.coverage
    }

    pub fn weights(&self) -> Weights {
        self.weights
    }

    pub fn find_edge(&self, row: usize, col: usize) -> Option<&Edge> {
        self.by_row
            .get(row)?
            .iter()
            .map(|&k| &self.edges[k])
            .find(|e| e.col == col)
    }

    /// Folded edge weight `λ_D d + λ_A a − λ_P p_j`.
    pub fn edge_weight(&self, e: &Edge) -> f64 {
        self.weights.distance * e.distance + self.weights.appearance * e.appearance
            - self.weights.coverage * self.coverage[e.col]
    }

    /// Edge weight in solver fixed point.
    pub fn scaled_weight(&self, e: &Edge) -> i64 {
        (self.edge_weight(e) * COST_SCALE).round() as i64
    }

    /// Same problem with one candidate's coverage reward replaced.
    pub fn with_coverage(&self, col: usize, p: f64) -> Result<Self> {
        let mut cov = self.coverage.clone();
        cov[col] = p;
        AssignmentProblem::new(self.rows, self.cols, self.edges.clone(), cov, self.weights)
    }

    pub fn with_weights(&self, weights: Weights) -> Result<Self> {
        AssignmentProblem::new(self.rows, self.cols, self.edges.clone(), self.coverage.clone(), weights)
    }

    /// JSON dump for failure triage.
    pub fn debug_json(&self, matching: Option<&Matching>) -> serde_json::Value {
        serde_json::json!({
            "m": self.rows,
            "n": self.cols,
            "edges": self.edges,
            "p": self.coverage,
            "lambda": [self.weights.distance, self.weights.appearance, self.weights.coverage],
            "pairs": matching.map(|m| m.pairs.clone()).unwrap_or_default(),
            "energy": matching.map(|m| m.energy),
        })
    }
}

/// Gating and sparsification parameters for [`build_problem`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildConfig {
    pub gate_radius: f64,
    pub max_edges: usize,
    pub weights: Weights,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            gate_radius: 10.0,
            max_edges: MAX_EDGES_PER_ROW,
            weights: Weights::default(),
        }
    }
}

/// Connects each trajectory to at most `max_edges` of its nearest candidates
/// within the gate radius (ties by candidate index). `appearance(i, j)`
/// supplies the descriptor distance.
pub fn build_problem(
    predicted: &[[f64; 2]],
    candidates: &[[f64; 2]],
    probabilities: &[f64],
    mut appearance: impl FnMut(usize, usize) -> Result<f64>,
    config: &BuildConfig,
) -> Result<AssignmentProblem> {
    let mut edges = Vec::new();
    for (i, t) in predicted.iter().enumerate() {
        let mut near: Vec<(f64, usize)> = candidates
            .iter()
            .enumerate()
            .map(|(j, c)| (((t[0] - c[0]).powi(2) + (t[1] - c[1]).powi(2)).sqrt(), j))
            .filter(|(d, _)| *d <= config.gate_radius)
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        near.truncate(config.max_edges.min(MAX_EDGES_PER_ROW));
        for (d, j) in near {
            edges.push(Edge {
                row: i,
                col: j,
                distance: d,
                appearance: appearance(i, j)?,
            });
        }
    }
    let coverage = probabilities.iter().map(|p| p.clamp(0.0, 1.0)).collect();
    AssignmentProblem::new(predicted.len(), candidates.len(), edges, coverage, config.weights)
}

/// `λ_D Σd + λ_A Σa − λ_P Σ p_j` of a set of pairs.
pub fn energy(problem: &AssignmentProblem, pairs: &[(usize, usize)]) -> Result<f64> {
    check_injection(problem, pairs)?;
    let w = problem.weights;
    let (mut d, mut a, mut p) = (0.0, 0.0, 0.0);
    for &(i, j) in pairs {
        let e = problem
            .find_edge(i, j)
            .ok_or_else(|| Error::InvalidInput(format!("pair ({i}, {j}) is not an edge")))?;
        d += e.distance;
        a += e.appearance;
        p += problem.coverage[j];
    }
    Ok(w.distance * d + w.appearance * a - w.coverage * p)
}

fn check_injection(problem: &AssignmentProblem, pairs: &[(usize, usize)]) -> Result<()> {
    let mut row_used = vec![false; problem.rows];
    let mut col_used = vec![false; problem.cols];
    for &(i, j) in pairs {
        if i >= problem.rows || j >= problem.cols {
            return Err(Error::InvalidInput(format!("pair ({i}, {j}) out of range")));
        }
        if std::mem::replace(&mut row_used[i], true) || std::mem::replace(&mut col_used[j], true) {
            return Err(Error::InvalidInput(format!("pair ({i}, {j}) repeats a node")));
        }
    }
    Ok(())
}

fn finish(problem: &AssignmentProblem, mut pairs: Vec<(usize, usize)>) -> Matching {
    pairs.sort_unstable();
    let energy = energy(problem, &pairs).expect("solver pairs are edges");
    Matching { pairs, energy }
}

/// Restriction of a problem used by the tie-break search: some rows are
/// removed and some pairs are fixed up front.
struct Restriction<'a> {
    forced: &'a [(usize, usize)],
    row_excluded: &'a [bool],
}

/// Successive shortest augmenting paths with node potentials on the fixed-point
/// weights. Returns `(cardinality, total scaled cost, pairs)` of a
/// maximum-cardinality minimum-cost matching of the restricted problem.
fn ssap(problem: &AssignmentProblem, r: &Restriction) -> (usize, i64, Vec<(usize, usize)>) {
    let (m, n) = (problem.rows, problem.cols);
    let mut row_off = r.row_excluded.to_vec();
    let mut col_off = vec![false; n];
    let mut forced_cost = 0i64;
    for &(i, j) in r.forced {
        row_off[i] = true;
        col_off[j] = true;
        forced_cost += problem.scaled_weight(problem.find_edge(i, j).expect("forced pair is an edge"));
    }

    // adjacency with the folded weights, shifted to be nonnegative
    let adj: Vec<Vec<(usize, i64)>> = (0..m)
        .map(|i| {
            if row_off[i] {
                return Vec::new();
            }
            problem.by_row[i]
                .iter()
                .map(|&k| &problem.edges[k])
                .filter(|e| !col_off[e.col])
                .map(|e| (e.col, problem.scaled_weight(e)))
                .collect()
        })
        .collect();
    let shift = adj.iter().flatten().map(|&(_, w)| w).min().unwrap_or(0).min(0);

    const INF: i64 = i64::MAX / 4;
    let mut row_match: Vec<Option<usize>> = vec![None; m];
    let mut col_match: Vec<Option<usize>> = vec![None; n];
    let mut pot_row = vec![0i64; m];
    let mut pot_col = vec![0i64; n];
    let mut pot_sink = 0i64;
    let mut dist_row = vec![INF; m];
    let mut dist_col = vec![INF; n];
    let mut prev_row = vec![usize::MAX; n];
    let mut done_row = vec![false; m];
    let mut done_col = vec![false; n];

    loop {
        dist_row.fill(INF);
        dist_col.fill(INF);
        done_row.fill(false);
        done_col.fill(false);
        // heap entries: (dist, kind 0=row 1=col, index)
        let mut heap = BinaryHeap::new();
        for i in 0..m {
            if !row_off[i] && row_match[i].is_none() && !adj[i].is_empty() {
                dist_row[i] = 0;
                heap.push(Reverse((0i64, 0u8, i)));
            }
        }
        // free columns drain into a virtual sink whose potential trails theirs
        let mut sink: Option<(i64, usize)> = None;
        while let Some(Reverse((d, kind, v))) = heap.pop() {
            match kind {
                0 => {
                    if done_row[v] || d != dist_row[v] {
                        continue;
                    }
                    done_row[v] = true;
                    for &(j, w) in &adj[v] {
                        if row_match[v] == Some(j) || done_col[j] {
                            continue;
                        }
                        let nd = d + (w - shift) + pot_row[v] - pot_col[j];
                        if nd < dist_col[j] {
                            dist_col[j] = nd;
                            prev_row[j] = v;
                            heap.push(Reverse((nd, 1, j)));
                        }
                    }
                }
                1 => {
                    if done_col[v] || d != dist_col[v] {
                        continue;
                    }
                    done_col[v] = true;
                    match col_match[v] {
                        None => {
                            let nd = d + pot_col[v] - pot_sink;
                            if sink.is_none_or(|(sd, _)| nd < sd) {
                                sink = Some((nd, v));
                                heap.push(Reverse((nd, 2, v)));
                            }
                        }
                        Some(i) => {
                            // matched edges are tight under the potentials
                            if d < dist_row[i] {
                                dist_row[i] = d;
                                heap.push(Reverse((d, 0, i)));
                            }
                        }
                    }
                }
                _ => {
                    if sink.is_some_and(|(sd, sv)| sd == d && sv == v) {
                        break;
                    }
                }
            }
        }
        let Some((cap, sink)) = sink else { break };
        pot_sink += cap;
        for i in 0..m {
            pot_row[i] += dist_row[i].min(cap);
        }
        for j in 0..n {
            pot_col[j] += dist_col[j].min(cap);
        }
        let mut j = sink;
        loop {
            let i = prev_row[j];
            let next = row_match[i];
            row_match[i] = Some(j);
            col_match[j] = Some(i);
            match next {
                Some(j2) => j = j2,
                None => break,
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = r.forced.to_vec();
    let mut cost = forced_cost;
    for (i, mj) in row_match.iter().enumerate() {
        if let Some(j) = *mj {
            pairs.push((i, j));
            cost += problem.scaled_weight(problem.find_edge(i, j).unwrap());
        }
    }
    (pairs.len(), cost, pairs)
}

/// Maximum-cardinality, minimum-energy matching with lexicographic tie-break.
pub fn solve(problem: &AssignmentProblem) -> Matching {
    let none_excluded = vec![false; problem.rows];
    let (card, cost, _) = ssap(
        problem,
        &Restriction {
            forced: &[],
            row_excluded: &none_excluded,
        },
    );
    if card == 0 {
        return finish(problem, Vec::new());
    }
    // Fix pairs greedily in lexicographic order, keeping a pair only when an
    // optimal matching still exists with it.
    let mut forced: Vec<(usize, usize)> = Vec::with_capacity(card);
    let mut excluded = vec![false; problem.rows];
    let mut col_taken = vec![false; problem.cols];
    for i in 0..problem.rows {
        if forced.len() == card {
            excluded[i] = true;
            continue;
        }
        let mut chosen = None;
        for &k in &problem.by_row[i] {
            let j = problem.edges[k].col;
            if col_taken[j] {
                continue;
            }
            forced.push((i, j));
            let (c2, cost2, _) = ssap(
                problem,
                &Restriction {
                    forced: &forced,
                    row_excluded: &excluded,
                },
            );
            forced.pop();
            if c2 == card && cost2 == cost {
                chosen = Some(j);
                break;
            }
        }
        match chosen {
            Some(j) => {
                forced.push((i, j));
                col_taken[j] = true;
            }
            None => excluded[i] = true,
        }
    }
    debug_assert_eq!(forced.len(), card);
    finish(problem, forced)
}

/// Exhaustive reference solver over all partial injections (test oracle).
pub fn brute_force(problem: &AssignmentProblem) -> Result<Matching> {
    if problem.rows > 7 || problem.cols > 7 {
        return Err(Error::InvalidInput(format!(
            "brute force limited to 7x7, got {}x{}",
            problem.rows, problem.cols
        )));
    }
    struct Best {
        card: usize,
        cost: i64,
        pairs: Vec<(usize, usize)>,
    }
    fn rec(
        p: &AssignmentProblem,
        i: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        cost: i64,
        best: &mut Best,
    ) {
        if i == p.rows {
            let better = cur.len() > best.card
                || (cur.len() == best.card && (cost < best.cost || (cost == best.cost && *cur < best.pairs)));
            if better {
                best.card = cur.len();
                best.cost = cost;
                best.pairs = cur.clone();
            }
            return;
        }
        for &k in &p.by_row[i] {
            let e = &p.edges[k];
            if used[e.col] {
                continue;
            }
            used[e.col] = true;
            cur.push((i, e.col));
            rec(p, i + 1, used, cur, cost + p.scaled_weight(e), best);
            cur.pop();
            used[e.col] = false;
        }
        rec(p, i + 1, used, cur, cost, best);
    }
    let mut best = Best {
        card: 0,
        cost: 0,
        pairs: Vec::new(),
    };
    rec(problem, 0, &mut vec![false; problem.cols], &mut Vec::new(), 0, &mut best);
    Ok(finish(problem, best.pairs))
}
