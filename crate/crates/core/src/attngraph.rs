//! Feedforward attention graphs and their walk / diffusion matrices.
//!
//! Vertices are 0-based in the API (`0..n`, sink `n - 1`). The JSON edge-list
//! fixture format uses 1-based labels to match how positions are usually
//! written down.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use num_rational::Ratio;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{matmul, tv_distance_slices, Matrix, ProbVector, RngStream};

/// DAG on ordered vertices where every edge `(j → i)` has `j ≤ i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedforwardGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl FeedforwardGraph {
    /// Builds a graph from `(from, to)` pairs and adds a self-loop at every vertex.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let edges = edges.into_iter().chain((0..n).map(|v| (v, v))).collect::<Vec<_>>();
        Self::without_forced_loops(n, edges)
    }

    /// Builds a graph exactly as given. Every vertex still needs an outgoing
    /// edge so the walk matrix is defined.
    pub fn without_forced_loops(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::contract("graph needs at least one vertex"));
        }
        let edges: BTreeSet<_> = edges.into_iter().collect();
        for &(j, i) in &edges {
            if i >= n || j >= n {
                return Err(Error::contract(format!("edge ({j} -> {i}) outside 0..{n}")));
            }
            if j > i {
                return Err(Error::contract(format!("edge ({j} -> {i}) points backwards")));
            }
        }
        let g = Self { n, edges };
        if let Some(v) = (0..n).find(|&v| g.out_degree(v) == 0) {
            return Err(Error::contract(format!("vertex {v} has no outgoing edge")));
        }
        Ok(g)
    }

    /// Pure chain `0 → 1 → … → n-1` with a self-loop only at the sink.
    pub fn chain(n: usize) -> Self {
        let edges = (0..n.saturating_sub(1)).map(|j| (j, j + 1)).chain([(n - 1, n - 1)]);
        Self::without_forced_loops(n, edges).expect("chain is feedforward")
    }

    /// Random graph: each forward edge kept with probability `q`, self-loops
    /// forced, and `(j → j+1)` added where a vertex would otherwise have no
    /// forward edge, so the sink is reachable from everywhere.
    pub fn random(n: usize, q: f64, rng: &mut RngStream) -> Self {
        let mut edges = BTreeSet::new();
        for j in 0..n {
            edges.insert((j, j));
            let mut forward = false;
            for i in (j + 1)..n {
                if rng.uniform() < q {
                    edges.insert((j, i));
                    forward = true;
                }
            }
            if !forward && j + 1 < n {
                edges.insert((j, j + 1));
            }
        }
        Self { n, edges }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sink(&self) -> usize {
        self.n - 1
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.edges.range((v, 0)..=(v, usize::MAX)).count()
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|&&(_, i)| i == v).count()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: GraphDoc = serde_json::from_str(s)?;
        doc.into_graph()
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let doc: GraphDoc = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        doc.into_graph().map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_json_string(&self) -> String {
        let doc = GraphDoc {
            n: self.n,
            edges: self.edges.iter().map(|&(j, i)| [j + 1, i + 1]).collect(),
        };
        serde_json::to_string(&doc).expect("graph doc serializes")
    }
}

/// `{n, edges: [[j, i], …]}` with 1-based vertex labels. Self-loops are added on load.
#[derive(Debug, Serialize, Deserialize)]
struct GraphDoc {
    n: usize,
    edges: Vec<[usize; 2]>,
}

impl GraphDoc {
    fn into_graph(self) -> Result<FeedforwardGraph> {
        if self.edges.iter().flatten().any(|&v| v == 0) {
            return Err(Error::contract("edge labels are 1-based"));
        }
        FeedforwardGraph::new(self.n, self.edges.iter().map(|&[j, i]| (j - 1, i - 1)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// Column-stochastic: column `j` is the distribution of the next vertex from `j`.
    Walk,
    /// Row-stochastic: row `i` mixes the signals arriving at `i`.
    Diffusion,
}

impl Orientation {
    fn name(self) -> &'static str {
        match self {
            Orientation::Walk => "walk",
            Orientation::Diffusion => "diffusion",
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Square stochastic matrix tagged with the axis along which it sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    matrix: Matrix,
    orientation: Orientation,
}

impl TransitionMatrix {
    pub fn new(matrix: Matrix, orientation: Orientation) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::dims("transition matrix must be square"));
        }
        if matrix.as_slice().iter().any(|&x| x < 0.0) {
            return Err(Error::contract("negative transition probability"));
        }
        let sums = match orientation {
            Orientation::Walk => matrix.col_sums(),
            Orientation::Diffusion => matrix.row_sums(),
        };
        let tol = matrix.precision().mass_tolerance();
        if let Some((k, s)) = sums.iter().enumerate().find(|(_, s)| (*s - 1.0).abs() > tol) {
            return Err(Error::contract(format!(
                "{orientation} matrix: line {k} sums to {s}"
            )));
        }
        Ok(Self {
            matrix,
            orientation,
        })
    }

    /// Like [`TransitionMatrix::new`], but also requires causal (lower-triangular) support.
    pub fn causal(matrix: Matrix, orientation: Orientation) -> Result<Self> {
        if !matrix.is_lower_triangular() {
            return Err(Error::contract("support is not lower-triangular"));
        }
        Self::new(matrix, orientation)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_causal(&self) -> bool {
        self.matrix.is_lower_triangular()
    }

    pub(crate) fn expect(&self, orientation: Orientation) -> Result<()> {
        if self.orientation != orientation {
            return Err(Error::Orientation {
                expected: orientation.name(),
                found: self.orientation.name(),
            });
        }
        Ok(())
    }

    /// Same support, renormalized along the other axis. A line with no
    /// mass becomes a self-loop.
    pub fn reoriented(&self, orientation: Orientation) -> TransitionMatrix {
        if orientation == self.orientation {
            return self.clone();
        }
        let n = self.n();
        let mut m = Matrix::zeros(n, n).with_precision(self.matrix.precision());
        match orientation {
            Orientation::Walk => {
                let sums = self.matrix.col_sums();
                for i in 0..n {
                    for j in 0..n {
                        if sums[j] > 0.0 {
                            m.set(i, j, self.matrix.get(i, j) / sums[j]);
                        }
                    }
                }
                for (j, s) in sums.iter().enumerate() {
                    if *s <= 0.0 {
                        m.set(j, j, 1.0);
                    }
                }
            }
            Orientation::Diffusion => {
                let sums = self.matrix.row_sums();
                for i in 0..n {
                    for j in 0..n {
                        if sums[i] > 0.0 {
                            m.set(i, j, self.matrix.get(i, j) / sums[i]);
                        } else if i == j {
                            m.set(i, j, 1.0);
                        }
                    }
                }
            }
        }
        TransitionMatrix {
            matrix: m,
            orientation,
        }
    }
}

/// Heads sharing a vertex set, with convex mixing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSystem {
    heads: Vec<TransitionMatrix>,
    weights: Vec<f64>,
}

impl HeadSystem {
    pub fn new(heads: Vec<TransitionMatrix>, weights: Vec<f64>) -> Result<Self> {
        let first = heads
            .first()
            .ok_or_else(|| Error::contract("head system needs at least one head"))?;
        if heads.len() != weights.len() {
            return Err(Error::dims("one weight per head"));
        }
        if heads
            .iter()
            .any(|h| h.n() != first.n() || h.orientation() != first.orientation())
        {
            return Err(Error::contract("heads differ in size or orientation"));
        }
        check_convex(&weights)?;
        Ok(Self { heads, weights })
    }

    pub fn heads(&self) -> &[TransitionMatrix] {
        &self.heads
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n(&self) -> usize {
        self.heads[0].n()
    }

    pub fn orientation(&self) -> Orientation {
        self.heads[0].orientation()
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.heads.clone(), weights)
    }
}

pub(crate) fn check_convex(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::contract("weights must be non-negative"));
    }
    let s: f64 = weights.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("weights sum to {s}, not 1")));
    }
    Ok(())
}

/// Entry values `1/δ` as exact rationals, row-major.
pub fn exact_entries(g: &FeedforwardGraph, orientation: Orientation) -> Result<Vec<Ratio<u64>>> {
    let n = g.n();
    let mut out = vec![Ratio::from_integer(0); n * n];
    for (j, i) in g.edges() {
        let deg = match orientation {
            Orientation::Walk => g.out_degree(j),
            Orientation::Diffusion => g.in_degree(i),
        };
        out[i * n + j] = Ratio::new(1, deg as u64);
    }
    if orientation == Orientation::Diffusion {
        if let Some(v) = (0..n).find(|&v| g.in_degree(v) == 0) {
            return Err(Error::contract(format!("vertex {v} has no incoming edge")));
        }
    }
    Ok(out)
}

fn from_exact(n: usize, entries: &[Ratio<u64>], orientation: Orientation) -> TransitionMatrix {
    let data = entries
        .iter()
        .map(|r| r.to_f64().expect("ratio converts"))
        .collect();
    let matrix = Matrix::from_vec(n, n, data).expect("finite entries");
    TransitionMatrix::causal(matrix, orientation).expect("graph matrices are stochastic")
}

/// `W[i][j] = 1/out_degree(j)` for every edge `j → i`.
pub fn walk_matrix(g: &FeedforwardGraph) -> TransitionMatrix {
    let exact = exact_entries(g, Orientation::Walk).expect("out-degrees are positive");
    from_exact(g.n(), &exact, Orientation::Walk)
}

/// `Δ[i][j] = 1/in_degree(i)` for every edge `j → i`.
///
/// Fails only for graphs built without forced self-loops that leave a vertex
/// with no incoming edge.
pub fn diffusion_matrix(g: &FeedforwardGraph) -> Result<TransitionMatrix> {
    let exact = exact_entries(g, Orientation::Diffusion)?;
    Ok(from_exact(g.n(), &exact, Orientation::Diffusion))
}

/// `‖Wπ − π‖₁`.
pub fn stationary_residual(t: &TransitionMatrix, pi: &ProbVector) -> Result<f64> {
    t.expect(Orientation::Walk)?;
    if pi.len() != t.n() {
        return Err(Error::dims("distribution length differs from matrix size"));
    }
    let next = t.matrix().mul_vec(pi.as_slice())?;
    Ok(next
        .iter()
        .zip(pi.as_slice())
        .map(|(a, b)| (a - b).abs())
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinkReport {
    /// First `t` with `TV(W^t e_j, 1_τ) ≤ tol`, per start `j`.
    pub convergence_times: Vec<Option<usize>>,
    /// `max_j TV(W^t e_j, 1_τ)` for `t = 0..=last step computed`.
    pub worst_distance: Vec<f64>,
}

impl SinkReport {
    pub fn converged(&self) -> bool {
        self.convergence_times.iter().all(Option::is_some)
    }

    pub fn first_failure(&self) -> Option<usize> {
        self.convergence_times.iter().position(Option::is_none)
    }

    pub fn worst_start(&self) -> Option<(usize, usize)> {
        self.convergence_times
            .iter()
            .enumerate()
            .filter_map(|(j, t)| t.map(|t| (j, t)))
            .max_by_key(|&(j, t)| (t, std::cmp::Reverse(j)))
    }
}

/// Iterates `W^t` and records when each start's distribution reaches the sink.
pub fn verify_sink_stationarity(
    t: &TransitionMatrix,
    t_max: usize,
    tol: f64,
) -> Result<SinkReport> {
    t.expect(Orientation::Walk)?;
    let n = t.n();
    let sink = ProbVector::one_hot(n, n - 1);
    let mut power = Matrix::identity(n).with_precision(t.matrix().precision());
    let mut times = vec![None; n];
    let mut worst = Vec::new();
    for step in 0..=t_max {
        if step > 0 {
            power = matmul(t.matrix(), &power)?;
        }
        let mut step_worst: f64 = 0.0;
        for (j, slot) in times.iter_mut().enumerate() {
            let d = tv_distance_slices(&power.col(j), sink.as_slice())?;
            step_worst = step_worst.max(d);
            if slot.is_none() && d <= tol {
                *slot = Some(step);
            }
        }
        worst.push(step_worst);
        if times.iter().all(Option::is_some) {
            break;
        }
    }
    Ok(SinkReport {
        convergence_times: times,
        worst_distance: worst,
    })
}

/// Weighted sum of the heads.
pub fn combine_heads(hs: &HeadSystem) -> Result<TransitionMatrix> {
    check_convex(hs.weights())?;
    let mut acc: Option<Matrix> = None;
    for (h, &w) in hs.heads().iter().zip(hs.weights()) {
        let term = h.matrix().scaled(w);
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term)?,
        });
    }
    TransitionMatrix::new(acc.expect("non-empty"), hs.orientation())
}

fn literal(rows: &[[f64; 4]], n: usize) -> TransitionMatrix {
    let rows: Vec<Vec<f64>> = rows.iter().map(|r| r[..n].to_vec()).collect();
    TransitionMatrix::new(Matrix::from_rows(&rows).expect("rectangular"), Orientation::Diffusion)
        .expect("example matrices are row-stochastic")
}

/// Three nodes `(u, v, τ)`: head 1 carries `u → v`, head 2 carries `v → τ`.
pub fn example_one(beta1: f64) -> Result<HeadSystem> {
    let d1 = literal(&[[1.0, 0.0, 0.0, 0.0], [0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]], 3);
    let d2 = literal(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.5, 0.5, 0.0]], 3);
    HeadSystem::new(vec![d1, d2], vec![beta1, 1.0 - beta1])
}

/// Four nodes `(u, v, w, τ)` with equal weights. Head 2 routes `v → u`, so
/// its support is not causal.
pub fn example_two() -> HeadSystem {
    let d1 = literal(
        &[
            [1.0, 0.0, 0.0, 0.0],
            [0.5, 0.5, 0.0, 0.0],
            [0.0, 0.5, 0.5, 0.0],
            [0.0, 0.0, 0.5, 0.5],
        ],
        4,
    );
    let d2 = literal(
        &[
            [0.5, 0.5, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.5, 0.0, 0.5, 0.0],
            [0.0, 0.0, 0.5, 0.5],
        ],
        4,
    );
    HeadSystem::new(vec![d1, d2], vec![0.5, 0.5]).expect("valid example")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feedforward_invariants_enforced() {
        assert!(FeedforwardGraph::new(3, [(2, 1)]).is_err());
        assert!(FeedforwardGraph::new(3, [(0, 3)]).is_err());
        assert!(FeedforwardGraph::without_forced_loops(3, [(0, 1), (1, 2)]).is_err());
        let g = FeedforwardGraph::new(3, [(0, 2)]).unwrap();
        assert!((0..3).all(|v| g.has_edge(v, v)));
    }

    #[test]
    fn walk_matrix_small() {
        let g = FeedforwardGraph::new(2, [(0, 1)]).unwrap();
        let w = walk_matrix(&g);
        assert_eq!(w.matrix().col(0), vec![0.5, 0.5]);
        assert_eq!(w.matrix().col(1), vec![0.0, 1.0]);
    }

    #[test]
    fn walk_matrix_chain() {
        let w = walk_matrix(&FeedforwardGraph::chain(5));
        for j in 0..4 {
            assert_eq!(w.matrix().get(j + 1, j), 1.0);
        }
        assert_eq!(w.matrix().get(4, 4), 1.0);
        assert_eq!(w.matrix().as_slice().iter().sum::<f64>(), 5.0);
    }

    #[test]
    fn diffusion_matrix_example_one_heads() {
        let h1 = FeedforwardGraph::new(3, [(0, 1)]).unwrap();
        let h2 = FeedforwardGraph::new(3, [(1, 2)]).unwrap();
        let ex = example_one(0.5).unwrap();
        assert_eq!(&diffusion_matrix(&h1).unwrap(), &ex.heads()[0]);
        assert_eq!(&diffusion_matrix(&h2).unwrap(), &ex.heads()[1]);
        let id = diffusion_matrix(&FeedforwardGraph::new(4, []).unwrap()).unwrap();
        assert_eq!(id.matrix(), &Matrix::identity(4));
        // chain vertex 0 has no incoming edge
        assert!(diffusion_matrix(&FeedforwardGraph::chain(3)).is_err());
    }

    #[test]
    fn exact_sums_are_one() {
        let mut rng = RngStream::new(11, 0);
        for _ in 0..50 {
            let g = FeedforwardGraph::random(10, 0.5, &mut rng);
            let n = g.n();
            let w = exact_entries(&g, Orientation::Walk).unwrap();
            let d = exact_entries(&g, Orientation::Diffusion).unwrap();
            for k in 0..n {
                let col: Ratio<u64> = (0..n).map(|i| w[i * n + k]).sum();
                let row: Ratio<u64> = (0..n).map(|j| d[k * n + j]).sum();
                assert_eq!(col, Ratio::from_integer(1));
                assert_eq!(row, Ratio::from_integer(1));
            }
            let wf = walk_matrix(&g);
            let df = diffusion_matrix(&g).unwrap();
            for s in wf.matrix().col_sums().into_iter().chain(df.matrix().row_sums()) {
                assert!((s - 1.0).abs() < 1e-12);
            }
            for (a, b) in wf.matrix().as_slice().iter().zip(df.matrix().as_slice()) {
                assert_eq!(*a > 0.0, *b > 0.0);
            }
        }
    }

    #[test]
    fn residual_examples() {
        let chain = walk_matrix(&FeedforwardGraph::chain(3));
        assert_eq!(
            stationary_residual(&chain, &ProbVector::one_hot(3, 0)).unwrap(),
            2.0
        );
        assert_eq!(
            stationary_residual(&chain, &ProbVector::one_hot(3, 2)).unwrap(),
            0.0
        );
        let combined = combine_heads(&example_two()).unwrap();
        assert!(stationary_residual(&combined, &ProbVector::one_hot(4, 3)).is_err());
        let as_walk = combined.reoriented(Orientation::Walk);
        assert_eq!(
            stationary_residual(&as_walk, &ProbVector::one_hot(4, 3)).unwrap(),
            0.0
        );
    }

    #[test]
    fn chain_converges_at_n_minus_one() {
        let r = verify_sink_stationarity(&walk_matrix(&FeedforwardGraph::chain(5)), 100, 1e-12)
            .unwrap();
        assert!(r.converged());
        assert_eq!(r.worst_start(), Some((0, 4)));
        assert_eq!(r.convergence_times, vec![Some(4), Some(3), Some(2), Some(1), Some(0)]);
    }

    #[test]
    fn non_convergence_is_a_finding() {
        let stuck = walk_matrix(&FeedforwardGraph::new(3, []).unwrap());
        let r = verify_sink_stationarity(&stuck, 10, 1e-9).unwrap();
        assert!(!r.converged());
        assert_eq!(r.first_failure(), Some(0));
    }

    #[test]
    fn combine_example_two_matches_display() {
        let c = combine_heads(&example_two()).unwrap();
        let expect = Matrix::from_rows(&[
            [0.75, 0.25, 0.0, 0.0],
            [0.25, 0.75, 0.0, 0.0],
            [0.25, 0.25, 0.5, 0.0],
            [0.0, 0.0, 0.5, 0.5],
        ])
        .unwrap();
        assert_eq!(c.matrix(), &expect);
    }

    #[test]
    fn combine_degenerate_cases() {
        let ex = example_two();
        let one = HeadSystem::new(vec![ex.heads()[0].clone()], vec![1.0]).unwrap();
        assert_eq!(&combine_heads(&one).unwrap(), &ex.heads()[0]);
        let twin = HeadSystem::new(
            vec![ex.heads()[1].clone(), ex.heads()[1].clone()],
            vec![0.3, 0.7],
        )
        .unwrap();
        let c = combine_heads(&twin).unwrap();
        assert!(c.matrix().max_abs_diff(ex.heads()[1].matrix()).unwrap() < 1e-15);
        assert!(ex.with_weights(vec![0.6, 0.6]).is_err());
    }

    #[test]
    fn examples_are_valid_transition_matrices() {
        let ex1 = example_one(0.5).unwrap();
        assert!(ex1.heads().iter().all(TransitionMatrix::is_causal));
        let ex2 = example_two();
        assert!(ex2.heads()[0].is_causal());
        assert!(!ex2.heads()[1].is_causal());
        for h in ex1.heads().iter().chain(ex2.heads()) {
            assert!(TransitionMatrix::new(h.matrix().clone(), Orientation::Diffusion).is_ok());
        }
    }

    #[test]
    fn graph_json_round_trip() {
        let g = FeedforwardGraph::from_json_str(r#"{"n": 4, "edges": [[1, 2], [2, 4], [3, 4]]}"#)
            .unwrap();
        assert!(g.has_edge(0, 1) && g.has_edge(1, 3) && g.has_edge(2, 3));
        assert_eq!(FeedforwardGraph::from_json_str(&g.to_json_string()).unwrap(), g);
        assert!(FeedforwardGraph::from_json_str(r#"{"n": 2, "edges": [[0, 1]]}"#).is_err());
        assert!(FeedforwardGraph::from_json_str(r#"{"n": 2, "edges": [[2, 1]]}"#).is_err());
    }
}
