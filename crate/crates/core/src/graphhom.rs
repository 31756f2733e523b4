//! Scale invariance of architectures given as DAGs of typed modules.
//!
//! Every node computes a function of the trainable parameters that is
//! homogeneous of some degree `k`, `f(c theta) = c^k f(theta)`, or is not
//! homogeneous at all. Degrees propagate in topological order:
//!
//! | kind   | input degree | output degree            |
//! |--------|--------------|--------------------------|
//! | `I`    | none         | 0                        |
//! | `L`    | `x`          | `x + 1`                  |
//! | `B`    | `x`          | 1 if `x = 1`, else none  |
//! | `PLUS` | `x`, `y`     | `x` if `x = y`, else none|
//! | `N`    | `x`          | 0                        |
//! | `NA`   | `x`          | 1                        |
//! | `PASS` | `x`          | `x`                      |
//! | `OUT`  | `x`          | `x`                      |
//!
//! The network is scale invariant iff every node is homogeneous and `OUT`
//! has degree 0.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::scaleinv::{Batch, Objective};
use crate::vecops;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph has a cycle through node `{0}`")]
    CycleDetected(String),
    #[error("node `{node}` of kind {kind:?} has in-degree {got}, expected {expected}")]
    InvalidArity {
        node: String,
        kind: NodeKind,
        expected: usize,
        got: usize,
    },
    #[error("graph must have exactly one OUT node, found {0}")]
    OutputCount(usize),
    #[error("edge refers to unknown node `{0}`")]
    UnknownNode(String),
    #[error("node id `{0}` is used twice")]
    DuplicateNode(String),
    #[error("symbolic verdict (invariant: {symbolic}) disagrees with numeric check (invariant: {numeric})")]
    RealizationMismatch { symbolic: bool, numeric: bool },
    #[error("realization rejected the parameters: {0}")]
    Realization(String),
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    /// Input data.
    I,
    /// Linear map with trainable weights.
    L,
    /// Trainable bias.
    B,
    #[serde(rename = "PLUS")]
    Plus,
    /// Normalization without affine parameters.
    N,
    /// Normalization followed by a trainable affine map.
    #[serde(rename = "NA")]
    Na,
    /// Degree-preserving map: ReLU, pooling, fixed linear layers.
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "OUT")]
    Out,
}

impl NodeKind {
    fn in_degree(self) -> usize {
        match self {
            Self::I => 0,
            Self::Plus => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degree {
    Homogeneous(i64),
    NonHomogeneous,
}

/// Index form of a validated graph.
struct Indexed {
    kinds: Vec<NodeKind>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
    out: usize,
}

impl CompGraph {
    /// Build a graph from `(id, kind)` pairs and `(from, to)` edges.
    pub fn new(nodes: &[(&str, NodeKind)], edges: &[(&str, &str)]) -> Self {
        Self {
            nodes: nodes
                .iter()
                .map(|(id, kind)| Node {
                    id: id.to_string(),
                    kind: *kind,
                })
                .collect(),
            edges: edges
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        }
    }

    /// Straight chain `I -> kinds... -> OUT` with ids `n0, n1, ...`.
    pub fn chain(kinds: &[NodeKind]) -> Self {
        let mut all = vec![NodeKind::I];
        all.extend_from_slice(kinds);
        all.push(NodeKind::Out);
        let ids: Vec<String> = (0..all.len()).map(|i| format!("n{i}")).collect();
        Self {
            nodes: ids
                .iter()
                .zip(&all)
                .map(|(id, k)| Node {
                    id: id.clone(),
                    kind: *k,
                })
                .collect(),
            edges: ids.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect(),
        }
    }

    fn index(&self) -> Result<Indexed> {
        let mut pos = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if pos.insert(n.id.as_str(), i).is_some() {
                return Err(GraphError::DuplicateNode(n.id.clone()));
            }
        }
        let n = self.nodes.len();
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        for (a, b) in &self.edges {
            let ia = *pos.get(a.as_str()).ok_or_else(|| GraphError::UnknownNode(a.clone()))?;
            let ib = *pos.get(b.as_str()).ok_or_else(|| GraphError::UnknownNode(b.clone()))?;
            preds[ib].push(ia);
            succs[ia].push(ib);
        }
        let outs: Vec<usize> = (0..n).filter(|&i| self.nodes[i].kind == NodeKind::Out).collect();
        if outs.len() != 1 {
            return Err(GraphError::OutputCount(outs.len()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            let expected = node.kind.in_degree();
            if preds[i].len() != expected {
                return Err(GraphError::InvalidArity {
                    node: node.id.clone(),
                    kind: node.kind,
                    expected,
                    got: preds[i].len(),
                });
            }
        }
        Ok(Indexed {
            kinds: self.nodes.iter().map(|n| n.kind).collect(),
            preds,
            succs,
            out: outs[0],
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ix = self.index()?;
        topo_order(&ix, &self.nodes, None).map(|_| ())
    }

    /// Replace every trainable bias whose outputs all feed normalization
    /// layers by a pass-through; such a bias cannot change the output.
    pub fn without_bias_before_norm(&self) -> Result<Self> {
        let ix = self.index()?;
        let mut g = self.clone();
        for (i, node) in g.nodes.iter_mut().enumerate() {
            let feeds_norm = !ix.succs[i].is_empty()
                && ix.succs[i]
                    .iter()
                    .all(|&s| matches!(ix.kinds[s], NodeKind::N | NodeKind::Na));
            if node.kind == NodeKind::B && feeds_norm {
                node.kind = NodeKind::Pass;
            }
        }
        Ok(g)
    }
}

/// Kahn's algorithm. Ties are broken by node order, or at random when a
/// seed is given.
fn topo_order(ix: &Indexed, nodes: &[Node], seed: Option<u64>) -> Result<Vec<usize>> {
    let n = ix.kinds.len();
    let mut indeg: Vec<usize> = ix.preds.iter().map(|p| p.len()).collect();
    let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut rng = seed.map(|s| rng::stream(s, 0));
    let mut order = Vec::with_capacity(n);
    while !ready.is_empty() {
        let pick = match rng.as_mut() {
            Some(r) => r.random_range(0..ready.len()),
            None => {
                let m = ready.iter().copied().min().unwrap_or(0);
                ready.iter().position(|&v| v == m).unwrap_or(0)
            }
        };
        let v = ready.swap_remove(pick);
        order.push(v);
        for &s in &ix.succs[v] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.push(s);
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).find(|&i| indeg[i] > 0).unwrap_or(0);
        return Err(GraphError::CycleDetected(nodes[stuck].id.clone()));
    }
    Ok(order)
}

fn rule(kind: NodeKind, inputs: &[Degree]) -> Degree {
    use Degree::*;
    if inputs.contains(&NonHomogeneous) {
        return NonHomogeneous;
    }
    let x = match inputs.first() {
        Some(Homogeneous(x)) => *x,
        _ => 0,
    };
    match kind {
        NodeKind::I => Homogeneous(0),
        NodeKind::L => Homogeneous(x + 1),
        NodeKind::B if x == 1 => Homogeneous(1),
        NodeKind::B => NonHomogeneous,
        NodeKind::Plus if inputs[0] == inputs[1] => Homogeneous(x),
        NodeKind::Plus => NonHomogeneous,
        NodeKind::N => Homogeneous(0),
        NodeKind::Na => Homogeneous(1),
        NodeKind::Pass | NodeKind::Out => Homogeneous(x),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub invariant: bool,
    /// First node in topological order that is not homogeneous, or `OUT`
    /// when everything is homogeneous but its degree is nonzero.
    pub failing_node: Option<String>,
    pub output_degree: Degree,
    /// Degrees in the order they were computed.
    pub degrees: Vec<(String, Degree)>,
}

impl Verdict {
    pub fn degree_map(&self) -> BTreeMap<String, Degree> {
        self.degrees.iter().cloned().collect()
    }
}

/// Degrees of every node, computed along the default topological order.
pub fn propagate_degrees(g: &CompGraph) -> Result<BTreeMap<String, Degree>> {
    Ok(is_scale_invariant(g)?.degree_map())
}

pub fn is_scale_invariant(g: &CompGraph) -> Result<Verdict> {
    is_scale_invariant_with_order(g, None)
}

/// Same as [`is_scale_invariant`] with ties in the topological order broken
/// by `seed`.
pub fn is_scale_invariant_with_order(g: &CompGraph, seed: Option<u64>) -> Result<Verdict> {
    let ix = g.index()?;
    let order = topo_order(&ix, &g.nodes, seed)?;
    let mut deg = vec![Degree::NonHomogeneous; g.nodes.len()];
    let mut failing_node = None;
    let mut degrees = Vec::with_capacity(order.len());
    for &v in &order {
        let inputs: Vec<Degree> = ix.preds[v].iter().map(|&p| deg[p]).collect();
        deg[v] = rule(ix.kinds[v], &inputs);
        if failing_node.is_none() && deg[v] == Degree::NonHomogeneous {
            failing_node = Some(g.nodes[v].id.clone());
        }
        degrees.push((g.nodes[v].id.clone(), deg[v]));
    }
    let output_degree = deg[ix.out];
    let invariant = output_degree == Degree::Homogeneous(0);
    if failing_node.is_none() && !invariant {
        failing_node = Some(g.nodes[ix.out].id.clone());
    }
    Ok(Verdict {
        invariant,
        failing_node,
        output_degree,
        degrees,
    })
}

/// Check that the verdict and failing node do not depend on how ties in the
/// topological order are broken.
pub fn verdict_is_order_independent(g: &CompGraph, orders: usize) -> Result<bool> {
    let base = is_scale_invariant(g)?;
    let base_map = base.degree_map();
    for s in 0..orders as u64 {
        let v = is_scale_invariant_with_order(g, Some(s))?;
        if v.invariant != base.invariant || v.degree_map() != base_map {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Scalar function of a parameter vector.
pub trait Realization {
    fn dim(&self) -> usize;
    fn eval(&self, theta: &[f64]) -> Result<f64>;
}

/// An objective evaluated on one fixed batch.
pub struct ObjectiveRealization<'a> {
    pub objective: &'a dyn Objective,
    pub batch: Batch,
}

impl Realization for ObjectiveRealization<'_> {
    fn dim(&self) -> usize {
        self.objective.dim()
    }

    fn eval(&self, theta: &[f64]) -> Result<f64> {
        self.objective
            .loss(theta, &self.batch)
            .map_err(|e| GraphError::Realization(e.to_string()))
    }
}

/// Numeric network with the shape of a graph: every edge carries a
/// `batch x width` activation, `L` is a `width x width` weight matrix, `B` a
/// bias vector, `N` per-feature batch standardization, `NA` standardization
/// with a trainable per-feature scale and shift, `PASS` ReLU, and `OUT` a
/// fixed random linear readout summed over the batch.
#[derive(Debug, Clone)]
pub struct GraphNet {
    graph: CompGraph,
    order: Vec<usize>,
    preds: Vec<Vec<usize>>,
    /// Parameter offset of each node.
    offsets: Vec<usize>,
    width: usize,
    batch: usize,
    input: Vec<f64>,
    readout: Vec<f64>,
    dim: usize,
}

impl GraphNet {
    pub fn new(graph: &CompGraph, width: usize, batch: usize, seed: u64) -> Result<Self> {
        let ix = graph.index()?;
        let order = topo_order(&ix, &graph.nodes, None)?;
        let mut offsets = Vec::with_capacity(ix.kinds.len());
        let mut dim = 0;
        for k in &ix.kinds {
            offsets.push(dim);
            dim += match k {
                NodeKind::L => width * width,
                NodeKind::B => width,
                NodeKind::Na => 2 * width,
                _ => 0,
            };
        }
        let mut r = rng::setup_stream(seed);
        Ok(Self {
            graph: graph.clone(),
            order,
            preds: ix.preds,
            offsets,
            width,
            batch,
            input: rng::normal_vec(&mut r, batch * width),
            readout: rng::normal_vec(&mut r, batch * width),
            dim,
        })
    }

    /// Random parameters scaled to unit norm per block.
    pub fn random_theta(&self, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, 1);
        let mut theta = rng::normal_vec(&mut r, self.dim);
        let s = (self.width as f64).sqrt();
        vecops::scale_in_place(&mut theta, 1.0 / s);
        theta
    }

    fn standardize(&self, a: &[f64]) -> Result<Vec<f64>> {
        let (w, b) = (self.width, self.batch as f64);
        let mut out = vec![0.0; a.len()];
        for j in 0..w {
            let mean = (0..self.batch).map(|i| a[i * w + j]).sum::<f64>() / b;
            let var = (0..self.batch)
                .map(|i| (a[i * w + j] - mean).powi(2))
                .sum::<f64>()
                / b;
            let mean_sq = (0..self.batch).map(|i| a[i * w + j].powi(2)).sum::<f64>() / b;
            if !(var > 1e-24 * mean_sq) {
                return Err(GraphError::Realization(format!("feature {j} has zero variance")));
            }
            let sd = var.sqrt();
            for i in 0..self.batch {
                out[i * w + j] = (a[i * w + j] - mean) / sd;
            }
        }
        Ok(out)
    }
}

impl Realization for GraphNet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim {
            return Err(GraphError::Realization(format!(
                "expected {} parameters, got {}",
                self.dim,
                theta.len()
            )));
        }
        let w = self.width;
        let mut acts: Vec<Option<Vec<f64>>> = vec![None; self.graph.nodes.len()];
        let mut result = 0.0;
        for &v in &self.order {
            let p = &theta[self.offsets[v]..];
            let input = |k: usize| acts[self.preds[v][k]].as_ref().expect("topological order");
            let out = match self.graph.nodes[v].kind {
                NodeKind::I => self.input.clone(),
                NodeKind::L => {
                    let a = input(0);
                    let mut o = vec![0.0; a.len()];
                    for i in 0..self.batch {
                        for r in 0..w {
                            o[i * w + r] = (0..w).map(|c| p[r * w + c] * a[i * w + c]).sum();
                        }
                    }
                    o
                }
                NodeKind::B => {
                    let mut o = input(0).clone();
                    for (k, x) in o.iter_mut().enumerate() {
                        *x += p[k % w];
                    }
                    o
                }
                NodeKind::Plus => {
                    let (a, b) = (input(0), input(1));
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| {
                            let s = x + y;
                            if s.abs() <= 1e-12 * (x.abs() + y.abs()) {
                                0.0
                            } else {
                                s
                            }
                        })
                        .collect()
                }
                NodeKind::N => self.standardize(input(0))?,
                NodeKind::Na => {
                    let mut o = self.standardize(input(0))?;
                    for (k, x) in o.iter_mut().enumerate() {
                        *x = p[k % w] * *x + p[w + k % w];
                    }
                    o
                }
                NodeKind::Pass => input(0).iter().map(|x| x.max(0.0)).collect(),
                NodeKind::Out => {
                    result = vecops::dot(input(0), &self.readout);
                    input(0).clone()
                }
            };
            acts[v] = Some(out);
        }
        Ok(result)
    }
}

pub const CROSSCHECK_SCALES: [f64; 3] = [0.5, 2.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosscheckReport {
    pub symbolic_invariant: bool,
    pub numeric_invariant: bool,
    /// `max_c |f(c theta) - f(theta)| / (1 + |f(theta)|)`.
    pub invariance_rel_diff: f64,
    /// For a homogeneous verdict of degree `k`:
    /// `max_c |f(c theta) - c^k f(theta)| / ((1 + |f(theta)|) c^k)`.
    pub homogeneity_rel_err: Option<f64>,
    pub pass: bool,
}

/// Compare the symbolic verdict with a numeric evaluation of `real` at
/// `theta` and scales `scales`.
pub fn numeric_crosscheck(
    g: &CompGraph,
    real: &dyn Realization,
    theta: &[f64],
    scales: &[f64],
) -> Result<CrosscheckReport> {
    let verdict = is_scale_invariant(g)?;
    let base = real.eval(theta)?;
    let mut invariance_rel_diff: f64 = 0.0;
    let mut homogeneity: Option<f64> = match verdict.output_degree {
        Degree::Homogeneous(_) => Some(0.0),
        Degree::NonHomogeneous => None,
    };
    for &c in scales {
        let fc = real.eval(&vecops::scale(theta, c))?;
        invariance_rel_diff = invariance_rel_diff.max((fc - base).abs() / (1.0 + base.abs()));
        if let (Some(h), Degree::Homogeneous(k)) = (homogeneity.as_mut(), verdict.output_degree) {
            let ck = c.powi(k as i32);
            *h = h.max((fc - ck * base).abs() / ((1.0 + base.abs()) * ck));
        }
    }
    let numeric_invariant = invariance_rel_diff <= 1e-10;
    let pass = numeric_invariant == verdict.invariant && homogeneity.is_none_or(|h| h <= 1e-9);
    Ok(CrosscheckReport {
        symbolic_invariant: verdict.invariant,
        numeric_invariant,
        invariance_rel_diff,
        homogeneity_rel_err: homogeneity,
        pass,
    })
}

/// Like [`numeric_crosscheck`] but turns a disagreement into an error.
pub fn require_agreement(report: &CrosscheckReport) -> Result<()> {
    if report.symbolic_invariant != report.numeric_invariant {
        return Err(GraphError::RealizationMismatch {
            symbolic: report.symbolic_invariant,
            numeric: report.numeric_invariant,
        });
    }
    Ok(())
}

/// Reference architectures.
pub mod fixtures {
    use super::{CompGraph, NodeKind::*};

    /// `I -> L -> N -> OUT`.
    pub fn normalized_chain() -> CompGraph {
        CompGraph::chain(&[L, N])
    }

    /// `I -> L -> B -> N -> OUT`.
    pub fn bias_then_norm() -> CompGraph {
        CompGraph::chain(&[L, B, N])
    }

    /// Residual block whose main path and downsampling shortcut both end in
    /// a normalization before the addition.
    pub fn resnet_block() -> CompGraph {
        CompGraph::new(
            &[
                ("x", I),
                ("conv1", L),
                ("bn1", N),
                ("relu1", Pass),
                ("conv2", L),
                ("bn2", N),
                ("down", L),
                ("bn_down", N),
                ("add", Plus),
                ("relu2", Pass),
                ("head", L),
                ("bn_head", N),
                ("out", Out),
            ],
            &[
                ("x", "conv1"),
                ("conv1", "bn1"),
                ("bn1", "relu1"),
                ("relu1", "conv2"),
                ("conv2", "bn2"),
                ("bn2", "add"),
                ("x", "down"),
                ("down", "bn_down"),
                ("bn_down", "add"),
                ("add", "relu2"),
                ("relu2", "head"),
                ("head", "bn_head"),
                ("bn_head", "out"),
            ],
        )
    }

    /// The residual block with the shortcut normalization removed, so the
    /// addition receives degrees 0 and 1.
    pub fn resnet_block_unnormalized_shortcut() -> CompGraph {
        let mut g = resnet_block();
        g.nodes.retain(|n| n.id != "bn_down");
        g.edges.retain(|(a, b)| a != "bn_down" && b != "bn_down");
        g.edges.push(("down".into(), "add".into()));
        g
    }

    /// Group norm with a trainable affine map followed by a linear layer with
    /// a trainable bias: `I -> L -> N -> NA -> L -> B -> OUT`.
    pub fn gn_trainable_bias() -> CompGraph {
        CompGraph::chain(&[L, N, Na, L, B])
    }

    /// A trainable bias on a degree-1 branch added to a degree-2 branch.
    pub fn bias_into_mixed_sum() -> CompGraph {
        CompGraph::new(
            &[
                ("x", I),
                ("l1", L),
                ("b1", B),
                ("l2", L),
                ("l3", L),
                ("add", Plus),
                ("out", Out),
            ],
            &[
                ("x", "l1"),
                ("l1", "b1"),
                ("x", "l2"),
                ("l2", "l3"),
                ("b1", "add"),
                ("l3", "add"),
                ("add", "out"),
            ],
        )
    }
}
