//! Local independence graph recovery.
//!
//! The graph has an edge `α → β` exactly when `α ↛ β | V∖{α}` is rejected.
//! All `d(d−1)` ordered pairs share one set of fold models, so the drift is
//! fitted `K` times per graph rather than once per pair.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::QuerySpec;
use crate::lcmtest::CrossFit;
use crate::matcore::Matrix;
use crate::ouest::EstimationConfig;
use crate::par;
use crate::rng::derive_seed;
use crate::sdesim::TrajectorySet;

/// Directed graph on `d` coordinates; `edges[α][β]` is the edge `α → β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LIGraph {
    pub d: usize,
    pub edges: Vec<Vec<bool>>,
    /// `p_values[α][β]` for `α ↛ β | V∖{α}`; 1 on the diagonal.
    pub p_values: Vec<Vec<f64>>,
    /// Fold-averaged `|Φ̃_{βα}|` for reporting.
    pub weights: Vec<Vec<f64>>,
    /// Pairs whose variance was degenerate or whose pipeline failed.
    pub flagged: Vec<(usize, usize)>,
    /// Decision threshold actually applied to the p-values.
    pub threshold: f64,
}

impl LIGraph {
    pub fn empty(d: usize) -> Self {
        Self {
            d,
            edges: vec![vec![false; d]; d],
            p_values: vec![vec![1.0; d]; d],
            weights: vec![vec![0.0; d]; d],
            flagged: Vec::new(),
            threshold: 0.0,
        }
    }

    /// Graph of a known drift: `α → β` iff `Φ_{βα} ≠ 0`.
    pub fn from_drift(phi: &Matrix) -> Self {
        let d = phi.nrows();
        let mut g = Self::empty(d);
        for a in 0..d {
            for b in 0..d {
                if a != b && phi[(b, a)] != 0.0 {
                    g.edges[a][b] = true;
                    g.weights[a][b] = phi[(b, a)].abs();
                }
            }
        }
        g
    }

    /// Builds a graph from explicit edges.
    pub fn from_edges(d: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(d);
        for &(a, b) in edges {
            if a >= d || b >= d || a == b {
                return Err(Error::InvalidArgument(format!("invalid edge {a} -> {b} for d={d}")));
            }
            g.edges[a][b] = true;
        }
        Ok(g)
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges[from][to]
    }

    /// Edges as `(from, to)`, row-major.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.d {
            for b in 0..self.d {
                if self.edges[a][b] {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn n_edges(&self) -> usize {
        self.edges.iter().flatten().filter(|&&e| e).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    pub folds: usize,
    pub level: f64,
    /// Compare p-values against `level / (d(d−1))`.
    pub bonferroni: bool,
    pub estimation: EstimationConfig,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            folds: 3,
            level: 0.05,
            bonferroni: false,
            estimation: EstimationConfig::default(),
        }
    }
}

/// Runs the cross-fitted test on every ordered pair.
pub fn recover_lig(data: &TrajectorySet, config: &DiscoveryConfig, rng_seed: u64) -> Result<LIGraph> {
    let d = data.dim();
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(Error::InvalidArgument(format!("level must be in (0, 1), got {}", config.level)));
    }
    let mut graph = LIGraph::empty(d);
    if d < 2 {
        graph.threshold = config.level;
        return Ok(graph);
    }
    let n_tests = d * (d - 1);
    graph.threshold = if config.bonferroni { config.level / n_tests as f64 } else { config.level };
    let fits = CrossFit::fit(data, config.folds, &config.estimation, rng_seed)?;
    let pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|a| (0..d).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    let results = par::map_slice(&pairs, |&(a, b)| fits.test(data, &QuerySpec::pairwise(a, b, d), config.level));
    for (&(a, b), res) in pairs.iter().zip(results) {
        match res {
            Ok(t) => {
                graph.p_values[a][b] = t.p_value;
                graph.weights[a][b] = t.phi_beta_alpha.abs();
                graph.edges[a][b] = !t.degenerate_variance && t.p_value < graph.threshold;
                if t.degenerate_variance {
                    graph.flagged.push((a, b));
                }
            }
            Err(e) if e.is_numerical() => graph.flagged.push((a, b)),
            Err(e) => return Err(e),
        }
    }
    Ok(graph)
}

/// Number of ordered pairs whose edge indicator differs.
pub fn shd(g1: &LIGraph, g2: &LIGraph) -> Result<usize> {
    if g1.d != g2.d {
        return Err(Error::Shape(format!("graphs have d = {} and d = {}", g1.d, g2.d)));
    }
    Ok(g1
        .edges
        .iter()
        .flatten()
        .zip(g2.edges.iter().flatten())
        .filter(|(a, b)| a != b)
        .count())
}

/// Edges present in exactly one of the graphs.
pub fn edge_difference(g1: &LIGraph, g2: &LIGraph) -> Result<Vec<(usize, usize)>> {
    shd(g1, g2)?;
    let mut out = Vec::new();
    for a in 0..g1.d {
        for b in 0..g1.d {
            if g1.edges[a][b] != g2.edges[a][b] {
                out.push((a, b));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeScores {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores `estimate` against `truth`. Precision is 1 when nothing is
/// predicted and recall is 1 when nothing is true.
pub fn edge_scores(estimate: &LIGraph, truth: &LIGraph) -> Result<EdgeScores> {
    shd(estimate, truth)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (e, t) in estimate.edges.iter().flatten().zip(truth.edges.iter().flatten()) {
        match (e, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(EdgeScores {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        precision,
        recall,
        f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub first: usize,
    pub second: usize,
    pub shd: usize,
    pub differing: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub seeds: Vec<u64>,
    pub graphs: Vec<LIGraph>,
    pub comparisons: Vec<PairComparison>,
}

impl StabilityReport {
    pub fn max_shd(&self) -> usize {
        self.comparisons.iter().map(|c| c.shd).max().unwrap_or(0)
    }
}

/// Recovers one graph per fold seed and compares every pair of them.
pub fn stability_report(
    data: &TrajectorySet,
    n_splits: usize,
    config: &DiscoveryConfig,
    rng_seed: u64,
) -> Result<StabilityReport> {
    if n_splits < 2 {
        return Err(Error::InvalidArgument(format!("stability needs n_splits >= 2, got {n_splits}")));
    }
    let seeds: Vec<u64> = (0..n_splits as u64).map(|i| derive_seed(rng_seed, i)).collect();
    let graphs = seeds
        .iter()
        .map(|&s| recover_lig(data, config, s))
        .collect::<Result<Vec<_>>>()?;
    let mut comparisons = Vec::new();
    for i in 0..n_splits {
        for j in i + 1..n_splits {
            comparisons.push(PairComparison {
                first: i,
                second: j,
                shd: shd(&graphs[i], &graphs[j])?,
                differing: edge_difference(&graphs[i], &graphs[j])?,
            });
        }
    }
    Ok(StabilityReport {
        seeds,
        graphs,
        comparisons,
    })
}
