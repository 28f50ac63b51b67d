//! High-dimensional similarity graph: exact kNN search, per-point bandwidth
//! calibration, directed and fuzzy-union symmetric weights, plus the dense and
//! perturbed graph variants used to probe the optimizer.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{fmt_real, Dataset};
use crate::error::{Error, Result};
use crate::kernel::{sq_dist, Kernel};
use crate::rng::{self, Stream};

pub const SIGMA_MIN: f64 = 1e-8;
pub const SIGMA_MAX: f64 = 1e6;
pub const SIGMA_TOL: f64 = 1e-5;
pub const SIGMA_MAX_ITER: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 - x.y / (|x| |y|)`
    Cosine,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::InvalidParameter(format!("unknown metric {other:?}"))),
        }
    }
}

/// Exactly `k` neighbors per point (never the point itself), sorted by
/// distance with ties broken by the smaller id.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborLists {
    pub k: usize,
    pub metric: Metric,
    ids: Vec<usize>,
    dists: Vec<f64>,
}

impl NeighborLists {
    pub fn len(&self) -> usize {
        self.ids.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self, i: usize) -> &[usize] {
        &self.ids[i * self.k..(i + 1) * self.k]
    }

    pub fn dists(&self, i: usize) -> &[f64] {
        &self.dists[i * self.k..(i + 1) * self.k]
    }
}

/// Exact kNN by exhaustive search.
pub fn knn_brute(data: &Dataset, k: usize, metric: Metric) -> Result<NeighborLists> {
    let n = data.len();
    if k == 0 || k >= n {
        return Err(Error::KOutOfRange { k, n });
    }
    let norms: Vec<f64> = data.rows().map(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    if metric == Metric::Cosine {
        if let Some(z) = norms.iter().position(|&v| v == 0.0) {
            return Err(Error::ZeroVector(z));
        }
    }
    let dist = |i: usize, j: usize| -> f64 {
        match metric {
            Metric::Euclidean => sq_dist(data.point(i), data.point(j)).sqrt(),
            Metric::Cosine => {
                let dot: f64 = data.point(i).iter().zip(data.point(j)).map(|(a, b)| a * b).sum();
                1.0 - dot / (norms[i] * norms[j])
            }
        }
    };
    let rows: Vec<Vec<(f64, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> =
                (0..n).filter(|&j| j != i).map(|j| (dist(i, j), j)).collect();
            let by_dist_then_id =
                |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, by_dist_then_id);
                cand.truncate(k);
            }
            cand.sort_unstable_by(by_dist_then_id);
            cand
        })
        .collect();
    let mut ids = Vec::with_capacity(n * k);
    let mut dists = Vec::with_capacity(n * k);
    for row in rows {
        for (d, j) in row {
            ids.push(j);
            dists.push(d);
        }
    }
    Ok(NeighborLists {
        k,
        metric,
        ids,
        dists,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaFit {
    pub sigma: f64,
    /// `|sum_j exp(-offset_j / sigma) - log2(k)|` at the returned sigma.
    pub residual: f64,
    /// The target was unattainable and `sigma` is a clamped bracket end.
    pub degenerate: bool,
}

fn kernel_sum(offsets: &[f64], sigma: f64) -> f64 {
    offsets.iter().map(|o| (-o / sigma).exp()).sum()
}

/// Bisection for the bandwidth with `sum_j exp(-offset_j / sigma) = log2(k)`,
/// `k = offsets.len()`, where offsets are neighbor distances minus the
/// nearest-neighbor distance. The sum is increasing in sigma.
pub fn smooth_knn_sigma(offsets: &[f64], tol: f64, max_iter: usize) -> SigmaFit {
    let k = offsets.len();
    let target = (k.max(1) as f64).log2();
    let (mut lo, mut hi) = (SIGMA_MIN, SIGMA_MAX);
    let (f_lo, f_hi) = (kernel_sum(offsets, lo), kernel_sum(offsets, hi));
    if f_lo > target + tol || f_hi < target - tol {
        let (r_lo, r_hi) = ((f_lo - target).abs(), (f_hi - target).abs());
        let (sigma, residual) = if r_lo < r_hi { (lo, r_lo) } else { (hi, r_hi) };
        return SigmaFit {
            sigma,
            residual,
            degenerate: true,
        };
    }
    let mut best = SigmaFit {
        sigma: hi,
        residual: (f_hi - target).abs(),
        degenerate: false,
    };
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        let s = kernel_sum(offsets, mid);
        let residual = (s - target).abs();
        if residual < best.residual {
            best = SigmaFit {
                sigma: mid,
                residual,
                degenerate: false,
            };
        }
        if residual <= tol {
            break;
        }
        if s > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    best
}

/// Directed weights `mu_{i->j}` over each point's `k` neighbors.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectedSimilarities {
    pub k: usize,
    ids: Vec<usize>,
    weights: Vec<f64>,
}

impl DirectedSimilarities {
    /// Builds from explicit rows of `(target, weight)`; each row must have
    /// the same length `k`.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        let mut ids = Vec::new();
        let mut weights = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Shape(format!("row {i} has {} entries, expected {k}", row.len())));
            }
            for &(j, w) in row {
                ids.push(j);
                weights.push(w);
            }
        }
        Ok(DirectedSimilarities { k, ids, weights })
    }

    pub fn len(&self) -> usize {
        self.ids.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = i * self.k..(i + 1) * self.k;
        self.ids[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, w)| w).sum()
    }
}

/// `mu_{i->j} = exp(-(d(x_i, x_j) - rho_i) / sigma_i)` for the neighbors of
/// `i`, with `rho_i` the nearest-neighbor distance.
pub fn directed_similarities(neighbors: &NeighborLists, sigmas: &[f64]) -> Result<DirectedSimilarities> {
    let n = neighbors.len();
    if sigmas.len() != n {
        return Err(Error::Shape(format!("{} sigmas for {n} points", sigmas.len())));
    }
    if let Some(i) = sigmas.iter().position(|&s| s.is_nan() || s <= 0.0) {
        return Err(Error::InvalidParameter(format!("sigma[{i}] = {} is not positive", sigmas[i])));
    }
    let mut ids = Vec::with_capacity(n * neighbors.k);
    let mut weights = Vec::with_capacity(n * neighbors.k);
    for (i, &sigma) in sigmas.iter().enumerate() {
        let dists = neighbors.dists(i);
        let rho = dists[0];
        for (&j, &d) in neighbors.ids(i).iter().zip(dists) {
            ids.push(j);
            weights.push((-(d - rho) / sigma).exp());
        }
    }
    Ok(DirectedSimilarities {
        k: neighbors.k,
        ids,
        weights,
    })
}

/// How a graph was produced; determines the degree reference line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Umap,
    Dense,
    Binarize,
    Invert,
    Permute,
    UniformRandom,
    Filtered,
    Custom,
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphKind::Umap => "umap",
            GraphKind::Dense => "dense",
            GraphKind::Binarize => "binarize",
            GraphKind::Invert => "invert",
            GraphKind::Permute => "permute",
            GraphKind::UniformRandom => "uniform_random",
            GraphKind::Filtered => "filtered",
            GraphKind::Custom => "custom",
        })
    }
}

impl FromStr for GraphKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "umap" => GraphKind::Umap,
            "dense" => GraphKind::Dense,
            "binarize" => GraphKind::Binarize,
            "invert" => GraphKind::Invert,
            "permute" => GraphKind::Permute,
            "uniform_random" => GraphKind::UniformRandom,
            "filtered" => GraphKind::Filtered,
            "custom" => GraphKind::Custom,
            other => return Err(Error::InvalidParameter(format!("unknown graph kind {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub mu: f64,
}

/// Per-point bandwidths and nearest-neighbor offsets from calibration.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub sigma: Vec<f64>,
    pub rho: Vec<f64>,
    pub degenerate: Vec<bool>,
}

/// Symmetric sparse similarities. Each unordered pair is stored once
/// (`i < j`), so `mu_ij == mu_ji` holds by construction; `mu_ii` is never
/// stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityGraph {
    n: usize,
    edges: Vec<Edge>,
    row_start: Vec<usize>,
    /// `(neighbor, edge index)` per row, neighbors ascending.
    adjacency: Vec<(usize, usize)>,
    degrees: Vec<f64>,
    mu_e: f64,
    pub kind: GraphKind,
    pub k: Option<usize>,
    pub metric: Option<Metric>,
    pub calibration: Option<Calibration>,
}

impl SimilarityGraph {
    /// Builds a graph from unordered weighted pairs. Zero weights are
    /// dropped; weights outside `[0, 1]`, self loops and repeated pairs are
    /// rejected.
    pub fn from_edges(n: usize, pairs: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut edges = Vec::new();
        for (a, b, mu) in pairs {
            if !(0.0..=1.0).contains(&mu) {
                return Err(Error::WeightOutOfRange { i: a, j: b, weight: mu });
            }
            if a == b || a >= n || b >= n {
                return Err(Error::InvalidParameter(format!("bad pair ({a}, {b}) for n = {n}")));
            }
            if mu > 0.0 {
                edges.push(Edge {
                    i: a.min(b),
                    j: a.max(b),
                    mu,
                });
            }
        }
        edges.sort_by_key(|e| (e.i, e.j));
        if let Some(w) = edges.windows(2).find(|w| (w[0].i, w[0].j) == (w[1].i, w[1].j)) {
            return Err(Error::InvalidParameter(format!("pair ({}, {}) given twice", w[0].i, w[0].j)));
        }
        Ok(Self::from_sorted_edges(n, edges, GraphKind::Custom))
    }

    fn from_sorted_edges(n: usize, edges: Vec<Edge>, kind: GraphKind) -> Self {
        let mut counts = vec![0usize; n];
        for e in &edges {
            counts[e.i] += 1;
            counts[e.j] += 1;
        }
        let mut row_start = vec![0usize; n + 1];
        for i in 0..n {
            row_start[i + 1] = row_start[i] + counts[i];
        }
        let mut fill = row_start.clone();
        let mut adjacency = vec![(0usize, 0usize); row_start[n]];
        for (idx, e) in edges.iter().enumerate() {
            adjacency[fill[e.i]] = (e.j, idx);
            fill[e.i] += 1;
            adjacency[fill[e.j]] = (e.i, idx);
            fill[e.j] += 1;
        }
        for i in 0..n {
            adjacency[row_start[i]..row_start[i + 1]].sort_unstable_by_key(|&(j, _)| j);
        }
        let degrees: Vec<f64> = (0..n)
            .map(|i| adjacency[row_start[i]..row_start[i + 1]].iter().map(|&(_, e)| edges[e].mu).sum())
            .collect();
        let mu_e = 0.5 * degrees.iter().sum::<f64>();
        SimilarityGraph {
            n,
            edges,
            row_start,
            adjacency,
            degrees,
            mu_e,
            kind,
            k: None,
            metric: None,
            calibration: None,
        }
    }

    /// Same metadata, new weights on a subset of the edge list.
    fn rebuild(&self, edges: Vec<Edge>, kind: GraphKind) -> Self {
        let mut g = Self::from_sorted_edges(self.n, edges, kind);
        g.k = self.k;
        g.metric = self.metric;
        g.calibration = self.calibration.clone();
        g
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Unordered edges, `i < j`, sorted.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.degrees[i]
    }

    /// `mu(E) = sum_i d_i / 2`.
    pub fn mu_e(&self) -> f64 {
        self.mu_e
    }

    /// `(j, mu_ij)` for all `j` with positive weight, ascending `j`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.adjacency[self.row_start[i]..self.row_start[i + 1]]
            .iter()
            .map(|&(j, e)| (j, self.edges[e].mu))
    }

    pub fn row_len(&self, i: usize) -> usize {
        self.row_start[i + 1] - self.row_start[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let row = &self.adjacency[self.row_start[i]..self.row_start[i + 1]];
        row.binary_search_by_key(&j, |&(nb, _)| nb)
            .map_or(0.0, |pos| self.edges[row[pos].1].mu)
    }

    /// Writes `mu_i.` into `buf` (length `n`), zeros elsewhere.
    pub fn fill_row(&self, i: usize, buf: &mut [f64]) {
        buf.fill(0.0);
        for (j, mu) in self.row(i) {
            buf[j] = mu;
        }
    }

    /// Ordered pairs `(i, j)` with `mu_ij > 0`, ascending.
    pub fn ordered_pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, mu)| (i, j, mu)))
    }

    pub fn num_ordered_pairs(&self) -> usize {
        self.adjacency.len()
    }

    pub fn max_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.mu).fold(0.0, f64::max)
    }

    pub fn min_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.mu).fold(f64::INFINITY, f64::min)
    }

    /// Unordered pairs with positive weight, as `(i, j)` with `i < j`.
    pub fn edge_set(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.i, e.j)).collect()
    }
}

/// Fuzzy union `mu_ij = mu_{i->j} + mu_{j->i} - mu_{i->j} mu_{j->i}`.
pub fn symmetrize(directed: &DirectedSimilarities) -> Result<SimilarityGraph> {
    let n = directed.len();
    let mut halves: Vec<(usize, usize, f64)> = Vec::with_capacity(n * directed.k);
    for i in 0..n {
        for (j, w) in directed.row(i) {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::WeightOutOfRange { i, j, weight: w });
            }
            if j == i || j >= n {
                return Err(Error::InvalidParameter(format!("bad directed entry {i} -> {j}")));
            }
            halves.push((i.min(j), i.max(j), w));
        }
    }
    halves.sort_by_key(|&(i, j, _)| (i, j));
    let mut edges = Vec::new();
    let mut idx = 0;
    while idx < halves.len() {
        let (i, j, w) = halves[idx];
        let (mu, step) = match halves.get(idx + 1) {
            Some(&(i2, j2, w2)) if (i2, j2) == (i, j) => (w + w2 - w * w2, 2),
            _ => (w, 1),
        };
        if mu > 0.0 {
            edges.push(Edge { i, j, mu });
        }
        idx += step;
    }
    let mut g = SimilarityGraph::from_sorted_edges(n, edges, GraphKind::Umap);
    g.k = Some(directed.k);
    Ok(g)
}

/// Everything produced while building the standard graph.
#[derive(Clone, Debug)]
pub struct UmapGraph {
    pub neighbors: NeighborLists,
    pub directed: DirectedSimilarities,
    pub graph: SimilarityGraph,
}

/// kNN search, bandwidth calibration, directed weights and symmetrization.
pub fn build_umap_graph(data: &Dataset, k: usize, metric: Metric) -> Result<UmapGraph> {
    let neighbors = knn_brute(data, k, metric)?;
    let fits: Vec<SigmaFit> = (0..neighbors.len())
        .into_par_iter()
        .map(|i| {
            let dists = neighbors.dists(i);
            let offsets: Vec<f64> = dists.iter().map(|d| d - dists[0]).collect();
            smooth_knn_sigma(&offsets, SIGMA_TOL, SIGMA_MAX_ITER)
        })
        .collect();
    let sigma: Vec<f64> = fits.iter().map(|f| f.sigma).collect();
    let directed = directed_similarities(&neighbors, &sigma)?;
    let mut graph = symmetrize(&directed)?;
    graph.metric = Some(metric);
    graph.calibration = Some(Calibration {
        sigma,
        rho: (0..neighbors.len()).map(|i| neighbors.dists(i)[0]).collect(),
        degenerate: fits.iter().map(|f| f.degenerate).collect(),
    });
    Ok(UmapGraph {
        neighbors,
        directed,
        graph,
    })
}

/// `mu_ij = phi(|x_i - x_j|)` for every pair.
pub fn dense_similarities(data: &Dataset, kernel: &Kernel) -> SimilarityGraph {
    let n = data.len();
    let rows: Vec<Vec<Edge>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| Edge {
                    i,
                    j,
                    mu: kernel.phi_sq(sq_dist(data.point(i), data.point(j))),
                })
                .filter(|e| e.mu > 0.0)
                .collect()
        })
        .collect();
    SimilarityGraph::from_sorted_edges(n, rows.concat(), GraphKind::Dense)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// Every positive weight set to one.
    Binarize,
    /// Epoch filter, then `mu -> min mu / mu`.
    Invert,
    /// Positive weights shuffled across the edge set.
    Permute,
    /// Positive weights redrawn uniformly from `(0, 1]`.
    UniformRandom,
}

impl FromStr for Perturbation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binarize" => Ok(Perturbation::Binarize),
            "invert" => Ok(Perturbation::Invert),
            "permute" => Ok(Perturbation::Permute),
            "uniform_random" => Ok(Perturbation::UniformRandom),
            other => Err(Error::InvalidParameter(format!("unknown perturbation {other:?}"))),
        }
    }
}

/// Rewrites the positive weights while keeping the edge set (for `Invert`,
/// the edge set that survives the epoch filter).
pub fn perturb(graph: &SimilarityGraph, mode: Perturbation, seed: u64, n_epochs: usize) -> Result<SimilarityGraph> {
    let mut rng = rng::stream(seed, Stream::Perturb);
    let mut edges = graph.edges.clone();
    let kind = match mode {
        Perturbation::Binarize => {
            edges.iter_mut().for_each(|e| e.mu = 1.0);
            GraphKind::Binarize
        }
        Perturbation::Invert => {
            let filtered = epoch_filter(graph, n_epochs)?;
            let mut edges = filtered.edges;
            let min = edges.iter().map(|e| e.mu).fold(f64::INFINITY, f64::min);
            edges.iter_mut().for_each(|e| e.mu = min / e.mu);
            return Ok(graph.rebuild(edges, GraphKind::Invert));
        }
        Perturbation::Permute => {
            let mut weights: Vec<f64> = edges.iter().map(|e| e.mu).collect();
            weights.shuffle(&mut rng);
            edges.iter_mut().zip(weights).for_each(|(e, w)| e.mu = w);
            GraphKind::Permute
        }
        Perturbation::UniformRandom => {
            edges.iter_mut().for_each(|e| e.mu = 1.0 - rng.random::<f64>());
            GraphKind::UniformRandom
        }
    };
    Ok(graph.rebuild(edges, kind))
}

/// Drops weights below `max mu / n_epochs`; those edges would be sampled
/// less than once over the run by the reference schedule.
pub fn epoch_filter(graph: &SimilarityGraph, n_epochs: usize) -> Result<SimilarityGraph> {
    if n_epochs == 0 {
        return Err(Error::InvalidParameter("n_epochs must be >= 1".into()));
    }
    let threshold = graph.max_weight() / n_epochs as f64;
    let edges = graph.edges.iter().copied().filter(|e| e.mu >= threshold).collect();
    let kind = if graph.kind == GraphKind::Umap {
        GraphKind::Filtered
    } else {
        graph.kind
    };
    Ok(graph.rebuild(edges, kind))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegreeHistogram {
    /// `bins + 1` edges.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub min_degree: f64,
    pub max_degree: f64,
    /// Lower-bound reference line: `log2(k)` for the standard graph, `k - 1`
    /// for the binarized shared-kNN graph.
    pub reference: Option<f64>,
}

pub fn degree_histogram(graph: &SimilarityGraph, bins: usize) -> DegreeHistogram {
    let bins = bins.max(1);
    let degrees = graph.degrees();
    let min_degree = degrees.iter().copied().fold(f64::INFINITY, f64::min);
    let max_degree = degrees.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let reference = graph.k.and_then(|k| match graph.kind {
        GraphKind::Umap | GraphKind::Filtered => Some((k as f64).log2()),
        GraphKind::Binarize => Some(k as f64 - 1.0),
        _ => None,
    });
    let lo = reference.map_or(min_degree, |r| r.min(min_degree)).floor();
    let mut hi = max_degree.ceil();
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins).map(|b| lo + width * b as f64).collect();
    let mut counts = vec![0usize; bins];
    for &d in degrees {
        let b = (((d - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    DegreeHistogram {
        bin_edges,
        counts,
        min_degree,
        max_degree,
        reference,
    }
}

/// Writes the edge list `i,j,mu` (with a `#` metadata line) and the node
/// sidecar `i,sigma,rho,degree`.
pub fn save_graph(graph: &SimilarityGraph, edges_path: impl AsRef<Path>, nodes_path: impl AsRef<Path>) -> Result<()> {
    let edges_path = edges_path.as_ref();
    let nodes_path = nodes_path.as_ref();
    let io_e = |e| Error::io(edges_path, e);
    let mut out = BufWriter::new(File::create(edges_path).map_err(io_e)?);
    let k = graph.k.map_or(String::new(), |k| k.to_string());
    let metric = graph.metric.map_or(String::new(), |m| m.to_string());
    writeln!(out, "# n={},k={k},metric={metric},kind={}", graph.n, graph.kind).map_err(io_e)?;
    writeln!(out, "i,j,mu").map_err(io_e)?;
    for e in &graph.edges {
        writeln!(out, "{},{},{}", e.i, e.j, fmt_real(e.mu)).map_err(io_e)?;
    }
    out.flush().map_err(io_e)?;

    let io_n = |e| Error::io(nodes_path, e);
    let mut out = BufWriter::new(File::create(nodes_path).map_err(io_n)?);
    writeln!(out, "i,sigma,rho,degree").map_err(io_n)?;
    for i in 0..graph.n {
        let (sigma, rho) = match &graph.calibration {
            Some(c) => (fmt_real(c.sigma[i]), fmt_real(c.rho[i])),
            None => (String::new(), String::new()),
        };
        writeln!(out, "{i},{sigma},{rho},{}", fmt_real(graph.degrees[i])).map_err(io_n)?;
    }
    out.flush().map_err(io_n)
}

/// Reads a graph written by [`save_graph`].
pub fn load_graph(edges_path: impl AsRef<Path>, nodes_path: impl AsRef<Path>) -> Result<SimilarityGraph> {
    let edges_path = edges_path.as_ref();
    let nodes_path = nodes_path.as_ref();
    let file = File::open(edges_path).map_err(|e| Error::io(edges_path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let parse_err = |row: usize, msg: String| Error::Csv { row, msg };

    let (mut n, mut k, mut metric, mut kind) = (None, None, None, GraphKind::Custom);
    let mut pairs = Vec::new();
    for (no, line) in &mut lines {
        let line = line.map_err(|e| Error::io(edges_path, e))?;
        let row = no + 1;
        if let Some(meta) = line.strip_prefix('#') {
            for kv in meta.trim().split(',') {
                match kv.split_once('=') {
                    Some(("n", v)) => n = v.parse().ok(),
                    Some(("k", v)) => k = v.parse().ok(),
                    Some(("metric", v)) => metric = v.parse().ok(),
                    Some(("kind", v)) => kind = v.parse().unwrap_or(GraphKind::Custom),
                    _ => {}
                }
            }
            continue;
        }
        if line.trim().is_empty() || line.starts_with("i,") {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 3 {
            return Err(parse_err(row, format!("expected i,j,mu, found {} cells", cells.len())));
        }
        let i: usize = cells[0].parse().map_err(|e| parse_err(row, format!("{e}")))?;
        let j: usize = cells[1].parse().map_err(|e| parse_err(row, format!("{e}")))?;
        let mu: f64 = cells[2].parse().map_err(|e| parse_err(row, format!("{e}")))?;
        pairs.push((i, j, mu));
    }
    let n = n.ok_or_else(|| parse_err(1, "missing '# n=' metadata line".into()))?;
    let mut graph = SimilarityGraph::from_edges(n, pairs)?;
    graph.kind = kind;
    graph.k = k;
    graph.metric = metric;

    let file = File::open(nodes_path).map_err(|e| Error::io(nodes_path, e))?;
    let mut sigma = Vec::with_capacity(n);
    let mut rho = Vec::with_capacity(n);
    for (no, line) in BufReader::new(file).lines().enumerate().skip(1) {
        let line = line.map_err(|e| Error::io(nodes_path, e))?;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 4 {
            return Err(parse_err(no + 1, "expected i,sigma,rho,degree".into()));
        }
        sigma.push(cells[1].parse::<f64>().ok());
        rho.push(cells[2].parse::<f64>().ok());
    }
    if sigma.len() == n && sigma.iter().chain(&rho).all(Option::is_some) {
        graph.calibration = Some(Calibration {
            sigma: sigma.into_iter().flatten().collect(),
            rho: rho.into_iter().flatten().collect(),
            degenerate: vec![false; n],
        });
    }
    Ok(graph)
}
