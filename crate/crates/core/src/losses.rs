//! Loss functionals over a similarity graph and an embedding: the purported
//! (cross-entropy) loss, the effective loss that negative sampling minimizes
//! in expectation, the realized per-epoch loss, and diagnostics built on
//! them.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::optimizer::{expected_gradient, Embedding, EpochSampleLog};
use crate::simgraph::{GraphKind, SimilarityGraph};

/// Offset added before taking logs.
pub const LOG_OFFSET: f64 = 1e-4;

/// `log(min(x + 1e-4, 1))`.
#[inline]
pub fn clamped_log(x: f64) -> f64 {
    (x + LOG_OFFSET).min(1.0).ln()
}

/// How logs of similarities are taken. `Clamped` is what every reported loss
/// uses; `Exact` exists for derivative checks, where the clamp's kink and
/// offset would get in the way.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LogMode {
    #[default]
    Clamped,
    Exact,
}

impl LogMode {
    #[inline]
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogMode::Clamped => clamped_log(x),
            LogMode::Exact => x.ln(),
        }
    }

    /// Attractive term `-log(nu)`.
    #[inline]
    pub fn attr(self, nu: f64) -> f64 {
        -self.log(nu)
    }

    /// Repulsive term `-log(1 - nu)`.
    #[inline]
    pub fn rep(self, nu: f64) -> f64 {
        -self.log(1.0 - nu)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub attr: f64,
    pub rep: f64,
    pub total: f64,
}

impl LossParts {
    pub fn new(attr: f64, rep: f64) -> Self {
        LossParts {
            attr,
            rep,
            total: attr + rep,
        }
    }
}

/// Where the low-dimensional similarities `nu_ij` come from.
#[derive(Clone, Copy, Debug)]
pub enum Similarities<'a> {
    /// `nu_ij = phi(|e_i - e_j|)`.
    Embedding(&'a Embedding, &'a Kernel),
    /// `nu_ij` read from a graph (e.g. `nu = mu`).
    Graph(&'a SimilarityGraph),
    /// All points infinitely far apart: `nu_ij = 1` if `i == j`, else 0.
    Diverged,
}

impl Similarities<'_> {
    fn len(&self) -> Option<usize> {
        match self {
            Similarities::Embedding(e, _) => Some(e.len()),
            Similarities::Graph(g) => Some(g.n()),
            Similarities::Diverged => None,
        }
    }

    /// Fills `buf[j] = nu_ij` for `j > i`.
    fn fill_upper(&self, i: usize, buf: &mut [f64]) {
        match self {
            Similarities::Embedding(e, k) => {
                for (j, slot) in buf.iter_mut().enumerate().skip(i + 1) {
                    *slot = k.phi_sq(e.sq_dist(i, j));
                }
            }
            Similarities::Graph(g) => g.fill_row(i, buf),
            Similarities::Diverged => buf.fill(0.0),
        }
    }
}

/// Sums `term(i, j, mu_ij, nu_ij)` over `i < j`, row-parallel, then reduces
/// the row sums in index order.
fn pair_sums<const K: usize, F>(graph: &SimilarityGraph, nu: Similarities<'_>, term: F) -> [f64; K]
where
    F: Fn(usize, usize, f64, f64) -> [f64; K] + Sync,
{
    let n = graph.n();
    let rows: Vec<[f64; K]> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0.0; n], vec![0.0; n]),
            |(mu_row, nu_row), i| {
                graph.fill_row(i, mu_row);
                nu.fill_upper(i, nu_row);
                let mut acc = [0.0; K];
                for j in (i + 1)..n {
                    let t = term(i, j, mu_row[j], nu_row[j]);
                    acc.iter_mut().zip(t).for_each(|(a, v)| *a += v);
                }
                acc
            },
        )
        .collect();
    rows.iter().fold([0.0; K], |mut acc, r| {
        acc.iter_mut().zip(r).for_each(|(a, v)| *a += v);
        acc
    })
}

#[inline]
fn attr_term(mode: LogMode, mu: f64, nu: f64) -> f64 {
    if mu > 0.0 {
        mu * mode.attr(nu)
    } else {
        0.0
    }
}

#[inline]
fn purported_rep_term(mode: LogMode, mu: f64, nu: f64) -> f64 {
    if mu < 1.0 {
        (1.0 - mu) * mode.rep(nu)
    } else {
        0.0
    }
}

#[inline]
fn weighted_rep_term(mode: LogMode, w: f64, nu: f64) -> f64 {
    if w > 0.0 {
        w * mode.rep(nu)
    } else {
        0.0
    }
}

fn check_len(graph: &SimilarityGraph, nu: &Similarities<'_>) -> Result<()> {
    match nu.len() {
        Some(len) if len != graph.n() => Err(Error::Shape(format!("graph has {} nodes, similarities {len}", graph.n()))),
        _ => Ok(()),
    }
}

/// `-2 sum_{i<j} mu_ij log nu_ij + (1 - mu_ij) log(1 - nu_ij)`.
pub fn purported_loss_with(graph: &SimilarityGraph, nu: Similarities<'_>, mode: LogMode) -> Result<LossParts> {
    check_len(graph, &nu)?;
    let [a, r] = pair_sums(graph, nu, |_, _, mu, nu| [attr_term(mode, mu, nu), purported_rep_term(mode, mu, nu)]);
    Ok(LossParts::new(2.0 * a, 2.0 * r))
}

pub fn purported_loss(graph: &SimilarityGraph, embedding: &Embedding, kernel: &Kernel) -> Result<LossParts> {
    purported_loss_with(graph, Similarities::Embedding(embedding, kernel), LogMode::Clamped)
}

/// Repulsive weight `(d_i + d_j) m / (2n)` of the pair `ij` in the effective
/// loss.
#[inline]
pub fn repulsive_weight(graph: &SimilarityGraph, m: usize, i: usize, j: usize) -> f64 {
    (graph.degree(i) + graph.degree(j)) * m as f64 / (2.0 * graph.n() as f64)
}

/// `-2 sum_{i<j} mu_ij log nu_ij + (d_i + d_j) m / (2n) log(1 - nu_ij)`.
pub fn effective_loss_with(graph: &SimilarityGraph, nu: Similarities<'_>, m: usize, mode: LogMode) -> Result<LossParts> {
    check_len(graph, &nu)?;
    let [a, r] = pair_sums(graph, nu, |i, j, mu, nu| {
        [attr_term(mode, mu, nu), weighted_rep_term(mode, repulsive_weight(graph, m, i, j), nu)]
    });
    Ok(LossParts::new(2.0 * a, 2.0 * r))
}

pub fn effective_loss(graph: &SimilarityGraph, embedding: &Embedding, kernel: &Kernel, m: usize) -> Result<LossParts> {
    effective_loss_with(graph, Similarities::Embedding(embedding, kernel), m, LogMode::Clamped)
}

/// Loss realized by one epoch's events: `-log nu_ij` per fired edge and
/// `-log(1 - nu_is)` per negative sample. A negative sample equal to its
/// head exerts no force and is left out.
pub fn actual_epoch_loss(log: &EpochSampleLog, embedding: &Embedding, kernel: &Kernel, mode: LogMode) -> LossParts {
    let attr: f64 = log
        .edges
        .iter()
        .map(|&(i, j)| mode.attr(kernel.phi_sq(embedding.sq_dist(i, j))))
        .sum();
    let rep: f64 = log
        .negative_pairs()
        .filter(|&(i, s)| i != s)
        .map(|(i, s)| mode.rep(kernel.phi_sq(embedding.sq_dist(i, s))))
        .sum();
    LossParts::new(attr, rep)
}

/// One row of the loss CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub purported_attr: f64,
    pub purported_rep: f64,
    pub purported_total: f64,
    pub effective_attr: f64,
    pub effective_rep: f64,
    pub effective_total: f64,
    pub actual_attr: f64,
    pub actual_rep: f64,
    pub actual_total: f64,
}

impl LossRecord {
    pub fn new(epoch: usize, purported: LossParts, effective: LossParts, actual: LossParts) -> Self {
        LossRecord {
            epoch,
            purported_attr: purported.attr,
            purported_rep: purported.rep,
            purported_total: purported.total,
            effective_attr: effective.attr,
            effective_rep: effective.rep,
            effective_total: effective.total,
            actual_attr: actual.attr,
            actual_rep: actual.rep,
            actual_total: actual.total,
        }
    }

    pub fn purported(&self) -> LossParts {
        LossParts::new(self.purported_attr, self.purported_rep)
    }

    pub fn effective(&self) -> LossParts {
        LossParts::new(self.effective_attr, self.effective_rep)
    }

    pub fn actual(&self) -> LossParts {
        LossParts::new(self.actual_attr, self.actual_rep)
    }
}

/// Purported and effective losses share their attractive part, so both are
/// computed in one pass over the pairs.
pub fn loss_record(
    epoch: usize,
    graph: &SimilarityGraph,
    embedding: &Embedding,
    kernel: &Kernel,
    m: usize,
    log: Option<&EpochSampleLog>,
    mode: LogMode,
) -> LossRecord {
    let nu = Similarities::Embedding(embedding, kernel);
    let [attr, rep_p, rep_e] = pair_sums(graph, nu, |i, j, mu, nu| {
        [
            attr_term(mode, mu, nu),
            purported_rep_term(mode, mu, nu),
            weighted_rep_term(mode, repulsive_weight(graph, m, i, j), nu),
        ]
    });
    let purported = LossParts::new(2.0 * attr, 2.0 * rep_p);
    let effective = LossParts::new(2.0 * attr, 2.0 * rep_e);
    let actual = log.map_or_else(LossParts::default, |l| actual_epoch_loss(l, embedding, kernel, mode));
    LossRecord::new(epoch, purported, effective, actual)
}

pub fn write_loss_csv(records: &[LossRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| Error::Shape(format!("writing loss record: {e}")))?;
    }
    w.flush().map_err(|e| Error::Shape(format!("writing loss records: {e}")))?;
    Ok(())
}

/// Per-pair minimizers `nu*_ij = mu_ij / (mu_ij + (d_i + d_j) m / (2n))` of
/// the effective loss, stored on the support of `mu` (they vanish
/// elsewhere).
#[derive(Clone, Debug)]
pub struct TargetSimilarities {
    pub graph: SimilarityGraph,
    /// With `m = 0` nothing repels and every positive target is exactly 1.
    pub without_repulsion: bool,
}

impl TargetSimilarities {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.graph.weight(i, j)
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// Row-major `n x n` matrix.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n * n];
        for e in self.graph.edges() {
            out[e.i * n + e.j] = e.mu;
            out[e.j * n + e.i] = e.mu;
        }
        out
    }
}

#[inline]
pub fn target_value(mu: f64, weight: f64) -> f64 {
    if mu > 0.0 {
        mu / (mu + weight)
    } else {
        0.0
    }
}

pub fn target_similarities(graph: &SimilarityGraph, m: usize) -> TargetSimilarities {
    let pairs = graph
        .edges()
        .iter()
        .map(|e| (e.i, e.j, target_value(e.mu, repulsive_weight(graph, m, e.i, e.j))));
    let mut targets = SimilarityGraph::from_edges(graph.n(), pairs).expect("targets stay in [0, 1]");
    targets.kind = GraphKind::Custom;
    TargetSimilarities {
        graph: targets,
        without_repulsion: m == 0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairBce {
    pub i: usize,
    pub j: usize,
    /// `mu_ij + (d_i + d_j) m / (2n)`.
    pub weight: f64,
    pub target: f64,
    /// `-(nu* log nu + (1 - nu*) log(1 - nu))`.
    pub bce: f64,
}

#[derive(Clone, Debug)]
pub struct WeightedBce {
    /// All pairs `i < j`, row-major.
    pub pairs: Vec<PairBce>,
    /// `2 sum weight * bce`.
    pub total: f64,
}

/// The effective loss rewritten as a weighted cross-entropy between the
/// targets `nu*` and `nu`. Intended for small `n`: one entry per pair.
pub fn weighted_bce_decomposition(
    graph: &SimilarityGraph,
    embedding: &Embedding,
    kernel: &Kernel,
    m: usize,
    mode: LogMode,
) -> Result<WeightedBce> {
    let n = graph.n();
    if embedding.len() != n {
        return Err(Error::Shape(format!("graph has {n} nodes, embedding {}", embedding.len())));
    }
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mu = graph.weight(i, j);
            let w = repulsive_weight(graph, m, i, j);
            let weight = mu + w;
            let target = if weight > 0.0 { mu / weight } else { 0.0 };
            let nu = kernel.phi_sq(embedding.sq_dist(i, j));
            let mut bce = 0.0;
            if target > 0.0 {
                bce += target * mode.attr(nu);
            }
            if target < 1.0 {
                bce += (1.0 - target) * mode.rep(nu);
            }
            pairs.push(PairBce { i, j, weight, target, bce });
        }
    }
    let total = 2.0 * pairs.iter().map(|p| p.weight * p.bce).sum::<f64>();
    Ok(WeightedBce { pairs, total })
}

/// Balance between attraction and repulsion implied by a graph and `m`.
/// Pair sums run over all ordered pairs `i, j = 1..n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RepulsionStats {
    /// Mean of `1 - mu_ij` over unordered pairs `i < j`.
    pub mean_one_minus_mu: f64,
    /// Largest pairwise repulsive weight `(d_i + d_j) m / (2n)`, `i != j`.
    pub max_rep_weight: f64,
    /// Mean pairwise repulsive weight over `i < j`.
    pub mean_rep_weight: f64,
    /// `sum_{i,j} mu_ij`, which is `2 mu(E)`.
    pub total_attractive: f64,
    /// `sum_{i,j} (d_i + d_j) m / (2n)`, which is `2 m mu(E)`.
    pub total_repulsive: f64,
    /// `sum_{i,j} d_i m / (2n)`: the head-only weights of the expected
    /// gradient without tail pushing, which is `m mu(E)`.
    pub head_repulsive: f64,
    /// `total_attractive / total_repulsive`.
    pub ratio: f64,
}

pub fn repulsion_weight_stats(graph: &SimilarityGraph, m: usize) -> RepulsionStats {
    let n = graph.n();
    let nf = n as f64;
    let scale = m as f64 / (2.0 * nf);
    let d = graph.degrees();
    let mut sum_one_minus_mu = 0.0;
    let mut sum_pair_w = 0.0;
    let mut total_repulsive = 0.0;
    let mut head_repulsive = 0.0;
    let mut total_attractive = 0.0;
    let mut row = vec![0.0; n];
    for i in 0..n {
        graph.fill_row(i, &mut row);
        for j in 0..n {
            total_attractive += row[j];
            total_repulsive += (d[i] + d[j]) * scale;
            head_repulsive += d[i] * scale;
            if j > i {
                sum_one_minus_mu += 1.0 - row[j];
                sum_pair_w += (d[i] + d[j]) * scale;
            }
        }
    }
    let mut top = [f64::NEG_INFINITY; 2];
    for &di in d {
        if di > top[0] {
            top = [di, top[0]];
        } else if di > top[1] {
            top[1] = di;
        }
    }
    let pairs = (nf * (nf - 1.0) / 2.0).max(1.0);
    RepulsionStats {
        mean_one_minus_mu: sum_one_minus_mu / pairs,
        max_rep_weight: (top[0] + top[1]) * scale,
        mean_rep_weight: sum_pair_w / pairs,
        total_attractive,
        total_repulsive,
        head_repulsive,
        ratio: total_attractive / total_repulsive,
    }
}

/// Largest entrywise difference between `d g_i / d e_j` and the transpose of
/// `d g_j / d e_i`, where `g` is the expected gradient field, by central
/// differences with step `1e-5`. Zero (up to truncation error) iff the field
/// is locally a gradient in the `(e_i, e_j)` block.
pub fn cross_partial_asymmetry(
    graph: &SimilarityGraph,
    embedding: &Embedding,
    kernel: &Kernel,
    m: usize,
    push_tail: bool,
    i: usize,
    j: usize,
) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let n = embedding.len();
    if i == j || i >= n || j >= n {
        return Err(Error::InvalidParameter(format!("need two distinct points, got ({i}, {j})")));
    }
    for a in 0..n {
        for b in (a + 1)..n {
            if embedding.sq_dist(a, b) == 0.0 {
                return Err(Error::CoincidentPoints(a, b));
            }
        }
    }
    let dim = embedding.dim();
    // block[a][c] = d g_row[a] / d e_col[c]
    let block = |row: usize, col: usize| -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; dim]; dim];
        for c in 0..dim {
            let mut plus = embedding.clone();
            plus.point_mut(col)[c] += STEP;
            let mut minus = embedding.clone();
            minus.point_mut(col)[c] -= STEP;
            let gp = expected_gradient(graph, &plus, kernel, m, push_tail, row);
            let gm = expected_gradient(graph, &minus, kernel, m, push_tail, row);
            for a in 0..dim {
                out[a][c] = (gp[a] - gm[a]) / (2.0 * STEP);
            }
        }
        out
    };
    let ij = block(i, j);
    let ji = block(j, i);
    let mut worst: f64 = 0.0;
    for a in 0..dim {
        for c in 0..dim {
            worst = worst.max((ij[a][c] - ji[c][a]).abs());
        }
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSubset {
    All,
    PositiveMu,
    ZeroMu,
}

impl std::str::FromStr for PairSubset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(PairSubset::All),
            "positive" | "positive_mu" => Ok(PairSubset::PositiveMu),
            "zero" | "zero_mu" => Ok(PairSubset::ZeroMu),
            other => Err(Error::InvalidParameter(format!("unknown pair subset {other:?}"))),
        }
    }
}

/// Histograms of `mu`, `nu*` and `nu` on a common grid over `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityHistograms {
    pub bin_edges: Vec<f64>,
    pub count_mu: Vec<u64>,
    pub count_target: Vec<u64>,
    pub count_nu: Vec<u64>,
}

impl SimilarityHistograms {
    pub fn bins(&self) -> usize {
        self.count_mu.len()
    }

    /// Writes `bin_lo,bin_hi,count_mu,count_target,count_nu`.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "bin_lo,bin_hi,count_mu,count_target,count_nu")?;
        for b in 0..self.bins() {
            writeln!(
                out,
                "{},{},{},{},{}",
                self.bin_edges[b],
                self.bin_edges[b + 1],
                self.count_mu[b],
                self.count_target[b],
                self.count_nu[b]
            )?;
        }
        out.flush()
    }
}

#[inline]
pub fn unit_bin(x: f64, bins: usize) -> usize {
    ((x * bins as f64) as usize).min(bins - 1)
}

/// Histograms over the unordered pairs `i < j` selected by `subset`.
pub fn similarity_histograms(
    graph: &SimilarityGraph,
    targets: &TargetSimilarities,
    embedding: &Embedding,
    kernel: &Kernel,
    bins: usize,
    subset: PairSubset,
) -> Result<SimilarityHistograms> {
    let n = graph.n();
    if bins == 0 {
        return Err(Error::InvalidParameter("need at least one bin".into()));
    }
    if embedding.len() != n || targets.n() != n {
        return Err(Error::Shape("graph, targets and embedding disagree on n".into()));
    }
    let rows: Vec<[Vec<u64>; 3]> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0.0; n], vec![0.0; n]),
            |(mu_row, t_row), i| {
                graph.fill_row(i, mu_row);
                targets.graph.fill_row(i, t_row);
                let mut counts = [vec![0u64; bins], vec![0u64; bins], vec![0u64; bins]];
                for j in (i + 1)..n {
                    let mu = mu_row[j];
                    let keep = match subset {
                        PairSubset::All => true,
                        PairSubset::PositiveMu => mu > 0.0,
                        PairSubset::ZeroMu => mu == 0.0,
                    };
                    if keep {
                        counts[0][unit_bin(mu, bins)] += 1;
                        counts[1][unit_bin(t_row[j], bins)] += 1;
                        counts[2][unit_bin(kernel.phi_sq(embedding.sq_dist(i, j)), bins)] += 1;
                    }
                }
                counts
            },
        )
        .collect();
    let mut hist = SimilarityHistograms {
        bin_edges: (0..=bins).map(|b| b as f64 / bins as f64).collect(),
        count_mu: vec![0; bins],
        count_target: vec![0; bins],
        count_nu: vec![0; bins],
    };
    for row in rows {
        for b in 0..bins {
            hist.count_mu[b] += row[0][b];
            hist.count_target[b] += row[1][b];
            hist.count_nu[b] += row[2][b];
        }
    }
    Ok(hist)
}

/// Histogram over `[0, 1]` of the target similarities on positive pairs.
pub fn target_histogram(targets: &TargetSimilarities, bins: usize) -> Vec<u64> {
    let bins = bins.max(1);
    let mut counts = vec![0u64; bins];
    for e in targets.graph.edges() {
        counts[unit_bin(e.mu, bins)] += 1;
    }
    counts
}

/// Total-variation distance between two histograms, each normalized to
/// unit mass.
pub fn total_variation(p: &[u64], q: &[u64]) -> f64 {
    let sp: u64 = p.iter().sum();
    let sq: u64 = q.iter().sum();
    if sp == 0 || sq == 0 {
        return if sp == sq { 0.0 } else { 1.0 };
    }
    0.5 * p
        .iter()
        .zip(q)
        .map(|(&a, &b)| (a as f64 / sp as f64 - b as f64 / sq as f64).abs())
        .sum::<f64>()
}
