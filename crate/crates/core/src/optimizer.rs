//! Per-edge Bernoulli sampling SGD with uniform negative samples, and the
//! closed-form expectation of its per-epoch update.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datagen::{fmt_real, Dataset};
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::losses::{self, LogMode, LossRecord};
use crate::rng::{self, Rng, Stream};
use crate::simgraph::SimilarityGraph;

/// `n` points in `R^dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    dim: usize,
    coords: Vec<f64>,
}

impl Embedding {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!("{} coordinates for dimension {dim}", coords.len())));
        }
        Ok(Embedding { dim, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn point_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    #[inline]
    pub fn sq_dist(&self, i: usize, j: usize) -> f64 {
        crate::kernel::sq_dist(self.point(i), self.point(j))
    }

    fn first_non_finite(&self) -> Option<usize> {
        self.coords.iter().position(|c| !c.is_finite()).map(|p| p / self.dim)
    }

    /// Writes `id,e1,...,ed` rows.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|c| format!("e{c}")).collect();
        writeln!(out, "id,{}", header.join(","))?;
        for (i, p) in self.rows().enumerate() {
            let cells: Vec<String> = p.iter().map(|&v| fmt_real(v)).collect();
            writeln!(out, "{i},{}", cells.join(","))?;
        }
        out.flush()
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(&mut BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    /// Reads `id,e1,...,ed`; ids must be `0..n` in order.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut dim = None;
        let mut coords = Vec::new();
        for (no, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let err = |msg: String| Error::Csv { row: no + 1, msg };
            let id: usize = cells[0].parse().map_err(|e| err(format!("bad id: {e}")))?;
            if id != coords.len() / dim.unwrap_or(1).max(1) {
                return Err(err(format!("id {id} out of sequence")));
            }
            let d = *dim.get_or_insert(cells.len() - 1);
            if cells.len() - 1 != d || d == 0 {
                return Err(err(format!("expected {d} coordinates")));
            }
            for c in &cells[1..] {
                coords.push(c.parse::<f64>().map_err(|e| err(format!("{e}")))?);
            }
        }
        Embedding::new(dim.unwrap_or(1), coords)
    }
}

impl From<&Dataset> for Embedding {
    fn from(data: &Dataset) -> Self {
        Embedding {
            dim: data.dim(),
            coords: data.as_flat().to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// Copy of the input coordinates (requires `D == d`).
    #[default]
    Data,
    /// Projection on the top `d` principal axes.
    Pca,
    /// Uniform on `[-10, 10]^d`.
    Random,
}

impl FromStr for Init {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "data" => Ok(Init::Data),
            "pca" => Ok(Init::Pca),
            "random" => Ok(Init::Random),
            other => Err(Error::InvalidParameter(format!("unknown init {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeOrder {
    /// Ascending `(i, j)`.
    #[default]
    Fixed,
    /// Fresh random permutation of the ordered pairs every epoch.
    Shuffled,
}

impl FromStr for EdgeOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(EdgeOrder::Fixed),
            "shuffled" => Ok(EdgeOrder::Shuffled),
            other => Err(Error::InvalidParameter(format!("unknown edge order {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Negative samples per fired edge.
    pub m: usize,
    pub n_epochs: usize,
    pub alpha0: f64,
    /// Linear decay `alpha0 (1 - t / T)`.
    pub lr_decay: bool,
    /// Also repel each negative sample from the head of its edge.
    pub push_tail: bool,
    pub seed: u64,
    pub init: Init,
    pub edge_order: EdgeOrder,
    /// Embedding dimension.
    pub dim: usize,
    /// Evaluate the loss record every this many epochs (the last epoch is
    /// always evaluated).
    pub loss_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            m: 5,
            n_epochs: 500,
            alpha0: 1.0,
            lr_decay: true,
            push_tail: false,
            seed: 0,
            init: Init::Data,
            edge_order: EdgeOrder::Fixed,
            dim: 2,
            loss_every: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_epochs == 0 {
            return Err(Error::InvalidParameter("n_epochs must be >= 1".into()));
        }
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha0 = {} must be positive", self.alpha0)));
        }
        if self.dim == 0 {
            return Err(Error::InvalidParameter("embedding dimension must be >= 1".into()));
        }
        Ok(())
    }

    /// Learning rate used in epoch `t` (0-based).
    pub fn learning_rate(&self, t: usize) -> f64 {
        if self.lr_decay {
            self.alpha0 * (1.0 - t as f64 / self.n_epochs as f64)
        } else {
            self.alpha0
        }
    }
}

/// The random events of one epoch: fired ordered edges and, for each, `m`
/// negative samples stored consecutively.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochSampleLog {
    pub m: usize,
    pub edges: Vec<(usize, usize)>,
    pub negatives: Vec<usize>,
}

impl EpochSampleLog {
    pub fn clear(&mut self) {
        self.edges.clear();
        self.negatives.clear();
    }

    /// `(head, negative sample)` pairs.
    pub fn negative_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let m = self.m.max(1);
        self.negatives.iter().enumerate().map(move |(idx, &s)| (self.edges[idx / m].0, s))
    }
}

/// Drives the sampling of one epoch. `on_fire(i, j, negatives)` runs for each
/// fired ordered edge in visiting order; draws never depend on the embedding,
/// so frozen and live runs with the same RNG see the same events.
fn sample_epoch_with(
    graph: &SimilarityGraph,
    m: usize,
    order: EdgeOrder,
    rng: &mut Rng,
    pairs: &mut Vec<(usize, usize, f64)>,
    negatives: &mut Vec<usize>,
    mut on_fire: impl FnMut(usize, usize, &[usize]),
) {
    let n = graph.n();
    let mut visit = |i: usize, j: usize, mu: f64, rng: &mut Rng| {
        let r: f64 = rng.random();
        if r < mu {
            negatives.clear();
            negatives.extend((0..m).map(|_| rng.random_range(0..n)));
            on_fire(i, j, negatives);
        }
    };
    match order {
        EdgeOrder::Fixed => {
            for (i, j, mu) in graph.ordered_pairs() {
                visit(i, j, mu, rng);
            }
        }
        EdgeOrder::Shuffled => {
            pairs.clear();
            pairs.extend(graph.ordered_pairs());
            pairs.shuffle(rng);
            for &(i, j, mu) in pairs.iter() {
                visit(i, j, mu, rng);
            }
        }
    }
}

/// Samples one epoch's events without touching any embedding.
pub fn sample_epoch(graph: &SimilarityGraph, m: usize, order: EdgeOrder, rng: &mut Rng, log: &mut EpochSampleLog) {
    log.clear();
    log.m = m;
    let mut pairs = Vec::new();
    let mut negs = Vec::with_capacity(m);
    sample_epoch_with(graph, m, order, rng, &mut pairs, &mut negs, |i, j, s| {
        log.edges.push((i, j));
        log.negatives.extend_from_slice(s);
    });
}

/// Reusable buffers for [`run_epoch`].
#[derive(Default)]
pub struct EpochScratch {
    pairs: Vec<(usize, usize, f64)>,
    negatives: Vec<usize>,
    diff: Vec<f64>,
}

#[inline]
fn attract(coords: &mut [f64], dim: usize, i: usize, j: usize, kernel: &Kernel, alpha: f64, diff: &mut [f64]) {
    let mut d2 = 0.0;
    for c in 0..dim {
        diff[c] = coords[i * dim + c] - coords[j * dim + c];
        d2 += diff[c] * diff[c];
    }
    let coeff = kernel.attr_coefficient(d2);
    for c in 0..dim {
        coords[i * dim + c] -= alpha * kernel.clip(coeff * diff[c]);
    }
}

#[inline]
fn repel(coords: &mut [f64], dim: usize, i: usize, s: usize, kernel: &Kernel, alpha: f64, diff: &mut [f64]) {
    let mut d2 = 0.0;
    for c in 0..dim {
        diff[c] = coords[i * dim + c] - coords[s * dim + c];
        d2 += diff[c] * diff[c];
    }
    let coeff = kernel.rep_coefficient(d2);
    for c in 0..dim {
        coords[i * dim + c] -= alpha * kernel.clip(coeff * diff[c]);
    }
}

/// One pass over all ordered pairs with positive weight. Each pair fires with
/// probability `mu_ij`; a fired pair pulls its head, then its tail, then
/// draws `m` uniform negatives that push the head (and, with `push_tail`, are
/// pushed back). Updates are applied in place as they happen.
#[allow(clippy::too_many_arguments)]
pub fn run_epoch(
    graph: &SimilarityGraph,
    embedding: &mut Embedding,
    kernel: &Kernel,
    config: &OptimizerConfig,
    epoch: usize,
    rng: &mut Rng,
    scratch: &mut EpochScratch,
    log: &mut EpochSampleLog,
) -> Result<()> {
    if graph.n() != embedding.len() {
        return Err(Error::Shape(format!("graph has {} nodes, embedding {}", graph.n(), embedding.len())));
    }
    let alpha = config.learning_rate(epoch);
    let dim = embedding.dim;
    let push_tail = config.push_tail;
    log.clear();
    log.m = config.m;
    scratch.diff.resize(dim, 0.0);
    let EpochScratch { pairs, negatives, diff } = scratch;
    let coords = &mut embedding.coords;
    sample_epoch_with(graph, config.m, config.edge_order, rng, pairs, negatives, |i, j, negs| {
        attract(coords, dim, i, j, kernel, alpha, diff);
        attract(coords, dim, j, i, kernel, alpha, diff);
        for &s in negs {
            repel(coords, dim, i, s, kernel, alpha, diff);
            if push_tail {
                repel(coords, dim, s, i, kernel, alpha, diff);
            }
        }
        log.edges.push((i, j));
        log.negatives.extend_from_slice(negs);
    });
    match embedding.first_non_finite() {
        Some(point) => Err(Error::NonFinite { point, epoch }),
        None => Ok(()),
    }
}

/// Sum over one epoch's events of the per-event gradients, all evaluated at
/// the same (frozen) embedding. Its mean over epochs estimates
/// [`expected_gradient`].
pub fn realized_gradient(log: &EpochSampleLog, embedding: &Embedding, kernel: &Kernel, push_tail: bool) -> Vec<f64> {
    let dim = embedding.dim;
    let mut grad = vec![0.0; embedding.coords.len()];
    let mut add = |target: usize, g: Vec<f64>| {
        for (acc, v) in grad[target * dim..(target + 1) * dim].iter_mut().zip(g) {
            *acc += v;
        }
    };
    for &(i, j) in &log.edges {
        add(i, kernel.grad_attr(embedding.point(i), embedding.point(j)));
        add(j, kernel.grad_attr(embedding.point(j), embedding.point(i)));
    }
    for (i, s) in log.negative_pairs() {
        add(i, kernel.grad_rep(embedding.point(i), embedding.point(s)));
        if push_tail {
            add(s, kernel.grad_rep(embedding.point(s), embedding.point(i)));
        }
    }
    grad
}

/// Expected per-epoch update direction of point `i` (the quantity the
/// optimizer subtracts, per unit learning rate):
///
/// `sum_j 2 mu_ij grad_attr(i, j) + w_ij grad_rep(i, j)`
///
/// with `w_ij = d_i m / n`, or `(d_i + d_j) m / n` when `push_tail` is set.
/// Gradients are unclipped; the kernel's `eps_rep` still applies.
pub fn expected_gradient(
    graph: &SimilarityGraph,
    embedding: &Embedding,
    kernel: &Kernel,
    m: usize,
    push_tail: bool,
    i: usize,
) -> Vec<f64> {
    let n = graph.n();
    let dim = embedding.dim;
    let ei = embedding.point(i);
    let mut g = vec![0.0; dim];
    let mut accumulate = |j: usize, coeff: f64| {
        for (c, gc) in g.iter_mut().enumerate() {
            *gc += coeff * (ei[c] - embedding.point(j)[c]);
        }
    };
    for (j, mu) in graph.row(i) {
        accumulate(j, 2.0 * mu * kernel.attr_coefficient(embedding.sq_dist(i, j)));
    }
    let scale = m as f64 / n as f64;
    let di = graph.degree(i);
    for s in (0..n).filter(|&s| s != i) {
        let w = if push_tail { (di + graph.degree(s)) * scale } else { di * scale };
        accumulate(s, w * kernel.rep_coefficient(embedding.sq_dist(i, s)));
    }
    g
}

pub fn expected_gradient_all(
    graph: &SimilarityGraph,
    embedding: &Embedding,
    kernel: &Kernel,
    m: usize,
    push_tail: bool,
) -> Vec<f64> {
    (0..graph.n())
        .flat_map(|i| expected_gradient(graph, embedding, kernel, m, push_tail, i))
        .collect()
}

pub fn init_embedding(data: &Dataset, config: &OptimizerConfig) -> Result<Embedding> {
    let d = config.dim;
    match config.init {
        Init::Data => {
            if data.dim() != d {
                return Err(Error::Shape(format!(
                    "data initialization needs input dimension {} to equal embedding dimension {d}",
                    data.dim()
                )));
            }
            Ok(Embedding::from(data))
        }
        Init::Pca => pca(data, d),
        Init::Random => {
            let mut rng = rng::stream(config.seed, Stream::Init);
            let coords = (0..data.len() * d).map(|_| rng.random_range(-10.0..=10.0)).collect();
            Embedding::new(d, coords)
        }
    }
}

/// Scores on the top `d` principal axes. Each axis is signed so that its
/// largest-magnitude loading is positive.
pub fn pca(data: &Dataset, d: usize) -> Result<Embedding> {
    let (n, dim) = (data.len(), data.dim());
    if d > dim {
        return Err(Error::Shape(format!("cannot take {d} principal components of {dim}-dimensional data")));
    }
    let mut mean = vec![0.0; dim];
    for p in data.rows() {
        mean.iter_mut().zip(p).for_each(|(m, x)| *m += x / n as f64);
    }
    let centered = DMatrix::from_fn(n, dim, |r, c| data.point(r)[c] - mean[c]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0).max(1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut axes = DMatrix::zeros(dim, d);
    for (out_col, &src) in order.iter().take(d).enumerate() {
        let mut v = eig.eigenvectors.column(src).clone_owned();
        let lead = (0..dim).fold(0, |best, r| if v[r].abs() > v[best].abs() { r } else { best });
        if v[lead] < 0.0 {
            v = -v;
        }
        axes.set_column(out_col, &v);
    }
    let scores = centered * axes;
    let coords = (0..n).flat_map(|r| (0..d).map(move |c| (r, c))).map(|(r, c)| scores[(r, c)]).collect();
    Embedding::new(d, coords)
}

/// Final embedding plus loss records (the first record is the initial
/// embedding, with zero actual loss).
#[derive(Clone, Debug)]
pub struct OptimizeResult {
    pub initial: Embedding,
    pub embedding: Embedding,
    pub records: Vec<LossRecord>,
}

pub fn optimize(graph: &SimilarityGraph, data: &Dataset, kernel: &Kernel, config: &OptimizerConfig) -> Result<OptimizeResult> {
    let initial = init_embedding(data, config)?;
    optimize_from(graph, initial, kernel, config, |_, _| Ok(()))
}

/// Runs all epochs from a given start. `observer(epoch, embedding)` is called
/// after every epoch (1-based) and may abort the run.
pub fn optimize_from(
    graph: &SimilarityGraph,
    initial: Embedding,
    kernel: &Kernel,
    config: &OptimizerConfig,
    mut observer: impl FnMut(usize, &Embedding) -> Result<()>,
) -> Result<OptimizeResult> {
    config.validate()?;
    kernel.validate()?;
    let mut rng = rng::stream(config.seed, Stream::Optimizer);
    let mut embedding = initial.clone();
    let mut scratch = EpochScratch::default();
    let mut log = EpochSampleLog::default();
    let loss_every = config.loss_every.max(1);
    let mut records = vec![losses::loss_record(0, graph, &embedding, kernel, config.m, None, LogMode::Clamped)];
    for t in 0..config.n_epochs {
        run_epoch(graph, &mut embedding, kernel, config, t, &mut rng, &mut scratch, &mut log)?;
        let epoch = t + 1;
        if epoch % loss_every == 0 || epoch == config.n_epochs {
            records.push(losses::loss_record(epoch, graph, &embedding, kernel, config.m, Some(&log), LogMode::Clamped));
        }
        observer(epoch, &embedding)?;
    }
    Ok(OptimizeResult {
        initial,
        embedding,
        records,
    })
}
