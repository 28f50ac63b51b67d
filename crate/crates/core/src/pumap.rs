//! Monte-Carlo model of the batch sampler used by parametric UMAP: edges are
//! drawn into a batch proportionally to their weight and negatives are formed
//! by permuting the batch's tails. The embedding is a fixed lookup table.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::losses::LogMode;
use crate::optimizer::Embedding;
use crate::rng::{self, Rng, Stream};
use crate::simgraph::SimilarityGraph;

/// Trials are split into this many independently seeded chunks, so results do
/// not depend on the thread count.
const CHUNKS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchSimConfig {
    /// Edges per batch (unrelated to the kernel's shape parameter `b`).
    pub batch_size: usize,
    /// Negatives per batch edge.
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for BatchSimConfig {
    fn default() -> Self {
        BatchSimConfig {
            batch_size: 32,
            m: 5,
            trials: 20_000,
            seed: 0,
        }
    }
}

impl BatchSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidParameter(format!("batch size {} must be >= 2", self.batch_size)));
        }
        if self.m < 1 {
            return Err(Error::InvalidParameter("m must be >= 1".into()));
        }
        if self.trials < 1 {
            return Err(Error::InvalidParameter("trials must be >= 1".into()));
        }
        Ok(())
    }
}

/// Categorical distribution over ordered pairs `(i, j)` with probability
/// `mu_ij / (2 mu(E))`.
#[derive(Clone, Debug)]
pub struct PairSampler {
    pairs: Vec<(usize, usize)>,
    index: WeightedIndex<f64>,
}

impl PairSampler {
    pub fn new(graph: &SimilarityGraph) -> Result<Self> {
        let (pairs, weights): (Vec<_>, Vec<_>) = graph.ordered_pairs().map(|(i, j, mu)| ((i, j), mu)).unzip();
        if pairs.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let index = WeightedIndex::new(weights).map_err(|_| Error::EmptyGraph)?;
        Ok(PairSampler { pairs, index })
    }

    pub fn sample(&self, rng: &mut Rng) -> (usize, usize) {
        self.pairs[self.index.sample(rng)]
    }
}

/// `b` independent edge draws, as parallel head and tail lists.
pub fn assemble_batch(sampler: &PairSampler, batch_size: usize, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    (0..batch_size).map(|_| sampler.sample(rng)).unzip()
}

/// Repeats heads and tails `m` times, shuffles the repeated tails and pairs
/// them up position by position.
pub fn negative_pairs(heads: &[usize], tails: &[usize], m: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
    let mut shuffled: Vec<usize> = (0..m).flat_map(|_| tails.iter().copied()).collect();
    shuffled.shuffle(rng);
    (0..m).flat_map(|_| heads.iter().copied()).zip(shuffled).collect()
}

/// `-(sum_batch log phi + sum_negatives log(1 - phi)) / ((m + 1) b)`.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    heads: &[usize],
    tails: &[usize],
    negatives: &[(usize, usize)],
    embedding: &Embedding,
    kernel: &Kernel,
    m: usize,
    batch_size: usize,
    mode: LogMode,
) -> f64 {
    let phi = |i: usize, j: usize| kernel.phi_sq(embedding.sq_dist(i, j));
    let pos: f64 = heads.iter().zip(tails).map(|(&i, &j)| mode.log(phi(i, j))).sum();
    let neg: f64 = negatives.iter().map(|&(i, j)| mode.log(1.0 - phi(i, j))).sum();
    -(pos + neg) / ((m + 1) as f64 * batch_size as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    /// Standard error of the mean.
    pub se: f64,
}

impl Estimate {
    fn from_sums(sum: f64, sumsq: f64, count: usize) -> Self {
        let t = count as f64;
        let mean = sum / t;
        let var = if count > 1 {
            ((sumsq - t * mean * mean) / (t - 1.0)).max(0.0)
        } else {
            0.0
        };
        Estimate {
            mean,
            se: (var / t).sqrt(),
        }
    }

    /// `|mean - reference| / se`; zero if both agree exactly, infinite if they
    /// differ while the estimate has no spread.
    pub fn z_score(&self, reference: f64) -> f64 {
        let diff = (self.mean - reference).abs();
        if diff <= 1e-12 * reference.abs().max(1.0) {
            0.0
        } else if self.se == 0.0 {
            f64::INFINITY
        } else {
            diff / self.se
        }
    }
}

/// Monte-Carlo means of the per-trial pair counts. Entries are row-major over
/// all ordered pairs `(i, j)`, diagonal included.
#[derive(Clone, Debug)]
pub struct PairCountEstimates {
    pub n: usize,
    pub trials: usize,
    pub p: Vec<Estimate>,
    pub neg: Vec<Estimate>,
    /// Mean batch loss, when an embedding was supplied.
    pub loss: Option<Estimate>,
    /// `Cov(P_x, P_y)` for the requested pair of ordered pairs.
    pub covariance: Option<Estimate>,
    /// Trials where the batch or negative counts did not add up to `b` and
    /// `m b`.
    pub conservation_failures: usize,
}

impl PairCountEstimates {
    pub fn p(&self, i: usize, j: usize) -> Estimate {
        self.p[i * self.n + j]
    }

    pub fn neg(&self, i: usize, j: usize) -> Estimate {
        self.neg[i * self.n + j]
    }
}

/// Optional extras for [`mc_expectations`].
#[derive(Clone, Copy, Debug, Default)]
pub struct McExtras<'a> {
    pub embedding: Option<(&'a Embedding, &'a Kernel)>,
    pub covariance: Option<((usize, usize), (usize, usize))>,
}

#[derive(Clone)]
struct Accumulator {
    p: Vec<f64>,
    p2: Vec<f64>,
    neg: Vec<f64>,
    neg2: Vec<f64>,
    loss: [f64; 2],
    cross: [f64; 4],
    failures: usize,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Accumulator {
            p: vec![0.0; n * n],
            p2: vec![0.0; n * n],
            neg: vec![0.0; n * n],
            neg2: vec![0.0; n * n],
            loss: [0.0; 2],
            cross: [0.0; 4],
            failures: 0,
        }
    }

    fn merge(&mut self, other: &Accumulator) {
        let add = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.p, &other.p);
        add(&mut self.p2, &other.p2);
        add(&mut self.neg, &other.neg);
        add(&mut self.neg2, &other.neg2);
        for k in 0..2 {
            self.loss[k] += other.loss[k];
        }
        for k in 0..4 {
            self.cross[k] += other.cross[k];
        }
        self.failures += other.failures;
    }
}

pub fn mc_expectations(graph: &SimilarityGraph, config: &BatchSimConfig, extras: McExtras<'_>) -> Result<PairCountEstimates> {
    config.validate()?;
    let n = graph.n();
    if let Some((emb, _)) = extras.embedding {
        if emb.len() != n {
            return Err(Error::Shape(format!("graph has {n} nodes, embedding {}", emb.len())));
        }
    }
    if let Some(((a, b), (c, d))) = extras.covariance {
        if [a, b, c, d].iter().any(|&x| x >= n) {
            return Err(Error::InvalidParameter("covariance pair out of range".into()));
        }
    }
    let sampler = PairSampler::new(graph)?;
    let (bsz, m) = (config.batch_size, config.m);
    let chunks = CHUNKS.min(config.trials);
    let per_chunk = |c: usize| config.trials / chunks + usize::from(c < config.trials % chunks);

    let partials: Vec<Accumulator> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::sub_stream(config.seed, Stream::BatchSim, c as u64);
            let mut acc = Accumulator::new(n);
            let mut p_counts = vec![0u32; n * n];
            let mut n_counts = vec![0u32; n * n];
            for _ in 0..per_chunk(c) {
                let (heads, tails) = assemble_batch(&sampler, bsz, &mut rng);
                let negs = negative_pairs(&heads, &tails, m, &mut rng);
                p_counts.fill(0);
                n_counts.fill(0);
                for (&h, &t) in heads.iter().zip(&tails) {
                    p_counts[h * n + t] += 1;
                }
                for &(h, t) in &negs {
                    n_counts[h * n + t] += 1;
                }
                let total_p: u64 = p_counts.iter().map(|&x| x as u64).sum();
                let total_n: u64 = n_counts.iter().map(|&x| x as u64).sum();
                if total_p != bsz as u64 || total_n != (m * bsz) as u64 {
                    acc.failures += 1;
                }
                for idx in 0..n * n {
                    let (x, y) = (p_counts[idx] as f64, n_counts[idx] as f64);
                    acc.p[idx] += x;
                    acc.p2[idx] += x * x;
                    acc.neg[idx] += y;
                    acc.neg2[idx] += y * y;
                }
                if let Some((emb, kernel)) = extras.embedding {
                    let l = batch_loss(&heads, &tails, &negs, emb, kernel, m, bsz, LogMode::Clamped);
                    acc.loss[0] += l;
                    acc.loss[1] += l * l;
                }
                if let Some(((a, b), (c2, d))) = extras.covariance {
                    let x = p_counts[a * n + b] as f64;
                    let y = p_counts[c2 * n + d] as f64;
                    acc.cross[0] += x * y;
                    acc.cross[1] += (x * y) * (x * y);
                }
            }
            acc
        })
        .collect();

    let mut total = Accumulator::new(n);
    for part in &partials {
        total.merge(part);
    }
    let t = config.trials;
    let p: Vec<Estimate> = (0..n * n).map(|k| Estimate::from_sums(total.p[k], total.p2[k], t)).collect();
    let neg: Vec<Estimate> = (0..n * n).map(|k| Estimate::from_sums(total.neg[k], total.neg2[k], t)).collect();
    let covariance = extras.covariance.map(|((a, b), (c, d))| {
        let prod = Estimate::from_sums(total.cross[0], total.cross[1], t);
        Estimate {
            mean: prod.mean - p[a * n + b].mean * p[c * n + d].mean,
            se: prod.se,
        }
    });
    Ok(PairCountEstimates {
        n,
        trials: t,
        p,
        neg,
        loss: extras.embedding.map(|_| Estimate::from_sums(total.loss[0], total.loss[1], t)),
        covariance,
        conservation_failures: total.failures,
    })
}

/// `E(P_ij) = b mu_ij / (2 mu(E))`.
pub fn expected_batch_count(graph: &SimilarityGraph, batch_size: usize, i: usize, j: usize) -> f64 {
    batch_size as f64 * graph.weight(i, j) / (2.0 * graph.mu_e())
}

/// Negative-pair expectation with only the distinct-edge term,
/// `m (b - 1) d_i d_j / (4 mu(E)^2)`.
pub fn expected_negative_count(graph: &SimilarityGraph, config: &BatchSimConfig, i: usize, j: usize) -> f64 {
    let mu_e = graph.mu_e();
    config.m as f64 * (config.batch_size as f64 - 1.0) * graph.degree(i) * graph.degree(j) / (4.0 * mu_e * mu_e)
}

/// Full negative-pair expectation. A batch edge can be paired with its own
/// repeated tail, which adds `m mu_ij / (2 mu(E))` to
/// [`expected_negative_count`].
pub fn expected_negative_count_exact(graph: &SimilarityGraph, config: &BatchSimConfig, i: usize, j: usize) -> f64 {
    expected_negative_count(graph, config, i, j) + config.m as f64 * graph.weight(i, j) / (2.0 * graph.mu_e())
}

/// Covariance of two distinct ordered-pair batch counts under the
/// multinomial draw: `-b p_x p_y`.
pub fn expected_batch_covariance(graph: &SimilarityGraph, batch_size: usize, x: (usize, usize), y: (usize, usize)) -> f64 {
    let two_mu_e = 2.0 * graph.mu_e();
    -(batch_size as f64) * graph.weight(x.0, x.1) / two_mu_e * graph.weight(y.0, y.1) / two_mu_e
}

fn pumap_loss_parts(graph: &SimilarityGraph, embedding: &Embedding, kernel: &Kernel, mode: LogMode) -> Result<[f64; 3]> {
    let n = graph.n();
    if embedding.len() != n {
        return Err(Error::Shape(format!("graph has {n} nodes, embedding {}", embedding.len())));
    }
    // [sum mu log phi, sum d_i d_j log(1 - phi), sum mu log(1 - phi)] over all
    // ordered pairs, diagonal included.
    let d = graph.degrees();
    let rows: Vec<[f64; 3]> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = [0.0; 3];
            for j in 0..n {
                let phi = kernel.phi_sq(embedding.sq_dist(i, j));
                let mu = graph.weight(i, j);
                let log_rep = mode.log(1.0 - phi);
                if mu > 0.0 {
                    acc[0] += mu * mode.log(phi);
                    acc[2] += mu * log_rep;
                }
                acc[1] += d[i] * d[j] * log_rep;
            }
            acc
        })
        .collect();
    Ok(rows.iter().fold([0.0; 3], |mut a, r| {
        (0..3).for_each(|k| a[k] += r[k]);
        a
    }))
}

/// Expected batch loss keeping only the distinct-edge negative term:
/// `-(sum mu log phi + m (b-1)/b d_i d_j / (2 mu(E)) log(1 - phi)) / (2 (m+1) mu(E))`
/// over all ordered pairs, with clamped logs.
pub fn pumap_effective_loss(graph: &SimilarityGraph, embedding: &Embedding, kernel: &Kernel, config: &BatchSimConfig) -> Result<f64> {
    let [attr, rep, _] = pumap_loss_parts(graph, embedding, kernel, LogMode::Clamped)?;
    let mu_e = graph.mu_e();
    let (m, b) = (config.m as f64, config.batch_size as f64);
    Ok(-(attr + m * (b - 1.0) / b / (2.0 * mu_e) * rep) / (2.0 * (m + 1.0) * mu_e))
}

/// Expected batch loss including the negatives formed with an edge's own
/// tail.
pub fn pumap_effective_loss_exact(
    graph: &SimilarityGraph,
    embedding: &Embedding,
    kernel: &Kernel,
    config: &BatchSimConfig,
) -> Result<f64> {
    let [_, _, self_rep] = pumap_loss_parts(graph, embedding, kernel, LogMode::Clamped)?;
    let mu_e = graph.mu_e();
    let (m, b) = (config.m as f64, config.batch_size as f64);
    let extra = -m * self_rep / (2.0 * (m + 1.0) * b * mu_e);
    Ok(pumap_effective_loss(graph, embedding, kernel, config)? + extra)
}

/// `sum_{i,j} m (b-1)/b d_i d_j / (2 mu(E))`, summed pair by pair.
pub fn pumap_total_repulsive_weight(graph: &SimilarityGraph, config: &BatchSimConfig) -> f64 {
    let d = graph.degrees();
    let (m, b) = (config.m as f64, config.batch_size as f64);
    let scale = m * (b - 1.0) / b / (2.0 * graph.mu_e());
    d.iter().map(|&di| d.iter().map(|&dj| scale * di * dj).sum::<f64>()).sum()
}

/// Which closed form for the negative-pair counts a check is held to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeForm {
    /// Distinct-edge term only.
    DistinctEdge,
    /// Including an edge's pairing with its own tail.
    #[default]
    Exact,
}

impl std::str::FromStr for NegativeForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distinct" | "distinct_edge" => Ok(NegativeForm::DistinctEdge),
            "exact" => Ok(NegativeForm::Exact),
            other => Err(Error::InvalidParameter(format!("unknown closed form {other:?}"))),
        }
    }
}

/// Largest z-scores of the Monte-Carlo estimates against the closed forms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PumapCheck {
    pub max_z_p: f64,
    pub max_z_neg_distinct: f64,
    pub max_z_neg_exact: f64,
    pub loss_distinct: Option<f64>,
    pub loss_exact: Option<f64>,
    pub z_loss_distinct: Option<f64>,
    pub z_loss_exact: Option<f64>,
}

impl PumapCheck {
    pub fn max_z(&self, form: NegativeForm) -> f64 {
        let (neg, loss) = match form {
            NegativeForm::DistinctEdge => (self.max_z_neg_distinct, self.z_loss_distinct),
            NegativeForm::Exact => (self.max_z_neg_exact, self.z_loss_exact),
        };
        self.max_z_p.max(neg).max(loss.unwrap_or(0.0))
    }
}

pub fn check_estimates(
    graph: &SimilarityGraph,
    config: &BatchSimConfig,
    est: &PairCountEstimates,
    embedding: Option<(&Embedding, &Kernel)>,
) -> Result<PumapCheck> {
    let n = graph.n();
    let mut check = PumapCheck {
        max_z_p: 0.0,
        max_z_neg_distinct: 0.0,
        max_z_neg_exact: 0.0,
        loss_distinct: None,
        loss_exact: None,
        z_loss_distinct: None,
        z_loss_exact: None,
    };
    for i in 0..n {
        for j in 0..n {
            check.max_z_p = check.max_z_p.max(est.p(i, j).z_score(expected_batch_count(graph, config.batch_size, i, j)));
            let neg = est.neg(i, j);
            check.max_z_neg_distinct = check.max_z_neg_distinct.max(neg.z_score(expected_negative_count(graph, config, i, j)));
            check.max_z_neg_exact = check.max_z_neg_exact.max(neg.z_score(expected_negative_count_exact(graph, config, i, j)));
        }
    }
    if let (Some((emb, kernel)), Some(loss)) = (embedding, est.loss) {
        let distinct = pumap_effective_loss(graph, emb, kernel, config)?;
        let exact = pumap_effective_loss_exact(graph, emb, kernel, config)?;
        check.loss_distinct = Some(distinct);
        check.loss_exact = Some(exact);
        check.z_loss_distinct = Some(loss.z_score(distinct));
        check.z_loss_exact = Some(loss.z_score(exact));
    }
    Ok(check)
}

/// Writes `i,j,mu,cf_EP,mc_EP,se_EP,cf_EN,mc_EN,se_EN` for every ordered pair,
/// with the distinct-edge closed form in `cf_EN`.
pub fn write_report(graph: &SimilarityGraph, config: &BatchSimConfig, est: &PairCountEstimates, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "i,j,mu,cf_EP,mc_EP,se_EP,cf_EN,mc_EN,se_EN")?;
    for i in 0..est.n {
        for j in 0..est.n {
            let (p, neg) = (est.p(i, j), est.neg(i, j));
            writeln!(
                out,
                "{i},{j},{},{},{},{},{},{},{}",
                graph.weight(i, j),
                expected_batch_count(graph, config.batch_size, i, j),
                p.mean,
                p.se,
                expected_negative_count(graph, config, i, j),
                neg.mean,
                neg.se
            )?;
        }
    }
    out.flush()
}
