//! Monte-Carlo checks of the sampling schemes against their closed forms.

use umap_effective::datagen::gen_ring;
use umap_effective::kernel::Kernel;
use umap_effective::losses::{self, PairSubset};
use umap_effective::optimizer::{self, Embedding, EpochSampleLog, OptimizerConfig};
use umap_effective::pumap::{self, BatchSimConfig, McExtras, PairSampler};
use umap_effective::rng::{self, Stream};
use umap_effective::simgraph::{self, Metric, SimilarityGraph};

fn small_ring_graph(n: usize, k: usize) -> (SimilarityGraph, Embedding) {
    let data = gen_ring(n, 4.0, 0.25, 0).unwrap();
    let g = simgraph::build_umap_graph(&data, k, Metric::Euclidean).unwrap().graph;
    (g, Embedding::from(&data))
}

fn realized_matches_expected(push_tail: bool) {
    let (g, emb) = small_ring_graph(30, 5);
    let k = Kernel::default().unguarded();
    let m = 5;
    let epochs = 20_000;
    let dim = emb.len() * 2;
    let mut sum = vec![0.0; dim];
    let mut sumsq = vec![0.0; dim];
    let mut rng = rng::stream(7, Stream::Optimizer);
    let mut log = EpochSampleLog::default();
    for _ in 0..epochs {
        optimizer::sample_epoch(&g, m, Default::default(), &mut rng, &mut log);
        let grad = optimizer::realized_gradient(&log, &emb, &k, push_tail);
        for c in 0..dim {
            sum[c] += grad[c];
            sumsq[c] += grad[c] * grad[c];
        }
    }
    let expected = optimizer::expected_gradient_all(&g, &emb, &k, m, push_tail);
    let t = epochs as f64;
    for c in 0..dim {
        let mean = sum[c] / t;
        let se = ((sumsq[c] / t - mean * mean) * t / (t - 1.0) / t).sqrt();
        let z = (mean - expected[c]).abs() / se;
        assert!(z <= 3.0, "component {c}: mean {mean} expected {} (z {z:.2})", expected[c]);
    }
}

#[test]
fn realized_gradient_mean_is_expected_gradient() {
    realized_matches_expected(false);
}

#[test]
fn realized_gradient_mean_with_tail_push() {
    realized_matches_expected(true);
}

/// Hand-built 3-point instance: the asymmetry of the cross partials equals
/// the degree gap times the Hessian block of the repulsive term.
#[test]
fn asymmetry_matches_degree_gap() {
    let g = SimilarityGraph::from_edges(3, [(0, 1, 1.0), (0, 2, 1.0)]).unwrap();
    let emb = Embedding::new(2, vec![0.0, 0.0, 1.0, 0.3, -0.4, 1.1]).unwrap();
    let k = Kernel::default().unguarded();
    let (m, n) = (5.0, 3.0);
    let measured = losses::cross_partial_asymmetry(&g, &emb, &k, 5, false, 0, 1).unwrap();

    // Block d/de_1 of c(r2) (e_0 - e_1) with c the repulsive coefficient:
    // -c I - 2 c'(r2) x x^T, where x = e_0 - e_1.
    let (a, b) = (k.a, k.b);
    let x = [-1.0, -0.3];
    let r2: f64 = x[0] * x[0] + x[1] * x[1];
    let c = |s: f64| -2.0 * b / (s * (1.0 + a * s.powf(b)));
    let h = 1e-6;
    let dc = (c(r2 + h) - c(r2 - h)) / (2.0 * h);
    let mut worst: f64 = 0.0;
    for p in 0..2 {
        for q in 0..2 {
            let entry = -c(r2) * f64::from(u8::from(p == q)) - 2.0 * dc * x[p] * x[q];
            worst = worst.max(entry.abs());
        }
    }
    let predicted = (2.0 - 1.0) * m / n * worst;
    assert!((measured - predicted).abs() < 1e-4 * predicted, "{measured} vs {predicted}");

    let balanced = SimilarityGraph::from_edges(2, [(0, 1, 0.8)]).unwrap();
    let two = Embedding::new(2, vec![0.0, 0.0, 0.7, -0.2]).unwrap();
    assert!(losses::cross_partial_asymmetry(&balanced, &two, &k, 5, false, 0, 1).unwrap() <= 1e-6);
}

#[test]
fn categorical_batch_frequencies() {
    let g = SimilarityGraph::from_edges(4, [(0, 1, 1.0), (1, 2, 0.5), (2, 3, 0.2), (0, 3, 0.05)]).unwrap();
    let sampler = PairSampler::new(&g).unwrap();
    let mut rng = rng::stream(3, Stream::BatchSim);
    let draws = 100_000;
    let mut counts = [[0u32; 4]; 4];
    for _ in 0..draws {
        let (i, j) = sampler.sample(&mut rng);
        counts[i][j] += 1;
    }
    for i in 0..4 {
        for j in 0..4 {
            let p = g.weight(i, j) / (2.0 * g.mu_e());
            let freq = counts[i][j] as f64 / draws as f64;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            if p == 0.0 {
                assert_eq!(counts[i][j], 0);
            } else {
                assert!((freq - p).abs() <= 3.0 * se, "({i},{j}) {freq} vs {p}");
            }
        }
    }
}

#[test]
fn equal_pairs_share_the_batch() {
    let g = SimilarityGraph::from_edges(2, [(0, 1, 0.3)]).unwrap();
    let cfg = BatchSimConfig {
        batch_size: 2,
        m: 1,
        trials: 1,
        seed: 0,
    };
    assert_eq!(pumap::expected_batch_count(&g, cfg.batch_size, 0, 1), 1.0);
    assert_eq!(pumap::expected_batch_count(&g, cfg.batch_size, 1, 0), 1.0);
}

#[test]
fn batch_count_covariance() {
    let (g, _) = small_ring_graph(20, 5);
    let x = g.ordered_pairs().next().map(|(i, j, _)| (i, j)).unwrap();
    let y = g.ordered_pairs().nth(7).map(|(i, j, _)| (i, j)).unwrap();
    let cfg = BatchSimConfig {
        batch_size: 32,
        m: 5,
        trials: 20_000,
        seed: 0,
    };
    let est = pumap::mc_expectations(&g, &cfg, McExtras {
        embedding: None,
        covariance: Some((x, y)),
    })
    .unwrap();
    let cov = est.covariance.unwrap();
    let expected = pumap::expected_batch_covariance(&g, cfg.batch_size, x, y);
    assert!(cov.mean < 0.0 && expected < 0.0);
    assert!(cov.z_score(expected) <= 3.0, "{cov:?} vs {expected}");
    assert_eq!(est.conservation_failures, 0);
}

#[test]
fn low_precision_runs_still_complete() {
    let (g, emb) = small_ring_graph(20, 5);
    let k = Kernel::default();
    let cfg = BatchSimConfig {
        batch_size: 2,
        m: 3,
        trials: 10,
        seed: 1,
    };
    let est = pumap::mc_expectations(&g, &cfg, McExtras {
        embedding: Some((&emb, &k)),
        covariance: None,
    })
    .unwrap();
    assert_eq!(est.trials, 10);
    let check = pumap::check_estimates(&g, &cfg, &est, Some((&emb, &k))).unwrap();
    assert!(check.loss_exact.unwrap().is_finite());
}

/// After optimization the low-dimensional similarities track the targets
/// more closely than the input similarities.
#[test]
fn embedding_similarities_follow_targets() {
    let data = gen_ring(300, 4.0, 0.25, 0).unwrap();
    let g = simgraph::build_umap_graph(&data, 15, Metric::Euclidean).unwrap().graph;
    let k = Kernel::default();
    let cfg = OptimizerConfig {
        n_epochs: 300,
        loss_every: 300,
        ..Default::default()
    };
    let run = optimizer::optimize(&g, &data, &k, &cfg).unwrap();
    let t = losses::target_similarities(&g, cfg.m);
    let (mut near_target, mut near_mu) = (0, 0);
    for e in g.edges() {
        let nu = k.phi_sq(run.embedding.sq_dist(e.i, e.j));
        near_target += usize::from((nu - t.get(e.i, e.j)).abs() <= 0.1);
        near_mu += usize::from((nu - e.mu).abs() <= 0.1);
    }
    assert!(near_target > near_mu, "{near_target} vs {near_mu}");
    let h = losses::similarity_histograms(&g, &t, &run.embedding, &k, 10, PairSubset::PositiveMu).unwrap();
    assert_eq!(h.count_nu.iter().sum::<u64>() as usize, g.edges().len());
}

#[test]
fn binarized_positive_histogram_is_a_spike() {
    let (g, emb) = small_ring_graph(60, 10);
    let bin = simgraph::perturb(&g, simgraph::Perturbation::Binarize, 0, 500).unwrap();
    let t = losses::target_similarities(&bin, 5);
    let h = losses::similarity_histograms(&bin, &t, &emb, &Kernel::default(), 20, PairSubset::PositiveMu).unwrap();
    assert_eq!(h.count_mu[19], bin.edges().len() as u64);
    assert_eq!(h.count_mu.iter().sum::<u64>(), h.count_mu[19]);
}

#[test]
fn effective_loss_without_negatives_matches_purported_attraction() {
    let (g, emb) = small_ring_graph(80, 10);
    let k = Kernel::default();
    let eff = losses::effective_loss(&g, &emb, &k, 0).unwrap();
    let pur = losses::purported_loss(&g, &emb, &k).unwrap();
    assert_eq!(eff.rep, 0.0);
    assert_eq!(eff.attr, pur.attr);
    let stats = losses::repulsion_weight_stats(&g, 5);
    assert!(stats.max_rep_weight > 0.0 && stats.max_rep_weight < 1.0);
    assert!(stats.mean_one_minus_mu > 0.8);
}
