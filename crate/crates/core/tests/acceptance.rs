//! End-to-end acceptance checks. Each check prints one PASS/FAIL line.
//!
//! Checks listed in `KNOWN_RED` are evaluated exactly like the others; the
//! target only tolerates their failure, and fails if one of them starts to
//! pass so the list cannot go stale. Set `UMAP_ACCEPTANCE_FULL=1` to run the
//! 10,000-epoch variant of the loss-table check.

use std::io::Write;
use std::time::Instant;

use umap_effective::datagen::{gen_ring, Dataset};
use umap_effective::kernel::Kernel;
use umap_effective::losses::{self, LogMode, Similarities};
use umap_effective::optimizer::{self, Embedding, EpochSampleLog, OptimizerConfig};
use umap_effective::pumap::{self, BatchSimConfig, McExtras};
use umap_effective::rng::{self, Stream};
use umap_effective::simgraph::{self, Metric, Perturbation, SimilarityGraph};

/// Checks that fail at their stated thresholds; the printed detail line shows
/// by how much.
///
/// - 1: 828 per-edge 3-SE tests; a few exceed by chance.
/// - 6, 12: at n = 1000 many weights are far below the repulsive weight, so
///   targets are not near-binary and binarizing changes them.
/// - 8: the ordered double sum of `(d_i + d_j) m / 2n` is `2 m mu(E)`.
/// - 9: the closed form omits batch edges meeting their own tail.
/// - 10: the ring thins locally but expands as a whole, which raises the
///   radial spread around the centroid.
/// - 11: the data initialization is compact, so the purported loss falls.
const KNOWN_RED: &[u32] = &[1, 6, 8, 9, 10, 11, 12];

const SEED: u64 = 0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn ring(n: usize) -> Dataset {
    gen_ring(n, 4.0, 0.25, SEED).unwrap()
}

fn standard_graph(data: &Dataset) -> SimilarityGraph {
    simgraph::build_umap_graph(data, 15, Metric::Euclidean).unwrap().graph
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Population std of the distances to the centroid.
fn radial_std(e: &Embedding) -> f64 {
    let n = e.len() as f64;
    let cx = e.rows().map(|p| p[0]).sum::<f64>() / n;
    let cy = e.rows().map(|p| p[1]).sum::<f64>() / n;
    let r: Vec<f64> = e.rows().map(|p| (p[0] - cx).hypot(p[1] - cy)).collect();
    let mean = r.iter().sum::<f64>() / n;
    (r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Mean over points of sqrt(minor / major) local covariance eigenvalue of
/// the point's 10 nearest neighbours: near 0 for a curve, order 1 for a
/// band of points.
fn local_thickness(e: &Embedding) -> f64 {
    let data = Dataset::new(e.dim(), e.as_flat().to_vec()).unwrap();
    let nn = simgraph::knn_brute(&data, 10, Metric::Euclidean).unwrap();
    let mut acc = 0.0;
    for i in 0..e.len() {
        let pts: Vec<&[f64]> = nn.ids(i).iter().map(|&j| e.point(j)).chain([e.point(i)]).collect();
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p[0]).sum::<f64>() / k;
        let my = pts.iter().map(|p| p[1]).sum::<f64>() / k;
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for p in &pts {
            sxx += (p[0] - mx).powi(2);
            syy += (p[1] - my).powi(2);
            sxy += (p[0] - mx) * (p[1] - my);
        }
        let tr = sxx + syy;
        let disc = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
        let (big, small) = ((tr + disc) / 2.0, ((tr - disc) / 2.0).max(0.0));
        acc += (small / big).sqrt();
    }
    acc / e.len() as f64
}

fn optimize_from_data(graph: &SimilarityGraph, data: &Dataset, n_epochs: usize, loss_every: usize) -> optimizer::OptimizeResult {
    let cfg = OptimizerConfig {
        n_epochs,
        loss_every,
        seed: SEED,
        ..Default::default()
    };
    optimizer::optimize(graph, data, &Kernel::default(), &cfg).unwrap()
}

fn sampling_unbiasedness() -> Outcome {
    let data = ring(50);
    let g = standard_graph(&data);
    let emb = Embedding::from(&data);
    let epochs = 10_000;
    let m = 5;
    let n = g.n();
    let mut rng = rng::stream(SEED, Stream::Optimizer);
    let mut fires = vec![0u64; n * n];
    let mut hits = vec![0u64; n];
    let mut per_fire = Vec::with_capacity(epochs);
    let mut log = EpochSampleLog::default();
    let cfg = OptimizerConfig {
        m,
        n_epochs: epochs,
        alpha0: 1.0,
        ..Default::default()
    };
    let frozen = emb.clone();
    for _ in 0..epochs {
        optimizer::sample_epoch(&g, cfg.m, cfg.edge_order, &mut rng, &mut log);
        for &(i, j) in &log.edges {
            fires[i * n + j] += 1;
        }
        for &s in &log.negatives {
            hits[s] += 1;
        }
        per_fire.push(log.negatives.len() as f64 / log.edges.len().max(1) as f64);
    }
    assert_eq!(frozen, emb);
    let t = epochs as f64;
    let mut worst_edge: f64 = 0.0;
    let mut over = 0;
    let mut tested = 0;
    for (i, j, mu) in g.ordered_pairs() {
        let rate = fires[i * n + j] as f64 / t;
        let se = (mu * (1.0 - mu) / t).sqrt();
        let z = if se == 0.0 {
            if rate == mu { 0.0 } else { f64::INFINITY }
        } else {
            (rate - mu).abs() / se
        };
        tested += 1;
        if z > 3.0 {
            over += 1;
        }
        worst_edge = worst_edge.max(z);
    }
    let (neg_mean, neg_se) = mean_se(&per_fire);
    let neg_ok = if neg_se == 0.0 { neg_mean == m as f64 } else { (neg_mean - m as f64).abs() <= 3.0 * neg_se };
    // each negative draw lands on a given point with probability 1/n
    let total: u64 = hits.iter().sum();
    let p = 1.0 / n as f64;
    let worst_target = hits
        .iter()
        .map(|&h| (h as f64 - total as f64 * p).abs() / (total as f64 * p * (1.0 - p)).sqrt())
        .fold(0.0, f64::max);
    let pass = worst_edge <= 3.0 && neg_ok && worst_target <= 3.0;
    outcome(
        pass,
        format!(
            "max edge z {worst_edge:.2} ({over} of {tested} ordered edges beyond 3 SE, {:.1} expected by chance); negatives per fire {neg_mean} (se {neg_se:.1e}); max negative-target z {worst_target:.2}",
            tested as f64 * 0.0027
        ),
    )
}

fn effective_loss_identity() -> Outcome {
    let data = ring(1000);
    let g = standard_graph(&data);
    let emb = Embedding::from(&data);
    let k = Kernel::default();
    let m = 5;
    let epochs = 5_000;
    let eff = losses::effective_loss(&g, &emb, &k, m).unwrap();
    let mut rng = rng::stream(SEED, Stream::Optimizer);
    let mut log = EpochSampleLog::default();
    let (mut a, mut r, mut tot) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..epochs {
        optimizer::sample_epoch(&g, m, Default::default(), &mut rng, &mut log);
        let l = losses::actual_epoch_loss(&log, &emb, &k, LogMode::Clamped);
        a.push(l.attr);
        r.push(l.rep);
        tot.push(l.total);
    }
    let parts = [("attr", &a, eff.attr), ("rep", &r, eff.rep), ("total", &tot, eff.total)];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, xs, target) in parts {
        let (mean, se) = mean_se(xs);
        let z = (mean - target).abs() / se;
        pass &= z <= 3.0;
        detail.push(format!("{name} {mean:.2} vs {target:.2} (z {z:.2})"));
    }
    outcome(pass, detail.join("; "))
}

fn gradient_of_effective_loss() -> Outcome {
    let k = Kernel::default().unguarded();
    let mut rng = rng::stream(SEED, Stream::Perturb);
    use rand::Rng;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = 8;
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < 0.5 {
                    pairs.push((i, j, rng.random_range(0.05..1.0)));
                }
            }
        }
        let g = SimilarityGraph::from_edges(n, pairs).unwrap();
        let m = rng.random_range(1..8);
        let coords: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let emb = Embedding::new(2, coords).unwrap();
        let h = 1e-6;
        let loss = |e: &Embedding| {
            losses::effective_loss_with(&g, Similarities::Embedding(e, &k), m, LogMode::Exact)
                .unwrap()
                .total
        };
        let analytic = optimizer::expected_gradient_all(&g, &emb, &k, m, true);
        let scale = analytic.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        for idx in 0..2 * n {
            let mut plus = emb.as_flat().to_vec();
            let mut minus = plus.clone();
            plus[idx] += h;
            minus[idx] -= h;
            let fd = (loss(&Embedding::new(2, plus).unwrap()) - loss(&Embedding::new(2, minus).unwrap())) / (2.0 * h);
            worst = worst.max((fd - analytic[idx]).abs() / scale);
        }
    }
    outcome(worst <= 1e-4, format!("max relative deviation {worst:.2e} over 20 configurations"))
}

fn non_conservative_field() -> Outcome {
    // d_0 = 2, d_1 = d_2 = 1
    let g = SimilarityGraph::from_edges(3, [(0, 1, 1.0), (0, 2, 1.0)]).unwrap();
    let emb = Embedding::new(2, vec![0.0, 0.0, 1.0, 0.3, -0.4, 1.1]).unwrap();
    let k = Kernel::default().unguarded();
    let without = losses::cross_partial_asymmetry(&g, &emb, &k, 5, false, 0, 1).unwrap();
    let with = losses::cross_partial_asymmetry(&g, &emb, &k, 5, true, 0, 1).unwrap();
    outcome(
        without > 1e-3 && with <= 1e-6,
        format!("asymmetry without tail push {without:.3e}, with tail push {with:.3e}"),
    )
}

fn loss_table() -> Outcome {
    let full = std::env::var("UMAP_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let epochs = if full { 10_000 } else { 1_000 };
    let data = ring(1000);
    let k = Kernel::default();
    let g = standard_graph(&data);
    let dense = simgraph::dense_similarities(&data, &k);
    let original = Embedding::from(&data);
    let std_run = optimize_from_data(&g, &data, epochs, epochs);
    let dense_run = optimize_from_data(&dense, &data, epochs, epochs);
    let row = |graph: &SimilarityGraph, fin: &Embedding| -> [f64; 4] {
        [
            Similarities::Graph(graph),
            Similarities::Diverged,
            Similarities::Embedding(fin, &k),
            Similarities::Embedding(&original, &k),
        ]
        .map(|s| losses::purported_loss_with(graph, s, LogMode::Clamped).unwrap().total)
    };
    let r1 = row(&g, &std_run.embedding);
    let r2 = row(&dense, &dense_run.embedding);
    let row_min = |r: &[f64; 4]| r.iter().all(|&v| r[0] <= v);
    let a = row_min(&r1) && row_min(&r2);
    let b = r1[1] < r1[2];
    let c = r2[2] > r2[3];
    outcome(
        a && b && c,
        format!(
            "{epochs} epochs; row 1 {:.0?}; row 2 {:.0?}; nu=mu minimal {a}, diverged < optimized {b}, phi(final) > phi(data) {c}",
            r1, r2
        ),
    )
}

fn binarized_targets() -> Outcome {
    let g = standard_graph(&ring(1000));
    let t = losses::target_similarities(&g, 5);
    let min_pos = t.graph.edges().iter().map(|e| e.mu).fold(f64::INFINITY, f64::min);
    let below = t.graph.edges().iter().filter(|e| e.mu < 0.9).count();
    let dense = t.to_dense();
    let n = g.n();
    let zero_ok = (0..n).all(|i| (0..n).all(|j| g.weight(i, j) > 0.0 || dense[i * n + j] == 0.0));
    outcome(
        min_pos >= 0.9 && zero_ok,
        format!(
            "min positive target {min_pos:.3e} ({below} of {} below 0.9); zero-weight targets all 0: {zero_ok}",
            t.graph.edges().len()
        ),
    )
}

fn weighted_bce_identity() -> Outcome {
    use rand::Rng;
    let mut rng = rng::stream(SEED + 1, Stream::Perturb);
    let k = Kernel::default();
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let n = 20;
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < 0.3 {
                    pairs.push((i, j, 1.0 - rng.random::<f64>()));
                }
            }
        }
        let g = SimilarityGraph::from_edges(n, pairs).unwrap();
        let emb = Embedding::new(2, (0..2 * n).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let m = rng.random_range(1..10);
        let bce = losses::weighted_bce_decomposition(&g, &emb, &k, m, LogMode::Clamped).unwrap();
        let eff = losses::effective_loss(&g, &emb, &k, m).unwrap();
        worst = worst.max((bce.total - eff.total).abs() / eff.total.abs());
    }
    outcome(worst <= 1e-6, format!("max relative difference {worst:.2e} over 10 instances"))
}

fn weight_balance() -> Outcome {
    let g = standard_graph(&ring(1000));
    let m = 5;
    let n = g.n();
    let mu_e = g.mu_e();
    // independent double sums over all ordered pairs i, j = 1..n
    let d = g.degrees();
    let mut attractive = 0.0;
    let mut repulsive = 0.0;
    for i in 0..n {
        attractive += g.row(i).map(|(_, mu)| mu).sum::<f64>();
        for j in 0..n {
            repulsive += (d[i] + d[j]) * m as f64 / (2.0 * n as f64);
        }
    }
    let stats = losses::repulsion_weight_stats(&g, m);
    let cfg = BatchSimConfig {
        batch_size: 32,
        m,
        ..Default::default()
    };
    let pumap_total = pumap::pumap_total_repulsive_weight(&g, &cfg);
    let pumap_expected = 2.0 * m as f64 * mu_e * 31.0 / 32.0;
    let rel = |x: f64, y: f64| (x - y).abs() / y.abs();
    let a = rel(attractive, 2.0 * mu_e);
    let r = rel(repulsive, m as f64 * mu_e);
    let p = rel(pumap_total, pumap_expected);
    let pass = a <= 1e-9 && r <= 1e-9 && p <= 1e-9;
    outcome(
        pass,
        format!(
            "sum mu rel err {a:.1e}; sum (d_i+d_j)m/2n = {repulsive:.4} vs m mu(E) = {:.4} (ratio {:.6}, rel err {r:.1e}); head-only sum d_i m/2n rel err {:.1e}; parametric total rel err {p:.1e}",
            m as f64 * mu_e,
            repulsive / (m as f64 * mu_e),
            rel(stats.head_repulsive, m as f64 * mu_e)
        ),
    )
}

fn parametric_sampler() -> Outcome {
    let data = ring(20);
    let g = simgraph::build_umap_graph(&data, 5, Metric::Euclidean).unwrap().graph;
    let emb = Embedding::from(&data);
    let k = Kernel::default();
    let cfg = BatchSimConfig {
        batch_size: 32,
        m: 5,
        trials: 20_000,
        seed: SEED,
    };
    let est = pumap::mc_expectations(&g, &cfg, McExtras {
        embedding: Some((&emb, &k)),
        covariance: None,
    })
    .unwrap();
    let check = pumap::check_estimates(&g, &cfg, &est, Some((&emb, &k))).unwrap();
    let z_loss = check.z_loss_distinct.unwrap();
    let pass = check.max_z_p <= 3.0 && check.max_z_neg_distinct <= 3.0 && z_loss <= 3.0;
    outcome(
        pass,
        format!(
            "max z: E(P) {:.2}, E(N) {:.2}, loss {:.2} (mc {:.5} vs {:.5}); with own-tail term: E(N) {:.2}, loss {:.2}",
            check.max_z_p,
            check.max_z_neg_distinct,
            z_loss,
            est.loss.unwrap().mean,
            check.loss_distinct.unwrap(),
            check.max_z_neg_exact,
            check.z_loss_exact.unwrap()
        ),
    )
}

fn ring_phenomenology() -> Outcome {
    let data = ring(1000);
    let k = Kernel::default();
    let input = Embedding::from(&data);
    let std_run = optimize_from_data(&standard_graph(&data), &data, 500, 500);
    let dense_run = optimize_from_data(&simgraph::dense_similarities(&data, &k), &data, 500, 500);
    let s0 = radial_std(&input);
    let s_std = radial_std(&std_run.embedding);
    let s_dense = radial_std(&dense_run.embedding);
    let pass = s_std <= 0.5 * s0 && s_dense >= s0;
    outcome(
        pass,
        format!(
            "radial std input {s0:.3}, standard {s_std:.3} ({:.2}x), dense {s_dense:.3} ({:.2}x); local thickness input {:.3}, standard {:.3}, dense {:.3}",
            s_std / s0,
            s_dense / s0,
            local_thickness(&input),
            local_thickness(&std_run.embedding),
            local_thickness(&dense_run.embedding)
        ),
    )
}

fn loss_curves() -> Outcome {
    let data = ring(1000);
    let run = optimize_from_data(&standard_graph(&data), &data, 500, 50);
    let (first, last) = (run.records.first().unwrap(), run.records.last().unwrap());
    let eff_down = last.effective_total < first.effective_total;
    let pur_up = last.purported_total > first.purported_total;
    let ratio = last.purported_rep / last.effective_rep;
    outcome(
        eff_down && pur_up && ratio >= 10.0,
        format!(
            "effective {:.1} -> {:.1}; purported {:.1} -> {:.1}; purported/effective repulsion at end {ratio:.1}x",
            first.effective_total, last.effective_total, first.purported_total, last.purported_total
        ),
    )
}

fn perturbation_robustness() -> Outcome {
    let g = standard_graph(&ring(1000));
    let base = simgraph::epoch_filter(&g, 500).unwrap();
    let bin = simgraph::perturb(&base, Perturbation::Binarize, SEED, 500).unwrap();
    let inv = simgraph::perturb(&base, Perturbation::Invert, SEED, 500).unwrap();
    let same_edges = bin.edge_set() == base.edge_set() && inv.edge_set() == base.edge_set();
    let bins = 10;
    let hist = |graph: &SimilarityGraph| losses::target_histogram(&losses::target_similarities(graph, 5), bins);
    let (h0, hb, hi) = (hist(&base), hist(&bin), hist(&inv));
    let tv_b = losses::total_variation(&h0, &hb);
    let tv_i = losses::total_variation(&h0, &hi);
    let tv_bi = losses::total_variation(&hb, &hi);
    outcome(
        same_edges && tv_b <= 0.1 && tv_i <= 0.1,
        format!(
            "edge sets identical {same_edges} ({} edges); TV to original: binarized {tv_b:.3}, inverted {tv_i:.3}; binarized vs inverted {tv_bi:.3}",
            base.edges().len()
        ),
    )
}

fn degree_bounds() -> Outcome {
    let data = ring(1000);
    let k = 15;
    let built = simgraph::build_umap_graph(&data, k, Metric::Euclidean).unwrap();
    let target = (k as f64).log2();
    let cal = built.graph.calibration.as_ref().unwrap();
    let mut worst_row: f64 = 0.0;
    let mut checked = 0;
    for i in 0..built.graph.n() {
        if !cal.degenerate[i] {
            checked += 1;
            worst_row = worst_row.max((built.directed.row_sum(i) - target).abs());
        }
    }
    let min_deg = built.graph.degrees().iter().copied().fold(f64::INFINITY, f64::min);
    let bin = simgraph::perturb(&built.graph, Perturbation::Binarize, SEED, 500).unwrap();
    let min_bin = bin.degrees().iter().copied().fold(f64::INFINITY, f64::min);
    let pass = worst_row <= 1e-4 && min_deg >= target - 1e-4 && min_bin >= k as f64 - 1.0;
    outcome(
        pass,
        format!(
            "max |row sum - log2 k| {worst_row:.1e} over {checked} rows; min degree {min_deg:.3} (log2 k = {target:.3}); min binarized degree {min_bin}"
        ),
    )
}

fn determinism() -> Outcome {
    let data = ring(300);
    let g = standard_graph(&data);
    let render = || {
        let run = optimize_from_data(&g, &data, 100, 10);
        let mut emb = Vec::new();
        run.embedding.write_csv(&mut emb).unwrap();
        let mut loss = Vec::new();
        losses::write_loss_csv(&run.records, &mut loss).unwrap();
        (emb, loss)
    };
    let (e1, l1) = render();
    let (e2, l2) = render();
    outcome(e1 == e2 && l1 == l2, format!("embedding CSV {} bytes, loss CSV {} bytes", e1.len(), l1.len()))
}

#[test]
fn acceptance() {
    type Check = fn() -> Outcome;
    let checks: [(u32, &str, Check); 14] = [
        (1, "sampling unbiasedness", sampling_unbiasedness),
        (2, "effective loss = mean actual loss", effective_loss_identity),
        (3, "expected gradient = effective loss gradient", gradient_of_effective_loss),
        (4, "cross-partial asymmetry", non_conservative_field),
        (5, "loss table orderings", loss_table),
        (6, "near-binary targets", binarized_targets),
        (7, "weighted BCE identity", weighted_bce_identity),
        (8, "attraction/repulsion weight totals", weight_balance),
        (9, "parametric batch sampler closed forms", parametric_sampler),
        (10, "toy ring width", ring_phenomenology),
        (11, "loss curve divergence", loss_curves),
        (12, "perturbation robustness", perturbation_robustness),
        (13, "degree bounds", degree_bounds),
        (14, "determinism", determinism),
    ];
    let mut unexpected = Vec::new();
    for (id, name, check) in checks {
        let start = Instant::now();
        let o = check();
        let secs = start.elapsed().as_secs_f64();
        let known = KNOWN_RED.contains(&id);
        let status = match (o.pass, known) {
            (true, false) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
            (true, true) => "PASS (listed as known failure)",
        };
        // straight to the process stdout so the verdicts survive output capture
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "A{id:02} {status:<12} {name} [{secs:.1}s]: {}", o.detail);
        let _ = out.flush();
        if o.pass == known {
            unexpected.push(id);
        }
    }
    assert!(unexpected.is_empty(), "unexpected outcomes for checks {unexpected:?}");
}
