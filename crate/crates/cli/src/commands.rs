use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use umap_effective::datagen::{self, Dataset};
use umap_effective::kernel::Kernel;
use umap_effective::losses::{self, LogMode, LossRecord, PairSubset, Similarities};
use umap_effective::optimizer::{self, Embedding};
use umap_effective::pumap::{self, McExtras, NegativeForm};
use umap_effective::simgraph::{self, GraphKind, Perturbation, SimilarityGraph};

use crate::config::{RunConfig, Source, CONFIG_ECHO};
use crate::svg;

/// Below this many trials the Monte-Carlo standard errors are too rough to
/// gate on.
pub const MIN_GATE_TRIALS: usize = 1000;
pub const GATE_Z: f64 = 4.0;

/// A verification check that ran to completion and failed.
#[derive(Debug)]
pub struct GateFailure(pub String);

impl std::fmt::Display for GateFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "verification gate failed: {}", self.0)
    }
}

impl std::error::Error for GateFailure {}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let d = &cfg.dataset;
    let data = match d.source {
        Source::Ring => datagen::gen_ring(d.n, d.radius, d.half_width, d.seed)?,
        Source::Square => datagen::gen_uniform_square(d.n, d.seed)?,
        Source::Csv => {
            let path = d.path.as_ref().context("csv source without a path")?;
            datagen::load_csv(path)?
        }
    };
    if cfg.graph.k >= data.len() {
        bail!("k = {} must be below n = {}", cfg.graph.k, data.len());
    }
    Ok(data)
}

pub fn build_graph(cfg: &RunConfig, data: &Dataset, kernel: &Kernel) -> Result<SimilarityGraph> {
    if cfg.graph.dense {
        return Ok(simgraph::dense_similarities(data, kernel));
    }
    let graph = simgraph::build_umap_graph(data, cfg.graph.k, cfg.graph.metric)?.graph;
    Ok(match cfg.graph.perturb {
        Some(mode) => simgraph::perturb(&graph, mode, cfg.optimizer.seed, cfg.optimizer.n_epochs)?,
        None => graph,
    })
}

/// Points coloured by their angle around the data centroid, so a ring keeps
/// its colour wheel through the optimization.
fn color_key(data: &Dataset) -> Vec<f64> {
    let n = data.len() as f64;
    if data.dim() < 2 {
        return (0..data.len()).map(|i| i as f64 / n).collect();
    }
    let (cx, cy) = data.rows().fold((0.0, 0.0), |(x, y), p| (x + p[0] / n, y + p[1] / n));
    data.rows()
        .map(|p| ((p[1] - cy).atan2(p[0] - cx) / std::f64::consts::TAU).rem_euclid(1.0))
        .collect()
}

fn planar(e: &Embedding) -> Vec<[f64; 2]> {
    e.rows().map(|p| [p[0], p.get(1).copied().unwrap_or(0.0)]).collect()
}

pub fn generate(cfg: &RunConfig) -> Result<()> {
    cfg.echo()?;
    let data = load_dataset(cfg).context("stage dataset")?;
    let path = cfg.out_dir.join("data.csv");
    datagen::save_csv(&data, &path)?;
    println!("wrote {} points to {}", data.len(), path.display());
    Ok(())
}

pub fn embed(cfg: &RunConfig) -> Result<()> {
    let echo = cfg.echo()?;
    run_embed(cfg).with_context(|| format!("resolved config: {}", echo.display()))
}

fn run_embed(cfg: &RunConfig) -> Result<()> {
    let out = &cfg.out_dir;
    let kernel = cfg.kernel.kernel()?;
    let data = load_dataset(cfg).context("stage dataset")?;
    datagen::save_csv(&data, out.join("data.csv"))?;
    let graph = build_graph(cfg, &data, &kernel).context("stage graph")?;
    if !cfg.graph.dense {
        simgraph::save_graph(&graph, out.join("graph_edges.csv"), out.join("graph_nodes.csv"))?;
    }
    let initial = optimizer::init_embedding(&data, &cfg.optimizer).context("stage init")?;
    initial.save_csv(out.join("initial.csv"))?;

    let snapshots = out.join("snapshots");
    if cfg.snapshot_every > 0 {
        std::fs::create_dir_all(&snapshots)?;
    }
    let width = cfg.optimizer.n_epochs.to_string().len();
    let result = optimizer::optimize_from(&graph, initial, &kernel, &cfg.optimizer, |epoch, emb| {
        if cfg.snapshot_every > 0 && epoch % cfg.snapshot_every == 0 {
            emb.save_csv(snapshots.join(format!("epoch_{epoch:0width$}.csv")))?;
        }
        Ok(())
    })
    .context("stage optimize")?;

    result.embedding.save_csv(out.join("embedding.csv"))?;
    losses::write_loss_csv(&result.records, create(&out.join("losses.csv"))?)?;
    let key = color_key(&data);
    let scatter = svg::scatter(
        &[
            ("initial", planar(&result.initial)),
            (&format!("epoch {}", cfg.optimizer.n_epochs), planar(&result.embedding)),
        ],
        &key,
    );
    write_text(&out.join("embedding.svg"), &scatter)?;
    write_text(&out.join("losses.svg"), &loss_curves(&result.records))?;

    if let (Some(first), Some(last)) = (result.records.first(), result.records.last()) {
        println!("epoch {:>6}: purported {:.3}, effective {:.3}", first.epoch, first.purported_total, first.effective_total);
        println!(
            "epoch {:>6}: purported {:.3}, effective {:.3}, actual {:.3}",
            last.epoch, last.purported_total, last.effective_total, last.actual_total
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn loss_curves(records: &[LossRecord]) -> String {
    let x: Vec<f64> = records.iter().map(|r| r.epoch as f64).collect();
    let series = vec![
        ("purported", records.iter().map(|r| r.purported_total).collect()),
        ("effective", records.iter().map(|r| r.effective_total).collect()),
        ("actual (sampled)", records.iter().map(|r| r.actual_total).collect()),
        ("purported repulsion", records.iter().map(|r| r.purported_rep).collect()),
    ];
    svg::line_chart("loss per epoch", "epoch", &x, &series, true)
}

/// A finished `embed` output directory.
pub struct LoadedRun {
    pub cfg: RunConfig,
    pub data: Dataset,
    pub kernel: Kernel,
    pub graph: SimilarityGraph,
    pub embedding: Embedding,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let cfg_path = dir.join(CONFIG_ECHO);
    if !cfg_path.is_file() {
        bail!("{} is not a completed embed run (no {CONFIG_ECHO})", dir.display());
    }
    let cfg = RunConfig::load(&cfg_path)?;
    let kernel = cfg.kernel.kernel()?;
    let data = datagen::load_csv(dir.join("data.csv"))?;
    let embedding = Embedding::load_csv(dir.join("embedding.csv")).with_context(|| format!("{} has no final embedding", dir.display()))?;
    let graph = build_graph(&cfg, &data, &kernel)?;
    if embedding.len() != data.len() {
        bail!("{}: embedding has {} points, data {}", dir.display(), embedding.len(), data.len());
    }
    Ok(LoadedRun {
        cfg,
        data,
        kernel,
        graph,
        embedding,
    })
}

#[derive(Serialize)]
struct LossTableConfig<'a> {
    standard_run: &'a Path,
    dense_run: &'a Path,
    out_dir: &'a Path,
}

pub fn loss_table(standard: &Path, dense: &Path, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let echo = LossTableConfig {
        standard_run: standard,
        dense_run: dense,
        out_dir: out,
    };
    write_text(&out.join(CONFIG_ECHO), &toml::to_string(&echo)?)?;
    let s = load_run(standard)?;
    let d = load_run(dense)?;
    if s.cfg.graph.dense {
        bail!("{} was run on dense similarities; expected the kNN graph", standard.display());
    }
    if !d.cfg.graph.dense {
        bail!("{} was not run on dense similarities", dense.display());
    }
    let row = |run: &LoadedRun| -> Result<[f64; 4]> {
        let original = Embedding::from(&run.data);
        let cells = [
            Similarities::Graph(&run.graph),
            Similarities::Diverged,
            Similarities::Embedding(&run.embedding, &run.kernel),
            Similarities::Embedding(&original, &run.kernel),
        ];
        let mut vals = [0.0; 4];
        for (v, nu) in vals.iter_mut().zip(cells) {
            *v = losses::purported_loss_with(&run.graph, nu, LogMode::Clamped)?.total;
        }
        Ok(vals)
    };
    let rows = [("standard", row(&s)?), ("dense", row(&d)?)];
    let mut w = create(&out.join("loss_table.csv"))?;
    writeln!(w, "input,nu_equals_mu,nu_diverged,nu_final_embedding,nu_original_data")?;
    for (name, r) in &rows {
        writeln!(w, "{name},{},{},{},{}", r[0], r[1], r[2], r[3])?;
        println!("{name:>8}: {:>12.1} {:>12.1} {:>12.1} {:>12.1}", r[0], r[1], r[2], r[3]);
    }
    w.flush()?;
    let (r1, r2) = (rows[0].1, rows[1].1);
    println!("nu = mu is the row minimum: {}", rows.iter().all(|(_, r)| r.iter().all(|&v| r[0] <= v)));
    println!("standard row, diverged below final embedding: {}", r1[1] < r1[2]);
    println!("dense row, final embedding above original data: {}", r2[2] > r2[3]);
    Ok(())
}

pub struct HistRequest {
    pub run: Option<PathBuf>,
    pub degrees: bool,
    pub compare: Option<Perturbation>,
    pub similarities: bool,
    pub log_y: bool,
}

pub fn hist(cfg: &RunConfig, req: &HistRequest) -> Result<()> {
    let (cfg, data, kernel, graph, embedding) = match &req.run {
        Some(dir) => {
            let run = load_run(dir)?;
            let cfg = RunConfig {
                out_dir: cfg.out_dir.clone(),
                hist: cfg.hist.clone(),
                ..run.cfg
            };
            (cfg, run.data, run.kernel, run.graph, Some(run.embedding))
        }
        None => {
            let kernel = cfg.kernel.kernel()?;
            let data = load_dataset(cfg).context("stage dataset")?;
            let graph = build_graph(cfg, &data, &kernel).context("stage graph")?;
            (cfg.clone(), data, kernel, graph, None)
        }
    };
    cfg.echo()?;
    let out = &cfg.out_dir;
    let bins = cfg.hist.bins;

    if req.similarities {
        let embedding = match embedding {
            Some(e) => e,
            None => optimizer::optimize(&graph, &data, &kernel, &cfg.optimizer).context("stage optimize")?.embedding,
        };
        let subset = cfg.hist.subset;
        let targets = losses::target_similarities(&graph, cfg.optimizer.m);
        let h = losses::similarity_histograms(&graph, &targets, &embedding, &kernel, bins, subset)?;
        let stem = format!("similarities_{}", subset_name(subset));
        let mut w = create(&out.join(format!("{stem}.csv")))?;
        h.write_csv(&mut w)?;
        w.flush()?;
        let f = |c: &[u64]| c.iter().map(|&v| v as f64).collect::<Vec<_>>();
        let chart = svg::BarChart {
            title: &format!("similarities over {} pairs", subset_name(subset)),
            x_label: "similarity",
            bin_edges: &h.bin_edges,
            series: vec![("input mu", f(&h.count_mu)), ("target nu*", f(&h.count_target)), ("embedding nu", f(&h.count_nu))],
            log_y: req.log_y,
            reference: None,
        };
        write_text(&out.join(format!("{stem}.svg")), &svg::bar_chart(&chart))?;
        println!("wrote {}", out.join(format!("{stem}.csv")).display());
    }

    if req.degrees {
        let h = simgraph::degree_histogram(&graph, bins);
        let mut w = create(&out.join("degrees.csv"))?;
        writeln!(w, "bin_lo,bin_hi,count")?;
        for (b, c) in h.counts.iter().enumerate() {
            writeln!(w, "{},{},{c}", h.bin_edges[b], h.bin_edges[b + 1])?;
        }
        w.flush()?;
        let chart = svg::BarChart {
            title: "degree distribution",
            x_label: "degree",
            bin_edges: &h.bin_edges,
            series: vec![("points", h.counts.iter().map(|&c| c as f64).collect())],
            log_y: req.log_y,
            reference: h.reference.map(|r| (r, format!("bound {r:.3}"))),
        };
        write_text(&out.join("degrees.svg"), &svg::bar_chart(&chart))?;
        match h.reference {
            Some(r) => println!("degrees {:.4} .. {:.4}; lower bound {r:.4}", h.min_degree, h.max_degree),
            None => println!("degrees {:.4} .. {:.4}", h.min_degree, h.max_degree),
        }
    }

    if let Some(mode) = req.compare {
        if !matches!(graph.kind, GraphKind::Umap) {
            bail!("--compare needs the unperturbed kNN graph");
        }
        let n_epochs = cfg.optimizer.n_epochs;
        let original = simgraph::epoch_filter(&graph, n_epochs)?;
        let other = simgraph::perturb(&original, mode, cfg.optimizer.seed, n_epochs)?;
        let m = cfg.optimizer.m;
        let (ho, hp) = (
            losses::target_histogram(&losses::target_similarities(&original, m), bins),
            losses::target_histogram(&losses::target_similarities(&other, m), bins),
        );
        let name = perturb_name(mode);
        let mut w = create(&out.join(format!("compare_{name}.csv")))?;
        writeln!(w, "bin_lo,bin_hi,count_original,count_{name}")?;
        for b in 0..bins {
            writeln!(w, "{},{},{},{}", b as f64 / bins as f64, (b + 1) as f64 / bins as f64, ho[b], hp[b])?;
        }
        w.flush()?;
        let edges: Vec<f64> = (0..=bins).map(|b| b as f64 / bins as f64).collect();
        let f = |c: &[u64]| c.iter().map(|&v| v as f64).collect::<Vec<_>>();
        let chart = svg::BarChart {
            title: &format!("target similarities, original vs {name}"),
            x_label: "target similarity",
            bin_edges: &edges,
            series: vec![("original", f(&ho)), (name, f(&hp))],
            log_y: req.log_y,
            reference: None,
        };
        write_text(&out.join(format!("compare_{name}.svg")), &svg::bar_chart(&chart))?;
        let same_edges = original.edge_set() == other.edge_set();
        println!(
            "{name}: {} positive edges, same edge set {same_edges}, target histogram TV {:.4}",
            other.edges().len(),
            losses::total_variation(&ho, &hp)
        );
    }
    Ok(())
}

fn form_name(f: NegativeForm) -> &'static str {
    match f {
        NegativeForm::DistinctEdge => "distinct-edge",
        NegativeForm::Exact => "own-tail",
    }
}

fn subset_name(s: PairSubset) -> &'static str {
    match s {
        PairSubset::All => "all",
        PairSubset::PositiveMu => "positive",
        PairSubset::ZeroMu => "zero",
    }
}

fn perturb_name(p: Perturbation) -> &'static str {
    match p {
        Perturbation::Binarize => "binarize",
        Perturbation::Invert => "invert",
        Perturbation::Permute => "permute",
        Perturbation::UniformRandom => "uniform_random",
    }
}

pub fn pumap_verify(cfg: &RunConfig, gate: NegativeForm) -> Result<()> {
    cfg.echo()?;
    let out = &cfg.out_dir;
    let kernel = cfg.kernel.kernel()?;
    let data = load_dataset(cfg).context("stage dataset")?;
    let graph = build_graph(cfg, &data, &kernel).context("stage graph")?;
    let embedding = optimizer::init_embedding(&data, &cfg.optimizer).context("stage init")?;
    let sim = &cfg.pumap;
    let est = pumap::mc_expectations(
        &graph,
        sim,
        McExtras {
            embedding: Some((&embedding, &kernel)),
            covariance: None,
        },
    )
    .context("stage monte carlo")?;
    let check = pumap::check_estimates(&graph, sim, &est, Some((&embedding, &kernel)))?;
    let mut w = create(&out.join("report.csv"))?;
    pumap::write_report(&graph, sim, &est, &mut w)?;
    w.flush()?;

    let mut summary = String::new();
    let mut line = |s: String| {
        println!("{s}");
        summary.push_str(&s);
        summary.push('\n');
    };
    line(format!(
        "n {} edges {} batch {} m {} trials {}",
        graph.n(),
        graph.edges().len(),
        sim.batch_size,
        sim.m,
        sim.trials
    ));
    line(format!("E(P) max z {:.3}", check.max_z_p));
    line(format!("E(N) max z {:.3} (distinct-edge form)", check.max_z_neg_distinct));
    line(format!("E(N) max z {:.3} (with own-tail term)", check.max_z_neg_exact));
    if let (Some(loss), Some(t), Some(x)) = (est.loss, check.loss_distinct, check.loss_exact) {
        line(format!(
            "loss mc {:.6} (se {:.2e}); distinct-edge form {t:.6} (z {:.3}); with own-tail term {x:.6} (z {:.3})",
            loss.mean,
            loss.se,
            check.z_loss_distinct.unwrap_or(0.0),
            check.z_loss_exact.unwrap_or(0.0)
        ));
    }
    line(format!("batch conservation failures {}", est.conservation_failures));
    let verdict = if sim.trials < MIN_GATE_TRIALS {
        line(format!("insufficient precision: {} trials (< {MIN_GATE_TRIALS}); gate not applied", sim.trials));
        Ok(())
    } else {
        let z = check.max_z(gate);
        if est.conservation_failures > 0 {
            Err(GateFailure(format!("{} batches lost or gained pairs", est.conservation_failures)))
        } else if z > GATE_Z {
            Err(GateFailure(format!("max z {z:.3} > {GATE_Z} against the {} form", form_name(gate))))
        } else {
            line(format!("gate passed: max z {z:.3} <= {GATE_Z} ({} form)", form_name(gate)));
            Ok(())
        }
    };
    write_text(&out.join("summary.txt"), &summary)?;
    Ok(verdict?)
}
