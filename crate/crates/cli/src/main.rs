mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use umap_effective::losses::PairSubset;
use umap_effective::optimizer::{EdgeOrder, Init};
use umap_effective::pumap::NegativeForm;
use umap_effective::simgraph::{Metric, Perturbation};

use crate::commands::{GateFailure, HistRequest};
use crate::config::{RunConfig, Source};

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_GATE: u8 = 3;

#[derive(Parser)]
#[command(name = "umap-effective", version, about = "Effective-loss experiments for UMAP's negative-sampling optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset CSV.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Build the graph, optimize, and write embeddings, loss curves and plots.
    Embed {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        graph: GraphArgs,
        #[command(flatten)]
        kernel: KernelArgs,
        #[command(flatten)]
        opt: OptArgs,
        /// Save the embedding every N epochs.
        #[arg(long)]
        snapshot_every: Option<usize>,
    },
    /// Purported loss for {kNN graph, dense phi(x)} x {nu = mu, diverged, final embedding, data}.
    LossTable {
        /// Output directory of an `embed` run on the kNN graph.
        #[arg(long)]
        standard: PathBuf,
        /// Output directory of an `embed --dense` run.
        #[arg(long)]
        dense: PathBuf,
        #[arg(long, default_value = "out/loss-table")]
        out: PathBuf,
    },
    /// Histograms of input, target and embedding similarities, and of degrees.
    Hist {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        graph: GraphArgs,
        #[command(flatten)]
        kernel: KernelArgs,
        #[command(flatten)]
        opt: OptArgs,
        /// Reuse the graph and final embedding of an `embed` output directory.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Pairs to histogram: all, positive, zero.
        #[arg(long)]
        subset: Option<PairSubset>,
        #[arg(long)]
        bins: Option<usize>,
        /// Degree histogram with its lower-bound reference line.
        #[arg(long)]
        degrees: bool,
        /// Target similarities of the epoch-filtered graph vs a perturbed copy.
        #[arg(long, value_parser = parse_compare)]
        compare: Option<Perturbation>,
        /// Logarithmic count axis in the SVG.
        #[arg(long)]
        log: bool,
    },
    /// Monte-Carlo check of the parametric batch sampler against its closed forms.
    PumapVerify {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Negatives per batch edge.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        trial_seed: Option<u64>,
        /// Closed form the exit code is gated on.
        #[arg(long, default_value = "exact")]
        gate: NegativeForm,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Run config TOML; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
#[group(skip)]
struct DataArgs {
    /// Uniform points on an annulus.
    #[arg(long, conflicts_with_all = ["square", "csv"])]
    ring: bool,
    /// Uniform points on the unit square.
    #[arg(long, conflicts_with = "csv")]
    square: bool,
    /// Numeric CSV, one point per row.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    /// Dataset seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    half_width: Option<f64>,
}

#[derive(Args)]
#[group(skip)]
struct GraphArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    metric: Option<Metric>,
    /// phi(|x_i - x_j|) over all pairs instead of the kNN graph.
    #[arg(long)]
    dense: bool,
    /// binarize, invert, permute or uniform_random.
    #[arg(long)]
    perturb: Option<Perturbation>,
}

#[derive(Args)]
#[group(skip)]
struct KernelArgs {
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    min_dist: Option<f64>,
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    eps_rep: Option<f64>,
    #[arg(long)]
    grad_clip: Option<f64>,
}

#[derive(Args)]
#[group(skip)]
struct OptArgs {
    /// Negative samples per fired edge.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    alpha0: Option<f64>,
    /// Constant learning rate.
    #[arg(long)]
    no_lr_decay: bool,
    /// Also repel each negative sample from the edge's head.
    #[arg(long)]
    push_tail: bool,
    /// Optimizer seed.
    #[arg(long)]
    opt_seed: Option<u64>,
    /// data, pca or random.
    #[arg(long)]
    init: Option<Init>,
    /// fixed or shuffled.
    #[arg(long)]
    edge_order: Option<EdgeOrder>,
    #[arg(long)]
    dim: Option<usize>,
    /// Record losses every N epochs.
    #[arg(long)]
    loss_every: Option<usize>,
}

fn parse_compare(s: &str) -> Result<Perturbation, String> {
    let s = if s == "inverted" { "invert" } else { s };
    s.parse().map_err(|e: umap_effective::Error| e.to_string())
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl CommonArgs {
    fn base(&self, command: &str, defaults: impl FnOnce(&mut RunConfig)) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => {
                let mut cfg = RunConfig {
                    name: command.into(),
                    out_dir: PathBuf::from("out").join(command),
                    ..Default::default()
                };
                defaults(&mut cfg);
                cfg
            }
        };
        set(&mut cfg.out_dir, self.out.clone());
        set(&mut cfg.name, self.name.clone());
        Ok(cfg)
    }
}

impl DataArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let d = &mut cfg.dataset;
        if self.ring {
            d.source = Source::Ring;
            d.path = None;
        }
        if self.square {
            d.source = Source::Square;
            d.path = None;
        }
        if let Some(p) = &self.csv {
            d.source = Source::Csv;
            d.path = Some(p.clone());
        }
        set(&mut d.n, self.n);
        set(&mut d.seed, self.seed);
        set(&mut d.radius, self.radius);
        set(&mut d.half_width, self.half_width);
    }
}

impl GraphArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let g = &mut cfg.graph;
        set(&mut g.k, self.k);
        set(&mut g.metric, self.metric);
        g.dense |= self.dense;
        if self.perturb.is_some() {
            g.perturb = self.perturb;
        }
    }
}

impl KernelArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let k = &mut cfg.kernel;
        let reshaped = self.min_dist.is_some() || self.spread.is_some();
        if reshaped && self.a.is_none() && self.b.is_none() {
            k.a = None;
            k.b = None;
        }
        if self.a.is_some() {
            k.a = self.a;
        }
        if self.b.is_some() {
            k.b = self.b;
        }
        set(&mut k.min_dist, self.min_dist);
        set(&mut k.spread, self.spread);
        set(&mut k.eps_rep, self.eps_rep);
        set(&mut k.grad_clip, self.grad_clip);
    }
}

impl OptArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let o = &mut cfg.optimizer;
        set(&mut o.m, self.m);
        set(&mut o.n_epochs, self.epochs);
        set(&mut o.alpha0, self.alpha0);
        if self.no_lr_decay {
            o.lr_decay = false;
        }
        o.push_tail |= self.push_tail;
        set(&mut o.seed, self.opt_seed);
        set(&mut o.init, self.init);
        set(&mut o.edge_order, self.edge_order);
        set(&mut o.dim, self.dim);
        set(&mut o.loss_every, self.loss_every);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate { common, data } => {
            let mut cfg = common.base("generate", |_| {})?;
            data.apply(&mut cfg);
            commands::generate(&cfg.resolve()?)
        }
        Command::Embed {
            common,
            data,
            graph,
            kernel,
            opt,
            snapshot_every,
        } => {
            let mut cfg = common.base("embed", |_| {})?;
            data.apply(&mut cfg);
            graph.apply(&mut cfg);
            kernel.apply(&mut cfg);
            opt.apply(&mut cfg);
            set(&mut cfg.snapshot_every, snapshot_every);
            commands::embed(&cfg.resolve()?)
        }
        Command::LossTable { standard, dense, out } => commands::loss_table(&standard, &dense, &out),
        Command::Hist {
            common,
            data,
            graph,
            kernel,
            opt,
            run,
            subset,
            bins,
            degrees,
            compare,
            log,
        } => {
            let mut cfg = common.base("hist", |_| {})?;
            if let (Some(dir), None, None) = (&run, &common.out, &common.config) {
                cfg.out_dir = dir.join("hist");
            }
            data.apply(&mut cfg);
            graph.apply(&mut cfg);
            kernel.apply(&mut cfg);
            opt.apply(&mut cfg);
            set(&mut cfg.hist.subset, subset);
            set(&mut cfg.hist.bins, bins);
            let req = HistRequest {
                run,
                degrees,
                compare,
                similarities: subset.is_some() || !(degrees || compare.is_some()),
                log_y: log,
            };
            commands::hist(&cfg.resolve()?, &req)
        }
        Command::PumapVerify {
            common,
            data,
            graph,
            batch_size,
            m,
            trials,
            trial_seed,
            gate,
        } => {
            let mut cfg = common.base("pumap-verify", |c| {
                c.dataset.n = 20;
                c.graph.k = 5;
            })?;
            data.apply(&mut cfg);
            graph.apply(&mut cfg);
            let p = &mut cfg.pumap;
            set(&mut p.batch_size, batch_size);
            set(&mut p.m, m);
            set(&mut p.trials, trials);
            set(&mut p.seed, trial_seed);
            commands::pumap_verify(&cfg.resolve()?, gate)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<GateFailure>().is_some() {
            return EXIT_GATE;
        }
        if let Some(umap_effective::Error::NonFinite { .. }) = cause.downcast_ref::<umap_effective::Error>() {
            return EXIT_NUMERICAL;
        }
    }
    EXIT_USAGE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
