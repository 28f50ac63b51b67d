use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use umap_effective::kernel::{self, Kernel};
use umap_effective::losses::PairSubset;
use umap_effective::optimizer::OptimizerConfig;
use umap_effective::pumap::BatchSimConfig;
use umap_effective::simgraph::{Metric, Perturbation};

pub const CONFIG_ECHO: &str = "config.toml";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Ring,
    Square,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: Source,
    pub n: usize,
    pub seed: u64,
    pub radius: f64,
    pub half_width: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            source: Source::Ring,
            n: 1000,
            seed: 0,
            radius: 4.0,
            half_width: 0.25,
            path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSpec {
    pub k: usize,
    pub metric: Metric,
    /// Use `phi(|x_i - x_j|)` over all pairs instead of the kNN graph.
    pub dense: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturb: Option<Perturbation>,
}

impl Default for GraphSpec {
    fn default() -> Self {
        GraphSpec {
            k: 15,
            metric: Metric::Euclidean,
            dense: false,
            perturb: None,
        }
    }
}

/// `a` and `b` are fitted from `min_dist` and `spread` unless given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    pub min_dist: f64,
    pub spread: f64,
    pub eps_rep: f64,
    pub grad_clip: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            a: None,
            b: None,
            min_dist: kernel::DEFAULT_MIN_DIST,
            spread: kernel::DEFAULT_SPREAD,
            eps_rep: kernel::DEFAULT_EPS_REP,
            grad_clip: kernel::DEFAULT_GRAD_CLIP,
        }
    }
}

impl KernelSpec {
    pub fn kernel(&self) -> Result<Kernel> {
        let (a, b) = match (self.a, self.b) {
            (Some(a), Some(b)) => (a, b),
            (None, None) => {
                let fit = kernel::fit_ab(self.min_dist, self.spread);
                (fit.a, fit.b)
            }
            _ => bail!("kernel: give both a and b, or neither"),
        };
        Ok(Kernel::new(a, b, self.eps_rep, self.grad_clip)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistSpec {
    pub bins: usize,
    pub subset: PairSubset,
}

impl Default for HistSpec {
    fn default() -> Self {
        HistSpec {
            bins: 10,
            subset: PairSubset::All,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub out_dir: PathBuf,
    /// Write the embedding every this many epochs (0 disables).
    pub snapshot_every: usize,
    pub dataset: DatasetSpec,
    pub graph: GraphSpec,
    pub kernel: KernelSpec,
    pub optimizer: OptimizerConfig,
    pub pumap: BatchSimConfig,
    pub hist: HistSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "run".into(),
            out_dir: PathBuf::from("out"),
            snapshot_every: 0,
            dataset: DatasetSpec::default(),
            graph: GraphSpec::default(),
            kernel: KernelSpec::default(),
            optimizer: OptimizerConfig::default(),
            pumap: BatchSimConfig::default(),
            hist: HistSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Fills in derived values (the fitted kernel shape) and checks the
    /// invariants, so the echoed file reproduces the run exactly.
    pub fn resolve(mut self) -> Result<Self> {
        let k = self.kernel.kernel()?;
        self.kernel.a = Some(k.a);
        self.kernel.b = Some(k.b);
        match (self.dataset.source, &self.dataset.path) {
            (Source::Csv, None) => bail!("dataset: source = \"csv\" needs a path"),
            (Source::Csv, Some(p)) if !p.is_file() => bail!("dataset: {} does not exist", p.display()),
            (Source::Ring | Source::Square, Some(_)) => bail!("dataset: path given for a generated source"),
            _ => {}
        }
        if self.dataset.source != Source::Csv && self.graph.k >= self.dataset.n {
            bail!("graph: k = {} must be below n = {}", self.graph.k, self.dataset.n);
        }
        if self.graph.dense && self.graph.perturb.is_some() {
            bail!("graph: perturbations apply to the kNN graph, not the dense one");
        }
        if self.hist.bins == 0 {
            bail!("hist: bins must be positive");
        }
        self.optimizer.validate()?;
        self.pumap.validate()?;
        Ok(self)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Creates the output directory and writes the resolved config into it.
    pub fn echo(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir).with_context(|| format!("creating {}", self.out_dir.display()))?;
        let path = self.out_dir.join(CONFIG_ECHO);
        std::fs::write(&path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::default().resolve().unwrap();
        let back: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(back.kernel.a.unwrap() > 1.5);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_invariants() {
        assert!(toml::from_str::<RunConfig>("[graph]\nkk = 3").is_err());
        let mut cfg = RunConfig::default();
        cfg.dataset.n = 10;
        assert!(cfg.clone().resolve().is_err());
        cfg.dataset.n = 100;
        cfg.dataset.source = Source::Csv;
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let cfg: RunConfig = toml::from_str("[optimizer]\nn_epochs = 7\n[graph]\nperturb = \"binarize\"").unwrap();
        assert_eq!(cfg.optimizer.n_epochs, 7);
        assert_eq!(cfg.optimizer.m, 5);
        assert_eq!(cfg.graph.perturb, Some(Perturbation::Binarize));
    }
}
