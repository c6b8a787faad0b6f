use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use netdof::estimators::{BayesConfig, ErmConfig, Estimator};
use netdof::net::TeacherSpec;
use netdof::NormBudget;
use serde::{Deserialize, Serialize};

/// Everything a command reads. Loaded from TOML; command-line flags then
/// override the matching fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Model JSON (`analyze`, `plan`, `compress`); written by `teacher`.
    pub model: Option<PathBuf>,
    /// Dataset CSV. When absent, inputs are drawn uniformly on the cube.
    pub data: Option<PathBuf>,
    /// Number of synthetic inputs used when no dataset is given.
    pub synthetic_n: usize,
    pub out: PathBuf,
    /// Master seed for every random draw of the run.
    pub seed: u64,
    pub sigma: f64,
    pub budget: NormBudget,
    /// Sample size the plan is made for; defaults to the number of inputs.
    pub n: Option<usize>,
    /// Hidden widths `m_2, …, m_L`.
    pub widths: Option<Vec<usize>>,
    /// `λ_2, …, λ_L`.
    pub lambda: Option<Vec<f64>>,
    /// Points in the per-layer `λ` grid of `analyze`.
    pub lambda_points: usize,
    pub n_grid: Vec<usize>,
    pub seeds: usize,
    /// Teacher built by the `teacher` command.
    pub teacher: Option<TeacherSpec>,
    #[serde(rename = "experiment")]
    pub experiments: Vec<ExperimentSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: None,
            data: None,
            synthetic_n: 1024,
            out: PathBuf::from("out"),
            seed: 0,
            sigma: 0.1,
            budget: NormBudget::default(),
            n: None,
            widths: None,
            lambda: None,
            lambda_points: 40,
            n_grid: vec![64, 128, 256, 512, 1024, 2048, 4096],
            seeds: 5,
            teacher: None,
            experiments: Vec::new(),
        }
    }
}

/// One `(teacher, estimator)` pair of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub teacher: TeacherSpec,
    pub estimator: Estimator,
    /// Fixed hidden widths; balanced per `n` when absent.
    #[serde(default)]
    pub widths: Option<Vec<usize>>,
    #[serde(default)]
    pub max_width: Option<usize>,
    /// Overrides the run-level noise level.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub n_test: Option<usize>,
    #[serde(default)]
    pub erm: ErmConfig,
    #[serde(default)]
    pub bayes: BayesConfig,
    /// Test mode: skip fitting and use errors `c · n^exponent`.
    #[serde(default)]
    pub inject: Option<Injection>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    pub c: f64,
    pub exponent: f64,
}

/// Flag values; `None` leaves the config field alone.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub sigma: Option<f64>,
    pub delta: Option<f64>,
    pub n_grid: Option<Vec<usize>>,
    pub seeds: Option<usize>,
    pub widths: Option<Vec<usize>>,
    pub lambda: Option<Vec<f64>>,
    pub n: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn apply(&mut self, o: Overrides) {
        if o.model.is_some() {
            self.model = o.model;
        }
        if o.data.is_some() {
            self.data = o.data;
        }
        if let Some(v) = o.out {
            self.out = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.sigma {
            self.sigma = v;
        }
        if let Some(v) = o.delta {
            self.budget.delta = v;
        }
        if let Some(v) = o.n_grid {
            self.n_grid = v;
        }
        if let Some(v) = o.seeds {
            self.seeds = v;
        }
        if o.widths.is_some() {
            self.widths = o.widths;
        }
        if o.lambda.is_some() {
            self.lambda = o.lambda;
        }
        if o.n.is_some() {
            self.n = o.n;
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let b = &self.budget;
        NormBudget::new(b.r, b.r_b, b.d_x, b.delta).context("budget")?;
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            bail!("sigma = {} must be finite and nonnegative", self.sigma);
        }
        if self.synthetic_n == 0 {
            bail!("synthetic_n must be at least 1");
        }
        if self.lambda_points < 2 {
            bail!("lambda_points must be at least 2");
        }
        if let Some(l) = &self.lambda {
            if l.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                bail!("every lambda must be positive and finite");
            }
        }
        if let Some(w) = &self.widths {
            if w.contains(&0) {
                bail!("widths must be positive");
            }
        }
        if self.n == Some(0) {
            bail!("n must be at least 1");
        }
        let mut names = std::collections::BTreeSet::new();
        for e in &self.experiments {
            let ok = !e.name.is_empty() && e.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !ok {
                bail!("experiment name {:?} must be nonempty ASCII letters, digits, '_' or '-'", e.name);
            }
            if !names.insert(&e.name) {
                bail!("duplicate experiment name {:?}", e.name);
            }
        }
        for p in [&self.model, &self.data].into_iter().flatten() {
            if !p.exists() {
                bail!("{} does not exist", p.display());
            }
        }
        Ok(())
    }

    pub fn model_path(&self) -> anyhow::Result<&Path> {
        self.model
            .as_deref()
            .context("no model given; pass --model or set `model` in the config")
    }
}
