use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::{InnerConfig, OuterConfig};
use crate::model::{MlpSpec, OutputKind};
use crate::tasks::{make_shifted, SinusoidConfig, TaskDistribution, TaskKind};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Maml,
    Fomaml,
    Metasgd,
    Iml,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Maml, Method::Fomaml, Method::Metasgd, Method::Iml];

    pub fn name(self) -> &'static str {
        match self {
            Method::Maml => "maml",
            Method::Fomaml => "fomaml",
            Method::Metasgd => "metasgd",
            Method::Iml => "iml",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected maml, fomaml, metasgd or iml)")))
    }

    /// Inner/outer settings this method runs with, starting from the shared
    /// ones in the experiment config.
    pub fn configure(self, inner: &InnerConfig, outer: &OuterConfig, lambda_pen: f64) -> (InnerConfig, OuterConfig) {
        let mut inner = inner.clone();
        let mut outer = outer.clone();
        outer.lambda_pen = 0.0;
        match self {
            Method::Maml => {}
            Method::Fomaml => inner.first_order = true,
            Method::Metasgd => inner.learn_alpha = true,
            Method::Iml => outer.lambda_pen = lambda_pen,
        }
        (inner, outer)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A named distribution: either written out, or another entry with some
/// fields overridden.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistEntry {
    Shifted(ShiftedDist),
    Direct(TaskDistribution),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftedDist {
    pub base: String,
    pub shift: serde_json::Map<String, serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionPair {
    pub train_dist: String,
    pub eval_dist: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Used when `methods` is empty.
    pub method: Method,
    pub methods: Vec<Method>,
    /// Derived from the first training distribution when absent.
    pub model: Option<MlpSpec>,
    pub distributions: BTreeMap<String, DistEntry>,
    pub pairs: Vec<DistributionPair>,
    pub inner: InnerConfig,
    pub outer: OuterConfig,
    /// Penalty weights swept for `iml`; `[outer.lambda_pen]` when empty.
    /// Other methods always run once, unpenalized.
    pub lambda_grid: Vec<f64>,
    pub train_iterations: usize,
    pub eval_tasks: usize,
    /// Inner steps at evaluation; `inner.steps` when absent.
    pub eval_inner_steps: Option<usize>,
    pub validation_every: usize,
    pub validation_tasks: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Record wall-clock times in metrics. Off by default so that reruns
    /// produce byte-identical files.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut distributions = BTreeMap::new();
        distributions.insert(
            "sinusoid".to_string(),
            DistEntry::Direct(TaskDistribution::Sinusoid(SinusoidConfig::default())),
        );
        ExperimentConfig {
            method: Method::Maml,
            methods: Vec::new(),
            model: None,
            distributions,
            pairs: vec![DistributionPair {
                train_dist: "sinusoid".into(),
                eval_dist: "sinusoid".into(),
            }],
            inner: InnerConfig::default(),
            outer: OuterConfig::default(),
            lambda_grid: Vec::new(),
            train_iterations: 1000,
            eval_tasks: 200,
            eval_inner_steps: None,
            validation_every: 100,
            validation_tasks: 50,
            seeds: vec![0],
            output_dir: PathBuf::from("out"),
            timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn methods(&self) -> Vec<Method> {
        if self.methods.is_empty() {
            vec![self.method]
        } else {
            self.methods.clone()
        }
    }

    /// Penalty weights `method` runs with.
    pub fn lambdas(&self, method: Method) -> Vec<f64> {
        match method {
            Method::Iml if !self.lambda_grid.is_empty() => self.lambda_grid.clone(),
            Method::Iml => vec![self.outer.lambda_pen],
            _ => vec![0.0],
        }
    }

    /// Resolves every named distribution, following shift chains.
    pub fn resolve_distributions(&self) -> Result<BTreeMap<String, TaskDistribution>> {
        let mut out = BTreeMap::new();
        for name in self.distributions.keys() {
            let mut chain = Vec::new();
            let d = self.resolve_one(name, &mut chain)?;
            out.insert(name.clone(), d);
        }
        Ok(out)
    }

    fn resolve_one(&self, name: &str, chain: &mut Vec<String>) -> Result<TaskDistribution> {
        if chain.iter().any(|n| n == name) {
            return Err(Error::Config(format!("distribution `{name}` is defined in terms of itself")));
        }
        chain.push(name.to_string());
        let entry = self
            .distributions
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown distribution `{name}`")))?;
        let d = match entry {
            DistEntry::Direct(d) => {
                d.validate()?;
                d.clone()
            }
            DistEntry::Shifted(s) => make_shifted(&self.resolve_one(&s.base, chain)?, &s.shift)?,
        };
        chain.pop();
        Ok(d)
    }

    /// Training distributions in first-appearance order, each with the
    /// evaluation distributions paired with it.
    pub fn train_groups(&self) -> Vec<(String, Vec<String>)> {
        let mut groups: Vec<(String, Vec<String>)> = Vec::new();
        for p in &self.pairs {
            match groups.iter_mut().find(|(t, _)| *t == p.train_dist) {
                Some((_, evals)) => {
                    if !evals.contains(&p.eval_dist) {
                        evals.push(p.eval_dist.clone());
                    }
                }
                None => groups.push((p.train_dist.clone(), vec![p.eval_dist.clone()])),
            }
        }
        groups
    }

    /// Model for `dist`: the configured one, or the default network for
    /// the family.
    pub fn model_for(&self, dist: &TaskDistribution) -> MlpSpec {
        match (&self.model, dist) {
            (Some(m), _) => m.clone(),
            (None, TaskDistribution::Sinusoid(_)) => MlpSpec::sinusoid_default(),
            (None, TaskDistribution::Spurious(c)) => MlpSpec::classifier_default(c.feature_dim(), c.n_way),
        }
    }

    pub fn eval_inner(&self) -> InnerConfig {
        InnerConfig {
            steps: self.eval_inner_steps.unwrap_or(self.inner.steps),
            ..self.inner.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval_tasks < 2 {
            return Err(Error::Config(format!("eval_tasks must be >= 2, got {}", self.eval_tasks)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.pairs.is_empty() {
            return Err(Error::Config("at least one distribution pair is required".into()));
        }
        if self.validation_every == 0 || self.validation_tasks < 2 {
            return Err(Error::Config("validation_every must be positive and validation_tasks >= 2".into()));
        }
        if self.eval_inner_steps == Some(0) {
            return Err(Error::Config("eval_inner_steps must be >= 1".into()));
        }
        if let Some(l) = self.lambda_grid.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("lambda values must be finite and >= 0, got {l}")));
        }
        self.outer.validate()?;
        let dists = self.resolve_distributions()?;
        for p in &self.pairs {
            let get = |n: &str| {
                dists
                    .get(n)
                    .ok_or_else(|| Error::Config(format!("pair names unknown distribution `{n}`")))
            };
            let (train, eval) = (get(&p.train_dist)?, get(&p.eval_dist)?);
            if train.kind() != eval.kind()
                || train.feature_dim() != eval.feature_dim()
                || train.output_dim() != eval.output_dim()
            {
                return Err(Error::Config(format!(
                    "`{}` and `{}` are not the same kind of task",
                    p.train_dist, p.eval_dist
                )));
            }
            let spec = self.model_for(train);
            spec.validate()?;
            let want_kind = match train.kind() {
                TaskKind::Regression => OutputKind::Regression,
                TaskKind::Classification => OutputKind::NWayLogits,
            };
            if spec.output_kind != want_kind
                || spec.input_width() != train.feature_dim()
                || spec.output_width() != train.output_dim()
            {
                return Err(Error::Config(format!(
                    "model {:?} does not fit distribution `{}` ({} inputs, {} outputs)",
                    spec.layer_widths,
                    p.train_dist,
                    train.feature_dim(),
                    train.output_dim()
                )));
            }
            for m in self.methods() {
                let (inner, _) = m.configure(&self.inner, &self.outer, 0.0);
                inner.validate(spec.param_count())?;
            }
        }
        Ok(())
    }
}
