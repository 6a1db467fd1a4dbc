//! Synthetic few-shot task distributions with controllable shift.
//!
//! Two families: sinusoid regression and an N-way classification family in
//! which every input carries a block of core features (class prototypes
//! drawn fresh per task) and a block of spurious features (a fixed code per
//! label that agrees with the true label with probability `rho`).

mod episode;
mod sinusoid;
mod spurious;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub use episode::{decode_tasks, encode_tasks, read_tasks, write_tasks, EPISODE_MAGIC, EPISODE_VERSION};
pub use sinusoid::{sample_sinusoid_task, SinusoidConfig};
pub use spurious::{sample_spurious_task, spurious_code, SpuriousClassConfig};

/// Default number of query samples per class in classification episodes.
pub const DEFAULT_QUERY_PER_CLASS: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// `[rows, outputs]` regression targets.
    Values(Tensor<f64>),
    Labels(Vec<u32>),
}

impl Targets {
    pub fn rows(&self) -> usize {
        match self {
            Targets::Values(t) => t.rows(),
            Targets::Labels(l) => l.len(),
        }
    }

    pub fn labels(&self) -> Option<&[u32]> {
        match self {
            Targets::Labels(l) => Some(l),
            Targets::Values(_) => None,
        }
    }

    pub fn values(&self) -> Option<&Tensor<f64>> {
        match self {
            Targets::Values(t) => Some(t),
            Targets::Labels(_) => None,
        }
    }
}

/// One episode: a support set to adapt on and a query set to score on.
///
/// For regression tasks `n_way` is 0, `k_shot` is the number of support rows
/// and `q_per_class` the number of query rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub kind: TaskKind,
    pub support_x: Tensor<f64>,
    pub support_y: Targets,
    pub query_x: Tensor<f64>,
    pub query_y: Targets,
    pub n_way: usize,
    pub k_shot: usize,
    pub q_per_class: usize,
    pub origin: String,
}

impl Task {
    pub fn feature_dim(&self) -> usize {
        self.support_x.cols()
    }

    /// Checks the episode shape law for this task's kind.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("task from `{}`: {msg}", self.origin)));
        if self.support_x.shape().len() != 2 || self.query_x.shape().len() != 2 {
            return bad("inputs must be 2-D".into());
        }
        if self.support_x.cols() != self.query_x.cols() {
            return bad("support and query feature widths differ".into());
        }
        let (ns, nq) = (self.support_x.rows(), self.query_x.rows());
        if self.support_y.rows() != ns || self.query_y.rows() != nq {
            return bad("target rows do not match input rows".into());
        }
        match self.kind {
            TaskKind::Regression => {
                let (Targets::Values(sy), Targets::Values(qy)) = (&self.support_y, &self.query_y) else {
                    return bad("regression task with label targets".into());
                };
                if sy.shape().len() != 2 || qy.shape().len() != 2 || sy.cols() != qy.cols() {
                    return bad("regression targets must be 2-D with equal widths".into());
                }
                if ns != self.k_shot || nq != self.q_per_class {
                    return bad(format!("expected {} support / {} query rows", self.k_shot, self.q_per_class));
                }
            }
            TaskKind::Classification => {
                let (Targets::Labels(sy), Targets::Labels(qy)) = (&self.support_y, &self.query_y) else {
                    return bad("classification task with value targets".into());
                };
                if ns != self.n_way * self.k_shot || nq != self.n_way * self.q_per_class {
                    return bad(format!(
                        "{}-way {}-shot with {} query/class needs {} support and {} query rows",
                        self.n_way,
                        self.k_shot,
                        self.q_per_class,
                        self.n_way * self.k_shot,
                        self.n_way * self.q_per_class
                    ));
                }
                if sy.iter().chain(qy).any(|&l| l as usize >= self.n_way) {
                    return bad("label out of range".into());
                }
            }
        }
        Ok(())
    }
}

/// A task family and its parameters, as written in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskDistribution {
    Sinusoid(SinusoidConfig),
    Spurious(SpuriousClassConfig),
}

impl TaskDistribution {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskDistribution::Sinusoid(_) => TaskKind::Regression,
            TaskDistribution::Spurious(_) => TaskKind::Classification,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TaskDistribution::Sinusoid(c) => c.validate(),
            TaskDistribution::Spurious(c) => c.validate(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            TaskDistribution::Sinusoid(_) => 1,
            TaskDistribution::Spurious(c) => c.core_dim + c.spur_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            TaskDistribution::Sinusoid(_) => 1,
            TaskDistribution::Spurious(c) => c.n_way,
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng, origin: &str) -> Task {
        match self {
            TaskDistribution::Sinusoid(c) => sample_sinusoid_task(c, rng, origin),
            TaskDistribution::Spurious(c) => sample_spurious_task(c, rng, origin),
        }
    }

    /// Task number `index` of the stream `stream` under `base_seed`.
    pub fn sample_indexed(&self, base_seed: u64, stream: u64, index: u64, origin: &str) -> Task {
        let mut rng = task_rng(base_seed, stream, index);
        self.sample(&mut rng, origin)
    }
}

/// Independent generator for one task: seeded with `base_seed + index` on
/// ChaCha stream `stream`, so training, validation and evaluation draws
/// never overlap.
pub fn task_rng(base_seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(index));
    rng.set_stream(stream);
    rng
}

/// Returns a copy of `dist` with the fields named in `shift` overridden.
///
/// Keys must be existing fields of the distribution's config; the family
/// itself (`kind`) cannot be changed.
pub fn make_shifted(dist: &TaskDistribution, shift: &serde_json::Map<String, serde_json::Value>) -> Result<TaskDistribution> {
    let mut value = serde_json::to_value(dist).map_err(|e| Error::Config(e.to_string()))?;
    let fields = value.as_object_mut().expect("distributions serialize as objects");
    for (key, v) in shift {
        if key == "kind" {
            return Err(Error::Config("a shift cannot change the task family".into()));
        }
        match fields.get_mut(key) {
            Some(slot) => *slot = v.clone(),
            None => return Err(Error::Config(format!("unknown field `{key}` in shift"))),
        }
    }
    let shifted: TaskDistribution =
        serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid shift: {e}")))?;
    shifted.validate()?;
    Ok(shifted)
}

pub(crate) fn check_interval(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::Config(format!("{name} must be a finite interval with low <= high, got {r:?}")));
    }
    Ok(())
}
