use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Targets, Task, TaskKind, DEFAULT_QUERY_PER_CLASS};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// N-way episodes whose inputs are `[core | spurious]`.
///
/// Core block: each task draws fresh class prototypes from
/// `N(0, core_sd^2 I)`; a sample is its prototype plus unit Gaussian noise.
/// Spurious block: `spur_strength * code(c)` where `c` is the sample's own
/// label with probability `rho` and otherwise a uniformly chosen other
/// label. Codes are fixed across tasks, so the block is a shortcut that
/// holds only as long as `rho` does.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpuriousClassConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_per_class: usize,
    pub core_dim: usize,
    pub spur_dim: usize,
    pub core_sd: f64,
    pub spur_strength: f64,
    pub rho: f64,
}

impl Default for SpuriousClassConfig {
    fn default() -> Self {
        SpuriousClassConfig {
            n_way: 5,
            k_shot: 1,
            q_per_class: DEFAULT_QUERY_PER_CLASS,
            core_dim: 8,
            spur_dim: 8,
            core_sd: 1.0,
            spur_strength: 1.0,
            rho: 0.95,
        }
    }
}

impl SpuriousClassConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_way == 0 || self.k_shot == 0 || self.q_per_class == 0 {
            return Err(Error::Config("n_way, k_shot and q_per_class must be positive".into()));
        }
        if self.core_dim == 0 || self.spur_dim == 0 {
            return Err(Error::Config("core_dim and spur_dim must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(self.core_sd >= 0.0 && self.core_sd.is_finite() && self.spur_strength.is_finite()) {
            return Err(Error::Config("core_sd must be >= 0 and spur_strength finite".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.core_dim + self.spur_dim
    }
}

/// Unscaled spurious code of label `c`: a one-hot vector at `c mod spur_dim`.
pub fn spurious_code(c: usize, spur_dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; spur_dim];
    v[c % spur_dim] = 1.0;
    v
}

pub fn sample_spurious_task(cfg: &SpuriousClassConfig, rng: &mut ChaCha8Rng, origin: &str) -> Task {
    let n = cfg.n_way;
    let dim = cfg.feature_dim();
    let prototypes: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..cfg.core_dim)
                .map(|_| cfg.core_sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let mut draw = |per_class: usize| {
        let mut xs = Vec::with_capacity(n * per_class * dim);
        let mut labels = Vec::with_capacity(n * per_class);
        for (c, proto) in prototypes.iter().enumerate() {
            for _ in 0..per_class {
                xs.extend(proto.iter().map(|&m| m + rng.sample::<f64, _>(StandardNormal)));
                let shown = if n == 1 || rng.random::<f64>() < cfg.rho {
                    c
                } else {
                    // uniform over the other n - 1 labels
                    let k = rng.random_range(0..n - 1);
                    if k >= c {
                        k + 1
                    } else {
                        k
                    }
                };
                xs.extend(spurious_code(shown, cfg.spur_dim).into_iter().map(|v| cfg.spur_strength * v));
                labels.push(c as u32);
            }
        }
        (Tensor::from_parts(vec![n * per_class, dim], xs), Targets::Labels(labels))
    };
    let (support_x, support_y) = draw(cfg.k_shot);
    let (query_x, query_y) = draw(cfg.q_per_class);
    Task {
        kind: TaskKind::Classification,
        support_x,
        support_y,
        query_x,
        query_y,
        n_way: n,
        k_shot: cfg.k_shot,
        q_per_class: cfg.q_per_class,
        origin: origin.to_string(),
    }
}
