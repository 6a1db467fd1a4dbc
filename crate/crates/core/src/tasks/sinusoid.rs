use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{check_interval, Targets, Task, TaskKind};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// `y = A sin(x + phase) + noise` with per-task amplitude and phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinusoidConfig {
    pub amp_range: [f64; 2],
    pub phase_range: [f64; 2],
    pub x_range: [f64; 2],
    pub noise_sd: f64,
    pub k_shot: usize,
    /// Query points per task.
    pub q: usize,
}

impl Default for SinusoidConfig {
    fn default() -> Self {
        SinusoidConfig {
            amp_range: [0.1, 5.0],
            phase_range: [0.0, std::f64::consts::PI],
            x_range: [-5.0, 5.0],
            noise_sd: 0.0,
            k_shot: 5,
            q: 10,
        }
    }
}

impl SinusoidConfig {
    pub fn validate(&self) -> Result<()> {
        check_interval("amp_range", self.amp_range)?;
        check_interval("phase_range", self.phase_range)?;
        check_interval("x_range", self.x_range)?;
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        if self.k_shot == 0 || self.q == 0 {
            return Err(Error::Config("sinusoid tasks need k_shot >= 1 and q >= 1".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    r[0] + (r[1] - r[0]) * rng.random::<f64>()
}

pub fn sample_sinusoid_task(cfg: &SinusoidConfig, rng: &mut ChaCha8Rng, origin: &str) -> Task {
    let amp = uniform(rng, cfg.amp_range);
    let phase = uniform(rng, cfg.phase_range);
    let mut draw = |n: usize| {
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x = uniform(rng, cfg.x_range);
            let eps: f64 = if cfg.noise_sd > 0.0 {
                cfg.noise_sd * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            xs.push(x);
            ys.push(amp * (x + phase).sin() + eps);
        }
        (
            Tensor::from_parts(vec![n, 1], xs),
            Targets::Values(Tensor::from_parts(vec![n, 1], ys)),
        )
    };
    let (support_x, support_y) = draw(cfg.k_shot);
    let (query_x, query_y) = draw(cfg.q);
    Task {
        kind: TaskKind::Regression,
        support_x,
        support_y,
        query_x,
        query_y,
        n_way: 0,
        k_shot: cfg.k_shot,
        q_per_class: cfg.q,
        origin: origin.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::task_rng;

    #[test]
    fn fixed_amplitude_and_phase() {
        let cfg = SinusoidConfig {
            amp_range: [1.0, 1.0],
            phase_range: [0.0, 0.0],
            x_range: [std::f64::consts::FRAC_PI_2; 2],
            ..SinusoidConfig::default()
        };
        let t = sample_sinusoid_task(&cfg, &mut task_rng(0, 0, 0), "fixed");
        for &y in t.support_y.values().unwrap().data() {
            assert_eq!(y, 1.0);
        }
        t.validate().unwrap();
    }

    #[test]
    fn same_seed_same_task() {
        let cfg = SinusoidConfig::default();
        let a = sample_sinusoid_task(&cfg, &mut task_rng(11, 0, 0), "s");
        let b = sample_sinusoid_task(&cfg, &mut task_rng(11, 0, 0), "s");
        assert_eq!(a, b);
        assert_eq!(a.support_x.shape(), &[5, 1]);
        assert_eq!(a.query_x.shape(), &[10, 1]);
    }

    // Var[y] = E[A^2] E[sin^2] - (E[A] E[sin])^2 + noise^2, with the sine
    // moments integrated over the actual x and phase ranges.
    #[test]
    fn output_variance_matches_moments() {
        let cfg = SinusoidConfig {
            noise_sd: 0.3,
            k_shot: 1,
            q: 1,
            ..SinusoidConfig::default()
        };
        let n = 10_000;
        let mut ys = Vec::with_capacity(n);
        for i in 0..n {
            let t = sample_sinusoid_task(&cfg, &mut task_rng(0, 9, i as u64), "mc");
            ys.push(t.support_y.values().unwrap().data()[0]);
        }
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;

        let (a0, a1) = (0.1f64, 5.0f64);
        let e_a2 = (a1.powi(3) - a0.powi(3)) / (3.0 * (a1 - a0));
        let e_a = (a0 + a1) / 2.0;
        // E[sin^2(x+phi)] and E[sin(x+phi)] by midpoint quadrature over x and phi
        let m = 400;
        let (mut s1, mut s2) = (0.0, 0.0);
        for i in 0..m {
            let x = -5.0 + 10.0 * (i as f64 + 0.5) / m as f64;
            for j in 0..m {
                let p = std::f64::consts::PI * (j as f64 + 0.5) / m as f64;
                let s = (x + p).sin();
                s1 += s;
                s2 += s * s;
            }
        }
        let (s1, s2) = (s1 / (m * m) as f64, s2 / (m * m) as f64);
        let expected = e_a2 * s2 - (e_a * s1).powi(2) + 0.09;
        let half = e_a2 / 2.0 + 0.09;
        assert!((var - expected).abs() / expected < 0.05, "{var} vs {expected}");
        assert!((var - half).abs() / half < 0.05, "{var} vs {half}");
    }
}
