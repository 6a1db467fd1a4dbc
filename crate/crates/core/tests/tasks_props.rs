use iml_core::tasks::{
    decode_tasks, encode_tasks, make_shifted, read_tasks, write_tasks, SinusoidConfig, SpuriousClassConfig, Task,
    TaskDistribution, TaskKind, DEFAULT_QUERY_PER_CLASS,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use serde_json::json;

/// Least-squares linear probe on the spurious block only: one-hot targets,
/// a bias column, minimum-norm solution through the pseudo-inverse.
struct Probe {
    w: DMatrix<f64>,
    core_dim: usize,
}

fn design(x: &iml_core::Tensor64, core_dim: usize) -> DMatrix<f64> {
    let (rows, cols) = (x.rows(), x.cols());
    let spur = cols - core_dim;
    DMatrix::from_fn(rows, spur + 1, |r, c| if c == spur { 1.0 } else { x.data()[r * cols + core_dim + c] })
}

impl Probe {
    fn fit(xs: &[&iml_core::Tensor64], labels: &[&[u32]], n_way: usize, core_dim: usize) -> Probe {
        let blocks: Vec<DMatrix<f64>> = xs.iter().map(|x| design(x, core_dim)).collect();
        let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
        let cols = blocks[0].ncols();
        let mut a = DMatrix::zeros(rows, cols);
        let mut y = DMatrix::zeros(rows, n_way);
        let mut r = 0;
        for (b, l) in blocks.iter().zip(labels) {
            a.rows_mut(r, b.nrows()).copy_from(b);
            for (i, &c) in l.iter().enumerate() {
                y[(r + i, c as usize)] = 1.0;
            }
            r += b.nrows();
        }
        let w = a.pseudo_inverse(1e-10).unwrap() * y;
        Probe { w, core_dim }
    }

    fn accuracy(&self, x: &iml_core::Tensor64, labels: &[u32]) -> (usize, usize) {
        let scores = design(x, self.core_dim) * &self.w;
        let correct = labels
            .iter()
            .enumerate()
            .filter(|&(r, &c)| scores.row(r).transpose().argmax().0 == c as usize)
            .count();
        (correct, labels.len())
    }
}

fn labels(t: &Task) -> (&[u32], &[u32]) {
    (t.support_y.labels().unwrap(), t.query_y.labels().unwrap())
}

fn spurious(rho: f64, k_shot: usize, spur_strength: f64) -> (SpuriousClassConfig, TaskDistribution) {
    let cfg = SpuriousClassConfig {
        rho,
        k_shot,
        spur_strength,
        ..SpuriousClassConfig::default()
    };
    (cfg.clone(), TaskDistribution::Spurious(cfg))
}

#[test]
fn perfectly_aligned_shortcut_is_fully_predictive() {
    let (cfg, d) = spurious(1.0, 1, 10.0);
    for i in 0..50 {
        let t = d.sample_indexed(3, 0, i, "aligned");
        let (ls, lq) = labels(&t);
        let probe = Probe::fit(&[&t.support_x], &[ls], cfg.n_way, cfg.core_dim);
        assert_eq!(probe.accuracy(&t.query_x, lq), (lq.len(), lq.len()));
    }
}

#[test]
fn uninformative_shortcut_gives_chance() {
    let (cfg, d) = spurious(0.2, 5, 10.0);
    let (mut correct, mut total) = (0, 0);
    for i in 0..400 {
        let t = d.sample_indexed(4, 0, i, "chance");
        let (ls, lq) = labels(&t);
        let probe = Probe::fit(&[&t.support_x], &[ls], cfg.n_way, cfg.core_dim);
        let (c, n) = probe.accuracy(&t.query_x, lq);
        correct += c;
        total += n;
    }
    let p = 1.0 / cfg.n_way as f64;
    let sigma = (p * (1.0 - p) / total as f64).sqrt();
    let acc = correct as f64 / total as f64;
    assert!((acc - p).abs() < 3.0 * sigma, "accuracy {acc}, chance {p}, sigma {sigma}");
}

#[test]
fn probe_accuracy_falls_as_eval_rho_moves_away() {
    let (cfg, train) = spurious(0.95, 5, 1.0);
    let train_tasks: Vec<Task> = (0..200).map(|i| train.sample_indexed(0, 1, i, "train")).collect();
    let xs: Vec<_> = train_tasks.iter().map(|t| &t.support_x).collect();
    let ls: Vec<_> = train_tasks.iter().map(|t| labels(t).0).collect();
    let probe = Probe::fit(&xs, &ls, cfg.n_way, cfg.core_dim);

    let mut last = f64::INFINITY;
    for rho in [0.95, 0.75, 0.5, 0.25, 0.05] {
        let shifted = make_shifted(&train, json!({ "rho": rho }).as_object().unwrap()).unwrap();
        let (mut correct, mut total) = (0, 0);
        for i in 0..1000 {
            let t = shifted.sample_indexed(0, 3, i, "eval");
            let (c, n) = probe.accuracy(&t.query_x, labels(&t).1);
            correct += c;
            total += n;
        }
        let acc = correct as f64 / total as f64;
        assert!(acc < last, "rho {rho}: {acc} not below {last}");
        last = acc;
    }
}

fn mixed_batch(seed: u64) -> Vec<Task> {
    let sin = TaskDistribution::Sinusoid(SinusoidConfig {
        noise_sd: 0.3,
        ..SinusoidConfig::default()
    });
    let spur = TaskDistribution::Spurious(SpuriousClassConfig::default());
    (0..10)
        .map(|i| {
            if i % 2 == 0 {
                sin.sample_indexed(seed, 0, i, "sinusoid")
            } else {
                spur.sample_indexed(seed, 0, i, "spurious/ñ")
            }
        })
        .collect()
}

fn assert_bitwise_equal(a: &Task, b: &Task) {
    assert_eq!(a.kind, b.kind);
    assert_eq!((a.n_way, a.k_shot, a.q_per_class), (b.n_way, b.k_shot, b.q_per_class));
    assert_eq!(a.origin, b.origin);
    for (x, y) in [(&a.support_x, &b.support_x), (&a.query_x, &b.query_x)] {
        assert_eq!(x.shape(), y.shape());
        assert!(x.data().iter().zip(y.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
    assert_eq!(a.support_y, b.support_y);
    assert_eq!(a.query_y, b.query_y);
}

#[test]
fn episode_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tasks.bin");
    let tasks = mixed_batch(17);
    write_tasks(&path, &tasks).unwrap();
    let back = read_tasks(&path).unwrap();
    assert_eq!(back.len(), 10);
    for (a, b) in tasks.iter().zip(&back) {
        assert_bitwise_equal(a, b);
    }
    assert!(read_tasks(dir.path().join("missing.bin")).is_err());
}

#[test]
fn every_truncation_is_a_parse_error() {
    let bytes = encode_tasks(&mixed_batch(2)[..2]);
    for cut in 0..bytes.len() {
        match decode_tasks(&bytes[..cut]) {
            Err(iml_core::Error::Parse { offset, .. }) => assert!(offset <= cut),
            other => panic!("cut at {cut}: {other:?}"),
        }
    }
}

#[test]
fn x_range_shift_moves_all_inputs() {
    let base = TaskDistribution::Sinusoid(SinusoidConfig::default());
    let shifted = make_shifted(&base, json!({ "x_range": [5.0, 10.0] }).as_object().unwrap()).unwrap();
    for i in 0..200 {
        let t = shifted.sample_indexed(1, 0, i, "far");
        assert!(t.support_x.data().iter().chain(t.query_x.data()).all(|x| (5.0..=10.0).contains(x)));
    }
}

proptest! {
    #[test]
    fn classification_shape_law(n_way in 1usize..7, k_shot in 1usize..6, seed in 0u64..1000, rho in 0.0f64..1.0) {
        let cfg = SpuriousClassConfig { n_way, k_shot, rho, ..SpuriousClassConfig::default() };
        let dim = cfg.feature_dim();
        let t = TaskDistribution::Spurious(cfg).sample_indexed(seed, 0, 0, "p");
        prop_assert_eq!(t.kind, TaskKind::Classification);
        prop_assert_eq!(t.q_per_class, DEFAULT_QUERY_PER_CLASS);
        prop_assert_eq!(t.support_x.shape(), &[n_way * k_shot, dim]);
        prop_assert_eq!(t.query_x.shape(), &[n_way * DEFAULT_QUERY_PER_CLASS, dim]);
        let (ls, lq) = labels(&t);
        for c in 0..n_way as u32 {
            prop_assert_eq!(ls.iter().filter(|&&l| l == c).count(), k_shot);
            prop_assert_eq!(lq.iter().filter(|&&l| l == c).count(), DEFAULT_QUERY_PER_CLASS);
        }
        prop_assert!(t.validate().is_ok());
    }

    #[test]
    fn regression_shape_law(k_shot in 1usize..20, q in 1usize..20, seed in 0u64..1000) {
        let cfg = SinusoidConfig { k_shot, q, ..SinusoidConfig::default() };
        let t = TaskDistribution::Sinusoid(cfg).sample_indexed(seed, 0, 0, "p");
        prop_assert_eq!(t.support_x.shape(), &[k_shot, 1]);
        prop_assert_eq!(t.query_x.shape(), &[q, 1]);
        prop_assert_eq!(t.support_y.rows(), k_shot);
        prop_assert_eq!(t.query_y.rows(), q);
    }

    #[test]
    fn sampling_is_deterministic(seed in 0u64..u64::MAX / 2, index in 0u64..1000) {
        for d in [TaskDistribution::Sinusoid(SinusoidConfig::default()), TaskDistribution::Spurious(SpuriousClassConfig::default())] {
            prop_assert_eq!(encode_tasks(&[d.sample_indexed(seed, 2, index, "d")]), encode_tasks(&[d.sample_indexed(seed, 2, index, "d")]));
        }
    }
}
