use iml_core::autodiff::{check_grad, Graph, NodeId, Op, Tensor};
use iml_core::model::{forward, init_params, Activation, MlpSpec, OutputKind};
use iml_core::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

/// Reduces any node to a scalar with fixed random weights so every output
/// coordinate contributes a distinct amount.
fn weighted_sum(g: &mut Graph<f64>, x: NodeId, weights: &Tensor<f64>) -> Result<NodeId> {
    let shape = g.shape(x)?.to_vec();
    let w = g.constant(weights.reshaped(&shape))?;
    let p = g.mul(x, w)?;
    g.sum(p)
}

#[derive(Clone, Copy, Debug)]
enum Case {
    Add,
    Sub,
    Mul,
    ScalarBroadcast,
    ScalarMul,
    MatMul,
    Transpose,
    Tanh,
    Relu,
    Square,
    Sum,
    Mean,
    Mse,
    Softmax,
    SoftmaxXent,
    Expand,
    Reshape,
}

const CASES: [Case; 17] = [
    Case::Add,
    Case::Sub,
    Case::Mul,
    Case::ScalarBroadcast,
    Case::ScalarMul,
    Case::MatMul,
    Case::Transpose,
    Case::Tanh,
    Case::Relu,
    Case::Square,
    Case::Sum,
    Case::Mean,
    Case::Mse,
    Case::Softmax,
    Case::SoftmaxXent,
    Case::Expand,
    Case::Reshape,
];

fn run_case(case: Case, rng: &mut ChaCha8Rng) -> f64 {
    let (r, c) = (rng.random_range(1..4usize), rng.random_range(1..5usize));
    let a = rand_tensor(rng, &[r, c]);
    let b = rand_tensor(rng, &[r, c]);
    let bt = rand_tensor(rng, &[c, 3]);
    let s = rand_tensor(rng, &[]);
    let w = rand_tensor(rng, &[r * c.max(3)]);
    let w_rc = Tensor::vector(w.data()[..r * c].to_vec());
    let w_r3 = Tensor::vector(w.data()[..r * 3].to_vec());
    let labels: Vec<usize> = (0..r).map(|_| rng.random_range(0..c)).collect();
    let k = rng.random_range(-2.0..2.0);

    let report = match case {
        Case::Add | Case::Sub | Case::Mul => {
            let op = match case {
                Case::Add => Op::Add,
                Case::Sub => Op::Sub,
                _ => Op::Mul,
            };
            check_grad(
                |g, x| {
                    let y = g.apply(op.clone(), &[x[0], x[1]])?;
                    weighted_sum(g, y, &w_rc)
                },
                &[a, b],
                EPS,
            )
        }
        Case::ScalarBroadcast => check_grad(
            |g, x| {
                let y = g.mul(x[1], x[0])?;
                let z = g.sub(y, x[1])?;
                weighted_sum(g, z, &w_rc)
            },
            &[a, s],
            EPS,
        ),
        Case::ScalarMul => check_grad(
            |g, x| {
                let y = g.scale(x[0], k)?;
                weighted_sum(g, y, &w_rc)
            },
            &[a],
            EPS,
        ),
        Case::MatMul => check_grad(
            |g, x| {
                let y = g.matmul(x[0], x[1])?;
                weighted_sum(g, y, &w_r3)
            },
            &[a, bt],
            EPS,
        ),
        Case::Transpose => check_grad(
            |g, x| {
                let y = g.transpose(x[0])?;
                let y = g.square(y)?;
                weighted_sum(g, y, &w_rc)
            },
            &[a],
            EPS,
        ),
        Case::Tanh | Case::Relu | Case::Square | Case::Softmax => {
            let op = match case {
                Case::Tanh => Op::Tanh,
                Case::Relu => Op::Relu,
                Case::Square => Op::Square,
                _ => Op::Softmax,
            };
            check_grad(
                |g, x| {
                    let y = g.apply(op.clone(), &[x[0]])?;
                    weighted_sum(g, y, &w_rc)
                },
                &[a],
                EPS,
            )
        }
        Case::Sum | Case::Mean => {
            let op = if matches!(case, Case::Sum) { Op::Sum } else { Op::Mean };
            check_grad(
                |g, x| {
                    let sq = g.mul(x[0], x[1])?;
                    let y = g.apply(op.clone(), &[sq])?;
                    g.square(y)
                },
                &[a, b],
                EPS,
            )
        }
        Case::Mse => check_grad(|g, x| g.mse(x[0], x[1]), &[a, b], EPS),
        Case::SoftmaxXent => check_grad(|g, x| g.softmax_xent(x[0], &labels), &[a], EPS),
        Case::Expand => check_grad(
            |g, x| {
                let e = g.expand(x[0], &[r, c])?;
                let y = g.mul(e, x[1])?;
                let y = g.tanh(y)?;
                weighted_sum(g, y, &w_rc)
            },
            &[s, b],
            EPS,
        ),
        Case::Reshape => check_grad(
            |g, x| {
                let y = g.reshape(x[0], &[c, r])?;
                let y = g.tanh(y)?;
                weighted_sum(g, y, &w_rc)
            },
            &[a],
            EPS,
        ),
    }
    .unwrap();
    assert!(report.non_finite.is_empty(), "{case:?}: {report:?}");
    report.max_rel_err
}

#[test]
fn every_op_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1FF);
    for case in CASES {
        let mut worst = 0.0f64;
        for _ in 0..100 {
            worst = worst.max(run_case(case, &mut rng));
        }
        assert!(worst < TOL, "{case:?}: max rel err {worst}");
    }
}

#[test]
fn mlp_with_mse_at_seed_zero() {
    let spec = MlpSpec::sinusoid_default();
    let params = init_params::<f64>(&spec, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = rand_tensor(&mut rng, &[5, 1]);
    let y = rand_tensor(&mut rng, &[5, 1]);
    let report = check_grad(
        |g, p| {
            let xn = g.constant(x.clone())?;
            let yn = g.constant(y.clone())?;
            let out = forward(&spec, g, p, xn)?;
            g.mse(out, yn)
        },
        &params.unflatten(),
        EPS,
    )
    .unwrap();
    assert_eq!(report.entries.len(), spec.param_count());
    assert!(report.passes(TOL), "max rel err {}", report.max_rel_err);
}

// grad(f)^T v computed analytically, then differentiated again, must agree
// with central differences of the analytic first gradient.
#[test]
fn second_order_norm_of_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..10 {
        let act = if trial % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let spec = MlpSpec::new(vec![3, 5, 4, 2], act, OutputKind::NWayLogits).unwrap();
        let params = init_params::<f64>(&spec, trial);
        let x = rand_tensor(&mut rng, &[4, 3]);
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..2)).collect();
        let report = check_grad(
            |g, p| {
                let xn = g.constant(x.clone())?;
                let out = forward(&spec, g, p, xn)?;
                let h = g.softmax_xent(out, &labels)?;
                let grads = g.grad(h, p)?;
                let mut total = None;
                for d in grads {
                    let sq = g.square(d)?;
                    let s = g.sum(sq)?;
                    total = Some(match total {
                        Some(t) => g.add(t, s)?,
                        None => s,
                    });
                }
                Ok(total.unwrap())
            },
            &params.unflatten(),
            EPS,
        )
        .unwrap();
        assert!(report.passes(1e-3), "trial {trial}: {}", report.max_rel_err);
    }
}

fn eval_grads(build: impl Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>, point: &[Tensor<f64>]) -> Vec<Vec<f64>> {
    let mut g = Graph::new();
    let leaves: Vec<_> = point.iter().map(|t| g.leaf(t.clone()).unwrap()).collect();
    let out = build(&mut g, &leaves).unwrap();
    let grads = g.grad(out, &leaves).unwrap();
    grads.into_iter().map(|d| g.eval(d).unwrap().to_f64_vec()).collect()
}

fn small_net_loss(g: &mut Graph<f64>, p: &[NodeId], x: &Tensor<f64>, y: &Tensor<f64>) -> Result<NodeId> {
    let spec = MlpSpec::new(vec![2, 6, 1], Activation::Tanh, OutputKind::Regression).unwrap();
    let xn = g.constant(x.clone())?;
    let yn = g.constant(y.clone())?;
    let out = forward(&spec, g, p, xn)?;
    g.mse(out, yn)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grad_is_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = MlpSpec::new(vec![2, 6, 1], Activation::Tanh, OutputKind::Regression).unwrap();
        let params = init_params::<f64>(&spec, seed).unflatten();
        let x = rand_tensor(&mut rng, &[3, 2]);
        let y1 = rand_tensor(&mut rng, &[3, 1]);
        let y2 = rand_tensor(&mut rng, &[3, 1]);
        let gf = eval_grads(|g, p| small_net_loss(g, p, &x, &y1), &params);
        let gh = eval_grads(|g, p| {
            let h = small_net_loss(g, p, &x, &y2)?;
            g.square(h)
        }, &params);
        let gc = eval_grads(|g, p| {
            let f = small_net_loss(g, p, &x, &y1)?;
            let h = small_net_loss(g, p, &x, &y2)?;
            let h = g.square(h)?;
            let af = g.scale(f, a)?;
            let bh = g.scale(h, b)?;
            g.add(af, bh)
        }, &params);
        for ((cf, ch), cc) in gf.iter().zip(&gh).zip(&gc) {
            for ((u, v), w) in cf.iter().zip(ch).zip(cc) {
                prop_assert!((a * u + b * v - w).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn eval_is_bit_deterministic(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = MlpSpec::classifier_default(4, 3);
        let params = init_params::<f64>(&spec, seed).unflatten();
        let x = rand_tensor(&mut rng, &[6, 4]);
        let run = || eval_grads(|g, p| {
            let xn = g.constant(x.clone())?;
            let out = forward(&spec, g, p, xn)?;
            g.softmax_xent(out, &[0, 1, 2, 2, 1, 0])
        }, &params);
        let (u, v) = (run(), run());
        for (a, b) in u.iter().flatten().zip(v.iter().flatten()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bounded_params_never_produce_nan(seed in 0u64..10_000, scale in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = MlpSpec::sinusoid_default();
        let mut p = init_params::<f64>(&spec, seed);
        for v in p.values_mut() { *v *= scale; }
        let x = rand_tensor(&mut rng, &[8, 1]);
        let mut g = Graph::new();
        let nodes = p.to_leaves(&mut g).unwrap();
        let xn = g.constant(x).unwrap();
        let out = forward(&spec, &mut g, &nodes, xn).unwrap();
        prop_assert!(g.eval(out).unwrap().is_finite());
    }

    #[test]
    fn param_count_matches_layout(widths in proptest::collection::vec(1usize..20, 2..6)) {
        let spec = MlpSpec::new(widths, Activation::Relu, OutputKind::NWayLogits).unwrap();
        let layout = spec.layout();
        prop_assert_eq!(layout.iter().map(|e| e.len()).sum::<usize>(), spec.param_count());
        let p = init_params::<f64>(&spec, 0);
        let back = iml_core::model::ParamVector::flatten(layout, &p.unflatten()).unwrap();
        prop_assert_eq!(back.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                        p.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }
}
