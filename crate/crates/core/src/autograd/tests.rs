use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::par::Exec;

const H: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

type Unary = for<'t> fn(Var<'t>) -> Var<'t>;

/// Every unary primitive, paired with an input shape and range that keeps it in-domain.
fn unary_cases() -> Vec<(&'static str, Unary, Vec<usize>, (f64, f64))> {
    let m = vec![3, 4];
    let r = (-2.0, 2.0);
    vec![
        ("neg", |x| x.neg(), m.clone(), r),
        ("scale", |x| x.scale(-1.7), m.clone(), r),
        ("add_scalar", |x| x.add_scalar(0.3), m.clone(), r),
        ("sigmoid", |x| x.sigmoid(), m.clone(), r),
        ("tanh", |x| x.tanh(), m.clone(), r),
        ("exp", |x| x.exp(), m.clone(), r),
        ("log", |x| x.log(), m.clone(), (0.2, 2.0)),
        ("sqrt", |x| x.sqrt(), m.clone(), (0.2, 2.0)),
        ("softplus", |x| x.softplus(), m.clone(), r),
        ("softmax", |x| x.softmax(), m.clone(), r),
        ("softmax_1d", |x| x.softmax(), vec![5], r),
        ("square", |x| x.square(), m.clone(), r),
        ("sum", |x| x.sum(), m.clone(), r),
        ("mean", |x| x.mean(), m.clone(), r),
        ("l2_norm", |x| x.l2_norm(), m.clone(), r),
        ("sum_rows", |x| x.sum_rows(), m.clone(), r),
        ("sum_cols", |x| x.sum_cols(), m.clone(), r),
        ("broadcast_rows", |x| x.broadcast_rows(3), vec![4], r),
        ("broadcast_cols", |x| x.broadcast_cols(2), vec![4], r),
        ("expand", |x| x.expand(&[2, 3]), vec![], r),
        ("reshape", |x| x.reshape(&[2, 6]), m.clone(), r),
        ("slice_cols", |x| x.slice_cols(1, 3), m.clone(), r),
        ("pad_cols", |x| x.pad_cols(2, 7), m.clone(), r),
        ("slice_rows", |x| x.slice_rows(1, 3), m.clone(), r),
        ("pad_rows", |x| x.pad_rows(1, 5), m.clone(), r),
        ("gather_rows", |x| x.gather_rows(&[2, 0, 2]), m.clone(), r),
        ("scatter_rows", |x| x.scatter_rows(&[1, 1, 0], 2), m.clone(), r),
        ("self_concat", |x| Var::concat(&[x, x.tanh()]), m.clone(), r),
        ("self_concat_rows", |x| Var::concat_rows(&[x, x.exp()]), m.clone(), r),
        ("self_matmul", |x| x.matmul_t(x, false, true), m.clone(), r),
        ("self_matmul_tn", |x| x.matmul_t(x, true, false), m.clone(), r),
        ("self_div", |x| x.div(x.square().add_scalar(1.0)), m.clone(), r),
        ("self_sub", |x| x.sub(x.sigmoid()), m, r),
    ]
}

/// `sum(w ⊙ op(x))` with a fixed random weighting, so every output entry matters.
fn weighted<'t>(op: Unary, x: Var<'t>, seed: u64) -> Var<'t> {
    let y = op(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, &y.shape(), -1.0, 1.0);
    y.mul(x.tape().constant(w)).sum()
}

#[test]
fn every_unary_primitive_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (name, op, shape, (lo, hi)) in unary_cases() {
        for trial in 0..5 {
            let theta = random(&mut rng, &shape, lo, hi);
            let err = grad_check(|_, x| weighted(op, x, trial), &theta, H);
            assert!(err <= 1e-4, "{name}: relative error {err:e}");
        }
    }
}

#[test]
fn binary_primitives_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let other = random(&mut rng, &[3, 4], 0.5, 2.0);
    let cases: Vec<(&str, Box<dyn for<'t> Fn(Var<'t>, Var<'t>) -> Var<'t> + Sync + Send>)> = vec![
        ("add", Box::new(|x, y| x.add(y))),
        ("sub", Box::new(|x, y| y.sub(x))),
        ("mul", Box::new(|x, y| x.mul(y))),
        ("div_num", Box::new(|x, y| x.div(y))),
        ("div_den", Box::new(|x, y| y.div(x.square().add_scalar(0.5)))),
        ("concat", Box::new(|x, y| Var::concat(&[y, x, y]))),
    ];
    for (name, op) in &cases {
        let theta = random(&mut rng, &[3, 4], -2.0, 2.0);
        let err = grad_check(
            |tape, x| {
                let y = tape.constant(other.clone());
                op(x, y).mul(op(x, y)).sum()
            },
            &theta,
            H,
        );
        assert!(err <= 1e-4, "{name}: relative error {err:e}");
    }
    // Both matmul operands, all four transpose layouts.
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a_shape = if ta { [4, 3] } else { [3, 4] };
        let b_shape = if tb { [2, 4] } else { [4, 2] };
        let a = random(&mut rng, &a_shape, -2.0, 2.0);
        let b = random(&mut rng, &b_shape, -2.0, 2.0);
        let err_a = grad_check(
            |tape, x| x.matmul_t(tape.constant(b.clone()), ta, tb).tanh().sum(),
            &a,
            H,
        );
        let err_b = grad_check(
            |tape, x| tape.constant(a.clone()).matmul_t(x, ta, tb).tanh().sum(),
            &b,
            H,
        );
        assert!(err_a <= 1e-4 && err_b <= 1e-4, "matmul({ta},{tb}): {err_a:e} {err_b:e}");
    }
}

#[test]
fn every_unary_primitive_has_correct_second_derivative() {
    // h(x) = sum(v ⊙ ∇f(x)); ∇h checked against differences of the first-order gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for (name, op, shape, (lo, hi)) in unary_cases() {
        let theta = random(&mut rng, &shape, lo, hi);
        let v = random(&mut rng, &shape, -1.0, 1.0);
        let first_order = |t: &Tensor| {
            let tape = Tape::new();
            let x = tape.leaf(t.clone());
            let root = weighted(op, x, 5).tanh();
            let g = tape.grad_values(root, &[x]).unwrap().remove(0);
            g.data().iter().zip(v.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let tape = Tape::new();
        let x = tape.leaf(theta.clone());
        let root = weighted(op, x, 5).tanh();
        let g = tape.grad(root, &[x], true).unwrap()[0];
        let h = g.mul(tape.constant(v.clone())).sum();
        let analytic = tape.grad_values(h, &[x]).unwrap().remove(0);
        let numeric = central_difference(first_order, &theta, H, Exec::Sequential);
        let err = max_relative_error(&analytic, &numeric);
        assert!(err <= 1e-4, "{name}: second-order relative error {err:e}");
    }
}

#[test]
fn matmul_examples() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::matrix(2, 2, vec![1., 2., 3., 4.]));
    let id = tape.constant(Tensor::eye(2));
    assert_eq!(a.matmul(id).value().data(), &[1., 2., 3., 4.]);
    let row = tape.constant(Tensor::matrix(1, 2, vec![1., 2.]));
    let col = tape.constant(Tensor::matrix(2, 1, vec![3., 4.]));
    assert_eq!(row.matmul(col).value().data(), &[11.0]);
}

#[test]
fn softmax_examples() {
    let tape = Tape::new();
    let s = tape.constant(Tensor::vector(vec![0., 0., 0.])).softmax().value();
    for v in s.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let s = tape
        .constant(Tensor::vector(vec![1000., 1000.]))
        .softmax()
        .value();
    assert_eq!(s.data(), &[0.5, 0.5]);
}

#[test]
#[should_panic(expected = "add: shape mismatch between [2, 3] and [3, 2]")]
fn shape_mismatch_names_operator_and_shapes() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[3, 2]));
    a.add(b);
}

#[test]
#[should_panic(expected = "log: domain error")]
fn log_of_non_positive_is_a_domain_failure() {
    let tape = Tape::new();
    tape.constant(Tensor::vector(vec![1.0, 0.0])).log();
}

#[test]
fn derivative_examples() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let g = tape.grad_values(x.square(), &[x]).unwrap();
    assert_eq!(g[0].item(), 6.0);

    let x = tape.leaf(Tensor::scalar(0.0));
    let g = tape.grad_values(x.sigmoid(), &[x]).unwrap();
    assert_eq!(g[0].item(), 0.25);
}

#[test]
fn disconnected_leaf_gets_zeros() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::ones(&[2, 3]));
    let y = tape.leaf(Tensor::ones(&[4]));
    let root = x.sum();
    let g = tape.grad_values(root, &[x, y]).unwrap();
    assert_eq!(g[0], Tensor::ones(&[2, 3]));
    assert_eq!(g[1], Tensor::zeros(&[4]));
}

#[test]
fn grad_contract_failures() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::ones(&[2]));
    let c = tape.constant(Tensor::ones(&[2]));
    assert!(tape.grad(x, &[x], false).is_err(), "non-scalar root");
    assert!(tape.grad(x.sum(), &[c], false).is_err(), "constant leaf");
    let other = Tape::new();
    let z = other.leaf(Tensor::ones(&[2]));
    assert!(tape.grad(x.sum(), &[z], false).is_err(), "foreign leaf");
}

#[test]
fn cube_first_and_second_derivative() {
    let theta = Tensor::scalar(2.0);
    let err = grad_check(|_, x| x.mul(x).mul(x), &theta, H);
    assert!(err < 1e-8, "{err:e}");

    let tape = Tape::new();
    let x = tape.leaf(theta);
    let y = x.mul(x).mul(x);
    let dy = tape.grad(y, &[x], true).unwrap()[0];
    assert!((dy.item() - 12.0).abs() < 1e-12);
    let d2y = tape.grad_values(dy, &[x]).unwrap();
    assert!((d2y[0].item() - 12.0).abs() < 1e-12);
}

#[test]
fn two_layer_tanh_network_with_fifty_parameters() {
    // 5 inputs -> 6 hidden -> 2 outputs: 5·6 + 6·2 + 6 + 2 = 50 parameters.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let inputs = random(&mut rng, &[4, 5], -1.0, 1.0);
    let theta = random(&mut rng, &[50], -1.0, 1.0);
    let err = grad_check(
        |tape, p| {
            let x = tape.constant(inputs.clone());
            let p = p.reshape(&[1, 50]);
            let w1 = p.slice_cols(0, 30).reshape(&[5, 6]);
            let b1 = p.slice_cols(30, 36).reshape(&[6]);
            let w2 = p.slice_cols(36, 48).reshape(&[6, 2]);
            let b2 = p.slice_cols(48, 50).reshape(&[2]);
            let h = x.matmul(w1).add(b1.broadcast_rows(4)).tanh();
            h.matmul(w2).add(b2.broadcast_rows(4)).tanh().square().mean()
        },
        &theta,
        H,
    );
    assert!(err < 1e-4, "{err:e}");
}

#[test]
fn second_order_gradient_norm_matches_differences() {
    // g(θ) = ‖∇ₓ f(x, θ)‖², f(x, θ) = sum(tanh(x·W)·c), θ = W.
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x0 = random(&mut rng, &[3, 4], -2.0, 2.0);
    let w0 = random(&mut rng, &[4, 5], -2.0, 2.0);
    let c0 = random(&mut rng, &[3, 5], -1.0, 1.0);
    let build = |tape: &Tape, w: Tensor, create: bool| -> Tensor {
        let x = tape.leaf(x0.clone());
        let w = tape.leaf(w);
        let f = x.matmul(w).tanh().mul(tape.constant(c0.clone())).sum();
        let gx = tape.grad(f, &[x], true).unwrap()[0];
        let g = gx.square().sum();
        if create {
            tape.grad_values(g, &[w]).unwrap().remove(0)
        } else {
            g.value()
        }
    };
    let analytic = build(&Tape::new(), w0.clone(), true);
    let numeric = central_difference(
        |w| build(&Tape::new(), w.clone(), false).item(),
        &w0,
        H,
        Exec::Sequential,
    );
    let err = max_relative_error(&analytic, &numeric);
    assert!(err < 1e-3, "{err:e}");
}

#[test]
fn sum_over_concat_backpropagates_ones() {
    let tape = Tape::new();
    let a = tape.leaf(Tensor::matrix(2, 1, vec![3., -1.]));
    let b = tape.leaf(Tensor::matrix(2, 3, vec![0.5; 6]));
    let g = tape.grad_values(Var::concat(&[a, b]).sum(), &[a, b]).unwrap();
    assert_eq!(g[0], Tensor::ones(&[2, 1]));
    assert_eq!(g[1], Tensor::ones(&[2, 3]));
}

#[test]
fn detached_scope_records_constants() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(2.0));
    let y = tape.detached(|| x.square());
    assert!(!y.is_tracked());
    assert!(x.square().is_tracked());
    assert!(!x.detach().is_tracked());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..4,
        values in proptest::collection::vec(-1e4f64..1e4, 12),
    ) {
        let cols = 12 / rows.min(3).max(1);
        let data = values[..rows.min(3) * cols].to_vec();
        let r = data.len() / cols;
        let tape = Tape::new();
        let s = tape.constant(Tensor::matrix(r, cols, data)).softmax().value();
        for i in 0..r {
            let row = s.row(i);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }
}
