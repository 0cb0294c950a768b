use std::sync::Arc;

use proptest::prelude::*;
use treat_autodiff::{grad_check, Result, Tape, Tensor, Var};

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

/// Projects an arbitrary-shape output onto a scalar with fixed, uneven
/// weights so every output element contributes a distinct amount.
fn project(t: &mut Tape, y: Var) -> Result<Var> {
    let shape = t.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * (i as f64) - 0.01 * (i * i) as f64).collect();
    let wv = t.constant(Tensor::from_vec(shape, w)?);
    let p = t.mul(y, wv)?;
    t.sum(p)
}

fn check_unary(x: Tensor, op: impl Fn(&mut Tape, Var) -> Result<Var>) {
    let report = grad_check(
        |t, v| {
            let y = op(t, v[0])?;
            project(t, y)
        },
        &[x],
        H,
        TOL,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

fn check_binary(a: Tensor, b: Tensor, op: impl Fn(&mut Tape, Var, Var) -> Result<Var>) {
    let report = grad_check(
        |t, v| {
            let y = op(t, v[0], v[1])?;
            project(t, y)
        },
        &[a, b],
        H,
        TOL,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn elementwise_binary(a in matrix(2, 3), b in matrix(2, 3)) {
        check_binary(a.clone(), b.clone(), |t, x, y| t.add(x, y));
        check_binary(a.clone(), b.clone(), |t, x, y| t.sub(x, y));
        check_binary(a.clone(), b.clone(), |t, x, y| t.mul(x, y));
        let shifted = b.map(|v| if v >= 0.0 { v + 0.5 } else { v - 0.5 });
        check_binary(a, shifted, |t, x, y| t.div(x, y));
    }

    #[test]
    fn smooth_unary(a in matrix(3, 2)) {
        check_unary(a.clone(), |t, x| t.tanh(x));
        check_unary(a.clone(), |t, x| t.sigmoid(x));
        check_unary(a.clone(), |t, x| t.sin(x));
        check_unary(a.clone(), |t, x| t.cos(x));
        check_unary(a.clone(), |t, x| t.exp(x));
        check_unary(a.clone(), |t, x| t.square(x));
        check_unary(a.clone(), |t, x| t.neg(x));
        check_unary(a.clone(), |t, x| t.scale(x, -1.7));
        check_unary(a.clone(), |t, x| t.add_scalar(x, 0.4));
        check_unary(a, |t, x| t.softmax_rows(x));
    }

    #[test]
    fn relu_away_from_kink(a in matrix(3, 2)) {
        let a = a.map(|v| if v.abs() < 1e-3 { 0.5 } else { v });
        check_unary(a, |t, x| t.relu(x));
    }

    #[test]
    fn reductions(a in matrix(3, 4)) {
        check_unary(a.clone(), |t, x| t.sum(x));
        check_unary(a.clone(), |t, x| t.mean(x));
        check_unary(a.clone(), |t, x| t.row_sums(x));
        check_unary(a.clone(), |t, x| t.col_sums(x));
        check_unary(a.clone(), |t, x| t.l2_norm_sq(x));
        check_unary(a.clone(), |t, x| t.transpose(x));
        check_unary(a, |t, x| t.reshape(x, vec![2, 6]));
    }

    #[test]
    fn matmul_both_sides(a in matrix(2, 3), b in matrix(3, 4)) {
        check_binary(a, b, |t, x, y| t.matmul(x, y));
    }

    #[test]
    fn scalar_mul_both_sides(a in matrix(2, 2), s in -2.0f64..2.0) {
        check_binary(a, Tensor::scalar(s), |t, x, y| t.scalar_mul(x, y));
    }

    #[test]
    fn structural(a in matrix(4, 3), b in matrix(4, 2)) {
        check_binary(a.clone(), b.clone(), |t, x, y| t.concat_cols(&[x, y, x]));
        check_binary(a.clone(), a.clone(), |t, x, y| t.concat_rows(&[x, y]));
        check_unary(a.clone(), |t, x| t.slice_cols(x, 1, 3));
        check_unary(a.clone(), |t, x| t.slice_rows(x, 1, 3));
        let idx: Arc<[usize]> = Arc::from(vec![3usize, 0, 0, 2, 3]);
        check_unary(a.clone(), |t, x| t.gather_rows(x, &idx));
        let idx4: Arc<[usize]> = Arc::from(vec![1usize, 1, 0, 2]);
        check_unary(a.clone(), |t, x| t.scatter_add_rows(x, &idx4, 3));
        check_unary(b.clone(), |t, x| {
            let r = t.slice_rows(x, 0, 1)?;
            t.repeat_rows(r, 5)
        });
        check_unary(b, |t, x| {
            let c = t.slice_cols(x, 1, 2)?;
            t.repeat_cols(c, 3)
        });
    }

    #[test]
    fn backward_is_deterministic(a in matrix(3, 3), b in matrix(3, 3)) {
        let run = || {
            let mut t = Tape::new();
            let x = t.leaf(a.clone());
            let y = t.leaf(b.clone());
            let p = t.matmul(x, y).unwrap();
            let q = t.tanh(p).unwrap();
            let s = t.softmax_rows(q).unwrap();
            let l = t.l2_norm_sq(s).unwrap();
            let g = t.backward(l).unwrap();
            (g.get(x).unwrap().clone(), g.get(y).unwrap().clone())
        };
        let (gx1, gy1) = run();
        let (gx2, gy2) = run();
        prop_assert_eq!(gx1.data(), gx2.data());
        prop_assert_eq!(gy1.data(), gy2.data());
    }
}

#[test]
fn reused_variable_accumulates() {
    // f(x) = x * x + x  =>  f'(x) = 2x + 1
    let mut t = Tape::new();
    let x = t.leaf(Tensor::scalar(1.5));
    let sq = t.mul(x, x).unwrap();
    let f = t.add(sq, x).unwrap();
    let g = t.backward(f).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[4.0]);
}

#[test]
fn small_network_matches_finite_differences() {
    let w1 = Tensor::matrix(3, 4, (0..12).map(|i| 0.1 * i as f64 - 0.5).collect()).unwrap();
    let w2 = Tensor::matrix(4, 2, (0..8).map(|i| 0.2 - 0.07 * i as f64).collect()).unwrap();
    let x = Tensor::matrix(5, 3, (0..15).map(|i| (i as f64).sin()).collect()).unwrap();
    let report = grad_check(
        |t, v| {
            let xv = t.constant(x.clone());
            let h = t.matmul(xv, v[0])?;
            let h = t.tanh(h)?;
            let y = t.matmul(h, v[1])?;
            t.l2_norm_sq(y)
        },
        &[w1, w2],
        H,
        TOL,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn scaled_error_ignores_noise_on_tiny_components() {
    // The second component's gradient (2e-9) is far below the
    // finite-difference noise set by the first (|f| ~ 1e6).
    let x = Tensor::from_vec(vec![2], vec![1e3, 1e-9]).unwrap();
    let report = grad_check(|t, v| t.l2_norm_sq(v[0]), &[x], 1e-5, 1e-4).unwrap();
    let p = &report.params[0];
    assert!(p.max_abs_error < 1e-3, "{p:?}");
    assert!((p.scaled_error - p.max_abs_error / 2e3).abs() < 1e-3 * p.scaled_error + 1e-18);
    assert!(report.max_scaled_error() < 1e-6);
}
