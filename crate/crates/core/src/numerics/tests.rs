// Oracles index explicitly to mirror the formulas.
#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{finite_difference, max_relative_error};
use super::nn::{Dropout, EncoderLayer, MultiHeadAttention, ParamLayout, ParamStore};
use super::*;

fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Checks the tape gradient of `sum(build(inputs) * R)` for a fixed random
/// `R` against central differences.
fn gradcheck<F>(inputs: Vec<Tensor<f64>>, build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut probe = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| probe.leaf(t.clone(), true)).collect();
    let out = build(&mut probe, &vars);
    let out_shape = probe.value(out).shape().to_vec();
    let weights = rand_tensor(&mut rng, &out_shape);

    let loss_of = |tape: &mut Tape<f64>, ins: &[Tensor<f64>]| {
        let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = build(tape, &vars);
        let w = tape.constant(weights.clone());
        let prod = tape.mul(out, w).unwrap();
        (tape.sum(prod), vars)
    };

    let mut tape = Tape::new();
    let (loss, vars) = loss_of(&mut tape, &inputs);
    let grads = tape.backward(loss).unwrap();
    assert!(tape.is_empty(), "tape must be cleared after backward");

    let mut params = inputs.clone();
    let numeric = finite_difference(&mut params, 1e-5, |ps| {
        let mut t = Tape::new();
        let (l, _) = loss_of(&mut t, ps);
        t.value(l).data()[0]
    });
    vars.iter()
        .zip(&numeric)
        .map(|(&v, n)| max_relative_error(grads.get(v).unwrap(), n, 1e-6))
        .fold(0.0, f64::max)
}

#[test]
fn matmul_identity_and_hand_case() {
    let mut tape = Tape::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, &[3, 3]);
    let i = tape.constant(Tensor::identity(3));
    let av = tape.constant(a.clone());
    let p = tape.matmul(i, av).unwrap();
    assert_eq!(tape.value(p), &a);

    let x = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let y = tape.constant(Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap());
    let z = tape.matmul(x, y).unwrap();
    assert_eq!(tape.value(z).data(), &[3.0, 7.0]);
}

#[test]
fn matmul_rejects_mismatched_inner_dims() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(crate::FstError::Shape(_))));
}

fn triple_loop(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.at(i, p) * b.at(p, j);
            }
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

#[test]
fn matmul_matches_triple_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_tensor(&mut rng, &[5, 4]);
    let b = rand_tensor(&mut rng, &[4, 6]);
    let mut tape = Tape::new();
    let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let c = tape.matmul(av, bv).unwrap();
    let oracle = triple_loop(&a, &b);
    for (x, y) in tape.value(c).data().iter().zip(oracle.data()) {
        assert!((x - y).abs() <= 1e-6 * y.abs().max(1e-12));
    }
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_f64(&[3], &[0.0, 0.0, 0.0]).unwrap());
    let s = tape.softmax_lastdim(x, None).unwrap();
    for &v in tape.value(s).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    let x = tape.constant(Tensor::from_f64(&[2], &[1000.0, 1000.0]).unwrap());
    let s = tape.softmax_lastdim(x, None).unwrap();
    assert_eq!(tape.value(s).data(), &[0.5, 0.5]);

    let x = tape.constant(Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap());
    let s = tape.softmax_lastdim(x, None).unwrap();
    for (v, e) in tape.value(s).data().iter().zip([0.09003, 0.24473, 0.66524]) {
        assert!((v - e).abs() < 1e-4);
    }
}

#[test]
fn softmax_mask_zeroes_weights_and_rejects_full_mask() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_f64(&[1, 3], &[5.0, -2.0, 40.0]).unwrap());
    let s = tape.softmax_lastdim(x, Some(&[true, true, false])).unwrap();
    let v = tape.value(s).data();
    assert_eq!(v[2], 0.0);
    assert!((v[0] + v[1] - 1.0).abs() < 1e-15);
    assert!(matches!(
        tape.softmax_lastdim(x, Some(&[false, false, false])),
        Err(crate::FstError::Contract(_))
    ));
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::<f64>::new();
    let g = tape.constant(Tensor::full(&[4], 1.0));
    let b = tape.constant(Tensor::zeros(&[4]));
    let x = tape.constant(Tensor::full(&[1, 4], 7.5));
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let g = tape.constant(Tensor::full(&[2], 1.0));
    let b = tape.constant(Tensor::zeros(&[2]));
    let x = tape.constant(Tensor::from_f64(&[1, 2], &[1.0, 3.0]).unwrap());
    let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
    let v = tape.value(y).data();
    assert!((v[0] + 1.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);
}

#[test]
fn layer_norm_moments_recomputed_independently() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input = rand_tensor(&mut rng, &[4, 8]);
    let mut tape = Tape::<f64>::new();
    let g = tape.constant(Tensor::full(&[8], 1.0));
    let b = tape.constant(Tensor::zeros(&[8]));
    let x = tape.constant(input);
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    let out = tape.value(y);
    for r in 0..4 {
        let row = out.row(r);
        let mean: f64 = row.iter().sum::<f64>() / 8.0;
        let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn bce_examples() {
    let mut tape = Tape::<f64>::new();
    let z = tape.leaf(Tensor::scalar(0.0), true);
    let l = tape.bce_with_logits(z, 1).unwrap();
    assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);

    let z = tape.leaf(Tensor::scalar(50.0), true);
    let l = tape.bce_with_logits(z, 1).unwrap();
    let v = tape.value(l).data()[0];
    assert!(v.is_finite() && v < 1e-20);

    let z = tape.leaf(Tensor::scalar(1.5), true);
    let l = tape.bce_with_logits(z, 0).unwrap();
    assert!((tape.value(l).data()[0] - 1.70141).abs() < 1e-4);
    let g = tape.backward(l).unwrap();
    let expected = 1.0 / (1.0 + (-1.5f64).exp());
    assert!((g.get(z).unwrap().data()[0] - expected).abs() < 1e-12);

    let mut tape = Tape::<f32>::new();
    let z = tape.leaf(Tensor::scalar(-80.0f32), true);
    let l = tape.bce_with_logits(z, 1).unwrap();
    assert!((tape.value(l).data()[0] - 80.0).abs() < 1e-4);
    assert!(tape.bce_with_logits(z, 2).is_err());
}

#[test]
fn backward_linear_and_quadratic() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[2, 3, 2]), true);
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));

    let x = tape.leaf(Tensor::scalar(3.0), true);
    let sq = tape.mul(x, x).unwrap();
    let g = tape.backward(sq).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[6.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[2]), true);
    assert!(matches!(tape.backward(x), Err(crate::FstError::Contract(_))));
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::scalar(2.0), true);
    let c = tape.constant(Tensor::scalar(5.0));
    let y = tape.mul(x, c).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[5.0]);
    assert!(g.get(c).is_none());
}

#[test]
fn gradcheck_every_primitive() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tol = 1e-4;
    let mut r = |s: &[usize]| rand_tensor(&mut rng, s);

    let cases: Vec<(&str, f64)> = vec![
        (
            "matmul",
            gradcheck(vec![r(&[3, 4]), r(&[4, 5])], |t, v| t.matmul(v[0], v[1]).unwrap()),
        ),
        (
            "transpose",
            gradcheck(vec![r(&[3, 5])], |t, v| t.transpose(v[0]).unwrap()),
        ),
        (
            "add",
            gradcheck(vec![r(&[2, 3]), r(&[2, 3])], |t, v| t.add(v[0], v[1]).unwrap()),
        ),
        (
            "sub",
            gradcheck(vec![r(&[2, 3]), r(&[2, 3])], |t, v| t.sub(v[0], v[1]).unwrap()),
        ),
        (
            "mul",
            gradcheck(vec![r(&[2, 3]), r(&[2, 3])], |t, v| t.mul(v[0], v[1]).unwrap()),
        ),
        (
            "add_row",
            gradcheck(vec![r(&[4, 3]), r(&[3])], |t, v| t.add_row(v[0], v[1]).unwrap()),
        ),
        ("scale", gradcheck(vec![r(&[3, 3])], |t, v| t.scale(v[0], -0.7))),
        ("sigmoid", gradcheck(vec![r(&[3, 4])], |t, v| t.sigmoid(v[0]))),
        ("gelu", gradcheck(vec![r(&[3, 4])], |t, v| t.gelu(v[0]))),
        (
            "softmax",
            gradcheck(vec![r(&[3, 5])], |t, v| t.softmax_lastdim(v[0], None).unwrap()),
        ),
        (
            "masked softmax",
            gradcheck(vec![r(&[3, 5])], |t, v| {
                t.softmax_lastdim(v[0], Some(&[true, true, true, false, false]))
                    .unwrap()
            }),
        ),
        (
            "layer_norm",
            gradcheck(vec![r(&[4, 6]), r(&[6]), r(&[6])], |t, v| {
                t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()
            }),
        ),
        (
            "slice_cols",
            gradcheck(vec![r(&[3, 6])], |t, v| t.slice_cols(v[0], 2, 3).unwrap()),
        ),
        (
            "concat_cols",
            gradcheck(vec![r(&[3, 2]), r(&[3, 4])], |t, v| {
                t.concat_cols(&[v[0], v[1]]).unwrap()
            }),
        ),
        (
            "masked_mean",
            gradcheck(vec![r(&[5, 3])], |t, v| {
                t.masked_mean_rows(v[0], &[true, false, true, true, false])
                    .unwrap()
            }),
        ),
        (
            "masked_max",
            gradcheck(vec![r(&[5, 3])], |t, v| {
                t.masked_max_rows(v[0], &[true, true, true, false, false])
                    .unwrap()
            }),
        ),
        ("sum", gradcheck(vec![r(&[2, 4])], |t, v| t.sum(v[0]))),
        (
            "bce",
            gradcheck(vec![r(&[1])], |t, v| t.bce_with_logits(v[0], 1).unwrap()),
        ),
    ];
    for (name, err) in cases {
        assert!(err < tol, "{name}: max relative error {err:e}");
    }
}

#[test]
fn composition_matches_jacobian_product() {
    // f(u) = sigmoid(u), g(x) = A x with A fixed; loss = sum(f(g(x)) * w).
    // d loss / dx = A^T (w * s * (1 - s)).
    let a = Tensor::<f64>::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.5]]).unwrap();
    let x0 = Tensor::from_f64(&[2, 1], &[0.7, -0.4]).unwrap();
    let w = [1.5, -0.25];
    let mut tape = Tape::new();
    let av = tape.constant(a.clone());
    let x = tape.leaf(x0.clone(), true);
    let u = tape.matmul(av, x).unwrap();
    let s = tape.sigmoid(u);
    let wv = tape.constant(Tensor::from_f64(&[2, 1], &w).unwrap());
    let prod = tape.mul(s, wv).unwrap();
    let loss = tape.sum(prod);
    let grads = tape.backward(loss).unwrap();

    let u0 = [
        a.at(0, 0) * 0.7 + a.at(0, 1) * -0.4,
        a.at(1, 0) * 0.7 + a.at(1, 1) * -0.4,
    ];
    let outer: Vec<f64> = (0..2)
        .map(|i| {
            let s = 1.0 / (1.0 + (-u0[i]).exp());
            w[i] * s * (1.0 - s)
        })
        .collect();
    let expected = [
        a.at(0, 0) * outer[0] + a.at(1, 0) * outer[1],
        a.at(0, 1) * outer[0] + a.at(1, 1) * outer[1],
    ];
    let got = grads.get(x).unwrap().data();
    for (g, e) in got.iter().zip(expected) {
        assert!((g - e).abs() < 1e-12);
    }
}

fn mha_setup(n_heads: usize, d: usize, seed: u64) -> (MultiHeadAttention, ParamStore<f64>) {
    let mut layout = ParamLayout::default();
    let mha = MultiHeadAttention::new(&mut layout, "attn", d, n_heads);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::init(&layout, &mut rng);
    // Non-zero biases so the oracle exercises them too.
    for t in store.tensors_mut() {
        if t.shape().len() == 1 {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
    }
    (mha, store)
}

/// Straight-line dense attention: softmax(Q K^T / sqrt(d_h)) V per head.
fn dense_attention_oracle(
    mha: &MultiHeadAttention,
    p: &ParamStore<f64>,
    q_in: &Tensor<f64>,
    kv_in: &Tensor<f64>,
    mask: &[bool],
) -> Vec<Vec<f64>> {
    let lin = |l: &nn::Linear, x: &Tensor<f64>| -> Vec<Vec<f64>> {
        let (w, b) = (p.get(l.weight), p.get(l.bias));
        (0..x.rows())
            .map(|i| {
                (0..l.d_out)
                    .map(|o| b.data()[o] + (0..l.d_in).map(|k| x.at(i, k) * w.at(k, o)).sum::<f64>())
                    .collect()
            })
            .collect()
    };
    let q = lin(&mha.query, q_in);
    let k = lin(&mha.key, kv_in);
    let v = lin(&mha.value, kv_in);
    let d = mha.query.d_out;
    let dh = d / mha.n_heads;
    let mut merged = vec![vec![0.0; d]; q.len()];
    for h in 0..mha.n_heads {
        for i in 0..q.len() {
            let mut scores: Vec<f64> = (0..k.len())
                .map(|j| {
                    if !mask[j] {
                        return f64::NEG_INFINITY;
                    }
                    (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum::<f64>() / (dh as f64).sqrt()
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            scores.iter_mut().for_each(|s| *s = (*s - max).exp());
            let total: f64 = scores.iter().sum();
            for c in 0..dh {
                merged[i][h * dh + c] = (0..k.len()).map(|j| scores[j] / total * v[j][h * dh + c]).sum();
            }
        }
    }
    let mt = Tensor::from_rows(&merged).unwrap();
    lin(&mha.output, &mt)
}

#[test]
fn attention_matches_dense_oracle() {
    let (mha, store) = mha_setup(2, 4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q_in = rand_tensor(&mut rng, &[3, 4]);
    let kv_in = rand_tensor(&mut rng, &[3, 4]);
    for mask in [[true, true, true], [true, true, false]] {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let (q, kv) = (tape.constant(q_in.clone()), tape.constant(kv_in.clone()));
        let out = mha.forward(&mut tape, &p, q, kv, &mask).unwrap();
        let oracle = dense_attention_oracle(&mha, &store, &q_in, &kv_in, &mask);
        let got = tape.value(out.out);
        for i in 0..3 {
            for j in 0..4 {
                assert!((got.at(i, j) - oracle[i][j]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn single_token_attention_returns_value_projection() {
    let mut layout = ParamLayout::default();
    let mha = MultiHeadAttention::new(&mut layout, "a", 3, 1);
    let mut store = ParamStore::<f64>::zeros(&layout);
    for l in [&mha.query, &mha.key, &mha.value, &mha.output] {
        *store.get_mut(l.weight) = Tensor::identity(3);
    }
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let x = tape.constant(Tensor::from_f64(&[1, 3], &[0.2, -1.0, 4.0]).unwrap());
    let out = mha.forward(&mut tape, &p, x, x, &[true]).unwrap();
    assert_eq!(tape.value(out.out).data(), &[0.2, -1.0, 4.0]);
}

#[test]
fn uniform_keys_give_uniform_weights() {
    let (mha, store) = mha_setup(2, 4, 7);
    let row = [0.3, -0.1, 0.8, 0.05];
    let kv = Tensor::from_rows(&vec![row.to_vec(); 5]).unwrap();
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let kv = tape.constant(kv);
    let mask = [true, true, true, false, false];
    let out = mha.forward(&mut tape, &p, kv, kv, &mask).unwrap();
    for w in out.weights {
        let wt = tape.value(w);
        for i in 0..wt.rows() {
            for j in 0..5 {
                let expected = if mask[j] { 1.0 / 3.0 } else { 0.0 };
                assert!((wt.at(i, j) - expected).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn attention_rejects_all_masked_keys() {
    let (mha, store) = mha_setup(2, 4, 8);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let x = tape.constant(Tensor::zeros(&[2, 4]));
    assert!(matches!(
        mha.forward(&mut tape, &p, x, x, &[false, false]),
        Err(crate::FstError::Contract(_))
    ));
}

#[test]
fn attention_ignores_values_in_masked_keys() {
    let (mha, store) = mha_setup(2, 4, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let base = rand_tensor(&mut rng, &[6, 4]);
    let mask = [true, true, true, true, false, false];
    let run = |kv_data: &Tensor<f64>| {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let q = tape.constant(base.clone());
        let kv = tape.constant(kv_data.clone());
        let out = mha.forward(&mut tape, &p, q, kv, &mask).unwrap();
        tape.value(out.out).clone()
    };
    let mut perturbed = base.clone();
    for r in 4..6 {
        perturbed.row_mut(r).iter_mut().for_each(|v| *v += 1000.0);
    }
    let a = run(&base);
    let b = run(&perturbed);
    assert!(a.max_abs_diff(&b) < 1e-6);
}

#[test]
fn encoder_layer_gradcheck() {
    let mut layout = ParamLayout::default();
    let layer = EncoderLayer::new(&mut layout, "enc", 4, 2, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let store = ParamStore::<f64>::init(&layout, &mut rng);
    let x0 = rand_tensor(&mut rng, &[3, 4]);
    let mask = [true, true, false];
    let weights = rand_tensor(&mut rng, &[3, 4]);
    let loss_of = |tape: &mut Tape<f64>, ps: &ParamStore<f64>| {
        let p = ps.bind(tape, true);
        let x = tape.constant(x0.clone());
        let y = layer
            .forward(tape, &p, x, &mask, &mut Dropout::disabled())
            .unwrap();
        let w = tape.constant(weights.clone());
        let prod = tape.mul(y, w).unwrap();
        (tape.sum(prod), p)
    };
    let mut tape = Tape::new();
    let (loss, p) = loss_of(&mut tape, &store);
    let grads = tape.backward(loss).unwrap();
    let mut tensors = store.tensors().to_vec();
    let numeric = finite_difference(&mut tensors, 1e-5, |ts| {
        let ps = ParamStore::from_tensors(&layout, ts.to_vec()).unwrap();
        let mut t = Tape::new();
        let (l, _) = loss_of(&mut t, &ps);
        t.value(l).data()[0]
    });
    for (i, n) in numeric.iter().enumerate() {
        let err = max_relative_error(grads.get(p.vars()[i]).unwrap(), n, 1e-6);
        assert!(err < 1e-4, "{}: {err:e}", store.names()[i]);
    }
}

#[test]
fn dropout_is_identity_when_disabled_and_scales_survivors() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full(&[4, 4], 2.0));
    let y = Dropout::disabled().apply(&mut tape, x).unwrap();
    assert_eq!(y, x);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let y = Dropout::new(0.5, &mut rng).apply(&mut tape, x).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0 || v == 4.0));
}

#[test]
fn sinusoidal_table_first_rows() {
    let pe = nn::sinusoidal_positions::<f64>(3, 4);
    assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
    assert!((pe.at(1, 0) - 1f64.sin()).abs() < 1e-15);
    assert!((pe.at(1, 2) - (1.0f64 / 100.0).sin()).abs() < 1e-15);
    assert!((pe.at(2, 3) - (2.0f64 / 100.0).cos()).abs() < 1e-15);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in prop::collection::vec(-30.0f64..30.0, 1..24)) {
        let n = vals.len();
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[1, n], &vals).unwrap());
        let s = tape.softmax_lastdim(x, None).unwrap();
        let out = tape.value(s).data();
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(out.iter().all(|&v| v > 0.0 && v <= 1.0));
        if n > 1 {
            let hi = vals.iter().cloned().fold(f64::MIN, f64::max);
            let lo = vals.iter().cloned().fold(f64::MAX, f64::min);
            // exp(-spread) only vanishes against 1 beyond ~36 in f64.
            if hi - lo < 30.0 {
                prop_assert!(out.iter().all(|&v| v < 1.0));
            }
        }
    }

    #[test]
    fn matmul_agrees_with_triple_loop(m in 1usize..8, k in 1usize..8, n in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, &[m, k]);
        let b = rand_tensor(&mut rng, &[k, n]);
        let mut tape = Tape::new();
        let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let c = tape.matmul(av, bv).unwrap();
        let oracle = triple_loop(&a, &b);
        for (x, y) in tape.value(c).data().iter().zip(oracle.data()) {
            prop_assert!((x - y).abs() <= 1e-6 * y.abs().max(1e-9));
        }
    }

    #[test]
    fn matmul_and_layer_norm_gradcheck_on_random_shapes(
        m in 1usize..6, k in 2usize..6, n in 1usize..6, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, &[m, k]);
        let b = rand_tensor(&mut rng, &[k, n]);
        let g = rand_tensor(&mut rng, &[k]);
        let beta = rand_tensor(&mut rng, &[k]);
        prop_assert!(gradcheck(vec![a.clone(), b], |t, v| t.matmul(v[0], v[1]).unwrap()) < 1e-4);
        prop_assert!(gradcheck(vec![a, g, beta], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()) < 1e-4);
    }
}
