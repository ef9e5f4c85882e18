use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqrec_core::numcore::{
    checkpoint, compare_gradients, gelu_scalar, grad_check, top_k, GradCheckOptions, Gradients, Graph, Init,
    ParamId, ParamStore, Tensor, Var,
};
use seqrec_core::Result;

const TRIALS: usize = 100;

fn random_param(store: &mut ParamStore<f64>, name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> ParamId {
    store.register(name, shape, Init::Normal { std: 1.0 }, rng).unwrap()
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduce any output to a scalar with fixed random weights so every output
/// coordinate gets a distinct upstream gradient.
fn weighted_sum(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_tensor(g.value(out).shape(), &mut rng);
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    Ok(g.reduce_sum(p))
}

/// Run `trials` randomized instances of one primitive and demand the
/// finite-difference agreement required of every primitive.
fn check_primitive(
    name: &str,
    build: impl Fn(&mut ChaCha8Rng, &mut ParamStore<f64>) -> Box<dyn Fn(&ParamStore<f64>, &mut Graph<f64>) -> Result<Var>>,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ name.len() as u64);
    let mut worst: f64 = 0.0;
    for trial in 0..TRIALS {
        let mut store = ParamStore::new();
        let f = build(&mut rng, &mut store);
        let report = grad_check(f, &mut store, &[], GradCheckOptions::f64_default()).unwrap();
        worst = worst.max(report.max_rel_err);
        assert!(report.passed, "{name} trial {trial}: {report:?}");
    }
    assert!(worst < 1e-6, "{name}: worst relative error {worst}");
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..5)
}

#[test]
fn matmul_gradients() {
    for trans in [false, true] {
        check_primitive(if trans { "matmul_t" } else { "matmul" }, |rng, s| {
            let (m, k, n) = (dim(rng), dim(rng), dim(rng));
            let a = random_param(s, "a", &[m, k], rng);
            let b = random_param(s, "b", &if trans { [n, k] } else { [k, n] }, rng);
            Box::new(move |s, g| {
                let (a, b) = (g.param(s, a), g.param(s, b));
                let y = g.matmul(a, b, trans)?;
                weighted_sum(g, y, 1)
            })
        });
    }
}

#[test]
fn elementwise_binary_gradients_with_row_broadcast() {
    for op in 0..3 {
        check_primitive(["add", "sub", "mul"][op], |rng, s| {
            let (m, n) = (dim(rng), dim(rng));
            let broadcast = rng.random_bool(0.5);
            let a = random_param(s, "a", &[m, n], rng);
            let b = random_param(s, "b", &if broadcast { vec![n] } else { vec![m, n] }, rng);
            Box::new(move |s, g| {
                let (a, b) = (g.param(s, a), g.param(s, b));
                let y = match op {
                    0 => g.add(a, b)?,
                    1 => g.sub(a, b)?,
                    _ => g.mul(a, b)?,
                };
                weighted_sum(g, y, 2)
            })
        });
    }
}

#[test]
fn unary_gradients() {
    for op in 0..4 {
        check_primitive(["sigmoid", "tanh", "gelu", "scale"][op], |rng, s| {
            let shape = [dim(rng), dim(rng)];
            let a = random_param(s, "a", &shape, rng);
            let c = rng.random_range(-2.0..2.0);
            Box::new(move |s, g| {
                let a = g.param(s, a);
                let y = match op {
                    0 => g.sigmoid(a),
                    1 => g.tanh(a),
                    2 => g.gelu(a),
                    _ => g.scale(a, c),
                };
                weighted_sum(g, y, 3)
            })
        });
    }
}

#[test]
fn cross_entropy_gradients() {
    check_primitive("softmax_cross_entropy", |rng, s| {
        let (m, n) = (dim(rng), rng.random_range(2..7));
        let a = random_param(s, "logits", &[m, n], rng);
        let targets: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
        Box::new(move |s, g| {
            let a = g.param(s, a);
            g.softmax_cross_entropy(a, &targets)
        })
    });
}

#[test]
fn gather_gradients_accumulate_repeated_rows() {
    check_primitive("embedding_gather", |rng, s| {
        let (rows, cols) = (rng.random_range(2..6), dim(rng));
        let t = random_param(s, "table", &[rows, cols], rng);
        let ids: Vec<usize> = (0..rng.random_range(1..8)).map(|_| rng.random_range(0..rows)).collect();
        Box::new(move |s, g| {
            let t = g.param(s, t);
            let y = g.embedding_gather(t, &ids)?;
            weighted_sum(g, y, 4)
        })
    });
    check_primitive("gather_rows", |rng, s| {
        let (rows, cols) = (rng.random_range(2..6), dim(rng));
        let t = random_param(s, "table", &[rows, cols], rng);
        let ids: Vec<Option<usize>> =
            (0..rng.random_range(1..8)).map(|_| rng.random_bool(0.7).then(|| rng.random_range(0..rows))).collect();
        Box::new(move |s, g| {
            let t = g.param(s, t);
            let y = g.gather_rows(t, ids.clone())?;
            weighted_sum(g, y, 5)
        })
    });
}

#[test]
fn scatter_gradients() {
    check_primitive("index_scatter_assign", |rng, s| {
        let n = rng.random_range(2..9);
        let dest = random_param(s, "dest", &[1, n], rng);
        let mut ids: Vec<usize> = (0..n).collect();
        ids.retain(|_| rng.random_bool(0.5));
        if ids.is_empty() {
            ids.push(0);
        }
        let src = random_param(s, "src", &[1, ids.len()], rng);
        Box::new(move |s, g| {
            let (d, v) = (g.param(s, dest), g.param(s, src));
            let y = g.index_scatter_assign(d, &ids, v)?;
            weighted_sum(g, y, 6)
        })
    });
}

#[test]
fn shape_op_gradients() {
    check_primitive("concat", |rng, s| {
        let m = dim(rng);
        let a = random_param(s, "a", &[m, dim(rng)], rng);
        let b = random_param(s, "b", &[m, dim(rng)], rng);
        Box::new(move |s, g| {
            let (a, b) = (g.param(s, a), g.param(s, b));
            let y = g.concat(&[a, b, a])?;
            weighted_sum(g, y, 7)
        })
    });
    check_primitive("concat_rows", |rng, s| {
        let n = dim(rng);
        let a = random_param(s, "a", &[dim(rng), n], rng);
        let b = random_param(s, "b", &[dim(rng), n], rng);
        Box::new(move |s, g| {
            let (a, b) = (g.param(s, a), g.param(s, b));
            let y = g.concat_rows(&[b, a])?;
            weighted_sum(g, y, 8)
        })
    });
    check_primitive("slice_cols", |rng, s| {
        let n = rng.random_range(2..7);
        let a = random_param(s, "a", &[dim(rng), n], rng);
        let start = rng.random_range(0..n);
        let len = rng.random_range(1..=n - start);
        Box::new(move |s, g| {
            let a = g.param(s, a);
            let y = g.slice_cols(a, start, len)?;
            weighted_sum(g, y, 9)
        })
    });
}

#[test]
fn reduction_gradients() {
    check_primitive("reduce_mean", |rng, s| {
        let a = random_param(s, "a", &[dim(rng), dim(rng)], rng);
        Box::new(move |s, g| {
            let a = g.param(s, a);
            let y = g.sigmoid(a);
            Ok(g.reduce_mean(y))
        })
    });
    check_primitive("reduce_sum", |rng, s| {
        let a = random_param(s, "a", &[dim(rng), dim(rng)], rng);
        Box::new(move |s, g| {
            let a = g.param(s, a);
            let y = g.tanh(a);
            Ok(g.reduce_sum(y))
        })
    });
}

#[test]
fn attention_building_block_gradients() {
    check_primitive("causal_softmax", |rng, s| {
        let t = dim(rng);
        let a = random_param(s, "a", &[t, t], rng);
        Box::new(move |s, g| {
            let a = g.param(s, a);
            let y = g.causal_softmax(a)?;
            weighted_sum(g, y, 10)
        })
    });
    check_primitive("layer_norm", |rng, s| {
        // Two columns normalize to ±1 whatever the input, leaving only
        // finite-difference noise to compare.
        let a = random_param(s, "a", &[dim(rng), rng.random_range(3..7)], rng);
        Box::new(move |s, g| {
            let a = g.param(s, a);
            let y = g.layer_norm(a, 1e-12);
            weighted_sum(g, y, 11)
        })
    });
}

#[test]
fn max_and_dropout_gradients() {
    check_primitive("max", |rng, s| {
        let shape = [dim(rng), dim(rng)];
        let ids: Vec<ParamId> = (0..3).map(|k| random_param(s, &format!("a{k}"), &shape, rng)).collect();
        Box::new(move |s, g| {
            let parts: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
            let y = g.max(&parts)?;
            weighted_sum(g, y, 12)
        })
    });
    check_primitive("dropout", |rng, s| {
        let shape = [dim(rng), dim(rng)];
        let a = random_param(s, "a", &shape, rng);
        let mask: Vec<f64> = (0..shape[0] * shape[1]).map(|_| if rng.random_bool(0.3) { 0.0 } else { 1.0 / 0.7 }).collect();
        Box::new(move |s, g| {
            let a = g.param(s, a);
            let y = g.dropout(a, mask.clone())?;
            weighted_sum(g, y, 13)
        })
    });
}

#[test]
fn forward_examples() {
    assert_eq!(gelu_scalar(0.0f64), 0.0);
    let mut g = Graph::<f64>::new();
    let logits = g.constant(Tensor::matrix(1, 4, vec![0.0; 4]).unwrap());
    let l = g.softmax_cross_entropy(logits, &[2]).unwrap();
    assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-15);

    let (ids, vals) = top_k(&[3.0, 1.0, 3.0, 2.0], 2).unwrap();
    assert_eq!(ids, vec![0, 2]);
    assert_eq!(vals, vec![3.0, 3.0]);
    assert!(top_k(&[1.0, 2.0], 3).is_err());
}

#[test]
fn shape_mismatch_names_the_primitive() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b, false).unwrap_err().to_string();
    assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
}

#[test]
fn scatter_routes_gradient_to_written_sources_only() {
    let mut g = Graph::<f64>::new();
    let dest = g.constant(Tensor::matrix(1, 5, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
    let src = g.constant(Tensor::matrix(1, 2, vec![10.0, 20.0]).unwrap());
    let y = g.index_scatter_assign(dest, &[3, 1], src).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 20.0, 3.0, 10.0, 5.0]);
    let w = g.constant(Tensor::matrix(1, 5, vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap());
    let p = g.mul(y, w).unwrap();
    let s = g.reduce_sum(p);
    g.backward(s).unwrap();
    assert_eq!(g.grad(src).unwrap(), &[0.4, 0.2]);
    assert_eq!(g.grad(dest).unwrap(), &[0.1, 0.0, 0.3, 0.0, 0.5]);
}

fn square(w: ParamId) -> impl Fn(&ParamStore<f64>, &mut Graph<f64>) -> Result<Var> {
    move |s, g| {
        let w = g.param(s, w);
        let y = g.mul(w, w)?;
        Ok(g.reduce_sum(y))
    }
}

#[test]
fn grad_check_of_square_at_three() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let w = store.register("w", &[1], Init::Zeros, &mut rng).unwrap();
    store.set(w, &[3.0]).unwrap();
    let mut g = Graph::new();
    let out = square(w)(&store, &mut g).unwrap();
    g.backward(out).unwrap();
    let mut grads = Gradients::zeros_like(&store);
    grads.accumulate(&g);
    assert!((grads.get(w)[0] - 6.0).abs() < 1e-12);
    let report = grad_check(square(w), &mut store, &[w], GradCheckOptions::f64_default()).unwrap();
    assert!(report.passed);
    let numeric = report.worst.unwrap().numeric;
    assert!((numeric - 6.0).abs() < 1e-6, "{numeric}");
}

#[test]
fn grad_check_of_sigmoid_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let a = random_param(&mut store, "a", &[4, 4], &mut rng);
    let b = random_param(&mut store, "b", &[4, 4], &mut rng);
    let f = move |s: &ParamStore<f64>, g: &mut Graph<f64>| {
        let (a, b) = (g.param(s, a), g.param(s, b));
        let y = g.matmul(a, b, false)?;
        let y = g.sigmoid(y);
        weighted_sum(g, y, 14)
    };
    let report = grad_check(f, &mut store, &[], GradCheckOptions::f64_default()).unwrap();
    assert!(report.passed && report.max_rel_err < 1e-6, "{report:?}");
}

#[test]
fn grad_check_catches_a_doubled_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let w = random_param(&mut store, "w", &[3], &mut rng);
    let mut g = Graph::new();
    let out = square(w)(&store, &mut g).unwrap();
    g.backward(out).unwrap();
    let mut wrong = Gradients::zeros_like(&store);
    wrong.accumulate(&g);
    wrong.accumulate(&g);
    let report = compare_gradients(square(w), &mut store, &wrong, &[], GradCheckOptions::f64_default()).unwrap();
    assert!(!report.passed);
    assert!((report.max_rel_err - 1.0).abs() < 1e-6, "{}", report.max_rel_err);
}

#[test]
fn grad_check_reports_non_finite_location() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let w = random_param(&mut store, "w", &[2], &mut rng);
    store.set(w, &[1.0, f64::INFINITY]).unwrap();
    let report = grad_check(square(w), &mut store, &[], GradCheckOptions::f64_default()).unwrap();
    assert!(!report.passed);
    assert!(report.non_finite.unwrap().starts_with("w["));
}

#[test]
fn seeded_forward_backward_is_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let a = random_param(&mut store, "a", &[3, 5], &mut rng);
        let b = random_param(&mut store, "b", &[5, 4], &mut rng);
        let mut g = Graph::new();
        let (av, bv) = (g.param(&store, a), g.param(&store, b));
        let y = g.matmul(av, bv, false).unwrap();
        let y = g.gelu(y);
        let l = g.softmax_cross_entropy(y, &[0, 3, 1]).unwrap();
        g.backward(l).unwrap();
        let mut grads = Gradients::zeros_like(&store);
        grads.accumulate(&g);
        (g.value(l).item().to_bits(), grads.get(a).iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f64>::new();
    random_param(&mut store, "x.weight", &[3, 2], &mut rng);
    random_param(&mut store, "x.bias", &[2], &mut rng);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&store, &path).unwrap();
    let mut other = ParamStore::<f64>::new();
    let mut rng2 = ChaCha8Rng::seed_from_u64(6);
    random_param(&mut other, "x.weight", &[3, 2], &mut rng2);
    random_param(&mut other, "x.bias", &[2], &mut rng2);
    checkpoint::load_into(&path, &mut other).unwrap();
    for id in store.ids() {
        assert_eq!(store.value(id), other.value(id));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn top_k_is_sorted_with_ascending_ties(values in prop::collection::vec(-3i32..3, 1..40), k in 1usize..40) {
        let vals: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let k = k.min(vals.len());
        let (ids, top) = top_k(&vals, k).unwrap();
        prop_assert_eq!(ids.len(), k);
        for w in ids.windows(2) {
            let (a, b) = (vals[w[0]], vals[w[1]]);
            prop_assert!(a > b || (a == b && w[0] < w[1]));
        }
        for (i, &id) in ids.iter().enumerate() {
            prop_assert_eq!(top[i], vals[id]);
        }
        let mut order: Vec<usize> = (0..vals.len()).collect();
        order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap().then(a.cmp(&b)));
        prop_assert_eq!(&ids[..], &order[..k]);
    }
}
