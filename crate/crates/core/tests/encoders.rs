use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqrec_core::encoders::{AttnConfig, DropoutCtx, Gru, GruConfig, SelfAttention, LAYER_NORM_EPS};
use seqrec_core::numcore::{gelu_scalar, Graph, ParamStore, Tensor};

fn rand_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        let v: Vec<f64> = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        store.set(id, &v).unwrap();
    }
}

fn gru(hidden: usize, emb: usize, seed: u64) -> (ParamStore<f64>, Gru, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cfg = GruConfig { hidden_size: hidden, embedding_size: emb, dropout: 0.0 };
    let gru = Gru::register(&mut store, &cfg, 0.02, &mut rng).unwrap();
    (store, gru, rng)
}

fn run_gru(store: &ParamStore<f64>, gru: &Gru, x: &[f64], t: usize) -> Vec<f64> {
    let mut g = Graph::new();
    let xv = g.constant(Tensor::matrix(t, x.len() / t, x.to_vec()).unwrap());
    let states = gru.forward(&mut g, store, xv, &mut DropoutCtx::eval()).unwrap();
    assert_eq!(states.layers.len(), 1);
    g.value(states.top()).data().to_vec()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Textbook GRU written directly over slices, used as an oracle.
fn gru_oracle(store: &ParamStore<f64>, gru: &Gru, x: &[f64], t: usize) -> Vec<f64> {
    let h = gru.config.hidden_size;
    let e = gru.config.embedding_size;
    let w_ih = store.value(gru.w_ih).data();
    let w_hh = store.value(gru.w_hh).data();
    let b_ih = store.value(gru.b_ih).data();
    let b_hh = store.value(gru.b_hh).data();
    let mut state = vec![0.0; h];
    let mut out = Vec::new();
    for step in 0..t {
        let xs = &x[step * e..(step + 1) * e];
        let gate = |w: &[f64], b: &[f64], v: &[f64], rows: usize, col: usize| -> f64 {
            b[col] + (0..rows).map(|i| v[i] * w[i * 3 * h + col]).sum::<f64>()
        };
        let mut next = vec![0.0; h];
        for j in 0..h {
            let r = sigmoid(gate(w_ih, b_ih, xs, e, j) + gate(w_hh, b_hh, &state, h, j));
            let z = sigmoid(gate(w_ih, b_ih, xs, e, h + j) + gate(w_hh, b_hh, &state, h, h + j));
            let n = (gate(w_ih, b_ih, xs, e, 2 * h + j) + r * gate(w_hh, b_hh, &state, h, 2 * h + j)).tanh();
            next[j] = (1.0 - z) * n + z * state[j];
        }
        state = next;
        out.extend_from_slice(&state);
    }
    out
}

#[test]
fn gru_with_zero_weights_stays_at_zero() {
    let (mut store, gru, mut rng) = gru(6, 4, 1);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        store.set(id, &vec![0.0; n]).unwrap();
    }
    let x = rand_matrix(5, 4, &mut rng);
    assert!(run_gru(&store, &gru, &x, 5).iter().all(|&v| v == 0.0));
}

#[test]
fn gru_single_step_and_random_window_match_oracle() {
    for (t, seed) in [(1, 2), (3, 3), (3, 4), (7, 5)] {
        let (mut store, gru, mut rng) = gru(5, 3, seed);
        randomize(&mut store, &mut rng, 0.8);
        let x = rand_matrix(t, 3, &mut rng);
        let got = run_gru(&store, &gru, &x, t);
        let want = gru_oracle(&store, &gru, &x, t);
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "t={t}: {a} vs {b}");
        }
    }
}

fn attention(hidden: usize, max_pos: usize, seed: u64) -> (ParamStore<f64>, SelfAttention, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut cfg = AttnConfig::new(hidden, max_pos);
    cfg.inner_size = 12;
    let enc = SelfAttention::register(&mut store, &cfg, 0.02, &mut rng).unwrap();
    (store, enc, rng)
}

fn run_attention(store: &ParamStore<f64>, enc: &SelfAttention, x: &[f64], t: usize) -> Vec<Vec<f64>> {
    let mut g = Graph::new();
    let xv = g.constant(Tensor::matrix(t, x.len() / t, x.to_vec()).unwrap());
    let states = enc.forward(&mut g, store, xv, &mut DropoutCtx::eval()).unwrap();
    states.layers.iter().map(|&l| g.value(l).data().to_vec()).collect()
}

fn affine(store: &ParamStore<f64>, name: &str, x: &[f64]) -> Vec<f64> {
    let w = store.value(store.id(&format!("{name}.weight")).unwrap());
    let b = store.value(store.id(&format!("{name}.bias")).unwrap()).data();
    let (rows, cols) = (w.rows(), w.cols());
    assert_eq!(rows, x.len());
    (0..cols).map(|j| b[j] + (0..rows).map(|i| x[i] * w.data()[i * cols + j]).sum::<f64>()).collect()
}

fn norm(store: &ParamStore<f64>, name: &str, x: &[f64]) -> Vec<f64> {
    let gain = store.value(store.id(&format!("{name}.gain")).unwrap()).data();
    let bias = store.value(store.id(&format!("{name}.bias")).unwrap()).data();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = (var + LAYER_NORM_EPS).sqrt();
    x.iter().enumerate().map(|(i, v)| (v - mean) / sd * gain[i] + bias[i]).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

#[test]
fn single_position_attention_is_value_path_plus_feed_forward() {
    let (mut store, enc, mut rng) = attention(4, 3, 6);
    randomize(&mut store, &mut rng, 0.7);
    let x = rand_matrix(1, 4, &mut rng);
    let got = run_attention(&store, &enc, &x, 1);

    let pos = &store.value(enc.positions).data()[..4];
    let mut h = add(&x, pos);
    for l in 0..2 {
        let p = |s: &str| format!("attn.layer{l}.{s}");
        let v = affine(&store, &p("value"), &h);
        let o = affine(&store, &p("out"), &v);
        let h1 = norm(&store, &p("ln1"), &add(&h, &o));
        let f: Vec<f64> = affine(&store, &p("ff1"), &h1).into_iter().map(gelu_scalar).collect();
        let f = affine(&store, &p("ff2"), &f);
        h = norm(&store, &p("ln2"), &add(&h1, &f));
        for (a, b) in got[l].iter().zip(&h) {
            assert!((a - b).abs() < 1e-12, "layer {l}: {a} vs {b}");
        }
    }
}

#[test]
fn zero_query_and_key_give_uniform_attention() {
    let (mut store, enc, mut rng) = attention(4, 6, 7);
    randomize(&mut store, &mut rng, 0.5);
    for (q, k) in enc.query_key() {
        q.zero(&mut store).unwrap();
        k.zero(&mut store).unwrap();
    }
    let t = 5;
    let x = rand_matrix(t, 4, &mut rng);
    let mut g = Graph::new();
    let xv = g.constant(Tensor::matrix(t, 4, x).unwrap());
    let (_, trace) = enc.forward_traced(&mut g, &store, xv, &mut DropoutCtx::eval()).unwrap();
    assert_eq!(trace.len(), 2);
    for layer in &trace {
        assert_eq!(layer.len(), 2);
        for &p in layer {
            let p = g.value(p);
            for i in 0..t {
                for j in 0..t {
                    let want = if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 };
                    assert!((p.row_slice(i)[j] - want).abs() < 1e-15);
                }
            }
        }
    }
}

#[test]
fn perturbing_a_position_leaves_earlier_states_unchanged() {
    let t = 6;
    let (mut gs, gru, mut rng) = gru(5, 4, 8);
    randomize(&mut gs, &mut rng, 0.6);
    let (mut ast, attn, _) = attention(4, t, 9);
    randomize(&mut ast, &mut rng, 0.6);
    for p in 0..t {
        let x = rand_matrix(t, 4, &mut rng);
        let mut y = x.clone();
        for c in 0..4 {
            y[p * 4 + c] += rng.random_range(0.5..1.5);
        }
        let (a, b) = (run_gru(&gs, &gru, &x, t), run_gru(&gs, &gru, &y, t));
        assert_eq!(a[..p * 5], b[..p * 5]);
        assert_ne!(a[p * 5..(p + 1) * 5], b[p * 5..(p + 1) * 5]);
        let (a, b) = (run_attention(&ast, &attn, &x, t), run_attention(&ast, &attn, &y, t));
        for l in 0..2 {
            assert_eq!(a[l][..p * 4], b[l][..p * 4], "layer {l} position {p}");
        }
    }
}

#[test]
fn dropout_zero_training_pass_equals_evaluation_pass() {
    let t = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut store = ParamStore::new();
    let mut cfg = AttnConfig::new(4, t);
    cfg.attn_dropout = 0.0;
    cfg.hidden_dropout = 0.0;
    let attn = SelfAttention::register(&mut store, &cfg, 0.02, &mut rng).unwrap();
    randomize(&mut store, &mut rng, 0.6);
    let x = rand_matrix(t, 4, &mut rng);
    let eval = run_attention(&store, &attn, &x, t);
    let mut g = Graph::new();
    let xv = g.constant(Tensor::matrix(t, 4, x).unwrap());
    let mut drop_rng = ChaCha8Rng::seed_from_u64(11);
    let states = attn.forward(&mut g, &store, xv, &mut DropoutCtx::train(&mut drop_rng)).unwrap();
    for (l, layer) in states.layers.iter().enumerate() {
        let a: Vec<u64> = g.value(*layer).data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = eval[l].iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn window_longer_than_positions_is_rejected() {
    let (store, attn, mut rng) = attention(4, 3, 12);
    let mut g = Graph::new();
    let xv = g.constant(Tensor::matrix(4, 4, rand_matrix(4, 4, &mut rng)).unwrap());
    assert!(attn.forward(&mut g, &store, xv, &mut DropoutCtx::eval()).is_err());
}

#[test]
fn heads_must_divide_hidden_size() {
    let mut cfg = AttnConfig::new(6, 10);
    cfg.heads = 4;
    assert!(cfg.validate().is_err());
}
