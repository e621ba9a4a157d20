use ddt_nn::{
    step_embedding, GatedRecurrentCell, LayerNorm, LinearLayer, ModeToken, NnError, TransformerBlock,
    TransformerConfig,
};
use ddt_tensor::{grad_check_params, ParamStore, Tape, Tensor, TensorError};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, 1.0, &mut rng(seed))
}

/// Fill every parameter with random values so zero-initialized biases and
/// unit gains do not hide errors.
fn randomize(store: &mut ParamStore, seed: u64) {
    let mut r = rng(seed);
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.get(id).shape().to_vec();
        store.set(id, Tensor::uniform(&shape, 0.5, &mut r)).unwrap();
    }
}

fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<Vec<f64>> {
    let (rows, d_in) = (x.shape()[0], x.shape()[1]);
    let d_out = w.shape()[1];
    (0..rows)
        .map(|i| {
            (0..d_out)
                .map(|j| b.data()[j] + (0..d_in).map(|p| x.at(&[i, p]) * w.at(&[p, j])).sum::<f64>())
                .collect()
        })
        .collect()
}

#[test]
fn linear_identity_and_bias() {
    let mut store = ParamStore::new();
    let layer = LinearLayer::new(&mut store, "l", 3, 3, &mut rng(0));
    store.set(layer.weight, Tensor::eye(3)).unwrap();
    let mut t = Tape::new();
    let x = t.constant(random(&[2, 3], 1));
    let y = layer.forward(&mut t, &store, x).unwrap();
    assert_eq!(t.value(y), t.value(x));

    store.set(layer.bias, Tensor::from_vec(vec![1.0, -2.0, 0.5])).unwrap();
    let mut t = Tape::new();
    let zero = t.constant(Tensor::zeros(&[3]));
    let y = layer.forward(&mut t, &store, zero).unwrap();
    assert_eq!(t.value(y).data(), &[1.0, -2.0, 0.5]);

    let mut t = Tape::new();
    let wrong = t.constant(Tensor::zeros(&[2, 4]));
    assert!(matches!(
        layer.forward(&mut t, &store, wrong),
        Err(NnError::Tensor(TensorError::Dimension { .. }))
    ));
}

#[test]
fn linear_matches_dense_product() {
    let mut store = ParamStore::new();
    let layer = LinearLayer::new(&mut store, "l", 4, 3, &mut rng(2));
    randomize(&mut store, 3);
    let x = random(&[5, 4], 4);
    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let y = layer.forward(&mut t, &store, xv).unwrap();
    let expected = dense(&x, store.get(layer.weight), store.get(layer.bias));
    for (i, row) in expected.iter().enumerate() {
        for (j, want) in row.iter().enumerate() {
            assert!((t.value(y).at(&[i, j]) - want).abs() < 1e-13);
        }
    }
}

#[test]
fn layer_norm_examples() {
    let mut store = ParamStore::new();
    let ln = LayerNorm::new(&mut store, "ln", 4);
    let mut t = Tape::new();
    let c = t.constant(Tensor::full(&[1, 4], 3.7));
    let y = ln.forward(&mut t, &store, c).unwrap();
    assert!(t.value(y).max_abs() < 1e-9);

    let mut store = ParamStore::new();
    let mut ln = LayerNorm::new(&mut store, "ln", 2);
    ln.eps = 1e-14;
    let mut t = Tape::new();
    let x = t.constant(Tensor::from_vec(vec![1.0, -1.0]));
    let y = ln.forward(&mut t, &store, x).unwrap();
    let out = t.value(y).data();
    assert!((out[0] - 1.0).abs() < 1e-12 && (out[1] + 1.0).abs() < 1e-12);
}

fn row_stats(row: &[f64]) -> (f64, f64) {
    let mean = row.iter().sum::<f64>() / row.len() as f64;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64;
    (mean, var)
}

/// Naive multi-head attention: explicit loops over heads, queries and keys.
fn naive_attention(block: &TransformerBlock, store: &ParamStore, x: &Tensor) -> Vec<Vec<f64>> {
    let d = block.config.d_model;
    let heads = block.config.heads;
    let dh = d / heads;
    let proj = |l: &LinearLayer| dense(x, store.get(l.weight), store.get(l.bias));
    let (q, k, v) = (proj(&block.query), proj(&block.key), proj(&block.value));
    let len = x.shape()[0];
    let mut ctx = vec![vec![0.0; d]; len];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..len {
            let scores: Vec<f64> = (0..len)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for c in cols.clone() {
                ctx[i][c] = (0..len).map(|j| exps[j] / z * v[j][c]).sum();
            }
        }
    }
    let ctx = Tensor::from_rows(&ctx).unwrap();
    dense(&ctx, store.get(block.output.weight), store.get(block.output.bias))
}

#[test]
fn attention_matches_naive_loop() {
    let mut store = ParamStore::new();
    let block = TransformerBlock::new(&mut store, "b", TransformerConfig::new(6, 2), &mut rng(5)).unwrap();
    randomize(&mut store, 6);
    let x = random(&[3, 6], 7);
    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let y = block.multi_head_self_attention(&mut t, &store, xv).unwrap();
    let expected = naive_attention(&block, &store, &x);
    for (i, row) in expected.iter().enumerate() {
        for (j, want) in row.iter().enumerate() {
            assert!((t.value(y).at(&[i, j]) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn single_token_attention_is_projected_value() {
    let mut store = ParamStore::new();
    let block = TransformerBlock::new(&mut store, "b", TransformerConfig::new(4, 2), &mut rng(8)).unwrap();
    randomize(&mut store, 9);
    let x = random(&[1, 4], 10);
    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let y = block.multi_head_self_attention(&mut t, &store, xv).unwrap();
    let v = Tensor::from_rows(&dense(&x, store.get(block.value.weight), store.get(block.value.bias))).unwrap();
    let expected = dense(&v, store.get(block.output.weight), store.get(block.output.bias));
    for (j, want) in expected[0].iter().enumerate() {
        assert!((t.value(y).at(&[0, j]) - want).abs() < 1e-13);
    }
}

#[test]
fn identical_tokens_give_identical_rows() {
    let mut store = ParamStore::new();
    let block = TransformerBlock::new(&mut store, "b", TransformerConfig::new(8, 4), &mut rng(11)).unwrap();
    randomize(&mut store, 12);
    let row = random(&[1, 8], 13);
    let mut t = Tape::new();
    let r = t.constant(row);
    let x = t.concat(&[r, r, r], 0).unwrap();
    let y = block.forward(&mut t, &store, x).unwrap();
    let out = t.value(y);
    for j in 0..8 {
        assert_eq!(out.at(&[0, j]), out.at(&[1, j]));
        assert_eq!(out.at(&[0, j]), out.at(&[2, j]));
    }
}

#[test]
fn heads_must_divide_width() {
    let mut store = ParamStore::new();
    let err = TransformerBlock::new(&mut store, "b", TransformerConfig::new(6, 4), &mut rng(0)).unwrap_err();
    assert!(matches!(err, NnError::Config(_)));
}

#[test]
fn zero_output_projections_make_block_identity() {
    let mut store = ParamStore::new();
    let block = TransformerBlock::new(&mut store, "b", TransformerConfig::new(8, 2), &mut rng(14)).unwrap();
    randomize(&mut store, 15);
    for id in [block.output.weight, block.output.bias, block.ffn_out.weight, block.ffn_out.bias] {
        let shape = store.get(id).shape().to_vec();
        store.set(id, Tensor::zeros(&shape)).unwrap();
    }
    let mut t = Tape::new();
    let x = t.constant(random(&[5, 8], 16));
    let y = block.forward(&mut t, &store, x).unwrap();
    assert_eq!(t.value(y), t.value(x));
}

#[test]
fn block_preserves_shape() {
    let mut store = ParamStore::new();
    let block = TransformerBlock::new(&mut store, "b", TransformerConfig::new(8, 2), &mut rng(17)).unwrap();
    for len in [1, 4, 16] {
        for shape in [vec![len, 8], vec![3, len, 8]] {
            let mut t = Tape::new();
            let x = t.constant(random(&shape, len as u64));
            let y = block.forward(&mut t, &store, x).unwrap();
            assert_eq!(t.shape(y), shape.as_slice());
        }
    }
}

#[test]
fn gru_zero_weights_halve_hidden_state() {
    let mut store = ParamStore::new();
    let cell = GatedRecurrentCell::new(&mut store, "g", 3, 4, &mut rng(18));
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.get(id).shape().to_vec();
        store.set(id, Tensor::zeros(&shape)).unwrap();
    }
    let h = random(&[4], 19);
    let mut t = Tape::new();
    let hv = t.constant(h.clone());
    let x = t.constant(random(&[3], 20));
    let out = cell.step(&mut t, &store, hv, x).unwrap();
    for (o, h) in t.value(out).data().iter().zip(h.data()) {
        assert!((o - 0.5 * h).abs() < 1e-15);
    }
}

#[test]
fn gru_zero_state_and_candidate_stays_zero() {
    let mut store = ParamStore::new();
    let cell = GatedRecurrentCell::new(&mut store, "g", 3, 4, &mut rng(21));
    randomize(&mut store, 22);
    // Zero the candidate block of every weight and bias.
    for id in [cell.w_input, cell.w_hidden, cell.b_input, cell.b_hidden] {
        let mut v = store.get(id).clone();
        let cols = *v.shape().last().unwrap();
        let rows = v.numel() / cols;
        for r in 0..rows {
            for c in 8..12 {
                v.data_mut()[r * cols + c] = 0.0;
            }
        }
        store.set(id, v).unwrap();
    }
    let mut t = Tape::new();
    let h = t.constant(Tensor::zeros(&[4]));
    let x = t.constant(random(&[3], 23));
    let out = cell.step(&mut t, &store, h, x).unwrap();
    assert!(t.value(out).data().iter().all(|v| *v == 0.0));
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn gru_matches_gate_equations() {
    let (d_in, dh) = (3, 4);
    let mut store = ParamStore::new();
    let cell = GatedRecurrentCell::new(&mut store, "g", d_in, dh, &mut rng(24));
    randomize(&mut store, 25);
    let x = random(&[d_in], 26);
    let h = random(&[dh], 27);
    let (wi, wh) = (store.get(cell.w_input), store.get(cell.w_hidden));
    let (bi, bh) = (store.get(cell.b_input), store.get(cell.b_hidden));
    let gi: Vec<f64> = (0..3 * dh)
        .map(|j| bi.data()[j] + (0..d_in).map(|p| x.data()[p] * wi.at(&[p, j])).sum::<f64>())
        .collect();
    let gh: Vec<f64> = (0..3 * dh)
        .map(|j| bh.data()[j] + (0..dh).map(|p| h.data()[p] * wh.at(&[p, j])).sum::<f64>())
        .collect();
    let expected: Vec<f64> = (0..dh)
        .map(|j| {
            let r = sigmoid(gi[j] + gh[j]);
            let z = sigmoid(gi[dh + j] + gh[dh + j]);
            let n = (gi[2 * dh + j] + r * gh[2 * dh + j]).tanh();
            (1.0 - z) * n + z * h.data()[j]
        })
        .collect();
    let mut t = Tape::new();
    let hv = t.constant(h);
    let xv = t.constant(x);
    let out = cell.step(&mut t, &store, hv, xv).unwrap();
    for (o, e) in t.value(out).data().iter().zip(&expected) {
        assert!((o - e).abs() < 1e-14);
    }

    let mut t = Tape::new();
    let hv = t.constant(Tensor::zeros(&[dh + 1]));
    let xv = t.constant(Tensor::zeros(&[d_in]));
    assert!(cell.step(&mut t, &store, hv, xv).is_err());
}

#[test]
fn step_embedding_examples() {
    let e0 = step_embedding(0, 8, 20).unwrap();
    for (j, v) in e0.data().iter().enumerate() {
        assert_eq!(*v, if j % 2 == 0 { 0.0 } else { 1.0 });
    }
    let e1 = step_embedding(1, 8, 20).unwrap();
    let e2 = step_embedding(2, 8, 20).unwrap();
    assert!(e1.max_abs_diff(&e2).unwrap() > 0.1);

    let e7 = step_embedding(7, 6, 20).unwrap();
    for j in 0..6 {
        let freq = 10000f64.powf(-((j / 2 * 2) as f64) / 6.0);
        let want = if j % 2 == 0 { (7.0 * freq).sin() } else { (7.0 * freq).cos() };
        assert!((e7.data()[j] - want).abs() < 1e-15);
    }
    assert!(matches!(step_embedding(21, 8, 20), Err(NnError::Contract(_))));
}

#[test]
fn mode_token_rejects_invalid_mode() {
    let mut store = ParamStore::new();
    let tok = ModeToken::new(&mut store, "mode", 4, &mut rng(28));
    let mut t = Tape::new();
    let v = tok.token(&mut t, &store, 1).unwrap();
    assert_eq!(t.shape(v), &[1, 4]);
    assert!(matches!(tok.token(&mut t, &store, 2), Err(NnError::Contract(_))));
}

fn weighted_sum(t: &mut Tape, y: ddt_tensor::Var, seed: u64) -> ddt_tensor::Result<ddt_tensor::Var> {
    let w = t.constant(random(t.shape(y), seed));
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(5))]

    #[test]
    fn transformer_block_passes_grad_check(seed in 0u64..10_000, post in any::<bool>()) {
        let mut store = ParamStore::new();
        let mut cfg = TransformerConfig::new(4, 2);
        if post {
            cfg.norm = ddt_nn::NormPlacement::Post;
        }
        let block = TransformerBlock::new(&mut store, "b", cfg, &mut rng(seed)).unwrap();
        randomize(&mut store, seed + 1);
        let x = random(&[3, 4], seed + 2);
        let err = grad_check_params(&store, |t, s| {
            let xv = t.constant(x.clone());
            let y = block.forward(t, s, xv).map_err(|e| ddt_tensor::TensorError::Contract(e.to_string()))?;
            weighted_sum(t, y, seed + 3)
        }, 1e-5).unwrap();
        prop_assert!(err < 1e-4, "block grad error {err}");
    }

    #[test]
    fn linear_norm_and_gru_pass_grad_check(seed in 0u64..10_000) {
        let mut store = ParamStore::new();
        let lin = LinearLayer::new(&mut store, "lin", 3, 4, &mut rng(seed));
        let ln = LayerNorm::new(&mut store, "ln", 4);
        let cell = GatedRecurrentCell::new(&mut store, "gru", 4, 3, &mut rng(seed + 1));
        randomize(&mut store, seed + 2);
        let x = random(&[2, 3], seed + 3);
        let err = grad_check_params(&store, |t, s| {
            let wrap = |e: NnError| ddt_tensor::TensorError::Contract(e.to_string());
            let xv = t.constant(x.clone());
            let a = lin.forward(t, s, xv).map_err(wrap)?;
            let n = ln.forward(t, s, a).map_err(wrap)?;
            let h0 = t.constant(Tensor::full(&[2, 3], 0.1));
            let h1 = cell.step(t, s, h0, n).map_err(wrap)?;
            let h2 = cell.step(t, s, h1, n).map_err(wrap)?;
            weighted_sum(t, h2, seed + 4)
        }, 1e-5).unwrap();
        prop_assert!(err < 1e-4, "grad error {err}");
    }

    #[test]
    fn attention_is_permutation_equivariant(seed in 0u64..10_000) {
        let mut store = ParamStore::new();
        let block = TransformerBlock::new(&mut store, "b", TransformerConfig::new(8, 2), &mut rng(seed)).unwrap();
        randomize(&mut store, seed + 1);
        let x = random(&[4, 8], seed + 2);
        let perm = [2usize, 0, 3, 1];
        let shuffled = Tensor::from_rows(&perm.iter().map(|&i| (0..8).map(|j| x.at(&[i, j])).collect()).collect::<Vec<_>>()).unwrap();
        let mut t = Tape::new();
        let a = t.constant(x);
        let b = t.constant(shuffled);
        let ya = block.forward(&mut t, &store, a).unwrap();
        let yb = block.forward(&mut t, &store, b).unwrap();
        for (row, &src) in perm.iter().enumerate() {
            for j in 0..8 {
                prop_assert!((t.value(yb).at(&[row, j]) - t.value(ya).at(&[src, j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_statistics(xs in prop::collection::vec(-50.0f64..50.0, 3..32)) {
        prop_assume!(row_stats(&xs).1 > 1e-3);
        let mut store = ParamStore::new();
        let mut ln = LayerNorm::new(&mut store, "ln", xs.len());
        ln.eps = 1e-12;
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_vec(xs));
        let y = ln.forward(&mut t, &store, x).unwrap();
        let (mean, var) = row_stats(t.value(y).data());
        prop_assert!(mean.abs() < 1e-10);
        prop_assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gru_hidden_state_stays_bounded(seed in 0u64..10_000) {
        let mut store = ParamStore::new();
        let cell = GatedRecurrentCell::new(&mut store, "g", 3, 5, &mut rng(seed));
        let mut t = Tape::new();
        let mut h = t.constant(Tensor::zeros(&[5]));
        for step in 0..20 {
            let x = t.constant(random(&[3], seed + step).map(|v| 5.0 * v));
            h = cell.step(&mut t, &store, h, x).unwrap();
        }
        prop_assert!(t.value(h).data().iter().all(|v| v.abs() < 1.0));
    }
}
