use pararnn::datagen::{SequenceBatch, TargetLayout};
use pararnn::linalg::{max_abs_diff, BlockDiagonalMatrix, Mat, Rng};
use pararnn::net::{
    checkpoint, similarity_surrogate, Activation, Aggregator, AggregatorSpec, Architecture, Cell, CellKind, DeepModel,
    Linear, OutputMode, ParaRnnCell,
};

fn random_model(arch: &Architecture, seed: u64, std: f64) -> DeepModel {
    let mut rng = Rng::new(seed);
    let mut m = DeepModel::zeros(arch).unwrap();
    let flat = rng.gaussian_vec(0.0, std, m.num_params()).unwrap();
    m.set_params_flat(&flat).unwrap();
    m
}

fn random_batch(n: usize, t: usize, d_in: usize, seed: u64) -> SequenceBatch {
    let mut rng = Rng::new(seed);
    let x = rng.gaussian_vec(0.0, 1.0, n * t * d_in).unwrap();
    SequenceBatch::new(n, t, d_in, 1, x, vec![0.0; n], TargetLayout::Last).unwrap()
}

/// Dense vanilla recurrence `h_t = σ(b + W_x x_t + W_h h_{t-1})`, each product row summed
/// on its own before the three terms are added left to right.
fn dense_rnn(w_h: &Mat, w_x: &Mat, b: &[f64], act: Activation, xs: &[f64], d_in: usize) -> Vec<f64> {
    let d = w_h.rows();
    let mut h = vec![0.0; d];
    let mut out = Vec::new();
    for x in xs.chunks(d_in) {
        let mut next = vec![0.0; d];
        for i in 0..d {
            let input: f64 = (0..d_in).map(|j| w_x[(i, j)] * x[j]).sum();
            let recurrent: f64 = (0..d).map(|j| w_h[(i, j)] * h[j]).sum();
            next[i] = act.apply(b[i] + input + recurrent);
        }
        h = next;
        out.extend_from_slice(&h);
    }
    out
}

fn rnn_cell(m: &DeepModel, l: usize) -> &ParaRnnCell {
    match &m.layers[l] {
        Cell::Rnn(c) => c,
        _ => panic!("vanilla layer expected"),
    }
}

#[test]
fn block_cell_matches_dense_vanilla_rnn() {
    for (ds, act) in [
        (1, Activation::Tanh),
        (2, Activation::Relu),
        (4, Activation::Sigmoid),
        (8, Activation::Identity),
    ] {
        let arch = Architecture::rnn(3, 8, ds, act);
        let m = random_model(&arch, 17 + ds as u64, 0.4);
        let batch = random_batch(4, 9, 3, 2);
        let hs = m.hidden_states(&batch).unwrap();
        let c = rnn_cell(&m, 0);
        let dense = c.w_h.to_dense();
        for i in 0..4 {
            let reference = dense_rnn(&dense, &c.w_x, &c.b, act, batch.input(i), 3);
            let got = &hs[i * 9 * 8..(i + 1) * 9 * 8];
            let err = max_abs_diff(got, &reference);
            if ds == 8 {
                assert_eq!(got, &reference[..], "single block must be exact");
            } else {
                assert!(err <= 1e-13, "d_s={ds}: {err:e}");
            }
        }
    }
}

#[test]
fn two_layer_stack_matches_hand_unrolled_reference() {
    let mut arch = Architecture::rnn(2, 4, 2, Activation::Tanh);
    arch.layers = 2;
    arch.aggregator = AggregatorSpec::Linear { out: 3 };
    arch.mode = OutputMode::SeqToSeq;
    let m = random_model(&arch, 3, 0.5);
    let batch = random_batch(2, 6, 2, 3);
    let y = m.predict(&batch).unwrap();
    let (c0, c1) = (rnn_cell(&m, 0), rnn_cell(&m, 1));
    let Aggregator::Linear(agg) = &m.aggregator else {
        panic!()
    };
    for i in 0..2 {
        let h1 = dense_rnn(&c0.w_h.to_dense(), &c0.w_x, &c0.b, Activation::Tanh, batch.input(i), 2);
        let h2 = dense_rnn(&c1.w_h.to_dense(), &c1.w_x, &c1.b, Activation::Tanh, &h1, 4);
        for s in 0..6 {
            let h = &h2[s * 4..(s + 1) * 4];
            for r in 0..3 {
                let want = agg.b[r] + (0..4).map(|j| agg.w[(r, j)] * h[j]).sum::<f64>();
                let got = y[(i * 6 + s) * 3 + r];
                assert!((got - want).abs() <= 1e-14, "sample {i} step {s}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn zero_weights_with_relu_give_zero_outputs() {
    let mut arch = Architecture::rnn(3, 4, 2, Activation::Relu);
    arch.layers = 2;
    arch.aggregator = AggregatorSpec::FeedForward { inner: 4, out: 2 };
    arch.head = Some(1);
    let m = DeepModel::zeros(&arch).unwrap();
    let y = m.predict(&random_batch(3, 5, 3, 1)).unwrap();
    assert!(y.iter().all(|&v| v == 0.0));
}

#[test]
fn single_layer_identity_model_is_iterated_cell() {
    let arch = Architecture::rnn(2, 4, 2, Activation::Tanh);
    let m = random_model(&arch, 8, 0.6);
    let batch = random_batch(1, 5, 2, 4);
    let y = m.predict(&batch).unwrap();
    let c = rnn_cell(&m, 0);
    let mut h = vec![0.0; 4];
    for x in batch.input(0).chunks(2) {
        h = c.step(&h, x).unwrap();
    }
    assert_eq!(y, h);
}

#[test]
fn linear_similarity_surrogate_reproduces_states() {
    let mut rng = Rng::new(21);
    for d in [2, 4, 6] {
        let w_h = Mat::new(d, d, rng.gaussian_vec(0.0, 1.0 / (d as f64).sqrt(), d * d).unwrap()).unwrap();
        let w_x = Mat::new(d, 2, rng.gaussian_vec(0.0, 1.0, 2 * d).unwrap()).unwrap();
        let b = rng.gaussian_vec(0.0, 0.3, d).unwrap();
        let cell = ParaRnnCell::new(
            BlockDiagonalMatrix::new(vec![w_h]).unwrap(),
            w_x,
            b,
            Activation::Identity,
        )
        .unwrap();
        let surrogate = similarity_surrogate(&cell, 1e-10).unwrap();
        assert_eq!(surrogate.layers[0].block_size(), 2);
        let original = DeepModel::from_cell(Cell::Rnn(cell), Aggregator::Identity, OutputMode::SeqToSeq).unwrap();
        let batch = random_batch(3, 12, 2, d as u64);
        let want = original.predict(&batch).unwrap();
        let got = surrogate.predict(&batch).unwrap();
        let scale = want.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let err = max_abs_diff(&got, &want) / scale;
        assert!(err <= 1e-10, "d={d}: {err:e}");
    }
}

fn linear_agg_model(k: usize, ds: usize, seed: u64) -> DeepModel {
    let mut arch = Architecture::rnn(2, k * ds, ds, Activation::Tanh);
    arch.aggregator = AggregatorSpec::Linear { out: 3 };
    arch.mode = OutputMode::SeqToSeq;
    random_model(&arch, seed, 0.5)
}

#[test]
fn additive_decomposition_sums_to_aggregate() {
    for (k, ds) in [(1, 4), (4, 2), (4, 1)] {
        let m = linear_agg_model(k, ds, 40 + k as u64);
        let batch = random_batch(3, 7, 2, 9);
        let parts = m.additive_decompose(&batch).unwrap();
        assert_eq!(parts.len(), k);
        let y = m.predict(&batch).unwrap();
        let Aggregator::Linear(agg) = &m.aggregator else {
            panic!()
        };
        for (p, want) in y.iter().enumerate() {
            let sum: f64 = parts.iter().map(|c| c[p]).sum::<f64>() + agg.b[p % 3];
            assert!((sum - want).abs() < 1e-12);
        }
    }
}

#[test]
fn zeroing_block_columns_removes_its_contribution() {
    let m = linear_agg_model(4, 2, 77);
    let batch = random_batch(2, 5, 2, 10);
    let base = m.additive_decompose(&batch).unwrap();
    let mut cut = m.clone();
    if let Aggregator::Linear(Linear { w, .. }) = &mut cut.aggregator {
        for r in 0..3 {
            w.row_mut(r)[2..4].fill(0.0);
        }
    }
    let after = cut.additive_decompose(&batch).unwrap();
    assert!(after[1].iter().all(|&v| v == 0.0));
    for k in [0, 2, 3] {
        assert_eq!(after[k], base[k]);
    }
    let y0 = m.predict(&batch).unwrap();
    let y1 = cut.predict(&batch).unwrap();
    for p in 0..y0.len() {
        assert!((y0[p] - y1[p] - base[1][p]).abs() < 1e-12);
    }
}

#[test]
fn decomposition_needs_linear_aggregator() {
    let arch = Architecture::rnn(1, 4, 2, Activation::Tanh);
    let m = DeepModel::zeros(&arch).unwrap();
    assert!(m.additive_decompose(&random_batch(1, 2, 1, 0)).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    for cell in [CellKind::Rnn, CellKind::Lstm, CellKind::Gru] {
        let arch = Architecture {
            cell,
            d_in: 3,
            hidden: 6,
            block_size: 2,
            layers: 2,
            activation: Activation::Sigmoid,
            aggregator: AggregatorSpec::FeedForward { inner: 5, out: 2 },
            head: Some(1),
            input_projection: true,
            mode: OutputMode::SeqToOne,
        };
        let m = random_model(&arch, 99, 1.3);
        let text = checkpoint::to_string(&m).unwrap();
        let back = checkpoint::from_str(&text).unwrap();
        assert_eq!(back, m);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        checkpoint::save(&m, &path).unwrap();
        assert_eq!(checkpoint::load(&path).unwrap(), m);
    }
}

#[test]
fn checkpoint_rejects_corruption() {
    let m = random_model(&Architecture::rnn(1, 2, 1, Activation::Tanh), 1, 1.0);
    let text = checkpoint::to_string(&m).unwrap();
    assert!(checkpoint::from_str(&text.replacen("pararnn-checkpoint", "other", 1)).is_err());
    assert!(checkpoint::from_str(&text.replace("block1", "block7")).is_err());
    let truncated: String = text.lines().take(4).map(|l| format!("{l}\n")).collect();
    assert!(checkpoint::from_str(&truncated).is_err());
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let arch = Architecture {
        cell: CellKind::Lstm,
        d_in: 2,
        hidden: 8,
        block_size: 2,
        layers: 2,
        activation: Activation::Tanh,
        aggregator: AggregatorSpec::Linear { out: 2 },
        head: None,
        input_projection: false,
        mode: OutputMode::SeqToSeq,
    };
    let m = random_model(&arch, 4, 0.4);
    let batch = random_batch(37, 6, 2, 5);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let (y, cache) = m.forward(&batch).unwrap();
            let g = m.backward(&cache, &y).unwrap();
            (y, g.flat())
        })
    };
    let (y1, g1) = run(1);
    let (y4, g4) = run(4);
    assert_eq!(y1, y4);
    assert_eq!(g1, g4);
}
