use pararnn::bridge::{
    ar_infinity, arma_recursion, arma_to_linear_rnn, check_arma_equivalence, garch_inputs, garch_vech_to_linear_rnn,
    lagged_inputs, run_cell, unvech, vech, vech_outer, ArmaSpec, GarchVechSpec,
};
use pararnn::linalg::{max_abs_diff, Mat, Rng};

#[test]
fn random_specs_match_both_oracles() {
    let mut rng = Rng::new(6);
    for case in 0..100 {
        let d = if case % 2 == 0 { 1 } else { 3 };
        let spec = ArmaSpec::random(d, 0.98, &mut rng).unwrap();
        let ys = rng.gaussian_vec(0.0, 1.0, 40 * d).unwrap();
        let check = check_arma_equivalence(&spec, &ys, 1e-10).unwrap();
        assert!(check.passed, "case {case}: {check:?}");
        assert_eq!(check.steps, 41);
    }
}

#[test]
fn one_step_recursion_matches_cell_exactly() {
    let mut rng = Rng::new(8);
    let spec = ArmaSpec::random(3, 0.9, &mut rng).unwrap();
    let xs = lagged_inputs(&rng.gaussian_vec(0.0, 1.0, 60).unwrap(), 3);
    let cell = arma_to_linear_rnn(&spec).unwrap();
    assert_eq!(run_cell(&cell, &xs).unwrap(), arma_recursion(&spec, &xs).unwrap());
    let a = ar_infinity(&spec, &xs).unwrap();
    assert!(max_abs_diff(&a, &run_cell(&cell, &xs).unwrap()) < 1e-10);
}

#[test]
fn arma_series_is_recovered_from_innovations() {
    // Simulate y_t = Φ y_{t-1} + ε_t − Θ ε_{t-1}; the cell's state is the
    // one-step prediction so y_t − h_t must equal ε_t.
    let mut rng = Rng::new(12);
    let spec = ArmaSpec::scalar(0.7, 0.3);
    let eps = rng.gaussian_vec(0.0, 1.0, 30).unwrap();
    let mut ys = Vec::new();
    let (mut y, mut e) = (0.0, 0.0);
    for &n in &eps {
        y = 0.7 * y + n - 0.3 * e;
        e = n;
        ys.push(y);
    }
    let h = run_cell(&arma_to_linear_rnn(&spec).unwrap(), &lagged_inputs(&ys, 1)).unwrap();
    for t in 0..30 {
        assert!((ys[t] - h[t] - eps[t]).abs() < 1e-12);
    }
}

#[test]
fn bivariate_garch_matches_direct_recursion() {
    let mut rng = Rng::new(3);
    let phi = Mat::new(3, 3, rng.uniform_vec(0.0, 0.25, 9).unwrap()).unwrap();
    let theta = Mat::new(3, 3, rng.uniform_vec(0.0, 0.2, 9).unwrap()).unwrap();
    let b = rng.uniform_vec(0.01, 0.1, 3).unwrap();
    let spec = GarchVechSpec {
        phi: phi.clone(),
        theta: theta.clone(),
        b: b.clone(),
    };
    let ys = rng.gaussian_vec(0.0, 1.0, 20).unwrap();
    let h = run_cell(&garch_vech_to_linear_rnn(&spec).unwrap(), &garch_inputs(&ys, 2)).unwrap();
    let mut state = vec![0.0; 3];
    let mut prev = vec![0.0, 0.0];
    for t in 0..10 {
        let shock = vech(
            &Mat::from_rows(&[
                [prev[0] * prev[0], prev[0] * prev[1]],
                [prev[1] * prev[0], prev[1] * prev[1]],
            ])
            .unwrap(),
        )
        .unwrap();
        let mut next = b.clone();
        for i in 0..3 {
            for j in 0..3 {
                next[i] += theta[(i, j)] * shock[j] + phi[(i, j)] * state[j];
            }
        }
        state = next;
        assert!(max_abs_diff(&h[t * 3..(t + 1) * 3], &state) < 1e-12, "step {t}");
        prev = ys[t * 2..(t + 1) * 2].to_vec();
    }
}

#[test]
fn unvech_round_trips_symmetric_matrices() {
    let mut rng = Rng::new(4);
    for _ in 0..20 {
        let a = Mat::new(4, 4, rng.gaussian_vec(0.0, 1.0, 16).unwrap()).unwrap();
        let s = a.add(&a.transpose()).unwrap();
        let v = vech(&s).unwrap();
        assert_eq!(v.len(), 10);
        assert_eq!(unvech(&v).unwrap(), s);
    }
    assert_eq!(unvech(&vech_outer(&[1.0, 2.0, 3.0])).unwrap()[(2, 1)], 6.0);
}
