use pararnn::eigen::{eigenvalues, real_block_diagonalize, rotation_block, BlockLayout, DEFAULT_TOL};
use pararnn::features::{classify_block_diagonal, classify_features, ClassifyOptions, RecurrenceFeature};
use pararnn::linalg::{BlockDiagonalMatrix, Mat, Rng};
use proptest::prelude::*;

fn gaussian(d: usize, rng: &mut Rng) -> Mat {
    Mat::new(d, d, rng.gaussian_vec(0.0, 1.0, d * d).unwrap()).unwrap()
}

/// Well-conditioned basis `I + 0.3 G / √d`.
fn near_identity(d: usize, rng: &mut Rng) -> Mat {
    let g = gaussian(d, rng).scale(0.3 / (d as f64).sqrt());
    Mat::identity(d).add(&g).unwrap()
}

/// `(re, im)` pairs sorted, one entry per conjugate pair.
fn sorted(eigs: &[pararnn::eigen::ComplexPair]) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = eigs.iter().map(|e| (e.re, e.im)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigenvalues_sum_to_the_trace(seed in any::<u64>(), d in 1usize..12) {
        let m = gaussian(d, &mut Rng::new(seed));
        let eigs = eigenvalues(&m, DEFAULT_TOL).unwrap();
        let count: usize = eigs.iter().map(|e| e.multiplicity()).sum();
        prop_assert_eq!(count, d);
        let sum: f64 = eigs.iter().map(|e| e.re * e.multiplicity() as f64).sum();
        let trace: f64 = (0..d).map(|i| m[(i, i)]).sum();
        prop_assert!((sum - trace).abs() <= 1e-8 * (1.0 + m.frobenius_norm()), "{sum} vs {trace}");
        // Schur: Σ|λ|² ≤ ‖m‖_F².
        let sq: f64 = eigs.iter().map(|e| e.modulus().powi(2) * e.multiplicity() as f64).sum();
        prop_assert!(sq <= m.frobenius_norm().powi(2) * (1.0 + 1e-9));
    }

    #[test]
    fn reports_account_for_every_dimension(seed in any::<u64>(), d in 1usize..12, rank_cut in 0usize..4) {
        let mut rng = Rng::new(seed);
        let mut m = gaussian(d, &mut rng);
        for i in 0..rank_cut.min(d) {
            for j in 0..d {
                m[(i, j)] = 0.0;
            }
        }
        for opts in [ClassifyOptions::strict(), ClassifyOptions::clustered()] {
            let r = classify_features(&m, opts).unwrap();
            prop_assert_eq!(r.accounted_dim(), d);
            prop_assert!(r.nullity >= rank_cut.min(d));
            for f in &r.features {
                if let RecurrenceFeature::C { theta, .. } = f {
                    prop_assert!(*theta > 0.0 && *theta < std::f64::consts::PI);
                }
            }
        }
        let strict = classify_features(&m, ClassifyOptions::strict()).unwrap();
        prop_assert!(strict.features.iter().all(|f| f.order() == 1));
    }

    #[test]
    fn similarity_keeps_a_separated_spectrum(seed in any::<u64>(), reals in 0usize..5, pairs in 0usize..3) {
        prop_assume!(reals + pairs > 0);
        let mut rng = Rng::new(seed);
        let mut blocks = Vec::new();
        for i in 0..reals {
            blocks.push(Mat::new(1, 1, vec![-0.9 + 0.45 * i as f64]).unwrap());
        }
        for k in 0..pairs {
            blocks.push(rotation_block(0.5 + 0.3 * k as f64, 0.4 + 0.9 * k as f64));
        }
        let core = Mat::direct_sum(&blocks);
        let d = core.rows();
        let p = near_identity(d, &mut rng);
        let m = p.matmul(&core).unwrap().matmul(&p.inverse().unwrap()).unwrap();
        let want = sorted(&eigenvalues(&core, DEFAULT_TOL).unwrap());
        let got = sorted(&eigenvalues(&m, DEFAULT_TOL).unwrap());
        prop_assert_eq!(want.len(), got.len());
        for (a, b) in want.iter().zip(&got) {
            prop_assert!((a.0 - b.0).abs() < 1e-8 && (a.1 - b.1).abs() < 1e-8, "{a:?} vs {b:?}");
        }
        let form = real_block_diagonalize(&m, DEFAULT_TOL, BlockLayout::Mixed).unwrap();
        prop_assert!(form.reconstruction_error(&m).unwrap() < 1e-8);
        let a = classify_features(&core, ClassifyOptions::clustered()).unwrap();
        let b = classify_features(&m, ClassifyOptions::clustered()).unwrap();
        prop_assert_eq!(a.type_counts(), b.type_counts());
    }

    #[test]
    fn block_kernels_match_the_dense_matrix(seed in any::<u64>(), k in 1usize..5, ds in prop::sample::select(vec![1usize, 2, 3, 4, 8])) {
        let mut rng = Rng::new(seed);
        let blocks: Vec<Mat> = (0..k).map(|_| gaussian(ds, &mut rng)).collect();
        let w = BlockDiagonalMatrix::new(blocks).unwrap();
        let dense = w.to_dense();
        let d = w.dim();
        let v = rng.gaussian_vec(0.0, 1.0, d).unwrap();
        let u = rng.gaussian_vec(0.0, 1.0, d).unwrap();

        let mut out = vec![0.0; d];
        w.apply_add_into(&v, &mut out);
        let mut want = vec![0.0; d];
        dense.matvec_add_into(&v, &mut want);
        prop_assert_eq!(&out, &want);

        let mut out = vec![0.0; d];
        w.apply_transpose_add_into(&v, &mut out);
        let mut want = vec![0.0; d];
        dense.matvec_t_add_into(&v, &mut want);
        prop_assert_eq!(&out, &want);

        // The block outer product is the dense one masked to the diagonal blocks.
        let mut w2 = w.clone();
        w2.add_block_outer(0.5, &u, &v);
        let mut full = dense.clone();
        full.add_outer(0.5, &u, &v);
        let got = w2.to_dense();
        for i in 0..d {
            for j in 0..d {
                let want = if i / ds == j / ds { full[(i, j)] } else { 0.0 };
                prop_assert_eq!(got[(i, j)], want);
            }
        }

        let per_block = classify_block_diagonal(&w, ClassifyOptions::strict()).unwrap();
        prop_assert_eq!(per_block.dim, d);
        prop_assert_eq!(per_block.accounted_dim(), d);
    }
}
