use pararnn::datagen::{gen_adding_problem, SequenceBatch, TargetLayout};
use pararnn::linalg::{Mat, Rng};
use pararnn::net::{init_params, Activation, Architecture, DeepModel, InitScheme};
use pararnn::train::{evaluate, train, write_metrics_jsonl, Control, Metric, Schedule, StopReason, TrainConfig};
use pararnn::Error;

fn regression_data(n: usize, seed: u64) -> (SequenceBatch, Vec<f64>) {
    let mut rng = Rng::new(seed);
    let x = rng.gaussian_vec(0.0, 1.0, n * 3).unwrap();
    let coef = [0.7, -1.3, 0.4];
    let z: Vec<f64> = x
        .chunks(3)
        .map(|r| 0.25 + r.iter().zip(coef).map(|(a, b)| a * b).sum::<f64>() + 0.1 * rng.normal())
        .collect();
    let b = SequenceBatch::new(n, 1, 3, 1, x.clone(), z.clone(), TargetLayout::Last).unwrap();
    // Closed-form least squares with intercept: solve (AᵀA) β = Aᵀz.
    let mut ata = Mat::zeros(4, 4);
    let mut atz = vec![0.0; 4];
    for (r, zi) in x.chunks(3).zip(&z) {
        let a = [r[0], r[1], r[2], 1.0];
        ata.add_outer(1.0, &a, &a);
        for j in 0..4 {
            atz[j] += a[j] * zi;
        }
    }
    (b, ata.lu().unwrap().solve(&atz).unwrap())
}

fn linear_model() -> DeepModel {
    DeepModel::zeros(&Architecture::rnn(3, 1, 1, Activation::Identity)).unwrap()
}

fn no_callback() -> impl FnMut(&DeepModel, &mut pararnn::train::Metrics) -> pararnn::Result<Control> {
    |_, _| Ok(Control::Continue)
}

#[test]
fn zero_epochs_leave_the_model_alone() {
    let (b, _) = regression_data(50, 1);
    let mut arch = Architecture::rnn(3, 4, 2, Activation::Tanh);
    arch.head = Some(1);
    let m = init_params(&arch, &InitScheme::UniformScaled, &mut Rng::new(2)).unwrap();
    let cfg = TrainConfig {
        max_epochs: 0,
        ..TrainConfig::default()
    };
    let out = train(m.clone(), &b, &b, &cfg, &mut no_callback()).unwrap();
    assert_eq!(out.model, m);
    assert_eq!(out.metrics.len(), 1);
    assert_eq!(out.metrics[0].epoch, 0);
}

#[test]
fn least_squares_is_recovered() {
    let (b, beta) = regression_data(400, 3);
    let cfg = TrainConfig {
        learning_rate: 0.05,
        batch_size: 40,
        max_epochs: 200,
        seed: 4,
        schedule: Schedule::ReduceOnPlateau {
            factor: 0.5,
            patience: 3,
        },
        min_lr: 1e-7,
        ..TrainConfig::default()
    };
    let out = train(linear_model(), &b, &b, &cfg, &mut no_callback()).unwrap();
    let w = out.model.params_flat();
    // Layout: recurrent scalar, three input weights, bias.
    for j in 0..3 {
        assert!(
            (w[1 + j] - beta[j]).abs() < 1e-3,
            "weight {j}: {} vs {}",
            w[1 + j],
            beta[j]
        );
    }
    assert!((w[4] - beta[3]).abs() < 1e-3);
}

#[test]
fn plateau_halves_every_patience_epochs() {
    let (b, _) = regression_data(20, 5);
    let cfg = TrainConfig {
        learning_rate: 0.1,
        batch_size: 5,
        max_epochs: 10,
        schedule: Schedule::ReduceOnPlateau {
            factor: 0.5,
            patience: 3,
        },
        frozen: vec!["layer0".into()],
        ..TrainConfig::default()
    };
    let out = train(linear_model(), &b, &b, &cfg, &mut no_callback()).unwrap();
    let lrs: Vec<f64> = out.metrics.iter().map(|m| m.lr).collect();
    assert_eq!(
        lrs,
        vec![0.1, 0.1, 0.1, 0.05, 0.05, 0.05, 0.025, 0.025, 0.025, 0.0125, 0.0125]
    );
    assert!(out.metrics.windows(2).all(|w| w[0].val_loss == w[1].val_loss));
    assert_eq!(out.model, linear_model());
}

#[test]
fn min_lr_halts_training() {
    let (b, _) = regression_data(20, 5);
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 5,
        max_epochs: 50,
        schedule: Schedule::ReduceOnPlateau {
            factor: 0.5,
            patience: 1,
        },
        min_lr: 2e-4,
        frozen: vec!["layer0".into()],
        ..TrainConfig::default()
    };
    let out = train(linear_model(), &b, &b, &cfg, &mut no_callback()).unwrap();
    assert_eq!(out.stop, StopReason::MinLr);
    assert!(out.metrics.iter().all(|m| m.lr >= 2e-4));
    assert_eq!(out.metrics.len(), 4);
}

#[test]
fn step_decay_counts_iterations() {
    let (b, _) = regression_data(40, 6);
    let cfg = TrainConfig {
        learning_rate: 0.01,
        batch_size: 10,
        max_epochs: 3,
        schedule: Schedule::StepDecay { factor: 0.1, every: 4 },
        min_lr: 0.0,
        ..TrainConfig::default()
    };
    let out = train(linear_model(), &b, &b, &cfg, &mut no_callback()).unwrap();
    let lrs: Vec<f64> = out.metrics.iter().map(|m| m.lr).collect();
    assert_eq!(out.iterations, 12);
    assert!((lrs[1] - 1e-3).abs() < 1e-18 && (lrs[2] - 1e-4).abs() < 1e-18 && (lrs[3] - 1e-5).abs() < 1e-18);
}

#[test]
fn iteration_budget_stops_mid_epoch() {
    let (b, _) = regression_data(40, 6);
    let cfg = TrainConfig {
        batch_size: 10,
        max_epochs: 10,
        max_iterations: Some(6),
        ..TrainConfig::default()
    };
    let out = train(linear_model(), &b, &b, &cfg, &mut no_callback()).unwrap();
    assert_eq!(out.iterations, 6);
    assert_eq!(out.stop, StopReason::MaxIterations);
    assert_eq!(out.metrics.len(), 3);
}

#[test]
fn identical_seeds_give_identical_metrics() {
    let data = gen_adding_problem(120, 8, &Rng::new(1)).unwrap();
    let (tr, va, _) = data.split_fractions(0.8, 0.1).unwrap();
    let mut arch = Architecture::rnn(2, 6, 2, Activation::Tanh);
    arch.cell = pararnn::net::CellKind::Gru;
    arch.head = Some(1);
    let run = || {
        let m = init_params(&arch, &InitScheme::UniformScaled, &mut Rng::new(9)).unwrap();
        let cfg = TrainConfig {
            batch_size: 16,
            max_epochs: 4,
            seed: 11,
            gradient_clip: Some(1.0),
            ..TrainConfig::default()
        };
        let out = train(m, &tr, &va, &cfg, &mut no_callback()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.jsonl");
        write_metrics_jsonl(&p, &out.metrics).unwrap();
        std::fs::read(&p).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 5);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["epoch", "train_loss", "val_loss", "lr", "extra"] {
        assert!(first.get(key).is_some(), "{key} missing");
    }
}

#[test]
fn callback_sees_every_epoch() {
    let (b, _) = regression_data(30, 2);
    let cfg = TrainConfig {
        batch_size: 10,
        max_epochs: 3,
        ..TrainConfig::default()
    };
    let mut seen = Vec::new();
    let mut cb = |m: &DeepModel, r: &mut pararnn::train::Metrics| {
        r.extra.insert("bias".into(), m.params_flat()[4]);
        seen.push(r.epoch);
        Ok(Control::Continue)
    };
    let out = train(linear_model(), &b, &b, &cfg, &mut cb).unwrap();
    assert_eq!(seen, vec![0, 1, 2, 3]);
    assert!(out.metrics.iter().all(|m| m.extra.contains_key("bias")));
}

#[test]
fn callback_can_end_training() {
    let (b, _) = regression_data(30, 2);
    let cfg = TrainConfig {
        batch_size: 10,
        max_epochs: 10,
        ..TrainConfig::default()
    };
    let mut cb = |_: &DeepModel, r: &mut pararnn::train::Metrics| {
        Ok(if r.epoch == 2 { Control::Stop } else { Control::Continue })
    };
    let out = train(linear_model(), &b, &b, &cfg, &mut cb).unwrap();
    assert_eq!(out.stop, StopReason::Requested);
    assert_eq!(out.metrics.len(), 3);
    assert_eq!(out.iterations, 6);
    let mut stop_now = |_: &DeepModel, _: &mut pararnn::train::Metrics| Ok(Control::Stop);
    let out = train(linear_model(), &b, &b, &cfg, &mut stop_now).unwrap();
    assert_eq!((out.metrics.len(), out.iterations), (1, 0));
}

#[test]
fn exploding_model_reports_divergence() {
    let mut m = DeepModel::zeros(&Architecture::rnn(1, 1, 1, Activation::Identity)).unwrap();
    m.set_params_flat(&[1e3, 1.0, 0.0]).unwrap();
    let b = SequenceBatch::new(2, 400, 1, 1, vec![1.0; 800], vec![0.0; 2], TargetLayout::Last).unwrap();
    let err = train(m, &b, &b, &TrainConfig::default(), &mut no_callback()).unwrap_err();
    assert!(matches!(err, Error::Diverged { epoch: 0, .. }));
}

#[test]
fn constant_predictor_on_adding_problem() {
    let b = gen_adding_problem(100_000, 10, &Rng::new(8)).unwrap();
    let mut arch = Architecture::rnn(2, 1, 1, Activation::Tanh);
    arch.head = Some(1);
    let mut m = DeepModel::zeros(&arch).unwrap();
    let n = m.num_params();
    let mut p = vec![0.0; n];
    p[n - 1] = 1.0;
    m.set_params_flat(&p).unwrap();
    let mse = evaluate(&m, &b, Metric::Mse).unwrap();
    assert!((mse - 1.0 / 6.0).abs() < 0.005, "{mse}");
}

#[test]
fn invalid_configs_are_rejected() {
    let (b, _) = regression_data(10, 1);
    for cfg in [
        TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            schedule: Schedule::ReduceOnPlateau {
                factor: 1.5,
                patience: 3,
            },
            ..TrainConfig::default()
        },
        TrainConfig {
            schedule: Schedule::ReduceOnPlateau {
                factor: 0.5,
                patience: 0,
            },
            ..TrainConfig::default()
        },
    ] {
        assert!(train(linear_model(), &b, &b, &cfg, &mut no_callback()).is_err());
    }
    let parsed: Result<TrainConfig, _> = serde_json::from_str(r#"{"learning_rate": 0.1, "lr_typo": 1}"#);
    assert!(parsed.is_err());
}
