use earlyexit::predictor::{evaluate, train, LossMode, Mlp, TrainConfig};
use earlyexit::router::{difficulty_correlation, spearman, ExitCosts};
use earlyexit::sim::{derive_seed, OracleConfig, QualityOracle};

fn oracle(cfg: OracleConfig) -> QualityOracle {
    QualityOracle::new(cfg).unwrap()
}

#[test]
fn attribute_coordinate_is_standard_normal() {
    let inputs = oracle(OracleConfig::default()).sample_inputs(10_000);
    let a: Vec<f64> = inputs.iter().map(|x| x.attribute).collect();
    let n = a.len() as f64;
    let mean = a.iter().sum::<f64>() / n;
    let sd = (a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() < 0.05, "mean {mean}");
    assert!((sd - 1.0).abs() < 0.05, "sd {sd}");
    assert!(inputs.iter().all(|x| x.attribute == x.features[0]));
}

#[test]
fn sampling_is_deterministic() {
    let a = oracle(OracleConfig::default()).sample_inputs(3);
    let b = oracle(OracleConfig::default()).sample_inputs(3);
    assert_eq!(a, b);
    let other = oracle(OracleConfig {
        seed: 1,
        ..OracleConfig::default()
    })
    .sample_inputs(3);
    assert_ne!(a, other);
}

#[test]
fn noiseless_scores_rank_with_difficulty_and_fall_with_capacity() {
    let o = oracle(OracleConfig {
        noise_sd: 0.0,
        ..OracleConfig::default()
    });
    let inputs = oracle(OracleConfig::default()).sample_inputs(1000);
    let d: Vec<f64> = inputs
        .iter()
        .map(|x| o.difficulty(&x.features).unwrap())
        .collect();
    let scores: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| o.true_scores(&x.features).unwrap())
        .collect();
    for s in &scores {
        assert!(s.windows(2).all(|w| w[1] < w[0]), "{s:?}");
        assert!(s.iter().all(|v| *v > 0.0));
    }
    for e in 0..o.exits() {
        let col: Vec<f64> = scores.iter().map(|s| s[e]).collect();
        let rho = spearman(&d, &col).unwrap();
        assert!((rho - 1.0).abs() < 1e-12, "exit {e}: rho {rho}");
    }
}

#[test]
fn zero_weights_give_identical_scores() {
    let cfg = OracleConfig {
        noise_sd: 0.0,
        difficulty_weights: vec![0.0; 16],
        ..OracleConfig::default()
    };
    let o = oracle(cfg);
    let inputs = oracle(OracleConfig::default()).sample_inputs(20);
    let first = o.true_scores(&inputs[0].features).unwrap();
    for x in &inputs {
        assert_eq!(o.true_scores(&x.features).unwrap(), first);
    }
}

#[test]
fn dataset_sizes_and_split_determinism() {
    let o = oracle(OracleConfig::default());
    let one = o.make_dataset(1, 1).unwrap();
    assert_eq!(one.len(), 1);
    let big = o.make_dataset(500, 100).unwrap();
    assert_eq!(big.len(), 50_000);
    assert_eq!((big.train.len(), big.val.len()), (45_000, 5_000));
    assert_eq!(
        o.make_dataset(50, 20).unwrap(),
        o.make_dataset(50, 20).unwrap()
    );
}

#[test]
fn self_and_null_correlation() {
    let o = oracle(OracleConfig::default());
    let inputs = oracle(OracleConfig {
        seed: 9,
        ..OracleConfig::default()
    })
    .sample_inputs(1000);
    let costs = ExitCosts::new(vec![1.0, 2.0, 3.0, 4.0], 5.0).unwrap();
    let d: Vec<f64> = inputs
        .iter()
        .map(|x| o.difficulty(&x.features).unwrap())
        .collect();
    let rho = difficulty_correlation(&inputs, &o, &costs, 0.5, &d).unwrap();
    assert!(rho > 0.9, "self rho {rho}");

    let mut rng_oracle = oracle(OracleConfig {
        seed: 1234,
        ..OracleConfig::default()
    });
    let null: Vec<f64> = rng_oracle
        .sample_inputs(1000)
        .iter()
        .map(|x| x.attribute)
        .collect();
    let rho = difficulty_correlation(&inputs, &o, &costs, 0.5, &null).unwrap();
    assert!(rho.abs() < 0.15, "null rho {rho}");
}

/// Mean validation error over three seeds at each noise level must not fall
/// as noise grows.
#[test]
fn predictor_error_grows_with_noise() {
    let levels = [0.02, 0.2, 0.5];
    let means: Vec<f64> = levels
        .iter()
        .map(|&noise_sd| {
            (0..3u64)
                .map(|run| {
                    let o = oracle(OracleConfig {
                        noise_sd,
                        seed: derive_seed(run, "oracle"),
                        ..OracleConfig::default()
                    });
                    let ds = o.make_dataset(100, 20).unwrap();
                    let mut m = Mlp::new(&[16, 64, 64, 4], 0.2, derive_seed(run, "init")).unwrap();
                    let cfg = TrainConfig {
                        loss: LossMode::Mse,
                        learning_rate: 0.01,
                        min_lr: 0.0,
                        epochs: 100,
                        batch_size: 16,
                        seed: derive_seed(run, "train"),
                    };
                    train(&mut m, &ds.train, &cfg).unwrap();
                    evaluate(&m, &ds.val).unwrap().overall
                })
                .sum::<f64>()
                / 3.0
        })
        .collect();
    println!("mean validation error by noise level {levels:?}: {means:?}");
    assert!(means.windows(2).all(|w| w[1] >= w[0]), "{means:?}");
}
