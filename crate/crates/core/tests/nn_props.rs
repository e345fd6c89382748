use physadv::nn::{
    self, FeatureScaler, LabeledDataset, LayerSpec, Network, NetworkSpec, TrainConfig, ATTACK, NORMAL,
};
use physadv::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_spec() -> impl Strategy<Value = NetworkSpec> {
    (
        2usize..8,
        prop::collection::vec((2usize..10, 0.0f64..0.5), 1..4),
        any::<u64>(),
    )
        .prop_map(|(input_dim, hidden, seed)| {
            let mut layers: Vec<LayerSpec> = hidden
                .into_iter()
                .map(|(w, p)| LayerSpec::relu(w).dropout(p))
                .collect();
            layers.push(LayerSpec::softmax(2));
            NetworkSpec {
                input_dim,
                layers,
                seed,
            }
        })
}

fn blobs(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut data = LabeledDataset::default();
    for i in 0..n {
        let label = i % 2;
        let centre = if label == NORMAL { -2.0 } else { 2.0 };
        data.push(
            vec![centre + noise.sample(&mut rng), centre + noise.sample(&mut rng)],
            label,
        );
    }
    data
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn input_gradient_matches_central_differences(
        spec in random_spec(),
        xs in prop::collection::vec(-1.0f64..1.0, 8),
        label in 0usize..2,
        scaled in any::<bool>(),
    ) {
        let d = spec.input_dim;
        let mut net = Network::build(spec).unwrap();
        if scaled {
            let scaler = FeatureScaler {
                mean: (0..d).map(|i| 0.1 * i as f64).collect(),
                std: (0..d).map(|i| 0.5 + 0.25 * i as f64).collect(),
            };
            net = net.with_scaler(scaler).unwrap();
        }
        let x = &xs[..d];
        let g = net.input_gradient(x, label).unwrap();
        let h = 1e-5;
        for i in 0..d {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            let fd = (net.loss(&up, label).unwrap() - net.loss(&down, label).unwrap()) / (2.0 * h);
            // Absolute floor for components that are zero up to round-off.
            let denom = g[i].abs().max(fd.abs()).max(1e-6);
            prop_assert!((g[i] - fd).abs() / denom < 1e-4, "component {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn outputs_lie_on_the_simplex(
        spec in random_spec(),
        xs in prop::collection::vec(-100.0f64..100.0, 8),
    ) {
        let d = spec.input_dim;
        let net = Network::build(spec).unwrap();
        let p = net.forward(&xs[..d]).unwrap();
        prop_assert_eq!(p.len(), 2);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn training_is_deterministic() {
    let data = blobs(200, 7);
    let spec = NetworkSpec {
        input_dim: 2,
        layers: vec![LayerSpec::relu(8).dropout(0.2), LayerSpec::softmax(2)],
        seed: 3,
    };
    let cfg = TrainConfig {
        epochs: 20,
        seed: 11,
        ..TrainConfig::default()
    };
    let a = Network::build(spec.clone()).unwrap().train_sgd(&data, &cfg).unwrap();
    let b = Network::build(spec).unwrap().train_sgd(&data, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn separable_blobs_are_learned() {
    let data = blobs(400, 1);
    let spec = NetworkSpec {
        input_dim: 2,
        layers: vec![LayerSpec::relu(8), LayerSpec::softmax(2)],
        seed: 5,
    };
    let cfg = TrainConfig {
        epochs: 200,
        patience: None,
        ..TrainConfig::default()
    };
    let net = Network::build(spec).unwrap().train_sgd(&data, &cfg).unwrap();
    let acc = nn::class_accuracy(&net, &data).unwrap();
    assert!(acc >= 0.99, "training accuracy {acc}");
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    let data = blobs(100, 2);
    let scaler = FeatureScaler::fit(&data.features).unwrap();
    let net = Network::build(NetworkSpec::water_surrogate(2, 9))
        .unwrap()
        .with_scaler(scaler)
        .unwrap()
        .train_sgd(&data, &TrainConfig { epochs: 3, ..TrainConfig::default() })
        .unwrap();
    net.save(&path).unwrap();
    let back = Network::load(&path).unwrap();
    assert_eq!(back, net);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        assert_eq!(back.forward(&x).unwrap(), net.forward(&x).unwrap());
        assert_eq!(
            back.input_gradient(&x, ATTACK).unwrap(),
            net.input_gradient(&x, ATTACK).unwrap()
        );
    }
}

#[test]
fn truncated_model_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    Network::build(NetworkSpec::fdia_surrogate(12, 1)).unwrap().save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(matches!(Network::load(&path), Err(Error::MalformedFile { .. })));
}

#[test]
fn inconsistent_model_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    let mut net = Network::build(NetworkSpec::fdia_surrogate(12, 1)).unwrap();
    // Claim a different input width than the first weight matrix has.
    net.spec.input_dim = 13;
    net.save(&path).unwrap();
    assert!(matches!(Network::load(&path), Err(Error::MalformedFile { .. })));

    let mut net = Network::build(NetworkSpec::fdia_surrogate(12, 1)).unwrap();
    net.biases[0].pop();
    net.save(&path).unwrap();
    assert!(matches!(Network::load(&path), Err(Error::MalformedFile { .. })));
}
