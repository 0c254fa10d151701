mod common;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use uwintent_core::mfcc::{MfccConfig, MfccMatrix, MFCC_DIM};
use uwintent_core::nn::{
    batch_gradient, lstm_forward, train, train_scale_model, LstmParams, ScaleClass, ScaleModel, TrainConfig,
};
use uwintent_core::synthgen::{gen_scale_tone, SynthToneSpec};

use common::criteria;
use common::oracles::reference_lstm_probs;

fn random_matrix(rng: &mut ChaCha8Rng) -> MfccMatrix {
    let normal = Normal::new(0.0, 1.0).unwrap();
    MfccMatrix::new(Array2::from_shape_fn((MFCC_DIM, MFCC_DIM), |_| normal.sample(rng))).unwrap()
}

fn rows(m: &MfccMatrix) -> Vec<Vec<f64>> {
    m.coeffs().rows().into_iter().map(|r| r.to_vec()).collect()
}

#[test]
fn every_block_matches_central_differences() {
    let errors = criteria::gradient_errors(4, 1e-4, 21);
    assert_eq!(errors.len(), LstmParams::BLOCK_NAMES.len());
    for (name, err) in &errors {
        assert!(*err < 1e-4, "{name}: relative error {err:.3e}");
    }
    // A second network and input, to avoid a lucky draw.
    for (name, err) in criteria::gradient_errors(4, 1e-4, 99) {
        assert!(err < 1e-4, "{name}: relative error {err:.3e}");
    }
}

/// Output of a fixed network on a fixed input, recorded once and confirmed
/// by the independent step-by-step recurrence below.
const GOLDEN: [f64; 5] = [
    0.2330799129235334,
    0.19079882917118376,
    0.19609826062196942,
    0.19832060249873254,
    0.18170239478458083,
];

#[test]
fn forward_matches_reference_recurrence_and_golden_vector() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = LstmParams::init(MFCC_DIM, 8, 5, 3);
    let input = random_matrix(&mut rng);
    let (probs, _) = lstm_forward(&params, &input).unwrap();
    let reference = reference_lstm_probs(&params, &rows(&input));
    for (a, b) in probs.iter().zip(&reference) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    for (a, g) in probs.iter().zip(GOLDEN) {
        assert!((a - g).abs() < 1e-12, "{a} vs golden {g}");
    }
}

#[test]
fn forward_agrees_with_reference_on_random_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for seed in 0..20 {
        let hidden = rng.gen_range(1..12);
        let mut params = LstmParams::init(MFCC_DIM, hidden, 5, seed);
        let flat: Vec<f64> = params.to_flat().iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
        params.set_flat(&flat);
        let input = random_matrix(&mut rng);
        let (probs, _) = lstm_forward(&params, &input).unwrap();
        assert!((probs.sum() - 1.0).abs() < 1e-9);
        for (a, b) in probs.iter().zip(reference_lstm_probs(&params, &rows(&input))) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn full_batch_descent_never_raises_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data: Vec<(MfccMatrix, ScaleClass)> = (0..10)
        .map(|i| (random_matrix(&mut rng), ScaleClass::ALL[i % 5]))
        .collect();
    let batch: Vec<&(MfccMatrix, ScaleClass)> = data.iter().collect();
    let mut params = LstmParams::init(MFCC_DIM, 16, 5, 1);
    let mut flat = params.to_flat();
    let mut last = f64::INFINITY;
    for step in 0..20 {
        let (loss, grad, _) = batch_gradient(&params, &batch).unwrap();
        assert!(loss <= last, "step {step}: loss rose {last} -> {loss}");
        last = loss;
        for (p, g) in flat.iter_mut().zip(&grad) {
            *p -= 1e-4 * g;
        }
        params.set_flat(&flat);
    }
}

fn one_tone_per_class() -> Vec<(uwintent_core::signal_io::AudioSegment, ScaleClass)> {
    ScaleClass::ALL
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let clip = gen_scale_tone(&SynthToneSpec::new(c, 0.6, 0.7, 40 + i as u64).with_snr(20.0)).unwrap();
            (clip, c)
        })
        .collect()
}

#[test]
fn one_example_per_class_is_memorised_in_200_epochs() {
    let set = one_tone_per_class();
    let cfg = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };
    let (model, report) = train_scale_model(&set, &[], &MfccConfig::default(), &cfg).unwrap();
    assert_eq!(report.epochs.last().unwrap().train_accuracy, 1.0);
    for (clip, class) in &set {
        assert_eq!(model.predict(clip).unwrap().class(), Some(*class));
    }
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data: Vec<(MfccMatrix, ScaleClass)> = (0..25)
        .map(|i| (random_matrix(&mut rng), ScaleClass::ALL[i % 5]))
        .collect();
    let cfg = TrainConfig {
        hidden_dim: 8,
        epochs: 3,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let (a, ra) = train(&data, &data, &cfg).unwrap();
    let (b, rb) = train(&data, &data, &cfg).unwrap();
    assert_eq!(a.to_flat(), b.to_flat());
    assert_eq!(ra, rb);
    let (c, _) = train(&data, &data, &TrainConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a.to_flat(), c.to_flat());
}

#[test]
fn saved_model_predicts_identically() {
    let set = one_tone_per_class();
    let cfg = TrainConfig {
        hidden_dim: 8,
        epochs: 5,
        ..TrainConfig::default()
    };
    let (model, _) = train_scale_model(&set, &[], &MfccConfig::default(), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scale.json");
    model.save(&path).unwrap();
    let loaded = ScaleModel::load(&path).unwrap();
    for (clip, _) in &set {
        assert_eq!(model.predict(clip).unwrap(), loaded.predict(clip).unwrap());
    }
}
