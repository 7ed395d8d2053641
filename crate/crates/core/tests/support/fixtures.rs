//! Small labeled window sets built from the synthetic generator.

#![allow(dead_code)]

use cutassess::nn::{Architecture, CnnModel, Tensor3};
use cutassess::synthgen::{generate_trajectory, SynthConfig};
use cutassess::training::{predict_classes, train, Batch, SplitDataset, TrainConfig, TrainHistory};
use cutassess::trajectory::{sample_and_augment, Window};

/// `n` windows of length 64, the `k`-th drawn from a class `k % 6` recording.
pub fn synthetic_windows(n: usize, seed: u64) -> Vec<Window> {
    let cfg = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    (0..n)
        .map(|k| {
            let t = generate_trajectory(&cfg, (k % 6) as u8, k);
            sample_and_augment(&t, 64, seed ^ k as u64).unwrap().swap_remove(0)
        })
        .collect()
}

/// Same windows for training and validation.
pub fn memorize_set(windows: Vec<Window>) -> SplitDataset {
    SplitDataset {
        val: windows.clone(),
        test: windows.clone(),
        train: windows,
        class_count: 6,
    }
}

pub fn inference_accuracy(model: &CnnModel, windows: &[Window]) -> f64 {
    let b = Batch::from_windows(windows).unwrap();
    let pred = predict_classes(model, &b.x).unwrap();
    pred.iter().zip(&b.labels).filter(|(p, l)| p == l).count() as f64 / b.labels.len() as f64
}

pub struct Overfit {
    pub history: TrainHistory,
    pub inference_acc: f64,
}

/// Sixteen windows, default architecture and optimizer, 300 epochs.
pub fn overfit_run() -> Overfit {
    let windows = synthetic_windows(16, 3);
    let data = memorize_set(windows.clone());
    let cfg = TrainConfig {
        epochs: 300,
        seed: 5,
        ..TrainConfig::default()
    };
    let model = CnnModel::new(Architecture::default(), 5).unwrap();
    let (best, history) = train(model, &data, &cfg).unwrap();
    Overfit {
        inference_acc: inference_accuracy(&best, &windows),
        history,
    }
}

/// `rows` random default-shaped windows.
pub fn random_input(rows: usize, seed: u64) -> Tensor3 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * 64 * 7).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor3::from_vec(rows, 64, 7, data).unwrap()
}
