//! Shared fixtures for the kernel benchmarks.

use semode_core::datasets::generate;
use semode_core::{fit_model, Dataset, GenConfig, ModelConfig, SemanticModel, System};

pub struct Fixture {
    pub data: Dataset,
    pub model: SemanticModel,
}

/// A small logistic model fitted on 40 noisy samples.
pub fn logistic() -> Fixture {
    let data = generate(System::Logistic, &GenConfig { samples: Some(40), noise: 0.01, ..GenConfig::default() })
        .expect("dataset");
    let cfg = ModelConfig { max_motifs: 2, ..ModelConfig::default() };
    let model = fit_model(&data.samples, &cfg).expect("fit").model;
    Fixture { data, model }
}

/// Loss matrix with `n` samples and `k` compositions whose cheapest column
/// changes twice across the x0 range.
pub fn banded_losses(n: usize, k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let x0 = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let loss = (0..n)
        .map(|i| {
            let best = (3 * i / n).min(k - 1);
            (0..k).map(|c| if c == best { 0.01 } else { 0.1 + 0.01 * ((i * 7 + c * 3) % 11) as f64 }).collect()
        })
        .collect();
    (x0, loss)
}
