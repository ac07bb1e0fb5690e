//! Minimal deterministic SGD trainer.
//!
//! Plain backprop with a mean-squared one-hot loss — just enough to produce
//! desk-scale weight sets with realistic value distributions. Hidden and
//! output neurons share the topology's activation, matching what the
//! accelerator executes.

use super::{Activation, Dataset, FloatWeights, NetworkTopology, NnError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, learning_rate: 0.5, seed: 1 }
    }
}

/// Derivative of the activation given pre-activation `z` and output `a`.
///
/// satlin's true derivative is zero outside (0, 1), which permanently kills
/// any unit that starts saturated; training uses a small leak there instead
/// (the simulated datapath still applies the exact clamp).
fn activation_grad(act: Activation, z: f64, a: f64) -> f64 {
    match act {
        Activation::Logsig => a * (1.0 - a),
        Activation::Satlin => {
            if z > 0.0 && z < 1.0 {
                1.0
            } else {
                0.01
            }
        }
    }
}

/// Trains float weights with seeded SGD. Zero epochs returns the seeded
/// initial weights untouched; the same seed always yields bit-identical
/// results. A non-finite loss aborts with a divergence error.
pub fn train(
    topology: &NetworkTopology,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<FloatWeights, NnError> {
    let sizes = topology.layer_sizes();
    if dataset.feature_count() != sizes[0] {
        return Err(NnError::DimensionMismatch {
            what: "inputs",
            expected: sizes[0],
            got: dataset.feature_count(),
        });
    }
    let n_out_total = topology.output_size();
    if let Some(item) = dataset.items().iter().find(|i| i.label >= n_out_total) {
        return Err(NnError::DimensionMismatch {
            what: "output neurons (label range)",
            expected: n_out_total,
            got: item.label + 1,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let stages = topology.stage_count();
    let mut weights = Vec::with_capacity(stages);
    let mut biases = Vec::with_capacity(stages);
    for j in 0..stages {
        let (n_in, n_out) = (sizes[j], sizes[j + 1]);
        let scale = 1.0 / (n_in as f64).sqrt();
        weights.push(
            (0..n_in * n_out).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale).collect::<Vec<_>>(),
        );
        biases.push(vec![0.0; n_out]);
    }

    let act = topology.activation();
    let lr = config.learning_rate;
    let mut order: Vec<usize> = (0..dataset.items().len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss = 0.0f64;
        for &idx in &order {
            let item = &dataset.items()[idx];

            // Forward, keeping pre-activations and activations per layer.
            let mut activations: Vec<Vec<f64>> = vec![item.input.clone()];
            let mut pre: Vec<Vec<f64>> = Vec::with_capacity(stages);
            for j in 0..stages {
                let n_out = sizes[j + 1];
                let x = &activations[j];
                let mut z = biases[j].clone();
                for (i, &xi) in x.iter().enumerate() {
                    let row = &weights[j][i * n_out..(i + 1) * n_out];
                    for (o, &w) in row.iter().enumerate() {
                        z[o] += w * xi;
                    }
                }
                let a: Vec<f64> = z.iter().map(|&v| act.apply_float(v)).collect();
                pre.push(z);
                activations.push(a);
            }

            // Output delta for MSE against the one-hot label.
            let out = &activations[stages];
            let mut delta: Vec<f64> = out
                .iter()
                .enumerate()
                .map(|(o, &a)| {
                    let target = if o == item.label { 1.0 } else { 0.0 };
                    loss += (a - target) * (a - target);
                    (a - target) * activation_grad(act, pre[stages - 1][o], a)
                })
                .collect();

            // Backward through the stages.
            for j in (0..stages).rev() {
                let n_out = sizes[j + 1];
                let x = &activations[j];
                let next_delta: Option<Vec<f64>> = if j > 0 {
                    let mut d = vec![0.0; sizes[j]];
                    for (i, di) in d.iter_mut().enumerate() {
                        let row = &weights[j][i * n_out..(i + 1) * n_out];
                        let mut s = 0.0;
                        for (o, &w) in row.iter().enumerate() {
                            s += w * delta[o];
                        }
                        *di = s * activation_grad(act, pre[j - 1][i], x[i]);
                    }
                    Some(d)
                } else {
                    None
                };

                for (i, &xi) in x.iter().enumerate() {
                    let row = &mut weights[j][i * n_out..(i + 1) * n_out];
                    for (o, w) in row.iter_mut().enumerate() {
                        *w -= lr * delta[o] * xi;
                    }
                }
                for (o, b) in biases[j].iter_mut().enumerate() {
                    *b -= lr * delta[o];
                }

                if let Some(d) = next_delta {
                    delta = d;
                }
            }
        }
        if !loss.is_finite() {
            return Err(NnError::Divergence { epoch });
        }
    }

    Ok(FloatWeights { topology: topology.clone(), weights, biases })
}
