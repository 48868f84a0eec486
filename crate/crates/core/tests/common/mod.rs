#![allow(dead_code)]

use fedsim::bwo::BwoParams;
use fedsim::data::{make_synthetic, partition};
use fedsim::model::{dense_stack, SgdOptions};
use fedsim::protocol::{FederatedData, FederationConfig, Refiner, ScoreMetric, StopPolicy};

/// Small blob problem split into train and test, sharded over `clients`.
pub fn blobs(
    samples: usize,
    dims: usize,
    classes: usize,
    clients: usize,
    seed: u64,
) -> FederatedData<f32> {
    let all = make_synthetic(samples + samples / 4, dims, classes, 8.0, seed).unwrap();
    let (train, test) = all.split_tail(samples / 4).unwrap();
    let partition = partition(&train, clients, seed).unwrap();
    FederatedData {
        train,
        test,
        partition,
    }
}

pub fn small_config(clients: usize, dims: usize, classes: usize, seed: u64) -> FederationConfig {
    FederationConfig {
        num_clients: clients,
        fraction: 1.0,
        sgd: SgdOptions {
            epochs: 1,
            learning_rate: 0.05,
            batch_size: 10,
        },
        refiner: Refiner::SgdThenBwo,
        score: ScoreMetric::Loss,
        bwo: BwoParams {
            population_size: 4,
            max_iterations: 2,
            ..BwoParams::default()
        },
        stop: StopPolicy {
            patience: 5,
            accuracy_threshold: 1.0,
            max_rounds: 3,
            min_delta: 0.0,
        },
        epsilon: 8,
        seed,
        parallel: false,
        layers: dense_stack(dims, &[8], classes),
    }
}

/// A small random network with a batch whose hidden pre-activations all sit
/// at least `margin` away from the ReLU kink, so central differences are valid.
pub struct GradientCase {
    pub params: fedsim::model::Params<f64>,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub input: usize,
}

pub fn gradient_case(seed: u64, margin: f64) -> GradientCase {
    use fedsim::model::Params;
    use rand::Rng;

    let mut rng = fedsim::rng::seeded(seed);
    loop {
        let input = rng.random_range(2..6);
        let classes = rng.random_range(2..5);
        let hidden: Vec<usize> = (0..rng.random_range(1..3))
            .map(|_| rng.random_range(2..6))
            .collect();
        let layers = dense_stack(input, &hidden, classes);
        let mut params = Params::<f64>::xavier(&layers, &mut rng).unwrap();
        for v in params.values_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        let rows = rng.random_range(1..6);
        let features: Vec<f64> = (0..rows * input)
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
        if relu_margin(&params, &features, &labels, input) >= margin {
            return GradientCase {
                params,
                features,
                labels,
                input,
            };
        }
    }
}

/// Smallest |pre-activation| over every hidden unit and row.
pub fn relu_margin(
    params: &fedsim::model::Params<f64>,
    features: &[f64],
    labels: &[usize],
    input: usize,
) -> f64 {
    use fedsim::model::{forward, Activation, Batch, Params};

    let batch = Batch::new(features, labels, input).unwrap();
    let blocks = params.layer_blocks();
    let mut margin = f64::INFINITY;
    for k in 1..params.num_layers() {
        let mut layers = params.layers()[..k].to_vec();
        layers[k - 1].activation = Activation::Identity;
        let prefix = Params::from_layer_blocks(&layers, &blocks[..k]).unwrap();
        let z = forward(&prefix, &batch).unwrap();
        margin = z.data.iter().fold(margin, |m, v| m.min(v.abs()));
    }
    margin
}

/// Worst relative error between analytic gradients and central differences with step `h`.
pub fn gradient_error(case: &GradientCase, h: f64) -> f64 {
    use fedsim::model::{loss_and_grad, Batch};

    let batch = Batch::new(&case.features, &case.labels, case.input).unwrap();
    let loss = |p: &fedsim::model::Params<f64>| loss_and_grad(p, &batch).unwrap().0;
    let (_, grad) = loss_and_grad(&case.params, &batch).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..case.params.len() {
        let (mut plus, mut minus) = (case.params.clone(), case.params.clone());
        plus.values_mut()[i] += h;
        minus.values_mut()[i] -= h;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
        let analytic = grad.values()[i];
        worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3));
    }
    worst
}
