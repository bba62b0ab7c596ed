//! Synthetic desk-scale task: two-class Gaussian mixture.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::mlp::{MlpModel, Sample, Target};

/// Fixed-seed two-class classification data: class means at +-0.8 per
/// dimension, unit-variance noise.
pub fn synthetic_classification(seed: u64, n_samples: usize, input_dim: usize) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_samples)
        .map(|_| {
            let class = rng.gen_range(0..2usize);
            let mean = if class == 0 { 0.8 } else { -0.8 };
            let input = (0..input_dim)
                .map(|_| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    mean + noise
                })
                .collect();
            Sample {
                input,
                target: Target::Class(class),
            }
        })
        .collect()
}

/// Fraction of samples whose argmax logit matches the label.
pub fn evaluate_accuracy(model: &MlpModel, samples: &[Sample]) -> f64 {
    let mut correct = 0usize;
    for s in samples {
        let logits = model.logits(&s.input).expect("dimensions fixed by caller");
        let predicted = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .map(|(i, _)| i)
            .unwrap();
        if let Target::Class(c) = s.target {
            if predicted == c {
                correct += 1;
            }
        }
    }
    correct as f64 / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minitrain::mlp::{Activation, LossKind};

    #[test]
    fn generation_is_seed_deterministic() {
        let a = synthetic_classification(42, 100, 6);
        let b = synthetic_classification(42, 100, 6);
        assert_eq!(a, b);
        let c = synthetic_classification(43, 100, 6);
        assert_ne!(a, c);
    }

    #[test]
    fn task_is_learnable_by_a_tiny_mlp() {
        use crate::minitrain::schedule::LrSchedule;
        use crate::minitrain::trainer::train_single_node;

        let dataset = synthetic_classification(1, 256, 4);
        let holdout = synthetic_classification(2, 256, 4);
        let model =
            MlpModel::init(&[4, 8, 2], Activation::Tanh, LossKind::SoftmaxCrossEntropy, 5).unwrap();
        let shard: Vec<usize> = (0..dataset.len()).collect();
        let run = train_single_node(
            &model,
            &[(16, shard)],
            &dataset,
            &LrSchedule::constant(0.1),
            300,
        )
        .unwrap();
        let acc = evaluate_accuracy(&run.final_model, &holdout);
        assert!(acc > 0.8, "held-out accuracy {acc}");
        let first = run.loss_trace.first().unwrap().loss;
        let last = run.loss_trace.last().unwrap().loss;
        assert!(last < first, "loss did not fall: {first} -> {last}");
    }
}
