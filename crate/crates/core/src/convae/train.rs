use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{batch_loss_grad, check_input, flat, mean_loss, Architecture, AutoencoderParams};
use crate::connectome::Connectome;
use crate::seed;
use crate::{Error, Result};

/// Minibatch Adam settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        // A zero rate is accepted: it freezes the initial weights.
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("Adam moments must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0 && self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::Config("epsilon must be > 0 and init_scale >= 0".into()));
        }
        Ok(())
    }
}

/// Train on connectomes. See [`train_matrices`].
pub fn train(dataset: &[Connectome], arch: &Architecture, cfg: &TrainConfig) -> Result<(AutoencoderParams, Vec<f64>)> {
    let mats: Vec<Array2<f64>> = dataset.iter().map(|c| c.matrix().clone()).collect();
    train_matrices(&mats, arch, cfg)
}

/// Minibatch Adam on the mean squared reconstruction error.
///
/// The returned history has `epochs + 1` entries: the full-dataset loss of
/// the initial weights, then the full-dataset loss after each epoch.
/// Minibatch order comes from stream 1 of `cfg.seed`, reshuffled every epoch.
pub fn train_matrices(
    dataset: &[Array2<f64>],
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<(AutoencoderParams, Vec<f64>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let mut params = AutoencoderParams::init(arch, cfg.init_scale, cfg.seed)?;
    for x in dataset {
        check_input(&params, x)?;
    }
    let inputs: Vec<Vec<f64>> = dataset.iter().map(flat).collect();

    let mut history = Vec::with_capacity(cfg.epochs + 1);
    history.push(mean_loss(&params, dataset)?);

    let n = params.values.len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = seed::stream(cfg.seed, 1);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Vec<f64>> = chunk.iter().map(|&i| inputs[i].clone()).collect();
            let (loss, grad) = batch_loss_grad(&params, &batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingFailure { epoch, loss });
            }
            step += 1;
            let c1 = 1.0 - cfg.beta1.powi(step);
            let c2 = 1.0 - cfg.beta2.powi(step);
            for k in 0..n {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grad[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
                params.values[k] -= cfg.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.epsilon);
            }
        }
        let loss = mean_loss(&params, dataset)?;
        if !loss.is_finite() {
            return Err(Error::TrainingFailure { epoch, loss });
        }
        log::debug!("autoencoder epoch {epoch}: loss {loss:.6e}");
        history.push(loss);
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convae::{residual, ConvSpec};
    use crate::synth::{generate_cohort, CohortConfig};

    fn cohort_connectomes(n: usize, p: usize, seed: u64) -> Vec<Connectome> {
        let cfg = CohortConfig {
            n_subjects: n,
            p_rois: p,
            n_timepoints: 120,
            sessions: vec!["rest".into()],
            seed,
            ..Default::default()
        };
        let set = generate_cohort(&cfg).unwrap();
        (0..n)
            .map(|i| crate::connectome::pearson_fc(set.get(i, 0), &set.subject_ids()[i], "rest").unwrap())
            .collect()
    }

    fn small_arch(p: usize) -> Architecture {
        Architecture {
            p,
            conv: vec![
                ConvSpec { out_channels: 4, kernel: 3, stride: 2 },
                ConvSpec { out_channels: 8, kernel: 3, stride: 2 },
            ],
            latent: Some(16),
            activation: super::super::Activation::Tanh,
        }
    }

    #[test]
    fn memorizes_a_single_pattern() {
        let c = cohort_connectomes(2, 12, 1).remove(0);
        let data = vec![c; 4];
        let cfg = TrainConfig { epochs: 150, batch_size: 4, learning_rate: 1e-2, ..Default::default() };
        let (_, hist) = train(&data, &small_arch(12), &cfg).unwrap();
        assert!(hist.last().unwrap() < &(0.1 * hist[0]), "{:?}", (hist[0], hist.last()));
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let data = cohort_connectomes(5, 8, 2);
        let cfg = TrainConfig { epochs: 4, batch_size: 2, learning_rate: 0.0, ..Default::default() };
        let (_, hist) = train(&data, &small_arch(8), &cfg).unwrap();
        assert!(hist.iter().all(|&l| l == hist[0]));
    }

    #[test]
    fn different_seeds_differ_but_both_learn() {
        let data = cohort_connectomes(8, 8, 3);
        let run = |seed| {
            let cfg = TrainConfig { epochs: 30, batch_size: 4, learning_rate: 5e-3, seed, ..Default::default() };
            train(&data, &small_arch(8), &cfg).unwrap()
        };
        let (pa, ha) = run(1);
        let (pb, hb) = run(2);
        assert_ne!(pa.values(), pb.values());
        assert!(ha.last().unwrap() < &ha[0]);
        assert!(hb.last().unwrap() < &hb[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let data = cohort_connectomes(6, 8, 4);
        let cfg = TrainConfig { epochs: 5, batch_size: 4, ..Default::default() };
        let a = train(&data, &small_arch(8), &cfg).unwrap();
        let b = train(&data, &small_arch(8), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trained_residual_is_smaller_than_input() {
        let data = cohort_connectomes(10, 8, 5);
        let cfg = TrainConfig { epochs: 60, batch_size: 5, learning_rate: 5e-3, ..Default::default() };
        let (params, _) = train(&data, &small_arch(8), &cfg).unwrap();
        for c in &data {
            let mut off = c.matrix().clone();
            off.diag_mut().fill(0.0);
            let r = residual(c, &params).unwrap();
            let norm = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm(r.matrix()) < norm(&off));
        }
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let data = cohort_connectomes(4, 8, 6);
        let cfg = TrainConfig { epochs: 3, learning_rate: f64::MAX, ..Default::default() };
        match train(&data, &small_arch(8), &cfg) {
            Err(Error::TrainingFailure { epoch, .. }) => assert!((1..=3).contains(&epoch)),
            other => panic!("expected divergence, got {:?}", other.map(|r| r.1)),
        }
    }

    #[test]
    fn config_validation() {
        let data = cohort_connectomes(3, 8, 7);
        for cfg in [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { learning_rate: -1.0, ..Default::default() },
        ] {
            assert!(matches!(train(&data, &small_arch(8), &cfg), Err(Error::Config(_))));
        }
        assert!(matches!(train(&[], &small_arch(8), &TrainConfig::default()), Err(Error::Argument(_))));
        assert!(matches!(train(&data, &small_arch(10), &TrainConfig::default()), Err(Error::Dimension(_))));
    }
}
