use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::IdentificationResult;
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationReport {
    pub observed_accuracy: f64,
    pub null_accuracies: Vec<f64>,
    pub p_value: f64,
}

/// Null distribution of identification accuracy under random relabeling of
/// the session-2 subjects.
///
/// Permutation `b` draws a uniform permutation `π` from stream `b` of `seed`
/// (Fisher-Yates via `shuffle`) and scores a hit whenever the prediction for
/// subject `i` equals `π(i)`. The p-value is `(1 + #{null ≥ observed}) /
/// (1 + n_perm)`.
pub fn permutation_test(result: &IdentificationResult, n_perm: usize, seed: u64) -> Result<PermutationReport> {
    if n_perm == 0 {
        return Err(Error::Argument("n_perm must be at least 1".into()));
    }
    let n = result.predictions.len();
    let null_hits: Vec<usize> = (0..n_perm as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::stream(seed, b);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            result.predictions.iter().zip(&perm).filter(|(p, q)| p == q).count()
        })
        .collect();
    let exceed = null_hits.iter().filter(|&&h| h >= result.n_correct).count();
    Ok(PermutationReport {
        observed_accuracy: result.accuracy,
        null_accuracies: null_hits.iter().map(|&h| h as f64 / n as f64).collect(),
        p_value: (1 + exceed) as f64 / (1 + n_perm) as f64,
    })
}
