//! The trainable policy: a linear softmax scorer over featurized candidate
//! actions. Log-probabilities and gradients are exact, which is what lets the
//! optimizer's analytic gradients be checked against finite differences to
//! tight tolerances.

mod adam;
mod checkpoint;
mod features;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_update, AdamConfig, OptimizerState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use features::{expert_params, featurize, FeatureLayout, FeatureVector, TaskContext};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("feature dimension mismatch: params have {params}, input has {input}")]
    DimensionMismatch { params: usize, input: usize },
    #[error("non-finite gradient entry at index {0}")]
    NonFiniteGradient(usize),
}

/// Policy weights plus a monotone update counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub weights: Vec<f64>,
    pub version: u64,
}

impl PolicyParams {
    pub fn zeros(dim: usize) -> Self {
        PolicyParams {
            weights: vec![0.0; dim],
            version: 0,
        }
    }

    /// Small random initialization, deterministic in the rng stream.
    pub fn random_init(dim: usize, scale: f64, rng: &mut impl Rng) -> Self {
        PolicyParams {
            weights: (0..dim)
                .map(|_| (rng.gen::<f64>() - 0.5) * 2.0 * scale)
                .collect(),
            version: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Log-softmax of the candidates' linear scores. The outputs exponentiate and
/// sum to 1 to within 1e-12.
pub fn action_logprobs(params: &PolicyParams, candidates: &[FeatureVector]) -> Vec<f64> {
    assert!(!candidates.is_empty(), "need at least one candidate");
    let scores: Vec<f64> = candidates
        .iter()
        .map(|c| dot(&params.weights, &c.0))
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - log_z).collect()
}

/// Samples an action index.
///
/// Temperature 0 is greedy argmax with lowest-index tie-breaking. For t > 0
/// the draw is proportional to `exp(logprob / t)`. The returned stored
/// log-probability is always the temperature-1 value of the chosen action —
/// that is what importance ratios are defined over.
pub fn sample_action(logprobs: &[f64], temperature: f64, rng: &mut impl Rng) -> (usize, f64) {
    assert!(temperature >= 0.0);
    if temperature == 0.0 {
        let mut best = 0;
        for (i, lp) in logprobs.iter().enumerate() {
            if *lp > logprobs[best] {
                best = i;
            }
        }
        return (best, logprobs[best]);
    }
    let scaled: Vec<f64> = logprobs.iter().map(|lp| lp / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return (i, logprobs[i]);
        }
    }
    let last = logprobs.len() - 1;
    (last, logprobs[last])
}

/// Gradient of `log π(chosen)` with respect to the weights:
/// `φ_chosen − Σ_a softmax_a · φ_a`.
pub fn logprob_gradient(
    params: &PolicyParams,
    candidates: &[FeatureVector],
    chosen: usize,
) -> Vec<f64> {
    let logprobs = action_logprobs(params, candidates);
    let mut grad = candidates[chosen].0.clone();
    for (lp, cand) in logprobs.iter().zip(candidates) {
        let p = lp.exp();
        for (g, x) in grad.iter_mut().zip(&cand.0) {
            *g -= p * x;
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;

    fn fv(xs: &[f64]) -> FeatureVector {
        FeatureVector(xs.to_vec())
    }

    #[test]
    fn zero_weights_are_uniform() {
        let params = PolicyParams::zeros(3);
        let cands = vec![
            fv(&[1.0, 0.0, 0.0]),
            fv(&[0.0, 1.0, 0.0]),
            fv(&[0.0, 0.0, 1.0]),
        ];
        let lps = action_logprobs(&params, &cands);
        for lp in &lps {
            assert!((lp - (1.0f64 / 3.0).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_candidate_has_logprob_zero() {
        let params = PolicyParams::zeros(2);
        let lps = action_logprobs(&params, &[fv(&[0.3, 0.7])]);
        assert_eq!(lps, vec![0.0]);
    }

    #[test]
    fn hand_softmax_for_scores_two_and_zero() {
        // scores [2, 0] -> logprobs [-ln(1+e^-2), -2-ln(1+e^-2)]
        let params = PolicyParams {
            weights: vec![2.0],
            version: 0,
        };
        let cands = vec![fv(&[1.0]), fv(&[0.0])];
        let lps = action_logprobs(&params, &cands);
        let expected0 = -(1.0 + (-2.0f64).exp()).ln();
        assert!((lps[0] - expected0).abs() < 1e-12);
        assert!((lps[1] - (expected0 - 2.0)).abs() < 1e-12);
        assert!((lps[0] - (-0.1269)).abs() < 1e-4);
        assert!((lps[1] - (-2.1269)).abs() < 1e-4);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = seeding::rng_for(5, &[99]);
        for _ in 0..200 {
            let dim = 4;
            let params = PolicyParams::random_init(dim, 2.0, &mut rng);
            let n = 1 + (rng.gen::<usize>() % 12);
            let cands: Vec<FeatureVector> = (0..n)
                .map(|_| FeatureVector((0..dim).map(|_| rng.gen::<f64>()).collect()))
                .collect();
            let sum: f64 = action_logprobs(&params, &cands)
                .iter()
                .map(|lp| lp.exp())
                .sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_sampling_argmax_and_tie_break() {
        let mut rng = seeding::rng_for(0, &[1]);
        assert_eq!(sample_action(&[-1.0, -0.5], 0.0, &mut rng).0, 1);
        assert_eq!(sample_action(&[-0.7, -0.7], 0.0, &mut rng).0, 0);
    }

    #[test]
    fn stored_logprob_is_temperature_one_value() {
        let mut rng = seeding::rng_for(0, &[2]);
        let lps = [-0.2, -1.7];
        for _ in 0..10 {
            let (idx, stored) = sample_action(&lps, 2.5, &mut rng);
            assert_eq!(stored, lps[idx]);
        }
    }

    #[test]
    fn temperature_one_frequencies_match_probabilities() {
        // Monte-Carlo: 1e5 draws, 3-sigma binomial bounds
        let logprobs = {
            let params = PolicyParams {
                weights: vec![1.0, -0.5],
                version: 0,
            };
            let cands = vec![fv(&[1.0, 0.0]), fv(&[0.0, 1.0]), fv(&[0.5, 0.5])];
            action_logprobs(&params, &cands)
        };
        let mut rng = seeding::rng_for(123, &[3]);
        let n = 100_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_action(&logprobs, 1.0, &mut rng).0] += 1;
        }
        for (i, lp) in logprobs.iter().enumerate() {
            let p = lp.exp();
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            let observed = counts[i] as f64 / n as f64;
            assert!(
                (observed - p).abs() < 3.0 * sigma + 1e-9,
                "candidate {i}: observed {observed}, expected {p} ± {sigma}"
            );
        }
    }

    #[test]
    fn gradient_single_candidate_is_zero() {
        let params = PolicyParams::zeros(3);
        let g = logprob_gradient(&params, &[fv(&[0.1, 0.2, 0.3])], 0);
        assert!(g.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn gradient_zero_weights_orthogonal_onehots() {
        let params = PolicyParams::zeros(2);
        let cands = vec![fv(&[1.0, 0.0]), fv(&[0.0, 1.0])];
        let g = logprob_gradient(&params, &cands, 0);
        // φ_chosen − ½(φ0 + φ1) = [1,0] − [0.5,0.5]
        assert!((g[0] - 0.5).abs() < 1e-15);
        assert!((g[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let mut rng = seeding::rng_for(7, &[4]);
        let h = 1e-5;
        for trial in 0..100 {
            let dim = 5;
            let params = PolicyParams::random_init(dim, 1.5, &mut rng);
            let n = 2 + (rng.gen::<usize>() % 6);
            let cands: Vec<FeatureVector> = (0..n)
                .map(|_| FeatureVector((0..dim).map(|_| rng.gen::<f64>()).collect()))
                .collect();
            let chosen = rng.gen::<usize>() % n;
            let analytic = logprob_gradient(&params, &cands, chosen);
            for i in 0..dim {
                let mut plus = params.clone();
                plus.weights[i] += h;
                let mut minus = params.clone();
                minus.weights[i] -= h;
                let fd = (action_logprobs(&plus, &cands)[chosen]
                    - action_logprobs(&minus, &cands)[chosen])
                    / (2.0 * h);
                let denom = analytic[i].abs().max(fd.abs()).max(1e-8);
                assert!(
                    (analytic[i] - fd).abs() / denom < 1e-4,
                    "trial {trial} dim {i}: analytic {} vs fd {fd}",
                    analytic[i]
                );
            }
        }
    }
}
