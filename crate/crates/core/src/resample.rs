//! Resampling math: the softmax distribution over particle indices and
//! multinomial sampling from it.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::EngineError;

/// A normalized probability vector over particle indices, together with the
/// weights and temperature that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleDistribution {
    probs: Vec<f64>,
    source_weights: Vec<f64>,
    softmax_temperature: f64,
}

impl ResampleDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn source_weights(&self) -> &[f64] {
        &self.source_weights
    }

    pub fn softmax_temperature(&self) -> f64 {
        self.softmax_temperature
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Softmax over `weights / temperature`, computed with the max subtracted so
/// large weights cannot overflow. The result sums to 1 to within 1e-9.
pub fn softmax_distribution(weights: &[f64], temperature: f64) -> Result<ResampleDistribution, EngineError> {
    if weights.is_empty() {
        return Err(EngineError::EmptyParticleSet);
    }
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(EngineError::NonPositiveTemperature(temperature));
    }
    for (index, &value) in weights.iter().enumerate() {
        if !value.is_finite() {
            return Err(EngineError::NonFiniteWeight { index, value });
        }
    }
    let scaled: Vec<f64> = weights.iter().map(|w| w / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();
    Ok(ResampleDistribution {
        probs,
        source_weights: weights.to_vec(),
        softmax_temperature: temperature,
    })
}

/// `count` independent draws of particle indices, sampled with replacement.
/// Deterministic given the RNG state. Zero-probability indices are never
/// returned.
pub fn multinomial_resample(
    dist: &ResampleDistribution,
    count: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<usize>, EngineError> {
    if count == 0 {
        return Err(EngineError::InvalidConfig("resample count must be at least 1".into()));
    }
    let mut cumulative = Vec::with_capacity(dist.probs.len());
    let mut acc = 0.0;
    for &p in &dist.probs {
        acc += p;
        cumulative.push(acc);
    }
    // Highest index with positive probability, the fallback when a draw lands
    // beyond the accumulated total after rounding.
    let last_positive = dist
        .probs
        .iter()
        .rposition(|&p| p > 0.0)
        .ok_or(EngineError::EmptyParticleSet)?;

    let mut indices = Vec::with_capacity(count);
    for _ in 0..count {
        let u = uniform_f64(rng) * acc;
        let mut idx = cumulative.partition_point(|&c| c <= u);
        if idx > last_positive {
            idx = last_positive;
        }
        // partition_point can land on a zero-probability slot when a stretch
        // of zeros follows the true owner of this interval.
        while dist.probs[idx] == 0.0 && idx > 0 {
            idx -= 1;
        }
        indices.push(idx);
    }
    Ok(indices)
}

/// One draw from the distribution.
pub fn sample_index(dist: &ResampleDistribution, rng: &mut dyn RngCore) -> Result<usize, EngineError> {
    Ok(multinomial_resample(dist, 1, rng)?[0])
}

/// A uniform draw in `[0, 1)` built from 53 random bits.
pub(crate) fn uniform_f64(rng: &mut dyn RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    #[test]
    fn figure_weights_reproduce_published_distribution() {
        let dist = softmax_distribution(&[2.1, -1.2, 1.3, 0.1], 1.0).unwrap();
        let expected = [0.617, 0.023, 0.277, 0.083];
        for (p, e) in dist.probs().iter().zip(expected) {
            assert!((p - e).abs() < 1e-3, "{p} vs {e}");
        }
    }

    #[test]
    fn equal_weights_are_uniform() {
        for temperature in [0.1, 1.0, 7.5] {
            let dist = softmax_distribution(&[5.0, 5.0, 5.0], temperature).unwrap();
            for &p in dist.probs() {
                assert!((p - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn temperature_two_matches_direct_formula() {
        // Independently evaluated at 50-digit precision.
        let expected = [
            0.44838034789773577068,
            0.086111404841102093869,
            0.30055833544428620717,
            0.16494991181687592829,
        ];
        let dist = softmax_distribution(&[2.1, -1.2, 1.3, 0.1], 2.0).unwrap();
        for (p, e) in dist.probs().iter().zip(expected) {
            assert!((p - e).abs() < 1e-12, "{p} vs {e}");
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let dist = softmax_distribution(&[3.0, -200.0, 0.4, 17.0, 2.2], 0.7).unwrap();
        let total: f64 = dist.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(dist.probs().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn non_finite_weight_names_index() {
        let err = softmax_distribution(&[1.0, f64::NAN, 2.0], 1.0).unwrap_err();
        match err {
            EngineError::NonFiniteWeight { index, .. } => assert_eq!(index, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn temperature_must_be_positive() {
        assert!(softmax_distribution(&[1.0], 0.0).is_err());
        assert!(softmax_distribution(&[1.0], -1.0).is_err());
        assert!(softmax_distribution(&[1.0], f64::NAN).is_err());
    }

    #[test]
    fn degenerate_distribution_always_selects_its_point() {
        let dist = ResampleDistribution {
            probs: vec![1.0, 0.0, 0.0, 0.0],
            source_weights: vec![0.0; 4],
            softmax_temperature: 1.0,
        };
        let mut rng = derive_rng(9, &[]);
        let indices = multinomial_resample(&dist, 4, &mut rng).unwrap();
        assert_eq!(indices, vec![0, 0, 0, 0]);
    }

    #[test]
    fn empirical_frequencies_match_probabilities() {
        let dist = softmax_distribution(&[2.1, -1.2, 1.3, 0.1], 1.0).unwrap();
        let mut rng = derive_rng(123, &[]);
        let n = 100_000;
        let indices = multinomial_resample(&dist, n, &mut rng).unwrap();
        let mut counts = [0usize; 4];
        for i in indices {
            counts[i] += 1;
        }
        for (count, &p) in counts.iter().zip(dist.probs()) {
            let freq = *count as f64 / n as f64;
            assert!((freq - p).abs() < 0.01, "freq {freq} vs prob {p}");
        }
    }

    #[test]
    fn draws_are_deterministic_given_rng_state() {
        let dist = softmax_distribution(&[0.3, 0.2, 0.9], 1.0).unwrap();
        let a = multinomial_resample(&dist, 32, &mut derive_rng(5, &[1])).unwrap();
        let b = multinomial_resample(&dist, 32, &mut derive_rng(5, &[1])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_probability_tail_is_never_drawn() {
        let dist = ResampleDistribution {
            probs: vec![0.0, 0.5, 0.5, 0.0],
            source_weights: vec![0.0; 4],
            softmax_temperature: 1.0,
        };
        let mut rng = derive_rng(77, &[]);
        let indices = multinomial_resample(&dist, 10_000, &mut rng).unwrap();
        assert!(indices.iter().all(|&i| i == 1 || i == 2));
    }
}

#[cfg(test)]
mod property_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn shift_invariance(
            weights in proptest::collection::vec(-20.0f64..20.0, 1..32),
            shift in -50.0f64..50.0,
            temperature in 0.05f64..10.0
        ) {
            let shifted: Vec<f64> = weights.iter().map(|w| w + shift).collect();
            let a = softmax_distribution(&weights, temperature).unwrap();
            let b = softmax_distribution(&shifted, temperature).unwrap();
            for (pa, pb) in a.probs().iter().zip(b.probs()) {
                prop_assert!((pa - pb).abs() < 1e-12);
            }
        }

        #[test]
        fn always_a_valid_distribution(
            weights in proptest::collection::vec(-300.0f64..300.0, 1..64),
            temperature in 0.01f64..100.0
        ) {
            let dist = softmax_distribution(&weights, temperature).unwrap();
            let total: f64 = dist.probs().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(dist.probs().iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }
}
