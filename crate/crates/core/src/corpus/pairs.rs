use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LatLon, Observation, Trajectory};
use crate::error::{Error, Result};

/// Longest input prefix fed to the model.
pub const MAX_INPUT_STEPS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairSource {
    pub storm_id: String,
    pub target_index: usize,
}

/// A model input prefix and the position that follows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamplePair {
    /// At most [`MAX_INPUT_STEPS`] consecutive fixes ending right before the target.
    pub input_steps: Vec<Observation>,
    pub target: LatLon,
    /// Position of the first input step; origin of the local frame.
    pub origin: LatLon,
    pub source: PairSource,
}

impl ExamplePair {
    pub fn seq_len(&self) -> usize {
        self.input_steps.len()
    }
}

/// Builds the pair whose target is `trajectory[target_index]`. The input is
/// the window of up to [`MAX_INPUT_STEPS`] fixes immediately before it.
pub fn pair_at(trajectory: &Trajectory, target_index: usize) -> Option<ExamplePair> {
    if target_index == 0 || target_index >= trajectory.len() {
        return None;
    }
    let start = target_index.saturating_sub(MAX_INPUT_STEPS);
    let input_steps = trajectory.observations[start..target_index].to_vec();
    Some(ExamplePair {
        origin: input_steps[0].position(),
        target: trajectory.observations[target_index].position(),
        input_steps,
        source: PairSource {
            storm_id: trajectory.storm_id.clone(),
            target_index,
        },
    })
}

/// Draws up to `pairs_per_trajectory` distinct target indices per
/// trajectory, uniformly from `1..len`. Pairs come out grouped by
/// trajectory in ascending target order.
pub fn sample_pairs(
    split: &[Trajectory],
    pairs_per_trajectory: usize,
    seed: u64,
) -> Result<Vec<ExamplePair>> {
    if pairs_per_trajectory == 0 {
        return Err(Error::Config(
            "pairs_per_trajectory must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for t in split {
        let candidates = t.len().saturating_sub(1);
        if candidates == 0 {
            continue;
        }
        let amount = pairs_per_trajectory.min(candidates);
        let mut targets: Vec<usize> = index::sample(&mut rng, candidates, amount)
            .into_iter()
            .map(|i| i + 1)
            .collect();
        targets.sort_unstable();
        pairs.extend(targets.into_iter().filter_map(|i| pair_at(t, i)));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::track;

    #[test]
    fn length_two_has_one_pair() {
        let t = track(0, 2);
        let pairs = sample_pairs(std::slice::from_ref(&t), 1, 0).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].input_steps, vec![t.observations[0].clone()]);
        assert_eq!(pairs[0].target, t.observations[1].position());
        assert_eq!(pairs[0].origin, t.observations[0].position());
    }

    #[test]
    fn window_is_capped_at_sixteen() {
        let t = track(0, 40);
        let p = pair_at(&t, 30).unwrap();
        assert_eq!(p.seq_len(), 16);
        assert_eq!(p.input_steps[0], t.observations[14]);
        assert_eq!(p.input_steps[15], t.observations[29]);
        assert_eq!(p.origin, t.observations[14].position());
    }

    #[test]
    fn requests_are_capped_by_available_targets() {
        // Valid targets for length 5 are exactly {1, 2, 3, 4}.
        let t = track(0, 5);
        let pairs = sample_pairs(std::slice::from_ref(&t), 10, 9).unwrap();
        let targets: Vec<_> = pairs.iter().map(|p| p.source.target_index).collect();
        assert_eq!(targets, vec![1, 2, 3, 4]);
    }

    #[test]
    fn zero_pairs_rejected() {
        assert!(sample_pairs(&[track(0, 5)], 0, 0).is_err());
    }

    #[test]
    fn pairs_reconstruct_from_source() {
        let corpus: Vec<_> = (0..20).map(|i| track(i, 2 + i * 3)).collect();
        let pairs = sample_pairs(&corpus, 4, 5).unwrap();
        for p in &pairs {
            let t = corpus
                .iter()
                .find(|t| t.storm_id == p.source.storm_id)
                .unwrap();
            assert_eq!(pair_at(t, p.source.target_index).as_ref(), Some(p));
            assert!((1..=MAX_INPUT_STEPS).contains(&p.seq_len()));
        }
        // No duplicate targets within a trajectory.
        let mut seen = std::collections::HashSet::new();
        assert!(pairs.iter().all(|p| seen.insert(p.source.clone())));
    }
}
