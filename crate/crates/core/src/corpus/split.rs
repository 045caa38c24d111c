use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Trajectory;
use crate::error::{Error, Result};

/// Smallest stratum kept on its own by [`stratified_split`].
const MIN_STRATUM: usize = 3;
const MIN_TRAJECTORIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Split(format!("ratios must lie in [0, 1]: {self:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!("ratios must sum to 1: {self:?}")));
        }
        Ok(())
    }
}

/// Length strata over a corpus: quartile boundaries of the trajectory
/// lengths, with undersized strata folded into a neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct Strata {
    /// Upper-inclusive quartile boundaries; stratum `s` holds lengths in
    /// `(boundaries[s-1], boundaries[s]]`.
    pub boundaries: [usize; 3],
    /// Indices into the input corpus, one group per surviving stratum.
    pub groups: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

/// Bins trajectory lengths into quartile strata. Strata with fewer than
/// `min_size` members merge into the next larger stratum (or the previous
/// one when they are last) until every stratum is large enough or only one
/// remains.
pub fn length_strata(lengths: &[usize], min_size: usize) -> Strata {
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let rank = |q: f64| -> usize {
        if sorted.is_empty() {
            return 0;
        }
        // Nearest-rank quantile.
        let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
        sorted[idx]
    };
    let boundaries = [rank(0.25), rank(0.5), rank(0.75)];

    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); 4];
    for (i, &len) in lengths.iter().enumerate() {
        let s = boundaries.iter().filter(|&&b| b < len).count();
        buckets[s].push(i);
    }
    let mut groups: Vec<Vec<usize>> = buckets.into_iter().filter(|g| !g.is_empty()).collect();

    let mut warnings = Vec::new();
    while groups.len() > 1 {
        let Some(small) = groups.iter().position(|g| g.len() < min_size) else {
            break;
        };
        let target = if small + 1 < groups.len() {
            small + 1
        } else {
            small - 1
        };
        warnings.push(format!(
            "stratum with {} trajectories merged into its neighbour (minimum {min_size})",
            groups[small].len()
        ));
        let moved = groups.remove(small);
        let target = if target > small { target - 1 } else { target };
        groups[target].extend(moved);
        groups[target].sort_unstable();
    }

    Strata {
        boundaries,
        groups,
        warnings,
    }
}

/// A trajectory-level train/validation/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSet {
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
    pub seed: u64,
    pub ratios: SplitRatios,
    pub strata_boundaries: [usize; 3],
    pub warnings: Vec<String>,
}

/// Serializable summary of a [`SplitSet`]: storm ids per split plus the
/// inputs needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub strata_boundaries: [usize; 3],
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SplitManifest {
    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn ids(ts: &[Trajectory]) -> Vec<String> {
    ts.iter().map(|t| t.storm_id.clone()).collect()
}

impl SplitSet {
    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            seed: self.seed,
            ratios: self.ratios,
            strata_boundaries: self.strata_boundaries,
            train: ids(&self.train),
            val: ids(&self.val),
            test: ids(&self.test),
            warnings: self.warnings.clone(),
        }
    }

    /// Rebuilds a split from a manifest by looking trajectories up by storm id.
    pub fn from_manifest(manifest: &SplitManifest, corpus: &[Trajectory]) -> Result<Self> {
        let by_id: std::collections::HashMap<&str, &Trajectory> =
            corpus.iter().map(|t| (t.storm_id.as_str(), t)).collect();
        let pick = |names: &[String]| -> Result<Vec<Trajectory>> {
            names
                .iter()
                .map(|n| {
                    by_id
                        .get(n.as_str())
                        .map(|t| (*t).clone())
                        .ok_or_else(|| Error::Split(format!("storm `{n}` not found in corpus")))
                })
                .collect()
        };
        Ok(Self {
            train: pick(&manifest.train)?,
            val: pick(&manifest.val)?,
            test: pick(&manifest.test)?,
            seed: manifest.seed,
            ratios: manifest.ratios,
            strata_boundaries: manifest.strata_boundaries,
            warnings: manifest.warnings.clone(),
        })
    }
}

/// Length-stratified, seeded train/validation/test split.
///
/// Within each stratum the members are shuffled, then `floor(ratio * n)`
/// go to validation and test and the remainder to train.
pub fn stratified_split(
    trajectories: &[Trajectory],
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitSet> {
    ratios.validate()?;
    if trajectories.len() < MIN_TRAJECTORIES {
        return Err(Error::Split(format!(
            "need at least {MIN_TRAJECTORIES} trajectories, got {}",
            trajectories.len()
        )));
    }
    let lengths: Vec<usize> = trajectories.iter().map(Trajectory::len).collect();
    let strata = length_strata(&lengths, MIN_STRATUM);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0u8; trajectories.len()];
    for group in &strata.groups {
        let mut members = group.clone();
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        let n_val = (ratios.val * n + 1e-9).floor() as usize;
        let n_test = (ratios.test * n + 1e-9).floor() as usize;
        for &i in &members[..n_val] {
            assignment[i] = 1;
        }
        for &i in &members[n_val..n_val + n_test] {
            assignment[i] = 2;
        }
    }

    let collect = |which: u8| -> Vec<Trajectory> {
        trajectories
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a == which)
            .map(|(t, _)| t.clone())
            .collect()
    };

    Ok(SplitSet {
        train: collect(0),
        val: collect(1),
        test: collect(2),
        seed,
        ratios,
        strata_boundaries: strata.boundaries,
        warnings: strata.warnings,
    })
}
