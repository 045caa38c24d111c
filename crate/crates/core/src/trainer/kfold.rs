use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::stream;
use super::{train, Checkpoint, TrainConfig};
use crate::corpus::{
    length_strata, sample_pairs, SplitManifest, SplitRatios, SplitSet, Trajectory,
};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, BucketReport};
use crate::nets::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KFoldConfig {
    pub k: usize,
    /// Share of each round's non-test trajectories held out for validation.
    pub val_fraction: f64,
    /// Rounds run concurrently; 1 runs them in order on this thread.
    pub jobs: usize,
}

impl Default for KFoldConfig {
    fn default() -> Self {
        Self {
            k: 5,
            val_fraction: 1.0 / 9.0,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub manifest: SplitManifest,
    pub checkpoint: Checkpoint,
    pub report: BucketReport,
}

/// Deals trajectories into `k` folds: each length stratum is shuffled and
/// dealt round-robin, continuing where the previous stratum stopped.
/// Returns sorted corpus indices per fold.
pub fn partition_folds(
    trajectories: &[Trajectory],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if trajectories.len() < k {
        return Err(Error::Split(format!(
            "{} trajectories cannot fill {k} folds",
            trajectories.len()
        )));
    }
    let lengths: Vec<usize> = trajectories.iter().map(Trajectory::len).collect();
    let strata = length_strata(&lengths, k);
    let mut rng = ChaCha8Rng::seed_from_u64(stream::derive(seed, stream::FOLDS));
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for group in &strata.groups {
        let mut members = group.clone();
        members.shuffle(&mut rng);
        for idx in members {
            folds[next % k].push(idx);
            next += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

fn round_split(
    trajectories: &[Trajectory],
    folds: &[Vec<usize>],
    fold: usize,
    config: &KFoldConfig,
    seed: u64,
) -> Result<SplitSet> {
    let k = folds.len();
    let mut rest: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != fold)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(stream::derive(seed, stream::FOLDS + 1 + fold as u64));
    rest.shuffle(&mut rng);
    let n_val =
        ((rest.len() as f64 * config.val_fraction).round() as usize).clamp(1, rest.len() - 1);
    let mut val = rest[..n_val].to_vec();
    let mut train = rest[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    let pick = |idx: &[usize]| idx.iter().map(|&i| trajectories[i].clone()).collect();
    let test_share = 1.0 / k as f64;
    let val_share = (1.0 - test_share) * config.val_fraction;
    let lengths: Vec<usize> = trajectories.iter().map(Trajectory::len).collect();
    Ok(SplitSet {
        train: pick(&train),
        val: pick(&val),
        test: pick(&folds[fold]),
        seed,
        ratios: SplitRatios {
            train: 1.0 - test_share - val_share,
            val: val_share,
            test: test_share,
        },
        strata_boundaries: length_strata(&lengths, k).boundaries,
        warnings: Vec::new(),
    })
}

/// Fails if any test storm fed the round's graph or scaler.
fn check_leakage(manifest: &SplitManifest, checkpoint: &Checkpoint) -> Result<()> {
    let train: BTreeSet<&String> = manifest.train.iter().collect();
    if let Some(id) = manifest.test.iter().find(|id| train.contains(id)) {
        return Err(Error::Split(format!(
            "test storm {id} is also a training storm"
        )));
    }
    let hash = manifest.hash();
    if checkpoint.graph.built_from != hash || checkpoint.scaler.fitted_on != hash {
        return Err(Error::Split(
            "graph or scaler was not built from this round's split".into(),
        ));
    }
    Ok(())
}

/// Stratified k-fold cross-validation. Each round rebuilds the graph and
/// scaler from its own training trajectories, trains, and evaluates on the
/// held-out fold.
pub fn kfold(
    trajectories: &[Trajectory],
    kfold: &KFoldConfig,
    config: &TrainConfig,
    model: &ModelConfig,
) -> Result<Vec<FoldResult>> {
    if !(kfold.val_fraction > 0.0 && kfold.val_fraction < 1.0) {
        return Err(Error::Config("val_fraction must lie in (0, 1)".into()));
    }
    let folds = partition_folds(trajectories, kfold.k, config.seed)?;
    let round = |fold: usize| -> Result<FoldResult> {
        let split = round_split(trajectories, &folds, fold, kfold, config.seed)?;
        let manifest = split.manifest();
        let checkpoint = train(&split, config, model)?;
        check_leakage(&manifest, &checkpoint)?;
        let pairs = sample_pairs(
            &split.test,
            config.pairs_per_trajectory,
            stream::derive(config.seed, stream::TEST_PAIRS),
        )?;
        let mut report = evaluate(&checkpoint, &pairs)?;
        report.fold = Some(fold);
        log::info!(
            "fold {fold} ({}): overall lat {:.4} lon {:.4}",
            model.variant.label(),
            report.overall_lat,
            report.overall_lon
        );
        Ok(FoldResult {
            fold,
            manifest,
            checkpoint,
            report,
        })
    };
    if kfold.jobs <= 1 {
        (0..kfold.k).map(round).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(kfold.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| (0..kfold.k).into_par_iter().map(round).collect())
    }
}
