use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    Checkpoint, EarlyStopping, EpochRecord, ScalerScope, StopReason, TrainConfig, TrainHistory,
};
use crate::autodiff::{AdamConfig, AdamState, Tape};
use crate::corpus::{sample_pairs, SplitSet};
use crate::error::{Error, Result};
use crate::featurize::{assemble, fit_scaler, ModelInput, Scaler};
use crate::geograph::{build_graph, SpatialGraph};
use crate::nets::{forward, init_params, Batch, Dropout, ModelConfig};

const SMOOTH_L1_BETA: f64 = 1.0;

/// Independent RNG streams derived from the run seed.
pub mod stream {
    pub const TRAIN_PAIRS: u64 = 1;
    pub const VAL_PAIRS: u64 = 2;
    pub const TEST_PAIRS: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const FOLDS: u64 = 6;

    pub fn derive(seed: u64, stream: u64) -> u64 {
        seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)
    }
}

/// Model-ready training and validation inputs with the graph and scaler
/// they were assembled against.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: SpatialGraph,
    pub scaler: Scaler,
    pub train: Vec<ModelInput>,
    pub val: Vec<ModelInput>,
    pub split_hash: String,
}

/// Builds the graph (from training trajectories only), samples pairs, fits
/// the scaler and assembles inputs.
pub fn prepare(split: &SplitSet, config: &TrainConfig) -> Result<Dataset> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let split_hash = split.manifest().hash();
    let mut graph = build_graph(&split.train);
    graph.built_from = split_hash.clone();

    let per = config.pairs_per_trajectory;
    let train_pairs = sample_pairs(
        &split.train,
        per,
        stream::derive(config.seed, stream::TRAIN_PAIRS),
    )?;
    let val_pairs = sample_pairs(
        &split.val,
        per,
        stream::derive(config.seed, stream::VAL_PAIRS),
    )?;
    let mut scaler = match config.scaler_scope {
        ScalerScope::Train => fit_scaler(&train_pairs),
        ScalerScope::Global => {
            let mut all = train_pairs.clone();
            all.extend(val_pairs.iter().cloned());
            if !split.test.is_empty() {
                all.extend(sample_pairs(
                    &split.test,
                    per,
                    stream::derive(config.seed, stream::TEST_PAIRS),
                )?);
            }
            fit_scaler(&all)
        }
    };
    scaler.fitted_on = split_hash.clone();

    let features = config.graph_features();
    let build = |pairs: &[_]| -> Vec<ModelInput> {
        pairs
            .par_iter()
            .map(|p| assemble(p, &graph, &scaler, features))
            .collect()
    };
    let train = build(&train_pairs);
    let val = build(&val_pairs);
    Ok(Dataset {
        graph,
        scaler,
        train,
        val,
        split_hash,
    })
}

/// Mean smooth-L1 loss over `inputs` in evaluation mode.
pub(crate) fn mean_loss(
    params: &crate::nets::Parameters,
    model: &ModelConfig,
    inputs: &[ModelInput],
    batch_size: usize,
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let sums = inputs
        .par_chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&ModelInput> = chunk.iter().collect();
            let batch = Batch::new(&refs, model)?;
            let targets = batch.targets.clone().ok_or(Error::Empty("targets"))?;
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, false);
            let pred = forward(&mut tape, &bound, &batch, model, None)?;
            let loss = tape.smooth_l1(pred, &targets, SMOOTH_L1_BETA)?;
            Ok(tape.value(loss).item() * chunk.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(sums.iter().sum::<f64>() / inputs.len() as f64)
}

/// Prepares `split` and fits a model on it.
pub fn train(split: &SplitSet, config: &TrainConfig, model: &ModelConfig) -> Result<Checkpoint> {
    fit(&prepare(split, config)?, config, model)
}

pub fn fit(data: &Dataset, config: &TrainConfig, model: &ModelConfig) -> Result<Checkpoint> {
    fit_with(data, config, model, |_| {})
}

/// Trains on `data`, calling `on_epoch` after every epoch, and returns the
/// checkpoint from the epoch with the lowest validation loss.
pub fn fit_with(
    data: &Dataset,
    config: &TrainConfig,
    model: &ModelConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    config.validate()?;
    model.validate()?;
    if data.train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut params = init_params(model, config.seed)?;
    let mut adam = AdamState::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut shuffle = ChaCha8Rng::seed_from_u64(stream::derive(config.seed, stream::SHUFFLE));
    let mut dropout = Dropout::new(model.dropout, stream::derive(config.seed, stream::DROPOUT));
    let mut stopper = EarlyStopping::new(config.early_stop_patience, config.early_stop_min_delta);
    let mut records = Vec::new();
    let mut best = (params.clone(), adam.clone());
    let mut stop_reason = StopReason::EpochsExhausted;
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let refs: Vec<&ModelInput> = chunk.iter().map(|&i| &data.train[i]).collect();
            let batch = Batch::new(&refs, model)?;
            let targets = batch.targets.clone().ok_or(Error::Empty("targets"))?;
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, true);
            let pred = forward(&mut tape, &bound, &batch, model, Some(&mut dropout))?;
            let loss = tape.smooth_l1(pred, &targets, SMOOTH_L1_BETA)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: Some(b),
                });
            }
            let mut grads = tape.backward(loss)?;
            let named: BTreeMap<String, _> = bound
                .vars
                .iter()
                .filter_map(|(name, &v)| grads.take(v).map(|g| (name.clone(), g)))
                .collect();
            adam.step(&mut params.tensors, &named)?;
            total += value * chunk.len() as f64;
        }
        let train_loss = total / data.train.len() as f64;
        let val_loss = mean_loss(&params, model, &data.val, config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: None });
        }
        let mut record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            wall_time: None,
        };
        let observed = stopper.observe(epoch, val_loss);
        if observed.improved {
            best = (params.clone(), adam.clone());
        }
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        record.wall_time = Some(started.elapsed().as_secs_f64());
        on_epoch(&record);
        record.wall_time = None;
        records.push(record);
        if observed.stop {
            stop_reason = StopReason::EarlyStopped;
            break;
        }
    }

    let (params, adam) = best;
    let graph = data.graph.to_record();
    Ok(Checkpoint {
        model: model.clone(),
        train: config.clone(),
        params,
        adam,
        scaler: data.scaler.clone(),
        graph_hash: graph.hash(),
        graph,
        split_hash: data.split_hash.clone(),
        history: TrainHistory {
            epochs: records,
            best_epoch: stopper.best_epoch().expect("at least one epoch"),
            stop_reason,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, stratified_split, SplitRatios};
    use crate::nets::Variant;

    fn small_split(seed: u64) -> SplitSet {
        let corpus = generate_synthetic(60, 15, 0.05, seed).unwrap();
        stratified_split(&corpus.trajectories, SplitRatios::default(), seed).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 16,
            lr: 1e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn graph_and_scaler_come_from_training_storms() {
        let split = small_split(1);
        let data = prepare(&split, &quick()).unwrap();
        let mut expected = build_graph(&split.train);
        expected.built_from = split.manifest().hash();
        assert_eq!(data.graph.to_record(), expected.to_record());
        let pairs = sample_pairs(&split.train, 4, stream::derive(0, stream::TRAIN_PAIRS)).unwrap();
        assert_eq!(data.scaler.mean, fit_scaler(&pairs).mean);
        assert_eq!(data.scaler.fitted_on, split.manifest().hash());
    }

    #[test]
    fn global_scaler_differs_from_train_only() {
        let split = small_split(2);
        let global = TrainConfig {
            scaler_scope: ScalerScope::Global,
            ..quick()
        };
        let a = prepare(&split, &quick()).unwrap().scaler;
        let b = prepare(&split, &global).unwrap().scaler;
        assert_ne!(a.mean, b.mean);
    }

    #[test]
    fn history_is_finite_and_best_is_minimum() {
        let split = small_split(3);
        let mut seen = Vec::new();
        let ck = fit_with(
            &prepare(&split, &quick()).unwrap(),
            &quick(),
            &ModelConfig::tiny(Variant::GraphTransformer),
            |r| seen.push(r.clone()),
        )
        .unwrap();
        let h = &ck.history;
        assert_eq!(seen.len(), h.epochs.len());
        assert!(seen.iter().all(|r| r.wall_time.is_some()));
        assert!(h
            .epochs
            .iter()
            .all(|r| r.train_loss.is_finite() && r.val_loss.is_finite()));
        let min = h
            .epochs
            .iter()
            .map(|r| r.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert!((h.best_val_loss() - min).abs() <= 1e-12);
        // The returned parameters reproduce the best validation loss.
        let data = prepare(&split, &quick()).unwrap();
        let again = mean_loss(&ck.params, &ck.model, &data.val, 16).unwrap();
        assert!((again - min).abs() < 1e-12);
    }

    #[test]
    fn empty_training_split_rejected() {
        let mut split = small_split(4);
        split.train.clear();
        assert!(matches!(prepare(&split, &quick()), Err(Error::Empty(_))));
    }

    #[test]
    fn checkpoint_json_round_trip() {
        let split = small_split(5);
        let config = TrainConfig {
            epochs: 1,
            ..quick()
        };
        let ck = train(
            &split,
            &config,
            &ModelConfig::tiny(Variant::VanillaTransformer),
        )
        .unwrap();
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let mut tampered = ck.clone();
        tampered.graph_hash = "0".repeat(64);
        assert!(Checkpoint::from_json(&tampered.to_json().unwrap()).is_err());
    }
}
