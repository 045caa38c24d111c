//! Bucketed mean-absolute-error evaluation, fold aggregation and
//! single-trajectory prediction.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{ExamplePair, LatLon, Observation};
use crate::error::{Error, Result};
use crate::featurize::{assemble, assemble_steps, from_local};
use crate::nets;
use crate::trainer::Checkpoint;

/// Length buckets over input sequence length, inclusive bounds.
pub const BUCKETS: [(&str, usize, usize); 3] = [("0-5", 0, 5), ("6-10", 6, 10), ("11-16", 11, 16)];

const EVAL_BATCH: usize = 64;

pub fn bucket_of(seq_len: usize) -> usize {
    BUCKETS
        .iter()
        .position(|&(_, lo, hi)| (lo..=hi).contains(&seq_len))
        .unwrap_or(BUCKETS.len() - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStat {
    pub label: String,
    pub count: usize,
    /// `None` for an empty bucket.
    pub mae_lat: Option<f64>,
    pub mae_lon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub variant: String,
    pub fold: Option<usize>,
    pub buckets: Vec<BucketStat>,
    /// Mean of the non-empty buckets' MAEs.
    pub overall_lat: f64,
    pub overall_lon: f64,
}

/// One scored prediction: input length, predicted and true position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub seq_len: usize,
    pub predicted: LatLon,
    pub truth: LatLon,
}

pub fn report_from_predictions(scored: &[Scored], variant: &str) -> Result<BucketReport> {
    if scored.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut sums = [(0usize, 0.0, 0.0); BUCKETS.len()];
    for s in scored {
        let b = &mut sums[bucket_of(s.seq_len)];
        b.0 += 1;
        b.1 += (s.predicted.lat - s.truth.lat).abs();
        b.2 += (s.predicted.lon - s.truth.lon).abs();
    }
    let buckets: Vec<BucketStat> = BUCKETS
        .iter()
        .zip(sums)
        .map(|(&(label, _, _), (n, lat, lon))| BucketStat {
            label: label.to_string(),
            count: n,
            mae_lat: (n > 0).then(|| lat / n as f64),
            mae_lon: (n > 0).then(|| lon / n as f64),
        })
        .collect();
    let filled: Vec<&BucketStat> = buckets.iter().filter(|b| b.count > 0).collect();
    let macro_avg = |f: fn(&BucketStat) -> Option<f64>| {
        filled.iter().filter_map(|b| f(b)).sum::<f64>() / filled.len() as f64
    };
    Ok(BucketReport {
        variant: variant.to_string(),
        fold: None,
        overall_lat: macro_avg(|b| b.mae_lat),
        overall_lon: macro_avg(|b| b.mae_lon),
        buckets,
    })
}

/// Scores `pairs` with the checkpoint's model, graph and scaler.
pub fn evaluate(checkpoint: &Checkpoint, pairs: &[ExamplePair]) -> Result<BucketReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let graph = checkpoint.spatial_graph()?;
    let features = checkpoint.train.graph_features();
    let inputs: Vec<_> = pairs
        .iter()
        .map(|p| assemble(p, &graph, &checkpoint.scaler, features))
        .collect();
    let local = nets::predict(&checkpoint.params, &checkpoint.model, &inputs, EVAL_BATCH)?;
    let scored: Vec<Scored> = pairs
        .iter()
        .zip(&inputs)
        .zip(local)
        .map(|((pair, input), pred)| Scored {
            seq_len: pair.seq_len(),
            predicted: from_local(pred, input.origin),
            truth: pair.target,
        })
        .collect();
    report_from_predictions(&scored, checkpoint.model.variant.label())
}

/// Next position after `prefix`, from its last (up to 16) fixes.
pub fn predict(checkpoint: &Checkpoint, prefix: &[Observation]) -> Result<LatLon> {
    if prefix.is_empty() {
        return Err(Error::EmptyPrefix);
    }
    let graph = checkpoint.spatial_graph()?;
    let input = assemble_steps(
        prefix,
        &graph,
        &checkpoint.scaler,
        checkpoint.train.graph_features(),
    );
    let local = nets::predict(
        &checkpoint.params,
        &checkpoint.model,
        std::slice::from_ref(&input),
        1,
    )?;
    Ok(from_local(local[0], input.origin))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation across folds.
    pub std: f64,
}

impl MeanStd {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSummary {
    pub label: String,
    pub count: usize,
    pub lat: Option<MeanStd>,
    pub lon: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub variant: String,
    pub folds: usize,
    pub buckets: Vec<BucketSummary>,
    pub overall_lat: MeanStd,
    pub overall_lon: MeanStd,
}

/// Mean and spread of each bucket and of the overall MAE across folds.
/// Empty buckets are left out of that bucket's statistics.
pub fn aggregate_folds(reports: &[BucketReport]) -> Result<FoldSummary> {
    let first = reports.first().ok_or(Error::Empty("report list"))?;
    let buckets = (0..first.buckets.len())
        .map(|b| {
            let stats: Vec<&BucketStat> = reports.iter().map(|r| &r.buckets[b]).collect();
            let lat: Vec<f64> = stats.iter().filter_map(|s| s.mae_lat).collect();
            let lon: Vec<f64> = stats.iter().filter_map(|s| s.mae_lon).collect();
            BucketSummary {
                label: first.buckets[b].label.clone(),
                count: stats.iter().map(|s| s.count).sum(),
                lat: MeanStd::of(&lat),
                lon: MeanStd::of(&lon),
            }
        })
        .collect();
    let overall = |f: fn(&BucketReport) -> f64| {
        MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>()).expect("non-empty")
    };
    Ok(FoldSummary {
        variant: first.variant.clone(),
        folds: reports.len(),
        buckets,
        overall_lat: overall(|r| r.overall_lat),
        overall_lon: overall(|r| r.overall_lon),
    })
}

/// Rows of `bucket,count,mae_lat,mae_lon`; empty buckets leave the MAE
/// fields blank.
pub fn report_csv(report: &BucketReport) -> String {
    let mut out = String::from("bucket,count,mae_lat,mae_lon\n");
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for b in &report.buckets {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            b.label,
            b.count,
            cell(b.mae_lat),
            cell(b.mae_lon)
        );
    }
    let _ = writeln!(
        out,
        "overall,{},{},{}",
        report.buckets.iter().map(|b| b.count).sum::<usize>(),
        report.overall_lat,
        report.overall_lon
    );
    out
}

/// Side-by-side text table of fold summaries, one column pair per variant.
pub fn comparison_table(summaries: &[FoldSummary]) -> String {
    let fmt = |m: Option<MeanStd>| match m {
        Some(m) => format!("{:.3} ± {:.3}", m.mean, m.std),
        None => "-".to_string(),
    };
    let mut out = String::from("| bucket |");
    for s in summaries {
        let _ = write!(out, " {} lat | {} lon |", s.variant, s.variant);
    }
    out.push_str("\n|---|");
    out.push_str(&"---|---|".repeat(summaries.len()));
    out.push('\n');
    let rows = summaries.first().map_or(0, |s| s.buckets.len());
    for b in 0..rows {
        let _ = write!(out, "| {} |", summaries[0].buckets[b].label);
        for s in summaries {
            let _ = write!(
                out,
                " {} | {} |",
                fmt(s.buckets[b].lat),
                fmt(s.buckets[b].lon)
            );
        }
        out.push('\n');
    }
    out.push_str("| overall |");
    for s in summaries {
        let _ = write!(
            out,
            " {} | {} |",
            fmt(Some(s.overall_lat)),
            fmt(Some(s.overall_lon))
        );
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn scored(seq_len: usize, dlat: f64, dlon: f64) -> Scored {
        Scored {
            seq_len,
            predicted: LatLon::new(20.0 + dlat, -60.0 + dlon),
            truth: LatLon::new(20.0, -60.0),
        }
    }

    #[test]
    fn perfect_predictor_scores_zero() {
        let r = report_from_predictions(&[scored(1, 0.0, 0.0), scored(16, 0.0, 0.0)], "x").unwrap();
        assert_eq!((r.overall_lat, r.overall_lon), (0.0, 0.0));
        assert_eq!(r.buckets[1].mae_lat, None);
    }

    #[test]
    fn macro_average_over_buckets() {
        let r = report_from_predictions(
            &[
                scored(3, 0.3, 0.0),
                scored(8, -0.6, 0.0),
                scored(13, 0.9, 0.0),
            ],
            "x",
        )
        .unwrap();
        assert!((r.overall_lat - 0.6).abs() < 1e-12);
        // Extra pairs in one bucket do not change the bucket weights.
        let r2 = report_from_predictions(
            &[
                scored(3, 0.3, 0.0),
                scored(3, 0.3, 0.0),
                scored(8, 0.6, 0.0),
                scored(16, 0.9, 0.0),
            ],
            "x",
        )
        .unwrap();
        assert!((r2.overall_lat - 0.6).abs() < 1e-12);
        assert_eq!(r2.buckets[2].count, 1);
    }

    #[test]
    fn bucket_bounds() {
        assert_eq!(bucket_of(0), 0);
        assert_eq!(bucket_of(5), 0);
        assert_eq!(bucket_of(6), 1);
        assert_eq!(bucket_of(10), 1);
        assert_eq!(bucket_of(11), 2);
        assert_eq!(bucket_of(16), 2);
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(report_from_predictions(&[], "x").is_err());
        assert!(aggregate_folds(&[]).is_err());
    }

    fn report(lat: f64) -> BucketReport {
        report_from_predictions(&[scored(2, lat, lat * 2.0)], "x").unwrap()
    }

    #[test]
    fn single_fold_summary() {
        let s = aggregate_folds(&[report(0.25)]).unwrap();
        assert_eq!(
            s.overall_lat,
            MeanStd {
                mean: 0.25,
                std: 0.0
            }
        );
        assert_eq!(
            s.buckets[0].lat,
            Some(MeanStd {
                mean: 0.25,
                std: 0.0
            })
        );
        assert_eq!(s.buckets[1].lat, None);
    }

    #[test]
    fn two_fold_mean() {
        let s = aggregate_folds(&[report(0.3), report(0.5)]).unwrap();
        assert!((s.overall_lat.mean - 0.4).abs() < 1e-12);
    }

    #[test]
    fn five_fold_hand_computed() {
        // lat {0.1, 0.2, 0.3, 0.4, 0.5}: mean 0.3, population var 0.02.
        let reports: Vec<_> = (1..=5).map(|i| report(i as f64 / 10.0)).collect();
        let s = aggregate_folds(&reports).unwrap();
        assert!((s.overall_lat.mean - 0.3).abs() < 1e-12);
        assert!((s.overall_lat.std - 0.02f64.sqrt()).abs() < 1e-12);
        assert!((s.overall_lon.mean - 0.6).abs() < 1e-12);
        assert!((s.overall_lon.std - 0.08f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.buckets[0].count, 5);
    }

    #[test]
    fn csv_layout() {
        let csv = report_csv(&report(0.5));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "bucket,count,mae_lat,mae_lon");
        assert_eq!(lines[1], "0-5,1,0.5,1");
        assert_eq!(lines[2], "6-10,0,,");
        assert_eq!(lines[4], "overall,1,0.5,1");
    }

    #[test]
    fn table_has_both_variants() {
        let mut a = aggregate_folds(&[report(0.3)]).unwrap();
        let mut b = a.clone();
        a.variant = "GraphTransformer".into();
        b.variant = "Transformer".into();
        let t = comparison_table(&[a, b]);
        assert!(t.contains("GraphTransformer lat") && t.contains("Transformer lon"));
        assert_eq!(t.lines().count(), 6);
    }

    fn checkpoint() -> Checkpoint {
        use crate::corpus::{generate_synthetic, stratified_split, SplitRatios};
        use crate::nets::{ModelConfig, Variant};
        use crate::trainer::{train, TrainConfig};
        let corpus = generate_synthetic(60, 15, 0.05, 8).unwrap();
        let split = stratified_split(&corpus.trajectories, SplitRatios::default(), 8).unwrap();
        let config = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        train(
            &split,
            &config,
            &ModelConfig::tiny(Variant::GraphTransformer),
        )
        .unwrap()
    }

    #[test]
    fn prediction_uses_last_sixteen_steps() {
        let ck = checkpoint();
        let long = crate::fixtures::track(1, 20).observations;
        let full = predict(&ck, &long).unwrap();
        let tail = predict(&ck, &long[4..]).unwrap();
        assert_eq!(full, tail);
        assert!(matches!(predict(&ck, &[]), Err(Error::EmptyPrefix)));
    }

    #[test]
    fn far_away_prefix_still_predicts() {
        let ck = checkpoint();
        let prefix =
            crate::fixtures::from_points("FAR", &[(-40.0, 120.0), (-40.5, 121.0)]).observations;
        let p = predict(&ck, &prefix).unwrap();
        assert!(p.lat.is_finite() && p.lon.is_finite());
    }

    #[test]
    fn evaluate_is_deterministic() {
        let ck = checkpoint();
        let trajs: Vec<_> = (0..5).map(|i| crate::fixtures::track(i, 12)).collect();
        let pairs = crate::corpus::sample_pairs(&trajs, 3, 1).unwrap();
        let a = evaluate(&ck, &pairs).unwrap();
        assert_eq!(a, evaluate(&ck, &pairs).unwrap());
        assert_eq!(
            a.buckets.iter().map(|b| b.count).sum::<usize>(),
            pairs.len()
        );
        assert_eq!(a.variant, "GraphTransformer");
    }

    proptest! {
        #[test]
        fn matches_single_pass_accumulator(
            rows in prop::collection::vec((1usize..=16, -3.0..3.0f64, -3.0..3.0f64), 200),
        ) {
            let scored: Vec<Scored> = rows.iter().map(|&(l, a, b)| scored(l, a, b)).collect();
            let r = report_from_predictions(&scored, "x").unwrap();

            let mut acc: Vec<(usize, f64, f64)> = vec![(0, 0.0, 0.0); 3];
            for &(l, a, b) in &rows {
                let i = if l <= 5 { 0 } else if l <= 10 { 1 } else { 2 };
                acc[i].0 += 1;
                acc[i].1 += a.abs();
                acc[i].2 += b.abs();
            }
            let used: Vec<_> = acc.iter().filter(|a| a.0 > 0).collect();
            let lat = used.iter().map(|a| a.1 / a.0 as f64).sum::<f64>() / used.len() as f64;
            let lon = used.iter().map(|a| a.2 / a.0 as f64).sum::<f64>() / used.len() as f64;
            prop_assert!((r.overall_lat - lat).abs() < 1e-9);
            prop_assert!((r.overall_lon - lon).abs() < 1e-9);
            prop_assert_eq!(r.buckets.iter().map(|b| b.count).sum::<usize>(), 200);
            for b in &r.buckets {
                if let Some(m) = b.mae_lat {
                    prop_assert!(m >= 0.0 && m.is_finite());
                }
            }
        }
    }
}
