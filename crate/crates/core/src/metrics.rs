//! Normalized score and cross-dataset aggregation of benchmark runs.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "RMSE")]
    Rmse,
    #[serde(rename = "F1")]
    F1,
    #[serde(rename = "F1_weighted")]
    F1Weighted,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Rmse => "RMSE",
            MetricKind::F1 => "F1",
            MetricKind::F1Weighted => "F1_weighted",
        })
    }
}

impl FromStr for MetricKind {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "rmse" => Ok(MetricKind::Rmse),
            "f1" => Ok(MetricKind::F1),
            "f1_weighted" | "f1weighted" => Ok(MetricKind::F1Weighted),
            _ => Err(MetricsError::UnknownKind(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub dataset: String,
    pub method: String,
    #[serde(rename = "run")]
    pub run_index: u32,
    #[serde(rename = "raw")]
    pub raw_score: f64,
    pub kind: MetricKind,
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("negative RMSE {0}")]
    NegativeRmse(f64),
    #[error("{kind} score {raw} outside [0, 1]")]
    OutOfRange { kind: MetricKind, raw: f64 },
    #[error("no results to aggregate")]
    Empty,
    #[error("dataset {dataset} has no run for method {method}")]
    MissingRuns { dataset: String, method: String },
    #[error("unknown metric kind {0:?}")]
    UnknownKind(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Maps RMSE onto `(0, 1]` via `1 / (1 + ln(1 + rmse))`; F1 kinds pass through.
pub fn normalized_score(raw: f64, kind: MetricKind) -> Result<f64, MetricsError> {
    match kind {
        MetricKind::Rmse if raw.is_nan() || raw < 0.0 => Err(MetricsError::NegativeRmse(raw)),
        MetricKind::Rmse => Ok(1.0 / (1.0 + raw.ln_1p())),
        _ if !(0.0..=1.0).contains(&raw) => Err(MetricsError::OutOfRange { kind, raw }),
        _ => Ok(raw),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub top1_rate: f64,
    pub avg_ns: f64,
    pub avg_best_ns: f64,
}

/// Per-method summary, sorted by method name.
pub fn aggregate(results: &[RunResult]) -> Result<Vec<MethodSummary>, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::Empty);
    }
    // dataset -> method -> normalized scores
    let mut table: BTreeMap<&str, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    let mut methods: Vec<&str> = Vec::new();
    for r in results {
        let ns = normalized_score(r.raw_score, r.kind)?;
        table.entry(&r.dataset).or_default().entry(&r.method).or_default().push(ns);
        methods.push(&r.method);
    }
    methods.sort_unstable();
    methods.dedup();

    let mut top1: BTreeMap<&str, f64> = BTreeMap::new();
    let mut sum_avg: BTreeMap<&str, f64> = BTreeMap::new();
    let mut sum_best: BTreeMap<&str, f64> = BTreeMap::new();
    for (dataset, per_method) in &table {
        let mut bests = Vec::with_capacity(methods.len());
        for m in &methods {
            let runs = per_method.get(m).ok_or_else(|| MetricsError::MissingRuns {
                dataset: dataset.to_string(),
                method: m.to_string(),
            })?;
            let best = runs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            *sum_avg.entry(m).or_default() += runs.iter().sum::<f64>() / runs.len() as f64;
            *sum_best.entry(m).or_default() += best;
            bests.push(best);
        }
        let top = bests.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<_> = methods.iter().zip(&bests).filter(|(_, b)| **b == top).collect();
        let share = 1.0 / winners.len() as f64;
        for (m, _) in winners {
            *top1.entry(m).or_default() += share;
        }
    }

    let n = table.len() as f64;
    Ok(methods
        .iter()
        .map(|m| MethodSummary {
            method: m.to_string(),
            top1_rate: top1.get(m).copied().unwrap_or(0.0) / n,
            avg_ns: sum_avg[m] / n,
            avg_best_ns: sum_best[m] / n,
        })
        .collect())
}

pub fn read_results<R: io::Read>(reader: R) -> Result<Vec<RunResult>, MetricsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or_default();
        let parse_err = |what: &str| {
            csv::Error::from(io::Error::new(io::ErrorKind::InvalidData, format!("bad {what} in row {:?}", row)))
        };
        out.push(RunResult {
            dataset: field(0).to_string(),
            method: field(1).to_string(),
            run_index: field(2).parse().map_err(|_| parse_err("run"))?,
            raw_score: field(3).parse().map_err(|_| parse_err("raw"))?,
            kind: field(4).parse()?,
        });
    }
    Ok(out)
}

pub fn write_summary<W: io::Write>(writer: W, summary: &[MethodSummary]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in summary {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rr(dataset: &str, method: &str, run: u32, raw: f64, kind: MetricKind) -> RunResult {
        RunResult { dataset: dataset.into(), method: method.into(), run_index: run, raw_score: raw, kind }
    }

    fn by_method<'a>(s: &'a [MethodSummary], m: &str) -> &'a MethodSummary {
        s.iter().find(|x| x.method == m).unwrap()
    }

    #[test]
    fn normalized_examples() {
        assert_eq!(normalized_score(0.0, MetricKind::Rmse).unwrap(), 1.0);
        let e1 = std::f64::consts::E - 1.0;
        assert_abs_diff_eq!(normalized_score(e1, MetricKind::Rmse).unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(normalized_score(0.43838028169014087, MetricKind::F1).unwrap(), 0.43838028169014087);
        assert!(matches!(normalized_score(-0.1, MetricKind::Rmse), Err(MetricsError::NegativeRmse(_))));
        assert!(normalized_score(1.2, MetricKind::F1Weighted).is_err());
    }

    #[test]
    fn single_dataset_winner() {
        let s = aggregate(&[rr("d", "a", 0, 0.5, MetricKind::F1), rr("d", "b", 0, 0.7, MetricKind::F1)]).unwrap();
        assert_eq!(by_method(&s, "a").top1_rate, 0.0);
        assert_eq!(by_method(&s, "b").top1_rate, 1.0);
        // one run each: average equals best
        assert_eq!(by_method(&s, "a").avg_ns, by_method(&s, "a").avg_best_ns);
    }

    #[test]
    fn hand_computed_fixture() {
        // d1 (F1): a runs {0.6, 0.8}, b runs {0.7, 0.7}
        // d2 (RMSE): a raw {0, e-1} -> NS {1, 0.5}; b raw {e^2-1, e^2-1} -> NS {1/3, 1/3}
        let e = std::f64::consts::E;
        let rows = [
            rr("d1", "a", 0, 0.6, MetricKind::F1),
            rr("d1", "a", 1, 0.8, MetricKind::F1),
            rr("d1", "b", 0, 0.7, MetricKind::F1),
            rr("d1", "b", 1, 0.7, MetricKind::F1),
            rr("d2", "a", 0, 0.0, MetricKind::Rmse),
            rr("d2", "a", 1, e - 1.0, MetricKind::Rmse),
            rr("d2", "b", 0, e * e - 1.0, MetricKind::Rmse),
            rr("d2", "b", 1, e * e - 1.0, MetricKind::Rmse),
        ];
        let s = aggregate(&rows).unwrap();
        let a = by_method(&s, "a");
        let b = by_method(&s, "b");
        assert_abs_diff_eq!(a.avg_ns, (0.7 + 0.75) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.avg_best_ns, (0.8 + 1.0) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.avg_ns, (0.7 + 1.0 / 3.0) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.avg_best_ns, (0.7 + 1.0 / 3.0) / 2.0, epsilon = 1e-12);
        assert_eq!(a.top1_rate, 1.0);
        assert_eq!(b.top1_rate, 0.0);
    }

    #[test]
    fn ties_split() {
        let s = aggregate(&[rr("d", "a", 0, 0.5, MetricKind::F1), rr("d", "b", 0, 0.5, MetricKind::F1)]).unwrap();
        assert_eq!(by_method(&s, "a").top1_rate, 0.5);
        assert_eq!(by_method(&s, "b").top1_rate, 0.5);
    }

    #[test]
    fn aggregate_errors() {
        assert!(matches!(aggregate(&[]), Err(MetricsError::Empty)));
        let rows = [rr("d1", "a", 0, 0.5, MetricKind::F1), rr("d2", "b", 0, 0.5, MetricKind::F1)];
        assert!(matches!(aggregate(&rows), Err(MetricsError::MissingRuns { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let text = "dataset,method,run,raw,kind\nd1,a,0,0.5,F1\nd1,b,0,2.0,RMSE\n";
        let rows = read_results(text.as_bytes()).unwrap();
        assert_eq!(rows[1], rr("d1", "b", 0, 2.0, MetricKind::Rmse));
        let mut out = Vec::new();
        write_summary(&mut out, &aggregate(&rows).unwrap()).unwrap();
        let out = String::from_utf8(out).unwrap();
        assert!(out.starts_with("method,top1_rate,avg_ns,avg_best_ns\na,1.0,0.5,0.5\n"));
        assert!(read_results("dataset,method,run,raw,kind\nd,a,x,0.5,F1\n".as_bytes()).is_err());
        assert!(read_results("dataset,method,run,raw,kind\nd,a,0,0.5,AUC\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn ns_decreasing_in_rmse(a in 0.0f64..1e6, b in 0.0f64..1e6) {
            let (na, nb) = (normalized_score(a, MetricKind::Rmse).unwrap(), normalized_score(b, MetricKind::Rmse).unwrap());
            prop_assert!(na > 0.0 && na <= 1.0);
            if a < b { prop_assert!(na >= nb); }
        }

        #[test]
        fn permutation_invariant_and_top1_sums(
            scores in prop::collection::vec(0.0f64..1.0, 12),
            shuffle_seed in any::<u64>(),
        ) {
            // 3 datasets x 2 methods x 2 runs
            let mut rows = Vec::new();
            for (i, s) in scores.iter().enumerate() {
                let (d, m, r) = (i / 4, (i / 2) % 2, i % 2);
                rows.push(rr(&format!("d{d}"), &format!("m{m}"), r as u32, *s, MetricKind::F1));
            }
            let base = aggregate(&rows).unwrap();
            let mut shuffled = rows.clone();
            let n = shuffled.len();
            let mut state = shuffle_seed;
            for i in (1..n).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (state >> 33) as usize % (i + 1));
            }
            let again = aggregate(&shuffled).unwrap();
            for (x, y) in base.iter().zip(&again) {
                prop_assert_eq!(&x.method, &y.method);
                prop_assert!((x.avg_ns - y.avg_ns).abs() < 1e-12);
                prop_assert!((x.avg_best_ns - y.avg_best_ns).abs() < 1e-12);
                prop_assert!((x.top1_rate - y.top1_rate).abs() < 1e-12);
            }
            let total: f64 = base.iter().map(|s| s.top1_rate).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
