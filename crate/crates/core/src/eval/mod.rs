//! Reference selectors such as the single and virtual best, and the scores
//! methods are compared on: regret and the share of the SBS-to-VBS gap closed.

mod plot;

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PredictionMatrix, Standardizer};
use crate::perfspace::{argmax, argmin, build_space, euclidean, PerfMetric, PerfSpaceError};
use crate::seed;

pub use plot::emit_scatter;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty training set")]
    EmptyTrain,
    #[error("empty test set")]
    EmptyTest,
    #[error("method `{method}` covers {found} of {expected} test instances")]
    CoverageGap {
        method: String,
        expected: usize,
        found: usize,
    },
    #[error("method `{method}` chose algorithm {choice}, but only {count} exist")]
    ChoiceOutOfRange { method: String, choice: usize, count: usize },
    #[error("train and test have different algorithm counts ({train} vs {test})")]
    AlgorithmMismatch { train: usize, test: usize },
    #[error("oracle dominance violated by `{method}`: {detail}")]
    OracleViolation { method: String, detail: String },
    #[error("need at least 2 algorithms to plot, found {0}")]
    TooFewAlgorithms(usize),
    #[error(transparent)]
    PerfSpace(#[from] PerfSpaceError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl EvalError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        EvalError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

fn column_means(errors: &Array2<f64>) -> Vec<f64> {
    let n = errors.nrows().max(1) as f64;
    errors.columns().into_iter().map(|c| c.sum() / n).collect()
}

/// Algorithm with the lowest mean absolute error, lowest index on ties.
pub fn single_best(errors: &Array2<f64>) -> usize {
    argmin(&column_means(errors))
}

/// Mean over instances of the smallest error any algorithm achieved.
pub fn virtual_best_mae(errors: &Array2<f64>) -> f64 {
    let n = errors.nrows().max(1) as f64;
    errors
        .rows()
        .into_iter()
        .map(|r| r.iter().copied().fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / n
}

/// Per-instance argmin of absolute error, lowest index on ties.
pub fn oracle_choices(errors: &Array2<f64>) -> Vec<usize> {
    errors.rows().into_iter().map(|r| argmin(&r.to_vec())).collect()
}

/// Chooses for each test instance from its `k` nearest training instances in
/// z-scored raw feature space (fitted on train), by mean RIIP×MPRE. Ties in
/// distance go to the earlier training row.
pub fn feature_knn_baseline(
    train: &Dataset,
    train_predictions: &PredictionMatrix,
    test: &Dataset,
    k: usize,
) -> Result<Vec<usize>, EvalError> {
    if train.is_empty() {
        return Err(EvalError::EmptyTrain);
    }
    let space = build_space(train, train_predictions, PerfMetric::RiipMpre)?;
    let z = Standardizer::fit(train);
    let refs: Vec<Vec<f64>> = train.instances().iter().map(|i| z.apply(&i.features)).collect();
    let k = k.clamp(1, train.len());
    let m = space.algorithm_count();
    Ok(test
        .instances()
        .iter()
        .map(|inst| {
            let q = z.apply(&inst.features);
            let mut d: Vec<(f64, usize)> = refs.iter().enumerate().map(|(i, r)| (euclidean(&q, r), i)).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut sums = vec![0.0; m];
            for &(_, i) in &d[..k] {
                for (s, v) in sums.iter_mut().zip(space.row(i)) {
                    *s += v;
                }
            }
            argmax(&sums)
        })
        .collect())
}

/// Uniformly random choices, one per instance.
pub fn random_choices(n: usize, algorithms: usize, seed: u64) -> Vec<usize> {
    let mut rng = seed::rng(seed);
    (0..n).map(|_| rng.random_range(0..algorithms)).collect()
}

/// One method's per-instance choices on the test split.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodChoices {
    pub name: String,
    pub choices: Vec<usize>,
    /// Whether each choice came from a fallback rule; empty means never.
    pub used_fallback: Vec<bool>,
}

impl MethodChoices {
    pub fn new(name: impl Into<String>, choices: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            choices,
            used_fallback: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: String,
    pub deployed_mae: f64,
    pub selection_accuracy: f64,
    pub regret: f64,
    /// `None` when SBS and VBS coincide on the test split.
    pub gap_closed: Option<f64>,
    pub fallback_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EvalReport {
    pub records: Vec<MethodRecord>,
}

impl EvalReport {
    pub fn get(&self, method: &str) -> Option<&MethodRecord> {
        self.records.iter().find(|r| r.method == method)
    }
}

/// Scores every method against the test errors. The SBS is fixed on the
/// training errors. `sbs` and `vbs` rows are appended unless already present.
///
/// Any record with `deployed_mae < vbs_mae` or `gap_closed > 1` is reported
/// as an [`EvalError::OracleViolation`].
pub fn evaluate(methods: &[MethodChoices], test_errors: &Array2<f64>, train_errors: &Array2<f64>) -> Result<EvalReport, EvalError> {
    let n = test_errors.nrows();
    let m = test_errors.ncols();
    if n == 0 {
        return Err(EvalError::EmptyTest);
    }
    if train_errors.nrows() == 0 {
        return Err(EvalError::EmptyTrain);
    }
    if train_errors.ncols() != m {
        return Err(EvalError::AlgorithmMismatch {
            train: train_errors.ncols(),
            test: m,
        });
    }
    let sbs = single_best(train_errors);
    let oracle = oracle_choices(test_errors);
    let vbs_mae = virtual_best_mae(test_errors);
    let sbs_mae = test_errors.column(sbs).sum() / n as f64;

    let mut all = methods.to_vec();
    if !all.iter().any(|c| c.name == "sbs") {
        all.push(MethodChoices::new("sbs", vec![sbs; n]));
    }
    if !all.iter().any(|c| c.name == "vbs") {
        all.push(MethodChoices::new("vbs", oracle.clone()));
    }

    let mut records = Vec::with_capacity(all.len());
    for method in &all {
        let coverage_gap = |found| EvalError::CoverageGap {
            method: method.name.clone(),
            expected: n,
            found,
        };
        if method.choices.len() != n {
            return Err(coverage_gap(method.choices.len()));
        }
        if !method.used_fallback.is_empty() && method.used_fallback.len() != n {
            return Err(coverage_gap(method.used_fallback.len()));
        }
        if let Some(&choice) = method.choices.iter().find(|&&c| c >= m) {
            return Err(EvalError::ChoiceOutOfRange {
                method: method.name.clone(),
                choice,
                count: m,
            });
        }
        let deployed_mae = method
            .choices
            .iter()
            .enumerate()
            .map(|(i, &c)| test_errors[[i, c]])
            .sum::<f64>()
            / n as f64;
        let hits = method.choices.iter().zip(&oracle).filter(|(c, o)| c == o).count();
        let gap_closed = (sbs_mae != vbs_mae).then(|| (sbs_mae - deployed_mae) / (sbs_mae - vbs_mae));
        let record = MethodRecord {
            method: method.name.clone(),
            deployed_mae,
            selection_accuracy: hits as f64 / n as f64,
            regret: deployed_mae - vbs_mae,
            gap_closed,
            fallback_rate: method.used_fallback.iter().filter(|f| **f).count() as f64 / n as f64,
        };
        check_dominance(&record)?;
        records.push(record);
    }
    Ok(EvalReport { records })
}

fn check_dominance(r: &MethodRecord) -> Result<(), EvalError> {
    let violation = |detail: String| EvalError::OracleViolation {
        method: r.method.clone(),
        detail,
    };
    if r.regret < -1e-12 {
        return Err(violation(format!("deployed MAE is {} below the VBS", -r.regret)));
    }
    if let Some(g) = r.gap_closed {
        if g > 1.0 + 1e-12 {
            return Err(violation(format!("gap_closed = {g} > 1")));
        }
    }
    Ok(())
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    let text = serde_json::to_string_pretty(report).map_err(|e| EvalError::io(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| EvalError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::toy;
    use crate::perfspace::absolute_errors;
    use ndarray::array;

    fn toy_errors() -> Array2<f64> {
        let (ds, pm) = toy::labelled();
        absolute_errors(&ds, &pm).unwrap()
    }

    #[test]
    fn single_best_examples() {
        assert_eq!(single_best(&array![[2.0, 1.0], [2.0, 2.0]]), 1);
        assert_eq!(single_best(&array![[1.0, 1.0], [3.0, 3.0]]), 0);
        // Column means: a_1 (9 + 8.5 + 4.5 + 4.6 + 0.9 + 0.9) / 6 ≈ 4.733, a_2 12.6 / 6 = 2.1.
        let e = toy_errors();
        let means = column_means(&e);
        assert!((means[0] - 28.4 / 6.0).abs() < 1e-12);
        assert!((means[1] - 2.1).abs() < 1e-12);
        assert_eq!(single_best(&e), 1);
    }

    #[test]
    fn virtual_best_examples() {
        // Row minima: 1.0, 1.5, 4.5, 4.6, 0.1, 0.1.
        assert!((virtual_best_mae(&toy_errors()) - 11.8 / 6.0).abs() < 1e-12);
        let single = array![[1.0], [3.0]];
        assert_eq!(virtual_best_mae(&single), 2.0);
    }

    #[test]
    fn feature_knn_examples() {
        let (ds, pm) = toy::labelled();
        // A duplicated training row picks that row's best algorithm.
        let dup = ds.subset(&[2]);
        assert_eq!(feature_knn_baseline(&ds, &pm, &dup, 1).unwrap(), vec![0]);
        // k = n aggregates globally, so every query gets the same answer.
        let all = feature_knn_baseline(&ds, &pm, &ds, 6).unwrap();
        assert!(all.iter().all(|c| *c == all[0]));
        // dp_p2 (a, 22, 1) sits next to dp_3 (a, 22, 2) after z-scoring.
        let (id, f) = toy::queries()[1];
        let q = Dataset::new(
            ds.feature_names().to_vec(),
            vec![crate::dataset::Instance {
                id: id.into(),
                features: f.to_vec(),
                target: 0.0,
            }],
            ds.bounds(),
        )
        .unwrap();
        assert_eq!(feature_knn_baseline(&ds, &pm, &q, 1).unwrap(), vec![0]);
    }

    #[test]
    fn oracle_and_sbs_rows() {
        let e = toy_errors();
        let report = evaluate(&[MethodChoices::new("oracle", oracle_choices(&e))], &e, &e).unwrap();
        let o = report.get("oracle").unwrap();
        assert_eq!(o.selection_accuracy, 1.0);
        assert_eq!(o.regret, 0.0);
        assert_eq!(o.gap_closed, Some(1.0));
        let s = report.get("sbs").unwrap();
        assert_eq!(s.gap_closed, Some(0.0));
        assert!(report.get("vbs").is_some());
    }

    #[test]
    fn gap_closed_is_null_without_headroom() {
        let e = array![[1.0, 2.0], [1.0, 3.0]];
        let report = evaluate(&[], &e, &e).unwrap();
        assert!(report.records.iter().all(|r| r.gap_closed.is_none()));
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.starts_with('[') && json.contains("\"gap_closed\":null"));
    }

    #[test]
    fn coverage_gap_is_an_error() {
        let e = toy_errors();
        let r = evaluate(&[MethodChoices::new("short", vec![0; 5])], &e, &e);
        assert!(matches!(r, Err(EvalError::CoverageGap { found: 5, expected: 6, .. })));
    }

    #[test]
    fn random_choices_on_symmetric_data_hit_half() {
        // Monte Carlo: two algorithms whose errors are i.i.d. uniform.
        let mut rng = seed::rng(17);
        let e = Array2::from_shape_fn((1000, 2), |_| rng.random_range(0.0..1.0));
        let report = evaluate(&[MethodChoices::new("random", random_choices(1000, 2, 3))], &e, &e).unwrap();
        let acc = report.get("random").unwrap().selection_accuracy;
        assert!((acc - 0.5).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn fallback_rate_counts_flags() {
        let e = toy_errors();
        let mut c = MethodChoices::new("s", vec![1; 6]);
        c.used_fallback = vec![true, false, false, true, false, false];
        let report = evaluate(&[c], &e, &e).unwrap();
        assert!((report.get("s").unwrap().fallback_rate - 1.0 / 3.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn errors() -> impl Strategy<Value = (Array2<f64>, Vec<usize>)> {
            (1usize..40, 2usize..6).prop_flat_map(|(n, m)| {
                (
                    prop::collection::vec(0.0f64..10.0, n * m)
                        .prop_map(move |v| Array2::from_shape_vec((n, m), v).unwrap()),
                    prop::collection::vec(0..m, n),
                )
            })
        }

        proptest! {
            #[test]
            fn oracle_dominates_every_choice((e, choices) in errors()) {
                let report = evaluate(&[MethodChoices::new("x", choices.clone())], &e, &e).unwrap();
                let vbs = virtual_best_mae(&e);
                for r in &report.records {
                    prop_assert!(r.deployed_mae >= vbs);
                    prop_assert!(r.gap_closed.is_none_or(|g| g <= 1.0));
                    if r.selection_accuracy == 1.0 {
                        prop_assert_eq!(r.regret, 0.0);
                    }
                }
            }

            #[test]
            fn evaluation_ignores_instance_order((e, choices) in errors(), rot in 0usize..40) {
                let n = e.nrows();
                let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
                let pe = e.select(ndarray::Axis(0), &perm);
                let pc: Vec<usize> = perm.iter().map(|&i| choices[i]).collect();
                let a = evaluate(&[MethodChoices::new("x", choices)], &e, &e).unwrap();
                let b = evaluate(&[MethodChoices::new("x", pc)], &pe, &e).unwrap();
                for (ra, rb) in a.records.iter().zip(&b.records) {
                    prop_assert!((ra.deployed_mae - rb.deployed_mae).abs() < 1e-12);
                    prop_assert_eq!(ra.selection_accuracy, rb.selection_accuracy);
                }
            }
        }
    }
}
