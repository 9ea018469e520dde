//! The six-instance worked example used throughout the docs and tests.
//!
//! Two algorithms predict a target on a 10-point scale. `dp_1` and `dp_2`
//! differ in features but `a_2` wins on both by a similar ratio; `dp_4` and
//! `dp_5` look alike in features but different algorithms win. The
//! categorical first feature is encoded as `a = 0`, `b = 1`.

use ndarray::array;

use super::{Dataset, Instance, PredictionMatrix, TargetBounds};

/// Labelled rows `dp_1..dp_6` with bounds `[0, 10]`.
pub fn labelled() -> (Dataset, PredictionMatrix) {
    let rows: [(&str, [f64; 3], f64); 6] = [
        ("dp_1", [1.0, 41.0, 109.0], 10.0),
        ("dp_2", [0.0, 21.0, 1.0], 10.0),
        ("dp_3", [0.0, 22.0, 2.0], 10.0),
        ("dp_4", [1.0, 42.0, 101.0], 10.0),
        ("dp_5", [1.0, 41.0, 112.0], 10.0),
        ("dp_6", [0.0, 61.0, 2.0], 5.0),
    ];
    let instances = rows
        .iter()
        .map(|(id, f, y)| Instance {
            id: id.to_string(),
            features: f.to_vec(),
            target: *y,
        })
        .collect();
    let dataset = Dataset::new(feature_names(), instances, bounds()).expect("valid toy dataset");
    let predictions = PredictionMatrix::new(
        vec!["a_1".into(), "a_2".into()],
        array![
            [1.0, 9.0],
            [1.5, 8.5],
            [5.5, 5.0],
            [5.4, 5.1],
            [9.1, 9.9],
            [4.1, 4.9]
        ],
    )
    .expect("two algorithms");
    (dataset, predictions)
}

/// Feature rows of the unlabelled queries `dp_p1` and `dp_p2`.
pub fn queries() -> [(&'static str, [f64; 3]); 2] {
    [("dp_p1", [1.0, 45.0, 105.0]), ("dp_p2", [0.0, 22.0, 1.0])]
}

pub fn bounds() -> TargetBounds {
    TargetBounds::new(0.0, 10.0).expect("valid bounds")
}

fn feature_names() -> Vec<String> {
    vec!["x_1".into(), "x_2".into(), "x_m".into()]
}
