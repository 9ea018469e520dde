use rand::Rng;

use super::{MiningError, PersonaAssignment, PersonaMethod};
use crate::perfspace::PerformanceSpace;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: PersonaAssignment,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to assigned centroids after each Lloyd step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(c, m)| (c, sq_dist(p, m)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && *w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // Every remaining point coincides with a center.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Lloyd's algorithm from a seeded k-means++ start. Stops when assignments
/// stop changing or after `max_iters` steps. An emptied cluster is moved onto
/// the point farthest from its current centroid.
pub fn kmeans(space: &PerformanceSpace, k: usize, seed: u64, max_iters: usize) -> Result<KMeansResult, MiningError> {
    let n = space.len();
    if k < 2 || k > n {
        return Err(MiningError::InvalidK { k, n });
    }
    let points: Vec<Vec<f64>> = (0..n).map(|i| space.row(i).to_vec()).collect();
    let dim = space.algorithm_count();
    let mut rng = seed::rng(seed);
    let mut centroids = plus_plus_init(&points, k, &mut rng);
    let mut labels: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iters.max(1) {
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == labels {
            break;
        }
        labels = next;
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let mut taken = Vec::new();
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let far = (0..n)
                .filter(|i| !taken.contains(i))
                .map(|i| (i, sq_dist(&points[i], &centroids[labels[i]])))
                .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
                .0;
            taken.push(far);
            centroids[c] = points[far].clone();
        }
        trace.push(
            points
                .iter()
                .zip(&labels)
                .map(|(p, &l)| sq_dist(p, &centroids[l]))
                .sum(),
        );
    }

    Ok(KMeansResult {
        assignment: PersonaAssignment {
            labels,
            method: PersonaMethod::Kmeans,
        },
        centroids,
        objective_trace: trace,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perfspace::PerfMetric;
    use ndarray::Array2;
    use rand_distr::StandardNormal;

    fn space_from(points: &[Vec<f64>]) -> PerformanceSpace {
        let n = points.len();
        let d = points[0].len();
        PerformanceSpace {
            metric: PerfMetric::AbsoluteError,
            instance_ids: (0..n).map(|i| format!("p{i}")).collect(),
            algorithm_ids: (0..d).map(|k| format!("a{k}")).collect(),
            values: Array2::from_shape_fn((n, d), |(i, k)| points[i][k]),
            best: vec![0; n],
        }
    }

    fn blobs(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = seed::rng(seed);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (b, c) in [[0.0, 0.0], [20.0, 20.0]].iter().enumerate() {
            for _ in 0..50 {
                pts.push(c.iter().map(|x| x + rng.sample::<f64, _>(StandardNormal)).collect());
                truth.push(b);
            }
        }
        (pts, truth)
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let (pts, truth) = blobs(1);
        let r = kmeans(&space_from(&pts), 2, 3, 100).unwrap();
        // Labels are arbitrary; compare the induced partition.
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                assert_eq!(
                    r.assignment.labels[i] == r.assignment.labels[j],
                    truth[i] == truth[j]
                );
            }
        }
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let pts: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let r = kmeans(&space_from(&pts), 7, 0, 50).unwrap();
        let mut l = r.assignment.labels.clone();
        l.sort_unstable();
        l.dedup();
        assert_eq!(l.len(), 7);
        assert_eq!(*r.objective_trace.last().unwrap(), 0.0);
    }

    #[test]
    fn seeded_and_monotone() {
        let (pts, _) = blobs(2);
        let space = space_from(&pts);
        let a = kmeans(&space, 5, 11, 100).unwrap();
        assert_eq!(a, kmeans(&space, 5, 11, 100).unwrap());
        for w in a.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", a.objective_trace);
        }
    }

    #[test]
    fn invalid_k() {
        let space = space_from(&[vec![0.0], vec![1.0]]);
        assert!(kmeans(&space, 1, 0, 10).is_err());
        assert!(kmeans(&space, 3, 0, 10).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn objective_never_increases(
                pts in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 6..60),
                k in 2usize..6,
                seed in any::<u64>(),
            ) {
                let space = space_from(&pts);
                let k = k.min(pts.len());
                let r = kmeans(&space, k, seed, 100).unwrap();
                prop_assert_eq!(r.assignment.labels.len(), pts.len());
                for w in r.objective_trace.windows(2) {
                    prop_assert!(w[1] <= w[0] + 1e-9 * w[0].max(1.0));
                }
            }
        }
    }
}
