use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::{Difficulty, MiningConfig, MiningError, PersonaAssignment, PersonaMethod, Triplet};
use crate::dataset::{Dataset, Standardizer};
use crate::perfspace::{distance, euclidean, DistanceKind, PerformanceSpace};
use crate::seed;

/// Absolute `(ρ_pos, ρ_neg)` for `space` under `config`.
pub fn resolved_radii(space: &PerformanceSpace, config: &MiningConfig) -> (f64, f64) {
    let scale = match (config.radii_relative, config.distance) {
        (false, _) | (true, DistanceKind::Cosine) => 1.0,
        (true, DistanceKind::Euclidean) => space.diameter(),
    };
    (config.pos_radius * scale, config.neg_radius * scale)
}

enum AnchorOutcome {
    Triplets(Vec<Triplet>),
    NoPositive { no_negative: bool },
    NoNegative,
}

fn tercile(rank: usize, len: usize) -> Difficulty {
    let q = (rank as f64 + 0.5) / len as f64;
    if q < 1.0 / 3.0 {
        Difficulty::Hard
    } else if q < 2.0 / 3.0 {
        Difficulty::SemiHard
    } else {
        Difficulty::Easy
    }
}

fn draw_difficulty(mix: &[f64; 3], rng: &mut impl Rng) -> Difficulty {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (d, w) in Difficulty::ALL.iter().zip(mix) {
        acc += w;
        if u < acc {
            return *d;
        }
    }
    // Rounding can leave `acc` a hair below 1; fall to the last positive weight.
    Difficulty::ALL
        .into_iter()
        .zip(mix)
        .rev()
        .find(|(_, w)| **w > 0.0)
        .map_or(Difficulty::SemiHard, |(d, _)| d)
}

/// Mines triplets whose positives perform like the anchor and whose negatives
/// do not.
///
/// Positives lie within `ρ_pos` of the anchor in the performance space (and
/// share its best algorithm when required); negatives lie at least `ρ_neg`
/// away (and have a different best algorithm when required). Negatives are
/// ranked by standardized feature distance to the anchor: the closest third
/// is `hard`, the middle third `semi_hard`, the rest `easy`. Each emitted
/// triplet draws its difficulty from `difficulty_mix`, falling back to the
/// nearest non-empty tercile.
pub fn mine_triplets_radius(
    space: &PerformanceSpace,
    features: &Dataset,
    config: &MiningConfig,
) -> Result<Vec<Triplet>, MiningError> {
    config.validate()?;
    let n = space.len();
    if n < 3 {
        return Err(MiningError::TooFewInstances(n));
    }
    let standardizer = Standardizer::fit(features);
    let feats: Vec<Vec<f64>> = space
        .instance_ids
        .iter()
        .map(|id| {
            features
                .index_of(id)
                .map(|i| standardizer.apply(&features.get(i).features))
                .ok_or_else(|| MiningError::MissingFeatures(id.clone()))
        })
        .collect::<Result<_, _>>()?;
    let points: Vec<Vec<f64>> = (0..n).map(|i| space.row(i).to_vec()).collect();
    let (rho_pos, rho_neg) = resolved_radii(space, config);

    let outcomes: Vec<AnchorOutcome> = (0..n)
        .into_par_iter()
        .map(|a| -> Result<AnchorOutcome, MiningError> {
            let mut positives = Vec::new();
            let mut negatives = Vec::new();
            for j in (0..n).filter(|&j| j != a) {
                let d = distance(&points[a], &points[j], config.distance)?;
                let same = space.best[j] == space.best[a];
                if d <= rho_pos && (same || !config.require_same_best) {
                    positives.push(j);
                }
                if d >= rho_neg && (!same || !config.require_diff_best) {
                    negatives.push(j);
                }
            }
            if positives.is_empty() {
                return Ok(AnchorOutcome::NoPositive {
                    no_negative: negatives.is_empty(),
                });
            }
            if negatives.is_empty() {
                return Ok(AnchorOutcome::NoNegative);
            }

            let mut ranked: Vec<(f64, usize)> = negatives
                .iter()
                .map(|&j| (euclidean(&feats[a], &feats[j]), j))
                .collect();
            ranked.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            let mut buckets: [Vec<usize>; 3] = Default::default();
            for (r, &(_, j)) in ranked.iter().enumerate() {
                buckets[tercile(r, ranked.len()) as usize].push(j);
            }

            let mut rng = seed::child_rng(config.seed.unwrap_or_default(), a as u64);
            let triplets = (0..config.triplets_per_anchor)
                .map(|_| {
                    let wanted = draw_difficulty(&config.difficulty_mix, &mut rng);
                    let fallback = match wanted {
                        Difficulty::Easy => [Difficulty::Easy, Difficulty::SemiHard, Difficulty::Hard],
                        Difficulty::SemiHard => [Difficulty::SemiHard, Difficulty::Hard, Difficulty::Easy],
                        Difficulty::Hard => [Difficulty::Hard, Difficulty::SemiHard, Difficulty::Easy],
                    };
                    let difficulty = fallback
                        .into_iter()
                        .find(|d| !buckets[*d as usize].is_empty())
                        .expect("at least one negative");
                    let bucket = &buckets[difficulty as usize];
                    let negative = bucket[rng.random_range(0..bucket.len())];
                    let positive = positives[rng.random_range(0..positives.len())];
                    Triplet {
                        anchor: space.instance_ids[a].clone(),
                        positive: space.instance_ids[positive].clone(),
                        negative: space.instance_ids[negative].clone(),
                        difficulty,
                    }
                })
                .collect();
            Ok(AnchorOutcome::Triplets(triplets))
        })
        .collect::<Result<_, _>>()?;

    let mut lacking_positive = 0;
    let mut lacking_negative = 0;
    for o in &outcomes {
        match o {
            AnchorOutcome::NoPositive { no_negative } => {
                lacking_positive += 1;
                lacking_negative += usize::from(*no_negative);
            }
            AnchorOutcome::NoNegative => lacking_negative += 1,
            AnchorOutcome::Triplets(_) => {}
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(config.seed.unwrap_or_default()));
    let budget = config.max_triplets.unwrap_or(usize::MAX);
    let mut chosen = Vec::new();
    let mut total = 0;
    for a in order {
        if total >= budget {
            break;
        }
        if let AnchorOutcome::Triplets(ts) = &outcomes[a] {
            chosen.push(a);
            total += ts.len();
        }
    }
    if total == 0 {
        return Err(MiningError::NoValidTriplets {
            anchors: n,
            lacking_positive,
            lacking_negative,
        });
    }
    chosen.sort_unstable();
    let mut out = Vec::with_capacity(total);
    for a in chosen {
        if let AnchorOutcome::Triplets(ts) = &outcomes[a] {
            out.extend(ts.iter().cloned());
        }
    }
    Ok(out)
}

/// Personas as connected components of the "is a valid positive of" graph.
/// With `require_same_best`, every component shares one best algorithm.
pub fn radius_assignment(space: &PerformanceSpace, config: &MiningConfig) -> Result<PersonaAssignment, MiningError> {
    config.validate()?;
    let n = space.len();
    let (rho_pos, _) = resolved_radii(space, config);
    let points: Vec<Vec<f64>> = (0..n).map(|i| space.row(i).to_vec()).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            if config.require_same_best && space.best[i] != space.best[j] {
                continue;
            }
            if distance(&points[i], &points[j], config.distance)? <= rho_pos {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut ids = std::collections::HashMap::new();
    let labels = (0..n)
        .map(|i| {
            let root = find(&mut parent, i);
            let next = ids.len();
            *ids.entry(root).or_insert(next)
        })
        .collect();
    Ok(PersonaAssignment {
        labels,
        method: PersonaMethod::Radius,
    })
}

/// Cluster-based triplets: positive from the anchor's own cluster, negative
/// from any other. Every triplet is tagged `semi_hard`.
pub fn mine_triplets_cluster(
    space: &PerformanceSpace,
    assignment: &PersonaAssignment,
    per_anchor: usize,
    seed: u64,
) -> Result<Vec<Triplet>, MiningError> {
    let n = space.len();
    if assignment.labels.len() != n {
        return Err(MiningError::AssignmentSize {
            labels: assignment.labels.len(),
            instances: n,
        });
    }
    let mut members = vec![Vec::new(); assignment.persona_count()];
    for (i, &l) in assignment.labels.iter().enumerate() {
        members[l].push(i);
    }
    if members.iter().all(|m| m.len() < 2) {
        return Err(MiningError::NoMultiMemberCluster);
    }
    if members.iter().filter(|m| !m.is_empty()).count() < 2 {
        return Err(MiningError::SingleCluster);
    }
    let out = (0..n)
        .into_par_iter()
        .flat_map_iter(|a| {
            let own = &members[assignment.labels[a]];
            let mut rng = seed::child_rng(seed, a as u64);
            let others: Vec<usize> = (0..n)
                .filter(|&j| assignment.labels[j] != assignment.labels[a])
                .collect();
            let count = if own.len() >= 2 { per_anchor } else { 0 };
            (0..count)
                .map(|_| {
                    let positive = loop {
                        let p = own[rng.random_range(0..own.len())];
                        if p != a {
                            break p;
                        }
                    };
                    let negative = others[rng.random_range(0..others.len())];
                    Triplet {
                        anchor: space.instance_ids[a].clone(),
                        positive: space.instance_ids[positive].clone(),
                        negative: space.instance_ids[negative].clone(),
                        difficulty: Difficulty::SemiHard,
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, toy, SyntheticSpec, TargetBounds};
    use crate::perfspace::{build_space, PerfMetric};
    use ndarray::Array2;

    fn toy_space() -> (PerformanceSpace, Dataset) {
        let (ds, pm) = toy::labelled();
        (build_space(&ds, &pm, PerfMetric::RiipMpre).unwrap(), ds)
    }

    /// Post-hoc check of every triplet against the space and config.
    fn assert_valid(space: &PerformanceSpace, triplets: &[Triplet], config: &MiningConfig) {
        let (rp, rn) = resolved_radii(space, config);
        let idx = |id: &str| space.instance_ids.iter().position(|x| x == id).unwrap();
        for t in triplets {
            let (a, p, n) = (idx(&t.anchor), idx(&t.positive), idx(&t.negative));
            assert!(a != p && a != n && p != n, "{t:?}");
            let row = |i: usize| space.row(i).to_vec();
            let dp = distance(&row(a), &row(p), config.distance).unwrap();
            let dn = distance(&row(a), &row(n), config.distance).unwrap();
            assert!(dp <= rp, "{t:?}: d(a,p)={dp} > {rp}");
            assert!(dn >= rn, "{t:?}: d(a,n)={dn} < {rn}");
            if config.require_same_best {
                assert_eq!(space.best[a], space.best[p]);
            }
            if config.require_diff_best {
                assert_ne!(space.best[a], space.best[n]);
            }
        }
    }

    #[test]
    fn toy_anchor_dp1_gets_dp2_and_hard_negative_dp4() {
        let (space, ds) = toy_space();
        // d(dp_1, dp_2) ≈ 0.052 while the next same-best row is ≈ 0.113 away.
        let config = MiningConfig {
            pos_radius: 0.06,
            neg_radius: 0.3,
            radii_relative: false,
            difficulty_mix: [0.0, 0.0, 1.0],
            triplets_per_anchor: 1,
            ..MiningConfig::default()
        };
        let triplets = mine_triplets_radius(&space, &ds, &config).unwrap();
        let t = triplets.iter().find(|t| t.anchor == "dp_1").unwrap();
        assert_eq!((t.positive.as_str(), t.negative.as_str()), ("dp_2", "dp_4"));
        assert_eq!(t.difficulty, Difficulty::Hard);
        assert_valid(&space, &triplets, &config);
    }

    #[test]
    fn identical_performance_has_no_negatives() {
        let (_, ds) = toy_space();
        let space = PerformanceSpace {
            metric: PerfMetric::RiipMpre,
            instance_ids: ds.ids().map(str::to_string).collect(),
            algorithm_ids: vec!["a_1".into(), "a_2".into()],
            values: Array2::from_elem((6, 2), 0.5),
            best: vec![0; 6],
        };
        match mine_triplets_radius(&space, &ds, &MiningConfig::default()) {
            Err(MiningError::NoValidTriplets {
                anchors,
                lacking_negative,
                ..
            }) => assert_eq!((anchors, lacking_negative), (6, 6)),
            other => panic!("expected NoValidTriplets, got {other:?}"),
        }
    }

    #[test]
    fn mining_is_deterministic_and_ordered() {
        let (space, ds) = toy_space();
        let config = MiningConfig {
            pos_radius: 0.2,
            neg_radius: 0.3,
            triplets_per_anchor: 3,
            seed: Some(9),
            ..MiningConfig::default()
        };
        let a = mine_triplets_radius(&space, &ds, &config).unwrap();
        assert_eq!(a, mine_triplets_radius(&space, &ds, &config).unwrap());
        let pos: Vec<usize> = a.iter().map(|t| ds.index_of(&t.anchor).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] <= w[1]));
        assert_valid(&space, &a, &config);
    }

    #[test]
    fn budget_limits_anchor_count() {
        let (space, ds) = toy_space();
        let config = MiningConfig {
            pos_radius: 0.2,
            neg_radius: 0.3,
            triplets_per_anchor: 2,
            max_triplets: Some(3),
            ..MiningConfig::default()
        };
        let ts = mine_triplets_radius(&space, &ds, &config).unwrap();
        assert_eq!(ts.len(), 4);
    }

    fn two_persona_spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            persona_count: 2,
            instances_per_persona: 300,
            feature_dim: 3,
            modes_per_persona: 2,
            algorithm_count: 3,
            error_profiles: vec![vec![0.2, 3.0, 1.5], vec![3.0, 0.2, 1.5]],
            bounds: TargetBounds::new(0.0, 10.0).unwrap(),
            seed,
        }
    }

    #[test]
    fn positives_share_ground_truth_persona() {
        // Oracle: the generator's persona labels. Profiles are far apart so the
        // per-instance winner almost always matches the persona.
        let spec = SyntheticSpec {
            algorithm_count: 2,
            error_profiles: vec![vec![0.02, 5.0], vec![5.0, 0.02]],
            ..two_persona_spec(21)
        };
        let data = generate_synthetic(&spec).unwrap();
        let space = build_space(&data.dataset, &data.predictions, PerfMetric::RiipMpre).unwrap();
        let config = MiningConfig {
            seed: Some(4),
            ..MiningConfig::default()
        };
        let ts = mine_triplets_radius(&space, &data.dataset, &config).unwrap();
        assert_valid(&space, &ts, &config);
        let persona = |id: &str| data.personas[data.dataset.index_of(id).unwrap()];
        let agree = ts.iter().filter(|t| persona(&t.anchor) == persona(&t.positive)).count();
        let rate = agree as f64 / ts.len() as f64;
        assert!(rate >= 0.99, "agreement {rate} over {} triplets", ts.len());
    }

    #[test]
    fn difficulty_counts_follow_mix() {
        let data = generate_synthetic(&two_persona_spec(3)).unwrap();
        let space = build_space(&data.dataset, &data.predictions, PerfMetric::RiipMpre).unwrap();
        let config = MiningConfig {
            triplets_per_anchor: 4,
            seed: Some(8),
            ..MiningConfig::default()
        };
        let ts = mine_triplets_radius(&space, &data.dataset, &config).unwrap();
        for (d, w) in Difficulty::ALL.iter().zip(config.difficulty_mix) {
            let share = ts.iter().filter(|t| t.difficulty == *d).count() as f64 / ts.len() as f64;
            assert!((share - w).abs() < 0.05, "{d:?}: {share} vs {w}");
        }
    }

    #[test]
    fn radius_assignment_with_same_best_is_pure() {
        let data = generate_synthetic(&two_persona_spec(5)).unwrap();
        let space = build_space(&data.dataset, &data.predictions, PerfMetric::RiipMpre).unwrap();
        let a = radius_assignment(&space, &MiningConfig::default()).unwrap();
        assert_eq!(super::super::persona_purity(&a, &space).unwrap(), 1.0);
    }

    fn labelled_space(labels: &[usize]) -> (PerformanceSpace, PersonaAssignment) {
        let n = labels.len();
        let space = PerformanceSpace {
            metric: PerfMetric::RiipMpre,
            instance_ids: (0..n).map(|i| format!("i{i}")).collect(),
            algorithm_ids: vec!["a".into(), "b".into()],
            values: Array2::zeros((n, 2)),
            best: labels.to_vec(),
        };
        let assignment = PersonaAssignment {
            labels: labels.to_vec(),
            method: PersonaMethod::Kmeans,
        };
        (space, assignment)
    }

    #[test]
    fn cluster_mining_positives_are_intra_cluster() {
        let (space, assignment) = labelled_space(&[0, 0, 0, 1, 1, 1]);
        let ts = mine_triplets_cluster(&space, &assignment, 1, 2).unwrap();
        assert_eq!(ts.len(), 6);
        let label = |id: &str| assignment.labels[space.instance_ids.iter().position(|x| x == id).unwrap()];
        for t in &ts {
            assert_eq!(label(&t.anchor), label(&t.positive));
            assert_ne!(label(&t.anchor), label(&t.negative));
            assert_ne!(t.anchor, t.positive);
            assert_eq!(t.difficulty, Difficulty::SemiHard);
        }
    }

    #[test]
    fn cluster_mining_errors() {
        let (space, assignment) = labelled_space(&[0, 0, 0, 0]);
        assert!(matches!(
            mine_triplets_cluster(&space, &assignment, 1, 0),
            Err(MiningError::SingleCluster)
        ));
        let (space, assignment) = labelled_space(&[0, 1]);
        assert!(matches!(
            mine_triplets_cluster(&space, &assignment, 1, 0),
            Err(MiningError::NoMultiMemberCluster)
        ));
    }
}
