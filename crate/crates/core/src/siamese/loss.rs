use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::perfspace::DistanceKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Triplet,
    Contrastive,
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "triplet" => Ok(LossKind::Triplet),
            "contrastive" => Ok(LossKind::Contrastive),
            other => Err(format!("unknown loss `{other}` (expected triplet, contrastive)")),
        }
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Embedding-space distance and its gradients with respect to `u` and `v`.
///
/// Euclidean distance has gradient 0 where `u = v`. Cosine distance against a
/// zero vector is taken as 1 with zero gradient.
pub(crate) fn distance_grad(u: &[f64], v: &[f64], kind: DistanceKind) -> (f64, Vec<f64>, Vec<f64>) {
    match kind {
        DistanceKind::Euclidean => {
            let diff: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
            let d = dot(&diff, &diff).sqrt();
            if d == 0.0 {
                return (0.0, vec![0.0; u.len()], vec![0.0; v.len()]);
            }
            let gu: Vec<f64> = diff.iter().map(|x| x / d).collect();
            let gv = gu.iter().map(|x| -x).collect();
            (d, gu, gv)
        }
        DistanceKind::Cosine => {
            let (nu, nv) = (dot(u, u).sqrt(), dot(v, v).sqrt());
            if nu == 0.0 || nv == 0.0 {
                return (1.0, vec![0.0; u.len()], vec![0.0; v.len()]);
            }
            let c = dot(u, v) / (nu * nv);
            // ∂(1 − c)/∂u = −(v / (|u||v|) − c u / |u|²)
            let gu = u
                .iter()
                .zip(v)
                .map(|(a, b)| -(b / (nu * nv) - c * a / (nu * nu)))
                .collect();
            let gv = u
                .iter()
                .zip(v)
                .map(|(a, b)| -(a / (nu * nv) - c * b / (nv * nv)))
                .collect();
            (1.0 - c, gu, gv)
        }
    }
}

pub fn embedding_distance(u: &[f64], v: &[f64], kind: DistanceKind) -> f64 {
    distance_grad(u, v, kind).0
}

/// `max(0, d(a, p) − d(a, n) + margin)`.
pub fn triplet_loss(a: &[f64], p: &[f64], n: &[f64], margin: f64, kind: DistanceKind) -> f64 {
    (embedding_distance(a, p, kind) - embedding_distance(a, n, kind) + margin).max(0.0)
}

/// `d²` for a same pair, `max(0, margin − d)²` otherwise.
pub fn contrastive_loss(u: &[f64], v: &[f64], same: bool, margin: f64, kind: DistanceKind) -> f64 {
    let d = embedding_distance(u, v, kind);
    if same {
        d * d
    } else {
        (margin - d).max(0.0).powi(2)
    }
}

/// Loss value plus gradients with respect to the three embeddings.
pub(crate) struct TripletGrad {
    pub loss: f64,
    /// `d(a, p) − d(a, n) + margin`, the hinge argument for triplet loss.
    pub hinge: f64,
    pub ga: Vec<f64>,
    pub gp: Vec<f64>,
    pub gn: Vec<f64>,
}

pub(crate) fn loss_grad(a: &[f64], p: &[f64], n: &[f64], margin: f64, kind: DistanceKind, loss: LossKind) -> TripletGrad {
    let (dp, ga_p, gp) = distance_grad(a, p, kind);
    let (dn, ga_n, gn) = distance_grad(a, n, kind);
    let hinge = dp - dn + margin;
    match loss {
        LossKind::Triplet => {
            if hinge > 0.0 {
                TripletGrad {
                    loss: hinge,
                    hinge,
                    ga: ga_p.iter().zip(&ga_n).map(|(x, y)| x - y).collect(),
                    gp,
                    gn: gn.iter().map(|x| -x).collect(),
                }
            } else {
                let zero = vec![0.0; a.len()];
                TripletGrad {
                    loss: 0.0,
                    hinge,
                    ga: zero.clone(),
                    gp: zero.clone(),
                    gn: zero,
                }
            }
        }
        LossKind::Contrastive => {
            // Pair (a, p) is pulled together, pair (a, n) pushed past the margin.
            let pull = 2.0 * dp;
            let push = if dn < margin { -2.0 * (margin - dn) } else { 0.0 };
            TripletGrad {
                loss: dp * dp + (margin - dn).max(0.0).powi(2),
                hinge,
                ga: ga_p.iter().zip(&ga_n).map(|(x, y)| pull * x + push * y).collect(),
                gp: gp.iter().map(|x| pull * x).collect(),
                gn: gn.iter().map(|x| push * x).collect(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const E: DistanceKind = DistanceKind::Euclidean;

    #[test]
    fn triplet_loss_examples() {
        // Points on a line give d(a,p) and d(a,n) directly.
        let a = [0.0];
        assert_eq!(triplet_loss(&a, &[0.2], &[1.0], 0.5, E), 0.0);
        assert!((triplet_loss(&a, &[0.8], &[0.9], 0.5, E) - 0.4).abs() < 1e-12);
        assert_eq!(triplet_loss(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0], 0.3, E), 0.3);
    }

    #[test]
    fn contrastive_loss_examples() {
        assert_eq!(contrastive_loss(&[1.0, 1.0], &[1.0, 1.0], true, 0.5, E), 0.0);
        assert_eq!(contrastive_loss(&[0.0], &[0.7], false, 0.5, E), 0.0);
        assert!((contrastive_loss(&[0.0], &[0.3], false, 0.5, E) - 0.04).abs() < 1e-12);
    }

    #[test]
    fn cosine_distance_guards_zero_vectors() {
        assert_eq!(embedding_distance(&[0.0, 0.0], &[1.0, 0.0], DistanceKind::Cosine), 1.0);
        assert!(embedding_distance(&[2.0, 0.0], &[1.0, 0.0], DistanceKind::Cosine).abs() < 1e-12);
    }

    #[test]
    fn distance_gradients_match_finite_differences() {
        let u = [0.3, -0.7, 1.1];
        let v = [-0.2, 0.4, 0.9];
        for kind in [DistanceKind::Euclidean, DistanceKind::Cosine] {
            let (_, gu, gv) = distance_grad(&u, &v, kind);
            for i in 0..3 {
                let h = 1e-6;
                let mut up = u;
                up[i] += h;
                let mut um = u;
                um[i] -= h;
                let num = (embedding_distance(&up, &v, kind) - embedding_distance(&um, &v, kind)) / (2.0 * h);
                assert!((num - gu[i]).abs() < 1e-7, "{kind:?} u[{i}]");
                let mut vp = v;
                vp[i] += h;
                let mut vm = v;
                vm[i] -= h;
                let num = (embedding_distance(&u, &vp, kind) - embedding_distance(&u, &vm, kind)) / (2.0 * h);
                assert!((num - gv[i]).abs() < 1e-7, "{kind:?} v[{i}]");
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec3() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(-2.0f64..2.0, 3)
        }

        proptest! {
            #[test]
            fn triplet_loss_zero_iff_satisfied(a in vec3(), p in vec3(), n in vec3(), margin in 0.01f64..1.0) {
                let l = triplet_loss(&a, &p, &n, margin, E);
                prop_assert!(l >= 0.0);
                let satisfied = embedding_distance(&a, &n, E) >= embedding_distance(&a, &p, E) + margin;
                prop_assert_eq!(l == 0.0, satisfied);
            }

            #[test]
            fn unit_vectors_have_bounded_distances(a in vec3(), b in vec3()) {
                let unit = |v: &[f64]| {
                    let n = dot(v, v).sqrt();
                    v.iter().map(|x| x / n).collect::<Vec<_>>()
                };
                prop_assume!(dot(&a, &a) > 1e-6 && dot(&b, &b) > 1e-6);
                let (ua, ub) = (unit(&a), unit(&b));
                prop_assert!(embedding_distance(&ua, &ub, E) <= 2.0 + 1e-12);
                prop_assert!(embedding_distance(&ua, &ub, DistanceKind::Cosine) <= 2.0 + 1e-12);
            }
        }
    }
}
