//! Choosing which matched instance to guide the hand to.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::product_map::ProductInstance;

#[derive(Debug, thiserror::Error)]
pub enum ScoringError {
    #[error("no instances to score")]
    EmptyInput,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SelectionMode {
    /// Nearest cluster, then top level, then similarity, then lowest id.
    Lexicographic,
    /// Lowest `distance - top_weight * top_level - similarity_weight * similarity`.
    Weighted {
        top_weight: f64,
        similarity_weight: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    /// Single-linkage distance, meters.
    pub link_threshold: f64,
    /// Tops within this distance of the cluster's highest top count as top level.
    pub top_level_band: f64,
    pub mode: SelectionMode,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            link_threshold: 0.12,
            top_level_band: 0.05,
            mode: SelectionMode::Lexicographic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreComponents {
    /// Hand to cluster centroid, meters.
    pub cluster_distance: f64,
    pub top_level: bool,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredTarget {
    pub instance_id: u64,
    pub cluster_id: u64,
    pub position: [f64; 3],
    pub components: ScoreComponents,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Single-linkage clusters; each instance gets the lowest member id of its cluster.
pub fn cluster(
    instances: &[ProductInstance],
    link_threshold: f64,
) -> Result<Vec<u64>, ScoringError> {
    if instances.is_empty() {
        return Err(ScoringError::EmptyInput);
    }
    let n = instances.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if (instances[i].position() - instances[j].position()).norm() <= link_threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    Ok(roots
        .iter()
        .map(|&r| {
            (0..n)
                .filter(|&k| roots[k] == r)
                .map(|k| instances[k].id)
                .min()
                .expect("cluster has a member")
        })
        .collect())
}

pub fn select_best(
    instances: &[ProductInstance],
    hand: &Vector3<f64>,
    config: &ScoringConfig,
) -> Result<ScoredTarget, ScoringError> {
    let labels = cluster(instances, config.link_threshold)?;
    let mut clusters: Vec<u64> = labels.clone();
    clusters.sort_unstable();
    clusters.dedup();

    let lab = &labels;
    let members = |c: u64| (0..instances.len()).filter(move |&k| lab[k] == c);
    let centroid_distance = |c: u64| {
        let (sum, n) = members(c).fold((Vector3::zeros(), 0.0), |(s, n), k| {
            (s + instances[k].position(), n + 1.0)
        });
        (sum / n - hand).norm()
    };
    let candidates: Vec<(usize, ScoreComponents)> = clusters
        .iter()
        .flat_map(|&c| {
            let dist = centroid_distance(c);
            let max_top = members(c)
                .map(|k| instances[k].top())
                .fold(f64::NEG_INFINITY, f64::max);
            members(c)
                .map(|k| {
                    (
                        k,
                        ScoreComponents {
                            cluster_distance: dist,
                            top_level: instances[k].top() >= max_top - config.top_level_band,
                            similarity: instances[k].rolling_similarity,
                        },
                    )
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let id = |k: usize| instances[k].id;
    let best = match config.mode {
        SelectionMode::Lexicographic => candidates.iter().min_by(|(a, sa), (b, sb)| {
            sa.cluster_distance
                .total_cmp(&sb.cluster_distance)
                .then(labels[*a].cmp(&labels[*b]))
                .then(sb.top_level.cmp(&sa.top_level))
                .then(sb.similarity.total_cmp(&sa.similarity))
                .then(id(*a).cmp(&id(*b)))
        }),
        SelectionMode::Weighted {
            top_weight,
            similarity_weight,
        } => {
            let score = |s: &ScoreComponents| {
                s.cluster_distance
                    - top_weight * s.top_level as u8 as f64
                    - similarity_weight * s.similarity
            };
            candidates.iter().min_by(|(a, sa), (b, sb)| {
                score(sa).total_cmp(&score(sb)).then(id(*a).cmp(&id(*b)))
            })
        }
    }
    .expect("non-empty");
    let (k, components) = *best;
    let inst = &instances[k];
    Ok(ScoredTarget {
        instance_id: inst.id,
        cluster_id: labels[k],
        position: [inst.x_g, inst.y_g, inst.z_g],
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::product_map::Observation;
    use proptest::prelude::*;

    fn inst(id: u64, x: f64, y: f64, z: f64, sim: f64) -> ProductInstance {
        ProductInstance::new(
            id,
            Observation {
                pose: [x, y, z, 0.08, 0.2],
                similarity: sim,
            },
            0.0,
        )
    }

    #[test]
    fn clustering_examples() {
        let near = [inst(0, 0.0, 1.0, 1.0, 0.9), inst(1, 0.05, 1.0, 1.0, 0.9)];
        assert_eq!(cluster(&near, 0.12).unwrap(), vec![0, 0]);
        let apart = [inst(0, 0.0, 1.0, 1.0, 0.9), inst(1, 0.5, 1.0, 1.0, 0.9)];
        assert_eq!(cluster(&apart, 0.12).unwrap(), vec![0, 1]);
        let chain: Vec<_> = (0..5)
            .map(|i| inst(9 - i, i as f64 * 0.10, 1.0, 1.0, 0.9))
            .collect();
        assert_eq!(cluster(&chain, 0.12).unwrap(), vec![5; 5]);
        assert!(matches!(cluster(&[], 0.12), Err(ScoringError::EmptyInput)));
    }

    fn sized(id: u64, x: f64, y: f64, h: f64, sim: f64) -> ProductInstance {
        ProductInstance::new(
            id,
            Observation {
                pose: [x, y, 1.0, 0.08, h],
                similarity: sim,
            },
            0.0,
        )
    }

    /// Two clusters, hand nearer A; A is two columns of small boxes stacked two high.
    fn two_cluster_scene() -> (Vec<ProductInstance>, Vector3<f64>) {
        let all = vec![
            sized(1, 0.9, 1.40, 0.2, 0.99),
            sized(2, 1.0, 1.40, 0.2, 0.99),
            sized(3, 0.0, 1.35, 0.1, 0.80),
            sized(4, 0.0, 1.45, 0.1, 0.70),
            sized(5, 0.1, 1.35, 0.1, 0.95),
            sized(6, 0.1, 1.45, 0.1, 0.75),
        ];
        (all, Vector3::new(-0.3, 1.3, 1.0))
    }

    #[test]
    fn prefers_nearest_cluster_then_top_level() {
        let (all, hand) = two_cluster_scene();
        let cfg = ScoringConfig::default();
        assert_eq!(
            cluster(&all, cfg.link_threshold).unwrap(),
            vec![1, 1, 3, 3, 3, 3]
        );
        let t = select_best(&all, &hand, &cfg).unwrap();
        assert_eq!(t.cluster_id, 3);
        assert_eq!(t.instance_id, 6);
        assert!(t.components.top_level);
    }

    #[test]
    fn stacked_pair_takes_the_upper_one() {
        // centers 0.3 apart: one cluster only with a wider link
        let pair = [
            sized(0, 0.0, 1.10, 0.2, 0.99),
            sized(1, 0.0, 1.40, 0.2, 0.7),
        ];
        let cfg = ScoringConfig {
            link_threshold: 0.35,
            ..ScoringConfig::default()
        };
        let t = select_best(&pair, &Vector3::zeros(), &cfg).unwrap();
        assert_eq!(t.instance_id, 1);
    }

    #[test]
    fn single_instance() {
        let one = [inst(7, 0.2, 0.3, 0.4, 0.6)];
        assert_eq!(
            select_best(&one, &Vector3::zeros(), &ScoringConfig::default())
                .unwrap()
                .instance_id,
            7
        );
    }

    #[test]
    fn weighted_mode_can_trade_distance_for_similarity() {
        let two = [inst(0, 0.0, 1.0, 1.0, 0.61), inst(1, 0.3, 1.0, 1.0, 0.99)];
        let hand = Vector3::new(0.14, 1.0, 1.0);
        let lex = select_best(&two, &hand, &ScoringConfig::default()).unwrap();
        assert_eq!(lex.instance_id, 0);
        let cfg = ScoringConfig {
            mode: SelectionMode::Weighted {
                top_weight: 0.0,
                similarity_weight: 1.0,
            },
            ..ScoringConfig::default()
        };
        assert_eq!(select_best(&two, &hand, &cfg).unwrap().instance_id, 1);
    }

    fn translated(all: &[ProductInstance], d: &Vector3<f64>) -> Vec<ProductInstance> {
        all.iter()
            .map(|i| {
                let mut j = i.clone();
                j.x_g += d.x;
                j.y_g += d.y;
                j.z_g += d.z;
                j
            })
            .collect()
    }

    proptest! {
        #[test]
        fn invariant_under_translation(dx in -5.0f64..5.0, dy in -5.0f64..5.0, dz in -5.0f64..5.0) {
            let (all, hand) = two_cluster_scene();
            let d = Vector3::new(dx, dy, dz);
            let a = select_best(&all, &hand, &ScoringConfig::default()).unwrap();
            let b = select_best(&translated(&all, &d), &(hand + d), &ScoringConfig::default()).unwrap();
            prop_assert_eq!(a.instance_id, b.instance_id);
            prop_assert_eq!(a.cluster_id, b.cluster_id);
        }

        #[test]
        fn selection_is_in_the_nearest_cluster(
            pts in proptest::collection::vec((-1.0f64..1.0, 0.5f64..2.0, 0.5f64..1.5, 0.6f64..1.0), 1..15),
            hx in -1.0f64..1.0, hy in 0.5f64..2.0,
        ) {
            let all: Vec<_> = pts.iter().enumerate().map(|(i, p)| inst(i as u64, p.0, p.1, p.2, p.3)).collect();
            let hand = Vector3::new(hx, hy, 0.0);
            let cfg = ScoringConfig::default();
            let t = select_best(&all, &hand, &cfg).unwrap();
            let labels = cluster(&all, cfg.link_threshold).unwrap();
            let mut best = f64::INFINITY;
            for &c in &labels {
                let m: Vec<_> = all.iter().zip(&labels).filter(|(_, l)| **l == c).map(|(i, _)| i.position()).collect();
                let cen = m.iter().fold(Vector3::zeros(), |s, p| s + p) / m.len() as f64;
                best = best.min((cen - hand).norm());
            }
            prop_assert!((t.components.cluster_distance - best).abs() < 1e-12);
        }

        #[test]
        fn removing_an_isolated_instance_keeps_selection(
            pts in proptest::collection::vec((-1.0f64..1.0, 0.5f64..2.0, 0.6f64..1.0), 2..12),
            drop in 0usize..12,
        ) {
            let all: Vec<_> = pts.iter().enumerate().map(|(i, p)| inst(i as u64, p.0, p.1, 1.0, p.2)).collect();
            let hand = Vector3::new(0.0, 1.0, 0.0);
            let cfg = ScoringConfig::default();
            let t = select_best(&all, &hand, &cfg).unwrap();
            let drop = drop % all.len();
            let labels = cluster(&all, cfg.link_threshold).unwrap();
            prop_assume!(all[drop].id != t.instance_id);
            prop_assume!(labels.iter().filter(|&&l| l == labels[drop]).count() == 1);
            let rest: Vec<_> = all.iter().enumerate().filter(|(k, _)| *k != drop).map(|(_, i)| i.clone()).collect();
            prop_assert_eq!(select_best(&rest, &hand, &cfg).unwrap().instance_id, t.instance_id);
        }
    }
}
