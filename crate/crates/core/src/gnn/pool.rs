//! Pooling operators between GNN layers.
//!
//! * graphon pooling: fine node `j` of an `N`-node layer maps to the coarse
//!   node whose unit-interval cell contains the fine midpoint `(j + 0.5) / N`;
//! * selection: keep a fixed subset of rows (the zero-padding baseline);
//! * heavy-edge matching: greedy coarsening of the graph itself, used by the
//!   coarsening baseline. This is a simplified stand-in for multilevel
//!   Graclus-style coarsening.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::graphgen::Graph;
use crate::graphon::Partition;

use super::FeatureMatrix;

/// How a group of fine nodes is reduced to one coarse value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Summarizer {
    #[default]
    Mean,
    Max,
    /// Value of the lowest-index member (plain subsampling, for ablations).
    First,
}

/// Fine-to-coarse map of graphon pooling: `floor((2j + 1) N_c / (2 N_f))`,
/// evaluated in integer arithmetic.
pub fn graphon_assignment(n_fine: usize, n_coarse: usize) -> Result<Vec<usize>> {
    if n_coarse == 0 || n_coarse > n_fine {
        return Err(invalid(format!(
            "graphon pooling cannot map {n_fine} nodes onto {n_coarse}"
        )));
    }
    Ok((0..n_fine)
        .map(|j| ((2 * j + 1) * n_coarse) / (2 * n_fine))
        .collect())
}

/// Pools `z` from `N_{l-1}` to `target` rows by interval membership.
pub fn graphon_pool(
    z: &FeatureMatrix,
    target: usize,
    summarizer: Summarizer,
) -> Result<FeatureMatrix> {
    let assignment = graphon_assignment(z.nrows(), target)?;
    Ok(group_forward(z, &assignment, target, summarizer).0)
}

/// Rows of `z` at `kept` (ascending, distinct, in range).
pub fn selection_pool(z: &FeatureMatrix, kept: &[usize]) -> Result<FeatureMatrix> {
    validate_kept(kept, z.nrows())?;
    Ok(select_rows(z, kept))
}

pub(crate) fn validate_kept(kept: &[usize], n: usize) -> Result<()> {
    if kept.is_empty() {
        return Err(invalid("selection keeps no nodes"));
    }
    if kept.windows(2).any(|w| w[0] >= w[1]) || kept.last().is_some_and(|&k| k >= n) {
        return Err(invalid(format!(
            "kept nodes must be strictly increasing indices below {n}"
        )));
    }
    Ok(())
}

pub(crate) fn select_rows(z: &FeatureMatrix, rows: &[usize]) -> FeatureMatrix {
    DMatrix::from_fn(rows.len(), z.ncols(), |r, c| z[(rows[r], c)])
}

/// The `count` highest-degree nodes of `g`, ties broken by lower index,
/// returned in ascending node order.
pub fn top_degree_nodes(g: &Graph, count: usize) -> Vec<usize> {
    let deg = g.degrees();
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| deg[b].total_cmp(&deg[a]).then(a.cmp(&b)));
    let mut kept = order[..count.min(order.len())].to_vec();
    kept.sort_unstable();
    kept
}

/// Reduces each group of rows; also returns, for `Max` and `First`, the
/// source row chosen for every (group, feature) entry in row-major order.
pub(crate) fn group_forward(
    z: &FeatureMatrix,
    assignment: &[usize],
    groups: usize,
    summarizer: Summarizer,
) -> (FeatureMatrix, Vec<usize>) {
    let f = z.ncols();
    match summarizer {
        Summarizer::Mean => {
            let mut out = DMatrix::zeros(groups, f);
            let mut counts = vec![0usize; groups];
            for (j, &g) in assignment.iter().enumerate() {
                counts[g] += 1;
                for c in 0..f {
                    out[(g, c)] += z[(j, c)];
                }
            }
            for (g, &n) in counts.iter().enumerate() {
                for c in 0..f {
                    out[(g, c)] /= n as f64;
                }
            }
            (out, Vec::new())
        }
        Summarizer::Max | Summarizer::First => {
            let mut arg = vec![usize::MAX; groups * f];
            for (j, &g) in assignment.iter().enumerate() {
                for c in 0..f {
                    let slot = &mut arg[g * f + c];
                    let take = *slot == usize::MAX
                        || (summarizer == Summarizer::Max && z[(j, c)] > z[(*slot, c)]);
                    if take {
                        *slot = j;
                    }
                }
            }
            let out = DMatrix::from_fn(groups, f, |g, c| z[(arg[g * f + c], c)]);
            (out, arg)
        }
    }
}

pub(crate) fn group_backward(
    grad: &FeatureMatrix,
    assignment: &[usize],
    summarizer: Summarizer,
    arg: &[usize],
) -> FeatureMatrix {
    let f = grad.ncols();
    let mut out = DMatrix::zeros(assignment.len(), f);
    match summarizer {
        Summarizer::Mean => {
            let mut counts = vec![0usize; grad.nrows()];
            for &g in assignment {
                counts[g] += 1;
            }
            for (j, &g) in assignment.iter().enumerate() {
                let scale = 1.0 / counts[g] as f64;
                for c in 0..f {
                    out[(j, c)] = grad[(g, c)] * scale;
                }
            }
        }
        Summarizer::Max | Summarizer::First => {
            for g in 0..grad.nrows() {
                for c in 0..f {
                    out[(arg[g * f + c], c)] += grad[(g, c)];
                }
            }
        }
    }
    out
}

/// Greedy heavy-edge matching coarsening of `g` down to `target` nodes.
///
/// Each pass sorts the remaining edges by weight (ties broken by a
/// seed-dependent node permutation) and merges unmatched endpoint pairs until
/// the target count is met; passes repeat on the coarsened graph. If no edge
/// is left while nodes remain above target, consecutive singletons are
/// merged in index order. Coarse weights are sums of the fine weights
/// between groups; coarse nodes are numbered by their lowest fine member.
pub fn coarsen_hem(g: &Graph, target: usize, seed: u64) -> Result<(Graph, Vec<usize>)> {
    if target == 0 {
        return Err(invalid("coarsening target must be at least 1"));
    }
    if target > g.len() {
        return Err(invalid(format!(
            "cannot coarsen {} nodes up to {target}",
            g.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shift = g.shift().clone();
    let mut assignment: Vec<usize> = (0..g.len()).collect();

    while shift.nrows() > target {
        let n = shift.nrows();
        let needed = n - target;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut edges: Vec<(f64, usize, usize)> = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if shift[(i, j)] > 0.0 {
                    edges.push((shift[(i, j)], i, j));
                }
            }
        }
        let key = |i: usize, j: usize| (perm[i].min(perm[j]), perm[i].max(perm[j]));
        edges.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| key(a.1, a.2).cmp(&key(b.1, b.2))));

        let mut partner: Vec<Option<usize>> = vec![None; n];
        let mut merges = 0;
        for &(_, i, j) in &edges {
            if merges == needed {
                break;
            }
            if partner[i].is_none() && partner[j].is_none() {
                partner[i] = Some(j);
                partner[j] = Some(i);
                merges += 1;
            }
        }
        if merges == 0 {
            let mut i = 0;
            while merges < needed && i + 1 < n {
                partner[i] = Some(i + 1);
                partner[i + 1] = Some(i);
                merges += 1;
                i += 2;
            }
        }

        // number groups by their lowest member
        let mut group = vec![usize::MAX; n];
        let mut count = 0;
        for i in 0..n {
            if group[i] == usize::MAX {
                group[i] = count;
                if let Some(p) = partner[i] {
                    group[p] = count;
                }
                count += 1;
            }
        }
        let mut coarse = DMatrix::zeros(count, count);
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (group[i], group[j]);
                if a != b {
                    let (lo, hi) = (a.min(b), a.max(b));
                    coarse[(lo, hi)] += shift[(i, j)];
                }
            }
        }
        for a in 0..count {
            for b in (a + 1)..count {
                coarse[(b, a)] = coarse[(a, b)];
            }
        }
        for v in assignment.iter_mut() {
            *v = group[*v];
        }
        shift = coarse;
    }

    let grid = Partition::uniform(shift.nrows())?;
    Ok((Graph::new(shift, grid, g.provenance())?, assignment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column(values: &[f64]) -> FeatureMatrix {
        DMatrix::from_column_slice(values.len(), 1, values)
    }

    #[test]
    fn graphon_pool_examples() {
        let z = column(&[1.0, 3.0, 5.0, 7.0]);
        assert_eq!(graphon_pool(&z, 4, Summarizer::Mean).unwrap(), z);
        assert_eq!(
            graphon_pool(&z, 2, Summarizer::Mean).unwrap().as_slice(),
            &[2.0, 6.0]
        );
        assert_eq!(
            graphon_pool(&z, 2, Summarizer::Max).unwrap().as_slice(),
            &[3.0, 7.0]
        );
        assert_eq!(
            graphon_pool(&z, 2, Summarizer::First).unwrap().as_slice(),
            &[1.0, 5.0]
        );
    }

    #[test]
    fn graphon_pool_boundary_midpoint() {
        // midpoints 0.1 0.3 0.5 0.7 0.9 against cells [0, .5) and [.5, 1]:
        // the midpoint 0.5 opens the second cell
        assert_eq!(graphon_assignment(5, 2).unwrap(), vec![0, 0, 1, 1, 1]);
        let z = column(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(
            graphon_pool(&z, 2, Summarizer::Mean).unwrap().as_slice(),
            &[1.5, 4.0]
        );
    }

    #[test]
    fn graphon_pool_rejects_upsampling() {
        let z = column(&[1.0, 2.0]);
        assert!(graphon_pool(&z, 3, Summarizer::Mean).is_err());
        assert!(graphon_pool(&z, 0, Summarizer::Mean).is_err());
    }

    #[test]
    fn selection_examples() {
        let z = column(&[1.0, 2.0, 3.0]);
        assert_eq!(selection_pool(&z, &[0, 1, 2]).unwrap(), z);
        assert_eq!(selection_pool(&z, &[0, 2]).unwrap().as_slice(), &[1.0, 3.0]);
        assert!(selection_pool(&z, &[2, 0]).is_err());
        assert!(selection_pool(&z, &[3]).is_err());
        assert!(selection_pool(&z, &[]).is_err());
    }

    #[test]
    fn star_keeps_center() {
        let mut s = DMatrix::zeros(5, 5);
        for leaf in [0, 1, 3, 4] {
            s[(2, leaf)] = 1.0;
            s[(leaf, 2)] = 1.0;
        }
        let g = Graph::from_adjacency(s).unwrap();
        assert_eq!(top_degree_nodes(&g, 1), vec![2]);
        // ties among leaves go to lower indices
        assert_eq!(top_degree_nodes(&g, 3), vec![0, 1, 2]);
        let z = column(&[10.0, 11.0, 12.0, 13.0, 14.0]);
        assert_eq!(selection_pool(&z, &top_degree_nodes(&g, 1)).unwrap().as_slice(), &[12.0]);
    }

    #[test]
    fn coarsen_identity_and_pair() {
        let s = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 1.0, 0.0, 0.5, 2.0, 0.5, 0.0]);
        let g = Graph::from_adjacency(s.clone()).unwrap();
        let (same, assign) = coarsen_hem(&g, 3, 0).unwrap();
        assert_eq!(same.shift(), &s);
        assert_eq!(assign, vec![0, 1, 2]);

        let pair = Graph::from_adjacency(DMatrix::from_row_slice(2, 2, &[0.0, 0.7, 0.7, 0.0])).unwrap();
        let (one, assign) = coarsen_hem(&pair, 1, 4).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(assign, vec![0, 0]);
        assert_eq!(one.shift()[(0, 0)], 0.0);
        assert!(coarsen_hem(&pair, 0, 0).is_err());
    }

    #[test]
    fn coarsen_triangle_merges_heaviest() {
        // edges (0,1)=3, (1,2)=2, (0,2)=1
        let s = DMatrix::from_row_slice(3, 3, &[0.0, 3.0, 1.0, 3.0, 0.0, 2.0, 1.0, 2.0, 0.0]);
        let g = Graph::from_adjacency(s).unwrap();
        for seed in 0..10 {
            let (c, assign) = coarsen_hem(&g, 2, seed).unwrap();
            assert_eq!(assign, vec![0, 0, 1]);
            assert_eq!(c.shift()[(0, 1)], 3.0);
        }
    }

    #[test]
    fn coarsen_edgeless_graph_still_reaches_target() {
        let g = Graph::from_adjacency(DMatrix::zeros(7, 7)).unwrap();
        let (c, assign) = coarsen_hem(&g, 2, 1).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(assign.len(), 7);
        assert!(assign.iter().all(|&a| a < 2));
    }

    #[test]
    fn mean_backward_spreads_uniformly() {
        let assignment = [0, 0, 1, 1, 1];
        let grad = DMatrix::from_column_slice(2, 1, &[3.0, 6.0]);
        let back = group_backward(&grad, &assignment, Summarizer::Mean, &[]);
        assert_eq!(back.as_slice(), &[1.5, 1.5, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn max_ties_take_first_index() {
        let z = column(&[2.0, 2.0, 1.0]);
        let (out, arg) = group_forward(&z, &[0, 0, 0], 1, Summarizer::Max);
        assert_eq!(out[(0, 0)], 2.0);
        assert_eq!(arg, vec![0]);
    }

    proptest! {
        #[test]
        fn graphon_assignment_is_contiguous_partition(nf in 1usize..300, frac in 0.0f64..1.0) {
            let nc = 1 + ((nf - 1) as f64 * frac) as usize;
            let a = graphon_assignment(nf, nc).unwrap();
            prop_assert_eq!(a.len(), nf);
            prop_assert_eq!(a[0], 0);
            prop_assert_eq!(*a.last().unwrap(), nc - 1);
            // non-decreasing with unit steps: contiguous, every group non-empty
            prop_assert!(a.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
            // membership agrees with the real-valued midpoint rule
            for (j, &i) in a.iter().enumerate() {
                let mid = (j as f64 + 0.5) / nf as f64;
                prop_assert!(i as f64 / nc as f64 <= mid + 1e-12);
                prop_assert!(mid < (i + 1) as f64 / nc as f64 + 1e-12);
            }
        }

        #[test]
        fn coarsening_preserves_total_cross_weight(n in 2usize..25, frac in 0.0f64..1.0, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.gen_bool(0.5) {
                        let w: f64 = rng.gen();
                        s[(i, j)] = w;
                        s[(j, i)] = w;
                    }
                }
            }
            let target = 1 + ((n - 1) as f64 * frac) as usize;
            let g = Graph::from_adjacency(s.clone()).unwrap();
            let (c, assign) = coarsen_hem(&g, target, seed).unwrap();
            prop_assert_eq!(c.len(), target);
            let mut cross = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if assign[i] != assign[j] {
                        cross += s[(i, j)];
                    }
                }
            }
            prop_assert!((c.shift().sum() - cross).abs() < 1e-9);
        }
    }
}
