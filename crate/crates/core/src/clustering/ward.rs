//! Ward-linkage agglomeration and flat cuts.

use serde::{Deserialize, Serialize};

use super::ClusterError;

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Smaller node id of the pair.
    pub left: usize,
    pub right: usize,
    pub height: f64,
    /// Leaves under the new node.
    pub size: usize,
}

/// Leaves are `0..n`; the node created by merge `i` has id `n + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn heights(&self) -> impl Iterator<Item = f64> + '_ {
        self.merges.iter().map(|m| m.height)
    }
}

/// Agglomerates `points` under Ward's minimum-variance criterion.
///
/// Works on squared Euclidean dissimilarities with the Lance–Williams
/// update and reports heights as `sqrt(2 * ΔSSE)`, the ward.D2 scale, so a
/// merge of two singletons sits at their Euclidean distance. Among equal
/// costs the pair with the lexicographically smallest `(min id, max id)` is
/// merged first.
pub fn ward_cluster<P: AsRef<[f64]>>(points: &[P]) -> Result<Dendrogram, ClusterError> {
    let n = points.len();
    if n < 2 {
        return Err(ClusterError::InsufficientData { needed: 2, got: n });
    }
    let dim = points[0].as_ref().len();
    for p in points {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(ClusterError::DimensionMismatch);
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(ClusterError::NonFinite);
        }
    }

    // Full matrix of squared distances indexed by slot; a merged cluster
    // reuses the smaller slot of its pair.
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean(points[i].as_ref(), points[j].as_ref());
            dist[i * n + j] = d * d;
            dist[j * n + i] = d * d;
        }
    }
    let mut id: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut active: Vec<usize> = (0..n).collect();
    // best[s]: nearest partner among active slots whose id exceeds id[s].
    let mut best: Vec<Option<(f64, usize)>> = vec![None; n];

    let row_best =
        |s: usize, active: &[usize], id: &[usize], dist: &[f64]| -> Option<(f64, usize)> {
            let mut out: Option<(f64, usize)> = None;
            for &t in active {
                if id[t] <= id[s] {
                    continue;
                }
                let d = dist[s * n + t];
                let better = match out {
                    None => true,
                    Some((bd, bt)) => d < bd || (d == bd && id[t] < id[bt]),
                };
                if better {
                    out = Some((d, t));
                }
            }
            out
        };
    for &s in &active {
        best[s] = row_best(s, &active, &id, &dist);
    }

    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..(n - 1) {
        let (mut sa, mut sb, mut dmin) = (usize::MAX, usize::MAX, f64::INFINITY);
        for &s in &active {
            if let Some((d, t)) = best[s] {
                let better = sa == usize::MAX
                    || d < dmin
                    || (d == dmin && (id[s], id[t]) < (id[sa], id[sb]));
                if better {
                    (sa, sb, dmin) = (s, t, d);
                }
            }
        }
        let (na, nb) = (size[sa], size[sb]);
        merges.push(Merge {
            left: id[sa].min(id[sb]),
            right: id[sa].max(id[sb]),
            height: dmin.max(0.0).sqrt(),
            size: na + nb,
        });

        let keep = sa.min(sb);
        let gone = sa.max(sb);
        active.retain(|&s| s != gone);
        for &k in &active {
            if k == keep {
                continue;
            }
            let nk = size[k];
            let d_ka = dist[k * n + sa];
            let d_kb = dist[k * n + sb];
            let updated = ((nk + na) as f64 * d_ka + (nk + nb) as f64 * d_kb - nk as f64 * dmin)
                / (nk + na + nb) as f64;
            let updated = updated.max(0.0);
            dist[k * n + keep] = updated;
            dist[keep * n + k] = updated;
        }
        size[keep] = na + nb;
        id[keep] = n + step;
        best[keep] = None;
        best[gone] = None;

        // The new node has the largest id, so it only enters other rows.
        for &k in &active {
            if k == keep {
                continue;
            }
            match best[k] {
                Some((_, t)) if t == sa || t == sb => best[k] = row_best(k, &active, &id, &dist),
                Some((d, _)) => {
                    let dn = dist[k * n + keep];
                    if dn < d {
                        best[k] = Some((dn, keep));
                    }
                }
                None => best[k] = row_best(k, &active, &id, &dist),
            }
        }
    }
    Ok(Dendrogram {
        n_leaves: n,
        merges,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cut {
    /// Keep exactly this many clusters.
    Clusters(usize),
    /// Undo every merge above this height.
    Height(f64),
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.0[root] != root {
            root = self.0[root];
        }
        let mut cur = x;
        while self.0[cur] != root {
            let next = self.0[cur];
            self.0[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Applies the merges selected by `keep` and numbers the resulting
/// clusters 1.. in order of their lowest member.
fn flatten(d: &Dendrogram, keep: impl Fn(usize, &Merge) -> bool) -> Vec<usize> {
    let n = d.n_leaves;
    let mut uf = UnionFind::new(n);
    // representative leaf of each node id
    let mut leaf_of: Vec<usize> = (0..n).collect();
    for (i, m) in d.merges.iter().enumerate() {
        let (a, b) = (leaf_of[m.left], leaf_of[m.right]);
        if keep(i, m) {
            uf.union(a, b);
        }
        leaf_of.push(a.min(b));
    }
    let mut label_of_root = vec![0usize; n];
    let mut next = 0;
    (0..n)
        .map(|i| {
            let r = uf.find(i);
            if label_of_root[r] == 0 {
                next += 1;
                label_of_root[r] = next;
            }
            label_of_root[r]
        })
        .collect()
}

/// Flat cluster assignment; entry `i` is the 1-based cluster of leaf `i`.
pub fn cut_dendrogram(d: &Dendrogram, cut: Cut) -> Result<Vec<usize>, ClusterError> {
    let n = d.n_leaves;
    match cut {
        Cut::Clusters(k) => {
            if k == 0 || k > n {
                return Err(ClusterError::InvalidK { k, n });
            }
            Ok(flatten(d, |i, _| i < n - k))
        }
        Cut::Height(h) => {
            if h.is_nan() || h < 0.0 {
                return Err(ClusterError::InvalidHeight(h));
            }
            Ok(flatten(d, |_, m| m.height <= h))
        }
    }
}

/// Like [`cut_dendrogram`] but never separates points joined at zero
/// height, so duplicates always share a cluster.
pub fn cut_effective(d: &Dendrogram, cut: Cut) -> Result<Vec<usize>, ClusterError> {
    let n = d.n_leaves;
    match cut {
        Cut::Clusters(k) => {
            if k == 0 || k > n {
                return Err(ClusterError::InvalidK { k, n });
            }
            Ok(flatten(d, |i, m| i < n - k || m.height <= 0.0))
        }
        Cut::Height(_) => cut_dendrogram(d, cut),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euclidean_examples() {
        let z = [0.0; 6];
        assert_eq!(euclidean(&z, &z), 0.0);
        assert_eq!(euclidean(&z, &[3.0, 4.0, 0.0, 0.0, 0.0, 0.0]), 5.0);
        assert!((euclidean(&[1.0; 6], &z) - 6f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn three_points_on_a_line() {
        let pts = [[0.0], [1.0], [10.0]];
        let d = ward_cluster(&pts).unwrap();
        assert_eq!(d.merges.len(), 2);
        assert_eq!((d.merges[0].left, d.merges[0].right), (0, 1));
        assert!((d.merges[0].height - 1.0).abs() < 1e-12);
        assert_eq!((d.merges[1].left, d.merges[1].right), (2, 3));
        // sqrt(2 * (2*1/3) * 9.5^2)
        assert!((d.merges[1].height - (361.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(d.merges[1].size, 3);
        assert_eq!(cut_dendrogram(&d, Cut::Clusters(2)).unwrap(), vec![1, 1, 2]);
        assert_eq!(cut_dendrogram(&d, Cut::Height(5.0)).unwrap(), vec![1, 1, 2]);
    }

    #[test]
    fn two_points_merge_at_their_distance() {
        let d = ward_cluster(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        assert_eq!(d.merges.len(), 1);
        assert!((d.merges[0].height - 5.0).abs() < 1e-12);
    }

    #[test]
    fn duplicates_merge_first_at_zero() {
        let d = ward_cluster(&[[5.0], [0.0], [9.0], [0.0]]).unwrap();
        assert_eq!((d.merges[0].left, d.merges[0].right), (1, 3));
        assert_eq!(d.merges[0].height, 0.0);
    }

    #[test]
    fn ties_break_on_smallest_ids() {
        // Equally spaced: (0,1) and (1,2) and (2,3) tie; (0,1) wins, then (2,3).
        let d = ward_cluster(&[[0.0], [1.0], [2.0], [3.0]]).unwrap();
        assert_eq!((d.merges[0].left, d.merges[0].right), (0, 1));
        assert_eq!((d.merges[1].left, d.merges[1].right), (2, 3));
        assert_eq!((d.merges[2].left, d.merges[2].right), (4, 5));
    }

    #[test]
    fn cut_extremes() {
        let pts = [[0.0], [4.0], [1.0], [9.0], [2.5]];
        let d = ward_cluster(&pts).unwrap();
        assert_eq!(
            cut_dendrogram(&d, Cut::Clusters(5)).unwrap(),
            vec![1, 2, 3, 4, 5]
        );
        assert_eq!(cut_dendrogram(&d, Cut::Clusters(1)).unwrap(), vec![1; 5]);
        assert!(matches!(
            cut_dendrogram(&d, Cut::Clusters(0)),
            Err(ClusterError::InvalidK { .. })
        ));
        assert!(matches!(
            cut_dendrogram(&d, Cut::Clusters(6)),
            Err(ClusterError::InvalidK { .. })
        ));
        assert!(matches!(
            cut_dendrogram(&d, Cut::Height(-1.0)),
            Err(ClusterError::InvalidHeight(_))
        ));
    }

    #[test]
    fn effective_cut_keeps_duplicates_together() {
        let pts = [[1.0, 2.0]; 6];
        let d = ward_cluster(&pts).unwrap();
        assert!(d.heights().all(|h| h == 0.0));
        assert_eq!(
            cut_dendrogram(&d, Cut::Clusters(3)).unwrap().iter().max(),
            Some(&3)
        );
        assert_eq!(cut_effective(&d, Cut::Clusters(3)).unwrap(), vec![1; 6]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            ward_cluster(&[[1.0]]),
            Err(ClusterError::InsufficientData { .. })
        ));
        assert!(matches!(
            ward_cluster(&[[1.0], [f64::NAN]]),
            Err(ClusterError::NonFinite)
        ));
        assert!(matches!(
            ward_cluster(&[vec![1.0], vec![1.0, 2.0]]),
            Err(ClusterError::DimensionMismatch)
        ));
    }
}
