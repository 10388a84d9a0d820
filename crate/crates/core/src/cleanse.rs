//! Ghost removal: Ward agglomerative clustering of pelvis positions within a
//! frame, keeping the best-scoring detection of every cluster.

use crate::linalg::{dist_sq, Vec3};
use crate::model::{pelvis, Detection, DetectionSequence, Frame, JointLayout};
use crate::scalar::Real;

/// One agglomeration step. Leaves are `0..n`; merge `i` creates cluster `n + i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge<T> {
    pub a: usize,
    pub b: usize,
    /// Ward distance in meters; equals the Euclidean distance for two singletons.
    pub height: T,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram<T> {
    leaves: usize,
    merges: Vec<Merge<T>>,
}

impl<T: Real> Dendrogram<T> {
    pub fn leaves(&self) -> usize {
        self.leaves
    }

    pub fn merges(&self) -> &[Merge<T>] {
        &self.merges
    }

    /// Flat cluster labels after applying every merge lower than `cut_height`.
    ///
    /// Labels are numbered in order of each cluster's lowest point index.
    pub fn cut(&self, cut_height: T) -> Vec<usize> {
        let n = self.leaves;
        let mut parent: Vec<usize> = (0..n + self.merges.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (i, m) in self.merges.iter().enumerate() {
            if m.height < cut_height {
                let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
                parent[ra] = n + i;
                parent[rb] = n + i;
            }
        }
        let mut label_of_root = std::collections::HashMap::new();
        (0..n)
            .map(|p| {
                let root = find(&mut parent, p);
                let next = label_of_root.len();
                *label_of_root.entry(root).or_insert(next)
            })
            .collect()
    }
}

/// Ward linkage through the Lance–Williams recurrence on squared distances.
///
/// Ties between equal distances go to the lowest pair of slot indices,
/// where a merged cluster keeps the lower slot of its two parts.
pub fn ward_linkage<T: Real>(points: &[Vec3<T>]) -> Dendrogram<T> {
    let n = points.len();
    let mut d2 = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = dist_sq(points[i], points[j]);
            d2[i * n + j] = v;
            d2[j * n + i] = v;
        }
    }
    let mut active: Vec<bool> = vec![true; n];
    let mut id: Vec<usize> = (0..n).collect();
    let mut size: Vec<usize> = vec![1; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(usize, usize, T)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if !active[j] {
                    continue;
                }
                let v = d2[i * n + j];
                if best.is_none_or(|(_, _, b)| v < b) {
                    best = Some((i, j, v));
                }
            }
        }
        let (i, j, dij) = best.expect("at least two active clusters");
        let (si, sj) = (T::from_count(size[i]), T::from_count(size[j]));
        for k in 0..n {
            if !active[k] || k == i || k == j {
                continue;
            }
            let sk = T::from_count(size[k]);
            let updated = ((si + sk) * d2[i * n + k] + (sj + sk) * d2[j * n + k] - sk * dij) / (si + sj + sk);
            let updated = updated.max(T::zero());
            d2[i * n + k] = updated;
            d2[k * n + i] = updated;
        }
        let (a, b) = if id[i] < id[j] { (id[i], id[j]) } else { (id[j], id[i]) };
        size[i] += size[j];
        merges.push(Merge { a, b, height: dij.sqrt(), size: size[i] });
        active[j] = false;
        id[i] = n + step;
    }
    Dendrogram { leaves: n, merges }
}

/// Flat Ward clusters of `points` cut at `cut_height`.
pub fn ward_cluster<T: Real>(points: &[Vec3<T>], cut_height: T) -> Vec<usize> {
    ward_linkage(points).cut(cut_height)
}

/// Indices of the detections that survive ghost removal, in input order.
pub fn surviving_indices<T: Real>(detections: &[Detection<T>], min_separation: T, layout: &JointLayout) -> Vec<usize> {
    let points: Vec<Vec3<T>> = detections.iter().map(|d| pelvis(&d.skeleton, layout)).collect();
    let labels = ward_cluster(&points, min_separation);
    let clusters = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut best: Vec<Option<usize>> = vec![None; clusters];
    for (i, &label) in labels.iter().enumerate() {
        match best[label] {
            Some(b) if detections[b].score >= detections[i].score => {}
            _ => best[label] = Some(i),
        }
    }
    let mut keep: Vec<usize> = best.into_iter().flatten().collect();
    keep.sort_unstable();
    keep
}

/// Keeps one detection per pelvis cluster: the highest score, lowest index on ties.
pub fn remove_ghosts<T: Real>(detections: &[Detection<T>], min_separation: T, layout: &JointLayout) -> Vec<Detection<T>> {
    surviving_indices(detections, min_separation, layout)
        .into_iter()
        .map(|i| detections[i].clone())
        .collect()
}

/// Applies [`remove_ghosts`] to every frame.
pub fn cleanse_sequence<T: Real>(seq: &DetectionSequence<T>, min_separation: T) -> DetectionSequence<T> {
    DetectionSequence {
        fps: seq.fps,
        width: seq.width,
        height: seq.height,
        layout: seq.layout.clone(),
        frames: seq
            .frames
            .iter()
            .map(|f| Frame { index: f.index, detections: remove_ghosts(&f.detections, min_separation, &seq.layout) })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Skeleton;
    use proptest::prelude::*;

    fn layout() -> JointLayout {
        JointLayout::new(1, 0, 0).unwrap()
    }

    fn det(p: [f64; 3], score: f64) -> Detection<f64> {
        Detection { skeleton: Skeleton { joints3d: vec![p], joints2d: vec![[0.0, 0.0]] }, score, body_params: None }
    }

    #[test]
    fn single_point_is_one_cluster() {
        assert_eq!(ward_cluster(&[[1.0, 2.0, 3.0]], 0.4), vec![0]);
        assert_eq!(ward_cluster::<f64>(&[], 0.4), Vec::<usize>::new());
    }

    #[test]
    fn far_pair_stays_apart() {
        assert_eq!(ward_cluster(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], 0.4), vec![0, 1]);
    }

    #[test]
    fn three_point_lance_williams_heights() {
        let pts = [[0.0, 0.0, 0.0], [0.2, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let d = ward_linkage(&pts);
        let m = d.merges();
        assert_eq!((m[0].a, m[0].b, m[0].size), (0, 1, 2));
        assert!((m[0].height - 0.2f64).abs() < 1e-12);
        // ((1+1)·2² + (1+1)·1.8² − 1·0.2²) / 3 under the root.
        let expected = ((2.0 * 4.0 + 2.0 * 3.24 - 0.04) / 3.0f64).sqrt();
        assert!((m[1].height - expected).abs() < 1e-12);
        assert!((m[1].height - 2.19).abs() < 5e-3);
        assert_eq!((m[1].a, m[1].b, m[1].size), (2, 3, 3));
        assert_eq!(d.cut(0.4), vec![0, 0, 1]);
    }

    #[test]
    fn coincident_points_merge_at_zero() {
        let d = ward_linkage(&[[1.0, 1.0, 1.0]; 3]);
        assert!(d.merges().iter().all(|m| m.height == 0.0));
        assert_eq!(d.cut(0.4), vec![0, 0, 0]);
    }

    #[test]
    fn f32_matches_f64() {
        let pts64 = [[0.0, 0.0, 0.0], [0.3, 0.1, 0.0], [1.5, 0.0, 0.2], [1.6, 0.0, 0.3]];
        let pts32: Vec<[f32; 3]> = pts64.iter().map(|p| p.map(|v| v as f32)).collect();
        assert_eq!(ward_cluster(&pts64, 0.4), ward_cluster(&pts32, 0.4f32));
    }

    #[test]
    fn close_pair_keeps_higher_score() {
        let d = [det([0.0, 0.0, 3.0], 0.7), det([0.2, 0.0, 3.0], 0.9)];
        let out = remove_ghosts(&d, 0.4, &layout());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.9);
    }

    #[test]
    fn distant_pair_both_survive() {
        let d = [det([0.0, 0.0, 3.0], 0.9), det([1.0, 0.0, 3.0], 0.7)];
        assert_eq!(remove_ghosts(&d, 0.4, &layout()).len(), 2);
    }

    #[test]
    fn equal_scores_keep_lowest_index() {
        let d = [det([0.0, 0.0, 3.0], 0.8), det([0.1, 0.0, 3.0], 0.8)];
        assert_eq!(surviving_indices(&d, 0.4, &layout()), vec![0]);
    }

    /// Every set partition of `0..n`, as block label vectors.
    fn partitions(n: usize) -> Vec<Vec<usize>> {
        fn rec(i: usize, n: usize, cur: &mut Vec<usize>, blocks: usize, out: &mut Vec<Vec<usize>>) {
            if i == n {
                out.push(cur.clone());
                return;
            }
            for b in 0..=blocks {
                cur.push(b);
                rec(i + 1, n, cur, blocks.max(b + 1), out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(0, n, &mut Vec::new(), 0, &mut out);
        out
    }

    #[test]
    fn ghost_frame_matches_partition_enumeration() {
        // Three dancers plus two ghosts offset by < 0.4 m with a 0.2 score penalty.
        let dets = vec![
            det([0.0, 0.9, 4.0], 0.92),
            det([1.5, 0.9, 5.0], 0.88),
            det([0.25, 0.9, 4.1], 0.72),
            det([-1.4, 0.9, 3.5], 0.95),
            det([-1.2, 0.95, 3.3], 0.75),
        ];
        let sep = 0.4;
        let pts: Vec<[f64; 3]> = dets.iter().map(|d| d.skeleton.joints3d[0]).collect();
        let all = partitions(dets.len());
        assert_eq!(all.len(), 52);
        // The separation-consistent partition: same block iff closer than `sep`.
        let consistent: Vec<&Vec<usize>> = all
            .iter()
            .filter(|labels| {
                (0..pts.len()).all(|i| {
                    (0..pts.len()).all(|j| {
                        let close = dist_sq(pts[i], pts[j]).sqrt() < sep;
                        (labels[i] == labels[j]) == close || i == j
                    })
                })
            })
            .collect();
        assert_eq!(consistent.len(), 1);
        let labels = consistent[0];
        let blocks = labels.iter().max().unwrap() + 1;
        let mut expected: Vec<usize> = (0..blocks)
            .map(|b| {
                (0..dets.len())
                    .filter(|&i| labels[i] == b)
                    .max_by(|&x, &y| dets[x].score.partial_cmp(&dets[y].score).unwrap().then(y.cmp(&x)))
                    .unwrap()
            })
            .collect();
        expected.sort_unstable();
        assert_eq!(expected, vec![0, 1, 3]);
        assert_eq!(surviving_indices(&dets, sep, &layout()), expected);
    }

    #[test]
    fn survivors_of_separate_clusters_can_be_close() {
        // {A, B} merge at 0.1; their Ward distance to C is 0.4·√(4/3) ≈ 0.46, so
        // C stays apart, yet the survivors B and C are only 0.35 m apart and a
        // second pass merges them.
        let dets = [det([0.0, 0.9, 0.0], 0.2), det([0.1, 0.9, 0.0], 0.9), det([0.45, 0.9, 0.0], 0.5)];
        let once = remove_ghosts(&dets, 0.4, &layout());
        assert_eq!(once.len(), 2);
        let twice = remove_ghosts(&once, 0.4, &layout());
        assert_eq!(twice.len(), 1);
        assert_eq!(twice[0].score, 0.9);
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection<f64>>> {
        proptest::collection::vec(((-2.0f64..2.0, -2.0f64..2.0), 0.0f64..1.0), 1..7).prop_map(|v| {
            v.into_iter().map(|((x, z), s)| det([x, 0.9, z], s)).collect()
        })
    }

    proptest! {
        #[test]
        fn removal_is_idempotent_on_separated_groups(
            centers in proptest::collection::vec((-6i32..6, -6i32..6), 1..5),
            offsets in proptest::collection::vec((0usize..5, -0.1f64..0.1, -0.1f64..0.1, 0.0f64..1.0), 0..8),
        ) {
            // Groups of diameter < 0.3 whose centers sit at least 1 m apart.
            let mut centers: Vec<(i32, i32)> = centers;
            centers.sort_unstable();
            centers.dedup();
            let mut dets: Vec<_> = centers.iter().map(|&(x, z)| det([x as f64, 0.9, z as f64], 0.5)).collect();
            for (g, dx, dz, s) in offsets {
                let (x, z) = centers[g % centers.len()];
                dets.push(det([x as f64 + dx, 0.9, z as f64 + dz], s));
            }
            let once = remove_ghosts(&dets, 0.4, &layout());
            prop_assert_eq!(once.len(), centers.len());
            prop_assert_eq!(remove_ghosts(&once, 0.4, &layout()), once);
        }

        #[test]
        fn removal_is_idempotent_for_pairs(a in (-1.0f64..1.0, -1.0f64..1.0), b in (-1.0f64..1.0, -1.0f64..1.0), s in 0.0f64..1.0) {
            let dets = [det([a.0, 0.9, a.1], s), det([b.0, 0.9, b.1], 0.5)];
            let once = remove_ghosts(&dets, 0.4, &layout());
            prop_assert_eq!(remove_ghosts(&once, 0.4, &layout()), once);
        }

        #[test]
        fn output_size_matches_cluster_count(dets in arb_dets()) {
            let pts: Vec<_> = dets.iter().map(|d| d.skeleton.joints3d[0]).collect();
            let clusters = ward_cluster(&pts, 0.4).into_iter().max().map_or(0, |m| m + 1);
            prop_assert_eq!(remove_ghosts(&dets, 0.4, &layout()).len(), clusters);
        }

        #[test]
        fn heights_never_decrease(dets in arb_dets()) {
            let pts: Vec<_> = dets.iter().map(|d| d.skeleton.joints3d[0]).collect();
            let d = ward_linkage(&pts);
            prop_assert_eq!(d.merges().len(), pts.len() - 1);
            for w in d.merges().windows(2) {
                prop_assert!(w[1].height >= w[0].height - 1e-12);
            }
            if let Some(last) = d.merges().last() {
                prop_assert_eq!(last.size, pts.len());
            }
        }

        #[test]
        fn surviving_pairs_are_separated(a in (-1.0f64..1.0, -1.0f64..1.0), b in (-1.0f64..1.0, -1.0f64..1.0)) {
            let dets = [det([a.0, 0.9, a.1], 0.6), det([b.0, 0.9, b.1], 0.5)];
            let out = remove_ghosts(&dets, 0.4, &layout());
            if out.len() == 2 {
                prop_assert!(dist_sq(out[0].skeleton.joints3d[0], out[1].skeleton.joints3d[0]).sqrt() >= 0.4);
            }
        }

        #[test]
        fn permutation_permutes_output(dets in arb_dets(), rot in 0usize..6) {
            // Distinct scores keep the tie-break out of the picture.
            let dets: Vec<_> = dets.into_iter().enumerate().map(|(i, mut d)| { d.score = 0.1 + 0.1 * i as f64; d }).collect();
            let mut rotated = dets.clone();
            rotated.rotate_left(rot % dets.len());
            let mut a: Vec<f64> = remove_ghosts(&dets, 0.4, &layout()).iter().map(|d| d.score).collect();
            let mut b: Vec<f64> = remove_ghosts(&rotated, 0.4, &layout()).iter().map(|d| d.score).collect();
            a.sort_by(|x, y| x.partial_cmp(y).unwrap());
            b.sort_by(|x, y| x.partial_cmp(y).unwrap());
            prop_assert_eq!(a, b);
        }
    }
}
