//! Scoring a result track set against generator truth.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::linalg::{dist, dot, sub, Vec3};
use crate::TrackSet;

/// Result and truth samples farther apart than this never match.
pub const MATCH_RADIUS: f64 = 0.5;
/// Above this many truth identities the id mapping is chosen greedily.
const EXHAUSTIVE_LIMIT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub id_consistency: f64,
    pub position_rmse: f64,
    pub track_count_error: i64,
    /// Result samples with no truth sample within the match radius.
    pub ghost_survivors: usize,
    /// Truth samples with no result sample within the match radius.
    pub missed_frames: usize,
    pub matched_samples: usize,
    pub result_samples: usize,
}

/// One matched pair: frame, result track index, truth track index, distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub frame: u32,
    pub result: usize,
    pub truth: usize,
    pub distance: f64,
}

fn by_frame(ts: &TrackSet) -> BTreeMap<u32, Vec<(usize, Vec3<f64>)>> {
    let mut out: BTreeMap<u32, Vec<(usize, Vec3<f64>)>> = BTreeMap::new();
    for (k, t) in ts.tracks.iter().enumerate() {
        if t.is_discarded() {
            continue;
        }
        for s in &t.samples {
            out.entry(s.frame).or_default().push((k, s.pelvis));
        }
    }
    out
}

/// Per-frame greedy global matching on world pelvis distance.
pub fn match_samples(result: &TrackSet, truth: &TrackSet) -> Vec<Match> {
    let (res, tru) = (by_frame(result), by_frame(truth));
    let mut out = Vec::new();
    for (&frame, rs) in &res {
        let Some(ts) = tru.get(&frame) else { continue };
        let mut pairs: Vec<Match> = Vec::new();
        for &(ri, rp) in rs {
            for &(ti, tp) in ts {
                let d = dist(rp, tp);
                if d <= MATCH_RADIUS {
                    pairs.push(Match { frame, result: ri, truth: ti, distance: d });
                }
            }
        }
        pairs.sort_by(|a, b| {
            a.distance.partial_cmp(&b.distance).unwrap_or(Ordering::Equal).then(a.result.cmp(&b.result)).then(a.truth.cmp(&b.truth))
        });
        let (mut used_r, mut used_t) = (Vec::new(), Vec::new());
        for p in pairs {
            if !used_r.contains(&p.result) && !used_t.contains(&p.truth) {
                used_r.push(p.result);
                used_t.push(p.truth);
                out.push(p);
            }
        }
    }
    out
}

/// Injective map from result tracks to truth tracks maximizing total count.
/// Exact (subset dynamic programming) up to the exhaustive limit, greedy above.
fn best_mapping(counts: &BTreeMap<(usize, usize), usize>, results: &[usize], truths: usize) -> usize {
    let count = |r: usize, t: usize| counts.get(&(r, t)).copied().unwrap_or(0);
    if truths <= EXHAUSTIVE_LIMIT {
        let full = 1usize << truths;
        let mut dp = vec![0usize; full];
        for &r in results {
            let mut next = dp.clone();
            for mask in 0..full {
                for t in 0..truths {
                    if mask & (1 << t) == 0 {
                        let m = mask | (1 << t);
                        next[m] = next[m].max(dp[mask] + count(r, t));
                    }
                }
            }
            dp = next;
        }
        dp.into_iter().max().unwrap_or(0)
    } else {
        let mut entries: Vec<(usize, usize, usize)> = counts.iter().map(|(&(r, t), &c)| (c, r, t)).collect();
        entries.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let (mut used_r, mut used_t, mut total) = (Vec::new(), Vec::new(), 0);
        for (c, r, t) in entries {
            if !used_r.contains(&r) && !used_t.contains(&t) {
                used_r.push(r);
                used_t.push(t);
                total += c;
            }
        }
        total
    }
}

pub fn evaluate(result: &TrackSet, truth: &TrackSet) -> EvalReport {
    let matches = match_samples(result, truth);
    let result_samples: usize = result.active().map(|t| t.samples.len()).sum();
    let truth_samples: usize = truth.active().map(|t| t.samples.len()).sum();
    let truth_index: Vec<usize> = (0..truth.tracks.len()).filter(|&k| !truth.tracks[k].is_discarded()).collect();
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for m in &matches {
        let t = truth_index.binary_search(&m.truth).expect("active truth track");
        *counts.entry((m.result, t)).or_default() += 1;
    }
    let results: Vec<usize> = (0..result.tracks.len()).filter(|&k| !result.tracks[k].is_discarded()).collect();
    let consistent = best_mapping(&counts, &results, truth_index.len());
    let id_consistency = if result_samples == 0 {
        if truth_samples == 0 { 1.0 } else { 0.0 }
    } else {
        consistent as f64 / result_samples as f64
    };
    let position_rmse = if matches.is_empty() {
        0.0
    } else {
        (matches.iter().map(|m| m.distance * m.distance).sum::<f64>() / matches.len() as f64).sqrt()
    };
    EvalReport {
        id_consistency,
        position_rmse,
        track_count_error: results.len() as i64 - truth_index.len() as i64,
        ghost_survivors: result_samples - matches.len(),
        missed_frames: truth_samples - matches.len(),
        matched_samples: matches.len(),
        result_samples,
    }
}

/// RMSE of matched pelvis errors projected on `axis` (unit), e.g. the
/// camera's optical axis in world coordinates.
pub fn depth_rmse(result: &TrackSet, truth: &TrackSet, axis: Vec3<f64>) -> Option<f64> {
    let matches = match_samples(result, truth);
    if matches.is_empty() {
        return None;
    }
    let sum: f64 = matches
        .iter()
        .map(|m| {
            let r = result.tracks[m.result].sample_at(m.frame).expect("matched sample").pelvis;
            let t = truth.tracks[m.truth].sample_at(m.frame).expect("matched sample").pelvis;
            dot(sub(r, t), axis).powi(2)
        })
        .sum();
    Some((sum / matches.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{JointLayout, Provenance};
    use crate::{Sample, Skeleton, Track};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn truth(n: usize, frames: u32) -> TrackSet {
        TrackSet {
            fps: 100.0,
            layout: JointLayout::new(1, 0, 0).unwrap(),
            tracks: (0..n)
                .map(|i| Track {
                    id: i as i32,
                    samples: (0..frames)
                        .map(|f| {
                            let p = [2.0 * i as f64, 0.95, -5.0 + 0.001 * f as f64];
                            Sample { frame: f, skeleton: Skeleton { joints3d: vec![p], joints2d: vec![[0.0, 0.0]] }, pelvis: p, detection: None }
                        })
                        .collect(),
                    provenance: Provenance::Raw,
                })
                .collect(),
        }
    }

    #[test]
    fn identical_sets_are_perfect() {
        let t = truth(3, 50);
        let r = evaluate(&t, &t);
        assert_eq!(r.id_consistency, 1.0);
        assert_eq!(r.position_rmse, 0.0);
        assert_eq!((r.track_count_error, r.ghost_survivors, r.missed_frames), (0, 0, 0));
    }

    #[test]
    fn permuted_ids_are_absorbed() {
        let t = truth(4, 20);
        let mut r = t.clone();
        r.tracks.rotate_left(1);
        for (k, tr) in r.tracks.iter_mut().enumerate() {
            tr.id = 10 + k as i32;
        }
        assert_eq!(evaluate(&r, &t).id_consistency, 1.0);
    }

    #[test]
    fn split_track_loses_consistency() {
        let t = truth(1, 100);
        let mut r = t.clone();
        let tail = r.tracks[0].samples.split_off(60);
        r.tracks.push(Track { id: 1, samples: tail, provenance: Provenance::Raw });
        let rep = evaluate(&r, &t);
        assert!((rep.id_consistency - 0.6).abs() < 1e-12);
        assert_eq!(rep.track_count_error, 1);
    }

    #[test]
    fn discarded_tracks_are_ignored() {
        let t = truth(1, 10);
        let mut r = t.clone();
        let mut junk = r.tracks[0].clone();
        junk.id = -1;
        r.tracks.push(junk);
        assert_eq!(evaluate(&r, &t), evaluate(&t, &t));
    }

    #[test]
    fn unmatched_samples_are_counted() {
        let t = truth(1, 10);
        let mut r = t.clone();
        r.tracks[0].samples[3].pelvis[0] += 0.6;
        let rep = evaluate(&r, &t);
        assert_eq!((rep.ghost_survivors, rep.missed_frames), (1, 1));
        assert!((rep.id_consistency - 0.9).abs() < 1e-12);
    }

    #[test]
    fn gaussian_noise_rmse_matches_chi_expectation() {
        let t = truth(2, 6000);
        let mut r = t.clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = Normal::new(0.0, 0.05).unwrap();
        for tr in &mut r.tracks {
            for s in &mut tr.samples {
                for a in 0..3 {
                    s.pelvis[a] += n.sample(&mut rng);
                }
            }
        }
        let rmse = evaluate(&r, &t).position_rmse;
        let expected = 0.05 * 3f64.sqrt();
        assert!((rmse - expected).abs() < 0.1 * expected, "{rmse}");
    }

    #[test]
    fn depth_error_along_axis() {
        let t = truth(1, 10);
        let mut r = t.clone();
        r.tracks[0].samples.iter_mut().for_each(|s| { s.pelvis[2] += 0.1; s.pelvis[0] += 0.2 });
        assert!((depth_rmse(&r, &t, [0.0, 0.0, 1.0]).unwrap() - 0.1).abs() < 1e-12);
        assert!((depth_rmse(&r, &t, [1.0, 0.0, 0.0]).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn greedy_mapping_above_limit() {
        let t = truth(10, 5);
        let mut r = t.clone();
        r.tracks.reverse();
        assert_eq!(evaluate(&r, &t).id_consistency, 1.0);
    }

    /// Brute force over all injective maps, for a small count table.
    fn brute(counts: &[[usize; 3]], r: usize) -> usize {
        fn go(counts: &[[usize; 3]], r: usize, used: &mut [bool; 3]) -> usize {
            if r == counts.len() {
                return 0;
            }
            let mut best = go(counts, r + 1, used);
            for t in 0..3 {
                if !used[t] {
                    used[t] = true;
                    best = best.max(counts[r][t] + go(counts, r + 1, used));
                    used[t] = false;
                }
            }
            best
        }
        go(counts, r, &mut [false; 3])
    }

    proptest! {
        #[test]
        fn mapping_dp_equals_brute_force(table in proptest::collection::vec(proptest::array::uniform3(0usize..20), 0..6)) {
            let mut counts = BTreeMap::new();
            for (r, row) in table.iter().enumerate() {
                for (t, &c) in row.iter().enumerate() {
                    if c > 0 {
                        counts.insert((r, t), c);
                    }
                }
            }
            let results: Vec<usize> = (0..table.len()).collect();
            prop_assert_eq!(best_mapping(&counts, &results, 3), brute(&table, 0));
        }

        #[test]
        fn relabeling_results_is_invisible(ids in proptest::collection::btree_set(0i32..1000, 3)) {
            let t = truth(3, 15);
            let mut r = t.clone();
            r.tracks[1].samples.truncate(7);
            let before = evaluate(&r, &t);
            for (tr, id) in r.tracks.iter_mut().zip(ids) {
                tr.id = id;
            }
            prop_assert_eq!(evaluate(&r, &t), before);
        }
    }
}
