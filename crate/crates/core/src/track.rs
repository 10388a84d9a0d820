//! Identity handling: frame-to-frame pelvis linking, head-point mask
//! assignment, re-identification fusion and region-of-interest filtering.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{Error, FieldError, Result};
use crate::io::masks::MaskFrame;
use crate::linalg::{dist, Vec2};
use crate::model::{pelvis, DetectionSequence, FpsRule, Provenance, Sample, Track, TrackSet, DISCARDED};
use crate::scalar::Real;

/// Linking radius in meters, piecewise linear over (30 fps, 0.50), (100 fps, 0.30).
pub fn track_threshold<T: Real>(fps: T) -> T {
    FpsRule::new(vec![(T::lit(30.0), T::lit(0.50)), (T::lit(100.0), T::lit(0.30))])
        .expect("default anchors are valid")
        .eval(fps)
}

/// Minimum re-ID track length from a rule, rounded, at least 1.
pub fn min_len_from_rule<T: Real>(rule: &FpsRule<T>, fps: T) -> usize {
    rule.eval(fps).round().to_usize().unwrap_or(1).max(1)
}

/// Minimum re-ID track length in frames over (25 fps, 10), (100 fps, 30).
pub fn reid_min_len<T: Real>(fps: T) -> usize {
    let rule = FpsRule::new(vec![(T::lit(25.0), T::lit(10.0)), (T::lit(100.0), T::lit(30.0))])
        .expect("default anchors are valid");
    min_len_from_rule(&rule, fps)
}

/// Links detections of consecutive frames into tracks.
///
/// Among tracks that have a sample in the previous listed frame, the closest
/// (track, detection) pair is linked repeatedly while its pelvis distance is
/// below `threshold`; ties go to the lower track id, then detection index.
/// Every leftover detection opens a track with the next id.
pub fn build_tracks<T: Real>(seq: &DetectionSequence<T>, threshold: T) -> TrackSet<T> {
    let mut tracks: Vec<Track<T>> = Vec::new();
    let mut previous: Option<u32> = None;
    for frame in &seq.frames {
        let pelvises: Vec<_> = frame.detections.iter().map(|d| pelvis(&d.skeleton, &seq.layout)).collect();
        let mut pairs: Vec<(T, usize, usize)> = Vec::new();
        if let Some(prev) = previous {
            for (ti, t) in tracks.iter().enumerate() {
                let last = t.samples.last().expect("tracks are never empty");
                if last.frame != prev {
                    continue;
                }
                for (di, p) in pelvises.iter().enumerate() {
                    let d = dist(last.pelvis, *p);
                    if d < threshold {
                        pairs.push((d, ti, di));
                    }
                }
            }
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut track_used = vec![false; tracks.len()];
        let mut owner: Vec<Option<usize>> = vec![None; pelvises.len()];
        for (_, ti, di) in pairs {
            if !track_used[ti] && owner[di].is_none() {
                track_used[ti] = true;
                owner[di] = Some(ti);
            }
        }
        for (di, det) in frame.detections.iter().enumerate() {
            let sample = Sample {
                frame: frame.index,
                skeleton: det.skeleton.clone(),
                pelvis: pelvises[di],
                detection: Some(di as u32),
            };
            match owner[di] {
                Some(ti) => tracks[ti].samples.push(sample),
                None => tracks.push(Track { id: tracks.len() as i32, samples: vec![sample], provenance: Provenance::Raw }),
            }
        }
        previous = Some(frame.index);
    }
    TrackSet { fps: seq.fps, layout: seq.layout.clone(), tracks }
}

/// Mask identity of every detection, keyed by frame then detection index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    pub frames: BTreeMap<u32, Vec<Option<u32>>>,
}

impl Assignment {
    pub fn idsam(&self, frame: u32, detection: u32) -> Option<u32> {
        self.frames.get(&frame).and_then(|v| v.get(detection as usize).copied().flatten())
    }
}

/// Mask identity under one head point: the smallest containing mask, then
/// the smaller idsam. Points off the image have none.
pub fn mask_at<T: Real>(frame: &MaskFrame, head: Vec2<T>, width: u32, height: u32) -> Option<u32> {
    let (u, v) = (head[0].round(), head[1].round());
    if !(u >= T::zero() && v >= T::zero() && u < T::from_count(width as usize) && v < T::from_count(height as usize)) {
        return None;
    }
    let cell = v.to_u64()? * u64::from(width) + u.to_u64()?;
    frame
        .masks
        .iter()
        .filter(|m| m.mask.contains(cell))
        .min_by_key(|m| (m.mask.area(), m.idsam))
        .map(|m| m.idsam)
}

/// Assigns each detection the idsam of the mask under its rounded head point.
pub fn assign_mask_ids<T: Real>(masks: &[MaskFrame], seq: &DetectionSequence<T>) -> Assignment {
    let by_frame: BTreeMap<u32, &MaskFrame> = masks.iter().map(|m| (m.frame, m)).collect();
    let frames = seq
        .frames
        .iter()
        .map(|f| {
            let ids = f
                .detections
                .iter()
                .map(|d| {
                    by_frame
                        .get(&f.index)
                        .and_then(|m| mask_at(m, d.skeleton.head2d(&seq.layout), seq.width, seq.height))
                })
                .collect();
            (f.index, ids)
        })
        .collect();
    Assignment { frames }
}

/// Most frequent idsam over a track's samples; ties go to the smaller idsam.
fn majority(track: &Track<impl Real>, asg: &Assignment) -> Option<u32> {
    let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
    for s in &track.samples {
        if let Some(id) = s.detection.and_then(|d| asg.idsam(s.frame, d)) {
            *votes.entry(id).or_default() += 1;
        }
    }
    votes.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(id, _)| id)
}

/// Relabels tracks longer than `min_len` with their majority idsam and
/// discards the rest, then merges tracks that share a label.
///
/// A track with no votes is discarded. When merged tracks overlap in a frame
/// the sample of the longer source track is kept (earlier track on ties).
/// Output: merged tracks by ascending id, then discarded tracks in input order.
pub fn fuse_reid<T: Real>(ts: &TrackSet<T>, asg: &Assignment, min_len: usize) -> TrackSet<T> {
    let mut groups: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    let mut discarded = Vec::new();
    for (k, t) in ts.tracks.iter().enumerate() {
        let label = if t.samples.len() > min_len { majority(t, asg) } else { None };
        match label {
            Some(id) => groups.entry(id as i32).or_default().push(k),
            None => discarded.push(Track { id: DISCARDED, samples: t.samples.clone(), provenance: Provenance::Fused }),
        }
    }
    let mut tracks: Vec<Track<T>> = groups
        .into_iter()
        .map(|(id, mut members)| {
            members.sort_by_key(|&k| (std::cmp::Reverse(ts.tracks[k].samples.len()), k));
            let mut by_frame: BTreeMap<u32, &Sample<T>> = BTreeMap::new();
            for &k in &members {
                for s in &ts.tracks[k].samples {
                    by_frame.entry(s.frame).or_insert(s);
                }
            }
            Track { id, samples: by_frame.into_values().cloned().collect(), provenance: Provenance::Fused }
        })
        .collect();
    tracks.extend(discarded);
    TrackSet { fps: ts.fps, layout: ts.layout.clone(), tracks }
}

/// Field errors for an ROI polygon; empty when usable.
pub fn polygon_errors<T: Real>(polygon: &[[T; 2]]) -> Vec<FieldError> {
    if polygon.len() < 3 {
        return vec![FieldError::new("roi_polygon", "needs at least 3 vertices")];
    }
    if polygon.iter().flatten().any(|v| !v.is_finite()) {
        return vec![FieldError::new("roi_polygon", "vertices must be finite")];
    }
    let n = polygon.len();
    let twice_area: T = (0..n)
        .map(|i| {
            let (a, b) = (polygon[i], polygon[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    if twice_area.abs() <= T::epsilon() {
        return vec![FieldError::new("roi_polygon", "polygon has zero area")];
    }
    Vec::new()
}

fn on_segment<T: Real>(p: [T; 2], a: [T; 2], b: [T; 2]) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let scale = (b[0] - a[0]).abs().max((b[1] - a[1]).abs()).max(T::one());
    cross.abs() <= T::lit(1e-12) * scale * scale
        && p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

/// Even-odd point-in-polygon test; points on an edge count as inside.
pub fn point_in_polygon<T: Real>(p: [T; 2], polygon: &[[T; 2]]) -> bool {
    let n = polygon.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[(i + n - 1) % n]);
        if on_segment(p, a, b) {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Drops tracks with fewer than half of their world pelvis samples, on the
/// ground plane `(x, z)`, inside `polygon`.
pub fn roi_filter<T: Real>(ts: &TrackSet<T>, polygon: &[[T; 2]]) -> Result<TrackSet<T>> {
    let errors = polygon_errors(polygon);
    if !errors.is_empty() {
        return Err(Error::config(errors));
    }
    let tracks = ts
        .tracks
        .iter()
        .filter(|t| {
            let inside = t.samples.iter().filter(|s| point_in_polygon([s.pelvis[0], s.pelvis[2]], polygon)).count();
            !t.samples.is_empty() && 2 * inside >= t.samples.len()
        })
        .cloned()
        .collect();
    Ok(TrackSet { fps: ts.fps, layout: ts.layout.clone(), tracks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::masks::{MaskEntry, RleMask};
    use crate::model::{Detection, Frame, JointLayout, Skeleton};
    use proptest::prelude::*;

    fn layout() -> JointLayout {
        JointLayout::new(2, 0, 1).unwrap()
    }

    fn det(p: [f64; 3], head: [f64; 2]) -> Detection<f64> {
        Detection {
            skeleton: Skeleton { joints3d: vec![p, [p[0], p[1] + 0.7, p[2]]], joints2d: vec![[head[0], head[1] + 50.0], head] },
            score: 0.9,
            body_params: None,
        }
    }

    fn seq(frames: Vec<Vec<[f64; 3]>>) -> DetectionSequence<f64> {
        DetectionSequence {
            fps: 100.0,
            width: 200,
            height: 100,
            layout: layout(),
            frames: frames
                .into_iter()
                .enumerate()
                .map(|(i, ps)| Frame { index: i as u32, detections: ps.into_iter().map(|p| det(p, [10.0, 10.0])).collect() })
                .collect(),
        }
    }

    #[test]
    fn anchor_thresholds() {
        assert_eq!(track_threshold(100.0), 0.30);
        assert_eq!(track_threshold(30.0), 0.50);
        assert!((track_threshold(65.0f64) - 0.40).abs() < 1e-12);
        assert_eq!(track_threshold(10.0), 0.50);
        assert_eq!(track_threshold(240.0f32), 0.30);
        assert_eq!(reid_min_len(100.0), 30);
        assert_eq!(reid_min_len(25.0), 10);
        assert_eq!(reid_min_len(62.5), 20);
        assert_eq!(reid_min_len(1.0), 10);
    }

    #[test]
    fn drifting_detection_forms_one_track() {
        let ts = build_tracks(&seq((0..50).map(|k| vec![[0.05 * k as f64, 0.9, 4.0]]).collect()), 0.30);
        assert_eq!(ts.tracks.len(), 1);
        assert_eq!(ts.tracks[0].samples.len(), 50);
    }

    #[test]
    fn far_detection_opens_new_track() {
        let ts = build_tracks(&seq(vec![vec![[0.0, 0.0, 0.0]], vec![[0.1, 0.0, 0.0], [1.0, 0.0, 0.0]]]), 0.30);
        assert_eq!(ts.tracks.len(), 2);
        assert_eq!(ts.tracks[0].samples.len(), 2);
        assert_eq!(ts.tracks[1].id, 1);
        assert_eq!(ts.tracks[1].samples[0].pelvis, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn threshold_is_strict() {
        let ts = build_tracks(&seq(vec![vec![[0.0, 0.0, 0.0]], vec![[0.25, 0.0, 0.0]]]), 0.25);
        assert_eq!(ts.tracks.len(), 2);
    }

    #[test]
    fn gap_breaks_track() {
        let s = seq(vec![vec![[0.0, 0.0, 0.0]], vec![], vec![[0.0, 0.0, 0.0]]]);
        assert_eq!(build_tracks(&s, 0.3).tracks.len(), 2);
    }

    #[test]
    fn global_nearest_beats_track_order() {
        // Track 0 is nearer to detection 1 than track 1 is; global greedy gives it to track 0.
        let s = seq(vec![vec![[0.0, 0.0, 0.0], [0.3, 0.0, 0.0]], vec![[0.5, 0.0, 0.0], [0.05, 0.0, 0.0]]]);
        let ts = build_tracks(&s, 0.3);
        assert_eq!(ts.tracks[0].samples[1].detection, Some(1));
        assert_eq!(ts.tracks[1].samples[1].detection, Some(0));
    }

    fn rect_frame(frame: u32, rects: &[(u32, [i64; 4])]) -> MaskFrame {
        MaskFrame {
            frame,
            masks: rects
                .iter()
                .map(|&(idsam, [x0, y0, x1, y1])| MaskEntry { idsam, mask: RleMask::rectangle(200, 100, x0, y0, x1, y1) })
                .collect(),
        }
    }

    #[test]
    fn head_point_lookup() {
        let f = rect_frame(0, &[(2, [90, 40, 110, 60]), (5, [0, 0, 199, 99])]);
        assert_eq!(mask_at(&f, [100.2, 50.7], 200, 100), Some(2));
        assert_eq!(mask_at(&f, [10.0, 10.0], 200, 100), Some(5));
        assert_eq!(mask_at(&f, [-3.0, 10.0], 200, 100), None);
        assert_eq!(mask_at(&f, [199.6, 10.0], 200, 100), None);
        let f = rect_frame(0, &[(2, [90, 40, 110, 60])]);
        assert_eq!(mask_at(&f, [10.0, 10.0], 200, 100), None);
    }

    fn track_of(id: i32, frames: std::ops::Range<u32>) -> Track<f64> {
        Track {
            id,
            samples: frames
                .map(|f| Sample {
                    frame: f,
                    skeleton: det([id as f64, 0.0, 0.0], [0.0, 0.0]).skeleton,
                    pelvis: [id as f64, 0.0, 0.0],
                    detection: Some(0),
                })
                .collect(),
            provenance: Provenance::Raw,
        }
    }

    fn votes(frames: impl Iterator<Item = (u32, Option<u32>)>) -> Assignment {
        Assignment { frames: frames.map(|(f, id)| (f, vec![id])).collect() }
    }

    #[test]
    fn majority_vote_relabels() {
        let ts = TrackSet { fps: 100.0, layout: layout(), tracks: vec![track_of(0, 0..40)] };
        let asg = votes((0..40).map(|f| (f, Some(if f < 30 { 3 } else { 7 }))));
        let out = fuse_reid(&ts, &asg, reid_min_len(100.0));
        assert_eq!(out.tracks[0].id, 3);
        assert_eq!(out.tracks[0].provenance, Provenance::Fused);
    }

    #[test]
    fn short_track_discarded() {
        let ts = TrackSet { fps: 100.0, layout: layout(), tracks: vec![track_of(0, 0..20), track_of(1, 0..30)] };
        let asg = votes((0..30).map(|f| (f, Some(1))));
        let out = fuse_reid(&ts, &asg, 30);
        assert!(out.tracks.iter().all(Track::is_discarded));
    }

    #[test]
    fn vote_tie_prefers_smaller_idsam() {
        let ts = TrackSet { fps: 100.0, layout: layout(), tracks: vec![track_of(0, 0..4)] };
        let asg = votes((0..4).map(|f| (f, Some(if f % 2 == 0 { 9 } else { 4 }))));
        assert_eq!(fuse_reid(&ts, &asg, 1).tracks[0].id, 4);
    }

    #[test]
    fn fragments_of_one_identity_merge() {
        let mut long = track_of(0, 0..50);
        let short = track_of(1, 45..80);
        long.samples.iter_mut().for_each(|s| s.pelvis[1] = 1.0);
        let ts = TrackSet { fps: 100.0, layout: layout(), tracks: vec![short, long] };
        let asg = votes((0..80).map(|f| (f, Some(6))));
        let out = fuse_reid(&ts, &asg, 30);
        assert_eq!(out.tracks.len(), 1);
        let t = &out.tracks[0];
        assert_eq!(t.samples.len(), 80);
        // Overlap 45..50 comes from the 50-sample source.
        assert_eq!(t.sample_at(47).unwrap().pelvis[1], 1.0);
        assert_eq!(t.sample_at(60).unwrap().pelvis[1], 0.0);
        assert!(out.violations().is_empty());
    }

    fn square() -> Vec<[f64; 2]> {
        vec![[-5.0, -5.0], [5.0, -5.0], [5.0, 5.0], [-5.0, 5.0]]
    }

    #[test]
    fn roi_keeps_stage_and_drops_audience() {
        let mut audience = track_of(1, 0..10);
        audience.samples.iter_mut().for_each(|s| s.pelvis = [20.0, 0.0, 20.0]);
        let ts = TrackSet { fps: 100.0, layout: layout(), tracks: vec![track_of(0, 0..10), audience] };
        let out = roi_filter(&ts, &square()).unwrap();
        assert_eq!(out.tracks.len(), 1);
        assert_eq!(out.tracks[0].id, 0);
    }

    #[test]
    fn roi_half_inside_is_kept() {
        let mut t = track_of(0, 0..10);
        t.samples.iter_mut().skip(5).for_each(|s| s.pelvis = [9.0, 0.0, 0.0]);
        let ts = TrackSet { fps: 100.0, layout: layout(), tracks: vec![t.clone()] };
        assert_eq!(roi_filter(&ts, &square()).unwrap().tracks.len(), 1);
        t.samples[4].pelvis = [9.0, 0.0, 0.0];
        let ts = TrackSet { fps: 100.0, layout: layout(), tracks: vec![t] };
        assert!(roi_filter(&ts, &square()).unwrap().tracks.is_empty());
    }

    #[test]
    fn boundary_and_degenerate_polygons() {
        assert!(point_in_polygon([5.0, 0.0], &square()));
        assert!(point_in_polygon([-5.0, -5.0], &square()));
        assert!(!point_in_polygon([5.0001, 0.0], &square()));
        let ts = TrackSet { fps: 100.0, layout: layout(), tracks: vec![] };
        assert!(matches!(roi_filter(&ts, &[[0.0, 0.0], [1.0, 1.0]]), Err(Error::Config(_))));
        assert!(matches!(roi_filter(&ts, &[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]), Err(Error::Config(_))));
    }

    /// Reference linker: scans every remaining pair for the minimum each step.
    fn reference_links(frames: &[Vec<[f64; 3]>], threshold: f64) -> Vec<Vec<usize>> {
        let mut ids: Vec<Vec<usize>> = Vec::new();
        let mut next = 0;
        for (k, ps) in frames.iter().enumerate() {
            let mut cur: Vec<Option<usize>> = vec![None; ps.len()];
            if k > 0 {
                let prev = &frames[k - 1];
                let mut taken_prev = vec![false; prev.len()];
                loop {
                    let mut best: Option<(f64, usize, usize)> = None;
                    for (i, p) in prev.iter().enumerate() {
                        for (j, q) in ps.iter().enumerate() {
                            if taken_prev[i] || cur[j].is_some() {
                                continue;
                            }
                            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                            let key = (d, ids[k - 1][i], j);
                            if d < threshold && best.is_none_or(|b| key.0 < b.0 || (key.0 == b.0 && (key.1, key.2) < (ids[k - 1][b.1], b.2))) {
                                best = Some((d, i, j));
                            }
                        }
                    }
                    let Some((_, i, j)) = best else { break };
                    taken_prev[i] = true;
                    cur[j] = Some(ids[k - 1][i]);
                }
            }
            ids.push(cur.into_iter().map(|c| c.unwrap_or_else(|| { next += 1; next - 1 })).collect());
        }
        ids
    }

    #[test]
    fn crossing_dancers_match_reference_linker() {
        // Two dancers crossing at 0.04 m per frame, with small lateral offset.
        let frames: Vec<Vec<[f64; 3]>> = (0..100)
            .map(|k| {
                let x = -2.0 + 0.04 * k as f64;
                vec![[x, 0.9, 4.0], [-x, 0.9, 4.05]]
            })
            .collect();
        let ts = build_tracks(&seq(frames.clone()), track_threshold(100.0));
        let reference = reference_links(&frames, track_threshold(100.0));
        for (k, ids) in reference.iter().enumerate() {
            for (j, &id) in ids.iter().enumerate() {
                let t = ts.tracks.iter().find(|t| t.id == id as i32).unwrap();
                assert_eq!(t.sample_at(k as u32).unwrap().detection, Some(j as u32));
            }
        }
    }

    fn arb_frames() -> impl Strategy<Value = Vec<Vec<[f64; 3]>>> {
        proptest::collection::vec(proptest::collection::vec(proptest::array::uniform3(-2.0f64..2.0), 0..5), 1..12)
    }

    proptest! {
        #[test]
        fn linking_matches_reference(frames in arb_frames(), threshold in 0.1f64..1.5) {
            let ts = build_tracks(&seq(frames.clone()), threshold);
            let reference = reference_links(&frames, threshold);
            for (k, ids) in reference.iter().enumerate() {
                for (j, &id) in ids.iter().enumerate() {
                    let t = ts.tracks.iter().find(|t| t.id == id as i32).unwrap();
                    prop_assert_eq!(t.sample_at(k as u32).unwrap().detection, Some(j as u32));
                }
            }
        }

        #[test]
        fn every_detection_lands_in_exactly_one_track(frames in arb_frames(), threshold in 0.1f64..1.5) {
            let s = seq(frames);
            let ts = build_tracks(&s, threshold);
            prop_assert_eq!(ts.sample_count(), s.detection_count());
            let mut seen = std::collections::BTreeSet::new();
            for t in &ts.tracks {
                for smp in &t.samples {
                    prop_assert!(seen.insert((smp.frame, smp.detection)));
                }
            }
            prop_assert!(ts.violations().is_empty());
            prop_assert_eq!(build_tracks(&s, threshold), ts);
        }

        #[test]
        fn fusion_never_invents_samples(frames in arb_frames(), min_len in 0usize..4, seed in 0u32..5) {
            let s = seq(frames);
            let ts = build_tracks(&s, 0.8);
            let asg = Assignment {
                frames: s.frames.iter().map(|f| (f.index, (0..f.detections.len()).map(|d| Some((d as u32 + seed) % 3)).collect())).collect(),
            };
            let out = fuse_reid(&ts, &asg, min_len);
            prop_assert!(out.violations().is_empty());
            let input: Vec<_> = ts.tracks.iter().flat_map(|t| t.samples.iter()).collect();
            for t in out.active() {
                for smp in &t.samples {
                    prop_assert!(input.contains(&smp));
                }
            }
        }

        #[test]
        fn threshold_rules_monotone(a in 1.0f64..300.0, b in 1.0f64..300.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(track_threshold(lo) >= track_threshold(hi));
            prop_assert!(reid_min_len(lo) <= reid_min_len(hi));
            prop_assert!((0.30..=0.50).contains(&track_threshold(lo)));
            prop_assert!((10..=30).contains(&reid_min_len(lo)));
        }

        #[test]
        fn roi_invariant_under_vertex_rotation(
            pts in proptest::collection::vec(proptest::array::uniform2(-8.0f64..8.0), 1..20),
            shift in 0usize..4,
        ) {
            let mut poly = vec![[-5.0, -3.0], [4.0, -5.0], [6.0, 2.0], [0.0, 1.0], [-4.0, 5.0]];
            let t = Track {
                id: 0,
                samples: pts.iter().enumerate().map(|(k, p)| Sample {
                    frame: k as u32,
                    skeleton: det([p[0], 0.0, p[1]], [0.0, 0.0]).skeleton,
                    pelvis: [p[0], 0.0, p[1]],
                    detection: None,
                }).collect(),
                provenance: Provenance::Raw,
            };
            let ts = TrackSet { fps: 25.0, layout: layout(), tracks: vec![t] };
            let before = roi_filter(&ts, &poly).unwrap();
            poly.rotate_left(shift);
            prop_assert_eq!(roi_filter(&ts, &poly).unwrap(), before.clone());
            poly.reverse();
            prop_assert_eq!(roi_filter(&ts, &poly).unwrap(), before);
        }
    }
}
