use proptest::prelude::*;
use stage_tracks::cleanse::cleanse_sequence;
use stage_tracks::io::{parse_detections, parse_masks, parse_tracks, write_detections, write_masks, write_tracks, RleMask};
use stage_tracks::scenecut::split_sequence;
use stage_tracks::synth::{generate, ScenarioSpec, Source};

#[test]
fn synthetic_detections_roundtrip() {
    let mut s = ScenarioSpec { duration_s: 1.0, seed: 9, ..ScenarioSpec::default() };
    s.degradations.sigma_xy = 0.05;
    s.degradations.ghost_rate = 0.3;
    let sc = generate(&s).unwrap();
    assert_eq!(parse_detections(&write_detections(&sc.detections)).unwrap(), sc.detections);
}

#[test]
fn synthetic_truth_roundtrips_field_exactly() {
    let sc = generate(&ScenarioSpec { duration_s: 1.0, seed: 10, ..ScenarioSpec::default() }).unwrap();
    assert_eq!(sc.truth.tracks.len(), 2);
    assert_eq!(parse_tracks(&write_tracks(&sc.truth, false).unwrap()).unwrap(), sc.truth);
}

#[test]
fn synthetic_masks_roundtrip() {
    let sc = generate(&ScenarioSpec { duration_s: 0.5, seed: 11, ..ScenarioSpec::default() }).unwrap();
    let (w, h) = (sc.detections.width, sc.detections.height);
    assert_eq!(parse_masks(&write_masks(&sc.masks), w, h).unwrap(), sc.masks);
}

#[test]
fn split_pieces_concatenate_to_input() {
    let s = ScenarioSpec { scene_cuts: vec![20, 35], ..ScenarioSpec { duration_s: 0.6, seed: 12, ..ScenarioSpec::default() } };
    let sc = generate(&s).unwrap();
    let pieces = split_sequence(&sc.detections, &sc.cuts);
    assert_eq!(pieces.iter().map(|p| p.offset).collect::<Vec<_>>(), [0, 20, 35]);
    assert_eq!(pieces.iter().map(|p| p.sequence.frames.len()).collect::<Vec<_>>(), [20, 15, 25]);
    let joined: Vec<_> = pieces
        .iter()
        .flat_map(|p| p.sequence.frames.iter().map(move |f| (f.index + p.offset, f.detections.clone())))
        .collect();
    let original: Vec<_> = sc.detections.frames.iter().map(|f| (f.index, f.detections.clone())).collect();
    assert_eq!(joined, original);
}

/// Reference rasterizer: a cell is foreground iff it lies in the box, bounds inclusive.
fn raster(w: u32, h: u32, x0: i64, y0: i64, x1: i64, y1: i64) -> Vec<bool> {
    (0..h as i64).flat_map(|y| (0..w as i64).map(move |x| x >= x0 && x <= x1 && y >= y0 && y <= y1)).collect()
}

proptest! {
    #[test]
    fn rectangle_masks_match_reference(w in 1u32..40, h in 1u32..40, x0 in -10i64..50, y0 in -10i64..50, dx in 0i64..30, dy in 0i64..30) {
        let m = RleMask::rectangle(w, h, x0, y0, x0 + dx, y0 + dy);
        prop_assert_eq!(m.decode(), raster(w, h, x0, y0, x0 + dx, y0 + dy));
        prop_assert_eq!(RleMask::encode(&m.decode()), m);
    }

    #[test]
    fn raw_ghost_count_grows_with_rate(seed in 0u64..1000, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let count = |rate: f64| {
            let mut s = ScenarioSpec { duration_s: 0.5, seed, ..ScenarioSpec::default() };
            s.degradations.ghost_rate = rate;
            generate(&s).unwrap().ghost_count()
        };
        prop_assert!(count(lo) <= count(hi));
    }

    #[test]
    fn cleanse_keeps_every_dancer_and_drops_ghosts(seed in 0u64..500) {
        let mut s = ScenarioSpec { duration_s: 0.5, seed, ..ScenarioSpec::default() };
        s.degradations.ghost_rate = 0.5;
        let sc = generate(&s).unwrap();
        let clean = cleanse_sequence(&sc.detections, 0.40);
        for (f, src) in clean.frames.iter().zip(&sc.sources) {
            let dancers = src.iter().filter(|s| matches!(s, Source::Dancer(_))).count();
            prop_assert_eq!(f.detections.len(), dancers);
        }
    }
}
