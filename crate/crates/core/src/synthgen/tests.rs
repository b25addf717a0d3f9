use super::*;
use crate::data::{CourtBounds, Vocabulary};

fn quiet(seed: u64) -> GenParams {
    GenParams {
        seed,
        noise_sigma: 0.0,
        waypoint_jitter: 0.0,
        shuffle_persons: false,
        ..Default::default()
    }
}

fn hip_mid(seq: &SkeletonSequence, t: usize, n: usize) -> [f64; 2] {
    let (l, r) = (seq.joint(t, n, 11), seq.joint(t, n, 12));
    [(l[0] as f64 + r[0] as f64) / 2.0, (l[1] as f64 + r[1] as f64) / 2.0]
}

#[test]
fn clips_are_deterministic() {
    let p = GenParams {
        seed: 1,
        ..Default::default()
    };
    assert_eq!(generate_gar_clip(0, &p).unwrap(), generate_gar_clip(0, &p).unwrap());
    let q = GenParams { seed: 2, ..p.clone() };
    assert_ne!(generate_gar_clip(0, &p).unwrap(), generate_gar_clip(0, &q).unwrap());
}

#[test]
fn iso_has_one_handler_for_the_whole_clip() {
    let p = GenParams {
        seed: 3,
        ..Default::default()
    };
    let iso = Vocabulary::default().id("ISO").unwrap();
    let clip = generate_gar_clip(iso, &p).unwrap();
    let first = clip.ball.carrier(0).unwrap();
    assert!(clip.team[first]);
    for t in 0..clip.frames() {
        assert_eq!(clip.ball.carrier(t), Some(first));
        assert_eq!(clip.ball.carriers_per_frame().nth(t), Some(1));
    }
}

#[test]
fn zero_noise_follows_the_waypoint_interpolation() {
    for cat in 0..SCRIPTED {
        let clip = generate_gar_clip(cat, &quiet(11)).unwrap();
        let sc = script_for(cat).unwrap();
        let d = clip.frames();
        assert!((sc.duration.0..=sc.duration.1).contains(&d));
        for t in 0..d {
            let s = t as f64 / (d - 1) as f64;
            for a in 0..3 {
                let want = sc.position(a, s);
                let got = hip_mid(&clip.sequence, t, a);
                assert!((want[0] - got[0]).abs() < 1e-5 && (want[1] - got[1]).abs() < 1e-5, "cat {cat} t {t} agent {a}");
            }
        }
    }
}

#[test]
fn defenders_trail_toward_the_hoop() {
    let clip = generate_gar_clip(0, &quiet(4)).unwrap();
    for t in [0, 5, 40, clip.frames() - 1] {
        let o = hip_mid(&clip.sequence, t.saturating_sub(DEFENSE_LAG), 0);
        let d = hip_mid(&clip.sequence, t, 3);
        let gap = (d[0] - o[0]).hypot(d[1] - o[1]);
        assert!((gap - DEFENSE_GAP).abs() < 1e-4, "{gap}");
        let before = o[0].hypot(o[1] - HOOP_Y);
        let after = d[0].hypot(d[1] - HOOP_Y);
        assert!(after < before);
    }
}

#[test]
fn body_height_and_bounds() {
    let p = GenParams::default();
    for cat in 0..Vocabulary::full().len() {
        let clip = generate_gar_clip(cat, &GenParams { seed: cat as u64, ..p.clone() }).unwrap();
        clip.validate(&CourtBounds::default(), Vocabulary::full().len()).unwrap();
        let top = clip.sequence.data().chunks(3).map(|c| c[2]).fold(f32::MIN, f32::max);
        assert!(top < BODY_HEIGHT as f32 + 0.1 && top > 1.6, "{top}");
    }
}

#[test]
fn unknown_category_is_an_error() {
    assert!(matches!(generate_gar_clip(21, &GenParams::default()), Err(SynthError::UnknownCategory(21))));
}

#[test]
fn invalid_params_are_rejected() {
    let mut p = GenParams::default();
    p.category_weights = vec![0.5, 0.4];
    assert!(generate_tgal_round(&p, 1).is_err());
    let p = GenParams {
        noise_sigma: -1.0,
        ..Default::default()
    };
    assert!(generate_gar_clip(0, &p).is_err());
}

#[test]
fn single_activity_round() {
    let r = generate_tgal_round(&GenParams::default(), 1).unwrap();
    assert_eq!(r.instances.len(), 1);
    let i = r.instances[0];
    assert!(i.start >= TRANSITION_RANGE.0 && i.start <= TRANSITION_RANGE.1);
    let trailing = r.frames() - 1 - i.end;
    assert!((TRANSITION_RANGE.0..=TRANSITION_RANGE.1).contains(&trailing));
    let sc = script_for(i.category).unwrap();
    assert!((sc.duration.0..=sc.duration.1).contains(&i.len()));
    r.validate(&CourtBounds::default(), 18).unwrap();
}

#[test]
fn zero_noise_round_follows_scripts_inside_instances() {
    let p = GenParams {
        seed: 9,
        ..quiet(9)
    };
    let r = generate_tgal_round(&p, 3).unwrap();
    assert_eq!(r.instances.len(), 3);
    for inst in &r.instances {
        let sc = script_for(inst.category).unwrap();
        for t in inst.start..=inst.end {
            let s = (t - inst.start) as f64 / (inst.len() - 1) as f64;
            let want = sc.position(1, s);
            let got = hip_mid(&r.sequence, t, 1);
            assert!((want[0] - got[0]).abs() < 1e-5 && (want[1] - got[1]).abs() < 1e-5);
            assert_eq!(r.ball.carrier(t), sc.carrier(s));
        }
    }
}

#[test]
fn budget_overflow_is_an_error() {
    assert!(matches!(generate_tgal_round(&GenParams::default(), 16), Err(SynthError::Budget { .. })));
    assert!(matches!(generate_tgal_round(&GenParams::default(), 0), Err(SynthError::Budget { .. })));
    let r = generate_tgal_round(&GenParams::default(), 15).unwrap();
    assert!(r.frames() <= MAX_ROUND_FRAMES);
    assert_eq!(r.instances.len(), 15);
}

#[test]
fn one_hot_weights_give_a_single_category() {
    let cross = Vocabulary::default().id("Cross").unwrap();
    let mut w = vec![0.0; SCRIPTED];
    w[cross] = 1.0;
    let p = GenParams {
        category_weights: w,
        ..Default::default()
    };
    let m = plan_corpus(&p, CorpusKind::Tgal, 10, 3).unwrap();
    assert!(m.rounds.iter().flat_map(|r| &r.instances).all(|i| i.category == cross));
}

#[test]
fn plan_matches_rendered_labels() {
    let p = GenParams {
        seed: 5,
        ..Default::default()
    };
    let plan = plan_corpus(&p, CorpusKind::Tgal, 6, 3).unwrap();
    let (m, rounds) = generate_rounds(&p, CorpusKind::Tgal, 6, 3, Parallelism::Sequential).unwrap();
    assert_eq!(plan, m);
    for (e, r) in m.rounds.iter().zip(&rounds) {
        assert_eq!(e.instances, r.instances);
        assert_eq!(e.frames, r.frames());
    }
}

#[test]
fn parallel_generation_matches_sequential() {
    let p = GenParams::default();
    let a = generate_rounds(&p, CorpusKind::Tgal, 4, 3, Parallelism::Sequential).unwrap();
    let b = generate_rounds(&p, CorpusKind::Tgal, 4, 3, Parallelism::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn reversed_variant_swaps_possession_order() {
    // category 12 = PnR reversed
    let base = script_for(0).unwrap();
    let rev = script_for(12).unwrap();
    assert_eq!(rev.carrier(0.0), base.carrier(1.0));
    assert_eq!(rev.carrier(1.0), base.carrier(0.0));
    for s in [0.0, 0.2, 0.5, 0.9, 1.0] {
        let (a, b) = (rev.position(1, s), base.position(1, 1.0 - s));
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    }
    let mir = script_for(6).unwrap();
    let (a, b) = (mir.position(0, 0.4), base.position(0, 0.4));
    assert_eq!((a[0], a[1]), (-b[0], b[1]));
}
