use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{BallCarrier, NUM_JOINTS};
use crate::numerics::{grad_check, grad_check_params, GradCheckConfig};
use crate::testutil::{check_seeds, jitter_params, to_numerics};

fn small_cfg() -> BackboneConfig {
    BackboneConfig {
        window_len: 20,
        window_stride: 8,
        temporal_kernel: 3,
        layers: vec![
            LayerSpec { channels: 4, stride: 1 },
            LayerSpec { channels: 6, stride: 2 },
            LayerSpec { channels: 5, stride: 2 },
        ],
    }
}

fn random_sequence(frames: usize, persons: usize, joints: usize, seed: u64) -> SkeletonSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = SkeletonSequence::zeros(frames, persons, joints, 3, 50);
    for v in s.data_mut() {
        *v = rng.gen_range(-2.0..2.0);
    }
    for t in 0..frames {
        for n in 0..persons {
            s.set_valid(t, n, true);
        }
    }
    s
}

#[test]
fn skeleton_graph_properties() {
    let g = SkeletonGraph::default();
    assert_eq!(g.nodes, 17);
    assert!(g.is_connected());
    let raw = SkeletonGraph::raw_adjacency(17, &COCO_EDGES);
    for i in 0..17 {
        let row: f64 = (0..17).map(|j| g.adjacency.get(&[i, j])).sum();
        assert!((row - 1.0).abs() < 1e-12);
        for j in 0..17 {
            assert_eq!(raw.get(&[i, j]), raw.get(&[j, i]));
        }
    }
    assert!(!SkeletonGraph::new(3, &[(0, 1)]).is_connected());
}

#[test]
fn window_plan_examples() {
    let cfg = BackboneConfig::default();
    assert_eq!(plan_windows(300, &cfg).unwrap().windows, vec![(0, 300)]);
    assert_eq!(plan_windows(400, &cfg).unwrap().windows, vec![(0, 300), (100, 400)]);
    assert_eq!(plan_windows(800, &cfg).unwrap().len(), 6);
    assert!(plan_windows(299, &cfg).is_err());
}

#[test]
fn config_validation() {
    let mut c = BackboneConfig::default();
    c.validate().unwrap();
    assert_eq!(c.downsample(), 4);
    assert_eq!(c.window_out_len(), 75);
    c.window_len = 302;
    assert!(c.validate().is_err());
    let mut c = BackboneConfig::default();
    c.window_stride = 301;
    assert!(c.validate().is_err());
}

#[test]
fn default_backbone_output_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let bb = Backbone::new(&mut store, BackboneConfig::default(), SkeletonGraph::default(), 3, &mut rng).unwrap();
    let seq = random_sequence(300, 1, NUM_JOINTS, 1);
    let mut g = Graph::inference();
    let x = g.input(Backbone::window_input(&seq, 0, 0, 300));
    let y = bb.forward(&mut g, &store, x).unwrap();
    assert_eq!(g.shape(y), [75, 256]);
    assert!(g.value(y).is_finite());

    let mut g = Graph::inference();
    let x = g.input(Tensor::zeros(&[200, 17, 3]));
    assert!(bb.forward(&mut g, &store, x).is_err());
}

#[test]
fn persons_are_processed_independently() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let cfg = small_cfg();
    let bb = Backbone::new(&mut store, cfg.clone(), SkeletonGraph::chain(5), 3, &mut rng).unwrap();
    let seq = random_sequence(36, 2, 5, 4);
    let mut swapped = seq.clone();
    for t in 0..36 {
        let a = seq.pose(t, 0).to_vec();
        let b = seq.pose(t, 1).to_vec();
        swapped.pose_mut(t, 0).copy_from_slice(&b);
        swapped.pose_mut(t, 1).copy_from_slice(&a);
    }
    let plan = plan_windows(36, &cfg).unwrap();
    let f1 = bb.extract(&store, &seq, &plan, Parallelism::Parallel).unwrap();
    let f2 = bb.extract(&store, &swapped, &plan, Parallelism::Sequential).unwrap();
    for w in 0..plan.len() {
        assert_eq!(f1[w][0], f2[w][1]);
        assert_eq!(f1[w][1], f2[w][0]);
    }
    let again = bb.extract(&store, &seq, &plan, Parallelism::Sequential).unwrap();
    assert_eq!(f1, again);
}

#[test]
fn aggregation_single_window_is_placement() {
    let cfg = BackboneConfig::default();
    let plan = plan_windows(300, &cfg).unwrap();
    let f = Tensor::from_fn(&[75, 2, 3], |i| i as f64);
    for mode in [AggMode::GarConcat, AggMode::TgalAverage] {
        let mut g = Graph::inference();
        let w = g.input(f.clone());
        let out = aggregate(&mut g, &[w], &plan, 300, 4, mode).unwrap();
        assert_eq!(g.value(out), &f);
    }
}

#[test]
fn gar_concat_doubles_length() {
    let cfg = BackboneConfig::default();
    let plan = plan_windows(400, &cfg).unwrap();
    let mut g = Graph::inference();
    let a = g.input(Tensor::zeros(&[75, 6, 4]));
    let b = g.input(Tensor::full(&[75, 6, 4], 1.0));
    let out = aggregate(&mut g, &[a, b], &plan, 400, 4, AggMode::GarConcat).unwrap();
    assert_eq!(g.shape(out), [150, 6, 4]);
    assert_eq!(g.value(out).get(&[75, 0, 0]), 1.0);
}

#[test]
fn tgal_average_overlap_oracle() {
    // windows of 8 frames, stride 4, ds 4: window outputs of length 2 at
    // positions {0,1} and {1,2}; T = 12 → T_f = 3
    let cfg = BackboneConfig {
        window_len: 8,
        window_stride: 4,
        temporal_kernel: 1,
        layers: vec![LayerSpec { channels: 1, stride: 4 }],
    };
    let plan = plan_windows(12, &cfg).unwrap();
    assert_eq!(plan.windows, vec![(0, 8), (4, 12)]);
    let a = Tensor::new(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = Tensor::new(&[2, 1, 2], vec![10.0, 20.0, 30.0, 40.0]).unwrap();
    let mut g = Graph::inference();
    let (va, vb) = (g.input(a), g.input(b));
    let out = aggregate(&mut g, &[va, vb], &plan, 12, 4, AggMode::TgalAverage).unwrap();
    let want = [1.0, 2.0, (3.0 + 10.0) / 2.0, (4.0 + 20.0) / 2.0, 30.0, 40.0];
    assert_eq!(g.value(out).data(), &want);
}

#[test]
fn tgal_average_of_identical_windows_is_a_window() {
    let cfg = BackboneConfig::default();
    let plan = plan_windows(800, &cfg).unwrap();
    let f = Tensor::full(&[75, 2, 3], 0.7);
    let mut g = Graph::inference();
    let ws: Vec<Var> = (0..plan.len()).map(|_| g.input(f.clone())).collect();
    let out = aggregate(&mut g, &ws, &plan, 800, 4, AggMode::TgalAverage).unwrap();
    assert_eq!(g.shape(out), [200, 2, 3]);
    assert!(g.value(out).data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
}

#[test]
fn uncovered_tail_is_zero_and_invalid() {
    let cfg = BackboneConfig::default();
    let seq = random_sequence(350, 1, 17, 0);
    let plan = plan_windows(350, &cfg).unwrap();
    assert_eq!(plan.len(), 1);
    let layout = scene_layout(&seq, &plan, &cfg, AggMode::TgalAverage);
    assert_eq!(layout.frames(), 88);
    assert!(layout.valid[74]);
    assert!(!layout.valid[75]);
    let mut g = Graph::inference();
    let w = g.input(Tensor::full(&[75, 1, 2], 1.0));
    let out = aggregate(&mut g, &[w], &plan, 350, 4, AggMode::TgalAverage).unwrap();
    assert_eq!(g.value(out).get(&[87, 0, 1]), 0.0);
}

fn aux_setup(init_std: f64) -> (ParamStore, AuxEmbedding, SceneLayout, SkeletonSequence) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let aux = AuxEmbedding::new(
        &mut store,
        AuxConfig {
            init_std,
            time_table_len: 16,
            ..Default::default()
        },
        3,
        &mut rng,
    )
    .unwrap();
    let cfg = small_cfg();
    let seq = random_sequence(36, 2, 5, 6);
    let plan = plan_windows(36, &cfg).unwrap();
    let layout = scene_layout(&seq, &plan, &cfg, AggMode::TgalAverage);
    (store, aux, layout, seq)
}

#[test]
fn zero_embeddings_are_identity() {
    let (store, aux, layout, seq) = aux_setup(0.0);
    let ball = pool_ball(&BallCarrier::from_carriers(&vec![Some(1); 36], 2), &seq, &layout, 4);
    let f = Tensor::from_fn(&[layout.frames(), 2, 3], |i| (i as f64).sin());
    let mut g = Graph::inference();
    let x = g.input(f.clone());
    let y = aux.forward(&mut g, &store, x, &layout, &ball, &[true, false]).unwrap();
    assert_eq!(g.value(y), &f);
}

#[test]
fn team_bit_changes_only_that_column() {
    let (store, aux, layout, seq) = aux_setup(0.3);
    let ball = pool_ball(&BallCarrier::none(36, 2), &seq, &layout, 4);
    let f = Tensor::zeros(&[layout.frames(), 2, 3]);
    let run = |team: &[bool]| {
        let mut g = Graph::inference();
        let x = g.input(f.clone());
        let y = aux.forward(&mut g, &store, x, &layout, &ball, team).unwrap();
        g.value(y).clone()
    };
    let (a, b) = (run(&[true, false]), run(&[true, true]));
    for t in 0..layout.frames() {
        for c in 0..3 {
            assert_eq!(a.get(&[t, 0, c]), b.get(&[t, 0, c]));
            assert_ne!(a.get(&[t, 1, c]), b.get(&[t, 1, c]));
        }
    }
}

#[test]
fn ball_all_ones_is_a_constant_offset() {
    let (store, aux, layout, _) = aux_setup(0.3);
    let f = Tensor::zeros(&[layout.frames(), 2, 3]);
    let run = |ball: &Tensor| {
        let mut g = Graph::inference();
        let x = g.input(f.clone());
        let y = aux.forward(&mut g, &store, x, &layout, ball, &[true, false]).unwrap();
        g.value(y).clone()
    };
    let zero = Tensor::zeros(&[layout.frames(), 2, 1]);
    let ones = Tensor::full(&[layout.frames(), 2, 1], 1.0);
    let (a, b) = (run(&zero), run(&ones));
    let w = store.get(store.id("aux.ball.w").unwrap());
    for t in 0..layout.frames() {
        for n in 0..2 {
            for c in 0..3 {
                let d = b.get(&[t, n, c]) - a.get(&[t, n, c]);
                assert!((d - w.get(&[0, c])).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn short_time_table_is_an_error() {
    let (store, _, _, _) = aux_setup(0.0);
    let mut store2 = ParamStore::new();
    let aux = AuxEmbedding::new(
        &mut store2,
        AuxConfig {
            time_table_len: 4,
            ..Default::default()
        },
        3,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    drop(store);
    let cfg = small_cfg();
    let seq = random_sequence(36, 2, 5, 6);
    let layout = scene_layout(&seq, &plan_windows(36, &cfg).unwrap(), &cfg, AggMode::TgalAverage);
    let ball = Tensor::zeros(&[layout.frames(), 2, 1]);
    let mut g = Graph::inference();
    let x = g.input(Tensor::zeros(&[layout.frames(), 2, 3]));
    assert!(aux.forward(&mut g, &store2, x, &layout, &ball, &[true, false]).is_err());
}

#[test]
fn padding_does_not_count_as_possession() {
    let cfg = BackboneConfig::default();
    let mut seq = random_sequence(41, 1, 17, 0);
    let ball = BallCarrier::from_carriers(&vec![Some(0); 41], 1);
    seq = seq.padded(400).unwrap();
    let ball = ball.padded(400);
    let plan = plan_windows(400, &cfg).unwrap();
    let layout = scene_layout(&seq, &plan, &cfg, AggMode::GarConcat);
    let pooled = pool_ball(&ball, &seq, &layout, 4);
    // rows 0..10 cover frames 0..40, row 10 covers frames 40..44 of which one is real
    assert_eq!(pooled.get(&[9, 0, 0]), 1.0);
    assert_eq!(pooled.get(&[10, 0, 0]), 0.25);
    assert_eq!(pooled.get(&[11, 0, 0]), 0.0);
    assert!(!layout.valid[11]);
}

/// Moves every parameter off its structured initial value (zero biases
/// would otherwise sit exactly on ReLU kinks).
#[test]
fn stgcn_gradient_matches_finite_differences() {
    check_seeds(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let bb = Backbone::new(&mut store, small_cfg(), SkeletonGraph::chain(5), 3, &mut rng).unwrap();
        jitter_params(&mut store, &mut rng);
        let x = Tensor::randn(&[20, 5, 3], 1.0, &mut rng);
        let proj = Tensor::randn(&[5, 5], 1.0, &mut rng);
        grad_check(
            |g, x| {
                let y = bb.forward(g, &store, x).map_err(to_numerics)?;
                let p = g.input(proj.clone());
                let z = g.mul(y, p)?;
                Ok(g.sum_all(z))
            },
            &x,
            GradCheckConfig::default(),
        )
        .unwrap()
    });
}

#[test]
fn stgcn_weight_gradients_match_finite_differences() {
    check_seeds(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
        let mut store = ParamStore::new();
        let bb = Backbone::new(&mut store, small_cfg(), SkeletonGraph::chain(5), 3, &mut rng).unwrap();
        jitter_params(&mut store, &mut rng);
        let x = Tensor::randn(&[20, 5, 3], 1.0, &mut rng);
        let ids: Vec<_> = store.ids().collect();
        grad_check_params(
            |g, s| {
                let xi = g.input(x.clone());
                let y = bb.forward(g, s, xi).map_err(to_numerics)?;
                let sq = g.square(y);
                Ok(g.sum_all(sq))
            },
            &store,
            &ids,
            12,
            GradCheckConfig::default(),
        )
        .unwrap()
    });
}

#[test]
fn aggregate_and_aux_gradients() {
    check_seeds(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (store, aux, layout, seq) = {
            let (_, _, layout, seq) = aux_setup(0.3);
            let mut store = ParamStore::new();
            let aux = AuxEmbedding::new(
                &mut store,
                AuxConfig {
                    init_std: 0.5,
                    time_table_len: 16,
                    ..Default::default()
                },
                3,
                &mut rng,
            )
            .unwrap();
            (store, aux, layout, seq)
        };
        let cfg = small_cfg();
        let plan = plan_windows(36, &cfg).unwrap();
        let ball = pool_ball(&BallCarrier::from_carriers(&vec![Some(0); 36], 2), &seq, &layout, 4);
        let nw = plan.len();
        let point = Tensor::randn(&[nw * 5, 2, 3], 1.0, &mut rng);
        let proj = Tensor::randn(&[layout.frames(), 2, 3], 1.0, &mut rng);
        grad_check(
            |g, x| {
                let ws: Vec<Var> = (0..nw).map(|w| g.slice(x, 0, w * 5, w * 5 + 5)).collect::<Result<_, _>>()?;
                let f = aggregate(g, &ws, &plan, 36, 4, AggMode::TgalAverage).unwrap();
                let y = aux.forward(g, &store, f, &layout, &ball, &[false, true]).unwrap();
                let p = g.input(proj.clone());
                let z = g.mul(y, p)?;
                let z = g.tanh(z);
                Ok(g.sum_all(z))
            },
            &point,
            GradCheckConfig::default(),
        )
        .unwrap()
    });
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn window_count_formula(wl in 1usize..400, ws_frac in 0.0f64..1.0, extra in 0usize..1000) {
            let ws = ((ws_frac * wl as f64) as usize).max(1);
            let t = wl + extra;
            let cfg = BackboneConfig { window_len: wl, window_stride: ws, ..Default::default() };
            let plan = plan_windows(t, &cfg).unwrap();
            prop_assert_eq!(plan.len(), (t - wl) / ws + 1);
            for &(s, e) in &plan.windows {
                prop_assert!(e <= t && e - s == wl);
            }
        }
    }
}
