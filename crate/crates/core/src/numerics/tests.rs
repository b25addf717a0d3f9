use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(shape: &[usize], v: &[Real]) -> Tensor {
    Tensor::new(shape, v.to_vec()).unwrap()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Contracts an arbitrary-shape output with a fixed random tensor so every
/// output coordinate contributes to the checked scalar.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var, NumericsError> {
    let w = Tensor::randn(g.shape(y), 1.0, &mut rng(seed ^ 0xabc));
    let wv = g.input(w);
    let p = g.mul(y, wv)?;
    Ok(g.sum_all(p))
}

fn check<F>(point: &Tensor, f: F)
where
    F: Fn(&mut Graph, Var) -> Result<Var, NumericsError>,
{
    let r = grad_check(f, point, GradCheckConfig::default()).unwrap();
    assert!(
        r.passed,
        "max rel err {} non-smooth {}",
        r.max_rel_err, r.non_smooth
    );
}

#[test]
fn matmul_hand_example() {
    let mut g = Graph::new();
    let a = g.input(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = g.input(t(&[2, 1], &[1.0, 1.0]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[3.0, 7.0]);
    assert_eq!(g.shape(c), &[2, 1]);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut g = Graph::new();
    let a = g.input(t(&[2], &[0.0, 0.0]));
    let s = g.softmax(a, 0).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);
}

#[test]
fn softmax_rows_sum_to_one_on_any_axis() {
    let x = Tensor::randn(&[3, 4, 5], 3.0, &mut rng(1));
    for axis in 0..3 {
        let mut g = Graph::new();
        let a = g.input(x.clone());
        let s = g.softmax(a, axis).unwrap();
        let sums = g.sum(s, axis).unwrap();
        for v in g.value(sums).data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn relu_of_negated_positive_is_zero() {
    let mut g = Graph::new();
    let a = g.input(t(&[3], &[-0.5, -2.0, -1e-3]));
    let r = g.relu(a);
    assert!(g.value(r).data().iter().all(|&v| v == 0.0));
}

#[test]
fn shape_mismatch_errors() {
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[2, 3]));
    assert!(g.matmul(a, b).is_err());
    let c = g.input(Tensor::zeros(&[2]));
    assert!(g.add(a, c).is_err());
}

#[test]
fn sum_of_squares_gradient() {
    let mut g = Graph::new();
    let x = g.variable(t(&[2], &[1.0, 2.0]));
    let sq = g.square(x);
    let l = g.sum_all(sq);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn constant_loss_gives_zero_gradients() {
    let mut store = ParamStore::new();
    let id = store.insert("w", t(&[2], &[0.3, -0.7])).unwrap();
    let mut g = Graph::new();
    let w = g.param(&store, id);
    let z = g.scale(w, 0.0);
    let l = g.sum_all(z);
    let l = g.add_scalar(l, 5.0);
    let grads = g.backward(l).unwrap();
    let pg = grads.param_grads();
    assert_eq!(pg.len(), 1);
    assert!(pg[0].1.data().iter().all(|&v| v == 0.0));
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(x), Err(NumericsError::NonScalarLoss(_))));
}

#[test]
fn chained_matmul_softmax_sum_matches_finite_differences() {
    let w = Tensor::randn(&[3, 3], 1.0, &mut rng(11));
    let point = Tensor::randn(&[3, 3], 1.0, &mut rng(12));
    check(&point, |g, x| {
        let wv = g.input(w.clone());
        let m = g.matmul(x, wv)?;
        let s = g.softmax(m, 1)?;
        project(g, s, 3)
    });
}

#[test]
fn backward_is_bitwise_deterministic() {
    let run = || {
        let mut g = Graph::new();
        let x = g.variable(Tensor::randn(&[4, 6], 1.0, &mut rng(5)));
        let w = g.input(Tensor::randn(&[6, 6], 1.0, &mut rng(6)));
        let m = g.matmul(x, w).unwrap();
        let s = g.softmax(m, 1).unwrap();
        let l = project(&mut g, s, 9).unwrap();
        g.backward(l).unwrap().wrt(x).unwrap().clone()
    };
    assert_eq!(run().data(), run().data());
}

#[test]
fn elementwise_and_unary_gradients() {
    let point = Tensor::randn(&[2, 3], 0.8, &mut rng(21));
    let other = Tensor::randn(&[3], 1.0, &mut rng(22));
    check(&point, |g, x| {
        let b = g.input(other.clone());
        let a1 = g.add(x, b)?;
        let m = g.mul(a1, x)?;
        let s = g.sub(m, b)?;
        let sg = g.sigmoid(s);
        let th = g.tanh(x);
        let sp = g.softplus(th);
        let e = g.exp(sp);
        let l = g.log(e);
        let c = g.concat(&[sg, l], 1)?;
        let sc = g.scale(c, 1.7);
        project(g, sc, 4)
    });
}

#[test]
fn broadcast_operand_receives_summed_gradient() {
    let base = Tensor::randn(&[4, 3], 1.0, &mut rng(31));
    let point = Tensor::randn(&[3], 1.0, &mut rng(32));
    check(&point, |g, b| {
        let a = g.input(base.clone());
        let m = g.mul(a, b)?;
        let s = g.add(m, b)?;
        project(g, s, 5)
    });
}

#[test]
fn matmul_variants_gradients() {
    let point = Tensor::randn(&[2, 3, 4], 1.0, &mut rng(41));
    let shared = Tensor::randn(&[4, 5], 1.0, &mut rng(42));
    let batched = Tensor::randn(&[2, 5, 4], 1.0, &mut rng(43));
    check(&point, |g, x| {
        let w = g.input(shared.clone());
        let y = g.matmul(x, w)?;
        let b = g.input(batched.clone());
        let z = g.matmul_t(x, b)?;
        let c = g.concat(&[y, z], 2)?;
        project(g, c, 6)
    });
    // gradient with respect to the shared and batched right operands
    let left = point.clone();
    check(&shared, |g, w| {
        let x = g.input(left.clone());
        let y = g.matmul(x, w)?;
        project(g, y, 7)
    });
    let wt = Tensor::randn(&[5, 4], 1.0, &mut rng(44));
    check(&wt, |g, w| {
        let x = g.input(left.clone());
        let y = g.matmul_t(x, w)?;
        project(g, y, 8)
    });
    check(&batched, |g, b| {
        let x = g.input(left.clone());
        let y = g.matmul_t(x, b)?;
        project(g, y, 9)
    });
}

#[test]
fn layer_norm_gradient() {
    let point = Tensor::randn(&[3, 5], 2.0, &mut rng(51));
    let gamma = Tensor::randn(&[5], 1.0, &mut rng(52));
    let beta = Tensor::randn(&[5], 1.0, &mut rng(53));
    check(&point, |g, x| {
        let ga = g.input(gamma.clone());
        let be = g.input(beta.clone());
        let y = g.layer_norm(x, ga, be, 1e-5)?;
        project(g, y, 10)
    });
}

#[test]
fn conv1d_gradients_for_input_weight_and_bias() {
    let x0 = Tensor::randn(&[9, 2, 3], 1.0, &mut rng(61));
    let w0 = Tensor::randn(&[3, 3, 4], 0.5, &mut rng(62));
    let b0 = Tensor::randn(&[4], 0.5, &mut rng(63));
    for (stride, pad) in [(1, 1), (2, 1), (2, 0)] {
        let (w, b) = (w0.clone(), b0.clone());
        check(&x0, move |g, x| {
            let wv = g.input(w.clone());
            let bv = g.input(b.clone());
            let y = g.conv1d(x, wv, Some(bv), stride, pad)?;
            project(g, y, 11)
        });
        let (x, b) = (x0.clone(), b0.clone());
        check(&w0, move |g, w| {
            let xv = g.input(x.clone());
            let bv = g.input(b.clone());
            let y = g.conv1d(xv, w, Some(bv), stride, pad)?;
            project(g, y, 12)
        });
        let (x, w) = (x0.clone(), w0.clone());
        check(&b0, move |g, b| {
            let xv = g.input(x.clone());
            let wv = g.input(w.clone());
            let y = g.conv1d(xv, wv, Some(b), stride, pad)?;
            project(g, y, 13)
        });
    }
}

#[test]
fn conv1d_output_length_and_hand_value() {
    let mut g = Graph::new();
    // T=4, V=1, Cin=1; kernel [1, 1, 1] sums a 3-frame neighborhood.
    let x = g.input(t(&[4, 1, 1], &[1.0, 2.0, 3.0, 4.0]));
    let w = g.input(t(&[3, 1, 1], &[1.0, 1.0, 1.0]));
    let y = g.conv1d(x, w, None, 1, 1).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 6.0, 9.0, 7.0]);
    let y2 = g.conv1d(x, w, None, 2, 1).unwrap();
    assert_eq!(g.value(y2).data(), &[3.0, 9.0]);
}

#[test]
fn graph_conv_gradient_and_value() {
    let adj = Tensor::randn(&[4, 4], 0.5, &mut rng(71));
    let point = Tensor::randn(&[3, 4, 2], 1.0, &mut rng(72));
    let a2 = adj.clone();
    check(&point, move |g, x| {
        let y = g.graph_conv(x, &a2)?;
        project(g, y, 14)
    });
    let mut g = Graph::new();
    let x = g.input(point.clone());
    let y = g.graph_conv(x, &adj).unwrap();
    let want: Real = (0..4).map(|u| adj.get(&[2, u]) * point.get(&[1, u, 0])).sum();
    assert!((g.value(y).get(&[1, 2, 0]) - want).abs() < 1e-12);
}

#[test]
fn reductions_and_reshape_gradients() {
    let point = Tensor::randn(&[3, 4, 2], 1.0, &mut rng(81));
    check(&point, |g, x| {
        let s = g.sum(x, 0)?;
        let m = g.mean(x, 1)?;
        let mx = g.max(x, 2)?;
        let s2 = g.reshape(s, &[8])?;
        let m2 = g.reshape(m, &[6])?;
        let mx2 = g.reshape(mx, &[12])?;
        let c = g.concat(&[s2, m2, mx2], 0)?;
        project(g, c, 15)
    });
}

#[test]
fn permute_slice_embedding_gradients() {
    let point = Tensor::randn(&[2, 3, 4], 1.0, &mut rng(91));
    check(&point, |g, x| {
        let p = g.permute(x, &[2, 0, 1])?;
        let s = g.slice(p, 0, 1, 3)?;
        let tr = g.transpose(s, 1, 2)?;
        project(g, tr, 16)
    });
    let table = Tensor::randn(&[5, 3], 1.0, &mut rng(92));
    check(&table, |g, tb| {
        let e = g.embedding(tb, &[4, 0, 4, 2])?;
        project(g, e, 17)
    });
    let mut g = Graph::new();
    let tb = g.input(table);
    assert!(g.embedding(tb, &[5]).is_err());
}

#[test]
fn focal_scalar_examples() {
    let fp = FocalParams::default();
    let v = focal_loss(&t(&[1], &[0.9]), &t(&[1], &[1.0]), fp).unwrap();
    let want = 0.25 * 0.01 * -(0.9 as Real).ln();
    assert!((v - want).abs() < 1e-15);
    assert!((v - 2.634e-4).abs() < 1e-7);

    let ce = FocalParams {
        gamma: 0.0,
        alpha: 1.0,
        negative_penalty: None,
    };
    let v = focal_loss(&t(&[1], &[0.5]), &t(&[1], &[1.0]), ce).unwrap();
    assert!((v - std::f64::consts::LN_2).abs() < 1e-12);

    let near_one = focal_loss(&t(&[1], &[1.0 - 1e-6]), &t(&[1], &[1.0]), fp).unwrap();
    assert!(near_one < 1e-15);
    assert!(focal_loss(&t(&[1], &[1.5]), &t(&[1], &[1.0]), fp).is_err());
    assert!(focal_loss(&t(&[1], &[Real::NAN]), &t(&[1], &[1.0]), fp).is_err());
}

#[test]
fn focal_gradient_through_sigmoid_logits() {
    let logits = Tensor::randn(&[4, 3], 1.5, &mut rng(101));
    let hard = Tensor::from_fn(&[4, 3], |i| if i % 4 == 1 { 1.0 } else { 0.0 });
    let soft = Tensor::from_fn(&[4, 3], |i| if i % 5 == 0 { 1.0 } else { (i as Real) / 13.0 });
    for (targets, penalty) in [(hard, None), (soft, Some(4.0))] {
        let fp = FocalParams {
            negative_penalty: penalty,
            ..Default::default()
        };
        check(&logits, |g, z| {
            let p = g.sigmoid(z);
            g.focal(p, &targets, fp, 12.0)
        });
    }
}

#[test]
fn diou_scalar_examples() {
    assert!(diou_loss_1d((1.0, 4.0), (1.0, 4.0)).unwrap().abs() < 1e-15);
    let v = diou_loss_1d((0.0, 2.0), (1.0, 3.0)).unwrap();
    assert!((v - (1.0 - 1.0 / 3.0 + 1.0 / 9.0)).abs() < 1e-12);
    let v = diou_loss_1d((0.0, 1.0), (3.0, 4.0)).unwrap();
    assert!((v - 1.5625).abs() < 1e-12);
    assert!(diou_loss_1d((0.0, 1.0), (2.0, 2.0)).is_err());
}

#[test]
fn diou_gradient_in_each_overlap_regime() {
    // centers/halves chosen away from the piecewise kinks
    let gt = vec![(2.0, 6.0), (0.0, 3.0), (10.0, 11.0), (4.0, 9.0)];
    let center = t(&[4], &[4.6, 1.1, 7.3, 6.2]);
    let half = t(&[4], &[1.3, 2.4, 0.7, 3.1]);
    let h2 = half.clone();
    let gt2 = gt.clone();
    check(&center, move |g, c| {
        let h = g.input(h2.clone());
        g.diou(c, h, &gt2)
    });
    check(&half, move |g, h| {
        let c = g.input(center.clone());
        g.diou(c, h, &gt)
    });
}
