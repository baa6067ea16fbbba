mod common;

use attsf::loss::{composite_loss, mae_graph, ssim_graph, LossConfig};
use attsf::nn::{
    AttsfModel, Bound, DualAttention, GlobalLocal, ModelConfig, ParamBuilder, ParamStore,
    TripleLocal,
};
use attsf::ops::{Padding, PoolAxis, PoolMode, SpatialAxis};
use attsf::{Graph, RngState, Tensor, Var};
use common::gradcheck::{check, random, relative_error, STEP};

const TOL: f64 = 1e-4;
const COORDS: usize = 10;

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    random(shape, &mut RngState::new(seed), -1.0, 1.0)
}

#[test]
fn conv2d_same_and_valid() {
    for (stride, padding) in [
        (1, Padding::Same),
        (2, Padding::Same),
        (1, Padding::Valid),
        (2, Padding::Valid),
    ] {
        let inputs = [
            rand(&[2, 7, 6, 3], 1),
            rand(&[3, 3, 3, 4], 2),
            rand(&[4], 3),
        ];
        let err = check(&inputs, COORDS, 10, |g, v| {
            g.conv2d(v[0], v[1], v[2], stride, padding).unwrap()
        });
        assert!(err < TOL, "stride {stride} {padding:?}: {err}");
    }
}

#[test]
fn conv2d_pointwise_and_wide() {
    let inputs = [
        rand(&[1, 5, 5, 2], 4),
        rand(&[5, 5, 2, 3], 5),
        rand(&[3], 6),
    ];
    let err = check(&inputs, COORDS, 11, |g, v| {
        g.conv2d(v[0], v[1], v[2], 1, Padding::Same).unwrap()
    });
    assert!(err < TOL, "{err}");
    let inputs = [
        rand(&[2, 4, 4, 3], 7),
        rand(&[1, 1, 3, 2], 8),
        rand(&[2], 9),
    ];
    let err = check(&inputs, COORDS, 12, |g, v| {
        g.conv2d(v[0], v[1], v[2], 1, Padding::Same).unwrap()
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn pooling_and_resampling() {
    let x = [rand(&[2, 6, 6, 3], 20)];
    assert!(check(&x, COORDS, 1, |g, v| g.maxpool2d(v[0], 2, 2).unwrap()) < TOL);
    assert!(check(&x, COORDS, 2, |g, v| g.upsample_nearest(v[0], 2).unwrap()) < TOL);
    for mode in [PoolMode::Avg, PoolMode::Max] {
        for axis in [PoolAxis::Spatial, PoolAxis::Channel] {
            let err = check(&x, COORDS, 3, |g, v| {
                g.pool_global(v[0], mode, axis).unwrap()
            });
            assert!(err < TOL, "{mode:?} {axis:?}: {err}");
        }
    }
}

#[test]
fn activations() {
    let x = [random(&[3, 4, 5], &mut RngState::new(30), -3.0, 3.0)];
    assert!(check(&x, COORDS, 1, |g, v| g.relu(v[0])) < TOL);
    assert!(check(&x, COORDS, 2, |g, v| g.leaky_relu(v[0], 0.2)) < TOL);
    assert!(check(&x, COORDS, 3, |g, v| g.sigmoid(v[0])) < TOL);
    assert!(check(&x, COORDS, 4, |g, v| g.abs(v[0])) < TOL);
}

#[test]
fn elementwise_arithmetic() {
    let a = rand(&[2, 3, 4], 40);
    let b = random(&[2, 3, 4], &mut RngState::new(41), 0.5, 2.0);
    let ab = [a.clone(), b];
    assert!(check(&ab, COORDS, 1, |g, v| g.add(v[0], v[1]).unwrap()) < TOL);
    assert!(check(&ab, COORDS, 2, |g, v| g.sub(v[0], v[1]).unwrap()) < TOL);
    assert!(check(&ab, COORDS, 3, |g, v| g.mul(v[0], v[1]).unwrap()) < TOL);
    assert!(check(&ab, COORDS, 4, |g, v| g.div(v[0], v[1]).unwrap()) < TOL);
    let x = [a];
    assert!(check(&x, COORDS, 5, |g, v| g.scale(v[0], -2.5)) < TOL);
    assert!(check(&x, COORDS, 6, |g, v| g.add_scalar(v[0], 0.7)) < TOL);
    assert!(check(&x, COORDS, 7, |g, v| g.sum(v[0])) < TOL);
    assert!(check(&x, COORDS, 8, |g, v| g.mean(v[0])) < TOL);
}

#[test]
fn channel_plumbing() {
    let a = rand(&[2, 3, 3, 2], 50);
    let b = rand(&[2, 3, 3, 3], 51);
    let err = check(&[a.clone(), b.clone()], COORDS, 1, |g, v| {
        g.concat(&[v[0], v[1]]).unwrap()
    });
    assert!(err < TOL, "{err}");
    assert!(
        check(std::slice::from_ref(&b), COORDS, 2, |g, v| g
            .slice_channels(v[0], 1, 2)
            .unwrap())
            < TOL
    );
    for mask_shape in [[2, 1, 1, 3], [2, 3, 3, 1]] {
        let err = check(&[b.clone(), rand(&mask_shape, 52)], COORDS, 3, |g, v| {
            g.mul_broadcast(v[0], v[1]).unwrap()
        });
        assert!(err < TOL, "{mask_shape:?}: {err}");
    }
    assert!(check(&[a], COORDS, 4, |g, v| g.reshape(v[0], &[2, 9, 2]).unwrap()) < TOL);
}

#[test]
fn matmul_transpose_softmax() {
    let ab = [rand(&[2, 3, 4], 60), rand(&[2, 4, 5], 61)];
    assert!(check(&ab, COORDS, 1, |g, v| g.matmul(v[0], v[1]).unwrap()) < TOL);
    let x = [rand(&[2, 3, 4], 62)];
    assert!(check(&x, COORDS, 2, |g, v| g.transpose(v[0]).unwrap()) < TOL);
    let x = [random(&[2, 4, 6], &mut RngState::new(63), -2.0, 2.0)];
    assert!(check(&x, COORDS, 3, |g, v| g.softmax(v[0])) < TOL);
}

#[test]
fn separable_filter() {
    let taps = [0.1, 0.25, 0.3, 0.25, 0.1];
    let x = [rand(&[2, 7, 6, 2], 70)];
    for axis in [SpatialAxis::Height, SpatialAxis::Width] {
        let err = check(&x, COORDS, 1, |g, v| g.filter1d(v[0], &taps, axis).unwrap());
        assert!(err < TOL, "{axis:?}: {err}");
    }
}

#[test]
fn losses() {
    let cfg = LossConfig {
        ssim_window: 5,
        ..LossConfig::default()
    };
    let pair = [
        random(&[2, 8, 8, 3], &mut RngState::new(80), 0.0, 1.0),
        random(&[2, 8, 8, 3], &mut RngState::new(81), 0.0, 1.0),
    ];
    let err = check(&pair, COORDS, 1, |g, v| {
        ssim_graph(g, v[0], v[1], &cfg).unwrap()
    });
    assert!(err < TOL, "ssim {err}");
    let err = check(&pair, COORDS, 2, |g, v| mae_graph(g, v[0], v[1]).unwrap());
    assert!(err < TOL, "mae {err}");
    let full = [
        random(&[1, 12, 12, 3], &mut RngState::new(82), 0.0, 1.0),
        random(&[1, 12, 12, 3], &mut RngState::new(83), 0.0, 1.0),
    ];
    let err = check(&full, COORDS, 3, |g, v| {
        composite_loss(g, v[0], v[1], &LossConfig::default()).unwrap()
    });
    assert!(err < TOL, "composite {err}");
}

/// Gradient check through a block whose parameters live in `params`.
fn check_block<F>(params: &ParamStore<f64>, x: &Tensor<f64>, seed: u64, f: F) -> f64
where
    F: Fn(&mut Graph<f64>, &Bound, Var) -> Var,
{
    let mut inputs = vec![x.clone()];
    inputs.extend(params.tensors().iter().cloned());
    check(&inputs, COORDS, seed, |g, v| {
        let bound = Bound::from_vars(v[1..].to_vec());
        f(g, &bound, v[0])
    })
}

#[test]
fn attention_and_bottleneck_blocks() {
    let mut rng = RngState::new(90);
    let mut params = ParamStore::new();
    let dual = DualAttention::new(&mut ParamBuilder::new(&mut params, &mut rng), 3, 4).unwrap();
    let x = rand(&[2, 6, 6, 3], 91);
    let err = check_block(&params, &x, 1, |g, p, v| dual.forward(g, p, v).unwrap());
    assert!(err < TOL, "dual attention {err}");

    let mut params = ParamStore::new();
    let tl =
        TripleLocal::new(&mut ParamBuilder::new(&mut params, &mut rng), 4, &[1, 3, 5]).unwrap();
    let x = rand(&[1, 5, 5, 4], 92);
    let err = check_block(&params, &x, 2, |g, p, v| tl.forward(g, p, v).unwrap());
    assert!(err < TOL, "triple local {err}");

    let mut params = ParamStore::new();
    let gl = GlobalLocal::new(&mut ParamBuilder::new(&mut params, &mut rng), 4, 2).unwrap();
    let x = rand(&[2, 3, 4, 4], 93);
    let err = check_block(&params, &x, 3, |g, p, v| gl.forward(g, p, v).unwrap());
    assert!(err < TOL, "global local {err}");
}

#[test]
fn whole_toy_model() {
    let cfg = ModelConfig::toy(2, 2);
    let mut model = AttsfModel::<f64>::new(&cfg, &mut RngState::new(100)).unwrap();
    let mut rng = RngState::new(101);
    // Zero biases put ReLU inputs at exactly 0 wherever a receptive field is
    // entirely dead, which is a kink. Small random biases move off it.
    let names = model.params.names().to_vec();
    for (name, t) in names.iter().zip(model.params.tensors_mut()) {
        if name.ends_with(".bias") {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.uniform_range(-0.1, 0.1));
        }
    }
    let left = random(&[1, 8, 8, 3], &mut rng, 0.0, 1.0);
    let right = random(&[1, 8, 8, 3], &mut rng, 0.0, 1.0);
    let target = random(&[1, 8, 8, 3], &mut rng, 0.0, 1.0);
    let loss_cfg = LossConfig {
        ssim_window: 5,
        ..LossConfig::default()
    };
    let loss_of = |params: &ParamStore<f64>| -> (f64, Vec<Tensor<f64>>) {
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let l = g.constant(left.clone());
        let r = g.constant(right.clone());
        let t = g.constant(target.clone());
        let y = model.forward(&mut g, &p, l, r).unwrap();
        let loss = composite_loss(&mut g, y, t, &loss_cfg).unwrap();
        let value = g.value(loss).data()[0];
        let mut grads = g.backward(loss).unwrap();
        (value, p.collect(&mut grads))
    };
    let (_, analytic) = loss_of(&model.params);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let t = rng.below(model.params.len());
        let j = rng.below(model.params.tensors()[t].len());
        let mut plus = model.params.clone();
        plus.tensors_mut()[t].data_mut()[j] += STEP;
        let mut minus = model.params.clone();
        minus.tensors_mut()[t].data_mut()[j] -= STEP;
        let numeric = (loss_of(&plus).0 - loss_of(&minus).0) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic[t].data()[j], numeric, 1e-3));
    }
    assert!(worst < 1e-3, "{worst}");
}
