mod common;

use std::fs;

use attsf::nn::{AttsfModel, ModelConfig, ParamStore};
use attsf::train::{
    adam_step, checkpoint_file_name, lr_schedule, sgd_step, AdamConfig, AdamState, Checkpoint,
    PhaseConfig, TrainConfig, Trainer, METRICS_FILE, METRICS_HEADER,
};
use attsf::{Error, RngState, Tensor};
use common::fixtures::synthetic_patches;
use common::gradcheck::random;
use proptest::prelude::*;

fn random_store(rng: &mut RngState) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.insert("a".into(), random(&[3, 2], rng, -1.0, 1.0))
        .unwrap();
    s.insert("b".into(), random(&[4], rng, -1.0, 1.0)).unwrap();
    s
}

fn random_grads(store: &ParamStore<f64>, rng: &mut RngState) -> Vec<Tensor<f64>> {
    store
        .tensors()
        .iter()
        .map(|t| random(t.shape(), rng, -2.0, 2.0))
        .collect()
}

#[test]
fn adam_first_step_is_a_sign_step() {
    let mut s = ParamStore::new();
    s.insert("w".into(), Tensor::<f64>::full(vec![3], 1.0).unwrap())
        .unwrap();
    let mut state = AdamState::new(&s, AdamConfig::default());
    let g = Tensor::new(vec![3], vec![0.5, 3.0, 1e-3]).unwrap();
    adam_step(&mut s, std::slice::from_ref(&g), &mut state, 1e-3).unwrap();
    for (p, gv) in s.tensors()[0].data().iter().zip(g.data()) {
        let expected = 1.0 - 1e-3 * gv / (gv + 1e-8);
        assert!((p - expected).abs() < 1e-15);
        assert!(((1.0 - p) - 1e-3).abs() < 1e-7);
    }
}

#[test]
fn adam_matches_hand_loop() {
    let mut rng = RngState::new(1);
    let mut store = random_store(&mut rng);
    let mut state = AdamState::new(&store, AdamConfig::default());
    let mut p: Vec<f64> = store
        .tensors()
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect();
    let (mut m, mut v) = (vec![0.0; p.len()], vec![0.0; p.len()]);
    let lr = 0.01;
    for t in 1..=25 {
        let grads = random_grads(&store, &mut rng);
        let flat: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
        adam_step(&mut store, &grads, &mut state, lr).unwrap();
        for i in 0..p.len() {
            m[i] = 0.9 * m[i] + 0.1 * flat[i];
            v[i] = 0.999 * v[i] + 0.001 * flat[i] * flat[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            p[i] -= lr * mh / (vh.sqrt() + 1e-8);
        }
    }
    let got: Vec<f64> = store
        .tensors()
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect();
    for (a, b) in got.iter().zip(&p) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(state.step, 25);
}

#[test]
fn adam_engines_stay_bit_identical() {
    let mut rng = RngState::new(2);
    let init: ParamStore<f32> = random_store(&mut rng).cast();
    let (mut a, mut b) = (init.clone(), init.clone());
    let mut sa = AdamState::new(&a, AdamConfig::default());
    let mut sb = AdamState::new(&b, AdamConfig::default());
    for _ in 0..100 {
        let grads: Vec<Tensor<f32>> = random_grads(&random_store(&mut rng), &mut rng)
            .iter()
            .map(|g| g.cast())
            .collect();
        adam_step(&mut a, &grads, &mut sa, 1e-3).unwrap();
        adam_step(&mut b, &grads, &mut sb, 1e-3).unwrap();
    }
    assert_eq!(a, b);
    assert_eq!(sa, sb);
}

#[test]
fn sgd_matches_hand_loop() {
    let mut rng = RngState::new(3);
    let mut store = random_store(&mut rng);
    let before = store.clone();
    let grads = random_grads(&store, &mut rng);
    sgd_step(&mut store, &grads, 0.05).unwrap();
    for ((after, before), g) in store.tensors().iter().zip(before.tensors()).zip(&grads) {
        for i in 0..after.len() {
            assert_eq!(after.data()[i], before.data()[i] - 0.05 * g.data()[i]);
        }
    }
    let zeros: Vec<Tensor<f64>> = store
        .tensors()
        .iter()
        .map(|t| Tensor::zeros(t.shape().to_vec()).unwrap())
        .collect();
    let snapshot = store.clone();
    sgd_step(&mut store, &zeros, 0.05).unwrap();
    assert_eq!(store, snapshot);
}

proptest! {
    #[test]
    fn schedule_is_a_halving_step_function(epoch in 0usize..100, base in 1e-6f64..1.0) {
        let lr = lr_schedule(epoch, base);
        prop_assert_eq!(lr, base * 0.5f64.powi((epoch / 20) as i32));
        if epoch % 20 != 19 {
            prop_assert_eq!(lr_schedule(epoch + 1, base), lr);
        } else {
            prop_assert_eq!(lr_schedule(epoch + 1, base), lr / 2.0);
        }
    }

    #[test]
    fn sgd_update_is_linear_in_lr(lr in 1e-4f64..1.0, seed in 0u64..100) {
        let mut rng = RngState::new(seed);
        let start = random_store(&mut rng);
        let grads = random_grads(&start, &mut rng);
        let mut one = start.clone();
        let mut two = start.clone();
        sgd_step(&mut one, &grads, lr).unwrap();
        sgd_step(&mut two, &grads, 2.0 * lr).unwrap();
        for ((a, b), s) in one.tensors().iter().zip(two.tensors()).zip(start.tensors()) {
            for i in 0..s.len() {
                let d1 = a.data()[i] - s.data()[i];
                let d2 = b.data()[i] - s.data()[i];
                prop_assert!((d2 - 2.0 * d1).abs() < 1e-12);
            }
        }
    }
}

fn quick_config(phase1_epochs: usize, phase2_epochs: usize) -> TrainConfig {
    TrainConfig {
        phase1: PhaseConfig {
            lr: 1e-3,
            batch: 2,
            epochs: phase1_epochs,
            ..PhaseConfig::pretrain()
        },
        phase2: PhaseConfig {
            lr: 1e-2,
            batch: 2,
            epochs: phase2_epochs,
            lr_half_every: 2,
            ..PhaseConfig::finetune()
        },
        seed: 5,
        checkpoint_every: 0,
        augment: true,
        ..TrainConfig::default()
    }
}

fn toy_model(seed: u64) -> AttsfModel<f32> {
    AttsfModel::new(&ModelConfig::toy(2, 4), &mut RngState::new(seed)).unwrap()
}

#[test]
fn smoke_single_epoch_writes_one_row_and_one_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_patches(4, 64, 3.0, 1);
    let (_, log) = attsf::train::train(
        toy_model(0),
        &data,
        &[],
        &quick_config(1, 0),
        Some(dir.path()),
    )
    .unwrap();
    assert_eq!(log.len(), 1);
    let metrics = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], METRICS_HEADER);
    assert!(lines[1].starts_with("1,1,0.001,"));
    let ckpts: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "ckpt"))
        .collect();
    assert_eq!(ckpts.len(), 1);
    assert_eq!(ckpts[0].file_name(), checkpoint_file_name(1, 1).as_str());
}

#[test]
fn phases_switch_optimizer_loss_and_rate() {
    let data = synthetic_patches(2, 32, 2.0, 2);
    let val = synthetic_patches(1, 32, 2.0, 3);
    let mut trainer = Trainer::new(toy_model(1), quick_config(1, 3)).unwrap();
    let log = trainer.run(&data, &val, None).unwrap();
    let phases: Vec<(u8, u64, f64)> = log.iter().map(|r| (r.phase, r.epoch, r.lr)).collect();
    assert_eq!(
        phases,
        [(1, 1, 1e-3), (2, 1, 1e-2), (2, 2, 1e-2), (2, 3, 5e-3)]
    );
    assert!(log.iter().all(|r| r.val.is_some()));
    // Adam only ran during the single phase-1 epoch (one batch of two).
    assert_eq!(trainer.checkpoint().adam_step, 1);
    assert_eq!(trainer.progress().step, 4);
    assert!(trainer.finished());
}

#[test]
fn empty_dataset_is_rejected() {
    let err = attsf::train::train(toy_model(0), &[], &[], &quick_config(1, 0), None).unwrap_err();
    assert!(matches!(err, Error::EmptyDataset));
}

#[test]
fn nan_loss_aborts_and_keeps_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let good = synthetic_patches(2, 32, 2.0, 4);
    let mut trainer = Trainer::new(toy_model(2), quick_config(1, 0)).unwrap();
    trainer.run(&good, &[], Some(dir.path())).unwrap();
    let path = dir.path().join(checkpoint_file_name(1, 1));
    let saved = fs::read(&path).unwrap();

    let mut bad = good.clone();
    bad[0].target.data_mut()[0] = f32::NAN;
    let ckpt = Checkpoint::load(&path).unwrap();
    let mut resumed = Trainer::resume(&ckpt, quick_config(2, 0)).unwrap();
    let err = resumed.run(&bad, &[], Some(dir.path())).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
    assert_eq!(fs::read(&path).unwrap(), saved);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_patches(2, 32, 2.0, 5);
    let mut trainer = Trainer::new(toy_model(3), quick_config(3, 0)).unwrap();
    trainer.run_epoch(&data).unwrap();
    let ckpt = trainer.checkpoint();
    let path = dir.path().join("x.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.to_bytes(), fs::read(&path).unwrap());
    for ((na, ta), (nb, tb)) in ckpt.records.iter().zip(&loaded.records) {
        assert_eq!(na, nb);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(ta), bits(tb), "{na}");
    }
    assert_eq!(loaded.rng, ckpt.rng);
    assert_eq!(loaded.adam_step, 1);

    let model = loaded.model().unwrap();
    let x = &data[0];
    let shape = [1, 32, 32, 3];
    let l = x.left.clone().reshape(shape.to_vec()).unwrap();
    let r = x.right.clone().reshape(shape.to_vec()).unwrap();
    let before = trainer.model().infer(&l, &r).unwrap();
    let after = model.infer(&l, &r).unwrap();
    assert_eq!(
        before
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>(),
        after.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );

    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
    assert!(matches!(
        Checkpoint::load(&path),
        Err(Error::CorruptCheckpoint { .. })
    ));
}

#[test]
fn resume_reproduces_uninterrupted_losses() {
    let data = synthetic_patches(4, 32, 2.0, 6);
    let cfg = quick_config(3, 4);
    // Two steps per epoch: interrupt after phase-1 epoch 2, then compare the
    // next ten steps, which cross into the SGD phase.
    let mut a = Trainer::new(toy_model(4), cfg.clone()).unwrap();
    a.run_epoch(&data).unwrap();
    a.run_epoch(&data).unwrap();
    let ckpt = Checkpoint::from_bytes(&a.checkpoint().to_bytes()).unwrap();
    let mut b = Trainer::resume(&ckpt, cfg).unwrap();
    let (mut a_losses, mut b_losses) = (Vec::new(), Vec::new());
    while !a.finished() {
        a_losses.extend(a.run_epoch(&data).unwrap().step_losses);
        b_losses.extend(b.run_epoch(&data).unwrap().step_losses);
        assert_eq!(a.progress(), b.progress());
    }
    assert_eq!(a_losses.len(), 10);
    for (x, y) in a_losses.iter().zip(&b_losses) {
        assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
    }
    assert_eq!(a.model().params, b.model().params);
}

#[test]
fn fixed_seed_runs_write_identical_logs() {
    let data = synthetic_patches(2, 32, 2.0, 7);
    let val = synthetic_patches(1, 32, 2.0, 8);
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        attsf::train::train(
            toy_model(5),
            &data,
            &val,
            &quick_config(1, 1),
            Some(dir.path()),
        )
        .unwrap();
        let log = fs::read(dir.path().join(METRICS_FILE)).unwrap();
        let ckpt = fs::read(dir.path().join(checkpoint_file_name(2, 1))).unwrap();
        (log, ckpt)
    };
    assert_eq!(run(), run());
}
