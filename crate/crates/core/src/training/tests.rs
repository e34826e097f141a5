use super::*;
use crate::generators::{darcy, GridPack, Lineage, PackMeta, PackParams};
use crate::model::{init_params, FnoSpec};
use crate::rng::substream;
use rand::Rng;
use std::f64::consts::TAU;

fn const_field(dims: usize, res: usize, v: f64) -> GridField {
    GridField::new(dims, res, vec![v; res.pow(dims as u32)]).unwrap()
}

#[test]
fn data_loss_examples() {
    let a = vec![const_field(1, 8, 0.5), const_field(1, 8, -1.0)];
    assert_eq!(data_loss(&a, &a).unwrap(), 0.0);
    let shifted: Vec<GridField> = a
        .iter()
        .map(|f| GridField::new(1, 8, f.values.iter().map(|v| v + 1.0).collect()).unwrap())
        .collect();
    assert!((data_loss(&shifted, &a).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn data_loss_matches_elementwise_oracle() {
    let mut rng = substream(3, "train/test/mse");
    let b = 3;
    let n = 16;
    let preds: Vec<GridField> = (0..b)
        .map(|_| GridField::new(2, n, (0..n * n).map(|_| rng.random::<f64>()).collect()).unwrap())
        .collect();
    let labels: Vec<GridField> = (0..b)
        .map(|_| GridField::new(2, n, (0..n * n).map(|_| rng.random::<f64>()).collect()).unwrap())
        .collect();
    let mut oracle = 0.0;
    for (p, l) in preds.iter().zip(&labels) {
        for (x, y) in p.values.iter().zip(&l.values) {
            oracle += (x - y) * (x - y);
        }
    }
    oracle /= (b * n * n) as f64;
    let got = data_loss(&preds, &labels).unwrap();
    assert!((got - oracle).abs() < 1e-14, "{got} vs {oracle}");
}

#[test]
fn dual_loss_with_zero_weight_is_data_loss_bitwise() {
    let preds = vec![const_field(2, 16, 0.3)];
    let labels = vec![const_field(2, 16, 0.1)];
    let inputs = vec![const_field(2, 16, 1.0)];
    let ctx = PhysicsContext {
        pde: PdeKind::Darcy,
        nu: 1e-3,
        t_final: 1.0,
    };
    let d = data_loss(&preds, &labels).unwrap();
    let dual = dual_loss(&preds, &labels, &inputs, &ctx, 0.0).unwrap();
    assert_eq!(d.to_bits(), dual.to_bits());
    assert!(dual_loss(&preds, &labels, &inputs, &ctx, 1.0).is_err());
    assert!(dual_loss(&preds, &labels, &inputs, &ctx, -0.1).is_err());
}

#[test]
fn darcy_physics_loss_vanishes_on_solver_output() {
    let n = 32;
    let samples = darcy::gen_darcy(1, n, 21).unwrap();
    let ctx = PhysicsContext {
        pde: PdeKind::Darcy,
        nu: 0.0,
        t_final: 1.0,
    };
    let loss = physics_loss(
        &[samples[0].u.clone()],
        &[samples[0].a.clone()],
        &ctx,
    )
    .unwrap();
    assert!(loss < 1e-10, "solver residual loss {loss}");
}

#[test]
fn darcy_physics_loss_scales_quadratically() {
    let n = 32;
    let samples = darcy::gen_darcy(1, n, 22).unwrap();
    let ctx = PhysicsContext {
        pde: PdeKind::Darcy,
        nu: 0.0,
        t_final: 1.0,
    };
    let perturbed = |eps: f64| -> f64 {
        let values: Vec<f64> = samples[0]
            .u
            .values
            .iter()
            .enumerate()
            .map(|(idx, v)| {
                let (i, j) = (idx / n, idx % n);
                v + eps
                    * (TAU * 3.0 * i as f64 / n as f64).sin()
                    * (TAU * 2.0 * j as f64 / n as f64).sin()
            })
            .collect();
        let pred = GridField::new(2, n, values).unwrap();
        physics_loss(&[pred], &[samples[0].a.clone()], &ctx).unwrap()
    };
    let base = physics_loss(&[samples[0].u.clone()], &[samples[0].a.clone()], &ctx).unwrap();
    let l1 = perturbed(1e-3) - base;
    let l2 = perturbed(2e-3) - base;
    let ratio = l2 / l1;
    assert!((3.5..4.5).contains(&ratio), "quadratic scaling ratio {ratio}");
}

#[test]
fn burgers_physics_loss_zero_on_zero_states() {
    let ctx = PhysicsContext {
        pde: PdeKind::Burgers,
        nu: 1e-3,
        t_final: 1.0,
    };
    let zero = const_field(1, 64, 0.0);
    let loss = physics_loss(&[zero.clone()], &[zero], &ctx).unwrap();
    assert_eq!(loss, 0.0);
}

#[test]
fn unknown_pde_is_an_error() {
    let meta = PackMeta {
        pde: "navier-stokes".into(),
        params: PackParams::default(),
        lowpass_limit: None,
        seed: 0,
        lineage: Lineage::default(),
        created_at: String::new(),
    };
    assert!(PhysicsContext::from_pack(&meta).is_err());
}

fn darcy_pack(count: usize, res: usize, seed: u64) -> GridPack {
    let samples = darcy::gen_darcy(count, res, seed).unwrap();
    let inputs: Vec<GridField> = samples.iter().map(|s| s.a.clone()).collect();
    let labels: Vec<GridField> = samples.iter().map(|s| s.u.clone()).collect();
    GridPack::from_fields(
        &inputs,
        &labels,
        PackMeta {
            pde: "darcy".into(),
            params: PackParams {
                a_levels: Some([3.0, 12.0]),
                f: Some(1.0),
                ..Default::default()
            },
            lowpass_limit: None,
            seed,
            lineage: Lineage::default(),
            created_at: "1970-01-01T00:00:00Z".into(),
        },
    )
    .unwrap()
}

fn tiny_spec() -> FnoSpec {
    FnoSpec {
        dims: 2,
        width: 12,
        layers: 2,
        max_modes: 4,
        lift_dim: 24,
        proj_dim: 24,
        coord_channels: true,
    }
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let pack = darcy_pack(4, 16, 31);
    let mut packs = BTreeMap::new();
    packs.insert(16, pack);
    let set = TrainSet {
        items: (0..4).map(|i| (16, i)).collect(),
        counts: vec![(16, 4)],
    };
    let params = init_params(&tiny_spec(), 1).unwrap();
    let before = params.store.tensors[0].data.clone();
    let config = TrainConfig {
        lr: 0.0,
        weight_decay: 0.0,
        batch_size: 2,
        epochs: 2,
        loss: LossKind::Data,
        w: 0.0,
        seed: 5,
    };
    let out = train(params, &packs, &set, &BTreeMap::new(), &config).unwrap();
    assert_eq!(out.params.store.tensors[0].data, before);
    let losses: Vec<f64> = out.log.iter().map(|l| l.train_loss).collect();
    assert!((losses[0] - losses[1]).abs() < 1e-15, "loss flat: {losses:?}");
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let pack = darcy_pack(16, 16, 33);
    let mut packs = BTreeMap::new();
    packs.insert(16, pack);
    let set = TrainSet {
        items: (0..16).map(|i| (16, i)).collect(),
        counts: vec![(16, 16)],
    };
    let config = TrainConfig {
        lr: 1e-3,
        weight_decay: 1e-5,
        batch_size: 8,
        epochs: 10,
        loss: LossKind::Data,
        w: 0.0,
        seed: 7,
    };
    let run = |(
    )| {
        let params = init_params(&tiny_spec(), 2).unwrap();
        train(params, &packs, &set, &BTreeMap::new(), &config).unwrap()
    };
    let a = run(());
    let b = run(());
    let first = a.log.first().unwrap().train_loss;
    let last = a.log.last().unwrap().train_loss;
    assert!(
        last < first / 2.0,
        "training did not reduce loss: {first} -> {last}"
    );
    for (x, y) in a.log.iter().zip(&b.log) {
        assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits(), "epoch {}", x.epoch);
    }
    for (tx, ty) in a.params.store.tensors.iter().zip(&b.params.store.tensors) {
        let same = tx
            .data
            .iter()
            .zip(ty.data.iter())
            .all(|(u, v)| u.to_bits() == v.to_bits());
        assert!(same, "parameters diverged in {}", tx.name);
    }
}

#[test]
fn nan_inputs_fail_with_location() {
    let mut pack = darcy_pack(2, 16, 35);
    pack.inputs[3] = f64::NAN;
    let mut packs = BTreeMap::new();
    packs.insert(16, pack);
    let set = TrainSet {
        items: vec![(16, 0), (16, 1)],
        counts: vec![(16, 2)],
    };
    let params = init_params(&tiny_spec(), 3).unwrap();
    let config = TrainConfig {
        lr: 1e-3,
        weight_decay: 0.0,
        batch_size: 2,
        epochs: 1,
        loss: LossKind::Data,
        w: 0.0,
        seed: 9,
    };
    let err = train(params, &packs, &set, &BTreeMap::new(), &config).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("epoch 1"), "{msg}");
}

#[test]
fn run_dir_layout_is_complete() {
    let pack = darcy_pack(4, 16, 37);
    let mut packs = BTreeMap::new();
    packs.insert(16, pack.clone());
    let mut val = BTreeMap::new();
    val.insert(16, pack);
    let set = TrainSet {
        items: (0..4).map(|i| (16, i)).collect(),
        counts: vec![(16, 4)],
    };
    let params = init_params(&tiny_spec(), 4).unwrap();
    let config = TrainConfig {
        lr: 1e-3,
        weight_decay: 0.0,
        batch_size: 4,
        epochs: 2,
        loss: LossKind::Data,
        w: 0.0,
        seed: 11,
    };
    let outcome = train(params, &packs, &set, &val, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run_dir(dir.path(), &config, None, &outcome).unwrap();
    let log = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,val_loss@16"), "{log}");
    assert_eq!(log.lines().count(), 3);
    assert!(dir.path().join("timings.csv").is_file());
    assert!(dir.path().join("config.json").is_file());
    assert!(dir.path().join("checkpoint/manifest.json").is_file());
    let reloaded = crate::model::checkpoint::load(&dir.path().join("checkpoint")).unwrap();
    assert_eq!(reloaded.spec, outcome.params.spec);
}
