use ddt_core::body::{generate_dataset, write_dataset, MotionSequence, SequenceConfig};
use ddt_core::ddt::Variant;
use ddt_core::harness::*;
use ddt_core::metrics::MetricsReport;
use ddt_core::CoreError;
use ddt_tensor::{ParamStore, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.frames = 4;
    cfg.joints = 3;
    cfg.vertices = 6;
    cfg.d_feat = 8;
    cfg.d_model = 8;
    cfg.heads = 2;
    cfg.blocks = 1;
    cfg.enc_hidden = 8;
    cfg.max_step = 4;
    cfg.batch_size = 2;
    cfg.epochs = 1;
    cfg.diffusion_steps = 10;
    cfg
}

fn tiny_data(count: usize, seed: u64) -> Vec<MotionSequence> {
    let cfg = tiny_config();
    let seq = SequenceConfig {
        frames: cfg.frames,
        joints: cfg.joints,
        vertices: cfg.vertices,
        d_feat: cfg.d_feat,
        ..SequenceConfig::default()
    };
    generate_dataset(&seq, count, seed).unwrap()
}

fn targets(tape: &mut Tape, theta: f64, beta: f64, joints: f64) -> MeshTargets {
    MeshTargets {
        theta: tape.constant(Tensor::full(&[2, 3, 6], theta)),
        beta: tape.constant(Tensor::full(&[2, 2], beta)),
        joints: tape.constant(Tensor::full(&[2, 3, 3], joints)),
    }
}

#[test]
fn unit_residuals_give_the_weight_sum() {
    let mut tape = Tape::new();
    let pred = targets(&mut tape, 1.0, 1.0, 1.0);
    let gt = targets(&mut tape, 0.0, 0.0, 0.0);
    let w = LossWeights::default();
    let l = loss_tcmr(&mut tape, &pred, &gt, &w, LossNorm::Rms).unwrap();
    assert!((tape.value(l).item().unwrap() - 360.06).abs() < 1e-9);
    let same = loss_tcmr(&mut tape, &gt, &gt, &w, LossNorm::Rms).unwrap();
    assert_eq!(tape.value(same).item().unwrap(), 0.0);

    // sum norm: sqrt(count) per term
    let l = loss_tcmr(&mut tape, &pred, &gt, &w, LossNorm::Sum).unwrap();
    let expect = 0.06 * 4f64.sqrt() + 60.0 * 36f64.sqrt() + 300.0 * 18f64.sqrt();
    assert!((tape.value(l).item().unwrap() - expect).abs() < 1e-9);

    let bad = MeshTargets { joints: tape.constant(Tensor::zeros(&[2, 4, 3])), ..gt };
    assert!(matches!(loss_tcmr(&mut tape, &pred, &bad, &w, LossNorm::Rms), Err(CoreError::Contract(_))));
}

#[test]
fn consistency_and_overall_losses() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::full(&[2, 4, 8], 1.0));
    let b = tape.constant(Tensor::zeros(&[2, 4, 8]));
    let aug = loss_aug(&mut tape, a, b, 100.0).unwrap();
    assert!((tape.value(aug).item().unwrap() - 100.0).abs() < 1e-12);
    let swapped = loss_aug(&mut tape, b, a, 100.0).unwrap();
    assert_eq!(tape.value(aug), tape.value(swapped));

    let tcmr = tape.constant(Tensor::scalar(2.5));
    let total = loss_overall(&mut tape, tcmr, Some(aug)).unwrap();
    assert_eq!(tape.value(total).item().unwrap(), 102.5);
    let alone = loss_overall(&mut tape, tcmr, None).unwrap();
    assert_eq!(tape.value(alone).item().unwrap(), 2.5);

    // the gradient pulls both directions together symmetrically
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let f = store.add("f", Tensor::uniform(&[3, 4], 1.0, &mut rng));
    let g = store.add("g", Tensor::uniform(&[3, 4], 1.0, &mut rng));
    let (fv, gv) = (tape.param(&store, f), tape.param(&store, g));
    let l = loss_aug(&mut tape, fv, gv, 7.0).unwrap();
    tape.backward(l).unwrap();
    let (df, dg) = (tape.param_grad(f).unwrap(), tape.param_grad(g).unwrap());
    for (x, y) in df.data().iter().zip(dg.data()) {
        assert!((x + y).abs() < 1e-15);
    }
}

#[test]
fn reprojection_loss_examples() {
    let k = 4;
    let mut pts = Tensor::zeros(&[1, k, 3]);
    pts.data_mut()[0] = 1.0;
    let gt2d = Tensor::zeros(&[1, k, 2]);
    let cam = Tensor::new(&[1, 3], vec![1.0, 0.0, 0.0]).unwrap();
    let run = |pts: &Tensor| {
        let mut tape = Tape::new();
        let (p, c, g) = (tape.constant(pts.clone()), tape.constant(cam.clone()), tape.constant(gt2d.clone()));
        let l = reprojection_loss(&mut tape, p, c, g).unwrap();
        tape.value(l).item().unwrap()
    };
    assert!((run(&pts) - 1.0 / k as f64).abs() < 1e-15);
    let mut deeper = pts.clone();
    for j in 0..k {
        deeper.data_mut()[j * 3 + 2] = 5.0 + j as f64;
    }
    assert_eq!(run(&deeper), run(&pts));
}

#[test]
fn adam_ignores_zero_gradients_and_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    store.add("w", Tensor::uniform(&[5], 1.0, &mut rng));
    let before = store.clone();
    let zero = Tensor::zeros(&[5]);
    let mut adam = Adam::new(1e-2);
    for _ in 0..3 {
        adam.step_with(&mut store, &[Some(&zero)]);
    }
    assert_eq!(adam.steps_taken(), 3);
    let id = store.id("w").unwrap();
    assert_eq!(store.get(id), before.get(id));

    let g = Tensor::uniform(&[5], 1.0, &mut rng);
    let run = || {
        let mut s = before.clone();
        let mut adam = Adam::new(1e-2);
        for _ in 0..4 {
            adam.step_with(&mut s, &[Some(&g)]);
        }
        s.get(id).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn validation_split() {
    let data = tiny_data(10, 3);
    let (train_set, val) = split_validation(&data, 0.1);
    assert_eq!((train_set.len(), val.len()), (9, 1));
    let (train_set, val) = split_validation(&data, 0.25);
    assert_eq!((train_set.len(), val.len()), (7, 3));
    let (train_set, val) = split_validation(&data[..1], 0.5);
    assert_eq!((train_set.len(), val.len()), (1, 0));
}

#[test]
fn one_epoch_smoke_run_yields_a_loadable_checkpoint() {
    let data = tiny_data(4, 4);
    let out = train(&tiny_config(), &data).unwrap();
    assert_eq!(out.log.len(), 1);
    assert!(out.log[0].train_loss.is_finite() && out.log[0].val_loss.is_finite());

    let path = std::env::temp_dir().join(format!("ddt_smoke_{}.ckpt", std::process::id()));
    out.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    std::fs::remove_file(&path).ok();
    assert_eq!(back.config, out.checkpoint.config);
    let model = back.to_model().unwrap();
    let a = evaluate(&model, &data, 25.0).unwrap();
    let b = evaluate(&out.model, &data, 25.0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn identical_runs_give_identical_logs() {
    let data = tiny_data(6, 5);
    for model in [ModelKind::Ddt, ModelKind::Baseline] {
        let mut cfg = tiny_config();
        cfg.model = model;
        cfg.epochs = 2;
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert_eq!(a.log_text(), b.log_text());
        assert_eq!(a.checkpoint.params, b.checkpoint.params);
    }
}

#[test]
fn oracle_scores_zero_and_untrained_scores_are_positive() {
    let data = tiny_data(3, 6);
    let r = score(&oracle_predictions(&data), &data, Some(25.0)).unwrap();
    assert!(r.values().iter().all(|v| v.abs() < 1e-9), "{r:?}");
    assert_eq!((r.mpjpe, r.mpvpe, r.acc_err), (0.0, 0.0, 0.0));
    assert_eq!(r.frames_evaluated, 12);

    let model = Model::new(&tiny_config()).unwrap();
    let r = evaluate(&model, &data, 25.0).unwrap();
    assert!(r.values().iter().all(|v| v.is_finite() && *v > 0.0), "{r:?}");
    assert!(score(&oracle_predictions(&data[..2]), &data, None).is_err());
}

#[test]
fn dataset_compat_errors_name_every_field() {
    let data = tiny_data(2, 7);
    let mut buf = Vec::new();
    let header = write_dataset(&mut buf, &data, 25.0).unwrap();
    let mut cfg = tiny_config();
    assert!(check_compat(&cfg, &header).is_ok());
    cfg.joints = 5;
    cfg.d_feat = 16;
    let err = check_compat(&cfg, &header).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, CoreError::Compat(_)));
    assert!(msg.contains("joints") && msg.contains("d_feat") && !msg.contains("frames"), "{msg}");
}

#[test]
fn checkpoint_integrity() {
    let model = Model::new(&tiny_config()).unwrap();
    let ckpt = Checkpoint::from_model(&model, 3, RngState::capture(&ChaCha8Rng::seed_from_u64(9)));
    let mut bytes = Vec::new();
    ckpt.write(&mut bytes).unwrap();
    assert_eq!(bytes.len(), ckpt.byte_size());
    assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
    assert_eq!(ckpt.scalar_count(), model.store.scalar_count());
    let back = Checkpoint::read(&mut bytes.as_slice()).unwrap();
    assert_eq!(back.params, ckpt.params);
    assert_eq!(back.epoch, 3);
    assert_eq!(back.rng.restore(), ChaCha8Rng::seed_from_u64(9));

    for cut in [bytes.len() - 1, bytes.len() / 2, 10] {
        assert!(matches!(Checkpoint::read(&mut &bytes[..cut]), Err(CoreError::Corrupt { .. })), "cut {cut}");
    }
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(matches!(Checkpoint::read(&mut longer.as_slice()), Err(CoreError::Corrupt { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::read(&mut bad.as_slice()), Err(CoreError::Format(_))));

    let mut missing = ckpt.clone();
    let (gone, _) = missing.params.pop().unwrap();
    let msg = missing.to_model().unwrap_err().to_string();
    assert!(msg.contains(&gone), "{msg}");
    let mut extra = ckpt.clone();
    extra.params.push(("stray".into(), Tensor::zeros(&[1])));
    let msg = extra.to_model().unwrap_err().to_string();
    assert!(msg.contains("stray"), "{msg}");
}

#[test]
fn sliding_windows_pad_at_the_edges() {
    let f = Tensor::new(&[4, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let w = sliding_windows(&f, 3).unwrap();
    let rows: Vec<Vec<f64>> = w.iter().map(|t| t.data().to_vec()).collect();
    assert_eq!(rows, vec![vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 3.0]]);
}

#[test]
fn benchmark_counts() {
    let model = Model::new(&tiny_config()).unwrap();
    let data = tiny_data(1, 8);
    let m2m = benchmark(&model, &data[0].features, BenchMode::ManyToMany, 3, 1).unwrap();
    assert_eq!((m2m.passes, m2m.decoder_invocations, m2m.repeats), (1, 10, 3));
    let m2o = benchmark(&model, &data[0].features, BenchMode::ManyToOne, 2, 0).unwrap();
    assert_eq!((m2o.passes, m2o.decoder_invocations), (4, 40));
    assert!(m2m.min_ms_per_frame <= m2m.median_ms_per_frame && m2m.median_ms_per_frame <= m2m.max_ms_per_frame);
    assert_eq!("m2o".parse::<BenchMode>().unwrap(), BenchMode::ManyToOne);
    assert!("o2o".parse::<BenchMode>().is_err());
}

fn row(variant: Variant, mpjpe: &[f64]) -> AblationRow {
    let reports = mpjpe
        .iter()
        .map(|&m| MetricsReport { mpjpe: m, pa_mpjpe: m, mpvpe: m, acc_err: m, frames_evaluated: 1 })
        .collect();
    AblationRow { variant, seeds: (0..mpjpe.len() as u64).collect(), reports }
}

#[test]
fn ablation_ordering() {
    let good = row(Variant::TwoModes, &[10.0, 11.0, 12.0]);
    let bad = row(Variant::OneMode, &[20.0, 21.0, 22.0]);
    let close = row(Variant::OnePhase, &[10.5, 11.5, 12.5]);
    assert_eq!(good.mean()[0], 11.0);
    assert!((good.std_err()[0] - 1.0 / 3f64.sqrt()).abs() < 1e-12);
    assert_eq!(check_order(&good, &bad, 0).ordering, Ordering::Holds);
    assert_eq!(check_order(&bad, &good, 0).ordering, Ordering::Violated);
    let c = check_order(&close, &good, 0);
    assert_eq!(c.ordering, Ordering::WithinNoise);
    assert!((c.difference - 0.5).abs() < 1e-12);

    let table = ablation_table(&[good, bad]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("variant,seeds,mpjpe,mpjpe_se"));
    assert!(lines[1].starts_with("two_modes,3,11,"));
}

#[test]
fn disabling_augmentation_leaves_one_decoder() {
    let data = tiny_data(1, 10);
    let mut cfg = tiny_config();
    cfg.augmentation = false;
    let model = Model::new(&cfg).unwrap();
    let Network::Ddt { net, .. } = &model.network else { panic!("expected a DDT") };
    assert!(net.decoder_f.is_some() && net.decoder_b.is_none());
    let r = benchmark(&model, &data[0].features, BenchMode::ManyToMany, 1, 0).unwrap();
    assert_eq!(r.decoder_invocations, cfg.frames + 1);
    assert!(Model::new(&tiny_config()).unwrap().store.scalar_count() > model.store.scalar_count());
}

/// Mean `(y_F − y_B)²` on held-out sequences.
fn direction_gap(model: &Model, seqs: &[MotionSequence]) -> f64 {
    let mut tape = Tape::new();
    let feats: Vec<&Tensor> = seqs.iter().map(|s| &s.features).collect();
    let f = tape.constant(stack(&feats).unwrap());
    let noise = start_noise(&(0..seqs.len() as u64).collect::<Vec<_>>(), model.config.d_model).unwrap();
    let (out, _) = model.ddt_forward(&mut tape, f, &noise).unwrap();
    let l = loss_aug(&mut tape, out.y_f.unwrap(), out.y_b.unwrap(), 1.0).unwrap();
    tape.value(l).item().unwrap()
}

#[test]
fn heavy_consistency_weight_closes_the_direction_gap() {
    let data = tiny_data(24, 11);
    let (train_set, test_set) = data.split_at(16);
    let (mut loose, mut tight) = (0.0, 0.0);
    for seed in 0..3 {
        let mut cfg = tiny_config();
        cfg.seed = seed;
        cfg.epochs = 4;
        cfg.batch_size = 4;
        cfg.w4 = 0.0;
        loose += direction_gap(&train(&cfg, train_set).unwrap().model, test_set);
        cfg.w4 = 1e4;
        tight += direction_gap(&train(&cfg, train_set).unwrap().model, test_set);
    }
    assert!(tight < loose, "gap with heavy weight {tight} vs none {loose}");
}
