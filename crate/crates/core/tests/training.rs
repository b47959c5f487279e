//! Optimizer loop, checkpoints and resumption.

use philab_core::cli::config::ExperimentConfig;
use philab_core::model::{Arch, ModelConfig, SeqModel};
use philab_core::phi::PhiMode;
use philab_core::tasks::{train_batch, DataConfig, FixedPools, Task};
use philab_core::train::{
    load_checkpoint, run_training, save_checkpoint, train_step, Checkpoint, RunOutputs, TrainConfig, TrainState,
    CHECKPOINT_FILE,
};
use philab_core::Error;

fn small_data() -> DataConfig {
    DataConfig {
        example_len: [10, 14],
        examples_per_seq: [3, 4],
        pool_size: 4,
        ..DataConfig::default()
    }
}

fn small_model(data: &DataConfig) -> ModelConfig {
    ModelConfig {
        arch: Arch::Transformer,
        num_layers: 2,
        model_dim: 16,
        num_heads: 2,
        mlp_dim: 32,
        vocab_size: data.vocab_size(),
        max_seq_len: 64,
        phi_position: 1,
        tie_embeddings: false,
        rope_base: 10000.0,
        init_std: 0.02,
        std_floor: 1e-4,
        warm_start_sep_prob: None,
    }
}

fn small_train(steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 4,
        lr: 1e-3,
        warmup_steps: 2,
        eval_every: 0,
        checkpoint_every: 0,
        free_bits: 0.01,
        ..TrainConfig::paper()
    }
}

struct Setup {
    model: SeqModel,
    data: DataConfig,
    pools: FixedPools,
}

fn setup() -> Setup {
    let data = small_data();
    Setup {
        model: SeqModel::new(small_model(&data)).unwrap(),
        pools: FixedPools::new(&data).unwrap(),
        data,
    }
}

fn train(s: &Setup, cfg: &TrainConfig, state: TrainState) -> TrainState {
    run_training(&s.model, state, cfg, &s.data, &s.pools, &RunOutputs::default(), None)
        .unwrap()
        .0
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn same_seed_gives_identical_parameters() {
    let s = setup();
    let cfg = small_train(5);
    let a = train(&s, &cfg, TrainState::init(&s.model, &cfg));
    let b = train(&s, &cfg, TrainState::init(&s.model, &cfg));
    assert_eq!(bits(&a.params), bits(&b.params));
    assert_eq!(bits(&a.opt.v), bits(&b.opt.v));
    let other = TrainConfig { seed: 1, ..cfg.clone() };
    let c = train(&s, &other, TrainState::init(&s.model, &other));
    assert_ne!(bits(&a.params), bits(&c.params));
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let s = setup();
    let cfg = TrainConfig { lr: 0.0, ..small_train(3) };
    let init = TrainState::init(&s.model, &cfg);
    let after = train(&s, &cfg, init.clone());
    assert_eq!(bits(&after.params), bits(&init.params));
    assert_eq!(after.step, 3);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let s = setup();
    let cfg = small_train(3);
    let state = train(&s, &cfg, TrainState::init(&s.model, &cfg));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let ck = Checkpoint::from_state(&s.model, &state, cfg.seed, None);
    save_checkpoint(&path, &ck).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ck);
    back.check_model(&s.model).unwrap();
    let restored = back.into_state();
    assert_eq!(bits(&restored.params), bits(&state.params));
    assert_eq!(bits(&restored.opt.m), bits(&state.opt.m));
    assert_eq!(bits(&restored.opt.v), bits(&state.opt.v));
    assert_eq!(restored.step, state.step);
    assert_eq!(restored.opt.step, state.opt.step);
    assert_eq!(std::fs::read(&path).unwrap(), ck.to_bytes().unwrap());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let s = setup();
    let cfg = small_train(0);
    let ck = Checkpoint::from_state(&s.model, &TrainState::init(&s.model, &cfg), 0, None);
    let bytes = ck.to_bytes().unwrap();

    let truncated = &bytes[..bytes.len() - 100];
    assert!(matches!(Checkpoint::from_bytes(truncated), Err(Error::Checkpoint(_))));

    let mut flipped = bytes.clone();
    flipped[40] ^= 1;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Checkpoint(_))));

    // a well-formed file from a future format version
    use sha2::Digest;
    let mut future = bytes[..bytes.len() - 32].to_vec();
    future[8..12].copy_from_slice(&2u32.to_le_bytes());
    let digest = sha2::Sha256::digest(&future);
    future.extend_from_slice(&digest);
    match Checkpoint::from_bytes(&future) {
        Err(Error::Checkpoint(m)) => assert!(m.contains("version"), "{m}"),
        other => panic!("expected version error, got {other:?}"),
    }

    let dir = tempfile::tempdir().unwrap();
    match load_checkpoint(&dir.path().join("absent.bin")) {
        Err(Error::MissingInput(p)) => assert!(p.ends_with("absent.bin")),
        other => panic!("expected missing input, got {other:?}"),
    }
}

#[test]
fn checkpoint_for_a_different_model_is_rejected() {
    let s = setup();
    let cfg = small_train(0);
    let ck = Checkpoint::from_state(&s.model, &TrainState::init(&s.model, &cfg), 0, None);
    let other = SeqModel::new(ModelConfig {
        model_dim: 24,
        ..s.model.config.clone()
    })
    .unwrap();
    assert!(matches!(ck.check_model(&other), Err(Error::Checkpoint(_))));
}

#[test]
fn resume_matches_uninterrupted_training() {
    let s = setup();
    let full_cfg = TrainConfig {
        checkpoint_every: 3,
        ..small_train(7)
    };
    let straight = train(&s, &full_cfg, TrainState::init(&s.model, &full_cfg));

    let dir = tempfile::tempdir().unwrap();
    let outputs = RunOutputs {
        dir: Some(dir.path().to_path_buf()),
        config_json: None,
    };
    let first_cfg = TrainConfig {
        steps: 3,
        ..full_cfg.clone()
    };
    run_training(&s.model, TrainState::init(&s.model, &first_cfg), &first_cfg, &s.data, &s.pools, &outputs, None).unwrap();
    let resumed = load_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap().into_state();
    assert_eq!(resumed.step, 3);
    let finished = train(&s, &full_cfg, resumed);
    assert_eq!(bits(&finished.params), bits(&straight.params));
    assert_eq!(bits(&finished.opt.m), bits(&straight.opt.m));
}

#[test]
fn step_log_objective_replays_from_per_token_losses() {
    let s = setup();
    let cfg = small_train(1);
    let mut state = TrainState::init(&s.model, &cfg);
    let batch = train_batch(cfg.seed, 0, cfg.batch_size, &s.pools, &s.data, &cfg.enabled_tasks).unwrap();
    let seqs: Vec<&[u32]> = batch.iter().map(|b| b.tokens.as_slice()).collect();
    let rows: usize = seqs.iter().map(|q| q.len()).sum();
    let noise = philab_core::train::step_noise(cfg.seed, 0, rows * s.model.config.model_dim);
    let mut g = vec![0f32; state.params.len()];
    let out = s
        .model
        .loss_and_grad(&state.params, &mut g, &seqs, PhiMode::Train, Some(&noise), &cfg.loss_weights(), None)
        .unwrap();
    // recompute the objective from the logged arrays
    let nll: Vec<f64> = out.per_seq.iter().flat_map(|b| b.nll.iter().copied()).collect();
    let dim_mean: Vec<f64> = out.per_seq.iter().flat_map(|b| b.phi_dim_mean.iter().copied()).collect();
    assert_eq!(out.phi_term.len(), dim_mean.len());
    for (t, m) in out.phi_term.iter().zip(&dim_mean) {
        // a mean of per-dimension floors is at least the floored mean
        assert!(*t >= m.max(cfg.free_bits) - 1e-9);
    }
    let replay = nll.iter().sum::<f64>() / nll.len() as f64 + out.phi_term.iter().sum::<f64>() / out.phi_term.len() as f64;
    assert!((replay - out.objective).abs() < 1e-6, "{replay} vs {}", out.objective);
    let log = train_step(&s.model, &mut state, &batch, &cfg, None).unwrap();
    assert!((log.objective - out.objective).abs() < 1e-12);
    // dimension sum equals width times dimension mean
    for b in &out.per_seq {
        for (p, m) in b.phi.iter().zip(&b.phi_dim_mean) {
            assert!((p - 16.0 * m).abs() <= 1e-6 * p.abs().max(1e-12));
        }
    }
}

#[test]
fn desk_model_overfits_a_single_sequence() {
    let exp = ExperimentConfig::desk(Arch::Transformer);
    let model = SeqModel::new(exp.model.clone()).unwrap();
    let pools = FixedPools::new(&exp.data).unwrap();
    let cfg = TrainConfig {
        warmup_steps: 0,
        ..exp.train.clone()
    };
    let seq = train_batch(3, 0, 1, &pools, &exp.data, &[Task::Icll]).unwrap();
    let toks: Vec<&[u32]> = vec![seq[0].tokens.as_slice()];
    let mut state = TrainState::init(&model, &cfg);
    let eval = |p: &[f32]| {
        let b = model.evaluate_batch(p, &toks, PhiMode::EvalMean, None).unwrap();
        b[0].nll_mean + b[0].phi_dim_mean_mean
    };
    let mut losses = vec![eval(&state.params)];
    for _ in 0..50 {
        train_step(&model, &mut state, &seq, &cfg, None).unwrap();
        losses.push(eval(&state.params));
    }
    // smoothed over windows of five steps the curve falls every time
    let windows: Vec<f64> = losses[1..].chunks(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    for w in windows.windows(2) {
        assert!(w[1] < w[0], "loss went up: {losses:?}");
    }
    assert!(losses[50] < losses[0] - 0.5, "{losses:?}");
}
